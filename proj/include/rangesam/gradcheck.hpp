#pragma once
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rangesam/tensor.hpp"

// Central finite-difference verification of analytic gradients. Runs in
// double precision with h = 1e-5; an entry fails when the relative error
// |analytic - numeric| / max(|analytic|, |numeric|) exceeds the tolerance
// (absolute error is used when both magnitudes are tiny).
namespace rangesam::gradcheck {

struct CheckResult {
    std::string name;
    bool pass = true;
    double max_rel_err = 0.0;
    std::string detail;  // first offending coordinate when failing
};

struct Options {
    double h = 1e-5;
    double rel_tol = 1e-4;
    double abs_floor = 1e-7;  // below this magnitude compare absolutely
    int max_probes = 0;       // 0 = every coordinate, else strided subset
};

// fn builds a fresh graph from the inputs and returns a scalar loss.
inline CheckResult check(const std::string& name, std::vector<ad::Tensor<double>> inputs,
                         const std::function<ad::Tensor<double>(std::vector<ad::Tensor<double>>&)>& fn,
                         const Options& opt = {}) {
    CheckResult res;
    res.name = name;
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    ad::Tensor<double> out = fn(inputs);
    out.backward();

    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& in = inputs[ti];
        const std::int64_t n = in.numel();
        std::int64_t stride = 1;
        if (opt.max_probes > 0 && n > opt.max_probes) stride = (n + opt.max_probes - 1) / opt.max_probes;
        for (std::int64_t j = 0; j < n; j += stride) {
            const double saved = in.data()[j];
            double num;
            {
                ad::NoGradGuard ng;
                in.data()[j] = saved + opt.h;
                const double fp = fn(inputs).item();
                in.data()[j] = saved - opt.h;
                const double fm = fn(inputs).item();
                in.data()[j] = saved;
                num = (fp - fm) / (2.0 * opt.h);
            }
            const double ana = in.has_grad() ? in.grad()[j] : 0.0;
            const double mag = std::max(std::abs(ana), std::abs(num));
            const double err = mag < opt.abs_floor ? std::abs(ana - num) : std::abs(ana - num) / mag;
            res.max_rel_err = std::max(res.max_rel_err, err);
            if (err > opt.rel_tol && res.pass) {
                res.pass = false;
                res.detail = "input " + std::to_string(ti) + " coord " + std::to_string(j) +
                             ": analytic " + std::to_string(ana) + " numeric " + std::to_string(num);
            }
        }
    }
    return res;
}

// The named suite over every differentiable op plus a reduced end-to-end
// model; defined in gradcheck_suite.cpp so the CLI and the tests share it.
std::vector<CheckResult> run_suite(std::uint64_t seed, bool verbose);

// 32-bit mode: float analytic gradients compared against the double
// implementation on identical inputs (FD in float is too noisy to be a
// useful oracle)
std::vector<CheckResult> run_suite_f32(std::uint64_t seed, bool verbose);

} // namespace rangesam::gradcheck
