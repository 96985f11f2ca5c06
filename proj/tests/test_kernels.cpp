#include <doctest.h>

#include <cmath>
#include <vector>

#include "rangesam/kernels.hpp"
#include "rangesam/rng.hpp"

using namespace rangesam;

namespace {

struct IsaGuard {
    kernels::Isa prev;
    IsaGuard() : prev(kernels::active_isa()) {}
    ~IsaGuard() { kernels::set_isa(prev); }
};

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

} // namespace

TEST_CASE("isa selection honors the cpu and explicit requests") {
    IsaGuard guard;
    kernels::set_isa(kernels::Isa::Scalar);
    CHECK(kernels::active_isa() == kernels::Isa::Scalar);
    kernels::set_isa(kernels::Isa::Avx2);
    if (kernels::cpu_has_avx2())
        CHECK(kernels::active_isa() == kernels::Isa::Avx2);
    else
        CHECK(kernels::active_isa() == kernels::Isa::Scalar);
}

TEST_CASE("simd kernels match the scalar reference") {
    if (!kernels::cpu_has_avx2()) return;  // scalar-only host: nothing to compare
    IsaGuard guard;
    Rng rng(42);
    // sizes straddle the vector width, remainder loop included
    for (std::size_t n : {1u, 7u, 8u, 9u, 64u, 1000u, 4097u}) {
        const std::vector<float> a = random_vec(n, rng);
        const std::vector<float> b = random_vec(n, rng);
        std::vector<float> ys(n), yv(n);

        kernels::set_isa(kernels::Isa::Scalar);
        kernels::add(a.data(), b.data(), ys.data(), n);
        kernels::set_isa(kernels::Isa::Avx2);
        kernels::add(a.data(), b.data(), yv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == yv[i]);

        kernels::set_isa(kernels::Isa::Scalar);
        kernels::sub(a.data(), b.data(), ys.data(), n);
        kernels::set_isa(kernels::Isa::Avx2);
        kernels::sub(a.data(), b.data(), yv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == yv[i]);

        kernels::set_isa(kernels::Isa::Scalar);
        kernels::mul(a.data(), b.data(), ys.data(), n);
        kernels::set_isa(kernels::Isa::Avx2);
        kernels::mul(a.data(), b.data(), yv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == yv[i]);

        kernels::set_isa(kernels::Isa::Scalar);
        kernels::scale(a.data(), 1.5f, ys.data(), n);
        kernels::set_isa(kernels::Isa::Avx2);
        kernels::scale(a.data(), 1.5f, yv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == yv[i]);

        ys = b;
        yv = b;
        kernels::set_isa(kernels::Isa::Scalar);
        kernels::axpy(0.75f, a.data(), ys.data(), n);
        kernels::set_isa(kernels::Isa::Avx2);
        kernels::axpy(0.75f, a.data(), yv.data(), n);
        // FMA contracts the multiply-add, so allow one-ulp-scale slack
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::abs(ys[i] - yv[i]) <= 1e-6f * (1.f + std::abs(ys[i])));

        kernels::set_isa(kernels::Isa::Scalar);
        const float ds = kernels::dot(a.data(), b.data(), n);
        const float ss = kernels::sum(a.data(), n);
        const float ms = kernels::reduce_max(a.data(), n);
        kernels::set_isa(kernels::Isa::Avx2);
        const float dv = kernels::dot(a.data(), b.data(), n);
        const float sv = kernels::sum(a.data(), n);
        const float mv = kernels::reduce_max(a.data(), n);
        CHECK(std::abs(ds - dv) <= 1e-4f * (1.f + std::abs(ds)));
        CHECK(std::abs(ss - sv) <= 1e-4f * (1.f + std::abs(ss)));
        CHECK(ms == mv);
    }
}

TEST_CASE("double kernels agree with direct computation") {
    Rng rng(7);
    const std::size_t n = 257;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
    }
    double expect = 0;
    for (std::size_t i = 0; i < n; ++i) expect += a[i] * b[i];
    CHECK(kernels::dot(a.data(), b.data(), n) == doctest::Approx(expect).epsilon(1e-12));
}
