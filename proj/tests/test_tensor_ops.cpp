#include <doctest.h>

#include <cmath>

#include "rangesam/gradcheck.hpp"
#include "rangesam/ops.hpp"

using namespace rangesam;
using ad::Tensor;

TEST_CASE("backward seeds unit gradient and accumulates through shared nodes") {
    Tensor<double> x = Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}, true);
    Tensor<double> y = ops::sum(ops::add(x, x));  // dy/dx_i = 2
    y.backward();
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0));
}

TEST_CASE("no-grad mode records no tape") {
    ad::NoGradGuard ng;
    Tensor<double> x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
    Tensor<double> y = ops::scale(x, 3.0);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("softmax rows sum to one and are invariant to shifts") {
    Tensor<float> x = Tensor<float>::from_data({2, 3}, {1.f, 2.f, 3.f, 100.f, 101.f, 102.f});
    Tensor<float> s = ops::softmax_lastdim(x);
    for (int r = 0; r < 2; ++r) {
        float z = 0;
        for (int i = 0; i < 3; ++i) z += s.data()[r * 3 + i];
        CHECK(z == doctest::Approx(1.f));
    }
    // both rows are shifts of (1,2,3)
    for (int i = 0; i < 3; ++i)
        CHECK(s.data()[i] == doctest::Approx(s.data()[3 + i]).epsilon(1e-5));
}

TEST_CASE("gelu hand values from the tanh approximation") {
    Tensor<float> x = Tensor<float>::from_data({3}, {0.f, 1.f, -1.f});
    Tensor<float> y = ops::gelu(x);
    CHECK(y.data()[0] == doctest::Approx(0.f));
    CHECK(y.data()[1] == doctest::Approx(0.841192f).epsilon(1e-4));
    CHECK(y.data()[2] == doctest::Approx(-0.158808f).epsilon(1e-3));
}

TEST_CASE("layer_norm output is normalized along the chosen axis") {
    Rng rng(3);
    Tensor<float> x = Tensor<float>::randn({2, 5, 4}, rng);
    Tensor<float> g = Tensor<float>::filled({5}, 1.f);
    Tensor<float> b = Tensor<float>::zeros({5});
    Tensor<float> y = ops::layer_norm(x, g, b, 1);
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 4; ++i) {
            float mu = 0, var = 0;
            for (int c = 0; c < 5; ++c) mu += y.data()[(n * 5 + c) * 4 + i];
            mu /= 5;
            for (int c = 0; c < 5; ++c) {
                const float d = y.data()[(n * 5 + c) * 4 + i] - mu;
                var += d * d;
            }
            CHECK(mu == doctest::Approx(0.f).epsilon(1e-4));
            CHECK(var / 5 == doctest::Approx(1.f).epsilon(1e-2));
        }
}

TEST_CASE("window partition/unpartition is an exact round trip with padding") {
    Rng rng(11);
    Tensor<float> x = Tensor<float>::randn({2, 3, 5, 7}, rng);
    ops::PadRecord rec;
    Tensor<float> t = ops::window_partition(x, 2, 4, rec);
    CHECK(rec.padded_h == 6);
    CHECK(rec.padded_w == 8);
    CHECK(t.dim(0) == 2 * 3 * 2);
    CHECK(t.dim(1) == 8);
    CHECK(t.dim(2) == 3);
    Tensor<float> y = ops::window_unpartition(t, rec);
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d matches a naive quadruple loop") {
    Rng rng(5);
    const int bs = 2, cin = 3, h = 5, w = 6, cout = 4, kh = 3, kw = 3, pad = 1;
    Tensor<float> x = Tensor<float>::randn({bs, cin, h, w}, rng);
    Tensor<float> wt = Tensor<float>::randn({cout, cin, kh, kw}, rng);
    Tensor<float> b = Tensor<float>::randn({cout}, rng);
    Tensor<float> y = ops::conv2d(x, wt, b, 1, pad);
    for (int n = 0; n < bs; ++n)
        for (int co = 0; co < cout; ++co)
            for (int r = 0; r < h; ++r)
                for (int q = 0; q < w; ++q) {
                    float acc = b.data()[co];
                    for (int ci = 0; ci < cin; ++ci)
                        for (int fr = 0; fr < kh; ++fr)
                            for (int fc = 0; fc < kw; ++fc) {
                                const int ir = r + fr - pad, ic = q + fc - pad;
                                if (ir < 0 || ir >= h || ic < 0 || ic >= w) continue;
                                acc += wt.data()[((co * cin + ci) * kh + fr) * kw + fc] *
                                       x.data()[((n * cin + ci) * h + ir) * w + ic];
                            }
                    CHECK(y.data()[((n * cout + co) * h + r) * w + q] ==
                          doctest::Approx(acc).epsilon(1e-4));
                }
}

TEST_CASE("dilated conv2d matches a naive loop") {
    Rng rng(6);
    const int h = 9, w = 10, kh = 3, kw = 3, d = 3, pad = 3;
    Tensor<float> x = Tensor<float>::randn({1, 2, h, w}, rng);
    Tensor<float> wt = Tensor<float>::randn({2, 2, kh, kw}, rng);
    Tensor<float> b = Tensor<float>::zeros({2});
    Tensor<float> y = ops::conv2d(x, wt, b, 1, pad, 1, d);
    REQUIRE(y.dim(2) == h);
    REQUIRE(y.dim(3) == w);
    for (int co = 0; co < 2; ++co)
        for (int r = 0; r < h; ++r)
            for (int q = 0; q < w; ++q) {
                float acc = 0;
                for (int ci = 0; ci < 2; ++ci)
                    for (int fr = 0; fr < kh; ++fr)
                        for (int fc = 0; fc < kw; ++fc) {
                            const int ir = r + fr * d - pad, ic = q + fc * d - pad;
                            if (ir < 0 || ir >= h || ic < 0 || ic >= w) continue;
                            acc += wt.data()[((co * 2 + ci) * kh + fr) * kw + fc] *
                                   x.data()[((ci)*h + ir) * w + ic];
                        }
                CHECK(y.data()[((co)*h + r) * w + q] == doctest::Approx(acc).epsilon(1e-4));
            }
}

TEST_CASE("drop_path at eval is the exact identity") {
    Rng rng(9);
    Tensor<float> x = Tensor<float>::randn({4, 3}, rng);
    Rng unused(1);
    Tensor<float> y = ops::drop_path(x, 0.9, false, unused);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("drop_path training scales kept samples by 1/(1-rate)") {
    Tensor<float> x = Tensor<float>::filled({64, 2}, 1.f);
    Rng rng(123);
    Tensor<float> y = ops::drop_path(x, 0.5, true, rng);
    int kept = 0, dropped = 0;
    for (int i = 0; i < 64; ++i) {
        const float v = y.data()[i * 2];
        CHECK(y.data()[i * 2 + 1] == v);
        if (v == 0.f)
            ++dropped;
        else {
            CHECK(v == doctest::Approx(2.f));
            ++kept;
        }
    }
    CHECK(kept > 0);
    CHECK(dropped > 0);
}

TEST_CASE("finite differences catch a corrupted derivative (negative control)") {
    ops::corrupt_gelu_backward() = true;
    Rng rng(17);
    auto res = gradcheck::check(
        "corrupted_gelu", {ad::Tensor<double>::randn({8}, rng)},
        [](std::vector<ad::Tensor<double>>& in) {
            auto y = ops::gelu(in[0]);
            return ops::sum(ops::mul(y, y));
        });
    ops::corrupt_gelu_backward() = false;
    CHECK_FALSE(res.pass);
}

TEST_CASE("float-mode gradient comparison suite passes") {
    for (const auto& r : gradcheck::run_suite_f32(99, false)) {
        INFO(r.name, " max rel err ", r.max_rel_err, " ", r.detail);
        CHECK(r.pass);
    }
}
