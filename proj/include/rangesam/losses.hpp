#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rangesam/kitti.hpp"
#include "rangesam/ops.hpp"
#include "rangesam/tensor.hpp"

// Composite segmentation loss (weighted CE + Dice + Boundary + IoU),
// auxiliary-head supervision and confusion-matrix / mIoU evaluation.
// Every loss is a fused autodiff op over logits; pixels labeled
// kitti::kIgnore contribute neither value nor gradient.
namespace rangesam::losses {

using ad::Tensor;

struct ClassWeights {
    std::vector<double> w;  // length num_classes, positive
};

// w_c = 1/sqrt(f_c + 1e-4), normalized to mean 1
ClassWeights class_weights_from_freq(const std::vector<double>& freq);

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes = kitti::kNumClasses)
        : c_(num_classes), m_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

    void add(std::uint8_t truth, std::uint8_t pred) {
        if (truth == kitti::kIgnore || pred == kitti::kIgnore) return;
        ++m_[static_cast<std::size_t>(truth) * c_ + pred];
    }
    void add_batch(const std::vector<std::uint8_t>& truth, const std::vector<std::uint8_t>& pred);

    // commutative merge for per-worker accumulation
    void merge(const ConfusionMatrix& other);

    std::int64_t at(int truth, int pred) const {
        return m_[static_cast<std::size_t>(truth) * c_ + pred];
    }
    int num_classes() const { return c_; }
    std::int64_t total() const;

private:
    int c_;
    std::vector<std::int64_t> m_;
};

struct MiouResult {
    std::vector<double> per_class;   // IoU per class, NaN when the class is absent
    std::vector<bool> present;       // denominator > 0
    double mean = 0.0;
    bool empty = false;              // no counted pixels at all
};

MiouResult miou(const ConfusionMatrix& cm);

// benchmark-style report row: 19 named class columns + mIoU
std::string format_miou_table(const MiouResult& r);
// machine-readable counterpart (JSON)
std::string format_miou_json(const MiouResult& r);

namespace detail {

// softmax over the channel axis of [B,C,H,W] logits, written per pixel
template <typename T>
void pixel_softmax(const T* logits, int c, std::int64_t plane, std::int64_t pix, T* out) {
    T m = logits[pix];
    for (int k = 1; k < c; ++k) m = std::max(m, logits[k * plane + pix]);
    T z = 0;
    for (int k = 0; k < c; ++k) {
        out[k] = std::exp(logits[k * plane + pix] - m);
        z += out[k];
    }
    const T inv = T(1) / z;
    for (int k = 0; k < c; ++k) out[k] *= inv;
}

} // namespace detail

// mean over non-ignore pixels of w[t] * (-log softmax(logits)[t])
template <typename T>
Tensor<T> wce_loss(const Tensor<T>& logits, const std::vector<std::uint8_t>& target,
                   const ClassWeights& weights) {
    const int b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    if (target.size() != static_cast<std::size_t>(b) * h * w)
        throw std::invalid_argument("wce_loss: target size mismatch");
    if (static_cast<int>(weights.w.size()) != c)
        throw std::invalid_argument("wce_loss: weight vector length mismatch");
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const T* xd = logits.data();

    double acc = 0.0;
    std::int64_t n_valid = 0;
    std::vector<T> p(static_cast<std::size_t>(c));
    for (int n = 0; n < b; ++n) {
        const T* base = xd + static_cast<std::int64_t>(n) * c * plane;
        for (std::int64_t pix = 0; pix < plane; ++pix) {
            const std::uint8_t t = target[static_cast<std::size_t>(n) * plane + pix];
            if (t == kitti::kIgnore) continue;
            detail::pixel_softmax(base, c, plane, pix, p.data());
            acc += weights.w[t] * -std::log(std::max(double(p[t]), 1e-30));
            ++n_valid;
        }
    }
    Tensor<T> y = Tensor<T>::scalar(n_valid ? static_cast<T>(acc / n_valid) : T(0));
    auto xn = logits.node();
    auto tgt = std::make_shared<std::vector<std::uint8_t>>(target);
    auto ws = std::make_shared<std::vector<double>>(weights.w);
    ad::attach<T>(y, {logits}, [xn, tgt, ws, b, c, plane, n_valid](ad::Node<T>& yn) {
        if (!n_valid) return;
        const T go = yn.grad[0];
        T* gx = xn->grad_ptr();
        std::vector<T> p(static_cast<std::size_t>(c));
        for (int n = 0; n < b; ++n) {
            const T* base = xn->data.data() + static_cast<std::int64_t>(n) * c * plane;
            T* gbase = gx + static_cast<std::int64_t>(n) * c * plane;
            for (std::int64_t pix = 0; pix < plane; ++pix) {
                const std::uint8_t t = (*tgt)[static_cast<std::size_t>(n) * plane + pix];
                if (t == kitti::kIgnore) continue;
                detail::pixel_softmax(base, c, plane, pix, p.data());
                const T s = go * static_cast<T>((*ws)[t] / static_cast<double>(n_valid));
                for (int k = 0; k < c; ++k)
                    gbase[k * plane + pix] += s * (p[k] - (k == t ? T(1) : T(0)));
            }
        }
    });
    return y;
}

enum class RegionLoss { Dice, Iou };

// soft one-vs-all Dice / Jaccard over softmax probabilities; only classes
// present in the target contribute to the mean
template <typename T>
Tensor<T> region_loss(const Tensor<T>& logits, const std::vector<std::uint8_t>& target,
                      RegionLoss kind, double eps = 1e-6) {
    const int b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    if (target.size() != static_cast<std::size_t>(b) * h * w)
        throw std::invalid_argument("region_loss: target size mismatch");
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const T* xd = logits.data();

    std::vector<double> inter(static_cast<std::size_t>(c), 0.0);  // sum p_c y_c
    std::vector<double> psum(static_cast<std::size_t>(c), 0.0);   // sum p_c
    std::vector<double> ysum(static_cast<std::size_t>(c), 0.0);   // sum y_c
    std::vector<T> p(static_cast<std::size_t>(c));
    bool any_valid = false;
    for (int n = 0; n < b; ++n) {
        const T* base = xd + static_cast<std::int64_t>(n) * c * plane;
        for (std::int64_t pix = 0; pix < plane; ++pix) {
            const std::uint8_t t = target[static_cast<std::size_t>(n) * plane + pix];
            if (t == kitti::kIgnore) continue;
            any_valid = true;
            detail::pixel_softmax(base, c, plane, pix, p.data());
            for (int k = 0; k < c; ++k) psum[static_cast<std::size_t>(k)] += double(p[k]);
            inter[t] += double(p[t]);
            ysum[t] += 1.0;
        }
    }

    int n_present = 0;
    double score = 0.0;
    for (int k = 0; k < c; ++k) {
        if (ysum[static_cast<std::size_t>(k)] <= 0.0) continue;
        ++n_present;
        const double s = inter[static_cast<std::size_t>(k)];
        const double a = psum[static_cast<std::size_t>(k)], yb = ysum[static_cast<std::size_t>(k)];
        score += kind == RegionLoss::Dice ? 2.0 * s / (a + yb + eps) : s / (a + yb - s + eps);
    }
    const double loss = (!any_valid || n_present == 0) ? 0.0 : 1.0 - score / n_present;
    Tensor<T> y = Tensor<T>::scalar(static_cast<T>(loss));

    auto xn = logits.node();
    auto tgt = std::make_shared<std::vector<std::uint8_t>>(target);
    auto inter_s = std::make_shared<std::vector<double>>(inter);
    auto psum_s = std::make_shared<std::vector<double>>(psum);
    auto ysum_s = std::make_shared<std::vector<double>>(ysum);
    ad::attach<T>(y, {logits},
                  [xn, tgt, inter_s, psum_s, ysum_s, kind, eps, b, c, plane, n_present](ad::Node<T>& yn) {
        if (n_present == 0) return;
        const double go = double(yn.grad[0]);
        // d(loss)/d(S_c) and d(loss)/d(A_c) for present classes
        std::vector<double> dS(static_cast<std::size_t>(c), 0.0);
        std::vector<double> dA(static_cast<std::size_t>(c), 0.0);
        for (int k = 0; k < c; ++k) {
            const double yb = (*ysum_s)[static_cast<std::size_t>(k)];
            if (yb <= 0.0) continue;
            const double s = (*inter_s)[static_cast<std::size_t>(k)];
            const double a = (*psum_s)[static_cast<std::size_t>(k)];
            const double inv_np = 1.0 / n_present;
            if (kind == RegionLoss::Dice) {
                const double den = a + yb + eps;
                // D = 2S/den, dD/dS = 2/den, dD/dA = -2S/den^2
                dS[static_cast<std::size_t>(k)] = -inv_np * (2.0 / den);
                dA[static_cast<std::size_t>(k)] = -inv_np * (-2.0 * s / (den * den));
            } else {
                const double den = a + yb - s + eps;
                // J = S/den, dJ/dS = (den + S)/den^2, dJ/dA = -S/den^2
                dS[static_cast<std::size_t>(k)] = -inv_np * ((den + s) / (den * den));
                dA[static_cast<std::size_t>(k)] = -inv_np * (-s / (den * den));
            }
        }
        T* gx = xn->grad_ptr();
        std::vector<T> p(static_cast<std::size_t>(c));
        for (int n = 0; n < b; ++n) {
            const T* base = xn->data.data() + static_cast<std::int64_t>(n) * c * plane;
            T* gbase = gx + static_cast<std::int64_t>(n) * c * plane;
            for (std::int64_t pix = 0; pix < plane; ++pix) {
                const std::uint8_t t = (*tgt)[static_cast<std::size_t>(n) * plane + pix];
                if (t == kitti::kIgnore) continue;
                detail::pixel_softmax(base, c, plane, pix, p.data());
                // g_k = dloss/dp_k at this pixel, then softmax jacobian
                double dot = 0.0;
                for (int k = 0; k < c; ++k) {
                    const double gk = dA[static_cast<std::size_t>(k)] + (k == t ? dS[static_cast<std::size_t>(k)] : 0.0);
                    dot += gk * double(p[k]);
                }
                for (int k = 0; k < c; ++k) {
                    const double gk = dA[static_cast<std::size_t>(k)] + (k == t ? dS[static_cast<std::size_t>(k)] : 0.0);
                    gbase[k * plane + pix] += static_cast<T>(go * double(p[k]) * (gk - dot));
                }
            }
        }
    });
    return y;
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const std::vector<std::uint8_t>& target) {
    return region_loss(logits, target, RegionLoss::Dice);
}

template <typename T>
Tensor<T> iou_loss(const Tensor<T>& logits, const std::vector<std::uint8_t>& target) {
    return region_loss(logits, target, RegionLoss::Iou);
}

// boundary pixels: non-ignore pixels with a differently labeled non-ignore
// 4-neighbor
std::vector<std::uint8_t> boundary_mask(const std::vector<std::uint8_t>& target, int b, int h, int w);

// cross-entropy with unit weights restricted to the boundary set
template <typename T>
Tensor<T> boundary_loss(const Tensor<T>& logits, const std::vector<std::uint8_t>& target) {
    const int b = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
    if (target.size() != static_cast<std::size_t>(b) * h * w)
        throw std::invalid_argument("boundary_loss: target size mismatch");
    const std::vector<std::uint8_t> mask = boundary_mask(target, b, h, w);
    std::vector<std::uint8_t> masked(target.size(), kitti::kIgnore);
    for (std::size_t i = 0; i < target.size(); ++i)
        if (mask[i]) masked[i] = target[i];
    ClassWeights unit;
    unit.w.assign(static_cast<std::size_t>(logits.dim(1)), 1.0);
    return wce_loss(logits, masked, unit);
}

// nearest-neighbor label downsampling for auxiliary supervision
std::vector<std::uint8_t> downsample_labels(const std::vector<std::uint8_t>& target, int b, int h,
                                            int w, int out_h, int out_w);

struct LossTerms {
    double wce = 0, dice = 0, boundary = 0, iou = 0, aux = 0, total = 0;
};

// lambda-weighted sum of the four terms on the main head plus aux_weight
// times the same composite on each auxiliary head
template <typename T>
Tensor<T> total_loss(const Tensor<T>& main, const std::vector<Tensor<T>>& aux,
                     const std::vector<std::uint8_t>& target, const ClassWeights& weights,
                     const std::array<double, 4>& lambda = {1, 1, 1, 1}, double aux_weight = 0.4,
                     LossTerms* terms = nullptr) {
    using ops::add;
    using ops::scale;
    const int b = main.dim(0), h = main.dim(2), w = main.dim(3);
    auto composite = [&](const Tensor<T>& logits, const std::vector<std::uint8_t>& tg,
                         LossTerms* tt) {
        Tensor<T> l1 = wce_loss(logits, tg, weights);
        Tensor<T> l2 = dice_loss(logits, tg);
        Tensor<T> l3 = boundary_loss(logits, tg);
        Tensor<T> l4 = iou_loss(logits, tg);
        if (tt) {
            tt->wce = double(l1.item());
            tt->dice = double(l2.item());
            tt->boundary = double(l3.item());
            tt->iou = double(l4.item());
        }
        return add(add(scale(l1, T(lambda[0])), scale(l2, T(lambda[1]))),
                   add(scale(l3, T(lambda[2])), scale(l4, T(lambda[3]))));
    };
    Tensor<T> total = composite(main, target, terms);
    if (!aux.empty()) {
        Tensor<T> aux_sum;
        for (const auto& a : aux) {
            std::vector<std::uint8_t> tg = (a.dim(2) == h && a.dim(3) == w)
                                               ? target
                                               : downsample_labels(target, b, h, w, a.dim(2), a.dim(3));
            Tensor<T> la = composite(a, tg, nullptr);
            aux_sum = aux_sum.defined() ? add(aux_sum, la) : la;
        }
        if (terms) terms->aux = double(aux_sum.item());
        total = add(total, scale(aux_sum, T(aux_weight)));
    }
    if (terms) terms->total = double(total.item());
    return total;
}

} // namespace rangesam::losses
