#pragma once
#include <algorithm>
#include <cmath>
#include <vector>

#include "rangesam/kernels.hpp"
#include "rangesam/tensor.hpp"

// Operator set for the network: shaped exactly by what the encoder,
// decoder and losses need. Every op here has an analytic backward that is
// covered by the finite-difference suite.
namespace rangesam::ops {

using ad::attach;
using ad::check_same_shape;
using ad::grad_mode;
using ad::Node;
using ad::Shape;
using ad::Tensor;

// test hook: deliberately breaks the gelu derivative (negative control
// for the gradcheck harness)
inline bool& corrupt_gelu_backward() {
    static bool flag = false;
    return flag;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> y = Tensor<T>::zeros(a.shape());
    kernels::add(a.data(), b.data(), y.data(), static_cast<std::size_t>(a.numel()));
    auto an = a.node(), bn = b.node();
    attach<T>(y, {a, b}, [an, bn](Node<T>& yn) {
        std::size_t n = yn.data.size();
        if (an->requires_grad) kernels::axpy(T(1), yn.grad.data(), an->grad_ptr(), n);
        if (bn->requires_grad) kernels::axpy(T(1), yn.grad.data(), bn->grad_ptr(), n);
    });
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    Tensor<T> y = Tensor<T>::zeros(a.shape());
    kernels::mul(a.data(), b.data(), y.data(), static_cast<std::size_t>(a.numel()));
    auto an = a.node(), bn = b.node();
    attach<T>(y, {a, b}, [an, bn](Node<T>& yn) {
        std::size_t n = yn.data.size();
        if (an->requires_grad) {
            T* g = an->grad_ptr();
            for (std::size_t i = 0; i < n; ++i) g[i] += yn.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            T* g = bn->grad_ptr();
            for (std::size_t i = 0; i < n; ++i) g[i] += yn.grad[i] * an->data[i];
        }
    });
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    Tensor<T> y = Tensor<T>::zeros(x.shape());
    kernels::scale(x.data(), s, y.data(), static_cast<std::size_t>(x.numel()));
    auto xn = x.node();
    attach<T>(y, {x}, [xn, s](Node<T>& yn) {
        kernels::axpy(s, yn.grad.data(), xn->grad_ptr(), yn.data.size());
    });
    return y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (ad::shape_numel(shape) != x.numel())
        throw std::invalid_argument("reshape: numel mismatch " + ad::shape_str(x.shape()) +
                                    " -> " + ad::shape_str(shape));
    Tensor<T> y = Tensor<T>::from_data(std::move(shape), x.vec());
    auto xn = x.node();
    attach<T>(y, {x}, [xn](Node<T>& yn) {
        kernels::axpy(T(1), yn.grad.data(), xn->grad_ptr(), yn.data.size());
    });
    return y;
}

namespace detail {
inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size());
    std::int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[static_cast<std::size_t>(i)] = acc;
        acc *= s[static_cast<std::size_t>(i)];
    }
    return st;
}
} // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<int> perm) {
    const Shape& xs = x.shape();
    if (perm.size() != xs.size()) throw std::invalid_argument("permute: rank mismatch");
    Shape ys(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) ys[i] = xs[static_cast<std::size_t>(perm[i])];
    Tensor<T> y = Tensor<T>::zeros(ys);
    auto xstr = detail::row_major_strides(xs);
    const std::int64_t n = x.numel();
    const int nd = static_cast<int>(perm.size());
    {
        std::vector<int> idx(perm.size(), 0);
        const T* xd = x.data();
        T* yd = y.data();
        for (std::int64_t o = 0; o < n; ++o) {
            std::int64_t src = 0;
            for (int d = 0; d < nd; ++d)
                src += idx[static_cast<std::size_t>(d)] * xstr[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
            yd[o] = xd[src];
            for (int d = nd - 1; d >= 0; --d) {
                if (++idx[static_cast<std::size_t>(d)] < ys[static_cast<std::size_t>(d)]) break;
                idx[static_cast<std::size_t>(d)] = 0;
            }
        }
    }
    auto xn = x.node();
    attach<T>(y, {x}, [xn, perm, ys, xstr, nd](Node<T>& yn) {
        T* g = xn->grad_ptr();
        std::vector<int> idx(static_cast<std::size_t>(nd), 0);
        const std::int64_t n2 = yn.numel();
        for (std::int64_t o = 0; o < n2; ++o) {
            std::int64_t src = 0;
            for (int d = 0; d < nd; ++d)
                src += idx[static_cast<std::size_t>(d)] * xstr[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
            g[src] += yn.grad[static_cast<std::size_t>(o)];
            for (int d = nd - 1; d >= 0; --d) {
                if (++idx[static_cast<std::size_t>(d)] < ys[static_cast<std::size_t>(d)]) break;
                idx[static_cast<std::size_t>(d)] = 0;
            }
        }
    });
    return y;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    Shape ys = xs[0].shape();
    const int nd = static_cast<int>(ys.size());
    if (axis < 0 || axis >= nd) throw std::invalid_argument("concat: bad axis");
    int total = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        for (int d = 0; d < nd; ++d)
            if (d != axis && s[static_cast<std::size_t>(d)] != ys[static_cast<std::size_t>(d)])
                throw std::invalid_argument("concat: shape mismatch");
        total += s[static_cast<std::size_t>(axis)];
    }
    ys[static_cast<std::size_t>(axis)] = total;
    Tensor<T> y = Tensor<T>::zeros(ys);

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= ys[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < nd; ++d) inner *= ys[static_cast<std::size_t>(d)];

    std::vector<int> sizes;
    for (const auto& x : xs) sizes.push_back(x.shape()[static_cast<std::size_t>(axis)]);

    T* yd = y.data();
    std::int64_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const T* xd = xs[k].data();
        const std::int64_t chunk = sizes[k] * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(xd + o * chunk, xd + (o + 1) * chunk, yd + o * total * inner + off);
        off += chunk;
    }

    std::vector<std::shared_ptr<Node<T>>> pn;
    for (const auto& x : xs) pn.push_back(x.node());
    attach<T>(y, xs, [pn, sizes, outer, inner, total](Node<T>& yn) {
        std::int64_t off2 = 0;
        for (std::size_t k = 0; k < pn.size(); ++k) {
            const std::int64_t chunk = sizes[k] * inner;
            if (pn[k]->requires_grad) {
                T* g = pn[k]->grad_ptr();
                for (std::int64_t o = 0; o < outer; ++o)
                    kernels::axpy(T(1), yn.grad.data() + o * total * inner + off2,
                                  g + o * chunk, static_cast<std::size_t>(chunk));
            }
            off2 += chunk;
        }
    });
    return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> y = Tensor<T>::scalar(kernels::sum(x.data(), static_cast<std::size_t>(x.numel())));
    auto xn = x.node();
    attach<T>(y, {x}, [xn](Node<T>& yn) {
        T g = yn.grad[0];
        T* xg = xn->grad_ptr();
        for (std::size_t i = 0; i < xn->data.size(); ++i) xg[i] += g;
    });
    return y;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// y = x W + b over the last axis; x is [..., Cin], W is [Cin, Cout].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (w.ndim() != 2) throw std::invalid_argument("linear: W must be 2-d");
    const int cin = w.dim(0), cout = w.dim(1);
    if (x.dim(x.ndim() - 1) != cin)
        throw std::invalid_argument("linear: Cin mismatch, x " + ad::shape_str(x.shape()) +
                                    " vs W " + ad::shape_str(w.shape()));
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != cout))
        throw std::invalid_argument("linear: bad bias shape");
    Shape ys = x.shape();
    ys.back() = cout;
    Tensor<T> y = Tensor<T>::zeros(ys);
    const std::int64_t rows = x.numel() / cin;
    const T* xd = x.data();
    const T* wd = w.data();
    T* yd = y.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        T* yr = yd + r * cout;
        if (b.defined()) std::copy(b.data(), b.data() + cout, yr);
        const T* xr = xd + r * cin;
        for (int k = 0; k < cin; ++k)
            kernels::axpy(xr[k], wd + static_cast<std::int64_t>(k) * cout, yr,
                          static_cast<std::size_t>(cout));
    }
    auto xn = x.node(), wn = w.node();
    auto bn = b.defined() ? b.node() : nullptr;
    std::vector<Tensor<T>> parents{x, w};
    if (b.defined()) parents.push_back(b);
    attach<T>(y, parents, [xn, wn, bn, rows, cin, cout](Node<T>& yn) {
        const T* gy = yn.grad.data();
        if (xn->requires_grad) {
            T* gx = xn->grad_ptr();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gyr = gy + r * cout;
                T* gxr = gx + r * cin;
                for (int k = 0; k < cin; ++k)
                    gxr[k] += kernels::dot(gyr, wn->data.data() + static_cast<std::int64_t>(k) * cout,
                                           static_cast<std::size_t>(cout));
            }
        }
        if (wn->requires_grad) {
            T* gw = wn->grad_ptr();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* xr = xn->data.data() + r * cin;
                const T* gyr = gy + r * cout;
                for (int k = 0; k < cin; ++k)
                    kernels::axpy(xr[k], gyr, gw + static_cast<std::int64_t>(k) * cout,
                                  static_cast<std::size_t>(cout));
            }
        }
        if (bn && bn->requires_grad) {
            T* gb = bn->grad_ptr();
            for (std::int64_t r = 0; r < rows; ++r)
                kernels::axpy(T(1), gy + r * cout, gb, static_cast<std::size_t>(cout));
        }
    });
    return y;
}

// batched matmul, a [NB,M,K] x b [NB,K,N] -> [NB,M,N]
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw std::invalid_argument("bmm: shape mismatch " + ad::shape_str(a.shape()) + " x " +
                                    ad::shape_str(b.shape()));
    const int nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor<T> y = Tensor<T>::zeros({nb, m, n});
    const T* ad_ = a.data();
    const T* bd = b.data();
    T* yd = y.data();
    for (int g = 0; g < nb; ++g) {
        const T* ag = ad_ + static_cast<std::int64_t>(g) * m * k;
        const T* bg = bd + static_cast<std::int64_t>(g) * k * n;
        T* yg = yd + static_cast<std::int64_t>(g) * m * n;
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p)
                kernels::axpy(ag[i * k + p], bg + static_cast<std::int64_t>(p) * n,
                              yg + static_cast<std::int64_t>(i) * n, static_cast<std::size_t>(n));
    }
    auto an = a.node(), bn = b.node();
    attach<T>(y, {a, b}, [an, bn, nb, m, k, n](Node<T>& yn) {
        const T* gy = yn.grad.data();
        for (int g = 0; g < nb; ++g) {
            const T* ag = an->data.data() + static_cast<std::int64_t>(g) * m * k;
            const T* bg = bn->data.data() + static_cast<std::int64_t>(g) * k * n;
            const T* gyg = gy + static_cast<std::int64_t>(g) * m * n;
            if (an->requires_grad) {
                T* ga = an->grad_ptr() + static_cast<std::int64_t>(g) * m * k;
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p)
                        ga[i * k + p] += kernels::dot(gyg + static_cast<std::int64_t>(i) * n,
                                                      bg + static_cast<std::int64_t>(p) * n,
                                                      static_cast<std::size_t>(n));
            }
            if (bn->requires_grad) {
                T* gb = bn->grad_ptr() + static_cast<std::int64_t>(g) * k * n;
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p)
                        kernels::axpy(ag[i * k + p], gyg + static_cast<std::int64_t>(i) * n,
                                      gb + static_cast<std::int64_t>(p) * n,
                                      static_cast<std::size_t>(n));
            }
        }
    });
    return y;
}

// batched a [NB,M,K] x b [NB,N,K]^T -> [NB,M,N]; rows of both operands are
// contiguous so the inner product maps directly onto the dot kernel.
template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        throw std::invalid_argument("bmm_nt: shape mismatch");
    const int nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    Tensor<T> y = Tensor<T>::zeros({nb, m, n});
    const T* ad_ = a.data();
    const T* bd = b.data();
    T* yd = y.data();
    for (int g = 0; g < nb; ++g) {
        const T* ag = ad_ + static_cast<std::int64_t>(g) * m * k;
        const T* bg = bd + static_cast<std::int64_t>(g) * n * k;
        T* yg = yd + static_cast<std::int64_t>(g) * m * n;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                yg[i * n + j] = kernels::dot(ag + static_cast<std::int64_t>(i) * k,
                                             bg + static_cast<std::int64_t>(j) * k,
                                             static_cast<std::size_t>(k));
    }
    auto an = a.node(), bn = b.node();
    attach<T>(y, {a, b}, [an, bn, nb, m, k, n](Node<T>& yn) {
        const T* gy = yn.grad.data();
        for (int g = 0; g < nb; ++g) {
            const T* ag = an->data.data() + static_cast<std::int64_t>(g) * m * k;
            const T* bg = bn->data.data() + static_cast<std::int64_t>(g) * n * k;
            const T* gyg = gy + static_cast<std::int64_t>(g) * m * n;
            if (an->requires_grad) {
                T* ga = an->grad_ptr() + static_cast<std::int64_t>(g) * m * k;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        kernels::axpy(gyg[i * n + j], bg + static_cast<std::int64_t>(j) * k,
                                      ga + static_cast<std::int64_t>(i) * k,
                                      static_cast<std::size_t>(k));
            }
            if (bn->requires_grad) {
                T* gb = bn->grad_ptr() + static_cast<std::int64_t>(g) * n * k;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        kernels::axpy(gyg[i * n + j], ag + static_cast<std::int64_t>(i) * k,
                                      gb + static_cast<std::int64_t>(j) * k,
                                      static_cast<std::size_t>(k));
            }
        }
    });
    return y;
}

// LayerNorm along `axis` with affine [shape[axis]] parameters.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     int axis, T eps = T(1e-5)) {
    const Shape& xs = x.shape();
    const int nd = static_cast<int>(xs.size());
    if (axis < 0) axis += nd;
    const int c = xs[static_cast<std::size_t>(axis)];
    if (gamma.numel() != c || beta.numel() != c)
        throw std::invalid_argument("layer_norm: affine params must have length of the normalized axis");
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= xs[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < nd; ++d) inner *= xs[static_cast<std::size_t>(d)];

    Tensor<T> y = Tensor<T>::zeros(xs);
    auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(outer * inner * 2));
    const T* xd = x.data();
    const T* gd = gamma.data();
    const T* bd = beta.data();
    T* yd = y.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * c * inner + i;
            T mu = 0;
            for (int a = 0; a < c; ++a) mu += xd[base + a * inner];
            mu /= static_cast<T>(c);
            T var = 0;
            for (int a = 0; a < c; ++a) {
                T d = xd[base + a * inner] - mu;
                var += d * d;
            }
            var /= static_cast<T>(c);
            T rstd = T(1) / std::sqrt(var + eps);
            (*stats)[static_cast<std::size_t>((o * inner + i) * 2)] = mu;
            (*stats)[static_cast<std::size_t>((o * inner + i) * 2 + 1)] = rstd;
            for (int a = 0; a < c; ++a)
                yd[base + a * inner] = (xd[base + a * inner] - mu) * rstd * gd[a] + bd[a];
        }
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    attach<T>(y, {x, gamma, beta}, [xn, gn, bn, stats, outer, inner, c](Node<T>& yn) {
        const T* gy = yn.grad.data();
        T* gx = xn->requires_grad ? xn->grad_ptr() : nullptr;
        T* gg = gn->requires_grad ? gn->grad_ptr() : nullptr;
        T* gb = bn->requires_grad ? bn->grad_ptr() : nullptr;
        const T* xd = xn->data.data();
        const T* gd = gn->data.data();
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t i = 0; i < inner; ++i) {
                const std::int64_t base = o * c * inner + i;
                const T mu = (*stats)[static_cast<std::size_t>((o * inner + i) * 2)];
                const T rstd = (*stats)[static_cast<std::size_t>((o * inner + i) * 2 + 1)];
                T sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (int a = 0; a < c; ++a) {
                    const T xhat = (xd[base + a * inner] - mu) * rstd;
                    const T dy = gy[base + a * inner];
                    if (gg) gg[a] += dy * xhat;
                    if (gb) gb[a] += dy;
                    const T dxhat = dy * gd[a];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                if (gx) {
                    const T invc = T(1) / static_cast<T>(c);
                    for (int a = 0; a < c; ++a) {
                        const T xhat = (xd[base + a * inner] - mu) * rstd;
                        const T dxhat = gy[base + a * inner] * gd[a];
                        gx[base + a * inner] +=
                            rstd * (dxhat - invc * sum_dxhat - xhat * invc * sum_dxhat_xhat);
                    }
                }
            }
        }
    });
    return y;
}

// GELU, tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3))),
// c = 0.7978845608028654 = sqrt(2/pi).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T kC = T(0.7978845608028654);
    constexpr T kA = T(0.044715);
    Tensor<T> y = Tensor<T>::zeros(x.shape());
    const T* xd = x.data();
    T* yd = y.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const T v = xd[i];
        yd[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
    }
    auto xn = x.node();
    attach<T>(y, {x}, [xn](Node<T>& yn) {
        T* gx = xn->grad_ptr();
        const T* xd2 = xn->data.data();
        const std::int64_t n2 = yn.numel();
        const T corrupt = corrupt_gelu_backward() ? T(1.05) : T(1);
        for (std::int64_t i = 0; i < n2; ++i) {
            const T v = xd2[i];
            const T u = kC * (v + kA * v * v * v);
            const T t = std::tanh(u);
            const T d = T(0.5) * (T(1) + t) +
                        T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
            gx[i] += corrupt * d * yn.grad[static_cast<std::size_t>(i)];
        }
    });
    return y;
}

// softmax over the last axis
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    const int l = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.numel() / l;
    Tensor<T> y = Tensor<T>::zeros(x.shape());
    const T* xd = x.data();
    T* yd = y.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xd + r * l;
        T* yr = yd + r * l;
        const T m = kernels::reduce_max(xr, static_cast<std::size_t>(l));
        T z = 0;
        for (int i = 0; i < l; ++i) {
            yr[i] = std::exp(xr[i] - m);
            z += yr[i];
        }
        const T inv = T(1) / z;
        for (int i = 0; i < l; ++i) yr[i] *= inv;
    }
    auto xn = x.node();
    attach<T>(y, {x}, [xn, rows, l](Node<T>& yn) {
        T* gx = xn->grad_ptr();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* yr = yn.data.data() + r * l;
            const T* gyr = yn.grad.data() + r * l;
            const T s = kernels::dot(yr, gyr, static_cast<std::size_t>(l));
            for (int i = 0; i < l; ++i) gx[r * l + i] += yr[i] * (gyr[i] - s);
        }
    });
    return y;
}

// adds a constant [T,T] attention mask to every batch/head slice of
// scores [NB,T,T]; the mask carries no gradient
template <typename T>
Tensor<T> add_attn_mask(const Tensor<T>& scores, const Tensor<T>& mask) {
    if (scores.ndim() != 3 || mask.ndim() != 2 || scores.dim(1) != mask.dim(0) ||
        scores.dim(2) != mask.dim(1))
        throw std::invalid_argument("add_attn_mask: shape mismatch");
    Tensor<T> y = Tensor<T>::zeros(scores.shape());
    const std::int64_t nb = scores.dim(0);
    const std::int64_t tt = static_cast<std::int64_t>(mask.numel());
    for (std::int64_t g = 0; g < nb; ++g)
        kernels::add(scores.data() + g * tt, mask.data(), y.data() + g * tt,
                     static_cast<std::size_t>(tt));
    auto sn = scores.node();
    attach<T>(y, {scores}, [sn](Node<T>& yn) {
        kernels::axpy(T(1), yn.grad.data(), sn->grad_ptr(), yn.data.size());
    });
    return y;
}

// DropPath / stochastic depth over axis 0 (per sample). Identity at eval.
template <typename T>
Tensor<T> drop_path(const Tensor<T>& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("drop_path: rate must be in [0,1)");
    if (!training || rate == 0.0) {
        // exact identity
        Tensor<T> y = Tensor<T>::from_data(x.shape(), x.vec());
        auto xn = x.node();
        attach<T>(y, {x}, [xn](Node<T>& yn) {
            kernels::axpy(T(1), yn.grad.data(), xn->grad_ptr(), yn.data.size());
        });
        return y;
    }
    const int b = x.dim(0);
    const std::int64_t per = x.numel() / b;
    auto keep = std::make_shared<std::vector<T>>(static_cast<std::size_t>(b));
    const T inv_keep = T(1.0 / (1.0 - rate));
    for (int i = 0; i < b; ++i)
        (*keep)[static_cast<std::size_t>(i)] = rng.bernoulli(rate) ? T(0) : inv_keep;
    Tensor<T> y = Tensor<T>::zeros(x.shape());
    for (int i = 0; i < b; ++i)
        kernels::scale(x.data() + i * per, (*keep)[static_cast<std::size_t>(i)],
                       y.data() + i * per, static_cast<std::size_t>(per));
    auto xn = x.node();
    attach<T>(y, {x}, [xn, keep, b, per](Node<T>& yn) {
        T* gx = xn->grad_ptr();
        for (int i = 0; i < b; ++i)
            kernels::axpy((*keep)[static_cast<std::size_t>(i)], yn.grad.data() + i * per,
                          gx + i * per, static_cast<std::size_t>(per));
    });
    return y;
}

// 2-d cross-correlation, NCHW. groups=Cin with Cout=Cin gives the
// depthwise case. The stride-1 inner loops run over contiguous spans of
// the width axis so they vectorize through axpy/dot.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int padding = 0, int groups = 1, int dilation = 1) {
    if (x.ndim() != 4 || w.ndim() != 4) throw std::invalid_argument("conv2d: expects 4-d tensors");
    const int bs = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), cing = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (cin % groups != 0 || cout % groups != 0 || cing != cin / groups)
        throw std::invalid_argument("conv2d: group/channel mismatch");
    if (b.defined() && b.numel() != cout) throw std::invalid_argument("conv2d: bad bias");
    const int kh_eff = (kh - 1) * dilation + 1;
    const int kw_eff = (kw - 1) * dilation + 1;
    const int oh = (h + 2 * padding - kh_eff) / stride + 1;
    const int ow = (wd + 2 * padding - kw_eff) / stride + 1;
    if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: kernel does not fit input");
    Tensor<T> y = Tensor<T>::zeros({bs, cout, oh, ow});

    const int cout_g = cout / groups;
    const T* xd = x.data();
    const T* wdat = w.data();
    T* yd = y.data();
    auto xoff = [&](int n, int c, int r) {
        return ((static_cast<std::int64_t>(n) * cin + c) * h + r) * wd;
    };
    auto yoff = [&](int n, int c, int r) {
        return ((static_cast<std::int64_t>(n) * cout + c) * oh + r) * ow;
    };
    for (int n = 0; n < bs; ++n) {
        for (int co = 0; co < cout; ++co) {
            const int g = co / cout_g;
            if (b.defined()) {
                const T bv = b.data()[co];
                for (int r = 0; r < oh; ++r) {
                    T* yr = yd + yoff(n, co, r);
                    for (int q = 0; q < ow; ++q) yr[q] = bv;
                }
            }
            for (int cg = 0; cg < cing; ++cg) {
                const int ci = g * cing + cg;
                for (int fr = 0; fr < kh; ++fr) {
                    for (int fc = 0; fc < kw; ++fc) {
                        const T wv = wdat[((static_cast<std::int64_t>(co) * cing + cg) * kh + fr) * kw + fc];
                        if (wv == T(0)) continue;
                        for (int r = 0; r < oh; ++r) {
                            const int ir = r * stride + fr * dilation - padding;
                            if (ir < 0 || ir >= h) continue;
                            if (stride == 1) {
                                // output cols q where input col q+fc-padding is in range
                                const int q0 = std::max(0, padding - fc * dilation);
                                const int q1 = std::min(ow, wd + padding - fc * dilation);
                                if (q1 > q0)
                                    kernels::axpy(wv, xd + xoff(n, ci, ir) + q0 + fc * dilation - padding,
                                                  yd + yoff(n, co, r) + q0,
                                                  static_cast<std::size_t>(q1 - q0));
                            } else {
                                T* yr = yd + yoff(n, co, r);
                                const T* xr = xd + xoff(n, ci, ir);
                                for (int q = 0; q < ow; ++q) {
                                    const int icx = q * stride + fc * dilation - padding;
                                    if (icx >= 0 && icx < wd) yr[q] += wv * xr[icx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    auto xn = x.node(), wn = w.node();
    auto bn = b.defined() ? b.node() : nullptr;
    std::vector<Tensor<T>> parents{x, w};
    if (b.defined()) parents.push_back(b);
    attach<T>(y, parents,
              [xn, wn, bn, bs, cin, h, wd, cout, cing, kh, kw, oh, ow, stride, padding, dilation,
               cout_g, groups](Node<T>& yn) {
        const T* gy = yn.grad.data();
        T* gx = xn->requires_grad ? xn->grad_ptr() : nullptr;
        T* gw = wn->requires_grad ? wn->grad_ptr() : nullptr;
        T* gb = (bn && bn->requires_grad) ? bn->grad_ptr() : nullptr;
        const T* xd = xn->data.data();
        const T* wdat = wn->data.data();
        auto xoff = [&](int n, int c, int r) {
            return ((static_cast<std::int64_t>(n) * cin + c) * h + r) * wd;
        };
        auto yoff = [&](int n, int c, int r) {
            return ((static_cast<std::int64_t>(n) * cout + c) * oh + r) * ow;
        };
        for (int n = 0; n < bs; ++n) {
            for (int co = 0; co < cout; ++co) {
                const int g = co / cout_g;
                if (gb) {
                    for (int r = 0; r < oh; ++r)
                        gb[co] += kernels::sum(gy + yoff(n, co, r), static_cast<std::size_t>(ow));
                }
                for (int cg = 0; cg < cing; ++cg) {
                    const int ci = g * cing + cg;
                    for (int fr = 0; fr < kh; ++fr) {
                        for (int fc = 0; fc < kw; ++fc) {
                            const std::int64_t widx =
                                ((static_cast<std::int64_t>(co) * cing + cg) * kh + fr) * kw + fc;
                            const T wv = wdat[widx];
                            for (int r = 0; r < oh; ++r) {
                                const int ir = r * stride + fr * dilation - padding;
                                if (ir < 0 || ir >= h) continue;
                                if (stride == 1) {
                                    const int q0 = std::max(0, padding - fc * dilation);
                                    const int q1 = std::min(ow, wd + padding - fc * dilation);
                                    if (q1 <= q0) continue;
                                    if (gw)
                                        gw[widx] += kernels::dot(
                                            gy + yoff(n, co, r) + q0,
                                            xd + xoff(n, ci, ir) + q0 + fc * dilation - padding,
                                            static_cast<std::size_t>(q1 - q0));
                                    if (gx)
                                        kernels::axpy(wv, gy + yoff(n, co, r) + q0,
                                                      gx + xoff(n, ci, ir) + q0 + fc * dilation - padding,
                                                      static_cast<std::size_t>(q1 - q0));
                                } else {
                                    const T* gyr = gy + yoff(n, co, r);
                                    const T* xr = xd + xoff(n, ci, ir);
                                    for (int q = 0; q < ow; ++q) {
                                        const int icx = q * stride + fc * dilation - padding;
                                        if (icx < 0 || icx >= wd) continue;
                                        if (gw) gw[widx] += gyr[q] * xr[icx];
                                        if (gx) gx[xoff(n, ci, ir) + icx] += wv * gyr[q];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    return y;
}

// non-overlapping mean pooling (kernel == stride)
template <typename T>
Tensor<T> pool2d_mean(const Tensor<T>& x, int kernel = 2, int stride = 2) {
    if (kernel != stride) throw std::invalid_argument("pool2d_mean: kernel must equal stride");
    if (x.ndim() != 4) throw std::invalid_argument("pool2d_mean: expects 4-d tensor");
    const int bs = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % kernel != 0 || w % kernel != 0)
        throw std::invalid_argument("pool2d_mean: dims not divisible by kernel");
    const int oh = h / kernel, ow = w / kernel;
    Tensor<T> y = Tensor<T>::zeros({bs, c, oh, ow});
    const T inv = T(1) / static_cast<T>(kernel * kernel);
    const T* xd = x.data();
    T* yd = y.data();
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(bs) * c; ++nc) {
        const T* xp = xd + nc * h * w;
        T* yp = yd + nc * oh * ow;
        for (int r = 0; r < oh; ++r)
            for (int q = 0; q < ow; ++q) {
                T acc = 0;
                for (int fr = 0; fr < kernel; ++fr)
                    for (int fc = 0; fc < kernel; ++fc)
                        acc += xp[(r * kernel + fr) * w + q * kernel + fc];
                yp[r * ow + q] = acc * inv;
            }
    }
    auto xn = x.node();
    attach<T>(y, {x}, [xn, bs, c, h, w, oh, ow, kernel, inv](Node<T>& yn) {
        T* gx = xn->grad_ptr();
        const T* gy = yn.grad.data();
        for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(bs) * c; ++nc) {
            T* gxp = gx + nc * h * w;
            const T* gyp = gy + nc * oh * ow;
            for (int r = 0; r < oh; ++r)
                for (int q = 0; q < ow; ++q) {
                    const T g = gyp[r * ow + q] * inv;
                    for (int fr = 0; fr < kernel; ++fr)
                        for (int fc = 0; fc < kernel; ++fc)
                            gxp[(r * kernel + fr) * w + q * kernel + fc] += g;
                }
        }
    });
    return y;
}

// bilinear resize with the align_corners=false convention:
// src = (dst + 0.5) * in/out - 0.5, clamped to the valid range
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int out_h, int out_w) {
    if (x.ndim() != 4) throw std::invalid_argument("upsample_bilinear: expects 4-d tensor");
    const int bs = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> y = Tensor<T>::zeros({bs, c, out_h, out_w});
    struct Tap {
        int lo, hi;
        T wlo, whi;
    };
    auto make_taps = [](int in, int out) {
        std::vector<Tap> taps(static_cast<std::size_t>(out));
        const double r = static_cast<double>(in) / out;
        for (int i = 0; i < out; ++i) {
            double src = (i + 0.5) * r - 0.5;
            if (src < 0) src = 0;
            if (src > in - 1) src = in - 1;
            const int lo = static_cast<int>(src);
            const int hi = std::min(lo + 1, in - 1);
            const T f = static_cast<T>(src - lo);
            taps[static_cast<std::size_t>(i)] = {lo, hi, T(1) - f, f};
        }
        return taps;
    };
    auto rt = std::make_shared<std::vector<Tap>>(make_taps(h, out_h));
    auto ct = std::make_shared<std::vector<Tap>>(make_taps(w, out_w));
    const T* xd = x.data();
    T* yd = y.data();
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(bs) * c; ++nc) {
        const T* xp = xd + nc * h * w;
        T* yp = yd + nc * out_h * out_w;
        for (int r = 0; r < out_h; ++r) {
            const Tap& tr = (*rt)[static_cast<std::size_t>(r)];
            for (int q = 0; q < out_w; ++q) {
                const Tap& tc = (*ct)[static_cast<std::size_t>(q)];
                yp[r * out_w + q] = tr.wlo * (tc.wlo * xp[tr.lo * w + tc.lo] + tc.whi * xp[tr.lo * w + tc.hi]) +
                                    tr.whi * (tc.wlo * xp[tr.hi * w + tc.lo] + tc.whi * xp[tr.hi * w + tc.hi]);
            }
        }
    }
    auto xn = x.node();
    attach<T>(y, {x}, [xn, rt, ct, bs, c, h, w, out_h, out_w](Node<T>& yn) {
        T* gx = xn->grad_ptr();
        const T* gy = yn.grad.data();
        for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(bs) * c; ++nc) {
            T* gxp = gx + nc * h * w;
            const T* gyp = gy + nc * out_h * out_w;
            for (int r = 0; r < out_h; ++r) {
                const Tap& tr = (*rt)[static_cast<std::size_t>(r)];
                for (int q = 0; q < out_w; ++q) {
                    const Tap& tc = (*ct)[static_cast<std::size_t>(q)];
                    const T g = gyp[r * out_w + q];
                    gxp[tr.lo * w + tc.lo] += g * tr.wlo * tc.wlo;
                    gxp[tr.lo * w + tc.hi] += g * tr.wlo * tc.whi;
                    gxp[tr.hi * w + tc.lo] += g * tr.whi * tc.wlo;
                    gxp[tr.hi * w + tc.hi] += g * tr.whi * tc.whi;
                }
            }
        }
    });
    return y;
}

struct PadRecord {
    int b = 0, c = 0, h = 0, w = 0;          // original dims
    int padded_h = 0, padded_w = 0;
    int win_h = 0, win_w = 0;
    int n_win() const { return (padded_h / win_h) * (padded_w / win_w); }
};

// [B,C,H,W] -> [B*nw, win_h*win_w, C]; zero-pads H,W up to window multiples
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, int win_h, int win_w, PadRecord& rec) {
    if (x.ndim() != 4) throw std::invalid_argument("window_partition: expects 4-d tensor");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int hp = (h + win_h - 1) / win_h * win_h;
    const int wp = (w + win_w - 1) / win_w * win_w;
    rec = {b, c, h, w, hp, wp, win_h, win_w};
    const int nwh = hp / win_h, nww = wp / win_w;
    Tensor<T> y = Tensor<T>::zeros({b * nwh * nww, win_h * win_w, c});
    const T* xd = x.data();
    T* yd = y.data();
    for (int n = 0; n < b; ++n)
        for (int wr = 0; wr < nwh; ++wr)
            for (int wc = 0; wc < nww; ++wc) {
                const std::int64_t wbase =
                    (static_cast<std::int64_t>(n) * nwh * nww + wr * nww + wc) *
                    (static_cast<std::int64_t>(win_h) * win_w) * c;
                for (int r = 0; r < win_h; ++r)
                    for (int q = 0; q < win_w; ++q) {
                        const int ir = wr * win_h + r, iq = wc * win_w + q;
                        T* dst = yd + wbase + (static_cast<std::int64_t>(r) * win_w + q) * c;
                        if (ir < h && iq < w)
                            for (int ch = 0; ch < c; ++ch)
                                dst[ch] = xd[((static_cast<std::int64_t>(n) * c + ch) * h + ir) * w + iq];
                    }
            }
    auto xn = x.node();
    PadRecord rc = rec;
    attach<T>(y, {x}, [xn, rc](Node<T>& yn) {
        const int nwh = rc.padded_h / rc.win_h, nww = rc.padded_w / rc.win_w;
        T* gx = xn->grad_ptr();
        const T* gy = yn.grad.data();
        for (int n = 0; n < rc.b; ++n)
            for (int wr = 0; wr < nwh; ++wr)
                for (int wc = 0; wc < nww; ++wc) {
                    const std::int64_t wbase =
                        (static_cast<std::int64_t>(n) * nwh * nww + wr * nww + wc) *
                        (static_cast<std::int64_t>(rc.win_h) * rc.win_w) * rc.c;
                    for (int r = 0; r < rc.win_h; ++r)
                        for (int q = 0; q < rc.win_w; ++q) {
                            const int ir = wr * rc.win_h + r, iq = wc * rc.win_w + q;
                            if (ir >= rc.h || iq >= rc.w) continue;
                            const T* src = gy + wbase + (static_cast<std::int64_t>(r) * rc.win_w + q) * rc.c;
                            for (int ch = 0; ch < rc.c; ++ch)
                                gx[((static_cast<std::int64_t>(n) * rc.c + ch) * rc.h + ir) * rc.w + iq] += src[ch];
                        }
                }
    });
    return y;
}

// exact inverse of window_partition (pad positions dropped)
template <typename T>
Tensor<T> window_unpartition(const Tensor<T>& t, const PadRecord& rec) {
    const int nwh = rec.padded_h / rec.win_h, nww = rec.padded_w / rec.win_w;
    if (t.ndim() != 3 || t.dim(0) != rec.b * nwh * nww ||
        t.dim(1) != rec.win_h * rec.win_w || t.dim(2) != rec.c)
        throw std::invalid_argument("window_unpartition: token shape does not match pad record");
    Tensor<T> y = Tensor<T>::zeros({rec.b, rec.c, rec.h, rec.w});
    const T* td = t.data();
    T* yd = y.data();
    for (int n = 0; n < rec.b; ++n)
        for (int wr = 0; wr < nwh; ++wr)
            for (int wc = 0; wc < nww; ++wc) {
                const std::int64_t wbase =
                    (static_cast<std::int64_t>(n) * nwh * nww + wr * nww + wc) *
                    (static_cast<std::int64_t>(rec.win_h) * rec.win_w) * rec.c;
                for (int r = 0; r < rec.win_h; ++r)
                    for (int q = 0; q < rec.win_w; ++q) {
                        const int ir = wr * rec.win_h + r, iq = wc * rec.win_w + q;
                        if (ir >= rec.h || iq >= rec.w) continue;
                        const T* src = td + wbase + (static_cast<std::int64_t>(r) * rec.win_w + q) * rec.c;
                        for (int ch = 0; ch < rec.c; ++ch)
                            yd[((static_cast<std::int64_t>(n) * rec.c + ch) * rec.h + ir) * rec.w + iq] = src[ch];
                    }
            }
    auto tn = t.node();
    PadRecord rc = rec;
    attach<T>(y, {t}, [tn, rc](Node<T>& yn) {
        const int nwh = rc.padded_h / rc.win_h, nww = rc.padded_w / rc.win_w;
        T* gt = tn->grad_ptr();
        const T* gy = yn.grad.data();
        for (int n = 0; n < rc.b; ++n)
            for (int wr = 0; wr < nwh; ++wr)
                for (int wc = 0; wc < nww; ++wc) {
                    const std::int64_t wbase =
                        (static_cast<std::int64_t>(n) * nwh * nww + wr * nww + wc) *
                        (static_cast<std::int64_t>(rc.win_h) * rc.win_w) * rc.c;
                    for (int r = 0; r < rc.win_h; ++r)
                        for (int q = 0; q < rc.win_w; ++q) {
                            const int ir = wr * rc.win_h + r, iq = wc * rc.win_w + q;
                            if (ir >= rc.h || iq >= rc.w) continue;
                            T* dst = gt + wbase + (static_cast<std::int64_t>(r) * rc.win_w + q) * rc.c;
                            for (int ch = 0; ch < rc.c; ++ch)
                                dst[ch] += gy[((static_cast<std::int64_t>(n) * rc.c + ch) * rc.h + ir) * rc.w + iq];
                        }
                }
    });
    return y;
}

// masked multi-head attention over token sequences x [B,T,C]. The
// optional additive mask is [T,T] with 0 inside a mask unit and a large
// negative value across units.
template <typename T>
Tensor<T> masked_mha(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& bq,
                     const Tensor<T>& wk, const Tensor<T>& bk, const Tensor<T>& wv,
                     const Tensor<T>& bv, const Tensor<T>& wo, const Tensor<T>& bo, int heads,
                     const Tensor<T>& mask) {
    if (x.ndim() != 3) throw std::invalid_argument("masked_mha: x must be [B,T,C]");
    const int b = x.dim(0), t = x.dim(1), c = x.dim(2);
    if (c % heads != 0) throw std::invalid_argument("masked_mha: C not divisible by heads");
    const int d = c / heads;
    auto split_heads = [&](const Tensor<T>& z) {
        // [B,T,C] -> [B*heads, T, d]
        Tensor<T> r = reshape(z, {b, t, heads, d});
        r = permute(r, {0, 2, 1, 3});
        return reshape(r, {b * heads, t, d});
    };
    Tensor<T> q = split_heads(linear(x, wq, bq));
    Tensor<T> k = split_heads(linear(x, wk, bk));
    Tensor<T> v = split_heads(linear(x, wv, bv));
    Tensor<T> scores = scale(bmm_nt(q, k), T(1) / std::sqrt(static_cast<T>(d)));
    if (mask.defined()) scores = add_attn_mask(scores, mask);
    Tensor<T> att = softmax_lastdim(scores);
    Tensor<T> out = bmm(att, v);                       // [B*heads, T, d]
    out = reshape(out, {b, heads, t, d});
    out = permute(out, {0, 2, 1, 3});
    out = reshape(out, {b, t, c});
    return linear(out, wo, bo);
}

// block-diagonal additive mask: tokens in the same unit of `unit` length
// see 0, everything else the -inf surrogate
template <typename T>
Tensor<T> block_diag_mask(int tokens, int unit, T neg = T(-1e9)) {
    Tensor<T> m = Tensor<T>::filled({tokens, tokens}, neg);
    for (int i = 0; i < tokens; ++i)
        for (int j = 0; j < tokens; ++j)
            if (i / unit == j / unit) m.data()[static_cast<std::int64_t>(i) * tokens + j] = T(0);
    return m;
}

} // namespace rangesam::ops
