#pragma once
#include <cstddef>

// Dense arithmetic inner loops. Float kernels have a scalar reference
// implementation and an AVX2+FMA variant selected at runtime; double
// kernels are scalar only (used by the gradient-check path).
namespace rangesam::kernels {

enum class Isa { Scalar, Avx2 };

bool cpu_has_avx2();
Isa active_isa();
void set_isa(Isa isa);   // Avx2 request falls back to Scalar if unsupported

// y = a + b
void add(const float* a, const float* b, float* y, std::size_t n);
// y = a - b
void sub(const float* a, const float* b, float* y, std::size_t n);
// y = a * b (elementwise)
void mul(const float* a, const float* b, float* y, std::size_t n);
// y = s * x
void scale(const float* x, float s, float* y, std::size_t n);
// y += s * x
void axpy(float s, const float* x, float* y, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
float sum(const float* x, std::size_t n);
float reduce_max(const float* x, std::size_t n);

void add(const double* a, const double* b, double* y, std::size_t n);
void sub(const double* a, const double* b, double* y, std::size_t n);
void mul(const double* a, const double* b, double* y, std::size_t n);
void scale(const double* x, double s, double* y, std::size_t n);
void axpy(double s, const double* x, double* y, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
double reduce_max(const double* x, std::size_t n);

namespace detail {
// scalar reference kernels (also the double path)
template <typename T>
void add_ref(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
template <typename T>
void sub_ref(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}
template <typename T>
void mul_ref(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
template <typename T>
void scale_ref(const T* x, T s, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = s * x[i];
}
template <typename T>
void axpy_ref(T s, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += s * x[i];
}
template <typename T>
T dot_ref(const T* a, const T* b, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}
template <typename T>
T sum_ref(const T* x, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}
template <typename T>
T max_ref(const T* x, std::size_t n) {
    T m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}
} // namespace detail

} // namespace rangesam::kernels
