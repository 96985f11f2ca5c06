// Runtime ISA dispatch for the float kernels. Double kernels always use
// the scalar reference path.
#include "rangesam/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define RANGESAM_X86 1
#endif

namespace rangesam::kernels {

#ifdef RANGESAM_X86
namespace avx2 {
void add(const float*, const float*, float*, std::size_t);
void sub(const float*, const float*, float*, std::size_t);
void mul(const float*, const float*, float*, std::size_t);
void scale(const float*, float, float*, std::size_t);
void axpy(float, const float*, float*, std::size_t);
float dot(const float*, const float*, std::size_t);
float sum(const float*, std::size_t);
float reduce_max(const float*, std::size_t);
} // namespace avx2
#endif

bool cpu_has_avx2() {
#ifdef RANGESAM_X86
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

struct FloatTable {
    void (*add)(const float*, const float*, float*, std::size_t);
    void (*sub)(const float*, const float*, float*, std::size_t);
    void (*mul)(const float*, const float*, float*, std::size_t);
    void (*scale)(const float*, float, float*, std::size_t);
    void (*axpy)(float, const float*, float*, std::size_t);
    float (*dot)(const float*, const float*, std::size_t);
    float (*sum)(const float*, std::size_t);
    float (*max)(const float*, std::size_t);
};

constexpr FloatTable kScalarTable{
    detail::add_ref<float>, detail::sub_ref<float>,  detail::mul_ref<float>,
    detail::scale_ref<float>, detail::axpy_ref<float>, detail::dot_ref<float>,
    detail::sum_ref<float>, detail::max_ref<float>};

#ifdef RANGESAM_X86
constexpr FloatTable kAvx2Table{avx2::add, avx2::sub, avx2::mul, avx2::scale,
                                avx2::axpy, avx2::dot, avx2::sum, avx2::reduce_max};
#endif

Isa g_isa = cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;

const FloatTable& table() {
#ifdef RANGESAM_X86
    if (g_isa == Isa::Avx2) return kAvx2Table;
#endif
    return kScalarTable;
}

} // namespace

Isa active_isa() { return g_isa; }

void set_isa(Isa isa) {
    g_isa = (isa == Isa::Avx2 && cpu_has_avx2()) ? Isa::Avx2 : Isa::Scalar;
}

void add(const float* a, const float* b, float* y, std::size_t n) { table().add(a, b, y, n); }
void sub(const float* a, const float* b, float* y, std::size_t n) { table().sub(a, b, y, n); }
void mul(const float* a, const float* b, float* y, std::size_t n) { table().mul(a, b, y, n); }
void scale(const float* x, float s, float* y, std::size_t n) { table().scale(x, s, y, n); }
void axpy(float s, const float* x, float* y, std::size_t n) { table().axpy(s, x, y, n); }
float dot(const float* a, const float* b, std::size_t n) { return table().dot(a, b, n); }
float sum(const float* x, std::size_t n) { return table().sum(x, n); }
float reduce_max(const float* x, std::size_t n) { return table().max(x, n); }

void add(const double* a, const double* b, double* y, std::size_t n) { detail::add_ref(a, b, y, n); }
void sub(const double* a, const double* b, double* y, std::size_t n) { detail::sub_ref(a, b, y, n); }
void mul(const double* a, const double* b, double* y, std::size_t n) { detail::mul_ref(a, b, y, n); }
void scale(const double* x, double s, double* y, std::size_t n) { detail::scale_ref(x, s, y, n); }
void axpy(double s, const double* x, double* y, std::size_t n) { detail::axpy_ref(s, x, y, n); }
double dot(const double* a, const double* b, std::size_t n) { return detail::dot_ref(a, b, n); }
double sum(const double* x, std::size_t n) { return detail::sum_ref(x, n); }
double reduce_max(const double* x, std::size_t n) { return detail::max_ref(x, n); }

} // namespace rangesam::kernels
