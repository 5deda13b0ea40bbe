#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include "tsimpute/kernels.hpp"

// Compiled with -mavx2. No FMA is used: separate mul+add keeps results
// bit-identical to the scalar reference built with -ffp-contract=off.
namespace tsimpute::kern {
namespace {

void v_add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_mul_acc(const double* a, const double* b, double* acc, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), prod));
    }
    for (; i < n; ++i) acc[i] += a[i] * b[i];
}

void v_axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void v_scale(const double* x, double s, double* out, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), vs));
    }
    for (; i < n; ++i) out[i] = x[i] * s;
}

void v_relu(const double* x, double* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_relu_grad_acc(const double* x, const double* g, double* gx, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d keep = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        __m256d gated = _mm256_and_pd(keep, _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), gated));
    }
    for (; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable t{v_add,  v_sub,   v_mul,  v_mul_acc,
                               v_axpy, v_scale, v_relu, v_relu_grad_acc};
    return t;
}

}  // namespace tsimpute::kern

#endif
