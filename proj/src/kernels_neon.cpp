#if defined(__aarch64__)

#include <arm_neon.h>

#include "tsimpute/kernels.hpp"

// NEON f64 variants. As with AVX2, separate mul+add (no vfma) keeps output
// bit-identical to the scalar reference.
namespace tsimpute::kern {
namespace {

void v_add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_mul_acc(const double* a, const double* b, double* acc, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t prod = vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
        vst1q_f64(acc + i, vaddq_f64(vld1q_f64(acc + i), prod));
    }
    for (; i < n; ++i) acc[i] += a[i] * b[i];
}

void v_axpy(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t prod = vmulq_f64(va, vld1q_f64(x + i));
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void v_scale(const double* x, double s, double* out, std::size_t n) {
    const float64x2_t vs = vdupq_n_f64(s);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(x + i), vs));
    for (; i < n; ++i) out[i] = x[i] * s;
}

void v_relu(const double* x, double* out, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmaxq_f64(vld1q_f64(x + i), zero));
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void v_relu_grad_acc(const double* x, const double* g, double* gx, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        uint64x2_t keep = vcgtq_f64(vld1q_f64(x + i), zero);
        float64x2_t gated = vreinterpretq_f64_u64(
            vandq_u64(keep, vreinterpretq_u64_f64(vld1q_f64(g + i))));
        vst1q_f64(gx + i, vaddq_f64(vld1q_f64(gx + i), gated));
    }
    for (; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
}

}  // namespace

const KernelTable& neon_table() {
    static const KernelTable t{v_add,  v_sub,   v_mul,  v_mul_acc,
                               v_axpy, v_scale, v_relu, v_relu_grad_acc};
    return t;
}

}  // namespace tsimpute::kern

#endif
