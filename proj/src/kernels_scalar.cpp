#include "tsimpute/kernels.hpp"

namespace tsimpute::kern {
namespace {

void s_add(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_mul_acc(const double* a, const double* b, double* acc, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += a[i] * b[i];
}

void s_axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void s_scale(const double* x, double s, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * s;
}

void s_relu(const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_grad_acc(const double* x, const double* g, double* gx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable t{s_add,  s_sub,   s_mul,  s_mul_acc,
                               s_axpy, s_scale, s_relu, s_relu_grad_acc};
    return t;
}

}  // namespace tsimpute::kern
