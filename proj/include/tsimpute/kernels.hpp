#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops used by the tensor ops. Every kernel is
// lane-independent (no cross-lane reductions), so the scalar reference and
// the SIMD variants produce bit-identical output for identical input.
// The active variant is chosen at runtime from CPU features; the
// TSIMPUTE_ISA environment variable ("scalar", "avx2", "neon") overrides.
namespace tsimpute::kern {

enum class Isa { scalar, avx2, neon };

const char* isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa detect_isa();
Isa active_isa();
void set_active_isa(Isa isa);  // throws std::runtime_error if unsupported

// out[i] = a[i] op b[i]
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);

// acc[i] += a[i] * b[i]
void mul_acc(const double* a, const double* b, double* acc, std::size_t n);

// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);

// out[i] = x[i] * s
void scale(const double* x, double s, double* out, std::size_t n);

// out[i] = max(x[i], 0)
void relu(const double* x, double* out, std::size_t n);

// gx[i] += g[i] where x[i] > 0
void relu_grad_acc(const double* x, const double* g, double* gx, std::size_t n);

struct KernelTable {
    void (*add)(const double*, const double*, double*, std::size_t);
    void (*sub)(const double*, const double*, double*, std::size_t);
    void (*mul)(const double*, const double*, double*, std::size_t);
    void (*mul_acc)(const double*, const double*, double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(const double*, double, double*, std::size_t);
    void (*relu)(const double*, double*, std::size_t);
    void (*relu_grad_acc)(const double*, const double*, double*, std::size_t);
};

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
#endif
#if defined(__aarch64__)
const KernelTable& neon_table();
#endif

}  // namespace tsimpute::kern
