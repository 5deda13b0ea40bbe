#include <cstdlib>
#include <stdexcept>
#include <string>

#include "tsimpute/kernels.hpp"

namespace tsimpute::kern {
namespace {

const KernelTable* g_table = nullptr;
Isa g_isa = Isa::scalar;

const KernelTable* table_for(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return &scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
        case Isa::avx2:
            return &avx2_table();
#endif
#if defined(__aarch64__)
        case Isa::neon:
            return &neon_table();
#endif
        default:
            return nullptr;
    }
}

void init_once() {
    if (g_table) return;
    Isa isa = detect_isa();
    if (const char* env = std::getenv("TSIMPUTE_ISA")) {
        std::string want(env);
        if (want == "scalar") isa = Isa::scalar;
        else if (want == "avx2" && isa_supported(Isa::avx2)) isa = Isa::avx2;
        else if (want == "neon" && isa_supported(Isa::neon)) isa = Isa::neon;
    }
    g_isa = isa;
    g_table = table_for(isa);
}

inline const KernelTable& tab() {
    init_once();
    return *g_table;
}

}  // namespace

const char* isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "?";
}

bool isa_supported(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return __builtin_cpu_supports("avx2");
#else
            return false;
#endif
        case Isa::neon:
#if defined(__aarch64__)
            return true;
#else
            return false;
#endif
    }
    return false;
}

Isa detect_isa() {
    if (isa_supported(Isa::avx2)) return Isa::avx2;
    if (isa_supported(Isa::neon)) return Isa::neon;
    return Isa::scalar;
}

Isa active_isa() {
    init_once();
    return g_isa;
}

void set_active_isa(Isa isa) {
    if (!isa_supported(isa)) {
        throw std::runtime_error(std::string("kernel ISA not supported on this CPU: ") + isa_name(isa));
    }
    g_isa = isa;
    g_table = table_for(isa);
}

void add(const double* a, const double* b, double* out, std::size_t n) { tab().add(a, b, out, n); }
void sub(const double* a, const double* b, double* out, std::size_t n) { tab().sub(a, b, out, n); }
void mul(const double* a, const double* b, double* out, std::size_t n) { tab().mul(a, b, out, n); }
void mul_acc(const double* a, const double* b, double* acc, std::size_t n) { tab().mul_acc(a, b, acc, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { tab().axpy(alpha, x, y, n); }
void scale(const double* x, double s, double* out, std::size_t n) { tab().scale(x, s, out, n); }
void relu(const double* x, double* out, std::size_t n) { tab().relu(x, out, n); }
void relu_grad_acc(const double* x, const double* g, double* gx, std::size_t n) {
    tab().relu_grad_acc(x, g, gx, n);
}

}  // namespace tsimpute::kern
