#include "tsimpute/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "tsimpute/kernels.hpp"

namespace tsimpute {

namespace {

thread_local bool g_grad_enabled = true;

void check_finite_shape(const Shape& shape, const std::vector<double>& data) {
    if (numel(shape) != data.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    }
}

ImplPtr make_impl(Shape shape, std::vector<double> data) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return impl;
}

bool any_requires(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts) {
        if (t->impl()->requires_grad) return true;
    }
    return false;
}

// Attaches a tape node when recording is on and some input participates.
Tensor finish(ImplPtr out, std::initializer_list<const Tensor*> inputs,
              std::function<void(TensorImpl&)> backward_fn) {
    if (g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                      [](const Tensor* t) { return t->impl()->requires_grad; })) {
        out->requires_grad = true;
        for (const Tensor* t : inputs) out->parents.push_back(t->impl());
        out->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(out));
}

void accumulate(TensorImpl& dst, const std::vector<double>& g) {
    if (!dst.requires_grad) return;
    dst.ensure_grad();
    kern::add(dst.grad.data(), g.data(), dst.grad.data(), g.size());
}

// ---- broadcasting helpers -------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                             shape_str(b));
        }
        out[i] = std::max(ea, eb);
    }
    return out;
}

// strides into `in` for iteration over `out`; 0 where the input broadcasts
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t s = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t ii = in.size() - 1 - i;
        const std::size_t oi = out.size() - 1 - i;
        strides[oi] = in[ii] == 1 ? 0 : s;
        s *= in[ii];
    }
    return strides;
}

// true when `in` tiles the trailing axes of `out` exactly
bool suffix_broadcast(const Shape& in, const Shape& out) {
    if (in.size() > out.size()) return false;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[in.size() - 1 - i] != out[out.size() - 1 - i]) return false;
    }
    return true;
}

template <typename F>
void for_each_broadcast(const Shape& out, const Shape& ashape, const Shape& bshape, F&& f) {
    const auto as = broadcast_strides(ashape, out);
    const auto bs = broadcast_strides(bshape, out);
    const std::size_t n = numel(out);
    std::vector<std::size_t> idx(out.size(), 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t lin = 0; lin < n; ++lin) {
        f(lin, ia, ib);
        for (std::size_t d = out.size(); d-- > 0;) {
            ++idx[d];
            ia += as[d];
            ib += bs[d];
            if (idx[d] < out[d]) break;
            ia -= as[d] * out[d];
            ib -= bs[d] * out[d];
            idx[d] = 0;
        }
    }
}

// sums `g` (laid out as gshape) into a buffer of `to` shape
std::vector<double> reduce_to_shape(const std::vector<double>& g, const Shape& gshape,
                                    const Shape& to) {
    if (gshape == to) return g;
    std::vector<double> out(numel(to), 0.0);
    if (suffix_broadcast(to, gshape) && !out.empty()) {
        const std::size_t tile = out.size();
        for (std::size_t off = 0; off < g.size(); off += tile) {
            kern::add(out.data(), g.data() + off, out.data(), tile);
        }
        return out;
    }
    const auto ts = broadcast_strides(to, gshape);
    std::vector<std::size_t> idx(gshape.size(), 0);
    std::size_t it = 0;
    for (std::size_t lin = 0; lin < g.size(); ++lin) {
        out[it] += g[lin];
        for (std::size_t d = gshape.size(); d-- > 0;) {
            ++idx[d];
            it += ts[d];
            if (idx[d] < gshape[d]) break;
            it -= ts[d] * gshape[d];
            idx[d] = 0;
        }
    }
    return out;
}

enum class BinOp { add, sub, mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
    std::vector<double> out(numel(out_shape));
    const auto& ad = a.impl()->data;
    const auto& bd = b.impl()->data;

    const bool same = a.shape() == b.shape();
    if (same) {
        switch (op) {
            case BinOp::add: kern::add(ad.data(), bd.data(), out.data(), out.size()); break;
            case BinOp::sub: kern::sub(ad.data(), bd.data(), out.data(), out.size()); break;
            case BinOp::mul: kern::mul(ad.data(), bd.data(), out.data(), out.size()); break;
        }
    } else if (out_shape == a.shape() && suffix_broadcast(b.shape(), out_shape) && !bd.empty()) {
        const std::size_t tile = bd.size();
        for (std::size_t off = 0; off < out.size(); off += tile) {
            switch (op) {
                case BinOp::add: kern::add(ad.data() + off, bd.data(), out.data() + off, tile); break;
                case BinOp::sub: kern::sub(ad.data() + off, bd.data(), out.data() + off, tile); break;
                case BinOp::mul: kern::mul(ad.data() + off, bd.data(), out.data() + off, tile); break;
            }
        }
    } else {
        for_each_broadcast(out_shape, a.shape(), b.shape(),
                           [&](std::size_t lin, std::size_t ia, std::size_t ib) {
                               switch (op) {
                                   case BinOp::add: out[lin] = ad[ia] + bd[ib]; break;
                                   case BinOp::sub: out[lin] = ad[ia] - bd[ib]; break;
                                   case BinOp::mul: out[lin] = ad[ia] * bd[ib]; break;
                               }
                           });
    }

    auto impl = make_impl(out_shape, std::move(out));
    auto ai = a.impl(), bi = b.impl();
    Shape ashape = a.shape(), bshape = b.shape();
    return finish(impl, {&a, &b}, [=](TensorImpl& self) {
        const auto& g = self.grad;
        if (op == BinOp::mul) {
            // full-size products, then reduce over broadcast axes
            std::vector<double> ga(g.size()), gb(g.size());
            for_each_broadcast(self.shape, ashape, bshape,
                               [&](std::size_t lin, std::size_t ia, std::size_t ib) {
                                   ga[lin] = g[lin] * bi->data[ib];
                                   gb[lin] = g[lin] * ai->data[ia];
                               });
            accumulate(*ai, reduce_to_shape(ga, self.shape, ashape));
            accumulate(*bi, reduce_to_shape(gb, self.shape, bshape));
        } else {
            accumulate(*ai, reduce_to_shape(g, self.shape, ashape));
            if (op == BinOp::sub) {
                std::vector<double> neg(g.size());
                kern::scale(g.data(), -1.0, neg.data(), g.size());
                accumulate(*bi, reduce_to_shape(neg, self.shape, bshape));
            } else {
                accumulate(*bi, reduce_to_shape(g, self.shape, bshape));
            }
        }
    });
}

}  // namespace

void TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    check_finite_shape(shape, data);
    impl_ = make_impl(std::move(shape), std::move(data));
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> d(numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double v) {
    std::vector<double> d(numel(shape), v);
    return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    return impl_->data[0];
}

std::span<const double> Tensor::grad() const {
    if (impl_->grad.empty()) throw TrainingError("grad: no gradient has been computed");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::mul, "mul"); }

Tensor scale(const Tensor& x, double s) {
    std::vector<double> out(x.size());
    kern::scale(x.impl()->data.data(), s, out.data(), out.size());
    auto impl = make_impl(x.shape(), std::move(out));
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        kern::axpy(s, self.grad.data(), xi->grad.data(), self.grad.size());
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    kern::relu(x.impl()->data.data(), out.data(), out.size());
    auto impl = make_impl(x.shape(), std::move(out));
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        kern::relu_grad_acc(xi->data.data(), self.grad.data(), xi->grad.data(), self.grad.size());
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    const auto& xd = x.impl()->data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xd[i]));
    auto impl = make_impl(x.shape(), std::move(out));
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.data[i];
            xi->grad[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

// ---- matmul ---------------------------------------------------------------

namespace {

struct MatmulDims {
    std::size_t batch, m, k, n;
    bool b_shared;  // b is rank-2 and reused across batch slices
};

MatmulDims matmul_dims(const Shape& a, const Shape& b) {
    if (a.size() < 2 || b.size() < 2) {
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a) + " and " +
                         shape_str(b));
    }
    MatmulDims d{};
    d.m = a[a.size() - 2];
    d.k = a[a.size() - 1];
    const std::size_t bk = b[b.size() - 2];
    d.n = b[b.size() - 1];
    if (d.k != bk) {
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a) + " x " + shape_str(b));
    }
    d.batch = 1;
    for (std::size_t i = 0; i + 2 < a.size(); ++i) d.batch *= a[i];
    d.b_shared = b.size() == 2;
    if (!d.b_shared) {
        std::size_t bbatch = 1;
        for (std::size_t i = 0; i + 2 < b.size(); ++i) bbatch *= b[i];
        if (bbatch != d.batch || a.size() != b.size()) {
            throw ShapeError("matmul: batch extents disagree, " + shape_str(a) + " x " +
                             shape_str(b));
        }
    }
    return d;
}

// C[m,n] += A[m,k] * B[k,n]
void mm_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
            std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            kern::axpy(A[i * k + kk], B + kk * n, C + i * n, n);
        }
    }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
void mm_grad_a(const double* dC, const double* B, double* dA, std::size_t m, std::size_t k,
               std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            const double* gr = dC + i * n;
            const double* br = B + kk * n;
            for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
            dA[i * k + kk] += acc;
        }
    }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
void mm_grad_b(const double* A, const double* dC, double* dB, std::size_t m, std::size_t k,
               std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            kern::axpy(A[i * k + kk], dC + i * n, dB + kk * n, n);
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const MatmulDims d = matmul_dims(a.shape(), b.shape());
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(d.n);
    std::vector<double> out(numel(out_shape), 0.0);
    const auto& ad = a.impl()->data;
    const auto& bd = b.impl()->data;
    for (std::size_t s = 0; s < d.batch; ++s) {
        const double* A = ad.data() + s * d.m * d.k;
        const double* B = bd.data() + (d.b_shared ? 0 : s * d.k * d.n);
        mm_acc(A, B, out.data() + s * d.m * d.n, d.m, d.k, d.n);
    }
    auto impl = make_impl(std::move(out_shape), std::move(out));
    auto ai = a.impl(), bi = b.impl();
    return finish(impl, {&a, &b}, [=](TensorImpl& self) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (std::size_t s = 0; s < d.batch; ++s) {
                const double* B = bi->data.data() + (d.b_shared ? 0 : s * d.k * d.n);
                mm_grad_a(self.grad.data() + s * d.m * d.n, B, ai->grad.data() + s * d.m * d.k,
                          d.m, d.k, d.n);
            }
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (std::size_t s = 0; s < d.batch; ++s) {
                double* dB = bi->grad.data() + (d.b_shared ? 0 : s * d.k * d.n);
                mm_grad_b(ai->data.data() + s * d.m * d.k, self.grad.data() + s * d.m * d.n, dB,
                          d.m, d.k, d.n);
            }
        }
    });
}

Tensor transpose_last2(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw ShapeError("transpose_last2: rank < 2, " + shape_str(s));
    const std::size_t m = s[s.size() - 2], n = s[s.size() - 1];
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < s.size(); ++i) batch *= s[i];
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
    std::vector<double> out(x.size());
    const auto& xd = x.impl()->data;
    for (std::size_t bidx = 0; bidx < batch; ++bidx) {
        const double* src = xd.data() + bidx * m * n;
        double* dst = out.data() + bidx * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
        }
    }
    auto impl = make_impl(std::move(out_shape), std::move(out));
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (std::size_t bidx = 0; bidx < batch; ++bidx) {
            const double* g = self.grad.data() + bidx * m * n;
            double* gx = xi->grad.data() + bidx * m * n;
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
            }
        }
    });
}

Tensor concat_lastaxis(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size() || sa.empty() ||
        !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
        throw ShapeError("concat_lastaxis: leading shapes disagree, " + shape_str(sa) + " and " +
                         shape_str(sb));
    }
    const std::size_t la = sa.back(), lb = sb.back();
    const std::size_t rows = numel(sa) / la;
    Shape out_shape = sa;
    out_shape.back() = la + lb;
    std::vector<double> out(rows * (la + lb));
    const auto& ad = a.impl()->data;
    const auto& bd = b.impl()->data;
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(ad.data() + r * la, la, out.data() + r * (la + lb));
        std::copy_n(bd.data() + r * lb, lb, out.data() + r * (la + lb) + la);
    }
    auto impl = make_impl(std::move(out_shape), std::move(out));
    auto ai = a.impl(), bi = b.impl();
    return finish(impl, {&a, &b}, [=](TensorImpl& self) {
        for (std::size_t r = 0; r < rows; ++r) {
            const double* g = self.grad.data() + r * (la + lb);
            if (ai->requires_grad) {
                ai->ensure_grad();
                kern::add(ai->grad.data() + r * la, g, ai->grad.data() + r * la, la);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                kern::add(bi->grad.data() + r * lb, g + la, bi->grad.data() + r * lb, lb);
            }
        }
    });
}

Tensor softmax_lastaxis(const Tensor& x, const Tensor* additive_mask) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("softmax_lastaxis: rank-0 input");
    const std::size_t L = s.back();
    const std::size_t rows = x.size() / L;
    const double* mask = nullptr;
    std::size_t mask_len = 0;
    if (additive_mask) {
        if (!suffix_broadcast(additive_mask->shape(), s)) {
            throw ShapeError("softmax_lastaxis: mask " + shape_str(additive_mask->shape()) +
                             " does not broadcast to " + shape_str(s));
        }
        mask = additive_mask->impl()->data.data();
        mask_len = additive_mask->size();
    }
    std::vector<double> out(x.size());
    const auto& xd = x.impl()->data;
    std::vector<double> z(L);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * L;
        if (mask) {
            const double* mr = mask + (r * L) % mask_len;
            kern::add(xr, mr, z.data(), L);
        } else {
            std::copy_n(xr, L, z.begin());
        }
        const double zmax = *std::max_element(z.begin(), z.end());
        double denom = 0.0;
        double* yr = out.data() + r * L;
        for (std::size_t j = 0; j < L; ++j) {
            yr[j] = std::exp(z[j] - zmax);
            denom += yr[j];
        }
        kern::scale(yr, 1.0 / denom, yr, L);
    }
    auto impl = make_impl(s, std::move(out));
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * L;
            const double* g = self.grad.data() + r * L;
            double dot = 0.0;
            for (std::size_t j = 0; j < L; ++j) dot += g[j] * y[j];
            double* gx = xi->grad.data() + r * L;
            for (std::size_t j = 0; j < L; ++j) gx[j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor masked_mae(const Tensor& est, const Tensor& tgt, const Tensor& mask) {
    if (est.shape() != tgt.shape() || est.shape() != mask.shape()) {
        throw ShapeError("masked_mae: shapes disagree, est " + shape_str(est.shape()) + ", tgt " +
                         shape_str(tgt.shape()) + ", mask " + shape_str(mask.shape()));
    }
    const auto& ed = est.impl()->data;
    const auto& td = tgt.impl()->data;
    const auto& md = mask.impl()->data;
    double msum = 0.0, esum = 0.0;
    for (std::size_t i = 0; i < ed.size(); ++i) {
        msum += md[i];
        esum += std::abs((ed[i] - td[i]) * md[i]);
    }
    if (msum <= 0.0) throw DataError("masked_mae: mask sums to zero");
    auto impl = make_impl(Shape{1}, std::vector<double>{esum / msum});
    auto ei = est.impl(), ti = tgt.impl(), mi = mask.impl();
    return finish(impl, {&est, &tgt, &mask}, [=](TensorImpl& self) {
        const double g = self.grad[0] / msum;
        for (std::size_t i = 0; i < ei->data.size(); ++i) {
            const double diff = (ei->data[i] - ti->data[i]) * mi->data[i];
            const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            const double contrib = g * sgn * mi->data[i];
            if (ei->requires_grad) {
                ei->ensure_grad();
                ei->grad[i] += contrib;
            }
            if (ti->requires_grad) {
                ti->ensure_grad();
                ti->grad[i] -= contrib;
            }
        }
    });
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.impl()->data) s += v;
    auto impl = make_impl(Shape{1}, std::vector<double>{s});
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const double g = self.grad[0];
        for (double& v : xi->grad) v += g;
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    auto impl = make_impl(std::move(shape), x.impl()->data);
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) { accumulate(*xi, self.grad); });
}

namespace {

// (B,T,H*d) -> (B,H,T,d) when forward, inverse otherwise
void permute_heads(const double* src, double* dst, std::size_t B, std::size_t H, std::size_t T,
                   std::size_t d, bool forward, bool accumulate_dst) {
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t flat = ((b * T + t) * H + h) * d;
                const std::size_t split = ((b * H + h) * T + t) * d;
                const std::size_t from = forward ? flat : split;
                const std::size_t to = forward ? split : flat;
                if (accumulate_dst) {
                    kern::add(dst + to, src + from, dst + to, d);
                } else {
                    std::copy_n(src + from, d, dst + to);
                }
            }
        }
    }
}

}  // namespace

Tensor split_heads(const Tensor& x, std::size_t heads) {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[2] % heads != 0) {
        throw ShapeError("split_heads: need (B,T,h*d) with h=" + std::to_string(heads) + ", got " +
                         shape_str(s));
    }
    const std::size_t B = s[0], T = s[1], d = s[2] / heads;
    std::vector<double> out(x.size());
    permute_heads(x.impl()->data.data(), out.data(), B, heads, T, d, true, false);
    auto impl = make_impl(Shape{B, heads, T, d}, std::move(out));
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        permute_heads(self.grad.data(), xi->grad.data(), B, heads, T, d, false, true);
    });
}

Tensor merge_heads(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("merge_heads: need (B,h,T,d), got " + shape_str(s));
    const std::size_t B = s[0], H = s[1], T = s[2], d = s[3];
    std::vector<double> out(x.size());
    permute_heads(x.impl()->data.data(), out.data(), B, H, T, d, false, false);
    auto impl = make_impl(Shape{B, T, H * d}, std::move(out));
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        permute_heads(self.grad.data(), xi->grad.data(), B, H, T, d, true, true);
    });
}

Tensor mean_heads(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("mean_heads: need (B,h,T,T), got " + shape_str(s));
    const std::size_t B = s[0], H = s[1], inner = s[2] * s[3];
    std::vector<double> out(B * inner, 0.0);
    const auto& xd = x.impl()->data;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
            kern::axpy(1.0 / static_cast<double>(H), xd.data() + (b * H + h) * inner,
                       out.data() + b * inner, inner);
        }
    }
    auto impl = make_impl(Shape{B, s[2], s[3]}, std::move(out));
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t h = 0; h < H; ++h) {
                kern::axpy(1.0 / static_cast<double>(H), self.grad.data() + b * inner,
                           xi->grad.data() + (b * H + h) * inner, inner);
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("layer_norm: rank-0 input");
    const std::size_t d = s.back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw ShapeError("layer_norm: gain/bias must have shape (" + std::to_string(d) + ")");
    }
    const std::size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv = std::make_shared<std::vector<double>>(rows);
    const auto& xd = x.impl()->data;
    const auto& gd = gain.impl()->data;
    const auto& bd = bias.impl()->data;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        const double iv = 1.0 / std::sqrt(var + eps);
        (*inv)[r] = iv;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (xr[j] - mu) * iv;
            (*xhat)[r * d + j] = xh;
            out[r * d + j] = xh * gd[j] + bd[j];
        }
    }
    auto impl = make_impl(s, std::move(out));
    auto xi = x.impl();
    auto gi = gain.impl();
    auto bi = bias.impl();
    return finish(impl, {&x, &gain, &bias}, [=](TensorImpl& self) {
        const auto& g = self.grad;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * d;
            const double* xh = xhat->data() + r * d;
            if (gi->requires_grad) {
                gi->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) gi->grad[j] += gr[j] * xh[j];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                kern::add(bi->grad.data(), gr, bi->grad.data(), d);
            }
            if (xi->requires_grad) {
                xi->ensure_grad();
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                std::vector<double> dxh(d);
                for (std::size_t j = 0; j < d; ++j) {
                    dxh[j] = gr[j] * gi->data[j];
                    mean_dxh += dxh[j];
                    mean_dxh_xh += dxh[j] * xh[j];
                }
                mean_dxh /= static_cast<double>(d);
                mean_dxh_xh /= static_cast<double>(d);
                const double iv = (*inv)[r];
                double* gx = xi->grad.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) {
                    gx[j] += iv * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                }
            }
        }
    });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
    if (p < 0.0 || p >= 1.0) {
        throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(p));
    }
    if (!training || p == 0.0) return x;
    auto keep = std::make_shared<std::vector<double>>(x.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double inv_keep = 1.0 / (1.0 - p);
    for (double& k : *keep) k = u(rng) >= p ? inv_keep : 0.0;
    std::vector<double> out(x.size());
    kern::mul(x.impl()->data.data(), keep->data(), out.data(), out.size());
    auto impl = make_impl(x.shape(), std::move(out));
    auto xi = x.impl();
    return finish(impl, {&x}, [=](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        kern::mul_acc(self.grad.data(), keep->data(), xi->grad.data(), self.grad.size());
    });
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw TrainingError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    auto root = loss.impl();
    if (!root->backward_fn) {
        if (root->consumed) throw TrainingError("backward: graph already consumed by a prior backward");
        throw TrainingError("backward: loss was not produced by recorded operations");
    }
    // reverse post-order DFS over parents = valid topological order; the
    // order holds shared ownership so clearing parent lists below cannot
    // free a node whose backward_fn is still pending
    std::vector<ImplPtr> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<ImplPtr, std::size_t>> stack{{root, 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        // copy, not reference: emplace_back below may reallocate the stack
        auto [node, next] = stack.back();
        if (next < node->parents.size()) {
            ++stack.back().second;
            const ImplPtr& parent = node->parents[next];
            if (parent->backward_fn && seen.insert(parent.get()).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(std::move(node));
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl& node = **it;
        node.backward_fn(node);
        node.backward_fn = nullptr;
        node.parents.clear();
        node.consumed = true;
    }
}

}  // namespace tsimpute
