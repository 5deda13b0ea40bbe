#pragma once

#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "tsimpute/common.hpp"

namespace tsimpute {

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily, same length as data
    bool requires_grad = false;
    bool consumed = false;  // set once backward has freed this node

    // tape node; empty for leaves
    std::vector<ImplPtr> parents;
    std::function<void(TensorImpl&)> backward_fn;

    void ensure_grad();
};

// Dense row-major f64 tensor with reverse-mode autodiff. Copies share the
// underlying buffer; all ops allocate fresh outputs.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t size() const { return impl_->data.size(); }
    std::span<const double> data() const { return impl_->data; }
    std::span<double> raw_data() { return impl_->data; }  // leaf/optimizer use only
    double item() const;
    double at(std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const;
    void zero_grad();

    ImplPtr impl() const { return impl_; }
    explicit Tensor(ImplPtr impl) : impl_(std::move(impl)) {}

private:
    ImplPtr impl_;
};

// Recording toggle; ops executed while disabled never build tape nodes.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

// elementwise with NumPy-style trailing broadcast (extent equal or 1)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// batched matrix product: a[...,m,k] x b[...,k,n]; b may be rank-2 and is
// then shared across all batch slices
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

Tensor concat_lastaxis(const Tensor& a, const Tensor& b);

// softmax over the last axis of (x + additive_mask); the mask broadcasts
// across leading axes and takes no gradient
Tensor softmax_lastaxis(const Tensor& x, const Tensor* additive_mask = nullptr);

// sum(|(est - tgt) .* mask|) / sum(mask); throws DataError on empty mask
Tensor masked_mae(const Tensor& est, const Tensor& tgt, const Tensor& mask);

Tensor sum_all(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// (B,T,h*d) <-> (B,h,T,d)
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);
// (B,h,T,T) -> (B,T,T), averaged over the head axis
Tensor mean_heads(const Tensor& x);

// normalization over the last axis, then affine by gain/bias (shape [d])
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// inverted dropout: scales kept lanes by 1/(1-p) while training
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training);

void backward(const Tensor& loss);

}  // namespace tsimpute
