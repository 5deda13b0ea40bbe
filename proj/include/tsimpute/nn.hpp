#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tsimpute/tensor.hpp"

namespace tsimpute::nn {

using ParamRefs = std::vector<std::pair<std::string, Tensor>>;

// Xavier-uniform weights, zero biases.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Shape shape, std::mt19937_64& rng);

struct ForwardCtx {
    bool training = false;
    double dropout = 0.0;
    std::mt19937_64* rng = nullptr;
};

struct Linear {
    Tensor W;  // (in, out)
    Tensor b;  // (out), absent when bias disabled
    bool has_bias = true;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, bool bias = true);
    Tensor forward(const Tensor& x) const;
    void params(const std::string& prefix, ParamRefs& out) const;
};

struct LayerNorm {
    Tensor gain, bias;
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t d);
    Tensor forward(const Tensor& x) const;
    void params(const std::string& prefix, ParamRefs& out) const;
};

// sinusoidal table, shape (T, d_model); d_model must be even
Tensor positional_encoding(std::size_t steps, std::size_t d_model);

// additive (T,T) mask with -1e9 on the diagonal; requires T >= 2
Tensor diagonal_mask(std::size_t T);

struct AttentionOutput {
    Tensor values;   // (B,T,d_model)
    Tensor weights;  // (B,h,T,T)
};

// scaled dot-product attention over pre-projected heads
AttentionOutput scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const Tensor* additive_mask);

struct MultiHeadAttention {
    std::size_t heads = 0, d_k = 0, d_v = 0;
    Linear w_q, w_k, w_v, w_o;  // projections carry no bias

    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t d_model, std::size_t heads, std::size_t d_k, std::size_t d_v,
                       std::mt19937_64& rng);
    AttentionOutput forward(const Tensor& x, const Tensor* additive_mask) const;
    void params(const std::string& prefix, ParamRefs& out) const;
};

struct FeedForward {
    Linear w1, w2;

    FeedForward() = default;
    FeedForward(std::size_t d_model, std::size_t d_ffn, std::mt19937_64& rng);
    Tensor forward(const Tensor& x) const;
    void params(const std::string& prefix, ParamRefs& out) const;
};

// post-norm composition: LN(x + Drop(MHA(x))), then LN(y + Drop(FFN(y)))
struct EncoderLayer {
    MultiHeadAttention mha;
    FeedForward ffn;
    LayerNorm ln_attn, ln_ffn;

    EncoderLayer() = default;
    EncoderLayer(std::size_t d_model, std::size_t d_ffn, std::size_t heads, std::size_t d_k,
                 std::size_t d_v, std::mt19937_64& rng);
    std::pair<Tensor, Tensor> forward(const Tensor& x, const Tensor* additive_mask,
                                      const ForwardCtx& ctx) const;  // (out, attn weights)
    void params(const std::string& prefix, ParamRefs& out) const;
};

}  // namespace tsimpute::nn
