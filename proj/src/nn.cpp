#include "tsimpute/nn.hpp"

#include <cmath>

namespace tsimpute::nn {

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Shape shape, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    std::vector<double> data(numel(shape));
    for (double& v : data) v = u(rng);
    return Tensor(std::move(shape), std::move(data), true);
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, bool bias)
    : W(xavier_uniform(in, out, {in, out}, rng)), has_bias(bias) {
    if (bias) b = Tensor::zeros({out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, W);
    return has_bias ? add(y, b) : y;
}

void Linear::params(const std::string& prefix, ParamRefs& out) const {
    out.emplace_back(prefix + ".W", W);
    if (has_bias) out.emplace_back(prefix + ".b", b);
}

LayerNorm::LayerNorm(std::size_t d)
    : gain(Tensor({d}, std::vector<double>(d, 1.0), true)), bias(Tensor::zeros({d}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

void LayerNorm::params(const std::string& prefix, ParamRefs& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
}

Tensor positional_encoding(std::size_t steps, std::size_t d_model) {
    if (d_model % 2 != 0) {
        throw ConfigError("positional_encoding: d_model must be even, got " +
                          std::to_string(d_model));
    }
    std::vector<double> data(steps * d_model);
    for (std::size_t pos = 0; pos < steps; ++pos) {
        for (std::size_t i = 0; i < d_model / 2; ++i) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
            data[pos * d_model + 2 * i] = std::sin(angle);
            data[pos * d_model + 2 * i + 1] = std::cos(angle);
        }
    }
    return Tensor({steps, d_model}, std::move(data));
}

Tensor diagonal_mask(std::size_t T) {
    if (T < 2) {
        throw ConfigError("diagonal_mask: sequence length must be >= 2, got " + std::to_string(T));
    }
    std::vector<double> data(T * T, 0.0);
    for (std::size_t t = 0; t < T; ++t) data[t * T + t] = -1e9;
    return Tensor({T, T}, std::move(data));
}

AttentionOutput scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const Tensor* additive_mask) {
    const std::size_t d_k = q.shape().back();
    Tensor scores = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(d_k)));
    Tensor weights = softmax_lastaxis(scores, additive_mask);
    return {matmul(weights, v), weights};
}

MultiHeadAttention::MultiHeadAttention(std::size_t d_model, std::size_t heads, std::size_t d_k,
                                       std::size_t d_v, std::mt19937_64& rng)
    : heads(heads),
      d_k(d_k),
      d_v(d_v),
      w_q(d_model, heads * d_k, rng, false),
      w_k(d_model, heads * d_k, rng, false),
      w_v(d_model, heads * d_v, rng, false),
      w_o(heads * d_v, d_model, rng, false) {}

AttentionOutput MultiHeadAttention::forward(const Tensor& x, const Tensor* additive_mask) const {
    Tensor q = split_heads(w_q.forward(x), heads);
    Tensor k = split_heads(w_k.forward(x), heads);
    Tensor v = split_heads(w_v.forward(x), heads);
    AttentionOutput att = scaled_dot_attention(q, k, v, additive_mask);
    return {w_o.forward(merge_heads(att.values)), att.weights};
}

void MultiHeadAttention::params(const std::string& prefix, ParamRefs& out) const {
    w_q.params(prefix + ".w_q", out);
    w_k.params(prefix + ".w_k", out);
    w_v.params(prefix + ".w_v", out);
    w_o.params(prefix + ".w_o", out);
}

FeedForward::FeedForward(std::size_t d_model, std::size_t d_ffn, std::mt19937_64& rng)
    : w1(d_model, d_ffn, rng), w2(d_ffn, d_model, rng) {}

Tensor FeedForward::forward(const Tensor& x) const { return w2.forward(relu(w1.forward(x))); }

void FeedForward::params(const std::string& prefix, ParamRefs& out) const {
    w1.params(prefix + ".w1", out);
    w2.params(prefix + ".w2", out);
}

EncoderLayer::EncoderLayer(std::size_t d_model, std::size_t d_ffn, std::size_t heads,
                           std::size_t d_k, std::size_t d_v, std::mt19937_64& rng)
    : mha(d_model, heads, d_k, d_v, rng),
      ffn(d_model, d_ffn, rng),
      ln_attn(d_model),
      ln_ffn(d_model) {}

std::pair<Tensor, Tensor> EncoderLayer::forward(const Tensor& x, const Tensor* additive_mask,
                                                const ForwardCtx& ctx) const {
    if (ctx.dropout < 0.0 || ctx.dropout >= 1.0) {
        throw ConfigError("encoder_layer: dropout rate must lie in [0,1)");
    }
    AttentionOutput att = mha.forward(x, additive_mask);
    Tensor att_out = ctx.rng ? dropout(att.values, ctx.dropout, *ctx.rng, ctx.training)
                             : att.values;
    Tensor y = ln_attn.forward(add(x, att_out));
    Tensor ffn_out = ffn.forward(y);
    if (ctx.rng) ffn_out = dropout(ffn_out, ctx.dropout, *ctx.rng, ctx.training);
    return {ln_ffn.forward(add(y, ffn_out)), att.weights};
}

void EncoderLayer::params(const std::string& prefix, ParamRefs& out) const {
    mha.params(prefix + ".mha", out);
    ffn.params(prefix + ".ffn", out);
    ln_attn.params(prefix + ".ln_attn", out);
    ln_ffn.params(prefix + ".ln_ffn", out);
}

}  // namespace tsimpute::nn
