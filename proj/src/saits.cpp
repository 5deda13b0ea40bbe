#include "tsimpute/saits.hpp"

#include <algorithm>

namespace tsimpute {

namespace {

const std::vector<std::pair<Variant, const char*>>& variant_names() {
    static const std::vector<std::pair<Variant, const char*>> names{
        {Variant::saits, "saits"},
        {Variant::saits_no_diag, "saits_no_diag"},
        {Variant::saits_1block, "saits_1block"},
        {Variant::saits_r2, "saits_r2"},
        {Variant::saits_residual, "saits_residual"},
        {Variant::saits_3residual, "saits_3residual"},
        {Variant::saits_3cascade, "saits_3cascade"},
        {Variant::transformer, "transformer"},
        {Variant::transformer_ort_only, "transformer_ort_only"},
        {Variant::transformer_mit_only, "transformer_mit_only"},
    };
    return names;
}

}  // namespace

Variant variant_from_string(const std::string& name) {
    for (const auto& [v, n] : variant_names()) {
        if (name == n) return v;
    }
    throw ConfigError("unknown model variant: " + name);
}

std::string variant_to_string(Variant v) {
    for (const auto& [var, n] : variant_names()) {
        if (var == v) return n;
    }
    return "?";
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> vs = [] {
        std::vector<Variant> out;
        for (const auto& [v, n] : variant_names()) out.push_back(v);
        return out;
    }();
    return vs;
}

bool variant_uses_diag_mask(Variant v) {
    switch (v) {
        case Variant::saits_no_diag:
        case Variant::transformer:
        case Variant::transformer_ort_only:
        case Variant::transformer_mit_only:
            return false;
        default:
            return true;
    }
}

bool variant_uses_second_block(Variant v) {
    switch (v) {
        case Variant::saits_1block:
        case Variant::transformer:
        case Variant::transformer_ort_only:
        case Variant::transformer_mit_only:
            return false;
        default:
            return true;
    }
}

bool variant_uses_third_block(Variant v) {
    return v == Variant::saits_3residual || v == Variant::saits_3cascade;
}

bool variant_uses_ort(Variant v) { return v != Variant::transformer_mit_only; }

bool variant_uses_mit(Variant v) { return v != Variant::transformer_ort_only; }

void SaitsConfig::validate() const {
    if (T == 0 || D == 0 || n_layers == 0 || d_model == 0 || d_ffn == 0 || heads == 0 ||
        d_k == 0 || d_v == 0) {
        throw ConfigError("config: all dimensions must be positive");
    }
    if (d_model % 2 != 0) throw ConfigError("config: d_model must be even");
    if (mit_rate <= 0.0 || mit_rate >= 1.0) {
        throw ConfigError("config: mit_rate must lie in (0,1), got " + std::to_string(mit_rate));
    }
    if (lambda_mit < 0.0) throw ConfigError("config: lambda must be >= 0");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must lie in [0,1)");
    if (diag_mask_enabled() && T < 2) {
        throw ConfigError("config: diagonal masking needs T >= 2 (a single step would have an "
                          "all-masked attention row)");
    }
}

SaitsConfig SaitsConfig::base(std::size_t T, std::size_t D) {
    SaitsConfig c;
    c.T = T;
    c.D = D;
    c.n_layers = 2;
    c.d_model = 256;
    c.d_ffn = 128;
    c.heads = 4;
    c.d_k = 64;
    c.d_v = 64;
    c.dropout = 0.1;
    return c;
}

SaitsConfig SaitsConfig::tiny(std::size_t T, std::size_t D) {
    SaitsConfig c;
    c.T = T;
    c.D = D;
    c.n_layers = 1;
    c.d_model = 32;
    c.d_ffn = 32;
    c.heads = 2;
    c.d_k = 8;
    c.d_v = 8;
    c.dropout = 0.0;
    return c;
}

DmsaBlock SaitsModel::make_block(bool two_stage, std::mt19937_64& rng) const {
    DmsaBlock b;
    b.embed = nn::Linear(2 * cfg_.D, cfg_.d_model, rng);
    for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
        b.layers.emplace_back(cfg_.d_model, cfg_.d_ffn, cfg_.heads, cfg_.d_k, cfg_.d_v, rng);
    }
    b.red1 = nn::Linear(cfg_.d_model, cfg_.D, rng);
    b.two_stage = two_stage;
    if (two_stage) b.red2 = nn::Linear(cfg_.D, cfg_.D, rng);
    return b;
}

SaitsModel::SaitsModel(SaitsConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    pos_enc_ = nn::positional_encoding(cfg_.T, cfg_.d_model);
    if (cfg_.diag_mask_enabled()) diag_mask_ = nn::diagonal_mask(cfg_.T);
    blocks_.push_back(make_block(false, rng));
    if (variant_uses_second_block(cfg_.variant)) blocks_.push_back(make_block(true, rng));
    if (variant_uses_third_block(cfg_.variant)) blocks_.push_back(make_block(true, rng));
    const bool combines = cfg_.variant == Variant::saits || cfg_.variant == Variant::saits_no_diag ||
                          cfg_.variant == Variant::saits_3cascade;
    if (combines) eta1_ = nn::Linear(cfg_.T + cfg_.D, cfg_.D, rng);
    if (cfg_.variant == Variant::saits_3cascade) eta2_ = nn::Linear(cfg_.T + cfg_.D, cfg_.D, rng);
}

DmsaBlock::Out SaitsModel::run_block(std::size_t index, const Tensor& x, const Tensor& m_hat,
                                     const nn::ForwardCtx& ctx) const {
    const DmsaBlock& block = blocks_.at(index);
    Tensor e = add(block.embed.forward(concat_lastaxis(x, m_hat)), pos_enc_);
    if (ctx.rng) e = dropout(e, ctx.dropout, *ctx.rng, ctx.training);
    const Tensor* mask = diag_mask_.defined() ? &diag_mask_ : nullptr;
    Tensor weights;
    for (const auto& layer : block.layers) {
        auto [out, w] = layer.forward(e, mask, ctx);
        e = out;
        weights = w;
    }
    Tensor rep = block.red1.forward(e);
    if (block.two_stage) rep = block.red2.forward(relu(rep));
    return {rep, weights};
}

Tensor SaitsModel::replace_missing(const Tensor& x_hat, const Tensor& m_hat,
                                   const Tensor& fill) const {
    Tensor ones = Tensor::full(m_hat.shape(), 1.0);
    return add(mul(m_hat, x_hat), mul(sub(ones, m_hat), fill));
}

SaitsModel::Combined SaitsModel::combine(const Tensor& rep1, const Tensor& rep2,
                                         const Tensor& head_weights, const Tensor& m_hat,
                                         const nn::Linear& eta_lin) const {
    Tensor attn_avg = mean_heads(head_weights);  // (B,T,T)
    Tensor eta = sigmoid(eta_lin.forward(concat_lastaxis(attn_avg, m_hat)));
    Tensor ones = Tensor::full(eta.shape(), 1.0);
    Tensor x3 = add(mul(sub(ones, eta), rep1), mul(eta, rep2));
    return {x3, eta, attn_avg};
}

ForwardOutput SaitsModel::forward(const Tensor& x_hat, const Tensor& m_hat,
                                  const nn::ForwardCtx& ctx) const {
    if (x_hat.shape().size() != 3 || x_hat.shape()[1] != cfg_.T || x_hat.shape()[2] != cfg_.D ||
        x_hat.shape() != m_hat.shape()) {
        throw ShapeError("saits: expected inputs of shape (B," + std::to_string(cfg_.T) + "," +
                         std::to_string(cfg_.D) + "), got x " + shape_str(x_hat.shape()) +
                         ", mask " + shape_str(m_hat.shape()));
    }

    ForwardOutput out;
    auto [rep1, w1] = run_block(0, x_hat, m_hat, ctx);

    switch (cfg_.variant) {
        case Variant::transformer:
        case Variant::transformer_ort_only:
        case Variant::transformer_mit_only:
        case Variant::saits_1block:
            out.representations = {rep1};
            out.x_final = rep1;
            break;

        case Variant::saits:
        case Variant::saits_no_diag: {
            Tensor x_prime = replace_missing(x_hat, m_hat, rep1);
            auto [rep2, w2] = run_block(1, x_prime, m_hat, ctx);
            Combined c = combine(rep1, rep2, w2, m_hat, eta1_);
            out.representations = {rep1, rep2, c.x3};
            out.x_final = c.x3;
            out.eta = c.eta;
            out.attn_avg = c.attn_avg;
            break;
        }

        case Variant::saits_r2: {
            Tensor x_prime = replace_missing(x_hat, m_hat, rep1);
            auto [rep2, w2] = run_block(1, x_prime, m_hat, ctx);
            out.representations = {rep2};
            out.x_final = rep2;
            out.attn_avg = mean_heads(w2);
            break;
        }

        case Variant::saits_residual: {
            Tensor x_prime = replace_missing(x_hat, m_hat, rep1);
            auto [rep2, w2] = run_block(1, x_prime, m_hat, ctx);
            Tensor x3 = add(rep1, rep2);
            out.representations = {rep1, rep2, x3};
            out.x_final = x3;
            out.attn_avg = mean_heads(w2);
            break;
        }

        case Variant::saits_3residual: {
            Tensor in2 = replace_missing(x_hat, m_hat, rep1);
            auto [rep2, w2] = run_block(1, in2, m_hat, ctx);
            Tensor in3 = replace_missing(x_hat, m_hat, rep2);
            auto [rep3, w3] = run_block(2, in3, m_hat, ctx);
            Tensor final3 = add(add(rep1, rep2), rep3);
            out.representations = {rep1, rep2, rep3, final3};
            out.x_final = final3;
            out.attn_avg = mean_heads(w3);
            break;
        }

        case Variant::saits_3cascade: {
            Tensor in2 = replace_missing(x_hat, m_hat, rep1);
            auto [rep2, w2] = run_block(1, in2, m_hat, ctx);
            Combined first = combine(rep1, rep2, w2, m_hat, eta1_);
            Tensor in3 = replace_missing(x_hat, m_hat, first.x3);
            auto [rep4, w3] = run_block(2, in3, m_hat, ctx);
            Combined second = combine(first.x3, rep4, w3, m_hat, eta2_);
            out.representations = {rep1, rep2, first.x3, rep4, second.x3};
            out.x_final = second.x3;
            out.eta = second.eta;
            out.attn_avg = second.attn_avg;
            break;
        }
    }

    out.x_completed = replace_missing(x_hat, m_hat, out.x_final);
    return out;
}

Tensor SaitsModel::impute(const Tensor& x_hat, const Tensor& m_hat) const {
    NoGradGuard ng;
    return forward(x_hat, m_hat).x_completed;
}

nn::ParamRefs SaitsModel::parameters() const {
    nn::ParamRefs out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string prefix = "block" + std::to_string(i + 1);
        const DmsaBlock& b = blocks_[i];
        b.embed.params(prefix + ".embed", out);
        for (std::size_t l = 0; l < b.layers.size(); ++l) {
            b.layers[l].params(prefix + ".layer" + std::to_string(l + 1), out);
        }
        b.red1.params(prefix + ".red1", out);
        if (b.two_stage) b.red2.params(prefix + ".red2", out);
    }
    if (eta1_.W.defined()) eta1_.params("combine1.eta", out);
    if (eta2_.W.defined()) eta2_.params("combine2.eta", out);
    return out;
}

std::size_t SaitsModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.size();
    return n;
}

LossOutput joint_loss(const ForwardOutput& out, const Tensor& x_original, const Tensor& m_hat,
                      const Tensor& indicating, double lambda, Variant variant) {
    const bool use_ort = variant_uses_ort(variant);
    const bool use_mit = variant_uses_mit(variant);

    LossOutput loss;
    if (use_ort) {
        Tensor acc;
        for (const Tensor& rep : out.representations) {
            Tensor term = masked_mae(rep, x_original, m_hat);
            acc = acc.defined() ? add(acc, term) : term;
        }
        loss.ort = scale(acc, 1.0 / static_cast<double>(out.representations.size()));
    } else {
        loss.ort = Tensor::scalar(0.0);
    }
    if (use_mit) {
        loss.mit = masked_mae(out.x_completed, x_original, indicating);
    } else {
        loss.mit = Tensor::scalar(0.0);
    }

    if (use_ort && use_mit) {
        loss.total = lambda != 0.0 ? add(loss.ort, scale(loss.mit, lambda)) : loss.ort;
    } else if (use_ort) {
        loss.total = loss.ort;
    } else {
        loss.total = lambda != 1.0 ? scale(loss.mit, lambda) : loss.mit;
    }
    return loss;
}

}  // namespace tsimpute
