#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsimpute/nn.hpp"
#include "tsimpute/tensor.hpp"

namespace tsimpute {

enum class Variant {
    saits,
    saits_no_diag,
    saits_1block,
    saits_r2,
    saits_residual,
    saits_3residual,
    saits_3cascade,
    transformer,
    transformer_ort_only,
    transformer_mit_only,
};

Variant variant_from_string(const std::string& name);
std::string variant_to_string(Variant v);
const std::vector<Variant>& all_variants();

bool variant_uses_diag_mask(Variant v);
bool variant_uses_second_block(Variant v);
bool variant_uses_third_block(Variant v);
bool variant_uses_ort(Variant v);
bool variant_uses_mit(Variant v);

struct SaitsConfig {
    std::size_t T = 0, D = 0;
    std::size_t n_layers = 2;
    std::size_t d_model = 256, d_ffn = 128;
    std::size_t heads = 4, d_k = 64, d_v = 64;
    double dropout = 0.1;
    double lambda_mit = 1.0;
    double mit_rate = 0.2;
    Variant variant = Variant::saits;

    void validate() const;
    bool diag_mask_enabled() const { return variant_uses_diag_mask(variant); }

    // fixed presets
    static SaitsConfig base(std::size_t T, std::size_t D);  // N=2, d_model=256, d_ffn=128, h=4
    static SaitsConfig tiny(std::size_t T, std::size_t D);  // desk-scale acceptance config
};

struct ForwardOutput {
    // representations entering the reconstruction loss, final one last
    std::vector<Tensor> representations;
    Tensor x_final;      // representation used to fill missing positions
    Tensor x_completed;  // observed values copied, missing filled from x_final
    Tensor eta;          // combining weights, defined only for combining variants
    Tensor attn_avg;     // head-averaged attention map of the last consumed layer
};

struct LossOutput {
    Tensor total, ort, mit;
};

// One DMSA block: input embedding, N encoder layers, output reduction.
struct DmsaBlock {
    nn::Linear embed;  // 2D -> d_model
    std::vector<nn::EncoderLayer> layers;
    nn::Linear red1;  // d_model -> D
    nn::Linear red2;  // D -> D, present only for the two-stage reduction
    bool two_stage = false;

    struct Out {
        Tensor representation;
        Tensor last_weights;  // (B,h,T,T)
    };
};

class SaitsModel {
public:
    SaitsModel(SaitsConfig cfg, std::uint64_t seed);

    const SaitsConfig& config() const { return cfg_; }

    ForwardOutput forward(const Tensor& x_hat, const Tensor& m_hat,
                          const nn::ForwardCtx& ctx = {}) const;

    // no-grad forward returning the completed series
    Tensor impute(const Tensor& x_hat, const Tensor& m_hat) const;

    nn::ParamRefs parameters() const;
    std::size_t parameter_count() const;

    // exposed for tests
    DmsaBlock::Out run_block(std::size_t index, const Tensor& x, const Tensor& m_hat,
                             const nn::ForwardCtx& ctx) const;
    Tensor replace_missing(const Tensor& x_hat, const Tensor& m_hat, const Tensor& fill) const;
    std::size_t block_count() const { return blocks_.size(); }

private:
    struct Combined {
        Tensor x3, eta, attn_avg;
    };
    Combined combine(const Tensor& rep1, const Tensor& rep2, const Tensor& head_weights,
                     const Tensor& m_hat, const nn::Linear& eta_lin) const;
    DmsaBlock make_block(bool two_stage, std::mt19937_64& rng) const;

    SaitsConfig cfg_;
    Tensor pos_enc_;    // (T, d_model)
    Tensor diag_mask_;  // (T, T), defined only when the variant masks the diagonal
    std::vector<DmsaBlock> blocks_;
    nn::Linear eta1_, eta2_;  // (T+D) -> D combining projections
};

LossOutput joint_loss(const ForwardOutput& out, const Tensor& x_original, const Tensor& m_hat,
                      const Tensor& indicating, double lambda, Variant variant);

}  // namespace tsimpute
