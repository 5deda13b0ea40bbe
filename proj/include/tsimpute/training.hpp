#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tsimpute/data.hpp"
#include "tsimpute/saits.hpp"

namespace tsimpute::training {

struct MitMask {
    Tensor x_hat, m_hat, indicating;
};

// artificially masks round(rate * #observed) observed entries, uniformly
// without replacement; at least one when rate > 0
MitMask apply_mit_mask(const Tensor& x, const Tensor& m, double rate, std::mt19937_64& rng);

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(const nn::ParamRefs& params);  // reads grads, updates data in place
    std::size_t steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct TrainOptions {
    double lr = 1e-3;
    std::size_t batch_size = 128;
    std::size_t patience = 30;
    std::size_t max_epochs = 10000;
    std::uint64_t seed = 0;
    bool quiet = true;
};

struct CurvePoint {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_imputation_mae = 0.0;
    double val_reconstruction_mae = 0.0;
};

struct TrainResult {
    std::shared_ptr<SaitsModel> model;  // parameters restored to the best epoch
    std::vector<CurvePoint> curve;
    std::size_t best_epoch = 0;
    double best_val_imputation_mae = 0.0;
    bool diverged = false;
};

TrainResult train_model(const SaitsConfig& cfg, const data::ImputationDataset& ds,
                        const TrainOptions& opts);

// validation-split metrics of a trained model (imputation on holdout,
// reconstruction on observed positions)
std::pair<double, double> validate_model(const SaitsModel& model, const data::SplitArrays& split);

// imputes a whole split in batches (no-grad)
std::vector<double> impute_split(const SaitsModel& model, const data::SplitArrays& split,
                                 std::size_t batch_size = 128);

void write_curves_csv(const std::string& path, const std::vector<CurvePoint>& curve);

void save_checkpoint(const SaitsModel& model, const std::string& path,
                     const std::string& rng_state = "");
struct LoadedCheckpoint {
    std::shared_ptr<SaitsModel> model;
    std::string rng_state;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace tsimpute::training
