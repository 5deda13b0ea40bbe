#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsimpute/data.hpp"

namespace tsimpute::evaluate {

struct Metrics {
    double mae = 0.0, rmse = 0.0, mre = 0.0, mse = 0.0;
    bool mre_defined = true;
    std::size_t count = 0;
};

// errors restricted to mask==1 positions; MRE flagged undefined when the
// masked target magnitude sums to zero
Metrics compute_metrics(std::span<const double> estimation, std::span<const double> target,
                        std::span<const double> mask);

// observed training median per feature (mean-of-middle for even counts)
std::vector<double> feature_medians(const data::SplitArrays& train);

// full imputed copies of a split's X (observed entries intact)
std::vector<double> impute_median(const std::vector<double>& medians,
                                  const data::SplitArrays& split);
std::vector<double> impute_last(const data::SplitArrays& split);

struct EvalReport {
    std::string method;
    std::string split;
    Metrics standardized;
    Metrics original_units;
    std::size_t positions = 0;
};

EvalReport evaluate_imputed(const data::SplitArrays& split, const data::Standardizer& stats,
                            const std::vector<double>& imputed, const std::string& method,
                            const std::string& split_name);

void write_reports_csv(const std::string& path, const std::vector<EvalReport>& reports);
void write_reports_json(const std::string& path, const std::vector<EvalReport>& reports,
                        const nlohmann::json& config_echo);

}  // namespace tsimpute::evaluate
