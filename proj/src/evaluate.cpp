#include "tsimpute/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace tsimpute::evaluate {

Metrics compute_metrics(std::span<const double> estimation, std::span<const double> target,
                        std::span<const double> mask) {
    if (estimation.size() != target.size() || estimation.size() != mask.size()) {
        throw ShapeError("metrics: input lengths disagree");
    }
    Metrics m;
    double abs_err = 0.0, sq_err = 0.0, abs_tgt = 0.0, msum = 0.0;
    for (std::size_t i = 0; i < estimation.size(); ++i) {
        if (mask[i] == 0.0) continue;
        const double err = (estimation[i] - target[i]) * mask[i];
        abs_err += std::abs(err);
        sq_err += err * err;
        abs_tgt += std::abs(target[i] * mask[i]);
        msum += mask[i];
        ++m.count;
    }
    if (msum <= 0.0) throw DataError("metrics: mask selects no positions");
    m.mae = abs_err / msum;
    m.mse = sq_err / msum;
    m.rmse = std::sqrt(m.mse);
    if (abs_tgt > 0.0) {
        m.mre = abs_err / abs_tgt;
    } else {
        m.mre_defined = false;
        m.mre = 0.0;
    }
    return m;
}

std::vector<double> feature_medians(const data::SplitArrays& train) {
    const std::size_t D = train.D;
    std::vector<std::vector<double>> per_feature(D);
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.M[i] == 1.0) per_feature[i % D].push_back(train.X[i]);
    }
    std::vector<double> medians(D);
    for (std::size_t d = 0; d < D; ++d) {
        auto& v = per_feature[d];
        if (v.empty()) {
            throw DataError("median baseline: feature " + std::to_string(d) +
                            " has no observed training values");
        }
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        medians[d] = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    return medians;
}

std::vector<double> impute_median(const std::vector<double>& medians,
                                  const data::SplitArrays& split) {
    std::vector<double> out = split.X;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (split.M[i] == 0.0) out[i] = medians[i % split.D];
    }
    return out;
}

std::vector<double> impute_last(const data::SplitArrays& split) {
    std::vector<double> out = split.X;
    for (std::size_t s = 0; s < split.n; ++s) {
        for (std::size_t d = 0; d < split.D; ++d) {
            double last = 0.0;  // 0 when no previous observation exists
            for (std::size_t t = 0; t < split.T; ++t) {
                const std::size_t i = (s * split.T + t) * split.D + d;
                if (split.M[i] == 1.0) {
                    last = split.X[i];
                } else {
                    out[i] = last;
                }
            }
        }
    }
    return out;
}

EvalReport evaluate_imputed(const data::SplitArrays& split, const data::Standardizer& stats,
                            const std::vector<double>& imputed, const std::string& method,
                            const std::string& split_name) {
    if (!split.has_holdout) {
        throw DataError("evaluate: split '" + split_name + "' has no holdout masks");
    }
    if (imputed.size() != split.size()) {
        throw ShapeError("evaluate: imputed length does not match split");
    }
    EvalReport r;
    r.method = method;
    r.split = split_name;
    r.standardized = compute_metrics(imputed, split.X_holdout, split.M_holdout);
    r.positions = r.standardized.count;

    std::vector<double> est_orig(imputed.size(), 0.0), tgt_orig(imputed.size(), 0.0);
    for (std::size_t i = 0; i < imputed.size(); ++i) {
        if (split.M_holdout[i] == 1.0) {
            const std::size_t d = i % split.D;
            est_orig[i] = stats.to_original(imputed[i], d);
            tgt_orig[i] = stats.to_original(split.X_holdout[i], d);
        }
    }
    r.original_units = compute_metrics(est_orig, tgt_orig, split.M_holdout);
    return r;
}

void write_reports_csv(const std::string& path, const std::vector<EvalReport>& reports) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write report: " + path);
    os << "method,split,units,mae,rmse,mre,mse,positions\n";
    auto row = [&](const EvalReport& r, const char* units, const Metrics& m) {
        os << r.method << ',' << r.split << ',' << units << ',' << m.mae << ',' << m.rmse << ','
           << (m.mre_defined ? std::to_string(m.mre) : std::string("undefined")) << ',' << m.mse
           << ',' << m.count << '\n';
    };
    for (const EvalReport& r : reports) {
        row(r, "standardized", r.standardized);
        row(r, "original", r.original_units);
    }
}

void write_reports_json(const std::string& path, const std::vector<EvalReport>& reports,
                        const nlohmann::json& config_echo) {
    nlohmann::json j;
    j["config"] = config_echo;
    auto arr = nlohmann::json::array();
    auto metrics_json = [](const Metrics& m) {
        nlohmann::json mj{{"mae", m.mae}, {"rmse", m.rmse}, {"mse", m.mse}, {"count", m.count}};
        if (m.mre_defined) {
            mj["mre"] = m.mre;
        } else {
            mj["mre"] = nullptr;
        }
        return mj;
    };
    for (const EvalReport& r : reports) {
        arr.push_back({{"method", r.method},
                       {"split", r.split},
                       {"standardized", metrics_json(r.standardized)},
                       {"original_units", metrics_json(r.original_units)},
                       {"positions", r.positions}});
    }
    j["reports"] = arr;
    std::ofstream os(path);
    if (!os) throw DataError("cannot write report: " + path);
    os << j.dump(2) << '\n';
}

}  // namespace tsimpute::evaluate
