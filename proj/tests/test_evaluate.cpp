#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tsimpute/evaluate.hpp"

using namespace tsimpute;
using evaluate::Metrics;

TEST_CASE("metric examples") {
    std::vector<double> est = {1, 2, 3}, tgt = {1, 2, 3}, mask = {1, 1, 1};
    Metrics m = evaluate::compute_metrics(est, tgt, mask);
    CHECK(m.mae == 0.0);
    CHECK(m.rmse == 0.0);
    CHECK(m.mse == 0.0);
    CHECK(m.mre == 0.0);
    CHECK(m.count == 3);

    std::vector<double> e2 = {2, 0}, t2 = {0, 0}, k2 = {1, 0};
    Metrics s = evaluate::compute_metrics(e2, t2, k2);
    CHECK(s.mae == 2.0);
    CHECK(s.rmse == 2.0);
    CHECK(s.mse == 4.0);
    CHECK_FALSE(s.mre_defined);
    CHECK(s.count == 1);

    std::vector<double> zero_mask = {0, 0};
    CHECK_THROWS_AS(evaluate::compute_metrics(e2, t2, zero_mask), DataError);
}

TEST_CASE("metrics match a brute-force oracle on a random batch") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-5, 5);
    std::vector<double> est(100), tgt(100), mask(100);
    for (std::size_t i = 0; i < 100; ++i) {
        est[i] = u(rng);
        tgt[i] = u(rng);
        mask[i] = (i % 3 == 0) ? 0.0 : 1.0;
    }
    Metrics m = evaluate::compute_metrics(est, tgt, mask);

    double abs_sum = 0, sq_sum = 0, tgt_sum = 0, n = 0;
    for (std::size_t i = 0; i < 100; ++i)
        if (mask[i] != 0.0) {
            abs_sum += std::abs(est[i] - tgt[i]);
            sq_sum += (est[i] - tgt[i]) * (est[i] - tgt[i]);
            tgt_sum += std::abs(tgt[i]);
            n += 1;
        }
    CHECK(m.mae == doctest::Approx(abs_sum / n).epsilon(1e-12));
    CHECK(m.mse == doctest::Approx(sq_sum / n).epsilon(1e-12));
    CHECK(m.rmse == doctest::Approx(std::sqrt(sq_sum / n)).epsilon(1e-12));
    CHECK(m.mre == doctest::Approx(abs_sum / tgt_sum).epsilon(1e-12));
    CHECK(m.rmse >= m.mae);
}

TEST_CASE("adding error mass never decreases the error metrics") {
    std::vector<double> est = {1, 1, 1, 1}, tgt = {1, 1, 1, 1}, mask = {1, 1, 1, 1};
    Metrics before = evaluate::compute_metrics(est, tgt, mask);
    est[2] = 4.0;
    Metrics after = evaluate::compute_metrics(est, tgt, mask);
    CHECK(after.mae >= before.mae);
    CHECK(after.rmse >= before.rmse);
    CHECK(after.mse >= before.mse);
}

TEST_CASE("feature medians follow the mean-of-middle convention") {
    data::SplitArrays train;
    train.n = 1;
    train.T = 3;
    train.D = 2;
    // feature 0 observed: {1, 2, 100}; feature 1 observed: {1, 3}
    train.X = {1, 1, 2, 3, 100, 0};
    train.M = {1, 1, 1, 1, 1, 0};
    std::vector<double> med = evaluate::feature_medians(train);
    CHECK(med[0] == 2.0);
    CHECK(med[1] == 2.0);

    data::SplitArrays unobserved = train;
    unobserved.M = {1, 0, 1, 0, 1, 0};
    CHECK_THROWS_AS(evaluate::feature_medians(unobserved), DataError);
}

TEST_CASE("median imputation fills only missing positions") {
    data::SplitArrays split;
    split.n = 1;
    split.T = 3;
    split.D = 1;
    split.X = {5, 0, 7};
    split.M = {1, 0, 1};
    std::vector<double> filled = evaluate::impute_median({2.5}, split);
    CHECK(filled[0] == 5.0);
    CHECK(filled[1] == 2.5);
    CHECK(filled[2] == 7.0);

    split.M = {1, 1, 1};
    split.X = {5, 6, 7};
    std::vector<double> same = evaluate::impute_median({2.5}, split);
    CHECK(same == split.X);
}

TEST_CASE("last-observation imputation forward fills with a zero head") {
    data::SplitArrays split;
    split.n = 1;
    split.T = 4;
    split.D = 1;
    split.X = {0, 5, 0, 0};
    split.M = {0, 1, 0, 0};
    std::vector<double> filled = evaluate::impute_last(split);
    CHECK(filled == std::vector<double>{0, 5, 5, 5});

    split.X = {1, 2, 3, 4};
    split.M = {1, 1, 1, 1};
    CHECK(evaluate::impute_last(split) == split.X);

    split.X = {0, 0, 0, 0};
    split.M = {0, 0, 0, 0};
    CHECK(evaluate::impute_last(split) == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("reports carry both unit systems and exact position counts") {
    data::SplitArrays split;
    split.n = 1;
    split.T = 2;
    split.D = 1;
    split.X = {1.0, 0.0};
    split.M = {1, 0};
    split.X_holdout = {0.0, 2.0};
    split.M_holdout = {0, 1};
    split.has_holdout = true;
    data::Standardizer stats;
    stats.mean = {10.0};
    stats.stdev = {4.0};

    std::vector<double> imputed = {1.0, 2.5};
    evaluate::EvalReport rep = evaluate::evaluate_imputed(split, stats, imputed, "test", "val");
    CHECK(rep.positions == 1);
    CHECK(rep.standardized.mae == doctest::Approx(0.5).epsilon(1e-12));
    // original units scale the error by the feature's standard deviation
    CHECK(rep.original_units.mae == doctest::Approx(2.0).epsilon(1e-12));

    evaluate::EvalReport rep2 = evaluate::evaluate_imputed(split, stats, imputed, "other", "val");
    CHECK(rep2.standardized.mae == rep.standardized.mae);
    CHECK(rep2.original_units.rmse == rep.original_units.rmse);

    data::SplitArrays no_holdout = split;
    no_holdout.has_holdout = false;
    CHECK_THROWS_AS(evaluate::evaluate_imputed(no_holdout, stats, imputed, "x", "val"),
                    DataError);
}
