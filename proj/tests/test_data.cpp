#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "tsimpute/data.hpp"
#include "tsimpute/evaluate.hpp"

using namespace tsimpute;

namespace {

std::string write_temp(const char* name, const std::string& content) {
    std::string path = std::string("/tmp/tsimpute_data_") + name;
    std::ofstream(path) << content;
    return path;
}

}  // namespace

TEST_CASE("csv ingestion marks empty cells missing") {
    std::string path = write_temp("basic.csv", "a,b\n1,\n2,3\n");
    auto series = data::ingest_csv(path);
    REQUIRE(series.size() == 1);
    const data::RawSeries& s = series[0];
    CHECK(s.rows() == 2);
    CHECK(s.cols == 2);
    CHECK(s.features == std::vector<std::string>{"a", "b"});
    CHECK(s.observed[0] == 1);
    CHECK(s.observed[1] == 0);  // (0, b) missing
    CHECK(s.values[1] == 0.0);
    CHECK(s.values[2] == 2.0);
    CHECK(s.values[3] == 3.0);
    std::remove(path.c_str());
}

TEST_CASE("csv ingestion honours declared NA tokens and rejects bad files") {
    std::string path = write_temp("na.csv", "a,b\nNaN,1\n2,3\n");
    data::CsvOptions opts;
    opts.na_tokens = {"", "NaN"};
    auto series = data::ingest_csv(path, opts);
    CHECK(series[0].observed[0] == 0);
    std::remove(path.c_str());

    std::string empty = write_temp("empty.csv", "");
    CHECK_THROWS_AS(data::ingest_csv(empty), DataError);
    std::remove(empty.c_str());

    std::string ragged = write_temp("ragged.csv", "a,b\n1,2\n3\n");
    CHECK_THROWS_AS(data::ingest_csv(ragged), DataError);
    std::remove(ragged.c_str());

    std::string junk = write_temp("junk.csv", "a,b\n1,fish\n");
    CHECK_THROWS_AS(data::ingest_csv(junk), DataError);
    std::remove(junk.c_str());
}

TEST_CASE("window counts follow the stride formula") {
    data::RawSeries s;
    s.cols = 1;
    s.features = {"f"};
    auto fill = [&](std::size_t len) {
        s.values.assign(len, 1.0);
        s.observed.assign(len, 1);
    };

    fill(100);
    CHECK(data::window(s, 100, 1).n == 1);
    fill(48);
    CHECK(data::window(s, 24, 12).n == 3);
    fill(24);
    data::SplitArrays w = data::window(s, 24, 24);
    CHECK(w.n == 1);
    CHECK(w.T == 24);

    fill(10);
    CHECK_THROWS_AS(data::window(s, 24, 1), DataError);
    CHECK_THROWS_AS(data::window(s, 5, 0), DataError);
}

TEST_CASE("standardization uses observed training values only and round trips") {
    data::ImputationDataset ds;
    ds.T = 2;
    ds.D = 2;
    ds.train.n = 2;
    ds.train.T = 2;
    ds.train.D = 2;
    // feature 0 observed values: 1, 3, 5; feature 1: 10, 20 (one missing each)
    ds.train.X = {1, 10, 3, 0, 5, 20, 0, 0};
    ds.train.M = {1, 1, 1, 0, 1, 1, 0, 1};
    ds.train.X[7] = 30;  // last feature-1 value observed
    ds.val = ds.train;
    ds.test = ds.train;

    data::ImputationDataset copy = ds;
    data::standardize_fit_transform(copy);
    // feature 0: mean 3, std of {1,3,5}
    CHECK(copy.stats.mean[0] == doctest::Approx(3.0).epsilon(1e-12));
    const double sd0 = std::sqrt(((1 - 3.) * (1 - 3.) + 0 + (5 - 3.) * (5 - 3.)) / 3.0);
    CHECK(copy.stats.stdev[0] == doctest::Approx(sd0).epsilon(1e-10));

    // observed train values have zero mean and unit variance after transform
    double sum = 0, cnt = 0;
    for (std::size_t i = 0; i < copy.train.X.size(); i += 2)
        if (copy.train.M[i] != 0.0) {
            sum += copy.train.X[i];
            cnt += 1;
        }
    CHECK(std::abs(sum / cnt) < 1e-9);

    // round trip
    for (std::size_t i = 0; i < copy.train.X.size(); ++i)
        if (copy.train.M[i] != 0.0) {
            const std::size_t d = i % 2;
            CHECK(copy.stats.to_original(copy.train.X[i], d) ==
                  doctest::Approx(ds.train.X[i]).epsilon(1e-10));
        }
}

TEST_CASE("constant training feature raises a zero-variance error") {
    data::ImputationDataset ds;
    ds.T = 2;
    ds.D = 1;
    ds.train.n = 2;
    ds.train.T = 2;
    ds.train.D = 1;
    ds.train.X = {4, 4, 4, 4};
    ds.train.M = {1, 1, 1, 1};
    ds.val = ds.train;
    ds.test = ds.train;
    CHECK_THROWS_AS(data::standardize_fit_transform(ds), DataError);
}

TEST_CASE("hole punching moves exact counts and partitions the mask") {
    data::SplitArrays split;
    split.n = 10;
    split.T = 10;
    split.D = 10;
    split.X.assign(1000, 0.0);
    split.M.assign(1000, 1.0);
    std::mt19937_64 seedgen(4);
    for (std::size_t i = 0; i < 1000; ++i) split.X[i] = double(i) + 0.5;
    data::SplitArrays orig = split;

    std::mt19937_64 rng(4);
    data::punch_eval_holes(split, 0.10, rng);
    REQUIRE(split.has_holdout);
    double holes = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        holes += split.M_holdout[i];
        CHECK(split.M_holdout[i] * split.M[i] == 0.0);
        if (split.M_holdout[i] != 0.0) {
            CHECK(split.X[i] == 0.0);
            CHECK(split.X_holdout[i] == orig.X[i]);
        } else {
            CHECK(split.X[i] == orig.X[i]);
        }
    }
    CHECK(holes == 100.0);

    // restoring the held-out values reproduces the original split exactly
    for (std::size_t i = 0; i < 1000; ++i)
        if (split.M_holdout[i] != 0.0) {
            split.X[i] = split.X_holdout[i];
            split.M[i] = 1.0;
        }
    CHECK(split.X == orig.X);
    CHECK(split.M == orig.M);
}

TEST_CASE("round half away from zero") {
    CHECK(data::round_half_away(0.5) == 1);
    CHECK(data::round_half_away(1.5) == 2);
    CHECK(data::round_half_away(2.4) == 2);
    CHECK(data::round_half_away(2.5) == 3);
    CHECK(data::round_half_away(0.0) == 0);
}

TEST_CASE("synthetic generation is deterministic and respects the missing rate") {
    data::ImputationDataset a = data::synth_generate(data::SynthKind::sine_mixture, 32, 12, 3,
                                                     0.2, 99);
    data::ImputationDataset b = data::synth_generate(data::SynthKind::sine_mixture, 32, 12, 3,
                                                     0.2, 99);
    CHECK(a.train.X == b.train.X);
    CHECK(a.val.X_holdout == b.val.X_holdout);
    CHECK(a.test.M == b.test.M);

    // missing_rate=0 leaves everything observed before punching, so train has
    // a full mask
    data::ImputationDataset full = data::synth_generate(data::SynthKind::random_walk, 16, 8, 2,
                                                        0.0, 5);
    for (double m : full.train.M) CHECK(m == 1.0);

    CHECK_THROWS_AS(data::synth_generate(data::SynthKind::sine_mixture, 3, 8, 2, 0.2, 1),
                    DataError);
}

TEST_CASE("dataset container round trips losslessly") {
    data::ImputationDataset ds = data::synth_generate(data::SynthKind::random_walk, 24, 10, 3,
                                                      0.15, 12);
    const std::string path = "/tmp/tsimpute_data_rt.tsds";
    data::save_dataset(path, ds);
    data::ImputationDataset back = data::load_dataset(path);
    CHECK(back.T == ds.T);
    CHECK(back.D == ds.D);
    CHECK(back.train.X == ds.train.X);
    CHECK(back.train.M == ds.train.M);
    CHECK(back.val.X_holdout == ds.val.X_holdout);
    CHECK(back.val.M_holdout == ds.val.M_holdout);
    CHECK(back.test.X == ds.test.X);
    CHECK(back.stats.mean == ds.stats.mean);
    CHECK(back.stats.stdev == ds.stats.stdev);
    std::remove(path.c_str());
}

TEST_CASE("last-value baseline beats the median baseline on random walks") {
    data::ImputationDataset ds = data::synth_generate(data::SynthKind::random_walk, 64, 16, 4,
                                                      0.2, 31);
    std::vector<double> medians = evaluate::feature_medians(ds.train);
    evaluate::Metrics med = evaluate::compute_metrics(evaluate::impute_median(medians, ds.test),
                                                      ds.test.X_holdout, ds.test.M_holdout);
    evaluate::Metrics last = evaluate::compute_metrics(evaluate::impute_last(ds.test),
                                                       ds.test.X_holdout, ds.test.M_holdout);
    CHECK(last.mae < med.mae);
}
