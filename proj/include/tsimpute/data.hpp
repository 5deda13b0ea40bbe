#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tsimpute/tensor.hpp"

namespace tsimpute::data {

struct CsvOptions {
    std::vector<std::string> na_tokens = {""};  // cells parsed as missing
    std::string id_column;                      // optional pre-segmentation column
};

// Time-ordered records with explicit missingness.
struct RawSeries {
    std::vector<std::string> features;
    std::size_t cols = 0;
    std::vector<double> values;          // 0 where unobserved
    std::vector<std::uint8_t> observed;  // 1 where the cell held a value

    std::size_t rows() const { return cols == 0 ? 0 : values.size() / cols; }
};

// One file -> one series, or several when an id column pre-segments the rows.
std::vector<RawSeries> ingest_csv(const std::string& path, const CsvOptions& opts = {});

struct SplitArrays {
    std::size_t n = 0, T = 0, D = 0;
    std::vector<double> X;          // zero-filled at M=0
    std::vector<double> M;          // observation mask
    std::vector<double> X_holdout;  // evaluation ground truth, 0 elsewhere
    std::vector<double> M_holdout;  // indicator of punched positions
    bool has_holdout = false;

    std::size_t size() const { return n * T * D; }
};

struct Standardizer {
    std::vector<double> mean, stdev;  // per feature

    double to_standard(double v, std::size_t d) const { return (v - mean[d]) / stdev[d]; }
    double to_original(double v, std::size_t d) const { return v * stdev[d] + mean[d]; }
};

struct ImputationDataset {
    std::size_t T = 0, D = 0;
    SplitArrays train, val, test;
    Standardizer stats;
};

// sliding-window sample extraction; n = floor((len-T)/stride)+1
SplitArrays window(const RawSeries& raw, std::size_t T, std::size_t stride);
SplitArrays stack_windows(const std::vector<RawSeries>& series, std::size_t T, std::size_t stride);

// per-feature mean/std over observed TRAINING values only, applied everywhere
void standardize_fit_transform(ImputationDataset& ds);

// moves `fraction` of the observed entries into the holdout arrays
void punch_eval_holes(SplitArrays& split, double fraction, std::mt19937_64& rng);

enum class SynthKind { sine_mixture, random_walk };
SynthKind synth_kind_from_string(const std::string& name);

// deterministic synthetic dataset: generate -> MCAR mask -> split 70/15/15 ->
// standardize -> punch 10% eval holes in val/test
ImputationDataset synth_generate(SynthKind kind, std::size_t n, std::size_t T, std::size_t D,
                                 double missing_rate, std::uint64_t seed);

void save_dataset(const std::string& path, const ImputationDataset& ds);
ImputationDataset load_dataset(const std::string& path);

// batch slices packed as (count,T,D) tensors
Tensor pack_x(const SplitArrays& split, std::size_t begin, std::size_t count);
Tensor pack_m(const SplitArrays& split, std::size_t begin, std::size_t count);
Tensor pack_from(const std::vector<double>& buf, const SplitArrays& split, std::size_t begin,
                 std::size_t count);

std::size_t round_half_away(double v);

}  // namespace tsimpute::data
