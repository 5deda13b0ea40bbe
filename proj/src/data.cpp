#include "tsimpute/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tsimpute/container.hpp"

namespace tsimpute::data {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::size_t round_half_away(double v) {
    return static_cast<std::size_t>(std::llround(v));
}

std::vector<RawSeries> ingest_csv(const std::string& path, const CsvOptions& opts) {
    std::ifstream is(path);
    if (!is) throw DataError("ingest_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("ingest_csv: empty file " + path);

    std::vector<std::string> header = split_line(line);
    for (auto& h : header) h = trim(h);
    std::size_t id_idx = header.size();
    if (!opts.id_column.empty()) {
        const auto it = std::find(header.begin(), header.end(), opts.id_column);
        if (it == header.end()) {
            throw DataError("ingest_csv: id column '" + opts.id_column + "' not in header");
        }
        id_idx = static_cast<std::size_t>(it - header.begin());
    }

    std::vector<std::string> features;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c != id_idx) features.push_back(header[c]);
    }
    if (features.empty()) throw DataError("ingest_csv: no feature columns in " + path);

    std::vector<std::string> segment_order;
    std::vector<RawSeries> segments;
    auto series_for = [&](const std::string& id) -> RawSeries& {
        const auto it = std::find(segment_order.begin(), segment_order.end(), id);
        if (it != segment_order.end()) return segments[static_cast<std::size_t>(it - segment_order.begin())];
        segment_order.push_back(id);
        RawSeries s;
        s.features = features;
        s.cols = features.size();
        segments.push_back(std::move(s));
        return segments.back();
    };

    std::size_t line_no = 1;
    std::size_t data_rows = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> cells = split_line(line);
        if (cells.size() != header.size()) {
            throw DataError("ingest_csv: line " + std::to_string(line_no) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
        }
        RawSeries& s = series_for(id_idx < header.size() ? trim(cells[id_idx]) : "");
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c == id_idx) continue;
            const std::string cell = trim(cells[c]);
            const bool is_na = std::find(opts.na_tokens.begin(), opts.na_tokens.end(), cell) !=
                               opts.na_tokens.end();
            if (is_na) {
                s.values.push_back(0.0);
                s.observed.push_back(0);
                continue;
            }
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
                s.values.push_back(v);
                s.observed.push_back(1);
            } catch (const std::exception&) {
                throw DataError("ingest_csv: non-numeric cell '" + cell + "' at line " +
                                std::to_string(line_no) + ", column '" + header[c] + "'");
            }
        }
        ++data_rows;
    }
    if (data_rows == 0) throw DataError("ingest_csv: no data rows in " + path);
    return segments;
}

SplitArrays window(const RawSeries& raw, std::size_t T, std::size_t stride) {
    if (stride == 0) throw DataError("window: stride must be >= 1");
    if (raw.rows() < T) {
        throw DataError("window: series length " + std::to_string(raw.rows()) +
                        " shorter than window " + std::to_string(T));
    }
    SplitArrays out;
    out.T = T;
    out.D = raw.cols;
    out.n = (raw.rows() - T) / stride + 1;
    out.X.resize(out.size());
    out.M.resize(out.size());
    out.X_holdout.assign(out.size(), 0.0);
    out.M_holdout.assign(out.size(), 0.0);
    for (std::size_t i = 0; i < out.n; ++i) {
        const std::size_t row0 = i * stride;
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t d = 0; d < raw.cols; ++d) {
                const std::size_t src = (row0 + t) * raw.cols + d;
                const std::size_t dst = (i * T + t) * raw.cols + d;
                out.M[dst] = raw.observed[src] ? 1.0 : 0.0;
                out.X[dst] = raw.observed[src] ? raw.values[src] : 0.0;
            }
        }
    }
    return out;
}

SplitArrays stack_windows(const std::vector<RawSeries>& series, std::size_t T, std::size_t stride) {
    SplitArrays out;
    for (const RawSeries& s : series) {
        SplitArrays w = window(s, T, stride);
        if (out.n == 0) {
            out = std::move(w);
        } else {
            if (w.D != out.D) throw DataError("stack_windows: feature counts disagree");
            out.X.insert(out.X.end(), w.X.begin(), w.X.end());
            out.M.insert(out.M.end(), w.M.begin(), w.M.end());
            out.X_holdout.insert(out.X_holdout.end(), w.X_holdout.begin(), w.X_holdout.end());
            out.M_holdout.insert(out.M_holdout.end(), w.M_holdout.begin(), w.M_holdout.end());
            out.n += w.n;
        }
    }
    if (out.n == 0) throw DataError("stack_windows: no samples produced");
    return out;
}

void standardize_fit_transform(ImputationDataset& ds) {
    const std::size_t D = ds.D;
    ds.stats.mean.assign(D, 0.0);
    ds.stats.stdev.assign(D, 0.0);
    std::vector<std::size_t> count(D, 0);
    const SplitArrays& tr = ds.train;
    for (std::size_t i = 0; i < tr.size(); ++i) {
        if (tr.M[i] == 1.0) {
            const std::size_t d = i % D;
            ds.stats.mean[d] += tr.X[i];
            ++count[d];
        }
    }
    std::string bad;
    for (std::size_t d = 0; d < D; ++d) {
        if (count[d] < 2) {
            bad += (bad.empty() ? "" : ", ") + std::to_string(d);
            continue;
        }
        ds.stats.mean[d] /= static_cast<double>(count[d]);
    }
    if (!bad.empty()) {
        throw DataError("standardize: features with < 2 observed training values: " + bad);
    }
    for (std::size_t i = 0; i < tr.size(); ++i) {
        if (tr.M[i] == 1.0) {
            const std::size_t d = i % D;
            const double diff = tr.X[i] - ds.stats.mean[d];
            ds.stats.stdev[d] += diff * diff;
        }
    }
    for (std::size_t d = 0; d < D; ++d) {
        ds.stats.stdev[d] = std::sqrt(ds.stats.stdev[d] / static_cast<double>(count[d]));
        if (ds.stats.stdev[d] <= 0.0) {
            bad += (bad.empty() ? "" : ", ") + std::to_string(d);
        }
    }
    if (!bad.empty()) throw DataError("standardize: zero-variance features: " + bad);

    auto apply = [&](SplitArrays& split) {
        for (std::size_t i = 0; i < split.size(); ++i) {
            const std::size_t d = i % D;
            if (split.M[i] == 1.0) split.X[i] = ds.stats.to_standard(split.X[i], d);
            if (split.has_holdout && split.M_holdout[i] == 1.0) {
                split.X_holdout[i] = ds.stats.to_standard(split.X_holdout[i], d);
            }
        }
    };
    apply(ds.train);
    apply(ds.val);
    apply(ds.test);
}

void punch_eval_holes(SplitArrays& split, double fraction, std::mt19937_64& rng) {
    if (fraction <= 0.0 || fraction >= 1.0) {
        throw DataError("punch_eval_holes: fraction must lie in (0,1)");
    }
    std::vector<std::size_t> observed;
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (split.M[i] == 1.0) observed.push_back(i);
    }
    if (observed.empty()) throw DataError("punch_eval_holes: split has no observed entries");
    std::size_t k = round_half_away(fraction * static_cast<double>(observed.size()));
    k = std::max<std::size_t>(k, 1);
    // partial Fisher-Yates: first k entries become the hole set
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, observed.size() - 1);
        std::swap(observed[i], observed[pick(rng)]);
    }
    split.X_holdout.assign(split.size(), 0.0);
    split.M_holdout.assign(split.size(), 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t idx = observed[i];
        split.X_holdout[idx] = split.X[idx];
        split.M_holdout[idx] = 1.0;
        split.M[idx] = 0.0;
        split.X[idx] = 0.0;
    }
    split.has_holdout = true;
}

SynthKind synth_kind_from_string(const std::string& name) {
    if (name == "sine_mixture") return SynthKind::sine_mixture;
    if (name == "random_walk") return SynthKind::random_walk;
    throw DataError("unknown synthetic kind: " + name);
}

ImputationDataset synth_generate(SynthKind kind, std::size_t n, std::size_t T, std::size_t D,
                                 double missing_rate, std::uint64_t seed) {
    if (n == 0 || T == 0 || D == 0) throw DataError("synth_generate: n, T, D must be positive");
    if (missing_rate < 0.0 || missing_rate >= 1.0) {
        throw DataError("synth_generate: missing_rate must lie in [0,1)");
    }
    std::mt19937_64 rng(seed);
    std::vector<double> values(n * T * D);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.05);

    if (kind == SynthKind::sine_mixture) {
        std::uniform_real_distribution<double> u_omega(0.15, 0.7);
        std::uniform_real_distribution<double> u_phase(0.0, 6.283185307179586);
        std::uniform_real_distribution<double> u_amp(0.5, 1.5);
        std::uniform_real_distribution<double> u_shift(-0.4, 0.4);
        for (std::size_t i = 0; i < n; ++i) {
            // features of one sample share (omega, phase); only amplitude and
            // a small phase shift differ, so they are mutually informative
            const double omega = u_omega(rng);
            const double phase = u_phase(rng);
            std::vector<double> amp(D), shift(D);
            for (std::size_t d = 0; d < D; ++d) {
                amp[d] = u_amp(rng);
                shift[d] = u_shift(rng);
            }
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t d = 0; d < D; ++d) {
                    values[(i * T + t) * D + d] =
                        amp[d] * std::sin(omega * static_cast<double>(t) + phase + shift[d]) +
                        noise(rng);
                }
            }
        }
    } else {
        std::normal_distribution<double> step(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < D; ++d) {
                double x = step(rng);
                for (std::size_t t = 0; t < T; ++t) {
                    values[(i * T + t) * D + d] = x;
                    x += step(rng);
                }
            }
        }
    }

    std::vector<double> mask(values.size(), 1.0);
    if (missing_rate > 0.0) {
        for (double& m : mask) m = u01(rng) < missing_rate ? 0.0 : 1.0;
    }

    const std::size_t n_train = std::max<std::size_t>(1, n * 70 / 100);
    const std::size_t n_val = std::max<std::size_t>(1, (n - n_train) / 2);
    const std::size_t n_test = n - n_train - n_val;
    if (n_test == 0) throw DataError("synth_generate: too few samples to split (need n >= 4)");

    auto make_split = [&](std::size_t begin, std::size_t count) {
        SplitArrays s;
        s.n = count;
        s.T = T;
        s.D = D;
        s.X.resize(s.size());
        s.M.resize(s.size());
        s.X_holdout.assign(s.size(), 0.0);
        s.M_holdout.assign(s.size(), 0.0);
        for (std::size_t i = 0; i < s.size(); ++i) {
            const std::size_t src = begin * T * D + i;
            s.M[i] = mask[src];
            s.X[i] = mask[src] == 1.0 ? values[src] : 0.0;
        }
        return s;
    };

    ImputationDataset ds;
    ds.T = T;
    ds.D = D;
    ds.train = make_split(0, n_train);
    ds.val = make_split(n_train, n_val);
    ds.test = make_split(n_train + n_val, n_test);
    standardize_fit_transform(ds);
    punch_eval_holes(ds.val, 0.10, rng);
    punch_eval_holes(ds.test, 0.10, rng);
    return ds;
}

namespace {

void split_blobs(const std::string& prefix, const SplitArrays& s, std::vector<Blob>& blobs) {
    const Shape shape{s.n, s.T, s.D};
    blobs.push_back({prefix + ".X", shape, s.X});
    blobs.push_back({prefix + ".M", shape, s.M});
    blobs.push_back({prefix + ".X_holdout", shape, s.X_holdout});
    blobs.push_back({prefix + ".M_holdout", shape, s.M_holdout});
}

SplitArrays split_from(const Container& c, const std::string& prefix, bool has_holdout) {
    const Blob& x = c.get(prefix + ".X");
    SplitArrays s;
    s.n = x.shape[0];
    s.T = x.shape[1];
    s.D = x.shape[2];
    s.X = x.data;
    s.M = c.get(prefix + ".M").data;
    s.X_holdout = c.get(prefix + ".X_holdout").data;
    s.M_holdout = c.get(prefix + ".M_holdout").data;
    s.has_holdout = has_holdout;
    return s;
}

}  // namespace

void save_dataset(const std::string& path, const ImputationDataset& ds) {
    nlohmann::json meta;
    meta["T"] = ds.T;
    meta["D"] = ds.D;
    meta["val_has_holdout"] = ds.val.has_holdout;
    meta["test_has_holdout"] = ds.test.has_holdout;
    std::vector<Blob> blobs;
    split_blobs("train", ds.train, blobs);
    split_blobs("val", ds.val, blobs);
    split_blobs("test", ds.test, blobs);
    blobs.push_back({"stats.mean", {ds.D}, ds.stats.mean});
    blobs.push_back({"stats.stdev", {ds.D}, ds.stats.stdev});
    write_container(path, "TSID", meta, blobs);
}

ImputationDataset load_dataset(const std::string& path) {
    Container c = read_container(path, "TSID");
    ImputationDataset ds;
    ds.T = c.meta.at("T").get<std::size_t>();
    ds.D = c.meta.at("D").get<std::size_t>();
    ds.train = split_from(c, "train", false);
    ds.val = split_from(c, "val", c.meta.value("val_has_holdout", false));
    ds.test = split_from(c, "test", c.meta.value("test_has_holdout", false));
    ds.stats.mean = c.get("stats.mean").data;
    ds.stats.stdev = c.get("stats.stdev").data;
    return ds;
}

Tensor pack_from(const std::vector<double>& buf, const SplitArrays& split, std::size_t begin,
                 std::size_t count) {
    const std::size_t stride = split.T * split.D;
    std::vector<double> out(buf.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                            buf.begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
    return Tensor({count, split.T, split.D}, std::move(out));
}

Tensor pack_x(const SplitArrays& split, std::size_t begin, std::size_t count) {
    return pack_from(split.X, split, begin, count);
}

Tensor pack_m(const SplitArrays& split, std::size_t begin, std::size_t count) {
    return pack_from(split.M, split, begin, count);
}

}  // namespace tsimpute::data
