#include "tsimpute/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tsimpute/container.hpp"

namespace tsimpute::training {

MitMask apply_mit_mask(const Tensor& x, const Tensor& m, double rate, std::mt19937_64& rng) {
    if (rate <= 0.0 || rate >= 1.0) throw ConfigError("apply_mit_mask: rate must lie in (0,1)");
    const std::size_t n = x.size();
    if (m.size() != n) throw ShapeError("apply_mit_mask: value/mask size mismatch");

    std::vector<std::size_t> observed;
    observed.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        if (m.at(i) != 0.0) observed.push_back(i);
    if (observed.empty()) throw DataError("apply_mit_mask: batch has no observed values");

    std::size_t k = data::round_half_away(rate * static_cast<double>(observed.size()));
    k = std::clamp<std::size_t>(k, 1, observed.size());

    // partial Fisher-Yates: first k entries become the artificially-missing set
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, observed.size() - 1);
        std::swap(observed[i], observed[pick(rng)]);
    }

    std::vector<double> xh(x.data().begin(), x.data().end());
    std::vector<double> mh(m.data().begin(), m.data().end());
    std::vector<double> ind(n, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = observed[i];
        xh[j] = 0.0;
        mh[j] = 0.0;
        ind[j] = 1.0;
    }
    return {Tensor(x.shape(), std::move(xh)), Tensor(m.shape(), std::move(mh)),
            Tensor(m.shape(), std::move(ind))};
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const nn::ParamRefs& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            m_[p].assign(params[p].second.size(), 0.0);
            v_[p].assign(params[p].second.size(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw TrainingError("adam: parameter list changed size");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor w = params[p].second;
        if (!w.has_grad()) continue;  // untouched this step
        auto g = w.grad();
        auto dat = w.raw_data();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < dat.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw TrainingError("adam: non-finite gradient in " + params[p].first);
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            dat[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

namespace {

// gathers arbitrary sample indices into a (count,T,D) tensor
Tensor gather(const std::vector<double>& buf, const data::SplitArrays& split,
              const std::vector<std::size_t>& idx, std::size_t begin, std::size_t count) {
    const std::size_t stride = split.T * split.D;
    std::vector<double> out(count * stride);
    for (std::size_t i = 0; i < count; ++i)
        std::copy_n(buf.data() + idx[begin + i] * stride, stride, out.data() + i * stride);
    return Tensor({count, split.T, split.D}, std::move(out));
}

struct MaeAcc {
    double abs_sum = 0.0, mask_sum = 0.0;
    void add(const Tensor& est, const Tensor& tgt, const std::vector<double>& mask,
             std::size_t offset) {
        for (std::size_t i = 0; i < est.size(); ++i) {
            const double m = mask[offset + i];
            abs_sum += std::abs((est.at(i) - tgt.at(i)) * m);
            mask_sum += m;
        }
    }
    double value() const { return mask_sum > 0.0 ? abs_sum / mask_sum : 0.0; }
};

std::vector<double> snapshot(const nn::ParamRefs& params) {
    std::vector<double> out;
    for (const auto& [name, w] : params) out.insert(out.end(), w.data().begin(), w.data().end());
    return out;
}

void restore(const nn::ParamRefs& params, const std::vector<double>& snap) {
    std::size_t pos = 0;
    for (const auto& [name, w] : params) {
        Tensor t = w;
        std::copy_n(snap.data() + pos, t.size(), t.raw_data().data());
        pos += t.size();
    }
}

}  // namespace

std::pair<double, double> validate_model(const SaitsModel& model, const data::SplitArrays& split) {
    NoGradGuard ng;
    const std::size_t batch = 128, stride = split.T * split.D;
    MaeAcc imp, rec;
    for (std::size_t b = 0; b < split.n; b += batch) {
        const std::size_t count = std::min(batch, split.n - b);
        Tensor x = data::pack_x(split, b, count);
        Tensor m = data::pack_m(split, b, count);
        ForwardOutput out = model.forward(x, m);
        if (split.has_holdout) {
            Tensor truth = data::pack_from(split.X_holdout, split, b, count);
            imp.add(out.x_completed, truth, split.M_holdout, b * stride);
        }
        rec.add(out.x_final, x, split.M, b * stride);
    }
    return {imp.value(), rec.value()};
}

std::vector<double> impute_split(const SaitsModel& model, const data::SplitArrays& split,
                                 std::size_t batch_size) {
    NoGradGuard ng;
    std::vector<double> out(split.size());
    const std::size_t stride = split.T * split.D;
    for (std::size_t b = 0; b < split.n; b += batch_size) {
        const std::size_t count = std::min(batch_size, split.n - b);
        Tensor x = data::pack_x(split, b, count);
        Tensor m = data::pack_m(split, b, count);
        Tensor filled = model.impute(x, m);
        std::copy_n(filled.data().data(), filled.size(), out.data() + b * stride);
    }
    return out;
}

TrainResult train_model(const SaitsConfig& cfg, const data::ImputationDataset& ds,
                        const TrainOptions& opts) {
    cfg.validate();
    if (ds.train.n == 0) throw TrainingError("train: empty training split");
    if (opts.batch_size == 0) throw ConfigError("train: batch size must be positive");

    TrainResult res;
    res.model = std::make_shared<SaitsModel>(cfg, opts.seed);
    nn::ParamRefs params = res.model->parameters();
    Adam opt(opts.lr);
    // separate stream for shuffling, artificial masking and dropout so the
    // initialization draw count never shifts the training trajectory
    std::mt19937_64 rng(opts.seed + 0x9e3779b97f4a7c15ULL);

    const bool use_mit_mask = variant_uses_mit(cfg.variant);

    std::vector<std::size_t> order(ds.train.n);
    std::iota(order.begin(), order.end(), 0);

    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_snap = snapshot(params);
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= opts.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t sample_sum = 0;
        bool bad = false;
        for (std::size_t b = 0; b < ds.train.n && !bad; b += opts.batch_size) {
            const std::size_t count = std::min(opts.batch_size, ds.train.n - b);
            Tensor x = gather(ds.train.X, ds.train, order, b, count);
            Tensor m = gather(ds.train.M, ds.train, order, b, count);

            Tensor x_hat = x, m_hat = m, indicating;
            if (use_mit_mask) {
                MitMask mm = apply_mit_mask(x, m, cfg.mit_rate, rng);
                x_hat = mm.x_hat;
                m_hat = mm.m_hat;
                indicating = mm.indicating;
            }

            nn::ForwardCtx ctx{true, cfg.dropout, &rng};
            ForwardOutput out = res.model->forward(x_hat, m_hat, ctx);
            LossOutput loss =
                joint_loss(out, x, m_hat, indicating, cfg.lambda_mit, cfg.variant);
            const double lv = loss.total.item();
            if (!std::isfinite(lv)) {
                bad = true;
                break;
            }
            backward(loss.total);
            opt.step(params);
            for (auto& [name, w] : params) w.zero_grad();
            loss_sum += lv * static_cast<double>(count);
            sample_sum += count;
        }

        auto [imp_mae, rec_mae] = validate_model(*res.model, ds.val);
        if (bad || !std::isfinite(imp_mae) || !std::isfinite(rec_mae)) {
            res.diverged = true;
            break;
        }

        CurvePoint pt;
        pt.epoch = epoch;
        pt.train_loss = loss_sum / static_cast<double>(sample_sum);
        pt.val_imputation_mae = imp_mae;
        pt.val_reconstruction_mae = rec_mae;
        res.curve.push_back(pt);
        if (!opts.quiet) {
            std::printf("epoch %zu  loss %.6f  val_imp %.6f  val_rec %.6f\n", epoch,
                        pt.train_loss, imp_mae, rec_mae);
        }

        if (imp_mae < best) {  // strict improvement resets patience
            best = imp_mae;
            res.best_epoch = epoch;
            best_snap = snapshot(params);
            since_best = 0;
        } else {
            ++since_best;
        }
        if (since_best >= opts.patience) break;
    }

    restore(params, best_snap);
    res.best_val_imputation_mae = best;
    return res;
}

void write_curves_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
    std::ofstream f(path);
    if (!f) throw DataError("curves: cannot open " + path);
    f.precision(std::numeric_limits<double>::max_digits10);
    f << "epoch,train_loss,val_imputation_mae,val_reconstruction_mae\n";
    for (const CurvePoint& p : curve)
        f << p.epoch << ',' << p.train_loss << ',' << p.val_imputation_mae << ','
          << p.val_reconstruction_mae << '\n';
}

void save_checkpoint(const SaitsModel& model, const std::string& path,
                     const std::string& rng_state) {
    const SaitsConfig& c = model.config();
    nlohmann::json meta = {
        {"kind", "checkpoint"},
        {"variant", variant_to_string(c.variant)},
        {"T", c.T},
        {"D", c.D},
        {"n_layers", c.n_layers},
        {"d_model", c.d_model},
        {"d_ffn", c.d_ffn},
        {"heads", c.heads},
        {"d_k", c.d_k},
        {"d_v", c.d_v},
        {"dropout", c.dropout},
        {"lambda_mit", c.lambda_mit},
        {"mit_rate", c.mit_rate},
    };
    if (!rng_state.empty()) meta["rng_state"] = rng_state;
    std::vector<Blob> blobs;
    for (const auto& [name, w] : model.parameters())
        blobs.push_back({name, w.shape(), {w.data().begin(), w.data().end()}});
    write_container(path, "TSCK", meta, blobs);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Container c = read_container(path, "TSCK");
    const nlohmann::json& m = c.meta;
    SaitsConfig cfg;
    try {
        cfg.variant = variant_from_string(m.at("variant").get<std::string>());
        cfg.T = m.at("T").get<std::size_t>();
        cfg.D = m.at("D").get<std::size_t>();
        cfg.n_layers = m.at("n_layers").get<std::size_t>();
        cfg.d_model = m.at("d_model").get<std::size_t>();
        cfg.d_ffn = m.at("d_ffn").get<std::size_t>();
        cfg.heads = m.at("heads").get<std::size_t>();
        cfg.d_k = m.at("d_k").get<std::size_t>();
        cfg.d_v = m.at("d_v").get<std::size_t>();
        cfg.dropout = m.at("dropout").get<double>();
        cfg.lambda_mit = m.at("lambda_mit").get<double>();
        cfg.mit_rate = m.at("mit_rate").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
    }
    cfg.validate();

    LoadedCheckpoint out;
    out.model = std::make_shared<SaitsModel>(cfg, 0);
    if (m.contains("rng_state")) out.rng_state = m.at("rng_state").get<std::string>();
    for (auto& [name, w] : out.model->parameters()) {
        auto it = c.blobs.find(name);
        if (it == c.blobs.end())
            throw CheckpointError("checkpoint: missing parameter " + name);
        if (it->second.shape != w.shape())
            throw CheckpointError("checkpoint: shape mismatch for " + name + ": stored " +
                                  shape_str(it->second.shape) + ", expected " +
                                  shape_str(w.shape()));
        Tensor t = w;
        std::copy(it->second.data.begin(), it->second.data.end(), t.raw_data().begin());
    }
    return out;
}

}  // namespace tsimpute::training
