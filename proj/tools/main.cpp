// tsimpute command line: dataset generation, training, imputation and
// evaluation for the self-attention imputation models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsimpute/data.hpp"
#include "tsimpute/evaluate.hpp"
#include "tsimpute/gradcheck.hpp"
#include "tsimpute/saits.hpp"
#include "tsimpute/training.hpp"

namespace fs = std::filesystem;
using namespace tsimpute;

namespace {

struct ModelArgs {
    std::string preset = "saits-base";
    std::string variant = "saits";
    double lr = 1e-3;
    std::size_t batch = 128, patience = 30, epochs = 10000;
    double mit_rate = 0.2, lambda = 1.0, dropout = -1.0;
    std::uint64_t seed = 0;
};

void add_model_flags(CLI::App* cmd, ModelArgs& a) {
    cmd->add_option("--preset", a.preset, "model size preset")
        ->check(CLI::IsMember({"saits-base", "tiny"}))
        ->capture_default_str();
    cmd->add_option("--variant", a.variant, "model variant")->capture_default_str();
    cmd->add_option("--lr", a.lr, "learning rate")->capture_default_str();
    cmd->add_option("--batch", a.batch, "batch size")->capture_default_str();
    cmd->add_option("--patience", a.patience, "early-stopping patience")->capture_default_str();
    cmd->add_option("--epochs", a.epochs, "epoch cap")->capture_default_str();
    cmd->add_option("--mit-rate", a.mit_rate, "artificial masking rate")->capture_default_str();
    cmd->add_option("--lambda", a.lambda, "imputation-loss weight")->capture_default_str();
    cmd->add_option("--dropout", a.dropout, "override preset dropout");
    cmd->add_option("--seed", a.seed, "rng seed")->envname("TSIMPUTE_SEED")
        ->capture_default_str();
}

SaitsConfig make_config(const ModelArgs& a, std::size_t T, std::size_t D) {
    SaitsConfig cfg = a.preset == "tiny" ? SaitsConfig::tiny(T, D) : SaitsConfig::base(T, D);
    cfg.variant = variant_from_string(a.variant);
    cfg.mit_rate = a.mit_rate;
    cfg.lambda_mit = a.lambda;
    if (a.dropout >= 0.0) cfg.dropout = a.dropout;
    cfg.validate();
    return cfg;
}

nlohmann::json config_echo(const SaitsConfig& c, const training::TrainOptions& o) {
    return {{"variant", variant_to_string(c.variant)},
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
            {"lr", o.lr},
            {"batch", o.batch_size},
            {"patience", o.patience},
            {"max_epochs", o.max_epochs},
            {"seed", o.seed}};
}

const data::SplitArrays& pick_split(const data::ImputationDataset& ds, const std::string& name) {
    if (name == "train") return ds.train;
    if (name == "val") return ds.val;
    if (name == "test") return ds.test;
    throw ConfigError("unknown split: " + name);
}

training::TrainOptions to_train_options(const ModelArgs& a, bool quiet) {
    training::TrainOptions o;
    o.lr = a.lr;
    o.batch_size = a.batch;
    o.patience = a.patience;
    o.max_epochs = a.epochs;
    o.seed = a.seed;
    o.quiet = quiet;
    return o;
}

int cmd_generate(const std::string& kind, std::size_t n, std::size_t T, std::size_t D,
                 double missing, std::uint64_t seed, const std::string& out) {
    data::ImputationDataset ds =
        data::synth_generate(data::synth_kind_from_string(kind), n, T, D, missing, seed);
    data::save_dataset(out, ds);
    std::printf("wrote %s: %zu/%zu/%zu samples, T=%zu D=%zu\n", out.c_str(), ds.train.n, ds.val.n,
                ds.test.n, ds.T, ds.D);
    return 0;
}

int cmd_train(const std::string& dataset, const ModelArgs& a, const std::string& out_dir,
              bool quiet) {
    data::ImputationDataset ds = data::load_dataset(dataset);
    SaitsConfig cfg = make_config(a, ds.T, ds.D);
    training::TrainOptions opts = to_train_options(a, quiet);

    training::TrainResult res = training::train_model(cfg, ds, opts);

    fs::create_directories(out_dir);
    training::write_curves_csv((fs::path(out_dir) / "curves.csv").string(), res.curve);
    training::save_checkpoint(*res.model, (fs::path(out_dir) / "checkpoint.tsck").string());

    nlohmann::json summary = {{"config", config_echo(cfg, opts)},
                              {"epochs_run", res.curve.size()},
                              {"best_epoch", res.best_epoch},
                              {"best_val_imputation_mae", res.best_val_imputation_mae},
                              {"diverged", res.diverged}};
    std::ofstream((fs::path(out_dir) / "summary.json").string()) << summary.dump(2) << "\n";

    std::printf("%s: best epoch %zu, val imputation MAE %.6f%s\n",
                variant_to_string(cfg.variant).c_str(), res.best_epoch,
                res.best_val_imputation_mae, res.diverged ? " (diverged, best kept)" : "");
    return res.diverged ? 1 : 0;
}

int cmd_impute(const std::string& checkpoint, const std::string& dataset,
               const std::string& split_name, const std::string& out) {
    data::ImputationDataset ds = data::load_dataset(dataset);
    training::LoadedCheckpoint ck = training::load_checkpoint(checkpoint);
    const data::SplitArrays& split = pick_split(ds, split_name);
    if (ck.model->config().T != ds.T || ck.model->config().D != ds.D)
        throw ConfigError("impute: checkpoint and dataset dimensions disagree");

    std::vector<double> filled = training::impute_split(*ck.model, split);

    std::ofstream f(out);
    if (!f) throw DataError("impute: cannot open " + out);
    f.precision(std::numeric_limits<double>::max_digits10);
    f << "sample,step,feature,value,observed\n";
    for (std::size_t i = 0; i < split.n; ++i)
        for (std::size_t t = 0; t < split.T; ++t)
            for (std::size_t d = 0; d < split.D; ++d) {
                const std::size_t idx = (i * split.T + t) * split.D + d;
                f << i << ',' << t << ',' << d << ','
                  << ds.stats.to_original(filled[idx], d) << ',' << int(split.M[idx] != 0.0)
                  << '\n';
            }
    std::printf("wrote %s (%zu samples, %s split)\n", out.c_str(), split.n, split_name.c_str());
    return 0;
}

int cmd_evaluate(const std::string& dataset, const std::string& checkpoint,
                 const std::string& split_name, const std::string& out_csv,
                 const std::string& out_json) {
    data::ImputationDataset ds = data::load_dataset(dataset);
    const data::SplitArrays& split = pick_split(ds, split_name);
    if (!split.has_holdout)
        throw DataError("evaluate: split '" + split_name + "' carries no held-out ground truth");

    std::vector<evaluate::EvalReport> reports;
    std::vector<double> medians = evaluate::feature_medians(ds.train);
    reports.push_back(evaluate::evaluate_imputed(split, ds.stats,
                                                 evaluate::impute_median(medians, split), "median",
                                                 split_name));
    reports.push_back(evaluate::evaluate_imputed(split, ds.stats, evaluate::impute_last(split),
                                                 "last", split_name));

    nlohmann::json echo = {{"dataset", dataset}, {"split", split_name}};
    if (!checkpoint.empty()) {
        training::LoadedCheckpoint ck = training::load_checkpoint(checkpoint);
        std::vector<double> filled = training::impute_split(*ck.model, split);
        reports.push_back(evaluate::evaluate_imputed(
            split, ds.stats, filled, variant_to_string(ck.model->config().variant), split_name));
        echo["checkpoint"] = checkpoint;
    }

    if (!out_csv.empty()) evaluate::write_reports_csv(out_csv, reports);
    if (!out_json.empty()) evaluate::write_reports_json(out_json, reports, echo);
    for (const auto& r : reports)
        std::printf("%-22s mae %.6f  rmse %.6f  mre %s\n", r.method.c_str(), r.standardized.mae,
                    r.standardized.rmse,
                    r.standardized.mre_defined ? std::to_string(r.standardized.mre).c_str()
                                               : "undefined");
    return 0;
}

int cmd_ablate(const std::string& dataset, std::vector<std::string> variants,
               std::vector<std::uint64_t> seeds, ModelArgs a, const std::string& out_dir,
               bool quiet) {
    data::ImputationDataset ds = data::load_dataset(dataset);
    if (variants.empty())
        for (Variant v : all_variants()) variants.push_back(variant_to_string(v));
    if (seeds.empty()) seeds = {1, 2, 3};

    fs::create_directories(out_dir);
    std::ofstream table((fs::path(out_dir) / "ablation.csv").string());
    table.precision(std::numeric_limits<double>::max_digits10);
    table << "variant,seed,best_epoch,val_imputation_mae,test_mae,test_rmse,diverged\n";

    for (const std::string& vs : variants) {
        for (std::uint64_t seed : seeds) {
            a.variant = vs;
            a.seed = seed;
            SaitsConfig cfg = make_config(a, ds.T, ds.D);
            training::TrainResult res = training::train_model(cfg, ds, to_train_options(a, quiet));
            std::vector<double> filled = training::impute_split(*res.model, ds.test);
            evaluate::EvalReport rep =
                evaluate::evaluate_imputed(ds.test, ds.stats, filled, vs, "test");
            table << vs << ',' << seed << ',' << res.best_epoch << ','
                  << res.best_val_imputation_mae << ',' << rep.standardized.mae << ','
                  << rep.standardized.rmse << ',' << int(res.diverged) << '\n';
            std::printf("%-22s seed %llu  val %.6f  test mae %.6f\n", vs.c_str(),
                        (unsigned long long)seed, res.best_val_imputation_mae,
                        rep.standardized.mae);
        }
    }
    return 0;
}

int cmd_gradcheck(const std::string& variant, std::uint64_t seed) {
    SaitsConfig cfg = SaitsConfig::tiny(4, 3);
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.d_ffn = 8;
    cfg.heads = 2;
    cfg.d_k = cfg.d_v = 4;
    cfg.dropout = 0.0;
    cfg.variant = variant_from_string(variant);
    gradcheck::Report rep = gradcheck::check_model(cfg, 2, seed);
    std::printf("checked %zu partials, max relative error %.3e (%s)\n", rep.checked,
                rep.max_rel_err, rep.worst_param.c_str());
    return rep.max_rel_err < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"time-series imputation toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from an INI/TOML file");

    // generate
    std::string g_kind = "sine_mixture", g_out = "dataset.tsds";
    std::size_t g_n = 512, g_T = 24, g_D = 8;
    double g_missing = 0.2;
    std::uint64_t g_seed = 1;
    auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
    gen->add_option("--kind", g_kind)->check(CLI::IsMember({"sine_mixture", "random_walk"}))
        ->capture_default_str();
    gen->add_option("--n", g_n, "sample count")->capture_default_str();
    gen->add_option("--T", g_T, "steps per sample")->capture_default_str();
    gen->add_option("--D", g_D, "features")->capture_default_str();
    gen->add_option("--missing-rate", g_missing)->capture_default_str();
    gen->add_option("--seed", g_seed)->envname("TSIMPUTE_SEED")->capture_default_str();
    gen->add_option("--out", g_out)->capture_default_str();

    // train
    std::string t_dataset, t_out = "run";
    bool t_verbose = false;
    ModelArgs t_args;
    auto* train = app.add_subcommand("train", "fit a model on a dataset");
    train->add_option("--dataset", t_dataset)->required();
    train->add_option("--out", t_out, "output directory")->capture_default_str();
    train->add_flag("--verbose", t_verbose, "print per-epoch progress");
    add_model_flags(train, t_args);

    // impute
    std::string i_ck, i_dataset, i_split = "test", i_out = "imputed.csv";
    auto* imp = app.add_subcommand("impute", "fill a split with a trained model");
    imp->add_option("--checkpoint", i_ck)->required();
    imp->add_option("--dataset", i_dataset)->required();
    imp->add_option("--split", i_split)->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    imp->add_option("--out", i_out)->capture_default_str();

    // evaluate
    std::string e_dataset, e_ck, e_split = "test", e_csv, e_json;
    auto* ev = app.add_subcommand("evaluate", "score baselines and optionally a checkpoint");
    ev->add_option("--dataset", e_dataset)->required();
    ev->add_option("--checkpoint", e_ck);
    ev->add_option("--split", e_split)->check(CLI::IsMember({"val", "test"}))
        ->capture_default_str();
    ev->add_option("--out-csv", e_csv);
    ev->add_option("--out-json", e_json);

    // ablate
    std::string a_dataset, a_out = "ablation";
    std::vector<std::string> a_variants;
    std::vector<std::uint64_t> a_seeds;
    bool a_verbose = false;
    ModelArgs a_args;
    auto* ab = app.add_subcommand("ablate", "train a grid of variants and seeds");
    ab->add_option("--dataset", a_dataset)->required();
    ab->add_option("--variants", a_variants, "subset of variants (default: all)")->delimiter(',');
    ab->add_option("--seeds", a_seeds, "seed list (default: 1,2,3)")->delimiter(',');
    ab->add_option("--out", a_out)->capture_default_str();
    ab->add_flag("--verbose", a_verbose);
    add_model_flags(ab, a_args);

    // gradcheck
    std::string gc_variant = "saits";
    std::uint64_t gc_seed = 7;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the model gradient");
    gc->add_option("--variant", gc_variant)->capture_default_str();
    gc->add_option("--seed", gc_seed)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen)
            return cmd_generate(g_kind, g_n, g_T, g_D, g_missing, g_seed, g_out);
        if (*train)
            return cmd_train(t_dataset, t_args, t_out, !t_verbose);
        if (*imp)
            return cmd_impute(i_ck, i_dataset, i_split, i_out);
        if (*ev)
            return cmd_evaluate(e_dataset, e_ck, e_split, e_csv, e_json);
        if (*ab)
            return cmd_ablate(a_dataset, a_variants, a_seeds, a_args, a_out, !a_verbose);
        if (*gc)
            return cmd_gradcheck(gc_variant, gc_seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
