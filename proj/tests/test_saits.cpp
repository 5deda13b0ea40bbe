#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tsimpute/saits.hpp"

using namespace tsimpute;

namespace {

struct Batch {
    Tensor x, m;
};

Batch random_batch(std::size_t B, std::size_t T, std::size_t D, std::uint64_t seed,
                   double observed = 0.7) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(-1.0, 1.0), um(0.0, 1.0);
    std::vector<double> xv(B * T * D), mv(B * T * D);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        mv[i] = um(rng) < observed ? 1.0 : 0.0;
        xv[i] = mv[i] != 0.0 ? ux(rng) : 0.0;
    }
    return {Tensor({B, T, D}, std::move(xv)), Tensor({B, T, D}, std::move(mv))};
}

SaitsConfig tiny(Variant v = Variant::saits) {
    SaitsConfig cfg = SaitsConfig::tiny(4, 3);
    cfg.variant = v;
    return cfg;
}

}  // namespace

TEST_CASE("observed positions are copied bit-exactly for every variant") {
    for (Variant v : all_variants()) {
        SaitsConfig cfg = tiny(v);
        SaitsModel model(cfg, 21);
        Batch b = random_batch(2, cfg.T, cfg.D, 100 + std::size_t(v));
        Tensor filled = model.impute(b.x, b.m);
        for (std::size_t i = 0; i < filled.size(); ++i)
            if (b.m.at(i) != 0.0) CHECK(filled.at(i) == b.x.at(i));
    }
}

TEST_CASE("all-ones mask keeps the input; all-zeros passes the representation") {
    SaitsConfig cfg = tiny();
    SaitsModel model(cfg, 3);
    Batch b = random_batch(2, cfg.T, cfg.D, 42, 1.1);  // fully observed
    ForwardOutput out = model.forward(b.x, b.m);
    for (std::size_t i = 0; i < out.x_completed.size(); ++i)
        CHECK(out.x_completed.at(i) == b.x.at(i));

    Tensor zeros_m = Tensor::zeros(b.m.shape());
    ForwardOutput out0 = model.forward(b.x, zeros_m);
    for (std::size_t i = 0; i < out0.x_completed.size(); ++i)
        CHECK(out0.x_completed.at(i) == out0.x_final.at(i));
}

TEST_CASE("combining weight boundaries") {
    SaitsConfig cfg = tiny();
    SaitsModel model(cfg, 5);
    Batch b = random_batch(2, cfg.T, cfg.D, 7);

    nn::ParamRefs params = model.parameters();
    auto force_eta = [&](double bias) {
        for (auto& [name, w] : params) {
            if (name.find("combine") == std::string::npos) continue;
            Tensor t = w;
            const bool is_bias = t.shape().size() == 1;
            for (double& x : t.raw_data()) x = is_bias ? bias : 0.0;
        }
    };

    force_eta(-1e9);  // eta -> 0 selects the first representation
    ForwardOutput lo = model.forward(b.x, b.m);
    for (std::size_t i = 0; i < lo.x_final.size(); ++i)
        CHECK(lo.x_final.at(i) == lo.representations[0].at(i));

    force_eta(1e9);  // eta -> 1 selects the second
    ForwardOutput hi = model.forward(b.x, b.m);
    for (std::size_t i = 0; i < hi.x_final.size(); ++i)
        CHECK(hi.x_final.at(i) == hi.representations[1].at(i));
}

TEST_CASE("eta stays strictly inside (0,1) and the blend is between the blocks") {
    SaitsConfig cfg = tiny();
    SaitsModel model(cfg, 6);
    Batch b = random_batch(3, cfg.T, cfg.D, 8);
    ForwardOutput out = model.forward(b.x, b.m);
    REQUIRE(out.eta.defined());
    for (std::size_t i = 0; i < out.eta.size(); ++i) {
        CHECK(out.eta.at(i) > 0.0);
        CHECK(out.eta.at(i) < 1.0);
        const double lo = std::min(out.representations[0].at(i), out.representations[1].at(i));
        const double hi = std::max(out.representations[0].at(i), out.representations[1].at(i));
        CHECK(out.x_final.at(i) >= lo - 1e-12);
        CHECK(out.x_final.at(i) <= hi + 1e-12);
    }
}

TEST_CASE("attention average has unit row sums; diagonal is suppressed") {
    SaitsConfig cfg = tiny();
    SaitsModel model(cfg, 9);
    Batch b = random_batch(2, cfg.T, cfg.D, 10);
    ForwardOutput out = model.forward(b.x, b.m);
    REQUIRE(out.attn_avg.shape() == Shape{2, cfg.T, cfg.T});
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t r = 0; r < cfg.T; ++r) {
            double sum = 0;
            for (std::size_t c = 0; c < cfg.T; ++c)
                sum += out.attn_avg.at((s * cfg.T + r) * cfg.T + c);
            CHECK(std::abs(sum - 1.0) < 1e-9);
            CHECK(out.attn_avg.at((s * cfg.T + r) * cfg.T + r) < 1e-8);
        }
}

TEST_CASE("single-block variant equals the full model with eta forced to zero") {
    SaitsConfig cfg1 = tiny(Variant::saits_1block);
    SaitsConfig cfg2 = tiny(Variant::saits);
    SaitsModel one(cfg1, 31);
    SaitsModel two(cfg2, 32);

    // copy block-1 parameters across, then pin eta at zero
    nn::ParamRefs p1 = one.parameters();
    nn::ParamRefs p2 = two.parameters();
    for (auto& [name, w] : p2) {
        Tensor t = w;
        if (name.rfind("block1.", 0) == 0) {
            for (auto& [n1, w1] : p1)
                if (n1 == name)
                    std::copy(w1.data().begin(), w1.data().end(), t.raw_data().begin());
        } else if (name.find("combine") != std::string::npos) {
            const bool is_bias = t.shape().size() == 1;
            for (double& x : t.raw_data()) x = is_bias ? -1e9 : 0.0;
        }
    }

    Batch b = random_batch(2, cfg1.T, cfg1.D, 33);
    Tensor f1 = one.impute(b.x, b.m);
    Tensor f2 = two.impute(b.x, b.m);
    for (std::size_t i = 0; i < f1.size(); ++i) CHECK(f1.at(i) == f2.at(i));
}

TEST_CASE("base preset parameter count is 1.38M within one percent") {
    SaitsConfig cfg = SaitsConfig::base(48, 37);
    SaitsModel model(cfg, 1);
    const double n = double(model.parameter_count());
    CHECK(n > 1.38e6 * 0.99);
    CHECK(n < 1.38e6 * 1.01);
}

TEST_CASE("representation counts per variant") {
    auto reps = [](Variant v) {
        SaitsConfig cfg = tiny(v);
        SaitsModel model(cfg, 2);
        Batch b = random_batch(1, cfg.T, cfg.D, 50);
        return model.forward(b.x, b.m).representations.size();
    };
    CHECK(reps(Variant::saits) == 3);
    CHECK(reps(Variant::saits_no_diag) == 3);
    CHECK(reps(Variant::saits_1block) == 1);
    CHECK(reps(Variant::saits_r2) == 1);
    CHECK(reps(Variant::saits_residual) == 3);
    CHECK(reps(Variant::saits_3residual) == 4);
    CHECK(reps(Variant::saits_3cascade) == 5);
    CHECK(reps(Variant::transformer) == 1);
}

TEST_CASE("joint loss matches a straight-line oracle") {
    SaitsConfig cfg = tiny();
    SaitsModel model(cfg, 61);
    Batch b = random_batch(2, cfg.T, cfg.D, 62);

    // carve an indicating mask out of the observed positions
    std::vector<double> mh(b.m.data().begin(), b.m.data().end());
    std::vector<double> ind(mh.size(), 0.0);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < mh.size() && moved < 5; ++i)
        if (mh[i] != 0.0) {
            mh[i] = 0.0;
            ind[i] = 1.0;
            ++moved;
        }
    Tensor m_hat(b.m.shape(), std::move(mh));
    Tensor indicating(b.m.shape(), std::move(ind));
    std::vector<double> xh(b.x.data().begin(), b.x.data().end());
    for (std::size_t i = 0; i < xh.size(); ++i)
        if (m_hat.at(i) == 0.0) xh[i] = 0.0;
    Tensor x_hat(b.x.shape(), std::move(xh));

    ForwardOutput out = model.forward(x_hat, m_hat);
    const double lambda = 0.8;
    LossOutput loss = joint_loss(out, b.x, m_hat, indicating, lambda, cfg.variant);

    auto mae = [&](const Tensor& est, const Tensor& mask) {
        double num = 0, den = 0;
        for (std::size_t i = 0; i < est.size(); ++i) {
            num += std::abs((est.at(i) - b.x.at(i)) * mask.at(i));
            den += mask.at(i);
        }
        return num / den;
    };
    double ort = 0;
    for (const Tensor& rep : out.representations) ort += mae(rep, m_hat);
    ort /= double(out.representations.size());
    const double mit = mae(out.x_completed, indicating);

    CHECK(loss.ort.item() == doctest::Approx(ort).epsilon(1e-12));
    CHECK(loss.mit.item() == doctest::Approx(mit).epsilon(1e-12));
    CHECK(loss.total.item() == doctest::Approx(ort + lambda * mit).epsilon(1e-12));

    // lambda = 0 reduces to the reconstruction term alone
    ForwardOutput out2 = model.forward(x_hat, m_hat);
    LossOutput l0 = joint_loss(out2, b.x, m_hat, indicating, 0.0, cfg.variant);
    CHECK(l0.total.item() == doctest::Approx(l0.ort.item()).epsilon(1e-15));
}

TEST_CASE("perfect prediction gives zero loss") {
    // a hand-built output where every representation equals the target
    SaitsConfig cfg = tiny();
    Batch b = random_batch(1, cfg.T, cfg.D, 70, 1.1);
    ForwardOutput out;
    out.representations = {b.x, b.x, b.x};
    out.x_completed = b.x;
    std::vector<double> ind(b.m.size(), 0.0);
    ind[0] = 1.0;
    LossOutput loss = joint_loss(out, b.x, b.m, Tensor(b.m.shape(), std::move(ind)), 1.0,
                                 Variant::saits);
    CHECK(loss.total.item() == 0.0);
}

TEST_CASE("variant names round trip and config validation rejects bad values") {
    for (Variant v : all_variants()) CHECK(variant_from_string(variant_to_string(v)) == v);
    CHECK_THROWS_AS(variant_from_string("nope"), ConfigError);

    SaitsConfig cfg = tiny();
    cfg.d_model = 7;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny();
    cfg.mit_rate = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny();
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny();
    cfg.T = 1;  // diagonal masking needs at least two steps
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
