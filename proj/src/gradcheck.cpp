#include "tsimpute/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tsimpute/training.hpp"

namespace tsimpute::gradcheck {

Report check(const std::function<Tensor()>& loss_fn, const nn::ParamRefs& params, double eps) {
    // one reverse pass for the analytic gradients
    for (const auto& [name, w] : params) {
        Tensor t = w;
        t.zero_grad();
    }
    Tensor loss = loss_fn();
    backward(loss);

    Report rep;
    NoGradGuard ng;
    for (const auto& [name, w] : params) {
        Tensor t = w;
        auto dat = t.raw_data();
        for (std::size_t i = 0; i < dat.size(); ++i) {
            const double keep = dat[i];
            dat[i] = keep + eps;
            const double hi = loss_fn().item();
            dat[i] = keep - eps;
            const double lo = loss_fn().item();
            dat[i] = keep;
            const double fd = (hi - lo) / (2.0 * eps);
            const double an = t.has_grad() ? t.grad()[i] : 0.0;
            const double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = name;
            }
            ++rep.checked;
        }
    }
    return rep;
}

Report check_model(const SaitsConfig& cfg, std::size_t batch, std::uint64_t seed) {
    if (cfg.dropout > 0.0)
        throw ConfigError("gradcheck: dropout must be disabled (stochastic losses do not admit "
                          "finite differences)");
    SaitsModel model(cfg, seed);

    std::mt19937_64 rng(seed + 17);
    const std::size_t n = batch * cfg.T * cfg.D;
    std::vector<double> xv(n), mv(n);
    std::uniform_real_distribution<double> ux(-1.0, 1.0), um(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        mv[i] = um(rng) < 0.7 ? 1.0 : 0.0;
        xv[i] = mv[i] != 0.0 ? ux(rng) : 0.0;
    }
    Tensor x({batch, cfg.T, cfg.D}, std::move(xv));
    Tensor m({batch, cfg.T, cfg.D}, std::move(mv));

    std::mt19937_64 mask_rng(seed + 99);
    training::MitMask mm = training::apply_mit_mask(x, m, cfg.mit_rate, mask_rng);

    auto loss_fn = [&]() {
        ForwardOutput out = model.forward(mm.x_hat, mm.m_hat);
        return joint_loss(out, x, mm.m_hat, mm.indicating, cfg.lambda_mit, cfg.variant).total;
    };
    return check(loss_fn, model.parameters());
}

}  // namespace tsimpute::gradcheck
