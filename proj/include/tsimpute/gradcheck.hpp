#pragma once

#include <functional>
#include <string>

#include "tsimpute/nn.hpp"
#include "tsimpute/saits.hpp"

namespace tsimpute::gradcheck {

struct Report {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t checked = 0;
};

// central-difference check of every element of every parameter against the
// reverse-mode gradient of loss_fn(); loss_fn must be pure in the params
Report check(const std::function<Tensor()>& loss_fn, const nn::ParamRefs& params,
             double eps = 1e-5);

// full-model check on a fixed small input; refuses configs with dropout > 0
Report check_model(const SaitsConfig& cfg, std::size_t batch, std::uint64_t seed);

}  // namespace tsimpute::gradcheck
