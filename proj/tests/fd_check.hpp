#pragma once

// Finite-difference gradient oracle for the test suites. Uses only the
// forward pass and loss values, never the analytic backward path it checks.

#include <cmath>
#include <string>
#include <vector>

#include "gradmix/net.hpp"

namespace gradmix::testing {

inline double loss_value(const NetworkParams& params, const std::string& head,
                         const Tensor& batch, const Targets& targets) {
    const Tensor logits = forward(params, head, batch);
    if (std::holds_alternative<std::vector<int>>(targets)) {
        return cross_entropy_loss(logits, std::get<std::vector<int>>(targets)).loss;
    }
    return kl_soft_loss(logits, std::get<Tensor>(targets));
}

// Central differences over every parameter coordinate.
inline GradientSet finite_difference_grads(const NetworkParams& params, const std::string& head,
                                           const Tensor& batch, const Targets& targets,
                                           double h = 1e-5) {
    NetworkParams work = params;
    GradientSet out;
    out.batch_size = batch.shape[0];

    auto diff_tensor = [&](Tensor& param_tensor) {
        Tensor grad(param_tensor.shape);
        for (std::size_t i = 0; i < param_tensor.data.size(); ++i) {
            const double orig = param_tensor.data[i];
            param_tensor.data[i] = orig + h;
            const double up = loss_value(work, head, batch, targets);
            param_tensor.data[i] = orig - h;
            const double down = loss_value(work, head, batch, targets);
            param_tensor.data[i] = orig;
            grad.data[i] = (up - down) / (2.0 * h);
        }
        return grad;
    };

    for (LayerTensors& p : work.trunk) {
        LayerTensors g;
        g.W = diff_tensor(p.W);
        g.b = diff_tensor(p.b);
        out.trunk.push_back(std::move(g));
    }
    LayerTensors hg;
    hg.W = diff_tensor(work.heads.at(head).W);
    hg.b = diff_tensor(work.heads.at(head).b);
    out.heads.emplace(head, std::move(hg));
    return out;
}

// Bounded relative error: |a-n| / max(1, |a|, |n|).
inline double rel_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

inline double max_rel_error(const GradientSet& analytic, const GradientSet& numeric) {
    double worst = 0.0;
    auto scan = [&worst](const Tensor& a, const Tensor& n) {
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            worst = std::max(worst, rel_error(a.data[i], n.data[i]));
        }
    };
    for (std::size_t l = 0; l < analytic.trunk.size(); ++l) {
        scan(analytic.trunk[l].W, numeric.trunk[l].W);
        scan(analytic.trunk[l].b, numeric.trunk[l].b);
    }
    for (const auto& [id, g] : analytic.heads) {
        scan(g.W, numeric.heads.at(id).W);
        scan(g.b, numeric.heads.at(id).b);
    }
    return worst;
}

}  // namespace gradmix::testing
