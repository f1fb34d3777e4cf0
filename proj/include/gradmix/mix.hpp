#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gradmix/net.hpp"

namespace gradmix {

// Per-layer, per-source mixing coefficients. raw is the solver's feasible
// point (w >= 0); normalized rows sum to one.
struct MixWeights {
    std::vector<std::vector<double>> raw;         // [trunk layer][source]
    std::vector<std::vector<double>> normalized;  // [trunk layer][source]

    std::size_t layers() const { return raw.size(); }
    std::size_t sources() const { return raw.empty() ? 0 : raw[0].size(); }
};

struct AdaptiveLrParams {
    double beta = 0.0;   // saturation rate, >= 0
    double gamma = 0.0;  // horizontal shift
    double alpha = 0.0;  // base learning rate, > 0
};

struct MixDiagnostics {
    double rho = 0.0;              // sum of per-layer cosine similarities
    double eta = 0.0;              // sigmoid(beta*rho - gamma), in (0,1)
    double objective_value = 0.0;  // achieved mixing objective
    std::vector<double> per_layer_cossim;
    std::size_t solver_iterations = 0;
    bool degenerate = false;       // validation gradient vanished everywhere
    std::vector<std::uint8_t> degenerate_layers;
};

enum class SolverMode {
    Layerwise,  // one weight row per trunk layer
    Global,     // one shared row across the whole trunk
};

struct SolverOptions {
    std::size_t max_iters = 200;   // projected-gradient iterations per start
    std::size_t restarts = 3;      // random restarts beyond uniform + vertex starts
    double tol = 1e-12;            // objective improvement stopping threshold
    std::uint64_t seed = 0x5eedULL;
    SolverMode mode = SolverMode::Layerwise;
};

// Cosine similarity; 0 when either vector's norm falls below 1e-12.
double cossim(std::span<const double> a, std::span<const double> b);

// Row normalization to unit sum; rows with vanishing sum become uniform.
// Negative entries are rejected.
std::vector<double> normalize(std::span<const double> raw);

double importance_score(const std::vector<double>& per_layer_cossim);

// eta = 1 / (1 + exp(-(beta*rho - gamma))), clamped into the open unit interval.
double lr_scale(double rho, const AdaptiveLrParams& params);

// Convex combination of source trunk gradients under normalized weights;
// head gradients are averaged across the sources that touched each head.
GradientSet combine(const std::vector<GradientSet>& grads, const MixWeights& weights);

// Maximizes, per trunk layer, the cosine similarity between the weighted
// source gradient and the validation gradient, subject to w >= 0. Projected
// gradient ascent over the unit simplex (the objective is scale-free).
MixWeights solve_layer_weights(const std::vector<GradientSet>& source_grads,
                               const GradientSet& val_grad, MixDiagnostics* diag = nullptr,
                               const SolverOptions& opts = {});

// Exhaustive simplex grid maximizer (verification oracle); k <= 4 sources.
// Ties break toward the lexicographically smallest weight vector.
MixWeights oracle_layer_weights(const std::vector<GradientSet>& source_grads,
                                const GradientSet& val_grad, double grid_step);

struct GradMixStepOptions {
    double momentum = 0.9;
    bool adaptive_lr = true;  // false forces eta = 1 in the applied step size
    SolverOptions solver;
};

// One mixed update: solve weights, combine, scale the learning rate by eta,
// and apply the momentum rule to trunk and touched heads. weights_out, when
// given, receives the solved mixing weights.
MixDiagnostics gradmix_step(NetworkParams& params, const std::vector<GradientSet>& source_grads,
                            const GradientSet& val_grad, const AdaptiveLrParams& lrp,
                            MomentumState& momentum_state, const GradMixStepOptions& opts = {},
                            MixWeights* weights_out = nullptr);

}  // namespace gradmix
