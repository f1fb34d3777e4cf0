#include "gradmix/mix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gradmix/rng.hpp"

namespace gradmix {

namespace {

constexpr double kZeroNorm = 1e-12;

double dot_tensors(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

// Inner product over a layer's flattened parameters (weights then bias).
double dot_layer(const LayerTensors& a, const LayerTensors& b) {
    return dot_tensors(a.W, b.W) + dot_tensors(a.b, b.b);
}

// Per-layer problem data: the objective only needs pairwise inner products,
// so the solver cost is independent of the layer's parameter count.
struct LayerProblem {
    std::vector<double> gram;  // k x k, row-major: gram[i*k+j] = <g_i, g_j>
    std::vector<double> a;     // a[i] = <g_i, g_val>
    double vnorm = 0.0;        // ||g_val||
    bool degenerate = false;
};

LayerProblem build_layer_problem(const std::vector<GradientSet>& sources,
                                 const GradientSet& val, std::size_t layer) {
    const std::size_t k = sources.size();
    LayerProblem p;
    p.gram.assign(k * k, 0.0);
    p.a.assign(k, 0.0);
    p.vnorm = std::sqrt(std::max(0.0, dot_layer(val.trunk[layer], val.trunk[layer])));
    double max_source_norm2 = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i; j < k; ++j) {
            const double d = dot_layer(sources[i].trunk[layer], sources[j].trunk[layer]);
            p.gram[i * k + j] = d;
            p.gram[j * k + i] = d;
        }
        max_source_norm2 = std::max(max_source_norm2, p.gram[i * k + i]);
        p.a[i] = dot_layer(sources[i].trunk[layer], val.trunk[layer]);
    }
    p.degenerate = p.vnorm < kZeroNorm || std::sqrt(max_source_norm2) < kZeroNorm;
    return p;
}

// Objective: cossim(sum_i w_i g_i, g_val) expressed through the Gram data.
double objective(const LayerProblem& p, const std::vector<double>& w) {
    const std::size_t k = w.size();
    double num = 0.0;
    for (std::size_t i = 0; i < k; ++i) num += w[i] * p.a[i];
    double q = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double gw = 0.0;
        for (std::size_t j = 0; j < k; ++j) gw += p.gram[i * k + j] * w[j];
        q += w[i] * gw;
    }
    q = std::max(q, 0.0);
    const double den = p.vnorm * std::sqrt(q);
    if (den < kZeroNorm * kZeroNorm) return 0.0;
    return num / den;
}

// Projected gradient ascent on the unit simplex: the cosine objective is
// invariant to positive scaling of w, so clamping to w >= 0 and renormalizing
// the sum is an exact projection onto the feasible rays.
struct AscentResult {
    std::vector<double> w;
    double value = -std::numeric_limits<double>::infinity();
    std::size_t iterations = 0;
};

AscentResult ascend(const LayerProblem& p, std::vector<double> w, std::size_t max_iters,
                    double tol) {
    const std::size_t k = w.size();
    AscentResult res;
    double phi = objective(p, w);
    std::vector<double> grad(k), gw(k), cand(k);
    double q = 0.0;
    for (std::size_t it = 0; it < max_iters; ++it) {
        ++res.iterations;
        q = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += p.gram[i * k + j] * w[j];
            gw[i] = acc;
            q += w[i] * acc;
        }
        if (q < kZeroNorm * kZeroNorm) break;  // combined gradient vanished at this point
        double num = 0.0;
        for (std::size_t i = 0; i < k; ++i) num += w[i] * p.a[i];
        const double sq = std::sqrt(q);
        for (std::size_t i = 0; i < k; ++i) {
            grad[i] = p.a[i] / (p.vnorm * sq) - num * gw[i] / (p.vnorm * q * sq);
        }
        double gnorm = 0.0;
        for (double g : grad) gnorm += g * g;
        if (gnorm < 1e-30) break;

        bool accepted = false;
        for (double t = 1.0; t > 1e-13; t *= 0.5) {
            double sum = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                cand[i] = std::max(0.0, w[i] + t * grad[i]);
                sum += cand[i];
            }
            if (sum < 1e-15) continue;
            for (std::size_t i = 0; i < k; ++i) cand[i] /= sum;
            const double pc = objective(p, cand);
            if (pc > phi + 1e-15) {
                const double gain = pc - phi;
                w = cand;
                phi = pc;
                accepted = true;
                if (gain < tol) it = max_iters;  // converged
                break;
            }
        }
        if (!accepted) break;
    }
    res.w = std::move(w);
    res.value = phi;
    return res;
}

// Best feasible point over uniform, vertex, and random starts.
AscentResult solve_problem(const LayerProblem& p, std::size_t k, const SolverOptions& opts,
                           Rng& rng) {
    AscentResult best;
    std::vector<std::vector<double>> starts;
    starts.emplace_back(k, 1.0 / static_cast<double>(k));
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> v(k, 0.0);
        v[i] = 1.0;
        starts.push_back(std::move(v));
    }
    for (std::size_t r = 0; r < opts.restarts; ++r) {
        std::vector<double> v(k);
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            v[i] = -std::log(std::max(rng.uniform(), 1e-300));
            sum += v[i];
        }
        for (double& x : v) x /= sum;
        starts.push_back(std::move(v));
    }
    for (auto& s : starts) {
        AscentResult r = ascend(p, std::move(s), opts.max_iters, opts.tol);
        best.iterations += r.iterations;
        if (r.value > best.value) {
            best.value = r.value;
            best.w = std::move(r.w);
        }
    }
    if (best.w.empty()) best.w.assign(k, 1.0 / static_cast<double>(k));
    return best;
}

void check_alignment(const std::vector<GradientSet>& sources, const GradientSet& val) {
    if (sources.empty()) throw std::invalid_argument("need at least one source gradient");
    const std::size_t layers = val.trunk.size();
    for (const GradientSet& g : sources) {
        if (g.trunk.size() != layers)
            throw std::invalid_argument("source/validation trunk layer count mismatch");
        for (std::size_t l = 0; l < layers; ++l) {
            if (!g.trunk[l].W.same_shape(val.trunk[l].W) ||
                !g.trunk[l].b.same_shape(val.trunk[l].b))
                throw std::invalid_argument("gradient shape mismatch at trunk layer " +
                                            std::to_string(l));
        }
    }
}

std::vector<double> flatten_layer(const LayerTensors& t) {
    std::vector<double> flat;
    flat.reserve(t.numel());
    flat.insert(flat.end(), t.W.data.begin(), t.W.data.end());
    flat.insert(flat.end(), t.b.data.begin(), t.b.data.end());
    return flat;
}

}  // namespace

double cossim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cossim length mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    if (na < kZeroNorm || nb < kZeroNorm) return 0.0;
    return std::clamp(ab / (na * nb), -1.0, 1.0);
}

std::vector<double> normalize(std::span<const double> raw) {
    double sum = 0.0;
    for (double v : raw) {
        if (v < 0.0) throw std::invalid_argument("normalize: negative weight");
        sum += v;
    }
    std::vector<double> out(raw.begin(), raw.end());
    if (sum < kZeroNorm) {
        std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    } else {
        for (double& v : out) v /= sum;
    }
    return out;
}

double importance_score(const std::vector<double>& per_layer_cossim) {
    double rho = 0.0;
    for (double c : per_layer_cossim) rho += c;
    return rho;
}

double lr_scale(double rho, const AdaptiveLrParams& params) {
    const double z = params.beta * rho - params.gamma;
    double eta;
    if (z >= 0.0) {
        eta = 1.0 / (1.0 + std::exp(-z));
    } else {
        const double e = std::exp(z);
        eta = e / (1.0 + e);
    }
    // Keep eta strictly inside (0,1); the sigmoid saturates past |z| ~ 37.
    eta = std::min(eta, std::nextafter(1.0, 0.0));
    eta = std::max(eta, std::numeric_limits<double>::min());
    return eta;
}

GradientSet combine(const std::vector<GradientSet>& grads, const MixWeights& weights) {
    if (grads.empty()) throw std::invalid_argument("combine: no gradients");
    const std::size_t k = grads.size();
    const std::size_t layers = grads[0].trunk.size();
    if (weights.normalized.size() != layers)
        throw std::invalid_argument("combine: weight rows != trunk layers");
    for (const auto& row : weights.normalized) {
        if (row.size() != k) throw std::invalid_argument("combine: weight columns != sources");
    }
    for (const GradientSet& g : grads) {
        if (g.trunk.size() != layers) throw std::invalid_argument("combine: trunk mismatch");
    }

    GradientSet out;
    out.batch_size = 0;
    for (const GradientSet& g : grads) out.batch_size += g.batch_size;
    out.trunk.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        LayerTensors acc{Tensor(grads[0].trunk[l].W.shape), Tensor(grads[0].trunk[l].b.shape)};
        for (std::size_t i = 0; i < k; ++i) {
            const double w = weights.normalized[l][i];
            const LayerTensors& g = grads[i].trunk[l];
            if (!g.W.same_shape(acc.W) || !g.b.same_shape(acc.b))
                throw std::invalid_argument("combine: layer shape mismatch");
            if (w == 0.0) continue;
            for (std::size_t j = 0; j < acc.W.data.size(); ++j) acc.W.data[j] += w * g.W.data[j];
            for (std::size_t j = 0; j < acc.b.data.size(); ++j) acc.b.data[j] += w * g.b.data[j];
        }
        out.trunk.push_back(std::move(acc));
    }

    // Heads pass through outside the layer-wise weighting: each head gets the
    // mean of the gradients from the sources whose batch touched it.
    for (std::size_t i = 0; i < k; ++i) {
        for (const auto& [id, g] : grads[i].heads) {
            auto it = out.heads.find(id);
            if (it == out.heads.end()) {
                out.heads.emplace(id, LayerTensors{g.W, g.b});
            } else {
                if (!it->second.W.same_shape(g.W))
                    throw std::invalid_argument("combine: head shape mismatch");
                for (std::size_t j = 0; j < g.W.data.size(); ++j)
                    it->second.W.data[j] += g.W.data[j];
                for (std::size_t j = 0; j < g.b.data.size(); ++j)
                    it->second.b.data[j] += g.b.data[j];
            }
        }
    }
    for (auto& [id, acc] : out.heads) {
        std::size_t touching = 0;
        for (const GradientSet& g : grads) touching += g.heads.count(id);
        if (touching > 1) {
            const double inv = 1.0 / static_cast<double>(touching);
            for (double& v : acc.W.data) v *= inv;
            for (double& v : acc.b.data) v *= inv;
        }
    }
    return out;
}

MixWeights solve_layer_weights(const std::vector<GradientSet>& source_grads,
                               const GradientSet& val_grad, MixDiagnostics* diag,
                               const SolverOptions& opts) {
    check_alignment(source_grads, val_grad);
    const std::size_t k = source_grads.size();
    const std::size_t layers = val_grad.trunk.size();

    MixWeights weights;
    weights.raw.assign(layers, std::vector<double>(k, 1.0 / static_cast<double>(k)));
    weights.normalized = weights.raw;

    MixDiagnostics local;
    MixDiagnostics& d = diag ? *diag : local;
    d = MixDiagnostics{};
    d.per_layer_cossim.assign(layers, 0.0);
    d.degenerate_layers.assign(layers, 0);

    Rng rng(opts.seed);

    if (opts.mode == SolverMode::Global) {
        // One shared weight row: the objective is the cosine over the full
        // flattened trunk gradient, whose Gram data is the layer-wise sum.
        LayerProblem global;
        global.gram.assign(k * k, 0.0);
        global.a.assign(k, 0.0);
        double vnorm2 = 0.0;
        bool any_live = false;
        for (std::size_t l = 0; l < layers; ++l) {
            LayerProblem p = build_layer_problem(source_grads, val_grad, l);
            for (std::size_t i = 0; i < k * k; ++i) global.gram[i] += p.gram[i];
            for (std::size_t i = 0; i < k; ++i) global.a[i] += p.a[i];
            vnorm2 += p.vnorm * p.vnorm;
            any_live = any_live || !p.degenerate;
        }
        global.vnorm = std::sqrt(vnorm2);
        global.degenerate = !any_live || global.vnorm < kZeroNorm;
        if (global.degenerate) {
            d.degenerate = true;
            std::fill(d.degenerate_layers.begin(), d.degenerate_layers.end(), 1);
        } else {
            std::vector<double> row;
            if (k == 1) {
                row = {1.0};
                d.objective_value = objective(global, row);
            } else {
                AscentResult r = solve_problem(global, k, opts, rng);
                d.solver_iterations = r.iterations;
                d.objective_value = r.value;
                row = std::move(r.w);
            }
            for (std::size_t l = 0; l < layers; ++l) {
                weights.raw[l] = row;
                weights.normalized[l] = normalize(row);
                LayerProblem p = build_layer_problem(source_grads, val_grad, l);
                d.per_layer_cossim[l] = p.degenerate ? 0.0 : objective(p, weights.normalized[l]);
                d.degenerate_layers[l] = p.degenerate ? 1 : 0;
            }
        }
        d.rho = importance_score(d.per_layer_cossim);
        return weights;
    }

    bool any_live = false;
    for (std::size_t l = 0; l < layers; ++l) {
        LayerProblem p = build_layer_problem(source_grads, val_grad, l);
        if (p.degenerate) {
            d.degenerate_layers[l] = 1;
            continue;  // uniform fallback already in place, cossim stays 0
        }
        any_live = true;
        if (k == 1) {
            weights.raw[l] = {1.0};
            weights.normalized[l] = {1.0};
            d.per_layer_cossim[l] = objective(p, weights.raw[l]);
            continue;
        }
        AscentResult r = solve_problem(p, k, opts, rng);
        d.solver_iterations += r.iterations;
        weights.raw[l] = r.w;
        weights.normalized[l] = normalize(r.w);
        d.per_layer_cossim[l] = r.value;
    }
    d.degenerate = !any_live;
    d.rho = importance_score(d.per_layer_cossim);
    d.objective_value = d.rho;
    return weights;
}

MixWeights oracle_layer_weights(const std::vector<GradientSet>& source_grads,
                                const GradientSet& val_grad, double grid_step) {
    check_alignment(source_grads, val_grad);
    const std::size_t k = source_grads.size();
    if (k > 4) throw std::invalid_argument("oracle supports at most 4 sources");
    const double m_real = 1.0 / grid_step;
    const std::size_t m = static_cast<std::size_t>(std::llround(m_real));
    if (m == 0 || std::abs(m_real - static_cast<double>(m)) > 1e-9)
        throw std::invalid_argument("grid_step must divide 1");

    const std::size_t layers = val_grad.trunk.size();
    MixWeights weights;
    weights.raw.assign(layers, std::vector<double>(k, 1.0 / static_cast<double>(k)));
    weights.normalized = weights.raw;

    // Self-contained evaluation from the flattened vectors; this path shares
    // no arithmetic with the projected-gradient solver.
    for (std::size_t l = 0; l < layers; ++l) {
        std::vector<std::vector<double>> flat;
        flat.reserve(k);
        for (const GradientSet& g : source_grads) flat.push_back(flatten_layer(g.trunk[l]));
        const std::vector<double> v = flatten_layer(val_grad.trunk[l]);
        double vnorm = 0.0;
        for (double x : v) vnorm += x * x;
        vnorm = std::sqrt(vnorm);
        if (vnorm < kZeroNorm) continue;  // keep uniform for a dead layer

        const std::size_t dim = v.size();
        std::vector<double> combined(dim);
        std::vector<std::size_t> counts(k, 0);
        std::vector<double> best_w;
        double best_val = -std::numeric_limits<double>::infinity();

        // Enumerate grid points in lexicographic order of the weight vector so
        // the first maximum seen is the lexicographically smallest tie.
        auto enumerate = [&](auto&& self, std::size_t idx, std::size_t remaining) -> void {
            if (idx + 1 == k) {
                counts[idx] = remaining;
                std::fill(combined.begin(), combined.end(), 0.0);
                for (std::size_t i = 0; i < k; ++i) {
                    const double w = static_cast<double>(counts[i]) / static_cast<double>(m);
                    if (w == 0.0) continue;
                    const std::vector<double>& g = flat[i];
                    for (std::size_t j = 0; j < dim; ++j) combined[j] += w * g[j];
                }
                double dot = 0.0, norm2 = 0.0;
                for (std::size_t j = 0; j < dim; ++j) {
                    dot += combined[j] * v[j];
                    norm2 += combined[j] * combined[j];
                }
                const double norm = std::sqrt(norm2);
                const double value = norm < kZeroNorm ? 0.0 : dot / (norm * vnorm);
                if (value > best_val) {
                    best_val = value;
                    best_w.assign(k, 0.0);
                    for (std::size_t i = 0; i < k; ++i)
                        best_w[i] = static_cast<double>(counts[i]) / static_cast<double>(m);
                }
                return;
            }
            for (std::size_t c = 0; c <= remaining; ++c) {
                counts[idx] = c;
                self(self, idx + 1, remaining - c);
            }
        };
        enumerate(enumerate, 0, m);
        weights.raw[l] = best_w;
        weights.normalized[l] = normalize(best_w);
    }
    return weights;
}

MixDiagnostics gradmix_step(NetworkParams& params, const std::vector<GradientSet>& source_grads,
                            const GradientSet& val_grad, const AdaptiveLrParams& lrp,
                            MomentumState& momentum_state, const GradMixStepOptions& opts,
                            MixWeights* weights_out) {
    if (!(lrp.alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
    if (lrp.beta < 0.0) throw std::invalid_argument("beta must be >= 0");
    MixDiagnostics diag;
    MixWeights weights = solve_layer_weights(source_grads, val_grad, &diag, opts.solver);
    const GradientSet combined = combine(source_grads, weights);
    diag.eta = lr_scale(diag.rho, lrp);
    const double applied = opts.adaptive_lr ? diag.eta : 1.0;
    sgd_momentum_step(params, combined, applied * lrp.alpha, opts.momentum, momentum_state);
    if (weights_out) *weights_out = std::move(weights);
    return diag;
}

}  // namespace gradmix
