#include "gradmix/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "gradmix/rng.hpp"
#include "nlohmann/json.hpp"

namespace gradmix {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kHeadPolicy =
    "heads: mean over assigned sources; target head shared with the same-label-space source";

std::uint64_t fnv1a_bytes(const void* data, std::size_t len,
                          std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

std::uint64_t hash_params(const NetworkParams& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const LayerTensors& t : p.trunk) {
        h = fnv1a_bytes(t.W.data.data(), t.W.data.size() * sizeof(double), h);
        h = fnv1a_bytes(t.b.data.data(), t.b.data.size() * sizeof(double), h);
    }
    for (const auto& [id, t] : p.heads) {
        h = fnv1a_bytes(id.data(), id.size(), h);
        h = fnv1a_bytes(t.W.data.data(), t.W.data.size() * sizeof(double), h);
        h = fnv1a_bytes(t.b.data.data(), t.b.data.size() * sizeof(double), h);
    }
    return h;
}

Targets batch_targets(const Batch& b) {
    if (!b.soft_labels.empty()) return Targets{b.soft_labels};
    return Targets{b.labels};
}

GradientSet sum_gradients(const std::vector<GradientSet>& grads) {
    GradientSet out;
    out.batch_size = 0;
    const std::size_t layers = grads.at(0).trunk.size();
    for (const GradientSet& g : grads) out.batch_size += g.batch_size;
    out.trunk.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        LayerTensors acc{Tensor(grads[0].trunk[l].W.shape), Tensor(grads[0].trunk[l].b.shape)};
        for (const GradientSet& g : grads) {
            for (std::size_t j = 0; j < acc.W.data.size(); ++j) acc.W.data[j] += g.trunk[l].W.data[j];
            for (std::size_t j = 0; j < acc.b.data.size(); ++j) acc.b.data[j] += g.trunk[l].b.data[j];
        }
        out.trunk.push_back(std::move(acc));
    }
    for (const GradientSet& g : grads) {
        for (const auto& [id, hg] : g.heads) {
            auto it = out.heads.find(id);
            if (it == out.heads.end()) {
                out.heads.emplace(id, LayerTensors{hg.W, hg.b});
            } else {
                for (std::size_t j = 0; j < hg.W.data.size(); ++j) it->second.W.data[j] += hg.W.data[j];
                for (std::size_t j = 0; j < hg.b.data.size(); ++j) it->second.b.data[j] += hg.b.data[j];
            }
        }
    }
    return out;
}

struct EvalState {
    double best_acc = -1.0;
    std::size_t best_step = 0;
    NetworkParams best_params;
};

void run_eval(const NetworkParams& params, const std::string& head, const LabeledDataset& hyper,
              std::size_t step, RunRecord& record, EvalState& state) {
    const Tensor logits = forward(params, head, hyper.images);
    const LossResult lr = cross_entropy_loss(logits, hyper.labels);
    std::size_t correct = 0;
    const std::size_t C = logits.shape[1];
    for (std::size_t n = 0; n < hyper.size(); ++n) {
        std::size_t argmax = 0;
        for (std::size_t c = 1; c < C; ++c) {
            if (logits.at2(n, c) > logits.at2(n, argmax)) argmax = c;
        }
        correct += (static_cast<int>(argmax) == hyper.labels[n]);
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(hyper.size());
    record.evals.push_back({step, lr.loss, acc});
    if (acc > state.best_acc) {
        state.best_acc = acc;
        state.best_step = step;
        state.best_params = params;
    }
}

void finish_record(RunRecord& record) {
    if (!record.step_ms.empty()) {
        record.mean_batch_ms = std::accumulate(record.step_ms.begin(), record.step_ms.end(), 0.0) /
                               static_cast<double>(record.step_ms.size());
    }
}

NetworkParams build_network(const RunConfig& cfg, const DataBundle& bundle,
                            std::uint64_t init_seed) {
    const NetworkArch arch =
        digit_arch(bundle.sources.at(0).images.shape[1], cfg.model.conv_channels,
                   cfg.model.fc_width, bundle.head_map(), bundle.sources.at(0).images.shape[3]);
    return init_network(arch, init_seed);
}

class StepTimer {
public:
    void start() { t0_ = std::chrono::steady_clock::now(); }
    double stop_ms() const {
        const auto t1 = std::chrono::steady_clock::now();
        return std::chrono::duration<double, std::milli>(t1 - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace

std::string mode_name(RunMode m) {
    switch (m) {
        case RunMode::TargetOnly: return "target-only";
        case RunMode::SourceOnly: return "source-only";
        case RunMode::FineTune: return "fine-tune";
        case RunMode::GradMix: return "gradmix";
        case RunMode::GradMixNoAdaLr: return "gradmix-no-adalr";
        case RunMode::GradMixPseudoHard: return "gradmix-pseudo-hard";
        case RunMode::GradMixPseudoSoft: return "gradmix-pseudo-soft";
    }
    return "gradmix";
}

RunMode mode_from_name(const std::string& name) {
    if (name == "target-only") return RunMode::TargetOnly;
    if (name == "source-only") return RunMode::SourceOnly;
    if (name == "fine-tune") return RunMode::FineTune;
    if (name == "gradmix") return RunMode::GradMix;
    if (name == "gradmix-no-adalr") return RunMode::GradMixNoAdaLr;
    if (name == "gradmix-pseudo-hard") return RunMode::GradMixPseudoHard;
    if (name == "gradmix-pseudo-soft") return RunMode::GradMixPseudoSoft;
    throw std::invalid_argument("unknown mode '" + name + "'");
}

std::string config_digest(const RunConfig& cfg) {
    json j;
    j["mode"] = mode_name(cfg.mode);
    j["seed"] = cfg.seed;
    j["k_per_class"] = cfg.k_per_class;
    j["hyper_val_size"] = cfg.hyper_val_size;
    j["alpha"] = cfg.alpha;
    j["momentum"] = cfg.momentum;
    j["beta"] = cfg.beta;
    j["gamma"] = cfg.gamma;
    j["fine_tune_alpha"] = cfg.fine_tune_alpha;
    j["batch_size"] = cfg.batch_size;
    j["max_steps"] = cfg.max_steps;
    j["eval_cadence"] = cfg.eval_cadence;
    j["fine_tune_steps"] = cfg.fine_tune_steps;
    j["conv_channels"] = cfg.model.conv_channels;
    j["fc_width"] = cfg.model.fc_width;
    j["pseudo_threshold"] = cfg.pseudo_threshold;
    j["ensemble_r"] = cfg.ensemble_r;
    j["enlarge_per_class"] = cfg.enlarge_per_class;
    j["beta_list"] = cfg.beta_list;
    j["gamma_list"] = cfg.gamma_list;
    j["grid_max_steps"] = cfg.grid_max_steps;
    const std::string text = j.dump();
    return hex64(fnv1a_bytes(text.data(), text.size()));
}

std::map<std::string, std::size_t> DataBundle::head_map() const {
    std::map<std::string, std::size_t> heads;
    auto add = [&heads](const DomainSpec& d) {
        auto [it, inserted] = heads.emplace(d.head_id, d.num_classes());
        if (!inserted && it->second != d.num_classes())
            throw std::invalid_argument("head '" + d.head_id + "' has conflicting class counts");
    };
    for (const LabeledDataset& s : sources) add(s.domain);
    add(test.domain);
    return heads;
}

void DataBundle::validate() const {
    if (sources.empty()) throw std::invalid_argument("bundle: need at least one source");
    std::size_t same_count = 0;
    for (const LabeledDataset& s : sources) {
        s.domain.validate();
        if (s.domain.relation_to_target == Relation::Same) {
            ++same_count;
            if (s.domain.head_id != target_head)
                throw std::invalid_argument(
                    "bundle: the same-label-space source must share the target head");
        }
    }
    if (same_count != 1)
        throw std::invalid_argument("bundle: exactly one source must have the target label space");
    head_map();  // throws on conflicts
}

double evaluate(const NetworkParams& params, const std::string& head, const LabeledDataset& test) {
    if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
    if (!test.labeled()) throw std::invalid_argument("evaluate: unlabeled test set");
    auto it = params.arch.heads.find(head);
    if (it == params.arch.heads.end()) throw std::invalid_argument("evaluate: unknown head");
    if (it->second != test.domain.num_classes())
        throw std::invalid_argument("evaluate: label space size mismatch");

    const std::size_t batch = 256;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < test.size(); start += batch) {
        std::vector<std::size_t> rows;
        for (std::size_t r = start; r < std::min(test.size(), start + batch); ++r)
            rows.push_back(r);
        const LabeledDataset slice = test.select_rows(rows);
        const Tensor logits = forward(params, head, slice.images);
        const std::size_t C = logits.shape[1];
        for (std::size_t n = 0; n < rows.size(); ++n) {
            std::size_t argmax = 0;
            for (std::size_t c = 1; c < C; ++c) {
                if (logits.at2(n, c) > logits.at2(n, argmax)) argmax = c;
            }
            correct += (static_cast<int>(argmax) == slice.labels[n]);
        }
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

TrainResult train_source_only(const RunConfig& cfg, const DataBundle& bundle) {
    bundle.validate();
    NetworkParams params = build_network(cfg, bundle, Rng::derive(cfg.seed, 0));
    MomentumState mom = make_momentum_state(params);

    std::vector<BatchIterator> iters;
    for (std::size_t i = 0; i < bundle.sources.size(); ++i) {
        iters.emplace_back(bundle.sources[i], cfg.batch_size, Rng::derive(cfg.seed, 100 + i));
    }

    RunRecord record;
    record.mode = mode_name(RunMode::SourceOnly);
    record.digest = config_digest(cfg);
    record.seed = cfg.seed;
    record.head_policy = kHeadPolicy;
    EvalState eval_state;
    StepTimer timer;

    for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
        timer.start();
        std::vector<GradientSet> grads;
        grads.reserve(bundle.sources.size());
        for (std::size_t i = 0; i < bundle.sources.size(); ++i) {
            const Batch b = iters[i].next();
            grads.push_back(backward(params, bundle.sources[i].domain.head_id, b.images,
                                     batch_targets(b)));
        }
        const GradientSet summed = sum_gradients(grads);
        sgd_momentum_step(params, summed, cfg.alpha, cfg.momentum, mom);
        record.step_ms.push_back(timer.stop_ms());
        if (cfg.record_trajectory) record.trajectory.push_back(hash_params(params));
        if (step % cfg.eval_cadence == 0) {
            run_eval(params, bundle.target_head, bundle.splits.hyper_val, step, record, eval_state);
        }
    }
    if (eval_state.best_acc < 0.0) {
        eval_state.best_params = params;
        eval_state.best_step = cfg.max_steps;
    }
    record.best_eval_step = eval_state.best_step;
    record.final_test_accuracy = evaluate(eval_state.best_params, bundle.target_head, bundle.test);
    finish_record(record);

    TrainResult result{std::move(record), std::move(eval_state.best_params), std::move(params)};
    if (!cfg.out_dir.empty()) write_run_outputs(cfg, result.record, result.best_params);
    return result;
}

namespace {

TrainResult train_on_validation(const RunConfig& cfg, const DataBundle& bundle,
                                NetworkParams params, double lr, std::size_t steps,
                                RunMode reported_mode) {
    const LabeledDataset& v = bundle.splits.validation;
    if (v.size() == 0) throw std::invalid_argument("validation set is empty");
    MomentumState mom = make_momentum_state(params);
    BatchIterator iter(v, std::min(cfg.batch_size, v.size()), Rng::derive(cfg.seed, 200));

    RunRecord record;
    record.mode = mode_name(reported_mode);
    record.digest = config_digest(cfg);
    record.seed = cfg.seed;
    record.head_policy = kHeadPolicy;
    EvalState eval_state;
    StepTimer timer;

    for (std::size_t step = 1; step <= steps; ++step) {
        timer.start();
        const Batch b = iter.next();
        const GradientSet g = backward(params, bundle.target_head, b.images, batch_targets(b));
        sgd_momentum_step(params, g, lr, cfg.momentum, mom);
        record.step_ms.push_back(timer.stop_ms());
        if (cfg.record_trajectory) record.trajectory.push_back(hash_params(params));
        if (step % cfg.eval_cadence == 0) {
            run_eval(params, bundle.target_head, bundle.splits.hyper_val, step, record, eval_state);
        }
    }
    if (eval_state.best_acc < 0.0) {
        eval_state.best_params = params;
        eval_state.best_step = steps;
    }
    record.best_eval_step = eval_state.best_step;
    record.final_test_accuracy = evaluate(eval_state.best_params, bundle.target_head, bundle.test);
    finish_record(record);

    TrainResult result{std::move(record), std::move(eval_state.best_params), std::move(params)};
    if (!cfg.out_dir.empty()) write_run_outputs(cfg, result.record, result.best_params);
    return result;
}

}  // namespace

TrainResult train_target_only(const RunConfig& cfg, const DataBundle& bundle) {
    bundle.validate();
    NetworkParams params = build_network(cfg, bundle, Rng::derive(cfg.seed, 0));
    return train_on_validation(cfg, bundle, std::move(params), cfg.alpha, cfg.max_steps,
                               RunMode::TargetOnly);
}

TrainResult fine_tune(const RunConfig& cfg, const DataBundle& bundle,
                      const NetworkParams& checkpoint) {
    bundle.validate();
    if (checkpoint.trunk.empty()) throw std::invalid_argument("fine_tune: missing checkpoint");
    if (cfg.fine_tune_steps == 0) {
        RunRecord record;
        record.mode = mode_name(RunMode::FineTune);
        record.digest = config_digest(cfg);
        record.seed = cfg.seed;
        record.head_policy = kHeadPolicy;
        record.final_test_accuracy = evaluate(checkpoint, bundle.target_head, bundle.test);
        return TrainResult{std::move(record), checkpoint, checkpoint};
    }
    return train_on_validation(cfg, bundle, checkpoint, cfg.fine_tune_alpha, cfg.fine_tune_steps,
                               RunMode::FineTune);
}

TrainResult train_gradmix(const RunConfig& cfg, const DataBundle& bundle) {
    bundle.validate();
    const bool adaptive = cfg.mode != RunMode::GradMixNoAdaLr;
    const LabeledDataset& v = bundle.splits.validation;
    if (v.size() == 0) throw std::invalid_argument("train_gradmix: empty validation set");

    NetworkParams params = build_network(cfg, bundle, Rng::derive(cfg.seed, 0));
    MomentumState mom = make_momentum_state(params);

    std::vector<BatchIterator> iters;
    for (std::size_t i = 0; i < bundle.sources.size(); ++i) {
        iters.emplace_back(bundle.sources[i], cfg.batch_size, Rng::derive(cfg.seed, 100 + i));
    }

    GradMixStepOptions step_opts;
    step_opts.momentum = cfg.momentum;
    step_opts.adaptive_lr = adaptive;
    step_opts.solver = cfg.solver;
    const AdaptiveLrParams lrp{cfg.beta, cfg.gamma, cfg.alpha};

    RunRecord record;
    record.mode = mode_name(cfg.mode);
    record.digest = config_digest(cfg);
    record.seed = cfg.seed;
    record.head_policy = kHeadPolicy;
    EvalState eval_state;
    StepTimer timer;

    const Targets v_targets{v.labels};

    for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
        timer.start();
        std::vector<GradientSet> grads;
        grads.reserve(bundle.sources.size());
        for (std::size_t i = 0; i < bundle.sources.size(); ++i) {
            const Batch b = iters[i].next();
            grads.push_back(backward(params, bundle.sources[i].domain.head_id, b.images,
                                     batch_targets(b)));
        }
        // The validation gradient is recomputed on the full V every step.
        const GradientSet val_grad = backward(params, bundle.target_head, v.images, v_targets);
        MixWeights weights;
        const MixDiagnostics diag =
            gradmix_step(params, grads, val_grad, lrp, mom, step_opts, &weights);
        record.step_ms.push_back(timer.stop_ms());

        StepDiagRecord sd;
        sd.step = step;
        sd.rho = diag.rho;
        sd.eta = diag.eta;
        sd.objective = diag.objective_value;
        sd.solver_iterations = diag.solver_iterations;
        sd.degenerate = diag.degenerate;
        sd.weights = std::move(weights.normalized);
        record.steps.push_back(std::move(sd));
        if (cfg.record_trajectory) record.trajectory.push_back(hash_params(params));
        if (step % cfg.eval_cadence == 0) {
            run_eval(params, bundle.target_head, bundle.splits.hyper_val, step, record, eval_state);
        }
    }
    if (eval_state.best_acc < 0.0) {
        eval_state.best_params = params;
        eval_state.best_step = cfg.max_steps;
    }
    record.best_eval_step = eval_state.best_step;
    record.final_test_accuracy = evaluate(eval_state.best_params, bundle.target_head, bundle.test);
    finish_record(record);

    TrainResult result{std::move(record), std::move(eval_state.best_params), std::move(params)};
    if (!cfg.out_dir.empty()) write_run_outputs(cfg, result.record, result.best_params);
    return result;
}

std::vector<GridCell> grid_search(const RunConfig& cfg, const DataBundle& bundle,
                                  const std::vector<double>& beta_list,
                                  const std::vector<double>& gamma_list) {
    if (beta_list.empty() || gamma_list.empty())
        throw std::invalid_argument("grid_search: empty grid");
    std::vector<GridCell> cells;
    for (double beta : beta_list) {
        for (double gamma : gamma_list) {
            RunConfig cell_cfg = cfg;
            cell_cfg.mode = RunMode::GradMix;
            cell_cfg.beta = beta;
            cell_cfg.gamma = gamma;
            if (cfg.grid_max_steps > 0) cell_cfg.max_steps = cfg.grid_max_steps;
            cell_cfg.out_dir.clear();
            TrainResult r = train_gradmix(cell_cfg, bundle);
            GridCell cell;
            cell.beta = beta;
            cell.gamma = gamma;
            double best_acc = 0.0;
            for (const EvalPoint& e : r.record.evals) best_acc = std::max(best_acc, e.hyper_acc);
            cell.hyper_acc = best_acc;
            cell.params = std::move(r.best_params);
            cell.record = std::move(r.record);
            cells.push_back(std::move(cell));
        }
    }
    std::stable_sort(cells.begin(), cells.end(), [](const GridCell& a, const GridCell& b) {
        if (a.hyper_acc != b.hyper_acc) return a.hyper_acc > b.hyper_acc;
        if (a.beta != b.beta) return a.beta < b.beta;
        return a.gamma < b.gamma;
    });
    return cells;
}

EnsembleSpec top_r_ensemble(const std::vector<GridCell>& cells, std::size_t R) {
    EnsembleSpec ensemble;
    for (const GridCell& cell : cells) {
        if (ensemble.members.size() >= R) break;
        EnsembleMember m;
        m.params = cell.params;
        m.hyper_val_accuracy = cell.hyper_acc;
        m.beta = cell.beta;
        m.gamma = cell.gamma;
        m.label = "beta=" + std::to_string(cell.beta) + ",gamma=" + std::to_string(cell.gamma);
        ensemble.members.push_back(std::move(m));
    }
    ensemble.rank();
    return ensemble;
}

PseudoPipelineResult pseudo_pipeline(const RunConfig& cfg, const DataBundle& bundle) {
    bundle.validate();
    if (bundle.splits.unlabeled.size() == 0)
        throw std::invalid_argument("pseudo_pipeline: empty unlabeled pool");
    const PseudoMode mode =
        cfg.mode == RunMode::GradMixPseudoSoft ? PseudoMode::Soft : PseudoMode::Hard;

    PseudoPipelineResult out;
    out.grid = grid_search(cfg, bundle, cfg.beta_list, cfg.gamma_list);
    out.ensemble = top_r_ensemble(out.grid, cfg.ensemble_r);

    out.hard_set = build_pseudo_set(bundle.splits.unlabeled, out.ensemble, bundle.target_head,
                                    PseudoMode::Hard, cfg.pseudo_threshold);
    out.pseudo_set = mode == PseudoMode::Hard
                         ? out.hard_set
                         : build_pseudo_set(bundle.splits.unlabeled, out.ensemble,
                                            bundle.target_head, PseudoMode::Soft,
                                            cfg.pseudo_threshold);
    out.enlarged_validation = enlarge_validation(bundle.splits.validation,
                                                 bundle.splits.unlabeled, out.hard_set,
                                                 cfg.enlarge_per_class);

    DataBundle stage2 = bundle;
    stage2.splits.validation = out.enlarged_validation;
    if (!out.pseudo_set.items.empty()) {
        DomainSpec pseudo_domain = bundle.test.domain;
        pseudo_domain.relation_to_target = Relation::PartialOverlap;  // extra column, own loss
        pseudo_domain.head_id = bundle.target_head;
        LabeledDataset s_u =
            pseudo_dataset(bundle.splits.unlabeled, out.pseudo_set, pseudo_domain);
        stage2.sources.push_back(std::move(s_u));
        out.pseudo_source_used = true;
    } else {
        std::cerr << "warning: pseudo-label set is empty; training without the extra source\n";
    }

    RunConfig stage2_cfg = cfg;
    stage2_cfg.seed = Rng::derive(cfg.seed, 7777);  // fresh model, trained from scratch
    out.stage2 = train_gradmix(stage2_cfg, stage2);
    return out;
}

void write_run_outputs(const RunConfig& cfg, const RunRecord& record,
                       const NetworkParams& best_params) {
    fs::create_directories(cfg.out_dir);
    const fs::path dir(cfg.out_dir);

    {
        std::ofstream out(dir / "metrics.jsonl", std::ios::trunc);
        json header;
        header["record"] = "run";
        header["mode"] = record.mode;
        header["config_digest"] = record.digest;
        header["seed"] = record.seed;
        header["head_policy"] = record.head_policy;
        out << header.dump() << "\n";
        for (const StepDiagRecord& s : record.steps) {
            json j;
            j["record"] = "step";
            j["step"] = s.step;
            j["rho"] = s.rho;
            j["eta"] = s.eta;
            j["objective"] = s.objective;
            j["solver_iterations"] = s.solver_iterations;
            j["degenerate"] = s.degenerate;
            if (!s.weights.empty()) j["weights"] = s.weights;
            out << j.dump() << "\n";
        }
        for (const EvalPoint& e : record.evals) {
            json j;
            j["record"] = "eval";
            j["step"] = e.step;
            j["hyper_loss"] = e.hyper_loss;
            j["hyper_acc"] = e.hyper_acc;
            out << j.dump() << "\n";
        }
        json fin;
        fin["record"] = "final";
        fin["test_accuracy"] = record.final_test_accuracy;
        fin["mean_batch_ms"] = record.mean_batch_ms;
        fin["best_eval_step"] = record.best_eval_step;
        out << fin.dump() << "\n";
    }
    {
        std::ofstream out(dir / "hyperval.tsv", std::ios::trunc);
        out << "step\thyper_loss\thyper_acc\n";
        for (const EvalPoint& e : record.evals)
            out << e.step << "\t" << e.hyper_loss << "\t" << e.hyper_acc << "\n";
    }
    if (!record.steps.empty() && !record.steps.front().weights.empty()) {
        std::ofstream out(dir / "weights.tsv", std::ios::trunc);
        out << "step\tlayer";
        for (std::size_t i = 0; i < record.steps.front().weights.front().size(); ++i)
            out << "\tw" << i;
        out << "\n";
        for (const StepDiagRecord& s : record.steps) {
            for (std::size_t l = 0; l < s.weights.size(); ++l) {
                out << s.step << "\t" << l;
                for (double w : s.weights[l]) out << "\t" << w;
                out << "\n";
            }
        }
    }
    save_checkpoint((dir / "best.ckpt").string(), best_params);
}

void append_summary_row(const std::string& path, const std::string& mode, std::size_t k,
                        double mean_acc, double stderr_acc, std::size_t runs) {
    const bool exists = fs::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot write summary table: " + path);
    if (!exists) out << "mode\tk\tmean_accuracy\tstderr\truns\n";
    out << mode << "\t" << k << "\t" << mean_acc << "\t" << stderr_acc << "\t" << runs << "\n";
}

}  // namespace gradmix
