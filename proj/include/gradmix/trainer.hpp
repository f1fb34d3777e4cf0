#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gradmix/datasets.hpp"
#include "gradmix/mix.hpp"
#include "gradmix/net.hpp"
#include "gradmix/pseudolabel.hpp"

namespace gradmix {

enum class RunMode {
    TargetOnly,
    SourceOnly,
    FineTune,
    GradMix,
    GradMixNoAdaLr,
    GradMixPseudoHard,
    GradMixPseudoSoft,
};

std::string mode_name(RunMode m);
RunMode mode_from_name(const std::string& name);

struct ModelConfig {
    std::vector<std::size_t> conv_channels{8, 16, 16, 32};
    std::size_t fc_width = 48;
};

struct RunConfig {
    RunMode mode = RunMode::GradMix;
    std::uint64_t seed = 1;
    std::size_t k_per_class = 5;
    std::size_t hyper_val_size = 500;
    double alpha = 0.05;
    double momentum = 0.9;
    double beta = 10.0;
    double gamma = 0.6;
    double fine_tune_alpha = 0.005;
    std::size_t batch_size = 64;
    std::size_t max_steps = 3000;
    std::size_t eval_cadence = 100;  // steps per monitoring "epoch"
    std::size_t fine_tune_steps = 500;
    ModelConfig model;

    // pseudo-label pipeline
    double pseudo_threshold = 0.8;
    std::size_t ensemble_r = 3;
    std::size_t enlarge_per_class = 100;
    std::vector<double> beta_list{5.0, 8.0, 10.0};
    std::vector<double> gamma_list{0.6};
    std::size_t grid_max_steps = 0;  // 0 = max_steps

    SolverOptions solver;
    bool record_trajectory = false;  // per-step parameter hashes, for identity checks
    std::string out_dir;             // empty = no file output
};

std::string config_digest(const RunConfig& cfg);

// All datasets for one run. Source order defines the mixing-weight columns.
struct DataBundle {
    std::vector<LabeledDataset> sources;
    LabeledDataset test;
    Splits splits;                 // V / hyper-validation / U over the target pool
    std::string target_head;

    std::map<std::string, std::size_t> head_map() const;
    void validate() const;
};

struct StepDiagRecord {
    std::size_t step = 0;
    double rho = 0.0, eta = 0.0, objective = 0.0;
    std::size_t solver_iterations = 0;
    bool degenerate = false;
    std::vector<std::vector<double>> weights;  // normalized, [layer][source]
};

struct EvalPoint {
    std::size_t step = 0;
    double hyper_loss = 0.0;
    double hyper_acc = 0.0;
};

struct RunRecord {
    std::string mode;
    std::string digest;
    std::uint64_t seed = 0;
    std::string head_policy;
    std::vector<StepDiagRecord> steps;  // gradient-mixing modes only
    std::vector<EvalPoint> evals;
    std::vector<double> step_ms;        // wall time of each training step
    std::vector<std::uint64_t> trajectory;  // per-step parameter hashes if requested
    double final_test_accuracy = 0.0;
    double mean_batch_ms = 0.0;
    std::size_t best_eval_step = 0;
};

struct TrainResult {
    RunRecord record;
    NetworkParams best_params;
    NetworkParams final_params;
};

// Argmax accuracy of `params`' head on a labeled dataset.
double evaluate(const NetworkParams& params, const std::string& head, const LabeledDataset& test);

// Eq.-style summed-gradient baseline: one batch per source, unweighted sum,
// fixed learning rate. Ignores the validation set.
TrainResult train_source_only(const RunConfig& cfg, const DataBundle& bundle);

// Trains on V alone.
TrainResult train_target_only(const RunConfig& cfg, const DataBundle& bundle);

// Continues from a checkpoint on V at the reduced fine-tuning rate.
TrainResult fine_tune(const RunConfig& cfg, const DataBundle& bundle,
                      const NetworkParams& checkpoint);

// The mixing loop: per step, one batch per source plus a full-V
// forward-backward, layer-wise weight solving, adaptive learning rate,
// momentum update. RunMode::GradMixNoAdaLr pins the applied eta to 1.
TrainResult train_gradmix(const RunConfig& cfg, const DataBundle& bundle);

struct GridCell {
    double beta = 0.0, gamma = 0.0;
    double hyper_acc = 0.0;
    NetworkParams params;
    RunRecord record;
};

// One gradient-mixing run per (beta, gamma) cell, ranked by hyper-validation
// accuracy (ties: lexicographic (beta, gamma)).
std::vector<GridCell> grid_search(const RunConfig& cfg, const DataBundle& bundle,
                                  const std::vector<double>& beta_list,
                                  const std::vector<double>& gamma_list);

EnsembleSpec top_r_ensemble(const std::vector<GridCell>& cells, std::size_t R);

struct PseudoPipelineResult {
    std::vector<GridCell> grid;
    EnsembleSpec ensemble;
    PseudoLabeledSet pseudo_set;   // the set actually trained on
    PseudoLabeledSet hard_set;     // always computed; drives V enlargement
    LabeledDataset enlarged_validation;
    TrainResult stage2;
    bool pseudo_source_used = false;
};

// Stage 1: grid search -> top-R ensemble labels U. Stage 2: enlarge V with
// hard labels. Stage 3: fresh mixing run with the pseudo-labeled set as an
// extra source (cross-entropy for hard labels, KL for soft rows).
PseudoPipelineResult pseudo_pipeline(const RunConfig& cfg, const DataBundle& bundle);

// Line-delimited record stream plus plot-ready series under cfg.out_dir.
void write_run_outputs(const RunConfig& cfg, const RunRecord& record,
                       const NetworkParams& best_params);

// Appends one `mode x k -> accuracy` line; creates the file with a header
// when absent.
void append_summary_row(const std::string& path, const std::string& mode, std::size_t k,
                        double mean_acc, double stderr_acc, std::size_t runs);

}  // namespace gradmix
