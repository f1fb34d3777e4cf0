#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gradmix/datasets.hpp"
#include "gradmix/net.hpp"

namespace gradmix {

struct EnsembleMember {
    NetworkParams params;
    double hyper_val_accuracy = 0.0;
    double beta = 0.0, gamma = 0.0;  // the grid cell the member came from
    std::string label;               // free-form provenance (checkpoint path or cell tag)
};

// Members ranked by hyper-validation accuracy descending; ties break on
// (beta, gamma) ascending.
struct EnsembleSpec {
    std::vector<EnsembleMember> members;

    std::size_t R() const { return members.size(); }
    void rank();
    std::string digest() const;
};

enum class PseudoMode { Hard, Soft };

struct PseudoItem {
    std::size_t u_index = 0;        // row into the unlabeled pool
    int hard_label = -1;            // hard mode only
    std::vector<double> soft_row;   // soft mode only
    double min_confidence = 0.0;    // hard mode: min over members of P(label)
};

struct PseudoLabeledSet {
    PseudoMode mode = PseudoMode::Hard;
    std::vector<PseudoItem> items;
    double threshold_used = 0.0;
    std::size_t num_classes = 0;
    std::string provenance;  // ensemble digest
};

// Softmax rows from each member for one image (1,H,W,C); R rows of length C.
std::vector<std::vector<double>> ensemble_predict(const EnsembleSpec& ensemble,
                                                  const std::string& head, const Tensor& image);

// Batched form: R tensors of shape (N, C), one per member.
std::vector<Tensor> ensemble_predict_batch(const EnsembleSpec& ensemble, const std::string& head,
                                           const Tensor& images);

// Unanimous argmax with every member's probability strictly above the
// threshold; otherwise nullopt.
std::optional<int> hard_label(const std::vector<std::vector<double>>& rows,
                              double threshold = 0.8);

// Elementwise mean of the member rows.
std::vector<double> soft_label(const std::vector<std::vector<double>>& rows);

PseudoLabeledSet build_pseudo_set(const LabeledDataset& unlabeled, const EnsembleSpec& ensemble,
                                  const std::string& head, PseudoMode mode,
                                  double threshold = 0.8);

// Materializes the pseudo-labeled set as a trainable dataset over the
// unlabeled pool's images (hard: accepted subset with labels; soft: all rows
// with soft label rows attached).
LabeledDataset pseudo_dataset(const LabeledDataset& unlabeled, const PseudoLabeledSet& set,
                              const DomainSpec& target_domain);

// Tops each class up to per_class samples using the highest min-confidence
// hard-labeled images; original validation rows always stay.
LabeledDataset enlarge_validation(const LabeledDataset& validation, const LabeledDataset& unlabeled,
                                  const PseudoLabeledSet& hard_set, std::size_t per_class = 100);

void save_pseudo_manifest(const std::string& path, const PseudoLabeledSet& set);
PseudoLabeledSet load_pseudo_manifest(const std::string& path);

}  // namespace gradmix
