#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradmix/tensor.hpp"

namespace gradmix {

enum class Relation { Same, PartialOverlap, Disjoint };

std::string relation_name(Relation r);
Relation relation_from_name(const std::string& name);

struct DomainSpec {
    std::string name;
    std::vector<int> label_space;  // original class ids, ordered; position = head-local index
    std::string head_id;
    Relation relation_to_target = Relation::Disjoint;

    std::size_t num_classes() const { return label_space.size(); }
    void validate() const;
};

struct LabeledDataset {
    DomainSpec domain;
    Tensor images;                 // N x H x W x C, values in [0,1]
    std::vector<int> labels;       // head-local indices; empty when labels are withheld
    std::optional<Tensor> soft_labels;  // N x C rows, set only for soft pseudo-labeled data

    std::size_t size() const { return images.empty() ? 0 : images.shape[0]; }
    bool labeled() const { return !labels.empty(); }
    // Copies image row i into a (1,H,W,C) tensor.
    Tensor image(std::size_t i) const;
    LabeledDataset select_rows(const std::vector<std::size_t>& rows) const;
};

struct SplitPlan {
    std::size_t k_per_class = 0;
    std::size_t hyper_val_size = 0;
    std::uint64_t seed = 0;
};

// IDX parse failures, each a distinct type so callers can tell them apart.
struct IdxError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IdxBadMagic : IdxError {
    using IdxError::IdxError;
};
struct IdxTruncated : IdxError {
    using IdxError::IdxError;
};
struct IdxCountMismatch : IdxError {
    using IdxError::IdxError;
};

// Reads the classic big-endian IDX pair: magic 0x00000803 with three dims for
// images, 0x00000801 with one dim for labels. Bytes are scaled to [0,1].
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes the same format back out (bit-exact round trip for byte data).
void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path);

// Rows whose ORIGINAL class id is in `classes`, order preserved; the returned
// label space is `classes` in the given order and labels are remapped onto it.
LabeledDataset partition_by_labels(const LabeledDataset& ds, const std::vector<int>& classes);

struct ShiftTransform {
    enum class Kind { Invert, GaussianNoise, Rotate };
    Kind kind = Kind::Invert;
    double sigma = 0.0;      // gaussian-noise
    double theta_deg = 0.0;  // rotate, |theta| <= 180

    static ShiftTransform invert() { return {Kind::Invert, 0, 0}; }
    static ShiftTransform gaussian_noise(double sigma) { return {Kind::GaussianNoise, sigma, 0}; }
    static ShiftTransform rotate(double theta_deg) { return {Kind::Rotate, 0, theta_deg}; }
};

// Deterministic pixel-space domain shift; labels unchanged, output clamped to [0,1].
LabeledDataset synth_shift(const LabeledDataset& ds, const ShiftTransform& transform,
                           std::uint64_t seed);

struct Splits {
    LabeledDataset validation;  // k_per_class labeled rows per class
    LabeledDataset hyper_val;   // fixed monitoring split, never mixed into training gradients
    LabeledDataset unlabeled;   // labels withheld
    std::vector<int> u_labels_sealed;  // ground truth for `unlabeled`, evaluation tooling only
    std::vector<std::size_t> v_rows, hyper_rows, u_rows;  // row indices into the source dataset
};

// Stratified three-way split. The hyper-validation rows come from a fixed
// internal seed so they are identical across runs; V is drawn from plan.seed.
Splits make_splits(const LabeledDataset& ds, const SplitPlan& plan);

struct Batch {
    Tensor images;
    std::vector<int> labels;
    Tensor soft_labels;  // empty unless the dataset carries soft rows
};

// Epoch-reshuffling mini-batch stream; the final short batch of each epoch is
// emitted. Deterministic given the seed and restartable from scratch.
class BatchIterator {
public:
    BatchIterator(const LabeledDataset& ds, std::size_t batch_size, std::uint64_t seed);

    Batch next();
    std::size_t epoch() const { return epoch_; }
    std::size_t batches_per_epoch() const;

private:
    void reshuffle();

    const LabeledDataset* ds_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

// Split manifest: JSON file listing the row indices and seeds, enough to
// replay the exact split.
void save_split_manifest(const std::string& path, const SplitPlan& plan, const Splits& splits,
                         const std::string& dataset_name);
Splits replay_split_manifest(const std::string& path, const LabeledDataset& ds,
                             SplitPlan* plan_out = nullptr);

}  // namespace gradmix
