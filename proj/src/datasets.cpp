#include "gradmix/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "gradmix/rng.hpp"
#include "nlohmann/json.hpp"

namespace gradmix {

namespace {

using json = nlohmann::json;

// Hyper-validation rows are fixed across runs: drawn from this constant seed,
// never from the run's split seed.
constexpr std::uint64_t kHyperSplitSeed = 0x48595045ULL;

std::uint32_t read_be32(std::istream& in, const char* what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw IdxTruncated(std::string("idx: truncated while reading ") + what);
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace

std::string relation_name(Relation r) {
    switch (r) {
        case Relation::Same: return "same";
        case Relation::PartialOverlap: return "partial-overlap";
        case Relation::Disjoint: return "disjoint";
    }
    return "disjoint";
}

Relation relation_from_name(const std::string& name) {
    if (name == "same") return Relation::Same;
    if (name == "partial-overlap") return Relation::PartialOverlap;
    if (name == "disjoint") return Relation::Disjoint;
    throw std::invalid_argument("unknown relation '" + name + "'");
}

void DomainSpec::validate() const {
    if (label_space.empty()) throw std::invalid_argument("domain '" + name + "': empty label space");
    std::set<int> seen(label_space.begin(), label_space.end());
    if (seen.size() != label_space.size())
        throw std::invalid_argument("domain '" + name + "': duplicate class ids");
}

Tensor LabeledDataset::image(std::size_t i) const {
    const std::size_t H = images.shape[1], W = images.shape[2], C = images.shape[3];
    const std::size_t stride = H * W * C;
    Tensor out({1, H, W, C});
    std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(i * stride), stride,
                out.data.begin());
    return out;
}

LabeledDataset LabeledDataset::select_rows(const std::vector<std::size_t>& rows) const {
    const std::size_t H = images.shape[1], W = images.shape[2], C = images.shape[3];
    const std::size_t stride = H * W * C;
    LabeledDataset out;
    out.domain = domain;
    if (rows.empty()) return out;
    out.images = Tensor({rows.size(), H, W, C});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= size()) throw std::out_of_range("select_rows: row out of range");
        std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(rows[r] * stride), stride,
                    out.images.data.begin() + static_cast<std::ptrdiff_t>(r * stride));
    }
    if (labeled()) {
        out.labels.reserve(rows.size());
        for (std::size_t r : rows) out.labels.push_back(labels[r]);
    }
    if (soft_labels) {
        const std::size_t C2 = soft_labels->shape[1];
        Tensor soft({rows.size(), C2});
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::copy_n(soft_labels->data.begin() + static_cast<std::ptrdiff_t>(rows[r] * C2), C2,
                        soft.data.begin() + static_cast<std::ptrdiff_t>(r * C2));
        }
        out.soft_labels = std::move(soft);
    }
    return out;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IdxError("idx: cannot open " + images_path);
    const std::uint32_t magic_img = read_be32(img, "image magic");
    if (magic_img != 0x00000803u)
        throw IdxBadMagic("idx: bad image magic in " + images_path);
    const std::uint32_t n = read_be32(img, "image count");
    const std::uint32_t rows = read_be32(img, "image rows");
    const std::uint32_t cols = read_be32(img, "image cols");
    if (n == 0 || rows == 0 || cols == 0) throw IdxError("idx: zero-sized image file");

    std::vector<unsigned char> bytes(static_cast<std::size_t>(n) * rows * cols);
    img.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!img) throw IdxTruncated("idx: truncated image data in " + images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IdxError("idx: cannot open " + labels_path);
    const std::uint32_t magic_lab = read_be32(lab, "label magic");
    if (magic_lab != 0x00000801u)
        throw IdxBadMagic("idx: bad label magic in " + labels_path);
    const std::uint32_t n_lab = read_be32(lab, "label count");
    if (n_lab != n)
        throw IdxCountMismatch("idx: " + std::to_string(n) + " images vs " +
                               std::to_string(n_lab) + " labels");
    std::vector<unsigned char> lab_bytes(n_lab);
    lab.read(reinterpret_cast<char*>(lab_bytes.data()), static_cast<std::streamsize>(n_lab));
    if (!lab) throw IdxTruncated("idx: truncated label data in " + labels_path);

    LabeledDataset ds;
    ds.images = Tensor({n, rows, cols, 1});
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        ds.images.data[i] = static_cast<double>(bytes[i]) / 255.0;
    }
    std::set<int> classes;
    ds.labels.reserve(n_lab);
    for (unsigned char b : lab_bytes) classes.insert(static_cast<int>(b));
    std::vector<int> space(classes.begin(), classes.end());
    std::map<int, int> to_local;
    for (std::size_t i = 0; i < space.size(); ++i) to_local[space[i]] = static_cast<int>(i);
    for (unsigned char b : lab_bytes) ds.labels.push_back(to_local[static_cast<int>(b)]);
    ds.domain.name = images_path;
    ds.domain.label_space = std::move(space);
    return ds;
}

void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
    if (!ds.labeled()) throw std::invalid_argument("save_idx: dataset has no labels");
    const std::size_t n = ds.size(), rows = ds.images.shape[1], cols = ds.images.shape[2];
    if (ds.images.shape[3] != 1) throw std::invalid_argument("save_idx: expects 1 channel");

    std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
    if (!img) throw IdxError("idx: cannot write " + images_path);
    write_be32(img, 0x00000803u);
    write_be32(img, static_cast<std::uint32_t>(n));
    write_be32(img, static_cast<std::uint32_t>(rows));
    write_be32(img, static_cast<std::uint32_t>(cols));
    std::vector<unsigned char> bytes(ds.images.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const double v = std::clamp(ds.images.data[i], 0.0, 1.0);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    img.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));

    std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
    if (!lab) throw IdxError("idx: cannot write " + labels_path);
    write_be32(lab, 0x00000801u);
    write_be32(lab, static_cast<std::uint32_t>(n));
    std::vector<unsigned char> lab_bytes(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int original = ds.domain.label_space.at(static_cast<std::size_t>(ds.labels[i]));
        lab_bytes[i] = static_cast<unsigned char>(original);
    }
    lab.write(reinterpret_cast<const char*>(lab_bytes.data()),
              static_cast<std::streamsize>(n));
}

LabeledDataset partition_by_labels(const LabeledDataset& ds, const std::vector<int>& classes) {
    if (!ds.labeled()) throw std::invalid_argument("partition_by_labels: unlabeled dataset");
    std::map<int, int> new_local;  // original id -> new local index
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const int id = classes[i];
        if (std::find(ds.domain.label_space.begin(), ds.domain.label_space.end(), id) ==
            ds.domain.label_space.end()) {
            throw std::invalid_argument("partition_by_labels: class " + std::to_string(id) +
                                        " not in dataset label space");
        }
        if (!new_local.emplace(id, static_cast<int>(i)).second)
            throw std::invalid_argument("partition_by_labels: duplicate class id");
    }
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < ds.size(); ++r) {
        const int original = ds.domain.label_space[static_cast<std::size_t>(ds.labels[r])];
        if (new_local.count(original)) keep.push_back(r);
    }
    LabeledDataset out = ds.select_rows(keep);
    out.domain.label_space = classes;
    for (std::size_t r = 0; r < keep.size(); ++r) {
        const int original = ds.domain.label_space[static_cast<std::size_t>(ds.labels[keep[r]])];
        out.labels[r] = new_local.at(original);
    }
    return out;
}

LabeledDataset synth_shift(const LabeledDataset& ds, const ShiftTransform& transform,
                           std::uint64_t seed) {
    LabeledDataset out = ds;
    const std::size_t H = ds.images.shape[1], W = ds.images.shape[2], C = ds.images.shape[3];
    switch (transform.kind) {
        case ShiftTransform::Kind::Invert: {
            for (double& v : out.images.data) v = 1.0 - v;
            break;
        }
        case ShiftTransform::Kind::GaussianNoise: {
            if (transform.sigma < 0.0)
                throw std::invalid_argument("gaussian-noise: sigma must be >= 0");
            if (transform.sigma == 0.0) break;
            Rng rng(seed);
            for (double& v : out.images.data) v += transform.sigma * rng.normal();
            break;
        }
        case ShiftTransform::Kind::Rotate: {
            if (std::abs(transform.theta_deg) > 180.0)
                throw std::invalid_argument("rotate: |theta| must be <= 180 degrees");
            const double th = transform.theta_deg * 3.14159265358979323846 / 180.0;
            const double c = std::cos(th), s = std::sin(th);
            const double cy = (static_cast<double>(H) - 1.0) / 2.0;
            const double cx = (static_cast<double>(W) - 1.0) / 2.0;
            const std::size_t stride = H * W * C;
            for (std::size_t n = 0; n < ds.size(); ++n) {
                const double* src = ds.images.data.data() + n * stride;
                double* dst = out.images.data.data() + n * stride;
                for (std::size_t y = 0; y < H; ++y) {
                    for (std::size_t x = 0; x < W; ++x) {
                        // Inverse-map the output pixel and sample bilinearly.
                        const double dy = static_cast<double>(y) - cy;
                        const double dx = static_cast<double>(x) - cx;
                        const double sy = c * dy + s * dx + cy;
                        const double sx = -s * dy + c * dx + cx;
                        for (std::size_t ch = 0; ch < C; ++ch) {
                            double val = 0.0;
                            const double fy = std::floor(sy), fx = std::floor(sx);
                            const long iy = static_cast<long>(fy), ix = static_cast<long>(fx);
                            const double wy = sy - fy, wx = sx - fx;
                            auto sample = [&](long yy, long xx) -> double {
                                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) ||
                                    xx >= static_cast<long>(W))
                                    return 0.0;
                                return src[(static_cast<std::size_t>(yy) * W +
                                            static_cast<std::size_t>(xx)) * C + ch];
                            };
                            val = (1 - wy) * (1 - wx) * sample(iy, ix) +
                                  (1 - wy) * wx * sample(iy, ix + 1) +
                                  wy * (1 - wx) * sample(iy + 1, ix) +
                                  wy * wx * sample(iy + 1, ix + 1);
                            dst[(y * W + x) * C + ch] = val;
                        }
                    }
                }
            }
            break;
        }
    }
    for (double& v : out.images.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

Splits make_splits(const LabeledDataset& ds, const SplitPlan& plan) {
    if (!ds.labeled()) throw std::invalid_argument("make_splits: unlabeled dataset");
    if (plan.k_per_class == 0) throw std::invalid_argument("make_splits: k_per_class must be >= 1");
    const std::size_t num_classes = ds.domain.num_classes();
    const std::size_t hyper_per_class = plan.hyper_val_size / num_classes;

    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t r = 0; r < ds.size(); ++r) {
        by_class[static_cast<std::size_t>(ds.labels[r])].push_back(r);
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (by_class[c].size() < plan.k_per_class + hyper_per_class) {
            throw std::invalid_argument(
                "make_splits: class " + std::to_string(ds.domain.label_space[c]) + " has only " +
                std::to_string(by_class[c].size()) + " samples, needs " +
                std::to_string(plan.k_per_class + hyper_per_class));
        }
    }

    Splits out;
    std::vector<char> taken(ds.size(), 0);

    // Hyper-validation first, from its fixed seed, so it is identical for
    // every run regardless of plan.seed.
    Rng hyper_rng(kHyperSplitSeed);
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::vector<std::size_t> pool = by_class[c];
        hyper_rng.shuffle(pool);
        for (std::size_t i = 0; i < hyper_per_class; ++i) {
            out.hyper_rows.push_back(pool[i]);
            taken[pool[i]] = 1;
        }
    }

    Rng v_rng(plan.seed);
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::vector<std::size_t> pool;
        for (std::size_t r : by_class[c]) {
            if (!taken[r]) pool.push_back(r);
        }
        v_rng.shuffle(pool);
        for (std::size_t i = 0; i < plan.k_per_class; ++i) {
            out.v_rows.push_back(pool[i]);
            taken[pool[i]] = 1;
        }
    }

    for (std::size_t r = 0; r < ds.size(); ++r) {
        if (!taken[r]) out.u_rows.push_back(r);
    }
    std::sort(out.v_rows.begin(), out.v_rows.end());
    std::sort(out.hyper_rows.begin(), out.hyper_rows.end());

    out.validation = ds.select_rows(out.v_rows);
    out.hyper_val = ds.select_rows(out.hyper_rows);
    out.unlabeled = ds.select_rows(out.u_rows);
    out.u_labels_sealed = std::move(out.unlabeled.labels);
    out.unlabeled.labels.clear();
    return out;
}

BatchIterator::BatchIterator(const LabeledDataset& ds, std::size_t batch_size, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), seed_(seed) {
    if (batch_size == 0) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
    if (ds.size() == 0) throw std::invalid_argument("batch_iter: empty dataset");
    reshuffle();
}

std::size_t BatchIterator::batches_per_epoch() const {
    return (ds_->size() + batch_size_ - 1) / batch_size_;
}

void BatchIterator::reshuffle() {
    order_.resize(ds_->size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(Rng::derive(seed_, epoch_));
    rng.shuffle(order_);
    cursor_ = 0;
}

Batch BatchIterator::next() {
    const std::size_t take = std::min(batch_size_, order_.size() - cursor_);
    std::vector<std::size_t> rows(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                  order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
    cursor_ += take;
    LabeledDataset slice = ds_->select_rows(rows);
    Batch b;
    b.images = std::move(slice.images);
    b.labels = std::move(slice.labels);
    if (slice.soft_labels) b.soft_labels = std::move(*slice.soft_labels);
    if (cursor_ >= order_.size()) {
        ++epoch_;
        reshuffle();
    }
    return b;
}

void save_split_manifest(const std::string& path, const SplitPlan& plan, const Splits& splits,
                         const std::string& dataset_name) {
    json j;
    j["dataset"] = dataset_name;
    j["k_per_class"] = plan.k_per_class;
    j["hyper_val_size"] = plan.hyper_val_size;
    j["seed"] = plan.seed;
    j["v_rows"] = splits.v_rows;
    j["hyper_rows"] = splits.hyper_rows;
    j["u_rows"] = splits.u_rows;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write split manifest: " + path);
    out << j.dump(2) << "\n";
}

Splits replay_split_manifest(const std::string& path, const LabeledDataset& ds,
                             SplitPlan* plan_out) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open split manifest: " + path);
    json j = json::parse(in);
    Splits out;
    out.v_rows = j.at("v_rows").get<std::vector<std::size_t>>();
    out.hyper_rows = j.at("hyper_rows").get<std::vector<std::size_t>>();
    out.u_rows = j.at("u_rows").get<std::vector<std::size_t>>();
    out.validation = ds.select_rows(out.v_rows);
    out.hyper_val = ds.select_rows(out.hyper_rows);
    out.unlabeled = ds.select_rows(out.u_rows);
    out.u_labels_sealed = std::move(out.unlabeled.labels);
    out.unlabeled.labels.clear();
    if (plan_out) {
        plan_out->k_per_class = j.at("k_per_class").get<std::size_t>();
        plan_out->hyper_val_size = j.at("hyper_val_size").get<std::size_t>();
        plan_out->seed = j.at("seed").get<std::uint64_t>();
    }
    return out;
}

}  // namespace gradmix
