#include "gradmix/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "nlohmann/json.hpp"

namespace gradmix {

namespace {

using json = nlohmann::json;

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
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

}  // namespace

void EnsembleSpec::rank() {
    std::stable_sort(members.begin(), members.end(),
                     [](const EnsembleMember& a, const EnsembleMember& b) {
                         if (a.hyper_val_accuracy != b.hyper_val_accuracy)
                             return a.hyper_val_accuracy > b.hyper_val_accuracy;
                         if (a.beta != b.beta) return a.beta < b.beta;
                         return a.gamma < b.gamma;
                     });
}

std::string EnsembleSpec::digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const EnsembleMember& m : members) {
        h = fnv1a(m.label, h);
        h = fnv1a(std::to_string(m.beta) + "," + std::to_string(m.gamma) + "," +
                      std::to_string(m.hyper_val_accuracy),
                  h);
    }
    return hex64(h);
}

std::vector<Tensor> ensemble_predict_batch(const EnsembleSpec& ensemble, const std::string& head,
                                           const Tensor& images) {
    if (ensemble.members.empty()) throw std::invalid_argument("ensemble has no members");
    std::size_t classes = 0;
    std::vector<Tensor> out;
    out.reserve(ensemble.R());
    for (const EnsembleMember& m : ensemble.members) {
        auto it = m.params.arch.heads.find(head);
        if (it == m.params.arch.heads.end())
            throw std::invalid_argument("ensemble member lacks head '" + head + "'");
        if (classes == 0) classes = it->second;
        if (it->second != classes)
            throw std::invalid_argument("ensemble members disagree on head label space");
        out.push_back(softmax_rows(forward(m.params, head, images)));
    }
    return out;
}

std::vector<std::vector<double>> ensemble_predict(const EnsembleSpec& ensemble,
                                                  const std::string& head, const Tensor& image) {
    std::vector<Tensor> batches = ensemble_predict_batch(ensemble, head, image);
    std::vector<std::vector<double>> rows;
    rows.reserve(batches.size());
    for (const Tensor& t : batches) {
        if (t.shape[0] != 1) throw std::invalid_argument("ensemble_predict wants a single image");
        rows.push_back(t.data);
    }
    return rows;
}

std::optional<int> hard_label(const std::vector<std::vector<double>>& rows, double threshold) {
    if (rows.empty()) throw std::invalid_argument("hard_label: no prediction rows");
    int cls = -1;
    for (const auto& row : rows) {
        const auto it = std::max_element(row.begin(), row.end());
        const int argmax = static_cast<int>(it - row.begin());
        if (cls == -1) cls = argmax;
        if (argmax != cls) return std::nullopt;  // disagreement
        if (!(*it > threshold)) return std::nullopt;  // not confident enough
    }
    return cls;
}

std::vector<double> soft_label(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw std::invalid_argument("soft_label: no prediction rows");
    std::vector<double> mean(rows[0].size(), 0.0);
    for (const auto& row : rows) {
        if (row.size() != mean.size()) throw std::invalid_argument("soft_label: row size mismatch");
        for (std::size_t i = 0; i < row.size(); ++i) mean[i] += row[i];
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (double& v : mean) v *= inv;
    return mean;
}

PseudoLabeledSet build_pseudo_set(const LabeledDataset& unlabeled, const EnsembleSpec& ensemble,
                                  const std::string& head, PseudoMode mode, double threshold) {
    if (unlabeled.size() == 0) throw std::invalid_argument("build_pseudo_set: empty pool");
    PseudoLabeledSet set;
    set.mode = mode;
    set.threshold_used = threshold;
    set.provenance = ensemble.digest();

    const std::vector<Tensor> preds = ensemble_predict_batch(ensemble, head, unlabeled.images);
    const std::size_t N = unlabeled.size();
    const std::size_t C = preds[0].shape[1];
    set.num_classes = C;

    std::vector<std::vector<double>> rows(preds.size(), std::vector<double>(C));
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t r = 0; r < preds.size(); ++r) {
            for (std::size_t c = 0; c < C; ++c) rows[r][c] = preds[r].at2(n, c);
        }
        if (mode == PseudoMode::Hard) {
            const std::optional<int> cls = hard_label(rows, threshold);
            if (!cls) continue;
            PseudoItem item;
            item.u_index = n;
            item.hard_label = *cls;
            item.min_confidence = 1.0;
            for (const auto& row : rows)
                item.min_confidence = std::min(item.min_confidence,
                                               row[static_cast<std::size_t>(*cls)]);
            set.items.push_back(std::move(item));
        } else {
            PseudoItem item;
            item.u_index = n;
            item.soft_row = soft_label(rows);
            set.items.push_back(std::move(item));
        }
    }
    return set;
}

LabeledDataset pseudo_dataset(const LabeledDataset& unlabeled, const PseudoLabeledSet& set,
                              const DomainSpec& target_domain) {
    std::vector<std::size_t> rows;
    rows.reserve(set.items.size());
    for (const PseudoItem& item : set.items) rows.push_back(item.u_index);
    LabeledDataset out = unlabeled.select_rows(rows);
    out.domain = target_domain;
    out.domain.name = "pseudo-labeled(" + set.provenance.substr(0, 8) + ")";
    if (set.mode == PseudoMode::Hard) {
        out.labels.clear();
        out.labels.reserve(set.items.size());
        for (const PseudoItem& item : set.items) out.labels.push_back(item.hard_label);
    } else {
        Tensor soft({std::max<std::size_t>(set.items.size(), 1), set.num_classes});
        for (std::size_t i = 0; i < set.items.size(); ++i) {
            for (std::size_t c = 0; c < set.num_classes; ++c)
                soft.at2(i, c) = set.items[i].soft_row[c];
        }
        out.soft_labels = std::move(soft);
        out.labels.clear();
    }
    return out;
}

LabeledDataset enlarge_validation(const LabeledDataset& validation, const LabeledDataset& unlabeled,
                                  const PseudoLabeledSet& hard_set, std::size_t per_class) {
    if (hard_set.mode != PseudoMode::Hard)
        throw std::invalid_argument("enlarge_validation wants a hard-mode pseudo set");
    const std::size_t C = validation.domain.num_classes();

    std::vector<std::size_t> counts(C, 0);
    for (int y : validation.labels) counts[static_cast<std::size_t>(y)]++;

    // Candidates per class, best min-confidence first; stable on u_index.
    std::vector<std::vector<const PseudoItem*>> by_class(C);
    for (const PseudoItem& item : hard_set.items) {
        if (item.hard_label >= 0 && static_cast<std::size_t>(item.hard_label) < C)
            by_class[static_cast<std::size_t>(item.hard_label)].push_back(&item);
    }
    for (auto& v : by_class) {
        std::stable_sort(v.begin(), v.end(), [](const PseudoItem* a, const PseudoItem* b) {
            return a->min_confidence > b->min_confidence;
        });
    }

    std::vector<std::size_t> extra_rows;
    std::vector<int> extra_labels;
    for (std::size_t c = 0; c < C; ++c) {
        for (const PseudoItem* item : by_class[c]) {
            if (counts[c] >= per_class) break;
            extra_rows.push_back(item->u_index);
            extra_labels.push_back(static_cast<int>(c));
            counts[c]++;
        }
    }
    if (extra_rows.empty()) return validation;

    LabeledDataset extras = unlabeled.select_rows(extra_rows);
    const std::size_t H = validation.images.shape[1], W = validation.images.shape[2],
                      CH = validation.images.shape[3];
    const std::size_t stride = H * W * CH;
    LabeledDataset out;
    out.domain = validation.domain;
    out.images = Tensor({validation.size() + extras.size(), H, W, CH});
    std::copy(validation.images.data.begin(), validation.images.data.end(),
              out.images.data.begin());
    std::copy(extras.images.data.begin(), extras.images.data.end(),
              out.images.data.begin() + static_cast<std::ptrdiff_t>(validation.size() * stride));
    out.labels = validation.labels;
    out.labels.insert(out.labels.end(), extra_labels.begin(), extra_labels.end());
    return out;
}

void save_pseudo_manifest(const std::string& path, const PseudoLabeledSet& set) {
    json j;
    j["mode"] = set.mode == PseudoMode::Hard ? "hard" : "soft";
    j["threshold"] = set.threshold_used;
    j["num_classes"] = set.num_classes;
    j["ensemble_digest"] = set.provenance;
    j["items"] = json::array();
    for (const PseudoItem& item : set.items) {
        json ji;
        ji["u_index"] = item.u_index;
        if (set.mode == PseudoMode::Hard) {
            ji["label"] = item.hard_label;
            ji["min_confidence"] = item.min_confidence;
        } else {
            ji["soft_row"] = item.soft_row;
        }
        j["items"].push_back(std::move(ji));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write pseudo manifest: " + path);
    out << j.dump(2) << "\n";
}

PseudoLabeledSet load_pseudo_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pseudo manifest: " + path);
    json j = json::parse(in);
    PseudoLabeledSet set;
    set.mode = j.at("mode").get<std::string>() == "hard" ? PseudoMode::Hard : PseudoMode::Soft;
    set.threshold_used = j.at("threshold").get<double>();
    set.num_classes = j.at("num_classes").get<std::size_t>();
    set.provenance = j.at("ensemble_digest").get<std::string>();
    for (const json& ji : j.at("items")) {
        PseudoItem item;
        item.u_index = ji.at("u_index").get<std::size_t>();
        if (set.mode == PseudoMode::Hard) {
            item.hard_label = ji.at("label").get<int>();
            item.min_confidence = ji.at("min_confidence").get<double>();
        } else {
            item.soft_row = ji.at("soft_row").get<std::vector<double>>();
        }
        set.items.push_back(std::move(item));
    }
    return set;
}

}  // namespace gradmix
