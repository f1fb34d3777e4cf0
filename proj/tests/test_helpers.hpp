#pragma once

// Shared generators for randomized tests.

#include <map>
#include <string>
#include <vector>

#include "gradmix/net.hpp"
#include "gradmix/rng.hpp"

namespace gradmix::testing {

inline Tensor random_batch(const NetworkArch& arch, std::size_t n, Rng& rng) {
    Tensor batch = arch.input_h > 0 ? Tensor({n, arch.input_h, arch.input_w, arch.input_c})
                                    : Tensor({n, arch.input_c});
    for (double& v : batch.data) v = rng.uniform();
    return batch;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
    std::vector<int> labels(n);
    for (int& y : labels) y = static_cast<int>(rng.below(classes));
    return labels;
}

inline Tensor random_soft_rows(std::size_t n, std::size_t classes, Rng& rng) {
    Tensor rows({n, classes});
    for (std::size_t r = 0; r < n; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            rows.at2(r, c) = rng.uniform() + 1e-4;
            sum += rows.at2(r, c);
        }
        for (std::size_t c = 0; c < classes; ++c) rows.at2(r, c) /= sum;
    }
    return rows;
}

// A small architecture exercising every layer kind: conv, relu, maxpool,
// flatten, dense trunk layer, dense head.
inline NetworkArch tiny_conv_arch(std::size_t classes = 3, std::size_t in_ch = 1) {
    NetworkArch arch;
    arch.input_h = arch.input_w = 8;
    arch.input_c = in_ch;
    arch.trunk.push_back(LayerSpec::conv2d(in_ch, 2, 3));  // 8 -> 6
    arch.trunk.push_back(LayerSpec::relu());
    arch.trunk.push_back(LayerSpec::maxpool());            // 6 -> 3
    arch.trunk.push_back(LayerSpec::conv2d(2, 3, 2));      // 3 -> 2
    arch.trunk.push_back(LayerSpec::relu());
    arch.trunk.push_back(LayerSpec::flatten());            // 12
    arch.trunk.push_back(LayerSpec::dense(12, 5));
    arch.trunk.push_back(LayerSpec::relu());
    arch.heads = {{"main", classes}};
    return arch;
}

inline NetworkParams random_params_like(const NetworkArch& arch, std::uint64_t seed) {
    return init_network(arch, seed);
}

inline bool params_bit_equal(const NetworkParams& a, const NetworkParams& b) {
    if (a.trunk.size() != b.trunk.size()) return false;
    auto eq = [](const Tensor& x, const Tensor& y) {
        if (x.shape != y.shape) return false;
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            if (x.data[i] != y.data[i]) return false;
        }
        return true;
    };
    for (std::size_t l = 0; l < a.trunk.size(); ++l) {
        if (!eq(a.trunk[l].W, b.trunk[l].W) || !eq(a.trunk[l].b, b.trunk[l].b)) return false;
    }
    if (a.heads.size() != b.heads.size()) return false;
    for (const auto& [id, p] : a.heads) {
        auto it = b.heads.find(id);
        if (it == b.heads.end()) return false;
        if (!eq(p.W, it->second.W) || !eq(p.b, it->second.b)) return false;
    }
    return true;
}

}  // namespace gradmix::testing
