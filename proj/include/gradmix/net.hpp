#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "gradmix/tensor.hpp"

namespace gradmix {

enum class LayerKind { Conv2d, Relu, MaxPool2x2, Flatten, Dense, SoftmaxHead };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    // Conv2d (valid padding, stride 1): weights (k, k, in_ch, out_ch), bias (out_ch)
    std::size_t in_ch = 0, out_ch = 0, ksize = 0;
    // Dense / SoftmaxHead: weights (in_features, out_features), bias (out_features)
    std::size_t in_features = 0, out_features = 0;

    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t ksize) {
        LayerSpec s;
        s.kind = LayerKind::Conv2d;
        s.in_ch = in_ch;
        s.out_ch = out_ch;
        s.ksize = ksize;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{LayerKind::Relu}; }
    static LayerSpec maxpool() { return LayerSpec{LayerKind::MaxPool2x2}; }
    static LayerSpec flatten() { return LayerSpec{LayerKind::Flatten}; }
    static LayerSpec dense(std::size_t in_features, std::size_t out_features) {
        LayerSpec s;
        s.kind = LayerKind::Dense;
        s.in_features = in_features;
        s.out_features = out_features;
        return s;
    }

    bool has_params() const {
        return kind == LayerKind::Conv2d || kind == LayerKind::Dense;
    }
};

// Trunk shared by every domain; heads are per-label-space dense classifiers,
// all consuming the trunk's output feature vector.
struct NetworkArch {
    std::size_t input_h = 0, input_w = 0, input_c = 1;
    std::vector<LayerSpec> trunk;
    std::size_t trunk_out_features = 0;
    std::vector<std::size_t> param_layers;     // trunk indices of layers with parameters
    std::map<std::string, std::size_t> heads;  // head id -> number of classes

    std::size_t depth() const { return param_layers.size() + 1; }  // L: trunk params + head
};

struct LayerTensors {
    Tensor W;
    Tensor b;
    std::size_t numel() const { return W.numel() + b.numel(); }
};

struct NetworkParams {
    NetworkArch arch;
    std::vector<LayerTensors> trunk;           // aligned with arch.param_layers
    std::map<std::string, LayerTensors> heads;
    std::uint64_t rng_seed = 0;
};

struct GradientSet {
    std::vector<LayerTensors> trunk;
    std::map<std::string, LayerTensors> heads;  // only heads touched by the batch
    std::size_t batch_size = 0;
};

// Hard labels (class indices) or soft target rows (N x C, each row sums to 1).
using Targets = std::variant<std::vector<int>, Tensor>;

// The digit trunk: 4 conv layers feeding one dense layer, heads on top.
// conv_channels sets the four conv widths; fc_width the trunk output width.
NetworkArch digit_arch(std::size_t input_hw, const std::vector<std::size_t>& conv_channels,
                       std::size_t fc_width, const std::map<std::string, std::size_t>& heads,
                       std::size_t input_c = 1);

// Dense-only trunk for small experiments and tests.
NetworkArch mlp_arch(std::size_t in_features, const std::vector<std::size_t>& hidden,
                     const std::map<std::string, std::size_t>& heads);

// He-style scaled uniform initialization from a seeded PRNG; biases zero.
NetworkParams init_network(const NetworkArch& arch, std::uint64_t seed);

Tensor forward(const NetworkParams& params, const std::string& head, const Tensor& batch);

Tensor softmax_rows(const Tensor& logits);

struct LossResult {
    double loss = 0.0;
    Tensor softmax;
};

LossResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

// KL(soft_targets || p_model), mean over rows; zero-probability target entries
// contribute zero.
double kl_soft_loss(const Tensor& logits, const Tensor& soft_targets);

// Exact analytic gradients of the mean loss over the batch. Hard labels use
// cross-entropy; soft rows use the KL loss above.
GradientSet backward(const NetworkParams& params, const std::string& head,
                     const Tensor& batch, const Targets& targets);

struct MomentumState {
    std::vector<LayerTensors> trunk;
    std::map<std::string, LayerTensors> heads;
};

MomentumState make_momentum_state(const NetworkParams& params);

// v <- momentum * v + g; theta <- theta - lr * v, per trunk layer and per
// head present in grads.
void sgd_momentum_step(NetworkParams& params, const GradientSet& grads, double lr,
                       double momentum, MomentumState& state);

// Binary checkpoint: self-describing header followed by raw little-endian
// float64 arrays, trunk order then head order. Layout documented in README.
void save_checkpoint(const std::string& path, const NetworkParams& params);
NetworkParams load_checkpoint(const std::string& path);

}  // namespace gradmix
