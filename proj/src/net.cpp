#include "gradmix/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "gradmix/rng.hpp"
#include "nlohmann/json.hpp"

namespace gradmix {

namespace {

using json = nlohmann::json;

struct LayerDims {
    std::size_t h = 0, w = 0, c = 0;  // spatial activations
    std::size_t features = 0;         // flat activations (after flatten / dense input)
    bool flat = false;
};

// Walks the trunk specs, checking dimension compatibility and filling in
// derived sizes. Throws on any inconsistency.
LayerDims trace_dims(const NetworkArch& arch) {
    LayerDims d;
    d.h = arch.input_h;
    d.w = arch.input_w;
    d.c = arch.input_c;
    d.flat = (arch.input_h == 0);
    if (d.flat) d.features = arch.input_c;

    for (std::size_t i = 0; i < arch.trunk.size(); ++i) {
        const LayerSpec& s = arch.trunk[i];
        switch (s.kind) {
            case LayerKind::Conv2d:
                if (d.flat) throw std::invalid_argument("conv2d after flatten");
                if (s.in_ch != d.c) throw std::invalid_argument("conv2d in_ch mismatch");
                if (d.h < s.ksize || d.w < s.ksize)
                    throw std::invalid_argument("conv2d kernel larger than input");
                d.h = d.h - s.ksize + 1;
                d.w = d.w - s.ksize + 1;
                d.c = s.out_ch;
                break;
            case LayerKind::MaxPool2x2:
                if (d.flat) throw std::invalid_argument("maxpool after flatten");
                if (d.h < 2 || d.w < 2) throw std::invalid_argument("maxpool input too small");
                d.h /= 2;
                d.w /= 2;
                break;
            case LayerKind::Relu:
                break;
            case LayerKind::Flatten:
                if (d.flat) throw std::invalid_argument("flatten twice");
                d.features = d.h * d.w * d.c;
                d.flat = true;
                break;
            case LayerKind::Dense:
                if (!d.flat) throw std::invalid_argument("dense before flatten");
                if (s.in_features != d.features)
                    throw std::invalid_argument("dense in_features mismatch");
                d.features = s.out_features;
                break;
            case LayerKind::SoftmaxHead:
                throw std::invalid_argument("softmax-head inside trunk");
        }
    }
    if (!d.flat) throw std::invalid_argument("trunk must end with flat features");
    return d;
}

void finalize_arch(NetworkArch& arch) {
    arch.param_layers.clear();
    for (std::size_t i = 0; i < arch.trunk.size(); ++i) {
        if (arch.trunk[i].has_params()) arch.param_layers.push_back(i);
    }
    LayerDims d = trace_dims(arch);
    arch.trunk_out_features = d.features;
    if (arch.heads.empty()) throw std::invalid_argument("network needs at least one head");
    for (const auto& [id, classes] : arch.heads) {
        if (classes < 2) throw std::invalid_argument("head '" + id + "' needs >= 2 classes");
    }
}

Tensor conv2d_forward(const Tensor& in, const LayerTensors& p, const LayerSpec& s) {
    const std::size_t N = in.shape[0], H = in.shape[1], W = in.shape[2], IC = in.shape[3];
    const std::size_t K = s.ksize, OC = s.out_ch;
    const std::size_t OH = H - K + 1, OW = W - K + 1;
    Tensor out({N, OH, OW, OC});
    const double* x = in.data.data();
    const double* w = p.W.data.data();
    const double* b = p.b.data.data();
    double* y = out.data.data();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t oh = 0; oh < OH; ++oh) {
            for (std::size_t ow = 0; ow < OW; ++ow) {
                double* yrow = y + (((n * OH) + oh) * OW + ow) * OC;
                for (std::size_t oc = 0; oc < OC; ++oc) yrow[oc] = b[oc];
                for (std::size_t kh = 0; kh < K; ++kh) {
                    const double* xrow = x + (((n * H) + (oh + kh)) * W + ow) * IC;
                    const double* wrow = w + (kh * K) * IC * OC;
                    for (std::size_t kw = 0; kw < K; ++kw) {
                        for (std::size_t ic = 0; ic < IC; ++ic) {
                            const double a = xrow[kw * IC + ic];
                            if (a == 0.0) continue;  // exact zeros are common after relu
                            const double* wp = wrow + (kw * IC + ic) * OC;
                            for (std::size_t oc = 0; oc < OC; ++oc) yrow[oc] += a * wp[oc];
                        }
                    }
                }
            }
        }
    }
    return out;
}

// Accumulates dW/db and (optionally) dx for one conv layer.
void conv2d_backward(const Tensor& in, const Tensor& dout, const LayerTensors& p,
                     const LayerSpec& s, LayerTensors& grad, Tensor* dx) {
    const std::size_t N = in.shape[0], H = in.shape[1], W = in.shape[2], IC = in.shape[3];
    const std::size_t K = s.ksize, OC = s.out_ch;
    const std::size_t OH = H - K + 1, OW = W - K + 1;
    const double* x = in.data.data();
    const double* w = p.W.data.data();
    const double* g = dout.data.data();
    double* dW = grad.W.data.data();
    double* db = grad.b.data.data();
    double* dxp = dx ? dx->data.data() : nullptr;
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t oh = 0; oh < OH; ++oh) {
            for (std::size_t ow = 0; ow < OW; ++ow) {
                const double* grow = g + (((n * OH) + oh) * OW + ow) * OC;
                for (std::size_t oc = 0; oc < OC; ++oc) db[oc] += grow[oc];
                for (std::size_t kh = 0; kh < K; ++kh) {
                    const std::size_t xbase = (((n * H) + (oh + kh)) * W + ow) * IC;
                    for (std::size_t kw = 0; kw < K; ++kw) {
                        for (std::size_t ic = 0; ic < IC; ++ic) {
                            const std::size_t xi = xbase + kw * IC + ic;
                            const std::size_t wi = ((kh * K + kw) * IC + ic) * OC;
                            const double a = x[xi];
                            double* dwrow = dW + wi;
                            if (a != 0.0) {
                                for (std::size_t oc = 0; oc < OC; ++oc) dwrow[oc] += a * grow[oc];
                            }
                            if (dxp) {
                                const double* wrow = w + wi;
                                double acc = 0.0;
                                for (std::size_t oc = 0; oc < OC; ++oc) acc += wrow[oc] * grow[oc];
                                dxp[xi] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor maxpool_forward(const Tensor& in, std::vector<std::size_t>& argmax) {
    const std::size_t N = in.shape[0], H = in.shape[1], W = in.shape[2], C = in.shape[3];
    const std::size_t OH = H / 2, OW = W / 2;
    Tensor out({N, OH, OW, C});
    argmax.assign(out.numel(), 0);
    const double* x = in.data.data();
    double* y = out.data.data();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t oh = 0; oh < OH; ++oh) {
            for (std::size_t ow = 0; ow < OW; ++ow) {
                for (std::size_t c = 0; c < C; ++c) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_i = 0;
                    for (std::size_t dh = 0; dh < 2; ++dh) {
                        for (std::size_t dw = 0; dw < 2; ++dw) {
                            const std::size_t xi =
                                (((n * H) + (2 * oh + dh)) * W + (2 * ow + dw)) * C + c;
                            if (x[xi] > best) {
                                best = x[xi];
                                best_i = xi;
                            }
                        }
                    }
                    const std::size_t yi = (((n * OH) + oh) * OW + ow) * C + c;
                    y[yi] = best;
                    argmax[yi] = best_i;
                }
            }
        }
    }
    return out;
}

Tensor dense_forward(const Tensor& in, const LayerTensors& p) {
    const std::size_t N = in.shape[0], IN = in.shape[1];
    const std::size_t OUT = p.W.shape[1];
    Tensor out({N, OUT});
    const double* x = in.data.data();
    const double* w = p.W.data.data();
    const double* b = p.b.data.data();
    double* y = out.data.data();
    for (std::size_t n = 0; n < N; ++n) {
        double* yrow = y + n * OUT;
        for (std::size_t o = 0; o < OUT; ++o) yrow[o] = b[o];
        const double* xrow = x + n * IN;
        for (std::size_t i = 0; i < IN; ++i) {
            const double a = xrow[i];
            if (a == 0.0) continue;
            const double* wrow = w + i * OUT;
            for (std::size_t o = 0; o < OUT; ++o) yrow[o] += a * wrow[o];
        }
    }
    return out;
}

void dense_backward(const Tensor& in, const Tensor& dout, const LayerTensors& p,
                    LayerTensors& grad, Tensor* dx) {
    const std::size_t N = in.shape[0], IN = in.shape[1], OUT = dout.shape[1];
    const double* x = in.data.data();
    const double* w = p.W.data.data();
    const double* g = dout.data.data();
    double* dW = grad.W.data.data();
    double* db = grad.b.data.data();
    double* dxp = dx ? dx->data.data() : nullptr;
    for (std::size_t n = 0; n < N; ++n) {
        const double* grow = g + n * OUT;
        for (std::size_t o = 0; o < OUT; ++o) db[o] += grow[o];
        const double* xrow = x + n * IN;
        for (std::size_t i = 0; i < IN; ++i) {
            const double a = xrow[i];
            double* dwrow = dW + i * OUT;
            const double* wrow = w + i * OUT;
            double acc = 0.0;
            if (a != 0.0) {
                for (std::size_t o = 0; o < OUT; ++o) {
                    dwrow[o] += a * grow[o];
                    acc += wrow[o] * grow[o];
                }
            } else {
                for (std::size_t o = 0; o < OUT; ++o) acc += wrow[o] * grow[o];
            }
            if (dxp) dxp[n * IN + i] = acc;
        }
    }
}

struct Trace {
    std::vector<Tensor> acts;  // acts[i] = input to trunk layer i; back() = trunk output
    std::vector<std::vector<std::size_t>> pool_idx;
};

void check_batch_shape(const NetworkArch& arch, const Tensor& batch) {
    if (arch.input_h > 0) {
        if (batch.rank() != 4 || batch.shape[1] != arch.input_h ||
            batch.shape[2] != arch.input_w || batch.shape[3] != arch.input_c) {
            throw std::invalid_argument("batch shape " + shape_str(batch.shape) +
                                        " does not match network input");
        }
    } else {
        if (batch.rank() != 2 || batch.shape[1] != arch.input_c) {
            throw std::invalid_argument("batch shape " + shape_str(batch.shape) +
                                        " does not match network input");
        }
    }
    if (batch.shape[0] == 0) throw std::invalid_argument("empty batch");
}

Tensor forward_trunk(const NetworkParams& params, const Tensor& batch, Trace* trace) {
    const NetworkArch& arch = params.arch;
    check_batch_shape(arch, batch);
    Tensor cur = batch;
    if (trace) {
        trace->acts.clear();
        trace->pool_idx.assign(arch.trunk.size(), {});
    }
    std::size_t param_idx = 0;
    for (std::size_t i = 0; i < arch.trunk.size(); ++i) {
        const LayerSpec& s = arch.trunk[i];
        if (trace) trace->acts.push_back(cur);
        switch (s.kind) {
            case LayerKind::Conv2d:
                cur = conv2d_forward(cur, params.trunk[param_idx++], s);
                break;
            case LayerKind::Relu:
                for (double& v : cur.data) v = v > 0.0 ? v : 0.0;
                break;
            case LayerKind::MaxPool2x2: {
                std::vector<std::size_t> idx;
                cur = maxpool_forward(cur, idx);
                if (trace) trace->pool_idx[i] = std::move(idx);
                break;
            }
            case LayerKind::Flatten:
                cur = Tensor({cur.shape[0], cur.numel() / cur.shape[0]},
                             std::move(cur.data));
                break;
            case LayerKind::Dense:
                cur = dense_forward(cur, params.trunk[param_idx++]);
                break;
            case LayerKind::SoftmaxHead:
                break;  // unreachable; rejected by finalize_arch
        }
    }
    if (trace) trace->acts.push_back(cur);
    return cur;
}

const LayerTensors& head_params(const NetworkParams& params, const std::string& head) {
    auto it = params.heads.find(head);
    if (it == params.heads.end()) throw std::out_of_range("unknown head '" + head + "'");
    return it->second;
}

LayerTensors zeros_like(const LayerTensors& p) {
    return LayerTensors{Tensor(p.W.shape), Tensor(p.b.shape)};
}

}  // namespace

NetworkArch digit_arch(std::size_t input_hw, const std::vector<std::size_t>& conv_channels,
                       std::size_t fc_width, const std::map<std::string, std::size_t>& heads,
                       std::size_t input_c) {
    if (conv_channels.size() != 4) throw std::invalid_argument("digit_arch wants 4 conv widths");
    NetworkArch arch;
    arch.input_h = arch.input_w = input_hw;
    arch.input_c = input_c;
    std::size_t c = input_c;
    arch.trunk.push_back(LayerSpec::conv2d(c, conv_channels[0], 3));
    arch.trunk.push_back(LayerSpec::relu());
    arch.trunk.push_back(LayerSpec::maxpool());
    c = conv_channels[0];
    arch.trunk.push_back(LayerSpec::conv2d(c, conv_channels[1], 3));
    arch.trunk.push_back(LayerSpec::relu());
    arch.trunk.push_back(LayerSpec::maxpool());
    c = conv_channels[1];
    arch.trunk.push_back(LayerSpec::conv2d(c, conv_channels[2], 3));
    arch.trunk.push_back(LayerSpec::relu());
    c = conv_channels[2];
    arch.trunk.push_back(LayerSpec::conv2d(c, conv_channels[3], 3));
    arch.trunk.push_back(LayerSpec::relu());
    arch.trunk.push_back(LayerSpec::flatten());

    // Spatial dims after conv/pool stack, to size the dense layer.
    std::size_t h = input_hw, w = input_hw;
    h = h - 2; w = w - 2;          // conv1
    h /= 2; w /= 2;                // pool
    h = h - 2; w = w - 2;          // conv2
    h /= 2; w /= 2;                // pool
    h = h - 2; w = w - 2;          // conv3
    h = h - 2; w = w - 2;          // conv4
    const std::size_t flat = h * w * conv_channels[3];
    arch.trunk.push_back(LayerSpec::dense(flat, fc_width));
    arch.trunk.push_back(LayerSpec::relu());
    arch.heads = heads;
    finalize_arch(arch);
    return arch;
}

NetworkArch mlp_arch(std::size_t in_features, const std::vector<std::size_t>& hidden,
                     const std::map<std::string, std::size_t>& heads) {
    NetworkArch arch;
    arch.input_h = arch.input_w = 0;
    arch.input_c = in_features;
    std::size_t cur = in_features;
    for (std::size_t width : hidden) {
        arch.trunk.push_back(LayerSpec::dense(cur, width));
        arch.trunk.push_back(LayerSpec::relu());
        cur = width;
    }
    if (hidden.empty()) throw std::invalid_argument("mlp_arch needs at least one hidden layer");
    arch.heads = heads;
    finalize_arch(arch);
    return arch;
}

NetworkParams init_network(const NetworkArch& arch, std::uint64_t seed) {
    NetworkArch checked = arch;
    finalize_arch(checked);

    NetworkParams params;
    params.arch = checked;
    params.rng_seed = seed;

    auto he_uniform = [](Tensor& t, std::size_t fan_in, Rng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& v : t.data) v = rng.uniform(-limit, limit);
    };

    for (std::size_t li = 0; li < checked.param_layers.size(); ++li) {
        const LayerSpec& s = checked.trunk[checked.param_layers[li]];
        Rng rng(Rng::derive(seed, li));
        LayerTensors p;
        if (s.kind == LayerKind::Conv2d) {
            p.W = Tensor({s.ksize, s.ksize, s.in_ch, s.out_ch});
            p.b = Tensor({s.out_ch});
            he_uniform(p.W, s.ksize * s.ksize * s.in_ch, rng);
        } else {
            p.W = Tensor({s.in_features, s.out_features});
            p.b = Tensor({s.out_features});
            he_uniform(p.W, s.in_features, rng);
        }
        params.trunk.push_back(std::move(p));
    }

    std::size_t head_ordinal = 0;
    for (const auto& [id, classes] : checked.heads) {
        Rng rng(Rng::derive(seed, 1000 + head_ordinal++));
        LayerTensors p;
        p.W = Tensor({checked.trunk_out_features, classes});
        p.b = Tensor({classes});
        he_uniform(p.W, checked.trunk_out_features, rng);
        params.heads.emplace(id, std::move(p));
    }
    return params;
}

Tensor forward(const NetworkParams& params, const std::string& head, const Tensor& batch) {
    const LayerTensors& hp = head_params(params, head);
    Tensor features = forward_trunk(params, batch, nullptr);
    return dense_forward(features, hp);
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_rows wants a rank-2 tensor");
    const std::size_t N = logits.shape[0], C = logits.shape[1];
    Tensor out({N, C});
    for (std::size_t n = 0; n < N; ++n) {
        const double* row = logits.data.data() + n * C;
        double m = row[0];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
        double sum = 0.0;
        double* orow = out.data.data() + n * C;
        for (std::size_t c = 0; c < C; ++c) {
            orow[c] = std::exp(row[c] - m);
            sum += orow[c];
        }
        for (std::size_t c = 0; c < C; ++c) orow[c] /= sum;
    }
    return out;
}

LossResult cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.shape[0] == 0)
        throw std::invalid_argument("cross_entropy_loss wants a non-empty (N,C) tensor");
    const std::size_t N = logits.shape[0], C = logits.shape[1];
    if (labels.size() != N) throw std::invalid_argument("label count != batch rows");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw std::invalid_argument("label out of range");
    }
    LossResult res;
    res.softmax = softmax_rows(logits);
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const double* row = logits.data.data() + n * C;
        double m = row[0];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
        double lse = 0.0;
        for (std::size_t c = 0; c < C; ++c) lse += std::exp(row[c] - m);
        lse = m + std::log(lse);
        total += lse - row[static_cast<std::size_t>(labels[n])];
    }
    res.loss = total / static_cast<double>(N);
    return res;
}

double kl_soft_loss(const Tensor& logits, const Tensor& soft_targets) {
    if (logits.rank() != 2 || logits.shape[0] == 0)
        throw std::invalid_argument("kl_soft_loss wants a non-empty (N,C) tensor");
    if (!logits.same_shape(soft_targets))
        throw std::invalid_argument("soft target shape mismatch");
    const std::size_t N = logits.shape[0], C = logits.shape[1];
    for (std::size_t n = 0; n < N; ++n) {
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double t = soft_targets.at2(n, c);
            if (t < 0.0) throw std::invalid_argument("negative soft target entry");
            sum += t;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("soft target row does not sum to 1");
    }
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const double* row = logits.data.data() + n * C;
        double m = row[0];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
        double lse = 0.0;
        for (std::size_t c = 0; c < C; ++c) lse += std::exp(row[c] - m);
        lse = m + std::log(lse);
        for (std::size_t c = 0; c < C; ++c) {
            const double t = soft_targets.at2(n, c);
            if (t > 0.0) total += t * (std::log(t) - (row[c] - lse));
        }
    }
    return std::max(0.0, total / static_cast<double>(N));
}

GradientSet backward(const NetworkParams& params, const std::string& head,
                     const Tensor& batch, const Targets& targets) {
    const NetworkArch& arch = params.arch;
    const LayerTensors& hp = head_params(params, head);

    Trace trace;
    Tensor features = forward_trunk(params, batch, &trace);
    Tensor logits = dense_forward(features, hp);
    const std::size_t N = logits.shape[0], C = logits.shape[1];

    // dLoss/dlogits for the mean loss: (softmax - target) / N for both losses.
    Tensor dlogits = softmax_rows(logits);
    if (std::holds_alternative<std::vector<int>>(targets)) {
        const auto& labels = std::get<std::vector<int>>(targets);
        if (labels.size() != N) throw std::invalid_argument("label count != batch rows");
        for (std::size_t n = 0; n < N; ++n) {
            const int y = labels[n];
            if (y < 0 || static_cast<std::size_t>(y) >= C)
                throw std::invalid_argument("label out of range");
            dlogits.at2(n, static_cast<std::size_t>(y)) -= 1.0;
        }
    } else {
        const Tensor& soft = std::get<Tensor>(targets);
        if (!soft.same_shape(logits)) throw std::invalid_argument("soft target shape mismatch");
        for (std::size_t i = 0; i < dlogits.data.size(); ++i) {
            if (soft.data[i] < 0.0) throw std::invalid_argument("negative soft target entry");
            dlogits.data[i] -= soft.data[i];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(N);
    for (double& v : dlogits.data) v *= inv_n;

    GradientSet grads;
    grads.batch_size = N;
    grads.trunk.reserve(params.trunk.size());
    for (const LayerTensors& p : params.trunk) grads.trunk.push_back(zeros_like(p));
    LayerTensors head_grad = zeros_like(hp);

    Tensor dfeat({features.shape[0], features.shape[1]});
    dense_backward(features, dlogits, hp, head_grad, &dfeat);
    grads.heads.emplace(head, std::move(head_grad));

    // Walk the trunk in reverse; cur_grad always matches the output shape of
    // the layer being processed.
    Tensor cur = std::move(dfeat);
    std::size_t param_idx = params.trunk.size();
    for (std::size_t ri = arch.trunk.size(); ri-- > 0;) {
        const LayerSpec& s = arch.trunk[ri];
        const Tensor& input = trace.acts[ri];
        switch (s.kind) {
            case LayerKind::Dense: {
                --param_idx;
                Tensor dx({input.shape[0], input.shape[1]});
                dense_backward(input, cur, params.trunk[param_idx], grads.trunk[param_idx],
                               ri == 0 ? nullptr : &dx);
                cur = std::move(dx);
                break;
            }
            case LayerKind::Conv2d: {
                --param_idx;
                if (ri == 0) {
                    conv2d_backward(input, cur, params.trunk[param_idx], s,
                                    grads.trunk[param_idx], nullptr);
                    cur = Tensor();
                } else {
                    Tensor dx(input.shape);
                    conv2d_backward(input, cur, params.trunk[param_idx], s,
                                    grads.trunk[param_idx], &dx);
                    cur = std::move(dx);
                }
                break;
            }
            case LayerKind::Relu: {
                for (std::size_t i = 0; i < cur.data.size(); ++i) {
                    if (input.data[i] <= 0.0) cur.data[i] = 0.0;
                }
                break;
            }
            case LayerKind::MaxPool2x2: {
                Tensor dx(input.shape);
                const auto& idx = trace.pool_idx[ri];
                for (std::size_t i = 0; i < cur.data.size(); ++i) dx.data[idx[i]] += cur.data[i];
                cur = std::move(dx);
                break;
            }
            case LayerKind::Flatten: {
                cur = Tensor(input.shape, std::move(cur.data));
                break;
            }
            case LayerKind::SoftmaxHead:
                break;
        }
        if (ri == 0) break;
    }
    return grads;
}

MomentumState make_momentum_state(const NetworkParams& params) {
    MomentumState st;
    for (const LayerTensors& p : params.trunk) st.trunk.push_back(zeros_like(p));
    for (const auto& [id, p] : params.heads) st.heads.emplace(id, zeros_like(p));
    return st;
}

void sgd_momentum_step(NetworkParams& params, const GradientSet& grads, double lr,
                       double momentum, MomentumState& state) {
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum in [0,1)");
    if (grads.trunk.size() != params.trunk.size())
        throw std::invalid_argument("trunk gradient layer count mismatch");

    auto apply = [lr, momentum](LayerTensors& theta, const LayerTensors& g, LayerTensors& v) {
        if (!theta.W.same_shape(g.W) || !theta.b.same_shape(g.b))
            throw std::invalid_argument("gradient shape mismatch");
        for (std::size_t i = 0; i < theta.W.data.size(); ++i) {
            v.W.data[i] = momentum * v.W.data[i] + g.W.data[i];
            theta.W.data[i] -= lr * v.W.data[i];
        }
        for (std::size_t i = 0; i < theta.b.data.size(); ++i) {
            v.b.data[i] = momentum * v.b.data[i] + g.b.data[i];
            theta.b.data[i] -= lr * v.b.data[i];
        }
    };

    for (std::size_t l = 0; l < params.trunk.size(); ++l) {
        apply(params.trunk[l], grads.trunk[l], state.trunk[l]);
    }
    for (const auto& [id, g] : grads.heads) {
        auto pit = params.heads.find(id);
        if (pit == params.heads.end()) throw std::invalid_argument("gradient for unknown head");
        apply(pit->second, g, state.heads.at(id));
    }
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kCkptMagic[8] = {'G', 'M', 'X', 'C', 'K', 'P', 'T', '1'};

json layer_to_json(const LayerSpec& s) {
    json j;
    switch (s.kind) {
        case LayerKind::Conv2d:
            j["kind"] = "conv2d";
            j["in_ch"] = s.in_ch;
            j["out_ch"] = s.out_ch;
            j["ksize"] = s.ksize;
            break;
        case LayerKind::Relu: j["kind"] = "relu"; break;
        case LayerKind::MaxPool2x2: j["kind"] = "maxpool"; break;
        case LayerKind::Flatten: j["kind"] = "flatten"; break;
        case LayerKind::Dense:
            j["kind"] = "dense";
            j["in_features"] = s.in_features;
            j["out_features"] = s.out_features;
            break;
        case LayerKind::SoftmaxHead: j["kind"] = "softmax-head"; break;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "conv2d")
        return LayerSpec::conv2d(j.at("in_ch").get<std::size_t>(),
                                 j.at("out_ch").get<std::size_t>(),
                                 j.at("ksize").get<std::size_t>());
    if (kind == "relu") return LayerSpec::relu();
    if (kind == "maxpool") return LayerSpec::maxpool();
    if (kind == "flatten") return LayerSpec::flatten();
    if (kind == "dense")
        return LayerSpec::dense(j.at("in_features").get<std::size_t>(),
                                j.at("out_features").get<std::size_t>());
    throw std::runtime_error("checkpoint: unknown layer kind '" + kind + "'");
}

void write_doubles(std::ofstream& out, const Tensor& t) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint format is little-endian");
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

void read_doubles(std::ifstream& in, Tensor& t) {
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated parameter data");
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkParams& params) {
    json header;
    header["format_version"] = 1;
    header["rng_seed"] = params.rng_seed;
    header["input"] = {params.arch.input_h, params.arch.input_w, params.arch.input_c};
    header["trunk"] = json::array();
    for (const LayerSpec& s : params.arch.trunk) header["trunk"].push_back(layer_to_json(s));
    header["heads"] = json::object();
    for (const auto& [id, classes] : params.arch.heads) header["heads"][id] = classes;

    const std::string htext = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const LayerTensors& p : params.trunk) {
        write_doubles(out, p.W);
        write_doubles(out, p.b);
    }
    for (const auto& [id, p] : params.heads) {
        write_doubles(out, p.W);
        write_doubles(out, p.b);
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

NetworkParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[sizeof(kCkptMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    std::uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in) throw std::runtime_error("checkpoint: truncated header length");
    std::string htext(hlen, '\0');
    in.read(htext.data(), hlen);
    if (!in) throw std::runtime_error("checkpoint: truncated header");
    json header = json::parse(htext);
    if (header.at("format_version").get<int>() != 1)
        throw std::runtime_error("checkpoint: unsupported format version");

    NetworkArch arch;
    arch.input_h = header.at("input")[0].get<std::size_t>();
    arch.input_w = header.at("input")[1].get<std::size_t>();
    arch.input_c = header.at("input")[2].get<std::size_t>();
    for (const json& j : header.at("trunk")) arch.trunk.push_back(layer_from_json(j));
    for (auto it = header.at("heads").begin(); it != header.at("heads").end(); ++it) {
        arch.heads[it.key()] = it.value().get<std::size_t>();
    }
    NetworkParams params = init_network(arch, header.at("rng_seed").get<std::uint64_t>());
    for (LayerTensors& p : params.trunk) {
        read_doubles(in, p.W);
        read_doubles(in, p.b);
    }
    for (auto& [id, p] : params.heads) {
        read_doubles(in, p.W);
        read_doubles(in, p.b);
    }
    return params;
}

}  // namespace gradmix
