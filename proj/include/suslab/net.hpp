#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "suslab/core.hpp"
#include "suslab/rng.hpp"

namespace suslab {

enum class Activation : std::uint8_t { relu = 0, none = 1 };

struct LayerSpec {
    int in_dim = 0;
    int out_dim = 0;
    Activation act = Activation::none;
};

struct Layer {
    DenseMatrix weights;       // out_dim x in_dim
    std::vector<double> bias;  // out_dim
    Activation act = Activation::none;

    int in_dim() const { return weights.cols; }
    int out_dim() const { return weights.rows; }
};

/// Fully connected network. head_begin marks the first layer of the FC head
/// (the block a PyTorch-style victim sparsifies and the attack may restrict
/// hiding to); 0 means the whole network is the head.
struct Network {
    std::vector<Layer> layers;
    int head_begin = 0;

    int input_dim() const { return layers.front().in_dim(); }
    int output_dim() const { return layers.back().out_dim(); }
    int layer_count() const { return static_cast<int>(layers.size()); }

    void validate() const {
        if (layers.empty()) throw std::invalid_argument("Network: no layers");
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const Layer& l = layers[k];
            if (l.weights.cols % 4 != 0)
                throw std::invalid_argument("Network: layer " + std::to_string(k) +
                                            " in_dim not divisible by 4");
            if (static_cast<int>(l.bias.size()) != l.out_dim())
                throw std::invalid_argument("Network: layer " + std::to_string(k) + " bias size");
            if (k + 1 < layers.size() && l.out_dim() != layers[k + 1].in_dim())
                throw std::invalid_argument("Network: layer dims do not chain at " +
                                            std::to_string(k));
        }
        if (head_begin < 0 || head_begin >= layer_count())
            throw std::invalid_argument("Network: head_begin out of range");
    }
};

/// Kaiming uniform for ReLU fan-in: weights uniform in [-b, b] with
/// b = sqrt(6 / in_dim); bias zero.
inline Layer init_kaiming_uniform(const LayerSpec& spec, Rng& rng) {
    Layer l;
    l.weights = DenseMatrix(spec.out_dim, spec.in_dim);
    l.bias.assign(spec.out_dim, 0.0);
    l.act = spec.act;
    double bound = std::sqrt(6.0 / spec.in_dim);
    for (double& v : l.weights.data) v = rng.next_uniform(-bound, bound);
    return l;
}

/// Build a network from a dim chain (input, hidden..., output). Hidden
/// layers use ReLU, the final layer emits logits. head_layers > 0 marks that
/// many trailing layers as the FC head.
inline Network make_network(const std::vector<int>& dims, std::uint64_t init_seed,
                            int head_layers = 0) {
    if (dims.size() < 2) throw std::invalid_argument("make_network: need at least 2 dims");
    Network net;
    Rng rng(init_seed);
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        LayerSpec spec{dims[k], dims[k + 1],
                       k + 2 < dims.size() ? Activation::relu : Activation::none};
        net.layers.push_back(init_kaiming_uniform(spec, rng));
    }
    if (head_layers > 0) {
        if (head_layers > net.layer_count())
            throw std::invalid_argument("make_network: head larger than network");
        net.head_begin = net.layer_count() - head_layers;
    }
    net.validate();
    return net;
}

struct ForwardCache {
    std::vector<std::vector<double>> inputs;   // input to each layer
    std::vector<std::vector<double>> preacts;  // affine output of each layer
};

inline std::vector<double> forward(const Network& net, std::span<const double> x,
                                   ForwardCache* cache = nullptr) {
    if (static_cast<int>(x.size()) != net.input_dim())
        throw std::invalid_argument("forward: input length does not match first layer");
    std::vector<double> cur(x.begin(), x.end());
    if (cache) {
        cache->inputs.clear();
        cache->preacts.clear();
    }
    for (const Layer& l : net.layers) {
        if (cache) cache->inputs.push_back(cur);
        std::vector<double> z(l.out_dim());
        for (int r = 0; r < l.out_dim(); ++r) {
            const double* wr = &l.weights.data[static_cast<std::size_t>(r) * l.in_dim()];
            double acc = l.bias[r];
            for (int c = 0; c < l.in_dim(); ++c) acc += wr[c] * cur[c];
            z[r] = acc;
        }
        if (cache) cache->preacts.push_back(z);
        if (l.act == Activation::relu)
            for (double& v : z) v = v > 0.0 ? v : 0.0;
        cur = std::move(z);
    }
    return cur;
}

inline int predict(const Network& net, std::span<const double> x) {
    std::vector<double> logits = forward(net, x);
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

struct LossGrad {
    double loss = 0.0;
    std::vector<double> dlogits;
};

/// Softmax cross-entropy, log-sum-exp stabilized. Gradient w.r.t. logits is
/// softmax(logits) - onehot(label).
inline LossGrad loss_ce(std::span<const double> logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("loss_ce: label out of range");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    double log_z = mx + std::log(sum);
    LossGrad out;
    out.loss = log_z - logits[label];
    out.dlogits.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        out.dlogits[i] = std::exp(logits[i] - log_z) - (static_cast<int>(i) == label ? 1.0 : 0.0);
    return out;
}

struct Gradients {
    std::vector<DenseMatrix> weights;
    std::vector<std::vector<double>> bias;

    static Gradients zeros_like(const Network& net) {
        Gradients g;
        for (const Layer& l : net.layers) {
            g.weights.emplace_back(l.out_dim(), l.in_dim());
            g.bias.emplace_back(l.out_dim(), 0.0);
        }
        return g;
    }

    void scale(double s) {
        for (auto& w : weights)
            for (double& v : w.data) v *= s;
        for (auto& b : bias)
            for (double& v : b) v *= s;
    }
};

/// Reverse-mode gradients, accumulated into out (so batches can sum samples
/// in a fixed order). When dinput is given it receives dL/dx as well.
inline void backward(const Network& net, const ForwardCache& cache,
                     std::span<const double> dlogits, Gradients& out,
                     std::vector<double>* dinput = nullptr) {
    if (cache.inputs.size() != net.layers.size() || cache.preacts.size() != net.layers.size())
        throw std::runtime_error("backward: cache does not match network");
    std::vector<double> dz(dlogits.begin(), dlogits.end());
    for (int k = net.layer_count() - 1; k >= 0; --k) {
        const Layer& l = net.layers[k];
        const std::vector<double>& x = cache.inputs[k];
        if (static_cast<int>(dz.size()) != l.out_dim())
            throw std::runtime_error("backward: cache does not match network");
        DenseMatrix& gw = out.weights[k];
        for (int r = 0; r < l.out_dim(); ++r) {
            double d = dz[r];
            out.bias[k][r] += d;
            double* gwr = &gw.data[static_cast<std::size_t>(r) * l.in_dim()];
            for (int c = 0; c < l.in_dim(); ++c) gwr[c] += d * x[c];
        }
        if (k == 0 && !dinput) break;
        std::vector<double> dx(l.in_dim(), 0.0);
        for (int r = 0; r < l.out_dim(); ++r) {
            double d = dz[r];
            const double* wr = &l.weights.data[static_cast<std::size_t>(r) * l.in_dim()];
            for (int c = 0; c < l.in_dim(); ++c) dx[c] += d * wr[c];
        }
        if (k == 0) {
            *dinput = std::move(dx);
            break;
        }
        const Layer& prev = net.layers[k - 1];
        if (prev.act == Activation::relu) {
            const std::vector<double>& z = cache.preacts[k - 1];
            for (int c = 0; c < prev.out_dim(); ++c)
                if (z[c] <= 0.0) dx[c] = 0.0;
        }
        dz = std::move(dx);
    }
}

struct TrainConfig {
    int epochs = 1;
    int batch_size = 32;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
    double momentum = 0.0;  // 0 = plain SGD
};

/// Per-layer update gate for masked training.
struct LayerUpdate {
    enum class Mode : std::uint8_t { all, masked, frozen };
    Mode mode = Mode::all;
    const BinaryMatrix* mask = nullptr;  // required in masked mode
    bool update_bias = true;
};

/// Momentum buffers; masked positions are the only ones that ever
/// accumulate state, so frozen weights pick up no deferred motion.
struct SgdState {
    std::vector<DenseMatrix> vel_w;
    std::vector<std::vector<double>> vel_b;

    static SgdState zeros_like(const Network& net) {
        SgdState s;
        for (const Layer& l : net.layers) {
            s.vel_w.emplace_back(l.out_dim(), l.in_dim());
            s.vel_b.emplace_back(l.out_dim(), 0.0);
        }
        return s;
    }
};

/// SGD step gated per position: where the gate is closed the stored weight
/// bits are untouched, not merely incremented by zero.
inline void masked_step(Network& net, const Gradients& grads, std::span<const LayerUpdate> gates,
                        SgdState& state, const TrainConfig& cfg) {
    if (!gates.empty() && gates.size() != net.layers.size())
        throw std::invalid_argument("masked_step: gate count does not match layers");
    double lr = cfg.learning_rate;
    double mu = cfg.momentum;
    for (int k = 0; k < net.layer_count(); ++k) {
        Layer& l = net.layers[k];
        LayerUpdate gate = gates.empty() ? LayerUpdate{} : gates[k];
        if (gate.mode == LayerUpdate::Mode::masked) {
            if (!gate.mask || gate.mask->rows != l.out_dim() || gate.mask->cols != l.in_dim())
                throw std::invalid_argument("masked_step: mask shape mismatch at layer " +
                                            std::to_string(k));
        }
        if (gate.mode != LayerUpdate::Mode::frozen) {
            const BinaryMatrix* m =
                gate.mode == LayerUpdate::Mode::masked ? gate.mask : nullptr;
            for (std::size_t i = 0; i < l.weights.data.size(); ++i) {
                if (m && !m->bits[i]) continue;
                double& v = state.vel_w[k].data[i];
                v = mu * v + grads.weights[k].data[i];
                l.weights.data[i] -= lr * v;
            }
        }
        if (gate.update_bias) {
            for (std::size_t i = 0; i < l.bias.size(); ++i) {
                double& v = state.vel_b[k][i];
                v = mu * v + grads.bias[k][i];
                l.bias[i] -= lr * v;
            }
        }
    }
}

struct TrainSet {
    std::vector<std::vector<double>> inputs;
    std::vector<int> labels;

    std::size_t size() const { return inputs.size(); }
};

struct TrainStats {
    std::vector<double> epoch_loss;  // mean sample loss per epoch

    double final_loss() const { return epoch_loss.empty() ? 0.0 : epoch_loss.back(); }
};

/// Deterministic minibatch SGD: fixed shuffle per epoch from the run seed,
/// sequential gradient accumulation, optional per-layer gating, and an
/// after-step hook (used for weight projections).
inline TrainStats train(Network& net, const TrainSet& data, std::span<const LayerUpdate> gates,
                        const TrainConfig& cfg,
                        const std::function<void(Network&)>& after_step = {}) {
    if (data.size() == 0) throw std::invalid_argument("train: empty training set");
    if (cfg.epochs < 0 || cfg.batch_size <= 0 || cfg.learning_rate <= 0.0)
        throw std::invalid_argument("train: bad config");
    TrainStats stats;
    SgdState state = SgdState::zeros_like(net);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            std::size_t batch_end = std::min(order.size(), pos + cfg.batch_size);
            Gradients grads = Gradients::zeros_like(net);
            ForwardCache cache;
            for (std::size_t i = pos; i < batch_end; ++i) {
                std::size_t s = order[i];
                std::vector<double> logits = forward(net, data.inputs[s], &cache);
                LossGrad lg = loss_ce(logits, data.labels[s]);
                loss_sum += lg.loss;
                backward(net, cache, lg.dlogits, grads);
            }
            grads.scale(1.0 / static_cast<double>(batch_end - pos));
            masked_step(net, grads, gates, state, cfg);
            if (after_step) after_step(net);
            pos = batch_end;
        }
        stats.epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
    }
    return stats;
}

/// Flattened image padded with constant-zero features up to dim.
inline std::vector<double> pad_to(std::vector<double> v, int dim) {
    if (static_cast<int>(v.size()) > dim)
        throw std::invalid_argument("pad_to: vector longer than target dim");
    v.resize(dim, 0.0);
    return v;
}

}  // namespace suslab
