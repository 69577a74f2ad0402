#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "suslab/core.hpp"
#include "suslab/net.hpp"
#include "suslab/poison.hpp"
#include "suslab/sparsity.hpp"

namespace suslab {

enum class Variant : std::uint8_t { sus_f = 0, sus_r = 1 };

inline const char* variant_name(Variant v) { return v == Variant::sus_f ? "sus-f" : "sus-r"; }

/// Magnitude floor policy for the backdoor-training phase.
struct TauPolicy {
    enum class Kind : std::uint8_t { fixed = 0, percentile = 1 };
    Kind kind = Kind::fixed;
    double value = 0.0;  // tau itself, or the percentile p in [0,100]

    static TauPolicy fixed(double tau) {
        if (tau < 0.0) throw std::invalid_argument("TauPolicy: tau must be >= 0");
        return {Kind::fixed, tau};
    }
    static TauPolicy percentile(double p) {
        if (p < 0.0 || p > 100.0) throw std::invalid_argument("TauPolicy: percentile in [0,100]");
        return {Kind::percentile, p};
    }
};

/// Which layers the hiding phase may gradient-update. The prunability
/// projections run on every maskable layer regardless, so the victim's
/// recomputed masks stay aligned even where hiding never trains.
enum class HideScope : std::uint8_t { all_layers = 0, head_only = 1 };

struct AttackConfig {
    Variant variant = Variant::sus_f;
    TauPolicy tau = TauPolicy::fixed(0.0);
    double margin_delta = 1e-3;  // relative margin keeping pruned strictly below retained
    TrainConfig phase1;
    TrainConfig phase2;
    TriggerSpec trigger;
    HideScope hide = HideScope::all_layers;

    static AttackConfig defaults(Variant v) {
        AttackConfig cfg;
        cfg.variant = v;
        cfg.tau = v == Variant::sus_f ? TauPolicy::fixed(0.0) : TauPolicy::percentile(75.0);
        return cfg;
    }
};

/// Freeze the pruning masks from the initial weights, one per layer.
inline std::vector<PruneMask> fix_masks(const Network& net) {
    net.validate();
    std::vector<PruneMask> masks;
    masks.reserve(net.layers.size());
    for (const Layer& l : net.layers) masks.push_back(compute_mask_2to4(l.weights));
    return masks;
}

/// p-th percentile (nearest-rank) of |w| pooled over all layer weights.
inline double percentile_tau(const Network& net, double p) {
    if (p < 0.0 || p > 100.0) throw std::invalid_argument("percentile_tau: p in [0,100]");
    std::vector<double> mags;
    for (const Layer& l : net.layers)
        for (double v : l.weights.data) mags.push_back(std::fabs(v));
    if (mags.empty()) throw std::invalid_argument("percentile_tau: no weights");
    std::sort(mags.begin(), mags.end());
    std::size_t rank = static_cast<std::size_t>(std::ceil(p / 100.0 * mags.size()));
    rank = std::clamp<std::size_t>(rank, 1, mags.size());
    return mags[rank - 1];
}

/// Push every retained weight with |w| < tau out to sign(w)*tau (sign of an
/// exact zero counts as +). tau = 0 leaves the network unchanged.
inline void project_tau(Network& net, std::span<const PruneMask> masks, double tau) {
    if (tau < 0.0) throw std::invalid_argument("project_tau: tau must be >= 0");
    if (masks.size() != net.layers.size())
        throw std::invalid_argument("project_tau: mask count mismatch");
    if (tau == 0.0) return;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        Layer& l = net.layers[k];
        const BinaryMatrix& m = masks[k].bits();
        for (std::size_t i = 0; i < l.weights.data.size(); ++i) {
            if (!m.bits[i]) continue;
            double& w = l.weights.data[i];
            if (std::fabs(w) < tau) w = w < 0.0 ? -tau : tau;
        }
    }
}

namespace detail {

inline double rescale_below(double w, double bound, double delta) {
    double target = (1.0 - delta) * bound;
    return w < 0.0 ? -target : target;
}

}  // namespace detail

/// Per-group prunability: within every 4-group, rescale any pruned weight
/// whose magnitude reaches the group's retained minimum g down to
/// sign(w)*(1-delta)*g, so |pruned| < min|retained| holds strictly.
inline void project_four(Network& net, std::span<const PruneMask> masks, double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("project_four: delta in (0,1)");
    if (masks.size() != net.layers.size())
        throw std::invalid_argument("project_four: mask count mismatch");
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        Layer& l = net.layers[k];
        const BinaryMatrix& m = masks[k].bits();
        for (int r = 0; r < l.out_dim(); ++r) {
            for (int g = 0; g < l.in_dim() / 4; ++g) {
                double gmin = std::numeric_limits<double>::infinity();
                for (int c = 4 * g; c < 4 * g + 4; ++c)
                    if (m.at(r, c)) gmin = std::min(gmin, std::fabs(l.weights.at(r, c)));
                for (int c = 4 * g; c < 4 * g + 4; ++c) {
                    if (m.at(r, c)) continue;
                    double& w = l.weights.at(r, c);
                    if (std::fabs(w) >= gmin) w = detail::rescale_below(w, gmin, delta);
                }
            }
        }
    }
}

/// Per-row prunability: same rescale against the row-wide retained minimum.
/// Afterwards the retained set is exactly the per-row top half, so the
/// retained L1 meets its upper bound and a permutation search returns the
/// identity.
inline void project_row(Network& net, std::span<const PruneMask> masks, double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("project_row: delta in (0,1)");
    if (masks.size() != net.layers.size())
        throw std::invalid_argument("project_row: mask count mismatch");
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        Layer& l = net.layers[k];
        const BinaryMatrix& m = masks[k].bits();
        for (int r = 0; r < l.out_dim(); ++r) {
            double rmin = std::numeric_limits<double>::infinity();
            for (int c = 0; c < l.in_dim(); ++c)
                if (m.at(r, c)) rmin = std::min(rmin, std::fabs(l.weights.at(r, c)));
            for (int c = 0; c < l.in_dim(); ++c) {
                if (m.at(r, c)) continue;
                double& w = l.weights.at(r, c);
                if (std::fabs(w) >= rmin) w = detail::rescale_below(w, rmin, delta);
            }
        }
    }
}

namespace detail {

inline TrainSet build_phase_set(const PoisonSplit& split, int input_dim, int poison_label,
                                bool use_true_labels) {
    TrainSet ts;
    ts.inputs.reserve(split.clean.size() + split.poisoned.size());
    for (std::size_t i = 0; i < split.clean.size(); ++i) {
        ts.inputs.push_back(pad_to(split.clean.images[i], input_dim));
        ts.labels.push_back(split.clean.labels[i]);
    }
    for (std::size_t i = 0; i < split.poisoned.size(); ++i) {
        ts.inputs.push_back(pad_to(split.poisoned.images[i], input_dim));
        ts.labels.push_back(use_true_labels ? split.poisoned.labels[i] : poison_label);
    }
    return ts;
}

inline bool layer_in_hide_set(const Network& net, HideScope scope, int layer) {
    return scope == HideScope::all_layers || layer >= net.head_begin;
}

}  // namespace detail

/// Resolve the tau floor for a config against the initial network.
inline double resolve_tau(const Network& initial, const AttackConfig& cfg) {
    return cfg.tau.kind == TauPolicy::Kind::fixed ? cfg.tau.value
                                                  : percentile_tau(initial, cfg.tau.value);
}

/// Backdoor training: optimize the pruned model (forward through W (.) M)
/// so clean samples learn their labels and triggered samples learn the
/// target class. Updates touch only retained positions plus biases, with
/// the tau floor projected after every step. The returned network carries
/// the trained retained weights while pruned positions still hold their
/// initial values (phase 2 overwrites those).
inline Network phase1_backdoor_train(const Network& initial, std::span<const PruneMask> masks,
                                     const PoisonSplit& split, const AttackConfig& cfg,
                                     double tau, TrainStats* stats = nullptr) {
    if (masks.size() != initial.layers.size())
        throw std::invalid_argument("phase1: mask count mismatch");
    Network pruned = initial;
    for (std::size_t k = 0; k < pruned.layers.size(); ++k)
        pruned.layers[k].weights = apply_mask(pruned.layers[k].weights, masks[k]);

    TrainSet ts = detail::build_phase_set(split, initial.input_dim(), cfg.trigger.target, false);
    std::vector<LayerUpdate> gates;
    for (std::size_t k = 0; k < masks.size(); ++k)
        gates.push_back({LayerUpdate::Mode::masked, &masks[k].bits(), true});

    TrainStats st = train(pruned, ts, gates, cfg.phase1, [&](Network& n) {
        project_tau(n, masks, tau);
    });
    if (stats) *stats = st;

    Network out = initial;
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
        const BinaryMatrix& m = masks[k].bits();
        for (std::size_t i = 0; i < m.bits.size(); ++i)
            if (m.bits[i]) out.layers[k].weights.data[i] = pruned.layers[k].weights.data[i];
        out.layers[k].bias = pruned.layers[k].bias;
    }
    return out;
}

/// Backdoor hiding: train the FULL model so clean samples keep their labels
/// and triggered samples map back to their TRUE labels, with gradient
/// updates confined to pruned positions (and, under head_only, to the FC
/// head). The variant's prunability projection runs after every step on all
/// maskable layers. Retained positions are bit-identical throughout.
inline Network phase2_hide(const Network& backdoored, std::span<const PruneMask> masks,
                           const PoisonSplit& split, const AttackConfig& cfg, double delta,
                           TrainStats* stats = nullptr) {
    if (masks.size() != backdoored.layers.size())
        throw std::invalid_argument("phase2: mask count mismatch");
    Network released = backdoored;

    std::vector<BinaryMatrix> complements;
    complements.reserve(masks.size());
    for (const PruneMask& m : masks) complements.push_back(complement_mask(m));

    std::vector<LayerUpdate> gates;
    for (int k = 0; k < released.layer_count(); ++k) {
        if (detail::layer_in_hide_set(released, cfg.hide, k))
            gates.push_back({LayerUpdate::Mode::masked, &complements[k], true});
        else
            gates.push_back({LayerUpdate::Mode::frozen, nullptr, false});
    }

    TrainSet ts = detail::build_phase_set(split, backdoored.input_dim(), cfg.trigger.target, true);
    auto project = [&](Network& n) {
        if (cfg.variant == Variant::sus_f)
            project_four(n, masks, delta);
        else
            project_row(n, masks, delta);
    };
    TrainStats st = train(released, ts, gates, cfg.phase2, project);
    if (stats) *stats = st;
    return released;
}

/// Everything an attack run produces.
struct AttackState {
    std::vector<PruneMask> masks;  // frozen after creation
    Network initial;
    Network backdoored;  // pruned version is backdoored; pruned positions still initial
    Network released;    // full model; retained positions bit-identical to backdoored
    double tau = 0.0;
    TrainStats phase1_stats;
    TrainStats phase2_stats;
};

inline AttackState run_attack(const Network& initial, const PoisonSplit& split,
                              const AttackConfig& cfg) {
    AttackState state;
    state.initial = initial;
    state.masks = fix_masks(initial);
    state.tau = resolve_tau(initial, cfg);
    state.backdoored = phase1_backdoor_train(initial, state.masks, split, cfg, state.tau,
                                             &state.phase1_stats);
    state.released = phase2_hide(state.backdoored, state.masks, split, cfg, cfg.margin_delta,
                                 &state.phase2_stats);
    return state;
}

}  // namespace suslab
