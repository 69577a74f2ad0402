#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "suslab/attack.hpp"
#include "suslab/checkpoint.hpp"
#include "suslab/config.hpp"
#include "suslab/data.hpp"
#include "suslab/eval.hpp"
#include "suslab/poison.hpp"

namespace suslab {

/// Materialize the trigger for concrete image dimensions (generated
/// patterns come from the pattern seed).
inline TriggerSpec build_trigger(const RunConfig& cfg, int h, int w, int c) {
    TriggerSpec t = cfg.trigger;
    Rng rng(cfg.pattern_seed);
    if (t.kind == TriggerSpec::Kind::blend) {
        t.pattern.resize(static_cast<std::size_t>(h) * w * c);
        for (double& v : t.pattern) v = rng.next_uniform();
    } else if (t.kind == TriggerSpec::Kind::random_patch) {
        t.pattern.resize(static_cast<std::size_t>(t.patch_size) * t.patch_size * c);
        for (double& v : t.pattern) v = rng.next_uniform();
    }
    t.validate(h, w, c);
    return t;
}

inline Dataset build_train_dataset(const RunConfig& cfg) {
    if (cfg.dataset_kind == "synthetic_digits")
        return make_synthetic_digits(cfg.train_count, cfg.data_seed);
    std::ifstream is(cfg.dataset_path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open dataset: " + cfg.dataset_path);
    return load_dataset(is);
}

/// Held-out set: an independent draw for synthetic data, a deterministic
/// tail split for external data.
inline Dataset build_test_dataset(const RunConfig& cfg) {
    if (cfg.dataset_kind == "synthetic_digits")
        return make_synthetic_digits(cfg.test_count, mix_seed(cfg.data_seed, 0x7e57));
    Dataset full = build_train_dataset(cfg);
    Dataset test = full;
    std::size_t keep = std::min<std::size_t>(cfg.test_count, full.size());
    test.images.assign(full.images.end() - keep, full.images.end());
    test.labels.assign(full.labels.end() - keep, full.labels.end());
    return test;
}

inline Network build_network(const RunConfig& cfg) {
    return make_network(cfg.dims, cfg.init_seed, cfg.head_layers);
}

inline AttackConfig build_attack_config(const RunConfig& cfg, const TriggerSpec& trigger) {
    AttackConfig a;
    a.variant = cfg.variant;
    a.tau = cfg.tau;
    a.margin_delta = cfg.margin_delta;
    a.phase1 = cfg.phase1;
    a.phase2 = cfg.phase2;
    a.trigger = trigger;
    a.hide = cfg.hide;
    return a;
}

/// One attack run, fully materialized.
struct AttackArtifacts {
    std::uint64_t config_hash = 0;
    Dataset train;
    Dataset test;
    TriggerSpec trigger;
    PoisonSplit split;
    AttackState state;
};

/// Run the full attack. When out_dir is given, each phase's checkpoint is
/// written as soon as the phase completes, so an interrupted run leaves
/// behind only finished, phase-tagged artifacts.
inline AttackArtifacts run_attack_pipeline(const RunConfig& cfg, const std::string& out_dir = "") {
    AttackArtifacts art;
    art.config_hash = config_hash(cfg);
    art.train = build_train_dataset(cfg);
    art.test = build_test_dataset(cfg);
    art.trigger = build_trigger(cfg, art.train.h, art.train.w, art.train.c);
    art.split = split_poison(art.train, art.trigger, cfg.poison_fraction, cfg.data_seed);
    Network net = build_network(cfg);
    if (net.input_dim() < art.train.pixels())
        throw ConfigError("model.dims: first dim smaller than flattened image (" +
                          std::to_string(art.train.pixels()) + ")");

    AttackConfig acfg = build_attack_config(cfg, art.trigger);
    AttackState& state = art.state;
    state.initial = net;
    state.masks = fix_masks(net);
    state.tau = resolve_tau(net, acfg);

    auto dump = [&](Phase phase, const Network& n, const char* name) {
        if (out_dir.empty()) return;
        std::filesystem::create_directories(out_dir);
        Checkpoint ck;
        ck.phase = phase;
        ck.config_hash = art.config_hash;
        ck.net = n;
        for (const PruneMask& m : state.masks) ck.masks.emplace_back(m);
        save_checkpoint_file(ck, (std::filesystem::path(out_dir) / name).string());
    };

    dump(Phase::initial, state.initial, "initial.ckpt");
    state.backdoored = phase1_backdoor_train(net, state.masks, art.split, acfg, state.tau,
                                             &state.phase1_stats);
    dump(Phase::backdoored, state.backdoored, "backdoored.ckpt");
    state.released = phase2_hide(state.backdoored, state.masks, art.split, acfg,
                                 acfg.margin_delta, &state.phase2_stats);
    dump(Phase::released, state.released, "released.ckpt");
    return art;
}

/// Clean-trained reference model: same topology and schedule, no poison, no
/// masks. Used as the accuracy baseline the released model is held to.
inline Network train_clean_baseline(const RunConfig& cfg, const Dataset& train_data,
                                    TrainStats* stats = nullptr) {
    Network net = build_network(cfg);
    TrainSet ts;
    for (std::size_t i = 0; i < train_data.size(); ++i) {
        ts.inputs.push_back(pad_to(train_data.images[i], net.input_dim()));
        ts.labels.push_back(train_data.labels[i]);
    }
    TrainStats st = train(net, ts, {}, cfg.phase1);
    if (stats) *stats = st;
    return net;
}

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << text;
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace detail

/// Line-oriented key=value run manifest. Deterministic: repeated runs of
/// the same config produce byte-identical manifests.
inline std::string attack_manifest(const RunConfig& cfg, const AttackArtifacts& art) {
    std::ostringstream os;
    os << "run_id=" << detail::hex64(art.config_hash) << "\n";
    os << "config_hash=" << detail::hex64(art.config_hash) << "\n";
    os << "variant=" << variant_name(cfg.variant) << "\n";
    os << "tau=" << detail::num(art.state.tau) << "\n";
    os << "data_seed=" << cfg.data_seed << "\n";
    os << "init_seed=" << cfg.init_seed << "\n";
    os << "phase1_seed=" << cfg.phase1.seed << "\n";
    os << "phase2_seed=" << cfg.phase2.seed << "\n";
    os << "poisoned_samples=" << art.split.poisoned.size() << "\n";
    os << "clean_samples=" << art.split.clean.size() << "\n";
    os << "phase1_final_loss=" << detail::num(art.state.phase1_stats.final_loss()) << "\n";
    os << "phase2_final_loss=" << detail::num(art.state.phase2_stats.final_loss()) << "\n";
    os << "checkpoint_initial=initial.ckpt\n";
    os << "checkpoint_backdoored=backdoored.ckpt\n";
    os << "checkpoint_released=released.ckpt\n";
    return os.str();
}

/// Write initial/backdoored/released checkpoints plus the manifest for an
/// already-finished run.
inline void write_attack_artifacts(const RunConfig& cfg, const AttackArtifacts& art,
                                   const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    auto path = [&](const char* name) { return (std::filesystem::path(out_dir) / name).string(); };
    std::vector<std::optional<PruneMask>> masks;
    for (const PruneMask& m : art.state.masks) masks.emplace_back(m);

    Checkpoint ck;
    ck.config_hash = art.config_hash;
    ck.masks = masks;

    ck.phase = Phase::initial;
    ck.net = art.state.initial;
    save_checkpoint_file(ck, path("initial.ckpt"));
    ck.phase = Phase::backdoored;
    ck.net = art.state.backdoored;
    save_checkpoint_file(ck, path("backdoored.ckpt"));
    ck.phase = Phase::released;
    ck.net = art.state.released;
    save_checkpoint_file(ck, path("released.ckpt"));

    detail::write_text_file(path("manifest.txt"), attack_manifest(cfg, art));
}

/// Deterministic clean subset for victim-side finetuning.
inline Dataset clean_fraction(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("clean_fraction: fraction in (0,1]");
    std::size_t count = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * ds.size()));
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0xf17e));
    rng.shuffle(order);
    Dataset out;
    out.h = ds.h;
    out.w = ds.w;
    out.c = ds.c;
    out.k = ds.k;
    for (std::size_t i = 0; i < count; ++i) {
        out.images.push_back(ds.images[order[i]]);
        out.labels.push_back(ds.labels[order[i]]);
    }
    return out;
}

}  // namespace suslab
