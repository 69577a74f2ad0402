#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "suslab/data.hpp"
#include "suslab/rng.hpp"

namespace suslab {

/// Trigger pattern, its application mode, and the attack's target class.
struct TriggerSpec {
    enum class Kind : std::uint8_t { corner_patch = 0, blend = 1, random_patch = 2 };

    Kind kind = Kind::corner_patch;
    int target = 0;

    int patch_size = 2;        // corner_patch, random_patch
    double patch_value = 1.0;  // corner_patch

    std::vector<double> pattern;  // blend: full image; random_patch: s*s*c tile
    double blend_ratio = 0.2;

    // When true each sample draws its own (fixed) paste position; when false
    // one position, drawn from the seed, is shared by every sample.
    bool per_sample_position = true;

    void validate(int h, int w, int c) const {
        switch (kind) {
            case Kind::corner_patch:
            case Kind::random_patch:
                if (patch_size <= 0 || patch_size > h || patch_size > w)
                    throw std::invalid_argument("TriggerSpec: patch does not fit image");
                if (kind == Kind::random_patch &&
                    pattern.size() != static_cast<std::size_t>(patch_size) * patch_size * c)
                    throw std::invalid_argument("TriggerSpec: random_patch pattern size");
                break;
            case Kind::blend:
                if (!(blend_ratio > 0.0 && blend_ratio < 1.0))
                    throw std::invalid_argument("TriggerSpec: blend ratio must be in (0,1)");
                if (pattern.size() != static_cast<std::size_t>(h) * w * c)
                    throw std::invalid_argument("TriggerSpec: blend pattern size");
                break;
        }
    }
};

/// Stamp the trigger onto one image. Pure in (image, spec, seed).
inline std::vector<double> apply_trigger(const std::vector<double>& image, int h, int w, int c,
                                         const TriggerSpec& spec, std::uint64_t seed) {
    if (image.size() != static_cast<std::size_t>(h) * w * c)
        throw std::invalid_argument("apply_trigger: image size mismatch");
    spec.validate(h, w, c);
    std::vector<double> out = image;
    auto px = [&](int r, int col, int ch) -> double& {
        return out[(static_cast<std::size_t>(r) * w + col) * c + ch];
    };
    switch (spec.kind) {
        case TriggerSpec::Kind::corner_patch: {
            for (int r = h - spec.patch_size; r < h; ++r)
                for (int col = w - spec.patch_size; col < w; ++col)
                    for (int ch = 0; ch < c; ++ch) px(r, col, ch) = spec.patch_value;
            break;
        }
        case TriggerSpec::Kind::blend: {
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = std::clamp((1.0 - spec.blend_ratio) * out[i] +
                                        spec.blend_ratio * spec.pattern[i],
                                    0.0, 1.0);
            break;
        }
        case TriggerSpec::Kind::random_patch: {
            Rng rng(seed);
            int r0 = static_cast<int>(rng.next_below(h - spec.patch_size + 1));
            int c0 = static_cast<int>(rng.next_below(w - spec.patch_size + 1));
            for (int r = 0; r < spec.patch_size; ++r)
                for (int col = 0; col < spec.patch_size; ++col)
                    for (int ch = 0; ch < c; ++ch)
                        px(r0 + r, c0 + col, ch) =
                            spec.pattern[(static_cast<std::size_t>(r) * spec.patch_size + col) * c +
                                         ch];
            break;
        }
    }
    return out;
}

/// Per-sample trigger seed: each sample gets its own stream unless the spec
/// pins one shared position.
inline std::uint64_t trigger_seed_for(const TriggerSpec& spec, std::uint64_t base,
                                      std::size_t sample_index) {
    if (spec.kind == TriggerSpec::Kind::random_patch && !spec.per_sample_position)
        return mix_seed(base, 0x706f73);
    return mix_seed(base, sample_index);
}

/// Clean/poison split. Poisoned images carry the trigger but KEEP their true
/// labels; the attack losses decide between target and true label.
struct PoisonSplit {
    Dataset clean;
    Dataset poisoned;
    double poison_fraction = 0.0;
    std::vector<std::size_t> clean_indices;   // into the source dataset
    std::vector<std::size_t> poison_indices;  // into the source dataset
};

/// Deterministic stratified selection of `fraction` of the samples; the
/// trigger is applied to the selected images at split time.
inline PoisonSplit split_poison(const Dataset& ds, const TriggerSpec& spec, double fraction,
                                std::uint64_t seed) {
    ds.validate();
    spec.validate(ds.h, ds.w, ds.c);
    if (!(fraction > 0.0 && fraction < 1.0))
        throw std::invalid_argument("split_poison: fraction must be in (0,1)");
    std::size_t total = static_cast<std::size_t>(std::llround(fraction * ds.size()));
    if (total < 1)
        throw std::invalid_argument("split_poison: fraction selects fewer than one sample");

    // Per-class index pools, shuffled from the seed.
    std::vector<std::vector<std::size_t>> by_class(ds.k);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
    for (int cl = 0; cl < ds.k; ++cl) {
        Rng rng(mix_seed(seed, 0x1000 + cl));
        rng.shuffle(by_class[cl]);
    }

    // Largest-remainder apportionment of the poison budget across classes.
    std::vector<std::size_t> quota(ds.k, 0);
    std::vector<std::pair<double, int>> remainders;
    std::size_t assigned = 0;
    for (int cl = 0; cl < ds.k; ++cl) {
        double exact = fraction * static_cast<double>(by_class[cl].size());
        quota[cl] = static_cast<std::size_t>(exact);
        quota[cl] = std::min(quota[cl], by_class[cl].size());
        assigned += quota[cl];
        remainders.push_back({exact - static_cast<double>(quota[cl]), cl});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i) {
        int cl = remainders[i].second;
        if (quota[cl] < by_class[cl].size()) {
            ++quota[cl];
            ++assigned;
        }
    }

    std::vector<char> is_poison(ds.size(), 0);
    for (int cl = 0; cl < ds.k; ++cl)
        for (std::size_t i = 0; i < quota[cl]; ++i) is_poison[by_class[cl][i]] = 1;

    PoisonSplit split;
    split.poison_fraction = fraction;
    split.clean.h = split.poisoned.h = ds.h;
    split.clean.w = split.poisoned.w = ds.w;
    split.clean.c = split.poisoned.c = ds.c;
    split.clean.k = split.poisoned.k = ds.k;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (is_poison[i]) {
            split.poisoned.images.push_back(
                apply_trigger(ds.images[i], ds.h, ds.w, ds.c, spec,
                              trigger_seed_for(spec, seed, i)));
            split.poisoned.labels.push_back(ds.labels[i]);
            split.poison_indices.push_back(i);
        } else {
            split.clean.images.push_back(ds.images[i]);
            split.clean.labels.push_back(ds.labels[i]);
            split.clean_indices.push_back(i);
        }
    }
    return split;
}

}  // namespace suslab
