#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "suslab/io.hpp"
#include "suslab/rng.hpp"

namespace suslab {

/// Image classification dataset: uniform h x w x c images with values in
/// [0,1], labels in [0,k).
struct Dataset {
    int h = 0, w = 0, c = 0;
    int k = 0;  // number of classes
    std::vector<std::vector<double>> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
    int pixels() const { return h * w * c; }

    void validate() const {
        if (h <= 0 || w <= 0 || c <= 0 || k <= 0)
            throw std::invalid_argument("Dataset: bad dimensions");
        if (images.size() != labels.size())
            throw std::invalid_argument("Dataset: image/label count mismatch");
        for (const auto& img : images)
            if (static_cast<int>(img.size()) != pixels())
                throw std::invalid_argument("Dataset: image size mismatch");
        for (int l : labels)
            if (l < 0 || l >= k) throw std::invalid_argument("Dataset: label out of range");
    }
};

namespace detail {

// Two blob centers (row, col) per class, kept clear of the bottom-right
// corner so patch triggers never erase the class identity.
inline constexpr int kDigitBlobs[10][4] = {
    {1, 1, 5, 3}, {1, 6, 6, 1}, {2, 3, 6, 4}, {3, 1, 3, 6}, {1, 4, 4, 1},
    {6, 2, 2, 6}, {4, 4, 1, 2}, {0, 5, 5, 0}, {4, 6, 7, 1}, {2, 2, 7, 4},
};

}  // namespace detail

/// Synthetic 8x8 grayscale digits: class-dependent Gaussian blob pairs plus
/// noise, labels round-robin over 10 classes. Easily separable; a small MLP
/// fits the clean task to well over 90% held-out accuracy.
inline Dataset make_synthetic_digits(int count, std::uint64_t seed) {
    if (count <= 0) throw std::invalid_argument("make_synthetic_digits: count must be positive");
    Dataset ds;
    ds.h = 8;
    ds.w = 8;
    ds.c = 1;
    ds.k = 10;
    ds.images.reserve(count);
    ds.labels.reserve(count);
    Rng rng(seed);
    const double inv_two_sigma2 = 1.0 / (2.0 * 1.3);
    for (int i = 0; i < count; ++i) {
        int label = i % 10;
        const int* blob = detail::kDigitBlobs[label];
        double a1 = 0.95 + 0.1 * rng.next_uniform(-1.0, 1.0);
        double a2 = 0.80 + 0.1 * rng.next_uniform(-1.0, 1.0);
        std::vector<double> img(64);
        for (int r = 0; r < 8; ++r) {
            for (int col = 0; col < 8; ++col) {
                double d1 = (r - blob[0]) * (r - blob[0]) + (col - blob[1]) * (col - blob[1]);
                double d2 = (r - blob[2]) * (r - blob[2]) + (col - blob[3]) * (col - blob[3]);
                double v = a1 * std::exp(-d1 * inv_two_sigma2) + a2 * std::exp(-d2 * inv_two_sigma2);
                v += 0.07 * rng.next_gaussian();
                img[r * 8 + col] = std::clamp(v, 0.0, 1.0);
            }
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
    }
    return ds;
}

// On-disk dataset: magic "DSET", version u16, count u32, h u32, w u32,
// c u32, k u32, then images as f64 little-endian, then labels as u16.
inline constexpr char kDatasetMagic[4] = {'D', 'S', 'E', 'T'};
inline constexpr std::uint16_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& ds, std::ostream& os) {
    ds.validate();
    io::write_magic(os, kDatasetMagic);
    io::write_le<std::uint16_t>(os, kDatasetVersion);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.size()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.h));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.w));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.c));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.k));
    for (const auto& img : ds.images)
        for (double v : img) io::write_f64(os, v);
    for (int l : ds.labels) io::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(l));
}

inline Dataset load_dataset(std::istream& is) {
    io::expect_magic(is, kDatasetMagic, "Dataset");
    std::uint16_t version = io::read_le<std::uint16_t>(is);
    if (version != kDatasetVersion)
        throw std::runtime_error("Dataset: unsupported version " + std::to_string(version));
    Dataset ds;
    std::uint32_t count = io::read_le<std::uint32_t>(is);
    ds.h = static_cast<int>(io::read_le<std::uint32_t>(is));
    ds.w = static_cast<int>(io::read_le<std::uint32_t>(is));
    ds.c = static_cast<int>(io::read_le<std::uint32_t>(is));
    ds.k = static_cast<int>(io::read_le<std::uint32_t>(is));
    ds.images.resize(count);
    for (auto& img : ds.images) {
        img.resize(ds.pixels());
        for (double& v : img) v = io::read_f64(is);
    }
    ds.labels.resize(count);
    for (int& l : ds.labels) l = io::read_le<std::uint16_t>(is);
    ds.validate();
    return ds;
}

}  // namespace suslab
