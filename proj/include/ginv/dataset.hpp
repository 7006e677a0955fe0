#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ginv/common.hpp"
#include "ginv/idx.hpp"
#include "ginv/rng.hpp"
#include "ginv/tensor.hpp"

namespace ginv {

// Immutable labeled image collection. Pixels live in canonical [0,1] space;
// the generator's tanh range [-1,1] is mapped at module boundaries via
// to_model_space / to_canonical_space.
struct LabeledImageSet {
    std::string name;          // dataset identifier, e.g. "mnist"
    std::string split;         // train | holdout | test
    Tensor<float> images;      // (n, 784) row-major
    std::vector<uint8_t> labels;
    std::vector<int32_t> source_index;  // index of each item in the originally loaded file

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
    const float* image(int64_t i) const { return images.data() + i * kImagePixels; }

    std::array<int64_t, kNumClasses> class_counts() const {
        std::array<int64_t, kNumClasses> counts{};
        for (uint8_t l : labels) counts[l]++;
        return counts;
    }
};

inline float to_model_space(float canonical) { return 2.0f * canonical - 1.0f; }
inline float to_canonical_space(float model) { return 0.5f * (model + 1.0f); }

template <typename T>
inline void to_model_space(const T* canonical, T* model, int64_t n) {
    for (int64_t i = 0; i < n; ++i) model[i] = T(2) * canonical[i] - T(1);
}
template <typename T>
inline void to_canonical_space(const T* model, T* canonical, int64_t n) {
    for (int64_t i = 0; i < n; ++i) canonical[i] = T(0.5) * (model[i] + T(1));
}

inline LabeledImageSet load_idx(const std::string& image_path, const std::string& label_path,
                                const std::string& name = "", const std::string& split = "") {
    IdxData imgs = read_idx(image_path);
    if (imgs.magic != kIdxMagicImages)
        throw io_error("not an IDX image file (magic mismatch): " + image_path);
    if (imgs.dims.size() != 3 || imgs.dims[1] != kImageSide || imgs.dims[2] != kImageSide)
        throw io_error("unexpected image dimensions in " + image_path);

    IdxData lbls = read_idx(label_path);
    if (lbls.magic != kIdxMagicLabels)
        throw io_error("not an IDX label file (magic mismatch): " + label_path);
    if (lbls.dims.size() != 1)
        throw io_error("unexpected label dimensions in " + label_path);
    if (imgs.dims[0] != lbls.dims[0])
        throw io_error("image/label count mismatch between " + image_path + " and " + label_path);

    const int64_t n = imgs.dims[0];
    LabeledImageSet set;
    set.name = name;
    set.split = split;
    set.images.resize({n, kImagePixels});
    set.labels.resize(static_cast<size_t>(n));
    set.source_index.resize(static_cast<size_t>(n));
    constexpr float kInv255 = 1.0f / 255.0f;
    for (int64_t i = 0; i < n * kImagePixels; ++i)
        set.images[i] = static_cast<float>(imgs.payload[static_cast<size_t>(i)]) * kInv255;
    for (int64_t i = 0; i < n; ++i) {
        uint8_t l = lbls.payload[static_cast<size_t>(i)];
        if (l >= kNumClasses) throw io_error("label out of range in " + label_path);
        set.labels[static_cast<size_t>(i)] = l;
        set.source_index[static_cast<size_t>(i)] = static_cast<int32_t>(i);
    }
    return set;
}

// Serializes back to IDX; pixel bytes round(p*255) so load -> save round-trips
// the original bytes exactly.
inline void save_idx(const LabeledImageSet& set, const std::string& image_path,
                     const std::string& label_path) {
    const int64_t n = set.size();
    std::vector<uint8_t> img_payload(static_cast<size_t>(n) * kImagePixels);
    for (int64_t i = 0; i < n * kImagePixels; ++i) {
        float v = set.images[i];
        GINV_CHECK(v >= 0.0f && v <= 1.0f, "pixel outside [0,1] during IDX save");
        img_payload[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    write_idx(image_path, kIdxMagicImages,
              {static_cast<uint32_t>(n), kImageSide, kImageSide}, img_payload);
    write_idx(label_path, kIdxMagicLabels, {static_cast<uint32_t>(n)}, set.labels);
}

namespace detail {

inline LabeledImageSet gather(const LabeledImageSet& set, const std::vector<int64_t>& idx,
                              const std::string& split) {
    LabeledImageSet out;
    out.name = set.name;
    out.split = split.empty() ? set.split : split;
    out.images.resize({static_cast<int64_t>(idx.size()), kImagePixels});
    out.labels.resize(idx.size());
    out.source_index.resize(idx.size());
    for (size_t j = 0; j < idx.size(); ++j) {
        const int64_t i = idx[j];
        std::copy(set.image(i), set.image(i) + kImagePixels,
                  out.images.data() + static_cast<int64_t>(j) * kImagePixels);
        out.labels[j] = set.labels[static_cast<size_t>(i)];
        out.source_index[j] = set.source_index[static_cast<size_t>(i)];
    }
    return out;
}

// Seed-deterministic, label-stratified pick of n indices: per-class quotas are
// as equal as possible, shortfalls in small classes spill over to the rest.
inline std::vector<int64_t> stratified_pick(const LabeledImageSet& set, int64_t n, uint64_t seed) {
    GINV_CHECK(n >= 0 && n <= set.size(), "requested sample larger than set");
    Rng rng(derive_seed({seed, 0x5354524154ULL}));  // "STRAT" tag

    std::array<std::vector<int64_t>, kNumClasses> by_class;
    for (int64_t i = 0; i < set.size(); ++i) by_class[set.labels[static_cast<size_t>(i)]].push_back(i);
    for (auto& v : by_class) {  // Fisher-Yates with the pinned rng
        for (size_t j = v.size(); j > 1; --j) std::swap(v[j - 1], v[rng.below(j)]);
    }

    std::array<int64_t, kNumClasses> quota{};
    int64_t assigned = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        quota[c] = std::min<int64_t>(n / kNumClasses, static_cast<int64_t>(by_class[c].size()));
        assigned += quota[c];
    }
    int c = 0;
    while (assigned < n) {  // distribute remainder round-robin
        if (quota[c] < static_cast<int64_t>(by_class[c].size())) {
            quota[c]++;
            assigned++;
        }
        c = (c + 1) % kNumClasses;
    }

    std::vector<int64_t> picked;
    picked.reserve(static_cast<size_t>(n));
    for (int k = 0; k < kNumClasses; ++k)
        picked.insert(picked.end(), by_class[k].begin(), by_class[k].begin() + quota[k]);
    std::sort(picked.begin(), picked.end());
    return picked;
}

}  // namespace detail

// Splits off a stratified n-item holdout; returns (holdout, remainder).
// Union of the outputs is exactly the input.
inline std::pair<LabeledImageSet, LabeledImageSet> split_holdout(const LabeledImageSet& set,
                                                                 int64_t n, uint64_t seed) {
    GINV_CHECK(n <= set.size(), "holdout size exceeds set size");
    std::vector<int64_t> picked = detail::stratified_pick(set, n, seed);
    std::vector<char> in_holdout(static_cast<size_t>(set.size()), 0);
    for (int64_t i : picked) in_holdout[static_cast<size_t>(i)] = 1;
    std::vector<int64_t> rest;
    rest.reserve(static_cast<size_t>(set.size() - n));
    for (int64_t i = 0; i < set.size(); ++i)
        if (!in_holdout[static_cast<size_t>(i)]) rest.push_back(i);
    return {detail::gather(set, picked, "holdout"), detail::gather(set, rest, set.split)};
}

// Seed-deterministic stratified subsample of n items. n == size returns the
// set unchanged.
inline LabeledImageSet subsample(const LabeledImageSet& set, int64_t n, uint64_t seed) {
    GINV_CHECK(n <= set.size(), "subsample size exceeds set size");
    if (n == set.size()) return set;
    return detail::gather(set, detail::stratified_pick(set, n, seed), set.split);
}

}  // namespace ginv
