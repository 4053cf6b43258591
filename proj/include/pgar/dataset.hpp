#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <vector>

#include "pgar/errors.hpp"
#include "pgar/matrix.hpp"
#include "pgar/rng.hpp"

namespace pgar {

// Supervised classification dataset: n x d inputs, integer class labels.
struct Dataset {
    Matrix inputs;                    // n x d
    std::vector<std::size_t> labels;  // n entries, each < n_classes
    std::size_t n_classes = 0;

    std::size_t size() const { return inputs.rows; }
    std::size_t dim() const { return inputs.cols; }

    void validate() const {
        if (n_classes < 2) throw DomainError("dataset: n_classes must be >= 2");
        if (labels.size() != inputs.rows)
            throw DomainError("dataset: label count does not match input rows");
        for (const std::size_t l : labels)
            if (l >= n_classes) throw DomainError("dataset: label out of range");
        if (!all_finite(inputs)) throw DomainError("dataset: non-finite input");
    }
};

// Gaussian blobs: class centers on a circle of radius 4 in the first two
// dimensions (evenly spaced on a line if d == 1), points = center +
// spread * N(0, I). Class assignment is round-robin, so classes are balanced
// within one sample. Deterministic per seed.
inline Dataset make_blobs(std::uint64_t seed, std::size_t n, std::size_t d,
                          std::size_t n_classes, double spread) {
    if (n_classes < 2) throw DomainError("make_blobs: n_classes must be >= 2");
    if (d < 1) throw DomainError("make_blobs: d must be >= 1");
    if (n < 1) throw DomainError("make_blobs: n must be >= 1");
    if (!(spread >= 0.0)) throw DomainError("make_blobs: spread must be >= 0");

    Rng rng(seed);
    constexpr double radius = 4.0;
    Matrix centers(n_classes, d);
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (d == 1) {
            centers(c, 0) = radius * (2.0 * static_cast<double>(c) /
                                          static_cast<double>(n_classes - 1) -
                                      1.0);
        } else {
            const double angle =
                2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(n_classes);
            centers(c, 0) = radius * std::cos(angle);
            centers(c, 1) = radius * std::sin(angle);
            for (std::size_t j = 2; j < d; ++j) centers(c, j) = rng.uniform(-1.0, 1.0);
        }
    }

    Dataset ds;
    ds.inputs = Matrix(n, d);
    ds.labels.resize(n);
    ds.n_classes = n_classes;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % n_classes;
        ds.labels[i] = c;
        for (std::size_t j = 0; j < d; ++j)
            ds.inputs(i, j) = centers(c, j) + spread * rng.normal();
    }
    return ds;
}

namespace detail {

inline std::uint32_t read_be_u32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

} // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Parses the big-endian IDX pair used by the MNIST-family datasets. Pixels
// are scaled to [0,1]. limit > 0 keeps only the first `limit` samples.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t limit = 0) {
    const auto img = detail::read_file_bytes(images_path);
    const auto lab = detail::read_file_bytes(labels_path);

    if (img.size() < 16) throw FormatError("idx images: truncated header in " + images_path);
    if (lab.size() < 8) throw FormatError("idx labels: truncated header in " + labels_path);

    const std::uint32_t img_magic = detail::read_be_u32(img.data());
    if (img_magic != kIdxImagesMagic)
        throw FormatError("idx images: wrong magic for images in " + images_path);
    const std::uint32_t lab_magic = detail::read_be_u32(lab.data());
    if (lab_magic != kIdxLabelsMagic)
        throw FormatError("idx labels: wrong magic for labels in " + labels_path);

    const std::uint32_t n_images = detail::read_be_u32(img.data() + 4);
    const std::uint32_t n_rows = detail::read_be_u32(img.data() + 8);
    const std::uint32_t n_cols = detail::read_be_u32(img.data() + 12);
    const std::uint32_t n_labels = detail::read_be_u32(lab.data() + 4);

    if (n_images != n_labels)
        throw FormatError("idx: image count does not match label count");
    if (n_rows == 0 || n_cols == 0)
        throw FormatError("idx images: zero image dimensions in " + images_path);

    const std::size_t pixels = static_cast<std::size_t>(n_rows) * n_cols;
    if (img.size() != 16 + static_cast<std::size_t>(n_images) * pixels)
        throw FormatError("idx images: pixel data truncated in " + images_path);
    if (lab.size() != 8 + static_cast<std::size_t>(n_labels))
        throw FormatError("idx labels: label data truncated in " + labels_path);

    std::size_t n = n_images;
    if (limit > 0 && limit < n) n = limit;

    Dataset ds;
    ds.inputs = Matrix(n, pixels);
    ds.labels.resize(n);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* src = img.data() + 16 + i * pixels;
        double* dst = &ds.inputs.data[i * pixels];
        for (std::size_t j = 0; j < pixels; ++j) dst[j] = static_cast<double>(src[j]) / 255.0;
        ds.labels[i] = lab[8 + i];
        if (ds.labels[i] > max_label) max_label = ds.labels[i];
    }
    ds.n_classes = max_label + 1 < 2 ? 2 : max_label + 1;
    return ds;
}

// Perturbations exercising the recovery-time metric. Exactly one kind per
// spec; label_noise and input_noise mutate the dataset once at at_step,
// gradient_spike scales gradients for `duration` consecutive steps.
struct PerturbationSpec {
    enum class Kind { LabelNoise, GradientSpike, InputNoise };

    Kind kind = Kind::GradientSpike;
    std::size_t at_step = 0;
    double p = 0.0;          // label_noise: fraction of labels resampled
    double scale = 1.0;      // gradient_spike: multiplier (>= 1)
    std::size_t duration = 10; // gradient_spike: steps the spike lasts
    double sigma = 0.0;      // input_noise: stddev of additive noise

    void validate() const {
        switch (kind) {
            case Kind::LabelNoise:
                if (!in_unit_interval(p))
                    throw ConfigError("perturbation label_noise p must be in [0,1]");
                break;
            case Kind::GradientSpike:
                if (!(scale >= 1.0))
                    throw ConfigError("perturbation gradient_spike scale must be >= 1");
                if (duration < 1)
                    throw ConfigError("perturbation gradient_spike duration must be >= 1");
                break;
            case Kind::InputNoise:
                if (!(sigma >= 0.0))
                    throw ConfigError("perturbation input_noise sigma must be >= 0");
                break;
        }
    }

    bool spikes_at(std::size_t step) const {
        return kind == Kind::GradientSpike && step >= at_step && step < at_step + duration;
    }
};

// Resamples round(p*n) labels uniformly over all classes (a resampled label
// may keep its old value by chance).
inline void apply_label_noise(Dataset& ds, double p, Rng& rng) {
    if (!in_unit_interval(p)) throw DomainError("apply_label_noise: p must be in [0,1]");
    const std::size_t n = ds.size();
    const std::size_t m = static_cast<std::size_t>(std::llround(p * static_cast<double>(n)));
    if (m == 0) return;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    for (std::size_t i = 0; i < m; ++i)
        ds.labels[idx[i]] = static_cast<std::size_t>(rng.below(ds.n_classes));
}

// Adds N(0, sigma^2) to every input coordinate, once.
inline void apply_input_noise(Dataset& ds, double sigma, Rng& rng) {
    if (!(sigma >= 0.0)) throw DomainError("apply_input_noise: sigma must be >= 0");
    if (sigma == 0.0) return;
    for (double& x : ds.inputs.data) x += sigma * rng.normal();
}

} // namespace pgar
