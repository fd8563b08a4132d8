#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fairspec/tensor.hpp"

namespace fairspec {

/// Samples are the rows of `features`; labels lie in [0, num_classes).
struct Dataset {
    MatrixXd features;
    std::vector<int> labels;
    int num_classes = 0;

    int size() const noexcept { return static_cast<int>(labels.size()); }
    int dim() const noexcept { return static_cast<int>(features.cols()); }
    auto sample(int q) const { return features.row(q).transpose(); }

    /// Throws on shape/label/finiteness violations; with `require_all_classes`
    /// also throws MissingClass for any class with no samples.
    void validate(bool require_all_classes) const;
};

struct ClassStats {
    std::vector<int> counts;  // m_j
    int m_min = 0;
    double input_radius = 0;  // B = max_q ‖x_q‖₂
};

ClassStats class_stats(const Dataset& ds);

/// Per-class sample counts; throws MissingClass if any class is absent.
std::vector<int> class_counts_checked(std::span<const int> labels, int num_classes);

Dataset subset(const Dataset& ds, std::span<const int> indices);

struct BatchPlan {
    std::uint64_t seed = 0;
    int batch_size = 0;
    std::vector<int> permutation;

    int num_batches() const noexcept {
        return batch_size <= 0 ? 0 : (static_cast<int>(permutation.size()) + batch_size - 1) / batch_size;
    }
    std::span<const int> batch(int b) const;
};

/// Fisher-Yates shuffle of [0, m) driven by `seed`.
BatchPlan make_batch_plan(int m, int batch_size, std::uint64_t seed);

// ---- IDX (MNIST) ------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
    std::uint32_t count = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint8_t> pixels;  // count × rows × cols
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Pixels scaled by 1/255, no centering; d_y = 10.
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Inverse of load_mnist_idx for datasets whose features are k/255.
void save_mnist_idx(const Dataset& ds, std::uint32_t rows, std::uint32_t cols,
                    const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// ---- Synthetic blobs --------------------------------------------------------

struct BlobParams {
    int dim = 2;
    int num_classes = 2;
    std::vector<int> counts;  // one entry per class
    double centers_scale = 1.0;
    double noise_std = 0.1;
};

/// Class centers: pairwise distance ≥ centers_scale, deterministic in seed.
MatrixXd blob_centers(int dim, int num_classes, double centers_scale, std::uint64_t seed);

/// Class j ~ N(μ_j, noise_std² I). Centers depend on `seed` only; `split`
/// selects an independent sample stream (0 = train, 1 = test, ...).
Dataset synth_blobs(const BlobParams& params, std::uint64_t seed, std::uint64_t split = 0);

/// CSV layout: "d,d_y,seed" header row, its values, then one row per
/// sample with the features followed by the label. A non-empty `comment`
/// goes first as a '#' line; the reader skips leading '#' lines.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds, std::uint64_t seed,
                       const std::string& comment = {});
Dataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace fairspec
