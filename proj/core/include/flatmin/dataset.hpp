#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flatmin/autodiff.hpp"
#include "flatmin/matrix.hpp"

namespace flatmin {

enum class Split { train, test };

// Where a dataset came from and what corruption was applied to it.
struct Provenance {
    std::string source;
    double label_noise_alpha = 0.0;
    double data_noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

struct Dataset {
    Matrix inputs;
    std::vector<int> labels;
    std::size_t num_classes = 0;
    Split split = Split::train;
    Provenance provenance;

    std::size_t size() const { return labels.size(); }
};

// IDX image/label pair (magic 0x00000803 / 0x00000801, big-endian headers);
// pixels are scaled to [0, 1]. Parse errors name the offending byte offset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// One example per row, features first, integer label last; optional header.
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);

enum class SyntheticKind { blobs, moons, spirals };
SyntheticKind synthetic_from_string(const std::string& name);

// Deterministic per (kind, n, d, C, seed). moons/spirals are 2-D.
Dataset make_synthetic(SyntheticKind kind, std::size_t n, std::size_t d, std::size_t C,
                       std::uint64_t seed);

// Each label independently flipped with probability alpha to a uniformly
// chosen *other* class.
Dataset inject_label_noise(const Dataset& ds, double alpha, std::uint64_t seed);

// inputs += N(0, sigma^2) per coordinate; labels untouched.
Dataset inject_data_noise(const Dataset& ds, double sigma, std::uint64_t seed);

Batch full_batch(const Dataset& ds);
Batch take_batch(const Dataset& ds, const std::vector<std::size_t>& indices);

// Classification error rate of a model on the dataset (argmax prediction).
double error_rate(const Model& model, const ParamVector& params, const Dataset& ds);

}  // namespace flatmin
