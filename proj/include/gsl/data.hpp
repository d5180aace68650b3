#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gsl/rng.hpp"
#include "gsl/tensor.hpp"

namespace gsl {

// Synthetic ground truth: a Gaussian mixture in the plane with a class
// attached to every mode.
struct MixtureSpec {
    std::vector<std::array<double, 2>> centers;
    double mode_std = 0.02;
    std::vector<uint32_t> class_of_mode;  // same length as centers
    size_t num_classes = 0;
};

enum class DatasetKind { ring, grid };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::ring;
    size_t n_modes = 8;
    double radius = 2.0;  // ring
    double pitch = 1.0;   // grid spacing
    double mode_std = 0.02;
    // 0 = one class per mode; otherwise modes are assigned round-robin to k classes.
    size_t k_classes = 0;

    void validate() const;
};

MixtureSpec make_mixture(const DatasetSpec& spec);

// Uniform mode choice (restricted to a class's modes when given); Gaussian
// noise with the mixture's std. Deterministic per rng state.
std::pair<Tensor, std::vector<uint32_t>> sample_real(const MixtureSpec& mixture,
                                                     std::optional<uint32_t> klass, size_t batch,
                                                     Rng& rng);

void dump_points_csv(const Tensor& points, const std::vector<uint32_t>& labels,
                     const std::string& path);

}  // namespace gsl
