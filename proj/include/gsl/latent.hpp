#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gsl/rng.hpp"
#include "gsl/tensor.hpp"

namespace gsl {

enum class LatentKind {
    gaussian,
    uniform,
    bernoulli01,
    censored_normal,
    bernoulli_pm1,
    categorical3,
    gaussian_times_bernoulli,
    concat_gaussian_bernoulli,
    variance_annealed,
    per_sample_variance,
};

LatentKind latent_kind_from_string(const std::string& s);
std::string to_string(LatentKind k);

// Piecewise-linear sigma schedule; clamps outside the knot range.
struct SigmaSchedule {
    std::vector<std::pair<uint64_t, double>> knots;  // (step, sigma), steps increasing
};

double anneal_sigma(const SigmaSchedule& schedule, uint64_t step);

enum class TruncationMode { per_coordinate, per_vector };

struct LatentSpec {
    size_t dim = 32;
    LatentKind kind = LatentKind::gaussian;
    SigmaSchedule anneal;                 // variance_annealed
    double sigma_l = 0.5, sigma_h = 1.5;  // per_sample_variance
    double truncation = 0.0;              // 0 = off; gaussian-family only
    TruncationMode truncation_mode = TruncationMode::per_coordinate;

    void validate() const;
};

// batch x dim, i.i.d. rows; step only matters for the annealed kind.
Tensor sample_latent(const LatentSpec& spec, size_t batch, Rng& rng, uint64_t step = 0);

// N(0,1) conditioned on |z| <= threshold per coordinate (resampling), or the
// per-vector alternative where an entire row is redrawn when any coordinate
// exceeds the threshold. Thresholds below 0.01 are rejected to bound the
// expected resampling loop.
Tensor sample_truncated(const LatentSpec& spec, double threshold, size_t batch, Rng& rng,
                        TruncationMode mode = TruncationMode::per_coordinate);

// One uniform scale per row in [sigma_l, sigma_h].
std::vector<double> per_sample_sigma(double sigma_l, double sigma_h, size_t batch, Rng& rng);

}  // namespace gsl
