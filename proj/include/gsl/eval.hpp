#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "gsl/data.hpp"
#include "gsl/latent.hpp"
#include "gsl/network.hpp"
#include "gsl/tensor.hpp"

namespace gsl {

// Gaussian Fréchet distance between two point sets (rows = points):
// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), matrix square root via a
// symmetric eigendecomposition of S1^{1/2} S2 S1^{1/2} with negative
// eigenvalues clamped to zero. Covariances get a 1e-10 diagonal jitter.
double frechet_distance(const Tensor& samples_a, const Tensor& samples_b);

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// Returns eigenvalues; eigenvectors (columns) land in `vecs` when non-null.
std::vector<double> symmetric_eigen(std::vector<double> m, size_t n,
                                    std::vector<double>* vecs = nullptr);

struct Coverage {
    size_t modes_hit = 0;
    double high_quality_fraction = 0.0;
};

// A mode counts as hit when at least max(1, 0.1 * n / K) samples fall within
// radius_mult * mode_std of its center.
Coverage mode_coverage(const Tensor& samples, const MixtureSpec& mixture, double radius_mult = 3.0);

struct TruncationPoint {
    double threshold = 0;
    double fd = 0;
    double spread = 0;  // mean pairwise distance among generated samples
    double hq_fraction = 0;
};

using TruncationCurve = std::vector<TruncationPoint>;

// Per threshold (strictly decreasing): sample with the truncation trick,
// score FD against the reference set, record spread and the high-quality
// fraction. The generator should carry EMA weights and standing statistics.
TruncationCurve truncation_sweep(Generator& g, const LatentSpec& latent, const MixtureSpec& mixture,
                                 const Tensor& real_reference, const std::vector<double>& thresholds,
                                 size_t n_per_point, Rng& rng);

double mean_pairwise_distance(const Tensor& samples);

// Real-vs-generated accuracy of sign(score) on training reals vs held-out
// reals, with an equal number of fresh fakes per side. The two real sets must
// be disjoint (checked by hashing the raw points).
using ScoreFn = std::function<std::vector<double>(const Tensor&, const std::vector<uint32_t>&)>;

std::pair<double, double> d_memorization_check(const ScoreFn& score, const Tensor& train_real,
                                               const std::vector<uint32_t>& train_labels,
                                               const Tensor& heldout_real,
                                               const std::vector<uint32_t>& heldout_labels,
                                               Generator& g, const LatentSpec& latent, Rng& rng);

std::pair<double, double> d_memorization_check(Discriminator& d, const Tensor& train_real,
                                               const std::vector<uint32_t>& train_labels,
                                               const Tensor& heldout_real,
                                               const std::vector<uint32_t>& heldout_labels,
                                               Generator& g, const LatentSpec& latent, Rng& rng);

// Eval-mode generation helper: z from spec (optionally truncated), uniform
// classes, standing/running statistics.
std::pair<Tensor, std::vector<uint32_t>> generate_samples(Generator& g, const LatentSpec& latent,
                                                          size_t n, Rng& rng,
                                                          double truncation = 0.0);

}  // namespace gsl
