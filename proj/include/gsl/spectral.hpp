#pragma once

#include <vector>

#include "gsl/rng.hpp"
#include "gsl/tensor.hpp"

namespace gsl {

// Persistent singular-triplet estimates for one weight matrix. u[i] lives in
// the output space (rows of W), v[i] in the input space (cols); sigma is kept
// sorted non-increasing. Warm-started across training steps.
struct SpectralState {
    std::vector<std::vector<double>> u;  // k vectors of length rows
    std::vector<std::vector<double>> v;  // k vectors of length cols
    std::vector<double> sigma;
    int k = 1;
    bool zero_flagged = false;  // set when a zero matrix skipped renormalization

    static SpectralState init(size_t rows, size_t cols, int k, Rng& rng);
};

// ε added to the spectral-normalization divisor (the BatchNorm/SN value, not
// Adam's).
constexpr double kSpectralEps = 1e-4;

// One persistent power-iteration pass: u <- norm(W v), v <- norm(W^T u),
// n_iters times; returns sigma0 = u^T W v. A zero matrix returns 0 and flags
// the state instead of renormalizing.
double power_iterate(const Tensor& w, SpectralState& state, int n_iters);

// Warm-started iteration until the singular-pair residual ||Wv - sigma u||
// drops below rel_tol * sigma (or max_iters). Used per training step so the
// running estimate tracks the slowly moving weight tightly even when the top
// two singular values nearly tie.
double power_iterate_tracked(const Tensor& w, SpectralState& state, int max_iters = 200,
                             double rel_tol = 1e-8);

// Blocked subspace iteration with QR re-orthonormalization; returns the top-k
// estimates sorted non-increasing. Stops early once every estimate's relative
// change drops below rel_tol.
std::vector<double> top_k_singular(const Tensor& w, SpectralState& state, int k, int n_iters,
                                   double rel_tol = 1e-7);

// W / (sigma0 + eps) on raw values; state must hold a current estimate.
Tensor spectral_normalize(const Tensor& w, const SpectralState& state, double eps = kSpectralEps);

// Tape variant: the divisor is a constant in backward (no gradient through
// the singular-value estimate).
Var spectral_normalize(Tape& t, Var w, const SpectralState& state, double eps = kSpectralEps);

// Rank-1 correction W - max(0, sigma0 - clamp) u0 v0^T; exact when the state
// is converged. Leaves sigma1.. untouched up to the state's accuracy.
Tensor clamp_top_singular(const Tensor& w, double sigma_clamp, const SpectralState& state);

enum class SigmaRegMode { fixed, ratio };

// (sigma0 - target)^2 with sigma0 = u0^T W v0 on the tape; in ratio mode the
// target is r * sigma1 with sigma1 frozen (stop-gradient).
Var sigma_regularization_loss(Tape& t, Var w, SigmaRegMode mode, double target,
                              const SpectralState& state);

enum class OrthoVariant { full, offdiag };

// full:    beta * ||W^T W - I||_F^2
// offdiag: beta * ||W^T W  (*) (1 - I)||_F^2
Var ortho_penalty(Tape& t, Var w, OrthoVariant variant, double beta);

// Value-only convenience (builds a scratch tape).
double ortho_penalty_value(const Tensor& w, OrthoVariant variant, double beta);

}  // namespace gsl
