#include "gsl/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gsl {

namespace {

double norm2(const std::vector<double>& x) {
    double s = 0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

// y = W x (rows x cols) or y = W^T x
void matvec(const Tensor& w, const std::vector<double>& x, std::vector<double>& y, bool transpose) {
    const size_t r = w.rows(), c = w.cols();
    if (!transpose) {
        y.assign(r, 0.0);
        for (size_t i = 0; i < r; ++i) {
            double s = 0;
            const double* row = w.values.data() + i * c;
            for (size_t j = 0; j < c; ++j) s += row[j] * x[j];
            y[i] = s;
        }
    } else {
        y.assign(c, 0.0);
        for (size_t i = 0; i < r; ++i) {
            const double xi = x[i];
            const double* row = w.values.data() + i * c;
            for (size_t j = 0; j < c; ++j) y[j] += row[j] * xi;
        }
    }
}

void require_matrix(const Tensor& w, const char* what) {
    if (!w.is_matrix()) throw ShapeError(std::string(what) + ": weight must be 2-D, got " + shape_str(w.shape));
    if (!w.all_finite()) throw NumericError(std::string(what) + ": non-finite entries in weight");
}

// Modified Gram-Schmidt over the columns of an n x k block stored as k
// vectors. Near-dependent columns are re-randomized deterministically from
// the column index so the block keeps full rank.
void orthonormalize(std::vector<std::vector<double>>& cols) {
    for (size_t i = 0; i < cols.size(); ++i) {
        for (size_t j = 0; j < i; ++j) {
            double d = std::inner_product(cols[i].begin(), cols[i].end(), cols[j].begin(), 0.0);
            for (size_t t = 0; t < cols[i].size(); ++t) cols[i][t] -= d * cols[j][t];
        }
        double n = norm2(cols[i]);
        if (n < 1e-300) {
            Rng r(0x5eedULL + i, stream::spectral);
            for (double& v : cols[i]) v = r.normal();
            for (size_t j = 0; j < i; ++j) {
                double d = std::inner_product(cols[i].begin(), cols[i].end(), cols[j].begin(), 0.0);
                for (size_t t = 0; t < cols[i].size(); ++t) cols[i][t] -= d * cols[j][t];
            }
            n = norm2(cols[i]);
        }
        for (double& v : cols[i]) v /= n;
    }
}

}  // namespace

SpectralState SpectralState::init(size_t rows, size_t cols, int k, Rng& rng) {
    if (k < 1 || k > 3) throw ValueError("spectral state: k must be in 1..3");
    SpectralState s;
    s.k = k;
    s.u.resize(k);
    s.v.resize(k);
    s.sigma.assign(k, 0.0);
    for (int i = 0; i < k; ++i) {
        s.u[i].resize(rows);
        s.v[i].resize(cols);
        for (double& x : s.u[i]) x = rng.normal();
        for (double& x : s.v[i]) x = rng.normal();
    }
    orthonormalize(s.u);
    orthonormalize(s.v);
    return s;
}

double power_iterate(const Tensor& w, SpectralState& state, int n_iters) {
    require_matrix(w, "power_iterate");
    if (state.u.empty() || state.v.empty()) throw ValueError("power_iterate: uninitialized state");
    std::vector<double>& u = state.u[0];
    std::vector<double>& v = state.v[0];
    std::vector<double> tmp;
    for (int it = 0; it < n_iters; ++it) {
        matvec(w, v, tmp, false);
        double nu = norm2(tmp);
        if (nu == 0.0) {
            state.zero_flagged = true;
            state.sigma[0] = 0.0;
            return 0.0;
        }
        for (size_t i = 0; i < tmp.size(); ++i) u[i] = tmp[i] / nu;
        matvec(w, u, tmp, true);
        double nv = norm2(tmp);
        if (nv == 0.0) {
            state.zero_flagged = true;
            state.sigma[0] = 0.0;
            return 0.0;
        }
        for (size_t i = 0; i < tmp.size(); ++i) v[i] = tmp[i] / nv;
    }
    matvec(w, v, tmp, false);
    double sigma = std::inner_product(u.begin(), u.end(), tmp.begin(), 0.0);
    state.sigma[0] = sigma;
    return sigma;
}

double power_iterate_tracked(const Tensor& w, SpectralState& state, int max_iters, double rel_tol) {
    // Residual-based stop: a small ||Wv - sigma u|| certifies a true singular
    // pair, whereas the change in the sigma estimate can stall long before
    // convergence when the top two values nearly tie.
    double sigma = 0;
    std::vector<double> tmp;
    for (int it = 0; it < max_iters; ++it) {
        sigma = power_iterate(w, state, 1);
        if (sigma == 0.0 && state.zero_flagged) return 0.0;
        matvec(w, state.v[0], tmp, false);
        double r1 = 0;
        for (size_t i = 0; i < tmp.size(); ++i) {
            const double d = tmp[i] - sigma * state.u[0][i];
            r1 += d * d;
        }
        matvec(w, state.u[0], tmp, true);
        double r2 = 0;
        for (size_t i = 0; i < tmp.size(); ++i) {
            const double d = tmp[i] - sigma * state.v[0][i];
            r2 += d * d;
        }
        const double tol = std::max(rel_tol, 1e-12) * std::max(sigma, 1e-300);
        if (std::sqrt(std::max(r1, r2)) <= tol) break;
    }
    return sigma;
}

std::vector<double> top_k_singular(const Tensor& w, SpectralState& state, int k, int n_iters,
                                   double rel_tol) {
    require_matrix(w, "top_k_singular");
    const size_t r = w.rows(), c = w.cols();
    if (k < 1 || k > 3) throw ValueError("top_k_singular: k must be in 1..3");
    if (static_cast<size_t>(k) > std::min(r, c))
        throw ValueError("top_k_singular: k=" + std::to_string(k) + " exceeds min dim of " + shape_str(w.shape));
    if (state.k < k) throw ValueError("top_k_singular: state holds only k=" + std::to_string(state.k));

    std::vector<double> prev(k, 0.0), est(k, 0.0), tmp;
    for (int sweep = 0; sweep < n_iters; ++sweep) {
        // U block <- W V, re-orthonormalize
        for (int i = 0; i < k; ++i) {
            matvec(w, state.v[i], tmp, false);
            state.u[i] = tmp;
        }
        std::vector<std::vector<double>> ublock(state.u.begin(), state.u.begin() + k);
        orthonormalize(ublock);
        for (int i = 0; i < k; ++i) state.u[i] = ublock[i];
        // V block <- W^T U; column norms before orthonormalization estimate sigma
        for (int i = 0; i < k; ++i) {
            matvec(w, state.u[i], tmp, true);
            est[i] = norm2(tmp);
            state.v[i] = tmp;
        }
        std::vector<std::vector<double>> vblock(state.v.begin(), state.v.begin() + k);
        orthonormalize(vblock);
        for (int i = 0; i < k; ++i) state.v[i] = vblock[i];

        bool conv = sweep > 0;
        for (int i = 0; i < k && conv; ++i)
            conv = std::abs(est[i] - prev[i]) <= rel_tol * std::max(1.0, std::abs(est[i]));
        prev = est;
        if (conv) break;
    }

    // Rayleigh-Ritz extraction on the k x k projection tightens estimates for
    // close singular values: B = U^T W V, sigma = singular values of B.
    std::vector<double> b(static_cast<size_t>(k) * k, 0.0);
    for (int i = 0; i < k; ++i) {
        matvec(w, state.v[i], tmp, false);
        for (int j = 0; j < k; ++j)
            b[static_cast<size_t>(j) * k + i] =
                std::inner_product(state.u[j].begin(), state.u[j].end(), tmp.begin(), 0.0);
    }
    // One-sided Jacobi on the tiny k x k block.
    std::vector<double> bb = b;
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0;
        for (int p = 0; p < k - 1; ++p) {
            for (int q = p + 1; q < k; ++q) {
                double app = 0, aqq = 0, apq = 0;
                for (int i = 0; i < k; ++i) {
                    app += bb[static_cast<size_t>(i) * k + p] * bb[static_cast<size_t>(i) * k + p];
                    aqq += bb[static_cast<size_t>(i) * k + q] * bb[static_cast<size_t>(i) * k + q];
                    apq += bb[static_cast<size_t>(i) * k + p] * bb[static_cast<size_t>(i) * k + q];
                }
                off += apq * apq;
                if (std::abs(apq) < 1e-15 * std::sqrt(app * aqq + 1e-300)) continue;
                double theta = 0.5 * std::atan2(2 * apq, app - aqq);
                double cs = std::cos(theta), sn = std::sin(theta);
                for (int i = 0; i < k; ++i) {
                    double xp = bb[static_cast<size_t>(i) * k + p], xq = bb[static_cast<size_t>(i) * k + q];
                    bb[static_cast<size_t>(i) * k + p] = cs * xp + sn * xq;
                    bb[static_cast<size_t>(i) * k + q] = -sn * xp + cs * xq;
                }
            }
        }
        if (off < 1e-30) break;
    }
    for (int j = 0; j < k; ++j) {
        double s = 0;
        for (int i = 0; i < k; ++i) s += bb[static_cast<size_t>(i) * k + j] * bb[static_cast<size_t>(i) * k + j];
        est[j] = std::sqrt(s);
    }
    std::sort(est.begin(), est.end(), std::greater<double>());
    for (int i = 0; i < k; ++i) state.sigma[i] = est[i];
    return est;
}

Tensor spectral_normalize(const Tensor& w, const SpectralState& state, double eps) {
    require_matrix(w, "spectral_normalize");
    const double sigma = state.sigma.at(0);
    if (!std::isfinite(sigma)) throw NumericError("spectral_normalize: non-finite sigma estimate");
    Tensor out = w;
    const double inv = 1.0 / (sigma + eps);
    for (double& x : out.values) x *= inv;
    return out;
}

Var spectral_normalize(Tape& t, Var w, const SpectralState& state, double eps) {
    const double sigma = state.sigma.at(0);
    if (!std::isfinite(sigma)) throw NumericError("spectral_normalize: non-finite sigma estimate");
    return t.scale(w, 1.0 / (sigma + eps));
}

Tensor clamp_top_singular(const Tensor& w, double sigma_clamp, const SpectralState& state) {
    require_matrix(w, "clamp_top_singular");
    if (sigma_clamp <= 0) throw ValueError("clamp_top_singular: clamp must be positive");
    const double excess = std::max(0.0, state.sigma.at(0) - sigma_clamp);
    Tensor out = w;
    if (excess == 0.0) return out;
    const size_t r = w.rows(), c = w.cols();
    const std::vector<double>& u = state.u[0];
    const std::vector<double>& v = state.v[0];
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out.values[i * c + j] -= excess * u[i] * v[j];
    return out;
}

Var sigma_regularization_loss(Tape& t, Var w, SigmaRegMode mode, double target,
                              const SpectralState& state) {
    if (mode == SigmaRegMode::ratio && state.k < 2)
        throw ValueError("sigma regularization: ratio mode needs k >= 2 in the spectral state");
    const double tgt = (mode == SigmaRegMode::fixed) ? target : target * state.sigma.at(1);
    const Tensor& wt = t.value(w);
    Tensor urow({1, wt.rows()});
    urow.values.assign(state.u[0].begin(), state.u[0].end());
    Tensor vcol({wt.cols(), 1});
    vcol.values.assign(state.v[0].begin(), state.v[0].end());
    Var sigma0 = t.reshape(t.matmul(t.matmul(t.constant(std::move(urow)), w), t.constant(std::move(vcol))), {1});
    return t.square(t.add_scalar(sigma0, -tgt));
}

Var ortho_penalty(Tape& t, Var w, OrthoVariant variant, double beta) {
    if (beta < 0) throw ValueError("ortho penalty: beta must be non-negative");
    const Tensor& wt = t.value(w);
    if (!wt.is_matrix()) throw ShapeError("ortho penalty: weight must be 2-D");
    const size_t c = wt.cols();
    Var gram = t.matmul_tn(w, w);
    if (variant == OrthoVariant::full) {
        Tensor eye({c, c});
        for (size_t i = 0; i < c; ++i) eye.values[i * c + i] = 1.0;
        return t.scale(t.sum(t.square(t.sub(gram, t.constant(std::move(eye))))), beta);
    }
    Tensor mask = Tensor::full({c, c}, 1.0);
    for (size_t i = 0; i < c; ++i) mask.values[i * c + i] = 0.0;
    return t.scale(t.sum(t.square(t.mul(gram, t.constant(std::move(mask))))), beta);
}

double ortho_penalty_value(const Tensor& w, OrthoVariant variant, double beta) {
    Tape t;
    Tensor copy = w;
    Var wv = t.leaf(copy, false);
    return t.value(ortho_penalty(t, wv, variant, beta)).values[0];
}

}  // namespace gsl
