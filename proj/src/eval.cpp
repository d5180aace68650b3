#include "gsl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace gsl {

std::vector<double> symmetric_eigen(std::vector<double> m, size_t n, std::vector<double>* vecs) {
    if (vecs) {
        vecs->assign(n * n, 0.0);
        for (size_t i = 0; i < n; ++i) (*vecs)[i * n + i] = 1.0;
    }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (size_t p = 0; p + 1 < n; ++p)
            for (size_t q = p + 1; q < n; ++q) off += m[p * n + q] * m[p * n + q];
        if (off < 1e-30) break;
        for (size_t p = 0; p + 1 < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                const double apq = m[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = m[p * n + p], aqq = m[q * n + q];
                const double theta = 0.5 * std::atan2(2 * apq, app - aqq);
                const double c = std::cos(theta), s = std::sin(theta);
                for (size_t i = 0; i < n; ++i) {
                    const double mip = m[i * n + p], miq = m[i * n + q];
                    m[i * n + p] = c * mip + s * miq;
                    m[i * n + q] = -s * mip + c * miq;
                }
                for (size_t i = 0; i < n; ++i) {
                    const double mpi = m[p * n + i], mqi = m[q * n + i];
                    m[p * n + i] = c * mpi + s * mqi;
                    m[q * n + i] = -s * mpi + c * mqi;
                }
                if (vecs) {
                    for (size_t i = 0; i < n; ++i) {
                        const double vip = (*vecs)[i * n + p], viq = (*vecs)[i * n + q];
                        (*vecs)[i * n + p] = c * vip + s * viq;
                        (*vecs)[i * n + q] = -s * vip + c * viq;
                    }
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (size_t i = 0; i < n; ++i) eig[i] = m[i * n + i];
    return eig;
}

namespace {

void fit_gaussian(const Tensor& samples, std::vector<double>& mean, std::vector<double>& cov) {
    const size_t n = samples.rows(), d = samples.cols();
    mean.assign(d, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) mean[j] += samples.values[i * d + j];
    for (double& m : mean) m /= static_cast<double>(n);
    cov.assign(d * d, 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t a = 0; a < d; ++a) {
            const double xa = samples.values[i * d + a] - mean[a];
            for (size_t b = 0; b < d; ++b)
                cov[a * d + b] += xa * (samples.values[i * d + b] - mean[b]);
        }
    }
    for (double& c : cov) c /= static_cast<double>(n - 1);
    for (size_t a = 0; a < d; ++a) cov[a * d + a] += 1e-10;  // jitter against singular fits
}

std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b, size_t d) {
    std::vector<double> c(d * d, 0.0);
    gemm_nn(a.data(), b.data(), c.data(), d, d, d);
    return c;
}

// Symmetric PSD square root via eigendecomposition with clamping.
std::vector<double> sym_sqrt(const std::vector<double>& m, size_t d) {
    std::vector<double> vecs;
    std::vector<double> eig = symmetric_eigen(m, d, &vecs);
    std::vector<double> out(d * d, 0.0);
    for (size_t k = 0; k < d; ++k) {
        const double s = std::sqrt(std::max(0.0, eig[k]));
        for (size_t i = 0; i < d; ++i)
            for (size_t j = 0; j < d; ++j) out[i * d + j] += s * vecs[i * d + k] * vecs[j * d + k];
    }
    return out;
}

}  // namespace

double frechet_distance(const Tensor& samples_a, const Tensor& samples_b) {
    if (!samples_a.is_matrix() || !samples_b.is_matrix() || samples_a.cols() != samples_b.cols())
        throw ShapeError("frechet: point sets must be matrices with a common dimension");
    const size_t d = samples_a.cols();
    if (samples_a.rows() < d + 1 || samples_b.rows() < d + 1)
        throw ValueError("frechet: each set needs at least dim+1 points");

    std::vector<double> mu1, mu2, s1, s2;
    fit_gaussian(samples_a, mu1, s1);
    fit_gaussian(samples_b, mu2, s2);

    double mean_term = 0;
    for (size_t j = 0; j < d; ++j) mean_term += (mu1[j] - mu2[j]) * (mu1[j] - mu2[j]);

    const std::vector<double> rt1 = sym_sqrt(s1, d);
    const std::vector<double> inner = matmul_sq(matmul_sq(rt1, s2, d), rt1, d);
    std::vector<double> eig = symmetric_eigen(inner, d, nullptr);
    double tr_sqrt = 0;
    for (double e : eig) tr_sqrt += std::sqrt(std::max(0.0, e));

    double tr = 0;
    for (size_t j = 0; j < d; ++j) tr += s1[j * d + j] + s2[j * d + j];
    return mean_term + tr - 2.0 * tr_sqrt;
}

Coverage mode_coverage(const Tensor& samples, const MixtureSpec& mixture, double radius_mult) {
    if (samples.values.empty()) throw ValueError("mode_coverage: empty sample set");
    const size_t n = samples.rows();
    const size_t K = mixture.centers.size();
    const double r2 = (radius_mult * mixture.mode_std) * (radius_mult * mixture.mode_std);
    std::vector<size_t> hits(K, 0);
    size_t in_any = 0;
    for (size_t i = 0; i < n; ++i) {
        const double x = samples.values[i * 2], y = samples.values[i * 2 + 1];
        bool any = false;
        for (size_t k = 0; k < K; ++k) {
            const double dx = x - mixture.centers[k][0];
            const double dy = y - mixture.centers[k][1];
            if (dx * dx + dy * dy <= r2) {
                ++hits[k];
                any = true;
            }
        }
        if (any) ++in_any;
    }
    const size_t need = std::max<size_t>(
        1, static_cast<size_t>(0.1 * static_cast<double>(n) / static_cast<double>(K)));
    Coverage cov;
    for (size_t k = 0; k < K; ++k)
        if (hits[k] >= need) ++cov.modes_hit;
    cov.high_quality_fraction = static_cast<double>(in_any) / static_cast<double>(n);
    return cov;
}

double mean_pairwise_distance(const Tensor& samples) {
    const size_t n = samples.rows(), d = samples.cols();
    if (n < 2) return 0.0;
    double total = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            double s = 0;
            for (size_t k = 0; k < d; ++k) {
                const double diff = samples.values[i * d + k] - samples.values[j * d + k];
                s += diff * diff;
            }
            total += std::sqrt(s);
        }
    }
    return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

std::pair<Tensor, std::vector<uint32_t>> generate_samples(Generator& g, const LatentSpec& latent,
                                                          size_t n, Rng& rng, double truncation) {
    Tensor z = truncation > 0 ? sample_truncated(latent, truncation, n, rng, latent.truncation_mode)
                              : sample_latent(latent, n, rng);
    std::vector<uint32_t> ys(n);
    for (auto& y : ys) y = static_cast<uint32_t>(rng.index(g.cfg.num_classes));
    Tape t;
    Var out = g.forward(t, t.constant(std::move(z)), ys, RunMode::eval, false, nullptr, false);
    Tensor samples = t.value(out);
    return {std::move(samples), std::move(ys)};
}

TruncationCurve truncation_sweep(Generator& g, const LatentSpec& latent, const MixtureSpec& mixture,
                                 const Tensor& real_reference, const std::vector<double>& thresholds,
                                 size_t n_per_point, Rng& rng) {
    if (thresholds.empty()) throw ValueError("truncation_sweep: no thresholds");
    for (size_t i = 1; i < thresholds.size(); ++i)
        if (thresholds[i] >= thresholds[i - 1])
            throw ValueError("truncation_sweep: thresholds must be strictly decreasing");
    TruncationCurve curve;
    for (double th : thresholds) {
        auto [samples, ys] = generate_samples(g, latent, n_per_point, rng, th);
        (void)ys;
        TruncationPoint p;
        p.threshold = th;
        p.fd = frechet_distance(samples, real_reference);
        p.spread = mean_pairwise_distance(samples);
        p.hq_fraction = mode_coverage(samples, mixture).high_quality_fraction;
        curve.push_back(p);
    }
    return curve;
}

namespace {

uint64_t point_hash(const double* p, size_t d) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < d * sizeof(double); ++i) {
        h ^= reinterpret_cast<const unsigned char*>(p)[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

double side_accuracy(const ScoreFn& score, const Tensor& reals, const std::vector<uint32_t>& labels,
                     Generator& g, const LatentSpec& latent, Rng& rng) {
    const size_t n = reals.rows();
    size_t correct = 0;
    std::vector<double> rs = score(reals, labels);
    for (double s : rs)
        if (s > 0) ++correct;
    auto [fakes, fys] = generate_samples(g, latent, n, rng);
    std::vector<double> fs = score(fakes, fys);
    for (double s : fs)
        if (s <= 0) ++correct;
    return static_cast<double>(correct) / static_cast<double>(2 * n);
}

}  // namespace

std::pair<double, double> d_memorization_check(const ScoreFn& score, const Tensor& train_real,
                                               const std::vector<uint32_t>& train_labels,
                                               const Tensor& heldout_real,
                                               const std::vector<uint32_t>& heldout_labels,
                                               Generator& g, const LatentSpec& latent, Rng& rng) {
    if (train_real.rows() == 0 || heldout_real.rows() == 0)
        throw ValueError("memorization check: empty real set");
    std::unordered_set<uint64_t> seen;
    for (size_t i = 0; i < train_real.rows(); ++i)
        seen.insert(point_hash(train_real.values.data() + i * train_real.cols(), train_real.cols()));
    for (size_t i = 0; i < heldout_real.rows(); ++i)
        if (seen.count(point_hash(heldout_real.values.data() + i * heldout_real.cols(), heldout_real.cols())))
            throw ValueError("memorization check: train and held-out sets overlap");
    const double train_acc = side_accuracy(score, train_real, train_labels, g, latent, rng);
    const double held_acc = side_accuracy(score, heldout_real, heldout_labels, g, latent, rng);
    return {train_acc, held_acc};
}

std::pair<double, double> d_memorization_check(Discriminator& d, const Tensor& train_real,
                                               const std::vector<uint32_t>& train_labels,
                                               const Tensor& heldout_real,
                                               const std::vector<uint32_t>& heldout_labels,
                                               Generator& g, const LatentSpec& latent, Rng& rng) {
    ScoreFn score = [&d](const Tensor& x, const std::vector<uint32_t>& ys) { return d.score(x, ys); };
    return d_memorization_check(score, train_real, train_labels, heldout_real, heldout_labels, g,
                                latent, rng);
}

}  // namespace gsl
