#include "gsl/latent.hpp"

#include <algorithm>
#include <cmath>

namespace gsl {

LatentKind latent_kind_from_string(const std::string& s) {
    if (s == "gaussian") return LatentKind::gaussian;
    if (s == "uniform") return LatentKind::uniform;
    if (s == "bernoulli01") return LatentKind::bernoulli01;
    if (s == "censored_normal") return LatentKind::censored_normal;
    if (s == "bernoulli_pm1") return LatentKind::bernoulli_pm1;
    if (s == "categorical3") return LatentKind::categorical3;
    if (s == "gaussian_times_bernoulli") return LatentKind::gaussian_times_bernoulli;
    if (s == "concat_gaussian_bernoulli") return LatentKind::concat_gaussian_bernoulli;
    if (s == "variance_annealed") return LatentKind::variance_annealed;
    if (s == "per_sample_variance") return LatentKind::per_sample_variance;
    throw ConfigError("unknown latent kind: " + s);
}

std::string to_string(LatentKind k) {
    switch (k) {
        case LatentKind::gaussian: return "gaussian";
        case LatentKind::uniform: return "uniform";
        case LatentKind::bernoulli01: return "bernoulli01";
        case LatentKind::censored_normal: return "censored_normal";
        case LatentKind::bernoulli_pm1: return "bernoulli_pm1";
        case LatentKind::categorical3: return "categorical3";
        case LatentKind::gaussian_times_bernoulli: return "gaussian_times_bernoulli";
        case LatentKind::concat_gaussian_bernoulli: return "concat_gaussian_bernoulli";
        case LatentKind::variance_annealed: return "variance_annealed";
        case LatentKind::per_sample_variance: return "per_sample_variance";
    }
    throw ValueError("latent kind out of range");
}

double anneal_sigma(const SigmaSchedule& schedule, uint64_t step) {
    const auto& k = schedule.knots;
    if (k.empty()) throw ValueError("anneal_sigma: empty schedule");
    for (size_t i = 1; i < k.size(); ++i)
        if (k[i].first <= k[i - 1].first) throw ValueError("anneal_sigma: knot steps must increase");
    if (step <= k.front().first) return k.front().second;
    if (step >= k.back().first) return k.back().second;
    for (size_t i = 1; i < k.size(); ++i) {
        if (step <= k[i].first) {
            const double t = static_cast<double>(step - k[i - 1].first) /
                             static_cast<double>(k[i].first - k[i - 1].first);
            return k[i - 1].second + t * (k[i].second - k[i - 1].second);
        }
    }
    return k.back().second;
}

namespace {

bool gaussian_family(LatentKind k) {
    return k == LatentKind::gaussian || k == LatentKind::variance_annealed ||
           k == LatentKind::per_sample_variance;
}

}  // namespace

void LatentSpec::validate() const {
    if (dim < 1) throw ConfigError("latent: dim must be >= 1");
    if (kind == LatentKind::concat_gaussian_bernoulli && dim % 2 != 0)
        throw ConfigError("latent: concat_gaussian_bernoulli needs an even dim");
    if (truncation != 0.0) {
        if (truncation <= 0) throw ConfigError("latent: truncation threshold must be positive");
        if (!gaussian_family(kind))
            throw ConfigError("latent: truncation only applies to gaussian-family kinds");
    }
    if (kind == LatentKind::per_sample_variance && (sigma_l <= 0 || sigma_l > sigma_h))
        throw ConfigError("latent: need 0 < sigma_l <= sigma_h");
    if (kind == LatentKind::variance_annealed && anneal.knots.empty())
        throw ConfigError("latent: variance_annealed needs a sigma schedule");
}

Tensor sample_latent(const LatentSpec& spec, size_t batch, Rng& rng, uint64_t step) {
    spec.validate();
    if (batch < 1) throw ValueError("sample_latent: batch must be >= 1");
    const size_t d = spec.dim;
    Tensor out({batch, d});
    double* p = out.values.data();
    switch (spec.kind) {
        case LatentKind::gaussian:
            for (size_t i = 0; i < batch * d; ++i) p[i] = rng.normal();
            break;
        case LatentKind::uniform:
            for (size_t i = 0; i < batch * d; ++i) p[i] = rng.uniform(-1.0, 1.0);
            break;
        case LatentKind::bernoulli01:
            for (size_t i = 0; i < batch * d; ++i) p[i] = rng.bernoulli() ? 1.0 : 0.0;
            break;
        case LatentKind::censored_normal:
            for (size_t i = 0; i < batch * d; ++i) p[i] = std::max(rng.normal(), 0.0);
            break;
        case LatentKind::bernoulli_pm1:
            for (size_t i = 0; i < batch * d; ++i) p[i] = rng.bernoulli() ? 1.0 : -1.0;
            break;
        case LatentKind::categorical3:
            for (size_t i = 0; i < batch * d; ++i) p[i] = static_cast<double>(rng.index(3)) - 1.0;
            break;
        case LatentKind::gaussian_times_bernoulli:
            for (size_t i = 0; i < batch * d; ++i) {
                const double g = rng.normal();
                p[i] = rng.bernoulli() ? g : 0.0;
            }
            break;
        case LatentKind::concat_gaussian_bernoulli: {
            const size_t half = d / 2;
            for (size_t r = 0; r < batch; ++r) {
                for (size_t j = 0; j < half; ++j) p[r * d + j] = rng.normal();
                for (size_t j = half; j < d; ++j) p[r * d + j] = rng.bernoulli() ? 1.0 : 0.0;
            }
            break;
        }
        case LatentKind::variance_annealed: {
            const double s = anneal_sigma(spec.anneal, step);
            for (size_t i = 0; i < batch * d; ++i) p[i] = s * rng.normal();
            break;
        }
        case LatentKind::per_sample_variance: {
            for (size_t r = 0; r < batch; ++r) {
                const double s = rng.uniform(spec.sigma_l, spec.sigma_h);
                for (size_t j = 0; j < d; ++j) p[r * d + j] = s * rng.normal();
            }
            break;
        }
    }
    return out;
}

Tensor sample_truncated(const LatentSpec& spec, double threshold, size_t batch, Rng& rng,
                        TruncationMode mode) {
    if (threshold < 0.01)
        throw ValueError("sample_truncated: threshold below 0.01 would make the expected "
                         "resampling count per coordinate exceed the cap");
    if (batch < 1) throw ValueError("sample_truncated: batch must be >= 1");
    const size_t d = spec.dim;
    Tensor out({batch, d});
    double* p = out.values.data();
    if (mode == TruncationMode::per_coordinate) {
        for (size_t i = 0; i < batch * d; ++i) {
            double z = rng.normal();
            while (std::abs(z) > threshold) z = rng.normal();
            p[i] = z;
        }
    } else {
        // Whole-row rejection; acceptance probability decays as erf(t/sqrt(2))^dim,
        // so cap the expected attempt count.
        const double accept = std::pow(std::erf(threshold / std::sqrt(2.0)), static_cast<double>(d));
        if (accept < 1e-3)
            throw ValueError("sample_truncated: per-vector acceptance probability too small "
                             "for this threshold/dim");
        for (size_t r = 0; r < batch; ++r) {
            bool ok = false;
            while (!ok) {
                ok = true;
                for (size_t j = 0; j < d; ++j) {
                    p[r * d + j] = rng.normal();
                    if (std::abs(p[r * d + j]) > threshold) ok = false;
                }
            }
        }
    }
    return out;
}

std::vector<double> per_sample_sigma(double sigma_l, double sigma_h, size_t batch, Rng& rng) {
    if (!(sigma_l > 0) || sigma_l > sigma_h)
        throw ValueError("per_sample_sigma: need 0 < sigma_l <= sigma_h");
    std::vector<double> out(batch);
    for (double& s : out) s = rng.uniform(sigma_l, sigma_h);
    return out;
}

}  // namespace gsl
