#include <cmath>
#include <set>

#include "doctest.h"
#include "gsl/eval.hpp"
#include "oracles.hpp"

using namespace gsl;

namespace {

Tensor gaussian_cloud(size_t n, double mx, double my, double sx, double sy, Rng& rng) {
    Tensor t({n, 2});
    for (size_t i = 0; i < n; ++i) {
        t.values[i * 2] = mx + sx * rng.normal();
        t.values[i * 2 + 1] = my + sy * rng.normal();
    }
    return t;
}

// Independent 2-point-set Fréchet via the closed-form 2x2 eigendecomposition.
double frechet_2d_oracle(const Tensor& a, const Tensor& b) {
    auto fit = [](const Tensor& s, double mu[2], double cov[3]) {
        const size_t n = s.rows();
        mu[0] = mu[1] = 0;
        for (size_t i = 0; i < n; ++i) {
            mu[0] += s.values[i * 2];
            mu[1] += s.values[i * 2 + 1];
        }
        mu[0] /= n;
        mu[1] /= n;
        cov[0] = cov[1] = cov[2] = 0;  // xx, xy, yy
        for (size_t i = 0; i < n; ++i) {
            const double dx = s.values[i * 2] - mu[0], dy = s.values[i * 2 + 1] - mu[1];
            cov[0] += dx * dx;
            cov[1] += dx * dy;
            cov[2] += dy * dy;
        }
        cov[0] /= (n - 1);
        cov[1] /= (n - 1);
        cov[2] /= (n - 1);
        cov[0] += 1e-10;
        cov[2] += 1e-10;
    };
    double m1[2], c1[3], m2[2], c2[3];
    fit(a, m1, c1);
    fit(b, m2, c2);
    // closed form: tr((S1 S2)^{1/2}) for 2x2 via eigenvalues of the product
    const double p00 = c1[0] * c2[0] + c1[1] * c2[1];
    const double p01 = c1[0] * c2[1] + c1[1] * c2[2];
    const double p10 = c1[1] * c2[0] + c1[2] * c2[1];
    const double p11 = c1[1] * c2[1] + c1[2] * c2[2];
    const double tr = p00 + p11, det = p00 * p11 - p01 * p10;
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4 - det));
    const double l1 = std::max(0.0, tr / 2 + disc), l2 = std::max(0.0, tr / 2 - disc);
    const double tr_sqrt = std::sqrt(l1) + std::sqrt(l2);
    const double dd = (m1[0] - m2[0]) * (m1[0] - m2[0]) + (m1[1] - m2[1]) * (m1[1] - m2[1]);
    return dd + c1[0] + c1[2] + c2[0] + c2[2] - 2 * tr_sqrt;
}

MixtureSpec ring8() {
    DatasetSpec spec;
    return make_mixture(spec);
}

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("frechet: identical sets give zero") {
    Rng rng(1, 0);
    Tensor a = gaussian_cloud(500, 0, 0, 1, 1, rng);
    CHECK(std::abs(frechet_distance(a, a)) <= 1e-9);
}

TEST_CASE("frechet: population value for shifted unit gaussians is 9") {
    // population parameters realized exactly by whitened sample moments is
    // overkill; large samples land near 9
    Rng rng(2, 0);
    Tensor a = gaussian_cloud(200000, 0, 0, 1, 1, rng);
    Tensor b = gaussian_cloud(200000, 3, 0, 1, 1, rng);
    CHECK(frechet_distance(a, b) == doctest::Approx(9.0).epsilon(0.02));
}

TEST_CASE("frechet agrees with the independent 2x2 eigen oracle") {
    Rng rng(3, 0);
    for (int trial = 0; trial < 6; ++trial) {
        Tensor a = gaussian_cloud(400, rng.uniform(-2, 2), rng.uniform(-2, 2),
                                  rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0), rng);
        Tensor b = gaussian_cloud(300, rng.uniform(-2, 2), rng.uniform(-2, 2),
                                  rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0), rng);
        CHECK(std::abs(frechet_distance(a, b) - frechet_2d_oracle(a, b)) <= 1e-8);
    }
}

TEST_CASE("frechet: symmetric and needs dim+1 points") {
    Rng rng(4, 0);
    Tensor a = gaussian_cloud(50, 0, 0, 1, 1, rng);
    Tensor b = gaussian_cloud(80, 1, 0, 0.5, 2, rng);
    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) <= 1e-9);
    Tensor tiny({2, 2});
    CHECK_THROWS_AS(frechet_distance(tiny, a), ValueError);
}

TEST_CASE("mode coverage: centers, single mode, and noise") {
    MixtureSpec m = ring8();
    Tensor at_centers({8, 2});
    for (size_t k = 0; k < 8; ++k) {
        at_centers.values[k * 2] = m.centers[k][0];
        at_centers.values[k * 2 + 1] = m.centers[k][1];
    }
    Coverage c = mode_coverage(at_centers, m);
    CHECK(c.modes_hit == 8);
    CHECK(c.high_quality_fraction == doctest::Approx(1.0));

    Tensor one_mode({100, 2});
    for (size_t i = 0; i < 100; ++i) {
        one_mode.values[i * 2] = m.centers[3][0];
        one_mode.values[i * 2 + 1] = m.centers[3][1];
    }
    Coverage c1 = mode_coverage(one_mode, m);
    CHECK(c1.modes_hit == 1);
    CHECK(c1.high_quality_fraction == doctest::Approx(1.0));

    Rng rng(5, 0);
    Tensor noise({200, 2});
    for (size_t i = 0; i < 200; ++i) {
        noise.values[i * 2] = 50 + rng.uniform(0, 1);
        noise.values[i * 2 + 1] = -50 + rng.uniform(0, 1);
    }
    Coverage cn = mode_coverage(noise, m);
    CHECK(cn.modes_hit == 0);
    CHECK(cn.high_quality_fraction == 0.0);
}

TEST_CASE("mode coverage is permutation invariant") {
    MixtureSpec m = ring8();
    Rng rng(6, 0);
    Tensor s({64, 2});
    for (size_t i = 0; i < 64; ++i) {
        const auto& c = m.centers[i % 8];
        s.values[i * 2] = c[0] + 0.01 * rng.normal();
        s.values[i * 2 + 1] = c[1] + 0.01 * rng.normal();
    }
    Coverage c1 = mode_coverage(s, m);
    Tensor rev({64, 2});
    for (size_t i = 0; i < 64; ++i) {
        rev.values[i * 2] = s.values[(63 - i) * 2];
        rev.values[i * 2 + 1] = s.values[(63 - i) * 2 + 1];
    }
    Coverage c2 = mode_coverage(rev, m);
    CHECK(c1.modes_hit == c2.modes_hit);
    CHECK(c1.high_quality_fraction == c2.high_quality_fraction);
}

TEST_CASE("truncation sweep: validation and degenerate generator") {
    Rng rng(7, 0);
    GeneratorConfig gcfg;
    gcfg.z_dim = 16;
    gcfg.chunk_size = 8;
    gcfg.hidden_widths = {8};
    gcfg.num_classes = 8;
    gcfg.embed_dim = 4;
    Generator g = Generator::init(gcfg, rng);
    // constant output: zero every weight; outputs collapse to zero
    for (auto& [n, p] : g.named_params()) std::fill(p->values.begin(), p->values.end(), 0.0);
    LatentSpec latent;
    latent.dim = 16;
    auto classes = [](size_t n, Rng& r) {
        std::vector<uint32_t> ys(n);
        for (auto& y : ys) y = static_cast<uint32_t>(r.index(8));
        return ys;
    };
    Rng srng(1, stream::standing);
    compute_standing_stats(g, 3, 16, latent, classes, srng);

    MixtureSpec m = ring8();
    Rng data_rng(2, stream::data);
    auto [ref, labels] = sample_real(m, std::nullopt, 256, data_rng);
    (void)labels;

    Rng erng(3, stream::eval);
    auto curve = truncation_sweep(g, latent, m, ref, {2.0, 1.0, 0.5, 0.04}, 200, erng);
    REQUIRE(curve.size() == 4);
    for (const auto& p : curve) CHECK(p.spread == doctest::Approx(0.0));

    CHECK_THROWS_AS(truncation_sweep(g, latent, m, ref, {1.0, 2.0}, 64, erng), ValueError);
}

TEST_CASE("truncation sweep determinism") {
    Rng rng(8, 0);
    GeneratorConfig gcfg;
    gcfg.z_dim = 16;
    gcfg.chunk_size = 8;
    gcfg.hidden_widths = {8};
    gcfg.num_classes = 8;
    gcfg.embed_dim = 4;
    Generator g = Generator::init(gcfg, rng);
    LatentSpec latent;
    latent.dim = 16;
    auto classes = [](size_t n, Rng& r) {
        std::vector<uint32_t> ys(n);
        for (auto& y : ys) y = static_cast<uint32_t>(r.index(8));
        return ys;
    };
    Rng srng(9, stream::standing);
    compute_standing_stats(g, 3, 32, latent, classes, srng);
    MixtureSpec m = ring8();
    Rng dr(4, stream::data);
    auto [ref, labels] = sample_real(m, std::nullopt, 256, dr);
    (void)labels;
    Rng e1(5, stream::eval), e2(5, stream::eval);
    auto c1 = truncation_sweep(g, latent, m, ref, {2.0, 0.5}, 300, e1);
    auto c2 = truncation_sweep(g, latent, m, ref, {2.0, 0.5}, 300, e2);
    for (size_t i = 0; i < c1.size(); ++i) {
        CHECK(c1[i].fd == c2[i].fd);
        CHECK(c1[i].spread == c2[i].spread);
        CHECK(c1[i].hq_fraction == c2[i].hq_fraction);
    }
}

TEST_CASE("memorization check: untrained D sits near chance; lookup D separates") {
    Rng rng(9, 0);
    DiscriminatorConfig dcfg;
    dcfg.hidden_widths = {16};
    dcfg.embed_dim = 16;
    dcfg.num_classes = 8;
    Discriminator d = Discriminator::init(dcfg, rng);

    GeneratorConfig gcfg;
    gcfg.z_dim = 16;
    gcfg.chunk_size = 8;
    gcfg.hidden_widths = {8};
    gcfg.num_classes = 8;
    gcfg.embed_dim = 4;
    Generator g = Generator::init(gcfg, rng);
    LatentSpec latent;
    latent.dim = 16;
    auto classes = [](size_t n, Rng& r) {
        std::vector<uint32_t> ys(n);
        for (auto& y : ys) y = static_cast<uint32_t>(r.index(8));
        return ys;
    };
    Rng srng(10, stream::standing);
    compute_standing_stats(g, 2, 32, latent, classes, srng);

    MixtureSpec m = ring8();
    Rng dr(11, stream::data);
    const size_t n = 2000;
    auto [train_pts, train_labels] = sample_real(m, std::nullopt, n, dr);
    auto [held_pts, held_labels] = sample_real(m, std::nullopt, n, dr);

    // An untrained D scores whole clusters with one sign, so a single draw is
    // far from binomial; average over an ensemble of fresh discriminators.
    // Per-draw accuracy has std <= ~0.27, so 30 draws put 3 sigma near 0.15.
    Rng er(12, stream::eval);
    double sum_train = 0, sum_held = 0;
    const int ensemble = 30;
    for (int i = 0; i < ensemble; ++i) {
        Rng init(100 + i, 0);
        Discriminator di = Discriminator::init(dcfg, init);
        auto [ta, ha] =
            d_memorization_check(di, train_pts, train_labels, held_pts, held_labels, g, latent, er);
        sum_train += ta;
        sum_held += ha;
    }
    CHECK(std::abs(sum_train / ensemble - 0.5) <= 0.16);
    CHECK(std::abs(sum_held / ensemble - 0.5) <= 0.16);

    // a lookup scorer that memorizes the train points: +1 iff seen in the
    // train set -> train accuracy 1.0, held-out exactly 0.5
    {
        std::set<std::pair<double, double>> bank;
        for (size_t i = 0; i < n; ++i)
            bank.insert({train_pts.values[i * 2], train_pts.values[i * 2 + 1]});
        ScoreFn lookup = [&bank](const Tensor& x, const std::vector<uint32_t>&) {
            std::vector<double> s(x.rows());
            for (size_t i = 0; i < x.rows(); ++i)
                s[i] = bank.count({x.values[i * 2], x.values[i * 2 + 1]}) ? 1.0 : -1.0;
            return s;
        };
        auto [ta, ha] =
            d_memorization_check(lookup, train_pts, train_labels, held_pts, held_labels, g, latent, er);
        CHECK(ta == doctest::Approx(1.0));
        CHECK(ha == doctest::Approx(0.5));
    }

    // overlapping sets are rejected
    CHECK_THROWS_AS(
        d_memorization_check(d, train_pts, train_labels, train_pts, train_labels, g, latent, er),
        ValueError);
}

TEST_CASE("symmetric eigen matches the closed-form 2x2 oracle") {
    Rng rng(10, 0);
    for (int trial = 0; trial < 10; ++trial) {
        const double a = rng.uniform(0.1, 3), b = rng.uniform(-1, 1), c = rng.uniform(0.1, 3);
        auto eig = symmetric_eigen({a, b, b, c}, 2, nullptr);
        std::sort(eig.begin(), eig.end(), std::greater<double>());
        auto [l1, l2] = oracle::eigen2x2(a, b, c);
        CHECK(eig[0] == doctest::Approx(l1).epsilon(1e-12));
        CHECK(eig[1] == doctest::Approx(l2).epsilon(1e-12));
    }
}

TEST_SUITE_END();
