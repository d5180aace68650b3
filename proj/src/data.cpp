#include "gsl/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace gsl {

void DatasetSpec::validate() const {
    if (n_modes < 2) throw ConfigError("data: need at least 2 modes");
    if (!(mode_std > 0)) throw ConfigError("data: mode_std must be positive");
    if (kind == DatasetKind::grid) {
        const auto side = static_cast<size_t>(std::llround(std::sqrt(static_cast<double>(n_modes))));
        if (side * side != n_modes) throw ConfigError("data: grid needs a square mode count");
    }
}

MixtureSpec make_mixture(const DatasetSpec& spec) {
    spec.validate();
    MixtureSpec m;
    m.mode_std = spec.mode_std;
    const size_t k = spec.n_modes;
    m.centers.reserve(k);
    if (spec.kind == DatasetKind::ring) {
        for (size_t i = 0; i < k; ++i) {
            const double a = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(k);
            m.centers.push_back({spec.radius * std::cos(a), spec.radius * std::sin(a)});
        }
    } else {
        const auto side = static_cast<size_t>(std::llround(std::sqrt(static_cast<double>(k))));
        const double off = 0.5 * spec.pitch * static_cast<double>(side - 1);
        for (size_t r = 0; r < side; ++r)
            for (size_t c = 0; c < side; ++c)
                m.centers.push_back({spec.pitch * static_cast<double>(c) - off,
                                     spec.pitch * static_cast<double>(r) - off});
    }
    m.class_of_mode.resize(k);
    if (spec.k_classes == 0) {
        for (size_t i = 0; i < k; ++i) m.class_of_mode[i] = static_cast<uint32_t>(i);
        m.num_classes = k;
    } else {
        for (size_t i = 0; i < k; ++i) m.class_of_mode[i] = static_cast<uint32_t>(i % spec.k_classes);
        m.num_classes = spec.k_classes;
    }
    return m;
}

std::pair<Tensor, std::vector<uint32_t>> sample_real(const MixtureSpec& mixture,
                                                     std::optional<uint32_t> klass, size_t batch,
                                                     Rng& rng) {
    if (batch < 1) throw ValueError("sample_real: batch must be >= 1");
    std::vector<size_t> candidates;
    if (klass) {
        if (*klass >= mixture.num_classes) throw ValueError("sample_real: unknown class " + std::to_string(*klass));
        for (size_t i = 0; i < mixture.centers.size(); ++i)
            if (mixture.class_of_mode[i] == *klass) candidates.push_back(i);
    } else {
        candidates.resize(mixture.centers.size());
        for (size_t i = 0; i < candidates.size(); ++i) candidates[i] = i;
    }
    Tensor points({batch, 2});
    std::vector<uint32_t> labels(batch);
    for (size_t r = 0; r < batch; ++r) {
        const size_t mode = candidates[rng.index(candidates.size())];
        points.values[r * 2 + 0] = mixture.centers[mode][0] + mixture.mode_std * rng.normal();
        points.values[r * 2 + 1] = mixture.centers[mode][1] + mixture.mode_std * rng.normal();
        labels[r] = mixture.class_of_mode[mode];
    }
    return {std::move(points), std::move(labels)};
}

void dump_points_csv(const Tensor& points, const std::vector<uint32_t>& labels,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << "x0,x1,label\n";
    char buf[96];
    for (size_t r = 0; r < points.rows(); ++r) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%u\n", points.values[r * 2],
                      points.values[r * 2 + 1], labels[r]);
        out << buf;
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace gsl
