#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gsl/eval.hpp"
#include "gsl/latent.hpp"
#include "gsl/runner.hpp"
#include "gsl/spectral.hpp"
#include "gsl/training.hpp"

namespace py = pybind11;

namespace {

gsl::Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    gsl::Shape shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(static_cast<size_t>(arr.shape(i)));
    std::vector<double> values(arr.data(), arr.data() + arr.size());
    return gsl::Tensor(std::move(shape), std::move(values));
}

py::array_t<double> array_from_tensor(const gsl::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> out(shape);
    std::copy(t.values.begin(), t.values.end(), out.mutable_data());
    return out;
}

gsl::SpectralState fresh_state(const gsl::Tensor& w, int k) {
    gsl::Rng rng(0x5eed, gsl::stream::spectral);
    return gsl::SpectralState::init(w.rows(), w.cols(), k, rng);
}

}  // namespace

PYBIND11_MODULE(_gslab, m) {
    m.doc() = "Desk-scale GAN stability laboratory: spectral tools, latent samplers, "
              "synthetic-data evaluation and a training driver.";

    m.def("power_iterate", [](py::array_t<double> w_arr, int iters) {
        gsl::Tensor w = tensor_from_array(w_arr);
        gsl::SpectralState s = fresh_state(w, 1);
        return gsl::power_iterate(w, s, iters);
    }, py::arg("w"), py::arg("iters") = 100,
       "Top singular value via power iteration from a fresh state.");

    m.def("top_k_singular", [](py::array_t<double> w_arr, int k, int iters) {
        gsl::Tensor w = tensor_from_array(w_arr);
        gsl::SpectralState s = fresh_state(w, k);
        return gsl::top_k_singular(w, s, k, iters);
    }, py::arg("w"), py::arg("k") = 3, py::arg("iters") = 200,
       "Top-k singular values via subspace iteration with QR re-orthonormalization.");

    m.def("spectral_normalize", [](py::array_t<double> w_arr) {
        gsl::Tensor w = tensor_from_array(w_arr);
        gsl::SpectralState s = fresh_state(w, 1);
        gsl::power_iterate(w, s, 200);
        return array_from_tensor(gsl::spectral_normalize(w, s));
    }, py::arg("w"), "W divided by (sigma0 + 1e-4).");

    m.def("clamp_top_singular", [](py::array_t<double> w_arr, double clamp) {
        gsl::Tensor w = tensor_from_array(w_arr);
        gsl::SpectralState s = fresh_state(w, 1);
        gsl::power_iterate(w, s, 500);
        return array_from_tensor(gsl::clamp_top_singular(w, clamp, s));
    }, py::arg("w"), py::arg("clamp"),
       "Rank-1 correction limiting sigma0 to the clamp value.");

    m.def("ortho_penalty", [](py::array_t<double> w_arr, const std::string& variant, double beta) {
        gsl::OrthoVariant v = variant == "full" ? gsl::OrthoVariant::full : gsl::OrthoVariant::offdiag;
        return gsl::ortho_penalty_value(tensor_from_array(w_arr), v, beta);
    }, py::arg("w"), py::arg("variant") = "offdiag", py::arg("beta") = 1e-4);

    m.def("sample_latent", [](const std::string& kind, size_t dim, size_t batch, uint64_t seed,
                              uint64_t step) {
        gsl::LatentSpec spec;
        spec.kind = gsl::latent_kind_from_string(kind);
        spec.dim = dim;
        if (spec.kind == gsl::LatentKind::variance_annealed)
            spec.anneal.knots = {{0, 2.0}, {1000, 1.0}};
        gsl::Rng rng(seed, gsl::stream::latent);
        return array_from_tensor(gsl::sample_latent(spec, batch, rng, step));
    }, py::arg("kind"), py::arg("dim"), py::arg("batch"), py::arg("seed") = 0, py::arg("step") = 0);

    m.def("sample_truncated", [](size_t dim, double threshold, size_t batch, uint64_t seed) {
        gsl::LatentSpec spec;
        spec.dim = dim;
        gsl::Rng rng(seed, gsl::stream::latent);
        return array_from_tensor(gsl::sample_truncated(spec, threshold, batch, rng));
    }, py::arg("dim"), py::arg("threshold"), py::arg("batch"), py::arg("seed") = 0);

    m.def("anneal_sigma", [](const std::vector<std::pair<uint64_t, double>>& knots, uint64_t step) {
        return gsl::anneal_sigma(gsl::SigmaSchedule{knots}, step);
    }, py::arg("knots"), py::arg("step"));

    m.def("hinge_losses", [](const std::vector<double>& real, const std::vector<double>& fake,
                             double margin) { return gsl::hinge_losses(real, fake, margin); },
          py::arg("real"), py::arg("fake"), py::arg("margin") = 1.0,
          "Returns (loss_d, loss_g).");

    m.def("vanilla_losses", [](const std::vector<double>& real, const std::vector<double>& fake) {
        return gsl::vanilla_losses(real, fake);
    }, py::arg("real"), py::arg("fake"), "Returns (loss_d, loss_g), non-saturating G loss.");

    m.def("frechet_distance", [](py::array_t<double> a, py::array_t<double> b) {
        return gsl::frechet_distance(tensor_from_array(a), tensor_from_array(b));
    }, py::arg("a"), py::arg("b"));

    m.def("make_ring", [](size_t modes, double radius, double mode_std) {
        gsl::DatasetSpec spec;
        spec.kind = gsl::DatasetKind::ring;
        spec.n_modes = modes;
        spec.radius = radius;
        spec.mode_std = mode_std;
        gsl::MixtureSpec m_ = gsl::make_mixture(spec);
        py::array_t<double> centers({m_.centers.size(), size_t(2)});
        for (size_t i = 0; i < m_.centers.size(); ++i) {
            centers.mutable_at(i, 0) = m_.centers[i][0];
            centers.mutable_at(i, 1) = m_.centers[i][1];
        }
        return centers;
    }, py::arg("modes") = 8, py::arg("radius") = 2.0, py::arg("mode_std") = 0.02);

    m.def("sample_real", [](size_t modes, double radius, double mode_std, size_t batch,
                            uint64_t seed) {
        gsl::DatasetSpec spec;
        spec.n_modes = modes;
        spec.radius = radius;
        spec.mode_std = mode_std;
        gsl::Rng rng(seed, gsl::stream::data);
        auto [pts, labels] = gsl::sample_real(gsl::make_mixture(spec), std::nullopt, batch, rng);
        return py::make_tuple(array_from_tensor(pts), labels);
    }, py::arg("modes") = 8, py::arg("radius") = 2.0, py::arg("mode_std") = 0.02,
       py::arg("batch") = 256, py::arg("seed") = 0);

    m.def("mode_coverage", [](py::array_t<double> samples, size_t modes, double radius,
                              double mode_std, double radius_mult) {
        gsl::DatasetSpec spec;
        spec.n_modes = modes;
        spec.radius = radius;
        spec.mode_std = mode_std;
        gsl::Coverage c = gsl::mode_coverage(tensor_from_array(samples), gsl::make_mixture(spec),
                                             radius_mult);
        return py::make_tuple(c.modes_hit, c.high_quality_fraction);
    }, py::arg("samples"), py::arg("modes") = 8, py::arg("radius") = 2.0,
       py::arg("mode_std") = 0.02, py::arg("radius_mult") = 3.0);

    m.def("run_train", [](const std::string& config_text, const std::string& out_dir) {
        gsl::RunConfig cfg = gsl::RunConfig::parse(config_text);
        gsl::RunResult res = gsl::run_training(cfg, out_dir);
        py::dict d;
        d["run_dir"] = res.run_dir;
        d["final_step"] = res.final_step;
        d["collapse_step"] = res.collapse_step ? py::cast(*res.collapse_step) : py::none();
        return d;
    }, py::arg("config_text"), py::arg("out_dir"),
       "Run a full training from a key=value config string.");

    m.def("run_eval", [](const std::string& checkpoint, const std::vector<double>& thresholds,
                         size_t n, const std::string& out_dir, uint64_t seed) {
        gsl::EvalOutputs ev = gsl::run_eval(checkpoint, thresholds, n, out_dir, seed);
        py::dict d;
        d["fd_untruncated"] = ev.fd_untruncated;
        d["modes_hit"] = ev.coverage.modes_hit;
        d["hq_fraction"] = ev.coverage.high_quality_fraction;
        d["train_acc"] = ev.train_acc;
        d["heldout_acc"] = ev.heldout_acc;
        py::list curve;
        for (const auto& p : ev.curve) {
            py::dict row;
            row["threshold"] = p.threshold;
            row["fd"] = p.fd;
            row["spread"] = p.spread;
            row["hq_fraction"] = p.hq_fraction;
            curve.append(row);
        }
        d["curve"] = curve;
        return d;
    }, py::arg("checkpoint"), py::arg("thresholds") = std::vector<double>{2, 1, 0.5, 0.04},
       py::arg("n") = 10000, py::arg("out_dir") = std::string("eval_out"), py::arg("seed") = 0);

    py::register_exception<gsl::ConfigError>(m, "GslConfigError");
    py::register_exception<gsl::ShapeError>(m, "GslShapeError");
}
