#include "gsl/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gsl {

void TrainConfig::validate() const {
    if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("train: learning rates must be positive");
    if (d_steps_per_g < 1) throw ConfigError("train: d_steps_per_g must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (ema_decay < 0 || ema_decay >= 1) throw ConfigError("train: ema_decay must be in [0,1)");
    if (!(hinge_margin > 0)) throw ConfigError("train: hinge margin must be positive");
    if (r1_gamma < 0) throw ConfigError("train: r1_gamma must be >= 0");
    if (ortho_beta < 0) throw ConfigError("train: ortho_beta must be >= 0");
    if (sigma_reg_strength < 0) throw ConfigError("train: sigma_reg_strength must be >= 0");
    if (sigma_clamp < 0) throw ConfigError("train: sigma_clamp must be >= 0");
    if (total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
}

// ---- losses ----------------------------------------------------------------

LossParts hinge_losses(Tape& t, Var real_scores, Var fake_scores, double margin) {
    if (!(margin > 0)) throw ValueError("hinge loss: margin must be positive");
    LossParts parts;
    parts.d_real = t.mean(t.relu(t.add_scalar(t.neg(real_scores), margin)));
    parts.d_fake = t.mean(t.relu(t.add_scalar(fake_scores, margin)));
    parts.g = t.neg(t.mean(fake_scores));
    return parts;
}

LossParts vanilla_losses(Tape& t, Var real_logits, Var fake_logits) {
    LossParts parts;
    parts.d_real = t.mean(t.softplus(t.neg(real_logits)));
    parts.d_fake = t.mean(t.softplus(fake_logits));
    parts.g = t.mean(t.softplus(t.neg(fake_logits)));
    return parts;
}

namespace {

std::pair<double, double> loss_values(const std::vector<double>& real,
                                      const std::vector<double>& fake, LossKind kind,
                                      double margin) {
    Tape t;
    Var r = t.constant(Tensor({real.size()}, std::vector<double>(real)));
    Var f = t.constant(Tensor({fake.size()}, std::vector<double>(fake)));
    LossParts p = (kind == LossKind::hinge) ? hinge_losses(t, r, f, margin) : vanilla_losses(t, r, f);
    return {t.value(p.d_real).values[0] + t.value(p.d_fake).values[0], t.value(p.g).values[0]};
}

}  // namespace

std::pair<double, double> hinge_losses(const std::vector<double>& real,
                                       const std::vector<double>& fake, double margin) {
    return loss_values(real, fake, LossKind::hinge, margin);
}

std::pair<double, double> vanilla_losses(const std::vector<double>& real,
                                         const std::vector<double>& fake) {
    return loss_values(real, fake, LossKind::vanilla, 1.0);
}

Var r1_penalty(Tape& t, Var scores, Var x, double gamma) {
    if (!(gamma > 0)) throw ValueError("r1: gamma must be positive");
    const size_t batch = t.value(x).rows();
    Var total = t.sum(scores);  // scores are per-example, so d(total)/dx stacks per-example grads
    std::vector<Var> gx = t.gradients(total, {x});
    if (!gx[0].valid()) return t.constant_scalar(0.0);
    Var per_example = t.sum(t.square(gx[0]), 1);
    (void)batch;
    return t.scale(t.mean(per_example), gamma / 2.0);
}

double r1_penalty(Discriminator& d, const Tensor& real_batch, const std::vector<uint32_t>& ys,
                  double gamma) {
    Tape t;
    Tensor x = real_batch;
    Rng dummy(0, stream::dropout);
    Var xv = t.leaf(x, true);
    Var scores = d.forward(t, xv, ys, RunMode::eval, dummy, false, true);
    Var pen = r1_penalty(t, scores, xv, gamma);
    const double value = t.value(pen).values[0];
    t.backward(pen);
    return value;
}

// ---- optimizers ------------------------------------------------------------

bool adam_step(Tensor& p, AdamState& state, const AdamHyper& hp) {
    if (p.grad.size() != p.values.size()) throw ShapeError("adam: missing gradient");
    if (state.m.values.size() != p.values.size()) {
        state.m = Tensor::zeros(p.shape);
        state.v = Tensor::zeros(p.shape);
    }
    for (double g : p.grad)
        if (!std::isfinite(g)) return false;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < p.values.size(); ++i) {
        const double g = p.grad[i];
        state.m.values[i] = hp.beta1 * state.m.values[i] + (1 - hp.beta1) * g;
        state.v.values[i] = hp.beta2 * state.v.values[i] + (1 - hp.beta2) * g * g;
        const double mhat = state.m.values[i] / bc1;
        const double vhat = state.v.values[i] / bc2;
        p.values[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
    return true;
}

void ema_init(EmaState& ema, const std::vector<std::pair<std::string, Tensor*>>& params,
              double decay) {
    ema.decay = decay;
    ema.steps = 0;
    ema.shadow.clear();
    for (auto& [name, p] : params) {
        (void)name;
        ema.shadow.push_back(Tensor::zeros(p->shape));
    }
}

void ema_update(EmaState& ema, const std::vector<std::pair<std::string, Tensor*>>& params) {
    if (ema.shadow.size() != params.size()) throw ShapeError("ema: parameter list mismatch");
    const double d = ema.decay;
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& s = ema.shadow[i];
        const Tensor& p = *params[i].second;
        if (!s.same_shape(p)) throw ShapeError("ema: shape mismatch for " + params[i].first);
        for (size_t j = 0; j < s.values.size(); ++j)
            s.values[j] = d * s.values[j] + (1 - d) * p.values[j];
    }
    ema.steps += 1;
}

std::vector<Tensor> ema_params(const EmaState& ema,
                               const std::vector<std::pair<std::string, Tensor*>>& fallback) {
    std::vector<Tensor> out;
    if (ema.steps == 0) {
        for (auto& [name, p] : fallback) {
            (void)name;
            out.push_back(*p);
        }
        return out;
    }
    const double correction = 1.0 - std::pow(ema.decay, static_cast<double>(ema.steps));
    for (const Tensor& s : ema.shadow) {
        Tensor t = s;
        for (double& v : t.values) v /= correction;
        out.push_back(std::move(t));
    }
    return out;
}

// ---- run state -------------------------------------------------------------

namespace {

bool is_embedding(const std::string& name) {
    return name.find(".embed") != std::string::npos || name == "g.embed";
}

int snap_k(const Tensor& w) {
    return static_cast<int>(std::min<size_t>(3, std::min(w.rows(), w.cols())));
}

}  // namespace

TrainState TrainState::init(TrainSetup setup) {
    setup.train.validate();
    TrainState st;
    st.setup = std::move(setup);
    st.mixture = make_mixture(st.setup.data);
    Rng init_rng(st.setup.train.seed, stream::init);
    st.g = Generator::init(st.setup.gen, init_rng);
    st.d = Discriminator::init(st.setup.disc, init_rng);
    for (auto& [name, p] : st.g.named_params()) st.adam_g[name] = AdamState{Tensor::zeros(p->shape), Tensor::zeros(p->shape), 0};
    for (auto& [name, p] : st.d.named_params()) st.adam_d[name] = AdamState{Tensor::zeros(p->shape), Tensor::zeros(p->shape), 0};
    ema_init(st.ema, st.g.named_params(), st.setup.train.ema_decay);
    for (auto& [name, w] : st.g.weight_matrices())
        st.telem_states.emplace(name, SpectralState::init(w->rows(), w->cols(), snap_k(*w), init_rng));
    for (auto& [name, w] : st.d.weight_matrices())
        st.telem_states.emplace(name, SpectralState::init(w->rows(), w->cols(), snap_k(*w), init_rng));
    if (st.setup.train.sigma_reg_strength > 0 || st.setup.train.sigma_clamp > 0) {
        for (auto& [name, w] : st.g.weight_matrices()) {
            if (is_embedding(name)) continue;
            const int k = static_cast<int>(std::min<size_t>(2, std::min(w->rows(), w->cols())));
            st.sigma_states.emplace(name, SpectralState::init(w->rows(), w->cols(), k, init_rng));
        }
    }
    const uint64_t seed = st.setup.train.seed;
    st.rng_data = Rng(seed, stream::data);
    st.rng_latent = Rng(seed, stream::latent);
    st.rng_classes = Rng(seed, stream::classes);
    st.rng_dropout = Rng(seed, stream::dropout);
    return st;
}

namespace {

std::vector<uint32_t> sample_classes(size_t batch, size_t num_classes, Rng& rng) {
    std::vector<uint32_t> ys(batch);
    for (auto& y : ys) y = static_cast<uint32_t>(rng.index(num_classes));
    return ys;
}

bool grads_finite(const std::vector<std::pair<std::string, Tensor*>>& params) {
    for (auto& [name, p] : params) {
        (void)name;
        for (double g : p->grad)
            if (!std::isfinite(g)) return false;
    }
    return true;
}

void collect_grad_norms(const std::vector<std::pair<std::string, Tensor*>>& params,
                        std::vector<double>& norms) {
    for (auto& [name, p] : params) {
        (void)name;
        double s = 0;
        for (double g : p->grad) s += g * g;
        norms.push_back(std::sqrt(s));
    }
}

void zero_grads(const std::vector<std::pair<std::string, Tensor*>>& params) {
    for (auto& [name, p] : params) {
        (void)name;
        p->ensure_grad();
        p->zero_grad();
    }
}

}  // namespace

StepReport train_step(TrainState& st, TelemetryLog* log) {
    const TrainConfig& tc = st.setup.train;
    StepReport report;
    report.step = st.step;
    const size_t batch = tc.batch;
    const bool g_frozen = st.freeze == FreezeTarget::g;
    const bool d_frozen = st.freeze == FreezeTarget::d;

    auto g_params = st.g.named_params();
    auto d_params = st.d.named_params();
    std::vector<double> grad_norms;

    double dlr_acc = 0, dlf_acc = 0;
    size_t d_updates = 0;

    if (!d_frozen) {
        const AdamHyper hp_d{tc.lr_d, tc.beta1, tc.beta2, tc.adam_eps};
        for (size_t k = 0; k < tc.d_steps_per_g; ++k) {
            auto [x_real, y_real] = sample_real(st.mixture, std::nullopt, batch, st.rng_data);
            Tensor z = sample_latent(st.setup.latent, batch, st.rng_latent, st.step);
            std::vector<uint32_t> y_fake = sample_classes(batch, st.setup.gen.num_classes, st.rng_classes);

            Tape t;
            Var fake = st.g.forward(t, t.constant(std::move(z)), y_fake, RunMode::train,
                                    /*update_stats=*/!g_frozen, nullptr, /*params_require_grad=*/false);
            const bool use_r1 = tc.r1_gamma > 0;
            Var xr = use_r1 ? t.leaf(x_real, true) : t.constant(std::move(x_real));
            Var s_real = st.d.forward(t, xr, y_real, RunMode::train, st.rng_dropout, true, true);
            Var s_fake = st.d.forward(t, fake, y_fake, RunMode::train, st.rng_dropout, true, true);
            LossParts parts = (tc.loss_kind == LossKind::hinge)
                                  ? hinge_losses(t, s_real, s_fake, tc.hinge_margin)
                                  : vanilla_losses(t, s_real, s_fake);
            Var total = t.add(parts.d_real, parts.d_fake);
            if (use_r1) total = t.add(total, r1_penalty(t, s_real, xr, tc.r1_gamma));

            const double dlr = t.value(parts.d_real).values[0];
            const double dlf = t.value(parts.d_fake).values[0];
            const double total_v = t.value(total).values[0];
            if (!std::isfinite(total_v)) {
                report.skipped = true;
                continue;
            }
            dlr_acc += dlr;
            dlf_acc += dlf;
            ++d_updates;

            zero_grads(d_params);
            t.backward(total);
            if (!grads_finite(d_params)) {
                report.skipped = true;
                zero_grads(d_params);
                continue;
            }
            const bool last = (k + 1 == tc.d_steps_per_g);
            if (last) collect_grad_norms(d_params, grad_norms);
            for (auto& [name, p] : d_params)
                if (!adam_step(*p, st.adam_d[name], hp_d)) report.skipped = true;
            zero_grads(d_params);
        }
        if (d_updates > 0) {
            report.d_loss_real = dlr_acc / static_cast<double>(d_updates);
            report.d_loss_fake = dlf_acc / static_cast<double>(d_updates);
        }
    } else {
        // D frozen: evaluate its loss components for the telemetry stream
        // without updating anything.
        auto [x_real, y_real] = sample_real(st.mixture, std::nullopt, batch, st.rng_data);
        Tensor z = sample_latent(st.setup.latent, batch, st.rng_latent, st.step);
        std::vector<uint32_t> y_fake = sample_classes(batch, st.setup.gen.num_classes, st.rng_classes);
        Tape t;
        Var fake = st.g.forward(t, t.constant(std::move(z)), y_fake, RunMode::train, false, nullptr, false);
        Var s_real = st.d.forward(t, t.constant(std::move(x_real)), y_real, RunMode::eval, st.rng_dropout, false, false);
        Var s_fake = st.d.forward(t, fake, y_fake, RunMode::eval, st.rng_dropout, false, false);
        LossParts parts = (tc.loss_kind == LossKind::hinge)
                              ? hinge_losses(t, s_real, s_fake, tc.hinge_margin)
                              : vanilla_losses(t, s_real, s_fake);
        report.d_loss_real = t.value(parts.d_real).values[0];
        report.d_loss_fake = t.value(parts.d_fake).values[0];
    }

    if (!g_frozen) {
        const AdamHyper hp_g{tc.lr_g, tc.beta1, tc.beta2, tc.adam_eps};
        Tensor z = sample_latent(st.setup.latent, batch, st.rng_latent, st.step);
        std::vector<uint32_t> y_fake = sample_classes(batch, st.setup.gen.num_classes, st.rng_classes);

        // Sigma regularization wants converged top-2 estimates on the
        // pre-update weights.
        if (tc.sigma_reg_strength > 0) {
            for (auto& [name, state] : st.sigma_states) {
                Tensor* w = nullptr;
                for (auto& [n, p] : st.g.weight_matrices())
                    if (n == name) w = p;
                if (w) top_k_singular(*w, state, state.k, 100, 1e-10);
            }
        }

        Tape t;
        Var fake = st.g.forward(t, t.constant(std::move(z)), y_fake, RunMode::train, true, nullptr, true);
        Var s_fake = st.d.forward(t, fake, y_fake, RunMode::train, st.rng_dropout, true,
                                  /*params_require_grad=*/false);
        Var g_loss = (tc.loss_kind == LossKind::hinge) ? t.neg(t.mean(s_fake))
                                                       : t.mean(t.softplus(t.neg(s_fake)));
        Var total = g_loss;
        if (tc.ortho_beta > 0) {
            for (auto& [name, w] : st.g.weight_matrices()) {
                if (is_embedding(name)) continue;
                total = t.add(total, ortho_penalty(t, t.leaf(*w), tc.ortho_variant, tc.ortho_beta));
            }
        }
        if (tc.sigma_reg_strength > 0) {
            for (auto& [name, w] : st.g.weight_matrices()) {
                auto it = st.sigma_states.find(name);
                if (it == st.sigma_states.end()) continue;
                if (tc.sigma_reg_mode == SigmaRegMode::ratio && it->second.k < 2) continue;
                Var loss = sigma_regularization_loss(t, t.leaf(*w), tc.sigma_reg_mode,
                                                     tc.sigma_reg_target, it->second);
                total = t.add(total, t.scale(loss, tc.sigma_reg_strength));
            }
        }

        report.g_loss = t.value(g_loss).values[0];
        if (!std::isfinite(t.value(total).values[0])) {
            report.skipped = true;
        } else {
            zero_grads(g_params);
            t.backward(total);
            if (!grads_finite(g_params)) {
                report.skipped = true;
                zero_grads(g_params);
            } else {
                collect_grad_norms(g_params, grad_norms);
                for (auto& [name, p] : g_params)
                    if (!adam_step(*p, st.adam_g[name], hp_g)) report.skipped = true;
                zero_grads(g_params);
                if (tc.sigma_clamp > 0) {
                    for (auto& [name, w] : st.g.weight_matrices()) {
                        auto it = st.sigma_states.find(name);
                        if (it == st.sigma_states.end()) continue;
                        top_k_singular(*w, it->second, it->second.k, 500, 1e-13);
                        if (it->second.sigma[0] > tc.sigma_clamp)
                            *w = clamp_top_singular(*w, tc.sigma_clamp, it->second);
                    }
                }
                ema_update(st.ema, g_params);
            }
        }
    } else {
        // G frozen: fresh latent draws still advance the stream so that
        // unfreezing later continues the same sequence shape.
        report.g_loss = 0.0;
    }

    if (grad_norms.size() >= 2) {
        double mean = 0;
        for (double n : grad_norms) mean += n;
        mean /= static_cast<double>(grad_norms.size());
        double var = 0;
        for (double n : grad_norms) var += (n - mean) * (n - mean);
        report.grad_norm_variance = var / static_cast<double>(grad_norms.size());
    }

    std::vector<SpectralSnapshot> snaps = spectral_snapshots(st);
    if (log) log->record(st.step, std::move(snaps), report);

    st.step += 1;
    return report;
}

std::vector<SpectralSnapshot> spectral_snapshots(TrainState& st) {
    std::vector<SpectralSnapshot> out;
    auto snap_all = [&](std::vector<std::pair<std::string, Tensor*>> mats) {
        for (auto& [name, w] : mats) {
            SpectralState& state = st.telem_states.at(name);
            std::vector<double> sig = top_k_singular(*w, state, state.k, 5, 1e-9);
            SpectralSnapshot s;
            s.step = st.step;
            s.layer = name;
            s.sigma0 = sig.size() > 0 ? sig[0] : 0.0;
            s.sigma1 = sig.size() > 1 ? sig[1] : 0.0;
            s.sigma2 = sig.size() > 2 ? sig[2] : 0.0;
            s.ratio01 = s.sigma1 > 0 ? s.sigma0 / s.sigma1 : 0.0;
            s.fro_norm = w->frobenius_norm();
            out.push_back(std::move(s));
        }
    };
    snap_all(st.g.weight_matrices());
    snap_all(st.d.weight_matrices());
    return out;
}

void apply_intervention(TrainState& st, const InterventionSpec& spec) {
    if (!(spec.scale_lr_g > 0) || !(spec.scale_lr_d > 0))
        throw ConfigError("intervention: learning-rate scales must be positive");
    st.setup.train.lr_g *= spec.scale_lr_g;
    st.setup.train.lr_d *= spec.scale_lr_d;
    if (spec.set_d_steps) {
        if (*spec.set_d_steps < 1) throw ConfigError("intervention: d_steps must be >= 1");
        st.setup.train.d_steps_per_g = *spec.set_d_steps;
    }
    if (spec.set_hinge_margin) {
        if (!(*spec.set_hinge_margin > 0)) throw ConfigError("intervention: margin must be positive");
        st.setup.train.hinge_margin = *spec.set_hinge_margin;
    }
    if (spec.reset_momentum) {
        for (auto& [name, a] : st.adam_g) {
            (void)name;
            std::fill(a.m.values.begin(), a.m.values.end(), 0.0);
            std::fill(a.v.values.begin(), a.v.values.end(), 0.0);
        }
        for (auto& [name, a] : st.adam_d) {
            (void)name;
            std::fill(a.m.values.begin(), a.m.values.end(), 0.0);
            std::fill(a.v.values.begin(), a.v.values.end(), 0.0);
        }
    }
    st.freeze = spec.freeze;
}

// ---- checkpointing ---------------------------------------------------------

uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

uint32_t crc32_ieee(const uint8_t* data, size_t len, uint32_t seed = 0) {
    // magic-static init: sweep cells may checkpoint concurrently
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = ~seed;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

constexpr char kMagic[4] = {'G', 'S', 'L', '1'};
constexpr uint16_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& buf, uint64_t v) { buf.append(reinterpret_cast<const char*>(&v), 8); }

struct Writer {
    std::ofstream out;
    explicit Writer(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw IoError("checkpoint: cannot open " + path);
        out.write(kMagic, 4);
        uint16_t v = kVersion;
        out.write(reinterpret_cast<const char*>(&v), 2);
    }
    void record(const std::string& name, uint8_t dtype, const std::vector<uint64_t>& dims,
                const void* payload, size_t payload_bytes) {
        std::string body;
        put_u32(body, static_cast<uint32_t>(name.size()));
        body.append(name);
        body.push_back(static_cast<char>(dtype));
        body.push_back(static_cast<char>(dims.size()));
        for (uint64_t d : dims) put_u64(body, d);
        body.append(reinterpret_cast<const char*>(payload), payload_bytes);
        const uint32_t crc = crc32_ieee(reinterpret_cast<const uint8_t*>(body.data()), body.size());
        put_u32(body, crc);
        std::string rec;
        put_u64(rec, body.size());
        out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        if (!out) throw IoError("checkpoint: write failure");
    }
    void tensor(const std::string& name, const Tensor& t) {
        std::vector<uint64_t> dims(t.shape.begin(), t.shape.end());
        record(name, 0, dims, t.values.data(), t.values.size() * sizeof(double));
    }
    void f64vec(const std::string& name, const std::vector<double>& v) {
        record(name, 0, {v.size()}, v.data(), v.size() * sizeof(double));
    }
    void u64(const std::string& name, uint64_t v) { record(name, 1, {1}, &v, 8); }
    void bytes(const std::string& name, const std::string& s) {
        record(name, 2, {s.size()}, s.data(), s.size());
    }
};

void write_spectral(Writer& w, const std::string& prefix, const SpectralState& s) {
    for (int i = 0; i < s.k; ++i) {
        w.f64vec(prefix + ".u" + std::to_string(i), s.u[i]);
        w.f64vec(prefix + ".v" + std::to_string(i), s.v[i]);
    }
    w.f64vec(prefix + ".sigma", s.sigma);
}

void read_spectral(const CheckpointRecords& rec, const std::string& prefix, SpectralState& s) {
    for (int i = 0; i < s.k; ++i) {
        s.u[i] = rec.at(prefix + ".u" + std::to_string(i)).f64;
        s.v[i] = rec.at(prefix + ".v" + std::to_string(i)).f64;
    }
    s.sigma = rec.at(prefix + ".sigma").f64;
}

}  // namespace

void save_checkpoint(const TrainState& st, const std::string& path) {
    Writer w(path);
    w.bytes("config", st.setup.config_text);
    w.u64("meta.config_hash", fnv1a64(st.setup.config_text));
    w.u64("meta.step", st.step);
    w.u64("meta.freeze", static_cast<uint64_t>(st.freeze));
    w.u64("meta.seed", st.setup.train.seed);
    w.u64("meta.ema_steps", st.ema.steps);
    w.u64("meta.bn_has_running",
          (!st.g.layers.empty() && st.g.layers.front().cbn.has_running) ? 1 : 0);
    w.u64("rng.data", st.rng_data.counter());
    w.u64("rng.latent", st.rng_latent.counter());
    w.u64("rng.classes", st.rng_classes.counter());
    w.u64("rng.dropout", st.rng_dropout.counter());

    TrainState& mt = const_cast<TrainState&>(st);  // named_params is non-const by signature only
    for (auto& [name, p] : mt.g.named_params()) w.tensor("param." + name, *p);
    for (auto& [name, p] : mt.d.named_params()) w.tensor("param." + name, *p);
    for (auto& [name, p] : mt.g.named_stats())
        if (!p->values.empty()) w.tensor("stat." + name, *p);
    for (auto& [name, a] : st.adam_g) {
        w.tensor("adam_g." + name + ".m", a.m);
        w.tensor("adam_g." + name + ".v", a.v);
        w.u64("adam_g." + name + ".t", a.t);
    }
    for (auto& [name, a] : st.adam_d) {
        w.tensor("adam_d." + name + ".m", a.m);
        w.tensor("adam_d." + name + ".v", a.v);
        w.u64("adam_d." + name + ".t", a.t);
    }
    {
        auto params = mt.g.named_params();
        for (size_t i = 0; i < params.size(); ++i) w.tensor("ema." + params[i].first, st.ema.shadow[i]);
    }
    for (auto& [name, s] : mt.d.sn_states()) write_spectral(w, "sn." + name, *s);
    for (auto& [name, s] : st.telem_states) write_spectral(w, "telem." + name, s);
    for (auto& [name, s] : st.sigma_states) write_spectral(w, "sigreg." + name, s);
}

CheckpointRecords read_checkpoint_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    uint16_t version = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 2);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    if (version != kVersion)
        throw IoError("checkpoint: unsupported format version " + std::to_string(version));

    CheckpointRecords out;
    while (true) {
        uint64_t len = 0;
        in.read(reinterpret_cast<char*>(&len), 8);
        if (in.eof()) break;
        if (!in) throw IoError("checkpoint: truncated record header");
        if (len < 4 + 1 + 1 + 4 || len > (1ULL << 32))
            throw IoError("checkpoint: implausible record length");
        std::string body(len, '\0');
        in.read(body.data(), static_cast<std::streamsize>(len));
        if (!in) throw IoError("checkpoint: truncated record body (checksum unverifiable)");
        const uint32_t stored = *reinterpret_cast<const uint32_t*>(body.data() + len - 4);
        const uint32_t actual = crc32_ieee(reinterpret_cast<const uint8_t*>(body.data()), len - 4);
        if (stored != actual) throw IoError("checkpoint: checksum mismatch (corrupt or truncated file)");

        size_t off = 0;
        auto need = [&](size_t n) {
            if (off + n > len - 4) throw IoError("checkpoint: malformed record");
        };
        need(4);
        uint32_t name_len = *reinterpret_cast<const uint32_t*>(body.data() + off);
        off += 4;
        need(name_len);
        std::string name = body.substr(off, name_len);
        off += name_len;
        need(2);
        CheckpointRecord rec;
        rec.dtype = static_cast<uint8_t>(body[off++]);
        uint8_t rank = static_cast<uint8_t>(body[off++]);
        need(8ULL * rank);
        for (int i = 0; i < rank; ++i) {
            rec.dims.push_back(*reinterpret_cast<const uint64_t*>(body.data() + off));
            off += 8;
        }
        uint64_t count = 1;
        for (uint64_t d : rec.dims) count *= d;
        const size_t payload = len - 4 - off;
        if (rec.dtype == 0) {
            if (payload != count * 8) throw IoError("checkpoint: payload size mismatch for " + name);
            rec.f64.resize(count);
            std::memcpy(rec.f64.data(), body.data() + off, payload);
        } else if (rec.dtype == 1) {
            if (payload != count * 8) throw IoError("checkpoint: payload size mismatch for " + name);
            rec.u64.resize(count);
            std::memcpy(rec.u64.data(), body.data() + off, payload);
        } else if (rec.dtype == 2) {
            rec.bytes = body.substr(off, payload);
        } else {
            throw IoError("checkpoint: unknown dtype tag for " + name);
        }
        out[name] = std::move(rec);
    }
    return out;
}

namespace {

const CheckpointRecord& want(const CheckpointRecords& rec, const std::string& name) {
    auto it = rec.find(name);
    if (it == rec.end()) throw IoError("checkpoint: missing record " + name);
    return it->second;
}

void fill_tensor(const CheckpointRecords& rec, const std::string& name, Tensor& t) {
    const CheckpointRecord& r = want(rec, name);
    if (r.f64.size() != t.values.size())
        throw IoError("checkpoint: size mismatch for " + name);
    t.values = r.f64;
}

}  // namespace

TrainState load_checkpoint_with(const CheckpointRecords& records,
                                TrainSetup (*parse_setup)(const std::string&)) {
    const std::string& text = want(records, "config").bytes;
    if (want(records, "meta.config_hash").u64.at(0) != fnv1a64(text))
        throw IoError("checkpoint: config hash mismatch");
    TrainState st = TrainState::init(parse_setup(text));

    for (auto& [name, p] : st.g.named_params()) fill_tensor(records, "param." + name, *p);
    for (auto& [name, p] : st.d.named_params()) fill_tensor(records, "param." + name, *p);
    for (auto& [name, p] : st.g.named_stats()) {
        auto it = records.find("stat." + name);
        if (it == records.end()) continue;
        if (p->values.empty()) {
            // standing buffers start empty; adopt the stored shape
            p->shape = {it->second.f64.size()};
            p->values = it->second.f64;
        } else {
            fill_tensor(records, "stat." + name, *p);
        }
    }
    const bool has_running = want(records, "meta.bn_has_running").u64.at(0) != 0;
    for (auto& l : st.g.layers) l.cbn.has_running = has_running;
    for (auto& [name, a] : st.adam_g) {
        fill_tensor(records, "adam_g." + name + ".m", a.m);
        fill_tensor(records, "adam_g." + name + ".v", a.v);
        a.t = want(records, "adam_g." + name + ".t").u64.at(0);
    }
    for (auto& [name, a] : st.adam_d) {
        fill_tensor(records, "adam_d." + name + ".m", a.m);
        fill_tensor(records, "adam_d." + name + ".v", a.v);
        a.t = want(records, "adam_d." + name + ".t").u64.at(0);
    }
    {
        auto params = st.g.named_params();
        for (size_t i = 0; i < params.size(); ++i)
            st.ema.shadow[i].values = want(records, "ema." + params[i].first).f64;
    }
    for (auto& [name, s] : st.d.sn_states()) read_spectral(records, "sn." + name, *s);
    for (auto& [name, s] : st.telem_states) read_spectral(records, "telem." + name, s);
    for (auto& [name, s] : st.sigma_states) read_spectral(records, "sigreg." + name, s);

    st.ema.steps = want(records, "meta.ema_steps").u64.at(0);
    st.step = want(records, "meta.step").u64.at(0);
    st.freeze = static_cast<FreezeTarget>(want(records, "meta.freeze").u64.at(0));
    st.rng_data.set_counter(want(records, "rng.data").u64.at(0));
    st.rng_latent.set_counter(want(records, "rng.latent").u64.at(0));
    st.rng_classes.set_counter(want(records, "rng.classes").u64.at(0));
    st.rng_dropout.set_counter(want(records, "rng.dropout").u64.at(0));
    return st;
}

}  // namespace gsl
