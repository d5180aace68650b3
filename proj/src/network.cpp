#include "gsl/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gsl {

namespace {

int sn_k(size_t rows, size_t cols) { return std::min<size_t>(2, std::min(rows, cols)) == 2 ? 2 : 1; }

// Orthogonal initialization: Gaussian fill, then Gram-Schmidt over the
// shorter side so sigma0 starts at 1.
Tensor orthogonal_init(size_t rows, size_t cols, Rng& rng) {
    Tensor w({rows, cols});
    for (double& x : w.values) x = rng.normal();
    const bool by_rows = rows <= cols;
    const size_t nvec = by_rows ? rows : cols;
    const size_t len = by_rows ? cols : rows;
    auto get = [&](size_t v, size_t i) -> double& {
        return by_rows ? w.values[v * cols + i] : w.values[i * cols + v];
    };
    for (size_t a = 0; a < nvec; ++a) {
        for (size_t b = 0; b < a; ++b) {
            double d = 0;
            for (size_t i = 0; i < len; ++i) d += get(a, i) * get(b, i);
            for (size_t i = 0; i < len; ++i) get(a, i) -= d * get(b, i);
        }
        double n = 0;
        for (size_t i = 0; i < len; ++i) n += get(a, i) * get(a, i);
        n = std::sqrt(n);
        if (n < 1e-12) n = 1.0;
        for (size_t i = 0; i < len; ++i) get(a, i) /= n;
    }
    return w;
}

}  // namespace

void GeneratorConfig::validate() const {
    if (z_dim < 1 || out_dim < 1 || num_classes < 1) throw ConfigError("generator: dims must be >= 1");
    if (embed_dim < 1) throw ConfigError("generator: embed_dim must be >= 1");
    if (hidden_widths.empty()) throw ConfigError("generator: need at least one hidden layer");
    for (size_t w : hidden_widths)
        if (w < 1) throw ConfigError("generator: hidden widths must be >= 1");
    if (use_skip_z) {
        const size_t chunks = hidden_widths.size() + 1;
        if (chunk_size < 1 || z_dim != chunk_size * chunks)
            throw ConfigError("generator: skip-z needs z_dim = chunk_size * (hidden layers + 1); got z_dim=" +
                              std::to_string(z_dim) + ", chunk_size=" + std::to_string(chunk_size) + ", layers=" +
                              std::to_string(hidden_widths.size()));
    }
    if (!(bn_momentum > 0) || bn_momentum > 1) throw ConfigError("generator: bn_momentum must be in (0,1]");
}

void DiscriminatorConfig::validate() const {
    if (hidden_widths.empty()) throw ConfigError("discriminator: need at least one hidden layer");
    if (in_dim < 1 || num_classes < 1) throw ConfigError("discriminator: dims must be >= 1");
    if (embed_dim != hidden_widths.back())
        throw ConfigError("discriminator: embed_dim must equal the final hidden width (projection head)");
    if (!(dropout_keep_prob > 0) || dropout_keep_prob > 1)
        throw ConfigError("discriminator: dropout_keep_prob must be in (0,1]");
}

Var embed_class(Tape& t, Var table, const std::vector<uint32_t>& ys) {
    const Tensor& tab = t.value(table);
    for (uint32_t y : ys)
        if (y >= tab.rows()) throw ValueError("embed_class: class " + std::to_string(y) + " out of range");
    return t.gather_rows(table, ys);
}

std::vector<Var> split_z(Tape& t, Var z, size_t chunk_size) {
    const Tensor& tz = t.value(z);
    if (!tz.is_matrix()) throw ShapeError("split_z: z must be batch x z_dim");
    if (chunk_size == 0 || tz.cols() % chunk_size != 0)
        throw ShapeError("split_z: z_dim " + std::to_string(tz.cols()) + " not divisible by chunk " +
                         std::to_string(chunk_size));
    std::vector<Var> chunks;
    for (size_t lo = 0; lo < tz.cols(); lo += chunk_size)
        chunks.push_back(t.slice_cols(z, lo, lo + chunk_size));
    return chunks;
}

Var cbn_forward(Tape& t, Var h, Var cond, ConditionalBatchNorm& layer, RunMode mode,
                bool update_stats, Tensor* accum_mean, Tensor* accum_sq,
                bool params_require_grad) {
    const Tensor& th = t.value(h);
    const Tensor& tc = t.value(cond);
    const size_t width = layer.gain_proj.cols();
    if (!th.is_matrix() || th.cols() != width)
        throw ShapeError("cbn: feature width " + shape_str(th.shape) + " vs layer width " + std::to_string(width));
    if (!tc.is_matrix() || tc.cols() != layer.gain_proj.rows())
        throw ShapeError("cbn: cond width " + shape_str(tc.shape) + " vs projection rows " +
                         std::to_string(layer.gain_proj.rows()));

    Var gain = t.add_scalar(t.matmul(cond, t.leaf(layer.gain_proj, params_require_grad)), 1.0);
    Var bias = t.matmul(cond, t.leaf(layer.bias_proj, params_require_grad));

    const size_t batch = th.rows();
    Var xhat;
    if (mode == RunMode::train) {
        Var mu = t.mean(h, 0);
        Var xc = t.sub(h, t.broadcast_row(mu, batch));
        Var var = t.mean(t.square(xc), 0);
        Var inv = t.rsqrt(var, layer.eps);
        xhat = t.mul(xc, t.broadcast_row(inv, batch));

        const Tensor& muv = t.value(mu);
        const Tensor& varv = t.value(var);
        if (update_stats) {
            const double m = layer.momentum;
            for (size_t j = 0; j < width; ++j) {
                layer.running_mean.values[j] = (1 - m) * layer.running_mean.values[j] + m * muv.values[j];
                layer.running_var.values[j] = (1 - m) * layer.running_var.values[j] + m * varv.values[j];
            }
            layer.has_running = true;
        }
        if (accum_mean) {
            for (size_t j = 0; j < width; ++j) {
                accum_mean->values[j] += muv.values[j];
                accum_sq->values[j] += varv.values[j] + muv.values[j] * muv.values[j];
            }
        }
    } else {
        const bool standing = layer.has_standing();
        if (!standing && !layer.has_running)
            throw ValueError("cbn: eval mode before any statistics exist");
        const Tensor& mu = standing ? layer.standing_mean : layer.running_mean;
        const Tensor& var = standing ? layer.standing_var : layer.running_var;
        Tensor inv({width});
        for (size_t j = 0; j < width; ++j) inv.values[j] = 1.0 / std::sqrt(var.values[j] + layer.eps);
        Var xc = t.sub(h, t.broadcast_row(t.constant(mu), batch));
        xhat = t.mul(xc, t.broadcast_row(t.constant(std::move(inv)), batch));
    }
    return t.add(t.mul(xhat, gain), bias);
}

Generator Generator::init(const GeneratorConfig& cfg, Rng& rng) {
    cfg.validate();
    Generator g;
    g.cfg = cfg;
    const size_t in0 = cfg.use_skip_z ? cfg.chunk_size : cfg.z_dim;
    g.w_in = orthogonal_init(in0, cfg.hidden_widths[0], rng);
    if (cfg.use_shared_embedding) g.embed = orthogonal_init(cfg.num_classes, cfg.embed_dim, rng);
    g.layers.resize(cfg.hidden_widths.size());
    for (size_t i = 0; i < g.layers.size(); ++i) {
        Layer& l = g.layers[i];
        const size_t w = cfg.hidden_widths[i];
        if (i > 0) l.weight = orthogonal_init(cfg.hidden_widths[i - 1], w, rng);
        if (!cfg.use_shared_embedding) l.embed_local = orthogonal_init(cfg.num_classes, cfg.embed_dim, rng);
        l.cbn.gain_proj = Tensor::zeros({cfg.cond_dim(), w});
        l.cbn.bias_proj = Tensor::zeros({cfg.cond_dim(), w});
        l.cbn.running_mean = Tensor::zeros({w});
        l.cbn.running_var = Tensor::full({w}, 1.0);
        l.cbn.eps = cfg.bn_eps;
        l.cbn.momentum = cfg.bn_momentum;
    }
    g.w_out = orthogonal_init(cfg.hidden_widths.back(), cfg.out_dim, rng);
    g.b_out = Tensor::zeros({cfg.out_dim});
    return g;
}

Var Generator::forward(Tape& t, Var z, const std::vector<uint32_t>& ys, RunMode mode,
                       bool update_stats, StandingAccum* accum, bool params_require_grad) {
    const Tensor& tz = t.value(z);
    if (!tz.is_matrix() || tz.cols() != cfg.z_dim)
        throw ShapeError("generator: z shape " + shape_str(tz.shape) + " vs z_dim " + std::to_string(cfg.z_dim));
    if (tz.rows() != ys.size()) throw ShapeError("generator: batch mismatch between z and labels");

    std::vector<Var> chunks;
    if (cfg.use_skip_z)
        chunks = split_z(t, z, cfg.chunk_size);
    else
        chunks.push_back(z);

    Var shared_e;
    if (cfg.use_shared_embedding) shared_e = embed_class(t, t.leaf(embed, params_require_grad), ys);

    if (accum) {
        if (accum->sum_mean.size() != layers.size()) {
            accum->sum_mean.assign(layers.size(), Tensor());
            accum->sum_sq.assign(layers.size(), Tensor());
            for (size_t i = 0; i < layers.size(); ++i) {
                accum->sum_mean[i] = Tensor::zeros({cfg.hidden_widths[i]});
                accum->sum_sq[i] = Tensor::zeros({cfg.hidden_widths[i]});
            }
        }
        ++accum->passes;
    }

    Var h = t.matmul(chunks[0], t.leaf(w_in, params_require_grad));
    for (size_t i = 0; i < layers.size(); ++i) {
        Layer& l = layers[i];
        if (i > 0) h = t.matmul(h, t.leaf(l.weight, params_require_grad));
        Var e = cfg.use_shared_embedding ? shared_e
                                         : embed_class(t, t.leaf(l.embed_local, params_require_grad), ys);
        Var cond = cfg.use_skip_z ? t.concat_cols(chunks[i + 1], e) : e;
        h = cbn_forward(t, h, cond, l.cbn, mode, update_stats && !accum,
                        accum ? &accum->sum_mean[i] : nullptr, accum ? &accum->sum_sq[i] : nullptr,
                        params_require_grad);
        h = t.relu(h);
    }
    return t.add(t.matmul(h, t.leaf(w_out, params_require_grad)),
                 t.broadcast_row(t.leaf(b_out, params_require_grad), tz.rows()));
}

std::vector<std::pair<std::string, Tensor*>> Generator::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    if (cfg.use_shared_embedding) out.emplace_back("g.embed", &embed);
    out.emplace_back("g.layer0.weight", &w_in);
    for (size_t i = 0; i < layers.size(); ++i) {
        const std::string base = "g.layer" + std::to_string(i);
        if (i > 0) out.emplace_back(base + ".weight", &layers[i].weight);
        if (!cfg.use_shared_embedding) out.emplace_back(base + ".embed", &layers[i].embed_local);
        out.emplace_back(base + ".cbn.gain_proj", &layers[i].cbn.gain_proj);
        out.emplace_back(base + ".cbn.bias_proj", &layers[i].cbn.bias_proj);
    }
    out.emplace_back("g.out.weight", &w_out);
    out.emplace_back("g.out.bias", &b_out);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Generator::named_stats() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < layers.size(); ++i) {
        const std::string base = "g.layer" + std::to_string(i) + ".cbn.";
        out.emplace_back(base + "running_mean", &layers[i].cbn.running_mean);
        out.emplace_back(base + "running_var", &layers[i].cbn.running_var);
        out.emplace_back(base + "standing_mean", &layers[i].cbn.standing_mean);
        out.emplace_back(base + "standing_var", &layers[i].cbn.standing_var);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Generator::weight_matrices() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [name, p] : named_params())
        if (p->is_matrix()) out.emplace_back(name, p);
    return out;
}

void Generator::invalidate_standing() {
    for (Layer& l : layers) {
        l.cbn.standing_mean = Tensor();
        l.cbn.standing_var = Tensor();
    }
}

void compute_standing_stats(Generator& g, size_t passes, size_t batch, const LatentSpec& latent,
                            const std::function<std::vector<uint32_t>(size_t, Rng&)>& class_sampler,
                            Rng& rng) {
    if (passes < 1) throw ValueError("standing stats: passes must be >= 1");
    StandingAccum accum;
    Tape t;
    for (size_t p = 0; p < passes; ++p) {
        t.clear();
        Tensor z = sample_latent(latent, batch, rng);
        std::vector<uint32_t> ys = class_sampler(batch, rng);
        g.forward(t, t.constant(std::move(z)), ys, RunMode::train, false, &accum);
    }
    for (size_t i = 0; i < g.layers.size(); ++i) {
        ConditionalBatchNorm& cbn = g.layers[i].cbn;
        const size_t w = g.cfg.hidden_widths[i];
        cbn.standing_mean = Tensor::zeros({w});
        cbn.standing_var = Tensor::zeros({w});
        const double n = static_cast<double>(accum.passes);
        for (size_t j = 0; j < w; ++j) {
            const double m = accum.sum_mean[i].values[j] / n;
            const double ex2 = accum.sum_sq[i].values[j] / n;
            cbn.standing_mean.values[j] = m;
            cbn.standing_var.values[j] = std::max(0.0, ex2 - m * m);
        }
    }
}

Discriminator Discriminator::init(const DiscriminatorConfig& cfg, Rng& rng) {
    cfg.validate();
    Discriminator d;
    d.cfg = cfg;
    size_t prev = cfg.in_dim;
    d.layers.resize(cfg.hidden_widths.size());
    for (size_t i = 0; i < d.layers.size(); ++i) {
        const size_t w = cfg.hidden_widths[i];
        d.layers[i].weight = orthogonal_init(prev, w, rng);
        d.layers[i].bias = Tensor::zeros({w});
        d.layers[i].sn = SpectralState::init(prev, w, sn_k(prev, w), rng);
        prev = w;
    }
    d.head_w = orthogonal_init(prev, 1, rng);
    d.head_b = Tensor::zeros({1});
    d.head_sn = SpectralState::init(prev, 1, 1, rng);
    d.embed = orthogonal_init(cfg.num_classes, cfg.embed_dim, rng);
    d.embed_sn = SpectralState::init(cfg.num_classes, cfg.embed_dim,
                                     sn_k(cfg.num_classes, cfg.embed_dim), rng);
    return d;
}

Var Discriminator::forward(Tape& t, Var x, const std::vector<uint32_t>& ys, RunMode mode,
                           Rng& dropout_rng, bool update_sn, bool params_require_grad) {
    const Tensor& tx = t.value(x);
    if (!tx.is_matrix() || tx.cols() != cfg.in_dim)
        throw ShapeError("discriminator: input " + shape_str(tx.shape) + " vs in_dim " + std::to_string(cfg.in_dim));
    if (tx.rows() != ys.size()) throw ShapeError("discriminator: batch mismatch between x and labels");
    for (uint32_t y : ys)
        if (y >= cfg.num_classes) throw ValueError("discriminator: class " + std::to_string(y) + " out of range");

    auto normalized = [&](Tensor& w, SpectralState& sn) -> Var {
        Var wv = t.leaf(w, params_require_grad);
        if (!cfg.use_spectral_norm) return wv;
        // a 2-d tracked subspace keeps the top estimate correct through
        // singular-value crossings, where a single persistent vector can lock
        // onto the formerly dominant pair
        if (update_sn) {
            if (sn.k >= 2)
                top_k_singular(w, sn, sn.k, 200, 1e-11);
            else
                power_iterate_tracked(w, sn);
        }
        return spectral_normalize(t, wv, sn);
    };

    const size_t batch = tx.rows();
    Var h = x;
    for (Layer& l : layers) {
        Var wn = normalized(l.weight, l.sn);
        h = t.relu(t.add(t.matmul(h, wn), t.broadcast_row(t.leaf(l.bias, params_require_grad), batch)));
    }
    if (mode == RunMode::train && cfg.dropout_keep_prob < 1.0) {
        const Tensor& th = t.value(h);
        Tensor mask(th.shape);
        const double keep = cfg.dropout_keep_prob;
        for (double& m : mask.values) m = (dropout_rng.uniform() < keep) ? 1.0 / keep : 0.0;
        h = t.mul(h, t.constant(std::move(mask)));
    }
    Var lin = t.matmul(h, normalized(head_w, head_sn));
    lin = t.add(lin, t.broadcast_row(t.leaf(head_b, params_require_grad), batch));
    Var e = t.gather_rows(normalized(embed, embed_sn), ys);
    Var proj = t.sum(t.mul(e, h), 1);
    return t.add(t.reshape(lin, {batch}), proj);
}

std::vector<double> Discriminator::score(const Tensor& x, const std::vector<uint32_t>& ys) {
    Tape t;
    Rng dummy(0, stream::dropout);
    Tensor copy = x;
    Var s = forward(t, t.constant(std::move(copy)), ys, RunMode::eval, dummy, false, false);
    return t.value(s).values;
}

std::vector<std::pair<std::string, Tensor*>> Discriminator::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t i = 0; i < layers.size(); ++i) {
        const std::string base = "d.layer" + std::to_string(i);
        out.emplace_back(base + ".weight", &layers[i].weight);
        out.emplace_back(base + ".bias", &layers[i].bias);
    }
    out.emplace_back("d.head.weight", &head_w);
    out.emplace_back("d.head.bias", &head_b);
    out.emplace_back("d.embed", &embed);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Discriminator::weight_matrices() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [name, p] : named_params())
        if (p->is_matrix()) out.emplace_back(name, p);
    return out;
}

std::vector<std::pair<std::string, SpectralState*>> Discriminator::sn_states() {
    std::vector<std::pair<std::string, SpectralState*>> out;
    for (size_t i = 0; i < layers.size(); ++i)
        out.emplace_back("d.layer" + std::to_string(i) + ".weight", &layers[i].sn);
    out.emplace_back("d.head.weight", &head_sn);
    out.emplace_back("d.embed", &embed_sn);
    return out;
}

}  // namespace gsl
