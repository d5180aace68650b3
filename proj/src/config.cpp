#include "gsl/config.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace gsl {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw ConfigError("config: bad real for " + key + ": '" + v + "'");
    }
}

uint64_t parse_count(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (...) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<size_t> parse_count_list(const std::string& key, const std::string& v) {
    std::vector<size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_count(key, trim(item)));
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_list(const std::vector<size_t>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

const std::array<const char*, 44> kKnownKeys = {
    "data.kind", "data.modes", "data.radius", "data.pitch", "data.mode_std", "data.classes",
    "latent.kind", "latent.dim", "latent.anneal_from", "latent.anneal_to", "latent.anneal_steps",
    "latent.sigma_l", "latent.sigma_h", "latent.truncation", "latent.truncation_mode",
    "g.hidden", "g.chunk_size", "g.embed_dim", "g.skip_z", "g.shared_embedding", "g.bn_momentum",
    "g.bn_eps",
    "d.hidden", "d.embed_dim", "d.dropout_keep", "d.spectral_norm",
    "train.steps", "train.batch", "train.seed", "train.lr_g", "train.lr_d", "train.d_steps",
    "train.beta1", "train.beta2", "train.adam_eps", "train.ema_decay", "train.loss",
    "train.margin", "train.r1_gamma", "train.ortho_beta", "train.ortho_variant",
    "train.sigma_reg_strength", "train.sigma_reg_mode", "train.sigma_reg_target",
};

const std::array<const char*, 7> kKnownKeys2 = {
    "train.sigma_clamp", "telemetry.flush_every", "telemetry.collapse_window",
    "telemetry.collapse_factor", "telemetry.stop_on_collapse", "checkpoint.every", "out.dir",
};

}  // namespace

bool is_known_config_key(const std::string& key) {
    for (const char* k : kKnownKeys)
        if (key == k) return true;
    for (const char* k : kKnownKeys2)
        if (key == k) return true;
    return false;
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters;

    setters["data.kind"] = [&](const std::string& k, const std::string& v) {
        if (v == "ring")
            cfg.data.kind = DatasetKind::ring;
        else if (v == "grid")
            cfg.data.kind = DatasetKind::grid;
        else
            throw ConfigError("config: " + k + " must be ring or grid");
    };
    setters["data.modes"] = [&](const std::string& k, const std::string& v) { cfg.data.n_modes = parse_count(k, v); };
    setters["data.radius"] = [&](const std::string& k, const std::string& v) { cfg.data.radius = parse_real(k, v); };
    setters["data.pitch"] = [&](const std::string& k, const std::string& v) { cfg.data.pitch = parse_real(k, v); };
    setters["data.mode_std"] = [&](const std::string& k, const std::string& v) { cfg.data.mode_std = parse_real(k, v); };
    setters["data.classes"] = [&](const std::string& k, const std::string& v) {
        if (v == "per_mode")
            cfg.data.k_classes = 0;
        else
            cfg.data.k_classes = parse_count(k, v);
    };

    setters["latent.kind"] = [&](const std::string&, const std::string& v) { cfg.latent.kind = latent_kind_from_string(v); };
    setters["latent.dim"] = [&](const std::string& k, const std::string& v) { cfg.latent.dim = parse_count(k, v); };
    setters["latent.anneal_from"] = [&](const std::string& k, const std::string& v) { cfg.anneal_from = parse_real(k, v); };
    setters["latent.anneal_to"] = [&](const std::string& k, const std::string& v) { cfg.anneal_to = parse_real(k, v); };
    setters["latent.anneal_steps"] = [&](const std::string& k, const std::string& v) { cfg.anneal_steps = parse_count(k, v); };
    setters["latent.sigma_l"] = [&](const std::string& k, const std::string& v) { cfg.latent.sigma_l = parse_real(k, v); };
    setters["latent.sigma_h"] = [&](const std::string& k, const std::string& v) { cfg.latent.sigma_h = parse_real(k, v); };
    setters["latent.truncation"] = [&](const std::string& k, const std::string& v) { cfg.latent.truncation = parse_real(k, v); };
    setters["latent.truncation_mode"] = [&](const std::string& k, const std::string& v) {
        if (v == "per_coordinate")
            cfg.latent.truncation_mode = TruncationMode::per_coordinate;
        else if (v == "per_vector")
            cfg.latent.truncation_mode = TruncationMode::per_vector;
        else
            throw ConfigError("config: " + k + " must be per_coordinate or per_vector");
    };

    setters["g.hidden"] = [&](const std::string& k, const std::string& v) { cfg.gen.hidden_widths = parse_count_list(k, v); };
    setters["g.chunk_size"] = [&](const std::string& k, const std::string& v) { cfg.gen.chunk_size = parse_count(k, v); };
    setters["g.embed_dim"] = [&](const std::string& k, const std::string& v) { cfg.gen.embed_dim = parse_count(k, v); };
    setters["g.skip_z"] = [&](const std::string& k, const std::string& v) { cfg.gen.use_skip_z = parse_bool(k, v); };
    setters["g.shared_embedding"] = [&](const std::string& k, const std::string& v) { cfg.gen.use_shared_embedding = parse_bool(k, v); };
    setters["g.bn_momentum"] = [&](const std::string& k, const std::string& v) { cfg.gen.bn_momentum = parse_real(k, v); };
    setters["g.bn_eps"] = [&](const std::string& k, const std::string& v) { cfg.gen.bn_eps = parse_real(k, v); };

    setters["d.hidden"] = [&](const std::string& k, const std::string& v) { cfg.disc.hidden_widths = parse_count_list(k, v); };
    setters["d.embed_dim"] = [&](const std::string& k, const std::string& v) { cfg.disc.embed_dim = parse_count(k, v); };
    setters["d.dropout_keep"] = [&](const std::string& k, const std::string& v) { cfg.disc.dropout_keep_prob = parse_real(k, v); };
    setters["d.spectral_norm"] = [&](const std::string& k, const std::string& v) { cfg.disc.use_spectral_norm = parse_bool(k, v); };

    setters["train.steps"] = [&](const std::string& k, const std::string& v) { cfg.train.total_steps = parse_count(k, v); };
    setters["train.batch"] = [&](const std::string& k, const std::string& v) { cfg.train.batch = parse_count(k, v); };
    setters["train.seed"] = [&](const std::string& k, const std::string& v) { cfg.train.seed = parse_count(k, v); };
    setters["train.lr_g"] = [&](const std::string& k, const std::string& v) { cfg.train.lr_g = parse_real(k, v); };
    setters["train.lr_d"] = [&](const std::string& k, const std::string& v) { cfg.train.lr_d = parse_real(k, v); };
    setters["train.d_steps"] = [&](const std::string& k, const std::string& v) { cfg.train.d_steps_per_g = parse_count(k, v); };
    setters["train.beta1"] = [&](const std::string& k, const std::string& v) { cfg.train.beta1 = parse_real(k, v); };
    setters["train.beta2"] = [&](const std::string& k, const std::string& v) { cfg.train.beta2 = parse_real(k, v); };
    setters["train.adam_eps"] = [&](const std::string& k, const std::string& v) { cfg.train.adam_eps = parse_real(k, v); };
    setters["train.ema_decay"] = [&](const std::string& k, const std::string& v) { cfg.train.ema_decay = parse_real(k, v); };
    setters["train.loss"] = [&](const std::string& k, const std::string& v) {
        if (v == "hinge")
            cfg.train.loss_kind = LossKind::hinge;
        else if (v == "vanilla")
            cfg.train.loss_kind = LossKind::vanilla;
        else
            throw ConfigError("config: " + k + " must be hinge or vanilla");
    };
    setters["train.margin"] = [&](const std::string& k, const std::string& v) { cfg.train.hinge_margin = parse_real(k, v); };
    setters["train.r1_gamma"] = [&](const std::string& k, const std::string& v) { cfg.train.r1_gamma = parse_real(k, v); };
    setters["train.ortho_beta"] = [&](const std::string& k, const std::string& v) { cfg.train.ortho_beta = parse_real(k, v); };
    setters["train.ortho_variant"] = [&](const std::string& k, const std::string& v) {
        if (v == "full")
            cfg.train.ortho_variant = OrthoVariant::full;
        else if (v == "offdiag")
            cfg.train.ortho_variant = OrthoVariant::offdiag;
        else
            throw ConfigError("config: " + k + " must be full or offdiag");
    };
    setters["train.sigma_reg_strength"] = [&](const std::string& k, const std::string& v) { cfg.train.sigma_reg_strength = parse_real(k, v); };
    setters["train.sigma_reg_mode"] = [&](const std::string& k, const std::string& v) {
        if (v == "fixed")
            cfg.train.sigma_reg_mode = SigmaRegMode::fixed;
        else if (v == "ratio")
            cfg.train.sigma_reg_mode = SigmaRegMode::ratio;
        else
            throw ConfigError("config: " + k + " must be fixed or ratio");
    };
    setters["train.sigma_reg_target"] = [&](const std::string& k, const std::string& v) { cfg.train.sigma_reg_target = parse_real(k, v); };
    setters["train.sigma_clamp"] = [&](const std::string& k, const std::string& v) { cfg.train.sigma_clamp = parse_real(k, v); };

    setters["telemetry.flush_every"] = [&](const std::string& k, const std::string& v) { cfg.telemetry.flush_every = parse_count(k, v); };
    setters["telemetry.collapse_window"] = [&](const std::string& k, const std::string& v) { cfg.telemetry.collapse_window = parse_count(k, v); };
    setters["telemetry.collapse_factor"] = [&](const std::string& k, const std::string& v) { cfg.telemetry.collapse_factor = parse_real(k, v); };
    setters["telemetry.stop_on_collapse"] = [&](const std::string& k, const std::string& v) { cfg.telemetry.stop_on_collapse = parse_bool(k, v); };
    setters["checkpoint.every"] = [&](const std::string& k, const std::string& v) { cfg.checkpoint.every = parse_count(k, v); };
    setters["out.dir"] = [&](const std::string&, const std::string& v) { cfg.out_dir = v; };

    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value: '" + stripped + "'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("config: unknown key '" + key + "'");
        it->second(key, value);
    }
    cfg.finalize();
    return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void RunConfig::finalize() {
    gen.z_dim = latent.dim;
    gen.out_dim = 2;
    disc.in_dim = 2;
    const MixtureSpec mix = make_mixture(data);  // validates the dataset spec
    gen.num_classes = mix.num_classes;
    disc.num_classes = mix.num_classes;
    if (latent.kind == LatentKind::variance_annealed) {
        const uint64_t span = anneal_steps > 0 ? anneal_steps : train.total_steps;
        latent.anneal.knots = {{0, anneal_from}, {span, anneal_to}};
    }
    train.validate();
    gen.validate();
    disc.validate();
    latent.validate();
}

std::string RunConfig::serialize() const {
    std::ostringstream o;
    o << "data.kind=" << (data.kind == DatasetKind::ring ? "ring" : "grid") << "\n";
    o << "data.modes=" << data.n_modes << "\n";
    o << "data.radius=" << fmt_real(data.radius) << "\n";
    o << "data.pitch=" << fmt_real(data.pitch) << "\n";
    o << "data.mode_std=" << fmt_real(data.mode_std) << "\n";
    o << "data.classes=" << (data.k_classes == 0 ? std::string("per_mode") : std::to_string(data.k_classes)) << "\n";
    o << "latent.kind=" << to_string(latent.kind) << "\n";
    o << "latent.dim=" << latent.dim << "\n";
    o << "latent.anneal_from=" << fmt_real(anneal_from) << "\n";
    o << "latent.anneal_to=" << fmt_real(anneal_to) << "\n";
    o << "latent.anneal_steps=" << anneal_steps << "\n";
    o << "latent.sigma_l=" << fmt_real(latent.sigma_l) << "\n";
    o << "latent.sigma_h=" << fmt_real(latent.sigma_h) << "\n";
    o << "latent.truncation=" << fmt_real(latent.truncation) << "\n";
    o << "latent.truncation_mode="
      << (latent.truncation_mode == TruncationMode::per_coordinate ? "per_coordinate" : "per_vector") << "\n";
    o << "g.hidden=" << fmt_list(gen.hidden_widths) << "\n";
    o << "g.chunk_size=" << gen.chunk_size << "\n";
    o << "g.embed_dim=" << gen.embed_dim << "\n";
    o << "g.skip_z=" << (gen.use_skip_z ? "true" : "false") << "\n";
    o << "g.shared_embedding=" << (gen.use_shared_embedding ? "true" : "false") << "\n";
    o << "g.bn_momentum=" << fmt_real(gen.bn_momentum) << "\n";
    o << "g.bn_eps=" << fmt_real(gen.bn_eps) << "\n";
    o << "d.hidden=" << fmt_list(disc.hidden_widths) << "\n";
    o << "d.embed_dim=" << disc.embed_dim << "\n";
    o << "d.dropout_keep=" << fmt_real(disc.dropout_keep_prob) << "\n";
    o << "d.spectral_norm=" << (disc.use_spectral_norm ? "true" : "false") << "\n";
    o << "train.steps=" << train.total_steps << "\n";
    o << "train.batch=" << train.batch << "\n";
    o << "train.seed=" << train.seed << "\n";
    o << "train.lr_g=" << fmt_real(train.lr_g) << "\n";
    o << "train.lr_d=" << fmt_real(train.lr_d) << "\n";
    o << "train.d_steps=" << train.d_steps_per_g << "\n";
    o << "train.beta1=" << fmt_real(train.beta1) << "\n";
    o << "train.beta2=" << fmt_real(train.beta2) << "\n";
    o << "train.adam_eps=" << fmt_real(train.adam_eps) << "\n";
    o << "train.ema_decay=" << fmt_real(train.ema_decay) << "\n";
    o << "train.loss=" << (train.loss_kind == LossKind::hinge ? "hinge" : "vanilla") << "\n";
    o << "train.margin=" << fmt_real(train.hinge_margin) << "\n";
    o << "train.r1_gamma=" << fmt_real(train.r1_gamma) << "\n";
    o << "train.ortho_beta=" << fmt_real(train.ortho_beta) << "\n";
    o << "train.ortho_variant=" << (train.ortho_variant == OrthoVariant::full ? "full" : "offdiag") << "\n";
    o << "train.sigma_reg_strength=" << fmt_real(train.sigma_reg_strength) << "\n";
    o << "train.sigma_reg_mode=" << (train.sigma_reg_mode == SigmaRegMode::fixed ? "fixed" : "ratio") << "\n";
    o << "train.sigma_reg_target=" << fmt_real(train.sigma_reg_target) << "\n";
    o << "train.sigma_clamp=" << fmt_real(train.sigma_clamp) << "\n";
    o << "telemetry.flush_every=" << telemetry.flush_every << "\n";
    o << "telemetry.collapse_window=" << telemetry.collapse_window << "\n";
    o << "telemetry.collapse_factor=" << fmt_real(telemetry.collapse_factor) << "\n";
    o << "telemetry.stop_on_collapse=" << (telemetry.stop_on_collapse ? "true" : "false") << "\n";
    o << "checkpoint.every=" << checkpoint.every << "\n";
    if (!out_dir.empty()) o << "out.dir=" << out_dir << "\n";
    return o.str();
}

TrainSetup make_setup(const RunConfig& cfg) {
    TrainSetup s;
    s.train = cfg.train;
    s.gen = cfg.gen;
    s.disc = cfg.disc;
    s.latent = cfg.latent;
    s.data = cfg.data;
    s.config_text = cfg.serialize();
    return s;
}

TrainSetup parse_setup_text(const std::string& text) {
    return make_setup(RunConfig::parse(text));
}

}  // namespace gsl
