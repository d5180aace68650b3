#include "gsl/runner.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

namespace gsl {

namespace fs = std::filesystem;

std::string resolve_out_root(const std::string& cli_out, const RunConfig& cfg) {
    if (!cli_out.empty()) return cli_out;
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    if (const char* env = std::getenv("GSL_OUT_DIR"); env && *env) return env;
    return "runs";
}

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

void write_snapshot(const std::string& run_dir, const TrainState& st, const std::string& provenance) {
    std::string text;
    if (!provenance.empty()) text += provenance;
    text += st.setup.config_text;
    write_text(run_dir + "/config.snapshot", text);
}

std::vector<uint32_t> uniform_classes(size_t n, Rng& rng, size_t num_classes) {
    std::vector<uint32_t> ys(n);
    for (auto& y : ys) y = static_cast<uint32_t>(rng.index(num_classes));
    return ys;
}

// EMA weights + standing statistics from them, ready for sampling.
Generator make_eval_generator(const TrainState& st, uint64_t seed) {
    Generator g = st.g;
    TrainState& mst = const_cast<TrainState&>(st);
    std::vector<Tensor> averaged = ema_params(st.ema, mst.g.named_params());
    auto eval_params = g.named_params();
    for (size_t i = 0; i < averaged.size(); ++i) eval_params[i].second->values = averaged[i].values;
    g.invalidate_standing();
    Rng standing_rng(seed, stream::standing);
    const size_t num_classes = g.cfg.num_classes;
    compute_standing_stats(
        g, 100, std::max<size_t>(64, st.setup.train.batch),
        st.setup.latent,
        [num_classes](size_t n, Rng& r) { return uniform_classes(n, r, num_classes); },
        standing_rng);
    return g;
}

RunResult run_loop(TrainState& st, uint64_t target_step, const RunConfig& cfg,
                   const std::string& run_dir, const std::string& provenance) {
    fs::create_directories(run_dir);
    fs::create_directories(run_dir + "/checkpoints");
    write_snapshot(run_dir, st, provenance);

    TelemetryLog log;
    log.flush_every = cfg.telemetry.flush_every;
    log.open_sinks(run_dir);

    RunResult result;
    result.run_dir = run_dir;

    const uint64_t ckpt_every = cfg.checkpoint.every;
    uint64_t last_collapse_scan = st.step;
    while (st.step < target_step) {
        result.last_report = train_step(st, &log);
        if (ckpt_every > 0 && st.step % ckpt_every == 0 && st.step < target_step) {
            char name[64];
            std::snprintf(name, sizeof(name), "/checkpoints/step_%08llu.gsl",
                          static_cast<unsigned long long>(st.step));
            save_checkpoint(st, run_dir + name);
        }
        if (cfg.telemetry.stop_on_collapse && st.step >= last_collapse_scan + 50 &&
            log.reports().size() > cfg.telemetry.collapse_window) {
            last_collapse_scan = st.step;
            result.collapse_step = detect_collapse(log.spectra(), log.reports(),
                                                   cfg.telemetry.collapse_window,
                                                   cfg.telemetry.collapse_factor);
            if (result.collapse_step) break;
        }
    }
    log.close();

    if (!result.collapse_step && log.reports().size() > cfg.telemetry.collapse_window)
        result.collapse_step = detect_collapse(log.spectra(), log.reports(),
                                               cfg.telemetry.collapse_window,
                                               cfg.telemetry.collapse_factor);

    // Final checkpoint: standing statistics computed with the EMA weights so
    // the stored sampler state matches what evaluation uses.
    Generator eval_g = make_eval_generator(st, st.setup.train.seed);
    for (size_t i = 0; i < st.g.layers.size(); ++i) {
        st.g.layers[i].cbn.standing_mean = eval_g.layers[i].cbn.standing_mean;
        st.g.layers[i].cbn.standing_var = eval_g.layers[i].cbn.standing_var;
    }
    save_checkpoint(st, run_dir + "/checkpoints/final.gsl");
    result.final_step = st.step;
    return result;
}

}  // namespace

RunResult run_training(const RunConfig& cfg, const std::string& run_dir,
                       const std::string& provenance) {
    TrainState st = TrainState::init(make_setup(cfg));
    return run_loop(st, cfg.train.total_steps, cfg, run_dir, provenance);
}

TrainState load_checkpoint(const std::string& path) {
    return load_checkpoint_with(read_checkpoint_records(path), &parse_setup_text);
}

RunResult run_intervention(const std::string& checkpoint_path, const InterventionSpec& spec,
                           uint64_t steps, const std::string& run_dir) {
    TrainState st = load_checkpoint(checkpoint_path);
    const uint64_t parent_step = st.step;
    apply_intervention(st, spec);
    // Refresh the embedded snapshot so that checkpoints taken from this run
    // carry the effective values.
    RunConfig cfg = RunConfig::parse(st.setup.config_text);
    cfg.train = st.setup.train;
    st.setup.config_text = cfg.serialize();

    std::string provenance = "# parent_checkpoint=" + checkpoint_path + "\n";
    provenance += "# parent_step=" + std::to_string(parent_step) + "\n";
    char spec_line[256];
    std::snprintf(spec_line, sizeof(spec_line),
                  "# intervention: scale_lr_g=%g scale_lr_d=%g freeze=%s reset_momentum=%d%s%s\n",
                  spec.scale_lr_g, spec.scale_lr_d,
                  spec.freeze == FreezeTarget::none ? "none" : (spec.freeze == FreezeTarget::g ? "g" : "d"),
                  spec.reset_momentum ? 1 : 0,
                  spec.set_d_steps ? (" d_steps=" + std::to_string(*spec.set_d_steps)).c_str() : "",
                  spec.set_hinge_margin ? (" margin=" + std::to_string(*spec.set_hinge_margin)).c_str() : "");
    provenance += spec_line;
    return run_loop(st, parent_step + steps, cfg, run_dir, provenance);
}

EvalOutputs evaluate_state(TrainState& st, const std::vector<double>& thresholds, size_t n,
                           uint64_t seed) {
    if (st.ema.shadow.empty()) throw ValueError("eval: checkpoint has no EMA state");
    Generator g = make_eval_generator(st, seed == 0 ? st.setup.train.seed : seed);
    Rng rng(seed == 0 ? st.setup.train.seed : seed, stream::eval);

    EvalOutputs out;
    auto [reference, ref_labels] = sample_real(st.mixture, std::nullopt, n, rng);
    (void)ref_labels;
    out.curve = truncation_sweep(g, st.setup.latent, st.mixture, reference, thresholds, n, rng);

    auto [samples, ys] = generate_samples(g, st.setup.latent, n, rng);
    (void)ys;
    out.coverage = mode_coverage(samples, st.mixture);
    out.fd_untruncated = frechet_distance(samples, reference);

    const size_t mem_n = std::min<size_t>(n, 4096);
    auto [train_real, train_labels] = sample_real(st.mixture, std::nullopt, mem_n, rng);
    auto [held_real, held_labels] = sample_real(st.mixture, std::nullopt, mem_n, rng);
    auto [train_acc, held_acc] = d_memorization_check(st.d, train_real, train_labels, held_real,
                                                      held_labels, g, st.setup.latent, rng);
    out.train_acc = train_acc;
    out.heldout_acc = held_acc;
    return out;
}

EvalOutputs run_eval(const std::string& checkpoint_path, const std::vector<double>& thresholds,
                     size_t n, const std::string& out_dir, uint64_t seed) {
    TrainState st = load_checkpoint(checkpoint_path);
    EvalOutputs out = evaluate_state(st, thresholds, n, seed);

    fs::create_directories(out_dir);
    {
        std::ofstream f(out_dir + "/eval.csv", std::ios::binary);
        if (!f) throw IoError("cannot open " + out_dir + "/eval.csv");
        f << "threshold,fd,spread,hq_fraction\n";
        char buf[160];
        for (const auto& p : out.curve) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", p.threshold, p.fd, p.spread,
                          p.hq_fraction);
            f << buf;
        }
    }
    {
        std::ofstream f(out_dir + "/memorization.csv", std::ios::binary);
        if (!f) throw IoError("cannot open " + out_dir + "/memorization.csv");
        char buf[96];
        std::snprintf(buf, sizeof(buf), "train_acc,heldout_acc\n%.17g,%.17g\n", out.train_acc,
                      out.heldout_acc);
        f << buf;
    }
    return out;
}

std::vector<SweepCellResult> run_sweep(const RunConfig& base,
                                       const std::vector<std::pair<std::string, std::vector<std::string>>>& grid,
                                       size_t parallel, const std::string& out_root) {
    for (const auto& [key, values] : grid) {
        if (!is_known_config_key(key)) throw ConfigError("sweep: unknown config key '" + key + "'");
        if (values.empty()) throw ConfigError("sweep: no values for key '" + key + "'");
    }
    // Cartesian product, first axis slowest.
    std::vector<std::vector<std::pair<std::string, std::string>>> cells{{}};
    for (const auto& [key, values] : grid) {
        std::vector<std::vector<std::pair<std::string, std::string>>> next;
        for (const auto& cell : cells)
            for (const auto& v : values) {
                auto copy = cell;
                copy.emplace_back(key, v);
                next.push_back(std::move(copy));
            }
        cells = std::move(next);
    }

    fs::create_directories(out_root);
    const std::string base_text = base.serialize();
    std::vector<SweepCellResult> results(cells.size());

    std::atomic<size_t> next_cell{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next_cell.fetch_add(1);
            if (i >= cells.size()) return;
            std::string text = base_text;
            std::string desc;
            for (const auto& [k, v] : cells[i]) {
                text += k + "=" + v + "\n";
                desc += (desc.empty() ? "" : " ") + k + "=" + v;
            }
            RunConfig cfg = RunConfig::parse(text);
            cfg.train.seed = base.train.seed + i;
            const std::string dir = out_root + "/cell_" + std::to_string(i);
            RunResult run = run_training(cfg, dir);
            TrainState st = load_checkpoint(dir + "/checkpoints/final.gsl");
            EvalOutputs ev = evaluate_state(st, {2.0, 1.0, 0.5, 0.04}, 4096, cfg.train.seed);
            SweepCellResult& r = results[i];
            r.index = i;
            r.overrides = desc;
            r.seed = cfg.train.seed;
            r.run_dir = dir;
            r.collapse_step = run.collapse_step;
            r.fd = ev.fd_untruncated;
            r.modes_hit = ev.coverage.modes_hit;
            r.hq_fraction = ev.coverage.high_quality_fraction;
            r.d_loss_final = run.last_report.d_loss_real + run.last_report.d_loss_fake;
            r.g_loss_final = run.last_report.g_loss;
        }
    };

    const size_t n_threads = std::max<size_t>(1, std::min(parallel, cells.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::ofstream f(out_root + "/summary.csv", std::ios::binary);
    if (!f) throw IoError("cannot open " + out_root + "/summary.csv");
    f << "cell,overrides,seed,collapse_step,fd,modes_hit,hq_fraction,d_loss_final,g_loss_final\n";
    char buf[512];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof(buf), "%zu,%s,%llu,%lld,%.17g,%zu,%.17g,%.17g,%.17g\n", r.index,
                      r.overrides.c_str(), static_cast<unsigned long long>(r.seed),
                      r.collapse_step ? static_cast<long long>(*r.collapse_step) : -1LL, r.fd,
                      r.modes_hit, r.hq_fraction, r.d_loss_final, r.g_loss_final);
        f << buf;
    }
    return results;
}

}  // namespace gsl
