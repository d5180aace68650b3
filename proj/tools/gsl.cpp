#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gsl/runner.hpp"

namespace {

std::vector<double> parse_thresholds(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

std::string timestamped(const std::string& root, const std::string& prefix, uint64_t seed) {
    return root + "/" + prefix + "_seed" + std::to_string(seed);
}

int dispatch(int argc, char** argv) {
    CLI::App app{"gsl - desk-scale GAN stability laboratory"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train a model from a config file");
    std::string train_config, train_out;
    int64_t train_seed = -1;
    bool dump_data = false;
    train->add_option("config", train_config, "config file (key=value)")->required();
    train->add_option("--seed", train_seed, "override train.seed");
    train->add_option("--out", train_out, "output directory (default $GSL_OUT_DIR)");
    train->add_flag("--dump-data", dump_data, "also write points.csv with a reference dataset sample");

    // intervene
    auto* inter = app.add_subcommand("intervene", "resume a checkpoint with modified training");
    std::string ckpt_path, inter_out, freeze;
    double scale_lr_g = 1.0, scale_lr_d = 1.0, set_margin = 0.0;
    uint64_t inter_steps = 0, set_d_steps = 0;
    bool reset_momentum = false;
    inter->add_option("--checkpoint", ckpt_path, "checkpoint to resume from")->required();
    inter->add_option("--steps", inter_steps, "steps to run after the intervention")->required();
    inter->add_option("--scale-lr-g", scale_lr_g, "multiply G learning rate");
    inter->add_option("--scale-lr-d", scale_lr_d, "multiply D learning rate");
    inter->add_option("--freeze", freeze, "freeze one network: g or d");
    inter->add_flag("--reset-momentum", reset_momentum, "zero Adam moment vectors (t preserved)");
    inter->add_option("--set-margin", set_margin, "override hinge margin");
    inter->add_option("--set-d-steps", set_d_steps, "override D steps per G step");
    inter->add_option("--out", inter_out, "output directory");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "grid of runs over config overrides");
    std::string sweep_config, sweep_out;
    std::vector<std::string> grid_args;
    size_t parallel = 1;
    sweep->add_option("config", sweep_config, "base config file")->required();
    sweep->add_option("--grid", grid_args, "axis as key=v1,v2,... (repeatable)")->required();
    sweep->add_option("--parallel", parallel, "concurrent runs");
    sweep->add_option("--out", sweep_out, "output directory");

    // eval
    auto* eval = app.add_subcommand("eval", "truncation sweep + coverage + memorization check");
    std::string eval_ckpt, eval_out, thresholds_csv = "2,1,0.5,0.04";
    size_t eval_n = 10000;
    uint64_t eval_seed = 0;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint holding EMA params")->required();
    eval->add_option("--thresholds", thresholds_csv, "comma-separated, strictly decreasing");
    eval->add_option("--n", eval_n, "samples per threshold");
    eval->add_option("--seed", eval_seed, "evaluation seed (default: run seed)");
    eval->add_option("--out", eval_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) {
        gsl::RunConfig cfg = gsl::RunConfig::parse_file(train_config);
        if (train_seed >= 0) {
            cfg.train.seed = static_cast<uint64_t>(train_seed);
        }
        const std::string root = gsl::resolve_out_root(train_out, cfg);
        const std::string dir = timestamped(root, "train", cfg.train.seed);
        gsl::RunResult res = gsl::run_training(cfg, dir);
        if (dump_data) {
            gsl::Rng rng(cfg.train.seed, gsl::stream::data);
            auto [pts, labels] = gsl::sample_real(gsl::make_mixture(cfg.data), std::nullopt, 4096, rng);
            gsl::dump_points_csv(pts, labels, dir + "/points.csv");
        }
        std::cout << "run dir: " << res.run_dir << "\n";
        std::cout << "steps: " << res.final_step << "\n";
        if (res.collapse_step) std::cout << "collapse detected at step " << *res.collapse_step << "\n";
        return 0;
    }

    if (inter->parsed()) {
        gsl::InterventionSpec spec;
        spec.scale_lr_g = scale_lr_g;
        spec.scale_lr_d = scale_lr_d;
        if (!freeze.empty()) {
            if (freeze == "g")
                spec.freeze = gsl::FreezeTarget::g;
            else if (freeze == "d")
                spec.freeze = gsl::FreezeTarget::d;
            else
                throw gsl::ConfigError("intervene: --freeze must be g or d");
        }
        spec.reset_momentum = reset_momentum;
        if (set_d_steps > 0) spec.set_d_steps = set_d_steps;
        if (set_margin > 0) spec.set_hinge_margin = set_margin;
        const std::string root = inter_out.empty() ? gsl::resolve_out_root("", gsl::RunConfig{}) : inter_out;
        const std::string dir = root + "/intervention";
        gsl::RunResult res = gsl::run_intervention(ckpt_path, spec, inter_steps, dir);
        std::cout << "run dir: " << res.run_dir << "\n";
        std::cout << "steps: " << res.final_step << "\n";
        return 0;
    }

    if (sweep->parsed()) {
        gsl::RunConfig base = gsl::RunConfig::parse_file(sweep_config);
        std::vector<std::pair<std::string, std::vector<std::string>>> grid;
        for (const std::string& axis : grid_args) {
            const size_t eq = axis.find('=');
            if (eq == std::string::npos) throw gsl::ConfigError("sweep: --grid expects key=v1,v2,...");
            std::vector<std::string> values;
            std::stringstream ss(axis.substr(eq + 1));
            std::string item;
            while (std::getline(ss, item, ',')) values.push_back(item);
            grid.emplace_back(axis.substr(0, eq), values);
        }
        const std::string root = gsl::resolve_out_root(sweep_out, base) + "/sweep";
        auto results = gsl::run_sweep(base, grid, parallel, root);
        std::cout << "cells: " << results.size() << "\n";
        std::cout << "summary: " << root << "/summary.csv\n";
        for (const auto& r : results)
            std::printf("cell %zu [%s]: fd=%.4f modes=%zu hq=%.3f\n", r.index, r.overrides.c_str(),
                        r.fd, r.modes_hit, r.hq_fraction);
        return 0;
    }

    if (eval->parsed()) {
        const std::string out = eval_out.empty() ? gsl::resolve_out_root("", gsl::RunConfig{}) + "/eval" : eval_out;
        gsl::EvalOutputs res =
            gsl::run_eval(eval_ckpt, parse_thresholds(thresholds_csv), eval_n, out, eval_seed);
        std::printf("untruncated: fd=%.6f modes_hit=%zu hq_fraction=%.4f\n", res.fd_untruncated,
                    res.coverage.modes_hit, res.coverage.high_quality_fraction);
        for (const auto& p : res.curve)
            std::printf("threshold %.3g: fd=%.6f spread=%.6f hq=%.4f\n", p.threshold, p.fd, p.spread,
                        p.hq_fraction);
        std::printf("memorization: train_acc=%.4f heldout_acc=%.4f\n", res.train_acc, res.heldout_acc);
        std::cout << "wrote " << out << "/eval.csv and memorization.csv\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const gsl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const gsl::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const gsl::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
