#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gsl/config.hpp"
#include "gsl/runner.hpp"

using namespace gsl;

TEST_SUITE_BEGIN("config");

TEST_CASE("defaults resolve and round-trip through serialize/parse") {
    RunConfig cfg = RunConfig::parse("");
    CHECK(cfg.train.lr_g == 5e-5);
    CHECK(cfg.train.lr_d == 2e-4);
    CHECK(cfg.train.d_steps_per_g == 2);
    CHECK(cfg.train.beta1 == 0.0);
    CHECK(cfg.train.beta2 == 0.999);
    CHECK(cfg.train.ema_decay == 0.9999);
    CHECK(cfg.train.hinge_margin == 1.0);
    CHECK(cfg.train.ortho_beta == 1e-4);
    CHECK(cfg.gen.num_classes == 8);  // derived from the ring dataset
    CHECK(cfg.gen.z_dim == 32);
    CHECK(cfg.data.mode_std == 0.02);

    const std::string text = cfg.serialize();
    RunConfig again = RunConfig::parse(text);
    CHECK(again.serialize() == text);
}

TEST_CASE("unknown key is rejected and named") {
    CHECK_THROWS_WITH_AS(RunConfig::parse("foo=1\n"), doctest::Contains("foo"), ConfigError);
}

TEST_CASE("later keys override earlier ones (sweep semantics)") {
    RunConfig cfg = RunConfig::parse("train.batch=64\ntrain.batch=32\n");
    CHECK(cfg.train.batch == 32);
}

TEST_CASE("derived fields follow the dataset and latent") {
    RunConfig cfg = RunConfig::parse(
        "data.modes=16\nlatent.dim=48\ng.chunk_size=12\ng.hidden=20,20,20\n"
        "d.hidden=24\nd.embed_dim=24\n");
    CHECK(cfg.gen.num_classes == 16);
    CHECK(cfg.disc.num_classes == 16);
    CHECK(cfg.gen.z_dim == 48);
    CHECK(cfg.gen.out_dim == 2);
}

TEST_CASE("invalid values carry the offending key") {
    CHECK_THROWS_WITH_AS(RunConfig::parse("train.lr_g=banana\n"), doctest::Contains("train.lr_g"),
                         ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("train.loss=wasserstein\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("latent.kind=cauchy\n"), ConfigError);
}

TEST_CASE("annealed latent picks up schedule endpoints") {
    RunConfig cfg = RunConfig::parse(
        "latent.kind=variance_annealed\nlatent.anneal_from=2\nlatent.anneal_to=1\n"
        "train.steps=1000\n");
    REQUIRE(cfg.latent.anneal.knots.size() == 2);
    CHECK(anneal_sigma(cfg.latent.anneal, 0) == doctest::Approx(2.0));
    CHECK(anneal_sigma(cfg.latent.anneal, 500) == doctest::Approx(1.5));
    CHECK(anneal_sigma(cfg.latent.anneal, 2000) == doctest::Approx(1.0));
}

TEST_CASE("config snapshot written into the run dir reproduces the run") {
    namespace fs = std::filesystem;
    const std::string dir = "test_tmp/cfg_run";
    fs::remove_all(dir);
    RunConfig cfg = RunConfig::parse(
        "latent.dim=16\ng.hidden=12\ng.chunk_size=8\ng.embed_dim=4\nd.hidden=16\nd.embed_dim=16\n"
        "train.batch=16\ntrain.steps=6\ncheckpoint.every=0\ntelemetry.flush_every=2\n");
    RunResult res = run_training(cfg, dir);
    CHECK(res.final_step == 6);
    CHECK(fs::exists(dir + "/config.snapshot"));
    CHECK(fs::exists(dir + "/spectra.csv"));
    CHECK(fs::exists(dir + "/losses.csv"));
    CHECK(fs::exists(dir + "/checkpoints/final.gsl"));

    RunConfig reparsed = RunConfig::parse_file(dir + "/config.snapshot");
    CHECK(reparsed.serialize() == cfg.serialize());
}

TEST_CASE("sweep: cartesian product, isolated cells, summary rows") {
    namespace fs = std::filesystem;
    const std::string root = "test_tmp/sweep";
    fs::remove_all(root);
    RunConfig base = RunConfig::parse(
        "latent.dim=8\ng.hidden=8\ng.chunk_size=4\ng.embed_dim=4\nd.hidden=8\nd.embed_dim=8\n"
        "train.batch=8\ntrain.steps=4\ncheckpoint.every=0\n");
    std::vector<std::pair<std::string, std::vector<std::string>>> grid = {
        {"train.margin", {"1", "2"}},
        {"train.lr_d", {"1e-4", "2e-4"}},
    };
    auto results = run_sweep(base, grid, 2, root);
    CHECK(results.size() == 4);
    for (size_t i = 0; i < results.size(); ++i) {
        CHECK(results[i].seed == base.train.seed + i);
        CHECK(fs::exists(results[i].run_dir + "/config.snapshot"));
        CHECK(fs::exists(results[i].run_dir + "/losses.csv"));
    }
    std::ifstream sum(root + "/summary.csv");
    std::string line;
    size_t rows = 0;
    std::getline(sum, line);
    CHECK(line == "cell,overrides,seed,collapse_step,fd,modes_hit,hq_fraction,d_loss_final,g_loss_final");
    while (std::getline(sum, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 4);

    std::vector<std::pair<std::string, std::vector<std::string>>> bad = {{"nope", {"1"}}};
    CHECK_THROWS_AS(run_sweep(base, bad, 1, root), ConfigError);
}

TEST_CASE("dataset dump writes parseable points.csv") {
    namespace fs = std::filesystem;
    fs::create_directories("test_tmp");
    DatasetSpec spec;
    MixtureSpec m = make_mixture(spec);
    Rng rng(3, stream::data);
    auto [pts, labels] = sample_real(m, std::nullopt, 50, rng);
    dump_points_csv(pts, labels, "test_tmp/points.csv");
    std::ifstream in("test_tmp/points.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "x0,x1,label");
    size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 50);
}

TEST_CASE("out root resolution order") {
    RunConfig cfg;
    cfg.out_dir = "from_config";
    CHECK(resolve_out_root("cli_wins", cfg) == "cli_wins");
    CHECK(resolve_out_root("", cfg) == "from_config");
    cfg.out_dir.clear();
    ::setenv("GSL_OUT_DIR", "from_env", 1);
    CHECK(resolve_out_root("", cfg) == "from_env");
    ::unsetenv("GSL_OUT_DIR");
    CHECK(resolve_out_root("", cfg) == "runs");
}

TEST_SUITE_END();
