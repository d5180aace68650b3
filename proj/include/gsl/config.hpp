#pragma once

#include <string>

#include "gsl/data.hpp"
#include "gsl/latent.hpp"
#include "gsl/network.hpp"
#include "gsl/training.hpp"

namespace gsl {

struct TelemetryOptions {
    size_t flush_every = 200;
    size_t collapse_window = 200;
    double collapse_factor = 3.0;
    bool stop_on_collapse = false;
};

struct CheckpointOptions {
    uint64_t every = 5000;
};

// Flat key=value run description. Unknown keys are rejected; missing keys
// take the defaults below; a resolved snapshot of every effective value is
// written into each run directory. Later occurrences of a key override
// earlier ones, which is how sweep overrides are applied.
struct RunConfig {
    TrainConfig train;
    GeneratorConfig gen;
    DiscriminatorConfig disc;
    LatentSpec latent;
    DatasetSpec data;
    TelemetryOptions telemetry;
    CheckpointOptions checkpoint;
    // variance-annealing endpoints (latent.kind = variance_annealed); 0 steps
    // means "over train.steps"
    double anneal_from = 2.0, anneal_to = 1.0;
    uint64_t anneal_steps = 0;
    std::string out_dir;  // optional default output root

    static RunConfig parse(const std::string& text);
    static RunConfig parse_file(const std::string& path);
    std::string serialize() const;  // resolved snapshot, parse(serialize(x)) == x

    // Applies derived fields (z_dim from latent.dim, class counts from the
    // dataset, the anneal schedule) and validates everything.
    void finalize();
};

bool is_known_config_key(const std::string& key);

TrainSetup make_setup(const RunConfig& cfg);
// Function-pointer form used when rebuilding a state from a checkpoint.
TrainSetup parse_setup_text(const std::string& text);

}  // namespace gsl
