#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gsl/config.hpp"
#include "gsl/eval.hpp"
#include "gsl/training.hpp"

namespace gsl {

struct RunResult {
    std::string run_dir;
    uint64_t final_step = 0;
    std::optional<uint64_t> collapse_step;
    StepReport last_report;
};

// --out flag > config out.dir > $GSL_OUT_DIR > ./runs
std::string resolve_out_root(const std::string& cli_out, const RunConfig& cfg);

// Executes the configured number of steps (or until the collapse detector
// fires when enabled), writing config.snapshot, telemetry CSVs, periodic
// checkpoints and a final checkpoint whose standing statistics are computed
// from the EMA weights.
RunResult run_training(const RunConfig& cfg, const std::string& run_dir,
                       const std::string& provenance = "");

TrainState load_checkpoint(const std::string& path);

// Loads a checkpoint, applies the intervention, resumes for `steps` steps in
// a new run directory; provenance (parent checkpoint, step, spec) is recorded
// in the new config.snapshot.
RunResult run_intervention(const std::string& checkpoint_path, const InterventionSpec& spec,
                           uint64_t steps, const std::string& run_dir);

struct EvalOutputs {
    TruncationCurve curve;
    Coverage coverage;       // untruncated samples
    double fd_untruncated = 0;
    double train_acc = 0, heldout_acc = 0;
};

// Rebuilds the generator from EMA weights, computes standing statistics
// (100 passes), then runs the truncation sweep, coverage, reference FD and
// the memorization check; writes eval.csv and memorization.csv.
EvalOutputs run_eval(const std::string& checkpoint_path, const std::vector<double>& thresholds,
                     size_t n, const std::string& out_dir, uint64_t seed = 0);

// Same, on an in-memory state (used right after training).
EvalOutputs evaluate_state(TrainState& st, const std::vector<double>& thresholds, size_t n,
                           uint64_t seed);

struct SweepCellResult {
    size_t index = 0;
    std::string overrides;
    uint64_t seed = 0;
    std::string run_dir;
    std::optional<uint64_t> collapse_step;
    double fd = 0;
    size_t modes_hit = 0;
    double hq_fraction = 0;
    double d_loss_final = 0, g_loss_final = 0;
};

// Cartesian product of the override axes; cell i runs with seed base+i in
// its own subdirectory, then a fixed-size evaluation. Writes summary.csv.
std::vector<SweepCellResult> run_sweep(const RunConfig& base,
                                       const std::vector<std::pair<std::string, std::vector<std::string>>>& grid,
                                       size_t parallel, const std::string& out_root);

}  // namespace gsl
