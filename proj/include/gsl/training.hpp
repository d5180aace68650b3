#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gsl/data.hpp"
#include "gsl/latent.hpp"
#include "gsl/network.hpp"
#include "gsl/spectral.hpp"
#include "gsl/telemetry.hpp"
#include "gsl/tensor.hpp"

namespace gsl {

enum class LossKind { hinge, vanilla };

struct TrainConfig {
    double lr_g = 5e-5;
    double lr_d = 2e-4;
    size_t d_steps_per_g = 2;
    size_t batch = 256;
    double beta1 = 0.0;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double ema_decay = 0.9999;
    LossKind loss_kind = LossKind::hinge;
    double hinge_margin = 1.0;
    double r1_gamma = 0.0;  // 0 = off; the suggested strength when on is 10
    double ortho_beta = 1e-4;
    OrthoVariant ortho_variant = OrthoVariant::offdiag;
    double sigma_reg_strength = 0.0;  // 0 = off
    SigmaRegMode sigma_reg_mode = SigmaRegMode::fixed;
    double sigma_reg_target = 1.0;  // sigma_reg, or the ratio r
    double sigma_clamp = 0.0;       // 0 = off
    uint64_t total_steps = 20000;
    uint64_t seed = 1;

    void validate() const;
};

// ---- losses ----------------------------------------------------------------

struct LossParts {
    Var d_real;  // D's loss on real examples
    Var d_fake;  // D's loss on generated examples
    Var g;       // generator loss
};

// loss_d = E max(0, m - real) + E max(0, m + fake); loss_g = -E fake.
LossParts hinge_losses(Tape& t, Var real_scores, Var fake_scores, double margin);

// Non-saturating logistic losses, evaluated in logit space:
// loss_d = E softplus(-real) + E softplus(fake); loss_g = E softplus(-fake).
LossParts vanilla_losses(Tape& t, Var real_logits, Var fake_logits);

// Value-only conveniences (scratch tape): return (loss_d, loss_g).
std::pair<double, double> hinge_losses(const std::vector<double>& real,
                                       const std::vector<double>& fake, double margin);
std::pair<double, double> vanilla_losses(const std::vector<double>& real,
                                         const std::vector<double>& fake);

// gamma/2 * E_batch || d(score_i)/d(x_i) ||^2, differentiable w.r.t. anything
// upstream of the scores. x must be a requires-grad leaf.
Var r1_penalty(Tape& t, Var scores, Var x, double gamma);

// Standalone form: evaluates the penalty on a real batch and accumulates its
// parameter gradients into the discriminator.
double r1_penalty(Discriminator& d, const Tensor& real_batch, const std::vector<uint32_t>& ys,
                  double gamma);

// ---- optimizers ------------------------------------------------------------

struct AdamState {
    Tensor m, v;
    uint64_t t = 0;
};

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.0;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction, reading p.grad. Returns false (and
// leaves p untouched) when the gradient contains non-finite values.
bool adam_step(Tensor& p, AdamState& state, const AdamHyper& hp);

// Zero-initialized accumulator updated as shadow <- decay*shadow +
// (1-decay)*params; reading divides by (1 - decay^steps) so the sampled
// weights are a proper weighted average of the visited parameters even for
// runs much shorter than 1/(1-decay).
struct EmaState {
    std::vector<Tensor> shadow;  // mirrors the generator's named_params order
    double decay = 0.9999;
    uint64_t steps = 0;
};

void ema_init(EmaState& ema, const std::vector<std::pair<std::string, Tensor*>>& params,
              double decay);
void ema_update(EmaState& ema, const std::vector<std::pair<std::string, Tensor*>>& params);
// Bias-corrected parameter values; falls back to `fallback` before any update.
std::vector<Tensor> ema_params(const EmaState& ema,
                               const std::vector<std::pair<std::string, Tensor*>>& fallback);

// ---- run state -------------------------------------------------------------

enum class FreezeTarget { none, g, d };

struct InterventionSpec {
    double scale_lr_g = 1.0;
    double scale_lr_d = 1.0;
    FreezeTarget freeze = FreezeTarget::none;
    bool reset_momentum = false;
    std::optional<uint64_t> set_d_steps;
    std::optional<double> set_hinge_margin;
};

struct TrainSetup {
    TrainConfig train;
    GeneratorConfig gen;
    DiscriminatorConfig disc;
    LatentSpec latent;
    DatasetSpec data;
    std::string config_text;  // resolved snapshot, embedded in checkpoints
};

struct TrainState {
    TrainSetup setup;
    MixtureSpec mixture;
    Generator g;
    Discriminator d;
    std::map<std::string, AdamState> adam_g, adam_d;
    EmaState ema;
    // Telemetry's top-3 tracking states, one per monitored weight; updated
    // every step regardless of whether CSVs are written so that replays are
    // exact. Separate from the SN states inside the discriminator.
    std::map<std::string, SpectralState> telem_states;
    // Present only when sigma regularization / clamping is enabled.
    std::map<std::string, SpectralState> sigma_states;
    Rng rng_data{0, stream::data};
    Rng rng_latent{0, stream::latent};
    Rng rng_classes{0, stream::classes};
    Rng rng_dropout{0, stream::dropout};
    uint64_t step = 0;
    FreezeTarget freeze = FreezeTarget::none;

    static TrainState init(TrainSetup setup);
};

// Runs d_steps_per_g discriminator updates then one generator update
// (honoring freezes), refreshes EMA and the spectral telemetry states, and
// appends one StepReport plus per-weight snapshots to the log when given.
StepReport train_step(TrainState& st, TelemetryLog* log);

std::vector<SpectralSnapshot> spectral_snapshots(TrainState& st);

// Mutates lrs / d_steps / margin, optionally zeroes Adam moments (keeping t),
// and installs the freeze mask. Freezing both networks is rejected upstream
// (the spec carries a single freeze target).
void apply_intervention(TrainState& st, const InterventionSpec& spec);

// ---- checkpointing ---------------------------------------------------------
// File format: magic "GSL1", version u16 (little-endian), then length-prefixed
// records, each
//   u64 record_length (bytes that follow, including the trailing crc)
//   u32 name_length, name bytes
//   u8 dtype (0 = f64, 1 = u64, 2 = bytes)
//   u8 rank, u64 dims[rank]
//   payload (little-endian)
//   u32 crc32 (IEEE) over everything from name_length to payload end
// Truncation or bit corruption surfaces as an IoError.

struct CheckpointRecord {
    uint8_t dtype = 0;
    std::vector<uint64_t> dims;
    std::vector<double> f64;
    std::vector<uint64_t> u64;
    std::string bytes;
};

using CheckpointRecords = std::map<std::string, CheckpointRecord>;

void save_checkpoint(const TrainState& st, const std::string& path);
CheckpointRecords read_checkpoint_records(const std::string& path);
// Rebuilds a state from the records' embedded config via the provided parser
// (the config layer supplies it; keeps this module below the config parser).
TrainState load_checkpoint_with(const CheckpointRecords& records,
                                TrainSetup (*parse_setup)(const std::string&));

uint64_t fnv1a64(const std::string& text);

}  // namespace gsl
