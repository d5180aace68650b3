#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gsl/latent.hpp"
#include "gsl/rng.hpp"
#include "gsl/spectral.hpp"
#include "gsl/tensor.hpp"

namespace gsl {

enum class RunMode { train, eval };

struct GeneratorConfig {
    size_t z_dim = 32;
    size_t chunk_size = 8;
    std::vector<size_t> hidden_widths = {48, 48, 48};
    size_t out_dim = 2;
    size_t num_classes = 8;
    size_t embed_dim = 8;
    bool use_skip_z = true;
    bool use_shared_embedding = true;
    double bn_momentum = 0.1;
    double bn_eps = 1e-4;

    void validate() const;
    size_t cond_dim() const { return (use_skip_z ? chunk_size : 0) + embed_dim; }
};

// Class-conditional BatchNorm: gains are 1-centered, biases 0-centered, both
// linearly projected from the conditioning vector. Standing statistics, once
// computed, take precedence over running ones in eval mode.
struct ConditionalBatchNorm {
    Tensor gain_proj;  // cond_dim x width
    Tensor bias_proj;  // cond_dim x width
    Tensor running_mean, running_var;    // {width}
    Tensor standing_mean, standing_var;  // empty until computed
    bool has_running = false;
    double eps = 1e-4;
    double momentum = 0.1;

    bool has_standing() const { return !standing_mean.values.empty(); }
};

// Accumulates per-pass batch moments during standing-statistics collection.
struct StandingAccum {
    std::vector<Tensor> sum_mean;    // one per CBN layer
    std::vector<Tensor> sum_sq;      // per-pass E[x^2], summed
    size_t passes = 0;
};

Var cbn_forward(Tape& t, Var h, Var cond, ConditionalBatchNorm& layer, RunMode mode,
                bool update_stats, Tensor* accum_mean = nullptr, Tensor* accum_sq = nullptr,
                bool params_require_grad = true);

// split_z: ordered equal-width chunks whose concatenation reconstructs z.
std::vector<Var> split_z(Tape& t, Var z, size_t chunk_size);

// Row lookup in an embedding table; gradients flow only to the selected rows.
Var embed_class(Tape& t, Var table, const std::vector<uint32_t>& ys);

struct Generator {
    GeneratorConfig cfg;
    Tensor embed;  // shared table (empty when per-layer embeddings are used)
    struct Layer {
        Tensor weight;       // empty for the first layer (fed by w_in)
        Tensor embed_local;  // per-layer table when the shared one is off
        ConditionalBatchNorm cbn;
    };
    Tensor w_in;  // first chunk (or full z) -> hidden_widths[0]
    std::vector<Layer> layers;
    Tensor w_out, b_out;

    static Generator init(const GeneratorConfig& cfg, Rng& rng);

    // update_stats=false freezes running statistics (interventions); accum
    // collects standing-statistics moments instead of touching running ones.
    // params_require_grad=false makes the pass gradient-free (fake batches
    // for discriminator updates).
    Var forward(Tape& t, Var z, const std::vector<uint32_t>& ys, RunMode mode,
                bool update_stats = true, StandingAccum* accum = nullptr,
                bool params_require_grad = true);

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, Tensor*>> named_stats();  // running/standing buffers
    std::vector<std::pair<std::string, Tensor*>> weight_matrices();  // for telemetry / ortho
    void invalidate_standing();
};

// Aggregate standing statistics over `passes` fresh forward passes
// (arithmetic mean of per-pass means; variance from pooled second moments).
void compute_standing_stats(Generator& g, size_t passes, size_t batch, const LatentSpec& latent,
                            const std::function<std::vector<uint32_t>(size_t, Rng&)>& class_sampler,
                            Rng& rng);

struct DiscriminatorConfig {
    std::vector<size_t> hidden_widths = {64, 64};
    size_t in_dim = 2;
    size_t num_classes = 8;
    size_t embed_dim = 64;  // must equal hidden_widths.back() (projection head)
    double dropout_keep_prob = 1.0;
    bool use_spectral_norm = true;

    void validate() const;
};

// Projection discriminator: score = linear(h) + <embed(y), h>. Spectral
// normalization (when enabled) divides every weight matrix, including the
// class embedding, by its tracked top singular value.
struct Discriminator {
    DiscriminatorConfig cfg;
    struct Layer {
        Tensor weight, bias;
        SpectralState sn;
    };
    std::vector<Layer> layers;
    Tensor head_w, head_b;
    Tensor embed;
    SpectralState head_sn, embed_sn;

    static Discriminator init(const DiscriminatorConfig& cfg, Rng& rng);

    // update_sn runs a tracked power-iteration pass on every normalized
    // weight before use (training); eval paths pass false and reuse the
    // stored estimates.
    Var forward(Tape& t, Var x, const std::vector<uint32_t>& ys, RunMode mode, Rng& dropout_rng,
                bool update_sn, bool params_require_grad = true);

    // Raw scores for a batch without touching any state (eval utility).
    std::vector<double> score(const Tensor& x, const std::vector<uint32_t>& ys);

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, Tensor*>> weight_matrices();
    std::vector<std::pair<std::string, SpectralState*>> sn_states();
};

}  // namespace gsl
