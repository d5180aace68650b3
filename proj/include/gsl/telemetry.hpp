#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gsl {

// One per-layer per-step record of the monitored spectral quantities.
struct SpectralSnapshot {
    uint64_t step = 0;
    std::string layer;
    double sigma0 = 0, sigma1 = 0, sigma2 = 0;
    double ratio01 = 0;  // sigma0/sigma1, 0 when sigma1 == 0
    double fro_norm = 0;
};

struct StepReport {
    uint64_t step = 0;
    double d_loss_real = 0, d_loss_fake = 0, g_loss = 0;
    double grad_norm_variance = 0;
    bool skipped = false;
};

// In-memory series plus incremental CSV writers. Appending and flushing are
// decoupled so the collapse detector can scan the live series.
class TelemetryLog {
  public:
    void record(uint64_t step, std::vector<SpectralSnapshot> snapshots, StepReport report);

    const std::vector<SpectralSnapshot>& spectra() const { return spectra_; }
    const std::vector<StepReport>& reports() const { return reports_; }

    // Opens <dir>/spectra.csv and <dir>/losses.csv and writes everything
    // recorded so far; subsequent flush() calls append the delta.
    void open_sinks(const std::string& run_dir);
    void flush();
    void close();

    size_t flush_every = 200;

  private:
    std::vector<SpectralSnapshot> spectra_;
    std::vector<StepReport> reports_;
    std::string dir_;
    size_t spectra_written_ = 0;
    size_t reports_written_ = 0;
    bool sinks_open_ = false;
    uint64_t last_flush_step_ = 0;
};

// Writes complete spectra.csv / losses.csv files for a finished series.
void export_csv(const std::vector<SpectralSnapshot>& spectra,
                const std::vector<StepReport>& reports, const std::string& run_dir);

// First step where any layer's sigma0 exceeds factor x its trailing-window
// median, or the total D loss jumps by more than factor x the trailing median
// absolute deviation. A heuristic: collapses show no consistent absolute
// threshold, so window and factor are configurable.
std::optional<uint64_t> detect_collapse(std::span<const SpectralSnapshot> spectra,
                                        std::span<const StepReport> reports, size_t window = 200,
                                        double factor = 3.0);

}  // namespace gsl
