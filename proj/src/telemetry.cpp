#include "gsl/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "gsl/errors.hpp"

namespace gsl {

namespace {

constexpr char kSpectraHeader[] = "step,layer,sigma0,sigma1,sigma2,ratio01,fro_norm\n";
constexpr char kLossesHeader[] = "step,d_loss_real,d_loss_fake,g_loss,grad_norm_variance,skipped\n";

void append_spectra(std::ofstream& out, std::span<const SpectralSnapshot> rows) {
    char buf[256];
    for (const auto& s : rows) {
        std::snprintf(buf, sizeof(buf), "%llu,%s,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<unsigned long long>(s.step), s.layer.c_str(), s.sigma0, s.sigma1,
                      s.sigma2, s.ratio01, s.fro_norm);
        out << buf;
    }
}

void append_losses(std::ofstream& out, std::span<const StepReport> rows) {
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g,%d\n",
                      static_cast<unsigned long long>(r.step), r.d_loss_real, r.d_loss_fake,
                      r.g_loss, r.grad_norm_variance, r.skipped ? 1 : 0);
        out << buf;
    }
}

double median_of(std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void TelemetryLog::record(uint64_t step, std::vector<SpectralSnapshot> snapshots, StepReport report) {
    for (auto& s : snapshots) {
        s.step = step;
        spectra_.push_back(std::move(s));
    }
    report.step = step;
    reports_.push_back(report);
    if (sinks_open_ && flush_every > 0 && step >= last_flush_step_ + flush_every) flush();
}

void TelemetryLog::open_sinks(const std::string& run_dir) {
    dir_ = run_dir;
    std::ofstream sp(dir_ + "/spectra.csv", std::ios::binary);
    std::ofstream lo(dir_ + "/losses.csv", std::ios::binary);
    if (!sp || !lo) throw IoError("telemetry: cannot open sinks in " + run_dir);
    sp << kSpectraHeader;
    lo << kLossesHeader;
    spectra_written_ = 0;
    reports_written_ = 0;
    sinks_open_ = true;
    flush();
}

void TelemetryLog::flush() {
    if (!sinks_open_) return;
    std::ofstream sp(dir_ + "/spectra.csv", std::ios::binary | std::ios::app);
    std::ofstream lo(dir_ + "/losses.csv", std::ios::binary | std::ios::app);
    if (!sp || !lo) throw IoError("telemetry: sink write failure in " + dir_);
    append_spectra(sp, std::span(spectra_).subspan(spectra_written_));
    append_losses(lo, std::span(reports_).subspan(reports_written_));
    spectra_written_ = spectra_.size();
    reports_written_ = reports_.size();
    if (!reports_.empty()) last_flush_step_ = reports_.back().step;
    if (!sp || !lo) throw IoError("telemetry: sink write failure in " + dir_);
}

void TelemetryLog::close() {
    flush();
    sinks_open_ = false;
}

void export_csv(const std::vector<SpectralSnapshot>& spectra,
                const std::vector<StepReport>& reports, const std::string& run_dir) {
    std::ofstream sp(run_dir + "/spectra.csv", std::ios::binary);
    std::ofstream lo(run_dir + "/losses.csv", std::ios::binary);
    if (!sp || !lo) throw IoError("telemetry: cannot write CSVs in " + run_dir);
    sp << kSpectraHeader;
    lo << kLossesHeader;
    append_spectra(sp, spectra);
    append_losses(lo, reports);
    if (!sp || !lo) throw IoError("telemetry: CSV write failure in " + run_dir);
}

std::optional<uint64_t> detect_collapse(std::span<const SpectralSnapshot> spectra,
                                        std::span<const StepReport> reports, size_t window,
                                        double factor) {
    if (window < 10) throw ValueError("detect_collapse: window must be >= 10");
    if (reports.size() < window) throw ValueError("detect_collapse: series shorter than window");

    // Per-layer sigma0 series in step order.
    std::map<std::string, std::vector<std::pair<uint64_t, double>>> by_layer;
    for (const auto& s : spectra) by_layer[s.layer].push_back({s.step, s.sigma0});

    std::optional<uint64_t> found;
    auto consider = [&](uint64_t step) {
        if (!found || step < *found) found = step;
    };

    std::vector<double> win;
    for (auto& [layer, series] : by_layer) {
        (void)layer;
        for (size_t i = window; i < series.size(); ++i) {
            win.clear();
            for (size_t j = i - window; j < i; ++j) win.push_back(series[j].second);
            const double med = median_of(win);
            if (series[i].second > factor * med) {
                consider(series[i].first);
                break;
            }
        }
    }

    std::vector<double> dl;
    dl.reserve(reports.size());
    for (const auto& r : reports) dl.push_back(r.d_loss_real + r.d_loss_fake);
    std::vector<double> dev;
    for (size_t i = window; i < dl.size(); ++i) {
        win.assign(dl.begin() + static_cast<long>(i - window), dl.begin() + static_cast<long>(i));
        const double med = median_of(win);
        dev.clear();
        for (size_t j = i - window; j < i; ++j) dev.push_back(std::abs(dl[j] - med));
        const double mad = median_of(dev);
        if (std::abs(dl[i] - med) > factor * mad && std::abs(dl[i] - med) > 0) {
            consider(reports[i].step);
            break;
        }
    }
    return found;
}

}  // namespace gsl
