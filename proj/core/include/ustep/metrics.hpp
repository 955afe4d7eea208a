#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ustep/frame_sequence.hpp"

namespace ustep::metrics {

/// All metrics clamp both operands to [0, 1] first: predictions are scored
/// as images, not as raw activations.
double mse(std::span<const double> pred, std::span<const double> target);
double mae(std::span<const double> pred, std::span<const double> target);

/// 10 * log10(range^2 / mse), capped at 100 dB once mse drops below 1e-10.
double psnr_from_mse(double mse_value, double data_range = 1.0);
double psnr(std::span<const double> pred, std::span<const double> target,
            double data_range = 1.0);

/// Windowed structural similarity: 11x11 Gaussian window with sigma 1.5,
/// C1 = (0.01 L)^2, C2 = (0.03 L)^2, L = 1, averaged over fully interior
/// window positions and over channels. Frames smaller than the window are
/// rejected.
double ssim(std::span<const double> pred, std::span<const double> target,
            const FrameGeometry& geometry);

struct FrameScore {
    double mse = 0.0;
    double mae = 0.0;
    double ssim = 0.0;
    double psnr = 0.0;
};

struct ReportMetadata {
    std::string model;
    std::string dataset_hash;
    int64_t delta_t = 0;
    int64_t delta_T = 0;
    int64_t samples = 0;
    int64_t pixels_per_frame = 0;
};

/// Frame-wise scores averaged over samples, plus their mean as the
/// aggregate row.
struct MetricsReport {
    std::vector<FrameScore> per_frame;
    FrameScore aggregate;
    ReportMetadata metadata;

    /// Columns exactly: frame_index,mse,mae,ssim,psnr with a final
    /// "aggregate" row.
    std::string to_csv() const;
    std::string to_json() const;
};

/// Per-frame metrics for matched prediction/target sequences. All pairs
/// must share one geometry and one length.
MetricsReport frame_report(const std::vector<FrameSequence>& predictions,
                           const std::vector<FrameSequence>& targets,
                           ReportMetadata metadata);

} // namespace ustep::metrics
