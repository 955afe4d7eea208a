#include "ustep/metrics.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ustep/errors.hpp"

namespace ustep::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;
constexpr double kRange = 1.0;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void require_same_size(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("metrics: frame sizes differ");
    }
}

const std::array<double, kWindow>& gaussian_window() {
    static const std::array<double, kWindow> window = [] {
        std::array<double, kWindow> w{};
        const int half = kWindow / 2;
        double total = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            const double d = static_cast<double>(i - half);
            w[i] = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
            total += w[i];
        }
        for (double& v : w) {
            v /= total;
        }
        return w;
    }();
    return window;
}

// Horizontal then vertical pass over valid positions only (no padding).
// `src` is H x W; `dst` receives (H - 10) x (W - 10) filtered values.
void separable_filter(const std::vector<double>& src, int64_t h, int64_t w,
                      std::vector<double>& tmp, std::vector<double>& dst) {
    const auto& win = gaussian_window();
    const int64_t out_w = w - kWindow + 1;
    const int64_t out_h = h - kWindow + 1;
    tmp.assign(static_cast<size_t>(h * out_w), 0.0);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int64_t k = 0; k < kWindow; ++k) {
                acc += win[static_cast<size_t>(k)] * src[static_cast<size_t>(y * w + x + k)];
            }
            tmp[static_cast<size_t>(y * out_w + x)] = acc;
        }
    }
    dst.assign(static_cast<size_t>(out_h * out_w), 0.0);
    for (int64_t y = 0; y < out_h; ++y) {
        for (int64_t x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int64_t k = 0; k < kWindow; ++k) {
                acc += win[static_cast<size_t>(k)] *
                       tmp[static_cast<size_t>((y + k) * out_w + x)];
            }
            dst[static_cast<size_t>(y * out_w + x)] = acc;
        }
    }
}

std::string format_double(double v) {
    char buffer[64];
    auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), v);
    (void)ec;
    return std::string(buffer, ptr);
}

} // namespace

double mse(std::span<const double> pred, std::span<const double> target) {
    require_same_size(pred, target);
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = clamp01(pred[i]) - clamp01(target[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

double mae(std::span<const double> pred, std::span<const double> target) {
    require_same_size(pred, target);
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        acc += std::abs(clamp01(pred[i]) - clamp01(target[i]));
    }
    return acc / static_cast<double>(pred.size());
}

double psnr_from_mse(double mse_value, double data_range) {
    if (mse_value < 1e-10) {
        return 100.0;
    }
    return 10.0 * std::log10(data_range * data_range / mse_value);
}

double psnr(std::span<const double> pred, std::span<const double> target, double data_range) {
    return psnr_from_mse(mse(pred, target), data_range);
}

double ssim(std::span<const double> pred, std::span<const double> target,
            const FrameGeometry& geometry) {
    require_same_size(pred, target);
    if (static_cast<int64_t>(pred.size()) != geometry.frame_elems()) {
        throw ShapeError("ssim: frame size does not match geometry");
    }
    if (geometry.height < kWindow || geometry.width < kWindow) {
        throw ConfigError("ssim: frame is smaller than the 11x11 window");
    }

    const double c1 = (kK1 * kRange) * (kK1 * kRange);
    const double c2 = (kK2 * kRange) * (kK2 * kRange);
    const int64_t plane = geometry.height * geometry.width;

    std::vector<double> x(static_cast<size_t>(plane));
    std::vector<double> y(static_cast<size_t>(plane));
    std::vector<double> xx(static_cast<size_t>(plane));
    std::vector<double> yy(static_cast<size_t>(plane));
    std::vector<double> xy(static_cast<size_t>(plane));
    std::vector<double> tmp, mu_x, mu_y, m_xx, m_yy, m_xy;

    double channel_sum = 0.0;
    for (int64_t c = 0; c < geometry.channels; ++c) {
        const double* p = pred.data() + c * plane;
        const double* t = target.data() + c * plane;
        for (int64_t i = 0; i < plane; ++i) {
            const double a = clamp01(p[i]);
            const double b = clamp01(t[i]);
            x[static_cast<size_t>(i)] = a;
            y[static_cast<size_t>(i)] = b;
            xx[static_cast<size_t>(i)] = a * a;
            yy[static_cast<size_t>(i)] = b * b;
            xy[static_cast<size_t>(i)] = a * b;
        }
        separable_filter(x, geometry.height, geometry.width, tmp, mu_x);
        separable_filter(y, geometry.height, geometry.width, tmp, mu_y);
        separable_filter(xx, geometry.height, geometry.width, tmp, m_xx);
        separable_filter(yy, geometry.height, geometry.width, tmp, m_yy);
        separable_filter(xy, geometry.height, geometry.width, tmp, m_xy);

        double acc = 0.0;
        for (size_t i = 0; i < mu_x.size(); ++i) {
            const double mx = mu_x[i];
            const double my = mu_y[i];
            const double var_x = m_xx[i] - mx * mx;
            const double var_y = m_yy[i] - my * my;
            const double cov = m_xy[i] - mx * my;
            const double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            const double den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
            acc += num / den;
        }
        channel_sum += acc / static_cast<double>(mu_x.size());
    }
    return channel_sum / static_cast<double>(geometry.channels);
}

std::string MetricsReport::to_csv() const {
    std::string out = "frame_index,mse,mae,ssim,psnr\n";
    for (size_t i = 0; i < per_frame.size(); ++i) {
        const auto& row = per_frame[i];
        out += std::to_string(i) + "," + format_double(row.mse) + "," + format_double(row.mae) +
               "," + format_double(row.ssim) + "," + format_double(row.psnr) + "\n";
    }
    out += "aggregate," + format_double(aggregate.mse) + "," + format_double(aggregate.mae) +
           "," + format_double(aggregate.ssim) + "," + format_double(aggregate.psnr) + "\n";
    return out;
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["metadata"] = {{"model", metadata.model},
                     {"dataset_hash", metadata.dataset_hash},
                     {"delta_t", metadata.delta_t},
                     {"delta_T", metadata.delta_T},
                     {"samples", metadata.samples},
                     {"pixels_per_frame", metadata.pixels_per_frame}};
    nlohmann::ordered_json frames = nlohmann::ordered_json::array();
    for (size_t i = 0; i < per_frame.size(); ++i) {
        const auto& row = per_frame[i];
        frames.push_back({{"frame_index", i},
                          {"mse", row.mse},
                          {"mae", row.mae},
                          {"ssim", row.ssim},
                          {"psnr", row.psnr}});
    }
    j["per_frame"] = std::move(frames);
    j["aggregate"] = {{"mse", aggregate.mse},
                      {"mae", aggregate.mae},
                      {"ssim", aggregate.ssim},
                      {"psnr", aggregate.psnr}};
    return j.dump(2) + "\n";
}

MetricsReport frame_report(const std::vector<FrameSequence>& predictions,
                           const std::vector<FrameSequence>& targets,
                           ReportMetadata metadata) {
    if (predictions.size() != targets.size() || predictions.empty()) {
        throw ShapeError("frame_report: prediction and target sample counts differ");
    }
    const FrameGeometry geometry = predictions.front().geometry();
    const int64_t frames = predictions.front().length();
    for (size_t s = 0; s < predictions.size(); ++s) {
        if (predictions[s].geometry() != geometry || targets[s].geometry() != geometry) {
            throw ShapeError("frame_report: inconsistent frame geometry");
        }
        if (predictions[s].length() != frames || targets[s].length() != frames) {
            throw ShapeError("frame_report: inconsistent sequence lengths");
        }
    }

    MetricsReport report;
    metadata.samples = static_cast<int64_t>(predictions.size());
    metadata.pixels_per_frame = geometry.frame_elems();
    report.metadata = std::move(metadata);
    report.per_frame.resize(static_cast<size_t>(frames));

    const double inv_samples = 1.0 / static_cast<double>(predictions.size());
    for (int64_t f = 0; f < frames; ++f) {
        FrameScore& row = report.per_frame[static_cast<size_t>(f)];
        for (size_t s = 0; s < predictions.size(); ++s) {
            const auto p = predictions[s].frame(f);
            const auto t = targets[s].frame(f);
            row.mse += mse(p, t);
            row.mae += mae(p, t);
            row.ssim += ssim(p, t, geometry);
            row.psnr += psnr(p, t);
        }
        row.mse *= inv_samples;
        row.mae *= inv_samples;
        row.ssim *= inv_samples;
        row.psnr *= inv_samples;
    }

    const double inv_frames = 1.0 / static_cast<double>(frames);
    for (const auto& row : report.per_frame) {
        report.aggregate.mse += row.mse;
        report.aggregate.mae += row.mae;
        report.aggregate.ssim += row.ssim;
        report.aggregate.psnr += row.psnr;
    }
    report.aggregate.mse *= inv_frames;
    report.aggregate.mae *= inv_frames;
    report.aggregate.ssim *= inv_frames;
    report.aggregate.psnr *= inv_frames;
    return report;
}

} // namespace ustep::metrics
