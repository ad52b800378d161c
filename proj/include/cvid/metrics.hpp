#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cvid/errors.hpp"
#include "cvid/image.hpp"

namespace cvid {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over every element; identical images give kPsnrCap.
inline double psnr(const ImageTensor& a, const ImageTensor& b, double cap = kPsnrCap) {
    require_same_shape(a, b, "psnr");
    double sse = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double e = a.data()[k] - b.data()[k];
        sse += e * e;
    }
    if (sse == 0.0) return cap;
    return std::min(cap, 10.0 * std::log10(static_cast<double>(a.size()) / sse));
}

struct SsimParams {
    int window = 11;
    double gaussian_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Mean SSIM over all fully-covered window positions, averaged over channels.
inline double ssim(const ImageTensor& a, const ImageTensor& b, const SsimParams& prm = {}) {
    require_same_shape(a, b, "ssim");
    const int win = prm.window;
    if (a.height() < win || a.width() < win)
        throw ConfigError("ssim: image " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                          " is smaller than the " + std::to_string(win) + "px window");
    std::vector<double> g(static_cast<std::size_t>(win));
    double gsum = 0.0;
    for (int i = 0; i < win; ++i) {
        const double d = i - (win - 1) / 2.0;
        g[i] = std::exp(-d * d / (2.0 * prm.gaussian_sigma * prm.gaussian_sigma));
        gsum += g[i];
    }
    for (double& v : g) v /= gsum;
    const double c1 = std::pow(prm.k1 * prm.dynamic_range, 2), c2 = std::pow(prm.k2 * prm.dynamic_range, 2);
    const int H = a.height(), W = a.width(), oh = H - win + 1, ow = W - win + 1;

    double total = 0.0;
    for (int ch = 0; ch < a.channels(); ++ch) {
        // Separable filtering of a, b, a^2, b^2, ab: horizontal pass then vertical.
        std::array<std::vector<double>, 5> horiz;
        for (auto& h : horiz) h.assign(static_cast<std::size_t>(H) * ow, 0.0);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < ow; ++c) {
                double s[5] = {0, 0, 0, 0, 0};
                for (int k = 0; k < win; ++k) {
                    const double x = a(r, c + k, ch), y = b(r, c + k, ch), w = g[k];
                    s[0] += w * x;
                    s[1] += w * y;
                    s[2] += w * x * x;
                    s[3] += w * y * y;
                    s[4] += w * x * y;
                }
                for (int m = 0; m < 5; ++m) horiz[m][static_cast<std::size_t>(r) * ow + c] = s[m];
            }
        double acc = 0.0;
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                double s[5] = {0, 0, 0, 0, 0};
                for (int k = 0; k < win; ++k)
                    for (int m = 0; m < 5; ++m) s[m] += g[k] * horiz[m][static_cast<std::size_t>(r + k) * ow + c];
                const double mx = s[0], my = s[1];
                const double vx = s[2] - mx * mx, vy = s[3] - my * my, cxy = s[4] - mx * my;
                acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        total += acc / (static_cast<double>(oh) * ow);
    }
    return total / a.channels();
}

inline constexpr int kCedBins = 256;

struct CedChannel {
    std::array<double, kCedBins> curve{};  // fraction of errors falling in bins [0, k]
    double mean = 0.0;
    double variance = 0.0;
};

/// Cumulative distribution of |a - b| on 256 uniform bins over [0,1], per channel.
inline std::vector<CedChannel> ced(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "ced");
    std::vector<CedChannel> out(static_cast<std::size_t>(a.channels()));
    const double n = static_cast<double>(a.pixels());
    for (int ch = 0; ch < a.channels(); ++ch) {
        std::array<std::size_t, kCedBins> hist{};
        double sum = 0.0, sq = 0.0;
        for (std::size_t p = 0; p < a.pixels(); ++p) {
            const double e = std::abs(a.data()[p * a.channels() + ch] - b.data()[p * a.channels() + ch]);
            const int bin = std::min(kCedBins - 1, static_cast<int>(std::floor(e * kCedBins)));
            ++hist[bin];
            sum += e;
            sq += e * e;
        }
        CedChannel& c = out[ch];
        std::size_t running = 0;
        for (int k = 0; k < kCedBins; ++k) {
            running += hist[k];
            c.curve[k] = static_cast<double>(running) / n;
        }
        c.mean = sum / n;
        c.variance = std::max(0.0, sq / n - c.mean * c.mean);
    }
    return out;
}

struct BrightChannelConfig {
    int patch_radius = 2;
    double brightness_tolerance = 1.0 / 255.0;

    void validate() const {
        if (patch_radius < 0) throw ConfigError("bright channel patch_radius must be non-negative");
        if (!(brightness_tolerance >= 0.0 && brightness_tolerance < 1.0))
            throw ConfigError("brightness_tolerance must lie in [0,1)");
    }
};

/// Maximum over channels and over the (2r+1)^2 window, truncated at borders.
inline ImageTensor bright_channel(const ImageTensor& img, const BrightChannelConfig& cfg = {}) {
    require_rgb(img, "bright_channel");
    cfg.validate();
    const int H = img.height(), W = img.width(), r = cfg.patch_radius;
    ImageTensor chmax(H, W, 1), rows(H, W, 1), out(H, W, 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) chmax(y, x) = std::max({img(y, x, 0), img(y, x, 1), img(y, x, 2)});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double m = chmax(y, std::max(0, x - r));
            for (int k = std::max(0, x - r); k <= std::min(W - 1, x + r); ++k) m = std::max(m, chmax(y, k));
            rows(y, x) = m;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double m = rows(std::max(0, y - r), x);
            for (int k = std::max(0, y - r); k <= std::min(H - 1, y + r); ++k) m = std::max(m, rows(k, x));
            out(y, x) = m;
        }
    return out;
}

/// Pixels whose bright-channel value is within the tolerance of 1.
inline std::size_t count_bright_pixels(const ImageTensor& img, const BrightChannelConfig& cfg = {}) {
    const ImageTensor bc = bright_channel(img, cfg);
    return static_cast<std::size_t>(std::count_if(bc.data().begin(), bc.data().end(),
                                                  [&](double v) { return 1.0 - v <= cfg.brightness_tolerance; }));
}

struct PropositionResult {
    bool pass = false;
    std::size_t bright_channelwise = 0;  // in B = O - R_chan
    std::size_t bright_gray = 0;         // in B_bar = O - R_gray
};

/// Compares bright-pixel counts of the channel-wise background O - R_chan and
/// the channel-agnostic background O - R_gray. Requires R_chan <= R_gray.
inline PropositionResult proposition1_check(const ImageTensor& rainy, const ImageTensor& rain_channelwise,
                                            const ImageTensor& rain_gray, const BrightChannelConfig& cfg = {}) {
    require_rgb(rainy, "proposition1_check");
    require_same_shape(rainy, rain_channelwise, "proposition1_check");
    require_same_shape(rainy, rain_gray, "proposition1_check");
    ImageTensor b(rainy.height(), rainy.width(), 3), b_bar(rainy.height(), rainy.width(), 3);
    for (std::size_t k = 0; k < rainy.size(); ++k) {
        const double rc = rain_channelwise.data()[k], rg = rain_gray.data()[k];
        if (rc > rg) throw PreconditionError("proposition1_check: channel-wise rain exceeds the gray rain layer");
        b.data()[k] = std::clamp(rainy.data()[k] - rc, 0.0, 1.0);
        b_bar.data()[k] = std::clamp(rainy.data()[k] - rg, 0.0, 1.0);
    }
    PropositionResult r;
    r.bright_channelwise = count_bright_pixels(b, cfg);
    r.bright_gray = count_bright_pixels(b_bar, cfg);
    r.pass = r.bright_channelwise >= r.bright_gray;
    return r;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricSelection {
    bool psnr = true;
    bool ssim = true;
    bool ced = true;
    bool bcp = true;
};

struct MetricRow {
    std::string id;
    double psnr = 0.0;
    double ssim = 0.0;
    std::vector<CedChannel> ced;
    std::size_t bright_pixel_count = 0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    MetricSelection selection;
    SsimParams ssim_params;
    BrightChannelConfig bright;

    double mean_psnr() const { return mean([](const MetricRow& r) { return r.psnr; }); }
    double mean_ssim() const { return mean([](const MetricRow& r) { return r.ssim; }); }
    double mean_bright() const { return mean([](const MetricRow& r) { return static_cast<double>(r.bright_pixel_count); }); }
    double mean_ced_mean(int ch) const { return mean([ch](const MetricRow& r) { return r.ced.at(ch).mean; }); }
    double mean_ced_variance(int ch) const { return mean([ch](const MetricRow& r) { return r.ced.at(ch).variance; }); }

private:
    template <class F>
    double mean(F f) const {
        if (rows.empty()) return 0.0;
        double s = 0.0;
        for (const auto& r : rows) s += f(r);
        return s / static_cast<double>(rows.size());
    }
};

/// Scores a restoration against its ground truth.
inline MetricRow evaluate_pair(const std::string& id, const ImageTensor& restored, const ImageTensor& truth,
                               const MetricSelection& sel = {}, const SsimParams& sp = {},
                               const BrightChannelConfig& bc = {}) {
    require_same_shape(restored, truth, "evaluate_pair");
    MetricRow row{id};
    if (sel.psnr) row.psnr = psnr(restored, truth);
    if (sel.ssim) row.ssim = ssim(restored, truth, sp);
    if (sel.ced) row.ced = ced(restored, truth);
    if (sel.bcp && restored.channels() == 3) row.bright_pixel_count = count_bright_pixels(restored, bc);
    return row;
}

namespace detail {
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace detail

/// CSV with '#' header lines echoing metric settings, one row per image and
/// a final "aggregate" row of column means.
inline void write_report(const MetricReport& rep, const std::filesystem::path& path) {
    using detail::fmt_double;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report " + path.string());
    out << "# cvid metric report\n";
    out << "# psnr_cap_db=" << fmt_double(kPsnrCap) << '\n';
    out << "# ssim_window=" << rep.ssim_params.window << " ssim_sigma=" << fmt_double(rep.ssim_params.gaussian_sigma)
        << " ssim_k1=" << fmt_double(rep.ssim_params.k1) << " ssim_k2=" << fmt_double(rep.ssim_params.k2) << '\n';
    out << "# bright_radius=" << rep.bright.patch_radius
        << " bright_tolerance=" << fmt_double(rep.bright.brightness_tolerance) << '\n';
    const auto& s = rep.selection;
    out << "id";
    if (s.psnr) out << ",psnr";
    if (s.ssim) out << ",ssim";
    if (s.ced)
        for (const char* c : {"R", "G", "B"}) out << ",ced_mean_" << c << ",ced_var_" << c;
    if (s.bcp) out << ",bright_pixels";
    out << '\n';
    auto emit = [&](const std::string& id, double p, double ss, const std::array<double, 6>& cedv, double bright) {
        out << id;
        if (s.psnr) out << ',' << fmt_double(p);
        if (s.ssim) out << ',' << fmt_double(ss);
        if (s.ced)
            for (double v : cedv) out << ',' << fmt_double(v);
        if (s.bcp) out << ',' << fmt_double(bright);
        out << '\n';
    };
    for (const auto& r : rep.rows) {
        std::array<double, 6> cv{};
        for (std::size_t c = 0; c < r.ced.size() && c < 3; ++c) {
            cv[2 * c] = r.ced[c].mean;
            cv[2 * c + 1] = r.ced[c].variance;
        }
        emit(r.id, r.psnr, r.ssim, cv, static_cast<double>(r.bright_pixel_count));
    }
    if (!rep.rows.empty()) {
        std::array<double, 6> cv{};
        if (s.ced && rep.rows.front().ced.size() == 3)
            for (int c = 0; c < 3; ++c) {
                cv[2 * c] = rep.mean_ced_mean(c);
                cv[2 * c + 1] = rep.mean_ced_variance(c);
            }
        emit("aggregate", rep.mean_psnr(), rep.mean_ssim(), cv, rep.mean_bright());
    }
    if (!out) throw IoError("write failed: " + path.string());
}

/// Two-column (bin upper edge, cumulative fraction) text file.
inline void write_ced_curve(const CedChannel& c, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (int k = 0; k < kCedBins; ++k)
        out << detail::fmt_double((k + 1) / static_cast<double>(kCedBins)) << ' ' << detail::fmt_double(c.curve[k]) << '\n';
}

}  // namespace cvid
