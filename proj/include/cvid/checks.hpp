#pragma once

// Fast invariant suite behind `cvid check`.

#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "cvid/image.hpp"
#include "cvid/losses.hpp"
#include "cvid/metrics.hpp"
#include "cvid/model.hpp"
#include "cvid/rain_synth.hpp"
#include "cvid/rng.hpp"

namespace cvid::checks {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Implementations under test; swapped out by negative-control tests.
struct Hooks {
    std::function<double(const GaussianLatent&, const GaussianLatent&)> kl = kl_gaussian;
    std::function<ImageTensor(const GaussianLatent&, std::uint64_t)> reparameterize = cvid::reparameterize;
    std::function<ImageTensor(const ImageTensor&, const BrightChannelConfig&)> bright_channel = cvid::bright_channel;
};

inline GaussianLatent scalar_latent(double mu, double sigma) {
    GaussianLatent g{ImageTensor(1, 1, 1, mu), ImageTensor(1, 1, 1, sigma)};
    return g;
}

/// Monte-Carlo estimate of E_q[log q(z) - log p(z)] for scalar Gaussians.
inline double kl_monte_carlo(double mq, double sq, double mp, double sp, int samples, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    double acc = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double z = mq + sq * nd(rng);
        const double lq = -std::log(sq) - 0.5 * ((z - mq) / sq) * ((z - mq) / sq);
        const double lp = -std::log(sp) - 0.5 * ((z - mp) / sp) * ((z - mp) / sp);
        acc += lq - lp;
    }
    return acc / samples;
}

inline CheckResult check_kl_oracle(const Hooks& h, int pairs = 100, int samples = 1'000'000, std::uint64_t seed = 11) {
    Rng rng(seed);
    std::uniform_real_distribution<double> mu(-1.0, 1.0), sig(0.5, 2.0);
    double worst = 0.0;
    int failures = 0;
    for (int t = 0; t < pairs; ++t) {
        const double mq = mu(rng), sq = sig(rng), mp = mu(rng), sp = sig(rng);
        const double closed = h.kl(scalar_latent(mq, sq), scalar_latent(mp, sp));
        const double mc = kl_monte_carlo(mq, sq, mp, sp, samples, rng);
        const double err = std::abs(closed - mc), tol = std::max(0.01 * std::abs(mc), 1e-3);
        worst = std::max(worst, err / tol);
        if (!(err <= tol)) ++failures;
    }
    return {"kl_monte_carlo_oracle", failures == 0,
            std::to_string(pairs - failures) + "/" + std::to_string(pairs) + " pairs within tolerance, worst error/tol " +
                std::to_string(worst)};
}

inline CheckResult check_reparameterization(const Hooks& h, double mu = 0.3, double sigma = 0.7, std::uint64_t seed = 5) {
    GaussianLatent g{ImageTensor(100, 1000, 1, mu), ImageTensor(100, 1000, 1, sigma)};
    const ImageTensor z = h.reparameterize(g, seed);
    double sum = 0.0, sq = 0.0;
    for (double v : z.data()) sum += v;
    const double mean = sum / z.size();
    for (double v : z.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / (z.size() - 1));
    const bool ok = std::abs(mean - mu) <= 0.01 && std::abs(sd - sigma) <= 0.01;
    return {"reparameterization_moments", ok, "mean " + std::to_string(mean) + ", std " + std::to_string(sd) +
                                                  " over " + std::to_string(z.size()) + " draws"};
}

/// Direct evaluation of the bright channel: every window pixel, every channel.
inline ImageTensor bright_channel_brute_force(const ImageTensor& img, int radius) {
    ImageTensor out(img.height(), img.width(), 1);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            double m = -1.0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= img.height() || xx < 0 || xx >= img.width()) continue;
                    for (int c = 0; c < 3; ++c) m = std::max(m, img(yy, xx, c));
                }
            out(y, x) = m;
        }
    return out;
}

inline ImageTensor random_image(int h, int w, int ch, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageTensor img(h, w, ch);
    for (double& v : img.data()) v = u(rng);
    return img;
}

inline CheckResult check_bright_channel(const Hooks& h, int trials = 100, std::uint64_t seed = 8) {
    Rng rng(seed);
    int mismatches = 0, cases = 0;
    for (int t = 0; t < trials; ++t) {
        const ImageTensor img = random_image(8, 8, 3, rng);
        for (int r = 0; r <= 2; ++r) {
            ++cases;
            if (!(h.bright_channel(img, {r, 1.0 / 255.0}) == bright_channel_brute_force(img, r))) ++mismatches;
        }
    }
    return {"bright_channel_brute_force", mismatches == 0,
            std::to_string(cases - mismatches) + "/" + std::to_string(cases) + " exact matches"};
}

/// Random decomposition satisfying the channel-wise premise: a gray rain
/// layer and a channel-wise layer bounded above by it.
inline CheckResult check_proposition1(int trials = 100, std::uint64_t seed = 9) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int passed = 0;
    bool equality_ok = true;
    for (int t = 0; t < trials; ++t) {
        const int H = 8 + static_cast<int>(u(rng) * 9), W = 8 + static_cast<int>(u(rng) * 9);
        ImageTensor clean(H, W, 3), r_chan(H, W, 3), r_gray(H, W, 3);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double gray = u(rng) < 0.3 ? 0.4 * u(rng) : 0.0;
                for (int c = 0; c < 3; ++c) {
                    clean(y, x, c) = u(rng) < 0.2 ? 1.0 : u(rng);
                    r_gray(y, x, c) = gray;
                    r_chan(y, x, c) = gray * u(rng);
                }
            }
        ImageTensor rainy = clean;
        for (std::size_t k = 0; k < rainy.size(); ++k) rainy.data()[k] = std::min(1.0, clean.data()[k] + r_chan.data()[k]);
        const BrightChannelConfig cfg{static_cast<int>(u(rng) * 3), 1.0 / 255.0};
        if (proposition1_check(rainy, r_chan, r_gray, cfg).pass) ++passed;
        const auto eq = proposition1_check(rainy, r_chan, r_chan, cfg);
        equality_ok = equality_ok && eq.pass && eq.bright_channelwise == eq.bright_gray;
    }
    return {"proposition1_trials", passed == trials && equality_ok,
            std::to_string(passed) + "/" + std::to_string(trials) + " decompositions pass; equality case " +
                (equality_ok ? "equal" : "UNEQUAL")};
}

inline CheckResult check_density_labels() {
    ImageTensor clean(2, 3, 3, 0.25), rainy(2, 3, 3, 0.25);
    const double residuals[] = {0.0, 1.0, 0.5, 1e-9, 0.75, 0.0};
    for (int p = 0; p < 6; ++p)
        for (int c = 0; c < 3; ++c) rainy.data()[p * 3 + c] = 0.25 + residuals[p] * (c + 1) / 3.0;
    const auto maps = density_ground_truth(clean, rainy);
    bool ok = true;
    for (int p = 0; p < 6; ++p)
        for (int c = 0; c < 3; ++c) {
            const double r = rainy.data()[p * 3 + c] - clean.data()[p * 3 + c];
            const double expect = r == 0.0 ? 0.0 : 1.0 / (1.0 + std::exp(-r));
            ok = ok && maps[c].data()[p] == expect;
        }
    return {"density_label_rule", ok, ok ? "bit-exact on crafted residuals" : "mismatch"};
}

inline std::vector<CheckResult> run_all(const Hooks& hooks = {}) {
    return {check_kl_oracle(hooks), check_reparameterization(hooks), check_bright_channel(hooks),
            check_proposition1(), check_density_labels()};
}

inline int report(const std::vector<CheckResult>& results, std::ostream& out) {
    bool all = true;
    for (const auto& r : results) {
        out << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << '\n';
        all = all && r.pass;
    }
    return all ? 0 : 1;
}

}  // namespace cvid::checks
