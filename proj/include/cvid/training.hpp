#pragma once

// Joint optimization of the per-channel CVAE and density estimator on the
// combined objective rec + beta * KL + lambda * SDE.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvid/checkpoint.hpp"
#include "cvid/errors.hpp"
#include "cvid/inference.hpp"
#include "cvid/losses.hpp"
#include "cvid/metrics.hpp"
#include "cvid/model.hpp"
#include "cvid/rain_synth.hpp"

namespace cvid {

struct TrainConfig {
    double beta = 0.1;
    double lambda = 1.0;
    double lr = 0.01;
    double lr_decay = 10.0;  // learning rate is divided by this at every epoch boundary
    int epochs = 4;
    int batch_size = 32;
    int patch_size = 64;     // larger images are randomly cropped; smaller ones are used whole
    double weight_decay = 1e-10;
    std::uint64_t seed = 0;
    NetworkConfig network;
    int validation_samples = 1;
    std::optional<std::filesystem::path> validation_manifest;
    std::optional<std::filesystem::path> checkpoint_dir;  // per-epoch checkpoints when set

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (patch_size < 1) throw ConfigError("patch_size must be positive");
        if (!(beta >= 0.0) || !(lambda >= 0.0)) throw ConfigError("beta and lambda must be non-negative");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
        if (validation_samples < 1) throw ConfigError("validation_samples must be at least 1");
        network.validate();
    }
};

/// Learning rate in effect during a zero-based epoch.
inline double learning_rate_for_epoch(const TrainConfig& cfg, int epoch) {
    return cfg.lr / std::pow(cfg.lr_decay, epoch);
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["beta"] = c.beta;
    j["lambda"] = c.lambda;
    j["lr"] = c.lr;
    j["lr_decay"] = c.lr_decay;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["patch_size"] = c.patch_size;
    j["weight_decay"] = c.weight_decay;
    j["seed"] = c.seed;
    j["network"] = to_json(c.network);
    j["validation_samples"] = c.validation_samples;
    return j;
}

/// Per-channel N x 1 x H x W planes of a mini-batch.
template <class T>
struct Batch {
    std::array<Tensor<T>, 3> x, y, d;
    int size() const { return x[0].n; }
};

template <class T>
Batch<T> make_batch(const std::vector<const TrainingPair*>& pairs) {
    if (pairs.empty()) throw ConfigError("empty batch");
    const int n = static_cast<int>(pairs.size()), H = pairs[0]->clean.height(), W = pairs[0]->clean.width();
    Batch<T> b;
    for (int c = 0; c < 3; ++c) b.x[c] = b.y[c] = b.d[c] = Tensor<T>(n, 1, H, W);
    for (int i = 0; i < n; ++i) {
        const TrainingPair& p = *pairs[i];
        if (p.clean.height() != H || p.clean.width() != W) throw ArityError("batch images differ in size");
        if (!p.density) throw ConfigError("training pair has no density labels");
        for (std::size_t px = 0; px < p.clean.pixels(); ++px)
            for (int c = 0; c < 3; ++c) {
                b.x[c].plane(i, 0)[px] = static_cast<T>(p.rainy.data()[px * 3 + c]);
                b.y[c].plane(i, 0)[px] = static_cast<T>(p.clean.data()[px * 3 + c]);
                b.d[c].plane(i, 0)[px] = static_cast<T>((*p.density)[c].data()[px]);
            }
    }
    return b;
}

/// Forward pass of the learning objective on one batch in training mode
/// (batch statistics), optionally followed by back-propagation into every
/// parameter. Gradients accumulate; call zero_grad first. Channels with
/// channel_mask[c] == false are skipped entirely.
template <class T>
LossBreakdown forward_backward(CvidModel<T>& model, const Batch<T>& batch, double beta, double lambda,
                               std::uint64_t noise_seed, bool compute_gradients = true,
                               std::array<bool, 3> channel_mask = {true, true, true}) {
    const int N = batch.size();
    const double invN = 1.0 / N;
    double kl = 0.0, rec = 0.0, sde = 0.0;
    for (int c = 0; c < 3; ++c) {
        if (!channel_mask[c]) continue;
        ChannelStack<T>& s = model.channel(c);
        const Tensor<T>& x = batch.x[c];
        const Tensor<T>& y = batch.y[c];
        const Tensor<T>& dgt = batch.d[c];

        typename nn::DenseBlock<T>::Tape sde_tape;
        typename nn::ConvStack<T>::Tape enc_tape, pri_tape, dec_tape;
        const Tensor<T> dhat = s.sde.forward_train(x, sde_tape);
        const Tensor<T> enc = s.encoder.forward_train(concat_channels({&x, &y, &dhat}), enc_tape);
        const Tensor<T> pri = s.prior.forward_train(concat_channels({&x, &dhat}), pri_tape);

        const std::size_t hw = x.plane_size();
        Tensor<T> eps(N, 1, x.h, x.w), z(N, 1, x.h, x.w);
        Rng rng(derive_seed(noise_seed, {static_cast<std::uint64_t>(c)}));
        std::normal_distribution<double> nd(0.0, 1.0);
        for (int i = 0; i < N; ++i)
            for (std::size_t k = 0; k < hw; ++k) {
                eps.plane(i, 0)[k] = static_cast<T>(nd(rng));
                z.plane(i, 0)[k] = enc.plane(i, 0)[k] + eps.plane(i, 0)[k] * std::exp(T(0.5) * enc.plane(i, 1)[k]);
            }
        const Tensor<T> yhat = s.decoder.forward_train(concat_channels({&x, &z, &dhat}), dec_tape);

        Tensor<T> g_yhat(N, 1, x.h, x.w), g_enc(N, 2, x.h, x.w), g_pri(N, 2, x.h, x.w), g_dhat(N, 1, x.h, x.w);
        for (int i = 0; i < N; ++i)
            for (std::size_t k = 0; k < hw; ++k) {
                const double e = static_cast<double>(yhat.plane(i, 0)[k]) - y.plane(i, 0)[k];
                rec += e * e * invN;
                g_yhat.plane(i, 0)[k] = static_cast<T>(2.0 * e * invN);

                const KlTerm t = kl_pixel_logvar(enc.plane(i, 0)[k], enc.plane(i, 1)[k], pri.plane(i, 0)[k], pri.plane(i, 1)[k]);
                kl += t.value * invN;
                const double w = beta * invN;
                g_enc.plane(i, 0)[k] = static_cast<T>(w * t.d_mu_q);
                g_enc.plane(i, 1)[k] = static_cast<T>(w * t.d_lv_q);
                g_pri.plane(i, 0)[k] = static_cast<T>(w * t.d_mu_p);
                g_pri.plane(i, 1)[k] = static_cast<T>(w * t.d_lv_p);

                const double de = static_cast<double>(dhat.plane(i, 0)[k]) - dgt.plane(i, 0)[k];
                sde += de * de * invN;
                g_dhat.plane(i, 0)[k] = static_cast<T>(lambda * 2.0 * de * invN);
            }
        if (!compute_gradients) continue;

        const Tensor<T> g_dec_in = s.decoder.backward(dec_tape, std::move(g_yhat));
        for (int i = 0; i < N; ++i)
            for (std::size_t k = 0; k < hw; ++k) {
                const T gz = g_dec_in.plane(i, 1)[k];
                const T sigma = std::exp(T(0.5) * enc.plane(i, 1)[k]);
                g_enc.plane(i, 0)[k] += gz;
                g_enc.plane(i, 1)[k] += gz * eps.plane(i, 0)[k] * sigma * T(0.5);
                g_dhat.plane(i, 0)[k] += g_dec_in.plane(i, 2)[k];
            }
        const Tensor<T> g_enc_in = s.encoder.backward(enc_tape, std::move(g_enc));
        const Tensor<T> g_pri_in = s.prior.backward(pri_tape, std::move(g_pri));
        for (int i = 0; i < N; ++i)
            for (std::size_t k = 0; k < hw; ++k)
                g_dhat.plane(i, 0)[k] += g_enc_in.plane(i, 2)[k] + g_pri_in.plane(i, 1)[k];
        s.sde.backward(sde_tape, std::move(g_dhat));
    }
    if (!std::isfinite(kl) || !std::isfinite(rec) || !std::isfinite(sde)) {
        // Reported as-is so the caller can detect divergence.
        const double bad = std::numeric_limits<double>::quiet_NaN();
        return {kl, rec, sde, bad, bad, beta, lambda};
    }
    return total_loss(std::max(0.0, kl), rec, sde, beta, lambda);
}

/// Adam with decoupled weight decay, one moment pair per parameter array.
template <class T>
class Adam {
public:
    static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

    explicit Adam(double weight_decay = 0.0) : weight_decay_(weight_decay) {}

    void step(CvidModel<T>& model, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        std::size_t idx = 0;
        model.visit_params([&](const std::string&, Param<T>& p) {
            if (idx == m_.size()) {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
            auto& m = m_[idx];
            auto& v = v_[idx];
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double g = p.grad[k];
                m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g;
                v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g * g;
                const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + kEps);
                p.value[k] = static_cast<T>(p.value[k] - lr * update - lr * weight_decay_ * p.value[k]);
            }
            ++idx;
        });
    }

    std::int64_t steps() const noexcept { return t_; }

private:
    double weight_decay_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct StepRecord {
    std::int64_t step = 0;  // 1-based, strictly increasing
    int epoch = 0;          // 0-based
    double lr = 0.0;
    LossBreakdown loss;
    double wall_seconds = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    std::int64_t last_step = 0;
    double validation_psnr = 0.0;
    double validation_ssim = 0.0;
    std::optional<std::filesystem::path> checkpoint;
    double wall_seconds = 0.0;
};

struct TrainLog {
    TrainConfig config;
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

inline nlohmann::ordered_json to_json(const StepRecord& r) {
    return {{"type", "step"}, {"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr}, {"kl", r.loss.kl},
            {"rec", r.loss.rec}, {"sde", r.loss.sde}, {"cvae", r.loss.cvae}, {"total", r.loss.total},
            {"beta", r.loss.beta}, {"lambda", r.loss.lambda}, {"wall_seconds", r.wall_seconds}};
}

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
    nlohmann::ordered_json j{{"type", "epoch"}, {"epoch", r.epoch}, {"last_step", r.last_step},
                             {"validation_psnr", r.validation_psnr}, {"validation_ssim", r.validation_ssim},
                             {"wall_seconds", r.wall_seconds}};
    if (r.checkpoint) j["checkpoint"] = r.checkpoint->generic_string();
    return j;
}

/// Exponential moving average of the total loss, seeded with the first step.
inline std::vector<double> smoothed_total_loss(const TrainLog& log, double alpha = 0.1) {
    std::vector<double> out;
    out.reserve(log.steps.size());
    for (const auto& s : log.steps)
        out.push_back(out.empty() ? s.loss.total : (1.0 - alpha) * out.back() + alpha * s.loss.total);
    return out;
}

struct ValidationScore {
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

/// Averages PSNR/SSIM of restorer(rainy) against clean over the manifest.
inline ValidationScore validate_with(const DatasetManifest& manifest,
                                     const std::function<ImageTensor(const TrainingPair&)>& restorer) {
    if (manifest.entries.empty()) throw ConfigError("validation manifest is empty");
    ValidationScore s;
    for (const auto& e : manifest.entries) {
        const TrainingPair pair = load_pair(e);
        const ImageTensor out = restorer(pair);
        s.mean_psnr += psnr(out, pair.clean);
        s.mean_ssim += pair.clean.height() >= 11 && pair.clean.width() >= 11 ? ssim(out, pair.clean) : 0.0;
    }
    s.mean_psnr /= static_cast<double>(manifest.entries.size());
    s.mean_ssim /= static_cast<double>(manifest.entries.size());
    return s;
}

template <class T>
ValidationScore validate(const CvidModel<T>& model, const DatasetManifest& manifest, int n_samples = 1,
                         std::uint64_t seed = 0) {
    InferenceConfig cfg;
    cfg.n_samples = n_samples;
    cfg.seed = seed;
    return validate_with(manifest, [&](const TrainingPair& p) { return derain(p.rainy, model, cfg).yhat; });
}

/// Observer invoked after every optimization step (e.g. to stream the log).
using StepObserver = std::function<void(const StepRecord&)>;
using EpochObserver = std::function<void(const EpochRecord&)>;

template <class T = float>
struct TrainOutput {
    CvidModel<T> model;
    TrainLog log;
};

/// Runs the configured epoch budget. Each epoch visits the manifest in a
/// seeded random order; step k draws its latent noise from (seed, k).
template <class T = float>
TrainOutput<T> train(const DatasetManifest& manifest, const TrainConfig& cfg, const StepObserver& on_step = {},
                     const EpochObserver& on_epoch = {}) {
    cfg.validate();
    if (manifest.entries.empty()) throw ConfigError("training manifest is empty");
    if (!manifest.has_density()) throw ConfigError("training manifest lacks density labels");

    std::vector<TrainingPair> pairs;
    pairs.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) pairs.push_back(load_pair(e));

    std::optional<DatasetManifest> val;
    if (cfg.validation_manifest) val = load_manifest(*cfg.validation_manifest);
    const DatasetManifest& val_set = val ? *val : manifest;

    TrainOutput<T> out{CvidModel<T>::initialized(cfg.network, cfg.seed), TrainLog{cfg, {}, {}}};
    CvidModel<T>& model = out.model;
    Adam<T> opt(cfg.weight_decay);
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    std::vector<std::size_t> order(pairs.size());
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate_for_epoch(cfg, epoch);
        std::iota(order.begin(), order.end(), 0);
        Rng order_rng = make_rng(cfg.seed, {0x45504f43ULL, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), order_rng);

        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
            ++step;
            std::vector<TrainingPair> crops;
            std::vector<const TrainingPair*> members;
            Rng crop_rng = make_rng(cfg.seed, {0x43524f50ULL, static_cast<std::uint64_t>(step)});
            for (std::size_t k = b0; k < std::min(order.size(), b0 + cfg.batch_size); ++k) {
                const TrainingPair& p = pairs[order[k]];
                if (p.clean.height() <= cfg.patch_size && p.clean.width() <= cfg.patch_size) {
                    members.push_back(&p);
                    continue;
                }
                const int ps = std::min({cfg.patch_size, p.clean.height(), p.clean.width()});
                const PatchSpec spec{ps, std::uniform_int_distribution<int>(0, p.clean.height() - ps)(crop_rng),
                                     std::uniform_int_distribution<int>(0, p.clean.width() - ps)(crop_rng)};
                TrainingPair c{extract_patch(p.clean, spec), extract_patch(p.rainy, spec), std::array<ImageTensor, 3>{}};
                for (int ch = 0; ch < 3; ++ch) (*c.density)[ch] = extract_patch((*p.density)[ch], spec);
                crops.push_back(std::move(c));
            }
            for (const auto& c : crops) members.push_back(&c);
            const Batch<T> batch = make_batch<T>(members);

            model.zero_grad();
            const LossBreakdown loss = forward_backward(model, batch, cfg.beta, cfg.lambda,
                                                        derive_seed(cfg.seed, {0x5354455050ULL, static_cast<std::uint64_t>(step)}));
            if (!std::isfinite(loss.total) || !std::isfinite(loss.kl)) throw DivergedError(step, step - 1);
            opt.step(model, lr);
            model.meta().step = step;

            StepRecord rec{step, epoch, lr, loss, elapsed()};
            out.log.steps.push_back(rec);
            if (on_step) on_step(rec);
        }

        model.meta().epoch = epoch + 1;
        const ValidationScore score = validate(model, val_set, cfg.validation_samples, cfg.seed);
        EpochRecord er{epoch, step, score.mean_psnr, score.mean_ssim, std::nullopt, 0.0};
        if (cfg.checkpoint_dir) {
            std::filesystem::create_directories(*cfg.checkpoint_dir);
            er.checkpoint = *cfg.checkpoint_dir /
                            ("checkpoint_epoch" + std::to_string(epoch + 1) + "_step" + std::to_string(step) + ".cvid");
            save_checkpoint(model, *er.checkpoint);
        }
        er.wall_seconds = elapsed();
        out.log.epochs.push_back(er);
        if (on_epoch) on_epoch(er);
    }
    return out;
}

}  // namespace cvid
