#pragma once

// Monte-Carlo deraining: draw n latent codes from the prior network, decode
// each, and average the decodes per channel.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cvid/errors.hpp"
#include "cvid/image.hpp"
#include "cvid/image_io.hpp"
#include "cvid/metrics.hpp"
#include "cvid/model.hpp"
#include "cvid/rain_synth.hpp"

namespace cvid {

struct InferenceConfig {
    int n_samples = 100;
    std::uint64_t seed = 0;
    bool emit_intermediates = false;
    /// Decodes per batched decoder call; does not affect results.
    int chunk = 16;
    /// Test hook: may rewrite the prior latent of each channel before sampling.
    std::function<void(int channel, GaussianLatent&)> prior_hook;

    void validate() const {
        if (n_samples < 1) throw ConfigError("n_samples must be at least 1");
        if (chunk < 1) throw ConfigError("inference chunk must be at least 1");
    }
};

struct DerainResult {
    ImageTensor yhat;
    std::vector<ImageTensor> intermediates;  // one RGB decode per sample, when requested
};

template <class T>
DerainResult derain(const ImageTensor& x, const CvidModel<T>& model, const InferenceConfig& cfg) {
    require_rgb(x, "derain");
    cfg.validate();
    const int H = x.height(), W = x.width(), n = cfg.n_samples;
    const auto xs = split_channels(x);
    std::array<ImageTensor, 3> mean_planes;
    std::vector<std::array<ImageTensor, 3>> samples(cfg.emit_intermediates ? n : 0);

    for (int c = 0; c < 3; ++c) {
        const ChannelStack<T>& stack = model.channel(c);
        const ImageTensor dhat = sde_forward(xs[c], stack);
        GaussianLatent latent = prior_forward(xs[c], dhat, stack);
        if (cfg.prior_hook) cfg.prior_hook(c, latent);

        const Tensor<T> xt = plane_to_tensor<T>(xs[c]), dt = plane_to_tensor<T>(dhat);
        std::vector<double> sum(static_cast<std::size_t>(H) * W, 0.0);
        for (int j0 = 0; j0 < n; j0 += cfg.chunk) {
            const int m = std::min(cfg.chunk, n - j0);
            Tensor<T> in(m, 3, H, W);
            for (int j = 0; j < m; ++j) {
                const ImageTensor z = reparameterize(latent, latent_noise_seed(cfg.seed, c, static_cast<std::uint64_t>(j0 + j)));
                std::copy(xt.data.begin(), xt.data.end(), in.plane(j, 0));
                std::transform(z.data().begin(), z.data().end(), in.plane(j, 1), [](double v) { return static_cast<T>(v); });
                std::copy(dt.data.begin(), dt.data.end(), in.plane(j, 2));
            }
            const Tensor<T> out = stack.decoder.forward_eval(in);
            for (int j = 0; j < m; ++j) {
                const T* p = out.plane(j, 0);
                for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += static_cast<double>(p[k]);
                if (cfg.emit_intermediates) samples[j0 + j][c] = tensor_plane_to_image(out, j, 0);
            }
        }
        mean_planes[c] = ImageTensor(H, W, 1);
        for (std::size_t k = 0; k < sum.size(); ++k) mean_planes[c].data()[k] = sum[k] / n;
    }

    DerainResult result{clamp01(merge_channels(mean_planes)), {}};
    for (auto& s : samples) result.intermediates.push_back(merge_channels(s));
    return result;
}

struct FileError {
    std::string path;
    std::string message;
};

struct BatchResult {
    std::vector<std::filesystem::path> outputs;
    std::vector<FileError> errors;
    std::optional<MetricReport> report;  // present when ground truth was available
};

/// Derains every image of a directory, or every rainy entry of a manifest
/// (scoring against the clean entry). Output files keep the input filename
/// with a .png extension. Per-file failures are collected and skipped.
template <class T>
BatchResult derain_batch(const std::filesystem::path& input, const CvidModel<T>& model, const InferenceConfig& cfg,
                         const std::filesystem::path& out_dir, const MetricSelection& sel = {}) {
    namespace fs = std::filesystem;
    struct Job {
        fs::path rainy;
        std::optional<fs::path> clean;
    };
    std::vector<Job> jobs;
    bool have_truth = false;
    if (fs::is_directory(input)) {
        for (const auto& p : list_images(input)) jobs.push_back({p, std::nullopt});
    } else {
        const DatasetManifest m = load_manifest(input);
        for (const auto& e : m.entries) jobs.push_back({e.rainy, e.clean});
        have_truth = true;
    }
    fs::create_directories(out_dir);
    if (cfg.emit_intermediates) fs::create_directories(out_dir / "intermediates");

    BatchResult res;
    if (have_truth) res.report = MetricReport{{}, sel, {}, {}};
    for (const Job& job : jobs) {
        try {
            const ImageTensor x = as_rgb(load_image(job.rainy));
            const DerainResult d = derain(x, model, cfg);
            const std::string stem = job.rainy.stem().string();
            const fs::path out = out_dir / (stem + ".png");
            save_image(d.yhat, out);
            for (std::size_t j = 0; j < d.intermediates.size(); ++j) {
                char suffix[32];
                std::snprintf(suffix, sizeof suffix, "_s%04zu.png", j + 1);
                save_image(d.intermediates[j], out_dir / "intermediates" / (stem + suffix));
            }
            res.outputs.push_back(out);
            if (job.clean) {
                // Score the quantized output so the report matches the file on disk.
                res.report->rows.push_back(
                    evaluate_pair(job.rainy.filename().string(), load_image(out), as_rgb(load_image(*job.clean)), sel));
            }
        } catch (const Error& e) {
            res.errors.push_back({job.rainy.string(), e.what()});
        }
    }
    return res;
}

}  // namespace cvid
