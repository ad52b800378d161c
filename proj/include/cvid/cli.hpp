#pragma once

// `cvid` command-line front end: synth, train, derain, eval, check.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cvid/checkpoint.hpp"
#include "cvid/checks.hpp"
#include "cvid/errors.hpp"
#include "cvid/image_io.hpp"
#include "cvid/inference.hpp"
#include "cvid/metrics.hpp"
#include "cvid/rain_synth.hpp"
#include "cvid/training.hpp"

namespace cvid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Raised for semantically invalid flag combinations found after parsing.
class UsageError : public Error { public: using Error::Error; };

inline bool verbose() {
    const char* v = std::getenv("CVID_VERBOSE");
    return v && *v && std::string(v) != "0";
}

inline MetricSelection parse_metrics(const std::string& list) {
    MetricSelection sel{false, false, false, false};
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "psnr") sel.psnr = true;
        else if (item == "ssim") sel.ssim = true;
        else if (item == "ced") sel.ced = true;
        else if (item == "bcp") sel.bcp = true;
        else throw UsageError("unknown metric '" + item + "' (expected psnr, ssim, ced, bcp)");
    }
    if (!(sel.psnr || sel.ssim || sel.ced || sel.bcp)) throw UsageError("--metrics selects nothing");
    return sel;
}

struct SynthArgs {
    std::string clean_dir, out_dir;
    int count = 200, patch_size = 64, generate_clean = 0, scene_size = 128;
    std::uint64_t seed = 0;
    RainParams rain;
    std::vector<double> length{6, 18}, angle{-20, 20}, int_r{0.25, 0.55}, int_g{0.15, 0.40}, int_b{0.30, 0.65};
};

struct TrainArgs {
    std::string manifest, out, validation_manifest;
    TrainConfig cfg;
};

struct DerainArgs {
    std::string checkpoint, input, out, metrics = "psnr,ssim,ced,bcp";
    InferenceConfig cfg;
};

struct EvalArgs {
    std::vector<std::string> pairs;
    std::string derained, metrics = "psnr,ssim,ced,bcp", out, ced_dir;
};

inline int cmd_synth(SynthArgs a, std::ostream& out) {
    namespace fs = std::filesystem;
    auto range = [](const std::vector<double>& v) { return Range{v.at(0), v.at(1)}; };
    a.rain.length = range(a.length);
    a.rain.angle = range(a.angle);
    a.rain.intensity = {range(a.int_r), range(a.int_g), range(a.int_b)};
    a.rain.seed = a.seed;
    try {
        a.rain.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    if (a.generate_clean > 0) {
        fs::create_directories(a.clean_dir);
        for (int i = 0; i < a.generate_clean; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "scene_%04d.png", i);
            save_image(generate_scene(a.scene_size, a.scene_size, derive_seed(a.seed, {0x6e6373ULL, static_cast<std::uint64_t>(i)})),
                       fs::path(a.clean_dir) / name);
        }
    }
    build_dataset(a.clean_dir, a.rain, a.count, a.patch_size, a.out_dir);
    out << (fs::path(a.out_dir) / "manifest.json").string() << '\n';
    return kExitOk;
}

inline int cmd_train(TrainArgs a, std::ostream& out, std::ostream& err) {
    namespace fs = std::filesystem;
    if (!a.validation_manifest.empty()) a.cfg.validation_manifest = a.validation_manifest;
    try {
        a.cfg.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const DatasetManifest manifest = load_manifest(a.manifest);
    const fs::path out_dir = a.out;
    fs::create_directories(out_dir);
    a.cfg.checkpoint_dir = out_dir / "checkpoints";

    std::ofstream log(out_dir / "train_log.jsonl");
    if (!log) throw IoError("cannot write " + (out_dir / "train_log.jsonl").string());
    nlohmann::ordered_json header{{"type", "config"}, {"manifest", a.manifest}, {"entries", manifest.count()}};
    const nlohmann::ordered_json cfg_json = to_json(a.cfg);
    for (const auto& [k, v] : cfg_json.items()) header[k] = v;
    log << header.dump() << '\n';
    out << header.dump() << '\n';

    std::int64_t last_finite = 0;
    try {
        auto result = train<float>(
            manifest, a.cfg,
            [&](const StepRecord& r) {
                last_finite = r.step;
                log << to_json(r).dump() << '\n';
                if (verbose())
                    err << "step " << r.step << " total " << r.loss.total << " rec " << r.loss.rec << " kl " << r.loss.kl
                        << " sde " << r.loss.sde << '\n';
            },
            [&](const EpochRecord& e) {
                log << to_json(e).dump() << '\n';
                out << "epoch " << e.epoch + 1 << " step " << e.last_step << " validation_psnr " << e.validation_psnr
                    << '\n';
            });
        const fs::path final_path = out_dir / "model.cvid";
        save_checkpoint(result.model, final_path);
        out << final_path.string() << '\n';
    } catch (const DivergedError& e) {
        err << "error: " << e.what() << '\n';
        log << nlohmann::ordered_json{{"type", "diverged"}, {"step", e.step()}, {"last_finite_step", last_finite}}.dump()
            << '\n';
        return kExitFailure;
    }
    return kExitOk;
}

inline int cmd_derain(DerainArgs a, std::ostream& out, std::ostream& err) {
    namespace fs = std::filesystem;
    const MetricSelection sel = parse_metrics(a.metrics);
    const auto model = load_checkpoint<float>(a.checkpoint);
    const fs::path input = a.input, out_dir = a.out;
    if (!fs::exists(input)) throw IoError("input does not exist: " + a.input);
    fs::create_directories(out_dir);

    if (fs::is_regular_file(input) && is_supported_image_path(input)) {
        const DerainResult d = derain(as_rgb(load_image(input)), model, a.cfg);
        const fs::path dst = out_dir / (input.stem().string() + ".png");
        save_image(d.yhat, dst);
        if (!d.intermediates.empty()) fs::create_directories(out_dir / "intermediates");
        for (std::size_t j = 0; j < d.intermediates.size(); ++j) {
            char suffix[32];
            std::snprintf(suffix, sizeof suffix, "_s%04zu.png", j + 1);
            save_image(d.intermediates[j], out_dir / "intermediates" / (input.stem().string() + suffix));
        }
        out << dst.string() << '\n';
        return kExitOk;
    }

    const BatchResult res = derain_batch(input, model, a.cfg, out_dir, sel);
    for (const auto& e : res.errors) err << "error: " << e.path << ": " << e.message << '\n';
    out << res.outputs.size() << " images derained into " << out_dir.string() << '\n';
    if (res.report) {
        write_report(*res.report, out_dir / "report.csv");
        out << "report " << (out_dir / "report.csv").string() << " mean_psnr " << res.report->mean_psnr()
            << " mean_ssim " << res.report->mean_ssim() << '\n';
    }
    return res.errors.empty() ? kExitOk : kExitFailure;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
    namespace fs = std::filesystem;
    const MetricSelection sel = parse_metrics(a.metrics);
    struct Pair {
        std::string id;
        fs::path restored, truth;
    };
    std::vector<Pair> pairs;
    if (a.pairs.size() == 1) {
        const DatasetManifest m = load_manifest(a.pairs[0]);
        for (const auto& e : m.entries) {
            const fs::path restored = a.derained.empty() ? e.rainy : fs::path(a.derained) / (e.rainy.stem().string() + ".png");
            pairs.push_back({e.rainy.filename().string(), restored, e.clean});
        }
    } else if (a.pairs.size() == 2) {
        std::map<std::string, fs::path> truth;
        for (const auto& p : list_images(a.pairs[1])) truth[p.stem().string()] = p;
        for (const auto& p : list_images(a.pairs[0])) {
            const auto it = truth.find(p.stem().string());
            if (it != truth.end()) pairs.push_back({p.filename().string(), p, it->second});
        }
    } else {
        throw UsageError("--pairs takes a manifest or two directories");
    }
    if (pairs.empty()) throw UsageError("no image pairs found");

    MetricReport rep{{}, sel, {}, {}};
    for (const auto& p : pairs)
        rep.rows.push_back(evaluate_pair(p.id, as_rgb(load_image(p.restored)), as_rgb(load_image(p.truth)), sel));
    if (!fs::path(a.out).parent_path().empty()) fs::create_directories(fs::path(a.out).parent_path());
    write_report(rep, a.out);
    if (!a.ced_dir.empty() && sel.ced) {
        fs::create_directories(a.ced_dir);
        for (const auto& r : rep.rows)
            for (int c = 0; c < 3; ++c)
                write_ced_curve(r.ced[c], fs::path(a.ced_dir) / (fs::path(r.id).stem().string() + "_ced_" + kChannelNames[c] + ".txt"));
    }
    out << "aggregate";
    if (sel.psnr) out << " psnr " << rep.mean_psnr();
    if (sel.ssim) out << " ssim " << rep.mean_ssim();
    if (sel.bcp) out << " bright_pixels " << rep.mean_bright();
    out << " rows " << rep.rows.size() << '\n' << a.out << '\n';
    return kExitOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Channel-wise conditional variational image deraining"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Synthesize a paired rainy/clean dataset");
    s->add_option("--clean-dir", synth.clean_dir, "Directory of rain-free source images")->required();
    s->add_option("--out-dir", synth.out_dir, "Output dataset directory")->required();
    s->add_option("--count", synth.count, "Number of pairs")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--patch-size", synth.patch_size, "Square patch size")->check(CLI::PositiveNumber)->capture_default_str();
    s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
    s->add_option("--streaks", synth.rain.streak_count, "Streaks per patch")->check(CLI::NonNegativeNumber)->capture_default_str();
    s->add_option("--length", synth.length, "Streak length range (min max)")->expected(2)->capture_default_str();
    s->add_option("--angle", synth.angle, "Angle from vertical in degrees (min max)")->expected(2)->capture_default_str();
    s->add_option("--intensity-r", synth.int_r, "Red intensity range")->expected(2)->capture_default_str();
    s->add_option("--intensity-g", synth.int_g, "Green intensity range")->expected(2)->capture_default_str();
    s->add_option("--intensity-b", synth.int_b, "Blue intensity range")->expected(2)->capture_default_str();
    s->add_option("--thickness", synth.rain.thickness, "Streak thickness in pixels")->capture_default_str();
    s->add_option("--blur-radius", synth.rain.blur_radius, "Box blur radius")->check(CLI::NonNegativeNumber)->capture_default_str();
    s->add_option("--generate-clean", synth.generate_clean, "First write this many procedural scenes into --clean-dir")
        ->check(CLI::NonNegativeNumber);
    s->add_option("--scene-size", synth.scene_size, "Side of generated scenes")->check(CLI::PositiveNumber)->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a model on a dataset manifest");
    t->add_option("--manifest", tr.manifest, "Training manifest")->required();
    t->add_option("--out", tr.out, "Output directory for checkpoints and log")->required();
    t->add_option("--beta", tr.cfg.beta, "KL weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    t->add_option("--lambda", tr.cfg.lambda, "Density loss weight")->check(CLI::NonNegativeNumber)->capture_default_str();
    t->add_option("--lr", tr.cfg.lr, "Initial learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--lr-decay", tr.cfg.lr_decay, "Divisor applied per epoch")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--epochs", tr.cfg.epochs, "Epochs")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--batch-size", tr.cfg.batch_size, "Mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--patch-size", tr.cfg.patch_size, "Training crop size")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--weight-decay", tr.cfg.weight_decay, "Decoupled weight decay")->check(CLI::NonNegativeNumber)->capture_default_str();
    t->add_option("--seed", tr.cfg.seed, "Random seed")->capture_default_str();
    t->add_option("--depth", tr.cfg.network.depth, "Layers per CVAE network")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--filters", tr.cfg.network.filters, "Hidden channels")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--sde-layers", tr.cfg.network.sde_layers, "Layers of the density block")->check(CLI::PositiveNumber)->capture_default_str();
    t->add_option("--leaky-slope", tr.cfg.network.leaky_slope, "Leaky rectifier slope")->capture_default_str();
    t->add_option("--validation-manifest", tr.validation_manifest, "Held-out manifest for per-epoch validation");
    t->add_option("--validation-samples", tr.cfg.validation_samples, "Latent samples for validation")
        ->check(CLI::PositiveNumber)->capture_default_str();

    DerainArgs dr;
    auto* d = app.add_subcommand("derain", "Derain an image, a directory or a manifest");
    d->add_option("--checkpoint", dr.checkpoint, "Model checkpoint")->required();
    d->add_option("--input", dr.input, "Image file, directory or manifest")->required();
    d->add_option("--out", dr.out, "Output directory")->required();
    d->add_option("--samples", dr.cfg.n_samples, "Latent samples averaged per image")->check(CLI::PositiveNumber)->capture_default_str();
    d->add_option("--seed", dr.cfg.seed, "Random seed")->capture_default_str();
    d->add_flag("--emit-intermediates", dr.cfg.emit_intermediates, "Write every per-sample decode");
    d->add_option("--metrics", dr.metrics, "Metrics for manifest input")->capture_default_str();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score restorations against ground truth");
    e->add_option("--pairs", ev.pairs, "Manifest, or restored and ground-truth directories")->required()->expected(1, 2);
    e->add_option("--derained", ev.derained, "With a manifest: directory of derained outputs (default: score the rainy inputs)");
    e->add_option("--metrics", ev.metrics, "Comma-separated: psnr,ssim,ced,bcp")->capture_default_str();
    e->add_option("--out", ev.out, "Report CSV path")->required();
    e->add_option("--ced-dir", ev.ced_dir, "Export per-image CED curves here");

    app.add_subcommand("check", "Run the fast invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*s) return cmd_synth(synth, out);
        if (*t) return cmd_train(tr, out, err);
        if (*d) return cmd_derain(dr, out, err);
        if (*e) return cmd_eval(ev, out);
        return checks::report(checks::run_all(), out);
    } catch (const UsageError& ue) {
        err << "usage error: " << ue.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace cvid::cli
