#pragma once

// Paired clean/rainy data: channel-distinct additive rain streaks, density
// labels derived from the rain residual, and on-disk dataset manifests.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvid/errors.hpp"
#include "cvid/image.hpp"
#include "cvid/image_io.hpp"
#include "cvid/rng.hpp"

namespace cvid {

struct Range {
    double min = 0.0;
    double max = 0.0;
    friend bool operator==(const Range&, const Range&) = default;
};

struct RainParams {
    int streak_count = 14;
    Range length{6.0, 18.0};             // pixels
    Range angle{-20.0, 20.0};            // degrees from vertical
    std::array<Range, 3> intensity{{{0.25, 0.55}, {0.15, 0.40}, {0.30, 0.65}}};  // R, G, B
    double thickness = 1.0;              // pixels
    int blur_radius = 0;                 // box blur half-width, 0 disables
    std::uint64_t seed = 0;

    void validate() const {
        auto check = [](const Range& r, const char* what) {
            if (!(r.min <= r.max)) throw ConfigError(std::string("rain ") + what + ": min > max");
        };
        if (streak_count < 0) throw ConfigError("rain streak_count must be non-negative");
        check(length, "length_range");
        check(angle, "angle_range");
        if (length.min < 0) throw ConfigError("rain length must be non-negative");
        for (const Range& r : intensity) {
            check(r, "intensity_range");
            if (r.min < 0.0 || r.max > 1.0) throw ConfigError("rain intensity must lie in [0,1]");
        }
        if (!(thickness > 0.0)) throw ConfigError("rain thickness must be positive");
        if (blur_radius < 0) throw ConfigError("rain blur_radius must be non-negative");
    }

    friend bool operator==(const RainParams&, const RainParams&) = default;
};

/// One line segment of rain, centred at (row, col).
struct Streak {
    double row = 0.0;
    double col = 0.0;
    double length = 0.0;
    double angle_deg = 0.0;
    std::array<double, 3> intensity{};
};

inline std::vector<Streak> sample_streaks(const RainParams& params, int height, int width) {
    params.validate();
    Rng rng = make_rng(params.seed, {0x5354524bULL});
    auto uniform = [&](double lo, double hi) {
        return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    std::vector<Streak> out(static_cast<std::size_t>(params.streak_count));
    for (Streak& s : out) {
        s.row = uniform(0.0, height);
        s.col = uniform(0.0, width);
        s.length = uniform(params.length.min, params.length.max);
        s.angle_deg = uniform(params.angle.min, params.angle.max);
        for (int c = 0; c < 3; ++c) s.intensity[c] = uniform(params.intensity[c].min, params.intensity[c].max);
    }
    return out;
}

/// Anti-aliased coverage of a pixel centre by a segment of the given thickness.
inline double streak_coverage(const Streak& s, double thickness, double pr, double pc) {
    const double th = s.angle_deg * M_PI / 180.0;
    const double dr = std::cos(th), dc = std::sin(th);
    const double half = 0.5 * s.length;
    const double t = std::clamp((pr - s.row) * dr + (pc - s.col) * dc, -half, half);
    const double nr = s.row + t * dr - pr, nc = s.col + t * dc - pc;
    const double dist = std::sqrt(nr * nr + nc * nc);
    return std::clamp(0.5 * thickness + 0.5 - dist, 0.0, 1.0);
}

namespace detail {

inline void box_blur_plane(std::vector<double>& plane, int h, int w, int radius) {
    std::vector<double> tmp(plane.size());
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            int n = 0;
            for (int k = std::max(0, c - radius); k <= std::min(w - 1, c + radius); ++k, ++n)
                acc += plane[static_cast<std::size_t>(r) * w + k];
            tmp[static_cast<std::size_t>(r) * w + c] = acc / n;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            int n = 0;
            for (int k = std::max(0, r - radius); k <= std::min(h - 1, r + radius); ++k, ++n)
                acc += tmp[static_cast<std::size_t>(k) * w + c];
            plane[static_cast<std::size_t>(r) * w + c] = acc / n;
        }
}

}  // namespace detail

/// Rasterizes streaks into a non-negative 3-channel rain layer.
inline ImageTensor rasterize_streaks(int height, int width, const std::vector<Streak>& streaks,
                                     double thickness, int blur_radius) {
    ImageTensor layer(height, width, 3);
    const double reach = 0.5 * thickness + 1.0;
    for (const Streak& s : streaks) {
        const double th = s.angle_deg * M_PI / 180.0;
        const double ext_r = std::abs(std::cos(th)) * 0.5 * s.length + reach;
        const double ext_c = std::abs(std::sin(th)) * 0.5 * s.length + reach;
        const int r0 = std::max(0, static_cast<int>(std::floor(s.row - ext_r)));
        const int r1 = std::min(height - 1, static_cast<int>(std::ceil(s.row + ext_r)));
        const int c0 = std::max(0, static_cast<int>(std::floor(s.col - ext_c)));
        const int c1 = std::min(width - 1, static_cast<int>(std::ceil(s.col + ext_c)));
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) {
                const double cov = streak_coverage(s, thickness, r + 0.5, c + 0.5);
                if (cov <= 0.0) continue;
                for (int ch = 0; ch < 3; ++ch) layer(r, c, ch) += cov * s.intensity[ch];
            }
    }
    if (blur_radius > 0) {
        std::vector<double> plane(layer.pixels());
        for (int ch = 0; ch < 3; ++ch) {
            for (std::size_t p = 0; p < plane.size(); ++p) plane[p] = layer.data()[p * 3 + ch];
            detail::box_blur_plane(plane, height, width, blur_radius);
            for (std::size_t p = 0; p < plane.size(); ++p) layer.data()[p * 3 + ch] = plane[p];
        }
    }
    return layer;
}

struct RainySample {
    ImageTensor rainy;
    ImageTensor rain_layer;
};

/// rainy = clamp(clean + rain_layer).
inline RainySample synthesize_rain(const ImageTensor& clean, const RainParams& params) {
    require_rgb(clean, "synthesize_rain");
    const auto streaks = sample_streaks(params, clean.height(), clean.width());
    RainySample out;
    out.rain_layer = rasterize_streaks(clean.height(), clean.width(), streaks, params.thickness, params.blur_radius);
    out.rainy = clean;
    auto dst = out.rainy.data();
    const auto rain = out.rain_layer.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::min(1.0, dst[i] + rain[i]);
    return out;
}

inline double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Per-channel density label: 0 where rainy - clean is exactly 0, otherwise
/// the logistic sigmoid of that residual.
inline std::array<ImageTensor, 3> density_ground_truth(const ImageTensor& clean, const ImageTensor& rainy) {
    require_rgb(clean, "density_ground_truth");
    require_same_shape(clean, rainy, "density_ground_truth");
    std::array<ImageTensor, 3> maps{ImageTensor(clean.height(), clean.width(), 1),
                                    ImageTensor(clean.height(), clean.width(), 1),
                                    ImageTensor(clean.height(), clean.width(), 1)};
    for (std::size_t p = 0; p < clean.pixels(); ++p)
        for (int c = 0; c < 3; ++c) {
            const double residual = rainy.data()[p * 3 + c] - clean.data()[p * 3 + c];
            maps[c].data()[p] = residual == 0.0 ? 0.0 : logistic(residual);
        }
    return maps;
}

/// Procedural rain-free scene: smooth colour gradient, low-frequency texture
/// and a handful of soft-edged shapes.
inline ImageTensor generate_scene(int height, int width, std::uint64_t seed) {
    Rng rng = make_rng(seed, {0x5343454eULL});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageTensor img(height, width, 3);
    std::array<double, 3> top{}, bottom{};
    for (int c = 0; c < 3; ++c) {
        top[c] = 0.15 + 0.6 * u(rng);
        bottom[c] = 0.1 + 0.6 * u(rng);
    }
    const double fr = 0.5 + 3.0 * u(rng), fc = 0.5 + 3.0 * u(rng), phase = 6.28 * u(rng);
    const double tex_amp = 0.08 * u(rng);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const double t = static_cast<double>(r) / std::max(1, height - 1);
            const double tex = tex_amp * std::sin(fr * 6.283 * r / height + phase) * std::cos(fc * 6.283 * c / width);
            for (int ch = 0; ch < 3; ++ch) img(r, c, ch) = (1 - t) * top[ch] + t * bottom[ch] + tex;
        }
    const int shapes = 3 + static_cast<int>(u(rng) * 5);
    for (int s = 0; s < shapes; ++s) {
        const double cr = u(rng) * height, cc = u(rng) * width;
        const double rr = (0.08 + 0.3 * u(rng)) * height, rc = (0.08 + 0.3 * u(rng)) * width;
        const bool ellipse = u(rng) < 0.5;
        std::array<double, 3> col{};
        for (double& v : col) v = 0.05 + 0.85 * u(rng);
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) {
                const double dr = (r + 0.5 - cr) / rr, dc = (c + 0.5 - cc) / rc;
                const double d = ellipse ? std::sqrt(dr * dr + dc * dc) : std::max(std::abs(dr), std::abs(dc));
                const double a = std::clamp((1.0 - d) * 4.0, 0.0, 1.0);
                if (a <= 0.0) continue;
                for (int ch = 0; ch < 3; ++ch) img(r, c, ch) = (1 - a) * img(r, c, ch) + a * col[ch];
            }
    }
    return clamp01(std::move(img));
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
    std::filesystem::path clean;
    std::filesystem::path rainy;
    std::optional<std::array<std::filesystem::path, 3>> density;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;  // paths resolved against the manifest directory
    int patch_size = 0;
    std::uint64_t seed = 0;
    std::optional<RainParams> rain;
    std::filesystem::path root;

    std::size_t count() const noexcept { return entries.size(); }
    bool has_density() const {
        return !entries.empty() &&
               std::all_of(entries.begin(), entries.end(), [](const ManifestEntry& e) { return e.density.has_value(); });
    }
};

inline nlohmann::ordered_json rain_params_to_json(const RainParams& p) {
    auto range = [](const Range& r) { return nlohmann::ordered_json::array({r.min, r.max}); };
    nlohmann::ordered_json j;
    j["streak_count"] = p.streak_count;
    j["length_range"] = range(p.length);
    j["angle_range"] = range(p.angle);
    j["intensity_range"] = {range(p.intensity[0]), range(p.intensity[1]), range(p.intensity[2])};
    j["thickness"] = p.thickness;
    j["blur_radius"] = p.blur_radius;
    j["seed"] = p.seed;
    return j;
}

inline RainParams rain_params_from_json(const nlohmann::ordered_json& j) {
    auto range = [](const nlohmann::ordered_json& a) { return Range{a.at(0).get<double>(), a.at(1).get<double>()}; };
    RainParams p;
    p.streak_count = j.at("streak_count").get<int>();
    p.length = range(j.at("length_range"));
    p.angle = range(j.at("angle_range"));
    for (int c = 0; c < 3; ++c) p.intensity[c] = range(j.at("intensity_range").at(c));
    p.thickness = j.at("thickness").get<double>();
    p.blur_radius = j.at("blur_radius").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
}

/// Writes the manifest as JSON with paths relative to the manifest file.
inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    auto rel = [&](const fs::path& p) { return fs::relative(p, base).generic_string(); };
    nlohmann::ordered_json j;
    j["format"] = "cvid-dataset-manifest";
    j["version"] = 1;
    j["count"] = m.entries.size();
    j["patch_size"] = m.patch_size;
    j["seed"] = m.seed;
    if (m.rain) j["rain"] = rain_params_to_json(*m.rain);
    auto& entries = j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : m.entries) {
        nlohmann::ordered_json je;
        je["clean"] = rel(e.clean);
        je["rainy"] = rel(e.rainy);
        if (e.density) je["density"] = {rel((*e.density)[0]), rel((*e.density)[1]), rel((*e.density)[2])};
        entries.push_back(std::move(je));
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    DatasetManifest m;
    m.root = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    try {
        m.patch_size = j.value("patch_size", 0);
        m.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("rain")) m.rain = rain_params_from_json(j.at("rain"));
        for (const auto& je : j.at("entries")) {
            ManifestEntry e;
            e.clean = m.root / je.at("clean").get<std::string>();
            e.rainy = m.root / je.at("rainy").get<std::string>();
            if (je.contains("density")) {
                std::array<fs::path, 3> d;
                for (int c = 0; c < 3; ++c) d[c] = m.root / je.at("density").at(c).get<std::string>();
                e.density = d;
            }
            m.entries.push_back(std::move(e));
        }
        if (j.contains("count") && j.at("count").get<std::size_t>() != m.entries.size())
            throw ConfigError("manifest " + path.string() + ": count does not match number of entries");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + " has an invalid schema: " + e.what());
    }
    for (const auto& e : m.entries) {
        std::vector<fs::path> files{e.clean, e.rainy};
        if (e.density) files.insert(files.end(), e.density->begin(), e.density->end());
        for (const auto& f : files)
            if (!fs::exists(f)) throw ConfigError("manifest references missing file " + f.string());
    }
    return m;
}

/// A manifest entry with its rasters loaded.
struct TrainingPair {
    ImageTensor clean;
    ImageTensor rainy;
    std::optional<std::array<ImageTensor, 3>> density;
};

inline ImageTensor as_rgb(ImageTensor img) {
    if (img.channels() == 3) return img;
    ImageTensor out(img.height(), img.width(), 3);
    for (std::size_t p = 0; p < img.pixels(); ++p)
        for (int c = 0; c < 3; ++c) out.data()[p * 3 + c] = img.data()[p];
    return out;
}

inline TrainingPair load_pair(const ManifestEntry& e) {
    TrainingPair pair{as_rgb(load_image(e.clean)), as_rgb(load_image(e.rainy)), std::nullopt};
    require_same_shape(pair.clean, pair.rainy, "manifest entry");
    if (e.density) {
        std::array<ImageTensor, 3> d;
        for (int c = 0; c < 3; ++c) {
            d[c] = load_image((*e.density)[c]);
            if (d[c].channels() != 1 || d[c].height() != pair.clean.height() || d[c].width() != pair.clean.width())
                throw ArityError("density map " + (*e.density)[c].string() + " does not match its image");
        }
        pair.density = std::move(d);
    }
    return pair;
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " is not a directory");
    std::vector<fs::path> out;
    for (const auto& de : fs::directory_iterator(dir))
        if (de.is_regular_file() && is_supported_image_path(de.path())) out.push_back(de.path());
    std::sort(out.begin(), out.end());
    return out;
}

/// Crops `count` random patches from the images in clean_dir, adds rain and
/// writes clean/rainy/density rasters plus manifest.json under out_dir.
/// Entry k draws from a stream derived from (params.seed, k) only.
inline DatasetManifest build_dataset(const std::filesystem::path& clean_dir, const RainParams& params, int count,
                                     int patch_size, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    params.validate();
    if (count < 1) throw ConfigError("dataset count must be at least 1");
    if (patch_size < 1) throw ConfigError("patch size must be positive");
    const auto files = list_images(clean_dir);
    if (files.empty()) throw ConfigError("no supported images in " + clean_dir.string());
    std::vector<ImageTensor> sources;
    for (const auto& f : files) {
        ImageTensor img = as_rgb(load_image(f));
        if (img.height() >= patch_size && img.width() >= patch_size) sources.push_back(std::move(img));
    }
    if (sources.empty())
        throw BoundsError("patch size " + std::to_string(patch_size) + " exceeds every image in " + clean_dir.string());

    for (const char* sub : {"clean", "rainy", "density"}) fs::create_directories(out_dir / sub);

    DatasetManifest m;
    m.patch_size = patch_size;
    m.seed = params.seed;
    m.rain = params;
    m.root = out_dir;
    for (int k = 0; k < count; ++k) {
        Rng rng = make_rng(params.seed, {static_cast<std::uint64_t>(k), 0});
        const auto& src = sources[std::uniform_int_distribution<std::size_t>(0, sources.size() - 1)(rng)];
        PatchSpec spec{patch_size, std::uniform_int_distribution<int>(0, src.height() - patch_size)(rng),
                       std::uniform_int_distribution<int>(0, src.width() - patch_size)(rng)};
        const ImageTensor clean = extract_patch(src, spec);

        RainParams entry_params = params;
        entry_params.seed = derive_seed(params.seed, {static_cast<std::uint64_t>(k), 1});
        const RainySample rain = synthesize_rain(clean, entry_params);

        char stem[32];
        std::snprintf(stem, sizeof stem, "%05d", k);
        ManifestEntry e;
        e.clean = out_dir / "clean" / (std::string(stem) + ".png");
        e.rainy = out_dir / "rainy" / (std::string(stem) + ".png");
        save_image(clean, e.clean);
        save_image(rain.rainy, e.rainy);
        // Labels come from the quantized rasters so they agree with what training loads.
        const auto density = density_ground_truth(load_image(e.clean), load_image(e.rainy));
        std::array<fs::path, 3> dpaths;
        static constexpr const char* names[3] = {"R", "G", "B"};
        for (int c = 0; c < 3; ++c) {
            dpaths[c] = out_dir / "density" / (std::string(stem) + "_" + names[c] + ".png");
            save_image(density[c], dpaths[c]);
        }
        e.density = dpaths;
        m.entries.push_back(std::move(e));
    }
    save_manifest(m, out_dir / "manifest.json");
    return m;
}

}  // namespace cvid
