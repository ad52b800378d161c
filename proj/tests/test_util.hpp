#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "cvid/image.hpp"
#include "cvid/model.hpp"
#include "cvid/rng.hpp"

namespace cvid::test {

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("cvid_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline ImageTensor random_image(int h, int w, int ch, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    ImageTensor img(h, w, ch);
    for (double& v : img.data()) v = u(rng);
    return img;
}

inline std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline NetworkConfig mini_config() {
    NetworkConfig c;
    c.depth = 2;
    c.filters = 4;
    c.sde_layers = 2;
    return c;
}

/// Every trainable array and buffer set to fresh random values.
template <class T>
void randomize(CvidModel<T>& m, std::uint64_t seed, double scale = 0.5) {
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    m.visit_params([&](const std::string& name, Param<T>& p) {
        const bool gamma = name.ends_with("bn_gamma");
        for (T& v : p.value) v = static_cast<T>(gamma ? 1.0 + 0.2 * nd(rng) : nd(rng));
    });
    std::uniform_real_distribution<double> u(0.5, 1.5);
    m.visit_buffers([&](const std::string& name, std::vector<T>& b) {
        for (T& v : b) v = static_cast<T>(name.ends_with("var") ? u(rng) : 0.1 * nd(rng));
    });
}

}  // namespace cvid::test
