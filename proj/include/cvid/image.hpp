#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cvid/errors.hpp"

namespace cvid {

/// H x W x C raster of intensities, row-major (row, col, channel).
/// Channel order is (R, G, B) for colour images.
class ImageTensor {
public:
    ImageTensor() = default;

    ImageTensor(int height, int width, int channels, double fill = 0.0)
        : height_(height), width_(width), channels_(channels) {
        if (height <= 0 || width <= 0)
            throw ArityError("image dimensions must be positive");
        if (channels != 1 && channels != 3)
            throw ArityError("image must have 1 or 3 channels, got " + std::to_string(channels));
        data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t pixels() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(int r, int c, int ch = 0) noexcept { return data_[index(r, c, ch)]; }
    double operator()(int r, int c, int ch = 0) const noexcept { return data_[index(r, c, ch)]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool same_shape(const ImageTensor& o) const noexcept {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

private:
    std::size_t index(int r, int c, int ch) const noexcept {
        return (static_cast<std::size_t>(r) * width_ + c) * channels_ + ch;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Square crop window.
struct PatchSpec {
    int size = 0;
    int origin_row = 0;
    int origin_col = 0;
};

inline ImageTensor clamp01(ImageTensor img) {
    for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
    return img;
}

inline void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ArityError(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                         std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                         std::to_string(b.channels()) + ")");
}

inline void require_rgb(const ImageTensor& img, const char* what) {
    if (img.channels() != 3)
        throw ArityError(std::string(what) + ": expected a 3-channel image");
}

inline std::array<ImageTensor, 3> split_channels(const ImageTensor& img) {
    require_rgb(img, "split_channels");
    std::array<ImageTensor, 3> planes{ImageTensor(img.height(), img.width(), 1),
                                      ImageTensor(img.height(), img.width(), 1),
                                      ImageTensor(img.height(), img.width(), 1)};
    const auto src = img.data();
    for (std::size_t p = 0; p < img.pixels(); ++p)
        for (int c = 0; c < 3; ++c) planes[c].data()[p] = src[p * 3 + c];
    return planes;
}

inline ImageTensor merge_channels(const ImageTensor& r, const ImageTensor& g, const ImageTensor& b) {
    for (const ImageTensor* p : {&r, &g, &b})
        if (p->channels() != 1) throw ArityError("merge_channels: planes must be single-channel");
    require_same_shape(r, g, "merge_channels");
    require_same_shape(r, b, "merge_channels");
    ImageTensor out(r.height(), r.width(), 3);
    auto dst = out.data();
    for (std::size_t p = 0; p < r.pixels(); ++p) {
        dst[p * 3 + 0] = r.data()[p];
        dst[p * 3 + 1] = g.data()[p];
        dst[p * 3 + 2] = b.data()[p];
    }
    return out;
}

inline ImageTensor merge_channels(const std::array<ImageTensor, 3>& planes) {
    return merge_channels(planes[0], planes[1], planes[2]);
}

inline ImageTensor extract_patch(const ImageTensor& img, const PatchSpec& spec) {
    if (spec.size <= 0 || spec.origin_row < 0 || spec.origin_col < 0 ||
        spec.origin_row + spec.size > img.height() || spec.origin_col + spec.size > img.width())
        throw BoundsError("extract_patch: " + std::to_string(spec.size) + "px patch at (" +
                          std::to_string(spec.origin_row) + "," + std::to_string(spec.origin_col) +
                          ") exceeds " + std::to_string(img.height()) + "x" + std::to_string(img.width()));
    ImageTensor out(spec.size, spec.size, img.channels());
    for (int r = 0; r < spec.size; ++r)
        for (int c = 0; c < spec.size; ++c)
            for (int ch = 0; ch < img.channels(); ++ch)
                out(r, c, ch) = img(spec.origin_row + r, spec.origin_col + c, ch);
    return out;
}

}  // namespace cvid
