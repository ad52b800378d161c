#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cvid/errors.hpp"

namespace cvid {

/// Dense N x C x H x W activation tensor used inside the networks.
template <class T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(h) * w; }
    std::size_t image_size() const noexcept { return plane_size() * c; }
    std::size_t size() const noexcept { return data.size(); }

    T* image(int i) noexcept { return data.data() + i * image_size(); }
    const T* image(int i) const noexcept { return data.data() + i * image_size(); }
    T* plane(int i, int ch) noexcept { return image(i) + ch * plane_size(); }
    const T* plane(int i, int ch) const noexcept { return image(i) + ch * plane_size(); }

    bool same_shape(const Tensor& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
    bool same_spatial(const Tensor& o) const noexcept { return n == o.n && h == o.h && w == o.w; }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Concatenates along the channel axis.
template <class T>
Tensor<T> concat_channels(std::initializer_list<const Tensor<T>*> parts) {
    const Tensor<T>& first = **parts.begin();
    int channels = 0;
    for (const Tensor<T>* p : parts) {
        if (!p->same_spatial(first)) throw ArityError("concat_channels: spatial shape mismatch");
        channels += p->c;
    }
    Tensor<T> out(first.n, channels, first.h, first.w);
    for (int i = 0; i < first.n; ++i) {
        T* dst = out.image(i);
        for (const Tensor<T>* p : parts) dst = std::copy(p->image(i), p->image(i) + p->image_size(), dst);
    }
    return out;
}

template <class T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
    const Tensor<T>& first = *parts.front();
    int channels = 0;
    for (const Tensor<T>* p : parts) {
        if (!p->same_spatial(first)) throw ArityError("concat_channels: spatial shape mismatch");
        channels += p->c;
    }
    Tensor<T> out(first.n, channels, first.h, first.w);
    for (int i = 0; i < first.n; ++i) {
        T* dst = out.image(i);
        for (const Tensor<T>* p : parts) dst = std::copy(p->image(i), p->image(i) + p->image_size(), dst);
    }
    return out;
}

/// Channels [begin, begin + count) of every image.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& t, int begin, int count) {
    Tensor<T> out(t.n, count, t.h, t.w);
    for (int i = 0; i < t.n; ++i)
        std::copy(t.plane(i, begin), t.plane(i, begin) + count * t.plane_size(), out.image(i));
    return out;
}

template <class T>
void add_channels_into(Tensor<T>& dst, const Tensor<T>& src, int src_begin) {
    for (int i = 0; i < dst.n; ++i) {
        const T* s = src.plane(i, src_begin);
        T* d = dst.image(i);
        for (std::size_t k = 0; k < dst.image_size(); ++k) d[k] += s[k];
    }
}

/// Trainable array with its gradient accumulator.
template <class T>
struct Param {
    std::vector<T> value;
    std::vector<T> grad;

    explicit Param(std::size_t n = 0, T fill = T(0)) : value(n, fill), grad(n, T(0)) {}
    std::size_t size() const noexcept { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

}  // namespace cvid
