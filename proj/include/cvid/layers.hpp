#pragma once

// Stride-1, same-padded convolution and batch normalization with explicit
// backward passes. Gradients accumulate into Param::grad.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cvid/rng.hpp"
#include "cvid/tensor.hpp"

namespace cvid::nn {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <class T>
using ParamVisitor = std::function<void(const std::string& role, Param<T>&)>;
template <class T>
using BufferVisitor = std::function<void(const std::string& role, std::vector<T>&)>;

template <class T>
class Conv2d {
public:
    Conv2d() = default;
    /// Pass with_bias = false when a batch norm follows; its mean subtraction
    /// would cancel the bias exactly.
    Conv2d(int in_channels, int out_channels, int kernel, bool with_bias = true)
        : in_(in_channels), out_(out_channels), k_(kernel),
          weight_(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
          bias_(with_bias ? static_cast<std::size_t>(out_channels) : 0) {
        if (kernel % 2 == 0) throw ConfigError("convolution kernel must be odd");
    }

    int in_channels() const noexcept { return in_; }
    int out_channels() const noexcept { return out_; }
    int kernel() const noexcept { return k_; }
    bool has_bias() const noexcept { return !bias_.value.empty(); }
    std::size_t parameter_count() const noexcept { return weight_.size() + bias_.size(); }

    /// Fan-in scaled normal weights (gain for a leaky rectifier), zero bias.
    void init_fan_in(Rng& rng, double negative_slope) {
        const double fan_in = static_cast<double>(in_) * k_ * k_;
        std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / ((1.0 + negative_slope * negative_slope) * fan_in)));
        for (T& v : weight_.value) v = static_cast<T>(nd(rng));
        std::fill(bias_.value.begin(), bias_.value.end(), T(0));
    }

    void init_zero() {
        std::fill(weight_.value.begin(), weight_.value.end(), T(0));
        std::fill(bias_.value.begin(), bias_.value.end(), T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.c != in_) throw ArityError("Conv2d: expected " + std::to_string(in_) + " input channels, got " + std::to_string(x.c));
        Tensor<T> y(x.n, out_, x.h, x.w);
        const int hw = x.h * x.w, rows = in_ * k_ * k_;
        std::vector<T> cols(static_cast<std::size_t>(rows) * hw);
        ConstMatMap<T> W(weight_.value.data(), out_, rows);
        for (int i = 0; i < x.n; ++i) {
            im2col(x, i, cols.data());
            MatMap<T> Y(y.image(i), out_, hw);
            Y.noalias() = W * ConstMatMap<T>(cols.data(), rows, hw);
            if (has_bias())
                for (int o = 0; o < out_; ++o) Y.row(o).array() += bias_.value[o];
        }
        return y;
    }

    /// Accumulates parameter gradients; returns dL/dx when `want_input_grad`.
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool want_input_grad = true) {
        const int hw = x.h * x.w, rows = in_ * k_ * k_;
        std::vector<T> cols(static_cast<std::size_t>(rows) * hw), dcols(static_cast<std::size_t>(rows) * hw);
        MatMap<T> dW(weight_.grad.data(), out_, rows);
        ConstMatMap<T> W(weight_.value.data(), out_, rows);
        Tensor<T> dx;
        if (want_input_grad) dx = Tensor<T>(x.n, x.c, x.h, x.w);
        for (int i = 0; i < x.n; ++i) {
            im2col(x, i, cols.data());
            ConstMatMap<T> dY(dy.image(i), out_, hw);
            dW.noalias() += dY * ConstMatMap<T>(cols.data(), rows, hw).transpose();
            if (has_bias())
                for (int o = 0; o < out_; ++o) bias_.grad[o] += dY.row(o).sum();
            if (want_input_grad) {
                MatMap<T>(dcols.data(), rows, hw).noalias() = W.transpose() * dY;
                col2im(dcols.data(), dx, i);
            }
        }
        return dx;
    }

    void visit(const ParamVisitor<T>& fn) {
        fn("weight", weight_);
        if (has_bias()) fn("bias", bias_);
    }

    Param<T>& weight() noexcept { return weight_; }
    Param<T>& bias() noexcept { return bias_; }
    const Param<T>& weight() const noexcept { return weight_; }

private:
    void im2col(const Tensor<T>& x, int i, T* cols) const {
        const int pad = k_ / 2, H = x.h, Wd = x.w;
        for (int ci = 0; ci < in_; ++ci) {
            const T* src = x.plane(i, ci);
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    T* dst = cols + (static_cast<std::size_t>(ci * k_ + ky) * k_ + kx) * H * Wd;
                    const int dy = ky - pad, dx = kx - pad;
                    for (int r = 0; r < H; ++r) {
                        const int sr = r + dy;
                        T* row = dst + static_cast<std::size_t>(r) * Wd;
                        if (sr < 0 || sr >= H) {
                            std::fill(row, row + Wd, T(0));
                            continue;
                        }
                        const T* srow = src + static_cast<std::size_t>(sr) * Wd;
                        for (int c = 0; c < Wd; ++c) {
                            const int sc = c + dx;
                            row[c] = (sc < 0 || sc >= Wd) ? T(0) : srow[sc];
                        }
                    }
                }
        }
    }

    void col2im(const T* cols, Tensor<T>& dx, int i) const {
        const int pad = k_ / 2, H = dx.h, Wd = dx.w;
        for (int ci = 0; ci < in_; ++ci) {
            T* dst = dx.plane(i, ci);
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    const T* src = cols + (static_cast<std::size_t>(ci * k_ + ky) * k_ + kx) * H * Wd;
                    const int dy = ky - pad, dxo = kx - pad;
                    for (int r = 0; r < H; ++r) {
                        const int sr = r + dy;
                        if (sr < 0 || sr >= H) continue;
                        const T* row = src + static_cast<std::size_t>(r) * Wd;
                        T* drow = dst + static_cast<std::size_t>(sr) * Wd;
                        for (int c = 0; c < Wd; ++c) {
                            const int sc = c + dxo;
                            if (sc >= 0 && sc < Wd) drow[sc] += row[c];
                        }
                    }
                }
        }
    }

    int in_ = 0, out_ = 0, k_ = 3;
    Param<T> weight_;
    Param<T> bias_;
};

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics and updates the running estimates; eval mode uses the latter.
template <class T>
class BatchNorm2d {
public:
    struct Cache {
        Tensor<T> xhat;
        std::vector<T> inv_std;
    };

    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels)
        : gamma_(channels, T(1)), beta_(channels, T(0)), running_mean_(channels, T(0)), running_var_(channels, T(1)) {}

    int channels() const noexcept { return static_cast<int>(gamma_.size()); }

    Tensor<T> forward_train(const Tensor<T>& x, Cache& cache) {
        const int C = x.c;
        const std::size_t hw = x.plane_size();
        const double m = static_cast<double>(x.n) * hw;
        Tensor<T> y(x.n, C, x.h, x.w);
        cache.xhat = Tensor<T>(x.n, C, x.h, x.w);
        cache.inv_std.assign(C, T(0));
        for (int ch = 0; ch < C; ++ch) {
            double sum = 0.0;
            for (int i = 0; i < x.n; ++i) {
                const T* p = x.plane(i, ch);
                for (std::size_t k = 0; k < hw; ++k) sum += p[k];
            }
            const double mean = sum / m;
            double sq = 0.0;
            for (int i = 0; i < x.n; ++i) {
                const T* p = x.plane(i, ch);
                for (std::size_t k = 0; k < hw; ++k) sq += (p[k] - mean) * (p[k] - mean);
            }
            const double var = sq / m;
            const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
            cache.inv_std[ch] = inv;
            const T g = gamma_.value[ch], b = beta_.value[ch], mu = static_cast<T>(mean);
            for (int i = 0; i < x.n; ++i) {
                const T* p = x.plane(i, ch);
                T* xh = cache.xhat.plane(i, ch);
                T* q = y.plane(i, ch);
                for (std::size_t k = 0; k < hw; ++k) {
                    xh[k] = (p[k] - mu) * inv;
                    q[k] = g * xh[k] + b;
                }
            }
            const double unbiased = m > 1 ? sq / (m - 1) : var;
            running_mean_[ch] = static_cast<T>((1 - kMomentum) * running_mean_[ch] + kMomentum * mean);
            running_var_[ch] = static_cast<T>((1 - kMomentum) * running_var_[ch] + kMomentum * unbiased);
        }
        return y;
    }

    Tensor<T> forward_eval(const Tensor<T>& x) const {
        Tensor<T> y(x.n, x.c, x.h, x.w);
        const std::size_t hw = x.plane_size();
        for (int ch = 0; ch < x.c; ++ch) {
            const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[ch]) + kEps));
            const T scale = gamma_.value[ch] * inv;
            const T shift = beta_.value[ch] - running_mean_[ch] * scale;
            for (int i = 0; i < x.n; ++i) {
                const T* p = x.plane(i, ch);
                T* q = y.plane(i, ch);
                for (std::size_t k = 0; k < hw; ++k) q[k] = p[k] * scale + shift;
            }
        }
        return y;
    }

    Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
        const Tensor<T>& xhat = cache.xhat;
        const std::size_t hw = dy.plane_size();
        const double m = static_cast<double>(dy.n) * hw;
        Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
        for (int ch = 0; ch < dy.c; ++ch) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int i = 0; i < dy.n; ++i) {
                const T* g = dy.plane(i, ch);
                const T* xh = xhat.plane(i, ch);
                for (std::size_t k = 0; k < hw; ++k) {
                    sum_dy += g[k];
                    sum_dy_xhat += g[k] * xh[k];
                }
            }
            gamma_.grad[ch] += static_cast<T>(sum_dy_xhat);
            beta_.grad[ch] += static_cast<T>(sum_dy);
            const double scale = gamma_.value[ch] * cache.inv_std[ch];
            const T mean_dy = static_cast<T>(sum_dy / m), mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
            for (int i = 0; i < dy.n; ++i) {
                const T* g = dy.plane(i, ch);
                const T* xh = xhat.plane(i, ch);
                T* d = dx.plane(i, ch);
                for (std::size_t k = 0; k < hw; ++k)
                    d[k] = static_cast<T>(scale * (g[k] - mean_dy - xh[k] * mean_dy_xhat));
            }
        }
        return dx;
    }

    void visit(const ParamVisitor<T>& fn) {
        fn("bn_gamma", gamma_);
        fn("bn_beta", beta_);
    }
    void visit_buffers(const BufferVisitor<T>& fn) {
        fn("bn_running_mean", running_mean_);
        fn("bn_running_var", running_var_);
    }

private:
    Param<T> gamma_;
    Param<T> beta_;
    std::vector<T> running_mean_;
    std::vector<T> running_var_;
};

template <class T>
void leaky_relu_inplace(Tensor<T>& t, T slope) {
    for (T& v : t.data) v = v > T(0) ? v : v * slope;
}

/// Gradient through a leaky rectifier given its pre-activation input.
template <class T>
void leaky_relu_backward_inplace(Tensor<T>& grad, const Tensor<T>& pre, T slope) {
    for (std::size_t k = 0; k < grad.size(); ++k)
        if (!(pre.data[k] > T(0))) grad.data[k] *= slope;
}

template <class T>
void sigmoid_inplace(Tensor<T>& t) {
    for (T& v : t.data) v = T(1) / (T(1) + std::exp(-v));
}

/// Gradient through a sigmoid given its output.
template <class T>
void sigmoid_backward_inplace(Tensor<T>& grad, const Tensor<T>& out) {
    for (std::size_t k = 0; k < grad.size(); ++k) grad.data[k] *= out.data[k] * (T(1) - out.data[k]);
}

}  // namespace cvid::nn
