#pragma once

// Per-channel conditional VAE (encoder, prior network, decoder) plus the
// densely connected rain-density estimator, one independent stack per colour
// channel.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cvid/errors.hpp"
#include "cvid/image.hpp"
#include "cvid/layers.hpp"
#include "cvid/rng.hpp"
#include "cvid/tensor.hpp"

namespace cvid {

struct NetworkConfig {
    int depth = 7;          // conv layers per encoder/prior/decoder, head included
    int filters = 16;
    int kernel = 3;
    int sde_layers = 5;
    double leaky_slope = 0.2;

    void validate() const {
        if (depth < 1) throw ConfigError("network depth must be at least 1");
        if (filters < 1) throw ConfigError("network filters must be at least 1");
        if (kernel < 1 || kernel % 2 == 0) throw ConfigError("network kernel must be a positive odd number");
        if (sde_layers < 1) throw ConfigError("sde_layers must be at least 1");
        if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in [0,1)");
    }
    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct TrainingMeta {
    std::int64_t epoch = 0;
    std::int64_t step = 0;
    std::uint64_t seed = 0;
    friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

inline constexpr std::array<const char*, 3> kChannelNames{"R", "G", "B"};

/// Per-pixel diagonal Gaussian over a single-channel spatial latent.
struct GaussianLatent {
    ImageTensor mu;
    ImageTensor sigma;
};

namespace nn {

enum class HeadActivation { None, Sigmoid };

/// (depth - 1) x [conv, batch norm, leaky rectifier] followed by a conv head.
template <class T>
class ConvStack {
public:
    struct Tape {
        std::vector<Tensor<T>> inputs;
        std::vector<typename BatchNorm2d<T>::Cache> bn;
        std::vector<Tensor<T>> preact;
        Tensor<T> head_in;
        Tensor<T> out;
    };

    ConvStack() = default;
    ConvStack(int in_channels, int out_channels, const NetworkConfig& cfg, HeadActivation head)
        : slope_(static_cast<T>(cfg.leaky_slope)), head_act_(head) {
        int ch = in_channels;
        for (int l = 0; l + 1 < cfg.depth; ++l) {
            convs_.emplace_back(ch, cfg.filters, cfg.kernel, false);
            bns_.emplace_back(cfg.filters);
            ch = cfg.filters;
        }
        head_ = Conv2d<T>(ch, out_channels, cfg.kernel);
    }

    int in_channels() const noexcept { return convs_.empty() ? head_.in_channels() : convs_.front().in_channels(); }
    int hidden_layers() const noexcept { return static_cast<int>(convs_.size()); }

    void init(Rng& rng, double slope, bool zero_head) {
        for (auto& c : convs_) c.init_fan_in(rng, slope);
        if (zero_head)
            head_.init_zero();
        else
            head_.init_fan_in(rng, slope);
    }

    Tensor<T> forward_eval(const Tensor<T>& x) const {
        Tensor<T> a = x;
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            a = bns_[l].forward_eval(convs_[l].forward(a));
            leaky_relu_inplace(a, slope_);
        }
        Tensor<T> out = head_.forward(a);
        if (head_act_ == HeadActivation::Sigmoid) sigmoid_inplace(out);
        return out;
    }

    Tensor<T> forward_train(const Tensor<T>& x, Tape& tape) {
        tape.inputs.assign(convs_.size(), {});
        tape.bn.assign(convs_.size(), {});
        tape.preact.assign(convs_.size(), {});
        Tensor<T> a = x;
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            tape.inputs[l] = a;
            tape.preact[l] = bns_[l].forward_train(convs_[l].forward(a), tape.bn[l]);
            a = tape.preact[l];
            leaky_relu_inplace(a, slope_);
        }
        tape.head_in = a;
        tape.out = head_.forward(a);
        if (head_act_ == HeadActivation::Sigmoid) sigmoid_inplace(tape.out);
        return tape.out;
    }

    /// Returns dL/dx and accumulates parameter gradients.
    Tensor<T> backward(const Tape& tape, Tensor<T> grad) {
        if (head_act_ == HeadActivation::Sigmoid) sigmoid_backward_inplace(grad, tape.out);
        grad = head_.backward(tape.head_in, grad);
        for (std::size_t l = convs_.size(); l-- > 0;) {
            leaky_relu_backward_inplace(grad, tape.preact[l], slope_);
            grad = bns_[l].backward(tape.bn[l], grad);
            grad = convs_[l].backward(tape.inputs[l], grad);
        }
        return grad;
    }

    void visit(const std::string& prefix, const std::function<void(const std::string&, Param<T>&)>& fn) {
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            const std::string p = prefix + "/layer" + std::to_string(l) + "/";
            convs_[l].visit([&](const std::string& role, Param<T>& prm) { fn(p + role, prm); });
            bns_[l].visit([&](const std::string& role, Param<T>& prm) { fn(p + role, prm); });
        }
        const std::string p = prefix + "/layer" + std::to_string(convs_.size()) + "/";
        head_.visit([&](const std::string& role, Param<T>& prm) { fn(p + role, prm); });
    }

    void visit_buffers(const std::string& prefix, const std::function<void(const std::string&, std::vector<T>&)>& fn) {
        for (std::size_t l = 0; l < bns_.size(); ++l) {
            const std::string p = prefix + "/layer" + std::to_string(l) + "/";
            bns_[l].visit_buffers([&](const std::string& role, std::vector<T>& b) { fn(p + role, b); });
        }
    }

    std::size_t parameter_count() const {
        std::size_t n = head_.parameter_count();
        for (const auto& c : convs_) n += c.parameter_count();
        for (const auto& b : bns_) n += 2 * static_cast<std::size_t>(b.channels());
        return n;
    }

    const Conv2d<T>& first_conv() const { return convs_.empty() ? head_ : convs_.front(); }
    Conv2d<T>& head() { return head_; }

private:
    std::vector<Conv2d<T>> convs_;
    std::vector<BatchNorm2d<T>> bns_;
    Conv2d<T> head_;
    T slope_ = T(0.2);
    HeadActivation head_act_ = HeadActivation::None;
};

/// Densely connected block: layer k sees the input concatenated with the
/// outputs of all earlier layers. Hidden layers are conv, batch norm and ReLU;
/// the last layer is a single-channel conv with a sigmoid.
template <class T>
class DenseBlock {
public:
    struct Tape {
        std::vector<Tensor<T>> inputs;
        std::vector<typename BatchNorm2d<T>::Cache> bn;
        std::vector<Tensor<T>> preact;
        Tensor<T> out;
    };

    DenseBlock() = default;
    DenseBlock(int in_channels, const NetworkConfig& cfg) : in_(in_channels), growth_(cfg.filters) {
        for (int k = 0; k < cfg.sde_layers; ++k) {
            const bool last = k + 1 == cfg.sde_layers;
            convs_.emplace_back(in_ + growth_ * k, last ? 1 : growth_, cfg.kernel, last);
            if (!last) bns_.emplace_back(growth_);
        }
    }

    int layer_input_channels(int k) const { return convs_.at(static_cast<std::size_t>(k)).in_channels(); }
    int layers() const noexcept { return static_cast<int>(convs_.size()); }

    void init(Rng& rng) {
        for (auto& c : convs_) c.init_fan_in(rng, 0.0);
    }

    Tensor<T> forward_eval(const Tensor<T>& x) const {
        std::vector<Tensor<T>> feats;
        feats.reserve(convs_.size());
        for (std::size_t k = 0; k < convs_.size(); ++k) {
            Tensor<T> in = gather(x, feats);
            if (k + 1 == convs_.size()) {
                Tensor<T> out = convs_[k].forward(in);
                sigmoid_inplace(out);
                return out;
            }
            Tensor<T> f = bns_[k].forward_eval(convs_[k].forward(in));
            leaky_relu_inplace(f, T(0));
            feats.push_back(std::move(f));
        }
        return {};
    }

    Tensor<T> forward_train(const Tensor<T>& x, Tape& tape) {
        const std::size_t L = convs_.size();
        tape.inputs.assign(L, {});
        tape.bn.assign(L - 1, {});
        tape.preact.assign(L - 1, {});
        std::vector<Tensor<T>> feats;
        for (std::size_t k = 0; k < L; ++k) {
            tape.inputs[k] = gather(x, feats);
            if (k + 1 == L) {
                tape.out = convs_[k].forward(tape.inputs[k]);
                sigmoid_inplace(tape.out);
                break;
            }
            tape.preact[k] = bns_[k].forward_train(convs_[k].forward(tape.inputs[k]), tape.bn[k]);
            Tensor<T> f = tape.preact[k];
            leaky_relu_inplace(f, T(0));
            feats.push_back(std::move(f));
        }
        return tape.out;
    }

    Tensor<T> backward(const Tape& tape, Tensor<T> grad) {
        const std::size_t L = convs_.size();
        const Tensor<T>& x0 = tape.inputs[0];
        Tensor<T> dx(x0.n, in_, x0.h, x0.w);
        std::vector<Tensor<T>> dfeat(L - 1, Tensor<T>(x0.n, growth_, x0.h, x0.w));
        sigmoid_backward_inplace(grad, tape.out);
        for (std::size_t k = L; k-- > 0;) {
            if (k + 1 < L) {
                grad = std::move(dfeat[k]);
                leaky_relu_backward_inplace(grad, tape.preact[k], T(0));
                grad = bns_[k].backward(tape.bn[k], grad);
            }
            const Tensor<T> din = convs_[k].backward(tape.inputs[k], grad);
            add_channels_into(dx, din, 0);
            for (std::size_t j = 0; j < k; ++j) add_channels_into(dfeat[j], din, in_ + growth_ * static_cast<int>(j));
        }
        return dx;
    }

    void visit(const std::string& prefix, const std::function<void(const std::string&, Param<T>&)>& fn) {
        for (std::size_t k = 0; k < convs_.size(); ++k) {
            const std::string p = prefix + "/layer" + std::to_string(k) + "/";
            convs_[k].visit([&](const std::string& role, Param<T>& prm) { fn(p + role, prm); });
            if (k < bns_.size()) bns_[k].visit([&](const std::string& role, Param<T>& prm) { fn(p + role, prm); });
        }
    }

    void visit_buffers(const std::string& prefix, const std::function<void(const std::string&, std::vector<T>&)>& fn) {
        for (std::size_t k = 0; k < bns_.size(); ++k) {
            const std::string p = prefix + "/layer" + std::to_string(k) + "/";
            bns_[k].visit_buffers([&](const std::string& role, std::vector<T>& b) { fn(p + role, b); });
        }
    }

private:
    static Tensor<T> gather(const Tensor<T>& x, const std::vector<Tensor<T>>& feats) {
        if (feats.empty()) return x;
        std::vector<const Tensor<T>*> parts{&x};
        for (const auto& f : feats) parts.push_back(&f);
        return concat_channels(parts);
    }

    int in_ = 1;
    int growth_ = 16;
    std::vector<Conv2d<T>> convs_;
    std::vector<BatchNorm2d<T>> bns_;
};

}  // namespace nn

/// The four networks that process one colour channel.
template <class T>
struct ChannelStack {
    nn::ConvStack<T> encoder;  // (x_c, y_c, d_c) -> (mu, log-variance)
    nn::ConvStack<T> prior;    // (x_c, d_c)      -> (mu, log-variance)
    nn::ConvStack<T> decoder;  // (x_c, z, d_c)   -> yhat_c
    nn::DenseBlock<T> sde;     // x_c             -> dhat_c

    ChannelStack() = default;
    explicit ChannelStack(const NetworkConfig& cfg)
        : encoder(3, 2, cfg, nn::HeadActivation::None),
          prior(2, 2, cfg, nn::HeadActivation::None),
          decoder(3, 1, cfg, nn::HeadActivation::Sigmoid),
          sde(1, cfg) {}

    void visit(const std::string& prefix, const std::function<void(const std::string&, Param<T>&)>& fn) {
        encoder.visit(prefix + "/encoder", fn);
        prior.visit(prefix + "/prior", fn);
        decoder.visit(prefix + "/decoder", fn);
        sde.visit(prefix + "/sde", fn);
    }
    void visit_buffers(const std::string& prefix, const std::function<void(const std::string&, std::vector<T>&)>& fn) {
        encoder.visit_buffers(prefix + "/encoder", fn);
        prior.visit_buffers(prefix + "/prior", fn);
        decoder.visit_buffers(prefix + "/decoder", fn);
        sde.visit_buffers(prefix + "/sde", fn);
    }
};

/// Complete trainable parameter set: three unshared channel stacks plus the
/// configuration and training metadata. Serialized by checkpoint.hpp.
template <class T>
class CvidModel {
public:
    using Scalar = T;

    CvidModel() : CvidModel(NetworkConfig{}) {}
    explicit CvidModel(const NetworkConfig& cfg) : config_(cfg) {
        cfg.validate();
        for (auto& s : stacks_) s = ChannelStack<T>(cfg);
    }

    /// Fan-in scaled random weights; the encoder and prior heads start at zero
    /// so the initial latent is a unit Gaussian.
    static CvidModel initialized(const NetworkConfig& cfg, std::uint64_t seed) {
        CvidModel m(cfg);
        for (std::uint64_t c = 0; c < 3; ++c) {
            Rng enc = make_rng(seed, {c, 0}), pri = make_rng(seed, {c, 1}), dec = make_rng(seed, {c, 2}),
                sde = make_rng(seed, {c, 3});
            m.stacks_[c].encoder.init(enc, cfg.leaky_slope, true);
            m.stacks_[c].prior.init(pri, cfg.leaky_slope, true);
            m.stacks_[c].decoder.init(dec, cfg.leaky_slope, false);
            m.stacks_[c].sde.init(sde);
        }
        m.meta_.seed = seed;
        return m;
    }

    const NetworkConfig& config() const noexcept { return config_; }
    TrainingMeta& meta() noexcept { return meta_; }
    const TrainingMeta& meta() const noexcept { return meta_; }

    ChannelStack<T>& channel(int c) { return stacks_.at(static_cast<std::size_t>(c)); }
    const ChannelStack<T>& channel(int c) const { return stacks_.at(static_cast<std::size_t>(c)); }

    /// Visits every trainable array as "<channel>/<network>/layer<k>/<role>".
    void visit_params(const std::function<void(const std::string&, Param<T>&)>& fn) {
        for (int c = 0; c < 3; ++c) stacks_[c].visit(kChannelNames[c], fn);
    }
    void visit_buffers(const std::function<void(const std::string&, std::vector<T>&)>& fn) {
        for (int c = 0; c < 3; ++c) stacks_[c].visit_buffers(kChannelNames[c], fn);
    }

    void zero_grad() {
        visit_params([](const std::string&, Param<T>& p) { p.zero_grad(); });
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        visit_params([&](const std::string&, Param<T>& p) { n += p.size(); });
        return n;
    }

private:
    NetworkConfig config_;
    TrainingMeta meta_;
    std::array<ChannelStack<T>, 3> stacks_;
};

// ---------------------------------------------------------------------------
// Single-image forward operations on ImageTensor planes (batch-norm layers use
// their running statistics).

template <class T>
Tensor<T> plane_to_tensor(const ImageTensor& plane) {
    if (plane.channels() != 1) throw ArityError("expected a single-channel plane");
    Tensor<T> t(1, 1, plane.height(), plane.width());
    for (std::size_t k = 0; k < plane.size(); ++k) t.data[k] = static_cast<T>(plane.data()[k]);
    return t;
}

template <class T>
ImageTensor tensor_plane_to_image(const Tensor<T>& t, int i, int ch) {
    ImageTensor out(t.h, t.w, 1);
    const T* src = t.plane(i, ch);
    for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] = static_cast<double>(src[k]);
    return out;
}

/// Splits a 2-channel head output into mu and sigma = exp(raw / 2).
template <class T>
GaussianLatent latent_from_head(const Tensor<T>& head, int i) {
    GaussianLatent g{tensor_plane_to_image(head, i, 0), tensor_plane_to_image(head, i, 1)};
    for (double& v : g.sigma.data()) v = std::exp(0.5 * v);
    return g;
}

namespace detail {
inline void require_planes(std::initializer_list<const ImageTensor*> planes, const char* what) {
    const ImageTensor& first = **planes.begin();
    for (const ImageTensor* p : planes)
        if (p->channels() != 1 || p->height() != first.height() || p->width() != first.width())
            throw ArityError(std::string(what) + ": inputs must be same-shape single-channel planes");
}
}  // namespace detail

template <class T>
GaussianLatent encoder_forward(const ImageTensor& x_c, const ImageTensor& y_c, const ImageTensor& d_c,
                               const ChannelStack<T>& stack) {
    detail::require_planes({&x_c, &y_c, &d_c}, "encoder_forward");
    const auto x = plane_to_tensor<T>(x_c), y = plane_to_tensor<T>(y_c), d = plane_to_tensor<T>(d_c);
    return latent_from_head(stack.encoder.forward_eval(concat_channels({&x, &y, &d})), 0);
}

template <class T>
GaussianLatent prior_forward(const ImageTensor& x_c, const ImageTensor& d_c, const ChannelStack<T>& stack) {
    detail::require_planes({&x_c, &d_c}, "prior_forward");
    const auto x = plane_to_tensor<T>(x_c), d = plane_to_tensor<T>(d_c);
    return latent_from_head(stack.prior.forward_eval(concat_channels({&x, &d})), 0);
}

/// z = mu + eps * sigma, eps drawn per pixel (row-major) from the seeded stream.
inline ImageTensor reparameterize(const GaussianLatent& latent, std::uint64_t noise_seed) {
    require_same_shape(latent.mu, latent.sigma, "reparameterize");
    Rng rng(noise_seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    ImageTensor z(latent.mu.height(), latent.mu.width(), 1);
    for (std::size_t k = 0; k < z.size(); ++k) z.data()[k] = latent.mu.data()[k] + nd(rng) * latent.sigma.data()[k];
    return z;
}

template <class T>
ImageTensor decoder_forward(const ImageTensor& x_c, const ImageTensor& z, const ImageTensor& d_c,
                            const ChannelStack<T>& stack) {
    detail::require_planes({&x_c, &z, &d_c}, "decoder_forward");
    const auto x = plane_to_tensor<T>(x_c), zt = plane_to_tensor<T>(z), d = plane_to_tensor<T>(d_c);
    return tensor_plane_to_image(stack.decoder.forward_eval(concat_channels({&x, &zt, &d})), 0, 0);
}

template <class T>
ImageTensor sde_forward(const ImageTensor& x_c, const ChannelStack<T>& stack) {
    return tensor_plane_to_image(stack.sde.forward_eval(plane_to_tensor<T>(x_c)), 0, 0);
}

enum class Mode { Train, Infer };

struct ChannelwiseResult {
    ImageTensor yhat;
    std::array<GaussianLatent, 3> latents;  // encoder posterior (Train) or prior (Infer)
    std::array<ImageTensor, 3> dhat;
};

/// Noise stream for (channel, sample) under a base seed.
inline std::uint64_t latent_noise_seed(std::uint64_t seed, int channel, std::uint64_t sample) {
    return derive_seed(seed, {0x4c41544eULL, static_cast<std::uint64_t>(channel), sample});
}

/// Runs the full per-channel pipeline once: density estimate, posterior
/// (Train, needs y) or prior (Infer) latent, one reparameterized sample, decode.
template <class T>
ChannelwiseResult derain_channelwise_forward(const ImageTensor& x, const std::optional<ImageTensor>& y,
                                             const CvidModel<T>& model, Mode mode, std::uint64_t noise_seed) {
    require_rgb(x, "derain_channelwise_forward");
    if (mode == Mode::Train && !y) throw ContractError("derain_channelwise_forward: train mode requires the clean image");
    if (mode == Mode::Infer && y) throw ContractError("derain_channelwise_forward: infer mode must not receive the clean image");
    if (y) require_same_shape(x, *y, "derain_channelwise_forward");
    const auto xs = split_channels(x);
    std::optional<std::array<ImageTensor, 3>> ys;
    if (y) ys = split_channels(*y);
    ChannelwiseResult out;
    std::array<ImageTensor, 3> planes;
    for (int c = 0; c < 3; ++c) {
        const ChannelStack<T>& stack = model.channel(c);
        out.dhat[c] = sde_forward(xs[c], stack);
        out.latents[c] = mode == Mode::Train ? encoder_forward(xs[c], (*ys)[c], out.dhat[c], stack)
                                             : prior_forward(xs[c], out.dhat[c], stack);
        const ImageTensor z = reparameterize(out.latents[c], latent_noise_seed(noise_seed, c, 0));
        planes[c] = decoder_forward(xs[c], z, out.dhat[c], stack);
    }
    out.yhat = merge_channels(planes);
    return out;
}

}  // namespace cvid
