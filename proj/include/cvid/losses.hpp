#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "cvid/errors.hpp"
#include "cvid/image.hpp"
#include "cvid/model.hpp"

namespace cvid {

/// KL(N(mq, sq^2) || N(mp, sp^2)) for one pixel.
inline double kl_pixel(double mq, double sq, double mp, double sp) {
    const double d = mq - mp;
    return std::max(0.0, std::log(sp / sq) + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5);
}

/// Same divergence parameterized by log-variances, with its partial
/// derivatives (mu_q, logvar_q, mu_p, logvar_p).
struct KlTerm {
    double value;
    double d_mu_q, d_lv_q, d_mu_p, d_lv_p;
};

inline KlTerm kl_pixel_logvar(double mq, double lvq, double mp, double lvp) {
    const double d = mq - mp;
    const double var_q = std::exp(lvq), inv_var_p = std::exp(-lvp);
    const double value = 0.5 * (lvp - lvq) + 0.5 * (var_q + d * d) * inv_var_p - 0.5;
    return {std::max(0.0, value), d * inv_var_p, -0.5 + 0.5 * var_q * inv_var_p, -d * inv_var_p,
            0.5 - 0.5 * (var_q + d * d) * inv_var_p};
}

/// Closed-form KL between diagonal Gaussian maps, summed over pixels.
inline double kl_gaussian(const GaussianLatent& q, const GaussianLatent& p) {
    require_same_shape(q.mu, q.sigma, "kl_gaussian");
    require_same_shape(q.mu, p.mu, "kl_gaussian");
    require_same_shape(p.mu, p.sigma, "kl_gaussian");
    double sum = 0.0;
    for (std::size_t k = 0; k < q.mu.size(); ++k) {
        const double sq = q.sigma.data()[k], sp = p.sigma.data()[k];
        if (!(sq > 0.0) || !(sp > 0.0)) throw DomainError("kl_gaussian: sigma must be strictly positive");
        sum += kl_pixel(q.mu.data()[k], sq, p.mu.data()[k], sp);
    }
    return sum;
}

/// (1/N) sum_i sum_c ||y_ic - yhat_ic||_F^2 over a batch of RGB images.
inline double reconstruction_loss(const std::vector<ImageTensor>& y, const std::vector<ImageTensor>& yhat) {
    if (y.empty() || y.size() != yhat.size()) throw ArityError("reconstruction_loss: batch size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        require_rgb(y[i], "reconstruction_loss");
        require_same_shape(y[i], yhat[i], "reconstruction_loss");
        double s = 0.0;
        for (std::size_t k = 0; k < y[i].size(); ++k) {
            const double e = y[i].data()[k] - yhat[i].data()[k];
            s += e * e;
        }
        total += s;
    }
    return total / static_cast<double>(y.size());
}

using DensityMaps = std::array<ImageTensor, 3>;

/// (1/N) sum_i sum_c ||D_ic - Dhat_ic||_F^2.
inline double sde_loss(const std::vector<DensityMaps>& d, const std::vector<DensityMaps>& dhat) {
    if (d.empty() || d.size() != dhat.size()) throw ArityError("sde_loss: batch size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            if (d[i][c].channels() != 1) throw ArityError("sde_loss: density maps must be single-channel");
            require_same_shape(d[i][c], dhat[i][c], "sde_loss");
            for (std::size_t k = 0; k < d[i][c].size(); ++k) {
                const double e = d[i][c].data()[k] - dhat[i][c].data()[k];
                total += e * e;
            }
        }
    return total / static_cast<double>(d.size());
}

struct LossBreakdown {
    double kl = 0.0;
    double rec = 0.0;
    double sde = 0.0;
    double cvae = 0.0;   // rec + beta * kl
    double total = 0.0;  // cvae + lambda * sde
    double beta = 0.0;
    double lambda = 0.0;
};

inline LossBreakdown total_loss(double kl, double rec, double sde, double beta, double lambda) {
    if (!(kl >= 0.0) || !(rec >= 0.0) || !(sde >= 0.0))
        throw DomainError("total_loss: loss components must be non-negative");
    if (!(beta >= 0.0) || !(lambda >= 0.0)) throw DomainError("total_loss: weights must be non-negative");
    LossBreakdown b{kl, rec, sde, 0.0, 0.0, beta, lambda};
    b.cvae = rec + beta * kl;
    b.total = b.cvae + lambda * sde;
    return b;
}

}  // namespace cvid
