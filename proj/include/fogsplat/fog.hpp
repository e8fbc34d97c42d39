#pragma once

#include "fogsplat/core.hpp"

namespace fogsplat {

// Learnable participating-medium parameters. The depth-to-transmission map is
// a single-layer 1D convolution over the per-view depth sequence; the default
// kernel width of 1 makes it exactly one scattering weight.
struct FogParams {
    std::vector<Scalar> beta_weights{0.1};  // conv kernel, width 1 by default
    Vec3 atmos_latent;                      // activated A = logistic(latent) per channel
    bool use_sigmoid = true;                // wrap exp(-relu(beta*d)) in a logistic

    FogParams() { set_atmos(Vec3{0.8, 0.8, 0.8}); }

    Vec3 atmos() const {
        return {logistic(atmos_latent.x), logistic(atmos_latent.y), logistic(atmos_latent.z)};
    }
    void set_atmos(const Vec3& a) { atmos_latent = {logit(a.x), logit(a.y), logit(a.z)}; }
    int kernel_width() const { return int(beta_weights.size()); }
};

struct FogGrads {
    std::vector<Scalar> beta_weights;
    Vec3 atmos_latent;

    explicit FogGrads(const FogParams& fog) : beta_weights(fog.beta_weights.size(), 0.0) {}
};

// Min-max normalizes the view's depths to [0,1]; all zeros when max == min.
// The result is a gradient barrier: no gradient flows back through it.
std::vector<Scalar> normalize_depths(const std::vector<Scalar>& camera_depths);

// Cached forward state needed by gaussian_transmission_backward.
struct TransmissionCache {
    std::vector<Scalar> d_norm;
    std::vector<Scalar> relu_arg;   // conv output r_i, pre-ReLU
    std::vector<Scalar> exp_term;   // exp(-max(0, r_i))
    std::vector<int> sorted_order;  // only used for kernel widths > 1
};

// t_i = logistic(exp(-max(0, r_i))) with r_i the conv response on the depth
// sequence (r_i = beta * d_i at width 1; wider kernels slide over the
// depth-sorted sequence). use_sigmoid=false drops the outer logistic.
std::vector<Scalar> gaussian_transmission(const std::vector<Scalar>& d_norm, const FogParams& fog,
                                          TransmissionCache* cache = nullptr);

// Chain rule from dL/dt back to the conv weights. Subgradient 0 at the ReLU kink.
void gaussian_transmission_backward(const std::vector<Scalar>& grad_t, const FogParams& fog,
                                    const TransmissionCache& cache, std::vector<Scalar>& grad_beta);

// Foggy color per Gaussian: G_f = G_c * t + A * (1 - t).
std::vector<Vec3> fog_colors(const std::vector<Vec3>& clear_colors, const std::vector<Scalar>& t,
                             const FogParams& fog);

// Back-propagates dL/dG_f into clear colors, the per-Gaussian transmission and
// the atmospheric-light latent. grad_t accumulates (callers may have already
// deposited the rendered-transmission-channel gradient there).
void fog_colors_backward(const std::vector<Vec3>& grad_foggy, const std::vector<Vec3>& clear_colors,
                         const std::vector<Scalar>& t, const FogParams& fog,
                         std::vector<Vec3>& grad_clear, std::vector<Scalar>& grad_t,
                         Vec3& grad_atmos_latent);

}  // namespace fogsplat
