#pragma once

#include <span>

#include "fogsplat/core.hpp"

namespace fogsplat {

// Learnable per-primitive parameters kept as unconstrained latents.
// Activations: scale = exp(log_scale), rotation = q / |q|, opacity = logistic(latent).
struct GaussianCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> log_scales;
    std::vector<Quat> rotations;
    std::vector<Scalar> opacity_latents;
    // sh_degree in [0, 3]; per Gaussian 3 * (sh_degree+1)^2 coefficients,
    // laid out channel-major per basis: [dc_r, dc_g, dc_b, b1_r, b1_g, b1_b, ...].
    int sh_degree = 0;
    std::vector<Scalar> color_coeffs;

    size_t size() const { return positions.size(); }
    int coeffs_per_channel() const { return (sh_degree + 1) * (sh_degree + 1); }
    int coeffs_per_gaussian() const { return 3 * coeffs_per_channel(); }
    std::span<const Scalar> coeffs(size_t i) const {
        return {color_coeffs.data() + i * coeffs_per_gaussian(), size_t(coeffs_per_gaussian())};
    }

    // Throws InvalidParameter on inconsistent array lengths or N == 0.
    void validate() const;
};

// Gradients mirroring the cloud's latent layout.
struct CloudGrads {
    std::vector<Vec3> positions;
    std::vector<Vec3> log_scales;
    std::vector<Quat> rotations;
    std::vector<Scalar> opacity_latents;
    std::vector<Scalar> color_coeffs;

    explicit CloudGrads(const GaussianCloud& cloud)
        : positions(cloud.size()),
          log_scales(cloud.size()),
          rotations(cloud.size(), Quat{0, 0, 0, 0}),
          opacity_latents(cloud.size(), 0.0),
          color_coeffs(cloud.color_coeffs.size(), 0.0) {}
};

// Pinhole camera with a world-to-camera rigid transform.
struct Camera {
    Scalar fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Mat3 rotation;     // world -> camera
    Vec3 translation;  // world -> camera
    Scalar near_clip = 0.01, far_clip = 1e6;
    std::string name;

    Vec3 to_camera(const Vec3& p) const { return rotation * p + translation; }
    Vec3 center() const {  // camera position in world space
        const Mat3 rt = rotation.transpose();
        return rt * (translation * Scalar(-1));
    }
    void validate() const;
};

struct ActivatedGaussians {
    std::vector<Vec3> scales;
    std::vector<Quat> unit_rotations;
    std::vector<Scalar> opacities;
};

// Applies all activation rules. Throws InvalidParameter on NaN latents.
ActivatedGaussians activate(const GaussianCloud& cloud);

// Sigma = R S S^T R^T with S = diag(exp(log_scale)) and R from the normalized
// quaternion. Throws InvalidParameter on a zero-norm quaternion.
Mat3 build_covariance(const Vec3& log_scale, const Quat& rotation);

// Gradients of <upstream, Sigma> w.r.t. the latents (quaternion gradient flows
// through the normalization).
void build_covariance_backward(const Mat3& upstream, const Vec3& log_scale, const Quat& rotation,
                               Vec3& grad_log_scale, Quat& grad_rotation);

Mat3 quat_to_rotation(const Quat& unit_q);

// Evaluated SH color for one Gaussian, clamped to >= 0 per channel.
// `dir` must be unit length; unused at degree 0.
Vec3 sh_eval(int degree, std::span<const Scalar> coeffs, const Vec3& dir);

// Chain rule through sh_eval. Adds gradient w.r.t. coefficients into
// grad_coeffs (same layout as coeffs) and returns gradient w.r.t. dir.
// Channels clamped in the forward pass contribute zero gradient.
Vec3 sh_eval_backward(int degree, std::span<const Scalar> coeffs, const Vec3& dir,
                      const Vec3& grad_color, std::span<Scalar> grad_coeffs);

// Converts an RGB albedo to the degree-0 SH coefficient and back.
Scalar rgb_to_sh_dc(Scalar rgb);
Scalar sh_dc_to_rgb(Scalar dc);

// Seeds a cloud from a sparse point set: isotropic scales from 3-NN spacing,
// identity rotations, opacity 0.1, colors as degree-0 SH.
GaussianCloud init_cloud_from_points(const std::vector<Vec3>& positions, const std::vector<Vec3>& colors,
                                     int sh_degree = 0);

// Radius of the camera rig (max distance to the mean camera center, padded),
// used to scale position learning rates and densification thresholds.
Scalar scene_extent(const std::vector<Camera>& cameras);

}  // namespace fogsplat
