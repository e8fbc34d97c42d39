#pragma once

#include "fogsplat/core.hpp"

namespace fogsplat {

// Classical dehazing statistics of one (foggy) input view.
struct PriorMaps {
    Image t_dcp;   // H x W, clamped to [0.05, 1]
    Image t_bcp;   // H x W, clamped to [0.05, 1]
    Vec3 a_est;    // atmospheric light estimated from the dark channel
    int patch_size = 15;
    Scalar omega = 0.95;
};

// Per-pixel min over channels, then min over the patch window (window clamped
// to the image at borders). patch must be odd and >= 1.
Image dark_channel(const Image& image, int patch);

// Max-over-channels counterpart.
Image bright_channel(const Image& image, int patch);

// Mean color of the pixels whose dark-channel value lies in the top 0.1%
// (at least one pixel).
Vec3 estimate_atmospheric_light(const Image& image, const Image& dark);

// t = 1 - omega * dark_channel(I / A, patch), clamped to [0.05, 1].
Image dcp_transmission(const Image& image, const Vec3& atmos, Scalar omega, int patch);

// t = (bright_channel - mean(A)) / (1 - mean(A)), clamped to [0.05, 1].
Image bcp_transmission(const Image& image, const Vec3& atmos, int patch);

PriorMaps compute_prior_maps(const Image& image, int patch = 15, Scalar omega = 0.95);

// Matting Laplacian over 3x3 windows of a guide image, applied matrix-free.
// Window statistics are precomputed so repeated applies against a fixed guide
// are cheap.
struct MattingLaplacian {
    int height = 0, width = 0;
    Scalar eps = 1e-4;
    Image guide;                 // the H x W x 3 image the windows were built on
    std::vector<Vec3> mean;      // per interior window center
    std::vector<Mat3> inv_cov;   // (cov + eps/9 I)^-1 per window
};

MattingLaplacian build_matting_laplacian(const Image& guide, Scalar eps = 1e-4);

// Returns L * x for a scalar map x matching the Laplacian's resolution.
Image matting_laplacian_apply(const MattingLaplacian& lap, const Image& x);

// Convenience wrapper building the Laplacian from the guide. Inputs larger
// than max_res on either side are reduced by 2x2 block averaging first.
Image matting_laplacian_apply(const Image& guide, const Image& x, int max_res = 128);

// 2x2 block-average pyramid reduction until both sides are <= max_res, and
// its exact adjoint (used to pull Laplacian gradients back to full size).
Image downsample_to(const Image& image, int max_res);
Image downsample_adjoint(const Image& grad_low, int full_height, int full_width);

struct LossGrad {
    Scalar loss = 0;
    Image grad;  // w.r.t. the rendered map
};

// loss = t_hat^T L t_hat + lambda_smooth * ||t_dcp - t_hat||_2^2, with the
// Laplacian evaluated on a <= max_res pyramid level of the rendered map and
// the guide. literal_eq10 evaluates the quadratic on the (constant) DCP map
// instead, as printed in the source formulation, which contributes no
// gradient. A prebuilt Laplacian for the downsampled guide may be supplied.
LossGrad dcp_loss(const Image& t_rendered, const Image& t_dcp, const Image& guide, Scalar lambda_smooth,
                  bool literal_eq10 = false, int max_res = 128, const MattingLaplacian* prebuilt = nullptr);

// loss = mean |t_bcp - t_hat|; subgradient 0 where equal.
LossGrad bcp_loss(const Image& t_rendered, const Image& t_bcp);

}  // namespace fogsplat
