#pragma once

#include "fogsplat/core.hpp"

namespace fogsplat {

// SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
// averaged over channels and valid (fully-supported) window positions. For
// images smaller than the window, the window shrinks to the largest odd size
// that fits. grad_a, when non-null, receives d(ssim)/d(a).
Scalar ssim(const Image& a, const Image& b, Image* grad_a = nullptr);

// 10 log10(peak^2 / MSE); +infinity when the images are identical.
Scalar psnr(const Image& a, const Image& b, Scalar peak = 1.0);

struct LossGradPair {
    Scalar loss = 0;
    Image grad;
};

// (1 - lambda) * mean-L1 + lambda * (1 - SSIM); gradient w.r.t. render.
LossGradPair reconstruction_loss(const Image& render, const Image& target, Scalar lambda_ssim = 0.2);

// Log-interpolated schedule from `start` at step 0 to `end` at max_iter,
// clamped beyond. Throws on max_iter <= 0.
Scalar depth_weight(int iter, int max_iter, Scalar start = 1.0, Scalar end = 0.01);

struct DepthLossResult {
    Scalar loss = 0;
    Image grad;  // w.r.t. d_rendered only; the fitted alignment is treated as constant
    Scalar a = 1, b = 0;
    bool degenerate = false;  // constant pseudo-depth; alignment skipped
};

// Scale-and-shift invariant depth supervision: fits a, b minimizing
// ||a d_pseudo + b - d_rendered||^2 in closed form on gradient-frozen values,
// then returns mean |a d_pseudo + b - d_rendered|. Passing fixed_a/fixed_b
// reuses a previous fit (the gradient-check path).
DepthLossResult depth_loss(const Image& d_rendered, const Image& d_pseudo,
                           const Scalar* fixed_a = nullptr, const Scalar* fixed_b = nullptr);

// mean(d_norm * |render - target|) with d_norm the [0,1]-normalized frozen
// depth; gradient flows to render only.
LossGradPair depth_weighted_recon(const Image& render, const Image& target, const Image& d_rendered_frozen);

struct LossWeights {
    Scalar lambda_ssim = 0.2;
    Scalar lambda_dcp = 0.1;
    Scalar lambda_bcp = 0.1;
    Scalar lambda_d_rec = 0.1;
    Scalar depth_start = 1.0, depth_end = 0.01;  // scheduled depth-loss weight
    Scalar lambda_smooth = 0.1;                  // DCP internal smoothness weight
    bool enable_dcp = true;
    bool enable_bcp = true;
    bool enable_depth = true;
    bool enable_dweighted = true;
};

struct LossReport {
    int iteration = 0;
    Scalar total = 0;
    Scalar rec = 0, dcp = 0, bcp = 0, depth = 0, dweighted = 0;
    Scalar depth_lambda = 0;  // scheduled weight applied to the depth term
};

// Weighted combination per the training objective; disabled terms contribute
// nothing regardless of their value.
LossReport total_loss(Scalar rec, Scalar dcp, Scalar bcp, Scalar depth, Scalar dweighted,
                      const LossWeights& weights, int iter, int max_iter);

}  // namespace fogsplat
