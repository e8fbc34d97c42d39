#include "fogsplat/losses.hpp"

#include <iostream>

namespace fogsplat {

namespace {

constexpr Scalar kC1 = 0.01 * 0.01;
constexpr Scalar kC2 = 0.03 * 0.03;

std::vector<Scalar> gaussian_window(int size, Scalar sigma) {
    std::vector<Scalar> w(size);
    const Scalar mid = (size - 1) / 2.0;
    Scalar sum = 0;
    for (int i = 0; i < size; ++i) {
        w[i] = std::exp(-(i - mid) * (i - mid) / (2 * sigma * sigma));
        sum += w[i];
    }
    for (Scalar& v : w) v /= sum;
    return w;
}

Image extract_channel(const Image& img, int c) {
    Image out(img.height, img.width, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, x, c);
    return out;
}

// Valid-mode separable blur: output is (H - k + 1) x (W - k + 1).
Image blur_valid(const Image& in, const std::vector<Scalar>& w) {
    const int k = int(w.size());
    Image rows(in.height, in.width - k + 1, 1);
    for (int y = 0; y < rows.height; ++y)
        for (int x = 0; x < rows.width; ++x) {
            Scalar s = 0;
            for (int i = 0; i < k; ++i) s += w[i] * in.at(y, x + i);
            rows.at(y, x) = s;
        }
    Image out(in.height - k + 1, rows.width, 1);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            Scalar s = 0;
            for (int i = 0; i < k; ++i) s += w[i] * rows.at(y + i, x);
            out.at(y, x) = s;
        }
    return out;
}

// Exact adjoint of blur_valid back to full_h x full_w.
Image blur_adjoint(const Image& g, const std::vector<Scalar>& w, int full_h, int full_w) {
    const int k = int(w.size());
    Image rows(full_h, g.width, 1);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            const Scalar v = g.at(y, x);
            for (int i = 0; i < k; ++i) rows.at(y + i, x) += w[i] * v;
        }
    Image out(full_h, full_w, 1);
    for (int y = 0; y < full_h; ++y)
        for (int x = 0; x < rows.width; ++x) {
            const Scalar v = rows.at(y, x);
            for (int i = 0; i < k; ++i) out.at(y, x + i) += w[i] * v;
        }
    return out;
}

}  // namespace

Scalar ssim(const Image& a, const Image& b, Image* grad_a) {
    if (!a.same_shape(b)) throw InvalidParameter("ssim: image shape mismatch");
    int win = 11;
    const int smallest = std::min(a.height, a.width);
    if (smallest < win) win = smallest % 2 == 1 ? smallest : smallest - 1;
    if (win < 1) throw InvalidParameter("ssim: image too small");
    const std::vector<Scalar> w = gaussian_window(win, 1.5);

    if (grad_a) *grad_a = Image(a.height, a.width, a.channels);
    const int vh = a.height - win + 1, vw = a.width - win + 1;
    const Scalar count = Scalar(vh) * vw * a.channels;
    const Scalar inv_count = 1.0 / count;
    Scalar total = 0;

    for (int c = 0; c < a.channels; ++c) {
        const Image pa = extract_channel(a, c), pb = extract_channel(b, c);
        Image pa2(a.height, a.width, 1), pb2(a.height, a.width, 1), pab(a.height, a.width, 1);
        for (size_t i = 0; i < pa.size(); ++i) {
            pa2.data[i] = pa.data[i] * pa.data[i];
            pb2.data[i] = pb.data[i] * pb.data[i];
            pab.data[i] = pa.data[i] * pb.data[i];
        }
        const Image mu_a = blur_valid(pa, w), mu_b = blur_valid(pb, w);
        const Image ea2 = blur_valid(pa2, w), eb2 = blur_valid(pb2, w), eab = blur_valid(pab, w);

        Image p_mu(vh, vw, 1), p_ea2(vh, vw, 1), p_eab(vh, vw, 1);
        for (int y = 0; y < vh; ++y)
            for (int x = 0; x < vw; ++x) {
                const Scalar ma = mu_a.at(y, x), mb = mu_b.at(y, x);
                const Scalar sa2 = ea2.at(y, x) - ma * ma;
                const Scalar sb2 = eb2.at(y, x) - mb * mb;
                const Scalar sab = eab.at(y, x) - ma * mb;
                const Scalar n1 = 2 * ma * mb + kC1, d1 = ma * ma + mb * mb + kC1;
                const Scalar n2 = 2 * sab + kC2, d2 = sa2 + sb2 + kC2;
                const Scalar s = (n1 * n2) / (d1 * d2);
                total += s;
                if (grad_a) {
                    const Scalar ds_dn1 = n2 / (d1 * d2);
                    const Scalar ds_dd1 = -s / d1;
                    const Scalar ds_dn2 = n1 / (d1 * d2);
                    const Scalar ds_dd2 = -s / d2;
                    // sa2, sab depend on mu_a as well as on the raw moments.
                    p_mu.at(y, x) = ds_dn1 * 2 * mb + ds_dd1 * 2 * ma + ds_dn2 * 2 * (-mb) + ds_dd2 * (-2 * ma);
                    p_ea2.at(y, x) = ds_dd2;
                    p_eab.at(y, x) = ds_dn2 * 2;
                }
            }
        if (grad_a) {
            const Image g_mu = blur_adjoint(p_mu, w, a.height, a.width);
            const Image g_ea2 = blur_adjoint(p_ea2, w, a.height, a.width);
            const Image g_eab = blur_adjoint(p_eab, w, a.height, a.width);
            for (int y = 0; y < a.height; ++y)
                for (int x = 0; x < a.width; ++x)
                    grad_a->at(y, x, c) =
                        inv_count * (g_mu.at(y, x) + 2 * pa.at(y, x) * g_ea2.at(y, x) + pb.at(y, x) * g_eab.at(y, x));
        }
    }
    // Division keeps ssim(I, I) == 1 exactly (the per-pixel terms are 1 bit-for-bit).
    return total / count;
}

Scalar psnr(const Image& a, const Image& b, Scalar peak) {
    if (!a.same_shape(b)) throw InvalidParameter("psnr: image shape mismatch");
    Scalar mse = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const Scalar d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= Scalar(a.size());
    if (mse == 0) return std::numeric_limits<Scalar>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

LossGradPair reconstruction_loss(const Image& render, const Image& target, Scalar lambda_ssim) {
    if (!render.same_shape(target)) throw InvalidParameter("reconstruction_loss: shape mismatch");
    LossGradPair out;
    out.grad = Image(render.height, render.width, render.channels);
    Scalar l1 = 0;
    const Scalar inv = 1.0 / Scalar(render.size());
    for (size_t i = 0; i < render.size(); ++i) {
        const Scalar d = render.data[i] - target.data[i];
        l1 += std::abs(d) * inv;
        out.grad.data[i] = (1 - lambda_ssim) * (d > 0 ? inv : (d < 0 ? -inv : 0.0));
    }
    if (lambda_ssim > 0) {
        Image ssim_grad;
        const Scalar s = ssim(render, target, &ssim_grad);
        out.loss = (1 - lambda_ssim) * l1 + lambda_ssim * (1 - s);
        for (size_t i = 0; i < render.size(); ++i) out.grad.data[i] -= lambda_ssim * ssim_grad.data[i];
    } else {
        out.loss = l1;
    }
    return out;
}

Scalar depth_weight(int iter, int max_iter, Scalar start, Scalar end) {
    if (max_iter <= 0) throw InvalidParameter("depth_weight: max_iter must be positive");
    if (iter < 0) throw InvalidParameter("depth_weight: iter must be non-negative");
    return log_lerp(start, end, iter, max_iter);
}

DepthLossResult depth_loss(const Image& d_rendered, const Image& d_pseudo, const Scalar* fixed_a,
                           const Scalar* fixed_b) {
    if (!d_rendered.same_shape(d_pseudo)) throw InvalidParameter("depth_loss: shape mismatch");
    for (Scalar v : d_pseudo.data)
        if (!std::isfinite(v)) throw InvalidParameter("depth_loss: non-finite pseudo depth");
    DepthLossResult out;
    const size_t n = d_rendered.size();
    const Scalar inv = 1.0 / Scalar(n);

    if (fixed_a && fixed_b) {
        out.a = *fixed_a;
        out.b = *fixed_b;
    } else {
        Scalar mp = 0, mr = 0, mpp = 0, mpr = 0;
        for (size_t i = 0; i < n; ++i) {
            mp += d_pseudo.data[i];
            mr += d_rendered.data[i];
            mpp += d_pseudo.data[i] * d_pseudo.data[i];
            mpr += d_pseudo.data[i] * d_rendered.data[i];
        }
        mp *= inv;
        mr *= inv;
        mpp *= inv;
        mpr *= inv;
        const Scalar var = mpp - mp * mp;
        if (var < 1e-12) {
            out.degenerate = true;
            out.a = 1;
            out.b = mr - mp;
            std::cerr << "depth_loss: constant pseudo-depth, skipping scale/shift alignment\n";
        } else {
            out.a = (mpr - mp * mr) / var;
            out.b = mr - out.a * mp;
        }
    }

    out.grad = Image(d_rendered.height, d_rendered.width, 1);
    for (size_t i = 0; i < n; ++i) {
        const Scalar r = out.a * d_pseudo.data[i] + out.b - d_rendered.data[i];
        out.loss += std::abs(r) * inv;
        out.grad.data[i] = r > 0 ? -inv : (r < 0 ? inv : 0.0);
    }
    return out;
}

LossGradPair depth_weighted_recon(const Image& render, const Image& target, const Image& d_frozen) {
    if (!render.same_shape(target)) throw InvalidParameter("depth_weighted_recon: shape mismatch");
    if (d_frozen.height != render.height || d_frozen.width != render.width || d_frozen.channels != 1)
        throw InvalidParameter("depth_weighted_recon: depth map shape mismatch");
    Scalar lo = d_frozen.data[0], hi = d_frozen.data[0];
    for (Scalar v : d_frozen.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const Scalar scale = hi > lo ? 1.0 / (hi - lo) : 0.0;

    LossGradPair out;
    out.grad = Image(render.height, render.width, render.channels);
    const Scalar inv = 1.0 / Scalar(render.size());
    for (int y = 0; y < render.height; ++y)
        for (int x = 0; x < render.width; ++x) {
            const Scalar dn = (d_frozen.at(y, x) - lo) * scale;
            for (int c = 0; c < render.channels; ++c) {
                const Scalar d = render.at(y, x, c) - target.at(y, x, c);
                out.loss += dn * std::abs(d) * inv;
                out.grad.at(y, x, c) = dn * inv * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
            }
        }
    return out;
}

LossReport total_loss(Scalar rec, Scalar dcp, Scalar bcp, Scalar depth, Scalar dweighted,
                      const LossWeights& weights, int iter, int max_iter) {
    LossReport report;
    report.iteration = iter;
    report.rec = rec;
    report.dcp = weights.enable_dcp ? dcp : 0;
    report.bcp = weights.enable_bcp ? bcp : 0;
    report.depth = weights.enable_depth ? depth : 0;
    report.dweighted = weights.enable_dweighted ? dweighted : 0;
    report.depth_lambda = depth_weight(iter, max_iter, weights.depth_start, weights.depth_end);
    report.total = report.rec + weights.lambda_dcp * report.dcp + weights.lambda_bcp * report.bcp +
                   report.depth_lambda * report.depth + weights.lambda_d_rec * report.dweighted;
    return report;
}

}  // namespace fogsplat
