#include "fogsplat/priors.hpp"

#include <numeric>

namespace fogsplat {

namespace {

constexpr Scalar kTransmissionFloor = 0.05;

void check_patch(int patch) {
    if (patch < 1 || patch % 2 == 0) throw InvalidParameter("patch size must be odd and >= 1");
}

// Separable window min/max with borders clamped to the image.
template <class Cmp>
Image window_filter(const Image& per_pixel, int patch, Cmp better) {
    const int h = per_pixel.height, w = per_pixel.width, r = patch / 2;
    Image rows(h, w, 1), out(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            Scalar best = per_pixel.at(y, x);
            for (int k = std::max(0, x - r); k <= std::min(w - 1, x + r); ++k)
                if (better(per_pixel.at(y, k), best)) best = per_pixel.at(y, k);
            rows.at(y, x) = best;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            Scalar best = rows.at(y, x);
            for (int k = std::max(0, y - r); k <= std::min(h - 1, y + r); ++k)
                if (better(rows.at(k, x), best)) best = rows.at(k, x);
            out.at(y, x) = best;
        }
    return out;
}

}  // namespace

Image dark_channel(const Image& image, int patch) {
    check_patch(patch);
    Image mins(image.height, image.width, 1);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            Scalar v = image.at(y, x, 0);
            for (int c = 1; c < image.channels; ++c) v = std::min(v, image.at(y, x, c));
            mins.at(y, x) = v;
        }
    return window_filter(mins, patch, [](Scalar a, Scalar b) { return a < b; });
}

Image bright_channel(const Image& image, int patch) {
    check_patch(patch);
    Image maxs(image.height, image.width, 1);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            Scalar v = image.at(y, x, 0);
            for (int c = 1; c < image.channels; ++c) v = std::max(v, image.at(y, x, c));
            maxs.at(y, x) = v;
        }
    return window_filter(maxs, patch, [](Scalar a, Scalar b) { return a > b; });
}

Vec3 estimate_atmospheric_light(const Image& image, const Image& dark) {
    const size_t n = dark.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    const size_t keep = std::max<size_t>(1, n / 1000);
    std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                      [&](int a, int b) { return dark.data[a] > dark.data[b]; });
    Vec3 sum;
    for (size_t i = 0; i < keep; ++i) {
        const int y = order[i] / image.width, x = order[i] % image.width;
        sum += Vec3{image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2)};
    }
    return sum * (1.0 / Scalar(keep));
}

Image dcp_transmission(const Image& image, const Vec3& atmos, Scalar omega, int patch) {
    if (atmos.x <= 0 || atmos.y <= 0 || atmos.z <= 0)
        throw InvalidParameter("dcp_transmission: atmospheric light channels must be positive");
    Image scaled(image.height, image.width, 3);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) scaled.at(y, x, c) = image.at(y, x, c) / atmos[c];
    Image dark = dark_channel(scaled, patch);
    Image t(image.height, image.width, 1);
    for (size_t i = 0; i < t.size(); ++i)
        t.data[i] = std::clamp(1.0 - omega * dark.data[i], kTransmissionFloor, 1.0);
    return t;
}

Image bcp_transmission(const Image& image, const Vec3& atmos, int patch) {
    const Scalar a_mean = (atmos.x + atmos.y + atmos.z) / 3.0;
    if (a_mean >= 1) throw InvalidParameter("bcp_transmission: mean atmospheric light must be < 1");
    Image bright = bright_channel(image, patch);
    Image t(image.height, image.width, 1);
    for (size_t i = 0; i < t.size(); ++i)
        t.data[i] = std::clamp((bright.data[i] - a_mean) / (1.0 - a_mean), kTransmissionFloor, 1.0);
    return t;
}

PriorMaps compute_prior_maps(const Image& image, int patch, Scalar omega) {
    PriorMaps maps;
    maps.patch_size = patch;
    maps.omega = omega;
    const Image dark = dark_channel(image, patch);
    maps.a_est = estimate_atmospheric_light(image, dark);
    // Guard against degenerate estimates on synthetic content.
    maps.a_est = {std::clamp(maps.a_est.x, Scalar(0.05), Scalar(1)),
                  std::clamp(maps.a_est.y, Scalar(0.05), Scalar(1)),
                  std::clamp(maps.a_est.z, Scalar(0.05), Scalar(1))};
    maps.t_dcp = dcp_transmission(image, maps.a_est, omega, patch);
    maps.t_bcp = bcp_transmission(image, maps.a_est, patch);
    return maps;
}

MattingLaplacian build_matting_laplacian(const Image& guide, Scalar eps) {
    if (guide.channels != 3) throw InvalidParameter("matting laplacian: guide must be H x W x 3");
    const int h = guide.height, w = guide.width;
    MattingLaplacian lap;
    lap.height = h;
    lap.width = w;
    lap.eps = eps;
    lap.guide = guide;
    if (h < 3 || w < 3) return lap;  // no interior windows
    lap.mean.resize(size_t(h - 2) * (w - 2));
    lap.inv_cov.resize(lap.mean.size());
    for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x) {
            Vec3 mu;
            Mat3 second;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const Vec3 c{guide.at(y + dy, x + dx, 0), guide.at(y + dy, x + dx, 1),
                                 guide.at(y + dy, x + dx, 2)};
                    mu += c;
                    for (int a = 0; a < 3; ++a)
                        for (int b = 0; b < 3; ++b) second.m[a][b] += c[a] * c[b];
                }
            mu = mu * (1.0 / 9.0);
            Mat3 cov;
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) cov.m[a][b] = second.m[a][b] / 9.0 - mu[a] * mu[b];
            for (int a = 0; a < 3; ++a) cov.m[a][a] += eps / 9.0;
            // Direct 3x3 inverse via the adjugate.
            const Scalar det = cov.m[0][0] * (cov.m[1][1] * cov.m[2][2] - cov.m[1][2] * cov.m[2][1]) -
                               cov.m[0][1] * (cov.m[1][0] * cov.m[2][2] - cov.m[1][2] * cov.m[2][0]) +
                               cov.m[0][2] * (cov.m[1][0] * cov.m[2][1] - cov.m[1][1] * cov.m[2][0]);
            Mat3 inv;
            const Scalar id = 1.0 / det;
            inv.m[0][0] = (cov.m[1][1] * cov.m[2][2] - cov.m[1][2] * cov.m[2][1]) * id;
            inv.m[0][1] = (cov.m[0][2] * cov.m[2][1] - cov.m[0][1] * cov.m[2][2]) * id;
            inv.m[0][2] = (cov.m[0][1] * cov.m[1][2] - cov.m[0][2] * cov.m[1][1]) * id;
            inv.m[1][0] = (cov.m[1][2] * cov.m[2][0] - cov.m[1][0] * cov.m[2][2]) * id;
            inv.m[1][1] = (cov.m[0][0] * cov.m[2][2] - cov.m[0][2] * cov.m[2][0]) * id;
            inv.m[1][2] = (cov.m[0][2] * cov.m[1][0] - cov.m[0][0] * cov.m[1][2]) * id;
            inv.m[2][0] = (cov.m[1][0] * cov.m[2][1] - cov.m[1][1] * cov.m[2][0]) * id;
            inv.m[2][1] = (cov.m[0][1] * cov.m[2][0] - cov.m[0][0] * cov.m[2][1]) * id;
            inv.m[2][2] = (cov.m[0][0] * cov.m[1][1] - cov.m[0][1] * cov.m[1][0]) * id;
            const size_t k = size_t(y - 1) * (w - 2) + (x - 1);
            lap.mean[k] = mu;
            lap.inv_cov[k] = inv;
        }
    return lap;
}

Image matting_laplacian_apply(const MattingLaplacian& lap, const Image& x) {
    if (x.height != lap.height || x.width != lap.width || x.channels != 1)
        throw InvalidParameter("matting_laplacian_apply: map shape mismatch");
    const int h = lap.height, w = lap.width;
    Image y(h, w, 1);
    if (h < 3 || w < 3) return y;
    // L x accumulates, per window k containing pixel i:
    //   x_i - (1/9) (s_k + (I_i - mu_k)^T C_k^-1 v_k)
    // with s_k = sum of x over the window and v_k = sum of x (I - mu_k).
    const Image& g = lap.guide;
    for (int wy = 1; wy < h - 1; ++wy)
        for (int wx = 1; wx < w - 1; ++wx) {
            const size_t k = size_t(wy - 1) * (w - 2) + (wx - 1);
            const Vec3& mu = lap.mean[k];
            Scalar s = 0;
            Vec3 v;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int py = wy + dy, px = wx + dx;
                    const Scalar xv = x.at(py, px);
                    s += xv;
                    v += (Vec3{g.at(py, px, 0), g.at(py, px, 1), g.at(py, px, 2)} - mu) * xv;
                }
            const Vec3 q = lap.inv_cov[k] * v;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int py = wy + dy, px = wx + dx;
                    const Vec3 ci = Vec3{g.at(py, px, 0), g.at(py, px, 1), g.at(py, px, 2)} - mu;
                    y.at(py, px) += x.at(py, px) - (s + ci.dot(q)) / 9.0;
                }
        }
    return y;
}

Image downsample_to(const Image& image, int max_res) {
    Image cur = image;
    while (cur.height > max_res || cur.width > max_res) {
        const int oh = (cur.height + 1) / 2, ow = (cur.width + 1) / 2;
        Image next(oh, ow, cur.channels);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                for (int c = 0; c < cur.channels; ++c) {
                    Scalar sum = 0;
                    int count = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const int sy = 2 * y + dy, sx = 2 * x + dx;
                            if (sy < cur.height && sx < cur.width) {
                                sum += cur.at(sy, sx, c);
                                ++count;
                            }
                        }
                    next.at(y, x, c) = sum / count;
                }
        cur = std::move(next);
    }
    return cur;
}

Image downsample_adjoint(const Image& grad_low, int full_height, int full_width) {
    // Mirror the reduction chain to recover intermediate sizes.
    std::vector<std::pair<int, int>> sizes{{full_height, full_width}};
    while (sizes.back().first > grad_low.height || sizes.back().second > grad_low.width)
        sizes.push_back({(sizes.back().first + 1) / 2, (sizes.back().second + 1) / 2});
    if (sizes.back() != std::pair<int, int>{grad_low.height, grad_low.width})
        throw InvalidParameter("downsample_adjoint: gradient size is not a pyramid level of the target");
    Image cur = grad_low;
    for (int level = int(sizes.size()) - 2; level >= 0; --level) {
        const int fh = sizes[level].first, fw = sizes[level].second;
        Image up(fh, fw, cur.channels);
        for (int y = 0; y < cur.height; ++y)
            for (int x = 0; x < cur.width; ++x) {
                int count = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        if (2 * y + dy < fh && 2 * x + dx < fw) ++count;
                for (int c = 0; c < cur.channels; ++c) {
                    const Scalar v = cur.at(y, x, c) / count;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            if (2 * y + dy < fh && 2 * x + dx < fw) up.at(2 * y + dy, 2 * x + dx, c) = v;
                }
            }
        cur = std::move(up);
    }
    return cur;
}

Image matting_laplacian_apply(const Image& guide, const Image& x, int max_res) {
    const Image guide_lo = downsample_to(guide, max_res);
    const Image x_lo = downsample_to(x, max_res);
    return matting_laplacian_apply(build_matting_laplacian(guide_lo), x_lo);
}

LossGrad dcp_loss(const Image& t_rendered, const Image& t_dcp, const Image& guide, Scalar lambda_smooth,
                  bool literal_eq10, int max_res, const MattingLaplacian* prebuilt) {
    if (!t_rendered.same_shape(t_dcp)) throw InvalidParameter("dcp_loss: map shape mismatch");
    LossGrad out;
    out.grad = Image(t_rendered.height, t_rendered.width, 1);

    // Smoothness-to-prior term at full resolution.
    for (size_t i = 0; i < t_rendered.size(); ++i) {
        const Scalar diff = t_dcp.data[i] - t_rendered.data[i];
        out.loss += lambda_smooth * diff * diff;
        out.grad.data[i] += -2.0 * lambda_smooth * diff;
    }

    // Laplacian quadratic on the pyramid level.
    MattingLaplacian local;
    const MattingLaplacian* lap = prebuilt;
    if (!lap) {
        local = build_matting_laplacian(downsample_to(guide, max_res));
        lap = &local;
    }
    const Image& quad_src = literal_eq10 ? t_dcp : t_rendered;
    const Image x_lo = downsample_to(quad_src, max_res);
    if (x_lo.height != lap->height || x_lo.width != lap->width)
        throw InvalidParameter("dcp_loss: guide and transmission resolutions disagree");
    const Image lx = matting_laplacian_apply(*lap, x_lo);
    Scalar quad = 0;
    for (size_t i = 0; i < lx.size(); ++i) quad += x_lo.data[i] * lx.data[i];
    out.loss += quad;
    if (!literal_eq10) {
        Image glow(lx.height, lx.width, 1);
        for (size_t i = 0; i < lx.size(); ++i) glow.data[i] = 2.0 * lx.data[i];
        const Image gfull = downsample_adjoint(glow, t_rendered.height, t_rendered.width);
        for (size_t i = 0; i < gfull.size(); ++i) out.grad.data[i] += gfull.data[i];
    }
    return out;
}

LossGrad bcp_loss(const Image& t_rendered, const Image& t_bcp) {
    if (!t_rendered.same_shape(t_bcp)) throw InvalidParameter("bcp_loss: map shape mismatch");
    LossGrad out;
    out.grad = Image(t_rendered.height, t_rendered.width, 1);
    const Scalar inv = 1.0 / Scalar(t_rendered.size());
    for (size_t i = 0; i < t_rendered.size(); ++i) {
        const Scalar diff = t_bcp.data[i] - t_rendered.data[i];
        out.loss += std::abs(diff) * inv;
        out.grad.data[i] = diff > 0 ? -inv : (diff < 0 ? inv : 0.0);
    }
    return out;
}

}  // namespace fogsplat
