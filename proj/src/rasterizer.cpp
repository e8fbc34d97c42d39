#include "fogsplat/rasterizer.hpp"

#include <numeric>

namespace fogsplat {

std::vector<ProjectedGaussian> project(const GaussianCloud& cloud, const Camera& camera,
                                       const RasterSettings& settings) {
    const size_t n = cloud.size();
    std::vector<ProjectedGaussian> out;
    out.reserve(n);
    // Reference-pipeline FOV guard for the affine approximation.
    const Scalar limx = 1.3 * (camera.width / (2.0 * camera.fx));
    const Scalar limy = 1.3 * (camera.height / (2.0 * camera.fy));
    for (size_t i = 0; i < n; ++i) {
        const Vec3 t_cam = camera.to_camera(cloud.positions[i]);
        if (!(t_cam.z > camera.near_clip)) continue;

        const Scalar z = t_cam.z;
        ProjectedGaussian pg;
        pg.source_index = int(i);
        pg.t_cam = t_cam;
        pg.camera_depth = z;
        pg.mean2d = {camera.fx * t_cam.x / z + camera.cx, camera.fy * t_cam.y / z + camera.cy};

        const Scalar ux = t_cam.x / z, uy = t_cam.y / z;
        pg.clamped_x = ux < -limx || ux > limx;
        pg.clamped_y = uy < -limy || uy > limy;
        const Scalar xt = std::clamp(ux, -limx, limx) * z;
        const Scalar yt = std::clamp(uy, -limy, limy) * z;

        // J W Sigma W^T J^T restricted to the image-plane 2x2 block; rows of
        // M = J * R with J = [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]].
        const Mat3 sigma = build_covariance(cloud.log_scales[i], cloud.rotations[i]);
        const Mat3& r = camera.rotation;
        const Scalar j00 = camera.fx / z, j02 = -camera.fx * xt / (z * z);
        const Scalar j11 = camera.fy / z, j12 = -camera.fy * yt / (z * z);
        Scalar m0[3], m1[3];
        for (int c = 0; c < 3; ++c) {
            m0[c] = j00 * r.m[0][c] + j02 * r.m[2][c];
            m1[c] = j11 * r.m[1][c] + j12 * r.m[2][c];
        }
        Scalar sm0[3], sm1[3];  // Sigma * m_row
        for (int c = 0; c < 3; ++c) {
            sm0[c] = sigma.m[c][0] * m0[0] + sigma.m[c][1] * m0[1] + sigma.m[c][2] * m0[2];
            sm1[c] = sigma.m[c][0] * m1[0] + sigma.m[c][1] * m1[1] + sigma.m[c][2] * m1[2];
        }
        pg.cov2d = {m0[0] * sm0[0] + m0[1] * sm0[1] + m0[2] * sm0[2],
                    m0[0] * sm1[0] + m0[1] * sm1[1] + m0[2] * sm1[2],
                    m1[0] * sm1[0] + m1[1] * sm1[1] + m1[2] * sm1[2]};
        pg.cov2d.xx += settings.dilation;
        pg.cov2d.yy += settings.dilation;

        const Scalar det = pg.cov2d.det();
        if (!(det > 0) || !std::isfinite(det)) continue;  // degenerate numerics: cull
        pg.conic = pg.cov2d.inverse();
        pg.screen_radius = settings.radius_sigmas * std::sqrt(pg.cov2d.max_eigenvalue());

        if (pg.mean2d.x + pg.screen_radius < 0 || pg.mean2d.x - pg.screen_radius > camera.width ||
            pg.mean2d.y + pg.screen_radius < 0 || pg.mean2d.y - pg.screen_radius > camera.height)
            continue;
        out.push_back(pg);
    }
    return out;
}

TileBins bin_and_sort(std::vector<ProjectedGaussian>& projected, int tile_size, int width, int height) {
    if (tile_size <= 0) throw InvalidParameter("bin_and_sort: tile_size must be positive");
    std::stable_sort(projected.begin(), projected.end(), [](const ProjectedGaussian& a, const ProjectedGaussian& b) {
        if (a.camera_depth != b.camera_depth) return a.camera_depth < b.camera_depth;
        return a.source_index < b.source_index;
    });
    TileBins bins;
    bins.tile_size = tile_size;
    bins.tiles_x = (width + tile_size - 1) / tile_size;
    bins.tiles_y = (height + tile_size - 1) / tile_size;
    bins.bins.assign(size_t(bins.tiles_x) * bins.tiles_y, {});
    for (int i = 0; i < int(projected.size()); ++i) {
        const ProjectedGaussian& pg = projected[i];
        const int x0 = std::max(0, int(std::floor((pg.mean2d.x - pg.screen_radius) / tile_size)));
        const int x1 = std::min(bins.tiles_x - 1, int(std::floor((pg.mean2d.x + pg.screen_radius) / tile_size)));
        const int y0 = std::max(0, int(std::floor((pg.mean2d.y - pg.screen_radius) / tile_size)));
        const int y1 = std::min(bins.tiles_y - 1, int(std::floor((pg.mean2d.y + pg.screen_radius) / tile_size)));
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx) bins.bins[size_t(ty) * bins.tiles_x + tx].push_back(i);
    }
    return bins;
}

namespace {

// Cache-dense per-Gaussian state for the compositing walk; one cache line per
// entry, with the support-disc test touching only the first few fields.
struct HotGaussian {
    Scalar mx, my, r2;          // support disc
    Scalar ca, cb, cc;          // conic
    Scalar opacity;
    Scalar power_floor;         // log(alpha_min / opacity) - margin: exponents
                                // below it cannot pass the opacity floor
};

std::vector<HotGaussian> pack_hot(const std::vector<ProjectedGaussian>& projected,
                                  const std::vector<Scalar>& opacities, const RasterSettings& st) {
    std::vector<HotGaussian> hot(projected.size());
    for (size_t i = 0; i < projected.size(); ++i) {
        const ProjectedGaussian& pg = projected[i];
        hot[i] = {pg.mean2d.x,  pg.mean2d.y,  pg.screen_radius * pg.screen_radius,
                  pg.conic.xx,  pg.conic.xy,  pg.conic.yy,
                  opacities[i],
                  opacities[i] > 0 ? std::log(st.alpha_min / opacities[i]) - 1e-9
                                   : std::numeric_limits<Scalar>::infinity()};
    }
    return hot;
}

// Evaluates the contribution at a pixel center; false when the sample is
// skipped (outside the disc, above the exponent guard, below the opacity
// floor). The power_floor precheck only skips samples the exact test would
// also skip, so the exp stays off the skip path.
inline bool sample_alpha(const HotGaussian& hg, Scalar px, Scalar py, const RasterSettings& st,
                         Scalar& alpha, Scalar& gauss, bool& clamped, Vec2& d) {
    d = {px - hg.mx, py - hg.my};
    if (d.norm2() > hg.r2) return false;
    const Scalar power = -0.5 * (hg.ca * d.x * d.x + 2 * hg.cb * d.x * d.y + hg.cc * d.y * d.y);
    if (power > 0 || power < hg.power_floor) return false;
    gauss = fast_exp(power);
    const Scalar raw = hg.opacity * gauss;
    clamped = raw > st.alpha_clamp;
    alpha = clamped ? st.alpha_clamp : raw;
    return alpha >= st.alpha_min;
}

}  // namespace

CompositeOutput composite_forward(const std::vector<ProjectedGaussian>& projected, const TileBins& bins,
                                  const std::vector<Scalar>& opacities, const std::vector<Vec3>& colors,
                                  const std::vector<Scalar>& aux, int n_aux, int width, int height,
                                  const RasterSettings& settings, CompositeState* state) {
    for (const Vec3& c : colors)
        if (!std::isfinite(c.x) || !std::isfinite(c.y) || !std::isfinite(c.z))
            throw NumericalError("composite_forward: non-finite color channel");
    for (Scalar v : aux)
        if (!std::isfinite(v)) throw NumericalError("composite_forward: non-finite aux channel");

    CompositeOutput out;
    out.color = Image(height, width, 3);
    out.aux = Image(height, width, std::max(n_aux, 1));
    out.alpha = Image(height, width, 1);
    out.contrib_counts.assign(size_t(height) * width, 0);
    if (state) {
        state->final_T.assign(size_t(height) * width, 1.0);
        state->last_contrib.assign(size_t(height) * width, -1);
    }

    const int n_tiles = bins.tiles_x * bins.tiles_y;
    const std::vector<HotGaussian> hot = pack_hot(projected, opacities, settings);
    parallel_for(n_tiles, [&](int tile) {
        const std::vector<int>& list = bins.bins[tile];
        const int tx = tile % bins.tiles_x, ty = tile / bins.tiles_x;
        const int px0 = tx * bins.tile_size, py0 = ty * bins.tile_size;
        const int px1 = std::min(width, px0 + bins.tile_size), py1 = std::min(height, py0 + bins.tile_size);
        // Tile-local copy keeps the walk sequential in memory.
        std::vector<HotGaussian> tile_hot(list.size());
        for (size_t k = 0; k < list.size(); ++k) tile_hot[k] = hot[list[k]];
        std::vector<Scalar> aux_acc(n_aux);
        for (int py = py0; py < py1; ++py) {
            for (int px = px0; px < px1; ++px) {
                const Scalar cxp = px + 0.5, cyp = py + 0.5;
                Scalar T = 1.0;
                Vec3 color_acc;
                std::fill(aux_acc.begin(), aux_acc.end(), 0.0);
                int count = 0;
                int last = -1;
                for (int k = 0; k < int(list.size()); ++k) {
                    Scalar alpha, gauss;
                    bool clamped;
                    Vec2 d;
                    if (!sample_alpha(tile_hot[k], cxp, cyp, settings, alpha, gauss, clamped, d))
                        continue;
                    const Scalar next_T = T * (1 - alpha);
                    if (next_T < settings.transmittance_min) break;  // terminate before compositing
                    const Scalar w = alpha * T;
                    color_acc += colors[list[k]] * w;
                    for (int m = 0; m < n_aux; ++m) aux_acc[m] += aux[size_t(list[k]) * n_aux + m] * w;
                    T = next_T;
                    ++count;
                    last = k;
                }
                const size_t pix = size_t(py) * width + px;
                out.color.at(py, px, 0) = color_acc.x + settings.background.x * T;
                out.color.at(py, px, 1) = color_acc.y + settings.background.y * T;
                out.color.at(py, px, 2) = color_acc.z + settings.background.z * T;
                for (int m = 0; m < n_aux; ++m) out.aux.at(py, px, m) = aux_acc[m];
                out.alpha.at(py, px) = 1.0 - T;
                out.contrib_counts[pix] = count;
                if (state) {
                    state->final_T[pix] = T;
                    state->last_contrib[pix] = last;
                }
            }
        }
    });
    return out;
}

CompositeGrads composite_backward(const std::vector<ProjectedGaussian>& projected, const TileBins& bins,
                                  const std::vector<Scalar>& opacities, const std::vector<Vec3>& colors,
                                  const std::vector<Scalar>& aux, int n_aux, int width, int height,
                                  const RasterSettings& settings, const CompositeState& state,
                                  const Image* grad_color, const Image* grad_aux, const Image* grad_alpha) {
    if (state.final_T.size() != size_t(height) * width || state.last_contrib.size() != size_t(height) * width)
        throw NumericalError("composite_backward: replay state does not match the image size");
    if (grad_aux && grad_aux->channels != n_aux)
        throw NumericalError("composite_backward: aux gradient channel count mismatch");

    const size_t n = projected.size();
    CompositeGrads grads;
    grads.colors.assign(n, Vec3{});
    grads.aux.assign(n * n_aux, 0.0);
    grads.opacities.assign(n, 0.0);
    grads.mean2d.assign(n, Vec2{});
    grads.conic.assign(n, Sym2{});

    const int n_tiles = bins.tiles_x * bins.tiles_y;
    const std::vector<HotGaussian> hot = pack_hot(projected, opacities, settings);
    struct TileGrads {
        std::vector<Vec3> colors;
        std::vector<Scalar> aux;
        std::vector<Scalar> opacities;
        std::vector<Vec2> mean2d;
        std::vector<Sym2> conic;
    };
    std::vector<TileGrads> locals(n_tiles);

    parallel_for(n_tiles, [&](int tile) {
        const std::vector<int>& list = bins.bins[tile];
        if (list.empty()) return;
        TileGrads& lg = locals[tile];
        lg.colors.assign(list.size(), Vec3{});
        lg.aux.assign(list.size() * n_aux, 0.0);
        lg.opacities.assign(list.size(), 0.0);
        lg.mean2d.assign(list.size(), Vec2{});
        lg.conic.assign(list.size(), Sym2{});

        const int tx = tile % bins.tiles_x, ty = tile / bins.tiles_x;
        const int px0 = tx * bins.tile_size, py0 = ty * bins.tile_size;
        const int px1 = std::min(width, px0 + bins.tile_size), py1 = std::min(height, py0 + bins.tile_size);
        std::vector<HotGaussian> tile_hot(list.size());
        for (size_t k = 0; k < list.size(); ++k) tile_hot[k] = hot[list[k]];
        std::vector<Scalar> aux_up(n_aux), aux_accum(n_aux);
        for (int py = py0; py < py1; ++py) {
            for (int px = px0; px < px1; ++px) {
                const size_t pix = size_t(py) * width + px;
                const int last = state.last_contrib[pix];
                if (last < 0) continue;
                const Scalar final_T = state.final_T[pix];

                Vec3 color_up;
                if (grad_color)
                    color_up = {grad_color->at(py, px, 0), grad_color->at(py, px, 1), grad_color->at(py, px, 2)};
                for (int m = 0; m < n_aux; ++m) aux_up[m] = grad_aux ? grad_aux->at(py, px, m) : 0.0;
                const Scalar alpha_up = grad_alpha ? grad_alpha->at(py, px) : 0.0;
                const Scalar bg_dot = settings.background.dot(color_up);

                const Scalar cxp = px + 0.5, cyp = py + 0.5;
                Scalar T = final_T;
                Vec3 color_accum;  // composited color strictly behind the current sample
                std::fill(aux_accum.begin(), aux_accum.end(), 0.0);
                for (int k = last; k >= 0; --k) {
                    const int j = list[k];
                    const HotGaussian& hg = tile_hot[k];
                    Scalar alpha, gauss;
                    bool clamped;
                    Vec2 d;
                    if (!sample_alpha(hg, cxp, cyp, settings, alpha, gauss, clamped, d)) continue;
                    const Scalar one_minus = 1 - alpha;
                    T = T / one_minus;  // transmittance in front of this sample
                    const Scalar w = alpha * T;

                    lg.colors[k] += color_up * w;
                    Scalar da = (colors[j] - color_accum).dot(color_up) * T;
                    for (int m = 0; m < n_aux; ++m) {
                        const Scalar v = aux[size_t(j) * n_aux + m];
                        lg.aux[size_t(k) * n_aux + m] += aux_up[m] * w;
                        da += (v - aux_accum[m]) * T * aux_up[m];
                        aux_accum[m] = alpha * v + one_minus * aux_accum[m];
                    }
                    da += (alpha_up - bg_dot) * final_T / one_minus;
                    color_accum = colors[j] * alpha + color_accum * one_minus;

                    if (!clamped) {
                        lg.opacities[k] += gauss * da;
                        const Scalar dpower = gauss * hg.opacity * da;
                        // power = -0.5 d^T conic d with d = pixel - mean.
                        lg.mean2d[k].x += dpower * (hg.ca * d.x + hg.cb * d.y);
                        lg.mean2d[k].y += dpower * (hg.cb * d.x + hg.cc * d.y);
                        lg.conic[k].xx += dpower * (-0.5 * d.x * d.x);
                        lg.conic[k].xy += dpower * (-d.x * d.y);
                        lg.conic[k].yy += dpower * (-0.5 * d.y * d.y);
                    }
                }
            }
        }
    });

    // Deterministic reduction in fixed tile order.
    for (int tile = 0; tile < n_tiles; ++tile) {
        const std::vector<int>& list = bins.bins[tile];
        const TileGrads& lg = locals[tile];
        if (lg.colors.empty()) continue;
        for (size_t k = 0; k < list.size(); ++k) {
            const int j = list[k];
            grads.colors[j] += lg.colors[k];
            for (int m = 0; m < n_aux; ++m) grads.aux[size_t(j) * n_aux + m] += lg.aux[size_t(k) * n_aux + m];
            grads.opacities[j] += lg.opacities[k];
            grads.mean2d[j] = grads.mean2d[j] + lg.mean2d[k];
            grads.conic[j].xx += lg.conic[k].xx;
            grads.conic[j].xy += lg.conic[k].xy;
            grads.conic[j].yy += lg.conic[k].yy;
        }
    }
    return grads;
}

RenderMode parse_render_mode(const std::string& name) {
    if (name == "foggy") return RenderMode::Foggy;
    if (name == "clear") return RenderMode::Clear;
    if (name == "transmission") return RenderMode::Transmission;
    if (name == "depth") return RenderMode::Depth;
    throw InvalidParameter("unknown render mode '" + name + "'");
}

RenderOutput render(const GaussianCloud& cloud, const Camera& camera, const FogParams* fog,
                    RenderMode mode, const RasterSettings& settings, RenderContext* ctx_out,
                    const std::vector<Scalar>* frozen_t_by_source) {
    camera.validate();
    const bool needs_fog = mode == RenderMode::Foggy || mode == RenderMode::Transmission;
    if (needs_fog && !fog)
        throw InvalidParameter("render: fog parameters required for foggy/transmission modes");

    RenderContext local;
    RenderContext& ctx = ctx_out ? *ctx_out : local;
    ctx = RenderContext{};
    ctx.settings = settings;
    ctx.mode = mode;
    ctx.has_fog = fog != nullptr;
    ctx.width = camera.width;
    ctx.height = camera.height;
    ctx.camera = camera;

    const ActivatedGaussians act = activate(cloud);
    ctx.projected = project(cloud, camera, settings);
    ctx.bins = bin_and_sort(ctx.projected, settings.tile_size, camera.width, camera.height);

    const size_t m = ctx.projected.size();
    ctx.opacities.resize(m);
    ctx.clear_colors.resize(m);
    const Vec3 cam_center = camera.center();
    if (cloud.sh_degree > 0) {
        ctx.sh_dirs.resize(m);
        ctx.sh_dir_len.resize(m);
    }
    for (size_t i = 0; i < m; ++i) {
        const int src = ctx.projected[i].source_index;
        ctx.opacities[i] = act.opacities[src];
        Vec3 dir{0, 0, 1};
        if (cloud.sh_degree > 0) {
            const Vec3 rel = cloud.positions[src] - cam_center;
            const Scalar len = rel.norm();
            dir = len > 0 ? rel * (1.0 / len) : Vec3{0, 0, 1};
            ctx.sh_dirs[i] = dir;
            ctx.sh_dir_len[i] = len;
        }
        ctx.clear_colors[i] = sh_eval(cloud.sh_degree, cloud.coeffs(src), dir);
    }

    if (ctx.has_fog) {
        std::vector<Scalar> depths(m);
        for (size_t i = 0; i < m; ++i) depths[i] = ctx.projected[i].camera_depth;
        if (m > 0) {
            const std::vector<Scalar> d_norm = normalize_depths(depths);
            ctx.t_values = gaussian_transmission(d_norm, *fog, &ctx.t_cache);
        }
        if (frozen_t_by_source)
            for (size_t i = 0; i < m; ++i)
                ctx.t_values[i] = (*frozen_t_by_source)[ctx.projected[i].source_index];
        ctx.n_aux = 2;
        ctx.t_aux = 0;
        ctx.depth_aux = 1;
    } else {
        ctx.n_aux = 1;
        ctx.t_aux = -1;
        ctx.depth_aux = 0;
    }

    const bool foggy_channels = mode == RenderMode::Foggy || mode == RenderMode::Transmission;
    ctx.channel_color = foggy_channels ? fog_colors(ctx.clear_colors, ctx.t_values, *fog) : ctx.clear_colors;

    std::vector<Scalar> aux(m * ctx.n_aux);
    for (size_t i = 0; i < m; ++i) {
        if (ctx.t_aux >= 0) aux[i * ctx.n_aux + ctx.t_aux] = ctx.t_values[i];
        aux[i * ctx.n_aux + ctx.depth_aux] = ctx.projected[i].camera_depth;
    }

    CompositeOutput co = composite_forward(ctx.projected, ctx.bins, ctx.opacities, ctx.channel_color,
                                           aux, ctx.n_aux, camera.width, camera.height, settings, &ctx.state);

    RenderOutput out;
    out.color = std::move(co.color);
    out.alpha = std::move(co.alpha);
    out.contrib_counts = std::move(co.contrib_counts);
    out.depth = Image(camera.height, camera.width, 1);
    out.transmission = Image(camera.height, camera.width, 1);
    for (int y = 0; y < camera.height; ++y)
        for (int x = 0; x < camera.width; ++x) {
            out.depth.at(y, x) = co.aux.at(y, x, ctx.depth_aux);
            if (ctx.t_aux >= 0) out.transmission.at(y, x) = co.aux.at(y, x, ctx.t_aux);
        }
    return out;
}

RenderGrads render_backward(const RenderContext& ctx, const GaussianCloud& cloud, const FogParams* fog,
                            const Image* grad_color, const Image* grad_depth,
                            const Image* grad_transmission, const Image* grad_alpha) {
    static const FogParams kNoFog;
    if (ctx.has_fog && !fog)
        throw InvalidParameter("render_backward: context was rendered with fog but none was given");
    RenderGrads out(cloud, fog ? *fog : kNoFog);
    const size_t m = ctx.projected.size();
    if (m == 0) return out;

    // Reassemble the aux channel values and upstream gradients.
    std::vector<Scalar> aux(m * ctx.n_aux);
    for (size_t i = 0; i < m; ++i) {
        if (ctx.t_aux >= 0) aux[i * ctx.n_aux + ctx.t_aux] = ctx.t_values[i];
        aux[i * ctx.n_aux + ctx.depth_aux] = ctx.projected[i].camera_depth;
    }
    Image grad_aux(ctx.height, ctx.width, ctx.n_aux);
    for (int y = 0; y < ctx.height; ++y)
        for (int x = 0; x < ctx.width; ++x) {
            if (grad_depth) grad_aux.at(y, x, ctx.depth_aux) = grad_depth->at(y, x);
            if (ctx.t_aux >= 0 && grad_transmission) grad_aux.at(y, x, ctx.t_aux) = grad_transmission->at(y, x);
        }

    const CompositeGrads cg =
        composite_backward(ctx.projected, ctx.bins, ctx.opacities, ctx.channel_color, aux, ctx.n_aux,
                           ctx.width, ctx.height, ctx.settings, ctx.state, grad_color, &grad_aux, grad_alpha);

    // Per-Gaussian channel gradients -> fog chain -> clear colors.
    std::vector<Vec3> grad_clear(m, Vec3{});
    std::vector<Scalar> grad_t;
    const bool foggy_channels = ctx.mode == RenderMode::Foggy || ctx.mode == RenderMode::Transmission;
    if (ctx.has_fog) {
        grad_t.assign(m, 0.0);
        for (size_t i = 0; i < m; ++i) grad_t[i] = cg.aux[i * ctx.n_aux + ctx.t_aux];
    }
    if (foggy_channels) {
        fog_colors_backward(cg.colors, ctx.clear_colors, ctx.t_values, *fog, grad_clear, grad_t,
                            out.fog.atmos_latent);
    } else {
        grad_clear = cg.colors;
    }
    if (ctx.has_fog && !ctx.t_cache.d_norm.empty())
        gaussian_transmission_backward(grad_t, *fog, ctx.t_cache, out.fog.beta_weights);

    const ActivatedGaussians act = activate(cloud);
    const Camera& camera = ctx.camera;
    const Scalar limx = 1.3 * (camera.width / (2.0 * camera.fx));
    const Scalar limy = 1.3 * (camera.height / (2.0 * camera.fy));

    for (size_t i = 0; i < m; ++i) {
        const ProjectedGaussian& pg = ctx.projected[i];
        const int src = pg.source_index;
        out.visible[src] = 1;
        out.viewspace_grad_norm[src] += std::sqrt(cg.mean2d[i].norm2());

        // SH color chain (and its view-direction path into position).
        std::span<Scalar> gc{out.cloud.color_coeffs.data() + size_t(src) * cloud.coeffs_per_gaussian(),
                             size_t(cloud.coeffs_per_gaussian())};
        const Vec3 dir = cloud.sh_degree > 0 ? ctx.sh_dirs[i] : Vec3{0, 0, 1};
        const Vec3 gdir = sh_eval_backward(cloud.sh_degree, cloud.coeffs(src), dir, grad_clear[i], gc);
        if (cloud.sh_degree > 0) {
            const Scalar len = ctx.sh_dir_len[i];
            if (len > 0) {
                const Scalar inv = 1.0 / len;
                const Scalar dot = dir.dot(gdir);
                out.cloud.positions[src] += (gdir - dir * dot) * inv;
            }
        }

        // Opacity latent through the logistic.
        const Scalar a = act.opacities[src];
        out.cloud.opacity_latents[src] += cg.opacities[i] * a * (1 - a);

        // conic -> cov2d: dCov = -K G K with K = conic, G the symmetric-matrix
        // form of the packed (xx, xy, yy) gradient.
        const Sym2& K = pg.conic;
        const Scalar gxx = cg.conic[i].xx, gxy2 = cg.conic[i].xy * 0.5, gyy = cg.conic[i].yy;
        // G*K columns.
        const Scalar gk00 = gxx * K.xx + gxy2 * K.xy, gk01 = gxx * K.xy + gxy2 * K.yy;
        const Scalar gk10 = gxy2 * K.xx + gyy * K.xy, gk11 = gxy2 * K.xy + gyy * K.yy;
        // -K * (G*K).
        const Scalar dc00 = -(K.xx * gk00 + K.xy * gk10);
        const Scalar dc01 = -(K.xx * gk01 + K.xy * gk11);
        const Scalar dc10 = -(K.xy * gk00 + K.yy * gk10);
        const Scalar dc11 = -(K.xy * gk01 + K.yy * gk11);
        // Symmetric 2x2 upstream for Sigma' (the +dilation shift is additive).
        const Scalar s00 = dc00, s01 = 0.5 * (dc01 + dc10), s11 = dc11;

        // Rebuild M = J * R used in the forward projection.
        const Vec3 t_cam = pg.t_cam;
        const Scalar z = t_cam.z;
        const Scalar ux = t_cam.x / z, uy = t_cam.y / z;
        const Scalar xt = std::clamp(ux, -limx, limx) * z;
        const Scalar yt = std::clamp(uy, -limy, limy) * z;
        const Scalar j00 = camera.fx / z, j02 = -camera.fx * xt / (z * z);
        const Scalar j11 = camera.fy / z, j12 = -camera.fy * yt / (z * z);
        const Mat3& r = camera.rotation;
        Scalar m0[3], m1[3];
        for (int c = 0; c < 3; ++c) {
            m0[c] = j00 * r.m[0][c] + j02 * r.m[2][c];
            m1[c] = j11 * r.m[1][c] + j12 * r.m[2][c];
        }
        const Mat3 sigma = build_covariance(cloud.log_scales[src], cloud.rotations[src]);

        // dL/dSigma = M^T G' M.
        Mat3 gsigma;
        for (int a3 = 0; a3 < 3; ++a3)
            for (int b3 = 0; b3 < 3; ++b3)
                gsigma.m[a3][b3] = m0[a3] * s00 * m0[b3] + m0[a3] * s01 * m1[b3] +
                                   m1[a3] * s01 * m0[b3] + m1[a3] * s11 * m1[b3];
        Vec3 gls;
        Quat grot;
        build_covariance_backward(gsigma, cloud.log_scales[src], cloud.rotations[src], gls, grot);
        out.cloud.log_scales[src] += gls;
        for (int q = 0; q < 4; ++q) out.cloud.rotations[src][q] += grot[q];

        // dL/dM = 2 G' M Sigma, then dL/dJ = dL/dM R^T.
        Scalar sm0[3], sm1[3];
        for (int c = 0; c < 3; ++c) {
            sm0[c] = sigma.m[c][0] * m0[0] + sigma.m[c][1] * m0[1] + sigma.m[c][2] * m0[2];
            sm1[c] = sigma.m[c][0] * m1[0] + sigma.m[c][1] * m1[1] + sigma.m[c][2] * m1[2];
        }
        Scalar gm0[3], gm1[3];
        for (int c = 0; c < 3; ++c) {
            gm0[c] = 2 * (s00 * sm0[c] + s01 * sm1[c]);
            gm1[c] = 2 * (s01 * sm0[c] + s11 * sm1[c]);
        }
        const Scalar gj00 = gm0[0] * r.m[0][0] + gm0[1] * r.m[0][1] + gm0[2] * r.m[0][2];
        const Scalar gj02 = gm0[0] * r.m[2][0] + gm0[1] * r.m[2][1] + gm0[2] * r.m[2][2];
        const Scalar gj11 = gm1[0] * r.m[1][0] + gm1[1] * r.m[1][1] + gm1[2] * r.m[1][2];
        const Scalar gj12 = gm1[0] * r.m[2][0] + gm1[1] * r.m[2][1] + gm1[2] * r.m[2][2];

        Scalar gx = 0, gy = 0, gz = 0;
        gz += gj00 * (-camera.fx / (z * z));
        gz += gj11 * (-camera.fy / (z * z));
        const Scalar gxt = gj02 * (-camera.fx / (z * z));
        const Scalar gyt = gj12 * (-camera.fy / (z * z));
        gz += gj02 * (2 * camera.fx * xt / (z * z * z));
        gz += gj12 * (2 * camera.fy * yt / (z * z * z));
        if (pg.clamped_x)
            gz += gxt * (ux > 0 ? limx : -limx);
        else
            gx += gxt;
        if (pg.clamped_y)
            gz += gyt * (uy > 0 ? limy : -limy);
        else
            gy += gyt;

        // mean2d = (fx x / z + cx, fy y / z + cy).
        gx += cg.mean2d[i].x * camera.fx / z;
        gz -= cg.mean2d[i].x * camera.fx * t_cam.x / (z * z);
        gy += cg.mean2d[i].y * camera.fy / z;
        gz -= cg.mean2d[i].y * camera.fy * t_cam.y / (z * z);

        // Depth channel value is the camera-space z itself.
        gz += cg.aux[i * ctx.n_aux + ctx.depth_aux];

        const Vec3 gpos = camera.rotation.transpose() * Vec3{gx, gy, gz};
        out.cloud.positions[src] += gpos;
    }
    return out;
}

}  // namespace fogsplat
