#include "fogsplat/optimizer.hpp"

#include <iostream>
#include <sstream>

namespace fogsplat {

TrainConfig preset_config(const std::string& name) {
    TrainConfig config;
    if (name == "synthetic") {
        config.iterations = 30000;
    } else if (name == "real") {
        config.iterations = 3000;
    } else {
        throw InvalidParameter("unknown preset '" + name + "' (expected synthetic or real)");
    }
    return config;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["iterations"] = c.iterations;
    j["seed"] = c.seed;
    j["lr_position"] = c.lr_position;
    j["lr_position_final"] = c.lr_position_final;
    j["lr_scale"] = c.lr_scale;
    j["lr_rotation"] = c.lr_rotation;
    j["lr_opacity"] = c.lr_opacity;
    j["lr_color"] = c.lr_color;
    j["lr_beta"] = c.lr_beta;
    j["beta_lr_decay"] = c.beta_lr_decay;
    j["beta_l2"] = c.beta_l2;
    j["lr_atmos"] = c.lr_atmos;
    j["densify_enabled"] = c.densify_enabled;
    j["densify_interval"] = c.densify_interval;
    j["densify_start"] = c.densify_start;
    j["densify_stop"] = c.densify_stop;
    j["densify_grad_threshold"] = c.densify_grad_threshold;
    j["prune_opacity"] = c.prune_opacity;
    j["percent_dense"] = c.percent_dense;
    j["lambda_ssim"] = c.weights.lambda_ssim;
    j["lambda_dcp"] = c.weights.lambda_dcp;
    j["lambda_bcp"] = c.weights.lambda_bcp;
    j["lambda_d_rec"] = c.weights.lambda_d_rec;
    j["depth_start"] = c.weights.depth_start;
    j["depth_end"] = c.weights.depth_end;
    j["lambda_smooth"] = c.weights.lambda_smooth;
    j["enable_dcp"] = c.weights.enable_dcp;
    j["enable_bcp"] = c.weights.enable_bcp;
    j["enable_depth"] = c.weights.enable_depth;
    j["enable_dweighted"] = c.weights.enable_dweighted;
    j["use_sigmoid"] = c.use_sigmoid;
    j["fog_enabled"] = c.fog_enabled;
    j["literal_eq10"] = c.literal_eq10;
    j["sh_degree"] = c.sh_degree;
    j["prior_patch"] = c.prior_patch;
    j["prior_omega"] = c.prior_omega;
    j["laplacian_max_res"] = c.laplacian_max_res;
    j["tile_size"] = c.raster.tile_size;
    j["background"] = std::vector<Scalar>{c.raster.background.x, c.raster.background.y, c.raster.background.z};
    j["checkpoint_interval"] = c.checkpoint_interval;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.seed = j.value("seed", c.seed);
    c.lr_position = j.value("lr_position", c.lr_position);
    c.lr_position_final = j.value("lr_position_final", c.lr_position_final);
    c.lr_scale = j.value("lr_scale", c.lr_scale);
    c.lr_rotation = j.value("lr_rotation", c.lr_rotation);
    c.lr_opacity = j.value("lr_opacity", c.lr_opacity);
    c.lr_color = j.value("lr_color", c.lr_color);
    c.lr_beta = j.value("lr_beta", c.lr_beta);
    c.beta_lr_decay = j.value("beta_lr_decay", c.beta_lr_decay);
    c.beta_l2 = j.value("beta_l2", c.beta_l2);
    c.lr_atmos = j.value("lr_atmos", c.lr_atmos);
    c.densify_enabled = j.value("densify_enabled", c.densify_enabled);
    c.densify_interval = j.value("densify_interval", c.densify_interval);
    c.densify_start = j.value("densify_start", c.densify_start);
    c.densify_stop = j.value("densify_stop", c.densify_stop);
    c.densify_grad_threshold = j.value("densify_grad_threshold", c.densify_grad_threshold);
    c.prune_opacity = j.value("prune_opacity", c.prune_opacity);
    c.percent_dense = j.value("percent_dense", c.percent_dense);
    c.weights.lambda_ssim = j.value("lambda_ssim", c.weights.lambda_ssim);
    c.weights.lambda_dcp = j.value("lambda_dcp", c.weights.lambda_dcp);
    c.weights.lambda_bcp = j.value("lambda_bcp", c.weights.lambda_bcp);
    c.weights.lambda_d_rec = j.value("lambda_d_rec", c.weights.lambda_d_rec);
    c.weights.depth_start = j.value("depth_start", c.weights.depth_start);
    c.weights.depth_end = j.value("depth_end", c.weights.depth_end);
    c.weights.lambda_smooth = j.value("lambda_smooth", c.weights.lambda_smooth);
    c.weights.enable_dcp = j.value("enable_dcp", c.weights.enable_dcp);
    c.weights.enable_bcp = j.value("enable_bcp", c.weights.enable_bcp);
    c.weights.enable_depth = j.value("enable_depth", c.weights.enable_depth);
    c.weights.enable_dweighted = j.value("enable_dweighted", c.weights.enable_dweighted);
    c.use_sigmoid = j.value("use_sigmoid", c.use_sigmoid);
    c.fog_enabled = j.value("fog_enabled", c.fog_enabled);
    c.literal_eq10 = j.value("literal_eq10", c.literal_eq10);
    c.sh_degree = j.value("sh_degree", c.sh_degree);
    c.prior_patch = j.value("prior_patch", c.prior_patch);
    c.prior_omega = j.value("prior_omega", c.prior_omega);
    c.laplacian_max_res = j.value("laplacian_max_res", c.laplacian_max_res);
    c.raster.tile_size = j.value("tile_size", c.raster.tile_size);
    if (j.contains("background")) {
        const auto& bg = j.at("background");
        c.raster.background = {bg[0], bg[1], bg[2]};
    }
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    return c;
}

bool adam_step(std::span<Scalar> params, std::span<const Scalar> grads, AdamState& state, Scalar lr,
               Scalar beta1, Scalar beta2, Scalar eps) {
    if (params.size() != grads.size()) throw InvalidParameter("adam_step: shape mismatch");
    for (Scalar g : grads)
        if (!std::isfinite(g)) return false;
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    ++state.step;
    const Scalar bc1 = 1.0 - std::pow(beta1, Scalar(state.step));
    const Scalar bc2 = 1.0 - std::pow(beta2, Scalar(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * grads[i] * grads[i];
        const Scalar mhat = state.m[i] / bc1;
        const Scalar vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    return true;
}

ViewPriors build_view_priors(const Image& foggy, const TrainConfig& config) {
    ViewPriors vp;
    const PriorMaps maps = compute_prior_maps(foggy, config.prior_patch, config.prior_omega);
    vp.t_dcp = maps.t_dcp;
    vp.t_bcp = maps.t_bcp;
    vp.guide_lo = downsample_to(foggy, config.laplacian_max_res);
    vp.lap = build_matting_laplacian(vp.guide_lo);
    return vp;
}

ViewLossResult view_loss(const GaussianCloud& cloud, const FogParams& fog, const Camera& camera,
                         const Image& target_foggy, const Image* pseudo_depth, const ViewPriors* priors,
                         const TrainConfig& config, int iter, bool compute_grads, const FrozenAux* frozen) {
    RenderContext ctx;
    const RenderMode mode = config.fog_enabled ? RenderMode::Foggy : RenderMode::Clear;
    const FogParams* fog_ptr = config.fog_enabled ? &fog : nullptr;
    // An empty t_by_source in an otherwise valid freeze means "let the
    // transmissions move" (used when probing the scattering parameters).
    const std::vector<Scalar>* frozen_t =
        (frozen && frozen->valid && config.fog_enabled && !frozen->t_by_source.empty())
            ? &frozen->t_by_source
            : nullptr;
    const RenderOutput rendered = render(cloud, camera, fog_ptr, mode, config.raster, &ctx, frozen_t);

    ViewLossResult result{LossReport{}, RenderGrads(cloud, fog), FrozenAux{}};

    const LossGradPair rec = reconstruction_loss(rendered.color, target_foggy, config.weights.lambda_ssim);

    const bool dcp_on = config.weights.enable_dcp && config.fog_enabled && priors;
    const bool bcp_on = config.weights.enable_bcp && config.fog_enabled && priors;
    const bool depth_on = config.weights.enable_depth && pseudo_depth && pseudo_depth->size() > 0;
    const bool dweighted_on = config.weights.enable_dweighted;

    LossGrad dcp{}, bcp{};
    if (dcp_on)
        dcp = dcp_loss(rendered.transmission, priors->t_dcp, priors->guide_lo, config.weights.lambda_smooth,
                       config.literal_eq10, config.laplacian_max_res, &priors->lap);
    if (bcp_on) bcp = bcp_loss(rendered.transmission, priors->t_bcp);

    DepthLossResult depth{};
    if (depth_on) {
        const Scalar* fa = (frozen && frozen->valid) ? &frozen->align_a : nullptr;
        const Scalar* fb = (frozen && frozen->valid) ? &frozen->align_b : nullptr;
        depth = depth_loss(rendered.depth, *pseudo_depth, fa, fb);
    }

    const Image& weight_depth = (frozen && frozen->valid) ? frozen->depth_map : rendered.depth;
    LossGradPair dweighted{};
    if (dweighted_on) dweighted = depth_weighted_recon(rendered.color, target_foggy, weight_depth);

    LossWeights effective = config.weights;
    effective.enable_dcp = dcp_on;
    effective.enable_bcp = bcp_on;
    effective.enable_depth = depth_on;
    effective.enable_dweighted = dweighted_on;
    result.report =
        total_loss(rec.loss, dcp.loss, bcp.loss, depth.loss, dweighted.loss, effective, iter, config.iterations);

    // Record the values a finite-difference probe must hold fixed.
    result.frozen.valid = true;
    if (config.fog_enabled) {
        result.frozen.t_by_source.assign(cloud.size(), 1.0);
        for (size_t i = 0; i < ctx.projected.size(); ++i)
            result.frozen.t_by_source[ctx.projected[i].source_index] = ctx.t_values[i];
    }
    result.frozen.depth_map = rendered.depth;
    result.frozen.align_a = depth.a;
    result.frozen.align_b = depth.b;
    result.frozen.align_degenerate = depth.degenerate;

    if (!compute_grads) return result;

    Image grad_color = rec.grad;
    if (dweighted_on)
        for (size_t i = 0; i < grad_color.size(); ++i)
            grad_color.data[i] += config.weights.lambda_d_rec * dweighted.grad.data[i];

    Image grad_transmission;
    if (dcp_on || bcp_on) {
        grad_transmission = Image(rendered.transmission.height, rendered.transmission.width, 1);
        if (dcp_on)
            for (size_t i = 0; i < grad_transmission.size(); ++i)
                grad_transmission.data[i] += config.weights.lambda_dcp * dcp.grad.data[i];
        if (bcp_on)
            for (size_t i = 0; i < grad_transmission.size(); ++i)
                grad_transmission.data[i] += config.weights.lambda_bcp * bcp.grad.data[i];
    }

    Image grad_depth;
    if (depth_on) {
        grad_depth = Image(rendered.depth.height, rendered.depth.width, 1);
        for (size_t i = 0; i < grad_depth.size(); ++i)
            grad_depth.data[i] = result.report.depth_lambda * depth.grad.data[i];
    }

    result.grads = render_backward(ctx, cloud, fog_ptr, &grad_color, depth_on ? &grad_depth : nullptr,
                                   (dcp_on || bcp_on) ? &grad_transmission : nullptr, nullptr);
    if (config.fog_enabled && config.beta_l2 > 0)
        for (size_t k = 0; k < fog.beta_weights.size(); ++k)
            result.grads.fog.beta_weights[k] += 2 * config.beta_l2 * fog.beta_weights[k];
    return result;
}

namespace {

// Copies per-Gaussian moment blocks for survivors; newborns start at zero.
void remap_adam(AdamState& state, const std::vector<int>& source_of_new, int stride) {
    if (state.m.empty()) return;
    std::vector<Scalar> m(source_of_new.size() * stride, 0.0), v(source_of_new.size() * stride, 0.0);
    for (size_t i = 0; i < source_of_new.size(); ++i) {
        const int src = source_of_new[i];
        if (src < 0) continue;
        for (int k = 0; k < stride; ++k) {
            m[i * stride + k] = state.m[size_t(src) * stride + k];
            v[i * stride + k] = state.v[size_t(src) * stride + k];
        }
    }
    state.m = std::move(m);
    state.v = std::move(v);
}

}  // namespace

DensifyStats densify_and_prune(GaussianCloud& cloud, TrainState& state, const TrainConfig& config,
                               Scalar extent) {
    const size_t n = cloud.size();
    const ActivatedGaussians act = activate(cloud);
    DensifyStats stats;

    GaussianCloud next;
    next.sh_degree = cloud.sh_degree;
    const int cpg = cloud.coeffs_per_gaussian();
    std::vector<int> source_of_new;  // -1 marks a newborn

    auto append = [&](size_t src, const Vec3& pos, const Vec3& log_scale, bool newborn) {
        next.positions.push_back(pos);
        next.log_scales.push_back(log_scale);
        next.rotations.push_back(cloud.rotations[src]);
        next.opacity_latents.push_back(cloud.opacity_latents[src]);
        for (int k = 0; k < cpg; ++k) next.color_coeffs.push_back(cloud.color_coeffs[src * cpg + k]);
        source_of_new.push_back(newborn ? -1 : int(src));
    };

    const Scalar size_limit = config.percent_dense * extent;
    const Scalar split_shrink = std::log(1.6);
    for (size_t i = 0; i < n; ++i) {
        if (act.opacities[i] < config.prune_opacity) {
            ++stats.pruned;
            continue;
        }
        const Scalar avg_grad = state.grad_count[i] > 0 ? state.grad_norm_accum[i] / state.grad_count[i] : 0;
        const Scalar max_scale = std::max({act.scales[i].x, act.scales[i].y, act.scales[i].z});
        if (avg_grad > config.densify_grad_threshold) {
            if (max_scale <= size_limit) {
                append(i, cloud.positions[i], cloud.log_scales[i], false);
                append(i, cloud.positions[i], cloud.log_scales[i], true);
                ++stats.cloned;
            } else {
                const Mat3 rot = quat_to_rotation(act.unit_rotations[i]);
                const Vec3 shrunk = cloud.log_scales[i] - Vec3{split_shrink, split_shrink, split_shrink};
                for (int s = 0; s < 2; ++s) {
                    const Vec3 local{gaussian(state.rng) * act.scales[i].x,
                                     gaussian(state.rng) * act.scales[i].y,
                                     gaussian(state.rng) * act.scales[i].z};
                    append(i, cloud.positions[i] + rot * local, shrunk, true);
                }
                ++stats.split;
            }
        } else {
            append(i, cloud.positions[i], cloud.log_scales[i], false);
        }
    }
    if (next.positions.empty()) return stats;  // refuse to empty the scene

    remap_adam(state.positions, source_of_new, 3);
    remap_adam(state.log_scales, source_of_new, 3);
    remap_adam(state.rotations, source_of_new, 4);
    remap_adam(state.opacities, source_of_new, 1);
    remap_adam(state.colors, source_of_new, cpg);

    cloud = std::move(next);
    state.grad_norm_accum.assign(cloud.size(), 0.0);
    state.grad_count.assign(cloud.size(), 0);
    return stats;
}

Trainer::Trainer(GaussianCloud cloud, FogParams fog, std::vector<Camera> cameras, std::vector<Image> foggy,
                 std::vector<Image> pseudo_depths, TrainConfig config)
    : cloud_(std::move(cloud)),
      fog_(std::move(fog)),
      cameras_(std::move(cameras)),
      foggy_(std::move(foggy)),
      pseudo_depths_(std::move(pseudo_depths)),
      config_(std::move(config)) {
    if (cameras_.empty() || foggy_.size() != cameras_.size())
        throw InvalidParameter("Trainer: need one foggy image per camera");
    if (!pseudo_depths_.empty() && pseudo_depths_.size() != cameras_.size())
        throw InvalidParameter("Trainer: pseudo-depth count mismatch");
    cloud_.validate();
    fog_.use_sigmoid = config_.use_sigmoid;
    extent_ = scene_extent(cameras_);
    state_.rng.seed(config_.seed);
    state_.grad_norm_accum.assign(cloud_.size(), 0.0);
    state_.grad_count.assign(cloud_.size(), 0);
    if (config_.fog_enabled && (config_.weights.enable_dcp || config_.weights.enable_bcp)) {
        priors_.reserve(foggy_.size());
        for (const Image& img : foggy_) priors_.push_back(build_view_priors(img, config_));
    }
}

int Trainer::pick_view() {
    if (state_.view_cursor >= state_.view_order.size()) {
        state_.view_order.resize(cameras_.size());
        for (size_t i = 0; i < cameras_.size(); ++i) state_.view_order[i] = int(i);
        // Fisher-Yates on the raw engine keeps the stream stdlib-independent.
        for (size_t i = cameras_.size() - 1; i > 0; --i) {
            const size_t j = state_.rng() % (i + 1);
            std::swap(state_.view_order[i], state_.view_order[j]);
        }
        state_.view_cursor = 0;
    }
    return state_.view_order[state_.view_cursor++];
}

LossReport Trainer::step() {
    const int iter = state_.iteration;
    const int view = pick_view();
    const Image* pseudo =
        (!pseudo_depths_.empty() && pseudo_depths_[view].size() > 0) ? &pseudo_depths_[view] : nullptr;
    const ViewPriors* priors = priors_.empty() ? nullptr : &priors_[view];

    ViewLossResult result =
        view_loss(cloud_, fog_, cameras_[view], foggy_[view], pseudo, priors, config_, iter, true);

    if (!std::isfinite(result.report.total)) {
        std::ostringstream dump;
        dump << "non-finite training loss at iteration " << iter << " (view " << view
             << "): rec=" << result.report.rec << " dcp=" << result.report.dcp
             << " bcp=" << result.report.bcp << " depth=" << result.report.depth
             << " dweighted=" << result.report.dweighted << " gaussians=" << cloud_.size();
        throw NumericalError(dump.str());
    }

    auto flat = [](std::vector<Vec3>& v) {
        return std::span<Scalar>(reinterpret_cast<Scalar*>(v.data()), v.size() * 3);
    };
    auto flat_const = [](const std::vector<Vec3>& v) {
        return std::span<const Scalar>(reinterpret_cast<const Scalar*>(v.data()), v.size() * 3);
    };
    auto warn_skip = [iter](const char* group) {
        std::cerr << "warning: non-finite gradient, skipping " << group << " update at iteration " << iter
                  << "\n";
    };

    const Scalar pos_lr = extent_ * log_lerp(config_.lr_position, config_.lr_position_final,
                                             iter, config_.iterations);
    if (!adam_step(flat(cloud_.positions), flat_const(result.grads.cloud.positions), state_.positions, pos_lr))
        warn_skip("positions");
    if (!adam_step(flat(cloud_.log_scales), flat_const(result.grads.cloud.log_scales), state_.log_scales,
                   config_.lr_scale))
        warn_skip("log_scales");
    if (!adam_step({reinterpret_cast<Scalar*>(cloud_.rotations.data()), cloud_.rotations.size() * 4},
                   {reinterpret_cast<const Scalar*>(result.grads.cloud.rotations.data()),
                    result.grads.cloud.rotations.size() * 4},
                   state_.rotations, config_.lr_rotation))
        warn_skip("rotations");
    if (!adam_step(cloud_.opacity_latents, result.grads.cloud.opacity_latents, state_.opacities,
                   config_.lr_opacity))
        warn_skip("opacities");
    if (!adam_step(cloud_.color_coeffs, result.grads.cloud.color_coeffs, state_.colors, config_.lr_color))
        warn_skip("colors");
    if (config_.fog_enabled) {
        const Scalar beta_lr = log_lerp(config_.lr_beta, config_.lr_beta * config_.beta_lr_decay, iter,
                                        config_.iterations);
        if (!adam_step(fog_.beta_weights, result.grads.fog.beta_weights, state_.beta, beta_lr))
            warn_skip("beta");
        Scalar atmos[3] = {fog_.atmos_latent.x, fog_.atmos_latent.y, fog_.atmos_latent.z};
        const Scalar gatmos[3] = {result.grads.fog.atmos_latent.x, result.grads.fog.atmos_latent.y,
                                  result.grads.fog.atmos_latent.z};
        if (!adam_step(std::span<Scalar>(atmos, 3), std::span<const Scalar>(gatmos, 3), state_.atmos,
                       config_.lr_atmos))
            warn_skip("atmos");
        fog_.atmos_latent = {atmos[0], atmos[1], atmos[2]};
    }

    // Densification bookkeeping and schedule.
    if (config_.densify_enabled) {
        for (size_t i = 0; i < cloud_.size(); ++i)
            if (result.grads.visible[i]) {
                state_.grad_norm_accum[i] += result.grads.viewspace_grad_norm[i];
                state_.grad_count[i] += 1;
            }
        const int it1 = iter + 1;
        if (it1 >= config_.densify_start && it1 <= config_.densify_stop_effective() &&
            it1 % config_.densify_interval == 0)
            densify_and_prune(cloud_, state_, config_, extent_);
    }

    state_.iteration += 1;
    return result.report;
}

std::string loss_report_json_line(const LossReport& r) {
    nlohmann::json j;
    j["iter"] = r.iteration;
    j["total"] = r.total;
    j["rec"] = r.rec;
    j["dcp"] = r.dcp;
    j["bcp"] = r.bcp;
    j["depth"] = r.depth;
    j["dweighted"] = r.dweighted;
    j["lambda_d"] = r.depth_lambda;
    return j.dump();
}

EvalResult evaluate(const GaussianCloud& cloud, const FogParams* fog, const std::vector<Camera>& cameras,
                    const std::vector<Image>& gt_clear, const RasterSettings& settings, int crop) {
    if (gt_clear.size() != cameras.size())
        throw DataError("evaluate: need one ground-truth clear image per camera");
    EvalResult result;
    for (size_t i = 0; i < cameras.size(); ++i) {
        if (gt_clear[i].size() == 0)
            throw DataError("evaluate: missing ground-truth clear image for camera '" + cameras[i].name + "'");
        const RenderOutput out = render(cloud, cameras[i], fog, RenderMode::Clear, settings);
        Image a = out.color, b = gt_clear[i];
        if (crop > 0) {
            if (a.height <= 2 * crop || a.width <= 2 * crop)
                throw InvalidParameter("evaluate: crop leaves no pixels");
            Image ca(a.height - 2 * crop, a.width - 2 * crop, 3), cb = ca;
            for (int y = 0; y < ca.height; ++y)
                for (int x = 0; x < ca.width; ++x)
                    for (int c = 0; c < 3; ++c) {
                        ca.at(y, x, c) = a.at(y + crop, x + crop, c);
                        cb.at(y, x, c) = b.at(y + crop, x + crop, c);
                    }
            a = std::move(ca);
            b = std::move(cb);
        }
        EvalRow row;
        row.name = cameras[i].name;
        row.psnr_db = psnr(a, b);
        row.ssim_value = ssim(a, b);
        result.rows.push_back(row);
        result.mean_psnr += row.psnr_db;
        result.mean_ssim += row.ssim_value;
    }
    result.mean_psnr /= Scalar(result.rows.size());
    result.mean_ssim /= Scalar(result.rows.size());
    return result;
}

}  // namespace fogsplat
