#pragma once

#include <json.hpp>
#include <random>
#include <span>

#include "fogsplat/losses.hpp"
#include "fogsplat/priors.hpp"
#include "fogsplat/rasterizer.hpp"

namespace fogsplat {

struct TrainConfig {
    int iterations = 30000;
    uint64_t seed = 0;

    // Per-group learning rates. Position decays log-linearly over the run and
    // is multiplied by the scene extent; the scattering weight decays to
    // beta_lr_decay of its start value the same way.
    Scalar lr_position = 1.6e-4, lr_position_final = 1.6e-6;
    Scalar lr_scale = 5e-3;
    Scalar lr_rotation = 1e-3;
    Scalar lr_opacity = 5e-2;
    Scalar lr_color = 2.5e-3;
    Scalar lr_beta = 1e-7;
    Scalar beta_lr_decay = 0.1;
    Scalar beta_l2 = 0.0;  // optional L2 penalty on the scattering weight
    Scalar lr_atmos = 1e-3;

    bool densify_enabled = true;
    int densify_interval = 100;
    int densify_start = 500;
    int densify_stop = -1;  // default: iterations / 2
    Scalar densify_grad_threshold = 2e-4;
    Scalar prune_opacity = 5e-3;
    Scalar percent_dense = 0.01;

    LossWeights weights;
    bool use_sigmoid = true;
    bool fog_enabled = true;  // false: plain splatting baseline, no scattering model
    bool literal_eq10 = false;
    int sh_degree = 0;
    int prior_patch = 15;
    Scalar prior_omega = 0.95;
    int laplacian_max_res = 128;

    RasterSettings raster;
    int checkpoint_interval = 0;  // 0: final checkpoint only

    int densify_stop_effective() const { return densify_stop >= 0 ? densify_stop : iterations / 2; }
};

// "synthetic" (30k iterations) or "real" (3k iterations).
TrainConfig preset_config(const std::string& name);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
    std::vector<Scalar> m, v;
    int64_t step = 0;
};

// Standard bias-corrected Adam. Returns false and leaves parameters and
// moments untouched when the gradient contains non-finite values.
bool adam_step(std::span<Scalar> params, std::span<const Scalar> grads, AdamState& state, Scalar lr,
               Scalar beta1 = 0.9, Scalar beta2 = 0.999, Scalar eps = 1e-15);

struct TrainState {
    int iteration = 0;
    AdamState positions, log_scales, rotations, opacities, colors, beta, atmos;
    // Densification statistics: accumulated view-space positional gradient
    // norms and visibility counts.
    std::vector<Scalar> grad_norm_accum;
    std::vector<int> grad_count;
    std::mt19937_64 rng{0};
    std::vector<int> view_order;
    size_t view_cursor = 0;
};

// Per-view constants derived from one foggy input image.
struct ViewPriors {
    Image t_dcp, t_bcp;
    Image guide_lo;  // pyramid level the Laplacian was built on
    MattingLaplacian lap;
};

ViewPriors build_view_priors(const Image& foggy, const TrainConfig& config);

// Values held constant through the backward pass. Gradient checks must reuse
// them so the finite-difference probe differentiates the same function the
// analytic gradients describe.
struct FrozenAux {
    bool valid = false;
    std::vector<Scalar> t_by_source;  // per-Gaussian transmission (gradient barrier)
    Image depth_map;                  // rendered depth for the weighted-recon term
    Scalar align_a = 1, align_b = 0;  // depth-loss scale/shift fit
    bool align_degenerate = false;
};

struct ViewLossResult {
    LossReport report;
    RenderGrads grads;
    FrozenAux frozen;
};

// The full single-view training objective with analytic gradients: foggy
// reconstruction, DCP/BCP transmission priors, scale-shift-invariant depth
// supervision and depth-weighted reconstruction.
ViewLossResult view_loss(const GaussianCloud& cloud, const FogParams& fog, const Camera& camera,
                         const Image& target_foggy, const Image* pseudo_depth, const ViewPriors* priors,
                         const TrainConfig& config, int iter, bool compute_grads,
                         const FrozenAux* frozen = nullptr);

struct DensifyStats {
    int cloned = 0, split = 0, pruned = 0;
};

// Clones small high-gradient Gaussians, splits large ones (two samples at
// scale / 1.6), prunes low-opacity ones and remaps optimizer moments (zeros
// for newborns).
DensifyStats densify_and_prune(GaussianCloud& cloud, TrainState& state, const TrainConfig& config,
                               Scalar extent);

class Trainer {
  public:
    Trainer(GaussianCloud cloud, FogParams fog, std::vector<Camera> cameras, std::vector<Image> foggy,
            std::vector<Image> pseudo_depths, TrainConfig config);

    // One optimization step: pick a view, render, back-propagate, update every
    // parameter group, run densification on its schedule.
    LossReport step();

    const GaussianCloud& cloud() const { return cloud_; }
    const FogParams& fog() const { return fog_; }
    const std::vector<Camera>& cameras() const { return cameras_; }
    const TrainConfig& config() const { return config_; }
    const TrainState& state() const { return state_; }
    Scalar extent() const { return extent_; }
    int iteration() const { return state_.iteration; }

  private:
    int pick_view();

    GaussianCloud cloud_;
    FogParams fog_;
    std::vector<Camera> cameras_;
    std::vector<Image> foggy_;
    std::vector<Image> pseudo_depths_;
    std::vector<ViewPriors> priors_;
    TrainConfig config_;
    TrainState state_;
    Scalar extent_ = 1.0;
};

struct EvalRow {
    std::string name;
    Scalar psnr_db = 0, ssim_value = 0;
};

struct EvalResult {
    std::vector<EvalRow> rows;
    Scalar mean_psnr = 0, mean_ssim = 0;
};

// Renders clear views and scores them against ground-truth clear images.
// crop removes a border of that many pixels before computing metrics.
EvalResult evaluate(const GaussianCloud& cloud, const FogParams* fog, const std::vector<Camera>& cameras,
                    const std::vector<Image>& gt_clear, const RasterSettings& settings, int crop = 0);

// One loss report as a single JSON object line (the training-log format).
std::string loss_report_json_line(const LossReport& report);

}  // namespace fogsplat
