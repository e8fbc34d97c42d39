#pragma once

#include "fogsplat/core.hpp"
#include "fogsplat/fog.hpp"
#include "fogsplat/scene.hpp"

namespace fogsplat {

struct RasterSettings {
    int tile_size = 16;
    Vec3 background{0, 0, 0};       // color channels only; aux composites against zero
    Scalar dilation = 0.3;          // px^2 added to the projected covariance diagonal
    Scalar alpha_clamp = 0.99;      // per-sample opacity ceiling
    Scalar alpha_min = 1.0 / 255.0; // samples below this are skipped
    Scalar transmittance_min = 1e-4;// front-to-back termination threshold
    Scalar radius_sigmas = 3.0;     // support disc radius in projected sigmas
};

struct ProjectedGaussian {
    Vec2 mean2d;           // pixels
    Sym2 cov2d;            // dilated, pixels^2
    Sym2 conic;            // inverse of cov2d
    Scalar camera_depth;   // camera-space z, scene units
    Scalar screen_radius;  // pixels
    int source_index;
    // Cached for the backward pass.
    Vec3 t_cam;
    bool clamped_x = false, clamped_y = false;  // EWA Jacobian FOV clamp
};

// EWA projection with near-plane and off-screen culling. Gaussians whose
// dilated covariance is numerically degenerate are culled, not an error.
std::vector<ProjectedGaussian> project(const GaussianCloud& cloud, const Camera& camera,
                                       const RasterSettings& settings);

struct TileBins {
    int tiles_x = 0, tiles_y = 0, tile_size = 16;
    // Indices into the (sorted) projected array; each tile list is ascending
    // in (camera_depth, source_index).
    std::vector<std::vector<int>> bins;
};

// Sorts `projected` by (camera_depth, source_index) and bins each Gaussian
// into every tile its support disc overlaps.
TileBins bin_and_sort(std::vector<ProjectedGaussian>& projected, int tile_size, int width, int height);

// Per-pixel replay data for the backward pass.
struct CompositeState {
    std::vector<Scalar> final_T;
    std::vector<int32_t> last_contrib;  // position in the pixel's tile list, -1 if none
};

struct CompositeOutput {
    Image color;  // H x W x 3, background already blended
    Image aux;    // H x W x n_aux, zero background
    Image alpha;  // H x W
    std::vector<int32_t> contrib_counts;
};

// Front-to-back alpha compositing of 3 color channels plus n_aux scalar
// channels per Gaussian. Throws NumericalError on non-finite channel values.
CompositeOutput composite_forward(const std::vector<ProjectedGaussian>& projected, const TileBins& bins,
                                  const std::vector<Scalar>& opacities, const std::vector<Vec3>& colors,
                                  const std::vector<Scalar>& aux, int n_aux, int width, int height,
                                  const RasterSettings& settings, CompositeState* state);

struct CompositeGrads {
    std::vector<Vec3> colors;
    std::vector<Scalar> aux;  // stride n_aux
    std::vector<Scalar> opacities;
    std::vector<Vec2> mean2d;
    std::vector<Sym2> conic;
};

// Exact reverse of composite_forward via back-to-front replay. Tiles run in
// parallel into private buffers reduced in fixed tile order, so accumulation
// is deterministic. Null upstream images are treated as zero.
CompositeGrads composite_backward(const std::vector<ProjectedGaussian>& projected, const TileBins& bins,
                                  const std::vector<Scalar>& opacities, const std::vector<Vec3>& colors,
                                  const std::vector<Scalar>& aux, int n_aux, int width, int height,
                                  const RasterSettings& settings, const CompositeState& state,
                                  const Image* grad_color, const Image* grad_aux, const Image* grad_alpha);

enum class RenderMode { Foggy, Clear, Transmission, Depth };

RenderMode parse_render_mode(const std::string& name);

struct RenderOutput {
    Image color;         // H x W x 3
    Image depth;         // H x W
    Image transmission;  // H x W, zeros when rendered without fog
    Image alpha;         // H x W
    std::vector<int32_t> contrib_counts;
};

// Everything needed to run the backward pass for one rendered view.
struct RenderContext {
    RasterSettings settings;
    RenderMode mode = RenderMode::Foggy;
    bool has_fog = false;
    int width = 0, height = 0;
    Camera camera;
    std::vector<ProjectedGaussian> projected;
    TileBins bins;
    std::vector<Scalar> opacities;
    std::vector<Vec3> channel_color;  // values fed to the compositor
    std::vector<Vec3> clear_colors;   // SH-evaluated G_c
    std::vector<Vec3> sh_dirs;        // unit view directions (degree >= 1)
    std::vector<Scalar> sh_dir_len;
    std::vector<Scalar> t_values;     // per-Gaussian transmission (fog only)
    TransmissionCache t_cache;
    int n_aux = 1, t_aux = -1, depth_aux = 0;
    CompositeState state;
};

// Projects, prepares per-Gaussian channels (SH colors, fog transmission and
// foggy composition), bins and composites. Fog is required for Foggy and
// Transmission modes. `frozen_t_by_source`, when given, overrides the
// computed per-Gaussian transmission (indexed by source Gaussian) — used by
// gradient checks to respect the depth-normalization gradient barrier.
RenderOutput render(const GaussianCloud& cloud, const Camera& camera, const FogParams* fog,
                    RenderMode mode, const RasterSettings& settings, RenderContext* ctx = nullptr,
                    const std::vector<Scalar>* frozen_t_by_source = nullptr);

struct RenderGrads {
    CloudGrads cloud;
    FogGrads fog;
    std::vector<Scalar> viewspace_grad_norm;  // |dL/d mean2d| per source Gaussian
    std::vector<uint8_t> visible;             // source Gaussians that survived culling

    RenderGrads(const GaussianCloud& c, const FogParams& f)
        : cloud(c), fog(f), viewspace_grad_norm(c.size(), 0.0), visible(c.size(), 0) {}
};

// Full backward through compositing, fog composition, SH evaluation, EWA
// projection and covariance construction. Null upstream images are zero.
RenderGrads render_backward(const RenderContext& ctx, const GaussianCloud& cloud, const FogParams* fog,
                            const Image* grad_color, const Image* grad_depth,
                            const Image* grad_transmission, const Image* grad_alpha);

}  // namespace fogsplat
