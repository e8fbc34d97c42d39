#pragma once

#include <random>

#include "fogsplat/core.hpp"

namespace fogsplat {

struct SynthResult {
    Image hazy;   // H x W x 3
    Image t_map;  // H x W
};

// Applies the atmospheric scattering model I = J t + A (1 - t) with
// t = exp(-beta * d_norm); depth is min-max normalized per image first,
// matching the renderer's convention. Throws on negative beta.
SynthResult synthesize_fog(const Image& clear, const Image& depth, Scalar beta, const Vec3& atmos);

// Algebraic inverse of the scattering model: J = (I - A (1 - t)) / t with the
// transmission floored at t_floor; output clamped to [0, 1].
Image analytic_dehaze(const Image& hazy, const Image& t_map, const Vec3& atmos, Scalar t_floor = 0.05);

// Stochastic scene parameters: beta in [0.4, 1.2], A channels in [0.7, 0.95].
void sample_scene_params(uint64_t seed, Scalar& beta, Vec3& atmos);

}  // namespace fogsplat
