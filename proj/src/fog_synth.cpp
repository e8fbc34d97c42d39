#include "fogsplat/fog_synth.hpp"

namespace fogsplat {

SynthResult synthesize_fog(const Image& clear, const Image& depth, Scalar beta, const Vec3& atmos) {
    if (beta < 0) throw InvalidParameter("synthesize_fog: beta must be non-negative");
    if (clear.channels != 3) throw InvalidParameter("synthesize_fog: clear image must be H x W x 3");
    if (depth.height != clear.height || depth.width != clear.width || depth.channels != 1)
        throw InvalidParameter("synthesize_fog: depth map shape mismatch");

    Scalar lo = depth.data[0], hi = depth.data[0];
    for (Scalar d : depth.data) {
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    const Scalar inv = hi > lo ? 1.0 / (hi - lo) : 0.0;

    SynthResult out;
    out.hazy = Image(clear.height, clear.width, 3);
    out.t_map = Image(clear.height, clear.width, 1);
    for (int y = 0; y < clear.height; ++y)
        for (int x = 0; x < clear.width; ++x) {
            const Scalar d_norm = (depth.at(y, x) - lo) * inv;
            const Scalar t = std::exp(-beta * d_norm);
            out.t_map.at(y, x) = t;
            for (int c = 0; c < 3; ++c)
                out.hazy.at(y, x, c) = clear.at(y, x, c) * t + atmos[c] * (1 - t);
        }
    return out;
}

Image analytic_dehaze(const Image& hazy, const Image& t_map, const Vec3& atmos, Scalar t_floor) {
    if (hazy.channels != 3 || t_map.height != hazy.height || t_map.width != hazy.width)
        throw InvalidParameter("analytic_dehaze: shape mismatch");
    Image clear(hazy.height, hazy.width, 3);
    for (int y = 0; y < hazy.height; ++y)
        for (int x = 0; x < hazy.width; ++x) {
            const Scalar t = std::max(t_map.at(y, x), t_floor);
            for (int c = 0; c < 3; ++c) {
                const Scalar j = (hazy.at(y, x, c) - atmos[c] * (1 - t)) / t;
                clear.at(y, x, c) = std::clamp(j, Scalar(0), Scalar(1));
            }
        }
    return clear;
}

void sample_scene_params(uint64_t seed, Scalar& beta, Vec3& atmos) {
    std::mt19937_64 rng(seed);
    beta = uniform(rng, 0.4, 1.2);
    atmos = {uniform(rng, 0.7, 0.95), uniform(rng, 0.7, 0.95), uniform(rng, 0.7, 0.95)};
}

}  // namespace fogsplat
