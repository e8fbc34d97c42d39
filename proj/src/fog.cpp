#include "fogsplat/fog.hpp"

#include <numeric>

namespace fogsplat {

std::vector<Scalar> normalize_depths(const std::vector<Scalar>& camera_depths) {
    if (camera_depths.empty()) throw InvalidParameter("normalize_depths: empty depth list");
    Scalar lo = camera_depths[0], hi = camera_depths[0];
    for (Scalar d : camera_depths) {
        if (!std::isfinite(d)) throw InvalidParameter("normalize_depths: non-finite depth");
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    std::vector<Scalar> out(camera_depths.size(), 0.0);
    if (hi > lo) {
        const Scalar inv = 1.0 / (hi - lo);
        for (size_t i = 0; i < camera_depths.size(); ++i) out[i] = (camera_depths[i] - lo) * inv;
    }
    return out;
}

namespace {

// Conv response over the depth sequence. Width 1 is the plain beta * d_i
// product; wider kernels see the depth-sorted neighborhood (indices clamped
// at the ends) so the response stays permutation-stable.
void conv_response(const std::vector<Scalar>& d_norm, const FogParams& fog, TransmissionCache& cache) {
    const int n = int(d_norm.size());
    const int width = fog.kernel_width();
    cache.relu_arg.assign(n, 0.0);
    if (width == 1) {
        for (int i = 0; i < n; ++i) cache.relu_arg[i] = fog.beta_weights[0] * d_norm[i];
        return;
    }
    cache.sorted_order.resize(n);
    std::iota(cache.sorted_order.begin(), cache.sorted_order.end(), 0);
    std::stable_sort(cache.sorted_order.begin(), cache.sorted_order.end(),
                     [&](int a, int b) { return d_norm[a] < d_norm[b]; });
    const int half = (width - 1) / 2;
    for (int rank = 0; rank < n; ++rank) {
        Scalar r = 0;
        for (int k = 0; k < width; ++k) {
            const int nbr = std::clamp(rank + k - half, 0, n - 1);
            r += fog.beta_weights[k] * d_norm[cache.sorted_order[nbr]];
        }
        cache.relu_arg[cache.sorted_order[rank]] = r;
    }
}

}  // namespace

std::vector<Scalar> gaussian_transmission(const std::vector<Scalar>& d_norm, const FogParams& fog,
                                          TransmissionCache* cache) {
    TransmissionCache local;
    TransmissionCache& c = cache ? *cache : local;
    c.d_norm = d_norm;
    conv_response(d_norm, fog, c);
    const size_t n = d_norm.size();
    c.exp_term.resize(n);
    std::vector<Scalar> t(n);
    for (size_t i = 0; i < n; ++i) {
        c.exp_term[i] = std::exp(-std::max(Scalar(0), c.relu_arg[i]));
        t[i] = fog.use_sigmoid ? logistic(c.exp_term[i]) : c.exp_term[i];
    }
    return t;
}

void gaussian_transmission_backward(const std::vector<Scalar>& grad_t, const FogParams& fog,
                                    const TransmissionCache& cache, std::vector<Scalar>& grad_beta) {
    const int n = int(grad_t.size());
    const int width = fog.kernel_width();
    std::vector<int> rank_of;
    if (width > 1) {
        rank_of.resize(n);
        for (int rr = 0; rr < n; ++rr) rank_of[cache.sorted_order[rr]] = rr;
    }
    for (int i = 0; i < n; ++i) {
        if (cache.relu_arg[i] <= 0) continue;  // ReLU subgradient 0 at and below the kink
        const Scalar u = cache.exp_term[i];
        Scalar du = grad_t[i];
        if (fog.use_sigmoid) {
            const Scalar s = logistic(u);
            du *= s * (1 - s);
        }
        const Scalar dr = -du * u;  // d exp(-r)/dr
        if (width == 1) {
            grad_beta[0] += dr * cache.d_norm[i];
        } else {
            const int half = (width - 1) / 2;
            for (int k = 0; k < width; ++k) {
                const int nbr = std::clamp(rank_of[i] + k - half, 0, n - 1);
                grad_beta[k] += dr * cache.d_norm[cache.sorted_order[nbr]];
            }
        }
    }
}

std::vector<Vec3> fog_colors(const std::vector<Vec3>& clear_colors, const std::vector<Scalar>& t,
                             const FogParams& fog) {
    if (clear_colors.size() != t.size())
        throw InvalidParameter("fog_colors: color/transmission count mismatch");
    const Vec3 a = fog.atmos();
    std::vector<Vec3> out(clear_colors.size());
    for (size_t i = 0; i < clear_colors.size(); ++i)
        out[i] = clear_colors[i] * t[i] + a * (1 - t[i]);
    return out;
}

void fog_colors_backward(const std::vector<Vec3>& grad_foggy, const std::vector<Vec3>& clear_colors,
                         const std::vector<Scalar>& t, const FogParams& fog,
                         std::vector<Vec3>& grad_clear, std::vector<Scalar>& grad_t,
                         Vec3& grad_atmos_latent) {
    const Vec3 a = fog.atmos();
    Vec3 grad_a;
    for (size_t i = 0; i < grad_foggy.size(); ++i) {
        const Vec3& g = grad_foggy[i];
        grad_clear[i] += g * t[i];
        grad_t[i] += g.dot(clear_colors[i] - a);
        grad_a += g * (1 - t[i]);
    }
    // A = logistic(latent), per channel.
    grad_atmos_latent.x += grad_a.x * a.x * (1 - a.x);
    grad_atmos_latent.y += grad_a.y * a.y * (1 - a.y);
    grad_atmos_latent.z += grad_a.z * a.z * (1 - a.z);
}

}  // namespace fogsplat
