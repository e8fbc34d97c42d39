#include "fogsplat/scene.hpp"

namespace fogsplat {

namespace {

constexpr Scalar kShC0 = 0.28209479177387814;
constexpr Scalar kShC1 = 0.4886025119029199;
constexpr Scalar kShC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                             -1.0925484305920792, 0.5462742152960396};
constexpr Scalar kShC3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                             0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                             -0.5900435899266435};

// Basis values for the active bands, Inria ordering/signs so checkpoints stay
// viewer-compatible.
int sh_basis(int degree, const Vec3& d, Scalar* out) {
    out[0] = kShC0;
    if (degree == 0) return 1;
    const Scalar x = d.x, y = d.y, z = d.z;
    out[1] = -kShC1 * y;
    out[2] = kShC1 * z;
    out[3] = -kShC1 * x;
    if (degree == 1) return 4;
    const Scalar xx = x * x, yy = y * y, zz = z * z;
    out[4] = kShC2[0] * x * y;
    out[5] = kShC2[1] * y * z;
    out[6] = kShC2[2] * (2 * zz - xx - yy);
    out[7] = kShC2[3] * x * z;
    out[8] = kShC2[4] * (xx - yy);
    if (degree == 2) return 9;
    out[9] = kShC3[0] * y * (3 * xx - yy);
    out[10] = kShC3[1] * x * y * z;
    out[11] = kShC3[2] * y * (4 * zz - xx - yy);
    out[12] = kShC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    out[13] = kShC3[4] * x * (4 * zz - xx - yy);
    out[14] = kShC3[5] * z * (xx - yy);
    out[15] = kShC3[6] * x * (xx - 3 * yy);
    return 16;
}

// d(basis_k)/d(dir) for the active bands.
void sh_basis_dir_grad(int degree, const Vec3& d, Vec3* out) {
    out[0] = {0, 0, 0};
    if (degree == 0) return;
    const Scalar x = d.x, y = d.y, z = d.z;
    out[1] = {0, -kShC1, 0};
    out[2] = {0, 0, kShC1};
    out[3] = {-kShC1, 0, 0};
    if (degree == 1) return;
    out[4] = {kShC2[0] * y, kShC2[0] * x, 0};
    out[5] = {0, kShC2[1] * z, kShC2[1] * y};
    out[6] = {-2 * kShC2[2] * x, -2 * kShC2[2] * y, 4 * kShC2[2] * z};
    out[7] = {kShC2[3] * z, 0, kShC2[3] * x};
    out[8] = {2 * kShC2[4] * x, -2 * kShC2[4] * y, 0};
    if (degree == 2) return;
    out[9] = {kShC3[0] * 6 * x * y, kShC3[0] * (3 * x * x - 3 * y * y), 0};
    out[10] = {kShC3[1] * y * z, kShC3[1] * x * z, kShC3[1] * x * y};
    out[11] = {kShC3[2] * (-2 * x * y), kShC3[2] * (4 * z * z - x * x - 3 * y * y), kShC3[2] * 8 * y * z};
    out[12] = {kShC3[3] * (-6 * x * z), kShC3[3] * (-6 * y * z), kShC3[3] * (6 * z * z - 3 * x * x - 3 * y * y)};
    out[13] = {kShC3[4] * (4 * z * z - 3 * x * x - y * y), kShC3[4] * (-2 * x * y), kShC3[4] * 8 * x * z};
    out[14] = {kShC3[5] * 2 * x * z, kShC3[5] * (-2 * y * z), kShC3[5] * (x * x - y * y)};
    out[15] = {kShC3[6] * (3 * x * x - 3 * y * y), kShC3[6] * (-6 * x * y), 0};
}

}  // namespace

void GaussianCloud::validate() const {
    const size_t n = positions.size();
    if (n == 0) throw InvalidParameter("GaussianCloud: N must be >= 1");
    if (sh_degree < 0 || sh_degree > 3) throw InvalidParameter("GaussianCloud: sh_degree out of [0,3]");
    if (log_scales.size() != n || rotations.size() != n || opacity_latents.size() != n ||
        color_coeffs.size() != n * size_t(coeffs_per_gaussian()))
        throw InvalidParameter("GaussianCloud: parameter arrays disagree on N");
}

void Camera::validate() const {
    if (fx <= 0 || fy <= 0) throw InvalidParameter("Camera: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw InvalidParameter("Camera: image size must be positive");
    if (!(near_clip > 0) || !(near_clip < far_clip))
        throw InvalidParameter("Camera: require 0 < near < far");
    const Mat3 should_be_identity = rotation * rotation.transpose();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const Scalar want = i == j ? 1.0 : 0.0;
            if (std::abs(should_be_identity.m[i][j] - want) > 1e-6)
                throw InvalidParameter("Camera '" + name + "': rotation is not orthonormal");
        }
}

ActivatedGaussians activate(const GaussianCloud& cloud) {
    cloud.validate();
    const size_t n = cloud.size();
    ActivatedGaussians act;
    act.scales.resize(n);
    act.unit_rotations.resize(n);
    act.opacities.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const Vec3& ls = cloud.log_scales[i];
        const Quat& q = cloud.rotations[i];
        const Scalar op = cloud.opacity_latents[i];
        if (!std::isfinite(ls.x) || !std::isfinite(ls.y) || !std::isfinite(ls.z) ||
            !std::isfinite(q.w) || !std::isfinite(q.x) || !std::isfinite(q.y) ||
            !std::isfinite(q.z) || !std::isfinite(op))
            throw InvalidParameter("activate: non-finite latent at index " + std::to_string(i));
        act.scales[i] = {std::exp(ls.x), std::exp(ls.y), std::exp(ls.z)};
        const Scalar nq = q.norm();
        if (nq == 0) throw InvalidParameter("activate: zero-norm quaternion at index " + std::to_string(i));
        act.unit_rotations[i] = {q.w / nq, q.x / nq, q.y / nq, q.z / nq};
        act.opacities[i] = logistic(op);
    }
    for (Scalar c : cloud.color_coeffs)
        if (!std::isfinite(c)) throw InvalidParameter("activate: non-finite color coefficient");
    return act;
}

Mat3 quat_to_rotation(const Quat& q) {
    const Scalar w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r.m[0][0] = 1 - 2 * (y * y + z * z);
    r.m[0][1] = 2 * (x * y - w * z);
    r.m[0][2] = 2 * (x * z + w * y);
    r.m[1][0] = 2 * (x * y + w * z);
    r.m[1][1] = 1 - 2 * (x * x + z * z);
    r.m[1][2] = 2 * (y * z - w * x);
    r.m[2][0] = 2 * (x * z - w * y);
    r.m[2][1] = 2 * (y * z + w * x);
    r.m[2][2] = 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 build_covariance(const Vec3& log_scale, const Quat& rotation) {
    const Scalar nq = rotation.norm();
    if (nq == 0) throw InvalidParameter("build_covariance: zero-norm quaternion");
    const Quat q{rotation.w / nq, rotation.x / nq, rotation.y / nq, rotation.z / nq};
    const Mat3 r = quat_to_rotation(q);
    const Vec3 s{std::exp(log_scale.x), std::exp(log_scale.y), std::exp(log_scale.z)};
    // M = R S, Sigma = M M^T.
    Mat3 msr = r * Mat3::diagonal(s.x, s.y, s.z);
    return msr * msr.transpose();
}

void build_covariance_backward(const Mat3& upstream, const Vec3& log_scale, const Quat& rotation,
                               Vec3& grad_log_scale, Quat& grad_rotation) {
    const Scalar nq = rotation.norm();
    if (nq == 0) throw InvalidParameter("build_covariance_backward: zero-norm quaternion");
    const Quat q{rotation.w / nq, rotation.x / nq, rotation.y / nq, rotation.z / nq};
    const Mat3 r = quat_to_rotation(q);
    const Vec3 s{std::exp(log_scale.x), std::exp(log_scale.y), std::exp(log_scale.z)};
    const Mat3 msr = r * Mat3::diagonal(s.x, s.y, s.z);

    // Sigma = M M^T  =>  dL/dM = (G + G^T) M.
    const Mat3 gsym = upstream + upstream.transpose();
    const Mat3 gm = gsym * msr;

    // M = R S: dL/dS = R^T dL/dM (diagonal), dL/dR = dL/dM S.
    const Mat3 gs_full = r.transpose() * gm;
    grad_log_scale = {gs_full.m[0][0] * s.x, gs_full.m[1][1] * s.y, gs_full.m[2][2] * s.z};

    const Mat3 gr{{{gm.m[0][0] * s.x, gm.m[0][1] * s.y, gm.m[0][2] * s.z},
                   {gm.m[1][0] * s.x, gm.m[1][1] * s.y, gm.m[1][2] * s.z},
                   {gm.m[2][0] * s.x, gm.m[2][1] * s.y, gm.m[2][2] * s.z}}};

    // dR/d(unit quaternion), contracted against gr.
    const Scalar w = q.w, x = q.x, y = q.y, z = q.z;
    const Mat3 dw{{{0, -2 * z, 2 * y}, {2 * z, 0, -2 * x}, {-2 * y, 2 * x, 0}}};
    const Mat3 dx{{{0, 2 * y, 2 * z}, {2 * y, -4 * x, -2 * w}, {2 * z, 2 * w, -4 * x}}};
    const Mat3 dy{{{-4 * y, 2 * x, 2 * w}, {2 * x, 0, 2 * z}, {-2 * w, 2 * z, -4 * y}}};
    const Mat3 dz{{{-4 * z, -2 * w, 2 * x}, {2 * w, -4 * z, 2 * y}, {2 * x, 2 * y, 0}}};
    auto contract = [&gr](const Mat3& d) {
        Scalar sum = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) sum += gr.m[i][j] * d.m[i][j];
        return sum;
    };
    const Quat g_unit{contract(dw), contract(dx), contract(dy), contract(dz)};

    // Through the normalization: dL/dq = (I - qq^T)/|q| * dL/dq_unit.
    const Scalar dot = g_unit.w * w + g_unit.x * x + g_unit.y * y + g_unit.z * z;
    grad_rotation = {(g_unit.w - dot * w) / nq, (g_unit.x - dot * x) / nq,
                     (g_unit.y - dot * y) / nq, (g_unit.z - dot * z) / nq};
}

Vec3 sh_eval(int degree, std::span<const Scalar> coeffs, const Vec3& dir) {
    Scalar basis[16];
    const int nb = sh_basis(degree, dir, basis);
    Vec3 color;
    for (int k = 0; k < nb; ++k) {
        color.x += basis[k] * coeffs[3 * k + 0];
        color.y += basis[k] * coeffs[3 * k + 1];
        color.z += basis[k] * coeffs[3 * k + 2];
    }
    color += Vec3{0.5, 0.5, 0.5};
    return {std::max(Scalar(0), color.x), std::max(Scalar(0), color.y), std::max(Scalar(0), color.z)};
}

Vec3 sh_eval_backward(int degree, std::span<const Scalar> coeffs, const Vec3& dir,
                      const Vec3& grad_color, std::span<Scalar> grad_coeffs) {
    Scalar basis[16];
    const int nb = sh_basis(degree, dir, basis);
    // Recompute the pre-clamp value to mask clamped channels.
    Vec3 raw{0.5, 0.5, 0.5};
    for (int k = 0; k < nb; ++k) {
        raw.x += basis[k] * coeffs[3 * k + 0];
        raw.y += basis[k] * coeffs[3 * k + 1];
        raw.z += basis[k] * coeffs[3 * k + 2];
    }
    const Vec3 g{raw.x > 0 ? grad_color.x : 0, raw.y > 0 ? grad_color.y : 0,
                 raw.z > 0 ? grad_color.z : 0};
    for (int k = 0; k < nb; ++k) {
        grad_coeffs[3 * k + 0] += basis[k] * g.x;
        grad_coeffs[3 * k + 1] += basis[k] * g.y;
        grad_coeffs[3 * k + 2] += basis[k] * g.z;
    }
    Vec3 grad_dir;
    if (degree > 0) {
        Vec3 dbasis[16];
        sh_basis_dir_grad(degree, dir, dbasis);
        for (int k = 1; k < nb; ++k) {
            const Scalar gk = g.x * coeffs[3 * k + 0] + g.y * coeffs[3 * k + 1] + g.z * coeffs[3 * k + 2];
            grad_dir += dbasis[k] * gk;
        }
    }
    return grad_dir;
}

Scalar rgb_to_sh_dc(Scalar rgb) { return (rgb - 0.5) / kShC0; }

Scalar sh_dc_to_rgb(Scalar dc) { return dc * kShC0 + 0.5; }

GaussianCloud init_cloud_from_points(const std::vector<Vec3>& positions, const std::vector<Vec3>& colors,
                                     int sh_degree) {
    if (positions.empty()) throw InvalidParameter("init_cloud_from_points: empty point set");
    if (colors.size() != positions.size())
        throw InvalidParameter("init_cloud_from_points: color count mismatch");
    const size_t n = positions.size();
    GaussianCloud cloud;
    cloud.sh_degree = sh_degree;
    cloud.positions = positions;
    cloud.log_scales.resize(n);
    cloud.rotations.assign(n, Quat{1, 0, 0, 0});
    cloud.opacity_latents.assign(n, logit(0.1));
    cloud.color_coeffs.assign(n * cloud.coeffs_per_gaussian(), 0.0);
    for (size_t i = 0; i < n; ++i) {
        Scalar* c = cloud.color_coeffs.data() + i * cloud.coeffs_per_gaussian();
        c[0] = rgb_to_sh_dc(colors[i].x);
        c[1] = rgb_to_sh_dc(colors[i].y);
        c[2] = rgb_to_sh_dc(colors[i].z);
    }
    // Isotropic size from mean squared distance to the 3 nearest neighbors.
    // Quadratic scan; point sets at this scale stay small.
    for (size_t i = 0; i < n; ++i) {
        Scalar best[3] = {1e30, 1e30, 1e30};
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const Vec3 d = positions[i] - positions[j];
            Scalar d2 = d.dot(d);
            for (int k = 0; k < 3; ++k)
                if (d2 < best[k]) std::swap(d2, best[k]);
        }
        Scalar mean = 0;
        int cnt = 0;
        for (int k = 0; k < 3; ++k)
            if (best[k] < 1e30) {
                mean += best[k];
                ++cnt;
            }
        mean = cnt > 0 ? mean / cnt : 1e-4;
        const Scalar s = std::max(std::sqrt(mean), Scalar(1e-7));
        cloud.log_scales[i] = {std::log(s), std::log(s), std::log(s)};
    }
    return cloud;
}

Scalar scene_extent(const std::vector<Camera>& cameras) {
    if (cameras.empty()) return 1.0;
    Vec3 mean;
    for (const Camera& cam : cameras) mean += cam.center();
    mean = mean * (1.0 / Scalar(cameras.size()));
    Scalar radius = 0;
    for (const Camera& cam : cameras) radius = std::max(radius, (cam.center() - mean).norm());
    return radius > 0 ? radius * 1.1 : 1.0;
}

}  // namespace fogsplat
