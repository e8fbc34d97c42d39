#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fogsplat {

// All math runs in double; desk-scale scenes are small enough that the
// gradient-check precision is worth more than the SIMD width.
using Scalar = double;

struct InvalidParameter : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Vec2 {
    Scalar x = 0, y = 0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(Scalar s) const { return {x * s, y * s}; }
    Scalar dot(const Vec2& o) const { return x * o.x + y * o.y; }
    Scalar norm2() const { return x * x + y * y; }
};

struct Vec3 {
    Scalar x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(Scalar s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    Scalar dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Scalar norm() const { return std::sqrt(dot(*this)); }
    Scalar operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    Scalar& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    bool operator==(const Vec3&) const = default;
};

// wxyz quaternion, stored unnormalized.
struct Quat {
    Scalar w = 1, x = 0, y = 0, z = 0;

    Scalar norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Scalar operator[](int i) const { return i == 0 ? w : (i == 1 ? x : (i == 2 ? y : z)); }
    Scalar& operator[](int i) { return i == 0 ? w : (i == 1 ? x : (i == 2 ? y : z)); }
    bool operator==(const Quat&) const = default;
};

// Row-major 3x3.
struct Mat3 {
    Scalar m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};

    static Mat3 identity() {
        Mat3 r;
        r.m[0][0] = r.m[1][1] = r.m[2][2] = 1;
        return r;
    }
    static Mat3 diagonal(Scalar a, Scalar b, Scalar c) {
        Mat3 r;
        r.m[0][0] = a;
        r.m[1][1] = b;
        r.m[2][2] = c;
        return r;
    }
    Mat3 transpose() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
        return r;
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                Scalar s = 0;
                for (int k = 0; k < 3; ++k) s += m[i][k] * o.m[k][j];
                r.m[i][j] = s;
            }
        return r;
    }
    Vec3 operator*(const Vec3& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }
    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] + o.m[i][j];
        return r;
    }
    Mat3 operator*(Scalar s) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] * s;
        return r;
    }
};

// Symmetric 2x2 stored as (xx, xy, yy).
struct Sym2 {
    Scalar xx = 0, xy = 0, yy = 0;

    Scalar det() const { return xx * yy - xy * xy; }
    // Quadratic form d^T S d.
    Scalar quad(const Vec2& d) const { return xx * d.x * d.x + 2 * xy * d.x * d.y + yy * d.y * d.y; }
    Sym2 inverse() const {
        const Scalar dt = det();
        return {yy / dt, -xy / dt, xx / dt};
    }
    Scalar max_eigenvalue() const {
        const Scalar mid = 0.5 * (xx + yy);
        const Scalar d = std::sqrt(std::max(Scalar(0), mid * mid - det()));
        return mid + d;
    }
};

// H x W x C row-major interleaved plane of doubles.
struct Image {
    int height = 0, width = 0, channels = 0;
    std::vector<Scalar> data;

    Image() = default;
    Image(int h, int w, int c, Scalar fill = 0) : height(h), width(w), channels(c), data(size_t(h) * w * c, fill) {}

    Scalar& at(int y, int x, int c = 0) { return data[(size_t(y) * width + x) * channels + c]; }
    Scalar at(int y, int x, int c = 0) const { return data[(size_t(y) * width + x) * channels + c]; }
    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool all_finite() const {
        for (Scalar v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// exp(x) for non-positive x, tuned for the compositing inner loop: Cody-Waite
// reduction x = k ln2/16 + r against a 16-entry table, degree-6 Taylor on the
// residual. Relative error stays below ~5e-14, small enough that central
// finite differences at h = 1e-5 cannot see the approximation.
inline Scalar fast_exp(Scalar x) {
    if (x < -700.0) return 0.0;
    constexpr Scalar kInvLn2_16 = 23.083120654223414;
    constexpr Scalar kLn2_16Hi = 0.0433216979727149;
    constexpr Scalar kLn2_16Lo = 8.122816794187138e-10;
    static constexpr Scalar kPow2_16[16] = {
        1.0,
        1.0442737824274138,
        1.0905077326652577,
        1.1387886347566916,
        1.189207115002721,
        1.241857812073484,
        1.2968395546510096,
        1.3542555469368927,
        1.4142135623730951,
        1.4768261459394993,
        1.5422108254079407,
        1.6104903319492543,
        1.681792830507429,
        1.7562521603732995,
        1.8340080864093424,
        1.9152065613971474,
    };
    const Scalar kf = std::nearbyint(x * kInvLn2_16);
    const long long k = (long long)kf;
    const Scalar r = (x - kf * kLn2_16Hi) - kf * kLn2_16Lo;
    Scalar p = 1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6 + r * (1.0 / 24 + r * (1.0 / 120 + r * (1.0 / 720))))));
    const long long m = k >> 4;  // arithmetic shift: floor division for negative k
    const long long j = k - (m << 4);
    return std::ldexp(p * kPow2_16[j], int(m));
}

inline Scalar logistic(Scalar v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Scalar logit(Scalar p) { return std::log(p / (1.0 - p)); }

// Log-linear interpolation between lr_start and lr_end over [0, max_steps].
inline Scalar log_lerp(Scalar start, Scalar end, int step, int max_steps) {
    if (max_steps <= 0) throw InvalidParameter("log_lerp: max_steps must be positive");
    const Scalar s = std::min(Scalar(1), Scalar(step) / Scalar(max_steps));
    return std::exp((1.0 - s) * std::log(start) + s * std::log(end));
}

// Platform-stable uniform double in [a, b) from raw 64-bit engine output.
template <class Rng>
Scalar uniform(Rng& rng, Scalar a, Scalar b) {
    const Scalar u = Scalar(rng() >> 11) * 0x1.0p-53;
    return a + (b - a) * u;
}

// Box-Muller; avoids std::normal_distribution so streams are identical across stdlibs.
template <class Rng>
Scalar gaussian(Rng& rng) {
    Scalar u1 = uniform(rng, 0.0, 1.0);
    while (u1 <= 0) u1 = uniform(rng, 0.0, 1.0);
    const Scalar u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Tile parallelism cap: FOGSPLAT_THREADS env var, else hardware concurrency.
int thread_cap();

// Runs fn(i) for i in [0, n). Work is chunked contiguously; fn must not touch
// state shared across indices unless externally synchronized.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace fogsplat
