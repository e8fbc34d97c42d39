#include <doctest.h>

#include <random>

#include "fogsplat/fog.hpp"
#include "gradcheck.hpp"

using namespace fogsplat;
using fogsplat::testing::finite_diff;
using fogsplat::testing::rel_error;

TEST_CASE("normalize_depths min-max per view") {
    CHECK(normalize_depths({1, 2, 3}) == std::vector<Scalar>{0, 0.5, 1});
    CHECK(normalize_depths({5, 5}) == std::vector<Scalar>{0, 0});
    CHECK(normalize_depths({1, 2, 3, 5}) == std::vector<Scalar>{0, 0.25, 0.5, 1});
    CHECK_THROWS_AS(normalize_depths({}), InvalidParameter);
}

TEST_CASE("gaussian_transmission values") {
    FogParams fog;
    fog.beta_weights = {0.0};

    fog.use_sigmoid = false;
    CHECK(gaussian_transmission({0.7}, fog)[0] == doctest::Approx(1.0).epsilon(1e-15));
    fog.use_sigmoid = true;
    CHECK(gaussian_transmission({0.7}, fog)[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));

    fog.use_sigmoid = false;
    fog.beta_weights = {std::log(2.0)};
    CHECK(gaussian_transmission({1.0}, fog)[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("transmission is monotone decreasing and range-bounded") {
    FogParams fog;
    fog.beta_weights = {0.9};
    for (bool sigmoid : {false, true}) {
        fog.use_sigmoid = sigmoid;
        std::vector<Scalar> d(32);
        for (int i = 0; i < 32; ++i) d[i] = i / 31.0;
        const auto t = gaussian_transmission(d, fog);
        for (int i = 1; i < 32; ++i) CHECK(t[i] < t[i - 1]);
        for (Scalar v : t) {
            CHECK(v > 0.0);
            if (sigmoid) {
                CHECK(v > 0.5);
                CHECK(v <= logistic(1.0));
            } else {
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("fog_colors is the scattering-model convex combination") {
    FogParams fog;
    fog.set_atmos({0.8, 0.8, 0.8});
    const std::vector<Vec3> clear{{1, 0, 0}};

    auto foggy = fog_colors(clear, {1.0}, fog);
    CHECK(foggy[0].x == doctest::Approx(1.0));
    CHECK(foggy[0].y == doctest::Approx(0.0));

    foggy = fog_colors(clear, {0.0}, fog);
    CHECK(foggy[0].x == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(foggy[0].z == doctest::Approx(0.8).epsilon(1e-12));

    foggy = fog_colors(clear, {0.5}, fog);
    CHECK(foggy[0].x == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(foggy[0].y == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(foggy[0].z == doctest::Approx(0.4).epsilon(1e-12));

    // Every channel lies between the clear value and A.
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Vec3 c{uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
        const Scalar t = uniform(rng, 0.0, 1.0);
        const Vec3 f = fog_colors({c}, {t}, fog)[0];
        const Vec3 a = fog.atmos();
        for (int ch = 0; ch < 3; ++ch) {
            CHECK(f[ch] >= std::min(c[ch], a[ch]) - 1e-12);
            CHECK(f[ch] <= std::max(c[ch], a[ch]) + 1e-12);
        }
    }
}

TEST_CASE("fog backward chain matches finite differences") {
    std::mt19937_64 rng(17);
    for (bool sigmoid : {false, true}) {
        FogParams fog;
        fog.use_sigmoid = sigmoid;
        fog.beta_weights = {0.6};
        fog.atmos_latent = {0.3, -0.2, 0.5};

        const int n = 6;
        std::vector<Scalar> d_norm(n);
        std::vector<Vec3> clear(n);
        std::vector<Vec3> upstream(n);
        for (int i = 0; i < n; ++i) {
            d_norm[i] = uniform(rng, 0.1, 1.0);  // stays clear of the ReLU kink
            clear[i] = {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
            upstream[i] = {uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)};
        }

        auto loss = [&]() {
            const auto t = gaussian_transmission(d_norm, fog);
            const auto foggy = fog_colors(clear, t, fog);
            Scalar sum = 0;
            for (int i = 0; i < n; ++i) sum += upstream[i].dot(foggy[i]);
            return sum;
        };

        TransmissionCache cache;
        const auto t = gaussian_transmission(d_norm, fog, &cache);
        std::vector<Vec3> grad_clear(n);
        std::vector<Scalar> grad_t(n, 0.0);
        Vec3 grad_atmos;
        fog_colors_backward(upstream, clear, t, fog, grad_clear, grad_t, grad_atmos);
        std::vector<Scalar> grad_beta(1, 0.0);
        gaussian_transmission_backward(grad_t, fog, cache, grad_beta);

        const auto fd_beta = finite_diff(loss, {&fog.beta_weights[0]});
        CHECK(rel_error(grad_beta, fd_beta) <= 1e-6);

        const auto fd_atmos = finite_diff(loss, {&fog.atmos_latent.x, &fog.atmos_latent.y, &fog.atmos_latent.z});
        CHECK(rel_error({grad_atmos.x, grad_atmos.y, grad_atmos.z}, fd_atmos) <= 1e-6);

        // dG_f/dt = G_c - A, per gaussian.
        const Vec3 a = fog.atmos();
        for (int i = 0; i < n; ++i) {
            std::vector<Scalar> t_mut = t;
            auto loss_t = [&]() {
                const auto foggy = fog_colors(clear, t_mut, fog);
                Scalar sum = 0;
                for (int k = 0; k < n; ++k) sum += upstream[k].dot(foggy[k]);
                return sum;
            };
            const auto fd_t = finite_diff(loss_t, {&t_mut[i]});
            CHECK(fd_t[0] == doctest::Approx(upstream[i].dot(clear[i] - a)).epsilon(1e-6));
        }
    }
}

TEST_CASE("zero upstream produces zero fog gradients") {
    FogParams fog;
    const std::vector<Vec3> clear{{0.2, 0.4, 0.6}};
    const std::vector<Vec3> upstream{{0, 0, 0}};
    std::vector<Vec3> grad_clear(1);
    std::vector<Scalar> grad_t(1, 0.0);
    Vec3 grad_atmos;
    fog_colors_backward(upstream, clear, {0.7}, fog, grad_clear, grad_t, grad_atmos);
    CHECK(grad_clear[0].norm() == 0.0);
    CHECK(grad_t[0] == 0.0);
    CHECK(grad_atmos.norm() == 0.0);
}

TEST_CASE("wide transmission kernels stay differentiable") {
    std::mt19937_64 rng(29);
    FogParams fog;
    fog.use_sigmoid = true;
    fog.beta_weights = {0.5, 0.2, 0.1};

    const int n = 9;
    std::vector<Scalar> d_norm(n), upstream(n);
    for (int i = 0; i < n; ++i) {
        d_norm[i] = uniform(rng, 0.05, 1.0);
        upstream[i] = uniform(rng, -1.0, 1.0);
    }

    TransmissionCache cache;
    gaussian_transmission(d_norm, fog, &cache);
    std::vector<Scalar> grad_beta(3, 0.0);
    gaussian_transmission_backward(upstream, fog, cache, grad_beta);

    auto loss = [&]() {
        const auto t = gaussian_transmission(d_norm, fog);
        Scalar sum = 0;
        for (int i = 0; i < n; ++i) sum += upstream[i] * t[i];
        return sum;
    };
    const auto fd = finite_diff(loss, {&fog.beta_weights[0], &fog.beta_weights[1], &fog.beta_weights[2]});
    CHECK(rel_error(grad_beta, fd) <= 1e-6);
}
