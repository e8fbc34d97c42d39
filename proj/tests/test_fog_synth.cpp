#include <doctest.h>

#include <random>

#include "fogsplat/fog_synth.hpp"

using namespace fogsplat;

namespace {

Image random_image(int h, int w, int c, uint64_t seed) {
    std::mt19937_64 rng(seed);
    Image img(h, w, c);
    for (Scalar& v : img.data) v = uniform(rng, 0.0, 1.0);
    return img;
}

}  // namespace

TEST_CASE("synthesize_fog hand cases") {
    Image clear(2, 2, 3, 0.0);
    clear.at(0, 0, 0) = 1.0;  // J = (1,0,0) at the deepest pixel
    Image depth(2, 2, 1, 0.0);
    depth.at(0, 0) = 5.0;  // normalizes to d = 1 there, 0 elsewhere

    SUBCASE("beta = 0 is the identity") {
        const SynthResult r = synthesize_fog(clear, depth, 0.0, {0.8, 0.8, 0.8});
        CHECK(r.hazy.data == clear.data);
        for (Scalar t : r.t_map.data) CHECK(t == 1.0);
    }

    SUBCASE("large beta fades to the atmospheric light") {
        const SynthResult r = synthesize_fog(clear, depth, 200.0, {0.8, 0.7, 0.6});
        CHECK(r.hazy.at(0, 0, 0) == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(r.hazy.at(0, 0, 1) == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(r.hazy.at(0, 0, 2) == doctest::Approx(0.6).epsilon(1e-12));
    }

    SUBCASE("beta = ln 2 at unit depth") {
        const SynthResult r = synthesize_fog(clear, depth, std::log(2.0), {0.8, 0.8, 0.8});
        CHECK(r.t_map.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(r.hazy.at(0, 0, 0) == doctest::Approx(0.9).epsilon(1e-12));
        CHECK(r.hazy.at(0, 0, 1) == doctest::Approx(0.4).epsilon(1e-12));
        CHECK(r.hazy.at(0, 0, 2) == doctest::Approx(0.4).epsilon(1e-12));
    }

    SUBCASE("negative beta is rejected") {
        CHECK_THROWS_AS(synthesize_fog(clear, depth, -0.1, {0.8, 0.8, 0.8}), InvalidParameter);
    }
}

TEST_CASE("synthesis stays in range and fades monotonically") {
    const Image clear = random_image(16, 16, 3, 4);
    const Image depth = random_image(16, 16, 1, 5);
    const Vec3 atmos{0.85, 0.8, 0.75};

    Image prev;
    for (Scalar beta : {0.0, 0.3, 0.8, 1.5, 3.0}) {
        const SynthResult r = synthesize_fog(clear, depth, beta, atmos);
        for (size_t i = 0; i < r.hazy.size(); ++i) {
            CHECK(r.hazy.data[i] >= 0.0);
            CHECK(r.hazy.data[i] <= 1.0);
        }
        if (prev.size() > 0) {
            // Increasing beta moves every channel monotonically toward A.
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x)
                    for (int c = 0; c < 3; ++c) {
                        const Scalar a = atmos[c];
                        const Scalar d_new = std::abs(r.hazy.at(y, x, c) - a);
                        const Scalar d_old = std::abs(prev.at(y, x, c) - a);
                        CHECK(d_new <= d_old + 1e-12);
                    }
        }
        prev = r.hazy;
    }
}

TEST_CASE("analytic_dehaze inverts synthesize_fog wherever t >= 0.05") {
    const Image clear = random_image(24, 24, 3, 6);
    const Image depth = random_image(24, 24, 1, 7);
    const Vec3 atmos{0.8, 0.82, 0.84};
    const SynthResult r = synthesize_fog(clear, depth, 1.1, atmos);
    const Image recovered = analytic_dehaze(r.hazy, r.t_map, atmos);
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
            if (r.t_map.at(y, x) < 0.05) continue;
            for (int c = 0; c < 3; ++c)
                CHECK(std::abs(recovered.at(y, x, c) - clear.at(y, x, c)) <= 1e-6);
        }

    SUBCASE("t = 1 returns the input") {
        const Image ones(4, 4, 1, 1.0);
        const Image hazy = random_image(4, 4, 3, 8);
        CHECK(analytic_dehaze(hazy, ones, atmos).data == hazy.data);
    }

    SUBCASE("I == A at the transmission floor clamps cleanly") {
        Image hazy(4, 4, 3);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                for (int c = 0; c < 3; ++c) hazy.at(y, x, c) = atmos[c];
        const Image tiny_t(4, 4, 1, 1e-6);
        const Image j = analytic_dehaze(hazy, tiny_t, atmos);
        CHECK(j.all_finite());
        for (Scalar v : j.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("sample_scene_params is seeded and in range") {
    Scalar beta1, beta2;
    Vec3 a1, a2;
    sample_scene_params(123, beta1, a1);
    sample_scene_params(123, beta2, a2);
    CHECK(beta1 == beta2);
    CHECK(a1.x == a2.x);

    sample_scene_params(124, beta2, a2);
    CHECK(beta1 != beta2);

    std::mt19937_64 seeds(0);
    for (int i = 0; i < 1000; ++i) {
        Scalar beta;
        Vec3 a;
        sample_scene_params(seeds(), beta, a);
        CHECK(beta >= 0.4);
        CHECK(beta < 1.2);
        for (int c = 0; c < 3; ++c) {
            CHECK(a[c] >= 0.7);
            CHECK(a[c] < 0.95);
        }
    }
}
