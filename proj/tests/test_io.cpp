#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "fogsplat/io.hpp"
#include "fogsplat/optimizer.hpp"
#include "test_scenes.hpp"

namespace fs = std::filesystem;
using namespace fogsplat;
using fogsplat::testing::look_forward_camera;
using fogsplat::testing::random_cloud;

namespace {

struct TempDir {
    fs::path path;

    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("fogsplat_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& rel = "") const { return (path / rel).string(); }
};

Image random_image(int h, int w, int c, uint64_t seed) {
    std::mt19937_64 rng(seed);
    Image img(h, w, c);
    for (Scalar& v : img.data) v = uniform(rng, 0.0, 1.0);
    return img;
}

}  // namespace

TEST_CASE("png round trip within quantization") {
    TempDir dir("png");
    const Image img = random_image(12, 17, 3, 1);
    write_image(img, dir.str("test.png"));
    const Image back = read_image(dir.str("test.png"));
    REQUIRE(back.same_shape(img));
    for (size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.data[i] - img.data[i]) <= 1.0 / 510);

    SUBCASE("boundary values survive exactly") {
        Image bw(2, 2, 3, 0.0);
        bw.at(0, 0, 0) = bw.at(0, 0, 1) = bw.at(0, 0, 2) = 1.0;
        write_image(bw, dir.str("bw.png"));
        const Image back2 = read_image(dir.str("bw.png"));
        CHECK(back2.at(0, 0, 0) == 1.0);
        CHECK(back2.at(1, 1, 0) == 0.0);
    }

    SUBCASE("missing file raises a data error") {
        CHECK_THROWS_AS(read_image(dir.str("nope.png")), DataError);
    }
}

TEST_CASE("pfm round trip is exact") {
    TempDir dir("pfm");
    Image img = random_image(9, 5, 1, 2);
    // Values pass through float32 on disk; store representables to assert exactness.
    for (Scalar& v : img.data) v = float(v);
    write_pfm(img, dir.str("map.pfm"));
    const Image back = read_pfm(dir.str("map.pfm"));
    REQUIRE(back.same_shape(img));
    CHECK(back.data == img.data);

    SUBCASE("malformed header reports the byte offset") {
        std::ofstream bad(dir.str("bad.pfm"), std::ios::binary);
        bad << "PF\n4 4\n-1.0\n";  // color magic, not supported
        bad.close();
        CHECK_THROWS_WITH_AS(read_pfm(dir.str("bad.pfm")), doctest::Contains("byte 0"), DataError);

        std::ofstream trunc(dir.str("trunc.pfm"), std::ios::binary);
        trunc << "Pf\n4 4\n-1.0\n";
        trunc.write("\0\0\0\0", 4);  // one float instead of sixteen
        trunc.close();
        CHECK_THROWS_WITH_AS(read_pfm(dir.str("trunc.pfm")), doctest::Contains("truncated"), DataError);
    }
}

TEST_CASE("point ply reading: ascii and binary") {
    TempDir dir("ply");

    SUBCASE("ascii with uchar colors") {
        std::ofstream out(dir.str("pts.ply"));
        out << "ply\nformat ascii 1.0\nelement vertex 2\n"
               "property float x\nproperty float y\nproperty float z\n"
               "property uchar red\nproperty uchar green\nproperty uchar blue\n"
               "end_header\n"
               "1 2 3 255 0 0\n"
               "-1 -2 -3 0 255 0\n";
        out.close();
        const PointCloud pc = read_point_ply(dir.str("pts.ply"));
        REQUIRE(pc.positions.size() == 2);
        CHECK(pc.positions[0].x == 1.0);
        CHECK(pc.positions[1].z == -3.0);
        CHECK(pc.colors[0].x == doctest::Approx(1.0));
        CHECK(pc.colors[1].y == doctest::Approx(1.0));
    }

    SUBCASE("binary little endian floats") {
        std::ofstream out(dir.str("bin.ply"), std::ios::binary);
        out << "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
               "property float x\nproperty float y\nproperty float z\nend_header\n";
        const float v[3] = {0.5f, 1.5f, 2.5f};
        out.write(reinterpret_cast<const char*>(v), sizeof(v));
        out.close();
        const PointCloud pc = read_point_ply(dir.str("bin.ply"));
        REQUIRE(pc.positions.size() == 1);
        CHECK(pc.positions[0].y == 1.5);
        CHECK(pc.colors[0].x == doctest::Approx(0.5));  // default mid-gray
    }

    SUBCASE("truncated binary payload") {
        std::ofstream out(dir.str("short.ply"), std::ios::binary);
        out << "ply\nformat binary_little_endian 1.0\nelement vertex 4\n"
               "property float x\nproperty float y\nproperty float z\nend_header\n";
        const float v[3] = {1, 2, 3};
        out.write(reinterpret_cast<const char*>(v), sizeof(v));
        out.close();
        CHECK_THROWS_WITH_AS(read_point_ply(dir.str("short.ply")), doctest::Contains("truncated"), DataError);
    }
}

TEST_CASE("cameras json round trip") {
    TempDir dir("cams");
    std::vector<Camera> cams;
    for (int i = 0; i < 3; ++i) {
        Camera cam = look_forward_camera(64, 48);
        cam.name = "cam_" + std::to_string(i);
        cam.translation = {0.1 * i, 0, 0.2 * i};
        cams.push_back(cam);
    }
    write_cameras_json(cams, dir.str("cameras.json"));
    const std::vector<Camera> back = read_cameras_json(dir.str("cameras.json"));
    REQUIRE(back.size() == 3);
    CHECK(back[1].name == "cam_1");
    CHECK(back[2].translation.z == doctest::Approx(0.4));
    CHECK(back[0].fx == cams[0].fx);

    SUBCASE("malformed entries name the problem") {
        std::ofstream bad(dir.str("bad.json"));
        bad << "[{\"fx\": 1.0}]";
        bad.close();
        CHECK_THROWS_WITH_AS(read_cameras_json(dir.str("bad.json")), doctest::Contains("malformed"), DataError);
        std::ofstream notjson(dir.str("neither.json"));
        notjson << "hello";
        notjson.close();
        CHECK_THROWS_AS(read_cameras_json(dir.str("neither.json")), DataError);
    }
}

namespace {

// Writes a minimal consistent scene directory: 1 camera, image, 3 points.
void write_minimal_scene(const TempDir& dir, int width = 16, int height = 12) {
    Camera cam = look_forward_camera(width, height);
    cam.name = "v0";
    write_cameras_json({cam}, dir.str("cameras.json"));
    fs::create_directories(dir.str("images"));
    write_image(Image(height, width, 3, 0.5), dir.str("images/v0.png"));
    std::ofstream ply(dir.str("points.ply"));
    ply << "ply\nformat ascii 1.0\nelement vertex 3\n"
           "property float x\nproperty float y\nproperty float z\n"
           "property uchar red\nproperty uchar green\nproperty uchar blue\n"
           "end_header\n0 0 2 255 0 0\n0.2 0 2.5 0 255 0\n0 0.2 3 0 0 255\n";
}

}  // namespace

TEST_CASE("load_scene") {
    SUBCASE("minimal fixture loads") {
        TempDir dir("scene_ok");
        write_minimal_scene(dir);
        const SceneBundle bundle = load_scene(dir.str());
        CHECK(bundle.cameras.size() == 1);
        CHECK(bundle.points.positions.size() == 3);
        CHECK(bundle.image_paths.size() == 1);
        CHECK(bundle.depth_paths[0].empty());
        // Loading twice yields identical bundles.
        const SceneBundle again = load_scene(dir.str());
        CHECK(again.cameras[0].name == bundle.cameras[0].name);
        CHECK(again.points.positions[2].z == bundle.points.positions[2].z);
    }

    SUBCASE("camera/image size mismatch names both sides") {
        TempDir dir("scene_mismatch");
        write_minimal_scene(dir);
        write_image(Image(10, 10, 3, 0.5), dir.str("images/v0.png"));
        CHECK_THROWS_WITH_AS(load_scene(dir.str()), doctest::Contains("v0"), DataError);
        try {
            load_scene(dir.str());
        } catch (const DataError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("10x10") != std::string::npos);
            CHECK(msg.find("16x12") != std::string::npos);
        }
    }

    SUBCASE("non-orthonormal rotation is rejected") {
        TempDir dir("scene_rot");
        write_minimal_scene(dir);
        Camera cam = look_forward_camera(16, 12);
        cam.name = "v0";
        cam.rotation.m[0][1] = 0.2;  // way past the 1e-3 gate
        write_cameras_json({cam}, dir.str("cameras.json"));
        CHECK_THROWS_WITH_AS(load_scene(dir.str()), doctest::Contains("orthonormal"), DataError);
    }

    SUBCASE("missing pieces produce named errors") {
        TempDir dir("scene_missing");
        CHECK_THROWS_WITH_AS(load_scene(dir.str()), doctest::Contains("cameras.json"), DataError);
        write_minimal_scene(dir);
        fs::remove(dir.str("points.ply"));
        CHECK_THROWS_WITH_AS(load_scene(dir.str()), doctest::Contains("points.ply"), DataError);
    }

    SUBCASE("slightly non-orthonormal rotations are re-orthonormalized") {
        TempDir dir("scene_snap");
        write_minimal_scene(dir);
        Camera cam = look_forward_camera(16, 12);
        cam.name = "v0";
        cam.rotation.m[0][1] = 5e-4;  // inside the 1e-3 gate
        write_cameras_json({cam}, dir.str("cameras.json"));
        const SceneBundle bundle = load_scene(dir.str());
        CHECK_NOTHROW(bundle.cameras[0].validate());  // now orthonormal to 1e-6
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    TempDir dir("ckpt");
    const Camera cam = look_forward_camera(32, 32);
    GaussianCloud cloud = random_cloud(17, 3, cam);
    cloud.sh_degree = 1;
    // Rebuild coefficient array for degree 1 with arbitrary values.
    std::mt19937_64 rng(9);
    cloud.color_coeffs.resize(17 * 12);
    for (Scalar& c : cloud.color_coeffs) c = uniform(rng, -2.0, 2.0);

    FogParams fog;
    fog.beta_weights = {0.12345678901234567};
    fog.atmos_latent = {1.4142135623730951, -0.577215664901532, 0.301029995663981};
    fog.use_sigmoid = false;

    const nlohmann::json config = train_config_to_json(TrainConfig{});
    save_checkpoint(dir.str("ck.ply"), cloud, fog, 1234, {cam}, config);
    const Checkpoint back = load_checkpoint(dir.str("ck.ply"));

    CHECK(back.iteration == 1234);
    CHECK(back.cloud.sh_degree == 1);
    REQUIRE(back.cloud.size() == cloud.size());
    CHECK(back.cloud.positions == cloud.positions);  // bit-exact doubles
    CHECK(back.cloud.color_coeffs == cloud.color_coeffs);
    CHECK(back.cloud.opacity_latents == cloud.opacity_latents);
    for (size_t i = 0; i < cloud.size(); ++i) {
        CHECK(back.cloud.log_scales[i].x == cloud.log_scales[i].x);
        CHECK(back.cloud.rotations[i].w == cloud.rotations[i].w);
        CHECK(back.cloud.rotations[i].z == cloud.rotations[i].z);
    }
    CHECK(back.fog.beta_weights == fog.beta_weights);
    CHECK(back.fog.atmos_latent.x == fog.atmos_latent.x);
    CHECK(back.fog.use_sigmoid == fog.use_sigmoid);
    REQUIRE(back.cameras.size() == 1);
    CHECK(back.cameras[0].fx == cam.fx);

    SUBCASE("a second save of the loaded state is byte-identical") {
        save_checkpoint(dir.str("ck2.ply"), back.cloud, back.fog, back.iteration, back.cameras,
                        back.train_config);
        std::ifstream f1(dir.str("ck.ply"), std::ios::binary), f2(dir.str("ck2.ply"), std::ios::binary);
        std::string s1((std::istreambuf_iterator<char>(f1)), {});
        std::string s2((std::istreambuf_iterator<char>(f2)), {});
        CHECK(s1 == s2);
    }

    SUBCASE("version bump is rejected with both versions named") {
        nlohmann::json meta = nlohmann::json::parse(std::ifstream(dir.str("ck.json")));
        meta["format_version"] = 99;
        std::ofstream(dir.str("ck.json")) << meta.dump();
        CHECK_THROWS_WITH_AS(load_checkpoint(dir.str("ck.ply")), doctest::Contains("99"), DataError);
    }

    SUBCASE("truncated checkpoint loads nothing") {
        // Chop the tail off the PLY payload.
        std::ifstream in(dir.str("ck.ply"), std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        std::ofstream out(dir.str("ck.ply"), std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), bytes.size() / 2);
        out.close();
        CHECK_THROWS_AS(load_checkpoint(dir.str("ck.ply")), DataError);
    }
}
