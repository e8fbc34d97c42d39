#pragma once

#include <json.hpp>

#include "fogsplat/core.hpp"
#include "fogsplat/fog.hpp"
#include "fogsplat/scene.hpp"

namespace fogsplat {

// 8-bit PNG <-> [0,1] floats by v / 255; no gamma transform is applied.
// Grayscale and RGBA inputs are converted to 3 channels.
Image read_image(const std::string& path);
void write_image(const Image& image, const std::string& path);

// Single-channel PFM, little-endian (scale header -1.0), rows bottom-up.
// Values pass through float32 on disk.
Image read_pfm(const std::string& path);
void write_pfm(const Image& image, const std::string& path);

struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;  // [0,1]
};

// Reads x/y/z plus red/green/blue (uchar or float) vertices from an ascii or
// binary-little-endian PLY. Missing colors default to mid-gray.
PointCloud read_point_ply(const std::string& path);

std::vector<Camera> read_cameras_json(const std::string& path);
void write_cameras_json(const std::vector<Camera>& cameras, const std::string& path);

struct SceneBundle {
    std::string root;
    std::vector<Camera> cameras;          // sorted by name
    std::vector<std::string> image_paths; // foggy inputs, parallel to cameras
    std::vector<std::string> depth_paths; // pseudo-depth PFMs; empty when absent
    std::vector<std::string> clear_paths; // ground-truth clear views; empty when absent
    PointCloud points;
};

// Loads and validates a scene directory: cameras.json, images/, points.ply,
// optional depths/ and clear/. Errors name the offending file and field.
SceneBundle load_scene(const std::string& dir);

struct Checkpoint {
    int format_version = 0;
    GaussianCloud cloud;
    FogParams fog;
    int iteration = 0;
    std::vector<Camera> cameras;
    nlohmann::json train_config;  // opaque here; the optimizer owns the schema
};

// Writes latents as a binary PLY with splat-convention attribute names
// (double precision so reloads are bit-exact) plus a JSON sidecar with the
// fog parameters, cameras, iteration and config.
void save_checkpoint(const std::string& ply_path, const GaussianCloud& cloud, const FogParams& fog,
                     int iteration, const std::vector<Camera>& cameras, const nlohmann::json& train_config);

Checkpoint load_checkpoint(const std::string& ply_path);

// Sorted list of regular files in a directory with the given extension.
std::vector<std::string> list_files(const std::string& dir, const std::string& extension);

}  // namespace fogsplat
