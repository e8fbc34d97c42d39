#include "fogsplat/io.hpp"

#include <png.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace fogsplat {

namespace {

constexpr int kCheckpointVersion = 1;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

Image read_image(const std::string& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str()))
        throw DataError("PNG read failed for " + path + ": " + png.message);
    png.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw DataError("PNG decode failed for " + path + ": " + msg);
    }
    Image out(int(png.height), int(png.width), 3);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = buffer[i] / 255.0;
    return out;
}

void write_image(const Image& image, const std::string& path) {
    if (image.channels != 3) throw InvalidParameter("write_image: expected 3 channels");
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = png_uint_32(image.width);
    png.height = png_uint_32(image.height);
    png.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buffer(image.size());
    for (size_t i = 0; i < image.size(); ++i) {
        const Scalar v = std::clamp(image.data[i], Scalar(0), Scalar(1));
        buffer[i] = uint8_t(std::lround(v * 255.0));
    }
    if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw DataError("PNG write failed for " + path + ": " + png.message);
}

Image read_pfm(const std::string& path) {
    const std::string raw = read_file(path);
    size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < raw.size() && std::isspace(uint8_t(raw[pos]))) ++pos;
        const size_t start = pos;
        while (pos < raw.size() && !std::isspace(uint8_t(raw[pos]))) ++pos;
        if (start == pos)
            throw DataError("PFM header truncated in " + path + " at byte " + std::to_string(start));
        return raw.substr(start, pos - start);
    };
    const std::string magic = next_token();
    if (magic != "Pf")
        throw DataError("PFM magic mismatch in " + path + " at byte 0 (got '" + magic + "')");
    int width = 0, height = 0;
    Scalar scale = 0;
    try {
        width = std::stoi(next_token());
        height = std::stoi(next_token());
        scale = std::stod(next_token());
    } catch (const std::exception&) {
        throw DataError("PFM header malformed in " + path + " at byte " + std::to_string(pos));
    }
    if (width <= 0 || height <= 0)
        throw DataError("PFM header has invalid size in " + path + " at byte " + std::to_string(pos));
    if (scale >= 0) throw DataError("PFM in " + path + " is big-endian; only little-endian supported");
    ++pos;  // the single whitespace after the scale
    const size_t need = size_t(width) * height * sizeof(float);
    if (raw.size() - pos < need)
        throw DataError("PFM payload truncated in " + path + " at byte " + std::to_string(raw.size()));
    Image out(height, width, 1);
    const char* src = raw.data() + pos;
    // PFM rows are stored bottom-up.
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            float v;
            std::memcpy(&v, src + (size_t(height - 1 - y) * width + x) * sizeof(float), sizeof(float));
            out.at(y, x) = v;
        }
    return out;
}

void write_pfm(const Image& image, const std::string& path) {
    if (image.channels != 1) throw InvalidParameter("write_pfm: expected 1 channel");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << "Pf\n" << image.width << " " << image.height << "\n-1.0\n";
    for (int y = image.height - 1; y >= 0; --y)
        for (int x = 0; x < image.width; ++x) {
            const float v = float(image.at(y, x));
            out.write(reinterpret_cast<const char*>(&v), sizeof(float));
        }
    if (!out) throw DataError("short write to " + path);
}

namespace {

struct PlyProperty {
    std::string name;
    std::string type;
};

struct PlyHeader {
    bool binary = false;
    size_t vertex_count = 0;
    std::vector<PlyProperty> properties;
    size_t data_offset = 0;
    std::vector<std::string> comments;
};

size_t ply_type_size(const std::string& t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    throw DataError("unsupported PLY property type '" + t + "'");
}

Scalar ply_read_value(const char* p, const std::string& t) {
    if (t == "float" || t == "float32") {
        float v;
        std::memcpy(&v, p, 4);
        return v;
    }
    if (t == "double" || t == "float64") {
        double v;
        std::memcpy(&v, p, 8);
        return v;
    }
    if (t == "uchar" || t == "uint8") return *reinterpret_cast<const uint8_t*>(p);
    if (t == "char" || t == "int8") return *reinterpret_cast<const int8_t*>(p);
    if (t == "short" || t == "int16") {
        int16_t v;
        std::memcpy(&v, p, 2);
        return v;
    }
    if (t == "ushort" || t == "uint16") {
        uint16_t v;
        std::memcpy(&v, p, 2);
        return v;
    }
    if (t == "int" || t == "int32") {
        int32_t v;
        std::memcpy(&v, p, 4);
        return v;
    }
    if (t == "uint" || t == "uint32") {
        uint32_t v;
        std::memcpy(&v, p, 4);
        return v;
    }
    throw DataError("unsupported PLY property type '" + t + "'");
}

PlyHeader parse_ply_header(const std::string& raw, const std::string& path) {
    PlyHeader header;
    size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const size_t end = raw.find('\n', pos);
        if (end == std::string::npos)
            throw DataError("PLY header truncated in " + path + " at byte " + std::to_string(pos));
        std::string line = raw.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = end + 1;
        return line;
    };
    if (next_line() != "ply") throw DataError("PLY magic mismatch in " + path + " at byte 0");
    bool in_vertex = false;
    bool done = false;
    while (!done) {
        const std::string line = next_line();
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt == "binary_little_endian")
                header.binary = true;
            else if (fmt == "ascii")
                header.binary = false;
            else
                throw DataError("PLY format '" + fmt + "' unsupported in " + path);
        } else if (word == "comment") {
            header.comments.push_back(line.substr(std::min(line.size(), size_t(8))));
        } else if (word == "element") {
            std::string name;
            size_t count;
            ss >> name >> count;
            in_vertex = name == "vertex";
            if (in_vertex) header.vertex_count = count;
        } else if (word == "property") {
            std::string type, name;
            ss >> type >> name;
            if (type == "list") throw DataError("PLY list properties unsupported in " + path);
            if (in_vertex) header.properties.push_back({name, type});
        } else if (word == "end_header") {
            done = true;
        }
    }
    header.data_offset = pos;
    return header;
}

// Reads all vertex properties into column vectors keyed by property name.
std::vector<std::vector<Scalar>> read_ply_columns(const std::string& raw, const PlyHeader& h,
                                                  const std::string& path) {
    std::vector<std::vector<Scalar>> columns(h.properties.size());
    for (auto& c : columns) c.resize(h.vertex_count);
    if (h.binary) {
        size_t stride = 0;
        for (const auto& p : h.properties) stride += ply_type_size(p.type);
        if (raw.size() - h.data_offset < stride * h.vertex_count)
            throw DataError("PLY payload truncated in " + path + " at byte " + std::to_string(raw.size()));
        for (size_t v = 0; v < h.vertex_count; ++v) {
            const char* p = raw.data() + h.data_offset + v * stride;
            for (size_t c = 0; c < h.properties.size(); ++c) {
                columns[c][v] = ply_read_value(p, h.properties[c].type);
                p += ply_type_size(h.properties[c].type);
            }
        }
    } else {
        std::istringstream ss(raw.substr(h.data_offset));
        for (size_t v = 0; v < h.vertex_count; ++v)
            for (size_t c = 0; c < h.properties.size(); ++c)
                if (!(ss >> columns[c][v]))
                    throw DataError("PLY ascii payload truncated in " + path + " (vertex " + std::to_string(v) + ")");
    }
    return columns;
}

int find_column(const PlyHeader& h, const std::string& name) {
    for (size_t i = 0; i < h.properties.size(); ++i)
        if (h.properties[i].name == name) return int(i);
    return -1;
}

}  // namespace

PointCloud read_point_ply(const std::string& path) {
    const std::string raw = read_file(path);
    const PlyHeader header = parse_ply_header(raw, path);
    if (header.vertex_count == 0) throw DataError("PLY " + path + " has no vertices");
    const auto columns = read_ply_columns(raw, header, path);
    const int ix = find_column(header, "x"), iy = find_column(header, "y"), iz = find_column(header, "z");
    if (ix < 0 || iy < 0 || iz < 0) throw DataError("PLY " + path + " is missing x/y/z properties");
    int ir = find_column(header, "red"), ig = find_column(header, "green"), ib = find_column(header, "blue");
    bool byte_colors = true;
    if (ir >= 0) byte_colors = ply_type_size(header.properties[ir].type) == 1;

    PointCloud pc;
    pc.positions.resize(header.vertex_count);
    pc.colors.resize(header.vertex_count, Vec3{0.5, 0.5, 0.5});
    for (size_t v = 0; v < header.vertex_count; ++v) {
        pc.positions[v] = {columns[ix][v], columns[iy][v], columns[iz][v]};
        if (ir >= 0 && ig >= 0 && ib >= 0) {
            const Scalar scale = byte_colors ? 1.0 / 255.0 : 1.0;
            pc.colors[v] = {columns[ir][v] * scale, columns[ig][v] * scale, columns[ib][v] * scale};
        }
    }
    return pc;
}

std::vector<Camera> read_cameras_json(const std::string& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cameras file " + path + " is not valid JSON: " + e.what());
    }
    if (!doc.is_array()) throw DataError("cameras file " + path + ": expected a JSON array");
    std::vector<Camera> cams;
    for (size_t i = 0; i < doc.size(); ++i) {
        const auto& e = doc[i];
        Camera cam;
        try {
            cam.fx = e.at("fx");
            cam.fy = e.at("fy");
            cam.cx = e.at("cx");
            cam.cy = e.at("cy");
            cam.width = e.at("width");
            cam.height = e.at("height");
            cam.name = e.at("name");
            const auto& r = e.at("R");
            const auto& t = e.at("t");
            if (r.size() != 9 || t.size() != 3)
                throw DataError("camera '" + cam.name + "' in " + path + ": R must have 9 entries and t 3");
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) cam.rotation.m[a][b] = r[a * 3 + b];
            cam.translation = {t[0], t[1], t[2]};
            if (e.contains("near")) cam.near_clip = e.at("near");
            if (e.contains("far")) cam.far_clip = e.at("far");
        } catch (const nlohmann::json::exception& ex) {
            throw DataError("camera entry " + std::to_string(i) + " in " + path + " is malformed: " + ex.what());
        }
        cams.push_back(cam);
    }
    return cams;
}

void write_cameras_json(const std::vector<Camera>& cameras, const std::string& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const Camera& cam : cameras) {
        nlohmann::json e;
        e["fx"] = cam.fx;
        e["fy"] = cam.fy;
        e["cx"] = cam.cx;
        e["cy"] = cam.cy;
        e["width"] = cam.width;
        e["height"] = cam.height;
        e["name"] = cam.name;
        std::vector<Scalar> r(9);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) r[a * 3 + b] = cam.rotation.m[a][b];
        e["R"] = r;
        e["t"] = std::vector<Scalar>{cam.translation.x, cam.translation.y, cam.translation.z};
        e["near"] = cam.near_clip;
        e["far"] = cam.far_clip;
        doc.push_back(e);
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << doc.dump(2) << "\n";
}

std::vector<std::string> list_files(const std::string& dir, const std::string& extension) {
    std::vector<std::string> files;
    if (!fs::is_directory(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == extension)
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

SceneBundle load_scene(const std::string& dir) {
    SceneBundle bundle;
    bundle.root = dir;
    const std::string cam_path = dir + "/cameras.json";
    if (!fs::exists(cam_path)) throw DataError("scene " + dir + " is missing cameras.json");
    bundle.cameras = read_cameras_json(cam_path);
    if (bundle.cameras.empty()) throw DataError(cam_path + " contains no cameras");
    std::sort(bundle.cameras.begin(), bundle.cameras.end(),
              [](const Camera& a, const Camera& b) { return a.name < b.name; });

    for (Camera& cam : bundle.cameras) {
        // Accept slightly non-orthonormal inputs and snap them back.
        const Mat3 rrt = cam.rotation * cam.rotation.transpose();
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                const Scalar want = a == b ? 1.0 : 0.0;
                if (std::abs(rrt.m[a][b] - want) > 1e-3)
                    throw DataError("camera '" + cam.name + "' in " + cam_path +
                                    ": field R is not orthonormal (error > 1e-3)");
            }
        // Gram-Schmidt re-orthonormalization of the rows.
        Vec3 r0{cam.rotation.m[0][0], cam.rotation.m[0][1], cam.rotation.m[0][2]};
        Vec3 r1{cam.rotation.m[1][0], cam.rotation.m[1][1], cam.rotation.m[1][2]};
        r0 = r0 * (1.0 / r0.norm());
        r1 = r1 - r0 * r0.dot(r1);
        r1 = r1 * (1.0 / r1.norm());
        const Vec3 r2{r0.y * r1.z - r0.z * r1.y, r0.z * r1.x - r0.x * r1.z, r0.x * r1.y - r0.y * r1.x};
        for (int b = 0; b < 3; ++b) {
            cam.rotation.m[0][b] = r0[b];
            cam.rotation.m[1][b] = r1[b];
            cam.rotation.m[2][b] = r2[b];
        }
        cam.validate();

        const std::string img = dir + "/images/" + cam.name + ".png";
        if (!fs::exists(img)) throw DataError("scene " + dir + ": camera '" + cam.name + "' has no image " + img);
        bundle.image_paths.push_back(img);

        const std::string depth = dir + "/depths/" + cam.name + ".pfm";
        bundle.depth_paths.push_back(fs::exists(depth) ? depth : "");
        const std::string clear = dir + "/clear/" + cam.name + ".png";
        bundle.clear_paths.push_back(fs::exists(clear) ? clear : "");
    }

    // Validate image sizes against the camera intrinsics.
    for (size_t i = 0; i < bundle.cameras.size(); ++i) {
        const Image img = read_image(bundle.image_paths[i]);
        const Camera& cam = bundle.cameras[i];
        if (img.width != cam.width || img.height != cam.height)
            throw DataError("scene " + dir + ": image " + bundle.image_paths[i] + " is " +
                            std::to_string(img.width) + "x" + std::to_string(img.height) + " but camera '" +
                            cam.name + "' declares " + std::to_string(cam.width) + "x" +
                            std::to_string(cam.height));
    }

    const std::string ply = dir + "/points.ply";
    if (!fs::exists(ply)) throw DataError("scene " + dir + " is missing points.ply");
    bundle.points = read_point_ply(ply);
    return bundle;
}

namespace {

nlohmann::json fog_to_json(const FogParams& fog) {
    nlohmann::json j;
    j["beta_weights"] = fog.beta_weights;
    j["atmos_latent"] = std::vector<Scalar>{fog.atmos_latent.x, fog.atmos_latent.y, fog.atmos_latent.z};
    j["use_sigmoid"] = fog.use_sigmoid;
    return j;
}

FogParams fog_from_json(const nlohmann::json& j) {
    FogParams fog;
    fog.beta_weights = j.at("beta_weights").get<std::vector<Scalar>>();
    const auto a = j.at("atmos_latent");
    fog.atmos_latent = {a[0], a[1], a[2]};
    fog.use_sigmoid = j.at("use_sigmoid");
    return fog;
}

}  // namespace

void save_checkpoint(const std::string& ply_path, const GaussianCloud& cloud, const FogParams& fog,
                     int iteration, const std::vector<Camera>& cameras, const nlohmann::json& train_config) {
    cloud.validate();
    const size_t n = cloud.size();
    const int rest = cloud.coeffs_per_channel() - 1;

    std::ofstream out(ply_path, std::ios::binary);
    if (!out) throw DataError("cannot open " + ply_path + " for writing");
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "comment fogsplat_checkpoint_version " << kCheckpointVersion << "\n";
    out << "element vertex " << n << "\n";
    auto prop = [&](const std::string& name) { out << "property double " << name << "\n"; };
    prop("x");
    prop("y");
    prop("z");
    for (int k = 0; k < 3; ++k) prop("f_dc_" + std::to_string(k));
    for (int k = 0; k < rest * 3; ++k) prop("f_rest_" + std::to_string(k));
    prop("opacity");
    for (int k = 0; k < 3; ++k) prop("scale_" + std::to_string(k));
    for (int k = 0; k < 4; ++k) prop("rot_" + std::to_string(k));
    out << "end_header\n";

    auto put = [&](Scalar v) { out.write(reinterpret_cast<const char*>(&v), sizeof(double)); };
    for (size_t i = 0; i < n; ++i) {
        put(cloud.positions[i].x);
        put(cloud.positions[i].y);
        put(cloud.positions[i].z);
        const auto c = cloud.coeffs(i);
        for (int ch = 0; ch < 3; ++ch) put(c[ch]);  // dc, channel-major triple
        // f_rest follows the splat convention: per channel, then per basis.
        for (int ch = 0; ch < 3; ++ch)
            for (int k = 1; k <= rest; ++k) put(c[3 * k + ch]);
        put(cloud.opacity_latents[i]);
        put(cloud.log_scales[i].x);
        put(cloud.log_scales[i].y);
        put(cloud.log_scales[i].z);
        for (int q = 0; q < 4; ++q) put(cloud.rotations[i][q]);
    }
    if (!out) throw DataError("short write to " + ply_path);
    out.close();

    nlohmann::json meta;
    meta["format_version"] = kCheckpointVersion;
    meta["iteration"] = iteration;
    meta["gaussians"] = n;
    meta["sh_degree"] = cloud.sh_degree;
    meta["fog"] = fog_to_json(fog);
    meta["train_config"] = train_config;
    meta["cameras"] = nlohmann::json::array();
    for (const Camera& cam : cameras) {
        nlohmann::json e;
        e["fx"] = cam.fx;
        e["fy"] = cam.fy;
        e["cx"] = cam.cx;
        e["cy"] = cam.cy;
        e["width"] = cam.width;
        e["height"] = cam.height;
        e["name"] = cam.name;
        std::vector<Scalar> r(9);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) r[a * 3 + b] = cam.rotation.m[a][b];
        e["R"] = r;
        e["t"] = std::vector<Scalar>{cam.translation.x, cam.translation.y, cam.translation.z};
        e["near"] = cam.near_clip;
        e["far"] = cam.far_clip;
        meta["cameras"].push_back(e);
    }
    const std::string json_path = fs::path(ply_path).replace_extension(".json").string();
    std::ofstream jout(json_path);
    if (!jout) throw DataError("cannot open " + json_path + " for writing");
    jout << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& ply_path) {
    const std::string json_path = fs::path(ply_path).replace_extension(".json").string();
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file(json_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint sidecar " + json_path + " is not valid JSON: " + e.what());
    }
    Checkpoint ck;
    ck.format_version = meta.at("format_version");
    if (ck.format_version != kCheckpointVersion)
        throw DataError("checkpoint " + ply_path + " has format version " +
                        std::to_string(ck.format_version) + " but this build reads version " +
                        std::to_string(kCheckpointVersion));
    ck.iteration = meta.at("iteration");
    ck.fog = fog_from_json(meta.at("fog"));
    ck.train_config = meta.value("train_config", nlohmann::json::object());
    for (const auto& e : meta.at("cameras")) {
        Camera cam;
        cam.fx = e.at("fx");
        cam.fy = e.at("fy");
        cam.cx = e.at("cx");
        cam.cy = e.at("cy");
        cam.width = e.at("width");
        cam.height = e.at("height");
        cam.name = e.at("name");
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) cam.rotation.m[a][b] = e.at("R")[a * 3 + b];
        cam.translation = {e.at("t")[0], e.at("t")[1], e.at("t")[2]};
        cam.near_clip = e.at("near");
        cam.far_clip = e.at("far");
        ck.cameras.push_back(cam);
    }

    const std::string raw = read_file(ply_path);
    const PlyHeader header = parse_ply_header(raw, ply_path);
    if (header.vertex_count != size_t(meta.at("gaussians")))
        throw DataError("checkpoint " + ply_path + " vertex count disagrees with its sidecar");
    const auto columns = read_ply_columns(raw, header, ply_path);
    auto col = [&](const std::string& name) {
        const int i = find_column(header, name);
        if (i < 0) throw DataError("checkpoint " + ply_path + " is missing property " + name);
        return i;
    };

    GaussianCloud& cloud = ck.cloud;
    cloud.sh_degree = meta.at("sh_degree");
    const size_t n = header.vertex_count;
    const int rest = cloud.coeffs_per_channel() - 1;
    cloud.positions.resize(n);
    cloud.log_scales.resize(n);
    cloud.rotations.resize(n);
    cloud.opacity_latents.resize(n);
    cloud.color_coeffs.resize(n * cloud.coeffs_per_gaussian());
    const int cx = col("x"), cy = col("y"), cz = col("z"), cop = col("opacity");
    const int cs0 = col("scale_0"), cs1 = col("scale_1"), cs2 = col("scale_2");
    const int cr0 = col("rot_0"), cr1 = col("rot_1"), cr2 = col("rot_2"), cr3 = col("rot_3");
    std::vector<int> dc(3), restc(size_t(rest) * 3);
    for (int k = 0; k < 3; ++k) dc[k] = col("f_dc_" + std::to_string(k));
    for (int k = 0; k < rest * 3; ++k) restc[k] = col("f_rest_" + std::to_string(k));
    for (size_t i = 0; i < n; ++i) {
        cloud.positions[i] = {columns[cx][i], columns[cy][i], columns[cz][i]};
        cloud.log_scales[i] = {columns[cs0][i], columns[cs1][i], columns[cs2][i]};
        cloud.rotations[i] = {columns[cr0][i], columns[cr1][i], columns[cr2][i], columns[cr3][i]};
        cloud.opacity_latents[i] = columns[cop][i];
        Scalar* c = cloud.color_coeffs.data() + i * cloud.coeffs_per_gaussian();
        for (int ch = 0; ch < 3; ++ch) c[ch] = columns[dc[ch]][i];
        for (int ch = 0; ch < 3; ++ch)
            for (int k = 1; k <= rest; ++k) c[3 * k + ch] = columns[restc[ch * rest + (k - 1)]][i];
    }
    cloud.validate();
    return ck;
}

}  // namespace fogsplat
