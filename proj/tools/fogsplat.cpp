// fogsplat: desk-scale differentiable Gaussian splatting for foggy scenes.
// Subcommands: synth (hazy dataset generation), train, render, eval.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "fogsplat/fog_synth.hpp"
#include "fogsplat/io.hpp"
#include "fogsplat/optimizer.hpp"

namespace fs = std::filesystem;
using namespace fogsplat;

namespace {

int run_synth(const std::string& clear_dir, const std::string& depth_dir, uint64_t seed,
              double beta_override, const std::string& atmos_override, const std::string& out_dir) {
    const auto clear_files = list_files(clear_dir, ".png");
    if (clear_files.empty()) throw DataError("no .png files in " + clear_dir);

    Scalar beta;
    Vec3 atmos;
    sample_scene_params(seed, beta, atmos);
    if (beta_override >= 0) beta = beta_override;
    if (!atmos_override.empty()) {
        double r, g, b;
        if (std::sscanf(atmos_override.c_str(), "%lf,%lf,%lf", &r, &g, &b) != 3)
            throw InvalidParameter("--A expects R,G,B");
        atmos = {r, g, b};
    }

    fs::create_directories(out_dir);
    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["beta"] = beta;
    manifest["A"] = std::vector<Scalar>{atmos.x, atmos.y, atmos.z};
    manifest["images"] = nlohmann::json::array();

    for (const std::string& path : clear_files) {
        const std::string stem = fs::path(path).stem().string();
        const Image clear = read_image(path);
        const std::string depth_path = depth_dir + "/" + stem + ".pfm";
        if (!fs::exists(depth_path)) throw DataError("missing depth map " + depth_path);
        const Image depth = read_pfm(depth_path);
        const SynthResult result = synthesize_fog(clear, depth, beta, atmos);
        write_image(result.hazy, out_dir + "/" + stem + ".png");
        write_pfm(result.t_map, out_dir + "/" + stem + "_t.pfm");
        manifest["images"].push_back(stem);
        std::cout << stem << ": beta=" << beta << " A=(" << atmos.x << "," << atmos.y << "," << atmos.z
                  << ")\n";
    }
    std::ofstream mf(out_dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";
    return 0;
}

int run_train(const std::string& scene_dir, int iters, const std::string& preset, bool no_sigmoid,
              const std::vector<std::string>& disabled, uint64_t seed, const std::string& out_dir,
              bool literal_eq10, bool dump_priors, int checkpoint_every) {
    TrainConfig config = preset_config(preset);
    if (iters > 0) config.iterations = iters;
    config.seed = seed;
    config.use_sigmoid = !no_sigmoid;
    config.literal_eq10 = literal_eq10;
    config.checkpoint_interval = checkpoint_every;
    for (const std::string& name : disabled) {
        if (name == "dcp")
            config.weights.enable_dcp = false;
        else if (name == "bcp")
            config.weights.enable_bcp = false;
        else if (name == "depth")
            config.weights.enable_depth = false;
        else if (name == "dweighted")
            config.weights.enable_dweighted = false;
        else
            throw InvalidParameter("--disable-loss: unknown term '" + name + "'");
    }

    const SceneBundle bundle = load_scene(scene_dir);
    std::vector<Image> foggy, depths;
    for (size_t i = 0; i < bundle.cameras.size(); ++i) {
        foggy.push_back(read_image(bundle.image_paths[i]));
        depths.push_back(bundle.depth_paths[i].empty() ? Image{} : read_pfm(bundle.depth_paths[i]));
    }
    GaussianCloud cloud = init_cloud_from_points(bundle.points.positions, bundle.points.colors,
                                                 config.sh_degree);

    fs::create_directories(out_dir);
    if (dump_priors) {
        fs::create_directories(out_dir + "/priors");
        for (size_t i = 0; i < foggy.size(); ++i) {
            const ViewPriors vp = build_view_priors(foggy[i], config);
            write_pfm(vp.t_dcp, out_dir + "/priors/" + bundle.cameras[i].name + "_dcp.pfm");
            write_pfm(vp.t_bcp, out_dir + "/priors/" + bundle.cameras[i].name + "_bcp.pfm");
        }
    }

    Trainer trainer(std::move(cloud), FogParams{}, bundle.cameras, std::move(foggy), std::move(depths),
                    config);
    std::ofstream log(out_dir + "/train_log.jsonl");
    const nlohmann::json config_json = train_config_to_json(config);
    for (int it = 0; it < config.iterations; ++it) {
        const LossReport report = trainer.step();
        log << loss_report_json_line(report) << "\n";
        if ((it + 1) % 500 == 0)
            std::cout << "iter " << (it + 1) << "/" << config.iterations << " total=" << report.total
                      << " gaussians=" << trainer.cloud().size() << "\n";
        if (checkpoint_every > 0 && (it + 1) % checkpoint_every == 0 && it + 1 < config.iterations)
            save_checkpoint(out_dir + "/ckpt_" + std::to_string(it + 1) + ".ply", trainer.cloud(),
                            trainer.fog(), it + 1, trainer.cameras(), config_json);
    }
    save_checkpoint(out_dir + "/ckpt_final.ply", trainer.cloud(), trainer.fog(), config.iterations,
                    trainer.cameras(), config_json);
    const Vec3 a = trainer.fog().atmos();
    std::cout << "done: gaussians=" << trainer.cloud().size() << " beta=" << trainer.fog().beta_weights[0]
              << " A=(" << a.x << "," << a.y << "," << a.z << ")\n";
    return 0;
}

int run_render(const std::string& ckpt, int camera_index, const std::string& mode_name,
               const std::string& out_file) {
    const Checkpoint ck = load_checkpoint(ckpt);
    if (camera_index < 0 || camera_index >= int(ck.cameras.size()))
        throw DataError("camera index " + std::to_string(camera_index) + " out of range (checkpoint has " +
                        std::to_string(ck.cameras.size()) + " cameras)");
    const RenderMode mode = parse_render_mode(mode_name);
    const TrainConfig config = train_config_from_json(ck.train_config);
    FogParams fog = ck.fog;
    const FogParams* fog_ptr = config.fog_enabled ? &fog : nullptr;
    const RenderOutput out = render(ck.cloud, ck.cameras[camera_index], fog_ptr, mode, config.raster);
    switch (mode) {
        case RenderMode::Foggy:
        case RenderMode::Clear:
            write_image(out.color, out_file);
            break;
        case RenderMode::Transmission:
            write_pfm(out.transmission, out_file);
            break;
        case RenderMode::Depth:
            write_pfm(out.depth, out_file);
            break;
    }
    std::cout << "wrote " << out_file << "\n";
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& scene_dir, const std::string& gt_dir,
             const std::string& out_file, int crop) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const SceneBundle bundle = load_scene(scene_dir);
    std::vector<Image> gt;
    for (const Camera& cam : bundle.cameras) {
        const std::string path = gt_dir + "/" + cam.name + ".png";
        if (!fs::exists(path)) throw DataError("missing ground-truth image " + path);
        gt.push_back(read_image(path));
    }
    const TrainConfig config = train_config_from_json(ck.train_config);
    FogParams fog = ck.fog;
    const EvalResult result = evaluate(ck.cloud, config.fog_enabled ? &fog : nullptr, bundle.cameras, gt,
                                       config.raster, crop);
    std::ofstream out(out_file);
    if (!out) throw DataError("cannot open " + out_file + " for writing");
    out << "view\tpsnr\tssim\n";
    for (const EvalRow& row : result.rows)
        out << row.name << "\t" << row.psnr_db << "\t" << row.ssim_value << "\n";
    out << "mean\t" << result.mean_psnr << "\t" << result.mean_ssim << "\n";
    std::cout << "mean PSNR " << result.mean_psnr << " dB, mean SSIM " << result.mean_ssim << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fogsplat: differentiable Gaussian splatting for foggy scenes"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "synthesize a foggy dataset from clear images + depth");
    std::string synth_clear, synth_depth, synth_out, synth_atmos;
    uint64_t synth_seed = 0;
    double synth_beta = -1;
    synth->add_option("--clear", synth_clear, "directory of clear PNG images")->required();
    synth->add_option("--depth", synth_depth, "directory of depth PFMs (same stems)")->required();
    synth->add_option("--seed", synth_seed, "sampling seed")->required();
    synth->add_option("--beta", synth_beta, "override the sampled scattering coefficient");
    synth->add_option("--A", synth_atmos, "override the sampled atmospheric light as R,G,B");
    synth->add_option("--out", synth_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "optimize a scene from multi-view foggy images");
    std::string train_scene, train_out, train_preset = "synthetic";
    int train_iters = 0, train_ckpt_every = 0;
    uint64_t train_seed = 0;
    bool train_no_sigmoid = false, train_literal = false, train_dump_priors = false;
    std::vector<std::string> train_disable;
    train->add_option("--scene", train_scene, "scene directory")->required();
    train->add_option("--iters", train_iters, "iteration count (overrides the preset)")->required();
    train->add_option("--preset", train_preset, "synthetic or real")
        ->check(CLI::IsMember({"synthetic", "real"}));
    train->add_flag("--no-sigmoid", train_no_sigmoid, "use the plain exponential transmission");
    train->add_option("--disable-loss", train_disable, "disable a loss term (dcp|bcp|depth|dweighted)");
    train->add_option("--seed", train_seed, "training seed");
    train->add_option("--out", train_out, "output directory")->required();
    train->add_flag("--literal-eq10", train_literal, "evaluate the DCP quadratic on the prior map");
    train->add_flag("--dump-priors", train_dump_priors, "export DCP/BCP prior maps as PFM");
    train->add_option("--checkpoint-every", train_ckpt_every, "checkpoint interval in iterations");

    auto* rnd = app.add_subcommand("render", "render one view from a checkpoint");
    std::string rnd_ckpt, rnd_mode, rnd_out;
    int rnd_camera = 0;
    rnd->add_option("--ckpt", rnd_ckpt, "checkpoint .ply path")->required();
    rnd->add_option("--camera", rnd_camera, "camera index")->required();
    rnd->add_option("--mode", rnd_mode, "foggy|clear|transmission|depth")
        ->required()
        ->check(CLI::IsMember({"foggy", "clear", "transmission", "depth"}));
    rnd->add_option("--out", rnd_out, "output file (PNG for color modes, PFM otherwise)")->required();

    auto* ev = app.add_subcommand("eval", "score rendered clear views against ground truth");
    std::string ev_ckpt, ev_scene, ev_gt, ev_out;
    int ev_crop = 0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint .ply path")->required();
    ev->add_option("--scene", ev_scene, "scene directory (cameras)")->required();
    ev->add_option("--gt", ev_gt, "directory of ground-truth clear PNGs")->required();
    ev->add_option("--out", ev_out, "metrics TSV path")->required();
    ev->add_option("--crop", ev_crop, "crop this many border pixels before scoring");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed()) return run_synth(synth_clear, synth_depth, synth_seed, synth_beta, synth_atmos, synth_out);
        if (train->parsed())
            return run_train(train_scene, train_iters, train_preset, train_no_sigmoid, train_disable,
                             train_seed, train_out, train_literal, train_dump_priors, train_ckpt_every);
        if (rnd->parsed()) return run_render(rnd_ckpt, rnd_camera, rnd_mode, rnd_out);
        if (ev->parsed()) return run_eval(ev_ckpt, ev_scene, ev_gt, ev_out, ev_crop);
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidParameter& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
