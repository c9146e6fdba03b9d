// mvrecon: command-line front end.
//
//   render-synthetic  render a procedural scene into a views directory
//   estimate-elev     estimate the input elevation from four nearby views
//   reconstruct       run the full pipeline on a scene or a views directory
//   evaluate          align a predicted mesh to ground truth and score it
//   benchmark         run a suite of synthetic scenes

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvr/elevation.hpp"
#include "mvr/errors.hpp"
#include "mvr/eval.hpp"
#include "mvr/image.hpp"
#include "mvr/pipeline.hpp"

using namespace mvr;

namespace {

// Shared options: a config file, then individual key=value overrides.
struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> sets;
    bool serial = false;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "config file (key = value lines)")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "override one config key, key=value (repeatable)");
        app->add_flag("--serial", serial, "use the serial reference kernels");
    }

    RunConfig load() const {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        return cfg;
    }

    Exec exec() const { return serial ? Exec::Serial : Exec::Parallel; }
};

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::ordered_json estimate_json(const ElevationEstimate& est) {
    nlohmann::ordered_json j;
    j["elevation_deg"] = est.elevation_deg;
    j["reprojection_error_px"] = est.reprojection_error_px;  // inf prints as null
    auto& cands = j["candidates"] = nlohmann::ordered_json::array();
    for (const auto& c : est.per_candidate) {
        cands.push_back({{"elevation_deg", c.elevation_deg},
                         {"error_px", c.error_px},
                         {"stage", c.fine_stage ? "fine" : "coarse"}});
    }
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-view reconstruction from spherical oracle views"};
    app.require_subcommand(1);

    // render-synthetic
    auto* render = app.add_subcommand("render-synthetic", "render a scene's nearby and source views");
    ConfigArgs render_cfg;
    render_cfg.attach(render);
    std::string render_out, render_scene;
    std::optional<double> render_elev, render_azim, render_pose_noise, render_color_noise;
    std::optional<std::uint64_t> render_noise_seed;
    render->add_option("--out", render_out, "output views directory")->required();
    render->add_option("--scene", render_scene, "builtin scene name or scene file");
    render->add_option("--elevation", render_elev, "true input elevation (deg)");
    render->add_option("--azimuth", render_azim, "true input azimuth (deg)");
    render->add_option("--pose-noise", render_pose_noise, "pose jitter sigma (deg)");
    render->add_option("--color-noise", render_color_noise, "color jitter sigma");
    render->add_option("--noise-seed", render_noise_seed, "noise seed");

    // estimate-elev
    auto* est = app.add_subcommand("estimate-elev", "estimate the input elevation");
    std::string est_input, est_deltas, est_matches, est_out;
    std::vector<std::string> est_nearby;
    double est_fov = 50.0;
    int est_size = 0;
    bool est_serial = false;
    est->add_option("--input", est_input, "input view (only its size is used)")->check(CLI::ExistingFile);
    est->add_option("--nearby", est_nearby, "the four nearby views")->expected(4)->check(CLI::ExistingFile);
    est->add_option("--deltas", est_deltas, "relative poses of the nearby views")->required()->check(CLI::ExistingFile);
    est->add_option("--matches", est_matches, "external correspondences instead of built-in matching")
        ->check(CLI::ExistingFile);
    est->add_option("--fov", est_fov, "vertical field of view (deg)");
    est->add_option("--size", est_size, "image size in px when no image is given");
    est->add_option("--out", est_out, "also write the result to this file");
    est->add_flag("--serial", est_serial, "use the serial reference kernels");

    // reconstruct
    auto* recon = app.add_subcommand("reconstruct", "run the full pipeline");
    ConfigArgs recon_cfg;
    recon_cfg.attach(recon);
    std::string recon_out, recon_scene, recon_views;
    std::optional<double> recon_override, recon_offset, recon_elev;
    std::optional<std::uint64_t> recon_seed;
    recon->add_option("--out", recon_out, "run directory")->required();
    recon->add_option("--scene", recon_scene, "builtin scene name or scene file");
    recon->add_option("--views-dir", recon_views, "directory written by render-synthetic");
    recon->add_option("--elevation", recon_elev, "true input elevation of a synthetic scene (deg)");
    recon->add_option("--elevation-override", recon_override, "skip estimation and use this elevation (deg)");
    recon->add_option("--elevation-offset", recon_offset, "add this to the estimated elevation (deg)");
    recon->add_option("--seed", recon_seed, "optimizer and evaluation seed");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "align a predicted mesh to ground truth and score it");
    std::string eval_pred, eval_gt, eval_report;
    double eval_tau = 0.05;
    std::uint64_t eval_seed = 0;
    bool eval_serial = false;
    eval->add_option("--pred", eval_pred, "predicted mesh (.obj/.ply)")->required()->check(CLI::ExistingFile);
    eval->add_option("--gt", eval_gt, "ground-truth mesh (.obj/.ply)")->required()->check(CLI::ExistingFile);
    eval->add_option("--tau", eval_tau, "F-score threshold");
    eval->add_option("--report", eval_report, "write the report here");
    eval->add_option("--seed", eval_seed, "surface sampling seed");
    eval->add_flag("--serial", eval_serial, "use the serial reference kernels");

    // benchmark
    auto* bench = app.add_subcommand("benchmark", "run a suite of synthetic scenes");
    ConfigArgs bench_cfg;
    bench_cfg.attach(bench);
    std::string bench_suite, bench_out;
    std::uint64_t bench_seed = 0;
    bench->add_option("--suite", bench_suite, "suite file: scene [pose_sigma [color_sigma [elevation]]]")
        ->required()
        ->check(CLI::ExistingFile);
    bench->add_option("--seed", bench_seed, "run seed")->required();
    bench->add_option("--out", bench_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*render) {
            RunConfig cfg = render_cfg.load();
            if (!render_scene.empty()) cfg.scene = render_scene;
            if (render_elev) cfg.input_elevation_deg = *render_elev;
            if (render_azim) cfg.input_azimuth_deg = *render_azim;
            if (render_pose_noise) cfg.noise_pose_sigma_deg = *render_pose_noise;
            if (render_color_noise) cfg.noise_color_sigma = *render_color_noise;
            if (render_noise_seed) cfg.noise_seed = *render_noise_seed;
            render_synthetic(cfg, render_out, render_cfg.exec());
            std::printf("wrote views of '%s' (elevation %.2f) to %s\n", cfg.scene.c_str(), cfg.input_elevation_deg,
                        render_out.c_str());
            return 0;
        }

        if (*est) {
            const Exec exec = est_serial ? Exec::Serial : Exec::Parallel;
            const auto deltas = read_delta_file(est_deltas);
            ElevationEstimate result;
            if (!est_matches.empty()) {
                int w = est_size, h = est_size;
                const std::string sized = !est_input.empty() ? est_input : (est_nearby.empty() ? "" : est_nearby[0]);
                if (!sized.empty()) {
                    const ImageRGBA img = read_png(sized);
                    w = img.width;
                    h = img.height;
                }
                if (w <= 0) throw ConfigError("--matches needs an image or --size to fix the intrinsics");
                result = estimate_elevation_from_matches(Intrinsics(w, h, est_fov), read_matches_file(est_matches),
                                                         deltas, ElevationOptions{}, exec);
            } else {
                if (est_nearby.size() != 4) throw ConfigError("--nearby needs exactly four images");
                std::vector<View> nearby;
                for (const auto& p : est_nearby) {
                    ImageRGBA img = read_png(p);
                    const Intrinsics intr(img.width, img.height, est_fov);
                    nearby.emplace_back(std::move(img), ImageF(), SphericalPose(0, 0, 1.2), intr);
                }
                result = estimate_elevation(nearby, deltas, ElevationOptions{}, exec);
            }
            const std::string text = estimate_json(result).dump(2);
            std::cout << text << '\n';
            if (!est_out.empty()) std::ofstream(est_out) << text << '\n';
            return 0;
        }

        if (*recon) {
            RunConfig cfg = recon_cfg.load();
            if (!recon_scene.empty()) cfg.scene = recon_scene;
            if (!recon_views.empty()) cfg.views_dir = recon_views;
            if (recon_elev) cfg.input_elevation_deg = *recon_elev;
            if (recon_override) cfg.elevation_override_deg = *recon_override;
            if (recon_offset) cfg.elevation_offset_deg = *recon_offset;
            if (recon_seed) cfg.seed = *recon_seed;
            const RunResult r = run_reconstruct(cfg, recon_out, recon_cfg.exec());
            if (r.elevation) {
                std::printf("elevation: estimated %.1f, used %.1f\n", r.elevation->elevation_deg,
                            r.elevation_used_deg);
            } else {
                std::printf("elevation: used %.1f\n", r.elevation_used_deg);
            }
            if (r.evaluation) {
                const auto& s = r.evaluation->score;
                std::printf("F@%.3g = %.4f (precision %.4f, recall %.4f)\n", cfg.eval_tau, s.f, s.precision,
                            s.recall);
            }
            std::printf("total %.1f s, outputs in %s\n", r.timings.total_seconds, recon_out.c_str());
            if (!r.ok()) {
                std::fprintf(stderr, "error: %s\n", r.error.c_str());
                return 1;
            }
            return 0;
        }

        if (*eval) {
            const TriMesh pred = read_mesh(eval_pred);
            const TriMesh gt = read_mesh(eval_gt);
            AlignOptions ao;
            ao.inlier_tau = eval_tau;
            ao.seed = eval_seed;
            const EvalReport rep = evaluate_meshes(pred, gt, eval_tau, ao, eval_serial ? Exec::Serial : Exec::Parallel);
            char buf[512];
            std::snprintf(buf, sizeof(buf),
                          "scale %.4f\nrotation_z_deg %.2f\ninliers %d\nprecision %.6f\nrecall %.6f\nfscore %.6f\n"
                          "tau %.4f\n",
                          rep.alignment.scale, rep.alignment.rotation_z_deg, rep.alignment.inliers,
                          rep.score.precision, rep.score.recall, rep.score.f, eval_tau);
            std::cout << buf;
            if (!eval_report.empty()) {
                std::ofstream out(eval_report);
                if (!out) throw IoError("cannot write " + eval_report);
                out << buf;
            }
            return 0;
        }

        if (*bench) {
            RunConfig cfg = bench_cfg.load();
            cfg.seed = bench_seed;
            const auto suite = parse_suite(read_text(bench_suite));
            std::cout << run_benchmark(suite, cfg, bench_out, bench_cfg.exec());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
