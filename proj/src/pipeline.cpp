#include "mvr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "mvr/errors.hpp"

namespace fs = std::filesystem;

namespace mvr {

// ---- view plan ------------------------------------------------------------

std::vector<SphericalPose> ViewPlan::primary() const {
    std::vector<SphericalPose> out;
    for (const auto& p : poses) {
        if (p.stage == PoseStage::Primary) out.push_back(p.pose);
    }
    return out;
}

std::vector<SphericalPose> ViewPlan::nearby() const {
    std::vector<SphericalPose> out;
    for (const auto& p : poses) {
        if (p.stage == PoseStage::Nearby) out.push_back(p.pose);
    }
    return out;
}

std::vector<RelativeSpherical> nearby_deltas(double sep_deg) {
    return {{sep_deg, 0.0, 0.0}, {-sep_deg, 0.0, 0.0}, {0.0, sep_deg, 0.0}, {0.0, -sep_deg, 0.0}};
}

ViewPlan select_source_views(int n, double nearby_sep_deg, double radius) {
    if (n < 2) throw ConfigError("select_source_views: n must be at least 2");
    if (n > 500) throw ConfigError("select_source_views: n > 500 leaves indistinct poses after elevation clipping");
    const double golden_deg = 180.0 * (3.0 - std::sqrt(5.0));
    ViewPlan plan;
    plan.n = n;
    plan.nearby_sep_deg = nearby_sep_deg;
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / n;
        const double elev = std::clamp(rad_to_deg(std::asin(z)), -80.0, 80.0);
        const SphericalPose p(elev, normalize_azimuth(i * golden_deg), radius);
        plan.poses.push_back({p, PoseStage::Primary, i});
        for (const auto& d : nearby_deltas(nearby_sep_deg)) {
            plan.poses.push_back({apply_relative(p, d), PoseStage::Nearby, i});
        }
    }
    return plan;
}

// ---- config ---------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    auto positive_int = [&](int& field) {
        const long long i = parse_int(key, v);
        if (i <= 0) throw ConfigError("config key '" + key + "' must be positive");
        field = static_cast<int>(i);
    };
    if (key == "scene") scene = v;
    else if (key == "views_dir") views_dir = v;
    else if (key == "input_elevation_deg") input_elevation_deg = parse_double(key, v);
    else if (key == "input_azimuth_deg") input_azimuth_deg = parse_double(key, v);
    else if (key == "image_size") positive_int(image_size);
    else if (key == "fov_deg") fov_deg = parse_double(key, v);
    else if (key == "n_primary") positive_int(n_primary);
    else if (key == "nearby_sep_deg") nearby_sep_deg = parse_double(key, v);
    else if (key == "elevation_override_deg") {
        if (v == "none" || v.empty()) elevation_override_deg.reset();
        else elevation_override_deg = parse_double(key, v);
    }
    else if (key == "elevation_offset_deg") elevation_offset_deg = parse_double(key, v);
    else if (key == "noise_pose_sigma_deg") noise_pose_sigma_deg = parse_double(key, v);
    else if (key == "noise_color_sigma") noise_color_sigma = parse_double(key, v);
    else if (key == "noise_seed") noise_seed = static_cast<std::uint64_t>(parse_int(key, v));
    else if (key == "grid_n") positive_int(grid_n);
    else if (key == "iterations") {
        const long long i = parse_int(key, v);
        if (i < 0) throw ConfigError("config key 'iterations' must be non-negative");
        iterations = static_cast<int>(i);
    }
    else if (key == "rays_per_batch") positive_int(rays_per_batch);
    else if (key == "regularizer_points") positive_int(regularizer_points);
    else if (key == "learning_rate") learning_rate = parse_double(key, v);
    else if (key == "learning_rate_log_s") learning_rate_log_s = parse_double(key, v);
    else if (key == "momentum") momentum = parse_double(key, v);
    else if (key == "s_init") s_init = parse_double(key, v);
    else if (key == "lambda_depth") lambda_depth = parse_double(key, v);
    else if (key == "lambda_eikonal") lambda_eikonal = parse_double(key, v);
    else if (key == "lambda_sparsity") lambda_sparsity = parse_double(key, v);
    else if (key == "warmup_fraction") warmup_fraction = parse_double(key, v);
    else if (key == "color_band") color_band = parse_double(key, v);
    else if (key == "blend_sigma_f") blend_sigma_f = parse_double(key, v);
    else if (key == "blend_gamma") blend_gamma = parse_double(key, v);
    else if (key == "oracle_depth") oracle_depth = parse_bool(key, v);
    else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, v));
    else if (key == "gt_resolution") positive_int(gt_resolution);
    else if (key == "eval_tau") eval_tau = parse_double(key, v);
    else if (key == "eval_points") positive_int(eval_points);
    else throw ConfigError("unknown config key '" + key + "'");
}

std::map<std::string, std::string> RunConfig::resolved() const {
    std::map<std::string, std::string> m;
    m["scene"] = scene;
    m["views_dir"] = views_dir;
    m["input_elevation_deg"] = fmt(input_elevation_deg);
    m["input_azimuth_deg"] = fmt(input_azimuth_deg);
    m["image_size"] = std::to_string(image_size);
    m["fov_deg"] = fmt(fov_deg);
    m["n_primary"] = std::to_string(n_primary);
    m["nearby_sep_deg"] = fmt(nearby_sep_deg);
    m["elevation_override_deg"] = elevation_override_deg ? fmt(*elevation_override_deg) : "none";
    m["elevation_offset_deg"] = fmt(elevation_offset_deg);
    m["noise_pose_sigma_deg"] = fmt(noise_pose_sigma_deg);
    m["noise_color_sigma"] = fmt(noise_color_sigma);
    m["noise_seed"] = std::to_string(noise_seed);
    m["grid_n"] = std::to_string(grid_n);
    m["iterations"] = std::to_string(iterations);
    m["rays_per_batch"] = std::to_string(rays_per_batch);
    m["regularizer_points"] = std::to_string(regularizer_points);
    m["learning_rate"] = fmt(learning_rate);
    m["learning_rate_log_s"] = fmt(learning_rate_log_s);
    m["momentum"] = fmt(momentum);
    m["s_init"] = fmt(s_init);
    m["lambda_depth"] = fmt(lambda_depth);
    m["lambda_eikonal"] = fmt(lambda_eikonal);
    m["lambda_sparsity"] = fmt(lambda_sparsity);
    m["warmup_fraction"] = fmt(warmup_fraction);
    m["color_band"] = fmt(color_band);
    m["blend_sigma_f"] = fmt(blend_sigma_f);
    m["blend_gamma"] = fmt(blend_gamma);
    m["oracle_depth"] = oracle_depth ? "true" : "false";
    m["seed"] = std::to_string(seed);
    m["gt_resolution"] = std::to_string(gt_resolution);
    m["eval_tau"] = fmt(eval_tau);
    m["eval_points"] = std::to_string(eval_points);
    return m;
}

OptimizeConfig RunConfig::optimize_config() const {
    OptimizeConfig o;
    o.iterations = iterations;
    o.rays_per_batch = rays_per_batch;
    o.regularizer_points = regularizer_points;
    o.learning_rate = learning_rate;
    o.learning_rate_log_s = learning_rate_log_s;
    o.momentum = momentum;
    o.s_init = s_init;
    o.lambdas = {lambda_depth, lambda_eikonal, lambda_sparsity};
    o.warmup_fraction = warmup_fraction;
    o.use_depth = oracle_depth;
    o.seed = seed;
    return o;
}

BlendOptions RunConfig::blend_options() const { return {blend_sigma_f, blend_gamma}; }

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

void write_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& [k, v] : cfg.resolved()) out << k << " = " << v << '\n';
}

double StageTimings::sum() const {
    double s = 0.0;
    for (const auto& st : stages) s += st.second;
    return s;
}

// ---- reconstruction -------------------------------------------------------

TriMesh ground_truth_mesh(const ProceduralShape& shape, int resolution) {
    const SdfGrid g = SdfGrid::from_function(resolution, [&](const Vec3& p) { return sdf_eval(shape, p); });
    return marching_cubes(g);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Adds d to p, clamping the elevation into [-90, 90].
SphericalPose offset_clamped(const SphericalPose& p, const RelativeSpherical& d) {
    return SphericalPose(std::clamp(p.elevation_deg() + d.d_elevation_deg, -90.0, 90.0),
                         p.azimuth_deg() + d.d_azimuth_deg, p.radius() + d.d_radius);
}

// Renders a scene at truth + each delta (elevation clamped), with noise.
std::vector<View> render_at_deltas(const ProceduralShape& shape, const SphericalPose& truth,
                                   const std::vector<RelativeSpherical>& deltas, const NoiseModel& noise,
                                   const Intrinsics& intr, Exec exec) {
    std::vector<RelativeSpherical> clamped;
    for (const auto& d : deltas) {
        const SphericalPose p = offset_clamped(truth, d);
        clamped.push_back({p.elevation_deg() - truth.elevation_deg(), d.d_azimuth_deg, d.d_radius});
    }
    return predict_views(shape, truth, clamped, noise, intr, exec);
}

std::string view_name(const std::string& prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%02d.png", prefix.c_str(), i);
    return buf;
}

void write_elevation(const std::string& path, const RunResult& r) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(10);
    if (r.elevation) {
        out << "estimated_deg " << r.elevation->elevation_deg << '\n';
        out << "reprojection_error_px " << r.elevation->reprojection_error_px << '\n';
    }
    out << "used_deg " << r.elevation_used_deg << '\n';
    if (r.true_elevation_deg) out << "true_deg " << *r.true_elevation_deg << '\n';
    if (r.elevation) {
        out << "# candidate_deg error_px stage\n";
        for (const auto& c : r.elevation->per_candidate) {
            out << c.elevation_deg << ' ' << c.error_px << ' ' << (c.fine_stage ? "fine" : "coarse") << '\n';
        }
    }
}

void write_timings(const std::string& path, const StageTimings& t) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    char buf[128];
    for (const auto& [name, s] : t.stages) {
        std::snprintf(buf, sizeof(buf), "%-16s %.3f\n", name.c_str(), s);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-16s %.3f\n", "total", t.total_seconds);
    out << buf;
}

std::string csv_safe(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return s;
}

std::string f6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string report_row(const std::string& scene, double pose_sigma, double color_sigma, const RunResult& r) {
    std::ostringstream row;
    row << csv_safe(scene) << ',' << f6(pose_sigma) << ',' << f6(color_sigma) << ',';
    row << (r.true_elevation_deg ? f6(*r.true_elevation_deg) : "") << ',';
    row << (r.elevation ? f6(r.elevation->elevation_deg) : "") << ',';
    row << (r.elevation && r.true_elevation_deg ? f6(std::abs(r.elevation->elevation_deg - *r.true_elevation_deg))
                                                : "")
        << ',';
    row << f6(r.elevation_used_deg) << ',';
    if (r.evaluation) {
        row << f6(r.evaluation->score.precision) << ',' << f6(r.evaluation->score.recall) << ','
            << f6(r.evaluation->score.f) << ',' << f6(r.evaluation->alignment.scale) << ','
            << f6(r.evaluation->alignment.rotation_z_deg) << ',';
    } else {
        row << f6(0.0) << ',' << f6(0.0) << ',' << f6(0.0) << ",,,";
    }
    row << (r.ok() ? "ok" : "error: " + csv_safe(r.error));
    return row.str();
}

}  // namespace

std::string report_header() {
    return "scene,pose_sigma_deg,color_sigma,true_elevation_deg,est_elevation_deg,elevation_error_deg,"
           "used_elevation_deg,precision,recall,fscore,align_scale,align_rotation_z_deg,status";
}

RunResult run_reconstruct(const RunConfig& cfg, const std::string& out_dir, Exec exec) {
    const auto t_start = Clock::now();
    RunResult res;
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    write_config((dir / "config.resolved").string(), cfg);

    const Intrinsics intr = cfg.intrinsics();
    const bool synthetic = cfg.views_dir.empty();
    std::optional<ProceduralShape> shape;
    std::optional<SphericalPose> truth;

    auto stage = [&](const std::string& name, const std::function<void()>& fn) {
        const auto t0 = Clock::now();
        try {
            fn();
        } catch (const std::exception& e) {
            res.timings.stages.emplace_back(name, seconds_since(t0));
            throw Error(name + ": " + e.what());
        }
        res.timings.stages.emplace_back(name, seconds_since(t0));
    };

    std::vector<View> nearby;
    std::vector<RelativeSpherical> deltas;
    std::vector<View> sources;
    SdfGrid fitted;
    SourceViews source_feats;

    try {
        stage("nearby_views", [&] {
            if (synthetic) {
                shape = load_scene(cfg.scene);
                truth = SphericalPose(cfg.input_elevation_deg, cfg.input_azimuth_deg, 1.2);
                res.true_elevation_deg = cfg.input_elevation_deg;
                deltas = nearby_deltas(cfg.nearby_sep_deg);
                NoiseModel nm{cfg.noise_color_sigma, cfg.noise_pose_sigma_deg, cfg.noise_seed * 2 + 1};
                nearby = render_at_deltas(*shape, *truth, deltas, nm, intr, exec);
            } else {
                const fs::path vd(cfg.views_dir);
                if (fs::exists(vd / "config.resolved"))
                    res.true_elevation_deg = load_config((vd / "config.resolved").string()).input_elevation_deg;
                deltas = read_delta_file((vd / "nearby_deltas.txt").string());
                for (std::size_t i = 0; i < deltas.size(); ++i) {
                    ImageRGBA img = read_png((vd / view_name("nearby", static_cast<int>(i))).string());
                    nearby.emplace_back(std::move(img), ImageF(), SphericalPose(0, 0, 1.2),
                                        Intrinsics(img.width, img.height, cfg.fov_deg));
                }
            }
        });

        stage("elevation", [&] {
            if (cfg.elevation_override_deg) {
                res.elevation_used_deg = *cfg.elevation_override_deg;
            } else {
                res.elevation = estimate_elevation(nearby, deltas, ElevationOptions{}, exec);
                res.elevation_used_deg = std::clamp(res.elevation->elevation_deg + cfg.elevation_offset_deg, -90.0, 90.0);
            }
            write_elevation((dir / "elevation.txt").string(), res);
        });

        stage("source_views", [&] {
            const SphericalPose anchor(res.elevation_used_deg, 0.0, 1.2);
            std::vector<RelativeSpherical> src_deltas;
            if (synthetic) {
                const ViewPlan plan = select_source_views(cfg.n_primary, cfg.nearby_sep_deg);
                for (const SphericalPose& p : plan.nearby()) src_deltas.push_back(relative_spherical(anchor, p));
                NoiseModel nm{cfg.noise_color_sigma, cfg.noise_pose_sigma_deg, cfg.noise_seed * 2 + 2};
                sources = render_at_deltas(*shape, *truth, src_deltas, nm, intr, exec);
            } else {
                const fs::path vd(cfg.views_dir);
                src_deltas = read_delta_file((vd / "source_deltas.txt").string());
                for (std::size_t i = 0; i < src_deltas.size(); ++i) {
                    ImageRGBA img = read_png((vd / view_name("source", static_cast<int>(i))).string());
                    const Intrinsics vi(img.width, img.height, cfg.fov_deg);
                    sources.emplace_back(std::move(img), ImageF(), anchor, vi);
                }
            }
            for (std::size_t i = 0; i < sources.size(); ++i) {
                sources[i].pose = offset_clamped(anchor, src_deltas[i]);
                if (!cfg.oracle_depth) sources[i].depth = ImageF();
            }
        });

        CostVolume cost;
        stage("features", [&] { source_feats = make_source_views(sources, exec); });
        stage("cost_volume", [&] {
            cost = build_cost_volume(source_feats.features, source_feats.cameras, cfg.grid_n, exec);
        });
        SdfGrid init;
        stage("init_sdf", [&] { init = init_sdf(cost, sources); });
        TrainingSet ts;
        stage("color_volumes", [&] {
            ts = make_training_set(sources, init, cfg.color_band, cfg.blend_options(), exec);
        });
        stage("optimize", [&] { fitted = optimize(init, ts, cfg.optimize_config(), exec).grid; });
        stage("marching_cubes", [&] {
            res.mesh = marching_cubes(fitted);
            if (res.mesh.empty()) throw EmptyMeshError("fitted field has no zero crossing");
        });
        stage("vertex_colors", [&] { res.mesh = vertex_colors(std::move(res.mesh), source_feats, fitted,
                                                               cfg.blend_options(), exec); });
        stage("write_mesh", [&] {
            write_ply((dir / "mesh.ply").string(), res.mesh);
            write_obj((dir / "mesh.obj").string(), res.mesh);
        });
        // views_dir runs are scored against the gt_mesh.obj render-synthetic leaves there.
        const fs::path gt_file = fs::path(cfg.views_dir) / "gt_mesh.obj";
        if (shape || fs::exists(gt_file)) {
            stage("evaluate", [&] {
                const TriMesh gt = shape ? ground_truth_mesh(*shape, cfg.gt_resolution) : read_mesh(gt_file.string());
                AlignOptions ao;
                ao.inlier_tau = cfg.eval_tau;
                ao.cloud_points = cfg.eval_points;
                ao.seed = cfg.seed;
                res.evaluation = evaluate_meshes(res.mesh, gt, cfg.eval_tau, ao, exec);
            });
        }
    } catch (const std::exception& e) {
        res.error = e.what();
    }

    if (!fs::exists(dir / "elevation.txt")) write_elevation((dir / "elevation.txt").string(), res);
    {
        std::ofstream csv(dir / "report.csv");
        csv << report_header() << '\n'
            << report_row(synthetic ? cfg.scene : cfg.views_dir, cfg.noise_pose_sigma_deg, cfg.noise_color_sigma, res)
            << '\n';
    }
    res.timings.total_seconds = seconds_since(t_start);
    write_timings((dir / "timings.txt").string(), res.timings);
    return res;
}

void render_synthetic(const RunConfig& cfg, const std::string& out_dir, Exec exec) {
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    const ProceduralShape shape = load_scene(cfg.scene);
    const SphericalPose truth(cfg.input_elevation_deg, cfg.input_azimuth_deg, 1.2);
    const Intrinsics intr = cfg.intrinsics();

    const View input = render_view(shape, truth, intr, exec);
    write_png((dir / "input.png").string(), input.rgba);
    write_pfm((dir / "input_depth.pfm").string(), input.depth);

    const auto nd = nearby_deltas(cfg.nearby_sep_deg);
    const NoiseModel n1{cfg.noise_color_sigma, cfg.noise_pose_sigma_deg, cfg.noise_seed * 2 + 1};
    const auto nearby = render_at_deltas(shape, truth, nd, n1, intr, exec);
    write_delta_file((dir / "nearby_deltas.txt").string(), nd);
    for (std::size_t i = 0; i < nearby.size(); ++i) {
        write_png((dir / view_name("nearby", static_cast<int>(i))).string(), nearby[i].rgba);
    }

    // Source deltas anchor the plan at the true elevation.
    const SphericalPose anchor(cfg.input_elevation_deg, 0.0, 1.2);
    std::vector<RelativeSpherical> sd;
    const ViewPlan plan = select_source_views(cfg.n_primary, cfg.nearby_sep_deg);
    for (const SphericalPose& p : plan.nearby()) sd.push_back(relative_spherical(anchor, p));
    const NoiseModel n2{cfg.noise_color_sigma, cfg.noise_pose_sigma_deg, cfg.noise_seed * 2 + 2};
    const auto sources = render_at_deltas(shape, truth, sd, n2, intr, exec);
    write_delta_file((dir / "source_deltas.txt").string(), sd);
    std::vector<SphericalPose> poses;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        write_png((dir / view_name("source", static_cast<int>(i))).string(), sources[i].rgba);
        write_pfm((dir / (view_name("source", static_cast<int>(i)) + ".pfm")).string(), sources[i].depth);
        poses.push_back(sources[i].pose);
    }
    write_pose_file((dir / "source_poses.txt").string(), poses);
    write_obj((dir / "gt_mesh.obj").string(), ground_truth_mesh(shape, cfg.gt_resolution));
    write_config((dir / "config.resolved").string(), cfg);
}

std::vector<SuiteEntry> parse_suite(const std::string& text) {
    std::vector<SuiteEntry> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ss(line);
        SuiteEntry e;
        if (!(ss >> e.scene)) continue;
        std::vector<double> nums;
        std::string tok;
        while (ss >> tok) nums.push_back(parse_double("suite line " + std::to_string(lineno), tok));
        if (nums.size() > 3) throw ConfigError("suite line " + std::to_string(lineno) + ": too many fields");
        if (nums.size() > 0) e.pose_sigma_deg = nums[0];
        if (nums.size() > 1) e.color_sigma = nums[1];
        if (nums.size() > 2) e.elevation_deg = nums[2];
        out.push_back(e);
    }
    return out;
}

std::string run_benchmark(const std::vector<SuiteEntry>& suite, const RunConfig& base, const std::string& out_dir,
                          Exec exec) {
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    std::ostringstream csv, table, timings;
    csv << report_header() << '\n';
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-14s %6s %6s %8s %8s %8s %8s  %s\n", "scene", "pose", "color", "true_el",
                  "est_el", "err", "F@tau", "status");
    table << buf;
    for (std::size_t i = 0; i < suite.size(); ++i) {
        const SuiteEntry& e = suite[i];
        RunConfig cfg = base;
        cfg.scene = e.scene;
        cfg.views_dir.clear();
        cfg.noise_pose_sigma_deg = e.pose_sigma_deg;
        cfg.noise_color_sigma = e.color_sigma;
        cfg.noise_seed = base.seed * 1000 + i;
        if (e.elevation_deg) cfg.input_elevation_deg = *e.elevation_deg;
        std::snprintf(buf, sizeof(buf), "%02zu_", i);
        std::string name = buf;
        for (char c : e.scene) name += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
        RunResult r;
        try {
            r = run_reconstruct(cfg, (dir / name).string(), exec);
        } catch (const std::exception& ex) {
            r.error = ex.what();
        }
        csv << report_row(e.scene, e.pose_sigma_deg, e.color_sigma, r) << '\n';
        const double f = r.evaluation ? r.evaluation->score.f : 0.0;
        std::snprintf(buf, sizeof(buf), "%-14s %6.2f %6.3f %8.2f %8s %8s %8.4f  %s\n", e.scene.c_str(),
                      e.pose_sigma_deg, e.color_sigma, cfg.input_elevation_deg,
                      r.elevation ? f6(r.elevation->elevation_deg).substr(0, 8).c_str() : "-",
                      r.elevation ? f6(std::abs(r.elevation->elevation_deg - cfg.input_elevation_deg)).substr(0, 8).c_str()
                                  : "-",
                      f, r.ok() ? "ok" : ("error: " + r.error).c_str());
        table << buf;
        timings << "# " << name << '\n';
        for (const auto& [stage, s] : r.timings.stages) {
            std::snprintf(buf, sizeof(buf), "%-16s %.3f\n", stage.c_str(), s);
            timings << buf;
        }
        std::snprintf(buf, sizeof(buf), "%-16s %.3f\n", "total", r.timings.total_seconds);
        timings << buf;
    }
    std::ofstream((dir / "report.csv").string()) << csv.str();
    std::ofstream((dir / "report.txt").string()) << table.str();
    std::ofstream((dir / "timings.txt").string()) << timings.str();
    return table.str();
}

}  // namespace mvr
