// Closed-loop acceptance run: one PASS/FAIL line per criterion. Criteria
// listed as known limitations (see README, "Known limitations") still print
// FAIL when they fail; any other failure, or a known one that starts
// passing, makes the exit code 1.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Geometry>

#include "mvr/errors.hpp"
#include "mvr/pipeline.hpp"

using namespace mvr;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "mvr_acceptance" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

Mat3 rot_z(double deg) { return Eigen::AngleAxisd(deg_to_rad(deg), Vec3::UnitZ()).toRotationMatrix(); }

double rot_angle_deg(const Mat3& a, const Mat3& b) { return rad_to_deg(Eigen::AngleAxisd(a * b.transpose()).angle()); }

const std::vector<RelativeSpherical> kDeltas = nearby_deltas(10.0);

// 1 and 2 share the loop; only the pose jitter differs.
Outcome elevation_trials(double pose_sigma, double tol, double need, bool check_time) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> el(-60, 60), az(0, 360);
    const ProceduralShape shape = builtin_scene("sphere_box");
    const int trials = 50;
    int ok = 0;
    double worst_time = 0.0, worst_err = 0.0;
    for (int i = 0; i < trials; ++i) {
        const double e = el(rng), a = az(rng);
        const NoiseModel nm{0.0, pose_sigma, static_cast<std::uint64_t>(100 + i)};
        const auto views = predict_views(shape, SphericalPose(e, a, 1.2), kDeltas, nm, Intrinsics(256, 256, 50));
        const auto t0 = Clock::now();
        double err = 180.0;
        try {
            err = std::abs(estimate_elevation(views, kDeltas).elevation_deg - e);
        } catch (const Error&) {
        }
        worst_time = std::max(worst_time, since(t0));
        worst_err = std::max(worst_err, err);
        ok += err <= tol;
    }
    const bool time_ok = !check_time || worst_time < 1.0;
    return {ok >= need * trials && time_ok,
            fmt("%d/%d within %.0f deg (need %.0f%%), worst error %.2f deg, slowest estimate %.3f s", ok, trials, tol,
                need * 100, worst_err, worst_time)};
}

Outcome gradient_oracle() {
    const Lambdas lam{1.0, 0.1, 0.02};
    double worst = 0.0;
    int nonzero = 0, checked = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0, 1);
        const SdfGrid grid =
            SdfGrid::from_function(16, [&](const Vec3& p) { return p.norm() - 0.3 + 0.02 * (u(rng) - 0.5); });
        ColorVolume colors;
        colors.shape = grid.shape();
        colors.rgb.resize(colors.shape.count());
        for (auto& c : colors.rgb) c = {float(u(rng)), float(u(rng)), float(u(rng))};
        RayBatch batch;
        for (int i = 0; i < 64; ++i) {
            const Camera cam(SphericalPose(-60 + 120 * u(rng), 360 * u(rng), 1.2), Intrinsics(32, 32, 50));
            batch.rays.push_back(pixel_ray(cam.extrinsics, cam.intrinsics, Vec2(32 * u(rng), 32 * u(rng))));
            batch.targets.push_back({Rgb(u(rng), u(rng), u(rng)), u(rng) < 0.5 ? 0.0 : 0.6 + 0.4 * u(rng)});
            batch.color_index.push_back(0);
        }
        // Dense regularizer points so that most voxels carry gradient.
        std::vector<Vec3> pts;
        for (int i = 0; i < 2000; ++i) pts.emplace_back(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
        const double s = 10.0 + 40.0 * u(rng);
        auto loss_at = [&](const SdfGrid& g) {
            return loss_and_gradient(g, s, batch, {colors}, pts, lam, true, {}, Exec::Serial).loss.total;
        };
        const LossGradient an = loss_and_gradient(grid, s, batch, {colors}, pts, lam, true);
        for (int k = 0; k < 20; ++k) {
            const std::size_t idx = rng() % grid.shape().count();
            SdfGrid hi = grid, lo = grid;
            hi.values()[idx] += 1e-4;
            lo.values()[idx] -= 1e-4;
            const double fd = (loss_at(hi) - loss_at(lo)) / 2e-4;
            const double a = an.d_sdf[idx];
            const double scale = std::max({std::abs(fd), std::abs(a), 1e-6});
            worst = std::max(worst, std::abs(fd - a) / scale);
            nonzero += a != 0.0;
            ++checked;
        }
    }
    return {worst <= 1e-4, fmt("worst relative error %.2e over %d voxels (%d with nonzero gradient)", worst, checked,
                               nonzero)};
}

Outcome mc_sphere() {
    const auto t0 = Clock::now();
    const SdfGrid g = SdfGrid::from_function(64, [](const Vec3& p) { return p.norm() - 0.4; });
    const TriMesh m = marching_cubes(g);
    double worst = 0.0;
    for (const Vec3& v : m.vertices) worst = std::max(worst, std::abs(v.norm() - 0.4));
    const double diag = std::sqrt(3.0) * g.voxel();
    const int chi = euler_characteristic(m);
    const double t = since(t0);
    return {!m.empty() && worst <= diag && chi == 2 && t < 5.0,
            fmt("%zu vertices, worst distance %.4f (diagonal %.4f), Euler %d, %.2f s", m.vertices.size(), worst, diag,
                chi, t)};
}

Outcome render_oracle() {
    const auto t0 = Clock::now();
    const ProceduralShape sphere = builtin_scene("sphere");
    const SdfGrid g = SdfGrid::from_function(64, [](const Vec3& p) { return p.norm() - 0.4; });
    const RenderOptions ro;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> el(-80, 80), az(0, 360), px(0, 255);
    int tested = 0, ok = 0, drawn = 0;
    double worst_ratio = 0.0;
    while (tested < 500 && drawn < 100000) {
        ++drawn;
        const Camera cam(SphericalPose(el(rng), az(rng), 1.2), Intrinsics(256, 256, 50));
        const Ray ray = pixel_ray(cam.extrinsics, cam.intrinsics, Vec2(px(rng), px(rng)));
        const auto hit = raymarch(sphere, ray, 3.0);
        if (!hit) continue;
        // Grazing rays (|cos| < 0.2) are skipped: near the silhouette the
        // logistic density smears the depth of a single pixel-center ray.
        if (std::abs(hit->normal.dot(ray.direction)) < 0.2) continue;
        const auto seg = intersect_domain(ray);
        const double spacing = (seg->second - seg->first) / ro.uniform_samples;
        const RenderSample rs = render_ray(g, ray, 200.0, ro, [](const Vec3&, const Vec3&) { return Rgb::Ones(); });
        const double ratio = std::abs(rs.depth - hit->depth) / spacing;
        worst_ratio = std::max(worst_ratio, ratio);
        ok += ratio <= 2.0;
        ++tested;
    }
    const double t = since(t0);
    return {tested == 500 && ok == tested && t < 10.0,
            fmt("%d/%d pixels within 2 spacings, worst %.2f spacings, %.2f s", ok, tested, worst_ratio, t)};
}

RunConfig full_config(const std::string& scene) {
    RunConfig c;
    c.scene = scene;
    return c;
}

// Filled by criterion 6, reused by 7.
std::optional<double> g_sphere_box_f;

Outcome end_to_end() {
    bool pass = true;
    std::string detail;
    for (const char* scene : {"sphere_box", "torus", "snowman"}) {
        const RunResult r = run_reconstruct(full_config(scene), scratch(std::string("e2e_") + scene).string());
        const double f = r.evaluation ? r.evaluation->score.f : 0.0;
        const double t = r.timings.total_seconds;
        if (std::string(scene) == "sphere_box" && r.ok()) g_sphere_box_f = f;
        pass = pass && r.ok() && f >= 0.95 && t < 180.0;
        detail += fmt("%s F=%.4f %.0fs%s; ", scene, f, t, r.ok() ? "" : (" [" + r.error + "]").c_str());
    }
    return {pass, detail.substr(0, detail.size() - 2)};
}

Outcome elevation_ablation() {
    if (!g_sphere_box_f) {
        const RunResult r = run_reconstruct(full_config("sphere_box"), scratch("ablation_base").string());
        if (r.evaluation) g_sphere_box_f = r.evaluation->score.f;
    }
    RunConfig c = full_config("sphere_box");
    c.elevation_offset_deg = 30.0;
    const RunResult r = run_reconstruct(c, scratch("ablation_offset").string());
    const double base = g_sphere_box_f.value_or(0.0);
    const double off = r.evaluation ? r.evaluation->score.f : 0.0;
    return {r.ok() && base - off >= 0.10, fmt("F estimated %.4f, F at +30 deg %.4f, drop %.4f", base, off, base - off)};
}

Outcome eval_consistency() {
    const TriMesh gt = ground_truth_mesh(
        parse_scene("box -0.05 0 0  0.3 0.1 0.12  1 1 1\nsphere 0.2 0.18 0.05 0.14  1 1 1\n"), 64);
    const PointCloud x = sample_surface(gt, 10000, 1);
    const double f_self = f_score(x, x).f;

    const Vec3 t(0.03, -0.02, 0.01);
    TriMesh pred = gt;
    for (Vec3& v : pred.vertices) v = rot_z(-40) * (v - t) / 0.8;
    const RigidSim s = align_search(pred, gt);
    const double rot_err = rot_angle_deg(s.rigid.rotation * rot_z(s.rotation_z_deg), rot_z(40));
    PointCloud aligned;
    for (const Vec3& p : sample_surface(pred, 10000, 2)) aligned.push_back(s.apply(p));
    const double f_aligned = f_score(aligned, sample_surface(gt, 10000, 3)).f;

    std::mt19937_64 rng(17);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> u(-1, 1);
    const Mat3 r = Eigen::AngleAxisd(deg_to_rad(10.0 * u(rng)), Vec3(n(rng), n(rng), n(rng)).normalized())
                       .toRotationMatrix();
    const Vec3 tr(0.05 * u(rng), 0.05 * u(rng), 0.05 * u(rng));
    PointCloud moved;
    for (const Vec3& p : x) moved.push_back(r * p + tr);
    const IcpResult icp_res = icp(x, moved);
    const double icp_rot = rot_angle_deg(icp_res.transform.rotation, r);
    const double icp_tr = (icp_res.transform.translation - tr).norm();

    const bool pass = f_self == 1.0 && std::abs(s.scale - 0.8) <= 0.05 + 1e-9 && rot_err <= 10.0 &&
                      std::abs(f_aligned - 1.0) <= 1e-6 && icp_rot <= 0.1 && icp_tr <= 1e-4;
    return {pass, fmt("f(x,x)=%.6f; align scale %.2f rot err %.3f deg F %.6f; icp rot err %.2e deg trans err %.2e",
                      f_self, s.scale, rot_err, f_aligned, icp_rot, icp_tr)};
}

Outcome determinism() {
    const auto suite = parse_suite("sphere_box\ntorus 1 0.01\nsnowman\n");
    RunConfig c;
    c.grid_n = 32;
    c.iterations = 200;
    c.gt_resolution = 64;
    c.eval_points = 4000;
    c.seed = 3;
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    run_benchmark(suite, c, a.string());
    run_benchmark(suite, c, b.string());
    int compared = 0, differing = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        const std::string name = e.path().filename().string();
        if (name != "report.csv" && name != "mesh.ply" && name != "mesh.obj") continue;
        ++compared;
        differing += slurp(e.path()) != slurp(b / fs::relative(e.path(), a));
    }
    return {compared == 10 && differing == 0, fmt("%d files compared, %d differ", compared, differing)};
}

Outcome cost_volume_signal() {
    const ProceduralShape sphere = builtin_scene("sphere");
    const SphericalPose origin(0, 0, 1.2);
    std::vector<RelativeSpherical> deltas;
    for (const SphericalPose& p : select_source_views(8).nearby()) deltas.push_back(relative_spherical(origin, p));
    bool pass = true;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> az(0, 360);
        const NoiseModel nm{0.01, 0.0, seed};
        const auto views = predict_views(sphere, SphericalPose(0, az(rng), 1.2), deltas, nm, Intrinsics(128, 128, 50));
        const SourceViews sv = make_source_views(views);
        const CostVolume cv = build_cost_volume(sv.features, sv.cameras, 64);
        const double h = cv.shape.voxel();
        double near_sum = 0, free_sum = 0;
        int near_n = 0, free_n = 0;
        for (int k = 0; k < cv.shape.n; ++k)
            for (int j = 0; j < cv.shape.n; ++j)
                for (int i = 0; i < cv.shape.n; ++i) {
                    const std::size_t idx = cv.shape.index(i, j, k);
                    if (cv.visibility[idx] < 2) continue;
                    double v = 0;
                    for (float c : cv.variance[idx]) v += c;
                    v /= cv.variance[idx].size();
                    const double d = cv.shape.center(i, j, k).norm() - 0.4;
                    if (std::abs(d) < h) {
                        near_sum += v;
                        ++near_n;
                    } else if (d > 5 * h) {
                        free_sum += v;
                        ++free_n;
                    }
                }
        const double near_mean = near_sum / std::max(near_n, 1), free_mean = free_sum / std::max(free_n, 1);
        pass = pass && near_n > 0 && free_n > 0 && near_mean < free_mean;
        detail += fmt("seed %d near %.4f free %.4f; ", int(seed), near_mean, free_mean);
    }
    return {pass, detail.substr(0, detail.size() - 2)};
}

}  // namespace

int main() {
    struct Criterion {
        std::string name;
        std::function<Outcome()> run;
        bool known_limitation = false;
    };
    const std::vector<Criterion> criteria{
        {"elevation closed loop", [] { return elevation_trials(0.0, 1.0, 0.95, true); }},
        {"elevation under pose noise", [] { return elevation_trials(2.0, 10.0, 0.90, false); }, true},
        {"loss gradient oracle", gradient_oracle},
        {"marching cubes sphere", mc_sphere},
        {"rendered depth oracle", render_oracle},
        {"end-to-end reconstruction", end_to_end},
        {"elevation distortion ablation", elevation_ablation},
        {"evaluation self-consistency", eval_consistency},
        {"benchmark determinism", determinism},
        {"cost volume signal", cost_volume_signal, true},
    };
    int failed = 0, unexpected = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const Criterion& c = criteria[i];
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        unexpected += o.pass == c.known_limitation;
        std::printf("%s %2zu %-30s (%.1f s) %s%s\n", o.pass ? "PASS" : "FAIL", i + 1, c.name.c_str(), since(t0),
                    o.detail.c_str(),
                    c.known_limitation ? (o.pass ? "  [listed as a known limitation but passed]"
                                                 : "  [known limitation]")
                                       : "");
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed, %d unexpected outcome(s)\n", criteria.size() - failed, criteria.size(),
                unexpected);
    return unexpected == 0 ? 0 : 1;
}
