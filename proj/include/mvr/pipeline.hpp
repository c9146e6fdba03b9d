#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvr/camera.hpp"
#include "mvr/elevation.hpp"
#include "mvr/eval.hpp"
#include "mvr/exec.hpp"
#include "mvr/mesh.hpp"
#include "mvr/recon.hpp"
#include "mvr/synth.hpp"

namespace mvr {

enum class PoseStage { Primary, Nearby };

struct PlannedPose {
    SphericalPose pose;
    PoseStage stage;
    int parent;  // index into the primary poses; a primary is its own parent
};

/// Two-stage source view selection: n primary poses, each followed by its
/// nearby poses.
struct ViewPlan {
    int n = 8;
    int nearby_count = 4;
    double nearby_sep_deg = 10.0;
    std::vector<PlannedPose> poses;

    std::vector<SphericalPose> primary() const;
    std::vector<SphericalPose> nearby() const;
};

/// Fibonacci lattice (z_i = 1 - (2i+1)/n, golden-angle azimuths) at radius
/// 1.2 with elevations clipped to [-80, 80], plus (+-sep, 0), (0, +-sep)
/// nearby poses around each. Throws ConfigError for n < 2 or n > 500.
ViewPlan select_source_views(int n = 8, double nearby_sep_deg = 10.0, double radius = 1.2);

/// The four nearby-view offsets used for elevation estimation.
std::vector<RelativeSpherical> nearby_deltas(double sep_deg = 10.0);

/// Every knob of a run. Text form: `key = value` lines, `#` comments.
struct RunConfig {
    // input
    std::string scene = "sphere_box";
    std::string views_dir;  // load views from here instead of rendering a scene
    double input_elevation_deg = 20.0;
    double input_azimuth_deg = 0.0;
    int image_size = 256;
    double fov_deg = 50.0;
    // view plan
    int n_primary = 8;
    double nearby_sep_deg = 10.0;
    // elevation
    std::optional<double> elevation_override_deg;
    double elevation_offset_deg = 0.0;
    // noise
    double noise_pose_sigma_deg = 0.0;
    double noise_color_sigma = 0.0;
    std::uint64_t noise_seed = 0;
    // reconstruction
    int grid_n = 64;
    int iterations = 2000;
    int rays_per_batch = 1024;
    int regularizer_points = 1024;
    double learning_rate = 0.03;
    double learning_rate_log_s = 1e-2;
    double momentum = 0.9;
    double s_init = 30.0;
    double lambda_depth = 1.0;
    double lambda_eikonal = 0.1;
    double lambda_sparsity = 0.02;
    double warmup_fraction = 0.2;
    double color_band = 0.1;
    double blend_sigma_f = 0.02;
    double blend_gamma = 4.0;
    bool oracle_depth = false;
    std::uint64_t seed = 0;
    // evaluation
    int gt_resolution = 128;
    double eval_tau = 0.05;
    int eval_points = 10000;

    /// Sets one key from its text value. Throws ConfigError for unknown keys
    /// or unparsable values.
    void set(const std::string& key, const std::string& value);
    /// Every key with its current value, sorted by key.
    std::map<std::string, std::string> resolved() const;

    OptimizeConfig optimize_config() const;
    BlendOptions blend_options() const;
    Intrinsics intrinsics() const { return Intrinsics(image_size, image_size, fov_deg); }
};

RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});
void write_config(const std::string& path, const RunConfig& cfg);

/// Wall time of each stage, in order.
struct StageTimings {
    std::vector<std::pair<std::string, double>> stages;
    double total_seconds = 0.0;

    double sum() const;
};

struct RunResult {
    std::optional<ElevationEstimate> elevation;
    double elevation_used_deg = 0.0;
    std::optional<double> true_elevation_deg;
    TriMesh mesh;
    std::optional<EvalReport> evaluation;
    StageTimings timings;
    std::string error;  // stage-labelled message when a stage failed
    bool ok() const { return error.empty(); }
};

/// Nearby views -> elevation -> view plan -> source views -> features ->
/// cost volume -> visual hull -> fit -> marching cubes -> vertex colors.
/// Writes mesh.ply, mesh.obj, elevation.txt, config.resolved, timings.txt
/// and (for synthetic scenes) report.csv into `out_dir`. Stage failures are
/// caught, labelled, and reported through RunResult with partial outputs kept.
RunResult run_reconstruct(const RunConfig& cfg, const std::string& out_dir, Exec exec = Exec::Parallel);

/// Ground-truth mesh of a procedural scene: marching cubes on the analytic SDF.
TriMesh ground_truth_mesh(const ProceduralShape& shape, int resolution = 128);

/// Writes the rendered input for a views_dir run: nearby_<i>.png with
/// nearby_deltas.txt, and source_<i>.png with source_poses.txt (the
/// assumed poses), gt_mesh.obj and config.resolved. Renders at the true pose, with the
/// config's noise.
void render_synthetic(const RunConfig& cfg, const std::string& out_dir, Exec exec = Exec::Parallel);

/// Suite lines: `scene [pose_sigma_deg [color_sigma [elevation_deg]]]`.
struct SuiteEntry {
    std::string scene;
    double pose_sigma_deg = 0.0;
    double color_sigma = 0.0;
    std::optional<double> elevation_deg;
};

std::vector<SuiteEntry> parse_suite(const std::string& text);

/// Runs every entry into out_dir/<index>_<scene>/ and writes
/// out_dir/report.csv (deterministic: no timings) and out_dir/timings.txt.
/// Failed scenes become rows with status `error`.
std::string run_benchmark(const std::vector<SuiteEntry>& suite, const RunConfig& base, const std::string& out_dir,
                          Exec exec = Exec::Parallel);

std::string report_header();

}  // namespace mvr
