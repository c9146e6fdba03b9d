#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mvr/camera.hpp"
#include "mvr/errors.hpp"
#include "mvr/exec.hpp"
#include "mvr/mesh.hpp"
#include "mvr/synth.hpp"

namespace mvr {

/// Hand-crafted per-pixel features: straight RGB plus the Sobel gradient
/// magnitude of premultiplied luminance, all in [0,1] and zero where alpha = 0.
struct FeatureMap {
    static constexpr int kChannels = 4;
    int width = 0;
    int height = 0;
    std::vector<float> data;          // (y * width + x) * kChannels + c
    std::vector<std::uint8_t> mask;   // 1 where alpha > 0

    float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * kChannels + c]; }
    bool valid(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }

    /// Bilinear fetch (clamp to edge). False when the nearest pixel is out of
    /// bounds or masked out.
    bool sample(double x, double y, float out[kChannels]) const;
};

FeatureMap extract_features(const View& v);

/// Features and cameras of the source views, index aligned.
struct SourceViews {
    std::vector<FeatureMap> features;
    std::vector<Camera> cameras;

    int size() const { return static_cast<int>(cameras.size()); }
};

SourceViews make_source_views(const std::vector<View>& views, Exec exec = Exec::Parallel);

/// Cell-centered N^3 grid over [-0.5, 0.5]^3; voxel (i,j,k) sits at
/// -0.5 + (i + 0.5) / N along each axis, i along x.
struct GridShape {
    int n = 0;

    double voxel() const { return 1.0 / n; }
    std::size_t count() const { return static_cast<std::size_t>(n) * n * n; }
    std::size_t index(int i, int j, int k) const { return (static_cast<std::size_t>(k) * n + j) * n + i; }
    Vec3 center(int i, int j, int k) const;

    bool operator==(const GridShape&) const = default;
};

struct CostVolume {
    GridShape shape;
    std::vector<std::array<float, FeatureMap::kChannels>> variance;  // +inf below 2 contributors
    std::vector<int> visibility;

    double mean_variance(std::size_t idx) const;
};

/// Needs at least two views with identical intrinsics.
CostVolume build_cost_volume(const std::vector<FeatureMap>& features, const std::vector<Camera>& cameras, int n,
                             Exec exec = Exec::Parallel);

/// Trilinear interpolation weights of one query point.
struct Stencil {
    std::array<std::size_t, 8> idx;
    std::array<double, 8> w;
};

/// Signed distance on voxel centers, negative inside. Queries are trilinear
/// between centers; coordinates are clamped to the outermost centers, so the
/// field extends constantly past them.
class SdfGrid {
public:
    SdfGrid() = default;
    SdfGrid(int n, double fill);

    static SdfGrid from_function(int n, const std::function<double(const Vec3&)>& f);

    const GridShape& shape() const { return shape_; }
    int resolution() const { return shape_.n; }
    double voxel() const { return shape_.voxel(); }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }
    double& at(int i, int j, int k) { return values_[shape_.index(i, j, k)]; }
    double at(int i, int j, int k) const { return values_[shape_.index(i, j, k)]; }

    Stencil stencil(const Vec3& p) const;
    double sample(const Vec3& p) const;
    /// Central differences of the trilinear field with step = voxel size.
    Vec3 gradient(const Vec3& p) const;

    bool operator==(const SdfGrid&) const = default;

private:
    GridShape shape_;
    std::vector<double> values_;
};

/// Visual hull: a voxel is inside when it falls inside the alpha mask of
/// every view that sees it in bounds. Exact Euclidean distance transform,
/// negative inside. Throws EmptySceneError for an empty hull.
SdfGrid init_sdf(const CostVolume& cost, const std::vector<View>& views);

/// Softmax blend of the source colors at `point`. Logits are
/// -d_feat^2 / sigma_f + gamma * (view_dir . source_dir), both directions
/// pointing away from the point; the feature term is dropped when
/// `query_feature` is null. View `exclude` is skipped; with an occluder,
/// views that face away from `normal` or see another surface first are
/// skipped too. nullopt when no view remains.
struct BlendOptions {
    double sigma_f = 0.02;
    double gamma = 4.0;
};

std::optional<Rgb> blend_color(const Vec3& point, const Vec3& view_dir, const SourceViews& sources,
                               const float* query_feature = nullptr, int exclude = -1,
                               const SdfGrid* occluder = nullptr, const Vec3* normal = nullptr,
                               const BlendOptions& opts = {});

/// Per-voxel RGB lookup table used as the color branch during fitting.
struct ColorVolume {
    GridShape shape;
    std::vector<std::array<float, 3>> rgb;

    Rgb sample(const Vec3& p) const;
};

struct RenderOptions {
    int uniform_samples = 64;
    int importance_samples = 32;
    double weight_eps = 1e-6;
};

/// One volume-rendered ray. `t` and `sdf` hold the sorted samples; alpha,
/// weight, t_mid and color are per interval between consecutive samples.
/// `rgb` is premultiplied (no background); composited() adds white.
struct RenderSample {
    std::vector<double> t;
    std::vector<double> sdf;
    std::vector<double> alpha;
    std::vector<double> weight;
    std::vector<double> t_mid;
    std::vector<Rgb> color;
    Rgb rgb = Rgb::Zero();
    double depth = 0.0;
    double weight_sum = 0.0;
    bool hit_domain = false;

    Rgb composited() const { return rgb + (1.0 - weight_sum) * Rgb::Ones(); }
};

/// Entry and exit distances of a ray through [-0.5, 0.5]^3.
std::optional<std::pair<double, double>> intersect_domain(const Ray& ray);

/// Renders with an arbitrary color field. Samples: uniform over the domain
/// segment plus importance samples spread over the first +/- sign change
/// (rays without a crossing get them evenly over the segment). Alpha per interval is
/// max(0, 1 - Phi(s d1) / Phi(s d0)) with the logistic Phi.
RenderSample render_ray(const SdfGrid& sdf, const Ray& ray, double s, const RenderOptions& opts,
                        const std::function<Rgb(const Vec3& point, const Vec3& dir)>& color);

/// Pixel render with colors from blend_color over the source views.
/// `query_index` names the source view the pixel belongs to (excluded from
/// the blend and used for the query feature), or -1.
RenderSample render_pixel(const SdfGrid& sdf, const SourceViews& sources, const Camera& query, int query_index,
                          const Vec2& pixel, double s, const RenderOptions& opts = {},
                          const BlendOptions& blend = {});

struct Lambdas {
    double depth = 1.0;
    double eikonal = 0.1;
    double sparsity = 0.02;
};

struct LossBreakdown {
    double l_rgb = 0.0;
    double l_depth = 0.0;
    double l_eikonal = 0.0;
    double l_sparsity = 0.0;
    double total = 0.0;
    Lambdas lambdas;
};

/// Ground truth of one pixel: premultiplied color and depth (0 = none).
struct PixelTarget {
    Rgb rgb = Rgb::Zero();
    double depth = 0.0;
};

PixelTarget pixel_target(const View& v, int x, int y);

constexpr double kSparsityTau = 10.0;

/// l_rgb = mean (sum w) |rgb - gt|_1; l_depth = mean over gt depth > 0 of
/// |depth - gt| (only with use_depth); eikonal and sparsity over sample_points.
LossBreakdown compute_loss(const std::vector<RenderSample>& rendered, const std::vector<PixelTarget>& targets,
                           const SdfGrid& sdf, const std::vector<Vec3>& sample_points, const Lambdas& lambdas,
                           bool use_depth);

/// Rays with their targets; colors come from color_volumes[color_index[r]].
struct RayBatch {
    std::vector<Ray> rays;
    std::vector<PixelTarget> targets;
    std::vector<int> color_index;
};

struct LossGradient {
    LossBreakdown loss;
    std::vector<double> d_sdf;  // one per voxel
    double d_log_s = 0.0;
};

/// Loss of a batch and its analytic gradient w.r.t. voxel values and log s.
/// Per-ray contributions are merged in ray order, so Serial and Parallel agree.
LossGradient loss_and_gradient(const SdfGrid& sdf, double s, const RayBatch& batch,
                               const std::vector<ColorVolume>& color_volumes, const std::vector<Vec3>& sample_points,
                               const Lambdas& lambdas, bool use_depth, const RenderOptions& opts = {},
                               Exec exec = Exec::Parallel);

/// Target views plus, per view, a leave-one-out color volume blended from
/// the other views with the target's own features as the query.
struct TrainingSet {
    std::vector<View> views;
    SourceViews sources;
    std::vector<ColorVolume> colors;
};

/// Color volumes are filled where |init sdf| < band; elsewhere black.
TrainingSet make_training_set(std::vector<View> views, const SdfGrid& init, double band = 0.1,
                              const BlendOptions& blend = {}, Exec exec = Exec::Parallel);

struct OptimizeConfig {
    int iterations = 2000;
    int rays_per_batch = 1024;
    int regularizer_points = 1024;
    double learning_rate = 0.03;
    double learning_rate_log_s = 1e-2;
    double momentum = 0.9;
    double s_init = 30.0;
    Lambdas lambdas;
    double warmup_fraction = 0.2;
    bool use_depth = false;
    std::uint64_t seed = 0;
    double divergence_factor = 10.0;
    RenderOptions render;
};

struct OptimizeResult {
    SdfGrid grid;
    double s = 0.0;
    std::vector<LossBreakdown> trace;
};

/// Thrown by optimize; carries the trace up to the failing iteration.
class DivergenceTrace : public DivergenceError {
public:
    DivergenceTrace(const std::string& msg, std::vector<LossBreakdown> t)
        : DivergenceError(msg), trace(std::move(t)) {}
    std::vector<LossBreakdown> trace;
};

/// Momentum gradient descent on voxel values and log s. Target pixels are
/// drawn uniformly over views and pixels; regularizer points uniformly over
/// the domain. All random draws come from one seeded generator.
OptimizeResult optimize(const SdfGrid& init, const TrainingSet& data, const OptimizeConfig& cfg,
                        Exec exec = Exec::Parallel);

/// Marching cubes with linear edge interpolation; vertices shared along
/// edges; triangles wound so normals point toward positive values.
TriMesh marching_cubes(const SdfGrid& sdf, double iso = 0.0);

/// blend_color at every vertex with view_dir = the outward vertex normal,
/// keeping only views that see the vertex. Vertices no view sees take the
/// color of the nearest colored neighbor along mesh edges.
TriMesh vertex_colors(TriMesh mesh, const SourceViews& sources, const SdfGrid& sdf, const BlendOptions& opts = {},
                      Exec exec = Exec::Parallel);

}  // namespace mvr
