#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mvr/camera.hpp"
#include "mvr/exec.hpp"
#include "mvr/image.hpp"

namespace mvr {

using Rgb = Eigen::Vector3d;

struct Sphere {
    Vec3 center;
    double radius;
};

struct Box {
    Vec3 center;
    Vec3 half_extents;
};

/// Z-aligned capped cylinder.
struct Cylinder {
    Vec3 center;
    double radius;
    double half_height;
};

/// Torus lying in the XY plane.
struct Torus {
    Vec3 center;
    double major_radius;
    double minor_radius;
};

using Primitive = std::variant<Sphere, Box, Cylinder, Torus>;

enum class CombineOp { Union, SmoothUnion, Subtract };

struct SdfSample {
    double distance;
    Rgb albedo;
};

/// Left-deep composition tree: each term is folded into the result of all
/// previous terms with its own operator. The first term's operator is ignored.
class ProceduralShape {
public:
    struct Term {
        Primitive primitive;
        Rgb albedo;
        CombineOp op = CombineOp::Union;
        double smooth_k = 0.0;
        /// Spatial frequency of a painted color-noise pattern; 0 = plain albedo.
        double texture_freq = 0.0;
    };

    ProceduralShape() = default;

    ProceduralShape& add(const Primitive& prim, const Rgb& albedo, CombineOp op = CombineOp::Union,
                         double smooth_k = 0.0, double texture_freq = 0.0);

    const std::vector<Term>& terms() const { return terms_; }
    bool empty() const { return terms_.empty(); }

    /// Bounding sphere radius around the origin that encloses the surface.
    double bounding_radius() const { return bound_; }

    SdfSample eval(const Vec3& p) const;

private:
    std::vector<Term> terms_;
    double bound_ = 0.0;
};

double sdf_eval(const ProceduralShape& shape, const Vec3& p);

/// Painted pattern: the albedo scaled per channel by smooth value noise, so
/// every surface point keeps a fixed, locally distinctive color.
Rgb painted_albedo(const Rgb& base, double freq, const Vec3& p);
double primitive_sdf(const Primitive& prim, const Vec3& p);

/// True when the sampled boundary of [-0.5, 0.5]^3 lies strictly outside the shape.
bool fits_unit_cube(const ProceduralShape& shape, int samples_per_edge = 24);

/// Scene files: `sphere cx cy cz r  r g b`, `box cx cy cz hx hy hz  r g b`,
/// `cylinder cx cy cz radius half_height  r g b`, `torus cx cy cz R r  r g b`,
/// each optionally followed by `noise <freq>` to paint a color-noise pattern
/// over the albedo, and `op union|sunion:k|subtract`, which sets the operator for the next
/// primitive only. Throws IoError on malformed input, RangeError when the
/// shape escapes the unit cube.
ProceduralShape parse_scene(const std::string& text);
ProceduralShape load_scene(const std::string& path);

/// Built-in scenes: sphere (plain), sphere_box, torus, snowman (noise
/// textured), hemispheres (red below z = 0, blue above).
ProceduralShape builtin_scene(const std::string& name);
bool is_builtin_scene(const std::string& name);
std::vector<std::string> builtin_scene_names();

struct Hit {
    double depth;
    Vec3 point;
    Vec3 normal;
    Rgb albedo;
};

struct RaymarchOptions {
    double surface_tol = 1e-4;
    int max_steps = 256;
    double normal_h = 1e-4;
};

std::optional<Hit> raymarch(const ProceduralShape& shape, const Ray& ray, double t_max,
                            const RaymarchOptions& opts = {});

/// Normalized central-difference gradient of the shape's SDF.
Vec3 sdf_normal(const ProceduralShape& shape, const Vec3& p, double h = 1e-4);

struct View {
    ImageRGBA rgba;
    ImageF depth;  // empty when the view carries no depth
    SphericalPose pose;
    Intrinsics intrinsics;

    View(ImageRGBA img, ImageF d, const SphericalPose& p, const Intrinsics& intr)
        : rgba(std::move(img)), depth(std::move(d)), pose(p), intrinsics(intr) {}

    bool has_depth() const { return !depth.empty(); }
    Camera camera() const { return Camera(pose, intrinsics); }
};

/// Headlight Lambertian render: rgb = albedo * (0.3 + 0.7 max(0, n.l)),
/// alpha 255 on hit, depth = hit distance along the ray (0 on miss).
View render_view(const ProceduralShape& shape, const SphericalPose& pose, const Intrinsics& intr,
                 Exec exec = Exec::Parallel);

/// Pose jitter moves each camera's viewing direction by an angle drawn from
/// N(0, sigma) along a uniformly random heading; color jitter adds one
/// Gaussian RGB offset per view to the foreground.
struct NoiseModel {
    double color_jitter_sigma = 0.0;
    double pose_jitter_sigma_deg = 0.0;
    std::uint64_t seed = 0;
};

/// Renders views at input_pose + delta, each perturbed by the noise model.
/// The returned views carry the nominal (unjittered) pose.
std::vector<View> predict_views(const ProceduralShape& shape, const SphericalPose& input_pose,
                                const std::vector<RelativeSpherical>& deltas, const NoiseModel& noise,
                                const Intrinsics& intr, Exec exec = Exec::Parallel);

}  // namespace mvr
