#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mvr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle in degrees into [0, 360).
double normalize_azimuth(double deg);

/// Wraps an angle difference in degrees into (-180, 180].
double wrap_delta_deg(double deg);

/// Camera location on the viewing sphere. The camera always looks at the
/// world origin; +Z is world up and azimuth runs counterclockwise from +X.
class SphericalPose {
public:
    /// Throws RangeError for elevation outside [-90, 90] or radius <= 0.
    SphericalPose(double elevation_deg, double azimuth_deg, double radius);

    double elevation_deg() const { return elevation_deg_; }
    double azimuth_deg() const { return azimuth_deg_; }
    double radius() const { return radius_; }

    Vec3 center() const;

    bool operator==(const SphericalPose&) const = default;

private:
    double elevation_deg_;
    double azimuth_deg_;
    double radius_;
};

struct RelativeSpherical {
    double d_elevation_deg = 0.0;
    double d_azimuth_deg = 0.0;
    double d_radius = 0.0;
};

RelativeSpherical relative_spherical(const SphericalPose& from, const SphericalPose& to);

/// Throws RangeError when the shifted elevation leaves [-90, 90].
SphericalPose apply_relative(const SphericalPose& p, const RelativeSpherical& d);

/// Pinhole intrinsics with the principal point at the image center and
/// square pixels. Pixel (0,0) is the center of the top-left pixel.
struct Intrinsics {
    int width_px = 256;
    int height_px = 256;
    double fov_y_deg = 50.0;

    Intrinsics() = default;
    Intrinsics(int width, int height, double fov_y);

    double focal_px() const;
    double cx() const { return 0.5 * (width_px - 1); }
    double cy() const { return 0.5 * (height_px - 1); }
    bool contains(const Vec2& px) const;
};

/// World-to-camera rigid transform. Camera frame: +x right, +y down,
/// +z along the optical axis.
struct Extrinsics {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 center() const { return -rotation.transpose() * translation; }
    Vec3 forward() const { return rotation.row(2).transpose(); }
    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
};

struct Ray {
    Vec3 origin;
    Vec3 direction;

    Vec3 at(double t) const { return origin + t * direction; }
};

/// Look-at camera for a spherical pose. At elevation +90 (-90) the up
/// vector is world -X (+X); elsewhere image up follows world +Z.
Extrinsics pose_from_spherical(const SphericalPose& p);

/// Continuous pixel coordinates of a world point, or nullopt when the point
/// lies at or behind the camera plane. Out-of-bounds pixels are returned.
std::optional<Vec2> project(const Extrinsics& ext, const Intrinsics& intr, const Vec3& point);

Ray pixel_ray(const Extrinsics& ext, const Intrinsics& intr, const Vec2& pixel);

/// Closest point on a ray's supporting line to `point`.
Vec3 closest_point_on_ray(const Ray& ray, const Vec3& point);

/// Geodesic angle between two rotations, in degrees.
double rotation_angle_deg(const Mat3& a, const Mat3& b);

/// Great-circle angle between the camera centers of two poses, in degrees.
double great_circle_deg(const SphericalPose& a, const SphericalPose& b);

struct Camera {
    SphericalPose pose;
    Intrinsics intrinsics;
    Extrinsics extrinsics;

    Camera(const SphericalPose& p, const Intrinsics& intr)
        : pose(p), intrinsics(intr), extrinsics(pose_from_spherical(p)) {}
};

/// Pose files: one `elevation_deg azimuth_deg radius` line per view.
std::vector<SphericalPose> read_pose_file(const std::string& path);
void write_pose_file(const std::string& path, const std::vector<SphericalPose>& poses);

/// Delta files: one `d_elevation_deg d_azimuth_deg d_radius` line per view.
std::vector<RelativeSpherical> read_delta_file(const std::string& path);
void write_delta_file(const std::string& path, const std::vector<RelativeSpherical>& deltas);

}  // namespace mvr
