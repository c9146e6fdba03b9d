#include "mvr/camera.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Geometry>

#include "mvr/errors.hpp"

namespace mvr {

double normalize_azimuth(double deg) {
    double a = std::fmod(deg, 360.0);
    if (a < 0.0) a += 360.0;
    if (a >= 360.0) a -= 360.0;
    return a;
}

double wrap_delta_deg(double deg) {
    double a = std::fmod(deg, 360.0);
    if (a <= -180.0) a += 360.0;
    if (a > 180.0) a -= 360.0;
    return a;
}

SphericalPose::SphericalPose(double elevation_deg, double azimuth_deg, double radius)
    : elevation_deg_(elevation_deg), azimuth_deg_(normalize_azimuth(azimuth_deg)), radius_(radius) {
    if (!std::isfinite(elevation_deg) || elevation_deg < -90.0 || elevation_deg > 90.0) {
        throw RangeError("elevation " + std::to_string(elevation_deg) + " outside [-90, 90]");
    }
    if (!std::isfinite(azimuth_deg)) throw RangeError("azimuth is not finite");
    if (!std::isfinite(radius) || radius <= 0.0) {
        throw RangeError("radius must be positive, got " + std::to_string(radius));
    }
}

Vec3 SphericalPose::center() const {
    const double el = deg_to_rad(elevation_deg_);
    const double az = deg_to_rad(azimuth_deg_);
    return radius_ * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

RelativeSpherical relative_spherical(const SphericalPose& from, const SphericalPose& to) {
    return {to.elevation_deg() - from.elevation_deg(),
            wrap_delta_deg(to.azimuth_deg() - from.azimuth_deg()), to.radius() - from.radius()};
}

SphericalPose apply_relative(const SphericalPose& p, const RelativeSpherical& d) {
    return SphericalPose(p.elevation_deg() + d.d_elevation_deg, p.azimuth_deg() + d.d_azimuth_deg,
                         p.radius() + d.d_radius);
}

Intrinsics::Intrinsics(int width, int height, double fov_y) : width_px(width), height_px(height), fov_y_deg(fov_y) {
    if (width <= 0 || height <= 0) throw RangeError("image size must be positive");
    if (!(fov_y > 0.0 && fov_y < 180.0)) throw RangeError("fov_y must lie in (0, 180)");
}

double Intrinsics::focal_px() const { return 0.5 * height_px / std::tan(0.5 * deg_to_rad(fov_y_deg)); }

bool Intrinsics::contains(const Vec2& px) const {
    return px.x() >= -0.5 && px.y() >= -0.5 && px.x() <= width_px - 0.5 && px.y() <= height_px - 0.5;
}

Extrinsics pose_from_spherical(const SphericalPose& p) {
    const Vec3 c = p.center();
    const Vec3 forward = -c.normalized();
    Vec3 up = Vec3::UnitZ();
    if (p.elevation_deg() == 90.0) {
        up = -Vec3::UnitX();
    } else if (p.elevation_deg() == -90.0) {
        up = Vec3::UnitX();
    }
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);

    Extrinsics ext;
    ext.rotation.row(0) = right.transpose();
    ext.rotation.row(1) = down.transpose();
    ext.rotation.row(2) = forward.transpose();
    ext.translation = -ext.rotation * c;
    return ext;
}

std::optional<Vec2> project(const Extrinsics& ext, const Intrinsics& intr, const Vec3& point) {
    const Vec3 pc = ext.to_camera(point);
    if (pc.z() <= 1e-9) return std::nullopt;
    const double f = intr.focal_px();
    return Vec2(f * pc.x() / pc.z() + intr.cx(), f * pc.y() / pc.z() + intr.cy());
}

Ray pixel_ray(const Extrinsics& ext, const Intrinsics& intr, const Vec2& pixel) {
    const double f = intr.focal_px();
    const Vec3 dc((pixel.x() - intr.cx()) / f, (pixel.y() - intr.cy()) / f, 1.0);
    return {ext.center(), (ext.rotation.transpose() * dc).normalized()};
}

Vec3 closest_point_on_ray(const Ray& ray, const Vec3& point) {
    return ray.at((point - ray.origin).dot(ray.direction));
}

double rotation_angle_deg(const Mat3& a, const Mat3& b) {
    const Mat3 r = a * b.transpose();
    const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
    return rad_to_deg(std::acos(c));
}

double great_circle_deg(const SphericalPose& a, const SphericalPose& b) {
    const Vec3 u = a.center().normalized();
    const Vec3 v = b.center().normalized();
    return rad_to_deg(std::atan2(u.cross(v).norm(), u.dot(v)));
}

namespace {

std::vector<std::array<double, 3>> read_triples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::array<double, 3>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::array<double, 3> r{};
        if (!(ss >> r[0] >> r[1] >> r[2])) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            throw IoError(path + ":" + std::to_string(lineno) + ": expected three numbers");
        }
        rows.push_back(r);
    }
    return rows;
}

}  // namespace

std::vector<SphericalPose> read_pose_file(const std::string& path) {
    std::vector<SphericalPose> poses;
    for (const auto& r : read_triples(path)) poses.emplace_back(r[0], r[1], r[2]);
    return poses;
}

void write_pose_file(const std::string& path, const std::vector<SphericalPose>& poses) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    for (const auto& p : poses) out << p.elevation_deg() << ' ' << p.azimuth_deg() << ' ' << p.radius() << '\n';
}

std::vector<RelativeSpherical> read_delta_file(const std::string& path) {
    std::vector<RelativeSpherical> deltas;
    for (const auto& r : read_triples(path)) deltas.push_back({r[0], r[1], r[2]});
    return deltas;
}

void write_delta_file(const std::string& path, const std::vector<RelativeSpherical>& deltas) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    for (const auto& d : deltas) out << d.d_elevation_deg << ' ' << d.d_azimuth_deg << ' ' << d.d_radius << '\n';
}

}  // namespace mvr
