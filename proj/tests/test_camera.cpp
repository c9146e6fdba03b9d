#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mvr/camera.hpp"
#include "mvr/errors.hpp"

using namespace mvr;

namespace {

bool near_vec(const Vec3& a, const Vec3& b, double tol) { return (a - b).norm() <= tol; }

void check_rotation(const Extrinsics& e) {
    CHECK((e.rotation * e.rotation.transpose() - Mat3::Identity()).norm() < 1e-9);
    CHECK(std::abs(e.rotation.determinant() - 1.0) < 1e-9);
}

// World direction of image "up" (camera -y).
Vec3 image_up(const Extrinsics& e) { return -e.rotation.row(1).transpose(); }

}  // namespace

TEST_CASE("SphericalPose validates and normalizes") {
    CHECK_THROWS_AS(SphericalPose(91, 0, 1), RangeError);
    CHECK_THROWS_AS(SphericalPose(-90.5, 0, 1), RangeError);
    CHECK_THROWS_AS(SphericalPose(0, 0, 0), RangeError);
    CHECK(SphericalPose(10, -10, 1).azimuth_deg() == doctest::Approx(350));
    CHECK(SphericalPose(10, 720, 1).azimuth_deg() == doctest::Approx(0));
    CHECK(SphericalPose(10, 360, 1).azimuth_deg() < 360.0);
    CHECK(wrap_delta_deg(180) == doctest::Approx(180));
    CHECK(wrap_delta_deg(-180) == doctest::Approx(180));
    CHECK(wrap_delta_deg(190) == doctest::Approx(-170));
}

TEST_CASE("pose_from_spherical") {
    SUBCASE("axis aligned") {
        const Extrinsics e = pose_from_spherical(SphericalPose(0, 0, 1.2));
        CHECK(near_vec(e.center(), Vec3(1.2, 0, 0), 1e-12));
        CHECK(near_vec(e.forward(), Vec3(-1, 0, 0), 1e-12));
        CHECK(near_vec(image_up(e), Vec3(0, 0, 1), 1e-12));
        check_rotation(e);
    }
    SUBCASE("north pole uses world -X as up") {
        const Extrinsics e = pose_from_spherical(SphericalPose(90, 0, 1));
        CHECK(near_vec(e.center(), Vec3(0, 0, 1), 1e-12));
        CHECK(near_vec(e.forward(), Vec3(0, 0, -1), 1e-12));
        CHECK(near_vec(image_up(e), Vec3(-1, 0, 0), 1e-12));
        check_rotation(e);
    }
    SUBCASE("south pole uses world +X as up") {
        const Extrinsics e = pose_from_spherical(SphericalPose(-90, 123, 1));
        CHECK(near_vec(image_up(e), Vec3(1, 0, 0), 1e-12));
        check_rotation(e);
    }
    SUBCASE("general pose") {
        const SphericalPose p(30, 45, 2);
        const Extrinsics e = pose_from_spherical(p);
        const Vec3 c = e.center();
        CHECK(c.norm() == doctest::Approx(2.0).epsilon(1e-12));
        const double el = deg_to_rad(30), az = deg_to_rad(45);
        CHECK(near_vec(c, 2.0 * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)), 1e-12));
        // R maps the direction toward the origin onto the camera's +z axis.
        CHECK(near_vec(e.rotation * (-c / c.norm()), Vec3(0, 0, 1), 1e-12));
        check_rotation(e);
    }
    SUBCASE("random poses: center norm and optical axis through origin") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> el(-90, 90), az(0, 360), r(0.5, 3);
        for (int i = 0; i < 200; ++i) {
            const SphericalPose p(el(rng), az(rng), r(rng));
            const Extrinsics e = pose_from_spherical(p);
            CHECK(std::abs(e.center().norm() - p.radius()) < 1e-9);
            // Distance from the origin to the optical axis line.
            CHECK(e.center().cross(e.forward()).norm() < 1e-9);
            check_rotation(e);
        }
    }
}

TEST_CASE("relative_spherical") {
    const SphericalPose p(12, 34, 1.5);
    const RelativeSpherical z = relative_spherical(p, p);
    CHECK(z.d_elevation_deg == 0.0);
    CHECK(z.d_azimuth_deg == 0.0);
    CHECK(z.d_radius == 0.0);

    const RelativeSpherical w = relative_spherical(SphericalPose(10, 350, 1.2), SphericalPose(20, 10, 1.2));
    CHECK(w.d_elevation_deg == doctest::Approx(10));
    CHECK(w.d_azimuth_deg == doctest::Approx(20));
    CHECK(w.d_radius == doctest::Approx(0));

    const RelativeSpherical c = relative_spherical(SphericalPose(0, 0, 1), SphericalPose(-30, 90, 1.5));
    CHECK(c.d_elevation_deg == doctest::Approx(-30));
    CHECK(c.d_azimuth_deg == doctest::Approx(90));
    CHECK(c.d_radius == doctest::Approx(0.5));
}

TEST_CASE("apply_relative") {
    const SphericalPose p(20, 355, 1.2);
    CHECK(apply_relative(p, {}) == p);
    CHECK_THROWS_AS(apply_relative(SphericalPose(85, 0, 1.2), {10, 0, 0}), RangeError);
    const SphericalPose q = apply_relative(p, {0, 10, 0});
    CHECK(q.elevation_deg() == doctest::Approx(20));
    CHECK(q.azimuth_deg() == doctest::Approx(5));
    CHECK(q.radius() == doctest::Approx(1.2));

    SUBCASE("apply(p, relative(p, q)) == q") {
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> el(-90, 90), az(0, 360), r(0.5, 3);
        for (int i = 0; i < 500; ++i) {
            const SphericalPose a(el(rng), az(rng), r(rng)), b(el(rng), az(rng), r(rng));
            const SphericalPose back = apply_relative(a, relative_spherical(a, b));
            CHECK(back.elevation_deg() == doctest::Approx(b.elevation_deg()).epsilon(1e-12));
            CHECK(std::abs(wrap_delta_deg(back.azimuth_deg() - b.azimuth_deg())) < 1e-9);
            CHECK(back.radius() == doctest::Approx(b.radius()).epsilon(1e-12));
        }
    }
}

TEST_CASE("relative transforms depend on the base elevation") {
    const RelativeSpherical d{10, 10, 0};
    auto relative_rotation = [&](double elev0) {
        const SphericalPose p(elev0, 0, 1.2);
        const Mat3 r1 = pose_from_spherical(p).rotation;
        const Mat3 r2 = pose_from_spherical(apply_relative(p, d)).rotation;
        return Mat3(r2 * r1.transpose());
    };
    CHECK(rotation_angle_deg(relative_rotation(0), relative_rotation(30)) > 1.0);
}

TEST_CASE("project and pixel_ray") {
    const Intrinsics intr(256, 256, 50);
    const Extrinsics e = pose_from_spherical(SphericalPose(25, 70, 1.2));

    const auto c = project(e, intr, Vec3::Zero());
    REQUIRE(c);
    CHECK(c->x() == doctest::Approx(127.5).epsilon(1e-12));
    CHECK(c->y() == doctest::Approx(127.5).epsilon(1e-12));
    CHECK_FALSE(project(e, intr, e.center()));
    CHECK_FALSE(project(e, intr, e.center() - 0.5 * e.forward()));

    const Ray axis = pixel_ray(e, intr, Vec2(127.5, 127.5));
    CHECK(near_vec(axis.direction, e.forward(), 1e-12));
    CHECK(near_vec(axis.origin, e.center(), 1e-12));

    // Corner pixel: the angle to the axis follows from fov and pixel offsets.
    const Ray corner = pixel_ray(e, intr, Vec2(0, 0));
    const double off = std::hypot(127.5, 127.5);
    const double expect = std::atan(off / (127.5 + 0.5) * std::tan(deg_to_rad(25)));
    CHECK(std::acos(corner.direction.dot(e.forward())) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(intr.focal_px() == doctest::Approx(128.0 / std::tan(deg_to_rad(25))));

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.5, 0.5), px(0, 255);
    double worst_px = 0.0, worst_pt = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Vec2 p(px(rng), px(rng));
        const Ray r = pixel_ray(e, intr, p);
        CHECK(std::abs(r.direction.norm() - 1.0) < 1e-9);
        const auto back = project(e, intr, r.at(0.7 + 0.8 * (u(rng) + 0.5)));
        REQUIRE(back);
        worst_px = std::max(worst_px, (*back - p).norm());

        const Vec3 q(u(rng), u(rng), u(rng));
        const auto qp = project(e, intr, q);
        REQUIRE(qp);
        const Vec3 rec = closest_point_on_ray(pixel_ray(e, intr, *qp), q);
        worst_pt = std::max(worst_pt, (rec - q).norm());
    }
    CHECK(worst_px < 1e-6);
    CHECK(worst_pt < 1e-6);
}

TEST_CASE("pose and delta files round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "mvr_test_camera";
    std::filesystem::create_directories(dir);
    const std::vector<SphericalPose> poses{{10, 20, 1.2}, {-30.25, 359.5, 2}};
    write_pose_file((dir / "poses.txt").string(), poses);
    const auto back = read_pose_file((dir / "poses.txt").string());
    REQUIRE(back.size() == 2);
    CHECK(back[1].elevation_deg() == doctest::Approx(-30.25));
    CHECK(back[1].azimuth_deg() == doctest::Approx(359.5));

    const std::vector<RelativeSpherical> deltas{{10, 0, 0}, {0, -10, 0.1}};
    write_delta_file((dir / "deltas.txt").string(), deltas);
    const auto d = read_delta_file((dir / "deltas.txt").string());
    REQUIRE(d.size() == 2);
    CHECK(d[1].d_azimuth_deg == doctest::Approx(-10));
    CHECK(d[1].d_radius == doctest::Approx(0.1));
    CHECK_THROWS_AS(read_pose_file((dir / "missing.txt").string()), IoError);
}
