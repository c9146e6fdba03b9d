#include <cmath>
#include <random>

#include "doctest.h"
#include "mvr/elevation.hpp"
#include "mvr/errors.hpp"
#include "mvr/synth.hpp"

using namespace mvr;

namespace {

ProceduralShape sphere04() {
    ProceduralShape s;
    s.add(Sphere{Vec3::Zero(), 0.4}, Rgb(0.8, 0.5, 0.3));
    return s;
}

Vec3 random_point(std::mt19937_64& rng, double half = 0.5) {
    std::uniform_real_distribution<double> u(-half, half);
    return Vec3(u(rng), u(rng), u(rng));
}

}  // namespace

TEST_CASE("sdf_eval") {
    const ProceduralShape s = sphere04();
    CHECK(std::abs(sdf_eval(s, Vec3(0.4, 0, 0))) < 1e-15);
    CHECK(sdf_eval(s, Vec3(1, 0, 0)) == doctest::Approx(0.6));
    CHECK(sdf_eval(s, Vec3::Zero()) == doctest::Approx(-0.4));

    ProceduralShape two;
    const Sphere a{Vec3(-0.2, 0, 0), 0.15}, b{Vec3(0.2, 0.1, 0), 0.2};
    two.add(a, Rgb(1, 0, 0)).add(b, Rgb(0, 0, 1));
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        const Vec3 p = random_point(rng, 1.0);
        CHECK(sdf_eval(two, p) == std::min(primitive_sdf(a, p), primitive_sdf(b, p)));
    }
}

TEST_CASE("primitive distances") {
    const Box box{Vec3::Zero(), Vec3(0.2, 0.1, 0.3)};
    CHECK(primitive_sdf(box, Vec3(0.5, 0, 0)) == doctest::Approx(0.3));
    CHECK(primitive_sdf(box, Vec3(0, 0, 0)) == doctest::Approx(-0.1));
    CHECK(primitive_sdf(box, Vec3(0.5, 0.5, 0.3)) == doctest::Approx(std::hypot(0.3, 0.4)));
    const Torus torus{Vec3::Zero(), 0.3, 0.1};
    CHECK(primitive_sdf(torus, Vec3(0.3, 0, 0)) == doctest::Approx(-0.1));
    CHECK(primitive_sdf(torus, Vec3::Zero()) == doctest::Approx(0.2));
    const Cylinder cyl{Vec3::Zero(), 0.2, 0.3};
    CHECK(primitive_sdf(cyl, Vec3(0.5, 0, 0)) == doctest::Approx(0.3));
    CHECK(primitive_sdf(cyl, Vec3(0, 0, 0.5)) == doctest::Approx(0.2));
}

TEST_CASE("smooth union is a distance bound") {
    const ProceduralShape s = builtin_scene("snowman");
    std::mt19937_64 rng(2);
    // |f(p) - f(q)| <= |p - q| for a distance bound; test on random pairs.
    for (int i = 0; i < 500; ++i) {
        const Vec3 p = random_point(rng), q = p + 0.05 * random_point(rng);
        CHECK(std::abs(sdf_eval(s, p) - sdf_eval(s, q)) <= (p - q).norm() * (1 + 1e-9));
    }
}

TEST_CASE("scene files") {
    const ProceduralShape s = parse_scene(
        "# comment\n"
        "sphere 0 0 0 0.3  1 0 0\n"
        "op sunion:0.05\n"
        "box 0 0 0.2  0.1 0.1 0.1  0 1 0 noise 10\n"
        "op subtract\n"
        "cylinder 0 0 0 0.05 0.45  0 0 1\n");
    REQUIRE(s.terms().size() == 3);
    CHECK(s.terms()[1].op == CombineOp::SmoothUnion);
    CHECK(s.terms()[1].smooth_k == doctest::Approx(0.05));
    CHECK(s.terms()[1].texture_freq == doctest::Approx(10));
    CHECK(s.terms()[2].op == CombineOp::Subtract);
    CHECK(sdf_eval(s, Vec3::Zero()) > 0.0);  // drilled out
    CHECK(fits_unit_cube(s));
    CHECK_THROWS_AS(parse_scene("sphere 0 0 0 0.6  1 1 1\n"), RangeError);
    CHECK_THROWS_AS(parse_scene("blob 0 0 0\n"), IoError);
    CHECK_THROWS_AS(parse_scene("sphere 0 0 0\n"), IoError);
    for (const auto& name : builtin_scene_names()) CHECK(fits_unit_cube(builtin_scene(name)));
}

TEST_CASE("raymarch") {
    const ProceduralShape s = sphere04();
    const auto hit = raymarch(s, Ray{Vec3(1.2, 0, 0), Vec3(-1, 0, 0)}, 3.0);
    REQUIRE(hit);
    CHECK(std::abs(hit->depth - 0.8) < 1e-3);
    CHECK((hit->normal - Vec3(1, 0, 0)).norm() < 1e-6);
    CHECK_FALSE(raymarch(s, Ray{Vec3(1.2, 0, 0), Vec3(0, 1, 0)}, 3.0));
    CHECK_FALSE(raymarch(ProceduralShape{}, Ray{Vec3(1.2, 0, 0), Vec3(-1, 0, 0)}, 3.0));

    const ProceduralShape scene = builtin_scene("sphere_box");
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    int hits = 0;
    while (hits < 1000) {
        const Vec3 o = 1.2 * Vec3(g(rng), g(rng), g(rng)).normalized();
        const Vec3 target = random_point(rng, 0.2);
        const auto h = raymarch(scene, Ray{o, (target - o).normalized()}, 3.0);
        if (!h) continue;
        ++hits;
        CHECK(std::abs(sdf_eval(scene, h->point)) < 1e-3);
    }
}

TEST_CASE("render_view") {
    const Intrinsics intr(255, 255, 50);
    const SphericalPose pose(20, 30, 1.2);

    SUBCASE("empty shape is fully transparent") {
        const View v = render_view(ProceduralShape{}, pose, Intrinsics(64, 64, 50));
        for (std::size_t p = 3; p < v.rgba.data.size(); p += 4) CHECK(v.rgba.data[p] == 0);
        for (float d : v.depth.data) CHECK(d == 0.0f);
    }
    SUBCASE("sphere depth, silhouette, consistency") {
        const ProceduralShape s = sphere04();
        const View v = render_view(s, pose, intr);
        CHECK(std::abs(v.depth.at(127, 127) - 0.8) < 1e-3);

        // Projected disk of a centered sphere: radius f * tan(asin(r / d)).
        const double rad = intr.focal_px() * std::tan(std::asin(0.4 / 1.2));
        const double area = kPi * rad * rad;
        int count = 0;
        const Camera cam(pose, intr);
        for (int y = 0; y < intr.height_px; ++y) {
            for (int x = 0; x < intr.width_px; ++x) {
                const bool hit = v.rgba.alpha(x, y) > 0;
                const float d = v.depth.at(x, y);
                CHECK((hit == (d > 0.0f)));
                if (!hit) continue;
                ++count;
                CHECK(d > 1.2 - std::sqrt(3.0) / 2);
                CHECK(d < 1.2 + std::sqrt(3.0) / 2);
                const Ray r = pixel_ray(cam.extrinsics, intr, Vec2(x, y));
                CHECK(std::abs(sdf_eval(s, r.at(d))) < 1e-3);
            }
        }
        CHECK(std::abs(count - area) / area < 0.02);
    }
    SUBCASE("deterministic, serial equals parallel") {
        const ProceduralShape s = builtin_scene("torus");
        const View a = render_view(s, pose, Intrinsics(96, 96, 50), Exec::Serial);
        const View b = render_view(s, pose, Intrinsics(96, 96, 50), Exec::Parallel);
        CHECK(a.rgba == b.rgba);
        CHECK(a.depth == b.depth);
    }
    SUBCASE("headlight shading") {
        const View v = render_view(sphere04(), SphericalPose(0, 0, 1.2), intr);
        // Center pixel faces the light: albedo * 1.0.
        const std::uint8_t* c = v.rgba.at(127, 127);
        CHECK(std::abs(c[0] - 0.8 * 255) <= 1.0);
        CHECK(std::abs(c[1] - 0.5 * 255) <= 1.0);
    }
}

TEST_CASE("predict_views") {
    const ProceduralShape s = builtin_scene("sphere_box");
    const Intrinsics intr(128, 128, 50);
    const SphericalPose input(15, 40, 1.2);
    const std::vector<RelativeSpherical> deltas{{10, 0, 0}, {-10, 0, 0}, {0, 10, 0}, {0, -10, 0}};

    SUBCASE("noiseless equals render_view at nominal poses") {
        const auto views = predict_views(s, input, deltas, NoiseModel{}, intr);
        REQUIRE(views.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
            const View ref = render_view(s, apply_relative(input, deltas[i]), intr);
            CHECK(views[i].rgba == ref.rgba);
            CHECK(views[i].depth == ref.depth);
            CHECK(views[i].pose == apply_relative(input, deltas[i]));
        }
    }
    SUBCASE("seeded noise is deterministic and keeps nominal poses") {
        const NoiseModel nm{0.05, 2.0, 17};
        const auto a = predict_views(s, input, deltas, nm, intr);
        const auto b = predict_views(s, input, deltas, nm, intr, Exec::Serial);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(a[i].rgba == b[i].rgba);
            CHECK(a[i].pose == apply_relative(input, deltas[i]));
        }
        const auto c = predict_views(s, input, deltas, NoiseModel{0.05, 2.0, 18}, intr);
        CHECK_FALSE(a[0].rgba == c[0].rgba);
    }
    SUBCASE("out-of-range delta propagates") {
        CHECK_THROWS_AS(predict_views(s, SphericalPose(85, 0, 1.2), deltas, NoiseModel{}, intr), RangeError);
        CHECK_THROWS_AS(predict_views(s, input, deltas, NoiseModel{-1, 0, 0}, intr), RangeError);
    }
    SUBCASE("pose jitter shows up as reprojection error at nominal poses") {
        const Intrinsics full(256, 256, 50);
        const auto clean = predict_views(s, input, deltas, NoiseModel{}, full);
        const auto noisy = predict_views(s, input, deltas, NoiseModel{0, 2.0, 5}, full);
        const double e_clean = reprojection_error(clean, match_all_pairs(clean));
        const double e_noisy = reprojection_error(noisy, match_all_pairs(noisy));
        CHECK(e_noisy > 0.0);
        CHECK(e_noisy > e_clean);
    }
}
