#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mvr/errors.hpp"
#include "mvr/pipeline.hpp"

using namespace mvr;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("mvr_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

double angle_between(const SphericalPose& a, const SphericalPose& b) {
    return rad_to_deg(std::acos(std::clamp(a.center().normalized().dot(b.center().normalized()), -1.0, 1.0)));
}

RunConfig small_config() {
    RunConfig c;
    c.scene = "sphere";
    c.image_size = 128;
    c.grid_n = 32;
    c.iterations = 30;
    c.rays_per_batch = 256;
    c.regularizer_points = 256;
    c.gt_resolution = 64;
    c.eval_points = 2000;
    return c;
}

}  // namespace

TEST_CASE("select_source_views") {
    const ViewPlan plan = select_source_views(8);
    REQUIRE(plan.poses.size() == 40);
    CHECK(plan.primary().size() == 8);
    CHECK(plan.nearby().size() == 32);
    for (const PlannedPose& p : plan.poses) {
        CHECK(p.pose.radius() == doctest::Approx(1.2));
        CHECK(std::abs(p.pose.elevation_deg()) <= 80.0 + 1e-9);
    }
    const auto primary = plan.primary();
    for (std::size_t i = 0; i < primary.size(); ++i)
        for (std::size_t j = i + 1; j < primary.size(); ++j) CHECK(angle_between(primary[i], primary[j]) >= 40.0);
    for (const PlannedPose& p : plan.poses) {
        if (p.stage != PoseStage::Nearby) continue;
        CHECK(angle_between(p.pose, primary[p.parent]) <= 10.0 * std::sqrt(2.0) + 1e-9);
    }

    const ViewPlan two = select_source_views(2);
    CHECK(two.primary()[0].elevation_deg() == doctest::Approx(-two.primary()[1].elevation_deg()));
    CHECK(two.primary()[0].elevation_deg() > 0);
    CHECK_THROWS_AS(select_source_views(1), ConfigError);
    CHECK_THROWS_AS(select_source_views(501), ConfigError);
}

TEST_CASE("RunConfig") {
    RunConfig c;
    CHECK_THROWS_AS(c.set("no_such_key", "1"), ConfigError);
    CHECK_THROWS_AS(c.set("grid_n", "abc"), ConfigError);
    CHECK_THROWS_AS(c.set("grid_n", "-3"), ConfigError);
    c.set("grid_n", "48");
    c.set("scene", "torus");
    c.set("elevation_override_deg", "12.5");
    CHECK(c.grid_n == 48);
    CHECK(c.elevation_override_deg.value() == 12.5);

    std::ostringstream text;
    text << "# resolved\n";
    for (const auto& [k, v] : c.resolved()) text << k << " = " << v << '\n';
    const RunConfig back = parse_config(text.str());
    CHECK(back.resolved() == c.resolved());
    CHECK_THROWS_AS(parse_config("grid_n 4\n"), ConfigError);
}

TEST_CASE("parse_suite") {
    const auto s = parse_suite("# comment\nsphere_box\n\ntorus 2 0.01\nsnowman 0 0 -30  # low\n");
    REQUIRE(s.size() == 3);
    CHECK(s[0].scene == "sphere_box");
    CHECK_FALSE(s[0].elevation_deg.has_value());
    CHECK(s[1].pose_sigma_deg == 2.0);
    CHECK(s[1].color_sigma == 0.01);
    CHECK(s[2].elevation_deg.value() == -30.0);
    CHECK_THROWS_AS(parse_suite("torus 1 2 3 4\n"), ConfigError);

    const fs::path d = fresh_dir("empty_suite");
    run_benchmark({}, RunConfig{}, d.string());
    CHECK(slurp(d / "report.csv") == report_header() + "\n");
}

TEST_CASE("run_reconstruct on a small synthetic scene") {
    const fs::path d = fresh_dir("small_run");
    const RunResult r = run_reconstruct(small_config(), d.string());
    CHECK_MESSAGE(r.ok(), r.error);
    CHECK_FALSE(r.mesh.empty());
    REQUIRE(r.elevation.has_value());
    for (const char* f : {"mesh.ply", "mesh.obj", "elevation.txt", "config.resolved", "timings.txt", "report.csv"})
        CHECK_MESSAGE(fs::exists(d / f), f);
    CHECK(std::abs(r.timings.sum() - r.timings.total_seconds) <= 0.05 * r.timings.total_seconds);
    REQUIRE(r.evaluation.has_value());
    MESSAGE("small run F = " << r.evaluation->score.f);
    CHECK(load_config((d / "config.resolved").string()).resolved() == small_config().resolved());
}

TEST_CASE("run_reconstruct from a views directory") {
    const fs::path views = fresh_dir("views");
    RunConfig c = small_config();
    c.scene = "snowman";
    c.input_elevation_deg = 15;
    render_synthetic(c, views.string());
    for (const char* f : {"nearby_deltas.txt", "nearby_00.png", "nearby_03.png", "source_deltas.txt",
                          "source_00.png", "gt_mesh.obj"})
        CHECK_MESSAGE(fs::exists(views / f), f);

    RunConfig from_dir = small_config();
    from_dir.views_dir = views.string();
    const fs::path out = fresh_dir("views_out");
    const RunResult r = run_reconstruct(from_dir, out.string());
    CHECK_MESSAGE(r.ok(), r.error);
    REQUIRE(r.elevation.has_value());
    CHECK(std::abs(r.elevation->elevation_deg - 15) <= 3.0);
    REQUIRE(r.true_elevation_deg.has_value());
    CHECK(*r.true_elevation_deg == 15.0);
    // Scored against the gt_mesh.obj in the views directory.
    REQUIRE(r.evaluation.has_value());
    CHECK(r.evaluation->score.f >= 0.9);
    CHECK(fs::exists(out / "report.csv"));

    SUBCASE("a missing directory fails in the first stage with partial outputs") {
        RunConfig bad = small_config();
        bad.views_dir = (views / "does_not_exist").string();
        const fs::path o = fresh_dir("bad_out");
        const RunResult b = run_reconstruct(bad, o.string());
        CHECK_FALSE(b.ok());
        CHECK(b.error.rfind("nearby_views:", 0) == 0);
        CHECK(fs::exists(o / "elevation.txt"));
        CHECK(fs::exists(o / "timings.txt"));
        CHECK(fs::exists(o / "config.resolved"));
        CHECK(fs::exists(o / "report.csv"));
    }
}
