// Serial vs OpenMP timings of the parallel kernels. Arg 0 = serial, 1 = parallel.
#include <random>

#include <benchmark/benchmark.h>

#include "mvr/pipeline.hpp"

using namespace mvr;

namespace {

Exec exec_of(const benchmark::State& st) { return st.range(0) ? Exec::Parallel : Exec::Serial; }

struct Fixture {
    std::vector<View> views;
    SourceViews sources;
    CostVolume cost;
    SdfGrid init;
    TrainingSet training;
    TriMesh mesh;
    TriMesh gt;

    Fixture() {
        const ProceduralShape shape = builtin_scene("sphere_box");
        for (const SphericalPose& p : select_source_views(8).nearby())
            views.push_back(render_view(shape, p, Intrinsics(128, 128, 50)));
        sources = make_source_views(views);
        cost = build_cost_volume(sources.features, sources.cameras, 48);
        init = init_sdf(cost, views);
        training = make_training_set(views, init);
        mesh = marching_cubes(init);
        gt = ground_truth_mesh(shape, 64);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

void BM_render_view(benchmark::State& st) {
    const ProceduralShape shape = builtin_scene("torus");
    for (auto _ : st) benchmark::DoNotOptimize(render_view(shape, SphericalPose(20, 30, 1.2), Intrinsics(), exec_of(st)));
}

void BM_build_cost_volume(benchmark::State& st) {
    const Fixture& f = fixture();
    for (auto _ : st) benchmark::DoNotOptimize(build_cost_volume(f.sources.features, f.sources.cameras, 48, exec_of(st)));
}

void BM_loss_and_gradient(benchmark::State& st) {
    const Fixture& f = fixture();
    std::mt19937_64 rng(1);
    RayBatch batch;
    for (int i = 0; i < 512; ++i) {
        const std::size_t v = rng() % f.training.views.size();
        const View& view = f.training.views[v];
        const Camera cam = view.camera();
        const Vec2 px(rng() % view.rgba.width, rng() % view.rgba.height);
        batch.rays.push_back(pixel_ray(cam.extrinsics, cam.intrinsics, px));
        batch.targets.push_back({Rgb(0.5, 0.5, 0.5), 0.0});
        batch.color_index.push_back(static_cast<int>(v));
    }
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<Vec3> pts;
    for (int i = 0; i < 512; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
    for (auto _ : st)
        benchmark::DoNotOptimize(
            loss_and_gradient(f.init, 30.0, batch, f.training.colors, pts, Lambdas{}, true, {}, exec_of(st)));
}

void BM_make_training_set(benchmark::State& st) {
    const Fixture& f = fixture();
    for (auto _ : st) benchmark::DoNotOptimize(make_training_set(f.views, f.init, 0.1, {}, exec_of(st)));
}

void BM_vertex_colors(benchmark::State& st) {
    const Fixture& f = fixture();
    for (auto _ : st) benchmark::DoNotOptimize(vertex_colors(f.mesh, f.sources, f.init, {}, exec_of(st)));
}

void BM_align_search(benchmark::State& st) {
    const Fixture& f = fixture();
    AlignOptions o;
    o.cloud_points = 4000;
    for (auto _ : st) benchmark::DoNotOptimize(align_search(f.mesh, f.gt, o, exec_of(st)));
}

}  // namespace

BENCHMARK(BM_render_view)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_build_cost_volume)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_loss_and_gradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_make_training_set)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->Iterations(2);
BENCHMARK(BM_vertex_colors)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_align_search)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->Iterations(1);

BENCHMARK_MAIN();
