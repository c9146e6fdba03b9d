#include "mvr/recon.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <random>

#include <Eigen/Geometry>

#include "mvr/errors.hpp"

namespace mvr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// log of the logistic CDF, stable for large |x|.
double log_sigmoid(double x) { return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)))); }
double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Nearest pixel of a continuous coordinate, or false when out of bounds.
bool nearest_pixel(const Intrinsics& intr, const Vec2& px, int& x, int& y) {
    x = static_cast<int>(std::lround(px.x()));
    y = static_cast<int>(std::lround(px.y()));
    return x >= 0 && y >= 0 && x < intr.width_px && y < intr.height_px;
}

}  // namespace

// ---- features -------------------------------------------------------------

bool FeatureMap::sample(double x, double y, float out[kChannels]) const {
    const long xn = std::lround(x), yn = std::lround(y);
    if (xn < 0 || yn < 0 || xn >= width || yn >= height || !valid(static_cast<int>(xn), static_cast<int>(yn))) {
        return false;
    }
    x = std::clamp(x, 0.0, width - 1.0);
    y = std::clamp(y, 0.0, height - 1.0);
    const int x0 = std::min(static_cast<int>(x), std::max(width - 2, 0));
    const int y0 = std::min(static_cast<int>(y), std::max(height - 2, 0));
    const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    const double fx = x - x0, fy = y - y0;
    for (int c = 0; c < kChannels; ++c) {
        const double top = (1.0 - fx) * at(x0, y0, c) + fx * at(x1, y0, c);
        const double bot = (1.0 - fx) * at(x0, y1, c) + fx * at(x1, y1, c);
        out[c] = static_cast<float>((1.0 - fy) * top + fy * bot);
    }
    return true;
}

FeatureMap extract_features(const View& v) {
    const ImageRGBA& img = v.rgba;
    FeatureMap f;
    f.width = img.width;
    f.height = img.height;
    f.data.assign(static_cast<std::size_t>(img.width) * img.height * FeatureMap::kChannels, 0.0f);
    f.mask.assign(static_cast<std::size_t>(img.width) * img.height, 0);
    const ImageF lum = luminance(img);
    auto L = [&](int x, int y) {
        return lum.at(std::clamp(x, 0, img.width - 1), std::clamp(y, 0, img.height - 1));
    };
    const float norm = static_cast<float>(1.0 / (4.0 * std::sqrt(2.0)));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::uint8_t* px = img.at(x, y);
            if (px[3] == 0) continue;
            const std::size_t p = static_cast<std::size_t>(y) * img.width + x;
            f.mask[p] = 1;
            float* out = &f.data[p * FeatureMap::kChannels];
            for (int c = 0; c < 3; ++c) out[c] = px[c] / 255.0f;
            const float gx = (L(x + 1, y - 1) + 2 * L(x + 1, y) + L(x + 1, y + 1)) -
                             (L(x - 1, y - 1) + 2 * L(x - 1, y) + L(x - 1, y + 1));
            const float gy = (L(x - 1, y + 1) + 2 * L(x, y + 1) + L(x + 1, y + 1)) -
                             (L(x - 1, y - 1) + 2 * L(x, y - 1) + L(x + 1, y - 1));
            out[3] = std::sqrt(gx * gx + gy * gy) * norm;
        }
    }
    return f;
}

SourceViews make_source_views(const std::vector<View>& views, Exec exec) {
    SourceViews s;
    s.features.resize(views.size());
    for (const View& v : views) s.cameras.push_back(v.camera());
    for_each_index(exec, static_cast<int>(views.size()), [&](int i) { s.features[i] = extract_features(views[i]); });
    return s;
}

// ---- grids ----------------------------------------------------------------

Vec3 GridShape::center(int i, int j, int k) const {
    const double h = voxel();
    return Vec3(-0.5 + (i + 0.5) * h, -0.5 + (j + 0.5) * h, -0.5 + (k + 0.5) * h);
}

double CostVolume::mean_variance(std::size_t idx) const {
    double s = 0.0;
    for (float v : variance[idx]) s += v;
    return s / FeatureMap::kChannels;
}

CostVolume build_cost_volume(const std::vector<FeatureMap>& features, const std::vector<Camera>& cameras, int n,
                             Exec exec) {
    if (features.size() != cameras.size() || cameras.size() < 2) {
        throw RangeError("cost volume needs at least two views with features");
    }
    if (n < 2) throw RangeError("grid resolution must be at least 2");
    for (const Camera& c : cameras) {
        if (c.intrinsics.width_px != cameras[0].intrinsics.width_px ||
            c.intrinsics.height_px != cameras[0].intrinsics.height_px ||
            c.intrinsics.fov_y_deg != cameras[0].intrinsics.fov_y_deg) {
            throw RangeError("cost volume views must share intrinsics");
        }
    }
    CostVolume cv;
    cv.shape.n = n;
    cv.variance.resize(cv.shape.count());
    cv.visibility.assign(cv.shape.count(), 0);
    constexpr int C = FeatureMap::kChannels;
    const int m = static_cast<int>(cameras.size());

    for_each_index(exec, n, [&](int k) {
        std::vector<float> samples(static_cast<std::size_t>(m) * C);
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                const Vec3 p = cv.shape.center(i, j, k);
                int cnt = 0;
                for (int v = 0; v < m; ++v) {
                    const auto px = project(cameras[v].extrinsics, cameras[v].intrinsics, p);
                    if (!px) continue;
                    if (features[v].sample(px->x(), px->y(), &samples[static_cast<std::size_t>(cnt) * C])) ++cnt;
                }
                const std::size_t idx = cv.shape.index(i, j, k);
                cv.visibility[idx] = cnt;
                auto& var = cv.variance[idx];
                if (cnt < 2) {
                    var.fill(std::numeric_limits<float>::infinity());
                    continue;
                }
                for (int c = 0; c < C; ++c) {
                    double mean = 0.0;
                    for (int s = 0; s < cnt; ++s) mean += samples[static_cast<std::size_t>(s) * C + c];
                    mean /= cnt;
                    double ss = 0.0;
                    for (int s = 0; s < cnt; ++s) {
                        const double d = samples[static_cast<std::size_t>(s) * C + c] - mean;
                        ss += d * d;
                    }
                    var[c] = static_cast<float>(ss / cnt);
                }
            }
        }
    });
    return cv;
}

SdfGrid::SdfGrid(int n, double fill) : shape_{n}, values_(shape_.count(), fill) {
    if (n < 2) throw RangeError("grid resolution must be at least 2");
}

SdfGrid SdfGrid::from_function(int n, const std::function<double(const Vec3&)>& f) {
    SdfGrid g(n, 0.0);
    for (int k = 0; k < n; ++k) {
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) g.at(i, j, k) = f(g.shape_.center(i, j, k));
        }
    }
    return g;
}

namespace {

// Trilinear corner indices and weights on a cell-centered grid.
template <class Fn>
void trilinear(const GridShape& g, const Vec3& p, Fn&& visit) {
    const int n = g.n;
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        const double u = std::clamp((p[a] + 0.5) * n - 0.5, 0.0, n - 1.0);
        i0[a] = std::min(static_cast<int>(u), n - 2);
        f[a] = u - i0[a];
    }
    int c = 0;
    for (int dz = 0; dz < 2; ++dz) {
        const double wz = dz ? f[2] : 1.0 - f[2];
        for (int dy = 0; dy < 2; ++dy) {
            const double wy = dy ? f[1] : 1.0 - f[1];
            for (int dx = 0; dx < 2; ++dx) {
                const double wx = dx ? f[0] : 1.0 - f[0];
                visit(c++, g.index(i0[0] + dx, i0[1] + dy, i0[2] + dz), wx * wy * wz);
            }
        }
    }
}

}  // namespace

Stencil SdfGrid::stencil(const Vec3& p) const {
    Stencil s;
    trilinear(shape_, p, [&](int c, std::size_t idx, double w) {
        s.idx[c] = idx;
        s.w[c] = w;
    });
    return s;
}

double SdfGrid::sample(const Vec3& p) const {
    double v = 0.0;
    trilinear(shape_, p, [&](int, std::size_t idx, double w) { v += w * values_[idx]; });
    return v;
}

Vec3 SdfGrid::gradient(const Vec3& p) const {
    const double h = voxel();
    Vec3 g;
    for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Zero();
        e[a] = h;
        g[a] = (sample(p + e) - sample(p - e)) / (2.0 * h);
    }
    return g;
}

Rgb ColorVolume::sample(const Vec3& p) const {
    Rgb c = Rgb::Zero();
    trilinear(shape, p, [&](int, std::size_t idx, double w) {
        c += w * Rgb(rgb[idx][0], rgb[idx][1], rgb[idx][2]);
    });
    return c;
}

// ---- visual hull ----------------------------------------------------------

namespace {

// Felzenszwalb-Huttenlocher 1D squared distance transform. Cells without a
// seed hold kFar, which keeps the parabola arithmetic finite.
constexpr double kFar = 1e20;

void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + 1.0 * q * q) - (f[v[k]] + 1.0 * v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + 1.0 * q * q) - (f[v[k]] + 1.0 * v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

// Squared voxel distance to the nearest voxel where `seed` is true.
std::vector<double> distance_transform(const GridShape& g, const std::vector<char>& seed) {
    const int n = g.n;
    std::vector<double> dist(g.count());
    for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = seed[i] ? 0.0 : kFar;
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    for (int axis = 0; axis < 3; ++axis) {
        for (int b = 0; b < n; ++b) {
            for (int a = 0; a < n; ++a) {
                auto at = [&](int t) -> std::size_t {
                    if (axis == 0) return g.index(t, a, b);
                    if (axis == 1) return g.index(a, t, b);
                    return g.index(a, b, t);
                };
                for (int t = 0; t < n; ++t) f[t] = dist[at(t)];
                edt_1d(f, d, v, z);
                for (int t = 0; t < n; ++t) dist[at(t)] = d[t];
            }
        }
    }
    return dist;
}

}  // namespace

SdfGrid init_sdf(const CostVolume& cost, const std::vector<View>& views) {
    const GridShape& g = cost.shape;
    const int n = g.n;
    std::vector<Camera> cams;
    for (const View& v : views) cams.push_back(v.camera());
    std::vector<char> inside(g.count(), 0), outside(g.count(), 0);
    bool any_inside = false;
    for (int k = 0; k < n; ++k) {
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                const Vec3 p = g.center(i, j, k);
                bool seen = false, in = true;
                for (std::size_t v = 0; v < views.size() && in; ++v) {
                    const auto px = project(cams[v].extrinsics, cams[v].intrinsics, p);
                    int x, y;
                    if (!px || !nearest_pixel(cams[v].intrinsics, *px, x, y)) continue;
                    seen = true;
                    if (views[v].rgba.alpha(x, y) == 0) in = false;
                }
                const std::size_t idx = g.index(i, j, k);
                inside[idx] = seen && in;
                outside[idx] = !inside[idx];
                any_inside = any_inside || inside[idx];
            }
        }
    }
    if (!any_inside) throw EmptySceneError("visual hull is empty: no voxel lies inside every silhouette");

    const std::vector<double> d_to_inside = distance_transform(g, inside);
    const std::vector<double> d_to_outside = distance_transform(g, outside);
    SdfGrid sdf(n, 0.0);
    const double h = g.voxel();
    for (std::size_t idx = 0; idx < g.count(); ++idx) {
        if (inside[idx]) {
            // With no outside voxel at all the hull fills the domain; cap at its size.
            const double d = std::min(std::sqrt(d_to_outside[idx]), 2.0 * n);
            sdf.values()[idx] = -(d - 0.5) * h;
        } else {
            sdf.values()[idx] = (std::sqrt(d_to_inside[idx]) - 0.5) * h;
        }
    }
    return sdf;
}

// ---- color blending -------------------------------------------------------

namespace {

// True when the segment from p toward a camera enters another surface.
bool occluded(const SdfGrid& sdf, const Vec3& p, const Vec3& dir) {
    const auto seg = intersect_domain(Ray{p, dir});
    if (!seg) return false;
    const double h = sdf.voxel();
    for (double t = 2.0 * h; t < seg->second; t += 0.5 * h) {
        if (sdf.sample(p + t * dir) < 0.0) return true;
    }
    return false;
}

}  // namespace

std::optional<Rgb> blend_color(const Vec3& point, const Vec3& view_dir, const SourceViews& sources,
                               const float* query_feature, int exclude, const SdfGrid* occluder, const Vec3* normal,
                               const BlendOptions& opts) {
    constexpr int C = FeatureMap::kChannels;
    double logits[64];
    Rgb colors[64];
    std::vector<double> logits_heap;
    std::vector<Rgb> colors_heap;
    const int m = sources.size();
    double* lg = logits;
    Rgb* col = colors;
    if (m > 64) {
        logits_heap.resize(m);
        colors_heap.resize(m);
        lg = logits_heap.data();
        col = colors_heap.data();
    }
    int cnt = 0;
    for (int v = 0; v < m; ++v) {
        if (v == exclude) continue;
        const Camera& cam = sources.cameras[v];
        const Vec3 to_cam = cam.extrinsics.center() - point;
        const Vec3 src_dir = to_cam.normalized();
        if (normal && normal->dot(src_dir) <= 0.0) continue;
        const auto px = project(cam.extrinsics, cam.intrinsics, point);
        if (!px) continue;
        float f[C];
        if (!sources.features[v].sample(px->x(), px->y(), f)) continue;
        if (occluder && occluded(*occluder, point, src_dir)) continue;
        double logit = opts.gamma * view_dir.dot(src_dir);
        if (query_feature) {
            double d2 = 0.0;
            for (int c = 0; c < C; ++c) {
                const double d = static_cast<double>(f[c]) - query_feature[c];
                d2 += d * d;
            }
            logit -= d2 / opts.sigma_f;
        }
        lg[cnt] = logit;
        col[cnt] = Rgb(f[0], f[1], f[2]);
        ++cnt;
    }
    if (cnt == 0) return std::nullopt;
    const double mx = *std::max_element(lg, lg + cnt);
    double z = 0.0;
    for (int i = 0; i < cnt; ++i) {
        lg[i] = std::exp(lg[i] - mx);
        z += lg[i];
    }
    Rgb out = Rgb::Zero();
    for (int i = 0; i < cnt; ++i) out += (lg[i] / z) * col[i];
    return out;
}

// ---- rendering ------------------------------------------------------------

std::optional<std::pair<double, double>> intersect_domain(const Ray& ray) {
    double t0 = 0.0, t1 = kInf;
    for (int a = 0; a < 3; ++a) {
        const double o = ray.origin[a], d = ray.direction[a];
        if (std::abs(d) < 1e-15) {
            if (o < -0.5 || o > 0.5) return std::nullopt;
            continue;
        }
        double ta = (-0.5 - o) / d, tb = (0.5 - o) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (t1 <= t0) return std::nullopt;
    return std::make_pair(t0, t1);
}

namespace {

template <class ColorFn>
void render_into(const SdfGrid& grid, const Ray& ray, double s, const RenderOptions& opts, ColorFn&& color,
                 RenderSample& out) {
    out.t.clear();
    out.sdf.clear();
    out.alpha.clear();
    out.weight.clear();
    out.t_mid.clear();
    out.color.clear();
    out.rgb = Rgb::Zero();
    out.depth = 0.0;
    out.weight_sum = 0.0;
    const auto seg = intersect_domain(ray);
    out.hit_domain = seg.has_value();
    if (!seg) return;

    const int nu = std::max(opts.uniform_samples, 2);
    const int ni = std::max(opts.importance_samples, 0);
    const double t0 = seg->first, t1 = seg->second;
    std::vector<double> tu(nu), du(nu);
    for (int i = 0; i < nu; ++i) {
        tu[i] = t0 + i * (t1 - t0) / (nu - 1);
        du[i] = grid.sample(ray.at(tu[i]));
    }
    int k = -1;
    for (int i = 0; i + 1 < nu; ++i) {
        if (du[i] > 0.0 && du[i + 1] <= 0.0) {
            k = i;
            break;
        }
    }
    out.t.reserve(nu + ni);
    out.sdf.reserve(nu + ni);
    if (k < 0) {
        // No crossing: spread the extra samples over the whole segment. Tying
        // them to the smallest-|sdf| node would make the loss jump whenever
        // two nearly equal minima swap.
        std::vector<double> ts = tu;
        for (int j = 0; j < ni; ++j) ts.push_back(t0 + (j + 0.5) / ni * (t1 - t0));
        std::sort(ts.begin(), ts.end());
        for (double t : ts) {
            out.t.push_back(t);
            out.sdf.push_back(grid.sample(ray.at(t)));
        }
    } else {
        for (int i = 0; i <= k; ++i) {
            out.t.push_back(tu[i]);
            out.sdf.push_back(du[i]);
        }
        for (int j = 0; j < ni; ++j) {
            const double t = tu[k] + (j + 0.5) / ni * (tu[k + 1] - tu[k]);
            out.t.push_back(t);
            out.sdf.push_back(grid.sample(ray.at(t)));
        }
        for (int i = k + 1; i < nu; ++i) {
            out.t.push_back(tu[i]);
            out.sdf.push_back(du[i]);
        }
    }

    const int m = static_cast<int>(out.t.size()) - 1;
    out.alpha.resize(m);
    out.weight.resize(m);
    out.t_mid.resize(m);
    out.color.resize(m);
    double trans = 1.0, wt = 0.0;
    for (int i = 0; i < m; ++i) {
        const double lr = log_sigmoid(s * out.sdf[i + 1]) - log_sigmoid(s * out.sdf[i]);
        const double a = lr < 0.0 ? -std::expm1(lr) : 0.0;
        out.alpha[i] = a;
        out.weight[i] = a * trans;
        trans *= 1.0 - a;
        out.t_mid[i] = 0.5 * (out.t[i] + out.t[i + 1]);
        out.color[i] = color(ray.at(out.t_mid[i]), ray.direction);
        out.rgb += out.weight[i] * out.color[i];
        out.weight_sum += out.weight[i];
        wt += out.weight[i] * out.t_mid[i];
    }
    out.depth = wt / std::max(out.weight_sum, opts.weight_eps);
}

}  // namespace

RenderSample render_ray(const SdfGrid& sdf, const Ray& ray, double s, const RenderOptions& opts,
                        const std::function<Rgb(const Vec3& point, const Vec3& dir)>& color) {
    if (!(s > 0.0)) throw RangeError("sharpness must be positive");
    RenderSample out;
    render_into(sdf, ray, s, opts, color, out);
    return out;
}

RenderSample render_pixel(const SdfGrid& sdf, const SourceViews& sources, const Camera& query, int query_index,
                          const Vec2& pixel, double s, const RenderOptions& opts, const BlendOptions& blend) {
    const Ray ray = pixel_ray(query.extrinsics, query.intrinsics, pixel);
    float qf[FeatureMap::kChannels];
    const float* qptr = nullptr;
    if (query_index >= 0 && query_index < sources.size() &&
        sources.features[query_index].sample(pixel.x(), pixel.y(), qf)) {
        qptr = qf;
    }
    return render_ray(sdf, ray, s, opts, [&](const Vec3& p, const Vec3& dir) {
        return blend_color(p, -dir, sources, qptr, query_index, nullptr, nullptr, blend).value_or(Rgb::Ones());
    });
}

// ---- loss -----------------------------------------------------------------

PixelTarget pixel_target(const View& v, int x, int y) {
    PixelTarget t;
    const std::uint8_t* px = v.rgba.at(x, y);
    const double a = px[3] / 255.0;
    t.rgb = Rgb(px[0], px[1], px[2]) * (a / 255.0);
    if (v.has_depth()) t.depth = v.depth.at(x, y);
    return t;
}

namespace {

struct Regularizer {
    double eikonal = 0.0;
    double sparsity = 0.0;
};

// Eikonal and sparsity means; with `grad`, adds their weighted gradient.
Regularizer regularize(const SdfGrid& sdf, const std::vector<Vec3>& pts, double w_eik, double w_sp,
                       std::vector<double>* grad) {
    Regularizer r;
    if (pts.empty()) return r;
    const double h = sdf.voxel();
    const double inv_m = 1.0 / static_cast<double>(pts.size());
    const std::vector<double>& v = sdf.values();
    for (const Vec3& p : pts) {
        Stencil plus[3], minus[3];
        Vec3 g;
        for (int a = 0; a < 3; ++a) {
            Vec3 e = Vec3::Zero();
            e[a] = h;
            plus[a] = sdf.stencil(p + e);
            minus[a] = sdf.stencil(p - e);
            double vp = 0.0, vm = 0.0;
            for (int c = 0; c < 8; ++c) {
                vp += plus[a].w[c] * v[plus[a].idx[c]];
                vm += minus[a].w[c] * v[minus[a].idx[c]];
            }
            g[a] = (vp - vm) / (2.0 * h);
        }
        const double len = g.norm();
        r.eikonal += (len - 1.0) * (len - 1.0) * inv_m;
        const Stencil st = sdf.stencil(p);
        double d = 0.0;
        for (int c = 0; c < 8; ++c) d += st.w[c] * v[st.idx[c]];
        const double e = std::exp(-kSparsityTau * std::abs(d));
        r.sparsity += e * inv_m;
        if (!grad) continue;
        if (len > 0.0) {
            const double coef = w_eik * inv_m * 2.0 * (len - 1.0) / len / (2.0 * h);
            for (int a = 0; a < 3; ++a) {
                for (int c = 0; c < 8; ++c) {
                    (*grad)[plus[a].idx[c]] += coef * g[a] * plus[a].w[c];
                    (*grad)[minus[a].idx[c]] -= coef * g[a] * minus[a].w[c];
                }
            }
        }
        const double ds = -w_sp * inv_m * kSparsityTau * sign(d) * e;
        for (int c = 0; c < 8; ++c) (*grad)[st.idx[c]] += ds * st.w[c];
    }
    return r;
}

// Per-ray data terms before normalization by the ray counts.
struct RayTerms {
    double rgb = 0.0;    // (sum w) |rgb - gt|_1
    double depth = 0.0;  // |depth - gt|, 0 without gt depth
};

RayTerms ray_terms(const RenderSample& r, const PixelTarget& gt) {
    RayTerms t;
    t.rgb = r.weight_sum * (r.rgb - gt.rgb).cwiseAbs().sum();
    if (gt.depth > 0.0) t.depth = std::abs(r.depth - gt.depth);
    return t;
}

LossBreakdown compose(double l_rgb, double l_depth, const Regularizer& reg, const Lambdas& lambdas) {
    LossBreakdown b;
    b.l_rgb = l_rgb;
    b.l_depth = l_depth;
    b.l_eikonal = reg.eikonal;
    b.l_sparsity = reg.sparsity;
    b.lambdas = lambdas;
    b.total = b.l_rgb + lambdas.depth * b.l_depth + lambdas.eikonal * b.l_eikonal + lambdas.sparsity * b.l_sparsity;
    return b;
}

}  // namespace

LossBreakdown compute_loss(const std::vector<RenderSample>& rendered, const std::vector<PixelTarget>& targets,
                           const SdfGrid& sdf, const std::vector<Vec3>& sample_points, const Lambdas& lambdas,
                           bool use_depth) {
    if (rendered.size() != targets.size()) throw RangeError("rendered and target counts differ");
    double rgb = 0.0, depth = 0.0;
    int n_depth = 0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        const RayTerms t = ray_terms(rendered[i], targets[i]);
        rgb += t.rgb;
        if (use_depth && targets[i].depth > 0.0) {
            depth += t.depth;
            ++n_depth;
        }
    }
    const double l_rgb = rendered.empty() ? 0.0 : rgb / static_cast<double>(rendered.size());
    const double l_depth = n_depth ? depth / n_depth : 0.0;
    return compose(l_rgb, l_depth, regularize(sdf, sample_points, 0.0, 0.0, nullptr), lambdas);
}

LossGradient loss_and_gradient(const SdfGrid& sdf, double s, const RayBatch& batch,
                               const std::vector<ColorVolume>& color_volumes, const std::vector<Vec3>& sample_points,
                               const Lambdas& lambdas, bool use_depth, const RenderOptions& opts, Exec exec) {
    const int nr = static_cast<int>(batch.rays.size());
    if (batch.targets.size() != batch.rays.size() || batch.color_index.size() != batch.rays.size()) {
        throw RangeError("ray batch arrays differ in length");
    }
    int n_depth = 0;
    if (use_depth) {
        for (const PixelTarget& t : batch.targets) n_depth += t.depth > 0.0;
    }
    const double inv_p = nr ? 1.0 / nr : 0.0;
    const double inv_pd = n_depth ? 1.0 / n_depth : 0.0;

    struct PerRay {
        RayTerms terms;
        std::vector<std::pair<std::size_t, double>> contrib;
        double d_log_s = 0.0;
    };
    std::vector<PerRay> per(nr);

    for_each_index(exec, nr, [&](int r) {
        const ColorVolume& cv = color_volumes[batch.color_index[r]];
        RenderSample rs;
        render_into(sdf, batch.rays[r], s, opts, [&](const Vec3& p, const Vec3&) { return cv.sample(p); }, rs);
        PerRay& out = per[r];
        const PixelTarget& gt = batch.targets[r];
        out.terms = ray_terms(rs, gt);
        const int m = static_cast<int>(rs.alpha.size());
        if (m == 0) return;

        // dL/dw_i
        std::vector<double> g(m, 0.0);
        const Rgb diff = rs.rgb - gt.rgb;
        const Rgb sg(sign(diff[0]), sign(diff[1]), sign(diff[2]));
        const double abs_diff = diff.cwiseAbs().sum();
        const bool depth_on = use_depth && gt.depth > 0.0;
        const double dsign = depth_on ? sign(rs.depth - gt.depth) : 0.0;
        for (int i = 0; i < m; ++i) {
            g[i] = inv_p * (abs_diff + rs.weight_sum * sg.dot(rs.color[i]));
            if (depth_on) {
                const double dd = rs.weight_sum > opts.weight_eps ? (rs.t_mid[i] - rs.depth) / rs.weight_sum
                                                                  : rs.t_mid[i] / opts.weight_eps;
                g[i] += lambdas.depth * inv_pd * dsign * dd;
            }
        }
        // dL/dalpha_k = T_k (g_k - R_k), R_k = g_{k+1} a_{k+1} + (1 - a_{k+1}) R_{k+1}
        std::vector<double> d_sdf(m + 1, 0.0);
        double R = 0.0;
        for (int k = m - 1; k >= 0; --k) {
            const double a = rs.alpha[k];
            const double trans = a > 0.0 ? rs.weight[k] / a : 0.0;
            if (a > 0.0) {
                const double dl_da = trans * (g[k] - R);
                const double ratio = 1.0 - a;
                const double x0 = s * rs.sdf[k], x1 = s * rs.sdf[k + 1];
                const double q0 = sigmoid(-x0), q1 = sigmoid(-x1);
                d_sdf[k] += dl_da * s * ratio * q0;
                d_sdf[k + 1] -= dl_da * s * ratio * q1;
                out.d_log_s += dl_da * s * ratio * (q0 * rs.sdf[k] - q1 * rs.sdf[k + 1]);
            }
            R = g[k] * a + (1.0 - a) * R;
        }
        out.contrib.reserve(static_cast<std::size_t>(m + 1) * 8);
        for (int k = 0; k <= m; ++k) {
            if (d_sdf[k] == 0.0) continue;
            const Stencil st = sdf.stencil(batch.rays[r].at(rs.t[k]));
            for (int c = 0; c < 8; ++c) out.contrib.emplace_back(st.idx[c], d_sdf[k] * st.w[c]);
        }
    });

    LossGradient lg;
    lg.d_sdf.assign(sdf.shape().count(), 0.0);
    double rgb = 0.0, depth = 0.0;
    for (int r = 0; r < nr; ++r) {
        rgb += per[r].terms.rgb;
        if (use_depth && batch.targets[r].depth > 0.0) depth += per[r].terms.depth;
        for (const auto& [idx, v] : per[r].contrib) lg.d_sdf[idx] += v;
        lg.d_log_s += per[r].d_log_s;
    }
    const Regularizer reg = regularize(sdf, sample_points, lambdas.eikonal, lambdas.sparsity, &lg.d_sdf);
    lg.loss = compose(rgb * inv_p, depth * inv_pd, reg, lambdas);
    return lg;
}

// ---- fitting --------------------------------------------------------------

TrainingSet make_training_set(std::vector<View> views, const SdfGrid& init, double band, const BlendOptions& blend,
                              Exec exec) {
    TrainingSet ts;
    ts.sources = make_source_views(views, exec);
    ts.views = std::move(views);
    const GridShape& g = init.shape();
    const int n = g.n;
    const int m = ts.sources.size();
    ts.colors.resize(m);
    for (int t = 0; t < m; ++t) {
        ColorVolume& cv = ts.colors[t];
        cv.shape = g;
        cv.rgb.assign(g.count(), {0.0f, 0.0f, 0.0f});
        const Camera& cam = ts.sources.cameras[t];
        const Vec3 eye = cam.extrinsics.center();
        for_each_index(exec, n, [&](int k) {
            for (int j = 0; j < n; ++j) {
                for (int i = 0; i < n; ++i) {
                    const std::size_t idx = g.index(i, j, k);
                    if (std::abs(init.values()[idx]) >= band) continue;
                    const Vec3 p = g.center(i, j, k);
                    float qf[FeatureMap::kChannels];
                    const float* qptr = nullptr;
                    if (const auto px = project(cam.extrinsics, cam.intrinsics, p)) {
                        if (ts.sources.features[t].sample(px->x(), px->y(), qf)) qptr = qf;
                    }
                    const Vec3 view_dir = (eye - p).normalized();
                    if (const auto c = blend_color(p, view_dir, ts.sources, qptr, t, nullptr, nullptr, blend)) {
                        cv.rgb[idx] = {static_cast<float>((*c)[0]), static_cast<float>((*c)[1]),
                                       static_cast<float>((*c)[2])};
                    }
                }
            }
        });
    }
    return ts;
}

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

OptimizeResult optimize(const SdfGrid& init, const TrainingSet& data, const OptimizeConfig& cfg, Exec exec) {
    if (cfg.s_init <= 0.0) throw RangeError("s_init must be positive");
    if (data.views.empty() || data.colors.size() != data.views.size()) {
        throw RangeError("training set needs views with matching color volumes");
    }
    OptimizeResult res;
    res.grid = init;
    double log_s = std::log(cfg.s_init);
    std::vector<double> vel(init.shape().count(), 0.0);
    double vel_s = 0.0;
    std::mt19937_64 rng(cfg.seed);
    const int nv = static_cast<int>(data.views.size());
    RayBatch batch;
    std::vector<Vec3> pts;
    double initial = 0.0;
    const double warm_iters = cfg.warmup_fraction * cfg.iterations;

    for (int it = 0; it < cfg.iterations; ++it) {
        batch.rays.clear();
        batch.targets.clear();
        batch.color_index.clear();
        for (int r = 0; r < cfg.rays_per_batch; ++r) {
            const int v = static_cast<int>(rng() % static_cast<std::uint64_t>(nv));
            const View& view = data.views[v];
            const int x = static_cast<int>(rng() % static_cast<std::uint64_t>(view.rgba.width));
            const int y = static_cast<int>(rng() % static_cast<std::uint64_t>(view.rgba.height));
            const Camera& cam = data.sources.cameras[v];
            batch.rays.push_back(pixel_ray(cam.extrinsics, cam.intrinsics, Vec2(x, y)));
            batch.targets.push_back(pixel_target(view, x, y));
            batch.color_index.push_back(v);
        }
        pts.clear();
        for (int p = 0; p < cfg.regularizer_points; ++p) {
            const double x = uniform01(rng) - 0.5, y = uniform01(rng) - 0.5, z = uniform01(rng) - 0.5;
            pts.emplace_back(x, y, z);
        }
        Lambdas lam = cfg.lambdas;
        if (warm_iters > 0.0) lam.sparsity *= std::min(1.0, it / warm_iters);

        const LossGradient lg = loss_and_gradient(res.grid, std::exp(log_s), batch, data.colors, pts, lam,
                                                  cfg.use_depth, cfg.render, exec);
        res.trace.push_back(lg.loss);
        if (it == 0) initial = lg.loss.total;
        if (!std::isfinite(lg.loss.total) || (initial > 0.0 && lg.loss.total > cfg.divergence_factor * initial)) {
            throw DivergenceTrace("optimization diverged at iteration " + std::to_string(it) + " (loss " +
                                      std::to_string(lg.loss.total) + ", initial " + std::to_string(initial) + ")",
                                  res.trace);
        }
        std::vector<double>& val = res.grid.values();
        for (std::size_t i = 0; i < val.size(); ++i) {
            vel[i] = cfg.momentum * vel[i] - cfg.learning_rate * lg.d_sdf[i];
            val[i] += vel[i];
        }
        vel_s = cfg.momentum * vel_s - cfg.learning_rate_log_s * lg.d_log_s;
        log_s += vel_s;
    }
    res.s = std::exp(log_s);
    return res;
}

// ---- vertex colors --------------------------------------------------------

TriMesh vertex_colors(TriMesh mesh, const SourceViews& sources, const SdfGrid& sdf, const BlendOptions& opts,
                      Exec exec) {
    if (mesh.vertices.empty()) return mesh;
    const int nv = static_cast<int>(mesh.vertices.size());
    const std::vector<Vec3> normals = vertex_normals(mesh);
    std::vector<std::optional<Rgb>> col(nv);
    for_each_index(exec, nv, [&](int i) {
        Vec3 n = normals[i];
        if (n.squaredNorm() == 0.0) n = sdf.gradient(mesh.vertices[i]).normalized();
        col[i] = blend_color(mesh.vertices[i], n, sources, nullptr, -1, &sdf, &n, opts);
    });

    // Breadth-first flood from colored vertices over mesh edges.
    std::vector<std::vector<int>> adj(nv);
    for (const auto& t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            adj[t[k]].push_back(t[(k + 1) % 3]);
            adj[t[(k + 1) % 3]].push_back(t[k]);
        }
    }
    std::deque<int> queue;
    for (int i = 0; i < nv; ++i) {
        if (col[i]) queue.push_back(i);
    }
    while (!queue.empty()) {
        const int v = queue.front();
        queue.pop_front();
        for (int u : adj[v]) {
            if (!col[u]) {
                col[u] = col[v];
                queue.push_back(u);
            }
        }
    }
    mesh.colors.resize(nv);
    for (int i = 0; i < nv; ++i) mesh.colors[i] = col[i].value_or(Rgb::Constant(0.5));
    return mesh;
}

}  // namespace mvr
