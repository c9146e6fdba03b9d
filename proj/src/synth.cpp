#include "mvr/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "mvr/errors.hpp"

namespace mvr {

namespace {

constexpr double kFar = 1e9;

double prim_bound(const Primitive& prim) {
    return std::visit(
        [](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, Sphere>) {
                return p.center.norm() + p.radius;
            } else if constexpr (std::is_same_v<T, Box>) {
                return p.center.norm() + p.half_extents.norm();
            } else if constexpr (std::is_same_v<T, Cylinder>) {
                return p.center.norm() + std::hypot(p.radius, p.half_height);
            } else {
                return p.center.norm() + p.major_radius + p.minor_radius;
            }
        },
        prim);
}

}  // namespace

double primitive_sdf(const Primitive& prim, const Vec3& x) {
    return std::visit(
        [&x](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, Sphere>) {
                return (x - p.center).norm() - p.radius;
            } else if constexpr (std::is_same_v<T, Box>) {
                const Vec3 q = (x - p.center).cwiseAbs() - p.half_extents;
                return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
            } else if constexpr (std::is_same_v<T, Cylinder>) {
                const Vec3 l = x - p.center;
                const double dr = std::hypot(l.x(), l.y()) - p.radius;
                const double dz = std::abs(l.z()) - p.half_height;
                return std::min(std::max(dr, dz), 0.0) + std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
            } else {
                const Vec3 l = x - p.center;
                const double qx = std::hypot(l.x(), l.y()) - p.major_radius;
                return std::hypot(qx, l.z()) - p.minor_radius;
            }
        },
        prim);
}

namespace {

// Lattice hash to [0, 1).
double lattice_value(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t channel) {
    std::uint64_t h = static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull ^
                      static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4Full ^
                      static_cast<std::uint64_t>(z) * 0x165667B19E3779F9ull ^ (channel + 1) * 0xD6E8FEB86659FD93ull;
    h ^= h >> 32;
    h *= 0xD6E8FEB86659FD93ull;
    h ^= h >> 32;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(const Vec3& p, std::uint64_t channel) {
    const Vec3 f = p.array().floor();
    const Vec3 t = p - f;
    const Vec3 s = t.array() * t.array() * (3.0 - 2.0 * t.array());
    const auto ix = static_cast<std::int64_t>(f.x()), iy = static_cast<std::int64_t>(f.y()),
               iz = static_cast<std::int64_t>(f.z());
    double acc = 0.0;
    for (int c = 0; c < 8; ++c) {
        const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        const double w = (dx ? s.x() : 1.0 - s.x()) * (dy ? s.y() : 1.0 - s.y()) * (dz ? s.z() : 1.0 - s.z());
        acc += w * lattice_value(ix + dx, iy + dy, iz + dz, channel);
    }
    return acc;
}

}  // namespace

Rgb painted_albedo(const Rgb& base, double freq, const Vec3& p) {
    Rgb out;
    for (int c = 0; c < 3; ++c) {
        const double n = 0.65 * value_noise(freq * p, c) + 0.35 * value_noise(2.3 * freq * p, c + 3);
        out[c] = base[c] * std::clamp(1.6 * n - 0.3, 0.05, 1.0);
    }
    return out;
}

ProceduralShape& ProceduralShape::add(const Primitive& prim, const Rgb& albedo, CombineOp op, double smooth_k,
                                      double texture_freq) {
    if (op == CombineOp::SmoothUnion && !(smooth_k > 0.0)) throw RangeError("smooth union needs k > 0");
    if (texture_freq < 0.0) throw RangeError("texture frequency must be non-negative");
    if (terms_.empty()) op = CombineOp::Union;
    terms_.push_back({prim, albedo, op, smooth_k, texture_freq});
    if (op != CombineOp::Subtract) bound_ = std::max(bound_, prim_bound(prim) + smooth_k);
    return *this;
}

SdfSample ProceduralShape::eval(const Vec3& p) const {
    if (terms_.empty()) return {kFar, Rgb::Zero()};
    auto albedo = [&p](const Term& t) {
        return t.texture_freq > 0.0 ? painted_albedo(t.albedo, t.texture_freq, p) : t.albedo;
    };
    SdfSample acc{primitive_sdf(terms_[0].primitive, p), albedo(terms_[0])};
    for (std::size_t i = 1; i < terms_.size(); ++i) {
        const Term& t = terms_[i];
        const double d = primitive_sdf(t.primitive, p);
        switch (t.op) {
            case CombineOp::Union:
                if (d < acc.distance) acc = {d, albedo(t)};
                break;
            case CombineOp::SmoothUnion: {
                // Polynomial smooth minimum; h -> 1 selects the new term.
                const double h = std::clamp(0.5 + 0.5 * (acc.distance - d) / t.smooth_k, 0.0, 1.0);
                const double dist = d * h + acc.distance * (1.0 - h) - t.smooth_k * h * (1.0 - h);
                acc = {dist, albedo(t) * h + acc.albedo * (1.0 - h)};
                break;
            }
            case CombineOp::Subtract:
                acc.distance = std::max(acc.distance, -d);
                break;
        }
    }
    return acc;
}

double sdf_eval(const ProceduralShape& shape, const Vec3& p) { return shape.eval(p).distance; }

bool fits_unit_cube(const ProceduralShape& shape, int n) {
    if (shape.empty()) return true;
    for (int face = 0; face < 6; ++face) {
        const int axis = face / 2;
        const double fixed = (face % 2 == 0) ? -0.5 : 0.5;
        for (int i = 0; i <= n; ++i) {
            for (int j = 0; j <= n; ++j) {
                Vec3 p;
                p[axis] = fixed;
                p[(axis + 1) % 3] = -0.5 + static_cast<double>(i) / n;
                p[(axis + 2) % 3] = -0.5 + static_cast<double>(j) / n;
                if (sdf_eval(shape, p) <= 0.0) return false;
            }
        }
    }
    return true;
}

namespace {

Rgb read_rgb(std::istringstream& ss, const std::string& where) {
    Rgb c;
    if (!(ss >> c[0] >> c[1] >> c[2])) throw IoError(where + ": expected albedo r g b");
    if ((c.array() < 0.0).any() || (c.array() > 1.0).any()) throw IoError(where + ": albedo outside [0,1]");
    return c;
}

}  // namespace

ProceduralShape parse_scene(const std::string& text) {
    ProceduralShape shape;
    std::istringstream in(text);
    std::string line;
    CombineOp pending = CombineOp::Union;
    double pending_k = 0.0;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ss(line);
        std::string kw;
        if (!(ss >> kw)) continue;
        const std::string where = "scene line " + std::to_string(lineno);
        if (kw == "op") {
            std::string op;
            if (!(ss >> op)) throw IoError(where + ": missing operator");
            if (op == "union") {
                pending = CombineOp::Union;
            } else if (op == "subtract") {
                pending = CombineOp::Subtract;
            } else if (op.rfind("sunion:", 0) == 0) {
                pending = CombineOp::SmoothUnion;
                try {
                    pending_k = std::stod(op.substr(7));
                } catch (const std::exception&) {
                    throw IoError(where + ": bad smooth-union radius");
                }
                if (!(pending_k > 0.0)) throw IoError(where + ": smooth-union radius must be positive");
            } else {
                throw IoError(where + ": unknown operator '" + op + "'");
            }
            continue;
        }
        Primitive prim;
        if (kw == "sphere") {
            Sphere s;
            if (!(ss >> s.center[0] >> s.center[1] >> s.center[2] >> s.radius) || s.radius <= 0.0)
                throw IoError(where + ": bad sphere");
            prim = s;
        } else if (kw == "box") {
            Box b;
            if (!(ss >> b.center[0] >> b.center[1] >> b.center[2] >> b.half_extents[0] >> b.half_extents[1] >>
                  b.half_extents[2]) ||
                (b.half_extents.array() <= 0.0).any())
                throw IoError(where + ": bad box");
            prim = b;
        } else if (kw == "cylinder") {
            Cylinder c;
            if (!(ss >> c.center[0] >> c.center[1] >> c.center[2] >> c.radius >> c.half_height) || c.radius <= 0.0 ||
                c.half_height <= 0.0)
                throw IoError(where + ": bad cylinder");
            prim = c;
        } else if (kw == "torus") {
            Torus t;
            if (!(ss >> t.center[0] >> t.center[1] >> t.center[2] >> t.major_radius >> t.minor_radius) ||
                t.minor_radius <= 0.0 || t.major_radius <= t.minor_radius)
                throw IoError(where + ": bad torus");
            prim = t;
        } else {
            throw IoError(where + ": unknown keyword '" + kw + "'");
        }
        const Rgb rgb = read_rgb(ss, where);
        double freq = 0.0;
        std::string extra;
        if (ss >> extra) {
            if (extra != "noise" || !(ss >> freq) || !(freq > 0.0)) throw IoError(where + ": expected 'noise <freq>'");
            if (ss >> extra) throw IoError(where + ": trailing tokens");
        }
        shape.add(prim, rgb, pending, pending == CombineOp::SmoothUnion ? pending_k : 0.0, freq);
        pending = CombineOp::Union;
        pending_k = 0.0;
    }
    if (!fits_unit_cube(shape)) throw RangeError("scene does not fit inside [-0.5, 0.5]^3");
    return shape;
}

ProceduralShape load_scene(const std::string& path) {
    if (is_builtin_scene(path)) return builtin_scene(path);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scene " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_scene(buf.str());
}

std::vector<std::string> builtin_scene_names() { return {"sphere", "sphere_box", "torus", "snowman", "hemispheres"}; }

bool is_builtin_scene(const std::string& name) {
    const auto names = builtin_scene_names();
    return std::find(names.begin(), names.end(), name) != names.end();
}

ProceduralShape builtin_scene(const std::string& name) {
    if (name == "sphere") {
        return parse_scene("sphere 0 0 0 0.4  0.85 0.35 0.25\n");
    }
    // The three reconstruction-suite shapes carry a painted noise texture so
    // that nearby views have something to match.
    if (name == "sphere_box") {
        return parse_scene(
            "box 0 0 -0.1  0.25 0.25 0.15  0.75 0.85 1.0 noise 14\n"
            "sphere 0 0 0.1 0.25  1.0 0.85 0.7 noise 14\n");
    }
    if (name == "torus") {
        return parse_scene("torus 0 0 0  0.3 0.12  0.8 1.0 0.85 noise 14\n");
    }
    if (name == "snowman") {
        return parse_scene(
            "sphere 0 0 -0.15 0.25  0.95 0.95 1.0 noise 14\n"
            "op sunion:0.05\n"
            "sphere 0 0 0.2 0.17  1.0 0.75 0.75 noise 14\n");
    }
    // Red lower half unioned with a full blue sphere: below the equator the
    // two distances tie and the union keeps the earlier (red) term.
    if (name == "hemispheres") {
        return parse_scene(
            "sphere 0 0 0 0.4  0.9 0.1 0.1\n"
            "op subtract\n"
            "box 0 0 0.3  0.5 0.5 0.3  1 1 1\n"
            "sphere 0 0 0 0.4  0.1 0.1 0.9\n");
    }
    throw ConfigError("unknown built-in scene '" + name + "'");
}

Vec3 sdf_normal(const ProceduralShape& shape, const Vec3& p, double h) {
    Vec3 g;
    for (int k = 0; k < 3; ++k) {
        Vec3 e = Vec3::Zero();
        e[k] = h;
        g[k] = sdf_eval(shape, p + e) - sdf_eval(shape, p - e);
    }
    const double n = g.norm();
    return n > 0.0 ? Vec3(g / n) : Vec3::UnitZ();
}

std::optional<Hit> raymarch(const ProceduralShape& shape, const Ray& ray, double t_max, const RaymarchOptions& opts) {
    if (shape.empty()) return std::nullopt;
    // Start at the bounding sphere; rays that miss it cannot hit.
    const double r = shape.bounding_radius() + 1e-3;
    const double b = ray.origin.dot(ray.direction);
    const double c = ray.origin.squaredNorm() - r * r;
    double t = 0.0;
    double t_exit = t_max;
    if (c > 0.0) {
        const double disc = b * b - c;
        if (disc < 0.0 || b > 0.0) return std::nullopt;
        t = -b - std::sqrt(disc);
        t_exit = std::min(t_max, -b + std::sqrt(disc));
    }
    for (int step = 0; step < opts.max_steps; ++step) {
        const Vec3 p = ray.at(t);
        const SdfSample s = shape.eval(p);
        if (s.distance < opts.surface_tol) {
            return Hit{t, p, sdf_normal(shape, p, opts.normal_h), s.albedo};
        }
        t += s.distance;
        if (t > t_exit) return std::nullopt;
    }
    return std::nullopt;
}

View render_view(const ProceduralShape& shape, const SphericalPose& pose, const Intrinsics& intr, Exec exec) {
    const Extrinsics ext = pose_from_spherical(pose);
    ImageRGBA img(intr.width_px, intr.height_px);
    ImageF depth(intr.width_px, intr.height_px, 0.0f);
    const double t_max = pose.radius() + 2.0;
    const int h = intr.height_px;
    const int w = intr.width_px;

    auto shade_row = [&](int y) {
        for (int x = 0; x < w; ++x) {
            const Ray ray = pixel_ray(ext, intr, Vec2(x, y));
            const auto hit = raymarch(shape, ray, t_max);
            if (!hit) continue;
            const double lambert = std::max(0.0, hit->normal.dot(-ray.direction));
            const Rgb rgb = hit->albedo * (0.3 + 0.7 * lambert);
            std::uint8_t* px = img.at(x, y);
            for (int c = 0; c < 3; ++c) {
                px[c] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[c], 0.0, 1.0) * 255.0));
            }
            px[3] = 255;
            depth.at(x, y) = static_cast<float>(hit->depth);
        }
    };

    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 4)
        for (int y = 0; y < h; ++y) shade_row(y);
    } else {
        for (int y = 0; y < h; ++y) shade_row(y);
    }
    return View(std::move(img), std::move(depth), pose, intr);
}

std::vector<View> predict_views(const ProceduralShape& shape, const SphericalPose& input_pose,
                                const std::vector<RelativeSpherical>& deltas, const NoiseModel& noise,
                                const Intrinsics& intr, Exec exec) {
    if (noise.color_jitter_sigma < 0.0 || noise.pose_jitter_sigma_deg < 0.0) {
        throw RangeError("noise sigmas must be non-negative");
    }
    std::vector<SphericalPose> nominal;
    nominal.reserve(deltas.size());
    for (const auto& d : deltas) nominal.push_back(apply_relative(input_pose, d));

    std::vector<View> views;
    views.reserve(deltas.size());
    for (std::size_t i = 0; i < nominal.size(); ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(noise.seed), static_cast<std::uint32_t>(noise.seed >> 32),
                          static_cast<std::uint32_t>(i)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> gauss(0.0, 1.0);

        SphericalPose actual = nominal[i];
        if (noise.pose_jitter_sigma_deg > 0.0) {
            // Move the viewing direction by a Gaussian angle along a uniformly
            // random tangent direction on the viewing sphere.
            const double angle = deg_to_rad(noise.pose_jitter_sigma_deg * gauss(rng));
            const double heading = 2.0 * kPi * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            const Vec3 dir = nominal[i].center().normalized();
            Vec3 east = Vec3::UnitZ().cross(dir);
            if (east.norm() < 1e-9) east = Vec3::UnitY();
            east.normalize();
            const Vec3 north = dir.cross(east);
            const Vec3 tangent = std::cos(heading) * east + std::sin(heading) * north;
            const Vec3 moved = std::cos(angle) * dir + std::sin(angle) * tangent;
            const double elev = rad_to_deg(std::asin(std::clamp(moved.z(), -1.0, 1.0)));
            const double azim = rad_to_deg(std::atan2(moved.y(), moved.x()));
            actual = SphericalPose(std::clamp(elev, -90.0, 90.0), azim, nominal[i].radius());
        }
        View v = render_view(shape, actual, intr, exec);
        if (noise.color_jitter_sigma > 0.0) {
            std::array<int, 3> offset{};
            for (int c = 0; c < 3; ++c) offset[c] = static_cast<int>(std::lround(255.0 * noise.color_jitter_sigma * gauss(rng)));
            for (std::size_t p = 0; p < v.rgba.data.size(); p += 4) {
                if (v.rgba.data[p + 3] == 0) continue;
                for (int c = 0; c < 3; ++c) {
                    v.rgba.data[p + c] = static_cast<std::uint8_t>(std::clamp(v.rgba.data[p + c] + offset[c], 0, 255));
                }
            }
        }
        v.pose = nominal[i];
        views.push_back(std::move(v));
    }
    return views;
}

}  // namespace mvr
