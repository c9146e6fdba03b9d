#include "mvr/elevation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include <Eigen/Dense>

#include "mvr/errors.hpp"

namespace mvr {

namespace {

struct Corner {
    int x;
    int y;
    float response;
};

ImageF sobel_x(const ImageF& g) {
    ImageF out(g.width, g.height);
    for (int y = 0; y < g.height; ++y) {
        const int ym = std::max(y - 1, 0), yp = std::min(y + 1, g.height - 1);
        for (int x = 0; x < g.width; ++x) {
            const int xm = std::max(x - 1, 0), xp = std::min(x + 1, g.width - 1);
            out.at(x, y) = (g.at(xp, ym) + 2.0f * g.at(xp, y) + g.at(xp, yp)) -
                           (g.at(xm, ym) + 2.0f * g.at(xm, y) + g.at(xm, yp));
        }
    }
    return out;
}

ImageF sobel_y(const ImageF& g) {
    ImageF out(g.width, g.height);
    for (int y = 0; y < g.height; ++y) {
        const int ym = std::max(y - 1, 0), yp = std::min(y + 1, g.height - 1);
        for (int x = 0; x < g.width; ++x) {
            const int xm = std::max(x - 1, 0), xp = std::min(x + 1, g.width - 1);
            out.at(x, y) = (g.at(xm, yp) + 2.0f * g.at(x, yp) + g.at(xp, yp)) -
                           (g.at(xm, ym) + 2.0f * g.at(x, ym) + g.at(xp, ym));
        }
    }
    return out;
}

bool patch_opaque(const ImageRGBA& img, int cx, int cy, int r) {
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (img.alpha(cx + dx, cy + dy) == 0) return false;
    return true;
}

// Shi-Tomasi minimum-eigenvalue corners, greedy non-max suppression.
std::vector<Corner> detect_corners(const ImageF& gray, const ImageRGBA& rgba, const MatchOptions& opts) {
    const int w = gray.width, h = gray.height;
    const ImageF gx = sobel_x(gray);
    const ImageF gy = sobel_y(gray);
    constexpr int kWin = 2;
    const int margin = opts.patch_radius + 2;

    ImageF resp(w, h, 0.0f);
    for (int y = margin; y < h - margin; ++y) {
        for (int x = margin; x < w - margin; ++x) {
            if (rgba.alpha(x, y) == 0) continue;
            if (opts.foreground_patches_only && !patch_opaque(rgba, x, y, opts.patch_radius)) continue;
            double sxx = 0, syy = 0, sxy = 0;
            for (int dy = -kWin; dy <= kWin; ++dy) {
                for (int dx = -kWin; dx <= kWin; ++dx) {
                    const double ix = gx.at(x + dx, y + dy), iy = gy.at(x + dx, y + dy);
                    sxx += ix * ix;
                    syy += iy * iy;
                    sxy += ix * iy;
                }
            }
            const double half_tr = 0.5 * (sxx + syy);
            const double diff = 0.5 * (sxx - syy);
            resp.at(x, y) = static_cast<float>(half_tr - std::sqrt(diff * diff + sxy * sxy));
        }
    }

    std::vector<Corner> cands;
    float max_resp = 0.0f;
    for (int y = margin; y < h - margin; ++y) {
        for (int x = margin; x < w - margin; ++x) {
            const float r = resp.at(x, y);
            if (r <= 0.0f) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    if ((dx || dy) && resp.at(x + dx, y + dy) > r) {
                        is_max = false;
                        break;
                    }
            if (!is_max) continue;
            cands.push_back({x, y, r});
            max_resp = std::max(max_resp, r);
        }
    }
    const float threshold = static_cast<float>(opts.min_response_ratio) * max_resp;
    std::erase_if(cands, [threshold](const Corner& c) { return c.response < threshold; });
    std::sort(cands.begin(), cands.end(), [](const Corner& a, const Corner& b) {
        if (a.response != b.response) return a.response > b.response;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });

    const int nms = 2 * opts.patch_radius;
    std::vector<Corner> kept;
    for (const Corner& c : cands) {
        if (static_cast<int>(kept.size()) >= opts.max_matches) break;
        const bool clash = std::any_of(kept.begin(), kept.end(), [&](const Corner& k) {
            return std::abs(k.x - c.x) <= nms && std::abs(k.y - c.y) <= nms;
        });
        if (!clash) kept.push_back(c);
    }
    return kept;
}

using ColorPlanes = std::array<ImageF, 3>;

ColorPlanes color_planes(const ImageRGBA& img) {
    ColorPlanes planes{ImageF(img.width, img.height), ImageF(img.width, img.height), ImageF(img.width, img.height)};
    for (std::size_t p = 0; p < planes[0].data.size(); ++p) {
        const float alpha = img.data[p * 4 + 3] / 255.0f;
        for (int c = 0; c < 3; ++c) planes[c].data[p] = alpha * img.data[p * 4 + c] / 255.0f;
    }
    return planes;
}

// Color patch with the common mean removed, scaled to unit norm; empty when
// the patch is flat. Keeping a single mean preserves hue differences, which
// separate corners whose luminance patterns coincide.
// A nonzero `angle_deg` samples the patch rotated about its center.
std::vector<float> normalized_patch(const ColorPlanes& planes, int cx, int cy, int r, double angle_deg = 0.0) {
    std::vector<float> p;
    p.reserve(3 * (2 * r + 1) * (2 * r + 1));
    double mean = 0.0;
    const double cs = std::cos(deg_to_rad(angle_deg)), sn = std::sin(deg_to_rad(angle_deg));
    for (const ImageF& g : planes)
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                if (angle_deg == 0.0) {
                    p.push_back(g.at(cx + dx, cy + dy));
                } else {
                    p.push_back(sample_bilinear(g, cx + cs * dx - sn * dy, cy + sn * dx + cs * dy));
                }
                mean += p.back();
            }
    mean /= static_cast<double>(p.size());
    double ss = 0.0;
    for (float& v : p) {
        v = static_cast<float>(v - mean);
        ss += static_cast<double>(v) * v;
    }
    if (ss < 1e-10) return {};
    const float inv = static_cast<float>(1.0 / std::sqrt(ss));
    for (float& v : p) v *= inv;
    return p;
}


// Affine Lucas-Kanade with gain/bias compensation. The template is the
// axis-aligned patch of a around (ax, ay); b is sampled at start + A d for
// template offset d, with A starting as a rotation by `angle_deg`. Returns
// the refined position in b, or nothing when the refinement wanders off.
std::optional<Vec2> refine_subpixel(const ImageF& ga, const ImageF& gb, const ImageF& gbx, const ImageF& gby, int ax, int ay,
                     Vec2 start, int r, double angle_deg) {
    const int n = (2 * r + 1) * (2 * r + 1);
    std::vector<double> tmpl;
    tmpl.reserve(n);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) tmpl.push_back(ga.at(ax + dx, ay + dy));

    const double th = deg_to_rad(angle_deg);
    Eigen::Matrix2d A;
    A << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    Vec2 p = start;
    std::vector<double> bv(n), bxv(n), byv(n);
    using Vec6 = Eigen::Matrix<double, 6, 1>;
    for (int iter = 0; iter < 20; ++iter) {
        int k = 0;
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx, ++k) {
                const Vec2 q = p + A * Vec2(dx, dy);
                bv[k] = sample_bilinear(gb, q.x(), q.y());
                bxv[k] = sample_bilinear(gbx, q.x(), q.y());
                byv[k] = sample_bilinear(gby, q.x(), q.y());
            }
        // Least-squares gain/bias mapping b onto the template.
        double mb = 0, mt = 0;
        for (int i = 0; i < n; ++i) {
            mb += bv[i];
            mt += tmpl[i];
        }
        mb /= n;
        mt /= n;
        double cov = 0, var = 0;
        for (int i = 0; i < n; ++i) {
            cov += (bv[i] - mb) * (tmpl[i] - mt);
            var += (bv[i] - mb) * (bv[i] - mb);
        }
        if (var < 1e-12) return std::nullopt;
        const double gain = cov / var;
        Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
        Vec6 jtr = Vec6::Zero();
        k = 0;
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx, ++k) {
                const double res = gain * (bv[k] - mb) - (tmpl[k] - mt);
                const double gx = gain * bxv[k], gy = gain * byv[k];
                Vec6 j;
                j << gx, gy, gx * dx, gx * dy, gy * dx, gy * dy;
                jtj += j * j.transpose();
                jtr += j * res;
            }
        const Eigen::LDLT<Eigen::Matrix<double, 6, 6>> ldlt(jtj);
        if (ldlt.info() != Eigen::Success || std::abs(jtj.determinant()) < 1e-30) return std::nullopt;
        const Vec6 step = -ldlt.solve(jtr);
        if (!step.allFinite()) return std::nullopt;
        p += step.head<2>();
        A(0, 0) += step[2];
        A(0, 1) += step[3];
        A(1, 0) += step[4];
        A(1, 1) += step[5];
        if ((p - start).cwiseAbs().maxCoeff() > 1.5) return std::nullopt;
        const double det = A.determinant();
        if (det < 0.5 || det > 2.0) return std::nullopt;
        if (step.head<2>().norm() < 1e-4 && step.tail<4>().norm() < 1e-5) break;
    }
    return p;
}

ImageF central_dx(const ImageF& g) {
    ImageF d(g.width, g.height);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            d.at(x, y) = 0.5f * (g.at(std::min(x + 1, g.width - 1), y) - g.at(std::max(x - 1, 0), y));
    return d;
}

ImageF central_dy(const ImageF& g) {
    ImageF d(g.width, g.height);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            d.at(x, y) = 0.5f * (g.at(x, std::min(y + 1, g.height - 1)) - g.at(x, std::max(y - 1, 0)));
    return d;
}

// 2x2 box downsample; a pixel stays foreground only if all four sources are.
ImageRGBA half_size(const ImageRGBA& img) {
    ImageRGBA out(img.width / 2, img.height / 2);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const std::uint8_t* q[4] = {img.at(2 * x, 2 * y), img.at(2 * x + 1, 2 * y), img.at(2 * x, 2 * y + 1),
                                        img.at(2 * x + 1, 2 * y + 1)};
            std::uint8_t* o = out.at(x, y);
            for (int c = 0; c < 3; ++c) o[c] = static_cast<std::uint8_t>((q[0][c] + q[1][c] + q[2][c] + q[3][c] + 2) / 4);
            o[3] = std::min({q[0][3], q[1][3], q[2][3], q[3][3]});
        }
    return out;
}

// Dense ZNCC search of a normalized template over a window. Patch norms of
// the searched image are precomputed once per image.
class ZnccSearch {
public:
    struct Result {
        int x;
        int y;
        double score;
        double runner_up;  // best score at least `r` pixels away from the peak
        double angle_deg = 0.0;  // template rotation that produced the peak
    };

    ZnccSearch(const ColorPlanes& planes, const ImageRGBA& rgba, int r) : planes_(planes), r_(r) {
        const int w = rgba.width, h = rgba.height;
        inv_norm_ = ImageF(w, h, 0.0f);
        const int n = 3 * (2 * r + 1) * (2 * r + 1);
        for (int y = r; y < h - r; ++y)
            for (int x = r; x < w - r; ++x) {
                if (rgba.alpha(x, y) == 0) continue;
                double s = 0, s2 = 0;
                for (const ImageF& g : planes)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const double v = g.at(x + dx, y + dy);
                            s += v;
                            s2 += v * v;
                        }
                const double var = s2 - s * s / n;
                if (var > 1e-10) inv_norm_.at(x, y) = static_cast<float>(1.0 / std::sqrt(var));
            }
    }

    std::optional<Result> best(const std::vector<float>& tmpl, int cx, int cy, int radius) const {
        std::optional<Result> out;
        const int side = 2 * r_ + 1;
        const int w = inv_norm_.width, h = inv_norm_.height;
        const int x0 = std::max(cx - radius, r_), x1 = std::min(cx + radius, w - 1 - r_);
        const int y0 = std::max(cy - radius, r_), y1 = std::min(cy + radius, h - 1 - r_);
        if (x0 > x1 || y0 > y1) return out;
        const int sw = x1 - x0 + 1;
        std::vector<float> scores(static_cast<std::size_t>(sw) * (y1 - y0 + 1), -2.0f);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const float inv = inv_norm_.at(x, y);
                if (inv == 0.0f) continue;
                // The template is zero-mean, so the patch mean drops out.
                float acc = 0.0f;
                for (int c = 0; c < 3; ++c) {
                    const ImageF& g = planes_[c];
                    for (int dy = 0; dy < side; ++dy) {
                        const float* row = &g.data[static_cast<std::size_t>(y - r_ + dy) * w + (x - r_)];
                        const float* t = &tmpl[static_cast<std::size_t>(c * side + dy) * side];
                        for (int dx = 0; dx < side; ++dx) acc += t[dx] * row[dx];
                    }
                }
                const double score = static_cast<double>(acc) * inv;
                scores[static_cast<std::size_t>(y - y0) * sw + (x - x0)] = static_cast<float>(score);
                if (!out || score > out->score) out = Result{x, y, score, -1.0};
            }
        if (!out) return out;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                if (std::abs(x - out->x) <= r_ && std::abs(y - out->y) <= r_) continue;
                out->runner_up = std::max(out->runner_up, double(scores[static_cast<std::size_t>(y - y0) * sw + (x - x0)]));
            }
        return out;
    }

private:
    const ColorPlanes& planes_;
    int r_;
    ImageF inv_norm_;
};

}  // namespace

namespace {

/// Median displacement of the k matches nearest to `p` in image a.
std::optional<Vec2> local_flow(const std::vector<Vec2>& pts, const std::vector<Vec2>& disp, const Vec2& p, int k,
                               int skip = -1) {
    std::vector<std::pair<double, int>> near;
    near.reserve(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (static_cast<int>(i) == skip) continue;
        near.emplace_back((pts[i] - p).squaredNorm(), static_cast<int>(i));
    }
    if (near.size() < 3) return std::nullopt;
    const std::size_t n = std::min<std::size_t>(k, near.size());
    std::partial_sort(near.begin(), near.begin() + n, near.end());
    std::vector<double> dx(n), dy(n);
    for (std::size_t i = 0; i < n; ++i) {
        dx[i] = disp[near[i].second].x();
        dy[i] = disp[near[i].second].y();
    }
    std::nth_element(dx.begin(), dx.begin() + n / 2, dx.end());
    std::nth_element(dy.begin(), dy.begin() + n / 2, dy.end());
    return Vec2(dx[n / 2], dy[n / 2]);
}

}  // namespace

std::vector<Correspondence> match_patches(const View& a, const View& b, const MatchOptions& opts, int index_a,
                                          int index_b) {
    if (a.rgba.width != b.rgba.width || a.rgba.height != b.rgba.height) {
        throw RangeError("match_patches: images differ in resolution");
    }
    const int r = opts.patch_radius;
    const ImageF ga = luminance(a.rgba);
    const ImageF gb = luminance(b.rgba);
    const std::vector<Corner> corners = detect_corners(ga, a.rgba, opts);
    const ColorPlanes ca = color_planes(a.rgba);
    const ColorPlanes cb = color_planes(b.rgba);
    const ZnccSearch search_b(cb, b.rgba, r);
    const ZnccSearch search_a(ca, a.rgba, r);
    const ImageF gbx = central_dx(gb);
    const ImageF gby = central_dy(gb);

    // Forward search around (cx, cy) in b plus the mutual-best check back
    // into a. `angle` rotates the template to absorb in-plane rotation.
    auto match_one = [](const ColorPlanes& pa, const ColorPlanes& pb, const ZnccSearch& sa, const ZnccSearch& sb,
                        int ax, int ay, int cx, int cy, int radius, int pr, const std::vector<double>& angles,
                        double min_zncc, double min_unique) -> std::optional<ZnccSearch::Result> {
        std::optional<ZnccSearch::Result> fwd;
        double best_angle = 0.0;
        std::vector<ZnccSearch::Result> per_angle;
        for (double angle : angles) {
            const auto tmpl = normalized_patch(pa, ax, ay, pr, angle);
            if (tmpl.empty()) return std::nullopt;
            const auto res = sb.best(tmpl, cx, cy, radius);
            if (!res) continue;
            per_angle.push_back(*res);
            if (!fwd || res->score > fwd->score) {
                fwd = res;
                best_angle = angle;
            }
        }
        if (!fwd || fwd->score < min_zncc) return std::nullopt;
        double runner_up = -1.0;
        for (const auto& res : per_angle) {
            const bool same_peak = std::abs(res.x - fwd->x) <= pr && std::abs(res.y - fwd->y) <= pr;
            runner_up = std::max(runner_up, same_peak ? res.runner_up : res.score);
        }
        fwd->runner_up = runner_up;
        if (fwd->score - runner_up < min_unique) return std::nullopt;
        const auto back_tmpl = normalized_patch(pb, fwd->x, fwd->y, pr, -best_angle);
        if (back_tmpl.empty()) return std::nullopt;
        const auto back = sa.best(back_tmpl, ax + (fwd->x - cx), ay + (fwd->y - cy), radius);
        if (!back || std::abs(back->x - ax) > 1 || std::abs(back->y - ay) > 1) return std::nullopt;
        fwd->angle_deg = best_angle;
        return fwd;
    };

    // Pass 1 at half resolution with a wide context patch: a sparse set of
    // unambiguous seed displacements. Seeds that disagree with the median
    // displacement of their neighbors are dropped.
    const ImageRGBA ha = half_size(a.rgba), hb = half_size(b.rgba);
    const ColorPlanes hca = color_planes(ha), hcb = color_planes(hb);
    const int hr = opts.seed_patch_radius;
    const ZnccSearch hsearch_a(hca, ha, hr), hsearch_b(hcb, hb, hr);
    std::vector<Vec2> seed_pts, seed_disp;
    for (const Corner& c : corners) {
        const int hx = c.x / 2, hy = c.y / 2;
        if (hx < hr || hy < hr || hx >= ha.width - hr || hy >= ha.height - hr) continue;
        if (const auto m = match_one(hca, hcb, hsearch_a, hsearch_b, hx, hy, hx, hy, (opts.search_radius + 1) / 2, hr,
                                     opts.seed_angles_deg, opts.min_zncc, opts.min_uniqueness)) {
            seed_pts.emplace_back(c.x, c.y);
            seed_disp.emplace_back(2.0 * (m->x - hx), 2.0 * (m->y - hy));
        }
    }
    for (int round = 0; round < 2; ++round) {
        std::vector<Vec2> keep_pts, keep_disp;
        for (std::size_t i = 0; i < seed_pts.size(); ++i) {
            const auto flow = local_flow(seed_pts, seed_disp, seed_pts[i], opts.flow_neighbors, static_cast<int>(i));
            if (flow && (*flow - seed_disp[i]).norm() > opts.flow_tolerance_px) continue;
            keep_pts.push_back(seed_pts[i]);
            keep_disp.push_back(seed_disp[i]);
        }
        seed_pts.swap(keep_pts);
        seed_disp.swap(keep_disp);
    }

    // Pass 2: every corner searched in a small window around the local flow.
    std::vector<Correspondence> out;
    for (std::size_t i = 0; i < corners.size(); ++i) {
        const Corner& c = corners[i];
        const auto flow = local_flow(seed_pts, seed_disp, Vec2(c.x, c.y), opts.flow_neighbors);
        if (!flow) continue;
        const int px = c.x + static_cast<int>(std::lround(flow->x()));
        const int py = c.y + static_cast<int>(std::lround(flow->y()));
        const int radius = static_cast<int>(std::ceil(opts.flow_tolerance_px));
        const auto fwd =
            match_one(ca, cb, search_a, search_b, c.x, c.y, px, py, radius, r, opts.seed_angles_deg, opts.min_zncc, 0.0);
        if (!fwd) continue;

        Correspondence m;
        m.view_a = index_a;
        m.view_b = index_b;
        m.px_a = Vec2(c.x, c.y);
        const auto refined = refine_subpixel(ga, gb, gbx, gby, c.x, c.y, Vec2(fwd->x, fwd->y), r, -fwd->angle_deg);
        if (!refined) continue;
        m.px_b = *refined;
        m.score = std::clamp(fwd->score, 0.0, 1.0);
        out.push_back(m);
    }
    if (out.size() < 8) {
        throw InsufficientMatchesError("only " + std::to_string(out.size()) + " matches between views " +
                                       std::to_string(index_a) + " and " + std::to_string(index_b));
    }
    return out;
}

Vec3 triangulate(const Ray& ray_a, const Ray& ray_b) {
    const Vec3& da = ray_a.direction;
    const Vec3& db = ray_b.direction;
    if (da.cross(db).norm() < 1e-6) throw DegenerateRaysError("triangulate: near-parallel rays");
    const Vec3 w0 = ray_a.origin - ray_b.origin;
    const double b = da.dot(db);
    const double d = da.dot(w0);
    const double e = db.dot(w0);
    const double denom = da.squaredNorm() * db.squaredNorm() - b * b;
    const double sa = (b * e - db.squaredNorm() * d) / denom;
    const double sb = (da.squaredNorm() * e - b * d) / denom;
    return 0.5 * (ray_a.at(sa) + ray_b.at(sb));
}

std::vector<TripletTrack> build_triplet_tracks(const std::vector<Correspondence>& matches, int view_count,
                                               double tol) {
    auto pair_matches = [&](int i, int j) {
        std::vector<const Correspondence*> out;
        for (const auto& m : matches)
            if (m.view_a == i && m.view_b == j) out.push_back(&m);
        return out;
    };
    auto nearest = [tol](const std::vector<const Correspondence*>& list, auto key) -> const Correspondence* {
        const Correspondence* best = nullptr;
        double best_d = tol;
        for (const Correspondence* m : list) {
            const double d = key(*m);
            if (d <= best_d) {
                best_d = d;
                best = m;
            }
        }
        return best;
    };

    std::vector<TripletTrack> tracks;
    for (int a = 0; a < view_count; ++a)
        for (int b = a + 1; b < view_count; ++b)
            for (int c = b + 1; c < view_count; ++c) {
                // Chained through the keypoint in a: a->b and a->c matches
                // that start from the same place in a.
                const auto ab = pair_matches(a, b);
                const auto ac = pair_matches(a, c);
                for (const Correspondence* m_ab : ab) {
                    const Correspondence* m_ac =
                        nearest(ac, [&](const Correspondence& m) { return (m.px_a - m_ab->px_a).norm(); });
                    if (!m_ac) continue;
                    tracks.push_back({{a, b, c}, {m_ab->px_a, m_ab->px_b, m_ac->px_b}});
                }
            }
    return tracks;
}

double reprojection_error(const std::vector<Camera>& cameras, const std::vector<TripletTrack>& tracks) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const TripletTrack& t : tracks) {
        const Camera& ca = cameras.at(t.views[0]);
        const Camera& cb = cameras.at(t.views[1]);
        const Camera& cc = cameras.at(t.views[2]);
        Vec3 x;
        try {
            x = triangulate(pixel_ray(ca.extrinsics, ca.intrinsics, t.px[0]),
                            pixel_ray(cb.extrinsics, cb.intrinsics, t.px[1]));
        } catch (const DegenerateRaysError&) {
            continue;
        }
        const auto proj = project(cc.extrinsics, cc.intrinsics, x);
        if (!proj) continue;
        sum += std::abs(proj->x() - t.px[2].x()) + std::abs(proj->y() - t.px[2].y());
        ++count;
    }
    if (count == 0) throw NoTripletsError("no usable triplet points");
    return sum / static_cast<double>(count);
}

double reprojection_error(const std::vector<View>& views, const std::vector<Correspondence>& matches) {
    std::vector<Camera> cams;
    for (const View& v : views) cams.push_back(v.camera());
    return reprojection_error(cams, build_triplet_tracks(matches, static_cast<int>(views.size())));
}

std::vector<Correspondence> match_all_pairs(const std::vector<View>& views, const MatchOptions& opts, Exec exec) {
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < static_cast<int>(views.size()); ++i)
        for (int j = i + 1; j < static_cast<int>(views.size()); ++j) pairs.emplace_back(i, j);
    std::vector<std::vector<Correspondence>> per_pair(pairs.size());
    std::vector<std::string> failures(pairs.size());
    const int n = static_cast<int>(pairs.size());
    auto run = [&](int k) {
        try {
            per_pair[k] = match_patches(views[pairs[k].first], views[pairs[k].second], opts, pairs[k].first,
                                        pairs[k].second);
        } catch (const InsufficientMatchesError& e) {
            failures[k] = e.what();
        }
    };
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
        for (int k = 0; k < n; ++k) run(k);
    } else {
        for (int k = 0; k < n; ++k) run(k);
    }
    // A failed pair only costs the triplets that need it; give up when no
    // view keeps two matched partners.
    std::vector<int> partners(views.size(), 0);
    std::vector<Correspondence> all;
    std::string first_failure;
    for (int k = 0; k < n; ++k) {
        if (!failures[k].empty()) {
            if (first_failure.empty()) first_failure = failures[k];
            continue;
        }
        ++partners[pairs[k].first];
        all.insert(all.end(), per_pair[k].begin(), per_pair[k].end());
    }
    if (!first_failure.empty() && std::none_of(partners.begin(), partners.end(), [](int p) { return p >= 2; })) {
        throw InsufficientMatchesError(first_failure);
    }
    return all;
}

namespace {

double candidate_error(double elevation, const Intrinsics& intr, const std::vector<RelativeSpherical>& deltas,
                       const std::vector<TripletTrack>& tracks, double radius) {
    try {
        const SphericalPose input(elevation, 0.0, radius);
        std::vector<Camera> cams;
        cams.reserve(deltas.size());
        for (const auto& d : deltas) cams.emplace_back(apply_relative(input, d), intr);
        return reprojection_error(cams, tracks);
    } catch (const RangeError&) {
        return std::numeric_limits<double>::infinity();
    } catch (const NoTripletsError&) {
        return std::numeric_limits<double>::infinity();
    }
}

std::vector<CandidateError> evaluate_candidates(const std::vector<double>& elevations, bool fine, const Intrinsics& intr,
                                                const std::vector<RelativeSpherical>& deltas,
                                                const std::vector<TripletTrack>& tracks, double radius, Exec exec) {
    std::vector<CandidateError> out(elevations.size());
    const int n = static_cast<int>(elevations.size());
    auto run = [&](int i) { out[i] = {elevations[i], candidate_error(elevations[i], intr, deltas, tracks, radius), fine}; };
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) run(i);
    } else {
        for (int i = 0; i < n; ++i) run(i);
    }
    return out;
}

const CandidateError* argmin(const std::vector<CandidateError>& c) {
    const CandidateError* best = nullptr;
    for (const auto& e : c)
        if (std::isfinite(e.error_px) && (!best || e.error_px < best->error_px)) best = &e;
    return best;
}

}  // namespace

ElevationEstimate estimate_elevation_from_matches(const Intrinsics& intr, const std::vector<Correspondence>& matches,
                                                  const std::vector<RelativeSpherical>& deltas,
                                                  const ElevationOptions& opts, Exec exec) {
    const auto tracks = build_triplet_tracks(matches, static_cast<int>(deltas.size()));

    std::vector<double> coarse;
    for (double e = opts.coarse_min_deg; e <= opts.coarse_max_deg + 1e-9; e += opts.coarse_step_deg) coarse.push_back(e);
    ElevationEstimate est;
    est.per_candidate = evaluate_candidates(coarse, false, intr, deltas, tracks, opts.radius, exec);
    const CandidateError* coarse_best = argmin(est.per_candidate);
    if (!coarse_best) throw EstimationFailedError("every coarse elevation candidate failed");
    const double center = coarse_best->elevation_deg;

    std::vector<double> fine;
    const int half_steps = static_cast<int>(std::lround(opts.fine_half_range_deg / opts.fine_step_deg));
    for (int k = -half_steps; k <= half_steps; ++k) {
        const double e = center + k * opts.fine_step_deg;
        if (e >= -90.0 && e <= 90.0) fine.push_back(e);
    }
    const auto fine_errors = evaluate_candidates(fine, true, intr, deltas, tracks, opts.radius, exec);
    const CandidateError* fine_best = argmin(fine_errors);
    if (!fine_best) throw EstimationFailedError("every fine elevation candidate failed");
    est.elevation_deg = fine_best->elevation_deg;
    est.reprojection_error_px = fine_best->error_px;
    est.per_candidate.insert(est.per_candidate.end(), fine_errors.begin(), fine_errors.end());
    return est;
}

ElevationEstimate estimate_elevation(const std::vector<View>& nearby, const std::vector<RelativeSpherical>& deltas,
                                     const ElevationOptions& opts, Exec exec) {
    if (nearby.size() != deltas.size() || nearby.size() < 3) {
        throw RangeError("estimate_elevation needs matching nearby views and deltas (at least 3)");
    }
    const auto matches = match_all_pairs(nearby, opts.match, exec);
    return estimate_elevation_from_matches(nearby.front().intrinsics, matches, deltas, opts, exec);
}

ElevationEstimate estimate_elevation(const View& /*input*/, const std::vector<View>& nearby,
                                     const std::vector<RelativeSpherical>& deltas, const ElevationOptions& opts,
                                     Exec exec) {
    return estimate_elevation(nearby, deltas, opts, exec);
}

std::vector<Correspondence> read_matches_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<Correspondence> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        Correspondence c;
        double ua, va, ub, vb;
        if (!(ss >> c.view_a >> c.view_b >> ua >> va >> ub >> vb >> c.score)) {
            throw IoError(path + ":" + std::to_string(lineno) + ": expected 'view_a view_b ua va ub vb score'");
        }
        if (c.view_a == c.view_b) throw IoError(path + ":" + std::to_string(lineno) + ": view_a == view_b");
        c.px_a = Vec2(ua, va);
        c.px_b = Vec2(ub, vb);
        if (c.view_a > c.view_b) {
            std::swap(c.view_a, c.view_b);
            std::swap(c.px_a, c.px_b);
        }
        out.push_back(c);
    }
    return out;
}

void write_matches_file(const std::string& path, const std::vector<Correspondence>& matches) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(10);
    for (const auto& m : matches) {
        out << m.view_a << ' ' << m.view_b << ' ' << m.px_a.x() << ' ' << m.px_a.y() << ' ' << m.px_b.x() << ' '
            << m.px_b.y() << ' ' << m.score << '\n';
    }
}

}  // namespace mvr
