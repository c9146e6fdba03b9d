#include "mvr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "mvr/errors.hpp"

namespace mvr {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Mat3 rot_z(double deg) {
    const double r = deg_to_rad(deg), c = std::cos(r), s = std::sin(r);
    Mat3 m;
    m << c, -s, 0, s, c, 0, 0, 0, 1;
    return m;
}

// Every k-th point, keeping at most `n`.
PointCloud subsample(const PointCloud& pts, int n) {
    if (static_cast<int>(pts.size()) <= n) return pts;
    PointCloud out;
    out.reserve(n);
    const double step = static_cast<double>(pts.size()) / n;
    for (int i = 0; i < n; ++i) out.push_back(pts[static_cast<std::size_t>(i * step)]);
    return out;
}

}  // namespace

PointCloud sample_surface(const TriMesh& mesh, int n_points, std::uint64_t seed) {
    if (mesh.triangles.empty()) throw EmptyMeshError("cannot sample an empty mesh");
    std::vector<double> cdf(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        total += triangle_area(mesh, static_cast<int>(i));
        cdf[i] = total;
    }
    if (!(total > 0.0)) throw EmptyMeshError("mesh has zero surface area");
    std::mt19937_64 rng(seed);
    PointCloud out;
    out.reserve(n_points);
    for (int k = 0; k < n_points; ++k) {
        const double r = uniform01(rng) * total;
        const std::size_t t = std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin(),
                                                    cdf.size() - 1);
        double u = uniform01(rng), v = uniform01(rng);
        if (u + v > 1.0) {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        const auto& tri = mesh.triangles[t];
        const Vec3& a = mesh.vertices[tri[0]];
        out.push_back(a + u * (mesh.vertices[tri[1]] - a) + v * (mesh.vertices[tri[2]] - a));
    }
    return out;
}

// ---- k-d tree -------------------------------------------------------------

KdTree::KdTree(const PointCloud& points) : points_(points) {
    std::vector<int> idx(points_.size());
    std::iota(idx.begin(), idx.end(), 0);
    nodes_.reserve(points_.size());
    root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int lo, int hi, int depth) {
    if (lo >= hi) return -1;
    const int axis = depth % 3;
    const int mid = (lo + hi) / 2;
    std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi, [&](int a, int b) {
        if (points_[a][axis] != points_[b][axis]) return points_[a][axis] < points_[b][axis];
        return a < b;
    });
    const int node = static_cast<int>(nodes_.size());
    nodes_.push_back({idx[mid], axis});
    const int left = build(idx, lo, mid, depth + 1);
    const int right = build(idx, mid + 1, hi, depth + 1);
    nodes_[node].left = left;
    nodes_[node].right = right;
    return node;
}

void KdTree::search(int node, const Vec3& q, int& best, double& best_d2) const {
    if (node < 0) return;
    const Node& nd = nodes_[node];
    const Vec3& p = points_[nd.point];
    const double d2 = (p - q).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && nd.point < best)) {
        best_d2 = d2;
        best = nd.point;
    }
    const double diff = q[nd.axis] - p[nd.axis];
    const int near = diff < 0.0 ? nd.left : nd.right;
    const int far = diff < 0.0 ? nd.right : nd.left;
    search(near, q, best, best_d2);
    if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::pair<int, double> KdTree::nearest(const Vec3& q) const {
    int best = -1;
    double d2 = std::numeric_limits<double>::infinity();
    search(root_, q, best, d2);
    return {best, d2};
}

// ---- ICP ------------------------------------------------------------------

RigidTransform RigidTransform::then(const RigidTransform& next) const {
    return {next.rotation * rotation, next.rotation * translation + next.translation};
}

IcpResult icp(const PointCloud& source, const PointCloud& target, int max_iters, double inlier_tau) {
    const KdTree tree(target);
    return icp(source, target, tree, max_iters, inlier_tau);
}

IcpResult icp(const PointCloud& source, const PointCloud& target, const KdTree& tree, int max_iters,
              double inlier_tau) {
    if (source.size() < 3 || target.size() < 3) throw RangeError("ICP needs at least 3 points per cloud");
    IcpResult res;
    const std::size_t n = source.size();
    PointCloud cur = source;
    std::vector<int> pair(n);

    auto pair_up = [&](const PointCloud& pts, std::vector<int>& out) {
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto [j, d2] = tree.nearest(pts[i]);
            out[i] = j;
            ss += d2;
        }
        return std::sqrt(ss / n);
    };

    double rms = pair_up(cur, pair);
    res.rms_history.push_back(rms);
    for (int it = 0; it < max_iters; ++it) {
        Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            mu_s += cur[i];
            mu_t += target[pair[i]];
        }
        mu_s /= static_cast<double>(n);
        mu_t /= static_cast<double>(n);
        Mat3 cov = Mat3::Zero();
        for (std::size_t i = 0; i < n; ++i) cov += (target[pair[i]] - mu_t) * (cur[i] - mu_s).transpose();
        RigidTransform step;
        Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Eigen::Vector3d sv = svd.singularValues();
        if (sv[2] <= 1e-12 * std::max(sv[0], 1e-300)) {
            res.degenerate = true;
        } else {
            Mat3 d = Mat3::Identity();
            if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
            step.rotation = svd.matrixU() * d * svd.matrixV().transpose();
        }
        step.translation = mu_t - step.rotation * mu_s;

        PointCloud next(n);
        for (std::size_t i = 0; i < n; ++i) next[i] = step.apply(cur[i]);
        std::vector<int> next_pair(n);
        const double next_rms = pair_up(next, next_pair);
        if (next_rms > rms) break;  // rejected: keep the last accepted state
        cur.swap(next);
        pair.swap(next_pair);
        res.transform = res.transform.then(step);
        res.iterations = it + 1;
        res.rms_history.push_back(next_rms);
        const double change = rms - next_rms;
        rms = next_rms;
        if (change < 1e-6) break;
    }
    res.rms = rms;
    const double tau2 = inlier_tau * inlier_tau;
    for (std::size_t i = 0; i < n; ++i) {
        if ((cur[i] - target[pair[i]]).squaredNorm() < tau2) ++res.inliers;
    }
    return res;
}

// ---- alignment search -----------------------------------------------------

Vec3 RigidSim::apply(const Vec3& p) const { return rigid.apply(scale * (rot_z(rotation_z_deg) * p)); }

RigidSim align_search(const TriMesh& pred, const TriMesh& gt, const AlignOptions& opts, Exec exec) {
    return align_search(sample_surface(pred, opts.cloud_points, opts.seed),
                        sample_surface(gt, opts.cloud_points, opts.seed + 1), opts, exec);
}

RigidSim align_search(const PointCloud& pred, const PointCloud& gt, const AlignOptions& opts, Exec exec) {
    if (pred.size() < 3 || gt.size() < 3) throw EmptyMeshError("alignment needs non-empty clouds");
    std::vector<double> scales;
    for (int i = 0;; ++i) {
        const double s = opts.scale_min + i * opts.scale_step;
        if (s > opts.scale_max + 1e-9) break;
        scales.push_back(s);
    }
    std::vector<double> angles;
    for (int i = 0; i * opts.rotation_step_deg < 360.0 - 1e-9; ++i) angles.push_back(i * opts.rotation_step_deg);

    const PointCloud src = subsample(pred, opts.search_source_points);
    const PointCloud tgt = subsample(gt, opts.search_target_points);
    const KdTree tgt_tree(tgt);
    const int n_cand = static_cast<int>(scales.size() * angles.size());
    std::vector<RigidSim> cand(n_cand);
    for_each_index(exec, n_cand, [&](int c) {
        RigidSim& r = cand[c];
        r.scale = scales[c / angles.size()];
        r.rotation_z_deg = angles[c % angles.size()];
        const Mat3 rz = rot_z(r.rotation_z_deg);
        PointCloud moved(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) moved[i] = r.scale * (rz * src[i]);
        const IcpResult ir = icp(moved, tgt, tgt_tree, opts.search_icp_iters, opts.inlier_tau);
        r.rigid = ir.transform;
        r.inliers = ir.inliers;
        r.rms = ir.rms;
    });
    int best = 0;
    for (int c = 1; c < n_cand; ++c) {
        if (cand[c].inliers > cand[best].inliers ||
            (cand[c].inliers == cand[best].inliers && cand[c].rms < cand[best].rms)) {
            best = c;
        }
    }

    RigidSim out = cand[best];
    PointCloud moved(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) moved[i] = out.apply(pred[i]);
    const IcpResult refine = icp(moved, gt, 50, opts.inlier_tau);
    out.rigid = out.rigid.then(refine.transform);
    out.inliers = refine.inliers;
    out.rms = refine.rms;
    return out;
}

FScore f_score(const PointCloud& pred, const PointCloud& gt, double tau) {
    FScore s;
    if (pred.empty() || gt.empty()) return s;
    const KdTree tp(pred), tg(gt);
    const double tau2 = tau * tau;
    int hit_p = 0, hit_g = 0;
    for (const Vec3& p : pred) hit_p += tg.nearest(p).second <= tau2;
    for (const Vec3& g : gt) hit_g += tp.nearest(g).second <= tau2;
    s.precision = static_cast<double>(hit_p) / pred.size();
    s.recall = static_cast<double>(hit_g) / gt.size();
    s.f = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

Normalization unit_cube_normalization(const TriMesh& mesh) {
    if (mesh.vertices.empty()) throw EmptyMeshError("cannot normalize an empty mesh");
    Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
    for (const Vec3& v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    Normalization n;
    n.center = 0.5 * (lo + hi);
    const double extent = (hi - lo).maxCoeff();
    n.scale = extent > 0.0 ? 1.0 / extent : 1.0;
    return n;
}

TriMesh transformed(const TriMesh& mesh, const Normalization& n) {
    TriMesh out = mesh;
    for (Vec3& v : out.vertices) v = n.apply(v);
    return out;
}

EvalReport evaluate_meshes(const TriMesh& pred, const TriMesh& gt, double tau, const AlignOptions& opts, Exec exec) {
    if (pred.empty() || gt.empty()) throw EmptyMeshError("evaluation needs two non-empty meshes");
    const Normalization norm = unit_cube_normalization(gt);
    const PointCloud pc = sample_surface(transformed(pred, norm), opts.cloud_points, opts.seed);
    const PointCloud gc = sample_surface(transformed(gt, norm), opts.cloud_points, opts.seed + 1);
    EvalReport rep;
    rep.alignment = align_search(pc, gc, opts, exec);
    PointCloud aligned(pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i) aligned[i] = rep.alignment.apply(pc[i]);
    rep.score = f_score(aligned, gc, tau);
    return rep;
}

}  // namespace mvr
