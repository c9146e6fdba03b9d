#pragma once

#include <cstdint>
#include <vector>

#include "mvr/camera.hpp"
#include "mvr/exec.hpp"
#include "mvr/mesh.hpp"

namespace mvr {

using PointCloud = std::vector<Vec3>;

/// Area-weighted uniform samples; deterministic under `seed`.
/// Throws EmptyMeshError for a mesh without triangles.
PointCloud sample_surface(const TriMesh& mesh, int n_points = 10000, std::uint64_t seed = 0);

/// Static 3-d tree over a point set.
class KdTree {
public:
    explicit KdTree(const PointCloud& points);

    /// Index of the nearest point and its squared distance.
    std::pair<int, double> nearest(const Vec3& q) const;
    bool empty() const { return points_.empty(); }

private:
    struct Node {
        int point;
        int axis;
        int left = -1;
        int right = -1;
    };
    int build(std::vector<int>& idx, int lo, int hi, int depth);
    void search(int node, const Vec3& q, int& best, double& best_d2) const;

    PointCloud points_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    RigidTransform then(const RigidTransform& next) const;
};

struct IcpResult {
    RigidTransform transform;
    int inliers = 0;
    double rms = 0.0;
    int iterations = 0;
    /// Set when a rank-deficient covariance forced translation-only steps.
    bool degenerate = false;
    std::vector<double> rms_history;
};

/// Point-to-point ICP of `source` onto `target`. Stops when the RMS change
/// drops below 1e-6 or after max_iters; a step that would raise the RMS is
/// rejected and ends the loop. Inliers: final pair distance < inlier_tau.
IcpResult icp(const PointCloud& source, const PointCloud& target, int max_iters = 50, double inlier_tau = 0.05);
IcpResult icp(const PointCloud& source, const PointCloud& target, const KdTree& target_tree, int max_iters,
              double inlier_tau);

/// Similarity pred -> gt: p' = rigid(scale * Rz(rotation_z_deg) * p).
struct RigidSim {
    double scale = 1.0;
    double rotation_z_deg = 0.0;
    RigidTransform rigid;
    int inliers = 0;
    double rms = 0.0;

    Vec3 apply(const Vec3& p) const;
};

struct AlignOptions {
    double scale_min = 0.6;
    double scale_max = 1.6;
    double scale_step = 0.05;
    double rotation_step_deg = 10.0;
    double inlier_tau = 0.05;
    /// Cloud sizes and ICP budget of the grid search; the winner is refined
    /// on the full clouds with 50 iterations.
    int search_source_points = 500;
    int search_target_points = 2000;
    int search_icp_iters = 20;
    int cloud_points = 10000;
    std::uint64_t seed = 0;
};

/// Grid search over scale x z-rotation, ICP per candidate, most inliers
/// wins (ties: lower RMS, then lower grid index).
RigidSim align_search(const TriMesh& pred, const TriMesh& gt, const AlignOptions& opts = {},
                      Exec exec = Exec::Parallel);
RigidSim align_search(const PointCloud& pred, const PointCloud& gt, const AlignOptions& opts = {},
                      Exec exec = Exec::Parallel);

struct FScore {
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
};

FScore f_score(const PointCloud& pred, const PointCloud& gt, double tau = 0.05);

/// Uniform scale + translation that fits the mesh's bounding box into
/// [-0.5, 0.5]^3 with its longest side spanning it, centered at the origin.
struct Normalization {
    Vec3 center = Vec3::Zero();
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
};

Normalization unit_cube_normalization(const TriMesh& mesh);
TriMesh transformed(const TriMesh& mesh, const Normalization& n);

struct EvalReport {
    RigidSim alignment;
    FScore score;
};

/// Normalizes gt to the unit cube (pred gets the same transform), samples
/// both surfaces, aligns, and scores.
EvalReport evaluate_meshes(const TriMesh& pred, const TriMesh& gt, double tau = 0.05, const AlignOptions& opts = {},
                           Exec exec = Exec::Parallel);

}  // namespace mvr
