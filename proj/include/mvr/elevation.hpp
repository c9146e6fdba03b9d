#pragma once

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "mvr/camera.hpp"
#include "mvr/exec.hpp"
#include "mvr/synth.hpp"

namespace mvr {

struct Correspondence {
    int view_a = 0;
    int view_b = 0;
    Vec2 px_a;
    Vec2 px_b;
    double score = 0.0;
};

struct MatchOptions {
    int max_matches = 400;
    int patch_radius = 5;
    int search_radius = 40;
    double min_zncc = 0.8;
    /// Required gap between the best score and the best one away from the peak.
    double min_uniqueness = 0.02;
    /// Patch radius of the half-resolution seed pass.
    int seed_patch_radius = 6;
    /// Template rotations tried, absorbing the in-plane roll of azimuth steps.
    std::vector<double> seed_angles_deg{-12.0, 0.0, 12.0};
    /// Neighborhood size and tolerance of the displacement-consistency filter.
    int flow_neighbors = 8;
    double flow_tolerance_px = 4.0;
    /// Corners weaker than this fraction of the strongest response are dropped.
    double min_response_ratio = 0.001;
    /// Only keep corners whose whole patch is foreground (alpha > 0);
    /// silhouette corners are not fixed surface points.
    bool foreground_patches_only = true;
};

/// Gradient-response corners in `a`, matched into `b` by zero-normalized
/// cross-correlation with a mutual-best check and subpixel refinement.
/// Throws InsufficientMatchesError below 8 surviving matches.
std::vector<Correspondence> match_patches(const View& a, const View& b, const MatchOptions& opts = {},
                                          int index_a = 0, int index_b = 1);

/// Midpoint of the shortest segment between two lines. Throws
/// DegenerateRaysError when the directions are near parallel.
Vec3 triangulate(const Ray& ray_a, const Ray& ray_b);

/// A keypoint observed in all three views of a triplet (a < b < c).
struct TripletTrack {
    std::array<int, 3> views;
    std::array<Vec2, 3> px;
};

/// Chains pairwise matches into triplet tracks: an a->b and an a->c match
/// whose keypoints in a agree within the tolerance (1.5 px) form one track.
std::vector<TripletTrack> build_triplet_tracks(const std::vector<Correspondence>& matches, int view_count,
                                               double tolerance_px = 1.5);

/// Mean L1 reprojection error over tracks: triangulate from the first two
/// views, project into the third. Throws NoTripletsError if nothing usable.
double reprojection_error(const std::vector<Camera>& cameras, const std::vector<TripletTrack>& tracks);
double reprojection_error(const std::vector<View>& views, const std::vector<Correspondence>& matches);

/// All-pairs matching (i < j) of the given views. A pair with too few
/// matches is dropped; InsufficientMatchesError only when no triplet survives.
std::vector<Correspondence> match_all_pairs(const std::vector<View>& views, const MatchOptions& opts = {},
                                            Exec exec = Exec::Parallel);

struct CandidateError {
    double elevation_deg;
    double error_px;  // +inf for an invalid candidate
    bool fine_stage;
};

struct ElevationEstimate {
    double elevation_deg = 0.0;
    double reprojection_error_px = std::numeric_limits<double>::infinity();
    std::vector<CandidateError> per_candidate;
};

struct ElevationOptions {
    double coarse_min_deg = -80.0;
    double coarse_max_deg = 80.0;
    double coarse_step_deg = 10.0;
    double fine_half_range_deg = 10.0;
    double fine_step_deg = 1.0;
    double radius = 1.2;
    MatchOptions match;
};

/// Coarse-to-fine elevation search. The candidate input camera sits at
/// (candidate, azimuth 0, radius 1.2); nearby cameras follow from `deltas`.
ElevationEstimate estimate_elevation(const std::vector<View>& nearby, const std::vector<RelativeSpherical>& deltas,
                                     const ElevationOptions& opts = {}, Exec exec = Exec::Parallel);

/// Contract form: the input view contributes only through the deltas.
ElevationEstimate estimate_elevation(const View& input, const std::vector<View>& nearby,
                                     const std::vector<RelativeSpherical>& deltas, const ElevationOptions& opts = {},
                                     Exec exec = Exec::Parallel);

/// Same search with externally supplied correspondences.
ElevationEstimate estimate_elevation_from_matches(const Intrinsics& intr, const std::vector<Correspondence>& matches,
                                                  const std::vector<RelativeSpherical>& deltas,
                                                  const ElevationOptions& opts = {}, Exec exec = Exec::Parallel);

/// Matches files: `view_a view_b ua va ub vb score` per line.
std::vector<Correspondence> read_matches_file(const std::string& path);
void write_matches_file(const std::string& path, const std::vector<Correspondence>& matches);

}  // namespace mvr
