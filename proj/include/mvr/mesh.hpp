#pragma once

#include <array>
#include <string>
#include <vector>

#include "mvr/camera.hpp"

namespace mvr {

using Rgb = Eigen::Vector3d;

/// Indexed triangle mesh with optional per-vertex colors in [0,1].
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Rgb> colors;  // empty, or one per vertex

    bool empty() const { return triangles.empty(); }
    bool has_colors() const { return !colors.empty() && colors.size() == vertices.size(); }
};

double triangle_area(const TriMesh& m, int tri);

/// Area-weighted vertex normals (unit length; zero for isolated vertices).
std::vector<Vec3> vertex_normals(const TriMesh& m);

/// V - E + F over the referenced vertices.
long euler_characteristic(const TriMesh& m);

/// Drops triangles with out-of-range indices or area <= 1e-12 and compacts
/// away vertices no triangle references.
TriMesh cleanup(const TriMesh& m);

/// OBJ with `v x y z r g b` lines when colors are present.
void write_obj(const std::string& path, const TriMesh& m);
/// Binary little-endian PLY; per-vertex uchar RGB when colors are present.
void write_ply(const std::string& path, const TriMesh& m);

/// Reads OBJ (v / f, polygons fan-triangulated, optional vertex colors) or
/// PLY (ascii or binary little-endian) by extension, then cleans up.
TriMesh read_mesh(const std::string& path);

}  // namespace mvr
