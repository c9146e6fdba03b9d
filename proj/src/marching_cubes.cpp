#include <cstdint>
#include <unordered_map>

#include "mvr/recon.hpp"

namespace mvr {

namespace {

#include "mc_table.inc"

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

TriMesh marching_cubes(const SdfGrid& sdf, double iso) {
    TriMesh mesh;
    const GridShape& g = sdf.shape();
    const int n = g.n;
    std::unordered_map<std::uint64_t, int> edge_vertex;
    const std::vector<double>& v = sdf.values();

    for (int k = 0; k + 1 < n; ++k) {
        for (int j = 0; j + 1 < n; ++j) {
            for (int i = 0; i + 1 < n; ++i) {
                double val[8];
                int cube = 0;
                for (int c = 0; c < 8; ++c) {
                    val[c] = v[g.index(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2])];
                    if (val[c] < iso) cube |= 1 << c;
                }
                if (cube == 0 || cube == 255) continue;
                const std::int8_t* row = kTriTable[cube];
                for (int e = 0; row[e] >= 0; e += 3) {
                    int tri[3];
                    for (int q = 0; q < 3; ++q) {
                        const int a = kEdge[row[e + q]][0], b = kEdge[row[e + q]][1];
                        // Key: lower corner's voxel index and the edge axis.
                        const int lo = (kCorner[a][0] + kCorner[a][1] + kCorner[a][2] <=
                                        kCorner[b][0] + kCorner[b][1] + kCorner[b][2])
                                           ? a
                                           : b;
                        const int hi = lo == a ? b : a;
                        int axis = 0;
                        while (kCorner[lo][axis] == kCorner[hi][axis]) ++axis;
                        const std::uint64_t key =
                            g.index(i + kCorner[lo][0], j + kCorner[lo][1], k + kCorner[lo][2]) * 3 + axis;
                        auto [it, fresh] = edge_vertex.try_emplace(key, static_cast<int>(mesh.vertices.size()));
                        if (fresh) {
                            const Vec3 pa = g.center(i + kCorner[a][0], j + kCorner[a][1], k + kCorner[a][2]);
                            const Vec3 pb = g.center(i + kCorner[b][0], j + kCorner[b][1], k + kCorner[b][2]);
                            const double t = val[a] == val[b] ? 0.5 : (iso - val[a]) / (val[b] - val[a]);
                            mesh.vertices.push_back(pa + t * (pb - pa));
                        }
                        tri[q] = it->second;
                    }
                    // The table winds triangles with normals toward the
                    // inside (values below iso); reverse them.
                    mesh.triangles.push_back({tri[0], tri[2], tri[1]});
                }
            }
        }
    }
    return mesh;
}

}  // namespace mvr
