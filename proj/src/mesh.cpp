#include "mvr/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <Eigen/Geometry>

#include "mvr/errors.hpp"

namespace mvr {

double triangle_area(const TriMesh& m, int tri) {
    const auto& t = m.triangles[tri];
    const Vec3 e1 = m.vertices[t[1]] - m.vertices[t[0]];
    const Vec3 e2 = m.vertices[t[2]] - m.vertices[t[0]];
    return 0.5 * e1.cross(e2).norm();
}

std::vector<Vec3> vertex_normals(const TriMesh& m) {
    std::vector<Vec3> n(m.vertices.size(), Vec3::Zero());
    for (const auto& t : m.triangles) {
        // Unnormalized cross product weights by twice the area.
        const Vec3 fn = (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]);
        for (int k = 0; k < 3; ++k) n[t[k]] += fn;
    }
    for (Vec3& v : n) {
        const double len = v.norm();
        if (len > 0.0) v /= len;
    }
    return n;
}

long euler_characteristic(const TriMesh& m) {
    std::set<std::pair<int, int>> edges;
    std::set<int> used;
    for (const auto& t : m.triangles) {
        for (int k = 0; k < 3; ++k) {
            used.insert(t[k]);
            const int a = t[k], b = t[(k + 1) % 3];
            edges.emplace(std::min(a, b), std::max(a, b));
        }
    }
    return static_cast<long>(used.size()) - static_cast<long>(edges.size()) + static_cast<long>(m.triangles.size());
}

TriMesh cleanup(const TriMesh& m) {
    const int nv = static_cast<int>(m.vertices.size());
    std::vector<std::array<int, 3>> kept;
    std::vector<char> used(nv, 0);
    for (std::size_t i = 0; i < m.triangles.size(); ++i) {
        const auto& t = m.triangles[i];
        if (std::any_of(t.begin(), t.end(), [nv](int v) { return v < 0 || v >= nv; })) continue;
        if (triangle_area(m, static_cast<int>(i)) <= 1e-12) continue;
        kept.push_back(t);
        for (int v : t) used[v] = 1;
    }
    // Compact in original vertex order.
    std::vector<int> remap(nv, -1);
    TriMesh out;
    const bool colored = m.has_colors();
    for (int v = 0; v < nv; ++v) {
        if (!used[v]) continue;
        remap[v] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(m.vertices[v]);
        if (colored) out.colors.push_back(m.colors[v]);
    }
    for (const auto& t : kept) out.triangles.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
    return out;
}

namespace {

std::uint8_t to_byte(double c) { return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)); }

std::string lower_extension(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return {};
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

TriMesh read_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    TriMesh m;
    std::vector<Rgb> colors;
    bool all_colored = true;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string kw;
        if (!(ss >> kw) || kw[0] == '#') continue;
        if (kw == "v") {
            Vec3 p;
            if (!(ss >> p[0] >> p[1] >> p[2])) throw IoError(path + ":" + std::to_string(lineno) + ": bad vertex");
            m.vertices.push_back(p);
            Rgb c;
            if (ss >> c[0] >> c[1] >> c[2]) {
                colors.push_back(c);
            } else {
                all_colored = false;
                colors.push_back(Rgb::Zero());
            }
        } else if (kw == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ss >> tok) {
                const int v = std::stoi(tok.substr(0, tok.find('/')));
                idx.push_back(v > 0 ? v - 1 : static_cast<int>(m.vertices.size()) + v);
            }
            if (idx.size() < 3) throw IoError(path + ":" + std::to_string(lineno) + ": face with < 3 vertices");
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) m.triangles.push_back({idx[0], idx[k], idx[k + 1]});
        }
    }
    if (all_colored && !colors.empty()) m.colors = std::move(colors);
    return m;
}

struct PlyProperty {
    std::string name;
    std::string type;
    bool is_list = false;
    std::string count_type;
};

std::size_t type_size(const std::string& t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    throw IoError("unsupported PLY type " + t);
}

double read_binary_value(std::istream& in, const std::string& t) {
    unsigned char buf[8];
    const std::size_t n = type_size(t);
    if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n))) throw IoError("truncated PLY body");
    static_assert(std::endian::native == std::endian::little, "PLY reader assumes a little-endian host");
    if (t == "char" || t == "int8") return static_cast<std::int8_t>(buf[0]);
    if (t == "uchar" || t == "uint8") return buf[0];
    if (t == "short" || t == "int16") { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
    if (t == "ushort" || t == "uint16") { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
    if (t == "int" || t == "int32") { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
    if (t == "uint" || t == "uint32") { std::uint32_t v; std::memcpy(&v, buf, 4); return v; }
    if (t == "float" || t == "float32") { float v; std::memcpy(&v, buf, 4); return v; }
    double v;
    std::memcpy(&v, buf, 8);
    return v;
}

TriMesh read_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line.rfind("ply", 0) != 0) throw IoError(path + ": not a PLY file");
    bool binary = false;
    struct Element {
        std::string name;
        std::size_t count = 0;
        std::vector<PlyProperty> props;
    };
    std::vector<Element> elements;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string kw;
        ss >> kw;
        if (kw == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt == "binary_little_endian") {
                binary = true;
            } else if (fmt != "ascii") {
                throw IoError(path + ": unsupported PLY format " + fmt);
            }
        } else if (kw == "element") {
            Element e;
            ss >> e.name >> e.count;
            elements.push_back(e);
        } else if (kw == "property") {
            if (elements.empty()) throw IoError(path + ": property before element");
            PlyProperty p;
            std::string t;
            ss >> t;
            if (t == "list") {
                p.is_list = true;
                ss >> p.count_type >> p.type >> p.name;
            } else {
                p.type = t;
                ss >> p.name;
            }
            elements.back().props.push_back(p);
        } else if (kw == "end_header") {
            break;
        }
    }

    TriMesh m;
    std::vector<Rgb> colors;
    bool has_color = false;
    for (const Element& e : elements) {
        for (std::size_t i = 0; i < e.count; ++i) {
            Vec3 p = Vec3::Zero();
            Rgb c = Rgb::Zero();
            std::vector<int> face;
            std::istringstream row;
            if (!binary) {
                if (!std::getline(in, line)) throw IoError(path + ": truncated PLY body");
                row.str(line);
            }
            auto scalar = [&](const std::string& t) {
                if (binary) return read_binary_value(in, t);
                double v;
                if (!(row >> v)) throw IoError(path + ": bad PLY row");
                return v;
            };
            for (const PlyProperty& prop : e.props) {
                if (prop.is_list) {
                    const int n = static_cast<int>(scalar(prop.count_type));
                    for (int k = 0; k < n; ++k) face.push_back(static_cast<int>(scalar(prop.type)));
                    continue;
                }
                const double v = scalar(prop.type);
                if (e.name != "vertex") continue;
                if (prop.name == "x") p[0] = v;
                if (prop.name == "y") p[1] = v;
                if (prop.name == "z") p[2] = v;
                const double scale = (prop.type == "uchar" || prop.type == "uint8") ? 1.0 / 255.0 : 1.0;
                if (prop.name == "red") { c[0] = v * scale; has_color = true; }
                if (prop.name == "green") c[1] = v * scale;
                if (prop.name == "blue") c[2] = v * scale;
            }
            if (e.name == "vertex") {
                m.vertices.push_back(p);
                colors.push_back(c);
            } else if (e.name == "face") {
                for (std::size_t k = 1; k + 1 < face.size(); ++k) m.triangles.push_back({face[0], face[k], face[k + 1]});
            }
        }
    }
    if (has_color) m.colors = std::move(colors);
    return m;
}

}  // namespace

void write_obj(const std::string& path, const TriMesh& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(9);
    const bool colored = m.has_colors();
    for (std::size_t i = 0; i < m.vertices.size(); ++i) {
        const Vec3& v = m.vertices[i];
        out << "v " << v.x() << ' ' << v.y() << ' ' << v.z();
        if (colored) out << ' ' << m.colors[i].x() << ' ' << m.colors[i].y() << ' ' << m.colors[i].z();
        out << '\n';
    }
    for (const auto& t : m.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

void write_ply(const std::string& path, const TriMesh& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    const bool colored = m.has_colors();
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << m.vertices.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n";
    if (colored) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "element face " << m.triangles.size() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");
    for (std::size_t i = 0; i < m.vertices.size(); ++i) {
        const float xyz[3] = {static_cast<float>(m.vertices[i].x()), static_cast<float>(m.vertices[i].y()),
                              static_cast<float>(m.vertices[i].z())};
        out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
        if (colored) {
            const std::uint8_t rgb[3] = {to_byte(m.colors[i].x()), to_byte(m.colors[i].y()), to_byte(m.colors[i].z())};
            out.write(reinterpret_cast<const char*>(rgb), 3);
        }
    }
    for (const auto& t : m.triangles) {
        const std::uint8_t n = 3;
        out.write(reinterpret_cast<const char*>(&n), 1);
        const std::int32_t idx[3] = {t[0], t[1], t[2]};
        out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
    }
    if (!out) throw IoError("failed writing " + path);
}

TriMesh read_mesh(const std::string& path) {
    const std::string ext = lower_extension(path);
    if (ext == "obj") return cleanup(read_obj(path));
    if (ext == "ply") return cleanup(read_ply(path));
    throw IoError("unsupported mesh format: " + path);
}

}  // namespace mvr
