#include "skyline/tsdf.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "skyline/io/ply.hpp"
#include "skyline/parallel.hpp"

namespace skyline {

namespace {

// Cube corners in (x, y, z) offsets.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
// Edge -> (corner a, corner b)
constexpr int kEdgeCorner[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// Edge -> (base corner offset, axis); endpoints are base and base+axis.
constexpr int kEdgeBaseAxis[12][4] = {
    {0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1}, {0, 0, 1, 0}, {1, 0, 1, 1},
    {0, 1, 1, 0}, {0, 0, 1, 1}, {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2}};
// Faces: 4 corners in cyclic order and the edge between consecutive corners.
constexpr int kFaceCorner[6][4] = {{0, 1, 2, 3}, {4, 5, 6, 7}, {0, 1, 5, 4},
                                   {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};
constexpr int kFaceEdge[6][4] = {{0, 1, 2, 3}, {4, 5, 6, 7}, {0, 9, 4, 8},
                                 {1, 10, 5, 9}, {2, 11, 6, 10}, {3, 8, 7, 11}};

struct CaseTable {
    // Flattened triangles of edge indices, -1 terminated per config.
    std::array<std::vector<int>, 256> tris;
};

// Builds the triangulation for one corner-sign configuration by linking the
// iso-segments each face contributes into closed loops and fanning them.
std::vector<int> build_config(int mask) {
    auto inside = [&](int corner) { return (mask >> corner) & 1; };

    // Each crossing edge gains exactly two segment endpoints.
    std::array<std::array<int, 2>, 12> link;
    std::array<int, 12> link_count{};
    link_count.fill(0);

    for (int f = 0; f < 6; ++f) {
        const int* fc = kFaceCorner[f];
        const int* fe = kFaceEdge[f];
        // Maximal cyclic runs of inside corners; a run entering at corner a and
        // leaving after corner b yields a segment between the bounding edges.
        for (int a = 0; a < 4; ++a) {
            if (!inside(fc[a]) || inside(fc[(a + 3) % 4])) continue; // run starts at a
            int b = a;
            while (inside(fc[(b + 1) % 4])) b = (b + 1) % 4;
            const int e_enter = fe[(a + 3) % 4];
            const int e_exit = fe[b];
            link[static_cast<std::size_t>(e_enter)][static_cast<std::size_t>(link_count[static_cast<std::size_t>(e_enter)]++)] = e_exit;
            link[static_cast<std::size_t>(e_exit)][static_cast<std::size_t>(link_count[static_cast<std::size_t>(e_exit)]++)] = e_enter;
        }
    }

    std::vector<int> out;
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
        if (link_count[static_cast<std::size_t>(start)] == 0 || used[static_cast<std::size_t>(start)]) continue;
        // walk the loop
        std::vector<int> loop;
        int prev = -1, cur = start;
        do {
            loop.push_back(cur);
            used[static_cast<std::size_t>(cur)] = true;
            const auto& nb = link[static_cast<std::size_t>(cur)];
            const int next = nb[0] == prev ? nb[1] : nb[0];
            prev = cur;
            cur = next;
        } while (cur != start);

        // Orient so the Newell normal points from inside (negative) corners
        // toward outside ones.
        Vec3 ref = Vec3::Zero();
        for (int cidx = 0; cidx < 8; ++cidx) {
            const Vec3 p(kCorner[cidx][0], kCorner[cidx][1], kCorner[cidx][2]);
            ref += (inside(cidx) ? -1.0 : 1.0) * (p - Vec3(0.5, 0.5, 0.5));
        }
        auto edge_mid = [&](int e) {
            const Vec3 a(kCorner[kEdgeCorner[e][0]][0], kCorner[kEdgeCorner[e][0]][1],
                         kCorner[kEdgeCorner[e][0]][2]);
            const Vec3 b(kCorner[kEdgeCorner[e][1]][0], kCorner[kEdgeCorner[e][1]][1],
                         kCorner[kEdgeCorner[e][1]][2]);
            return Vec3(0.5 * (a + b));
        };
        Vec3 newell = Vec3::Zero();
        for (std::size_t i = 0; i < loop.size(); ++i) {
            const Vec3 v0 = edge_mid(loop[i]);
            const Vec3 v1 = edge_mid(loop[(i + 1) % loop.size()]);
            newell += v0.cross(v1);
        }
        if (newell.dot(ref) < 0.0) std::reverse(loop.begin(), loop.end());

        for (std::size_t i = 1; i + 1 < loop.size(); ++i) {
            out.push_back(loop[0]);
            out.push_back(loop[i]);
            out.push_back(loop[i + 1]);
        }
    }
    return out;
}

const CaseTable& case_table() {
    static const CaseTable table = [] {
        CaseTable t;
        for (int mask = 0; mask < 256; ++mask) t.tris[static_cast<std::size_t>(mask)] = build_config(mask);
        return t;
    }();
    return table;
}

} // namespace

TsdfVolume fuse(const std::vector<DepthView>& views, const VolumeConfig& cfg) {
    if (views.empty()) fail(Errc::EmptyVolume, "no depth maps to fuse");

    // Bounds from aerial views (all views if the set has no aerial ones).
    bool any_aerial = false;
    for (const auto& v : views)
        if (v.cam.view_class == ViewClass::Aerial) any_aerial = true;

    Vec3 lo = Vec3::Constant(1e30), hi = Vec3::Constant(-1e30);
    for (const auto& v : views) {
        if (any_aerial && v.cam.view_class != ViewClass::Aerial) continue;
        const Mat3 rot_t = v.cam.R.transpose();
        for (int r = 0; r < v.cam.height; ++r) {
            for (int c = 0; c < v.cam.width; ++c) {
                const double d = v.depth[static_cast<std::size_t>(r) * v.cam.width + c];
                if (d <= 0.0) continue;
                const Vec3 p = rot_t * (d * v.cam.pixel_ray_cam(c + 0.5, r + 0.5) - v.cam.t);
                lo = lo.cwiseMin(p);
                hi = hi.cwiseMax(p);
            }
        }
    }
    if (!(lo.x() <= hi.x())) fail(Errc::EmptyVolume, "no valid depth samples");
    const Vec3 pad = cfg.padding * (hi - lo);
    lo -= pad;
    hi += pad;

    TsdfVolume vol;
    const Vec3 extent = hi - lo;
    vol.voxel_size = extent.maxCoeff() / static_cast<double>(cfg.resolution);
    vol.origin = lo;
    for (int a = 0; a < 3; ++a)
        vol.dims[a] = static_cast<int>(std::ceil(extent[a] / vol.voxel_size)) + 1;
    vol.truncation = cfg.truncation_voxels * vol.voxel_size;
    const std::size_t n_nodes = static_cast<std::size_t>(vol.dims.x()) * vol.dims.y() * vol.dims.z();
    vol.sdf.assign(n_nodes, 0.f);
    vol.weight.assign(n_nodes, 0.f);

    // Parallel over x-slabs; per node the views accumulate in fixed order.
    parallel_for(vol.dims.x(), [&](int x) {
        for (int y = 0; y < vol.dims.y(); ++y) {
            for (int z = 0; z < vol.dims.z(); ++z) {
                const Vec3 p = vol.node_pos(x, y, z);
                const std::size_t idx = vol.index(x, y, z);
                for (const auto& v : views) {
                    const Vec3 pc = v.cam.to_camera(p);
                    if (pc.z() <= 1e-6) continue;
                    const Vec2 px = v.cam.project_cam(pc);
                    const int c = static_cast<int>(std::floor(px.x()));
                    const int r = static_cast<int>(std::floor(px.y()));
                    if (c < 0 || c >= v.cam.width || r < 0 || r >= v.cam.height) continue;
                    const double d = v.depth[static_cast<std::size_t>(r) * v.cam.width + c];
                    if (d <= 0.0) continue;
                    const double sd = d - pc.z();
                    if (sd < -vol.truncation) continue; // hidden beyond the band
                    const double obs = std::min(1.0, sd / vol.truncation);
                    const float w = vol.weight[idx];
                    vol.sdf[idx] = static_cast<float>((vol.sdf[idx] * w + obs) / (w + 1.f));
                    vol.weight[idx] = w + 1.f;
                }
            }
        }
    });

    bool any = false;
    for (float w : vol.weight)
        if (w > 0.f) any = true;
    if (!any) fail(Errc::EmptyVolume, "no voxel received any observation");
    return vol;
}

Mesh marching_cubes(const TsdfVolume& vol) {
    Mesh mesh;
    const auto& table = case_table();
    std::unordered_map<std::uint64_t, int> edge_vertex;

    auto gradient = [&](int x, int y, int z) {
        auto sample = [&](int ax, int ay, int az) {
            ax = std::clamp(ax, 0, vol.dims.x() - 1);
            ay = std::clamp(ay, 0, vol.dims.y() - 1);
            az = std::clamp(az, 0, vol.dims.z() - 1);
            return static_cast<double>(vol.sdf[vol.index(ax, ay, az)]);
        };
        return Vec3(sample(x + 1, y, z) - sample(x - 1, y, z), sample(x, y + 1, z) - sample(x, y - 1, z),
                    sample(x, y, z + 1) - sample(x, y, z - 1));
    };

    auto edge_key = [&](int x, int y, int z, int axis) {
        return ((static_cast<std::uint64_t>(x) * static_cast<std::uint64_t>(vol.dims.y() + 1) + y) *
                    static_cast<std::uint64_t>(vol.dims.z() + 1) +
                z) * 3 + static_cast<std::uint64_t>(axis);
    };

    for (int x = 0; x + 1 < vol.dims.x(); ++x) {
        for (int y = 0; y + 1 < vol.dims.y(); ++y) {
            for (int z = 0; z + 1 < vol.dims.z(); ++z) {
                double s[8];
                bool observed = true;
                int mask = 0;
                for (int cidx = 0; cidx < 8; ++cidx) {
                    const std::size_t idx =
                        vol.index(x + kCorner[cidx][0], y + kCorner[cidx][1], z + kCorner[cidx][2]);
                    if (vol.weight[idx] <= 0.f) {
                        observed = false;
                        break;
                    }
                    s[cidx] = vol.sdf[idx];
                    if (s[cidx] < 0.0) mask |= 1 << cidx;
                }
                if (!observed || mask == 0 || mask == 255) continue;

                const auto& tris = table.tris[static_cast<std::size_t>(mask)];
                int vidx[12];
                for (int e = 0; e < 12; ++e) vidx[e] = -1;
                for (int t : tris) {
                    if (vidx[t] >= 0) continue;
                    const int bx = x + kEdgeBaseAxis[t][0];
                    const int by = y + kEdgeBaseAxis[t][1];
                    const int bz = z + kEdgeBaseAxis[t][2];
                    const int axis = kEdgeBaseAxis[t][3];
                    const std::uint64_t key = edge_key(bx, by, bz, axis);
                    auto it = edge_vertex.find(key);
                    if (it != edge_vertex.end()) {
                        vidx[t] = it->second;
                        continue;
                    }
                    int ex = bx, ey = by, ez = bz;
                    int fx = bx + (axis == 0), fy = by + (axis == 1), fz = bz + (axis == 2);
                    const double s0 = vol.sdf[vol.index(ex, ey, ez)];
                    const double s1 = vol.sdf[vol.index(fx, fy, fz)];
                    const double tt = s0 == s1 ? 0.5 : s0 / (s0 - s1);
                    const Vec3 p0 = vol.node_pos(ex, ey, ez);
                    const Vec3 p1 = vol.node_pos(fx, fy, fz);
                    const Vec3 pos = p0 + clampd(tt, 0.0, 1.0) * (p1 - p0);
                    Vec3 nrm = (1.0 - tt) * gradient(ex, ey, ez) + tt * gradient(fx, fy, fz);
                    const double len = nrm.norm();
                    nrm = len > 1e-12 ? Vec3(nrm / len) : Vec3(0, 0, 1);
                    const int nv = static_cast<int>(mesh.vertices.size());
                    mesh.vertices.push_back(pos);
                    mesh.normals.push_back(nrm);
                    edge_vertex.emplace(key, nv);
                    vidx[t] = nv;
                }
                for (std::size_t i = 0; i + 2 < tris.size(); i += 3)
                    mesh.triangles.push_back({vidx[tris[i]], vidx[tris[i + 1]], vidx[tris[i + 2]]});
            }
        }
    }
    return mesh;
}

void write_mesh_ply(const std::string& path, const Mesh& mesh) {
    io::PlyTable t;
    t.element = "vertex";
    t.props = {{"x", io::PlyType::F32},  {"y", io::PlyType::F32},  {"z", io::PlyType::F32},
               {"nx", io::PlyType::F32}, {"ny", io::PlyType::F32}, {"nz", io::PlyType::F32}};
    t.resize_rows(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        for (int a = 0; a < 3; ++a) t.at(i, static_cast<std::size_t>(a)) = mesh.vertices[i][a];
        for (int a = 0; a < 3; ++a) t.at(i, static_cast<std::size_t>(3 + a)) = mesh.normals[i][a];
    }
    io::PlyFile f;
    f.tables.push_back(std::move(t));
    f.faces = mesh.triangles;
    io::write_ply(path, f);
}

} // namespace skyline
