#pragma once

#include <array>
#include <string>
#include <vector>

#include "skyline/camera.hpp"
#include "skyline/error.hpp"
#include "skyline/math.hpp"

namespace skyline {

// Node-centered TSDF grid. sdf holds the truncation-normalized signed
// distance in [-1, 1]; values are meaningful only where weight > 0.
struct TsdfVolume {
    Vec3 origin = Vec3::Zero();
    double voxel_size = 0.0;
    Eigen::Vector3i dims = Eigen::Vector3i::Zero(); // node counts per axis
    std::vector<float> sdf;
    std::vector<float> weight;
    double truncation = 0.0;

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(x) * dims.y() + y) * dims.z() + z;
    }
    Vec3 node_pos(int x, int y, int z) const {
        return origin + voxel_size * Vec3(x, y, z);
    }
};

struct VolumeConfig {
    int resolution = 128;          // cells along the largest axis (desk scale <= 256)
    double truncation_voxels = 4.0;
    double padding = 0.05;         // fraction of the extent added per side
};

struct DepthView {
    Camera cam;
    std::vector<double> depth; // h*w, meters; 0 = invalid
};

// Projective TSDF fusion, weight 1 per observation. Volume bounds come from
// the aerial views' valid depth range (all views when no aerial present).
TsdfVolume fuse(const std::vector<DepthView>& views, const VolumeConfig& cfg);

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Vec3> normals;
    std::vector<std::array<int, 3>> triangles;
};

// Iso-level 0 extraction over cells whose 8 corners are all observed, linear
// interpolation along edges, vertex normals from the sdf gradient. The
// 256-entry case table is generated once by walking iso-segments over the
// cube faces, which keeps ambiguous faces consistent between neighbors.
Mesh marching_cubes(const TsdfVolume& vol);

void write_mesh_ply(const std::string& path, const Mesh& mesh);

} // namespace skyline
