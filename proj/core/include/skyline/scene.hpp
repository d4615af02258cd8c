#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "skyline/camera.hpp"
#include "skyline/error.hpp"
#include "skyline/math.hpp"
#include "skyline/rng.hpp"

namespace skyline {

enum class PrimitiveMode { Ellipsoid3D, Disk2D };
// Fine marks the cohort that is trainable in the current stage; the stage
// transition retags everything Coarse and freezes it.
enum class StageTag { Coarse, Fine };

struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors; // optional, same size or empty

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }
};

struct LodConfig {
    int levels = 1;        // K
    int aerial_levels = 1; // K_aerial, active in stage 1
    double rd_quantile = 0.999;
    double base_voxel = 1.0; // level-0 voxel edge, meters
    std::vector<double> level_distance_cutoffs; // size K, strictly decreasing

    double voxel_size(int level) const { return base_voxel / static_cast<double>(1 << level); }
    bool valid() const {
        if (levels < 1 || aerial_levels < 1 || aerial_levels > levels) return false;
        if (!(rd_quantile > 0.0 && rd_quantile < 1.0) || base_voxel <= 0.0) return false;
        if (static_cast<int>(level_distance_cutoffs.size()) != levels) return false;
        for (std::size_t i = 1; i < level_distance_cutoffs.size(); ++i)
            if (!(level_distance_cutoffs[i] < level_distance_cutoffs[i - 1])) return false;
        return true;
    }
};

// Densification accumulators, reset after every densify event.
struct DensifyAccum {
    double grad_max = 0.0;
    Vec3 grad_argmax_pos = Vec3::Zero(); // position of the emitted Gaussian with max gradient
    double radius_max = 0.0;
    double opacity_sum = 0.0;
    std::int64_t contrib_count = 0;

    void reset() { *this = DensifyAccum{}; }
    double mean_opacity() const { return contrib_count > 0 ? opacity_sum / static_cast<double>(contrib_count) : 0.0; }
};

struct Anchor {
    Vec3 position = Vec3::Zero();
    int level = 0;
    StageTag stage_tag = StageTag::Fine;
    VecX feature;                // F, learnable
    Vec3 log_scaling = Vec3::Zero(); // learnable; scaling = exp(log_scaling)
    std::vector<Vec3> offsets;   // k, learnable

    Vec3 scaling() const { return log_scaling.array().exp(); }
};

// Decoded renderable primitive. In Disk2D mode s.z() is ignored and the two
// tangential radii are s.x(), s.y(); the disk normal is R(q) * e_z.
struct NeuralGaussian {
    Vec3 mu = Vec3::Zero();
    Vec4 q = Vec4(1, 0, 0, 0); // unit (w, x, y, z)
    Vec3 s = Vec3::Ones();
    double sigma = 1.0;  // opacity in [0, 1]
    Vec3 color = Vec3::Zero();
    int source_anchor = -1;
    int level = 0;
};

struct Chunk {
    Bounds2 core_bounds;
    Bounds2 expanded_bounds;
    std::vector<int> camera_ids;
    PointCloud seed_points;
    int grid_row = 0, grid_col = 0;
    // Core ownership is half-open per axis, except that the last cell of each
    // axis closes the global boundary so the camera rectangle stays covered.
    bool closed_max_x = false, closed_max_y = false;

    bool core_owns(const Vec2& ground) const {
        bool in_x = ground.x() >= core_bounds.min.x() &&
                    (ground.x() < core_bounds.max.x() || (closed_max_x && ground.x() == core_bounds.max.x()));
        bool in_y = ground.y() >= core_bounds.min.y() &&
                    (ground.y() < core_bounds.max.y() || (closed_max_y && ground.y() == core_bounds.max.y()));
        return in_x && in_y;
    }
};

inline Vec2 ground_projection(const Vec3& p) { return {p.x(), p.y()}; }

struct ValidationReport {
    int aerial_count = 0;
    int street_count = 0;
    Bounds2 ground_bbox;
    std::vector<std::string> violations;

    bool ok() const { return violations.empty(); }
    std::string to_string() const;
};

ValidationReport validate_scene(const std::vector<Camera>& cameras, const PointCloud& points,
                                bool require_two_stage = true);

// LOD-leveled scene skeleton. Single-writer; safe to share read-only.
class AnchorField {
public:
    LodConfig lod;
    int offsets_per_anchor = 10; // k
    int feature_dim = 32;        // F
    std::vector<Anchor> anchors;
    std::vector<DensifyAccum> stats; // parallel to anchors

    static std::int64_t voxel_coord(double x, double voxel) { return static_cast<std::int64_t>(std::floor(x / voxel)); }
    static std::uint64_t voxel_key(const Vec3& p, double voxel);
    static Vec3 voxel_center(const Vec3& p, double voxel);

    bool occupied(int level, const Vec3& p) const {
        return occupied_[static_cast<std::size_t>(level)].count(voxel_key(p, lod.voxel_size(level))) > 0;
    }

    // Appends an anchor at the voxel center containing p (feature zeroed,
    // offsets uniform in [-0.5, 0.5], scaling = level voxel size). Returns the
    // new index, or -1 if that voxel already holds an anchor at this level.
    int add_anchor(const Vec3& p, int level, StageTag tag, Pcg32& rng);

    // Removes anchors flagged in `remove` (size = anchors.size()).
    void remove_anchors(const std::vector<char>& remove);

    void rebuild_occupancy();
    std::size_t size() const { return anchors.size(); }
    std::vector<int> level_histogram() const;

private:
    std::vector<std::unordered_set<std::uint64_t>> occupied_;
};

// Voxelizes points at levels [0, init_levels): one anchor per occupied voxel
// per level, capped at 4x the point count by dropping the finest levels first.
// init_levels <= 0 means all lod.levels.
AnchorField init_anchors(const PointCloud& points, const LodConfig& lod, int k, int feature_dim, Pcg32& rng,
                         int init_levels = 0);

} // namespace skyline
