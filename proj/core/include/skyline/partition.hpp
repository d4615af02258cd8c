#pragma once

#include <string>
#include <vector>

#include "skyline/decoder.hpp"
#include "skyline/trainer.hpp"

namespace skyline {

struct PartitionPlan {
    int grid_x = 1, grid_y = 1; // m x n cells over the camera bounding rectangle
    double margin = 0.0;
    double visibility_threshold = 0.25;
    Bounds2 camera_bbox;
    std::vector<Chunk> chunks; // row-major: index = row * grid_x + col
    std::vector<std::string> warnings;

    int linear_index(const Chunk& c) const { return c.grid_row * grid_x + c.grid_col; }
};

// Uniform grid over ground-projected camera positions; cores tile the
// rectangle exactly, expanded bounds add `margin` (default 10% of the chunk
// diagonal when margin < 0). Camera membership in expanded bounds is closed.
PartitionPlan partition(const std::vector<Camera>& cameras, const PointCloud& points, int m, int n,
                        double margin = -1.0, double visibility_threshold = 0.25);

struct AugmentReport {
    int cameras_added = 0;
    int points_added = 0;
    std::vector<int> missing_depth; // street camera ids skipped with a warning
};

// Aerial cameras outside the chunk join when their frustum sees at least
// visibility_threshold of the chunk seed points; street cameras with depth
// back-project every 8th pixel into extra seed points.
AugmentReport augment_chunk(Chunk& chunk, const Scene& scene, double visibility_threshold,
                            int stride = 8);

struct ChunkModel {
    int index = -1;
    bool ok = false;
    std::string error;
    AnchorField field;
    DecoderBank bank;
    BakedGaussianSet baked;
};

struct ChunkTrainResult {
    std::vector<ChunkModel> models; // aligned with plan.chunks
    MatX appearance_warmstart;
};

// Independent per-chunk training, seed = base seed XOR linear chunk index,
// appearance table warm-started by a short densification-free run on the full
// scene and copied into every chunk. Failures are isolated per chunk.
ChunkTrainResult train_chunks(const PartitionPlan& plan, const Scene& scene, const TrainOptions& base_opt,
                              int workers, long appearance_warmup_iters);

// Core-ownership filter + concatenation.
BakedGaussianSet merge(const PartitionPlan& plan, const std::vector<BakedGaussianSet>& per_chunk);

// Plan manifest (JSON): grid, bounds, per-chunk camera ids and seed-point
// files (written next to the manifest).
void save_plan(const std::string& path, const PartitionPlan& plan);
PartitionPlan load_plan(const std::string& path);

} // namespace skyline
