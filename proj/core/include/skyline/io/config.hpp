#pragma once

#include <string>

#include "skyline/trainer.hpp"

namespace skyline::io {

// Run configuration: one JSON file whose keys mirror the StageSchedule,
// LossConfig and TrainOptions field names, plus chunking controls.
struct RunConfig {
    TrainOptions train;
    double desk_scale = 1.0;
    int chunks_x = 1, chunks_y = 1;
    double margin = -1.0; // <0: 10% of the chunk diagonal
    double visibility_threshold = 0.25;
    int workers = 0; // 0: worker_count()
    long appearance_warmup_iters = 100;

    // Applies desk_scale to every iteration count, preserving ratios.
    void apply_scale();
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);

} // namespace skyline::io
