#pragma once

#include <string>

#include "skyline/trainer.hpp"

namespace skyline::io {

// manifest.json, either {"type":"transforms", "frames":[...]} with explicit
// per-frame intrinsics/pose/class, or {"type":"colmap","colmap_dir":...} plus
// class-substring rules. Every 32nd image of the name-sorted list is held out
// unless overridden by "holdout_every".
struct DatasetManifest {
    std::string root;
    std::string path; // manifest file
    int holdout_every = 32;
};

Scene load_dataset(const std::string& manifest_path);

// Writes a transforms-style manifest for the scene (poses at full precision).
void save_manifest(const std::string& path, const Scene& scene,
                   const std::vector<std::string>& image_names);

// Least-squares disparity alignment: fits scale/offset so that
// scale * raw + offset matches SfM disparities at projected points, one
// robust refit after dropping the top 5% residuals.
struct DepthAlignment {
    double scale = 1.0;
    double offset = 0.0;
    int samples = 0;
};
DepthAlignment align_disparity(const std::vector<double>& raw, int width, int height, const Camera& cam,
                               const PointCloud& sfm_points);

} // namespace skyline::io
