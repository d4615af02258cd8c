#pragma once

#include <string>

#include "skyline/trainer.hpp"

namespace skyline {

// Procedural desk-scale scene: smooth-shaded boxes on an infinite ground
// plane, ringed by aerial and street cameras, with analytic depth. Everything
// acceptance-level runs offline on this.
struct ToyOptions {
    int image_size = 64;
    int n_aerial = 12;
    int n_street = 12;
    int n_points = 2500;
    std::uint64_t seed = 7;
    int supersample = 2;   // AA factor for ground-truth RGB
    double extent = 8.0;   // half-size of the populated ground region
    int n_boxes = 3;
    bool with_depth = true;
};

Scene make_toy_scene(const ToyOptions& opts = {});

// Analytic ground-truth renderer for arbitrary cameras of the same scene
// (used as an independent oracle by tests).
struct ToyGeometry;
const ToyGeometry& toy_geometry(const ToyOptions& opts);
void render_toy_view(const ToyOptions& opts, const Camera& cam, std::vector<double>* rgb,
                     std::vector<double>* depth);

// Writes the dataset to disk: manifest.json, images/*.png, depth/*.pfm,
// points.ply.
void write_toy_dataset(const std::string& dir, const ToyOptions& opts = {});

} // namespace skyline
