#pragma once

#include <string>
#include <vector>

#include "skyline/camera.hpp"
#include "skyline/scene.hpp"

namespace skyline::io {

struct ColmapClassRule {
    std::string aerial_substring = "aerial";
    std::string street_substring = "street";
};

// COLMAP text model: cameras.txt (PINHOLE / SIMPLE_PINHOLE), images.txt,
// points3D.txt. View classes come from image-name substrings; a name matching
// neither rule raises ClassTagMissing.
struct ColmapModel {
    std::vector<Camera> cameras; // one per image, sorted by image name
    std::vector<std::string> image_names;
    PointCloud points;
};

ColmapModel read_colmap_text(const std::string& dir, const ColmapClassRule& rule = {});

} // namespace skyline::io
