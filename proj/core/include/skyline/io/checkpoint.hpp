#pragma once

#include <string>

#include "skyline/decoder.hpp"
#include "skyline/scene.hpp"

namespace skyline {

class Trainer;

// Checkpoint layout: <dir>/anchors.ply (documented external format),
// <dir>/state.bin (bank, optimizer moments, rng, schedule position),
// <dir>/meta.json (human-readable summary).
struct TrainerIo {
    static void save(const Trainer& t, const std::string& dir);
    static void load(Trainer& t, const std::string& dir);
};

namespace io {

// Anchor checkpoint PLY: per-vertex x/y/z (double), level (int), stage_tag
// (uchar), f_0..f_{F-1}, scaling_0..2 (log), offset_0..{3k-1}, all double,
// binary little-endian.
void write_anchor_ply(const std::string& path, const AnchorField& field);
AnchorField read_anchor_ply(const std::string& path, const LodConfig& lod);

// Community 3D-GS layout: float32 x/y/z, nx/ny/nz, f_dc_0..2, f_rest_0..23,
// opacity (logit), scale_0..2 (log), rot_0..3.
void write_baked_ply(const std::string& path, const BakedGaussianSet& baked);
BakedGaussianSet read_baked_ply(const std::string& path, PrimitiveMode mode);

// Full hybrid model without optimizer state (for render/eval/bake tools).
void save_model(const std::string& dir, const AnchorField& field, const DecoderBank& bank);
void load_model(const std::string& dir, AnchorField& field, DecoderBank& bank);

} // namespace io
} // namespace skyline
