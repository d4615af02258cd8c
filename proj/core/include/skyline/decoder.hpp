#pragma once

#include <vector>

#include "skyline/raster.hpp"
#include "skyline/rng.hpp"
#include "skyline/scene.hpp"
#include "skyline/sh.hpp"

namespace skyline {

// Two-layer perceptron, tanh hidden layer, linear output; heads apply their
// own activations on top.
struct Mlp {
    MatX W1; // hidden x in
    VecX b1;
    MatX W2; // out x hidden
    VecX b2;

    void init(int in, int hidden, int out, Pcg32& rng);
    VecX forward(const VecX& x, VecX* hidden_act = nullptr) const;
    // Returns dL/dx; accumulates parameter grads when grads != nullptr.
    VecX backward(const VecX& x, const VecX& hidden_act, const VecX& d_out, struct MlpGrads* grads) const;
    std::size_t param_count() const;
};

struct MlpGrads {
    MatX dW1;
    VecX db1;
    MatX dW2;
    VecX db2;

    void zero_like(const Mlp& m);
    void add(const MlpGrads& other);
};

struct DecoderBank {
    PrimitiveMode mode = PrimitiveMode::Ellipsoid3D;
    int k = 10;
    int feature_dim = 32;
    int embed_dim = 16;
    int hidden = 32;
    Mlp mlp_opacity; // k outputs, sigmoid
    Mlp mlp_color;   // 3k outputs, sigmoid
    Mlp mlp_cov;     // (4 + scale_comps) k outputs; quat normalized, scales exp-bounded
    MatX appearance; // n_images x embed_dim learnable rows

    int scale_comps() const { return mode == PrimitiveMode::Disk2D ? 2 : 3; }
    int input_dim() const { return feature_dim + 3 + 1 + embed_dim; }
    int cov_stride() const { return 4 + scale_comps(); }

    void init(PrimitiveMode m, int k_, int feature_dim_, int embed_dim_, int n_images, Pcg32& rng);
};

constexpr double kOpacityCull = 0.005; // decoded Gaussians at or below are dropped
constexpr double kScaleRawClamp = 8.0; // exp bound on raw scale outputs

struct DecodeEntry {
    int anchor_index = -1;
    VecX x;
    VecX h_op, h_col, h_cov;
    VecX raw_op, raw_col, raw_cov;
    std::vector<int> emitted; // per slot: output gaussian index or -1
};

struct DecodeContext {
    PrimitiveMode mode = PrimitiveMode::Ellipsoid3D;
    int k = 0;
    int appearance_id = 0;
    std::vector<DecodeEntry> entries;
    std::vector<std::pair<int, int>> origin; // output gaussian -> (entry, slot)
    std::size_t bank_stamp = 0;              // guards decode_backward pairing
};

// Anchors visible from cam: level < active_levels and, for level > 0,
// distance below the per-level cutoff.
std::vector<int> select_anchors(const AnchorField& field, const Camera& cam, int active_levels);

std::vector<NeuralGaussian> decode(const AnchorField& field, const std::vector<int>& anchor_indices,
                                   const DecoderBank& bank, const Camera& cam, int appearance_id,
                                   DecodeContext* ctx = nullptr);

struct DecoderGrads {
    std::vector<VecX> d_feature;             // aligned with field.anchors
    std::vector<Vec3> d_log_scaling;
    std::vector<std::vector<Vec3>> d_offsets;
    MlpGrads g_opacity, g_color, g_cov;
    MatX d_appearance;

    void init(const AnchorField& field, const DecoderBank& bank);
};

// Exact chain rule through decode. Gradients land for every parameter;
// freezing is enforced later at the optimizer step.
void decode_backward(const AnchorField& field, const DecoderBank& bank, const DecodeContext& ctx,
                     const GaussianGrads& upstream, DecoderGrads& out);

struct BakedGaussian {
    Vec3 mu = Vec3::Zero();
    Vec4 q = Vec4(1, 0, 0, 0);
    Vec3 s = Vec3::Ones();
    double sigma = 0.0;
    Eigen::Matrix<double, 3, kShCoeffs> sh = Eigen::Matrix<double, 3, kShCoeffs>::Zero();
    int level = 0;
    double fit_rms = 0.0;
};

struct BakedGaussianSet {
    PrimitiveMode mode = PrimitiveMode::Ellipsoid3D;
    std::vector<BakedGaussian> gaussians;
};

// Converts the hybrid model to explicit Gaussians: opacity/covariance frozen
// at an overhead canonical view, color least-squares fit to degree-2 SH over
// 64 sphere directions. reference is the viewpoint distances are taken from.
BakedGaussianSet bake_explicit(const AnchorField& field, const DecoderBank& bank, const Vec3& reference);

// SH colors evaluated for cam (community convention: direction from camera to
// Gaussian center), clamped to [0,1].
std::vector<NeuralGaussian> baked_view_gaussians(const BakedGaussianSet& baked, const Camera& cam);
RenderOutput render_baked(const BakedGaussianSet& baked, const Camera& cam, RenderContext* ctx = nullptr);

} // namespace skyline
