#pragma once

#include <optional>
#include <vector>

#include "skyline/camera.hpp"
#include "skyline/error.hpp"
#include "skyline/math.hpp"
#include "skyline/scene.hpp"

namespace skyline {

// Screen-space footprint of one Gaussian. 3D mode carries the EWA conic used
// for evaluation; 2D-disk mode evaluates weights by exact ray/plane
// intersection and keeps the linearized conic for radius bookkeeping only.
struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 conic = Mat2::Identity(); // inverse of the (dilated) screen covariance, px^-2
    double depth = 0.0;            // camera-space z of the center, meters
    Vec3 normal_cam = Vec3::Zero(); // unit, flipped toward the camera (2D mode)
    double radius = 0.0;           // 3 * max eigen-std, pixels
    int gaussian_index = -1;

    // Internals shared by forward and backward.
    Vec3 p_cam = Vec3::Zero();
    Mat2 cov2d = Mat2::Identity(); // dilated screen covariance (3D mode)
    Vec3 a1 = Vec3::Zero();        // scaled tangent axes, camera space (2D mode)
    Vec3 a2 = Vec3::Zero();
    Vec3 n_plane = Vec3::Zero();   // unit plane normal, camera space, unflipped
    double axis1_sq = 1.0, axis2_sq = 1.0; // |a1|^2, |a2|^2
    double plane_offset = 0.0;             // n_plane . p_cam
    double normal_sign = 1.0;
    int col0 = 0, col1 = -1, row0 = 0, row1 = -1; // inclusive pixel bounds
};

struct GaussRenderStat {
    bool projected = false;   // survived culling
    bool contributed = false; // blended into at least one pixel
    double radius = 0.0;      // projected radius, pixels
    double sigma = 0.0;       // decoded opacity, echoed for densification stats
};

struct RenderOutput {
    int width = 0, height = 0;
    std::vector<double> rgb;       // h*w*3, [0,1] not enforced (linear blend)
    std::vector<double> alpha;     // h*w
    std::vector<double> depth;     // h*w, alpha-weighted mean z; 0 where alpha == 0
    std::vector<double> inv_depth; // h*w, 1/depth where alpha > 0
    std::vector<double> normal;    // h*w*3; blended unit normals (2D) or depth-gradient normals (3D)
    std::vector<GaussRenderStat> stats; // per input Gaussian

    std::size_t npix() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
};

struct RenderContext {
    PrimitiveMode mode = PrimitiveMode::Ellipsoid3D;
    int width = 0, height = 0;
    Camera cam;
    std::vector<NeuralGaussian> gaussians; // input copy, original order
    std::vector<Splat2D> splats;           // depth-sorted survivors
    std::vector<std::vector<int>> tile_splats; // per tile, indices into splats (sorted)
    int tiles_x = 0, tiles_y = 0;
    // Raw per-pixel accumulators (before normalization).
    std::vector<double> sum_rgb;    // h*w*3
    std::vector<double> sum_alpha;  // h*w
    std::vector<double> sum_depth;  // h*w
    std::vector<double> sum_normal; // h*w*3
    std::vector<double> final_T;    // h*w
    std::vector<int> n_contrib;     // h*w
};

struct RenderGrad {
    std::vector<double> d_rgb;    // h*w*3
    std::vector<double> d_alpha;  // h*w
    std::vector<double> d_depth;  // h*w
    std::vector<double> d_normal; // h*w*3 (ignored in 3D mode)

    static RenderGrad zeros(int width, int height);
};

struct GaussianGrads {
    std::vector<Vec3> d_mu;
    std::vector<Vec4> d_q;
    std::vector<Vec3> d_s;
    std::vector<double> d_sigma;
    std::vector<Vec3> d_color;
    std::vector<double> screen_grad; // |dL/d mean2d| per Gaussian, for densification
};

struct RasterConfig {
    int tile = 16;
    double t_threshold = 1e-4;   // stop blending once transmittance would drop below
    double alpha_clamp = 0.99;
    double near_depth = 0.2;     // cull centers at or behind this depth
    double support_rho = 9.0;    // 3-sigma support cutoff on the squared Mahalanobis radius
    double dilation = 0.3;       // screen-space low-pass, px^2
    double min_ray_depth = 0.01; // per-pixel disk intersections closer than this are dropped
};

const RasterConfig& raster_config();

// EWA projection (3D) / exact planar projection (2D). Returns nullopt when the
// center is at or behind near_depth or the 3-sigma footprint misses the image.
std::optional<Splat2D> project(const NeuralGaussian& g, const Camera& cam, PrimitiveMode mode);

RenderOutput rasterize(const std::vector<NeuralGaussian>& gaussians, const Camera& cam, PrimitiveMode mode,
                       RenderContext* ctx = nullptr);

// Exact reverse of the composite chain. grad shapes must match ctx.
GaussianGrads rasterize_backward(const RenderContext& ctx, const RenderGrad& grad);

// Camera-space normals from central finite differences of back-projected
// depth; zero where the pixel or any 4-neighbor has zero depth.
std::vector<double> depth_to_normal(const std::vector<double>& depth, const Camera& cam);

} // namespace skyline
