#pragma once

#include <cmath>
#include <vector>

#include "skyline/raster.hpp"

namespace skyline {

struct LossConfig {
    double lambda_ssim = 0.2;
    double lambda_vol = 0.01;
    double lambda_o = 0.05;
    double lambda_n = 0.05;
    double lambda_d_init = 1.0;
    double lambda_d_final = 0.01;
    long depth_start_iter = 500;
    long normal_start_iter = 7000;
    long total_iters = 100000; // T for the depth-weight decay

    double lambda_d(long iter) const {
        const double t = static_cast<double>(iter) / static_cast<double>(total_iters);
        return lambda_d_init * std::pow(lambda_d_final / lambda_d_init, t);
    }
};

// Ground truth for one view. mask = 1 marks transient/sky pixels whose photo
// terms are suppressed and whose alpha is pushed toward zero.
struct SupervisionBundle {
    int width = 0, height = 0;
    std::vector<double> gt_rgb;            // h*w*3 in [0,1]
    std::vector<double> gt_inv_depth;      // h*w disparity; empty = no depth; 0 = invalid pixel
    std::vector<unsigned char> mask;       // h*w binary; empty = no mask

    bool has_depth() const { return !gt_inv_depth.empty(); }
    bool has_mask() const { return !mask.empty(); }
    bool masked(std::size_t pix) const { return has_mask() && mask[pix] != 0; }
};

struct LossTerms {
    double l1 = 0, ssim_term = 0, vol = 0, depth = 0, opacity = 0, normal = 0;
    double total = 0;
    double ssim_value = 1.0; // raw SSIM for logging
};

struct LossResult {
    LossTerms terms;
    RenderGrad grad;
    std::vector<Vec3> d_scale; // per input Gaussian, from the volume term
};

// L_R = L1 + l_ssim (1 - SSIM) + l_vol L_vol + l_d(t) L_d + l_o L_o.
// gaussians/stats feed the volume term (visible = projected); pass nullptr to
// drop it (e.g. metric-only evaluation).
LossResult loss_render(const RenderOutput& out, const SupervisionBundle& sup, const LossConfig& cfg,
                       long iter, const std::vector<NeuralGaussian>* gaussians = nullptr,
                       const std::vector<GaussRenderStat>* stats = nullptr,
                       PrimitiveMode mode = PrimitiveMode::Ellipsoid3D);

// L_S = L_R + l_n L_n; Disk2D only (rendered normals required). The camera
// back-projects the depth map for the consistency target.
LossResult loss_surface(const RenderOutput& out, const SupervisionBundle& sup, const LossConfig& cfg,
                        long iter, PrimitiveMode mode, const Camera& cam,
                        const std::vector<NeuralGaussian>* gaussians = nullptr,
                        const std::vector<GaussRenderStat>* stats = nullptr);

// Metrics over mask == 0 pixels; identical images report 100 dB / SSIM 1.
double psnr(const std::vector<double>& a, const std::vector<double>& b,
            const std::vector<unsigned char>& mask, int width, int height);
double ssim(const std::vector<double>& a, const std::vector<double>& b,
            const std::vector<unsigned char>& mask, int width, int height);

// Weighted single-scale SSIM (11x11 Gaussian window, sigma 1.5) with masked
// pixels excluded from both window statistics and the center average. When
// grad_a is non-null, adds upstream * d(mean SSIM)/d(a).
double ssim_masked(const double* a, const double* b, const unsigned char* mask, int width, int height,
                   int channels, double* grad_a = nullptr, double upstream = 1.0);

} // namespace skyline
