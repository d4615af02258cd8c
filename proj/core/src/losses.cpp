#include "skyline/losses.hpp"

#include <algorithm>

namespace skyline {

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr double kLogClamp = 1e-6;

const double* gauss_window() {
    static double w[kWin];
    static bool init = [] {
        const double sigma = 1.5;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - kHalf;
            w[i] = std::exp(-0.5 * d * d / (sigma * sigma));
        }
        return true;
    }();
    (void)init;
    return w;
}

void check_shapes(const RenderOutput& out, const SupervisionBundle& sup) {
    if (out.width != sup.width || out.height != sup.height)
        fail(Errc::ShapeMismatch, "render/supervision sizes differ");
    if (sup.gt_rgb.size() != out.npix() * 3) fail(Errc::ShapeMismatch, "gt_rgb size");
    if (sup.has_depth() && sup.gt_inv_depth.size() != out.npix()) fail(Errc::ShapeMismatch, "gt_inv_depth size");
    if (sup.has_mask() && sup.mask.size() != out.npix()) fail(Errc::ShapeMismatch, "mask size");
}

} // namespace

double ssim_masked(const double* a, const double* b, const unsigned char* mask, int width, int height,
                   int channels, double* grad_a, double upstream) {
    const double* g = gauss_window();
    double total = 0.0;
    long count = 0;

    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const std::size_t center = static_cast<std::size_t>(r) * width + c;
            if (mask && mask[center]) continue;
            for (int ch = 0; ch < channels; ++ch) {
                double sw = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
                const int r0 = std::max(0, r - kHalf), r1 = std::min(height - 1, r + kHalf);
                const int c0 = std::max(0, c - kHalf), c1 = std::min(width - 1, c + kHalf);
                for (int rr = r0; rr <= r1; ++rr) {
                    for (int cc = c0; cc <= c1; ++cc) {
                        const std::size_t q = static_cast<std::size_t>(rr) * width + cc;
                        if (mask && mask[q]) continue;
                        const double w = g[rr - r + kHalf] * g[cc - c + kHalf];
                        const double x = a[q * channels + ch];
                        const double y = b[q * channels + ch];
                        sw += w;
                        sx += w * x;
                        sy += w * y;
                        sxx += w * x * x;
                        syy += w * y * y;
                        sxy += w * x * y;
                    }
                }
                const double mx = sx / sw, my = sy / sw;
                const double vx = sxx / sw - mx * mx;
                const double vy = syy / sw - my * my;
                const double cov = sxy / sw - mx * my;
                const double A1 = 2.0 * mx * my + kC1, A2 = 2.0 * cov + kC2;
                const double B1 = mx * mx + my * my + kC1, B2 = vx + vy + kC2;
                const double s = (A1 * A2) / (B1 * B2);
                total += s;
                ++count;

                if (grad_a) {
                    const double dmx = (2.0 * my * A2) / (B1 * B2) - s * 2.0 * mx / B1;
                    const double dvx = -s / B2;
                    const double dcov = 2.0 * A1 / (B1 * B2);
                    for (int rr = r0; rr <= r1; ++rr) {
                        for (int cc = c0; cc <= c1; ++cc) {
                            const std::size_t q = static_cast<std::size_t>(rr) * width + cc;
                            if (mask && mask[q]) continue;
                            const double wq = g[rr - r + kHalf] * g[cc - c + kHalf] / sw;
                            const double x = a[q * channels + ch];
                            const double y = b[q * channels + ch];
                            grad_a[q * channels + ch] +=
                                upstream * (dmx * wq + dvx * 2.0 * wq * (x - mx) + dcov * wq * (y - my));
                        }
                    }
                }
            }
        }
    }
    if (count == 0) fail(Errc::AllMasked, "every pixel is masked");
    // Gradients accumulate upstream * d(sum of per-window SSIM)/d(a); the
    // caller folds the 1/count of the mean into `upstream`.
    return total / static_cast<double>(count);
}

double psnr(const std::vector<double>& a, const std::vector<double>& b,
            const std::vector<unsigned char>& mask, int width, int height) {
    const std::size_t npix = static_cast<std::size_t>(width) * height;
    if (a.size() != npix * 3 || b.size() != npix * 3) fail(Errc::ShapeMismatch, "psnr image sizes differ");
    double se = 0.0;
    long count = 0;
    for (std::size_t p = 0; p < npix; ++p) {
        if (!mask.empty() && mask[p]) continue;
        for (int ch = 0; ch < 3; ++ch) {
            const double d = a[p * 3 + ch] - b[p * 3 + ch];
            se += d * d;
            ++count;
        }
    }
    if (count == 0) fail(Errc::AllMasked, "every pixel is masked");
    const double mse = se / static_cast<double>(count);
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const std::vector<double>& a, const std::vector<double>& b,
            const std::vector<unsigned char>& mask, int width, int height) {
    const std::size_t npix = static_cast<std::size_t>(width) * height;
    if (a.size() != npix * 3 || b.size() != npix * 3) fail(Errc::ShapeMismatch, "ssim image sizes differ");
    return ssim_masked(a.data(), b.data(), mask.empty() ? nullptr : mask.data(), width, height, 3);
}

LossResult loss_render(const RenderOutput& out, const SupervisionBundle& sup, const LossConfig& cfg,
                       long iter, const std::vector<NeuralGaussian>* gaussians,
                       const std::vector<GaussRenderStat>* stats, PrimitiveMode mode) {
    check_shapes(out, sup);
    const std::size_t npix = out.npix();
    const double inv_hw = 1.0 / static_cast<double>(npix);

    LossResult res;
    res.grad = RenderGrad::zeros(out.width, out.height);

    // L1 over unmasked pixels
    long valid = 0;
    for (std::size_t p = 0; p < npix; ++p)
        if (!sup.masked(p)) ++valid;
    if (valid > 0) {
        const double inv_n = 1.0 / static_cast<double>(valid * 3);
        double l1 = 0.0;
        for (std::size_t p = 0; p < npix; ++p) {
            if (sup.masked(p)) continue;
            for (int ch = 0; ch < 3; ++ch) {
                const double d = out.rgb[p * 3 + ch] - sup.gt_rgb[p * 3 + ch];
                l1 += std::abs(d) * inv_n;
                res.grad.d_rgb[p * 3 + ch] += (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * inv_n;
            }
        }
        res.terms.l1 = l1;

        // SSIM term: lambda_ssim * (1 - SSIM)
        const unsigned char* m = sup.has_mask() ? sup.mask.data() : nullptr;
        res.terms.ssim_value =
            ssim_masked(out.rgb.data(), sup.gt_rgb.data(), m, out.width, out.height, 3,
                        res.grad.d_rgb.data(), -cfg.lambda_ssim / static_cast<double>(valid * 3));
        res.terms.ssim_term = cfg.lambda_ssim * (1.0 - res.terms.ssim_value);
    }

    // Volume regularizer over visible Gaussians
    if (gaussians && stats && cfg.lambda_vol != 0.0) {
        res.d_scale.assign(gaussians->size(), Vec3::Zero());
        const int ncomp = mode == PrimitiveMode::Disk2D ? 2 : 3;
        long nvis = 0;
        for (const auto& st : *stats)
            if (st.projected) ++nvis;
        if (nvis > 0) {
            double vol = 0.0;
            const double inv_vis = 1.0 / static_cast<double>(nvis);
            for (std::size_t i = 0; i < gaussians->size(); ++i) {
                if (!(*stats)[i].projected) continue;
                const Vec3& s = (*gaussians)[i].s;
                double prod = 1.0;
                for (int j = 0; j < ncomp; ++j) prod *= s[j];
                vol += prod * inv_vis;
                for (int j = 0; j < ncomp; ++j)
                    res.d_scale[i][j] += cfg.lambda_vol * inv_vis * prod / s[j];
            }
            res.terms.vol = vol;
        }
    }

    // Depth term on disparity, 1/hw normalization, activation-gated
    if (sup.has_depth() && iter >= cfg.depth_start_iter) {
        const double lam = cfg.lambda_d(iter);
        double ld = 0.0;
        for (std::size_t p = 0; p < npix; ++p) {
            if (sup.masked(p)) continue;
            const double gt = sup.gt_inv_depth[p];
            if (gt <= 0.0) continue;
            const double z = out.depth[p];
            const double pred = z > 0.0 ? 1.0 / z : 0.0;
            const double d = pred - gt;
            ld += std::abs(d) * inv_hw;
            if (z > 0.0) {
                const double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                res.grad.d_depth[p] += lam * sgn * (-1.0 / (z * z)) * inv_hw;
            }
        }
        res.terms.depth = ld * lam;
    }

    // Opacity/mask regularizer on the alpha map
    if (cfg.lambda_o != 0.0) {
        double lo = 0.0;
        for (std::size_t p = 0; p < npix; ++p) {
            const double raw = out.alpha[p];
            const double sc = clampd(raw, kLogClamp, 1.0 - kLogClamp);
            const double m = sup.masked(p) ? 1.0 : 0.0;
            lo += (-sc * std::log(sc) - m * std::log(1.0 - sc)) * inv_hw;
            if (raw > kLogClamp && raw < 1.0 - kLogClamp)
                res.grad.d_alpha[p] += cfg.lambda_o * inv_hw * (-std::log(sc) - 1.0 + m / (1.0 - sc));
        }
        res.terms.opacity = lo * cfg.lambda_o;
    }

    res.terms.total =
        res.terms.l1 + res.terms.ssim_term + cfg.lambda_vol * res.terms.vol + res.terms.depth + res.terms.opacity;
    return res;
}

LossResult loss_surface(const RenderOutput& out, const SupervisionBundle& sup, const LossConfig& cfg,
                        long iter, PrimitiveMode mode, const Camera& cam,
                        const std::vector<NeuralGaussian>* gaussians,
                        const std::vector<GaussRenderStat>* stats) {
    if (mode != PrimitiveMode::Disk2D) fail(Errc::ModeMismatch, "surface loss requires Disk2D rendering");
    LossResult res = loss_render(out, sup, cfg, iter, gaussians, stats, mode);
    if (iter < cfg.normal_start_iter || cfg.lambda_n == 0.0) return res;

    const int W = out.width, H = out.height;
    const double inv_hw = 1.0 / static_cast<double>(out.npix());
    const double lam = cfg.lambda_n;

    auto point_at = [&](int r, int c) {
        return out.depth[static_cast<std::size_t>(r) * W + c] * cam.pixel_ray_cam(c + 0.5, r + 0.5);
    };

    double ln = 0.0;
    for (int r = 1; r + 1 < H; ++r) {
        for (int c = 1; c + 1 < W; ++c) {
            const std::size_t pix = static_cast<std::size_t>(r) * W + c;
            if (sup.masked(pix)) continue;
            if (out.depth[pix] <= 0.0 || out.depth[pix - 1] <= 0.0 || out.depth[pix + 1] <= 0.0 ||
                out.depth[pix - W] <= 0.0 || out.depth[pix + W] <= 0.0)
                continue;
            const Vec3 nr(out.normal[pix * 3 + 0], out.normal[pix * 3 + 1], out.normal[pix * 3 + 2]);
            if (nr.squaredNorm() == 0.0) continue;

            const Vec3 dx = point_at(r, c + 1) - point_at(r, c - 1);
            const Vec3 dy = point_at(r + 1, c) - point_at(r - 1, c);
            const Vec3 u = dx.cross(dy);
            const double len = u.norm();
            if (len < 1e-12) continue;
            const double sign = u.z() > 0.0 ? -1.0 : 1.0;
            const Vec3 nh = u / len;
            const Vec3 nd = sign * nh;

            ln += (1.0 - nr.dot(nd)) * inv_hw;

            // d/d rendered normal
            const Vec3 g_nr = -lam * inv_hw * nd;
            res.grad.d_normal[pix * 3 + 0] += g_nr.x();
            res.grad.d_normal[pix * 3 + 1] += g_nr.y();
            res.grad.d_normal[pix * 3 + 2] += g_nr.z();

            // d/d depth through the cross-product normal
            const Vec3 g_nd = -lam * inv_hw * nr;
            const Vec3 g_u = sign * (g_nd - nh * nh.dot(g_nd)) / len;
            const Vec3 g_dx = dy.cross(g_u);
            const Vec3 g_dy = g_u.cross(dx);
            res.grad.d_depth[pix + 1] += cam.pixel_ray_cam(c + 1.5, r + 0.5).dot(g_dx);
            res.grad.d_depth[pix - 1] -= cam.pixel_ray_cam(c - 0.5, r + 0.5).dot(g_dx);
            res.grad.d_depth[pix + W] += cam.pixel_ray_cam(c + 0.5, r + 1.5).dot(g_dy);
            res.grad.d_depth[pix - W] -= cam.pixel_ray_cam(c + 0.5, r - 0.5).dot(g_dy);
        }
    }
    res.terms.normal = lam * ln;
    res.terms.total += res.terms.normal;
    return res;
}

} // namespace skyline
