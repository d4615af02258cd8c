#include "skyline/raster.hpp"

#include <algorithm>
#include <cmath>

#include "skyline/parallel.hpp"

namespace skyline {

namespace {

constexpr double kEps = 1e-12;

struct Contribution {
    int splat = 0;   // index into ctx.splats
    double alpha = 0;
    double weight = 0; // G before opacity
    bool clamped = false;
    double T = 1.0;  // transmittance in front of this contribution
};

// Perspective Jacobian at a camera-space point, rows are d(pixel)/d(p_cam).
inline Eigen::Matrix<double, 2, 3> perspective_jacobian(const Camera& cam, const Vec3& p) {
    Eigen::Matrix<double, 2, 3> J;
    const double iz = 1.0 / p.z();
    J << cam.fx * iz, 0.0, -cam.fx * p.x() * iz * iz,
        0.0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
    return J;
}

// Pixel-center ranges covered by [lo, hi] in continuous pixel coordinates,
// padded by one pixel against boundary rounding.
inline void pixel_range(double lo, double hi, int n, int& i0, int& i1) {
    i0 = static_cast<int>(std::floor(lo - 0.5)) - 1;
    i1 = static_cast<int>(std::ceil(hi - 0.5)) + 1;
    i0 = std::max(i0, 0);
    i1 = std::min(i1, n - 1);
}

// Exact pixel-space bounding box of the 2D-disk support
//   {pixel : u^2 + v^2 <= rho},
// which is a conic region because (u, v) are ratios of functions linear in the
// pixel ray. Returns false when the region is empty; full = true means the
// region is unbounded (fall back to the whole image).
bool disk_support_bounds(const Splat2D& sp, const Camera& cam, double rho, double& x_lo, double& x_hi,
                         double& y_lo, double& y_hi, bool& full) {
    full = false;
    const Vec3 g1 = (sp.plane_offset * sp.a1 - sp.a1.dot(sp.p_cam) * sp.n_plane) / sp.axis1_sq;
    const Vec3 g2 = (sp.plane_offset * sp.a2 - sp.a2.dot(sp.p_cam) * sp.n_plane) / sp.axis2_sq;
    const Vec3 g3 = std::sqrt(rho) * sp.n_plane;

    // ray(x, y) = (x/fx, y/fy, 1) + (-cx/fx, -cy/fy, 0) evaluated at pixel (x, y)
    auto to_pixel_affine = [&](const Vec3& g, Vec2& p, double& e) {
        p = Vec2(g.x() / cam.fx, g.y() / cam.fy);
        e = g.z() - g.x() * cam.cx / cam.fx - g.y() * cam.cy / cam.fy;
    };
    Vec2 p1, p2, p3;
    double e1, e2, e3;
    to_pixel_affine(g1, p1, e1);
    to_pixel_affine(g2, p2, e2);
    to_pixel_affine(g3, p3, e3);

    const Mat2 A = p1 * p1.transpose() + p2 * p2.transpose() - p3 * p3.transpose();
    const Vec2 b = 2.0 * (e1 * p1 + e2 * p2 - e3 * p3);
    const double c = e1 * e1 + e2 * e2 - e3 * e3;

    if (!(A(0, 0) > 0.0) || !(A.determinant() > 0.0)) {
        full = true; // not an ellipse: near-edge-on or camera inside the disk plane
        return true;
    }
    auto axis_range = [&](double a11, double a12, double a22, double b1, double b2, double& lo,
                          double& hi) {
        // range of x with some y satisfying Q <= 0
        const double qa = 4.0 * (a12 * a12 - a11 * a22);
        const double qb = 4.0 * (a12 * b2 - a22 * b1);
        const double qc = b2 * b2 - 4.0 * a22 * c;
        const double disc = qb * qb - 4.0 * qa * qc;
        if (disc < 0.0) return false; // empty support
        const double sq = std::sqrt(disc);
        lo = (-qb + sq) / (2.0 * qa); // qa < 0 for an ellipse
        hi = (-qb - sq) / (2.0 * qa);
        return true;
    };
    if (!axis_range(A(0, 0), A(0, 1), A(1, 1), b.x(), b.y(), x_lo, x_hi)) return false;
    if (!axis_range(A(1, 1), A(0, 1), A(0, 0), b.y(), b.x(), y_lo, y_hi)) return false;
    return true;
}

// Weight of a splat at a pixel center; zero outside the 3-sigma support.
// aux captures the quantities the backward pass reuses.
struct EvalAux {
    double rho = 0.0;
    Vec2 d = Vec2::Zero();       // 3D mode: pixel - mean2d
    double u = 0.0, v = 0.0;     // 2D mode: disk coordinates
    double t = 0.0;              // 2D mode: ray depth of the intersection
    Vec3 ray = Vec3::Zero();
};

inline double eval_weight(const Splat2D& sp, const Camera& cam, PrimitiveMode mode, double px, double py,
                          EvalAux* aux) {
    const RasterConfig& rc = raster_config();
    if (mode == PrimitiveMode::Ellipsoid3D) {
        const Vec2 d(px - sp.mean2d.x(), py - sp.mean2d.y());
        const double rho = d.dot(sp.conic * d);
        if (rho > rc.support_rho) return 0.0;
        if (aux) {
            aux->rho = rho;
            aux->d = d;
        }
        return std::exp(-0.5 * rho);
    }
    const Vec3 r = cam.pixel_ray_cam(px, py);
    const double denom = sp.n_plane.dot(r);
    if (std::abs(denom) < kEps) return 0.0;
    const double t = sp.plane_offset / denom;
    if (t <= rc.min_ray_depth) return 0.0;
    const Vec3 w = t * r - sp.p_cam;
    const double u = sp.a1.dot(w) / sp.axis1_sq;
    const double v = sp.a2.dot(w) / sp.axis2_sq;
    const double rho = u * u + v * v;
    if (rho > rc.support_rho) return 0.0;
    if (aux) {
        aux->rho = rho;
        aux->u = u;
        aux->v = v;
        aux->t = t;
        aux->ray = r;
    }
    return std::exp(-0.5 * rho);
}

} // namespace

const RasterConfig& raster_config() {
    static const RasterConfig cfg{};
    return cfg;
}

RenderGrad RenderGrad::zeros(int width, int height) {
    RenderGrad g;
    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    g.d_rgb.assign(n * 3, 0.0);
    g.d_alpha.assign(n, 0.0);
    g.d_depth.assign(n, 0.0);
    g.d_normal.assign(n * 3, 0.0);
    return g;
}

std::optional<Splat2D> project(const NeuralGaussian& g, const Camera& cam, PrimitiveMode mode) {
    if (!g.mu.allFinite() || !g.q.allFinite() || !g.s.allFinite() || !std::isfinite(g.sigma) ||
        !g.color.allFinite())
        fail(Errc::NonFiniteInput, "gaussian has non-finite fields");

    const RasterConfig& rc = raster_config();
    Splat2D sp;
    sp.gaussian_index = 0;
    sp.p_cam = cam.to_camera(g.mu);
    if (sp.p_cam.z() <= rc.near_depth) return std::nullopt;
    sp.depth = sp.p_cam.z();
    sp.mean2d = cam.project_cam(sp.p_cam);

    const Vec4 q = normalize_quat(g.q);
    const Mat3 rot_local = quat_to_rot(q);
    const Mat3 rot_cam = cam.R * rot_local;
    const auto J = perspective_jacobian(cam, sp.p_cam);

    double x_lo, x_hi, y_lo, y_hi;
    if (mode == PrimitiveMode::Ellipsoid3D) {
        const Vec3 s2 = g.s.cwiseProduct(g.s);
        const Mat3 cov_cam = rot_cam * s2.asDiagonal() * rot_cam.transpose();
        sp.cov2d = J * cov_cam * J.transpose() + rc.dilation * Mat2::Identity();
        const double det = sp.cov2d.determinant();
        if (!(det > 0.0)) return std::nullopt;
        sp.conic = sp.cov2d.inverse();
        const double half = 0.5 * (sp.cov2d(0, 0) + sp.cov2d(1, 1));
        const double lmax = half + std::sqrt(std::max(0.0, half * half - det));
        sp.radius = 3.0 * std::sqrt(lmax);
        const double hx = 3.0 * std::sqrt(sp.cov2d(0, 0));
        const double hy = 3.0 * std::sqrt(sp.cov2d(1, 1));
        x_lo = sp.mean2d.x() - hx;
        x_hi = sp.mean2d.x() + hx;
        y_lo = sp.mean2d.y() - hy;
        y_hi = sp.mean2d.y() + hy;
    } else {
        sp.a1 = g.s.x() * rot_cam.col(0);
        sp.a2 = g.s.y() * rot_cam.col(1);
        sp.n_plane = rot_cam.col(2);
        sp.axis1_sq = sp.a1.squaredNorm();
        sp.axis2_sq = sp.a2.squaredNorm();
        sp.plane_offset = sp.n_plane.dot(sp.p_cam);
        sp.normal_sign = sp.n_plane.dot(sp.p_cam) > 0.0 ? -1.0 : 1.0;
        sp.normal_cam = sp.normal_sign * sp.n_plane;

        // Linearized footprint for the radius stat and the conic invariant.
        Eigen::Matrix<double, 2, 2> lin;
        lin.col(0) = J * sp.a1;
        lin.col(1) = J * sp.a2;
        sp.cov2d = lin * lin.transpose() + rc.dilation * Mat2::Identity();
        sp.conic = sp.cov2d.inverse();
        const double det = sp.cov2d.determinant();
        const double half = 0.5 * (sp.cov2d(0, 0) + sp.cov2d(1, 1));
        const double lmax = half + std::sqrt(std::max(0.0, half * half - det));
        sp.radius = 3.0 * std::sqrt(lmax);

        bool full = false;
        if (!disk_support_bounds(sp, cam, rc.support_rho, x_lo, x_hi, y_lo, y_hi, full))
            return std::nullopt; // empty support
        if (full) {
            x_lo = 0.0;
            x_hi = static_cast<double>(cam.width);
            y_lo = 0.0;
            y_hi = static_cast<double>(cam.height);
        }
    }

    pixel_range(x_lo, x_hi, cam.width, sp.col0, sp.col1);
    pixel_range(y_lo, y_hi, cam.height, sp.row0, sp.row1);
    if (sp.col0 > sp.col1 || sp.row0 > sp.row1) return std::nullopt;
    if (x_hi < 0.0 || x_lo > static_cast<double>(cam.width) || y_hi < 0.0 ||
        y_lo > static_cast<double>(cam.height))
        return std::nullopt;
    return sp;
}

RenderOutput rasterize(const std::vector<NeuralGaussian>& gaussians, const Camera& cam, PrimitiveMode mode,
                       RenderContext* ctx_out) {
    const RasterConfig& rc = raster_config();
    const int W = cam.width, H = cam.height;
    const std::size_t npix = static_cast<std::size_t>(W) * static_cast<std::size_t>(H);

    RenderContext local;
    RenderContext& ctx = ctx_out ? *ctx_out : local;
    ctx = RenderContext{};
    ctx.mode = mode;
    ctx.width = W;
    ctx.height = H;
    ctx.cam = cam;
    ctx.gaussians = gaussians;

    RenderOutput out;
    out.width = W;
    out.height = H;
    out.rgb.assign(npix * 3, 0.0);
    out.alpha.assign(npix, 0.0);
    out.depth.assign(npix, 0.0);
    out.inv_depth.assign(npix, 0.0);
    out.normal.assign(npix * 3, 0.0);
    out.stats.assign(gaussians.size(), GaussRenderStat{});

    ctx.splats.reserve(gaussians.size());
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        auto sp = project(gaussians[i], cam, mode);
        if (!sp) continue;
        sp->gaussian_index = static_cast<int>(i);
        out.stats[i].projected = true;
        out.stats[i].radius = sp->radius;
        out.stats[i].sigma = gaussians[i].sigma;
        ctx.splats.push_back(*sp);
    }
    std::sort(ctx.splats.begin(), ctx.splats.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.gaussian_index < b.gaussian_index;
    });

    ctx.tiles_x = (W + rc.tile - 1) / rc.tile;
    ctx.tiles_y = (H + rc.tile - 1) / rc.tile;
    const int n_tiles = ctx.tiles_x * ctx.tiles_y;
    ctx.tile_splats.assign(static_cast<std::size_t>(n_tiles), {});
    for (std::size_t si = 0; si < ctx.splats.size(); ++si) {
        const Splat2D& sp = ctx.splats[si];
        const int tx0 = sp.col0 / rc.tile, tx1 = sp.col1 / rc.tile;
        const int ty0 = sp.row0 / rc.tile, ty1 = sp.row1 / rc.tile;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                ctx.tile_splats[static_cast<std::size_t>(ty * ctx.tiles_x + tx)].push_back(static_cast<int>(si));
    }

    ctx.sum_rgb.assign(npix * 3, 0.0);
    ctx.sum_alpha.assign(npix, 0.0);
    ctx.sum_depth.assign(npix, 0.0);
    ctx.sum_normal.assign(npix * 3, 0.0);
    ctx.final_T.assign(npix, 1.0);
    ctx.n_contrib.assign(npix, 0);

    // Per-tile contributed flags, OR-reduced afterwards in tile order so the
    // result never depends on the worker count.
    std::vector<std::vector<char>> tile_contrib(static_cast<std::size_t>(n_tiles));

    parallel_for(n_tiles, [&](int tile_idx) {
        const auto& list = ctx.tile_splats[static_cast<std::size_t>(tile_idx)];
        auto& contrib_flags = tile_contrib[static_cast<std::size_t>(tile_idx)];
        contrib_flags.assign(list.size(), 0);
        if (list.empty()) return;
        const int tx = tile_idx % ctx.tiles_x, ty = tile_idx / ctx.tiles_x;
        const int c_begin = tx * rc.tile, c_end = std::min(W, c_begin + rc.tile);
        const int r_begin = ty * rc.tile, r_end = std::min(H, r_begin + rc.tile);
        for (int r = r_begin; r < r_end; ++r) {
            for (int c = c_begin; c < c_end; ++c) {
                const double px = c + 0.5, py = r + 0.5;
                const std::size_t pix = static_cast<std::size_t>(r) * W + c;
                double T = 1.0;
                Vec3 sum_c = Vec3::Zero(), sum_n = Vec3::Zero();
                double sum_a = 0.0, sum_d = 0.0;
                int count = 0;
                for (std::size_t k = 0; k < list.size(); ++k) {
                    const Splat2D& sp = ctx.splats[static_cast<std::size_t>(list[k])];
                    if (c < sp.col0 || c > sp.col1 || r < sp.row0 || r > sp.row1) continue;
                    const double G = eval_weight(sp, cam, mode, px, py, nullptr);
                    if (G <= 0.0) continue;
                    const NeuralGaussian& g = ctx.gaussians[static_cast<std::size_t>(sp.gaussian_index)];
                    const double alpha = std::min(g.sigma * G, rc.alpha_clamp);
                    const double test_T = T * (1.0 - alpha);
                    if (test_T < rc.t_threshold) break; // terminate, do not blend
                    const double w = alpha * T;
                    sum_c += w * g.color;
                    sum_a += w;
                    sum_d += w * sp.depth;
                    if (mode == PrimitiveMode::Disk2D) sum_n += w * sp.normal_cam;
                    T = test_T;
                    ++count;
                    if (w > 0.0) contrib_flags[k] = 1;
                }
                ctx.sum_rgb[pix * 3 + 0] = sum_c.x();
                ctx.sum_rgb[pix * 3 + 1] = sum_c.y();
                ctx.sum_rgb[pix * 3 + 2] = sum_c.z();
                ctx.sum_alpha[pix] = sum_a;
                ctx.sum_depth[pix] = sum_d;
                ctx.sum_normal[pix * 3 + 0] = sum_n.x();
                ctx.sum_normal[pix * 3 + 1] = sum_n.y();
                ctx.sum_normal[pix * 3 + 2] = sum_n.z();
                ctx.final_T[pix] = T;
                ctx.n_contrib[pix] = count;
            }
        }
    });

    for (int tile_idx = 0; tile_idx < n_tiles; ++tile_idx) {
        const auto& list = ctx.tile_splats[static_cast<std::size_t>(tile_idx)];
        const auto& flags = tile_contrib[static_cast<std::size_t>(tile_idx)];
        for (std::size_t k = 0; k < list.size(); ++k)
            if (flags[k]) {
                const int gi = ctx.splats[static_cast<std::size_t>(list[k])].gaussian_index;
                out.stats[static_cast<std::size_t>(gi)].contributed = true;
            }
    }

    for (std::size_t pix = 0; pix < npix; ++pix) {
        for (int ch = 0; ch < 3; ++ch) out.rgb[pix * 3 + ch] = ctx.sum_rgb[pix * 3 + ch];
        const double a = ctx.sum_alpha[pix];
        out.alpha[pix] = a;
        if (a > 0.0) {
            const double d = ctx.sum_depth[pix] / a;
            out.depth[pix] = d;
            out.inv_depth[pix] = d > 0.0 ? 1.0 / d : 0.0;
            if (mode == PrimitiveMode::Disk2D) {
                Vec3 n(ctx.sum_normal[pix * 3 + 0], ctx.sum_normal[pix * 3 + 1], ctx.sum_normal[pix * 3 + 2]);
                const double len = n.norm();
                if (len > 1e-9) {
                    n /= len;
                    out.normal[pix * 3 + 0] = n.x();
                    out.normal[pix * 3 + 1] = n.y();
                    out.normal[pix * 3 + 2] = n.z();
                }
            }
        }
    }
    if (mode == PrimitiveMode::Ellipsoid3D) out.normal = depth_to_normal(out.depth, cam);
    return out;
}

GaussianGrads rasterize_backward(const RenderContext& ctx, const RenderGrad& grad) {
    const RasterConfig& rc = raster_config();
    const int W = ctx.width, H = ctx.height;
    const std::size_t npix = static_cast<std::size_t>(W) * static_cast<std::size_t>(H);
    if (grad.d_rgb.size() != npix * 3 || grad.d_alpha.size() != npix || grad.d_depth.size() != npix ||
        grad.d_normal.size() != npix * 3)
        fail(Errc::ContextMismatch, "gradient buffers do not match the forward context");

    const std::size_t n_gauss = ctx.gaussians.size();
    GaussianGrads gg;
    gg.d_mu.assign(n_gauss, Vec3::Zero());
    gg.d_q.assign(n_gauss, Vec4::Zero());
    gg.d_s.assign(n_gauss, Vec3::Zero());
    gg.d_sigma.assign(n_gauss, 0.0);
    gg.d_color.assign(n_gauss, Vec3::Zero());
    gg.screen_grad.assign(n_gauss, 0.0);

    struct SplatAcc {
        Vec2 d_mean2d = Vec2::Zero();
        Mat2 d_conic = Mat2::Zero();
        double d_sigma = 0.0;
        Vec3 d_color = Vec3::Zero();
        double d_z = 0.0;
        Vec3 d_nblend = Vec3::Zero();
        Vec3 d_m = Vec3::Zero();
        Vec3 d_a1 = Vec3::Zero();
        Vec3 d_a2 = Vec3::Zero();
        Vec3 d_nplane = Vec3::Zero();
    };
    const int n_tiles = ctx.tiles_x * ctx.tiles_y;
    std::vector<std::vector<SplatAcc>> tile_acc(static_cast<std::size_t>(n_tiles));
    const bool disk = ctx.mode == PrimitiveMode::Disk2D;

    parallel_for(n_tiles, [&](int tile_idx) {
        const auto& list = ctx.tile_splats[static_cast<std::size_t>(tile_idx)];
        auto& acc = tile_acc[static_cast<std::size_t>(tile_idx)];
        acc.assign(list.size(), SplatAcc{});
        if (list.empty()) return;
        const int tx = tile_idx % ctx.tiles_x, ty = tile_idx / ctx.tiles_x;
        const int c_begin = tx * rc.tile, c_end = std::min(W, c_begin + rc.tile);
        const int r_begin = ty * rc.tile, r_end = std::min(H, r_begin + rc.tile);

        std::vector<Contribution> contribs;
        std::vector<EvalAux> auxes;
        std::vector<std::size_t> local_of; // contribution -> index in `list`
        contribs.reserve(64);

        for (int r = r_begin; r < r_end; ++r) {
            for (int c = c_begin; c < c_end; ++c) {
                const std::size_t pix = static_cast<std::size_t>(r) * W + c;
                if (ctx.n_contrib[pix] == 0) continue;
                const double px = c + 0.5, py = r + 0.5;

                // Upstream gradients on the raw per-pixel sums.
                Vec3 dS_c(grad.d_rgb[pix * 3 + 0], grad.d_rgb[pix * 3 + 1], grad.d_rgb[pix * 3 + 2]);
                double dS_a = grad.d_alpha[pix];
                double dS_d = 0.0;
                Vec3 dS_n = Vec3::Zero();
                const double S_a = ctx.sum_alpha[pix];
                if (S_a > 0.0) {
                    const double gd = grad.d_depth[pix];
                    if (gd != 0.0) {
                        dS_d = gd / S_a;
                        dS_a += -ctx.sum_depth[pix] / (S_a * S_a) * gd;
                    }
                    if (disk) {
                        Vec3 dn(grad.d_normal[pix * 3 + 0], grad.d_normal[pix * 3 + 1],
                                grad.d_normal[pix * 3 + 2]);
                        if (!dn.isZero(0.0)) {
                            Vec3 Sn(ctx.sum_normal[pix * 3 + 0], ctx.sum_normal[pix * 3 + 1],
                                    ctx.sum_normal[pix * 3 + 2]);
                            const double len = Sn.norm();
                            if (len > 1e-9) {
                                const Vec3 nh = Sn / len;
                                dS_n = (dn - nh * nh.dot(dn)) / len;
                            }
                        }
                    }
                }
                if (dS_c.isZero(0.0) && dS_a == 0.0 && dS_d == 0.0 && dS_n.isZero(0.0)) continue;

                // Re-walk the forward pass for this pixel.
                contribs.clear();
                auxes.clear();
                local_of.clear();
                double T = 1.0;
                for (std::size_t k = 0; k < list.size(); ++k) {
                    const Splat2D& sp = ctx.splats[static_cast<std::size_t>(list[k])];
                    if (c < sp.col0 || c > sp.col1 || r < sp.row0 || r > sp.row1) continue;
                    EvalAux aux;
                    const double G = eval_weight(sp, ctx.cam, ctx.mode, px, py, &aux);
                    if (G <= 0.0) continue;
                    const NeuralGaussian& g = ctx.gaussians[static_cast<std::size_t>(sp.gaussian_index)];
                    const double raw_alpha = g.sigma * G;
                    const double alpha = std::min(raw_alpha, rc.alpha_clamp);
                    const double test_T = T * (1.0 - alpha);
                    if (test_T < rc.t_threshold) break;
                    contribs.push_back({list[k], alpha, G, raw_alpha >= rc.alpha_clamp, T});
                    auxes.push_back(aux);
                    local_of.push_back(k);
                    T = test_T;
                }

                // Reverse sweep with suffix sums.
                Vec3 suf_c = Vec3::Zero(), suf_n = Vec3::Zero();
                double suf_a = 0.0, suf_d = 0.0;
                for (std::size_t ci = contribs.size(); ci-- > 0;) {
                    const Contribution& cb = contribs[ci];
                    const EvalAux& aux = auxes[ci];
                    const Splat2D& sp = ctx.splats[static_cast<std::size_t>(cb.splat)];
                    const NeuralGaussian& g = ctx.gaussians[static_cast<std::size_t>(sp.gaussian_index)];
                    SplatAcc& sa = acc[local_of[ci]];
                    const double w = cb.alpha * cb.T;
                    const double inv_om = 1.0 / (1.0 - cb.alpha);

                    double d_alpha = dS_c.dot(g.color) * cb.T - dS_c.dot(suf_c) * inv_om;
                    d_alpha += dS_a * (cb.T - suf_a * inv_om);
                    d_alpha += dS_d * (sp.depth * cb.T - suf_d * inv_om);
                    if (disk) d_alpha += dS_n.dot(sp.normal_cam) * cb.T - dS_n.dot(suf_n) * inv_om;

                    sa.d_color += dS_c * w;
                    sa.d_z += dS_d * w;
                    if (disk) sa.d_nblend += dS_n * w;

                    suf_c += w * g.color;
                    suf_a += w;
                    suf_d += w * sp.depth;
                    if (disk) suf_n += w * sp.normal_cam;

                    if (cb.clamped) continue; // alpha stuck at the clamp
                    sa.d_sigma += cb.weight * d_alpha;
                    const double dG = g.sigma * d_alpha;
                    const double g_rho = -0.5 * cb.weight * dG; // dL/d rho

                    if (!disk) {
                        const Vec2 cd = sp.conic * aux.d;
                        sa.d_mean2d += -2.0 * g_rho * cd;
                        sa.d_conic += g_rho * (aux.d * aux.d.transpose());
                    } else {
                        const double gu = 2.0 * aux.u * g_rho;
                        const double gv = 2.0 * aux.v * g_rho;
                        const Vec3& r_ray = aux.ray;
                        const double denom = sp.n_plane.dot(r_ray);
                        const Vec3 wvec = aux.t * r_ray - sp.p_cam;
                        const double a1r = sp.a1.dot(r_ray);
                        const double a2r = sp.a2.dot(r_ray);
                        // d u / d m, d u / d a1, d u / d n (and the v analogues)
                        sa.d_m += gu * ((a1r / denom) * sp.n_plane - sp.a1) / sp.axis1_sq;
                        sa.d_m += gv * ((a2r / denom) * sp.n_plane - sp.a2) / sp.axis2_sq;
                        sa.d_a1 += gu * (wvec - 2.0 * aux.u * sp.a1) / sp.axis1_sq;
                        sa.d_a2 += gv * (wvec - 2.0 * aux.v * sp.a2) / sp.axis2_sq;
                        sa.d_nplane += -(gu * a1r / sp.axis1_sq + gv * a2r / sp.axis2_sq) * wvec / denom;
                    }
                }
            }
        }
    });

    // Deterministic reduction in tile order, then per-splat chain rule.
    std::vector<SplatAcc> splat_acc(ctx.splats.size());
    for (int tile_idx = 0; tile_idx < n_tiles; ++tile_idx) {
        const auto& list = ctx.tile_splats[static_cast<std::size_t>(tile_idx)];
        const auto& acc = tile_acc[static_cast<std::size_t>(tile_idx)];
        for (std::size_t k = 0; k < list.size(); ++k) {
            SplatAcc& dst = splat_acc[static_cast<std::size_t>(list[k])];
            const SplatAcc& src = acc[k];
            dst.d_mean2d += src.d_mean2d;
            dst.d_conic += src.d_conic;
            dst.d_sigma += src.d_sigma;
            dst.d_color += src.d_color;
            dst.d_z += src.d_z;
            dst.d_nblend += src.d_nblend;
            dst.d_m += src.d_m;
            dst.d_a1 += src.d_a1;
            dst.d_a2 += src.d_a2;
            dst.d_nplane += src.d_nplane;
        }
    }

    parallel_for(static_cast<int>(ctx.splats.size()), [&](int si) {
        const Splat2D& sp = ctx.splats[static_cast<std::size_t>(si)];
        const SplatAcc& sa = splat_acc[static_cast<std::size_t>(si)];
        const std::size_t gi = static_cast<std::size_t>(sp.gaussian_index);
        const NeuralGaussian& g = ctx.gaussians[gi];
        const Camera& cam = ctx.cam;

        gg.d_sigma[gi] += sa.d_sigma;
        gg.d_color[gi] += sa.d_color;

        const Vec4 q = normalize_quat(g.q);
        const Mat3 rot_local = quat_to_rot(q);
        const Mat3 rot_cam = cam.R * rot_local;
        const auto J = perspective_jacobian(cam, sp.p_cam);

        Vec3 d_pcam = Vec3(0, 0, sa.d_z);
        Mat3 d_rot_cam = Mat3::Zero();
        Vec3 d_s = Vec3::Zero();

        if (ctx.mode == PrimitiveMode::Ellipsoid3D) {
            // mean2d chain
            const double iz = 1.0 / sp.p_cam.z();
            d_pcam.x() += sa.d_mean2d.x() * cam.fx * iz;
            d_pcam.y() += sa.d_mean2d.y() * cam.fy * iz;
            d_pcam.z() += -sa.d_mean2d.x() * cam.fx * sp.p_cam.x() * iz * iz -
                          sa.d_mean2d.y() * cam.fy * sp.p_cam.y() * iz * iz;

            // conic -> covariance chain
            const Mat2 d_conic_sym = 0.5 * (sa.d_conic + sa.d_conic.transpose());
            const Mat2 d_cov2d = -sp.conic * d_conic_sym * sp.conic;
            const Vec3 s2 = g.s.cwiseProduct(g.s);
            const Mat3 cov_cam = rot_cam * s2.asDiagonal() * rot_cam.transpose();
            const Mat3 d_cov_cam = J.transpose() * d_cov2d * J;
            const Eigen::Matrix<double, 2, 3> d_J = 2.0 * d_cov2d * J * cov_cam;

            // J depends on p_cam
            const double z = sp.p_cam.z(), x = sp.p_cam.x(), y = sp.p_cam.y();
            const double iz2 = 1.0 / (z * z), iz3 = iz2 / z;
            d_pcam.x() += d_J(0, 2) * (-cam.fx * iz2);
            d_pcam.y() += d_J(1, 2) * (-cam.fy * iz2);
            d_pcam.z() += d_J(0, 0) * (-cam.fx * iz2) + d_J(1, 1) * (-cam.fy * iz2) +
                          d_J(0, 2) * (2.0 * cam.fx * x * iz3) + d_J(1, 2) * (2.0 * cam.fy * y * iz3);

            const Mat3 d_M = 2.0 * d_cov_cam * rot_cam * s2.asDiagonal();
            d_rot_cam += d_M;
            const Mat3 mid = rot_cam.transpose() * d_cov_cam * rot_cam;
            for (int j = 0; j < 3; ++j) d_s[j] += 2.0 * g.s[j] * mid(j, j);

            gg.screen_grad[gi] += sa.d_mean2d.norm();
        } else {
            d_pcam += sa.d_m;
            d_s.x() += rot_cam.col(0).dot(sa.d_a1);
            d_s.y() += rot_cam.col(1).dot(sa.d_a2);
            d_rot_cam.col(0) += g.s.x() * sa.d_a1;
            d_rot_cam.col(1) += g.s.y() * sa.d_a2;
            d_rot_cam.col(2) += sa.d_nplane + sp.normal_sign * sa.d_nblend;

            // Screen-space positional gradient equivalent: least-squares
            // pullback of the camera-space center gradient through J.
            const Mat2 JJt = (J * J.transpose());
            const Vec2 m2 = JJt.inverse() * (J * (sa.d_m + Vec3(0, 0, sa.d_z)));
            gg.screen_grad[gi] += m2.norm();
        }

        gg.d_mu[gi] += cam.R.transpose() * d_pcam;
        const Mat3 d_rot_local = cam.R.transpose() * d_rot_cam;
        const Vec4 d_q_unit = quat_rot_backward(q, d_rot_local);
        gg.d_q[gi] += quat_normalize_backward(g.q, d_q_unit);
        gg.d_s[gi] += d_s;
    });

    return gg;
}

std::vector<double> depth_to_normal(const std::vector<double>& depth, const Camera& cam) {
    const int W = cam.width, H = cam.height;
    std::vector<double> normal(static_cast<std::size_t>(W) * H * 3, 0.0);
    auto point_at = [&](int r, int c) {
        const double d = depth[static_cast<std::size_t>(r) * W + c];
        return d * cam.pixel_ray_cam(c + 0.5, r + 0.5);
    };
    for (int r = 1; r + 1 < H; ++r) {
        for (int c = 1; c + 1 < W; ++c) {
            const std::size_t pix = static_cast<std::size_t>(r) * W + c;
            if (depth[pix] <= 0.0 || depth[pix - 1] <= 0.0 || depth[pix + 1] <= 0.0 ||
                depth[pix - W] <= 0.0 || depth[pix + W] <= 0.0)
                continue;
            const Vec3 dx = point_at(r, c + 1) - point_at(r, c - 1);
            const Vec3 dy = point_at(r + 1, c) - point_at(r - 1, c);
            Vec3 n = dx.cross(dy);
            const double len = n.norm();
            if (len < 1e-12) continue;
            n /= len;
            if (n.z() > 0.0) n = -n; // face the camera
            normal[pix * 3 + 0] = n.x();
            normal[pix * 3 + 1] = n.y();
            normal[pix * 3 + 2] = n.z();
        }
    }
    return normal;
}

} // namespace skyline
