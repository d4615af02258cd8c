#pragma once

// Shared oracles and harnesses. Everything here reimplements the math it
// checks from first principles and stays off the library's tiled path.

#include <algorithm>
#include <cmath>
#include <vector>

#include "skyline/camera.hpp"
#include "skyline/raster.hpp"
#include "skyline/rng.hpp"
#include "skyline/scene.hpp"

namespace testutil {

using namespace skyline;

struct OracleOutput {
    std::vector<double> rgb, alpha, depth, inv_depth, normal;
};

// Exhaustive per-pixel blend over every splat, no tiles, no bounding boxes.
inline OracleOutput oracle_render(const std::vector<NeuralGaussian>& gaussians, const Camera& cam,
                                  PrimitiveMode mode) {
    const int W = cam.width, H = cam.height;
    const std::size_t npix = static_cast<std::size_t>(W) * H;
    OracleOutput out;
    out.rgb.assign(npix * 3, 0.0);
    out.alpha.assign(npix, 0.0);
    out.depth.assign(npix, 0.0);
    out.inv_depth.assign(npix, 0.0);
    out.normal.assign(npix * 3, 0.0);

    struct Pre {
        int index;
        double z;
        double sigma;
        Vec3 color;
        // 3D
        Mat2 conic;
        Vec2 mean2d;
        // 2D
        Vec3 m, a1, a2, n;
        double A1, A2;
        Vec3 n_out;
    };
    std::vector<Pre> pres;
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const NeuralGaussian& g = gaussians[i];
        Pre p;
        p.index = static_cast<int>(i);
        p.m = cam.R * g.mu + cam.t;
        if (p.m.z() <= 0.2) continue;
        p.z = p.m.z();
        p.sigma = g.sigma;
        p.color = g.color;
        const Mat3 rot = cam.R * quat_to_rot(normalize_quat(g.q));
        if (mode == PrimitiveMode::Ellipsoid3D) {
            Eigen::Matrix<double, 2, 3> J;
            J << cam.fx / p.z, 0, -cam.fx * p.m.x() / (p.z * p.z), 0, cam.fy / p.z,
                -cam.fy * p.m.y() / (p.z * p.z);
            const Mat3 cov = rot * g.s.cwiseProduct(g.s).asDiagonal() * rot.transpose();
            const Mat2 cov2d = J * cov * J.transpose() + 0.3 * Mat2::Identity();
            p.conic = cov2d.inverse();
            p.mean2d = Vec2(cam.fx * p.m.x() / p.z + cam.cx, cam.fy * p.m.y() / p.z + cam.cy);
        } else {
            p.a1 = g.s.x() * rot.col(0);
            p.a2 = g.s.y() * rot.col(1);
            p.n = rot.col(2);
            p.A1 = p.a1.squaredNorm();
            p.A2 = p.a2.squaredNorm();
            p.n_out = p.n.dot(p.m) > 0 ? Vec3(-p.n) : p.n;
        }
        pres.push_back(p);
    }
    std::sort(pres.begin(), pres.end(), [](const Pre& a, const Pre& b) {
        if (a.z != b.z) return a.z < b.z;
        return a.index < b.index;
    });

    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const double px = c + 0.5, py = r + 0.5;
            const std::size_t pix = static_cast<std::size_t>(r) * W + c;
            double T = 1.0, sum_a = 0.0, sum_d = 0.0;
            Vec3 sum_c = Vec3::Zero(), sum_n = Vec3::Zero();
            for (const Pre& p : pres) {
                double G = 0.0;
                if (mode == PrimitiveMode::Ellipsoid3D) {
                    const Vec2 d(px - p.mean2d.x(), py - p.mean2d.y());
                    const double rho = d.dot(p.conic * d);
                    if (rho > 9.0) continue;
                    G = std::exp(-0.5 * rho);
                } else {
                    const Vec3 ray((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
                    const double denom = p.n.dot(ray);
                    if (std::abs(denom) < 1e-12) continue;
                    const double t = p.n.dot(p.m) / denom;
                    if (t <= 0.01) continue;
                    const Vec3 w = t * ray - p.m;
                    const double u = p.a1.dot(w) / p.A1;
                    const double v = p.a2.dot(w) / p.A2;
                    const double rho = u * u + v * v;
                    if (rho > 9.0) continue;
                    G = std::exp(-0.5 * rho);
                }
                const double alpha = std::min(p.sigma * G, 0.99);
                const double test_T = T * (1.0 - alpha);
                if (test_T < 1e-4) break;
                const double w = alpha * T;
                sum_c += w * p.color;
                sum_a += w;
                sum_d += w * p.z;
                if (mode == PrimitiveMode::Disk2D) sum_n += w * p.n_out;
                T = test_T;
            }
            for (int ch = 0; ch < 3; ++ch) out.rgb[pix * 3 + ch] = sum_c[ch];
            out.alpha[pix] = sum_a;
            if (sum_a > 0.0) {
                const double d = sum_d / sum_a;
                out.depth[pix] = d;
                out.inv_depth[pix] = d > 0 ? 1.0 / d : 0.0;
                if (mode == PrimitiveMode::Disk2D && sum_n.norm() > 1e-9) {
                    const Vec3 n = sum_n.normalized();
                    for (int ch = 0; ch < 3; ++ch) out.normal[pix * 3 + ch] = n[ch];
                }
            }
        }
    }
    if (mode == PrimitiveMode::Ellipsoid3D) out.normal = depth_to_normal(out.depth, cam);
    return out;
}

inline Camera test_camera(int size = 24, double focal = -1.0) {
    Camera cam;
    cam.width = cam.height = size;
    cam.fx = cam.fy = focal > 0 ? focal : size;
    cam.cx = cam.cy = size / 2.0;
    return cam;
}

// Random scene kept away from every non-smooth boundary (support cutoff,
// alpha clamp, transmittance cutoff, near-plane) so finite differences stay
// meaningful.
inline std::vector<NeuralGaussian> make_safe_scene(int n, PrimitiveMode mode, const Camera& cam,
                                                   Pcg32& rng) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        std::vector<NeuralGaussian> scene;
        for (int i = 0; i < n; ++i) {
            NeuralGaussian g;
            const double z = rng.uniform(3.0, 8.0);
            const double spread = 0.35 * z * cam.width / cam.fx;
            g.mu = Vec3(rng.uniform(-spread, spread), rng.uniform(-spread, spread), z);
            Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
            g.q = normalize_quat(q);
            g.s = Vec3(rng.uniform(0.25, 0.7), rng.uniform(0.25, 0.7), rng.uniform(0.05, 0.25));
            g.sigma = rng.uniform(0.15, 0.6);
            g.color = Vec3(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
            scene.push_back(g);
        }
        // Margin audit on the oracle math.
        bool ok = true;
        for (int r = 0; r < cam.height && ok; ++r) {
            for (int c = 0; c < cam.width && ok; ++c) {
                const double px = c + 0.5, py = r + 0.5;
                for (const auto& g : scene) {
                    const Vec3 m = cam.R * g.mu + cam.t;
                    const Mat3 rot = cam.R * quat_to_rot(g.q);
                    double rho;
                    if (mode == PrimitiveMode::Ellipsoid3D) {
                        Eigen::Matrix<double, 2, 3> J;
                        J << cam.fx / m.z(), 0, -cam.fx * m.x() / (m.z() * m.z()), 0, cam.fy / m.z(),
                            -cam.fy * m.y() / (m.z() * m.z());
                        const Mat3 cov = rot * g.s.cwiseProduct(g.s).asDiagonal() * rot.transpose();
                        const Mat2 cov2d = J * cov * J.transpose() + 0.3 * Mat2::Identity();
                        const Vec2 mean(cam.fx * m.x() / m.z() + cam.cx, cam.fy * m.y() / m.z() + cam.cy);
                        const Vec2 d(px - mean.x(), py - mean.y());
                        rho = d.dot(cov2d.inverse() * d);
                    } else {
                        const Vec3 ray((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
                        const Vec3 nrm = rot.col(2);
                        const double denom = nrm.dot(ray);
                        if (std::abs(denom) < 1e-6) {
                            ok = false;
                            break;
                        }
                        const double t = nrm.dot(m) / denom;
                        if (t > 0.0 && t < 0.1) {
                            ok = false;
                            break;
                        }
                        const Vec3 w = t * ray - m;
                        const Vec3 a1 = g.s.x() * rot.col(0), a2 = g.s.y() * rot.col(1);
                        const double u = a1.dot(w) / a1.squaredNorm();
                        const double v = a2.dot(w) / a2.squaredNorm();
                        rho = t <= 0.01 ? 1e9 : u * u + v * v;
                    }
                    if (std::abs(rho - 9.0) < 2e-2) {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if (ok) return scene;
    }
    // Margins failed repeatedly; return the last attempt anyway.
    std::vector<NeuralGaussian> fallback;
    NeuralGaussian g;
    g.mu = Vec3(0, 0, 5);
    fallback.push_back(g);
    return fallback;
}

// Scalar probe loss: fixed random weights over every buffer.
struct ProbeWeights {
    RenderGrad w;
    static ProbeWeights make(int width, int height, PrimitiveMode mode, Pcg32& rng) {
        ProbeWeights pw;
        pw.w = RenderGrad::zeros(width, height);
        for (auto& v : pw.w.d_rgb) v = rng.uniform(-1, 1);
        for (auto& v : pw.w.d_alpha) v = rng.uniform(-1, 1);
        for (auto& v : pw.w.d_depth) v = rng.uniform(-0.2, 0.2);
        if (mode == PrimitiveMode::Disk2D)
            for (auto& v : pw.w.d_normal) v = rng.uniform(-0.5, 0.5);
        return pw;
    }
};

inline double probe_loss(const std::vector<NeuralGaussian>& scene, const Camera& cam, PrimitiveMode mode,
                         const ProbeWeights& pw) {
    RenderOutput out = rasterize(scene, cam, mode);
    double loss = 0;
    for (std::size_t i = 0; i < out.rgb.size(); ++i) loss += pw.w.d_rgb[i] * out.rgb[i];
    for (std::size_t i = 0; i < out.alpha.size(); ++i) loss += pw.w.d_alpha[i] * out.alpha[i];
    for (std::size_t i = 0; i < out.depth.size(); ++i) loss += pw.w.d_depth[i] * out.depth[i];
    if (mode == PrimitiveMode::Disk2D)
        for (std::size_t i = 0; i < out.normal.size(); ++i) loss += pw.w.d_normal[i] * out.normal[i];
    return loss;
}

inline bool rel_close(double analytic, double numeric, double tol, double abs_floor = 1e-8) {
    const double diff = std::abs(analytic - numeric);
    if (diff <= abs_floor) return true;
    return diff <= tol * std::max(std::abs(analytic), std::abs(numeric));
}

} // namespace testutil
