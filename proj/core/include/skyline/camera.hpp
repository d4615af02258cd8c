#pragma once

#include <optional>
#include <string>

#include "skyline/math.hpp"

namespace skyline {

enum class ViewClass { Aerial, Street };

inline const char* view_class_name(ViewClass c) { return c == ViewClass::Aerial ? "aerial" : "street"; }

// Calibrated pinhole view. Poses are world-to-camera: p_cam = R p_world + t,
// camera looks along +z in its own frame. World z is up (Manhattan scenes).
struct Camera {
    int id = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    int width = 0, height = 0;
    ViewClass view_class = ViewClass::Aerial;
    int appearance_id = 0;
    std::string image_path;
    std::string depth_path;
    std::string mask_path;
    bool depth_needs_alignment = false;

    Vec3 center() const { return -R.transpose() * t; }
    Vec3 to_camera(const Vec3& p_world) const { return R * p_world + t; }

    // Continuous pixel coordinates; pixel (row r, col c) covers
    // [c, c+1) x [r, r+1) with center (c + 0.5, r + 0.5).
    Vec2 project_cam(const Vec3& p_cam) const {
        return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
    }

    std::optional<Vec2> project(const Vec3& p_world, double near = 1e-3) const {
        Vec3 pc = to_camera(p_world);
        if (pc.z() <= near) return std::nullopt;
        return project_cam(pc);
    }

    bool sees(const Vec3& p_world, double near = 1e-3) const {
        auto px = project(p_world, near);
        if (!px) return false;
        return px->x() >= 0.0 && px->x() < static_cast<double>(width) && px->y() >= 0.0 &&
               px->y() < static_cast<double>(height);
    }

    Vec3 pixel_ray_cam(double px, double py) const {
        return {(px - cx) / fx, (py - cy) / fy, 1.0};
    }

    bool orthonormal(double tol = 1e-9) const {
        return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol;
    }
    bool right_handed(double tol = 1e-6) const { return std::abs(R.determinant() - 1.0) <= tol; }
};

} // namespace skyline
