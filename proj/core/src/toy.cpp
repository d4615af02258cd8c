#include "skyline/toy.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>

#include "skyline/io/dataset.hpp"
#include "skyline/io/image.hpp"
#include "skyline/io/ply.hpp"

namespace skyline {

namespace {

struct Box {
    Vec3 lo, hi;
    Vec3 base_color;
};

} // namespace

struct ToyGeometry {
    std::vector<Box> boxes;
    double extent = 8.0;

    // Smooth low-frequency ground shading keeps box edges the only hard
    // transitions the splats must fit.
    Vec3 ground_color(double x, double y) const {
        const double u = 0.12 * std::sin(0.35 * x) + 0.10 * std::cos(0.27 * y);
        const double v = 0.10 * std::sin(0.22 * (x + y));
        return Vec3(clampd(0.45 + u, 0.1, 0.9), clampd(0.52 + v, 0.1, 0.9),
                    clampd(0.40 - 0.5 * u + 0.3 * v, 0.1, 0.9));
    }

    Vec3 box_color(const Box& b, const Vec3& p, int face_axis) const {
        const Vec3 mid = 0.5 * (b.lo + b.hi);
        const double shade = 0.10 * std::sin(0.8 * (p.x() + p.y() + p.z()));
        Vec3 c = b.base_color;
        c[face_axis] = clampd(c[face_axis] + 0.12, 0.1, 0.9);
        for (int i = 0; i < 3; ++i) c[i] = clampd(c[i] + shade + 0.04 * (p.z() - mid.z()), 0.08, 0.92);
        return c;
    }

    // Nearest hit along origin + t*dir; returns depth t (or -1) and color.
    double trace(const Vec3& origin, const Vec3& dir, Vec3* color) const {
        double best_t = -1.0;
        Vec3 best_color = Vec3::Zero();

        if (dir.z() < -1e-9) { // ground plane z = 0
            const double t = -origin.z() / dir.z();
            if (t > 1e-6) {
                const Vec3 p = origin + t * dir;
                best_t = t;
                best_color = ground_color(p.x(), p.y());
            }
        }
        for (const Box& b : boxes) {
            double t0 = 1e-6, t1 = best_t > 0 ? best_t : 1e18;
            int axis_in = -1;
            bool hit = true;
            for (int a = 0; a < 3 && hit; ++a) {
                const double inv = 1.0 / (std::abs(dir[a]) > 1e-12 ? dir[a] : (dir[a] >= 0 ? 1e-12 : -1e-12));
                double ta = (b.lo[a] - origin[a]) * inv;
                double tb = (b.hi[a] - origin[a]) * inv;
                if (ta > tb) std::swap(ta, tb);
                if (ta > t0) {
                    t0 = ta;
                    axis_in = a;
                }
                t1 = std::min(t1, tb);
                if (t0 > t1) hit = false;
            }
            if (hit && axis_in >= 0 && t0 > 1e-6 && (best_t < 0 || t0 < best_t)) {
                best_t = t0;
                best_color = box_color(b, origin + t0 * dir, axis_in);
            }
        }
        if (color) *color = best_color;
        return best_t;
    }
};

namespace {

ToyGeometry build_geometry(const ToyOptions& opts) {
    ToyGeometry geo;
    geo.extent = opts.extent;
    Pcg32 rng(opts.seed, 1234567);
    const Vec3 palette[] = {Vec3(0.70, 0.35, 0.30), Vec3(0.30, 0.45, 0.70), Vec3(0.65, 0.60, 0.30),
                            Vec3(0.40, 0.60, 0.45), Vec3(0.55, 0.40, 0.62)};
    for (int i = 0; i < opts.n_boxes; ++i) {
        const double angle = 2.0 * M_PI * i / std::max(1, opts.n_boxes) + rng.uniform(-0.2, 0.2);
        const double radius = opts.extent * rng.uniform(0.18, 0.42);
        const Vec3 center(radius * std::cos(angle), radius * std::sin(angle), 0.0);
        const double sx = rng.uniform(1.4, 2.4), sy = rng.uniform(1.4, 2.4), sz = rng.uniform(1.2, 2.4);
        Box b;
        b.lo = Vec3(center.x() - sx, center.y() - sy, 0.0);
        b.hi = Vec3(center.x() + sx, center.y() + sy, sz);
        b.base_color = palette[i % 5];
        geo.boxes.push_back(b);
    }
    return geo;
}

Camera look_at(const Vec3& eye, const Vec3& target, int size, double focal, int id, ViewClass cls) {
    // Camera +z toward the target, +x right, +y down, world z up.
    Vec3 fwd = (target - eye).normalized();
    Vec3 world_up(0, 0, 1);
    Vec3 right = fwd.cross(-world_up);
    if (right.norm() < 1e-6) right = Vec3(1, 0, 0);
    right.normalize();
    const Vec3 down = fwd.cross(right).normalized();
    Camera cam;
    cam.id = id;
    Mat3 cam_to_world;
    cam_to_world.col(0) = right;
    cam_to_world.col(1) = down;
    cam_to_world.col(2) = fwd;
    cam.R = cam_to_world.transpose();
    cam.t = -cam.R * eye;
    cam.fx = cam.fy = focal;
    cam.cx = cam.cy = size / 2.0;
    cam.width = cam.height = size;
    cam.view_class = cls;
    return cam;
}

std::vector<Camera> toy_cameras(const ToyOptions& opts) {
    std::vector<Camera> cams;
    const double focal = opts.image_size * 1.0;
    int id = 0;
    for (int i = 0; i < opts.n_aerial; ++i) {
        const double a = 2.0 * M_PI * i / opts.n_aerial;
        const double r = opts.extent * 0.55;
        const Vec3 eye(r * std::cos(a), r * std::sin(a), opts.extent * 1.45);
        const Vec3 target(0.35 * r * std::cos(a + 0.8), 0.35 * r * std::sin(a + 0.8), 0.0);
        cams.push_back(look_at(eye, target, opts.image_size, focal, id++, ViewClass::Aerial));
    }
    for (int i = 0; i < opts.n_street; ++i) {
        const double a = 2.0 * M_PI * (i + 0.37) / opts.n_street;
        const double r = opts.extent * 0.78;
        const Vec3 eye(r * std::cos(a), r * std::sin(a), 1.6);
        const Vec3 target(0.0, 0.0, -0.35 * r); // pitched well below the horizon
        cams.push_back(look_at(eye, target, opts.image_size, focal, id++, ViewClass::Street));
    }
    for (std::size_t i = 0; i < cams.size(); ++i) cams[i].appearance_id = static_cast<int>(i);
    return cams;
}

void render_view(const ToyGeometry& geo, const Camera& cam, int supersample, std::vector<double>* rgb,
                 std::vector<double>* depth) {
    const int W = cam.width, H = cam.height;
    const Vec3 origin = cam.center();
    const Mat3 rot_t = cam.R.transpose();
    if (rgb) rgb->assign(static_cast<std::size_t>(W) * H * 3, 0.0);
    if (depth) depth->assign(static_cast<std::size_t>(W) * H, 0.0);
    const int ss = std::max(1, supersample);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            Vec3 acc = Vec3::Zero();
            for (int sr = 0; sr < ss; ++sr) {
                for (int sc = 0; sc < ss; ++sc) {
                    const double px = c + (sc + 0.5) / ss;
                    const double py = r + (sr + 0.5) / ss;
                    const Vec3 dir = (rot_t * cam.pixel_ray_cam(px, py)).normalized();
                    Vec3 color;
                    if (geo.trace(origin, dir, &color) > 0) acc += color;
                }
            }
            acc /= static_cast<double>(ss * ss);
            const std::size_t pix = static_cast<std::size_t>(r) * W + c;
            if (rgb)
                for (int ch = 0; ch < 3; ++ch) (*rgb)[pix * 3 + ch] = acc[ch];
            if (depth) {
                const Vec3 dir_c = cam.pixel_ray_cam(c + 0.5, r + 0.5);
                const Vec3 dir = rot_t * dir_c; // unnormalized: t is camera-space z
                Vec3 color;
                const double t = geo.trace(origin, dir, &color);
                (*depth)[pix] = t > 0 ? t : 0.0;
            }
        }
    }
}

PointCloud toy_points(const ToyGeometry& geo, const ToyOptions& opts) {
    PointCloud pc;
    Pcg32 rng(opts.seed, 991);
    const int n_ground = opts.n_points * 2 / 3;
    for (int i = 0; i < n_ground; ++i) {
        const double x = rng.uniform(-geo.extent, geo.extent);
        const double y = rng.uniform(-geo.extent, geo.extent);
        bool inside_box = false;
        for (const auto& b : geo.boxes)
            if (x > b.lo.x() && x < b.hi.x() && y > b.lo.y() && y < b.hi.y()) inside_box = true;
        if (inside_box) continue;
        pc.positions.emplace_back(x, y, 0.0);
        pc.colors.push_back(geo.ground_color(x, y));
    }
    const int per_box = geo.boxes.empty() ? 0 : (opts.n_points - static_cast<int>(pc.size())) /
                                                    static_cast<int>(geo.boxes.size());
    for (const auto& b : geo.boxes) {
        for (int i = 0; i < per_box; ++i) {
            const int face = rng.uniform_int(5); // 4 sides + top
            Vec3 p;
            int axis;
            if (face == 4) { // top
                p = Vec3(rng.uniform(b.lo.x(), b.hi.x()), rng.uniform(b.lo.y(), b.hi.y()), b.hi.z());
                axis = 2;
            } else {
                const int a = face / 2;
                const bool hi = face % 2;
                p = Vec3(rng.uniform(b.lo.x(), b.hi.x()), rng.uniform(b.lo.y(), b.hi.y()),
                         rng.uniform(b.lo.z(), b.hi.z()));
                p[a] = hi ? b.hi[a] : b.lo[a];
                axis = a;
            }
            pc.positions.push_back(p);
            pc.colors.push_back(geo.box_color(b, p, axis));
        }
    }
    return pc;
}

std::map<std::string, ToyGeometry>& geometry_cache() {
    static std::map<std::string, ToyGeometry> cache;
    return cache;
}
std::mutex g_cache_mutex;

std::string geo_key(const ToyOptions& o) {
    return std::to_string(o.seed) + ":" + std::to_string(o.n_boxes) + ":" + std::to_string(o.extent);
}

} // namespace

const ToyGeometry& toy_geometry(const ToyOptions& opts) {
    std::lock_guard<std::mutex> lock(g_cache_mutex);
    auto& cache = geometry_cache();
    auto it = cache.find(geo_key(opts));
    if (it == cache.end()) it = cache.emplace(geo_key(opts), build_geometry(opts)).first;
    return it->second;
}

void render_toy_view(const ToyOptions& opts, const Camera& cam, std::vector<double>* rgb,
                     std::vector<double>* depth) {
    render_view(toy_geometry(opts), cam, opts.supersample, rgb, depth);
}

Scene make_toy_scene(const ToyOptions& opts) {
    const ToyGeometry& geo = toy_geometry(opts);
    Scene scene;
    scene.cameras = toy_cameras(opts);
    scene.points = toy_points(geo, opts);
    scene.supervision.resize(scene.cameras.size());
    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        SupervisionBundle& sup = scene.supervision[i];
        const Camera& cam = scene.cameras[i];
        sup.width = cam.width;
        sup.height = cam.height;
        std::vector<double> depth;
        render_view(geo, cam, opts.supersample, &sup.gt_rgb, opts.with_depth ? &depth : nullptr);
        if (opts.with_depth) {
            sup.gt_inv_depth.assign(depth.size(), 0.0);
            for (std::size_t p = 0; p < depth.size(); ++p)
                sup.gt_inv_depth[p] = depth[p] > 0 ? 1.0 / depth[p] : 0.0;
        }
    }
    scene.holdout.assign(scene.cameras.size(), 0);
    for (std::size_t i = 0; i < scene.cameras.size(); i += 32) scene.holdout[i] = 1;
    return scene;
}

void write_toy_dataset(const std::string& dir, const ToyOptions& opts) {
    namespace fs = std::filesystem;
    fs::create_directories(dir + "/images");
    fs::create_directories(dir + "/depth");

    const ToyGeometry& geo = toy_geometry(opts);
    Scene scene;
    scene.cameras = toy_cameras(opts);
    scene.points = toy_points(geo, opts);

    std::vector<std::string> names;
    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        Camera& cam = scene.cameras[i];
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s_%03zu", cam.view_class == ViewClass::Aerial ? "aerial" : "street",
                      i);
        const std::string stem = buf;
        std::vector<double> rgb, depth;
        render_view(geo, cam, opts.supersample, &rgb, opts.with_depth ? &depth : nullptr);
        io::write_png_rgb8(dir + "/images/" + stem + ".png", rgb, cam.width, cam.height);
        cam.image_path = "images/" + stem + ".png";
        if (opts.with_depth) {
            io::write_pfm(dir + "/depth/" + stem + ".pfm", depth, cam.width, cam.height, 1);
            cam.depth_path = "depth/" + stem + ".pfm";
        }
        names.push_back(cam.image_path);
    }

    io::PlyTable t;
    t.element = "vertex";
    t.props = {{"x", io::PlyType::F64},  {"y", io::PlyType::F64},    {"z", io::PlyType::F64},
               {"red", io::PlyType::U8}, {"green", io::PlyType::U8}, {"blue", io::PlyType::U8}};
    t.resize_rows(scene.points.size());
    for (std::size_t i = 0; i < scene.points.size(); ++i) {
        for (int a = 0; a < 3; ++a) t.at(i, static_cast<std::size_t>(a)) = scene.points.positions[i][a];
        const Vec3 c = i < scene.points.colors.size() ? scene.points.colors[i] : Vec3(0.5, 0.5, 0.5);
        for (int a = 0; a < 3; ++a)
            t.at(i, static_cast<std::size_t>(3 + a)) = std::round(clampd(c[a], 0, 1) * 255.0);
    }
    io::PlyFile pf;
    pf.tables.push_back(std::move(t));
    io::write_ply(dir + "/points.ply", pf);

    io::save_manifest(dir + "/manifest.json", scene, names);
}

} // namespace skyline
