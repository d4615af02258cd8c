#include "skyline/io/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "skyline/io/colmap.hpp"
#include "skyline/io/image.hpp"
#include "skyline/io/ply.hpp"

namespace skyline::io {

using nlohmann::json;

namespace {

PointCloud read_points_ply(const std::string& path) {
    const PlyFile file = read_ply(path);
    const PlyTable* t = file.find("vertex");
    if (!t) fail(Errc::ParseError, path + ": no vertex element");
    const int cx = t->col("x"), cy = t->col("y"), cz = t->col("z");
    if (cx < 0 || cy < 0 || cz < 0) fail(Errc::ParseError, path + ": missing xyz");
    const int cr = t->col("red"), cg = t->col("green"), cb = t->col("blue");
    PointCloud pc;
    for (std::size_t r = 0; r < t->rows; ++r) {
        pc.positions.emplace_back(t->at(r, static_cast<std::size_t>(cx)), t->at(r, static_cast<std::size_t>(cy)),
                                  t->at(r, static_cast<std::size_t>(cz)));
        if (cr >= 0 && cg >= 0 && cb >= 0)
            pc.colors.emplace_back(t->at(r, static_cast<std::size_t>(cr)) / 255.0,
                                   t->at(r, static_cast<std::size_t>(cg)) / 255.0,
                                   t->at(r, static_cast<std::size_t>(cb)) / 255.0);
    }
    return pc;
}

struct FrameRec {
    std::string image;
    Camera cam;
    std::string depth, mask;
};

void load_supervision(Scene& scene, const std::string& root) {
    scene.supervision.resize(scene.cameras.size());
    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        Camera& cam = scene.cameras[i];
        SupervisionBundle& sup = scene.supervision[i];
        sup.width = cam.width;
        sup.height = cam.height;

        if (!cam.image_path.empty()) {
            LoadedImage img = read_png(root + "/" + cam.image_path);
            if (img.width != cam.width || img.height != cam.height)
                fail(Errc::ShapeMismatch, cam.image_path + ": image size differs from manifest");
            sup.gt_rgb.resize(static_cast<std::size_t>(cam.width) * cam.height * 3);
            for (std::size_t p = 0; p < static_cast<std::size_t>(cam.width) * cam.height; ++p)
                for (int ch = 0; ch < 3; ++ch)
                    sup.gt_rgb[p * 3 + ch] = img.channels == 1 ? img.data[p] : img.data[p * img.channels + ch];
        }

        if (!cam.depth_path.empty()) {
            const std::string dp = root + "/" + cam.depth_path;
            std::vector<double> raw;
            bool is_disparity = cam.depth_needs_alignment;
            if (dp.size() > 4 && dp.substr(dp.size() - 4) == ".pfm") {
                int w, h, ch;
                raw = read_pfm(dp, &w, &h, &ch);
                if (w != cam.width || h != cam.height || ch != 1)
                    fail(Errc::ShapeMismatch, cam.depth_path + ": depth size mismatch");
            } else {
                LoadedImage img = read_png(dp);
                if (img.width != cam.width || img.height != cam.height || img.channels != 1)
                    fail(Errc::ShapeMismatch, cam.depth_path + ": depth size mismatch");
                raw = std::move(img.data);
                is_disparity = true; // 16-bit PNG carries raw disparity
            }
            sup.gt_inv_depth.assign(raw.size(), 0.0);
            if (cam.depth_needs_alignment) {
                // handled after points are known; stash raw for the second pass
                sup.gt_inv_depth = raw; // temporarily raw disparity
            } else if (is_disparity) {
                for (std::size_t p = 0; p < raw.size(); ++p)
                    sup.gt_inv_depth[p] = raw[p] > 0.0 ? raw[p] : 0.0;
            } else {
                for (std::size_t p = 0; p < raw.size(); ++p)
                    sup.gt_inv_depth[p] = raw[p] > 0.0 ? 1.0 / raw[p] : 0.0;
            }
        }

        if (!cam.mask_path.empty()) {
            LoadedImage img = read_png(root + "/" + cam.mask_path);
            if (img.width != cam.width || img.height != cam.height)
                fail(Errc::ShapeMismatch, cam.mask_path + ": mask size mismatch");
            sup.mask.resize(static_cast<std::size_t>(cam.width) * cam.height);
            for (std::size_t p = 0; p < sup.mask.size(); ++p)
                sup.mask[p] = img.data[p * static_cast<std::size_t>(img.channels)] > 0.5 ? 1 : 0;
        }
    }

    // Scale/offset fit for flagged depth maps now that SfM points exist.
    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        Camera& cam = scene.cameras[i];
        SupervisionBundle& sup = scene.supervision[i];
        if (!cam.depth_needs_alignment || sup.gt_inv_depth.empty()) continue;
        const DepthAlignment fit = align_disparity(sup.gt_inv_depth, cam.width, cam.height, cam, scene.points);
        for (auto& v : sup.gt_inv_depth)
            v = v > 0.0 ? std::max(0.0, fit.scale * v + fit.offset) : 0.0;
    }
}

void apply_holdout(Scene& scene, const std::vector<std::string>& sorted_names, int every) {
    scene.holdout.assign(scene.cameras.size(), 0);
    if (every <= 0) return;
    (void)sorted_names; // cameras arrive already name-sorted
    for (std::size_t i = 0; i < scene.cameras.size(); ++i)
        if (i % static_cast<std::size_t>(every) == 0) scene.holdout[i] = 1;
}

} // namespace

Scene load_dataset(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) fail(Errc::IoError, "cannot open " + manifest_path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        fail(Errc::ParseError, manifest_path + ": " + e.what());
    }
    const std::string root = std::filesystem::path(manifest_path).parent_path().string();
    const std::string type = j.value("type", "transforms");
    const int holdout_every = j.value("holdout_every", 32);

    Scene scene;
    std::vector<std::string> names;

    if (type == "colmap") {
        ColmapClassRule rule;
        rule.aerial_substring = j.value("aerial_substring", "aerial");
        rule.street_substring = j.value("street_substring", "street");
        ColmapModel model = read_colmap_text(root + "/" + j.value("colmap_dir", "sparse"), rule);
        scene.cameras = std::move(model.cameras);
        scene.points = std::move(model.points);
        names = std::move(model.image_names);
        const std::string images_dir = j.value("images_dir", "images");
        for (auto& cam : scene.cameras) cam.image_path = images_dir + "/" + cam.image_path;
    } else if (type == "transforms") {
        if (!j.contains("frames")) fail(Errc::ParseError, manifest_path + ": no frames array");
        struct FrameRec {
            std::string name;
            Camera cam;
        };
        std::vector<FrameRec> frames;
        int next_id = 0;
        for (const auto& jf : j["frames"]) {
            FrameRec rec;
            if (!jf.contains("image")) fail(Errc::ParseError, manifest_path + ": frame without image");
            rec.name = jf["image"].get<std::string>();
            Camera& cam = rec.cam;
            cam.id = jf.value("id", next_id);
            ++next_id;
            if (!jf.contains("class")) fail(Errc::ClassTagMissing, rec.name + " has no class tag");
            const std::string cls = jf["class"].get<std::string>();
            if (cls == "aerial") cam.view_class = ViewClass::Aerial;
            else if (cls == "street") cam.view_class = ViewClass::Street;
            else fail(Errc::ClassTagMissing, rec.name + ": unknown class " + cls);
            cam.fx = jf.at("fx").get<double>();
            cam.fy = jf.at("fy").get<double>();
            cam.cx = jf.at("cx").get<double>();
            cam.cy = jf.at("cy").get<double>();
            cam.width = jf.at("width").get<int>();
            cam.height = jf.at("height").get<int>();
            const auto& m = jf.at("world_to_camera");
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) cam.R(r, c) = m.at(r).at(c).get<double>();
                cam.t[r] = m.at(r).at(3).get<double>();
            }
            cam.image_path = rec.name;
            cam.appearance_id = jf.value("appearance_id", -1);
            if (jf.contains("depth") && !jf["depth"].is_null()) cam.depth_path = jf["depth"].get<std::string>();
            if (jf.contains("mask") && !jf["mask"].is_null()) cam.mask_path = jf["mask"].get<std::string>();
            cam.depth_needs_alignment = jf.value("depth_needs_alignment", false);
            frames.push_back(std::move(rec));
        }
        std::sort(frames.begin(), frames.end(),
                  [](const FrameRec& a, const FrameRec& b) { return a.name < b.name; });
        for (std::size_t i = 0; i < frames.size(); ++i) {
            if (frames[i].cam.appearance_id < 0) frames[i].cam.appearance_id = static_cast<int>(i);
            scene.cameras.push_back(frames[i].cam);
            names.push_back(frames[i].name);
        }
        if (j.contains("points") && !j["points"].is_null())
            scene.points = read_points_ply(root + "/" + j["points"].get<std::string>());
    } else {
        fail(Errc::ParseError, manifest_path + ": unknown dataset type " + type);
    }

    apply_holdout(scene, names, holdout_every);
    load_supervision(scene, root);
    return scene;
}

void save_manifest(const std::string& path, const Scene& scene,
                   const std::vector<std::string>& image_names) {
    json j;
    j["type"] = "transforms";
    j["holdout_every"] = 32;
    if (!scene.points.empty()) j["points"] = "points.ply";
    json frames = json::array();
    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        const Camera& cam = scene.cameras[i];
        json jf;
        jf["image"] = i < image_names.size() ? image_names[i] : cam.image_path;
        jf["class"] = cam.view_class == ViewClass::Aerial ? "aerial" : "street";
        jf["id"] = cam.id;
        jf["appearance_id"] = cam.appearance_id;
        jf["fx"] = cam.fx;
        jf["fy"] = cam.fy;
        jf["cx"] = cam.cx;
        jf["cy"] = cam.cy;
        jf["width"] = cam.width;
        jf["height"] = cam.height;
        json m = json::array();
        for (int r = 0; r < 3; ++r)
            m.push_back({cam.R(r, 0), cam.R(r, 1), cam.R(r, 2), cam.t[r]});
        m.push_back({0.0, 0.0, 0.0, 1.0});
        jf["world_to_camera"] = m;
        if (!cam.depth_path.empty()) jf["depth"] = cam.depth_path;
        if (!cam.mask_path.empty()) jf["mask"] = cam.mask_path;
        if (cam.depth_needs_alignment) jf["depth_needs_alignment"] = true;
        frames.push_back(std::move(jf));
    }
    j["frames"] = std::move(frames);
    std::ofstream f(path);
    if (!f) fail(Errc::IoError, "cannot open " + path + " for writing");
    f << j.dump(2) << "\n";
}

DepthAlignment align_disparity(const std::vector<double>& raw, int width, int height, const Camera& cam,
                               const PointCloud& sfm_points) {
    struct Sample {
        double raw_v, target;
    };
    std::vector<Sample> samples;
    for (const auto& p : sfm_points.positions) {
        const Vec3 pc = cam.to_camera(p);
        if (pc.z() <= 1e-6) continue;
        const Vec2 px = cam.project_cam(pc);
        const int c = static_cast<int>(std::floor(px.x()));
        const int r = static_cast<int>(std::floor(px.y()));
        if (c < 0 || c >= width || r < 0 || r >= height) continue;
        const double v = raw[static_cast<std::size_t>(r) * width + c];
        if (v <= 0.0) continue;
        samples.push_back({v, 1.0 / pc.z()});
    }
    if (samples.size() < 2) fail(Errc::DegenerateFit, "not enough SfM projections for depth alignment");

    auto fit = [](const std::vector<Sample>& s) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double n = static_cast<double>(s.size());
        for (const auto& q : s) {
            sx += q.raw_v;
            sy += q.target;
            sxx += q.raw_v * q.raw_v;
            sxy += q.raw_v * q.target;
        }
        const double det = n * sxx - sx * sx;
        if (std::abs(det) < 1e-18) fail(Errc::DegenerateFit, "constant raw disparity");
        DepthAlignment a;
        a.scale = (n * sxy - sx * sy) / det;
        a.offset = (sy * sxx - sx * sxy) / det;
        a.samples = static_cast<int>(s.size());
        return a;
    };

    DepthAlignment first = fit(samples);
    // Drop the worst 5% once and refit.
    std::vector<double> res(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        res[i] = std::abs(first.scale * samples[i].raw_v + first.offset - samples[i].target);
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return res[a] < res[b]; });
    const std::size_t keep = std::max<std::size_t>(2, samples.size() - samples.size() / 20);
    std::vector<Sample> trimmed;
    for (std::size_t i = 0; i < keep; ++i) trimmed.push_back(samples[order[i]]);
    return fit(trimmed);
}

} // namespace skyline::io
