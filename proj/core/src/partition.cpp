#include "skyline/partition.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "skyline/io/ply.hpp"
#include "skyline/parallel.hpp"

namespace skyline {

using nlohmann::json;

PartitionPlan partition(const std::vector<Camera>& cameras, const PointCloud& points, int m, int n,
                        double margin, double visibility_threshold) {
    if (m < 1 || n < 1) fail(Errc::ShapeMismatch, "grid must be at least 1x1");
    if (cameras.empty()) fail(Errc::EmptyScene, "no cameras to partition");

    PartitionPlan plan;
    plan.grid_x = m;
    plan.grid_y = n;
    plan.visibility_threshold = visibility_threshold;

    bool first = true;
    for (const auto& cam : cameras) {
        const Vec2 g = ground_projection(cam.center());
        if (first) {
            plan.camera_bbox.min = plan.camera_bbox.max = g;
            first = false;
        } else {
            plan.camera_bbox.absorb(g);
        }
    }

    const Vec2 ext = plan.camera_bbox.extent();
    const double cell_x = ext.x() / m, cell_y = ext.y() / n;
    plan.margin = margin >= 0.0 ? margin : 0.1 * std::sqrt(cell_x * cell_x + cell_y * cell_y);

    for (int row = 0; row < n; ++row) {
        for (int col = 0; col < m; ++col) {
            Chunk c;
            c.grid_row = row;
            c.grid_col = col;
            c.core_bounds.min = plan.camera_bbox.min + Vec2(col * cell_x, row * cell_y);
            c.core_bounds.max = plan.camera_bbox.min + Vec2((col + 1) * cell_x, (row + 1) * cell_y);
            c.closed_max_x = (col == m - 1);
            c.closed_max_y = (row == n - 1);
            c.expanded_bounds = c.core_bounds;
            c.expanded_bounds.expand(plan.margin);
            for (const auto& cam : cameras)
                if (c.expanded_bounds.contains_closed(ground_projection(cam.center())))
                    c.camera_ids.push_back(cam.id);
            for (std::size_t pi = 0; pi < points.size(); ++pi) {
                if (!c.expanded_bounds.contains_closed(ground_projection(points.positions[pi]))) continue;
                c.seed_points.positions.push_back(points.positions[pi]);
                if (pi < points.colors.size()) c.seed_points.colors.push_back(points.colors[pi]);
            }
            if (c.camera_ids.empty()) {
                std::ostringstream os;
                os << "chunk (" << row << "," << col << ") has no cameras";
                plan.warnings.push_back(os.str());
            }
            plan.chunks.push_back(std::move(c));
        }
    }
    return plan;
}

AugmentReport augment_chunk(Chunk& chunk, const Scene& scene, double visibility_threshold, int stride) {
    AugmentReport rep;

    // Aerial cameras outside the chunk: add when the visible fraction of this
    // chunk's seed points reaches the threshold.
    for (const auto& cam : scene.cameras) {
        if (cam.view_class != ViewClass::Aerial) continue;
        bool already = false;
        for (int id : chunk.camera_ids)
            if (id == cam.id) already = true;
        if (already) continue;
        if (chunk.seed_points.empty()) continue;
        std::size_t visible = 0;
        for (const auto& p : chunk.seed_points.positions)
            if (cam.sees(p)) ++visible;
        const double frac = static_cast<double>(visible) / static_cast<double>(chunk.seed_points.size());
        if (frac >= visibility_threshold && visible > 0) {
            chunk.camera_ids.push_back(cam.id);
            rep.cameras_added++;
        }
    }

    // Street cameras inside the chunk: back-project the depth map on a stride
    // grid and append colored seed points (kept inside the expanded bounds).
    for (int id : chunk.camera_ids) {
        const Camera* cam = nullptr;
        std::size_t cam_idx = 0;
        for (std::size_t i = 0; i < scene.cameras.size(); ++i)
            if (scene.cameras[i].id == id) {
                cam = &scene.cameras[i];
                cam_idx = i;
            }
        if (!cam || cam->view_class != ViewClass::Street) continue;
        const SupervisionBundle& sup = scene.supervision[cam_idx];
        if (sup.gt_inv_depth.empty()) {
            rep.missing_depth.push_back(id);
            continue;
        }
        const Mat3 rot_t = cam->R.transpose();
        const Vec3 center = cam->center();
        for (int r = stride / 2; r < cam->height; r += stride) {
            for (int c = stride / 2; c < cam->width; c += stride) {
                const std::size_t pix = static_cast<std::size_t>(r) * cam->width + c;
                const double disp = sup.gt_inv_depth[pix];
                if (disp <= 0.0) continue;
                const double depth = 1.0 / disp;
                const Vec3 p_cam = depth * cam->pixel_ray_cam(c + 0.5, r + 0.5);
                const Vec3 p = rot_t * (p_cam - cam->t);
                (void)center;
                if (!chunk.expanded_bounds.contains_closed(ground_projection(p))) continue;
                chunk.seed_points.positions.push_back(p);
                Vec3 col(0.5, 0.5, 0.5);
                if (!sup.gt_rgb.empty())
                    col = Vec3(sup.gt_rgb[pix * 3 + 0], sup.gt_rgb[pix * 3 + 1], sup.gt_rgb[pix * 3 + 2]);
                chunk.seed_points.colors.push_back(col);
                rep.points_added++;
            }
        }
    }
    return rep;
}

namespace {

Scene chunk_scene(const Chunk& chunk, const Scene& scene) {
    Scene sub;
    sub.points = chunk.seed_points;
    for (int id : chunk.camera_ids) {
        for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
            if (scene.cameras[i].id != id) continue;
            sub.cameras.push_back(scene.cameras[i]);
            sub.supervision.push_back(scene.supervision[i]);
            sub.holdout.push_back(scene.holdout.empty() ? 0 : scene.holdout[i]);
        }
    }
    return sub;
}

} // namespace

ChunkTrainResult train_chunks(const PartitionPlan& plan, const Scene& scene, const TrainOptions& base_opt,
                              int workers, long appearance_warmup_iters) {
    if (plan.chunks.empty()) fail(Errc::ShapeMismatch, "empty partition plan");
    ChunkTrainResult result;
    result.models.resize(plan.chunks.size());

    // Appearance warm start: short densification-free run on the full scene.
    {
        TrainOptions wopt = base_opt;
        wopt.densify_enabled = false;
        wopt.out_dir.clear();
        wopt.schedule.stage1_iters = std::max<long>(1, appearance_warmup_iters);
        wopt.schedule.stage2_iters = 0;
        Trainer warm(scene, wopt);
        warm.run();
        result.appearance_warmstart = warm.bank().appearance;
    }

    const int n = static_cast<int>(plan.chunks.size());
    parallel_for(
        n,
        [&](int ci) {
            ChunkModel& model = result.models[static_cast<std::size_t>(ci)];
            model.index = ci;
            const Chunk& chunk = plan.chunks[static_cast<std::size_t>(ci)];
            try {
                Scene sub = chunk_scene(chunk, scene);
                TrainOptions copt = base_opt;
                copt.out_dir.clear();
                copt.seed = base_opt.seed ^ static_cast<std::uint64_t>(plan.linear_index(chunk));
                Trainer trainer(sub, copt);
                trainer.set_initial_appearance(result.appearance_warmstart);
                trainer.run();
                model.field = trainer.field();
                model.bank = trainer.bank();

                Vec3 reference = Vec3::Zero();
                int n_aerial = 0;
                for (const auto& cam : sub.cameras)
                    if (cam.view_class == ViewClass::Aerial) {
                        reference += cam.center();
                        ++n_aerial;
                    }
                if (n_aerial > 0) reference /= n_aerial;
                model.baked = bake_explicit(model.field, model.bank, reference);
                model.ok = true;
            } catch (const std::exception& e) {
                model.ok = false;
                model.error = e.what();
            }
        },
        std::max(1, workers));
    return result;
}

BakedGaussianSet merge(const PartitionPlan& plan, const std::vector<BakedGaussianSet>& per_chunk) {
    if (per_chunk.size() != plan.chunks.size())
        fail(Errc::MissingChunkModel, "chunk model count does not match the plan");
    BakedGaussianSet merged;
    merged.mode = per_chunk.empty() ? PrimitiveMode::Ellipsoid3D : per_chunk.front().mode;
    for (std::size_t ci = 0; ci < per_chunk.size(); ++ci) {
        const Chunk& chunk = plan.chunks[ci];
        for (const auto& g : per_chunk[ci].gaussians)
            if (chunk.core_owns(ground_projection(g.mu))) merged.gaussians.push_back(g);
    }
    return merged;
}

void save_plan(const std::string& path, const PartitionPlan& plan) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(path).parent_path();
    json j;
    j["grid_x"] = plan.grid_x;
    j["grid_y"] = plan.grid_y;
    j["margin"] = plan.margin;
    j["visibility_threshold"] = plan.visibility_threshold;
    j["camera_bbox"] = {plan.camera_bbox.min.x(), plan.camera_bbox.min.y(), plan.camera_bbox.max.x(),
                        plan.camera_bbox.max.y()};
    j["warnings"] = plan.warnings;
    json chunks = json::array();
    for (const auto& c : plan.chunks) {
        json jc;
        jc["row"] = c.grid_row;
        jc["col"] = c.grid_col;
        jc["core"] = {c.core_bounds.min.x(), c.core_bounds.min.y(), c.core_bounds.max.x(),
                      c.core_bounds.max.y()};
        jc["expanded"] = {c.expanded_bounds.min.x(), c.expanded_bounds.min.y(), c.expanded_bounds.max.x(),
                          c.expanded_bounds.max.y()};
        jc["closed_max_x"] = c.closed_max_x;
        jc["closed_max_y"] = c.closed_max_y;
        jc["cameras"] = c.camera_ids;
        std::ostringstream seeds;
        seeds << "chunk_" << c.grid_row << "_" << c.grid_col << "_seeds.ply";
        jc["seed_points"] = seeds.str();

        io::PlyTable t;
        t.element = "vertex";
        t.props = {{"x", io::PlyType::F64},  {"y", io::PlyType::F64},    {"z", io::PlyType::F64},
                   {"red", io::PlyType::U8}, {"green", io::PlyType::U8}, {"blue", io::PlyType::U8}};
        t.resize_rows(c.seed_points.size());
        for (std::size_t i = 0; i < c.seed_points.size(); ++i) {
            for (int a = 0; a < 3; ++a) t.at(i, static_cast<std::size_t>(a)) = c.seed_points.positions[i][a];
            const Vec3 col =
                i < c.seed_points.colors.size() ? c.seed_points.colors[i] : Vec3(0.5, 0.5, 0.5);
            for (int a = 0; a < 3; ++a)
                t.at(i, static_cast<std::size_t>(3 + a)) = std::round(clampd(col[a], 0, 1) * 255.0);
        }
        io::PlyFile pf;
        pf.tables.push_back(std::move(t));
        io::write_ply((dir / seeds.str()).string(), pf);
        chunks.push_back(std::move(jc));
    }
    j["chunks"] = std::move(chunks);
    std::ofstream f(path);
    if (!f) fail(Errc::IoError, "cannot open " + path + " for writing");
    f << j.dump(2) << "\n";
}

PartitionPlan load_plan(const std::string& path) {
    namespace fs = std::filesystem;
    std::ifstream f(path);
    if (!f) fail(Errc::IoError, "cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        fail(Errc::ParseError, path + ": " + e.what());
    }
    const fs::path dir = fs::path(path).parent_path();

    PartitionPlan plan;
    plan.grid_x = j.at("grid_x").get<int>();
    plan.grid_y = j.at("grid_y").get<int>();
    plan.margin = j.at("margin").get<double>();
    plan.visibility_threshold = j.value("visibility_threshold", 0.25);
    const auto& bb = j.at("camera_bbox");
    plan.camera_bbox.min = Vec2(bb.at(0).get<double>(), bb.at(1).get<double>());
    plan.camera_bbox.max = Vec2(bb.at(2).get<double>(), bb.at(3).get<double>());
    if (j.contains("warnings")) plan.warnings = j["warnings"].get<std::vector<std::string>>();

    for (const auto& jc : j.at("chunks")) {
        Chunk c;
        c.grid_row = jc.at("row").get<int>();
        c.grid_col = jc.at("col").get<int>();
        const auto& core = jc.at("core");
        c.core_bounds.min = Vec2(core.at(0).get<double>(), core.at(1).get<double>());
        c.core_bounds.max = Vec2(core.at(2).get<double>(), core.at(3).get<double>());
        const auto& exp = jc.at("expanded");
        c.expanded_bounds.min = Vec2(exp.at(0).get<double>(), exp.at(1).get<double>());
        c.expanded_bounds.max = Vec2(exp.at(2).get<double>(), exp.at(3).get<double>());
        c.closed_max_x = jc.value("closed_max_x", false);
        c.closed_max_y = jc.value("closed_max_y", false);
        c.camera_ids = jc.at("cameras").get<std::vector<int>>();
        const std::string seeds = jc.at("seed_points").get<std::string>();
        const io::PlyFile pf = io::read_ply((dir / seeds).string());
        if (const io::PlyTable* t = pf.find("vertex")) {
            const int cx = t->col("x"), cy = t->col("y"), cz = t->col("z");
            const int cr = t->col("red"), cg = t->col("green"), cb = t->col("blue");
            for (std::size_t r = 0; r < t->rows; ++r) {
                c.seed_points.positions.emplace_back(t->at(r, static_cast<std::size_t>(cx)),
                                                     t->at(r, static_cast<std::size_t>(cy)),
                                                     t->at(r, static_cast<std::size_t>(cz)));
                if (cr >= 0)
                    c.seed_points.colors.emplace_back(t->at(r, static_cast<std::size_t>(cr)) / 255.0,
                                                      t->at(r, static_cast<std::size_t>(cg)) / 255.0,
                                                      t->at(r, static_cast<std::size_t>(cb)) / 255.0);
            }
        }
        plan.chunks.push_back(std::move(c));
    }
    return plan;
}

} // namespace skyline
