#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "skyline/io/checkpoint.hpp"
#include "skyline/io/config.hpp"
#include "skyline/io/dataset.hpp"
#include "skyline/io/image.hpp"
#include "skyline/partition.hpp"
#include "skyline/toy.hpp"
#include "skyline/trainer.hpp"
#include "skyline/tsdf.hpp"

namespace fs = std::filesystem;
using namespace skyline;

namespace {

struct GlobalArgs {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string mode;
    std::string out = "out";
    int workers = 0;
};

io::RunConfig make_config(const GlobalArgs& g) {
    io::RunConfig cfg = g.config.empty() ? io::RunConfig{} : io::load_run_config(g.config);
    if (g.seed_set) cfg.train.seed = g.seed;
    if (!g.mode.empty()) {
        if (g.mode == "2d") cfg.train.mode = PrimitiveMode::Disk2D;
        else if (g.mode == "3d") cfg.train.mode = PrimitiveMode::Ellipsoid3D;
        else throw Error(Errc::ParseError, "--mode must be 2d or 3d");
    }
    if (g.workers > 0) cfg.workers = g.workers;
    if (cfg.workers > 0) setenv("SKYLINE_WORKERS", std::to_string(cfg.workers).c_str(), 1);
    cfg.apply_scale();
    return cfg;
}

Vec3 bake_reference(const Scene& scene) {
    Vec3 ref = Vec3::Zero();
    int n = 0;
    for (const auto& cam : scene.cameras)
        if (cam.view_class == ViewClass::Aerial) {
            ref += cam.center();
            ++n;
        }
    if (n == 0)
        for (const auto& cam : scene.cameras) {
            ref += cam.center();
            ++n;
        }
    return n > 0 ? Vec3(ref / n) : Vec3::Zero();
}

void write_view_outputs(const std::string& dir, const std::string& stem, const RenderOutput& out) {
    fs::create_directories(dir);
    io::write_png_rgb8(dir + "/" + stem + "_rgb.png", out.rgb, out.width, out.height);
    io::write_pfm(dir + "/" + stem + "_depth.pfm", out.depth, out.width, out.height, 1);
    io::write_pfm(dir + "/" + stem + "_normal.pfm", out.normal, out.width, out.height, 3);
}

int cmd_validate(const GlobalArgs&, const std::string& data) {
    Scene scene = io::load_dataset(data);
    ValidationReport rep = validate_scene(scene.cameras, scene.points, true);
    std::cout << rep.to_string();
    return rep.ok() ? 0 : 1;
}

int cmd_make_toy(const GlobalArgs& g, int size) {
    ToyOptions opts;
    opts.image_size = size;
    if (g.seed_set) opts.seed = g.seed == 0 ? 7 : g.seed;
    write_toy_dataset(g.out, opts);
    std::cout << "toy dataset written to " << g.out << "\n";
    return 0;
}

int cmd_train(const GlobalArgs& g, const std::string& data) {
    io::RunConfig cfg = make_config(g);
    Scene scene = io::load_dataset(data);
    cfg.train.out_dir = g.out;
    Trainer trainer(scene, cfg.train);
    trainer.run();
    trainer.save_checkpoint(g.out + "/final");
    std::cout << "trained " << trainer.field().size() << " anchors over " << trainer.global_iter()
              << " iterations; checkpoint at " << g.out << "/final\n";
    return 0;
}

int cmd_render(const GlobalArgs& g, const std::string& data, const std::string& model,
               const std::string& baked_ply, const std::string& which) {
    io::RunConfig cfg = make_config(g);
    Scene scene = io::load_dataset(data);

    BakedGaussianSet baked;
    AnchorField field;
    DecoderBank bank;
    const bool use_baked = !baked_ply.empty();
    if (use_baked)
        baked = io::read_baked_ply(baked_ply, cfg.train.mode);
    else
        io::load_model(model, field, bank);

    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        const Camera& cam = scene.cameras[i];
        const bool holdout = !scene.holdout.empty() && scene.holdout[i];
        if (which == "holdout" && !holdout) continue;
        if (which != "all" && which != "holdout" && std::stoi(which) != cam.id) continue;
        RenderOutput out = use_baked ? render_baked(baked, cam) : render_model(field, bank, cam);
        write_view_outputs(g.out, "view_" + std::to_string(cam.id), out);
    }
    std::cout << "renders written to " << g.out << "\n";
    return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& data, const std::string& model,
             const std::string& split) {
    make_config(g);
    Scene scene = io::load_dataset(data);
    AnchorField field;
    DecoderBank bank;
    io::load_model(model, field, bank);

    fs::create_directories(g.out);
    std::ofstream csv(g.out + "/metrics.csv");
    csv << "id,class,split,psnr,ssim\n";
    struct Agg {
        double psnr = 0, ssim = 0;
        int n = 0;
    };
    Agg agg[2];
    nlohmann::json per_image = nlohmann::json::array();

    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        const Camera& cam = scene.cameras[i];
        const bool holdout = !scene.holdout.empty() && scene.holdout[i];
        if (split == "holdout" && !holdout) continue;
        if (split == "train" && holdout) continue;
        const SupervisionBundle& sup = scene.supervision[i];
        RenderOutput out = render_model(field, bank, cam);
        const double p = psnr(out.rgb, sup.gt_rgb, sup.mask, cam.width, cam.height);
        const double s = ssim(out.rgb, sup.gt_rgb, sup.mask, cam.width, cam.height);
        const int cls = cam.view_class == ViewClass::Aerial ? 0 : 1;
        agg[cls].psnr += p;
        agg[cls].ssim += s;
        agg[cls].n++;
        csv << cam.id << "," << view_class_name(cam.view_class) << "," << (holdout ? "holdout" : "train")
            << "," << p << "," << s << "\n";
        per_image.push_back({{"id", cam.id},
                             {"class", view_class_name(cam.view_class)},
                             {"split", holdout ? "holdout" : "train"},
                             {"psnr", p},
                             {"ssim", s}});
    }

    nlohmann::json j;
    j["images"] = per_image;
    for (int cls = 0; cls < 2; ++cls) {
        if (agg[cls].n == 0) continue;
        j[cls == 0 ? "aerial" : "street"] = {{"psnr", agg[cls].psnr / agg[cls].n},
                                             {"ssim", agg[cls].ssim / agg[cls].n},
                                             {"count", agg[cls].n}};
    }
    std::ofstream(g.out + "/metrics.json") << j.dump(2) << "\n";
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_bake(const GlobalArgs& g, const std::string& data, const std::string& model,
             const std::string& out_ply) {
    make_config(g);
    AnchorField field;
    DecoderBank bank;
    io::load_model(model, field, bank);
    Vec3 ref(0, 0, 10);
    if (!data.empty()) ref = bake_reference(io::load_dataset(data));
    BakedGaussianSet baked = bake_explicit(field, bank, ref);
    if (const auto dir = fs::path(out_ply).parent_path(); !dir.empty()) fs::create_directories(dir);
    io::write_baked_ply(out_ply, baked);
    std::cout << "baked " << baked.gaussians.size() << " gaussians to " << out_ply << "\n";
    return 0;
}

int cmd_partition(const GlobalArgs& g, const std::string& data, int gx, int gy, double margin) {
    io::RunConfig cfg = make_config(g);
    Scene scene = io::load_dataset(data);
    PartitionPlan plan = partition(scene.cameras, scene.points, gx, gy, margin, cfg.visibility_threshold);
    for (auto& chunk : plan.chunks) augment_chunk(chunk, scene, plan.visibility_threshold);
    fs::create_directories(g.out);
    save_plan(g.out + "/plan.json", plan);
    for (const auto& w : plan.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "partition plan written to " << g.out << "/plan.json\n";
    return 0;
}

int cmd_train_chunks(const GlobalArgs& g, const std::string& data, const std::string& plan_path) {
    io::RunConfig cfg = make_config(g);
    Scene scene = io::load_dataset(data);
    PartitionPlan plan = load_plan(plan_path);
    ChunkTrainResult result =
        train_chunks(plan, scene, cfg.train, cfg.workers > 0 ? cfg.workers : worker_count(),
                     cfg.appearance_warmup_iters);
    fs::create_directories(g.out);
    bool all_ok = true;
    nlohmann::json report = nlohmann::json::array();
    for (const auto& model : result.models) {
        const Chunk& chunk = plan.chunks[static_cast<std::size_t>(model.index)];
        nlohmann::json jm = {{"row", chunk.grid_row}, {"col", chunk.grid_col}, {"ok", model.ok}};
        if (model.ok) {
            const std::string stem =
                g.out + "/chunk_" + std::to_string(chunk.grid_row) + "_" + std::to_string(chunk.grid_col);
            io::save_model(stem, model.field, model.bank);
            io::write_baked_ply(stem + ".ply", model.baked);
            jm["baked"] = stem + ".ply";
        } else {
            jm["error"] = model.error;
            all_ok = false;
        }
        report.push_back(std::move(jm));
    }
    std::ofstream(g.out + "/chunks.json") << report.dump(2) << "\n";
    std::cout << report.dump(2) << "\n";
    return all_ok ? 0 : 1;
}

int cmd_merge(const GlobalArgs& g, const std::string& plan_path, const std::string& chunks_dir,
              const std::string& out_ply) {
    io::RunConfig cfg = make_config(g);
    PartitionPlan plan = load_plan(plan_path);
    std::vector<BakedGaussianSet> per_chunk;
    for (const auto& chunk : plan.chunks) {
        const std::string ply = chunks_dir + "/chunk_" + std::to_string(chunk.grid_row) + "_" +
                                std::to_string(chunk.grid_col) + ".ply";
        if (!fs::exists(ply)) fail(Errc::MissingChunkModel, ply + " not found");
        per_chunk.push_back(io::read_baked_ply(ply, cfg.train.mode));
    }
    BakedGaussianSet merged = merge(plan, per_chunk);
    if (const auto dir = fs::path(out_ply).parent_path(); !dir.empty()) fs::create_directories(dir);
    io::write_baked_ply(out_ply, merged);
    std::cout << "merged " << merged.gaussians.size() << " gaussians to " << out_ply << "\n";
    return 0;
}

int cmd_mesh(const GlobalArgs& g, const std::string& data, const std::string& model,
             const std::string& out_ply, int resolution) {
    make_config(g);
    Scene scene = io::load_dataset(data);
    AnchorField field;
    DecoderBank bank;
    io::load_model(model, field, bank);
    if (bank.mode != PrimitiveMode::Disk2D)
        std::cerr << "warning: surface extraction expects a 2d-mode model\n";

    std::vector<DepthView> views;
    for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
        if (!scene.holdout.empty() && scene.holdout[i]) continue;
        const Camera& cam = scene.cameras[i];
        RenderOutput out = render_model(field, bank, cam);
        views.push_back({cam, std::move(out.depth)});
    }
    VolumeConfig vcfg;
    vcfg.resolution = resolution;
    TsdfVolume vol = fuse(views, vcfg);
    Mesh mesh = marching_cubes(vol);
    if (const auto dir = fs::path(out_ply).parent_path(); !dir.empty()) fs::create_directories(dir);
    write_mesh_ply(out_ply, mesh);
    std::cout << "mesh with " << mesh.vertices.size() << " vertices / " << mesh.triangles.size()
              << " triangles written to " << out_ply << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"aerial+street gaussian splatting pipeline"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config, "run configuration JSON");
    auto* seed_opt = app.add_option("--seed", g.seed, "global random seed");
    app.add_option("--mode", g.mode, "primitive mode: 3d or 2d");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--workers", g.workers, "worker threads (also SKYLINE_WORKERS)");

    std::string data, model, baked_ply, plan_path, chunks_dir, out_ply, which = "holdout";
    std::string split = "holdout";
    int toy_size = 64, grid_x = 2, grid_y = 1, resolution = 128;
    double margin = -1.0;

    auto* c_validate = app.add_subcommand("validate", "check dataset invariants");
    c_validate->add_option("--data", data)->required();

    auto* c_train = app.add_subcommand("train", "two-stage coarse-to-fine training");
    c_train->add_option("--data", data)->required();

    auto* c_render = app.add_subcommand("render", "render views to PNG + PFM");
    c_render->add_option("--data", data)->required();
    c_render->add_option("--model", model);
    c_render->add_option("--baked", baked_ply);
    c_render->add_option("--view", which, "holdout | all | <camera id>");

    auto* c_eval = app.add_subcommand("eval", "PSNR/SSIM tables (CSV + JSON)");
    c_eval->add_option("--data", data)->required();
    c_eval->add_option("--model", model)->required();
    c_eval->add_option("--split", split, "holdout | train | all");

    auto* c_bake = app.add_subcommand("bake", "convert hybrid model to explicit SH gaussians");
    c_bake->add_option("--model", model)->required();
    c_bake->add_option("--data", data);
    c_bake->add_option("--out-ply", out_ply)->required();

    auto* c_partition = app.add_subcommand("partition", "grid partition with augmentation");
    c_partition->add_option("--data", data)->required();
    c_partition->add_option("--grid-x", grid_x);
    c_partition->add_option("--grid-y", grid_y);
    c_partition->add_option("--margin", margin);

    auto* c_chunks = app.add_subcommand("train-chunks", "independent per-chunk training");
    c_chunks->add_option("--data", data)->required();
    c_chunks->add_option("--plan", plan_path)->required();

    auto* c_merge = app.add_subcommand("merge", "merge per-chunk baked models");
    c_merge->add_option("--plan", plan_path)->required();
    c_merge->add_option("--chunks", chunks_dir)->required();
    c_merge->add_option("--out-ply", out_ply)->required();

    auto* c_mesh = app.add_subcommand("mesh", "TSDF fusion + marching cubes");
    c_mesh->add_option("--data", data)->required();
    c_mesh->add_option("--model", model)->required();
    c_mesh->add_option("--out-ply", out_ply)->required();
    c_mesh->add_option("--resolution", resolution);

    auto* c_toy = app.add_subcommand("make-toy", "generate the bundled toy dataset");
    c_toy->add_option("--size", toy_size);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    g.seed_set = seed_opt->count() > 0;

    try {
        if (c_validate->parsed()) return cmd_validate(g, data);
        if (c_train->parsed()) return cmd_train(g, data);
        if (c_render->parsed()) return cmd_render(g, data, model, baked_ply, which);
        if (c_eval->parsed()) return cmd_eval(g, data, model, split);
        if (c_bake->parsed()) return cmd_bake(g, data, model, out_ply);
        if (c_partition->parsed()) return cmd_partition(g, data, grid_x, grid_y, margin);
        if (c_chunks->parsed()) return cmd_train_chunks(g, data, plan_path);
        if (c_merge->parsed()) return cmd_merge(g, plan_path, chunks_dir, out_ply);
        if (c_mesh->parsed()) return cmd_mesh(g, data, model, out_ply, resolution);
        if (c_toy->parsed()) return cmd_make_toy(g, toy_size);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
