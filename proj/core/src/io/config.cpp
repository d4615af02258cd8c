#include "skyline/io/config.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "skyline/error.hpp"

namespace skyline::io {

using nlohmann::json;

void RunConfig::apply_scale() {
    if (desk_scale == 1.0) return;
    train.schedule = train.schedule.scaled(desk_scale);
    auto s = [&](long v) { return std::max<long>(0, static_cast<long>(std::llround(v * desk_scale))); };
    train.loss.depth_start_iter = s(train.loss.depth_start_iter);
    train.loss.normal_start_iter = s(train.loss.normal_start_iter);
    train.loss.total_iters = train.schedule.total_iters();
    appearance_warmup_iters = std::max<long>(1, s(appearance_warmup_iters));
    desk_scale = 1.0;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(Errc::IoError, "cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        fail(Errc::ParseError, path + ": " + e.what());
    }

    RunConfig cfg;
    TrainOptions& t = cfg.train;
    StageSchedule& s = t.schedule;
    LossConfig& l = t.loss;

    const std::string mode = j.value("mode", "3d");
    if (mode == "2d") t.mode = PrimitiveMode::Disk2D;
    else if (mode == "3d") t.mode = PrimitiveMode::Ellipsoid3D;
    else fail(Errc::ParseError, path + ": mode must be 2d or 3d");

    t.seed = j.value("seed", static_cast<std::uint64_t>(0));
    t.k = j.value("k", t.k);
    t.feature_dim = j.value("feature_dim", t.feature_dim);
    t.embed_dim = j.value("embed_dim", t.embed_dim);
    t.base_voxel = j.value("base_voxel", t.base_voxel);
    t.rd_quantile = j.value("rd_quantile", t.rd_quantile);
    t.single_stage = j.value("single_stage", false);
    t.densify_enabled = j.value("densify_enabled", true);
    t.prune_opacity = j.value("prune_opacity", t.prune_opacity);

    s.stage1_iters = j.value("stage1_iters", s.stage1_iters);
    s.stage2_iters = j.value("stage2_iters", s.stage2_iters);
    s.densify_until1 = j.value("densify_until1", s.densify_until1);
    s.densify_until2 = j.value("densify_until2", s.densify_until2);
    s.densify_interval = j.value("densify_interval", s.densify_interval);
    s.r_stage1 = j.value("r_stage1", s.r_stage1);
    s.r_stage2 = j.value("r_stage2", s.r_stage2);
    s.tau_sigma = j.value("tau_sigma", s.tau_sigma);
    s.tau_g = j.value("tau_g", s.tau_g);
    s.offset_lr_divisor_stage2 = j.value("offset_lr_divisor_stage2", s.offset_lr_divisor_stage2);
    s.checkpoint_interval = j.value("checkpoint_interval", s.checkpoint_interval);

    l.lambda_ssim = j.value("lambda_ssim", l.lambda_ssim);
    l.lambda_vol = j.value("lambda_vol", l.lambda_vol);
    l.lambda_o = j.value("lambda_o", l.lambda_o);
    l.lambda_n = j.value("lambda_n", l.lambda_n);
    l.lambda_d_init = j.value("lambda_d_init", l.lambda_d_init);
    l.lambda_d_final = j.value("lambda_d_final", l.lambda_d_final);
    l.depth_start_iter = j.value("depth_start_iter", l.depth_start_iter);
    l.normal_start_iter = j.value("normal_start_iter", l.normal_start_iter);

    t.lr_feature = j.value("lr_feature", t.lr_feature);
    t.lr_offset_init = j.value("lr_offset_init", t.lr_offset_init);
    t.lr_offset_final = j.value("lr_offset_final", t.lr_offset_final);
    t.lr_scaling = j.value("lr_scaling", t.lr_scaling);
    t.lr_mlp_opacity = j.value("lr_mlp_opacity", t.lr_mlp_opacity);
    t.lr_mlp_cov = j.value("lr_mlp_cov", t.lr_mlp_cov);
    t.lr_mlp_color = j.value("lr_mlp_color", t.lr_mlp_color);
    t.lr_appearance = j.value("lr_appearance", t.lr_appearance);

    cfg.desk_scale = j.value("desk_scale", 1.0);
    cfg.chunks_x = j.value("chunks_x", 1);
    cfg.chunks_y = j.value("chunks_y", 1);
    cfg.margin = j.value("margin", -1.0);
    cfg.visibility_threshold = j.value("visibility_threshold", 0.25);
    cfg.workers = j.value("workers", 0);
    cfg.appearance_warmup_iters = j.value("appearance_warmup_iters", cfg.appearance_warmup_iters);
    return cfg;
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
    const TrainOptions& t = cfg.train;
    const StageSchedule& s = t.schedule;
    const LossConfig& l = t.loss;
    json j;
    j["mode"] = t.mode == PrimitiveMode::Disk2D ? "2d" : "3d";
    j["seed"] = t.seed;
    j["k"] = t.k;
    j["feature_dim"] = t.feature_dim;
    j["embed_dim"] = t.embed_dim;
    j["base_voxel"] = t.base_voxel;
    j["rd_quantile"] = t.rd_quantile;
    j["single_stage"] = t.single_stage;
    j["densify_enabled"] = t.densify_enabled;
    j["prune_opacity"] = t.prune_opacity;
    j["stage1_iters"] = s.stage1_iters;
    j["stage2_iters"] = s.stage2_iters;
    j["densify_until1"] = s.densify_until1;
    j["densify_until2"] = s.densify_until2;
    j["densify_interval"] = s.densify_interval;
    j["r_stage1"] = s.r_stage1;
    j["r_stage2"] = s.r_stage2;
    j["tau_sigma"] = s.tau_sigma;
    j["tau_g"] = s.tau_g;
    j["offset_lr_divisor_stage2"] = s.offset_lr_divisor_stage2;
    j["checkpoint_interval"] = s.checkpoint_interval;
    j["lambda_ssim"] = l.lambda_ssim;
    j["lambda_vol"] = l.lambda_vol;
    j["lambda_o"] = l.lambda_o;
    j["lambda_n"] = l.lambda_n;
    j["lambda_d_init"] = l.lambda_d_init;
    j["lambda_d_final"] = l.lambda_d_final;
    j["depth_start_iter"] = l.depth_start_iter;
    j["normal_start_iter"] = l.normal_start_iter;
    j["lr_feature"] = t.lr_feature;
    j["lr_offset_init"] = t.lr_offset_init;
    j["lr_offset_final"] = t.lr_offset_final;
    j["lr_scaling"] = t.lr_scaling;
    j["lr_mlp_opacity"] = t.lr_mlp_opacity;
    j["lr_mlp_cov"] = t.lr_mlp_cov;
    j["lr_mlp_color"] = t.lr_mlp_color;
    j["lr_appearance"] = t.lr_appearance;
    j["desk_scale"] = cfg.desk_scale;
    j["chunks_x"] = cfg.chunks_x;
    j["chunks_y"] = cfg.chunks_y;
    j["margin"] = cfg.margin;
    j["visibility_threshold"] = cfg.visibility_threshold;
    j["workers"] = cfg.workers;
    j["appearance_warmup_iters"] = cfg.appearance_warmup_iters;
    std::ofstream f(path);
    if (!f) fail(Errc::IoError, "cannot open " + path + " for writing");
    f << j.dump(2) << "\n";
}

} // namespace skyline::io
