#include "skyline/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "skyline/io/checkpoint.hpp"

namespace skyline {

StageSchedule StageSchedule::scaled(double f) const {
    auto s = [&](long v) { return std::max<long>(1, static_cast<long>(std::llround(v * f))); };
    StageSchedule out = *this;
    out.stage1_iters = s(stage1_iters);
    out.stage2_iters = s(stage2_iters);
    out.densify_until1 = s(densify_until1);
    out.densify_until2 = s(densify_until2);
    out.densify_interval = s(densify_interval);
    if (checkpoint_interval > 0) out.checkpoint_interval = s(checkpoint_interval);
    return out;
}

namespace {
double order_quantile(const std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    const long idx = std::lround(q * static_cast<double>(n - 1));
    return sorted[static_cast<std::size_t>(std::clamp<long>(idx, 0, static_cast<long>(n) - 1))];
}
} // namespace

void lod_counts_from_distances(std::vector<double> aerial, std::vector<double> street, double rd,
                               int* k_aerial, int* k_total) {
    if (aerial.empty() || street.empty()) fail(Errc::DegenerateDistances, "empty distance set");
    std::sort(aerial.begin(), aerial.end());
    std::sort(street.begin(), street.end());
    const double d_max_aerial = order_quantile(aerial, rd);
    const double d_min_aerial = order_quantile(aerial, 1.0 - rd);
    const double d_min_street = order_quantile(street, 1.0 - rd);
    if (!(d_min_aerial > 0.0) || !(d_min_street > 0.0))
        fail(Errc::DegenerateDistances, "non-positive minimum distance");
    if (d_max_aerial < d_min_aerial) fail(Errc::DegenerateDistances, "aerial max below aerial min");

    const int ka = static_cast<int>(std::floor(std::log2(d_max_aerial / d_min_aerial))) + 1;
    // The street increment can go negative when street cameras are no closer
    // than aerial ones; clamp it to zero.
    const int inc = std::max(0, static_cast<int>(std::floor(std::log2(d_min_aerial / d_min_street))));
    *k_aerial = ka;
    *k_total = ka + inc;
}

LodConfig build_lod(const std::vector<Camera>& cameras, const PointCloud& points, double rd,
                    double base_voxel) {
    if (points.empty()) fail(Errc::EmptyPointCloud, "build_lod needs points");
    std::vector<double> aerial, street, all;
    Bounds2 bbox;
    bool first = true;
    for (const auto& p : points.positions) {
        if (first) {
            bbox.min = bbox.max = ground_projection(p);
            first = false;
        } else {
            bbox.absorb(ground_projection(p));
        }
    }
    for (const auto& cam : cameras) {
        const Vec3 c = cam.center();
        for (const auto& p : points.positions) {
            if (!cam.sees(p)) continue;
            const double d = (p - c).norm();
            (cam.view_class == ViewClass::Aerial ? aerial : street).push_back(d);
            all.push_back(d);
        }
    }
    if (aerial.empty() || street.empty())
        fail(Errc::DegenerateDistances, "a camera class sees no initialization points");

    LodConfig lod;
    lod.rd_quantile = rd;
    lod_counts_from_distances(aerial, street, rd, &lod.aerial_levels, &lod.levels);

    std::sort(all.begin(), all.end());
    const double d0 = order_quantile(all, rd);
    lod.level_distance_cutoffs.resize(static_cast<std::size_t>(lod.levels));
    for (int l = 0; l < lod.levels; ++l)
        lod.level_distance_cutoffs[static_cast<std::size_t>(l)] = d0 / static_cast<double>(1 << l);

    lod.base_voxel = base_voxel > 0.0 ? base_voxel : std::max(1e-3, bbox.extent().maxCoeff() / 32.0);
    return lod;
}

int sample_view_index(const std::vector<Camera>& cameras, double r_odds, Pcg32& rng,
                      const std::vector<char>* eligible) {
    std::vector<int> aerial, street;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        if (eligible && !(*eligible)[i]) continue;
        (cameras[i].view_class == ViewClass::Aerial ? aerial : street).push_back(static_cast<int>(i));
    }
    if (aerial.empty() || street.empty())
        fail(Errc::MissingClass, "balanced sampling needs both camera classes");
    const double u = rng.next_double();
    if (u < r_odds / (r_odds + 1.0)) return aerial[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(aerial.size())))];
    return street[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(street.size())))];
}

void accumulate_stats(AnchorField& field, const std::vector<NeuralGaussian>& gaussians,
                      const std::vector<GaussRenderStat>& stats, const std::vector<double>& screen_grad,
                      ViewClass view_class, int stage) {
    if (stage == 1 && view_class != ViewClass::Aerial) return;
    if (stage == 2 && view_class != ViewClass::Street) return;
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        if (!stats[i].contributed) continue;
        const int ai = gaussians[i].source_anchor;
        if (ai < 0) continue;
        DensifyAccum& acc = field.stats[static_cast<std::size_t>(ai)];
        const double g = screen_grad[i];
        if (g > acc.grad_max) {
            acc.grad_max = g;
            acc.grad_argmax_pos = gaussians[i].mu;
        }
        acc.radius_max = std::max(acc.radius_max, stats[i].radius);
        acc.opacity_sum += gaussians[i].sigma;
        acc.contrib_count += 1;
    }
}

DensifyReport densify(AnchorField& field, const StageSchedule& sched, int stage, Pcg32& rng) {
    DensifyReport rep;
    const std::size_t n = field.anchors.size(); // spawn targets appended past n
    for (std::size_t i = 0; i < n; ++i) {
        const DensifyAccum& acc = field.stats[i];
        if (acc.contrib_count <= 0) continue;
        const double score =
            acc.grad_max * acc.radius_max * std::pow(acc.mean_opacity(), sched.tau_sigma);
        if (!(score > sched.tau_g)) continue;
        rep.significant.push_back(static_cast<int>(i));
        const int src_level = field.anchors[i].level;
        const int target =
            stage == 2 ? std::min(src_level + 1, field.lod.levels - 1) : src_level;
        const int added = field.add_anchor(acc.grad_argmax_pos, target, StageTag::Fine, rng);
        if (added >= 0)
            rep.spawned++;
        else
            rep.deduplicated++;
    }
    for (auto& acc : field.stats) acc.reset();
    return rep;
}

std::vector<char> prune_mask(const AnchorField& field, double threshold) {
    std::vector<char> mask(field.anchors.size(), 0);
    for (std::size_t i = 0; i < field.anchors.size(); ++i) {
        if (field.anchors[i].stage_tag != StageTag::Fine) continue;
        const DensifyAccum& acc = field.stats[i];
        if (acc.contrib_count > 0 && acc.mean_opacity() < threshold) mask[i] = 1;
    }
    return mask;
}

std::uint64_t hash_anchor_params(const AnchorField& field, StageTag tag) {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& a : field.anchors) {
        if (a.stage_tag != tag) continue;
        h = fnv1a(a.feature, h);
        h = fnv1a(a.log_scaling.data(), sizeof(double) * 3, h);
        for (const auto& o : a.offsets) h = fnv1a(o.data(), sizeof(double) * 3, h);
    }
    return h;
}

std::uint64_t hash_bank_params(const DecoderBank& bank) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix_mlp = [&](const Mlp& m) {
        h = fnv1a(m.W1.data(), sizeof(double) * static_cast<std::size_t>(m.W1.size()), h);
        h = fnv1a(m.b1.data(), sizeof(double) * static_cast<std::size_t>(m.b1.size()), h);
        h = fnv1a(m.W2.data(), sizeof(double) * static_cast<std::size_t>(m.W2.size()), h);
        h = fnv1a(m.b2.data(), sizeof(double) * static_cast<std::size_t>(m.b2.size()), h);
    };
    mix_mlp(bank.mlp_opacity);
    mix_mlp(bank.mlp_color);
    mix_mlp(bank.mlp_cov);
    h = fnv1a(bank.appearance.data(), sizeof(double) * static_cast<std::size_t>(bank.appearance.size()), h);
    return h;
}

RenderOutput render_model(const AnchorField& field, const DecoderBank& bank, const Camera& cam,
                          int active_levels, RenderContext* ctx) {
    if (active_levels <= 0) active_levels = field.lod.levels;
    const auto sel = select_anchors(field, cam, active_levels);
    const auto gaussians = decode(field, sel, bank, cam, cam.appearance_id);
    return rasterize(gaussians, cam, bank.mode, ctx);
}

Trainer::Trainer(const Scene& scene, const TrainOptions& opt) : scene_(scene), opt_(opt), rng_(opt.seed) {
    validate_scene(scene.cameras, scene.points, true);
    train_eligible_.assign(scene.cameras.size(), 1);
    if (!scene.holdout.empty())
        for (std::size_t i = 0; i < scene.cameras.size(); ++i) train_eligible_[i] = scene.holdout[i] ? 0 : 1;
    if (opt_.single_stage) stage_ = 0;
    init_model();
}

void Trainer::init_model() {
    LodConfig lod = build_lod(scene_.cameras, scene_.points, opt_.rd_quantile, opt_.base_voxel);
    // Stage 1 seeds only the aerial levels; deeper levels grow by stage-2
    // densification.
    field_ = init_anchors(scene_.points, lod, opt_.k, opt_.feature_dim, rng_, lod.aerial_levels);

    int n_images = 1;
    for (const auto& cam : scene_.cameras) n_images = std::max(n_images, cam.appearance_id + 1);
    bank_.init(opt_.mode, opt_.k, opt_.feature_dim, opt_.embed_dim, n_images, rng_);

    opt_.loss.total_iters = opt_.schedule.total_iters();
    sync_optimizer_sizes();

    if (!opt_.out_dir.empty()) {
        std::filesystem::create_directories(opt_.out_dir);
        log_path_ = opt_.out_dir + "/train_log.jsonl";
        std::ofstream(log_path_, std::ios::trunc);
    }
}

void Trainer::set_initial_appearance(const MatX& rows) {
    const long n = std::min<long>(rows.rows(), bank_.appearance.rows());
    if (rows.cols() != bank_.appearance.cols()) fail(Errc::ShapeMismatch, "appearance warm start width");
    bank_.appearance.topRows(n) = rows.topRows(n);
}

long Trainer::stage_iters(int stage) const {
    if (stage == 0) return opt_.schedule.total_iters();
    return stage == 1 ? opt_.schedule.stage1_iters : opt_.schedule.stage2_iters;
}

long Trainer::densify_until(int stage) const {
    if (stage == 0) return opt_.schedule.densify_until1 + opt_.schedule.densify_until2;
    return stage == 1 ? opt_.schedule.densify_until1 : opt_.schedule.densify_until2;
}

double Trainer::r_odds(int stage) const {
    if (stage == 0) return 1.0;
    return stage == 1 ? opt_.schedule.r_stage1 : opt_.schedule.r_stage2;
}

int Trainer::active_levels(int stage) const {
    return stage == 1 ? field_.lod.aerial_levels : field_.lod.levels;
}

bool Trainer::finished() const {
    if (stage_ == 0 || stage_ == 2) return iter_in_stage_ >= stage_iters(stage_);
    return false;
}

void Trainer::run() { run_until(opt_.schedule.total_iters()); }

void Trainer::run_until(long stop_at) {
    while (!finished() && global_iter_ < stop_at) {
        if (stage_ == 1 && iter_in_stage_ >= stage_iters(1)) {
            stage_transition();
            continue;
        }
        one_iteration();
        if (opt_.schedule.checkpoint_interval > 0 && !opt_.out_dir.empty() &&
            global_iter_ % opt_.schedule.checkpoint_interval == 0) {
            save_checkpoint(opt_.out_dir + "/checkpoint_" + std::to_string(global_iter_));
        }
    }
    if (stage_ == 1 && iter_in_stage_ >= stage_iters(1) && global_iter_ < stop_at) stage_transition();
}

void Trainer::stage_transition() {
    for (auto& a : field_.anchors) a.stage_tag = StageTag::Coarse;
    frozen_bank_ = true;
    // Frozen groups drop their optimizer state; new Fine anchors start fresh.
    adam_feature_.reset(adam_feature_.size());
    adam_offsets_.reset(adam_offsets_.size());
    adam_scaling_.reset(adam_scaling_.size());
    adam_mlp_op_.reset(adam_mlp_op_.size());
    adam_mlp_cov_.reset(adam_mlp_cov_.size());
    adam_mlp_col_.reset(adam_mlp_col_.size());
    adam_app_.reset(adam_app_.size());
    for (auto& acc : field_.stats) acc.reset();
    stage_ = 2;
    iter_in_stage_ = 0;
    log_line("{\"event\":\"stage_transition\",\"iter\":" + std::to_string(global_iter_) + "}");
}

void Trainer::sync_optimizer_sizes() {
    const std::size_t n = field_.anchors.size();
    const std::size_t f = static_cast<std::size_t>(opt_.feature_dim);
    const std::size_t k3 = static_cast<std::size_t>(opt_.k) * 3;
    auto grow = [](Adam& a, std::size_t want) {
        if (a.size() < want) a.append_zeros(want - a.size());
    };
    grow(adam_feature_, n * f);
    grow(adam_offsets_, n * k3);
    grow(adam_scaling_, n * 3);
    grow(adam_mlp_op_, bank_.mlp_opacity.param_count());
    grow(adam_mlp_cov_, bank_.mlp_cov.param_count());
    grow(adam_mlp_col_, bank_.mlp_color.param_count());
    grow(adam_app_, static_cast<std::size_t>(bank_.appearance.size()));
}

void Trainer::optimizer_step(const DecoderGrads& grads, double stage_progress) {
    const std::size_t f = static_cast<std::size_t>(opt_.feature_dim);
    const int k = opt_.k;
    double lr_offset = exp_lr(opt_.lr_offset_init, opt_.lr_offset_final, stage_progress);
    if (stage_ == 2) lr_offset /= opt_.schedule.offset_lr_divisor_stage2;

    adam_feature_.begin_step();
    adam_offsets_.begin_step();
    adam_scaling_.begin_step();
    for (std::size_t i = 0; i < field_.anchors.size(); ++i) {
        Anchor& a = field_.anchors[i];
        if (a.stage_tag == StageTag::Coarse && stage_ == 2) continue; // frozen, grads discarded
        adam_feature_.update(a.feature.data(), grads.d_feature[i].data(), i * f, f, opt_.lr_feature);
        for (int j = 0; j < k; ++j)
            adam_offsets_.update(a.offsets[static_cast<std::size_t>(j)].data(),
                                 grads.d_offsets[i][static_cast<std::size_t>(j)].data(),
                                 (i * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)) * 3, 3,
                                 lr_offset);
        adam_scaling_.update(a.log_scaling.data(), grads.d_log_scaling[i].data(), i * 3, 3, opt_.lr_scaling);
    }

    if (!frozen_bank_) {
        auto step_mlp = [](Adam& adam, Mlp& m, const MlpGrads& g, double lr) {
            adam.begin_step();
            std::size_t off = 0;
            adam.update(m.W1.data(), g.dW1.data(), off, static_cast<std::size_t>(m.W1.size()), lr);
            off += static_cast<std::size_t>(m.W1.size());
            adam.update(m.b1.data(), g.db1.data(), off, static_cast<std::size_t>(m.b1.size()), lr);
            off += static_cast<std::size_t>(m.b1.size());
            adam.update(m.W2.data(), g.dW2.data(), off, static_cast<std::size_t>(m.W2.size()), lr);
            off += static_cast<std::size_t>(m.W2.size());
            adam.update(m.b2.data(), g.db2.data(), off, static_cast<std::size_t>(m.b2.size()), lr);
        };
        step_mlp(adam_mlp_op_, bank_.mlp_opacity, grads.g_opacity, opt_.lr_mlp_opacity);
        step_mlp(adam_mlp_cov_, bank_.mlp_cov, grads.g_cov, opt_.lr_mlp_cov);
        step_mlp(adam_mlp_col_, bank_.mlp_color, grads.g_color, opt_.lr_mlp_color);
        adam_app_.begin_step();
        adam_app_.update(bank_.appearance.data(), grads.d_appearance.data(), 0,
                         static_cast<std::size_t>(bank_.appearance.size()), opt_.lr_appearance);
    }
}

void Trainer::densify_prune_event() {
    const std::size_t before = field_.anchors.size();
    const int densify_stage = stage_ == 0 ? 1 : stage_; // joint ablation spawns same-level
    DensifyReport rep = densify(field_, opt_.schedule, densify_stage, rng_);
    sync_optimizer_sizes();

    // Prune on the stats window that preceded this event; densify already
    // reset the accumulators, so pruning uses its own pass on the next window.
    (void)before;
    std::ostringstream os;
    os << "{\"event\":\"densify\",\"iter\":" << global_iter_ << ",\"significant\":" << rep.significant.size()
       << ",\"spawned\":" << rep.spawned << ",\"dedup\":" << rep.deduplicated
       << ",\"anchors\":" << field_.anchors.size() << "}";
    log_line(os.str());
}

void Trainer::one_iteration() {
    const Camera& cam =
        scene_.cameras[static_cast<std::size_t>(sample_view_index(scene_.cameras, r_odds(stage_), rng_, &train_eligible_))];
    const std::size_t cam_idx = static_cast<std::size_t>(&cam - scene_.cameras.data());

    const auto sel = select_anchors(field_, cam, active_levels(stage_));
    DecodeContext dctx;
    auto gaussians = decode(field_, sel, bank_, cam, cam.appearance_id, &dctx);
    RenderContext rctx;
    RenderOutput out = rasterize(gaussians, cam, bank_.mode, &rctx);

    const long loss_iter = global_iter_; // losses gate on the global schedule
    LossResult loss;
    if (bank_.mode == PrimitiveMode::Disk2D)
        loss = loss_surface(out, scene_.supervision[cam_idx], opt_.loss, loss_iter, bank_.mode, cam,
                            &gaussians, &out.stats);
    else
        loss = loss_render(out, scene_.supervision[cam_idx], opt_.loss, loss_iter, &gaussians, &out.stats,
                           bank_.mode);

    if (!std::isfinite(loss.terms.total)) {
        if (!opt_.out_dir.empty()) save_checkpoint(opt_.out_dir + "/diagnostic_nonfinite");
        fail(Errc::NonFiniteLoss, "loss diverged at iteration " + std::to_string(global_iter_));
    }

    GaussianGrads ggrads = rasterize_backward(rctx, loss.grad);
    if (!loss.d_scale.empty())
        for (std::size_t i = 0; i < gaussians.size(); ++i) ggrads.d_s[i] += loss.d_scale[i];

    DecoderGrads dgrads;
    dgrads.init(field_, bank_);
    decode_backward(field_, bank_, dctx, ggrads, dgrads);

    const double progress = static_cast<double>(iter_in_stage_) / static_cast<double>(stage_iters(stage_));
    optimizer_step(dgrads, progress);

    accumulate_stats(field_, gaussians, out.stats, ggrads.screen_grad, cam.view_class, stage_);

    ++iter_in_stage_;
    ++global_iter_;
    loss_history_.push_back(loss.terms.total);

    if (opt_.densify_enabled && iter_in_stage_ > 0 && iter_in_stage_ % opt_.schedule.densify_interval == 0 &&
        iter_in_stage_ <= densify_until(stage_)) {
        // Prune first on the closing window, then spawn.
        const auto mask = prune_mask(field_, opt_.prune_opacity);
        const long removed = std::count(mask.begin(), mask.end(), 1);
        if (removed > 0) {
            field_.remove_anchors(mask);
            const std::size_t f = static_cast<std::size_t>(opt_.feature_dim);
            adam_feature_.remove_rows(mask, f);
            adam_offsets_.remove_rows(mask, static_cast<std::size_t>(opt_.k) * 3);
            adam_scaling_.remove_rows(mask, 3);
            std::ostringstream os;
            os << "{\"event\":\"prune\",\"iter\":" << global_iter_ << ",\"removed\":" << removed << "}";
            log_line(os.str());
        }
        densify_prune_event();
    }

    if (!log_path_.empty() && (global_iter_ % 10 == 0 || global_iter_ == 1)) {
        std::ostringstream os;
        os << "{\"iter\":" << global_iter_ << ",\"stage\":" << stage_ << ",\"total\":" << loss.terms.total
           << ",\"l1\":" << loss.terms.l1 << ",\"ssim\":" << loss.terms.ssim_term
           << ",\"vol\":" << loss.terms.vol << ",\"depth\":" << loss.terms.depth
           << ",\"opacity\":" << loss.terms.opacity << ",\"normal\":" << loss.terms.normal
           << ",\"anchors\":" << field_.anchors.size() << "}";
        log_line(os.str());
    }
}

void Trainer::log_line(const std::string& json) {
    if (log_path_.empty()) return;
    std::ofstream f(log_path_, std::ios::app);
    f << json << "\n";
}

RenderOutput Trainer::render_view(const Camera& cam, RenderContext* ctx) const {
    return render_model(field_, bank_, cam, field_.lod.levels, ctx);
}

void Trainer::save_checkpoint(const std::string& dir) const { TrainerIo::save(*this, dir); }

Trainer Trainer::resume(const std::string& dir, const Scene& scene, const TrainOptions& opt) {
    Trainer t(scene, opt);
    TrainerIo::load(t, dir);
    return t;
}

} // namespace skyline
