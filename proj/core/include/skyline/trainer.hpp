#pragma once

#include <functional>
#include <string>
#include <vector>

#include "skyline/decoder.hpp"
#include "skyline/losses.hpp"
#include "skyline/optim.hpp"
#include "skyline/raster.hpp"
#include "skyline/scene.hpp"

namespace skyline {

struct StageSchedule {
    long stage1_iters = 60000;
    long stage2_iters = 40000;
    long densify_until1 = 30000;
    long densify_until2 = 20000; // into stage 2
    long densify_interval = 100; // N
    double r_stage1 = 2.0;       // aerial sampling odds R
    double r_stage2 = 1.0;
    double tau_sigma = 0.2;
    double tau_g = 0.15;
    double offset_lr_divisor_stage2 = 10.0;
    long checkpoint_interval = 0; // 0 = only final

    long total_iters() const { return stage1_iters + stage2_iters; }
    // Desk-scale runs shrink every iteration count by one factor.
    StageSchedule scaled(double f) const;
};

struct TrainOptions {
    PrimitiveMode mode = PrimitiveMode::Ellipsoid3D;
    std::uint64_t seed = 0;
    int k = 10;
    int feature_dim = 32;
    int embed_dim = 16;
    double base_voxel = 0.0; // <= 0: derived from the scene extent
    double rd_quantile = 0.999;
    StageSchedule schedule;
    LossConfig loss;

    double lr_feature = 0.0075;
    double lr_offset_init = 0.01;
    double lr_offset_final = 0.0001;
    double lr_scaling = 0.007;
    double lr_mlp_opacity = 0.002;
    double lr_mlp_cov = 0.004;
    double lr_mlp_color = 0.008;
    double lr_appearance = 0.01;
    double prune_opacity = 0.005;

    bool densify_enabled = true;
    bool single_stage = false; // ablation harness: joint training, same budget
    std::string out_dir;       // checkpoints + jsonl log; empty = in-memory only
};

struct Scene {
    std::vector<Camera> cameras;
    PointCloud points;
    std::vector<SupervisionBundle> supervision; // parallel to cameras
    std::vector<char> holdout;                  // parallel to cameras; 1 = eval split
};

// Eq. counts from raw distance samples. Quantiles are order statistics at
// round(q * (n - 1)). Degenerate when a minimum is non-positive or the aerial
// max falls below the aerial min.
void lod_counts_from_distances(std::vector<double> aerial, std::vector<double> street, double rd,
                               int* k_aerial, int* k_total);

// Distances are camera-center to frustum-visible points, per class.
LodConfig build_lod(const std::vector<Camera>& cameras, const PointCloud& points, double rd,
                    double base_voxel = 0.0);

// Balanced sampling: aerial with probability R/(R+1). eligible empty = all.
int sample_view_index(const std::vector<Camera>& cameras, double r_odds, Pcg32& rng,
                      const std::vector<char>* eligible = nullptr);

// Stats only accumulate from aerial passes in stage 1 and street passes in
// stage 2; stage 0 (joint ablation) accepts every view.
void accumulate_stats(AnchorField& field, const std::vector<NeuralGaussian>& gaussians,
                      const std::vector<GaussRenderStat>& stats, const std::vector<double>& screen_grad,
                      ViewClass view_class, int stage);

struct DensifyReport {
    std::vector<int> significant; // anchor indices meeting the threshold
    int spawned = 0;
    int deduplicated = 0;
};

// Significance rule grad_max * radius_max * mean_opacity^tau_sigma > tau_g;
// spawns at the voxel of the max-gradient Gaussian, same level in stage 1 and
// next level in stage 2. Resets every accumulator afterwards.
DensifyReport densify(AnchorField& field, const StageSchedule& sched, int stage, Pcg32& rng);

// Fine-tagged anchors whose windowed mean emitted opacity dropped below the
// threshold; Coarse (frozen) anchors are never selected.
std::vector<char> prune_mask(const AnchorField& field, double threshold);

std::uint64_t hash_anchor_params(const AnchorField& field, StageTag tag);
std::uint64_t hash_bank_params(const DecoderBank& bank);

struct TrainResult {
    AnchorField field;
    DecoderBank bank;
    std::vector<double> loss_history; // total loss per iteration
    std::string log_path;
};

class Trainer {
public:
    Trainer(const Scene& scene, const TrainOptions& opt);

    void run();
    // Runs until global iteration `stop_at` (inclusive upper bound across both
    // stages), for checkpoint/resume tests.
    void run_until(long stop_at);

    void save_checkpoint(const std::string& dir) const;
    static Trainer resume(const std::string& dir, const Scene& scene, const TrainOptions& opt);

    const AnchorField& field() const { return field_; }
    const DecoderBank& bank() const { return bank_; }
    AnchorField& field() { return field_; }
    DecoderBank& bank() { return bank_; }
    const std::vector<double>& loss_history() const { return loss_history_; }
    long global_iter() const { return global_iter_; }
    int stage() const { return stage_; }
    bool finished() const;
    const LodConfig& lod() const { return field_.lod; }
    void set_initial_appearance(const MatX& rows);

    RenderOutput render_view(const Camera& cam, RenderContext* ctx = nullptr) const;

private:
    void init_model();
    void one_iteration();
    void stage_transition();
    void optimizer_step(const DecoderGrads& grads, double stage_progress);
    void sync_optimizer_sizes();
    void densify_prune_event();
    void log_line(const std::string& json);
    long stage_iters(int stage) const;
    long densify_until(int stage) const;
    double r_odds(int stage) const;
    int active_levels(int stage) const;

    const Scene& scene_;
    TrainOptions opt_;
    AnchorField field_;
    DecoderBank bank_;
    Pcg32 rng_;
    Adam adam_feature_, adam_offsets_, adam_scaling_;
    Adam adam_mlp_op_, adam_mlp_cov_, adam_mlp_col_, adam_app_;
    int stage_ = 1; // 0 = single-stage ablation
    long iter_in_stage_ = 0;
    long global_iter_ = 0;
    bool frozen_bank_ = false;
    std::vector<double> loss_history_;
    std::string log_path_;
    std::vector<char> train_eligible_;

    friend struct TrainerIo;
};

// Renders a hybrid model for one camera at full LOD.
RenderOutput render_model(const AnchorField& field, const DecoderBank& bank, const Camera& cam,
                          int active_levels = 0, RenderContext* ctx = nullptr);

} // namespace skyline
