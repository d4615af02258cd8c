#include "skyline/decoder.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "skyline/parallel.hpp"

namespace skyline {

namespace {
std::atomic<std::size_t> g_decode_stamp{1};
}

void Mlp::init(int in, int hidden, int out, Pcg32& rng) {
    W1.resize(hidden, in);
    b1 = VecX::Zero(hidden);
    W2.resize(out, hidden);
    b2 = VecX::Zero(out);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (int r = 0; r < W1.rows(); ++r)
        for (int c = 0; c < W1.cols(); ++c) W1(r, c) = rng.uniform(-s1, s1);
    for (int r = 0; r < W2.rows(); ++r)
        for (int c = 0; c < W2.cols(); ++c) W2(r, c) = rng.uniform(-s2, s2);
}

VecX Mlp::forward(const VecX& x, VecX* hidden_act) const {
    VecX h = (W1 * x + b1).array().tanh();
    VecX out = W2 * h + b2;
    if (hidden_act) *hidden_act = std::move(h);
    return out;
}

VecX Mlp::backward(const VecX& x, const VecX& hidden_act, const VecX& d_out, MlpGrads* grads) const {
    VecX d_h = W2.transpose() * d_out;
    d_h.array() *= (1.0 - hidden_act.array().square());
    if (grads) {
        grads->dW2 += d_out * hidden_act.transpose();
        grads->db2 += d_out;
        grads->dW1 += d_h * x.transpose();
        grads->db1 += d_h;
    }
    return W1.transpose() * d_h;
}

std::size_t Mlp::param_count() const {
    return static_cast<std::size_t>(W1.size() + b1.size() + W2.size() + b2.size());
}

void MlpGrads::zero_like(const Mlp& m) {
    dW1 = MatX::Zero(m.W1.rows(), m.W1.cols());
    db1 = VecX::Zero(m.b1.size());
    dW2 = MatX::Zero(m.W2.rows(), m.W2.cols());
    db2 = VecX::Zero(m.b2.size());
}

void MlpGrads::add(const MlpGrads& other) {
    dW1 += other.dW1;
    db1 += other.db1;
    dW2 += other.dW2;
    db2 += other.db2;
}

void DecoderBank::init(PrimitiveMode m, int k_, int feature_dim_, int embed_dim_, int n_images, Pcg32& rng) {
    mode = m;
    k = k_;
    feature_dim = feature_dim_;
    embed_dim = embed_dim_;
    mlp_opacity.init(input_dim(), hidden, k, rng);
    mlp_color.init(input_dim(), hidden, 3 * k, rng);
    mlp_cov.init(input_dim(), hidden, cov_stride() * k, rng);
    appearance = MatX::Zero(std::max(1, n_images), embed_dim);
}

std::vector<int> select_anchors(const AnchorField& field, const Camera& cam, int active_levels) {
    active_levels = std::min(active_levels, field.lod.levels);
    const Vec3 c = cam.center();
    std::vector<int> out;
    out.reserve(field.anchors.size());
    for (std::size_t i = 0; i < field.anchors.size(); ++i) {
        const Anchor& a = field.anchors[i];
        if (a.level >= active_levels) continue;
        if (a.level > 0) {
            const double dist = (a.position - c).norm();
            if (dist > field.lod.level_distance_cutoffs[static_cast<std::size_t>(a.level)]) continue;
        }
        out.push_back(static_cast<int>(i));
    }
    return out;
}

namespace {

VecX assemble_input(const DecoderBank& bank, const Anchor& a, const Vec3& view_dir, double dist,
                    int appearance_id) {
    VecX x(bank.input_dim());
    x.head(bank.feature_dim) = a.feature;
    x.segment(bank.feature_dim, 3) = view_dir;
    x[bank.feature_dim + 3] = dist;
    const int row = std::min<int>(appearance_id, static_cast<int>(bank.appearance.rows()) - 1);
    x.tail(bank.embed_dim) = bank.appearance.row(std::max(0, row)).transpose();
    return x;
}

// Decodes the k candidate Gaussians of one anchor from cached activations.
void emit_from_entry(const AnchorField& field, const DecoderBank& bank, DecodeEntry& entry,
                     std::vector<NeuralGaussian>& out_local) {
    const Anchor& a = field.anchors[static_cast<std::size_t>(entry.anchor_index)];
    const Vec3 scaling = a.scaling();
    const int stride = bank.cov_stride();
    entry.emitted.assign(static_cast<std::size_t>(bank.k), -1);
    for (int i = 0; i < bank.k; ++i) {
        const double sigma = sigmoid(entry.raw_op[i]);
        if (sigma <= kOpacityCull) continue;
        NeuralGaussian g;
        g.sigma = sigma;
        g.mu = a.position + a.offsets[static_cast<std::size_t>(i)].cwiseProduct(scaling);
        for (int ch = 0; ch < 3; ++ch) g.color[ch] = sigmoid(entry.raw_col[3 * i + ch]);
        Vec4 qraw(entry.raw_cov[stride * i + 0] + 1.0, entry.raw_cov[stride * i + 1],
                  entry.raw_cov[stride * i + 2], entry.raw_cov[stride * i + 3]);
        g.q = normalize_quat(qraw);
        g.s = Vec3::Ones();
        for (int j = 0; j < bank.scale_comps(); ++j)
            g.s[j] = std::exp(clampd(entry.raw_cov[stride * i + 4 + j], -kScaleRawClamp, kScaleRawClamp)) *
                     scaling[j];
        g.source_anchor = entry.anchor_index;
        g.level = a.level;
        entry.emitted[static_cast<std::size_t>(i)] = static_cast<int>(out_local.size());
        out_local.push_back(g);
    }
}

} // namespace

std::vector<NeuralGaussian> decode(const AnchorField& field, const std::vector<int>& anchor_indices,
                                   const DecoderBank& bank, const Camera& cam, int appearance_id,
                                   DecodeContext* ctx_out) {
    DecodeContext local;
    DecodeContext& ctx = ctx_out ? *ctx_out : local;
    ctx = DecodeContext{};
    ctx.mode = bank.mode;
    ctx.k = bank.k;
    ctx.appearance_id = appearance_id;
    ctx.bank_stamp = g_decode_stamp.fetch_add(1);

    const Vec3 cam_center = cam.center();
    const int n = static_cast<int>(anchor_indices.size());
    ctx.entries.resize(static_cast<std::size_t>(n));
    std::vector<std::vector<NeuralGaussian>> per_entry(static_cast<std::size_t>(n));

    parallel_for(n, [&](int ei) {
        DecodeEntry& e = ctx.entries[static_cast<std::size_t>(ei)];
        e.anchor_index = anchor_indices[static_cast<std::size_t>(ei)];
        const Anchor& a = field.anchors[static_cast<std::size_t>(e.anchor_index)];
        Vec3 dvec = cam_center - a.position;
        double dist = dvec.norm();
        Vec3 dirn = dist > 1e-12 ? Vec3(dvec / dist) : Vec3(0, 0, 1);
        e.x = assemble_input(bank, a, dirn, dist, appearance_id);
        e.raw_op = bank.mlp_opacity.forward(e.x, &e.h_op);
        e.raw_col = bank.mlp_color.forward(e.x, &e.h_col);
        e.raw_cov = bank.mlp_cov.forward(e.x, &e.h_cov);
        emit_from_entry(field, bank, e, per_entry[static_cast<std::size_t>(ei)]);
    });

    std::vector<NeuralGaussian> out;
    for (int ei = 0; ei < n; ++ei) {
        DecodeEntry& e = ctx.entries[static_cast<std::size_t>(ei)];
        const int base = static_cast<int>(out.size());
        for (int i = 0; i < bank.k; ++i) {
            int& slot = e.emitted[static_cast<std::size_t>(i)];
            if (slot < 0) continue;
            slot += base;
            ctx.origin.emplace_back(ei, i);
        }
        auto& chunk = per_entry[static_cast<std::size_t>(ei)];
        out.insert(out.end(), chunk.begin(), chunk.end());
    }
    return out;
}

void DecoderGrads::init(const AnchorField& field, const DecoderBank& bank) {
    d_feature.assign(field.anchors.size(), VecX::Zero(bank.feature_dim));
    d_log_scaling.assign(field.anchors.size(), Vec3::Zero());
    d_offsets.assign(field.anchors.size(),
                     std::vector<Vec3>(static_cast<std::size_t>(bank.k), Vec3::Zero()));
    g_opacity.zero_like(bank.mlp_opacity);
    g_color.zero_like(bank.mlp_color);
    g_cov.zero_like(bank.mlp_cov);
    d_appearance = MatX::Zero(bank.appearance.rows(), bank.appearance.cols());
}

void decode_backward(const AnchorField& field, const DecoderBank& bank, const DecodeContext& ctx,
                     const GaussianGrads& upstream, DecoderGrads& out) {
    if (upstream.d_mu.size() != ctx.origin.size())
        fail(Errc::ContextMismatch, "upstream gradient count does not match decode context");

    const int stride = bank.cov_stride();
    const int n = static_cast<int>(ctx.entries.size());

    // Fixed-size blocks keep the shared-parameter reduction order independent
    // of the worker count.
    const int block = 256;
    const int n_blocks = (n + block - 1) / block;
    struct BlockAcc {
        MlpGrads g_op, g_col, g_cov;
        VecX d_app;
    };
    std::vector<BlockAcc> accs(static_cast<std::size_t>(std::max(1, n_blocks)));

    parallel_for(n_blocks, [&](int bi) {
        BlockAcc& acc = accs[static_cast<std::size_t>(bi)];
        acc.g_op.zero_like(bank.mlp_opacity);
        acc.g_col.zero_like(bank.mlp_color);
        acc.g_cov.zero_like(bank.mlp_cov);
        acc.d_app = VecX::Zero(bank.embed_dim);
        const int lo = bi * block, hi = std::min(n, lo + block);
        for (int ei = lo; ei < hi; ++ei) {
            const DecodeEntry& e = ctx.entries[static_cast<std::size_t>(ei)];
            const Anchor& a = field.anchors[static_cast<std::size_t>(e.anchor_index)];
            const Vec3 scaling = a.scaling();

            VecX d_raw_op = VecX::Zero(bank.k);
            VecX d_raw_col = VecX::Zero(3 * bank.k);
            VecX d_raw_cov = VecX::Zero(stride * bank.k);
            bool any = false;

            for (int i = 0; i < bank.k; ++i) {
                const int oi = e.emitted[static_cast<std::size_t>(i)];
                if (oi < 0) continue;
                any = true;
                const std::size_t o = static_cast<std::size_t>(oi);

                const double sigma = sigmoid(e.raw_op[i]);
                d_raw_op[i] = sigma * (1.0 - sigma) * upstream.d_sigma[o];

                for (int ch = 0; ch < 3; ++ch) {
                    const double col = sigmoid(e.raw_col[3 * i + ch]);
                    d_raw_col[3 * i + ch] = col * (1.0 - col) * upstream.d_color[o][ch];
                }

                const Vec3 d_mu = upstream.d_mu[o];
                out.d_offsets[static_cast<std::size_t>(e.anchor_index)][static_cast<std::size_t>(i)] +=
                    d_mu.cwiseProduct(scaling);
                out.d_log_scaling[static_cast<std::size_t>(e.anchor_index)] +=
                    d_mu.cwiseProduct(a.offsets[static_cast<std::size_t>(i)]).cwiseProduct(scaling);

                Vec4 qraw(e.raw_cov[stride * i + 0] + 1.0, e.raw_cov[stride * i + 1],
                          e.raw_cov[stride * i + 2], e.raw_cov[stride * i + 3]);
                const Vec4 d_qraw = quat_normalize_backward(qraw, upstream.d_q[o]);
                for (int j = 0; j < 4; ++j) d_raw_cov[stride * i + j] = d_qraw[j];

                for (int j = 0; j < bank.scale_comps(); ++j) {
                    const double raw = e.raw_cov[stride * i + 4 + j];
                    const double s = std::exp(clampd(raw, -kScaleRawClamp, kScaleRawClamp)) * scaling[j];
                    const double ds = upstream.d_s[o][j];
                    if (raw > -kScaleRawClamp && raw < kScaleRawClamp) d_raw_cov[stride * i + 4 + j] = ds * s;
                    out.d_log_scaling[static_cast<std::size_t>(e.anchor_index)][j] += ds * s;
                }
            }
            if (!any) continue;

            VecX d_x = bank.mlp_opacity.backward(e.x, e.h_op, d_raw_op, &acc.g_op);
            d_x += bank.mlp_color.backward(e.x, e.h_col, d_raw_col, &acc.g_col);
            d_x += bank.mlp_cov.backward(e.x, e.h_cov, d_raw_cov, &acc.g_cov);

            out.d_feature[static_cast<std::size_t>(e.anchor_index)] += d_x.head(bank.feature_dim);
            acc.d_app += d_x.tail(bank.embed_dim);
            // view-direction and distance inputs chain to the fixed anchor
            // position only, which is not learnable
        }
    });

    for (int bi = 0; bi < n_blocks; ++bi) {
        out.g_opacity.add(accs[static_cast<std::size_t>(bi)].g_op);
        out.g_color.add(accs[static_cast<std::size_t>(bi)].g_col);
        out.g_cov.add(accs[static_cast<std::size_t>(bi)].g_cov);
        const int row = std::max(0, std::min<int>(ctx.appearance_id, static_cast<int>(out.d_appearance.rows()) - 1));
        out.d_appearance.row(row) += accs[static_cast<std::size_t>(bi)].d_app.transpose();
    }
}

BakedGaussianSet bake_explicit(const AnchorField& field, const DecoderBank& bank, const Vec3& reference) {
    BakedGaussianSet baked;
    baked.mode = bank.mode;
    const int stride = bank.cov_stride();
    const auto sample_dirs = fibonacci_sphere(64);

    for (std::size_t ai = 0; ai < field.anchors.size(); ++ai) {
        const Anchor& a = field.anchors[ai];
        const Vec3 scaling = a.scaling();
        const double dist = (reference - a.position).norm();

        // Canonical overhead view: anchor-to-camera direction +z, appearance 0.
        VecX x_canon(bank.input_dim());
        x_canon.head(bank.feature_dim) = a.feature;
        x_canon.segment(bank.feature_dim, 3) = Vec3(0, 0, 1);
        x_canon[bank.feature_dim + 3] = dist;
        x_canon.tail(bank.embed_dim).setZero();

        const VecX raw_op = bank.mlp_opacity.forward(x_canon);
        const VecX raw_cov = bank.mlp_cov.forward(x_canon);

        // Color sampled over the sphere; SH is evaluated at render time with
        // the camera-to-center direction, the negation of the decode input.
        std::vector<std::vector<Vec3>> colors(static_cast<std::size_t>(bank.k));
        for (auto& c : colors) c.reserve(sample_dirs.size());
        VecX x_dir = x_canon;
        for (const Vec3& d : sample_dirs) {
            x_dir.segment(bank.feature_dim, 3) = d;
            const VecX raw_col = bank.mlp_color.forward(x_dir);
            for (int i = 0; i < bank.k; ++i)
                colors[static_cast<std::size_t>(i)].emplace_back(
                    sigmoid(raw_col[3 * i + 0]), sigmoid(raw_col[3 * i + 1]), sigmoid(raw_col[3 * i + 2]));
        }
        std::vector<Vec3> render_dirs(sample_dirs.size());
        for (std::size_t j = 0; j < sample_dirs.size(); ++j) render_dirs[j] = -sample_dirs[j];

        for (int i = 0; i < bank.k; ++i) {
            const double sigma = sigmoid(raw_op[i]);
            if (sigma <= kOpacityCull) continue;
            BakedGaussian g;
            g.sigma = sigma;
            g.mu = a.position + a.offsets[static_cast<std::size_t>(i)].cwiseProduct(scaling);
            Vec4 qraw(raw_cov[stride * i + 0] + 1.0, raw_cov[stride * i + 1], raw_cov[stride * i + 2],
                      raw_cov[stride * i + 3]);
            g.q = normalize_quat(qraw);
            g.s = Vec3::Ones();
            for (int j = 0; j < bank.scale_comps(); ++j)
                g.s[j] = std::exp(clampd(raw_cov[stride * i + 4 + j], -kScaleRawClamp, kScaleRawClamp)) *
                         scaling[j];
            const ShFit fit = fit_sh_deg2(render_dirs, colors[static_cast<std::size_t>(i)]);
            g.sh = fit.coeffs;
            g.fit_rms = fit.rms;
            g.level = a.level;
            baked.gaussians.push_back(std::move(g));
        }
    }
    return baked;
}

std::vector<NeuralGaussian> baked_view_gaussians(const BakedGaussianSet& baked, const Camera& cam) {
    const Vec3 c = cam.center();
    std::vector<NeuralGaussian> out;
    out.reserve(baked.gaussians.size());
    for (std::size_t i = 0; i < baked.gaussians.size(); ++i) {
        const BakedGaussian& b = baked.gaussians[i];
        NeuralGaussian g;
        g.mu = b.mu;
        g.q = b.q;
        g.s = b.s;
        g.sigma = b.sigma;
        Vec3 dir = b.mu - c;
        const double len = dir.norm();
        dir = len > 1e-12 ? Vec3(dir / len) : Vec3(0, 0, 1);
        const Vec3 col = eval_sh_deg2(b.sh, dir);
        for (int ch = 0; ch < 3; ++ch) g.color[ch] = clampd(col[ch], 0.0, 1.0);
        g.source_anchor = static_cast<int>(i);
        g.level = b.level;
        out.push_back(g);
    }
    return out;
}

RenderOutput render_baked(const BakedGaussianSet& baked, const Camera& cam, RenderContext* ctx) {
    return rasterize(baked_view_gaussians(baked, cam), cam, baked.mode, ctx);
}

} // namespace skyline
