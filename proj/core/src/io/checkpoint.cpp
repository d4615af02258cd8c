#include "skyline/io/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "skyline/io/ply.hpp"
#include "skyline/trainer.hpp"

namespace skyline {

namespace {

constexpr std::uint64_t kStateMagic = 0x534b594c53544154ull; // "SKYLSTAT"
constexpr std::uint32_t kStateVersion = 1;

struct BinWriter {
    std::ofstream f;
    explicit BinWriter(const std::string& path) : f(path, std::ios::binary) {
        if (!f) fail(Errc::IoError, "cannot open " + path + " for writing");
    }
    template <class T> void put(const T& v) { f.write(reinterpret_cast<const char*>(&v), sizeof(T)); }
    void put_doubles(const double* p, std::size_t n) {
        f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 8));
    }
};

struct BinReader {
    std::ifstream f;
    std::string path;
    explicit BinReader(const std::string& p) : f(p, std::ios::binary), path(p) {
        if (!f) fail(Errc::IoError, "cannot open " + p);
    }
    template <class T> T get() {
        T v{};
        f.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!f) fail(Errc::ParseError, path + ": truncated state file");
        return v;
    }
    void get_doubles(double* p, std::size_t n) {
        f.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 8));
        if (!f) fail(Errc::ParseError, path + ": truncated state file");
    }
};

void put_mlp(BinWriter& w, const Mlp& m) {
    w.put<std::int32_t>(static_cast<std::int32_t>(m.W1.cols()));
    w.put<std::int32_t>(static_cast<std::int32_t>(m.W1.rows()));
    w.put<std::int32_t>(static_cast<std::int32_t>(m.W2.rows()));
    w.put_doubles(m.W1.data(), static_cast<std::size_t>(m.W1.size()));
    w.put_doubles(m.b1.data(), static_cast<std::size_t>(m.b1.size()));
    w.put_doubles(m.W2.data(), static_cast<std::size_t>(m.W2.size()));
    w.put_doubles(m.b2.data(), static_cast<std::size_t>(m.b2.size()));
}

void get_mlp(BinReader& r, Mlp& m) {
    const int in = r.get<std::int32_t>();
    const int hidden = r.get<std::int32_t>();
    const int out = r.get<std::int32_t>();
    m.W1.resize(hidden, in);
    m.b1.resize(hidden);
    m.W2.resize(out, hidden);
    m.b2.resize(out);
    r.get_doubles(m.W1.data(), static_cast<std::size_t>(m.W1.size()));
    r.get_doubles(m.b1.data(), static_cast<std::size_t>(m.b1.size()));
    r.get_doubles(m.W2.data(), static_cast<std::size_t>(m.W2.size()));
    r.get_doubles(m.b2.data(), static_cast<std::size_t>(m.b2.size()));
}

void put_adam(BinWriter& w, const Adam& a) {
    w.put<std::int64_t>(a.step_count());
    w.put<std::uint64_t>(a.size());
    w.put_doubles(a.m().data(), a.size());
    w.put_doubles(a.v().data(), a.size());
}

void get_adam(BinReader& r, Adam& a) {
    const long t = static_cast<long>(r.get<std::int64_t>());
    const std::size_t n = r.get<std::uint64_t>();
    a.reset(n);
    a.set_step_count(t);
    r.get_doubles(a.m().data(), n);
    r.get_doubles(a.v().data(), n);
}

void put_bank(BinWriter& w, const DecoderBank& bank) {
    w.put<std::uint8_t>(bank.mode == PrimitiveMode::Disk2D ? 1 : 0);
    w.put<std::int32_t>(bank.k);
    w.put<std::int32_t>(bank.feature_dim);
    w.put<std::int32_t>(bank.embed_dim);
    w.put<std::int32_t>(bank.hidden);
    put_mlp(w, bank.mlp_opacity);
    put_mlp(w, bank.mlp_color);
    put_mlp(w, bank.mlp_cov);
    w.put<std::int32_t>(static_cast<std::int32_t>(bank.appearance.rows()));
    w.put<std::int32_t>(static_cast<std::int32_t>(bank.appearance.cols()));
    w.put_doubles(bank.appearance.data(), static_cast<std::size_t>(bank.appearance.size()));
}

void get_bank(BinReader& r, DecoderBank& bank) {
    bank.mode = r.get<std::uint8_t>() ? PrimitiveMode::Disk2D : PrimitiveMode::Ellipsoid3D;
    bank.k = r.get<std::int32_t>();
    bank.feature_dim = r.get<std::int32_t>();
    bank.embed_dim = r.get<std::int32_t>();
    bank.hidden = r.get<std::int32_t>();
    get_mlp(r, bank.mlp_opacity);
    get_mlp(r, bank.mlp_color);
    get_mlp(r, bank.mlp_cov);
    const int rows = r.get<std::int32_t>();
    const int cols = r.get<std::int32_t>();
    bank.appearance.resize(rows, cols);
    r.get_doubles(bank.appearance.data(), static_cast<std::size_t>(bank.appearance.size()));
}

void put_lod(BinWriter& w, const LodConfig& lod) {
    w.put<std::int32_t>(lod.levels);
    w.put<std::int32_t>(lod.aerial_levels);
    w.put<double>(lod.rd_quantile);
    w.put<double>(lod.base_voxel);
    w.put_doubles(lod.level_distance_cutoffs.data(), lod.level_distance_cutoffs.size());
}

LodConfig get_lod(BinReader& r) {
    LodConfig lod;
    lod.levels = r.get<std::int32_t>();
    lod.aerial_levels = r.get<std::int32_t>();
    lod.rd_quantile = r.get<double>();
    lod.base_voxel = r.get<double>();
    lod.level_distance_cutoffs.resize(static_cast<std::size_t>(lod.levels));
    r.get_doubles(lod.level_distance_cutoffs.data(), lod.level_distance_cutoffs.size());
    return lod;
}

} // namespace

namespace io {

void write_anchor_ply(const std::string& path, const AnchorField& field) {
    PlyTable t;
    t.element = "vertex";
    t.props = {{"x", PlyType::F64}, {"y", PlyType::F64}, {"z", PlyType::F64},
               {"level", PlyType::I32}, {"stage_tag", PlyType::U8}};
    for (int i = 0; i < field.feature_dim; ++i) t.props.push_back({"f_" + std::to_string(i), PlyType::F64});
    for (int i = 0; i < 3; ++i) t.props.push_back({"scaling_" + std::to_string(i), PlyType::F64});
    for (int i = 0; i < field.offsets_per_anchor * 3; ++i)
        t.props.push_back({"offset_" + std::to_string(i), PlyType::F64});
    t.resize_rows(field.anchors.size());

    for (std::size_t r = 0; r < field.anchors.size(); ++r) {
        const Anchor& a = field.anchors[r];
        std::size_t c = 0;
        t.at(r, c++) = a.position.x();
        t.at(r, c++) = a.position.y();
        t.at(r, c++) = a.position.z();
        t.at(r, c++) = a.level;
        t.at(r, c++) = a.stage_tag == StageTag::Coarse ? 0 : 1;
        for (int i = 0; i < field.feature_dim; ++i) t.at(r, c++) = a.feature[i];
        for (int i = 0; i < 3; ++i) t.at(r, c++) = a.log_scaling[i];
        for (int i = 0; i < field.offsets_per_anchor; ++i)
            for (int j = 0; j < 3; ++j) t.at(r, c++) = a.offsets[static_cast<std::size_t>(i)][j];
    }
    PlyFile file;
    file.tables.push_back(std::move(t));
    write_ply(path, file);
}

AnchorField read_anchor_ply(const std::string& path, const LodConfig& lod) {
    const PlyFile file = read_ply(path);
    const PlyTable* t = file.find("vertex");
    if (!t) fail(Errc::ParseError, path + ": no vertex element");

    int feature_dim = 0;
    while (t->col("f_" + std::to_string(feature_dim)) >= 0) ++feature_dim;
    int offset_scalars = 0;
    while (t->col("offset_" + std::to_string(offset_scalars)) >= 0) ++offset_scalars;
    if (feature_dim == 0 || offset_scalars % 3 != 0)
        fail(Errc::ParseError, path + ": malformed anchor layout");

    AnchorField field;
    field.lod = lod;
    field.feature_dim = feature_dim;
    field.offsets_per_anchor = offset_scalars / 3;

    const int cx = t->col("x"), cy = t->col("y"), cz = t->col("z");
    const int clevel = t->col("level"), ctag = t->col("stage_tag");
    const int cf0 = t->col("f_0"), cs0 = t->col("scaling_0"), co0 = t->col("offset_0");
    if (cx < 0 || cy < 0 || cz < 0 || clevel < 0 || cf0 < 0 || cs0 < 0 || co0 < 0)
        fail(Errc::ParseError, path + ": missing anchor properties");

    field.anchors.resize(t->rows);
    field.stats.resize(t->rows);
    for (std::size_t r = 0; r < t->rows; ++r) {
        Anchor& a = field.anchors[r];
        a.position = Vec3(t->at(r, static_cast<std::size_t>(cx)), t->at(r, static_cast<std::size_t>(cy)),
                          t->at(r, static_cast<std::size_t>(cz)));
        a.level = static_cast<int>(t->at(r, static_cast<std::size_t>(clevel)));
        a.stage_tag = (ctag >= 0 && t->at(r, static_cast<std::size_t>(ctag)) == 0.0) ? StageTag::Coarse
                                                                                      : StageTag::Fine;
        a.feature.resize(feature_dim);
        for (int i = 0; i < feature_dim; ++i) a.feature[i] = t->at(r, static_cast<std::size_t>(cf0 + i));
        for (int i = 0; i < 3; ++i) a.log_scaling[i] = t->at(r, static_cast<std::size_t>(cs0 + i));
        a.offsets.resize(static_cast<std::size_t>(field.offsets_per_anchor));
        for (int i = 0; i < field.offsets_per_anchor; ++i)
            for (int j = 0; j < 3; ++j)
                a.offsets[static_cast<std::size_t>(i)][j] = t->at(r, static_cast<std::size_t>(co0 + i * 3 + j));
    }
    field.rebuild_occupancy();
    return field;
}

void write_baked_ply(const std::string& path, const BakedGaussianSet& baked) {
    PlyTable t;
    t.element = "vertex";
    const char* base[] = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (const char* n : base) t.props.push_back({n, PlyType::F32});
    for (int i = 0; i < 24; ++i) t.props.push_back({"f_rest_" + std::to_string(i), PlyType::F32});
    t.props.push_back({"opacity", PlyType::F32});
    for (int i = 0; i < 3; ++i) t.props.push_back({"scale_" + std::to_string(i), PlyType::F32});
    for (int i = 0; i < 4; ++i) t.props.push_back({"rot_" + std::to_string(i), PlyType::F32});
    t.resize_rows(baked.gaussians.size());

    auto logit = [](double p) { return std::log(clampd(p, 1e-9, 1.0 - 1e-9) / (1.0 - clampd(p, 1e-9, 1.0 - 1e-9))); };
    for (std::size_t r = 0; r < baked.gaussians.size(); ++r) {
        const BakedGaussian& g = baked.gaussians[r];
        std::size_t c = 0;
        for (int i = 0; i < 3; ++i) t.at(r, c++) = g.mu[i];
        for (int i = 0; i < 3; ++i) t.at(r, c++) = 0.0; // nx/ny/nz placeholders
        for (int ch = 0; ch < 3; ++ch) t.at(r, c++) = g.sh(ch, 0); // DC
        // f_rest: community order is coefficient-major (all reds, greens, blues)
        for (int ch = 0; ch < 3; ++ch)
            for (int i = 1; i < kShCoeffs; ++i) t.at(r, c++) = g.sh(ch, i);
        t.at(r, c++) = logit(g.sigma);
        for (int i = 0; i < 3; ++i) t.at(r, c++) = std::log(std::max(1e-12, g.s[i]));
        for (int i = 0; i < 4; ++i) t.at(r, c++) = g.q[i];
    }
    PlyFile file;
    file.tables.push_back(std::move(t));
    write_ply(path, file);
}

BakedGaussianSet read_baked_ply(const std::string& path, PrimitiveMode mode) {
    const PlyFile file = read_ply(path);
    const PlyTable* t = file.find("vertex");
    if (!t) fail(Errc::ParseError, path + ": no vertex element");
    BakedGaussianSet baked;
    baked.mode = mode;
    const int cx = t->col("x"), cop = t->col("opacity"), cs0 = t->col("scale_0"), cr0 = t->col("rot_0");
    const int cdc = t->col("f_dc_0"), crest = t->col("f_rest_0");
    if (cx < 0 || cop < 0 || cs0 < 0 || cr0 < 0 || cdc < 0)
        fail(Errc::ParseError, path + ": not a baked gaussian PLY");

    baked.gaussians.resize(t->rows);
    for (std::size_t r = 0; r < t->rows; ++r) {
        BakedGaussian& g = baked.gaussians[r];
        for (int i = 0; i < 3; ++i) g.mu[i] = t->at(r, static_cast<std::size_t>(cx + i));
        for (int ch = 0; ch < 3; ++ch) g.sh(ch, 0) = t->at(r, static_cast<std::size_t>(cdc + ch));
        if (crest >= 0)
            for (int ch = 0; ch < 3; ++ch)
                for (int i = 1; i < kShCoeffs; ++i)
                    g.sh(ch, i) = t->at(r, static_cast<std::size_t>(crest + ch * (kShCoeffs - 1) + i - 1));
        const double logit = t->at(r, static_cast<std::size_t>(cop));
        g.sigma = 1.0 / (1.0 + std::exp(-logit));
        for (int i = 0; i < 3; ++i) g.s[i] = std::exp(t->at(r, static_cast<std::size_t>(cs0 + i)));
        for (int i = 0; i < 4; ++i) g.q[i] = t->at(r, static_cast<std::size_t>(cr0 + i));
        g.q = normalize_quat(g.q);
    }
    return baked;
}

void save_model(const std::string& dir, const AnchorField& field, const DecoderBank& bank) {
    std::filesystem::create_directories(dir);
    write_anchor_ply(dir + "/anchors.ply", field);
    BinWriter w(dir + "/model.bin");
    w.put(kStateMagic);
    w.put(kStateVersion);
    put_lod(w, field.lod);
    put_bank(w, bank);
}

void load_model(const std::string& dir, AnchorField& field, DecoderBank& bank) {
    BinReader r(dir + "/model.bin");
    if (r.get<std::uint64_t>() != kStateMagic) fail(Errc::ParseError, dir + "/model.bin: bad magic");
    if (r.get<std::uint32_t>() != kStateVersion) fail(Errc::ParseError, dir + "/model.bin: bad version");
    const LodConfig lod = get_lod(r);
    get_bank(r, bank);
    field = read_anchor_ply(dir + "/anchors.ply", lod);
}

} // namespace io

void TrainerIo::save(const Trainer& t, const std::string& dir) {
    std::filesystem::create_directories(dir);
    io::write_anchor_ply(dir + "/anchors.ply", t.field_);

    BinWriter w(dir + "/state.bin");
    w.put(kStateMagic);
    w.put(kStateVersion);
    put_lod(w, t.field_.lod);
    put_bank(w, t.bank_);
    w.put<std::int32_t>(t.stage_);
    w.put<std::int64_t>(t.iter_in_stage_);
    w.put<std::int64_t>(t.global_iter_);
    w.put<std::uint8_t>(t.frozen_bank_ ? 1 : 0);
    w.put<std::uint64_t>(t.rng_.state());
    w.put<std::uint64_t>(t.rng_.inc());
    w.put<std::uint64_t>(t.field_.stats.size());
    for (const auto& s : t.field_.stats) {
        w.put<double>(s.grad_max);
        w.put_doubles(s.grad_argmax_pos.data(), 3);
        w.put<double>(s.radius_max);
        w.put<double>(s.opacity_sum);
        w.put<std::int64_t>(s.contrib_count);
    }
    for (const Adam* a : {&t.adam_feature_, &t.adam_offsets_, &t.adam_scaling_, &t.adam_mlp_op_,
                          &t.adam_mlp_cov_, &t.adam_mlp_col_, &t.adam_app_})
        put_adam(w, *a);

    std::ofstream meta(dir + "/meta.json");
    meta << "{\"stage\":" << t.stage_ << ",\"global_iter\":" << t.global_iter_
         << ",\"anchors\":" << t.field_.anchors.size() << ",\"mode\":\""
         << (t.bank_.mode == PrimitiveMode::Disk2D ? "2d" : "3d") << "\"}\n";
}

void TrainerIo::load(Trainer& t, const std::string& dir) {
    BinReader r(dir + "/state.bin");
    if (r.get<std::uint64_t>() != kStateMagic) fail(Errc::ParseError, dir + "/state.bin: bad magic");
    if (r.get<std::uint32_t>() != kStateVersion) fail(Errc::ParseError, dir + "/state.bin: bad version");
    const LodConfig lod = get_lod(r);
    get_bank(r, t.bank_);
    t.stage_ = r.get<std::int32_t>();
    t.iter_in_stage_ = static_cast<long>(r.get<std::int64_t>());
    t.global_iter_ = static_cast<long>(r.get<std::int64_t>());
    t.frozen_bank_ = r.get<std::uint8_t>() != 0;
    const std::uint64_t rng_state = r.get<std::uint64_t>();
    const std::uint64_t rng_inc = r.get<std::uint64_t>();
    t.rng_.restore(rng_state, rng_inc);

    t.field_ = io::read_anchor_ply(dir + "/anchors.ply", lod);
    const std::uint64_t n_stats = r.get<std::uint64_t>();
    if (n_stats != t.field_.stats.size()) fail(Errc::ParseError, dir + ": stats/anchor count mismatch");
    for (auto& s : t.field_.stats) {
        s.grad_max = r.get<double>();
        r.get_doubles(s.grad_argmax_pos.data(), 3);
        s.radius_max = r.get<double>();
        s.opacity_sum = r.get<double>();
        s.contrib_count = static_cast<std::int64_t>(r.get<std::int64_t>());
    }
    for (Adam* a : {&t.adam_feature_, &t.adam_offsets_, &t.adam_scaling_, &t.adam_mlp_op_,
                    &t.adam_mlp_cov_, &t.adam_mlp_col_, &t.adam_app_})
        get_adam(r, *a);
    t.loss_history_.clear();
}

} // namespace skyline
