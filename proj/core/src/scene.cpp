#include "skyline/scene.hpp"

#include <algorithm>
#include <sstream>

namespace skyline {

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    os << "cameras: aerial=" << aerial_count << " street=" << street_count << "\n";
    os << "ground bbox: [" << ground_bbox.min.x() << ", " << ground_bbox.min.y() << "] .. ["
       << ground_bbox.max.x() << ", " << ground_bbox.max.y() << "]\n";
    if (violations.empty()) {
        os << "ok\n";
    } else {
        os << violations.size() << " violation(s):\n";
        for (const auto& v : violations) os << "  - " << v << "\n";
    }
    return os.str();
}

ValidationReport validate_scene(const std::vector<Camera>& cameras, const PointCloud& points,
                                bool require_two_stage) {
    if (cameras.empty()) fail(Errc::EmptyScene, "no cameras");

    ValidationReport rep;
    bool first = true;
    for (const auto& cam : cameras) {
        if (cam.view_class == ViewClass::Aerial)
            rep.aerial_count++;
        else
            rep.street_count++;

        std::ostringstream id;
        id << "camera " << cam.id;
        if (!cam.orthonormal())
            rep.violations.push_back(id.str() + ": rotation not orthonormal");
        else if (!cam.right_handed())
            fail(Errc::MixedHandedness, id.str() + ": rotation determinant != +1");
        if (!(cam.fx > 0.0) || !(cam.fy > 0.0)) rep.violations.push_back(id.str() + ": non-positive focal length");
        if (cam.width <= 0 || cam.height <= 0) rep.violations.push_back(id.str() + ": non-positive image size");

        Vec2 g = ground_projection(cam.center());
        if (first) {
            rep.ground_bbox.min = rep.ground_bbox.max = g;
            first = false;
        } else {
            rep.ground_bbox.absorb(g);
        }
    }
    for (const auto& p : points.positions) rep.ground_bbox.absorb(ground_projection(p));

    if (require_two_stage && (rep.aerial_count == 0 || rep.street_count == 0))
        rep.violations.push_back("two-stage training requires at least one aerial and one street camera");
    return rep;
}

std::uint64_t AnchorField::voxel_key(const Vec3& p, double voxel) {
    // 21 bits per axis, offset to keep coordinates positive.
    constexpr std::int64_t kOffset = 1 << 20;
    constexpr std::uint64_t kMask = (1ull << 21) - 1;
    std::uint64_t kx = static_cast<std::uint64_t>(voxel_coord(p.x(), voxel) + kOffset) & kMask;
    std::uint64_t ky = static_cast<std::uint64_t>(voxel_coord(p.y(), voxel) + kOffset) & kMask;
    std::uint64_t kz = static_cast<std::uint64_t>(voxel_coord(p.z(), voxel) + kOffset) & kMask;
    return (kx << 42) | (ky << 21) | kz;
}

Vec3 AnchorField::voxel_center(const Vec3& p, double voxel) {
    return {(static_cast<double>(voxel_coord(p.x(), voxel)) + 0.5) * voxel,
            (static_cast<double>(voxel_coord(p.y(), voxel)) + 0.5) * voxel,
            (static_cast<double>(voxel_coord(p.z(), voxel)) + 0.5) * voxel};
}

int AnchorField::add_anchor(const Vec3& p, int level, StageTag tag, Pcg32& rng) {
    if (occupied_.size() < static_cast<std::size_t>(lod.levels)) occupied_.resize(lod.levels);
    const double voxel = lod.voxel_size(level);
    const std::uint64_t key = voxel_key(p, voxel);
    auto& occ = occupied_[static_cast<std::size_t>(level)];
    if (occ.count(key)) return -1;
    occ.insert(key);

    Anchor a;
    a.position = voxel_center(p, voxel);
    a.level = level;
    a.stage_tag = tag;
    a.feature = VecX::Zero(feature_dim);
    a.log_scaling = Vec3::Constant(std::log(voxel));
    a.offsets.resize(static_cast<std::size_t>(offsets_per_anchor));
    for (auto& o : a.offsets)
        o = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));

    anchors.push_back(std::move(a));
    stats.emplace_back();
    return static_cast<int>(anchors.size()) - 1;
}

void AnchorField::remove_anchors(const std::vector<char>& remove) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        if (remove[i]) continue;
        if (out != i) {
            anchors[out] = std::move(anchors[i]);
            stats[out] = stats[i];
        }
        ++out;
    }
    anchors.resize(out);
    stats.resize(out);
    rebuild_occupancy();
}

void AnchorField::rebuild_occupancy() {
    occupied_.assign(static_cast<std::size_t>(lod.levels), {});
    for (const auto& a : anchors)
        occupied_[static_cast<std::size_t>(a.level)].insert(voxel_key(a.position, lod.voxel_size(a.level)));
}

std::vector<int> AnchorField::level_histogram() const {
    std::vector<int> h(static_cast<std::size_t>(lod.levels), 0);
    for (const auto& a : anchors) h[static_cast<std::size_t>(a.level)]++;
    return h;
}

AnchorField init_anchors(const PointCloud& points, const LodConfig& lod, int k, int feature_dim, Pcg32& rng,
                         int init_levels) {
    if (points.empty()) fail(Errc::EmptyPointCloud, "init_anchors needs at least one point");
    if (!lod.valid()) fail(Errc::ShapeMismatch, "invalid LodConfig");
    if (init_levels <= 0 || init_levels > lod.levels) init_levels = lod.levels;

    AnchorField field;
    field.lod = lod;
    field.offsets_per_anchor = k;
    field.feature_dim = feature_dim;

    // Distinct voxels per level first, so the 4x cap can drop whole levels
    // (finest first) before any anchor is materialized.
    std::vector<std::vector<Vec3>> level_seeds(static_cast<std::size_t>(init_levels));
    for (int level = 0; level < init_levels; ++level) {
        const double voxel = lod.voxel_size(level);
        std::unordered_set<std::uint64_t> seen;
        for (const auto& p : points.positions) {
            std::uint64_t key = AnchorField::voxel_key(p, voxel);
            if (seen.insert(key).second) level_seeds[static_cast<std::size_t>(level)].push_back(p);
        }
    }

    const std::size_t cap = 4 * points.size();
    int used_levels = init_levels;
    auto total = [&] {
        std::size_t n = 0;
        for (int l = 0; l < used_levels; ++l) n += level_seeds[static_cast<std::size_t>(l)].size();
        return n;
    };
    while (used_levels > 1 && total() > cap) --used_levels;

    for (int level = 0; level < used_levels; ++level)
        for (const auto& p : level_seeds[static_cast<std::size_t>(level)])
            field.add_anchor(p, level, StageTag::Fine, rng);
    return field;
}

} // namespace skyline
