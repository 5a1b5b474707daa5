#include "akd/avatar.hpp"

#include <random>

namespace akd {

namespace {

std::mt19937_64 keyed_stream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check_ratio(double m) {
    if (!(m >= 0.0 && m < 1.0)) throw ConfigError("dropout ratio must be in [0, 1), got " + std::to_string(m));
}

}  // namespace

void AvatarConfig::validate() const {
    if (count == 0) throw ConfigError("avatar count k must be at least 1");
    check_ratio(dropout_ratio);
    if (!per_avatar_ratios.empty()) {
        if (per_avatar_ratios.size() != count) throw ConfigError("per_avatar_ratios must have one entry per avatar");
        for (double m : per_avatar_ratios) check_ratio(m);
    }
}

double AvatarConfig::ratio(std::size_t avatar) const {
    return per_avatar_ratios.empty() ? dropout_ratio : per_avatar_ratios.at(avatar);
}

AvatarSet generate_avatars(const FeatureBatch& teacher_feat, const AvatarConfig& cfg, std::uint64_t stream_id) {
    cfg.validate();
    require_feature_batch(teacher_feat, "teacher feature");
    if (teacher_feat.requires_grad()) throw UsageError("teacher feature must be a detached constant");
    AvatarSet set{{}, teacher_feat};
    set.features.reserve(cfg.count);
    const auto src = teacher_feat.values();
    for (std::size_t i = 0; i < cfg.count; ++i) {
        const double m = cfg.ratio(i);
        std::vector<double> v(src.begin(), src.end());
        if (m > 0.0) {
            auto rng = keyed_stream(cfg.seed, stream_id, i);
            for (auto& x : v) {
                if (uniform01(rng) < m) x = 0.0;
            }
        }
        set.features.emplace_back(teacher_feat.shape(), std::move(v));
    }
    return set;
}

std::vector<double> residual_moment_oracle(const FeatureBatch& teacher_feat, double m, std::size_t n_draws, std::uint64_t seed) {
    check_ratio(m);
    if (n_draws < 10000) throw UsageError("residual_moment_oracle needs at least 1e4 draws");
    const auto f = teacher_feat.values();
    std::vector<double> acc(f.size(), 0.0);
    if (m == 0.0) return acc;
    std::mt19937_64 rng(seed);
    for (std::size_t d = 0; d < n_draws; ++d) {
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double avatar = uniform01(rng) < m ? 0.0 : f[i];
            const double r = avatar - f[i];
            acc[i] += r * r;
        }
    }
    for (auto& a : acc) a /= static_cast<double>(n_draws);
    return acc;
}

}  // namespace akd
