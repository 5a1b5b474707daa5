#pragma once

#include <cstdint>
#include <vector>

#include "akd/nn.hpp"

namespace akd {

enum class PerturbationKind { dropout };

struct AvatarConfig {
    std::size_t count = 5;
    double dropout_ratio = 0.1;
    std::vector<double> per_avatar_ratios;  // empty, or one ratio per avatar
    std::uint64_t seed = 0;
    PerturbationKind kind = PerturbationKind::dropout;

    void validate() const;
    double ratio(std::size_t avatar) const;
};

struct AvatarSet {
    std::vector<FeatureBatch> features;
    FeatureBatch source;
};

// Mask dropout of the standardized teacher feature: each element is zeroed
// with probability m, survivors are kept unscaled. Avatar i draws its mask
// from a stream keyed by (cfg.seed, stream_id, i). Results are detached.
AvatarSet generate_avatars(const FeatureBatch& teacher_feat, const AvatarConfig& cfg, std::uint64_t stream_id);

// Monte Carlo estimate of E[(F_a - F_t)^2] per position over n_draws masks.
//
// Analytic values of the per-position constant c(m) in E = c(m) * F_t^2:
//   mask dropout (implemented)        c = m
//   inverted dropout (x / (1 - m))    c = m / (1 - m)
//   deterministic scaling (1 - m) F   c = m^2
// Every variant is proportional to F_t^2, which is all the sigma estimate uses.
std::vector<double> residual_moment_oracle(const FeatureBatch& teacher_feat, double m, std::size_t n_draws, std::uint64_t seed);

inline double mask_dropout_moment_constant(double m) { return m; }

}  // namespace akd
