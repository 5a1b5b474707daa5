#pragma once

#include <span>
#include <string>
#include <vector>

#include "akd/nn.hpp"

namespace akd {

// Dimensions over which per-position variance is averaged before use.
//   scalar  : batch + channel + spatial -> 1x1x1
//   full    : batch only                -> CxHxW
//   channel : batch + spatial           -> Cx1x1
//   spatial : batch + channel           -> 1xHxW
enum class MergeMode { scalar, full, channel, spatial };

const char* to_string(MergeMode m);
MergeMode merge_mode_from_string(const std::string& s);
Shape merged_shape(MergeMode m, const Shape& chw);

inline constexpr double kSigmaFloor = 1e-3;

struct SigmaTensor {
    MergeMode mode = MergeMode::scalar;
    Tensor values;  // rank 3, broadcastable against B x C x H x W
    double floor = kSigmaFloor;
    bool normalized = true;

    // sigma == 1 everywhere, scalar shape.
    static SigmaTensor unit();
    std::string to_json() const;
};

// Per-position sigma from a C x H x W variance field: merge (arithmetic mean
// of variances), square root, floor, divide by the geometric mean.
SigmaTensor sigma_from_variance(std::span<const double> variance, const Shape& chw, MergeMode mode);

// Streaming Welford variance over samples of a C x H x W feature.
class SigmaEstimator {
public:
    explicit SigmaEstimator(Shape chw);

    void update(const FeatureBatch& teacher_feat);
    SigmaTensor finalize(MergeMode mode);

    std::size_t count() const { return n_; }
    bool finalized() const { return finalized_; }
    const Shape& feature_shape() const { return chw_; }
    const std::vector<double>& mean() const { return mean_; }
    std::vector<double> variance() const;  // population, M2 / n

private:
    Shape chw_;
    std::size_t n_ = 0;
    std::vector<double> mean_;
    std::vector<double> m2_;
    bool finalized_ = false;
};

// Online alternative: EMA over per-batch population variances.
class EmaSigma {
public:
    EmaSigma(Shape chw, double momentum = 0.1);
    void update(const FeatureBatch& teacher_feat);
    SigmaTensor current(MergeMode mode) const;
    bool ready() const { return seen_; }

private:
    Shape chw_;
    double momentum_;
    std::vector<double> var_;
    bool seen_ = false;
};

// g(s2) = log s2 + r^2 / s2, the per-position uncertainty objective.
double local_uncertainty_objective(double sigma2, double r);
// Log-spaced grid over [r^2/10, 10 r^2] with n points.
std::vector<double> sigma2_grid(double r, std::size_t n);
// Grid point minimizing the objective. r = 0 is rejected.
double analytic_min_check(double r, std::span<const double> grid);

}  // namespace akd
