#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "akd/avatar.hpp"
#include "akd/nn.hpp"
#include "akd/uncertainty.hpp"

namespace akd {

enum class LossKind { mse, kl };
// Softmax groups for the KL form: per channel over H x W (channel-wise
// distillation convention), or jointly over C x H x W.
enum class SoftmaxAxes { per_channel_spatial, all_chw };

const char* to_string(LossKind k);
const char* to_string(SoftmaxAxes a);
LossKind loss_kind_from_string(const std::string& s);
SoftmaxAxes softmax_axes_from_string(const std::string& s);
Axes softmax_axes(SoftmaxAxes a);

struct DistillConfig {
    LossKind loss_kind = LossKind::mse;
    SoftmaxAxes kl_axes = SoftmaxAxes::per_channel_spatial;
    double alpha = 1.0;
    SigmaTensor sigma = SigmaTensor::unit();

    void validate(const Shape& feature_shape) const;
};

// Losses on already-projected student features. Every target is a constant.
//
// The k-avatar average is evaluated through the avatar mean a_bar:
//   (1/k) sum_i |a_i - p|^2 = |a_bar - p|^2 + (1/k) sum_i |a_i - a_bar|^2
//   (1/k) sum_i KL(q_i || p) = KL(q_bar || p) + (1/k) sum_i KL(q_i || q_bar)
// The second terms do not depend on the student. a_bar is formed as
// a_0 + mean(a_i - a_0), so identical avatars reproduce the single-target
// loss bit for bit.
Tensor ensemble_mse(std::span<const FeatureBatch> targets, const FeatureBatch& projected, const Tensor* sigma);
Tensor ensemble_kl(std::span<const FeatureBatch> targets, const FeatureBatch& projected, const Tensor& sigma, SoftmaxAxes axes);

// Equal-weight avatar mimic: mean over avatars of the per-element squared error.
Tensor vanilla_ensemble_loss(const AvatarSet& avatars, const FeatureBatch& student_feat, const Projection& proj);
// Same with every feature divided by sigma before the squared error.
Tensor akd_mse_loss(const AvatarSet& avatars, const FeatureBatch& student_feat, const Projection& proj, const SigmaTensor& sigma);
// Mean over avatars of KL(softmax(F_a / sigma) || softmax(phi(F_s) / sigma)),
// averaged over batch (and channels for per-channel groups).
Tensor akd_kl_loss(const AvatarSet& avatars, const FeatureBatch& student_feat, const Projection& proj, const SigmaTensor& sigma,
                   SoftmaxAxes axes);
Tensor distill_loss(const AvatarSet& avatars, const FeatureBatch& student_feat, const Projection& proj, const DistillConfig& cfg);

// d MSE(t/sigma, s/sigma) / d s = 2 (s - t) / sigma^2
double analytic_grad_mse(double teacher, double student, double sigma);
// G(p_t, p_s) / sigma with G = p_s * sum_group(p_t) - p_t, p = softmax(F / sigma).
// Per-distribution gradient; the loss additionally divides by its group count.
Tensor analytic_grad_kl(const FeatureBatch& teacher, const FeatureBatch& student, const Tensor& sigma, SoftmaxAxes axes);

struct RatioSample {
    double sigma;
    double ratio_mse;
    double ratio_kl;
};

struct GradReport {
    std::size_t trials = 0;
    std::size_t checks = 0;
    double max_abs_err_autodiff = 0.0;     // analytic vs autodiff
    double max_rel_err_finite_diff = 0.0;  // autodiff vs central differences
    double max_ratio_mse_err = 0.0;        // |r - 1/sigma^2|
    double max_ratio_kl_err = 0.0;         // autodiff ratio vs G-based ratio
    std::vector<RatioSample> ratio_samples;
    std::vector<std::string> failures;

    bool passed() const { return failures.empty(); }
    std::string to_json() const;
    std::string ratios_csv() const;
};

struct GradVerifyConfig {
    std::size_t n_trials = 100;
    std::uint64_t seed = 1;
    double sigma_lo = 0.25;
    double sigma_hi = 4.0;
    double analytic_tol = 1e-9;
    double finite_diff_tol = 1e-5;
    double ratio_mse_tol = 1e-12;
    double ratio_kl_tol = 1e-9;
    bool throw_on_failure = true;
};

// Random features and sigma fields for every merge shape, both loss kinds and
// both softmax conventions.
GradReport verify_gradients(const GradVerifyConfig& cfg);

}  // namespace akd
