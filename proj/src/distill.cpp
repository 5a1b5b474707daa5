#include "akd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "json.hpp"

namespace akd {

const char* to_string(LossKind k) { return k == LossKind::mse ? "mse" : "kl"; }
const char* to_string(SoftmaxAxes a) { return a == SoftmaxAxes::per_channel_spatial ? "per_channel_spatial" : "all_chw"; }

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "kl") return LossKind::kl;
    throw ConfigError("unknown loss kind '" + s + "'");
}

SoftmaxAxes softmax_axes_from_string(const std::string& s) {
    if (s == "per_channel_spatial") return SoftmaxAxes::per_channel_spatial;
    if (s == "all_chw") return SoftmaxAxes::all_chw;
    throw ConfigError("unknown softmax axes '" + s + "'");
}

Axes softmax_axes(SoftmaxAxes a) { return a == SoftmaxAxes::per_channel_spatial ? Axes{2, 3} : Axes{1, 2, 3}; }

namespace {

void check_sigma(const Tensor& sigma, const Shape& feature, double floor) {
    if (broadcast_shape(feature, sigma.shape()) != feature) {
        throw ShapeError("sigma " + sigma.shape().str() + " does not broadcast against feature " + feature.str());
    }
    for (double s : sigma.values()) {
        if (!(s >= floor)) throw UsageError("sigma element below floor " + std::to_string(floor));
    }
}

void check_targets(std::span<const FeatureBatch> targets, const FeatureBatch& projected) {
    if (targets.empty()) throw UsageError("no distillation targets");
    require_feature_batch(projected, "projected student feature");
    for (const auto& t : targets) {
        if (t.shape() != projected.shape()) {
            throw ShapeError("target " + t.shape().str() + " vs projected student " + projected.shape().str());
        }
        if (t.requires_grad()) throw UsageError("distillation targets must be constants");
    }
}

// a_0 + mean_i(a_i - a_0), elementwise.
std::vector<double> shifted_mean(const std::vector<std::span<const double>>& xs) {
    const std::size_t n = xs.front().size();
    std::vector<double> out(n);
    const double k = static_cast<double>(xs.size());
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 1; i < xs.size(); ++i) acc += xs[i][j] - xs[0][j];
        out[j] = xs[0][j] + acc / k;
    }
    return out;
}

std::vector<double> broadcast_values(const Tensor& small, const Shape& to) {
    const Tensor full = mul(Tensor::ones(to), small);
    return {full.values().begin(), full.values().end()};
}

}  // namespace

void DistillConfig::validate(const Shape& feature_shape) const {
    if (!(alpha > 0.0)) throw ConfigError("distill weight alpha must be positive");
    check_sigma(sigma.values, feature_shape, sigma.floor);
}

Tensor ensemble_mse(std::span<const FeatureBatch> targets, const FeatureBatch& projected, const Tensor* sigma) {
    check_targets(targets, projected);
    if (sigma) check_sigma(*sigma, projected.shape(), kSigmaFloor);
    std::vector<std::span<const double>> xs;
    for (const auto& t : targets) xs.push_back(t.values());
    const Tensor abar(projected.shape(), shifted_mean(xs));

    Tensor diff = sub(abar, projected);
    if (sigma) diff = div(diff, *sigma);
    Tensor loss = mean(square(diff));
    if (targets.size() > 1) {
        const std::vector<double> sig = sigma ? broadcast_values(*sigma, projected.shape()) : std::vector<double>(projected.numel(), 1.0);
        const auto ab = abar.values();
        double spread = 0.0;
        for (std::size_t j = 0; j < ab.size(); ++j) {
            double acc = 0.0;
            for (const auto& x : xs) {
                const double d = (x[j] - ab[j]) / sig[j];
                acc += d * d;
            }
            spread += acc / static_cast<double>(xs.size());
        }
        loss = add(loss, spread / static_cast<double>(ab.size()));
    }
    return loss;
}

Tensor ensemble_kl(std::span<const FeatureBatch> targets, const FeatureBatch& projected, const Tensor& sigma, SoftmaxAxes axes) {
    check_targets(targets, projected);
    check_sigma(sigma, projected.shape(), kSigmaFloor);
    const Axes ax = softmax_axes(axes);
    const std::size_t groups = group_axes(projected.shape(), ax).reduced.numel();

    std::vector<Tensor> probs;
    std::vector<std::span<const double>> ps;
    for (const auto& t : targets) probs.push_back(softmax(div(t, sigma), ax));
    for (const auto& p : probs) ps.push_back(p.values());
    std::vector<double> pbar = shifted_mean(ps);
    std::vector<double> log_pbar(pbar.size());
    for (std::size_t j = 0; j < pbar.size(); ++j) log_pbar[j] = std::log(pbar[j]);

    const Tensor log_ps = log_softmax(div(projected, sigma), ax);
    const Tensor pbar_t(projected.shape(), pbar);
    const Tensor log_pbar_t(projected.shape(), log_pbar);
    Tensor loss = scale(sum(mul(pbar_t, sub(log_pbar_t, log_ps))), 1.0 / static_cast<double>(groups));
    if (targets.size() > 1) {
        double spread = 0.0;
        for (const auto& p : ps) {
            double kl = 0.0;
            for (std::size_t j = 0; j < p.size(); ++j) kl += p[j] * (std::log(p[j]) - log_pbar[j]);
            spread += kl;
        }
        loss = add(loss, spread / static_cast<double>(ps.size()) / static_cast<double>(groups));
    }
    return loss;
}

Tensor vanilla_ensemble_loss(const AvatarSet& avatars, const FeatureBatch& student_feat, const Projection& proj) {
    return ensemble_mse(avatars.features, proj(student_feat), nullptr);
}

Tensor akd_mse_loss(const AvatarSet& avatars, const FeatureBatch& student_feat, const Projection& proj, const SigmaTensor& sigma) {
    check_sigma(sigma.values, avatars.source.shape(), sigma.floor);
    return ensemble_mse(avatars.features, proj(student_feat), &sigma.values);
}

Tensor akd_kl_loss(const AvatarSet& avatars, const FeatureBatch& student_feat, const Projection& proj, const SigmaTensor& sigma,
                   SoftmaxAxes axes) {
    check_sigma(sigma.values, avatars.source.shape(), sigma.floor);
    return ensemble_kl(avatars.features, proj(student_feat), sigma.values, axes);
}

Tensor distill_loss(const AvatarSet& avatars, const FeatureBatch& student_feat, const Projection& proj, const DistillConfig& cfg) {
    return cfg.loss_kind == LossKind::mse ? akd_mse_loss(avatars, student_feat, proj, cfg.sigma)
                                          : akd_kl_loss(avatars, student_feat, proj, cfg.sigma, cfg.kl_axes);
}

double analytic_grad_mse(double teacher, double student, double sigma) { return 2.0 * (student - teacher) / (sigma * sigma); }

Tensor analytic_grad_kl(const FeatureBatch& teacher, const FeatureBatch& student, const Tensor& sigma, SoftmaxAxes axes) {
    if (teacher.shape() != student.shape()) throw ShapeError("teacher and student features differ in shape");
    check_sigma(sigma, teacher.shape(), kSigmaFloor);
    const Axes ax = softmax_axes(axes);
    const Tensor pt = softmax(div(teacher.detach(), sigma), ax);
    const Tensor ps = softmax(div(student.detach(), sigma), ax);
    const Tensor pt_sum = sum(pt, ax);
    const Tensor g = sub(mul(ps, pt_sum), pt);
    return div(g, sigma);
}

// ---------------------------------------------------------------------------
// Verification

std::string GradReport::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["trials"] = trials;
    j["checks"] = checks;
    j["max_abs_err_autodiff"] = max_abs_err_autodiff;
    j["max_rel_err_finite_diff"] = max_rel_err_finite_diff;
    j["max_ratio_mse_err"] = max_ratio_mse_err;
    j["max_ratio_kl_err"] = max_ratio_kl_err;
    j["ratio_sample_count"] = ratio_samples.size();
    j["failures"] = failures;
    j["passed"] = passed();
    return j.dump(1) + "\n";
}

std::string GradReport::ratios_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "sigma,ratio_mse,ratio_kl\n";
    for (const auto& s : ratio_samples) os << s.sigma << ',' << s.ratio_mse << ',' << s.ratio_kl << '\n';
    return os.str();
}

namespace {

Tensor random_tensor(const Shape& s, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(s.numel());
    for (auto& x : v) x = u(rng);
    return Tensor(s, std::move(v));
}

std::vector<double> autodiff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
    Tensor leaf = x.clone(true);
    backward(f(leaf));
    return {leaf.grad().begin(), leaf.grad().end()};
}

std::string where(std::size_t trial, const char* what, std::size_t elem) {
    return "trial " + std::to_string(trial) + " " + what + " element " + std::to_string(elem);
}

}  // namespace

GradReport verify_gradients(const GradVerifyConfig& cfg) {
    if (cfg.n_trials < 10) throw UsageError("verify_gradients needs at least 10 trials");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> small(2, 3);
    std::uniform_int_distribution<std::size_t> batch(1, 2);
    GradReport rep;
    rep.trials = cfg.n_trials;

    auto note = [&](double err, double tol, double& worst, const std::string& label) {
        worst = std::max(worst, err);
        if (!(err <= tol)) rep.failures.push_back(label + ": error " + std::to_string(err));
    };

    for (std::size_t trial = 0; trial < cfg.n_trials; ++trial) {
        const Shape fs{batch(rng), small(rng), small(rng), small(rng)};
        const Shape chw{fs[1], fs[2], fs[3]};
        const Tensor teacher = random_tensor(fs, -2.0, 2.0, rng);
        const Tensor student = random_tensor(fs, -2.0, 2.0, rng);
        const std::vector<FeatureBatch> targets{teacher};
        const Tensor unit = Tensor::ones(Shape{1, 1, 1});

        for (MergeMode mode : {MergeMode::scalar, MergeMode::full, MergeMode::channel, MergeMode::spatial}) {
            const Tensor sigma = random_tensor(merged_shape(mode, chw), cfg.sigma_lo, cfg.sigma_hi, rng);
            const Tensor sigma_full = mul(Tensor::ones(fs), sigma);
            const std::string tag = std::string(to_string(mode));
            const double n = static_cast<double>(fs.numel());

            // MSE form
            auto mse = [&](const Tensor& s) { return ensemble_mse(targets, s, &sigma); };
            auto mse_plain = [&](const Tensor& s) { return ensemble_mse(targets, s, nullptr); };
            const auto g_auto = autodiff_grad(mse, student);
            const auto g_plain = autodiff_grad(mse_plain, student);
            for (std::size_t j = 0; j < g_auto.size(); ++j) {
                const double an = analytic_grad_mse(teacher[j], student[j], sigma_full[j]) / n;
                note(std::abs(an - g_auto[j]), cfg.analytic_tol, rep.max_abs_err_autodiff, where(trial, ("mse/" + tag).c_str(), j));
                if (g_plain[j] != 0.0) {
                    const double r = g_auto[j] / g_plain[j];
                    const double s = sigma_full[j];
                    note(std::abs(r - 1.0 / (s * s)), cfg.ratio_mse_tol, rep.max_ratio_mse_err, where(trial, ("ratio_mse/" + tag).c_str(), j));
                }
            }
            note(grad_check(mse, student), cfg.finite_diff_tol, rep.max_rel_err_finite_diff, where(trial, ("fd_mse/" + tag).c_str(), 0));
            ++rep.checks;

            // KL form, both softmax conventions
            for (SoftmaxAxes axes : {SoftmaxAxes::per_channel_spatial, SoftmaxAxes::all_chw}) {
                const std::string ktag = "kl/" + tag + "/" + to_string(axes);
                const double groups = static_cast<double>(group_axes(fs, softmax_axes(axes)).reduced.numel());
                auto kl = [&](const Tensor& s) { return ensemble_kl(targets, s, sigma, axes); };
                auto kl_unit = [&](const Tensor& s) { return ensemble_kl(targets, s, unit, axes); };
                const auto k_auto = autodiff_grad(kl, student);
                const auto k_unit = autodiff_grad(kl_unit, student);
                const Tensor an = analytic_grad_kl(teacher, student, sigma, axes);
                const Tensor an_unit = analytic_grad_kl(teacher, student, unit, axes);
                for (std::size_t j = 0; j < k_auto.size(); ++j) {
                    note(std::abs(an[j] / groups - k_auto[j]), cfg.analytic_tol, rep.max_abs_err_autodiff, where(trial, ktag.c_str(), j));
                    if (std::abs(an_unit[j]) > 1e-6) {
                        const double r_auto = k_auto[j] / k_unit[j];
                        const double r_an = an[j] / an_unit[j];
                        note(std::abs(r_auto - r_an) / std::max(1.0, std::abs(r_an)), cfg.ratio_kl_tol, rep.max_ratio_kl_err,
                             where(trial, ("ratio_" + ktag).c_str(), j));
                        if (mode == MergeMode::full && axes == SoftmaxAxes::per_channel_spatial && g_plain[j] != 0.0) {
                            rep.ratio_samples.push_back({sigma_full[j], g_auto[j] / g_plain[j], r_auto});
                        }
                    }
                }
                note(grad_check(kl, student), cfg.finite_diff_tol, rep.max_rel_err_finite_diff, where(trial, ("fd_" + ktag).c_str(), 0));
                ++rep.checks;
            }
        }
    }
    if (cfg.throw_on_failure && !rep.passed()) {
        throw VerificationError(std::to_string(rep.failures.size()) + " gradient checks failed; first: " + rep.failures.front());
    }
    return rep;
}

}  // namespace akd
