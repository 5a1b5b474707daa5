#include "akd/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace akd {

const char* to_string(MergeMode m) {
    switch (m) {
        case MergeMode::scalar: return "scalar";
        case MergeMode::full: return "full";
        case MergeMode::channel: return "channel";
        case MergeMode::spatial: return "spatial";
    }
    return "?";
}

MergeMode merge_mode_from_string(const std::string& s) {
    for (auto m : {MergeMode::scalar, MergeMode::full, MergeMode::channel, MergeMode::spatial}) {
        if (s == to_string(m)) return m;
    }
    throw ConfigError("unknown merge mode '" + s + "'");
}

Shape merged_shape(MergeMode m, const Shape& chw) {
    if (chw.rank() != 3) throw ShapeError("expected a C x H x W shape, got " + chw.str());
    switch (m) {
        case MergeMode::scalar: return Shape{1, 1, 1};
        case MergeMode::full: return chw;
        case MergeMode::channel: return Shape{chw[0], 1, 1};
        case MergeMode::spatial: return Shape{1, chw[1], chw[2]};
    }
    return chw;
}

SigmaTensor SigmaTensor::unit() { return {MergeMode::scalar, Tensor::ones(Shape{1, 1, 1}), kSigmaFloor, true}; }

std::string SigmaTensor::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["mode"] = akd::to_string(mode);
    j["shape"] = values.shape().dims();
    j["values"] = std::vector<double>(values.values().begin(), values.values().end());
    j["floor"] = floor;
    j["normalized"] = normalized;
    return j.dump(1) + "\n";
}

SigmaTensor sigma_from_variance(std::span<const double> variance, const Shape& chw, MergeMode mode) {
    if (variance.size() != chw.numel()) throw ShapeError("variance field does not match " + chw.str());
    const Shape out = merged_shape(mode, chw);
    const std::size_t C = chw[0], HW = chw[1] * chw[2];
    std::vector<double> merged(out.numel(), 0.0);
    std::vector<std::size_t> counts(out.numel(), 0);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < HW; ++p) {
            std::size_t slot = 0;
            switch (mode) {
                case MergeMode::scalar: slot = 0; break;
                case MergeMode::full: slot = c * HW + p; break;
                case MergeMode::channel: slot = c; break;
                case MergeMode::spatial: slot = p; break;
            }
            merged[slot] += variance[c * HW + p];
            ++counts[slot];
        }
    for (std::size_t i = 0; i < merged.size(); ++i) {
        merged[i] = std::max(std::sqrt(merged[i] / static_cast<double>(counts[i])), kSigmaFloor);
    }
    if (merged.size() == 1) {
        merged[0] = 1.0;
    } else {
        double log_sum = 0.0;
        for (double s : merged) log_sum += std::log(s);
        const double gm = std::exp(log_sum / static_cast<double>(merged.size()));
        for (auto& s : merged) s /= gm;
    }
    return {mode, Tensor(out, std::move(merged)), kSigmaFloor, true};
}

// ---------------------------------------------------------------------------

SigmaEstimator::SigmaEstimator(Shape chw) : chw_(std::move(chw)), mean_(chw_.numel(), 0.0), m2_(chw_.numel(), 0.0) {
    if (chw_.rank() != 3) throw ShapeError("sigma estimator needs a C x H x W shape, got " + chw_.str());
}

void SigmaEstimator::update(const FeatureBatch& feat) {
    if (finalized_) throw UsageError("sigma estimator already finalized");
    require_feature_batch(feat, "teacher feature");
    const Shape& s = feat.shape();
    if (Shape{s[1], s[2], s[3]} != chw_) throw ShapeError("feature " + s.str() + " does not match estimator " + chw_.str());
    const auto v = feat.values();
    const std::size_t P = chw_.numel();
    for (std::size_t b = 0; b < s[0]; ++b) {
        ++n_;
        const double inv_n = 1.0 / static_cast<double>(n_);
        for (std::size_t p = 0; p < P; ++p) {
            const double x = v[b * P + p];
            const double d = x - mean_[p];
            mean_[p] += d * inv_n;
            m2_[p] += d * (x - mean_[p]);
        }
    }
}

std::vector<double> SigmaEstimator::variance() const {
    std::vector<double> out(m2_.size(), 0.0);
    if (n_ == 0) return out;
    for (std::size_t p = 0; p < m2_.size(); ++p) out[p] = std::max(m2_[p], 0.0) / static_cast<double>(n_);
    return out;
}

SigmaTensor SigmaEstimator::finalize(MergeMode mode) {
    if (n_ < 2) throw UsageError("sigma estimator needs at least 2 samples, has " + std::to_string(n_));
    finalized_ = true;
    return sigma_from_variance(variance(), chw_, mode);
}

// ---------------------------------------------------------------------------

EmaSigma::EmaSigma(Shape chw, double momentum) : chw_(std::move(chw)), momentum_(momentum), var_(chw_.numel(), 0.0) {
    if (chw_.rank() != 3) throw ShapeError("EMA sigma needs a C x H x W shape, got " + chw_.str());
    if (!(momentum > 0.0 && momentum <= 1.0)) throw ConfigError("EMA momentum must be in (0, 1]");
}

void EmaSigma::update(const FeatureBatch& feat) {
    require_feature_batch(feat, "teacher feature");
    const Shape& s = feat.shape();
    if (Shape{s[1], s[2], s[3]} != chw_) throw ShapeError("feature " + s.str() + " does not match " + chw_.str());
    if (s[0] < 2) throw UsageError("EMA sigma needs batches of at least 2 samples");
    const auto v = feat.values();
    const std::size_t P = chw_.numel(), B = s[0];
    for (std::size_t p = 0; p < P; ++p) {
        double mu = 0.0;
        for (std::size_t b = 0; b < B; ++b) mu += v[b * P + p];
        mu /= static_cast<double>(B);
        double var = 0.0;
        for (std::size_t b = 0; b < B; ++b) var += (v[b * P + p] - mu) * (v[b * P + p] - mu);
        var /= static_cast<double>(B);
        var_[p] = seen_ ? (1.0 - momentum_) * var_[p] + momentum_ * var : var;
    }
    seen_ = true;
}

SigmaTensor EmaSigma::current(MergeMode mode) const {
    if (!seen_) throw UsageError("EMA sigma has not seen a batch yet");
    return sigma_from_variance(var_, chw_, mode);
}

// ---------------------------------------------------------------------------

double local_uncertainty_objective(double sigma2, double r) {
    if (!(sigma2 > 0.0)) throw DomainError("sigma^2 must be positive");
    return std::log(sigma2) + r * r / sigma2;
}

std::vector<double> sigma2_grid(double r, std::size_t n) {
    if (r == 0.0) throw DomainError("residual r = 0 puts the minimum at sigma^2 = 0, outside the domain");
    if (n < 2) throw UsageError("grid needs at least 2 points");
    const double lo = std::log(r * r / 10.0), hi = std::log(10.0 * r * r);
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
    return g;
}

double analytic_min_check(double r, std::span<const double> grid) {
    if (r == 0.0) throw DomainError("residual r = 0 puts the minimum at sigma^2 = 0, outside the domain");
    if (grid.empty()) throw UsageError("empty sigma^2 grid");
    const double r2 = r * r;
    const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
    if (*lo > r2 / 10.0 * (1.0 + 1e-12) || *hi < 10.0 * r2 * (1.0 - 1e-12)) {
        throw UsageError("grid must span [r^2/10, 10 r^2]");
    }
    double best = grid.front();
    double best_val = local_uncertainty_objective(best, r);
    for (double s2 : grid) {
        const double v = local_uncertainty_objective(s2, r);
        if (v < best_val) {
            best_val = v;
            best = s2;
        }
    }
    return best;
}

}  // namespace akd
