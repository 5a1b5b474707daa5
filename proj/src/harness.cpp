#include "akd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace akd {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return splitmix64(splitmix64(seed) ^ tag); }

constexpr std::uint64_t kStudentTag = 0x5354554445ULL;
constexpr std::uint64_t kProjectionTag = 0x50524F4AULL;
constexpr std::uint64_t kAvatarTag = 0x41564154ULL;
constexpr std::uint64_t kShuffleTag = 0x5348554646ULL;

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::size_t argmax_row(std::span<const double> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// Data

void ToyDatasetSpec::validate(std::size_t batch) const {
    if (classes < 2) throw ConfigError("dataset.classes must be at least 2");
    if (image < 8) throw ConfigError("dataset.image must be at least 8");
    if (n_train < 2 * batch) throw ConfigError("dataset.n_train must be at least twice the batch size");
    if (n_train % classes != 0 || n_test % classes != 0) throw ConfigError("dataset sizes must be multiples of the class count");
    if (n_test == 0) throw ConfigError("dataset.n_test must be positive");
    if (!(noise >= 0.0) || !(bump_sigma > 0.0) || !(amplitude_jitter >= 0.0 && amplitude_jitter < 1.0)) {
        throw ConfigError("dataset noise, bump_sigma and amplitude_jitter must be in range");
    }
    if (!(bump_inset >= 0.0 && bump_inset <= (static_cast<double>(image) - 1.0) / 2.0)) {
        throw ConfigError("dataset.bump_inset must lie inside the image half-width");
    }
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
    const auto& dims = t.shape().dims();
    const std::size_t row = t.numel() / dims[0];
    std::vector<std::size_t> out_dims = dims;
    out_dims[0] = idx.size();
    std::vector<double> v(idx.size() * row);
    const auto src = t.values();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= dims[0]) throw ShapeError("row index out of range");
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row, v.begin() + static_cast<std::ptrdiff_t>(i * row));
    }
    return Tensor(Shape(out_dims), std::move(v));
}

Tensor Dataset::gather(std::span<const std::size_t> idx) const { return gather_rows(images, idx); }

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
}

namespace {

Dataset make_split(const ToyDatasetSpec& spec, std::size_t n, std::mt19937_64& rng) {
    const std::size_t S = spec.image;
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % spec.classes);
    std::shuffle(labels.begin(), labels.end(), rng);

    const double lo = spec.bump_inset, hi = static_cast<double>(S) - 1.0 - spec.bump_inset;
    const double centres[4][2] = {{lo, lo}, {lo, hi}, {hi, lo}, {hi, hi}};
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::uniform_real_distribution<double> jitter(-spec.amplitude_jitter, spec.amplitude_jitter);
    std::vector<double> px(n * S * S);
    const double two_s2 = 2.0 * spec.bump_sigma * spec.bump_sigma;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        const double sign = (c / 4) % 2 == 0 ? 1.0 : -1.0;
        const double amp = sign * (1.0 + jitter(rng));
        const double cy = centres[c % 4][0], cx = centres[c % 4][1];
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x) {
                const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                px[(i * S + y) * S + x] = amp * std::exp(-(dy * dy + dx * dx) / two_s2) + noise(rng);
            }
    }
    return {Tensor(Shape{n, 1, S, S}, std::move(px)), std::move(labels)};
}

}  // namespace

ToyData make_dataset(const ToyDatasetSpec& spec) {
    spec.validate(1);
    std::mt19937_64 rng(spec.seed);
    ToyData d;
    d.train = make_split(spec, spec.n_train, rng);
    d.test = make_split(spec, spec.n_test, rng);
    d.classes = spec.classes;
    return d;
}

// ---------------------------------------------------------------------------
// Training

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, kShuffleTag + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

namespace {

template <class Fn>
void for_each_batch(std::size_t n, std::size_t batch, std::uint64_t seed, std::size_t epoch, Fn&& fn) {
    const auto order = epoch_order(n, seed, epoch);
    for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t len = std::min(batch, n - start);
        if (len < 2) break;  // batch statistics need two samples
        fn(std::span<const std::size_t>(order.data() + start, len));
    }
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw TrainingError(std::string(what) + " diverged (non-finite loss)");
}

}  // namespace

double accuracy(Network& net, const Dataset& data) {
    const Mode saved = net.mode();
    net.set_mode(Mode::eval);
    std::size_t correct = 0;
    const std::size_t chunk = 128;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t len = std::min(chunk, data.size() - start);
        std::vector<std::size_t> idx(len);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor logits = net.forward(data.gather(idx)).output;
        const std::size_t K = logits.shape()[1];
        for (std::size_t i = 0; i < len; ++i) {
            if (static_cast<int>(argmax_row(logits.values().subspan(i * K, K))) == data.labels[start + i]) ++correct;
        }
    }
    net.set_mode(saved);
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainedNetwork train_classifier(const ToyData& data, std::size_t width, const TrainSettings& opt, std::uint64_t seed) {
    if (width == 0) throw ConfigError("network width must be positive");
    if (opt.batch < 2 || opt.epochs == 0 || !(opt.lr > 0.0) || !(opt.momentum >= 0.0 && opt.momentum < 1.0)) {
        throw ConfigError("invalid optimizer settings");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t in_ch = data.train.images.shape()[1];
    Network net = Network::init(toy_architecture(in_ch, width, data.classes), kToyFeatureTap, seed);
    net.set_mode(Mode::train);
    Sgd sgd(net.parameters(), opt.lr, opt.momentum);
    RunMetrics m;
    m.seed = seed;
    try {
        for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
            double loss_sum = 0.0;
            std::size_t steps = 0;
            for_each_batch(data.train.size(), opt.batch, seed, epoch, [&](std::span<const std::size_t> idx) {
                sgd.zero_grad();
                const auto labels = data.train.gather_labels(idx);
                const Tensor loss = cross_entropy(net.forward(data.train.gather(idx)).output, labels);
                check_finite(loss.item(), "classifier training");
                backward(loss);
                sgd.step();
                loss_sum += loss.item();
                m.step_total_losses.push_back(loss.item());
                ++steps;
            });
            const double avg = loss_sum / static_cast<double>(steps);
            m.trace.push_back({epoch, avg, 0.0, avg});
            m.final_task_loss = avg;
        }
    } catch (const DomainError& e) {
        throw TrainingError(std::string("classifier training diverged: ") + e.what());
    }
    net.set_mode(Mode::eval);
    net.recalibrate_standardize(data.train.images);
    m.student_acc = accuracy(net, data.test);
    m.teacher_acc = m.student_acc;
    m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(net), std::move(m)};
}

TrainedNetwork train_teacher(const ToyData& data, const TrainSettings& opt, std::uint64_t seed, std::size_t width) {
    return train_classifier(data, width, opt, seed);
}

// ---------------------------------------------------------------------------
// Teacher context

FeatureBatch tap_features(Network& net, const Dataset& data) {
    const Mode saved = net.mode();
    net.set_mode(Mode::eval);
    std::vector<double> all;
    std::vector<std::size_t> dims;
    const std::size_t chunk = 128;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t len = std::min(chunk, data.size() - start);
        std::vector<std::size_t> idx(len);
        std::iota(idx.begin(), idx.end(), start);
        const FeatureBatch f = net.forward(data.gather(idx)).feature;
        if (dims.empty()) dims = f.shape().dims();
        all.insert(all.end(), f.values().begin(), f.values().end());
    }
    net.set_mode(saved);
    dims[0] = data.size();
    return Tensor(Shape(dims), std::move(all));
}

TeacherContext TeacherContext::prepare(const Network& teacher, const ToyData& data) {
    TeacherContext ctx;
    ctx.teacher = teacher.clone();
    ctx.teacher.freeze();
    ctx.teacher.set_mode(Mode::eval);
    ctx.train_features = tap_features(ctx.teacher, data.train);
    require_feature_batch(ctx.train_features, "teacher feature");
    ctx.teacher_acc = accuracy(ctx.teacher, data.test);
    const Shape& fs = ctx.train_features.shape();
    SigmaEstimator est(Shape{fs[1], fs[2], fs[3]});
    est.update(ctx.train_features);
    ctx.feature_variance = est.variance();
    for (MergeMode m : {MergeMode::scalar, MergeMode::full, MergeMode::channel, MergeMode::spatial}) {
        ctx.sigma.emplace(m, est.finalize(m));
    }
    return ctx;
}

Shape TeacherContext::feature_shape() const {
    const Shape& fs = train_features.shape();
    return Shape{fs[1], fs[2], fs[3]};
}

// ---------------------------------------------------------------------------
// Distillation

const char* to_string(DistillMode m) {
    switch (m) {
        case DistillMode::baseline: return "baseline";
        case DistillMode::avatars_equal: return "avatars_equal";
        case DistillMode::akd: return "akd";
    }
    return "?";
}

DistillMode distill_mode_from_string(const std::string& s) {
    if (s == "baseline") return DistillMode::baseline;
    if (s == "avatars_equal" || s == "avatars") return DistillMode::avatars_equal;
    if (s == "akd") return DistillMode::akd;
    throw ConfigError("unknown distillation mode '" + s + "'");
}

const char* to_string(SigmaSource s) { return s == SigmaSource::precomputed ? "precomputed" : "ema_online"; }

SigmaSource sigma_source_from_string(const std::string& s) {
    if (s == "precomputed") return SigmaSource::precomputed;
    if (s == "ema_online") return SigmaSource::ema_online;
    throw ConfigError("unknown sigma source '" + s + "'");
}

void ExperimentConfig::validate() const {
    if (mode != DistillMode::baseline) avatars.validate();
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (student_width == 0) throw ConfigError("student width must be positive");
    if (opt.batch < 2 || opt.epochs == 0 || !(opt.lr > 0.0) || !(opt.momentum >= 0.0 && opt.momentum < 1.0)) {
        throw ConfigError("invalid optimizer settings");
    }
}

std::string ExperimentConfig::label() const {
    std::ostringstream os;
    os << to_string(mode) << '/' << to_string(loss_kind);
    if (loss_kind == LossKind::kl) os << '/' << to_string(kl_axes);
    if (mode == DistillMode::akd) os << '/' << to_string(merge) << '/' << to_string(sigma_source);
    if (mode != DistillMode::baseline) {
        os << "/k" << avatars.count << "/m" << fmt_double(avatars.dropout_ratio) << "/as" << avatars.seed;
        for (double r : avatars.per_avatar_ratios) os << ',' << fmt_double(r);
    }
    os << "/a" << fmt_double(alpha) << "/lr" << fmt_double(opt.lr) << "/mo" << fmt_double(opt.momentum) << "/e" << opt.epochs
       << "/b" << opt.batch << "/w" << student_width << "/s" << seed;
    return os.str();
}

RunMetrics distill_student(const TeacherContext& ctx, const ToyData& data, const ExperimentConfig& cfg) {
    cfg.validate();
    const Shape chw = ctx.feature_shape();
    if (cfg.mode == DistillMode::akd && cfg.sigma_source == SigmaSource::precomputed && !ctx.sigma.contains(cfg.merge)) {
        throw ConfigError("akd mode needs a precomputed sigma for merge mode " + std::string(to_string(cfg.merge)));
    }
    if (ctx.train_features.shape()[0] != data.train.size()) throw ConfigError("teacher features do not match the training set");

    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t in_ch = data.train.images.shape()[1];
    Network student = Network::init(toy_architecture(in_ch, cfg.student_width, data.classes), kToyFeatureTap,
                                    derive_seed(cfg.seed, kStudentTag));
    student.set_mode(Mode::train);
    Projection proj(cfg.student_width, chw[0], derive_seed(cfg.seed, kProjectionTag));
    auto params = student.parameters();
    for (const auto& p : proj.parameters()) params.push_back(p);
    Sgd sgd(params, cfg.opt.lr, cfg.opt.momentum);

    AvatarConfig avatars = cfg.avatars;
    avatars.seed = derive_seed(cfg.avatars.seed ^ cfg.seed, kAvatarTag);
    DistillConfig dcfg;
    dcfg.loss_kind = cfg.loss_kind;
    dcfg.kl_axes = cfg.kl_axes;
    dcfg.alpha = cfg.alpha;
    std::optional<EmaSigma> ema;
    if (cfg.mode == DistillMode::akd) {
        if (cfg.sigma_source == SigmaSource::precomputed) {
            dcfg.sigma = ctx.sigma.at(cfg.merge);
        } else {
            ema.emplace(chw);
        }
    }

    RunMetrics m;
    m.seed = cfg.seed;
    m.teacher_acc = ctx.teacher_acc;
    m.sigma_shape = cfg.mode == DistillMode::akd ? merged_shape(cfg.merge, chw).str() : Shape{1, 1, 1}.str();
    std::uint64_t step = 0;
    try {
        for (std::size_t epoch = 0; epoch < cfg.opt.epochs; ++epoch) {
            double task_sum = 0.0, distill_sum = 0.0, total_sum = 0.0;
            std::size_t steps = 0;
            for_each_batch(data.train.size(), cfg.opt.batch, cfg.seed, epoch, [&](std::span<const std::size_t> idx) {
                sgd.zero_grad();
                const FeatureBatch teacher_feat = gather_rows(ctx.train_features, idx);
                AvatarSet targets = cfg.mode == DistillMode::baseline ? AvatarSet{{teacher_feat}, teacher_feat}
                                                                      : generate_avatars(teacher_feat, avatars, step);
                if (ema) {
                    ema->update(teacher_feat);
                    dcfg.sigma = ema->current(cfg.merge);
                }
                const auto labels = data.train.gather_labels(idx);
                const ForwardResult out = student.forward(data.train.gather(idx));
                const Tensor task = cross_entropy(out.output, labels);
                const Tensor distill = distill_loss(targets, out.feature, proj, dcfg);
                const Tensor total = add(task, scale(distill, cfg.alpha));
                check_finite(total.item(), "distillation");
                backward(total);
                sgd.step();
                task_sum += task.item();
                distill_sum += distill.item();
                total_sum += total.item();
                m.step_distill_losses.push_back(distill.item());
                m.step_total_losses.push_back(total.item());
                ++steps;
                ++step;
            });
            const double n = static_cast<double>(steps);
            m.trace.push_back({epoch, task_sum / n, distill_sum / n, total_sum / n});
        }
    } catch (const DomainError& e) {
        throw TrainingError(std::string("distillation diverged: ") + e.what());
    }
    m.final_task_loss = m.trace.back().task_loss;
    m.final_distill_loss = m.trace.back().distill_loss;
    student.set_mode(Mode::eval);
    student.recalibrate_standardize(data.train.images);
    m.student_acc = accuracy(student, data.test);
    m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
}

std::string RunMetrics::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["teacher_acc"] = teacher_acc;
    j["student_acc"] = student_acc;
    j["final_task_loss"] = final_task_loss;
    j["final_distill_loss"] = final_distill_loss;
    j["seed"] = seed;
    j["sigma_shape"] = sigma_shape;
    nlohmann::json tr = nlohmann::json::array();
    for (const auto& e : trace) {
        tr.push_back({{"epoch", e.epoch}, {"task_loss", e.task_loss}, {"distill_loss", e.distill_loss}, {"total_loss", e.total_loss}});
    }
    j["trace"] = std::move(tr);
    return j.dump(1) + "\n";
}

std::string RunMetrics::trace_csv() const {
    std::ostringstream os;
    os << "epoch,task_loss,distill_loss,total_loss\n";
    for (const auto& e : trace) {
        os << e.epoch << ',' << fmt_double(e.task_loss) << ',' << fmt_double(e.distill_loss) << ',' << fmt_double(e.total_loss) << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Ensemble

EnsembleResult ensemble_eval(Network& teacher, const FeatureBatch& features, std::span<const int> labels, std::size_t k, double m,
                             std::uint64_t seed) {
    require_feature_batch(features, "teacher feature");
    if (features.shape()[0] != labels.size()) throw ShapeError("feature batch and labels differ in length");
    const std::size_t head = teacher.feature_tap_index() + 1;
    const Mode saved = teacher.mode();
    teacher.set_mode(Mode::eval);
    auto probs = [&](const FeatureBatch& f) { return softmax(teacher.forward_from(head, f), {1}); };

    const Tensor single = probs(features);
    const std::size_t N = labels.size(), K = single.shape()[1];
    AvatarConfig cfg;
    cfg.count = k;
    cfg.dropout_ratio = m;
    cfg.seed = seed;
    const AvatarSet avatars = generate_avatars(features, cfg, 0);
    std::vector<double> avg(N * K, 0.0);
    for (const auto& a : avatars.features) {
        const Tensor p = probs(a);
        for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += p[i];
    }
    teacher.set_mode(saved);

    std::size_t ok_single = 0, ok_ens = 0;
    for (std::size_t i = 0; i < N; ++i) {
        if (static_cast<int>(argmax_row(single.values().subspan(i * K, K))) == labels[i]) ++ok_single;
        if (static_cast<int>(argmax_row(std::span<const double>(avg).subspan(i * K, K))) == labels[i]) ++ok_ens;
    }
    return {static_cast<double>(ok_single) / static_cast<double>(N), static_cast<double>(ok_ens) / static_cast<double>(N)};
}

EnsembleResult ensemble_eval(Network& teacher, const Dataset& test, std::size_t k, double m, std::uint64_t seed) {
    return ensemble_eval(teacher, tap_features(teacher, test), test.labels, k, m, seed);
}

namespace {

std::pair<double, double> mean_std(std::span<const double> xs) {
    const double n = static_cast<double>(xs.size());
    const double mu = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    if (xs.size() < 2) return {mu, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mu) * (x - mu);
    return {mu, std::sqrt(ss / (n - 1.0))};
}

}  // namespace

std::vector<EnsembleCurveRow> ensemble_curve(Network& teacher, const Dataset& test, std::span<const std::size_t> ks, double m,
                                             std::size_t n_seeds, std::uint64_t first_seed) {
    if (n_seeds == 0) throw ConfigError("ensemble curve needs at least one seed");
    const FeatureBatch features = tap_features(teacher, test);
    std::vector<EnsembleCurveRow> rows;
    for (std::size_t k : ks) {
        std::vector<double> single, ens;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const auto r = ensemble_eval(teacher, features, test.labels, k, m, first_seed + s);
            single.push_back(r.single_acc);
            ens.push_back(r.ensemble_acc);
        }
        const auto [ms, ss] = mean_std(single);
        const auto [me, se] = mean_std(ens);
        (void)ss;
        rows.push_back({k, ms, me, se, 1.96 * se / std::sqrt(static_cast<double>(n_seeds))});
    }
    return rows;
}

std::string ensemble_curve_csv(std::span<const EnsembleCurveRow> rows) {
    std::ostringstream os;
    os << "k,mean_single,mean_ensemble,std,ci95_half\n";
    for (const auto& r : rows) {
        os << r.k << ',' << fmt_double(r.mean_single) << ',' << fmt_double(r.mean_ensemble) << ',' << fmt_double(r.std) << ','
           << fmt_double(r.ci95_half) << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Ablations

SignTest sign_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw UsageError("sign test needs paired samples");
    SignTest t;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) ++t.wins;
        else if (a[i] < b[i]) ++t.losses;
        else ++t.ties;
    }
    const std::size_t n = t.wins + t.losses;
    if (n == 0) return t;
    // P(X >= wins), accumulated in log space for the binomial coefficients.
    double p = 0.0;
    for (std::size_t i = t.wins; i <= n; ++i) {
        const double log_c = std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(i) + 1.0) -
                             std::lgamma(static_cast<double>(n - i) + 1.0);
        p += std::exp(log_c - static_cast<double>(n) * std::log(2.0));
    }
    t.p_value = std::min(1.0, p);
    return t;
}

std::vector<std::pair<std::string, ExperimentConfig>> ablation_configs(const ExperimentConfig& base) {
    std::vector<std::pair<std::string, ExperimentConfig>> out;
    ExperimentConfig c = base;
    c.mode = DistillMode::baseline;
    out.emplace_back("baseline", c);
    c.mode = DistillMode::avatars_equal;
    out.emplace_back("avatars_equal", c);
    c.mode = DistillMode::akd;
    out.emplace_back("akd", c);
    for (MergeMode m : {MergeMode::scalar, MergeMode::full, MergeMode::channel, MergeMode::spatial}) {
        c.merge = m;
        out.emplace_back(std::string("akd_") + to_string(m), c);
    }
    return out;
}

std::size_t default_thread_count() {
    if (const char* env = std::getenv("AKD_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

AblationResult ablation_suite(const TeacherContext& ctx, const ToyData& data, const ExperimentConfig& base,
                              std::span<const std::uint64_t> seeds, std::size_t threads) {
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    const auto configs = ablation_configs(base);
    for (const auto& [label, c] : configs) c.validate();

    // Identical configurations (akd with base.merge appears twice) run once.
    struct Job {
        ExperimentConfig cfg;
        RunMetrics metrics;
        std::exception_ptr error;
    };
    std::vector<Job> jobs;
    std::map<std::string, std::size_t> by_key;
    std::vector<std::size_t> row_job;
    for (std::uint64_t seed : seeds) {
        for (const auto& [label, c] : configs) {
            ExperimentConfig cfg = c;
            cfg.seed = seed;
            const std::string key = cfg.label();
            auto it = by_key.find(key);
            if (it == by_key.end()) {
                it = by_key.emplace(key, jobs.size()).first;
                jobs.push_back({cfg, {}, nullptr});
            }
            row_job.push_back(it->second);
        }
    }

    const std::size_t n_threads = std::min(threads == 0 ? default_thread_count() : threads, jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            try {
                jobs[j].metrics = distill_student(ctx, data, jobs[j].cfg);
            } catch (...) {
                jobs[j].error = std::current_exception();
            }
        }
    };
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& job : jobs) {
        if (job.error) {
            try {
                std::rethrow_exception(job.error);
            } catch (const std::exception& e) {
                throw TrainingError("ablation run failed for config " + job.cfg.label() + ": " + e.what());
            }
        }
    }

    AblationResult res;
    std::size_t r = 0;
    for (std::uint64_t seed : seeds) {
        for (const auto& [label, c] : configs) {
            const Job& job = jobs[row_job[r++]];
            res.rows.push_back({seed, label, job.cfg, job.metrics});
        }
    }
    std::map<std::string, std::vector<double>> accs;
    for (const auto& row : res.rows) accs[row.label].push_back(row.metrics.student_acc);
    for (const auto& [label, c] : configs) {
        const auto [mu, sd] = mean_std(accs[label]);
        res.summary.push_back({label, mu, sd, accs[label].size()});
    }
    res.sign_tests["akd_vs_avatars_equal"] = sign_test(accs["akd"], accs["avatars_equal"]);
    res.sign_tests["avatars_equal_vs_baseline"] = sign_test(accs["avatars_equal"], accs["baseline"]);
    res.sign_tests["akd_vs_baseline"] = sign_test(accs["akd"], accs["baseline"]);
    return res;
}

std::string AblationResult::rows_csv() const {
    std::ostringstream os;
    os << "seed,mode,loss_kind,merge_mode,k,m,student_acc,teacher_acc,final_distill_loss\n";
    for (const auto& r : rows) {
        const bool baseline = r.cfg.mode == DistillMode::baseline;
        os << r.seed << ',' << r.label << ',' << to_string(r.cfg.loss_kind) << ','
           << (r.cfg.mode == DistillMode::akd ? to_string(r.cfg.merge) : "none") << ',' << (baseline ? 1 : r.cfg.avatars.count) << ','
           << fmt_double(baseline ? 0.0 : r.cfg.avatars.dropout_ratio) << ',' << fmt_double(r.metrics.student_acc) << ','
           << fmt_double(r.metrics.teacher_acc) << ',' << fmt_double(r.metrics.final_distill_loss) << '\n';
    }
    return os.str();
}

std::string AblationResult::summary_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : summary) rows.push_back({{"mode", s.label}, {"mean_acc", s.mean_acc}, {"std", s.std}, {"n_seeds", s.n_seeds}});
    j["summary"] = std::move(rows);
    nlohmann::json tests = nlohmann::json::object();
    nlohmann::json ps = nlohmann::json::object();
    for (const auto& [name, t] : sign_tests) {
        tests[name] = {{"wins", t.wins}, {"losses", t.losses}, {"ties", t.ties}, {"p_value", t.p_value}};
        ps[name] = t.p_value;
    }
    j["sign_tests"] = std::move(tests);
    j["sign_test_p"] = std::move(ps);
    return j.dump(1) + "\n";
}

}  // namespace akd
