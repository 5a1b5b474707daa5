#include "akd/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"

namespace akd {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError((where.empty() ? std::string("config") : where) + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
        }
    }
}

template <class T>
void read(const json& obj, const std::string& section, const char* key, T& dst) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    const std::string name = section + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("config key '" + name + "' must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError("config key '" + name + "' must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("config key '" + name + "' must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("config key '" + name + "' must be a string");
    }
    try {
        dst = v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + name + "' has the wrong type");
    }
}

template <class T>
void read_list(const json& obj, const std::string& section, const char* key, std::vector<T>& dst) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    const std::string name = section + "." + key;
    if (!v.is_array()) throw ConfigError("config key '" + name + "' must be an array");
    std::vector<T> out;
    for (const auto& e : v) {
        if constexpr (std::is_integral_v<T>) {
            if (!e.is_number_unsigned()) throw ConfigError("config key '" + name + "' must hold non-negative integers");
        } else {
            if (!e.is_number()) throw ConfigError("config key '" + name + "' must hold numbers");
        }
        out.push_back(e.get<T>());
    }
    dst = std::move(out);
}

template <class E, class Parse>
void read_enum(const json& obj, const std::string& section, const char* key, E& dst, Parse parse) {
    std::string s;
    if (!obj.contains(key)) return;
    read(obj, section, key, s);
    try {
        dst = parse(s);
    } catch (const ConfigError& e) {
        throw ConfigError("config key '" + section + "." + key + "': " + e.what());
    }
}

void read_opt(const json& obj, const std::string& section, TrainSettings& opt) {
    read(obj, section, "lr", opt.lr);
    read(obj, section, "momentum", opt.momentum);
    read(obj, section, "epochs", opt.epochs);
    read(obj, section, "batch", opt.batch);
}

json opt_json(const TrainSettings& o) { return {{"lr", o.lr}, {"momentum", o.momentum}, {"epochs", o.epochs}, {"batch", o.batch}}; }

}  // namespace

CliConfig CliConfig::from_json(const json& j) {
    CliConfig c;
    reject_unknown(j, "", {"format_version", "dataset", "teacher", "distill", "avatars", "ensemble", "ablation"});
    if (j.contains("format_version") && j.at("format_version") != 1) throw ConfigError("config key 'format_version' must be 1");
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        reject_unknown(d, "dataset", {"n_train", "n_test", "classes", "image", "noise", "bump_sigma", "bump_inset", "amplitude_jitter", "seed"});
        read(d, "dataset", "n_train", c.dataset.n_train);
        read(d, "dataset", "n_test", c.dataset.n_test);
        read(d, "dataset", "classes", c.dataset.classes);
        read(d, "dataset", "image", c.dataset.image);
        read(d, "dataset", "noise", c.dataset.noise);
        read(d, "dataset", "bump_sigma", c.dataset.bump_sigma);
        read(d, "dataset", "bump_inset", c.dataset.bump_inset);
        read(d, "dataset", "amplitude_jitter", c.dataset.amplitude_jitter);
        read(d, "dataset", "seed", c.dataset.seed);
    }
    if (j.contains("teacher")) {
        const json& t = j.at("teacher");
        reject_unknown(t, "teacher", {"width", "seed", "lr", "momentum", "epochs", "batch"});
        read(t, "teacher", "width", c.teacher_width);
        read(t, "teacher", "seed", c.teacher_seed);
        read_opt(t, "teacher", c.teacher_opt);
    }
    ExperimentConfig& e = c.experiment;
    if (j.contains("distill")) {
        const json& d = j.at("distill");
        reject_unknown(d, "distill",
                       {"mode", "loss_kind", "kl_axes", "merge", "sigma_source", "alpha", "student_width", "seed", "lr", "momentum", "epochs",
                        "batch"});
        read_enum(d, "distill", "mode", e.mode, distill_mode_from_string);
        read_enum(d, "distill", "loss_kind", e.loss_kind, loss_kind_from_string);
        read_enum(d, "distill", "kl_axes", e.kl_axes, softmax_axes_from_string);
        read_enum(d, "distill", "merge", e.merge, merge_mode_from_string);
        read_enum(d, "distill", "sigma_source", e.sigma_source, sigma_source_from_string);
        read(d, "distill", "alpha", e.alpha);
        read(d, "distill", "student_width", e.student_width);
        read(d, "distill", "seed", e.seed);
        read_opt(d, "distill", e.opt);
    }
    if (j.contains("avatars")) {
        const json& a = j.at("avatars");
        reject_unknown(a, "avatars", {"count", "dropout_ratio", "per_avatar_ratios", "seed"});
        read(a, "avatars", "count", e.avatars.count);
        read(a, "avatars", "dropout_ratio", e.avatars.dropout_ratio);
        read_list(a, "avatars", "per_avatar_ratios", e.avatars.per_avatar_ratios);
        read(a, "avatars", "seed", e.avatars.seed);
    }
    if (j.contains("ensemble")) {
        const json& en = j.at("ensemble");
        reject_unknown(en, "ensemble", {"k", "m", "seeds", "first_seed"});
        read_list(en, "ensemble", "k", c.ensemble_k);
        read(en, "ensemble", "m", c.ensemble_m);
        read(en, "ensemble", "seeds", c.ensemble_seeds);
        read(en, "ensemble", "first_seed", c.ensemble_first_seed);
    }
    if (j.contains("ablation")) {
        const json& ab = j.at("ablation");
        reject_unknown(ab, "ablation", {"seeds", "first_seed"});
        read(ab, "ablation", "seeds", c.ablation_seeds);
        read(ab, "ablation", "first_seed", c.ablation_first_seed);
    }
    return c;
}

CliConfig CliConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

json CliConfig::to_json() const {
    const ExperimentConfig& e = experiment;
    json j;
    j["format_version"] = 1;
    j["dataset"] = {{"n_train", dataset.n_train},     {"n_test", dataset.n_test},       {"classes", dataset.classes},
                    {"image", dataset.image},         {"noise", dataset.noise},         {"bump_sigma", dataset.bump_sigma},
                    {"bump_inset", dataset.bump_inset}, {"amplitude_jitter", dataset.amplitude_jitter}, {"seed", dataset.seed}};
    j["teacher"] = opt_json(teacher_opt);
    j["teacher"]["width"] = teacher_width;
    j["teacher"]["seed"] = teacher_seed;
    j["distill"] = opt_json(e.opt);
    j["distill"]["mode"] = to_string(e.mode);
    j["distill"]["loss_kind"] = to_string(e.loss_kind);
    j["distill"]["kl_axes"] = to_string(e.kl_axes);
    j["distill"]["merge"] = to_string(e.merge);
    j["distill"]["sigma_source"] = to_string(e.sigma_source);
    j["distill"]["alpha"] = e.alpha;
    j["distill"]["student_width"] = e.student_width;
    j["distill"]["seed"] = e.seed;
    j["avatars"] = {{"count", e.avatars.count},
                    {"dropout_ratio", e.avatars.dropout_ratio},
                    {"per_avatar_ratios", e.avatars.per_avatar_ratios},
                    {"seed", e.avatars.seed}};
    j["ensemble"] = {{"k", ensemble_k}, {"m", ensemble_m}, {"seeds", ensemble_seeds}, {"first_seed", ensemble_first_seed}};
    j["ablation"] = {{"seeds", ablation_seeds}, {"first_seed", ablation_first_seed}};
    return j;
}

void CliConfig::validate() const {
    dataset.validate(std::max(teacher_opt.batch, experiment.opt.batch));
    if (teacher_width == 0) throw ConfigError("teacher.width must be positive");
    if (teacher_opt.batch < 2 || teacher_opt.epochs == 0 || !(teacher_opt.lr > 0.0) ||
        !(teacher_opt.momentum >= 0.0 && teacher_opt.momentum < 1.0)) {
        throw ConfigError("invalid teacher optimizer settings");
    }
    experiment.validate();
    if (ensemble_k.empty() || std::find(ensemble_k.begin(), ensemble_k.end(), 0u) != ensemble_k.end()) {
        throw ConfigError("ensemble.k must list positive avatar counts");
    }
    if (!(ensemble_m >= 0.0 && ensemble_m < 1.0)) throw ConfigError("ensemble.m must lie in [0, 1)");
    if (ensemble_seeds == 0) throw ConfigError("ensemble.seeds must be positive");
    if (ablation_seeds == 0) throw ConfigError("ablation.seeds must be positive");
}

// ---------------------------------------------------------------------------
// Verification suite

namespace {

CheckResult check(std::string name, double value, double tol, std::string detail = {}) {
    return {std::move(name), value <= tol, value, tol, std::move(detail)};
}

Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double offset = 0.0) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(s.numel());
    for (auto& x : v) x = offset + nd(rng);
    return Tensor(s, std::move(v));
}

}  // namespace

std::vector<CheckResult> run_verification(const fs::path& out) {
    std::vector<CheckResult> results;
    std::mt19937_64 rng(20240611);

    // Gradient forms and ratio laws.
    GradVerifyConfig gcfg;
    gcfg.throw_on_failure = false;
    const GradReport report = verify_gradients(gcfg);
    results.push_back(check("gradient_autodiff", report.max_abs_err_autodiff, gcfg.analytic_tol));
    results.push_back(check("gradient_finite_difference", report.max_rel_err_finite_diff, gcfg.finite_diff_tol));
    results.push_back(check("ratio_mse", report.max_ratio_mse_err, gcfg.ratio_mse_tol));
    results.push_back(check("ratio_kl", report.max_ratio_kl_err, gcfg.ratio_kl_tol));

    // Analytic minimum of log s2 + r^2 / s2, in grid steps.
    {
        std::uniform_real_distribution<double> ur(0.1, 10.0);
        double worst = 0.0;
        const std::size_t n = 401;
        for (int t = 0; t < 20; ++t) {
            const double r = ur(rng);
            const auto grid = sigma2_grid(r, n);
            const double step = std::log(grid[1] / grid[0]);
            worst = std::max(worst, std::abs(std::log(analytic_min_check(r, grid) / (r * r))) / step);
        }
        results.push_back(check("analytic_minimum_grid_steps", worst, 1.0));
    }

    // Residual second moment against c(m) F^2 at two magnitudes.
    {
        const double m = 0.1;
        const Tensor f = random_tensor(Shape{1, 2, 3, 3}, rng);
        const Tensor f10 = scale(f, 10.0);
        const auto est = residual_moment_oracle(f, m, 1000000, 11);
        const auto est10 = residual_moment_oracle(f10, m, 1000000, 11);
        double worst = 0.0, ratio_sum = 0.0;
        for (std::size_t i = 0; i < est.size(); ++i) {
            const double expect = mask_dropout_moment_constant(m) * f[i] * f[i];
            const double expect10 = mask_dropout_moment_constant(m) * f10[i] * f10[i];
            worst = std::max({worst, std::abs(est[i] - expect) / expect, std::abs(est10[i] - expect10) / expect10});
            ratio_sum += est10[i] / est[i];
        }
        results.push_back(check("residual_moment_rel", worst, 0.02));
        results.push_back(check("residual_quadratic_scaling", std::abs(ratio_sum / static_cast<double>(est.size()) / 100.0 - 1.0), 0.01));
    }

    // Welford against a two-pass population variance.
    {
        const Shape chw{2, 3, 3};
        SigmaEstimator est(chw);
        std::vector<Tensor> batches;
        for (int b = 0; b < 10; ++b) {
            batches.push_back(random_tensor(Shape{100, 2, 3, 3}, rng, 3.0));
            est.update(batches.back());
        }
        const auto var = est.variance();
        double worst = 0.0;
        for (std::size_t p = 0; p < chw.numel(); ++p) {
            double mu = 0.0, ss = 0.0;
            std::size_t n = 0;
            for (const auto& t : batches)
                for (std::size_t i = 0; i < 100; ++i, ++n) mu += t[i * chw.numel() + p];
            mu /= static_cast<double>(n);
            for (const auto& t : batches)
                for (std::size_t i = 0; i < 100; ++i) ss += (t[i * chw.numel() + p] - mu) * (t[i * chw.numel() + p] - mu);
            const double two_pass = ss / static_cast<double>(n);
            worst = std::max(worst, std::abs(var[p] - two_pass) / two_pass);
        }
        results.push_back(check("sigma_two_pass", worst, 1e-10));
    }

    // Zero-mean precondition after standardization.
    {
        StandardizeStats stats;
        const Tensor y = batch_standardize_forward(random_tensor(Shape{8, 3, 4, 4}, rng, 2.0), stats, Mode::train);
        const Tensor mu = mean(y, {0, 2, 3});
        double worst = 0.0;
        for (double v : mu.values()) worst = std::max(worst, std::abs(v));
        results.push_back(check("zero_mean_after_standardize", worst, 1e-10));
    }

    // sigma == 1 collapses the AKD loss to the equal-weight ensemble loss.
    {
        AvatarSet avatars;
        avatars.source = random_tensor(Shape{2, 4, 3, 3}, rng);
        AvatarConfig acfg;
        acfg.count = 4;
        acfg.seed = 3;
        avatars = generate_avatars(avatars.source, acfg, 0);
        const Tensor student = random_tensor(Shape{2, 2, 3, 3}, rng);
        const Projection proj(2, 4, 9);
        SigmaTensor ones;
        ones.mode = MergeMode::full;
        ones.values = Tensor::ones(Shape{4, 3, 3});
        const double a = akd_mse_loss(avatars, student, proj, ones).item();
        const double b = vanilla_ensemble_loss(avatars, student, proj).item();
        results.push_back(check("unit_sigma_reduction", std::abs(a - b), 1e-12));
    }

    // Scalar merge equals a fixed-temperature run, step by step.
    {
        ToyDatasetSpec ds;
        ds.n_train = 64;
        ds.n_test = 16;
        TrainSettings opt;
        opt.epochs = 1;
        opt.batch = 16;
        const ToyData data = make_dataset(ds);
        const TrainedNetwork teacher = train_classifier(data, 4, opt, 1);
        const TeacherContext ctx = TeacherContext::prepare(teacher.net, data);
        ExperimentConfig cfg;
        cfg.opt = opt;
        cfg.student_width = 2;
        cfg.seed = 3;
        cfg.mode = DistillMode::akd;
        cfg.merge = MergeMode::scalar;
        const RunMetrics scalar = distill_student(ctx, data, cfg);
        cfg.mode = DistillMode::avatars_equal;
        const RunMetrics fixed = distill_student(ctx, data, cfg);
        double worst = 0.0;
        for (std::size_t i = 0; i < scalar.step_total_losses.size(); ++i) {
            worst = std::max(worst, std::abs(scalar.step_total_losses[i] - fixed.step_total_losses[i]));
        }
        if (scalar.step_total_losses.size() != fixed.step_total_losses.size()) worst = INFINITY;
        results.push_back(check("scalar_merge_reduction", worst, 1e-9));
    }

    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream(out / "grad_report.json") << report.to_json();
        std::ofstream(out / "ratios.csv") << report.ratios_csv();
        json j;
        j["format_version"] = 1;
        json checks = json::array();
        for (const auto& r : results) {
            checks.push_back({{"name", r.name}, {"passed", r.passed}, {"value", r.value}, {"tolerance", r.tolerance}});
        }
        j["checks"] = std::move(checks);
        std::ofstream(out / "verify_report.json") << j.dump(1) << "\n";
    }
    return results;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

void write_timing(const fs::path& dir, double seconds) {
    write_text(dir / "timing.json", json{{"format_version", 1}, {"wall_time_s", seconds}}.dump(1) + "\n");
}

void echo_config(const fs::path& dir, const CliConfig& cfg) { write_text(dir / "effective_config.json", cfg.to_json().dump(1) + "\n"); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Network load_teacher(const fs::path& path, const CliConfig& cfg) {
    if (!fs::exists(path)) throw ConfigError("teacher file " + path.string() + " does not exist");
    Network net = load_weights(path);
    const auto& layers = net.layers();
    if (layers.empty() || layers.back().spec.kind != LayerKind::linear || layers.back().spec.out != cfg.dataset.classes) {
        throw ConfigError("teacher in " + path.string() + " does not match dataset.classes = " + std::to_string(cfg.dataset.classes));
    }
    if (net.feature_tap_index() + 1 >= layers.size()) throw ConfigError("teacher in " + path.string() + " has no head after its feature tap");
    return net;
}

std::string step_losses_csv(const RunMetrics& m) {
    std::ostringstream os;
    os.precision(17);
    os << "step,distill_loss,total_loss\n";
    for (std::size_t i = 0; i < m.step_total_losses.size(); ++i) {
        os << i << ',' << (i < m.step_distill_losses.size() ? m.step_distill_losses[i] : 0.0) << ',' << m.step_total_losses[i] << '\n';
    }
    return os.str();
}

int cmd_train_teacher(CliConfig cfg, const fs::path& out, std::ostream& os) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const ToyData data = make_dataset(cfg.dataset);
    TrainedNetwork tr = train_teacher(data, cfg.teacher_opt, cfg.teacher_seed, cfg.teacher_width);
    const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    fs::create_directories(dir);
    save_weights(tr.net, out);
    write_text(dir / "teacher_metrics.json", tr.metrics.to_json());
    write_text(dir / "teacher_trace.csv", tr.metrics.trace_csv());
    echo_config(dir, cfg);
    write_timing(dir, seconds_since(t0));
    os << "teacher_acc " << tr.metrics.student_acc << "\n";
    return 0;
}

int cmd_distill(CliConfig cfg, const fs::path& teacher_path, const fs::path& out, std::ostream& os) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const ToyData data = make_dataset(cfg.dataset);
    const Network teacher = load_teacher(teacher_path, cfg);
    const TeacherContext ctx = TeacherContext::prepare(teacher, data);
    const RunMetrics m = distill_student(ctx, data, cfg.experiment);
    json meta = json::parse(m.to_json());
    meta["mode"] = to_string(cfg.experiment.mode);
    meta["loss_kind"] = to_string(cfg.experiment.loss_kind);
    if (cfg.experiment.mode == DistillMode::akd) meta["merge"] = to_string(cfg.experiment.merge);
    write_text(out / "metrics.json", meta.dump(1) + "\n");
    write_text(out / "trace.csv", m.trace_csv());
    write_text(out / "step_losses.csv", step_losses_csv(m));
    if (cfg.experiment.mode == DistillMode::akd && cfg.experiment.sigma_source == SigmaSource::precomputed) {
        write_text(out / "sigma.json", ctx.sigma.at(cfg.experiment.merge).to_json());
    }
    echo_config(out, cfg);
    write_timing(out, seconds_since(t0));
    os << "student_acc " << m.student_acc << " teacher_acc " << m.teacher_acc << "\n";
    return 0;
}

int cmd_ablate(CliConfig cfg, const fs::path& out, std::ostream& os, std::ostream& err) {
    cfg.validate();
    if (cfg.ablation_seeds < 10) err << "warning: fewer than 10 seeds; sign tests are not meaningful\n";
    const auto t0 = std::chrono::steady_clock::now();
    const ToyData data = make_dataset(cfg.dataset);
    TrainedNetwork tr = train_teacher(data, cfg.teacher_opt, cfg.teacher_seed, cfg.teacher_width);
    const TeacherContext ctx = TeacherContext::prepare(tr.net, data);
    std::vector<std::uint64_t> seeds(cfg.ablation_seeds);
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = cfg.ablation_first_seed + i;
    const AblationResult res = ablation_suite(ctx, data, cfg.experiment, seeds);
    fs::create_directories(out);
    save_weights(tr.net, out / "teacher.json");
    write_text(out / "ablation.csv", res.rows_csv());
    json summary = json::parse(res.summary_json());
    summary["teacher_acc"] = ctx.teacher_acc;
    write_text(out / "summary.json", summary.dump(1) + "\n");
    echo_config(out, cfg);
    write_timing(out, seconds_since(t0));
    for (const auto& s : res.summary) os << s.label << " mean_acc " << s.mean_acc << " std " << s.std << "\n";
    for (const auto& [name, t] : res.sign_tests) os << "sign_test " << name << " p " << t.p_value << "\n";
    return 0;
}

int cmd_verify(const fs::path& out, std::ostream& os, std::ostream& err) {
    const auto results = run_verification(out);
    bool ok = true;
    for (const auto& r : results) {
        os << (r.passed ? "PASS " : "FAIL ") << r.name << " value=" << r.value << " tol=" << r.tolerance << "\n";
        if (!r.passed) {
            err << "verification failed: " << r.name << "\n";
            ok = false;
        }
    }
    return ok ? 0 : 1;
}

int cmd_ensemble_eval(CliConfig cfg, const fs::path& teacher_path, const fs::path& out, std::ostream& os) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const ToyData data = make_dataset(cfg.dataset);
    Network teacher = load_teacher(teacher_path, cfg);
    const auto rows = ensemble_curve(teacher, data.test, cfg.ensemble_k, cfg.ensemble_m, cfg.ensemble_seeds, cfg.ensemble_first_seed);
    write_text(out / "ensemble_curve.csv", ensemble_curve_csv(rows));
    echo_config(out, cfg);
    write_timing(out, seconds_since(t0));
    for (const auto& r : rows) os << "k " << r.k << " single " << r.mean_single << " ensemble " << r.mean_ensemble << "\n";
    return 0;
}

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::verification: return 1;
        case ErrorKind::config:
        case ErrorKind::usage:
        case ErrorKind::format: return 2;
        default: return 3;
    }
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Avatar knowledge distillation workbench", "akd"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_path;
    std::string teacher_path;
    std::uint64_t seed = 0;
    std::size_t seeds = 0;
    std::string mode, loss, merge;
    std::vector<std::size_t> ks;
    double m = 0.0;

    auto* train = app.add_subcommand("train-teacher", "Train the teacher network");
    train->add_option("--config", config_path, "JSON config file");
    train->add_option("--out", out_path, "Teacher weight file")->required();
    auto* train_seed = train->add_option("--seed", seed, "Teacher seed");

    auto* distill = app.add_subcommand("distill", "Distill a student from a trained teacher");
    distill->add_option("--config", config_path, "JSON config file");
    distill->add_option("--teacher", teacher_path, "Teacher weight file")->required();
    auto* d_mode = distill->add_option("--mode", mode, "baseline | avatars | akd");
    auto* d_loss = distill->add_option("--loss", loss, "mse | kl");
    auto* d_merge = distill->add_option("--merge", merge, "scalar | full | channel | spatial");
    auto* d_k = distill->add_option("--k", ks, "Avatar count")->expected(1);
    auto* d_m = distill->add_option("--m", m, "Dropout ratio");
    auto* d_seed = distill->add_option("--seed", seed, "Run seed");
    distill->add_option("--out", out_path, "Output directory")->required();

    auto* ablate = app.add_subcommand("ablate", "Component and merge-mode ablations over seeds");
    ablate->add_option("--config", config_path, "JSON config file");
    auto* a_seeds = ablate->add_option("--seeds", seeds, "Number of seeds");
    ablate->add_option("--out", out_path, "Output directory")->required();

    auto* verify = app.add_subcommand("verify", "Run the invariant suites");
    verify->add_option("--out", out_path, "Output directory")->required();

    auto* ens = app.add_subcommand("ensemble-eval", "Avatar ensemble accuracy curve");
    ens->add_option("--config", config_path, "JSON config file");
    ens->add_option("--teacher", teacher_path, "Teacher weight file")->required();
    auto* e_k = ens->add_option("--k", ks, "Avatar counts, comma separated")->delimiter(',');
    auto* e_m = ens->add_option("--m", m, "Dropout ratio");
    auto* e_seeds = ens->add_option("--seeds", seeds, "Number of seeds");
    ens->add_option("--out", out_path, "Output directory")->required();

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        CliConfig cfg = config_path.empty() ? CliConfig{} : CliConfig::load(config_path);
        if (*train) {
            if (train_seed->count()) cfg.teacher_seed = seed;
            return cmd_train_teacher(cfg, out_path, out);
        }
        if (*distill) {
            ExperimentConfig& e = cfg.experiment;
            if (d_mode->count()) e.mode = distill_mode_from_string(mode);
            if (d_loss->count()) e.loss_kind = loss_kind_from_string(loss);
            if (d_merge->count()) {
                if (e.mode != DistillMode::akd) throw ConfigError("--merge only applies to --mode akd");
                e.merge = merge_mode_from_string(merge);
            }
            if (e.mode == DistillMode::baseline && (d_k->count() || d_m->count())) {
                throw ConfigError("--mode baseline takes no avatar flags (--k, --m)");
            }
            if (d_k->count()) e.avatars.count = ks.front();
            if (d_m->count()) e.avatars.dropout_ratio = m;
            if (d_seed->count()) e.seed = seed;
            return cmd_distill(cfg, teacher_path, out_path, out);
        }
        if (*ablate) {
            if (a_seeds->count()) cfg.ablation_seeds = seeds;
            return cmd_ablate(cfg, out_path, out, err);
        }
        if (*verify) return cmd_verify(out_path, out, err);
        if (*ens) {
            if (e_k->count()) cfg.ensemble_k = ks;
            if (e_m->count()) cfg.ensemble_m = m;
            if (e_seeds->count()) cfg.ensemble_seeds = seeds;
            return cmd_ensemble_eval(cfg, teacher_path, out_path, out);
        }
    } catch (const Error& e) {
        err << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}

}  // namespace akd
