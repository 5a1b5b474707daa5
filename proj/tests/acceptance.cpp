// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are fixed here.
//
//   akd_acceptance [--only N[,N...]] [--out DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "akd/cli.hpp"
#include "akd/harness.hpp"

using namespace akd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

Tensor randn(const Shape& s, std::mt19937_64& rng, double sd = 1.0, bool grad = false) {
    std::normal_distribution<double> nd(0.0, sd);
    std::vector<double> v(s.numel());
    for (auto& x : v) x = nd(rng);
    return Tensor(s, std::move(v), grad);
}

// ---------------------------------------------------------------------------
// Literal reference losses on raw arrays (independent of the tensor engine).

struct Dims {
    std::size_t B, C, H, W;
    std::size_t n() const { return B * C * H * W; }
};

double sig_at(const std::vector<double>& s, const Shape& ss, std::size_t c, std::size_t y, std::size_t x) {
    return s[((ss[0] == 1 ? 0 : c) * ss[1] + (ss[1] == 1 ? 0 : y)) * ss[2] + (ss[2] == 1 ? 0 : x)];
}

double ref_mse(const std::vector<double>& t, const std::vector<double>& p, const std::vector<double>& s, const Shape& ss, const Dims& d) {
    double acc = 0.0;
    for (std::size_t b = 0; b < d.B; ++b)
        for (std::size_t c = 0; c < d.C; ++c)
            for (std::size_t y = 0; y < d.H; ++y)
                for (std::size_t x = 0; x < d.W; ++x) {
                    const std::size_t i = ((b * d.C + c) * d.H + y) * d.W + x;
                    const double r = (t[i] - p[i]) / sig_at(s, ss, c, y, x);
                    acc += r * r;
                }
    return acc / static_cast<double>(d.n());
}

// Softmax groups: per (b, c) over H x W, or per b over C x H x W.
std::vector<std::vector<std::size_t>> groups_of(const Dims& d, bool per_channel) {
    std::vector<std::vector<std::size_t>> g;
    const std::size_t HW = d.H * d.W;
    if (per_channel) {
        for (std::size_t bc = 0; bc < d.B * d.C; ++bc) {
            g.emplace_back();
            for (std::size_t j = 0; j < HW; ++j) g.back().push_back(bc * HW + j);
        }
    } else {
        for (std::size_t b = 0; b < d.B; ++b) {
            g.emplace_back();
            for (std::size_t j = 0; j < d.C * HW; ++j) g.back().push_back(b * d.C * HW + j);
        }
    }
    return g;
}

std::vector<double> scaled(const std::vector<double>& v, const std::vector<double>& s, const Shape& ss, const Dims& d) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::size_t x = i % d.W, y = (i / d.W) % d.H, c = (i / (d.W * d.H)) % d.C;
        out[i] = v[i] / sig_at(s, ss, c, y, x);
    }
    return out;
}

std::vector<double> softmax_groups(const std::vector<double>& z, const std::vector<std::vector<std::size_t>>& groups) {
    std::vector<double> p(z.size());
    for (const auto& g : groups) {
        double mx = -INFINITY, zs = 0.0;
        for (std::size_t i : g) mx = std::max(mx, z[i]);
        for (std::size_t i : g) zs += std::exp(z[i] - mx);
        for (std::size_t i : g) p[i] = std::exp(z[i] - mx) / zs;
    }
    return p;
}

double ref_kl(const std::vector<double>& t, const std::vector<double>& p, const std::vector<double>& s, const Shape& ss, const Dims& d,
              bool per_channel) {
    const auto groups = groups_of(d, per_channel);
    const auto qt = softmax_groups(scaled(t, s, ss, d), groups);
    const auto qp = softmax_groups(scaled(p, s, ss, d), groups);
    double acc = 0.0;
    for (std::size_t i = 0; i < qt.size(); ++i) acc += qt[i] * (std::log(qt[i]) - std::log(qp[i]));
    return acc / static_cast<double>(groups.size());
}

// G / sigma with G = q_s * sum_group(q_t) - q_t, per distribution (undivided by the group count).
std::vector<double> ref_kl_grad_form(const std::vector<double>& t, const std::vector<double>& p, const std::vector<double>& s,
                                     const Shape& ss, const Dims& d, bool per_channel) {
    const auto groups = groups_of(d, per_channel);
    const auto qt = softmax_groups(scaled(t, s, ss, d), groups);
    const auto qp = softmax_groups(scaled(p, s, ss, d), groups);
    std::vector<double> g(t.size());
    for (const auto& grp : groups) {
        double st = 0.0;
        for (std::size_t i : grp) st += qt[i];
        for (std::size_t i : grp) {
            const std::size_t x = i % d.W, y = (i / d.W) % d.H, c = (i / (d.W * d.H)) % d.C;
            g[i] = (qp[i] * st - qt[i]) / sig_at(s, ss, c, y, x);
        }
    }
    return g;
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// ---------------------------------------------------------------------------
// 1. analytic vs autodiff vs finite differences

Outcome criterion_1() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> small(2, 3);
    std::uniform_real_distribution<double> uvar(0.2, 5.0);
    double worst_ad = 0.0, worst_fd = 0.0;
    std::size_t trials = 0;
    const MergeMode modes[] = {MergeMode::scalar, MergeMode::full, MergeMode::channel, MergeMode::spatial};
    enum class Form { mse, kl_channel, kl_all };
    for (Form form : {Form::mse, Form::kl_channel, Form::kl_all})
        for (MergeMode mode : modes)
            for (int trial = 0; trial < 100; ++trial, ++trials) {
                const Dims d{static_cast<std::size_t>(small(rng) - 1), static_cast<std::size_t>(small(rng)), static_cast<std::size_t>(small(rng)),
                             static_cast<std::size_t>(small(rng))};
                const Shape fs{d.B, d.C, d.H, d.W}, chw{d.C, d.H, d.W};
                std::vector<double> var(chw.numel());
                for (auto& v : var) v = uvar(rng);
                const SigmaTensor sig = sigma_from_variance(var, chw, mode);
                const Shape& ss = sig.values.shape();
                const std::vector<double> sv = vec(sig.values);
                const Tensor teacher = randn(fs, rng);
                const Tensor student = randn(fs, rng, 1.0, true);
                const std::vector<Tensor> targets = {teacher};
                const bool kl = form != Form::mse;
                const SoftmaxAxes axes = form == Form::kl_all ? SoftmaxAxes::all_chw : SoftmaxAxes::per_channel_spatial;
                const Tensor loss = kl ? ensemble_kl(targets, student, sig.values, axes) : ensemble_mse(targets, student, &sig.values);
                backward(loss);
                const auto ad = student.grad();

                // Analytic forms, scaled by the loss normalization.
                std::vector<double> an(d.n());
                if (kl) {
                    const Tensor g = analytic_grad_kl(teacher, student, sig.values, axes);
                    const double groups = form == Form::kl_all ? static_cast<double>(d.B) : static_cast<double>(d.B * d.C);
                    for (std::size_t i = 0; i < d.n(); ++i) an[i] = g[i] / groups;
                } else {
                    for (std::size_t i = 0; i < d.n(); ++i) {
                        const std::size_t x = i % d.W, y = (i / d.W) % d.H, c = (i / (d.W * d.H)) % d.C;
                        an[i] = analytic_grad_mse(teacher[i], student[i], sig_at(sv, ss, c, y, x)) / static_cast<double>(d.n());
                    }
                }

                // Central differences of the literal reference loss.
                const std::vector<double> tv = vec(teacher);
                std::vector<double> pv = vec(student);
                for (std::size_t i = 0; i < d.n(); ++i) {
                    worst_ad = std::max(worst_ad, std::abs(an[i] - ad[i]));
                    const double h = 1e-6 * std::max(1.0, std::abs(pv[i]));
                    const double keep = pv[i];
                    pv[i] = keep + h;
                    const double fp = kl ? ref_kl(tv, pv, sv, ss, d, form == Form::kl_channel) : ref_mse(tv, pv, sv, ss, d);
                    pv[i] = keep - h;
                    const double fm = kl ? ref_kl(tv, pv, sv, ss, d, form == Form::kl_channel) : ref_mse(tv, pv, sv, ss, d);
                    pv[i] = keep;
                    const double fd = (fp - fm) / (2.0 * h);
                    worst_fd = std::max(worst_fd, std::abs(ad[i] - fd) / std::max(std::abs(fd), 1e-4));
                }
            }
    const double secs = seconds_since(t0);
    const bool pass = worst_ad <= 1e-9 && worst_fd <= 1e-5 && secs < 60.0;
    return {pass, std::to_string(trials) + " trials, analytic-autodiff " + fmt(worst_ad) + " (tol 1e-9), autodiff-fd rel " + fmt(worst_fd) +
                      " (tol 1e-5), " + fmt(secs) + "s"};
}

// 2. gradient ratio laws across sigma in [0.25, 4]

Outcome criterion_2(const fs::path& out) {
    std::mt19937_64 rng(202);
    const Dims d{1, 3, 3, 3};
    const Shape fs{d.B, d.C, d.H, d.W};
    double worst_mse = 0.0, worst_kl = 0.0;
    std::size_t samples = 0;
    std::ostringstream csv;
    csv.precision(17);
    csv << "sigma,ratio_mse,expected_mse,ratio_kl,expected_kl\n";
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor teacher = randn(fs, rng);
        const Tensor base_student = randn(fs, rng);
        const std::vector<Tensor> targets = {teacher};
        auto grads = [&](double sigma, bool kl) {
            const Tensor s = base_student.clone(true);
            const Tensor sg = Tensor::full(Shape{1, 1, 1}, sigma);
            backward(kl ? ensemble_kl(targets, s, sg, SoftmaxAxes::per_channel_spatial) : ensemble_mse(targets, s, &sg));
            return std::vector<double>(s.grad().begin(), s.grad().end());
        };
        const auto mse1 = grads(1.0, false), kl1 = grads(1.0, true);
        const std::vector<double> one = {1.0};
        const auto form1 = ref_kl_grad_form(vec(teacher), vec(base_student), one, Shape{1, 1, 1}, d, true);
        for (int k = 0; k <= 16; ++k) {
            const double sigma = 0.25 * std::pow(16.0, k / 16.0);
            const auto ms = grads(sigma, false), ks = grads(sigma, true);
            const std::vector<double> sv = {sigma};
            const auto form = ref_kl_grad_form(vec(teacher), vec(base_student), sv, Shape{1, 1, 1}, d, true);
            for (std::size_t i = 0; i < d.n(); ++i) {
                const double r = ms[i] / mse1[i];
                worst_mse = std::max(worst_mse, std::abs(r - 1.0 / (sigma * sigma)));
                if (std::abs(kl1[i]) < 1e-6) continue;
                const double rk = ks[i] / kl1[i];
                const double expect = form[i] / form1[i];
                worst_kl = std::max(worst_kl, std::abs(rk - expect));
                if (i == 0) csv << sigma << ',' << r << ',' << 1.0 / (sigma * sigma) << ',' << rk << ',' << expect << '\n';
                ++samples;
            }
        }
    }
    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream(out / "ratio_law.csv") << csv.str();
    }
    const bool pass = worst_mse <= 1e-12 && worst_kl <= 1e-9;
    return {pass, std::to_string(samples) + " samples, |r_mse - 1/sigma^2| " + fmt(worst_mse) + " (tol 1e-12), |r_kl - G form| " + fmt(worst_kl) +
                      " (tol 1e-9)"};
}

// 3. residual second moment proportional to F^2 with c(m) = m

Outcome criterion_3() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(303);
    const double m = 0.1;
    const Tensor f = randn(Shape{1, 2, 3, 3}, rng);
    const Tensor f4 = Tensor(f.shape(), [&] {
        std::vector<double> v = vec(f);
        for (auto& x : v) x *= 4.0;
        return v;
    }());
    const auto e1 = residual_moment_oracle(f, m, 1000000, 31);
    const auto e4 = residual_moment_oracle(f4, m, 1000000, 32);  // independent draws
    double worst = 0.0, ratio = 0.0;
    for (std::size_t i = 0; i < f.numel(); ++i) {
        worst = std::max(worst, std::abs(e1[i] / (m * f[i] * f[i]) - 1.0));
        worst = std::max(worst, std::abs(e4[i] / (m * f4[i] * f4[i]) - 1.0));
        ratio += e4[i] / e1[i];
    }
    ratio /= static_cast<double>(f.numel());
    const double secs = seconds_since(t0);
    const bool pass = worst <= 0.02 && std::abs(ratio / 16.0 - 1.0) <= 0.01 && secs < 60.0;
    return {pass, "max rel err " + fmt(worst) + " (tol 0.02), magnitude x4 ratio/16 - 1 = " + fmt(ratio / 16.0 - 1.0) + " (tol 0.01), " +
                      fmt(secs) + "s"};
}

// 4. argmin of log s2 + r^2 / s2 on a fixed grid

Outcome criterion_4() {
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> ur(0.1, 10.0);
    const std::size_t n = 601;
    std::vector<double> grid(n);
    for (std::size_t i = 0; i < n; ++i) grid[i] = std::pow(10.0, -3.0 + 6.0 * static_cast<double>(i) / static_cast<double>(n - 1));
    const double step = std::log(grid[1] / grid[0]);
    double worst = 0.0;
    bool agree = true;
    for (int t = 0; t < 20; ++t) {
        const double r = ur(rng);
        const double got = analytic_min_check(r, grid);
        double best = grid[0], best_g = INFINITY;
        for (double s2 : grid) {
            const double g = std::log(s2) + r * r / s2;
            if (g < best_g) best_g = g, best = s2;
        }
        agree &= best == got;
        worst = std::max(worst, std::abs(std::log(got / (r * r))) / step);
    }
    return {agree && worst <= 1.0, "20 radii, worst distance " + fmt(worst) + " grid steps (tol 1), brute-force argmin agrees: " + (agree ? "yes" : "no")};
}

// 5. Welford vs two-pass, zero mean after standardization

Outcome criterion_5() {
    std::mt19937_64 rng(505);
    const Shape chw{3, 2, 2};
    const std::size_t P = chw.numel();
    double worst_var = 0.0;
    for (int stream = 0; stream < 5; ++stream) {
        SigmaEstimator est(chw);
        std::vector<double> all;
        const double offset = 10.0 * stream;
        for (int b = 0; b < 8; ++b) {
            Tensor batch = randn(Shape{125, 3, 2, 2}, rng, 0.5 + stream);
            for (auto& x : batch.mutable_values()) x += offset;
            all.insert(all.end(), batch.values().begin(), batch.values().end());
            est.update(batch);
        }
        const auto var = est.variance();
        for (std::size_t p = 0; p < P; ++p) {
            double mu = 0.0, ss = 0.0;
            for (std::size_t i = 0; i < 1000; ++i) mu += all[i * P + p];
            mu /= 1000.0;
            for (std::size_t i = 0; i < 1000; ++i) ss += (all[i * P + p] - mu) * (all[i * P + p] - mu);
            worst_var = std::max(worst_var, std::abs(var[p] - ss / 1000.0) / (ss / 1000.0));
        }
    }
    double worst_mu = 0.0;
    for (int t = 0; t < 5; ++t) {
        StandardizeStats stats;
        Tensor x = randn(Shape{16, 4, 5, 5}, rng, 3.0);
        for (auto& v : x.mutable_values()) v += 7.0;
        const Tensor y = batch_standardize_forward(x, stats, Mode::train);
        for (std::size_t c = 0; c < 4; ++c) {
            double mu = 0.0;
            for (std::size_t i = 0; i < y.numel(); ++i)
                if ((i / 25) % 4 == c) mu += y[i];
            worst_mu = std::max(worst_mu, std::abs(mu / 400.0));
        }
    }
    return {worst_var <= 1e-10 && worst_mu < 1e-10,
            "Welford vs two-pass rel " + fmt(worst_var) + " (tol 1e-10), |mean| after standardize " + fmt(worst_mu) + " (tol 1e-10)"};
}

// 6. reduction identities

Outcome criterion_6() {
    std::mt19937_64 rng(606);
    double worst_unit = 0.0;
    for (int t = 0; t < 20; ++t) {
        const Tensor f = randn(Shape{2, 4, 3, 3}, rng);
        AvatarConfig acfg;
        acfg.count = 5;
        acfg.seed = static_cast<std::uint64_t>(t);
        const AvatarSet av = generate_avatars(f, acfg, 0);
        const Tensor s = randn(Shape{2, 2, 3, 3}, rng);
        const Projection proj(2, 4, static_cast<std::uint64_t>(t));
        SigmaTensor ones;
        ones.mode = MergeMode::full;
        ones.values = Tensor::ones(Shape{4, 3, 3});
        const double akd = akd_mse_loss(av, s, proj, ones).item();
        // Equal-weight ensemble mimic written out per avatar.
        const std::vector<double> pv = vec(proj(s));
        double eq2 = 0.0;
        for (const auto& a : av.features) {
            double acc = 0.0;
            for (std::size_t i = 0; i < pv.size(); ++i) acc += (a[i] - pv[i]) * (a[i] - pv[i]);
            eq2 += acc / static_cast<double>(pv.size());
        }
        eq2 /= static_cast<double>(av.features.size());
        worst_unit = std::max(worst_unit, std::abs(akd - eq2));
    }

    ToyDatasetSpec ds;
    ds.n_train = 128;
    ds.n_test = 64;
    const ToyData data = make_dataset(ds);
    TrainSettings topt;
    topt.epochs = 3;
    const TrainedNetwork teacher = train_teacher(data, topt, 5);
    const TeacherContext ctx = TeacherContext::prepare(teacher.net, data);
    double worst_step = 0.0;
    std::size_t steps = 0;
    for (LossKind kind : {LossKind::mse, LossKind::kl}) {
        ExperimentConfig cfg;
        cfg.opt.epochs = 3;
        cfg.loss_kind = kind;
        cfg.seed = 9;
        cfg.mode = DistillMode::akd;
        cfg.merge = MergeMode::scalar;
        const RunMetrics a = distill_student(ctx, data, cfg);
        cfg.mode = DistillMode::avatars_equal;
        const RunMetrics b = distill_student(ctx, data, cfg);
        if (a.step_total_losses.size() != b.step_total_losses.size()) return {false, "step counts differ"};
        for (std::size_t i = 0; i < a.step_total_losses.size(); ++i) {
            worst_step = std::max(worst_step, std::abs(a.step_total_losses[i] - b.step_total_losses[i]));
        }
        steps += a.step_total_losses.size();
    }
    return {worst_unit <= 1e-12 && worst_step <= 1e-9,
            "unit sigma vs equal-weight loss " + fmt(worst_unit) + " (tol 1e-12), scalar merge vs fixed temperature over " + std::to_string(steps) +
                " steps " + fmt(worst_step) + " (tol 1e-9)"};
}

// Shared teacher for criteria 7 and 8: the CLI defaults.
struct DefaultRun {
    CliConfig cfg;
    ToyData data;
    TrainedNetwork teacher;
    TeacherContext ctx;
};

const DefaultRun& default_run() {
    static const DefaultRun run = [] {
        DefaultRun r;
        r.data = make_dataset(r.cfg.dataset);
        r.teacher = train_teacher(r.data, r.cfg.teacher_opt, r.cfg.teacher_seed, r.cfg.teacher_width);
        r.ctx = TeacherContext::prepare(r.teacher.net, r.data);
        return r;
    }();
    return run;
}

// 7. component-ablation ordering

Outcome criterion_7(const fs::path& out) {
    const auto t0 = Clock::now();
    const DefaultRun& run = default_run();
    std::vector<std::uint64_t> seeds(run.cfg.ablation_seeds);
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = run.cfg.ablation_first_seed + i;
    const AblationResult res = ablation_suite(run.ctx, run.data, run.cfg.experiment, seeds);
    const double secs = seconds_since(t0);
    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream(out / "ablation.csv") << res.rows_csv();
        std::ofstream(out / "summary.json") << res.summary_json();
    }
    auto mean_of = [&](const std::string& label) {
        for (const auto& s : res.summary)
            if (s.label == label) return s.mean_acc;
        return std::nan("");
    };
    const double base = mean_of("baseline"), av = mean_of("avatars_equal"), akd = mean_of("akd");
    const double p1 = res.sign_tests.at("avatars_equal_vs_baseline").p_value;
    const double p2 = res.sign_tests.at("akd_vs_avatars_equal").p_value;
    const double p3 = res.sign_tests.at("akd_vs_baseline").p_value;
    const bool pass = seeds.size() >= 10 && akd > av && av > base && p1 < 0.05 && p2 < 0.05 && p3 < 0.05 && secs < 1200.0;
    return {pass, std::to_string(seeds.size()) + " seeds, teacher " + fmt(run.ctx.teacher_acc) + ", mean acc baseline " + fmt(base) +
                      " / avatars " + fmt(av) + " / akd " + fmt(akd) + ", sign p avatars>baseline " + fmt(p1) + ", akd>avatars " + fmt(p2) +
                      ", akd>baseline " + fmt(p3) + ", " + fmt(secs) + "s"};
}

// 8. ensemble working capacity

Outcome criterion_8(const fs::path& out) {
    const DefaultRun& run = default_run();
    Network teacher = run.ctx.teacher.clone();
    const std::vector<std::size_t> ks = {1, 3, 5, 10};
    const auto rows = ensemble_curve(teacher, run.data.test, ks, 0.1, 20, 1);
    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream(out / "ensemble_curve.csv") << ensemble_curve_csv(rows);
    }
    bool pass = rows[0].mean_ensemble <= rows[0].mean_single;
    std::string detail = "single " + fmt(rows[0].mean_single);
    for (const auto& r : rows) {
        if (r.k >= 3) pass &= r.mean_ensemble >= r.mean_single - 0.005;
        detail += ", k=" + std::to_string(r.k) + " " + fmt(r.mean_ensemble) + " +/- " + fmt(r.ci95_half);
    }
    return {pass, detail};
}

// 9. byte-identical reruns, parallel equals serial

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

// Every file except wall-clock timing is a primary output.
bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
    std::set<std::string> names;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) names.insert(fs::relative(e.path(), a).string());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) names.insert(fs::relative(e.path(), b).string());
    for (const auto& n : names) {
        if (fs::path(n).filename() == "timing.json") continue;
        if (!fs::exists(a / n) || !fs::exists(b / n) || slurp(a / n) != slurp(b / n)) {
            why = n;
            return false;
        }
    }
    return true;
}

Outcome criterion_9() {
    const fs::path root = fs::temp_directory_path() / "akd_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "config.json") << R"({
  "dataset": {"n_train": 128, "n_test": 64},
  "teacher": {"epochs": 2},
  "distill": {"epochs": 2},
  "ensemble": {"seeds": 5},
  "ablation": {"seeds": 3}
})";
    const std::string cfg = (root / "config.json").string();
    std::ostringstream sink;
    std::vector<std::string> checked;
    for (const char* run : {"a", "b"}) {
        const fs::path r = root / run;
        const std::string t = (r / "teacher" / "teacher.json").string();
        std::vector<std::vector<std::string>> cmds = {
            {"train-teacher", "--config", cfg, "--out", t, "--seed", "4"},
            {"distill", "--config", cfg, "--teacher", t, "--mode", "baseline", "--out", (r / "baseline").string()},
            {"distill", "--config", cfg, "--teacher", t, "--mode", "avatars", "--k", "3", "--out", (r / "avatars").string()},
            {"distill", "--config", cfg, "--teacher", t, "--mode", "akd", "--merge", "channel", "--loss", "kl", "--out", (r / "akd").string()},
            {"ablate", "--config", cfg, "--out", (r / "ablate").string()},
            {"verify", "--out", (r / "verify").string()},
            {"ensemble-eval", "--config", cfg, "--teacher", t, "--k", "1,3,5", "--m", "0.1", "--out", (r / "ensemble").string()},
        };
        for (auto& c : cmds) {
            const int code = run_cli(c, sink, sink);
            if (code != 0) return {false, "command " + c[0] + " exited " + std::to_string(code)};
        }
    }
    std::string why;
    if (!same_tree(root / "a", root / "b", why)) return {false, "rerun differs in " + why};

    ToyDatasetSpec ds;
    ds.n_train = 128;
    ds.n_test = 64;
    const ToyData data = make_dataset(ds);
    TrainSettings opt;
    opt.epochs = 2;
    const TrainedNetwork teacher = train_teacher(data, opt, 2);
    const TeacherContext ctx = TeacherContext::prepare(teacher.net, data);
    ExperimentConfig base;
    base.opt.epochs = 2;
    const std::vector<std::uint64_t> seeds = {1, 2, 3};
    const AblationResult serial = ablation_suite(ctx, data, base, seeds, 1);
    const AblationResult parallel = ablation_suite(ctx, data, base, seeds, 4);
    if (serial.rows_csv() != parallel.rows_csv() || serial.summary_json() != parallel.summary_json()) {
        return {false, "parallel ablation differs from serial"};
    }
    return {true, "7 CLI commands rerun byte-identical (timing.json excluded); 4-thread ablation equals serial"};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    fs::path out;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string tok;
            while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
        } else if (a == "--out" && i + 1 < argc) {
            out = argv[++i];
        } else {
            std::cerr << "usage: akd_acceptance [--only N[,N...]] [--out DIR]\n";
            return 2;
        }
    }
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient triple agreement", criterion_1},
        {"gradient ratio law", [&] { return criterion_2(out); }},
        {"residual moment proportionality", criterion_3},
        {"uncertainty objective minimum", criterion_4},
        {"variance oracle and zero mean", criterion_5},
        {"reduction identities", criterion_6},
        {"component ablation ordering", [&] { return criterion_7(out); }},
        {"ensemble working capacity", [&] { return criterion_8(out); }},
        {"determinism", criterion_9},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.contains(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
