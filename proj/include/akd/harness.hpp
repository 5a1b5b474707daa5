#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "akd/avatar.hpp"
#include "akd/distill.hpp"
#include "akd/nn.hpp"
#include "akd/uncertainty.hpp"

namespace akd {

// ---------------------------------------------------------------------------
// Synthetic data

struct ToyDatasetSpec {
    std::size_t n_train = 512;
    std::size_t n_test = 512;
    std::size_t classes = 4;
    std::size_t image = 16;
    double noise = 0.3;
    double bump_sigma = 2.0;
    double bump_inset = 2.5;  // bump centre distance from the nearest edges, px
    double amplitude_jitter = 0.2;
    std::uint64_t seed = 2024;

    void validate(std::size_t batch) const;
};

struct Dataset {
    Tensor images;  // N x 1 x image x image
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    Tensor gather(std::span<const std::size_t> idx) const;
    std::vector<int> gather_labels(std::span<const std::size_t> idx) const;
};

struct ToyData {
    Dataset train;
    Dataset test;
    std::size_t classes = 4;
};

// Class c draws a Gaussian bump in quadrant (c mod 4), bump_inset px from the
// two nearest edges; classes past the fourth alternate the bump's sign per
// wrap. Per-sample amplitude jitter and additive N(0, noise) pixels. Labels
// are class-balanced.
ToyData make_dataset(const ToyDatasetSpec& spec);

// Gathers rows of an N x ... tensor.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx);

// ---------------------------------------------------------------------------
// Training

struct TrainSettings {
    double lr = 0.05;
    double momentum = 0.9;
    std::size_t epochs = 30;
    std::size_t batch = 32;
};

struct EpochTrace {
    std::size_t epoch = 0;
    double task_loss = 0.0;
    double distill_loss = 0.0;
    double total_loss = 0.0;
};

struct RunMetrics {
    double teacher_acc = 0.0;
    double student_acc = 0.0;
    double final_task_loss = 0.0;
    double final_distill_loss = 0.0;
    std::vector<EpochTrace> trace;
    std::vector<double> step_distill_losses;
    std::vector<double> step_total_losses;
    double wall_time_s = 0.0;
    std::uint64_t seed = 0;
    std::string sigma_shape;

    // Deterministic fields only; wall time is reported separately.
    std::string to_json() const;
    std::string trace_csv() const;
};

struct TrainedNetwork {
    Network net;
    RunMetrics metrics;
};

double accuracy(Network& net, const Dataset& data);

// SGD on cross-entropy for the toy architecture at the given width. Returns an
// eval-mode network whose standardize statistics are recalibrated on the full
// training set. A non-finite loss raises TrainingError.
TrainedNetwork train_classifier(const ToyData& data, std::size_t width, const TrainSettings& opt, std::uint64_t seed);
TrainedNetwork train_teacher(const ToyData& data, const TrainSettings& opt, std::uint64_t seed, std::size_t width = 16);

// Per-epoch sample order, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

// ---------------------------------------------------------------------------
// Frozen teacher and distillation runs

// Eval-mode tap features (standardized) for every sample of a dataset.
FeatureBatch tap_features(Network& net, const Dataset& data);

struct TeacherContext {
    Network teacher;             // frozen, eval mode
    FeatureBatch train_features;  // standardized teacher features
    double teacher_acc = 0.0;
    std::map<MergeMode, SigmaTensor> sigma;  // finalized for every mode
    std::vector<double> feature_variance;    // per position, C x H x W

    static TeacherContext prepare(const Network& teacher, const ToyData& data);
    Shape feature_shape() const;
};

enum class DistillMode { baseline, avatars_equal, akd };
enum class SigmaSource { precomputed, ema_online };

const char* to_string(DistillMode m);
DistillMode distill_mode_from_string(const std::string& s);
const char* to_string(SigmaSource s);
SigmaSource sigma_source_from_string(const std::string& s);

struct ExperimentConfig {
    DistillMode mode = DistillMode::akd;
    LossKind loss_kind = LossKind::mse;
    SoftmaxAxes kl_axes = SoftmaxAxes::per_channel_spatial;
    MergeMode merge = MergeMode::channel;
    SigmaSource sigma_source = SigmaSource::precomputed;
    AvatarConfig avatars;
    double alpha = 1.0;
    TrainSettings opt;
    std::size_t student_width = 8;
    std::uint64_t seed = 0;

    void validate() const;
    std::string label() const;
};

// Trains a fresh student against the frozen teacher. Baseline mimics the
// teacher feature directly (k = 1, no perturbation, sigma = 1); avatars_equal
// uses equal-weight avatars; akd divides by the uncertainty field.
RunMetrics distill_student(const TeacherContext& ctx, const ToyData& data, const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Ensemble working capacity

struct EnsembleResult {
    double single_acc = 0.0;
    double ensemble_acc = 0.0;
};

// Teacher head on each of k avatar feature maps, softmax outputs averaged.
EnsembleResult ensemble_eval(Network& teacher, const FeatureBatch& features, std::span<const int> labels, std::size_t k, double m,
                             std::uint64_t seed);
EnsembleResult ensemble_eval(Network& teacher, const Dataset& test, std::size_t k, double m, std::uint64_t seed);

struct EnsembleCurveRow {
    std::size_t k = 0;
    double mean_single = 0.0;
    double mean_ensemble = 0.0;
    double std = 0.0;       // sample std of ensemble accuracy over seeds
    double ci95_half = 0.0;  // normal-approximation half width
};

std::vector<EnsembleCurveRow> ensemble_curve(Network& teacher, const Dataset& test, std::span<const std::size_t> ks, double m,
                                             std::size_t n_seeds, std::uint64_t first_seed);
std::string ensemble_curve_csv(std::span<const EnsembleCurveRow> rows);

// ---------------------------------------------------------------------------
// Ablations

struct SignTest {
    std::size_t wins = 0;
    std::size_t losses = 0;
    std::size_t ties = 0;
    double p_value = 1.0;
};

// One-sided: P(X >= wins) for X ~ Binomial(wins + losses, 1/2); ties dropped.
SignTest sign_test(std::span<const double> a, std::span<const double> b);

struct AblationRow {
    std::uint64_t seed = 0;
    std::string label;
    ExperimentConfig cfg;
    RunMetrics metrics;
};

struct SummaryRow {
    std::string label;
    double mean_acc = 0.0;
    double std = 0.0;
    std::size_t n_seeds = 0;
};

struct AblationResult {
    std::vector<AblationRow> rows;  // seed-major, 7 configurations per seed
    std::vector<SummaryRow> summary;
    std::map<std::string, SignTest> sign_tests;

    std::string rows_csv() const;
    std::string summary_json() const;
};

// The 7 configurations run per seed: component ablation (baseline,
// avatars_equal, akd with base.merge) and the four merge modes.
std::vector<std::pair<std::string, ExperimentConfig>> ablation_configs(const ExperimentConfig& base);

// threads = 0 uses AKD_THREADS or the number of logical processors.
AblationResult ablation_suite(const TeacherContext& ctx, const ToyData& data, const ExperimentConfig& base,
                              std::span<const std::uint64_t> seeds, std::size_t threads = 0);

std::size_t default_thread_count();

}  // namespace akd
