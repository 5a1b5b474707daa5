#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "akd/tensor.hpp"

namespace akd {

// A batch of feature maps, B x C x H x W.
using FeatureBatch = Tensor;

void require_feature_batch(const Tensor& t, const char* what);

enum class LayerKind { linear, conv2d, relu, batch_standardize, dropout, global_avg_pool };

const char* to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in = 0;   // fan-in features / input channels
    std::size_t out = 0;  // output features / output channels
    std::size_t kernel = 1;
    int padding = 0;
    double keep = 1.0;    // dropout keep probability

    static LayerSpec linear(std::size_t in, std::size_t out);
    static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, int padding);
    static LayerSpec relu();
    static LayerSpec standardize(std::size_t channels);
    static LayerSpec dropout(double keep);
    static LayerSpec global_avg_pool();

    // Throws ConfigError when the parameters do not fit the kind.
    void validate() const;
    bool operator==(const LayerSpec&) const = default;
};

inline constexpr double kStandardizeMomentum = 0.1;
inline constexpr double kStandardizeVarFloor = 1e-5;

struct StandardizeStats {
    std::vector<double> running_mean;
    std::vector<double> running_var;
};

enum class Mode { train, eval };

// Non-affine per-channel standardization over every axis except 1.
// Train mode: batch statistics with the variance floored at 1e-5, running
// statistics updated by EMA. Eval mode: (x - running_mean) / sqrt(running_var + 1e-5).
FeatureBatch batch_standardize_forward(const FeatureBatch& x, StandardizeStats& stats, Mode mode);

// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

struct Layer {
    LayerSpec spec;
    std::optional<Tensor> weight;
    std::optional<Tensor> bias;
    StandardizeStats stats;
};

struct ForwardResult {
    Tensor output;
    FeatureBatch feature;
};

class Network {
public:
    Network() = default;
    Network(std::vector<Layer> layers, std::size_t feature_tap_index);

    static Network init(const std::vector<LayerSpec>& specs, std::size_t feature_tap_index, std::uint64_t seed);

    // Copies share parameter storage; clone() does not.
    Network clone() const;
    // Stops recording graphs through the parameters (frozen teacher).
    void freeze();

    // Runs every layer. Shape errors name the failing layer.
    ForwardResult forward(const Tensor& x);
    // Runs layers [first, end) on x; used to evaluate the head on substituted features.
    Tensor forward_from(std::size_t first, const Tensor& x);
    Tensor forward_range(std::size_t first, std::size_t last, const Tensor& x);

    // Replaces the running statistics of every standardize layer with exact
    // population statistics over `inputs`, layer by layer in eval mode.
    void recalibrate_standardize(const Tensor& inputs, std::size_t chunk = 128);

    void set_mode(Mode m) { mode_ = m; }
    Mode mode() const { return mode_; }
    void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

    std::vector<Tensor> parameters() const;
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    std::vector<LayerSpec> specs() const;
    std::size_t feature_tap_index() const { return tap_; }

private:
    Tensor run_layer(std::size_t i, const Tensor& x);

    std::vector<Layer> layers_;
    std::size_t tap_ = 0;
    Mode mode_ = Mode::train;
    std::mt19937_64 dropout_rng_{0};
};

// 1x1 convolution adapting student channels to teacher channels.
class Projection {
public:
    Projection() = default;
    Projection(std::size_t student_channels, std::size_t teacher_channels, std::uint64_t seed);
    static Projection identity(std::size_t channels);

    FeatureBatch operator()(const FeatureBatch& student) const;
    std::vector<Tensor> parameters() const { return {weight_, bias_}; }
    std::size_t in_channels() const { return weight_.shape()[1]; }
    std::size_t out_channels() const { return weight_.shape()[0]; }

private:
    Tensor weight_;
    Tensor bias_;
};

class Sgd {
public:
    Sgd(std::vector<Tensor> params, double lr, double momentum);
    void zero_grad();
    void step();

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double lr_;
    double momentum_;
};

// Reference toy architectures: conv-relu-conv-standardize[tap]-pool-linear.
std::vector<LayerSpec> toy_architecture(std::size_t in_channels, std::size_t width, std::size_t classes);
inline constexpr std::size_t kToyFeatureTap = 3;

void save_weights(const Network& net, const std::filesystem::path& path);
std::string weights_to_json(const Network& net);
Network load_weights(const std::filesystem::path& path);
Network weights_from_json(const std::string& text);
// Also checks that the file describes exactly `expected`.
Network load_weights(const std::filesystem::path& path, const std::vector<LayerSpec>& expected);

}  // namespace akd
