#include "akd/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace akd {

using json = nlohmann::json;

void require_feature_batch(const Tensor& t, const char* what) {
    if (t.shape().rank() != 4) throw ShapeError(std::string(what) + " must be B x C x H x W, got " + t.shape().str());
}

const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::linear: return "linear";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::batch_standardize: return "batch_standardize";
        case LayerKind::dropout: return "dropout";
        case LayerKind::global_avg_pool: return "global_avg_pool";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
    for (auto k : {LayerKind::linear, LayerKind::conv2d, LayerKind::relu, LayerKind::batch_standardize,
                   LayerKind::dropout, LayerKind::global_avg_pool}) {
        if (s == to_string(k)) return k;
    }
    throw ConfigError("unknown layer kind '" + s + "'");
}

LayerSpec LayerSpec::linear(std::size_t in, std::size_t out) { return {LayerKind::linear, in, out, 1, 0, 1.0}; }
LayerSpec LayerSpec::conv(std::size_t in, std::size_t out, std::size_t kernel, int padding) {
    return {LayerKind::conv2d, in, out, kernel, padding, 1.0};
}
LayerSpec LayerSpec::relu() { return {LayerKind::relu, 0, 0, 1, 0, 1.0}; }
LayerSpec LayerSpec::standardize(std::size_t channels) { return {LayerKind::batch_standardize, channels, channels, 1, 0, 1.0}; }
LayerSpec LayerSpec::dropout(double keep) { return {LayerKind::dropout, 0, 0, 1, 0, keep}; }
LayerSpec LayerSpec::global_avg_pool() { return {LayerKind::global_avg_pool, 0, 0, 1, 0, 1.0}; }

void LayerSpec::validate() const {
    switch (kind) {
        case LayerKind::linear:
            if (in == 0 || out == 0) throw ConfigError("linear layer needs positive fan-in and fan-out");
            break;
        case LayerKind::conv2d:
            if (in == 0 || out == 0) throw ConfigError("conv2d layer needs positive channel counts");
            if (kernel != 1 && kernel != 3) throw ConfigError("conv2d kernel must be 1 or 3");
            if (padding < 0) throw ConfigError("conv2d padding must be non-negative");
            break;
        case LayerKind::batch_standardize:
            if (in == 0 || in != out) throw ConfigError("batch_standardize needs a positive channel count");
            break;
        case LayerKind::dropout:
            if (!(keep > 0.0 && keep <= 1.0)) throw ConfigError("dropout keep probability must be in (0, 1]");
            break;
        case LayerKind::relu:
        case LayerKind::global_avg_pool: break;
    }
}

std::vector<LayerSpec> toy_architecture(std::size_t in_channels, std::size_t width, std::size_t classes) {
    return {LayerSpec::conv(in_channels, width, 3, 1), LayerSpec::relu(), LayerSpec::conv(width, width, 3, 1),
            LayerSpec::standardize(width),           LayerSpec::global_avg_pool(),
            LayerSpec::linear(width, classes)};
}

// ---------------------------------------------------------------------------
// batch_standardize

FeatureBatch batch_standardize_forward(const FeatureBatch& x, StandardizeStats& stats, Mode mode) {
    const Shape& s = x.shape();
    if (s.rank() < 2) throw ShapeError("batch_standardize needs at least 2 dims, got " + s.str());
    const std::size_t B = s[0], C = s[1];
    const std::size_t inner = s.numel() / (B * C);
    if (stats.running_mean.empty()) {
        stats.running_mean.assign(C, 0.0);
        stats.running_var.assign(C, 1.0);
    }
    if (stats.running_mean.size() != C) {
        throw ShapeError("batch_standardize has " + std::to_string(stats.running_mean.size()) + " channels, input " + s.str());
    }
    const auto v = x.values();
    std::vector<double> y(v.size());
    auto at = [&](std::size_t b, std::size_t c, std::size_t j) { return (b * C + c) * inner + j; };

    if (mode == Mode::eval) {
        std::vector<double> inv(C);
        for (std::size_t c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(stats.running_var[c] + kStandardizeVarFloor);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t j = 0; j < inner; ++j) {
                    const std::size_t i = at(b, c, j);
                    y[i] = (v[i] - stats.running_mean[c]) * inv[c];
                }
        NodePtr xn = x.node_ptr();
        return Tensor::from_op("batch_standardize", s, std::move(y), {x}, [xn, inv, B, C, inner](Node& self) {
            auto& gx = xn->grad_buffer();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t j = 0; j < inner; ++j) {
                        const std::size_t i = (b * C + c) * inner + j;
                        gx[i] += self.grad[i] * inv[c];
                    }
        });
    }

    if (B < 2) throw UsageError("batch_standardize in train mode needs batch size >= 2");
    const double n = static_cast<double>(B * inner);
    std::vector<double> mu(C, 0.0), var(C, 0.0), inv(C);
    std::vector<bool> floored(C, false);
    for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < inner; ++j) acc += v[at(b, c, j)];
        mu[c] = acc / n;
        double sq = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < inner; ++j) {
                const double d = v[at(b, c, j)] - mu[c];
                sq += d * d;
            }
        var[c] = sq / n;
        floored[c] = var[c] < kStandardizeVarFloor;
        inv[c] = 1.0 / std::sqrt(floored[c] ? kStandardizeVarFloor : var[c]);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < inner; ++j) {
                const std::size_t i = at(b, c, j);
                y[i] = (v[i] - mu[c]) * inv[c];
            }
        stats.running_mean[c] = (1.0 - kStandardizeMomentum) * stats.running_mean[c] + kStandardizeMomentum * mu[c];
        stats.running_var[c] = (1.0 - kStandardizeMomentum) * stats.running_var[c] + kStandardizeMomentum * var[c];
    }
    NodePtr xn = x.node_ptr();
    return Tensor::from_op("batch_standardize", s, std::move(y), {x}, [xn, inv, floored, B, C, inner, n](Node& self) {
        auto& gx = xn->grad_buffer();
        const auto& g = self.grad;
        const auto& y = self.value;
        for (std::size_t c = 0; c < C; ++c) {
            double gm = 0.0, gy = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < inner; ++j) {
                    const std::size_t i = (b * C + c) * inner + j;
                    gm += g[i];
                    gy += g[i] * y[i];
                }
            gm /= n;
            gy = floored[c] ? 0.0 : gy / n;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < inner; ++j) {
                    const std::size_t i = (b * C + c) * inner + j;
                    gx[i] += inv[c] * (g[i] - gm - y[i] * gy);
                }
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.shape().rank() != 2 || logits.shape()[0] != labels.size()) {
        throw ShapeError("cross_entropy logits " + logits.shape().str() + " vs " + std::to_string(labels.size()) + " labels");
    }
    const std::size_t B = logits.shape()[0], K = logits.shape()[1];
    const auto z = logits.values();
    std::vector<double> prob(B * K);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const int label = labels[b];
        if (label < 0 || static_cast<std::size_t>(label) >= K) throw ShapeError("label out of range");
        double mx = z[b * K];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, z[b * K + k]);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(z[b * K + k] - mx);
        const double lz = mx + std::log(s);
        for (std::size_t k = 0; k < K; ++k) prob[b * K + k] = std::exp(z[b * K + k] - lz);
        loss -= z[b * K + static_cast<std::size_t>(label)] - lz;
    }
    loss /= static_cast<double>(B);
    NodePtr ln = logits.node_ptr();
    std::vector<int> lab(labels.begin(), labels.end());
    return Tensor::from_op("cross_entropy", Shape{1}, {loss}, {logits}, [ln, prob, lab, B, K](Node& self) {
        auto& g = ln->grad_buffer();
        const double s = self.grad[0] / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < K; ++k) {
                const double onehot = static_cast<std::size_t>(lab[b]) == k ? 1.0 : 0.0;
                g[b * K + k] += s * (prob[b * K + k] - onehot);
            }
    });
}

// ---------------------------------------------------------------------------
// Network

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Tensor uniform_weights(const Shape& s, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(s.numel());
    for (auto& w : v) w = -bound + 2.0 * bound * uniform01(rng);
    return Tensor(s, std::move(v), true);
}

}  // namespace

Network::Network(std::vector<Layer> layers, std::size_t feature_tap_index) : layers_(std::move(layers)), tap_(feature_tap_index) {
    if (layers_.empty()) throw ConfigError("network has no layers");
    if (tap_ >= layers_.size()) throw ConfigError("feature tap index " + std::to_string(tap_) + " out of range");
    for (const auto& l : layers_) l.spec.validate();
}

Network Network::init(const std::vector<LayerSpec>& specs, std::size_t feature_tap_index, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    for (const auto& spec : specs) {
        spec.validate();
        Layer l{spec, std::nullopt, std::nullopt, {}};
        switch (spec.kind) {
            case LayerKind::linear:
                l.weight = uniform_weights(Shape{spec.in, spec.out}, spec.in, rng);
                l.bias = Tensor::zeros(Shape{spec.out}, true);
                break;
            case LayerKind::conv2d:
                l.weight = uniform_weights(Shape{spec.out, spec.in, spec.kernel, spec.kernel}, spec.in * spec.kernel * spec.kernel, rng);
                l.bias = Tensor::zeros(Shape{spec.out, 1, 1}, true);
                break;
            case LayerKind::batch_standardize:
                l.stats.running_mean.assign(spec.in, 0.0);
                l.stats.running_var.assign(spec.in, 1.0);
                break;
            default: break;
        }
        layers.push_back(std::move(l));
    }
    return Network(std::move(layers), feature_tap_index);
}

Network Network::clone() const {
    Network out = *this;
    for (auto& l : out.layers_) {
        if (l.weight) l.weight = l.weight->clone(l.weight->requires_grad());
        if (l.bias) l.bias = l.bias->clone(l.bias->requires_grad());
    }
    return out;
}

void Network::freeze() {
    for (auto& l : layers_) {
        if (l.weight) l.weight->node().requires_grad = false;
        if (l.bias) l.bias->node().requires_grad = false;
    }
}

Tensor Network::run_layer(std::size_t i, const Tensor& x) {
    Layer& l = layers_[i];
    switch (l.spec.kind) {
        case LayerKind::linear:
            if (x.shape().rank() != 2) throw ShapeError("linear expects B x features, got " + x.shape().str());
            return add(matmul(x, *l.weight), *l.bias);
        case LayerKind::conv2d: return add(conv2d(x, *l.weight, 1, l.spec.padding), *l.bias);
        case LayerKind::relu: return relu(x);
        case LayerKind::batch_standardize:
            if (x.shape().rank() < 2 || x.shape()[1] != l.spec.in) {
                throw ShapeError("expected " + std::to_string(l.spec.in) + " channels, got " + x.shape().str());
            }
            return batch_standardize_forward(x, l.stats, mode_);
        case LayerKind::dropout: {
            if (mode_ == Mode::eval || l.spec.keep == 1.0) return x;
            std::vector<double> mask(x.numel());
            for (auto& m : mask) m = uniform01(dropout_rng_) < l.spec.keep ? 1.0 / l.spec.keep : 0.0;
            return mul(x, Tensor(x.shape(), std::move(mask)));
        }
        case LayerKind::global_avg_pool: {
            if (x.shape().rank() != 4) throw ShapeError("global_avg_pool expects B x C x H x W, got " + x.shape().str());
            const std::size_t B = x.shape()[0], C = x.shape()[1];
            return reshape(mean(x, {2, 3}), Shape{B, C});
        }
    }
    return x;
}

ForwardResult Network::forward(const Tensor& x) {
    Tensor h = x;
    std::optional<Tensor> feature;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            h = run_layer(i, h);
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(i) + " (" + to_string(layers_[i].spec.kind) + "): " + e.what());
        }
        if (i == tap_) feature = h;
    }
    return {h, *feature};
}

Tensor Network::forward_from(std::size_t first, const Tensor& x) { return forward_range(first, layers_.size(), x); }

Tensor Network::forward_range(std::size_t first, std::size_t last, const Tensor& x) {
    if (first > last || last > layers_.size()) throw UsageError("layer range out of bounds");
    Tensor h = x;
    for (std::size_t i = first; i < last; ++i) {
        try {
            h = run_layer(i, h);
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(i) + " (" + to_string(layers_[i].spec.kind) + "): " + e.what());
        }
    }
    return h;
}

void Network::recalibrate_standardize(const Tensor& inputs, std::size_t chunk) {
    if (chunk == 0 || inputs.shape().rank() < 1) throw UsageError("recalibration needs a non-empty chunk size");
    const Mode saved = mode_;
    mode_ = Mode::eval;
    const std::size_t n = inputs.shape()[0];
    const std::size_t row = inputs.numel() / n;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (layers_[l].spec.kind != LayerKind::batch_standardize) continue;
        const std::size_t C = layers_[l].spec.in;
        std::vector<std::vector<double>> per_channel(C);
        for (std::size_t start = 0; start < n; start += chunk) {
            const std::size_t len = std::min(chunk, n - start);
            std::vector<std::size_t> dims = inputs.shape().dims();
            dims[0] = len;
            std::vector<double> v(inputs.values().begin() + static_cast<std::ptrdiff_t>(start * row),
                                  inputs.values().begin() + static_cast<std::ptrdiff_t>((start + len) * row));
            const Tensor h = forward_range(0, l, Tensor(Shape(dims), std::move(v)));
            const std::size_t plane = h.numel() / (len * C);
            for (std::size_t b = 0; b < len; ++b)
                for (std::size_t c = 0; c < C; ++c) {
                    const auto src = h.values().subspan((b * C + c) * plane, plane);
                    per_channel[c].insert(per_channel[c].end(), src.begin(), src.end());
                }
        }
        auto& st = layers_[l].stats;
        st.running_mean.assign(C, 0.0);
        st.running_var.assign(C, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
            const auto& xs = per_channel[c];
            double mu = 0.0;
            for (double x : xs) mu += x;
            mu /= static_cast<double>(xs.size());
            double ss = 0.0;
            for (double x : xs) ss += (x - mu) * (x - mu);
            st.running_mean[c] = mu;
            st.running_var[c] = ss / static_cast<double>(xs.size());
        }
    }
    mode_ = saved;
}

std::vector<Tensor> Network::parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
        if (l.weight) out.push_back(*l.weight);
        if (l.bias) out.push_back(*l.bias);
    }
    return out;
}

std::vector<LayerSpec> Network::specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l.spec);
    return out;
}

// ---------------------------------------------------------------------------
// Projection

Projection::Projection(std::size_t student_channels, std::size_t teacher_channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    weight_ = uniform_weights(Shape{teacher_channels, student_channels, 1, 1}, student_channels, rng);
    bias_ = Tensor::zeros(Shape{teacher_channels, 1, 1}, true);
}

Projection Projection::identity(std::size_t channels) {
    Projection p;
    std::vector<double> w(channels * channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) w[c * channels + c] = 1.0;
    p.weight_ = Tensor(Shape{channels, channels, 1, 1}, std::move(w), true);
    p.bias_ = Tensor::zeros(Shape{channels, 1, 1}, true);
    return p;
}

FeatureBatch Projection::operator()(const FeatureBatch& student) const {
    require_feature_batch(student, "projection input");
    return add(conv2d(student, weight_, 1, 0), bias_);
}

// ---------------------------------------------------------------------------
// SGD with momentum

Sgd::Sgd(std::vector<Tensor> params, double lr, double momentum) : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Sgd::step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        if (!p.has_grad()) continue;
        auto vals = p.mutable_values();
        const auto g = p.grad();
        auto& v = velocity_[k];
        for (std::size_t i = 0; i < vals.size(); ++i) {
            v[i] = momentum_ * v[i] + g[i];
            vals[i] -= lr_ * v[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Weight files

std::string weights_to_json(const Network& net) {
    json layers = json::array();
    json stats = json::object();
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        const auto& l = net.layers()[i];
        json e;
        e["kind"] = to_string(l.spec.kind);
        if (l.weight) {
            e["shape"] = l.weight->shape().dims();
            e["values"] = std::vector<double>(l.weight->values().begin(), l.weight->values().end());
            e["bias"] = std::vector<double>(l.bias->values().begin(), l.bias->values().end());
        } else {
            e["shape"] = json::array();
            e["values"] = json::array();
        }
        if (l.spec.kind == LayerKind::conv2d) e["padding"] = l.spec.padding;
        if (l.spec.kind == LayerKind::dropout) e["keep"] = l.spec.keep;
        if (l.spec.kind == LayerKind::batch_standardize) {
            e["channels"] = l.spec.in;
            stats[std::to_string(i)] = {{"mean", l.stats.running_mean}, {"var", l.stats.running_var}};
        }
        layers.push_back(std::move(e));
    }
    json doc;
    doc["format_version"] = 1;
    doc["layers"] = std::move(layers);
    doc["feature_tap_index"] = net.feature_tap_index();
    doc["running_stats"] = std::move(stats);
    return doc.dump(1) + "\n";
}

void save_weights(const Network& net, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UsageError("cannot write weight file " + path.string());
    os << weights_to_json(net);
    if (!os) throw UsageError("failed writing weight file " + path.string());
}

namespace {

const json& require_key(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw FormatError(where.empty() ? key : where + "." + key, "missing entry");
    return obj.at(key);
}

std::vector<double> read_doubles(const json& j, const std::string& where) {
    if (!j.is_array()) throw FormatError(where, "expected an array of numbers");
    std::vector<double> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_number()) throw FormatError(where, "non-numeric entry");
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace

Network weights_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError("<document>", e.what());
    }
    const auto& ver = require_key(doc, "format_version", "");
    if (!ver.is_number_integer() || ver.get<int>() != 1) throw FormatError("format_version", "unsupported version");
    const auto& jl = require_key(doc, "layers", "");
    if (!jl.is_array() || jl.empty()) throw FormatError("layers", "expected a non-empty array");
    const auto& jtap = require_key(doc, "feature_tap_index", "");
    if (!jtap.is_number_unsigned() || jtap.get<std::size_t>() >= jl.size()) {
        throw FormatError("feature_tap_index", "does not name a layer");
    }
    const auto& jstats = require_key(doc, "running_stats", "");

    std::vector<Layer> layers;
    for (std::size_t i = 0; i < jl.size(); ++i) {
        const std::string where = "layers[" + std::to_string(i) + "]";
        const auto& e = jl[i];
        LayerKind kind;
        try {
            kind = layer_kind_from_string(require_key(e, "kind", where).get<std::string>());
        } catch (const ConfigError& err) {
            throw FormatError(where + ".kind", err.what());
        } catch (const json::exception&) {
            throw FormatError(where + ".kind", "expected a string");
        }
        std::vector<std::size_t> dims;
        const auto& js = require_key(e, "shape", where);
        if (!js.is_array()) throw FormatError(where + ".shape", "expected an array");
        for (const auto& d : js) {
            if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) throw FormatError(where + ".shape", "extents must be positive integers");
            dims.push_back(d.get<std::size_t>());
        }
        auto values = read_doubles(require_key(e, "values", where), where + ".values");
        std::size_t count = 1;
        for (auto d : dims) count *= d;
        if (dims.empty()) count = 0;
        if (values.size() != count) throw FormatError(where + ".values", "length does not match shape manifest");

        Layer l{};
        l.spec.kind = kind;
        switch (kind) {
            case LayerKind::linear:
            case LayerKind::conv2d: {
                const std::size_t rank = kind == LayerKind::linear ? 2 : 4;
                if (dims.size() != rank) throw FormatError(where + ".shape", "wrong rank for " + std::string(to_string(kind)));
                auto bias = read_doubles(require_key(e, "bias", where), where + ".bias");
                if (kind == LayerKind::linear) {
                    l.spec = LayerSpec::linear(dims[0], dims[1]);
                    if (bias.size() != dims[1]) throw FormatError(where + ".bias", "length does not match fan-out");
                    l.bias = Tensor(Shape{dims[1]}, std::move(bias), true);
                } else {
                    if (dims[2] != dims[3]) throw FormatError(where + ".shape", "kernel must be square");
                    const auto& jp = require_key(e, "padding", where);
                    if (!jp.is_number_integer()) throw FormatError(where + ".padding", "expected an integer");
                    l.spec = LayerSpec::conv(dims[1], dims[0], dims[2], jp.get<int>());
                    if (bias.size() != dims[0]) throw FormatError(where + ".bias", "length does not match output channels");
                    l.bias = Tensor(Shape{dims[0], 1, 1}, std::move(bias), true);
                }
                l.weight = Tensor(Shape(dims), std::move(values), true);
                break;
            }
            case LayerKind::batch_standardize: {
                if (!dims.empty()) throw FormatError(where + ".shape", "batch_standardize has no parameters");
                const auto& jc = require_key(e, "channels", where);
                if (!jc.is_number_unsigned()) throw FormatError(where + ".channels", "expected a positive integer");
                l.spec = LayerSpec::standardize(jc.get<std::size_t>());
                const std::string key = std::to_string(i);
                const auto& st = require_key(jstats, key, "running_stats");
                l.stats.running_mean = read_doubles(require_key(st, "mean", "running_stats." + key), "running_stats." + key + ".mean");
                l.stats.running_var = read_doubles(require_key(st, "var", "running_stats." + key), "running_stats." + key + ".var");
                if (l.stats.running_mean.size() != l.spec.in || l.stats.running_var.size() != l.spec.in) {
                    throw FormatError("running_stats." + key, "length does not match channel count");
                }
                break;
            }
            case LayerKind::dropout: {
                if (!dims.empty()) throw FormatError(where + ".shape", "dropout has no parameters");
                const auto& jk = require_key(e, "keep", where);
                if (!jk.is_number()) throw FormatError(where + ".keep", "expected a number");
                l.spec = LayerSpec::dropout(jk.get<double>());
                break;
            }
            case LayerKind::relu:
            case LayerKind::global_avg_pool:
                if (!dims.empty()) throw FormatError(where + ".shape", std::string(to_string(kind)) + " has no parameters");
                break;
        }
        try {
            l.spec.validate();
        } catch (const ConfigError& err) {
            throw FormatError(where, err.what());
        }
        layers.push_back(std::move(l));
    }
    Network net(std::move(layers), jtap.get<std::size_t>());
    net.set_mode(Mode::eval);
    return net;
}

Network load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(path.string(), "cannot open weight file");
    std::stringstream ss;
    ss << is.rdbuf();
    return weights_from_json(ss.str());
}

Network load_weights(const std::filesystem::path& path, const std::vector<LayerSpec>& expected) {
    Network net = load_weights(path);
    const auto got = net.specs();
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const std::string where = "layers[" + std::to_string(i) + "]";
        if (i >= got.size()) throw FormatError(where, "missing layer entry (" + std::string(to_string(expected[i].kind)) + ")");
        if (!(got[i] == expected[i])) throw FormatError(where, "layer does not match the expected architecture");
    }
    if (got.size() != expected.size()) {
        throw FormatError("layers[" + std::to_string(expected.size()) + "]", "unexpected extra layer");
    }
    return net;
}

}  // namespace akd
