#include "akd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace akd {

// ---------------------------------------------------------------------------
// Shape

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    for (std::size_t d : dims_) {
        if (d == 0) throw ShapeError("zero extent in shape " + str());
    }
}

std::size_t Shape::numel() const {
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Node / Tensor

void Node::accumulate(std::span<const double> g) {
    auto& buf = grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

std::vector<double>& Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor::Tensor() : Tensor(Shape{1}, {0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) : node_(std::make_shared<Node>()) {
    if (shape.numel() != values.size()) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape.str());
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& s, bool rg) { return Tensor(s, std::vector<double>(s.numel(), 0.0), rg); }
Tensor Tensor::ones(const Shape& s, bool rg) { return Tensor(s, std::vector<double>(s.numel(), 1.0), rg); }
Tensor Tensor::full(const Shape& s, double v, bool rg) { return Tensor(s, std::vector<double>(s.numel(), v), rg); }
Tensor Tensor::scalar(double v, bool rg) { return Tensor(Shape{1}, {v}, rg); }

Tensor Tensor::from_op(std::string op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                       BackwardFn backward) {
    Tensor out(std::move(shape), std::move(values), false);
    out.node_->op = std::move(op);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        out.node_->requires_grad = true;
        for (const auto& in : inputs) out.node_->inputs.push_back(in.node_);
        out.node_->backward = std::move(backward);
    }
    return out;
}

double Tensor::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape().str());
    return node_->value[0];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

Tensor Tensor::clone(bool requires_grad) const { return Tensor(node_->shape, node_->value, requires_grad); }

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(const Tensor& root) : root_(const_cast<Node*>(&root.node())) {
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    if (!root_->requires_grad) return;
    stack.emplace_back(root_, 0);
    seen.insert(root_);
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node* in = n->inputs[next++].get();
            if (in->requires_grad && seen.insert(in).second) stack.emplace_back(in, 0);
        } else {
            order_.push_back(n);
            stack.pop_back();
        }
    }
}

void Tape::backward() {
    if (root_->value.size() != 1) throw UsageError("backward() needs a scalar loss, got " + root_->shape.str());
    if (root_->backward_done) throw UsageError("backward() already ran on this graph; rebuild it with a new forward pass");
    root_->backward_done = true;
    if (!root_->requires_grad) return;
    root_->grad_buffer()[0] += 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

void backward(const Tensor& loss) { Tape(loss).backward(); }

// ---------------------------------------------------------------------------
// Broadcasting helpers

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.rank(), b.rank());
    std::vector<std::size_t> out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.rank() ? 1 : a[i - (r - a.rank())];
        const std::size_t db = i < r - b.rank() ? 1 : b[i - (r - b.rank())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("shapes " + a.str() + " and " + b.str() + " are not broadcast-compatible");
        }
        out[i] = std::max(da, db);
    }
    return Shape(out);
}

namespace {

// Flat index into `src` for every element of `dst` (src broadcast to dst).
std::vector<std::size_t> broadcast_map(const Shape& src, const Shape& dst) {
    const std::size_t r = dst.rank();
    const std::size_t off = r - src.rank();
    std::vector<std::size_t> stride(r, 0);
    std::size_t s = 1;
    for (std::size_t i = src.rank(); i-- > 0;) {
        stride[i + off] = src[i] == 1 ? 0 : s;
        s *= src[i];
    }
    std::vector<std::size_t> map(dst.numel());
    std::vector<std::size_t> idx(r, 0);
    std::size_t flat = 0;
    for (std::size_t n = 0; n < map.size(); ++n) {
        map[n] = flat;
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < dst[d]) {
                flat += stride[d];
                break;
            }
            flat -= stride[d] * (dst[d] - 1);
            idx[d] = 0;
        }
    }
    return map;
}

void require_finite(std::span<const double> v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) throw DomainError(std::string(op) + " produced a non-finite value");
    }
}

const char* kind_name(ElementwiseKind k) {
    switch (k) {
        case ElementwiseKind::add: return "add";
        case ElementwiseKind::sub: return "sub";
        case ElementwiseKind::mul: return "mul";
        case ElementwiseKind::div: return "div";
        case ElementwiseKind::scale: return "scale";
        case ElementwiseKind::relu: return "relu";
        case ElementwiseKind::exp: return "exp";
        case ElementwiseKind::log: return "log";
        case ElementwiseKind::square: return "square";
    }
    return "?";
}

Tensor binary(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const std::size_t n = out_shape.numel();
    const bool a_full = a.shape() == out_shape;
    const bool b_full = b.shape() == out_shape;
    auto amap = std::make_shared<std::vector<std::size_t>>(a_full ? std::vector<std::size_t>{} : broadcast_map(a.shape(), out_shape));
    auto bmap = std::make_shared<std::vector<std::size_t>>(b_full ? std::vector<std::size_t>{} : broadcast_map(b.shape(), out_shape));
    auto ai = [amap](std::size_t i) { return amap->empty() ? i : (*amap)[i]; };
    auto bi = [bmap](std::size_t i) { return bmap->empty() ? i : (*bmap)[i]; };

    const auto av = a.values();
    const auto bv = b.values();
    if (kind == ElementwiseKind::div) {
        for (double d : bv) {
            if (std::abs(d) < 1e-300) throw DomainError("division by an element of magnitude < 1e-300");
        }
    }
    std::vector<double> out(n);
    switch (kind) {
        case ElementwiseKind::add: for (std::size_t i = 0; i < n; ++i) out[i] = av[ai(i)] + bv[bi(i)]; break;
        case ElementwiseKind::sub: for (std::size_t i = 0; i < n; ++i) out[i] = av[ai(i)] - bv[bi(i)]; break;
        case ElementwiseKind::mul: for (std::size_t i = 0; i < n; ++i) out[i] = av[ai(i)] * bv[bi(i)]; break;
        case ElementwiseKind::div: for (std::size_t i = 0; i < n; ++i) out[i] = av[ai(i)] / bv[bi(i)]; break;
        default: throw UsageError(std::string(kind_name(kind)) + " is not a binary op");
    }
    require_finite(out, kind_name(kind));

    NodePtr an = a.node_ptr();
    NodePtr bn = b.node_ptr();
    return Tensor::from_op(kind_name(kind), out_shape, std::move(out), {a, b},
                           [kind, an, bn, ai, bi](Node& self) {
                               const auto& g = self.grad;
                               const std::size_t n = g.size();
                               if (an->requires_grad) {
                                   auto& ga = an->grad_buffer();
                                   switch (kind) {
                                       case ElementwiseKind::add:
                                       case ElementwiseKind::sub:
                                           for (std::size_t i = 0; i < n; ++i) ga[ai(i)] += g[i];
                                           break;
                                       case ElementwiseKind::mul:
                                           for (std::size_t i = 0; i < n; ++i) ga[ai(i)] += g[i] * bn->value[bi(i)];
                                           break;
                                       case ElementwiseKind::div:
                                           for (std::size_t i = 0; i < n; ++i) ga[ai(i)] += g[i] / bn->value[bi(i)];
                                           break;
                                       default: break;
                                   }
                               }
                               if (bn->requires_grad) {
                                   auto& gb = bn->grad_buffer();
                                   switch (kind) {
                                       case ElementwiseKind::add:
                                           for (std::size_t i = 0; i < n; ++i) gb[bi(i)] += g[i];
                                           break;
                                       case ElementwiseKind::sub:
                                           for (std::size_t i = 0; i < n; ++i) gb[bi(i)] -= g[i];
                                           break;
                                       case ElementwiseKind::mul:
                                           for (std::size_t i = 0; i < n; ++i) gb[bi(i)] += g[i] * an->value[ai(i)];
                                           break;
                                       case ElementwiseKind::div:
                                           for (std::size_t i = 0; i < n; ++i) {
                                               const double d = bn->value[bi(i)];
                                               gb[bi(i)] -= g[i] * an->value[ai(i)] / (d * d);
                                           }
                                           break;
                                       default: break;
                                   }
                               }
                           });
}

Tensor unary(ElementwiseKind kind, const Tensor& a, double s) {
    const auto av = a.values();
    const std::size_t n = av.size();
    std::vector<double> out(n);
    switch (kind) {
        case ElementwiseKind::scale: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * s; break;
        case ElementwiseKind::relu: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0; break;
        case ElementwiseKind::exp: for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(av[i]); break;
        case ElementwiseKind::log:
            for (std::size_t i = 0; i < n; ++i) {
                if (!(av[i] > 0.0)) throw DomainError("log of a non-positive element");
                out[i] = std::log(av[i]);
            }
            break;
        case ElementwiseKind::square: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * av[i]; break;
        default: throw UsageError(std::string(kind_name(kind)) + " is not a unary op");
    }
    require_finite(out, kind_name(kind));

    NodePtr an = a.node_ptr();
    return Tensor::from_op(kind_name(kind), a.shape(), std::move(out), {a}, [kind, an, s](Node& self) {
        const auto& g = self.grad;
        auto& ga = an->grad_buffer();
        const auto& x = an->value;
        const std::size_t n = g.size();
        switch (kind) {
            case ElementwiseKind::scale: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * s; break;
            case ElementwiseKind::relu: for (std::size_t i = 0; i < n; ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0; break;
            case ElementwiseKind::exp: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * self.value[i]; break;
            case ElementwiseKind::log: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / x[i]; break;
            case ElementwiseKind::square: for (std::size_t i = 0; i < n; ++i) ga[i] += 2.0 * x[i] * g[i]; break;
            default: break;
        }
    });
}

}  // namespace

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
    switch (kind) {
        case ElementwiseKind::add:
        case ElementwiseKind::sub:
        case ElementwiseKind::mul:
        case ElementwiseKind::div: return binary(kind, a, b);
        case ElementwiseKind::scale: return unary(kind, a, b.item());
        default: return unary(kind, a, 0.0);
    }
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b) {
    switch (kind) {
        case ElementwiseKind::add:
        case ElementwiseKind::sub:
        case ElementwiseKind::mul:
        case ElementwiseKind::div: return binary(kind, a, Tensor::scalar(b));
        default: return unary(kind, a, b);
    }
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(ElementwiseKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(ElementwiseKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(ElementwiseKind::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(ElementwiseKind::div, a, b); }
Tensor add(const Tensor& a, double b) { return binary(ElementwiseKind::add, a, Tensor::scalar(b)); }
Tensor scale(const Tensor& a, double s) { return unary(ElementwiseKind::scale, a, s); }
Tensor relu(const Tensor& a) { return unary(ElementwiseKind::relu, a, 0.0); }
Tensor exp(const Tensor& a) { return unary(ElementwiseKind::exp, a, 0.0); }
Tensor log(const Tensor& a) { return unary(ElementwiseKind::log, a, 0.0); }
Tensor square(const Tensor& a) { return unary(ElementwiseKind::square, a, 0.0); }

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().rank() != 2 || b.shape().rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul of " + a.shape().str() + " by " + b.shape().str());
    }
    const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
    const auto A = a.values();
    const auto B = b.values();
    std::vector<double> C(M * N, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = A[i * K + k];
            for (std::size_t j = 0; j < N; ++j) C[i * N + j] += aik * B[k * N + j];
        }
    }
    NodePtr an = a.node_ptr(), bn = b.node_ptr();
    return Tensor::from_op("matmul", Shape{M, N}, std::move(C), {a, b}, [an, bn, M, K, N](Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t k = 0; k < K; ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < N; ++j) acc += g[i * N + j] * bn->value[k * N + j];
                    ga[i * K + k] += acc;
                }
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t k = 0; k < K; ++k) {
                    const double aik = an->value[i * K + k];
                    for (std::size_t j = 0; j < N; ++j) gb[k * N + j] += aik * g[i * N + j];
                }
        }
    });
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, stride 1)

namespace {

struct ConvGeom {
    std::size_t B, Cin, H, W, Cout, K, Ho, Wo;
    long pad;
};

// Calls fn(out_offset, in_offset, count) for each contiguous run of output
// columns touched by kernel tap (ky, kx) at output row oy.
template <class Fn>
void conv_rows(const ConvGeom& g, std::size_t ky, std::size_t kx, Fn&& fn) {
    const long kxl = static_cast<long>(kx), kyl = static_cast<long>(ky);
    const long ox_begin = std::max(0L, g.pad - kxl);
    const long ox_end = std::min(static_cast<long>(g.Wo), static_cast<long>(g.W) + g.pad - kxl);
    if (ox_end <= ox_begin) return;
    for (std::size_t oy = 0; oy < g.Ho; ++oy) {
        const long iy = static_cast<long>(oy) + kyl - g.pad;
        if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
        fn(oy * g.Wo + static_cast<std::size_t>(ox_begin),
           static_cast<std::size_t>(iy) * g.W + static_cast<std::size_t>(ox_begin + kxl - g.pad),
           static_cast<std::size_t>(ox_end - ox_begin));
    }
}

// Unfolds one image into rows (ci, ky, kx) x columns (output position).
void im2col(const ConvGeom& g, const double* x, double* col) {
    const std::size_t in_plane = g.H * g.W, out_plane = g.Ho * g.Wo;
    std::fill(col, col + g.Cin * g.K * g.K * out_plane, 0.0);
    for (std::size_t ci = 0; ci < g.Cin; ++ci)
        for (std::size_t ky = 0; ky < g.K; ++ky)
            for (std::size_t kx = 0; kx < g.K; ++kx) {
                double* row = col + ((ci * g.K + ky) * g.K + kx) * out_plane;
                const double* xin = x + ci * in_plane;
                conv_rows(g, ky, kx, [&](std::size_t oo, std::size_t io, std::size_t cnt) {
                    std::copy_n(xin + io, cnt, row + oo);
                });
            }
}

void col2im_add(const ConvGeom& g, const double* col, double* gx) {
    const std::size_t in_plane = g.H * g.W, out_plane = g.Ho * g.Wo;
    for (std::size_t ci = 0; ci < g.Cin; ++ci)
        for (std::size_t ky = 0; ky < g.K; ++ky)
            for (std::size_t kx = 0; kx < g.K; ++kx) {
                const double* row = col + ((ci * g.K + ky) * g.K + kx) * out_plane;
                double* gxi = gx + ci * in_plane;
                conv_rows(g, ky, kx, [&](std::size_t oo, std::size_t io, std::size_t cnt) {
                    for (std::size_t t = 0; t < cnt; ++t) gxi[io + t] += row[oo + t];
                });
            }
}

// Four interleaved partial sums; fixed order, so results are reproducible.
double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    if (is.rank() != 4 || ks.rank() != 4) throw ShapeError("conv2d expects 4-d input and kernel");
    if (stride != 1) throw ShapeError("conv2d supports stride 1 only, got " + std::to_string(stride));
    if (padding < 0) throw ShapeError("conv2d padding must be non-negative");
    if (ks[1] != is[1]) throw ShapeError("conv2d channel mismatch: input " + is.str() + ", kernel " + ks.str());
    if (ks[2] != ks[3] || (ks[2] != 1 && ks[2] != 3)) throw ShapeError("conv2d kernel must be 1x1 or 3x3, got " + ks.str());
    const long ho = static_cast<long>(is[2]) + 2L * padding - static_cast<long>(ks[2]) + 1;
    const long wo = static_cast<long>(is[3]) + 2L * padding - static_cast<long>(ks[3]) + 1;
    if (ho < 1 || wo < 1) throw ShapeError("conv2d output would be empty for input " + is.str());

    const ConvGeom g{is[0], is[1], is[2], is[3], ks[0], ks[2], static_cast<std::size_t>(ho), static_cast<std::size_t>(wo), padding};
    const auto x = input.values();
    const auto w = kernel.values();
    const std::size_t in_plane = g.H * g.W, out_plane = g.Ho * g.Wo, rows = g.Cin * g.K * g.K;
    std::vector<double> out(g.B * g.Cout * out_plane, 0.0);
    std::vector<double> col(rows * out_plane);
    for (std::size_t b = 0; b < g.B; ++b) {
        im2col(g, x.data() + b * g.Cin * in_plane, col.data());
        // Row-outer order keeps one unfolded row hot across all output channels.
        for (std::size_t r = 0; r < rows; ++r) {
            const double* c = col.data() + r * out_plane;
            for (std::size_t co = 0; co < g.Cout; ++co) {
                const double wv = w[co * rows + r];
                double* o = out.data() + (b * g.Cout + co) * out_plane;
                for (std::size_t p = 0; p < out_plane; ++p) o[p] += wv * c[p];
            }
        }
    }

    NodePtr xn = input.node_ptr(), wn = kernel.node_ptr();
    return Tensor::from_op("conv2d", Shape{g.B, g.Cout, g.Ho, g.Wo}, std::move(out), {input, kernel},
                           [xn, wn, g, in_plane, out_plane, rows](Node& self) {
                               const double* gout = self.grad.data();
                               double* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
                               double* gw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
                               const double* w = wn->value.data();
                               std::vector<double> col(rows * out_plane);
                               for (std::size_t b = 0; b < g.B; ++b) {
                                   const double* go = gout + b * g.Cout * out_plane;
                                   if (gw) {
                                       im2col(g, xn->value.data() + b * g.Cin * in_plane, col.data());
                                       for (std::size_t r = 0; r < rows; ++r)
                                           for (std::size_t co = 0; co < g.Cout; ++co)
                                               gw[co * rows + r] += dot(go + co * out_plane, col.data() + r * out_plane, out_plane);
                                   }
                                   if (gx) {
                                       std::fill(col.begin(), col.end(), 0.0);
                                       for (std::size_t r = 0; r < rows; ++r)
                                           for (std::size_t co = 0; co < g.Cout; ++co) {
                                               const double wv = w[co * rows + r];
                                               double* c = col.data() + r * out_plane;
                                               const double* gr = go + co * out_plane;
                                               for (std::size_t p = 0; p < out_plane; ++p) c[p] += wv * gr[p];
                                           }
                                       col2im_add(g, col.data(), gx + b * g.Cin * in_plane);
                                   }
                               }
                           });
}

Tensor reshape(const Tensor& a, const Shape& s) {
    if (s.numel() != a.numel()) throw ShapeError("cannot reshape " + a.shape().str() + " to " + s.str());
    NodePtr an = a.node_ptr();
    std::vector<double> v(a.values().begin(), a.values().end());
    return Tensor::from_op("reshape", s, std::move(v), {a}, [an](Node& self) { an->accumulate(self.grad); });
}

// ---------------------------------------------------------------------------
// Axis groupings, softmax, reductions

AxisGrouping group_axes(const Shape& shape, const Axes& axes_in) {
    Axes axes = axes_in;
    if (axes.empty()) {
        axes.resize(shape.rank());
        std::iota(axes.begin(), axes.end(), std::size_t{0});
    }
    std::vector<bool> reduced(shape.rank(), false);
    for (std::size_t a : axes) {
        if (a >= shape.rank()) throw ShapeError("axis " + std::to_string(a) + " out of range for " + shape.str());
        reduced[a] = true;
    }
    std::vector<std::size_t> rdims(shape.dims());
    std::size_t gsize = 1;
    for (std::size_t d = 0; d < shape.rank(); ++d) {
        if (reduced[d]) {
            gsize *= rdims[d];
            rdims[d] = 1;
        }
    }
    AxisGrouping out{Shape(rdims), broadcast_map(Shape(rdims), shape), gsize};
    return out;
}

namespace {

struct SoftmaxParts {
    AxisGrouping grouping;
    std::vector<double> shifted;  // x - max over group
    std::vector<double> log_z;    // per group log-sum-exp of shifted
};

SoftmaxParts softmax_parts(const Tensor& x, const Axes& axes) {
    if (axes.empty()) throw UsageError("softmax needs at least one axis");
    SoftmaxParts p{group_axes(x.shape(), axes), {}, {}};
    const auto v = x.values();
    const std::size_t groups = p.grouping.reduced.numel();
    std::vector<double> mx(groups, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < v.size(); ++i) mx[p.grouping.group_of[i]] = std::max(mx[p.grouping.group_of[i]], v[i]);
    p.shifted.resize(v.size());
    std::vector<double> z(groups, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        p.shifted[i] = v[i] - mx[p.grouping.group_of[i]];
        z[p.grouping.group_of[i]] += std::exp(p.shifted[i]);
    }
    p.log_z.resize(groups);
    for (std::size_t k = 0; k < groups; ++k) p.log_z[k] = std::log(z[k]);
    return p;
}

}  // namespace

Tensor softmax(const Tensor& x, const Axes& axes) {
    auto p = softmax_parts(x, axes);
    std::vector<double> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(p.shifted[i] - p.log_z[p.grouping.group_of[i]]);
    NodePtr xn = x.node_ptr();
    auto group_of = std::make_shared<std::vector<std::size_t>>(std::move(p.grouping.group_of));
    const std::size_t groups = p.log_z.size();
    return Tensor::from_op("softmax", x.shape(), std::move(y), {x}, [xn, group_of, groups](Node& self) {
        const auto& g = self.grad;
        const auto& y = self.value;
        std::vector<double> dot(groups, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) dot[(*group_of)[i]] += g[i] * y[i];
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += y[i] * (g[i] - dot[(*group_of)[i]]);
    });
}

Tensor log_softmax(const Tensor& x, const Axes& axes) {
    auto p = softmax_parts(x, axes);
    std::vector<double> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = p.shifted[i] - p.log_z[p.grouping.group_of[i]];
    NodePtr xn = x.node_ptr();
    auto group_of = std::make_shared<std::vector<std::size_t>>(std::move(p.grouping.group_of));
    const std::size_t groups = p.log_z.size();
    return Tensor::from_op("log_softmax", x.shape(), std::move(y), {x}, [xn, group_of, groups](Node& self) {
        const auto& g = self.grad;
        std::vector<double> gsum(groups, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) gsum[(*group_of)[i]] += g[i];
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] - std::exp(self.value[i]) * gsum[(*group_of)[i]];
    });
}

Tensor reduce(const Tensor& x, ReduceKind kind, const Axes& axes) {
    auto grouping = std::make_shared<AxisGrouping>(group_axes(x.shape(), axes));
    const auto v = x.values();
    const std::size_t groups = grouping->reduced.numel();
    const double n = static_cast<double>(grouping->group_size);
    std::vector<double> out(groups, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) out[grouping->group_of[i]] += v[i];
    if (kind == ReduceKind::mean || kind == ReduceKind::var_population) {
        for (auto& o : out) o /= n;
    }
    auto means = std::make_shared<std::vector<double>>();
    const char* name = kind == ReduceKind::sum ? "sum" : kind == ReduceKind::mean ? "mean" : "var";
    if (kind == ReduceKind::var_population) {
        *means = out;
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double d = v[i] - (*means)[grouping->group_of[i]];
            out[grouping->group_of[i]] += d * d;
        }
        for (auto& o : out) o /= n;
    }
    NodePtr xn = x.node_ptr();
    return Tensor::from_op(name, grouping->reduced, std::move(out), {x}, [xn, grouping, kind, n, means](Node& self) {
        const auto& g = self.grad;
        auto& gx = xn->grad_buffer();
        const auto& grp = grouping->group_of;
        switch (kind) {
            case ReduceKind::sum:
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[grp[i]];
                break;
            case ReduceKind::mean:
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[grp[i]] / n;
                break;
            case ReduceKind::var_population:
                for (std::size_t i = 0; i < gx.size(); ++i)
                    gx[i] += g[grp[i]] * 2.0 * (xn->value[i] - (*means)[grp[i]]) / n;
                break;
        }
    });
}

Tensor sum(const Tensor& x, const Axes& axes) { return reduce(x, ReduceKind::sum, axes); }
Tensor mean(const Tensor& x, const Axes& axes) { return reduce(x, ReduceKind::mean, axes); }

// ---------------------------------------------------------------------------
// Finite-difference gradient check

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw UsageError("grad_check step must be positive");
    Tensor leaf = x.clone(true);
    Tensor loss = f(leaf);
    require_finite(loss.values(), "grad_check loss");
    backward(loss);
    std::vector<double> analytic(x.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double xi = x[i];
        const double step = h * std::max(1.0, std::abs(xi));
        const double xp = xi + step, xm = xi - step;
        Tensor plus = x.clone(false);
        plus.mutable_values()[i] = xp;
        Tensor minus = x.clone(false);
        minus.mutable_values()[i] = xm;
        const double fp = f(plus).item();
        const double fm = f(minus).item();
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw DomainError("grad_check hit a non-finite value");
        const double numeric = (fp - fm) / (xp - xm);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    return worst;
}

}  // namespace akd
