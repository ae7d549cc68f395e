// SPDX-License-Identifier: Apache-2.0
#include "nopkit/autodiff.hpp"

#include "nopkit/fft.hpp"
#include "nopkit/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <numbers>

namespace nopkit::ad {

// ---------------------------------------------------------------------------
// Var / Tape

const Value& Var::value() const {
    if (!tape_) throw ContractError("use of an unbound variable");
    return tape_->value(id_);
}

const RTensor& Var::real() const {
    const auto* r = std::get_if<RTensor>(&value());
    if (!r) throw ContractError("expected a real tensor");
    return *r;
}

const CTensor& Var::cplx() const {
    const auto* c = std::get_if<CTensor>(&value());
    if (!c) throw ContractError("expected a complex tensor");
    return *c;
}

const Shape& Var::shape() const {
    return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, value());
}

bool Var::is_complex() const { return std::holds_alternative<CTensor>(value()); }

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const Value& BackwardContext::input(std::size_t i) const {
    return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].value;
}

const Value& BackwardContext::output() const { return tape_.nodes_[node_].value; }

bool BackwardContext::wants(std::size_t i) const {
    return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].requires_grad;
}

namespace {

const Shape& shape_of(const Value& v) {
    return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, v);
}

void add_into(Value& acc, const Value& g) {
    std::visit(
        [&](auto& a) {
            using T = std::decay_t<decltype(a)>;
            const auto* b = std::get_if<T>(&g);
            if (!b) throw ContractError("gradient dtype mismatch during accumulation");
            require_same_shape(a.shape(), b->shape(), "gradient accumulation");
            for (std::size_t i = 0; i < a.numel(); ++i) a[i] += (*b)[i];
        },
        acc);
}

Value zeros_like(const Value& v) {
    return std::visit([](const auto& t) -> Value { return std::decay_t<decltype(t)>(t.shape()); }, v);
}

} // namespace

void BackwardContext::accumulate(std::size_t i, Value g) {
    const std::size_t target = tape_.nodes_[node_].inputs.at(i);
    auto& node = tape_.nodes_[target];
    if (!node.requires_grad) return;
    if (node.value.index() != g.index()) throw ContractError("gradient dtype differs from value");
    require_same_shape(shape_of(node.value), shape_of(g), "gradient");
    auto& slot = (*tape_.grads_)[target];
    if (!slot) {
        slot = std::move(g);
    } else {
        add_into(*slot, g);
    }
}

Var Tape::leaf(Value v, bool requires_grad) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.leaf = true;
    n.op = "leaf";
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Value out, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(op, std::move(out), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
}

Var Tape::record(std::string_view op, Value out, std::span<const Var> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(out);
    n.op = op;
    for (const auto& v : inputs) {
        if (v.tape() != this) throw ContractError(std::string(op) + ": input from another tape");
        n.inputs.push_back(v.id());
        n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& output) {
    if (output.tape() != this) throw ContractError("backward: output recorded on another tape");
    const auto* r = std::get_if<RTensor>(&nodes_[output.id()].value);
    if (!r || r->numel() != 1) throw ContractError("backward: output must be a real scalar");
    return vjp(output, RTensor(r->shape(), 1.0));
}

Gradients Tape::vjp(const Var& output, Value cotangent) {
    if (output.tape() != this) throw ContractError("vjp: output recorded on another tape");
    const auto& out = nodes_[output.id()].value;
    if (out.index() != cotangent.index()) throw ContractError("vjp: cotangent dtype differs from output");
    require_same_shape(shape_of(out), shape_of(cotangent), "vjp cotangent");

    std::vector<std::optional<Value>> grads(nodes_.size());
    grads_ = &grads;
    grads[output.id()] = std::move(cotangent);
    for (std::size_t id = output.id() + 1; id-- > 0;) {
        if (!grads[id]) continue;
        auto& node = nodes_[id];
        if (node.leaf || !node.backward) continue;
        BackwardContext ctx(*this, id, *grads[id]);
        node.backward(ctx);
        grads[id].reset();
    }
    grads_ = nullptr;

    Gradients result;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const auto& node = nodes_[id];
        if (!node.leaf || !node.requires_grad) continue;
        result.emplace(id, grads[id] ? std::move(*grads[id]) : zeros_like(node.value));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

Tape& tape_of(const Var& a) {
    if (!a.valid()) throw ContractError("unbound variable");
    return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
    if (!a.valid() || a.tape() != b.tape()) throw ContractError("variables on different tapes");
    return *a.tape();
}

template <typename T>
Tensor<T> scaled(const Tensor<T>& a, double s) {
    Tensor<T> out(a.shape(), uninitialized);
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    return out;
}

using RMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RMap = Eigen::Map<RMatrix>;
using RConstMap = Eigen::Map<const RMatrix>;

// Layout [batch, spatial..., channel].
struct SpatialLayout {
    std::size_t batch = 1;
    std::size_t points = 1;
    std::size_t channels = 1;
};

SpatialLayout spatial_layout(const Shape& s, const char* what) {
    if (s.rank() < 3) throw ShapeError(std::string(what) + ": need [batch, spatial..., channel], got " + s.str());
    SpatialLayout l;
    l.batch = s[0];
    l.channels = s[s.rank() - 1];
    l.points = s.numel() / (l.batch * l.channels);
    return l;
}

// Copies the window of `big` starting at `offset` (extent = small's shape) into
// `small` (crop) or the reverse (pad). Both tensors share rank.
template <typename T>
void window_copy(Tensor<T>& small, Tensor<T>& big, std::span<const std::size_t> offset, bool into_small) {
    const auto& sd = small.shape().dims();
    const auto bs = big.shape().strides();
    const std::size_t rank = sd.size();
    std::vector<std::size_t> idx(rank, 0);
    const std::size_t inner = sd[rank - 1];
    const std::size_t rows = small.numel() / inner;
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t boff = offset[rank - 1];
        for (std::size_t a = 0; a + 1 < rank; ++a) boff += (idx[a] + offset[a]) * bs[a];
        T* s = small.data() + r * inner;
        T* b = big.data() + boff;
        if (into_small) {
            std::copy(b, b + inner, s);
        } else {
            std::copy(s, s + inner, b);
        }
        for (std::size_t a = rank - 1; a-- > 0;) {
            if (++idx[a] < sd[a]) break;
            idx[a] = 0;
        }
    }
}

std::vector<std::size_t> spatial_offsets(const Shape& s, std::span<const std::size_t> pads,
                                         const char* what) {
    if (pads.size() + 2 != s.rank())
        throw ShapeError(std::string(what) + ": need one pad per spatial axis of " + s.str());
    std::vector<std::size_t> off(s.rank(), 0);
    for (std::size_t i = 0; i < pads.size(); ++i) off[i + 1] = pads[i];
    return off;
}

double axes_volume(const Shape& s, std::span<const std::size_t> axes) {
    double n = 1.0;
    for (auto a : axes) n *= static_cast<double>(s[a]);
    return n;
}

// Multiplies each entry of a half spectrum by scale / c_k (divide) or scale * c_k,
// c_k being the multiplicity of its column on the half axis.
void apply_multiplicity(CTensor& X, std::size_t half_axis, std::size_t real_extent, bool divide, double scale) {
    const auto& dims = X.shape().dims();
    std::size_t inner = 1;
    for (std::size_t a = half_axis + 1; a < dims.size(); ++a) inner *= dims[a];
    const std::size_t h = dims[half_axis];
    const std::size_t outer = X.numel() / (h * inner);
    std::vector<double> f(h);
    for (std::size_t k = 0; k < h; ++k) {
        const double c = half_axis_multiplicity(k, real_extent);
        f[k] = divide ? scale / c : scale * c;
    }
    // (re, im) pairs scale alike, so the spectrum is walked as plain doubles.
    double* base = reinterpret_cast<double*>(X.data());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < h; ++k) {
            double* p = base + 2 * (o * h + k) * inner;
            const double fk = f[k];
            for (std::size_t i = 0; i < 2 * inner; ++i) p[i] *= fk;
        }
}

// Flat spatial offsets (within one [spatial...] slab of the spectrum) for every
// position of a corner block, in row-major block order.
std::vector<std::size_t> corner_map(const Shape& spectrum, std::span<const std::size_t> modes,
                                    std::size_t corner) {
    const std::size_t d = modes.size();
    if (spectrum.rank() < d + 1) throw ShapeError("spectral corner: spectrum rank too small");
    const std::size_t first = spectrum.rank() - 1 - d;
    if (d > 1 && corner >= (std::size_t{1} << (d - 1)))
        throw ShapeError("spectral corner index out of range");
    if (d == 1 && corner != 0) throw ShapeError("spectral corner index out of range");
    std::vector<std::size_t> start(d, 0), ext(d);
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t s = spectrum[first + j];
        const std::size_t a = modes[j];
        if (a == 0) throw ShapeError("spectral corner: zero modes");
        if (j + 1 < d) {
            if (2 * a > s)
                throw ShapeError("retained modes " + std::to_string(a) + " exceed Nyquist for extent " +
                                 std::to_string(s));
            if ((corner >> j) & 1U) start[j] = s - a;
        } else if (a > s) {
            throw ShapeError("retained modes " + std::to_string(a) + " exceed half spectrum " +
                             std::to_string(s));
        }
        ext[j] = a;
    }
    std::size_t count = 1;
    for (auto e : ext) count *= e;
    std::vector<std::size_t> map(count);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t p = 0; p < count; ++p) {
        std::size_t off = 0;
        for (std::size_t j = 0; j < d; ++j) off = off * spectrum[first + j] + start[j] + idx[j];
        map[p] = off;
        for (std::size_t j = d; j-- > 0;) {
            if (++idx[j] < ext[j]) break;
            idx[j] = 0;
        }
    }
    return map;
}

struct CornerGeometry {
    std::size_t batch = 1;
    std::size_t slab = 1; // spatial points in the spectrum
    std::size_t channels = 1;
    std::vector<std::size_t> map;
};

CornerGeometry corner_geometry(const Shape& spectrum, std::span<const std::size_t> modes, std::size_t corner) {
    CornerGeometry g;
    g.map = corner_map(spectrum, modes, corner);
    const std::size_t d = modes.size();
    const std::size_t first = spectrum.rank() - 1 - d;
    for (std::size_t a = 0; a < first; ++a) g.batch *= spectrum[a];
    for (std::size_t j = 0; j < d; ++j) g.slab *= spectrum[first + j];
    g.channels = spectrum[spectrum.rank() - 1];
    return g;
}

CTensor gather_corner(const CTensor& X, const CornerGeometry& g, const Shape& block_shape) {
    CTensor out(block_shape);
    const std::size_t P = g.map.size(), C = g.channels;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t p = 0; p < P; ++p) {
            const cdouble* src = X.data() + (b * g.slab + g.map[p]) * C;
            std::copy(src, src + C, out.data() + (b * P + p) * C);
        }
    return out;
}

CTensor scatter_corner(const CTensor& block, const CornerGeometry& g, const Shape& spectrum) {
    CTensor out(spectrum);
    const std::size_t P = g.map.size(), C = g.channels;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t p = 0; p < P; ++p) {
            const cdouble* src = block.data() + (b * P + p) * C;
            std::copy(src, src + C, out.data() + (b * g.slab + g.map[p]) * C);
        }
    return out;
}

Shape corner_block_shape(const Shape& spectrum, std::span<const std::size_t> modes) {
    const std::size_t d = modes.size();
    auto dims = spectrum.dims();
    const std::size_t first = dims.size() - 1 - d;
    for (std::size_t j = 0; j < d; ++j) dims[first + j] = modes[j];
    return Shape(dims);
}

// 1 + |k|^2 for every half-spectrum entry of the spatial axes 1..rank-2, times the
// half-axis multiplicity; channel axis innermost.
std::vector<double> h1_weights(const Shape& real_shape) {
    const std::size_t d = real_shape.rank() - 2;
    std::vector<std::size_t> ext(d);
    for (std::size_t j = 0; j < d; ++j) ext[j] = real_shape[j + 1];
    std::vector<std::size_t> half = ext;
    half[d - 1] = ext[d - 1] / 2 + 1;
    std::size_t count = 1;
    for (auto h : half) count *= h;
    std::vector<double> w(count);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t p = 0; p < count; ++p) {
        double k2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double k = static_cast<double>(signed_frequency(idx[j], ext[j]));
            k2 += k * k;
        }
        w[p] = (1.0 + k2) * half_axis_multiplicity(idx[d - 1], ext[d - 1]);
        for (std::size_t j = d; j-- > 0;) {
            if (++idx[j] < half[j]) break;
            idx[j] = 0;
        }
    }
    return w;
}

std::vector<std::size_t> interior_axes(const Shape& s) {
    std::vector<std::size_t> axes;
    for (std::size_t a = 1; a + 1 < s.rank(); ++a) axes.push_back(a);
    return axes;
}

} // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a.shape(), b.shape(), "add");
    if (a.is_complex() != b.is_complex()) throw ContractError("add: dtype mismatch");
    Value out = std::visit(
        [&](const auto& x) -> Value {
            using T = std::decay_t<decltype(x)>;
            const auto& y = std::get<T>(b.value());
            T r(x.shape(), uninitialized);
            for (std::size_t i = 0; i < x.numel(); ++i) r[i] = x[i] + y[i];
            return r;
        },
        a.value());
    return t.record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
        ctx.accumulate(0, ctx.grad());
        ctx.accumulate(1, ctx.grad());
    });
}

Var sub(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a.shape(), b.shape(), "sub");
    if (a.is_complex() != b.is_complex()) throw ContractError("sub: dtype mismatch");
    Value out = std::visit(
        [&](const auto& x) -> Value {
            using T = std::decay_t<decltype(x)>;
            const auto& y = std::get<T>(b.value());
            T r(x.shape(), uninitialized);
            for (std::size_t i = 0; i < x.numel(); ++i) r[i] = x[i] - y[i];
            return r;
        },
        a.value());
    return t.record("sub", std::move(out), {a, b}, [](BackwardContext& ctx) {
        ctx.accumulate(0, ctx.grad());
        ctx.accumulate(1, std::visit([](const auto& g) -> Value { return scaled(g, -1.0); }, ctx.grad()));
    });
}

Var scale(const Var& a, double s) {
    Tape& t = tape_of(a);
    Value out = std::visit([&](const auto& x) -> Value { return scaled(x, s); }, a.value());
    return t.record("scale", std::move(out), {a}, [s](BackwardContext& ctx) {
        ctx.accumulate(0, std::visit([&](const auto& g) -> Value { return scaled(g, s); }, ctx.grad()));
    });
}

Var mul(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    const auto& x = a.real();
    const auto& y = b.real();
    require_same_shape(x.shape(), y.shape(), "mul");
    RTensor r(x.shape(), uninitialized);
    for (std::size_t i = 0; i < x.numel(); ++i) r[i] = x[i] * y[i];
    return t.record("mul", std::move(r), {a, b}, [](BackwardContext& ctx) {
        const auto& g = ctx.rgrad();
        const auto& x0 = ctx.rinput(0);
        const auto& x1 = ctx.rinput(1);
        if (ctx.wants(0)) {
            RTensor ga(g.shape(), uninitialized);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * x1[i];
            ctx.accumulate(0, std::move(ga));
        }
        if (ctx.wants(1)) {
            RTensor gb(g.shape(), uninitialized);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] = g[i] * x0[i];
            ctx.accumulate(1, std::move(gb));
        }
    });
}

Var sum(const Var& a) {
    Tape& t = tape_of(a);
    const auto& x = a.real();
    double s = 0.0;
    for (double v : x.values()) s += v;
    return t.record("sum", RTensor(Shape{1}, s), {a}, [](BackwardContext& ctx) {
        ctx.accumulate(0, RTensor(ctx.rinput(0).shape(), ctx.rgrad()[0]));
    });
}

// ---------------------------------------------------------------------------
// Pointwise channel maps

namespace {

Var linear_impl(const Var& x, const Var& weight, const Var* bias) {
    Tape& t = tape_of(x, weight);
    const auto& X = x.real();
    const auto& W = weight.real();
    if (W.rank() != 2 || X.rank() < 1 || X.extent(X.rank() - 1) != W.extent(1))
        throw ShapeError("linear: input " + X.shape().str() + " vs weight " + W.shape().str());
    const std::size_t m = W.extent(1), n = W.extent(0), rows = X.numel() / m;
    if (bias) {
        if (bias->tape() != &t) throw ContractError("linear: bias on another tape");
        if (bias->real().shape() != Shape{n}) throw ShapeError("linear: bias shape");
    }
    auto dims = X.shape().dims();
    dims.back() = n;
    RTensor Y(Shape(dims), uninitialized);
    RMap y(Y.data(), rows, n);
    y.noalias() = RConstMap(X.data(), rows, m) * RConstMap(W.data(), n, m).transpose();
    if (bias) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias->real().data(), n);

    auto backward = [rows, m, n](BackwardContext& ctx) {
        const auto& G = ctx.rgrad();
        RConstMap g(G.data(), rows, n);
        if (ctx.wants(0)) {
            RTensor gx(ctx.rinput(0).shape(), uninitialized);
            RMap(gx.data(), rows, m).noalias() = g * RConstMap(ctx.rinput(1).data(), n, m);
            ctx.accumulate(0, std::move(gx));
        }
        if (ctx.wants(1)) {
            RTensor gw(Shape{n, m}, uninitialized);
            RMap(gw.data(), n, m).noalias() = g.transpose() * RConstMap(ctx.rinput(0).data(), rows, m);
            ctx.accumulate(1, std::move(gw));
        }
    };
    if (!bias) return t.record("linear", std::move(Y), {x, weight}, backward);
    return t.record("linear", std::move(Y), {x, weight, *bias}, [backward, rows, n](BackwardContext& ctx) {
        backward(ctx);
        if (ctx.wants(2)) {
            RTensor gb(Shape{n});
            Eigen::Map<Eigen::RowVectorXd>(gb.data(), n) = RConstMap(ctx.rgrad().data(), rows, n).colwise().sum();
            ctx.accumulate(2, std::move(gb));
        }
    });
}

} // namespace

Var linear(const Var& x, const Var& weight) { return linear_impl(x, weight, nullptr); }
Var linear(const Var& x, const Var& weight, const Var& bias) { return linear_impl(x, weight, &bias); }

Var add_channel(const Var& x, const Var& bias) {
    Tape& t = tape_of(x, bias);
    const auto& X = x.real();
    const auto& b = bias.real();
    const std::size_t C = b.numel();
    if (b.rank() != 1 || X.extent(X.rank() - 1) != C) throw ShapeError("add_channel: shape mismatch");
    RTensor Y(X.shape(), uninitialized);
    const std::size_t rows = X.numel() / C;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < C; ++c) Y[r * C + c] = X[r * C + c] + b[c];
    return t.record("add_channel", std::move(Y), {x, bias}, [rows, C](BackwardContext& ctx) {
        ctx.accumulate(0, ctx.grad());
        if (ctx.wants(1)) {
            const auto& g = ctx.rgrad();
            RTensor gb(Shape{C});
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
            ctx.accumulate(1, std::move(gb));
        }
    });
}

Var mul_channel(const Var& x, const Var& gain) {
    Tape& t = tape_of(x, gain);
    const auto& X = x.real();
    const auto& w = gain.real();
    const std::size_t C = w.numel();
    if (w.rank() != 1 || X.extent(X.rank() - 1) != C) throw ShapeError("mul_channel: shape mismatch");
    RTensor Y(X.shape(), uninitialized);
    const std::size_t rows = X.numel() / C;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < C; ++c) Y[r * C + c] = X[r * C + c] * w[c];
    return t.record("mul_channel", std::move(Y), {x, gain}, [rows, C](BackwardContext& ctx) {
        const auto& g = ctx.rgrad();
        if (ctx.wants(0)) {
            const auto& w0 = ctx.rinput(1);
            RTensor gx(g.shape(), uninitialized);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < C; ++c) gx[r * C + c] = g[r * C + c] * w0[c];
            ctx.accumulate(0, std::move(gx));
        }
        if (ctx.wants(1)) {
            const auto& x0 = ctx.rinput(0);
            RTensor gw(Shape{C});
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < C; ++c) gw[c] += g[r * C + c] * x0[r * C + c];
            ctx.accumulate(1, std::move(gw));
        }
    });
}

Var gelu(const Var& x) {
    Tape& t = tape_of(x);
    const auto& X = x.real();
    RTensor Y(X.shape(), uninitialized);
    // Phi(x) is kept for the backward rule, which would otherwise evaluate erf again.
    auto phi = std::make_shared<std::vector<double>>(X.numel());
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < X.numel(); ++i) {
        (*phi)[i] = 0.5 * (1.0 + std::erf(X[i] * inv_sqrt2));
        Y[i] = X[i] * (*phi)[i];
    }
    return t.record("gelu", std::move(Y), {x}, [phi](BackwardContext& ctx) {
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        const auto& X0 = ctx.rinput(0);
        const auto& g = ctx.rgrad();
        RTensor gx(g.shape(), uninitialized);
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double v = X0[i];
            gx[i] = g[i] * ((*phi)[i] + v * std::exp(-0.5 * v * v) * inv_sqrt_2pi);
        }
        ctx.accumulate(0, std::move(gx));
    });
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

// Groups: `groups` independent sets; element e of group q sits at
// index_of(q, e). Standardizes each group; the backward rule only needs the
// normalized output and the inverse std-devs.
template <typename IndexFn>
Var standardize(const Var& x, std::size_t groups, std::size_t group_size, IndexFn index_of,
                double eps, const char* name) {
    Tape& t = tape_of(x);
    const auto& X = x.real();
    RTensor Y(X.shape());
    auto inv_std = std::make_shared<std::vector<double>>(groups);
    for (std::size_t q = 0; q < groups; ++q) {
        double mean = 0.0;
        for (std::size_t e = 0; e < group_size; ++e) mean += X[index_of(q, e)];
        mean /= static_cast<double>(group_size);
        double var = 0.0;
        for (std::size_t e = 0; e < group_size; ++e) {
            const double d = X[index_of(q, e)] - mean;
            var += d * d;
        }
        var /= static_cast<double>(group_size);
        const double s = 1.0 / std::sqrt(var + eps);
        (*inv_std)[q] = s;
        for (std::size_t e = 0; e < group_size; ++e) {
            const auto i = index_of(q, e);
            Y[i] = (X[i] - mean) * s;
        }
    }
    return t.record(name, std::move(Y), {x}, [inv_std, groups, group_size, index_of](BackwardContext& ctx) {
        const auto& g = ctx.rgrad();
        const auto& y = std::get<RTensor>(ctx.output());
        RTensor gx(g.shape());
        const double inv_n = 1.0 / static_cast<double>(group_size);
        for (std::size_t q = 0; q < groups; ++q) {
            double mg = 0.0, mgy = 0.0;
            for (std::size_t e = 0; e < group_size; ++e) {
                const auto i = index_of(q, e);
                mg += g[i];
                mgy += g[i] * y[i];
            }
            mg *= inv_n;
            mgy *= inv_n;
            const double s = (*inv_std)[q];
            for (std::size_t e = 0; e < group_size; ++e) {
                const auto i = index_of(q, e);
                gx[i] = s * (g[i] - mg - y[i] * mgy);
            }
        }
        ctx.accumulate(0, std::move(gx));
    });
}

} // namespace

Var instance_norm(const Var& x, double eps) {
    const auto l = spatial_layout(x.shape(), "instance_norm");
    const std::size_t P = l.points, C = l.channels;
    return standardize(
        x, l.batch * C, P,
        [P, C](std::size_t q, std::size_t e) { return ((q / C) * P + e) * C + (q % C); }, eps,
        "instance_norm");
}

Var layer_norm(const Var& x, double eps) {
    const auto l = spatial_layout(x.shape(), "layer_norm");
    const std::size_t per = l.points * l.channels;
    return standardize(
        x, l.batch, per, [per](std::size_t q, std::size_t e) { return q * per + e; }, eps, "layer_norm");
}

// ---------------------------------------------------------------------------
// Spatial padding

Var pad_spatial(const Var& x, std::span<const std::size_t> pads) {
    Tape& t = tape_of(x);
    const auto off = spatial_offsets(x.shape(), pads, "pad_spatial");
    auto dims = x.shape().dims();
    for (std::size_t i = 0; i < pads.size(); ++i) dims[i + 1] += 2 * pads[i];
    RTensor Y{Shape(dims)};
    RTensor X = x.real();
    window_copy(X, Y, off, false);
    return t.record("pad", std::move(Y), {x}, [off](BackwardContext& ctx) {
        RTensor g = ctx.rgrad();
        RTensor gx(ctx.rinput(0).shape());
        window_copy(gx, g, off, true);
        ctx.accumulate(0, std::move(gx));
    });
}

Var crop_spatial(const Var& x, std::span<const std::size_t> pads) {
    Tape& t = tape_of(x);
    const auto off = spatial_offsets(x.shape(), pads, "crop_spatial");
    auto dims = x.shape().dims();
    for (std::size_t i = 0; i < pads.size(); ++i) {
        if (dims[i + 1] <= 2 * pads[i]) throw ShapeError("crop_spatial: crop larger than extent");
        dims[i + 1] -= 2 * pads[i];
    }
    RTensor Y{Shape(dims)};
    RTensor X = x.real();
    window_copy(Y, X, off, true);
    return t.record("crop", std::move(Y), {x}, [off](BackwardContext& ctx) {
        RTensor g = ctx.rgrad();
        RTensor gx(ctx.rinput(0).shape());
        window_copy(g, gx, off, false);
        ctx.accumulate(0, std::move(gx));
    });
}

// ---------------------------------------------------------------------------
// Fourier transforms

Var fft_forward(const Var& x, std::span<const std::size_t> axes) {
    Tape& t = tape_of(x);
    std::vector<std::size_t> ax(axes.begin(), axes.end());
    CTensor X = nopkit::fft_forward(x.real(), ax);
    return t.record("fft_forward", std::move(X), {x}, [ax](BackwardContext& ctx) {
        const Shape& rs = ctx.rinput(0).shape();
        CTensor g = ctx.cgrad();
        // The inverse transform is linear, so the volume factor is applied on the spectrum.
        apply_multiplicity(g, ax.back(), rs[ax.back()], true, axes_volume(rs, ax));
        RTensor gx = nopkit::fft_inverse(g, ax, rs);
        ctx.accumulate(0, std::move(gx));
    });
}

Var fft_inverse(const Var& X, std::span<const std::size_t> axes, const Shape& out_shape) {
    Tape& t = tape_of(X);
    std::vector<std::size_t> ax(axes.begin(), axes.end());
    RTensor x = nopkit::fft_inverse(X.cplx(), ax, out_shape);
    return t.record("fft_inverse", std::move(x), {X}, [ax, out_shape](BackwardContext& ctx) {
        CTensor g = nopkit::fft_forward(ctx.rgrad(), ax);
        apply_multiplicity(g, ax.back(), out_shape[ax.back()], false, 1.0 / axes_volume(out_shape, ax));
        ctx.accumulate(0, std::move(g));
    });
}

Var spectral_corner(const Var& X, std::span<const std::size_t> modes, std::size_t corner) {
    Tape& t = tape_of(X);
    const Shape& spec = X.shape();
    auto geo = std::make_shared<CornerGeometry>(corner_geometry(spec, modes, corner));
    const Shape block = corner_block_shape(spec, modes);
    CTensor out = gather_corner(X.cplx(), *geo, block);
    return t.record("spectral_truncate", std::move(out), {X}, [geo, spec](BackwardContext& ctx) {
        ctx.accumulate(0, scatter_corner(ctx.cgrad(), *geo, spec));
    });
}

Var embed_corner(const Var& block, const Shape& spectrum_shape, std::span<const std::size_t> modes,
                 std::size_t corner) {
    Tape& t = tape_of(block);
    auto geo = std::make_shared<CornerGeometry>(corner_geometry(spectrum_shape, modes, corner));
    const Shape bshape = corner_block_shape(spectrum_shape, modes);
    require_same_shape(block.shape(), bshape, "embed_corner");
    CTensor out = scatter_corner(block.cplx(), *geo, spectrum_shape);
    return t.record("spectral_embed", std::move(out), {block}, [geo, bshape](BackwardContext& ctx) {
        ctx.accumulate(0, gather_corner(ctx.cgrad(), *geo, bshape));
    });
}

// ---------------------------------------------------------------------------
// Complex contractions

namespace {

// Pullback of Y(b,l,j) = sum_i T(l, i*s_in + j*s_out) X(b,l,i).
void contract_backward(BackwardContext& ctx, bool out_major) {
    const auto& T = ctx.cinput(0);
    const auto& X = ctx.cinput(1);
    const auto& G = ctx.cgrad();
    const std::size_t r = T.rank();
    const std::size_t n = out_major ? T.extent(r - 2) : T.extent(r - 1);
    const std::size_t m = out_major ? T.extent(r - 1) : T.extent(r - 2);
    const std::size_t s_in = out_major ? 1 : n;
    const std::size_t s_out = out_major ? m : 1;
    const std::size_t modes = T.numel() / (n * m);
    const std::size_t batch = X.numel() / (modes * m);
    if (ctx.wants(0)) {
        CTensor gT(T.shape());
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t l = 0; l < modes; ++l) {
                const cdouble* x = X.data() + (b * modes + l) * m;
                const cdouble* g = G.data() + (b * modes + l) * n;
                cdouble* gt = gT.data() + l * n * m;
                for (std::size_t i = 0; i < m; ++i) {
                    const cdouble xc = std::conj(x[i]);
                    for (std::size_t j = 0; j < n; ++j) gt[i * s_in + j * s_out] += g[j] * xc;
                }
            }
        ctx.accumulate(0, std::move(gT));
    }
    if (ctx.wants(1)) {
        CTensor gX(X.shape());
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t l = 0; l < modes; ++l) {
                const cdouble* tt = T.data() + l * n * m;
                const cdouble* g = G.data() + (b * modes + l) * n;
                cdouble* gx = gX.data() + (b * modes + l) * m;
                for (std::size_t i = 0; i < m; ++i) {
                    cdouble acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += std::conj(tt[i * s_in + j * s_out]) * g[j];
                    gx[i] = acc;
                }
            }
        ctx.accumulate(1, std::move(gX));
    }
}

} // namespace

Var contract_modes(const Var& T, const Var& X) {
    Tape& t = tape_of(T, X);
    CTensor Y = nopkit::contract_modes(T.cplx(), X.cplx());
    return t.record("contract_modes", std::move(Y), {T, X},
                    [](BackwardContext& ctx) { contract_backward(ctx, false); });
}

Var contract_channels(const Var& T, const Var& X) {
    Tape& t = tape_of(T, X);
    CTensor Y = nopkit::contract_channels(T.cplx(), X.cplx());
    return t.record("contract_channels", std::move(Y), {T, X},
                    [](BackwardContext& ctx) { contract_backward(ctx, true); });
}

Var contract_diagonal(const Var& T, const Var& X) {
    Tape& t = tape_of(T, X);
    CTensor Y = nopkit::contract_diagonal(T.cplx(), X.cplx());
    return t.record("contract_diagonal", std::move(Y), {T, X}, [](BackwardContext& ctx) {
        const auto& W = ctx.cinput(0);
        const auto& X0 = ctx.cinput(1);
        const auto& G = ctx.cgrad();
        const std::size_t per = W.numel(), batch = X0.numel() / per;
        if (ctx.wants(0)) {
            CTensor gW(W.shape());
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t k = 0; k < per; ++k) gW[k] += G[b * per + k] * std::conj(X0[b * per + k]);
            ctx.accumulate(0, std::move(gW));
        }
        if (ctx.wants(1)) {
            CTensor gX(X0.shape());
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t k = 0; k < per; ++k) gX[b * per + k] = std::conj(W[k]) * G[b * per + k];
            ctx.accumulate(1, std::move(gX));
        }
    });
}

Var mode_product(const Var& X, const Var& M, std::size_t mode) {
    Tape& t = tape_of(X, M);
    CTensor Y = nopkit::mode_product(X.cplx(), M.cplx(), mode);
    return t.record("mode_product", std::move(Y), {X, M}, [mode](BackwardContext& ctx) {
        const auto& X0 = ctx.cinput(0);
        const auto& M0 = ctx.cinput(1);
        const auto& G = ctx.cgrad();
        if (ctx.wants(0)) ctx.accumulate(0, nopkit::mode_product(G, nopkit::adjoint(M0), mode));
        if (ctx.wants(1)) ctx.accumulate(1, nopkit::matmul(unfold(G, mode), nopkit::adjoint(unfold(X0, mode))));
    });
}

Var matmul(const Var& A, const Var& B) {
    Tape& t = tape_of(A, B);
    CTensor C = nopkit::matmul(A.cplx(), B.cplx());
    return t.record("matmul", std::move(C), {A, B}, [](BackwardContext& ctx) {
        const auto& G = ctx.cgrad();
        if (ctx.wants(0)) ctx.accumulate(0, nopkit::matmul(G, nopkit::adjoint(ctx.cinput(1))));
        if (ctx.wants(1)) ctx.accumulate(1, nopkit::matmul(nopkit::adjoint(ctx.cinput(0)), G));
    });
}

Var transpose(const Var& A) {
    Tape& t = tape_of(A);
    return t.record("transpose", nopkit::transpose(A.cplx()), {A}, [](BackwardContext& ctx) {
        ctx.accumulate(0, nopkit::transpose(ctx.cgrad()));
    });
}

Var khatri_rao(const Var& A, const Var& B) {
    Tape& t = tape_of(A, B);
    CTensor C = nopkit::khatri_rao(A.cplx(), B.cplx());
    return t.record("khatri_rao", std::move(C), {A, B}, [](BackwardContext& ctx) {
        const auto& A0 = ctx.cinput(0);
        const auto& B0 = ctx.cinput(1);
        const auto& G = ctx.cgrad();
        const std::size_t I = A0.extent(0), J = B0.extent(0), R = A0.extent(1);
        if (ctx.wants(0)) {
            CTensor gA(A0.shape());
            for (std::size_t i = 0; i < I; ++i)
                for (std::size_t j = 0; j < J; ++j)
                    for (std::size_t r = 0; r < R; ++r) gA[i * R + r] += G[(i * J + j) * R + r] * std::conj(B0[j * R + r]);
            ctx.accumulate(0, std::move(gA));
        }
        if (ctx.wants(1)) {
            CTensor gB(B0.shape());
            for (std::size_t i = 0; i < I; ++i)
                for (std::size_t j = 0; j < J; ++j)
                    for (std::size_t r = 0; r < R; ++r) gB[j * R + r] += G[(i * J + j) * R + r] * std::conj(A0[i * R + r]);
            ctx.accumulate(1, std::move(gB));
        }
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var reshape(const Var& x, Shape shape) {
    Tape& t = tape_of(x);
    Value out = std::visit([&](const auto& v) -> Value { return v.reshaped(shape); }, x.value());
    return t.record("reshape", std::move(out), {x}, [](BackwardContext& ctx) {
        const Shape& s = shape_of(ctx.input(0));
        ctx.accumulate(0, std::visit([&](const auto& g) -> Value { return g.reshaped(s); }, ctx.grad()));
    });
}

Var index_select(const Var& x, std::size_t axis, std::size_t index) {
    Tape& t = tape_of(x);
    const Shape& s = x.shape();
    if (axis >= s.rank() || index >= s[axis])
        throw ShapeError("index_select: index " + std::to_string(index) + " on axis " +
                         std::to_string(axis) + " of " + s.str());
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
    for (std::size_t a = axis + 1; a < s.rank(); ++a) inner *= s[a];
    const std::size_t ext = s[axis];
    Value out = std::visit(
        [&](const auto& v) -> Value {
            std::decay_t<decltype(v)> r(s.with(axis, 1));
            for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(v.data() + (o * ext + index) * inner, inner, r.data() + o * inner);
            return r;
        },
        x.value());
    return t.record("index_select", std::move(out), {x}, [outer, inner, ext, index](BackwardContext& ctx) {
        ctx.accumulate(0, std::visit(
                              [&](const auto& g) -> Value {
                                  std::decay_t<decltype(g)> r(shape_of(ctx.input(0)));
                                  for (std::size_t o = 0; o < outer; ++o)
                                      std::copy_n(g.data() + o * inner, inner, r.data() + (o * ext + index) * inner);
                                  return r;
                              },
                              ctx.grad()));
    });
}

Var gather(const Var& x, std::vector<std::size_t> indices, Shape shape) {
    Tape& t = tape_of(x);
    if (shape.numel() != indices.size())
        throw ShapeError("gather: " + std::to_string(indices.size()) + " indices for shape " + shape.str());
    const std::size_t n = x.shape().numel();
    for (auto i : indices)
        if (i >= n) throw ShapeError("gather: index " + std::to_string(i) + " out of range " + std::to_string(n));
    Value out = std::visit(
        [&](const auto& v) -> Value {
            std::decay_t<decltype(v)> r(shape);
            for (std::size_t i = 0; i < indices.size(); ++i) r[i] = v[indices[i]];
            return r;
        },
        x.value());
    auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(indices));
    return t.record("gather", std::move(out), {x}, [idx](BackwardContext& ctx) {
        ctx.accumulate(0, std::visit(
                              [&](const auto& g) -> Value {
                                  std::decay_t<decltype(g)> r(shape_of(ctx.input(0)));
                                  for (std::size_t i = 0; i < idx->size(); ++i) r[(*idx)[i]] += g[i];
                                  return r;
                              },
                              ctx.grad()));
    });
}

// ---------------------------------------------------------------------------
// Losses

Var rel_l2_loss(const Var& pred, const RTensor& target) {
    Tape& t = tape_of(pred);
    const auto& P = pred.real();
    require_same_shape(P.shape(), target.shape(), "rel_l2_loss");
    const std::size_t B = P.extent(0), per = P.numel() / B;
    auto err = std::make_shared<std::vector<double>>(B);
    auto tn = std::make_shared<std::vector<double>>(B);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double e2 = 0.0, t2 = 0.0;
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
            const double d = P[i] - target[i];
            e2 += d * d;
            t2 += target[i] * target[i];
        }
        if (t2 == 0.0) throw ContractError("rel_l2_loss: target sample " + std::to_string(b) + " has zero norm");
        (*err)[b] = std::sqrt(e2);
        (*tn)[b] = std::sqrt(t2);
        loss += (*err)[b] / (*tn)[b];
    }
    loss /= static_cast<double>(B);
    auto tgt = std::make_shared<RTensor>(target);
    return t.record("rel_l2_loss", RTensor(Shape{1}, loss), {pred}, [err, tn, tgt, B, per](BackwardContext& ctx) {
        const auto& P0 = ctx.rinput(0);
        const double g = ctx.rgrad()[0] / static_cast<double>(B);
        RTensor gp(P0.shape());
        for (std::size_t b = 0; b < B; ++b) {
            const double e = (*err)[b];
            if (e == 0.0) continue;
            const double f = g / (e * (*tn)[b]);
            for (std::size_t i = b * per; i < (b + 1) * per; ++i) gp[i] = f * (P0[i] - (*tgt)[i]);
        }
        ctx.accumulate(0, std::move(gp));
    });
}

Var rel_h1_loss(const Var& pred, const RTensor& target) {
    Tape& t = tape_of(pred);
    const auto& P = pred.real();
    require_same_shape(P.shape(), target.shape(), "rel_h1_loss");
    spatial_layout(P.shape(), "rel_h1_loss");
    const auto axes = interior_axes(P.shape());
    RTensor diff(P.shape());
    for (std::size_t i = 0; i < P.numel(); ++i) diff[i] = P[i] - target[i];
    const CTensor E = nopkit::fft_forward(diff, axes);
    const CTensor Tt = nopkit::fft_forward(target, axes);
    const auto w = h1_weights(P.shape());
    const std::size_t B = P.extent(0), C = P.extent(P.rank() - 1), K = w.size();
    auto eq = std::make_shared<std::vector<double>>(B);
    auto tq = std::make_shared<std::vector<double>>(B);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double e2 = 0.0, t2 = 0.0;
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t i = (b * K + k) * C + c;
                e2 += w[k] * std::norm(E[i]);
                t2 += w[k] * std::norm(Tt[i]);
            }
        if (t2 == 0.0) throw ContractError("rel_h1_loss: target sample " + std::to_string(b) + " has zero norm");
        (*eq)[b] = e2;
        (*tq)[b] = t2;
        loss += std::sqrt(e2 / t2);
    }
    loss /= static_cast<double>(B);
    auto spectrum = std::make_shared<CTensor>(E);
    return t.record("rel_h1_loss", RTensor(Shape{1}, loss), {pred},
                    [eq, tq, spectrum, axes, B, C, K](BackwardContext& ctx) {
        const Shape& rs = ctx.rinput(0).shape();
        const double g = ctx.rgrad()[0] / static_cast<double>(B);
        // d sqrt(q_e / q_t) / de = (2N irfft(w E)) / (2 sqrt(q_e q_t)); w here
        // excludes the half-axis multiplicity, which irfft applies itself.
        const std::size_t last = axes.back();
        const std::size_t s_last = rs[last];
        const std::size_t h = s_last / 2 + 1;
        CTensor W = *spectrum;
        const auto wfull = h1_weights(rs);
        for (std::size_t b = 0; b < B; ++b) {
            const double e = (*eq)[b];
            const double f = e == 0.0 ? 0.0 : g / std::sqrt(e * (*tq)[b]);
            for (std::size_t k = 0; k < K; ++k) {
                const double c = half_axis_multiplicity(k % h, s_last);
                for (std::size_t ch = 0; ch < C; ++ch) W[(b * K + k) * C + ch] *= f * wfull[k] / c;
            }
        }
        RTensor gp = nopkit::fft_inverse(W, axes, rs);
        const double n = axes_volume(rs, axes);
        for (auto& v : gp.values()) v *= n;
        ctx.accumulate(0, std::move(gp));
    });
}

// ---------------------------------------------------------------------------
// Dispatch

Var record(Primitive p, std::span<const Var> in, const Attributes& attrs) {
    auto need = [&](std::size_t n, const char* name) {
        if (in.size() != n)
            throw ContractError(std::string(name) + " takes " + std::to_string(n) + " inputs, got " +
                                std::to_string(in.size()));
    };
    switch (p) {
    case Primitive::add: need(2, "add"); return add(in[0], in[1]);
    case Primitive::scale: need(1, "scale"); return scale(in[0], attrs.scalar);
    case Primitive::multiply: need(2, "multiply"); return mul(in[0], in[1]);
    case Primitive::contract_channels: need(2, "contract_channels"); return contract_channels(in[0], in[1]);
    case Primitive::mode_product: need(2, "mode_product"); return mode_product(in[0], in[1], attrs.index);
    case Primitive::matmul: need(2, "matmul"); return matmul(in[0], in[1]);
    case Primitive::fft_forward: need(1, "fft_forward"); return fft_forward(in[0], attrs.axes);
    case Primitive::fft_inverse:
        need(1, "fft_inverse");
        if (!attrs.shape) throw ContractError("fft_inverse needs an output shape");
        return fft_inverse(in[0], attrs.axes, *attrs.shape);
    case Primitive::gelu: need(1, "gelu"); return gelu(in[0]);
    case Primitive::instance_norm: need(1, "instance_norm"); return instance_norm(in[0]);
    case Primitive::layer_norm: need(1, "layer_norm"); return layer_norm(in[0]);
    case Primitive::pad: need(1, "pad"); return pad_spatial(in[0], attrs.axes);
    case Primitive::crop: need(1, "crop"); return crop_spatial(in[0], attrs.axes);
    case Primitive::sum: need(1, "sum"); return sum(in[0]);
    case Primitive::spectral_truncate: need(1, "spectral_truncate"); return spectral_corner(in[0], attrs.axes, attrs.index);
    case Primitive::spectral_embed:
        need(1, "spectral_embed");
        if (!attrs.shape) throw ContractError("spectral_embed needs a spectrum shape");
        return embed_corner(in[0], *attrs.shape, attrs.axes, attrs.index);
    }
    throw ContractError("unsupported primitive");
}

} // namespace nopkit::ad
