// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/io.hpp"
#include "nopkit/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

// Reverse-mode differentiation over real and complex tensors.
//
// Complex quantities are differentiated as independent (re, im) pairs. The
// gradient stored for a complex node is dL/dRe + i dL/dIm, so for a holomorphic
// linear map y = A x the pullback is A^H applied to the output gradient.

namespace nopkit::ad {

using Value = AnyTensor;

class Tape;

class Var {
public:
    Var() = default;

    [[nodiscard]] const Value& value() const;
    [[nodiscard]] const RTensor& real() const;
    [[nodiscard]] const CTensor& cplx() const;
    [[nodiscard]] const Shape& shape() const;
    [[nodiscard]] bool is_complex() const;
    [[nodiscard]] bool requires_grad() const;
    [[nodiscard]] std::size_t id() const noexcept { return id_; }
    [[nodiscard]] Tape* tape() const noexcept { return tape_; }
    [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class BackwardContext {
public:
    [[nodiscard]] const Value& grad() const { return *grad_; }
    [[nodiscard]] const RTensor& rgrad() const { return std::get<RTensor>(*grad_); }
    [[nodiscard]] const CTensor& cgrad() const { return std::get<CTensor>(*grad_); }
    [[nodiscard]] const Value& input(std::size_t i) const;
    [[nodiscard]] const RTensor& rinput(std::size_t i) const { return std::get<RTensor>(input(i)); }
    [[nodiscard]] const CTensor& cinput(std::size_t i) const { return std::get<CTensor>(input(i)); }
    [[nodiscard]] const Value& output() const;
    [[nodiscard]] bool wants(std::size_t i) const;
    void accumulate(std::size_t i, Value g);

private:
    friend class Tape;
    BackwardContext(Tape& tape, std::size_t node, const Value& grad)
        : tape_(tape), node_(node), grad_(&grad) {}

    Tape& tape_;
    std::size_t node_;
    const Value* grad_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Gradients of the differentiated scalar, keyed by leaf node id.
using Gradients = std::unordered_map<std::size_t, Value>;

/// Records primitive applications in topological order. One tape per forward
/// pass; it is single-threaded and discarded after backward().
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Value v, bool requires_grad = true);
    Var constant(Value v) { return leaf(std::move(v), false); }

    /// Appends a node. The backward rule is dropped when no input needs a gradient.
    Var record(std::string_view op, Value out, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(std::string_view op, Value out, std::span<const Var> inputs, BackwardFn fn);

    /// Gradient of a real scalar (one-element) output with respect to every leaf
    /// that requires a gradient. Leaves the output does not depend on get zeros.
    [[nodiscard]] Gradients backward(const Var& output);
    /// Vector-Jacobian product: pulls an arbitrary cotangent of `output` back to
    /// the leaves. backward() is vjp() seeded with a one-element tensor of ones.
    [[nodiscard]] Gradients vjp(const Var& output, Value cotangent);

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] const Value& value(std::size_t id) const { return nodes_.at(id).value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    [[nodiscard]] std::string_view op(std::size_t id) const { return nodes_.at(id).op; }

private:
    friend class BackwardContext;

    struct Node {
        Value value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool leaf = false;
        std::string_view op;
    };

    std::deque<Node> nodes_;
    std::vector<std::optional<Value>>* grads_ = nullptr;
};

// ---------------------------------------------------------------------------
// Primitives. Every function records one node on the tape of its inputs.

/// Elementwise sum (real or complex, same shape).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Elementwise product of real tensors.
Var mul(const Var& a, const Var& b);
/// Sum of all entries of a real tensor, as a one-element tensor.
Var sum(const Var& a);

/// Pointwise affine map over the last axis: y = x W^T (+ bias). W is n x m.
Var linear(const Var& x, const Var& weight);
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Broadcast over the last axis.
Var add_channel(const Var& x, const Var& bias);
Var mul_channel(const Var& x, const Var& gain);

Var gelu(const Var& x);

/// x has layout [batch, spatial..., channel]. Instance norm standardizes each
/// (sample, channel) over space; layer norm standardizes each sample over space
/// and channels jointly.
inline constexpr double kNormEpsilon = 1e-5;
Var instance_norm(const Var& x, double eps = kNormEpsilon);
Var layer_norm(const Var& x, double eps = kNormEpsilon);

/// Zero padding / cropping of the spatial axes of [batch, spatial..., channel].
Var pad_spatial(const Var& x, std::span<const std::size_t> pads);
Var crop_spatial(const Var& x, std::span<const std::size_t> pads);

Var fft_forward(const Var& x, std::span<const std::size_t> axes);
Var fft_inverse(const Var& X, std::span<const std::size_t> axes, const Shape& out_shape);

/// Gathers one corner block of retained modes from a half spectrum laid out as
/// [batch..., spatial..., channel]; `modes` has one entry per spatial axis, the last
/// spatial axis being the half axis. Corner bit j picks the low band [0, a_j) or the
/// high band [s_j - a_j, s_j) of full axis j.
Var spectral_corner(const Var& X, std::span<const std::size_t> modes, std::size_t corner);
/// Adjoint of spectral_corner: places a block into a zero spectrum of `spectrum_shape`.
Var embed_corner(const Var& block, const Shape& spectrum_shape, std::span<const std::size_t> modes,
                 std::size_t corner);

/// Joint-weight slice contraction (T: modes x in x out).
Var contract_modes(const Var& T, const Var& X);
/// Output-major layout (T: modes x out x in).
Var contract_channels(const Var& T, const Var& X);
Var contract_diagonal(const Var& T, const Var& X);
Var mode_product(const Var& X, const Var& M, std::size_t mode);
Var matmul(const Var& A, const Var& B);
Var transpose(const Var& A);
Var khatri_rao(const Var& A, const Var& B);

Var reshape(const Var& x, Shape shape);
/// Keeps `axis` with extent one, holding entry `index`.
Var index_select(const Var& x, std::size_t axis, std::size_t index);
/// Flat gather: y[i] = x[indices[i]] reshaped to `shape`. Repeated indices accumulate
/// in the backward pass.
Var gather(const Var& x, std::vector<std::size_t> indices, Shape shape);

/// Batch-mean relative L2 error of prediction against a target (leading axis = batch).
Var rel_l2_loss(const Var& pred, const RTensor& target);
/// Batch-mean relative H1 error on a periodic grid, spatial axes 1..rank-2.
Var rel_h1_loss(const Var& pred, const RTensor& target);

// ---------------------------------------------------------------------------
// Name-based dispatch over the supported primitive set.

enum class Primitive {
    add,
    scale,
    multiply,
    contract_channels,
    mode_product,
    matmul,
    fft_forward,
    fft_inverse,
    gelu,
    instance_norm,
    layer_norm,
    pad,
    crop,
    sum,
    spectral_truncate,
    spectral_embed,
};

struct Attributes {
    std::vector<std::size_t> axes;  // fft axes, pads or retained modes
    double scalar = 1.0;
    std::size_t index = 0;          // mode for mode_product, corner for truncate/embed
    std::optional<Shape> shape;     // output shape of fft_inverse / spectrum of embed
};

/// Applies a primitive by tag. Wrong arity or an unknown tag is a ContractError.
Var record(Primitive p, std::span<const Var> inputs, const Attributes& attrs = {});

} // namespace nopkit::ad
