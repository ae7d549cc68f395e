// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/autodiff.hpp"
#include "nopkit/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nopkit {

enum class WeightForm { dense, tucker, cp, tt };

[[nodiscard]] std::string to_string(WeightForm f);
[[nodiscard]] WeightForm parse_weight_form(const std::string& s);

/// Extents of the joint spectral weight tensor of all layers.
///
/// Full layout: (modes..., in, out, corners * layers). With `separable` the two
/// channel axes collapse into one: (modes..., channels, corners * layers).
/// Layer-block k = corners * layer + corner (0-based).
struct WeightGeometry {
    std::vector<std::size_t> modes;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t corners = 1;
    std::size_t layers = 1;
    bool separable = false;

    [[nodiscard]] std::size_t d() const noexcept { return modes.size(); }
    [[nodiscard]] std::size_t blocks() const noexcept { return corners * layers; }
    [[nodiscard]] std::vector<std::size_t> extents() const;
    /// Extents of one layer block (all axes but the last).
    [[nodiscard]] std::vector<std::size_t> slice_extents() const;
    [[nodiscard]] std::size_t dense_size() const;
    void validate() const;

    friend bool operator==(const WeightGeometry&, const WeightGeometry&) = default;
};

/// Corner count 2^{d-1} under half-spectrum storage on the last axis.
[[nodiscard]] std::size_t corner_count(std::size_t d);

/// Rank request: explicit ranks take precedence over the fraction.
///
/// tucker: one rank per axis of the joint tensor, default ceil(fraction * extent).
/// cp:     one shared rank, default round(fraction * dense_size / sum(extents)),
///         i.e. the fraction is a parameter budget relative to dense.
/// tt:     one rank per internal bond, default ceil(fraction * min(prod left, prod right)).
struct RankSpec {
    double fraction = 1.0;
    std::vector<std::size_t> ranks;
};

[[nodiscard]] std::vector<std::size_t> resolve_ranks(WeightForm form, const WeightGeometry& g,
                                                     const RankSpec& spec);

/// The joint weight tensor in one of its storage forms.
///
/// Stored tensors, in order:
///   dense:  W
///   tucker: core G (R_1 x ... x R_N), then U^(k) (extent_k x R_k) for each axis k
///   cp:     U^(k) (extent_k x R) for each axis k; lambda is held separately and fixed
///   tt:     cores G_k (R_k x extent_k x R_{k+1}), R_1 = R_{N+1} = 1
class SpectralWeights {
public:
    SpectralWeights() = default;
    SpectralWeights(WeightForm form, WeightGeometry geometry, std::vector<std::size_t> ranks,
                    std::vector<CTensor> tensors, std::vector<double> lambda = {});

    /// Random initialization with a rank-aware scale: every stored entry is
    /// a * (U(-1,1) + i U(-1,1)), chosen so reconstructed entries have the variance
    /// of the dense initialization with a = 1 / (in * out).
    static SpectralWeights random(WeightForm form, const WeightGeometry& g,
                                  std::vector<std::size_t> ranks, std::uint64_t seed);
    static SpectralWeights zeros(WeightForm form, const WeightGeometry& g, std::vector<std::size_t> ranks);

    [[nodiscard]] WeightForm form() const noexcept { return form_; }
    [[nodiscard]] const WeightGeometry& geometry() const noexcept { return geometry_; }
    [[nodiscard]] const std::vector<std::size_t>& ranks() const noexcept { return ranks_; }
    [[nodiscard]] const std::vector<CTensor>& tensors() const noexcept { return tensors_; }
    [[nodiscard]] std::vector<CTensor>& tensors() noexcept { return tensors_; }
    [[nodiscard]] const std::vector<double>& lambda() const noexcept { return lambda_; }
    /// Names used in checkpoints, parallel to tensors().
    [[nodiscard]] std::vector<std::string> tensor_names() const;

    /// Expected tensor shapes for a form/geometry/ranks triple.
    static std::vector<Shape> tensor_shapes(WeightForm form, const WeightGeometry& g,
                                            std::span<const std::size_t> ranks);

private:
    WeightForm form_ = WeightForm::dense;
    WeightGeometry geometry_;
    std::vector<std::size_t> ranks_;
    std::vector<CTensor> tensors_;
    std::vector<double> lambda_;
};

/// Full joint tensor from any form (the dense form returns a copy).
[[nodiscard]] CTensor reconstruct(const SpectralWeights& w);

/// Layer block (modes..., in, out) or, separable, (modes..., channels), without
/// materializing the full tensor for factorized forms.
[[nodiscard]] CTensor slice_layer(const SpectralWeights& w, std::size_t layer, std::size_t corner);

/// Differentiable slice. `stored` holds one variable per stored tensor, in order.
[[nodiscard]] ad::Var slice_layer(const SpectralWeights& layout, std::span<const ad::Var> stored,
                                  std::size_t layer, std::size_t corner);

/// Applies the layer block to a spectrum block X of shape [batch..., modes..., in],
/// contracting factor by factor for Tucker and CP. Result [batch..., modes..., out].
[[nodiscard]] CTensor factorized_contract(const SpectralWeights& w, std::size_t layer, std::size_t corner,
                                          const CTensor& X);

/// Physical-space kernel [kappa_l(x)]_{j1 j2} = sum over stored modes of
/// c_k T(k, j1, j2) exp(2 pi i k.x), with signed frequencies and c_k = 2 on
/// nonzero half-axis frequencies (their conjugate partners are implied). Its real
/// part is the kernel acting on real fields. j1 indexes input, j2 output channels.
[[nodiscard]] cdouble kernel_at_point(const SpectralWeights& w, std::size_t layer, std::span<const double> x,
                                      std::size_t j1, std::size_t j2);

/// Number of scalars learned. With complex_as_one a complex entry counts once
/// (the convention of published FNO parameter tables); otherwise twice.
[[nodiscard]] std::size_t param_count(const SpectralWeights& w, bool complex_as_one = true);
[[nodiscard]] std::size_t dense_param_count(const WeightGeometry& g, bool complex_as_one = true);

/// Dense count over stored count of the weight tensor alone.
[[nodiscard]] double compression_ratio(const SpectralWeights& w);

} // namespace nopkit
