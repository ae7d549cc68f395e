// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/autodiff.hpp"
#include "nopkit/weights.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace nopkit {

enum class SkipKind { linear, identity, soft_gate };
enum class NormKind { none, instance, layer };
/// How the channel MLP rejoins the block: `nested` adds it to the block input
/// (out = x + MLP(u)), `sequential` to the block output (out = u + MLP(u)).
enum class MlpSkip { nested, sequential };
enum class Activation { gelu, identity };

[[nodiscard]] std::string to_string(SkipKind k);
[[nodiscard]] std::string to_string(NormKind k);
[[nodiscard]] std::string to_string(MlpSkip k);
[[nodiscard]] std::string to_string(Activation k);
[[nodiscard]] SkipKind parse_skip_kind(const std::string& s);
[[nodiscard]] NormKind parse_norm_kind(const std::string& s);
[[nodiscard]] MlpSkip parse_mlp_skip(const std::string& s);
[[nodiscard]] Activation parse_activation(const std::string& s);

struct FnoConfig {
    std::size_t d = 1;
    std::size_t in_channels = 1;  // channels of the input field
    std::size_t out_channels = 1;
    std::size_t width = 32;
    std::size_t layers = 4;
    std::vector<std::size_t> modes{16};
    std::size_t projection_hidden = 256;
    /// Appends d coordinate channels in [0, 1) to the input before lifting.
    bool grid_embedding = false;
    double domain_padding = 0.0;

    WeightForm form = WeightForm::dense;
    RankSpec rank;
    bool separable = false;

    SkipKind skip = SkipKind::linear;
    NormKind norm = NormKind::none;
    bool preactivation = false;
    double mlp_expansion = 0.0;
    MlpSkip mlp_skip = MlpSkip::nested;
    Activation activation = Activation::gelu;

    [[nodiscard]] std::size_t lifted_inputs() const noexcept { return in_channels + (grid_embedding ? d : 0); }
    [[nodiscard]] std::size_t mlp_hidden() const;
    [[nodiscard]] WeightGeometry geometry() const;
    void validate() const;
};

/// A view of one learnable array as doubles; complex arrays appear as (re, im) pairs.
struct ParamView {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
    bool complex = false;
    Shape shape;
};

class FnoModel {
public:
    FnoModel() = default;
    /// Random initialization. Linear maps use U(+-1/sqrt(fan_in)) for weights and
    /// biases; gates and norm gains start at 1, norm shifts at 0.
    FnoModel(FnoConfig cfg, std::uint64_t seed);

    [[nodiscard]] const FnoConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const SpectralWeights& spectral() const noexcept { return spectral_; }
    [[nodiscard]] SpectralWeights& spectral() noexcept { return spectral_; }

    /// Real parameters by name (spectral tensors excluded).
    [[nodiscard]] const std::vector<std::pair<std::string, RTensor>>& real_params() const noexcept { return real_; }
    [[nodiscard]] RTensor& real_param(const std::string& name);
    [[nodiscard]] const RTensor& real_param(const std::string& name) const;

    /// Every learnable array: real parameters first, then spectral tensors
    /// named "spectral.<tensor>". This order is the order of bind().
    [[nodiscard]] std::vector<ParamView> parameters();
    [[nodiscard]] std::vector<std::string> parameter_names() const;

    /// Leaves for every parameter, in parameters() order.
    [[nodiscard]] std::vector<ad::Var> bind(ad::Tape& tape, bool requires_grad = true) const;

    /// Differentiable forward pass of a batch [B, s..., in_channels].
    [[nodiscard]] ad::Var forward(std::span<const ad::Var> bound, const RTensor& input) const;
    /// Single block on an already lifted field [B, s..., width].
    [[nodiscard]] ad::Var block_forward(std::span<const ad::Var> bound, const ad::Var& v, std::size_t layer) const;
    /// Spectral convolution of layer `layer` on [B, s..., width].
    [[nodiscard]] ad::Var spectral_conv(std::span<const ad::Var> bound, const ad::Var& v, std::size_t layer) const;

    /// Forward pass without gradients.
    [[nodiscard]] RTensor predict(const RTensor& input) const;

    /// Total learnable parameters (complex counted once unless told otherwise).
    [[nodiscard]] std::size_t param_count(bool complex_as_one = true) const;

private:
    [[nodiscard]] std::size_t index_of(const std::string& name) const;
    [[nodiscard]] ad::Var act(const ad::Var& x) const;
    [[nodiscard]] ad::Var norm(std::span<const ad::Var> bound, const ad::Var& x, const std::string& prefix) const;

    FnoConfig cfg_;
    std::vector<std::pair<std::string, RTensor>> real_;
    SpectralWeights spectral_;
};

/// Parameter count implied by a configuration, computed without allocating.
[[nodiscard]] std::size_t model_param_count(const FnoConfig& cfg, bool complex_as_one = true);
/// Same architecture with dense spectral weights.
[[nodiscard]] std::size_t dense_equivalent_param_count(const FnoConfig& cfg, bool complex_as_one = true);
/// Whole-model compression: dense-equivalent count over actual count.
[[nodiscard]] double model_compression_ratio(const FnoConfig& cfg);
/// Spectral weight tensor only: dense tensor size over stored factor entries.
[[nodiscard]] double weight_compression_ratio(const FnoConfig& cfg);

/// Closed form of one dense block with m inputs and n outputs: spectral entries
/// counted as real scalars plus the pointwise matrix Q and the bias b,
/// (2^d prod(alpha) + 1) m n + n.
[[nodiscard]] std::size_t closed_form_layer_count(std::size_t d, std::span<const std::size_t> modes, std::size_t m,
                                                  std::size_t n);

/// Zero padding amount per side for a spatial extent: ceil(fraction * s).
[[nodiscard]] std::size_t padding_for(double fraction, std::size_t extent);
/// Appends d coordinate channels (i_j / s_j) to a field [B, s..., C].
[[nodiscard]] RTensor append_grid(const RTensor& x, std::size_t d);
/// Zero padding / its inverse on raw tensors [B, s..., C].
[[nodiscard]] RTensor domain_pad(const RTensor& x, double fraction);
[[nodiscard]] RTensor domain_unpad(const RTensor& x, double fraction, std::span<const std::size_t> original);

} // namespace nopkit
