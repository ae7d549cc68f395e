// SPDX-License-Identifier: Apache-2.0
#include "nopkit/fno.hpp"

#include <cmath>
#include <random>

namespace nopkit {

std::string to_string(SkipKind k) {
    switch (k) {
    case SkipKind::linear: return "linear";
    case SkipKind::identity: return "identity";
    case SkipKind::soft_gate: return "soft-gate";
    }
    return "linear";
}

std::string to_string(NormKind k) {
    switch (k) {
    case NormKind::none: return "none";
    case NormKind::instance: return "instance";
    case NormKind::layer: return "layer";
    }
    return "none";
}

std::string to_string(MlpSkip k) { return k == MlpSkip::nested ? "nested" : "sequential"; }
std::string to_string(Activation k) { return k == Activation::gelu ? "gelu" : "identity"; }

SkipKind parse_skip_kind(const std::string& s) {
    if (s == "linear") return SkipKind::linear;
    if (s == "identity") return SkipKind::identity;
    if (s == "soft-gate" || s == "soft_gate") return SkipKind::soft_gate;
    throw ConfigError("unknown skip kind '" + s + "'");
}

NormKind parse_norm_kind(const std::string& s) {
    if (s == "none") return NormKind::none;
    if (s == "instance") return NormKind::instance;
    if (s == "layer") return NormKind::layer;
    throw ConfigError("unknown norm kind '" + s + "'");
}

MlpSkip parse_mlp_skip(const std::string& s) {
    if (s == "nested") return MlpSkip::nested;
    if (s == "sequential") return MlpSkip::sequential;
    throw ConfigError("unknown mlp skip '" + s + "'");
}

Activation parse_activation(const std::string& s) {
    if (s == "gelu") return Activation::gelu;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + s + "'");
}

std::size_t FnoConfig::mlp_hidden() const {
    if (mlp_expansion <= 0.0) return 0;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(mlp_expansion * static_cast<double>(width) - 1e-9)));
}

WeightGeometry FnoConfig::geometry() const {
    WeightGeometry g;
    g.modes = modes;
    g.in_channels = width;
    g.out_channels = width;
    g.corners = corner_count(d);
    g.layers = layers;
    g.separable = separable;
    return g;
}

void FnoConfig::validate() const {
    if (d < 1 || d > 2) throw ConfigError("model.d must be 1 or 2");
    if (modes.size() != d) throw ConfigError("model.modes needs one entry per spatial dimension");
    for (auto a : modes)
        if (a == 0) throw ConfigError("model.modes entries must be positive");
    if (in_channels == 0 || out_channels == 0 || width == 0 || projection_hidden == 0)
        throw ConfigError("channel counts must be positive");
    if (domain_padding < 0.0) throw ConfigError("model.domain_padding must be non-negative");
    if (mlp_expansion < 0.0) throw ConfigError("model.mlp_expansion must be non-negative");
}

namespace {

RTensor uniform(const Shape& s, double bound, std::mt19937_64& gen) {
    RTensor t(s);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : t.values()) v = u(gen);
    return t;
}

std::string block_prefix(std::size_t l) { return "block" + std::to_string(l) + "."; }

// Names and shapes of the real parameters, in storage order.
std::vector<std::pair<std::string, Shape>> real_layout(const FnoConfig& c) {
    std::vector<std::pair<std::string, Shape>> out;
    const std::size_t w = c.width;
    out.emplace_back("lift.weight", Shape{w, c.lifted_inputs()});
    out.emplace_back("lift.bias", Shape{w});
    for (std::size_t l = 0; l < c.layers; ++l) {
        const auto p = block_prefix(l);
        out.emplace_back(p + "bias", Shape{w});
        if (c.skip == SkipKind::linear) out.emplace_back(p + "skip.weight", Shape{w, w});
        if (c.skip == SkipKind::soft_gate) out.emplace_back(p + "gate", Shape{w});
        if (c.norm != NormKind::none) {
            out.emplace_back(p + "norm.gamma", Shape{w});
            out.emplace_back(p + "norm.beta", Shape{w});
        }
        if (const std::size_t h = c.mlp_hidden(); h > 0) {
            out.emplace_back(p + "mlp1.weight", Shape{h, w});
            out.emplace_back(p + "mlp1.bias", Shape{h});
            out.emplace_back(p + "mlp2.weight", Shape{w, h});
            out.emplace_back(p + "mlp2.bias", Shape{w});
        }
    }
    out.emplace_back("proj1.weight", Shape{c.projection_hidden, w});
    out.emplace_back("proj1.bias", Shape{c.projection_hidden});
    out.emplace_back("proj2.weight", Shape{c.out_channels, c.projection_hidden});
    out.emplace_back("proj2.bias", Shape{c.out_channels});
    return out;
}

std::size_t fan_in(const std::string& name, const Shape& s, const FnoConfig& c) {
    if (s.rank() == 2) return s[1];
    // Biases share the fan-in of their weight.
    if (name == "lift.bias") return c.lifted_inputs();
    if (name == "proj1.bias") return c.width;
    if (name == "proj2.bias") return c.projection_hidden;
    if (name.ends_with("mlp2.bias")) return c.mlp_hidden();
    return c.width;
}

std::vector<std::size_t> spatial_axes(std::size_t d) {
    std::vector<std::size_t> a(d);
    for (std::size_t j = 0; j < d; ++j) a[j] = j + 1;
    return a;
}

} // namespace

FnoModel::FnoModel(FnoConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 gen(seed);
    for (const auto& [name, shape] : real_layout(cfg_)) {
        RTensor t;
        if (name.ends_with("gate") || name.ends_with("norm.gamma")) {
            t = RTensor(shape, 1.0);
        } else if (name.ends_with("norm.beta")) {
            t = RTensor(shape);
        } else {
            t = uniform(shape, 1.0 / std::sqrt(static_cast<double>(fan_in(name, shape, cfg_))), gen);
        }
        real_.emplace_back(name, std::move(t));
    }
    const auto g = cfg_.geometry();
    spectral_ = SpectralWeights::random(cfg_.form, g, resolve_ranks(cfg_.form, g, cfg_.rank), gen());
}

std::size_t FnoModel::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < real_.size(); ++i)
        if (real_[i].first == name) return i;
    throw ContractError("no parameter named '" + name + "'");
}

RTensor& FnoModel::real_param(const std::string& name) { return real_[index_of(name)].second; }
const RTensor& FnoModel::real_param(const std::string& name) const { return real_[index_of(name)].second; }

std::vector<std::string> FnoModel::parameter_names() const {
    std::vector<std::string> names;
    for (const auto& [n, t] : real_) names.push_back(n);
    for (const auto& n : spectral_.tensor_names()) names.push_back("spectral." + n);
    return names;
}

std::vector<ParamView> FnoModel::parameters() {
    std::vector<ParamView> out;
    for (auto& [n, t] : real_) out.push_back({n, t.data(), t.numel(), false, t.shape()});
    const auto names = spectral_.tensor_names();
    auto& ts = spectral_.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i)
        out.push_back({"spectral." + names[i], reinterpret_cast<double*>(ts[i].data()), 2 * ts[i].numel(), true,
                       ts[i].shape()});
    return out;
}

std::vector<ad::Var> FnoModel::bind(ad::Tape& tape, bool requires_grad) const {
    std::vector<ad::Var> vars;
    for (const auto& [n, t] : real_) vars.push_back(tape.leaf(t, requires_grad));
    for (const auto& t : spectral_.tensors()) vars.push_back(tape.leaf(t, requires_grad));
    return vars;
}

ad::Var FnoModel::act(const ad::Var& x) const {
    return cfg_.activation == Activation::gelu ? ad::gelu(x) : x;
}

ad::Var FnoModel::norm(std::span<const ad::Var> bound, const ad::Var& x, const std::string& prefix) const {
    if (cfg_.norm == NormKind::none) return x;
    ad::Var y = cfg_.norm == NormKind::instance ? ad::instance_norm(x) : ad::layer_norm(x);
    y = ad::mul_channel(y, bound[index_of(prefix + "norm.gamma")]);
    return ad::add_channel(y, bound[index_of(prefix + "norm.beta")]);
}

ad::Var FnoModel::spectral_conv(std::span<const ad::Var> bound, const ad::Var& v, std::size_t layer) const {
    const auto axes = spatial_axes(cfg_.d);
    const Shape& xs = v.shape();
    if (xs.rank() != cfg_.d + 2 || xs[xs.rank() - 1] != cfg_.width)
        throw ShapeError("spectral_conv: expected [batch, spatial x" + std::to_string(cfg_.d) + ", " +
                         std::to_string(cfg_.width) + "], got " + xs.str());
    for (std::size_t j = 0; j < cfg_.d; ++j) {
        const std::size_t s = xs[j + 1];
        const std::size_t limit = j + 1 < cfg_.d ? s / 2 : s / 2 + 1;
        if (cfg_.modes[j] > limit)
            throw ShapeError("retained modes " + std::to_string(cfg_.modes[j]) + " exceed the Nyquist limit of extent " +
                             std::to_string(s));
    }
    const std::span<const ad::Var> stored = bound.subspan(real_.size());
    ad::Var X = ad::fft_forward(v, axes);
    const Shape spectrum = X.shape();
    ad::Var acc;
    for (std::size_t c = 0; c < spectral_.geometry().corners; ++c) {
        ad::Var blk = ad::spectral_corner(X, cfg_.modes, c);
        ad::Var T = slice_layer(spectral_, stored, layer, c);
        ad::Var Y = cfg_.separable ? ad::contract_diagonal(T, blk) : ad::contract_modes(T, blk);
        ad::Var E = ad::embed_corner(Y, spectrum, cfg_.modes, c);
        acc = acc.valid() ? ad::add(acc, E) : E;
    }
    return ad::fft_inverse(acc, axes, xs);
}

ad::Var FnoModel::block_forward(std::span<const ad::Var> bound, const ad::Var& x, std::size_t layer) const {
    const auto p = block_prefix(layer);
    auto skip = [&](const ad::Var& v) -> ad::Var {
        switch (cfg_.skip) {
        case SkipKind::linear: return ad::linear(v, bound[index_of(p + "skip.weight")]);
        case SkipKind::identity: return v;
        case SkipKind::soft_gate: return ad::mul_channel(v, bound[index_of(p + "gate")]);
        }
        return v;
    };
    const ad::Var& bias = bound[index_of(p + "bias")];
    ad::Var u;
    if (cfg_.preactivation) {
        ad::Var h = act(norm(bound, x, p));
        u = ad::add(ad::add_channel(spectral_conv(bound, h, layer), bias), skip(x));
    } else {
        ad::Var z = norm(bound, ad::add_channel(spectral_conv(bound, x, layer), bias), p);
        u = act(ad::add(z, skip(x)));
    }
    if (cfg_.mlp_hidden() == 0) return u;
    ad::Var m = ad::gelu(ad::linear(u, bound[index_of(p + "mlp1.weight")], bound[index_of(p + "mlp1.bias")]));
    m = ad::linear(m, bound[index_of(p + "mlp2.weight")], bound[index_of(p + "mlp2.bias")]);
    return ad::add(cfg_.mlp_skip == MlpSkip::nested ? x : u, m);
}

ad::Var FnoModel::forward(std::span<const ad::Var> bound, const RTensor& input) const {
    const std::size_t d = cfg_.d;
    if (input.rank() != d + 2 || input.extent(d + 1) != cfg_.in_channels)
        throw ShapeError("model input must be [batch, spatial x" + std::to_string(d) + ", " +
                         std::to_string(cfg_.in_channels) + "], got " + input.shape().str());
    if (bound.size() != real_.size() + spectral_.tensors().size())
        throw ContractError("forward: wrong number of bound parameters");
    ad::Tape* tape = bound[0].tape();
    RTensor a = cfg_.grid_embedding ? append_grid(input, d) : input;
    std::vector<std::size_t> pads(d);
    bool padded = false;
    for (std::size_t j = 0; j < d; ++j) {
        pads[j] = padding_for(cfg_.domain_padding, input.extent(j + 1));
        padded = padded || pads[j] > 0;
    }
    ad::Var v = tape->constant(std::move(a));
    if (padded) v = ad::pad_spatial(v, pads);
    v = ad::linear(v, bound[index_of("lift.weight")], bound[index_of("lift.bias")]);
    for (std::size_t l = 0; l < cfg_.layers; ++l) v = block_forward(bound, v, l);
    if (padded) v = ad::crop_spatial(v, pads);
    v = ad::gelu(ad::linear(v, bound[index_of("proj1.weight")], bound[index_of("proj1.bias")]));
    return ad::linear(v, bound[index_of("proj2.weight")], bound[index_of("proj2.bias")]);
}

RTensor FnoModel::predict(const RTensor& input) const {
    ad::Tape tape;
    const auto bound = bind(tape, false);
    return forward(bound, input).real();
}

std::size_t FnoModel::param_count(bool complex_as_one) const {
    std::size_t n = 0;
    for (const auto& [name, t] : real_) n += t.numel();
    return n + nopkit::param_count(spectral_, complex_as_one);
}

// ---------------------------------------------------------------------------
// Accounting without allocation

namespace {

std::size_t real_count(const FnoConfig& cfg) {
    std::size_t n = 0;
    for (const auto& [name, s] : real_layout(cfg)) n += s.numel();
    return n;
}

std::size_t stored_spectral(const FnoConfig& cfg) {
    const auto g = cfg.geometry();
    const auto ranks = resolve_ranks(cfg.form, g, cfg.rank);
    std::size_t n = 0;
    for (const auto& s : SpectralWeights::tensor_shapes(cfg.form, g, ranks)) n += s.numel();
    return n;
}

} // namespace

std::size_t model_param_count(const FnoConfig& cfg, bool complex_as_one) {
    cfg.validate();
    const std::size_t s = stored_spectral(cfg);
    return real_count(cfg) + (complex_as_one ? s : 2 * s);
}

std::size_t dense_equivalent_param_count(const FnoConfig& cfg, bool complex_as_one) {
    cfg.validate();
    return real_count(cfg) + dense_param_count(cfg.geometry(), complex_as_one);
}

double model_compression_ratio(const FnoConfig& cfg) {
    return static_cast<double>(dense_equivalent_param_count(cfg)) / static_cast<double>(model_param_count(cfg));
}

double weight_compression_ratio(const FnoConfig& cfg) {
    cfg.validate();
    return static_cast<double>(cfg.geometry().dense_size()) / static_cast<double>(stored_spectral(cfg));
}

std::size_t closed_form_layer_count(std::size_t d, std::span<const std::size_t> modes, std::size_t m, std::size_t n) {
    std::size_t a = std::size_t{1} << d;
    for (auto x : modes) a *= x;
    return (a + 1) * m * n + n;
}

std::size_t padding_for(double fraction, std::size_t extent) {
    if (fraction < 0.0) throw ContractError("domain padding fraction must be non-negative");
    return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(extent) - 1e-12));
}

RTensor append_grid(const RTensor& x, std::size_t d) {
    if (x.rank() != d + 2) throw ShapeError("append_grid: expected [batch, spatial..., channels]");
    const std::size_t C = x.extent(d + 1);
    auto dims = x.shape().dims();
    dims.back() = C + d;
    RTensor y{Shape(dims)};
    const std::size_t rows = x.numel() / C;
    std::vector<std::size_t> idx(d + 1, 0); // batch + spatial
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.data() + r * C, C, y.data() + r * (C + d));
        for (std::size_t j = 0; j < d; ++j)
            y[r * (C + d) + C + j] = static_cast<double>(idx[j + 1]) / static_cast<double>(x.extent(j + 1));
        for (std::size_t a = d + 1; a-- > 0;) {
            if (++idx[a] < x.extent(a)) break;
            idx[a] = 0;
        }
    }
    return y;
}

RTensor domain_pad(const RTensor& x, double fraction) {
    if (x.rank() < 3) throw ShapeError("domain_pad: expected [batch, spatial..., channels]");
    std::vector<std::size_t> pads;
    for (std::size_t a = 1; a + 1 < x.rank(); ++a) pads.push_back(padding_for(fraction, x.extent(a)));
    ad::Tape tape;
    return ad::pad_spatial(tape.constant(x), pads).real();
}

RTensor domain_unpad(const RTensor& x, double fraction, std::span<const std::size_t> original) {
    if (x.rank() < 3 || original.size() + 2 != x.rank()) throw ShapeError("domain_unpad: rank mismatch");
    std::vector<std::size_t> pads;
    for (std::size_t j = 0; j < original.size(); ++j) {
        pads.push_back(padding_for(fraction, original[j]));
        if (x.extent(j + 1) != original[j] + 2 * pads[j]) throw ShapeError("domain_unpad: extents do not match padding");
    }
    ad::Tape tape;
    return ad::crop_spatial(tape.constant(x), pads).real();
}

} // namespace nopkit
