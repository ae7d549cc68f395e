// SPDX-License-Identifier: Apache-2.0
#include "nopkit/weights.hpp"

#include "nopkit/ops.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace nopkit {

std::string to_string(WeightForm f) {
    switch (f) {
    case WeightForm::dense: return "dense";
    case WeightForm::tucker: return "tucker";
    case WeightForm::cp: return "cp";
    case WeightForm::tt: return "tt";
    }
    return "dense";
}

WeightForm parse_weight_form(const std::string& s) {
    if (s == "dense") return WeightForm::dense;
    if (s == "tucker") return WeightForm::tucker;
    if (s == "cp") return WeightForm::cp;
    if (s == "tt") return WeightForm::tt;
    throw ConfigError("unknown weight form '" + s + "' (expected dense, tucker, cp or tt)");
}

std::size_t corner_count(std::size_t d) {
    if (d == 0) throw ShapeError("corner_count: dimension must be positive");
    return std::size_t{1} << (d - 1);
}

std::vector<std::size_t> WeightGeometry::extents() const {
    auto e = slice_extents();
    e.push_back(blocks());
    return e;
}

std::vector<std::size_t> WeightGeometry::slice_extents() const {
    std::vector<std::size_t> e = modes;
    e.push_back(in_channels);
    if (!separable) e.push_back(out_channels);
    return e;
}

std::size_t WeightGeometry::dense_size() const {
    std::size_t n = 1;
    for (auto e : extents()) n *= e;
    return n;
}

void WeightGeometry::validate() const {
    if (modes.empty()) throw ShapeError("weight geometry: no spatial modes");
    for (auto a : modes)
        if (a == 0) throw ShapeError("weight geometry: zero retained modes");
    if (in_channels == 0 || out_channels == 0 || corners == 0 || layers == 0)
        throw ShapeError("weight geometry: extents must be positive");
    if (separable && in_channels != out_channels)
        throw ShapeError("separable weights need equal in and out channels");
}

std::vector<std::size_t> resolve_ranks(WeightForm form, const WeightGeometry& g, const RankSpec& spec) {
    g.validate();
    const auto ext = g.extents();
    const std::size_t N = ext.size();
    if (!spec.ranks.empty()) {
        const std::size_t want = form == WeightForm::tucker ? N : form == WeightForm::cp ? 1 : N - 1;
        if (form != WeightForm::dense && spec.ranks.size() != want)
            throw ConfigError(to_string(form) + " needs " + std::to_string(want) + " ranks, got " +
                              std::to_string(spec.ranks.size()));
        for (auto r : spec.ranks)
            if (r == 0) throw ConfigError("ranks must be positive");
        if (form == WeightForm::tucker)
            for (std::size_t k = 0; k < N; ++k)
                if (spec.ranks[k] > ext[k])
                    throw ConfigError("tucker rank " + std::to_string(spec.ranks[k]) + " exceeds extent " +
                                      std::to_string(ext[k]));
        return form == WeightForm::dense ? std::vector<std::size_t>{} : spec.ranks;
    }
    if (!(spec.fraction > 0.0) || spec.fraction > 1.0) throw ConfigError("rank fraction must be in (0, 1]");
    const double rho = spec.fraction;
    switch (form) {
    case WeightForm::dense: return {};
    case WeightForm::tucker: {
        std::vector<std::size_t> r(N);
        for (std::size_t k = 0; k < N; ++k)
            r[k] = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(rho * static_cast<double>(ext[k]) - 1e-9)),
                                           1, ext[k]);
        return r;
    }
    case WeightForm::cp: {
        double sum = 0.0;
        for (auto e : ext) sum += static_cast<double>(e);
        const double r = std::round(rho * static_cast<double>(g.dense_size()) / sum);
        return {static_cast<std::size_t>(std::max(1.0, r))};
    }
    case WeightForm::tt: {
        std::vector<std::size_t> r(N - 1);
        for (std::size_t b = 0; b + 1 < N; ++b) {
            double left = 1.0, right = 1.0;
            for (std::size_t k = 0; k <= b; ++k) left *= static_cast<double>(ext[k]);
            for (std::size_t k = b + 1; k < N; ++k) right *= static_cast<double>(ext[k]);
            r[b] = static_cast<std::size_t>(std::max(1.0, std::ceil(rho * std::min(left, right) - 1e-9)));
        }
        return r;
    }
    }
    return {};
}

// ---------------------------------------------------------------------------
// SpectralWeights

std::vector<Shape> SpectralWeights::tensor_shapes(WeightForm form, const WeightGeometry& g,
                                                  std::span<const std::size_t> ranks) {
    g.validate();
    const auto ext = g.extents();
    const std::size_t N = ext.size();
    std::vector<Shape> shapes;
    switch (form) {
    case WeightForm::dense:
        shapes.emplace_back(ext);
        break;
    case WeightForm::tucker:
        if (ranks.size() != N) throw ShapeError("tucker needs one rank per axis");
        shapes.emplace_back(std::vector<std::size_t>(ranks.begin(), ranks.end()));
        for (std::size_t k = 0; k < N; ++k) shapes.push_back(Shape{ext[k], ranks[k]});
        break;
    case WeightForm::cp:
        if (ranks.size() != 1) throw ShapeError("cp needs a single rank");
        for (std::size_t k = 0; k < N; ++k) shapes.push_back(Shape{ext[k], ranks[0]});
        break;
    case WeightForm::tt:
        if (ranks.size() != N - 1) throw ShapeError("tt needs one rank per internal bond");
        for (std::size_t k = 0; k < N; ++k) {
            const std::size_t left = k == 0 ? 1 : ranks[k - 1];
            const std::size_t right = k + 1 == N ? 1 : ranks[k];
            shapes.push_back(Shape{left, ext[k], right});
        }
        break;
    }
    return shapes;
}

SpectralWeights::SpectralWeights(WeightForm form, WeightGeometry geometry, std::vector<std::size_t> ranks,
                                 std::vector<CTensor> tensors, std::vector<double> lambda)
    : form_(form), geometry_(std::move(geometry)), ranks_(std::move(ranks)), tensors_(std::move(tensors)),
      lambda_(std::move(lambda)) {
    const auto shapes = tensor_shapes(form_, geometry_, ranks_);
    if (shapes.size() != tensors_.size())
        throw ShapeError(to_string(form_) + " weights need " + std::to_string(shapes.size()) + " tensors");
    for (std::size_t i = 0; i < shapes.size(); ++i) require_same_shape(tensors_[i].shape(), shapes[i], "weight tensor");
    if (form_ == WeightForm::cp) {
        if (lambda_.empty()) lambda_.assign(ranks_[0], 1.0);
        if (lambda_.size() != ranks_[0]) throw ShapeError("cp lambda length differs from rank");
    } else if (!lambda_.empty()) {
        throw ShapeError("only cp weights carry lambda");
    }
}

SpectralWeights SpectralWeights::zeros(WeightForm form, const WeightGeometry& g, std::vector<std::size_t> ranks) {
    std::vector<CTensor> t;
    for (auto& s : tensor_shapes(form, g, ranks)) t.emplace_back(s);
    return SpectralWeights(form, g, std::move(ranks), std::move(t));
}

SpectralWeights SpectralWeights::random(WeightForm form, const WeightGeometry& g, std::vector<std::size_t> ranks,
                                        std::uint64_t seed) {
    auto w = zeros(form, g, ranks);
    const double s = 1.0 / static_cast<double>(g.in_channels * g.out_channels);
    // Reconstructed entries are sums of `terms` products of `factors` stored
    // entries; pick the per-entry variance v so that terms * v^factors matches the
    // dense variance 2 s^2 / 3.
    double terms = 1.0;
    double factors = 1.0;
    const double N = static_cast<double>(g.extents().size());
    switch (form) {
    case WeightForm::dense: break;
    case WeightForm::tucker:
        for (auto r : ranks) terms *= static_cast<double>(r);
        factors = N + 1.0;
        break;
    case WeightForm::cp:
        terms = static_cast<double>(ranks[0]);
        factors = N;
        break;
    case WeightForm::tt:
        for (auto r : ranks) terms *= static_cast<double>(r);
        factors = N;
        break;
    }
    const double v = std::pow(2.0 * s * s / (3.0 * terms), 1.0 / factors);
    const double a = std::sqrt(1.5 * v);
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& t : w.tensors_)
        for (auto& z : t.values()) {
            const double re = u(gen);
            const double im = u(gen);
            z = cdouble(a * re, a * im);
        }
    return w;
}

std::vector<std::string> SpectralWeights::tensor_names() const {
    std::vector<std::string> names;
    const std::size_t N = geometry_.extents().size();
    switch (form_) {
    case WeightForm::dense: names.emplace_back("weight"); break;
    case WeightForm::tucker:
        names.emplace_back("core");
        for (std::size_t k = 0; k < N; ++k) names.push_back("factor_" + std::to_string(k));
        break;
    case WeightForm::cp:
        for (std::size_t k = 0; k < N; ++k) names.push_back("factor_" + std::to_string(k));
        break;
    case WeightForm::tt:
        for (std::size_t k = 0; k < N; ++k) names.push_back("tt_core_" + std::to_string(k));
        break;
    }
    return names;
}

// ---------------------------------------------------------------------------
// Reconstruction and slicing

CTensor reconstruct(const SpectralWeights& w) {
    const auto& g = w.geometry();
    const auto ext = g.extents();
    const std::size_t N = ext.size();
    const auto& t = w.tensors();
    switch (w.form()) {
    case WeightForm::dense: return t[0];
    case WeightForm::tucker: {
        CTensor X = t[0];
        for (std::size_t k = 0; k < N; ++k) X = mode_product(X, t[k + 1], k);
        return X;
    }
    case WeightForm::cp: {
        const std::size_t R = w.ranks()[0];
        CTensor K = t[0];
        for (std::size_t i = 0; i < ext[0]; ++i)
            for (std::size_t r = 0; r < R; ++r) K[i * R + r] *= w.lambda()[r];
        for (std::size_t k = 1; k + 1 < N; ++k) K = khatri_rao(K, t[k]);
        return matmul(K, transpose(t[N - 1])).reshaped(Shape(ext));
    }
    case WeightForm::tt: {
        CTensor M = t[0].reshaped(Shape{ext[0], t[0].extent(2)});
        for (std::size_t k = 1; k < N; ++k) {
            const auto& G = t[k];
            M = matmul(M, G.reshaped(Shape{G.extent(0), G.extent(1) * G.extent(2)}));
            M = std::move(M).reshaped(Shape{M.numel() / G.extent(2), G.extent(2)});
        }
        return std::move(M).reshaped(Shape(ext));
    }
    }
    throw ContractError("unknown weight form");
}

namespace {

std::size_t block_index(const WeightGeometry& g, std::size_t layer, std::size_t corner) {
    if (layer >= g.layers)
        throw ShapeError("layer " + std::to_string(layer) + " out of range (" + std::to_string(g.layers) + ")");
    if (corner >= g.corners)
        throw ShapeError("corner " + std::to_string(corner) + " out of range (" + std::to_string(g.corners) + ")");
    return g.corners * layer + corner;
}

} // namespace

ad::Var slice_layer(const SpectralWeights& layout, std::span<const ad::Var> stored, std::size_t layer,
                    std::size_t corner) {
    const auto& g = layout.geometry();
    const std::size_t k = block_index(g, layer, corner);
    const auto sext = g.slice_extents();
    const std::size_t N = sext.size() + 1;
    if (stored.size() != layout.tensors().size())
        throw ContractError("slice_layer: expected " + std::to_string(layout.tensors().size()) + " variables");
    switch (layout.form()) {
    case WeightForm::dense:
        return ad::reshape(ad::index_select(stored[0], N - 1, k), Shape(sext));
    case WeightForm::tucker: {
        // Select row k of U^(L), fold it into the core, then apply the other factors.
        ad::Var row = ad::index_select(stored[N], 0, k);
        auto rdims = layout.ranks();
        ad::Var X = ad::mode_product(stored[0], row, N - 1);
        rdims.pop_back();
        X = ad::reshape(X, Shape(rdims));
        for (std::size_t j = 0; j + 1 < N; ++j) X = ad::mode_product(X, stored[j + 1], j);
        return X;
    }
    case WeightForm::cp: {
        // W_k(i_1..i_{N-1}) = sum_r lambda_r U^(L)(k, r) prod_j U^(j)(i_j, r).
        const std::size_t R = layout.ranks()[0];
        ad::Var c = ad::index_select(stored[N - 1], 0, k);
        bool unit = true;
        for (double l : layout.lambda()) unit = unit && l == 1.0;
        if (!unit) {
            CTensor lam(Shape{1, R});
            for (std::size_t r = 0; r < R; ++r) lam[r] = layout.lambda()[r];
            c = ad::khatri_rao(c, c.tape()->constant(std::move(lam)));
        }
        ad::Var K = ad::khatri_rao(c, stored[0]);
        for (std::size_t j = 1; j + 2 < N; ++j) K = ad::khatri_rao(K, stored[j]);
        ad::Var W = ad::matmul(K, ad::transpose(stored[N - 2]));
        return ad::reshape(W, Shape(sext));
    }
    case WeightForm::tt: {
        const auto& last = layout.tensors()[N - 1];
        ad::Var v = ad::reshape(ad::index_select(stored[N - 1], 1, k), Shape{last.extent(0), 1});
        const auto& G0 = layout.tensors()[0];
        ad::Var M = ad::reshape(stored[0], Shape{G0.extent(1), G0.extent(2)});
        for (std::size_t j = 1; j + 1 < N; ++j) {
            const auto& G = layout.tensors()[j];
            M = ad::matmul(M, ad::reshape(stored[j], Shape{G.extent(0), G.extent(1) * G.extent(2)}));
            M = ad::reshape(M, Shape{M.shape().numel() / G.extent(2), G.extent(2)});
        }
        return ad::reshape(ad::matmul(M, v), Shape(sext));
    }
    }
    throw ContractError("unknown weight form");
}

CTensor slice_layer(const SpectralWeights& w, std::size_t layer, std::size_t corner) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : w.tensors()) vars.push_back(tape.constant(t));
    return slice_layer(w, vars, layer, corner).cplx();
}

CTensor factorized_contract(const SpectralWeights& w, std::size_t layer, std::size_t corner, const CTensor& X) {
    const auto& g = w.geometry();
    const std::size_t k = block_index(g, layer, corner);
    const std::size_t d = g.d();
    const auto& xs = X.shape();
    if (xs.rank() < d + 1) throw ShapeError("factorized_contract: input rank too small: " + xs.str());
    const std::size_t lead = xs.rank() - d - 1;
    for (std::size_t j = 0; j < d; ++j)
        if (xs[lead + j] != g.modes[j]) throw ShapeError("factorized_contract: mode extents " + xs.str());
    if (xs[xs.rank() - 1] != g.in_channels) throw ShapeError("factorized_contract: channel extent " + xs.str());
    const std::size_t ch = xs.rank() - 1;
    const auto& t = w.tensors();

    if (!g.separable && w.form() == WeightForm::tucker) {
        const std::size_t N = d + 3;
        CTensor Y = mode_product(X, transpose(t[d + 1]), ch);
        CTensor row(Shape{1, w.ranks()[N - 1]});
        for (std::size_t r = 0; r < row.numel(); ++r) row[r] = t[N][k * row.numel() + r];
        auto rdims = w.ranks();
        rdims.pop_back();
        CTensor H = mode_product(t[0], row, N - 1).reshaped(Shape(rdims));
        for (std::size_t j = 0; j < d; ++j) H = mode_product(H, t[j + 1], j);
        CTensor Z = contract_modes(H, Y);
        return mode_product(Z, t[d + 2], ch);
    }
    if (!g.separable && w.form() == WeightForm::cp) {
        const std::size_t R = w.ranks()[0];
        CTensor Y = mode_product(X, transpose(t[d]), ch);
        std::vector<cdouble> c(R);
        for (std::size_t r = 0; r < R; ++r) c[r] = w.lambda()[r] * t[d + 2][k * R + r];
        std::size_t P = 1, B = 1;
        for (auto a : g.modes) P *= a;
        for (std::size_t a = 0; a < lead; ++a) B *= xs[a];
        std::vector<cdouble> scale(P * R);
        std::vector<std::size_t> idx(d, 0);
        for (std::size_t p = 0; p < P; ++p) {
            for (std::size_t r = 0; r < R; ++r) {
                cdouble s = c[r];
                for (std::size_t j = 0; j < d; ++j) s *= t[j][idx[j] * R + r];
                scale[p * R + r] = s;
            }
            for (std::size_t j = d; j-- > 0;) {
                if (++idx[j] < g.modes[j]) break;
                idx[j] = 0;
            }
        }
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t q = 0; q < P * R; ++q) Y[b * P * R + q] *= scale[q];
        return mode_product(Y, t[d + 1], ch);
    }
    const CTensor T = slice_layer(w, layer, corner);
    return g.separable ? contract_diagonal(T, X) : contract_modes(T, X);
}

cdouble kernel_at_point(const SpectralWeights& w, std::size_t layer, std::span<const double> x, std::size_t j1,
                        std::size_t j2) {
    const auto& g = w.geometry();
    const std::size_t d = g.d();
    if (x.size() != d) throw ShapeError("kernel_at_point: point dimension differs from weights");
    if (j1 >= g.in_channels || j2 >= g.out_channels) throw ShapeError("kernel_at_point: channel index out of range");
    if (g.separable && j1 != j2) return 0.0;
    const std::size_t ch = g.separable ? 1 : g.in_channels * g.out_channels;
    const std::size_t off = g.separable ? j1 : j1 * g.out_channels + j2;
    std::size_t P = 1;
    for (auto a : g.modes) P *= a;
    cdouble acc = 0.0;
    for (std::size_t c = 0; c < g.corners; ++c) {
        const CTensor T = slice_layer(w, layer, c);
        std::vector<std::size_t> idx(d, 0);
        for (std::size_t p = 0; p < P; ++p) {
            double phase = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                double freq = static_cast<double>(idx[j]);
                if (j + 1 < d && ((c >> j) & 1U)) freq -= static_cast<double>(g.modes[j]);
                phase += freq * x[j];
            }
            const double mult = idx[d - 1] == 0 ? 1.0 : 2.0;
            acc += mult * T[p * ch + off] * std::polar(1.0, 2.0 * std::numbers::pi * phase);
            for (std::size_t j = d; j-- > 0;) {
                if (++idx[j] < g.modes[j]) break;
                idx[j] = 0;
            }
        }
    }
    return acc;
}

std::size_t param_count(const SpectralWeights& w, bool complex_as_one) {
    std::size_t n = 0;
    for (const auto& t : w.tensors()) n += t.numel();
    return complex_as_one ? n : 2 * n;
}

std::size_t dense_param_count(const WeightGeometry& g, bool complex_as_one) {
    const std::size_t n = g.dense_size();
    return complex_as_one ? n : 2 * n;
}

double compression_ratio(const SpectralWeights& w) {
    return static_cast<double>(dense_param_count(w.geometry())) / static_cast<double>(param_count(w));
}

} // namespace nopkit
