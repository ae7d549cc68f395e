// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/weights.hpp"
#include "test_util.hpp"

#include <vector>

// Brute-force summation formulas for the factorized forms, written entry by entry
// without n-mode products, Khatri-Rao products or matrix chains.

namespace nopkit::testing {

inline CTensor brute_tucker(const SpectralWeights& w) {
    const auto ext = w.geometry().extents();
    const auto& ranks = w.ranks();
    const auto& t = w.tensors();
    const CTensor& core = t[0];
    CTensor out{Shape(ext)};
    for (std::size_t f = 0; f < out.numel(); ++f) {
        const auto i = unravel(f, ext);
        cdouble acc = 0.0;
        for (std::size_t g = 0; g < core.numel(); ++g) {
            const auto r = unravel(g, ranks);
            cdouble term = core[g];
            for (std::size_t k = 0; k < ext.size(); ++k) term *= t[k + 1][i[k] * ranks[k] + r[k]];
            acc += term;
        }
        out[f] = acc;
    }
    return out;
}

inline CTensor brute_cp(const SpectralWeights& w) {
    const auto ext = w.geometry().extents();
    const std::size_t R = w.ranks()[0];
    const auto& t = w.tensors();
    CTensor out{Shape(ext)};
    for (std::size_t f = 0; f < out.numel(); ++f) {
        const auto i = unravel(f, ext);
        cdouble acc = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            cdouble term = w.lambda()[r];
            for (std::size_t k = 0; k < ext.size(); ++k) term *= t[k][i[k] * R + r];
            acc += term;
        }
        out[f] = acc;
    }
    return out;
}

inline CTensor brute_tt(const SpectralWeights& w) {
    const auto ext = w.geometry().extents();
    const auto& t = w.tensors();
    const std::size_t N = ext.size();
    std::vector<std::size_t> bonds; // internal ranks
    for (std::size_t k = 0; k + 1 < N; ++k) bonds.push_back(t[k].extent(2));
    std::size_t nb = 1;
    for (auto b : bonds) nb *= b;
    CTensor out{Shape(ext)};
    for (std::size_t f = 0; f < out.numel(); ++f) {
        const auto i = unravel(f, ext);
        cdouble acc = 0.0;
        for (std::size_t g = 0; g < nb; ++g) {
            const auto r = unravel(g, bonds);
            cdouble term = 1.0;
            for (std::size_t k = 0; k < N; ++k) {
                const std::size_t left = k == 0 ? 0 : r[k - 1];
                const std::size_t right = k + 1 == N ? 0 : r[k];
                const auto& G = t[k];
                term *= G[(left * G.extent(1) + i[k]) * G.extent(2) + right];
            }
            acc += term;
        }
        out[f] = acc;
    }
    return out;
}

inline CTensor brute_reconstruct(const SpectralWeights& w) {
    switch (w.form()) {
    case WeightForm::dense: return w.tensors()[0];
    case WeightForm::tucker: return brute_tucker(w);
    case WeightForm::cp: return brute_cp(w);
    case WeightForm::tt: return brute_tt(w);
    }
    return {};
}

/// Block k of a dense joint tensor (last axis).
inline CTensor dense_block(const CTensor& W, std::size_t k) {
    const std::size_t blocks = W.extent(W.rank() - 1);
    auto dims = W.shape().dims();
    dims.pop_back();
    CTensor out{Shape(dims)};
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = W[i * blocks + k];
    return out;
}

/// Per-mode matrix-vector products, spelled out: Y[b, l, j] = sum_i T[l, i, j] X[b, l, i].
inline CTensor loop_contract(const CTensor& T, const CTensor& X, bool separable) {
    const std::size_t r = T.rank();
    const std::size_t m = separable ? T.extent(r - 1) : T.extent(r - 2);
    const std::size_t n = separable ? m : T.extent(r - 1);
    const std::size_t P = T.numel() / (separable ? m : m * n);
    const std::size_t B = X.numel() / (P * m);
    auto dims = X.shape().dims();
    dims.back() = n;
    CTensor Y{Shape(dims)};
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t j = 0; j < n; ++j) {
                cdouble acc = 0.0;
                if (separable) {
                    acc = T[p * m + j] * X[(b * P + p) * m + j];
                } else {
                    for (std::size_t i = 0; i < m; ++i) acc += T[(p * m + i) * n + j] * X[(b * P + p) * m + i];
                }
                Y[(b * P + p) * n + j] = acc;
            }
    return Y;
}

} // namespace nopkit::testing
