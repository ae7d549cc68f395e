// SPDX-License-Identifier: Apache-2.0
#include "nopkit/ops.hpp"

#include <Eigen/Core>

#include <cmath>

namespace nopkit {

namespace {

using CMatrix = Eigen::Matrix<cdouble, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<CMatrix>;
using CConstMap = Eigen::Map<const CMatrix>;

struct ContractDims {
    std::size_t batch = 1;
    std::size_t modes = 1;
    std::vector<std::size_t> lead; // batch extents followed by mode extents
};

// T has `mode_rank` mode axes followed by two channel axes; X ends with the same
// mode axes plus its input-channel axis.
ContractDims contract_dims(const Shape& t, const Shape& x, std::size_t in_axis_of_t,
                           std::size_t t_channel_axes) {
    if (t.rank() < t_channel_axes)
        throw ShapeError("contraction weight rank too small: " + t.str());
    const std::size_t mode_rank = t.rank() - t_channel_axes;
    if (x.rank() < mode_rank + 1)
        throw ShapeError("contraction input " + x.str() + " too small for weight " + t.str());
    const std::size_t batch_rank = x.rank() - mode_rank - 1;
    ContractDims d;
    for (std::size_t a = 0; a < batch_rank; ++a) {
        d.batch *= x[a];
        d.lead.push_back(x[a]);
    }
    for (std::size_t a = 0; a < mode_rank; ++a) {
        if (t[a] != x[batch_rank + a])
            throw ShapeError("contraction mode extents differ: " + t.str() + " vs " + x.str());
        d.modes *= t[a];
        d.lead.push_back(t[a]);
    }
    if (t[mode_rank + in_axis_of_t] != x[x.rank() - 1])
        throw ShapeError("contraction channel mismatch: " + t.str() + " vs " + x.str());
    return d;
}

CTensor contract_strided(const CTensor& T, const CTensor& X, bool out_major) {
    const auto d = contract_dims(T.shape(), X.shape(), out_major ? 1 : 0, 2);
    const std::size_t r = T.rank();
    const std::size_t n = out_major ? T.extent(r - 2) : T.extent(r - 1);
    const std::size_t m = out_major ? T.extent(r - 1) : T.extent(r - 2);
    const std::size_t s_in = out_major ? 1 : n;
    const std::size_t s_out = out_major ? m : 1;
    auto out_dims = d.lead;
    out_dims.push_back(n);
    CTensor Y{Shape(out_dims)};
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t l = 0; l < d.modes; ++l) {
            const cdouble* t = T.data() + l * n * m;
            const cdouble* x = X.data() + (b * d.modes + l) * m;
            cdouble* y = Y.data() + (b * d.modes + l) * n;
            for (std::size_t i = 0; i < m; ++i) {
                const cdouble xi = x[i];
                for (std::size_t j = 0; j < n; ++j) y[j] += t[j * s_out + i * s_in] * xi;
            }
        }
    }
    return Y;
}

} // namespace

CTensor contract_channels(const CTensor& T, const CTensor& X) {
    return contract_strided(T, X, true);
}

CTensor contract_modes(const CTensor& T, const CTensor& X) {
    return contract_strided(T, X, false);
}

CTensor contract_diagonal(const CTensor& T, const CTensor& X) {
    const Shape& ts = T.shape();
    const Shape& xs = X.shape();
    if (xs.rank() < ts.rank())
        throw ShapeError("diagonal contraction: " + ts.str() + " vs " + xs.str());
    const std::size_t off = xs.rank() - ts.rank();
    for (std::size_t a = 0; a < ts.rank(); ++a)
        if (ts[a] != xs[off + a])
            throw ShapeError("diagonal contraction: " + ts.str() + " vs " + xs.str());
    CTensor Y(xs);
    const std::size_t per = T.numel();
    const std::size_t batch = X.numel() / per;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < per; ++k) Y[b * per + k] = T[k] * X[b * per + k];
    return Y;
}

CTensor mode_product(const CTensor& X, const CTensor& M, std::size_t mode) {
    if (M.rank() != 2) throw ShapeError("mode_product: matrix expected, got " + M.shape().str());
    if (mode >= X.rank()) throw ShapeError("mode_product: mode out of range for " + X.shape().str());
    const std::size_t I = X.extent(mode);
    const std::size_t J = M.extent(0);
    if (M.extent(1) != I)
        throw ShapeError("mode_product: matrix " + M.shape().str() + " vs extent " +
                         std::to_string(I));
    const auto& dims = X.shape().dims();
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < mode; ++a) outer *= dims[a];
    for (std::size_t a = mode + 1; a < dims.size(); ++a) inner *= dims[a];
    CTensor Y(X.shape().with(mode, J));
    CConstMap m(M.data(), J, I);
    for (std::size_t o = 0; o < outer; ++o) {
        CConstMap x(X.data() + o * I * inner, I, inner);
        CMap y(Y.data() + o * J * inner, J, inner);
        y.noalias() = m * x;
    }
    return Y;
}

CTensor matmul(const CTensor& A, const CTensor& B) {
    if (A.rank() != 2 || B.rank() != 2 || A.extent(1) != B.extent(0))
        throw ShapeError("matmul: " + A.shape().str() + " x " + B.shape().str());
    CTensor C(Shape{A.extent(0), B.extent(1)});
    CMap(C.data(), A.extent(0), B.extent(1)).noalias() =
        CConstMap(A.data(), A.extent(0), A.extent(1)) * CConstMap(B.data(), B.extent(0), B.extent(1));
    return C;
}

CTensor adjoint(const CTensor& A) {
    if (A.rank() != 2) throw ShapeError("adjoint: matrix expected");
    CTensor B(Shape{A.extent(1), A.extent(0)});
    for (std::size_t i = 0; i < A.extent(0); ++i)
        for (std::size_t j = 0; j < A.extent(1); ++j)
            B[j * A.extent(0) + i] = std::conj(A[i * A.extent(1) + j]);
    return B;
}

CTensor transpose(const CTensor& A) {
    if (A.rank() != 2) throw ShapeError("transpose: matrix expected");
    CTensor B(Shape{A.extent(1), A.extent(0)});
    for (std::size_t i = 0; i < A.extent(0); ++i)
        for (std::size_t j = 0; j < A.extent(1); ++j) B[j * A.extent(0) + i] = A[i * A.extent(1) + j];
    return B;
}

CTensor khatri_rao(const CTensor& A, const CTensor& B) {
    if (A.rank() != 2 || B.rank() != 2 || A.extent(1) != B.extent(1))
        throw ShapeError("khatri_rao: " + A.shape().str() + " vs " + B.shape().str());
    const std::size_t I = A.extent(0), J = B.extent(0), R = A.extent(1);
    CTensor C(Shape{I * J, R});
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t j = 0; j < J; ++j)
            for (std::size_t r = 0; r < R; ++r) C[(i * J + j) * R + r] = A[i * R + r] * B[j * R + r];
    return C;
}

CTensor unfold(const CTensor& X, std::size_t mode) {
    if (mode >= X.rank()) throw ShapeError("unfold: mode out of range");
    const auto& dims = X.shape().dims();
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < mode; ++a) outer *= dims[a];
    for (std::size_t a = mode + 1; a < dims.size(); ++a) inner *= dims[a];
    const std::size_t I = dims[mode];
    CTensor M(Shape{I, outer * inner});
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < I; ++i)
            for (std::size_t n = 0; n < inner; ++n)
                M[i * outer * inner + o * inner + n] = X[(o * I + i) * inner + n];
    return M;
}

CTensor fold(const CTensor& M, std::size_t mode, const Shape& shape) {
    const auto& dims = shape.dims();
    if (mode >= dims.size() || M.rank() != 2 || M.extent(0) != dims[mode] ||
        M.numel() != shape.numel())
        throw ShapeError("fold: " + M.shape().str() + " into " + shape.str());
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < mode; ++a) outer *= dims[a];
    for (std::size_t a = mode + 1; a < dims.size(); ++a) inner *= dims[a];
    const std::size_t I = dims[mode];
    CTensor X(shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < I; ++i)
            for (std::size_t n = 0; n < inner; ++n)
                X[(o * I + i) * inner + n] = M[i * outer * inner + o * inner + n];
    return X;
}

CTensor to_complex(const RTensor& x) {
    CTensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i];
    return y;
}

RTensor real_part(const CTensor& x) {
    RTensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i].real();
    return y;
}

double max_abs_diff(const RTensor& a, const RTensor& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double max_abs_diff(const CTensor& a, const CTensor& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double l2_norm(const RTensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s);
}

} // namespace nopkit
