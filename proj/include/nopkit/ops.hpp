// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/tensor.hpp"

#include <cstddef>

namespace nopkit {

/// Per-mode channel contraction, out(..., l, j) = sum_i T(l, j, i) X(..., l, i).
///
/// T has shape modes x n x m (output channel before input channel). X has shape
/// [batch...] x modes x m; any leading axes of X beyond the mode axes of T are
/// treated as batch axes.
[[nodiscard]] CTensor contract_channels(const CTensor& T, const CTensor& X);

/// Same contraction with the weight stored input-major: T has shape modes x m x n,
/// out(..., l, j) = sum_i T(l, i, j) X(..., l, i). This is the layout of a slice of
/// the joint spectral weight tensor.
[[nodiscard]] CTensor contract_modes(const CTensor& T, const CTensor& X);

/// Channel-diagonal contraction, out(..., l, c) = T(l, c) X(..., l, c).
[[nodiscard]] CTensor contract_diagonal(const CTensor& T, const CTensor& X);

/// n-mode product: Y = X x_mode M, with M of shape J x I and I = X.extent(mode).
[[nodiscard]] CTensor mode_product(const CTensor& X, const CTensor& M, std::size_t mode);

/// Complex matrix product of 2-D tensors.
[[nodiscard]] CTensor matmul(const CTensor& A, const CTensor& B);

/// Conjugate transpose of a 2-D tensor.
[[nodiscard]] CTensor adjoint(const CTensor& A);
/// Plain transpose of a 2-D tensor.
[[nodiscard]] CTensor transpose(const CTensor& A);

/// Column-wise Kronecker product: A (I x R), B (J x R) -> (I*J x R), row i*J + j.
[[nodiscard]] CTensor khatri_rao(const CTensor& A, const CTensor& B);

/// Mode-k unfolding to a (extent_k x rest) matrix, columns in row-major order of the
/// remaining axes.
[[nodiscard]] CTensor unfold(const CTensor& X, std::size_t mode);

/// Inverse of unfold for a target shape.
[[nodiscard]] CTensor fold(const CTensor& M, std::size_t mode, const Shape& shape);

[[nodiscard]] CTensor to_complex(const RTensor& x);
[[nodiscard]] RTensor real_part(const CTensor& x);

[[nodiscard]] double max_abs_diff(const RTensor& a, const RTensor& b);
[[nodiscard]] double max_abs_diff(const CTensor& a, const CTensor& b);
[[nodiscard]] double l2_norm(const RTensor& a);

} // namespace nopkit
