// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace nopkit {

/// Real-to-complex transform over `spatial_dims` (unnormalized, e^{-2 pi i k j / s}).
/// Every listed axis keeps its full spectrum except the last one listed, which
/// stores the half spectrum of length s/2 + 1.
[[nodiscard]] CTensor fft_forward(const RTensor& x, std::span<const std::size_t> spatial_dims);

/// Inverse of fft_forward with 1/N normalization. `out_shape` is the shape of the
/// real result (it fixes the parity of the half-spectrum axis).
///
/// For a half spectrum that is not Hermitian-consistent the result is the real
/// linear map x_j = (1/N) Re sum_k c_k X_k e^{+2 pi i k j / s}, where c_k = 1 on
/// the zero and Nyquist columns of the half axis and 2 elsewhere.
[[nodiscard]] RTensor fft_inverse(const CTensor& X, std::span<const std::size_t> spatial_dims,
                                  const Shape& out_shape);

/// Shape of the half spectrum produced by fft_forward.
[[nodiscard]] Shape half_spectrum_shape(const Shape& real_shape,
                                        std::span<const std::size_t> spatial_dims);

/// Weight c_k of a half-axis column k for a real extent s (1 for k = 0 and the
/// Nyquist column, 2 for interior columns).
[[nodiscard]] inline double half_axis_multiplicity(std::size_t k, std::size_t s) noexcept {
    if (k == 0) return 1.0;
    if (s % 2 == 0 && k == s / 2) return 1.0;
    return 2.0;
}

/// Signed integer frequency of FFT bin k on an axis of extent s.
[[nodiscard]] inline long signed_frequency(std::size_t k, std::size_t s) noexcept {
    return (2 * k > s) ? static_cast<long>(k) - static_cast<long>(s) : static_cast<long>(k);
}

/// Band-limited resampling: the spectrum is truncated or zero-padded per axis and
/// rescaled so that sampled values of a trigonometric polynomial are preserved.
[[nodiscard]] RTensor resample_spectral(const RTensor& x, std::span<const std::size_t> spatial_dims,
                                        std::span<const std::size_t> new_extents);

} // namespace nopkit
