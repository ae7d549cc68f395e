// SPDX-License-Identifier: Apache-2.0
#include "nopkit/fft.hpp"
#include "nopkit/io.hpp"
#include "nopkit/ops.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace nopkit;
using namespace nopkit::testing;

namespace {

// Full spectrum of a real array by the O(N^2) sum, cut to the half layout.
CTensor naive_half_spectrum(const RTensor& x) {
    const CTensor full = naive_dft(to_complex(x), -1);
    const auto& dims = x.shape().dims();
    const std::vector<std::size_t> half_dims = [&] {
        auto h = dims;
        h.back() = dims.back() / 2 + 1;
        return h;
    }();
    CTensor out{Shape(half_dims)};
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = full[ravel(unravel(i, half_dims), dims)];
    return out;
}

// Inverse of an arbitrary half spectrum: interior columns of the last axis are
// completed by conjugate reflection, then the real part of the unnormalized
// inverse DFT is divided by N.
RTensor naive_inverse(const CTensor& half, const Shape& out_shape) {
    const auto& dims = out_shape.dims();
    const auto& hd = half.shape().dims();
    const std::size_t s = dims.back();
    CTensor full(out_shape);
    for (std::size_t i = 0; i < full.numel(); ++i) {
        auto k = unravel(i, dims);
        const std::size_t kl = k.back();
        if (kl < hd.back() && (kl == 0 || 2 * kl == s || 2 * kl < s)) {
            full[i] = half[ravel(k, hd)];
        } else {
            for (std::size_t a = 0; a < k.size(); ++a) k[a] = (dims[a] - k[a]) % dims[a];
            full[i] = std::conj(half[ravel(k, hd)]);
        }
    }
    const CTensor inv = naive_dft(full, +1);
    RTensor out(out_shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = inv[i].real() / static_cast<double>(out.numel());
    return out;
}

} // namespace

TEST(Shape, RejectsZeroExtent) {
    EXPECT_THROW(Shape({3, 0}), ShapeError);
    EXPECT_EQ(Shape({2, 3, 4}).numel(), 24u);
    EXPECT_EQ(Shape({2, 3, 4}).strides(), (std::vector<std::size_t>{12, 4, 1}));
}

TEST(Tensor, RejectsLengthMismatch) {
    EXPECT_THROW(RTensor(Shape{2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(Fft, ConstantFieldHasOnlyDc) {
    const double c = 1.75;
    const std::size_t axes[] = {0, 1};
    const CTensor X = fft_forward(RTensor(Shape{4, 4}, c), axes);
    ASSERT_EQ(X.shape(), (Shape{4, 3}));
    EXPECT_DOUBLE_EQ(X[0].real(), 16 * c);
    for (std::size_t i = 1; i < X.numel(); ++i) EXPECT_LT(std::abs(X[i]), 1e-13);
}

TEST(Fft, ImpulseHasFlatSpectrum) {
    RTensor x(Shape{8});
    x[0] = 1.0;
    const std::size_t axes[] = {0};
    const CTensor X = fft_forward(x, axes);
    ASSERT_EQ(X.numel(), 5u);
    for (const auto& v : X.values()) EXPECT_LT(std::abs(v - cdouble(1.0, 0.0)), 1e-15);
}

TEST(Fft, ParsevalAgainstNaiveDft) {
    std::mt19937_64 gen(1);
    const RTensor x = random_real(Shape{6, 6}, gen);
    const std::size_t axes[] = {0, 1};
    const CTensor X = fft_forward(x, axes);
    const CTensor oracle = naive_half_spectrum(x);
    EXPECT_LT(max_abs_diff(X, oracle), 1e-12);
    // Expand the half spectrum by conjugate symmetry and compare energies.
    double spec = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            const cdouble v = j <= 3 ? X[i * 4 + j] : std::conj(X[((6 - i) % 6) * 4 + (6 - j)]);
            spec += std::norm(v);
        }
    double energy = 0.0;
    for (double v : x.values()) energy += v * v;
    EXPECT_NEAR(energy, spec / 36.0, 1e-12);
}

TEST(Fft, RoundTrip) {
    std::mt19937_64 gen(2);
    for (const Shape& s : {Shape{8, 8}, Shape{2, 7, 5, 3}, Shape{3, 16, 2}, Shape{9}}) {
        const RTensor x = random_real(s, gen);
        std::vector<std::size_t> axes;
        if (s.rank() == 1) {
            axes = {0};
        } else if (s.rank() == 2) {
            axes = {0, 1};
        } else {
            for (std::size_t a = 1; a + 1 < s.rank(); ++a) axes.push_back(a);
        }
        const RTensor y = fft_inverse(fft_forward(x, axes), axes, s);
        EXPECT_LT(max_abs_diff(x, y), 1e-12) << s.str();
    }
}

TEST(Fft, InverseOfDc) {
    CTensor X(Shape{4, 3});
    X[0] = 16 * 0.5;
    const std::size_t axes[] = {0, 1};
    const RTensor x = fft_inverse(X, axes, Shape{4, 4});
    for (double v : x.values()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(Fft, InverseMatchesNaiveOracle) {
    std::mt19937_64 gen(3);
    for (const Shape& s : {Shape{6, 6}, Shape{5, 7}, Shape{4, 5}, Shape{8}}) {
        const std::vector<std::size_t> axes = s.rank() == 1 ? std::vector<std::size_t>{0} : std::vector<std::size_t>{0, 1};
        const CTensor H = random_complex(half_spectrum_shape(s, axes), gen);
        EXPECT_LT(max_abs_diff(fft_inverse(H, axes, s), naive_inverse(H, s)), 1e-12) << s.str();
    }
}

TEST(Fft, Linearity) {
    std::mt19937_64 gen(4);
    const RTensor x = random_real(Shape{2, 6, 4, 3}, gen);
    const RTensor y = random_real(Shape{2, 6, 4, 3}, gen);
    const std::size_t axes[] = {1, 2};
    RTensor z(x.shape());
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = 1.5 * x[i] - 0.25 * y[i];
    const CTensor X = fft_forward(x, axes), Y = fft_forward(y, axes), Z = fft_forward(z, axes);
    CTensor W(X.shape());
    for (std::size_t i = 0; i < W.numel(); ++i) W[i] = 1.5 * X[i] - 0.25 * Y[i];
    EXPECT_LT(max_abs_diff(W, Z), 1e-12);
}

TEST(Fft, ErrorsOnBadAxes) {
    const RTensor x(Shape{4, 4});
    const std::size_t bad[] = {2};
    EXPECT_THROW((void)fft_forward(x, bad), ShapeError);
    const std::size_t rep[] = {0, 0};
    EXPECT_THROW((void)fft_forward(x, rep), ShapeError);
    const std::size_t ok[] = {0, 1};
    EXPECT_THROW((void)fft_inverse(CTensor(Shape{4, 4}), ok, Shape{4, 4}), ShapeError);
}

TEST(Contract, IdentityScalarAndLoopOracle) {
    std::mt19937_64 gen(5);
    // Identity matrix at every mode.
    CTensor I(Shape{3, 2, 4, 4});
    for (std::size_t l = 0; l < 6; ++l)
        for (std::size_t j = 0; j < 4; ++j) I[l * 16 + j * 4 + j] = 1.0;
    const CTensor X = random_complex(Shape{3, 2, 4}, gen);
    EXPECT_EQ(contract_channels(I, X), X);
    // Scalar case.
    const CTensor t = random_complex(Shape{5, 1, 1}, gen);
    const CTensor x = random_complex(Shape{5, 1}, gen);
    const CTensor y = contract_channels(t, x);
    for (std::size_t l = 0; l < 5; ++l) EXPECT_LT(std::abs(y[l] - t[l] * x[l]), 1e-15);
    // Triple loop on random instances, including a leading batch axis.
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<std::size_t> ext(1, 4), ch(1, 5);
        const std::size_t a = ext(gen), b = ext(gen), m = ch(gen), n = ch(gen);
        const CTensor T = random_complex(Shape{a, b, n, m}, gen);
        const CTensor Xh = random_complex(Shape{2, a, b, m}, gen);
        const CTensor Y = contract_channels(T, Xh);
        CTensor Z(Shape{2, a, b, n});
        for (std::size_t bb = 0; bb < 2; ++bb)
            for (std::size_t l1 = 0; l1 < a; ++l1)
                for (std::size_t l2 = 0; l2 < b; ++l2)
                    for (std::size_t j = 0; j < n; ++j) {
                        cdouble acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i) acc += T.at({l1, l2, j, i}) * Xh.at({bb, l1, l2, i});
                        Z.at({bb, l1, l2, j}) = acc;
                    }
        EXPECT_LT(max_abs_diff(Y, Z), 1e-13);
        // The input-major layout is the same contraction with the channel axes swapped.
        CTensor Tt(Shape{a, b, m, n});
        for (std::size_t l1 = 0; l1 < a; ++l1)
            for (std::size_t l2 = 0; l2 < b; ++l2)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) Tt.at({l1, l2, i, j}) = T.at({l1, l2, j, i});
        EXPECT_LT(max_abs_diff(contract_modes(Tt, Xh), Z), 1e-13);
    }
    EXPECT_THROW((void)contract_channels(random_complex(Shape{3, 2, 2}, gen), random_complex(Shape{3, 3}, gen)),
                 ShapeError);
}

TEST(ModeProduct, IdentityMatrixCaseAndUnfoldOracle) {
    std::mt19937_64 gen(6);
    const CTensor X = random_complex(Shape{3, 4, 5}, gen);
    CTensor I(Shape{4, 4});
    for (std::size_t i = 0; i < 4; ++i) I[i * 5] = 1.0;
    EXPECT_EQ(mode_product(X, I, 1), X);

    const CTensor A = random_complex(Shape{2, 3}, gen);
    const CTensor M = random_complex(Shape{4, 2}, gen);
    EXPECT_LT(max_abs_diff(mode_product(A, M, 0), matmul(M, A)), 1e-15);

    const CTensor M2 = random_complex(Shape{2, 4}, gen);
    const CTensor oracle = fold(matmul(M2, unfold(X, 1)), 1, Shape{3, 2, 5});
    EXPECT_LT(max_abs_diff(mode_product(X, M2, 1), oracle), 1e-13);
    EXPECT_THROW((void)mode_product(X, random_complex(Shape{2, 3}, gen), 1), ShapeError);
}

TEST(ModeProduct, AssociativeAcrossModes) {
    std::mt19937_64 gen(7);
    const CTensor X = random_complex(Shape{3, 4, 2}, gen);
    const CTensor A = random_complex(Shape{5, 3}, gen);
    const CTensor B = random_complex(Shape{2, 2}, gen);
    const CTensor one = mode_product(mode_product(X, A, 0), B, 2);
    const CTensor two = mode_product(mode_product(X, B, 2), A, 0);
    EXPECT_LT(max_abs_diff(one, two), 1e-12);
}

TEST(Resample, IdentitySineAndBandLimit) {
    std::mt19937_64 gen(8);
    const std::size_t ax1[] = {0};
    RTensor x(Shape{32});
    for (std::size_t i = 0; i < 32; ++i) x[i] = std::sin(2.0 * std::numbers::pi * 3.0 * i / 32.0 + 0.4);
    const std::size_t same[] = {32};
    EXPECT_LT(max_abs_diff(resample_spectral(x, ax1, same), x), 1e-12);
    const std::size_t up[] = {64};
    const RTensor y = resample_spectral(x, ax1, up);
    for (std::size_t i = 0; i < 64; ++i)
        EXPECT_NEAR(y[i], std::sin(2.0 * std::numbers::pi * 3.0 * i / 64.0 + 0.4), 1e-10);

    // Band-limited 2-D field (modes below 8) survives 32 -> 16 -> 32.
    RTensor f(Shape{1, 32, 32, 1});
    std::normal_distribution<double> nd;
    std::vector<double> coef(2 * 7 * 7);
    for (auto& c : coef) c = nd(gen);
    for (std::size_t i = 0; i < 32; ++i)
        for (std::size_t j = 0; j < 32; ++j) {
            double v = 0.0;
            for (std::size_t p = 0; p < 7; ++p)
                for (std::size_t q = 0; q < 7; ++q) {
                    const double th = 2.0 * std::numbers::pi * (static_cast<double>(p * i) + static_cast<double>(q * j)) / 32.0;
                    v += coef[p * 7 + q] * std::cos(th) + coef[49 + p * 7 + q] * std::sin(th);
                }
            f[i * 32 + j] = v;
        }
    const std::size_t ax2[] = {1, 2};
    const std::size_t down[] = {16, 16};
    const std::size_t back[] = {32, 32};
    const RTensor g = resample_spectral(resample_spectral(f, ax2, down), ax2, back);
    EXPECT_LT(max_abs_diff(f, g), 1e-10);
}

TEST(TensorRecord, RoundTripsBothDtypes) {
    std::mt19937_64 gen(9);
    const RTensor r = random_real(Shape{2, 3, 4}, gen);
    const CTensor c = random_complex(Shape{5, 1}, gen);
    std::stringstream ss;
    write_tensor(ss, r);
    write_tensor(ss, c);
    EXPECT_EQ(std::get<RTensor>(read_tensor(ss)), r);
    EXPECT_EQ(std::get<CTensor>(read_tensor(ss)), c);

    std::stringstream head;
    write_tensor(head, RTensor(Shape{1}, 2.0));
    const std::string bytes = head.str();
    EXPECT_EQ(bytes.substr(0, 4), "NTNS");
    EXPECT_EQ(bytes.size(), 4u + 4u + 1u + 1u + 8u + 8u);

    std::stringstream bad("NTNX");
    EXPECT_THROW((void)read_tensor(bad), IoError);
}
