// SPDX-License-Identifier: Apache-2.0
#include "nopkit/autodiff.hpp"
#include "nopkit/ops.hpp"
#include "grad_check.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace nopkit;
using namespace nopkit::testing;

namespace {

using Fn = std::function<ad::Var(std::vector<ad::Var>&)>;

ad::Value eval(const std::vector<ad::Value>& inputs, const Fn& f) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& v : inputs) vars.push_back(tape.constant(v));
    return f(vars).value();
}

// <w, J v> by a five-point stencil against <J^T w, v> from the tape, per input.
void check_adjoint(const std::vector<ad::Value>& inputs, const Fn& f, std::uint64_t seed, double tol = 1e-10) {
    std::mt19937_64 gen(seed);
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& v : inputs) vars.push_back(tape.leaf(v));
    const ad::Var y = f(vars);
    const ad::Value w = random_like(y.value(), gen);
    const auto grads = tape.vjp(y, w);
    const double h = 1e-3;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const ad::Value v = random_like(inputs[i], gen);
        auto at = [&](double t) {
            auto in = inputs;
            in[i] = axpy(inputs[i], t, v);
            return inner(w, eval(in, f));
        };
        const double jv = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
        const double vjp = inner(grads.at(vars[i].id()), v);
        EXPECT_NEAR(jv, vjp, tol * std::max(1.0, std::abs(jv))) << "input " << i;
    }
}

} // namespace

TEST(Autodiff, FanOutAccumulates) {
    ad::Tape tape;
    const ad::Var x = tape.leaf(RTensor(Shape{3}, 1.5));
    const auto g = tape.backward(ad::sum(ad::add(x, x)));
    for (double v : std::get<RTensor>(g.at(x.id())).values()) EXPECT_EQ(v, 2.0);
}

TEST(Autodiff, SumOfSquares) {
    std::mt19937_64 gen(1);
    const RTensor x0 = random_real(Shape{4, 5}, gen);
    ad::Tape tape;
    const ad::Var x = tape.leaf(x0);
    const auto g = tape.backward(ad::sum(ad::mul(x, x)));
    const auto& gx = std::get<RTensor>(g.at(x.id()));
    for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_EQ(gx[i], 2.0 * x0[i]);
}

TEST(Autodiff, SpectralChainMatchesFiniteDifferences) {
    std::mt19937_64 gen(2);
    const RTensor x0 = random_real(Shape{6, 8}, gen);
    const CTensor T0 = random_complex(Shape{6, 5}, gen);
    const std::size_t axes[] = {0, 1};
    for (int squared = 0; squared < 2; ++squared) {
        auto loss = [&](ad::Tape& tape, const RTensor& xv, const CTensor& Tv, ad::Var* xo, ad::Var* to) {
            const ad::Var x = tape.leaf(xv);
            const ad::Var T = tape.leaf(Tv);
            if (xo) *xo = x;
            if (to) *to = T;
            ad::Var y = ad::fft_inverse(ad::contract_diagonal(T, ad::fft_forward(x, axes)), axes, xv.shape());
            if (squared) y = ad::mul(y, y);
            return ad::sum(y);
        };
        ad::Tape tape;
        ad::Var xv, tv;
        const auto grads = tape.backward(loss(tape, x0, T0, &xv, &tv));
        const auto& gx = std::get<RTensor>(grads.at(xv.id()));
        const auto& gt = std::get<CTensor>(grads.at(tv.id()));
        const double h = 1e-5;
        auto value = [&](const RTensor& xx, const CTensor& TT) {
            ad::Tape t;
            return loss(t, xx, TT, nullptr, nullptr).real()[0];
        };
        for (std::size_t i = 0; i < x0.numel(); ++i) {
            RTensor a = x0, b = x0;
            a[i] += h;
            b[i] -= h;
            const double fd = (value(a, T0) - value(b, T0)) / (2 * h);
            EXPECT_LE(rel_err(gx[i], fd, 1e-9), 1e-6) << i;
        }
        for (std::size_t i = 0; i < T0.numel(); ++i)
            for (int part = 0; part < 2; ++part) {
                CTensor a = T0, b = T0;
                const cdouble step = part == 0 ? cdouble(h, 0) : cdouble(0, h);
                a[i] += step;
                b[i] -= step;
                const double fd = (value(x0, a) - value(x0, b)) / (2 * h);
                const double g = part == 0 ? gt[i].real() : gt[i].imag();
                EXPECT_LE(rel_err(g, fd, 1e-9), 1e-6) << i;
            }
    }
}

TEST(Autodiff, NonScalarBackwardIsContractViolation) {
    ad::Tape tape;
    const ad::Var x = tape.leaf(RTensor(Shape{2}, 1.0));
    EXPECT_THROW((void)tape.backward(x), ContractError);
    const ad::Var c = tape.leaf(CTensor(Shape{1}));
    EXPECT_THROW((void)tape.backward(c), ContractError);
}

TEST(Autodiff, ZeroLossGivesZeroGradients) {
    ad::Tape tape;
    const ad::Var x = tape.constant(RTensor(Shape{2, 3}));
    const ad::Var W = tape.leaf(RTensor(Shape{4, 3}, 0.7));
    const ad::Var y = ad::linear(x, W);
    const auto g = tape.backward(ad::sum(ad::mul(y, y)));
    for (double v : std::get<RTensor>(g.at(W.id())).values()) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, UnreachedLeafGetsZeros) {
    ad::Tape tape;
    const ad::Var x = tape.leaf(RTensor(Shape{2}, 1.0));
    const ad::Var unused = tape.leaf(CTensor(Shape{3}, cdouble(1, 1)));
    const auto g = tape.backward(ad::sum(x));
    EXPECT_EQ(std::get<CTensor>(g.at(unused.id())), CTensor(Shape{3}));
}

TEST(Autodiff, FftAdjointMatchesDenseDftMatrix) {
    std::mt19937_64 gen(3);
    for (std::size_t s : {7u, 8u}) {
        const std::size_t h = s / 2 + 1;
        const RTensor x0 = random_real(Shape{s}, gen);
        const CTensor Ybar = random_complex(Shape{h}, gen);
        ad::Tape tape;
        const ad::Var x = tape.leaf(x0);
        const std::size_t axes[] = {0};
        const auto g = tape.vjp(ad::fft_forward(x, axes), Ybar);
        const auto& gx = std::get<RTensor>(g.at(x.id()));
        // Dense half-spectrum DFT matrix D (h x s); the real-inner-product adjoint
        // of x -> D x is Re(D^H Ybar).
        for (std::size_t j = 0; j < s; ++j) {
            cdouble acc = 0.0;
            for (std::size_t k = 0; k < h; ++k)
                acc += std::conj(std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * j) / static_cast<double>(s))) * Ybar[k];
            EXPECT_NEAR(gx[j], acc.real(), 1e-12);
        }
        // Same map through the inverse transform: N irfft(Ybar / c), with interior
        // columns counted twice by irfft.
        CTensor scaled = Ybar;
        for (std::size_t k = 0; k < h; ++k) scaled[k] /= half_axis_multiplicity(k, s);
        const RTensor alt = fft_inverse(scaled, axes, Shape{s});
        for (std::size_t j = 0; j < s; ++j) EXPECT_NEAR(gx[j], static_cast<double>(s) * alt[j], 1e-12);
    }
}

TEST(Autodiff, SumOfLossesAccumulates) {
    std::mt19937_64 gen(4);
    const RTensor x0 = random_real(Shape{3, 4}, gen);
    const RTensor W0 = random_real(Shape{2, 4}, gen);
    auto run = [&](int which) {
        ad::Tape tape;
        const ad::Var x = tape.constant(x0);
        const ad::Var W = tape.leaf(W0);
        const ad::Var y = ad::linear(x, W);
        const ad::Var l1 = ad::sum(ad::mul(y, y));
        const ad::Var l2 = ad::sum(ad::gelu(y));
        const ad::Var l = which == 0 ? ad::add(l1, l2) : which == 1 ? l1 : l2;
        return std::get<RTensor>(tape.backward(l).at(W.id()));
    };
    const RTensor both = run(0), a = run(1), b = run(2);
    for (std::size_t i = 0; i < both.numel(); ++i) EXPECT_NEAR(both[i], a[i] + b[i], 1e-12);
}

TEST(Autodiff, DispatcherRejectsUnsupportedAndBadArity) {
    ad::Tape tape;
    const ad::Var x = tape.leaf(RTensor(Shape{2}, 1.0));
    const ad::Var two[] = {x, x};
    EXPECT_EQ(ad::record(ad::Primitive::add, two).real()[0], 2.0);
    EXPECT_THROW((void)ad::record(ad::Primitive::add, std::span<const ad::Var>(two, 1)), ContractError);
    EXPECT_THROW((void)ad::record(static_cast<ad::Primitive>(999), two), ContractError);
    ad::Attributes at;
    at.scalar = 3.0;
    EXPECT_EQ(ad::record(ad::Primitive::scale, std::span<const ad::Var>(two, 1), at).real()[1], 3.0);
}

// Adjoint consistency <J v, w> = <v, J^T w> for every primitive.

TEST(Adjoint, Elementwise) {
    std::mt19937_64 gen(10);
    const RTensor a = random_real(Shape{3, 4}, gen), b = random_real(Shape{3, 4}, gen);
    const CTensor c = random_complex(Shape{5}, gen), e = random_complex(Shape{5}, gen);
    check_adjoint({a, b}, [](auto& v) { return ad::add(v[0], v[1]); }, 1);
    check_adjoint({c, e}, [](auto& v) { return ad::add(v[0], v[1]); }, 2);
    check_adjoint({a, b}, [](auto& v) { return ad::sub(v[0], v[1]); }, 3);
    check_adjoint({c}, [](auto& v) { return ad::scale(v[0], -0.3); }, 4);
    check_adjoint({a, b}, [](auto& v) { return ad::mul(v[0], v[1]); }, 5);
    check_adjoint({a}, [](auto& v) { return ad::sum(v[0]); }, 6);
    check_adjoint({a}, [](auto& v) { return ad::gelu(v[0]); }, 7);
}

TEST(Adjoint, ChannelMaps) {
    std::mt19937_64 gen(11);
    const RTensor x = random_real(Shape{2, 3, 4}, gen);
    const RTensor W = random_real(Shape{5, 4}, gen), b = random_real(Shape{5}, gen);
    const RTensor g = random_real(Shape{4}, gen);
    check_adjoint({x, W}, [](auto& v) { return ad::linear(v[0], v[1]); }, 1);
    check_adjoint({x, W, b}, [](auto& v) { return ad::linear(v[0], v[1], v[2]); }, 2);
    check_adjoint({x, g}, [](auto& v) { return ad::add_channel(v[0], v[1]); }, 3);
    check_adjoint({x, g}, [](auto& v) { return ad::mul_channel(v[0], v[1]); }, 4);
}

TEST(Adjoint, Normalization) {
    std::mt19937_64 gen(12);
    const RTensor x = random_real(Shape{2, 5, 3, 4}, gen);
    check_adjoint({x}, [](auto& v) { return ad::instance_norm(v[0]); }, 1, 1e-9);
    check_adjoint({x}, [](auto& v) { return ad::layer_norm(v[0]); }, 2, 1e-9);
}

TEST(Adjoint, PadCrop) {
    std::mt19937_64 gen(13);
    const RTensor x = random_real(Shape{2, 4, 5, 3}, gen);
    const std::vector<std::size_t> pads{1, 2};
    check_adjoint({x}, [&](auto& v) { return ad::pad_spatial(v[0], pads); }, 1);
    const RTensor y = random_real(Shape{2, 8, 7, 3}, gen);
    check_adjoint({y}, [&](auto& v) { return ad::crop_spatial(v[0], pads); }, 2);
}

TEST(Adjoint, FourierTransforms) {
    std::mt19937_64 gen(14);
    for (const Shape& s : {Shape{2, 8, 6, 3}, Shape{1, 7, 5, 2}, Shape{3, 8, 1}}) {
        std::vector<std::size_t> axes;
        for (std::size_t a = 1; a + 1 < s.rank(); ++a) axes.push_back(a);
        const RTensor x = random_real(s, gen);
        check_adjoint({x}, [&](auto& v) { return ad::fft_forward(v[0], axes); }, 1);
        const CTensor X = random_complex(half_spectrum_shape(s, axes), gen);
        check_adjoint({X}, [&](auto& v) { return ad::fft_inverse(v[0], axes, s); }, 2);
    }
}

TEST(Adjoint, CornerGatherAndEmbed) {
    std::mt19937_64 gen(15);
    const Shape spec{2, 8, 5, 3};
    const std::vector<std::size_t> modes{3, 2};
    const CTensor X = random_complex(spec, gen);
    for (std::size_t c = 0; c < 2; ++c) {
        check_adjoint({X}, [&](auto& v) { return ad::spectral_corner(v[0], modes, c); }, c);
        const CTensor B = random_complex(Shape{2, 3, 2, 3}, gen);
        check_adjoint({B}, [&](auto& v) { return ad::embed_corner(v[0], spec, modes, c); }, 10 + c);
    }
    const std::vector<std::size_t> m1{3};
    check_adjoint({random_complex(Shape{2, 5, 4}, gen)}, [&](auto& v) { return ad::spectral_corner(v[0], m1, 0); }, 20);
}

TEST(Adjoint, Contractions) {
    std::mt19937_64 gen(16);
    const CTensor Tm = random_complex(Shape{3, 2, 4, 5}, gen);
    const CTensor Tc = random_complex(Shape{3, 2, 5, 4}, gen);
    const CTensor X = random_complex(Shape{2, 3, 2, 4}, gen);
    check_adjoint({Tm, X}, [](auto& v) { return ad::contract_modes(v[0], v[1]); }, 1);
    check_adjoint({Tc, X}, [](auto& v) { return ad::contract_channels(v[0], v[1]); }, 2);
    check_adjoint({random_complex(Shape{3, 2, 4}, gen), X}, [](auto& v) { return ad::contract_diagonal(v[0], v[1]); }, 3);
    const CTensor Y = random_complex(Shape{3, 4, 2}, gen);
    for (std::size_t mode = 0; mode < 3; ++mode) {
        const CTensor M = random_complex(Shape{5, Y.extent(mode)}, gen);
        check_adjoint({Y, M}, [mode](auto& v) { return ad::mode_product(v[0], v[1], mode); }, 4 + mode);
    }
    const CTensor A = random_complex(Shape{3, 4}, gen), B = random_complex(Shape{4, 2}, gen);
    check_adjoint({A, B}, [](auto& v) { return ad::matmul(v[0], v[1]); }, 8);
    check_adjoint({A}, [](auto& v) { return ad::transpose(v[0]); }, 9);
    const CTensor K1 = random_complex(Shape{3, 4}, gen), K2 = random_complex(Shape{2, 4}, gen);
    check_adjoint({K1, K2}, [](auto& v) { return ad::khatri_rao(v[0], v[1]); }, 10);
}

TEST(Adjoint, ShapeOps) {
    std::mt19937_64 gen(17);
    const CTensor X = random_complex(Shape{3, 4, 2}, gen);
    check_adjoint({X}, [](auto& v) { return ad::reshape(v[0], Shape{4, 6}); }, 1);
    for (std::size_t axis = 0; axis < 3; ++axis)
        check_adjoint({X}, [axis](auto& v) { return ad::index_select(v[0], axis, 1); }, 2 + axis);
    // Gather with repeats and omissions exercises the scatter-add.
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 30; ++i) idx.push_back((7 * i + 3) % 20);
    check_adjoint({X}, [idx](auto& v) { return ad::gather(v[0], idx, Shape{5, 6}); }, 6);
}

TEST(Adjoint, Losses) {
    std::mt19937_64 gen(18);
    const RTensor p = random_real(Shape{3, 6, 5, 2}, gen);
    const RTensor t = random_real(Shape{3, 6, 5, 2}, gen);
    check_adjoint({p}, [&](auto& v) { return ad::rel_l2_loss(v[0], t); }, 1, 1e-9);
    check_adjoint({p}, [&](auto& v) { return ad::rel_h1_loss(v[0], t); }, 2, 1e-9);
    const RTensor p1 = random_real(Shape{2, 9, 1}, gen), t1 = random_real(Shape{2, 9, 1}, gen);
    check_adjoint({p1}, [&](auto& v) { return ad::rel_h1_loss(v[0], t1); }, 3, 1e-9);
}

TEST(Autodiff, FullImprovedBlockMatchesFiniteDifferences) {
    FnoConfig c;
    c.d = 2;
    c.modes = {4, 4};
    c.width = 4;
    c.layers = 1;
    c.projection_hidden = 8;
    c.skip = SkipKind::linear;
    c.norm = NormKind::instance;
    c.mlp_expansion = 0.5;
    FnoModel model(c, 7);
    std::mt19937_64 gen(8);
    const RTensor a = random_real(Shape{2, 16, 16, 1}, gen);
    const auto res = check_model_gradients(model, a, 9);
    EXPECT_EQ(res.failed, 0u) << "worst " << res.worst << " at " << res.worst_name;
    EXPECT_GT(res.checked, 1000u);
}
