// SPDX-License-Identifier: Apache-2.0
#include "nopkit/fft.hpp"

#include <fftw3.h>

#include <mutex>
#include <sstream>
#include <string>
#include <unordered_map>

namespace nopkit {

namespace {

enum class Kind { r2c, c2r };

struct GuruLayout {
    std::vector<fftw_iodim64> dims;
    std::vector<fftw_iodim64> loops;
};

std::string plan_key(Kind kind, const GuruLayout& g) {
    std::ostringstream os;
    os << (kind == Kind::r2c ? 'f' : 'b');
    for (const auto& d : g.dims) os << '|' << d.n << ',' << d.is << ',' << d.os;
    os << '#';
    for (const auto& d : g.loops) os << '|' << d.n << ',' << d.is << ',' << d.os;
    return os.str();
}

// FFTW's planner is not re-entrant; execution of a finished plan is.
class PlanCache {
public:
    ~PlanCache() {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

    fftw_plan get(Kind kind, const GuruLayout& g, double* real, fftw_complex* cplx) {
        const auto key = plan_key(kind, g);
        std::lock_guard lock(mutex_);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED |
                               (kind == Kind::c2r ? FFTW_DESTROY_INPUT : 0U);
        fftw_plan plan = nullptr;
        if (kind == Kind::r2c) {
            plan = fftw_plan_guru64_dft_r2c(static_cast<int>(g.dims.size()), g.dims.data(),
                                            static_cast<int>(g.loops.size()), g.loops.data(),
                                            real, cplx, flags);
        } else {
            plan = fftw_plan_guru64_dft_c2r(static_cast<int>(g.dims.size()), g.dims.data(),
                                            static_cast<int>(g.loops.size()), g.loops.data(),
                                            cplx, real, flags);
        }
        if (!plan) throw ShapeError("FFTW could not plan transform " + key);
        plans_.emplace(key, plan);
        return plan;
    }

private:
    std::mutex mutex_;
    std::unordered_map<std::string, fftw_plan> plans_;
};

PlanCache& plan_cache() {
    static PlanCache cache;
    return cache;
}

void check_axes(const Shape& shape, std::span<const std::size_t> axes) {
    if (axes.empty()) throw ShapeError("fft: no spatial axes given");
    std::vector<bool> seen(shape.rank(), false);
    for (auto a : axes) {
        if (a >= shape.rank())
            throw ShapeError("fft: axis " + std::to_string(a) + " invalid for shape " + shape.str());
        if (seen[a]) throw ShapeError("fft: repeated axis " + std::to_string(a));
        seen[a] = true;
        if (shape[a] < 2)
            throw ShapeError("fft: axis " + std::to_string(a) + " has extent < 2 in " + shape.str());
    }
}

// Strides of the real array come from `real_shape`, strides of the spectrum from
// its half-spectrum shape; "in" and "out" follow the transform direction.
GuruLayout make_layout(const Shape& real_shape, const Shape& half_shape,
                       std::span<const std::size_t> axes, Kind kind) {
    const auto rs = real_shape.strides();
    const auto cs = half_shape.strides();
    std::vector<bool> transformed(real_shape.rank(), false);
    GuruLayout g;
    for (auto a : axes) {
        transformed[a] = true;
        fftw_iodim64 d{};
        d.n = static_cast<ptrdiff_t>(real_shape[a]);
        d.is = static_cast<ptrdiff_t>(kind == Kind::r2c ? rs[a] : cs[a]);
        d.os = static_cast<ptrdiff_t>(kind == Kind::r2c ? cs[a] : rs[a]);
        g.dims.push_back(d);
    }
    for (std::size_t a = 0; a < real_shape.rank(); ++a) {
        if (transformed[a]) continue;
        fftw_iodim64 d{};
        d.n = static_cast<ptrdiff_t>(real_shape[a]);
        d.is = static_cast<ptrdiff_t>(kind == Kind::r2c ? rs[a] : cs[a]);
        d.os = static_cast<ptrdiff_t>(kind == Kind::r2c ? cs[a] : rs[a]);
        g.loops.push_back(d);
    }
    return g;
}

} // namespace

Shape half_spectrum_shape(const Shape& real_shape, std::span<const std::size_t> spatial_dims) {
    check_axes(real_shape, spatial_dims);
    const auto last = spatial_dims.back();
    return real_shape.with(last, real_shape[last] / 2 + 1);
}

CTensor fft_forward(const RTensor& x, std::span<const std::size_t> spatial_dims) {
    const Shape half = half_spectrum_shape(x.shape(), spatial_dims);
    CTensor out(half);
    const auto layout = make_layout(x.shape(), half, spatial_dims, Kind::r2c);
    auto* in = const_cast<double*>(x.data());
    auto* o = reinterpret_cast<fftw_complex*>(out.data());
    fftw_plan plan = plan_cache().get(Kind::r2c, layout, in, o);
    fftw_execute_dft_r2c(plan, in, o);
    return out;
}

RTensor fft_inverse(const CTensor& X, std::span<const std::size_t> spatial_dims,
                    const Shape& out_shape) {
    const Shape half = half_spectrum_shape(out_shape, spatial_dims);
    if (!(half == X.shape()))
        throw ShapeError("fft_inverse: spectrum " + X.shape().str() +
                         " inconsistent with output " + out_shape.str());
    RTensor out(out_shape, uninitialized);
    CTensor scratch = X; // c2r overwrites its input
    const auto layout = make_layout(out_shape, half, spatial_dims, Kind::c2r);
    auto* in = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan = plan_cache().get(Kind::c2r, layout, out.data(), in);
    fftw_execute_dft_c2r(plan, in, out.data());
    double n = 1.0;
    for (auto a : spatial_dims) n *= static_cast<double>(out_shape[a]);
    const double inv = 1.0 / n;
    for (auto& v : out.values()) v *= inv;
    return out;
}

namespace {

// Resample one axis: rfft along it, adjust the half spectrum, irfft at the new length.
RTensor resample_axis(const RTensor& x, std::size_t axis, std::size_t m) {
    const std::size_t n = x.extent(axis);
    if (n == m) return x;
    const std::size_t ax[] = {axis};
    const CTensor X = fft_forward(x, ax);
    const Shape out_shape = x.shape().with(axis, m);
    CTensor Y(half_spectrum_shape(out_shape, ax));

    const auto& dims = x.shape().dims();
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < axis; ++a) outer *= dims[a];
    for (std::size_t a = axis + 1; a < dims.size(); ++a) inner *= dims[a];
    const std::size_t hx = n / 2 + 1, hy = m / 2 + 1;
    const double scale = static_cast<double>(m) / static_cast<double>(n);

    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            auto src = [&](std::size_t k) { return X[(o * hx + k) * inner + i]; };
            auto dst = [&](std::size_t k) -> cdouble& { return Y[(o * hy + k) * inner + i]; };
            if (m > n) {
                for (std::size_t k = 0; k < hx; ++k) dst(k) = src(k) * scale;
                // The old Nyquist pair splits evenly between +n/2 and -n/2.
                if (n % 2 == 0) dst(n / 2) = cdouble(0.5 * src(n / 2).real() * scale, 0.0);
            } else {
                for (std::size_t k = 0; k < hy; ++k) dst(k) = src(k) * scale;
                // Modes +m/2 and -m/2 alias onto the new Nyquist bin.
                if (m % 2 == 0) dst(m / 2) = cdouble(2.0 * src(m / 2).real() * scale, 0.0);
            }
        }
    }
    return fft_inverse(Y, ax, out_shape);
}

} // namespace

RTensor resample_spectral(const RTensor& x, std::span<const std::size_t> spatial_dims,
                          std::span<const std::size_t> new_extents) {
    if (spatial_dims.size() != new_extents.size())
        throw ShapeError("resample_spectral: axes and extents differ in count");
    check_axes(x.shape(), spatial_dims);
    RTensor y = x;
    for (std::size_t i = 0; i < spatial_dims.size(); ++i) {
        if (new_extents[i] < 2) throw ShapeError("resample_spectral: target extent < 2");
        y = resample_axis(y, spatial_dims[i], new_extents[i]);
    }
    return y;
}

} // namespace nopkit
