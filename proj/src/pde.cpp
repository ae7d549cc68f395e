// SPDX-License-Identifier: Apache-2.0
#include "nopkit/pde.hpp"

#include "nopkit/fft.hpp"
#include "nopkit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace nopkit {

// ---------------------------------------------------------------------------
// Random fields

GrfSpec GrfSpec::navier_stokes() {
    GrfSpec g;
    g.scale = 27.0;
    g.shift = 9.0;
    g.power = 4.0;
    g.d = 2;
    g.exclude_zero_mode = true;
    return g;
}

GrfSpec GrfSpec::burgers() {
    GrfSpec g;
    g.scale = std::pow(3.0, 2.5);
    g.shift = 9.0;
    g.power = 3.0;
    g.d = 1;
    return g;
}

double GrfSpec::eigenvalue(double k_squared) const { return scale * std::pow(k_squared + shift, -power); }

void GrfSpec::validate() const {
    if (d < 1 || d > 2) throw ConfigError("grf.d must be 1 or 2");
    if (scale < 0.0) throw ConfigError("grf.scale must be non-negative");
    if (shift <= 0.0 && !exclude_zero_mode) throw ConfigError("grf.shift must be positive when the zero mode is kept");
}

RTensor sample_grf(const GrfSpec& spec, std::span<const std::size_t> extents, std::uint64_t seed) {
    spec.validate();
    if (extents.size() != spec.d) throw ShapeError("sample_grf: need one extent per dimension");
    const Shape shape{std::vector<std::size_t>(extents.begin(), extents.end())};
    // White noise has E|w_hat_k|^2 = N, so w_hat_k / sqrt(N) is a unit complex normal
    // with the Hermitian pairing of a real field built in.
    RTensor noise(shape);
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal;
    for (auto& v : noise.values()) v = normal(gen);
    std::vector<std::size_t> axes(spec.d);
    for (std::size_t a = 0; a < spec.d; ++a) axes[a] = a;
    CTensor W = fft_forward(noise, axes);
    const double n_total = static_cast<double>(shape.numel());

    const auto& hs = W.shape();
    for (std::size_t f = 0; f < W.numel(); ++f) {
        std::size_t rest = f;
        double k2 = 0.0;
        bool nyquist = false;
        for (std::size_t a = spec.d; a-- > 0;) {
            const std::size_t idx = rest % hs[a];
            rest /= hs[a];
            const std::size_t s = extents[a];
            if (s % 2 == 0 && idx == s / 2) nyquist = true;
            const double k = static_cast<double>(signed_frequency(idx, s));
            k2 += k * k;
        }
        const bool zero = k2 == 0.0;
        if (nyquist || (zero && spec.exclude_zero_mode)) {
            W[f] = 0.0;
            continue;
        }
        // Field = sum_k c_k e^{ikx} = fft_inverse(N c), with c_k = sqrt(lambda_k) w_hat_k / sqrt(N).
        W[f] *= std::sqrt(spec.eigenvalue(k2) * n_total);
    }
    return fft_inverse(W, axes, shape);
}

// ---------------------------------------------------------------------------
// Solvers

void BurgersConfig::validate() const {
    if (!(nu > 0.0)) throw ConfigError("burgers.nu must be positive");
    if (!(T >= 0.0)) throw ConfigError("burgers.T must be non-negative");
    if (dt < 0.0) throw ConfigError("burgers.dt must be non-negative");
}

void NsConfig::validate() const {
    if (!(re > 0.0)) throw ConfigError("ns.re must be positive");
    if (!(T >= 0.0)) throw ConfigError("ns.T must be non-negative");
    if (dt < 0.0) throw ConfigError("ns.dt must be non-negative");
}

std::string to_string(NsIntegrator i) { return i == NsIntegrator::imex ? "imex" : "heun"; }

NsIntegrator parse_ns_integrator(const std::string& s) {
    if (s == "imex") return NsIntegrator::imex;
    if (s == "heun") return NsIntegrator::heun;
    throw ConfigError("unknown integrator '" + s + "'");
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Spatial extents of a field with optional trailing singleton axes.
std::vector<std::size_t> field_extents(const RTensor& x, std::size_t d, const char* what) {
    if (x.rank() < d) throw ShapeError(std::string(what) + ": field rank too small");
    for (std::size_t a = d; a < x.rank(); ++a)
        if (x.extent(a) != 1) throw ShapeError(std::string(what) + ": expected a single field, got " + x.shape().str());
    std::vector<std::size_t> e(x.shape().dims().begin(), x.shape().dims().begin() + static_cast<long>(d));
    for (auto s : e)
        if (s < 4 || s % 2 != 0) throw ShapeError(std::string(what) + ": extents must be even and at least 4");
    return e;
}

bool all_finite(const CTensor& X) {
    for (const auto& v : X.values())
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    return true;
}

std::size_t step_count(double T, double dt_max) {
    if (T == 0.0) return 0;
    return static_cast<std::size_t>(std::ceil(T / dt_max - 1e-9));
}

// Heun on a spectral state: y* = y + dt R(y); y' = y + dt/2 (R(y) + R(y*)).
template <class Rhs>
void heun_step(CTensor& y, double dt, Rhs&& rhs) {
    const CTensor r0 = rhs(y);
    CTensor pred = y;
    for (std::size_t i = 0; i < y.numel(); ++i) pred[i] += dt * r0[i];
    const CTensor r1 = rhs(pred);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += 0.5 * dt * (r0[i] + r1[i]);
}

} // namespace

RTensor solve_burgers(const RTensor& u0, const BurgersConfig& cfg, SolverStats* stats) {
    cfg.validate();
    const auto ext = field_extents(u0, 1, "solve_burgers");
    const std::size_t s = ext[0], h = s / 2 + 1;
    const Shape grid{s};
    const std::size_t axes[] = {0};
    const double dx = kTwoPi / static_cast<double>(s);

    double umax = 0.0;
    for (double v : u0.values()) umax = std::max(umax, std::abs(v));
    double dt_max = cfg.dt;
    if (dt_max == 0.0) {
        const double kmax = static_cast<double>(s / 2);
        dt_max = 1.0 / (cfg.nu * kmax * kmax);
        if (umax > 0.0) dt_max = std::min(dt_max, 0.5 * dx / umax);
    }
    const std::size_t steps = step_count(cfg.T, dt_max);
    const double dt = steps ? cfg.T / static_cast<double>(steps) : 0.0;

    std::vector<double> k(h), mask(h, 1.0);
    for (std::size_t j = 0; j < h; ++j) {
        k[j] = static_cast<double>(j);
        if (cfg.dealias && 3 * j >= s) mask[j] = 0.0;
        if (j == s / 2) mask[j] = 0.0;  // the Nyquist derivative of a real field is dropped
    }
    CTensor U = fft_forward(u0.reshaped(grid), axes);
    double max_u = umax;
    auto rhs = [&](const CTensor& Y) {
        CTensor Yd = Y;
        for (std::size_t j = 0; j < h; ++j) Yd[j] *= mask[j];
        RTensor u = fft_inverse(Yd, axes, grid);
        for (auto& v : u.values()) {
            max_u = std::max(max_u, std::abs(v));
            v = 0.5 * v * v;
        }
        CTensor R = fft_forward(u, axes);
        for (std::size_t j = 0; j < h; ++j)
            R[j] = -cdouble(0.0, k[j]) * mask[j] * R[j] - cfg.nu * k[j] * k[j] * Y[j];
        return R;
    };
    for (std::size_t n = 0; n < steps; ++n) {
        heun_step(U, dt, rhs);
        if (!all_finite(U)) throw SolverError("burgers: non-finite state at step " + std::to_string(n + 1));
    }
    if (stats) {
        stats->steps = steps;
        stats->dt = dt;
        stats->max_cfl = max_u * dt / dx;
    }
    return fft_inverse(U, axes, grid).reshaped(u0.shape());
}

RTensor solve_ns(const RTensor& f, const NsConfig& cfg, SolverStats* stats) {
    cfg.validate();
    const auto ext = field_extents(f, 2, "solve_ns");
    if (ext[0] != ext[1]) throw ShapeError("solve_ns: grid must be square");
    const std::size_t s = ext[0], h = s / 2 + 1;
    const Shape grid{s, s};
    const std::size_t axes[] = {0, 1};
    const double dx = kTwoPi / static_cast<double>(s);
    double fmean = 0.0, fmax = 0.0;
    for (double v : f.values()) {
        fmean += v;
        fmax = std::max(fmax, std::abs(v));
    }
    fmean /= static_cast<double>(s * s);
    if (std::abs(fmean) > 1e-12 * std::max(1.0, fmax))
        throw ContractError("solve_ns: forcing must have zero mean (mean " + std::to_string(fmean) + ")");

    const double nu = 1.0 / cfg.re;
    const std::size_t steps = step_count(cfg.T, cfg.dt == 0.0 ? 0.01 : cfg.dt);
    const double dt = steps ? cfg.T / static_cast<double>(steps) : 0.0;

    const std::size_t M = s * h;
    std::vector<double> k0(M), k1(M), k2(M), inv_k2(M), mask(M, 1.0), decay(M);
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < h; ++j) {
            const std::size_t m = i * h + j;
            k0[m] = static_cast<double>(signed_frequency(i, s));
            k1[m] = static_cast<double>(j);
            k2[m] = k0[m] * k0[m] + k1[m] * k1[m];
            inv_k2[m] = k2[m] > 0.0 ? 1.0 / k2[m] : 0.0;
            if (cfg.dealias && (3 * std::abs(static_cast<long>(k0[m])) >= static_cast<long>(s) || 3 * j >= s))
                mask[m] = 0.0;
            if (i == s / 2 || j == s / 2) mask[m] = 0.0;
            decay[m] = std::exp(-nu * k2[m] * dt);
        }
    const CTensor F = fft_forward(f.reshaped(grid), axes);
    double max_u = 0.0;

    // Forcing minus dealiased advection, u = (-d1 phi, d0 phi), phi_hat = w_hat / |k|^2.
    auto forcing_minus_advection = [&](const CTensor& Wh) {
        CTensor a(Wh.shape()), b(Wh.shape()), c(Wh.shape()), e(Wh.shape());
        const cdouble I(0.0, 1.0);
        for (std::size_t m = 0; m < M; ++m) {
            const cdouble w = mask[m] * Wh[m];
            const cdouble phi = w * inv_k2[m];
            a[m] = -I * k1[m] * phi;  // u0
            b[m] = I * k0[m] * phi;   // u1
            c[m] = I * k0[m] * w;     // d0 w
            e[m] = I * k1[m] * w;     // d1 w
        }
        const RTensor u0 = fft_inverse(a, axes, grid), u1 = fft_inverse(b, axes, grid);
        const RTensor w0 = fft_inverse(c, axes, grid), w1 = fft_inverse(e, axes, grid);
        RTensor adv(grid);
        for (std::size_t p = 0; p < s * s; ++p) {
            adv[p] = u0[p] * w0[p] + u1[p] * w1[p];
            max_u = std::max(max_u, std::hypot(u0[p], u1[p]));
        }
        CTensor G = fft_forward(adv, axes);
        for (std::size_t m = 0; m < M; ++m) G[m] = F[m] - mask[m] * G[m];
        return G;
    };

    CTensor Wh(Shape{s, h});
    const double n_total = static_cast<double>(s * s);
    double max_mean = 0.0;
    for (std::size_t n = 0; n < steps; ++n) {
        if (cfg.integrator == NsIntegrator::heun) {
            heun_step(Wh, dt, [&](const CTensor& Y) {
                CTensor R = forcing_minus_advection(Y);
                for (std::size_t m = 0; m < M; ++m) R[m] -= nu * k2[m] * Y[m];
                return R;
            });
        } else {
            // Integrating factor for diffusion, Heun for the rest:
            // w* = E (w + dt G(w)), w' = E w + dt/2 (E G(w) + G(w*)).
            const CTensor G0 = forcing_minus_advection(Wh);
            CTensor pred(Wh.shape());
            for (std::size_t m = 0; m < M; ++m) pred[m] = decay[m] * (Wh[m] + dt * G0[m]);
            const CTensor G1 = forcing_minus_advection(pred);
            for (std::size_t m = 0; m < M; ++m)
                Wh[m] = decay[m] * Wh[m] + 0.5 * dt * (decay[m] * G0[m] + G1[m]);
        }
        if (!all_finite(Wh)) throw SolverError("navier-stokes: non-finite state at step " + std::to_string(n + 1));
        max_mean = std::max(max_mean, std::abs(Wh[0].real()) / n_total);
    }
    if (stats) {
        stats->steps = steps;
        stats->dt = dt;
        stats->max_abs_mean = max_mean;
        stats->max_cfl = max_u * dt / dx;
    }
    return fft_inverse(Wh, axes, grid).reshaped(f.shape());
}

// ---------------------------------------------------------------------------
// Datasets

std::string to_string(PdeKind k) { return k == PdeKind::burgers ? "burgers" : "navier-stokes"; }

PdeKind parse_pde_kind(const std::string& s) {
    if (s == "burgers") return PdeKind::burgers;
    if (s == "navier-stokes" || s == "navier_stokes" || s == "ns") return PdeKind::navier_stokes;
    throw ConfigError("unknown pde '" + s + "'");
}

void Dataset::validate() const {
    if (inputs.shape() != outputs.shape())
        throw ShapeError("dataset: inputs " + inputs.shape().str() + " and outputs " + outputs.shape().str() +
                         " differ");
    if (inputs.rank() < 3 || inputs.extent(inputs.rank() - 1) != 1)
        throw ShapeError("dataset: expected [N, spatial..., 1], got " + inputs.shape().str());
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

Shape sample_shape(std::size_t n, std::size_t d, std::size_t s) {
    std::vector<std::size_t> dims{n};
    for (std::size_t a = 0; a < d; ++a) dims.push_back(s);
    dims.push_back(1);
    return Shape(dims);
}

} // namespace

Dataset make_dataset(const DataConfig& cfg, std::size_t n, std::uint64_t seed, std::size_t threads) {
    if (n == 0) throw ConfigError("dataset size must be at least 1");
    const std::size_t d = cfg.kind == PdeKind::burgers ? 1 : 2;
    if (cfg.grf.d != d) throw ConfigError("grf dimension does not match the pde");
    if (cfg.kind == PdeKind::navier_stokes && !cfg.grf.exclude_zero_mode)
        throw ConfigError("navier-stokes forcing must exclude the zero mode");
    const std::vector<std::size_t> ext(d, cfg.resolution);
    std::size_t per = 1;
    for (auto e : ext) per *= e;

    Dataset ds;
    ds.kind = cfg.kind;
    ds.inputs = RTensor(sample_shape(n, d, cfg.resolution));
    ds.outputs = RTensor(ds.inputs.shape());
    parallel_for(
        n,
        [&](std::size_t i) {
            const RTensor a = sample_grf(cfg.grf, ext, seed + i);
            RTensor u;
            try {
                u = cfg.kind == PdeKind::burgers ? solve_burgers(a, cfg.burgers) : solve_ns(a, cfg.ns);
            } catch (const SolverError& e) {
                throw SolverError("sample " + std::to_string(i) + ": " + e.what());
            }
            std::copy_n(a.data(), per, ds.inputs.data() + i * per);
            std::copy_n(u.data(), per, ds.outputs.data() + i * per);
        },
        threads);

    auto& m = ds.meta;
    m["pde"] = to_string(cfg.kind);
    m["samples"] = std::to_string(n);
    m["resolution"] = std::to_string(cfg.resolution);
    m["seed"] = std::to_string(seed);
    m["grf.scale"] = fmt(cfg.grf.scale);
    m["grf.shift"] = fmt(cfg.grf.shift);
    m["grf.power"] = fmt(cfg.grf.power);
    m["grf.exclude_zero_mode"] = cfg.grf.exclude_zero_mode ? "true" : "false";
    if (cfg.kind == PdeKind::burgers) {
        m["burgers.nu"] = fmt(cfg.burgers.nu);
        m["burgers.T"] = fmt(cfg.burgers.T);
        m["burgers.dt"] = fmt(cfg.burgers.dt);
    } else {
        m["ns.re"] = fmt(cfg.ns.re);
        m["ns.T"] = fmt(cfg.ns.T);
        m["ns.dt"] = fmt(cfg.ns.dt);
        m["ns.integrator"] = to_string(cfg.ns.integrator);
    }
    return ds;
}

Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end) {
    if (begin > end || end > ds.size()) throw ShapeError("dataset slice out of range");
    const std::size_t per = ds.inputs.numel() / ds.size();
    auto dims = ds.inputs.shape().dims();
    dims[0] = end - begin;
    Dataset out;
    out.kind = ds.kind;
    out.meta = ds.meta;
    out.meta["samples"] = std::to_string(end - begin);
    auto cut = [&](const RTensor& t) {
        return RTensor(Shape(dims), std::vector<double>(t.data() + begin * per, t.data() + end * per));
    };
    out.inputs = cut(ds.inputs);
    out.outputs = cut(ds.outputs);
    return out;
}

Dataset subsample(const Dataset& ds, std::size_t factor) {
    ds.validate();
    const std::size_t d = ds.inputs.rank() - 2;
    for (std::size_t a = 0; a < d; ++a)
        if (factor == 0 || ds.inputs.extent(a + 1) % factor != 0)
            throw ShapeError("subsample: factor must divide every extent");
    auto dims = ds.inputs.shape().dims();
    for (std::size_t a = 0; a < d; ++a) dims[a + 1] /= factor;
    const Shape out_shape(dims);
    auto pick = [&](const RTensor& t) {
        RTensor r(out_shape);
        const std::size_t pts = r.numel() / dims[0];
        for (std::size_t n = 0; n < dims[0]; ++n)
            for (std::size_t m = 0; m < pts; ++m) {
                std::size_t rest = m, src = 0, scale = 1;
                for (std::size_t a = d; a-- > 0;) {
                    src += (rest % dims[a + 1]) * factor * scale;
                    rest /= dims[a + 1];
                    scale *= t.extent(a + 1);
                }
                r[n * pts + m] = t[n * scale + src];
            }
        return r;
    };
    Dataset out;
    out.kind = ds.kind;
    out.meta = ds.meta;
    out.meta["resolution"] = std::to_string(dims[1]);
    out.inputs = pick(ds.inputs);
    out.outputs = pick(ds.outputs);
    return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    ds.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    Manifest m = ds.meta;
    m["pde"] = to_string(ds.kind);
    m["samples"] = std::to_string(ds.size());
    m["format"] = "nopkit-dataset-1";
    save_manifest(dir / "manifest.txt", m);
    save_tensor(dir / "inputs.ntns", ds.inputs);
    save_tensor(dir / "outputs.ntns", ds.outputs);
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.meta = load_manifest(dir / "manifest.txt");
    const auto it = ds.meta.find("pde");
    if (it == ds.meta.end()) throw IoError(dir.string() + ": manifest lacks 'pde'");
    try {
        ds.kind = parse_pde_kind(it->second);
    } catch (const ConfigError& e) {
        throw IoError(dir.string() + ": " + e.what());
    }
    ds.inputs = load_real_tensor(dir / "inputs.ntns");
    ds.outputs = load_real_tensor(dir / "outputs.ntns");
    ds.validate();
    const auto n = ds.meta.find("samples");
    if (n != ds.meta.end() && n->second != std::to_string(ds.size()))
        throw IoError(dir.string() + ": manifest sample count disagrees with the tensors");
    return ds;
}

} // namespace nopkit
