// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/io.hpp"
#include "nopkit/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace nopkit {

/// Gaussian measure N(0, C) on the torus [0, 2 pi)^d with C = scale (-Laplacian + shift)^{-power},
/// whose eigenvalue on the Fourier mode k is scale (|k|^2 + shift)^{-power}.
struct GrfSpec {
    double scale = 1.0;
    double shift = 9.0;
    double power = 2.0;
    std::size_t d = 1;
    bool exclude_zero_mode = false;

    /// Forcing measure of the vorticity benchmark: 27 (-Laplacian + 9)^{-4}, mean zero.
    static GrfSpec navier_stokes();
    /// Initial-condition measure of the Burgers benchmark: 3^{5/2} (-d^2/dx^2 + 9)^{-3}.
    static GrfSpec burgers();

    [[nodiscard]] double eigenvalue(double k_squared) const;
    void validate() const;
};

/// One sample sum_k sqrt(lambda_k) xi_k e^{i k.x} on a grid of the given extents,
/// truncated below the grid Nyquist frequency. xi_k are complex normals with
/// E|xi_k|^2 = 1 paired so the field is real; the Fourier coefficient of mode k
/// (fft_forward / N) therefore has variance lambda_k. Deterministic in `seed`.
[[nodiscard]] RTensor sample_grf(const GrfSpec& spec, std::span<const std::size_t> extents, std::uint64_t seed);

/// u_t + u u_x = nu u_xx on [0, 2 pi).
struct BurgersConfig {
    double nu = 0.01;
    double T = 0.5;
    double dt = 0.0;  // 0 picks a stable step from the grid and the initial data
    bool dealias = true;
    void validate() const;
};

enum class NsIntegrator { imex, heun };

/// Vorticity form w_t + u.grad(w) = (1/Re) Laplacian(w) + f on [0, 2 pi)^2, u = grad-perp(phi),
/// -Laplacian(phi) = w, w(0) = 0.
struct NsConfig {
    double re = 500.0;
    double T = 5.0;
    double dt = 0.0;  // 0 picks 0.01 or finer so the step count is an integer
    bool dealias = true;
    NsIntegrator integrator = NsIntegrator::imex;
    void validate() const;
};

[[nodiscard]] std::string to_string(NsIntegrator i);
[[nodiscard]] NsIntegrator parse_ns_integrator(const std::string& s);

struct SolverStats {
    std::size_t steps = 0;
    double dt = 0.0;
    /// Largest |spatial mean| of the state over all steps (vorticity solver).
    double max_abs_mean = 0.0;
    /// Largest max|u| dt / dx observed.
    double max_cfl = 0.0;
};

/// Pseudo-spectral Heun integration to time T. u0 has shape [s] (any trailing
/// singleton axes are kept). Throws SolverError on non-finite values.
[[nodiscard]] RTensor solve_burgers(const RTensor& u0, const BurgersConfig& cfg, SolverStats* stats = nullptr);

/// Vorticity at time T for a mean-zero forcing f of shape [s, s] (trailing
/// singleton axes kept). Non-mean-zero forcing is a ContractError; blow-up a SolverError.
[[nodiscard]] RTensor solve_ns(const RTensor& f, const NsConfig& cfg, SolverStats* stats = nullptr);

enum class PdeKind { burgers, navier_stokes };

[[nodiscard]] std::string to_string(PdeKind k);
[[nodiscard]] PdeKind parse_pde_kind(const std::string& s);

struct DataConfig {
    PdeKind kind = PdeKind::burgers;
    std::size_t resolution = 256;
    GrfSpec grf = GrfSpec::burgers();
    BurgersConfig burgers;
    NsConfig ns;
};

/// Paired samples [N, s..., 1] with a text manifest describing their origin.
struct Dataset {
    PdeKind kind = PdeKind::burgers;
    RTensor inputs;
    RTensor outputs;
    Manifest meta;

    [[nodiscard]] std::size_t size() const noexcept { return inputs.rank() ? inputs.extent(0) : 0; }
    [[nodiscard]] std::size_t resolution() const { return inputs.extent(1); }
    void validate() const;
};

/// N samples; sample i draws its input from seed + i and is solved independently
/// (parallel over samples, result independent of the thread count). A solver
/// failure is rethrown as SolverError naming the sample index.
[[nodiscard]] Dataset make_dataset(const DataConfig& cfg, std::size_t n, std::uint64_t seed, std::size_t threads = 0);

/// Samples [begin, end).
[[nodiscard]] Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end);
/// Every `factor`-th grid point along each spatial axis.
[[nodiscard]] Dataset subsample(const Dataset& ds, std::size_t factor);

/// Directory with manifest.txt, inputs.ntns and outputs.ntns.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
[[nodiscard]] Dataset load_dataset(const std::filesystem::path& dir);

} // namespace nopkit
