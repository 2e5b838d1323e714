#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include <Eigen/Dense>

#include "lrtim/hamiltonian.hpp"
#include "lrtim/krylov.hpp"
#include "lrtim/observables.hpp"

namespace lrtim {

/// Largest chain the exact eigensolvers accept unless told otherwise.
inline constexpr int default_max_sites = 20;

struct GroundStateResult {
    double energy = 0.0;  ///< in units of |J0|
    StateVector state;    ///< in the Hamiltonian's frame and sector
    Sector sector = Sector::even;
    double residual = 0.0;  ///< ||(H - E0) phi0||
    int matvecs = 0;
    /// Real amplitudes in the Hamiltonian's basis (the operator is real symmetric).
    Eigen::VectorXd amplitudes;
};

namespace detail {

inline GroundStateResult make_result(const Hamiltonian& h, EigenPair pair) {
    GroundStateResult r;
    r.energy = pair.value;
    r.sector = h.sector();
    r.residual = pair.residual;
    r.matvecs = pair.matvecs;
    r.state = StateVector(h.sites(), h.sector(), h.frame(), pair.vector.cast<complex>());
    r.amplitudes = std::move(pair.vector);
    return r;
}

inline void check_size(const Hamiltonian& h, int max_sites) {
    require(h.sites() <= max_sites, "eigensolver: chain longer than the configured cap of " +
                                        std::to_string(max_sites) + " sites");
}

}  // namespace detail

/// Lowest eigenpair of H(g) in the Hamiltonian's sector.
inline GroundStateResult ground_state(const Hamiltonian& h, double g, const LanczosOptions& options = {},
                                      const Eigen::VectorXd* guess = nullptr, int max_sites = default_max_sites) {
    detail::check_size(h, max_sites);
    auto op = [&](const Eigen::VectorXd& in, Eigen::VectorXd& out) { h.apply(g, in, out); };
    return detail::make_result(h, lowest_eigenpair(op, h.dimension(), options, guess));
}

inline GroundStateResult ground_state(const CouplingMatrix& couplings, double g, Sector sector = Sector::even,
                                      const LanczosOptions& options = {}) {
    Hamiltonian h(couplings, sector, Frame::x);
    return ground_state(h, g, options);
}

/// Next eigenpair above `lower` within the same sector (deflated Lanczos).
inline GroundStateResult first_excited_state(const Hamiltonian& h, double g, const GroundStateResult& lower,
                                             const LanczosOptions& options = {}) {
    auto op = [&](const Eigen::VectorXd& in, Eigen::VectorXd& out) { h.apply(g, in, out); };
    const std::vector<Eigen::VectorXd> deflate{lower.amplitudes};
    return detail::make_result(h, lowest_eigenpair(op, h.dimension(), options, nullptr, deflate));
}

/// Gaps in units of |J0|. `within_sector` is the positive-parity gap used for
/// dynamical-exponent fits; `global` is the gap between the two lowest
/// levels over both sectors.
struct SpectralGap {
    double within_sector = 0.0;
    double global = 0.0;
    double even_ground = 0.0;
    double even_excited = 0.0;
    double odd_ground = 0.0;
};

inline SpectralGap energy_gap(const CouplingMatrix& couplings, double g, const LanczosOptions& options = {},
                              int max_sites = default_max_sites) {
    Hamiltonian even(couplings, Sector::even, Frame::x);
    Hamiltonian odd(couplings, Sector::odd, Frame::x);
    detail::check_size(even, max_sites);
    const auto e0 = ground_state(even, g, options, nullptr, max_sites);
    const auto e1 = first_excited_state(even, g, e0, options);
    const auto o0 = ground_state(odd, g, options, nullptr, max_sites);
    SpectralGap gap;
    gap.even_ground = e0.energy;
    gap.even_excited = e1.energy;
    gap.odd_ground = o0.energy;
    gap.within_sector = std::max(0.0, e1.energy - e0.energy);
    std::array<double, 3> levels{e0.energy, e1.energy, o0.energy};
    std::sort(levels.begin(), levels.end());
    gap.global = std::max(0.0, levels[1] - levels[0]);
    return gap;
}

/// Half-chain entanglement spectrum. "Schmidt coefficients" are taken as the
/// reduced-density-matrix eigenvalues (squared singular values).
struct SchmidtData {
    std::vector<double> lambdas;  ///< descending
    double gap = 0.0;             ///< lambda_1 - lambda_2
};

inline SchmidtData schmidt_gap(const StateVector& state) {
    const int n = state.sites();
    require(n % 2 == 0, "schmidt_gap: needs an even number of sites");
    // Local basis changes leave the spectrum untouched, so either frame works.
    const StateVector full = embed(state);
    const Eigen::Index half = Eigen::Index{1} << (n / 2);
    // Site 0 is the lowest bit: the left block indexes rows.
    Eigen::Map<const Eigen::MatrixXcd> psi(full.amplitudes().data(), half, half);
    Eigen::BDCSVD<Eigen::MatrixXcd> svd(psi);
    SchmidtData out;
    const auto& s = svd.singularValues();
    out.lambdas.reserve(static_cast<std::size_t>(s.size()));
    for (Eigen::Index i = 0; i < s.size(); ++i) out.lambdas.push_back(s(i) * s(i));
    std::sort(out.lambdas.begin(), out.lambdas.end(), std::greater<>());
    out.gap = out.lambdas.size() > 1 ? out.lambdas[0] - out.lambdas[1] : out.lambdas[0];
    return out;
}

/// B = (3 - <m^4>/<m^2>^2) / 2.
inline double binder_cumulant(const MagnetizationMoments& m) {
    require(m.m2 >= 1e-14, "binder_cumulant: <m^2> vanishes, the cumulant is undefined");
    return 0.5 * (3.0 - m.m4 / (m.m2 * m.m2));
}

inline double binder_cumulant(const StateVector& state, Order order) {
    return binder_cumulant(magnetization_moments(state, order));
}

inline double binder_cumulant(const CouplingMatrix& couplings, double g, Order order,
                              const LanczosOptions& options = {}) {
    return binder_cumulant(ground_state(couplings, g, Sector::even, options).state, order);
}

struct MomentDerivative {
    double value = 0.0;    ///< centered difference with step h
    double check = 0.0;    ///< centered difference with step h/2
    double refined = 0.0;  ///< Richardson combination of the two
    double step = 0.0;
    bool converged = false;  ///< |value - check| <= 1% of |check|
};

/// d<m_zeta^power>/dg of the even-sector ground state by centered differences.
inline MomentDerivative moment_derivative(const Hamiltonian& h, double g, Order order, int power,
                                          double step = 1e-3, const GroundStateResult* at_g = nullptr) {
    require(power == 2 || power == 4, "moment_derivative: power must be 2 or 4");
    require(step > 0.0 && g - step > 0.0, "moment_derivative: stencil leaves the domain g > 0");
    LanczosOptions tight;
    tight.tolerance = 1e-11;
    const Eigen::VectorXd* guess = at_g != nullptr ? &at_g->amplitudes : nullptr;
    auto moment = [&](double gg) {
        const auto gs = ground_state(h, gg, tight, guess);
        const auto m = magnetization_moments(gs.state, order);
        return power == 2 ? m.m2 : m.m4;
    };
    MomentDerivative d;
    d.step = step;
    d.value = (moment(g + step) - moment(g - step)) / (2.0 * step);
    d.check = (moment(g + 0.5 * step) - moment(g - 0.5 * step)) / step;
    d.refined = (4.0 * d.check - d.value) / 3.0;
    d.converged = std::abs(d.value - d.check) <= 0.01 * std::abs(d.check) + 1e-12;
    return d;
}

inline MomentDerivative moment_derivative(const CouplingMatrix& couplings, double g, Order order, int power,
                                          double step = 1e-3) {
    Hamiltonian h(couplings, Sector::even, Frame::x);
    return moment_derivative(h, g, order, power, step);
}

}  // namespace lrtim
