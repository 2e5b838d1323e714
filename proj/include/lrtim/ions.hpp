#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lrtim/errors.hpp"

namespace lrtim {

/// Axial normal modes of a Coulomb crystal in a harmonic trap. Lengths are
/// in units of the Coulomb length scale, frequencies in units of the axial
/// trap frequency.
struct ModeData {
    std::vector<double> positions;
    Eigen::VectorXd frequencies;  ///< ascending
    Eigen::MatrixXd vectors;      ///< column m is mode m

    int ions() const { return static_cast<int>(positions.size()); }
};

namespace detail {

inline Eigen::VectorXd force_balance(const Eigen::VectorXd& u) {
    const Eigen::Index n = u.size();
    Eigen::VectorXd f(n);
    for (Eigen::Index m = 0; m < n; ++m) {
        double s = u(m);
        for (Eigen::Index p = 0; p < n; ++p) {
            if (p == m) continue;
            const double d = u(m) - u(p);
            s += (p < m ? -1.0 : 1.0) / (d * d);
        }
        f(m) = s;
    }
    return f;
}

/// Hessian of the dimensionless potential; also the Jacobian of the
/// force balance.
inline Eigen::MatrixXd trap_hessian(const Eigen::VectorXd& u) {
    const Eigen::Index n = u.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index m = 0; m < n; ++m) {
        a(m, m) = 1.0;
        for (Eigen::Index p = 0; p < n; ++p) {
            if (p == m) continue;
            const double c = 2.0 / std::pow(std::abs(u(m) - u(p)), 3);
            a(m, m) += c;
            a(m, p) = -c;
        }
    }
    return a;
}

inline bool newton_positions(Eigen::VectorXd& u, int max_iterations = 200) {
    for (int it = 0; it < max_iterations; ++it) {
        const Eigen::VectorXd f = force_balance(u);
        if (!f.allFinite()) return false;
        if (f.cwiseAbs().maxCoeff() < 1e-13) return true;
        const Eigen::VectorXd step = trap_hessian(u).ldlt().solve(f);
        // Damp steps that would reorder the ions.
        double scale = 1.0;
        for (int tries = 0; tries < 60; ++tries) {
            const Eigen::VectorXd next = u - scale * step;
            bool ordered = true;
            for (Eigen::Index i = 1; i < next.size(); ++i) ordered = ordered && next(i) > next(i - 1);
            if (ordered) break;
            scale *= 0.5;
        }
        u -= scale * step;
    }
    return force_balance(u).cwiseAbs().maxCoeff() < 1e-10;
}

}  // namespace detail

/// Equilibrium positions, ascending and symmetric about 0.
inline std::vector<double> equilibrium_positions(int ions) {
    require(ions >= 2, "equilibrium_positions: need at least two ions");
    auto seed = [ions](double spacing) {
        Eigen::VectorXd u(ions);
        for (int i = 0; i < ions; ++i) u(i) = spacing * (i - 0.5 * (ions - 1));
        return u;
    };
    // Empirical spacing law of the central ions, then a plain unit spacing.
    Eigen::VectorXd u = seed(2.018 / std::pow(ions, 0.559));
    if (!detail::newton_positions(u)) {
        u = seed(1.0);
        if (!detail::newton_positions(u))
            throw ConvergenceError("equilibrium_positions: Newton iteration diverged",
                                   detail::force_balance(u).cwiseAbs().maxCoeff(), 200);
    }
    // Enforce the mirror symmetry exactly.
    Eigen::VectorXd sym = 0.5 * (u - u.reverse());
    if (ions % 2 == 1) sym(ions / 2) = 0.0;
    return {sym.data(), sym.data() + sym.size()};
}

inline double force_balance_residual(const std::vector<double>& positions) {
    const Eigen::Map<const Eigen::VectorXd> u(positions.data(), static_cast<Eigen::Index>(positions.size()));
    return detail::force_balance(u).cwiseAbs().maxCoeff();
}

inline ModeData normal_modes(const std::vector<double>& positions) {
    require(positions.size() >= 2, "normal_modes: need at least two ions");
    const Eigen::Map<const Eigen::VectorXd> u(positions.data(), static_cast<Eigen::Index>(positions.size()));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(detail::trap_hessian(u));
    require(eig.info() == Eigen::Success, "normal_modes: eigen decomposition failed");
    if (eig.eigenvalues().minCoeff() <= 0.0)
        throw InvalidArgument("normal_modes: Hessian is not positive definite; positions are not an equilibrium");
    ModeData out;
    out.positions = positions;
    out.frequencies = eig.eigenvalues().cwiseSqrt();
    out.vectors = eig.eigenvectors();
    // Fix the sign of each mode: largest-magnitude entry positive, ties to the
    // first such entry.
    for (Eigen::Index m = 0; m < out.vectors.cols(); ++m) {
        Eigen::Index at = 0;
        out.vectors.col(m).cwiseAbs().maxCoeff(&at);
        if (std::abs(out.vectors.col(m).sum()) > 1e-8) {
            if (out.vectors.col(m).sum() < 0.0) out.vectors.col(m) *= -1.0;
        } else if (out.vectors(at, m) < 0.0) {
            out.vectors.col(m) *= -1.0;
        }
    }
    return out;
}

inline ModeData normal_modes(int ions) { return normal_modes(equilibrium_positions(ions)); }

/// Guard against detunings too close to a mode, |mu - omega_m| >> eta Omega.
struct GuardBand {
    double factor = 10.0;
    double lamb_dicke = 0.1;  ///< eta_0; eta_{i,m} = eta_0 b_{i,m} / sqrt(omega_m)
};

/// J_ij = Omega_i Omega_j sum_m b_{i,m} b_{j,m} / (mu^2 - omega_m^2), zero diagonal.
inline Eigen::MatrixXd effective_couplings(const Eigen::VectorXd& rabi, double detuning, const ModeData& modes,
                                           const GuardBand& guard = {}) {
    const int n = modes.ions();
    require(rabi.size() == n, "effective_couplings: one Rabi frequency per ion");
    const double omega_max = rabi.cwiseAbs().maxCoeff();
    for (Eigen::Index m = 0; m < modes.frequencies.size(); ++m) {
        const double eta = guard.lamb_dicke * modes.vectors.col(m).cwiseAbs().maxCoeff() / std::sqrt(modes.frequencies(m));
        if (std::abs(detuning - modes.frequencies(m)) <= guard.factor * eta * omega_max)
            throw InvalidArgument("effective_couplings: detuning " + std::to_string(detuning) + " lies within the guard band of mode " +
                                  std::to_string(m) + "; need |mu - omega_m| >> eta Omega");
    }
    Eigen::VectorXd weight(modes.frequencies.size());
    for (Eigen::Index m = 0; m < weight.size(); ++m)
        weight(m) = 1.0 / (detuning * detuning - modes.frequencies(m) * modes.frequencies(m));
    Eigen::MatrixXd j = modes.vectors * weight.asDiagonal() * modes.vectors.transpose();
    j = (rabi.asDiagonal() * j * rabi.asDiagonal()).eval();
    j.diagonal().setZero();
    // Exact symmetry for downstream consumers.
    return 0.5 * (j + j.transpose());
}

}  // namespace lrtim
