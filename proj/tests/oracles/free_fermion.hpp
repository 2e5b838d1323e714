#pragma once

// Open nearest-neighbour transverse-field Ising chain solved through the
// Jordan-Wigner map. Majoranas a_j, b_j are ordered (a_0, b_0, a_1, b_1, ...)
// with sz_j = -i a_j b_j and sx_j sx_{j+1} = -i b_j a_{j+1}.

#include <algorithm>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct FreeFermion {
    Eigen::VectorXd energies;  ///< single-particle energies, ascending, >= 0
    Eigen::MatrixXcd sign;     ///< sign(iM) in the Majorana basis
    int sites = 0;

    double ground_energy() const { return -0.5 * energies.sum(); }
    /// Lowest excitation (flips fermion parity).
    double global_gap() const { return energies(0); }
    /// Lowest excitation with the ground state's parity.
    double sector_gap() const { return energies(0) + energies(1); }

    /// <sx_i sx_j> (i < j) in the ground state, as det <-i b_l a_{m+1}>.
    double xx_correlator(int i, int j) const {
        const int r = j - i;
        Eigen::MatrixXd g(r, r);
        for (int l = 0; l < r; ++l)
            for (int m = 0; m < r; ++m) {
                const int bl = 2 * (i + l) + 1;
                const int am = 2 * (i + m + 1);
                // <g_k g_l> = delta_kl + sign(iM)_kl
                g(l, m) = (std::complex<double>(0, -1) * sign(bl, am)).real();
            }
        return g.determinant();
    }
};

/// bonds[j] couples (j, j+1); field g on every site.
inline FreeFermion solve_free_fermion(const std::vector<double>& bonds, double g) {
    const int n = static_cast<int>(bonds.size()) + 1;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    // A term -i c g_k g_l enters H = (i/4) sum M_kl g_k g_l as M_kl = -2c.
    auto add = [&](int k, int l, double c) {
        m(k, l) += -2.0 * c;
        m(l, k) += 2.0 * c;
    };
    for (int j = 0; j < n; ++j) add(2 * j, 2 * j + 1, g);
    for (int j = 0; j + 1 < n; ++j) add(2 * j + 1, 2 * j + 2, bonds[static_cast<std::size_t>(j)]);
    const Eigen::MatrixXcd h = std::complex<double>(0, 1) * m.cast<std::complex<double>>();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h);
    FreeFermion out;
    out.sites = n;
    std::vector<double> pos;
    for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k)
        if (k >= n) pos.push_back(es.eigenvalues()(k));
    std::sort(pos.begin(), pos.end());
    out.energies = Eigen::Map<Eigen::VectorXd>(pos.data(), static_cast<Eigen::Index>(pos.size()));
    Eigen::VectorXd s = es.eigenvalues().unaryExpr([](double x) { return x > 0 ? 1.0 : -1.0; });
    out.sign = es.eigenvectors() * s.cast<std::complex<double>>().asDiagonal() * es.eigenvectors().adjoint();
    return out;
}

inline FreeFermion solve_free_fermion(int sites, double j0, double g) {
    return solve_free_fermion(std::vector<double>(static_cast<std::size_t>(sites - 1), j0), g);
}

}  // namespace oracle
