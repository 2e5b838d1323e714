#pragma once

#include <vector>

#include <Eigen/Dense>

#include "lrtim/couplings.hpp"
#include "lrtim/state.hpp"

namespace lrtim {

/// Matrix-free transverse-field Ising Hamiltonian
///
///     H(g) = sum_{i<j} J_ij sx_i sx_j + g sum_i sz_i
///
/// restricted to one parity sector and written in one single-site frame.
/// In the x frame the interaction is diagonal (precomputed once) and the
/// field flips single spins, so a product costs O(N) per amplitude; the
/// z frame costs O(#pairs) per amplitude and serves as the reference.
class Hamiltonian {
  public:
    Hamiltonian(CouplingMatrix couplings, Sector sector, Frame frame = Frame::x)
        : couplings_(std::move(couplings)), basis_{couplings_.sites(), sector, frame} {
        const int n = couplings_.sites();
        require(n >= 1 && n <= 30, "hamiltonian: unsupported number of sites");
        require(sector == Sector::full || frame == Frame::z || n % 2 == 0,
                "hamiltonian: x-frame parity sectors need an even number of sites");
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (couplings_(i, j) != 0.0) pairs_.push_back({i, j, couplings_(i, j)});
        if (frame == Frame::x) build_diagonal();
    }

    int sites() const { return basis_.sites; }
    Sector sector() const { return basis_.sector; }
    Frame frame() const { return basis_.frame; }
    const Basis& basis() const { return basis_; }
    Eigen::Index dimension() const { return basis_.dimension(); }
    const CouplingMatrix& couplings() const { return couplings_; }

    /// Upper bound on the spectral radius of H(g).
    double norm_bound(double g) const { return couplings_.absolute_sum() + std::abs(g) * sites(); }

    /// out = H(g) in.
    template <typename Scalar>
    void apply(double g, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& in,
               Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& out) const {
        require(in.size() == dimension(), "hamiltonian: input dimension mismatch");
        out.resize(in.size());
        if (basis_.frame == Frame::x)
            apply_x(g, in, out);
        else
            apply_z(g, in, out);
    }

    template <typename Scalar>
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> operator()(double g,
                                                        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& in) const {
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out;
        apply(g, in, out);
        return out;
    }

    /// <psi|H(g)|psi> for a state in this Hamiltonian's space.
    double energy(double g, const StateVector& psi) const {
        check_space(psi);
        Eigen::VectorXcd h;
        apply(g, psi.amplitudes(), h);
        return psi.amplitudes().dot(h).real();
    }

    void check_space(const StateVector& psi) const {
        require(psi.sites() == sites() && psi.sector() == sector() && psi.frame() == frame(),
                "hamiltonian: state lives in a different space");
    }

    /// Diagonal interaction energies (x frame only), indexed like the basis.
    const std::vector<double>& interaction_diagonal() const { return diagonal_; }

  private:
    struct Pair {
        int i;
        int j;
        double value;
    };

    void build_diagonal() {
        const Eigen::Index dim = dimension();
        diagonal_.assign(static_cast<std::size_t>(dim), 0.0);
        for (Eigen::Index r = 0; r < dim; ++r) {
            const Bits label = static_cast<Bits>(r);
            double e = 0.0;
            for (const Pair& p : pairs_) {
                const bool aligned = (((label >> p.i) ^ (label >> p.j)) & 1U) == 0;
                e += aligned ? p.value : -p.value;
            }
            diagonal_[static_cast<std::size_t>(r)] = e;
        }
    }

    template <typename Scalar>
    void apply_x(double g, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& in,
                 Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& out) const {
        const int n = sites();
        const Eigen::Index dim = dimension();
        const bool folded = basis_.sector != Sector::full;
        const int free_sites = folded ? n - 1 : n;
        // Flipping the top site of a representative leaves the folded space;
        // its image is the complement, carrying the sector's partner sign.
        // r ^ fold == fold - r, so that term is the input read backwards.
        const double fold_sign = basis_.partner_sign();
        const Eigen::Map<const Eigen::VectorXd> diag(diagonal_.data(), dim);
        out = diag.cwiseProduct(in);
        if (g == 0.0) return;
        // Flipping bit i swaps contiguous blocks of length 2^i; the shortest
        // blocks go through a plain loop.
        const int short_bits = std::min(free_sites, 3);
        for (Eigen::Index r = 0; r < dim; ++r) {
            Scalar acc = Scalar(0);
            for (int i = 0; i < short_bits; ++i) acc += in(r ^ (Eigen::Index{1} << i));
            out(r) += g * acc;
        }
        for (int i = short_bits; i < free_sites; ++i) {
            const Eigen::Index len = Eigen::Index{1} << i;
            for (Eigen::Index base = 0; base < dim; base += 2 * len) {
                out.segment(base, len) += g * in.segment(base + len, len);
                out.segment(base + len, len) += g * in.segment(base, len);
            }
        }
        if (folded) out += (g * fold_sign) * in.reverse();
    }

    template <typename Scalar>
    void apply_z(double g, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& in,
                 Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& out) const {
        const int n = sites();
        const Eigen::Index dim = dimension();
        const bool folded = basis_.sector != Sector::full;
        for (Eigen::Index r = 0; r < dim; ++r) {
            const Bits label = basis_.label(r);
            Scalar acc = g * static_cast<double>(2 * popcount(label) - n) * in(r);
            for (const Pair& p : pairs_) {
                const Bits partner = label ^ (Bits{1} << p.i) ^ (Bits{1} << p.j);
                acc += p.value * in(static_cast<Eigen::Index>(folded ? partner >> 1 : partner));
            }
            out(r) = acc;
        }
    }

    CouplingMatrix couplings_;
    Basis basis_;
    std::vector<Pair> pairs_;
    std::vector<double> diagonal_;
};

/// Functional form of the Hamiltonian product on a state vector.
inline StateVector apply_hamiltonian(const StateVector& psi, const CouplingMatrix& couplings, double g) {
    require(psi.sites() == couplings.sites(), "apply_hamiltonian: dimension mismatch between state and couplings");
    require(g >= 0.0, "apply_hamiltonian: field strength must be non-negative");
    Hamiltonian h(couplings, psi.sector(), psi.frame());
    Eigen::VectorXcd out;
    h.apply(g, psi.amplitudes(), out);
    return StateVector(psi.sites(), psi.sector(), psi.frame(), std::move(out));
}

/// Applies prod_{i in mask} sz_i in place. In the z frame this is a sign;
/// in the x frame it flips the masked spins.
template <typename Scalar>
void apply_z_mask(const Basis& basis, Bits mask, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& amplitudes) {
    require(amplitudes.size() == basis.dimension(), "apply_z_mask: dimension mismatch");
    if (mask == 0) return;
    const Eigen::Index dim = basis.dimension();
    if (basis.frame == Frame::z) {
        for (Eigen::Index r = 0; r < dim; ++r) {
            const Bits label = basis.label(r);
            if (popcount(mask & ~label) & 1) amplitudes(r) = -amplitudes(r);
        }
        return;
    }
    const int n = basis.sites;
    const bool folded = basis.sector != Sector::full;
    const Bits top = Bits{1} << (n - 1);
    const Bits everything = all_sites_mask(n);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(dim);
    for (Eigen::Index r = 0; r < dim; ++r) {
        Bits image = static_cast<Bits>(r) ^ mask;
        double sign = 1.0;
        if (folded && (image & top)) {
            image ^= everything;
            sign = basis.partner_sign();
        }
        out(static_cast<Eigen::Index>(image)) = sign * amplitudes(r);
    }
    amplitudes.swap(out);
}

inline void apply_z_mask(StateVector& psi, Bits mask) { apply_z_mask(psi.basis(), mask, psi.amplitudes()); }

}  // namespace lrtim
