#pragma once

#include <bit>
#include <complex>
#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "lrtim/errors.hpp"

namespace lrtim {

using complex = std::complex<double>;
using Bits = std::uint64_t;

/// Parity sector. `even` holds the z-basis states with an even number of up
/// spins (eigenvalue +1 of the parity operator), `odd` the rest.
enum class Sector { full, even, odd };

/// Single-site basis the amplitudes refer to.
///
/// z frame: bit i of a basis label is 1 when site i points up (sigma^z = +1).
/// x frame: bit i is 0 for |->> (sigma^x = +1) and 1 for |<-> (sigma^x = -1).
/// Site 0 is the least significant bit in both frames.
enum class Frame { z, x };

inline std::string to_string(Sector s) {
    switch (s) {
        case Sector::full: return "full";
        case Sector::even: return "even";
        case Sector::odd: return "odd";
    }
    return "?";
}

inline Sector sector_from_string(const std::string& name) {
    if (name == "full") return Sector::full;
    if (name == "even" || name == "positive" || name == "positive-parity") return Sector::even;
    if (name == "odd" || name == "negative" || name == "negative-parity") return Sector::odd;
    throw InvalidArgument("unknown parity sector '" + name + "'");
}

inline std::string to_string(Frame f) { return f == Frame::z ? "z" : "x"; }

inline Bits all_sites_mask(int sites) { return sites >= 64 ? ~Bits{0} : (Bits{1} << sites) - 1; }

inline int popcount(Bits b) { return std::popcount(b); }

inline Eigen::Index sector_dimension(int sites, Sector s) {
    require(sites >= 1 && sites <= 30, "sector dimension: unsupported number of sites");
    if (s == Sector::full) return Eigen::Index{1} << sites;
    return Eigen::Index{1} << (sites - 1);
}

/// Index <-> label bookkeeping for one (sites, sector, frame) combination.
///
/// In the z frame a sector basis element is a single z-basis state; the
/// sector states in increasing label order satisfy label >> 1 == index.
/// In the x frame a sector basis element with index r (bit sites-1 clear)
/// is (|r> + s |~r>)/sqrt(2), s = +1 for even and -1 for odd parity, since
/// parity acts as the global flip of all x-frame spins.
struct Basis {
    int sites = 2;
    Sector sector = Sector::full;
    Frame frame = Frame::z;

    Eigen::Index dimension() const { return sector_dimension(sites, sector); }

    /// Representative label of basis element `index`.
    Bits label(Eigen::Index index) const {
        const Bits i = static_cast<Bits>(index);
        if (sector == Sector::full || frame == Frame::x) return i;
        const Bits low = static_cast<Bits>(popcount(i) & 1);
        return (i << 1) | (sector == Sector::even ? low : (low ^ 1U));
    }

    /// Sign relating |~r> to |r> inside an x-frame sector element.
    double partner_sign() const { return sector == Sector::odd ? -1.0 : 1.0; }
};

class StateVector {
  public:
    StateVector() = default;

    StateVector(int sites, Sector sector, Frame frame, Eigen::VectorXcd amplitudes)
        : basis_{sites, sector, frame}, amplitudes_(std::move(amplitudes)) {
        require(amplitudes_.size() == basis_.dimension(),
                "state vector: amplitude count does not match the basis dimension");
        require(sector == Sector::full || sites % 2 == 0 || frame == Frame::z,
                "state vector: x-frame parity sectors need an even number of sites");
    }

    static StateVector zero(int sites, Sector sector, Frame frame) {
        return StateVector(sites, sector, frame,
                           Eigen::VectorXcd::Zero(sector_dimension(sites, sector)));
    }

    /// Product state |label> of the full basis in the given frame.
    static StateVector product(int sites, Bits label, Frame frame) {
        StateVector s = zero(sites, Sector::full, frame);
        require(label <= all_sites_mask(sites), "product state: label out of range");
        s.amplitudes_(static_cast<Eigen::Index>(label)) = 1.0;
        return s;
    }

    /// |down ... down>, the fully polarized state, in the even sector (z frame).
    static StateVector all_down(int sites) {
        StateVector s = zero(sites, Sector::even, Frame::z);
        s.amplitudes_(0) = 1.0;
        return s;
    }

    /// Normalized Gaussian-random state; deterministic for a given engine state.
    template <class Engine>
    static StateVector random(int sites, Sector sector, Frame frame, Engine& engine) {
        std::normal_distribution<double> normal;
        Eigen::VectorXcd v(sector_dimension(sites, sector));
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = complex(normal(engine), normal(engine));
        v.normalize();
        return StateVector(sites, sector, frame, std::move(v));
    }

    int sites() const { return basis_.sites; }
    Sector sector() const { return basis_.sector; }
    Frame frame() const { return basis_.frame; }
    const Basis& basis() const { return basis_; }
    Eigen::Index dimension() const { return amplitudes_.size(); }

    const Eigen::VectorXcd& amplitudes() const { return amplitudes_; }
    Eigen::VectorXcd& amplitudes() { return amplitudes_; }

    double norm() const { return amplitudes_.norm(); }
    void normalize() {
        const double n = norm();
        require(n > 0.0, "state vector: cannot normalize the zero vector");
        amplitudes_ /= n;
    }

    bool same_space(const StateVector& other) const {
        return basis_.sites == other.basis_.sites && basis_.sector == other.basis_.sector &&
               basis_.frame == other.basis_.frame;
    }

  private:
    Basis basis_{};
    Eigen::VectorXcd amplitudes_;
};

inline complex inner(const StateVector& a, const StateVector& b) {
    require(a.same_space(b), "inner product: states live in different spaces");
    return a.amplitudes().dot(b.amplitudes());
}

/// |<a|b>|^2 for normalized states.
inline double fidelity(const StateVector& a, const StateVector& b) { return std::norm(inner(a, b)); }

/// Rewrites a sector state in the full 2^N basis of the same frame.
inline StateVector embed(const StateVector& state) {
    if (state.sector() == Sector::full) return state;
    const Basis& basis = state.basis();
    const int n = state.sites();
    Eigen::VectorXcd full = Eigen::VectorXcd::Zero(sector_dimension(n, Sector::full));
    const auto& c = state.amplitudes();
    if (state.frame() == Frame::z) {
        for (Eigen::Index i = 0; i < c.size(); ++i) full(static_cast<Eigen::Index>(basis.label(i))) = c(i);
    } else {
        const Bits mask = all_sites_mask(n);
        const double s = basis.partner_sign();
        const double h = 1.0 / std::sqrt(2.0);
        for (Eigen::Index i = 0; i < c.size(); ++i) {
            full(i) = h * c(i);
            full(static_cast<Eigen::Index>(static_cast<Bits>(i) ^ mask)) = s * h * c(i);
        }
    }
    return StateVector(n, Sector::full, state.frame(), std::move(full));
}

/// Orthogonal projection of a full-basis state onto a parity sector. The
/// result is not renormalized.
inline StateVector project(const StateVector& state, Sector sector) {
    require(state.sector() == Sector::full, "project: input must be a full-basis state");
    if (sector == Sector::full) return state;
    const int n = state.sites();
    Basis basis{n, sector, state.frame()};
    Eigen::VectorXcd c(basis.dimension());
    const auto& full = state.amplitudes();
    if (state.frame() == Frame::z) {
        for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = full(static_cast<Eigen::Index>(basis.label(i)));
    } else {
        require(n % 2 == 0, "project: x-frame sectors need an even number of sites");
        const Bits mask = all_sites_mask(n);
        const double s = basis.partner_sign();
        const double h = 1.0 / std::sqrt(2.0);
        for (Eigen::Index i = 0; i < c.size(); ++i)
            c(i) = h * (full(i) + s * full(static_cast<Eigen::Index>(static_cast<Bits>(i) ^ mask)));
    }
    return StateVector(n, sector, state.frame(), std::move(c));
}

namespace detail {

// Per-site change of basis. With a = amplitude on |down>, b on |up>:
//   <->|psi> = (a + b)/sqrt2,  <<-|psi> = (b - a)/sqrt2.
inline void z_to_x_inplace(Eigen::VectorXcd& v, int sites) {
    const double h = 1.0 / std::sqrt(2.0);
    const Eigen::Index dim = v.size();
    for (int site = 0; site < sites; ++site) {
        const Eigen::Index stride = Eigen::Index{1} << site;
        for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
            for (Eigen::Index k = base; k < base + stride; ++k) {
                const complex down = v(k), up = v(k + stride);
                v(k) = h * (down + up);
                v(k + stride) = h * (up - down);
            }
        }
    }
}

inline void x_to_z_inplace(Eigen::VectorXcd& v, int sites) {
    const double h = 1.0 / std::sqrt(2.0);
    const Eigen::Index dim = v.size();
    for (int site = 0; site < sites; ++site) {
        const Eigen::Index stride = Eigen::Index{1} << site;
        for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
            for (Eigen::Index k = base; k < base + stride; ++k) {
                const complex right = v(k), left = v(k + stride);
                v(k) = h * (right - left);
                v(k + stride) = h * (right + left);
            }
        }
    }
}

}  // namespace detail

/// Re-expresses a state in the requested single-site frame, keeping its sector.
inline StateVector to_frame(const StateVector& state, Frame frame) {
    if (state.frame() == frame) return state;
    StateVector full = embed(state);
    Eigen::VectorXcd v = full.amplitudes();
    if (frame == Frame::x)
        detail::z_to_x_inplace(v, state.sites());
    else
        detail::x_to_z_inplace(v, state.sites());
    StateVector out(state.sites(), Sector::full, frame, std::move(v));
    return state.sector() == Sector::full ? out : project(out, state.sector());
}

/// Amplitudes in the sigma^x product basis. |down> maps to (1, -1)/sqrt(2)
/// over (|->>, |<->).
inline StateVector x_basis_transform(const StateVector& state) { return to_frame(state, Frame::x); }

}  // namespace lrtim
