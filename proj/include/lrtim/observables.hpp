#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lrtim/hamiltonian.hpp"
#include "lrtim/state.hpp"

namespace lrtim {

/// Which order parameter (and domain notion) an observable refers to:
/// uniform sigma^x alignment or staggered alignment.
enum class Order { ferro, antiferro };

inline std::string to_string(Order o) { return o == Order::ferro ? "F" : "AF"; }

inline Order order_from_string(const std::string& s) {
    if (s == "F" || s == "ferro" || s == "ferromagnetic") return Order::ferro;
    if (s == "AF" || s == "antiferro" || s == "antiferromagnetic") return Order::antiferro;
    throw InvalidArgument("unknown order '" + s + "' (expected F or AF)");
}

/// The order that matches the sign of J0.
inline Order natural_order(double j0) { return j0 < 0.0 ? Order::ferro : Order::antiferro; }

/// Number of bonds (i, i+1) whose x-frame spins are anti-aligned.
inline int antialigned_bonds(Bits x_label, int sites) {
    if (sites < 2) return 0;
    const Bits bonds = (Bits{1} << (sites - 1)) - 1;
    return popcount((x_label ^ (x_label >> 1)) & bonds);
}

/// Domain count of an x-frame configuration:
///   n_do = (N+1)/2 -/+ (1/2) sum_i s_i s_{i+1}   (upper sign ferro),
/// i.e. one plus the number of walls in the uniform (F) or staggered (AF)
/// pattern. Always within [1, N].
inline int domain_count(Bits x_label, int sites, Order order) {
    const int broken = antialigned_bonds(x_label, sites);
    const int walls = order == Order::ferro ? broken : (sites - 1) - broken;
    return 1 + walls;
}

/// Domain walls of the pattern; equals domain_count - 1.
inline int domain_wall_count(Bits x_label, int sites, Order order) {
    return domain_count(x_label, sites, order) - 1;
}

/// Calls visit(label, probability) for every full x-frame configuration.
/// Sector states spread each representative's weight evenly over the
/// configuration and its global flip.
template <class Visitor>
void visit_x_distribution(const StateVector& state, Visitor&& visit) {
    const StateVector x = state.frame() == Frame::x ? state : to_frame(state, Frame::x);
    const auto& a = x.amplitudes();
    if (x.sector() == Sector::full) {
        for (Eigen::Index r = 0; r < a.size(); ++r) visit(static_cast<Bits>(r), std::norm(a(r)));
        return;
    }
    const Bits everything = all_sites_mask(x.sites());
    for (Eigen::Index r = 0; r < a.size(); ++r) {
        const double p = 0.5 * std::norm(a(r));
        visit(static_cast<Bits>(r), p);
        visit(static_cast<Bits>(r) ^ everything, p);
    }
}

/// Order-parameter value m_zeta of an x-frame configuration.
inline double order_parameter(Bits x_label, int sites, Order order) {
    if (order == Order::ferro) return static_cast<double>(sites - 2 * popcount(x_label)) / sites;
    Bits even_sites = 0;
    for (int i = 0; i < sites; i += 2) even_sites |= Bits{1} << i;
    const Bits odd_sites = all_sites_mask(sites) & ~even_sites;
    const int even_count = sites - sites / 2;
    const int odd_count = sites / 2;
    const double sum = (even_count - 2 * popcount(x_label & even_sites)) - (odd_count - 2 * popcount(x_label & odd_sites));
    return sum / sites;
}

inline double domain_expectation(const StateVector& state, Order order) {
    double mean = 0.0;
    const int n = state.sites();
    visit_x_distribution(state, [&](Bits label, double p) { mean += p * domain_count(label, n, order); });
    return mean;
}

struct MagnetizationMoments {
    double m2 = 0.0;
    double m4 = 0.0;
};

/// <m_zeta^2> and <m_zeta^4>, with m_F = (1/N) sum sx_i and
/// m_AF = (1/N) sum (-1)^i sx_i.
inline MagnetizationMoments magnetization_moments(const StateVector& state, Order order) {
    MagnetizationMoments out;
    const int n = state.sites();
    visit_x_distribution(state, [&](Bits label, double p) {
        const double m = order_parameter(label, n, order);
        const double m2 = m * m;
        out.m2 += p * m2;
        out.m4 += p * m2 * m2;
    });
    return out;
}

/// <sx_i sx_{i+1}> for i = 0 .. N-2.
inline std::vector<double> bond_correlators(const StateVector& state) {
    const int n = state.sites();
    std::vector<double> c(static_cast<std::size_t>(std::max(n - 1, 0)), 0.0);
    visit_x_distribution(state, [&](Bits label, double p) {
        for (int i = 0; i + 1 < n; ++i) {
            const bool aligned = (((label >> i) ^ (label >> (i + 1))) & 1U) == 0;
            c[static_cast<std::size_t>(i)] += aligned ? p : -p;
        }
    });
    return c;
}

struct ObservableRecord {
    double m2 = 0.0;
    double m4 = 0.0;
    double domains = 0.0;
    double energy = 0.0;
    std::vector<double> bond_correlators;
};

inline ObservableRecord observe(const StateVector& state, const Hamiltonian& h, double g, Order order) {
    ObservableRecord r;
    const auto moments = magnetization_moments(state, order);
    r.m2 = moments.m2;
    r.m4 = moments.m4;
    r.domains = domain_expectation(state, order);
    r.energy = h.energy(g, state);
    r.bond_correlators = bond_correlators(state);
    return r;
}

/// First sites i of the pairs (i, i + r) whose midpoint is closest to the
/// chain centre (one pair when N - 1 - r is even, two otherwise).
inline std::vector<int> central_pairs(int sites, int r) {
    const int span = sites - 1 - r;
    if (span < 0) return {};
    if (span % 2 == 0) return {span / 2};
    return {span / 2, span / 2 + 1};
}

/// Connected correlator C(r) = <sx_i sx_{i+r}> - <sx_i><sx_{i+r}>, averaged
/// over the central pairs.
inline double correlation_function(const StateVector& state, int r) {
    const int n = state.sites();
    require(r >= 0 && r < n, "correlation_function: distance out of range");
    const auto firsts = central_pairs(n, r);
    std::vector<double> single(static_cast<std::size_t>(n), 0.0);
    std::vector<double> pair(firsts.size(), 0.0);
    visit_x_distribution(state, [&](Bits label, double p) {
        for (int i = 0; i < n; ++i) single[static_cast<std::size_t>(i)] += ((label >> i) & 1U) ? -p : p;
        for (std::size_t k = 0; k < firsts.size(); ++k) {
            const int i = firsts[k];
            const bool aligned = (((label >> i) ^ (label >> (i + r))) & 1U) == 0;
            pair[k] += aligned ? p : -p;
        }
    });
    double c = 0.0;
    for (std::size_t k = 0; k < firsts.size(); ++k) {
        const int i = firsts[k];
        c += pair[k] - single[static_cast<std::size_t>(i)] * single[static_cast<std::size_t>(i + r)];
    }
    return c / static_cast<double>(firsts.size());
}

struct CorrelationLength {
    enum class Status { ok, undefined, saturated };
    double xi = 0.0;
    double residual = 0.0;  ///< RMS deviation of the log-linear fit
    Status status = Status::undefined;
    bool reliable() const { return status == Status::ok; }
};

/// Correlation length from a least-squares fit log|C(r)| = a - r / xi over
/// r in [r_min, r_max] (default [2, N/2]). Flagged `undefined` when the
/// correlations vanish and `saturated` when the fitted xi exceeds N/2.
inline CorrelationLength correlation_length(const StateVector& state, int r_min = 2, int r_max = -1) {
    const int n = state.sites();
    if (r_max < 0) r_max = n / 2;
    require(r_min >= 1 && r_max > r_min && r_max < n, "correlation_length: invalid fit window");
    std::vector<double> xs, ys;
    for (int r = r_min; r <= r_max; ++r) {
        const double c = std::abs(correlation_function(state, r));
        if (c > 1e-14) {
            xs.push_back(r);
            ys.push_back(std::log(c));
        }
    }
    CorrelationLength out;
    if (xs.size() < 2) return out;
    const auto k = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    const double intercept = (sy - slope * sx) / k;
    double ss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double d = ys[i] - (intercept + slope * xs[i]);
        ss += d * d;
    }
    out.residual = std::sqrt(ss / k);
    if (slope >= 0.0 || -1.0 / slope > 0.5 * n) {
        out.xi = slope >= 0.0 ? std::numeric_limits<double>::infinity() : -1.0 / slope;
        out.status = CorrelationLength::Status::saturated;
    } else {
        out.xi = -1.0 / slope;
        out.status = CorrelationLength::Status::ok;
    }
    return out;
}

}  // namespace lrtim
