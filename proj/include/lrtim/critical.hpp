#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lrtim/couplings.hpp"
#include "lrtim/fss.hpp"
#include "lrtim/spectra.hpp"

namespace lrtim {

/// Binder-crossing scan and exponent extraction for one coupling family.
struct CriticalScanConfig {
    double j0 = -1.0;
    double alpha = 3.0;
    CouplingMode mode = CouplingMode::algebraic;
    std::vector<int> sizes{8, 10, 12, 14, 16, 18};
    double g_lo = 0.5;
    double g_hi = 1.5;
    double coarse_step = 0.01;
    double fine_step = 0.001;
    double derivative_step = 1e-3;
    bool exponents = true;
    LanczosOptions lanczos{};
};

struct CriticalAnalysis {
    ScalingDataset data;
    std::vector<Crossing> crossings;
    CriticalFit fit;
    ExponentSet exponents;
    PowerLawFit gap_fit;
    PowerLawFit order_fit;
    PowerLawFit schmidt_fit;
    NuEstimate nu;
    std::vector<std::string> warnings;
};

namespace detail {

inline double grid_point(double x) { return std::round(x * 1e10) / 1e10; }

/// Samples <m^2>, <m^4> and the Binder cumulant of the even-sector ground
/// state, reusing the last eigenvector of the same size as a start vector.
class BinderSampler {
  public:
    BinderSampler(const CriticalScanConfig& config, ScalingDataset& data) : config_(config), data_(data) {}

    void sample(int n, double g) {
        if (data_.contains(n, g, "binder")) return;
        auto& h = hamiltonian(n);
        const auto it = last_.find(n);
        const Eigen::VectorXd* guess = it != last_.end() ? &it->second : nullptr;
        const auto gs = ground_state(h, g, config_.lanczos, guess);
        last_[n] = gs.amplitudes;
        const auto m = magnetization_moments(gs.state, natural_order(config_.j0));
        data_.add(n, g, "m2", m.m2);
        data_.add(n, g, "m4", m.m4);
        data_.add(n, g, "binder", binder_cumulant(m));
        data_.add(n, g, "energy", gs.energy, gs.residual);
    }

    const Hamiltonian& hamiltonian(int n) {
        auto it = hamiltonians_.find(n);
        if (it == hamiltonians_.end()) {
            const auto j = build_couplings({n, config_.j0, config_.alpha, config_.mode});
            it = hamiltonians_.emplace(n, Hamiltonian(j, Sector::even, Frame::x)).first;
        }
        return it->second;
    }

    const Eigen::VectorXd* last(int n) const {
        const auto it = last_.find(n);
        return it != last_.end() ? &it->second : nullptr;
    }

  private:
    const CriticalScanConfig& config_;
    ScalingDataset& data_;
    std::map<int, Hamiltonian> hamiltonians_;
    std::map<int, Eigen::VectorXd> last_;
};

}  // namespace detail

/// Binder curves on a coarse grid, refined around each pairwise crossing.
inline std::vector<Crossing> scan_crossings(const CriticalScanConfig& config, ScalingDataset& data,
                                            std::vector<std::string>* warnings = nullptr) {
    require(config.sizes.size() >= 2, "critical scan: need at least two sizes");
    require(config.g_hi > config.g_lo && config.g_lo > 0.0, "critical scan: invalid g range");
    require(config.coarse_step > 0.0 && config.fine_step > 0.0, "critical scan: grid steps must be positive");
    detail::BinderSampler sampler(config, data);
    const int coarse_points = static_cast<int>(std::floor((config.g_hi - config.g_lo) / config.coarse_step + 1e-9));
    for (int n : config.sizes)
        for (int k = 0; k <= coarse_points; ++k) sampler.sample(n, detail::grid_point(config.g_lo + k * config.coarse_step));

    std::vector<Crossing> out;
    for (std::size_t a = 0; a < config.sizes.size(); ++a) {
        for (std::size_t b = a + 1; b < config.sizes.size(); ++b) {
            const int n1 = config.sizes[a], n2 = config.sizes[b];
            Crossing coarse;
            try {
                coarse = binder_crossing(data, n1, n2);
            } catch (const NoCrossing& e) {
                if (warnings != nullptr) warnings->push_back(e.what());
                continue;
            }
            const double start = detail::grid_point(
                config.g_lo + std::floor((coarse.g_star - config.g_lo) / config.coarse_step) * config.coarse_step);
            const int fine_points = static_cast<int>(std::round(config.coarse_step / config.fine_step));
            for (int n : {n1, n2})
                for (int k = 0; k <= fine_points; ++k) sampler.sample(n, detail::grid_point(start + k * config.fine_step));
            out.push_back(binder_crossing(data, n1, n2));
        }
    }
    std::sort(out.begin(), out.end(), [](const Crossing& x, const Crossing& y) { return x.product() < y.product(); });
    return out;
}

/// Equilibrium observables at a fixed field for every size, and the
/// exponent fits built on them.
inline void critical_exponents(const CriticalScanConfig& config, double g_c, CriticalAnalysis& result) {
    std::vector<double> ns, gaps, orders, schmidts, dm2, dm4;
    std::vector<int> sizes;
    const Order order = natural_order(config.j0);
    for (int n : config.sizes) {
        const auto j = build_couplings({n, config.j0, config.alpha, config.mode});
        Hamiltonian h(j, Sector::even, Frame::x);
        LanczosOptions tight = config.lanczos;
        tight.tolerance = std::min(tight.tolerance, 1e-11);
        const auto gs = ground_state(h, g_c, tight);
        const auto m = magnetization_moments(gs.state, order);
        const auto gap = energy_gap(j, g_c, config.lanczos);
        const auto schmidt = schmidt_gap(gs.state);
        const auto d2 = moment_derivative(h, g_c, order, 2, config.derivative_step, &gs);
        const auto d4 = moment_derivative(h, g_c, order, 4, config.derivative_step, &gs);
        if (!d2.converged || !d4.converged)
            result.warnings.push_back("moment derivative stencil not converged at N=" + std::to_string(n));
        auto& d = result.data;
        d.add(n, g_c, "gap_sector", gap.within_sector);
        d.add(n, g_c, "gap_global", gap.global);
        d.add(n, g_c, "order_rms", std::sqrt(m.m2));
        d.add(n, g_c, "schmidt_gap", schmidt.gap);
        d.add(n, g_c, "dm2", d2.value, std::abs(d2.value - d2.check));
        d.add(n, g_c, "dm4", d4.value, std::abs(d4.value - d4.check));
        sizes.push_back(n);
        ns.push_back(n);
        gaps.push_back(gap.within_sector);
        orders.push_back(std::sqrt(m.m2));
        schmidts.push_back(schmidt.gap);
        dm2.push_back(d2.value);
        dm4.push_back(d4.value);
    }
    result.gap_fit = powerlaw_fit(ns, gaps);
    result.order_fit = powerlaw_fit(ns, orders);
    result.schmidt_fit = powerlaw_fit(ns, schmidts);
    result.nu = nu_from_moments(sizes, dm2, dm4);
    auto& e = result.exponents;
    e.nu = result.nu.nu;
    e.nu_err = result.nu.nu_err;
    e.z = -result.gap_fit.exponent;
    e.z_err = result.gap_fit.exponent_err;
    const double bm = -result.order_fit.exponent, bl = -result.schmidt_fit.exponent;
    e.beta_m = bm * e.nu;
    e.beta_m_err = std::hypot(result.order_fit.exponent_err * e.nu, bm * e.nu_err);
    e.beta_lambda = bl * e.nu;
    e.beta_lambda_err = std::hypot(result.schmidt_fit.exponent_err * e.nu, bl * e.nu_err);
}

/// Full pipeline: crossings, g_c fit and (optionally) exponents at g_c.
inline CriticalAnalysis analyze_critical_point(const CriticalScanConfig& config) {
    CriticalAnalysis result;
    result.crossings = scan_crossings(config, result.data, &result.warnings);
    result.fit = fit_gc(result.crossings);
    if (!result.fit.accepted()) result.warnings.push_back("g_c fit not accepted: " + result.fit.message);
    if (config.exponents) critical_exponents(config, result.fit.g_c, result);
    return result;
}

}  // namespace lrtim
