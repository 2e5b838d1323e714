#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "lrtim/errors.hpp"
#include "lrtim/fitting.hpp"

namespace lrtim {

/// One tabulated observable S(g, N) with its numerical-error estimate.
struct ScalingRow {
    int sites = 0;
    double g = 0.0;
    std::string name;
    double value = 0.0;
    double err = 0.0;
};

/// Rows keyed by (N, g, name); keys are unique.
class ScalingDataset {
  public:
    void add(const ScalingRow& row) {
        require(row.sites > 0 && row.sites % 2 == 0, "scaling dataset: N must be even and positive");
        require(std::isfinite(row.value) && std::isfinite(row.g), "scaling dataset: values must be finite");
        require(!row.name.empty() && row.name.find(',') == std::string::npos,
                "scaling dataset: observable names must be non-empty and comma-free");
        const auto [it, inserted] = rows_.emplace(Key{row.sites, row.g, row.name}, row);
        require(inserted, "scaling dataset: duplicate row for " + row.name + " at N=" + std::to_string(row.sites));
        (void)it;
    }

    void add(int sites, double g, const std::string& name, double value, double err = 0.0) {
        add(ScalingRow{sites, g, name, value, err});
    }

    bool contains(int sites, double g, const std::string& name) const {
        return rows_.count(Key{sites, g, name}) > 0;
    }

    const ScalingRow& at(int sites, double g, const std::string& name) const {
        const auto it = rows_.find(Key{sites, g, name});
        require(it != rows_.end(), "scaling dataset: no row for " + name + " at N=" + std::to_string(sites));
        return it->second;
    }

    std::size_t size() const { return rows_.size(); }
    bool empty() const { return rows_.empty(); }

    std::vector<int> sizes(const std::string& name) const {
        std::set<int> out;
        for (const auto& [k, r] : rows_)
            if (r.name == name) out.insert(r.sites);
        return {out.begin(), out.end()};
    }

    /// (g, value) pairs of one observable at one size, sorted by g.
    std::vector<std::pair<double, double>> series(const std::string& name, int sites) const {
        std::vector<std::pair<double, double>> out;
        for (const auto& [k, r] : rows_)
            if (r.name == name && r.sites == sites) out.emplace_back(r.g, r.value);
        std::sort(out.begin(), out.end());
        return out;
    }

    std::vector<ScalingRow> rows() const {
        std::vector<ScalingRow> out;
        out.reserve(rows_.size());
        for (const auto& [k, r] : rows_) out.push_back(r);
        return out;
    }

    void write_csv(std::ostream& os) const {
        os << "N,g,name,value,err\n";
        os << std::setprecision(17);
        for (const auto& [k, r] : rows_) os << r.sites << ',' << r.g << ',' << r.name << ',' << r.value << ',' << r.err << '\n';
    }

    void write_csv(const std::string& path) const {
        std::ofstream f(path);
        require(static_cast<bool>(f), "scaling dataset: cannot write " + path);
        write_csv(f);
    }

    static ScalingDataset read_csv(std::istream& is) {
        ScalingDataset d;
        std::string line;
        require(static_cast<bool>(std::getline(is, line)), "scaling dataset: empty CSV");
        require(line == "N,g,name,value,err", "scaling dataset: unexpected CSV header '" + line + "'");
        int lineno = 1;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string f[5];
            for (auto& field : f) require(static_cast<bool>(std::getline(ss, field, ',')), "scaling dataset: short row at line " + std::to_string(lineno));
            try {
                d.add(std::stoi(f[0]), std::stod(f[1]), f[2], std::stod(f[3]), std::stod(f[4]));
            } catch (const std::logic_error&) {
                throw InvalidArgument("scaling dataset: malformed number at line " + std::to_string(lineno));
            }
        }
        return d;
    }

    static ScalingDataset read_csv(const std::string& path) {
        std::ifstream f(path);
        require(static_cast<bool>(f), "scaling dataset: cannot read " + path);
        return read_csv(f);
    }

  private:
    using Key = std::tuple<int, double, std::string>;
    std::map<Key, ScalingRow> rows_;
};

struct Crossing {
    int n1 = 0;
    int n2 = 0;
    double g_star = 0.0;
    double product() const { return static_cast<double>(n1) * n2; }
};

/// Crossing g* of the `name` curves (default Binder cumulant) of two sizes.
/// The difference is bracketed on the common grid and the root located by
/// bisection on monotone cubic interpolants, to `tolerance` in g.
inline Crossing binder_crossing(const ScalingDataset& data, int n1, int n2, const std::string& name = "binder",
                                double tolerance = 1e-6) {
    require(n1 != n2, "binder_crossing: sizes must differ");
    const auto s1 = data.series(name, n1);
    const auto s2 = data.series(name, n2);
    std::map<double, double> c1(s1.begin(), s1.end()), c2(s2.begin(), s2.end());
    std::vector<double> grid, diff;
    for (const auto& [g, v] : c1) {
        const auto it = c2.find(g);
        if (it == c2.end()) continue;
        grid.push_back(g);
        diff.push_back(v - it->second);
    }
    if (grid.size() < 2) throw NoCrossing("binder_crossing: fewer than two common g values");
    // Differences at round-off level (deep in either phase) carry no sign.
    const double floor = 1e-9;
    std::size_t bracket = grid.size();
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        const bool significant = std::abs(diff[i]) > floor || std::abs(diff[i + 1]) > floor;
        if (significant && (diff[i] == 0.0 || std::signbit(diff[i]) != std::signbit(diff[i + 1]))) {
            bracket = i;
            break;
        }
    }
    if (bracket == grid.size())
        throw NoCrossing("binder_crossing: curves for N=" + std::to_string(n1) + " and N=" + std::to_string(n2) +
                         " do not cross on the sampled grid");
    auto column = [](const std::vector<std::pair<double, double>>& s, bool values) {
        std::vector<double> out;
        for (const auto& p : s) out.push_back(values ? p.second : p.first);
        return out;
    };
    const MonotoneCubic f1(column(s1, false), column(s1, true));
    const MonotoneCubic f2(column(s2, false), column(s2, true));
    const double a = grid[bracket], b = grid[bracket + 1];
    // Orient so the result does not depend on the argument order.
    const double sign = n1 < n2 ? 1.0 : -1.0;
    const double root = bisect_root([&](double g) { return sign * (f1(g) - f2(g)); }, a, b, 0.1 * tolerance);
    return {std::min(n1, n2), std::max(n1, n2), root};
}

/// Crossings of every pair N1 < N2 from the sizes present in the dataset.
inline std::vector<Crossing> all_crossings(const ScalingDataset& data, const std::vector<int>& sizes,
                                           const std::string& name = "binder") {
    std::vector<Crossing> out;
    for (std::size_t a = 0; a < sizes.size(); ++a)
        for (std::size_t b = a + 1; b < sizes.size(); ++b) out.push_back(binder_crossing(data, sizes[a], sizes[b], name));
    std::sort(out.begin(), out.end(), [](const Crossing& x, const Crossing& y) { return x.product() < y.product(); });
    return out;
}

/// g*(N1 N2) = g_c (1 + b (N1 N2)^-omega).
struct CriticalFit {
    double g_c = 0.0;
    double b = 0.0;
    double omega = 0.0;
    Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
    double residual = 0.0;  ///< RMS deviation of the fitted crossings
    int iterations = 0;
    bool converged = false;
    std::string message;

    double g_c_err() const { return std::sqrt(std::max(covariance(0, 0), 0.0)); }
    double b_err() const { return std::sqrt(std::max(covariance(1, 1), 0.0)); }
    double omega_err() const { return std::sqrt(std::max(covariance(2, 2), 0.0)); }
    bool accepted() const { return converged && omega > 0.0 && g_c > 0.0; }
};

inline CriticalFit fit_gc(const std::vector<Crossing>& crossings, const LeastSquaresOptions& options = {}) {
    require(crossings.size() >= 4, "fit_gc: need at least four crossings");
    const int m = static_cast<int>(crossings.size());
    std::vector<double> p(crossings.size()), y(crossings.size());
    for (std::size_t i = 0; i < crossings.size(); ++i) {
        p[i] = crossings[i].product();
        y[i] = crossings[i].g_star;
    }
    // Start from the omega on a grid whose linear sub-fit is best.
    double best_rss = std::numeric_limits<double>::infinity();
    Eigen::Vector3d start(y.back(), 0.0, 1.0);
    for (double omega = 0.05; omega <= 6.0 + 1e-12; omega += 0.05) {
        std::vector<double> x(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) x[i] = std::pow(p[i], -omega);
        if (*std::max_element(x.begin(), x.end()) - *std::min_element(x.begin(), x.end()) <= 0.0) continue;
        const LinearFit lin = linear_fit(x, y);
        if (lin.rss < best_rss && lin.intercept != 0.0) {
            best_rss = lin.rss;
            start = Eigen::Vector3d(lin.intercept, lin.slope / lin.intercept, omega);
        }
    }
    auto residual = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r) {
        r.resize(m);
        for (int i = 0; i < m; ++i) r(i) = q(0) * (1.0 + q(1) * std::pow(p[static_cast<std::size_t>(i)], -q(2))) - y[static_cast<std::size_t>(i)];
    };
    auto jacobian = [&](const Eigen::VectorXd& q, Eigen::MatrixXd& j) {
        j.resize(m, 3);
        for (int i = 0; i < m; ++i) {
            const double pw = std::pow(p[static_cast<std::size_t>(i)], -q(2));
            j(i, 0) = 1.0 + q(1) * pw;
            j(i, 1) = q(0) * pw;
            j(i, 2) = -q(0) * q(1) * pw * std::log(p[static_cast<std::size_t>(i)]);
        }
    };
    const auto lsq = least_squares(residual, jacobian, start, m, options);
    CriticalFit fit;
    fit.g_c = lsq.params(0);
    fit.b = lsq.params(1);
    fit.omega = lsq.params(2);
    if (!lsq.singular) fit.covariance = lsq.covariance;
    fit.residual = std::sqrt(lsq.rss / m);
    fit.iterations = lsq.iterations;
    fit.converged = lsq.converged && !lsq.singular;
    fit.message = lsq.message;
    return fit;
}

/// 1/nu from (d<m^2>/dg)^2 / |d<m^4>/dg| ~ N^(1/nu).
struct NuEstimate {
    double inv_nu = 0.0;
    double inv_nu_err = 0.0;
    double nu = 0.0;
    double nu_err = 0.0;
    PowerLawFit fit;
};

inline NuEstimate nu_from_moments(const std::vector<int>& sizes, const std::vector<double>& dm2,
                                  const std::vector<double>& dm4) {
    require(sizes.size() == dm2.size() && sizes.size() == dm4.size(), "nu_from_moments: length mismatch");
    require(sizes.size() >= 4, "nu_from_moments: need at least four sizes");
    std::vector<double> x, y;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        require(dm4[i] != 0.0, "nu_from_moments: vanishing fourth-moment derivative");
        x.push_back(sizes[i]);
        y.push_back(dm2[i] * dm2[i] / std::abs(dm4[i]));
    }
    NuEstimate e;
    e.fit = powerlaw_fit(x, y);
    e.inv_nu = e.fit.exponent;
    e.inv_nu_err = e.fit.exponent_err;
    e.nu = 1.0 / e.inv_nu;
    e.nu_err = e.inv_nu_err / (e.inv_nu * e.inv_nu);
    return e;
}

/// One curve of a collapse: abscissa and scaled ordinate.
struct CollapseCurve {
    int sites = 0;
    std::vector<double> x;
    std::vector<double> y;
};

struct CollapseScore {
    double chi2 = 0.0;
    int points = 0;
    int excluded = 0;  ///< points dropped because the reference was <= 0
    int reference_sites = 0;
};

/// chi^2 = sum (phi_ref(x) - phi(x))^2 / phi_ref(x) over every non-reference
/// curve point with x inside the window and inside the reference range.
/// The reference curve is interpolated linearly, in log(x) when
/// `log_abscissa` is set.
inline CollapseScore collapse_score(std::vector<CollapseCurve> curves, FitWindow window = {-10.0, 10.0},
                                    bool log_abscissa = false) {
    require(curves.size() >= 2, "collapse: need at least two curves");
    auto ref_it = std::max_element(curves.begin(), curves.end(),
                                   [](const CollapseCurve& a, const CollapseCurve& b) { return a.sites < b.sites; });
    auto key = [log_abscissa](double x) { return log_abscissa ? std::log(x) : x; };
    std::vector<std::pair<double, double>> ref;
    for (std::size_t i = 0; i < ref_it->x.size(); ++i) ref.emplace_back(key(ref_it->x[i]), ref_it->y[i]);
    std::sort(ref.begin(), ref.end());
    require(ref.size() >= 2, "collapse: the reference curve needs at least two points");
    CollapseScore score;
    score.reference_sites = ref_it->sites;
    for (auto it = curves.begin(); it != curves.end(); ++it) {
        if (it == ref_it) continue;
        for (std::size_t i = 0; i < it->x.size(); ++i) {
            const double xv = it->x[i];
            if (!window.contains(xv)) continue;
            const double k = key(xv);
            if (k < ref.front().first || k > ref.back().first) continue;
            auto hi = std::lower_bound(ref.begin(), ref.end(), std::make_pair(k, -std::numeric_limits<double>::infinity()));
            if (hi == ref.begin()) ++hi;
            if (hi == ref.end()) --hi;
            const auto lo = hi - 1;
            const double t = hi->first == lo->first ? 0.0 : (k - lo->first) / (hi->first - lo->first);
            const double phi_ref = lo->second + t * (hi->second - lo->second);
            if (phi_ref <= 0.0) {
                ++score.excluded;
                continue;
            }
            const double d = phi_ref - it->y[i];
            score.chi2 += d * d / phi_ref;
            ++score.points;
        }
    }
    return score;
}

/// Equilibrium collapse of S(g, N) = N^(-gamma/nu) phi((g - g_c) N^(1/nu)).
inline CollapseScore collapse_chi2(const ScalingDataset& data, const std::string& name, double g_c, double nu,
                                   double gamma_over_nu, FitWindow window = {-10.0, 10.0}) {
    require(nu > 0.0, "collapse_chi2: nu must be positive");
    const auto sizes = data.sizes(name);
    require(sizes.size() >= 3, "collapse_chi2: need at least three sizes");
    std::vector<CollapseCurve> curves;
    for (int n : sizes) {
        CollapseCurve c;
        c.sites = n;
        for (const auto& [g, v] : data.series(name, n)) {
            c.x.push_back((g - g_c) * std::pow(static_cast<double>(n), 1.0 / nu));
            c.y.push_back(v * std::pow(static_cast<double>(n), gamma_over_nu));
        }
        curves.push_back(std::move(c));
    }
    return collapse_score(std::move(curves), window);
}

/// Critical exponents with standard errors.
struct ExponentSet {
    double nu = 0.0, nu_err = 0.0;
    double z = 0.0, z_err = 0.0;
    double beta_m = 0.0, beta_m_err = 0.0;
    double beta_lambda = 0.0, beta_lambda_err = 0.0;

    /// Adiabatic-impulse prediction for |g~ - g_c| ~ tau_q^mu: mu = -1/(z nu + 1).
    double ai_mu() const { return -1.0 / (z * nu + 1.0); }
    double ai_mu_err() const {
        const double d = (z * nu + 1.0) * (z * nu + 1.0);
        return std::hypot(nu * z_err, z * nu_err) / d;
    }
};

}  // namespace lrtim
