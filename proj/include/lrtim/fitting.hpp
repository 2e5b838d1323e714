#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
// pchip.hpp in Boost 1.74 uses isnan without including its declaration.
#include <boost/math/special_functions/fpclassify.hpp>
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/tools/roots.hpp>
#include <unsupported/Eigen/NonLinearOptimization>

#include "lrtim/errors.hpp"

namespace lrtim {

/// Closed interval on the abscissa used to select fit points.
struct FitWindow {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    bool contains(double x) const { return x >= lo && x <= hi; }
};

/// y = amplitude * x^exponent, fitted by ordinary least squares on logs.
struct PowerLawFit {
    double exponent = 0.0;
    double exponent_err = 0.0;
    double amplitude = 0.0;
    double amplitude_err = 0.0;
    double residual = 0.0;  ///< RMS of the log residuals
    int points = 0;
    FitWindow window;
};

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_err = 0.0;
    double intercept_err = 0.0;
    double rss = 0.0;
    int points = 0;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size(), "linear_fit: x and y differ in length");
    require(x.size() >= 2, "linear_fit: need at least two points");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    require(sxx > 0.0, "linear_fit: abscissae are all equal");
    LinearFit f;
    f.points = static_cast<int>(x.size());
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        f.rss += r * r;
    }
    if (x.size() > 2) {
        const double s2 = f.rss / (n - 2.0);
        f.slope_err = std::sqrt(s2 / sxx);
        f.intercept_err = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
    }
    return f;
}

inline PowerLawFit powerlaw_fit(const std::vector<double>& x, const std::vector<double>& y, FitWindow window = {}) {
    require(x.size() == y.size(), "powerlaw_fit: x and y differ in length");
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!window.contains(x[i])) continue;
        require(x[i] > 0.0 && y[i] > 0.0 && std::isfinite(y[i]), "powerlaw_fit: data must be positive and finite");
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    require(lx.size() >= 3, "powerlaw_fit: fewer than three points inside the window");
    const LinearFit lin = linear_fit(lx, ly);
    PowerLawFit f;
    f.exponent = lin.slope;
    f.exponent_err = lin.slope_err;
    f.amplitude = std::exp(lin.intercept);
    f.amplitude_err = f.amplitude * lin.intercept_err;
    f.residual = std::sqrt(lin.rss / static_cast<double>(lx.size()));
    f.points = lin.points;
    f.window = window;
    return f;
}

/// Shape-preserving piecewise cubic (Fritsch-Carlson) through sorted samples.
class MonotoneCubic {
  public:
    MonotoneCubic(std::vector<double> x, std::vector<double> y) {
        require(x.size() == y.size(), "monotone cubic: x and y differ in length");
        require(x.size() >= 2, "monotone cubic: need at least two samples");
        for (std::size_t i = 1; i < x.size(); ++i) require(x[i] > x[i - 1], "monotone cubic: x must increase");
        lo_ = x.front();
        hi_ = x.back();
        if (x.size() == 2) {
            // Too few points for the cubic; fall back to the chord.
            x0_ = x[0];
            y0_ = y[0];
            slope_ = (y[1] - y[0]) / (x[1] - x[0]);
            linear_ = true;
            return;
        }
        spline_ = std::make_shared<Spline>(std::move(x), std::move(y));
    }

    double operator()(double x) const {
        require(x >= lo_ - 1e-12 && x <= hi_ + 1e-12, "monotone cubic: evaluation outside the sampled range");
        x = std::clamp(x, lo_, hi_);
        if (linear_) return y0_ + slope_ * (x - x0_);
        return (*spline_)(x);
    }

    double lo() const { return lo_; }
    double hi() const { return hi_; }

  private:
    using Spline = boost::math::interpolators::pchip<std::vector<double>>;
    std::shared_ptr<Spline> spline_;
    double lo_ = 0.0, hi_ = 0.0;
    bool linear_ = false;
    double x0_ = 0.0, y0_ = 0.0, slope_ = 0.0;
};

/// Root of f on [a, b] by bisection; f(a) and f(b) must differ in sign.
inline double bisect_root(const std::function<double(double)>& f, double a, double b, double tolerance = 1e-10) {
    const double fa = f(a), fb = f(b);
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    require(std::signbit(fa) != std::signbit(fb), "bisect_root: the interval does not bracket a root");
    auto done = [tolerance](double l, double r) { return std::abs(r - l) <= tolerance; };
    const auto bracket = boost::math::tools::bisect(f, a, b, done);
    return 0.5 * (bracket.first + bracket.second);
}

struct LeastSquaresOptions {
    /// Relative step size below which the iteration stops.
    double step_tolerance = 1e-10;
    int max_iterations = 200;
};

struct LeastSquaresResult {
    Eigen::VectorXd params;
    Eigen::MatrixXd covariance;  ///< s^2 (J^T J)^-1 at the solution
    double rss = 0.0;
    int iterations = 0;
    bool converged = false;
    bool singular = false;
    std::string message;

    double stderr_of(int i) const {
        const double v = covariance(i, i);
        return v >= 0.0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
    }
};

namespace detail {

struct LmAdaptor {
    using Scalar = double;
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> residual;
    std::function<void(const Eigen::VectorXd&, Eigen::MatrixXd&)> jacobian;
    int params = 0;
    int count = 0;

    int inputs() const { return params; }
    int values() const { return count; }
    int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& f) const {
        residual(x, f);
        return 0;
    }
    int df(const Eigen::VectorXd& x, Eigen::MatrixXd& j) const {
        jacobian(x, j);
        return 0;
    }
};

}  // namespace detail

/// Damped Gauss-Newton (Levenberg-Marquardt) minimization of ||r(p)||^2.
/// `residual(p, r)` fills r (size m); `jacobian(p, J)` fills the m x n
/// derivative matrix.
inline LeastSquaresResult least_squares(std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> residual,
                                        std::function<void(const Eigen::VectorXd&, Eigen::MatrixXd&)> jacobian,
                                        Eigen::VectorXd start, int m, const LeastSquaresOptions& options = {}) {
    const int n = static_cast<int>(start.size());
    require(m >= n && n >= 1, "least_squares: fewer residuals than parameters");
    detail::LmAdaptor f{std::move(residual), std::move(jacobian), n, m};
    Eigen::LevenbergMarquardt<detail::LmAdaptor> lm(f);
    lm.parameters.xtol = options.step_tolerance;
    lm.parameters.ftol = 1e-15;
    lm.parameters.gtol = 0.0;
    lm.parameters.maxfev = options.max_iterations;
    Eigen::VectorXd x = std::move(start);
    const auto status = lm.minimize(x);

    LeastSquaresResult out;
    out.params = x;
    out.iterations = static_cast<int>(lm.iter);
    Eigen::VectorXd r(m);
    f(x, r);
    out.rss = r.squaredNorm();
    using Status = Eigen::LevenbergMarquardtSpace::Status;
    out.converged = status == Status::RelativeErrorTooSmall || status == Status::RelativeReductionTooSmall ||
                    status == Status::RelativeErrorAndReductionTooSmall || status == Status::CosinusTooSmall ||
                    status == Status::FtolTooSmall || status == Status::XtolTooSmall;
    if (!out.converged) out.message = "least_squares: no convergence (status " + std::to_string(static_cast<int>(status)) + ")";

    Eigen::MatrixXd jac(m, n);
    f.df(x, jac);
    const Eigen::MatrixXd normal = jac.transpose() * jac;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
    const auto& s = svd.singularValues();
    out.singular = s.size() == 0 || s(s.size() - 1) <= 1e-12 * s(0);
    if (out.singular) {
        out.covariance = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
        if (out.message.empty()) out.message = "least_squares: singular Jacobian at the solution";
    } else {
        const double s2 = m > n ? out.rss / (m - n) : out.rss;
        out.covariance = s2 * normal.inverse();
    }
    return out;
}

/// Forward-difference Jacobian for residual functions without an analytic one.
inline std::function<void(const Eigen::VectorXd&, Eigen::MatrixXd&)> numeric_jacobian(
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> residual, int m) {
    return [residual = std::move(residual), m](const Eigen::VectorXd& p, Eigen::MatrixXd& j) {
        Eigen::VectorXd r0(m), r1(m);
        residual(p, r0);
        j.resize(m, p.size());
        for (Eigen::Index k = 0; k < p.size(); ++k) {
            Eigen::VectorXd q = p;
            const double h = 1e-7 * std::max(1.0, std::abs(p(k)));
            q(k) += h;
            residual(q, r1);
            j.col(k) = (r1 - r0) / h;
        }
    };
}

}  // namespace lrtim
