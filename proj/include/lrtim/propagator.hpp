#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "lrtim/errors.hpp"
#include "lrtim/hamiltonian.hpp"
#include "lrtim/krylov.hpp"

namespace lrtim {

/// Time-stepping scheme for i d/dt psi = H(g(t)) psi.
///
/// `midpoint` freezes H at the centre of each step. `magnus4` is the
/// fourth-order commutator-free Magnus scheme with two frozen-field
/// exponentials per step; both reuse the same Krylov exponential action.
enum class Scheme { midpoint, magnus4 };

inline std::string to_string(Scheme s) { return s == Scheme::midpoint ? "midpoint" : "magnus4"; }

inline Scheme scheme_from_string(const std::string& s) {
    if (s == "midpoint") return Scheme::midpoint;
    if (s == "magnus4" || s == "cf4") return Scheme::magnus4;
    throw InvalidArgument("unknown integrator scheme '" + s + "'");
}

struct IntegratorOptions {
    Scheme scheme = Scheme::magnus4;
    /// Target for the final-state fidelity deficit against the exact
    /// evolution. Steps are controlled on the amplitude error, whose square
    /// bounds the deficit.
    double tolerance = 1e-8;
    double initial_step = 0.02;
    double max_step = 1.0;
    long max_steps = 50'000'000;
    ExpmOptions expm{1e-13, 40};
};

struct PropagationStats {
    long accepted = 0;
    long rejected = 0;
    long matvecs = 0;
    double last_error = 0.0;
};

/// Adaptive propagator with step-doubling error control. The field
/// schedule is any callable g(t).
class Propagator {
  public:
    using Field = std::function<double(double)>;

    /// `workspace` may be shared by propagators that never run concurrently.
    Propagator(const Hamiltonian& h, Field field, IntegratorOptions options = {},
               KrylovWorkspace* workspace = nullptr)
        : h_(h),
          field_(std::move(field)),
          options_(options),
          step_(options.initial_step),
          workspace_(workspace != nullptr ? workspace : &own_workspace_) {
        require(options_.tolerance > 0.0, "propagator: tolerance must be positive");
    }

    const IntegratorOptions& options() const { return options_; }
    const PropagationStats& stats() const { return stats_; }

    /// Advances psi from t0 to t1. `span` is the length of the whole run the
    /// error budget is spread over (defaults to t1 - t0).
    void advance(Eigen::VectorXcd& psi, double t0, double t1, double span = -1.0) {
        require(t1 >= t0, "propagator: cannot integrate backwards");
        require(psi.size() == h_.dimension(), "propagator: state dimension mismatch");
        if (t1 == t0) return;
        if (span <= 0.0) span = t1 - t0;
        const double budget = std::sqrt(options_.tolerance);
        const int order = options_.scheme == Scheme::midpoint ? 2 : 4;
        double t = t0;
        Eigen::VectorXcd full, half;
        while (t < t1) {
            double h = std::min({step_, options_.max_step, t1 - t});
            // Avoid leaving a sliver at the end of the interval.
            if (t1 - (t + h) < 1e-3 * h) h = t1 - t;
            full = psi;
            step(full, t, h);
            half = psi;
            step(half, t, 0.5 * h);
            step(half, t + 0.5 * h, 0.5 * h);
            const double err = (full - half).norm() / (std::pow(2.0, order) - 1.0);
            const double allowed = budget * h / span;
            const double factor = err > 0.0 ? 0.9 * std::pow(allowed / err, 1.0 / order) : 2.0;
            if (err <= allowed) {
                // Local extrapolation would raise the order; keep the plain
                // two-half-step result so the error estimate stays honest.
                psi.swap(half);
                t += h;
                ++stats_.accepted;
                stats_.last_error = err;
                if (h == std::min(step_, options_.max_step)) step_ = h * std::clamp(factor, 0.2, 2.0);
            } else {
                ++stats_.rejected;
                step_ = h * std::clamp(factor, 0.1, 0.9);
                if (step_ < 1e-12 * std::max(1.0, span))
                    throw ConvergenceError("propagator: step size underflow", err, static_cast<int>(stats_.accepted));
            }
            if (stats_.accepted + stats_.rejected > options_.max_steps)
                throw ConvergenceError("propagator: step budget exhausted", err, static_cast<int>(stats_.accepted));
        }
    }

    /// One step of the scheme with a fixed step size.
    void step(Eigen::VectorXcd& psi, double t, double h) {
        if (options_.scheme == Scheme::midpoint) {
            exponential(psi, field_(t + 0.5 * h), h);
            return;
        }
        const double r = std::sqrt(3.0) / 6.0;
        const double g1 = field_(t + (0.5 - r) * h);
        const double g2 = field_(t + (0.5 + r) * h);
        const double a1 = (3.0 - 2.0 * std::sqrt(3.0)) / 12.0;
        const double a2 = (3.0 + 2.0 * std::sqrt(3.0)) / 12.0;
        // Each factor is exp(-i h (a H(g1) + b H(g2))) with a + b = 1/2,
        // i.e. a frozen Hamiltonian at an effective field over h/2.
        exponential(psi, 2.0 * (a2 * g1 + a1 * g2), 0.5 * h);
        exponential(psi, 2.0 * (a1 * g1 + a2 * g2), 0.5 * h);
    }

  private:
    void exponential(Eigen::VectorXcd& psi, double g, double duration) {
        auto op = [&](const Eigen::VectorXcd& in, Eigen::VectorXcd& out) { h_.apply(g, in, out); };
        stats_.matvecs += expm_krylov(op, duration, psi, options_.expm, workspace_);
    }

    const Hamiltonian& h_;
    Field field_;
    IntegratorOptions options_;
    double step_;
    PropagationStats stats_;
    KrylovWorkspace own_workspace_;
    KrylovWorkspace* workspace_;
};

/// Fixed-step propagation with the chosen scheme (no error control).
inline void propagate_fixed(const Hamiltonian& h, const Propagator::Field& field, Eigen::VectorXcd& psi, double t0,
                            double t1, long steps, Scheme scheme = Scheme::midpoint,
                            const ExpmOptions& expm = {1e-13, 40}) {
    require(steps >= 1, "propagate_fixed: need at least one step");
    IntegratorOptions o;
    o.scheme = scheme;
    o.expm = expm;
    Propagator p(h, field, o);
    const double dt = (t1 - t0) / static_cast<double>(steps);
    for (long s = 0; s < steps; ++s) p.step(psi, t0 + s * dt, dt);
}

}  // namespace lrtim
