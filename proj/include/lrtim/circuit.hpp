#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lrtim/couplings.hpp"
#include "lrtim/errors.hpp"
#include "lrtim/hamiltonian.hpp"
#include "lrtim/ions.hpp"
#include "lrtim/krylov.hpp"
#include "lrtim/propagator.hpp"
#include "lrtim/state.hpp"

namespace lrtim {

/// K = J + w 1 with w = -lambda_min(J), so K is positive semi-definite with
/// a zero eigenvalue. Terms are the eigenpairs above the drop threshold,
/// ordered by decreasing Lambda.
struct KDecomposition {
    double shift = 0.0;  ///< w
    Eigen::MatrixXd k;
    std::vector<double> lambdas;
    std::vector<Eigen::VectorXd> vectors;
    std::vector<double> dropped;  ///< eigenvalues below threshold

    int terms() const { return static_cast<int>(lambdas.size()); }

    /// Sites where v_k is negative; conjugating by sz there turns the
    /// couplings Lambda |v_i||v_j| into Lambda v_i v_j.
    Bits mask(int term) const {
        const auto& v = vectors.at(static_cast<std::size_t>(term));
        Bits m = 0;
        for (Eigen::Index i = 0; i < v.size(); ++i)
            if (v(i) < 0.0) m |= Bits{1} << i;
        return m;
    }

    Eigen::MatrixXd reconstruct() const {
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k.rows(), k.cols());
        for (std::size_t t = 0; t < lambdas.size(); ++t) out += lambdas[t] * vectors[t] * vectors[t].transpose();
        return out;
    }
};

/// `shift` overrides w (it must keep K positive semi-definite).
inline KDecomposition build_k_decomposition(const CouplingMatrix& couplings, std::optional<double> shift = std::nullopt) {
    const Eigen::MatrixXd& j = couplings.matrix();
    const int n = couplings.sites();
    require(n >= 2, "k decomposition: need at least two sites");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> jeig(j, Eigen::EigenvaluesOnly);
    KDecomposition out;
    out.shift = shift.value_or(-jeig.eigenvalues()(0));
    require(out.shift >= -jeig.eigenvalues()(0) - 1e-12, "k decomposition: shift leaves K indefinite");
    out.k = j + out.shift * Eigen::MatrixXd::Identity(n, n);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.k);
    require(eig.info() == Eigen::Success, "k decomposition: eigen decomposition failed");
    const double top = eig.eigenvalues()(n - 1);
    const double threshold = 1e-10 * std::max(top, 1e-300);
    for (int i = n - 1; i >= 0; --i) {
        const double l = eig.eigenvalues()(i);
        if (l <= threshold) {
            out.dropped.push_back(l);
            continue;
        }
        Eigen::VectorXd v = eig.eigenvectors().col(i);
        // Sign convention: non-negative component sum, else positive largest entry.
        const double sum = v.sum();
        if (std::abs(sum) > 1e-12) {
            if (sum < 0.0) v = -v;
        } else {
            Eigen::Index at = 0;
            v.cwiseAbs().maxCoeff(&at);
            if (v(at) < 0.0) v = -v;
        }
        out.lambdas.push_back(l);
        out.vectors.push_back(std::move(v));
    }
    require(!out.lambdas.empty(), "k decomposition: couplings vanish");
    return out;
}

/// Rabi frequencies realizing term k: Omega_i = Omega_0 sqrt(Lambda_k) (v_k)_i,
/// driven at mu = omega_com + delta.
struct RabiAssignment {
    int term = 0;
    Eigen::VectorXd omega;
    double omega0 = 1.0;
    double delta = 0.0;
    double detuning = 0.0;  ///< mu
    /// Ideal couplings are normalization * Lambda_k v_i v_j.
    double normalization = 0.0;
};

inline RabiAssignment rabi_assignment(const KDecomposition& d, int term, double delta, const ModeData& modes,
                                      const GuardBand& guard = {}, std::optional<double> omega0 = std::nullopt) {
    require(term >= 0 && term < d.terms(), "rabi_assignment: no such term");
    require(delta > 0.0, "rabi_assignment: detuning offset must be positive");
    require(modes.ions() == d.k.rows(), "rabi_assignment: mode data for a different chain");
    const double com = modes.frequencies(0);
    RabiAssignment r;
    r.term = term;
    r.delta = delta;
    r.detuning = com + delta;
    const Eigen::VectorXd shape = std::sqrt(d.lambdas[static_cast<std::size_t>(term)]) * d.vectors[static_cast<std::size_t>(term)];
    if (omega0) {
        r.omega0 = *omega0;
    } else {
        // Largest drive that keeps every mode outside twice the guard band.
        double limit = std::numeric_limits<double>::infinity();
        for (Eigen::Index m = 0; m < modes.frequencies.size(); ++m) {
            const double eta = guard.lamb_dicke * modes.vectors.col(m).cwiseAbs().maxCoeff() / std::sqrt(modes.frequencies(m));
            limit = std::min(limit, std::abs(r.detuning - modes.frequencies(m)) / (2.0 * guard.factor * eta));
        }
        r.omega0 = limit / shape.cwiseAbs().maxCoeff();
    }
    r.omega = r.omega0 * shape;
    r.normalization = r.omega0 * r.omega0 / (modes.ions() * (r.detuning * r.detuning - com * com));
    return r;
}

/// Largest relative deviation of the physical couplings of one term from
/// normalization * Lambda v v^T, over pairs i < j.
inline double rank_one_deviation(const KDecomposition& d, const RabiAssignment& r, const ModeData& modes,
                                 const GuardBand& guard = {}) {
    const Eigen::MatrixXd je = effective_couplings(r.omega, r.detuning, modes, guard);
    const auto& v = d.vectors[static_cast<std::size_t>(r.term)];
    const double lambda = d.lambdas[static_cast<std::size_t>(r.term)];
    double dev = 0.0, scale = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        for (Eigen::Index j = i + 1; j < v.size(); ++j) {
            const double ideal = lambda * v(i) * v(j);
            dev = std::max(dev, std::abs(je(i, j) / r.normalization - ideal));
            scale = std::max(scale, std::abs(ideal));
        }
    return scale > 0.0 ? dev / scale : dev;
}

// ---------------------------------------------------------------------------
// Gate plans

struct PlanLayer {
    enum class Type { mask, interaction };
    Type type = Type::mask;
    Bits bits = 0;              ///< mask layers
    int term = 0;               ///< interaction layers
    double lambda = 0.0;
    Eigen::VectorXd v;          ///< |v_k|; signs are carried by the masks
    double g_mid = 0.0;         ///< full field at the step midpoint
    double field_share = 0.0;   ///< g_mid / terms
};

struct CircuitPlan {
    int sites = 0;
    double alpha = std::numeric_limits<double>::quiet_NaN();
    double j0 = std::numeric_limits<double>::quiet_NaN();
    double dt = 0.0;
    long steps = 0;
    double normalization = 1.0;  ///< Omega_0-type prefactor folded out of every gate
    double shift = 0.0;          ///< w of the K decomposition
    /// Phase per step dropped with the diagonal of K: exp(-i dt w N / 2).
    double diagonal_phase_per_step = 0.0;
    int terms = 0;
    Bits leading_mask = 0;       ///< applied once before the first step
    std::vector<std::vector<PlanLayer>> step_layers;
    std::vector<std::string> warnings;

    /// Layers in one step (the leading mask is not counted).
    int depth(long step = 0) const { return static_cast<int>(step_layers.at(static_cast<std::size_t>(step)).size()); }
    int max_depth() const {
        int d = 0;
        for (const auto& s : step_layers) d = std::max(d, static_cast<int>(s.size()));
        return d;
    }
};

/// Splits each step into the K terms (Lie-Trotter):
///   U_step = prod_k Zt_k exp(-i dt Ht_k) Zt_k,
/// where Ht_k has couplings Lambda_k |v_i||v_j| and field g_mid / terms.
/// Adjacent masks are merged: Z_k = Zt_k Zt_{k+1}, and the last mask of
/// a step absorbs the first mask of the next (Zt_q Zt_1).
inline CircuitPlan compile_evolution(const CouplingMatrix& couplings, const std::function<double(double)>& field,
                                     double tau_q, double dt, std::optional<double> shift = std::nullopt) {
    require(dt > 0.0 && tau_q > 0.0, "compile_evolution: dt and tau_q must be positive");
    CircuitPlan plan;
    plan.sites = couplings.sites();
    const double ratio = tau_q / dt;
    plan.steps = std::max(1L, std::lround(ratio));
    if (std::abs(ratio - static_cast<double>(plan.steps)) > 1e-9 * ratio)
        plan.warnings.push_back("tau_q / dt = " + std::to_string(ratio) + " is not an integer; using " +
                                std::to_string(plan.steps) + " steps");
    plan.dt = tau_q / static_cast<double>(plan.steps);
    const KDecomposition d = build_k_decomposition(couplings, shift);
    plan.shift = d.shift;
    plan.terms = d.terms();
    plan.diagonal_phase_per_step = -plan.dt * d.shift * plan.sites / 2.0;
    const int q = d.terms();
    std::vector<Bits> masks(static_cast<std::size_t>(q));
    for (int k = 0; k < q; ++k) masks[static_cast<std::size_t>(k)] = d.mask(k);
    plan.leading_mask = masks[0];
    for (long l = 0; l < plan.steps; ++l) {
        const double g_mid = field((static_cast<double>(l) + 0.5) * plan.dt);
        std::vector<PlanLayer> layers;
        for (int k = 0; k < q; ++k) {
            PlanLayer w;
            w.type = PlanLayer::Type::interaction;
            w.term = k;
            w.lambda = d.lambdas[static_cast<std::size_t>(k)];
            w.v = d.vectors[static_cast<std::size_t>(k)].cwiseAbs();
            w.g_mid = g_mid;
            w.field_share = g_mid / q;
            layers.push_back(std::move(w));
            const bool last_step = l + 1 == plan.steps;
            const Bits next = k + 1 < q ? masks[static_cast<std::size_t>(k + 1)] : (last_step ? 0 : masks[0]);
            const Bits merged = masks[static_cast<std::size_t>(k)] ^ next;
            if (merged != 0) {
                PlanLayer z;
                z.bits = merged;
                layers.push_back(z);
            }
        }
        plan.step_layers.push_back(std::move(layers));
    }
    return plan;
}

inline CircuitPlan compile_evolution(const CouplingSpec& spec, double g0, double tau_q, double dt) {
    const auto j = build_couplings(spec);
    auto plan = compile_evolution(j, [g0, tau_q](double t) { return g0 * (1.0 - t / tau_q); }, tau_q, dt);
    plan.alpha = spec.alpha;
    plan.j0 = spec.j0;
    return plan;
}

/// The same plan with every merged mask expanded back into the pair
/// Zt_k ... Zt_k around each interaction layer.
inline std::vector<PlanLayer> expanded_layers(const CircuitPlan& plan, const KDecomposition& d) {
    std::vector<PlanLayer> out;
    for (const auto& step : plan.step_layers)
        for (const auto& layer : step) {
            if (layer.type != PlanLayer::Type::interaction) continue;
            PlanLayer z;
            z.bits = d.mask(layer.term);
            if (z.bits) out.push_back(z);
            out.push_back(layer);
            if (z.bits) out.push_back(z);
        }
    return out;
}

namespace detail {

inline Hamiltonian term_hamiltonian(const PlanLayer& layer, const Basis& basis) {
    const Eigen::Index n = layer.v.size();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = m(j, i) = layer.lambda * layer.v(i) * layer.v(j);
    return Hamiltonian(CouplingMatrix(m), basis.sector, basis.frame);
}

}  // namespace detail

inline void apply_layers(const std::vector<PlanLayer>& layers, double dt, StateVector& psi,
                         const ExpmOptions& expm = {1e-14, 40}) {
    // Interaction layers of one term share couplings; build each once.
    std::vector<std::optional<Hamiltonian>> cache;
    KrylovWorkspace ws;
    for (const auto& layer : layers) {
        if (layer.type == PlanLayer::Type::mask) {
            apply_z_mask(psi, layer.bits);
            continue;
        }
        if (static_cast<int>(cache.size()) <= layer.term) cache.resize(static_cast<std::size_t>(layer.term + 1));
        auto& h = cache[static_cast<std::size_t>(layer.term)];
        if (!h) h.emplace(detail::term_hamiltonian(layer, psi.basis()));
        const double g = layer.field_share;
        auto op = [&](const Eigen::VectorXcd& in, Eigen::VectorXcd& out) { h->apply(g, in, out); };
        expm_krylov(op, dt, psi.amplitudes(), expm, &ws);
    }
}

/// Runs the plan on psi0 (any sector or frame).
inline StateVector simulate_plan(const CircuitPlan& plan, const StateVector& psi0, const ExpmOptions& expm = {1e-14, 40}) {
    require(psi0.sites() == plan.sites, "simulate_plan: state and plan differ in size");
    require(plan.sites <= 20, "simulate_plan: chain longer than the simulation cap");
    StateVector psi = psi0;
    if (plan.leading_mask) apply_z_mask(psi, plan.leading_mask);
    std::vector<PlanLayer> all;
    for (const auto& s : plan.step_layers) all.insert(all.end(), s.begin(), s.end());
    apply_layers(all, plan.dt, psi, expm);
    return psi;
}

/// Exact evolution under H(g(t)) with a tight adaptive integrator.
inline StateVector exact_evolution(const CouplingMatrix& couplings, const std::function<double(double)>& field,
                                   double tau_q, const StateVector& psi0, double tolerance = 1e-14) {
    Hamiltonian h(couplings, psi0.sector(), psi0.frame());
    IntegratorOptions o;
    o.tolerance = tolerance;
    o.initial_step = 1e-3;
    Propagator p(h, field, o);
    StateVector psi = psi0;
    p.advance(psi.amplitudes(), 0.0, tau_q);
    return psi;
}

struct Verification {
    double deficit = 0.0;  ///< 1 - |<exact|plan>|^2
    double norm_error = 0.0;
};

inline Verification verify(const CircuitPlan& plan, const StateVector& psi0, const StateVector& exact) {
    const StateVector out = simulate_plan(plan, psi0);
    Verification v;
    v.deficit = 1.0 - fidelity(exact, out);
    v.norm_error = std::abs(out.norm() - 1.0);
    return v;
}

/// ||U_trotter psi - exp(-i dt H(g)) psi|| for one step at fixed field.
inline double trotter_step_error(const CouplingMatrix& couplings, double g, double dt, const StateVector& psi) {
    auto plan = compile_evolution(couplings, [g](double) { return g; }, dt, dt);
    const StateVector trotter = simulate_plan(plan, psi);
    Hamiltonian h(couplings, psi.sector(), psi.frame());
    StateVector exact = psi;
    auto op = [&](const Eigen::VectorXcd& in, Eigen::VectorXcd& out) { h.apply(g, in, out); };
    expm_krylov(op, dt, exact.amplitudes(), ExpmOptions{1e-15, 40});
    return (trotter.amplitudes() - exact.amplitudes()).norm();
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const CircuitPlan& plan) {
    auto num = [](double x) { return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x); };
    nlohmann::json j;
    j["N"] = plan.sites;
    j["alpha"] = num(plan.alpha);
    j["J0"] = num(plan.j0);
    j["dt"] = plan.dt;
    j["steps"] = plan.steps;
    j["normalization"] = plan.normalization;
    j["shift"] = plan.shift;
    j["diagonal_phase_per_step"] = plan.diagonal_phase_per_step;
    j["terms"] = plan.terms;
    j["leading_mask"] = plan.leading_mask;
    j["warnings"] = plan.warnings;
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : plan.step_layers) {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& l : s) {
            if (l.type == PlanLayer::Type::mask) {
                layers.push_back({{"type", "mask"}, {"bits", l.bits}});
            } else {
                layers.push_back({{"type", "interaction"},
                                  {"k", l.term},
                                  {"lambda", l.lambda},
                                  {"v", std::vector<double>(l.v.data(), l.v.data() + l.v.size())},
                                  {"g_mid", l.g_mid},
                                  {"field_share", l.field_share}});
            }
        }
        steps.push_back(std::move(layers));
    }
    j["layers"] = std::move(steps);
    return j;
}

inline CircuitPlan circuit_plan_from_json(const nlohmann::json& j) {
    auto num = [](const nlohmann::json& x) { return x.is_null() ? std::numeric_limits<double>::quiet_NaN() : x.get<double>(); };
    CircuitPlan p;
    p.sites = j.at("N").get<int>();
    p.alpha = num(j.at("alpha"));
    p.j0 = num(j.at("J0"));
    p.dt = j.at("dt").get<double>();
    p.steps = j.at("steps").get<long>();
    p.normalization = j.value("normalization", 1.0);
    p.shift = j.value("shift", 0.0);
    p.diagonal_phase_per_step = j.value("diagonal_phase_per_step", 0.0);
    p.terms = j.value("terms", 0);
    p.leading_mask = j.value("leading_mask", Bits{0});
    p.warnings = j.value("warnings", std::vector<std::string>{});
    for (const auto& s : j.at("layers")) {
        std::vector<PlanLayer> layers;
        for (const auto& l : s) {
            PlanLayer out;
            const auto type = l.at("type").get<std::string>();
            if (type == "mask") {
                out.bits = l.at("bits").get<Bits>();
            } else if (type == "interaction") {
                out.type = PlanLayer::Type::interaction;
                out.term = l.at("k").get<int>();
                out.lambda = l.at("lambda").get<double>();
                const auto v = l.at("v").get<std::vector<double>>();
                out.v = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
                out.g_mid = l.at("g_mid").get<double>();
                out.field_share = l.value("field_share", out.g_mid / std::max(p.terms, 1));
            } else {
                throw InvalidArgument("circuit plan: unknown layer type '" + type + "'");
            }
            layers.push_back(std::move(out));
        }
        p.step_layers.push_back(std::move(layers));
    }
    require(static_cast<long>(p.step_layers.size()) == p.steps, "circuit plan: step count does not match the layers");
    return p;
}

}  // namespace lrtim
