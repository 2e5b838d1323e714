#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lrtim/couplings.hpp"
#include "lrtim/errors.hpp"
#include "lrtim/fitting.hpp"
#include "lrtim/fss.hpp"
#include "lrtim/hamiltonian.hpp"
#include "lrtim/observables.hpp"
#include "lrtim/propagator.hpp"
#include "lrtim/spectra.hpp"

namespace lrtim {

enum class InitialState { ground_state, polarized };

inline std::string to_string(InitialState s) { return s == InitialState::ground_state ? "ground_state" : "polarized"; }

inline InitialState initial_state_from_string(const std::string& s) {
    if (s == "ground_state" || s == "ground") return InitialState::ground_state;
    if (s == "polarized" || s == "fully_polarized") return InitialState::polarized;
    throw InvalidArgument("unknown initial state '" + s + "'");
}

/// Linear ramp g(t) = g0 (1 - t / tau_q) on [0, tau_q].
struct QuenchProtocol {
    double g0 = 5.0;
    double tau_q = 1.0;
    /// Times at which observables are recorded; empty means only t = tau_q.
    std::vector<double> sample_times;
    IntegratorOptions integrator{};
    InitialState initial = InitialState::ground_state;

    double field(double t) const { return g0 * (1.0 - t / tau_q); }
    /// Time at which the ramp passes g_c.
    double critical_time(double g_c) const { return (1.0 - g_c / g0) * tau_q; }

    void validate(double g_c = 0.0) const {
        require(tau_q > 0.0, "quench protocol: tau_q must be positive");
        require(g0 > g_c, "quench protocol: g0 must exceed g_c");
        for (double t : sample_times)
            require(t >= 0.0 && t <= tau_q * (1.0 + 1e-12), "quench protocol: sample time outside [0, tau_q]");
    }
};

struct TrajectorySample {
    double t = 0.0;
    double g = 0.0;
    double fidelity = 0.0;
    double p_ex = 0.0;
    double e_r = 0.0;
    double domains = 0.0;
    double energy = 0.0;
    double ground_energy = 0.0;
    double norm = 1.0;
    bool critical = false;     ///< the sample placed at t_c
    bool checkpointed = false;
};

struct TrajectoryRecord {
    double tau_q = 0.0;
    std::vector<TrajectorySample> samples;
    PropagationStats stats;

    const TrajectorySample& final_sample() const {
        require(!samples.empty(), "trajectory: no samples recorded");
        return samples.back();
    }
    const TrajectorySample& critical_sample() const {
        for (const auto& s : samples)
            if (s.critical) return s;
        throw InvalidArgument("trajectory: no sample at the critical time");
    }
};

/// Thread-safe store of even-sector ground states keyed by field value.
/// New entries start Lanczos from the stored state at the nearest field.
class GroundStateCache {
  public:
    explicit GroundStateCache(const Hamiltonian& h, LanczosOptions options = tight_options())
        : h_(h), options_(options) {}

    static LanczosOptions tight_options() {
        LanczosOptions o;
        o.tolerance = 1e-11;
        return o;
    }

    const Hamiltonian& hamiltonian() const { return h_; }

    GroundStateResult at(double g) {
        const double key = std::round(g * 1e12) / 1e12;
        std::lock_guard<std::mutex> lock(mutex_);
        if (auto it = store_.find(key); it != store_.end()) return it->second;
        const Eigen::VectorXd* guess = nullptr;
        if (!store_.empty()) {
            auto hi = store_.lower_bound(key);
            auto best = hi == store_.end() ? std::prev(hi) : hi;
            if (hi != store_.begin() && hi != store_.end() && key - std::prev(hi)->first < hi->first - key)
                best = std::prev(hi);
            guess = &best->second.amplitudes;
        }
        return store_.emplace(key, ground_state(h_, g, options_, guess)).first->second;
    }

  private:
    const Hamiltonian& h_;
    LanczosOptions options_;
    std::mutex mutex_;
    std::map<double, GroundStateResult> store_;
};

/// P_ex = 1 - |<phi0|psi>|^2.
inline double excitation_probability(const StateVector& psi, const GroundStateResult& ground) {
    return 1.0 - fidelity(ground.state, psi);
}

inline double excitation_probability(const StateVector& psi, const CouplingMatrix& couplings, double g) {
    Hamiltonian h(couplings, psi.sector(), psi.frame());
    return excitation_probability(psi, ground_state(h, g, GroundStateCache::tight_options()));
}

/// E_r = <psi|H(g)|psi> - E0(g).
inline double residual_energy(const StateVector& psi, const Hamiltonian& h, double g, const GroundStateResult& ground) {
    return h.energy(g, psi) - ground.energy;
}

inline double residual_energy(const StateVector& psi, const CouplingMatrix& couplings, double g) {
    Hamiltonian h(couplings, psi.sector(), psi.frame());
    return residual_energy(psi, h, g, ground_state(h, g, GroundStateCache::tight_options()));
}

enum class ResidualObservable { m2_ferro, m2_antiferro, energy };

inline ResidualObservable residual_observable_from_string(const std::string& s) {
    if (s == "m2_F" || s == "m2_ferro") return ResidualObservable::m2_ferro;
    if (s == "m2_AF" || s == "m2_antiferro") return ResidualObservable::m2_antiferro;
    if (s == "energy" || s == "H") return ResidualObservable::energy;
    throw InvalidArgument("unknown residual observable '" + s + "'");
}

/// S_r = |<psi|S|psi> - <phi0|S|phi0>|.
inline double residual_observable(const StateVector& psi, const Hamiltonian& h, double g, const GroundStateResult& ground,
                                  ResidualObservable which) {
    switch (which) {
        case ResidualObservable::energy:
            return std::abs(h.energy(g, psi) - ground.energy);
        case ResidualObservable::m2_ferro:
            return std::abs(magnetization_moments(psi, Order::ferro).m2 -
                            magnetization_moments(ground.state, Order::ferro).m2);
        case ResidualObservable::m2_antiferro:
            return std::abs(magnetization_moments(psi, Order::antiferro).m2 -
                            magnetization_moments(ground.state, Order::antiferro).m2);
    }
    return 0.0;
}

inline double residual_observable(const StateVector& psi, const CouplingMatrix& couplings, double g,
                                  ResidualObservable which) {
    Hamiltonian h(couplings, psi.sector(), psi.frame());
    return residual_observable(psi, h, g, ground_state(h, g, GroundStateCache::tight_options()), which);
}

/// Initial state of a protocol in the even sector, x frame.
inline StateVector initial_state(const QuenchProtocol& protocol, GroundStateCache& cache) {
    const Hamiltonian& h = cache.hamiltonian();
    if (protocol.initial == InitialState::ground_state) return cache.at(protocol.g0).state;
    return to_frame(StateVector::all_down(h.sites()), h.frame());
}

struct EvolveOptions {
    /// When set, an exact sample is inserted at t_c and flagged.
    std::optional<double> critical_field;
    std::optional<Order> order;  ///< domain notion; defaults to the sign of J_01
    bool keep_final_state = false;
    /// Called at every sample; returning true marks the sample as checkpointed.
    std::function<bool(const TrajectorySample&, const StateVector&)> on_sample;
    /// Norm drift beyond this raises ConvergenceError.
    double norm_tolerance = 1e-9;
};

struct Trajectory {
    TrajectoryRecord record;
    std::optional<StateVector> final_state;
};

namespace detail {

inline Order default_order(const Hamiltonian& h, const EvolveOptions& options) {
    if (options.order) return *options.order;
    return h.sites() >= 2 && h.couplings()(0, 1) > 0.0 ? Order::antiferro : Order::ferro;
}

inline std::vector<std::pair<double, bool>> sample_schedule(const QuenchProtocol& p, const EvolveOptions& o) {
    std::vector<std::pair<double, bool>> times;
    if (p.sample_times.empty())
        times.emplace_back(p.tau_q, false);
    else
        for (double t : p.sample_times) times.emplace_back(std::min(t, p.tau_q), false);
    if (o.critical_field) times.emplace_back(p.critical_time(*o.critical_field), true);
    std::sort(times.begin(), times.end());
    // Merge coincident times, keeping the critical flag.
    std::vector<std::pair<double, bool>> out;
    for (const auto& t : times) {
        if (!out.empty() && std::abs(out.back().first - t.first) <= 1e-12 * p.tau_q)
            out.back().second = out.back().second || t.second;
        else
            out.push_back(t);
    }
    return out;
}

}  // namespace detail

/// Integrates the ramp in the even sector and records the observables at
/// every sample time against the instantaneous ground state.
inline Trajectory evolve(GroundStateCache& cache, const QuenchProtocol& protocol, const EvolveOptions& options = {}) {
    const Hamiltonian& h = cache.hamiltonian();
    require(h.sector() == Sector::even, "evolve: dynamics run in the even sector");
    protocol.validate(options.critical_field.value_or(0.0));
    const Order order = detail::default_order(h, options);
    StateVector psi = initial_state(protocol, cache);
    Propagator prop(h, [&protocol](double t) { return protocol.field(t); }, protocol.integrator);

    Trajectory out;
    out.record.tau_q = protocol.tau_q;
    double t = 0.0;
    for (const auto& [when, critical] : detail::sample_schedule(protocol, options)) {
        prop.advance(psi.amplitudes(), t, when, protocol.tau_q);
        t = when;
        TrajectorySample s;
        s.t = t;
        s.g = critical ? *options.critical_field : protocol.field(t);
        s.critical = critical;
        s.norm = psi.norm();
        if (std::abs(s.norm - 1.0) > options.norm_tolerance)
            throw ConvergenceError("evolve: norm drifted beyond tolerance", std::abs(s.norm - 1.0),
                                   static_cast<int>(prop.stats().accepted));
        const GroundStateResult ground = cache.at(s.g);
        s.fidelity = fidelity(ground.state, psi);
        s.p_ex = 1.0 - s.fidelity;
        s.energy = h.energy(s.g, psi);
        s.ground_energy = ground.energy;
        s.e_r = s.energy - ground.energy;
        s.domains = domain_expectation(psi, order);
        if (options.on_sample) s.checkpointed = options.on_sample(s, psi);
        out.record.samples.push_back(s);
    }
    out.record.stats = prop.stats();
    if (options.keep_final_state) out.final_state = std::move(psi);
    return out;
}

inline Trajectory evolve(const CouplingMatrix& couplings, const QuenchProtocol& protocol, const EvolveOptions& options = {}) {
    Hamiltonian h(couplings, Sector::even, Frame::x);
    GroundStateCache cache(h);
    return evolve(cache, protocol, options);
}

// ---------------------------------------------------------------------------
// Adiabatic-impulse analysis

/// Raised when the fidelity never drops below the threshold.
class AdiabaticRun : public Error {
  public:
    using Error::Error;
};

struct AiTransition {
    double t_theta = 0.0;
    double g_tilde = 0.0;
};

/// First time F(t) < theta, linearly interpolated between samples. Every
/// sample interval up to the crossing must be at most `max_interval`.
inline AiTransition ai_transition(const std::vector<double>& times, const std::vector<double>& fidelities,
                                  const std::vector<double>& fields, double theta,
                                  double max_interval = std::numeric_limits<double>::infinity()) {
    require(theta > 0.0 && theta < 1.0, "ai_transition: theta must lie in (0, 1)");
    require(times.size() == fidelities.size() && times.size() == fields.size() && !times.empty(),
            "ai_transition: inconsistent sample arrays");
    if (fidelities[0] < theta) return {times[0], fields[0]};
    for (std::size_t k = 1; k < times.size(); ++k) {
        require(times[k] - times[k - 1] <= max_interval * (1.0 + 1e-9),
                "ai_transition: trajectory sampled too coarsely");
        if (fidelities[k] < theta) {
            const double w = (fidelities[k - 1] - theta) / (fidelities[k - 1] - fidelities[k]);
            return {times[k - 1] + w * (times[k] - times[k - 1]), fields[k - 1] + w * (fields[k] - fields[k - 1])};
        }
    }
    throw AdiabaticRun("adiabatic run: the fidelity never drops below theta");
}

/// `resolution` is the coarsest sample spacing accepted, as a fraction of tau_q.
inline AiTransition ai_transition(const TrajectoryRecord& record, double theta, double resolution = 1e-3) {
    std::vector<double> t, f, g;
    for (const auto& s : record.samples) {
        t.push_back(s.t);
        f.push_back(s.fidelity);
        g.push_back(s.g);
    }
    return ai_transition(t, f, g, theta, record.tau_q * resolution);
}

struct AiScalingConfig {
    double g0 = 5.0;
    double g_c = 1.0;
    double theta = 0.995;
    std::vector<double> taus;
    int grid_points = 1000;  ///< field samples between g0 and 0
    FitWindow window{1.0, 10.0};
    IntegratorOptions integrator{};
    InitialState initial = InitialState::ground_state;
};

struct AiPoint {
    double tau_q = 0.0;
    double t_theta = 0.0;
    double g_tilde = 0.0;
    double distance = 0.0;  ///< |g~ - g_c|
    bool adiabatic = false;  ///< F stayed above theta over the whole ramp
};

struct AiScalingResult {
    std::vector<AiPoint> points;
    std::optional<PowerLawFit> fit;
    std::string message;
    /// F against g for each tau_q, up to the crossing.
    std::map<double, std::vector<std::pair<double, double>>> traces;

    double mu() const { return fit ? fit->exponent : std::numeric_limits<double>::quiet_NaN(); }
    double mu_err() const { return fit ? fit->exponent_err : std::numeric_limits<double>::quiet_NaN(); }
};

/// Runs every tau_q in lockstep on the shared field grid g_k = g0 (1 - k/K),
/// so each instantaneous ground state is computed once. A trajectory stops
/// at its first fidelity crossing.
inline AiScalingResult ai_scaling(const Hamiltonian& h, const AiScalingConfig& config) {
    require(h.sector() == Sector::even, "ai_scaling: dynamics run in the even sector");
    require(!config.taus.empty(), "ai_scaling: no quench times");
    require(config.grid_points >= 10, "ai_scaling: field grid too coarse");
    require(config.theta > 0.0 && config.theta < 1.0, "ai_scaling: theta must lie in (0, 1)");
    require(config.g0 > config.g_c, "ai_scaling: g0 must exceed g_c");
    const int K = config.grid_points;

    struct Run {
        QuenchProtocol protocol;
        StateVector psi;
        std::unique_ptr<Propagator> prop;
        std::vector<double> t, f, g;
        bool active = true;
    };
    KrylovWorkspace workspace;
    const LanczosOptions tight = GroundStateCache::tight_options();
    GroundStateResult ground = ground_state(h, config.g0, tight);
    const StateVector polarized = to_frame(StateVector::all_down(h.sites()), h.frame());

    std::vector<Run> runs;
    runs.reserve(config.taus.size());
    for (double tau : config.taus) {
        Run r;
        r.protocol.g0 = config.g0;
        r.protocol.tau_q = tau;
        r.protocol.integrator = config.integrator;
        r.protocol.initial = config.initial;
        r.protocol.validate(config.g_c);
        r.psi = config.initial == InitialState::ground_state ? ground.state : polarized;
        r.t.push_back(0.0);
        r.f.push_back(fidelity(ground.state, r.psi));
        r.g.push_back(config.g0);
        runs.push_back(std::move(r));
    }
    for (auto& r : runs) {
        const QuenchProtocol* p = &r.protocol;
        r.prop = std::make_unique<Propagator>(h, [p](double t) { return p->field(t); }, p->integrator, &workspace);
        if (r.f.back() < config.theta) r.active = false;
    }

    for (int k = 1; k <= K; ++k) {
        if (std::none_of(runs.begin(), runs.end(), [](const Run& r) { return r.active; })) break;
        const double g = config.g0 * (1.0 - static_cast<double>(k) / K);
        ground = ground_state(h, g, tight, &ground.amplitudes);
        for (auto& r : runs) {
            if (!r.active) continue;
            const double t1 = r.protocol.tau_q * static_cast<double>(k) / K;
            r.prop->advance(r.psi.amplitudes(), r.t.back(), t1, r.protocol.tau_q);
            r.t.push_back(t1);
            r.f.push_back(fidelity(ground.state, r.psi));
            r.g.push_back(g);
            if (r.f.back() < config.theta) r.active = false;
        }
    }

    AiScalingResult out;
    std::vector<double> xs, ys;
    for (auto& r : runs) {
        AiPoint p;
        p.tau_q = r.protocol.tau_q;
        try {
            const auto tr = ai_transition(r.t, r.f, r.g, config.theta, r.protocol.tau_q / K);
            p.t_theta = tr.t_theta;
            p.g_tilde = tr.g_tilde;
            p.distance = std::abs(tr.g_tilde - config.g_c);
        } catch (const AdiabaticRun&) {
            p.adiabatic = true;
        }
        auto& trace = out.traces[p.tau_q];
        for (std::size_t i = 0; i < r.g.size(); ++i) trace.emplace_back(r.g[i], r.f[i]);
        if (!p.adiabatic && p.distance > 0.0) {
            xs.push_back(p.tau_q);
            ys.push_back(p.distance);
        }
        out.points.push_back(p);
    }
    try {
        out.fit = powerlaw_fit(xs, ys, config.window);
    } catch (const InvalidArgument& e) {
        out.message = e.what();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Kibble-Zurek sweeps

struct KzConfig {
    double g0 = 5.0;
    double g_c = 1.0;
    std::vector<double> taus;
    IntegratorOptions integrator{};
    InitialState initial = InitialState::ground_state;
    std::optional<Order> order;
};

/// Observables of one quench: at t_c and at the end of the ramp (g = 0).
struct KzPoint {
    int sites = 0;
    double tau_q = 0.0;
    double p_ex_c = 0.0;
    double e_r_c = 0.0;
    double m2_r_c = 0.0;  ///< residual <m^2> of the natural order at t_c
    double domains_c = 0.0;
    double p_ex_final = 0.0;
    double e_r_final = 0.0;
    double domains_final = 0.0;

    /// Quantity by name: n_do, p_ex_c, e_r_c, e_r_density_c, m2_r_c,
    /// n_do_c, p_ex_final, e_r_final.
    double value(const std::string& quantity) const {
        if (quantity == "n_do") return domains_final;
        if (quantity == "n_do_c") return domains_c;
        if (quantity == "p_ex_c") return p_ex_c;
        if (quantity == "e_r_c") return e_r_c;
        if (quantity == "e_r_density_c") return e_r_c / sites;
        if (quantity == "m2_r_c") return m2_r_c;
        if (quantity == "p_ex_final") return p_ex_final;
        if (quantity == "e_r_final") return e_r_final;
        throw InvalidArgument("unknown sweep quantity '" + quantity + "'");
    }

    static const std::vector<std::string>& quantities() {
        static const std::vector<std::string> names{"n_do",  "n_do_c",        "p_ex_c",     "e_r_c",
                                                    "e_r_density_c", "m2_r_c", "p_ex_final", "e_r_final"};
        return names;
    }
};

/// One quench of a sweep. Ground states at g_c and 0 come from the cache,
/// so a sweep computes them once.
inline KzPoint kz_point(GroundStateCache& cache, const KzConfig& config, double tau_q) {
    const Hamiltonian& h = cache.hamiltonian();
    QuenchProtocol p;
    p.g0 = config.g0;
    p.tau_q = tau_q;
    p.integrator = config.integrator;
    p.initial = config.initial;
    EvolveOptions o;
    o.critical_field = config.g_c;
    o.order = config.order;
    const Order order = detail::default_order(h, o);
    double m2_r = 0.0;
    o.on_sample = [&](const TrajectorySample& s, const StateVector& psi) {
        if (s.critical)
            m2_r = residual_observable(psi, h, s.g, cache.at(s.g),
                                       order == Order::ferro ? ResidualObservable::m2_ferro
                                                             : ResidualObservable::m2_antiferro);
        return false;
    };
    const auto traj = evolve(cache, p, o);
    KzPoint k;
    k.sites = h.sites();
    k.tau_q = tau_q;
    const auto& c = traj.record.critical_sample();
    const auto& f = traj.record.final_sample();
    k.p_ex_c = c.p_ex;
    k.e_r_c = c.e_r;
    k.m2_r_c = m2_r;
    k.domains_c = c.domains;
    k.p_ex_final = f.p_ex;
    k.e_r_final = f.e_r;
    k.domains_final = f.domains;
    return k;
}

struct KZSweep {
    int sites = 0;
    std::vector<KzPoint> points;  ///< strictly increasing tau_q

    std::vector<double> taus() const {
        std::vector<double> t;
        for (const auto& p : points) t.push_back(p.tau_q);
        return t;
    }
    std::vector<double> series(const std::string& quantity) const {
        std::vector<double> v;
        for (const auto& p : points) v.push_back(p.value(quantity));
        return v;
    }
    void validate() const {
        for (std::size_t i = 1; i < points.size(); ++i)
            require(points[i].tau_q > points[i - 1].tau_q, "kz sweep: tau_q values must increase strictly");
    }
};

inline KZSweep kz_sweep(const Hamiltonian& h, const KzConfig& config) {
    GroundStateCache cache(h);
    std::vector<double> taus = config.taus;
    std::sort(taus.begin(), taus.end());
    KZSweep out;
    out.sites = h.sites();
    for (double tau : taus) out.points.push_back(kz_point(cache, config, tau));
    out.validate();
    return out;
}

struct KzFit {
    std::string quantity;
    PowerLawFit fit;
    bool plateau = false;  ///< window reaches the adiabatic plateau <n_do> ~ 1
    std::string message;

    double mu() const { return fit.exponent; }
    double mu_err() const { return fit.exponent_err; }
};

/// Power law of one sweep quantity against tau_q inside the window.
inline KzFit kz_fit(const KZSweep& sweep, const std::string& quantity, FitWindow window = {5.0, 50.0},
                    double plateau_margin = 0.05) {
    sweep.validate();
    KzFit out;
    out.quantity = quantity;
    out.fit = powerlaw_fit(sweep.taus(), sweep.series(quantity), window);
    for (const auto& p : sweep.points) {
        if (window.contains(p.tau_q) && p.domains_final < 1.0 + plateau_margin) {
            out.plateau = true;
            out.message = "fit window reaches the adiabatic plateau (<n_do> ~ 1)";
        }
    }
    return out;
}

struct TheoreticalMu {
    double value = 0.0;
    double err = 0.0;
};

/// mu_do = mu_ex = -nu/(z nu + 1); mu_r = -(1 + z) nu/(z nu + 1) (d = 1).
inline TheoreticalMu theoretical_mu(const ExponentSet& e, const std::string& quantity) {
    const double d = 1.0;
    const double den = e.z * e.nu + 1.0;
    const bool energy = quantity.rfind("e_r", 0) == 0;
    const double num = energy ? (d + e.z) * e.nu : d * e.nu;
    TheoreticalMu out;
    out.value = -num / den;
    // Partial derivatives with respect to nu and z.
    const double dnu = energy ? -(d + e.z) / (den * den) : -d / (den * den);
    const double dz = energy ? -(e.nu * den - (d + e.z) * e.nu * e.nu) / (den * den) : d * e.nu * e.nu / (den * den);
    out.err = std::hypot(dnu * e.nu_err, dz * e.z_err);
    return out;
}

// ---------------------------------------------------------------------------
// Domain statistics

struct GaussianFit {
    double amplitude = 0.0, mean = 0.0, sigma = 0.0;
    double residual = std::numeric_limits<double>::infinity();  ///< RMS over n = 1..N
    bool converged = false;
};

struct ExponentialFit {
    double amplitude = 0.0, rate = 0.0;
    double residual = std::numeric_limits<double>::infinity();
    bool converged = false;
};

struct DomainDistribution {
    std::vector<double> probabilities;  ///< P(n_do = n) at index n - 1
    double mean = 0.0;
    double variance = 0.0;
    GaussianFit gaussian;
    ExponentialFit exponential;

    double probability(int n) const { return probabilities.at(static_cast<std::size_t>(n - 1)); }
};

namespace detail {

inline GaussianFit fit_gaussian(const std::vector<double>& p, double mean, double variance) {
    const int m = static_cast<int>(p.size());
    auto model = [](const Eigen::VectorXd& q, double n) {
        const double u = (n - q(1)) / q(2);
        return q(0) * std::exp(-0.5 * u * u);
    };
    auto residual = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r) {
        for (int i = 0; i < m; ++i) r(i) = model(q, i + 1.0) - p[static_cast<std::size_t>(i)];
    };
    auto jacobian = [&](const Eigen::VectorXd& q, Eigen::MatrixXd& j) {
        for (int i = 0; i < m; ++i) {
            const double n = i + 1.0;
            const double u = (n - q(1)) / q(2);
            const double e = std::exp(-0.5 * u * u);
            j(i, 0) = e;
            j(i, 1) = q(0) * e * u / q(2);
            j(i, 2) = q(0) * e * u * u / q(2);
        }
    };
    const double sigma0 = std::sqrt(std::max(variance, 0.05));
    Eigen::VectorXd start(3);
    start << *std::max_element(p.begin(), p.end()), mean, sigma0;
    GaussianFit out;
    const auto r = least_squares(residual, jacobian, start, m);
    out.amplitude = r.params(0);
    out.mean = r.params(1);
    out.sigma = std::abs(r.params(2));
    out.converged = r.converged;
    out.residual = std::sqrt(r.rss / m);
    return out;
}

inline ExponentialFit fit_exponential(const std::vector<double>& p) {
    const int m = static_cast<int>(p.size());
    auto residual = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r) {
        for (int i = 0; i < m; ++i) r(i) = q(0) * std::exp(-q(1) * (i + 1.0)) - p[static_cast<std::size_t>(i)];
    };
    auto jacobian = [&](const Eigen::VectorXd& q, Eigen::MatrixXd& j) {
        for (int i = 0; i < m; ++i) {
            const double n = i + 1.0;
            const double e = std::exp(-q(1) * n);
            j(i, 0) = e;
            j(i, 1) = -q(0) * n * e;
        }
    };
    // Start from the log-linear fit of the positive entries.
    std::vector<double> xs, ls;
    for (int i = 0; i < m; ++i)
        if (p[static_cast<std::size_t>(i)] > 1e-14) {
            xs.push_back(i + 1.0);
            ls.push_back(std::log(p[static_cast<std::size_t>(i)]));
        }
    // A few fixed rates as well; on bell-shaped data the log-linear start can
    // run off to a negative amplitude.
    const double peak = *std::max_element(p.begin(), p.end());
    std::vector<std::pair<double, double>> starts;
    if (xs.size() >= 2) {
        const auto lin = linear_fit(xs, ls);
        starts.emplace_back(std::exp(lin.intercept), -lin.slope);
    }
    for (const double c : {0.1, 0.3, 1.0, 2.0, 4.0}) starts.emplace_back(peak * std::exp(c), c);
    ExponentialFit out;
    for (const auto& [a0, c0] : starts) {
        Eigen::VectorXd start(2);
        start << a0, c0;
        const auto r = least_squares(residual, jacobian, start, m);
        const double res = std::sqrt(r.rss / m);
        if (r.params(0) <= 0.0 || !(res < out.residual)) continue;
        out.amplitude = r.params(0);
        out.rate = r.params(1);
        out.converged = r.converged;
        out.residual = res;
    }
    return out;
}

}  // namespace detail

/// Exact P(n_do) of a state, with Gaussian and exponential-decay fits.
inline DomainDistribution domain_distribution(const StateVector& state, Order order) {
    const int n = state.sites();
    DomainDistribution out;
    out.probabilities.assign(static_cast<std::size_t>(n), 0.0);
    visit_x_distribution(state, [&](Bits label, double p) {
        out.probabilities[static_cast<std::size_t>(domain_count(label, n, order) - 1)] += p;
    });
    for (int k = 1; k <= n; ++k) out.mean += k * out.probabilities[static_cast<std::size_t>(k - 1)];
    for (int k = 1; k <= n; ++k)
        out.variance += (k - out.mean) * (k - out.mean) * out.probabilities[static_cast<std::size_t>(k - 1)];
    if (n >= 3) {
        out.gaussian = detail::fit_gaussian(out.probabilities, out.mean, out.variance);
        out.exponential = detail::fit_exponential(out.probabilities);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Non-equilibrium finite-size collapse at fixed x

/// Values of one intensive quantity at t_c against tau_q for one size.
struct NoneqSeries {
    int sites = 0;
    std::vector<double> taus;
    std::vector<double> values;
};

/// Scaling dimension gamma/nu of an intensive quantity at x = 0:
/// 0 for P_ex, 1 + z for the residual energy density.
inline double noneq_gamma_over_nu(const std::string& quantity, double z) {
    if (quantity == "p_ex_c") return 0.0;
    if (quantity == "e_r_density_c") return 1.0 + z;
    throw InvalidArgument("noneq collapse: '" + quantity + "' is not an intensive quantity");
}

struct NoneqCollapse {
    std::string quantity;
    double nu = 0.0, z = 0.0, gamma_over_nu = 0.0;
    std::vector<CollapseCurve> curves;  ///< x = y = N^(-(z nu + 1)/nu) tau_q, y = S N^(gamma/nu)
    CollapseScore score;
    /// Smallest score over the four 20% perturbations of nu and z.
    CollapseScore perturbed;
    std::optional<PowerLawFit> small_branch;  ///< y below the lower threshold
    std::optional<PowerLawFit> large_branch;  ///< y above the upper threshold

    double ratio() const { return score.chi2 > 0.0 ? perturbed.chi2 / score.chi2 : std::numeric_limits<double>::infinity(); }
};

inline std::vector<CollapseCurve> noneq_curves(const std::vector<NoneqSeries>& series, double nu, double z,
                                               double gamma_over_nu) {
    require(nu > 0.0, "noneq collapse: nu must be positive");
    std::vector<CollapseCurve> curves;
    for (const auto& s : series) {
        require(s.taus.size() == s.values.size(), "noneq collapse: series lengths differ");
        const double n = s.sites;
        CollapseCurve c;
        c.sites = s.sites;
        for (std::size_t i = 0; i < s.taus.size(); ++i) {
            c.x.push_back(std::pow(n, -(z * nu + 1.0) / nu) * s.taus[i]);
            c.y.push_back(s.values[i] * std::pow(n, gamma_over_nu));
        }
        curves.push_back(std::move(c));
    }
    return curves;
}

/// Collapse score, perturbed-exponent comparison and asymptotic branch
/// slopes of the collapsed data (log-log in y).
inline NoneqCollapse noneq_collapse(const std::vector<NoneqSeries>& series, const std::string& quantity, double nu,
                                    double z, double y_small = 0.1, double y_large = 1.0) {
    require(series.size() >= 2, "noneq collapse: need at least two sizes");
    NoneqCollapse out;
    out.quantity = quantity;
    out.nu = nu;
    out.z = z;
    out.gamma_over_nu = noneq_gamma_over_nu(quantity, z);
    out.curves = noneq_curves(series, nu, z, out.gamma_over_nu);
    out.score = collapse_score(out.curves, {}, true);
    out.perturbed.chi2 = std::numeric_limits<double>::infinity();
    for (const auto& [pn, pz] : std::vector<std::pair<double, double>>{{1.2, 1.0}, {0.8, 1.0}, {1.0, 1.2}, {1.0, 0.8}}) {
        const double zz = z * pz;
        const auto s = collapse_score(noneq_curves(series, nu * pn, zz, noneq_gamma_over_nu(quantity, zz)), {}, true);
        if (s.chi2 < out.perturbed.chi2) out.perturbed = s;
    }
    std::vector<double> ys, vs;
    for (const auto& c : out.curves)
        for (std::size_t i = 0; i < c.x.size(); ++i)
            if (c.y[i] > 0.0) {
                ys.push_back(c.x[i]);
                vs.push_back(c.y[i]);
            }
    try {
        out.small_branch = powerlaw_fit(ys, vs, {0.0, y_small});
    } catch (const InvalidArgument&) {
    }
    try {
        out.large_branch = powerlaw_fit(ys, vs, {y_large, std::numeric_limits<double>::infinity()});
    } catch (const InvalidArgument&) {
    }
    return out;
}

// ---------------------------------------------------------------------------
// Final-state checkpoints
//
// Layout (little endian): int32 sites, int32 sector (0 full, 1 even,
// 2 odd), uint64 count, then count complex doubles (re, im) in the z frame.

namespace detail {

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    return v;
}

inline std::int32_t sector_code(Sector s) { return s == Sector::full ? 0 : s == Sector::even ? 1 : 2; }

}  // namespace detail

inline void write_checkpoint(const std::string& path, const StateVector& state) {
    const StateVector z = state.frame() == Frame::z ? state : to_frame(state, Frame::z);
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "checkpoint: cannot open '" + path + "' for writing");
    auto put = [&out](auto v) {
        v = detail::to_little(v);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    put(static_cast<std::int32_t>(z.sites()));
    put(detail::sector_code(z.sector()));
    put(static_cast<std::uint64_t>(z.dimension()));
    for (Eigen::Index i = 0; i < z.dimension(); ++i) {
        put(z.amplitudes()(i).real());
        put(z.amplitudes()(i).imag());
    }
    require(static_cast<bool>(out), "checkpoint: write to '" + path + "' failed");
}

inline StateVector read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "checkpoint: cannot open '" + path + "'");
    auto get = [&in, &path](auto v) {
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        require(static_cast<bool>(in), "checkpoint: '" + path + "' is truncated");
        return detail::to_little(v);
    };
    const int sites = get(std::int32_t{});
    const std::int32_t code = get(std::int32_t{});
    const std::uint64_t count = get(std::uint64_t{});
    require(sites >= 1 && sites <= 30 && code >= 0 && code <= 2, "checkpoint: corrupt header in '" + path + "'");
    const Sector sector = code == 0 ? Sector::full : code == 1 ? Sector::even : Sector::odd;
    require(count == static_cast<std::uint64_t>(sector_dimension(sites, sector)),
            "checkpoint: amplitude count does not match the header");
    Eigen::VectorXcd a(static_cast<Eigen::Index>(count));
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double re = get(double{});
        const double im = get(double{});
        a(i) = complex(re, im);
    }
    return StateVector(sites, sector, Frame::z, std::move(a));
}

}  // namespace lrtim
