#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "lrtim/quench.hpp"
#include "oracles/dense.hpp"

using namespace lrtim;

namespace {

Eigen::VectorXcd full_z(const StateVector& s) { return to_frame(embed(s), Frame::z).amplitudes(); }

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("lrtim_" + name)).string();
}

}  // namespace

TEST(Evolve, MatchesFineStepRungeKutta) {
    const int n = 6;
    const auto j = build_couplings({n, 1.0, 2.0, CouplingMode::algebraic});
    Hamiltonian h(j, Sector::even, Frame::x);
    for (Scheme scheme : {Scheme::magnus4, Scheme::midpoint}) {
        GroundStateCache cache(h);
        QuenchProtocol p;
        p.g0 = 5.0;
        p.tau_q = 1.0;
        p.sample_times = {0.3, 0.7, 1.0};
        p.integrator.scheme = scheme;
        p.integrator.tolerance = 1e-10;
        EvolveOptions o;
        o.keep_final_state = true;
        const StateVector psi0 = initial_state(p, cache);
        const auto traj = evolve(cache, p, o);
        const Eigen::VectorXcd ref = oracle::runge_kutta(
            [&](double g) { return oracle::hamiltonian(j.matrix(), g); }, p.g0, p.tau_q, p.tau_q, 1e-4, full_z(psi0));
        const Eigen::VectorXcd psi = full_z(*traj.final_state);
        // The tolerance bounds the deficit; amplitudes are held to its square root.
        EXPECT_LT(1.0 - std::norm(ref.dot(psi)), 1e-10) << to_string(scheme);
        EXPECT_LT((psi - ref).norm(), 1e-5) << to_string(scheme);
    }
}

TEST(Evolve, SuddenLimitMatchesStaticOverlap) {
    const int n = 8;
    const auto j = build_couplings({n, -1.0, 3.0, CouplingMode::algebraic});
    QuenchProtocol p;
    p.g0 = 5.0;
    p.tau_q = 1e-5;
    const auto traj = evolve(j, p);
    // Nothing happens during the ramp: P_ex = 1 - |<phi0(0)|phi0(g0)>|^2.
    const Eigen::VectorXd a = oracle::sector_ground_state(j.matrix(), p.g0, true);
    const Eigen::VectorXd b = oracle::sector_ground_state(j.matrix(), 0.0, true);
    const double overlap = a.dot(b);
    EXPECT_NEAR(traj.record.final_sample().p_ex, 1.0 - overlap * overlap, 1e-6);
}

TEST(Evolve, AdiabaticLimitStaysInGroundState) {
    const auto j = build_couplings({6, -1.0, 3.0, CouplingMode::algebraic});
    QuenchProtocol p;
    p.tau_q = 300.0;
    const auto traj = evolve(j, p);
    EXPECT_LT(traj.record.final_sample().p_ex, 1e-3);
    EXPECT_LT(traj.record.final_sample().domains, 1.01);
}

TEST(Evolve, InvariantsAndCriticalSample) {
    const int n = 8;
    const auto j = build_couplings({n, 1.0, 2.0, CouplingMode::algebraic});
    QuenchProtocol p;
    p.tau_q = 3.0;
    for (int k = 1; k <= 10; ++k) p.sample_times.push_back(0.3 * k);
    EvolveOptions o;
    o.critical_field = 0.8419;
    int seen = 0;
    o.on_sample = [&](const TrajectorySample&, const StateVector&) { return ++seen % 2 == 0; };
    const auto traj = evolve(j, p, o);
    ASSERT_EQ(traj.record.samples.size(), 11U);
    EXPECT_EQ(seen, 11);
    for (const auto& s : traj.record.samples) {
        EXPECT_NEAR(s.norm, 1.0, 1e-9);
        EXPECT_GE(s.p_ex, -1e-12);
        EXPECT_LE(s.p_ex, 1.0 + 1e-12);
        EXPECT_GE(s.e_r, -1e-9);
        EXPECT_GE(s.domains, 1.0 - 1e-12);
        EXPECT_LE(s.domains, n + 1e-12);
    }
    const auto& c = traj.record.critical_sample();
    EXPECT_NEAR(c.t, p.critical_time(0.8419), 1e-12);
    EXPECT_DOUBLE_EQ(c.g, 0.8419);
    EXPECT_FALSE(traj.final_state.has_value());
}

TEST(Evolve, PolarizedStartAndValidation) {
    const auto j = build_couplings({6, -1.0, 1.0, CouplingMode::algebraic});
    QuenchProtocol p;
    p.initial = InitialState::polarized;
    p.sample_times = {0.0};
    const auto traj = evolve(j, p);
    const double f = traj.record.samples.front().fidelity;
    EXPECT_GT(f, 0.9);
    EXPECT_LT(f, 1.0 - 1e-6);
    p.tau_q = -1.0;
    EXPECT_THROW(evolve(j, p), InvalidArgument);
    EXPECT_THROW(initial_state_from_string("warm"), InvalidArgument);
}

TEST(ResidualObservables, VanishOnTheGroundState) {
    const auto j = build_couplings({8, -1.0, 2.0, CouplingMode::algebraic});
    const auto gs = ground_state(j, 1.2);
    EXPECT_NEAR(excitation_probability(gs.state, j, 1.2), 0.0, 1e-10);
    EXPECT_NEAR(residual_energy(gs.state, j, 1.2), 0.0, 1e-9);
    EXPECT_NEAR(residual_observable(gs.state, j, 1.2, ResidualObservable::m2_ferro), 0.0, 1e-8);
    EXPECT_THROW(residual_observable_from_string("entropy"), InvalidArgument);
}

TEST(AdiabaticImpulse, InterpolatesFirstCrossing) {
    const std::vector<double> t{0.0, 1.0, 2.0, 3.0}, f{1.0, 0.999, 0.99, 0.5}, g{3.0, 2.0, 1.0, 0.0};
    const auto tr = ai_transition(t, f, g, 0.995);
    EXPECT_NEAR(tr.t_theta, 1.0 + 4.0 / 9.0, 1e-12);
    EXPECT_NEAR(tr.g_tilde, 2.0 - 4.0 / 9.0, 1e-12);
    EXPECT_THROW(ai_transition(t, {1.0, 1.0, 1.0, 1.0}, g, 0.995), AdiabaticRun);
    EXPECT_THROW(ai_transition(t, f, g, 0.995, 0.5), InvalidArgument);
}

TEST(AdiabaticImpulse, LockstepMatchesIndependentTrajectories) {
    const auto j = build_couplings({8, -1.0, 3.0, CouplingMode::algebraic});
    Hamiltonian h(j, Sector::even, Frame::x);
    AiScalingConfig c;
    c.g_c = 1.43;
    c.taus = {0.5, 2.0};
    c.grid_points = 200;
    const auto r = ai_scaling(h, c);
    ASSERT_EQ(r.points.size(), 2U);
    for (const auto& pt : r.points) {
        QuenchProtocol p;
        p.tau_q = pt.tau_q;
        for (int k = 0; k <= c.grid_points; ++k) p.sample_times.push_back(pt.tau_q * k / c.grid_points);
        const auto traj = evolve(j, p);
        const auto ref = ai_transition(traj.record, c.theta, 1.0 / c.grid_points);
        ASSERT_FALSE(pt.adiabatic);
        EXPECT_NEAR(pt.g_tilde, ref.g_tilde, 1e-6);
        EXPECT_NEAR(pt.distance, std::abs(ref.g_tilde - c.g_c), 1e-6);
    }
    // Slower ramps leave the ground state later (closer to g_c).
    EXPECT_LT(r.points[1].distance, r.points[0].distance);
}

TEST(KibbleZurek, SweepQuantitiesAndOrdering) {
    const auto j = build_couplings({8, -1.0, 3.0, CouplingMode::algebraic});
    Hamiltonian h(j, Sector::even, Frame::x);
    KzConfig c;
    c.g_c = 1.43;
    c.taus = {4.0, 1.0, 2.0};
    const auto sweep = kz_sweep(h, c);
    ASSERT_EQ(sweep.points.size(), 3U);
    EXPECT_EQ(sweep.taus(), (std::vector<double>{1.0, 2.0, 4.0}));
    for (std::size_t i = 1; i < 3; ++i) {
        EXPECT_LT(sweep.points[i].p_ex_final, sweep.points[i - 1].p_ex_final);
        EXPECT_LT(sweep.points[i].domains_final, sweep.points[i - 1].domains_final);
    }
    for (const auto& q : KzPoint::quantities()) EXPECT_NO_THROW(sweep.points[0].value(q));
    EXPECT_DOUBLE_EQ(sweep.points[0].value("e_r_density_c"), sweep.points[0].e_r_c / 8.0);
    EXPECT_THROW(sweep.points[0].value("xi"), InvalidArgument);
    EXPECT_THROW(kz_fit(sweep, "n_do"), InvalidArgument);  // fewer than three points in [5, 50]
    const auto fit = kz_fit(sweep, "p_ex_final", {0.5, 5.0});
    EXPECT_LT(fit.mu(), 0.0);
}

TEST(KibbleZurek, TheoreticalExponents) {
    ExponentSet e;
    e.nu = 1.0;
    e.z = 1.0;
    EXPECT_DOUBLE_EQ(theoretical_mu(e, "n_do").value, -0.5);
    EXPECT_DOUBLE_EQ(theoretical_mu(e, "p_ex_c").value, -0.5);
    EXPECT_DOUBLE_EQ(theoretical_mu(e, "e_r_c").value, -1.0);
    // Error propagation against a finite difference in z.
    e.z_err = 0.01;
    auto mu_at = [&](double z) {
        ExponentSet x = e;
        x.z = z;
        return theoretical_mu(x, "e_r_c").value;
    };
    const double dz = (mu_at(1.0 + 1e-6) - mu_at(1.0 - 1e-6)) / 2e-6;
    EXPECT_NEAR(theoretical_mu(e, "e_r_c").err, std::abs(dz) * 0.01, 1e-9);
}

TEST(Domains, DistributionOfProductAndGhzStates) {
    const int n = 8;
    Bits alternating = 0;
    for (int i = 1; i < n; i += 2) alternating |= Bits{1} << i;
    const auto neel = StateVector::product(n, alternating, Frame::x);
    auto d = domain_distribution(neel, Order::ferro);
    EXPECT_DOUBLE_EQ(d.probability(n), 1.0);
    d = domain_distribution(neel, Order::antiferro);
    EXPECT_DOUBLE_EQ(d.probability(1), 1.0);
    EXPECT_DOUBLE_EQ(d.mean, 1.0);
    EXPECT_DOUBLE_EQ(d.variance, 0.0);
}

TEST(Domains, FitsRecoverSyntheticShapes) {
    std::vector<double> gauss, expo;
    for (int k = 1; k <= 16; ++k) {
        gauss.push_back(0.3 * std::exp(-0.5 * std::pow((k - 6.0) / 1.5, 2)));
        expo.push_back(0.6 * std::exp(-0.7 * k));
    }
    const auto g = detail::fit_gaussian(gauss, 6.2, 2.0);
    EXPECT_NEAR(g.mean, 6.0, 1e-8);
    EXPECT_NEAR(g.sigma, 1.5, 1e-8);
    EXPECT_LT(g.residual, 1e-10);
    const auto e = detail::fit_exponential(expo);
    EXPECT_NEAR(e.rate, 0.7, 1e-8);
    EXPECT_NEAR(e.amplitude, 0.6, 1e-8);
    EXPECT_GT(detail::fit_exponential(gauss).residual, 10.0 * g.residual);
}

TEST(Domains, ExponentialFitOfBellShapeStaysADecay) {
    std::vector<double> bell;
    for (int k = 1; k <= 16; ++k) bell.push_back(0.23 * std::exp(-0.5 * std::pow((k - 6.0) / 1.75, 2)) + 1e-13);
    const auto e = detail::fit_exponential(bell);
    EXPECT_GT(e.amplitude, 0.0);
    EXPECT_GT(e.rate, 0.0);
    // A slow decay can always match the constant fit at the mean.
    double mean = 0.0, rms = 0.0;
    for (double v : bell) mean += v / 16.0;
    for (double v : bell) rms += (v - mean) * (v - mean) / 16.0;
    EXPECT_LE(e.residual, std::sqrt(rms) + 1e-12);
}

TEST(NoneqCollapse, SyntheticScalingCollapsesAndPerturbationsDoNot) {
    const double nu = 1.0, z = 0.8;
    std::vector<NoneqSeries> series;
    for (int n : {10, 14, 18}) {
        NoneqSeries s;
        s.sites = n;
        for (int k = 0; k < 25; ++k) {
            const double tau = 0.01 * std::pow(10.0, 0.25 * k);
            const double y = std::pow(n, -(z * nu + 1.0) / nu) * tau;
            s.taus.push_back(tau);
            s.values.push_back(1.0 / (1.0 + std::pow(y, 0.9)));
        }
        series.push_back(s);
    }
    const auto c = noneq_collapse(series, "p_ex_c", nu, z, 0.01, 20.0);
    // Residual is the linear interpolation error on a quarter-decade grid.
    EXPECT_LT(c.score.chi2, 1e-3);
    EXPECT_GT(c.ratio(), 10.0);
    ASSERT_TRUE(c.large_branch.has_value());
    EXPECT_NEAR(c.large_branch->exponent, -0.9, 0.1);
    ASSERT_TRUE(c.small_branch.has_value());
    EXPECT_NEAR(c.small_branch->exponent, 0.0, 0.05);
    EXPECT_THROW(noneq_gamma_over_nu("n_do", z), InvalidArgument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    std::mt19937_64 rng(3);
    const auto psi = StateVector::random(10, Sector::even, Frame::x, rng);
    const auto path = temp_path("ckpt.bin");
    write_checkpoint(path, psi);
    const auto back = read_checkpoint(path);
    EXPECT_EQ(back.sector(), Sector::even);
    EXPECT_EQ(back.frame(), Frame::z);
    const auto expected = to_frame(psi, Frame::z);
    for (Eigen::Index i = 0; i < back.dimension(); ++i) EXPECT_EQ(back.amplitudes()(i), expected.amplitudes()(i));
    EXPECT_EQ(std::filesystem::file_size(path), 16U + 16U * static_cast<std::uintmax_t>(back.dimension()));
    std::filesystem::resize_file(path, 40);
    EXPECT_THROW(read_checkpoint(path), InvalidArgument);
    std::filesystem::remove(path);
}
