#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "lrtim/couplings.hpp"
#include "lrtim/spectra.hpp"
#include "oracles/dense.hpp"
#include "oracles/free_fermion.hpp"

using namespace lrtim;

namespace {

Eigen::VectorXcd full_z(const StateVector& s) { return to_frame(embed(s), Frame::z).amplitudes(); }

Eigen::MatrixXd dense_order_parameter(int n, Order order) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(Eigen::Index{1} << n, Eigen::Index{1} << n);
    for (int i = 0; i < n; ++i) {
        const double s = order == Order::antiferro && i % 2 == 1 ? -1.0 : 1.0;
        m += s * oracle::site_operator(oracle::pauli_x(), i, n);
    }
    return m / n;
}

double dense_m2(const Eigen::MatrixXd& j, double g, Order order) {
    const int n = static_cast<int>(j.rows());
    const Eigen::VectorXcd phi = oracle::sector_ground_state(j, g, true).cast<complex>();
    const Eigen::MatrixXd m = dense_order_parameter(n, order);
    return oracle::expectation(phi, m * m);
}

}  // namespace

TEST(GroundState, MatchesDenseDiagonalizationOnRandomModels) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> alpha(0.0, 4.0), field(0.1, 3.0);
    const int sizes[] = {4, 6, 8, 10};
    for (int trial = 0; trial < 20; ++trial) {
        const int n = sizes[trial % 4];
        const double j0 = trial % 2 == 0 ? -1.0 : 1.0;
        const double a = alpha(rng), g = field(rng);
        const auto j = build_couplings({n, j0, a, CouplingMode::algebraic});
        for (bool even : {true, false}) {
            double e_ref = 0.0;
            oracle::sector_ground_state(j.matrix(), g, even, &e_ref);
            const auto gs = ground_state(j, g, even ? Sector::even : Sector::odd);
            EXPECT_NEAR(gs.energy, e_ref, 1e-9 * std::max(1.0, std::abs(e_ref)))
                << "N=" << n << " alpha=" << a << " g=" << g << " even=" << even;
            EXPECT_LT(gs.residual, 1e-8);
        }
    }
}

TEST(GroundState, ExcitedLevelMatchesDenseSpectrum) {
    const int n = 8;
    const auto j = build_couplings({n, 1.0, 2.0, CouplingMode::algebraic});
    const double g = 0.9;
    const auto idx = oracle::sector_indices(n, true);
    const auto spec = oracle::diagonalize(oracle::restrict(oracle::hamiltonian(j.matrix(), g), idx));
    const auto gap = energy_gap(j, g);
    EXPECT_NEAR(gap.even_ground, spec.values(0), 1e-9);
    EXPECT_NEAR(gap.even_excited, spec.values(1), 1e-8);
    EXPECT_NEAR(gap.within_sector, spec.values(1) - spec.values(0), 1e-8);
}

TEST(GroundState, NearestNeighborChainMatchesFreeFermions) {
    for (int n : {12, 14}) {
        for (double g : {0.6, 1.0, 1.4}) {
            const auto j = build_couplings({n, -1.0, 0.0, CouplingMode::nearest_neighbor});
            const auto ff = oracle::solve_free_fermion(n, -1.0, g);
            const auto gap = energy_gap(j, g);
            const double e0 = std::min(gap.even_ground, gap.odd_ground);
            EXPECT_NEAR(e0, ff.ground_energy(), 1e-9) << "N=" << n << " g=" << g;
            EXPECT_NEAR(gap.global, ff.global_gap(), 1e-8) << "N=" << n << " g=" << g;
        }
    }
}

TEST(GroundState, SizeGuardAndFieldDomain) {
    const auto j = build_couplings({8, -1.0, 1.0, CouplingMode::algebraic});
    Hamiltonian h(j, Sector::even, Frame::x);
    EXPECT_THROW(ground_state(h, 1.0, {}, nullptr, 6), InvalidArgument);
}

TEST(Schmidt, SpectrumMatchesExplicitPartialTrace) {
    const int n = 8;
    const auto j = build_couplings({n, -1.0, 1.5, CouplingMode::algebraic});
    const auto gs = ground_state(j, 1.1);
    const auto rho = oracle::left_reduced_density(full_z(gs.state), n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho);
    const auto schmidt = schmidt_gap(gs.state);
    const auto ev = es.eigenvalues();
    const Eigen::Index d = ev.size();
    EXPECT_NEAR(schmidt.lambdas[0], ev(d - 1), 1e-10);
    EXPECT_NEAR(schmidt.lambdas[1], ev(d - 2), 1e-10);
    EXPECT_NEAR(schmidt.gap, ev(d - 1) - ev(d - 2), 1e-10);
    double total = 0.0;
    for (double l : schmidt.lambdas) total += l;
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Schmidt, ProductStateHasUnitGap) {
    const auto s = schmidt_gap(StateVector::all_down(6));
    EXPECT_NEAR(s.gap, 1.0, 1e-14);
}

TEST(Binder, MatchesDenseMomentsForBothOrders) {
    const int n = 8;
    for (double j0 : {-1.0, 1.0}) {
        const Order order = natural_order(j0);
        const auto j = build_couplings({n, j0, 2.5, CouplingMode::algebraic});
        const double g = 0.8;
        const Eigen::VectorXcd phi = oracle::sector_ground_state(j.matrix(), g, true).cast<complex>();
        const Eigen::MatrixXd m = dense_order_parameter(n, order);
        const Eigen::MatrixXd m2 = m * m;
        const double b_ref = 0.5 * (3.0 - oracle::expectation(phi, m2 * m2) / std::pow(oracle::expectation(phi, m2), 2));
        EXPECT_NEAR(binder_cumulant(j, g, order), b_ref, 1e-9);
    }
}

TEST(Binder, LimitsOfOrderedAndParamagneticStates) {
    const auto j = build_couplings({8, -1.0, 1.0, CouplingMode::algebraic});
    // Deep in the ordered phase the ground state is GHZ-like: B -> 1.
    EXPECT_NEAR(binder_cumulant(j, 0.01, Order::ferro), 1.0, 1e-3);
    // Deep paramagnet: Gaussian-like fluctuations push B well below 1.
    EXPECT_LT(binder_cumulant(j, 20.0, Order::ferro), 0.5);
}

TEST(Derivatives, CenteredDifferenceMatchesFivePointDenseStencil) {
    const int n = 8;
    const auto j = build_couplings({n, -1.0, 3.0, CouplingMode::algebraic});
    const double g = 1.3, h = 2e-3;
    const double ref = (-dense_m2(j.matrix(), g + 2 * h, Order::ferro) + 8 * dense_m2(j.matrix(), g + h, Order::ferro) -
                        8 * dense_m2(j.matrix(), g - h, Order::ferro) + dense_m2(j.matrix(), g - 2 * h, Order::ferro)) /
                       (12 * h);
    const auto d = moment_derivative(j, g, Order::ferro, 2, 1e-3);
    EXPECT_TRUE(d.converged);
    EXPECT_NEAR(d.refined, ref, 1e-6 * std::abs(ref) + 1e-9);
    EXPECT_LT(d.refined, 0.0);
}

TEST(Derivatives, HellmannFeynman) {
    const int n = 10;
    const auto j = build_couplings({n, 1.0, 2.0, CouplingMode::algebraic});
    const double g = 0.7, h = 1e-4;
    LanczosOptions tight;
    tight.tolerance = 1e-12;
    const auto gs = ground_state(j, g, Sector::even, tight);
    Eigen::MatrixXd sz = Eigen::MatrixXd::Zero(Eigen::Index{1} << n, Eigen::Index{1} << n);
    for (int i = 0; i < n; ++i) sz += oracle::site_operator(oracle::pauli_z(), i, n);
    const double hf = oracle::expectation(full_z(gs.state), sz);
    const double de = (ground_state(j, g + h, Sector::even, tight).energy - ground_state(j, g - h, Sector::even, tight).energy) / (2 * h);
    EXPECT_NEAR(de, hf, 1e-6);
}
