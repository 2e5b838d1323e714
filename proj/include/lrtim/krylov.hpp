#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "lrtim/errors.hpp"

namespace lrtim {

struct LanczosOptions {
    /// Target for the true residual norm ||H x - theta x|| of the returned pair.
    double tolerance = 1e-10;
    /// Krylov basis size before an explicit restart.
    int max_basis = 60;
    int max_restarts = 200;
    std::uint64_t seed = 20190213;
};

struct EigenPair {
    double value = 0.0;
    Eigen::VectorXd vector;
    double residual = 0.0;
    int matvecs = 0;
};

namespace detail {

inline void deflate(Eigen::VectorXd& w, const std::vector<Eigen::VectorXd>& against) {
    for (const auto& d : against) w -= d.dot(w) * d;
}

}  // namespace detail

/// Lowest eigenpair of a real symmetric operator given only its action
/// `op(in, out)`, by explicitly restarted Lanczos with full
/// reorthogonalization. Vectors in `deflate` (orthonormal, approximately
/// invariant) are projected out, which yields the lowest eigenpair of the
/// complement.
template <class Op>
EigenPair lowest_eigenpair(Op&& op, Eigen::Index dim, const LanczosOptions& options = {},
                           const Eigen::VectorXd* guess = nullptr,
                           const std::vector<Eigen::VectorXd>& deflate = {}) {
    require(dim >= 1, "lanczos: empty operator");
    require(static_cast<Eigen::Index>(deflate.size()) < dim, "lanczos: deflation exhausts the space");
    const int m = static_cast<int>(std::min<Eigen::Index>(options.max_basis, dim - deflate.size()));

    Eigen::VectorXd start;
    if (guess != nullptr) {
        require(guess->size() == dim, "lanczos: guess has the wrong dimension");
        start = *guess;
    }
    std::mt19937_64 engine(options.seed);
    std::normal_distribution<double> normal;
    auto randomize = [&] {
        start.resize(dim);
        for (Eigen::Index i = 0; i < dim; ++i) start(i) = normal(engine);
    };
    if (start.size() != dim) randomize();
    detail::deflate(start, deflate);
    if (start.norm() < 1e-8) {
        randomize();
        detail::deflate(start, deflate);
    }
    start.normalize();

    EigenPair best;
    best.residual = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd basis(dim, m + 1);
    Eigen::VectorXd w(dim), hx(dim);
    std::vector<double> alpha, beta;
    int matvecs = 0;

    for (int restart = 0; restart <= options.max_restarts; ++restart) {
        alpha.clear();
        beta.clear();
        basis.col(0) = start;
        Eigen::VectorXd ritz_coeffs;
        double theta = 0.0;
        int size = 0;
        for (int j = 0; j < m; ++j) {
            op(static_cast<const Eigen::VectorXd&>(basis.col(j)), w);
            ++matvecs;
            detail::deflate(w, deflate);
            const double a = basis.col(j).dot(w);
            alpha.push_back(a);
            // Two passes of classical Gram-Schmidt against the whole basis.
            for (int pass = 0; pass < 2; ++pass) {
                Eigen::VectorXd overlaps = basis.leftCols(j + 1).transpose() * w;
                w.noalias() -= basis.leftCols(j + 1) * overlaps;
            }
            const double b = w.norm();
            size = j + 1;

            Eigen::VectorXd diag = Eigen::Map<Eigen::VectorXd>(alpha.data(), size);
            Eigen::VectorXd sub = Eigen::VectorXd::Zero(std::max(size - 1, 0));
            for (int k = 0; k + 1 < size; ++k) sub(k) = beta[k];
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
            tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
            theta = tri.eigenvalues()(0);
            ritz_coeffs = tri.eigenvectors().col(0);
            const double estimate = b * std::abs(ritz_coeffs(size - 1));

            const double scale = std::max(1.0, std::abs(theta));
            if (b <= 1e-14 * scale || estimate <= 0.1 * options.tolerance) break;
            beta.push_back(b);
            basis.col(j + 1) = w / b;
        }

        Eigen::VectorXd x = basis.leftCols(size) * ritz_coeffs;
        detail::deflate(x, deflate);
        x.normalize();
        op(static_cast<const Eigen::VectorXd&>(x), hx);
        ++matvecs;
        detail::deflate(hx, deflate);
        const double value = x.dot(hx);
        const double residual = (hx - value * x).norm();
        if (residual < best.residual) {
            best.value = value;
            best.vector = x;
            best.residual = residual;
        }
        if (residual <= options.tolerance) {
            best.matvecs = matvecs;
            return best;
        }
        start = x;
    }
    throw ConvergenceError("lanczos: lowest eigenpair did not converge", best.residual, matvecs);
}

struct ExpmOptions {
    /// Bound on the error norm of exp(-i t H) v, per unit norm of v.
    double tolerance = 1e-12;
    int max_basis = 40;
    /// Orthogonalize against the whole basis instead of the last two vectors.
    bool full_reorthogonalization = false;
};

/// Reusable Krylov vectors, so repeated exponentials of the same dimension
/// do not reallocate.
struct KrylovWorkspace {
    std::vector<Eigen::VectorXcd> basis;
    Eigen::VectorXcd w;

    /// Makes basis[0 .. count) usable for vectors of length dim; storage is
    /// only touched for the vectors actually requested.
    void ensure(int count, Eigen::Index dim) {
        if (static_cast<int>(basis.size()) < count) basis.resize(static_cast<std::size_t>(count));
        for (int k = 0; k < count; ++k)
            if (basis[static_cast<std::size_t>(k)].size() != dim) basis[static_cast<std::size_t>(k)].resize(dim);
        if (w.size() != dim) w.resize(dim);
    }
};

namespace detail {

// Classical Gram-Schmidt against basis[first..count); a second pass only when
// the first removed most of the vector.
inline void orthogonalize(std::vector<Eigen::VectorXcd>& basis, int first, int count, Eigen::VectorXcd& w) {
    for (int pass = 0; pass < 2; ++pass) {
        const double before = w.norm();
        std::vector<std::complex<double>> overlaps(static_cast<std::size_t>(count));
        for (int k = first; k < count; ++k) overlaps[static_cast<std::size_t>(k)] = basis[static_cast<std::size_t>(k)].dot(w);
        for (int k = first; k < count; ++k) w.noalias() -= overlaps[static_cast<std::size_t>(k)] * basis[static_cast<std::size_t>(k)];
        if (w.norm() > 0.7 * before) break;
    }
}

}  // namespace detail

/// v <- exp(-i t H) v by Lanczos projection onto a Krylov subspace, with
/// automatic sub-stepping when the basis limit is too small for |t|.
/// Returns the number of operator applications.
template <class Op>
int expm_krylov(Op&& op, double t, Eigen::VectorXcd& v, const ExpmOptions& options = {},
                KrylovWorkspace* workspace = nullptr) {
    using complex = std::complex<double>;
    const Eigen::Index dim = v.size();
    if (dim == 0 || v.norm() == 0.0 || t == 0.0) return 0;
    const int m = static_cast<int>(std::min<Eigen::Index>(options.max_basis, dim));
    const double total = std::abs(t);
    const double direction = t > 0 ? 1.0 : -1.0;

    KrylovWorkspace local;
    KrylovWorkspace& ws = workspace != nullptr ? *workspace : local;
    ws.ensure(1, dim);
    auto& basis = ws.basis;
    auto& w = ws.w;
    int matvecs = 0;
    double done = 0.0;
    double step = total;
    int guard = 0;

    while (done < total) {
        step = std::min(step, total - done);
        const double norm_now = v.norm();
        basis[0] = v / norm_now;
        std::vector<double> alpha, beta;
        int size = 0;
        bool exact = false;
        double last_beta = 0.0;
        Eigen::VectorXd eval;
        Eigen::MatrixXd evec;

        auto small_error = [&](double tau) {
            // |beta_m * e_m^T exp(-i tau T) e_1| estimates the truncation error.
            Eigen::VectorXcd phases = (eval.array() * complex(0.0, -direction * tau)).exp();
            const complex last = (evec.row(size - 1).transpose().cast<complex>().array() * phases.array() *
                                  evec.row(0).transpose().cast<complex>().array())
                                     .sum();
            return last_beta * std::abs(last);
        };

        for (int j = 0; j < m; ++j) {
            op(static_cast<const Eigen::VectorXcd&>(basis[static_cast<std::size_t>(j)]), w);
            ++matvecs;
            const double a = basis[static_cast<std::size_t>(j)].dot(w).real();
            alpha.push_back(a);
            detail::orthogonalize(basis, options.full_reorthogonalization ? 0 : std::max(0, j - 1), j + 1, w);
            const double b = w.norm();
            size = j + 1;
            Eigen::VectorXd diag = Eigen::Map<Eigen::VectorXd>(alpha.data(), size);
            Eigen::VectorXd sub = Eigen::VectorXd::Zero(std::max(size - 1, 0));
            for (int k = 0; k + 1 < size; ++k) sub(k) = beta[static_cast<std::size_t>(k)];
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
            tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
            eval = tri.eigenvalues();
            evec = tri.eigenvectors();
            last_beta = b;
            const double scale = std::max(1.0, eval.cwiseAbs().maxCoeff());
            if (b <= 1e-14 * scale) {
                exact = true;
                break;
            }
            if (small_error(step) <= options.tolerance * step / total) break;
            if (j + 1 < m) {
                beta.push_back(b);
                ws.ensure(j + 2, dim);
                basis[static_cast<std::size_t>(j + 1)] = w / b;
            }
        }
        if (!exact) {
            while (small_error(step) > options.tolerance * step / total) {
                step *= 0.5;
                if (++guard > 200) throw ConvergenceError("expm_krylov: step size underflow", step, matvecs);
            }
        }
        Eigen::VectorXcd phases = (eval.array() * complex(0.0, -direction * step)).exp();
        Eigen::VectorXcd coeffs =
            evec.cast<complex>() * (phases.array() * evec.row(0).transpose().cast<complex>().array()).matrix();
        v.setZero();
        for (int k = 0; k < size; ++k) v.noalias() += (norm_now * coeffs(k)) * basis[static_cast<std::size_t>(k)];
        done += step;
        // Grow the trial step again after a forced reduction.
        step *= 2.0;
    }
    return matvecs;
}

}  // namespace lrtim
