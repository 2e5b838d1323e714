#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "lrtim/errors.hpp"

namespace lrtim {

enum class CouplingMode { algebraic, nearest_neighbor };

/// Parameters of the pair couplings J_ij = J0 / |i - j|^alpha on an open chain.
///
/// J0 < 0 is ferromagnetic, J0 > 0 antiferromagnetic. `nearest_neighbor`
/// stands for the alpha -> infinity limit and ignores `alpha`.
struct CouplingSpec {
    int sites = 2;
    double j0 = -1.0;
    double alpha = 0.0;
    CouplingMode mode = CouplingMode::algebraic;

    bool ferromagnetic() const { return j0 < 0.0; }

    void validate() const {
        require(sites >= 2, "coupling spec: need at least two sites");
        require(sites % 2 == 0, "coupling spec: the number of sites must be even");
        require(sites <= 30, "coupling spec: more than 30 sites is not supported");
        require(std::isfinite(j0) && j0 != 0.0, "coupling spec: J0 must be finite and nonzero");
        require(mode == CouplingMode::nearest_neighbor || (std::isfinite(alpha) && alpha >= 0.0),
                "coupling spec: alpha must be >= 0");
    }
};

/// Symmetric pair-coupling matrix with zero diagonal.
class CouplingMatrix {
  public:
    CouplingMatrix() = default;

    explicit CouplingMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
        require(entries_.rows() == entries_.cols(), "coupling matrix must be square");
        require(entries_.rows() >= 1, "coupling matrix must not be empty");
        for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
            require(entries_(i, i) == 0.0, "coupling matrix must have zero diagonal");
            for (Eigen::Index j = i + 1; j < entries_.cols(); ++j) {
                require(entries_(i, j) == entries_(j, i), "coupling matrix must be symmetric");
            }
        }
    }

    int sites() const { return static_cast<int>(entries_.rows()); }
    double operator()(int i, int j) const { return entries_(i, j); }
    const Eigen::MatrixXd& matrix() const { return entries_; }

    /// Sum of |J_ij| over i < j; bounds the interaction energy.
    double absolute_sum() const { return 0.5 * entries_.cwiseAbs().sum(); }

    bool nearest_neighbor_only() const {
        for (int i = 0; i < sites(); ++i)
            for (int j = i + 2; j < sites(); ++j)
                if (entries_(i, j) != 0.0) return false;
        return true;
    }

  private:
    Eigen::MatrixXd entries_;
};

/// Evaluates the coupling law for any chain length. `build_couplings` adds
/// the model's validation (even N, alpha >= 0) on top of this.
inline CouplingMatrix coupling_law(int sites, double j0, double alpha, CouplingMode mode) {
    require(sites >= 1, "coupling law: need at least one site");
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(sites, sites);
    for (int a = 0; a < sites; ++a) {
        for (int b = a + 1; b < sites; ++b) {
            double value = 0.0;
            if (mode == CouplingMode::nearest_neighbor) {
                value = (b == a + 1) ? j0 : 0.0;
            } else {
                value = j0 / std::pow(static_cast<double>(b - a), alpha);
            }
            j(a, b) = value;
            j(b, a) = value;
        }
    }
    return CouplingMatrix(std::move(j));
}

inline CouplingMatrix build_couplings(const CouplingSpec& spec) {
    spec.validate();
    return coupling_law(spec.sites, spec.j0, spec.alpha, spec.mode);
}

inline std::string to_string(CouplingMode mode) {
    return mode == CouplingMode::nearest_neighbor ? "nearest-neighbor" : "algebraic";
}

}  // namespace lrtim
