#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lrtim/errors.hpp"
#include "lrtim/fitting.hpp"

namespace lrtim {

/// f(k) ~ sum_i c_i lambda_i^k for k = 1..N. Complex rates come in
/// conjugate pairs with conjugate coefficients, so the sum is real.
struct ExponentialSumFit {
    double alpha = std::numeric_limits<double>::quiet_NaN();  ///< NaN for direct sequences
    int length = 0;                                           ///< N
    std::vector<std::complex<double>> coefficients;
    std::vector<std::complex<double>> rates;
    double max_error = 0.0;
    double pencil_error = 0.0;  ///< before nonlinear refinement
    int pencil_rank = 0;
    bool rank_deficient = false;
    bool refined = false;

    int terms() const { return static_cast<int>(rates.size()); }

    std::complex<double> evaluate_complex(int k) const {
        std::complex<double> s = 0.0;
        for (std::size_t i = 0; i < rates.size(); ++i) s += coefficients[i] * std::pow(rates[i], k);
        return s;
    }
    double evaluate(int k) const { return evaluate_complex(k).real(); }
};

struct CompressionOptions {
    bool refine = true;               ///< Levenberg-Marquardt polish of the pencil solution
    double pinv_cutoff = 1e-12;       ///< relative singular-value cutoff
    LeastSquaresOptions least_squares{1e-14, 2000};
};

struct ErrorProfile {
    double max_error = 0.0;
    std::vector<double> errors;  ///< |f(k) - fit(k)| at index k - 1
};

inline std::vector<double> power_law_sequence(double alpha, int length) {
    std::vector<double> f(static_cast<std::size_t>(length));
    for (int k = 1; k <= length; ++k) f[static_cast<std::size_t>(k - 1)] = std::pow(static_cast<double>(k), -alpha);
    return f;
}

inline ErrorProfile eval_error(const ExponentialSumFit& fit, const std::vector<double>& target) {
    require(static_cast<int>(target.size()) == fit.length, "eval_error: target length differs from the fit");
    ErrorProfile p;
    p.errors.resize(target.size());
    for (int k = 1; k <= fit.length; ++k) {
        const double e = std::abs(target[static_cast<std::size_t>(k - 1)] - fit.evaluate(k));
        p.errors[static_cast<std::size_t>(k - 1)] = e;
        p.max_error = std::max(p.max_error, e);
    }
    return p;
}

/// Error against k^-alpha for fits built from a power law.
inline ErrorProfile eval_error(const ExponentialSumFit& fit) {
    require(!std::isnan(fit.alpha), "eval_error: fit has no power-law target; pass the sequence");
    return eval_error(fit, power_law_sequence(fit.alpha, fit.length));
}

namespace detail {

inline bool is_complex_rate(std::complex<double> l) { return std::abs(l.imag()) > 1e-10 * std::max(1.0, std::abs(l)); }

/// Orders terms by decreasing |lambda| with conjugate partners adjacent
/// (positive imaginary part first) and makes the pair data exactly conjugate.
inline void canonicalize(ExponentialSumFit& fit) {
    struct Term {
        std::complex<double> c, l;
    };
    std::vector<Term> real_terms, upper;
    std::vector<Term> lower;
    for (std::size_t i = 0; i < fit.rates.size(); ++i) {
        Term t{fit.coefficients[i], fit.rates[i]};
        if (!is_complex_rate(t.l)) {
            real_terms.push_back({t.c.real(), t.l.real()});
        } else if (t.l.imag() > 0.0) {
            upper.push_back(t);
        } else {
            lower.push_back(t);
        }
    }
    std::vector<std::pair<Term, bool>> ordered;  // (term, is pair)
    for (const auto& t : real_terms) ordered.push_back({t, false});
    for (const auto& u : upper) {
        // Average with the closest conjugate partner, if present.
        auto best = lower.end();
        double d = std::numeric_limits<double>::infinity();
        for (auto it = lower.begin(); it != lower.end(); ++it) {
            const double e = std::abs(std::conj(it->l) - u.l);
            if (e < d) {
                d = e;
                best = it;
            }
        }
        Term p = u;
        if (best != lower.end()) {
            p.l = 0.5 * (u.l + std::conj(best->l));
            p.c = 0.5 * (u.c + std::conj(best->c));
            lower.erase(best);
        }
        ordered.push_back({p, true});
    }
    // Unpaired lower-half rates cannot give a real sum; keep their real part.
    for (const auto& t : lower) ordered.push_back({{t.c.real(), t.l.real()}, false});
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& a, const auto& b) { return std::abs(a.first.l) > std::abs(b.first.l); });
    fit.coefficients.clear();
    fit.rates.clear();
    for (const auto& [t, pair] : ordered) {
        fit.coefficients.push_back(t.c);
        fit.rates.push_back(t.l);
        if (pair) {
            fit.coefficients.push_back(std::conj(t.c));
            fit.rates.push_back(std::conj(t.l));
        }
    }
}

/// Linear least squares for the coefficients given the rates.
inline std::vector<std::complex<double>> solve_coefficients(const std::vector<double>& f,
                                                            const std::vector<std::complex<double>>& rates) {
    const auto m = static_cast<Eigen::Index>(f.size());
    const auto n = static_cast<Eigen::Index>(rates.size());
    Eigen::MatrixXcd v(m, n);
    for (Eigen::Index k = 0; k < m; ++k)
        for (Eigen::Index i = 0; i < n; ++i) v(k, i) = std::pow(rates[static_cast<std::size_t>(i)], static_cast<int>(k + 1));
    Eigen::VectorXcd rhs(m);
    for (Eigen::Index k = 0; k < m; ++k) rhs(k) = f[static_cast<std::size_t>(k)];
    const Eigen::VectorXcd c = v.colPivHouseholderQr().solve(rhs);
    return {c.data(), c.data() + c.size()};
}

/// Real parameter vector: (c, lambda) per real term, (Re c, Im c, Re l, Im l)
/// per conjugate pair.
inline Eigen::VectorXd pack(const ExponentialSumFit& fit) {
    std::vector<double> p;
    for (std::size_t i = 0; i < fit.rates.size(); ++i) {
        if (is_complex_rate(fit.rates[i])) {
            p.insert(p.end(), {fit.coefficients[i].real(), fit.coefficients[i].imag(), fit.rates[i].real(),
                               fit.rates[i].imag()});
            ++i;  // skip the conjugate partner
        } else {
            p.insert(p.end(), {fit.coefficients[i].real(), fit.rates[i].real()});
        }
    }
    return Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
}

inline void unpack(const Eigen::VectorXd& p, const std::vector<bool>& pair_layout, ExponentialSumFit& fit) {
    fit.coefficients.clear();
    fit.rates.clear();
    Eigen::Index at = 0;
    for (bool pair : pair_layout) {
        if (pair) {
            const std::complex<double> c(p(at), p(at + 1)), l(p(at + 2), p(at + 3));
            fit.coefficients.insert(fit.coefficients.end(), {c, std::conj(c)});
            fit.rates.insert(fit.rates.end(), {l, std::conj(l)});
            at += 4;
        } else {
            fit.coefficients.push_back(p(at));
            fit.rates.push_back(p(at + 1));
            at += 2;
        }
    }
}

inline std::vector<bool> pair_layout(const ExponentialSumFit& fit) {
    std::vector<bool> layout;
    for (std::size_t i = 0; i < fit.rates.size(); ++i) {
        const bool pair = is_complex_rate(fit.rates[i]);
        layout.push_back(pair);
        if (pair) ++i;
    }
    return layout;
}

inline void refine(ExponentialSumFit& fit, const std::vector<double>& f, const LeastSquaresOptions& options) {
    const auto layout = pair_layout(fit);
    const int m = static_cast<int>(f.size());
    auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
        // Powers by repeated multiplication keep the cost linear in N.
        r.resize(m);
        for (int k = 0; k < m; ++k) r(k) = -f[static_cast<std::size_t>(k)];
        Eigen::Index at = 0;
        for (bool pair : layout) {
            if (pair) {
                const std::complex<double> c(p(at), p(at + 1)), l(p(at + 2), p(at + 3));
                std::complex<double> pw = l;
                for (int k = 0; k < m; ++k, pw *= l) r(k) += 2.0 * (c * pw).real();
                at += 4;
            } else {
                const double c = p(at), l = p(at + 1);
                double pw = l;
                for (int k = 0; k < m; ++k, pw *= l) r(k) += c * pw;
                at += 2;
            }
        }
    };
    auto jacobian = [&](const Eigen::VectorXd& p, Eigen::MatrixXd& j) {
        j.setZero(m, p.size());
        Eigen::Index at = 0;
        for (bool pair : layout) {
            if (pair) {
                const std::complex<double> c(p(at), p(at + 1)), l(p(at + 2), p(at + 3));
                std::complex<double> pw = l, prev = 1.0;  // l^(k+1), l^k
                for (int k = 0; k < m; ++k) {
                    // d/dc of 2 Re(c l^n) and d/dl via n c l^(n-1).
                    const std::complex<double> dl = static_cast<double>(k + 1) * c * prev;
                    j(k, at) = 2.0 * pw.real();
                    j(k, at + 1) = -2.0 * pw.imag();
                    j(k, at + 2) = 2.0 * dl.real();
                    j(k, at + 3) = -2.0 * dl.imag();
                    prev = pw;
                    pw *= l;
                }
                at += 4;
            } else {
                const double c = p(at), l = p(at + 1);
                double pw = l, prev = 1.0;
                for (int k = 0; k < m; ++k) {
                    j(k, at) = pw;
                    j(k, at + 1) = (k + 1) * c * prev;
                    prev = pw;
                    pw *= l;
                }
                at += 2;
            }
        }
    };
    const auto result = least_squares(residual, jacobian, pack(fit), m, options);
    ExponentialSumFit candidate = fit;
    unpack(result.params, layout, candidate);
    const double err = eval_error(candidate, f).max_error;
    const bool decaying = std::all_of(candidate.rates.begin(), candidate.rates.end(),
                                      [](std::complex<double> l) { return std::abs(l) < 1.0; });
    if (std::isfinite(err) && err < fit.max_error && decaying) {
        candidate.max_error = err;
        candidate.refined = true;
        fit = std::move(candidate);
    }
}

}  // namespace detail

/// Matrix-pencil fit of n exponentials to the sequence f(1..N) (f[0] = f(1)).
inline ExponentialSumFit fit_sequence(const std::vector<double>& f, int n, const CompressionOptions& options = {}) {
    const int length = static_cast<int>(f.size());
    require(n >= 1, "fit_exponential_sum: need at least one term");
    require(2 * n < length, "fit_exponential_sum: need n < N/2");
    const int rows = length - n + 1;
    Eigen::MatrixXd a(rows, n);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = f[static_cast<std::size_t>(i + j)];
    // Numerical rank of the data matrix; V1 below is near-orthonormal whatever the data.
    const Eigen::VectorXd data_sv = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
    int rank = 0;
    for (Eigen::Index i = 0; i < data_sv.size(); ++i)
        if (data_sv(i) > options.pinv_cutoff * data_sv(0)) ++rank;
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd v = qr.householderQ() * Eigen::MatrixXd::Identity(rows, n);
    const Eigen::MatrixXd v1 = v.topRows(rows - 1), v2 = v.bottomRows(rows - 1);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(v1, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > options.pinv_cutoff * s(0)) inv(i) = 1.0 / s(i);
    const Eigen::MatrixXd pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
    const Eigen::EigenSolver<Eigen::MatrixXd> eig(pinv * v2);
    require(eig.info() == Eigen::Success, "fit_exponential_sum: eigenvalue solver failed");

    ExponentialSumFit fit;
    fit.length = length;
    fit.pencil_rank = rank;
    fit.rank_deficient = rank < n;
    for (Eigen::Index i = 0; i < n; ++i) fit.rates.push_back(eig.eigenvalues()(i));
    fit.coefficients = detail::solve_coefficients(f, fit.rates);
    detail::canonicalize(fit);
    fit.max_error = eval_error(fit, f).max_error;
    fit.pencil_error = fit.max_error;
    if (options.refine && !fit.rank_deficient) detail::refine(fit, f, options.least_squares);
    return fit;
}

/// Sum-of-exponentials approximation of k^-alpha for k = 1..N.
inline ExponentialSumFit fit_exponential_sum(double alpha, int length, int n, const CompressionOptions& options = {}) {
    require(alpha >= 0.0, "fit_exponential_sum: alpha must be non-negative");
    auto fit = fit_sequence(power_law_sequence(alpha, length), n, options);
    fit.alpha = alpha;
    return fit;
}

/// The first m terms (largest |lambda| first); a conjugate pair split by
/// the cut is dropped whole. No refit.
inline ExponentialSumFit truncate(const ExponentialSumFit& fit, int m, const std::vector<double>& target) {
    require(m >= 1 && m <= fit.terms(), "truncate: invalid term count");
    ExponentialSumFit out = fit;
    out.coefficients.clear();
    out.rates.clear();
    for (int i = 0; i < m; ++i) {
        const auto l = fit.rates[static_cast<std::size_t>(i)];
        if (detail::is_complex_rate(l) && l.imag() > 0.0 && i + 1 >= m) break;
        out.coefficients.push_back(fit.coefficients[static_cast<std::size_t>(i)]);
        out.rates.push_back(l);
    }
    out.refined = false;
    out.max_error = eval_error(out, target).max_error;
    return out;
}

inline nlohmann::json to_json(const ExponentialSumFit& fit) {
    auto cplx = [](const std::vector<std::complex<double>>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& z : v) a.push_back({z.real(), z.imag()});
        return a;
    };
    nlohmann::json j;
    j["alpha"] = std::isnan(fit.alpha) ? nlohmann::json(nullptr) : nlohmann::json(fit.alpha);
    j["N"] = fit.length;
    j["n"] = fit.terms();
    j["c"] = cplx(fit.coefficients);
    j["lambda"] = cplx(fit.rates);
    j["max_error"] = fit.max_error;
    j["pencil_error"] = fit.pencil_error;
    j["refined"] = fit.refined;
    j["rank_deficient"] = fit.rank_deficient;
    return j;
}

inline ExponentialSumFit exponential_sum_from_json(const nlohmann::json& j) {
    ExponentialSumFit fit;
    fit.alpha = j.at("alpha").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("alpha").get<double>();
    fit.length = j.at("N").get<int>();
    for (const auto& z : j.at("c")) fit.coefficients.emplace_back(z.at(0).get<double>(), z.at(1).get<double>());
    for (const auto& z : j.at("lambda")) fit.rates.emplace_back(z.at(0).get<double>(), z.at(1).get<double>());
    require(fit.coefficients.size() == fit.rates.size(), "exponential sum: c and lambda differ in length");
    fit.max_error = j.value("max_error", 0.0);
    fit.pencil_error = j.value("pencil_error", fit.max_error);
    fit.refined = j.value("refined", false);
    fit.rank_deficient = j.value("rank_deficient", false);
    return fit;
}

}  // namespace lrtim
