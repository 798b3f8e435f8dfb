#include "agency/model.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace agency {

namespace {

constexpr double kMaximizerSeparation = 1e-6;   // two maximizers are distinct beyond this
constexpr double kMaximizerValueTie = 1e-10;    // ... if their values agree within this
constexpr int kNewtonMaxIter = 200;

std::string vec_to_string(const Vector& v) {
    std::ostringstream os;
    os << "(";
    for (int i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
    os << ")";
    return os.str();
}

}  // namespace

void ModelParams::validate() {
    if (n_principals < 1) throw ConfigError("n_principals must be >= 1");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be > 0");
    if (x0.size() != n_principals) throw ConfigError("x0 must have length n_principals");
    if (sigma.rows() != n_principals || sigma.cols() != n_principals)
        throw ConfigError("sigma must be n_principals x n_principals");
    if (!(risk_aversion >= 0.0)) throw ConfigError("risk_aversion must be >= 0");
    if (!(reservation_utility < 0.0))
        throw ConfigError("reservation_utility must be < 0 (exponential utility is negative)");
    if (appetence.size() != n_principals) throw ConfigError("appetence must have length n_principals");
    for (int i = 0; i < appetence.size(); ++i) {
        if (appetence(i) < 0.0 || appetence(i) > 1.0)
            throw ConfigError("appetence entries must lie in [0,1]");
    }
    if (discount != 0.0) throw ConfigError("discount is fixed at zero in all implemented cases");

    Eigen::JacobiSVD<Matrix> svd(sigma);
    const double smax = svd.singularValues()(0);
    const double smin = svd.singularValues()(svd.singularValues().size() - 1);
    if (!(smin > 1e-12 * std::max(1.0, smax)))
        throw ConfigError("sigma is numerically singular; an invertible volatility is required");
    sigma_condition = smax / smin;
}

double ModelParams::r0() const {
    if (!(risk_aversion > 0.0))
        throw ConfigError("r0 is defined only for risk_aversion > 0");
    return -std::log(-reservation_utility) / risk_aversion;
}

DriftCostSpec DriftCostSpec::linear_quadratic(const Vector& k_diag) {
    for (int i = 0; i < k_diag.size(); ++i) {
        if (!(k_diag(i) > 0.0)) throw ConfigError("efficiency diagonal must be positive");
    }
    DriftCostSpec s;
    s.lq_ = k_diag;
    s.m_lower_ = 1.0;
    return s;
}

DriftCostSpec DriftCostSpec::generic(DriftFn drift, CostFn cost, double effort_box_halfwidth,
                                     std::optional<GradFn> objective_gradient, double m_lower) {
    if (!(effort_box_halfwidth > 0.0)) throw ConfigError("effort box halfwidth must be positive");
    DriftCostSpec s;
    s.drift_ = std::move(drift);
    s.cost_ = std::move(cost);
    s.grad_ = std::move(objective_gradient);
    s.effort_box_ = effort_box_halfwidth;
    s.m_lower_ = m_lower;
    return s;
}

DriftCostSpec DriftCostSpec::named(const std::string& name, const Vector& k_diag,
                                   double effort_box_halfwidth) {
    if (name == "lq") return linear_quadratic(k_diag);
    if (name == "quartic") {
        auto drift = [k_diag](double, const Vector&, const Vector& nu) -> Vector {
            return k_diag.cwiseProduct(nu);
        };
        auto cost = [](double, const Vector&, const Vector& nu) -> double {
            const double n2 = nu.squaredNorm();
            return 0.5 * n2 + 0.25 * n2 * n2;
        };
        auto grad = [k_diag](double, const Vector&, const Vector& nu, const Vector& z) -> Vector {
            return k_diag.cwiseProduct(z) - nu * (1.0 + nu.squaredNorm());
        };
        return generic(drift, cost, effort_box_halfwidth, grad, 1.0);
    }
    if (name == "tanh") {
        auto drift = [k_diag](double, const Vector&, const Vector& nu) -> Vector {
            Vector b(nu.size());
            for (int i = 0; i < nu.size(); ++i) b(i) = k_diag(i) * std::tanh(nu(i));
            return b;
        };
        auto cost = [](double, const Vector&, const Vector& nu) -> double {
            return 0.5 * nu.squaredNorm();
        };
        auto grad = [k_diag](double, const Vector&, const Vector& nu, const Vector& z) -> Vector {
            Vector g(nu.size());
            for (int i = 0; i < nu.size(); ++i) {
                const double sech = 1.0 / std::cosh(nu(i));
                g(i) = k_diag(i) * z(i) * sech * sech - nu(i);
            }
            return g;
        };
        return generic(drift, cost, effort_box_halfwidth, grad, 1.0);
    }
    throw ConfigError("unknown drift/cost spec '" + name + "'");
}

const Vector& DriftCostSpec::k_diag() const {
    if (!lq_) throw ConfigError("k_diag() is only defined for the linear-quadratic spec");
    return *lq_;
}

Vector DriftCostSpec::drift(double t, const Vector& x, const Vector& nu) const {
    if (lq_) return lq_->cwiseProduct(nu);
    return drift_(t, x, nu);
}

double DriftCostSpec::cost(double t, const Vector& x, const Vector& nu) const {
    if (lq_) return 0.5 * nu.squaredNorm();
    return cost_(t, x, nu);
}

Vector DriftCostSpec::objective_gradient(double t, const Vector& x, const Vector& nu,
                                         const Vector& z) const {
    if (lq_) return lq_->cwiseProduct(z) - nu;
    if (grad_) return (*grad_)(t, x, nu, z);
    // Central differences on nu -> b.z - c.
    const double h = 1e-6 * std::max(1.0, nu.norm());
    Vector g(nu.size());
    Vector np = nu, nm = nu;
    for (int i = 0; i < nu.size(); ++i) {
        np(i) = nu(i) + h;
        nm(i) = nu(i) - h;
        const double fp = drift_(t, x, np).dot(z) - cost_(t, x, np);
        const double fm = drift_(t, x, nm).dot(z) - cost_(t, x, nm);
        g(i) = (fp - fm) / (2.0 * h);
        np(i) = nu(i);
        nm(i) = nu(i);
    }
    return g;
}

namespace {

double objective_value(const DriftCostSpec& spec, double t, const Vector& x, const Vector& nu,
                       const Vector& z) {
    return spec.drift(t, x, nu).dot(z) - spec.cost(t, x, nu);
}

// Projected damped Newton ascent on nu -> b.z - c over the effort box, with a
// finite-difference Hessian. Returns nullopt when it fails to converge.
std::optional<Vector> newton_ascent(const DriftCostSpec& spec, double t, const Vector& x,
                                    const Vector& z, Vector nu) {
    const int n = static_cast<int>(nu.size());
    const double box = spec.effort_box();
    auto clamp = [box](Vector v) {
        for (int i = 0; i < v.size(); ++i) v(i) = std::clamp(v(i), -box, box);
        return v;
    };
    nu = clamp(nu);
    const double hj = 1e-5;
    for (int it = 0; it < kNewtonMaxIter; ++it) {
        Vector g = spec.objective_gradient(t, x, nu, z);
        // Interior stationarity, or pinned at the box with outward gradient.
        bool done = true;
        for (int i = 0; i < n; ++i) {
            const bool at_lo = nu(i) <= -box + 1e-12 && g(i) < 0;
            const bool at_hi = nu(i) >= box - 1e-12 && g(i) > 0;
            if (std::abs(g(i)) > 1e-11 && !at_lo && !at_hi) done = false;
        }
        if (done) return nu;

        Matrix H(n, n);
        Vector np = nu;
        for (int j = 0; j < n; ++j) {
            np(j) = nu(j) + hj;
            Vector gp = spec.objective_gradient(t, x, np, z);
            np(j) = nu(j) - hj;
            Vector gm = spec.objective_gradient(t, x, np, z);
            np(j) = nu(j);
            H.col(j) = (gp - gm) / (2.0 * hj);
        }
        H = 0.5 * (H + H.transpose()).eval();
        // Newton step on the concave objective; fall back to gradient ascent
        // when the Hessian is not usable.
        Vector step;
        Eigen::FullPivLU<Matrix> lu(H);
        if (lu.isInvertible()) {
            step = -lu.solve(g);
            if (step.dot(g) <= 0.0) step = g;  // not an ascent direction
        } else {
            step = g;
        }
        const double f0 = objective_value(spec, t, x, nu, z);
        double alpha = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls) {
            Vector cand = clamp(nu + alpha * step);
            if (objective_value(spec, t, x, cand, z) > f0 + 1e-14) {
                nu = cand;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!moved) {
            // Near the maximum the objective improvement drops below the
            // acceptance threshold before the gradient does; polish on the
            // gradient norm instead.
            const Vector cand = clamp(nu + step);
            const Vector gc = spec.objective_gradient(t, x, cand, z);
            if (gc.norm() < 0.5 * g.norm()) {
                nu = cand;
                continue;
            }
            double pg = 0.0;
            for (int i = 0; i < n; ++i) {
                const bool at_lo = nu(i) <= -box + 1e-12 && g(i) < 0;
                const bool at_hi = nu(i) >= box - 1e-12 && g(i) > 0;
                if (!at_lo && !at_hi) pg = std::max(pg, std::abs(g(i)));
            }
            if (pg < 1e-8) return nu;
            return std::nullopt;
        }
    }
    return std::nullopt;
}

}  // namespace

Vector best_response(double t, const Vector& x, const Vector& z, const DriftCostSpec& spec) {
    for (int i = 0; i < z.size(); ++i) {
        if (!std::isfinite(z(i))) throw ConfigError("best_response: z must be finite");
    }
    if (spec.is_lq()) return spec.k_diag().cwiseProduct(z);

    const int n = static_cast<int>(z.size());
    const double box = spec.effort_box();
    std::vector<Vector> starts;
    starts.push_back(Vector::Zero(n));
    starts.push_back(z.cwiseMin(Vector::Constant(n, box)).cwiseMax(Vector::Constant(n, -box)));
    starts.push_back(Vector::Constant(n, 0.5 * box));
    starts.push_back(Vector::Constant(n, -0.5 * box));

    std::vector<Vector> maxima;
    std::vector<double> values;
    for (const auto& s : starts) {
        auto r = newton_ascent(spec, t, x, z, s);
        if (!r) continue;
        maxima.push_back(*r);
        values.push_back(objective_value(spec, t, x, *r, z));
    }
    if (maxima.empty())
        throw NonConcaveHamiltonian("best_response: inner maximization failed to converge at z=" +
                                    vec_to_string(z));
    std::size_t best = 0;
    for (std::size_t i = 1; i < maxima.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    // Two maximizers are "distinct" if separated beyond tolerance while their
    // values tie; that violates the single-valued best-response assumption.
    for (std::size_t i = 0; i < maxima.size(); ++i) {
        if (i == best) continue;
        if ((maxima[i] - maxima[best]).norm() > kMaximizerSeparation &&
            std::abs(values[i] - values[best]) < kMaximizerValueTie) {
            throw NonConcaveHamiltonian(
                "best_response: multiple maximizers at z=" + vec_to_string(z) + ": " +
                vec_to_string(maxima[best]) + " and " + vec_to_string(maxima[i]));
        }
    }
    return maxima[best];
}

double generator_G(double t, const Vector& x, const Vector& z, const ModelParams& params,
                   const DriftCostSpec& spec) {
    const double quad = 0.5 * params.risk_aversion * (params.sigma.transpose() * z).squaredNorm();
    if (spec.is_lq()) {
        // sup_nu (K nu . z - |nu|^2/2) = |K z|^2 / 2 at nu = K z.
        return quad - 0.5 * spec.k_diag().cwiseProduct(z).squaredNorm();
    }
    const Vector nu = best_response(t, x, z, spec);
    return quad - (spec.drift(t, x, nu).dot(z) - spec.cost(t, x, nu));
}

double liquidation(const ModelParams& params, int i, const Vector& x) {
    const int n = params.n_principals;
    if (i < 0 || i >= n) throw ConfigError("liquidation: principal index out of range");
    if (n == 1) return x(0);
    double others = 0.0;
    for (int j = 0; j < n; ++j) {
        if (j != i) others += x(j);
    }
    const double gamma = params.appetence(i);
    return x(i) + gamma * (x(i) - others / (n - 1));
}

Vector liquidation_gradient(const ModelParams& params, int i) {
    const int n = params.n_principals;
    if (i < 0 || i >= n) throw ConfigError("liquidation_gradient: principal index out of range");
    Vector g = Vector::Zero(n);
    if (n == 1) {
        g(0) = 1.0;
        return g;
    }
    const double gamma = params.appetence(i);
    for (int j = 0; j < n; ++j) g(j) = (j == i) ? 1.0 + gamma : -gamma / (n - 1);
    return g;
}

Vector aggregate_gradient(const ModelParams& params) {
    Vector g = Vector::Zero(params.n_principals);
    for (int i = 0; i < params.n_principals; ++i) g += liquidation_gradient(params, i);
    return g;
}

GrowthReport growth_sanity(const std::vector<Vector>& z_samples, const DriftCostSpec& spec,
                           const ModelParams& params, const std::vector<Vector>& x_samples) {
    if (z_samples.empty()) throw ConfigError("growth_sanity: nonempty sample set required");
    GrowthReport report;
    report.m_lower = spec.m_lower();
    report.n_samples = z_samples.size();

    std::vector<Vector> xs = x_samples;
    if (xs.empty()) xs.push_back(params.x0);

    for (const auto& z : z_samples) {
        for (const auto& x : xs) {
            try {
                const Vector nu = best_response(0.0, x, z, spec);
                const double g = generator_G(0.0, x, z, params, spec);
                if (!nu.allFinite() || !std::isfinite(g)) {
                    report.flags.push_back("non-finite value at z=" + vec_to_string(z));
                    continue;
                }
                const double zn = z.norm();
                const double denom_nu = 1.0 + std::pow(zn, 1.0 / spec.m_lower());
                const double denom_g = 1.0 + zn * zn + zn * x.norm();
                report.c_best_response = std::max(report.c_best_response, nu.norm() / denom_nu);
                report.c_generator = std::max(report.c_generator, std::abs(g) / denom_g);
            } catch (const SolverError& e) {
                report.flags.push_back(std::string("evaluation failed: ") + e.what());
            }
        }
    }
    return report;
}

}  // namespace agency
