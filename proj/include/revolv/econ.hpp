#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "revolv/risk.hpp"

namespace revolv::econ {

class EstimationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Design matrices: numeric columns plus categorical factors expanded to
// dummies (one reference level dropped per factor).
// ---------------------------------------------------------------------------

struct Dataset {
    Eigen::Index n = 0;
    std::vector<std::string> column_names;                 // numeric regressors
    std::vector<Eigen::VectorXd> columns;
    std::vector<std::string> factor_names;                 // fixed-effect factors
    std::vector<std::vector<std::string>> factor_levels;   // per-row labels, one vector per factor
    std::vector<std::string> cluster;                      // per-row cluster key
    Eigen::VectorXd y;

    void add_column(std::string name, Eigen::VectorXd values) {
        column_names.push_back(std::move(name));
        columns.push_back(std::move(values));
    }
    void add_factor(std::string name, std::vector<std::string> levels) {
        factor_names.push_back(std::move(name));
        factor_levels.push_back(std::move(levels));
    }
};

// Appends the product column a*b; estimation then proceeds as usual.
inline void add_interaction(Dataset& data, const std::string& a, const std::string& b) {
    const Eigen::VectorXd* col_a = nullptr;
    const Eigen::VectorXd* col_b = nullptr;
    for (size_t c = 0; c < data.column_names.size(); ++c) {
        if (data.column_names[c] == a) col_a = &data.columns[c];
        if (data.column_names[c] == b) col_b = &data.columns[c];
    }
    if (!col_a || !col_b)
        throw EstimationError("interaction terms must already be columns: " + a + ", " + b);
    data.add_column(a + ":" + b, col_a->cwiseProduct(*col_b));
}

struct DesignMatrix {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    std::vector<std::string> names;
    std::vector<int> cluster_ids;
    int n_clusters = 0;
};

// Expands factors into dummy columns. The reference level per factor is the
// smallest label unless overridden.
inline DesignMatrix build_design(const Dataset& data,
                                 const std::map<std::string, std::string>& reference_levels = {},
                                 bool add_intercept = true) {
    const Eigen::Index n = data.n;
    if (n <= 0) throw EstimationError("empty dataset");
    for (const auto& col : data.columns)
        if (col.size() != n) throw EstimationError("column length mismatch");
    if (data.y.size() != n) throw EstimationError("dependent length mismatch");
    if (static_cast<Eigen::Index>(data.cluster.size()) != n)
        throw EstimationError("cluster key length mismatch");

    DesignMatrix dm;
    dm.y = data.y;

    std::vector<std::pair<std::string, Eigen::VectorXd>> cols;
    if (add_intercept) cols.emplace_back("intercept", Eigen::VectorXd::Ones(n));
    for (size_t c = 0; c < data.columns.size(); ++c)
        cols.emplace_back(data.column_names[c], data.columns[c]);

    for (size_t fidx = 0; fidx < data.factor_names.size(); ++fidx) {
        const auto& name = data.factor_names[fidx];
        const auto& labels = data.factor_levels[fidx];
        if (static_cast<Eigen::Index>(labels.size()) != n)
            throw EstimationError("factor '" + name + "' length mismatch");
        std::set<std::string> levels(labels.begin(), labels.end());
        if (levels.empty()) continue;
        std::string ref = *levels.begin();
        if (auto it = reference_levels.find(name); it != reference_levels.end()) {
            if (!levels.count(it->second))
                throw EstimationError("reference level '" + it->second + "' absent from factor '" + name + "'");
            ref = it->second;
        }
        for (const auto& level : levels) {
            if (level == ref) continue;
            Eigen::VectorXd d(n);
            for (Eigen::Index i = 0; i < n; ++i) d[i] = labels[static_cast<size_t>(i)] == level ? 1.0 : 0.0;
            cols.emplace_back(name + "=" + level, std::move(d));
        }
    }

    dm.x.resize(n, static_cast<Eigen::Index>(cols.size()));
    dm.names.reserve(cols.size());
    for (Eigen::Index c = 0; c < dm.x.cols(); ++c) {
        dm.names.push_back(cols[static_cast<size_t>(c)].first);
        dm.x.col(c) = cols[static_cast<size_t>(c)].second;
    }

    std::map<std::string, int> cluster_index;
    dm.cluster_ids.reserve(static_cast<size_t>(n));
    for (const auto& key : data.cluster) {
        auto [it, inserted] = cluster_index.emplace(key, static_cast<int>(cluster_index.size()));
        dm.cluster_ids.push_back(it->second);
    }
    dm.n_clusters = static_cast<int>(cluster_index.size());
    return dm;
}

// ---------------------------------------------------------------------------
// OLS with facility-clustered sandwich standard errors.
// ---------------------------------------------------------------------------

struct RegressionResult {
    std::vector<std::string> names;   // retained columns
    Eigen::VectorXd coef;
    Eigen::VectorXd se;
    double r_squared = 0.0;
    Eigen::Index n = 0;
    int n_clusters = 0;
    Eigen::Index rank = 0;
    std::vector<std::string> dropped_columns;

    std::optional<double> coefficient(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return coef[static_cast<Eigen::Index>(i)];
        return std::nullopt;
    }
    std::optional<double> std_error(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return se[static_cast<Eigen::Index>(i)];
        return std::nullopt;
    }
};

namespace detail {

// Rank-revealing column selection; returns indices of retained columns in
// original order plus the dropped names.
inline std::vector<Eigen::Index> select_independent_columns(const Eigen::MatrixXd& x,
                                                            const std::vector<std::string>& names,
                                                            std::vector<std::string>& dropped) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-9);
    const Eigen::Index rank = qr.rank();
    const auto& perm = qr.colsPermutation().indices();
    std::vector<Eigen::Index> keep(perm.data(), perm.data() + rank);
    std::sort(keep.begin(), keep.end());
    if (rank < x.cols()) {
        std::set<Eigen::Index> kept(keep.begin(), keep.end());
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            if (!kept.count(c)) dropped.push_back(names[static_cast<size_t>(c)]);
    }
    return keep;
}

inline Eigen::MatrixXd take_columns(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& cols) {
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
    for (size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = x.col(cols[c]);
    return out;
}

} // namespace detail

// Cluster-robust OLS: collinear columns are dropped with a report, the
// covariance is the CRVE sandwich with the G/(G-1) * (N-1)/(N-K)
// small-sample factor.
inline RegressionResult ols_clustered(const DesignMatrix& dm) {
    const Eigen::Index n = dm.x.rows();
    if (dm.n_clusters <= 1) throw EstimationError("clustered errors need >= 2 clusters");

    RegressionResult res;
    auto keep = detail::select_independent_columns(dm.x, dm.names, res.dropped_columns);
    if (keep.empty()) throw EstimationError("design matrix has rank 0");
    Eigen::MatrixXd x = detail::take_columns(dm.x, keep);
    const Eigen::Index k = x.cols();
    if (n <= k) throw EstimationError("need more observations than retained columns");

    for (auto c : keep) res.names.push_back(dm.names[static_cast<size_t>(c)]);
    res.rank = k;
    res.n = n;
    res.n_clusters = dm.n_clusters;

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    res.coef = qr.solve(dm.y);
    Eigen::VectorXd resid = dm.y - x * res.coef;

    const double y_mean = dm.y.mean();
    const double sst = (dm.y.array() - y_mean).square().sum();
    const double ssr = resid.squaredNorm();
    res.r_squared = sst > 0.0 ? 1.0 - ssr / sst : 1.0;

    // meat = sum_g (X_g' e_g)(X_g' e_g)'
    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(dm.n_clusters, k);
    for (Eigen::Index i = 0; i < n; ++i)
        scores.row(dm.cluster_ids[static_cast<size_t>(i)]) += resid[i] * x.row(i);
    Eigen::MatrixXd meat = scores.transpose() * scores;

    Eigen::MatrixXd xtx_inv = (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(k, k));
    const double g = static_cast<double>(dm.n_clusters);
    const double factor = g / (g - 1.0) * (static_cast<double>(n) - 1.0) / static_cast<double>(n - k);
    Eigen::MatrixXd cov = factor * xtx_inv * meat * xtx_inv;
    res.se = cov.diagonal().array().max(0.0).sqrt();
    return res;
}

// ---------------------------------------------------------------------------
// Probit with cluster-robust errors and average marginal effects.
// ---------------------------------------------------------------------------

struct ProbitResult {
    std::vector<std::string> names;
    Eigen::VectorXd coef;
    Eigen::VectorXd se;
    double log_likelihood = 0.0;
    double pseudo_r_squared = 0.0;  // McFadden
    double prob_y1 = 0.0;           // sample share of Y = 1
    Eigen::Index n = 0;
    int n_clusters = 0;
    int iterations = 0;
    std::vector<std::string> dropped_columns;
    std::map<std::string, double> marginal_effects;  // requested regressors

    std::optional<double> coefficient(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return coef[static_cast<Eigen::Index>(i)];
        return std::nullopt;
    }
    std::optional<double> std_error(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return se[static_cast<Eigen::Index>(i)];
        return std::nullopt;
    }
};

namespace detail {

// phi(z) / Phi(z), stable deep into the left tail.
inline double inverse_mills(double z) {
    if (z > -30.0) return normal_pdf(z) / normal_cdf(z);
    const double z2 = z * z;
    return -z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2));
}

inline double log_normal_cdf(double z) {
    if (z > -30.0) return std::log(normal_cdf(z));
    // log Phi(z) ~ -z^2/2 - log(-z) - log(sqrt(2 pi)) + log(1 - 1/z^2 + ...)
    const double z2 = z * z;
    return -0.5 * z2 - std::log(-z) - 0.9189385332046727 + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

inline bool is_binary_column(const Eigen::VectorXd& col) {
    bool saw0 = false, saw1 = false;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
        if (col[i] == 0.0) saw0 = true;
        else if (col[i] == 1.0) saw1 = true;
        else return false;
    }
    return saw0 && saw1;
}

} // namespace detail

// Damped Newton MLE on the probit log-likelihood. Converges when the
// gradient max-norm drops below `tol`; perfect separation on a retained
// column is an error naming the column.
inline ProbitResult probit_clustered(const DesignMatrix& dm,
                                     const std::vector<std::string>& marginal_effect_terms = {},
                                     double tol = 1e-8, int max_iterations = 200) {
    const Eigen::Index n = dm.x.rows();
    if (dm.n_clusters <= 1) throw EstimationError("clustered errors need >= 2 clusters");
    double y1 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (dm.y[i] != 0.0 && dm.y[i] != 1.0) throw EstimationError("probit outcome must be 0/1");
        y1 += dm.y[i];
    }
    if (y1 == 0.0 || y1 == static_cast<double>(n))
        throw EstimationError("probit needs both outcome classes");

    ProbitResult res;
    auto keep = detail::select_independent_columns(dm.x, dm.names, res.dropped_columns);
    Eigen::MatrixXd x = detail::take_columns(dm.x, keep);
    const Eigen::Index k = x.cols();
    if (n <= k) throw EstimationError("need more observations than retained columns");
    for (auto c : keep) res.names.push_back(dm.names[static_cast<size_t>(c)]);

    // Complete separation on a single binary column is detectable up front.
    for (Eigen::Index c = 0; c < k; ++c) {
        if (res.names[static_cast<size_t>(c)] == "intercept") continue;
        if (!detail::is_binary_column(x.col(c))) continue;
        bool y_const_on1 = true, y_const_on0 = true;
        double first1 = -1.0, first0 = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double& first = x(i, c) == 1.0 ? first1 : first0;
            bool& y_const = x(i, c) == 1.0 ? y_const_on1 : y_const_on0;
            if (first < 0.0) first = dm.y[i];
            else if (dm.y[i] != first) y_const = false;
        }
        if (y_const_on1 && y_const_on0 && first1 >= 0.0 && first0 >= 0.0 && first1 != first0)
            throw EstimationError("perfect separation on column '" +
                                  res.names[static_cast<size_t>(c)] + "'");
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
    auto loglik = [&](const Eigen::VectorXd& b) {
        Eigen::VectorXd z = x * b;
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            ll += dm.y[i] > 0.5 ? detail::log_normal_cdf(z[i]) : detail::log_normal_cdf(-z[i]);
        return ll;
    };

    double ll = loglik(beta);
    Eigen::VectorXd gradient(k);
    int iter = 0;
    bool converged = false;
    // The likelihood flattens out at machine precision well before the
    // gradient reaches the nominal tolerance on larger instances; a stalled
    // line search with a small gradient still counts as the optimum.
    const double stall_tol = 1e-6;
    for (; iter < max_iterations; ++iter) {
        Eigen::VectorXd z = x * beta;
        Eigen::VectorXd lambda(n), weight(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double zi = z[i];
            if (dm.y[i] > 0.5) {
                const double m = detail::inverse_mills(zi);
                lambda[i] = m;
                weight[i] = m * (zi + m);  // -d lambda / dz
            } else {
                const double m = detail::inverse_mills(-zi);
                lambda[i] = -m;
                weight[i] = m * (m - zi);
            }
        }
        gradient = x.transpose() * lambda;
        const double gnorm = gradient.cwiseAbs().maxCoeff();
        if (gnorm < tol) {
            converged = true;
            break;
        }

        Eigen::MatrixXd neg_hessian = x.transpose() * weight.asDiagonal() * x;
        Eigen::VectorXd step = neg_hessian.ldlt().solve(gradient);
        if (step.cwiseAbs().maxCoeff() < 1e-13 * (1.0 + beta.cwiseAbs().maxCoeff())) {
            if (gnorm < stall_tol) {
                converged = true;
                break;
            }
            throw EstimationError("probit stalled at iteration " + std::to_string(iter) +
                                  " with gradient max-norm " + std::to_string(gnorm));
        }

        // Step halving guards against overshooting; a step that leaves the
        // likelihood unchanged at machine precision is still accepted, since
        // Newton keeps shrinking the gradient quadratically from there.
        const double noise = 1e-13 * (std::abs(ll) + 1.0);
        double scale = 1.0;
        double new_ll = loglik(beta + step);
        int halvings = 0;
        while (new_ll < ll - noise && halvings < 60) {
            scale *= 0.5;
            new_ll = loglik(beta + scale * step);
            ++halvings;
        }
        if (halvings == 60) {
            if (gnorm < stall_tol) {
                converged = true;
                break;
            }
            throw EstimationError("probit line search failed at iteration " + std::to_string(iter) +
                                  " with gradient max-norm " + std::to_string(gnorm));
        }
        beta += scale * step;
        ll = std::max(ll, new_ll);

        if (beta.cwiseAbs().maxCoeff() > 1e3) {
            Eigen::Index worst = 0;
            beta.cwiseAbs().maxCoeff(&worst);
            throw EstimationError("probable separation: coefficient on '" +
                                  res.names[static_cast<size_t>(worst)] + "' diverges");
        }
    }
    if (!converged) {
        Eigen::VectorXd z = x * beta;
        Eigen::VectorXd lambda(n);
        for (Eigen::Index i = 0; i < n; ++i)
            lambda[i] = dm.y[i] > 0.5 ? detail::inverse_mills(z[i]) : -detail::inverse_mills(-z[i]);
        gradient = x.transpose() * lambda;
        if (gradient.cwiseAbs().maxCoeff() >= stall_tol)
            throw EstimationError("probit did not converge in " + std::to_string(max_iterations) +
                                  " iterations; gradient max-norm " +
                                  std::to_string(gradient.cwiseAbs().maxCoeff()));
    }

    res.coef = beta;
    res.n = n;
    res.n_clusters = dm.n_clusters;
    res.iterations = iter;
    res.log_likelihood = ll;
    res.prob_y1 = y1 / static_cast<double>(n);

    // Cluster-robust sandwich on the scores with the G/(G-1) factor.
    {
        Eigen::VectorXd z = x * beta;
        Eigen::VectorXd lambda(n), weight(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double zi = z[i];
            if (dm.y[i] > 0.5) {
                const double m = detail::inverse_mills(zi);
                lambda[i] = m;
                weight[i] = m * (zi + m);
            } else {
                const double m = detail::inverse_mills(-zi);
                lambda[i] = -m;
                weight[i] = m * (m - zi);
            }
        }
        Eigen::MatrixXd neg_hessian = x.transpose() * weight.asDiagonal() * x;
        Eigen::MatrixXd hinv = neg_hessian.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
        Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(dm.n_clusters, k);
        for (Eigen::Index i = 0; i < n; ++i)
            scores.row(dm.cluster_ids[static_cast<size_t>(i)]) += lambda[i] * x.row(i);
        const double g = static_cast<double>(dm.n_clusters);
        Eigen::MatrixXd cov = g / (g - 1.0) * hinv * (scores.transpose() * scores) * hinv;
        res.se = cov.diagonal().array().max(0.0).sqrt();
    }

    // McFadden pseudo-R^2 against the intercept-only likelihood.
    {
        const double p = res.prob_y1;
        const double ll0 = y1 * std::log(p) + (static_cast<double>(n) - y1) * std::log(1.0 - p);
        res.pseudo_r_squared = 1.0 - ll / ll0;
    }

    // Average marginal effects: discrete difference for binary regressors,
    // mean of phi(x'b) * b_k for continuous ones.
    for (const auto& term : marginal_effect_terms) {
        Eigen::Index idx = -1;
        for (size_t i = 0; i < res.names.size(); ++i)
            if (res.names[i] == term) idx = static_cast<Eigen::Index>(i);
        if (idx < 0) continue;  // dropped column: no effect to report
        if (detail::is_binary_column(x.col(idx))) {
            double sum = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                Eigen::RowVectorXd xi = x.row(i);
                xi[idx] = 1.0;
                const double z1 = xi.dot(beta.transpose());
                xi[idx] = 0.0;
                const double z0 = xi.dot(beta.transpose());
                sum += normal_cdf(z1) - normal_cdf(z0);
            }
            res.marginal_effects[term] = sum / static_cast<double>(n);
        } else {
            Eigen::VectorXd z = x * beta;
            double sum = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) sum += normal_pdf(z[i]);
            res.marginal_effects[term] = sum / static_cast<double>(n) * beta[idx];
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Lender systematic risk: slope of lender excess returns on market excess
// returns.
// ---------------------------------------------------------------------------

inline double lender_beta(std::span<const double> lender_excess,
                          std::span<const double> market_excess, size_t min_obs = 8) {
    if (lender_excess.size() != market_excess.size())
        throw EstimationError("lender/market series length mismatch");
    const size_t n = lender_excess.size();
    if (n < min_obs)
        throw EstimationError("lender beta needs >= " + std::to_string(min_obs) + " observations");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += market_excess[i];
        my += lender_excess[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (market_excess[i] - mx) * (market_excess[i] - mx);
        sxy += (market_excess[i] - mx) * (lender_excess[i] - my);
    }
    if (sxx == 0.0) throw EstimationError("market excess returns have zero variance");
    return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Quantile buckets. Boundary values go to the lower bucket.
// ---------------------------------------------------------------------------

struct BucketResult {
    std::vector<int> labels;       // 0..k-1 per input value
    std::vector<double> cuts;      // k-1 quantile cut points
};

inline BucketResult bucketize(std::span<const double> values, int k) {
    if (k < 2) throw EstimationError("bucketize needs k >= 2");
    const size_t n = values.size();
    if (n < static_cast<size_t>(k)) throw EstimationError("fewer values than buckets");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::set<double>(sorted.begin(), sorted.end()).size() < static_cast<size_t>(k))
        throw EstimationError("fewer distinct values than buckets");

    BucketResult out;
    out.cuts.reserve(static_cast<size_t>(k - 1));
    for (int i = 1; i < k; ++i) {
        const size_t pos = static_cast<size_t>(
            std::ceil(static_cast<double>(n) * i / k)) - 1;
        out.cuts.push_back(sorted[pos]);
    }
    out.labels.reserve(n);
    for (double v : values) {
        int label = 0;
        for (double cut : out.cuts)
            if (v > cut) ++label;
        out.labels.push_back(label);
    }
    return out;
}

// Indicator helpers for the increase analyses: plain increases and increases
// in the top quartile of the delta distribution.
inline std::vector<int> increase_indicator(std::span<const double> deltas) {
    std::vector<int> out;
    out.reserve(deltas.size());
    for (double d : deltas) out.push_back(d > 0.0 ? 1 : 0);
    return out;
}

inline std::vector<int> top_quartile_indicator(std::span<const double> deltas) {
    auto buckets = bucketize(deltas, 4);
    std::vector<int> out;
    out.reserve(deltas.size());
    for (int label : buckets.labels) out.push_back(label == 3 ? 1 : 0);
    return out;
}

} // namespace revolv::econ
