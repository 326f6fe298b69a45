#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "revolv/econ.hpp"

using namespace revolv::econ;
using Catch::Approx;

namespace {

// Independent normal-equations + brute-force sandwich oracle.
struct OlsOracle {
    Eigen::VectorXd coef;
    Eigen::VectorXd se;
};

OlsOracle ols_oracle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                     const std::vector<int>& cluster_ids, int n_clusters) {
    OlsOracle out;
    const Eigen::Index n = x.rows(), k = x.cols();
    Eigen::MatrixXd xtx = x.transpose() * x;
    Eigen::MatrixXd xtx_inv = xtx.inverse();
    out.coef = xtx_inv * x.transpose() * y;
    Eigen::VectorXd e = y - x * out.coef;
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    for (int g = 0; g < n_clusters; ++g) {
        Eigen::VectorXd u = Eigen::VectorXd::Zero(k);
        for (Eigen::Index i = 0; i < n; ++i)
            if (cluster_ids[static_cast<size_t>(i)] == g) u += e[i] * x.row(i).transpose();
        meat += u * u.transpose();
    }
    const double gd = n_clusters;
    const double c = gd / (gd - 1.0) * (static_cast<double>(n) - 1.0) / static_cast<double>(n - k);
    Eigen::MatrixXd v = c * xtx_inv * meat * xtx_inv;
    out.se = v.diagonal().array().sqrt();
    return out;
}

Dataset random_dataset(std::mt19937_64& rng, Eigen::Index n, int k_x, int n_clusters) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset d;
    d.n = n;
    Eigen::MatrixXd x(n, k_x);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < k_x; ++j) x(i, j) = normal(rng);
    for (int j = 0; j < k_x; ++j) d.add_column("x" + std::to_string(j), x.col(j));
    d.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double mean = 0.3;
        for (int j = 0; j < k_x; ++j) mean += (j + 1) * 0.25 * x(i, j);
        d.y[i] = mean + normal(rng);
    }
    d.cluster.reserve(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        d.cluster.push_back("c" + std::to_string(i % n_clusters));
    return d;
}

} // namespace

TEST_CASE("ols: exact linear fit has zero residual error") {
    std::mt19937_64 rng(11);
    auto data = random_dataset(rng, 60, 3, 12);
    // overwrite y with an exact linear function of the regressors
    for (Eigen::Index i = 0; i < data.n; ++i)
        data.y[i] = 1.5 + 2.0 * data.columns[0][i] - 0.5 * data.columns[1][i] + 3.0 * data.columns[2][i];
    auto res = ols_clustered(build_design(data));
    CHECK(res.coefficient("intercept").value() == Approx(1.5).margin(1e-10));
    CHECK(res.coefficient("x0").value() == Approx(2.0).margin(1e-10));
    CHECK(res.coefficient("x1").value() == Approx(-0.5).margin(1e-10));
    CHECK(res.coefficient("x2").value() == Approx(3.0).margin(1e-10));
    CHECK(res.r_squared == Approx(1.0).margin(1e-12));
    for (Eigen::Index j = 0; j < res.se.size(); ++j) CHECK(res.se[j] == Approx(0.0).margin(1e-10));
}

TEST_CASE("ols: coefficients and clustered SEs match the brute-force oracle") {
    std::mt19937_64 rng(20240202);
    for (int rep = 0; rep < 20; ++rep) {
        auto data = random_dataset(rng, 200, 9, 25);  // + intercept = 10 columns
        auto dm = build_design(data);
        auto res = ols_clustered(dm);
        auto oracle = ols_oracle(dm.x, dm.y, dm.cluster_ids, dm.n_clusters);
        REQUIRE(res.coef.size() == oracle.coef.size());
        for (Eigen::Index j = 0; j < res.coef.size(); ++j) {
            CHECK(res.coef[j] == Approx(oracle.coef[j]).margin(1e-8));
            CHECK(res.se[j] == Approx(oracle.se[j]).margin(1e-10));
        }
    }
}

TEST_CASE("ols: every row its own cluster reproduces HC-style errors") {
    std::mt19937_64 rng(5);
    auto data = random_dataset(rng, 120, 4, 1);
    data.cluster.clear();
    for (Eigen::Index i = 0; i < data.n; ++i) data.cluster.push_back("r" + std::to_string(i));
    auto dm = build_design(data);
    auto res = ols_clustered(dm);

    // direct HC sandwich with the same small-sample factor
    Eigen::MatrixXd x = dm.x;
    Eigen::VectorXd beta = (x.transpose() * x).inverse() * x.transpose() * dm.y;
    Eigen::VectorXd e = dm.y - x * beta;
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(x.cols(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        meat += e[i] * e[i] * x.row(i).transpose() * x.row(i);
    const double n = static_cast<double>(x.rows()), k = static_cast<double>(x.cols());
    const double c = n / (n - 1.0) * (n - 1.0) / (n - k);
    Eigen::MatrixXd v = c * (x.transpose() * x).inverse() * meat * (x.transpose() * x).inverse();
    for (Eigen::Index j = 0; j < res.se.size(); ++j)
        CHECK(res.se[j] == Approx(std::sqrt(v(j, j))).margin(1e-10));
}

TEST_CASE("ols: fixed-effect estimates invariant to the reference level") {
    std::mt19937_64 rng(31);
    auto data = random_dataset(rng, 150, 3, 15);
    std::vector<std::string> group;
    for (Eigen::Index i = 0; i < data.n; ++i) group.push_back("g" + std::to_string(i % 5));
    for (Eigen::Index i = 0; i < data.n; ++i) data.y[i] += 0.7 * (i % 5);
    data.add_factor("grp", group);

    auto res_a = ols_clustered(build_design(data, {{"grp", "g0"}}));
    auto res_b = ols_clustered(build_design(data, {{"grp", "g3"}}));
    for (const char* name : {"x0", "x1", "x2"}) {
        CHECK(res_a.coefficient(name).value() == Approx(res_b.coefficient(name).value()).margin(1e-9));
        CHECK(res_a.std_error(name).value() == Approx(res_b.std_error(name).value()).margin(1e-9));
    }
}

TEST_CASE("ols: all-zero column is dropped without disturbing the rest") {
    std::mt19937_64 rng(32);
    auto data = random_dataset(rng, 100, 3, 10);
    auto res_before = ols_clustered(build_design(data));
    data.add_column("dead", Eigen::VectorXd::Zero(data.n));
    auto res_after = ols_clustered(build_design(data));
    REQUIRE(res_after.dropped_columns == std::vector<std::string>{"dead"});
    for (const char* name : {"intercept", "x0", "x1", "x2"}) {
        CHECK(res_after.coefficient(name).value() ==
              Approx(res_before.coefficient(name).value()).margin(1e-10));
    }
}

TEST_CASE("ols: error conditions") {
    std::mt19937_64 rng(33);
    auto data = random_dataset(rng, 50, 2, 1);  // single cluster
    CHECK_THROWS_AS(ols_clustered(build_design(data)), EstimationError);

    auto tiny = random_dataset(rng, 3, 4, 3);  // more columns than rows
    CHECK_THROWS_AS(ols_clustered(build_design(tiny)), EstimationError);
}

TEST_CASE("interaction column: definition and degenerate regime") {
    std::mt19937_64 rng(34);
    auto data = random_dataset(rng, 80, 2, 8);
    Eigen::VectorXd crisis = Eigen::VectorXd::Zero(data.n);
    for (Eigen::Index i = 0; i < data.n; ++i) crisis[i] = i % 3 == 0 ? 1.0 : 0.0;
    data.add_column("crisis", crisis);
    add_interaction(data, "x0", "crisis");
    REQUIRE(data.column_names.back() == "x0:crisis");
    const Eigen::VectorXd& inter = data.columns.back();
    for (Eigen::Index i = 0; i < data.n; ++i)
        CHECK(inter[i] == (crisis[i] == 1.0 ? data.columns[0][i] : 0.0));
    CHECK_THROWS_AS(add_interaction(data, "x0", "ghost"), EstimationError);
    auto res = ols_clustered(build_design(data));
    CHECK(res.coefficient("x0:crisis").has_value());

    // crisis identically zero: the interaction column is collinear and dropped
    auto flat = random_dataset(rng, 80, 2, 8);
    flat.add_column("crisis", Eigen::VectorXd::Zero(flat.n));
    add_interaction(flat, "x0", "crisis");
    auto res2 = ols_clustered(build_design(flat));
    CHECK(res2.dropped_columns == std::vector<std::string>{"crisis", "x0:crisis"});
}

// ---------------------------------------------------------------------------
// Probit
// ---------------------------------------------------------------------------

namespace {

Dataset six_row_probit() {
    Dataset d;
    d.n = 6;
    Eigen::VectorXd x(6);
    x << -2.0, -1.0, -0.5, 0.5, 1.0, 2.0;
    d.add_column("x", x);
    d.y.resize(6);
    d.y << 0, 0, 1, 0, 1, 1;
    d.cluster = {"a", "a", "b", "b", "c", "c"};
    return d;
}

double probit_ll(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& b) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double p = revolv::normal_cdf(x.row(i).dot(b));
        ll += y[i] > 0.5 ? std::log(p) : std::log(1.0 - p);
    }
    return ll;
}

} // namespace

TEST_CASE("probit: tiny instance matches grid-search oracle") {
    auto data = six_row_probit();
    auto dm = build_design(data);
    auto res = probit_clustered(dm);

    // refining grid search over (intercept, slope)
    double best_a = 0.0, best_b = 0.0, best_ll = -1e300;
    double center_a = 0.0, center_b = 0.0, width = 4.0;
    for (int round = 0; round < 12; ++round) {
        for (int ia = -20; ia <= 20; ++ia) {
            for (int ib = -20; ib <= 20; ++ib) {
                Eigen::VectorXd b(2);
                b << center_a + width * ia / 20.0, center_b + width * ib / 20.0;
                const double ll = probit_ll(dm.x, dm.y, b);
                if (ll > best_ll) {
                    best_ll = ll;
                    best_a = b[0];
                    best_b = b[1];
                }
            }
        }
        center_a = best_a;
        center_b = best_b;
        width /= 8.0;
    }
    CHECK(res.coefficient("intercept").value() == Approx(best_a).margin(1e-4));
    CHECK(res.coefficient("x").value() == Approx(best_b).margin(1e-4));
    CHECK(res.log_likelihood >= best_ll - 1e-8);

    // gradient at the optimum is numerically zero
    Eigen::VectorXd beta = res.coef;
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        Eigen::VectorXd up = beta, dn = beta;
        up[j] += h;
        dn[j] -= h;
        const double g = (probit_ll(dm.x, dm.y, up) - probit_ll(dm.x, dm.y, dn)) / (2.0 * h);
        CHECK(std::abs(g) < 1e-4);  // central-difference noise floor
    }
}

TEST_CASE("probit: AME of a continuous regressor matches finite differences") {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset d;
    d.n = 400;
    Eigen::VectorXd x1(d.n), x2(d.n);
    for (Eigen::Index i = 0; i < d.n; ++i) {
        x1[i] = normal(rng);
        x2[i] = normal(rng);
    }
    d.add_column("x1", x1);
    d.add_column("x2", x2);
    d.y.resize(d.n);
    for (Eigen::Index i = 0; i < d.n; ++i)
        d.y[i] = normal(rng) < 0.3 + 0.8 * x1[i] - 0.4 * x2[i] ? 1.0 : 0.0;
    for (Eigen::Index i = 0; i < d.n; ++i) d.cluster.push_back("c" + std::to_string(i % 40));
    auto dm = build_design(d);
    auto res = probit_clustered(dm, {"x1"});
    REQUIRE(res.marginal_effects.count("x1"));

    // finite difference of the mean predicted probability in x1
    const double h = 1e-5;
    Eigen::MatrixXd x = dm.x;
    Eigen::Index col = 0;
    for (size_t j = 0; j < res.names.size(); ++j)
        if (res.names[j] == "x1") col = static_cast<Eigen::Index>(j);
    double up = 0.0, dn = 0.0;
    for (Eigen::Index i = 0; i < d.n; ++i) {
        Eigen::RowVectorXd r = x.row(i);
        r[col] += h;
        up += revolv::normal_cdf(r.dot(res.coef));
        r[col] -= 2.0 * h;
        dn += revolv::normal_cdf(r.dot(res.coef));
    }
    const double fd = (up - dn) / (2.0 * h * static_cast<double>(d.n));
    CHECK(res.marginal_effects.at("x1") == Approx(fd).margin(1e-6));
}

TEST_CASE("probit: binary-regressor AME is the mean discrete difference") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset d;
    d.n = 300;
    Eigen::VectorXd t(d.n), x(d.n);
    for (Eigen::Index i = 0; i < d.n; ++i) {
        t[i] = i % 2 ? 1.0 : 0.0;
        x[i] = normal(rng);
    }
    d.add_column("treat", t);
    d.add_column("x", x);
    d.y.resize(d.n);
    for (Eigen::Index i = 0; i < d.n; ++i)
        d.y[i] = normal(rng) < -0.2 + 0.9 * t[i] + 0.5 * x[i] ? 1.0 : 0.0;
    for (Eigen::Index i = 0; i < d.n; ++i) d.cluster.push_back("c" + std::to_string(i % 30));
    auto dm = build_design(d);
    auto res = probit_clustered(dm, {"treat"});
    REQUIRE(res.marginal_effects.count("treat"));

    double sum = 0.0;
    Eigen::Index treat_col = 0;
    for (size_t j = 0; j < res.names.size(); ++j)
        if (res.names[j] == "treat") treat_col = static_cast<Eigen::Index>(j);
    for (Eigen::Index i = 0; i < d.n; ++i) {
        Eigen::RowVectorXd r = dm.x.row(i);
        r[treat_col] = 1.0;
        const double p1 = revolv::normal_cdf(r.dot(res.coef));
        r[treat_col] = 0.0;
        sum += p1 - revolv::normal_cdf(r.dot(res.coef));
    }
    CHECK(res.marginal_effects.at("treat") == Approx(sum / d.n).margin(1e-12));
    CHECK(res.pseudo_r_squared > 0.0);
    CHECK(res.pseudo_r_squared < 1.0);
}

TEST_CASE("probit: perfectly separating dummy errors with the column name") {
    Dataset d;
    d.n = 8;
    Eigen::VectorXd sep(8), x(8);
    d.y.resize(8);
    for (Eigen::Index i = 0; i < 8; ++i) {
        sep[i] = i < 4 ? 1.0 : 0.0;
        d.y[i] = i < 4 ? 1.0 : 0.0;
        x[i] = 0.1 * static_cast<double>(i);
    }
    d.add_column("sep", sep);
    d.add_column("x", x);
    d.cluster = {"a", "b", "c", "d", "a", "b", "c", "d"};
    try {
        probit_clustered(build_design(d));
        FAIL("expected separation error");
    } catch (const EstimationError& e) {
        CHECK(std::string(e.what()).find("sep") != std::string::npos);
    }
}

TEST_CASE("probit: null DGP coefficients stay within two SEs most of the time") {
    std::mt19937_64 rng(43);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.4);
    int covered = 0;
    const int reps = 100;
    for (int rep = 0; rep < reps; ++rep) {
        Dataset d;
        d.n = 250;
        Eigen::VectorXd x(d.n);
        for (Eigen::Index i = 0; i < d.n; ++i) x[i] = normal(rng);
        d.add_column("x", x);
        d.y.resize(d.n);
        for (Eigen::Index i = 0; i < d.n; ++i) d.y[i] = coin(rng) ? 1.0 : 0.0;  // independent of x
        d.cluster.clear();
        for (Eigen::Index i = 0; i < d.n; ++i) d.cluster.push_back("c" + std::to_string(i % 50));
        auto res = probit_clustered(build_design(d));
        const double b = res.coefficient("x").value();
        const double se = res.std_error("x").value();
        if (std::abs(b) <= 2.0 * se) ++covered;
    }
    CHECK(covered >= 93);  // nominal 95.45%
}

// ---------------------------------------------------------------------------
// Lender beta and buckets
// ---------------------------------------------------------------------------

TEST_CASE("lender beta: identity, zero-excess, and closed form") {
    std::vector<double> market{0.01, -0.02, 0.03, 0.004, -0.01, 0.02, 0.015, -0.005};
    CHECK(lender_beta(market, market) == Approx(1.0).margin(1e-14));

    std::vector<double> flat(market.size(), 0.0);
    CHECK(lender_beta(flat, market) == Approx(0.0).margin(1e-14));

    std::mt19937_64 rng(55);
    std::normal_distribution<double> normal(0.0, 0.02);
    std::vector<double> mkt(40), lender(40);
    for (size_t i = 0; i < mkt.size(); ++i) {
        mkt[i] = normal(rng);
        lender[i] = 0.7 * mkt[i] + normal(rng);
    }
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < mkt.size(); ++i) {
        mx += mkt[i];
        my += lender[i];
    }
    mx /= mkt.size();
    my /= mkt.size();
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < mkt.size(); ++i) {
        sxx += (mkt[i] - mx) * (mkt[i] - mx);
        sxy += (mkt[i] - mx) * (lender[i] - my);
    }
    CHECK(lender_beta(lender, mkt) == Approx(sxy / sxx).margin(1e-10));

    CHECK_THROWS_AS(lender_beta(flat, flat), EstimationError);  // zero market variance
    std::vector<double> short_series{0.01, 0.02};
    CHECK_THROWS_AS(lender_beta(short_series, short_series), EstimationError);
}

TEST_CASE("bucketize: uniform quartiles split evenly, boundaries go low") {
    std::vector<double> values;
    for (int i = 1; i <= 100; ++i) values.push_back(i);
    auto r = bucketize(values, 4);
    std::vector<int> counts(4, 0);
    for (int label : r.labels) counts[static_cast<size_t>(label)]++;
    CHECK(counts == std::vector<int>{25, 25, 25, 25});
    CHECK(r.cuts == std::vector<double>{25.0, 50.0, 75.0});
    // the boundary value itself sits in the lower bucket
    CHECK(r.labels[24] == 0);
    CHECK(r.labels[25] == 1);
}

TEST_CASE("bucketize: degenerate inputs error") {
    std::vector<double> same(10, 3.0);
    CHECK_THROWS_AS(bucketize(same, 4), EstimationError);
    std::vector<double> three{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(bucketize(three, 4), EstimationError);
}

TEST_CASE("bucketize: planted monotone relation gives increasing bucket means") {
    std::mt19937_64 rng(66);
    std::normal_distribution<double> normal(0.0, 0.1);
    std::vector<double> risk, ret;
    for (int i = 0; i < 500; ++i) {
        const double x = 0.01 + 0.0001 * i;
        risk.push_back(x);
        ret.push_back(5.0 * x + normal(rng) * 0.001);
    }
    auto buckets = bucketize(risk, 5);
    std::vector<double> mean(5, 0.0);
    std::vector<int> count(5, 0);
    for (size_t i = 0; i < ret.size(); ++i) {
        mean[static_cast<size_t>(buckets.labels[i])] += ret[i];
        count[static_cast<size_t>(buckets.labels[i])]++;
    }
    for (int b = 0; b < 5; ++b) mean[static_cast<size_t>(b)] /= count[static_cast<size_t>(b)];
    for (int b = 1; b < 5; ++b) CHECK(mean[static_cast<size_t>(b)] > mean[static_cast<size_t>(b - 1)]);
}

TEST_CASE("increase indicators") {
    std::vector<double> deltas{-0.5, 0.0, 0.25, 1.0, 2.0, -1.0, 0.75, 1.5};
    auto plain = increase_indicator(deltas);
    CHECK(plain == std::vector<int>{0, 0, 1, 1, 1, 0, 1, 1});
    auto top = top_quartile_indicator(deltas);
    // quartile cut at the 75th percentile value (1.0); strictly above it
    CHECK(top == std::vector<int>{0, 0, 0, 0, 1, 0, 0, 1});
}
