#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "revolv/returns.hpp"

using namespace revolv;
using Catch::Approx;

namespace {

Facility plain_facility(double commitment, int term_quarters, Quarter orig = Quarter(2006, 1)) {
    Facility f;
    f.facility_id = "F";
    f.borrower_id = "B";
    f.lender_id = "L";
    f.origination_quarter = orig;
    f.stated_maturity_quarter = orig + term_quarters;
    f.commitment = commitment;
    BaseRateOption libor;
    libor.kind = LoanType::libor;
    libor.libor_tenor = LiborTenor::m3;
    libor.spread = SpreadSpec::fixed(150.0);
    f.base_rate_options.push_back(libor);
    f.loan_path_id = "F";
    return f;
}

FacilityQuarterState usage(Quarter q, double outstanding) {
    FacilityQuarterState s;
    s.facility_id = "F";
    s.quarter = q;
    s.outstanding_borrowings = outstanding;
    return s;
}

QuarterPricing pricing_of(double spread_bps, double cf_bps, double af_bps, double uf_bps,
                          bool uf_active, Quarter q) {
    QuarterPricing p;
    p.facility_id = "F";
    p.quarter = q;
    p.chosen_loan_type = LoanType::libor;
    p.applicable_spread_bps = spread_bps;
    p.commitment_fee_bps = cf_bps;
    p.annual_fee_bps = af_bps;
    p.utilization_fee_bps = uf_bps;
    p.utilization_fee_active = uf_active;
    return p;
}

LoanPath single_path(const Facility& f, std::optional<Quarter> termination = std::nullopt) {
    std::map<std::string, Quarter> terms;
    if (termination) terms.emplace(f.facility_id, *termination);
    auto paths = build_loan_paths(std::span(&f, 1), terms);
    return paths.front();
}

} // namespace

TEST_CASE("ccf rules at quarter granularity") {
    CHECK(ccf(plain_facility(100, 3), CcfRule::gt12m_half_else_zero) == 0.0);   // 9 months
    CHECK(ccf(plain_facility(100, 4), CcfRule::gt12m_half_else_zero) == 0.0);   // 12 months
    CHECK(ccf(plain_facility(100, 5), CcfRule::gt12m_half_else_zero) == 0.5);   // 15 months
    CHECK(ccf(plain_facility(100, 5), CcfRule::gt14m_half_else_zero) == 0.5);
    CHECK(ccf(plain_facility(100, 4), CcfRule::gt14m_half_else_zero) == 0.0);
    CHECK(ccf(plain_facility(100, 3), CcfRule::always_half) == 0.5);

    // the 12- and 14-month thresholds can only disagree for maturities in
    // (12, 14] months, which quarter-granular terms never produce
    for (int term = 1; term <= 40; ++term) {
        auto f = plain_facility(100, term);
        const int months = f.stated_term_months();
        if (months <= 12 || months > 14)
            CHECK(ccf(f, CcfRule::gt12m_half_else_zero) == ccf(f, CcfRule::gt14m_half_else_zero));
    }
}

TEST_CASE("quarterly income components") {
    const Quarter q(2006, 2);
    auto f = plain_facility(400.0, 20);
    AmortizationSchedule empty_sched;

    // undrawn line, 25 bps commitment fee: 400 * 0.0025 / 4
    auto inc = quarterly_income(pricing_of(150.0, 25.0, 0.0, 0.0, false, q), f, usage(q, 0.0),
                                empty_sched);
    CHECK(inc.commitment_fee_income == Approx(0.25).margin(1e-15));
    CHECK(inc.spread_income == 0.0);
    CHECK(inc.total() == Approx(0.25).margin(1e-15));

    // utilization fee of 12.5 bps on drawn amounts while active
    auto inc2 = quarterly_income(pricing_of(150.0, 25.0, 0.0, 12.5, true, q), f, usage(q, 240.0),
                                 empty_sched);
    CHECK(inc2.utilization_fee_income == Approx(240.0 * 0.00125 / 4.0).margin(1e-15));
    CHECK(inc2.spread_income == Approx(240.0 * 0.0150 / 4.0).margin(1e-15));
    // unused availability: 400 - 240
    CHECK(inc2.commitment_fee_income == Approx(160.0 * 0.0025 / 4.0).margin(1e-15));

    // letters of credit and borrowing base shrink the commitment-fee base
    auto st = usage(q, 100.0);
    st.letters_of_credit = 40.0;
    st.borrowing_base = 320.0;
    auto inc3 = quarterly_income(pricing_of(150.0, 25.0, 0.0, 0.0, false, q), f, st, empty_sched);
    CHECK(inc3.commitment_fee_income == Approx((320.0 - 100.0 - 40.0) * 0.0025 / 4.0).margin(1e-15));

    // annual fee accrues on the whole commitment
    auto inc4 = quarterly_income(pricing_of(0.0, 0.0, 10.0, 0.0, false, q), f, usage(q, 50.0),
                                 empty_sched);
    CHECK(inc4.annual_fee_income == Approx(400.0 * 0.0010 / 4.0).margin(1e-15));
}

TEST_CASE("straight-line amortization over the stated maturity") {
    auto f = plain_facility(100.0, 20);
    f.fee_schedule.upfront_fee = UpfrontFee{1.0, f.origination_quarter};
    auto sched = amortization_schedule(single_path(f), UpfrontAmortization::straight_line_stated_maturity);
    CHECK(sched.at(f.origination_quarter) == Approx(0.05).margin(1e-15));
    CHECK(sched.at(f.origination_quarter + 19) == Approx(0.05).margin(1e-15));
    CHECK(sched.at(f.origination_quarter + 20) == 0.0);
    CHECK(sched.total() == Approx(1.0).margin(1e-12));
}

TEST_CASE("settle-to-path-end amortization accelerates on early termination") {
    auto f = plain_facility(100.0, 20);
    f.fee_schedule.upfront_fee = UpfrontFee{1.0, f.origination_quarter};
    // terminated after 8 quarters: last active quarter is orig + 7
    auto path = single_path(f, f.origination_quarter + 7);
    auto sched = amortization_schedule(path, UpfrontAmortization::settle_to_min_maturity_or_path_end);
    CHECK(sched.at(f.origination_quarter) == Approx(1.0 / 8.0).margin(1e-15));
    CHECK(sched.at(f.origination_quarter + 7) == Approx(1.0 / 8.0).margin(1e-15));
    CHECK(sched.at(f.origination_quarter + 8) == 0.0);
    CHECK(sched.total() == Approx(1.0).margin(1e-12));

    // under the base scheme the unamortized remainder is simply lost
    auto base = amortization_schedule(path, UpfrontAmortization::straight_line_stated_maturity);
    CHECK(base.at(f.origination_quarter) == Approx(0.05).margin(1e-15));
    CHECK(base.total() == Approx(8.0 * 0.05).margin(1e-12));
}

TEST_CASE("while-unamended amortization stops at the amendment") {
    std::vector<Facility> chain;
    chain.push_back(plain_facility(100.0, 20));
    chain[0].fee_schedule.upfront_fee = UpfrontFee{1.0, chain[0].origination_quarter};
    Facility amendment = plain_facility(120.0, 20, chain[0].origination_quarter + 5);
    amendment.facility_id = "F2";
    amendment.predecessor_id = "F";
    chain.push_back(amendment);

    auto paths = build_loan_paths(chain);
    REQUIRE(paths.size() == 1);

    auto sched = amortization_schedule(paths.front(), UpfrontAmortization::while_unamended);
    // amortization runs only through quarter 4; the rate stays fee / stated term
    CHECK(sched.at(chain[0].origination_quarter + 4) == Approx(0.05).margin(1e-15));
    CHECK(sched.at(chain[0].origination_quarter + 5) == 0.0);
    CHECK(sched.total() == Approx(5.0 * 0.05).margin(1e-12));

    // the base scheme keeps amortizing through the amendment, up to maturity
    auto base = amortization_schedule(paths.front(), UpfrontAmortization::straight_line_stated_maturity);
    CHECK(base.at(chain[0].origination_quarter + 12) == Approx(0.05).margin(1e-15));
    CHECK(base.total() == Approx(1.0).margin(1e-12));
}

TEST_CASE("zero-length amortization window recognizes the fee at once") {
    auto f = plain_facility(100.0, 20);
    // fee paid in the facility's last contract quarter
    f.fee_schedule.upfront_fee = UpfrontFee{0.8, f.origination_quarter + 19};
    auto path = single_path(f, f.origination_quarter + 3);  // path dead long before
    auto sched = amortization_schedule(path, UpfrontAmortization::settle_to_min_maturity_or_path_end);
    CHECK(sched.at(f.origination_quarter + 19) == Approx(0.8).margin(1e-15));
    CHECK(sched.total() == Approx(0.8).margin(1e-12));
}

TEST_CASE("amortization conservation over randomized paths") {
    std::mt19937_64 rng(777);
    std::uniform_real_distribution<double> fee_d(0.05, 3.0), unif(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        std::vector<Facility> chain;
        const int members = 1 + static_cast<int>(rng() % 3);
        Quarter orig(2005 + static_cast<int>(rng() % 4), 1 + static_cast<int>(rng() % 4));
        std::optional<std::string> pred;
        double total_fees = 0.0;
        for (int m = 0; m < members; ++m) {
            const int term = 2 + static_cast<int>(rng() % 24);
            Facility f = plain_facility(100.0, term, orig);
            f.facility_id = "F" + std::to_string(m);
            f.predecessor_id = pred;
            if (unif(rng) < 0.8) {
                const double fee = fee_d(rng);
                const int paid_offset = static_cast<int>(rng() % static_cast<unsigned>(term));
                f.fee_schedule.upfront_fee = UpfrontFee{fee, orig + paid_offset};
                total_fees += fee;
            }
            pred = f.facility_id;
            chain.push_back(f);
            orig = orig + 1 + static_cast<int>(rng() % 6);
        }
        std::map<std::string, Quarter> terminations;
        if (unif(rng) < 0.4)
            terminations.emplace(chain.back().facility_id,
                                 chain.back().origination_quarter + static_cast<int>(rng() % 20));
        auto paths = build_loan_paths(chain, terminations);
        REQUIRE(paths.size() == 1);
        for (auto scheme : {UpfrontAmortization::straight_line_stated_maturity,
                            UpfrontAmortization::settle_to_min_maturity_or_path_end,
                            UpfrontAmortization::while_unamended}) {
            auto sched = amortization_schedule(paths.front(), scheme);
            CHECK(sched.total() <= total_fees + 1e-12);
            for (const auto& [q, v] : sched.by_quarter) CHECK(v >= 0.0);
        }
    }
}

TEST_CASE("return denominator and exclusion rules") {
    ReturnPolicy policy;

    // 9-month facility, undrawn: denominator zero under the one-year rule
    auto f_short = plain_facility(200.0, 3);
    IncomeComponents inc;
    inc.commitment_fee_income = 0.125;
    auto rec = compute_return(inc, usage(Quarter(2006, 2), 0.0), f_short, policy, 0.0);
    CHECK_FALSE(rec.defined);

    // the always-half robustness rule makes the same record finite
    ReturnPolicy always;
    always.ccf_rule = CcfRule::always_half;
    rec = compute_return(inc, usage(Quarter(2006, 2), 0.0), f_short, always, 0.0);
    REQUIRE(rec.defined);
    CHECK(rec.denominator == Approx(100.0));
    CHECK(rec.promised_return == Approx(0.125 / 100.0));
}

TEST_CASE("return decomposition and markdown identities") {
    ReturnPolicy policy;
    auto f = plain_facility(400.0, 20);
    IncomeComponents inc;
    inc.spread_income = 0.9;
    inc.commitment_fee_income = 0.1;
    inc.annual_fee_income = 0.05;
    inc.utilization_fee_income = 0.075;
    inc.upfront_amortized = 0.0125;

    auto st = usage(Quarter(2006, 3), 240.0);
    auto rec = compute_return(inc, st, f, policy, 0.12);
    REQUIRE(rec.defined);
    CHECK(rec.denominator == Approx(240.0 + 0.5 * 160.0));

    const double annual_component = inc.annual_fee_income / rec.denominator;
    CHECK(rec.promised_return ==
          Approx(rec.promised_aisd_return + rec.promised_aisu_return - annual_component)
              .margin(1e-15));

    // expected = promised * (1 - 0.652 * PD) at the default 34.8% recovery
    const double factor = 1.0 - 0.12 * (1.0 - 0.348);
    CHECK(rec.expected_return.value() == Approx(rec.promised_return * factor).margin(1e-15));
    CHECK(rec.expected_aisd_return.value() ==
          Approx(rec.promised_aisd_return * factor).margin(1e-15));

    // pd = 0 collapses expected to promised
    auto rec0 = compute_return(inc, st, f, policy, 0.0);
    CHECK(rec0.expected_return.value() == rec0.promised_return);

    // missing pd leaves expected fields missing
    auto recm = compute_return(inc, st, f, policy, std::nullopt);
    CHECK_FALSE(recm.expected_return.has_value());
    CHECK(recm.defined);
}

TEST_CASE("returns are homogeneous of degree zero in currency scale") {
    ReturnPolicy policy;
    for (double scale : {0.5, 2.0, 128.0}) {
        auto f1 = plain_facility(400.0, 20);
        auto f2 = plain_facility(400.0 * scale, 20);
        IncomeComponents a;
        a.spread_income = 0.9;
        a.commitment_fee_income = 0.1;
        IncomeComponents b = a;
        b.spread_income *= scale;
        b.commitment_fee_income *= scale;
        auto r1 = compute_return(a, usage(Quarter(2006, 3), 100.0), f1, policy, 0.05);
        auto r2 = compute_return(b, usage(Quarter(2006, 3), 100.0 * scale), f2, policy, 0.05);
        REQUIRE(r1.defined);
        REQUIRE(r2.defined);
        CHECK(r1.promised_return == Approx(r2.promised_return).margin(1e-15));
        CHECK(r1.expected_return.value() == Approx(r2.expected_return.value()).margin(1e-15));
    }
}

TEST_CASE("lc_reduces_unused policy switch shrinks the denominator") {
    auto f = plain_facility(400.0, 20);
    auto st = usage(Quarter(2006, 3), 100.0);
    st.letters_of_credit = 60.0;
    IncomeComponents inc;
    inc.spread_income = 0.375;

    ReturnPolicy base;
    auto r1 = compute_return(inc, st, f, base, std::nullopt);
    CHECK(r1.denominator == Approx(100.0 + 0.5 * 300.0));

    ReturnPolicy alt;
    alt.lc_reduces_unused = true;
    auto r2 = compute_return(inc, st, f, alt, std::nullopt);
    CHECK(r2.denominator == Approx(100.0 + 0.5 * 240.0));
}

TEST_CASE("annualization") {
    CHECK(annualize(0.01, Annualization::times4) == Approx(0.04).margin(1e-15));
    CHECK(annualize(0.01, Annualization::geometric) ==
          Approx(std::pow(1.01, 4.0) - 1.0).margin(1e-15));
}

TEST_CASE("univariate annualization: constant series closed form") {
    std::vector<UnivariateObs> obs;
    const double r = 0.004;
    for (int t = 0; t < 26; ++t)
        for (int i = 0; i < 3; ++i) obs.push_back({Quarter(2006, 1) + t, 0, r});
    auto out = annualize_univariate(obs);
    REQUIRE(out.at(0).has_value());
    CHECK(*out.at(0) == Approx(std::pow(1.0 + r, 4.0) - 1.0).margin(1e-12));
}

TEST_CASE("univariate annualization: single quarter, zero return") {
    std::vector<UnivariateObs> obs{{Quarter(2006, 1), 2, 0.0}};
    auto out = annualize_univariate(obs);
    CHECK(*out.at(2) == Approx(0.0).margin(1e-15));
}

TEST_CASE("univariate annualization: per-quarter cross-facility means compound") {
    // bucket with facilities 0.00 and 0.02 in q1 (mean 0.01), 0.03 in q2
    std::vector<UnivariateObs> obs{
        {Quarter(2006, 1), 0, 0.00},
        {Quarter(2006, 1), 0, 0.02},
        {Quarter(2006, 2), 0, 0.03},
    };
    auto out = annualize_univariate(obs);
    const double cumulative = 1.01 * 1.03;
    CHECK(*out.at(0) == Approx(std::pow(cumulative, 2.0) - 1.0).margin(1e-12));
}
