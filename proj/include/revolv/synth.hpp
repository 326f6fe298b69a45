#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "revolv/contract.hpp"
#include "revolv/market.hpp"
#include "revolv/panel.hpp"
#include "revolv/rng.hpp"

namespace revolv::synth {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Synthetic facility-quarter panels with planted effects. The return DGP is
//
//   E[expected annualized return, pct] = alpha + slope * risk_{t}
//       + interaction * risk_{t} * crisis_{t} + crisis_level * crisis_{t}
//       + gamma' F_{t-1} + borrower + facility + quarter effects + noise
//
// realized through the contract machinery itself: each facility carries a
// quarters-since-origination pricing schedule whose cells are solved so that
// the return engine reproduces the target exactly (up to 1 bp rounding).
struct SyntheticConfig {
    uint64_t seed = 42;
    int n_firms = 150;
    int n_quarters = 26;
    Quarter start_quarter = Quarter(2006, 1);
    std::array<double, 3> facilities_per_firm_probs = {0.35, 0.40, 0.25};  // P(1), P(2), P(3)

    double planted_risk_slope = 7.648;        // pct return per unit daily stddev
    double planted_crisis_interaction = 0.0;  // added slope inside the crisis window
    double crisis_level_shift = -0.3;         // level effect of the crisis dummy, pct
    double alpha_pct = 5.0;                   // DGP intercept, pct

    double usage_risk_correlation = 0.35;     // latent usage-risk coupling
    double prob_zero_usage = 0.45;            // share of undrawn facility-quarters

    bool crisis_shift_enabled = true;
    double crisis_risk_shift = 0.015;         // added daily stddev at the crisis peak
    pipeline::CrisisWindow crisis;            // expectation-quarter window

    double noise_scale_pct = 0.35;            // iid return noise (sd, pct)
    double facility_effect_scale_pct = 0.10;
    double borrower_effect_scale_pct = 0.30;
    double quarter_effect_scale_pct = 0.15;

    // "schedule": quarters-since-origination grids carrying the planted
    // targets. "fundamentals": demo-style grids on H1/V1/G1/A1 criteria with
    // fixed-spread contracts mixed in (no exact plant).
    std::string grid_mode = "schedule";

    ControlPolicy control_policy = ControlPolicy::rolling_avg;

    void validate() const {
        if (n_firms < 1) throw ConfigError("n_firms must be positive");
        if (n_quarters < 2) throw ConfigError("n_quarters must be at least 2");
        if (usage_risk_correlation < -1.0 || usage_risk_correlation > 1.0)
            throw ConfigError("usage_risk_correlation must lie in [-1, 1]");
        if (prob_zero_usage < 0.0 || prob_zero_usage >= 1.0)
            throw ConfigError("prob_zero_usage must lie in [0, 1)");
        double psum = 0.0;
        for (double p : facilities_per_firm_probs) {
            if (p < 0.0) throw ConfigError("facility count probabilities must be nonnegative");
            psum += p;
        }
        if (std::abs(psum - 1.0) > 1e-9) throw ConfigError("facility count probabilities must sum to 1");
        if (grid_mode != "schedule" && grid_mode != "fundamentals")
            throw ConfigError("grid_mode must be 'schedule' or 'fundamentals'");
        if (noise_scale_pct < 0.0) throw ConfigError("noise_scale_pct must be nonnegative");
    }
};

struct TrueParams {
    double alpha = 0.0;
    double slope = 0.0;
    double interaction = 0.0;
    double crisis_level = 0.0;
    std::map<std::string, double> gamma;  // control coefficients in the DGP
};

struct Bundle {
    Panel panel;
    SyntheticConfig config;
    TrueParams params;
    int clamped_targets = 0;  // return targets floored at the minimum
};

namespace detail {

constexpr int kBurnIn = 8;  // quarters of firm history before the panel start

// Approximate short-rate path for the sample era: high and rising into 2007,
// collapsing through 2008, near zero afterwards.
inline double base_libor_3m(Quarter q) {
    const int idx = q - Quarter(2006, 1);
    if (idx < -8) return 3.0;
    if (idx < 0) return 3.0 + 0.3 * (idx + 8);                   // 2004-2005 tightening
    if (idx <= 7) return 5.0 + 0.05 * idx;                       // 2006-2007 plateau
    if (idx <= 12) return 5.35 - 0.95 * (idx - 7);               // 2008 collapse
    return std::max(0.3, 0.9 - 0.05 * (idx - 12));               // 2009+ floor
}

inline double crisis_risk_weight(Quarter q) {
    // ramps over 2007Q4..2008Q4, decays to zero by 2009Q4
    const int up = q - Quarter(2007, 3);
    if (up <= 0) return 0.0;
    if (up <= 5) return up / 5.0;
    const int down = q - Quarter(2008, 4);
    if (down <= 4) return 1.0 - down / 4.0;
    return 0.0;
}

struct FirmDraw {
    double mu_risk = 0.03;
    double cshoq = 30.0;
    double leverage_frac = 0.3;     // debt / assets
    double liabilities_frac = 0.55; // ltq / atq
    double tangibility = 0.3;
    double current_ratio = 1.9;
    double crisis_sensitivity = 1.0;
    bool dividend_payer = true;
    bool rated = true;
};

} // namespace detail

inline Bundle generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    Bundle bundle;
    bundle.config = cfg;
    Panel& panel = bundle.panel;
    Rng root(cfg.seed);

    const Quarter start = cfg.start_quarter;
    const Quarter first_q = start - detail::kBurnIn;
    const Quarter last_q = start + (cfg.n_quarters - 1);  // inclusive

    // ---- rates -------------------------------------------------------------
    {
        Rng rng = root.fork("rates");
        for (Quarter q = first_q - 4; q <= last_q; ++q) {
            RateEnvironment env;
            env.quarter = q;
            const double l3 = std::max(0.25, detail::base_libor_3m(q) + rng.uniform(-0.08, 0.08));
            env.libor_3m = l3;
            env.libor_1m = std::max(0.15, l3 - 0.10);
            env.libor_2m = std::max(0.20, l3 - 0.05);
            env.libor_6m = l3 + 0.12;
            env.prime = l3 + 3.0;
            env.fed_funds = std::max(0.10, env.libor_1m - 0.15);
            env.tbill_3m = std::max(0.05, l3 - 0.40);
            const bool crash = q >= Quarter(2007, 4) && q <= Quarter(2009, 1);
            const bool rebound = q >= Quarter(2009, 2) && q <= Quarter(2009, 4);
            double mkt = 0.02 + rng.uniform(-0.02, 0.02);
            if (crash) mkt = -0.055 + rng.uniform(-0.03, 0.03);
            if (rebound) mkt = 0.09 + rng.uniform(-0.02, 0.02);
            env.market_index_return = mkt;
            panel.rates.emplace(q, env);
        }
    }

    // ---- firms ---------------------------------------------------------------
    std::vector<detail::FirmDraw> draws(static_cast<size_t>(cfg.n_firms));
    std::map<std::string, std::map<Quarter, double>> risk_path;  // daily stddev
    {
        for (int j = 0; j < cfg.n_firms; ++j) {
            Rng rng = root.fork("firm", static_cast<uint64_t>(j));
            const std::string firm_id = "FIRM-" + std::to_string(j);
            detail::FirmDraw d;
            d.mu_risk = rng.uniform(0.012, 0.05);
            d.cshoq = rng.uniform(10.0, 80.0);
            d.leverage_frac = std::clamp(0.18 + 1.2 * d.mu_risk + rng.uniform(-0.04, 0.04), 0.10, 0.55);
            d.liabilities_frac = std::max(d.leverage_frac + 0.12, 0.45 + rng.uniform(0.0, 0.2));
            d.tangibility = rng.uniform(0.12, 0.45);
            d.current_ratio = rng.uniform(1.3, 2.6);
            d.crisis_sensitivity = rng.uniform(0.6, 1.4);
            d.dividend_payer = rng.bernoulli(0.6);
            d.rated = rng.bernoulli(0.92);
            draws[static_cast<size_t>(j)] = d;

            // risk: positive AR(1) around the firm mean, crisis shift added
            double base = d.mu_risk + rng.uniform_sd(0.004);
            double atq = std::exp(rng.uniform(std::log(150.0), std::log(9000.0)));
            // market-cap path extended 4 quarters before the first emitted
            // quarter so trailing twelve-month returns exist from the start
            double mcap = 1.7 * atq * (1.0 - d.liabilities_frac);
            std::map<Quarter, double> mcap_path;
            for (Quarter q = first_q - 4; q <= last_q; ++q) {
                const auto& env = panel.rates.at(q);
                const double rf = env.tbill_3m / 400.0;
                const double ret = rf + 1.0 * (env.market_index_return - rf) + rng.uniform_sd(0.05);
                mcap = std::max(atq * 0.02, mcap * (1.0 + ret));
                mcap_path[q] = mcap;
            }

            for (Quarter q = first_q; q <= last_q; ++q) {
                base = d.mu_risk + 0.8 * (base - d.mu_risk) + rng.uniform_sd(0.004);
                base = std::clamp(base, 0.006, 0.12);
                double risk = base;
                if (cfg.crisis_shift_enabled)
                    risk += cfg.crisis_risk_shift * detail::crisis_risk_weight(q) * d.crisis_sensitivity;
                risk = std::clamp(risk, 0.006, 0.15);
                risk_path[firm_id][q] = risk;

                FirmQuarter fq;
                fq.firm_id = firm_id;
                fq.quarter = q;
                atq *= 1.0 + 0.005 + rng.uniform_sd(0.01);
                const double debt = d.leverage_frac * atq;
                const double ltq = d.liabilities_frac * atq;
                const double actq = 0.30 * atq * (1.0 + rng.uniform_sd(0.05));
                const double profitability =
                    std::clamp(0.05 - 0.35 * d.mu_risk + rng.uniform_sd(0.004) -
                                   (cfg.crisis_shift_enabled ? 0.008 * detail::crisis_risk_weight(q) : 0.0),
                               0.008, 0.09);
                const double oibdpq = profitability * atq;
                const double ppentq = d.tangibility * atq;
                const double cheq = std::max(0.02 * atq, 0.08 * atq * (1.0 + rng.uniform_sd(0.2)));
                const double xintq = debt * 0.015 + 0.05;
                const double ibq = oibdpq * 0.45 - xintq * 0.8;
                fq.fields["atq"] = atq;
                fq.fields["ltq"] = ltq;
                fq.fields["actq"] = actq;
                fq.fields["lctq"] = actq / d.current_ratio;
                fq.fields["dlcq"] = 0.12 * debt;
                fq.fields["dlttq"] = 0.88 * debt;
                fq.fields["oibdpq"] = oibdpq;
                fq.fields["xintq"] = xintq;
                fq.fields["capxq"] = std::max(0.001 * atq, atq * (0.010 + rng.uniform_sd(0.003)));
                fq.fields["ppentq"] = ppentq;
                fq.fields["txditcq"] = 0.02 * atq;
                fq.fields["pstkl"] = 0.01 * atq;
                fq.fields["cheq"] = cheq;
                fq.fields["chq"] = 0.7 * cheq;
                fq.fields["ibq"] = ibq;
                fq.fields["dpq"] = 0.025 * ppentq;
                fq.fields["seqq"] = atq - ltq;
                fq.fields["ceqq"] = atq - ltq - 0.01 * atq;
                fq.fields["dvq"] = d.dividend_payer ? std::max(0.0, ibq * 0.25) : 0.0;
                fq.fields["txpq"] = 0.012 * atq * (1.0 + rng.uniform_sd(0.1));
                fq.fields["req"] = 0.25 * atq * (1.0 + rng.uniform_sd(0.1));
                fq.fields["piq"] = ibq * 1.35;
                fq.fields["saleq"] = 0.27 * atq * (1.0 + rng.uniform_sd(0.08));
                fq.fields["intanq"] = 0.12 * atq;

                const double mcap_now = mcap_path.at(q);
                fq.fields["cshoq"] = d.cshoq;
                fq.fields["prccq"] = mcap_now / d.cshoq;
                fq.daily_return_stddev_12m = risk;
                fq.monthly_return_stddev_12m_annualized = risk * std::sqrt(252.0);
                fq.stock_return_12m = mcap_now / mcap_path.at(q - 4) - 1.0;
                if (d.rated) {
                    const int ordinal =
                        std::clamp(static_cast<int>(std::lround(3.0 + 160.0 * risk +
                                                                rng.uniform(-1.5, 1.5))),
                                   2, 20);
                    fq.rating = ordinal;
                }
                panel.firms[firm_id].emplace(q, std::move(fq));
            }
        }
    }

    // standardize risk across the emitted panel quarters for the usage coupling
    double risk_mean = 0.0, risk_sd = 1.0;
    {
        double sum = 0.0, sum2 = 0.0;
        int n = 0;
        for (const auto& [firm, path] : risk_path) {
            for (const auto& [q, v] : path) {
                if (q < start) continue;
                sum += v;
                sum2 += v * v;
                ++n;
            }
        }
        if (n > 1) {
            risk_mean = sum / n;
            const double var = std::max(1e-12, sum2 / n - risk_mean * risk_mean);
            risk_sd = std::sqrt(var);
        }
        if (risk_sd <= 1e-9 && cfg.usage_risk_correlation != 0.0)
            throw ConfigError("usage_risk_correlation needs non-degenerate risk variance");
    }

    // ---- lenders ----------------------------------------------------------
    const int n_lenders = std::max(6, cfg.n_firms / 12);
    {
        for (int l = 0; l < n_lenders; ++l) {
            Rng rng = root.fork("lender", static_cast<uint64_t>(l));
            const double beta = rng.uniform(0.6, 1.5);
            for (Quarter q = start; q <= last_q; ++q) {
                const auto& env = panel.rates.at(q);
                const double rf = env.tbill_3m / 400.0;
                panel.lender_returns["LENDER-" + std::to_string(l)][q] =
                    rf + beta * (env.market_index_return - rf) + rng.uniform_sd(0.01);
            }
        }
    }

    // ---- facilities and usage ----------------------------------------------
    struct FacilityPlan {
        Facility facility;
        Quarter first_state;  // inclusive
        Quarter last_state;   // inclusive
        std::map<Quarter, FacilityQuarterState> states;
        int firm_index = 0;
    };
    std::vector<FacilityPlan> plans;
    const double rho = cfg.usage_risk_correlation;
    {
        int facility_counter = 0;
        for (int j = 0; j < cfg.n_firms; ++j) {
            Rng rng = root.fork("facilities", static_cast<uint64_t>(j));
            const std::string firm_id = "FIRM-" + std::to_string(j);
            const double u = rng.uniform();
            int count = 1;
            if (u > cfg.facilities_per_firm_probs[0]) count = 2;
            if (u > cfg.facilities_per_firm_probs[0] + cfg.facilities_per_firm_probs[1]) count = 3;

            for (int k = 0; k < count; ++k) {
                FacilityPlan plan;
                plan.firm_index = j;
                Facility& f = plan.facility;
                f.facility_id = "FAC-" + std::to_string(facility_counter++);
                f.borrower_id = firm_id;
                f.lender_id = "LENDER-" + std::to_string(rng.uniform_int(0, n_lenders - 1));
                f.origination_quarter = start + rng.uniform_int(0, std::min(9, cfg.n_quarters - 2));
                const int term = rng.uniform_int(8, 22);
                f.stated_maturity_quarter = f.origination_quarter + term;
                f.commitment = std::round(std::exp(rng.uniform(std::log(40.0), std::log(900.0))));
                f.secured = rng.bernoulli(0.67);
                f.syndicated = rng.bernoulli(0.90);
                f.restructuring_purpose = rng.bernoulli(0.50);
                f.loan_path_id = f.facility_id;
                f.default_terms.default_margin_bps = 200.0;

                plan.first_state = std::max(f.origination_quarter, start);
                plan.last_state = std::min(f.stated_maturity_quarter - 1, last_q);

                // usage path: persistent latent state coupled to firm risk
                double latent = rng.normal();
                for (Quarter q = plan.first_state; q <= plan.last_state; ++q) {
                    latent = 0.7 * latent + 0.7141428 * rng.normal();
                    const double zr = (risk_path[firm_id].at(q) - risk_mean) / risk_sd;
                    const double combined = rho * zr + std::sqrt(1.0 - rho * rho) * latent;
                    FacilityQuarterState st;
                    st.facility_id = f.facility_id;
                    st.quarter = q;
                    if (rng.bernoulli(cfg.prob_zero_usage)) {
                        st.outstanding_borrowings = 0.0;
                    } else {
                        const double ratio = std::clamp(0.30 + 0.18 * combined, 0.06, 0.95);
                        st.outstanding_borrowings = std::round(ratio * f.commitment * 100.0) / 100.0;
                    }
                    // occasional covenant breach; always waived in schedule
                    // mode so pricing stays penalty-free
                    if (rng.bernoulli(0.02)) {
                        st.technical_default = true;
                        st.waiver_granted = cfg.grid_mode == "schedule" ? true : rng.bernoulli(0.83);
                    }
                    plan.states.emplace(q, st);
                }
                plans.push_back(std::move(plan));
            }
        }
    }

    // ---- pricing -------------------------------------------------------------
    bundle.params.alpha = cfg.alpha_pct;
    bundle.params.slope = cfg.planted_risk_slope;
    bundle.params.interaction = cfg.planted_crisis_interaction;
    bundle.params.crisis_level = cfg.crisis_level_shift;
    bundle.params.gamma = {{"profitability", -4.0},
                           {"current_ratio", -0.3},
                           {"tangibility", -1.0},
                           {"size", -0.1}};

    if (cfg.grid_mode == "schedule") {
        Rng noise_rng = root.fork("return-noise");
        Rng effect_rng = root.fork("effects");
        std::map<Quarter, double> quarter_effect;
        for (Quarter q = start; q <= last_q; ++q)
            quarter_effect[q] = effect_rng.uniform_sd(cfg.quarter_effect_scale_pct);
        std::vector<double> borrower_effect(static_cast<size_t>(cfg.n_firms));
        for (int j = 0; j < cfg.n_firms; ++j)
            borrower_effect[static_cast<size_t>(j)] = effect_rng.uniform_sd(cfg.borrower_effect_scale_pct);

        for (auto& plan : plans) {
            Facility& f = plan.facility;
            const double facility_effect = effect_rng.uniform_sd(cfg.facility_effect_scale_pct);
            const int term = f.stated_term_quarters();

            auto grid = std::make_shared<dsl::PricingGrid>();
            grid->criteria.push_back(dsl::parse_criterion("qtrsorig"));
            std::vector<double> thresholds;
            for (int k = 0; k + 1 < term; ++k) thresholds.push_back(k + 0.5);
            grid->thresholds.push_back(thresholds);
            grid->cells.assign(static_cast<size_t>(term), dsl::GridRow{});
            for (auto& cell : grid->cells) {
                cell.libor_spread_bps = 150.0;
                cell.commitment_fee_bps = 25.0;
            }

            for (Quarter r = plan.first_state; r <= plan.last_state; ++r) {
                const Quarter t = r - 1;
                const auto& st = plan.states.at(r);
                auto controls = pipeline::controls_at(panel, f.borrower_id, t - 1, cfg.control_policy);
                auto pd = pipeline::pd_at(panel, f.borrower_id, t);
                const double risk = risk_path[f.borrower_id].at(t);
                const bool crisis = cfg.crisis.contains(t);

                double target = cfg.alpha_pct + cfg.planted_risk_slope * risk +
                                (crisis ? cfg.planted_crisis_interaction * risk +
                                              cfg.crisis_level_shift
                                        : 0.0) +
                                borrower_effect[static_cast<size_t>(plan.firm_index)] +
                                facility_effect + quarter_effect.at(r) +
                                noise_rng.uniform_sd(cfg.noise_scale_pct);
                for (const auto& [name, gamma] : bundle.params.gamma) {
                    auto v = pipeline::control_value(controls, name);
                    if (v) target += gamma * *v;
                }
                if (target < 0.05) {
                    target = 0.05;
                    bundle.clamped_targets++;
                }

                // invert the return engine: expected -> promised -> income -> bps
                const double markdown = 1.0 - pd.value_or(0.0) * 0.652;
                const double promised_quarterly = target / 100.0 / 4.0 / markdown;
                const double out = st.outstanding_borrowings;
                const double avail = f.commitment - out;
                const double denominator = out + 0.5 * avail;
                const double needed_bps_dollars = 4.0e4 * promised_quarterly * denominator;

                double spread_bps = 150.0, cf_bps = 25.0;
                if (out <= 0.0) {
                    cf_bps = needed_bps_dollars / avail;
                } else {
                    cf_bps = std::min(25.0, needed_bps_dollars / (out + avail));
                    spread_bps = (needed_bps_dollars - cf_bps * avail) / out;
                    if (spread_bps > 1500.0) {
                        // thin drawdowns: charge one uniform rate instead
                        cf_bps = needed_bps_dollars / (out + avail);
                        spread_bps = cf_bps;
                    }
                }
                const int cell = r - f.origination_quarter;
                grid->cells[static_cast<size_t>(cell)].libor_spread_bps = std::round(spread_bps);
                grid->cells[static_cast<size_t>(cell)].commitment_fee_bps = std::round(cf_bps);
            }

            BaseRateOption libor;
            libor.kind = LoanType::libor;
            libor.libor_tenor = LiborTenor::m3;
            libor.spread = SpreadSpec::grid(dsl::GridColumn::libor_spread);
            f.base_rate_options.push_back(libor);
            f.fee_schedule.commitment_fee = SpreadSpec::grid(dsl::GridColumn::commitment_fee);
            f.pricing_grid = grid;
        }
    } else {
        // fundamentals mode: pricing tied to accounting ratios, ratings, and
        // usage, the way sample contracts do it; no exact plant.
        for (size_t plan_idx = 0; plan_idx < plans.size(); ++plan_idx) {
            auto& plan = plans[plan_idx];
            Rng rng = root.fork("demo-pricing", static_cast<uint64_t>(plan_idx));
            Facility& f = plan.facility;
            const std::string firm_id = f.borrower_id;
            const double orig_risk =
                risk_path[firm_id].count(f.origination_quarter)
                    ? risk_path[firm_id][f.origination_quarter]
                    : draws[static_cast<size_t>(plan.firm_index)].mu_risk;

            const double roll = rng.uniform();
            auto grid = std::make_shared<dsl::PricingGrid>();
            bool use_grid = true;
            if (roll < 0.40) {
                use_grid = false;  // fixed spreads tied to risk at origination
            } else if (roll < 0.70) {
                grid->criteria.push_back(dsl::parse_criterion("(dlcq+dlttq)/oibdpq"));
                grid->thresholds = {{1.5, 2.5, 3.5}};
            } else if (roll < 0.85) {
                grid->criteria.push_back(dsl::parse_criterion("spltrm"));
                grid->thresholds = {{7.5, 10.5, 13.5}};
            } else if (roll < 0.95) {
                grid->criteria.push_back(dsl::parse_criterion("(borr+lc)/facilityamt"));
                grid->thresholds = {{0.33, 0.66}};
            } else {
                grid->criteria.push_back(dsl::parse_criterion("unusedav"));
                grid->thresholds = {{0.3 * f.commitment, 0.7 * f.commitment}};
            }

            const double base_spread = 100.0 + 2500.0 * orig_risk + rng.uniform(-25.0, 25.0);
            if (use_grid) {
                const size_t levels = grid->thresholds[0].size() + 1;
                grid->cells.assign(levels, dsl::GridRow{});
                const bool availability_grid =
                    dsl::print_criterion(grid->criteria[0]) == "unusedav";
                for (size_t lv = 0; lv < levels; ++lv) {
                    // availability grids price *down* as headroom grows
                    const double step = availability_grid
                                            ? (levels - 1 - lv) * 45.0
                                            : lv * 45.0;
                    grid->cells[lv].libor_spread_bps = std::round(base_spread + step);
                    grid->cells[lv].abr_spread_bps = std::round(std::max(0.0, base_spread + step - 100.0));
                    grid->cells[lv].commitment_fee_bps = std::round(18.0 + 6.0 * lv);
                }
                f.pricing_grid = grid;
            }

            BaseRateOption libor;
            libor.kind = LoanType::libor;
            libor.libor_tenor = rng.bernoulli(0.9) ? LiborTenor::borrower_choice : LiborTenor::m3;
            libor.spread = use_grid ? SpreadSpec::grid(dsl::GridColumn::libor_spread)
                                    : SpreadSpec::fixed(std::round(base_spread));
            if (f.origination_quarter >= Quarter(2009, 1) && rng.bernoulli(0.25))
                libor.rate_floor_pct = 1.0;
            f.base_rate_options.push_back(libor);

            if (rng.bernoulli(0.93)) {
                BaseRateOption abr;
                abr.kind = LoanType::abr;
                abr.abr_candidates.push_back({AbrReference::prime, 0.0});
                abr.abr_candidates.push_back({AbrReference::fed_funds, std::nullopt});
                if (f.origination_quarter >= Quarter(2009, 1) && rng.bernoulli(0.5))
                    abr.abr_candidates.push_back({AbrReference::libor_1m, 100.0});
                abr.spread = use_grid ? SpreadSpec::grid(dsl::GridColumn::abr_spread)
                                      : SpreadSpec::fixed(std::round(std::max(0.0, base_spread - 100.0)));
                f.base_rate_options.push_back(abr);
            }

            if (rng.bernoulli(0.79))
                f.fee_schedule.commitment_fee =
                    use_grid ? SpreadSpec::grid(dsl::GridColumn::commitment_fee)
                             : SpreadSpec::fixed(std::round(rng.uniform(12.0, 45.0)));
            if (rng.bernoulli(0.17))
                f.fee_schedule.annual_fee = SpreadSpec::fixed(std::round(rng.uniform(5.0, 15.0)));
            if (rng.bernoulli(0.05))
                f.fee_schedule.utilization_fee =
                    UtilizationFee{SpreadSpec::fixed(12.5), rng.bernoulli(0.5) ? 0.33 : 0.5};
            if (rng.bernoulli(0.40))
                f.fee_schedule.upfront_fee =
                    UpfrontFee{std::round(f.commitment * rng.uniform(0.001, 0.008) * 1000.0) / 1000.0,
                               f.origination_quarter};
            f.default_terms.restrict_to_abr = rng.bernoulli(0.22);
        }

        // amendments and terminations: a slice of contracts is amended
        // mid-life (a successor record continues the loan path) and another
        // slice terminates early.
        const size_t original_count = plans.size();
        Rng amend_rng = root.fork("amendments");
        for (size_t plan_idx = 0; plan_idx < original_count; ++plan_idx) {
            auto& plan = plans[plan_idx];
            Facility& f = plan.facility;
            const int alive = plan.last_state - plan.first_state + 1;
            if (alive < 8) continue;
            const double roll = amend_rng.uniform();
            if (roll < 0.20) {
                // amendment: the original is supplanted at amend_q
                const Quarter amend_q = plan.first_state + amend_rng.uniform_int(4, alive - 3);
                FacilityPlan succ;
                succ.firm_index = plan.firm_index;
                succ.facility = f;
                succ.facility.facility_id = f.facility_id + "-A";
                succ.facility.predecessor_id = f.facility_id;
                succ.facility.loan_path_id = f.loan_path_id;
                succ.facility.origination_quarter = amend_q;
                succ.facility.stated_maturity_quarter =
                    amend_q + amend_rng.uniform_int(8, 20);
                succ.facility.commitment =
                    std::round(f.commitment * amend_rng.uniform(0.8, 1.3));
                if (amend_rng.bernoulli(0.5))
                    succ.facility.fee_schedule.upfront_fee = UpfrontFee{
                        std::round(succ.facility.commitment * amend_rng.uniform(0.001, 0.006) * 1000.0) /
                            1000.0,
                        amend_q};
                else
                    succ.facility.fee_schedule.upfront_fee.reset();
                succ.first_state = amend_q;
                succ.last_state = std::min(succ.facility.stated_maturity_quarter - 1, last_q);
                for (Quarter q = succ.first_state; q <= succ.last_state; ++q) {
                    auto it = plan.states.find(q);
                    FacilityQuarterState st =
                        it != plan.states.end() ? it->second : plan.states.rbegin()->second;
                    st.facility_id = succ.facility.facility_id;
                    st.quarter = q;
                    st.outstanding_borrowings =
                        std::min(st.outstanding_borrowings, succ.facility.commitment);
                    succ.states.emplace(q, st);
                }
                // truncate the original at the amendment
                plan.states.erase(plan.states.lower_bound(amend_q), plan.states.end());
                plan.last_state = amend_q - 1;
                if (!succ.states.empty()) plans.push_back(std::move(succ));
            } else if (roll < 0.35) {
                // early termination, recorded on the final state row
                const Quarter term_q = plan.first_state + amend_rng.uniform_int(4, alive - 2);
                plan.states.erase(plan.states.upper_bound(term_q), plan.states.end());
                plan.last_state = term_q;
                if (auto it = plan.states.find(term_q); it != plan.states.end())
                    it->second.termination_quarter = term_q;
            }
        }
    }

    for (auto& plan : plans) {
        panel.states[plan.facility.facility_id] = plan.states;
        panel.facilities.push_back(plan.facility);
    }
    return bundle;
}

} // namespace revolv::synth
