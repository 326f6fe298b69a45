#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "revolv/contract.hpp"
#include "revolv/econ.hpp"
#include "revolv/market.hpp"
#include "revolv/pricing.hpp"
#include "revolv/returns.hpp"
#include "revolv/risk.hpp"

namespace revolv::pipeline {

// Expectation-quarter window for the crisis dummy: the NBER window lagged by
// one quarter, i.e. an observation whose return accrues in quarter t+1 is a
// crisis observation when t falls in [first, last].
struct CrisisWindow {
    Quarter first = Quarter(2007, 3);
    Quarter last = Quarter(2009, 1);

    bool contains(Quarter t) const { return t >= first && t <= last; }
};

struct PanelOptions {
    ReturnPolicy policy;
    ControlPolicy control_policy = ControlPolicy::rolling_avg;
    CrisisWindow crisis;
};

// One regression-ready observation. Returns are annualized per the policy
// and expressed in percent; risk is the raw daily stddev at the expectation
// quarter; firm controls lag the expectation quarter by one.
struct PanelRow {
    std::string facility_id;
    std::string borrower_id;
    std::string lender_id;
    std::string rating_label;   // ordinal as text, "NR" when unrated
    Quarter return_quarter;     // t+1
    double denominator = 0.0;

    double promised_return_pct = 0.0;
    double promised_aisd_pct = 0.0;
    double promised_aisu_pct = 0.0;
    std::optional<double> expected_return_pct;
    std::optional<double> expected_aisd_pct;
    std::optional<double> expected_aisu_pct;
    std::optional<double> expected_quarterly;       // fractions, for the univariate path
    std::optional<double> expected_aisd_quarterly;
    std::optional<double> expected_aisu_quarterly;
    std::optional<double> pd_used;

    std::optional<double> risk;          // daily-return stddev at t
    std::optional<double> z_score_risk;  // Altman Z at t (alternative regressor)
    ControlSet controls;                 // at t-1

    double log_maturity = 0.0;  // log months
    double log_amount = 0.0;    // log commitment
    bool secured = false;
    bool syndicated = false;
    bool purpose = false;
    bool has_annual_fee = false;
    bool has_commitment_fee = false;
    bool has_utilization_fee = false;
    bool has_upfront_fee = false;
    bool technical_default = false;
    bool nonzero_outstanding = false;
    bool crisis = false;

    double usage_ratio = 0.0;
    std::optional<double> lender_beta;
};

struct ExclusionReport {
    std::map<std::string, int> by_cause;
    int rows_in = 0;
    int rows_kept = 0;

    void exclude(const std::string& cause) { by_cause[cause]++; }
    int total_excluded() const {
        int n = 0;
        for (const auto& [cause, count] : by_cause) n += count;
        return n;
    }
};

struct AssembledPanel {
    std::vector<PanelRow> rows;
    ExclusionReport exclusions;
    std::vector<QuarterPricing> pricing;              // audit trail, fig1
    std::vector<ReturnRecord> returns;                // returns.csv
    std::map<Quarter, std::pair<double, int>> pd_sum_by_quarter;  // fig3: sum, firm count
    std::map<std::string, double> lender_betas;
};

inline std::optional<MertonInputs> merton_inputs_at(const Panel& panel, const std::string& firm_id,
                                                    Quarter q) {
    const FirmQuarter* fq = panel.firm_quarter(firm_id, q);
    if (!fq) return std::nullopt;
    auto e = equity_market_value(*fq);
    auto dlcq = fq->field("dlcq");
    auto dlttq = fq->field("dlttq");
    if (!e || !dlcq || !dlttq || !fq->stock_return_12m || !fq->monthly_return_stddev_12m_annualized)
        return std::nullopt;
    MertonInputs in;
    in.equity_value = *e;
    in.debt_barrier = *dlcq + 0.5 * *dlttq;
    in.stock_return_12m = *fq->stock_return_12m;
    in.equity_vol = *fq->monthly_return_stddev_12m_annualized;
    return in;
}

inline std::optional<double> pd_at(const Panel& panel, const std::string& firm_id, Quarter q) {
    auto in = merton_inputs_at(panel, firm_id, q);
    if (!in) return std::nullopt;
    auto res = merton_pd(*in);
    if (!res) return std::nullopt;
    return res->pd;
}

inline ControlSet controls_at(const Panel& panel, const std::string& firm_id, Quarter q,
                              ControlPolicy policy) {
    auto history = panel.firm_history(firm_id, q, 12);
    if (history.size() < 4) return ControlSet{};
    return compute_controls(history, policy);
}

// ---------------------------------------------------------------------------
// Assembly: facility-quarter state rows -> pricing -> income -> returns ->
// regression rows, with per-cause exclusion accounting.
// ---------------------------------------------------------------------------

inline AssembledPanel assemble_panel(const Panel& panel, const PanelOptions& options) {
    AssembledPanel out;

    // controls and PDs repeat across facilities of one firm and across the
    // two alignment quarters of adjacent rows; memoize per firm-quarter
    std::map<std::pair<std::string, int>, ControlSet> controls_memo;
    std::map<std::pair<std::string, int>, std::optional<double>> pd_memo;
    auto memo_controls = [&](const std::string& firm, Quarter q) -> const ControlSet& {
        auto key = std::make_pair(firm, q.index());
        auto it = controls_memo.find(key);
        if (it == controls_memo.end())
            it = controls_memo.emplace(key, controls_at(panel, firm, q, options.control_policy)).first;
        return it->second;
    };
    auto memo_pd = [&](const std::string& firm, Quarter q) -> std::optional<double> {
        auto key = std::make_pair(firm, q.index());
        auto it = pd_memo.find(key);
        if (it == pd_memo.end()) it = pd_memo.emplace(key, pd_at(panel, firm, q)).first;
        return it->second;
    };

    auto paths = build_loan_paths(panel.facilities, panel.termination_quarters());
    std::map<std::string, const LoanPath*> path_of_facility;
    std::map<std::string, AmortizationSchedule> schedule_of_path;
    for (const auto& p : paths) {
        schedule_of_path.emplace(p.path_id, amortization_schedule(p, options.policy.upfront_amortization));
        for (const auto& m : p.members) path_of_facility.emplace(m.facility->facility_id, &p);
    }

    // Lender betas from quarterly excess returns, when a lender series exists.
    for (const auto& [lender_id, series] : panel.lender_returns) {
        std::vector<double> lender_excess, market_excess;
        for (const auto& [q, ret] : series) {
            auto it = panel.rates.find(q);
            if (it == panel.rates.end()) continue;
            const double rf = it->second.tbill_3m / 400.0;  // annual pct -> quarterly fraction
            lender_excess.push_back(ret - rf);
            market_excess.push_back(it->second.market_index_return - rf);
        }
        if (lender_excess.size() >= 8) {
            try {
                out.lender_betas[lender_id] = econ::lender_beta(lender_excess, market_excess);
            } catch (const econ::EstimationError&) {
                // zero market variance in a degenerate bundle: skip the lender
            }
        }
    }

    // fig3 inputs: average PD across firms per quarter.
    for (const auto& [firm_id, by_q] : panel.firms) {
        for (const auto& [q, fq] : by_q) {
            auto pd = pd_at(panel, firm_id, q);
            if (!pd) continue;
            auto& cell = out.pd_sum_by_quarter[q];
            cell.first += *pd;
            cell.second += 1;
        }
    }

    for (const Facility& f : panel.facilities) {
        auto states_it = panel.states.find(f.facility_id);
        if (states_it == panel.states.end()) continue;
        const LoanPath* path = path_of_facility.at(f.facility_id);
        const AmortizationSchedule& sched = schedule_of_path.at(path->path_id);

        for (const auto& [r, state] : states_it->second) {
            out.exclusions.rows_in++;

            if (r < f.origination_quarter || r >= f.stated_maturity_quarter) {
                out.exclusions.exclude("outside_contract_term");
                continue;
            }
            auto rates_it = panel.rates.find(r);
            if (rates_it == panel.rates.end()) {
                out.exclusions.exclude("missing_rates");
                continue;
            }

            auto ctx = make_eval_context(f, panel, r);
            auto pricing = resolve_quarter_pricing(f, ctx, rates_it->second, state);
            if (!pricing) {
                out.exclusions.exclude("pricing_undefined");
                continue;
            }
            out.pricing.push_back(*pricing);

            const IncomeComponents income = quarterly_income(*pricing, f, state, sched);
            const Quarter t = r - 1;
            auto pd = memo_pd(f.borrower_id, t);
            ReturnRecord rec = compute_return(income, state, f, options.policy, pd);
            if (!rec.defined) {
                out.exclusions.exclude("zero_denominator");
                continue;
            }
            out.returns.push_back(rec);

            PanelRow row;
            row.facility_id = f.facility_id;
            row.borrower_id = f.borrower_id;
            row.lender_id = f.lender_id;
            row.return_quarter = r;
            row.denominator = rec.denominator;

            const auto annualize_pct = [&](double quarterly) {
                return 100.0 * annualize(quarterly, options.policy.annualization);
            };
            row.promised_return_pct = annualize_pct(rec.promised_return);
            row.promised_aisd_pct = annualize_pct(rec.promised_aisd_return);
            row.promised_aisu_pct = annualize_pct(rec.promised_aisu_return);
            if (rec.expected_return) {
                row.expected_return_pct = annualize_pct(*rec.expected_return);
                row.expected_aisd_pct = annualize_pct(*rec.expected_aisd_return);
                row.expected_aisu_pct = annualize_pct(*rec.expected_aisu_return);
                row.expected_quarterly = *rec.expected_return;
                row.expected_aisd_quarterly = *rec.expected_aisd_return;
                row.expected_aisu_quarterly = *rec.expected_aisu_return;
            }
            row.pd_used = pd;

            if (const FirmQuarter* fq = panel.firm_quarter(f.borrower_id, t)) {
                row.risk = fq->daily_return_stddev_12m;
                row.rating_label = fq->rating ? std::to_string(*fq->rating) : "NR";
            } else {
                row.rating_label = "NR";
            }
            row.z_score_risk = memo_controls(f.borrower_id, t).z_score;
            row.controls = memo_controls(f.borrower_id, t - 1);

            row.log_maturity = std::log(static_cast<double>(f.stated_term_months()));
            row.log_amount = std::log(f.commitment);
            row.secured = f.secured;
            row.syndicated = f.syndicated;
            row.purpose = f.restructuring_purpose;
            row.has_annual_fee = f.fee_schedule.annual_fee.has_value();
            row.has_commitment_fee = f.fee_schedule.commitment_fee.has_value();
            row.has_utilization_fee = f.fee_schedule.utilization_fee.has_value();
            row.has_upfront_fee = f.fee_schedule.upfront_fee.has_value();
            row.technical_default = state.technical_default;
            row.nonzero_outstanding = state.outstanding_borrowings > 0.0;
            row.crisis = options.crisis.contains(t);
            row.usage_ratio = f.commitment > 0.0 ? state.outstanding_borrowings / f.commitment : 0.0;
            if (auto it = out.lender_betas.find(f.lender_id); it != out.lender_betas.end())
                row.lender_beta = it->second;

            out.rows.push_back(std::move(row));
            out.exclusions.rows_kept++;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model frames. Columns are pulled from PanelRow by name so a JSON model
// spec can name any of them.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& base_control_regressors() {
    static const std::vector<std::string> names = {
        "secured", "syndicated", "log_maturity", "log_amount", "purpose",
        "annual_fee", "commitment_fee", "utilization_fee", "upfront_fee",
        "technical_default", "nonzero_outstanding",
        "leverage", "coverage", "capital_expenditures", "net_worth", "current_ratio",
        "profitability", "size", "market_to_book", "tangibility", "financial_constraint",
        "monitoring_cost", "crisis",
    };
    return names;
}

inline std::optional<double> control_value(const ControlSet& c, const std::string& name) {
    if (name == "leverage") return c.leverage;
    if (name == "coverage") return c.coverage;
    if (name == "capital_expenditures") return c.capital_expenditures;
    if (name == "net_worth") return c.net_worth;
    if (name == "current_ratio") return c.current_ratio;
    if (name == "profitability") return c.profitability;
    if (name == "size") return c.size;
    if (name == "market_to_book") return c.market_to_book;
    if (name == "tangibility") return c.tangibility;
    if (name == "financial_constraint" || name == "kz_index") return c.kz_index;
    if (name == "monitoring_cost") return c.monitoring_cost;
    if (name == "z_score") return c.z_score;
    throw econ::EstimationError("unknown control '" + name + "'");
}

inline std::optional<double> row_value(const PanelRow& row, const std::string& name) {
    auto opt = [](const std::optional<double>& v) { return v; };
    if (name == "expected_return") return opt(row.expected_return_pct);
    if (name == "expected_aisd_return") return opt(row.expected_aisd_pct);
    if (name == "expected_aisu_return") return opt(row.expected_aisu_pct);
    if (name == "promised_return" || name == "committed_return") return row.promised_return_pct;
    if (name == "promised_aisd_return" || name == "committed_aisd_return") return row.promised_aisd_pct;
    if (name == "promised_aisu_return" || name == "committed_aisu_return") return row.promised_aisu_pct;
    if (name == "risk") return opt(row.risk);
    if (name == "risk_squared") {
        if (!row.risk) return std::nullopt;
        return *row.risk * *row.risk;
    }
    if (name == "z_score_risk") return opt(row.z_score_risk);
    if (name == "lender_beta") return opt(row.lender_beta);
    if (name == "secured") return row.secured ? 1.0 : 0.0;
    if (name == "syndicated") return row.syndicated ? 1.0 : 0.0;
    if (name == "log_maturity") return row.log_maturity;
    if (name == "log_amount") return row.log_amount;
    if (name == "purpose") return row.purpose ? 1.0 : 0.0;
    if (name == "annual_fee") return row.has_annual_fee ? 1.0 : 0.0;
    if (name == "commitment_fee") return row.has_commitment_fee ? 1.0 : 0.0;
    if (name == "utilization_fee") return row.has_utilization_fee ? 1.0 : 0.0;
    if (name == "upfront_fee") return row.has_upfront_fee ? 1.0 : 0.0;
    if (name == "technical_default") return row.technical_default ? 1.0 : 0.0;
    if (name == "nonzero_outstanding") return row.nonzero_outstanding ? 1.0 : 0.0;
    if (name == "crisis") return row.crisis ? 1.0 : 0.0;
    if (name == "leverage") return row.controls.leverage;
    if (name == "coverage") return row.controls.coverage;
    if (name == "capital_expenditures") return row.controls.capital_expenditures;
    if (name == "net_worth") return row.controls.net_worth;
    if (name == "current_ratio") return row.controls.current_ratio;
    if (name == "profitability") return row.controls.profitability;
    if (name == "size") return row.controls.size;
    if (name == "market_to_book") return row.controls.market_to_book;
    if (name == "tangibility") return row.controls.tangibility;
    if (name == "financial_constraint") return row.controls.kz_index;
    if (name == "monitoring_cost") return row.controls.monitoring_cost;
    if (name == "usage_ratio") return row.usage_ratio;
    throw econ::EstimationError("unknown model column '" + name + "'");
}

inline std::string row_factor(const PanelRow& row, const std::string& name) {
    if (name == "borrower") return row.borrower_id;
    if (name == "rating") return row.rating_label;
    if (name == "quarter") return row.return_quarter.str();
    if (name == "lender") return row.lender_id;
    if (name == "facility") return row.facility_id;
    throw econ::EstimationError("unknown factor '" + name + "'");
}

struct ModelSpec {
    std::string name;
    std::string dependent;
    std::vector<std::string> regressors;
    std::vector<std::string> fixed_effects = {"borrower", "rating", "quarter", "lender"};
    std::string cluster = "facility";
    std::vector<std::pair<std::string, std::string>> interactions;
    std::string estimator = "ols";  // or "probit"
};

struct ModelFrame {
    econ::Dataset dataset;
    int rows_considered = 0;
    int rows_dropped_missing = 0;  // listwise deletion count
};

// Listwise deletion over the named columns; the dropped count is reported.
inline ModelFrame build_model_frame(const std::vector<PanelRow>& rows, const ModelSpec& spec) {
    ModelFrame frame;
    std::vector<std::string> numeric_names = spec.regressors;
    for (const auto& [a, b] : spec.interactions) numeric_names.push_back(a + ":" + b);

    std::vector<const PanelRow*> kept;
    for (const auto& row : rows) {
        frame.rows_considered++;
        bool complete = row_value(row, spec.dependent).has_value();
        for (const auto& name : spec.regressors)
            complete = complete && row_value(row, name).has_value();
        for (const auto& [a, b] : spec.interactions)
            complete = complete && row_value(row, a).has_value() && row_value(row, b).has_value();
        if (!complete) {
            frame.rows_dropped_missing++;
            continue;
        }
        kept.push_back(&row);
    }

    const Eigen::Index n = static_cast<Eigen::Index>(kept.size());
    frame.dataset.n = n;
    frame.dataset.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
        frame.dataset.y[i] = *row_value(*kept[static_cast<size_t>(i)], spec.dependent);

    for (const auto& name : spec.regressors) {
        Eigen::VectorXd col(n);
        for (Eigen::Index i = 0; i < n; ++i)
            col[i] = *row_value(*kept[static_cast<size_t>(i)], name);
        frame.dataset.add_column(name, std::move(col));
    }
    for (const auto& [a, b] : spec.interactions) {
        Eigen::VectorXd col(n);
        for (Eigen::Index i = 0; i < n; ++i)
            col[i] = *row_value(*kept[static_cast<size_t>(i)], a) *
                     *row_value(*kept[static_cast<size_t>(i)], b);
        frame.dataset.add_column(a + ":" + b, std::move(col));
    }
    for (const auto& factor : spec.fixed_effects) {
        std::vector<std::string> labels;
        labels.reserve(static_cast<size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i)
            labels.push_back(row_factor(*kept[static_cast<size_t>(i)], factor));
        frame.dataset.add_factor(factor, labels);
    }
    frame.dataset.cluster.reserve(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        frame.dataset.cluster.push_back(row_factor(*kept[static_cast<size_t>(i)], spec.cluster));
    return frame;
}

// The paper's base specification with a chosen dependent variable.
inline ModelSpec base_model(const std::string& dependent, const std::string& name = {}) {
    ModelSpec spec;
    spec.name = name.empty() ? dependent : name;
    spec.dependent = dependent;
    spec.regressors.push_back("risk");
    for (const auto& c : base_control_regressors()) spec.regressors.push_back(c);
    return spec;
}

// ---------------------------------------------------------------------------
// Increase-probit frames (consecutive-quarter pairs per facility).
// ---------------------------------------------------------------------------

struct ProbitFrameOptions {
    std::string dependent = "expected_return";  // which return's increases
    bool high_increases = false;                // upper-quartile variant
};

struct ProbitFrame {
    econ::Dataset dataset;
    int pairs_considered = 0;
    int pairs_dropped = 0;
    int rows_dropped_separation = 0;  // rows in FE levels with constant outcome
};

inline ProbitFrame build_probit_frame(const std::vector<PanelRow>& rows, const ModelSpec& base,
                                      const ProbitFrameOptions& options) {
    // index rows by (facility, return quarter)
    std::map<std::pair<std::string, int>, const PanelRow*> by_key;
    for (const auto& row : rows)
        by_key[{row.facility_id, row.return_quarter.index()}] = &row;

    struct Pair {
        const PanelRow* current;  // return quarter r (risk at t = r-1)
        const PanelRow* prev;     // return quarter r-1
        double delta_y = 0.0;
        double delta_risk = 0.0;
    };
    std::vector<Pair> pairs;
    ProbitFrame frame;
    for (const auto& row : rows) {
        frame.pairs_considered++;
        auto prev_it = by_key.find({row.facility_id, row.return_quarter.index() - 1});
        if (prev_it == by_key.end()) {
            frame.pairs_dropped++;
            continue;
        }
        const PanelRow* prev = prev_it->second;
        auto y_cur = row_value(row, options.dependent);
        auto y_prev = row_value(*prev, options.dependent);
        if (!y_cur || !y_prev || !row.risk || !prev->risk) {
            frame.pairs_dropped++;
            continue;
        }
        bool complete = true;
        for (const auto& name : base.regressors)
            complete = complete && row_value(row, name).has_value();
        if (!complete) {
            frame.pairs_dropped++;
            continue;
        }
        Pair p;
        p.current = &row;
        p.prev = prev;
        p.delta_y = *y_cur - *y_prev;
        p.delta_risk = *row.risk - *prev->risk;
        pairs.push_back(p);
    }
    if (pairs.empty()) return frame;

    std::vector<double> y_flags, risk_flags;
    if (options.high_increases) {
        std::vector<double> dy, dr;
        for (const auto& p : pairs) {
            dy.push_back(p.delta_y);
            dr.push_back(p.delta_risk);
        }
        auto top_y = econ::top_quartile_indicator(dy);
        auto top_r = econ::top_quartile_indicator(dr);
        for (size_t i = 0; i < pairs.size(); ++i) {
            y_flags.push_back(top_y[i]);
            risk_flags.push_back(top_r[i]);
        }
    } else {
        for (const auto& p : pairs) {
            y_flags.push_back(p.delta_y > 0.0 ? 1.0 : 0.0);
            risk_flags.push_back(p.delta_risk > 0.0 ? 1.0 : 0.0);
        }
    }

    // Fixed-effect levels whose outcome never varies cannot be estimated by
    // maximum likelihood (their dummies quasi-separate); those rows drop with
    // a count, iterating until stable.
    std::vector<char> keep(pairs.size(), 1);
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& factor : base.fixed_effects) {
            std::map<std::string, std::pair<double, double>> level_range;  // min, max of y
            for (size_t i = 0; i < pairs.size(); ++i) {
                if (!keep[i]) continue;
                const std::string level = row_factor(*pairs[i].current, factor);
                auto [it, inserted] = level_range.emplace(level, std::pair{y_flags[i], y_flags[i]});
                if (!inserted) {
                    it->second.first = std::min(it->second.first, y_flags[i]);
                    it->second.second = std::max(it->second.second, y_flags[i]);
                }
            }
            for (size_t i = 0; i < pairs.size(); ++i) {
                if (!keep[i]) continue;
                const auto& range = level_range.at(row_factor(*pairs[i].current, factor));
                if (range.first == range.second) {
                    keep[i] = 0;
                    frame.rows_dropped_separation++;
                    changed = true;
                }
            }
        }
    }

    std::vector<size_t> kept_idx;
    for (size_t i = 0; i < pairs.size(); ++i)
        if (keep[i]) kept_idx.push_back(i);

    const Eigen::Index n = static_cast<Eigen::Index>(kept_idx.size());
    frame.dataset.n = n;
    frame.dataset.y.resize(n);
    Eigen::VectorXd risk_up(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        frame.dataset.y[i] = y_flags[kept_idx[static_cast<size_t>(i)]];
        risk_up[i] = risk_flags[kept_idx[static_cast<size_t>(i)]];
    }
    frame.dataset.add_column("risk_up", std::move(risk_up));
    for (const auto& name : base.regressors) {
        if (name == "risk") continue;  // replaced by the increase indicator
        Eigen::VectorXd col(n);
        for (Eigen::Index i = 0; i < n; ++i)
            col[i] = *row_value(*pairs[kept_idx[static_cast<size_t>(i)]].current, name);
        frame.dataset.add_column(name, std::move(col));
    }
    for (const auto& factor : base.fixed_effects) {
        std::vector<std::string> labels;
        for (Eigen::Index i = 0; i < n; ++i)
            labels.push_back(row_factor(*pairs[kept_idx[static_cast<size_t>(i)]].current, factor));
        frame.dataset.add_factor(factor, labels);
    }
    for (Eigen::Index i = 0; i < n; ++i)
        frame.dataset.cluster.push_back(
            row_factor(*pairs[kept_idx[static_cast<size_t>(i)]].current, base.cluster));
    return frame;
}

// ---------------------------------------------------------------------------
// Riskiest-firm subsamples: firms whose mean risk exceeds the cross-firm
// median, computed over the whole sample or the crisis window only.
// ---------------------------------------------------------------------------

inline std::vector<PanelRow> riskiest_firm_subsample(const std::vector<PanelRow>& rows,
                                                     bool crisis_only, const CrisisWindow& window) {
    std::map<std::string, std::pair<double, int>> sums;
    for (const auto& row : rows) {
        if (!row.risk) continue;
        if (crisis_only && !window.contains(row.return_quarter - 1)) continue;
        auto& cell = sums[row.borrower_id];
        cell.first += *row.risk;
        cell.second += 1;
    }
    std::vector<double> means;
    std::map<std::string, double> mean_of;
    for (const auto& [firm, cell] : sums) {
        const double mean = cell.first / cell.second;
        mean_of[firm] = mean;
        means.push_back(mean);
    }
    if (means.empty()) return {};
    std::sort(means.begin(), means.end());
    const double median = means.size() % 2 == 1
                              ? means[means.size() / 2]
                              : 0.5 * (means[means.size() / 2 - 1] + means[means.size() / 2]);
    std::vector<PanelRow> out;
    for (const auto& row : rows) {
        auto it = mean_of.find(row.borrower_id);
        if (it != mean_of.end() && it->second > median) out.push_back(row);
    }
    return out;
}

} // namespace revolv::pipeline
