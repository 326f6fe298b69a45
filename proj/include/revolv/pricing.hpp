#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "revolv/contract.hpp"
#include "revolv/dsl.hpp"
#include "revolv/market.hpp"
#include "revolv/quarter.hpp"

namespace revolv {

// Resolved pricing for one facility-quarter. applicable_spread_bps is the
// spread actually charged on drawdowns (default margin included when it
// applies); aisd_bps/aisu_bps are the contractual all-in metrics and exclude
// the default margin.
struct QuarterPricing {
    std::string facility_id;
    Quarter quarter;
    LoanType chosen_loan_type = LoanType::libor;
    double chosen_base_rate_pct = 0.0;
    double applicable_spread_bps = 0.0;
    double commitment_fee_bps = 0.0;
    double annual_fee_bps = 0.0;
    double utilization_fee_bps = 0.0;
    bool utilization_fee_active = false;
    double default_margin_applied_bps = 0.0;
    double aisd_bps = 0.0;
    double aisu_bps = 0.0;
};

namespace detail {

inline std::optional<double> resolve_spread_bps(const SpreadSpec& spec,
                                                const std::optional<dsl::GridRow>& row) {
    if (spec.mode == SpreadSpec::Mode::fixed) return spec.fixed_bps;
    if (!row || !spec.grid_column) return std::nullopt;
    return row->column(*spec.grid_column);
}

inline double abr_candidate_rate(const AbrCandidate& c, const RateEnvironment& rates) {
    const double add_on =
        c.add_on_bps.value_or(c.reference == AbrReference::fed_funds ? 50.0 : 0.0);
    switch (c.reference) {
    case AbrReference::prime:     return rates.prime + add_on / 100.0;
    case AbrReference::fed_funds: return rates.fed_funds + add_on / 100.0;
    case AbrReference::fixed_pct: return add_on / 100.0;  // the candidate is the level itself
    case AbrReference::libor_1m:  return rates.libor_1m + add_on / 100.0;
    case AbrReference::libor_3m:  return rates.libor_3m + add_on / 100.0;
    }
    return 0.0;
}

struct PricedOption {
    LoanType kind = LoanType::libor;
    double base_rate_pct = 0.0;
    double spread_bps = 0.0;
    double full_rate_pct = 0.0;
};

inline std::optional<PricedOption> price_option(const BaseRateOption& opt,
                                                const RateEnvironment& rates,
                                                const std::optional<dsl::GridRow>& row) {
    PricedOption out;
    out.kind = opt.kind;
    if (opt.kind == LoanType::libor) {
        if (!opt.libor_tenor) return std::nullopt;
        out.base_rate_pct = rates.libor(*opt.libor_tenor);
    } else {
        if (opt.abr_candidates.empty()) return std::nullopt;
        double best = abr_candidate_rate(opt.abr_candidates.front(), rates);
        for (size_t i = 1; i < opt.abr_candidates.size(); ++i)
            best = std::max(best, abr_candidate_rate(opt.abr_candidates[i], rates));
        out.base_rate_pct = best;
    }
    if (opt.rate_floor_pct) out.base_rate_pct = std::max(out.base_rate_pct, *opt.rate_floor_pct);
    auto spread = resolve_spread_bps(opt.spread, row);
    if (!spread) return std::nullopt;
    out.spread_bps = *spread;
    out.full_rate_pct = out.base_rate_pct + out.spread_bps / 100.0;
    if (opt.total_rate_floor_pct)
        out.full_rate_pct = std::max(out.full_rate_pct, *opt.total_rate_floor_pct);
    return out;
}

} // namespace detail

// Borrowers are cost minimizers: among the loan types the contract offers,
// take the one with the lowest full rate (ties broken LIBOR-first). Options
// whose pricing cannot be computed drop out of the choice set; if nothing is
// computable, or a scheduled fee cannot be resolved, the whole quarter is
// unpriceable and the observation is dropped.
inline std::optional<QuarterPricing> resolve_quarter_pricing(const Facility& f,
                                                             const dsl::EvalContext& ctx,
                                                             const RateEnvironment& rates,
                                                             const FacilityQuarterState& state) {
    std::optional<dsl::GridRow> row;
    if (f.pricing_grid) row = dsl::resolve_grid(*f.pricing_grid, ctx);

    QuarterPricing out;
    out.facility_id = f.facility_id;
    out.quarter = state.quarter;

    const bool penalized = state.technical_default && !state.waiver_granted;

    std::optional<detail::PricedOption> chosen;
    std::optional<double> libor_spread_metric;
    std::optional<double> abr_spread_metric;

    if (f.is_fixed_rate()) {
        detail::PricedOption fixed;
        fixed.kind = LoanType::fixed;
        fixed.base_rate_pct = *f.fixed_annual_rate_pct;
        fixed.spread_bps = 0.0;  // no spread income attributable to risk premium
        fixed.full_rate_pct = *f.fixed_annual_rate_pct;
        chosen = fixed;
    } else {
        std::vector<detail::PricedOption> candidates;
        const bool restrict_abr = penalized && f.default_terms.restrict_to_abr &&
                                  std::any_of(f.base_rate_options.begin(), f.base_rate_options.end(),
                                              [](const BaseRateOption& o) { return o.kind == LoanType::abr; });
        for (const auto& opt : f.base_rate_options) {
            auto priced = detail::price_option(opt, rates, row);
            if (!priced) continue;
            if (priced->kind == LoanType::libor && !libor_spread_metric)
                libor_spread_metric = priced->spread_bps;
            if (priced->kind == LoanType::abr && !abr_spread_metric)
                abr_spread_metric = priced->spread_bps;
            if (restrict_abr && priced->kind != LoanType::abr) continue;
            candidates.push_back(*priced);
        }
        if (candidates.empty()) return std::nullopt;
        chosen = candidates.front();
        for (size_t i = 1; i < candidates.size(); ++i) {
            const auto& c = candidates[i];
            if (c.full_rate_pct < chosen->full_rate_pct ||
                (c.full_rate_pct == chosen->full_rate_pct && c.kind == LoanType::libor &&
                 chosen->kind != LoanType::libor))
                chosen = c;
        }
    }

    out.chosen_loan_type = chosen->kind;
    out.chosen_base_rate_pct = chosen->base_rate_pct;
    out.applicable_spread_bps = chosen->spread_bps;
    if (penalized) {
        out.default_margin_applied_bps = f.default_terms.default_margin_bps;
        out.applicable_spread_bps += out.default_margin_applied_bps;
    }

    const auto& fees = f.fee_schedule;
    if (fees.commitment_fee) {
        auto v = detail::resolve_spread_bps(*fees.commitment_fee, row);
        if (!v) return std::nullopt;
        out.commitment_fee_bps = *v;
    }
    if (fees.annual_fee) {
        auto v = detail::resolve_spread_bps(*fees.annual_fee, row);
        if (!v) return std::nullopt;
        out.annual_fee_bps = *v;
    }
    if (fees.utilization_fee) {
        auto v = detail::resolve_spread_bps(fees.utilization_fee->spread, row);
        if (!v) return std::nullopt;
        out.utilization_fee_bps = *v;
        out.utilization_fee_active =
            f.commitment > 0.0 &&
            state.outstanding_borrowings / f.commitment > fees.utilization_fee->threshold;
    }

    // AISD metric: spread over LIBOR loans, or over ABR loans when the line
    // offers no LIBOR pricing. Fixed-rate lines have no spread component.
    double spread_metric = 0.0;
    if (!f.is_fixed_rate()) {
        if (libor_spread_metric) spread_metric = *libor_spread_metric;
        else if (abr_spread_metric) spread_metric = *abr_spread_metric;
        else spread_metric = chosen->spread_bps;
    }
    out.aisd_bps = spread_metric + out.annual_fee_bps + out.utilization_fee_bps;
    out.aisu_bps = out.commitment_fee_bps + out.annual_fee_bps;
    return out;
}

// Builds the criterion-evaluation context for a facility at `quarter`:
// firm fields (income-statement mnemonics on a four-quarter rolling basis),
// facility usage fields, facility constants, the rating ordinal, and
// quarters elapsed since origination, with history at lags 1..4.
inline dsl::EvalContext make_eval_context(const Facility& f, const Panel& panel, Quarter quarter) {
    dsl::EvalContext ctx;
    ctx.set("facilityamt", f.commitment);
    ctx.set("qtrsorig", static_cast<double>(quarter - f.origination_quarter));

    for (int lag = 0; lag <= dsl::EvalContext::max_lag; ++lag) {
        const Quarter q = quarter - lag;
        if (const FirmQuarter* fq = panel.firm_quarter(f.borrower_id, q)) {
            for (const auto& [name, value] : fq->fields) {
                if (!dsl::known_variables().count(name)) continue;
                if (dsl::flow_variables().count(name)) continue;  // rolled below
                ctx.set(name, value, lag);
            }
            if (lag == 0 && fq->rating) ctx.set("spltrm", static_cast<double>(*fq->rating));
        }
        if (const FacilityQuarterState* st = panel.state(f.facility_id, q)) {
            ctx.set("borr", st->outstanding_borrowings, lag);
            if (st->letters_of_credit) ctx.set("lc", *st->letters_of_credit, lag);
            if (st->borrowing_base) ctx.set("borrbase", *st->borrowing_base, lag);
        }
    }

    // Income-statement variables enter criteria as trailing four-quarter
    // sums; the sum at lag k needs quarters k..k+3.
    for (const auto& name : dsl::flow_variables()) {
        for (int lag = 0; lag <= dsl::EvalContext::max_lag; ++lag) {
            double sum = 0.0;
            bool ok = true;
            for (int back = 0; back < 4; ++back) {
                const FirmQuarter* fq = panel.firm_quarter(f.borrower_id, quarter - lag - back);
                auto v = fq ? fq->field(name) : std::optional<double>{};
                if (!v) { ok = false; break; }
                sum += *v;
            }
            if (ok) ctx.set(name, sum, lag);
        }
    }
    return ctx;
}

} // namespace revolv
