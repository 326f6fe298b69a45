#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "revolv/contract.hpp"
#include "revolv/market.hpp"
#include "revolv/pricing.hpp"
#include "revolv/quarter.hpp"

namespace revolv {

enum class CcfRule {
    gt12m_half_else_zero,  // 0.5 when the stated maturity exceeds one year
    gt14m_half_else_zero,  // 0.5 above the 14-month regulatory threshold
    always_half,
};

enum class UpfrontAmortization {
    straight_line_stated_maturity,      // fee / stated term, alive through the loan path
    settle_to_min_maturity_or_path_end, // fee / (quarters to the earlier of maturity and path end)
    while_unamended,                    // fee / stated term, only while the contract is unamended
};

enum class Annualization { times4, geometric };

struct ReturnPolicy {
    CcfRule ccf_rule = CcfRule::gt12m_half_else_zero;
    UpfrontAmortization upfront_amortization = UpfrontAmortization::straight_line_stated_maturity;
    Annualization annualization = Annualization::times4;
    double lgd_recovery_factor = 0.348;  // paid on the promised coupon in default
    bool lc_reduces_unused = false;      // alternative reading of the denominator's unused portion
};

inline double ccf(const Facility& f, CcfRule rule) {
    switch (rule) {
    case CcfRule::gt12m_half_else_zero: return f.stated_term_months() > 12 ? 0.5 : 0.0;
    case CcfRule::gt14m_half_else_zero: return f.stated_term_months() > 14 ? 0.5 : 0.0;
    case CcfRule::always_half:          return 0.5;
    }
    return 0.0;
}

inline double annualize(double quarterly, Annualization a) {
    return a == Annualization::times4 ? 4.0 * quarterly
                                      : std::pow(1.0 + quarterly, 4.0) - 1.0;
}

// ---------------------------------------------------------------------------
// Upfront-fee amortization over a loan path. Amounts are recognized per
// quarter and attributed to whichever contract in the path is in effect.
// ---------------------------------------------------------------------------

struct AmortizationSchedule {
    std::map<Quarter, double> by_quarter;  // USD millions recognized per quarter

    double at(Quarter q) const {
        auto it = by_quarter.find(q);
        return it == by_quarter.end() ? 0.0 : it->second;
    }

    double total() const {
        double sum = 0.0;
        for (const auto& [q, v] : by_quarter) sum += v;
        return sum;
    }
};

inline AmortizationSchedule amortization_schedule(const LoanPath& path, UpfrontAmortization policy) {
    AmortizationSchedule sched;
    const Quarter path_end = path.end();  // exclusive

    for (const auto& member : path.members) {
        const Facility& f = *member.facility;
        if (!f.fee_schedule.upfront_fee) continue;
        const UpfrontFee& fee = *f.fee_schedule.upfront_fee;
        if (fee.amount <= 0.0) continue;

        const Quarter settle = fee.paid_quarter;
        Quarter window_end = std::min(f.stated_maturity_quarter, path_end);
        int rate_quarters = 0;
        switch (policy) {
        case UpfrontAmortization::straight_line_stated_maturity:
            rate_quarters = f.stated_term_quarters();
            break;
        case UpfrontAmortization::settle_to_min_maturity_or_path_end:
            rate_quarters = std::min(f.stated_maturity_quarter, path_end) - settle;
            break;
        case UpfrontAmortization::while_unamended:
            rate_quarters = f.stated_term_quarters();
            window_end = std::min(window_end, member.active_until);
            break;
        }

        if (rate_quarters <= 0 || settle >= window_end) {
            // Degenerate window: recognize the full fee in the paid quarter.
            sched.by_quarter[settle] += fee.amount;
            continue;
        }
        const double per_quarter = fee.amount / rate_quarters;
        for (Quarter q = settle; q < window_end; ++q) sched.by_quarter[q] += per_quarter;
    }
    return sched;
}

// ---------------------------------------------------------------------------
// Quarterly income and returns
// ---------------------------------------------------------------------------

struct IncomeComponents {
    double spread_income = 0.0;           // USD millions per quarter
    double commitment_fee_income = 0.0;
    double annual_fee_income = 0.0;
    double utilization_fee_income = 0.0;
    double upfront_amortized = 0.0;

    double total() const {
        return spread_income + commitment_fee_income + annual_fee_income +
               utilization_fee_income + upfront_amortized;
    }
};

// Coupon income at quarter-end balances. Annual rates convert to quarterly
// via /4; base-rate income is excluded throughout (base rates carry no risk
// premium). The commitment fee accrues on the available unused amount,
// min(commitment, borrowing base) - outstanding - letters of credit, with
// absent letters of credit treated as zero and an absent borrowing base as
// the full commitment.
inline IncomeComponents quarterly_income(const QuarterPricing& pricing, const Facility& f,
                                         const FacilityQuarterState& state,
                                         const AmortizationSchedule& sched) {
    IncomeComponents inc;
    const double out = state.outstanding_borrowings;
    inc.spread_income = pricing.applicable_spread_bps / 1e4 * out / 4.0;

    const double base = state.borrowing_base.value_or(f.commitment);
    const double lc = state.letters_of_credit.value_or(0.0);
    const double available_unused = std::max(0.0, std::min(f.commitment, base) - out - lc);
    inc.commitment_fee_income = pricing.commitment_fee_bps / 1e4 * available_unused / 4.0;

    inc.annual_fee_income = pricing.annual_fee_bps / 1e4 * f.commitment / 4.0;
    if (pricing.utilization_fee_active)
        inc.utilization_fee_income = pricing.utilization_fee_bps / 1e4 * out / 4.0;

    inc.upfront_amortized = sched.at(state.quarter);
    return inc;
}

// Per facility-quarter income components, the regulatory-capital denominator,
// and promised/expected returns, all as quarterly fractions.
struct ReturnRecord {
    std::string facility_id;
    Quarter quarter;
    bool defined = false;  // false when the denominator is zero
    IncomeComponents income;
    double denominator = 0.0;  // outstanding + ccf * unused, USD millions
    double promised_return = 0.0;
    double promised_aisd_return = 0.0;
    double promised_aisu_return = 0.0;
    std::optional<double> pd_used;
    std::optional<double> expected_return;
    std::optional<double> expected_aisd_return;
    std::optional<double> expected_aisu_return;
};

inline ReturnRecord compute_return(const IncomeComponents& income,
                                   const FacilityQuarterState& state, const Facility& f,
                                   const ReturnPolicy& policy, std::optional<double> pd) {
    ReturnRecord rec;
    rec.facility_id = f.facility_id;
    rec.quarter = state.quarter;
    rec.income = income;
    rec.pd_used = pd;

    double unused = f.commitment - state.outstanding_borrowings;
    if (policy.lc_reduces_unused) unused -= state.letters_of_credit.value_or(0.0);
    unused = std::max(0.0, unused);
    rec.denominator = state.outstanding_borrowings + ccf(f, policy.ccf_rule) * unused;
    if (rec.denominator == 0.0) {
        rec.defined = false;  // undrawn short facility; observation excluded
        return rec;
    }
    rec.defined = true;
    rec.promised_return = income.total() / rec.denominator;
    rec.promised_aisd_return =
        (income.spread_income + income.annual_fee_income + income.utilization_fee_income) /
        rec.denominator;
    rec.promised_aisu_return =
        (income.annual_fee_income + income.commitment_fee_income + income.upfront_amortized) /
        rec.denominator;

    if (pd) {
        const double markdown = 1.0 - *pd * (1.0 - policy.lgd_recovery_factor);
        rec.expected_return = rec.promised_return * markdown;
        rec.expected_aisd_return = rec.promised_aisd_return * markdown;
        rec.expected_aisu_return = rec.promised_aisu_return * markdown;
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Univariate (bucketed) annual returns: cross-facility mean per quarter,
// compounded across quarters, reported as the geometric per-year average of
// the cumulative return.
// ---------------------------------------------------------------------------

struct UnivariateObs {
    Quarter quarter;
    int bucket = 0;
    double quarterly_return = 0.0;  // fraction
};

inline std::map<int, std::optional<double>> annualize_univariate(std::span<const UnivariateObs> obs) {
    std::map<int, std::map<Quarter, std::pair<double, int>>> sums;  // bucket -> quarter -> (sum, n)
    for (const auto& o : obs) {
        auto& cell = sums[o.bucket][o.quarter];
        cell.first += o.quarterly_return;
        cell.second += 1;
    }
    std::map<int, std::optional<double>> out;
    for (const auto& [bucket, by_quarter] : sums) {
        if (by_quarter.empty()) {
            out[bucket] = std::nullopt;
            continue;
        }
        double cumulative = 1.0;
        int quarters = 0;
        for (const auto& [q, cell] : by_quarter) {
            cumulative *= 1.0 + cell.first / cell.second;
            ++quarters;
        }
        out[bucket] = std::pow(cumulative, 4.0 / quarters) - 1.0;
    }
    return out;
}

} // namespace revolv
