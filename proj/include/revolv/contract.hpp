#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "revolv/dsl.hpp"
#include "revolv/quarter.hpp"

namespace revolv {

// All contract values are immutable after construction; amendments are new
// Facility records linked by predecessor_id, never in-place edits.

enum class LoanType { libor, abr, fixed };

enum class LiborTenor { m1, m2, m3, m6, borrower_choice };

enum class AbrReference { prime, fed_funds, fixed_pct, libor_1m, libor_3m };

struct SpreadSpec {
    enum class Mode { fixed, grid };
    Mode mode = Mode::fixed;
    std::optional<double> fixed_bps;
    std::optional<dsl::GridColumn> grid_column;

    static SpreadSpec fixed(double bps) {
        SpreadSpec s;
        s.mode = Mode::fixed;
        s.fixed_bps = bps;
        return s;
    }
    static SpreadSpec grid(dsl::GridColumn column) {
        SpreadSpec s;
        s.mode = Mode::grid;
        s.grid_column = column;
        return s;
    }
};

struct AbrCandidate {
    AbrReference reference = AbrReference::prime;
    // Margin over the reference, in bps. For fixed_pct the candidate *is*
    // this value. Absent fed_funds margins default to 50 bps.
    std::optional<double> add_on_bps;
};

struct BaseRateOption {
    LoanType kind = LoanType::libor;
    std::optional<LiborTenor> libor_tenor;          // libor options
    std::vector<AbrCandidate> abr_candidates;       // abr options
    std::optional<double> rate_floor_pct;           // greater-of floor on the base rate
    std::optional<double> total_rate_floor_pct;     // greater-of floor on base + spread
    SpreadSpec spread;
};

struct UtilizationFee {
    SpreadSpec spread;
    double threshold = 0.0;  // fraction of commitment that activates the fee
};

struct UpfrontFee {
    double amount = 0.0;  // USD millions
    Quarter paid_quarter;
};

struct FeeSchedule {
    std::optional<SpreadSpec> commitment_fee;   // charged on the unused amount
    std::optional<SpreadSpec> annual_fee;       // charged on the entire commitment
    std::optional<UtilizationFee> utilization_fee;
    std::optional<UpfrontFee> upfront_fee;
};

struct DefaultTerms {
    double default_margin_bps = 0.0;  // added under unwaived technical default
    bool restrict_to_abr = false;
};

struct Facility {
    std::string facility_id;
    std::string borrower_id;
    std::string lender_id;  // lead / administrative agent
    Quarter origination_quarter;
    Quarter stated_maturity_quarter;
    double commitment = 0.0;  // USD millions
    bool secured = false;
    bool syndicated = false;
    bool restructuring_purpose = false;
    bool has_borrowing_base = false;
    bool has_lc_program = false;
    std::vector<BaseRateOption> base_rate_options;
    std::optional<double> fixed_annual_rate_pct;  // fixed-rate facilities only
    FeeSchedule fee_schedule;
    std::shared_ptr<const dsl::PricingGrid> pricing_grid;
    DefaultTerms default_terms;
    std::string loan_path_id;
    std::optional<std::string> predecessor_id;

    int stated_term_quarters() const { return stated_maturity_quarter - origination_quarter; }
    int stated_term_months() const { return months_between(origination_quarter, stated_maturity_quarter); }
    bool is_fixed_rate() const { return fixed_annual_rate_pct.has_value(); }
};

// ---------------------------------------------------------------------------
// Validation. Violations are data, not failures.
// ---------------------------------------------------------------------------

namespace detail {

inline bool spread_spec_ok(const SpreadSpec& s) {
    if (s.mode == SpreadSpec::Mode::fixed) return s.fixed_bps && !s.grid_column;
    return s.grid_column && !s.fixed_bps;
}

} // namespace detail

inline std::vector<std::string> validate_facility(const Facility& f) {
    std::vector<std::string> v;
    if (!(f.commitment > 0.0)) v.push_back("commitment > 0");
    if (!(f.stated_maturity_quarter > f.origination_quarter)) v.push_back("maturity after origination");
    if (f.base_rate_options.empty() && !f.is_fixed_rate())
        v.push_back("base_rate_options nonempty unless fixed-rate");
    if (f.is_fixed_rate() && *f.fixed_annual_rate_pct < 0.0)
        v.push_back("fixed annual rate nonnegative");

    for (size_t i = 0; i < f.base_rate_options.size(); ++i) {
        const auto& o = f.base_rate_options[i];
        const std::string tag = "base_rate_options[" + std::to_string(i) + "]: ";
        if (o.kind == LoanType::libor) {
            if (!o.libor_tenor) v.push_back(tag + "LIBOR option requires a tenor rule");
            if (!o.abr_candidates.empty()) v.push_back(tag + "LIBOR option must not list ABR candidates");
        } else if (o.kind == LoanType::abr) {
            if (o.abr_candidates.empty()) v.push_back(tag + "ABR option requires >= 1 candidate");
            if (o.libor_tenor) v.push_back(tag + "ABR option must not carry a LIBOR tenor");
        } else {
            v.push_back(tag + "option kind must be LIBOR or ABR");
        }
        if (o.rate_floor_pct && *o.rate_floor_pct < 0.0) v.push_back(tag + "rate floor nonnegative");
        if (o.total_rate_floor_pct && *o.total_rate_floor_pct < 0.0)
            v.push_back(tag + "total rate floor nonnegative");
        if (!detail::spread_spec_ok(o.spread)) v.push_back(tag + "spread spec must be fixed xor grid");
    }

    const auto& fees = f.fee_schedule;
    if (fees.commitment_fee && !detail::spread_spec_ok(*fees.commitment_fee))
        v.push_back("commitment fee spec must be fixed xor grid");
    if (fees.annual_fee && !detail::spread_spec_ok(*fees.annual_fee))
        v.push_back("annual fee spec must be fixed xor grid");
    if (fees.utilization_fee) {
        if (!detail::spread_spec_ok(fees.utilization_fee->spread))
            v.push_back("utilization fee spec must be fixed xor grid");
        const double th = fees.utilization_fee->threshold;
        if (!(th > 0.0 && th <= 1.0)) v.push_back("utilization threshold in (0, 1]");
    }
    if (fees.upfront_fee) {
        if (fees.upfront_fee->amount < 0.0) v.push_back("upfront amount >= 0");
        if (fees.upfront_fee->paid_quarter < f.origination_quarter ||
            fees.upfront_fee->paid_quarter >= f.stated_maturity_quarter)
            v.push_back("upfront fee paid within the contract term");
    }

    if (f.default_terms.default_margin_bps < 0.0) v.push_back("default_margin_bps >= 0");

    const bool needs_grid = [&] {
        for (const auto& o : f.base_rate_options)
            if (o.spread.mode == SpreadSpec::Mode::grid) return true;
        if (fees.commitment_fee && fees.commitment_fee->mode == SpreadSpec::Mode::grid) return true;
        if (fees.annual_fee && fees.annual_fee->mode == SpreadSpec::Mode::grid) return true;
        if (fees.utilization_fee && fees.utilization_fee->spread.mode == SpreadSpec::Mode::grid) return true;
        return false;
    }();
    if (needs_grid && !f.pricing_grid) v.push_back("grid-priced terms require a pricing grid");
    if (f.pricing_grid)
        for (auto& issue : dsl::validate_grid(*f.pricing_grid)) v.push_back("pricing grid: " + issue);

    if (f.predecessor_id && *f.predecessor_id == f.facility_id)
        v.push_back("predecessor chain acyclic");
    return v;
}

// ---------------------------------------------------------------------------
// Loan paths: chains of amendments descending from an original agreement.
// ---------------------------------------------------------------------------

class PathError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PathMember {
    const Facility* facility = nullptr;
    Quarter active_from;          // origination quarter
    Quarter active_until;         // exclusive: successor origination, the
                                  // quarter after termination, or stated maturity
};

struct LoanPath {
    std::string path_id;  // facility_id of the chain's origin
    std::vector<PathMember> members;

    Quarter start() const { return members.front().active_from; }
    Quarter end() const { return members.back().active_until; }  // exclusive

    const Facility* active_at(Quarter q) const {
        for (const auto& m : members)
            if (q >= m.active_from && q < m.active_until) return m.facility;
        return nullptr;
    }
};

// Partitions facilities into amendment chains. A recorded termination quarter
// is the last quarter a contract is active. Every facility lands in exactly
// one path.
inline std::vector<LoanPath> build_loan_paths(
    std::span<const Facility> facilities,
    const std::map<std::string, Quarter>& termination_quarters = {}) {
    std::map<std::string, const Facility*> by_id;
    for (const auto& f : facilities) {
        if (!by_id.emplace(f.facility_id, &f).second)
            throw PathError("duplicate facility id '" + f.facility_id + "'");
    }

    std::map<std::string, const Facility*> successor_of;
    for (const auto& f : facilities) {
        if (!f.predecessor_id) continue;
        if (!by_id.count(*f.predecessor_id))
            throw PathError("dangling predecessor id '" + *f.predecessor_id +
                            "' on facility '" + f.facility_id + "'");
        if (!successor_of.emplace(*f.predecessor_id, &f).second)
            throw PathError("predecessor '" + *f.predecessor_id + "' claimed by multiple successors");
    }

    std::vector<LoanPath> paths;
    for (const auto& f : facilities) {
        if (f.predecessor_id) continue;  // only chain origins start a path
        LoanPath path;
        path.path_id = f.facility_id;
        const Facility* cur = &f;
        size_t guard = 0;
        while (cur) {
            if (++guard > facilities.size()) throw PathError("cycle detected in predecessor chain");
            PathMember m;
            m.facility = cur;
            m.active_from = cur->origination_quarter;
            Quarter until = cur->stated_maturity_quarter;
            if (auto it = termination_quarters.find(cur->facility_id); it != termination_quarters.end())
                until = std::min(until, it->second + 1);
            auto next = successor_of.find(cur->facility_id);
            const Facility* succ = next == successor_of.end() ? nullptr : next->second;
            if (succ) until = std::min(until, succ->origination_quarter);
            m.active_until = std::max(until, m.active_from);  // degenerate contracts get an empty interval
            path.members.push_back(m);
            cur = succ;
        }
        paths.push_back(std::move(path));
    }

    // Anything not reached from an origin sits on a cycle.
    size_t covered = 0;
    for (const auto& p : paths) covered += p.members.size();
    if (covered != facilities.size()) throw PathError("cycle detected in predecessor chain");
    return paths;
}

} // namespace revolv
