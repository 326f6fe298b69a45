#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "revolv/contract.hpp"
#include "revolv/quarter.hpp"

namespace revolv {

// One firm's quarterly accounting fields, rating, and equity statistics.
// Accounting fields are sparse; a missing field is an explicit absence.
struct FirmQuarter {
    std::string firm_id;
    Quarter quarter;
    std::map<std::string, double> fields;  // by Compustat-style mnemonic, USD millions
    std::optional<int> rating;             // ordinal: AAA=1 .. D=22; absent = unrated
    std::optional<double> daily_return_stddev_12m;             // fraction / day
    std::optional<double> monthly_return_stddev_12m_annualized;  // fraction / year
    std::optional<double> stock_return_12m;                    // fraction

    std::optional<double> field(const std::string& name) const {
        auto it = fields.find(name);
        if (it == fields.end()) return std::nullopt;
        return it->second;
    }
};

// Quarter-end usage state of one facility.
struct FacilityQuarterState {
    std::string facility_id;
    Quarter quarter;
    double outstanding_borrowings = 0.0;  // USD millions
    std::optional<double> letters_of_credit;
    std::optional<double> borrowing_base;
    bool technical_default = false;
    bool waiver_granted = false;
    std::optional<Quarter> termination_quarter;
};

inline std::vector<std::string> validate_state(const FacilityQuarterState& s) {
    std::vector<std::string> v;
    if (s.outstanding_borrowings < 0.0) v.push_back("outstanding >= 0");
    if (s.letters_of_credit && *s.letters_of_credit < 0.0) v.push_back("letters_of_credit >= 0");
    if (s.borrowing_base && *s.borrowing_base < 0.0) v.push_back("borrowing_base >= 0");
    if (s.waiver_granted && !s.technical_default) v.push_back("waiver implies technical_default");
    return v;
}

// Rates as annual percent; market index return as a quarterly fraction.
struct RateEnvironment {
    Quarter quarter;
    double libor_1m = 0.0;
    double libor_2m = 0.0;
    double libor_3m = 0.0;
    double libor_6m = 0.0;
    double prime = 0.0;
    double fed_funds = 0.0;
    double tbill_3m = 0.0;
    double market_index_return = 0.0;

    double libor(LiborTenor tenor) const {
        switch (tenor) {
        case LiborTenor::m1: return libor_1m;
        case LiborTenor::m2: return libor_2m;
        case LiborTenor::m3: return libor_3m;
        case LiborTenor::m6: return libor_6m;
        case LiborTenor::borrower_choice:
            return std::min(std::min(libor_1m, libor_2m), std::min(libor_3m, libor_6m));
        }
        throw std::logic_error("bad tenor");
    }
};

// ---------------------------------------------------------------------------
// Firm-quarter control variables
// ---------------------------------------------------------------------------

enum class ControlPolicy {
    rolling_avg,       // quarterly values averaged over t..t-3
    annualized_flows,  // current stocks, flow variables smoothed over t..t-3
};

struct ControlSet {
    std::optional<double> leverage;              // inverse debt-to-EBITDA
    std::optional<double> coverage;
    std::optional<double> capital_expenditures;
    std::optional<double> net_worth;
    std::optional<double> current_ratio;
    std::optional<double> profitability;
    std::optional<double> size;                  // log atq
    std::optional<double> market_to_book;
    std::optional<double> tangibility;
    std::optional<double> kz_index;
    std::optional<double> monitoring_cost;       // Sloan accruals
    std::optional<double> z_score;
    ControlPolicy policy = ControlPolicy::rolling_avg;

    bool complete_for_regression() const {
        // z_score is the alternative risk measure, not a regressor.
        return leverage && coverage && capital_expenditures && net_worth && current_ratio &&
               profitability && size && market_to_book && tangibility && kz_index &&
               monitoring_cost;
    }
};

namespace detail {

using OptD = std::optional<double>;

inline OptD ratio(OptD num, OptD den) {
    if (!num || !den || *den == 0.0) return std::nullopt;
    return *num / *den;
}

inline OptD add(OptD a, OptD b) {
    if (!a || !b) return std::nullopt;
    return *a + *b;
}

inline OptD sub(OptD a, OptD b) {
    if (!a || !b) return std::nullopt;
    return *a - *b;
}

// history is sorted ascending; at(history, k) is the value k quarters back
// from the final entry.
inline const FirmQuarter* back(std::span<const FirmQuarter> h, int lag) {
    if (lag < 0 || static_cast<size_t>(lag) >= h.size()) return nullptr;
    return &h[h.size() - 1 - static_cast<size_t>(lag)];
}

inline OptD fld(std::span<const FirmQuarter> h, int lag, const std::string& name) {
    const FirmQuarter* fq = back(h, lag);
    if (!fq) return std::nullopt;
    return fq->field(name);
}

inline OptD mean4(std::span<const FirmQuarter> h, int lag0, const std::string& name) {
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
        auto v = fld(h, lag0 + k, name);
        if (!v) return std::nullopt;
        sum += *v;
    }
    return sum / 4.0;
}

} // namespace detail

// Equity statistics derived from a trailing-twelve-month daily price series.
// Simple (not log) returns, sample standard deviation with the n-1
// denominator; monthly returns aggregate 21 trading days and annualize with
// sqrt(12).
struct EquityStats {
    double daily_return_stddev = 0.0;
    double monthly_return_stddev_annualized = 0.0;
    double return_12m = 0.0;
};

inline std::optional<EquityStats> compute_equity_stats(std::span<const double> daily_prices_12m) {
    const size_t n = daily_prices_12m.size();
    if (n < 43) return std::nullopt;  // need at least two 21-day months of returns
    for (double p : daily_prices_12m)
        if (!(p > 0.0)) return std::nullopt;

    auto sample_sd = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double ss = 0.0;
        for (double x : xs) ss += (x - mean) * (x - mean);
        return std::sqrt(ss / (static_cast<double>(xs.size()) - 1.0));
    };

    std::vector<double> daily;
    daily.reserve(n - 1);
    for (size_t i = 1; i < n; ++i)
        daily.push_back(daily_prices_12m[i] / daily_prices_12m[i - 1] - 1.0);

    std::vector<double> monthly;
    for (size_t end = n - 1; end >= 21; end -= 21) {
        monthly.push_back(daily_prices_12m[end] / daily_prices_12m[end - 21] - 1.0);
        if (end < 42) break;
    }

    EquityStats out;
    out.daily_return_stddev = sample_sd(daily);
    out.monthly_return_stddev_annualized = sample_sd(monthly) * std::sqrt(12.0);
    out.return_12m = daily_prices_12m.back() / daily_prices_12m.front() - 1.0;
    return out;
}

// Market value of equity, prccq * cshoq.
inline std::optional<double> equity_market_value(const FirmQuarter& fq) {
    auto p = fq.field("prccq");
    auto n = fq.field("cshoq");
    if (!p || !n) return std::nullopt;
    return *p * *n;
}

// Altman Z-score on a single quarter's fields.
inline std::optional<double> compute_zscore(const FirmQuarter& fq) {
    using detail::ratio;
    auto atq = fq.field("atq");
    auto ltq = fq.field("ltq");
    auto wc = detail::sub(fq.field("actq"), fq.field("lctq"));
    auto t1 = ratio(wc, atq);
    auto t2 = ratio(fq.field("req"), atq);
    auto t3 = ratio(fq.field("piq"), atq);
    auto t4 = ratio(equity_market_value(fq), ltq);
    auto t5 = ratio(fq.field("saleq"), atq);
    if (!t1 || !t2 || !t3 || !t4 || !t5) return std::nullopt;
    return 1.2 * *t1 + 1.4 * *t2 + 3.3 * *t3 + 0.6 * *t4 + 0.999 * *t5;
}

// The five-term Kaplan-Zingales linearization from its ratio terms.
inline double kz_from_ratios(double cash_flow_over_k, double q, double leverage,
                             double dividends_over_k, double cash_over_k) {
    return -1.001909 * cash_flow_over_k + 0.2826389 * q + 3.139193 * leverage -
           39.3678 * dividends_over_k - 1.314759 * cash_over_k;
}

// KZ index at the final quarter of `history`. Needs lagged ppentq and a
// four-quarter dvq average; missing inputs make the result missing.
inline std::optional<double> compute_kz(std::span<const FirmQuarter> history) {
    using namespace detail;
    auto lag_ppentq = fld(history, 1, "ppentq");
    if (!lag_ppentq || *lag_ppentq == 0.0) return std::nullopt;
    auto ibq = fld(history, 0, "ibq");
    auto dpq = fld(history, 0, "dpq");
    auto atq = fld(history, 0, "atq");
    auto ceqq = fld(history, 0, "ceqq");
    auto txditcq = fld(history, 0, "txditcq");
    auto debt = add(fld(history, 0, "dlcq"), fld(history, 0, "dlttq"));
    auto seqq = fld(history, 0, "seqq");
    auto cheq = fld(history, 0, "cheq");
    auto dv4 = mean4(history, 0, "dvq");
    const FirmQuarter* cur = back(history, 0);
    auto emv = cur ? equity_market_value(*cur) : std::nullopt;
    if (!ibq || !dpq || !atq || !ceqq || !txditcq || !debt || !seqq || !cheq || !dv4 || !emv)
        return std::nullopt;
    if (*atq == 0.0 || *debt + *seqq == 0.0) return std::nullopt;
    const double cf_over_k = (*ibq + *dpq) / *lag_ppentq;
    const double q = (*atq - *ceqq - *txditcq + *emv) / *atq;
    const double lev = *debt / (*debt + *seqq);
    const double div_over_k = *dv4 / *lag_ppentq;
    const double cash_over_k = *cheq / *lag_ppentq;
    return kz_from_ratios(cf_over_k, q, lev, div_over_k, cash_over_k);
}

// Sloan accruals scaled by assets.
inline std::optional<double> compute_monitoring_cost(const FirmQuarter& cur, const FirmQuarter& prev) {
    using detail::sub;
    auto d = [&](const char* name) { return sub(cur.field(name), prev.field(name)); };
    auto d_actq = d("actq");
    auto d_cheq = d("cheq");
    auto d_lctq = d("lctq");
    auto d_dlcq = d("dlcq");
    auto d_txpq = d("txpq");
    auto dpq = cur.field("dpq");
    auto atq = cur.field("atq");
    if (!d_actq || !d_cheq || !d_lctq || !d_dlcq || !d_txpq || !dpq || !atq || *atq == 0.0)
        return std::nullopt;
    return ((*d_actq - *d_cheq) - (*d_lctq - *d_dlcq - *d_txpq) - *dpq) / *atq;
}

namespace detail {

// Single-quarter control values at `lag` quarters back from the end of the
// history. Leverage follows the contract wording: the inverse of the
// debt-to-EBITDA ratio, so zero EBITDA leaves it undefined rather than zero.
inline ControlSet controls_single_quarter(std::span<const FirmQuarter> h, int lag) {
    ControlSet out;
    auto atq = fld(h, lag, "atq");
    auto debt_ebitda = ratio(add(fld(h, lag, "dlcq"), fld(h, lag, "dlttq")), fld(h, lag, "oibdpq"));
    out.leverage = ratio(OptD(1.0), debt_ebitda);
    out.coverage = ratio(fld(h, lag, "oibdpq"), fld(h, lag, "xintq"));
    out.capital_expenditures = ratio(fld(h, lag, "capxq"), atq);
    out.net_worth = sub(atq, fld(h, lag, "ltq"));
    out.current_ratio = ratio(fld(h, lag, "actq"), fld(h, lag, "lctq"));
    out.profitability = ratio(fld(h, lag, "oibdpq"), atq);
    if (atq && *atq > 0.0) out.size = std::log(*atq);
    const FirmQuarter* cur = back(h, lag);
    if (cur) {
        auto emv = equity_market_value(*cur);
        // (atq - (atq - ltq - pstkl + txditcq) + prccq*cshoq) / atq
        auto inner = sub(sub(add(atq, OptD(0.0)), fld(h, lag, "ltq")),
                         sub(fld(h, lag, "pstkl"), fld(h, lag, "txditcq")));
        auto num = add(sub(atq, inner), emv);
        out.market_to_book = ratio(num, atq);
        out.tangibility = ratio(fld(h, lag, "ppentq"), atq);
        out.z_score = compute_zscore(*cur);
        const FirmQuarter* prev = back(h, lag + 1);
        if (prev) out.monitoring_cost = compute_monitoring_cost(*cur, *prev);
    }
    if (h.size() > static_cast<size_t>(lag))
        out.kz_index = compute_kz(h.subspan(0, h.size() - static_cast<size_t>(lag)));
    return out;
}

template <typename Get>
inline OptD mean_over_4(Get get) {
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
        OptD v = get(k);
        if (!v) return std::nullopt;
        sum += *v;
    }
    return sum / 4.0;
}

} // namespace detail

class InsufficientHistory : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Control variables at the final quarter of `history` (sorted ascending,
// contiguous). rolling_avg averages the four quarterly values ending at t;
// annualized_flows keeps quarter-end stocks and smooths flow variables over
// the same window. Missing inputs make the affected control missing.
inline ControlSet compute_controls(std::span<const FirmQuarter> history, ControlPolicy policy) {
    if (history.size() < 4) throw InsufficientHistory("compute_controls needs >= 4 quarters");
    for (size_t i = 1; i < history.size(); ++i)
        if (history[i].quarter - history[i - 1].quarter != 1)
            throw InsufficientHistory("history must be contiguous quarters");

    using namespace detail;
    ControlSet out;
    out.policy = policy;

    if (policy == ControlPolicy::rolling_avg) {
        std::vector<ControlSet> quarters;
        for (int k = 0; k < 4; ++k) quarters.push_back(controls_single_quarter(history, k));
        auto avg = [&](OptD ControlSet::* member) {
            return mean_over_4([&](int k) { return quarters[static_cast<size_t>(k)].*member; });
        };
        out.leverage = avg(&ControlSet::leverage);
        out.coverage = avg(&ControlSet::coverage);
        out.capital_expenditures = avg(&ControlSet::capital_expenditures);
        out.net_worth = avg(&ControlSet::net_worth);
        out.current_ratio = avg(&ControlSet::current_ratio);
        out.profitability = avg(&ControlSet::profitability);
        out.size = avg(&ControlSet::size);
        out.market_to_book = avg(&ControlSet::market_to_book);
        out.tangibility = avg(&ControlSet::tangibility);
        out.kz_index = avg(&ControlSet::kz_index);
        out.monitoring_cost = avg(&ControlSet::monitoring_cost);
        out.z_score = avg(&ControlSet::z_score);
        return out;
    }

    // annualized_flows: flow variables enter as their four-quarter mean (the
    // quarterly equivalent of summed annual flows), stocks at quarter-end.
    auto flow = [&](const char* name) { return mean4(history, 0, name); };
    auto stock = [&](const char* name) { return fld(history, 0, name); };
    auto atq = stock("atq");
    auto debt = add(stock("dlcq"), stock("dlttq"));
    auto debt_ebitda = ratio(debt, flow("oibdpq"));
    out.leverage = ratio(OptD(1.0), debt_ebitda);
    out.coverage = ratio(flow("oibdpq"), flow("xintq"));
    out.capital_expenditures = ratio(flow("capxq"), atq);
    out.net_worth = sub(atq, stock("ltq"));
    out.current_ratio = ratio(stock("actq"), stock("lctq"));
    out.profitability = ratio(flow("oibdpq"), atq);
    if (atq && *atq > 0.0) out.size = std::log(*atq);
    const FirmQuarter& cur = history.back();
    auto emv = equity_market_value(cur);
    auto inner = sub(sub(add(atq, OptD(0.0)), stock("ltq")), sub(stock("pstkl"), stock("txditcq")));
    out.market_to_book = ratio(add(sub(atq, inner), emv), atq);
    out.tangibility = ratio(stock("ppentq"), atq);

    // Four-quarter deltas telescope, so the smoothed accrual numerator is the
    // mean of the quarterly Sloan numerators over the current assets base.
    {
        auto d4 = [&](const char* name) {
            auto now = fld(history, 0, name);
            auto then = fld(history, 4, name);
            if (!now || !then) return OptD{};
            return OptD((*now - *then) / 4.0);
        };
        auto da = d4("actq"), dc = d4("cheq"), dl = d4("lctq"), dd = d4("dlcq"), dt = d4("txpq");
        auto dpq = flow("dpq");
        if (da && dc && dl && dd && dt && dpq && atq && *atq != 0.0)
            out.monitoring_cost = ((*da - *dc) - (*dl - *dd - *dt) - *dpq) / *atq;
    }

    {
        auto lag_ppentq = fld(history, 1, "ppentq");
        auto ibq = flow("ibq");
        auto dpq = flow("dpq");
        auto dv4 = mean4(history, 0, "dvq");
        auto ceqq = stock("ceqq");
        auto txditcq = stock("txditcq");
        auto seqq = stock("seqq");
        auto cheq = stock("cheq");
        if (lag_ppentq && *lag_ppentq != 0.0 && ibq && dpq && dv4 && atq && *atq != 0.0 && ceqq &&
            txditcq && seqq && debt && *debt + *seqq != 0.0 && cheq && emv) {
            out.kz_index = kz_from_ratios((*ibq + *dpq) / *lag_ppentq,
                                          (*atq - *ceqq - *txditcq + *emv) / *atq,
                                          *debt / (*debt + *seqq), *dv4 / *lag_ppentq,
                                          *cheq / *lag_ppentq);
        }
    }

    {
        auto wc = sub(stock("actq"), stock("lctq"));
        auto t1 = ratio(wc, atq);
        auto t2 = ratio(stock("req"), atq);
        auto t3 = ratio(flow("piq"), atq);
        auto t4 = ratio(emv, stock("ltq"));
        auto t5 = ratio(flow("saleq"), atq);
        if (t1 && t2 && t3 && t4 && t5)
            out.z_score = 1.2 * *t1 + 1.4 * *t2 + 3.3 * *t3 + 0.6 * *t4 + 0.999 * *t5;
    }
    return out;
}

// ---------------------------------------------------------------------------
// The assembled in-memory panel (immutable once ingested).
// ---------------------------------------------------------------------------

struct Panel {
    std::vector<Facility> facilities;
    std::map<std::string, std::map<Quarter, FirmQuarter>> firms;
    std::map<std::string, std::map<Quarter, FacilityQuarterState>> states;
    std::map<Quarter, RateEnvironment> rates;
    std::map<std::string, std::map<Quarter, double>> lender_returns;  // quarterly fractions

    const Facility* facility(const std::string& id) const {
        for (const auto& f : facilities)
            if (f.facility_id == id) return &f;
        return nullptr;
    }

    const FirmQuarter* firm_quarter(const std::string& firm_id, Quarter q) const {
        auto it = firms.find(firm_id);
        if (it == firms.end()) return nullptr;
        auto jt = it->second.find(q);
        if (jt == it->second.end()) return nullptr;
        return &jt->second;
    }

    const FacilityQuarterState* state(const std::string& facility_id, Quarter q) const {
        auto it = states.find(facility_id);
        if (it == states.end()) return nullptr;
        auto jt = it->second.find(q);
        if (jt == it->second.end()) return nullptr;
        return &jt->second;
    }

    // Contiguous firm history ending at `until` (inclusive), longest
    // available window up to `max_len`.
    std::vector<FirmQuarter> firm_history(const std::string& firm_id, Quarter until,
                                          int max_len = 12) const {
        std::vector<FirmQuarter> out;
        auto it = firms.find(firm_id);
        if (it == firms.end()) return out;
        for (int k = max_len - 1; k >= 0; --k) {
            auto jt = it->second.find(until - k);
            if (jt == it->second.end()) {
                out.clear();
                continue;
            }
            out.push_back(jt->second);
        }
        return out;
    }

    std::map<std::string, Quarter> termination_quarters() const {
        std::map<std::string, Quarter> out;
        for (const auto& [fid, by_q] : states)
            for (const auto& [q, st] : by_q)
                if (st.termination_quarter) out.emplace(fid, *st.termination_quarter);
        return out;
    }
};

} // namespace revolv
