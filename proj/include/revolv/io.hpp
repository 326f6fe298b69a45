#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "revolv/contract.hpp"
#include "revolv/csv.hpp"
#include "revolv/market.hpp"
#include "revolv/quarter.hpp"

namespace revolv::io {

using nlohmann::json;

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// JSON <-> contract types. Quarters travel as "2008Q3" strings, currency
// amounts as decimal strings (so input files never pick up float drift),
// basis points as numbers.
// ---------------------------------------------------------------------------

namespace detail {

inline Quarter quarter_from_json(const json& j, const std::string& what) {
    if (!j.is_string()) throw DataError(what + ": quarter must be a string like 2008Q3");
    auto q = Quarter::parse(j.get<std::string>());
    if (!q) throw DataError(what + ": bad quarter '" + j.get<std::string>() + "'");
    return *q;
}

inline double currency_from_json(const json& j, const std::string& what) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        auto v = csv::parse_double(j.get<std::string>());
        if (!v) throw DataError(what + ": bad decimal string '" + j.get<std::string>() + "'");
        return *v;
    }
    throw DataError(what + ": expected a number or decimal string");
}

inline std::string currency_to_json(double v) { return csv::format_double(v, 12); }

} // namespace detail

inline json to_json(const SpreadSpec& s) {
    json j;
    if (s.mode == SpreadSpec::Mode::fixed) {
        j["mode"] = "fixed";
        j["fixed_bps"] = *s.fixed_bps;
    } else {
        j["mode"] = "grid";
        j["grid_column"] = std::string(dsl::grid_column_name(*s.grid_column));
    }
    return j;
}

inline SpreadSpec spread_spec_from_json(const json& j) {
    SpreadSpec s;
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "fixed") {
        s.mode = SpreadSpec::Mode::fixed;
        s.fixed_bps = j.at("fixed_bps").get<double>();
    } else if (mode == "grid") {
        s.mode = SpreadSpec::Mode::grid;
        auto col = dsl::grid_column_from_name(j.at("grid_column").get<std::string>());
        if (!col) throw DataError("unknown grid column '" + j.at("grid_column").get<std::string>() + "'");
        s.grid_column = *col;
    } else {
        throw DataError("spread mode must be fixed or grid, got '" + mode + "'");
    }
    return s;
}

inline json to_json(const dsl::PricingGrid& g) {
    json j;
    j["criteria"] = json::array();
    for (const auto& c : g.criteria) j["criteria"].push_back(dsl::print_criterion(c));
    j["levels"] = g.thresholds;
    j["cells"] = json::array();
    for (const auto& cell : g.cells) {
        json row = json::object();
        for (auto col : {dsl::GridColumn::libor_spread, dsl::GridColumn::abr_spread,
                         dsl::GridColumn::commitment_fee, dsl::GridColumn::annual_fee,
                         dsl::GridColumn::utilization_fee}) {
            if (auto v = cell.column(col)) row[std::string(dsl::grid_column_name(col))] = *v;
        }
        j["cells"].push_back(std::move(row));
    }
    return j;
}

inline dsl::PricingGrid grid_from_json(const json& j) {
    dsl::PricingGrid g;
    for (const auto& text : j.at("criteria"))
        g.criteria.push_back(dsl::parse_criterion(text.get<std::string>()));
    g.thresholds = j.at("levels").get<std::vector<std::vector<double>>>();
    for (const auto& row : j.at("cells")) {
        dsl::GridRow cell;
        for (auto it = row.begin(); it != row.end(); ++it) {
            auto col = dsl::grid_column_from_name(it.key());
            if (!col) throw DataError("unknown grid column '" + it.key() + "'");
            cell.column_ref(*col) = it.value().get<double>();
        }
        g.cells.push_back(cell);
    }
    auto issues = dsl::validate_grid(g);
    if (!issues.empty()) throw DataError("invalid pricing grid: " + issues.front());
    return g;
}

inline json to_json(const Facility& f) {
    json j;
    j["facility_id"] = f.facility_id;
    j["borrower_id"] = f.borrower_id;
    j["lender_id"] = f.lender_id;
    j["origination_quarter"] = f.origination_quarter.str();
    j["stated_maturity_quarter"] = f.stated_maturity_quarter.str();
    j["commitment"] = detail::currency_to_json(f.commitment);
    j["secured"] = f.secured;
    j["syndicated"] = f.syndicated;
    j["restructuring_purpose"] = f.restructuring_purpose;
    j["has_borrowing_base"] = f.has_borrowing_base;
    j["has_lc_program"] = f.has_lc_program;

    j["base_rate_options"] = json::array();
    for (const auto& o : f.base_rate_options) {
        json jo;
        jo["kind"] = o.kind == LoanType::libor ? "LIBOR" : "ABR";
        if (o.libor_tenor) {
            switch (*o.libor_tenor) {
            case LiborTenor::m1: jo["libor_tenor"] = "1m"; break;
            case LiborTenor::m2: jo["libor_tenor"] = "2m"; break;
            case LiborTenor::m3: jo["libor_tenor"] = "3m"; break;
            case LiborTenor::m6: jo["libor_tenor"] = "6m"; break;
            case LiborTenor::borrower_choice: jo["libor_tenor"] = "borrower_choice"; break;
            }
        }
        if (!o.abr_candidates.empty()) {
            jo["abr_candidates"] = json::array();
            for (const auto& c : o.abr_candidates) {
                json jc;
                switch (c.reference) {
                case AbrReference::prime: jc["reference"] = "prime"; break;
                case AbrReference::fed_funds: jc["reference"] = "fed_funds"; break;
                case AbrReference::fixed_pct: jc["reference"] = "fixed_pct"; break;
                case AbrReference::libor_1m: jc["reference"] = "libor_1m"; break;
                case AbrReference::libor_3m: jc["reference"] = "libor_3m"; break;
                }
                if (c.add_on_bps) jc["add_on_bps"] = *c.add_on_bps;
                jo["abr_candidates"].push_back(std::move(jc));
            }
        }
        if (o.rate_floor_pct) jo["rate_floor"] = *o.rate_floor_pct;
        if (o.total_rate_floor_pct) jo["total_rate_floor"] = *o.total_rate_floor_pct;
        jo["spread"] = to_json(o.spread);
        j["base_rate_options"].push_back(std::move(jo));
    }
    if (f.fixed_annual_rate_pct) j["fixed_annual_rate_pct"] = *f.fixed_annual_rate_pct;

    json fees = json::object();
    if (f.fee_schedule.commitment_fee) fees["commitment_fee"] = to_json(*f.fee_schedule.commitment_fee);
    if (f.fee_schedule.annual_fee) fees["annual_fee"] = to_json(*f.fee_schedule.annual_fee);
    if (f.fee_schedule.utilization_fee) {
        fees["utilization_fee"] = {{"spread", to_json(f.fee_schedule.utilization_fee->spread)},
                                   {"threshold", f.fee_schedule.utilization_fee->threshold}};
    }
    if (f.fee_schedule.upfront_fee) {
        fees["upfront_fee"] = {{"amount", detail::currency_to_json(f.fee_schedule.upfront_fee->amount)},
                               {"paid_quarter", f.fee_schedule.upfront_fee->paid_quarter.str()}};
    }
    j["fee_schedule"] = std::move(fees);

    if (f.pricing_grid) j["pricing_grid"] = to_json(*f.pricing_grid);
    j["default_terms"] = {{"default_margin_bps", f.default_terms.default_margin_bps},
                          {"restrict_to_abr", f.default_terms.restrict_to_abr}};
    j["loan_path_id"] = f.loan_path_id;
    if (f.predecessor_id) j["predecessor_id"] = *f.predecessor_id;
    return j;
}

inline Facility facility_from_json(const json& j) {
    Facility f;
    f.facility_id = j.at("facility_id").get<std::string>();
    f.borrower_id = j.at("borrower_id").get<std::string>();
    f.lender_id = j.at("lender_id").get<std::string>();
    f.origination_quarter = detail::quarter_from_json(j.at("origination_quarter"), f.facility_id);
    f.stated_maturity_quarter =
        detail::quarter_from_json(j.at("stated_maturity_quarter"), f.facility_id);
    f.commitment = detail::currency_from_json(j.at("commitment"), f.facility_id + ".commitment");
    f.secured = j.value("secured", false);
    f.syndicated = j.value("syndicated", false);
    f.restructuring_purpose = j.value("restructuring_purpose", false);
    f.has_borrowing_base = j.value("has_borrowing_base", false);
    f.has_lc_program = j.value("has_lc_program", false);

    if (j.contains("base_rate_options")) {
        for (const auto& jo : j.at("base_rate_options")) {
            BaseRateOption o;
            const std::string kind = jo.at("kind").get<std::string>();
            if (kind == "LIBOR") o.kind = LoanType::libor;
            else if (kind == "ABR") o.kind = LoanType::abr;
            else throw DataError(f.facility_id + ": option kind must be LIBOR or ABR");
            if (jo.contains("libor_tenor")) {
                const std::string t = jo.at("libor_tenor").get<std::string>();
                if (t == "1m") o.libor_tenor = LiborTenor::m1;
                else if (t == "2m") o.libor_tenor = LiborTenor::m2;
                else if (t == "3m") o.libor_tenor = LiborTenor::m3;
                else if (t == "6m") o.libor_tenor = LiborTenor::m6;
                else if (t == "borrower_choice") o.libor_tenor = LiborTenor::borrower_choice;
                else throw DataError(f.facility_id + ": bad libor tenor '" + t + "'");
            }
            if (jo.contains("abr_candidates")) {
                for (const auto& jc : jo.at("abr_candidates")) {
                    AbrCandidate c;
                    const std::string ref = jc.at("reference").get<std::string>();
                    if (ref == "prime") c.reference = AbrReference::prime;
                    else if (ref == "fed_funds") c.reference = AbrReference::fed_funds;
                    else if (ref == "fixed_pct") c.reference = AbrReference::fixed_pct;
                    else if (ref == "libor_1m") c.reference = AbrReference::libor_1m;
                    else if (ref == "libor_3m") c.reference = AbrReference::libor_3m;
                    else throw DataError(f.facility_id + ": bad ABR reference '" + ref + "'");
                    if (jc.contains("add_on_bps")) c.add_on_bps = jc.at("add_on_bps").get<double>();
                    o.abr_candidates.push_back(c);
                }
            }
            if (jo.contains("rate_floor")) o.rate_floor_pct = jo.at("rate_floor").get<double>();
            if (jo.contains("total_rate_floor"))
                o.total_rate_floor_pct = jo.at("total_rate_floor").get<double>();
            o.spread = spread_spec_from_json(jo.at("spread"));
            f.base_rate_options.push_back(std::move(o));
        }
    }
    if (j.contains("fixed_annual_rate_pct"))
        f.fixed_annual_rate_pct = j.at("fixed_annual_rate_pct").get<double>();

    if (j.contains("fee_schedule")) {
        const auto& fees = j.at("fee_schedule");
        if (fees.contains("commitment_fee"))
            f.fee_schedule.commitment_fee = spread_spec_from_json(fees.at("commitment_fee"));
        if (fees.contains("annual_fee"))
            f.fee_schedule.annual_fee = spread_spec_from_json(fees.at("annual_fee"));
        if (fees.contains("utilization_fee")) {
            UtilizationFee u;
            u.spread = spread_spec_from_json(fees.at("utilization_fee").at("spread"));
            u.threshold = fees.at("utilization_fee").at("threshold").get<double>();
            f.fee_schedule.utilization_fee = u;
        }
        if (fees.contains("upfront_fee")) {
            UpfrontFee u;
            u.amount = detail::currency_from_json(fees.at("upfront_fee").at("amount"),
                                                  f.facility_id + ".upfront");
            u.paid_quarter = detail::quarter_from_json(fees.at("upfront_fee").at("paid_quarter"),
                                                       f.facility_id + ".upfront");
            f.fee_schedule.upfront_fee = u;
        }
    }

    if (j.contains("pricing_grid") && !j.at("pricing_grid").is_null())
        f.pricing_grid = std::make_shared<dsl::PricingGrid>(grid_from_json(j.at("pricing_grid")));
    if (j.contains("default_terms")) {
        f.default_terms.default_margin_bps = j.at("default_terms").value("default_margin_bps", 0.0);
        f.default_terms.restrict_to_abr = j.at("default_terms").value("restrict_to_abr", false);
    }
    f.loan_path_id = j.value("loan_path_id", f.facility_id);
    if (j.contains("predecessor_id") && !j.at("predecessor_id").is_null())
        f.predecessor_id = j.at("predecessor_id").get<std::string>();
    return f;
}

// ---------------------------------------------------------------------------
// facilities.jsonl
// ---------------------------------------------------------------------------

inline void write_facilities_jsonl(const std::string& path, std::span<const Facility> facilities) {
    std::ofstream out(path, std::ios::binary);
    if (!out.good()) throw DataError("cannot write " + path);
    for (const auto& f : facilities) out << to_json(f).dump() << "\n";
}

inline std::vector<Facility> read_facilities_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw DataError("cannot open " + path);
    std::vector<Facility> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        try {
            out.push_back(facility_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const dsl::ParseError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

namespace detail {

inline Quarter parse_quarter_field(const csv::Table& t, size_t row, size_t col) {
    auto q = Quarter::parse(t.rows[row][col]);
    if (!q)
        throw csv::CsvError(t.path, row + 2, "bad quarter '" + t.rows[row][col] + "'");
    return *q;
}

inline size_t require_column(const csv::Table& t, const std::string& name) {
    auto c = t.column(name);
    if (!c) throw csv::CsvError(t.path, 1, "missing required column '" + name + "'");
    return *c;
}

} // namespace detail

// ---------------------------------------------------------------------------
// CSV alternative for flat facility fields. Pricing grids and multi-option
// base-rate menus are JSONL-only; a CSV row describes a fixed-spread
// single-LIBOR-option contract (or a fixed-rate one).
// ---------------------------------------------------------------------------

inline void write_facilities_csv(const std::string& path, std::span<const Facility> facilities,
                                 const std::string& comment = {}) {
    csv::Writer w(path);
    if (!comment.empty()) w.comment(comment);
    w.row({"facility_id", "borrower_id", "lender_id", "origination_quarter",
           "stated_maturity_quarter", "commitment", "secured", "syndicated",
           "restructuring_purpose", "has_borrowing_base", "has_lc_program",
           "fixed_annual_rate_pct", "libor_tenor", "libor_spread_bps", "rate_floor_pct",
           "commitment_fee_bps", "annual_fee_bps", "utilization_fee_bps", "utilization_threshold",
           "upfront_amount", "upfront_paid_quarter", "default_margin_bps", "restrict_to_abr",
           "loan_path_id", "predecessor_id"});
    for (const auto& f : facilities) {
        if (f.pricing_grid || f.base_rate_options.size() > 1 ||
            (!f.base_rate_options.empty() && f.base_rate_options[0].kind != LoanType::libor))
            throw DataError("facility '" + f.facility_id +
                            "' is not flat; grid-priced or multi-option contracts are JSONL-only");
        std::string tenor, spread, floor;
        if (!f.base_rate_options.empty()) {
            const auto& o = f.base_rate_options[0];
            switch (*o.libor_tenor) {
            case LiborTenor::m1: tenor = "1m"; break;
            case LiborTenor::m2: tenor = "2m"; break;
            case LiborTenor::m3: tenor = "3m"; break;
            case LiborTenor::m6: tenor = "6m"; break;
            case LiborTenor::borrower_choice: tenor = "borrower_choice"; break;
            }
            spread = csv::format_double(o.spread.fixed_bps.value());
            if (o.rate_floor_pct) floor = csv::format_double(*o.rate_floor_pct);
        }
        auto fee = [&](const std::optional<SpreadSpec>& s) {
            return s ? csv::format_double(s->fixed_bps.value()) : std::string();
        };
        const auto& fees = f.fee_schedule;
        w.row({f.facility_id, f.borrower_id, f.lender_id, f.origination_quarter.str(),
               f.stated_maturity_quarter.str(), csv::format_double(f.commitment),
               f.secured ? "1" : "0", f.syndicated ? "1" : "0", f.restructuring_purpose ? "1" : "0",
               f.has_borrowing_base ? "1" : "0", f.has_lc_program ? "1" : "0",
               f.fixed_annual_rate_pct ? csv::format_double(*f.fixed_annual_rate_pct) : "", tenor,
               spread, floor, fee(fees.commitment_fee), fee(fees.annual_fee),
               fees.utilization_fee ? csv::format_double(*fees.utilization_fee->spread.fixed_bps) : "",
               fees.utilization_fee ? csv::format_double(fees.utilization_fee->threshold) : "",
               fees.upfront_fee ? csv::format_double(fees.upfront_fee->amount) : "",
               fees.upfront_fee ? fees.upfront_fee->paid_quarter.str() : "",
               csv::format_double(f.default_terms.default_margin_bps),
               f.default_terms.restrict_to_abr ? "1" : "0", f.loan_path_id,
               f.predecessor_id.value_or("")});
    }
}

inline std::vector<Facility> read_facilities_csv(const std::string& path) {
    auto t = csv::read_file(path);
    auto col = [&](const char* name) { return detail::require_column(t, name); };
    const size_t c_id = col("facility_id"), c_borrower = col("borrower_id"),
                 c_lender = col("lender_id"), c_orig = col("origination_quarter"),
                 c_mat = col("stated_maturity_quarter"), c_commit = col("commitment");
    std::vector<Facility> out;
    for (size_t r = 0; r < t.rows.size(); ++r) {
        Facility f;
        f.facility_id = t.rows[r][c_id];
        f.borrower_id = t.rows[r][c_borrower];
        f.lender_id = t.rows[r][c_lender];
        f.origination_quarter = detail::parse_quarter_field(t, r, c_orig);
        f.stated_maturity_quarter = detail::parse_quarter_field(t, r, c_mat);
        auto commit = csv::parse_double(t.rows[r][c_commit]);
        if (!commit) throw csv::CsvError(path, r + 2, "bad commitment");
        f.commitment = *commit;

        auto flag = [&](const char* name) {
            auto c = t.column(name);
            return c && t.rows[r][*c] == "1";
        };
        auto num = [&](const char* name) -> std::optional<double> {
            auto c = t.column(name);
            if (!c || t.rows[r][*c].empty()) return std::nullopt;
            return csv::parse_double(t.rows[r][*c]);
        };
        auto text = [&](const char* name) -> std::string {
            auto c = t.column(name);
            return c ? t.rows[r][*c] : std::string();
        };
        f.secured = flag("secured");
        f.syndicated = flag("syndicated");
        f.restructuring_purpose = flag("restructuring_purpose");
        f.has_borrowing_base = flag("has_borrowing_base");
        f.has_lc_program = flag("has_lc_program");
        f.fixed_annual_rate_pct = num("fixed_annual_rate_pct");

        if (auto spread = num("libor_spread_bps")) {
            BaseRateOption o;
            o.kind = LoanType::libor;
            const std::string tenor = text("libor_tenor");
            if (tenor == "1m") o.libor_tenor = LiborTenor::m1;
            else if (tenor == "2m") o.libor_tenor = LiborTenor::m2;
            else if (tenor == "3m") o.libor_tenor = LiborTenor::m3;
            else if (tenor == "6m") o.libor_tenor = LiborTenor::m6;
            else o.libor_tenor = LiborTenor::borrower_choice;
            o.rate_floor_pct = num("rate_floor_pct");
            o.spread = SpreadSpec::fixed(*spread);
            f.base_rate_options.push_back(o);
        }
        if (auto cf = num("commitment_fee_bps")) f.fee_schedule.commitment_fee = SpreadSpec::fixed(*cf);
        if (auto af = num("annual_fee_bps")) f.fee_schedule.annual_fee = SpreadSpec::fixed(*af);
        if (auto uf = num("utilization_fee_bps")) {
            auto threshold = num("utilization_threshold");
            if (!threshold) throw csv::CsvError(path, r + 2, "utilization fee needs a threshold");
            f.fee_schedule.utilization_fee = UtilizationFee{SpreadSpec::fixed(*uf), *threshold};
        }
        if (auto amount = num("upfront_amount")) {
            auto pq = t.column("upfront_paid_quarter");
            if (!pq || t.rows[r][*pq].empty())
                throw csv::CsvError(path, r + 2, "upfront fee needs a paid quarter");
            f.fee_schedule.upfront_fee = UpfrontFee{*amount, detail::parse_quarter_field(t, r, *pq)};
        }
        f.default_terms.default_margin_bps = num("default_margin_bps").value_or(0.0);
        f.default_terms.restrict_to_abr = flag("restrict_to_abr");
        f.loan_path_id = text("loan_path_id");
        if (f.loan_path_id.empty()) f.loan_path_id = f.facility_id;
        const std::string pred = text("predecessor_id");
        if (!pred.empty()) f.predecessor_id = pred;
        out.push_back(std::move(f));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV files: firms, facility states, rates, lender returns
// ---------------------------------------------------------------------------

// Accounting mnemonics stored per firm-quarter; everything else is fixed
// columns. Amounts in USD millions, rates in annual percent.
inline const std::vector<std::string>& firm_csv_mnemonics() {
    static const std::vector<std::string> cols = {
        "atq", "ltq", "actq", "lctq", "dlcq", "dlttq", "oibdpq", "xintq", "capxq",
        "prccq", "cshoq", "ppentq", "txditcq", "pstkl", "cheq", "chq", "ibq", "dpq",
        "seqq", "ceqq", "dvq", "txpq", "req", "piq", "saleq", "intanq", "apq",
        "xacc", "drltq", "xrentq", "txtq", "lecrq", "totsrdbt", "totsrsecuredbt",
        "securedbt", "cds5y",
    };
    return cols;
}

inline void write_firms_csv(const std::string& path,
                            const std::map<std::string, std::map<Quarter, FirmQuarter>>& firms,
                            const std::string& comment = {}) {
    csv::Writer w(path);
    if (!comment.empty()) w.comment(comment);
    std::vector<std::string> header = {"firm_id", "quarter"};
    for (const auto& m : firm_csv_mnemonics()) header.push_back(m);
    header.insert(header.end(), {"rating", "daily_return_stddev_12m",
                                 "monthly_return_stddev_12m_annualized", "stock_return_12m"});
    w.row(header);
    for (const auto& [firm_id, by_q] : firms) {
        for (const auto& [q, fq] : by_q) {
            std::vector<std::string> row = {firm_id, q.str()};
            for (const auto& m : firm_csv_mnemonics()) {
                auto v = fq.field(m);
                row.push_back(v ? csv::format_double(*v) : "");
            }
            row.push_back(fq.rating ? std::to_string(*fq.rating) : "");
            row.push_back(fq.daily_return_stddev_12m ? csv::format_double(*fq.daily_return_stddev_12m) : "");
            row.push_back(fq.monthly_return_stddev_12m_annualized
                              ? csv::format_double(*fq.monthly_return_stddev_12m_annualized)
                              : "");
            row.push_back(fq.stock_return_12m ? csv::format_double(*fq.stock_return_12m) : "");
            w.row(row);
        }
    }
}

inline void write_states_csv(const std::string& path,
                             const std::map<std::string, std::map<Quarter, FacilityQuarterState>>& states,
                             const std::string& comment = {}) {
    csv::Writer w(path);
    if (!comment.empty()) w.comment(comment);
    w.row({"facility_id", "quarter", "outstanding_borrowings", "letters_of_credit",
           "borrowing_base", "technical_default", "waiver_granted", "termination_quarter"});
    for (const auto& [fid, by_q] : states) {
        for (const auto& [q, st] : by_q) {
            w.row({fid, q.str(), csv::format_double(st.outstanding_borrowings),
                   st.letters_of_credit ? csv::format_double(*st.letters_of_credit) : "",
                   st.borrowing_base ? csv::format_double(*st.borrowing_base) : "",
                   st.technical_default ? "1" : "0", st.waiver_granted ? "1" : "0",
                   st.termination_quarter ? st.termination_quarter->str() : ""});
        }
    }
}

inline void write_rates_csv(const std::string& path, const std::map<Quarter, RateEnvironment>& rates,
                            const std::string& comment = {}) {
    csv::Writer w(path);
    if (!comment.empty()) w.comment(comment);
    w.row({"quarter", "libor_1m", "libor_2m", "libor_3m", "libor_6m", "prime", "fed_funds",
           "tbill_3m", "market_index_return"});
    for (const auto& [q, r] : rates) {
        w.row({q.str(), csv::format_double(r.libor_1m), csv::format_double(r.libor_2m),
               csv::format_double(r.libor_3m), csv::format_double(r.libor_6m),
               csv::format_double(r.prime), csv::format_double(r.fed_funds),
               csv::format_double(r.tbill_3m), csv::format_double(r.market_index_return)});
    }
}

inline void write_lender_returns_csv(const std::string& path,
                                     const std::map<std::string, std::map<Quarter, double>>& returns,
                                     const std::string& comment = {}) {
    csv::Writer w(path);
    if (!comment.empty()) w.comment(comment);
    w.row({"lender_id", "quarter", "return"});
    for (const auto& [lid, by_q] : returns)
        for (const auto& [q, r] : by_q) w.row({lid, q.str(), csv::format_double(r)});
}

inline std::map<std::string, std::map<Quarter, FirmQuarter>> read_firms_csv(const std::string& path) {
    auto t = csv::read_file(path);
    const size_t id_col = detail::require_column(t, "firm_id");
    const size_t q_col = detail::require_column(t, "quarter");
    std::map<std::string, std::map<Quarter, FirmQuarter>> out;
    for (size_t r = 0; r < t.rows.size(); ++r) {
        FirmQuarter fq;
        fq.firm_id = t.rows[r][id_col];
        fq.quarter = detail::parse_quarter_field(t, r, q_col);
        for (size_t c = 0; c < t.header.size(); ++c) {
            const std::string& name = t.header[c];
            const std::string& field = t.rows[r][c];
            if (field.empty() || c == id_col || c == q_col) continue;
            if (name == "rating") {
                auto v = csv::parse_int(field);
                if (!v || *v < 1 || *v > 22)
                    throw csv::CsvError(path, r + 2, "rating ordinal must be 1..22");
                fq.rating = static_cast<int>(*v);
            } else if (name == "daily_return_stddev_12m") {
                fq.daily_return_stddev_12m = csv::parse_double(field);
            } else if (name == "monthly_return_stddev_12m_annualized") {
                fq.monthly_return_stddev_12m_annualized = csv::parse_double(field);
            } else if (name == "stock_return_12m") {
                fq.stock_return_12m = csv::parse_double(field);
            } else {
                auto v = csv::parse_double(field);
                if (!v) throw csv::CsvError(path, r + 2, "bad number in column " + name);
                fq.fields[name] = *v;
            }
        }
        auto& by_q = out[fq.firm_id];
        if (!by_q.emplace(fq.quarter, fq).second)
            throw csv::CsvError(path, r + 2,
                                "duplicate firm-quarter (" + fq.firm_id + ", " + fq.quarter.str() + ")");
    }
    return out;
}

inline std::map<std::string, std::map<Quarter, FacilityQuarterState>> read_states_csv(
    const std::string& path) {
    auto t = csv::read_file(path);
    const size_t id_col = detail::require_column(t, "facility_id");
    const size_t q_col = detail::require_column(t, "quarter");
    const size_t out_col = detail::require_column(t, "outstanding_borrowings");
    auto lc_col = t.column("letters_of_credit");
    auto bb_col = t.column("borrowing_base");
    auto td_col = t.column("technical_default");
    auto wv_col = t.column("waiver_granted");
    auto term_col = t.column("termination_quarter");

    std::map<std::string, std::map<Quarter, FacilityQuarterState>> out;
    for (size_t r = 0; r < t.rows.size(); ++r) {
        FacilityQuarterState st;
        st.facility_id = t.rows[r][id_col];
        st.quarter = detail::parse_quarter_field(t, r, q_col);
        auto ob = csv::parse_double(t.rows[r][out_col]);
        if (!ob) throw csv::CsvError(path, r + 2, "bad outstanding_borrowings");
        st.outstanding_borrowings = *ob;
        if (lc_col && !t.rows[r][*lc_col].empty()) st.letters_of_credit = csv::parse_double(t.rows[r][*lc_col]);
        if (bb_col && !t.rows[r][*bb_col].empty()) st.borrowing_base = csv::parse_double(t.rows[r][*bb_col]);
        if (td_col) st.technical_default = t.rows[r][*td_col] == "1";
        if (wv_col) st.waiver_granted = t.rows[r][*wv_col] == "1";
        if (term_col && !t.rows[r][*term_col].empty())
            st.termination_quarter = detail::parse_quarter_field(t, r, *term_col);
        auto issues = validate_state(st);
        if (!issues.empty()) throw csv::CsvError(path, r + 2, issues.front());
        auto& by_q = out[st.facility_id];
        if (!by_q.emplace(st.quarter, st).second)
            throw csv::CsvError(path, r + 2, "duplicate facility-quarter (" + st.facility_id + ", " +
                                                 st.quarter.str() + ")");
    }
    return out;
}

inline std::map<Quarter, RateEnvironment> read_rates_csv(const std::string& path) {
    auto t = csv::read_file(path);
    const size_t q_col = detail::require_column(t, "quarter");
    std::map<Quarter, RateEnvironment> out;
    auto need = [&](const char* name) { return detail::require_column(t, name); };
    const size_t c1 = need("libor_1m"), c2 = need("libor_2m"), c3 = need("libor_3m"),
                 c6 = need("libor_6m"), cp = need("prime"), cf = need("fed_funds"),
                 ct = need("tbill_3m"), cm = need("market_index_return");
    for (size_t r = 0; r < t.rows.size(); ++r) {
        RateEnvironment env;
        env.quarter = detail::parse_quarter_field(t, r, q_col);
        auto num = [&](size_t col) {
            auto v = csv::parse_double(t.rows[r][col]);
            if (!v) throw csv::CsvError(path, r + 2, "bad rate in column " + t.header[col]);
            return *v;
        };
        env.libor_1m = num(c1);
        env.libor_2m = num(c2);
        env.libor_3m = num(c3);
        env.libor_6m = num(c6);
        env.prime = num(cp);
        env.fed_funds = num(cf);
        env.tbill_3m = num(ct);
        env.market_index_return = num(cm);
        if (!out.emplace(env.quarter, env).second)
            throw csv::CsvError(path, r + 2, "duplicate rate quarter " + env.quarter.str());
    }
    return out;
}

inline std::map<std::string, std::map<Quarter, double>> read_lender_returns_csv(
    const std::string& path) {
    auto t = csv::read_file(path);
    const size_t id_col = detail::require_column(t, "lender_id");
    const size_t q_col = detail::require_column(t, "quarter");
    const size_t r_col = detail::require_column(t, "return");
    std::map<std::string, std::map<Quarter, double>> out;
    for (size_t r = 0; r < t.rows.size(); ++r) {
        auto v = csv::parse_double(t.rows[r][r_col]);
        if (!v) throw csv::CsvError(path, r + 2, "bad return value");
        auto q = detail::parse_quarter_field(t, r, q_col);
        if (!out[t.rows[r][id_col]].emplace(q, *v).second)
            throw csv::CsvError(path, r + 2, "duplicate lender-quarter");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Panel ingestion with referential-integrity checks
// ---------------------------------------------------------------------------

struct IngestPaths {
    std::string facilities_jsonl;
    std::string firms_csv;
    std::string states_csv;
    std::string rates_csv;
    std::string lender_returns_csv;  // optional
};

inline Panel ingest_panel(const IngestPaths& paths) {
    Panel panel;
    const bool csv_catalog =
        paths.facilities_jsonl.size() > 4 &&
        paths.facilities_jsonl.substr(paths.facilities_jsonl.size() - 4) == ".csv";
    panel.facilities = csv_catalog ? read_facilities_csv(paths.facilities_jsonl)
                                   : read_facilities_jsonl(paths.facilities_jsonl);
    panel.firms = read_firms_csv(paths.firms_csv);
    panel.states = read_states_csv(paths.states_csv);
    panel.rates = read_rates_csv(paths.rates_csv);
    if (!paths.lender_returns_csv.empty() && std::filesystem::exists(paths.lender_returns_csv))
        panel.lender_returns = read_lender_returns_csv(paths.lender_returns_csv);

    std::set<std::string> facility_ids;
    for (const auto& f : panel.facilities) {
        if (!facility_ids.insert(f.facility_id).second)
            throw DataError("duplicate facility id '" + f.facility_id + "'");
    }
    for (const auto& f : panel.facilities) {
        if (!panel.firms.count(f.borrower_id))
            throw DataError("facility '" + f.facility_id + "' references unknown borrower '" +
                            f.borrower_id + "'");
        if (f.predecessor_id && !facility_ids.count(*f.predecessor_id))
            throw DataError("facility '" + f.facility_id + "' references unknown predecessor '" +
                            *f.predecessor_id + "'");
        auto issues = validate_facility(f);
        if (!issues.empty())
            throw DataError("facility '" + f.facility_id + "' invalid: " + issues.front());
    }
    for (const auto& [fid, by_q] : panel.states) {
        if (!facility_ids.count(fid))
            throw DataError("state rows reference unknown facility '" + fid + "'");
    }
    return panel;
}

} // namespace revolv::io
