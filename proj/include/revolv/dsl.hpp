#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace revolv::dsl {

// ---------------------------------------------------------------------------
// Expression trees for pricing-criterion formulas.
//
// Grammar:
//   expr    := term (('+'|'-') term)*
//   term    := factor (('*'|'/') factor)*
//   factor  := number | variable | '(' expr ')'
//            | ('min'|'max') '{' expr ',' expr '}'
//            | 'roll4' '(' variable ')'
//   variable:= ident ['_{t-' k '}']      with k in 1..4
// ---------------------------------------------------------------------------

enum class BinaryOp { add, sub, mul, div };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    enum class Kind { number, variable, binary, minmax, roll4 };

    Kind kind = Kind::number;
    double number = 0.0;        // Kind::number
    std::string name;           // Kind::variable / Kind::roll4
    int lag = 0;                // Kind::variable, quarters back (0 = current)
    BinaryOp op = BinaryOp::add;
    bool is_min = true;         // Kind::minmax
    ExprPtr lhs, rhs;

    static ExprPtr make_number(double v) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::number;
        e->number = v;
        return e;
    }
    static ExprPtr make_variable(std::string name, int lag = 0) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::variable;
        e->name = std::move(name);
        e->lag = lag;
        return e;
    }
    static ExprPtr make_binary(BinaryOp op, ExprPtr l, ExprPtr r) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::binary;
        e->op = op;
        e->lhs = std::move(l);
        e->rhs = std::move(r);
        return e;
    }
    static ExprPtr make_minmax(bool is_min, ExprPtr l, ExprPtr r) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::minmax;
        e->is_min = is_min;
        e->lhs = std::move(l);
        e->rhs = std::move(r);
        return e;
    }
    static ExprPtr make_roll4(std::string name) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::roll4;
        e->name = std::move(name);
        return e;
    }
};

inline bool equal(const Expr& a, const Expr& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
    case Expr::Kind::number:   return a.number == b.number;
    case Expr::Kind::variable: return a.name == b.name && a.lag == b.lag;
    case Expr::Kind::binary:   return a.op == b.op && equal(*a.lhs, *b.lhs) && equal(*a.rhs, *b.rhs);
    case Expr::Kind::minmax:   return a.is_min == b.is_min && equal(*a.lhs, *b.lhs) && equal(*a.rhs, *b.rhs);
    case Expr::Kind::roll4:    return a.name == b.name;
    }
    return false;
}

inline bool equal(const ExprPtr& a, const ExprPtr& b) {
    if (!a || !b) return a == b;
    return equal(*a, *b);
}

// ---------------------------------------------------------------------------
// Known variables. The grammar is closed over what Table-C1-style criteria
// need: Compustat/Capital IQ accounting mnemonics, facility-level manual
// fields, the rating ordinal, a CDS spread, and quarters since origination.
// ---------------------------------------------------------------------------

inline const std::set<std::string>& known_variables() {
    static const std::set<std::string> vars = {
        // accounting mnemonics (quarterly)
        "atq", "ltq", "actq", "lctq", "dlcq", "dlttq", "oibdpq", "xintq",
        "capxq", "prccq", "cshoq", "ppentq", "txditcq", "pstkl", "cheq",
        "chq", "ibq", "dpq", "seqq", "ceqq", "dvq", "txpq", "req", "piq",
        "saleq", "intanq", "apq", "xacc", "drltq", "xrentq", "txtq",
        "lecrq", "totsrdbt", "totsrsecuredbt", "securedbt",
        // facility-level manual fields
        "borr", "borrbase", "lc", "unusedav", "facilityamt",
        // rating ordinal, CDS spread, time since origination
        "spltrm", "cds5y", "qtrsorig",
    };
    return vars;
}

// Income-statement (flow) mnemonics; per contract practice these are read on
// a four-quarter rolling basis when a criterion context is built from firm
// history (see pricing.hpp). Stocks are quarter-end values.
inline const std::set<std::string>& flow_variables() {
    static const std::set<std::string> vars = {
        "oibdpq", "xintq", "capxq", "ibq", "dpq", "dvq", "piq",
        "saleq", "xrentq", "txtq",
    };
    return vars;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& message, size_t position)
        : std::runtime_error(message + " at position " + std::to_string(position)),
          position_(position) {}
    size_t position() const { return position_; }

private:
    size_t position_;
};

namespace detail {

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    ExprPtr parse() {
        auto e = parse_expr();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected trailing input");
        return e;
    }

private:
    std::string_view text_;
    size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& message) const {
        throw ParseError(message, pos_);
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool eat(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) { ++pos_; return true; }
        return false;
    }

    void expect(char c) {
        if (!eat(c)) fail(std::string("expected '") + c + "'");
    }

    ExprPtr parse_expr() {
        auto lhs = parse_term();
        for (;;) {
            if (eat('+')) lhs = Expr::make_binary(BinaryOp::add, lhs, parse_term());
            else if (eat('-')) lhs = Expr::make_binary(BinaryOp::sub, lhs, parse_term());
            else return lhs;
        }
    }

    ExprPtr parse_term() {
        auto lhs = parse_factor();
        for (;;) {
            if (eat('*')) lhs = Expr::make_binary(BinaryOp::mul, lhs, parse_factor());
            else if (eat('/')) lhs = Expr::make_binary(BinaryOp::div, lhs, parse_factor());
            else return lhs;
        }
    }

    ExprPtr parse_factor() {
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end of input");
        const char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            auto inner = parse_expr();
            expect(')');
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) return parse_ident();
        fail("unexpected character");
    }

    ExprPtr parse_number() {
        const char* begin = text_.data() + pos_;
        const char* end = text_.data() + text_.size();
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(begin, end, value);
        if (ec != std::errc() || ptr == begin) fail("malformed number");
        pos_ = static_cast<size_t>(ptr - text_.data());
        return Expr::make_number(value);
    }

    ExprPtr parse_ident() {
        const size_t start = pos_;
        while (pos_ < text_.size() &&
               std::isalnum(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        std::string name(text_.substr(start, pos_ - start));

        if (name == "min" || name == "max") {
            const bool is_min = name == "min";
            expect('{');
            auto a = parse_expr();
            expect(',');
            auto b = parse_expr();
            expect('}');
            return Expr::make_minmax(is_min, a, b);
        }
        if (name == "roll4") {
            expect('(');
            skip_ws();
            const size_t vstart = pos_;
            while (pos_ < text_.size() &&
                   std::isalnum(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            std::string var(text_.substr(vstart, pos_ - vstart));
            if (var.empty()) fail("expected variable inside roll4(...)");
            if (!known_variables().count(var)) { pos_ = vstart; fail("unknown identifier '" + var + "'"); }
            if (!flow_variables().count(var)) { pos_ = vstart; fail("roll4 applies only to flow variables, got '" + var + "'"); }
            expect(')');
            return Expr::make_roll4(var);
        }

        if (!known_variables().count(name)) { pos_ = start; fail("unknown identifier '" + name + "'"); }

        int lag = 0;
        if (pos_ < text_.size() && text_[pos_] == '_') {
            // lag suffix: _{t-k}
            const size_t save = pos_;
            ++pos_;
            if (!eat('{')) { pos_ = save; fail("expected '{' in lag suffix"); }
            if (pos_ >= text_.size() || text_[pos_] != 't') fail("expected 't' in lag suffix");
            ++pos_;
            if (!eat('-')) fail("expected '-' in lag suffix");
            skip_ws();
            const size_t kstart = pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            if (pos_ == kstart) fail("expected lag depth");
            lag = std::stoi(std::string(text_.substr(kstart, pos_ - kstart)));
            if (lag < 1 || lag > 4) { pos_ = kstart; fail("lag depth must be in 1..4"); }
            expect('}');
        }
        return Expr::make_variable(std::move(name), lag);
    }
};

inline int precedence(BinaryOp op) {
    return (op == BinaryOp::add || op == BinaryOp::sub) ? 1 : 2;
}

inline std::string format_number(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

inline void print_to(const Expr& e, std::string& out, int parent_prec, bool right_child) {
    switch (e.kind) {
    case Expr::Kind::number:
        out += format_number(e.number);
        return;
    case Expr::Kind::variable:
        out += e.name;
        if (e.lag > 0) out += "_{t-" + std::to_string(e.lag) + "}";
        return;
    case Expr::Kind::roll4:
        out += "roll4(" + e.name + ")";
        return;
    case Expr::Kind::minmax:
        out += e.is_min ? "min{" : "max{";
        print_to(*e.lhs, out, 0, false);
        out += ",";
        print_to(*e.rhs, out, 0, false);
        out += "}";
        return;
    case Expr::Kind::binary: {
        const int prec = precedence(e.op);
        // All binary operators are left-associative, so a right child at
        // equal precedence needs parentheses to keep the tree shape.
        const bool parens = prec < parent_prec || (prec == parent_prec && right_child);
        if (parens) out += "(";
        print_to(*e.lhs, out, prec, false);
        switch (e.op) {
        case BinaryOp::add: out += "+"; break;
        case BinaryOp::sub: out += "-"; break;
        case BinaryOp::mul: out += "*"; break;
        case BinaryOp::div: out += "/"; break;
        }
        print_to(*e.rhs, out, prec, true);
        if (parens) out += ")";
        return;
    }
    }
}

} // namespace detail

inline ExprPtr parse_criterion(std::string_view text) {
    return detail::Parser(text).parse();
}

inline std::string print_criterion(const Expr& e) {
    std::string out;
    detail::print_to(e, out, 0, false);
    return out;
}

inline std::string print_criterion(const ExprPtr& e) { return print_criterion(*e); }

// ---------------------------------------------------------------------------
// Evaluation context: current values plus up to four quarters of history.
// Missing fields are explicit absences. Lookup applies the standard
// availability fallbacks:
//   - lc       -> 0 when absent
//   - unusedav -> (borrbase | facilityamt) - borr - lc when absent
// ---------------------------------------------------------------------------

class EvalContext {
public:
    static constexpr int max_lag = 4;

    void set(const std::string& name, double value, int lag = 0) {
        check_lag(lag);
        vars_[name][static_cast<size_t>(lag)] = value;
    }

    void clear(const std::string& name, int lag = 0) {
        check_lag(lag);
        auto it = vars_.find(name);
        if (it != vars_.end()) it->second[static_cast<size_t>(lag)].reset();
    }

    std::optional<double> raw(const std::string& name, int lag = 0) const {
        check_lag(lag);
        auto it = vars_.find(name);
        if (it == vars_.end()) return std::nullopt;
        return it->second[static_cast<size_t>(lag)];
    }

    std::optional<double> lookup(const std::string& name, int lag = 0) const {
        auto v = raw(name, lag);
        if (v) return v;
        if (name == "lc") return 0.0;  // absent letters of credit are zero
        if (name == "unusedav") {
            auto base = raw("borrbase", lag);
            if (!base) base = raw("facilityamt", lag);
            auto borr = raw("borr", lag);
            if (!base || !borr) return std::nullopt;
            const double lc = raw("lc", lag).value_or(0.0);
            return *base - *borr - lc;
        }
        return std::nullopt;
    }

private:
    static void check_lag(int lag) {
        if (lag < 0 || lag > max_lag) throw std::out_of_range("lag out of range 0..4");
    }

    std::map<std::string, std::array<std::optional<double>, max_lag + 1>> vars_;
};

// Standard arithmetic with undefined propagation; a zero denominator makes
// the whole criterion undefined (the observation is dropped, not priced).
inline std::optional<double> evaluate(const Expr& e, const EvalContext& ctx) {
    switch (e.kind) {
    case Expr::Kind::number:
        return e.number;
    case Expr::Kind::variable:
        return ctx.lookup(e.name, e.lag);
    case Expr::Kind::roll4: {
        double sum = 0.0;
        for (int lag = 0; lag < 4; ++lag) {
            auto v = ctx.lookup(e.name, lag);
            if (!v) return std::nullopt;
            sum += *v;
        }
        return sum;
    }
    case Expr::Kind::minmax: {
        auto a = evaluate(*e.lhs, ctx);
        auto b = evaluate(*e.rhs, ctx);
        if (!a || !b) return std::nullopt;
        return e.is_min ? std::min(*a, *b) : std::max(*a, *b);
    }
    case Expr::Kind::binary: {
        auto a = evaluate(*e.lhs, ctx);
        auto b = evaluate(*e.rhs, ctx);
        if (!a || !b) return std::nullopt;
        double out = 0.0;
        switch (e.op) {
        case BinaryOp::add: out = *a + *b; break;
        case BinaryOp::sub: out = *a - *b; break;
        case BinaryOp::mul: out = *a * *b; break;
        case BinaryOp::div:
            if (*b == 0.0) return std::nullopt;
            out = *a / *b;
            break;
        }
        if (!std::isfinite(out)) return std::nullopt;
        return out;
    }
    }
    return std::nullopt;
}

inline std::optional<double> evaluate(const ExprPtr& e, const EvalContext& ctx) {
    return evaluate(*e, ctx);
}

// ---------------------------------------------------------------------------
// Pricing grids
// ---------------------------------------------------------------------------

enum class GridColumn { libor_spread, abr_spread, commitment_fee, annual_fee, utilization_fee };

inline std::string_view grid_column_name(GridColumn c) {
    switch (c) {
    case GridColumn::libor_spread:   return "libor_spread";
    case GridColumn::abr_spread:     return "abr_spread";
    case GridColumn::commitment_fee: return "commitment_fee";
    case GridColumn::annual_fee:     return "annual_fee";
    case GridColumn::utilization_fee: return "utilization_fee";
    }
    return "?";
}

inline std::optional<GridColumn> grid_column_from_name(std::string_view name) {
    if (name == "libor_spread") return GridColumn::libor_spread;
    if (name == "abr_spread") return GridColumn::abr_spread;
    if (name == "commitment_fee") return GridColumn::commitment_fee;
    if (name == "annual_fee") return GridColumn::annual_fee;
    if (name == "utilization_fee") return GridColumn::utilization_fee;
    return std::nullopt;
}

struct GridRow {
    std::optional<double> libor_spread_bps;
    std::optional<double> abr_spread_bps;
    std::optional<double> commitment_fee_bps;
    std::optional<double> annual_fee_bps;
    std::optional<double> utilization_fee_bps;

    std::optional<double> column(GridColumn c) const {
        switch (c) {
        case GridColumn::libor_spread:   return libor_spread_bps;
        case GridColumn::abr_spread:     return abr_spread_bps;
        case GridColumn::commitment_fee: return commitment_fee_bps;
        case GridColumn::annual_fee:     return annual_fee_bps;
        case GridColumn::utilization_fee: return utilization_fee_bps;
        }
        return std::nullopt;
    }

    std::optional<double>& column_ref(GridColumn c) {
        switch (c) {
        case GridColumn::libor_spread:   return libor_spread_bps;
        case GridColumn::abr_spread:     return abr_spread_bps;
        case GridColumn::commitment_fee: return commitment_fee_bps;
        case GridColumn::annual_fee:     return annual_fee_bps;
        case GridColumn::utilization_fee: return utilization_fee_bps;
        }
        throw std::logic_error("bad column");
    }
};

// Levels per criterion are half-open intervals covering the whole line:
// thresholds {t0 < t1 < ...} define (-inf,t0), [t0,t1), ..., [t_last,+inf).
// A criterion with no thresholds has the single level (-inf,+inf).
struct PricingGrid {
    std::vector<ExprPtr> criteria;                 // 1..3
    std::vector<std::vector<double>> thresholds;   // one sorted vector per criterion
    std::vector<GridRow> cells;                    // row-major over level tuples

    size_t levels(size_t criterion) const { return thresholds[criterion].size() + 1; }

    size_t cell_count() const {
        size_t n = 1;
        for (size_t c = 0; c < thresholds.size(); ++c) n *= levels(c);
        return n;
    }
};

inline std::vector<std::string> validate_grid(const PricingGrid& grid) {
    std::vector<std::string> issues;
    if (grid.criteria.empty() || grid.criteria.size() > 3)
        issues.push_back("grid must have 1..3 criteria");
    if (grid.thresholds.size() != grid.criteria.size())
        issues.push_back("thresholds must match criteria count");
    for (size_t c = 0; c < grid.thresholds.size(); ++c) {
        const auto& ts = grid.thresholds[c];
        if (!std::is_sorted(ts.begin(), ts.end()) ||
            std::adjacent_find(ts.begin(), ts.end()) != ts.end())
            issues.push_back("criterion " + std::to_string(c) + " thresholds must be strictly increasing");
        for (double t : ts)
            if (!std::isfinite(t))
                issues.push_back("criterion " + std::to_string(c) + " has a non-finite threshold");
    }
    if (grid.thresholds.size() == grid.criteria.size() && !grid.criteria.empty() &&
        grid.cells.size() != grid.cell_count())
        issues.push_back("expected " + std::to_string(grid.cell_count()) + " cells, got " +
                         std::to_string(grid.cells.size()));
    return issues;
}

// Level membership: intervals are closed at the lower bound, open at the
// upper, so a value equal to a threshold belongs to the level above it.
inline size_t grid_level(const std::vector<double>& thresholds, double value) {
    return static_cast<size_t>(
        std::upper_bound(thresholds.begin(), thresholds.end(), value) - thresholds.begin());
}

inline std::optional<GridRow> resolve_grid(const PricingGrid& grid, const EvalContext& ctx) {
    size_t index = 0;
    for (size_t c = 0; c < grid.criteria.size(); ++c) {
        auto value = evaluate(grid.criteria[c], ctx);
        if (!value) return std::nullopt;
        index = index * grid.levels(c) + grid_level(grid.thresholds[c], *value);
    }
    if (index >= grid.cells.size()) throw std::logic_error("grid cell index out of range");
    return grid.cells[index];
}

} // namespace revolv::dsl
