#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <future>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "revolv/dsl.hpp"

using namespace revolv::dsl;

namespace {

std::vector<std::pair<std::string, std::string>> load_criteria_file() {
    std::ifstream in(REVOLV_CRITERIA_FILE);
    REQUIRE(in.good());
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto space = line.find(' ');
        REQUIRE(space != std::string::npos);
        out.emplace_back(line.substr(0, space), line.substr(space + 1));
    }
    return out;
}

} // namespace

TEST_CASE("parse pricing criteria") {
    auto h1 = parse_criterion("(dlcq+dlttq)/oibdpq");
    REQUIRE(h1->kind == Expr::Kind::binary);
    CHECK(h1->op == BinaryOp::div);
    CHECK(h1->lhs->kind == Expr::Kind::binary);
    CHECK(h1->lhs->op == BinaryOp::add);
    CHECK(h1->rhs->name == "oibdpq");

    auto m = parse_criterion("min{5,chq}");
    REQUIRE(m->kind == Expr::Kind::minmax);
    CHECK(m->is_min);
    CHECK(m->lhs->number == 5.0);
    CHECK(m->rhs->name == "chq");

    auto lagged = parse_criterion("dlcq_{t-4}");
    REQUIRE(lagged->kind == Expr::Kind::variable);
    CHECK(lagged->lag == 4);

    CHECK_THROWS_AS(parse_criterion("((dlcq+dlttq)/"), ParseError);
    CHECK_THROWS_AS(parse_criterion("notafield+1"), ParseError);
    CHECK_THROWS_AS(parse_criterion("dlcq_{t-5}"), ParseError);
    CHECK_THROWS_AS(parse_criterion("roll4(atq)"), ParseError);  // stock variable
    CHECK_THROWS_AS(parse_criterion("dlcq dlttq"), ParseError);
}

TEST_CASE("parse error carries position") {
    try {
        parse_criterion("(dlcq+)/oibdpq");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() == 6);
    }
}

TEST_CASE("all bundled criteria parse and round trip") {
    auto criteria = load_criteria_file();
    REQUIRE(criteria.size() == 51);
    CHECK(criteria.front().first == "A1");
    CHECK(criteria.back().first == "X1");
    for (const auto& [id, text] : criteria) {
        INFO(id << ": " << text);
        auto tree = parse_criterion(text);
        auto printed = print_criterion(tree);
        auto reparsed = parse_criterion(printed);
        CHECK(equal(tree, reparsed));
        // printing is a fixpoint
        CHECK(print_criterion(reparsed) == printed);
    }
}

TEST_CASE("printer preserves tree shape") {
    for (const char* text : {"dlcq-(dlttq-chq)", "(dlcq-dlttq)-chq", "dlcq/(dlttq*chq)",
                             "2.5*oibdpq", "max{0,chq-10}", "roll4(oibdpq)"}) {
        auto tree = parse_criterion(text);
        CHECK(equal(tree, parse_criterion(print_criterion(tree))));
    }
    // left-associative chains print without redundant parentheses
    CHECK(print_criterion(parse_criterion("(dlcq+dlttq)/oibdpq")) == "(dlcq+dlttq)/oibdpq");
    CHECK(print_criterion(parse_criterion("dlcq+dlttq+chq")) == "dlcq+dlttq+chq");
}

TEST_CASE("evaluate criteria") {
    EvalContext ctx;
    ctx.set("dlcq", 100.0);
    ctx.set("dlttq", 300.0);
    ctx.set("oibdpq", 200.0);

    auto h1 = parse_criterion("(dlcq+dlttq)/oibdpq");
    CHECK(evaluate(h1, ctx) == 2.0);

    // missing referenced field propagates
    auto with_missing = parse_criterion("(dlcq+chq)/oibdpq");
    CHECK_FALSE(evaluate(with_missing, ctx).has_value());

    // division by zero is undefined, not infinite
    ctx.set("oibdpq", 0.0);
    CHECK_FALSE(evaluate(h1, ctx).has_value());
}

TEST_CASE("availability fallback") {
    // A1 with borrbase absent: facilityamt - borr - lc
    EvalContext ctx;
    ctx.set("facilityamt", 500.0);
    ctx.set("borr", 120.0);
    ctx.set("lc", 30.0);
    CHECK(evaluate(parse_criterion("unusedav"), ctx) == 350.0);

    // lc defaults to zero when absent
    EvalContext ctx2;
    ctx2.set("facilityamt", 500.0);
    ctx2.set("borr", 120.0);
    CHECK(evaluate(parse_criterion("unusedav"), ctx2) == 380.0);
    CHECK(evaluate(parse_criterion("borr+lc"), ctx2) == 120.0);

    // borrbase takes precedence over facilityamt
    EvalContext ctx3 = ctx;
    ctx3.set("borrbase", 400.0);
    CHECK(evaluate(parse_criterion("unusedav"), ctx3) == 250.0);

    // an explicitly supplied unusedav wins over the fallback
    EvalContext ctx4 = ctx;
    ctx4.set("unusedav", 123.0);
    CHECK(evaluate(parse_criterion("unusedav"), ctx4) == 123.0);
}

TEST_CASE("lags and roll4") {
    EvalContext ctx;
    for (int lag = 0; lag <= 4; ++lag) ctx.set("dlcq", 100.0 + lag, lag);
    CHECK(evaluate(parse_criterion("dlcq_{t-4}"), ctx) == 104.0);
    CHECK(evaluate(parse_criterion("dlcq_{t-1}"), ctx) == 101.0);

    for (int lag = 0; lag <= 3; ++lag) ctx.set("oibdpq", 50.0, lag);
    CHECK(evaluate(parse_criterion("roll4(oibdpq)"), ctx) == 200.0);  // constant history: 4x

    EvalContext partial;
    partial.set("oibdpq", 50.0, 0);
    partial.set("oibdpq", 50.0, 1);
    CHECK_FALSE(evaluate(parse_criterion("roll4(oibdpq)"), partial).has_value());
}

TEST_CASE("purity: repeated and concurrent evaluation is identical") {
    EvalContext ctx;
    ctx.set("dlcq", 41.5);
    ctx.set("dlttq", 260.25);
    ctx.set("oibdpq", 53.125);
    auto expr = parse_criterion("(dlcq+dlttq)/oibdpq");
    auto first = evaluate(expr, ctx);
    for (int i = 0; i < 100; ++i) CHECK(evaluate(expr, ctx) == first);

    std::vector<std::future<bool>> workers;
    for (int w = 0; w < 8; ++w) {
        workers.push_back(std::async(std::launch::async, [&] {
            for (int i = 0; i < 5000; ++i)
                if (evaluate(expr, ctx) != first) return false;
            return true;
        }));
    }
    for (auto& worker : workers) CHECK(worker.get());
}

TEST_CASE("lag zero is not in the grammar") {
    CHECK_THROWS_AS(parse_criterion("dlcq_{t-0}"), ParseError);
}

TEST_CASE("grid level membership is lower-closed") {
    PricingGrid grid;
    grid.criteria.push_back(parse_criterion("(dlcq+dlttq)/oibdpq"));
    grid.thresholds = {{1.0, 2.0}};
    grid.cells.resize(3);
    grid.cells[0].libor_spread_bps = 100.0;
    grid.cells[1].libor_spread_bps = 150.0;
    grid.cells[2].libor_spread_bps = 200.0;
    REQUIRE(validate_grid(grid).empty());

    EvalContext ctx;
    ctx.set("dlttq", 0.0);
    ctx.set("oibdpq", 1.0);

    auto at = [&](double value) {
        ctx.set("dlcq", value);
        auto row = resolve_grid(grid, ctx);
        REQUIRE(row.has_value());
        return *row->libor_spread_bps;
    };
    CHECK(at(0.5) == 100.0);
    CHECK(at(1.0) == 150.0);  // boundary belongs to the level it opens
    CHECK(at(1.5) == 150.0);
    CHECK(at(2.0) == 200.0);
    CHECK(at(99.0) == 200.0);

    // undefined criterion propagates
    ctx.set("oibdpq", 0.0);
    CHECK_FALSE(resolve_grid(grid, ctx).has_value());
}

TEST_CASE("exactly one level matches any finite value") {
    std::mt19937_64 rng(20240711);
    std::uniform_real_distribution<double> unif(-50.0, 50.0);
    std::vector<double> thresholds = {-10.0, -1.5, 0.0, 2.25, 17.0};
    for (int i = 0; i < 2000; ++i) {
        const double v = unif(rng);
        const size_t level = grid_level(thresholds, v);
        REQUIRE(level <= thresholds.size());
        const double lo = level == 0 ? -1e300 : thresholds[level - 1];
        const double hi = level == thresholds.size() ? 1e300 : thresholds[level];
        CHECK(v >= lo);
        CHECK(v < hi);
    }
    for (double t : thresholds) CHECK(grid_level(thresholds, t) == grid_level(thresholds, t + 1e-9));
}

TEST_CASE("two-criterion grid selects the row-major cell") {
    PricingGrid grid;
    grid.criteria.push_back(parse_criterion("(dlcq+dlttq)/oibdpq"));
    grid.criteria.push_back(parse_criterion("spltrm"));
    grid.thresholds = {{2.0}, {10.0}};  // 2 x 2 levels
    grid.cells.resize(4);
    for (size_t i = 0; i < 4; ++i) grid.cells[i].libor_spread_bps = 100.0 + 25.0 * i;
    REQUIRE(validate_grid(grid).empty());

    EvalContext ctx;
    ctx.set("dlcq", 1.0);
    ctx.set("dlttq", 0.0);
    ctx.set("oibdpq", 1.0);   // criterion 1 level 0
    ctx.set("spltrm", 12.0);  // criterion 2 level 1 -> tuple (0,1) -> cell 1
    auto row = resolve_grid(grid, ctx);
    REQUIRE(row.has_value());
    CHECK(*row->libor_spread_bps == 125.0);

    // unrated firm: spltrm undefined -> grid undefined
    EvalContext unrated;
    unrated.set("dlcq", 1.0);
    unrated.set("dlttq", 0.0);
    unrated.set("oibdpq", 1.0);
    CHECK_FALSE(resolve_grid(grid, unrated).has_value());
}

TEST_CASE("grid validation catches structural defects") {
    PricingGrid grid;
    grid.criteria.push_back(parse_criterion("oibdpq"));
    grid.thresholds = {{2.0, 1.0}};
    grid.cells.resize(3);
    CHECK_FALSE(validate_grid(grid).empty());

    grid.thresholds = {{1.0, 2.0}};
    grid.cells.resize(2);  // needs 3
    CHECK_FALSE(validate_grid(grid).empty());
}
