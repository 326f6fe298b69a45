#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "revolv/contract.hpp"

using namespace revolv;

namespace {

// A grid-priced syndicated facility in the style of a 2010 technology-sector
// revolver: LIBOR/ABR choice, debt-to-EBITDA grid, commitment fee from the
// same grid.
Facility make_reference_facility() {
    Facility f;
    f.facility_id = "FAC-2010-001";
    f.borrower_id = "FIRM-42";
    f.lender_id = "BANK-7";
    f.origination_quarter = Quarter(2010, 3);
    f.stated_maturity_quarter = Quarter(2014, 3);
    f.commitment = 200.0;
    f.secured = true;
    f.syndicated = true;
    f.has_lc_program = true;
    f.loan_path_id = "FAC-2010-001";

    auto grid = std::make_shared<dsl::PricingGrid>();
    grid->criteria.push_back(dsl::parse_criterion("(dlcq+dlttq)/oibdpq"));
    grid->thresholds = {{1.0, 2.0, 3.0}};
    grid->cells.resize(4);
    for (size_t i = 0; i < 4; ++i) {
        grid->cells[i].libor_spread_bps = 150.0 + 50.0 * i;
        grid->cells[i].abr_spread_bps = 50.0 + 50.0 * i;
        grid->cells[i].commitment_fee_bps = 25.0 + 5.0 * i;
    }
    f.pricing_grid = grid;

    BaseRateOption libor;
    libor.kind = LoanType::libor;
    libor.libor_tenor = LiborTenor::borrower_choice;
    libor.spread = SpreadSpec::grid(dsl::GridColumn::libor_spread);
    f.base_rate_options.push_back(libor);

    BaseRateOption abr;
    abr.kind = LoanType::abr;
    abr.abr_candidates.push_back({AbrReference::prime, 0.0});
    abr.abr_candidates.push_back({AbrReference::fed_funds, std::nullopt});  // + 50 bps convention
    abr.spread = SpreadSpec::grid(dsl::GridColumn::abr_spread);
    f.base_rate_options.push_back(abr);

    f.fee_schedule.commitment_fee = SpreadSpec::grid(dsl::GridColumn::commitment_fee);
    f.fee_schedule.upfront_fee = UpfrontFee{1.0, Quarter(2010, 3)};
    f.default_terms = DefaultTerms{200.0, false};
    return f;
}

Facility chain_member(const std::string& id, Quarter orig, Quarter maturity,
                      std::optional<std::string> predecessor = std::nullopt) {
    Facility f;
    f.facility_id = id;
    f.borrower_id = "FIRM-1";
    f.lender_id = "BANK-1";
    f.origination_quarter = orig;
    f.stated_maturity_quarter = maturity;
    f.commitment = 100.0;
    BaseRateOption libor;
    libor.kind = LoanType::libor;
    libor.libor_tenor = LiborTenor::m3;
    libor.spread = SpreadSpec::fixed(150.0);
    f.base_rate_options.push_back(libor);
    f.loan_path_id = "P";
    f.predecessor_id = std::move(predecessor);
    return f;
}

} // namespace

TEST_CASE("validate_facility flags boundary violations") {
    Facility f = make_reference_facility();
    f.commitment = 0.0;
    auto report = validate_facility(f);
    REQUIRE_FALSE(report.empty());
    CHECK(report.front() == "commitment > 0");

    Facility g = make_reference_facility();
    g.stated_maturity_quarter = g.origination_quarter;
    report = validate_facility(g);
    REQUIRE_FALSE(report.empty());
    CHECK(report.front() == "maturity after origination");
}

TEST_CASE("a fully populated grid-priced syndicated facility validates clean") {
    CHECK(validate_facility(make_reference_facility()).empty());
}

TEST_CASE("validate_facility is idempotent and side-effect free") {
    Facility f = make_reference_facility();
    f.commitment = -1.0;
    auto first = validate_facility(f);
    auto second = validate_facility(f);
    CHECK(first == second);
    CHECK(f.commitment == -1.0);
}

TEST_CASE("validation catches malformed specs") {
    Facility f = make_reference_facility();
    f.base_rate_options[0].spread.fixed_bps = 100.0;  // both fixed and grid set
    CHECK_FALSE(validate_facility(f).empty());

    Facility g = make_reference_facility();
    g.fee_schedule.utilization_fee = UtilizationFee{SpreadSpec::fixed(12.5), 1.5};
    CHECK_FALSE(validate_facility(g).empty());

    Facility h = make_reference_facility();
    h.base_rate_options.clear();  // neither floating options nor a fixed rate
    CHECK_FALSE(validate_facility(h).empty());
    h.fixed_annual_rate_pct = 6.0;
    CHECK(validate_facility(h).empty());
}

TEST_CASE("loan paths: direct chain") {
    std::vector<Facility> fs;
    fs.push_back(chain_member("A", Quarter(2006, 1), Quarter(2011, 1)));
    fs.push_back(chain_member("B", Quarter(2007, 1), Quarter(2012, 1), "A"));
    fs.push_back(chain_member("C", Quarter(2008, 3), Quarter(2013, 1), "B"));

    auto paths = build_loan_paths(fs);
    REQUIRE(paths.size() == 1);
    const auto& p = paths.front();
    REQUIRE(p.members.size() == 3);
    CHECK(p.members[0].facility->facility_id == "A");
    CHECK(p.members[1].facility->facility_id == "B");
    CHECK(p.members[2].facility->facility_id == "C");

    // intervals stop at the successor's origination and never overlap
    CHECK(p.members[0].active_until == Quarter(2007, 1));
    CHECK(p.members[1].active_until == Quarter(2008, 3));
    CHECK(p.members[2].active_until == Quarter(2013, 1));
    CHECK(p.active_at(Quarter(2006, 3))->facility_id == "A");
    CHECK(p.active_at(Quarter(2007, 1))->facility_id == "B");
    CHECK(p.active_at(Quarter(2012, 4))->facility_id == "C");
    CHECK(p.active_at(Quarter(2013, 1)) == nullptr);
}

TEST_CASE("loan paths: termination events and independent facilities") {
    std::vector<Facility> fs;
    fs.push_back(chain_member("A", Quarter(2006, 1), Quarter(2011, 1)));
    fs.push_back(chain_member("B", Quarter(2007, 2), Quarter(2012, 1)));
    std::map<std::string, Quarter> terminations{{"A", Quarter(2008, 1)}};

    auto paths = build_loan_paths(fs, terminations);
    REQUIRE(paths.size() == 2);
    CHECK(paths[0].members.size() == 1);
    CHECK(paths[1].members.size() == 1);
    // termination quarter is the last active quarter
    CHECK(paths[0].end() == Quarter(2008, 2));
    CHECK(paths[1].end() == Quarter(2012, 1));
}

TEST_CASE("loan paths: every facility lands in exactly one path") {
    std::mt19937_64 rng(7);
    std::vector<Facility> fs;
    int next_id = 0;
    for (int chain = 0; chain < 40; ++chain) {
        const int length = 1 + static_cast<int>(rng() % 4);
        std::optional<std::string> prev;
        Quarter orig(2006, 1);
        for (int k = 0; k < length; ++k) {
            std::string id = "F" + std::to_string(next_id++);
            fs.push_back(chain_member(id, orig, orig + 8 + static_cast<int>(rng() % 8), prev));
            prev = id;
            orig = orig + 1 + static_cast<int>(rng() % 4);
        }
    }
    auto paths = build_loan_paths(fs);
    size_t members = 0;
    std::set<std::string> seen;
    for (const auto& p : paths) {
        for (const auto& m : p.members) {
            members++;
            CHECK(seen.insert(m.facility->facility_id).second);
        }
        for (size_t i = 1; i < p.members.size(); ++i) {
            CHECK(p.members[i - 1].active_until <= p.members[i].active_from);
            CHECK(p.members[i - 1].facility->origination_quarter <=
                  p.members[i].facility->origination_quarter);
        }
    }
    CHECK(members == fs.size());
}

TEST_CASE("loan paths: cycles and dangling predecessors error") {
    std::vector<Facility> self;
    self.push_back(chain_member("A", Quarter(2006, 1), Quarter(2010, 1), "A"));
    CHECK_THROWS_AS(build_loan_paths(self), PathError);

    std::vector<Facility> pair;
    pair.push_back(chain_member("A", Quarter(2006, 1), Quarter(2010, 1), "B"));
    pair.push_back(chain_member("B", Quarter(2007, 1), Quarter(2011, 1), "A"));
    CHECK_THROWS_AS(build_loan_paths(pair), PathError);

    std::vector<Facility> dangling;
    dangling.push_back(chain_member("A", Quarter(2006, 1), Quarter(2010, 1), "ghost"));
    CHECK_THROWS_AS(build_loan_paths(dangling), PathError);
}
