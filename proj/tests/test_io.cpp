#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "revolv/io.hpp"

using namespace revolv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("revolv_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

Facility sample_facility(const std::string& id, const std::string& borrower) {
    Facility f;
    f.facility_id = id;
    f.borrower_id = borrower;
    f.lender_id = "L1";
    f.origination_quarter = Quarter(2006, 2);
    f.stated_maturity_quarter = Quarter(2010, 2);
    f.commitment = 266.03;
    f.secured = true;
    f.syndicated = true;
    f.has_lc_program = true;

    auto grid = std::make_shared<dsl::PricingGrid>();
    grid->criteria.push_back(dsl::parse_criterion("(dlcq+dlttq)/oibdpq"));
    grid->criteria.push_back(dsl::parse_criterion("spltrm"));
    grid->thresholds = {{1.5, 3.0}, {9.5}};
    grid->cells.resize(6);
    for (size_t i = 0; i < 6; ++i) {
        grid->cells[i].libor_spread_bps = 125.0 + 25.0 * i;
        grid->cells[i].commitment_fee_bps = 20.0 + 2.0 * i;
    }
    f.pricing_grid = grid;

    BaseRateOption libor;
    libor.kind = LoanType::libor;
    libor.libor_tenor = LiborTenor::borrower_choice;
    libor.rate_floor_pct = 1.0;
    libor.spread = SpreadSpec::grid(dsl::GridColumn::libor_spread);
    f.base_rate_options.push_back(libor);

    BaseRateOption abr;
    abr.kind = LoanType::abr;
    abr.abr_candidates.push_back({AbrReference::prime, 0.0});
    abr.abr_candidates.push_back({AbrReference::fed_funds, std::nullopt});
    abr.spread = SpreadSpec::fixed(25.0);
    f.base_rate_options.push_back(abr);

    f.fee_schedule.commitment_fee = SpreadSpec::grid(dsl::GridColumn::commitment_fee);
    f.fee_schedule.annual_fee = SpreadSpec::fixed(5.0);
    f.fee_schedule.utilization_fee = UtilizationFee{SpreadSpec::fixed(12.5), 0.5};
    f.fee_schedule.upfront_fee = UpfrontFee{0.75, Quarter(2006, 2)};
    f.default_terms = DefaultTerms{200.0, true};
    f.loan_path_id = id;
    return f;
}

bool facility_equal(const Facility& a, const Facility& b) {
    // field-by-field comparison through the JSON view keeps this exhaustive
    return io::to_json(a) == io::to_json(b);
}

} // namespace

TEST_CASE("facility JSONL round trip is field-exact") {
    TempDir dir;
    std::vector<Facility> fs;
    fs.push_back(sample_facility("FAC-1", "B1"));
    Facility second = sample_facility("FAC-2", "B1");
    second.predecessor_id = "FAC-1";
    second.fixed_annual_rate_pct.reset();
    fs.push_back(second);
    Facility fixed_rate = sample_facility("FAC-3", "B2");
    fixed_rate.base_rate_options.clear();
    fixed_rate.pricing_grid.reset();
    fixed_rate.fee_schedule.commitment_fee = SpreadSpec::fixed(37.5);
    fixed_rate.fixed_annual_rate_pct = 6.25;
    fs.push_back(fixed_rate);

    const auto path = dir.file("facilities.jsonl");
    io::write_facilities_jsonl(path, fs);
    auto back = io::read_facilities_jsonl(path);
    REQUIRE(back.size() == fs.size());
    for (size_t i = 0; i < fs.size(); ++i) {
        INFO(fs[i].facility_id);
        CHECK(facility_equal(fs[i], back[i]));
    }
}

TEST_CASE("flat facilities round trip through the CSV alternative") {
    TempDir dir;
    Facility flat;
    flat.facility_id = "FLAT-1";
    flat.borrower_id = "B1";
    flat.lender_id = "L1";
    flat.origination_quarter = Quarter(2007, 1);
    flat.stated_maturity_quarter = Quarter(2011, 1);
    flat.commitment = 150.0;
    flat.secured = true;
    BaseRateOption libor;
    libor.kind = LoanType::libor;
    libor.libor_tenor = LiborTenor::m3;
    libor.rate_floor_pct = 1.5;
    libor.spread = SpreadSpec::fixed(175.0);
    flat.base_rate_options.push_back(libor);
    flat.fee_schedule.commitment_fee = SpreadSpec::fixed(30.0);
    flat.fee_schedule.utilization_fee = UtilizationFee{SpreadSpec::fixed(12.5), 0.5};
    flat.fee_schedule.upfront_fee = UpfrontFee{0.5, Quarter(2007, 1)};
    flat.default_terms = DefaultTerms{250.0, true};
    flat.loan_path_id = "FLAT-1";

    const auto path = dir.file("facilities.csv");
    io::write_facilities_csv(path, std::vector<Facility>{flat});
    auto back = io::read_facilities_csv(path);
    REQUIRE(back.size() == 1);
    CHECK(io::to_json(back[0]) == io::to_json(flat));

    // grid-priced contracts stay JSONL-only
    CHECK_THROWS_AS(io::write_facilities_csv(dir.file("bad.csv"),
                                             std::vector<Facility>{sample_facility("G", "B1")}),
                    io::DataError);

    // a .csv catalog path routes through the flat reader at ingestion
    std::map<std::string, std::map<Quarter, FirmQuarter>> firms;
    FirmQuarter fq;
    fq.firm_id = "B1";
    fq.quarter = Quarter(2007, 1);
    fq.fields["atq"] = 100.0;
    firms["B1"][fq.quarter] = fq;
    io::write_firms_csv(dir.file("firms.csv"), firms);
    io::write_states_csv(dir.file("states.csv"), {});
    std::map<Quarter, RateEnvironment> rates;
    rates[Quarter(2007, 1)] = RateEnvironment{};
    io::write_rates_csv(dir.file("rates.csv"), rates);
    auto panel = io::ingest_panel(
        {path, dir.file("firms.csv"), dir.file("states.csv"), dir.file("rates.csv"), ""});
    REQUIRE(panel.facilities.size() == 1);
    CHECK(panel.facilities[0].facility_id == "FLAT-1");
}

TEST_CASE("csv round trips for firms, states, rates, lender returns") {
    TempDir dir;
    std::map<std::string, std::map<Quarter, FirmQuarter>> firms;
    FirmQuarter fq;
    fq.firm_id = "B1";
    fq.quarter = Quarter(2006, 2);
    fq.fields = {{"atq", 1000.0}, {"oibdpq", 50.0}, {"dlcq", 40.0}, {"dlttq", 260.0}};
    fq.rating = 9;
    fq.daily_return_stddev_12m = 0.025;
    fq.monthly_return_stddev_12m_annualized = 0.38;
    fq.stock_return_12m = 0.12;
    firms["B1"][fq.quarter] = fq;
    FirmQuarter fq2 = fq;
    fq2.quarter = Quarter(2006, 3);
    fq2.rating.reset();
    fq2.fields["atq"] = 1010.5;
    firms["B1"][fq2.quarter] = fq2;

    io::write_firms_csv(dir.file("firms.csv"), firms, "manifest_hash=abc");
    auto firms_back = io::read_firms_csv(dir.file("firms.csv"));
    REQUIRE(firms_back.count("B1"));
    REQUIRE(firms_back["B1"].size() == 2);
    CHECK(firms_back["B1"][Quarter(2006, 2)].field("atq").value() == 1000.0);
    CHECK(firms_back["B1"][Quarter(2006, 2)].rating.value() == 9);
    CHECK_FALSE(firms_back["B1"][Quarter(2006, 3)].rating.has_value());
    CHECK(firms_back["B1"][Quarter(2006, 3)].field("atq").value() == 1010.5);
    CHECK(firms_back["B1"][Quarter(2006, 2)].daily_return_stddev_12m.value() == 0.025);

    std::map<std::string, std::map<Quarter, FacilityQuarterState>> states;
    FacilityQuarterState st;
    st.facility_id = "FAC-1";
    st.quarter = Quarter(2006, 2);
    st.outstanding_borrowings = 120.0;
    st.letters_of_credit = 10.0;
    st.technical_default = true;
    st.waiver_granted = true;
    states["FAC-1"][st.quarter] = st;
    io::write_states_csv(dir.file("states.csv"), states);
    auto states_back = io::read_states_csv(dir.file("states.csv"));
    CHECK(states_back["FAC-1"][st.quarter].outstanding_borrowings == 120.0);
    CHECK(states_back["FAC-1"][st.quarter].letters_of_credit.value() == 10.0);
    CHECK_FALSE(states_back["FAC-1"][st.quarter].borrowing_base.has_value());
    CHECK(states_back["FAC-1"][st.quarter].waiver_granted);

    std::map<Quarter, RateEnvironment> rates;
    RateEnvironment env;
    env.quarter = Quarter(2006, 2);
    env.libor_1m = 4.5;
    env.libor_2m = 4.55;
    env.libor_3m = 4.6;
    env.libor_6m = 4.7;
    env.prime = 7.5;
    env.fed_funds = 4.25;
    env.tbill_3m = 4.0;
    env.market_index_return = 0.015;
    rates[env.quarter] = env;
    io::write_rates_csv(dir.file("rates.csv"), rates);
    auto rates_back = io::read_rates_csv(dir.file("rates.csv"));
    CHECK(rates_back[env.quarter].prime == 7.5);
    CHECK(rates_back[env.quarter].market_index_return == 0.015);

    std::map<std::string, std::map<Quarter, double>> lr;
    lr["L1"][Quarter(2006, 2)] = 0.021;
    io::write_lender_returns_csv(dir.file("lenders.csv"), lr);
    auto lr_back = io::read_lender_returns_csv(dir.file("lenders.csv"));
    CHECK(lr_back["L1"][Quarter(2006, 2)] == 0.021);
}

TEST_CASE("ingest_panel validates referential integrity") {
    TempDir dir;
    std::vector<Facility> fs{sample_facility("FAC-1", "B1")};
    io::write_facilities_jsonl(dir.file("facilities.jsonl"), fs);

    std::map<std::string, std::map<Quarter, FirmQuarter>> firms;
    FirmQuarter fq;
    fq.firm_id = "B1";
    fq.quarter = Quarter(2006, 2);
    fq.fields["atq"] = 100.0;
    firms["B1"][fq.quarter] = fq;
    io::write_firms_csv(dir.file("firms.csv"), firms);

    std::map<std::string, std::map<Quarter, FacilityQuarterState>> states;
    FacilityQuarterState st;
    st.facility_id = "FAC-1";
    st.quarter = Quarter(2006, 2);
    st.outstanding_borrowings = 10.0;
    states["FAC-1"][st.quarter] = st;
    io::write_states_csv(dir.file("states.csv"), states);

    std::map<Quarter, RateEnvironment> rates;
    RateEnvironment env;
    env.quarter = Quarter(2006, 2);
    rates[env.quarter] = env;
    io::write_rates_csv(dir.file("rates.csv"), rates);

    io::IngestPaths paths{dir.file("facilities.jsonl"), dir.file("firms.csv"),
                          dir.file("states.csv"), dir.file("rates.csv"), ""};
    auto panel = io::ingest_panel(paths);
    CHECK(panel.facilities.size() == 1);
    CHECK(panel.firms.size() == 1);

    // a state row pointing at an unknown facility is an integrity error
    states["GHOST"][st.quarter] = st;
    states["GHOST"][st.quarter].facility_id = "GHOST";
    io::write_states_csv(dir.file("states.csv"), states);
    try {
        io::ingest_panel(paths);
        FAIL("expected integrity error");
    } catch (const io::DataError& e) {
        CHECK(std::string(e.what()).find("GHOST") != std::string::npos);
    }

    // duplicate firm-quarter rows are rejected at parse time
    {
        std::ifstream in(dir.file("firms.csv"));
        std::string header, first_row;
        std::getline(in, header);
        std::getline(in, first_row);
        in.close();
        std::ofstream app(dir.file("firms.csv"), std::ios::app);
        app << first_row << "\n";
    }
    states.erase("GHOST");
    io::write_states_csv(dir.file("states.csv"), states);
    CHECK_THROWS_AS(io::ingest_panel(paths), csv::CsvError);

    // unknown borrower
    TempDir dir2;
    io::write_facilities_jsonl(dir2.file("facilities.jsonl"),
                               std::vector<Facility>{sample_facility("FAC-9", "NOBODY")});
    io::write_firms_csv(dir2.file("firms.csv"), firms);
    io::write_states_csv(dir2.file("states.csv"), {});
    io::write_rates_csv(dir2.file("rates.csv"), rates);
    io::IngestPaths p2{dir2.file("facilities.jsonl"), dir2.file("firms.csv"),
                       dir2.file("states.csv"), dir2.file("rates.csv"), ""};
    CHECK_THROWS_AS(io::ingest_panel(p2), io::DataError);
}

TEST_CASE("well-formed bundle yields expected row counts") {
    TempDir dir;
    std::vector<Facility> fs{sample_facility("FAC-1", "B1"), sample_facility("FAC-2", "B2")};
    io::write_facilities_jsonl(dir.file("facilities.jsonl"), fs);

    std::map<std::string, std::map<Quarter, FirmQuarter>> firms;
    std::map<std::string, std::map<Quarter, FacilityQuarterState>> states;
    std::map<Quarter, RateEnvironment> rates;
    for (int k = 0; k < 4; ++k) {
        const Quarter q = Quarter(2006, 2) + k;
        for (const char* firm : {"B1", "B2"}) {
            FirmQuarter fq;
            fq.firm_id = firm;
            fq.quarter = q;
            fq.fields["atq"] = 500.0 + k;
            firms[firm][q] = fq;
        }
        for (const char* fac : {"FAC-1", "FAC-2"}) {
            FacilityQuarterState st;
            st.facility_id = fac;
            st.quarter = q;
            st.outstanding_borrowings = 10.0 * k;
            states[fac][q] = st;
        }
        RateEnvironment env;
        env.quarter = q;
        rates[q] = env;
    }
    io::write_firms_csv(dir.file("firms.csv"), firms);
    io::write_states_csv(dir.file("states.csv"), states);
    io::write_rates_csv(dir.file("rates.csv"), rates);

    auto panel = io::ingest_panel({dir.file("facilities.jsonl"), dir.file("firms.csv"),
                                   dir.file("states.csv"), dir.file("rates.csv"), ""});
    CHECK(panel.facilities.size() == 2);
    CHECK(panel.firms["B1"].size() == 4);
    CHECK(panel.firms["B2"].size() == 4);
    CHECK(panel.states["FAC-1"].size() == 4);
    CHECK(panel.rates.size() == 4);
    CHECK(panel.firm_history("B1", Quarter(2006, 2) + 3, 4).size() == 4);
}
