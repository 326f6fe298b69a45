#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "revolv/io.hpp"
#include "revolv/panel.hpp"
#include "revolv/synth.hpp"
#include "revolv/version.hpp"

namespace revolv::pipeline {

using nlohmann::json;

class PipelineError : public std::runtime_error {
public:
    enum class Stage { validation, computation, estimation };
    PipelineError(Stage stage, const std::string& message)
        : std::runtime_error(message), stage_(stage) {}
    Stage stage() const { return stage_; }

private:
    Stage stage_;
};

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

inline json to_json(const synth::SyntheticConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["n_firms"] = cfg.n_firms;
    j["n_quarters"] = cfg.n_quarters;
    j["start_quarter"] = cfg.start_quarter.str();
    j["facilities_per_firm_probs"] = cfg.facilities_per_firm_probs;
    j["planted_risk_slope"] = cfg.planted_risk_slope;
    j["planted_crisis_interaction"] = cfg.planted_crisis_interaction;
    j["crisis_level_shift"] = cfg.crisis_level_shift;
    j["alpha_pct"] = cfg.alpha_pct;
    j["usage_risk_correlation"] = cfg.usage_risk_correlation;
    j["prob_zero_usage"] = cfg.prob_zero_usage;
    j["crisis_shift_enabled"] = cfg.crisis_shift_enabled;
    j["crisis_risk_shift"] = cfg.crisis_risk_shift;
    j["crisis_first"] = cfg.crisis.first.str();
    j["crisis_last"] = cfg.crisis.last.str();
    j["noise_scale_pct"] = cfg.noise_scale_pct;
    j["facility_effect_scale_pct"] = cfg.facility_effect_scale_pct;
    j["borrower_effect_scale_pct"] = cfg.borrower_effect_scale_pct;
    j["quarter_effect_scale_pct"] = cfg.quarter_effect_scale_pct;
    j["grid_mode"] = cfg.grid_mode;
    j["control_policy"] = cfg.control_policy == ControlPolicy::rolling_avg ? "rolling_avg"
                                                                           : "annualized_flows";
    return j;
}

inline synth::SyntheticConfig synthetic_config_from_json(const json& j) {
    synth::SyntheticConfig cfg;
    auto quarter = [&](const char* key, Quarter fallback) {
        if (!j.contains(key)) return fallback;
        auto q = Quarter::parse(j.at(key).get<std::string>());
        if (!q) throw synth::ConfigError(std::string("bad quarter in config key ") + key);
        return *q;
    };
    cfg.seed = j.value("seed", cfg.seed);
    cfg.n_firms = j.value("n_firms", cfg.n_firms);
    cfg.n_quarters = j.value("n_quarters", cfg.n_quarters);
    cfg.start_quarter = quarter("start_quarter", cfg.start_quarter);
    if (j.contains("facilities_per_firm_probs"))
        cfg.facilities_per_firm_probs = j.at("facilities_per_firm_probs").get<std::array<double, 3>>();
    cfg.planted_risk_slope = j.value("planted_risk_slope", cfg.planted_risk_slope);
    cfg.planted_crisis_interaction =
        j.value("planted_crisis_interaction", cfg.planted_crisis_interaction);
    cfg.crisis_level_shift = j.value("crisis_level_shift", cfg.crisis_level_shift);
    cfg.alpha_pct = j.value("alpha_pct", cfg.alpha_pct);
    cfg.usage_risk_correlation = j.value("usage_risk_correlation", cfg.usage_risk_correlation);
    cfg.prob_zero_usage = j.value("prob_zero_usage", cfg.prob_zero_usage);
    cfg.crisis_shift_enabled = j.value("crisis_shift_enabled", cfg.crisis_shift_enabled);
    cfg.crisis_risk_shift = j.value("crisis_risk_shift", cfg.crisis_risk_shift);
    cfg.crisis.first = quarter("crisis_first", cfg.crisis.first);
    cfg.crisis.last = quarter("crisis_last", cfg.crisis.last);
    cfg.noise_scale_pct = j.value("noise_scale_pct", cfg.noise_scale_pct);
    cfg.facility_effect_scale_pct = j.value("facility_effect_scale_pct", cfg.facility_effect_scale_pct);
    cfg.borrower_effect_scale_pct = j.value("borrower_effect_scale_pct", cfg.borrower_effect_scale_pct);
    cfg.quarter_effect_scale_pct = j.value("quarter_effect_scale_pct", cfg.quarter_effect_scale_pct);
    cfg.grid_mode = j.value("grid_mode", cfg.grid_mode);
    if (j.contains("control_policy"))
        cfg.control_policy = j.at("control_policy").get<std::string>() == "annualized_flows"
                                 ? ControlPolicy::annualized_flows
                                 : ControlPolicy::rolling_avg;
    return cfg;
}

inline std::string ccf_rule_name(CcfRule rule) {
    switch (rule) {
    case CcfRule::gt12m_half_else_zero: return "gt12m_half_else_zero";
    case CcfRule::gt14m_half_else_zero: return "gt14m_half_else_zero";
    case CcfRule::always_half: return "always_half";
    }
    return "?";
}

inline CcfRule ccf_rule_from_name(const std::string& name) {
    if (name == "gt12m_half_else_zero") return CcfRule::gt12m_half_else_zero;
    if (name == "gt14m_half_else_zero") return CcfRule::gt14m_half_else_zero;
    if (name == "always_half") return CcfRule::always_half;
    throw PipelineError(PipelineError::Stage::validation, "unknown ccf_rule '" + name + "'");
}

inline std::string amortization_name(UpfrontAmortization a) {
    switch (a) {
    case UpfrontAmortization::straight_line_stated_maturity: return "straight_line_stated_maturity";
    case UpfrontAmortization::settle_to_min_maturity_or_path_end:
        return "settle_to_min_maturity_or_path_end";
    case UpfrontAmortization::while_unamended: return "while_unamended";
    }
    return "?";
}

inline UpfrontAmortization amortization_from_name(const std::string& name) {
    if (name == "straight_line_stated_maturity")
        return UpfrontAmortization::straight_line_stated_maturity;
    if (name == "settle_to_min_maturity_or_path_end")
        return UpfrontAmortization::settle_to_min_maturity_or_path_end;
    if (name == "while_unamended") return UpfrontAmortization::while_unamended;
    throw PipelineError(PipelineError::Stage::validation, "unknown amortization '" + name + "'");
}

inline json to_json(const ReturnPolicy& p) {
    json j;
    j["ccf_rule"] = ccf_rule_name(p.ccf_rule);
    j["upfront_amortization"] = amortization_name(p.upfront_amortization);
    j["annualization"] = p.annualization == Annualization::times4 ? "times4" : "geometric";
    j["lgd_recovery_factor"] = p.lgd_recovery_factor;
    j["lc_reduces_unused"] = p.lc_reduces_unused;
    return j;
}

inline ReturnPolicy return_policy_from_json(const json& j) {
    ReturnPolicy p;
    if (j.contains("ccf_rule")) p.ccf_rule = ccf_rule_from_name(j.at("ccf_rule").get<std::string>());
    if (j.contains("upfront_amortization"))
        p.upfront_amortization = amortization_from_name(j.at("upfront_amortization").get<std::string>());
    if (j.contains("annualization"))
        p.annualization = j.at("annualization").get<std::string>() == "geometric"
                              ? Annualization::geometric
                              : Annualization::times4;
    p.lgd_recovery_factor = j.value("lgd_recovery_factor", p.lgd_recovery_factor);
    p.lc_reduces_unused = j.value("lc_reduces_unused", p.lc_reduces_unused);
    return p;
}

inline ModelSpec model_spec_from_json(const json& j) {
    ModelSpec spec;
    spec.name = j.value("name", std::string("model"));
    spec.dependent = j.at("dependent").get<std::string>();
    if (j.contains("regressors")) spec.regressors = j.at("regressors").get<std::vector<std::string>>();
    if (j.contains("fixed_effects"))
        spec.fixed_effects = j.at("fixed_effects").get<std::vector<std::string>>();
    spec.cluster = j.value("cluster", spec.cluster);
    if (j.contains("interactions"))
        for (const auto& pair : j.at("interactions"))
            spec.interactions.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    spec.estimator = j.value("estimator", spec.estimator);
    return spec;
}

// ---------------------------------------------------------------------------
// Hashing (FNV-1a, 64-bit) for the manifest and output checksums.
// ---------------------------------------------------------------------------

inline uint64_t fnv1a(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw PipelineError(PipelineError::Stage::computation, "cannot hash " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return hex64(fnv1a(content));
}

// ---------------------------------------------------------------------------
// Run description and results
// ---------------------------------------------------------------------------

struct PipelineRun {
    std::optional<synth::SyntheticConfig> synthetic;  // generate when set
    io::IngestPaths inputs;                           // otherwise ingest these
    ReturnPolicy policy;
    ControlPolicy control_policy = ControlPolicy::rolling_avg;
    CrisisWindow crisis;
    std::string output_dir;
    bool write_input_bundle = true;  // synthetic runs re-read their own bundle
};

struct TableCell {
    double estimate = 0.0;
    double std_error = 0.0;
    std::string stars;
};

struct Table5Row {
    std::string label;
    std::string term;
    std::map<std::string, TableCell> by_dep;  // expected_return / aisd / aisu
    std::map<std::string, Eigen::Index> n_by_dep;
};

struct ProbitSummary {
    TableCell risk_up;
    double ame = 0.0;
    double prob_y1 = 0.0;
    double pseudo_r2 = 0.0;
    Eigen::Index n = 0;
};

struct PipelineResult {
    std::string manifest_hash;
    AssembledPanel base;
    std::map<std::string, std::map<int, std::optional<double>>> table3;  // series -> bucket -> pct
    std::vector<std::pair<std::string, econ::RegressionResult>> table4;
    std::vector<Table5Row> table5;
    std::vector<std::pair<std::string, econ::RegressionResult>> table6_expected;
    std::vector<std::pair<std::string, econ::RegressionResult>> table6_committed;
    std::map<std::string, ProbitSummary> table7_increases;
    std::map<std::string, ProbitSummary> table7_high_increases;
    std::map<std::string, std::string> output_checksums;
};

inline std::string significance_stars(double estimate, double std_error) {
    if (std_error <= 0.0) return "";
    const double t = std::abs(estimate / std_error);
    if (t > 2.5758293035489004) return "***";
    if (t > 1.959963984540054) return "**";
    if (t > 1.6448536269514722) return "*";
    return "";
}

namespace detail {

inline std::string fmt(double v) { return csv::format_double(v, 12); }

inline void write_table3(const std::string& path, const std::string& hash,
                         const std::map<std::string, std::map<int, std::optional<double>>>& table) {
    csv::Writer w(path);
    w.comment("manifest_hash=" + hash);
    w.row({"series", "quintile_1", "quintile_2", "quintile_3", "quintile_4", "quintile_5", "total"});
    for (const auto& [series, buckets] : table) {
        std::vector<std::string> row{series};
        for (int b = 0; b < 5; ++b) {
            auto it = buckets.find(b);
            row.push_back(it != buckets.end() && it->second ? fmt(*it->second) : "");
        }
        auto total = buckets.find(-1);
        row.push_back(total != buckets.end() && total->second ? fmt(*total->second) : "");
        w.row(row);
    }
}

inline void write_regressions(const std::string& path, const std::string& hash,
                              const std::vector<std::pair<std::string, econ::RegressionResult>>& specs) {
    csv::Writer w(path);
    w.comment("manifest_hash=" + hash);
    w.row({"spec", "term", "estimate", "std_error", "stars"});
    for (const auto& [name, res] : specs) {
        for (size_t i = 0; i < res.names.size(); ++i) {
            const double b = res.coef[static_cast<Eigen::Index>(i)];
            const double se = res.se[static_cast<Eigen::Index>(i)];
            w.row({name, res.names[i], fmt(b), fmt(se), significance_stars(b, se)});
        }
        w.row({name, "_N", std::to_string(res.n), "", ""});
        w.row({name, "_R2", fmt(res.r_squared), "", ""});
        w.row({name, "_clusters", std::to_string(res.n_clusters), "", ""});
        for (const auto& dropped : res.dropped_columns) w.row({name, "_dropped", dropped, "", ""});
    }
}

inline void write_table5(const std::string& path, const std::string& hash,
                         const std::vector<Table5Row>& rows) {
    csv::Writer w(path);
    w.comment("manifest_hash=" + hash);
    w.row({"row", "term", "dep", "estimate", "std_error", "stars", "n"});
    for (const auto& row : rows) {
        for (const auto& dep : {"expected_return", "expected_aisd_return", "expected_aisu_return"}) {
            auto it = row.by_dep.find(dep);
            if (it == row.by_dep.end()) continue;
            const auto& cell = it->second;
            w.row({row.label, row.term, dep, fmt(cell.estimate), fmt(cell.std_error), cell.stars,
                   std::to_string(row.n_by_dep.at(dep))});
        }
    }
}

inline void write_table7(const std::string& path, const std::string& hash,
                         const std::map<std::string, ProbitSummary>& panel) {
    csv::Writer w(path);
    w.comment("manifest_hash=" + hash);
    w.row({"dep", "coefficient", "std_error", "stars", "avg_marginal_effect", "prob_y1",
           "pseudo_r2", "n"});
    for (const auto& [dep, res] : panel) {
        w.row({dep, fmt(res.risk_up.estimate), fmt(res.risk_up.std_error), res.risk_up.stars,
               fmt(res.ame), fmt(res.prob_y1), fmt(res.pseudo_r2), std::to_string(res.n)});
    }
}

inline void write_pricing_csv(const std::string& path, const std::string& hash,
                              const std::vector<QuarterPricing>& pricing) {
    csv::Writer w(path);
    w.comment("manifest_hash=" + hash);
    w.row({"facility_id", "quarter", "chosen_loan_type", "chosen_base_rate_pct",
           "applicable_spread_bps", "commitment_fee_bps", "annual_fee_bps", "utilization_fee_bps",
           "utilization_fee_active", "default_margin_applied_bps", "aisd_bps", "aisu_bps"});
    for (const auto& p : pricing) {
        const char* type = p.chosen_loan_type == LoanType::libor
                               ? "LIBOR"
                               : (p.chosen_loan_type == LoanType::abr ? "ABR" : "fixed");
        w.row({p.facility_id, p.quarter.str(), type, fmt(p.chosen_base_rate_pct),
               fmt(p.applicable_spread_bps), fmt(p.commitment_fee_bps), fmt(p.annual_fee_bps),
               fmt(p.utilization_fee_bps), p.utilization_fee_active ? "1" : "0",
               fmt(p.default_margin_applied_bps), fmt(p.aisd_bps), fmt(p.aisu_bps)});
    }
}

inline void write_returns_csv(const std::string& path, const std::string& hash,
                              const std::vector<ReturnRecord>& records) {
    csv::Writer w(path);
    w.comment("manifest_hash=" + hash);
    w.row({"facility_id", "quarter", "spread_income", "commitment_fee_income", "annual_fee_income",
           "utilization_fee_income", "upfront_amortized", "denominator", "promised_return",
           "promised_aisd_return", "promised_aisu_return", "pd_used", "expected_return",
           "expected_aisd_return", "expected_aisu_return"});
    for (const auto& r : records) {
        w.row({r.facility_id, r.quarter.str(), fmt(r.income.spread_income),
               fmt(r.income.commitment_fee_income), fmt(r.income.annual_fee_income),
               fmt(r.income.utilization_fee_income), fmt(r.income.upfront_amortized),
               fmt(r.denominator), fmt(r.promised_return), fmt(r.promised_aisd_return),
               fmt(r.promised_aisu_return), r.pd_used ? fmt(*r.pd_used) : "",
               r.expected_return ? fmt(*r.expected_return) : "",
               r.expected_aisd_return ? fmt(*r.expected_aisd_return) : "",
               r.expected_aisu_return ? fmt(*r.expected_aisu_return) : ""});
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Table builders (shared by run_pipeline and the CLI subcommands)
// ---------------------------------------------------------------------------

inline std::map<std::string, std::map<int, std::optional<double>>> build_table3(
    const std::vector<PanelRow>& rows) {
    std::map<std::string, std::map<int, std::optional<double>>> out;
    std::vector<double> risks;
    std::vector<const PanelRow*> usable;
    for (const auto& row : rows) {
        if (!row.risk || !row.expected_quarterly) continue;
        usable.push_back(&row);
        risks.push_back(*row.risk);
    }
    if (risks.size() < 5) return out;
    auto buckets = econ::bucketize(risks, 5);

    auto run = [&](const char* series, std::optional<double> PanelRow::* member) {
        std::vector<UnivariateObs> obs;
        std::vector<UnivariateObs> total;
        for (size_t i = 0; i < usable.size(); ++i) {
            const auto v = usable[i]->*member;
            if (!v) continue;
            obs.push_back({usable[i]->return_quarter, buckets.labels[i], *v});
            total.push_back({usable[i]->return_quarter, -1, *v});
        }
        auto per_bucket = annualize_univariate(obs);
        auto overall = annualize_univariate(total);
        std::map<int, std::optional<double>> row;
        for (const auto& [bucket, value] : per_bucket)
            row[bucket] = value ? std::optional<double>(100.0 * *value) : std::nullopt;
        if (auto it = overall.find(-1); it != overall.end() && it->second)
            row[-1] = 100.0 * *it->second;
        out[series] = std::move(row);
    };
    run("expected_return", &PanelRow::expected_quarterly);
    run("expected_aisd_return", &PanelRow::expected_aisd_quarterly);
    run("expected_aisu_return", &PanelRow::expected_aisu_quarterly);
    return out;
}

struct ModelRunSummary {
    econ::RegressionResult result;
    int rows_considered = 0;
    int rows_dropped_missing = 0;
};

inline ModelRunSummary run_ols_spec(const std::vector<PanelRow>& rows, const ModelSpec& spec) {
    auto frame = build_model_frame(rows, spec);
    ModelRunSummary out;
    out.rows_considered = frame.rows_considered;
    out.rows_dropped_missing = frame.rows_dropped_missing;
    out.result = econ::ols_clustered(econ::build_design(frame.dataset));
    return out;
}

inline ProbitSummary summarize_probit(const econ::ProbitResult& res) {
    ProbitSummary s;
    s.risk_up.estimate = res.coefficient("risk_up").value_or(0.0);
    s.risk_up.std_error = res.std_error("risk_up").value_or(0.0);
    s.risk_up.stars = significance_stars(s.risk_up.estimate, s.risk_up.std_error);
    s.ame = res.marginal_effects.count("risk_up") ? res.marginal_effects.at("risk_up") : 0.0;
    s.prob_y1 = res.prob_y1;
    s.pseudo_r2 = res.pseudo_r_squared;
    s.n = res.n;
    return s;
}

// ---------------------------------------------------------------------------
// The full run: ingest or generate, price, compute returns, estimate every
// table, and emit the output bundle with a manifest.
// ---------------------------------------------------------------------------

inline PipelineResult run_pipeline(const PipelineRun& run) {
    namespace fs = std::filesystem;
    if (run.output_dir.empty())
        throw PipelineError(PipelineError::Stage::validation, "output directory required");
    fs::create_directories(run.output_dir);
    auto out_path = [&](const std::string& name) {
        return (fs::path(run.output_dir) / name).string();
    };

    // Partial outputs from a previous or failing run must not survive.
    static const char* kOutputs[] = {
        "facilities.jsonl", "firms.csv", "facility_states.csv", "rates.csv",
        "lender_returns.csv", "pricing.csv", "returns.csv", "table3.csv", "table4.csv",
        "table5.csv", "table6_a.csv", "table6_b.csv", "table7_a.csv", "table7_b.csv",
        "fig1_aisd_aisu.csv", "fig2_usage_by_risk_quartile.csv", "fig3_pd_by_quarter.csv",
        "exclusions.csv", "manifest.json"};
    auto cleanup = [&] {
        for (const char* name : kOutputs) {
            std::error_code ec;
            fs::remove(out_path(name), ec);
        }
    };
    cleanup();

    PipelineResult result;
    try {
        // run hash: configuration + policy + version
        json run_desc;
        run_desc["tool"] = "revolv";
        run_desc["version"] = version_string();
        run_desc["policy"] = to_json(run.policy);
        run_desc["control_policy"] =
            run.control_policy == ControlPolicy::rolling_avg ? "rolling_avg" : "annualized_flows";
        run_desc["crisis_first"] = run.crisis.first.str();
        run_desc["crisis_last"] = run.crisis.last.str();
        if (run.synthetic) run_desc["synthetic"] = to_json(*run.synthetic);
        else {
            run_desc["inputs"] = {{"facilities", run.inputs.facilities_jsonl},
                                  {"firms", run.inputs.firms_csv},
                                  {"states", run.inputs.states_csv},
                                  {"rates", run.inputs.rates_csv},
                                  {"lender_returns", run.inputs.lender_returns_csv}};
        }
        const std::string hash = hex64(fnv1a(run_desc.dump()));
        result.manifest_hash = hash;

        // ---- input panel ------------------------------------------------------
        Panel panel;
        std::optional<synth::Bundle> bundle;
        if (run.synthetic) {
            bundle = synth::generate_synthetic(*run.synthetic);
            if (run.write_input_bundle) {
                const std::string comment = "manifest_hash=" + hash;
                io::write_facilities_jsonl(out_path("facilities.jsonl"), bundle->panel.facilities);
                io::write_firms_csv(out_path("firms.csv"), bundle->panel.firms, comment);
                io::write_states_csv(out_path("facility_states.csv"), bundle->panel.states, comment);
                io::write_rates_csv(out_path("rates.csv"), bundle->panel.rates, comment);
                io::write_lender_returns_csv(out_path("lender_returns.csv"),
                                             bundle->panel.lender_returns, comment);
                // the analysis reads back its own bundle, so the files and the
                // in-memory panel cannot drift apart
                panel = io::ingest_panel({out_path("facilities.jsonl"), out_path("firms.csv"),
                                          out_path("facility_states.csv"), out_path("rates.csv"),
                                          out_path("lender_returns.csv")});
            } else {
                panel = bundle->panel;
            }
        } else {
            try {
                panel = io::ingest_panel(run.inputs);
            } catch (const std::exception& e) {
                throw PipelineError(PipelineError::Stage::validation, e.what());
            }
        }

        // ---- assembly ----------------------------------------------------------
        PanelOptions options;
        options.policy = run.policy;
        options.control_policy = run.control_policy;
        options.crisis = run.crisis;
        result.base = assemble_panel(panel, options);
        const auto& rows = result.base.rows;
        if (rows.empty())
            throw PipelineError(PipelineError::Stage::computation,
                                "no priceable facility-quarter observations survive exclusions");

        // ---- table 3 ----------------------------------------------------------
        result.table3 = build_table3(rows);

        std::map<std::string, std::map<std::string, int>> model_drops;

        // ---- table 4 ----------------------------------------------------------
        {
            ModelSpec fe_only = base_model("expected_return", "(1) fixed effects");
            fe_only.regressors = {"risk"};
            ModelSpec base2 = base_model("expected_return", "(2) base");
            ModelSpec aisd = base_model("expected_aisd_return", "(3) aisd");
            ModelSpec aisu = base_model("expected_aisu_return", "(4) aisu");
            for (const auto& spec : {fe_only, base2, aisd, aisu}) {
                auto summary = run_ols_spec(rows, spec);
                model_drops["table4:" + spec.name]["missing_regressor"] = summary.rows_dropped_missing;
                result.table4.emplace_back(spec.name, std::move(summary.result));
            }
        }

        // ---- table 5 ----------------------------------------------------------
        {
            const std::array<std::string, 3> deps = {"expected_return", "expected_aisd_return",
                                                     "expected_aisu_return"};
            auto risk_row = [&](const std::string& label, const std::vector<PanelRow>& sample,
                                const std::string& risk_name,
                                bool drop_lender_fe = false) {
                Table5Row trow;
                trow.label = label;
                trow.term = risk_name;
                for (const auto& dep : deps) {
                    ModelSpec spec = base_model(dep, label);
                    // swap the risk regressor
                    spec.regressors.front() = risk_name;
                    if (drop_lender_fe) {
                        spec.fixed_effects = {"borrower", "rating", "quarter"};
                        spec.regressors.push_back("lender_beta");
                    }
                    auto summary = run_ols_spec(sample, spec);
                    model_drops["table5:" + label + ":" + dep]["missing_regressor"] =
                        summary.rows_dropped_missing;
                    TableCell cell;
                    cell.estimate = summary.result.coefficient(risk_name).value_or(0.0);
                    cell.std_error = summary.result.std_error(risk_name).value_or(0.0);
                    cell.stars = significance_stars(cell.estimate, cell.std_error);
                    trow.by_dep[dep] = cell;
                    trow.n_by_dep[dep] = summary.result.n;
                }
                return trow;
            };

            // (1) Z-score in place of market risk
            result.table5.push_back(risk_row("(1) z_score", rows, "z_score_risk"));
            // (2) lender beta replaces lender fixed effects
            result.table5.push_back(risk_row("(2) lender_beta", rows, "risk", true));

            // (3)-(7): policy variants need a re-assembled panel
            auto variant_rows = [&](PanelOptions opt) {
                return assemble_panel(panel, opt).rows;
            };
            {
                PanelOptions opt = options;
                opt.policy.upfront_amortization = UpfrontAmortization::settle_to_min_maturity_or_path_end;
                result.table5.push_back(risk_row("(3) upfront_settle_to_path_end", variant_rows(opt), "risk"));
            }
            {
                PanelOptions opt = options;
                opt.policy.upfront_amortization = UpfrontAmortization::while_unamended;
                result.table5.push_back(risk_row("(4) upfront_while_unamended", variant_rows(opt), "risk"));
            }
            {
                PanelOptions opt = options;
                opt.policy.ccf_rule = CcfRule::gt14m_half_else_zero;
                result.table5.push_back(risk_row("(5) ccf_gt14m", variant_rows(opt), "risk"));
            }
            {
                PanelOptions opt = options;
                opt.policy.ccf_rule = CcfRule::always_half;
                result.table5.push_back(risk_row("(6) ccf_always_half", variant_rows(opt), "risk"));
            }
            {
                PanelOptions opt = options;
                opt.control_policy = ControlPolicy::annualized_flows;
                result.table5.push_back(risk_row("(7) annualized_flows", variant_rows(opt), "risk"));
            }

            // (8) risk-squared term added to the base model
            {
                Table5Row trow;
                trow.label = "(8) risk_squared";
                trow.term = "risk+risk_squared";
                for (const auto& dep : deps) {
                    ModelSpec spec = base_model(dep, trow.label);
                    spec.regressors.insert(spec.regressors.begin() + 1, "risk_squared");
                    auto summary = run_ols_spec(rows, spec);
                    TableCell cell;
                    cell.estimate = summary.result.coefficient("risk_squared").value_or(0.0);
                    cell.std_error = summary.result.std_error("risk_squared").value_or(0.0);
                    cell.stars = significance_stars(cell.estimate, cell.std_error);
                    trow.by_dep[dep] = cell;
                    trow.n_by_dep[dep] = summary.result.n;
                }
                result.table5.push_back(trow);
            }

            // (9)-(10) riskiest-firm subsamples
            result.table5.push_back(
                risk_row("(9) riskiest_whole_sample",
                         riskiest_firm_subsample(rows, false, run.crisis), "risk"));
            result.table5.push_back(
                risk_row("(10) riskiest_crisis",
                         riskiest_firm_subsample(rows, true, run.crisis), "risk"));
        }

        // ---- table 6 ----------------------------------------------------------
        {
            const std::array<std::pair<std::string, std::string>, 3> expected_deps = {
                std::pair{"expected_return", "(1) expected"},
                std::pair{"expected_aisd_return", "(2) expected aisd"},
                std::pair{"expected_aisu_return", "(3) expected aisu"}};
            for (const auto& [dep, label] : expected_deps) {
                ModelSpec spec = base_model(dep, label);
                spec.interactions.emplace_back("risk", "crisis");
                auto summary = run_ols_spec(rows, spec);
                result.table6_expected.emplace_back(label, std::move(summary.result));
            }
            const std::array<std::pair<std::string, std::string>, 3> committed_deps = {
                std::pair{"promised_return", "(1) committed"},
                std::pair{"promised_aisd_return", "(2) committed aisd"},
                std::pair{"promised_aisu_return", "(3) committed aisu"}};
            for (const auto& [dep, label] : committed_deps) {
                ModelSpec spec = base_model(dep, label);
                spec.interactions.emplace_back("risk", "crisis");
                auto summary = run_ols_spec(rows, spec);
                result.table6_committed.emplace_back(label, std::move(summary.result));
            }
        }

        // ---- table 7 ----------------------------------------------------------
        {
            for (const auto& dep : {"expected_return", "expected_aisd_return", "expected_aisu_return"}) {
                for (bool high : {false, true}) {
                    ProbitFrameOptions popt;
                    popt.dependent = dep;
                    popt.high_increases = high;
                    ModelSpec base = base_model(dep, "probit");
                    auto frame = build_probit_frame(rows, base, popt);
                    model_drops[std::string("table7:") + dep + (high ? ":high" : ":plain")] = {
                        {"missing_pair", frame.pairs_dropped},
                        {"fe_level_constant_outcome", frame.rows_dropped_separation}};
                    if (frame.dataset.n < 50) continue;  // too thin to estimate
                    try {
                        auto res = econ::probit_clustered(econ::build_design(frame.dataset), {"risk_up"});
                        auto& slot = high ? result.table7_high_increases : result.table7_increases;
                        slot[dep] = summarize_probit(res);
                    } catch (const econ::EstimationError&) {
                        // a degenerate bundle can make a probit column separate;
                        // the table row is simply absent
                    }
                }
            }
        }

        // ---- outputs ----------------------------------------------------------
        detail::write_pricing_csv(out_path("pricing.csv"), hash, result.base.pricing);
        detail::write_returns_csv(out_path("returns.csv"), hash, result.base.returns);
        detail::write_table3(out_path("table3.csv"), hash, result.table3);
        detail::write_regressions(out_path("table4.csv"), hash, result.table4);
        detail::write_table5(out_path("table5.csv"), hash, result.table5);
        detail::write_regressions(out_path("table6_a.csv"), hash, result.table6_expected);
        detail::write_regressions(out_path("table6_b.csv"), hash, result.table6_committed);
        detail::write_table7(out_path("table7_a.csv"), hash, result.table7_increases);
        detail::write_table7(out_path("table7_b.csv"), hash, result.table7_high_increases);

        // figures
        {
            csv::Writer w(out_path("fig1_aisd_aisu.csv"));
            w.comment("manifest_hash=" + hash);
            w.row({"quarter", "mean_aisd_bps", "mean_aisu_bps", "n"});
            std::map<Quarter, std::array<double, 3>> agg;
            for (const auto& p : result.base.pricing) {
                auto& cell = agg[p.quarter];
                cell[0] += p.aisd_bps;
                cell[1] += p.aisu_bps;
                cell[2] += 1.0;
            }
            for (const auto& [q, cell] : agg)
                w.row({q.str(), detail::fmt(cell[0] / cell[2]), detail::fmt(cell[1] / cell[2]),
                       detail::fmt(cell[2])});
        }
        {
            csv::Writer w(out_path("fig2_usage_by_risk_quartile.csv"));
            w.comment("manifest_hash=" + hash);
            w.row({"risk_quartile", "mean_usage_to_commitment", "n"});
            std::vector<double> risks;
            std::vector<double> usage;
            for (const auto& row : rows) {
                if (!row.risk) continue;
                risks.push_back(*row.risk);
                usage.push_back(row.usage_ratio);
            }
            if (risks.size() >= 4) {
                auto buckets = econ::bucketize(risks, 4);
                std::array<double, 4> sums{}, counts{};
                for (size_t i = 0; i < usage.size(); ++i) {
                    sums[static_cast<size_t>(buckets.labels[i])] += usage[i];
                    counts[static_cast<size_t>(buckets.labels[i])] += 1.0;
                }
                for (int b = 0; b < 4; ++b)
                    if (counts[static_cast<size_t>(b)] > 0)
                        w.row({std::to_string(b + 1),
                               detail::fmt(sums[static_cast<size_t>(b)] / counts[static_cast<size_t>(b)]),
                               detail::fmt(counts[static_cast<size_t>(b)])});
            }
        }
        {
            csv::Writer w(out_path("fig3_pd_by_quarter.csv"));
            w.comment("manifest_hash=" + hash);
            w.row({"quarter", "mean_pd", "n_firms"});
            for (const auto& [q, cell] : result.base.pd_sum_by_quarter)
                if (cell.second > 0)
                    w.row({q.str(), detail::fmt(cell.first / cell.second), std::to_string(cell.second)});
        }

        // exclusions: rows in = rows kept + rows excluded, by cause
        {
            csv::Writer w(out_path("exclusions.csv"));
            w.comment("manifest_hash=" + hash);
            w.row({"stage", "cause", "count"});
            w.row({"assembly", "_rows_in", std::to_string(result.base.exclusions.rows_in)});
            w.row({"assembly", "_rows_kept", std::to_string(result.base.exclusions.rows_kept)});
            for (const auto& [cause, count] : result.base.exclusions.by_cause)
                w.row({"assembly", cause, std::to_string(count)});
            for (const auto& [stage, causes] : model_drops)
                for (const auto& [cause, count] : causes)
                    w.row({stage, cause, std::to_string(count)});
        }

        // manifest, written last with checksums of everything else
        {
            json manifest = run_desc;
            manifest["run_hash"] = hash;
            if (bundle) {
                manifest["planted"] = {{"alpha", bundle->params.alpha},
                                       {"slope", bundle->params.slope},
                                       {"interaction", bundle->params.interaction},
                                       {"crisis_level", bundle->params.crisis_level},
                                       {"clamped_targets", bundle->clamped_targets}};
                for (const auto& [name, g] : bundle->params.gamma)
                    manifest["planted"]["gamma"][name] = g;
            }
            manifest["exclusions"] = {{"rows_in", result.base.exclusions.rows_in},
                                      {"rows_kept", result.base.exclusions.rows_kept}};
            for (const auto& [cause, count] : result.base.exclusions.by_cause)
                manifest["exclusions"]["by_cause"][cause] = count;
            json checksums = json::object();
            for (const char* name : kOutputs) {
                if (std::string(name) == "manifest.json") continue;
                if (!fs::exists(out_path(name))) continue;
                const std::string sum = file_checksum(out_path(name));
                checksums[name] = sum;
                result.output_checksums[name] = sum;
            }
            manifest["checksums"] = checksums;
            std::ofstream out(out_path("manifest.json"), std::ios::binary);
            out << manifest.dump(2) << "\n";
        }
        return result;
    } catch (const PipelineError&) {
        cleanup();
        throw;
    } catch (const synth::ConfigError& e) {
        cleanup();
        throw PipelineError(PipelineError::Stage::validation, e.what());
    } catch (const econ::EstimationError& e) {
        cleanup();
        throw PipelineError(PipelineError::Stage::estimation, e.what());
    } catch (const std::exception& e) {
        cleanup();
        throw PipelineError(PipelineError::Stage::computation, e.what());
    }
}

} // namespace revolv::pipeline
