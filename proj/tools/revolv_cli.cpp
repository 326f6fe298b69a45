// Command-line front end: synthetic-panel generation, ingestion checks,
// pricing/returns computation, univariate and regression analyses, and the
// full pipeline.
//
// Exit codes: 0 success, 1 usage, 2 validation/ingest failure,
// 3 computation failure, 4 estimation failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "revolv/io.hpp"
#include "revolv/pipeline.hpp"
#include "revolv/synth.hpp"
#include "revolv/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace revolv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitComputation = 3;
constexpr int kExitEstimation = 4;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";

    // inputs
    std::string facilities = "facilities.jsonl";
    std::string firms = "firms.csv";
    std::string states = "facility_states.csv";
    std::string rates = "rates.csv";
    std::string lender_returns;

    // synthetic
    bool synthetic = false;
    uint64_t seed = 42;
    int n_firms = 150;
    int n_quarters = 26;
    std::string grid_mode = "schedule";

    // policy
    std::string ccf_rule = "gt12m_half_else_zero";
    std::string amortization = "straight_line_stated_maturity";
    std::string annualization = "times4";
    double lgd_recovery = 0.348;
    bool lc_reduces_unused = false;
    std::string control_policy = "rolling_avg";
    std::string crisis_first = "2007Q3";
    std::string crisis_last = "2009Q1";
};

void add_common_options(CLI::App* cmd, CommonArgs& args, bool with_inputs = true) {
    cmd->add_option("--config", args.config_path,
                    "JSON config file; values in it override command-line flags");
    cmd->add_option("--out", args.out_dir, "output directory");
    if (with_inputs) {
        cmd->add_option("--facilities", args.facilities, "facility catalog (JSONL)");
        cmd->add_option("--firms", args.firms, "firm-quarter fundamentals (CSV)");
        cmd->add_option("--states", args.states, "facility-quarter usage states (CSV)");
        cmd->add_option("--rates", args.rates, "rate environments (CSV)");
        cmd->add_option("--lender-returns", args.lender_returns,
                        "lender quarterly returns (CSV, optional)");
        cmd->add_flag("--synthetic", args.synthetic,
                      "generate a synthetic panel instead of ingesting");
    }
    cmd->add_option("--seed", args.seed, "synthetic generator seed");
    cmd->add_option("--n-firms", args.n_firms, "synthetic firm count");
    cmd->add_option("--n-quarters", args.n_quarters, "synthetic quarter count");
    cmd->add_option("--grid-mode", args.grid_mode, "synthetic pricing mode: schedule|fundamentals");
    cmd->add_option("--ccf-rule", args.ccf_rule,
                    "gt12m_half_else_zero|gt14m_half_else_zero|always_half");
    cmd->add_option("--amortization", args.amortization,
                    "straight_line_stated_maturity|settle_to_min_maturity_or_path_end|while_unamended");
    cmd->add_option("--annualization", args.annualization, "times4|geometric");
    cmd->add_option("--lgd-recovery", args.lgd_recovery, "recovery factor paid in default");
    cmd->add_flag("--lc-reduces-unused", args.lc_reduces_unused,
                  "subtract letters of credit from the denominator's unused portion");
    cmd->add_option("--control-policy", args.control_policy, "rolling_avg|annualized_flows");
    cmd->add_option("--crisis-first", args.crisis_first, "first crisis expectation quarter");
    cmd->add_option("--crisis-last", args.crisis_last, "last crisis expectation quarter");
}

// The config file wins over flags wherever it supplies a key.
void apply_config_file(CommonArgs& args) {
    if (args.config_path.empty()) return;
    std::ifstream in(args.config_path);
    if (!in.good()) throw io::DataError("cannot open config file " + args.config_path);
    json j = json::parse(in);
    args.out_dir = j.value("out", args.out_dir);
    args.facilities = j.value("facilities", args.facilities);
    args.firms = j.value("firms", args.firms);
    args.states = j.value("states", args.states);
    args.rates = j.value("rates", args.rates);
    args.lender_returns = j.value("lender_returns", args.lender_returns);
    args.synthetic = j.value("synthetic", args.synthetic);
    args.seed = j.value("seed", args.seed);
    args.n_firms = j.value("n_firms", args.n_firms);
    args.n_quarters = j.value("n_quarters", args.n_quarters);
    args.grid_mode = j.value("grid_mode", args.grid_mode);
    args.ccf_rule = j.value("ccf_rule", args.ccf_rule);
    args.amortization = j.value("upfront_amortization", args.amortization);
    args.annualization = j.value("annualization", args.annualization);
    args.lgd_recovery = j.value("lgd_recovery_factor", args.lgd_recovery);
    args.lc_reduces_unused = j.value("lc_reduces_unused", args.lc_reduces_unused);
    args.control_policy = j.value("control_policy", args.control_policy);
    args.crisis_first = j.value("crisis_first", args.crisis_first);
    args.crisis_last = j.value("crisis_last", args.crisis_last);
}

Quarter parse_quarter_arg(const std::string& text, const char* what) {
    auto q = Quarter::parse(text);
    if (!q) throw io::DataError(std::string("bad quarter for ") + what + ": '" + text + "'");
    return *q;
}

ReturnPolicy policy_from_args(const CommonArgs& args) {
    ReturnPolicy p;
    p.ccf_rule = pipeline::ccf_rule_from_name(args.ccf_rule);
    p.upfront_amortization = pipeline::amortization_from_name(args.amortization);
    p.annualization =
        args.annualization == "geometric" ? Annualization::geometric : Annualization::times4;
    p.lgd_recovery_factor = args.lgd_recovery;
    p.lc_reduces_unused = args.lc_reduces_unused;
    return p;
}

synth::SyntheticConfig synthetic_config_from_args(const CommonArgs& args) {
    synth::SyntheticConfig cfg;
    cfg.seed = args.seed;
    cfg.n_firms = args.n_firms;
    cfg.n_quarters = args.n_quarters;
    cfg.grid_mode = args.grid_mode;
    cfg.crisis.first = parse_quarter_arg(args.crisis_first, "--crisis-first");
    cfg.crisis.last = parse_quarter_arg(args.crisis_last, "--crisis-last");
    cfg.control_policy = args.control_policy == "annualized_flows"
                             ? ControlPolicy::annualized_flows
                             : ControlPolicy::rolling_avg;
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        json j = json::parse(in);
        json merged = pipeline::to_json(cfg);
        merged.update(j);  // the config file wins
        cfg = pipeline::synthetic_config_from_json(merged);
    }
    return cfg;
}

pipeline::PipelineRun run_from_args(const CommonArgs& args) {
    pipeline::PipelineRun run;
    run.policy = policy_from_args(args);
    run.control_policy = args.control_policy == "annualized_flows" ? ControlPolicy::annualized_flows
                                                                   : ControlPolicy::rolling_avg;
    run.crisis.first = parse_quarter_arg(args.crisis_first, "--crisis-first");
    run.crisis.last = parse_quarter_arg(args.crisis_last, "--crisis-last");
    run.output_dir = args.out_dir;
    if (args.synthetic) {
        run.synthetic = synthetic_config_from_args(args);
    } else {
        run.inputs = {args.facilities, args.firms, args.states, args.rates, args.lender_returns};
    }
    return run;
}

Panel ingest_from_args(const CommonArgs& args) {
    return io::ingest_panel(
        {args.facilities, args.firms, args.states, args.rates, args.lender_returns});
}

pipeline::AssembledPanel assemble_from_args(const CommonArgs& args, const Panel& panel) {
    pipeline::PanelOptions options;
    options.policy = policy_from_args(args);
    options.control_policy = args.control_policy == "annualized_flows"
                                 ? ControlPolicy::annualized_flows
                                 : ControlPolicy::rolling_avg;
    options.crisis.first = parse_quarter_arg(args.crisis_first, "--crisis-first");
    options.crisis.last = parse_quarter_arg(args.crisis_last, "--crisis-last");
    return pipeline::assemble_panel(panel, options);
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const pipeline::PipelineError& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.stage()) {
        case pipeline::PipelineError::Stage::validation: return kExitValidation;
        case pipeline::PipelineError::Stage::computation: return kExitComputation;
        case pipeline::PipelineError::Stage::estimation: return kExitEstimation;
        }
        return kExitComputation;
    } catch (const econ::EstimationError& e) {
        std::cerr << "estimation error: " << e.what() << "\n";
        return kExitEstimation;
    } catch (const synth::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const io::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const csv::CsvError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const dsl::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitComputation;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"revolving credit line analytics"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);

    CommonArgs args;
    std::string model_spec_path;
    std::string probit_dep = "expected_return";
    bool probit_high = false;

    auto* generate = app.add_subcommand("generate", "write a synthetic input bundle");
    add_common_options(generate, args, false);

    auto* ingest = app.add_subcommand("ingest", "validate an input bundle");
    add_common_options(ingest, args);

    auto* price = app.add_subcommand("price", "resolve quarterly pricing, write pricing.csv");
    add_common_options(price, args);

    auto* returns = app.add_subcommand("returns", "compute quarterly returns, write returns.csv");
    add_common_options(returns, args);

    auto* univariate =
        app.add_subcommand("univariate", "risk-quintile annual returns, write table3.csv");
    add_common_options(univariate, args);

    auto* regress = app.add_subcommand("regress", "estimate a model-spec JSON on the panel");
    add_common_options(regress, args);
    regress->add_option("--model-spec", model_spec_path, "model specification JSON")->required();

    auto* probit = app.add_subcommand("probit", "increase-probability probit");
    add_common_options(probit, args);
    probit->add_option("--dep", probit_dep,
                       "expected_return|expected_aisd_return|expected_aisu_return");
    probit->add_flag("--high", probit_high, "upper-quartile increases variant");

    auto* pipeline_cmd = app.add_subcommand("pipeline", "full pipeline: all tables and figures");
    add_common_options(pipeline_cmd, args);

    CLI11_PARSE(app, argc, argv);

    return run_guarded([&]() -> int {
        apply_config_file(args);

        if (generate->parsed()) {
            auto cfg = synthetic_config_from_args(args);
            auto bundle = synth::generate_synthetic(cfg);
            fs::create_directories(args.out_dir);
            auto at = [&](const char* name) { return (fs::path(args.out_dir) / name).string(); };
            const std::string comment =
                "manifest_hash=" + pipeline::hex64(pipeline::fnv1a(pipeline::to_json(cfg).dump()));
            io::write_facilities_jsonl(at("facilities.jsonl"), bundle.panel.facilities);
            io::write_firms_csv(at("firms.csv"), bundle.panel.firms, comment);
            io::write_states_csv(at("facility_states.csv"), bundle.panel.states, comment);
            io::write_rates_csv(at("rates.csv"), bundle.panel.rates, comment);
            io::write_lender_returns_csv(at("lender_returns.csv"), bundle.panel.lender_returns,
                                         comment);
            std::cout << "wrote synthetic bundle to " << args.out_dir << " ("
                      << bundle.panel.facilities.size() << " facilities, " << cfg.n_firms
                      << " firms, " << cfg.n_quarters << " quarters)\n";
            return kExitOk;
        }

        if (ingest->parsed()) {
            Panel panel = ingest_from_args(args);
            size_t state_rows = 0;
            for (const auto& [fid, by_q] : panel.states) state_rows += by_q.size();
            size_t firm_rows = 0;
            for (const auto& [firm, by_q] : panel.firms) firm_rows += by_q.size();
            std::cout << "ok: " << panel.facilities.size() << " facilities, " << panel.firms.size()
                      << " firms (" << firm_rows << " firm-quarters), " << state_rows
                      << " facility-quarter states, " << panel.rates.size() << " rate quarters\n";
            return kExitOk;
        }

        if (price->parsed() || returns->parsed() || univariate->parsed()) {
            Panel panel = ingest_from_args(args);
            auto assembled = assemble_from_args(args, panel);
            fs::create_directories(args.out_dir);
            const std::string hash = "adhoc";
            auto at = [&](const char* name) { return (fs::path(args.out_dir) / name).string(); };
            if (price->parsed()) {
                pipeline::detail::write_pricing_csv(at("pricing.csv"), hash, assembled.pricing);
                std::cout << "wrote " << assembled.pricing.size() << " pricing rows\n";
            } else if (returns->parsed()) {
                pipeline::detail::write_returns_csv(at("returns.csv"), hash, assembled.returns);
                std::cout << "wrote " << assembled.returns.size() << " return records\n";
            } else {
                auto table3 = pipeline::build_table3(assembled.rows);
                pipeline::detail::write_table3(at("table3.csv"), hash, table3);
                std::cout << "wrote table3.csv over " << assembled.rows.size() << " observations\n";
            }
            std::cout << "excluded " << assembled.exclusions.total_excluded() << " of "
                      << assembled.exclusions.rows_in << " facility-quarters\n";
            return kExitOk;
        }

        if (regress->parsed()) {
            Panel panel = ingest_from_args(args);
            auto assembled = assemble_from_args(args, panel);
            std::ifstream in(model_spec_path);
            if (!in.good()) throw io::DataError("cannot open model spec " + model_spec_path);
            auto spec = pipeline::model_spec_from_json(json::parse(in));
            fs::create_directories(args.out_dir);
            auto at = [&](const char* name) { return (fs::path(args.out_dir) / name).string(); };
            if (spec.estimator == "probit") {
                auto frame = pipeline::build_model_frame(assembled.rows, spec);
                auto res =
                    econ::probit_clustered(econ::build_design(frame.dataset), spec.regressors);
                csv::Writer w(at("probit.csv"));
                w.row({"term", "estimate", "std_error", "stars"});
                for (size_t i = 0; i < res.names.size(); ++i) {
                    const double b = res.coef[static_cast<Eigen::Index>(i)];
                    const double se = res.se[static_cast<Eigen::Index>(i)];
                    w.row({res.names[i], csv::format_double(b), csv::format_double(se),
                           pipeline::significance_stars(b, se)});
                }
                for (const auto& [term, ame] : res.marginal_effects)
                    w.row({"ame:" + term, csv::format_double(ame), "", ""});
                std::cout << "probit: n=" << res.n << " pseudo-R2=" << res.pseudo_r_squared << "\n";
            } else {
                auto summary = pipeline::run_ols_spec(assembled.rows, spec);
                csv::Writer w(at("regression.csv"));
                w.row({"term", "estimate", "std_error", "stars"});
                for (size_t i = 0; i < summary.result.names.size(); ++i) {
                    const double b = summary.result.coef[static_cast<Eigen::Index>(i)];
                    const double se = summary.result.se[static_cast<Eigen::Index>(i)];
                    w.row({summary.result.names[i], csv::format_double(b), csv::format_double(se),
                           pipeline::significance_stars(b, se)});
                }
                std::cout << "ols: n=" << summary.result.n << " R2=" << summary.result.r_squared
                          << " clusters=" << summary.result.n_clusters << " (dropped "
                          << summary.rows_dropped_missing << " incomplete rows)\n";
            }
            return kExitOk;
        }

        if (probit->parsed()) {
            Panel panel = ingest_from_args(args);
            auto assembled = assemble_from_args(args, panel);
            pipeline::ProbitFrameOptions popt;
            popt.dependent = probit_dep;
            popt.high_increases = probit_high;
            auto base = pipeline::base_model(probit_dep, "probit");
            auto frame = pipeline::build_probit_frame(assembled.rows, base, popt);
            auto res = econ::probit_clustered(econ::build_design(frame.dataset), {"risk_up"});
            auto s = pipeline::summarize_probit(res);
            std::cout << "risk_up coefficient " << s.risk_up.estimate << s.risk_up.stars << " (se "
                      << s.risk_up.std_error << "), AME " << s.ame << ", Prob(Y=1) " << s.prob_y1
                      << ", pseudo-R2 " << s.pseudo_r2 << ", n=" << s.n << "\n";
            return kExitOk;
        }

        if (pipeline_cmd->parsed()) {
            auto run = run_from_args(args);
            auto result = pipeline::run_pipeline(run);
            std::cout << "pipeline complete: " << result.base.rows.size() << " observations, "
                      << "manifest " << result.manifest_hash << ", outputs in " << args.out_dir
                      << "\n";
            return kExitOk;
        }

        return kExitUsage;
    });
}
