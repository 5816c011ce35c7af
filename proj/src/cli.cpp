#include "bner/cli.hpp"

#include "bner/bootstrap.hpp"
#include "bner/ebp.hpp"
#include "bner/errors.hpp"
#include "bner/format.hpp"
#include "bner/io.hpp"
#include "bner/parallel.hpp"
#include "bner/reml.hpp"
#include "bner/sim.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace bner {

namespace {

namespace fs = std::filesystem;

constexpr double z975 = 1.959963984540054;

std::ofstream open_output(const fs::path& dir, const std::string& name) {
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    return out;
}

void require_file(const std::string& path, const std::string& flag) {
    if (path.empty()) throw std::invalid_argument(flag + " is required for this command");
    if (!fs::is_regular_file(path)) throw std::invalid_argument(flag + ": file '" + path + "' does not exist");
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
    return out;
}

struct Inputs {
    Transform transform = Transform::identity();
    SampleData sample;
    std::optional<AuxCounts> aux;
};

Inputs load_inputs(const RunConfig& cfg, bool need_aux) {
    Inputs in;
    in.transform = Transform::from_name(cfg.transform);
    require_file(cfg.data, "--data");
    in.sample = load_unit_csv(cfg.data, in.transform);
    if (!cfg.population.empty()) {
        require_file(cfg.population, "--population");
        in.aux = load_population_csv(cfg.population);
    } else if (!cfg.aux.empty() || !cfg.patterns.empty()) {
        require_file(cfg.aux, "--aux");
        require_file(cfg.patterns, "--patterns");
        in.aux = load_aux_csv(cfg.aux, load_patterns_csv(cfg.patterns));
    } else if (need_aux) {
        throw std::invalid_argument("this command needs --aux with --patterns, or --population");
    }
    if (in.aux) in.sample = align_sample_with_aux(in.sample, *in.aux);
    return in;
}

std::string coefficient_name(const SampleData& s, int block, std::size_t i) {
    const auto& names = block == 1 ? s.x1_names : s.x2_names;
    const std::string x = i < names.size() ? names[i] : "x" + std::to_string(block) + "_" + std::to_string(i + 1);
    return "beta" + std::to_string(block) + "[" + x + "]";
}

void write_wald_row(std::ostream& os, const std::string& name, double est, double se) {
    const double z = est / se;
    const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
    os << name << ',' << format_number(est) << ',' << format_number(se) << ',' << format_number(z) << ','
       << format_number(p) << ',' << format_number(est - z975 * se) << ',' << format_number(est + z975 * se) << '\n';
}

void write_fit_outputs(const fs::path& dir, const FittedModel& fit, const SampleData& sample,
                       const Transform& transform) {
    {
        auto os = open_output(dir, "params.csv");
        os << "parameter,estimate,std_error,z_value,p_value,ci_lower,ci_upper\n";
        const Eigen::VectorXd se_beta = fit.beta_std_errors();
        const Eigen::VectorXd beta = fit.params.beta.stacked();
        for (std::size_t i = 0; i < sample.p1(); ++i)
            write_wald_row(os, coefficient_name(sample, 1, i), beta[static_cast<Eigen::Index>(i)],
                           se_beta[static_cast<Eigen::Index>(i)]);
        for (std::size_t i = 0; i < sample.p2(); ++i) {
            const auto k = static_cast<Eigen::Index>(sample.p1() + i);
            write_wald_row(os, coefficient_name(sample, 2, i), beta[k], se_beta[k]);
        }
        const Vec6 theta = fit.params.theta.as_vector();
        const Vec6 se_theta = fit.theta_std_errors();
        for (int k = 0; k < 6; ++k) write_wald_row(os, VarianceComponents::names[k], theta[k], se_theta[k]);
    }
    {
        auto os = open_output(dir, "fit_summary.csv");
        os << "key,value\n";
        os << "transform," << transform.name() << '\n';
        os << "domains," << sample.num_domains() << '\n';
        os << "sampled_domains," << sample.sampled_domains() << '\n';
        os << "units," << sample.total_units() << '\n';
        os << "converged," << (fit.converged ? "true" : "false") << '\n';
        os << "iterations," << fit.iterations << '\n';
        os << "reml_loglik," << format_number(fit.reml_loglik) << '\n';
        os << "score_norm," << format_number(fit.score.norm()) << '\n';
        os << "projection_events," << fit.projection_events << '\n';
        os << "at_boundary," << (fit.at_boundary ? "true" : "false") << '\n';
        os << "warnings," << join(fit.warnings, "; ") << '\n';
    }
    {
        auto os = open_output(dir, "random_effects.csv");
        os << "domain_id,n_d,u1,u2\n";
        for (std::size_t d = 0; d < sample.num_domains(); ++d) {
            os << sample.domain(d).id << ',' << sample.domain(d).n() << ',' << format_number(fit.blups[d][0]) << ','
               << format_number(fit.blups[d][1]) << '\n';
        }
    }
}

FittedModel fit_and_report(const Inputs& in, const fs::path& dir, std::ostream& log) {
    FittedModel fit = fit_reml(in.sample);
    for (const auto& w : fit.warnings) log << "warning: " << w << '\n';
    write_fit_outputs(dir, fit, in.sample, in.transform);
    return fit;
}

void command_fit(const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
    const Inputs in = load_inputs(cfg, false);
    fit_and_report(in, dir, log);
}

void command_predict(const RunConfig& cfg, unsigned threads, const fs::path& dir, std::ostream& log) {
    const Inputs in = load_inputs(cfg, true);
    const FittedModel fit = fit_and_report(in, dir, log);
    McOptions mc;
    mc.L = cfg.L;
    mc.seed = cfg.seed;
    mc.threads = threads;
    const auto targets = standard_targets();
    const DomainEstimates est = ebp_predict(targets, in.transform, fit.params, in.sample, *in.aux, mc);
    const PatternLayout layout = build_layout(in.sample, *in.aux);

    auto os = open_output(dir, "estimates.csv");
    os << "domain_id,n_d,N_d,dir1,ebp1,dir2,ebp2,Rdir,Rebp,Addir,Adebp\n";
    for (std::size_t d = 0; d < in.sample.num_domains(); ++d) {
        const auto& dom = in.sample.domain(d);
        std::array<double, 4> dir;
        dir.fill(std::numeric_limits<double>::quiet_NaN());
        if (dom.n() > 0) {
            const DirectEstimate de = direct_estimate(dom, in.transform);
            dir = {de.mean1, de.mean2, de.ratio_of_means, de.mean_of_ratios};
        }
        const auto& v = est.values[d];
        os << dom.id << ',' << dom.n() << ',' << layout.population_size(d) << ',' << format_number(dir[0]) << ','
           << format_number(v[0]) << ',' << format_number(dir[1]) << ',' << format_number(v[1]) << ','
           << format_number(dir[2]) << ',' << format_number(v[3]) << ',' << format_number(dir[3]) << ','
           << format_number(v[2]) << '\n';
    }
}

void command_mse(const RunConfig& cfg, unsigned threads, const fs::path& dir, std::ostream& log) {
    const Inputs in = load_inputs(cfg, true);
    const FittedModel fit = fit_and_report(in, dir, log);
    std::vector<TargetSpec> targets;
    for (const auto& name : cfg.targets) targets.push_back(TargetSpec::from_name(name));
    BootstrapOptions bo;
    bo.B = cfg.B;
    bo.L = cfg.L;
    bo.seed = cfg.seed;
    bo.refit = !cfg.no_refit;
    bo.threads = threads;
    const MseReport rep = bootstrap_mse(fit, in.sample, *in.aux, targets, in.transform, bo);
    for (const auto& w : rep.warnings) log << "warning: " << w << '\n';

    {
        auto os = open_output(dir, "mse.csv");
        os << "domain_id,n_d,target,estimate,mse,rrmse_pct\n";
        for (std::size_t d = 0; d < rep.domain_ids.size(); ++d) {
            for (std::size_t k = 0; k < rep.target_names.size(); ++k) {
                os << rep.domain_ids[d] << ',' << in.sample.domain(d).n() << ',' << rep.target_names[k] << ','
                   << format_number(rep.estimate[d][k]) << ',' << format_number(rep.mse[d][k]) << ','
                   << format_number(rep.rrmse_pct[d][k]) << '\n';
            }
        }
    }
    if (!rep.means_mse.empty()) {
        auto os = open_output(dir, "mse_means.csv");
        os << "domain_id,mse11,mse12,mse22\n";
        for (std::size_t d = 0; d < rep.domain_ids.size(); ++d) {
            const Mat2& m = rep.means_mse[d];
            os << rep.domain_ids[d] << ',' << format_number(m(0, 0)) << ',' << format_number(m(0, 1)) << ','
               << format_number(m(1, 1)) << '\n';
        }
    }
    auto os = open_output(dir, "mse_summary.csv");
    os << "key,value\n";
    os << "B," << rep.replicates << '\n';
    os << "L," << cfg.L << '\n';
    os << "seed," << cfg.seed << '\n';
    os << "refit," << (bo.refit ? "true" : "false") << '\n';
    os << "failed_replicates," << rep.failures << '\n';
    os << "unreliable," << (rep.unreliable ? "true" : "false") << '\n';
}

std::function<void(std::size_t, std::size_t)> progress_printer(const RunConfig& cfg, std::ostream& log,
                                                               const std::string& label) {
    if (cfg.quiet) return {};
    return [&log, label](std::size_t done, std::size_t total) {
        const std::size_t step = std::max<std::size_t>(1, total / 10);
        if (done % step == 0 || done == total) log << label << ": " << done << '/' << total << std::endl;
    };
}

Sim1Config sim_base(const RunConfig& cfg, unsigned threads, int n_d, int iterations) {
    Sim1Config sc;
    sc.D = cfg.D;
    sc.N_d = cfg.N_d;
    sc.n_d = n_d;
    sc.I = iterations;
    sc.L = cfg.L;
    sc.seed = cfg.seed;
    sc.threads = threads;
    return sc;
}

void command_sim1(const RunConfig& cfg, unsigned threads, const fs::path& dir, std::ostream& log) {
    auto metrics = open_output(dir, "sim1_metrics.csv");
    auto summary = open_output(dir, "sim1_summary.csv");
    summary << "n_d,iterations_used,failures\n";
    bool header = true;
    for (int n : cfg.n_d) {
        Sim1Config sc = sim_base(cfg, threads, n, cfg.I);
        sc.progress = progress_printer(cfg, log, "sim1 n_d=" + std::to_string(n));
        const Sim1Result r = run_sim1(sc);
        write_metrics_csv(metrics, cfg.D, n, r.tables, header);
        header = false;
        auto dom = open_output(dir, "sim1_domains_nd" + std::to_string(n) + ".csv");
        write_domain_metrics_csv(dom, generate_sim1_covariates(sc).domain_ids, r.tables);
        summary << n << ',' << r.iterations_used << ',' << r.failures << '\n';
    }
}

void command_sim2(const RunConfig& cfg, unsigned threads, const fs::path& dir, std::ostream& log) {
    const int n = cfg.n_d.front();
    Sim1Config ref_cfg = sim_base(cfg, threads, n, cfg.reference_I);
    ref_cfg.progress = progress_printer(cfg, log, "sim2 reference (sim1 n_d=" + std::to_string(n) + ")");
    const Sim1Result ref = run_sim1(ref_cfg);
    const auto ids = generate_sim1_covariates(ref_cfg).domain_ids;

    Sim2Config s2;
    s2.base = sim_base(cfg, threads, n, cfg.I);
    s2.base.progress = progress_printer(cfg, log, "sim2");
    s2.B_grid = cfg.B_grid;
    s2.reference_mse = reference_mse_from(ref);
    const Sim2Result r = run_sim2(s2);

    const auto& labels = sim_target_labels();
    {
        auto os = open_output(dir, "sim2_reference_mse.csv");
        os << "domain,target,MSE\n";
        for (std::size_t k = 0; k < labels.size(); ++k)
            for (std::size_t d = 0; d < ids.size(); ++d)
                os << ids[d] << ',' << labels[k] << ',' << format_number(s2.reference_mse[k][d]) << '\n';
    }
    for (std::size_t g = 0; g < r.tables.size(); ++g) {
        auto os = open_output(dir, "sim2_metrics_B" + std::to_string(cfg.B_grid[g]) + ".csv");
        write_metrics_csv(os, cfg.D, n, r.tables[g]);
    }
    for (std::size_t k = 0; k < labels.size(); ++k) {
        auto os = open_output(dir, "boxplot_" + labels[k] + ".csv");
        write_boxplot_csv(os, r, k, ids);
    }
    auto os = open_output(dir, "sim2_summary.csv");
    os << "key,value\n";
    os << "reference_iterations_used," << ref.iterations_used << '\n';
    os << "iterations_used," << r.iterations_used << '\n';
    os << "failures," << r.failures << '\n';
    os << "bootstrap_failures," << r.bootstrap_failures << '\n';
}

}  // namespace

Command command_from_name(const std::string& name) {
    if (name == "fit") return Command::fit;
    if (name == "predict") return Command::predict;
    if (name == "mse") return Command::mse;
    if (name == "sim1") return Command::sim1;
    if (name == "sim2") return Command::sim2;
    throw std::invalid_argument("unknown command '" + name + "' (expected fit, predict, mse, sim1 or sim2)");
}

std::string command_name(Command c) {
    switch (c) {
    case Command::fit:
        return "fit";
    case Command::predict:
        return "predict";
    case Command::mse:
        return "mse";
    case Command::sim1:
        return "sim1";
    case Command::sim2:
        return "sim2";
    }
    return "?";
}

void RunConfig::validate() const {
    if (L < 1) throw std::invalid_argument("--L must be >= 1");
    if (B < 1) throw std::invalid_argument("--B must be >= 1");
    if (transform != "identity" && transform != "log") {
        throw std::invalid_argument("--transform must be identity or log");
    }
    if (command == Command::mse && targets.empty()) throw std::invalid_argument("--targets is empty");
    for (const auto& t : targets) TargetSpec::from_name(t);
    if (command == Command::sim1 || command == Command::sim2) {
        if (D < 1 || N_d < 1 || I < 1 || reference_I < 1) throw std::invalid_argument("--D, --Nd, --I must be >= 1");
        if (n_d.empty()) throw std::invalid_argument("--nd is empty");
        for (int n : n_d)
            if (n < 1 || n > N_d) throw std::invalid_argument("--nd values must lie in [1, Nd]");
        if (command == Command::sim2 && B_grid.empty()) throw std::invalid_argument("--B-grid is empty");
    }
}

bool parse_command_line(int argc, const char* const* argv, RunConfig& config, std::ostream& out) {
    CLI::App app{"Bivariate nested error regression: REML fitting, EBPs of domain parameters, bootstrap MSE"};
    app.set_config("--config", "", "key=value configuration file; command-line flags take precedence");
    std::string command;
    app.add_option("command", command, "fit | predict | mse | sim1 | sim2")
        ->required()
        ->check(CLI::IsMember({"fit", "predict", "mse", "sim1", "sim2"}));
    app.add_option("--data", config.data, "unit-level sample CSV");
    app.add_option("--aux", config.aux, "aggregated counts CSV (domain_id,pattern_id,N_dt)");
    app.add_option("--patterns", config.patterns, "covariate patterns CSV (pattern_id,x1_*,x2_*)");
    app.add_option("--population", config.population, "population covariate CSV (domain_id,x1_*,x2_*)");
    app.add_option("--transform", config.transform, "identity | log")->check(CLI::IsMember({"identity", "log"}));
    app.add_option("--targets", config.targets, "targets for mse: mean1, mean2, mean_of_ratios (A), ratio_of_means (R)")
        ->delimiter(',');
    app.add_option("--L", config.L, "Monte Carlo copies per EBP");
    app.add_option("--B", config.B, "bootstrap replicates");
    app.add_option("--seed", config.seed, "master random seed");
    app.add_option("--threads", config.threads, "worker threads (0 = all cores)");
    app.add_flag("--no-refit", config.no_refit, "keep the fitted parameters in bootstrap replicates");
    app.add_option("--out", config.out, "output directory");
    app.add_option("--D", config.D, "simulation: number of domains");
    app.add_option("--Nd", config.N_d, "simulation: population size per domain");
    app.add_option("--nd", config.n_d, "simulation: sample sizes (sim2 uses the first)")->delimiter(',');
    app.add_option("--I", config.I, "simulation: iterations");
    app.add_option("--B-grid", config.B_grid, "sim2: bootstrap sizes")->delimiter(',');
    app.add_option("--reference-I", config.reference_I, "sim2: iterations of the reference run");
    app.add_flag("--quiet", config.quiet, "suppress progress messages");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return false;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help();
        return false;
    }
    config.command = command_from_name(command);
    config.validate();
    return true;
}

void run(const RunConfig& config, std::ostream& log) {
    config.validate();
    const unsigned threads = config.threads ? config.threads : default_threads();
    const fs::path dir(config.out);
    fs::create_directories(dir);
    switch (config.command) {
    case Command::fit:
        command_fit(config, dir, log);
        break;
    case Command::predict:
        command_predict(config, threads, dir, log);
        break;
    case Command::mse:
        command_mse(config, threads, dir, log);
        break;
    case Command::sim1:
        command_sim1(config, threads, dir, log);
        break;
    case Command::sim2:
        command_sim2(config, threads, dir, log);
        break;
    }
}

std::string error_json(const std::exception& e) {
    nlohmann::json j;
    std::string type = "runtime_error";
    if (const auto* de = dynamic_cast<const DataError*>(&e)) {
        type = "data_error";
        if (de->line()) j["error"]["line"] = de->line();
    } else if (dynamic_cast<const ConsistencyError*>(&e)) {
        type = "consistency_error";
    } else if (dynamic_cast<const RankDeficiencyError*>(&e)) {
        type = "rank_deficiency";
    } else if (dynamic_cast<const FactorizationError*>(&e)) {
        type = "factorization_error";
    } else if (dynamic_cast<const DomainError*>(&e)) {
        type = "domain_error";
    } else if (dynamic_cast<const CLI::Error*>(&e) || dynamic_cast<const std::invalid_argument*>(&e)) {
        type = "usage_error";
    }
    j["error"]["type"] = type;
    j["error"]["message"] = e.what();
    return j.dump();
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    RunConfig config;
    try {
        if (!parse_command_line(argc, argv, config, out)) return 0;
    } catch (const std::exception& e) {
        err << error_json(e) << std::endl;
        return 2;
    }
    try {
        run(config, err);
    } catch (const std::exception& e) {
        err << error_json(e) << std::endl;
        return 1;
    }
    return 0;
}

}  // namespace bner
