#include "bner/sim.hpp"

#include "bner/errors.hpp"
#include "bner/format.hpp"
#include "bner/parallel.hpp"

#include <boost/random/bernoulli_distribution.hpp>

#include <atomic>
#include <cmath>
#include <mutex>
#include <ostream>

namespace bner {

namespace {

std::vector<TargetSpec> sim_targets() { return {TargetSpec::mean_of_ratios(), TargetSpec::ratio_of_means()}; }

// Serialized progress reporting shared by the worker threads.
class Progress {
public:
    Progress(const std::function<void(std::size_t, std::size_t)>& fn, std::size_t total) : fn_(fn), total_(total) {}
    void tick() {
        if (!fn_) return;
        std::lock_guard<std::mutex> lock(mu_);
        fn_(++done_, total_);
    }

private:
    const std::function<void(std::size_t, std::size_t)>& fn_;
    std::size_t total_;
    std::size_t done_ = 0;
    std::mutex mu_;
};

// Responses y[d][j] of one simulated population.
std::vector<std::vector<Vec2>> generate_population(const SimDesign& design, const ModelParams& params,
                                                   NormalStream& stream) {
    const Mat2 lu = chol2(params.theta.v_u());
    const Mat2 le = chol2(params.theta.v_e());
    const Eigen::VectorXd beta = params.beta.stacked();
    std::vector<Vec2> pattern_mean(design.aux.num_patterns());
    for (std::size_t t = 0; t < pattern_mean.size(); ++t) {
        pattern_mean[t] = unit_design(design.aux.pattern(t).x1, design.aux.pattern(t).x2) * beta;
    }
    std::vector<std::vector<Vec2>> y(static_cast<std::size_t>(design.D));
    for (std::size_t d = 0; d < y.size(); ++d) {
        const Vec2 u = stream.bivariate(Vec2::Zero(), lu);
        y[d].reserve(static_cast<std::size_t>(design.N_d));
        for (std::size_t j = 0; j < static_cast<std::size_t>(design.N_d); ++j) {
            y[d].push_back(stream.bivariate(pattern_mean[design.unit_pattern[d][j]] + u, le));
        }
    }
    return y;
}

SampleData extract_sample(const SimDesign& design, const std::vector<std::vector<Vec2>>& y, int n_d) {
    std::vector<UnitRecord> records;
    records.reserve(static_cast<std::size_t>(design.D * n_d));
    for (std::size_t d = 0; d < y.size(); ++d) {
        for (std::size_t j = 0; j < static_cast<std::size_t>(n_d); ++j) {
            const auto& pat = design.aux.pattern(design.unit_pattern[d][j]);
            records.push_back({design.domain_ids[d], pat.x1, pat.x2, y[d][j][0], y[d][j][1]});
        }
    }
    return SampleData::from_records(2, 2, records, design.domain_ids);
}

std::vector<double> population_truths(const std::vector<Vec2>& y_d, std::span<const TargetSpec> targets,
                                      const Transform& transform) {
    std::vector<Vec2> z;
    z.reserve(y_d.size());
    for (const auto& y : y_d) z.push_back(transform.inverse(y));
    std::vector<double> out;
    for (const auto& t : targets) out.push_back(t.evaluate(z));
    return out;
}

bool usable_fit(const SampleData& sample, const FitOptions& opts, FittedModel& fit) {
    try {
        fit = fit_reml(sample, opts);
    } catch (const std::exception&) {
        return false;
    }
    return fit.converged;
}

}  // namespace

ModelParams Sim1Config::params() const {
    ModelParams p;
    p.beta.beta1 = beta.head<2>();
    p.beta.beta2 = beta.tail<2>();
    p.theta = theta;
    return p;
}

void Sim1Config::validate() const {
    if (D < 1 || N_d < 1 || n_d < 1 || I < 1 || L < 1) throw DomainError("simulation counts must be >= 1");
    if (n_d > N_d) throw DomainError("n_d must not exceed N_d");
    theta.validate();
}

std::vector<std::vector<std::int64_t>> SimDesign::sample_counts(int n_d) const {
    std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(D),
                                               std::vector<std::int64_t>(aux.num_patterns(), 0));
    for (std::size_t d = 0; d < out.size(); ++d)
        for (std::size_t j = 0; j < static_cast<std::size_t>(n_d); ++j) ++out[d][unit_pattern[d][j]];
    return out;
}

SimDesign generate_sim1_covariates(const Sim1Config& config, Xoshiro256pp& rng) {
    config.validate();
    SimDesign design;
    design.D = config.D;
    design.N_d = config.N_d;
    std::vector<CovariatePattern> patterns;
    for (int b1 = 0; b1 < 2; ++b1) {
        for (int b2 = 0; b2 < 2; ++b2) {
            Eigen::VectorXd x1(2), x2(2);
            x1 << 1.0, b1;
            x2 << 1.0, b2;
            patterns.push_back({"X0" + std::to_string(patterns.size() + 1), x1, x2});
        }
    }
    boost::random::bernoulli_distribution<double> coin(0.5);
    std::vector<std::vector<std::int64_t>> counts;
    for (int d = 0; d < config.D; ++d) {
        design.domain_ids.push_back("d" + std::to_string(d + 1));
        std::vector<std::size_t> pat(static_cast<std::size_t>(config.N_d));
        std::vector<std::int64_t> c(patterns.size(), 0);
        for (auto& t : pat) {
            const int b1 = coin(rng) ? 1 : 0;
            const int b2 = coin(rng) ? 1 : 0;
            t = static_cast<std::size_t>(2 * b1 + b2);
            ++c[t];
        }
        design.unit_pattern.push_back(std::move(pat));
        counts.push_back(std::move(c));
    }
    design.aux = AuxCounts(std::move(patterns), design.domain_ids, std::move(counts));
    return design;
}

SimDesign generate_sim1_covariates(const Sim1Config& config) {
    Xoshiro256pp rng(derive_seed(config.seed, {tag(StreamTag::covariates), static_cast<std::uint64_t>(config.D),
                                               static_cast<std::uint64_t>(config.N_d)}));
    return generate_sim1_covariates(config, rng);
}

MetricsTable compute_metrics(const std::vector<std::vector<double>>& estimates,
                             const std::vector<std::vector<double>>& truths) {
    if (estimates.empty()) throw DomainError("compute_metrics needs at least one iteration");
    if (estimates.size() != truths.size()) throw DomainError("estimates and truths differ in iteration count");
    const std::size_t num_domains = estimates.front().size();
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        if (estimates[i].size() != num_domains || truths[i].size() != num_domains) {
            throw DomainError("ragged estimates/truths at iteration " + std::to_string(i));
        }
    }
    const double iters = static_cast<double>(estimates.size());
    MetricsTable m;
    m.domains.resize(num_domains);
    for (std::size_t d = 0; d < num_domains; ++d) {
        double sq = 0.0, diff = 0.0, truth = 0.0;
        for (std::size_t i = 0; i < estimates.size(); ++i) {
            const double e = estimates[i][d] - truths[i][d];
            sq += e * e;
            diff += e;
            truth += truths[i][d];
        }
        auto& dm = m.domains[d];
        dm.re = std::sqrt(sq / iters);
        dm.bias = diff / iters;
        dm.eta_bar = truth / iters;
        if (dm.eta_bar == 0.0) throw DomainError("mean truth of domain " + std::to_string(d) + " is zero");
        dm.rre = 100.0 * dm.re / dm.eta_bar;
        dm.rb = 100.0 * dm.bias / dm.eta_bar;
    }
    for (const auto& dm : m.domains) {
        m.RE += dm.re;
        m.AB_sum += std::abs(dm.bias);
        m.RRE += dm.rre;
        m.RAB += std::abs(dm.rb);
    }
    const double dd = static_cast<double>(num_domains);
    m.RE /= dd;
    m.AB_mean = m.AB_sum / dd;
    m.RRE /= dd;
    m.RAB /= dd;
    return m;
}

const std::vector<std::string>& sim_target_labels() {
    static const std::vector<std::string> labels{"A", "R"};
    return labels;
}

Sim1Result run_sim1(const Sim1Config& config) {
    config.validate();
    const SimDesign design = generate_sim1_covariates(config);
    const ModelParams truth_params = config.params();
    const auto targets = sim_targets();
    const Transform transform = Transform::log();
    const auto iters = static_cast<std::size_t>(config.I);
    const std::size_t num_targets = targets.size();

    // est[i][k][d], tru[i][k][d]
    std::vector<std::vector<std::vector<double>>> est(iters), tru(iters);
    std::vector<char> ok(iters, 0);
    Progress progress(config.progress, iters);

    parallel_for(iters, config.threads, [&](std::size_t i) {
        NormalStream stream(derive_seed(config.seed, {tag(StreamTag::sim1), i, 0}));
        const auto y = generate_population(design, truth_params, stream);
        tru[i].assign(num_targets, std::vector<double>(y.size()));
        for (std::size_t d = 0; d < y.size(); ++d) {
            const auto v = population_truths(y[d], targets, transform);
            for (std::size_t k = 0; k < num_targets; ++k) tru[i][k][d] = v[k];
        }
        const SampleData sample = extract_sample(design, y, config.n_d);
        FittedModel fit;
        if (usable_fit(sample, config.fit, fit)) {
            McOptions mc;
            mc.L = config.L;
            mc.seed = derive_seed(config.seed, {tag(StreamTag::sim1), i, 1, static_cast<std::uint64_t>(config.n_d)});
            const DomainEstimates e = ebp_predict(targets, transform, fit.params, sample, design.aux, mc);
            est[i].assign(num_targets, std::vector<double>(y.size()));
            for (std::size_t d = 0; d < y.size(); ++d)
                for (std::size_t k = 0; k < num_targets; ++k) est[i][k][d] = e.values[d][k];
            ok[i] = 1;
        }
        progress.tick();
    });

    Sim1Result result;
    result.config = config;
    for (std::size_t k = 0; k < num_targets; ++k) {
        std::vector<std::vector<double>> e, t;
        for (std::size_t i = 0; i < iters; ++i) {
            if (!ok[i]) continue;
            e.push_back(est[i][k]);
            t.push_back(tru[i][k]);
        }
        if (e.empty()) throw FactorizationError("every simulation iteration failed to fit");
        result.tables.push_back(compute_metrics(e, t));
    }
    for (std::size_t i = 0; i < iters; ++i) {
        if (ok[i]) {
            ++result.iterations_used;
        } else {
            ++result.failures;
        }
    }
    return result;
}

void Sim2Config::validate() const {
    base.validate();
    if (B_grid.empty()) throw DomainError("B grid is empty");
    for (std::size_t g = 0; g < B_grid.size(); ++g) {
        if (B_grid[g] < 1) throw DomainError("B values must be >= 1");
        if (g > 0 && B_grid[g] <= B_grid[g - 1]) throw DomainError("B grid must be strictly increasing");
    }
    if (reference_mse.size() != sim_target_labels().size()) {
        throw DomainError("reference MSE table must have one row per target");
    }
    for (const auto& row : reference_mse) {
        if (row.size() != static_cast<std::size_t>(base.D)) {
            throw DomainError("reference MSE table must cover all " + std::to_string(base.D) + " domains");
        }
    }
}

std::vector<std::vector<double>> reference_mse_from(const Sim1Result& sim1) {
    std::vector<std::vector<double>> out;
    for (const auto& table : sim1.tables) {
        std::vector<double> row;
        for (const auto& dm : table.domains) row.push_back(dm.re * dm.re);
        out.push_back(std::move(row));
    }
    return out;
}

Sim2Result run_sim2(const Sim2Config& config) {
    config.validate();
    const Sim1Config& base = config.base;
    const SimDesign design = generate_sim1_covariates(base);
    const ModelParams truth_params = base.params();
    const auto targets = sim_targets();
    const Transform transform = Transform::log();
    const auto iters = static_cast<std::size_t>(base.I);
    const std::size_t num_targets = targets.size();
    const std::size_t grid = config.B_grid.size();
    const auto num_domains = static_cast<std::size_t>(base.D);

    // mse[i][g] = mse*[d][k]
    std::vector<std::vector<std::vector<std::vector<double>>>> mse(iters);
    std::vector<char> ok(iters, 0);
    std::vector<int> boot_failures(iters, 0);
    Progress progress(base.progress, iters);

    parallel_for(iters, base.threads, [&](std::size_t i) {
        NormalStream stream(derive_seed(base.seed, {tag(StreamTag::sim2), i, 0}));
        const auto y = generate_population(design, truth_params, stream);
        const SampleData sample = extract_sample(design, y, base.n_d);
        FittedModel fit;
        if (usable_fit(sample, base.fit, fit)) {
            BootstrapOptions bo;
            bo.B = config.B_grid.back();
            bo.L = base.L;
            bo.seed = derive_seed(base.seed, {tag(StreamTag::sim2), i, 1});
            bo.refit = true;
            bo.threads = 1;
            bo.fit = base.fit;
            const BootstrapReplicates reps = bootstrap_replicates(fit, sample, design.aux, targets, transform, bo);
            boot_failures[i] = reps.failures;
            bool finite = true;
            for (int b : config.B_grid) {
                auto m = mse_from_replicates(reps, b);
                for (const auto& row : m)
                    for (double v : row) finite = finite && std::isfinite(v);
                mse[i].push_back(std::move(m));
            }
            ok[i] = finite ? 1 : 0;
        }
        progress.tick();
    });

    Sim2Result result;
    result.config = config;
    result.tables.resize(grid);
    for (std::size_t g = 0; g < grid; ++g) {
        for (std::size_t k = 0; k < num_targets; ++k) {
            std::vector<std::vector<double>> e, t;
            for (std::size_t i = 0; i < iters; ++i) {
                if (!ok[i]) continue;
                std::vector<double> row(num_domains);
                for (std::size_t d = 0; d < num_domains; ++d) row[d] = mse[i][g][d][k];
                e.push_back(std::move(row));
                t.push_back(config.reference_mse[k]);
            }
            if (e.empty()) throw FactorizationError("every simulation iteration failed to fit");
            result.tables[g].push_back(compute_metrics(e, t));
        }
    }
    for (std::size_t i = 0; i < iters; ++i) {
        if (ok[i]) {
            ++result.iterations_used;
        } else {
            ++result.failures;
        }
        result.bootstrap_failures += boot_failures[i];
    }
    return result;
}

void write_metrics_csv(std::ostream& os, int D, int n_d, const std::vector<MetricsTable>& tables, bool header) {
    if (header) os << "D,n_d,target,metric,value\n";
    const auto& labels = sim_target_labels();
    for (std::size_t k = 0; k < tables.size(); ++k) {
        const auto& t = tables[k];
        const std::pair<const char*, double> rows[] = {
            {"RE", t.RE}, {"AB_sum", t.AB_sum}, {"AB_mean", t.AB_mean}, {"RRE", t.RRE}, {"RAB", t.RAB}};
        for (const auto& [name, value] : rows) {
            os << D << ',' << n_d << ',' << labels.at(k) << ',' << name << ',' << format_number(value) << '\n';
        }
    }
}

void write_domain_metrics_csv(std::ostream& os, const std::vector<std::string>& domain_ids,
                              const std::vector<MetricsTable>& tables) {
    os << "domain,target,RE_d,B_d,eta_bar,RRE_d,RB_d\n";
    const auto& labels = sim_target_labels();
    for (std::size_t k = 0; k < tables.size(); ++k) {
        for (std::size_t d = 0; d < tables[k].domains.size(); ++d) {
            const auto& m = tables[k].domains[d];
            os << domain_ids.at(d) << ',' << labels.at(k) << ',' << format_number(m.re) << ','
               << format_number(m.bias) << ',' << format_number(m.eta_bar) << ',' << format_number(m.rre) << ','
               << format_number(m.rb) << '\n';
        }
    }
}

void write_boxplot_csv(std::ostream& os, const Sim2Result& result, std::size_t k,
                       const std::vector<std::string>& domain_ids) {
    os << "domain,B,RB_pct,RRE_pct\n";
    for (std::size_t g = 0; g < result.tables.size(); ++g) {
        const auto& table = result.tables[g].at(k);
        for (std::size_t d = 0; d < table.domains.size(); ++d) {
            os << domain_ids.at(d) << ',' << result.config.B_grid[g] << ',' << format_number(table.domains[d].rb)
               << ',' << format_number(table.domains[d].rre) << '\n';
        }
    }
}

}  // namespace bner
