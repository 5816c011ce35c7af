#pragma once

// Monte Carlo studies of the EBPs of the mean of ratios A_d and the ratio of
// means R_d under a log-transformed BNER population (Simulation 1), and of the
// parametric bootstrap MSE estimator of those EBPs (Simulation 2).

#include "bner/bootstrap.hpp"
#include "bner/ebp.hpp"
#include "bner/reml.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace bner {

struct Sim1Config {
    int D = 50;
    int N_d = 200;
    int n_d = 10;
    int I = 200;
    int L = 200;
    /// (beta11, beta12, beta21, beta22)
    Eigen::Vector4d beta = Eigen::Vector4d::Constant(10.0);
    VarianceComponents theta{0.75, 1.00, -0.8, 0.50, 0.75, 0.8};
    std::uint64_t seed = 1;
    unsigned threads = 1;
    FitOptions fit;
    /// Called as (finished iterations, total); serialized across workers.
    std::function<void(std::size_t, std::size_t)> progress;

    ModelParams params() const;
    void validate() const;
};

/// Fixed covariate design: every unit gets x1 = (1, b1), x2 = (1, b2) with
/// independent fair bits, i.e. one of four patterns X01..X04. The sample of
/// domain d is its first n_d units.
struct SimDesign {
    int D = 0;
    int N_d = 0;
    std::vector<std::string> domain_ids;
    std::vector<std::vector<std::size_t>> unit_pattern;  // [d][j], j < N_d
    AuxCounts aux;

    /// n_dt for a sample made of the first n_d units of every domain.
    std::vector<std::vector<std::int64_t>> sample_counts(int n_d) const;
};

/// Draws the covariate design once; depends only on (seed, D, N_d).
SimDesign generate_sim1_covariates(const Sim1Config& config, Xoshiro256pp& rng);
SimDesign generate_sim1_covariates(const Sim1Config& config);

/// Per-domain and aggregate accuracy measures of predictions eta_hat against
/// truths eta over I iterations.
struct DomainMetrics {
    double re = 0.0;       // sqrt(mean (est - truth)^2)
    double bias = 0.0;     // mean (est - truth)
    double eta_bar = 0.0;  // mean truth
    double rre = 0.0;      // 100 re / eta_bar
    double rb = 0.0;       // 100 bias / eta_bar
};

struct MetricsTable {
    std::vector<DomainMetrics> domains;
    double RE = 0.0;       // mean_d RE_d
    double AB_sum = 0.0;   // sum_d |B_d|
    double AB_mean = 0.0;  // mean_d |B_d|
    double RRE = 0.0;      // mean_d RRE_d
    double RAB = 0.0;      // mean_d |RB_d|
};

/// estimates[i][d], truths[i][d]. Throws DomainError on shape mismatch, I = 0,
/// or a zero mean truth.
MetricsTable compute_metrics(const std::vector<std::vector<double>>& estimates,
                             const std::vector<std::vector<double>>& truths);

/// Target labels used by the simulations: "A" (mean of ratios), "R" (ratio of means).
const std::vector<std::string>& sim_target_labels();

struct Sim1Result {
    Sim1Config config;
    std::vector<MetricsTable> tables;  // one per sim_target_labels() entry
    int failures = 0;                  // iterations dropped after a failed REML fit
    int iterations_used = 0;
};

Sim1Result run_sim1(const Sim1Config& config);

struct Sim2Config {
    Sim1Config base;
    std::vector<int> B_grid{50, 100, 200, 300, 400};
    /// reference_mse[k][d]: true MSE of the EBP of target k in domain d.
    std::vector<std::vector<double>> reference_mse;

    void validate() const;
};

/// MSE_d = RE_d^2 from a Simulation 1 run.
std::vector<std::vector<double>> reference_mse_from(const Sim1Result& sim1);

struct Sim2Result {
    Sim2Config config;
    /// tables[g][k] for B_grid[g] and target k; bootstrap replicates are nested,
    /// so the estimate at B uses the first B replicates of the largest run.
    std::vector<std::vector<MetricsTable>> tables;
    int failures = 0;
    int iterations_used = 0;
    long long bootstrap_failures = 0;
};

Sim2Result run_sim2(const Sim2Config& config);

/// CSV rows "D,n_d,target,metric,value" with metrics RE, AB_sum, AB_mean, RRE, RAB.
void write_metrics_csv(std::ostream& os, int D, int n_d, const std::vector<MetricsTable>& tables,
                       bool header = true);
/// CSV rows "domain,target,RE_d,B_d,eta_bar,RRE_d,RB_d".
void write_domain_metrics_csv(std::ostream& os, const std::vector<std::string>& domain_ids,
                              const std::vector<MetricsTable>& tables);
/// CSV rows "domain,B,RB_pct,RRE_pct" for target k across the B grid.
void write_boxplot_csv(std::ostream& os, const Sim2Result& result, std::size_t k,
                       const std::vector<std::string>& domain_ids);

}  // namespace bner
