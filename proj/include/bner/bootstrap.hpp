#pragma once

// Parametric bootstrap MSE of EBPs: regenerate populations from the fitted
// model, keep the sample positions fixed, re-estimate and re-predict, and
// average the squared prediction errors against the bootstrap truths.

#include "bner/ebp.hpp"
#include "bner/reml.hpp"

#include <functional>
#include <vector>

namespace bner {

struct BootstrapOptions {
    int B = 400;
    int L = 200;
    std::uint64_t seed = 1;
    bool refit = true;
    unsigned threads = 1;
    FitOptions fit;
};

/// Bootstrap population y*[d][t][j] for sample domain d, pattern t and unit j < N_dt.
/// The first n_dt units of each pattern are the sampled positions.
struct SyntheticPopulation {
    std::vector<std::vector<std::vector<Vec2>>> y;
    std::vector<Vec2> u;  // u*_d

    std::size_t domain_size(std::size_t d) const;
};

/// y* = X_0t beta + u*_d + e*, u*_d ~ N2(0, V_u), e* ~ N2(0, V_e), domain by
/// domain in sample order: one u*_d, then the units of each pattern.
SyntheticPopulation generate_bootstrap_population(const ModelParams& params, const AuxCounts& aux,
                                                  const SampleData& sample, NormalStream& stream);

/// Sample with the same positions as `original`: unit j of domain d, of pattern
/// t, takes the next unused sampled slot of pattern t.
SampleData extract_bootstrap_sample(const SyntheticPopulation& population, const SampleData& original,
                                    const PatternLayout& layout);

/// Population domain vector z = g^{-1}(y*), sampled slots first (in sample
/// order) then the remaining units pattern by pattern.
std::vector<Vec2> population_domain_vector(const SyntheticPopulation& population, const SampleData& original,
                                           const PatternLayout& layout, std::size_t d, const Transform& transform);

/// Per-replicate prediction errors err[b][d][k] = EBP*(b) - truth*(b).
struct BootstrapReplicates {
    std::vector<std::vector<std::vector<double>>> error;
    std::vector<bool> ok;
    int failures = 0;
};

BootstrapReplicates bootstrap_replicates(const FittedModel& fitted, const SampleData& sample, const AuxCounts& aux,
                                         std::span<const TargetSpec> targets, const Transform& transform,
                                         const BootstrapOptions& opts);

struct MseReport {
    std::vector<std::string> domain_ids;
    std::vector<std::string> target_names;
    std::vector<std::vector<double>> estimate;   // point EBP [d][k]
    std::vector<std::vector<double>> mse;        // [d][k]
    std::vector<std::vector<double>> rrmse_pct;  // 100 sqrt(mse) / |estimate|; NaN when estimate == 0
    /// 2x2 bootstrap MSE matrix of (mean1, mean2) per domain when both targets are requested.
    std::vector<Mat2> means_mse;
    int replicates = 0;
    int failures = 0;
    /// More than 10% of replicates failed.
    bool unreliable = false;
    std::vector<std::string> warnings;
};

/// Requires 1 <= B, 1 <= L. Non-converged or failing refits are skipped and counted.
MseReport bootstrap_mse(const FittedModel& fitted, const SampleData& sample, const AuxCounts& aux,
                        std::span<const TargetSpec> targets, const Transform& transform, const BootstrapOptions& opts);

/// mse[d][k] from the successful replicates among the first `B` (B <= replicate count).
std::vector<std::vector<double>> mse_from_replicates(const BootstrapReplicates& reps, int B);

}  // namespace bner
