#pragma once

// Empirical best prediction of domain parameters under the BNER model.
//
// Non-sampled responses of domain d are conditionally N2(mu_dt, V_d|s) given the
// sample, with one mean per covariate pattern t. Domain parameters are
// functions of z = g^{-1}(y); the EBP is approximated by Monte Carlo over L
// copies of the non-sampled part, drawn pattern by pattern from the aggregated
// counts N_dt - n_dt.

#include "bner/model.hpp"
#include "bner/rng.hpp"
#include "bner/transform.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace bner {

struct DomainLaw {
    std::size_t n = 0;
    Mat2 cov;           // V_d|s
    Mat2 chol;          // lower Cholesky factor of cov
    Vec2 shift;         // V_u Z' V_d^{-1} (y_d - X_d beta); zero when n = 0
    std::vector<Vec2> mean;  // mu_dt|s per pattern
};

struct ConditionalLaw {
    std::vector<DomainLaw> domains;
};

/// Closed-form conditional moments for every sample domain and aux pattern.
/// Throws FactorizationError naming the domain if V_d|s is not SPD.
ConditionalLaw conditional_moments(const ModelParams& params, const SampleData& sample, const AuxCounts& aux);

/// m independent draws from N2(mu_dt|s, V_d|s).
std::vector<Vec2> draw_nonsample(const ConditionalLaw& law, std::size_t d, std::size_t t, std::size_t m,
                                 NormalStream& stream);

using UnitFunction = std::function<double(const Vec2& z)>;
using DomainFunction = std::function<double(std::span<const Vec2> z)>;

enum class TargetKind { mean1, mean2, mean_of_ratios, ratio_of_means, custom_additive, custom_nonadditive };

/// Domain parameter to predict. Additive targets are population means of a unit
/// function h(z); non-additive targets are functions of the whole domain vector.
struct TargetSpec {
    TargetKind kind = TargetKind::mean1;
    std::string name;
    UnitFunction unit_fn;
    DomainFunction domain_fn;

    bool additive() const { return kind != TargetKind::ratio_of_means && kind != TargetKind::custom_nonadditive; }

    static TargetSpec mean1() { return {TargetKind::mean1, "mean1", {}, {}}; }
    static TargetSpec mean2() { return {TargetKind::mean2, "mean2", {}, {}}; }
    static TargetSpec mean_of_ratios() { return {TargetKind::mean_of_ratios, "mean_of_ratios", {}, {}}; }
    static TargetSpec ratio_of_means() { return {TargetKind::ratio_of_means, "ratio_of_means", {}, {}}; }
    static TargetSpec custom_additive(std::string name, UnitFunction h) {
        return {TargetKind::custom_additive, std::move(name), std::move(h), {}};
    }
    static TargetSpec custom_nonadditive(std::string name, DomainFunction h) {
        return {TargetKind::custom_nonadditive, std::move(name), {}, std::move(h)};
    }

    /// "mean1", "mean2", "mean_of_ratios" (alias "A"), "ratio_of_means" (alias "R").
    static TargetSpec from_name(const std::string& name);

    /// Value of the parameter on a complete (or sample) vector of z pairs.
    double evaluate(std::span<const Vec2> z) const;
};

/// The four built-in targets in the order mean1, mean2, mean_of_ratios, ratio_of_means.
std::vector<TargetSpec> standard_targets();

struct McOptions {
    int L = 200;
    std::uint64_t seed = 1;
    bool antithetic = false;
    unsigned threads = 1;
};

/// Per-domain predictions: values[d][k] for sample domain d and target k.
struct DomainEstimates {
    std::vector<std::string> domain_ids;
    std::vector<std::string> target_names;
    std::vector<std::vector<double>> values;

    double at(std::size_t d, std::size_t k) const { return values[d][k]; }
    std::vector<double> column(std::size_t k) const;
};

/// Monte Carlo EBPs of several targets from shared draws. For a given seed the
/// draws for (domain, pattern, replicate) are fixed, so every target sees the
/// same conditional copies regardless of which other targets are requested.
/// Fully sampled domains (N_d = n_d) return the observed functional exactly.
DomainEstimates ebp_predict(std::span<const TargetSpec> targets, const Transform& transform, const ModelParams& params,
                            const SampleData& sample, const AuxCounts& aux, const McOptions& mc);

/// Same, with precomputed conditional law and layout.
DomainEstimates ebp_predict(std::span<const TargetSpec> targets, const Transform& transform,
                            const ConditionalLaw& law, const SampleData& sample, const AuxCounts& aux,
                            const PatternLayout& layout, const McOptions& mc);

/// EBP of one additive target.
std::vector<double> ebp_additive(const TargetSpec& target, const Transform& transform, const ModelParams& params,
                                 const SampleData& sample, const AuxCounts& aux, const McOptions& mc);

/// EBP of the ratio of domain means R_d = sum z1 / sum (z1 + z2).
std::vector<double> ebp_ratio(const ModelParams& params, const Transform& transform, const SampleData& sample,
                              const AuxCounts& aux, const McOptions& mc);

/// EBP of a general domain-level function h(z_d); z_d holds the sampled units
/// in sample order followed by the drawn units pattern by pattern.
std::vector<double> ebp_nonadditive(const DomainFunction& h, const ModelParams& params, const Transform& transform,
                                    const SampleData& sample, const AuxCounts& aux, const McOptions& mc);

struct DirectEstimate {
    double mean1 = 0.0;
    double mean2 = 0.0;
    double mean_of_ratios = 0.0;
    double ratio_of_means = 0.0;
};

/// Unweighted sample analogues of the four targets. Throws DomainError for a
/// domain without sampled units.
DirectEstimate direct_estimate(const DomainSample& domain, const Transform& transform);
std::vector<DirectEstimate> direct_estimates(const SampleData& sample, const Transform& transform);

}  // namespace bner
