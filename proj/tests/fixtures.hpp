#pragma once

// Small categorical-covariate populations for EBP and bootstrap tests.

#include "bner/model.hpp"

#include <random>
#include <string>
#include <vector>

namespace fixture {

using bner::Vec2;

/// Patterns x1 = (1, b1), x2 = (1, b2) for b1, b2 in {0, 1}.
inline std::vector<bner::CovariatePattern> binary_patterns() {
    std::vector<bner::CovariatePattern> p;
    for (int t = 0; t < 4; ++t) {
        p.push_back({"P" + std::to_string(t), (Eigen::VectorXd(2) << 1, t / 2).finished(),
                     (Eigen::VectorXd(2) << 1, t % 2).finished()});
    }
    return p;
}

struct Instance {
    bner::ModelParams params;
    bner::SampleData sample;
    bner::AuxCounts aux;
};

/// Domain d has population counts pop[d][t] and sample counts smp[d][t];
/// responses come from the model at `params` (shift added to make log data positive).
inline Instance make(std::mt19937_64& rng, const bner::ModelParams& params,
                     const std::vector<std::vector<std::int64_t>>& pop, const std::vector<std::vector<int>>& smp) {
    const auto patterns = binary_patterns();
    std::normal_distribution<double> n01;
    const bner::Mat2 lu = bner::chol2(params.theta.v_u());
    const bner::Mat2 le = bner::chol2(params.theta.v_e());
    std::vector<bner::UnitRecord> recs;
    std::vector<std::string> ids;
    for (std::size_t d = 0; d < pop.size(); ++d) {
        ids.push_back("D" + std::to_string(d + 1));
        const Vec2 u = lu * Vec2(n01(rng), n01(rng));
        for (std::size_t t = 0; t < 4; ++t) {
            for (int j = 0; j < smp[d][t]; ++j) {
                bner::UnitRecord r{ids.back(), patterns[t].x1, patterns[t].x2, 0, 0};
                const Vec2 y = bner::unit_design(r.x1, r.x2) * params.beta.stacked() + u + le * Vec2(n01(rng), n01(rng));
                r.y1 = y[0];
                r.y2 = y[1];
                recs.push_back(r);
            }
        }
    }
    Instance out;
    out.params = params;
    out.sample = bner::SampleData::from_records(2, 2, recs, ids);
    out.aux = bner::AuxCounts(patterns, ids, pop);
    return out;
}

inline bner::ModelParams default_params() {
    bner::ModelParams p;
    p.theta = {0.3, 0.4, -0.5, 0.2, 0.25, 0.6};
    p.beta.beta1 = (Eigen::VectorXd(2) << 1.0, 0.5).finished();
    p.beta.beta2 = (Eigen::VectorXd(2) << 1.2, -0.3).finished();
    return p;
}

/// Random populations of D domains with N_dt in [lo, hi] and n_dt <= N_dt.
inline Instance random_instance(std::mt19937_64& rng, int D, int lo, int hi, double frac,
                                const bner::ModelParams& params = default_params()) {
    std::uniform_int_distribution<int> size(lo, hi);
    std::vector<std::vector<std::int64_t>> pop(static_cast<std::size_t>(D), std::vector<std::int64_t>(4));
    std::vector<std::vector<int>> smp(static_cast<std::size_t>(D), std::vector<int>(4));
    for (int d = 0; d < D; ++d) {
        for (int t = 0; t < 4; ++t) {
            const int n = size(rng);
            pop[d][t] = n;
            smp[d][t] = static_cast<int>(frac * n);
        }
    }
    return make(rng, params, pop, smp);
}

}  // namespace fixture
