#include "bner/bootstrap.hpp"

#include "bner/errors.hpp"
#include "bner/parallel.hpp"

#include <cmath>
#include <limits>

namespace bner {

std::size_t SyntheticPopulation::domain_size(std::size_t d) const {
    std::size_t n = 0;
    for (const auto& units : y.at(d)) n += units.size();
    return n;
}

SyntheticPopulation generate_bootstrap_population(const ModelParams& params, const AuxCounts& aux,
                                                  const SampleData& sample, NormalStream& stream) {
    params.validate();
    const PatternLayout layout = build_layout(sample, aux);
    const Mat2 lu = chol2(params.theta.v_u());
    const Mat2 le = chol2(params.theta.v_e());
    const Eigen::VectorXd beta = params.beta.stacked();
    std::vector<Vec2> pattern_mean(aux.num_patterns());
    for (std::size_t t = 0; t < aux.num_patterns(); ++t) {
        pattern_mean[t] = unit_design(aux.pattern(t).x1, aux.pattern(t).x2) * beta;
    }

    SyntheticPopulation pop;
    pop.y.resize(sample.num_domains());
    pop.u.resize(sample.num_domains());
    for (std::size_t d = 0; d < sample.num_domains(); ++d) {
        const Vec2 u = stream.bivariate(Vec2::Zero(), lu);
        pop.u[d] = u;
        pop.y[d].resize(aux.num_patterns());
        for (std::size_t t = 0; t < aux.num_patterns(); ++t) {
            const auto big_n = static_cast<std::size_t>(layout.population_counts[d][t]);
            auto& units = pop.y[d][t];
            units.reserve(big_n);
            const Vec2 mean = pattern_mean[t] + u;
            for (std::size_t j = 0; j < big_n; ++j) units.push_back(stream.bivariate(mean, le));
        }
    }
    return pop;
}

SampleData extract_bootstrap_sample(const SyntheticPopulation& population, const SampleData& original,
                                    const PatternLayout& layout) {
    std::vector<UnitRecord> records;
    records.reserve(original.total_units());
    for (std::size_t d = 0; d < original.num_domains(); ++d) {
        const auto& dom = original.domain(d);
        std::vector<std::size_t> next(population.y[d].size(), 0);
        for (std::size_t j = 0; j < dom.n(); ++j) {
            const std::size_t t = layout.unit_pattern[d][j];
            UnitRecord r = dom.units[j];
            const Vec2& y = population.y[d][t][next[t]++];
            r.y1 = y[0];
            r.y2 = y[1];
            records.push_back(std::move(r));
        }
    }
    SampleData out = SampleData::from_records(original.p1(), original.p2(), records, original.domain_ids());
    out.x1_names = original.x1_names;
    out.x2_names = original.x2_names;
    return out;
}

std::vector<Vec2> population_domain_vector(const SyntheticPopulation& population, const SampleData& original,
                                           const PatternLayout& layout, std::size_t d, const Transform& transform) {
    const auto& dom = original.domain(d);
    const auto& pop_d = population.y[d];
    std::vector<Vec2> z;
    z.reserve(population.domain_size(d));
    std::vector<std::size_t> next(pop_d.size(), 0);
    for (std::size_t j = 0; j < dom.n(); ++j) {
        const std::size_t t = layout.unit_pattern[d][j];
        z.push_back(transform.inverse(pop_d[t][next[t]++]));
    }
    for (std::size_t t = 0; t < pop_d.size(); ++t) {
        for (std::size_t j = static_cast<std::size_t>(layout.sample_counts[d][t]); j < pop_d[t].size(); ++j) {
            z.push_back(transform.inverse(pop_d[t][j]));
        }
    }
    return z;
}

BootstrapReplicates bootstrap_replicates(const FittedModel& fitted, const SampleData& sample, const AuxCounts& aux,
                                         std::span<const TargetSpec> targets, const Transform& transform,
                                         const BootstrapOptions& opts) {
    if (opts.B < 1) throw DomainError("BootstrapOptions.B must be >= 1");
    if (opts.L < 1) throw DomainError("BootstrapOptions.L must be >= 1");
    const PatternLayout layout = build_layout(sample, aux);
    const std::size_t num_domains = sample.num_domains();
    const std::size_t num_targets = targets.size();

    FitOptions fit_opts = opts.fit;
    fit_opts.init = fitted.params.theta;

    BootstrapReplicates reps;
    const auto b_count = static_cast<std::size_t>(opts.B);
    reps.error.assign(b_count, std::vector<std::vector<double>>(num_domains, std::vector<double>(num_targets, 0.0)));
    std::vector<char> ok(b_count, 0);

    parallel_for(b_count, opts.threads, [&](std::size_t b) {
        NormalStream stream(derive_seed(opts.seed, {tag(StreamTag::bootstrap), b, 0}));
        const SyntheticPopulation pop = generate_bootstrap_population(fitted.params, aux, sample, stream);
        const SampleData boot_sample = extract_bootstrap_sample(pop, sample, layout);

        ModelParams params = fitted.params;
        if (opts.refit) {
            try {
                const FittedModel refit = fit_reml(boot_sample, fit_opts);
                if (!refit.converged) return;
                params = refit.params;
            } catch (const std::exception&) {
                return;
            }
        }

        McOptions mc;
        mc.L = opts.L;
        mc.seed = derive_seed(opts.seed, {tag(StreamTag::bootstrap), b, 1});
        mc.threads = 1;
        DomainEstimates est;
        try {
            const ConditionalLaw law = conditional_moments(params, boot_sample, aux);
            est = ebp_predict(targets, transform, law, boot_sample, aux, layout, mc);
        } catch (const std::exception&) {
            return;
        }
        auto& err = reps.error[b];
        for (std::size_t d = 0; d < num_domains; ++d) {
            const auto z = population_domain_vector(pop, sample, layout, d, transform);
            for (std::size_t k = 0; k < num_targets; ++k) err[d][k] = est.values[d][k] - targets[k].evaluate(z);
        }
        ok[b] = 1;
    });

    reps.ok.assign(b_count, false);
    for (std::size_t b = 0; b < b_count; ++b) {
        reps.ok[b] = ok[b] != 0;
        if (!reps.ok[b]) ++reps.failures;
    }
    return reps;
}

std::vector<std::vector<double>> mse_from_replicates(const BootstrapReplicates& reps, int B) {
    if (B < 1 || static_cast<std::size_t>(B) > reps.error.size()) {
        throw DomainError("replicate prefix must lie in [1, " + std::to_string(reps.error.size()) + "]");
    }
    const std::size_t num_domains = reps.error.front().size();
    const std::size_t num_targets = num_domains ? reps.error.front().front().size() : 0;
    std::vector<std::vector<double>> mse(num_domains, std::vector<double>(num_targets, 0.0));
    std::size_t used = 0;
    for (std::size_t b = 0; b < static_cast<std::size_t>(B); ++b) {
        if (!reps.ok[b]) continue;
        ++used;
        for (std::size_t d = 0; d < num_domains; ++d)
            for (std::size_t k = 0; k < num_targets; ++k) mse[d][k] += reps.error[b][d][k] * reps.error[b][d][k];
    }
    const double denom = used ? static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
    for (auto& row : mse)
        for (auto& v : row) v /= denom;
    return mse;
}

MseReport bootstrap_mse(const FittedModel& fitted, const SampleData& sample, const AuxCounts& aux,
                        std::span<const TargetSpec> targets, const Transform& transform, const BootstrapOptions& opts) {
    McOptions mc;
    mc.L = opts.L;
    mc.seed = opts.seed;
    mc.threads = opts.threads;
    const DomainEstimates point = ebp_predict(targets, transform, fitted.params, sample, aux, mc);
    const BootstrapReplicates reps = bootstrap_replicates(fitted, sample, aux, targets, transform, opts);

    MseReport report;
    report.domain_ids = point.domain_ids;
    report.target_names = point.target_names;
    report.estimate = point.values;
    report.replicates = opts.B;
    report.failures = reps.failures;
    report.unreliable = 10 * reps.failures > opts.B;
    if (!fitted.converged) report.warnings.push_back("the fitted model did not converge");
    if (report.unreliable) {
        report.warnings.push_back(std::to_string(reps.failures) + " of " + std::to_string(opts.B) +
                                  " bootstrap replicates failed; MSE estimates are unreliable");
    }
    if (reps.failures == opts.B) throw FactorizationError("every bootstrap replicate failed");
    report.mse = mse_from_replicates(reps, opts.B);

    report.rrmse_pct = report.mse;
    for (std::size_t d = 0; d < report.mse.size(); ++d) {
        for (std::size_t k = 0; k < targets.size(); ++k) {
            const double est = report.estimate[d][k];
            report.rrmse_pct[d][k] = est != 0.0 ? 100.0 * std::sqrt(report.mse[d][k]) / std::abs(est)
                                                : std::numeric_limits<double>::quiet_NaN();
        }
    }

    std::optional<std::size_t> k1, k2;
    for (std::size_t k = 0; k < targets.size(); ++k) {
        if (targets[k].kind == TargetKind::mean1 && !k1) k1 = k;
        if (targets[k].kind == TargetKind::mean2 && !k2) k2 = k;
    }
    if (k1 && k2) {
        report.means_mse.assign(report.mse.size(), Mat2::Zero());
        std::size_t used = 0;
        for (std::size_t b = 0; b < reps.error.size(); ++b) {
            if (!reps.ok[b]) continue;
            ++used;
            for (std::size_t d = 0; d < report.mse.size(); ++d) {
                const Vec2 e(reps.error[b][d][*k1], reps.error[b][d][*k2]);
                report.means_mse[d] += e * e.transpose();
            }
        }
        for (auto& m : report.means_mse) m /= static_cast<double>(used);
    }
    return report;
}

}  // namespace bner
