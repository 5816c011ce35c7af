#include "bner/ebp.hpp"

#include "bner/errors.hpp"
#include "bner/parallel.hpp"

#include <cmath>
#include <stdexcept>

namespace bner {

namespace {

// Running sums behind the built-in targets. Units are always added one at a
// time in domain-vector order (sample first, then draws pattern by pattern) so
// that every code path produces bitwise-identical sums.
struct BuiltinSums {
    double z1 = 0.0;
    double z2 = 0.0;
    double unit_ratio = 0.0;
    double num = 0.0;
    double den = 0.0;

    void add(const Vec2& z) {
        z1 += z[0];
        z2 += z[1];
        unit_ratio += z[0] / (z[0] + z[1]);
        num += z[0];
        den += z[0] + z[1];
    }
};

double ratio_value(double num, double den) {
    if (!(den > 0.0)) throw DomainError("ratio of means: denominator is not positive");
    return num / den;
}

std::vector<Vec2> sample_z(const DomainSample& dom, const Transform& transform) {
    std::vector<Vec2> z;
    z.reserve(dom.n());
    for (const auto& u : dom.units) z.push_back(transform.inverse(u.y()));
    return z;
}

}  // namespace

TargetSpec TargetSpec::from_name(const std::string& name) {
    if (name == "mean1") return mean1();
    if (name == "mean2") return mean2();
    if (name == "mean_of_ratios" || name == "A") return mean_of_ratios();
    if (name == "ratio_of_means" || name == "R") return ratio_of_means();
    throw std::invalid_argument("unknown target '" + name + "'");
}

double TargetSpec::evaluate(std::span<const Vec2> z) const {
    if (kind == TargetKind::custom_nonadditive) return domain_fn(z);
    if (z.empty()) throw DomainError("target '" + name + "' is undefined on an empty domain");
    const double size = static_cast<double>(z.size());
    if (kind == TargetKind::custom_additive) {
        double s = 0.0;
        for (const auto& v : z) s += unit_fn(v);
        return s / size;
    }
    BuiltinSums sums;
    for (const auto& v : z) sums.add(v);
    switch (kind) {
    case TargetKind::mean1:
        return sums.z1 / size;
    case TargetKind::mean2:
        return sums.z2 / size;
    case TargetKind::mean_of_ratios:
        return sums.unit_ratio / size;
    case TargetKind::ratio_of_means:
        return ratio_value(sums.num, sums.den);
    default:
        break;
    }
    throw std::logic_error("unreachable target kind");
}

std::vector<TargetSpec> standard_targets() {
    return {TargetSpec::mean1(), TargetSpec::mean2(), TargetSpec::mean_of_ratios(), TargetSpec::ratio_of_means()};
}

std::vector<double> DomainEstimates::column(std::size_t k) const {
    std::vector<double> c;
    c.reserve(values.size());
    for (const auto& row : values) c.push_back(row[k]);
    return c;
}

ConditionalLaw conditional_moments(const ModelParams& params, const SampleData& sample, const AuxCounts& aux) {
    params.validate();
    build_layout(sample, aux);  // validates sample/aux consistency
    const Mat2 vu = params.theta.v_u();
    const Mat2 ve = params.theta.v_e();
    const Eigen::VectorXd beta = params.beta.stacked();

    std::vector<Vec2> pattern_mean(aux.num_patterns());
    for (std::size_t t = 0; t < aux.num_patterns(); ++t) {
        pattern_mean[t] = unit_design(aux.pattern(t).x1, aux.pattern(t).x2) * beta;
    }

    ConditionalLaw law;
    law.domains.resize(sample.num_domains());
    for (std::size_t d = 0; d < sample.num_domains(); ++d) {
        const auto& dom = sample.domain(d);
        auto& dl = law.domains[d];
        dl.n = dom.n();
        if (dom.n() == 0) {
            dl.shift.setZero();
            dl.cov = vu + ve;
        } else {
            Vec2 rsum = Vec2::Zero();
            for (const auto& u : dom.units) rsum += u.y() - unit_design(u.x1, u.x2) * beta;
            const Mat2 a_inv = (ve + static_cast<double>(dom.n()) * vu).inverse();
            // V_u Z'V^{-1}(y - X beta) and V_u + V_e - V_u Z'V^{-1}Z V_u = V_e + V_u (V_e + n V_u)^{-1} V_e
            dl.shift = vu * a_inv * rsum;
            const Mat2 c = ve + vu * a_inv * ve;
            dl.cov = 0.5 * (c + c.transpose());
        }
        try {
            dl.chol = chol2(dl.cov);
        } catch (const FactorizationError& e) {
            throw FactorizationError("conditional covariance of domain '" + dom.id + "': " + e.what());
        }
        dl.mean.resize(aux.num_patterns());
        for (std::size_t t = 0; t < aux.num_patterns(); ++t) dl.mean[t] = pattern_mean[t] + dl.shift;
    }
    return law;
}

std::vector<Vec2> draw_nonsample(const ConditionalLaw& law, std::size_t d, std::size_t t, std::size_t m,
                                 NormalStream& stream) {
    const auto& dl = law.domains.at(d);
    std::vector<Vec2> out;
    out.reserve(m);
    for (std::size_t j = 0; j < m; ++j) out.push_back(stream.bivariate(dl.mean.at(t), dl.chol));
    return out;
}

DomainEstimates ebp_predict(std::span<const TargetSpec> targets, const Transform& transform, const ModelParams& params,
                            const SampleData& sample, const AuxCounts& aux, const McOptions& mc) {
    const PatternLayout layout = build_layout(sample, aux);
    const ConditionalLaw law = conditional_moments(params, sample, aux);
    return ebp_predict(targets, transform, law, sample, aux, layout, mc);
}

DomainEstimates ebp_predict(std::span<const TargetSpec> targets, const Transform& transform,
                            const ConditionalLaw& law, const SampleData& sample, const AuxCounts& aux,
                            const PatternLayout& layout, const McOptions& mc) {
    if (mc.L < 1) throw DomainError("McOptions.L must be >= 1");
    const std::size_t num_targets = targets.size();
    const std::size_t num_patterns = aux.num_patterns();
    bool needs_buffer = false;
    for (const auto& t : targets) needs_buffer = needs_buffer || t.kind == TargetKind::custom_nonadditive;

    DomainEstimates out;
    out.domain_ids = sample.domain_ids();
    for (const auto& t : targets) out.target_names.push_back(t.name);
    out.values.assign(sample.num_domains(), std::vector<double>(num_targets, 0.0));

    parallel_for(sample.num_domains(), mc.threads, [&](std::size_t d) {
        const auto& dom = sample.domain(d);
        const auto& dl = law.domains[d];
        const std::int64_t pop = layout.population_size(d);
        if (pop <= 0) throw ConsistencyError("domain '" + dom.id + "' has an empty population");
        const double big_n = static_cast<double>(pop);
        std::vector<Vec2> buffer = sample_z(dom, transform);
        auto& row = out.values[d];

        if (static_cast<std::size_t>(pop) == dom.n()) {
            for (std::size_t k = 0; k < num_targets; ++k) row[k] = targets[k].evaluate(buffer);
            return;
        }

        BuiltinSums sample_sums;
        for (const auto& z : buffer) sample_sums.add(z);
        std::vector<double> sample_custom(num_targets, 0.0);
        for (std::size_t k = 0; k < num_targets; ++k) {
            if (targets[k].kind != TargetKind::custom_additive) continue;
            for (const auto& z : buffer) sample_custom[k] += targets[k].unit_fn(z);
        }
        if (needs_buffer) buffer.resize(static_cast<std::size_t>(pop));

        const std::uint64_t dkey = stable_hash(dom.id);
        std::vector<double> totals(num_targets, 0.0);
        std::vector<double> custom(num_targets, 0.0);
        for (int l = 0; l < mc.L; ++l) {
            const bool negate = mc.antithetic && (l % 2 == 1);
            const auto stream_l = static_cast<std::uint64_t>(mc.antithetic ? l - (l % 2) : l);
            BuiltinSums sums = sample_sums;
            custom = sample_custom;
            std::size_t pos = dom.n();
            for (std::size_t t = 0; t < num_patterns; ++t) {
                const std::int64_t m = layout.population_counts[d][t] - layout.sample_counts[d][t];
                if (m <= 0) continue;
                NormalStream stream(derive_seed(mc.seed, {tag(StreamTag::ebp), dkey, t, stream_l}));
                const Vec2& mean = dl.mean[t];
                for (std::int64_t j = 0; j < m; ++j) {
                    const Vec2 z = transform.inverse(stream.bivariate(mean, dl.chol, negate));
                    sums.add(z);
                    for (std::size_t k = 0; k < num_targets; ++k) {
                        if (targets[k].kind == TargetKind::custom_additive) custom[k] += targets[k].unit_fn(z);
                    }
                    if (needs_buffer) buffer[pos++] = z;
                }
            }
            for (std::size_t k = 0; k < num_targets; ++k) {
                double v = 0.0;
                switch (targets[k].kind) {
                case TargetKind::mean1:
                    v = sums.z1 / big_n;
                    break;
                case TargetKind::mean2:
                    v = sums.z2 / big_n;
                    break;
                case TargetKind::mean_of_ratios:
                    v = sums.unit_ratio / big_n;
                    break;
                case TargetKind::ratio_of_means:
                    v = ratio_value(sums.num, sums.den);
                    break;
                case TargetKind::custom_additive:
                    v = custom[k] / big_n;
                    break;
                case TargetKind::custom_nonadditive:
                    v = targets[k].domain_fn(buffer);
                    break;
                }
                totals[k] += v;
            }
        }
        for (std::size_t k = 0; k < num_targets; ++k) row[k] = totals[k] / static_cast<double>(mc.L);
    });
    return out;
}

std::vector<double> ebp_additive(const TargetSpec& target, const Transform& transform, const ModelParams& params,
                                 const SampleData& sample, const AuxCounts& aux, const McOptions& mc) {
    if (!target.additive()) throw std::invalid_argument("ebp_additive: target '" + target.name + "' is not additive");
    const TargetSpec targets[] = {target};
    return ebp_predict(targets, transform, params, sample, aux, mc).column(0);
}

std::vector<double> ebp_ratio(const ModelParams& params, const Transform& transform, const SampleData& sample,
                              const AuxCounts& aux, const McOptions& mc) {
    const TargetSpec targets[] = {TargetSpec::ratio_of_means()};
    return ebp_predict(targets, transform, params, sample, aux, mc).column(0);
}

std::vector<double> ebp_nonadditive(const DomainFunction& h, const ModelParams& params, const Transform& transform,
                                    const SampleData& sample, const AuxCounts& aux, const McOptions& mc) {
    const TargetSpec targets[] = {TargetSpec::custom_nonadditive("custom", h)};
    return ebp_predict(targets, transform, params, sample, aux, mc).column(0);
}

DirectEstimate direct_estimate(const DomainSample& domain, const Transform& transform) {
    if (domain.n() == 0) throw DomainError("direct estimate undefined for domain '" + domain.id + "' without sampled units");
    const auto z = sample_z(domain, transform);
    DirectEstimate e;
    e.mean1 = TargetSpec::mean1().evaluate(z);
    e.mean2 = TargetSpec::mean2().evaluate(z);
    e.mean_of_ratios = TargetSpec::mean_of_ratios().evaluate(z);
    e.ratio_of_means = TargetSpec::ratio_of_means().evaluate(z);
    return e;
}

std::vector<DirectEstimate> direct_estimates(const SampleData& sample, const Transform& transform) {
    std::vector<DirectEstimate> out;
    out.reserve(sample.num_domains());
    for (const auto& dom : sample.domains()) out.push_back(direct_estimate(dom, transform));
    return out;
}

}  // namespace bner
