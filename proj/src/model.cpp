#include "bner/model.hpp"

#include "bner/errors.hpp"

#include <cmath>
#include <sstream>

namespace bner {

Mat2 build_cov2(double v1, double v2, double rho) {
    if (!(v1 > 0.0) || !(v2 > 0.0) || !std::isfinite(v1) || !std::isfinite(v2)) {
        std::ostringstream msg;
        msg << "build_cov2: variances must be positive and finite (got " << v1 << ", " << v2 << ")";
        throw DomainError(msg.str());
    }
    if (!(std::abs(rho) < 1.0)) {
        std::ostringstream msg;
        msg << "build_cov2: correlation must satisfy |rho| < 1 (got " << rho << ")";
        throw DomainError(msg.str());
    }
    const double off = rho * std::sqrt(v1 * v2);
    Mat2 m;
    m << v1, off, off, v2;
    return m;
}

Mat2 chol2(const Mat2& m) {
    constexpr double tol = 1e-12;
    const double scale = std::max(std::abs(m(0, 0)), std::abs(m(1, 1)));
    if (!(m(0, 0) > 0.0) || !(m(1, 1) > 0.0) || !m.allFinite()) {
        throw FactorizationError("chol2: matrix is not positive definite");
    }
    if (std::abs(m(0, 1) - m(1, 0)) > tol * scale) {
        throw FactorizationError("chol2: matrix is not symmetric");
    }
    const double l00 = std::sqrt(m(0, 0));
    const double l10 = m(1, 0) / l00;
    const double schur = m(1, 1) - l10 * l10;
    if (!(schur > tol * m(1, 1))) {
        throw FactorizationError("chol2: matrix is not positive definite within tolerance");
    }
    Mat2 l;
    l << l00, 0.0, l10, std::sqrt(schur);
    return l;
}

Vec6 VarianceComponents::as_vector() const {
    Vec6 v;
    v << sigma2_u1, sigma2_u2, rho_u, sigma2_e1, sigma2_e2, rho_e;
    return v;
}

VarianceComponents VarianceComponents::from_vector(const Vec6& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

void VarianceComponents::validate() const {
    (void)v_u();
    (void)v_e();
}

Eigen::VectorXd RegressionCoefficients::stacked() const {
    Eigen::VectorXd b(p());
    b << beta1, beta2;
    return b;
}

RegressionCoefficients RegressionCoefficients::from_stacked(const Eigen::VectorXd& beta, std::size_t p1) {
    const auto n1 = static_cast<Eigen::Index>(p1);
    return {beta.head(n1), beta.tail(beta.size() - n1)};
}

void ModelParams::validate() const {
    theta.validate();
    if (!beta.beta1.allFinite() || !beta.beta2.allFinite()) {
        throw DomainError("regression coefficients must be finite");
    }
}

Eigen::Matrix<double, 2, Eigen::Dynamic> unit_design(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) {
    Eigen::Matrix<double, 2, Eigen::Dynamic> x = Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, x1.size() + x2.size());
    x.row(0).head(x1.size()) = x1.transpose();
    x.row(1).tail(x2.size()) = x2.transpose();
    return x;
}

SampleData SampleData::from_records(std::size_t p1, std::size_t p2, const std::vector<UnitRecord>& records,
                                    const std::vector<std::string>& extra_domains) {
    SampleData s;
    s.p1_ = p1;
    s.p2_ = p2;
    for (const auto& r : records) {
        if (static_cast<std::size_t>(r.x1.size()) != p1 || static_cast<std::size_t>(r.x2.size()) != p2) {
            throw DomainError("unit in domain '" + r.domain_id + "' has covariate rows of the wrong length");
        }
        if (!std::isfinite(r.y1) || !std::isfinite(r.y2) || !r.x1.allFinite() || !r.x2.allFinite()) {
            throw DomainError("unit in domain '" + r.domain_id + "' has non-finite values");
        }
        auto it = s.index_.find(r.domain_id);
        if (it == s.index_.end()) {
            it = s.index_.emplace(r.domain_id, s.domains_.size()).first;
            s.domains_.push_back({r.domain_id, {}});
        }
        s.domains_[it->second].units.push_back(r);
    }
    for (const auto& id : extra_domains) {
        if (!s.index_.count(id)) {
            s.index_.emplace(id, s.domains_.size());
            s.domains_.push_back({id, {}});
        }
    }
    return s;
}

SampleData SampleData::with_domains(const std::vector<std::string>& ids) const {
    SampleData s = *this;
    for (const auto& id : ids) {
        if (!s.index_.count(id)) {
            s.index_.emplace(id, s.domains_.size());
            s.domains_.push_back({id, {}});
        }
    }
    return s;
}

std::optional<std::size_t> SampleData::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> SampleData::domain_ids() const {
    std::vector<std::string> ids;
    ids.reserve(domains_.size());
    for (const auto& d : domains_) ids.push_back(d.id);
    return ids;
}

std::size_t SampleData::total_units() const {
    std::size_t n = 0;
    for (const auto& d : domains_) n += d.n();
    return n;
}

std::size_t SampleData::sampled_domains() const {
    std::size_t n = 0;
    for (const auto& d : domains_) n += d.n() > 0 ? 1 : 0;
    return n;
}

namespace {

std::vector<double> pattern_key(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) {
    // Leading length keeps (x1, x2) splits of the same concatenation distinct.
    std::vector<double> key{static_cast<double>(x1.size())};
    key.insert(key.end(), x1.data(), x1.data() + x1.size());
    key.insert(key.end(), x2.data(), x2.data() + x2.size());
    return key;
}

}  // namespace

AuxCounts::AuxCounts(std::vector<CovariatePattern> patterns, std::vector<std::string> domain_ids,
                     std::vector<std::vector<std::int64_t>> counts)
    : patterns_(std::move(patterns)), domain_ids_(std::move(domain_ids)), counts_(std::move(counts)) {
    if (counts_.size() != domain_ids_.size()) {
        throw ConsistencyError("aux counts: one count row per domain required");
    }
    for (std::size_t t = 0; t < patterns_.size(); ++t) {
        auto key = pattern_key(patterns_[t].x1, patterns_[t].x2);
        if (!pattern_index_.emplace(std::move(key), t).second) {
            throw ConsistencyError("aux counts: pattern '" + patterns_[t].id + "' duplicates an earlier pattern");
        }
    }
    for (std::size_t d = 0; d < domain_ids_.size(); ++d) {
        if (!domain_index_.emplace(domain_ids_[d], d).second) {
            throw ConsistencyError("aux counts: domain '" + domain_ids_[d] + "' listed twice");
        }
        if (counts_[d].size() != patterns_.size()) {
            throw ConsistencyError("aux counts: domain '" + domain_ids_[d] + "' does not cover every pattern");
        }
        for (std::size_t t = 0; t < patterns_.size(); ++t) {
            if (counts_[d][t] < 0) {
                throw ConsistencyError("aux counts: negative count for domain '" + domain_ids_[d] + "', pattern '" +
                                       patterns_[t].id + "'");
            }
        }
    }
}

AuxCounts AuxCounts::from_population(const std::vector<UnitRecord>& population_units) {
    std::vector<CovariatePattern> patterns;
    std::map<std::vector<double>, std::size_t> seen;
    std::vector<std::string> ids;
    std::map<std::string, std::size_t> dindex;
    std::vector<std::vector<std::int64_t>> counts;
    for (const auto& u : population_units) {
        auto key = pattern_key(u.x1, u.x2);
        auto it = seen.find(key);
        if (it == seen.end()) {
            it = seen.emplace(std::move(key), patterns.size()).first;
            patterns.push_back({"P" + std::to_string(patterns.size() + 1), u.x1, u.x2});
            for (auto& row : counts) row.push_back(0);
        }
        auto dit = dindex.find(u.domain_id);
        if (dit == dindex.end()) {
            dit = dindex.emplace(u.domain_id, ids.size()).first;
            ids.push_back(u.domain_id);
            counts.emplace_back(patterns.size(), 0);
        }
        counts[dit->second][it->second] += 1;
    }
    return AuxCounts(std::move(patterns), std::move(ids), std::move(counts));
}

std::optional<std::size_t> AuxCounts::find_domain(const std::string& id) const {
    auto it = domain_index_.find(id);
    if (it == domain_index_.end()) return std::nullopt;
    return it->second;
}

std::int64_t AuxCounts::domain_size(std::size_t d) const {
    std::int64_t n = 0;
    for (auto c : counts_[d]) n += c;
    return n;
}

std::optional<std::size_t> AuxCounts::match(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) const {
    auto it = pattern_index_.find(pattern_key(x1, x2));
    if (it == pattern_index_.end()) return std::nullopt;
    return it->second;
}

std::int64_t PatternLayout::population_size(std::size_t d) const {
    std::int64_t n = 0;
    for (auto c : population_counts[d]) n += c;
    return n;
}

PatternLayout build_layout(const SampleData& sample, const AuxCounts& aux) {
    const std::size_t num_domains = sample.num_domains();
    const std::size_t num_patterns = aux.num_patterns();
    for (const auto& p : aux.patterns()) {
        if (static_cast<std::size_t>(p.x1.size()) != sample.p1() ||
            static_cast<std::size_t>(p.x2.size()) != sample.p2()) {
            throw ConsistencyError("pattern '" + p.id + "' does not match the sample covariate dimensions");
        }
    }
    PatternLayout layout;
    layout.aux_row.resize(num_domains);
    layout.unit_pattern.resize(num_domains);
    layout.sample_counts.assign(num_domains, std::vector<std::int64_t>(num_patterns, 0));
    layout.population_counts.resize(num_domains);
    for (std::size_t d = 0; d < num_domains; ++d) {
        const auto& dom = sample.domain(d);
        auto row = aux.find_domain(dom.id);
        if (!row) throw ConsistencyError("domain '" + dom.id + "' is missing from the auxiliary counts");
        layout.aux_row[d] = *row;
        layout.population_counts[d] = aux.counts(*row);
        auto& pats = layout.unit_pattern[d];
        pats.reserve(dom.n());
        for (std::size_t j = 0; j < dom.n(); ++j) {
            auto t = aux.match(dom.units[j].x1, dom.units[j].x2);
            if (!t) {
                throw ConsistencyError("unit " + std::to_string(j + 1) + " of domain '" + dom.id +
                                       "' matches no registered covariate pattern");
            }
            pats.push_back(*t);
            layout.sample_counts[d][*t] += 1;
        }
        for (std::size_t t = 0; t < num_patterns; ++t) {
            if (layout.population_counts[d][t] < layout.sample_counts[d][t]) {
                throw ConsistencyError("domain '" + dom.id + "', pattern '" + aux.pattern(t).id + "': N_dt = " +
                                       std::to_string(layout.population_counts[d][t]) + " < n_dt = " +
                                       std::to_string(layout.sample_counts[d][t]));
            }
        }
    }
    for (const auto& id : aux.domain_ids()) {
        if (!sample.find(id)) {
            throw ConsistencyError("domain '" + id + "' has auxiliary counts but is not registered in the sample");
        }
    }
    return layout;
}

Eigen::MatrixXd marginal_cov_domain(const VarianceComponents& theta, std::size_t n) {
    const Mat2 vu = theta.v_u();
    const Mat2 ve = theta.v_e();
    const auto m = static_cast<Eigen::Index>(2 * n);
    Eigen::MatrixXd v(m, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const auto bi = static_cast<Eigen::Index>(2 * i);
            const auto bj = static_cast<Eigen::Index>(2 * j);
            v.block<2, 2>(bi, bj) = (i == j) ? Mat2(vu + ve) : vu;
        }
    }
    return v;
}

std::uint64_t stable_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace bner
