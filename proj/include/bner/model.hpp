#pragma once

// Core value types of the bivariate nested error regression (BNER) model
//
//     y_dj = X_dj beta + u_d + e_dj,   u_d ~ N2(0, V_u),  e_dj ~ N2(0, V_e),
//
// where X_dj = diag(x_dj1, x_dj2) is 2 x p with p = p1 + p2, plus the 2x2
// covariance algebra every other module builds on.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bner {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// [[v1, rho*sqrt(v1*v2)], [rho*sqrt(v1*v2), v2]]. Throws DomainError unless
/// v1, v2 > 0 and |rho| < 1.
Mat2 build_cov2(double v1, double v2, double rho);

/// Lower Cholesky factor of a 2x2 SPD matrix. Throws FactorizationError if the
/// matrix is not symmetric positive definite within a relative tolerance of 1e-12.
Mat2 chol2(const Mat2& m);

/// theta = (sigma2_u1, sigma2_u2, rho_u, sigma2_e1, sigma2_e2, rho_e).
struct VarianceComponents {
    double sigma2_u1 = 1.0;
    double sigma2_u2 = 1.0;
    double rho_u = 0.0;
    double sigma2_e1 = 1.0;
    double sigma2_e2 = 1.0;
    double rho_e = 0.0;

    Mat2 v_u() const { return build_cov2(sigma2_u1, sigma2_u2, rho_u); }
    Mat2 v_e() const { return build_cov2(sigma2_e1, sigma2_e2, rho_e); }

    Vec6 as_vector() const;
    static VarianceComponents from_vector(const Vec6& v);

    /// Throws DomainError if any invariant fails.
    void validate() const;

    static constexpr const char* names[6] = {"sigma2_u1", "sigma2_u2", "rho_u",
                                             "sigma2_e1", "sigma2_e2", "rho_e"};
};

struct RegressionCoefficients {
    Eigen::VectorXd beta1;
    Eigen::VectorXd beta2;

    std::size_t p1() const { return static_cast<std::size_t>(beta1.size()); }
    std::size_t p2() const { return static_cast<std::size_t>(beta2.size()); }
    std::size_t p() const { return p1() + p2(); }

    Eigen::VectorXd stacked() const;
    static RegressionCoefficients from_stacked(const Eigen::VectorXd& beta, std::size_t p1);
};

struct ModelParams {
    RegressionCoefficients beta;
    VarianceComponents theta;

    void validate() const;
};

struct UnitRecord {
    std::string domain_id;
    Eigen::VectorXd x1;
    Eigen::VectorXd x2;
    double y1 = 0.0;
    double y2 = 0.0;

    Vec2 y() const { return {y1, y2}; }
};

/// 2 x p unit design matrix diag(x1, x2).
Eigen::Matrix<double, 2, Eigen::Dynamic> unit_design(const Eigen::VectorXd& x1,
                                                     const Eigen::VectorXd& x2);

struct DomainSample {
    std::string id;
    std::vector<UnitRecord> units;

    std::size_t n() const { return units.size(); }
};

/// Sampled units grouped by domain. Domains keep their registration order;
/// domains without sampled units (n_d = 0) are allowed.
class SampleData {
public:
    SampleData() = default;

    /// Groups records by domain id in order of first appearance, then appends
    /// any `extra_domains` not already present as empty domains.
    static SampleData from_records(std::size_t p1, std::size_t p2, const std::vector<UnitRecord>& records,
                                   const std::vector<std::string>& extra_domains = {});

    /// Copy of this sample with the given domain ids registered (empty if new).
    SampleData with_domains(const std::vector<std::string>& ids) const;

    std::size_t p1() const { return p1_; }
    std::size_t p2() const { return p2_; }
    std::size_t p() const { return p1_ + p2_; }

    std::size_t num_domains() const { return domains_.size(); }
    const DomainSample& domain(std::size_t d) const { return domains_[d]; }
    const std::vector<DomainSample>& domains() const { return domains_; }
    std::optional<std::size_t> find(const std::string& id) const;
    std::vector<std::string> domain_ids() const;

    std::size_t total_units() const;
    std::size_t sampled_domains() const;

    /// Optional covariate column names (used by the CLI for output labels).
    std::vector<std::string> x1_names;
    std::vector<std::string> x2_names;

private:
    std::size_t p1_ = 0;
    std::size_t p2_ = 0;
    std::vector<DomainSample> domains_;
    std::map<std::string, std::size_t> index_;
};

struct CovariatePattern {
    std::string id;
    Eigen::VectorXd x1;
    Eigen::VectorXd x2;
};

/// Aggregated auxiliary information: population counts N_dt of each
/// categorical covariate pattern X_0t in each domain.
class AuxCounts {
public:
    AuxCounts() = default;

    /// `counts[d][t]` is N_dt for `domain_ids[d]` and `patterns[t]`. Patterns
    /// must be pairwise distinct.
    AuxCounts(std::vector<CovariatePattern> patterns, std::vector<std::string> domain_ids,
              std::vector<std::vector<std::int64_t>> counts);

    /// Tabulates unique covariate rows of a full population covariate listing
    /// (one entry per population unit) into patterns and counts.
    static AuxCounts from_population(const std::vector<UnitRecord>& population_units);

    std::size_t num_patterns() const { return patterns_.size(); }
    const CovariatePattern& pattern(std::size_t t) const { return patterns_[t]; }
    const std::vector<CovariatePattern>& patterns() const { return patterns_; }

    std::size_t num_domains() const { return domain_ids_.size(); }
    const std::vector<std::string>& domain_ids() const { return domain_ids_; }
    std::optional<std::size_t> find_domain(const std::string& id) const;

    std::int64_t count(std::size_t d, std::size_t t) const { return counts_[d][t]; }
    const std::vector<std::int64_t>& counts(std::size_t d) const { return counts_[d]; }
    std::int64_t domain_size(std::size_t d) const;

    /// Exact-equality lookup of a covariate pair.
    std::optional<std::size_t> match(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) const;

private:
    std::vector<CovariatePattern> patterns_;
    std::vector<std::string> domain_ids_;
    std::vector<std::vector<std::int64_t>> counts_;
    std::map<std::string, std::size_t> domain_index_;
    std::map<std::vector<double>, std::size_t> pattern_index_;
};

/// Sample/aux bookkeeping: for each sample domain, the matching aux row, the
/// pattern of every sampled unit, and the n_dt / N_dt tables.
struct PatternLayout {
    std::vector<std::size_t> aux_row;
    std::vector<std::vector<std::size_t>> unit_pattern;
    std::vector<std::vector<std::int64_t>> sample_counts;
    std::vector<std::vector<std::int64_t>> population_counts;

    std::int64_t population_size(std::size_t d) const;
};

/// Validates and aligns a sample with aux counts. Every sample domain must be
/// present in `aux` and vice versa; throws ConsistencyError naming the
/// offending domain, unit or (domain, pattern) pair.
PatternLayout build_layout(const SampleData& sample, const AuxCounts& aux);

/// Dense 2n x 2n marginal covariance J_n (x) V_u + I_n (x) V_e of one domain's
/// sample. Testing oracle for the closed-form block algebra.
Eigen::MatrixXd marginal_cov_domain(const VarianceComponents& theta, std::size_t n);

/// 64-bit FNV-1a of a domain id; used as a stable RNG key.
std::uint64_t stable_hash(const std::string& s);

}  // namespace bner
