#pragma once

// Residual maximum likelihood fitting of the BNER model by Fisher scoring.
//
// Per domain the sample covariance is V_d = J_n (x) V_u + I_n (x) V_e. Writing
// E1 = J_n / n and E0 = I_n - E1 (orthogonal projectors),
//
//     V_d = E1 (x) (V_e + n V_u) + E0 (x) V_e,
//
// so inverses, determinants and every derivative dV_d/dtheta_k stay inside the
// algebra {E1 (x) M1 + E0 (x) M0 : M1, M0 2x2} and only 2x2 inverses are ever
// formed. This is the same object as the Woodbury form
// V_e^{-1} - V_e^{-1} Z (V_u^{-1} + n V_e^{-1})^{-1} Z' V_e^{-1} but does not need V_u^{-1}.

#include "bner/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bner {

struct FitOptions {
    int max_iterations = 200;
    double rel_tolerance = 1e-8;
    int step_halving_max = 10;
    /// Starting point; moment estimates when empty.
    std::optional<VarianceComponents> init;
};

struct FittedModel {
    ModelParams params;
    Eigen::MatrixXd beta_cov;
    Mat6 theta_fisher_info = Mat6::Zero();
    Vec6 score = Vec6::Zero();
    double reml_loglik = 0.0;
    bool converged = false;
    int iterations = 0;
    /// Number of scoring steps that had to be projected back into the feasible set.
    int projection_events = 0;
    /// True when the returned estimate sits on a projection bound.
    bool at_boundary = false;
    std::vector<Vec2> blups;
    std::vector<std::string> warnings;

    /// Wald standard errors: sqrt(diag(beta_cov)) and sqrt(diag(F^{-1})).
    Eigen::VectorXd beta_std_errors() const;
    Vec6 theta_std_errors() const;
};

struct GlsResult {
    RegressionCoefficients beta;
    Eigen::MatrixXd beta_cov;
};

/// BLUE of beta, (X'V^{-1}X)^{-1} X'V^{-1} y, and its covariance. Throws
/// RankDeficiencyError when the normal matrix is singular relative to 1e-10.
GlsResult gls_beta(const VarianceComponents& theta, const SampleData& sample);

/// REML log-likelihood -1/2 [(2n - p) log 2pi + log|V| + log|X'V^{-1}X| + y'Py].
double reml_loglik(const VarianceComponents& theta, const SampleData& sample);

/// Analytic REML score with respect to theta (raw sigma^2 / rho parameterization).
Vec6 reml_score(const VarianceComponents& theta, const SampleData& sample);

/// Expected information F_kl = 1/2 tr(P dV_k P dV_l).
Mat6 reml_fisher_information(const VarianceComponents& theta, const SampleData& sample);

/// One-way ANOVA moment estimates per response from OLS residuals; correlations
/// from between-domain means and within-domain deviations, clipped to [-0.9, 0.9].
VarianceComponents moment_start(const SampleData& sample);

/// Fisher scoring with feasibility projection and step halving.
FittedModel fit_reml(const SampleData& sample, const FitOptions& opts = {});

/// u_d = V_u Z' V_d^{-1} (y_d - X_d beta); zero for domains without sampled units.
std::vector<Vec2> blup_random_effects(const ModelParams& params, const SampleData& sample);

/// V_d^{-1} v for one domain with n = v.size() / 2 units, computed with 2x2 blocks only.
Eigen::VectorXd domain_inverse_apply(const VarianceComponents& theta, const Eigen::VectorXd& v);

/// Feasible region used by fit_reml.
constexpr double min_variance = 1e-10;
constexpr double max_abs_correlation = 1.0 - 1e-6;

}  // namespace bner
