#include "bner/reml.hpp"

#include "bner/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

namespace bner {

namespace {

using RowMat = Eigen::Matrix<double, 2, Eigen::Dynamic>;

// Centered sufficient statistics of one sampled domain.
struct DomainStats {
    double n = 0.0;
    RowMat xbar;                          // 2 x p mean design
    Vec2 ybar;
    std::array<Eigen::MatrixXd, 4> sxx;   // [2a+b] = sum_j (x_ja - xbar_a)(x_jb - xbar_b)'
    std::array<Eigen::VectorXd, 4> sxy;   // [2a+b] = sum_j (x_ja - xbar_a)(y_jb - ybar_b)
    Mat2 syy;                             // sum_j (y_j - ybar)(y_j - ybar)'
};

std::array<Mat2, 3> cov2_derivatives(double v1, double v2, double rho) {
    const double s1 = std::sqrt(v1);
    const double s2 = std::sqrt(v2);
    std::array<Mat2, 3> d;
    d[0] << 1.0, 0.5 * rho * s2 / s1, 0.5 * rho * s2 / s1, 0.0;
    d[1] << 0.0, 0.5 * rho * s1 / s2, 0.5 * rho * s1 / s2, 1.0;
    d[2] << 0.0, s1 * s2, s1 * s2, 0.0;
    return d;
}

double logdet2(const Mat2& m) { return std::log(m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)); }

class RemlProblem {
public:
    explicit RemlProblem(const SampleData& sample) : p_(sample.p()) {
        for (const auto& dom : sample.domains()) {
            if (dom.n() == 0) continue;
            total_units_ += dom.n();
            DomainStats st;
            st.n = static_cast<double>(dom.n());
            st.xbar = RowMat::Zero(2, static_cast<Eigen::Index>(p_));
            st.ybar.setZero();
            std::vector<RowMat> xs;
            xs.reserve(dom.n());
            for (const auto& u : dom.units) {
                xs.push_back(unit_design(u.x1, u.x2));
                st.xbar += xs.back();
                st.ybar += u.y();
            }
            st.xbar /= st.n;
            st.ybar /= st.n;
            for (auto& m : st.sxx) m = Eigen::MatrixXd::Zero(p_, p_);
            for (auto& v : st.sxy) v = Eigen::VectorXd::Zero(p_);
            st.syy.setZero();
            for (std::size_t j = 0; j < dom.n(); ++j) {
                const RowMat xc = xs[j] - st.xbar;
                const Vec2 yc = dom.units[j].y() - st.ybar;
                for (int a = 0; a < 2; ++a) {
                    for (int b = 0; b < 2; ++b) {
                        st.sxx[2 * a + b].noalias() += xc.row(a).transpose() * xc.row(b);
                        st.sxy[2 * a + b] += xc.row(a).transpose() * yc[b];
                    }
                }
                st.syy += yc * yc.transpose();
            }
            stats_.push_back(std::move(st));
        }
        if (total_units_ * 2 < p_) {
            throw RankDeficiencyError("fewer sampled responses than regression coefficients");
        }
    }

    struct Eval {
        double loglik = 0.0;
        Eigen::VectorXd beta;
        Eigen::MatrixXd beta_cov;
        Vec6 score = Vec6::Zero();
        Mat6 info = Mat6::Zero();
    };

    Eval evaluate(const VarianceComponents& theta, bool derivatives) const {
        const Mat2 vu = theta.v_u();
        const Mat2 ve = theta.v_e();
        const Mat2 ve_inv = ve.inverse();
        const double ld_ve = logdet2(ve);
        const auto p = static_cast<Eigen::Index>(p_);

        std::vector<Mat2> a_inv(stats_.size());
        double logdet_v = 0.0;
        Eigen::MatrixXd xvx = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd xvy = Eigen::VectorXd::Zero(p);
        for (std::size_t d = 0; d < stats_.size(); ++d) {
            const auto& st = stats_[d];
            const Mat2 a = ve + st.n * vu;
            a_inv[d] = a.inverse();
            logdet_v += (st.n - 1.0) * ld_ve + logdet2(a);
            xvx += between(st, a_inv[d]) + within(st, ve_inv);
            xvy += st.n * st.xbar.transpose() * (a_inv[d] * st.ybar) + within_xy(st, ve_inv);
        }

        Eval ev;
        const Eigen::LLT<Eigen::MatrixXd> llt = factor_normal_matrix(xvx);
        ev.beta_cov = llt.solve(Eigen::MatrixXd::Identity(p, p));
        ev.beta = llt.solve(xvy);
        const double ld_xvx = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();

        std::vector<Vec2> rbar(stats_.size());
        std::vector<Mat2> sr(stats_.size());
        double ypy = 0.0;
        for (std::size_t d = 0; d < stats_.size(); ++d) {
            const auto& st = stats_[d];
            rbar[d] = st.ybar - st.xbar * ev.beta;
            sr[d] = residual_scatter(st, ev.beta);
            ypy += st.n * rbar[d].dot(a_inv[d] * rbar[d]) + (ve_inv * sr[d]).trace();
        }
        const double dof = 2.0 * static_cast<double>(total_units_) - static_cast<double>(p_);
        ev.loglik = -0.5 * (dof * std::log(2.0 * std::numbers::pi) + logdet_v + ld_xvx + ypy);
        if (!derivatives) return ev;

        const auto du = cov2_derivatives(theta.sigma2_u1, theta.sigma2_u2, theta.rho_u);
        const auto de = cov2_derivatives(theta.sigma2_e1, theta.sigma2_e2, theta.rho_e);
        const Eigen::MatrixXd& c = ev.beta_cov;

        std::array<double, 6> tr_vinv_vk{};
        std::array<double, 6> quad{};
        std::array<Eigen::MatrixXd, 6> q;
        for (auto& m : q) m = Eigen::MatrixXd::Zero(p, p);
        Mat6 tr_vv = Mat6::Zero();
        std::array<std::array<Eigen::MatrixXd, 6>, 6> qq;
        for (int k = 0; k < 6; ++k)
            for (int l = k; l < 6; ++l) qq[k][l] = Eigen::MatrixXd::Zero(p, p);

        for (std::size_t d = 0; d < stats_.size(); ++d) {
            const auto& st = stats_[d];
            const Mat2& ai = a_inv[d];
            // dV_k = E1 (x) k1[k] + E0 (x) k0[k]
            std::array<Mat2, 6> k1, k0;
            for (int k = 0; k < 3; ++k) {
                k1[k] = st.n * du[k];
                k0[k].setZero();
                k1[k + 3] = de[k];
                k0[k + 3] = de[k];
            }
            const Vec2 a_r = ai * rbar[d];
            std::array<Mat2, 6> m1, m0;
            for (int k = 0; k < 6; ++k) {
                m1[k] = ai * k1[k] * ai;
                m0[k] = ve_inv * k0[k] * ve_inv;
                tr_vinv_vk[k] += (ai * k1[k]).trace() + (st.n - 1.0) * (ve_inv * k0[k]).trace();
                quad[k] += st.n * a_r.dot(k1[k] * a_r) + (m0[k] * sr[d]).trace();
                q[k] += between(st, m1[k]) + within(st, m0[k]);
            }
            for (int k = 0; k < 6; ++k) {
                for (int l = k; l < 6; ++l) {
                    tr_vv(k, l) += (m1[k] * k1[l]).trace() + (st.n - 1.0) * (m0[k] * k0[l]).trace();
                    qq[k][l] += between(st, Mat2(m1[k] * k1[l] * ai)) + within(st, Mat2(m0[k] * k0[l] * ve_inv));
                }
            }
        }
        std::array<Eigen::MatrixXd, 6> cq;
        for (int k = 0; k < 6; ++k) {
            cq[k] = c * q[k];
            ev.score[k] = -0.5 * (tr_vinv_vk[k] - cq[k].trace()) + 0.5 * quad[k];
        }
        for (int k = 0; k < 6; ++k) {
            for (int l = k; l < 6; ++l) {
                const double tr_p = tr_vv(k, l) - 2.0 * (c * qq[k][l]).trace() + (cq[k] * cq[l]).trace();
                ev.info(k, l) = 0.5 * tr_p;
                ev.info(l, k) = ev.info(k, l);
            }
        }
        return ev;
    }

    std::size_t p() const { return p_; }

private:
    // n * Xbar' M Xbar
    static Eigen::MatrixXd between(const DomainStats& st, const Mat2& m) {
        return st.n * st.xbar.transpose() * m * st.xbar;
    }
    // sum_j (X_j - Xbar)' M (X_j - Xbar)
    static Eigen::MatrixXd within(const DomainStats& st, const Mat2& m) {
        Eigen::MatrixXd w = m(0, 0) * st.sxx[0];
        w += m(0, 1) * st.sxx[1];
        w += m(1, 0) * st.sxx[2];
        w += m(1, 1) * st.sxx[3];
        return w;
    }
    static Eigen::VectorXd within_xy(const DomainStats& st, const Mat2& m) {
        return m(0, 0) * st.sxy[0] + m(0, 1) * st.sxy[1] + m(1, 0) * st.sxy[2] + m(1, 1) * st.sxy[3];
    }
    // sum_j (r_j - rbar)(r_j - rbar)' for r_j = y_j - X_j beta
    static Mat2 residual_scatter(const DomainStats& st, const Eigen::VectorXd& beta) {
        Mat2 s;
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                s(a, b) = st.syy(a, b) - beta.dot(st.sxy[2 * a + b]) - beta.dot(st.sxy[2 * b + a]) +
                          beta.dot(st.sxx[2 * a + b] * beta);
            }
        }
        return 0.5 * (s + s.transpose());
    }

    static Eigen::LLT<Eigen::MatrixXd> factor_normal_matrix(const Eigen::MatrixXd& xvx) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xvx, Eigen::EigenvaluesOnly);
        const auto& ev = eig.eigenvalues();
        if (!(ev.size() > 0) || !(ev.maxCoeff() > 0.0) || ev.minCoeff() <= 1e-10 * ev.maxCoeff()) {
            throw RankDeficiencyError("GLS normal matrix X'V^{-1}X is singular; check the design for collinear columns");
        }
        Eigen::LLT<Eigen::MatrixXd> llt(xvx);
        if (llt.info() != Eigen::Success) {
            throw RankDeficiencyError("GLS normal matrix X'V^{-1}X is not positive definite");
        }
        return llt;
    }

    std::size_t p_;
    std::size_t total_units_ = 0;
    std::vector<DomainStats> stats_;
};

Vec6 project(const Vec6& v, bool& projected) {
    Vec6 out = v;
    projected = false;
    for (int k : {0, 1, 3, 4}) {
        if (!(out[k] >= min_variance)) {
            out[k] = min_variance;
            projected = true;
        }
    }
    for (int k : {2, 5}) {
        if (out[k] > max_abs_correlation) {
            out[k] = max_abs_correlation;
            projected = true;
        } else if (out[k] < -max_abs_correlation) {
            out[k] = -max_abs_correlation;
            projected = true;
        }
    }
    return out;
}

// Score with components removed where the iterate sits on a bound and the
// score points out of the feasible set (first-order optimality on the boundary).
Vec6 projected_score(const Vec6& theta, const Vec6& score) {
    Vec6 s = score;
    for (int k : {0, 1, 3, 4})
        if (theta[k] <= min_variance && s[k] < 0.0) s[k] = 0.0;
    for (int k : {2, 5}) {
        if (theta[k] >= max_abs_correlation && s[k] > 0.0) s[k] = 0.0;
        if (theta[k] <= -max_abs_correlation && s[k] < 0.0) s[k] = 0.0;
    }
    return s;
}

bool on_boundary(const Vec6& v) {
    for (int k : {0, 1, 3, 4})
        if (v[k] <= min_variance) return true;
    for (int k : {2, 5})
        if (std::abs(v[k]) >= max_abs_correlation) return true;
    return false;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    if (n < 2) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

Eigen::VectorXd FittedModel::beta_std_errors() const { return beta_cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }

Vec6 FittedModel::theta_std_errors() const {
    Eigen::FullPivLU<Mat6> lu(theta_fisher_info);
    if (!lu.isInvertible()) return Vec6::Constant(std::numeric_limits<double>::quiet_NaN());
    const Mat6 inv = lu.inverse();
    return inv.diagonal().cwiseMax(0.0).cwiseSqrt();
}

GlsResult gls_beta(const VarianceComponents& theta, const SampleData& sample) {
    RemlProblem problem(sample);
    auto ev = problem.evaluate(theta, false);
    return {RegressionCoefficients::from_stacked(ev.beta, sample.p1()), ev.beta_cov};
}

double reml_loglik(const VarianceComponents& theta, const SampleData& sample) {
    return RemlProblem(sample).evaluate(theta, false).loglik;
}

Vec6 reml_score(const VarianceComponents& theta, const SampleData& sample) {
    return RemlProblem(sample).evaluate(theta, true).score;
}

Mat6 reml_fisher_information(const VarianceComponents& theta, const SampleData& sample) {
    return RemlProblem(sample).evaluate(theta, true).info;
}

VarianceComponents moment_start(const SampleData& sample) {
    const std::size_t p1 = sample.p1();
    const std::size_t p2 = sample.p2();
    const std::size_t n = sample.total_units();
    std::array<Eigen::VectorXd, 2> resid;
    for (int k = 0; k < 2; ++k) {
        const std::size_t pk = k == 0 ? p1 : p2;
        Eigen::MatrixXd x(n, pk);
        Eigen::VectorXd y(n);
        std::size_t i = 0;
        for (const auto& dom : sample.domains()) {
            for (const auto& u : dom.units) {
                x.row(i) = (k == 0 ? u.x1 : u.x2).transpose();
                y[i] = k == 0 ? u.y1 : u.y2;
                ++i;
            }
        }
        const Eigen::VectorXd b = x.colPivHouseholderQr().solve(y);
        resid[k] = y - x * b;
    }

    std::vector<double> mean1, mean2, within1, within2;
    std::array<double, 2> ssw{}, ssb{}, grand{};
    std::size_t domains = 0;
    double sum_n2 = 0.0;
    std::size_t i = 0;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& dom : sample.domains()) {
        if (dom.n() == 0) continue;
        spans.emplace_back(i, dom.n());
        i += dom.n();
    }
    for (int k = 0; k < 2; ++k) grand[k] = resid[k].mean();
    for (auto [start, nd] : spans) {
        ++domains;
        sum_n2 += static_cast<double>(nd * nd);
        std::array<double, 2> m{};
        for (int k = 0; k < 2; ++k) m[k] = resid[k].segment(start, nd).mean();
        mean1.push_back(m[0]);
        mean2.push_back(m[1]);
        for (std::size_t j = start; j < start + nd; ++j) {
            within1.push_back(resid[0][j] - m[0]);
            within2.push_back(resid[1][j] - m[1]);
            for (int k = 0; k < 2; ++k) ssw[k] += (resid[k][j] - m[k]) * (resid[k][j] - m[k]);
        }
        for (int k = 0; k < 2; ++k) ssb[k] += static_cast<double>(nd) * (m[k] - grand[k]) * (m[k] - grand[k]);
    }

    const double nn = static_cast<double>(n);
    const double dd = static_cast<double>(domains);
    std::array<double, 2> s2e{}, s2u{};
    for (int k = 0; k < 2; ++k) {
        const double total = (ssw[k] + ssb[k]) / std::max(1.0, nn - 1.0);
        s2e[k] = n > domains ? ssw[k] / (nn - dd) : total;
        if (!(s2e[k] > 0.0)) s2e[k] = std::max(total, 1e-6);
        double u = 0.0;
        if (domains > 1) {
            const double n0 = (nn - sum_n2 / nn) / (dd - 1.0);
            u = (ssb[k] / (dd - 1.0) - s2e[k]) / n0;
        }
        s2u[k] = std::max(u, 0.05 * s2e[k]);
    }
    const double rho_u = std::clamp(correlation(mean1, mean2), -0.9, 0.9);
    const double rho_e = std::clamp(correlation(within1, within2), -0.9, 0.9);
    return {s2u[0], s2u[1], rho_u, s2e[0], s2e[1], rho_e};
}

FittedModel fit_reml(const SampleData& sample, const FitOptions& opts) {
    if (opts.max_iterations < 1) throw DomainError("FitOptions.max_iterations must be >= 1");
    if (!(opts.rel_tolerance > 0.0)) throw DomainError("FitOptions.rel_tolerance must be > 0");

    RemlProblem problem(sample);
    FittedModel fit;
    if (sample.sampled_domains() < 2) {
        fit.warnings.push_back("fewer than two domains with sampled units; random-effect variances are weakly identified");
    }

    bool projected = false;
    Vec6 theta = project((opts.init ? *opts.init : moment_start(sample)).as_vector(), projected);
    auto ev = problem.evaluate(VarianceComponents::from_vector(theta), true);

    const double tol = opts.rel_tolerance;
    auto score_ok = [&](const RemlProblem::Eval& e) {
        return projected_score(theta, e.score).norm() <= tol * (1.0 + std::abs(e.loglik));
    };

    for (int it = 1; it <= opts.max_iterations; ++it) {
        fit.iterations = it;
        // Components held on a bound (score pointing outward) are frozen; the
        // scoring step is taken on the remaining ones.
        const Vec6 free_score = projected_score(theta, ev.score);
        std::vector<int> free;
        for (int k = 0; k < 6; ++k)
            if (free_score[k] != 0.0 || ev.score[k] == 0.0) free.push_back(k);
        const auto nf = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd f_ff(nf, nf);
        Eigen::VectorXd s_f(nf);
        for (Eigen::Index a = 0; a < nf; ++a) {
            s_f[a] = ev.score[free[a]];
            for (Eigen::Index b = 0; b < nf; ++b) f_ff(a, b) = ev.info(free[a], free[b]);
        }
        Eigen::VectorXd step_f = f_ff.ldlt().solve(s_f);
        if (!step_f.allFinite() && nf > 0) {
            const double ridge = 1e-8 * f_ff.diagonal().cwiseAbs().maxCoeff();
            step_f = (f_ff + ridge * Eigen::MatrixXd::Identity(nf, nf)).ldlt().solve(s_f);
        }
        Vec6 step = Vec6::Zero();
        for (Eigen::Index a = 0; a < nf; ++a) step[free[a]] = step_f[a];
        if (!step.allFinite()) {
            fit.warnings.push_back("Fisher information is singular; stopping");
            break;
        }

        const double slack = 1e-10 * (1.0 + std::abs(ev.loglik));
        double lambda = 1.0;
        bool accepted = false;
        Vec6 candidate;
        bool candidate_projected = false;
        for (int h = 0; h <= opts.step_halving_max; ++h) {
            candidate = project(theta + lambda * step, candidate_projected);
            double ll = -std::numeric_limits<double>::infinity();
            try {
                ll = problem.evaluate(VarianceComponents::from_vector(candidate), false).loglik;
            } catch (const FactorizationError&) {
            } catch (const DomainError&) {
            }
            if (std::isfinite(ll) && ll >= ev.loglik - slack) {
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            fit.converged = score_ok(ev);
            if (!fit.converged) fit.warnings.push_back("step halving exhausted without improving the REML log-likelihood");
            break;
        }
        if (candidate_projected) ++fit.projection_events;

        double change = 0.0;
        for (int k = 0; k < 6; ++k) change = std::max(change, std::abs(candidate[k] - theta[k]) / (1.0 + std::abs(theta[k])));
        theta = candidate;
        ev = problem.evaluate(VarianceComponents::from_vector(theta), true);
        if (change <= tol && score_ok(ev)) {
            fit.converged = true;
            break;
        }
    }

    if (!fit.converged && fit.iterations >= opts.max_iterations) {
        fit.warnings.push_back("REML did not converge within " + std::to_string(opts.max_iterations) + " iterations");
    }
    fit.at_boundary = on_boundary(theta);
    if (fit.at_boundary) fit.warnings.push_back("estimate lies on the feasibility boundary");

    fit.params.theta = VarianceComponents::from_vector(theta);
    fit.params.beta = RegressionCoefficients::from_stacked(ev.beta, sample.p1());
    fit.beta_cov = ev.beta_cov;
    fit.theta_fisher_info = ev.info;
    fit.score = ev.score;
    fit.reml_loglik = ev.loglik;
    fit.blups = blup_random_effects(fit.params, sample);
    return fit;
}

std::vector<Vec2> blup_random_effects(const ModelParams& params, const SampleData& sample) {
    const Mat2 vu = params.theta.v_u();
    const Mat2 ve = params.theta.v_e();
    const Eigen::VectorXd beta = params.beta.stacked();
    std::vector<Vec2> out;
    out.reserve(sample.num_domains());
    for (const auto& dom : sample.domains()) {
        if (dom.n() == 0) {
            out.push_back(Vec2::Zero());
            continue;
        }
        Vec2 rsum = Vec2::Zero();
        for (const auto& u : dom.units) rsum += u.y() - unit_design(u.x1, u.x2) * beta;
        const double n = static_cast<double>(dom.n());
        const Mat2 a = ve + n * vu;
        // V_u Z' V^{-1} r = V_u (V_e + n V_u)^{-1} sum_j r_j
        out.push_back(vu * a.inverse() * rsum);
    }
    return out;
}

Eigen::VectorXd domain_inverse_apply(const VarianceComponents& theta, const Eigen::VectorXd& v) {
    const Eigen::Index n = v.size() / 2;
    const Mat2 ve_inv = theta.v_e().inverse();
    const Mat2 a_inv = (theta.v_e() + static_cast<double>(n) * theta.v_u()).inverse();
    Vec2 mean = Vec2::Zero();
    for (Eigen::Index j = 0; j < n; ++j) mean += v.segment<2>(2 * j);
    mean /= static_cast<double>(n);
    const Vec2 between = a_inv * mean;
    Eigen::VectorXd out(v.size());
    for (Eigen::Index j = 0; j < n; ++j) out.segment<2>(2 * j) = ve_inv * (v.segment<2>(2 * j) - mean) + between;
    return out;
}

}  // namespace bner
