// Acceptance suite: one PASS/FAIL line per criterion.
//
//   bner_acceptance            run every criterion
//   bner_acceptance 1 2 7      run a subset

#include "bner/bootstrap.hpp"
#include "bner/ebp.hpp"
#include "bner/parallel.hpp"
#include "bner/reml.hpp"
#include "bner/sim.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace bner;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

unsigned worker_threads() { return default_threads(); }

// ---------------------------------------------------------------------------
// 1. Closed-form conditional moments against the dense Schur complement.

Verdict conditional_moment_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    std::uniform_int_distribution<int> n_dist(0, 6), big_extra(1, 4);
    const auto patterns = [] {
        std::vector<CovariatePattern> p;
        for (int t = 0; t < 4; ++t)
            p.push_back({"P" + std::to_string(t), (Eigen::VectorXd(2) << 1, t / 2).finished(),
                         (Eigen::VectorXd(3) << 1, t % 2, 0.5 * t).finished()});
        return p;
    }();
    double worst = 0.0;
    std::size_t comparisons = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const auto theta = oracle::random_theta(rng);
        const auto beta = oracle::random_beta(rng, 2, 3);
        const int D = 3;
        std::vector<UnitRecord> recs;
        std::vector<std::string> ids;
        std::vector<std::vector<std::int64_t>> counts;
        std::normal_distribution<double> n01;
        for (int d = 0; d < D; ++d) {
            ids.push_back("d" + std::to_string(d));
            std::vector<std::int64_t> c(4, 0);
            const int n = n_dist(rng);
            for (int j = 0; j < n; ++j) {
                const auto t = static_cast<std::size_t>(rng() % 4);
                ++c[t];
                recs.push_back({ids.back(), patterns[t].x1, patterns[t].x2, 3 * n01(rng), 3 * n01(rng)});
            }
            for (auto& v : c) v += big_extra(rng);
            counts.push_back(c);
        }
        const auto sample = SampleData::from_records(2, 3, recs, ids);
        const AuxCounts aux(patterns, ids, counts);
        ModelParams params;
        params.theta = theta;
        params.beta = beta;
        const auto law = conditional_moments(params, sample, aux);
        for (std::size_t d = 0; d < sample.num_domains(); ++d) {
            for (std::size_t t = 0; t < 4; ++t) {
                const Eigen::MatrixXd x0 = unit_design(patterns[t].x1, patterns[t].x2);
                const auto ref = oracle::schur_conditional(theta, beta.stacked(), sample.domain(d), x0);
                worst = std::max(worst, (law.domains[d].mean[t] - ref.mean).cwiseAbs().maxCoeff());
                worst = std::max(worst, (law.domains[d].cov - ref.cov).cwiseAbs().maxCoeff());
                ++comparisons;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-10 && secs < 5.0,
            "max abs diff " + fmt(worst) + " over " + std::to_string(comparisons) + " (mu, V) pairs (tol 1e-10), " +
                fmt(secs, 3) + " s (limit 5 s)"};
}

// ---------------------------------------------------------------------------
// 2. REML score against central finite differences.

Verdict score_gradient_check() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(77);
    const VarianceComponents gen{0.75, 1.0, -0.5, 0.5, 0.75, 0.4};
    const auto sample = oracle::random_sample(rng, std::vector<int>(10, 5), 2, 2, oracle::random_beta(rng, 2, 2), gen);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const auto theta = oracle::random_theta(rng);
        const Vec6 score = reml_score(theta, sample);
        const Vec6 fd = oracle::fd_gradient([&](const VarianceComponents& t) { return reml_loglik(t, sample); }, theta);
        for (int c = 0; c < 6; ++c) worst = std::max(worst, std::abs(score[c] - fd[c]) / std::max(1.0, std::abs(fd[c])));
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-4 && secs < 30.0,
            "max relative error " + fmt(worst) + " at 50 theta (tol 1e-4), " + fmt(secs, 3) + " s (limit 30 s)"};
}

// ---------------------------------------------------------------------------
// 3 and 4. Simulation 1 at full scale.

struct Sim1Runs {
    std::map<int, Sim1Result> by_nd;
};

const Sim1Runs& sim1_runs() {
    static const Sim1Runs runs = [] {
        Sim1Runs r;
        for (int n : {10, 25, 50, 100}) {
            Sim1Config c;
            c.n_d = n;
            c.threads = worker_threads();
            const auto t0 = Clock::now();
            r.by_nd.emplace(n, run_sim1(c));
            std::cerr << "  sim1 n_d=" << n << " done in " << fmt(seconds_since(t0), 3) << " s\n";
        }
        return r;
    }();
    return runs;
}

bool within_pct(double v, double target, double pct) { return std::abs(v - target) <= pct / 100.0 * target; }

Verdict sim1_reproduction() {
    const auto& runs = sim1_runs().by_nd;
    const auto& a10 = runs.at(10).tables[0];
    const auto& r10 = runs.at(10).tables[1];
    const auto& a100 = runs.at(100).tables[0];
    const auto& r100 = runs.at(100).tables[1];
    bool ok = true;
    std::ostringstream d;
    auto check = [&](const std::string& what, double v, double target, double pct) {
        const bool good = within_pct(v, target, pct);
        ok = ok && good;
        d << what << "=" << fmt(v) << " (" << target << " +-" << pct << "%" << (good ? "" : " MISS") << "); ";
    };
    check("RE(A,10)", a10.RE, 0.0143, 15);
    check("RE(A,100)", a100.RE, 0.0039, 15);
    check("RE(R,10)", r10.RE, 0.0336, 15);
    check("RE(R,100)", r100.RE, 0.0142, 15);
    const bool rre_ok = std::abs(a10.RRE - 2.88) <= 0.45;
    ok = ok && rre_ok;
    d << "RRE(A,10)=" << fmt(a10.RRE) << "% (2.88 +-0.45pp" << (rre_ok ? "" : " MISS") << "); ";
    for (std::size_t k = 0; k < 2; ++k) {
        double prev = INFINITY;
        bool mono = true;
        d << "RE(" << sim_target_labels()[k] << ") by n_d:";
        for (int n : {10, 25, 50, 100}) {
            const double v = runs.at(n).tables[k].RE;
            mono = mono && v < prev;
            prev = v;
            d << " " << fmt(v);
        }
        d << (mono ? " decreasing; " : " NOT decreasing; ");
        ok = ok && mono;
    }
    int failures = 0;
    for (const auto& [n, r] : runs) failures += r.failures;
    d << "failed fits " << failures;
    return {ok, d.str()};
}

Verdict sim1_bias() {
    const auto& r = sim1_runs().by_nd.at(10);
    const double a = r.tables[0].RAB, b = r.tables[1].RAB;
    return {a <= 0.35 && b <= 0.75,
            "RAB(A)=" + fmt(a) + "% (<= 0.35), RAB(R)=" + fmt(b) + "% (<= 0.75) at n_d=10"};
}

// ---------------------------------------------------------------------------
// 5. Simulation 2 at desk scale.

Verdict sim2_bootstrap() {
    Sim2Config c;
    c.base.n_d = 10;
    c.base.I = 50;
    c.base.threads = worker_threads();
    c.B_grid = {50, 100, 200, 400};
    c.reference_mse = reference_mse_from(sim1_runs().by_nd.at(10));
    const auto t0 = Clock::now();
    const auto r = run_sim2(c);
    std::ostringstream d;
    bool ok = true;
    for (std::size_t k = 0; k < 2; ++k) {
        d << sim_target_labels()[k] << ": RRE by B";
        double prev = INFINITY;
        bool mono = true;
        for (std::size_t g = 0; g < c.B_grid.size(); ++g) {
            const double v = r.tables[g][k].RRE;
            mono = mono && v < prev;
            prev = v;
            d << " " << fmt(v);
        }
        const double rab = r.tables.back()[k].RAB;
        const bool band = rab >= 5.0 && rab <= 15.0;
        d << (mono ? " decreasing" : " NOT decreasing") << ", RAB(B=400)=" << fmt(rab) << "%"
          << (band ? "" : " outside [5,15]") << "; ";
        ok = ok && mono && band;
    }
    d << "failed fits " << r.failures << ", failed bootstrap replicates " << r.bootstrap_failures << ", "
      << fmt(seconds_since(t0), 4) << " s";
    return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 6. Bootstrap MSE against a brute-force double loop written independently of
// the library's generators and predictors.

// Ratios boot/brute of mse[d][k].
std::vector<std::vector<double>> double_loop_ratios(const Transform& transform, bool log_scale, std::uint64_t seed) {
    Sim1Config cfg;
    cfg.D = 5;
    cfg.N_d = 20;
    cfg.n_d = 5;
    const SimDesign design = generate_sim1_covariates(cfg);
    const ModelParams truth = cfg.params();
    const int L = 50;
    const int B = 5000;
    const int K = 5000;
    const auto targets = standard_targets();

    // Sample positions: first n_d units of each domain.
    std::vector<UnitRecord> recs;
    for (int d = 0; d < cfg.D; ++d) {
        for (int j = 0; j < cfg.n_d; ++j) {
            const auto& p = design.aux.pattern(design.unit_pattern[d][j]);
            recs.push_back({design.domain_ids[d], p.x1, p.x2, 2.0, 2.0});
        }
    }
    const auto sample = SampleData::from_records(2, 2, recs, design.domain_ids);
    FittedModel fitted;
    fitted.params = truth;
    fitted.converged = true;
    BootstrapOptions bo;
    bo.B = B;
    bo.L = L;
    bo.seed = seed;
    bo.refit = false;
    bo.threads = worker_threads();
    const auto report = bootstrap_mse(fitted, sample, design.aux, targets, transform, bo);
    if (report.failures != 0) throw std::runtime_error("bootstrap replicates failed");

    // Outer loop: populations drawn jointly per domain from the dense covariance.
    // Inner loop: L independent draws of each non-sampled unit from its Schur conditional.
    auto inv = [&](double y) { return log_scale ? std::exp(y) : y; };
    const Eigen::VectorXd beta = truth.beta.stacked();
    const Eigen::MatrixXd vfull = oracle::domain_cov_by_definition(truth.theta, static_cast<std::size_t>(cfg.N_d));
    const Eigen::MatrixXd lfull = vfull.llt().matrixL();
    std::vector<std::vector<double>> sq(static_cast<std::size_t>(cfg.D), std::vector<double>(4, 0.0));
    std::mt19937_64 rng(seed * 7919 + 1);
    std::normal_distribution<double> n01;
    for (int k = 0; k < K; ++k) {
        for (int d = 0; d < cfg.D; ++d) {
            Eigen::VectorXd mean(2 * cfg.N_d), z(2 * cfg.N_d);
            std::vector<Eigen::MatrixXd> xs;
            for (int j = 0; j < cfg.N_d; ++j) {
                const auto& p = design.aux.pattern(design.unit_pattern[d][j]);
                xs.push_back(unit_design(p.x1, p.x2));
                mean.segment<2>(2 * j) = xs.back() * beta;
            }
            for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = n01(rng);
            const Eigen::VectorXd y = mean + lfull * z;
            std::vector<Vec2> pop_z(cfg.N_d);
            DomainSample dom;
            dom.id = design.domain_ids[d];
            for (int j = 0; j < cfg.N_d; ++j) {
                pop_z[j] = Vec2(inv(y[2 * j]), inv(y[2 * j + 1]));
                if (j < cfg.n_d) {
                    const auto& p = design.aux.pattern(design.unit_pattern[d][j]);
                    dom.units.push_back({dom.id, p.x1, p.x2, y[2 * j], y[2 * j + 1]});
                }
            }
            std::vector<oracle::Law> laws;
            std::vector<Mat2> chols;
            for (int j = cfg.n_d; j < cfg.N_d; ++j) {
                laws.push_back(oracle::schur_conditional(truth.theta, beta, dom, xs[j]));
                chols.push_back(laws.back().cov.llt().matrixL());
            }
            std::vector<double> pred(4, 0.0);
            std::vector<Vec2> full(pop_z.begin(), pop_z.begin() + cfg.n_d);
            full.resize(cfg.N_d);
            for (int l = 0; l < L; ++l) {
                for (int j = cfg.n_d; j < cfg.N_d; ++j) {
                    const auto& law = laws[j - cfg.n_d];
                    const Vec2 draw = law.mean + chols[j - cfg.n_d] * Vec2(n01(rng), n01(rng));
                    full[j] = Vec2(inv(draw[0]), inv(draw[1]));
                }
                for (std::size_t t = 0; t < 4; ++t) pred[t] += targets[t].evaluate(full) / L;
            }
            for (std::size_t t = 0; t < 4; ++t) {
                const double err = pred[t] - targets[t].evaluate(pop_z);
                sq[d][t] += err * err / K;
            }
        }
    }
    std::vector<std::vector<double>> ratio(sq.size(), std::vector<double>(4));
    for (std::size_t d = 0; d < sq.size(); ++d)
        for (std::size_t t = 0; t < 4; ++t) ratio[d][t] = report.mse[d][t] / sq[d][t];
    return ratio;
}

double worst_gap(const std::vector<std::vector<double>>& ratio, std::initializer_list<std::size_t> targets) {
    double worst = 0.0;
    for (const auto& row : ratio)
        for (std::size_t t : targets) worst = std::max(worst, std::abs(row[t] - 1.0));
    return worst;
}

Verdict double_loop_oracle() {
    // Log scale: the simulation targets A and R. Identity scale: all four targets.
    // Level means of lognormal data (mean1, mean2 under the log transform) have
    // squared errors with extreme higher moments, so two 5000-draw MSE estimates
    // of them disagree by tens of percent; they are reported but not checked.
    const auto log_ratio = double_loop_ratios(Transform::log(), true, 4242);
    const auto id_ratio = double_loop_ratios(Transform::identity(), false, 4243);
    const double gap_log = worst_gap(log_ratio, {2, 3});
    const double gap_id = worst_gap(id_ratio, {0, 1, 2, 3});
    const double gap_levels = worst_gap(log_ratio, {0, 1});
    std::ostringstream det;
    det << "max relative gap " << fmt(100 * gap_log, 3) << "% for A, R under log; " << fmt(100 * gap_id, 3)
        << "% for all four targets under identity (tol 15%, 5 domains each); lognormal level means (unchecked) "
        << fmt(100 * gap_levels, 3) << "%";
    return {gap_log <= 0.15 && gap_id <= 0.15, det.str()};
}

// ---------------------------------------------------------------------------
// 7. Saturated domains.

Verdict saturation_identity() {
    Sim1Config cfg;
    cfg.D = 12;
    cfg.N_d = 15;
    cfg.n_d = 15;
    const SimDesign design = generate_sim1_covariates(cfg);
    const ModelParams truth = cfg.params();
    NormalStream stream(derive_seed(31, {1}));
    const Mat2 lu = chol2(truth.theta.v_u()), le = chol2(truth.theta.v_e());
    std::vector<UnitRecord> recs;
    for (int d = 0; d < cfg.D; ++d) {
        const Vec2 u = stream.bivariate(Vec2::Zero(), lu);
        for (int j = 0; j < cfg.N_d; ++j) {
            const auto& p = design.aux.pattern(design.unit_pattern[d][j]);
            const Vec2 y = unit_design(p.x1, p.x2) * truth.beta.stacked() + u + stream.bivariate(Vec2::Zero(), le);
            recs.push_back({design.domain_ids[d], p.x1, p.x2, y[0], y[1]});
        }
    }
    const auto sample = SampleData::from_records(2, 2, recs);
    const auto fit = fit_reml(sample);
    const auto targets = standard_targets();
    std::size_t mismatches = 0, checked = 0;
    for (const auto& tr : {Transform::log(), Transform::identity()}) {
        for (unsigned threads : {1u, 4u}) {
            McOptions mc;
            mc.L = 50;
            mc.threads = threads;
            const auto est = ebp_predict(targets, tr, fit.params, sample, design.aux, mc);
            for (std::size_t d = 0; d < sample.num_domains(); ++d) {
                const auto dir = direct_estimate(sample.domain(d), tr);
                const double expected[4] = {dir.mean1, dir.mean2, dir.mean_of_ratios, dir.ratio_of_means};
                for (std::size_t k = 0; k < 4; ++k, ++checked)
                    if (std::memcmp(&expected[k], &est.values[d][k], sizeof(double)) != 0) ++mismatches;
            }
        }
    }
    return {mismatches == 0 && checked > 0,
            std::to_string(checked - mismatches) + "/" + std::to_string(checked) +
                " bitwise equal (12 domains x 4 targets x 2 transforms x 2 thread counts)"};
}

// ---------------------------------------------------------------------------
// 8. CLI determinism across repeats and thread counts.

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) out[e.path().filename().string()] = slurp(e.path());
    return out;
}

Verdict cli_determinism() {
    const std::string cli = BNER_CLI_PATH;
    const fs::path data = fs::path(BNER_SOURCE_DIR) / "data";
    const fs::path root = fs::temp_directory_path() / "bner_acceptance_determinism";
    fs::remove_all(root);
    const std::string inputs = " --data " + (data / "sample.csv").string() + " --aux " + (data / "aux.csv").string() +
                               " --patterns " + (data / "patterns.csv").string() + " --transform log";
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"fit", "fit" + inputs},
        {"predict", "predict" + inputs + " --L 50 --seed 3"},
        {"mse", "mse" + inputs + " --L 20 --B 16 --seed 3"},
        {"sim1", "sim1 --D 8 --Nd 30 --nd 5,10 --I 6 --L 20 --seed 3"},
        {"sim2", "sim2 --D 8 --Nd 30 --nd 5 --I 4 --L 10 --B-grid 4,8 --reference-I 6 --seed 3"},
    };
    std::ostringstream d;
    bool ok = true;
    std::size_t files = 0;
    for (const auto& [name, args] : commands) {
        std::vector<std::map<std::string, std::string>> outs;
        for (const char* run : {"t1a", "t1b", "t8a", "t8b"}) {
            const fs::path out = root / name / run;
            fs::create_directories(out);
            const std::string threads = run[1] == '1' ? "1" : "8";
            const std::string cmd = "\"" + cli + "\" " + args + " --threads " + threads + " --quiet --out \"" +
                                    out.string() + "\" > /dev/null 2>&1";
            if (std::system(cmd.c_str()) != 0) {
                ok = false;
                d << name << " exited non-zero; ";
            }
            outs.push_back(dir_contents(out));
        }
        const bool same = !outs[0].empty() && outs[0] == outs[1] && outs[0] == outs[2] && outs[0] == outs[3];
        ok = ok && same;
        files += outs[0].size();
        d << name << (same ? " identical" : " DIFFERS") << " (" << outs[0].size() << " files); ";
    }
    fs::remove_all(root);
    d << files << " files compared byte for byte across 2 repeats x threads {1, 8}";
    return {ok, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"conditional moments match dense Schur complement", conditional_moment_oracle},
        {"REML score matches finite differences", score_gradient_check},
        {"Simulation 1 reproduces RE/RRE at full scale", sim1_reproduction},
        {"EBPs are nearly unbiased (RAB)", sim1_bias},
        {"Simulation 2 bootstrap MSE: RRE decreasing in B, RAB in [5,15]%", sim2_bootstrap},
        {"bootstrap MSE matches brute-force double loop", double_loop_oracle},
        {"saturated domains reproduce direct values bitwise", saturation_identity},
        {"CLI outputs are byte-identical across runs and threads", cli_determinism},
    };
    std::set<std::size_t> selected;
    for (int i = 1; i < argc; ++i) selected.insert(static_cast<std::size_t>(std::atoi(argv[i])));
    int failed = 0;
    for (std::size_t c = 0; c < criteria.size(); ++c) {
        if (!selected.empty() && !selected.count(c + 1)) continue;
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = criteria[c].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << c + 1 << ": " << criteria[c].first << " -- "
                  << v.detail << " [" << fmt(seconds_since(t0), 4) << " s]" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
