// Prints one PASS/FAIL line per acceptance criterion and exits nonzero if any
// criterion fails. Defaults reproduce the full-scale design; --replicates and
// --vertices shrink it for quick looks.

#include "oracles.hpp"
#include "test_support.hpp"
#include "twincov/closed_form_cov.hpp"
#include "twincov/covfun_eval.hpp"
#include "twincov/pipeline.hpp"
#include "twincov/psd_ace.hpp"
#include "twincov/sim_metrics.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

using namespace twincov;
using namespace twincov::testing;

namespace {

struct Options {
    std::size_t replicates = 30;
    std::size_t vertices = 1002;
    std::size_t n_mz = 100, n_dz = 100, n_singleton = 200;
    std::uint64_t seed = 20240501;
    int threads = 0;
    std::string csv;
};

int g_failures = 0;

void verdict(int id, bool pass, const std::string& title, const std::string& detail) {
    if (!pass) ++g_failures;
    std::printf("criterion %2d %s  %s: %s\n", id, pass ? "PASS" : "FAIL", title.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string f(const char* fmt, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, a);
    return buf;
}

// Smallest eigenvalue relative to the largest (0 for a zero matrix).
double psd_ratio(const Eigen::MatrixXd& m) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    const double hi = es.eigenvalues().cwiseAbs().maxCoeff();
    return hi > 0.0 ? es.eigenvalues().minCoeff() / hi : 0.0;
}

struct PsdTracker {
    double worst = 0.0;
    std::size_t checked = 0;
    void add(const CovTriple& t) {
        for (const auto* m : {&t.sigma_a, &t.sigma_c, &t.sigma_eG}) {
            worst = std::min(worst, psd_ratio(*m));
            ++checked;
        }
    }
};

struct ImprovementTracker {
    std::size_t fits = 0, violations = 0;
    void add(const ConvergenceReport& r) {
        ++fits;
        if (!(r.final_objective <= r.initial_objective)) ++violations;
    }
};

const std::vector<Estimator> kCovEstimators{Estimator::SFsem, Estimator::PsdFsem, Estimator::SSw, Estimator::PsdSw,
                                            Estimator::PsdAce};
const std::vector<Estimator> kH2Estimators{Estimator::Mle,   Estimator::Mwle,  Estimator::SFsem, Estimator::PsdFsem,
                                           Estimator::SSw,   Estimator::PsdSw, Estimator::PsdAce};

struct Simulation {
    std::map<std::pair<Estimator, int>, std::vector<double>> ise;  // (estimator, 0 a / 1 c / 2 eG)
    std::map<Estimator, std::vector<double>> h2_ise;
    std::map<Estimator, std::vector<double>> mean_diag_a;
    std::size_t dominated = 0;
    std::optional<PipelineResult> first;
    std::optional<TwinCohort> first_cohort;
};

Simulation run_simulation(const Options& opt, const SimTruth& truth, PsdTracker& psd, ImprovementTracker& improve,
                          std::ofstream* csv) {
    Simulation sim;
    PipelineConfig cfg;
    cfg.ranks = RankSpec{8, 8, 6};
    cfg.run_mwle = true;
    cfg.seed = opt.seed;
    for (std::size_t r = 1; r <= opt.replicates; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        TwinCohort cohort = simulate_cohort(truth, opt.n_mz, opt.n_dz, opt.n_singleton, replicate_seed(opt.seed, r));
        PipelineResult res = run_pipeline(cohort, truth.domain, cfg, Estimator::PsdAce);
        const Eigen::MatrixXd* tm[3] = {&truth.sigma_a, &truth.sigma_c, &truth.sigma_eG};
        for (Estimator e : kCovEstimators) {
            const CovTriple& t = res.covariance_for(e);
            const Eigen::MatrixXd* em[3] = {&t.sigma_a, &t.sigma_c, &t.sigma_eG};
            for (int c = 0; c < 3; ++c) {
                const double v = ise(*em[c], *tm[c]);
                sim.ise[{e, c}].push_back(v);
                if (csv) *csv << r << ',' << to_string(e) << ',' << "abc"[c] << ',' << v << ','
                              << normalized_ise(*em[c], *tm[c]) << '\n';
            }
            if (e != Estimator::SFsem && e != Estimator::SSw) psd.add(t);
        }
        for (Estimator e : kH2Estimators) {
            const ComponentFields fl = res.fields_for(e);
            sim.h2_ise[e].push_back(ise_field(*fl.h2, truth.h2));
            sim.mean_diag_a[e].push_back(fl.sigma2_a.mean());
        }
        improve.add(res.psd_ace->report);
        auto last = [&](Estimator e, int c) { return sim.ise[{e, c}].back(); };
        bool dom = true;
        for (int c = 0; c < 2; ++c)
            dom = dom && last(Estimator::PsdAce, c) < last(Estimator::SFsem, c) &&
                  last(Estimator::PsdAce, c) < last(Estimator::PsdFsem, c);
        if (dom) ++sim.dominated;
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        std::fprintf(stderr,
                     "replicate %2zu/%zu  %.1fs  ISE_a x V^2: psd-ace %.1f s-fsem %.1f psd-fsem %.1f  "
                     "mean diag a: psd-ace %.4f  descent %d it%s\n",
                     r, opt.replicates, dt.count(), last(Estimator::PsdAce, 0) * std::pow(truth.domain.size(), 2.0),
                     last(Estimator::SFsem, 0) * std::pow(truth.domain.size(), 2.0),
                     last(Estimator::PsdFsem, 0) * std::pow(truth.domain.size(), 2.0),
                     sim.mean_diag_a[Estimator::PsdAce].back(), res.psd_ace->report.iterations,
                     res.psd_ace->report.converged ? "" : " (not converged)");
        if (r == 1) {
            sim.first = std::move(res);
            sim.first_cohort = std::move(cohort);
        }
    }
    return sim;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// ---- small-instance criteria

bool gradient_check(std::string& detail) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> uv(3, 10), ur(1, 3), up(1, 3), us(0, 3);
    std::uniform_real_distribution<double> uh(1.2, 4.0), ue(0.0, 0.2);
    std::normal_distribution<double> z;
    auto gaussian = [&](Eigen::Index r, Eigen::Index c, double s) {
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * z(rng);
        return m;
    };
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        const int v = uv(rng);
        std::vector<Vertex> verts;
        for (int i = 0; i < v; ++i) verts.push_back({std::numbers::pi / 2.0, deg2rad(i), Hemisphere::Left});
        const VertexSet dom(verts);
        const auto pairs = static_cast<std::size_t>(up(rng));
        const auto fam = FamilyIndex::canonical(pairs, pairs, static_cast<std::size_t>(us(rng)));
        const KernelOperator k = build_kernel(dom, uh(rng));
        const Eigen::MatrixXd res = gaussian(static_cast<Eigen::Index>(fam.n_individuals()), v, 1.0);
        Eigen::VectorXd el(v);
        for (int i = 0; i < v; ++i) el(i) = ue(rng);
        const auto cp = cross_products(res, fam, el);
        const PsdAceProblem prob(cp, k, res, fam);
        CovFactorization zf{gaussian(v, ur(rng), 0.5), gaussian(v, ur(rng), 0.5), gaussian(v, ur(rng), 0.5)};
        const Gradients g = prob.gradients(zf);
        const Eigen::MatrixXd kd(k.raw);
        auto fd = [&](Eigen::MatrixXd& m) {
            Eigen::MatrixXd out(m.rows(), m.cols());
            for (Eigen::Index i = 0; i < m.size(); ++i) {
                const double x = m.data()[i];
                const double h = 1e-5 * std::max(1.0, std::abs(x));
                m.data()[i] = x + h;
                const double fp = literal_objective(res, fam, el, kd, zf.za, zf.zc, zf.zeG);
                m.data()[i] = x - h;
                const double fm = literal_objective(res, fam, el, kd, zf.za, zf.zc, zf.zeG);
                m.data()[i] = x;
                out.data()[i] = (fp - fm) / (2.0 * h);
            }
            return out;
        };
        const Eigen::MatrixXd* an[3] = {&g.a, &g.c, &g.eG};
        Eigen::MatrixXd* zs[3] = {&zf.za, &zf.zc, &zf.zeG};
        for (int c = 0; c < 3; ++c) {
            const Eigen::MatrixXd num = fd(*zs[c]);
            worst = std::max(worst, (*an[c] - num).norm() / std::max(num.norm(), 1e-300));
        }
    }
    detail = "50 instances, worst relative error " + f("%.2e", worst) + " (need < 1e-4)";
    return worst < 1e-4;
}

bool closed_form_check(std::string& detail) {
    const auto d = equator({0.0, 1.0, 2.0});
    std::mt19937_64 rng(99);
    std::normal_distribution<double> z;
    double worst = 0.0;
    int cases = 0;
    for (auto [n1, n2, ns] : {std::array<std::size_t, 3>{1, 1, 0}, {2, 1, 1}, {2, 3, 2}}) {
        const auto fam = FamilyIndex::canonical(n1, n2, ns);
        for (int rep = 0; rep < 4; ++rep) {
            Eigen::MatrixXd r(static_cast<Eigen::Index>(fam.n_individuals()), 3);
            for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = z(rng);
            const Eigen::Vector3d el(0.1 * rep, 0.2, 0.05);
            const auto cp = cross_products(r, fam, el);
            for (double h : {1.5, 2.5, 5.0}) {
                const auto k = build_kernel(d, h);
                const auto fsem = sfsem_estimates(cp, k);
                const auto sw = sandwich_estimates(cp, k);
                const Eigen::MatrixXd raw(k.raw), sm(k.smoother);
                for (Eigen::Index u = 0; u < 3; ++u)
                    for (Eigen::Index v = 0; v < 3; ++v) {
                        const Eigen::Vector3d bf = brute_entry(r, fam, el, raw, u, v, true);
                        const Eigen::Vector3d bs = brute_entry(r, fam, el, sm, u, v, false);
                        const Eigen::Vector3d gf(fsem.sigma_a(u, v), fsem.sigma_c(u, v), fsem.sigma_eG(u, v));
                        const Eigen::Vector3d gs(sw.sigma_a(u, v), sw.sigma_c(u, v), sw.sigma_eG(u, v));
                        worst = std::max(worst, (gf - bf).cwiseAbs().maxCoeff() / std::max(1.0, bf.cwiseAbs().maxCoeff()));
                        worst = std::max(worst, (gs - bs).cwiseAbs().maxCoeff() / std::max(1.0, bs.cwiseAbs().maxCoeff()));
                    }
                ++cases;
            }
        }
    }
    detail = std::to_string(cases) + " V=3 instances, worst deviation from brute-force least squares " +
             f("%.2e", worst) + " (need <= 1e-8)";
    return worst <= 1e-8;
}

bool rank_check(std::string& detail) {
    const std::size_t n1 = 20, n2 = 15, ns = 30;
    const auto truth = build_truth(fibonacci_sphere(300));
    const auto cohort = simulate_cohort(truth, n1, n2, ns, 17);
    PipelineConfig cfg;
    const auto res = run_pipeline(cohort, truth.domain, cfg, Estimator::SSw);
    const std::size_t n = cohort.n_individuals();
    bool ok = true;
    std::string counts;
    auto check = [&](const CovTriple& sw) {
        const auto a = truncate_psd(sw.sigma_a).positive_count;
        const auto c = truncate_psd(sw.sigma_c).positive_count;
        const auto e = truncate_psd(sw.sigma_eG).positive_count;
        ok = ok && a <= static_cast<Eigen::Index>(n1 + n2) && c <= static_cast<Eigen::Index>(n1 + n2) &&
             e <= static_cast<Eigen::Index>(n - n1);
        counts += " " + std::to_string(a) + "/" + std::to_string(c) + "/" + std::to_string(e);
    };
    check(*res.ssw);
    for (double mult : {1.5, 3.0}) {
        const auto k = build_kernel(truth.domain, truth.domain.min_spacing() * mult);
        check(sandwich_estimates(*res.cross, k));
    }
    detail = "V=300, N=" + std::to_string(n) + ", positive counts a/c/eG:" + counts + " (bounds " +
             std::to_string(n1 + n2) + "/" + std::to_string(n1 + n2) + "/" + std::to_string(n - n1) + ")";
    return ok;
}

bool gram_check(const PipelineResult& res, const VertexSet& domain, std::string& detail) {
    const KernelOperator k = build_kernel(domain, res.psd_ace->covariance.bandwidth);
    const InterpFactors fac = make_interp_factors(res.psd_ace->factors, domain, k);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ut(0.0, std::numbers::pi), up(0.0, 2.0 * std::numbers::pi);
    std::uniform_int_distribution<int> um(2, 60);
    std::normal_distribution<double> z;
    double worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        std::vector<Vertex> loc;
        const int m = um(rng);
        for (int i = 0; i < m; ++i) loc.push_back({ut(rng), up(rng), Hemisphere::Left});
        const Component comp = static_cast<Component>(draw % 3);
        const Eigen::MatrixXd g = evaluate_gram(fac, comp, loc);
        Eigen::VectorXd a(m);
        for (int i = 0; i < m; ++i) a(i) = z(rng);
        const double scale = std::max(g.cwiseAbs().maxCoeff() * a.squaredNorm(), 1e-300);
        worst = std::min(worst, static_cast<double>(a.transpose() * g * a) / scale);
        worst = std::min(worst, psd_ratio(g));
    }
    detail = "100 location/weight draws, worst normalized quadratic form or eigenvalue " + f("%.2e", worst);
    return worst >= -1e-10;
}

}  // namespace

int main(int argc, char** argv) {
    Options opt;
    CLI::App app{"Acceptance criteria"};
    app.add_option("--replicates", opt.replicates, "Simulation replicates");
    app.add_option("--vertices", opt.vertices, "Grid size");
    app.add_option("--seed", opt.seed, "Master seed");
    app.add_option("--threads", opt.threads, "Worker threads");
    app.add_option("--csv", opt.csv, "Write per-replicate covariance ISEs here");
    CLI11_PARSE(app, argc, argv);
    if (opt.threads > 0) omp_set_num_threads(opt.threads);

    const auto t_start = std::chrono::steady_clock::now();
    const SimTruth truth = build_truth(fibonacci_sphere(opt.vertices));
    const double v = static_cast<double>(opt.vertices);
    std::printf("design: V=%zu, %zu MZ / %zu DZ / %zu singletons, %zu replicates, ranks 8/8/6, seed %llu\n",
                opt.vertices, opt.n_mz, opt.n_dz, opt.n_singleton, opt.replicates,
                static_cast<unsigned long long>(opt.seed));
    std::printf("truth: h2 mean %.3f range [%.3f, %.3f]\n", truth.h2.mean(), truth.h2.minCoeff(), truth.h2.maxCoeff());

    std::ofstream csv_file;
    if (!opt.csv.empty()) {
        csv_file.open(opt.csv);
        csv_file << "replicate,estimator,component,ise,ise_normalized\n";
    }
    PsdTracker psd;
    ImprovementTracker improve;
    Simulation sim = run_simulation(opt, truth, psd, improve, opt.csv.empty() ? nullptr : &csv_file);

    // 1
    const std::size_t need = opt.replicates - opt.replicates / 15;  // 28 of 30
    verdict(1, sim.dominated >= need, "estimator dominance",
            std::to_string(sim.dominated) + "/" + std::to_string(opt.replicates) +
                " replicates with PSD-ACE below S-FSEM and PSD-FSEM for Sigma_a and Sigma_c (need >= " +
                std::to_string(need) + ")");

    // 2
    const double md_ace = mean(sim.mean_diag_a[Estimator::PsdAce]);
    const double md_mle = mean(sim.mean_diag_a[Estimator::Mle]);
    const double md_mwle = mean(sim.mean_diag_a[Estimator::Mwle]);
    const double md_fsem = mean(sim.mean_diag_a[Estimator::PsdFsem]);
    verdict(2,
            md_ace >= 0.015 && md_ace <= 0.025 && md_mle >= 0.013 && md_mle <= 0.017 && md_mwle >= 0.013 &&
                md_mwle <= 0.017 && md_fsem >= 0.05,
            "bias reproduction",
            "mean diag Sigma_a: PSD-ACE " + f("%.4f", md_ace) + " [0.015,0.025], MLE " + f("%.4f", md_mle) +
                " and MWLE " + f("%.4f", md_mwle) + " [0.013,0.017], PSD-FSEM " + f("%.4f", md_fsem) + " (>= 0.05)");

    // 3
    auto h2m = [&](Estimator e) { return mean(sim.h2_ise[e]) * v; };
    const double h_ace = h2m(Estimator::PsdAce), h_mwle = h2m(Estimator::Mwle), h_mle = h2m(Estimator::Mle);
    const double h_pf = h2m(Estimator::PsdFsem), h_sf = h2m(Estimator::SFsem);
    verdict(3, h_ace < h_mwle && h_mwle <= 1.1 * h_mle && h_mle < h_pf && h_pf < h_sf && h_ace >= 3.0 && h_ace <= 10.0,
            "heritability MISE ordering",
            "MISE x V: PSD-ACE " + f("%.2f", h_ace) + " < MWLE " + f("%.2f", h_mwle) + " <= 1.1 x MLE (MLE " +
                f("%.2f", h_mle) + ") < PSD-FSEM " + f("%.2f", h_pf) + " < S-FSEM " + f("%.2f", h_sf) +
                "; PSD-ACE in [3,10]");

    // 4
    const double m_ace = mean(sim.ise[{Estimator::PsdAce, 0}]) * v * v;
    const double m_sf = mean(sim.ise[{Estimator::SFsem, 0}]) * v * v;
    verdict(4, m_ace >= 30.0 && m_ace <= 80.0 && m_sf >= 700.0 && m_sf <= 1500.0, "covariance MISE magnitudes",
            "Sigma_a MISE x V^2: PSD-ACE " + f("%.2f", m_ace) + " [30,80], S-FSEM " + f("%.2f", m_sf) + " [700,1500]");
    std::printf("             (other MISE x V^2, a/c/eG:");
    for (Estimator e : kCovEstimators) {
        std::printf(" %s %.1f/%.1f/%.1f;", to_string(e), mean(sim.ise[{e, 0}]) * v * v, mean(sim.ise[{e, 1}]) * v * v,
                    mean(sim.ise[{e, 2}]) * v * v);
    }
    std::printf(" h2 MISE x V: PSD-SW %.2f, S-SW %.2f)\n", h2m(Estimator::PsdSw), h2m(Estimator::SSw));

    // 5
    std::string detail;
    verdict(5, gradient_check(detail), "gradient correctness", detail);

    // 10 first: its fits join the PSD and improvement tallies.
    const PipelineResult& first = *sim.first;
    const PipelineConfig cfg = [] {
        PipelineConfig c;
        c.ranks = RankSpec{8, 8, 6};
        return c;
    }();
    std::vector<std::size_t> all(opt.vertices);
    std::iota(all.begin(), all.end(), 0);
    const auto single = partition_fit_combine(first.smle->residuals, sim.first_cohort->families,
                                              first.sigma_g->sigma2_eL, truth.domain, {all}, cfg);
    const auto halves = partition_fit_combine(first.smle->residuals, sim.first_cohort->families,
                                              first.sigma_g->sigma2_eL, truth.domain,
                                              interleaved_partitions(opt.vertices, 2, cfg.overlap_stride), cfg);
    for (const auto* p : {&single, &halves}) {
        psd.add(p->covariance);
        for (const auto& r : p->report.reports) improve.add(r);
    }
    const CovTriple& ref = first.psd_ace->covariance;
    double single_dev = 0.0;
    const Eigen::MatrixXd* s_m[3] = {&single.covariance.sigma_a, &single.covariance.sigma_c, &single.covariance.sigma_eG};
    const Eigen::MatrixXd* r_m[3] = {&ref.sigma_a, &ref.sigma_c, &ref.sigma_eG};
    for (int c = 0; c < 3; ++c)
        single_dev = std::max(single_dev, (*s_m[c] - *r_m[c]).cwiseAbs().maxCoeff() / r_m[c]->cwiseAbs().maxCoeff());
    const double halves_rel = (halves.covariance.sigma_a - ref.sigma_a).norm() / ref.sigma_a.norm();

    // 6
    std::string gram_detail;
    const bool gram_ok = gram_check(first, truth.domain, gram_detail);
    verdict(6, psd.worst >= -1e-8 && gram_ok, "PSD guarantees",
            std::to_string(psd.checked) + " PSD-tagged matrices, worst min/max eigenvalue " + f("%.2e", psd.worst) +
                " (need >= -1e-8); " + gram_detail);

    // 7
    verdict(7, closed_form_check(detail), "closed-form oracle equivalence", detail);

    // 8
    verdict(8, rank_check(detail), "rank structure", detail);

    // 9
    verdict(9, improve.violations == 0, "improvement guarantee",
            std::to_string(improve.fits) + " descent fits, " + std::to_string(improve.violations) +
                " with final objective above the initial one");

    verdict(10, single_dev <= 1e-10 && halves_rel <= 0.10, "partition consistency",
            "single partition max relative deviation " + f("%.2e", single_dev) + " (need <= 1e-10); two halves " +
                "relative Frobenius distance of Sigma_a " + f("%.4f", halves_rel) + " (need <= 0.10)");

    const std::chrono::duration<double> total = std::chrono::steady_clock::now() - t_start;
    std::printf("%d of 10 criteria failed; wall time %.0f s\n", g_failures, total.count());
    return g_failures == 0 ? 0 : 1;
}
