#include "twincov/twincov.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct ApiError {
    twincov_status status;
    std::string message;
};

void check(twincov_status s) {
    if (s != TWINCOV_OK) throw ApiError{s, twincov_last_error()};
}

void usage_error(const std::string& msg) { throw ApiError{TWINCOV_E_INVALID_ARGUMENT, msg}; }

template <class T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using Matrix = std::unique_ptr<twincov_matrix, Deleter<twincov_matrix, twincov_matrix_free>>;
using Domain = std::unique_ptr<twincov_domain, Deleter<twincov_domain, twincov_domain_free>>;
using Cohort = std::unique_ptr<twincov_cohort, Deleter<twincov_cohort, twincov_cohort_free>>;
using Truth = std::unique_ptr<twincov_truth, Deleter<twincov_truth, twincov_truth_free>>;
using Config = std::unique_ptr<twincov_config, Deleter<twincov_config, twincov_config_free>>;
using Result = std::unique_ptr<twincov_result, Deleter<twincov_result, twincov_result_free>>;
using Interp = std::unique_ptr<twincov_interp, Deleter<twincov_interp, twincov_interp_free>>;
using Accumulator = std::unique_ptr<twincov_accumulator, Deleter<twincov_accumulator, twincov_accumulator_free>>;

Matrix read_matrix(const std::string& path) {
    twincov_matrix* m = nullptr;
    check(twincov_matrix_read(path.c_str(), &m));
    return Matrix(m);
}

Domain load_domain(const std::string& path) {
    twincov_domain* d = nullptr;
    check(twincov_domain_load(path.c_str(), &d));
    return Domain(d);
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// Same temp-then-rename discipline as the library's own writers.
void write_text_atomically(const std::string& path, const std::string& text) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) throw ApiError{TWINCOV_E_IO, "cannot write '" + tmp.string() + "'"};
    }
    fs::rename(tmp, target);
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ApiError{TWINCOV_E_IO, "cannot open '" + path + "'"};
    try {
        return json::parse(in);
    } catch (const std::exception& e) {
        throw ApiError{TWINCOV_E_PARSE, path + ": " + e.what()};
    }
}

void log_line(const std::string& msg) { std::fprintf(stderr, "[twincov] %s\n", msg.c_str()); }

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::size_t vertices = 1002;
    std::string vertex_file;
    std::size_t n_mz = 100, n_dz = 100, n_singleton = 200;
    std::uint64_t seed = 1;
    std::size_t replicates = 1;
    std::string out = "sim";
};

void cmd_simulate(const SimulateArgs& a) {
    twincov_domain* dp = nullptr;
    if (a.vertex_file.empty()) check(twincov_domain_fibonacci(a.vertices, &dp));
    else check(twincov_domain_load(a.vertex_file.c_str(), &dp));
    Domain domain(dp);
    twincov_truth* tp = nullptr;
    check(twincov_truth_build(domain.get(), &tp));
    Truth truth(tp);
    fs::create_directories(a.out);
    check(twincov_domain_save(domain.get(), (fs::path(a.out) / "vertices.csv").c_str()));
    check(twincov_truth_write(truth.get(), (fs::path(a.out) / "truth").c_str()));
    for (std::size_t r = 1; r <= a.replicates; ++r) {
        const std::uint64_t seed = twincov_replicate_seed(a.seed, r);
        twincov_cohort* cp = nullptr;
        check(twincov_truth_simulate(truth.get(), a.n_mz, a.n_dz, a.n_singleton, seed, &cp));
        Cohort cohort(cp);
        char name[32];
        std::snprintf(name, sizeof name, "rep_%03zu", r);
        const fs::path dir = fs::path(a.out) / name;
        check(twincov_cohort_save(cohort.get(), (dir / "phenotype.mat").c_str(), (dir / "design.mat").c_str(),
                                  (dir / "families.csv").c_str()));
        json meta{{"replicate", r}, {"seed", seed}, {"master_seed", a.seed},
                  {"n_mz", a.n_mz}, {"n_dz", a.n_dz}, {"n_singleton", a.n_singleton}};
        write_text_atomically((dir / "cohort.json").string(), meta.dump(2) + "\n");
    }
    log_line("simulated " + std::to_string(a.replicates) + " cohort(s) on " +
             std::to_string(twincov_domain_size(domain.get())) + " vertices into " + a.out);
}

// ---------------------------------------------------------------- fit

struct CohortArgs {
    std::string vertex_file;
    std::string cohort_dir;
    std::string phenotype, design, families;

    void add(CLI::App* app) {
        app->add_option("--vertex-file", vertex_file, "Vertex CSV (index,theta,phi,hemisphere)")->required();
        app->add_option("--cohort-dir", cohort_dir, "Directory with phenotype.mat, design.mat and families.csv");
        app->add_option("--phenotype", phenotype, "Phenotype MAT1 (N x V)");
        app->add_option("--design", design, "Design MAT1 or CSV (N x p)");
        app->add_option("--families", families, "Family CSV row_index,family_id,kind");
    }
    std::string path(const std::string& explicit_path, const char* name) const {
        if (!explicit_path.empty()) return explicit_path;
        if (cohort_dir.empty()) usage_error(std::string("either --cohort-dir or --") + name + " is required");
        const char* file = std::string(name) == "phenotype" ? "phenotype.mat"
                           : std::string(name) == "design" ? "design.mat"
                                                           : "families.csv";
        return (fs::path(cohort_dir) / file).string();
    }
};

// Pipeline options in config-key form. Only keys given on the command line or
// in the config file are forwarded; everything else keeps the library default.
struct PipelineArgs {
    std::map<std::string, std::string> values;
    int threads = 0;

    void add(CLI::App* app) {
        static const std::vector<std::pair<const char*, const char*>> keys{
            {"smooth_bandwidths", "Bandwidth grid (degrees) for field smoothing, comma separated"},
            {"cov_bandwidths", "Bandwidth grid (degrees) for covariance smoothing"},
            {"mwle_bandwidths", "MWLE candidate bandwidths (degrees)"},
            {"seed", "Seed for MWLE fold assignment"},
            {"run_mwle", "Also fit MWLE when the target is another estimator"},
            {"sigma_g_criterion", "Bandwidth criterion for the measurement-error step: gcv | raw"},
            {"ranks", "PSD-ACE ranks: auto or a,c,eG"},
            {"tolerance", "Descent stopping ratio epsilon"},
            {"learning_rate", "Initial descent learning rate lambda"},
            {"max_iterations", "Maximum descent iterations"},
            {"guard_objective", "Also roll back steps that raise the objective"},
            {"partitions", "Number of vertex partitions for the low-memory path"},
            {"overlap_stride", "Interleaved partitions share every k-th block"},
            {"inverse_threshold", "Eigenvalue cutoff of the robust kernel inverse"},
            {"inverse_mode", "absolute | relative"},
            {"eigen_method", "auto | dense | subspace"},
            {"mle_max_iterations", "Iteration cap of the pointwise likelihood fits"},
        };
        for (const auto& [key, help] : keys) {
            std::string flag = std::string("--") + key;
            for (auto& ch : flag)
                if (ch == '_') ch = '-';
            app->add_option_function<std::string>(flag, [this, k = std::string(key)](const std::string& v) {
                   values[k] = v;
               }, help);
        }
        app->add_option("--threads", threads, "Worker threads (default: TWINCOV_THREADS or all cores)");
    }

    Config make() const {
        twincov_config* c = nullptr;
        check(twincov_config_create(&c));
        Config cfg(c);
        for (const auto& [k, v] : values) check(twincov_config_set(cfg.get(), k.c_str(), v.c_str()));
        check(twincov_config_validate(cfg.get()));
        return cfg;
    }

    void apply_threads() const {
        int t = threads;
        if (t <= 0) {
            if (const char* env = std::getenv("TWINCOV_THREADS")) t = std::atoi(env);
        }
        twincov_set_threads(t);
    }
};

struct FitArgs {
    CohortArgs cohort;
    PipelineArgs pipeline;
    std::string estimator = "psd-ace";
    std::string out = "fit";
    std::string replicate;
};

Result run_fit(const CohortArgs& ca, const PipelineArgs& pa, const std::string& estimator, Domain& domain_out) {
    pa.apply_threads();
    Config cfg = pa.make();
    domain_out = load_domain(ca.vertex_file);
    twincov_cohort* cp = nullptr;
    check(twincov_cohort_load(ca.path(ca.phenotype, "phenotype").c_str(), ca.path(ca.design, "design").c_str(),
                              ca.path(ca.families, "families").c_str(), domain_out.get(), &cp));
    Cohort cohort(cp);
    std::size_t n1 = 0, n2 = 0, n3 = 0, v = 0;
    check(twincov_cohort_counts(cohort.get(), &n1, &n2, &n3, &v));
    log_line("cohort: " + std::to_string(n1) + " MZ, " + std::to_string(n2) + " DZ, " + std::to_string(n3) +
             " singletons, " + std::to_string(v) + " vertices; estimator " + estimator);
    twincov_result* rp = nullptr;
    const auto t0 = std::chrono::steady_clock::now();
    check(twincov_fit(cohort.get(), domain_out.get(), cfg.get(), estimator.c_str(), &rp));
    Result res(rp);
    const std::chrono::duration<double> total = std::chrono::steady_clock::now() - t0;
    for (std::size_t i = 0; i < twincov_result_timing_count(res.get()); ++i) {
        const char* step = nullptr;
        double sec = 0.0;
        check(twincov_result_timing(res.get(), i, &step, &sec));
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-26s %10.3f s", step, sec);
        log_line(buf);
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-26s %10.3f s", "total", total.count());
    log_line(buf);
    for (std::size_t i = 0; i < twincov_result_warning_count(res.get()); ++i)
        log_line(std::string("warning: ") + twincov_result_warning(res.get(), i));
    return res;
}

void cmd_fit(const FitArgs& a) {
    Domain domain;
    Result res = run_fit(a.cohort, a.pipeline, a.estimator, domain);
    json extra = json::object();
    if (!a.replicate.empty()) extra["replicate"] = a.replicate;
    extra["vertex_file"] = fs::absolute(a.cohort.vertex_file).string();
    for (const auto& [k, v] : a.pipeline.values) extra["config." + k] = v;
    check(twincov_result_write(res.get(), a.out.c_str(), extra.dump().c_str()));
    log_line("wrote " + a.out);
}

// ---------------------------------------------------------------- gcv-trace

struct GcvArgs {
    CohortArgs cohort;
    PipelineArgs pipeline;
    std::string which = "cov";
    std::string out = "gcv.csv";
};

void cmd_gcv_trace(const GcvArgs& a) {
    std::string estimator = "s-sw";
    if (a.which == "mwle") estimator = "mwle";
    else if (a.which.rfind("smle_", 0) == 0) estimator = "smle";
    else if (a.which != "cov" && a.which != "sigma_g") usage_error("--which must be cov, sigma_g, mwle or smle_<field>");
    Domain domain;
    Result res = run_fit(a.cohort, a.pipeline, estimator, domain);
    twincov_matrix* mp = nullptr;
    check(twincov_result_trace(res.get(), a.which.c_str(), &mp));
    Matrix m(mp);
    std::ostringstream out;
    out << "h,gcv\n";
    const double* d = twincov_matrix_data(m.get());
    for (std::size_t i = 0; i < twincov_matrix_rows(m.get()); ++i) out << fmt(d[2 * i]) << ',' << fmt(d[2 * i + 1]) << '\n';
    write_text_atomically(a.out, out.str());
    log_line("wrote " + a.out);
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string truth;
    std::vector<std::string> fits;
    std::string out = "metrics";
};

void cmd_evaluate(const EvaluateArgs& a) {
    struct Item {
        const char* component;
        const char* file;
    };
    static const Item matrices[] = {{"Sigma_a", "Sigma_a.mat"}, {"Sigma_c", "Sigma_c.mat"}, {"Sigma_eG", "Sigma_eG.mat"}};
    static const Item fields[] = {{"sigma2_a", "sigma2_a.mat"}, {"sigma2_c", "sigma2_c.mat"},
                                  {"sigma2_e", "sigma2_e.mat"}, {"h2", "h2.mat"}};
    std::map<std::string, Matrix> truth;
    auto truth_of = [&](const Item& it) -> twincov_matrix* {
        auto found = truth.find(it.component);
        if (found == truth.end())
            found = truth.emplace(it.component, read_matrix((fs::path(a.truth) / it.file).string())).first;
        return found->second.get();
    };
    std::map<std::pair<std::string, std::string>, Accumulator> acc;
    std::vector<std::string> order;
    std::ostringstream rows;
    rows << "replicate,estimator,component,ise,ise_normalized\n";
    std::size_t index = 0;
    for (const auto& dir : a.fits) {
        ++index;
        const json meta = read_json((fs::path(dir) / "metadata.json").string());
        const std::string est = meta.at("estimator").get<std::string>();
        const std::string rep = meta.contains("replicate") ? meta["replicate"].get<std::string>() : std::to_string(index);
        auto score = [&](const Item& it) {
            const fs::path file = fs::path(dir) / it.file;
            if (!fs::exists(file)) return;
            Matrix est_m = read_matrix(file.string());
            twincov_matrix* t = truth_of(it);
            double ise = 0.0, nise = 0.0;
            check(twincov_ise(est_m.get(), t, &ise, &nise));
            rows << rep << ',' << est << ',' << it.component << ',' << fmt(ise) << ',' << fmt(nise) << '\n';
            auto key = std::make_pair(est, std::string(it.component));
            auto slot = acc.find(key);
            if (slot == acc.end()) {
                twincov_accumulator* p = nullptr;
                check(twincov_accumulator_create(&p));
                slot = acc.emplace(key, Accumulator(p)).first;
                order.push_back(est + "\n" + it.component);
            }
            check(twincov_accumulator_add(slot->second.get(), est_m.get(), t));
        };
        for (const auto& it : matrices) score(it);
        for (const auto& it : fields) score(it);
    }
    std::ostringstream summary;
    summary << "estimator,component,bias2,variance,mise\n";
    for (const auto& k : order) {
        const auto cut = k.find('\n');
        const auto key = std::make_pair(k.substr(0, cut), k.substr(cut + 1));
        double b = 0, v = 0, m = 0;
        check(twincov_accumulator_result(acc.at(key).get(), &b, &v, &m, nullptr));
        summary << key.first << ',' << key.second << ',' << fmt(b) << ',' << fmt(v) << ',' << fmt(m) << '\n';
    }
    write_text_atomically((fs::path(a.out) / "replicates.csv").string(), rows.str());
    write_text_atomically((fs::path(a.out) / "summary.csv").string(), summary.str());
    log_line("evaluated " + std::to_string(a.fits.size()) + " fit(s) into " + a.out);
}

// ---------------------------------------------------------------- seedmap

struct SeedmapArgs {
    std::string cov;
    std::size_t vertex = 0;
    bool normalize = false;
    std::string fit;
    std::string component = "a";
    double theta = -1.0, phi = 0.0;
    int hemisphere = 0;
    std::string out = "seedmap.csv";
};

twincov_component parse_component(const std::string& c) {
    if (c == "a") return TWINCOV_COMPONENT_A;
    if (c == "c") return TWINCOV_COMPONENT_C;
    if (c == "eG" || c == "eg") return TWINCOV_COMPONENT_EG;
    usage_error("--component must be a, c or eG");
    return TWINCOV_COMPONENT_A;
}

void cmd_seedmap(const SeedmapArgs& a) {
    Matrix values;
    if (!a.cov.empty()) {
        if (a.vertex < 1) usage_error("--vertex is 1-based and required with --cov");
        Matrix cov = read_matrix(a.cov);
        twincov_matrix* p = nullptr;
        check(twincov_seed_map(cov.get(), a.vertex - 1, a.normalize ? 1 : 0, &p));
        values.reset(p);
    } else {
        if (a.fit.empty() || a.theta < 0.0) usage_error("give --cov and --vertex, or --fit with --theta and --phi");
        if (a.normalize) usage_error("--normalize needs a covariance matrix (--cov)");
        const fs::path dir(a.fit);
        const json meta = read_json((dir / "metadata.json").string());
        const json cov = read_json((dir / "covariance.json").string());
        if (!fs::exists(dir / "Z_a.mat")) usage_error("fit directory has no PSD-ACE factors");
        Domain domain = load_domain(meta.at("vertex_file").get<std::string>());
        Matrix za = read_matrix((dir / "Z_a.mat").string());
        Matrix zc = read_matrix((dir / "Z_c.mat").string());
        Matrix ze = read_matrix((dir / "Z_eG.mat").string());
        twincov_interp* ip = nullptr;
        check(twincov_interp_create(domain.get(), cov.at("bandwidth").get<double>(), za.get(), zc.get(), ze.get(),
                                    1e-4, 0, &ip));
        Interp f(ip);
        twincov_matrix* p = nullptr;
        check(twincov_interp_row(f.get(), parse_component(a.component), a.theta, a.phi, a.hemisphere, &p));
        values.reset(p);
    }
    check(twincov_seed_map_write(values.get(), a.out.c_str()));
    log_line("wrote " + a.out);
}

int report(const ApiError& e) {
    json line{{"error", twincov_status_name(e.status)}, {"message", e.message}};
    std::fprintf(stderr, "%s\n", line.dump().c_str());
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Twin-cohort covariance function estimation"};
    app.set_config("--config", "", "INI/TOML file of option values; command-line flags take precedence");
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(twincov_version()));

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "Simulate cohorts and write the truth");
    s->add_option("--vertices", sim.vertices, "Fibonacci grid size");
    s->add_option("--vertex-file", sim.vertex_file, "Use this vertex CSV instead of a Fibonacci grid");
    s->add_option("--n-mz", sim.n_mz, "MZ pairs");
    s->add_option("--n-dz", sim.n_dz, "DZ pairs");
    s->add_option("--n-singleton", sim.n_singleton, "Singletons");
    s->add_option("--seed", sim.seed, "Master seed");
    s->add_option("--replicates", sim.replicates, "Cohorts to draw")->check(CLI::PositiveNumber);
    s->add_option("--out", sim.out, "Output directory");

    FitArgs fit;
    auto* f = app.add_subcommand("fit", "Fit one estimator (runs every stage it depends on)");
    fit.cohort.add(f);
    fit.pipeline.add(f);
    f->add_option("--estimator", fit.estimator, "mle | mwle | smle | s-fsem | psd-fsem | s-sw | psd-sw | psd-ace")
        ->check(CLI::IsMember({"mle", "mwle", "smle", "s-fsem", "psd-fsem", "s-sw", "psd-sw", "psd-ace"}));
    f->add_option("--out", fit.out, "Output directory");
    f->add_option("--replicate", fit.replicate, "Replicate label recorded in the metadata");

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "ISE and bias/variance/MISE tables against a simulation truth");
    e->add_option("--truth", ev.truth, "Truth directory written by simulate")->required();
    e->add_option("--fit", ev.fits, "Fit output directories")->required();
    e->add_option("--out", ev.out, "Output directory");

    SeedmapArgs sm;
    auto* m = app.add_subcommand("seedmap", "One row of a covariance or correlation matrix");
    m->add_option("--cov", sm.cov, "Covariance MAT1");
    m->add_option("--vertex", sm.vertex, "Focal vertex, 1-based");
    m->add_flag("--normalize", sm.normalize, "Correlation instead of covariance");
    m->add_option("--fit", sm.fit, "PSD-ACE fit directory (covariance function at an arbitrary location)");
    m->add_option("--component", sm.component, "a | c | eG");
    m->add_option("--theta", sm.theta, "Polar angle of the focal location (radians)");
    m->add_option("--phi", sm.phi, "Azimuth of the focal location (radians)");
    m->add_option("--hemisphere", sm.hemisphere, "0 left, 1 right");
    m->add_option("--out", sm.out, "Output CSV");

    GcvArgs gcv;
    auto* g = app.add_subcommand("gcv-trace", "Bandwidth selection trace");
    gcv.cohort.add(g);
    gcv.pipeline.add(g);
    g->add_option("--which", gcv.which, "cov | sigma_g | mwle | smle_<field>");
    g->add_option("--out", gcv.out, "Output CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }
    try {
        if (*s) cmd_simulate(sim);
        else if (*f) cmd_fit(fit);
        else if (*e) cmd_evaluate(ev);
        else if (*m) cmd_seedmap(sm);
        else if (*g) cmd_gcv_trace(gcv);
    } catch (const ApiError& err) {
        return report(err);
    } catch (const std::exception& err) {
        return report({TWINCOV_E_INTERNAL, err.what()});
    }
    return 0;
}
