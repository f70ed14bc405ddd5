#include "twincov/twincov.h"

#include "twincov/covfun_eval.hpp"
#include "twincov/error.hpp"
#include "twincov/export.hpp"
#include "twincov/matrix_io.hpp"
#include "twincov/pipeline.hpp"
#include "twincov/sim_metrics.hpp"

#include "csv.hpp"

#include <json.hpp>
#include <omp.h>

#include <new>
#include <string>

struct twincov_matrix {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m;
};
struct twincov_domain {
    twincov::VertexSet set;
};
struct twincov_cohort {
    twincov::TwinCohort cohort;
};
struct twincov_truth {
    twincov::SimTruth truth;
};
struct twincov_config {
    twincov::PipelineConfig config;
};
struct twincov_result {
    twincov::PipelineResult result;
};
struct twincov_interp {
    twincov::InterpFactors factors;
    Eigen::MatrixXd at_vertices[3];
};
struct twincov_accumulator {
    twincov::MiseAccumulator acc;
};

namespace {

using namespace twincov;

thread_local std::string g_last_error;
int g_default_threads = 0;

twincov_status map_code(ErrorCode c) {
    switch (c) {
        case ErrorCode::InvalidArgument: return TWINCOV_E_INVALID_ARGUMENT;
        case ErrorCode::InvalidBandwidth: return TWINCOV_E_INVALID_BANDWIDTH;
        case ErrorCode::DimensionMismatch: return TWINCOV_E_DIMENSION;
        case ErrorCode::Io: return TWINCOV_E_IO;
        case ErrorCode::Parse: return TWINCOV_E_PARSE;
        case ErrorCode::Unidentifiable: return TWINCOV_E_UNIDENTIFIABLE;
        case ErrorCode::Numerical: return TWINCOV_E_NUMERICAL;
    }
    return TWINCOV_E_INTERNAL;
}

template <class F>
twincov_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return TWINCOV_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return map_code(e.code());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return TWINCOV_E_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return TWINCOV_E_INTERNAL;
    }
}

template <class T>
const T& deref(const T* p, const char* what) {
    require(p != nullptr, ErrorCode::InvalidArgument, std::string(what) + " is null");
    return *p;
}

void need_out(const void* p) { require(p != nullptr, ErrorCode::InvalidArgument, "output pointer is null"); }

twincov_matrix* wrap(const Eigen::MatrixXd& m) {
    auto* out = new twincov_matrix;
    out->m = m;
    return out;
}

Eigen::MatrixXd unwrap(const twincov_matrix* p, const char* what) { return deref(p, what).m; }

Component component_of(twincov_component c) {
    switch (c) {
        case TWINCOV_COMPONENT_A: return Component::A;
        case TWINCOV_COMPONENT_C: return Component::C;
        case TWINCOV_COMPONENT_EG: return Component::EG;
    }
    fail(ErrorCode::InvalidArgument, "unknown component");
}

Vertex vertex_of(double theta, double phi, int hemisphere) {
    require(hemisphere == 0 || hemisphere == 1, ErrorCode::InvalidArgument,
            "unknown hemisphere label " + std::to_string(hemisphere));
    return {theta, phi, hemisphere == 0 ? Hemisphere::Left : Hemisphere::Right};
}

std::vector<double> parse_list(const std::string& v, const std::string& key) {
    std::vector<double> out;
    if (detail::trim(v).empty()) return out;
    for (const auto& part : detail::split_csv_line(v)) out.push_back(detail::parse_double(part, key));
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    fail(ErrorCode::Parse, key + ": expected a boolean, got '" + v + "'");
}

long long parse_nonneg(const std::string& v, const std::string& key) {
    const long long x = detail::parse_int(v, key);
    require(x >= 0, ErrorCode::InvalidArgument, key + " must be nonnegative");
    return x;
}

void set_key(PipelineConfig& c, const std::string& key, const std::string& value) {
    if (key == "smooth_bandwidths") c.smooth_bandwidths = parse_list(value, key);
    else if (key == "cov_bandwidths") c.cov_bandwidths = parse_list(value, key);
    else if (key == "mwle_bandwidths") c.mwle_bandwidths = parse_list(value, key);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_nonneg(value, key));
    else if (key == "run_mwle") c.run_mwle = parse_bool(value, key);
    else if (key == "sigma_g_criterion") {
        if (value == "gcv") c.sigma_g_criterion = SigmaGCriterion::Gcv;
        else if (value == "raw") c.sigma_g_criterion = SigmaGCriterion::Raw;
        else fail(ErrorCode::Parse, "sigma_g_criterion must be gcv or raw");
    } else if (key == "ranks") {
        if (value == "auto" || value.empty()) {
            c.ranks.reset();
        } else {
            const auto parts = detail::split_csv_line(value);
            require(parts.size() == 3, ErrorCode::Parse, "ranks must be 'auto' or three integers a,c,eG");
            c.ranks = RankSpec{static_cast<Eigen::Index>(detail::parse_int(parts[0], key)),
                               static_cast<Eigen::Index>(detail::parse_int(parts[1], key)),
                               static_cast<Eigen::Index>(detail::parse_int(parts[2], key))};
        }
    } else if (key == "tolerance") c.descent.tolerance = detail::parse_double(value, key);
    else if (key == "learning_rate") c.descent.learning_rate = detail::parse_double(value, key);
    else if (key == "max_iterations") c.descent.max_iterations = static_cast<int>(parse_nonneg(value, key));
    else if (key == "guard_objective") c.descent.guard_objective = parse_bool(value, key);
    else if (key == "partitions") c.partitions = static_cast<std::size_t>(parse_nonneg(value, key));
    else if (key == "overlap_stride") c.overlap_stride = static_cast<std::size_t>(parse_nonneg(value, key));
    else if (key == "inverse_threshold") c.inverse_threshold = detail::parse_double(value, key);
    else if (key == "inverse_mode") {
        if (value == "absolute") c.inverse_mode = ThresholdMode::Absolute;
        else if (value == "relative") c.inverse_mode = ThresholdMode::Relative;
        else fail(ErrorCode::Parse, "inverse_mode must be absolute or relative");
    } else if (key == "eigen_method") {
        if (value == "auto") c.eigen_method = EigenMethod::Auto;
        else if (value == "dense") c.eigen_method = EigenMethod::Dense;
        else if (value == "subspace") c.eigen_method = EigenMethod::Subspace;
        else fail(ErrorCode::Parse, "eigen_method must be auto, dense or subspace");
    } else if (key == "mle_max_iterations") c.mle.max_iterations = static_cast<int>(parse_nonneg(value, key));
    else fail(ErrorCode::InvalidArgument, "unknown configuration key '" + key + "'");
}

}  // namespace

extern "C" {

const char* twincov_version(void) { return "0.1.0"; }

const char* twincov_status_name(twincov_status s) {
    switch (s) {
        case TWINCOV_OK: return "ok";
        case TWINCOV_E_INVALID_ARGUMENT: return "invalid_argument";
        case TWINCOV_E_INVALID_BANDWIDTH: return "invalid_bandwidth";
        case TWINCOV_E_DIMENSION: return "dimension_mismatch";
        case TWINCOV_E_IO: return "io";
        case TWINCOV_E_PARSE: return "parse";
        case TWINCOV_E_UNIDENTIFIABLE: return "unidentifiable";
        case TWINCOV_E_NUMERICAL: return "numerical";
        case TWINCOV_E_INTERNAL: return "internal";
    }
    return "unknown";
}

const char* twincov_last_error(void) { return g_last_error.c_str(); }

void twincov_set_threads(int threads) {
    if (g_default_threads == 0) g_default_threads = omp_get_max_threads();
    omp_set_num_threads(threads >= 1 ? threads : g_default_threads);
}

twincov_status twincov_matrix_create(size_t rows, size_t cols, const double* data, twincov_matrix** out) {
    return guarded([&] {
        need_out(out);
        require(data != nullptr || rows * cols == 0, ErrorCode::InvalidArgument, "matrix data is null");
        auto* m = new twincov_matrix;
        m->m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        std::copy(data, data + rows * cols, m->m.data());
        *out = m;
    });
}

twincov_status twincov_matrix_read(const char* path, twincov_matrix** out) {
    return guarded([&] {
        need_out(out);
        *out = wrap(read_mat1(&deref(path, "path")));
    });
}

twincov_status twincov_matrix_write(const twincov_matrix* m, const char* path) {
    return guarded([&] { write_mat1(&deref(path, "path"), unwrap(m, "matrix")); });
}

size_t twincov_matrix_rows(const twincov_matrix* m) { return m ? static_cast<size_t>(m->m.rows()) : 0; }
size_t twincov_matrix_cols(const twincov_matrix* m) { return m ? static_cast<size_t>(m->m.cols()) : 0; }
const double* twincov_matrix_data(const twincov_matrix* m) { return m ? m->m.data() : nullptr; }
void twincov_matrix_free(twincov_matrix* m) { delete m; }

twincov_status twincov_domain_fibonacci(size_t count, twincov_domain** out) {
    return guarded([&] {
        need_out(out);
        require(count >= 3, ErrorCode::InvalidArgument, "a domain needs at least 3 vertices");
        *out = new twincov_domain{fibonacci_sphere(count)};
    });
}

twincov_status twincov_domain_load(const char* path, twincov_domain** out) {
    return guarded([&] {
        need_out(out);
        *out = new twincov_domain{load_vertices(&deref(path, "path"))};
    });
}

twincov_status twincov_domain_save(const twincov_domain* d, const char* path) {
    return guarded([&] { save_vertices(deref(d, "domain").set, &deref(path, "path")); });
}

size_t twincov_domain_size(const twincov_domain* d) { return d ? d->set.size() : 0; }
void twincov_domain_free(twincov_domain* d) { delete d; }

twincov_status twincov_cohort_load(const char* phenotype, const char* design, const char* families,
                                   const twincov_domain* domain, twincov_cohort** out) {
    return guarded([&] {
        need_out(out);
        *out = new twincov_cohort{load_cohort(&deref(phenotype, "phenotype path"), &deref(design, "design path"),
                                              &deref(families, "family path"), deref(domain, "domain").set)};
    });
}

twincov_status twincov_cohort_save(const twincov_cohort* c, const char* phenotype, const char* design,
                                   const char* families) {
    return guarded([&] {
        save_cohort(deref(c, "cohort").cohort, &deref(phenotype, "phenotype path"), &deref(design, "design path"),
                    &deref(families, "family path"));
    });
}

twincov_status twincov_cohort_counts(const twincov_cohort* c, size_t* n_mz, size_t* n_dz, size_t* n_singleton,
                                     size_t* n_vertices) {
    return guarded([&] {
        const TwinCohort& t = deref(c, "cohort").cohort;
        if (n_mz) *n_mz = t.families.n_mz();
        if (n_dz) *n_dz = t.families.n_dz();
        if (n_singleton) *n_singleton = t.families.n_singleton();
        if (n_vertices) *n_vertices = t.n_vertices();
    });
}

void twincov_cohort_free(twincov_cohort* c) { delete c; }

twincov_status twincov_truth_build(const twincov_domain* domain, twincov_truth** out) {
    return guarded([&] {
        need_out(out);
        *out = new twincov_truth{build_truth(deref(domain, "domain").set)};
    });
}

twincov_status twincov_truth_write(const twincov_truth* t, const char* dir) {
    return guarded([&] { write_truth(deref(t, "truth").truth, &deref(dir, "directory")); });
}

twincov_status twincov_truth_simulate(const twincov_truth* t, size_t n_mz, size_t n_dz, size_t n_singleton,
                                      uint64_t seed, twincov_cohort** out) {
    return guarded([&] {
        need_out(out);
        *out = new twincov_cohort{simulate_cohort(deref(t, "truth").truth, n_mz, n_dz, n_singleton, seed)};
    });
}

void twincov_truth_free(twincov_truth* t) { delete t; }

uint64_t twincov_replicate_seed(uint64_t master, uint64_t replicate) { return replicate_seed(master, replicate); }

twincov_status twincov_config_create(twincov_config** out) {
    return guarded([&] {
        need_out(out);
        *out = new twincov_config;
    });
}

twincov_status twincov_config_set(twincov_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        require(cfg != nullptr, ErrorCode::InvalidArgument, "config is null");
        set_key(cfg->config, &deref(key, "key"), value ? value : "");
    });
}

twincov_status twincov_config_validate(const twincov_config* cfg) {
    return guarded([&] { deref(cfg, "config").config.validate(); });
}

void twincov_config_free(twincov_config* cfg) { delete cfg; }

twincov_status twincov_fit(const twincov_cohort* c, const twincov_domain* d, const twincov_config* cfg,
                           const char* estimator, twincov_result** out) {
    return guarded([&] {
        need_out(out);
        const Estimator e = parse_estimator(&deref(estimator, "estimator"));
        auto* r = new twincov_result;
        try {
            r->result = run_pipeline(deref(c, "cohort").cohort, deref(d, "domain").set, deref(cfg, "config").config, e);
        } catch (...) {
            delete r;
            throw;
        }
        *out = r;
    });
}

twincov_status twincov_result_write(const twincov_result* r, const char* dir, const char* extra_json) {
    return guarded([&] {
        MetadataPairs extra;
        if (extra_json != nullptr && *extra_json != '\0') {
            nlohmann::ordered_json j;
            try {
                j = nlohmann::ordered_json::parse(extra_json);
            } catch (const std::exception& ex) {
                fail(ErrorCode::Parse, std::string("extra metadata is not JSON: ") + ex.what());
            }
            require(j.is_object(), ErrorCode::Parse, "extra metadata must be a JSON object");
            for (const auto& [k, v] : j.items()) extra.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
        }
        write_fit_outputs(deref(r, "result").result, &deref(dir, "directory"), extra);
    });
}

twincov_status twincov_result_field(const twincov_result* r, const char* name, twincov_matrix** out) {
    return guarded([&] {
        need_out(out);
        const PipelineResult& res = deref(r, "result").result;
        const ComponentFields f = res.fields_for(res.target);
        const std::string n = &deref(name, "name");
        if (n == "beta") *out = wrap(f.beta);
        else if (n == "sigma2_a") *out = wrap(f.sigma2_a);
        else if (n == "sigma2_c") *out = wrap(f.sigma2_c);
        else if (n == "sigma2_e") *out = wrap(f.sigma2_e);
        else if (n == "sigma2_eL") {
            require(f.sigma2_eL.has_value(), ErrorCode::InvalidArgument, "estimator has no measurement-error field");
            *out = wrap(*f.sigma2_eL);
        } else if (n == "h2") *out = wrap(*f.h2);
        else fail(ErrorCode::InvalidArgument, "unknown field '" + n + "'");
    });
}

twincov_status twincov_result_covariance(const twincov_result* r, twincov_component c, twincov_matrix** out) {
    return guarded([&] {
        need_out(out);
        const PipelineResult& res = deref(r, "result").result;
        const CovTriple& t = res.covariance_for(res.target);
        switch (component_of(c)) {
            case Component::A: *out = wrap(t.sigma_a); break;
            case Component::C: *out = wrap(t.sigma_c); break;
            case Component::EG: *out = wrap(t.sigma_eG); break;
        }
    });
}

twincov_status twincov_result_convergence(const twincov_result* r, twincov_matrix** out) {
    return guarded([&] {
        need_out(out);
        const PipelineResult& res = deref(r, "result").result;
        require(res.psd_ace.has_value(), ErrorCode::InvalidArgument, "PSD-ACE was not run");
        const auto& h = res.psd_ace->report.history;
        Eigen::MatrixXd m(static_cast<Eigen::Index>(h.size()), 4);
        for (std::size_t i = 0; i < h.size(); ++i) {
            m.row(static_cast<Eigen::Index>(i)) << h[i].iteration, h[i].grad_norm, h[i].learning_rate, h[i].objective;
        }
        *out = wrap(m);
    });
}

twincov_status twincov_result_objectives(const twincov_result* r, double* initial, double* final_value) {
    return guarded([&] {
        const PipelineResult& res = deref(r, "result").result;
        require(res.psd_ace.has_value(), ErrorCode::InvalidArgument, "PSD-ACE was not run");
        if (initial) *initial = res.psd_ace->report.initial_objective;
        if (final_value) *final_value = res.psd_ace->report.final_objective;
    });
}

twincov_status twincov_result_trace(const twincov_result* r, const char* name, twincov_matrix** out) {
    return guarded([&] {
        need_out(out);
        const GcvTrace t = trace_by_name(deref(r, "result").result, &deref(name, "name"));
        Eigen::MatrixXd m(static_cast<Eigen::Index>(t.candidates.size()), 2);
        for (std::size_t i = 0; i < t.candidates.size(); ++i) {
            m(static_cast<Eigen::Index>(i), 0) = t.candidates[i];
            m(static_cast<Eigen::Index>(i), 1) = t.scores[i];
        }
        *out = wrap(m);
    });
}

size_t twincov_result_warning_count(const twincov_result* r) { return r ? r->result.warnings.size() : 0; }

const char* twincov_result_warning(const twincov_result* r, size_t i) {
    if (r == nullptr || i >= r->result.warnings.size()) return nullptr;
    return r->result.warnings[i].c_str();
}

size_t twincov_result_timing_count(const twincov_result* r) { return r ? r->result.timings.size() : 0; }

twincov_status twincov_result_timing(const twincov_result* r, size_t i, const char** step, double* seconds) {
    return guarded([&] {
        const auto& t = deref(r, "result").result.timings;
        require(i < t.size(), ErrorCode::InvalidArgument, "timing index out of range");
        if (step) *step = t[i].step.c_str();
        if (seconds) *seconds = t[i].seconds;
    });
}

void twincov_result_free(twincov_result* r) { delete r; }

twincov_status twincov_interp_create(const twincov_domain* d, double bandwidth, const twincov_matrix* za,
                                     const twincov_matrix* zc, const twincov_matrix* zeg, double threshold,
                                     int relative_threshold, twincov_interp** out) {
    return guarded([&] {
        need_out(out);
        const VertexSet& dom = deref(d, "domain").set;
        const CovFactorization z{unwrap(za, "Z_a"), unwrap(zc, "Z_c"), unwrap(zeg, "Z_eG")};
        const KernelOperator k = build_kernel(dom, bandwidth);
        auto* f = new twincov_interp;
        try {
            f->factors = make_interp_factors(z, dom, k, threshold,
                                             relative_threshold ? ThresholdMode::Relative : ThresholdMode::Absolute);
            for (Component c : {Component::A, Component::C, Component::EG})
                f->at_vertices[static_cast<int>(c)] = interpolate_factor(f->factors, c, dom.vertices());
        } catch (...) {
            delete f;
            throw;
        }
        *out = f;
    });
}

twincov_status twincov_interp_evaluate(const twincov_interp* f, twincov_component c, double theta1, double phi1,
                                       int hemisphere1, double theta2, double phi2, int hemisphere2, double* out) {
    return guarded([&] {
        need_out(out);
        *out = evaluate_covariance(deref(f, "interpolant").factors, component_of(c),
                                   vertex_of(theta1, phi1, hemisphere1), vertex_of(theta2, phi2, hemisphere2));
    });
}

twincov_status twincov_interp_row(const twincov_interp* f, twincov_component c, double theta, double phi,
                                  int hemisphere, twincov_matrix** out) {
    return guarded([&] {
        need_out(out);
        const twincov_interp& in = deref(f, "interpolant");
        const Component comp = component_of(c);
        const Vertex x = vertex_of(theta, phi, hemisphere);
        const Eigen::MatrixXd fx = interpolate_factor(in.factors, comp, std::span<const Vertex>(&x, 1));
        *out = wrap(in.at_vertices[static_cast<int>(comp)] * fx.transpose());
    });
}

void twincov_interp_free(twincov_interp* f) { delete f; }

twincov_status twincov_seed_map(const twincov_matrix* cov, size_t vertex, int correlation, twincov_matrix** out) {
    return guarded([&] {
        need_out(out);
        *out = wrap(seed_map(unwrap(cov, "covariance"), vertex, correlation != 0));
    });
}

twincov_status twincov_seed_map_write(const twincov_matrix* values, const char* path) {
    return guarded([&] {
        const Eigen::MatrixXd v = unwrap(values, "values");
        require(v.cols() == 1, ErrorCode::DimensionMismatch, "seed map must be a column vector");
        write_seed_map(&deref(path, "path"), v.col(0));
    });
}

twincov_status twincov_ise(const twincov_matrix* estimate, const twincov_matrix* truth, double* ise_out,
                           double* normalized) {
    return guarded([&] {
        const Eigen::MatrixXd e = unwrap(estimate, "estimate");
        const Eigen::MatrixXd t = unwrap(truth, "truth");
        if (ise_out) *ise_out = ise(e, t);
        if (normalized) *normalized = normalized_ise(e, t);
    });
}

twincov_status twincov_heritability(const twincov_matrix* a, const twincov_matrix* c, const twincov_matrix* e,
                                    twincov_matrix** out, size_t* zero_denominators) {
    return guarded([&] {
        need_out(out);
        auto vec = [](const twincov_matrix* m, const char* what) {
            const Eigen::MatrixXd x = unwrap(m, what);
            require(x.cols() == 1, ErrorCode::DimensionMismatch, std::string(what) + " must be a column vector");
            return Eigen::VectorXd(x.col(0));
        };
        std::size_t zeros = 0;
        *out = wrap(heritability(vec(a, "sigma2_a"), vec(c, "sigma2_c"), vec(e, "sigma2_e"), &zeros));
        if (zero_denominators) *zero_denominators = zeros;
    });
}

twincov_status twincov_accumulator_create(twincov_accumulator** out) {
    return guarded([&] {
        need_out(out);
        *out = new twincov_accumulator;
    });
}

twincov_status twincov_accumulator_add(twincov_accumulator* acc, const twincov_matrix* estimate,
                                       const twincov_matrix* truth) {
    return guarded([&] {
        require(acc != nullptr, ErrorCode::InvalidArgument, "accumulator is null");
        acc->acc.add(unwrap(estimate, "estimate"), unwrap(truth, "truth"));
    });
}

twincov_status twincov_accumulator_result(const twincov_accumulator* acc, double* bias2, double* variance,
                                          double* mise_out, size_t* replicates) {
    return guarded([&] {
        const BiasVariance bv = deref(acc, "accumulator").acc.result();
        if (bias2) *bias2 = bv.bias2;
        if (variance) *variance = bv.variance;
        if (mise_out) *mise_out = bv.mise;
        if (replicates) *replicates = bv.replicates;
    });
}

void twincov_accumulator_free(twincov_accumulator* acc) { delete acc; }

}  // extern "C"
