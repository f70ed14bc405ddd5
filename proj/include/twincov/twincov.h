#ifndef TWINCOV_TWINCOV_H
#define TWINCOV_TWINCOV_H

/* C interface to the twincov library. Every object is an opaque handle owned
 * by the caller and released with its *_free function (NULL is accepted).
 * Functions returning twincov_status leave a message retrievable with
 * twincov_last_error() on the calling thread when they fail. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TWINCOV_API __declspec(dllexport)
#else
#define TWINCOV_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum twincov_status {
    TWINCOV_OK = 0,
    TWINCOV_E_INVALID_ARGUMENT = 1,
    TWINCOV_E_INVALID_BANDWIDTH = 2,
    TWINCOV_E_DIMENSION = 3,
    TWINCOV_E_IO = 4,
    TWINCOV_E_PARSE = 5,
    TWINCOV_E_UNIDENTIFIABLE = 6,
    TWINCOV_E_NUMERICAL = 7,
    TWINCOV_E_INTERNAL = 8
} twincov_status;

typedef enum twincov_component {
    TWINCOV_COMPONENT_A = 0,
    TWINCOV_COMPONENT_C = 1,
    TWINCOV_COMPONENT_EG = 2
} twincov_component;

typedef struct twincov_matrix twincov_matrix;
typedef struct twincov_domain twincov_domain;
typedef struct twincov_cohort twincov_cohort;
typedef struct twincov_truth twincov_truth;
typedef struct twincov_config twincov_config;
typedef struct twincov_result twincov_result;
typedef struct twincov_interp twincov_interp;
typedef struct twincov_accumulator twincov_accumulator;

TWINCOV_API const char* twincov_version(void);
TWINCOV_API const char* twincov_status_name(twincov_status status);
/* Message of the most recent failure on this thread, "" if none. */
TWINCOV_API const char* twincov_last_error(void);
/* Worker threads for parallel sections; values < 1 restore the default. */
TWINCOV_API void twincov_set_threads(int threads);

/* Dense matrices, row-major. Vectors are n x 1. */
TWINCOV_API twincov_status twincov_matrix_create(size_t rows, size_t cols, const double* row_major,
                                                 twincov_matrix** out);
TWINCOV_API twincov_status twincov_matrix_read(const char* path, twincov_matrix** out);
TWINCOV_API twincov_status twincov_matrix_write(const twincov_matrix* m, const char* path);
TWINCOV_API size_t twincov_matrix_rows(const twincov_matrix* m);
TWINCOV_API size_t twincov_matrix_cols(const twincov_matrix* m);
TWINCOV_API const double* twincov_matrix_data(const twincov_matrix* m);
TWINCOV_API void twincov_matrix_free(twincov_matrix* m);

/* Vertex sets. Vertex CSV: index,theta,phi,hemisphere with 1-based index,
 * angles in radians and hemisphere L or R. */
TWINCOV_API twincov_status twincov_domain_fibonacci(size_t count, twincov_domain** out);
TWINCOV_API twincov_status twincov_domain_load(const char* path, twincov_domain** out);
TWINCOV_API twincov_status twincov_domain_save(const twincov_domain* d, const char* path);
TWINCOV_API size_t twincov_domain_size(const twincov_domain* d);
TWINCOV_API void twincov_domain_free(twincov_domain* d);

/* Cohorts: MAT1 phenotype, MAT1 or CSV design, family CSV. */
TWINCOV_API twincov_status twincov_cohort_load(const char* phenotype, const char* design, const char* families,
                                               const twincov_domain* domain, twincov_cohort** out);
TWINCOV_API twincov_status twincov_cohort_save(const twincov_cohort* c, const char* phenotype, const char* design,
                                               const char* families);
TWINCOV_API twincov_status twincov_cohort_counts(const twincov_cohort* c, size_t* n_mz, size_t* n_dz,
                                                 size_t* n_singleton, size_t* n_vertices);
TWINCOV_API void twincov_cohort_free(twincov_cohort* c);

/* Simulation truth on a single-sphere domain with the default targets. */
TWINCOV_API twincov_status twincov_truth_build(const twincov_domain* domain, twincov_truth** out);
TWINCOV_API twincov_status twincov_truth_write(const twincov_truth* t, const char* dir);
TWINCOV_API twincov_status twincov_truth_simulate(const twincov_truth* t, size_t n_mz, size_t n_dz,
                                                  size_t n_singleton, uint64_t seed, twincov_cohort** out);
TWINCOV_API void twincov_truth_free(twincov_truth* t);
TWINCOV_API uint64_t twincov_replicate_seed(uint64_t master, uint64_t replicate);

/* Pipeline configuration as key/value strings. Keys: smooth_bandwidths,
 * cov_bandwidths, mwle_bandwidths (comma lists in degrees, "" = default),
 * seed, run_mwle, sigma_g_criterion (gcv|raw), ranks (auto | a,c,eG),
 * tolerance, learning_rate, max_iterations, guard_objective, partitions,
 * overlap_stride, inverse_threshold, inverse_mode (absolute|relative),
 * eigen_method (auto|dense|subspace), mle_max_iterations. */
TWINCOV_API twincov_status twincov_config_create(twincov_config** out);
TWINCOV_API twincov_status twincov_config_set(twincov_config* cfg, const char* key, const char* value);
TWINCOV_API twincov_status twincov_config_validate(const twincov_config* cfg);
TWINCOV_API void twincov_config_free(twincov_config* cfg);

/* Runs the estimation pipeline up to `estimator` (mle, mwle, smle, s-fsem, psd-fsem, s-sw,
 * psd-sw, psd-ace). */
TWINCOV_API twincov_status twincov_fit(const twincov_cohort* c, const twincov_domain* d, const twincov_config* cfg,
                                       const char* estimator, twincov_result** out);
/* Writes the target estimator's outputs into `dir`. `extra_json` may be NULL
 * or a flat JSON object of strings merged into metadata.json. */
TWINCOV_API twincov_status twincov_result_write(const twincov_result* r, const char* dir, const char* extra_json);
/* beta | sigma2_a | sigma2_c | sigma2_e | sigma2_eL | h2 of the target. */
TWINCOV_API twincov_status twincov_result_field(const twincov_result* r, const char* name, twincov_matrix** out);
TWINCOV_API twincov_status twincov_result_covariance(const twincov_result* r, twincov_component c,
                                                     twincov_matrix** out);
/* Rows (iter, grad_norm, lambda, objective) of the PSD-ACE descent. */
TWINCOV_API twincov_status twincov_result_convergence(const twincov_result* r, twincov_matrix** out);
TWINCOV_API twincov_status twincov_result_objectives(const twincov_result* r, double* initial, double* final_value);
/* Trace names: cov, sigma_g, mwle, smle_<field>. Rows (h, score). */
TWINCOV_API twincov_status twincov_result_trace(const twincov_result* r, const char* name, twincov_matrix** out);
TWINCOV_API size_t twincov_result_warning_count(const twincov_result* r);
TWINCOV_API const char* twincov_result_warning(const twincov_result* r, size_t i);
TWINCOV_API size_t twincov_result_timing_count(const twincov_result* r);
TWINCOV_API twincov_status twincov_result_timing(const twincov_result* r, size_t i, const char** step,
                                                 double* seconds);
TWINCOV_API void twincov_result_free(twincov_result* r);

/* Continuous covariance functions from fitted factors (V x d each). */
TWINCOV_API twincov_status twincov_interp_create(const twincov_domain* d, double bandwidth, const twincov_matrix* za,
                                                 const twincov_matrix* zc, const twincov_matrix* zeg,
                                                 double threshold, int relative_threshold, twincov_interp** out);
TWINCOV_API twincov_status twincov_interp_evaluate(const twincov_interp* f, twincov_component c, double theta1,
                                                   double phi1, int hemisphere1, double theta2, double phi2,
                                                   int hemisphere2, double* out);
/* Covariance between one location and every vertex of the source domain. */
TWINCOV_API twincov_status twincov_interp_row(const twincov_interp* f, twincov_component c, double theta,
                                              double phi, int hemisphere, twincov_matrix** out);
TWINCOV_API void twincov_interp_free(twincov_interp* f);

/* Row `vertex` (0-based) of a covariance matrix, or of its correlation matrix. */
TWINCOV_API twincov_status twincov_seed_map(const twincov_matrix* cov, size_t vertex, int correlation,
                                            twincov_matrix** out);
/* CSV vertex_index,value with 1-based indices. */
TWINCOV_API twincov_status twincov_seed_map_write(const twincov_matrix* values, const char* path);

/* Metrics. ISE averages over entries; the normalized form divides by the
 * mean square of the truth. */
TWINCOV_API twincov_status twincov_ise(const twincov_matrix* estimate, const twincov_matrix* truth, double* ise,
                                       double* normalized);
TWINCOV_API twincov_status twincov_heritability(const twincov_matrix* a, const twincov_matrix* c,
                                                const twincov_matrix* e, twincov_matrix** out,
                                                size_t* zero_denominators);
TWINCOV_API twincov_status twincov_accumulator_create(twincov_accumulator** out);
TWINCOV_API twincov_status twincov_accumulator_add(twincov_accumulator* acc, const twincov_matrix* estimate,
                                                   const twincov_matrix* truth);
TWINCOV_API twincov_status twincov_accumulator_result(const twincov_accumulator* acc, double* bias2,
                                                      double* variance, double* mise, size_t* replicates);
TWINCOV_API void twincov_accumulator_free(twincov_accumulator* acc);

#ifdef __cplusplus
}
#endif

#endif
