#pragma once

#include "twincov/pipeline.hpp"
#include "twincov/sim_metrics.hpp"

#include <string>
#include <utility>
#include <vector>

namespace twincov {

using MetadataPairs = std::vector<std::pair<std::string, std::string>>;

/// Everything a fit produced for its target estimator, written atomically
/// into `dir`: field and covariance MAT1 files, factors, GCV traces, the
/// convergence CSV and a `metadata.json` sidecar. Wall-clock timings are not
/// written so that reruns give byte-identical files.
void write_fit_outputs(const PipelineResult& result, const std::string& dir, const MetadataPairs& extra = {});

/// Truth matrices and fields of a simulation as MAT1 plus `truth.json`.
void write_truth(const SimTruth& truth, const std::string& dir);

/// `iter,grad_norm,lambda,objective`, one row per accepted iterate.
void write_convergence_csv(const ConvergenceReport& report, const std::string& path);
/// `h,gcv`; MWLE traces carry the held-out log-likelihood in the second column.
void write_gcv_trace(const GcvTrace& trace, const std::string& path);

/// Names of the GCV traces a result carries: cov, sigma_g, mwle and one per SMLE field.
[[nodiscard]] std::vector<std::string> trace_names(const PipelineResult& result);
[[nodiscard]] GcvTrace trace_by_name(const PipelineResult& result, const std::string& name);

}  // namespace twincov
