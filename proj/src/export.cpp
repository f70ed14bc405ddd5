#include "twincov/export.hpp"

#include "atomic_file.hpp"
#include "csv.hpp"
#include "twincov/error.hpp"
#include "twincov/matrix_io.hpp"

#include <json.hpp>

#include <filesystem>
#include <sstream>

namespace twincov {

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_json(const std::string& path, const ordered_json& j) {
    detail::write_file_atomically(path, j.dump(2) + "\n");
}

ordered_json trace_json(const GcvTrace& t) {
    return {{"selected", t.selected}, {"candidates", t.candidates}};
}

void write_fields(const ComponentFields& f, const std::string& dir, ordered_json& files) {
    write_mat1(join(dir, "beta.mat"), f.beta);
    write_mat1(join(dir, "sigma2_a.mat"), f.sigma2_a);
    write_mat1(join(dir, "sigma2_c.mat"), f.sigma2_c);
    write_mat1(join(dir, "sigma2_e.mat"), f.sigma2_e);
    files["beta"] = "beta.mat";
    files["sigma2_a"] = "sigma2_a.mat";
    files["sigma2_c"] = "sigma2_c.mat";
    files["sigma2_e"] = "sigma2_e.mat";
    if (f.sigma2_eL) {
        write_mat1(join(dir, "sigma2_eL.mat"), *f.sigma2_eL);
        files["sigma2_eL"] = "sigma2_eL.mat";
    }
    if (f.h2) {
        write_mat1(join(dir, "h2.mat"), *f.h2);
        files["h2"] = "h2.mat";
    }
}

}  // namespace

void write_convergence_csv(const ConvergenceReport& report, const std::string& path) {
    std::ostringstream out;
    out << "iter,grad_norm,lambda,objective\n";
    for (const auto& row : report.history) {
        out << row.iteration << ',' << detail::format_double(row.grad_norm) << ','
            << detail::format_double(row.learning_rate) << ',' << detail::format_double(row.objective) << '\n';
    }
    detail::write_file_atomically(path, out.str());
}

void write_gcv_trace(const GcvTrace& trace, const std::string& path) {
    std::ostringstream out;
    out << "h,gcv\n";
    for (std::size_t i = 0; i < trace.candidates.size(); ++i) {
        out << detail::format_double(trace.candidates[i]) << ',' << detail::format_double(trace.scores[i]) << '\n';
    }
    detail::write_file_atomically(path, out.str());
}

std::vector<std::string> trace_names(const PipelineResult& r) {
    std::vector<std::string> out;
    if (r.cov_trace) out.emplace_back("cov");
    if (r.sigma_g) out.emplace_back("sigma_g");
    if (r.mwle_cv) out.emplace_back("mwle");
    if (r.smle)
        for (const auto& [name, t] : r.smle->traces) out.push_back("smle_" + name);
    return out;
}

GcvTrace trace_by_name(const PipelineResult& r, const std::string& name) {
    if (name == "cov" && r.cov_trace) return *r.cov_trace;
    if (name == "sigma_g" && r.sigma_g) return r.sigma_g->trace;
    if (name == "mwle" && r.mwle_cv) {
        GcvTrace t;
        t.candidates = r.mwle_cv->candidates;
        t.scores = r.mwle_cv->heldout_loglik;
        t.selected = r.mwle_cv->selected;
        return t;
    }
    if (r.smle && name.rfind("smle_", 0) == 0) {
        for (const auto& [field, t] : r.smle->traces)
            if ("smle_" + field == name) return t;
    }
    fail(ErrorCode::InvalidArgument, "no GCV trace named '" + name + "' in this result");
}

void write_fit_outputs(const PipelineResult& r, const std::string& dir, const MetadataPairs& extra) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorCode::Io, "cannot create output directory '" + dir + "'");

    ordered_json meta;
    meta["estimator"] = to_string(r.target);
    for (const auto& [k, v] : extra) meta[k] = v;
    ordered_json files = ordered_json::object();

    const ComponentFields fields = r.fields_for(r.target);
    write_fields(fields, dir, files);
    meta["vertices"] = fields.n_vertices();
    meta["unconverged_vertices"] = fields.n_unconverged();
    if (r.target == Estimator::Mwle && r.mwle_cv) meta["mwle_bandwidth"] = r.mwle_cv->selected;

    ordered_json bw = ordered_json::object();
    for (const auto& name : trace_names(r)) {
        const GcvTrace t = trace_by_name(r, name);
        const std::string file = "gcv_" + name + ".csv";
        write_gcv_trace(t, join(dir, file));
        files["gcv_" + name] = file;
        bw[name] = trace_json(t);
    }
    meta["bandwidths"] = bw;

    if (is_covariance_estimator(r.target)) {
        const CovTriple& t = r.covariance_for(r.target);
        write_mat1(join(dir, "Sigma_a.mat"), t.sigma_a);
        write_mat1(join(dir, "Sigma_c.mat"), t.sigma_c);
        write_mat1(join(dir, "Sigma_eG.mat"), t.sigma_eG);
        files["Sigma_a"] = "Sigma_a.mat";
        files["Sigma_c"] = "Sigma_c.mat";
        files["Sigma_eG"] = "Sigma_eG.mat";
        ordered_json cov{{"tag", to_string(t.tag)},
                         {"bandwidth", t.bandwidth},
                         {"psd", t.tag != CovEstimator::SFsem && t.tag != CovEstimator::SSw},
                         {"sigma2_eL", "sigma2_eL.mat"},
                         {"files", {"Sigma_a.mat", "Sigma_c.mat", "Sigma_eG.mat"}}};
        write_json(join(dir, "covariance.json"), cov);
        files["covariance_sidecar"] = "covariance.json";
    }
    if (r.ranks) meta["ranks"] = {{"a", r.ranks->a}, {"c", r.ranks->c}, {"eG", r.ranks->eG}};
    if (r.rank_suggestion) {
        const auto& s = *r.rank_suggestion;
        meta["rank_suggestion"] = {{"a", s.rank.a}, {"c", s.rank.c}, {"eG", s.rank.eG}, {"structural", s.structural}};
    }
    if (r.target == Estimator::PsdAce && r.psd_ace) {
        const auto& fit = *r.psd_ace;
        const auto& rep = fit.report;
        write_convergence_csv(rep, join(dir, "convergence.csv"));
        files["convergence"] = "convergence.csv";
        if (fit.factors.za.size() > 0) {
            write_mat1(join(dir, "Z_a.mat"), fit.factors.za);
            write_mat1(join(dir, "Z_c.mat"), fit.factors.zc);
            write_mat1(join(dir, "Z_eG.mat"), fit.factors.zeG);
            files["Z_a"] = "Z_a.mat";
            files["Z_c"] = "Z_c.mat";
            files["Z_eG"] = "Z_eG.mat";
        }
        meta["convergence"] = {{"iterations", rep.iterations},     {"accepted", rep.accepted},
                               {"converged", rep.converged},       {"stalled", rep.stalled},
                               {"alpha0", rep.alpha0},             {"final_grad_norm", rep.final_grad_norm},
                               {"initial_objective", rep.initial_objective},
                               {"final_objective", rep.final_objective}};
        if (r.partition) {
            ordered_json parts = ordered_json::array();
            for (std::size_t i = 0; i < r.partition->partitions.size(); ++i) {
                const auto& pr = r.partition->reports[i];
                parts.push_back({{"size", r.partition->partitions[i].size()},
                                 {"bandwidth", r.partition->bandwidths[i]},
                                 {"iterations", pr.iterations},
                                 {"converged", pr.converged},
                                 {"initial_objective", pr.initial_objective},
                                 {"final_objective", pr.final_objective}});
            }
            meta["partitions"] = {{"count", r.partition->partitions.size()},
                                  {"clipped_negative_eigenvalues", r.partition->negative_eigenvalues},
                                  {"clipped_mass", r.partition->clipped_mass},
                                  {"fits", parts}};
        }
    }
    meta["warnings"] = r.warnings;
    meta["files"] = files;
    write_json(join(dir, "metadata.json"), meta);
}

void write_truth(const SimTruth& t, const std::string& dir) {
    write_mat1(join(dir, "Sigma_a.mat"), t.sigma_a);
    write_mat1(join(dir, "Sigma_c.mat"), t.sigma_c);
    write_mat1(join(dir, "Sigma_eG.mat"), t.sigma_eG);
    write_mat1(join(dir, "sigma2_a.mat"), t.sigma_a.diagonal());
    write_mat1(join(dir, "sigma2_c.mat"), t.sigma_c.diagonal());
    write_mat1(join(dir, "sigma2_e.mat"), t.sigma_eG.diagonal());
    write_mat1(join(dir, "sigma2_eL.mat"), t.sigma2_eL);
    write_mat1(join(dir, "h2.mat"), t.h2);
    write_mat1(join(dir, "basis.mat"), t.basis);
    ordered_json j{{"vertices", t.domain.size()},
                   {"alpha", {{"a", t.alpha_a}, {"c", t.alpha_c}, {"eG", t.alpha_eG}, {"eL", t.alpha_eL}}},
                   {"h2_mean", t.h2.mean()},
                   {"h2_min", t.h2.minCoeff()},
                   {"h2_max", t.h2.maxCoeff()}};
    write_json(join(dir, "truth.json"), j);
}

}  // namespace twincov
