#pragma once

#include "twincov/sphere_domain.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace twincov {

enum class FamilyKind { MZ, DZ, Singleton };

/// Label as written in the family file. Siblings are analysed as singletons
/// but keep their label so a saved cohort reloads identically.
enum class MemberLabel { MZ, DZ, Singleton, Sibling };

struct Family {
    std::string id;         // unique within the index
    std::string source_id;  // family_id column of the input file
    FamilyKind kind = FamilyKind::Singleton;
    MemberLabel label = MemberLabel::Singleton;
    std::vector<std::size_t> rows;  // canonical row indices
};

/// Family structure in canonical order: MZ pairs, then DZ pairs, then
/// singletons. Twin pair i of a kind occupies two consecutive rows.
class FamilyIndex {
public:
    FamilyIndex() = default;
    explicit FamilyIndex(std::vector<Family> families);

    /// Synthetic index with ids MZ0001.., DZ0001.., S0001...
    static FamilyIndex canonical(std::size_t n_mz, std::size_t n_dz, std::size_t n_singleton);

    [[nodiscard]] const std::vector<Family>& families() const noexcept { return families_; }
    [[nodiscard]] std::size_t n_mz() const noexcept { return n_mz_; }
    [[nodiscard]] std::size_t n_dz() const noexcept { return n_dz_; }
    [[nodiscard]] std::size_t n_singleton() const noexcept { return n_singleton_; }
    [[nodiscard]] std::size_t n_individuals() const noexcept { return 2 * (n_mz_ + n_dz_) + n_singleton_; }

    [[nodiscard]] std::vector<std::size_t> first_twin_rows(FamilyKind kind) const;
    [[nodiscard]] std::vector<std::size_t> second_twin_rows(FamilyKind kind) const;

    friend bool operator==(const FamilyIndex&, const FamilyIndex&);

private:
    std::vector<Family> families_;
    std::size_t n_mz_ = 0;
    std::size_t n_dz_ = 0;
    std::size_t n_singleton_ = 0;
};

bool operator==(const Family& a, const Family& b);

struct TwinCohort {
    Eigen::MatrixXd phenotype;  // N x V
    Eigen::MatrixXd design;     // N x p
    FamilyIndex families;
    std::vector<std::string> covariate_names;

    [[nodiscard]] std::size_t n_individuals() const noexcept { return static_cast<std::size_t>(phenotype.rows()); }
    [[nodiscard]] std::size_t n_vertices() const noexcept { return static_cast<std::size_t>(phenotype.cols()); }
    [[nodiscard]] std::size_t n_covariates() const noexcept { return static_cast<std::size_t>(design.cols()); }
};

/// Loads a cohort and reorders it canonically. The phenotype is MAT1; the
/// design is MAT1 or a CSV with a header of covariate names; the family file
/// is CSV `row_index,family_id,kind` with 1-based rows and kind in
/// {MZ, DZ, SINGLETON, SIB}.
[[nodiscard]] TwinCohort load_cohort(const std::string& phenotype_path, const std::string& design_path,
                                     const std::string& family_path, const VertexSet& domain);

void save_cohort(const TwinCohort& cohort, const std::string& phenotype_path, const std::string& design_path,
                 const std::string& family_path);

/// In-memory canonicalisation used by load_cohort. `records` are
/// (row, family_id, label) triples referencing rows of `phenotype`/`design`.
struct FamilyRecord {
    std::size_t row = 0;  // 0-based
    std::string family_id;
    MemberLabel label = MemberLabel::Singleton;
};
[[nodiscard]] TwinCohort canonicalize_cohort(const Eigen::MatrixXd& phenotype, const Eigen::MatrixXd& design,
                                             std::vector<std::string> covariate_names,
                                             const std::vector<FamilyRecord>& records);

enum class Severity { Warning, Error };

struct Diagnostic {
    Severity severity = Severity::Warning;
    std::string code;
    std::string message;
};

[[nodiscard]] std::vector<Diagnostic> validate_cohort(const TwinCohort& cohort);
[[nodiscard]] bool has_errors(const std::vector<Diagnostic>& diagnostics);

[[nodiscard]] const char* to_string(MemberLabel label);

}  // namespace twincov
