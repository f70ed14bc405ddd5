#include "twincov/cohort.hpp"

#include "atomic_file.hpp"
#include "csv.hpp"
#include "twincov/error.hpp"
#include "twincov/matrix_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace twincov {

namespace {

std::string padded(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
    return buf;
}

MemberLabel parse_label(const std::string& s, const std::string& context) {
    if (s == "MZ") return MemberLabel::MZ;
    if (s == "DZ") return MemberLabel::DZ;
    if (s == "SINGLETON") return MemberLabel::Singleton;
    if (s == "SIB") return MemberLabel::Sibling;
    fail(ErrorCode::Parse, context + ": unknown family kind '" + s + "'");
}

// Orders members of one family by their data so that the canonical cohort does
// not depend on the order rows appeared in the input files.
bool data_less(const Eigen::MatrixXd& y, const Eigen::MatrixXd& x, std::size_t a, std::size_t b) {
    const auto ra = static_cast<Eigen::Index>(a);
    const auto rb = static_cast<Eigen::Index>(b);
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
        if (y(ra, c) != y(rb, c)) return y(ra, c) < y(rb, c);
    }
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        if (x(ra, c) != x(rb, c)) return x(ra, c) < x(rb, c);
    }
    return false;
}

void require_finite(const Eigen::MatrixXd& m, const std::string& what) {
    if (!m.allFinite()) fail(ErrorCode::InvalidArgument, what + " contains NaN or infinite values");
}

}  // namespace

const char* to_string(MemberLabel label) {
    switch (label) {
        case MemberLabel::MZ: return "MZ";
        case MemberLabel::DZ: return "DZ";
        case MemberLabel::Singleton: return "SINGLETON";
        case MemberLabel::Sibling: return "SIB";
    }
    return "?";
}

bool operator==(const Family& a, const Family& b) {
    return a.id == b.id && a.source_id == b.source_id && a.kind == b.kind && a.label == b.label && a.rows == b.rows;
}

bool operator==(const FamilyIndex& a, const FamilyIndex& b) { return a.families_ == b.families_; }

FamilyIndex::FamilyIndex(std::vector<Family> families) : families_(std::move(families)) {
    std::size_t expected_row = 0;
    int phase = 0;  // 0: MZ, 1: DZ, 2: singletons
    for (const auto& f : families_) {
        const int this_phase = f.kind == FamilyKind::MZ ? 0 : (f.kind == FamilyKind::DZ ? 1 : 2);
        require(this_phase >= phase, ErrorCode::InvalidArgument,
                "families must be ordered MZ, then DZ, then singletons");
        phase = this_phase;
        const std::size_t want = f.kind == FamilyKind::Singleton ? 1 : 2;
        require(f.rows.size() == want, ErrorCode::InvalidArgument,
                "family '" + f.id + "' has " + std::to_string(f.rows.size()) + " members, expected " +
                    std::to_string(want));
        for (auto r : f.rows) {
            require(r == expected_row++, ErrorCode::InvalidArgument, "family rows must be canonical and contiguous");
        }
        if (f.kind == FamilyKind::MZ) ++n_mz_;
        if (f.kind == FamilyKind::DZ) ++n_dz_;
        if (f.kind == FamilyKind::Singleton) ++n_singleton_;
    }
}

FamilyIndex FamilyIndex::canonical(std::size_t n_mz, std::size_t n_dz, std::size_t n_singleton) {
    std::vector<Family> fams;
    std::size_t row = 0;
    for (std::size_t i = 0; i < n_mz; ++i, row += 2) {
        fams.push_back({padded("MZ", i + 1), padded("MZ", i + 1), FamilyKind::MZ, MemberLabel::MZ, {row, row + 1}});
    }
    for (std::size_t i = 0; i < n_dz; ++i, row += 2) {
        fams.push_back({padded("DZ", i + 1), padded("DZ", i + 1), FamilyKind::DZ, MemberLabel::DZ, {row, row + 1}});
    }
    for (std::size_t i = 0; i < n_singleton; ++i, ++row) {
        fams.push_back({padded("S", i + 1), padded("S", i + 1), FamilyKind::Singleton, MemberLabel::Singleton, {row}});
    }
    return FamilyIndex(std::move(fams));
}

std::vector<std::size_t> FamilyIndex::first_twin_rows(FamilyKind kind) const {
    std::vector<std::size_t> out;
    for (const auto& f : families_) {
        if (f.kind == kind && kind != FamilyKind::Singleton) out.push_back(f.rows[0]);
    }
    return out;
}

std::vector<std::size_t> FamilyIndex::second_twin_rows(FamilyKind kind) const {
    std::vector<std::size_t> out;
    for (const auto& f : families_) {
        if (f.kind == kind && kind != FamilyKind::Singleton) out.push_back(f.rows[1]);
    }
    return out;
}

TwinCohort canonicalize_cohort(const Eigen::MatrixXd& phenotype, const Eigen::MatrixXd& design,
                               std::vector<std::string> covariate_names, const std::vector<FamilyRecord>& records) {
    const auto n = static_cast<std::size_t>(phenotype.rows());
    require(static_cast<std::size_t>(design.rows()) == n, ErrorCode::DimensionMismatch,
            "design has " + std::to_string(design.rows()) + " rows but phenotype has " + std::to_string(n));
    require(design.cols() >= 1, ErrorCode::InvalidArgument, "design matrix needs at least one column");
    require(covariate_names.size() == static_cast<std::size_t>(design.cols()), ErrorCode::DimensionMismatch,
            "covariate name count does not match design columns");
    require_finite(phenotype, "phenotype");
    require_finite(design, "design");

    std::vector<int> seen(n, 0);
    for (const auto& r : records) {
        require(r.row < n, ErrorCode::InvalidArgument, "family file references row " + std::to_string(r.row + 1) +
                                                           " but there are " + std::to_string(n) + " rows");
        require(seen[r.row]++ == 0, ErrorCode::InvalidArgument,
                "row " + std::to_string(r.row + 1) + " is assigned to more than one family entry");
    }
    for (std::size_t i = 0; i < n; ++i) {
        require(seen[i] == 1, ErrorCode::InvalidArgument, "row " + std::to_string(i + 1) + " has no family entry");
    }

    std::map<std::string, std::vector<const FamilyRecord*>> groups;
    for (const auto& r : records) groups[r.family_id].push_back(&r);

    struct Pending {
        std::string id, source_id;
        FamilyKind kind;
        MemberLabel label;
        std::vector<std::size_t> source_rows;
    };
    std::vector<Pending> mz, dz, single;
    auto by_data = [&](std::size_t a, std::size_t b) { return data_less(phenotype, design, a, b); };

    for (const auto& [fid, members] : groups) {
        std::vector<std::size_t> twins, sibs, singles;
        MemberLabel twin_label = MemberLabel::MZ;
        for (const auto* m : members) {
            switch (m->label) {
                case MemberLabel::MZ:
                case MemberLabel::DZ:
                    if (!twins.empty() && m->label != twin_label) {
                        fail(ErrorCode::InvalidArgument, "family '" + fid + "' mixes MZ and DZ twins");
                    }
                    twin_label = m->label;
                    twins.push_back(m->row);
                    break;
                case MemberLabel::Sibling: sibs.push_back(m->row); break;
                case MemberLabel::Singleton: singles.push_back(m->row); break;
            }
        }
        require(twins.size() <= 2, ErrorCode::InvalidArgument, "family '" + fid + "' has more than two twins");
        require(twins.size() != 1, ErrorCode::InvalidArgument,
                "family '" + fid + "' has a single twin; incomplete twin pairs are rejected");
        require(singles.size() <= 1, ErrorCode::InvalidArgument,
                "family '" + fid + "' has more than one SINGLETON member");
        require(singles.empty() || twins.empty(), ErrorCode::InvalidArgument,
                "family '" + fid + "' mixes twins and a SINGLETON member");
        if (twins.size() == 2) {
            std::stable_sort(twins.begin(), twins.end(), by_data);
            auto& dst = twin_label == MemberLabel::MZ ? mz : dz;
            dst.push_back({fid, fid, twin_label == MemberLabel::MZ ? FamilyKind::MZ : FamilyKind::DZ, twin_label, twins});
        }
        if (!singles.empty()) single.push_back({fid, fid, FamilyKind::Singleton, MemberLabel::Singleton, singles});
        std::stable_sort(sibs.begin(), sibs.end(), by_data);
        for (std::size_t k = 0; k < sibs.size(); ++k) {
            single.push_back({fid + "#sib" + std::to_string(k + 1), fid, FamilyKind::Singleton, MemberLabel::Sibling,
                              {sibs[k]}});
        }
    }
    auto by_id = [](const Pending& a, const Pending& b) { return a.id < b.id; };
    std::sort(mz.begin(), mz.end(), by_id);
    std::sort(dz.begin(), dz.end(), by_id);
    std::sort(single.begin(), single.end(), by_id);

    TwinCohort out;
    out.phenotype.resize(phenotype.rows(), phenotype.cols());
    out.design.resize(design.rows(), design.cols());
    out.covariate_names = std::move(covariate_names);
    std::vector<Family> fams;
    Eigen::Index next = 0;
    for (auto* list : {&mz, &dz, &single}) {
        for (auto& p : *list) {
            Family f{p.id, p.source_id, p.kind, p.label, {}};
            for (auto src : p.source_rows) {
                out.phenotype.row(next) = phenotype.row(static_cast<Eigen::Index>(src));
                out.design.row(next) = design.row(static_cast<Eigen::Index>(src));
                f.rows.push_back(static_cast<std::size_t>(next));
                ++next;
            }
            fams.push_back(std::move(f));
        }
    }
    out.families = FamilyIndex(std::move(fams));
    return out;
}

TwinCohort load_cohort(const std::string& phenotype_path, const std::string& design_path,
                       const std::string& family_path, const VertexSet& domain) {
    const Eigen::MatrixXd y = read_mat1(phenotype_path);
    require(static_cast<std::size_t>(y.cols()) == domain.size(), ErrorCode::DimensionMismatch,
            "phenotype has " + std::to_string(y.cols()) + " columns but the domain has " +
                std::to_string(domain.size()) + " vertices");

    Eigen::MatrixXd x;
    std::vector<std::string> names;
    if (looks_like_mat1(design_path)) {
        x = read_mat1(design_path);
        for (Eigen::Index c = 0; c < x.cols(); ++c) names.push_back("x" + std::to_string(c + 1));
    } else {
        const auto table = detail::read_csv(design_path);
        names = table.header;
        x.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(names.size()));
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            require(table.rows[r].size() == names.size(), ErrorCode::Parse,
                    "'" + design_path + "': row " + std::to_string(r + 2) + " has the wrong number of fields");
            for (std::size_t c = 0; c < names.size(); ++c) {
                x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                    detail::parse_double(table.rows[r][c], design_path);
            }
        }
    }

    const auto fam = detail::read_csv(family_path);
    const std::vector<std::string> expected{"row_index", "family_id", "kind"};
    require(fam.header == expected, ErrorCode::Parse, "'" + family_path + "': header must be row_index,family_id,kind");
    std::vector<FamilyRecord> records;
    records.reserve(fam.rows.size());
    for (const auto& row : fam.rows) {
        require(row.size() == 3, ErrorCode::Parse, "'" + family_path + "': expected 3 fields per row");
        const auto idx = detail::parse_int(row[0], family_path);
        require(idx >= 1, ErrorCode::InvalidArgument, "'" + family_path + "': row_index must be >= 1");
        records.push_back({static_cast<std::size_t>(idx - 1), row[1], parse_label(row[2], family_path)});
    }
    return canonicalize_cohort(y, x, std::move(names), records);
}

void save_cohort(const TwinCohort& cohort, const std::string& phenotype_path, const std::string& design_path,
                 const std::string& family_path) {
    write_mat1(phenotype_path, cohort.phenotype);

    std::ostringstream design;
    for (std::size_t c = 0; c < cohort.covariate_names.size(); ++c) {
        design << (c ? "," : "") << cohort.covariate_names[c];
    }
    design << '\n';
    char buf[64];
    for (Eigen::Index r = 0; r < cohort.design.rows(); ++r) {
        for (Eigen::Index c = 0; c < cohort.design.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", cohort.design(r, c));
            design << (c ? "," : "") << buf;
        }
        design << '\n';
    }
    detail::write_file_atomically(design_path, design.str());

    std::ostringstream fam;
    fam << "row_index,family_id,kind\n";
    for (const auto& f : cohort.families.families()) {
        for (auto r : f.rows) fam << (r + 1) << ',' << f.source_id << ',' << to_string(f.label) << '\n';
    }
    detail::write_file_atomically(family_path, fam.str());
}

std::vector<Diagnostic> validate_cohort(const TwinCohort& cohort) {
    std::vector<Diagnostic> out;
    const auto& fam = cohort.families;
    if (static_cast<std::size_t>(cohort.phenotype.rows()) != fam.n_individuals() ||
        cohort.design.rows() != cohort.phenotype.rows()) {
        out.push_back({Severity::Error, "dimension", "phenotype, design, and family index disagree on N"});
        return out;
    }
    if (fam.n_mz() == 0 || fam.n_dz() == 0) {
        out.push_back({Severity::Warning, "unidentifiable",
                       "additive/common components unidentifiable: need at least one MZ and one DZ pair (n1=" +
                           std::to_string(fam.n_mz()) + ", n2=" + std::to_string(fam.n_dz()) + ")"});
    }
    if (cohort.design.cols() == 0) {
        out.push_back({Severity::Error, "design", "design matrix has no columns"});
        return out;
    }
    bool has_intercept = false;
    for (Eigen::Index c = 0; c < cohort.design.cols(); ++c) {
        const auto col = cohort.design.col(c);
        if (col.size() > 0 && (col.array() == col[0]).all() && col[0] != 0.0) has_intercept = true;
    }
    if (!has_intercept) {
        out.push_back({Severity::Error, "intercept", "design matrix has no constant (intercept) column"});
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cohort.design);
    if (qr.rank() < cohort.design.cols()) {
        out.push_back({Severity::Error, "rank_deficient",
                       "design matrix is rank-deficient (rank " + std::to_string(qr.rank()) + " < " +
                           std::to_string(cohort.design.cols()) + " columns)"});
    }
    if (!cohort.phenotype.allFinite() || !cohort.design.allFinite()) {
        out.push_back({Severity::Error, "non_finite", "cohort contains NaN or infinite values"});
    }
    return out;
}

bool has_errors(const std::vector<Diagnostic>& diagnostics) {
    return std::any_of(diagnostics.begin(), diagnostics.end(),
                       [](const Diagnostic& d) { return d.severity == Severity::Error; });
}

}  // namespace twincov
