#include "doctest.h"
#include "test_support.hpp"
#include "twincov/cohort.hpp"
#include "twincov/error.hpp"
#include "twincov/matrix_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

using namespace twincov;
using twincov::testing::ScratchDir;

namespace {

struct RawCohort {
    Eigen::MatrixXd y;
    Eigen::MatrixXd x;
    std::vector<std::string> family_id;
    std::vector<std::string> kind;
};

// 2 MZ pairs, 2 DZ pairs, one singleton, one pair of non-twin siblings.
RawCohort sample_raw(std::size_t v) {
    RawCohort r;
    r.family_id = {"fa", "fa", "fb", "fb", "fc", "fc", "fd", "fd", "fe", "ff", "ff"};
    r.kind = {"MZ", "MZ", "MZ", "MZ", "DZ", "DZ", "DZ", "DZ", "SINGLETON", "SIB", "SIB"};
    const auto n = static_cast<Eigen::Index>(r.family_id.size());
    std::mt19937_64 rng(7);
    std::normal_distribution<double> z;
    r.y.resize(n, static_cast<Eigen::Index>(v));
    r.x.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < r.y.cols(); ++j) r.y(i, j) = z(rng);
        r.x(i, 0) = 1.0;
        r.x(i, 1) = z(rng);
    }
    return r;
}

void write_raw(const RawCohort& r, const std::vector<std::size_t>& order, const ScratchDir& dir) {
    Eigen::MatrixXd y(r.y.rows(), r.y.cols());
    std::ofstream design(dir.file("design.csv"));
    std::ofstream fam(dir.file("family.csv"));
    design << "intercept,age\n";
    fam << "row_index,family_id,kind\n";
    char buf[128];
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto src = static_cast<Eigen::Index>(order[k]);
        y.row(static_cast<Eigen::Index>(k)) = r.y.row(src);
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", r.x(src, 0), r.x(src, 1));
        design << buf;
        fam << (k + 1) << ',' << r.family_id[order[k]] << ',' << r.kind[order[k]] << '\n';
    }
    write_mat1(dir.file("y.mat1"), y);
}

}  // namespace

TEST_CASE("load canonicalises families and folds siblings into singletons") {
    ScratchDir dir("cohort");
    const auto raw = sample_raw(4);
    std::vector<std::size_t> order(raw.family_id.size());
    std::iota(order.begin(), order.end(), 0);
    write_raw(raw, order, dir);
    const auto domain = fibonacci_sphere(4);
    const auto c = load_cohort(dir.file("y.mat1"), dir.file("design.csv"), dir.file("family.csv"), domain);
    CHECK(c.families.n_mz() == 2);
    CHECK(c.families.n_dz() == 2);
    CHECK(c.families.n_singleton() == 3);
    CHECK(c.families.n_individuals() == 11);
    CHECK(c.covariate_names == std::vector<std::string>{"intercept", "age"});
    std::size_t sibs = 0;
    for (const auto& f : c.families.families()) {
        if (f.label == MemberLabel::Sibling) {
            CHECK(f.kind == FamilyKind::Singleton);
            ++sibs;
        }
    }
    CHECK(sibs == 2);
    CHECK(validate_cohort(c).empty());

    SUBCASE("shuffled input gives the identical cohort") {
        std::vector<std::size_t> shuffled = order;
        std::mt19937 rng(3);
        for (int trial = 0; trial < 5; ++trial) {
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            ScratchDir other("cohort_shuffled");
            write_raw(raw, shuffled, other);
            const auto d = load_cohort(other.file("y.mat1"), other.file("design.csv"), other.file("family.csv"), domain);
            CHECK(d.families == c.families);
            CHECK(d.phenotype == c.phenotype);
            CHECK(d.design == c.design);
        }
    }

    SUBCASE("save then load is bit-exact") {
        save_cohort(c, dir.file("y2.mat1"), dir.file("x2.csv"), dir.file("f2.csv"));
        const auto d = load_cohort(dir.file("y2.mat1"), dir.file("x2.csv"), dir.file("f2.csv"), domain);
        CHECK(d.families == c.families);
        CHECK(d.phenotype == c.phenotype);
        CHECK(d.design == c.design);
        CHECK(d.covariate_names == c.covariate_names);
    }

    SUBCASE("vertex count must match the domain") {
        CHECK_THROWS_AS((void)load_cohort(dir.file("y.mat1"), dir.file("design.csv"), dir.file("family.csv"),
                                          fibonacci_sphere(5)),
                        Error);
    }
}

TEST_CASE("canonicalisation rejects malformed families") {
    const auto raw = sample_raw(2);
    auto records = [&](auto mutate) {
        std::vector<FamilyRecord> rec;
        for (std::size_t i = 0; i < raw.family_id.size(); ++i) {
            MemberLabel l = raw.kind[i] == "MZ"   ? MemberLabel::MZ
                            : raw.kind[i] == "DZ" ? MemberLabel::DZ
                            : raw.kind[i] == "SIB" ? MemberLabel::Sibling
                                                   : MemberLabel::Singleton;
            rec.push_back({i, raw.family_id[i], l});
        }
        mutate(rec);
        return rec;
    };
    const std::vector<std::string> names{"intercept", "age"};
    CHECK_NOTHROW((void)canonicalize_cohort(raw.y, raw.x, names, records([](auto&) {})));
    // one twin missing
    CHECK_THROWS_AS((void)canonicalize_cohort(raw.y.topRows(10), raw.x.topRows(10), names,
                                              records([](auto& r) { r.erase(r.begin() + 10); r[0].family_id = "lonely"; })),
                    Error);
    // three twins in one family
    CHECK_THROWS_AS((void)canonicalize_cohort(raw.y, raw.x, names, records([](auto& r) { r[2].family_id = "fa"; r[3].family_id = "fa"; })),
                    Error);
    // row assigned twice
    CHECK_THROWS_AS((void)canonicalize_cohort(raw.y, raw.x, names, records([](auto& r) { r[1].row = 0; })), Error);
    // MZ and DZ mixed
    CHECK_THROWS_AS((void)canonicalize_cohort(raw.y, raw.x, names, records([](auto& r) { r[1].label = MemberLabel::DZ; })),
                    Error);
    // NaN phenotype
    Eigen::MatrixXd bad = raw.y;
    bad(3, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS((void)canonicalize_cohort(bad, raw.x, names, records([](auto&) {})), Error);
}

TEST_CASE("validation diagnostics") {
    auto c = twincov::testing::random_cohort(3, 0, 4, 2, 1);
    auto diags = validate_cohort(c);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].severity == Severity::Warning);
    CHECK(diags[0].code == "unidentifiable");
    CHECK_FALSE(has_errors(diags));

    c = twincov::testing::random_cohort(3, 3, 4, 2, 1);
    CHECK(validate_cohort(c).empty());
    c.design.col(1) = c.design.col(0);
    diags = validate_cohort(c);
    CHECK(has_errors(diags));
}
