#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <limits>
#include <string>

#include "structmix/io.hpp"
#include "structmix/random.hpp"

using namespace structmix;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("structmix_io_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string field_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const io::SchemaError& e) {
        return e.field();
    }
    return "<no error>";
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(FormatNumber, ShortestRoundTrip) {
    EXPECT_EQ(io::format_number(0.1), "0.1");
    EXPECT_EQ(io::format_number(-2.0), "-2");
    EXPECT_EQ(io::format_number(std::numeric_limits<double>::quiet_NaN()), "nan");
    EXPECT_EQ(io::format_number(-std::numeric_limits<double>::infinity()), "-inf");
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const double x = std::ldexp(gaussian_matrix(1, 1, rng)(0, 0), i % 80 - 40);
        EXPECT_EQ(std::stod(io::format_number(x)), x);
    }
}

TEST(MatrixCsv, HeaderAndRows) {
    const Matrix m = (Matrix(2, 3) << 1, 2.5, -3, 0, 1e-300, 7).finished();
    EXPECT_EQ(io::matrix_csv(m), "j1,j2,j3\n1,2.5,-3\n0,1e-300,7\n");
    EXPECT_EQ(io::matrix_csv(m.leftCols(1), "pc"), "pc1\n1\n0\n");
}

TEST(MatrixCsv, GridOfThirtyHasThirtyDataRows) {
    const std::string csv = io::matrix_csv(Matrix::Constant(30, 30, 0.25));
    EXPECT_EQ(count_lines(csv), 31u);
    EXPECT_EQ(csv.substr(0, csv.find('\n')).find("j30"), csv.substr(0, csv.find('\n')).size() - 3);
}

TEST(MatrixCsv, ParseRecoversWrittenValues) {
    Rng rng(2);
    const Matrix m = gaussian_matrix(7, 4, rng);
    EXPECT_EQ(io::parse_matrix_csv(io::matrix_csv(m), "mem"), m);
}

TEST(MatrixCsv, ParseToleratesWhitespaceAndBlankLines) {
    const Matrix m = io::parse_matrix_csv("a, b\r\n 1 ,2\r\n\n3,4\n", "mem");
    EXPECT_EQ(m, (Matrix(2, 2) << 1, 2, 3, 4).finished());
    EXPECT_EQ(io::parse_matrix_csv("a,b\n", "mem").rows(), 0);
}

TEST(MatrixCsv, ParseErrorsNameSourceAndLine) {
    EXPECT_EQ(field_of([] { io::parse_matrix_csv("", "x.csv"); }), "x.csv");
    EXPECT_EQ(field_of([] { io::parse_matrix_csv("a,b\n1,2\n3\n", "x.csv"); }), "x.csv:3");
    EXPECT_EQ(field_of([] { io::parse_matrix_csv("a,b\n1,oops\n", "x.csv"); }), "x.csv:2");
    EXPECT_EQ(field_of([] { io::parse_matrix_csv("a,b\n1,nan\n", "x.csv"); }), "x.csv:2");
    EXPECT_EQ(field_of([] { io::parse_matrix_csv("a,b\n1,\n", "x.csv"); }), "x.csv:2");
}

TEST(ReadFile, MissingFileNamesPath) {
    const fs::path missing = fresh_dir("missing") / "nope.json";
    try {
        io::read_json(missing);
        FAIL();
    } catch (const io::FileError& e) {
        EXPECT_EQ(e.path(), missing);
        EXPECT_NE(std::string(e.what()).find(missing.string()), std::string::npos);
        EXPECT_EQ(e.kind(), Error::Kind::validation);
    }
}

TEST(Schema, FieldNamesInErrors) {
    const io::Json spec = io::Json::parse(R"({"kg": 2, "kf": 1, "t": 2, "pu": 1, "n": 10})");
    EXPECT_EQ(io::spec_from_json(spec, "spec").pw, 0u);
    io::Json missing = spec;
    missing.erase("kf");
    EXPECT_EQ(field_of([&] { io::spec_from_json(missing, "spec"); }), "spec.kf");
    io::Json negative = spec;
    negative["t"] = -1;
    EXPECT_EQ(field_of([&] { io::spec_from_json(negative, "spec"); }), "spec.t");
    io::Json fractional = spec;
    fractional["n"] = 2.5;
    EXPECT_EQ(field_of([&] { io::spec_from_json(fractional, "spec"); }), "spec.n");
    io::Json text = spec;
    text["kg"] = "two";
    EXPECT_EQ(field_of([&] { io::spec_from_json(text, "spec"); }), "spec.kg");
    EXPECT_EQ(field_of([] { io::parse_json("{", "cfg.json"); }), "cfg.json");
}

TEST(Schema, RaggedMatrixRejected) {
    EXPECT_EQ(field_of([] { io::as_matrix(io::Json::parse("[[1,2],[3]]"), "m"); }).substr(0, 1), "m");
    EXPECT_EQ(io::as_matrix(io::Json::parse("[[1,2],[3,4]]"), "m"), (Matrix(2, 2) << 1, 2, 3, 4).finished());
}

TEST(CovarianceJson, RoundTrip) {
    const ModelSpec spec{5, 5, 3, 2, 2, 50};
    const Truth truth = reference_truth(spec);
    const io::Json j = io::covariance_json(truth.covariance, spec);
    const auto [back, back_spec] = io::covariance_from_json(io::parse_json(j.dump(), "mem"), "cov", spec);
    EXPECT_EQ(build_sigma(back, back_spec), build_sigma(truth.covariance, spec));
    EXPECT_EQ(back.sigma_eps2, truth.covariance.sigma_eps2);
    const ModelSpec other{5, 5, 4, 2, 2, 50};
    EXPECT_EQ(field_of([&] { io::covariance_from_json(j, "cov", other); }), "cov");
    io::Json broken = j;
    broken["sigma_ff"][1] = io::Json::parse("[[1]]");
    EXPECT_EQ(field_of([&] { io::covariance_from_json(broken, "cov"); }), "cov");
}

TEST(StudyJson, DefaultsAndRoundTrip) {
    const io::Json doc = io::Json::parse(R"({"spec": {"kg": 5, "kf": 5, "t": 2, "pu": 2, "pw": 2, "n": 40},
                                            "runs": 3, "seed": 9, "methods": ["proposed"]})");
    const StudyConfig c = io::study_from_json(doc, "study");
    EXPECT_EQ(c.runs, 3u);
    ASSERT_EQ(c.methods.size(), 1u);
    const StudyConfig again = io::study_from_json(io::study_json(c), "study");
    EXPECT_EQ(io::study_json(again).dump(), io::study_json(c).dump());
    io::Json bad = doc;
    bad["methods"][0] = "magic";
    EXPECT_EQ(field_of([&] { io::study_from_json(bad, "study"); }), "study.methods[0]");
    bad = doc;
    bad["runs"] = 0;
    EXPECT_EQ(field_of([&] { io::study_from_json(bad, "study"); }), "study.runs");
    bad = doc;
    bad["fit_options"] = io::Json::parse(R"({"n_iter": 1})");
    EXPECT_EQ(field_of([&] { io::study_from_json(bad, "study"); }), "study.fit_options.n_iter");
}

TEST(StudyOutputs, EmptyMethodsGiveReportOnly) {
    MetricsReport r;
    r.spec = ModelSpec{1, 1, 1, 1, 0, 5};
    const io::OutputSet out = io::study_outputs(r);
    ASSERT_EQ(out.files().size(), 1u);
    EXPECT_EQ(out.files()[0].first, "report.json");
    const io::Json j = io::Json::parse(out.files()[0].second);
    EXPECT_TRUE(j["methods"].empty());
}

TEST(StudyOutputs, FileNamesAndCsvShape) {
    MetricsReport r;
    r.spec = ModelSpec{1, 1, 2, 1, 0, 5};
    for (Method m : {Method::proposed, Method::no_random_effects}) {
        MethodMetrics mm;
        mm.method = m;
        mm.successful_runs = 2;
        mm.fixed_rmse = {0.5, 0.25, 0.0};
        mm.cov_rmse = Matrix::Constant(3, 3, 0.1);
        mm.seconds = {1.0, 2.0};
        r.methods.push_back(mm);
    }
    const io::OutputSet out = io::study_outputs(r);
    ASSERT_EQ(out.files().size(), 4u);
    EXPECT_EQ(out.files()[1].first, "fixed_rmse.csv");
    EXPECT_EQ(out.files()[2].first, "cov_rmse.csv");
    EXPECT_EQ(out.files()[3].first, "cov_rmse_no_random_effects_actual.csv");
    EXPECT_EQ(count_lines(out.files()[1].second), 7u);
    EXPECT_NE(out.files()[1].second.find("proposed,actual,alpha_g,0.5,2\n"), std::string::npos);
    EXPECT_EQ(out.files()[0].second.find("seconds"), std::string::npos);
    EXPECT_EQ(out.files()[0].second, io::study_outputs(r).files()[0].second);
}

TEST(WaldCsv, OneBasedIndices) {
    WaldReport report;
    report.rows.push_back(WaldRow{{CoefficientGroup::beta, 0, 1}, 1.5, 0.5, 3.0, 0.0027});
    EXPECT_EQ(io::wald_csv(report), "group,pc_index,covariate_index,estimate,se,z,p\nbeta,1,2,1.5,0.5,3,0.0027\n");
}

TEST(SupportJson, OneBased) {
    EXPECT_EQ(io::support_json({{}, {0}, {0, 1}}).dump(),
              R"([{"row":1,"cols":[]},{"row":2,"cols":[1]},{"row":3,"cols":[1,2]}])");
}

TEST(VerificationJson, WitnessIsOneBasedOrNull) {
    VerificationSummary s;
    s.instances = 4;
    s.ok_count = 4;
    EXPECT_TRUE(io::verification_json(s)["worst_witness"].is_null());
    s.worst_instance = 2;
    s.worst_row = 3;
    s.worst_col = 0;
    const io::Json w = io::verification_json(s)["worst_witness"];
    EXPECT_EQ(w["instance"], 3);
    EXPECT_EQ(w["row"], 4);
    EXPECT_EQ(w["col"], 1);
}

TEST(OutputSet, CommitWritesAllAndLeavesNoTemporaries) {
    const fs::path dir = fresh_dir("commit") / "nested";
    io::OutputSet out;
    out.add("a.txt", "alpha\n");
    out.add("b.csv", "x\n1\n");
    const auto written = out.commit(dir);
    ASSERT_EQ(written.size(), 2u);
    EXPECT_EQ(io::read_file(dir / "a.txt"), "alpha\n");
    EXPECT_EQ(io::read_file(dir / "b.csv"), "x\n1\n");
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++entries;
    EXPECT_EQ(entries, 2u);
}

TEST(OutputSet, FailedCommitWritesNothing) {
    const fs::path dir = fresh_dir("blocked");
    fs::create_directories(dir);
    fs::create_directories(dir / "b.csv");  // a directory blocks the rename
    io::OutputSet out;
    out.add("a.txt", "alpha\n");
    out.add("b.csv", "x\n");
    EXPECT_THROW(out.commit(dir), io::FileError);
    EXPECT_FALSE(fs::exists(dir / ".a.txt.tmp"));
    EXPECT_FALSE(fs::exists(dir / ".b.csv.tmp"));
    EXPECT_FALSE(fs::exists(dir / "a.txt"));
}
