#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <spdlog/sinks/ostream_sink.h>

#include "structmix/cli.hpp"

using namespace structmix;
namespace fs = std::filesystem;

namespace {

struct Captured {
    int code = -1;
    std::string log;
};

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("structmix_cli_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }

    fs::path write(const std::string& name, const std::string& content) const {
        const fs::path p = dir_ / name;
        std::ofstream(p, std::ios::binary) << content;
        return p;
    }

    Captured run(const std::string& command, const fs::path& config, std::optional<fs::path> out, std::size_t threads = 1,
                 std::optional<std::uint64_t> seed = std::nullopt) const {
        std::ostringstream sink_stream;
        auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(sink_stream);
        spdlog::logger log("cli_test", sink);
        log.set_level(spdlog::level::debug);
        cli::Options opts{command, config, out, threads, seed};
        Captured c;
        c.code = cli::run(opts, log);
        c.log = sink_stream.str();
        return c;
    }

    static std::size_t entries(const fs::path& dir) {
        if (!fs::exists(dir)) return 0;
        std::size_t n = 0;
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
        return n;
    }

    fs::path dir_;
};

std::string small_study(std::size_t runs) {
    return R"({"study": {"spec": {"kg": 2, "kf": 2, "t": 2, "pu": 2, "pw": 1, "n": 60},
               "runs": )" + std::to_string(runs) + R"(, "seed": 11}})";
}

}  // namespace

TEST_F(CliTest, MissingConfigExitsOneAndNamesPath) {
    const fs::path config = dir_ / "does_not_exist.json";
    const fs::path out = dir_ / "out";
    const Captured c = run("simulate", config, out);
    EXPECT_EQ(c.code, cli::kExitValidation);
    EXPECT_NE(c.log.find(config.string()), std::string::npos) << c.log;
    EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, MalformedJsonExitsOne) {
    const Captured c = run("verify", write("bad.json", "{\"verify\": "), dir_ / "out");
    EXPECT_EQ(c.code, cli::kExitValidation);
    EXPECT_EQ(entries(dir_ / "out"), 0u);
}

TEST_F(CliTest, SchemaErrorNamesField) {
    const Captured missing = run("simulate", write("a.json", R"({"study": {"spec": {"kg": 2, "kf": 2, "t": 2, "n": 9}}})"),
                                 dir_ / "out");
    EXPECT_EQ(missing.code, cli::kExitValidation);
    EXPECT_NE(missing.log.find("study.spec.pu"), std::string::npos) << missing.log;

    const Captured wrong = run("verify", write("b.json", R"({"verify": {"instances": "ten"}})"), dir_ / "out");
    EXPECT_EQ(wrong.code, cli::kExitValidation);
    EXPECT_NE(wrong.log.find("verify.instances"), std::string::npos) << wrong.log;

    const Captured section = run("pca", write("c.json", R"({"input": {"data": "x.csv"}})"), dir_ / "out");
    EXPECT_EQ(section.code, cli::kExitValidation);
    EXPECT_NE(section.log.find("'pca'"), std::string::npos) << section.log;
    EXPECT_EQ(entries(dir_ / "out"), 0u);
}

TEST_F(CliTest, VerifyTenInstances) {
    const fs::path out = dir_ / "out";
    const Captured c = run("verify", write("v.json", R"({"verify": {"instances": 10, "seed": 3}})"), out);
    ASSERT_EQ(c.code, cli::kExitOk) << c.log;
    const io::Json report = io::read_json(out / "report.json");
    EXPECT_EQ(report["instances"], 10);
    EXPECT_EQ(report["ok_count"], 10);
    EXPECT_LT(report["worst_violation"].get<double>(), 1e-9);
    EXPECT_EQ(entries(out), 1u);
}

TEST_F(CliTest, SimulateWritesFixedFileSetDeterministically) {
    const fs::path config = write("s.json", small_study(3));
    const Captured one = run("simulate", config, dir_ / "t1", 1);
    const Captured three = run("simulate", config, dir_ / "t3", 3);
    ASSERT_EQ(one.code, cli::kExitOk) << one.log;
    ASSERT_EQ(three.code, cli::kExitOk) << three.log;
    for (const char* name : {"report.json", "fixed_rmse.csv", "cov_rmse.csv"}) {
        ASSERT_TRUE(fs::exists(dir_ / "t1" / name)) << name;
        EXPECT_EQ(io::read_file(dir_ / "t1" / name), io::read_file(dir_ / "t3" / name)) << name;
    }
    EXPECT_EQ(io::read_file(dir_ / "t1" / "cov_rmse.csv").substr(0, 3), "j1,");
    EXPECT_FALSE(fs::exists(dir_ / "t1" / "timing.json"));
}

TEST_F(CliTest, SeedOverrideChangesResults) {
    const fs::path config = write("s.json", small_study(2));
    ASSERT_EQ(run("simulate", config, dir_ / "a", 1).code, cli::kExitOk);
    ASSERT_EQ(run("simulate", config, dir_ / "b", 1, 12345).code, cli::kExitOk);
    EXPECT_NE(io::read_file(dir_ / "a" / "report.json"), io::read_file(dir_ / "b" / "report.json"));
    EXPECT_EQ(io::read_json(dir_ / "b" / "report.json")["seed"], 12345);
}

TEST_F(CliTest, OutDirectoryFromConfigIsRelativeToConfig) {
    fs::create_directories(dir_ / "cfg");
    const fs::path config = write("cfg/v.json", R"({"out": "results", "verify": {"instances": 2}})");
    ASSERT_EQ(run("verify", config, std::nullopt).code, cli::kExitOk);
    EXPECT_TRUE(fs::exists(dir_ / "cfg" / "results" / "report.json"));
}

TEST_F(CliTest, FitProducesReportAndWald) {
    StudyConfig study = reference_config(2, 1, 5, 120);
    study.spec.kg = 2;
    study.spec.kf = 2;
    study.truth = reference_truth(study.spec);
    const Dataset data = generate_dataset(study, 0);
    write("u.csv", io::matrix_csv(data.u));
    write("w.csv", io::matrix_csv(data.w));
    write("y.csv", io::matrix_csv(data.outcomes));
    const fs::path config = write("f.json", R"({"input": {"u": "u.csv", "w": "w.csv", "outcomes": "y.csv"},
                                               "spec": {"kg": 2, "kf": 2, "t": 2}})");
    const fs::path out = dir_ / "out";
    const Captured c = run("fit", config, out);
    ASSERT_EQ(c.code, cli::kExitOk) << c.log;
    const io::Json report = io::read_json(out / "report.json");
    EXPECT_TRUE(report["converged"].get<bool>());
    EXPECT_EQ(report["alpha_g"].size(), 2u);
    const std::string wald = io::read_file(out / "wald.csv");
    EXPECT_EQ(std::count(wald.begin(), wald.end(), '\n'), 1 + static_cast<long>(study.spec.coefficient_count()));
    const Matrix sigma = io::read_matrix_csv(out / "sigma_hat.csv");
    EXPECT_EQ(sigma.rows(), static_cast<Eigen::Index>(study.spec.p()));
    EXPECT_TRUE(linalg::is_pd(sigma));
    EXPECT_TRUE(fs::exists(out / "support.json"));
}

TEST_F(CliTest, FitShapeMismatchNamesInput) {
    write("u.csv", "j1,j2\n1,0\n1,1\n1,2\n1,3\n1,4\n");
    write("y.csv", "j1,j2\n1,2\n3,4\n5,6\n7,8\n9,1\n");
    const fs::path config = write("f.json", R"({"input": {"u": "u.csv", "outcomes": "y.csv"},
                                               "spec": {"kg": 1, "kf": 1, "t": 2}})");
    const Captured c = run("fit", config, dir_ / "out");
    EXPECT_EQ(c.code, cli::kExitValidation);
    EXPECT_NE(c.log.find("input.outcomes"), std::string::npos) << c.log;
}

TEST_F(CliTest, FitMissingDataFileNamesPath) {
    const fs::path config = write("f.json", R"({"input": {"u": "nowhere.csv", "outcomes": "y.csv"},
                                               "spec": {"kg": 1, "kf": 1, "t": 2}})");
    const Captured c = run("fit", config, dir_ / "out");
    EXPECT_EQ(c.code, cli::kExitValidation);
    EXPECT_NE(c.log.find((dir_ / "nowhere.csv").string()), std::string::npos) << c.log;
}

TEST_F(CliTest, NonConvergedFitExitsTwoWithoutOutputs) {
    StudyConfig study = reference_config(2, 1, 6, 80);
    study.spec.kg = 1;
    study.spec.kf = 2;
    study.truth = reference_truth(study.spec);
    const Dataset data = generate_dataset(study, 0);
    write("u.csv", io::matrix_csv(data.u));
    write("w.csv", io::matrix_csv(data.w));
    write("y.csv", io::matrix_csv(data.outcomes));
    const fs::path config = write("f.json", R"({"input": {"u": "u.csv", "w": "w.csv", "outcomes": "y.csv"},
                                               "spec": {"kg": 1, "kf": 2, "t": 2},
                                               "fit_options": {"n_iter": 2, "c_b": 1e-300, "c_sigma": 1e-300}})");
    const fs::path out = dir_ / "out";
    const Captured c = run("fit", config, out);
    EXPECT_EQ(c.code, cli::kExitNumerical) << c.log;
    EXPECT_EQ(entries(out), 0u);
}

TEST_F(CliTest, PcaEmpiricalWritesComponents) {
    Rng rng(4);
    write("x.csv", io::matrix_csv(gaussian_matrix(30, 6, rng)));
    const fs::path config = write("p.json", R"({"input": {"data": "x.csv"}, "pca": {"k": 2}})");
    const fs::path out = dir_ / "out";
    const Captured c = run("pca", config, out);
    ASSERT_EQ(c.code, cli::kExitOk) << c.log;
    const Matrix comps = io::read_matrix_csv(out / "components.csv");
    EXPECT_EQ(comps.rows(), 6);
    EXPECT_EQ(comps.cols(), 2);
    EXPECT_EQ(io::read_matrix_csv(out / "scores.csv").rows(), 30);
    EXPECT_EQ(io::read_json(out / "report.json")["explained"].size(), 2u);
}

TEST_F(CliTest, PcaRejectsBadMomentaAndK) {
    Rng rng(5);
    write("x.csv", io::matrix_csv(gaussian_matrix(10, 7, rng)));
    EXPECT_EQ(run("pca", write("a.json", R"({"input": {"data": "x.csv"}, "pca": {"k": 2, "momenta": true}})"),
                  dir_ / "out")
                  .code,
              cli::kExitValidation);
    EXPECT_EQ(run("pca", write("b.json", R"({"input": {"data": "x.csv"}, "pca": {"k": 50}})"), dir_ / "out").code,
              cli::kExitValidation);
    EXPECT_EQ(entries(dir_ / "out"), 0u);
}

TEST_F(CliTest, BinaryExitCodes) {
    const std::string bin = STRUCTMIX_CLI_PATH;
    auto status = [&](const std::string& args) {
        const std::string cmd = "'" + bin + "' " + args + " >/dev/null 2>&1";
        const int raw = std::system(cmd.c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    EXPECT_EQ(status("verify --config '" + (dir_ / "nope.json").string() + "'"), 1);
    EXPECT_EQ(status("explode --config x.json"), 1);
    EXPECT_EQ(status("verify"), 1);
    EXPECT_EQ(status("--help"), 0);
    const fs::path config = write("v.json", R"({"verify": {"instances": 3}})");
    EXPECT_EQ(status("verify --config '" + config.string() + "' --out '" + (dir_ / "out").string() + "' --threads 2"),
              0);
    EXPECT_TRUE(fs::exists(dir_ / "out" / "report.json"));
}
