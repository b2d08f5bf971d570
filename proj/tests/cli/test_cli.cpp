// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / ("posemoe_cli_" + std::string(info->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    Result run(const std::string& args) {
        const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
        const std::string cmd =
            std::string(POSEMOE_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    fs::path write(const std::string& name, const std::string& text) {
        std::ofstream(dir_ / name) << text;
        return dir_ / name;
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

int count_lines(const std::string& s) {
    int n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("no-such-command").code, 2);
    EXPECT_EQ(run("eval-bench --model oracle --precision f16 --out " + path("o")).code, 2);
    EXPECT_EQ(run("eval-bench --bogus").code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, UnknownConfigKeyIsRejected) {
    auto cfg = write("bad.json", R"({"bench": {"episodes_per_kind": 2, "typo": 1}})");
    auto r = run("eval-bench --model oracle --config " + cfg.string() + " --out " + path("o"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("bench.typo"), std::string::npos) << r.err;

    cfg = write("type.json", R"({"seed": "zero"})");
    EXPECT_EQ(run("eval-bench --model oracle --config " + cfg.string()).code, 2);
    cfg = write("broken.json", "{\"seed\": ");
    EXPECT_EQ(run("eval-bench --model oracle --config " + cfg.string()).code, 2);
}

TEST_F(Cli, MissingCheckpointExitsTwo) {
    auto r = run("eval-bench --out " + path("empty"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("checkpoint not found"), std::string::npos) << r.err;
    EXPECT_EQ(run("convert-moe --out " + path("empty")).code, 2);
    EXPECT_EQ(run("finetune-moe --out " + path("empty")).code, 2);
}

TEST_F(Cli, CorruptCheckpointExitsTwo) {
    auto cfg = write("pd.json", R"({"train": {"steps": 2, "batch_size": 4, "log_every": 1},
                                    "data": {"seed_end": 5}, "model": {"hidden": 8, "n_blocks": 1, "n_heads": 2}})");
    ASSERT_EQ(run("train-posedit --config " + cfg.string() + " --out " + path("d")).code, 0);
    std::fstream f(path("d/posedit.nta"), std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    EXPECT_EQ(run("eval-bench --episodes 2 --out " + path("d")).code, 2);
}

TEST_F(Cli, GradcheckCleanTree) {
    auto r = run("gradcheck --out " + path("g"));
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = slurp(path("g/gradcheck.csv"));
    EXPECT_EQ(csv.rfind("op,worst_rel_error,max_abs_error,entries_checked,tol,passed\n", 0), 0u);
    // One CSV row and one printed line per checked op.
    EXPECT_EQ(count_lines(csv) - 1, count_lines(r.out));
    for (const char* op : {"\nmatmul,", "\nsoftmax,", "\nattention_causal,", "\nmoe_lm,", "\nposedit,"}) {
        EXPECT_NE(csv.find(op), std::string::npos) << op;
    }
    EXPECT_EQ(csv.find(",0\n"), std::string::npos);
}

TEST_F(Cli, GradcheckNamesACorruptedBackwardRule) {
    auto r = run("gradcheck --inject-backward-fault layer_norm --out " + path("g"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("layer_norm"), std::string::npos) << r.err;
    EXPECT_EQ(r.err.find("matmul"), std::string::npos) << r.err;
    EXPECT_NE(slurp(path("g/gradcheck.csv")).find("\nlayer_norm,"), std::string::npos);
}

TEST_F(Cli, GradcheckRejects32Bit) { EXPECT_EQ(run("gradcheck --precision f32 --out " + path("g")).code, 2); }

TEST_F(Cli, LanguageModelPipeline) {
    auto lm = write("lm.json", R"({"train": {"steps_per_epoch": 10, "batch_size": 4},
                                   "corpus": {"train_chars": 5000, "val_chars": 2000}})");
    auto ft = write("ft.json", R"({"train": {"epochs": 2, "steps_per_epoch": 3, "batch_size": 4, "val_windows": 8},
                                   "corpus": {"train_chars": 5000, "val_chars": 2000}})");
    const std::string out = " --out " + path("p");
    ASSERT_EQ(run("train-lm --config " + lm.string() + out).code, 0);

    auto side = nlohmann::json::parse(slurp(path("p/dense.json")));
    for (const char* key : {"config", "activation", "precision", "seed"}) EXPECT_TRUE(side.contains(key)) << key;
    EXPECT_EQ(side["activation"], "silu");
    EXPECT_EQ(side["precision"], "f32");

    auto conv = run("convert-moe" + out);
    ASSERT_EQ(conv.code, 0) << conv.err;
    const auto pos = conv.out.find("max |dlogit| ");
    ASSERT_NE(pos, std::string::npos) << conv.out;
    EXPECT_LE(std::stod(conv.out.substr(pos + 13)), 1e-6);
    EXPECT_TRUE(fs::exists(path("p/moe.nta")));

    ASSERT_EQ(run("finetune-moe --config " + ft.string() + out).code, 0);
    const std::string first = slurp(path("p/finetune_moe.csv"));
    EXPECT_EQ(first.rfind("epoch,train_ce,val_ce,balance_loss,F_0,F_1,F_2,F_3\n", 0), 0u) << first;
    EXPECT_EQ(count_lines(first), 3);

    ASSERT_EQ(run("finetune-moe --config " + ft.string() + out).code, 0);
    EXPECT_EQ(slurp(path("p/finetune_moe.csv")), first);

    ASSERT_EQ(run("finetune-moe --checkpoint " + path("p/dense.nta") + " --config " + ft.string() + out).code, 0);
    EXPECT_EQ(slurp(path("p/finetune_dense.csv")).rfind("epoch,train_ce,val_ce,balance_loss\n", 0), 0u);

    // A fine-tuned checkpoint cannot be converted again.
    EXPECT_EQ(run("convert-moe --checkpoint " + path("p/dense_lora.nta") + out).code, 2);
}

TEST_F(Cli, OracleBenchmarkReport) {
    auto r = run("eval-bench --model oracle --episodes 20 --out " + path("o"));
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = slurp(path("o/bench.csv"));
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    EXPECT_EQ(line, "name,success_rate,n_episodes,infer_steps,wall_ms_per_episode,evals_per_episode");
    for (const char* name : {"zone", "bowl", "stacking", "avg"}) {
        std::getline(lines, line);
        EXPECT_EQ(line.rfind(std::string(name) + ",1,", 0), 0u) << line;
    }
    EXPECT_EQ(count_lines(slurp(path("o/bench_episodes.csv"))), 61);
}

TEST_F(Cli, PoseDiTStepCountsAndReproducibleFromResolvedConfig) {
    auto cfg = write("pd.json", R"({"train": {"steps": 4, "batch_size": 4, "log_every": 2},
                                    "data": {"seed_end": 10}, "model": {"hidden": 8, "n_blocks": 1, "n_heads": 2}})");
    ASSERT_EQ(run("train-posedit --config " + cfg.string() + " --out " + path("a")).code, 0);
    auto r = run("eval-bench --episodes 4 --compare-steps 100 --out " + path("a"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(slurp(path("a/bench.csv")).find("\navg,"), std::string::npos);
    EXPECT_NE(slurp(path("a/bench.csv")).find(",4,"), std::string::npos);
    const std::string cmp = slurp(path("a/bench_steps100.csv"));
    EXPECT_NE(cmp.find(",100,"), std::string::npos) << cmp;
    EXPECT_NE(r.out.find("speedup"), std::string::npos);

    // The resolved config alone reproduces the run.
    auto resolved = nlohmann::json::parse(slurp(path("a/train-posedit.config.json")));
    resolved["out_dir"] = path("b");
    auto again = write("again.json", resolved.dump());
    ASSERT_EQ(run("train-posedit --config " + again.string()).code, 0);
    EXPECT_EQ(slurp(path("a/posedit.nta")), slurp(path("b/posedit.nta")));
    EXPECT_EQ(slurp(path("a/posedit_loss.csv")), slurp(path("b/posedit_loss.csv")));
}

TEST_F(Cli, Flow2DWritesEvaluationCsv) {
    auto cfg = write("fl.json", R"({"train": {"steps": 20, "batch_size": 32, "eval_samples": 50, "log_every": 10},
                                    "model": {"hidden": 16}, "dump_samples": true})");
    ASSERT_EQ(run("train-flow2d --precision f64 --config " + cfg.string() + " --out " + path("f")).code, 0);
    const std::string csv = slurp(path("f/flow_eval.csv"));
    EXPECT_EQ(csv.rfind("step_count,energy_distance,straightness,wall_ms\n", 0), 0u);
    EXPECT_EQ(count_lines(csv), 4);
    EXPECT_EQ(count_lines(slurp(path("f/samples_4.csv"))), 51);
    EXPECT_EQ(nlohmann::json::parse(slurp(path("f/flow2d.json")))["precision"], "f64");
}

}  // namespace
