// End-to-end smoke test of the command-line pipeline on a tiny configuration,
// including artifact determinism across reruns and exit-code contracts.
#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#ifndef PRIVRES_CLI_PATH
#define PRIVRES_CLI_PATH "privres"
#endif

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string(PRIVRES_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return {};
    RunResult res;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof(buf), pipe))
        res.output.append(buf, n);
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string dir() { return ::testing::TempDir() + "/cli"; }

// Small enough to train in seconds, still exercising every stage.
std::string common_flags() {
    return "--records 400 --types 6 --pretrain-epochs 4 --encoder-epochs 3 "
           "--orpo-epochs 2 --k 3";
}

}  // namespace

TEST(Cli, BudgetSubcommand) {
    auto res = run("budget --method privacyrestore --eps 75");
    EXPECT_EQ(res.exit_code, 0);
    auto j = nlohmann::json::parse(res.output);
    EXPECT_DOUBLE_EQ(j.at("budget").get<double>(), 150.0);

    auto table = run("budget --table");
    EXPECT_EQ(table.exit_code, 0);
    EXPECT_NE(table.output.find("dchi_full"), std::string::npos);

    // Missing inputs are a config error (exit 2).
    EXPECT_EQ(run("budget --method dchi_full").exit_code, 2);
    EXPECT_EQ(run("budget --method frobnicate --eps 1").exit_code, 2);
}

TEST(Cli, FullPipelineAndDeterminism) {
    const std::string d = dir();
    std::system(("rm -rf " + d + " && mkdir -p " + d).c_str());
    const std::string corpus = d + "/corpus.jsonl";
    const std::string registry = d + "/registry.json";

    auto gen = run("gen-data " + common_flags() + " --out-corpus " + corpus +
                   " --out-registry " + registry);
    ASSERT_EQ(gen.exit_code, 0) << gen.output;

    auto pre = run("pretrain " + common_flags() + " --corpus " + corpus +
                   " --registry " + registry + " --out-checkpoint " + d +
                   "/model.ckpt --out-client " + d + "/client.ckpt");
    ASSERT_EQ(pre.exit_code, 0) << pre.output;

    auto probe = run("probe " + common_flags() + " --corpus " + corpus +
                     " --registry " + registry + " --checkpoint " + d +
                     "/model.ckpt --out-report " + d + "/probes.json");
    ASSERT_EQ(probe.exit_code, 0) << probe.output;

    auto sel = run("select-heads " + common_flags() + " --report " + d +
                   "/probes.json --out-headset " + d + "/headset.json");
    ASSERT_EQ(sel.exit_code, 0) << sel.output;

    auto restore = run("train-restore " + common_flags() + " --corpus " + corpus +
                       " --registry " + registry + " --checkpoint " + d +
                       "/model.ckpt --client " + d + "/client.ckpt --headset " + d +
                       "/headset.json --out-bank " + d + "/bank.bin --out-history " +
                       d + "/history.json");
    ASSERT_EQ(restore.exit_code, 0) << restore.output;

    auto eval = run("eval " + common_flags() + " --corpus " + corpus + " --registry " +
                    registry + " --checkpoint " + d + "/model.ckpt --client " + d +
                    "/client.ckpt --bank " + d + "/bank.bin --split dev --out " + d +
                    "/eval.json");
    ASSERT_EQ(eval.exit_code, 0) << eval.output;
    auto report = nlohmann::json::parse(slurp(d + "/eval.json"));
    ASSERT_EQ(report.at("reports").size(), 3u);
    EXPECT_TRUE(report.contains("config_hash"));

    auto attack = run("attack " + common_flags() + " --kind aia --corpus " + corpus +
                      " --registry " + registry + " --client " + d +
                      "/client.ckpt --bank " + d + "/bank.bin --out " + d +
                      "/attack.json");
    ASSERT_EQ(attack.exit_code, 0) << attack.output;
    auto attack_report = nlohmann::json::parse(slurp(d + "/attack.json"));
    const double f1 = attack_report.at("micro_f1").get<double>();
    EXPECT_GE(f1, 0.0);
    EXPECT_LE(f1, 1.0);

    // Rerunning a stage with an identical config reproduces identical bytes.
    auto regen = run("gen-data " + common_flags() + " --out-corpus " + d +
                     "/corpus2.jsonl --out-registry " + d + "/registry2.json");
    ASSERT_EQ(regen.exit_code, 0);
    EXPECT_EQ(slurp(corpus), slurp(d + "/corpus2.jsonl"));
    EXPECT_EQ(slurp(registry), slurp(d + "/registry2.json"));

    auto rebank = run("train-restore " + common_flags() + " --corpus " + corpus +
                      " --registry " + registry + " --checkpoint " + d +
                      "/model.ckpt --client " + d + "/client.ckpt --headset " + d +
                      "/headset.json --out-bank " + d + "/bank2.bin");
    ASSERT_EQ(rebank.exit_code, 0);
    EXPECT_EQ(slurp(d + "/bank.bin"), slurp(d + "/bank2.bin"));

    // Missing inputs exit with the config-error code.
    EXPECT_EQ(run("pretrain --corpus " + d + "/nonexistent.jsonl --registry " +
                  registry)
                  .exit_code,
              2);
}
