#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run run(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / ("itcfn_cli_" + std::to_string(::getpid()) + ".log");
    const std::string cmd = std::string(ITCFN_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

std::string bytes_of(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() / ("itcfn_cli_" + std::to_string(::getpid()) + "_" +
                                           ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    fs::path write_config(const std::string& name, const std::string& text) const {
        const fs::path p = dir / name;
        std::ofstream(p) << text;
        return p;
    }

    fs::path tiny() const {
        return write_config("tiny.json", R"({
  "cohort": {"n_subjects": 16, "volume_shape": [8, 8, 8]},
  "train": {"epochs_stage1": 2, "epochs_stage2": 2, "k_folds": 2},
  "mmg": {"codebook_size": 8, "code_dim": 4},
  "fusion": {"tokens": 4, "token_dim": 4, "heads": 2, "key_dim": 4, "classifier_hidden": 8}
})");
    }

    fs::path dir;
};

}  // namespace

TEST_F(Cli, PrintDefaultsIsCompleteConfig) {
    const auto r = run("gen --print-defaults");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto j = nlohmann::json::parse(r.output);
    for (const char* k : {"cohort", "train", "loss", "mmg", "fusion", "ablation", "output_dir"}) EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(j["train"]["epochs_stage1"], 30);
}

TEST_F(Cli, GenWritesManifest) {
    const auto cfg = write_config("c.json", R"({"cohort": {"n_subjects": 10, "volume_shape": [8, 8, 8]}})");
    const auto r = run("gen --config " + cfg.string() + " --out " + (dir / "cohort").string() + " --seed 5");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir / "cohort" / "manifest.csv"));
    EXPECT_NE(r.output.find("config_hash"), std::string::npos);
}

TEST_F(Cli, GenRejectsOutOfRangeRate) {
    const auto cfg = write_config("bad.json", R"({"cohort": {"missing_pet_rate": 1.5}})");
    const auto r = run("gen --config " + cfg.string() + " --out " + (dir / "x").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("missing_pet_rate"), std::string::npos) << r.output;
}

TEST_F(Cli, UnknownKeyIsConfigError) {
    const auto cfg = write_config("bad.json", R"({"cohort": {"n_subject": 10}})");
    const auto r = run("gen --config " + cfg.string() + " --out " + (dir / "x").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("cohort.n_subject"), std::string::npos) << r.output;
}

TEST_F(Cli, UnwritableOutputIsIoError) {
    const auto cfg = write_config("c.json", R"({"cohort": {"n_subjects": 10, "volume_shape": [8, 8, 8]}})");
    fs::path target;
    if (::geteuid() == 0) {
        // Permission bits do not stop root; a regular file as parent directory does.
        std::ofstream(dir / "file") << "x";
        target = dir / "file" / "out";
    } else {
        fs::create_directories(dir / "ro");
        fs::permissions(dir / "ro", fs::perms::owner_read | fs::perms::owner_exec);
        target = dir / "ro" / "out";
    }
    const auto r = run("gen --config " + cfg.string() + " --out " + target.string());
    EXPECT_EQ(r.code, 3) << r.output;
    fs::permissions(dir, fs::perms::owner_all, fs::perm_options::add);
    if (fs::exists(dir / "ro")) fs::permissions(dir / "ro", fs::perms::owner_all);
}

TEST_F(Cli, MissingConfigFileIsIoError) {
    EXPECT_EQ(run("gen --config " + (dir / "absent.json").string()).code, 3);
}

TEST_F(Cli, TrainStagesFromGeneratedCohort) {
    const auto cfg = tiny();
    ASSERT_EQ(run("gen --config " + cfg.string() + " --out " + (dir / "data").string()).code, 0);
    auto r = run("train-mmg --config " + cfg.string() + " --data " + (dir / "data").string() + " --out " +
                 (dir / "s1").string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir / "s1" / "mmg.itck"));
    EXPECT_TRUE(fs::exists(dir / "s1" / "mmg_loss.csv"));
    r = run("train-fusion --config " + cfg.string() + " --data " + (dir / "data").string() + " --mmg " +
            (dir / "s1" / "mmg.itck").string() + " --out " + (dir / "s2").string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir / "s2" / "fusion.itck"));
    EXPECT_NE(bytes_of(dir / "s2" / "fusion_loss.csv").find("epoch,total,focal,sdm_mt,sdm_pt,sdm_mp"), std::string::npos);
}

TEST_F(Cli, IncompatibleMmgCheckpointFails) {
    const auto cfg = tiny();
    ASSERT_EQ(run("train-mmg --config " + cfg.string() + " --out " + (dir / "s1").string()).code, 0);
    const auto other = write_config("other.json", R"({"cohort": {"n_subjects": 16, "volume_shape": [16, 16, 16]},
      "train": {"epochs_stage2": 1}})");
    const auto r = run("train-fusion --config " + other.string() + " --mmg " + (dir / "s1" / "mmg.itck").string() +
                       " --out " + (dir / "s2").string());
    EXPECT_EQ(r.code, 3) << r.output;
    EXPECT_NE(r.output.find("volume shape"), std::string::npos) << r.output;
}

TEST_F(Cli, CvAblationAllIsDeterministicAndParallelMatchesSerial) {
    const auto cfg = tiny();
    ASSERT_EQ(run("cv --config " + cfg.string() + " --ablation all --out " + (dir / "a").string()).code, 0);
    ASSERT_EQ(run("cv --config " + cfg.string() + " --ablation all --out " + (dir / "b").string()).code, 0);
    auto r = run("cv --config " + cfg.string() + " --ablation all --parallel-folds 2 --out " + (dir / "p").string());
    ASSERT_EQ(r.code, 0) << r.output;
    for (const char* mode : {"none", "mmg_only", "tcaf_only", "mmg_tcaf"}) {
        const std::string name = std::string(mode) + ".json";
        ASSERT_TRUE(fs::exists(dir / "a" / name)) << name;
        EXPECT_EQ(bytes_of(dir / "a" / name), bytes_of(dir / "b" / name)) << name;
        EXPECT_EQ(bytes_of(dir / "a" / name), bytes_of(dir / "p" / name)) << name;
        const auto j = nlohmann::json::parse(bytes_of(dir / "a" / name));
        EXPECT_EQ(j["folds"].size(), 2u);
        EXPECT_EQ(j["mode"], mode);
    }
    EXPECT_TRUE(fs::exists(dir / "a" / "fold_0" / "mmg.itck"));
    EXPECT_TRUE(fs::exists(dir / "a" / "mmg_tcaf" / "fold_1" / "fusion_loss.csv"));
}

TEST_F(Cli, CvUsesConfigFlagsWithoutAblation) {
    const auto cfg = write_config("c.json", R"({
  "cohort": {"n_subjects": 12, "volume_shape": [8, 8, 8]},
  "train": {"epochs_stage2": 1, "k_folds": 2},
  "fusion": {"tokens": 2, "token_dim": 4, "heads": 2, "key_dim": 4, "classifier_hidden": 4},
  "ablation": {"use_mmg": false, "use_tcaf": false}})");
    const auto r = run("cv --config " + cfg.string() + " --out " + dir.string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir / "none.json"));
}

TEST_F(Cli, VerifyPassesWithAtLeastTwentyChecks) {
    const auto r = run("verify");
    EXPECT_EQ(r.code, 0) << r.output;
    std::size_t pass = 0, pos = 0;
    while ((pos = r.output.find("\nPASS ", pos)) != std::string::npos) ++pass, ++pos;
    EXPECT_GE(pass, 20u) << r.output;
}

TEST_F(Cli, VerifyMutationFailsNamingIdentity) {
    const auto r = run("verify --mutate focal-sign");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("FAILED: focal(gamma=0) == cross-entropy"), std::string::npos) << r.output;
}

TEST_F(Cli, BadUsageExitsNonZero) {
    EXPECT_NE(run("").code, 0);
    EXPECT_EQ(run("cv --ablation both").code, 2);
}
