#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return USTEP_CLI_PATH; }

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    const fs::path out_file = fs::temp_directory_path() / "ustep_cli_out.txt";
    const std::string cmd =
        std::string(cli_path()) + " " + args + " > " + out_file.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    std::stringstream ss;
    ss << in.rdbuf();
    result.output = ss.str();
    return result;
}

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / "ustep_cli_test";
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string p(const std::string& name) const { return (dir_ / name).string(); }

    std::string gen_small_dataset(const std::string& name, uint64_t seed = 7) {
        const std::string path = p(name);
        const auto r = run_cli("gen-data --num 6 --T 4 --Tp 4 --H 12 --W 12 --objects 1 "
                               "--size 3 --seed " +
                               std::to_string(seed) + " --out " + path);
        EXPECT_EQ(r.exit_code, 0) << r.output;
        return path;
    }

    std::string train_small_checkpoint(const std::string& data, const std::string& name,
                                       const std::string& extra = "") {
        const std::string ckpt = p(name);
        const auto r = run_cli("train --data " + data +
                               " --model ustep --dt 2 --dT 4 --epochs 2 --batch 4 "
                               "--hidden 4 --lr 0.001 --seed 7 " +
                               extra + " --out " + ckpt);
        EXPECT_EQ(r.exit_code, 0) << r.output;
        return ckpt;
    }

    fs::path dir_;
};

} // namespace

TEST_F(CliTest, GenDataWritesFileAndEchoesConfig) {
    const auto r = run_cli("gen-data --num 256 --T 4 --Tp 4 --H 16 --W 16 --objects 1 "
                           "--seed 7 --out " +
                           p("data.ustp"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("N=256"), std::string::npos);
    EXPECT_NE(r.output.find("L=8"), std::string::npos);
    EXPECT_NE(r.output.find("seed=7"), std::string::npos);
    EXPECT_TRUE(fs::exists(p("data.ustp")));
}

TEST_F(CliTest, GenDataIsByteDeterministic) {
    gen_small_dataset("a.ustp");
    gen_small_dataset("b.ustp");
    EXPECT_EQ(read_bytes(p("a.ustp")), read_bytes(p("b.ustp")));
}

TEST_F(CliTest, GenDataVariantFlag) {
    const auto r = run_cli("gen-data --num 2 --T 3 --Tp 3 --H 12 --W 12 --size 3 "
                           "--variant dynamic-speed --sigma-v 0.5 --seed 1 --out " +
                           p("dyn.ustp"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("variant=dynamic-speed"), std::string::npos);
    EXPECT_NE(r.output.find("sigma-v=0.5"), std::string::npos);
}

TEST_F(CliTest, GenDataConfigFileWithInlineOverride) {
    {
        std::ofstream cfg(p("gen.cfg"));
        cfg << "# toy generator config\n"
            << "num = 4\nT = 3\nTp = 3\nH = 12\nW = 12\nsize = 3\nseed = 5\n";
    }
    const auto r =
        run_cli("gen-data --config " + p("gen.cfg") + " --num 9 --out " + p("cfg.ustp"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("N=9"), std::string::npos); // inline flag wins
    EXPECT_NE(r.output.find("T=3"), std::string::npos);
}

TEST_F(CliTest, UnknownFlagIsUsageError) {
    const auto r = run_cli("gen-data --does-not-exist 1 --out " + p("x.ustp"));
    EXPECT_EQ(r.exit_code, 2);
}

TEST_F(CliTest, InvalidConfigIsExitTwo) {
    // object size does not fit the frame
    const auto r =
        run_cli("gen-data --num 2 --T 3 --Tp 3 --H 8 --W 8 --size 8 --out " + p("x.ustp"));
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.output.find("object_size"), std::string::npos);
}

TEST_F(CliTest, TrainEchoesGuidelineDt) {
    const std::string data = gen_small_dataset("train.ustp");
    const auto r = run_cli("train --data " + data +
                           " --model ustep --epochs 1 --batch 4 --hidden 4 --seed 7 --out " +
                           p("m.ustc"));
    ASSERT_EQ(r.exit_code, 0) << r.output;
    // T + T' = 8 is a short video: dt = 2, window defaults to 2*dt.
    EXPECT_NE(r.output.find("dt=2 (guideline)"), std::string::npos);
    EXPECT_NE(r.output.find("dT=4 (default)"), std::string::npos);
    EXPECT_TRUE(fs::exists(p("m.ustc")));
    EXPECT_TRUE(fs::exists(p("m.ustc.runlog.jsonl")));
}

TEST_F(CliTest, TrainRejectsIncompatibleSegmentLengths) {
    const std::string data = gen_small_dataset("train.ustp");
    const auto r = run_cli("train --data " + data +
                           " --dt 2 --dT 5 --epochs 1 --out " + p("m.ustc"));
    EXPECT_EQ(r.exit_code, 2);
}

TEST_F(CliTest, TrainStrictGridRejectsOffGridRate) {
    const std::string data = gen_small_dataset("train.ustp");
    const auto r = run_cli("train --data " + data +
                           " --dt 2 --dT 4 --epochs 1 --lr 0.02 --strict-grid --out " +
                           p("m.ustc"));
    EXPECT_EQ(r.exit_code, 2);
    const auto ok = run_cli("train --data " + data +
                            " --dt 2 --dT 4 --epochs 1 --batch 4 --hidden 4 --lr 0.001 "
                            "--strict-grid --seed 1 --out " +
                            p("m.ustc"));
    EXPECT_EQ(ok.exit_code, 0) << ok.output;
}

TEST_F(CliTest, TrainDispatchesBaselines) {
    const std::string data = gen_small_dataset("train.ustp");
    const auto rec = run_cli("train --data " + data +
                             " --model rec-lite --epochs 1 --batch 4 --hidden 3 --seed 1 "
                             "--out " +
                             p("rec.ustc"));
    ASSERT_EQ(rec.exit_code, 0) << rec.output;
    const auto free = run_cli("train --data " + data +
                              " --model recfree-lite --dt 2 --dT 4 --epochs 1 --batch 4 "
                              "--hidden 3 --seed 1 --out " +
                              p("free.ustc"));
    ASSERT_EQ(free.exit_code, 0) << free.output;
    EXPECT_TRUE(fs::exists(p("rec.ustc")));
    EXPECT_TRUE(fs::exists(p("free.ustc")));
}

TEST_F(CliTest, TrainIsByteDeterministic) {
    const std::string data = gen_small_dataset("train.ustp");
    train_small_checkpoint(data, "a.ustc");
    train_small_checkpoint(data, "b.ustc");
    EXPECT_EQ(read_bytes(p("a.ustc")), read_bytes(p("b.ustc")));
}

TEST_F(CliTest, MissingDataFileIsIoError) {
    const auto r = run_cli("train --data " + p("missing.ustp") + " --epochs 1 --out " +
                           p("m.ustc"));
    EXPECT_EQ(r.exit_code, 4);
}

TEST_F(CliTest, EvalProducesCsvAndJsonReports) {
    const std::string data = gen_small_dataset("d.ustp");
    const std::string ckpt = train_small_checkpoint(data, "m.ustc");

    const auto csv = run_cli("eval --data " + data + " --ckpt " + ckpt +
                             " --Tp 4 --report csv --out " + p("r.csv"));
    ASSERT_EQ(csv.exit_code, 0) << csv.output;
    std::ifstream in(p("r.csv"));
    std::string line;
    int rows = 0;
    std::getline(in, line);
    EXPECT_EQ(line, "frame_index,mse,mae,ssim,psnr");
    while (std::getline(in, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 5); // 4 per-frame rows plus aggregate

    const auto json = run_cli("eval --data " + data + " --ckpt " + ckpt +
                              " --Tp 4 --report json --out " + p("r.json"));
    ASSERT_EQ(json.exit_code, 0) << json.output;
    const std::string body = read_bytes(p("r.json"));
    EXPECT_NE(body.find("\"dataset_hash\""), std::string::npos);
    EXPECT_NE(body.find("\"per_frame\""), std::string::npos);
}

TEST_F(CliTest, EvalIsByteDeterministic) {
    const std::string data = gen_small_dataset("d.ustp");
    const std::string ckpt = train_small_checkpoint(data, "m.ustc");
    run_cli("eval --data " + data + " --ckpt " + ckpt + " --Tp 4 --out " + p("r1.csv"));
    run_cli("eval --data " + data + " --ckpt " + ckpt + " --Tp 4 --out " + p("r2.csv"));
    EXPECT_EQ(read_bytes(p("r1.csv")), read_bytes(p("r2.csv")));
}

TEST_F(CliTest, EvalHorizonBeyondStoredFramesFails) {
    const std::string data = gen_small_dataset("d.ustp"); // L = 8
    const std::string ckpt = train_small_checkpoint(data, "m.ustc");
    const auto r = run_cli("eval --data " + data + " --ckpt " + ckpt + " --Tp 9 --out " +
                           p("r.csv"));
    EXPECT_EQ(r.exit_code, 3);
    EXPECT_NE(r.output.find("no ground truth"), std::string::npos);
}

TEST_F(CliTest, CompareEmitsFloorAndModelsSorted) {
    const std::string data = gen_small_dataset("d.ustp");
    const std::string a = train_small_checkpoint(data, "alpha.ustc");
    const std::string b = train_small_checkpoint(data, "beta.ustc", "--ablate-cross-segment");
    const auto r = run_cli("compare --data " + data + " --ckpt " + a + " --ckpt " + b +
                           " --Tp 4 --out " + p("cmp.csv"));
    ASSERT_EQ(r.exit_code, 0) << r.output;

    std::ifstream in(p("cmp.csv"));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "model,frame_index,mse,mae,ssim,psnr");
    std::vector<std::string> models;
    int rows = 0;
    while (std::getline(in, line)) {
        const std::string model = line.substr(0, line.find(','));
        if (models.empty() || models.back() != model) {
            models.push_back(model);
        }
        ++rows;
    }
    // models x (Tp + 1) rows, model blocks in sorted order, floor present.
    EXPECT_EQ(rows, 3 * 5);
    ASSERT_EQ(models.size(), 3u);
    EXPECT_EQ(models[0], "alpha");
    EXPECT_EQ(models[1], "beta");
    EXPECT_EQ(models[2], "floor");
}

TEST_F(CliTest, CompareNamesFailingModel) {
    const std::string data = gen_small_dataset("d.ustp");
    const fs::path bogus = dir_ / "broken.ustc";
    {
        std::ofstream out(bogus, std::ios::binary);
        out << "USTC1";
        out.put(1);
        out.put(0); // truncated counts
    }
    const auto r = run_cli("compare --data " + data + " --ckpt " + bogus.string() +
                           " --Tp 4 --out " + p("cmp.csv"));
    EXPECT_NE(r.exit_code, 0);
    EXPECT_NE(r.output.find("broken"), std::string::npos);
}

TEST_F(CliTest, GradcheckPassesAndReportsWorstParameter) {
    const auto r = run_cli("gradcheck --seed 7");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_NE(r.output.find("max relative error"), std::string::npos);
    EXPECT_NE(r.output.find("worst parameter"), std::string::npos);
    EXPECT_NE(r.output.find("PASS"), std::string::npos);
}

TEST_F(CliTest, GradcheckCorruptedGradientFails) {
    const auto r = run_cli("gradcheck --seed 7 --inject-grad-error 1.0");
    EXPECT_NE(r.exit_code, 0);
    EXPECT_NE(r.output.find("FAIL"), std::string::npos);
}
