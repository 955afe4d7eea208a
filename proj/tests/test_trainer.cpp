#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ustep/optim.hpp"
#include "ustep/trainer.hpp"

using namespace ustep;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    return fs::temp_directory_path() / ("ustep_trainer_" + name);
}

GenConfig tiny_gen(uint64_t seed) {
    GenConfig cfg;
    cfg.num_sequences = 8;
    cfg.observed = 4;
    cfg.horizon = 4;
    cfg.height = 12;
    cfg.width = 12;
    cfg.object_size = 3;
    cfg.seed = seed;
    return cfg;
}

TrainConfig tiny_train() {
    TrainConfig cfg;
    cfg.arch.delta_t = 2;
    cfg.arch.delta_T = 4;
    cfg.arch.channels = 1;
    cfg.arch.height = 12;
    cfg.arch.width = 12;
    cfg.arch.hidden = 4;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.lr = 1e-3;
    cfg.seed = 7;
    return cfg;
}

} // namespace

TEST(TrainConfig, LearningRateGrid) {
    EXPECT_TRUE(lr_on_grid(1e-2));
    EXPECT_TRUE(lr_on_grid(5e-4));
    EXPECT_FALSE(lr_on_grid(0.02));

    TrainConfig cfg = tiny_train();
    cfg.lr = 0.02;
    cfg.strict_lr_grid = true;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.lr = 1e-3;
    EXPECT_NO_THROW(cfg.validate());
}

TEST(Train, ZeroLearningRateLeavesParametersAndLossConstant) {
    const Dataset ds = generate(tiny_gen(7));
    TrainConfig cfg = tiny_train();
    cfg.lr = 0.0;
    cfg.epochs = 3;
    const TrainResult result = train(cfg, ds, ds);
    ASSERT_EQ(result.log.epochs.size(), 3u);
    const double first = result.log.epochs[0].train_loss;
    for (const auto& e : result.log.epochs) {
        EXPECT_DOUBLE_EQ(e.train_loss, first);
    }

    // Parameters equal a freshly initialized model with the same seed.
    SplitMix64 seeder(cfg.seed);
    UstepModel fresh(cfg.arch, seeder.next());
    for (const auto& [name, tensor] : result.best_params) {
        const auto got = tensor.data();
        const Tensor& want_t = fresh.params().at(name);
        const auto want = want_t.data();
        ASSERT_EQ(got.size(), want.size()) << name;
        for (size_t i = 0; i < got.size(); ++i) {
            ASSERT_EQ(got[i], want[i]) << name << "[" << i << "]";
        }
    }
}

TEST(Train, FixedSeedReproducesRunLogBitwise) {
    const Dataset ds = generate(tiny_gen(7));
    const TrainConfig cfg = tiny_train();
    const TrainResult a = train(cfg, ds, ds);
    const TrainResult b = train(cfg, ds, ds);
    ASSERT_EQ(a.log.epochs.size(), b.log.epochs.size());
    for (size_t i = 0; i < a.log.epochs.size(); ++i) {
        EXPECT_EQ(a.log.epochs[i].train_loss, b.log.epochs[i].train_loss);
        EXPECT_EQ(a.log.epochs[i].eval_mse, b.log.epochs[i].eval_mse);
    }
    EXPECT_EQ(a.best_epoch, b.best_epoch);
    for (const auto& [name, tensor] : a.best_params) {
        const auto av = tensor.data();
        const Tensor& bt = b.best_params.at(name);
        const auto bv = bt.data();
        for (size_t i = 0; i < av.size(); ++i) {
            ASSERT_EQ(av[i], bv[i]) << name;
        }
    }
}

TEST(Train, LossDescendsOnRepeatedBatch) {
    // 20 optimizer steps on one repeated batch at lr 1e-3; Adam transients
    // may break monotonicity at most twice.
    const Dataset ds = generate(tiny_gen(3));
    UstepConfig arch = tiny_train().arch;
    UstepModel model(arch, 42);
    model.params().zero_grad();
    AdamState state;
    const AdamWOptions opts{1e-3, 0.0};

    std::vector<FrameSequence> batch;
    for (int64_t i = 0; i < 4; ++i) {
        batch.push_back(ds.sequence(i));
    }
    int violations = 0;
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 20; ++step) {
        Tensor loss = Tensor::scalar(0.0);
        for (auto& seq : batch) {
            loss = add(loss, model.training_loss(seq));
        }
        loss = scale(loss, 1.0 / static_cast<double>(batch.size()));
        const double value = loss.item();
        if (value > prev) {
            ++violations;
        }
        prev = value;
        backward(loss);
        adamw_step(model.params(), state, opts);
        model.params().zero_grad();
    }
    EXPECT_LE(violations, 2);
}

TEST(Train, BestCheckpointTracksEvalMse) {
    const Dataset ds = generate(tiny_gen(5));
    TrainConfig cfg = tiny_train();
    cfg.epochs = 4;
    const TrainResult result = train(cfg, ds, ds);
    double best = std::numeric_limits<double>::infinity();
    int64_t best_epoch = 0;
    for (const auto& e : result.log.epochs) {
        if (e.eval_mse < best) {
            best = e.eval_mse;
            best_epoch = e.epoch;
        }
    }
    EXPECT_EQ(result.best_epoch, best_epoch);
    EXPECT_DOUBLE_EQ(result.best_eval_mse, best);
}

TEST(Train, GeometryMismatchRejected) {
    const Dataset ds = generate(tiny_gen(5));
    TrainConfig cfg = tiny_train();
    cfg.arch.height = 16;
    EXPECT_THROW(train(cfg, ds, ds), ConfigError);
}

TEST(RunLog, JsonlHasOneEpochPerLine) {
    RunLog log;
    log.epochs.push_back({1, 0.5, 0.4, 1.25});
    log.epochs.push_back({2, 0.3, 0.2, 1.5});
    const std::string text = log.to_jsonl();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
    EXPECT_NE(text.find("\"epoch\":1"), std::string::npos);
    EXPECT_NE(text.find("\"train_loss\":0.5"), std::string::npos);
    EXPECT_NE(text.find("\"eval_mse\":0.2"), std::string::npos);
}

TEST(Checkpoint, RoundTripMatchesFloatPrecision) {
    UstepConfig arch = tiny_train().arch;
    UstepModel model(arch, 99);
    const fs::path path = temp_path("roundtrip.ustc");
    save_checkpoint(model.params(), path);
    const ParamStore loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.size(), model.params().size());
    for (const auto& [name, tensor] : model.params()) {
        const Tensor& got_t = loaded.at(name);
        const auto got = got_t.data();
        const auto want = tensor.data();
        ASSERT_EQ(got.size(), want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            // The format stores f32; the round trip is exact at that width.
            ASSERT_EQ(got[i], static_cast<double>(static_cast<float>(want[i]))) << name;
        }
    }

    // A second save of the loaded store is byte-identical.
    const fs::path again = temp_path("roundtrip2.ustc");
    save_checkpoint(loaded, again);
    std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), {});
    const std::string b2((std::istreambuf_iterator<char>(f2)), {});
    EXPECT_EQ(b1, b2);
    fs::remove(path);
    fs::remove(again);
}

TEST(Checkpoint, UnknownVersionRejected) {
    const fs::path path = temp_path("badversion.ustc");
    {
        std::ofstream out(path, std::ios::binary);
        out << "USTC1";
        out.put(9); // unsupported version
        for (int i = 0; i < 8; ++i) {
            out.put(0);
        }
    }
    EXPECT_THROW(load_checkpoint(path), DataError);
    fs::remove(path);
}

TEST(Checkpoint, BadMagicRejected) {
    const fs::path path = temp_path("badmagic.ustc");
    {
        std::ofstream out(path, std::ios::binary);
        out << "XXXXX";
        out.put(1);
    }
    try {
        load_checkpoint(path);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("USTC1"), std::string::npos);
    }
    fs::remove(path);
}

TEST(Checkpoint, LoadingIntoMismatchedConfigNamesFirstOffender) {
    UstepConfig arch = tiny_train().arch;
    UstepModel model(arch, 1);
    const fs::path path = temp_path("mismatch.ustc");
    save_checkpoint(model.params(), path);
    ParamStore loaded = load_checkpoint(path);

    UstepConfig other = arch;
    other.hidden = arch.hidden + 1;
    try {
        UstepModel bad(other, std::move(loaded));
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        // The first offending parameter in creation order is named.
        EXPECT_NE(std::string(e.what()).find("micro_enc.in.weight"), std::string::npos);
    }
    fs::remove(path);
}

TEST(Evaluate, CopyLastFloorRunsThroughTheSamePath) {
    const Dataset ds = generate(tiny_gen(11));
    CopyLastModel floor;
    const auto report = evaluate(floor, ds, 4, {.model = "floor"});
    EXPECT_EQ(report.per_frame.size(), 4u);
    EXPECT_GT(report.aggregate.mse, 0.0); // objects move, copying is imperfect
    EXPECT_EQ(report.metadata.model, "floor");
}

TEST(Evaluate, HorizonShapesCoverAllThreeRegimes) {
    // Equal (4->4), extended (4->8), reduced (4->1) report shapes.
    for (const int64_t horizon : {4, 8, 1}) {
        GenConfig gen = tiny_gen(13);
        gen.observed = 4;
        gen.horizon = horizon;
        const Dataset ds = generate(gen);
        CopyLastModel floor;
        const auto report = evaluate(floor, ds, horizon, {});
        EXPECT_EQ(report.per_frame.size(), static_cast<size_t>(horizon));
    }
}

TEST(Evaluate, RejectsHorizonBeyondData) {
    const Dataset ds = generate(tiny_gen(11)); // L = 8
    CopyLastModel floor;
    EXPECT_THROW(evaluate(floor, ds, 8, {}), ConfigError);
    EXPECT_THROW(evaluate(floor, ds, 0, {}), ConfigError);
}

TEST(Evaluate, ThreadedEvaluationMatchesSerial) {
    const Dataset ds = generate(tiny_gen(17));
    UstepConfig arch = tiny_train().arch;
    UstepModel model(arch, 55);
    const double serial = evaluate_mse(model, ds, 4);
    setenv("USTEP_THREADS", "3", 1);
    const double threaded = evaluate_mse(model, ds, 4);
    unsetenv("USTEP_THREADS");
    EXPECT_EQ(serial, threaded); // fixed-order reduction keeps bits equal
}
