#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ustep/data.hpp"
#include "ustep/metrics.hpp"
#include "ustep/model.hpp"

namespace ustep {

/// Learning rates the CLI accepts under --strict-grid.
inline constexpr double kLearningRateGrid[] = {1e-2, 5e-3, 1e-3, 5e-4, 1e-4};

bool lr_on_grid(double lr);

struct TrainConfig {
    ModelKind model = ModelKind::ustep;
    UstepConfig arch; // rec-lite ignores the segment fields, recfree-lite
                      // uses delta_T as its window
    int64_t epochs = 1;
    int64_t batch_size = 16;
    double lr = 0.01;
    double weight_decay = 0.05;
    bool strict_lr_grid = false;
    uint64_t seed = 0;
    /// Frames predicted when measuring eval MSE per epoch. 0 selects
    /// half the sequence, clamped so at least two micro segments remain
    /// observed.
    int64_t eval_horizon = 0;

    void validate() const;
};

struct EpochLog {
    int64_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double eval_mse = 0.0;
    double seconds = 0.0;

    std::string to_json() const; // one JSON object, no trailing newline
};

struct RunLog {
    std::vector<EpochLog> epochs;
    std::string to_jsonl() const;
};

struct TrainResult {
    RunLog log;
    ParamStore best_params;
    double best_eval_mse = 0.0;
    int64_t best_epoch = 0;
    int64_t resolved_eval_horizon = 0;
};

/// Deterministic mini-batch training: batches follow a seed-derived
/// shuffle, per-batch gradients are mean-reduced in index order, and the
/// checkpoint with the best eval MSE is retained. `eval` may equal `train`.
/// `on_epoch`, when set, fires after every epoch (progressive run logs).
TrainResult train(const TrainConfig& config, const Dataset& train, const Dataset& eval,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Rollout MSE (clamped, averaged over sequences and frames) of the current
/// parameters; the quantity used for best-checkpoint selection.
double evaluate_mse(const Predictor& predictor, const Dataset& dataset, int64_t horizon);

/// Full rollout evaluation: splits each sequence into observed frames and a
/// trailing `horizon`-frame target, predicts, and builds the frame-wise
/// report. Parallelizes over sequences up to USTEP_THREADS with a
/// fixed-order reduction.
metrics::MetricsReport evaluate(const Predictor& predictor, const Dataset& dataset,
                                int64_t horizon, metrics::ReportMetadata metadata);

/// Checkpoint file: magic "USTC1", u8 version, u32 parameter count, then
/// per parameter {u16 name length, name, u8 ndim, u32 dims..., f32 data},
/// all little-endian. Values are stored at f32 precision.
void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

/// Reads USTEP_THREADS (default 1; values below 1 clamp to 1).
int worker_thread_cap();

} // namespace ustep
