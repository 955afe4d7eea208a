#include "ustep/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "ustep/optim.hpp"

namespace ustep {

bool lr_on_grid(double lr) {
    for (double v : kLearningRateGrid) {
        if (lr == v) {
            return true;
        }
    }
    return false;
}

void TrainConfig::validate() const {
    if (epochs < 1) {
        throw ConfigError("train: epochs must be at least 1");
    }
    if (batch_size < 1) {
        throw ConfigError("train: batch_size must be at least 1");
    }
    if (lr < 0.0 || !std::isfinite(lr)) {
        throw ConfigError("train: learning rate must be non-negative and finite");
    }
    if (weight_decay < 0.0 || !std::isfinite(weight_decay)) {
        throw ConfigError("train: weight decay must be non-negative");
    }
    if (strict_lr_grid && !lr_on_grid(lr)) {
        throw ConfigError("train: learning rate is not on the accepted grid");
    }
    if (eval_horizon < 0) {
        throw ConfigError("train: eval horizon must be non-negative");
    }
    if (model == ModelKind::copy_last) {
        throw ConfigError("train: the copy-last floor is not trainable");
    }
}

int worker_thread_cap() {
    const char* raw = std::getenv("USTEP_THREADS");
    if (raw == nullptr) {
        return 1;
    }
    const int value = std::atoi(raw);
    return value < 1 ? 1 : value;
}

namespace {

ParamStore clone_params(const ParamStore& params) {
    ParamStore copy;
    for (const auto& [name, tensor] : params) {
        copy.add(name, Tensor::from_data(tensor.shape(),
                                         {tensor.data().begin(), tensor.data().end()}, true));
    }
    return copy;
}

// Fisher-Yates with pinned draw order.
void shuffle_indices(std::vector<int64_t>& indices, Xoshiro256& rng) {
    for (size_t i = indices.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.next() % i);
        std::swap(indices[i - 1], indices[j]);
    }
}

int64_t resolve_eval_horizon(const TrainConfig& config, const Dataset& eval) {
    int64_t horizon = config.eval_horizon;
    if (horizon == 0) {
        horizon = eval.seq_length / 2;
    }
    if (config.model == ModelKind::ustep) {
        // Keep at least two observed micro segments for the rollout.
        const int64_t max_horizon = eval.seq_length - 2 * config.arch.delta_t;
        horizon = std::min(horizon, max_horizon);
    } else {
        horizon = std::min(horizon, eval.seq_length - 1);
    }
    if (horizon < 1) {
        throw ConfigError("train: sequences are too short to evaluate");
    }
    return horizon;
}

// Runs fn(i) for i in [0, n) on up to worker_thread_cap() threads.
// Workers take disjoint strides, so writes to per-index slots stay safe and
// any final reduction happens in index order on the caller's side.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    const int threads = std::min<int64_t>(worker_thread_cap(), n);
    if (threads <= 1) {
        for (int64_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (int64_t i = t; i < n; i += threads) {
                fn(i);
            }
        });
    }
    for (auto& th : pool) {
        th.join();
    }
}

} // namespace

double evaluate_mse(const Predictor& predictor, const Dataset& dataset, int64_t horizon) {
    if (horizon < 1 || horizon >= dataset.seq_length) {
        throw ConfigError("evaluate: horizon must leave at least one observed frame");
    }
    const int64_t observed_len = dataset.seq_length - horizon;
    std::vector<double> per_sequence(static_cast<size_t>(dataset.num_sequences), 0.0);
    parallel_for(dataset.num_sequences, [&](int64_t i) {
        const FrameSequence seq = dataset.sequence(i);
        const FrameSequence observed = seq.slice(0, observed_len);
        const FrameSequence predicted = predictor.predict(observed, horizon);
        double acc = 0.0;
        for (int64_t f = 0; f < horizon; ++f) {
            acc += metrics::mse(predicted.frame(f), seq.frame(observed_len + f));
        }
        per_sequence[static_cast<size_t>(i)] = acc / static_cast<double>(horizon);
    });
    double total = 0.0;
    for (double v : per_sequence) { // fixed index order
        total += v;
    }
    return total / static_cast<double>(dataset.num_sequences);
}

metrics::MetricsReport evaluate(const Predictor& predictor, const Dataset& dataset,
                                int64_t horizon, metrics::ReportMetadata metadata) {
    if (horizon < 1 || horizon >= dataset.seq_length) {
        throw ConfigError("evaluate: horizon must leave at least one observed frame");
    }
    const int64_t observed_len = dataset.seq_length - horizon;
    std::vector<FrameSequence> predictions(static_cast<size_t>(dataset.num_sequences));
    std::vector<FrameSequence> targets(static_cast<size_t>(dataset.num_sequences));
    parallel_for(dataset.num_sequences, [&](int64_t i) {
        const FrameSequence seq = dataset.sequence(i);
        predictions[static_cast<size_t>(i)] = predictor.predict(seq.slice(0, observed_len),
                                                                horizon);
        targets[static_cast<size_t>(i)] = seq.slice(observed_len, dataset.seq_length);
    });
    return metrics::frame_report(predictions, targets, std::move(metadata));
}

TrainResult train(const TrainConfig& config, const Dataset& train_data, const Dataset& eval_data,
                  const std::function<void(const EpochLog&)>& on_epoch) {
    config.validate();
    if (train_data.geometry != config.arch.geometry() ||
        eval_data.geometry != config.arch.geometry()) {
        throw ConfigError("train: dataset geometry does not match the model configuration");
    }
    if (train_data.num_sequences < 1) {
        throw ConfigError("train: empty training dataset");
    }

    SplitMix64 seeder(config.seed);
    const uint64_t init_seed = seeder.next();
    const uint64_t shuffle_seed = seeder.next();

    auto predictor = make_predictor(config.model, config.arch, init_seed);
    ParamStore& params = predictor->params();
    params.zero_grad();
    AdamState opt_state;
    const AdamWOptions opt{config.lr, config.weight_decay};

    const int64_t horizon = resolve_eval_horizon(config, eval_data);

    Xoshiro256 shuffle_rng(shuffle_seed);
    std::vector<int64_t> order(static_cast<size_t>(train_data.num_sequences));
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    result.resolved_eval_horizon = horizon;
    result.best_eval_mse = std::numeric_limits<double>::infinity();

    for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        shuffle_indices(order, shuffle_rng);

        double loss_sum = 0.0;
        for (size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const size_t end = std::min(order.size(), begin + config.batch_size);
            Tensor batch_loss = Tensor::scalar(0.0);
            for (size_t b = begin; b < end; ++b) {
                batch_loss = add(batch_loss,
                                 predictor->training_loss(train_data.sequence(order[b])));
            }
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - begin));
            backward(batch_loss);
            adamw_step(params, opt_state, opt);
            params.zero_grad();
            loss_sum += batch_loss.item() * static_cast<double>(end - begin);
        }
        const double train_loss = loss_sum / static_cast<double>(order.size());
        const double eval_mse = evaluate_mse(*predictor, eval_data, horizon);
        const auto elapsed = std::chrono::duration<double>(
                                 std::chrono::steady_clock::now() - start)
                                 .count();
        result.log.epochs.push_back({epoch, train_loss, eval_mse, elapsed});
        if (on_epoch) {
            on_epoch(result.log.epochs.back());
        }

        if (eval_mse < result.best_eval_mse) {
            result.best_eval_mse = eval_mse;
            result.best_epoch = epoch;
            result.best_params = clone_params(params);
        }
    }
    return result;
}

std::string EpochLog::to_json() const {
    nlohmann::ordered_json j{{"epoch", epoch},
                             {"train_loss", train_loss},
                             {"eval_mse", eval_mse},
                             {"seconds", seconds}};
    return j.dump();
}

std::string RunLog::to_jsonl() const {
    std::string out;
    for (const auto& e : epochs) {
        out += e.to_json() + "\n";
    }
    return out;
}

namespace {

constexpr char kCkptMagic[5] = {'U', 'S', 'T', 'C', '1'};
constexpr uint8_t kCkptVersion = 1;

void put_u16(std::ofstream& out, uint16_t v) {
    const unsigned char bytes[2] = {static_cast<unsigned char>(v & 0xFF),
                                    static_cast<unsigned char>((v >> 8) & 0xFF)};
    out.write(reinterpret_cast<const char*>(bytes), 2);
}

void put_u32(std::ofstream& out, uint32_t v) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v & 0xFF),
                                    static_cast<unsigned char>((v >> 8) & 0xFF),
                                    static_cast<unsigned char>((v >> 16) & 0xFF),
                                    static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

uint16_t get_u16(std::ifstream& in, const std::string& path) {
    unsigned char bytes[2];
    if (!in.read(reinterpret_cast<char*>(bytes), 2)) {
        throw DataError("checkpoint '" + path + "': truncated");
    }
    return static_cast<uint16_t>(bytes[0] | (bytes[1] << 8));
}

uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw DataError("checkpoint '" + path + "': truncated");
    }
    return static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
           (static_cast<uint32_t>(bytes[2]) << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
}

} // namespace

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("checkpoint: cannot open '" + path.string() + "' for writing");
    }
    out.write(kCkptMagic, sizeof(kCkptMagic));
    out.put(static_cast<char>(kCkptVersion));
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        if (name.size() > std::numeric_limits<uint16_t>::max()) {
            throw ConfigError("checkpoint: parameter name too long");
        }
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const auto& shape = tensor.shape();
        out.put(static_cast<char>(shape.size()));
        for (int64_t dim : shape) {
            put_u32(out, static_cast<uint32_t>(dim));
        }
        for (double v : tensor.data()) {
            const float f = static_cast<float>(v);
            static_assert(sizeof(float) == 4);
            out.write(reinterpret_cast<const char*>(&f), sizeof(f));
        }
    }
    if (!out) {
        throw IoError("checkpoint: write to '" + path.string() + "' failed");
    }
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("checkpoint: cannot open '" + path.string() + "' for reading");
    }
    char magic[5];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
        throw DataError("checkpoint '" + path.string() + "': bad magic, expected \"USTC1\"");
    }
    const int version = in.get();
    if (version != kCkptVersion) {
        throw DataError("checkpoint '" + path.string() + "': unsupported version " +
                        std::to_string(version));
    }

    ParamStore params;
    const uint32_t count = get_u32(in, path.string());
    for (uint32_t p = 0; p < count; ++p) {
        const uint16_t name_len = get_u16(in, path.string());
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) {
            throw DataError("checkpoint '" + path.string() + "': truncated parameter name");
        }
        const int ndim = in.get();
        if (ndim <= 0) {
            throw DataError("checkpoint '" + path.string() + "': invalid rank for '" + name +
                            "'");
        }
        std::vector<int64_t> shape(static_cast<size_t>(ndim));
        int64_t numel = 1;
        for (auto& dim : shape) {
            dim = get_u32(in, path.string());
            if (dim < 1 || numel > (1LL << 40) / dim) {
                throw DataError("checkpoint '" + path.string() + "': dimension overflow in '" +
                                name + "'");
            }
            numel *= dim;
        }
        std::vector<double> values(static_cast<size_t>(numel));
        for (auto& v : values) {
            float f = 0.0f;
            if (!in.read(reinterpret_cast<char*>(&f), sizeof(f))) {
                throw DataError("checkpoint '" + path.string() + "': truncated data for '" +
                                name + "'");
            }
            v = static_cast<double>(f);
        }
        params.add(std::move(name), Tensor::from_data(std::move(shape), std::move(values), true));
    }
    return params;
}

} // namespace ustep
