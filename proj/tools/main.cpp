// ustep command-line tool: dataset generation, training, evaluation,
// gradient checking, and frame-wise model comparison.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ustep/data.hpp"
#include "ustep/gradcheck.hpp"
#include "ustep/model.hpp"
#include "ustep/segmentation.hpp"
#include "ustep/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitIo = 4;

std::string format_double(double v) {
    char buffer[64];
    auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), v);
    (void)ec;
    return std::string(buffer, ptr);
}

void require_input_file(const fs::path& path) {
    if (!fs::exists(path)) {
        throw ustep::IoError("input file '" + path.string() + "' does not exist");
    }
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ustep::IoError("cannot open '" + path.string() + "' for writing");
    }
    out << text;
    if (!out) {
        throw ustep::IoError("write to '" + path.string() + "' failed");
    }
}

/// Flat key=value file; '#' starts a comment.
std::map<std::string, std::string> read_kv_file(const fs::path& path) {
    require_input_file(path);
    std::ifstream in(path);
    if (!in) {
        throw ustep::IoError("cannot open '" + path.string() + "' for reading");
    }
    std::map<std::string, std::string> kv;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ustep::ConfigError("config '" + path.string() + "' line " +
                                     std::to_string(line_no) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

template <typename T>
void kv_get(const std::map<std::string, std::string>& kv, const std::string& key, T& out) {
    auto it = kv.find(key);
    if (it == kv.end()) {
        return;
    }
    if constexpr (std::is_same_v<T, std::string>) {
        out = it->second;
    } else if constexpr (std::is_same_v<T, double>) {
        out = std::stod(it->second);
    } else if constexpr (std::is_same_v<T, uint64_t>) {
        out = std::stoull(it->second);
    } else {
        out = static_cast<T>(std::stoll(it->second));
    }
}

struct GenFlags {
    ustep::GenConfig config;
    std::string variant_name = "plain";
    std::string config_path;
    std::string out_path;
};

void run_gen_data(GenFlags& flags, const CLI::App& cmd) {
    ustep::GenConfig cfg;
    if (!flags.config_path.empty()) {
        auto kv = read_kv_file(flags.config_path);
        kv_get(kv, "num", cfg.num_sequences);
        kv_get(kv, "T", cfg.observed);
        kv_get(kv, "Tp", cfg.horizon);
        kv_get(kv, "H", cfg.height);
        kv_get(kv, "W", cfg.width);
        kv_get(kv, "C", cfg.channels);
        kv_get(kv, "objects", cfg.num_objects);
        kv_get(kv, "size", cfg.object_size);
        kv_get(kv, "speed-min", cfg.speed_min);
        kv_get(kv, "speed-max", cfg.speed_max);
        kv_get(kv, "sigma-v", cfg.sigma_v);
        kv_get(kv, "noise-amp", cfg.noise_amplitude);
        kv_get(kv, "seed", cfg.seed);
        std::string variant;
        kv_get(kv, "variant", variant);
        if (!variant.empty()) {
            cfg.variant = ustep::variant_from_string(variant);
        }
    }
    // Inline flags override file values.
    auto used = [&](const std::string& name) { return cmd.count(name) > 0; };
    if (used("--num")) cfg.num_sequences = flags.config.num_sequences;
    if (used("--T")) cfg.observed = flags.config.observed;
    if (used("--Tp")) cfg.horizon = flags.config.horizon;
    if (used("--H")) cfg.height = flags.config.height;
    if (used("--W")) cfg.width = flags.config.width;
    if (used("--C")) cfg.channels = flags.config.channels;
    if (used("--objects")) cfg.num_objects = flags.config.num_objects;
    if (used("--size")) cfg.object_size = flags.config.object_size;
    if (used("--speed-min")) cfg.speed_min = flags.config.speed_min;
    if (used("--speed-max")) cfg.speed_max = flags.config.speed_max;
    if (used("--sigma-v")) cfg.sigma_v = flags.config.sigma_v;
    if (used("--noise-amp")) cfg.noise_amplitude = flags.config.noise_amplitude;
    if (used("--seed")) cfg.seed = flags.config.seed;
    if (used("--variant")) cfg.variant = ustep::variant_from_string(flags.variant_name);

    cfg.validate();
    const ustep::Dataset ds = ustep::generate(cfg);
    ustep::write_dataset(ds, flags.out_path);
    std::cout << "wrote " << flags.out_path << ": N=" << ds.num_sequences
              << " L=" << ds.seq_length << " C=" << ds.geometry.channels
              << " H=" << ds.geometry.height << " W=" << ds.geometry.width << "\n";
    std::cout << "config: num=" << cfg.num_sequences << " T=" << cfg.observed
              << " Tp=" << cfg.horizon << " H=" << cfg.height << " W=" << cfg.width
              << " C=" << cfg.channels << " objects=" << cfg.num_objects
              << " size=" << cfg.object_size << " speed=[" << format_double(cfg.speed_min)
              << "," << format_double(cfg.speed_max) << "] variant=" << to_string(cfg.variant)
              << " sigma-v=" << format_double(cfg.sigma_v)
              << " noise-amp=" << format_double(cfg.noise_amplitude) << " seed=" << cfg.seed
              << "\n";
}

struct TrainFlags {
    std::string data_path;
    std::string eval_data_path;
    std::string model_name = "ustep";
    int64_t delta_t = 0; // 0 means "apply the guideline"
    int64_t delta_T = 0; // 0 means "twice delta_t"
    int64_t epochs = 50;
    int64_t batch = 16;
    int64_t hidden = 16;
    int64_t depth = 1;
    int64_t kernel = 3;
    int64_t eval_horizon = 0;
    double lr = 0.01;
    double wd = 0.05;
    uint64_t seed = 0;
    bool strict_grid = false;
    bool ablate_cross = false;
    std::string out_path;
    std::string runlog_path;
};

void run_train(const TrainFlags& flags) {
    require_input_file(flags.data_path);
    const ustep::Dataset train_ds = ustep::read_dataset(flags.data_path);
    ustep::Dataset eval_ds;
    if (flags.eval_data_path.empty()) {
        eval_ds = train_ds;
    } else {
        require_input_file(flags.eval_data_path);
        eval_ds = ustep::read_dataset(flags.eval_data_path);
    }

    ustep::TrainConfig cfg;
    cfg.model = ustep::model_kind_from_string(flags.model_name);
    cfg.epochs = flags.epochs;
    cfg.batch_size = flags.batch;
    cfg.lr = flags.lr;
    cfg.weight_decay = flags.wd;
    cfg.strict_lr_grid = flags.strict_grid;
    cfg.seed = flags.seed;
    cfg.eval_horizon = flags.eval_horizon;

    int64_t dt = flags.delta_t;
    if (dt == 0) {
        // Half the sequence is treated as observed for the length guideline.
        const int64_t t_obs = train_ds.seq_length / 2;
        dt = ustep::choose_delta_t(std::max<int64_t>(t_obs, 1),
                                   std::max<int64_t>(train_ds.seq_length - t_obs, 1));
        std::cout << "dt=" << dt << " (guideline)\n";
    }
    int64_t dT = flags.delta_T;
    if (dT == 0) {
        dT = 2 * dt; // the window equals the observed span under the guideline
        std::cout << "dT=" << dT << " (default)\n";
    }

    cfg.arch.delta_t = dt;
    cfg.arch.delta_T = dT;
    cfg.arch.channels = train_ds.geometry.channels;
    cfg.arch.height = train_ds.geometry.height;
    cfg.arch.width = train_ds.geometry.width;
    cfg.arch.hidden = flags.hidden;
    cfg.arch.encoder_depth = flags.depth;
    cfg.arch.kernel_size = flags.kernel;
    cfg.arch.cross_segment = !flags.ablate_cross;
    if (cfg.model == ustep::ModelKind::ustep) {
        cfg.arch.validate();
    }

    const std::string runlog_path =
        flags.runlog_path.empty() ? flags.out_path + ".runlog.jsonl" : flags.runlog_path;
    std::ofstream runlog(runlog_path, std::ios::binary | std::ios::trunc);
    if (!runlog) {
        throw ustep::IoError("cannot open '" + runlog_path + "' for writing");
    }
    const ustep::TrainResult result =
        ustep::train(cfg, train_ds, eval_ds, [&runlog](const ustep::EpochLog& e) {
            runlog << e.to_json() << "\n" << std::flush;
        });
    ustep::save_checkpoint(result.best_params, flags.out_path);

    std::cout << "trained " << flags.model_name << " for " << flags.epochs
              << " epochs; best eval MSE " << format_double(result.best_eval_mse) << " at epoch "
              << result.best_epoch << "\n";
    std::cout << "checkpoint: " << flags.out_path << "\nrunlog: " << runlog_path << "\n";
}

struct EvalFlags {
    std::string data_path;
    std::string ckpt_path;
    int64_t horizon = 0;
    std::string report_format = "csv";
    std::string out_path;
    bool ablate_cross = false;
};

std::unique_ptr<ustep::Predictor> load_predictor(const std::string& ckpt_path,
                                                 const ustep::Dataset& ds, bool ablate_cross) {
    require_input_file(ckpt_path);
    ustep::ParamStore params = ustep::load_checkpoint(ckpt_path);
    return ustep::predictor_from_params(std::move(params), ds.geometry, !ablate_cross);
}

void check_horizon(int64_t horizon, const ustep::Dataset& ds) {
    if (horizon < 1) {
        throw ustep::ConfigError("--Tp must be at least 1");
    }
    if (horizon >= ds.seq_length) {
        throw ustep::ShapeError("--Tp " + std::to_string(horizon) +
                                " leaves no observed frames in sequences of length " +
                                std::to_string(ds.seq_length) + " (no ground truth)");
    }
}

void run_eval(const EvalFlags& flags) {
    require_input_file(flags.data_path);
    const ustep::Dataset ds = ustep::read_dataset(flags.data_path);
    check_horizon(flags.horizon, ds);
    auto predictor = load_predictor(flags.ckpt_path, ds, flags.ablate_cross);

    ustep::metrics::ReportMetadata meta;
    meta.model = fs::path(flags.ckpt_path).stem().string();
    meta.dataset_hash = ustep::dataset_hash(flags.data_path);
    if (predictor->kind() == ustep::ModelKind::ustep) {
        const auto& cfg = static_cast<const ustep::UstepModel&>(*predictor).config();
        meta.delta_t = cfg.delta_t;
        meta.delta_T = cfg.delta_T;
    }
    const auto report = ustep::evaluate(*predictor, ds, flags.horizon, std::move(meta));
    if (flags.report_format == "json") {
        write_text_file(flags.out_path, report.to_json());
    } else {
        write_text_file(flags.out_path, report.to_csv());
    }
    std::cout << "evaluated " << flags.ckpt_path << " on " << ds.num_sequences
              << " sequences (Tp=" << flags.horizon << "): aggregate MSE "
              << format_double(report.aggregate.mse) << "\n";
    std::cout << "report: " << flags.out_path << "\n";
}

struct CompareFlags {
    std::string data_path;
    std::vector<std::string> ckpt_paths;
    int64_t horizon = 0;
    std::string out_path;
};

void run_compare(const CompareFlags& flags) {
    require_input_file(flags.data_path);
    const ustep::Dataset ds = ustep::read_dataset(flags.data_path);
    check_horizon(flags.horizon, ds);
    const std::string hash = ustep::dataset_hash(flags.data_path);

    // Model column -> report; "floor" (copy-last) is always present.
    std::map<std::string, ustep::metrics::MetricsReport> reports;
    for (const auto& path : flags.ckpt_paths) {
        std::string name = fs::path(path).stem().string();
        if (name == "floor" || reports.count(name) > 0) {
            name = path; // keep names unambiguous
        }
        try {
            auto predictor = load_predictor(path, ds, false);
            ustep::metrics::ReportMetadata meta;
            meta.model = name;
            meta.dataset_hash = hash;
            reports.emplace(name, ustep::evaluate(*predictor, ds, flags.horizon, meta));
        } catch (const ustep::Error& e) {
            throw ustep::Error("model '" + name + "': " + e.what());
        }
    }
    {
        ustep::CopyLastModel floor;
        ustep::metrics::ReportMetadata meta;
        meta.model = "floor";
        meta.dataset_hash = hash;
        reports.emplace("floor", ustep::evaluate(floor, ds, flags.horizon, meta));
    }

    std::string csv = "model,frame_index,mse,mae,ssim,psnr\n";
    for (const auto& [name, report] : reports) { // std::map: sorted by model name
        for (size_t f = 0; f < report.per_frame.size(); ++f) {
            const auto& row = report.per_frame[f];
            csv += name + "," + std::to_string(f) + "," + format_double(row.mse) + "," +
                   format_double(row.mae) + "," + format_double(row.ssim) + "," +
                   format_double(row.psnr) + "\n";
        }
        const auto& agg = report.aggregate;
        csv += name + ",aggregate," + format_double(agg.mse) + "," + format_double(agg.mae) +
               "," + format_double(agg.ssim) + "," + format_double(agg.psnr) + "\n";
    }
    write_text_file(flags.out_path, csv);
    std::cout << "compared " << reports.size() << " models (incl. floor) on "
              << ds.num_sequences << " sequences\n";
    std::cout << "report: " << flags.out_path << "\n";
}

struct GradCheckFlags {
    std::string config_path;
    uint64_t seed = 0;
    int64_t height = 8;
    int64_t width = 8;
    int64_t channels = 1;
    int64_t hidden = 4;
    int64_t depth = 1;
    int64_t kernel = 3;
    int64_t delta_t = 2;
    int64_t delta_T = 4;
    int64_t observed = 4;
    int64_t horizon = 4;
    double eps = 1e-5;
    double tolerance = 1e-4;
    double inject_error = 0.0;
};

int run_gradcheck(GradCheckFlags& flags) {
    if (!flags.config_path.empty()) {
        auto kv = read_kv_file(flags.config_path);
        kv_get(kv, "H", flags.height);
        kv_get(kv, "W", flags.width);
        kv_get(kv, "C", flags.channels);
        kv_get(kv, "hidden", flags.hidden);
        kv_get(kv, "depth", flags.depth);
        kv_get(kv, "kernel", flags.kernel);
        kv_get(kv, "dt", flags.delta_t);
        kv_get(kv, "dT", flags.delta_T);
        kv_get(kv, "T", flags.observed);
        kv_get(kv, "Tp", flags.horizon);
        kv_get(kv, "eps", flags.eps);
        kv_get(kv, "tol", flags.tolerance);
    }

    ustep::UstepConfig arch;
    arch.delta_t = flags.delta_t;
    arch.delta_T = flags.delta_T;
    arch.channels = flags.channels;
    arch.height = flags.height;
    arch.width = flags.width;
    arch.hidden = flags.hidden;
    arch.encoder_depth = flags.depth;
    arch.kernel_size = flags.kernel;
    arch.validate();

    ustep::GenConfig gen;
    gen.num_sequences = 1;
    gen.observed = flags.observed;
    gen.horizon = flags.horizon;
    gen.height = flags.height;
    gen.width = flags.width;
    gen.channels = flags.channels;
    gen.object_size = std::min<int64_t>(3, std::min(flags.height, flags.width) - 1);
    gen.seed = flags.seed;
    const ustep::FrameSequence sequence = ustep::generate(gen).sequence(0);

    ustep::UstepModel model(arch, flags.seed);
    ustep::GradCheckOptions opts;
    opts.eps = flags.eps;
    opts.inject_error = flags.inject_error;
    const auto result = ustep::gradcheck(
        [&] { return model.training_loss(sequence); }, model.params(), opts);

    std::cout << "max relative error: " << format_double(result.max_rel_error) << "\n";
    std::cout << "worst parameter: " << result.worst_param << "[" << result.worst_index
              << "] analytic=" << format_double(result.worst_analytic)
              << " numeric=" << format_double(result.worst_numeric) << "\n";
    const bool pass = result.max_rel_error < flags.tolerance;
    std::cout << (pass ? "PASS" : "FAIL") << " (tolerance "
              << format_double(flags.tolerance) << ")\n";
    return pass ? kExitOk : 1;
}

int classify_error(const ustep::Error& e) {
    if (dynamic_cast<const ustep::IoError*>(&e) != nullptr) {
        return kExitIo;
    }
    if (dynamic_cast<const ustep::ShapeError*>(&e) != nullptr ||
        dynamic_cast<const ustep::DataError*>(&e) != nullptr) {
        return kExitData;
    }
    return kExitUsage; // ConfigError and other usage-level problems
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ustep: dual-scale spatio-temporal prediction at desk scale"};
    app.require_subcommand(1);

    GenFlags gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen_cmd->add_option("--config", gen.config_path, "key=value config file");
    gen_cmd->add_option("--num", gen.config.num_sequences, "number of sequences");
    gen_cmd->add_option("--T", gen.config.observed, "observed frames per sequence");
    gen_cmd->add_option("--Tp", gen.config.horizon, "future frames per sequence");
    gen_cmd->add_option("--H", gen.config.height, "frame height");
    gen_cmd->add_option("--W", gen.config.width, "frame width");
    gen_cmd->add_option("--C", gen.config.channels, "frame channels");
    gen_cmd->add_option("--objects", gen.config.num_objects, "moving squares per sequence");
    gen_cmd->add_option("--size", gen.config.object_size, "square edge length in pixels");
    gen_cmd->add_option("--speed-min", gen.config.speed_min, "minimum speed (px/frame)");
    gen_cmd->add_option("--speed-max", gen.config.speed_max, "maximum speed (px/frame)");
    gen_cmd->add_option("--variant", gen.variant_name,
                        "plain | dynamic-speed | cluttered-background");
    gen_cmd->add_option("--sigma-v", gen.config.sigma_v,
                        "dynamic-speed: velocity noise std (px/frame)");
    gen_cmd->add_option("--noise-amp", gen.config.noise_amplitude,
                        "cluttered-background: noise amplitude in [0,1)");
    gen_cmd->add_option("--seed", gen.config.seed, "generator seed");
    gen_cmd->add_option("--out", gen.out_path, "output dataset path")->required();

    TrainFlags tr;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a predictor");
    train_cmd->add_option("--data", tr.data_path, "training dataset")->required();
    train_cmd->add_option("--eval-data", tr.eval_data_path,
                          "dataset for per-epoch eval MSE (defaults to --data)");
    train_cmd->add_option("--model", tr.model_name, "ustep | rec-lite | recfree-lite");
    train_cmd->add_option("--dt", tr.delta_t, "micro segment length (omit for the guideline)");
    train_cmd->add_option("--dT", tr.delta_T, "macro window length (omit for 2*dt)");
    train_cmd->add_option("--epochs", tr.epochs, "training epochs");
    train_cmd->add_option("--batch", tr.batch, "sequences per batch");
    train_cmd->add_option("--hidden", tr.hidden, "hidden feature channels");
    train_cmd->add_option("--depth", tr.depth, "encoder blocks");
    train_cmd->add_option("--kernel", tr.kernel, "gate/encoder kernel size (odd)");
    train_cmd->add_option("--lr", tr.lr, "learning rate");
    train_cmd->add_option("--wd", tr.wd, "weight decay");
    train_cmd->add_option("--seed", tr.seed, "training seed");
    train_cmd->add_option("--Tp", tr.eval_horizon,
                          "frames predicted for per-epoch eval MSE (default: half)");
    train_cmd->add_flag("--strict-grid", tr.strict_grid,
                        "reject learning rates off the accepted grid");
    train_cmd->add_flag("--ablate-cross-segment", tr.ablate_cross,
                        "disable the cross-segment gate (macro context unused)");
    train_cmd->add_option("--out", tr.out_path, "checkpoint output path")->required();
    train_cmd->add_option("--runlog", tr.runlog_path,
                          "run log path (default: <out>.runlog.jsonl)");

    EvalFlags ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--data", ev.data_path, "dataset")->required();
    eval_cmd->add_option("--ckpt", ev.ckpt_path, "checkpoint")->required();
    eval_cmd->add_option("--Tp", ev.horizon, "frames to predict and score")->required();
    eval_cmd->add_option("--report", ev.report_format, "csv | json")
        ->check(CLI::IsMember({"csv", "json"}));
    eval_cmd->add_flag("--ablate-cross-segment", ev.ablate_cross,
                       "evaluate with the cross-segment gate disabled");
    eval_cmd->add_option("--out", ev.out_path, "report output path")->required();

    CompareFlags cp;
    CLI::App* compare_cmd =
        app.add_subcommand("compare", "Frame-wise comparison of checkpoints plus the floor");
    compare_cmd->add_option("--data", cp.data_path, "dataset")->required();
    compare_cmd->add_option("--ckpt", cp.ckpt_paths, "checkpoint (repeatable)")->required();
    compare_cmd->add_option("--Tp", cp.horizon, "frames to predict and score")->required();
    compare_cmd->add_option("--out", cp.out_path, "merged CSV output path")->required();

    GradCheckFlags gc;
    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "Finite-difference check of the training gradients");
    gradcheck_cmd->add_option("--config", gc.config_path, "key=value config file");
    gradcheck_cmd->add_option("--seed", gc.seed, "parameter/data seed");
    gradcheck_cmd->add_option("--H", gc.height, "frame height");
    gradcheck_cmd->add_option("--W", gc.width, "frame width");
    gradcheck_cmd->add_option("--C", gc.channels, "frame channels");
    gradcheck_cmd->add_option("--hidden", gc.hidden, "hidden feature channels");
    gradcheck_cmd->add_option("--depth", gc.depth, "encoder blocks");
    gradcheck_cmd->add_option("--kernel", gc.kernel, "kernel size");
    gradcheck_cmd->add_option("--dt", gc.delta_t, "micro segment length");
    gradcheck_cmd->add_option("--dT", gc.delta_T, "macro window length");
    gradcheck_cmd->add_option("--T", gc.observed, "observed frames");
    gradcheck_cmd->add_option("--Tp", gc.horizon, "future frames");
    gradcheck_cmd->add_option("--eps", gc.eps, "finite-difference step");
    gradcheck_cmd->add_option("--tol", gc.tolerance, "pass threshold");
    gradcheck_cmd
        ->add_option("--inject-grad-error", gc.inject_error,
                     "test hook: perturb one analytic gradient before comparison")
        ->group(""); // hidden

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) {
            run_gen_data(gen, *gen_cmd);
        } else if (train_cmd->parsed()) {
            run_train(tr);
        } else if (eval_cmd->parsed()) {
            run_eval(ev);
        } else if (compare_cmd->parsed()) {
            run_compare(cp);
        } else if (gradcheck_cmd->parsed()) {
            return run_gradcheck(gc);
        }
    } catch (const ustep::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return classify_error(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitOk;
}
