#include "ustep/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace ustep {

std::string to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::ustep:
        return "ustep";
    case ModelKind::rec_lite:
        return "rec-lite";
    case ModelKind::recfree_lite:
        return "recfree-lite";
    case ModelKind::copy_last:
        return "copy-last";
    }
    throw ConfigError("model: unknown kind");
}

ModelKind model_kind_from_string(const std::string& name) {
    if (name == "ustep") {
        return ModelKind::ustep;
    }
    if (name == "rec-lite") {
        return ModelKind::rec_lite;
    }
    if (name == "recfree-lite") {
        return ModelKind::recfree_lite;
    }
    if (name == "copy-last") {
        return ModelKind::copy_last;
    }
    throw ConfigError("model: unknown kind '" + name + "'");
}

namespace {

void validate_common(int64_t channels, int64_t height, int64_t width, int64_t hidden,
                     int64_t depth, int64_t kernel) {
    if (channels < 1 || height < 1 || width < 1) {
        throw ConfigError("model: frame geometry must be positive");
    }
    if (hidden < 1) {
        throw ConfigError("model: hidden channels must be at least 1");
    }
    if (depth < 1) {
        throw ConfigError("model: encoder depth must be at least 1");
    }
    if (kernel < 1 || kernel % 2 == 0) {
        throw ConfigError("model: kernel size must be odd");
    }
}

Tensor init_conv_weight(int64_t out_ch, int64_t in_ch, int64_t kernel, Xoshiro256* rng) {
    const int64_t n = out_ch * in_ch * kernel * kernel;
    std::vector<double> values(static_cast<size_t>(n), 0.0);
    if (rng != nullptr) {
        const double bound = std::sqrt(1.0 / static_cast<double>(in_ch * kernel * kernel));
        for (double& v : values) {
            v = rng->uniform(-bound, bound);
        }
    }
    return Tensor::from_data({out_ch, in_ch, kernel, kernel}, std::move(values), true);
}

void add_conv(ParamStore& params, const std::string& name, int64_t out_ch, int64_t in_ch,
              int64_t kernel, Xoshiro256* rng) {
    params.add(name + ".weight", init_conv_weight(out_ch, in_ch, kernel, rng));
    params.add(name + ".bias", Tensor::zeros({out_ch}, true));
}

void check_against(const ParamStore& loaded, const ParamStore& expected) {
    for (const auto& [name, tensor] : expected) {
        if (!loaded.contains(name)) {
            throw ConfigError("checkpoint: missing parameter '" + name + "'");
        }
        if (loaded.at(name).shape() != tensor.shape()) {
            throw ConfigError("checkpoint: parameter '" + name + "' has mismatched shape");
        }
    }
    for (const auto& [name, tensor] : loaded) {
        if (!expected.contains(name)) {
            throw ConfigError("checkpoint: unexpected parameter '" + name + "'");
        }
    }
}

int64_t count_blocks(const ParamStore& params, const std::string& prefix) {
    int64_t depth = 0;
    while (params.contains(prefix + ".block" + std::to_string(depth) + ".weight")) {
        ++depth;
    }
    return depth;
}

Tensor zeros_like_hidden(int64_t hidden, const FrameGeometry& g) {
    return Tensor::zeros({hidden, g.height, g.width});
}

} // namespace

void init_encoder_params(ParamStore& params, const std::string& prefix, int64_t in_channels,
                         int64_t hidden, int64_t depth, int64_t kernel, Xoshiro256& rng) {
    add_conv(params, prefix + ".in", hidden, in_channels, 1, &rng);
    for (int64_t d = 0; d < depth; ++d) {
        add_conv(params, prefix + ".block" + std::to_string(d), hidden, hidden, kernel, &rng);
    }
}

namespace {

void init_encoder_params_opt(ParamStore& params, const std::string& prefix, int64_t in_channels,
                             int64_t hidden, int64_t depth, int64_t kernel, Xoshiro256* rng) {
    add_conv(params, prefix + ".in", hidden, in_channels, 1, rng);
    for (int64_t d = 0; d < depth; ++d) {
        add_conv(params, prefix + ".block" + std::to_string(d), hidden, hidden, kernel, rng);
    }
}

void build_ustep_param_set(ParamStore& params, const UstepConfig& cfg, Xoshiro256* rng) {
    // Creation (and therefore sampling) order is fixed so that runs with the
    // same seed stay comparable across model variants.
    init_encoder_params_opt(params, "micro_enc", cfg.delta_t * cfg.channels, cfg.hidden,
                            cfg.encoder_depth, cfg.kernel_size, rng);
    init_encoder_params_opt(params, "macro_enc", cfg.delta_T * cfg.channels, cfg.hidden,
                            cfg.encoder_depth, cfg.kernel_size, rng);
    add_conv(params, "gate_v", cfg.hidden, cfg.hidden, cfg.kernel_size, rng);
    add_conv(params, "gate_u", cfg.hidden, cfg.hidden, cfg.kernel_size, rng);
    add_conv(params, "gate_c", cfg.hidden, cfg.hidden, cfg.kernel_size, rng);
    // Readout starts at zero: the untrained model predicts blank segments,
    // which keeps early-loss behavior deterministic.
    add_conv(params, "readout", cfg.delta_t * cfg.channels, cfg.hidden, 1, nullptr);
}

} // namespace

Tensor apply_segment_encoder(const ParamStore& params, const std::string& prefix,
                             const Tensor& stacked_frames, int64_t depth) {
    Tensor h = conv2d(stacked_frames, params.at(prefix + ".in.weight"),
                      params.at(prefix + ".in.bias"));
    for (int64_t d = 0; d < depth; ++d) {
        const std::string block = prefix + ".block" + std::to_string(d);
        h = add(h, silu(conv2d(h, params.at(block + ".weight"), params.at(block + ".bias"))));
    }
    return h;
}

Tensor macro_step(const Tensor& v_bar, const Tensor& h_prev, const Tensor& gate_weight,
                  const Tensor& gate_bias) {
    Tensor gate = sigmoid(conv2d(v_bar, gate_weight, gate_bias));
    return add(v_bar, mul(gate, h_prev));
}

Tensor micro_step(const Tensor& u_bar, const Tensor& h_prev, const Tensor& h_macro,
                  const Tensor& hist_weight, const Tensor& hist_bias,
                  const Tensor& cross_weight, const Tensor& cross_bias) {
    Tensor hist = sigmoid(conv2d(u_bar, hist_weight, hist_bias));
    Tensor cross = sigmoid(conv2d(u_bar, cross_weight, cross_bias));
    return add(u_bar, add(mul(hist, h_prev), mul(cross, h_macro)));
}

void UstepConfig::validate() const {
    validate_common(channels, height, width, hidden, encoder_depth, kernel_size);
    if (delta_t < 1) {
        throw ConfigError("model: delta_t must be at least 1");
    }
    if (delta_T < 1 || delta_T % delta_t != 0) {
        throw ConfigError("model: delta_T must be a positive multiple of delta_t");
    }
}

UstepModel::UstepModel(UstepConfig config, uint64_t seed) : config_(config) {
    config_.validate();
    Xoshiro256 rng(seed);
    build_ustep_param_set(params_, config_, &rng);
}

UstepModel::UstepModel(UstepConfig config, ParamStore params)
    : config_(config), params_(std::move(params)) {
    config_.validate();
    ParamStore expected;
    build_ustep_param_set(expected, config_, nullptr);
    check_against(params_, expected);
}

Tensor UstepModel::run_step(const FrameSequence& stream, int64_t step, Tensor& h_micro,
                            Tensor& h_macro) const {
    Tensor u = micro_segment_frames(stream, step + 1, config_.delta_t);
    Tensor u_bar = apply_segment_encoder(params_, "micro_enc", u, config_.encoder_depth);

    if (config_.cross_segment) {
        Tensor v = macro_window_frames(stream, step, config_.delta_t, config_.delta_T);
        Tensor v_bar = apply_segment_encoder(params_, "macro_enc", v, config_.encoder_depth);
        h_macro = macro_step(v_bar, h_macro, params_.at("gate_v.weight"),
                             params_.at("gate_v.bias"));
        h_micro = micro_step(u_bar, h_micro, h_macro, params_.at("gate_u.weight"),
                             params_.at("gate_u.bias"), params_.at("gate_c.weight"),
                             params_.at("gate_c.bias"));
    } else {
        // Cross-segment gate forced to zero: the macro pathway drops out of
        // the computation entirely.
        Tensor hist = sigmoid(conv2d(u_bar, params_.at("gate_u.weight"),
                                     params_.at("gate_u.bias")));
        h_micro = add(u_bar, mul(hist, h_micro));
    }
    return conv2d(h_micro, params_.at("readout.weight"), params_.at("readout.bias"));
}

TrainForward UstepModel::forward_train(const FrameSequence& sequence, StepTrace* trace) {
    if (sequence.geometry() != config_.geometry()) {
        throw ShapeError("forward_train: sequence geometry does not match model");
    }
    auto [padded, pad_count] = pad_sequence(sequence, config_.delta_t);
    const int64_t dt = config_.delta_t;
    const int64_t padded_len = padded.length();
    if (padded_len < 3 * dt) {
        throw ConfigError("forward_train: padded sequence must span at least three segments");
    }
    const int64_t original_len = sequence.length();
    const int64_t steps = padded_len / dt - 2;

    TrainForward result;
    result.steps = steps;
    result.pad_count = pad_count;

    Tensor h_micro = zeros_like_hidden(config_.hidden, config_.geometry());
    Tensor h_macro = zeros_like_hidden(config_.hidden, config_.geometry());
    Tensor loss_sum = Tensor::scalar(0.0);

    for (int64_t i = 0; i < steps; ++i) {
        Tensor prediction = run_step(padded, i, h_micro, h_macro);
        if (trace != nullptr) {
            trace->h_micro.push_back(h_micro);
            trace->h_macro.push_back(h_macro);
        }
        result.predictions.push_back(prediction);

        // Replicated pad frames are excluded from the loss mean.
        const int64_t target_begin = (i + 2) * dt;
        const int64_t valid = std::min((i + 3) * dt, original_len) - target_begin;
        Tensor target = padded.stack_frames(target_begin, target_begin + valid);
        Tensor scored = valid < dt
                            ? slice_leading(prediction, 0, valid * config_.channels)
                            : prediction;
        loss_sum = add(loss_sum, mse_loss(scored, target));
    }
    result.loss = scale(loss_sum, 1.0 / static_cast<double>(steps));
    return result;
}

Tensor UstepModel::training_loss(const FrameSequence& sequence, StepTrace* trace) {
    return forward_train(sequence, trace).loss;
}

FrameSequence UstepModel::predict(const FrameSequence& observed, int64_t horizon,
                                  StepTrace* trace) const {
    if (horizon < 1) {
        throw ConfigError("rollout: horizon must be at least 1");
    }
    if (observed.geometry() != config_.geometry()) {
        throw ShapeError("rollout: sequence geometry does not match model");
    }
    NoGradGuard no_grad;

    const int64_t dt = config_.delta_t;
    auto [stream, pad_count] = pad_sequence(observed, dt);
    const int64_t observed_len = observed.length();
    const int64_t padded_len = stream.length();
    if (padded_len < 2 * dt) {
        throw ConfigError("rollout: need at least two observed micro segments");
    }

    Tensor h_micro = zeros_like_hidden(config_.hidden, config_.geometry());
    Tensor h_macro = zeros_like_hidden(config_.hidden, config_.geometry());

    const int64_t needed = observed_len + horizon;
    const int64_t frame_elems = config_.geometry().frame_elems();
    for (int64_t i = 0; stream.length() < needed; ++i) {
        Tensor prediction = run_step(stream, i, h_micro, h_macro);
        // Warm-up predictions re-derive segments the stream already holds
        // and are discarded; once the stream runs out, predictions extend it.
        const bool extends = (i + 2) * dt >= padded_len;
        if (extends) {
            const auto values = prediction.data();
            for (int64_t f = 0; f < dt; ++f) {
                stream.append_frame(values.subspan(static_cast<size_t>(f * frame_elems),
                                                   static_cast<size_t>(frame_elems)));
            }
        }
        if (trace != nullptr) {
            trace->h_micro.push_back(h_micro);
            trace->h_macro.push_back(h_macro);
            trace->appended.push_back(extends);
        }
    }
    return stream.slice(observed_len, needed);
}

UstepConfig UstepModel::infer_config(const ParamStore& params, const FrameGeometry& geometry) {
    UstepConfig cfg;
    cfg.channels = geometry.channels;
    cfg.height = geometry.height;
    cfg.width = geometry.width;
    const auto& readout = params.at("readout.weight").shape();
    cfg.hidden = readout[1];
    if (readout[0] % geometry.channels != 0) {
        throw ConfigError("checkpoint: readout width is not a whole number of frames");
    }
    cfg.delta_t = readout[0] / geometry.channels;
    const auto& macro_in = params.at("macro_enc.in.weight").shape();
    if (macro_in[1] % geometry.channels != 0) {
        throw ConfigError("checkpoint: macro encoder width is not a whole number of frames");
    }
    cfg.delta_T = macro_in[1] / geometry.channels;
    cfg.kernel_size = params.at("gate_u.weight").shape()[2];
    cfg.encoder_depth = count_blocks(params, "micro_enc");
    return cfg;
}

void RecLiteConfig::validate() const {
    validate_common(channels, height, width, hidden, encoder_depth, kernel_size);
}

namespace {

void build_rec_lite_param_set(ParamStore& params, const RecLiteConfig& cfg, Xoshiro256* rng) {
    init_encoder_params_opt(params, "cell_enc", cfg.channels, cfg.hidden, cfg.encoder_depth,
                            cfg.kernel_size, rng);
    add_conv(params, "cell_gate", cfg.hidden, cfg.hidden, cfg.kernel_size, rng);
    add_conv(params, "cell_readout", cfg.channels, cfg.hidden, 1, nullptr);
}

} // namespace

RecLiteModel::RecLiteModel(RecLiteConfig config, uint64_t seed) : config_(config) {
    config_.validate();
    Xoshiro256 rng(seed);
    build_rec_lite_param_set(params_, config_, &rng);
}

RecLiteModel::RecLiteModel(RecLiteConfig config, ParamStore params)
    : config_(config), params_(std::move(params)) {
    config_.validate();
    ParamStore expected;
    build_rec_lite_param_set(expected, config_, nullptr);
    check_against(params_, expected);
}

Tensor RecLiteModel::step_frame(const Tensor& frame, Tensor& hidden) const {
    Tensor encoded = apply_segment_encoder(params_, "cell_enc", frame, config_.encoder_depth);
    hidden = macro_step(encoded, hidden, params_.at("cell_gate.weight"),
                        params_.at("cell_gate.bias"));
    return conv2d(hidden, params_.at("cell_readout.weight"), params_.at("cell_readout.bias"));
}

Tensor RecLiteModel::cell(const Tensor& frame, Tensor& hidden, StepTrace* trace,
                          InputSource source) const {
    Tensor prediction = step_frame(frame, hidden);
    if (trace != nullptr) {
        trace->inputs.push_back(source);
        trace->h_micro.push_back(hidden);
    }
    return prediction;
}

Tensor RecLiteModel::training_loss(const FrameSequence& sequence, StepTrace* trace) {
    if (sequence.geometry() != config_.geometry()) {
        throw ShapeError("rec-lite: sequence geometry does not match model");
    }
    const int64_t len = sequence.length();
    if (len < 2) {
        throw ConfigError("rec-lite: training needs at least two frames");
    }
    Tensor hidden = zeros_like_hidden(config_.hidden, config_.geometry());
    Tensor loss_sum = Tensor::scalar(0.0);
    for (int64_t i = 0; i + 1 < len; ++i) {
        Tensor prediction =
            cell(sequence.stack_frames(i, i + 1), hidden, trace, InputSource::observed);
        Tensor target = sequence.stack_frames(i + 1, i + 2);
        loss_sum = add(loss_sum, mse_loss(prediction, target));
    }
    return scale(loss_sum, 1.0 / static_cast<double>(len - 1));
}

FrameSequence RecLiteModel::predict(const FrameSequence& observed, int64_t horizon,
                                    StepTrace* trace) const {
    if (horizon < 1) {
        throw ConfigError("rec-lite: horizon must be at least 1");
    }
    if (observed.length() < 1) {
        throw ConfigError("rec-lite: need at least one observed frame");
    }
    NoGradGuard no_grad;
    Tensor hidden = zeros_like_hidden(config_.hidden, config_.geometry());

    // Reconstruction phase: consume every ground-truth frame. The final call
    // yields the first future frame.
    Tensor prediction;
    for (int64_t i = 0; i < observed.length(); ++i) {
        prediction =
            cell(observed.stack_frames(i, i + 1), hidden, trace, InputSource::observed);
    }
    FrameSequence out(0, observed.geometry());
    out.append_frame(prediction.data());
    // Prediction phase: feed the model its own output.
    for (int64_t j = 1; j < horizon; ++j) {
        prediction = cell(prediction, hidden, trace, InputSource::predicted);
        out.append_frame(prediction.data());
    }
    return out;
}

RecLiteConfig RecLiteModel::infer_config(const ParamStore& params,
                                         const FrameGeometry& geometry) {
    RecLiteConfig cfg;
    cfg.channels = geometry.channels;
    cfg.height = geometry.height;
    cfg.width = geometry.width;
    cfg.hidden = params.at("cell_readout.weight").shape()[1];
    cfg.kernel_size = params.at("cell_gate.weight").shape()[2];
    cfg.encoder_depth = count_blocks(params, "cell_enc");
    return cfg;
}

void RecFreeConfig::validate() const {
    validate_common(channels, height, width, hidden, encoder_depth, kernel_size);
    if (window < 1) {
        throw ConfigError("recfree-lite: window must be at least 1");
    }
}

namespace {

void build_recfree_param_set(ParamStore& params, const RecFreeConfig& cfg, Xoshiro256* rng) {
    init_encoder_params_opt(params, "encdec_enc", cfg.window * cfg.channels, cfg.hidden,
                            cfg.encoder_depth, cfg.kernel_size, rng);
    add_conv(params, "encdec_readout", cfg.window * cfg.channels, cfg.hidden, 1, nullptr);
}

} // namespace

RecFreeModel::RecFreeModel(RecFreeConfig config, uint64_t seed) : config_(config) {
    config_.validate();
    Xoshiro256 rng(seed);
    build_recfree_param_set(params_, config_, &rng);
}

RecFreeModel::RecFreeModel(RecFreeConfig config, ParamStore params)
    : config_(config), params_(std::move(params)) {
    config_.validate();
    ParamStore expected;
    build_recfree_param_set(expected, config_, nullptr);
    check_against(params_, expected);
}

Tensor RecFreeModel::forward_window(const Tensor& stacked) const {
    Tensor h = apply_segment_encoder(params_, "encdec_enc", stacked, config_.encoder_depth);
    return conv2d(h, params_.at("encdec_readout.weight"), params_.at("encdec_readout.bias"));
}

Tensor RecFreeModel::training_loss(const FrameSequence& sequence, StepTrace* trace) {
    (void)trace;
    if (sequence.geometry() != config_.geometry()) {
        throw ShapeError("recfree-lite: sequence geometry does not match model");
    }
    const int64_t window = config_.window;
    const int64_t len = sequence.length();
    if (len < window + 1) {
        throw ConfigError("recfree-lite: sequence must extend past one window");
    }

    Tensor input = sequence.stack_frames(0, window);
    Tensor loss_sum = Tensor::scalar(0.0);
    int64_t chunks = 0;
    int64_t covered = window;
    while (covered < len) {
        Tensor output = forward_window(input);
        const int64_t take = std::min(window, len - covered);
        Tensor target = sequence.stack_frames(covered, covered + take);
        Tensor scored = take < window
                            ? slice_leading(output, 0, take * config_.channels)
                            : output;
        loss_sum = add(loss_sum, mse_loss(scored, target));
        ++chunks;
        covered += take;
        input = output; // horizons past one window re-feed the prediction
    }
    return scale(loss_sum, 1.0 / static_cast<double>(chunks));
}

FrameSequence RecFreeModel::predict(const FrameSequence& observed, int64_t horizon,
                                    StepTrace* trace) const {
    (void)trace;
    if (horizon < 1) {
        throw ConfigError("recfree-lite: horizon must be at least 1");
    }
    if (observed.length() < 1) {
        throw ConfigError("recfree-lite: need at least one observed frame");
    }
    NoGradGuard no_grad;
    const int64_t window = config_.window;
    // The most recent `window` frames, left edge-replicated when the
    // observation is shorter than the window.
    Tensor input = observed.stack_frames(observed.length() - window, observed.length());

    FrameSequence out(0, observed.geometry());
    const int64_t frame_elems = observed.geometry().frame_elems();
    while (out.length() < horizon) {
        Tensor output = forward_window(input);
        const auto values = output.data();
        const int64_t take = std::min(window, horizon - out.length());
        for (int64_t f = 0; f < take; ++f) {
            out.append_frame(values.subspan(static_cast<size_t>(f * frame_elems),
                                            static_cast<size_t>(frame_elems)));
        }
        input = output;
    }
    return out;
}

RecFreeConfig RecFreeModel::infer_config(const ParamStore& params,
                                         const FrameGeometry& geometry) {
    RecFreeConfig cfg;
    cfg.channels = geometry.channels;
    cfg.height = geometry.height;
    cfg.width = geometry.width;
    const auto& in_shape = params.at("encdec_enc.in.weight").shape();
    if (in_shape[1] % geometry.channels != 0) {
        throw ConfigError("checkpoint: encoder width is not a whole number of frames");
    }
    cfg.window = in_shape[1] / geometry.channels;
    cfg.hidden = in_shape[0];
    const std::string block0 = "encdec_enc.block0.weight";
    cfg.kernel_size = params.contains(block0) ? params.at(block0).shape()[2] : 3;
    cfg.encoder_depth = count_blocks(params, "encdec_enc");
    return cfg;
}

FrameSequence CopyLastModel::predict(const FrameSequence& observed, int64_t horizon,
                                     StepTrace* trace) const {
    (void)trace;
    if (observed.length() < 1) {
        throw ConfigError("copy-last: need at least one observed frame");
    }
    if (horizon < 1) {
        throw ConfigError("copy-last: horizon must be at least 1");
    }
    FrameSequence out(0, observed.geometry());
    for (int64_t i = 0; i < horizon; ++i) {
        out.append_frame(observed.frame(observed.length() - 1));
    }
    return out;
}

std::unique_ptr<Predictor> make_predictor(ModelKind kind, const UstepConfig& base,
                                          uint64_t seed) {
    switch (kind) {
    case ModelKind::ustep:
        return std::make_unique<UstepModel>(base, seed);
    case ModelKind::rec_lite: {
        RecLiteConfig cfg{base.channels, base.height, base.width,
                          base.hidden,   base.encoder_depth, base.kernel_size};
        return std::make_unique<RecLiteModel>(cfg, seed);
    }
    case ModelKind::recfree_lite: {
        RecFreeConfig cfg{base.delta_T, base.channels, base.height,     base.width,
                          base.hidden,  base.encoder_depth, base.kernel_size};
        return std::make_unique<RecFreeModel>(cfg, seed);
    }
    case ModelKind::copy_last:
        return std::make_unique<CopyLastModel>();
    }
    throw ConfigError("model: unknown kind");
}

std::unique_ptr<Predictor> predictor_from_params(ParamStore params, const FrameGeometry& geometry,
                                                 bool cross_segment) {
    if (params.contains("micro_enc.in.weight")) {
        UstepConfig cfg = UstepModel::infer_config(params, geometry);
        cfg.cross_segment = cross_segment;
        return std::make_unique<UstepModel>(cfg, std::move(params));
    }
    if (params.contains("cell_enc.in.weight")) {
        return std::make_unique<RecLiteModel>(RecLiteModel::infer_config(params, geometry),
                                              std::move(params));
    }
    if (params.contains("encdec_enc.in.weight")) {
        return std::make_unique<RecFreeModel>(RecFreeModel::infer_config(params, geometry),
                                              std::move(params));
    }
    throw ConfigError("checkpoint: parameter names match no known model family");
}

} // namespace ustep
