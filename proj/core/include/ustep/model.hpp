#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ustep/param_store.hpp"
#include "ustep/rng.hpp"
#include "ustep/segmentation.hpp"

namespace ustep {

enum class ModelKind { ustep, rec_lite, recfree_lite, copy_last };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct UstepConfig {
    int64_t delta_t = 2;
    int64_t delta_T = 4;
    int64_t channels = 1;
    int64_t height = 16;
    int64_t width = 16;
    int64_t hidden = 16;       // shared feature channels C'
    int64_t encoder_depth = 1; // residual blocks per segment encoder
    int64_t kernel_size = 3;
    /// Ablation switch: with false the macro pathway is skipped entirely, so
    /// its parameters never enter the graph and keep exactly-zero gradients.
    bool cross_segment = true;

    FrameGeometry geometry() const { return {channels, height, width}; }
    void validate() const;
};

enum class InputSource { observed, predicted };

/// Optional per-step capture used by tests and diagnostics.
struct StepTrace {
    std::vector<Tensor> h_micro;
    std::vector<Tensor> h_macro;
    std::vector<bool> appended;       // rollout: did this step extend the stream
    std::vector<InputSource> inputs;  // rec-lite: provenance of each cell input
};

/// Gated macro update: h = v_bar + sigmoid(w * v_bar + b) (.) h_prev.
Tensor macro_step(const Tensor& v_bar, const Tensor& h_prev, const Tensor& gate_weight,
                  const Tensor& gate_bias);

/// Gated micro fusion:
/// h = u_bar + sigmoid(wu * u_bar + bu) (.) h_prev
///           + sigmoid(wc * u_bar + bc) (.) h_macro.
Tensor micro_step(const Tensor& u_bar, const Tensor& h_prev, const Tensor& h_macro,
                  const Tensor& hist_weight, const Tensor& hist_bias,
                  const Tensor& cross_weight, const Tensor& cross_bias);

/// Channel-mixing segment encoder: 1x1 input conv to `hidden` channels, then
/// `depth` residual blocks of [k x k conv, smooth ramp, add].
Tensor apply_segment_encoder(const ParamStore& params, const std::string& prefix,
                             const Tensor& stacked_frames, int64_t depth);

/// Registers an encoder's parameters under `prefix`. Weights are sampled
/// uniform with bound sqrt(1/fan_in) in a fixed elementwise order; biases
/// start at zero.
void init_encoder_params(ParamStore& params, const std::string& prefix, int64_t in_channels,
                         int64_t hidden, int64_t depth, int64_t kernel, Xoshiro256& rng);

class Predictor {
public:
    virtual ~Predictor() = default;

    virtual ModelKind kind() const = 0;
    virtual ParamStore& params() = 0;
    virtual const ParamStore& params() const = 0;

    /// Teacher-forced loss over one full sequence (observed plus future).
    virtual Tensor training_loss(const FrameSequence& sequence, StepTrace* trace = nullptr) = 0;

    /// Autoregressive prediction of `horizon` frames after `observed`.
    virtual FrameSequence predict(const FrameSequence& observed, int64_t horizon,
                                  StepTrace* trace = nullptr) const = 0;
};

struct TrainForward {
    std::vector<Tensor> predictions; // one [dt*C, H, W] tensor per step
    Tensor loss;
    int64_t steps = 0;
    int64_t pad_count = 0;
};

/// Dual-scale gated predictor. Each step encodes the next micro segment and
/// the trailing macro window into a shared feature space, fuses them through
/// three convolution gates, and reads out the following segment.
class UstepModel : public Predictor {
public:
    UstepModel(UstepConfig config, uint64_t seed);
    UstepModel(UstepConfig config, ParamStore params); // validated against config

    ModelKind kind() const override { return ModelKind::ustep; }
    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }
    const UstepConfig& config() const { return config_; }

    TrainForward forward_train(const FrameSequence& sequence, StepTrace* trace = nullptr);
    Tensor training_loss(const FrameSequence& sequence, StepTrace* trace = nullptr) override;
    FrameSequence predict(const FrameSequence& observed, int64_t horizon,
                          StepTrace* trace = nullptr) const override;

    /// Recovers the architecture from parameter shapes and the frame
    /// geometry of the data the checkpoint is applied to.
    static UstepConfig infer_config(const ParamStore& params, const FrameGeometry& geometry);

private:
    Tensor run_step(const FrameSequence& stream, int64_t step, Tensor& h_micro,
                    Tensor& h_macro) const;

    UstepConfig config_;
    ParamStore params_;
};

struct RecLiteConfig {
    int64_t channels = 1;
    int64_t height = 16;
    int64_t width = 16;
    int64_t hidden = 16;
    int64_t encoder_depth = 1;
    int64_t kernel_size = 3;

    FrameGeometry geometry() const { return {channels, height, width}; }
    void validate() const;
};

/// Per-frame gated recurrent baseline. Consumes ground-truth frames over the
/// observed range and its own predictions afterwards.
class RecLiteModel : public Predictor {
public:
    RecLiteModel(RecLiteConfig config, uint64_t seed);
    RecLiteModel(RecLiteConfig config, ParamStore params);

    ModelKind kind() const override { return ModelKind::rec_lite; }
    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }
    const RecLiteConfig& config() const { return config_; }

    Tensor training_loss(const FrameSequence& sequence, StepTrace* trace = nullptr) override;
    FrameSequence predict(const FrameSequence& observed, int64_t horizon,
                          StepTrace* trace = nullptr) const override;

    /// One recurrent step: encode the frame, gate it against the hidden
    /// state (updated in place), read out the next-frame prediction.
    Tensor step_frame(const Tensor& frame, Tensor& hidden) const;

    static RecLiteConfig infer_config(const ParamStore& params, const FrameGeometry& geometry);

private:
    Tensor cell(const Tensor& frame, Tensor& hidden, StepTrace* trace,
                InputSource source) const;

    RecLiteConfig config_;
    ParamStore params_;
};

struct RecFreeConfig {
    int64_t window = 4; // frames consumed and produced per shot
    int64_t channels = 1;
    int64_t height = 16;
    int64_t width = 16;
    int64_t hidden = 16;
    int64_t encoder_depth = 1;
    int64_t kernel_size = 3;

    FrameGeometry geometry() const { return {channels, height, width}; }
    void validate() const;
};

/// Whole-window baseline: one channel-stacked encoder/decoder shot maps
/// `window` frames to the next `window` frames. Horizons beyond the window
/// re-feed the output; shorter horizons trim it.
class RecFreeModel : public Predictor {
public:
    RecFreeModel(RecFreeConfig config, uint64_t seed);
    RecFreeModel(RecFreeConfig config, ParamStore params);

    ModelKind kind() const override { return ModelKind::recfree_lite; }
    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }
    const RecFreeConfig& config() const { return config_; }

    /// Single shot: [window*C, H, W] -> [window*C, H, W].
    Tensor forward_window(const Tensor& stacked) const;

    Tensor training_loss(const FrameSequence& sequence, StepTrace* trace = nullptr) override;
    FrameSequence predict(const FrameSequence& observed, int64_t horizon,
                          StepTrace* trace = nullptr) const override;

    static RecFreeConfig infer_config(const ParamStore& params, const FrameGeometry& geometry);

private:
    RecFreeConfig config_;
    ParamStore params_;
};

/// Floor reference: repeats the last observed frame. Not trainable.
class CopyLastModel : public Predictor {
public:
    ModelKind kind() const override { return ModelKind::copy_last; }
    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }

    Tensor training_loss(const FrameSequence&, StepTrace*) override {
        throw ConfigError("copy-last predictor has no trainable parameters");
    }
    FrameSequence predict(const FrameSequence& observed, int64_t horizon,
                          StepTrace* trace = nullptr) const override;

private:
    ParamStore params_;
};

/// Builds a freshly initialized predictor. rec-lite ignores the segment
/// fields; recfree-lite uses delta_T as its window.
std::unique_ptr<Predictor> make_predictor(ModelKind kind, const UstepConfig& base,
                                          uint64_t seed);

/// Rebuilds a predictor from checkpoint parameters, inferring the model kind
/// from the parameter names and the architecture from their shapes.
std::unique_ptr<Predictor> predictor_from_params(ParamStore params, const FrameGeometry& geometry,
                                                 bool cross_segment = true);

} // namespace ustep
