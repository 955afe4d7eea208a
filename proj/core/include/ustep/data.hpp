#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ustep/frame_sequence.hpp"
#include "ustep/rng.hpp"

namespace ustep {

enum class Variant { plain, dynamic_speed, cluttered_background };

std::string to_string(Variant variant);
Variant variant_from_string(const std::string& name);

struct GenConfig {
    int64_t num_sequences = 256;
    int64_t observed = 4; // frames shown to the model
    int64_t horizon = 4;  // frames to forecast
    int64_t height = 16;
    int64_t width = 16;
    int64_t channels = 1;
    int64_t num_objects = 1;
    int64_t object_size = 4;
    double speed_min = 1.0;
    double speed_max = 1.0;
    Variant variant = Variant::plain;
    double sigma_v = 0.0;         // dynamic_speed: per-frame velocity noise std
    double noise_amplitude = 0.0; // cluttered_background: static noise height
    uint64_t seed = 0;

    int64_t sequence_length() const { return observed + horizon; }
    FrameGeometry geometry() const { return {channels, height, width}; }
    void validate() const;
};

/// Sequences stored exactly as the file format keeps them: float32,
/// row-major over (sequence, frame, channel, row, col).
struct Dataset {
    int64_t num_sequences = 0;
    int64_t seq_length = 0;
    FrameGeometry geometry;
    std::vector<float> values;
    std::optional<GenConfig> provenance;

    FrameSequence sequence(int64_t index) const;
    int64_t sequence_elems() const { return seq_length * geometry.frame_elems(); }
};

/// Continuous position/velocity of one square, in pixels. `y`/`x` address
/// the top-left corner and stay within [0, H-size] x [0, W-size].
struct ObjectState {
    double y = 0.0;
    double x = 0.0;
    double vy = 0.0;
    double vx = 0.0;
};

/// One kinematic step: advance by velocity, then reflect elastically off any
/// boundary the move crossed.
ObjectState advance_object(ObjectState state, int64_t object_size, int64_t height,
                           int64_t width);

/// Deterministic generation: sequence i draws from the PRNG stream seeded
/// with (seed + i), so datasets are bit-identical across runs and platforms.
Dataset generate(const GenConfig& config);

void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// FNV-1a 64 over the raw file bytes, hex-encoded. Used as the provenance
/// hash in evaluation reports.
std::string dataset_hash(const std::filesystem::path& path);

} // namespace ustep
