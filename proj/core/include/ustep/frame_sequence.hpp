#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ustep/tensor.hpp"

namespace ustep {

struct FrameGeometry {
    int64_t channels = 1;
    int64_t height = 1;
    int64_t width = 1;

    int64_t frame_elems() const { return channels * height * width; }
    bool operator==(const FrameGeometry&) const = default;
};

/// Ordered frames of shape [length x C x H x W], stored contiguously.
/// Generated data lives in [0, 1]; model outputs may stray and are clamped
/// only when metrics are computed.
class FrameSequence {
public:
    FrameSequence() = default;
    FrameSequence(int64_t length, FrameGeometry geometry);
    static FrameSequence from_values(FrameGeometry geometry, std::vector<double> values);

    int64_t length() const { return length_; }
    const FrameGeometry& geometry() const { return geometry_; }

    std::span<const double> frame(int64_t index) const;
    std::span<double> frame(int64_t index);
    std::span<const double> values() const { return values_; }

    void append_frame(std::span<const double> frame_values);
    void append_copy_of_last();

    /// Frames [first, last) stacked along channels: a [(last-first)*C, H, W]
    /// leaf tensor. Indices below zero read replicas of frame 0; the upper
    /// bound must be within the sequence.
    Tensor stack_frames(int64_t first, int64_t last) const;

    /// Sub-sequence copy of frames [first, last).
    FrameSequence slice(int64_t first, int64_t last) const;

private:
    int64_t length_ = 0;
    FrameGeometry geometry_;
    std::vector<double> values_;
};

} // namespace ustep
