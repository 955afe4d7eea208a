#include "ustep/frame_sequence.hpp"

#include <algorithm>

namespace ustep {

FrameSequence::FrameSequence(int64_t length, FrameGeometry geometry)
    : length_(length), geometry_(geometry) {
    if (length < 0 || geometry.channels < 1 || geometry.height < 1 || geometry.width < 1) {
        throw ConfigError("frame sequence: invalid geometry");
    }
    values_.assign(static_cast<size_t>(length * geometry.frame_elems()), 0.0);
}

FrameSequence FrameSequence::from_values(FrameGeometry geometry, std::vector<double> values) {
    const int64_t per_frame = geometry.frame_elems();
    if (per_frame <= 0 || values.size() % static_cast<size_t>(per_frame) != 0) {
        throw ShapeError("frame sequence: value count is not a whole number of frames");
    }
    FrameSequence seq;
    seq.length_ = static_cast<int64_t>(values.size()) / per_frame;
    seq.geometry_ = geometry;
    seq.values_ = std::move(values);
    return seq;
}

std::span<const double> FrameSequence::frame(int64_t index) const {
    if (index < 0 || index >= length_) {
        throw ShapeError("frame sequence: frame index out of range");
    }
    const int64_t n = geometry_.frame_elems();
    return {values_.data() + index * n, static_cast<size_t>(n)};
}

std::span<double> FrameSequence::frame(int64_t index) {
    if (index < 0 || index >= length_) {
        throw ShapeError("frame sequence: frame index out of range");
    }
    const int64_t n = geometry_.frame_elems();
    return {values_.data() + index * n, static_cast<size_t>(n)};
}

void FrameSequence::append_frame(std::span<const double> frame_values) {
    if (static_cast<int64_t>(frame_values.size()) != geometry_.frame_elems()) {
        throw ShapeError("frame sequence: appended frame has wrong size");
    }
    values_.insert(values_.end(), frame_values.begin(), frame_values.end());
    ++length_;
}

void FrameSequence::append_copy_of_last() {
    if (length_ == 0) {
        throw ConfigError("frame sequence: cannot replicate the last frame of an empty sequence");
    }
    const int64_t n = geometry_.frame_elems();
    values_.resize(values_.size() + static_cast<size_t>(n));
    double* dst = values_.data() + (length_ * n);
    std::copy_n(values_.data() + (length_ - 1) * n, n, dst);
    ++length_;
}

Tensor FrameSequence::stack_frames(int64_t first, int64_t last) const {
    if (last <= first) {
        throw ShapeError("frame sequence: empty frame range");
    }
    if (last > length_) {
        throw ConfigError("frame sequence: frame range extends past the stream");
    }
    const int64_t n = geometry_.frame_elems();
    std::vector<double> out;
    out.reserve(static_cast<size_t>((last - first) * n));
    for (int64_t i = first; i < last; ++i) {
        const int64_t src = std::max<int64_t>(i, 0); // left edge-replication
        out.insert(out.end(), values_.begin() + src * n, values_.begin() + (src + 1) * n);
    }
    return Tensor::from_data(
        {(last - first) * geometry_.channels, geometry_.height, geometry_.width},
        std::move(out));
}

FrameSequence FrameSequence::slice(int64_t first, int64_t last) const {
    if (first < 0 || last < first || last > length_) {
        throw ShapeError("frame sequence: slice range out of bounds");
    }
    const int64_t n = geometry_.frame_elems();
    return from_values(geometry_,
                       std::vector<double>(values_.begin() + first * n,
                                           values_.begin() + last * n));
}

} // namespace ustep
