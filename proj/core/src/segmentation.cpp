#include "ustep/segmentation.hpp"

namespace ustep {

int64_t choose_delta_t(int64_t observed, int64_t horizon) {
    if (observed < 1 || horizon < 1) {
        throw ConfigError("choose_delta_t: observed and horizon must be at least 1");
    }
    return observed + horizon > 10 ? 5 : 2;
}

std::pair<FrameSequence, int64_t> pad_sequence(const FrameSequence& seq, int64_t delta_t) {
    if (delta_t < 1) {
        throw ConfigError("pad_sequence: delta_t must be at least 1");
    }
    if (seq.length() == 0) {
        throw ConfigError("pad_sequence: empty sequence");
    }
    FrameSequence padded = seq;
    int64_t pad_count = 0;
    while (padded.length() % delta_t != 0) {
        padded.append_copy_of_last();
        ++pad_count;
    }
    return {std::move(padded), pad_count};
}

SegmentPartition partition(const FrameSequence& seq, int64_t delta_t, int64_t delta_T) {
    if (delta_t < 1 || delta_T < 1 || delta_T % delta_t != 0) {
        throw ConfigError("partition: delta_T must be a positive multiple of delta_t");
    }
    auto [padded, pad_count] = pad_sequence(seq, delta_t);
    const int64_t len = padded.length();
    if (len < 2 * delta_t) {
        throw ConfigError("partition: padded sequence must hold at least two micro segments");
    }

    SegmentPartition part;
    part.delta_t = delta_t;
    part.delta_T = delta_T;
    part.pad_count = pad_count;
    part.padded_length = len;

    const int64_t segments = len / delta_t;
    part.micro.reserve(static_cast<size_t>(segments));
    for (int64_t j = 0; j < segments; ++j) {
        part.micro.push_back({j * delta_t, (j + 1) * delta_t});
    }
    // One window per step; step i ends with micro segment i+1.
    part.macro_windows.reserve(static_cast<size_t>(segments - 1));
    for (int64_t i = 0; i + 2 <= segments; ++i) {
        const int64_t end = (i + 2) * delta_t;
        part.macro_windows.push_back({end - delta_T, end});
    }
    return part;
}

Tensor macro_window_frames(const FrameSequence& stream, int64_t step, int64_t delta_t,
                           int64_t delta_T) {
    if (step < 0) {
        throw ConfigError("macro_window_frames: negative step");
    }
    const int64_t end = (step + 2) * delta_t;
    if (end > stream.length()) {
        throw ConfigError("macro_window_frames: stream too short for requested step");
    }
    return stream.stack_frames(end - delta_T, end);
}

Tensor micro_segment_frames(const FrameSequence& stream, int64_t segment, int64_t delta_t) {
    if (segment < 0) {
        throw ConfigError("micro_segment_frames: negative segment index");
    }
    const int64_t begin = segment * delta_t;
    if (begin + delta_t > stream.length()) {
        throw ConfigError("micro_segment_frames: stream too short for requested segment");
    }
    return stream.stack_frames(begin, begin + delta_t);
}

} // namespace ustep
