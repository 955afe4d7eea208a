#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ustep/frame_sequence.hpp"

namespace ustep {

/// Half-open frame index range. `begin` may be negative inside macro
/// windows, meaning that many left edge-replicated copies of frame 0.
struct IndexRange {
    int64_t begin = 0;
    int64_t end = 0;

    int64_t size() const { return end - begin; }
    bool operator==(const IndexRange&) const = default;
};

/// Micro segments plus trailing macro windows over a padded sequence.
///
/// Micro segment j covers [j*dt, (j+1)*dt). The macro window for step i
/// covers [(i+2)*dt - dT, (i+2)*dt): it ends exactly where micro segment
/// i+1 ends, so the long-range context never looks past the segment being
/// consumed. Windows starting before frame 0 are left edge-replicated.
struct SegmentPartition {
    int64_t delta_t = 0;
    int64_t delta_T = 0;
    int64_t pad_count = 0;
    int64_t padded_length = 0;
    std::vector<IndexRange> micro;
    std::vector<IndexRange> macro_windows;

    bool operator==(const SegmentPartition&) const = default;
};

/// Segment-length guideline: 5 frames for long videos (observed + horizon
/// above 10 frames), 2 for short ones.
int64_t choose_delta_t(int64_t observed, int64_t horizon);

/// Appends replicas of the final frame until the length is a multiple of
/// delta_t. Returns the padded sequence and the number of appended frames,
/// always in [0, delta_t).
std::pair<FrameSequence, int64_t> pad_sequence(const FrameSequence& seq, int64_t delta_t);

/// Splits `seq` (after padding) into micro segments and macro windows.
/// Requires delta_T to be a positive multiple of delta_t and the padded
/// length to hold at least two micro segments.
SegmentPartition partition(const FrameSequence& seq, int64_t delta_t, int64_t delta_T);

/// Frames [(step+2)*dt - dT, (step+2)*dt) of `stream` stacked along
/// channels, with indices below zero replaced by frame 0. The stream must
/// already contain frame (step+2)*dt - 1.
Tensor macro_window_frames(const FrameSequence& stream, int64_t step, int64_t delta_t,
                           int64_t delta_T);

/// Micro segment j of `stream`: frames [j*dt, (j+1)*dt) stacked along
/// channels.
Tensor micro_segment_frames(const FrameSequence& stream, int64_t segment, int64_t delta_t);

} // namespace ustep
