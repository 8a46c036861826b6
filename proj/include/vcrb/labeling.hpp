#pragma once

#include <cstddef>
#include <vector>

#include "vcrb/market_data.hpp"
#include "vcrb/pattern_extraction.hpp"

namespace vcrb {

struct LabelConfig {
    int reversal_ticks = 15;
    int crossing_ticks = 3;
    int approach_ticks = 2;
    int expiry_ticks = 5000;

    void validate() const;
};

// Resolves one event by scanning forward from its formation tick:
//   arm    — the first tick within approach_ticks of the target on the
//            eventual approach side sets trigger_tick_index;
//   touch  — the first tick at the target starts resolution, the approach
//            side being the side of the price immediately before it;
//   resolve— >= reversal_ticks back on the approach side is Positive,
//            >= crossing_ticks beyond is Negative, and a shallow cross
//            (1..crossing_ticks-1) followed by the reversal is Excluded.
// Events that exhaust expiry_ticks (or the batch) are Unresolved, as are
// events whose approach side cannot be determined.
PatternEvent label_event(PatternEvent event, const Batch& batch, const LabelConfig& config);

std::vector<PatternEvent> label_events(std::vector<PatternEvent> events, const Batch& batch,
                                       const LabelConfig& config);

struct DispositionCounts {
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t excluded = 0;
    std::size_t unresolved = 0;
};

DispositionCounts count_dispositions(const std::vector<PatternEvent>& events);

// Training keeps only Positive/Negative; testing additionally folds
// Excluded into Negative. Unresolved events are dropped from both.
std::vector<PatternEvent> training_view(const std::vector<PatternEvent>& events);
std::vector<PatternEvent> test_view(const std::vector<PatternEvent>& events);

}  // namespace vcrb
