#include "vcrb/labeling.hpp"

#include <stdexcept>

namespace vcrb {

void LabelConfig::validate() const {
    if (!(reversal_ticks > crossing_ticks && crossing_ticks > 0))
        throw std::invalid_argument("require reversal_ticks > crossing_ticks > 0");
    if (approach_ticks < 1) throw std::invalid_argument("approach_ticks must be >= 1");
    if (expiry_ticks < 1) throw std::invalid_argument("expiry_ticks must be >= 1");
}

PatternEvent label_event(PatternEvent event, const Batch& batch, const LabelConfig& config) {
    config.validate();
    const auto& ticks = batch.ticks;
    if (event.formation_tick_index >= ticks.size())
        throw std::out_of_range("formation_tick_index outside batch");

    const std::int64_t x = event.target_price_idx;
    const std::size_t begin = event.formation_tick_index + 1;
    const std::size_t end = std::min(
        ticks.size(), event.formation_tick_index + static_cast<std::size_t>(config.expiry_ticks) + 1);

    event.label = Label::unresolved;
    event.trigger_tick_index.reset();

    // find the touch and the approach side
    std::size_t touch = end;
    int side_sign = 0;
    for (std::size_t i = begin; i < end; ++i) {
        if (ticks[i].price_idx == x) {
            if (i == begin) return event;  // side undeterminable
            side_sign = ticks[i - 1].price_idx > x ? +1 : -1;
            touch = i;
            break;
        }
    }
    if (touch == end) return event;  // never touched within the window

    // trigger: first pre-touch tick within the approach band on that side
    for (std::size_t i = begin; i < touch; ++i) {
        std::int64_t offset = (ticks[i].price_idx - x) * side_sign;
        if (offset >= 1 && offset <= config.approach_ticks) {
            event.trigger_tick_index = i;
            break;
        }
    }

    // resolution: reversal on the approach side vs crossing beyond
    std::int64_t deepest_cross = 0;  // most negative signed offset seen
    for (std::size_t i = touch; i < end; ++i) {
        std::int64_t offset = (ticks[i].price_idx - x) * side_sign;
        if (offset <= -config.crossing_ticks) {
            event.label = Label::negative;
            return event;
        }
        if (offset >= config.reversal_ticks) {
            event.label = deepest_cross < 0 ? Label::excluded : Label::positive;
            return event;
        }
        deepest_cross = std::min(deepest_cross, offset);
    }
    return event;  // window exhausted
}

std::vector<PatternEvent> label_events(std::vector<PatternEvent> events, const Batch& batch,
                                       const LabelConfig& config) {
    for (PatternEvent& e : events) e = label_event(std::move(e), batch, config);
    return events;
}

DispositionCounts count_dispositions(const std::vector<PatternEvent>& events) {
    DispositionCounts c;
    for (const PatternEvent& e : events) {
        switch (e.label) {
            case Label::positive: ++c.positives; break;
            case Label::negative: ++c.negatives; break;
            case Label::excluded: ++c.excluded; break;
            case Label::unresolved: ++c.unresolved; break;
        }
    }
    return c;
}

std::vector<PatternEvent> training_view(const std::vector<PatternEvent>& events) {
    std::vector<PatternEvent> out;
    for (const PatternEvent& e : events)
        if (e.label == Label::positive || e.label == Label::negative) out.push_back(e);
    return out;
}

std::vector<PatternEvent> test_view(const std::vector<PatternEvent>& events) {
    std::vector<PatternEvent> out;
    for (const PatternEvent& e : events) {
        if (e.label == Label::unresolved) continue;
        PatternEvent copy = e;
        if (copy.label == Label::excluded) copy.label = Label::negative;
        out.push_back(std::move(copy));
    }
    return out;
}

}  // namespace vcrb
