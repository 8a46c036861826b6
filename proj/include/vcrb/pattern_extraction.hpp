#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vcrb/market_data.hpp"

namespace vcrb {

struct LevelAggregates {
    std::int64_t bid_volume = 0;
    std::int64_t ask_volume = 0;
    std::int64_t bid_trades = 0;
    std::int64_t ask_trades = 0;

    void add(const TickRecord& t) {
        bid_volume += t.bid_volume;
        ask_volume += t.ask_volume;
        bid_trades += t.bid_trades;
        ask_trades += t.ask_trades;
    }
    std::int64_t total_volume() const { return bid_volume + ask_volume; }
    bool operator==(const LevelAggregates&) const = default;
};

// Per-price histogram over a window of ticks; levels[i] aggregates price
// base_price_idx + i.
struct VolumeProfile {
    std::int64_t base_price_idx = 0;
    std::vector<LevelAggregates> levels;

    bool empty() const { return levels.empty(); }
    bool contains(std::int64_t price) const {
        return price >= base_price_idx &&
               price < base_price_idx + static_cast<std::int64_t>(levels.size());
    }
    const LevelAggregates& at_price(std::int64_t price) const {
        return levels[static_cast<std::size_t>(price - base_price_idx)];
    }
    std::int64_t total_volume() const {
        std::int64_t s = 0;
        for (const auto& l : levels) s += l.total_volume();
        return s;
    }
};

enum class PatternKind { vcrb, price_level };
enum class Side { target_above, target_below };
enum class Label { positive, negative, excluded, unresolved };

std::string to_string(PatternKind k);
std::string to_string(Side s);
std::string to_string(Label l);
PatternKind pattern_kind_from_string(const std::string& s);
Side side_from_string(const std::string& s);
Label label_from_string(const std::string& s);

struct PatternEvent {
    PatternKind kind = PatternKind::vcrb;
    std::int64_t target_price_idx = 0;  // X: PoC or extremum
    std::size_t formation_tick_index = 0;
    VolumeProfile profile;  // empty for price-level events
    Side side = Side::target_above;
    std::optional<std::size_t> trigger_tick_index;
    Label label = Label::unresolved;
    std::vector<double> features;  // aligned with feature_names(); NaN = missing
    double probability = std::numeric_limits<double>::quiet_NaN();  // model output
};

// Volume-centred range bar extraction. `range_levels` is the number of
// price levels R in a completed buffer; a buffer closes when its price span
// (max - min) reaches R - 1. A closed buffer is emitted when the span is
// exactly R - 1 and the centre level holds the unique maximum total volume.
std::vector<PatternEvent> extract_vcrb(const Batch& batch, int range_levels);

// Support/resistance levels: a price that is the strict extremum of the
// trailing lookback window and is then rejected by >= rejection_ticks is
// registered; the first later approach within 2 ticks emits an event; a
// level is dropped once price crosses it by >= 3 ticks.
std::vector<PatternEvent> extract_price_levels(const Batch& batch, int lookback_ticks,
                                               int rejection_ticks);

// Line-oriented event table (one event per line) for inspection and for the
// labeling stage.
struct EventTableRow {
    PatternEvent event;
    std::string batch_label;
};
void write_events(const std::string& path, const std::vector<EventTableRow>& rows);
void write_events(const std::string& path, const std::vector<PatternEvent>& events,
                  const std::string& batch_label);
std::vector<EventTableRow> read_events(const std::string& path);
std::vector<std::string> split_tabs(const std::string& line);

}  // namespace vcrb
