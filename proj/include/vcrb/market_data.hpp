#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vcrb {

struct InstrumentSpec {
    std::string symbol;
    double tick_size = 0.25;  // price units per tick, > 0
    // Optional trading-day boundaries (epoch ms, ascending). When empty,
    // days are cut at 00:00 UTC.
    std::vector<std::int64_t> session_boundaries_ms;
};

// One aggregated trade event. Prices are integer tick indices everywhere
// downstream; all distances are integer arithmetic.
struct TickRecord {
    std::int64_t start_ts_ms = 0;
    std::int64_t end_ts_ms = 0;
    std::int64_t price_idx = 0;
    std::int64_t bid_volume = 0;  // aggressive sellers, V_b
    std::int64_t ask_volume = 0;  // aggressive buyers, V_a
    std::int64_t bid_trades = 0;  // T_b
    std::int64_t ask_trades = 0;  // T_a

    bool operator==(const TickRecord&) const = default;
};

struct Batch {
    std::string label;  // "M/YY to M/YY"
    std::vector<TickRecord> ticks;
    std::int64_t start_ts_ms = 0;  // inclusive
    std::int64_t end_ts_ms = 0;    // exclusive
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what), line_number(line) {}
    std::size_t line_number;
};

enum class TimestampPolicy { reject, warn_and_sort };

// Reads the tick text format: one record per line,
// start_ts_ms,end_ts_ms,price,bid_volume,ask_volume,bid_trades,ask_trades.
// An optional header line is detected by a non-numeric first field.
// Files ending in .gz are transparently decompressed.
std::vector<TickRecord> load_ticks(const std::string& path, const InstrumentSpec& spec,
                                   TimestampPolicy policy = TimestampPolicy::reject);

// Writes the same text format (no header). Round-trips through load_ticks.
void save_ticks(const std::string& path, const std::vector<TickRecord>& ticks,
                const InstrumentSpec& spec);

// Splits a time-ordered tick sequence into consecutive calendar-aligned
// batches of `months_per_batch` months. Empty batches are retained.
std::vector<Batch> split_batches(const std::vector<TickRecord>& ticks, int months_per_batch = 3);

// Planted-signal synthetic stream. The generator emits episodes: a volume
// peak forms at a target price, price departs, returns, and then either
// reverses or crosses. The bid/ask volume ratio around the peak (the
// designated microstructure ratio) is drawn high or low per episode, and
// the conditional reversal probability differs by signal_delta between the
// two arms.
struct SyntheticConfig {
    std::size_t n_ticks = 50000;
    std::int64_t base_price_idx = 100000;
    double base_reversal_rate = 0.45;
    double signal_delta = 0.0;     // P(rev | high arm) - P(rev | low arm)
    double flow_ratio_high = 1.5;  // bid:ask volume ratio in the high arm
    std::int64_t base_volume = 6;  // per-tick volume away from the peak
    std::int64_t spike_volume = 48;  // per-tick volume at the peak price
    int wander_ticks = 12;
    int departure_ticks = 6;  // how far price leaves the target before returning
    int dwell_ticks = 4;
    std::int64_t start_ts_ms = 1488326400000;  // 2017-03-01T00:00Z
    std::int64_t ts_step_ms = 60000;

    void validate() const;
};

// Episode bookkeeping for test oracles; indices refer to the emitted stream.
struct PlantedEpisode {
    std::int64_t target_price_idx = 0;
    std::size_t formation_begin = 0;
    std::size_t formation_end = 0;  // inclusive; last formation tick
    bool high_flow = false;
    bool planted_reversal = false;
    int approach_dir = +1;  // +1: price departs above the target, -1: below
};

struct SyntheticStream {
    std::vector<TickRecord> ticks;
    std::vector<PlantedEpisode> episodes;
};

SyntheticStream generate_synthetic_traced(std::uint64_t seed, const SyntheticConfig& config);
std::vector<TickRecord> generate_synthetic(std::uint64_t seed, const SyntheticConfig& config);

// Trading-day index of a timestamp: position in the session calendar if one
// is given, otherwise days since epoch at 00:00 UTC.
std::int64_t trading_day_index(std::int64_t ts_ms, const InstrumentSpec& spec);

}  // namespace vcrb
