#include "vcrb/pattern_extraction.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace vcrb {

std::string to_string(PatternKind k) {
    return k == PatternKind::vcrb ? "VCRB" : "PriceLevel";
}
std::string to_string(Side s) {
    return s == Side::target_above ? "TargetAbove" : "TargetBelow";
}
std::string to_string(Label l) {
    switch (l) {
        case Label::positive: return "Positive";
        case Label::negative: return "Negative";
        case Label::excluded: return "Excluded";
        default: return "Unresolved";
    }
}
PatternKind pattern_kind_from_string(const std::string& s) {
    if (s == "VCRB") return PatternKind::vcrb;
    if (s == "PriceLevel") return PatternKind::price_level;
    throw std::invalid_argument("unknown pattern kind: " + s);
}
Side side_from_string(const std::string& s) {
    if (s == "TargetAbove") return Side::target_above;
    if (s == "TargetBelow") return Side::target_below;
    throw std::invalid_argument("unknown side: " + s);
}
Label label_from_string(const std::string& s) {
    if (s == "Positive") return Label::positive;
    if (s == "Negative") return Label::negative;
    if (s == "Excluded") return Label::excluded;
    if (s == "Unresolved") return Label::unresolved;
    throw std::invalid_argument("unknown label: " + s);
}

namespace {

struct TickBuffer {
    std::int64_t init_price_idx;
    std::size_t first_tick_index;
    std::int64_t min_price_idx;
    std::int64_t max_price_idx;
    std::map<std::int64_t, LevelAggregates> per_price;

    std::int64_t span() const { return max_price_idx - min_price_idx; }

    void append(const TickRecord& t) {
        min_price_idx = std::min(min_price_idx, t.price_idx);
        max_price_idx = std::max(max_price_idx, t.price_idx);
        per_price[t.price_idx].add(t);
    }

    VolumeProfile profile() const {
        VolumeProfile p;
        p.base_price_idx = min_price_idx;
        p.levels.assign(static_cast<std::size_t>(span() + 1), LevelAggregates{});
        for (const auto& [price, agg] : per_price)
            p.levels[static_cast<std::size_t>(price - min_price_idx)] = agg;
        return p;
    }
};

}  // namespace

std::vector<PatternEvent> extract_vcrb(const Batch& batch, int range_levels) {
    if (range_levels < 3 || range_levels % 2 == 0)
        throw std::invalid_argument("range_levels must be odd and >= 3");
    const std::int64_t full_span = range_levels - 1;

    std::vector<PatternEvent> events;
    std::deque<TickBuffer> open;  // insertion order
    std::unordered_map<std::int64_t, bool> open_at_price;

    for (std::size_t i = 0; i < batch.ticks.size(); ++i) {
        const TickRecord& tick = batch.ticks[i];
        const std::int64_t p = tick.price_idx;
        if (!open_at_price[p]) {
            open.push_back(TickBuffer{p, i, p, p, {}});
            open_at_price[p] = true;
        }
        for (TickBuffer& buf : open) buf.append(tick);

        // close every buffer whose span reached the configured range
        for (auto it = open.begin(); it != open.end();) {
            if (it->span() < full_span) {
                ++it;
                continue;
            }
            if (it->span() == full_span) {
                VolumeProfile prof = it->profile();
                std::int64_t centre = (it->min_price_idx + it->max_price_idx) / 2;
                std::int64_t centre_vol = prof.at_price(centre).total_volume();
                bool unique_max = true;
                for (std::int64_t price = it->min_price_idx; price <= it->max_price_idx; ++price) {
                    if (price == centre) continue;
                    if (prof.at_price(price).total_volume() >= centre_vol) {
                        unique_max = false;
                        break;
                    }
                }
                if (unique_max) {
                    PatternEvent ev;
                    ev.kind = PatternKind::vcrb;
                    ev.target_price_idx = centre;
                    ev.formation_tick_index = i;
                    ev.profile = std::move(prof);
                    ev.side = centre > p ? Side::target_above : Side::target_below;
                    events.push_back(std::move(ev));
                }
            }
            open_at_price[it->init_price_idx] = false;
            it = open.erase(it);
        }
    }
    return events;
}

namespace {

struct LevelCandidate {
    std::int64_t price;
    bool is_resistance;
};

struct RegisteredLevel {
    std::int64_t price;
    bool is_resistance;
    bool armed = true;  // emits one event per registration
};

}  // namespace

std::vector<PatternEvent> extract_price_levels(const Batch& batch, int lookback_ticks,
                                               int rejection_ticks) {
    if (lookback_ticks < 1 || rejection_ticks < 1)
        throw std::invalid_argument("lookback_ticks and rejection_ticks must be >= 1");
    constexpr std::int64_t kApproachTicks = 2;
    constexpr std::int64_t kCrossTicks = 3;

    std::vector<PatternEvent> events;
    std::deque<std::size_t> max_window, min_window;  // sliding extrema (indices)
    std::vector<LevelCandidate> candidates;
    std::vector<RegisteredLevel> levels;

    const auto& ticks = batch.ticks;
    for (std::size_t i = 0; i < ticks.size(); ++i) {
        const std::int64_t p = ticks[i].price_idx;
        const std::size_t window_lo = i >= static_cast<std::size_t>(lookback_ticks)
                                          ? i - static_cast<std::size_t>(lookback_ticks) + 1
                                          : 0;
        while (!max_window.empty() && max_window.front() < window_lo) max_window.pop_front();
        while (!min_window.empty() && min_window.front() < window_lo) min_window.pop_front();

        // extrema qualify only once a full lookback window is available
        bool warmed_up = i + 1 >= static_cast<std::size_t>(lookback_ticks);
        bool strict_max = warmed_up &&
                          (max_window.empty() || p > ticks[max_window.front()].price_idx);
        bool strict_min = warmed_up &&
                          (min_window.empty() || p < ticks[min_window.front()].price_idx);

        // candidate lifecycle
        for (auto it = candidates.begin(); it != candidates.end();) {
            bool done = false;
            if (it->is_resistance) {
                if (p > it->price) {
                    done = true;  // exceeded before rejection
                } else if (it->price - p >= rejection_ticks) {
                    levels.push_back({it->price, true});
                    done = true;
                }
            } else {
                if (p < it->price) {
                    done = true;
                } else if (p - it->price >= rejection_ticks) {
                    levels.push_back({it->price, false});
                    done = true;
                }
            }
            it = done ? candidates.erase(it) : it + 1;
        }
        if (strict_max) candidates.push_back({p, true});
        if (strict_min) candidates.push_back({p, false});

        // registered level lifecycle: deregister on a deep cross, emit on
        // the first approach
        for (auto it = levels.begin(); it != levels.end();) {
            bool crossed = it->is_resistance ? (p - it->price >= kCrossTicks)
                                             : (it->price - p >= kCrossTicks);
            if (crossed) {
                it = levels.erase(it);
                continue;
            }
            if (it->armed && std::llabs(p - it->price) <= kApproachTicks) {
                PatternEvent ev;
                ev.kind = PatternKind::price_level;
                ev.target_price_idx = it->price;
                ev.formation_tick_index = i;
                ev.side = it->is_resistance ? Side::target_above : Side::target_below;
                events.push_back(std::move(ev));
                it->armed = false;
            }
            ++it;
        }

        while (!max_window.empty() && ticks[max_window.back()].price_idx <= p) max_window.pop_back();
        max_window.push_back(i);
        while (!min_window.empty() && ticks[min_window.back()].price_idx >= p) min_window.pop_back();
        min_window.push_back(i);
    }
    return events;
}

void write_events(const std::string& path, const std::vector<EventTableRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "kind\tbatch\tformation_index\ttarget_price_idx\tside\tlabel\ttrigger_index\n";
    for (const EventTableRow& row : rows) {
        const PatternEvent& e = row.event;
        out << to_string(e.kind) << '\t' << row.batch_label << '\t' << e.formation_tick_index
            << '\t' << e.target_price_idx << '\t' << to_string(e.side) << '\t'
            << to_string(e.label) << '\t';
        if (e.trigger_tick_index)
            out << *e.trigger_tick_index;
        else
            out << -1;
        out << '\n';
    }
}

void write_events(const std::string& path, const std::vector<PatternEvent>& events,
                  const std::string& batch_label) {
    std::vector<EventTableRow> rows;
    rows.reserve(events.size());
    for (const PatternEvent& e : events) rows.push_back({e, batch_label});
    write_events(path, rows);
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
        std::size_t tab = line.find('\t', pos);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(pos));
            break;
        }
        fields.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
    return fields;
}

std::vector<EventTableRow> read_events(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<EventTableRow> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("kind\t", 0) == 0) continue;
        }
        auto f = split_tabs(line);
        if (f.size() != 7) throw std::runtime_error("malformed event line in " + path + ": " + line);
        EventTableRow row;
        row.event.kind = pattern_kind_from_string(f[0]);
        row.batch_label = f[1];
        row.event.formation_tick_index = static_cast<std::size_t>(std::stoll(f[2]));
        row.event.target_price_idx = std::stoll(f[3]);
        row.event.side = side_from_string(f[4]);
        row.event.label = label_from_string(f[5]);
        long long trigger = std::stoll(f[6]);
        if (trigger >= 0) row.event.trigger_tick_index = static_cast<std::size_t>(trigger);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace vcrb
