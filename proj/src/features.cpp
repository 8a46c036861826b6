#include "vcrb/features.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace vcrb {

void FeatureConfig::validate() const {
    if (short_window < 1 || long_window <= short_window)
        throw std::invalid_argument("require long_window > short_window >= 1");
}

const std::vector<std::string>& feature_names() {
    static const std::vector<std::string> names = {
        "P0",  "P1",  "P2",     "P3",    "P4",     "P5",     "P6",     "P7",
        "P8",  "P9",  "P10",    "P11",   "P12_m1", "P12_0",  "P12_p1", "P13_m1",
        "P13_0", "P13_p1", "P14", "MS0", "MS1",    "MS2",    "MS3"};
    return names;
}

std::size_t feature_index(const std::string& name) {
    const auto& names = feature_names();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return i;
    throw std::invalid_argument("unknown feature name: " + name);
}

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : missing_value(); }

// Aggregates the trailing `window` ticks ending at `end_index` inclusive.
std::map<std::int64_t, LevelAggregates> window_aggregates(const Batch& batch,
                                                          std::size_t end_index, int window) {
    std::map<std::int64_t, LevelAggregates> agg;
    std::size_t lo = end_index + 1 >= static_cast<std::size_t>(window)
                         ? end_index + 1 - static_cast<std::size_t>(window)
                         : 0;
    for (std::size_t i = lo; i <= end_index; ++i)
        agg[batch.ticks[i].price_idx].add(batch.ticks[i]);
    return agg;
}

struct NeighbourhoodReader {
    const PatternEvent& event;
    std::map<std::int64_t, LevelAggregates> window;

    // aggregates for Table-style offset t in [-5, 5]
    LevelAggregates at(int t) const {
        std::int64_t price;
        if (event.kind == PatternKind::vcrb) {
            price = event.target_price_idx + t;
            if (event.profile.contains(price)) return event.profile.at_price(price);
        } else {
            // one-sided odd/even remap: t=-k reads distance 2k-1 from the
            // target on the approach side, t=+k reads distance 2k
            std::int64_t dist = t == 0 ? 0 : (t < 0 ? 2 * (-t) - 1 : 2 * t);
            int toward = event.side == Side::target_above ? -1 : +1;
            price = event.target_price_idx + toward * dist;
        }
        auto it = window.find(price);
        return it == window.end() ? LevelAggregates{} : it->second;
    }

    LevelAggregates sum_upper() const { return sum_range(1, 5); }
    LevelAggregates sum_lower() const { return sum_range(-5, -1); }

    LevelAggregates sum_range(int lo, int hi) const {
        LevelAggregates s;
        for (int t = lo; t <= hi; ++t) {
            LevelAggregates a = at(t);
            s.bid_volume += a.bid_volume;
            s.ask_volume += a.ask_volume;
            s.bid_trades += a.bid_trades;
            s.ask_trades += a.ask_trades;
        }
        return s;
    }
};

}  // namespace

std::vector<double> pattern_features(const PatternEvent& event, const Batch& batch,
                                     const FeatureConfig& config) {
    config.validate();
    if (event.formation_tick_index >= batch.ticks.size())
        throw std::out_of_range("formation_tick_index outside batch");

    NeighbourhoodReader nb{event,
                           window_aggregates(batch, event.formation_tick_index, config.long_window)};
    LevelAggregates up = nb.sum_upper();
    LevelAggregates lo = nb.sum_lower();
    LevelAggregates poc = nb.at(0);

    std::vector<double> f(19, missing_value());
    f[0] = ratio(static_cast<double>(up.bid_volume), static_cast<double>(lo.bid_volume));
    f[1] = ratio(static_cast<double>(up.ask_volume), static_cast<double>(lo.ask_volume));
    // equations per the feature table: the trade-count ratios use ask
    // trades for P2 and bid trades for P3
    f[2] = ratio(static_cast<double>(up.ask_trades), static_cast<double>(lo.ask_trades));
    f[3] = ratio(static_cast<double>(up.bid_trades), static_cast<double>(lo.bid_trades));
    f[4] = ratio(static_cast<double>(up.bid_volume), static_cast<double>(up.bid_trades));
    f[5] = ratio(static_cast<double>(up.ask_volume), static_cast<double>(up.ask_trades));
    f[6] = ratio(static_cast<double>(lo.bid_volume), static_cast<double>(lo.bid_trades));
    f[7] = ratio(static_cast<double>(lo.ask_volume), static_cast<double>(lo.ask_trades));
    f[8] = ratio(static_cast<double>(poc.bid_volume), static_cast<double>(up.bid_volume));
    f[9] = ratio(static_cast<double>(poc.ask_volume), static_cast<double>(up.ask_volume));
    f[10] = ratio(static_cast<double>(poc.bid_volume), static_cast<double>(lo.bid_volume));
    f[11] = ratio(static_cast<double>(poc.ask_volume), static_cast<double>(lo.ask_volume));
    for (int t = -1; t <= 1; ++t) {
        LevelAggregates a = nb.at(t);
        f[static_cast<std::size_t>(13 + t)] =
            ratio(static_cast<double>(a.bid_volume), static_cast<double>(a.ask_volume));
        f[static_cast<std::size_t>(16 + t)] =
            ratio(static_cast<double>(a.bid_trades), static_cast<double>(a.ask_trades));
    }
    f[18] = event.side == Side::target_above ? 1.0 : 0.0;
    return f;
}

std::vector<double> market_shift_features(const Batch& batch, std::size_t trigger_tick_index,
                                          const FeatureConfig& config) {
    config.validate();
    std::vector<double> ms(4, missing_value());
    if (trigger_tick_index < static_cast<std::size_t>(config.long_window) ||
        trigger_tick_index >= batch.ticks.size())
        return ms;

    auto flow = [&](int window) {
        std::int64_t vb = 0, va = 0, tb = 0, ta = 0;
        for (std::size_t i = trigger_tick_index - static_cast<std::size_t>(window);
             i < trigger_tick_index; ++i) {
            const TickRecord& t = batch.ticks[i];
            vb += t.bid_volume;
            va += t.ask_volume;
            tb += t.bid_trades;
            ta += t.ask_trades;
        }
        return std::array<double, 4>{static_cast<double>(vb), static_cast<double>(va),
                                     static_cast<double>(tb), static_cast<double>(ta)};
    };
    auto lw = flow(config.long_window);
    auto sw = flow(config.short_window);

    ms[0] = ratio(lw[0], lw[1]);
    ms[1] = ratio(lw[2], lw[3]);
    double vol_short = ratio(sw[0], sw[1]);
    double trd_short = ratio(sw[2], sw[3]);
    if (!is_missing(ms[0]) && !is_missing(vol_short)) ms[2] = ms[0] - vol_short;
    if (!is_missing(ms[1]) && !is_missing(trd_short)) ms[3] = ms[1] - trd_short;
    return ms;
}

void compute_features(PatternEvent& event, const Batch& batch, const FeatureConfig& config) {
    std::vector<double> f = pattern_features(event, batch, config);
    std::vector<double> ms(4, missing_value());
    if (event.trigger_tick_index)
        ms = market_shift_features(batch, *event.trigger_tick_index, config);
    f.insert(f.end(), ms.begin(), ms.end());
    event.features = std::move(f);
}

void write_feature_table(const std::string& path, const std::vector<EventTableRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "batch\tkind\tformation_index\ttarget_price_idx\tside\tlabel\ttrigger_index";
    for (const auto& name : feature_names()) out << '\t' << name;
    out << '\n';
    char buf[64];
    for (const EventTableRow& row : rows) {
        const PatternEvent& e = row.event;
        if (e.features.size() != feature_names().size())
            throw std::runtime_error("event features not computed");
        out << row.batch_label << '\t' << to_string(e.kind) << '\t' << e.formation_tick_index
            << '\t' << e.target_price_idx << '\t' << to_string(e.side) << '\t'
            << to_string(e.label) << '\t'
            << (e.trigger_tick_index ? static_cast<long long>(*e.trigger_tick_index) : -1LL);
        for (double v : e.features) {
            if (is_missing(v)) {
                out << "\tMissing";
            } else {
                std::snprintf(buf, sizeof(buf), "%.17g", v);
                out << '\t' << buf;
            }
        }
        out << '\n';
    }
}

std::vector<EventTableRow> read_feature_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<EventTableRow> rows;
    std::string line;
    bool first = true;
    const std::size_t n_features = feature_names().size();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("batch\t", 0) == 0) continue;
        }
        auto f = split_tabs(line);
        if (f.size() != 7 + n_features)
            throw std::runtime_error("malformed feature line in " + path);
        EventTableRow row;
        row.batch_label = f[0];
        row.event.kind = pattern_kind_from_string(f[1]);
        row.event.formation_tick_index = static_cast<std::size_t>(std::stoll(f[2]));
        row.event.target_price_idx = std::stoll(f[3]);
        row.event.side = side_from_string(f[4]);
        row.event.label = label_from_string(f[5]);
        long long trigger = std::stoll(f[6]);
        if (trigger >= 0) row.event.trigger_tick_index = static_cast<std::size_t>(trigger);
        row.event.features.reserve(n_features);
        for (std::size_t i = 0; i < n_features; ++i) {
            const std::string& field = f[7 + i];
            row.event.features.push_back(field == "Missing" ? missing_value() : std::stod(field));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace vcrb
