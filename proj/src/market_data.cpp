#include "vcrb/market_data.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vcrb/random.hpp"

namespace vcrb {

namespace {

bool parse_int(std::string_view field, std::int64_t& out) {
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

bool parse_double(std::string_view field, double& out) {
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (true) {
        std::size_t comma = line.find(',', pos);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(pos));
            break;
        }
        fields.push_back(line.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return fields;
}

// Reads all lines from a plain or gzip file.
std::vector<std::string> read_lines(const std::string& path) {
    std::vector<std::string> lines;
    if (path.size() > 3 && path.substr(path.size() - 3) == ".gz") {
        gzFile f = gzopen(path.c_str(), "rb");
        if (!f) throw std::runtime_error("cannot open " + path);
        std::string current;
        char buf[1 << 16];
        int n;
        while ((n = gzread(f, buf, sizeof(buf))) > 0) {
            for (int i = 0; i < n; ++i) {
                if (buf[i] == '\n') {
                    lines.push_back(std::move(current));
                    current.clear();
                } else if (buf[i] != '\r') {
                    current.push_back(buf[i]);
                }
            }
        }
        gzclose(f);
        if (!current.empty()) lines.push_back(std::move(current));
    } else {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            lines.push_back(line);
        }
    }
    return lines;
}

void check_record(const TickRecord& t, std::size_t line_no) {
    if (t.end_ts_ms < t.start_ts_ms)
        throw ParseError("end timestamp precedes start timestamp", line_no);
    if (t.bid_volume < 0 || t.ask_volume < 0 || t.bid_trades < 0 || t.ask_trades < 0)
        throw ParseError("negative volume or trade count", line_no);
    if ((t.bid_trades == 0 && t.bid_volume != 0) || (t.bid_trades > 0 && t.bid_volume < t.bid_trades))
        throw ParseError("trade/volume consistency violated on bid side", line_no);
    if ((t.ask_trades == 0 && t.ask_volume != 0) || (t.ask_trades > 0 && t.ask_volume < t.ask_trades))
        throw ParseError("trade/volume consistency violated on ask side", line_no);
}

std::chrono::year_month month_of(std::int64_t ts_ms) {
    using namespace std::chrono;
    sys_time<milliseconds> tp{milliseconds{ts_ms}};
    year_month_day ymd{floor<days>(tp)};
    return year_month{ymd.year(), ymd.month()};
}

std::int64_t month_start_ms(std::chrono::year_month ym) {
    using namespace std::chrono;
    sys_days d = sys_days{ym / 1};
    return duration_cast<milliseconds>(d.time_since_epoch()).count();
}

std::string month_label(std::chrono::year_month ym) {
    int month = static_cast<int>(unsigned(ym.month()));
    int year = int(ym.year()) % 100;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%d/%02d", month, year);
    return buf;
}

}  // namespace

std::vector<TickRecord> load_ticks(const std::string& path, const InstrumentSpec& spec,
                                   TimestampPolicy policy) {
    if (spec.tick_size <= 0.0) throw std::invalid_argument("tick_size must be positive");
    std::vector<TickRecord> ticks;
    auto lines = read_lines(path);
    bool out_of_order = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        std::size_t line_no = i + 1;
        if (line.empty()) continue;
        auto fields = split_csv(line);
        if (i == 0) {
            // header detection: non-numeric first field
            std::int64_t probe;
            if (!fields.empty() && !parse_int(fields[0], probe)) continue;
        }
        if (fields.size() != 7) throw ParseError("expected 7 comma-separated fields", line_no);
        TickRecord t;
        double price;
        if (!parse_int(fields[0], t.start_ts_ms) || !parse_int(fields[1], t.end_ts_ms) ||
            !parse_double(fields[2], price) || !parse_int(fields[3], t.bid_volume) ||
            !parse_int(fields[4], t.ask_volume) || !parse_int(fields[5], t.bid_trades) ||
            !parse_int(fields[6], t.ask_trades)) {
            throw ParseError("malformed field", line_no);
        }
        double idx_f = price / spec.tick_size;
        t.price_idx = static_cast<std::int64_t>(std::llround(idx_f));
        double recon = static_cast<double>(t.price_idx) * spec.tick_size;
        double tol = 1e-9 * std::max(1.0, std::fabs(price));
        if (std::fabs(recon - price) > tol)
            throw ParseError("price is not a multiple of tick_size", line_no);
        check_record(t, line_no);
        if (!ticks.empty() && t.start_ts_ms < ticks.back().start_ts_ms) out_of_order = true;
        ticks.push_back(t);
    }
    if (out_of_order) {
        if (policy == TimestampPolicy::reject)
            throw std::runtime_error("non-monotonic timestamps in " + path);
        std::cerr << "warning: non-monotonic timestamps in " << path << "; sorting\n";
        std::stable_sort(ticks.begin(), ticks.end(),
                         [](const TickRecord& a, const TickRecord& b) {
                             return a.start_ts_ms < b.start_ts_ms;
                         });
    }
    return ticks;
}

void save_ticks(const std::string& path, const std::vector<TickRecord>& ticks,
                const InstrumentSpec& spec) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    char buf[256];
    for (const TickRecord& t : ticks) {
        double price = static_cast<double>(t.price_idx) * spec.tick_size;
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%.12g,%lld,%lld,%lld,%lld\n",
                      static_cast<long long>(t.start_ts_ms), static_cast<long long>(t.end_ts_ms),
                      price, static_cast<long long>(t.bid_volume),
                      static_cast<long long>(t.ask_volume), static_cast<long long>(t.bid_trades),
                      static_cast<long long>(t.ask_trades));
        out << buf;
    }
}

std::vector<Batch> split_batches(const std::vector<TickRecord>& ticks, int months_per_batch) {
    using namespace std::chrono;
    if (ticks.empty()) throw std::invalid_argument("split_batches: empty tick sequence");
    if (months_per_batch < 1) throw std::invalid_argument("months_per_batch must be >= 1");

    year_month first = month_of(ticks.front().start_ts_ms);
    std::vector<Batch> batches;
    year_month cursor = first;
    std::size_t tick_pos = 0;
    std::int64_t last_ts = ticks.back().start_ts_ms;
    while (true) {
        year_month next = cursor + months{months_per_batch};
        Batch b;
        b.start_ts_ms = month_start_ms(cursor);
        b.end_ts_ms = month_start_ms(next);
        b.label = month_label(cursor) + " to " + month_label(next);
        while (tick_pos < ticks.size() && ticks[tick_pos].start_ts_ms < b.end_ts_ms) {
            b.ticks.push_back(ticks[tick_pos]);
            ++tick_pos;
        }
        batches.push_back(std::move(b));
        if (batches.back().end_ts_ms > last_ts) break;
        cursor = next;
    }
    return batches;
}

void SyntheticConfig::validate() const {
    if (n_ticks == 0) throw std::invalid_argument("n_ticks must be positive");
    if (base_volume <= 0 || spike_volume <= 0)
        throw std::invalid_argument("volumes must be positive");
    if (wander_ticks < 0 || departure_ticks < 3 || dwell_ticks < 0)
        throw std::invalid_argument("invalid episode phase lengths");
    if (flow_ratio_high <= 0.0) throw std::invalid_argument("flow_ratio_high must be positive");
    if (ts_step_ms <= 0) throw std::invalid_argument("ts_step_ms must be positive");
    double hi = base_reversal_rate + signal_delta / 2.0;
    double lo = base_reversal_rate - signal_delta / 2.0;
    if (hi < 0.0 || hi > 1.0 || lo < 0.0 || lo > 1.0)
        throw std::invalid_argument("reversal probability outside [0,1]");
}

namespace {

// Emits reversal outcomes at exactly the configured long-run rate
// (Bresenham accumulator), so the planted conditional gap is tight even on
// short streams.
struct RateSequencer {
    double rate;
    std::int64_t count = 0;
    std::int64_t emitted = 0;
    bool next() {
        ++count;
        std::int64_t want = static_cast<std::int64_t>(std::floor(rate * static_cast<double>(count) + 1e-12));
        bool rev = want > emitted;
        if (rev) ++emitted;
        return rev;
    }
};

class SyntheticEmitter {
public:
    SyntheticEmitter(const SyntheticConfig& cfg, Rng& rng, SyntheticStream& out)
        : cfg_(cfg), rng_(rng), out_(out) {}

    std::size_t size() const { return out_.ticks.size(); }

    // volume split by bid:ask ratio r, trade counts roughly half the volume
    void emit(std::int64_t price, std::int64_t total_volume, double ratio) {
        TickRecord t;
        t.start_ts_ms = cfg_.start_ts_ms + static_cast<std::int64_t>(size()) * cfg_.ts_step_ms;
        t.end_ts_ms = t.start_ts_ms + cfg_.ts_step_ms / 2;
        t.price_idx = price;
        t.bid_volume = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::llround(static_cast<double>(total_volume) * ratio / (1.0 + ratio))));
        t.ask_volume = std::max<std::int64_t>(1, total_volume - t.bid_volume);
        t.bid_trades = std::max<std::int64_t>(1, t.bid_volume / 2);
        t.ask_trades = std::max<std::int64_t>(1, t.ask_volume / 2);
        out_.ticks.push_back(t);
    }

    void emit_neutral(std::int64_t price) {
        std::int64_t vol = cfg_.base_volume + rng_.uniform_int(-1, 1);
        emit(price, std::max<std::int64_t>(2, vol), 1.0);
    }

private:
    const SyntheticConfig& cfg_;
    Rng& rng_;
    SyntheticStream& out_;
};

}  // namespace

SyntheticStream generate_synthetic_traced(std::uint64_t seed, const SyntheticConfig& cfg) {
    cfg.validate();
    SyntheticStream out;
    out.ticks.reserve(cfg.n_ticks);
    Rng rng(mix_seed(seed, 0xda7a));
    SyntheticEmitter em(cfg, rng, out);

    RateSequencer high_arm{cfg.base_reversal_rate + cfg.signal_delta / 2.0};
    RateSequencer low_arm{cfg.base_reversal_rate - cfg.signal_delta / 2.0};

    std::int64_t price = cfg.base_price_idx;
    // Worst-case episode length; stop opening new episodes when the budget
    // is too small and pad with wander instead.
    const std::size_t episode_budget =
        static_cast<std::size_t>(cfg.wander_ticks + 14 + cfg.departure_ticks + cfg.dwell_ticks +
                                 cfg.departure_ticks + 18);

    while (em.size() < cfg.n_ticks) {
        // wander phase
        for (int i = 0; i < cfg.wander_ticks && em.size() < cfg.n_ticks; ++i) {
            price += rng.uniform_int(-1, 1);
            em.emit_neutral(price);
        }
        if (cfg.n_ticks - em.size() < episode_budget) {
            while (em.size() < cfg.n_ticks) {
                price += rng.uniform_int(-1, 1);
                em.emit_neutral(price);
            }
            break;
        }

        PlantedEpisode ep;
        ep.target_price_idx = price;
        ep.high_flow = rng.bernoulli(0.5);
        ep.planted_reversal = ep.high_flow ? high_arm.next() : low_arm.next();
        ep.approach_dir = rng.bernoulli(0.5) ? +1 : -1;
        ep.formation_begin = em.size();

        const std::int64_t x = ep.target_price_idx;
        const int d = ep.approach_dir;
        const double ratio = ep.high_flow ? cfg.flow_ratio_high : 1.0 / cfg.flow_ratio_high;

        // formation: covers x-2..x+2 with the volume peak at x; last tick
        // one step toward the departure side so the pattern side is defined
        const std::int64_t steps[] = {0, 1, 0, -1, 0, 1, 2, 1, 0, -1, -2, -1, 0, d};
        for (std::int64_t s : steps) {
            std::int64_t p = x + s;
            em.emit(p, p == x ? cfg.spike_volume : cfg.base_volume, ratio);
        }
        ep.formation_end = em.size() - 1;
        out.episodes.push_back(ep);

        // departure: leave the approach band
        for (int k = 2; k <= cfg.departure_ticks; ++k) em.emit_neutral(x + d * k);
        for (int i = 0; i < cfg.dwell_ticks; ++i)
            em.emit_neutral(x + d * (cfg.departure_ticks - (i % 2)));
        // return and touch
        for (int k = cfg.departure_ticks - 1; k >= 1; --k) em.emit_neutral(x + d * k);
        em.emit_neutral(x);
        // resolution
        if (ep.planted_reversal) {
            for (int k = 1; k <= 15; ++k) em.emit_neutral(x + d * k);
            price = x + d * 15;
        } else {
            for (int k = 1; k <= 4; ++k) em.emit_neutral(x - d * k);
            price = x - d * 4;
        }
    }
    return out;
}

std::vector<TickRecord> generate_synthetic(std::uint64_t seed, const SyntheticConfig& cfg) {
    return generate_synthetic_traced(seed, cfg).ticks;
}

std::int64_t trading_day_index(std::int64_t ts_ms, const InstrumentSpec& spec) {
    if (spec.session_boundaries_ms.empty()) {
        // floor division: negative epochs land in the preceding day
        std::int64_t day = ts_ms / 86400000;
        if (ts_ms < 0 && ts_ms % 86400000 != 0) --day;
        return day;
    }
    const auto& b = spec.session_boundaries_ms;
    auto it = std::upper_bound(b.begin(), b.end(), ts_ms);
    return static_cast<std::int64_t>(it - b.begin());
}

}  // namespace vcrb
