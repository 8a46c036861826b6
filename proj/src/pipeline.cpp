#include "vcrb/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "vcrb/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vcrb {

namespace {

constexpr const char* kVersion = "vcrb-lab 0.1.0";

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

std::string text_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return text_hash(ss.str());
}

// ---------------------------------------------------------------------------
// config

namespace {

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
        }
    }
}

SyntheticConfig parse_synthetic(const json& j) {
    check_keys(j, "synthetic",
               {"n_ticks", "base_price_idx", "base_reversal_rate", "signal_delta",
                "flow_ratio_high", "base_volume", "spike_volume", "wander_ticks",
                "departure_ticks", "dwell_ticks", "start_ts_ms", "ts_step_ms"});
    SyntheticConfig s;
    read_field(j, "n_ticks", s.n_ticks);
    read_field(j, "base_price_idx", s.base_price_idx);
    read_field(j, "base_reversal_rate", s.base_reversal_rate);
    read_field(j, "signal_delta", s.signal_delta);
    read_field(j, "flow_ratio_high", s.flow_ratio_high);
    read_field(j, "base_volume", s.base_volume);
    read_field(j, "spike_volume", s.spike_volume);
    read_field(j, "wander_ticks", s.wander_ticks);
    read_field(j, "departure_ticks", s.departure_ticks);
    read_field(j, "dwell_ticks", s.dwell_ticks);
    read_field(j, "start_ts_ms", s.start_ts_ms);
    read_field(j, "ts_step_ms", s.ts_step_ms);
    return s;
}

GbdtParams parse_params(const json& j, const std::string& where) {
    check_keys(j, where, {"iterations", "max_depth", "learning_rate", "l2", "has_time"});
    GbdtParams p;
    read_field(j, "iterations", p.iterations);
    read_field(j, "max_depth", p.max_depth);
    read_field(j, "learning_rate", p.learning_rate);
    read_field(j, "l2", p.l2);
    read_field(j, "has_time", p.has_time);
    return p;
}

}  // namespace

RunConfig parse_config_json(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    check_keys(root, origin,
               {"seed", "out_dir", "months_per_batch", "instruments", "ranges", "price_levels",
                "label", "features", "model", "tuning", "explain", "strategy", "sharpe", "rq3"});
    RunConfig cfg;
    read_field(root, "seed", cfg.seed);
    read_field(root, "out_dir", cfg.out_dir);
    read_field(root, "months_per_batch", cfg.months_per_batch);

    if (!root.contains("instruments") || !root["instruments"].is_array() ||
        root["instruments"].empty())
        throw ConfigError("config requires a non-empty 'instruments' array");
    for (const json& ji : root["instruments"]) {
        check_keys(ji, "instruments[]",
                   {"name", "tick_size", "session_boundaries_ms", "source", "path", "synthetic"});
        InstrumentConfig ic;
        read_field(ji, "name", ic.name);
        if (ic.name.empty()) throw ConfigError("instrument name must be non-empty");
        ic.spec.symbol = ic.name;
        read_field(ji, "tick_size", ic.spec.tick_size);
        read_field(ji, "session_boundaries_ms", ic.spec.session_boundaries_ms);
        read_field(ji, "source", ic.source);
        read_field(ji, "path", ic.path);
        if (ji.contains("synthetic")) ic.synthetic = parse_synthetic(ji["synthetic"]);
        if (ic.source != "synthetic" && ic.source != "file")
            throw ConfigError("instrument source must be 'synthetic' or 'file'");
        if (ic.source == "file" && ic.path.empty())
            throw ConfigError("instrument source 'file' requires a path");
        cfg.instruments.push_back(std::move(ic));
    }

    read_field(root, "ranges", cfg.ranges);

    if (root.contains("price_levels")) {
        const json& j = root["price_levels"];
        check_keys(j, "price_levels", {"enabled", "lookback_ticks", "rejection_ticks"});
        read_field(j, "enabled", cfg.price_levels_enabled);
        read_field(j, "lookback_ticks", cfg.pl_lookback_ticks);
        read_field(j, "rejection_ticks", cfg.pl_rejection_ticks);
    }
    if (root.contains("label")) {
        const json& j = root["label"];
        check_keys(j, "label", {"reversal_ticks", "crossing_ticks", "approach_ticks", "expiry_ticks"});
        read_field(j, "reversal_ticks", cfg.label.reversal_ticks);
        read_field(j, "crossing_ticks", cfg.label.crossing_ticks);
        read_field(j, "approach_ticks", cfg.label.approach_ticks);
        read_field(j, "expiry_ticks", cfg.label.expiry_ticks);
    }
    if (root.contains("features")) {
        const json& j = root["features"];
        check_keys(j, "features", {"long_window", "short_window"});
        read_field(j, "long_window", cfg.features.long_window);
        read_field(j, "short_window", cfg.features.short_window);
    }
    if (root.contains("model")) {
        const json& j = root["model"];
        check_keys(j, "model", {"learning_rate", "folds", "run_rfecv"});
        read_field(j, "learning_rate", cfg.base_params.learning_rate);
        read_field(j, "folds", cfg.cv_folds);
        read_field(j, "run_rfecv", cfg.run_rfecv);
    }
    if (root.contains("tuning")) {
        const json& j = root["tuning"];
        check_keys(j, "tuning", {"iterations", "max_depth", "l2", "has_time"});
        read_field(j, "iterations", cfg.tuning.iterations);
        read_field(j, "max_depth", cfg.tuning.max_depth);
        read_field(j, "l2", cfg.tuning.l2);
        read_field(j, "has_time", cfg.tuning.has_time);
    }
    if (root.contains("explain")) {
        const json& j = root["explain"];
        check_keys(j, "explain",
                   {"enabled", "features", "params", "background_rows", "explain_rows", "n_boot",
                    "max_features", "threads"});
        read_field(j, "enabled", cfg.explain.enabled);
        read_field(j, "features", cfg.explain.features);
        if (j.contains("params")) cfg.explain.params = parse_params(j["params"], "explain.params");
        read_field(j, "background_rows", cfg.explain.background_rows);
        read_field(j, "explain_rows", cfg.explain.explain_rows);
        read_field(j, "n_boot", cfg.explain.n_boot);
        read_field(j, "max_features", cfg.explain.max_features);
        read_field(j, "threads", cfg.explain.threads);
    }
    if (root.contains("strategy")) {
        const json& j = root["strategy"];
        check_keys(j, "strategy",
                   {"take_profit_ticks", "stop_loss_ticks", "fee_ticks", "spread_ticks",
                    "notional_ticks"});
        read_field(j, "take_profit_ticks", cfg.strategy.take_profit_ticks);
        read_field(j, "stop_loss_ticks", cfg.strategy.stop_loss_ticks);
        read_field(j, "fee_ticks", cfg.strategy.fee_ticks);
        read_field(j, "spread_ticks", cfg.strategy.spread_ticks);
        read_field(j, "notional_ticks", cfg.strategy.notional_ticks);
    }
    if (root.contains("sharpe")) {
        const json& j = root["sharpe"];
        check_keys(j, "sharpe", {"risk_free_annual", "window_days", "smooth_days"});
        read_field(j, "risk_free_annual", cfg.sharpe.risk_free_annual);
        read_field(j, "window_days", cfg.sharpe.window_days);
        read_field(j, "smooth_days", cfg.sharpe.smooth_days);
    }
    if (root.contains("rq3")) {
        const json& j = root["rq3"];
        check_keys(j, "rq3", {"treatment", "control"});
        read_field(j, "treatment", cfg.rq3_treatment);
        read_field(j, "control", cfg.rq3_control);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_json(ss.str(), path);
}

void RunConfig::validate() const {
    if (out_dir.empty()) throw ConfigError("out_dir must be non-empty");
    if (months_per_batch < 1) throw ConfigError("months_per_batch must be >= 1");
    if (instruments.empty()) throw ConfigError("at least one instrument required");
    for (const auto& ic : instruments) {
        if (ic.spec.tick_size <= 0.0) throw ConfigError("tick_size must be positive");
        if (ic.source == "synthetic") {
            try {
                ic.synthetic.validate();
            } catch (const std::exception& e) {
                throw ConfigError(std::string("synthetic config: ") + e.what());
            }
        }
    }
    if (ranges.empty()) throw ConfigError("ranges must be non-empty");
    for (int r : ranges)
        if (r < 3 || r % 2 == 0)
            throw ConfigError("range configurations must be odd and >= 3, got " +
                              std::to_string(r));
    try {
        label.validate();
        features.validate();
        base_params.validate();
        tuning.validate();
        strategy.validate();
        if (explain.enabled) explain.params.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (cv_folds < 1) throw ConfigError("folds must be >= 1");
    if (explain.enabled) {
        for (const auto& f : explain.features) {
            try {
                feature_index(f);
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
        }
        if (explain.background_rows < 1 || explain.explain_rows < 1 || explain.n_boot < 1 ||
            explain.max_features < 1 || explain.threads < 1)
            throw ConfigError("explain counts must be positive");
    }
    if (sharpe.window_days < 2 || sharpe.smooth_days < 1)
        throw ConfigError("sharpe windows invalid");
    if (rq3_treatment.empty() != rq3_control.empty())
        throw ConfigError("rq3 requires both treatment and control");
}

namespace {

std::string canonical_config_string(const RunConfig& c) {
    std::ostringstream s;
    s << "seed=" << c.seed << ";months=" << c.months_per_batch;
    for (const auto& ic : c.instruments) {
        s << ";inst{" << ic.name << ',' << format_g17(ic.spec.tick_size) << ',' << ic.source << ','
          << ic.path;
        const auto& sy = ic.synthetic;
        s << ",syn{" << sy.n_ticks << ',' << sy.base_price_idx << ','
          << format_g17(sy.base_reversal_rate) << ',' << format_g17(sy.signal_delta) << ','
          << format_g17(sy.flow_ratio_high) << ',' << sy.base_volume << ',' << sy.spike_volume
          << ',' << sy.wander_ticks << ',' << sy.departure_ticks << ',' << sy.dwell_ticks << ','
          << sy.start_ts_ms << ',' << sy.ts_step_ms << "}}";
    }
    s << ";ranges=";
    for (int r : c.ranges) s << r << ',';
    s << ";pl=" << c.price_levels_enabled << ',' << c.pl_lookback_ticks << ','
      << c.pl_rejection_ticks;
    s << ";label=" << c.label.reversal_ticks << ',' << c.label.crossing_ticks << ','
      << c.label.approach_ticks << ',' << c.label.expiry_ticks;
    s << ";feat=" << c.features.long_window << ',' << c.features.short_window;
    s << ";model=" << format_g17(c.base_params.learning_rate) << ',' << c.cv_folds << ','
      << c.run_rfecv;
    s << ";tune=";
    for (int v : c.tuning.iterations) s << v << ',';
    for (int v : c.tuning.max_depth) s << v << ',';
    for (double v : c.tuning.l2) s << format_g17(v) << ',';
    for (bool v : c.tuning.has_time) s << v << ',';
    s << ";explain=" << c.explain.enabled << ',' << c.explain.background_rows << ','
      << c.explain.explain_rows << ',' << c.explain.n_boot << ',' << c.explain.max_features;
    for (const auto& f : c.explain.features) s << ',' << f;
    s << ',' << c.explain.params.describe();
    s << ";strategy=" << c.strategy.take_profit_ticks << ',' << c.strategy.stop_loss_ticks << ','
      << format_g17(c.strategy.fee_ticks) << ',' << format_g17(c.strategy.spread_ticks) << ','
      << format_g17(c.strategy.notional_ticks);
    s << ";sharpe=" << format_g17(c.sharpe.risk_free_annual) << ',' << c.sharpe.window_days << ','
      << c.sharpe.smooth_days;
    s << ";rq3=" << c.rq3_treatment << ',' << c.rq3_control;
    return s.str();
}

// ---------------------------------------------------------------------------
// manifest and run-directory plumbing

struct Manifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string version;
    std::map<std::string, std::map<std::string, std::string>> stages;  // stage -> path -> hash

    static Manifest load(const std::string& path) {
        Manifest m;
        std::ifstream in(path);
        if (!in) return m;
        json j;
        try {
            in >> j;
        } catch (const json::exception&) {
            return m;
        }
        if (j.contains("config_hash")) m.config_hash = j["config_hash"].get<std::string>();
        if (j.contains("seed")) m.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("version")) m.version = j["version"].get<std::string>();
        if (j.contains("stages"))
            for (auto it = j["stages"].begin(); it != j["stages"].end(); ++it)
                for (auto f = it.value().begin(); f != it.value().end(); ++f)
                    m.stages[it.key()][f.key()] = f.value().get<std::string>();
        return m;
    }

    void save(const std::string& path) const {
        json j;
        j["config_hash"] = config_hash;
        j["seed"] = seed;
        j["version"] = version;
        j["stages"] = json::object();
        for (const auto& [stage, files] : stages) {
            json jf = json::object();
            for (const auto& [p, h] : files) jf[p] = h;
            j["stages"][stage] = jf;
        }
        std::ofstream out(path);
        out << j.dump(2) << '\n';
    }
};

struct RunLock {
    std::string path;
    explicit RunLock(const std::string& dir) : path(dir + "/.lock") {
        if (fs::exists(path))
            throw StageError("lock", "run directory is locked by another process (" + path + ")");
        std::ofstream out(path);
        out << "locked\n";
    }
    ~RunLock() { std::error_code ec; fs::remove(path, ec); }
};

struct Context {
    RunConfig cfg;
    std::string out;
    bool dry_run = false;
    Manifest manifest;

    std::string dir(const std::string& sub) const {
        std::string d = out + "/" + sub;
        fs::create_directories(d);
        return d;
    }
    std::string manifest_path() const { return out + "/manifest.json"; }

    void record(const std::string& stage, const std::vector<std::string>& files) {
        auto& entry = manifest.stages[stage];
        entry.clear();
        for (const std::string& f : files)
            entry[fs::relative(f, out).string()] = file_hash(f);
        manifest.save(manifest_path());
    }

    bool stage_cached(const std::string& stage) const {
        auto it = manifest.stages.find(stage);
        if (it == manifest.stages.end() || it->second.empty()) return false;
        for (const auto& [rel, hash] : it->second) {
            std::string p = out + "/" + rel;
            if (!fs::exists(p) || file_hash(p) != hash) return false;
        }
        return true;
    }

    void require(const std::string& path, const std::string& producer) const {
        if (!fs::exists(path))
            throw StageError("input", "missing upstream artifact " + path + "; run '" + producer +
                                          "' first");
    }

    std::vector<std::string> methods() const {
        std::vector<std::string> m;
        for (int r : cfg.ranges) m.push_back("vcrb_r" + std::to_string(r));
        if (cfg.price_levels_enabled) m.push_back("price_levels");
        return m;
    }

    std::string ticks_path(const std::string& inst) const {
        return out + "/ticks/" + inst + ".csv";
    }
    std::string events_path(const std::string& inst, const std::string& method) const {
        return out + "/events/" + inst + "_" + method + ".tsv";
    }
    std::string labeled_path(const std::string& inst, const std::string& method) const {
        return out + "/labeled/" + inst + "_" + method + ".tsv";
    }
    std::string features_path(const std::string& inst, const std::string& method) const {
        return out + "/features/" + inst + "_" + method + ".tsv";
    }
    std::string metrics_path(const std::string& inst, const std::string& method) const {
        return out + "/metrics/" + inst + "_" + method + ".tsv";
    }
    std::string predictions_path(const std::string& inst, const std::string& method) const {
        return out + "/predictions/" + inst + "_" + method + ".tsv";
    }
    std::string distances_path(const std::string& inst, const std::string& method) const {
        return out + "/explain/" + inst + "_" + method + "_distances.tsv";
    }
};

std::vector<PatternEvent> extract_method(const Context& ctx, const Batch& batch,
                                         const std::string& method) {
    if (method == "price_levels")
        return extract_price_levels(batch, ctx.cfg.pl_lookback_ticks, ctx.cfg.pl_rejection_ticks);
    int range = std::stoi(method.substr(std::string("vcrb_r").size()));
    return extract_vcrb(batch, range);
}

std::vector<Batch> load_batches(const Context& ctx, const InstrumentConfig& ic) {
    std::vector<TickRecord> ticks = load_ticks(ctx.ticks_path(ic.name), ic.spec);
    return split_batches(ticks, ctx.cfg.months_per_batch);
}

// ---------------------------------------------------------------------------
// stages

void stage_ingest(Context& ctx) {
    std::vector<std::string> outputs;
    ctx.dir("ticks");
    ctx.dir("batches");
    for (std::size_t i = 0; i < ctx.cfg.instruments.size(); ++i) {
        const InstrumentConfig& ic = ctx.cfg.instruments[i];
        std::vector<TickRecord> ticks;
        if (ic.source == "synthetic") {
            ticks = generate_synthetic(mix_seed(ctx.cfg.seed, 100 + i), ic.synthetic);
        } else {
            ticks = load_ticks(ic.path, ic.spec);
        }
        if (ticks.empty()) throw StageError("ingest", "no ticks for instrument " + ic.name);
        std::string tick_file = ctx.ticks_path(ic.name);
        save_ticks(tick_file, ticks, ic.spec);
        outputs.push_back(tick_file);

        auto batches = split_batches(ticks, ctx.cfg.months_per_batch);
        std::string batch_file = ctx.out + "/batches/" + ic.name + ".tsv";
        std::ofstream out(batch_file);
        out << "label\tstart_ts_ms\tend_ts_ms\tn_ticks\n";
        for (const Batch& b : batches)
            out << b.label << '\t' << b.start_ts_ms << '\t' << b.end_ts_ms << '\t'
                << b.ticks.size() << '\n';
        out.close();
        outputs.push_back(batch_file);
        std::cerr << "ingest: " << ic.name << ": " << ticks.size() << " ticks, "
                  << batches.size() << " batches\n";
    }
    ctx.record("ingest", outputs);
}

void stage_extract(Context& ctx) {
    std::vector<std::string> outputs;
    if (!ctx.dry_run) ctx.dir("events");
    for (const InstrumentConfig& ic : ctx.cfg.instruments) {
        ctx.require(ctx.ticks_path(ic.name), "ingest");
        auto batches = load_batches(ctx, ic);
        for (const std::string& method : ctx.methods()) {
            std::vector<EventTableRow> rows;
            for (const Batch& b : batches) {
                auto events = extract_method(ctx, b, method);
                for (PatternEvent& e : events) rows.push_back({std::move(e), b.label});
            }
            std::cerr << "extract: " << ic.name << ' ' << method << ": " << rows.size()
                      << " events\n";
            if (ctx.dry_run) continue;
            std::string path = ctx.events_path(ic.name, method);
            write_events(path, rows);
            outputs.push_back(path);
        }
    }
    if (!ctx.dry_run) ctx.record("extract", outputs);
}

void stage_label(Context& ctx) {
    std::vector<std::string> outputs;
    ctx.dir("labeled");
    for (const InstrumentConfig& ic : ctx.cfg.instruments) {
        ctx.require(ctx.ticks_path(ic.name), "ingest");
        auto batches = load_batches(ctx, ic);
        std::map<std::string, const Batch*> batch_by_label;
        for (const Batch& b : batches) batch_by_label[b.label] = &b;

        for (const std::string& method : ctx.methods()) {
            std::string in_path = ctx.events_path(ic.name, method);
            ctx.require(in_path, "extract");
            auto rows = read_events(in_path);
            DispositionCounts counts;
            for (EventTableRow& row : rows) {
                auto it = batch_by_label.find(row.batch_label);
                if (it == batch_by_label.end())
                    throw StageError("label", "event references unknown batch " + row.batch_label);
                row.event = label_event(std::move(row.event), *it->second, ctx.cfg.label);
            }
            counts = [&] {
                std::vector<PatternEvent> evs;
                evs.reserve(rows.size());
                for (const auto& r : rows) evs.push_back(r.event);
                return count_dispositions(evs);
            }();
            std::string path = ctx.labeled_path(ic.name, method);
            write_events(path, rows);
            outputs.push_back(path);
            std::cerr << "label: " << ic.name << ' ' << method << ": " << counts.positives
                      << " positive, " << counts.negatives << " negative, " << counts.excluded
                      << " excluded, " << counts.unresolved << " unresolved\n";
        }
    }
    ctx.record("label", outputs);
}

void stage_features(Context& ctx) {
    std::vector<std::string> outputs;
    ctx.dir("features");
    for (const InstrumentConfig& ic : ctx.cfg.instruments) {
        ctx.require(ctx.ticks_path(ic.name), "ingest");
        auto batches = load_batches(ctx, ic);
        std::map<std::string, const Batch*> batch_by_label;
        for (const Batch& b : batches) batch_by_label[b.label] = &b;

        for (const std::string& method : ctx.methods()) {
            std::string in_path = ctx.labeled_path(ic.name, method);
            ctx.require(in_path, "label");
            auto labeled = read_events(in_path);

            // re-extract to recover volume profiles, then merge dispositions
            std::vector<EventTableRow> rows;
            for (const Batch& b : batches) {
                auto events = extract_method(ctx, b, method);
                for (PatternEvent& e : events) rows.push_back({std::move(e), b.label});
            }
            if (rows.size() != labeled.size())
                throw StageError("features", "event table out of sync with ticks for " + in_path);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (rows[i].batch_label != labeled[i].batch_label ||
                    rows[i].event.formation_tick_index != labeled[i].event.formation_tick_index ||
                    rows[i].event.target_price_idx != labeled[i].event.target_price_idx)
                    throw StageError("features", "event table out of sync at row " +
                                                     std::to_string(i) + " in " + in_path);
                rows[i].event.label = labeled[i].event.label;
                rows[i].event.trigger_tick_index = labeled[i].event.trigger_tick_index;
                compute_features(rows[i].event, *batch_by_label[rows[i].batch_label],
                                 ctx.cfg.features);
            }
            std::string path = ctx.features_path(ic.name, method);
            write_feature_table(path, rows);
            outputs.push_back(path);
        }
    }
    ctx.record("features", outputs);
}

Dataset dataset_from_rows(const std::vector<const PatternEvent*>& events) {
    Dataset d;
    d.feature_names = feature_names();
    d.x.resize(static_cast<Eigen::Index>(events.size()),
               static_cast<Eigen::Index>(d.feature_names.size()));
    d.y.resize(static_cast<Eigen::Index>(events.size()));
    for (std::size_t i = 0; i < events.size(); ++i) {
        for (std::size_t j = 0; j < d.feature_names.size(); ++j)
            d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                events[i]->features[j];
        d.y[static_cast<Eigen::Index>(i)] = events[i]->label == Label::positive ? 1 : 0;
    }
    return d;
}

struct MethodBatches {
    std::vector<std::string> labels;                       // batch order
    std::vector<std::vector<EventTableRow>> rows_by_batch;  // feature rows per batch
};

MethodBatches group_feature_rows(const Context& ctx, const InstrumentConfig& ic,
                                 const std::string& method) {
    std::string path = ctx.features_path(ic.name, method);
    ctx.require(path, "features");
    auto rows = read_feature_table(path);
    MethodBatches mb;
    for (EventTableRow& row : rows) {
        if (mb.labels.empty() || mb.labels.back() != row.batch_label) {
            mb.labels.push_back(row.batch_label);
            mb.rows_by_batch.emplace_back();
        }
        mb.rows_by_batch.back().push_back(std::move(row));
    }
    return mb;
}

std::vector<BatchDataset> batch_datasets(const MethodBatches& mb) {
    std::vector<BatchDataset> out;
    for (std::size_t b = 0; b < mb.labels.size(); ++b) {
        std::vector<PatternEvent> events;
        events.reserve(mb.rows_by_batch[b].size());
        for (const auto& r : mb.rows_by_batch[b]) events.push_back(r.event);
        auto train = training_view(events);
        auto test = test_view(events);
        std::vector<const PatternEvent*> train_ptr, test_ptr;
        for (const auto& e : train) train_ptr.push_back(&e);
        for (const auto& e : test) test_ptr.push_back(&e);
        BatchDataset bd;
        bd.label = mb.labels[b];
        bd.train = dataset_from_rows(train_ptr);
        bd.test = dataset_from_rows(test_ptr);
        out.push_back(std::move(bd));
    }
    return out;
}

void stage_train(Context& ctx) {
    std::vector<std::string> outputs;
    ctx.dir("metrics");
    ctx.dir("predictions");
    for (std::size_t ii = 0; ii < ctx.cfg.instruments.size(); ++ii) {
        const InstrumentConfig& ic = ctx.cfg.instruments[ii];
        const auto methods = ctx.methods();
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const std::string& method = methods[mi];
            MethodBatches mb = group_feature_rows(ctx, ic, method);
            auto batches = batch_datasets(mb);
            if (batches.size() < 2) {
                std::cerr << "train: " << ic.name << ' ' << method
                          << ": fewer than 2 batches; skipping\n";
                continue;
            }
            GbdtParams base = ctx.cfg.base_params;
            base.seed = mix_seed(ctx.cfg.seed, 1000 + ii * 64 + mi);
            WalkForwardOptions opts;
            opts.run_rfecv = ctx.cfg.run_rfecv;
            opts.folds = ctx.cfg.cv_folds;
            auto records = walk_forward(batches, ctx.cfg.tuning, base, opts);

            std::string mpath = ctx.metrics_path(ic.name, method);
            std::ofstream mout(mpath);
            mout << "train_batch\ttest_batch\tprecision\tpr_auc\troc_auc\tf1\tnull_precision\t"
                    "n_test\tselected_features\tparams\n";
            std::string ppath = ctx.predictions_path(ic.name, method);
            std::ofstream pout(ppath);
            pout << "test_batch\trow\tprobability\n";
            for (const auto& rec : records) {
                mout << rec.train_label << '\t' << rec.test_label << '\t'
                     << format_g17(rec.metrics.precision) << '\t' << format_g17(rec.metrics.pr_auc)
                     << '\t' << format_g17(rec.metrics.roc_auc) << '\t'
                     << format_g17(rec.metrics.f1) << '\t'
                     << format_g17(rec.metrics.null_precision) << '\t'
                     << rec.test_probabilities.size() << '\t';
                for (std::size_t k = 0; k < rec.selected_features.size(); ++k) {
                    if (k) mout << ';';
                    mout << rec.selected_features[k];
                }
                mout << '\t' << rec.best_params.describe() << '\n';
                for (Eigen::Index r = 0; r < rec.test_probabilities.size(); ++r)
                    pout << rec.test_label << '\t' << r << '\t'
                         << format_g17(rec.test_probabilities[r]) << '\n';
            }
            mout.close();
            pout.close();
            outputs.push_back(mpath);
            outputs.push_back(ppath);
            std::cerr << "train: " << ic.name << ' ' << method << ": " << records.size()
                      << " walk-forward pairs\n";
        }
    }
    ctx.record("train", outputs);
}

void stage_explain(Context& ctx) {
    std::vector<std::string> outputs;
    if (!ctx.cfg.explain.enabled) {
        std::cerr << "explain: disabled in config\n";
        ctx.record("explain", outputs);
        return;
    }
    ctx.dir("explain");
    const std::vector<std::string>& subset =
        ctx.cfg.explain.features.empty() ? feature_names() : ctx.cfg.explain.features;

    for (std::size_t ii = 0; ii < ctx.cfg.instruments.size(); ++ii) {
        const InstrumentConfig& ic = ctx.cfg.instruments[ii];
        const auto methods = ctx.methods();
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            const std::string& method = methods[mi];
            if (method == "price_levels") continue;  // interaction study runs on VCRB configs
            MethodBatches mb = group_feature_rows(ctx, ic, method);
            auto batches = batch_datasets(mb);

            std::string dpath = ctx.distances_path(ic.name, method);
            std::ofstream dout(dpath);
            dout << "batch\tn_rows\tactual_distance\tnull_mean\tnull_sd\n";
            for (std::size_t b = 0; b < batches.size(); ++b) {
                Dataset train_ds = batches[b].train.select_features(subset);
                bool pos = false, neg = false;
                for (Eigen::Index r = 0; r < train_ds.y.size(); ++r)
                    (train_ds.y[r] != 0 ? pos : neg) = true;
                if (train_ds.rows() < 20 || !(pos && neg)) {
                    std::cerr << "explain: " << ic.name << ' ' << method << ' '
                              << batches[b].label << ": too few rows; skipped\n";
                    continue;
                }
                GbdtParams params = ctx.cfg.explain.params;
                params.seed = mix_seed(ctx.cfg.seed, 2000 + ii * 512 + mi * 32 + b);
                GbdtModel model = train(train_ds, params);

                auto paths = extract_paths(model, train_ds.x);
                InteractionMatrix mono = interaction_matrix(paths, model.feature_names);

                Rng rng(mix_seed(ctx.cfg.seed, 3000 + ii * 512 + mi * 32 + b));
                auto sample_rows = [&](int want) {
                    Eigen::Index n = train_ds.rows();
                    Eigen::Index k = std::min<Eigen::Index>(want, n);
                    Eigen::MatrixXd out_rows(k, train_ds.cols());
                    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
                    std::iota(idx.begin(), idx.end(), 0);
                    for (Eigen::Index r = 0; r < k; ++r) {
                        std::size_t pick = static_cast<std::size_t>(r) +
                                           static_cast<std::size_t>(rng.uniform(
                                               static_cast<std::uint64_t>(n - r)));
                        std::swap(idx[static_cast<std::size_t>(r)], idx[pick]);
                        out_rows.row(r) = train_ds.x.row(idx[static_cast<std::size_t>(r)]);
                    }
                    return out_rows;
                };
                Eigen::MatrixXd background = sample_rows(ctx.cfg.explain.background_rows);
                Eigen::MatrixXd explain_rows = sample_rows(ctx.cfg.explain.explain_rows);

                ShapleyOptions sopt;
                sopt.max_features = ctx.cfg.explain.max_features;
                sopt.threads = ctx.cfg.explain.threads;
                InteractionMatrix shap =
                    shapley_interactions(model, background, explain_rows, sopt);

                std::string tag = ic.name + "_" + method + "_b" + std::to_string(b);
                std::string mono_path = ctx.out + "/explain/" + tag + "_paths.tsv";
                std::string shap_path = ctx.out + "/explain/" + tag + "_shapley.tsv";
                write_matrix(mono_path, mono);
                write_matrix(shap_path, shap);
                outputs.push_back(mono_path);
                outputs.push_back(shap_path);

                std::int64_t actual = footrule(rank_matrix(mono), rank_matrix(shap));
                BootstrapNullResult null_res =
                    bootstrap_null(mono, shap, ctx.cfg.explain.n_boot,
                                   mix_seed(ctx.cfg.seed, 4000 + ii * 512 + mi * 32 + b));
                double null_sd = 0.0;
                for (std::int64_t d : null_res.distances) {
                    double diff = static_cast<double>(d) - null_res.mean;
                    null_sd += diff * diff;
                }
                null_sd = null_res.distances.size() > 1
                              ? std::sqrt(null_sd / static_cast<double>(null_res.distances.size() - 1))
                              : 0.0;
                dout << batches[b].label << '\t' << train_ds.rows() << '\t' << actual << '\t'
                     << format_g17(null_res.mean) << '\t' << format_g17(null_sd) << '\n';
            }
            dout.close();
            outputs.push_back(dpath);
            std::cerr << "explain: " << ic.name << ' ' << method << " done\n";
        }
    }
    ctx.record("explain", outputs);
}

void stage_backtest(Context& ctx) {
    std::vector<std::string> outputs;
    ctx.dir("backtest");
    for (const InstrumentConfig& ic : ctx.cfg.instruments) {
        ctx.require(ctx.ticks_path(ic.name), "ingest");
        auto batches = load_batches(ctx, ic);
        std::map<std::string, const Batch*> batch_by_label;
        for (const Batch& b : batches) batch_by_label[b.label] = &b;

        for (const std::string& method : ctx.methods()) {
            std::string fpath = ctx.features_path(ic.name, method);
            std::string ppath = ctx.predictions_path(ic.name, method);
            ctx.require(fpath, "features");
            ctx.require(ppath, "train");

            // probabilities per (test batch, test-view ordinal)
            std::map<std::string, std::vector<double>> probs;
            {
                std::ifstream pin(ppath);
                std::string line;
                std::getline(pin, line);  // header
                while (std::getline(pin, line)) {
                    if (line.empty()) continue;
                    auto f = split_tabs(line);
                    if (f.size() != 3) throw StageError("backtest", "malformed " + ppath);
                    probs[f[0]].push_back(std::stod(f[2]));
                }
            }

            MethodBatches mb = group_feature_rows(ctx, ic, method);
            std::vector<TradeRecord> all_trades;
            std::vector<std::string> trade_batches;
            EquityCurve merged;
            double carry = 0.0;
            for (std::size_t b = 0; b < mb.labels.size(); ++b) {
                auto pit = probs.find(mb.labels[b]);
                if (pit == probs.end()) continue;  // seed batch has no model
                std::vector<PatternEvent> events;
                for (const auto& r : mb.rows_by_batch[b]) events.push_back(r.event);
                auto test = test_view(events);
                if (test.size() != pit->second.size())
                    throw StageError("backtest", "prediction rows out of sync for batch " +
                                                     mb.labels[b]);
                for (std::size_t r = 0; r < test.size(); ++r)
                    test[r].probability = pit->second[r];
                const Batch* batch = batch_by_label.at(mb.labels[b]);
                BacktestResult res =
                    simulate(test, *batch, ctx.cfg.strategy, ctx.cfg.label, ic.spec);
                for (const auto& t : res.trades) {
                    all_trades.push_back(t);
                    trade_batches.push_back(mb.labels[b]);
                }
                for (EquityPoint p : res.equity.days) {
                    p.cumulative_ticks += carry;
                    merged.days.push_back(p);
                }
                if (!merged.days.empty()) carry = merged.days.back().cumulative_ticks;
            }

            std::string tpath = ctx.out + "/backtest/" + ic.name + "_" + method + "_trades.tsv";
            std::ofstream tout(tpath);
            tout << "batch\tentry_index\tentry_price_idx\texit_index\texit_price_idx\tdirection\t"
                    "pnl_ticks\texit_reason\n";
            for (std::size_t t = 0; t < all_trades.size(); ++t) {
                const TradeRecord& tr = all_trades[t];
                tout << trade_batches[t] << '\t' << tr.entry_tick_index << '\t'
                     << tr.entry_price_idx << '\t' << tr.exit_tick_index << '\t'
                     << tr.exit_price_idx << '\t' << tr.direction << '\t'
                     << format_g17(tr.pnl_ticks) << '\t' << to_string(tr.exit_reason) << '\n';
            }
            tout.close();
            outputs.push_back(tpath);

            std::string epath = ctx.out + "/backtest/" + ic.name + "_" + method + "_equity.tsv";
            std::ofstream eout(epath);
            eout << "day_index\tpnl_ticks\tcumulative_ticks\tdaily_return\n";
            for (const EquityPoint& p : merged.days)
                eout << p.day_index << '\t' << format_g17(p.pnl_ticks) << '\t'
                     << format_g17(p.cumulative_ticks) << '\t' << format_g17(p.daily_return)
                     << '\n';
            eout.close();
            outputs.push_back(epath);

            std::string spath = ctx.out + "/backtest/" + ic.name + "_" + method + "_sharpe.tsv";
            std::ofstream sout(spath);
            sout << "day_index\tannualized\tsmoothed\n";
            if (static_cast<int>(merged.days.size()) >= ctx.cfg.sharpe.window_days) {
                SharpeSeries ss =
                    rolling_sharpe(merged.daily_returns(), ctx.cfg.sharpe.risk_free_annual,
                                   ctx.cfg.sharpe.window_days, ctx.cfg.sharpe.smooth_days);
                for (Eigen::Index d = 0; d < ss.annualized.size(); ++d) {
                    sout << merged.days[static_cast<std::size_t>(d)].day_index << '\t';
                    if (std::isnan(ss.annualized[d]))
                        sout << "NA";
                    else
                        sout << format_g17(ss.annualized[d]);
                    sout << '\t';
                    if (std::isnan(ss.smoothed[d]))
                        sout << "NA";
                    else
                        sout << format_g17(ss.smoothed[d]);
                    sout << '\n';
                }
            } else {
                std::cerr << "backtest: " << ic.name << ' ' << method
                          << ": fewer days than the Sharpe window; series empty\n";
            }
            sout.close();
            outputs.push_back(spath);

            std::cerr << "backtest: " << ic.name << ' ' << method << ": " << all_trades.size()
                      << " trades, final equity "
                      << format_g(merged.days.empty() ? 0.0 : merged.days.back().cumulative_ticks)
                      << " ticks (threshold "
                      << format_g(profitability_threshold(ctx.cfg.strategy)) << ")\n";
        }
    }
    ctx.record("backtest", outputs);
}

MetricsRecord parse_metrics_row(const std::vector<std::string>& f) {
    MetricsRecord m;
    m.batch_label = f[1];
    m.precision = std::stod(f[2]);
    m.pr_auc = std::stod(f[3]);
    m.roc_auc = std::stod(f[4]);
    m.f1 = std::stod(f[5]);
    m.null_precision = std::stod(f[6]);
    return m;
}

void stage_stats(Context& ctx) {
    std::vector<std::string> outputs;
    ctx.dir("stats");
    ExperimentRecords records;
    records.rq3_treatment_instrument = ctx.cfg.rq3_treatment;
    records.rq3_control_instrument = ctx.cfg.rq3_control;

    for (const InstrumentConfig& ic : ctx.cfg.instruments) {
        for (const std::string& method : ctx.methods()) {
            std::string mpath = ctx.metrics_path(ic.name, method);
            ctx.require(mpath, "train");
            MetricsCell cell;
            cell.instrument = ic.name;
            cell.method = method;
            std::ifstream in(mpath);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                auto f = split_tabs(line);
                if (f.size() < 7) throw StageError("stats", "malformed " + mpath);
                cell.records.push_back(parse_metrics_row(f));
            }
            records.cells.push_back(std::move(cell));

            if (ctx.cfg.explain.enabled && method != "price_levels") {
                std::string dpath = ctx.distances_path(ic.name, method);
                if (fs::exists(dpath)) {
                    InteractionCell icell;
                    icell.instrument = ic.name;
                    icell.method = method;
                    std::vector<double> actual, null_mean;
                    std::ifstream din(dpath);
                    std::getline(din, line);
                    while (std::getline(din, line)) {
                        if (line.empty()) continue;
                        auto f = split_tabs(line);
                        if (f.size() != 5) throw StageError("stats", "malformed " + dpath);
                        icell.batch_labels.push_back(f[0]);
                        actual.push_back(std::stod(f[2]));
                        null_mean.push_back(std::stod(f[3]));
                    }
                    icell.actual_distance =
                        Eigen::Map<Eigen::VectorXd>(actual.data(),
                                                    static_cast<Eigen::Index>(actual.size()));
                    icell.null_distance = Eigen::Map<Eigen::VectorXd>(
                        null_mean.data(), static_cast<Eigen::Index>(null_mean.size()));
                    records.interactions.push_back(std::move(icell));
                }
            }
        }
    }

    RqReport report = rq_harness(records, 0.05, mix_seed(ctx.cfg.seed, 5000));

    std::string tpath = ctx.out + "/stats/rq_tests.tsv";
    std::ofstream tout(tpath);
    tout << "rq\tconfiguration\tmeasurement\tn\tg_av\tci_low\tci_high\tci_low_adj\tci_high_adj\t"
            "wilcoxon_w\tp_value\tcorrected_alpha\treject\n";
    for (const RqTest& t : report.tests) {
        tout << t.rq << '\t' << t.configuration << '\t' << t.measurement << '\t'
             << t.effect_raw.n << '\t' << format_g17(t.effect_raw.g_av) << '\t'
             << format_g17(t.effect_raw.ci_low) << '\t' << format_g17(t.effect_raw.ci_high) << '\t'
             << format_g17(t.effect_adjusted.ci_low) << '\t'
             << format_g17(t.effect_adjusted.ci_high) << '\t' << format_g17(t.test.w) << '\t'
             << format_g17(t.test.p_value) << '\t' << format_g17(t.corrected_alpha) << '\t'
             << (t.reject ? 1 : 0) << '\n';
    }
    tout.close();
    outputs.push_back(tpath);

    std::string rpath = ctx.out + "/stats/report.txt";
    std::ofstream rout(rpath);
    rout << "Statistical report (" << kVersion << ")\n";
    rout << "=========================================\n\n";
    for (const auto& cell : records.cells) {
        rout << "Performance metrics: " << cell.instrument << ", " << cell.method << "\n";
        rout << "Batch                PR-AUC  ROC-AUC  F1      Precision  Null_precision\n";
        for (const auto& m : cell.records) {
            char line[160];
            std::snprintf(line, sizeof(line), "%-20s %-7.2f %-8.2f %-7.2f %-10.2f %-8.2f\n",
                          m.batch_label.c_str(), m.pr_auc, m.roc_auc, m.f1, m.precision,
                          m.null_precision);
            rout << line;
        }
        rout << '\n';
    }
    auto series_stats = [](const Eigen::VectorXd& v) {
        Eigen::VectorXd s = v;
        std::sort(s.data(), s.data() + s.size());
        double median = s.size() % 2 == 1
                            ? s[s.size() / 2]
                            : (s[s.size() / 2 - 1] + s[s.size() / 2]) / 2.0;
        return std::array<double, 3>{v.mean(), median, sample_sd(v)};
    };
    std::string current_rq;
    for (const RqTest& t : report.tests) {
        if (t.rq != current_rq) {
            current_rq = t.rq;
            rout << "== " << t.rq << " ==\n";
        }
        rout << "configuration: " << t.configuration << " (measurement: " << t.measurement
             << ")\n";
        rout << "  one-tailed Wilcoxon p-value: " << format_g(t.test.p_value)
             << "   test statistic: " << format_g(t.test.w) << "\n";
        rout << "  Hedge's g_av: " << format_g(t.effect_raw.g_av) << "  .95 CI ["
             << format_g(t.effect_raw.ci_low) << ", " << format_g(t.effect_raw.ci_high)
             << "]  adjusted CI [" << format_g(t.effect_adjusted.ci_low) << ", "
             << format_g(t.effect_adjusted.ci_high) << "]\n";
        auto ts = series_stats(t.sample.treatment);
        auto cs = series_stats(t.sample.control);
        rout << "  treatment mean/median/sd: " << format_g(ts[0]) << " / " << format_g(ts[1])
             << " / " << format_g(ts[2]) << "\n";
        rout << "  control   mean/median/sd: " << format_g(cs[0]) << " / " << format_g(cs[1])
             << " / " << format_g(cs[2]) << "\n";
        rout << "  corrected alpha: " << format_g(t.corrected_alpha) << "  verdict: "
             << (t.reject ? "reject H0" : "fail to reject H0") << "\n\n";
    }
    for (const auto& note : report.notes) rout << "note: " << note << "\n";
    rout.close();
    outputs.push_back(rpath);
    std::cerr << "stats: " << report.tests.size() << " tests, report at " << rpath << "\n";
    ctx.record("stats", outputs);
}

}  // namespace

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"ingest", "extract",  "label",    "features",
                                                   "train",  "explain",  "backtest", "stats"};
    return names;
}

namespace {

Context make_context(StageRequest& request) {
    if (request.seed_override) request.config.seed = *request.seed_override;
    if (request.out_override) request.config.out_dir = *request.out_override;
    request.config.validate();
    Context ctx;
    ctx.cfg = request.config;
    ctx.out = request.config.out_dir;
    ctx.dry_run = request.dry_run;
    fs::create_directories(ctx.out);
    ctx.manifest = Manifest::load(ctx.manifest_path());
    std::string hash = text_hash(canonical_config_string(ctx.cfg));
    if (ctx.manifest.config_hash != hash) {
        ctx.manifest = Manifest{};  // config changed: invalidate all caches
        ctx.manifest.config_hash = hash;
    }
    ctx.manifest.seed = ctx.cfg.seed;
    ctx.manifest.version = kVersion;
    return ctx;
}

void dispatch(Context& ctx, const std::string& stage) {
    if (stage == "ingest")
        stage_ingest(ctx);
    else if (stage == "extract")
        stage_extract(ctx);
    else if (stage == "label")
        stage_label(ctx);
    else if (stage == "features")
        stage_features(ctx);
    else if (stage == "train")
        stage_train(ctx);
    else if (stage == "explain")
        stage_explain(ctx);
    else if (stage == "backtest")
        stage_backtest(ctx);
    else if (stage == "stats")
        stage_stats(ctx);
    else
        throw ConfigError("unknown stage: " + stage);
}

}  // namespace

void run_stage(const std::string& stage, StageRequest request) {
    Context ctx = make_context(request);
    RunLock lock(ctx.out);
    try {
        dispatch(ctx, stage);
    } catch (const StageError&) {
        throw;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

void run_pipeline(StageRequest request) {
    Context ctx = make_context(request);
    RunLock lock(ctx.out);
    for (const std::string& stage : stage_names()) {
        if (ctx.stage_cached(stage)) {
            std::cerr << "stage " << stage << ": cached\n";
            continue;
        }
        std::cerr << "stage " << stage << ": running\n";
        try {
            dispatch(ctx, stage);
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(stage, e.what());
        }
    }
}

}  // namespace vcrb
