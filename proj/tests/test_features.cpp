#include "vcrb/features.hpp"

#include <gtest/gtest.h>

#include "vcrb/random.hpp"

using namespace vcrb;

namespace {

std::size_t fi(const std::string& name) { return feature_index(name); }

// VCRB event with an 11-level profile centred on 1000; level aggregates are
// supplied per offset t in [-5, 5]
PatternEvent profile_event(const std::vector<LevelAggregates>& by_offset,
                           Side side = Side::target_above) {
    PatternEvent e;
    e.kind = PatternKind::vcrb;
    e.target_price_idx = 1000;
    e.formation_tick_index = 0;
    e.side = side;
    e.profile.base_price_idx = 995;
    e.profile.levels = by_offset;
    return e;
}

Batch one_tick_batch() {
    Batch b;
    TickRecord t;
    t.price_idx = 1000;
    t.bid_volume = 1;
    t.ask_volume = 1;
    t.bid_trades = 1;
    t.ask_trades = 1;
    b.ticks.push_back(t);
    b.end_ts_ms = 1;
    return b;
}

LevelAggregates agg(std::int64_t vb, std::int64_t va, std::int64_t tb, std::int64_t ta) {
    return LevelAggregates{vb, va, tb, ta};
}

}  // namespace

TEST(PatternFeaturesVcrb, SymmetricProfileGivesUnitRatios) {
    std::vector<LevelAggregates> levels(11, agg(4, 6, 2, 3));
    levels[5] = agg(40, 60, 20, 30);  // PoC keeps the same bid/ask mix
    PatternEvent e = profile_event(levels);
    Batch b = one_tick_batch();
    auto f = pattern_features(e, b, FeatureConfig{});
    for (const char* name : {"P0", "P1", "P2", "P3"})
        EXPECT_DOUBLE_EQ(f[fi(name)], 1.0) << name;
    EXPECT_DOUBLE_EQ(f[fi("P12_0")], 40.0 / 60.0);
    EXPECT_DOUBLE_EQ(f[fi("P13_m1")], 2.0 / 3.0);
}

TEST(PatternFeaturesVcrb, UpperOverLowerBidVolumeArithmetic) {
    // upper bid volumes (1,1,1,1,1), lower (5,5,5,5,5) -> P0 = 0.2
    std::vector<LevelAggregates> levels(11);
    for (int t = -5; t <= 5; ++t) {
        std::int64_t vb = t > 0 ? 1 : (t < 0 ? 5 : 9);
        levels[static_cast<std::size_t>(t + 5)] = agg(vb, 3, 1, 1);
    }
    PatternEvent e = profile_event(levels);
    Batch b = one_tick_batch();
    auto f = pattern_features(e, b, FeatureConfig{});
    EXPECT_DOUBLE_EQ(f[fi("P0")], 0.2);
    EXPECT_DOUBLE_EQ(f[fi("P8")], 9.0 / 5.0);   // PoC bid over upper bids
    EXPECT_DOUBLE_EQ(f[fi("P10")], 9.0 / 25.0);  // PoC bid over lower bids
}

TEST(PatternFeaturesVcrb, TradeCountRatiosFollowTheEquations) {
    // P2 uses ask trades, P3 bid trades
    std::vector<LevelAggregates> levels(11);
    for (int t = -5; t <= 5; ++t) {
        std::int64_t ta = t > 0 ? 2 : 1;  // upper ask trades double the lower
        std::int64_t tb = t > 0 ? 8 : 2;  // upper bid trades quadruple
        levels[static_cast<std::size_t>(t + 5)] = agg(16, 16, tb, ta);
    }
    PatternEvent e = profile_event(levels);
    Batch b = one_tick_batch();
    auto f = pattern_features(e, b, FeatureConfig{});
    EXPECT_DOUBLE_EQ(f[fi("P2")], 2.0);
    EXPECT_DOUBLE_EQ(f[fi("P3")], 4.0);
    // average trade sizes: volume over trade count
    EXPECT_DOUBLE_EQ(f[fi("P4")], 80.0 / 40.0);
    EXPECT_DOUBLE_EQ(f[fi("P6")], 80.0 / 10.0);
}

TEST(PatternFeaturesVcrb, ZeroDenominatorIsMissing) {
    std::vector<LevelAggregates> levels(11, agg(2, 2, 1, 1));
    for (int t = -5; t < 0; ++t)
        levels[static_cast<std::size_t>(t + 5)] = agg(2, 0, 1, 0);  // no lower ask volume
    levels[5] = agg(9, 9, 3, 3);
    PatternEvent e = profile_event(levels);
    Batch b = one_tick_batch();
    auto f = pattern_features(e, b, FeatureConfig{});
    EXPECT_TRUE(is_missing(f[fi("P1")]));
    EXPECT_FALSE(is_missing(f[fi("P0")]));
    EXPECT_TRUE(is_missing(f[fi("P11")]));
}

TEST(PatternFeaturesVcrb, SideIndicatorMatchesEvent) {
    std::vector<LevelAggregates> levels(11, agg(2, 2, 1, 1));
    levels[5] = agg(9, 9, 3, 3);
    Batch b = one_tick_batch();
    auto fa = pattern_features(profile_event(levels, Side::target_above), b, FeatureConfig{});
    auto fb = pattern_features(profile_event(levels, Side::target_below), b, FeatureConfig{});
    EXPECT_DOUBLE_EQ(fa[fi("P14")], 1.0);
    EXPECT_DOUBLE_EQ(fb[fi("P14")], 0.0);
}

TEST(PatternFeaturesVcrb, NarrowProfileFallsBackToTrailingWindow) {
    // range-5 profile covers +/-2 only; levels 3..5 away come from the
    // trailing window ticks
    PatternEvent e;
    e.kind = PatternKind::vcrb;
    e.target_price_idx = 1000;
    e.side = Side::target_above;
    e.profile.base_price_idx = 998;
    e.profile.levels.assign(5, agg(2, 2, 1, 1));
    e.profile.levels[2] = agg(9, 9, 3, 3);

    Batch b;
    for (int t = -5; t <= 5; ++t) {
        TickRecord tk;
        tk.start_ts_ms = t + 5;
        tk.end_ts_ms = tk.start_ts_ms;
        tk.price_idx = 1000 + t;
        tk.bid_volume = std::abs(t) >= 3 ? 7 : 1;  // only the fallback levels matter
        tk.ask_volume = 1;
        tk.bid_trades = 1;
        tk.ask_trades = 1;
        b.ticks.push_back(tk);
    }
    e.formation_tick_index = b.ticks.size() - 1;
    b.end_ts_ms = 100;
    auto f = pattern_features(e, b, FeatureConfig{});
    // upper bids: profile gives 2 at t=1,2; window gives 7 at t=3,4,5
    // lower bids mirror, so the ratio is 1
    EXPECT_DOUBLE_EQ(f[fi("P0")], (2 + 2 + 7 + 7 + 7) / static_cast<double>(2 + 2 + 7 + 7 + 7));
    EXPECT_DOUBLE_EQ(f[fi("P8")], 9.0 / 25.0);
}

TEST(PatternFeaturesPriceLevel, OddEvenRemapReadsApproachSide) {
    // resistance at X: "t=-1" reads X-1, "t=+1" reads X-2
    PatternEvent e;
    e.kind = PatternKind::price_level;
    e.target_price_idx = 1000;
    e.side = Side::target_above;  // resistance, approached from below

    Batch b;
    for (int d = 0; d <= 10; ++d) {  // ticks at 1000-d with volume marking distance
        TickRecord tk;
        tk.start_ts_ms = d;
        tk.end_ts_ms = d;
        tk.price_idx = 1000 - d;
        tk.bid_volume = 10 + d;  // distinct per level
        tk.ask_volume = 5;
        tk.bid_trades = 2;
        tk.ask_trades = 1;
        b.ticks.push_back(tk);
    }
    e.formation_tick_index = b.ticks.size() - 1;
    b.end_ts_ms = 100;
    auto f = pattern_features(e, b, FeatureConfig{});
    // upper = even distances 2,4,6,8,10 ; lower = odd distances 1,3,5,7,9
    double upper = 12 + 14 + 16 + 18 + 20;
    double lower = 11 + 13 + 15 + 17 + 19;
    EXPECT_DOUBLE_EQ(f[fi("P0")], upper / lower);
    // P12 at t=-1 is the bid/ask ratio at distance 1
    EXPECT_DOUBLE_EQ(f[fi("P12_m1")], 11.0 / 5.0);
    EXPECT_DOUBLE_EQ(f[fi("P12_p1")], 12.0 / 5.0);
    EXPECT_DOUBLE_EQ(f[fi("P12_0")], 10.0 / 5.0);
}

TEST(PatternFeaturesPriceLevel, UniformAggregatesGiveUnitRatios) {
    PatternEvent e;
    e.kind = PatternKind::price_level;
    e.target_price_idx = 1000;
    e.side = Side::target_below;  // support, approached from above

    Batch b;
    for (int d = 0; d <= 10; ++d) {
        TickRecord tk;
        tk.start_ts_ms = d;
        tk.end_ts_ms = d;
        tk.price_idx = 1000 + d;
        tk.bid_volume = 6;
        tk.ask_volume = 6;
        tk.bid_trades = 2;
        tk.ask_trades = 2;
        b.ticks.push_back(tk);
    }
    e.formation_tick_index = b.ticks.size() - 1;
    auto f = pattern_features(e, b, FeatureConfig{});
    for (const char* name : {"P0", "P1", "P2", "P3", "P12_0", "P13_p1"})
        EXPECT_DOUBLE_EQ(f[fi(name)], 1.0) << name;
}

TEST(PatternFeaturesPriceLevel, DoubledVolumeAtFirstOddDistance) {
    PatternEvent e;
    e.kind = PatternKind::price_level;
    e.target_price_idx = 1000;
    e.side = Side::target_above;
    Batch b;
    for (int d = 0; d <= 10; ++d) {
        TickRecord tk;
        tk.start_ts_ms = d;
        tk.end_ts_ms = d;
        tk.price_idx = 1000 - d;
        tk.bid_volume = d == 1 ? 8 : 4;
        tk.ask_volume = 4;
        tk.bid_trades = 1;
        tk.ask_trades = 1;
        b.ticks.push_back(tk);
    }
    e.formation_tick_index = b.ticks.size() - 1;
    auto f = pattern_features(e, b, FeatureConfig{});
    EXPECT_DOUBLE_EQ(f[fi("P0")], 20.0 / 24.0);  // lower sum picks up the doubled level
}

TEST(MarketShift, BalancedFlowGivesUnitRatiosZeroShifts) {
    Batch b;
    for (int i = 0; i < 300; ++i) {
        TickRecord tk;
        tk.start_ts_ms = i;
        tk.end_ts_ms = i;
        tk.price_idx = 500;
        tk.bid_volume = 4;
        tk.ask_volume = 4;
        tk.bid_trades = 2;
        tk.ask_trades = 2;
        b.ticks.push_back(tk);
    }
    auto ms = market_shift_features(b, 290, FeatureConfig{});
    EXPECT_DOUBLE_EQ(ms[0], 1.0);
    EXPECT_DOUBLE_EQ(ms[1], 1.0);
    EXPECT_DOUBLE_EQ(ms[2], 0.0);
    EXPECT_DOUBLE_EQ(ms[3], 0.0);
}

TEST(MarketShift, LongMinusShortWindowArithmetic) {
    // long ratio 1.5, short ratio 1.2 -> MS2 = 0.3
    FeatureConfig cfg;
    cfg.long_window = 20;
    cfg.short_window = 5;
    Batch b;
    for (int i = 0; i < 21; ++i) {
        TickRecord tk;
        tk.start_ts_ms = i;
        tk.end_ts_ms = i;
        tk.price_idx = 500;
        bool in_short = i >= 15 && i < 20;  // last 5 ticks before the trigger at 20
        tk.bid_volume = in_short ? 12 : 16;
        tk.ask_volume = 10;
        tk.bid_trades = tk.bid_volume / 2;
        tk.ask_trades = 5;
        b.ticks.push_back(tk);
    }
    auto ms = market_shift_features(b, 20, cfg);
    EXPECT_DOUBLE_EQ(ms[0], 1.5);
    EXPECT_NEAR(ms[2], 0.3, 1e-12);
}

TEST(MarketShift, InsufficientHistoryIsMissing) {
    Batch b;
    for (int i = 0; i < 300; ++i) {
        TickRecord tk;
        tk.price_idx = 500;
        tk.bid_volume = 4;
        tk.ask_volume = 4;
        tk.bid_trades = 2;
        tk.ask_trades = 2;
        b.ticks.push_back(tk);
    }
    auto ms = market_shift_features(b, 100, FeatureConfig{});  // long window 237
    for (double v : ms) EXPECT_TRUE(is_missing(v));
}

TEST(FeatureInvariants, ScaleInvariance) {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<LevelAggregates> levels(11);
        for (auto& l : levels) {
            l.bid_trades = rng.uniform_int(1, 5);
            l.ask_trades = rng.uniform_int(1, 5);
            l.bid_volume = l.bid_trades * rng.uniform_int(1, 10);
            l.ask_volume = l.ask_trades * rng.uniform_int(1, 10);
        }
        levels[5].bid_volume += 100;
        PatternEvent e = profile_event(levels);
        Batch b = one_tick_batch();
        auto f1 = pattern_features(e, b, FeatureConfig{});

        const std::int64_t k = 7;
        for (auto& l : e.profile.levels) {
            l.bid_volume *= k;
            l.ask_volume *= k;
            l.bid_trades *= k;
            l.ask_trades *= k;
        }
        for (auto& t : b.ticks) {
            t.bid_volume *= k;
            t.ask_volume *= k;
            t.bid_trades *= k;
            t.ask_trades *= k;
        }
        auto f2 = pattern_features(e, b, FeatureConfig{});
        for (std::size_t i = 0; i < f1.size(); ++i) {
            if (is_missing(f1[i]))
                EXPECT_TRUE(is_missing(f2[i]));
            else
                EXPECT_NEAR(f1[i], f2[i], 1e-12) << feature_names()[i];
        }
    }
}

TEST(FeatureInvariants, MirrorMapsP0ToReciprocal) {
    Rng rng(9);
    std::vector<LevelAggregates> levels(11);
    for (auto& l : levels) {
        l.bid_trades = rng.uniform_int(1, 4);
        l.ask_trades = rng.uniform_int(1, 4);
        l.bid_volume = l.bid_trades + rng.uniform_int(1, 12);
        l.ask_volume = l.ask_trades + rng.uniform_int(1, 12);
    }
    levels[5].bid_volume += 50;
    PatternEvent e = profile_event(levels);
    Batch b = one_tick_batch();
    auto f = pattern_features(e, b, FeatureConfig{});

    std::vector<LevelAggregates> mirrored(levels.rbegin(), levels.rend());
    PatternEvent em = profile_event(mirrored);
    auto fm = pattern_features(em, b, FeatureConfig{});
    for (const char* name : {"P0", "P1", "P2", "P3"})
        EXPECT_NEAR(fm[fi(name)], 1.0 / f[fi(name)], 1e-12) << name;
}

TEST(FeatureTable, RoundTripsWithMissingToken) {
    std::vector<LevelAggregates> levels(11, agg(2, 2, 1, 1));
    levels[0] = agg(2, 0, 1, 0);
    levels[5] = agg(9, 9, 3, 3);
    PatternEvent e = profile_event(levels);
    Batch b = one_tick_batch();
    compute_features(e, b, FeatureConfig{});
    ASSERT_EQ(e.features.size(), feature_names().size());
    EXPECT_TRUE(is_missing(e.features[fi("MS0")]));  // no trigger set

    std::string path = "/tmp/vcrb_features_test.tsv";
    write_feature_table(path, {{e, "3/17 to 6/17"}});
    auto rows = read_feature_table(path);
    ASSERT_EQ(rows.size(), 1u);
    for (std::size_t i = 0; i < e.features.size(); ++i) {
        if (is_missing(e.features[i]))
            EXPECT_TRUE(is_missing(rows[0].event.features[i]));
        else
            EXPECT_DOUBLE_EQ(rows[0].event.features[i], e.features[i]);
    }
}
