#include "vcrb/labeling.hpp"

#include <gtest/gtest.h>

#include "vcrb/random.hpp"

using namespace vcrb;

namespace {

Batch batch_of(std::vector<std::int64_t> prices) {
    Batch b;
    b.label = "test";
    for (std::size_t i = 0; i < prices.size(); ++i) {
        TickRecord t;
        t.start_ts_ms = static_cast<std::int64_t>(i) * 1000;
        t.end_ts_ms = t.start_ts_ms;
        t.price_idx = prices[i];
        t.bid_volume = 2;
        t.ask_volume = 2;
        t.bid_trades = 1;
        t.ask_trades = 1;
        b.ticks.push_back(t);
    }
    b.end_ts_ms = static_cast<std::int64_t>(prices.size()) * 1000;
    return b;
}

PatternEvent event_at(std::size_t formation, std::int64_t target) {
    PatternEvent e;
    e.kind = PatternKind::vcrb;
    e.formation_tick_index = formation;
    e.target_price_idx = target;
    e.side = Side::target_below;
    return e;
}

}  // namespace

TEST(LabelConfigTest, ValidatesOrdering) {
    LabelConfig c;
    c.reversal_ticks = 3;
    c.crossing_ticks = 3;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = LabelConfig{};
    c.approach_ticks = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(LabelEvent, ReversalOnApproachSideIsPositive) {
    // approach from above, touch, then 15 ticks back up
    std::vector<std::int64_t> prices = {100, 105, 103, 102, 101, 100};
    for (int k = 1; k <= 15; ++k) prices.push_back(100 + k);
    Batch b = batch_of(prices);
    PatternEvent e = label_event(event_at(0, 100), b, LabelConfig{});
    EXPECT_EQ(e.label, Label::positive);
    ASSERT_TRUE(e.trigger_tick_index.has_value());
    EXPECT_EQ(*e.trigger_tick_index, 3u);  // first tick within 2 of the target (102)
}

TEST(LabelEvent, CrossingBeyondTargetIsNegative) {
    std::vector<std::int64_t> prices = {100, 104, 102, 101, 100, 99, 98, 97, 96};
    Batch b = batch_of(prices);
    PatternEvent e = label_event(event_at(0, 100), b, LabelConfig{});
    EXPECT_EQ(e.label, Label::negative);
}

TEST(LabelEvent, ShallowCrossThenReversalIsExcluded) {
    // hand trace: approach from above, cross by 2, then reverse 15 from the
    // target on the approach side
    std::vector<std::int64_t> prices = {100, 104, 103, 102, 101, 100, 99, 98, 99, 100};
    for (int k = 1; k <= 15; ++k) prices.push_back(100 + k);
    ASSERT_GE(prices.size(), 25u);
    Batch b = batch_of(prices);
    PatternEvent e = label_event(event_at(0, 100), b, LabelConfig{});
    EXPECT_EQ(e.label, Label::excluded);
}

TEST(LabelEvent, TouchingTargetExactlyIsNoProgress) {
    // price oscillates on the target without 15 up or 3 beyond: unresolved
    std::vector<std::int64_t> prices = {100, 103, 101, 100, 101, 100, 102, 100, 101};
    Batch b = batch_of(prices);
    PatternEvent e = label_event(event_at(0, 100), b, LabelConfig{});
    EXPECT_EQ(e.label, Label::unresolved);
}

TEST(LabelEvent, ExpiryGivesUnresolved) {
    std::vector<std::int64_t> prices(50, 105);
    prices[0] = 100;
    Batch b = batch_of(prices);
    LabelConfig cfg;
    cfg.expiry_ticks = 30;
    PatternEvent e = label_event(event_at(0, 100), b, cfg);
    EXPECT_EQ(e.label, Label::unresolved);
    EXPECT_FALSE(e.trigger_tick_index.has_value());  // never armed on the approach side
}

TEST(LabelEvent, ResolutionMustHappenInsideExpiryWindow) {
    std::vector<std::int64_t> prices = {100, 103, 102, 101, 100};
    for (int k = 1; k <= 15; ++k) prices.push_back(100 + k);
    Batch b = batch_of(prices);
    LabelConfig cfg;
    cfg.expiry_ticks = 10;  // reversal completes at tick 19, beyond the window
    PatternEvent e = label_event(event_at(0, 100), b, cfg);
    EXPECT_EQ(e.label, Label::unresolved);
}

TEST(LabelEvent, ImmediateTouchWithoutApproachSideIsUnresolved) {
    std::vector<std::int64_t> prices = {100, 100, 101, 102};
    Batch b = batch_of(prices);
    PatternEvent e = label_event(event_at(0, 100), b, LabelConfig{});
    EXPECT_EQ(e.label, Label::unresolved);
}

TEST(LabelEvent, ApproachFromBelowMirrors) {
    std::vector<std::int64_t> prices = {100, 95, 97, 98, 99, 100};
    for (int k = 1; k <= 15; ++k) prices.push_back(100 - k);
    Batch b = batch_of(prices);
    PatternEvent e = label_event(event_at(0, 100), b, LabelConfig{});
    EXPECT_EQ(e.label, Label::positive);
}

TEST(Views, SpecRuleRestatement) {
    std::vector<PatternEvent> events(3);
    events[0].label = Label::positive;
    events[1].label = Label::negative;
    events[2].label = Label::excluded;
    auto train = training_view(events);
    auto test = test_view(events);
    ASSERT_EQ(train.size(), 2u);
    EXPECT_EQ(train[0].label, Label::positive);
    EXPECT_EQ(train[1].label, Label::negative);
    ASSERT_EQ(test.size(), 3u);
    EXPECT_EQ(test[2].label, Label::negative);  // excluded relabelled for testing
}

TEST(Views, AllUnresolvedGivesEmptyViews) {
    std::vector<PatternEvent> events(4);
    for (auto& e : events) e.label = Label::unresolved;
    EXPECT_TRUE(training_view(events).empty());
    EXPECT_TRUE(test_view(events).empty());
}

TEST(Views, MixedFixtureMatchesHandRules) {
    // 10 events: 3 positive, 3 negative, 2 excluded, 2 unresolved
    std::vector<PatternEvent> events(10);
    Label pattern[10] = {Label::positive,   Label::negative, Label::excluded,
                         Label::unresolved, Label::positive, Label::negative,
                         Label::excluded,   Label::unresolved, Label::positive,
                         Label::negative};
    for (int i = 0; i < 10; ++i) {
        events[static_cast<std::size_t>(i)].label = pattern[i];
        events[static_cast<std::size_t>(i)].formation_tick_index = static_cast<std::size_t>(i);
    }
    auto train = training_view(events);
    auto test = test_view(events);
    EXPECT_EQ(train.size(), 6u);
    EXPECT_EQ(test.size(), 8u);
    auto counts = count_dispositions(test);
    EXPECT_EQ(counts.positives, 3u);
    EXPECT_EQ(counts.negatives, 5u);  // 3 negative + 2 relabelled excluded
    EXPECT_EQ(counts.excluded, 0u);
}

TEST(LabelEvent, ResolutionUsesOnlyForwardTicks) {
    // same suffix after formation gives the same label regardless of prefix
    std::vector<std::int64_t> suffix = {104, 102, 101, 100, 99, 98, 97};
    std::vector<std::int64_t> a = {100};
    a.insert(a.end(), suffix.begin(), suffix.end());
    std::vector<std::int64_t> c = {57, 90, 123, 100};
    c.insert(c.end(), suffix.begin(), suffix.end());
    PatternEvent ea = label_event(event_at(0, 100), batch_of(a), LabelConfig{});
    PatternEvent ec = label_event(event_at(3, 100), batch_of(c), LabelConfig{});
    EXPECT_EQ(ea.label, ec.label);
    EXPECT_EQ(ea.label, Label::negative);
}

TEST(LabelEvent, RaisingReversalNeverCreatesPositives) {
    Rng rng(2024);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<std::int64_t> prices;
        std::int64_t p = 200;
        for (int i = 0; i < 400; ++i) {
            p += rng.uniform_int(-2, 2);
            prices.push_back(p);
        }
        Batch b = batch_of(prices);
        LabelConfig low;   // reversal 15
        LabelConfig high;
        high.reversal_ticks = 20;
        for (std::size_t f = 0; f + 1 < 40; f += 7) {
            PatternEvent base = event_at(f, prices[f]);
            Label l_low = label_event(base, b, low).label;
            Label l_high = label_event(base, b, high).label;
            if (l_high == Label::positive) EXPECT_EQ(l_low, Label::positive);
        }
    }
}

TEST(LabelEvent, FormationOutsideBatchThrows) {
    Batch b = batch_of({1, 2, 3});
    EXPECT_THROW(label_event(event_at(10, 2), b, LabelConfig{}), std::out_of_range);
}
