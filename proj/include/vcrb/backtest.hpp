#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "vcrb/labeling.hpp"
#include "vcrb/market_data.hpp"
#include "vcrb/pattern_extraction.hpp"

namespace vcrb {

struct StrategyConfig {
    int take_profit_ticks = 15;
    int stop_loss_ticks = 3;
    double fee_ticks = 0.5;  // per round trip
    double spread_ticks = 0.0;
    double notional_ticks = 1000.0;  // converts daily tick pnl to simple returns
    bool single_position = true;

    void validate() const;
};

enum class ExitReason { take_profit, stop_loss, end_of_data };

std::string to_string(ExitReason r);

struct TradeRecord {
    std::size_t entry_tick_index = 0;
    std::int64_t entry_price_idx = 0;
    std::size_t exit_tick_index = 0;
    std::int64_t exit_price_idx = 0;
    int direction = +1;  // +1 long, -1 short
    double pnl_ticks = 0.0;  // net of fee and spread
    ExitReason exit_reason = ExitReason::end_of_data;
};

struct EquityPoint {
    std::int64_t day_index = 0;  // trading day (see trading_day_index)
    double pnl_ticks = 0.0;
    double cumulative_ticks = 0.0;
    double daily_return = 0.0;
};

struct EquityCurve {
    std::vector<EquityPoint> days;

    Eigen::VectorXd daily_returns() const;
    double final_equity_ticks() const;
};

struct BacktestResult {
    std::vector<TradeRecord> trades;
    EquityCurve equity;
};

// Fixed take-profit/stop-loss simulation over classified events. Each
// positively predicted event places a limit order at its target on the
// trigger tick; the order fills at the first later touch, trades toward the
// approach side, and exits at target +/- the configured offsets. One
// position (or pending order) at a time; unfilled orders cancel when the
// labeling window expires.
BacktestResult simulate(const std::vector<PatternEvent>& events, const Batch& batch,
                        const StrategyConfig& config, const LabelConfig& label_config,
                        const InstrumentSpec& spec);

// Break-even precision of the strategy:
// (stop + fee + spread) / (take_profit - fee - spread).
double profitability_threshold(const StrategyConfig& config);

struct SharpeSeries {
    // NaN marks undefined entries (warm-up or zero-variance windows)
    Eigen::VectorXd annualized;  // aligned with the daily return series
    Eigen::VectorXd smoothed;    // trailing smooth_days mean of the above
};

// Rolling annualized Sharpe ratio over trailing window_days daily returns;
// the first defined value appears once a full window is available.
SharpeSeries rolling_sharpe(const Eigen::VectorXd& daily_returns, double risk_free_annual = 0.05,
                            int window_days = 252, int smooth_days = 90);

// Builds a continuous daily-return series (gaps filled with zero-pnl days)
// from trades resolved against tick timestamps.
EquityCurve build_equity(const std::vector<TradeRecord>& trades, const Batch& batch,
                         const StrategyConfig& config, const InstrumentSpec& spec);

}  // namespace vcrb
