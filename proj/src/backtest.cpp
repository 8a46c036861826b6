#include "vcrb/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "vcrb/stats.hpp"

namespace vcrb {

void StrategyConfig::validate() const {
    if (!(take_profit_ticks > stop_loss_ticks && stop_loss_ticks > 0))
        throw std::invalid_argument("require take_profit > stop_loss > 0");
    if (fee_ticks < 0.0 || spread_ticks < 0.0)
        throw std::invalid_argument("fee and spread must be >= 0");
    if (notional_ticks <= 0.0) throw std::invalid_argument("notional must be positive");
}

std::string to_string(ExitReason r) {
    switch (r) {
        case ExitReason::take_profit: return "TakeProfit";
        case ExitReason::stop_loss: return "StopLoss";
        default: return "EndOfData";
    }
}

double profitability_threshold(const StrategyConfig& config) {
    config.validate();
    double denom = static_cast<double>(config.take_profit_ticks) - config.fee_ticks -
                   config.spread_ticks;
    if (denom <= 0.0)
        throw std::invalid_argument("profitability_threshold: nonpositive max profit");
    return (static_cast<double>(config.stop_loss_ticks) + config.fee_ticks + config.spread_ticks) /
           denom;
}

BacktestResult simulate(const std::vector<PatternEvent>& events, const Batch& batch,
                        const StrategyConfig& config, const LabelConfig& label_config,
                        const InstrumentSpec& spec) {
    config.validate();
    const auto& ticks = batch.ticks;

    // signals ordered by trigger tick
    struct Signal {
        std::size_t trigger;
        std::size_t window_end;  // last tick index the order may rest at
        std::int64_t target;
    };
    std::vector<Signal> signals;
    for (const PatternEvent& e : events) {
        if (!e.trigger_tick_index) continue;
        if (std::isnan(e.probability) || e.probability <= 0.5) continue;
        std::size_t window_end = std::min(
            ticks.size() - 1,
            e.formation_tick_index + static_cast<std::size_t>(label_config.expiry_ticks));
        signals.push_back({*e.trigger_tick_index, window_end, e.target_price_idx});
    }
    std::sort(signals.begin(), signals.end(),
              [](const Signal& a, const Signal& b) { return a.trigger < b.trigger; });

    BacktestResult result;
    enum class Slot { idle, pending, open } slot = Slot::idle;
    Signal active{};
    std::size_t next_signal = 0;
    std::size_t fill_index = 0;
    int direction = +1;

    const double cost = config.fee_ticks + config.spread_ticks;
    auto close_trade = [&](std::size_t i, std::int64_t exit_price, ExitReason reason) {
        TradeRecord t;
        t.entry_tick_index = fill_index;
        t.entry_price_idx = active.target;
        t.exit_tick_index = i;
        t.exit_price_idx = exit_price;
        t.direction = direction;
        t.pnl_ticks =
            static_cast<double>((exit_price - active.target) * direction) - cost;
        t.exit_reason = reason;
        result.trades.push_back(t);
        slot = Slot::idle;
    };

    for (std::size_t i = 0; i < ticks.size(); ++i) {
        const std::int64_t p = ticks[i].price_idx;

        if (slot == Slot::open) {
            std::int64_t offset = (p - active.target) * direction;
            if (offset >= config.take_profit_ticks) {
                close_trade(i, active.target + direction * config.take_profit_ticks,
                            ExitReason::take_profit);
            } else if (offset <= -config.stop_loss_ticks) {
                close_trade(i, active.target - direction * config.stop_loss_ticks,
                            ExitReason::stop_loss);
            }
        } else if (slot == Slot::pending) {
            if (i > active.window_end) {
                slot = Slot::idle;  // order expired unfilled
            } else if (p == active.target && i > active.trigger) {
                // fill; trade toward the approach side
                direction = ticks[i - 1].price_idx > active.target ? +1 : -1;
                fill_index = i;
                slot = Slot::open;
            }
        }

        while (next_signal < signals.size() && signals[next_signal].trigger <= i) {
            if (slot == Slot::idle && signals[next_signal].trigger == i) {
                active = signals[next_signal];
                slot = Slot::pending;
            }
            ++next_signal;
        }
    }
    if (slot == Slot::open && !ticks.empty())
        close_trade(ticks.size() - 1, ticks.back().price_idx, ExitReason::end_of_data);

    result.equity = build_equity(result.trades, batch, config, spec);
    return result;
}

EquityCurve build_equity(const std::vector<TradeRecord>& trades, const Batch& batch,
                         const StrategyConfig& config, const InstrumentSpec& spec) {
    EquityCurve curve;
    if (batch.ticks.empty()) return curve;

    std::map<std::int64_t, double> pnl_by_day;
    std::int64_t first_day = trading_day_index(batch.ticks.front().start_ts_ms, spec);
    std::int64_t last_day = trading_day_index(batch.ticks.back().start_ts_ms, spec);
    for (const TradeRecord& t : trades) {
        std::int64_t day = trading_day_index(batch.ticks[t.exit_tick_index].start_ts_ms, spec);
        pnl_by_day[day] += t.pnl_ticks;
    }
    double cumulative = 0.0;
    for (std::int64_t day = first_day; day <= last_day; ++day) {
        EquityPoint p;
        p.day_index = day;
        auto it = pnl_by_day.find(day);
        p.pnl_ticks = it == pnl_by_day.end() ? 0.0 : it->second;
        cumulative += p.pnl_ticks;
        p.cumulative_ticks = cumulative;
        p.daily_return = p.pnl_ticks / config.notional_ticks;
        curve.days.push_back(p);
    }
    return curve;
}

Eigen::VectorXd EquityCurve::daily_returns() const {
    Eigen::VectorXd r(static_cast<Eigen::Index>(days.size()));
    for (std::size_t i = 0; i < days.size(); ++i)
        r[static_cast<Eigen::Index>(i)] = days[i].daily_return;
    return r;
}

double EquityCurve::final_equity_ticks() const {
    return days.empty() ? 0.0 : days.back().cumulative_ticks;
}

SharpeSeries rolling_sharpe(const Eigen::VectorXd& daily_returns, double risk_free_annual,
                            int window_days, int smooth_days) {
    if (window_days < 2) throw std::invalid_argument("window_days must be >= 2");
    if (smooth_days < 1) throw std::invalid_argument("smooth_days must be >= 1");
    const Eigen::Index n = daily_returns.size();
    if (n < window_days)
        throw std::invalid_argument("rolling_sharpe: need at least window_days returns");

    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double rf_daily = risk_free_annual / 252.0;
    const double annualize = std::sqrt(252.0);

    SharpeSeries out;
    out.annualized = Eigen::VectorXd::Constant(n, nan);
    for (Eigen::Index d = window_days - 1; d < n; ++d) {
        Eigen::VectorXd window = daily_returns.segment(d - window_days + 1, window_days);
        // an all-equal window has zero variance regardless of float residue
        if (window.maxCoeff() == window.minCoeff()) continue;
        double mean = window.mean();
        double sd = sample_sd(window);
        out.annualized[d] = sd > 0.0 ? annualize * (mean - rf_daily) / sd : nan;
    }

    out.smoothed = Eigen::VectorXd::Constant(n, nan);
    for (Eigen::Index d = 0; d < n; ++d) {
        Eigen::Index lo = std::max<Eigen::Index>(0, d - smooth_days + 1);
        double sum = 0.0;
        int count = 0;
        for (Eigen::Index k = lo; k <= d; ++k) {
            if (!std::isnan(out.annualized[k])) {
                sum += out.annualized[k];
                ++count;
            }
        }
        if (count > 0) out.smoothed[d] = sum / count;
    }
    return out;
}

}  // namespace vcrb
