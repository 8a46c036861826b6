#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vcrb/labeling.hpp"
#include "vcrb/market_data.hpp"
#include "vcrb/pattern_extraction.hpp"

namespace vcrb {

inline double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }
inline bool is_missing(double v) { return std::isnan(v); }

struct FeatureConfig {
    int long_window = 237;
    int short_window = 21;

    void validate() const;
};

// Canonical feature order: P0..P11, P12/P13 at offsets -1,0,+1, the side
// indicator P14, then MS0..MS3.
const std::vector<std::string>& feature_names();
std::size_t feature_index(const std::string& name);

// Pattern features from the per-price neighbourhood of the target. VCRB
// events read levels from their volume profile, falling back to the
// trailing window for levels outside it; price-level events read all
// levels from the trailing window with the odd/even distance remap on the
// approach side.
std::vector<double> pattern_features(const PatternEvent& event, const Batch& batch,
                                     const FeatureConfig& config);

// Market-shift features over trailing windows ending just before the
// trigger tick. All four are missing when the trigger is unset or fewer
// than long_window ticks precede it.
std::vector<double> market_shift_features(const Batch& batch, std::size_t trigger_tick_index,
                                          const FeatureConfig& config);

// Fills event.features with the full canonical vector.
void compute_features(PatternEvent& event, const Batch& batch, const FeatureConfig& config);

// Feature matrix table (events x named features) with an explicit Missing
// token.
void write_feature_table(const std::string& path, const std::vector<EventTableRow>& rows);
std::vector<EventTableRow> read_feature_table(const std::string& path);

}  // namespace vcrb
