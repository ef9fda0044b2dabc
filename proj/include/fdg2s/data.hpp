#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fdg2s/error.hpp"
#include "fdg2s/rng.hpp"
#include "fdg2s/tensor.hpp"

namespace fdg2s::data {

// =============================================================================
// Calendar helpers (ISO-8601, minute resolution)
// =============================================================================

// Minutes since 1970-01-01T00:00. Accepts "YYYY-MM-DD HH:MM[:SS]" with 'T' or
// space separator; seconds, when present, must be 00.
std::int64_t parse_iso_minutes(const std::string& ts);
std::string format_iso_minutes(std::int64_t minutes);
// Monday = 0 .. Sunday = 6.
int day_of_week_from_minutes(std::int64_t minutes);

// =============================================================================
// MaskedSeries — N x T observations with an observed/missing mask
// =============================================================================

class MaskedSeries {
public:
    MaskedSeries() = default;
    MaskedSeries(int n_regions, int t_len, int interval_minutes,
                 std::int64_t start_epoch_minutes);

    int n_regions() const { return n_; }
    int t_len() const { return t_; }
    int interval_minutes() const { return interval_minutes_; }
    int intervals_per_day() const { return t_d_; }
    std::int64_t start_epoch_minutes() const { return start_minutes_; }

    bool observed(int i, int t) const;
    // Reading a masked-out cell is a contract violation and throws.
    double value_at(int i, int t) const;
    void set_value(int i, int t, double v); // marks the cell observed
    void mask_out(int i, int t);

    // True iff every region is observed over [t0, t1).
    bool window_observed(int t0, int t1) const;

    double observed_mean() const;
    double observed_std() const; // population std
    std::int64_t observed_count() const;

    // Wide CSV (timestamp,r0,r1,...), empty field = missing; lossless for
    // observed values.
    void save_csv(const std::string& path) const;

private:
    void check_index(int i, int t) const;

    int n_ = 0, t_ = 0;
    int interval_minutes_ = 0, t_d_ = 0;
    std::int64_t start_minutes_ = 0;
    std::vector<double> values_;
    std::vector<std::uint8_t> mask_;
};

struct CsvSchema {
    enum class Layout { Auto, Long, Wide };
    Layout layout = Layout::Auto;
    std::string timestamp_column = "timestamp";
    std::string region_column = "region_id";
    std::string value_column = "value";
    int n_regions = 0; // 0 = infer from data (long layout only)
};

MaskedSeries load_observations(const std::string& path, const CsvSchema& schema = {});

// =============================================================================
// FactorFrame — exogenous factors per (region, interval)
// =============================================================================
// Factor types, in encoding order: day-of-week, daily slot, weather type,
// numeric weather, location embedding.

class FactorFrame {
public:
    static constexpr int kNumFactorTypes = 5;
    static constexpr int kDowWidth = 7;
    static constexpr int kSlotWidth = 3; // slot/T_d, sin, cos

    FactorFrame() = default;
    FactorFrame(int n_regions, int capacity, int t_d, int start_day_of_week,
                int start_slot, int weather_types, int numeric_dim, int embed_dim,
                std::uint64_t embed_seed);

    int n_regions() const { return n_; }
    int capacity() const { return capacity_; } // intervals with factor coverage
    int t_d() const { return t_d_; }
    int weather_types() const { return weather_types_; }
    int numeric_dim() const { return numeric_dim_; }
    int embed_dim() const { return embed_dim_; }

    int day_of_week(int t) const;
    int daily_slot(int t) const;

    bool weather_known(int i, int t) const;
    int weather_type(int i, int t) const;
    // z-scored numeric weather vector
    std::vector<double> numeric_weather(int i, int t) const;
    std::vector<double> numeric_weather_raw(int i, int t) const;
    // mean of the z-scored components; scalar summary used for value binning
    double numeric_summary(int i, int t) const;

    void set_weather(int i, int t, int type, const std::vector<double>& numeric_raw);
    void set_weather_all_regions(int t, int type, const std::vector<double>& numeric_raw);
    // Freeze z-scoring stats from currently known cells in [0, t_fit).
    void fit_numeric_stats(int t_fit);

    const ad::Tensor& location_embeddings() const { return embeddings_; }

    struct Encoding {
        std::vector<double> values;
        std::vector<std::pair<int, int>> segments; // (offset, width) per factor type
    };
    Encoding encode(int i, int t) const;
    int encoded_width() const;
    std::vector<int> segment_widths() const;

    nlohmann::json to_json() const;
    static FactorFrame from_json(const nlohmann::json& j);

private:
    int n_ = 0, capacity_ = 0, t_d_ = 0;
    int start_dow_ = 0, start_slot_ = 0;
    int weather_types_ = 0, numeric_dim_ = 0, embed_dim_ = 0;
    std::vector<int> weather_type_;   // Nxcapacity, -1 = unknown
    std::vector<double> numeric_raw_; // Nxcapacityxd_nw
    std::vector<double> z_mean_, z_std_;
    ad::Tensor embeddings_; // N x d_l, initial values (trainable copy lives in the model)
};

// Weather CSV: timestamp,region_id,weather_type,temp,precip; region_id "*"
// applies city-wide. Rows are forward-filled to every interval; a coverage
// gap longer than fill_limit_minutes raises MissingWeatherCoverage.
FactorFrame load_factors(const std::string& weather_csv_path, const MaskedSeries& series,
                         int weather_types, int embed_dim, std::uint64_t embed_seed,
                         int fill_limit_minutes = 1440, int future_capacity = 0);

// =============================================================================
// Graph — urban region graph (geographic proximity)
// =============================================================================

struct Graph {
    struct Edge {
        int i = 0, j = 0;
        double weight = 0.0;
    };
    int n_nodes = 0;
    std::vector<Edge> edges;
    std::vector<std::array<double, 2>> coords; // optional; empty = none

    void validate() const;
    nlohmann::json to_json() const;
    static Graph from_json(const nlohmann::json& j);
};

// =============================================================================
// Scenario — the two non-consecutive masking settings
// =============================================================================

struct Scenario {
    enum class Kind { EarlyPlanning, SensorFailure };
    static constexpr int kNearestObservedDays = 3;

    Kind kind = Kind::EarlyPlanning;
    int days = 1;         // p (days ahead) or q (days missing)
    int target_start = 0; // first forecast interval t0
    int horizon = 6;

    std::string name() const;
};

// Returns a copy with the scenario gap masked out; never unmasks a cell.
MaskedSeries apply_scenario(const MaskedSeries& series, const Scenario& scenario);

// =============================================================================
// Synthetic generation
// =============================================================================

struct SynthConfig {
    int n_regions = 20;
    int days = 60;
    int t_d = 24;
    std::vector<double> weather_probs = {0.55, 0.25, 0.12, 0.08};
    std::vector<double> weather_multipliers = {1.0, 0.7, 0.9, 0.5};
    double base_min = 20.0;
    double base_max = 60.0;
    double sigma = 0.05;
    int weather_block_intervals = 0;  // 0 = one draw per day
    double weather_persistence = 0.0; // prob. a block repeats the previous weather
    int embed_dim = 8;
    std::string start_date = "2017-01-02T00:00"; // a Monday
    void validate() const;
};

struct GroundTruthParams {
    std::vector<double> base;
    std::vector<double> weather_multipliers;
    std::vector<double> weather_probs;
    double sigma = 0.0;
    std::vector<double> weekly_profile;       // 7 x t_d, row-major by day
    std::vector<int> interval_weather;        // city-wide weather type per interval
    int t_d = 0;

    double profile(int dow, int slot) const { return weekly_profile[dow * t_d + slot]; }
    nlohmann::json to_json() const;
    static GroundTruthParams from_json(const nlohmann::json& j);
};

struct SyntheticData {
    MaskedSeries series;
    FactorFrame factors;
    Graph graph;
    GroundTruthParams truth;
};

SyntheticData generate_synthetic(const SynthConfig& config, std::uint64_t seed);

// Writes observations.csv, weather.csv, graph.json, ground_truth.json.
void save_synthetic(const SyntheticData& data, const std::string& dir);

} // namespace fdg2s::data
