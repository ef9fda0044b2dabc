#pragma once

#include <string>
#include <vector>

#include "fdg2s/data.hpp"
#include "fdg2s/factor_graph.hpp"
#include "fdg2s/model.hpp"

namespace fdg2s::eval {

// =============================================================================
// Metrics
// =============================================================================

// Fraction of cells with y inside [yhat - u_a, yhat + u_a], boundary inclusive.
double picp(const ad::Tensor& y, const ad::Tensor& yhat, const ad::Tensor& u_a);

// Mean of u_a / max(|y|, floor).
double up(const ad::Tensor& y, const ad::Tensor& u_a, double floor);

// =============================================================================
// Baselines
// =============================================================================

enum class BaselineKind { HistoricalAverage, SeasonalNaive };

// HistoricalAverage: per region and step, mean over all observed cells sharing
// (day-of-week, slot) strictly before t_ref. SeasonalNaive: the value one week
// earlier, stepping back additional weeks until an observed cell is found.
ad::Tensor baseline_forecast(BaselineKind kind, const data::MaskedSeries& series,
                             const data::FactorFrame& factors, int t_ref, int h);

// =============================================================================
// Scenario evaluation harness
// =============================================================================

struct ScenarioSpec {
    data::Scenario::Kind kind = data::Scenario::Kind::EarlyPlanning;
    int days = 1;
    std::string name() const;
};

struct ScenarioRow {
    std::string scenario;
    std::string model_name; // fdg2s | historical_average | seasonal_naive
    double mape = 0.0;
    double picp = 0.0; // only meaningful for fdg2s rows
    double up = 0.0;
    int n_targets = 0;
    int n_skipped = 0;
};

struct CellResidual {
    std::string scenario;
    std::string model_name;
    int region = 0, t = 0, step = 0;
    double y = 0.0, y_hat = 0.0, u_e = 0.0, u_a = 0.0;
};

struct EvalOptions {
    int horizon = 6;
    int eps_slot = 3;
    int pi_q = 4;
    int j_probes = 10;
    double rho = 0.01;
    double mape_floor = 1.0;
    std::uint64_t seed = 1;
};

struct EvalResult {
    std::vector<ScenarioRow> rows;
    std::vector<CellResidual> residuals;
    std::string rows_csv() const;      // scenario,model,mape,picp,up,n_targets,n_skipped
    std::string residuals_csv() const; // per-cell rows for external plotting
};

// Test-split targets at stride h; each target's expected factors are its true
// held-out factor records. Scenario masks are applied per target before any
// retrieval. Retrieval failures are counted, never fatal.
EvalResult evaluate(const model::ForecastModel& m, const data::MaskedSeries& series,
                    const data::FactorFrame& factors, const graph::AdjacencyBank& bank,
                    const std::vector<ScenarioSpec>& scenarios, const EvalOptions& opts);

} // namespace fdg2s::eval
