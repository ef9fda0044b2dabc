#include "fdg2s/eval.hpp"

#include <cmath>
#include <cstdio>

#include "fdg2s/trainer.hpp"
#include "fdg2s/uq.hpp"

namespace fdg2s::eval {

using ad::Tensor;

// =============================================================================
// Metrics
// =============================================================================

double picp(const Tensor& y, const Tensor& yhat, const Tensor& u_a) {
    if (!y.same_shape(yhat) || !y.same_shape(u_a))
        throw Error(ErrorCode::ShapeMismatch, "PICP operands differ in shape");
    std::int64_t covered = 0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        if (u_a.at(k) < 0.0) throw Error(ErrorCode::NegativeWidth, "interval half-width < 0");
        if (y.at(k) >= yhat.at(k) - u_a.at(k) && y.at(k) <= yhat.at(k) + u_a.at(k)) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(y.size());
}

double up(const Tensor& y, const Tensor& u_a, double floor) {
    if (!y.same_shape(u_a)) throw Error(ErrorCode::ShapeMismatch, "UP operands differ in shape");
    if (floor <= 0.0) throw Error(ErrorCode::InvalidConfig, "UP floor must be positive");
    double s = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k)
        s += u_a.at(k) / std::max(std::fabs(y.at(k)), floor);
    return s / static_cast<double>(y.size());
}

// =============================================================================
// Baselines
// =============================================================================

Tensor baseline_forecast(BaselineKind kind, const data::MaskedSeries& series,
                         const data::FactorFrame& factors, int t_ref, int h) {
    int n = series.n_regions();
    int week = 7 * series.intervals_per_day();
    Tensor out({static_cast<std::size_t>(n), static_cast<std::size_t>(h)});
    for (int s = 0; s < h; ++s) {
        int target_t = t_ref + s;
        for (int i = 0; i < n; ++i) {
            if (kind == BaselineKind::HistoricalAverage) {
                double sum = 0.0;
                int count = 0;
                for (int t = target_t - week; t >= 0; t -= week) {
                    if (t >= series.t_len() || !series.observed(i, t)) continue;
                    sum += series.value_at(i, t);
                    ++count;
                }
                if (count == 0)
                    throw Error(ErrorCode::NoHistoricalMatch,
                                "no observed (dow, slot) match for region " + std::to_string(i) +
                                    " step " + std::to_string(s));
                out.at(static_cast<std::size_t>(i), static_cast<std::size_t>(s)) =
                    sum / static_cast<double>(count);
            } else {
                bool found = false;
                for (int t = target_t - week; t >= 0; t -= week) {
                    if (t >= series.t_len() || !series.observed(i, t)) continue;
                    out.at(static_cast<std::size_t>(i), static_cast<std::size_t>(s)) =
                        series.value_at(i, t);
                    found = true;
                    break;
                }
                if (!found)
                    throw Error(ErrorCode::NoHistoricalMatch,
                                "no observed weekly-back cell for region " + std::to_string(i) +
                                    " step " + std::to_string(s));
            }
        }
    }
    (void)factors;
    return out;
}

// =============================================================================
// Harness
// =============================================================================

std::string ScenarioSpec::name() const {
    data::Scenario sc{kind, days, 0, 0};
    return sc.name();
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

struct Accumulator {
    double err_sum = 0.0;
    std::int64_t covered = 0;
    double up_sum = 0.0;
    std::int64_t cells = 0;
    int targets = 0, skipped = 0;

    void add_cells(const Tensor& y, const Tensor& yhat, const Tensor* u_a, double floor) {
        for (std::size_t k = 0; k < y.size(); ++k) {
            err_sum += std::fabs(y.at(k) - yhat.at(k)) / std::max(std::fabs(y.at(k)), floor);
            if (u_a) {
                if (y.at(k) >= yhat.at(k) - u_a->at(k) && y.at(k) <= yhat.at(k) + u_a->at(k))
                    ++covered;
                up_sum += u_a->at(k) / std::max(std::fabs(y.at(k)), floor);
            }
            ++cells;
        }
        ++targets;
    }

    ScenarioRow row(const std::string& scenario, const std::string& model_name,
                    bool with_uq) const {
        ScenarioRow r;
        r.scenario = scenario;
        r.model_name = model_name;
        r.mape = cells ? err_sum / static_cast<double>(cells) : std::nan("");
        r.picp = with_uq && cells ? static_cast<double>(covered) / static_cast<double>(cells) : 0.0;
        r.up = with_uq && cells ? up_sum / static_cast<double>(cells) : 0.0;
        r.n_targets = targets;
        r.n_skipped = skipped;
        return r;
    }
};

} // namespace

EvalResult evaluate(const model::ForecastModel& m, const data::MaskedSeries& series,
                    const data::FactorFrame& factors, const graph::AdjacencyBank& bank,
                    const std::vector<ScenarioSpec>& scenarios, const EvalOptions& opts) {
    int h = opts.horizon;
    int t_len = series.t_len();
    int test_start = train::val_split_end(t_len);

    // Non-overlapping test targets with fully observed ground truth.
    std::vector<int> targets;
    for (int t_ref = test_start; t_ref + h <= t_len; t_ref += h)
        if (series.window_observed(t_ref, t_ref + h)) targets.push_back(t_ref);

    EvalResult result;
    for (const auto& spec : scenarios) {
        Accumulator fdg2s_acc, ha_acc, sn_acc;
        std::string scenario_name = spec.name();

        for (int t_ref : targets) {
            data::Scenario scenario{spec.kind, spec.days, t_ref, h};
            data::MaskedSeries masked;
            try {
                masked = data::apply_scenario(series, scenario);
            } catch (const Error&) {
                ++fdg2s_acc.skipped;
                ++ha_acc.skipped;
                ++sn_acc.skipped;
                continue;
            }

            Tensor y({static_cast<std::size_t>(series.n_regions()), static_cast<std::size_t>(h)});
            for (int i = 0; i < series.n_regions(); ++i)
                for (int s = 0; s < h; ++s)
                    y.at(static_cast<std::size_t>(i), static_cast<std::size_t>(s)) =
                        series.value_at(i, t_ref + s);

            // FDG2S
            try {
                model::TargetContext ctx = train::make_target_context(
                    masked, factors, bank, t_ref, h, opts.eps_slot, false, opts.pi_q);
                ad::Tape tape;
                model::ModelBinding binding = model::bind(tape, m, false);
                model::ForwardOut out = model::forward(tape, binding, ctx);

                uq::UncertaintyReport report;
                report.t_ref = t_ref;
                report.yhat = out.yhat.value();
                report.u_as = out.u_as.value();
                report.u_av = out.u_av.value();
                report.u_e = uq::epistemic(m, ctx, opts.j_probes, opts.rho,
                                           m.config().norm_std,
                                           opts.seed ^ static_cast<std::uint64_t>(t_ref));
                Tensor u_a = report.total_aleatoric();
                fdg2s_acc.add_cells(y, report.yhat, &u_a, opts.mape_floor);

                for (int i = 0; i < series.n_regions(); ++i)
                    for (int s = 0; s < h; ++s) {
                        std::size_t ii = static_cast<std::size_t>(i), ss = static_cast<std::size_t>(s);
                        result.residuals.push_back({scenario_name, "fdg2s", i, t_ref + s, s,
                                                    y.at(ii, ss), report.yhat.at(ii, ss),
                                                    report.u_e.at(ii, ss), u_a.at(ii, ss)});
                    }
            } catch (const Error&) {
                ++fdg2s_acc.skipped;
            }

            // Baselines see the same masked history.
            try {
                Tensor yhat = baseline_forecast(BaselineKind::HistoricalAverage, masked, factors,
                                                t_ref, h);
                ha_acc.add_cells(y, yhat, nullptr, opts.mape_floor);
            } catch (const Error&) {
                ++ha_acc.skipped;
            }
            try {
                Tensor yhat =
                    baseline_forecast(BaselineKind::SeasonalNaive, masked, factors, t_ref, h);
                sn_acc.add_cells(y, yhat, nullptr, opts.mape_floor);
            } catch (const Error&) {
                ++sn_acc.skipped;
            }
        }

        result.rows.push_back(fdg2s_acc.row(scenario_name, "fdg2s", true));
        result.rows.push_back(ha_acc.row(scenario_name, "historical_average", false));
        result.rows.push_back(sn_acc.row(scenario_name, "seasonal_naive", false));
    }
    return result;
}

std::string EvalResult::rows_csv() const {
    std::string out = "scenario,model,mape,picp,up,n_targets,n_skipped\n";
    for (const auto& r : rows) {
        out += r.scenario + "," + r.model_name + "," + fmt(r.mape) + "," + fmt(r.picp) + "," +
               fmt(r.up) + "," + std::to_string(r.n_targets) + "," + std::to_string(r.n_skipped) +
               "\n";
    }
    return out;
}

std::string EvalResult::residuals_csv() const {
    std::string out = "scenario,model,region,t,step,y,y_hat,u_e,u_a\n";
    for (const auto& c : residuals) {
        out += c.scenario + "," + c.model_name + "," + std::to_string(c.region) + "," +
               std::to_string(c.t) + "," + std::to_string(c.step) + "," + fmt(c.y) + "," +
               fmt(c.y_hat) + "," + fmt(c.u_e) + "," + fmt(c.u_a) + "\n";
    }
    return out;
}

} // namespace fdg2s::eval
