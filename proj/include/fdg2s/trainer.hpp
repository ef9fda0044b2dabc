#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fdg2s/data.hpp"
#include "fdg2s/factor_graph.hpp"
#include "fdg2s/model.hpp"
#include "fdg2s/sampler.hpp"

namespace fdg2s::train {

// =============================================================================
// Losses
// =============================================================================

// Mean over cells of |y - yhat| / max(|y|, floor).
ad::Var mape_loss(ad::Var y_const, ad::Var yhat, double floor);
double mape_metric(const ad::Tensor& y, const ad::Tensor& yhat, double floor);

struct LossBreakdown {
    double mape = 0, l_rec = 0, l_av = 0, l_cons = 0;
    double gamma1 = 1, gamma2 = 1, gamma3 = 1;
    double total = 0;
    nlohmann::json to_json() const;
};

// Adaptive auxiliary weights: gamma_k = mape_mean / aux_mean, clamped to
// [1e-3, 1e3]; a zero auxiliary mean keeps the previous value. Initialized
// from the first batch, then re-tuned from each epoch's means.
struct GammaState {
    double g1 = 1.0, g2 = 1.0, g3 = 1.0;
    bool initialized = false;
    void update(double mape_mean, double rec_mean, double av_mean, double cons_mean);
};

// =============================================================================
// Adam
// =============================================================================

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOptimizer {
public:
    AdamOptimizer() = default;
    AdamOptimizer(const std::vector<model::NamedTensor>& params, AdamConfig config);

    // Bias-corrected moment update; grads are parallel to params.
    void step(std::vector<model::NamedTensor>& params, const std::vector<ad::Tensor>& grads);
    std::int64_t step_count() const { return step_; }

    model::OptimizerSnapshot snapshot(const std::vector<model::NamedTensor>& params) const;
    void restore(const model::OptimizerSnapshot& snap, const std::vector<model::NamedTensor>& params);

private:
    AdamConfig config_;
    std::int64_t step_ = 0;
    std::vector<ad::Tensor> m_, v_;
};

// =============================================================================
// Target contexts
// =============================================================================

// Assembles everything the model forward needs for one target: retrieved
// windows, per-step static factor matrices, selected bank matrices, ground
// truth when observed, and weak variation labels when requested.
// Throws SampleNotFound when retrieval fails.
model::TargetContext make_target_context(const data::MaskedSeries& series,
                                         const data::FactorFrame& factors,
                                         const graph::AdjacencyBank& bank, int t_ref, int h,
                                         int eps_slot, bool want_labels, int pi_q);

// =============================================================================
// Training loop
// =============================================================================

struct TrainConfig {
    int horizon = 6;
    int eps_slot = 3;
    int pi_q = 4;
    int kernel_dim = 64;
    int lstm_hidden = 32;
    double alpha = 0.5;
    AdamConfig adam;
    int batch_size = 32;
    int max_epochs = 50;
    int patience = 10;
    int targets_per_epoch = 256; // 0 = every valid target each epoch
    double mape_floor = 1.0;
    double cons_floor = 1e-3;
    int bank_max_windows = 64;
    std::uint64_t seed = 1;
};

struct EpochRecord {
    int epoch = 0;
    LossBreakdown train;
    double val_mape = 0.0;
    nlohmann::json to_json() const;
};

struct TrainResult {
    model::ForecastModel best_model;
    model::ForecastModel final_model;
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_val_mape = 0.0;
    model::OptimizerSnapshot optimizer; // state at the final epoch
    int train_end = 0;                  // split boundaries, intervals
    int val_end = 0;
};

// Called after each epoch with the current (end-of-epoch) model.
using EpochCallback = std::function<void(int epoch, const model::ForecastModel&)>;

// Chronological 60/10/30 split; the bank must come from the training split
// (built internally when bank == nullptr). Early-stops on validation MAPE.
TrainResult train(const data::MaskedSeries& series, const data::FactorFrame& factors,
                  const TrainConfig& config, const graph::AdjacencyBank* bank = nullptr,
                  const EpochCallback& on_epoch = nullptr);

// Split helpers shared with evaluation.
int train_split_end(int t_len);
int val_split_end(int t_len);

} // namespace fdg2s::train
