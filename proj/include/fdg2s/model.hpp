#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fdg2s/factor_graph.hpp"
#include "fdg2s/seq_model.hpp"
#include "fdg2s/tensor.hpp"

namespace fdg2s::model {

// =============================================================================
// Configuration and parameter container
// =============================================================================

struct ModelConfig {
    int n_regions = 0;
    int horizon = 6;
    // Widths of the factor-vector segments, one per factor type; the last
    // segment is the trainable location embedding.
    std::vector<int> segment_widths;
    int kernel_dim = 64;
    int lstm_hidden = 32;
    double alpha = 0.5;
    // Observation normalization (training-split statistics, natural units).
    double norm_mean = 0.0;
    double norm_std = 1.0;

    int num_segments() const { return static_cast<int>(segment_widths.size()); }
    int embed_dim() const { return segment_widths.back(); }
    int factor_width() const;
    int static_width() const { return factor_width() - embed_dim(); }
    void validate() const;
};

struct NamedTensor {
    std::string name;
    ad::Tensor value;
};

// All learnable parameters: aggregation weights S_k, the two status networks,
// GNN kernels, forecast LSTM + readout, reconstruction decoder, variation
// head, and the location embeddings.
class ForecastModel {
public:
    ForecastModel() = default;
    // Fresh seeded initialization; embeddings copied from initial_embeddings
    // when given (the FactorFrame's random table), otherwise seeded here.
    ForecastModel(ModelConfig config, std::uint64_t seed,
                  const ad::Tensor* initial_embeddings = nullptr);
    // Rebuild from checkpointed tensors.
    ForecastModel(ModelConfig config, std::vector<NamedTensor> params);

    const ModelConfig& config() const { return config_; }
    std::vector<NamedTensor>& params() { return params_; }
    const std::vector<NamedTensor>& params() const { return params_; }
    const ad::Tensor& param(const std::string& name) const;

private:
    ModelConfig config_;
    std::vector<NamedTensor> params_;
};

// Parameters bound to a tape as leaves (trainable for training tapes).
struct ModelBinding {
    const ForecastModel* model = nullptr;
    std::vector<ad::Var> vars; // parallel to model->params()
    ad::Var at(const std::string& name) const;
};

ModelBinding bind(ad::Tape& tape, const ForecastModel& model, bool trainable);

// =============================================================================
// Forward pass
// =============================================================================

// Everything the forward pass needs for one target, in plain tensors.
struct TargetContext {
    int t_ref = 0;
    ad::Tensor x_p; // N x h, natural units
    ad::Tensor x_h; // N x h, natural units
    // Static factor-vector part (everything except the embedding segment) per
    // forecast step: h entries of N x static_width. Entry 0 describes t_ref
    // and also conditions the aggregation and status networks.
    std::vector<ad::Tensor> step_statics;
    // Bank matrices selected by the target's expected factor values.
    std::vector<ad::Tensor> bank_matrices;
    ad::Tensor y; // N x h ground truth, when known
    bool has_y = false;
    ad::Tensor u_av_labels; // N x h weak variation labels, when built
    bool has_labels = false;
};

struct ForwardOut {
    ad::Var yhat; // N x h, natural units
    ad::Var xhat; // N x h, reconstruction of X_H, natural units
    ad::Var u_as; // N x 1, per-node mean squared reconstruction residual
    ad::Var u_av; // N x h, factor-induced variation head
    ad::Var g;    // 1 x (M+1) aggregation weights
};

ForwardOut forward(ad::Tape& tape, const ModelBinding& binding, const TargetContext& ctx);

// =============================================================================
// Checkpointing
// =============================================================================

struct OptimizerSnapshot {
    std::int64_t step = 0;
    std::vector<NamedTensor> tensors; // first/second moments, "m/<p>" and "v/<p>"
};

void save_checkpoint(const std::string& path, const ForecastModel& model,
                     std::uint64_t config_hash, const OptimizerSnapshot* optimizer = nullptr);

struct LoadedCheckpoint {
    ForecastModel model;
    std::uint64_t config_hash = 0;
    bool has_optimizer = false;
    OptimizerSnapshot optimizer;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace fdg2s::model
