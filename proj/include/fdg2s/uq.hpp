#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"

#include "fdg2s/data.hpp"
#include "fdg2s/model.hpp"
#include "fdg2s/tensor.hpp"

namespace fdg2s::uq {

// =============================================================================
// Epistemic: corruption-based sample density probing
// =============================================================================

struct CorruptedPair {
    ad::Tensor x_p;
    ad::Tensor x_h;
};

// J independent corruptions X + eps, eps ~ Gaussian(0, (rho * sigma_train)^2)
// i.i.d. per cell; deterministic in seed.
std::vector<CorruptedPair> corrupt(const ad::Tensor& x_p, const ad::Tensor& x_h, int j_probes,
                                   double rho, double sigma_train, std::uint64_t seed);

// Per-cell population variance of the J corrupted forecasts. Runs forward
// passes on throwaway tapes; never touches parameters or optimizer state and
// records no backward pass.
ad::Tensor epistemic(const model::ForecastModel& m, const model::TargetContext& ctx, int j_probes,
                     double rho, double sigma_train, std::uint64_t seed);

// =============================================================================
// Aleatoric: reconstruction noise + factor-induced variation
// =============================================================================

// Per-node mean over steps of the squared reconstruction residual (N x 1).
ad::Tensor recon_uncertainty(const ad::Tensor& x_h, const ad::Tensor& x_hat);

// Historical observations of region i sharing (day-of-week, slot, weather
// type) with interval t, scanned backward from t, capped at pi_q entries.
std::vector<double> build_variation_set(int region, int t, const data::MaskedSeries& series,
                                        const data::FactorFrame& factors, int pi_q);

// Population standard deviation of the set; 0 for |D| <= 1.
double variation_label(const std::vector<double>& values);

// ReLU(c w_av + b_av) applied row-wise; exposed for head-level tests (the
// model forward inlines the same computation per step).
ad::Var variation_head(ad::Var c_matrix, ad::Var w_av, ad::Var b_av);

// Mean over cells of (y - yhat)^2 / max(u_as + u_av, floor)^2, with u_as
// broadcast across steps. Differentiable w.r.t. predictions and both heads.
ad::Var consistency_loss(ad::Var y_const, ad::Var yhat, ad::Var u_as, ad::Var u_av,
                         double floor = 1e-3);

// =============================================================================
// Report
// =============================================================================

struct UncertaintyReport {
    int t_ref = 0;
    ad::Tensor yhat; // N x h
    ad::Tensor u_e;  // N x h epistemic variance
    ad::Tensor u_as; // N x 1 reconstruction-based aleatoric
    ad::Tensor u_av; // N x h factor-induced aleatoric

    // u_a = u_as (broadcast) + u_av
    ad::Tensor total_aleatoric() const;
    ad::Tensor lower() const; // yhat - u_a
    ad::Tensor upper() const; // yhat + u_a
    nlohmann::json to_json() const;
};

} // namespace fdg2s::uq
