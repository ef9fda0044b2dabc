#pragma once

#include <string>
#include <vector>

#include "fdg2s/data.hpp"
#include "fdg2s/tensor.hpp"

namespace fdg2s::sampling {

// Retrieval output: the periodic window X_P ending at k_p and the
// instantaneous-variation proxy window X_H ending at k_h, both fully observed.
struct RetrievedWindows {
    int k_p = 0;
    int k_h = 0;
    ad::Tensor x_p; // N x h, values[:, k_p-h .. k_p)
    ad::Tensor x_h; // N x h, values[:, k_h-h .. k_h)
    int t_ref = 0;
    int horizon = 0;
    int expected_weather = 0; // weather type expected over the target period
};

// Interval-level weather: region 0 is the representative record (weather
// ingestion is city-keyed; per-region records agree on synthetic data).
int interval_weather(const data::FactorFrame& factors, int t);

// Largest k_p with: k_p <= t_ref - 7*T_d, day-of-week and slot equal to those
// at t_ref-1, and [k_p-h, k_p) fully observed. Candidates form the arithmetic
// sequence t_ref-1 - 7*T_d*j, so retrieval is a stride walk.
// Throws SampleNotFound when no candidate window is fully observed.
int sample_periodic(const data::MaskedSeries& series, const data::FactorFrame& factors,
                    int t_ref, int h);

// Largest k_h < t_ref with: day-of-week equal to that at t_ref-1, weather
// equal to the expected weather, circular slot distance to slot(t_ref) < eps,
// and [k_h-h, k_h) fully observed.
int sample_instantaneous(const data::MaskedSeries& series, const data::FactorFrame& factors,
                         int t_ref, int h, int expected_weather, int eps = 3);

// Runs both samplers and extracts the window tensors.
RetrievedWindows retrieve_windows(const data::MaskedSeries& series,
                                  const data::FactorFrame& factors, int t_ref, int h,
                                  int expected_weather, int eps = 3);

struct BatchTarget {
    int t_ref = 0;
    int expected_weather = 0;
};

// One entry per requested target; failures are reported, never dropped.
struct BatchItem {
    bool ok = false;
    RetrievedWindows windows;
    std::string error;
};

std::vector<BatchItem> build_batch(const data::MaskedSeries& series,
                                   const data::FactorFrame& factors,
                                   const std::vector<BatchTarget>& targets, int h, int eps = 3);

} // namespace fdg2s::sampling
