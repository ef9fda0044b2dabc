#include "fdg2s/sampler.hpp"

#include <cmath>

namespace fdg2s::sampling {

namespace {

int circular_slot_distance(int a, int b, int t_d) {
    int d = std::abs(a - b) % t_d;
    return std::min(d, t_d - d);
}

ad::Tensor extract_window(const data::MaskedSeries& series, int k_end, int h) {
    ad::Tensor out({static_cast<std::size_t>(series.n_regions()), static_cast<std::size_t>(h)});
    for (int i = 0; i < series.n_regions(); ++i)
        for (int s = 0; s < h; ++s)
            out.at(static_cast<std::size_t>(i), static_cast<std::size_t>(s)) =
                series.value_at(i, k_end - h + s);
    return out;
}

} // namespace

int interval_weather(const data::FactorFrame& factors, int t) {
    return factors.weather_type(0, t);
}

int sample_periodic(const data::MaskedSeries& series, const data::FactorFrame& factors,
                    int t_ref, int h) {
    int t_d = series.intervals_per_day();
    (void)factors; // calendar regularity makes the dow/slot constraints implicit in the stride
    for (int k = t_ref - 1 - 7 * t_d; k - h >= 0; k -= 7 * t_d) {
        if (series.window_observed(k - h, k)) return k;
    }
    throw Error(ErrorCode::SampleNotFound,
                "no fully observed periodic window before t_ref=" + std::to_string(t_ref));
}

int sample_instantaneous(const data::MaskedSeries& series, const data::FactorFrame& factors,
                         int t_ref, int h, int expected_weather, int eps) {
    if (eps < 1) throw Error(ErrorCode::InvalidConfig, "slot tolerance eps must be >= 1");
    int t_d = series.intervals_per_day();
    int dow_ref = factors.day_of_week(t_ref - 1);
    int slot_target = factors.daily_slot(t_ref);
    int upper = std::min(t_ref - 1, series.t_len());
    for (int k = upper; k - h >= 0; --k) {
        if (factors.day_of_week(k) != dow_ref) continue;
        if (circular_slot_distance(factors.daily_slot(k), slot_target, t_d) >= eps) continue;
        if (interval_weather(factors, k) != expected_weather) continue;
        if (!series.window_observed(k - h, k)) continue;
        return k;
    }
    throw Error(ErrorCode::SampleNotFound,
                "no instantaneous window matching weather " + std::to_string(expected_weather) +
                    " before t_ref=" + std::to_string(t_ref));
}

RetrievedWindows retrieve_windows(const data::MaskedSeries& series,
                                  const data::FactorFrame& factors, int t_ref, int h,
                                  int expected_weather, int eps) {
    RetrievedWindows out;
    out.t_ref = t_ref;
    out.horizon = h;
    out.expected_weather = expected_weather;
    out.k_p = sample_periodic(series, factors, t_ref, h);
    out.k_h = sample_instantaneous(series, factors, t_ref, h, expected_weather, eps);
    out.x_p = extract_window(series, out.k_p, h);
    out.x_h = extract_window(series, out.k_h, h);
    return out;
}

std::vector<BatchItem> build_batch(const data::MaskedSeries& series,
                                   const data::FactorFrame& factors,
                                   const std::vector<BatchTarget>& targets, int h, int eps) {
    std::vector<BatchItem> out;
    out.reserve(targets.size());
    for (const auto& target : targets) {
        BatchItem item;
        try {
            item.windows = retrieve_windows(series, factors, target.t_ref, h,
                                            target.expected_weather, eps);
            item.ok = true;
        } catch (const Error& e) {
            item.ok = false;
            item.error = e.what();
        }
        out.push_back(std::move(item));
    }
    return out;
}

} // namespace fdg2s::sampling
