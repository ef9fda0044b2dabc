#include "fdg2s/uq.hpp"

#include <algorithm>
#include <cmath>

#include "fdg2s/rng.hpp"

namespace fdg2s::uq {

using ad::Tape;
using ad::Tensor;
using ad::Var;

// =============================================================================
// Epistemic
// =============================================================================

std::vector<CorruptedPair> corrupt(const Tensor& x_p, const Tensor& x_h, int j_probes,
                                   double rho, double sigma_train, std::uint64_t seed) {
    if (rho <= 0.0) throw Error(ErrorCode::InvalidScale, "corruption scale rho must be > 0");
    if (j_probes < 1) throw Error(ErrorCode::InsufficientSamples, "need at least one corruption");
    double scale = rho * sigma_train;
    Rng rng(seed);
    std::vector<CorruptedPair> out;
    out.reserve(j_probes);
    for (int j = 0; j < j_probes; ++j) {
        CorruptedPair pair{x_p, x_h};
        for (std::size_t k = 0; k < pair.x_p.size(); ++k) pair.x_p.at(k) += scale * rng.gaussian();
        for (std::size_t k = 0; k < pair.x_h.size(); ++k) pair.x_h.at(k) += scale * rng.gaussian();
        out.push_back(std::move(pair));
    }
    return out;
}

Tensor epistemic(const model::ForecastModel& m, const model::TargetContext& ctx, int j_probes,
                 double rho, double sigma_train, std::uint64_t seed) {
    if (j_probes < 2)
        throw Error(ErrorCode::InsufficientSamples, "variance needs at least two probes");
    auto corrupted = corrupt(ctx.x_p, ctx.x_h, j_probes, rho, sigma_train, seed);

    Tensor sum, sum_sq;
    for (const auto& pair : corrupted) {
        model::TargetContext probe = ctx;
        probe.x_p = pair.x_p;
        probe.x_h = pair.x_h;
        Tape tape;
        model::ModelBinding binding = model::bind(tape, m, /*trainable=*/false);
        Tensor yhat = model::forward(tape, binding, probe).yhat.value();
        if (sum.size() == 0) {
            sum = Tensor(yhat.shape());
            sum_sq = Tensor(yhat.shape());
        }
        for (std::size_t k = 0; k < yhat.size(); ++k) {
            sum.at(k) += yhat.at(k);
            sum_sq.at(k) += yhat.at(k) * yhat.at(k);
        }
    }

    double inv = 1.0 / static_cast<double>(j_probes);
    Tensor var(sum.shape());
    for (std::size_t k = 0; k < var.size(); ++k) {
        double mean = sum.at(k) * inv;
        var.at(k) = std::max(0.0, sum_sq.at(k) * inv - mean * mean);
    }
    return var;
}

// =============================================================================
// Aleatoric
// =============================================================================

Tensor recon_uncertainty(const Tensor& x_h, const Tensor& x_hat) {
    if (!x_h.same_shape(x_hat))
        throw Error(ErrorCode::ShapeMismatch, "reconstruction shape differs from input");
    std::size_t n = x_h.rows(), h = x_h.cols();
    Tensor out({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            double r = x_h.at(i, j) - x_hat.at(i, j);
            s += r * r;
        }
        out.at(i, 0) = s / static_cast<double>(h);
    }
    return out;
}

std::vector<double> build_variation_set(int region, int t, const data::MaskedSeries& series,
                                        const data::FactorFrame& factors, int pi_q) {
    if (pi_q < 0) throw Error(ErrorCode::InvalidConfig, "pi_q must be non-negative");
    int target_weather = factors.weather_type(region, t);
    int week = 7 * factors.t_d();
    std::vector<double> out;
    // day-of-week and slot repeat jointly every 7*T_d intervals, so matching
    // candidates form a backward weekly stride from t.
    for (int t_q = t - week; t_q >= 0 && static_cast<int>(out.size()) < pi_q; t_q -= week) {
        if (t_q >= series.t_len()) continue;
        if (!series.observed(region, t_q)) continue;
        if (!factors.weather_known(region, t_q)) continue;
        if (factors.weather_type(region, t_q) != target_weather) continue;
        out.push_back(series.value_at(region, t_q));
    }
    return out;
}

double variation_label(const std::vector<double>& values) {
    if (values.size() <= 1) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(values.size()));
}

Var variation_head(Var c_matrix, Var w_av, Var b_av) {
    if (c_matrix.value().cols() != w_av.value().rows())
        throw Error(ErrorCode::WidthMismatch,
                    "variation head width " + std::to_string(w_av.value().rows()) +
                        " vs factor width " + std::to_string(c_matrix.value().cols()));
    Tape& tape = *c_matrix.tape();
    Var ones = tape.constant(Tensor::ones({c_matrix.value().rows(), 1}));
    return ad::relu(ad::add(ad::matmul(c_matrix, w_av), ad::matmul(ones, b_av)));
}

Var consistency_loss(Var y_const, Var yhat, Var u_as, Var u_av, double floor) {
    std::size_t n = yhat.value().rows(), h = yhat.value().cols();
    if (u_as.value().rows() != n || u_as.value().cols() != 1 || u_av.value().rows() != n ||
        u_av.value().cols() != h)
        throw Error(ErrorCode::ShapeMismatch, "uncertainty head shapes");
    Tape& tape = *yhat.tape();
    Var u_total = ad::add(ad::matmul(u_as, tape.constant(Tensor::ones({1, h}))), u_av);
    // max(u, floor) = relu(u - floor) + floor
    Var floored = ad::add_scalar(ad::relu(ad::add_scalar(u_total, -floor)), floor);
    Var resid = ad::sub(y_const, yhat);
    return ad::mean_all(ad::div(ad::mul(resid, resid), ad::mul(floored, floored)));
}

// =============================================================================
// Report
// =============================================================================

Tensor UncertaintyReport::total_aleatoric() const {
    Tensor out = u_av;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += u_as.at(i, 0);
    return out;
}

Tensor UncertaintyReport::lower() const {
    Tensor u_a = total_aleatoric();
    Tensor out = yhat;
    for (std::size_t k = 0; k < out.size(); ++k) out.at(k) -= u_a.at(k);
    return out;
}

Tensor UncertaintyReport::upper() const {
    Tensor u_a = total_aleatoric();
    Tensor out = yhat;
    for (std::size_t k = 0; k < out.size(); ++k) out.at(k) += u_a.at(k);
    return out;
}

nlohmann::json UncertaintyReport::to_json() const {
    nlohmann::json cells = nlohmann::json::array();
    Tensor u_a = total_aleatoric();
    for (std::size_t i = 0; i < yhat.rows(); ++i)
        for (std::size_t j = 0; j < yhat.cols(); ++j) {
            nlohmann::json cell;
            cell["region"] = i;
            cell["step"] = j;
            cell["y_hat"] = yhat.at(i, j);
            cell["u_e"] = u_e.at(i, j);
            cell["u_as"] = u_as.at(i, 0);
            cell["u_av"] = u_av.at(i, j);
            cell["lower"] = yhat.at(i, j) - u_a.at(i, j);
            cell["upper"] = yhat.at(i, j) + u_a.at(i, j);
            cells.push_back(std::move(cell));
        }
    nlohmann::json j;
    j["t_ref"] = t_ref;
    j["cells"] = std::move(cells);
    return j;
}

} // namespace fdg2s::uq
