#include "doctest.h"

#include <cmath>
#include <functional>

#include "fdg2s/rng.hpp"
#include "fdg2s/trainer.hpp"
#include "fdg2s/uq.hpp"

using namespace fdg2s;
using namespace fdg2s::ad;
using namespace fdg2s::uq;

namespace {

data::SyntheticData make_data(std::uint64_t seed, int n = 4, int days = 21, int t_d = 12) {
    data::SynthConfig cfg;
    cfg.n_regions = n;
    cfg.days = days;
    cfg.t_d = t_d;
    cfg.weather_probs = {0.5, 0.3, 0.2};
    cfg.weather_multipliers = {1.0, 0.7, 0.9};
    return data::generate_synthetic(cfg, seed);
}

struct SmallSetup {
    data::SyntheticData d;
    graph::AdjacencyBank bank;
    model::ForecastModel m;
    model::TargetContext ctx;
};

SmallSetup make_setup(std::uint64_t seed) {
    SmallSetup s{make_data(seed), {}, {}, {}};
    int h = 3;
    s.bank = graph::build_adjacency_bank(s.d.series, s.d.factors,
                                         train::train_split_end(s.d.series.t_len()), h);
    model::ModelConfig mc;
    mc.n_regions = s.d.series.n_regions();
    mc.horizon = h;
    mc.segment_widths = s.d.factors.segment_widths();
    mc.kernel_dim = 6;
    mc.lstm_hidden = 5;
    mc.norm_mean = s.d.series.observed_mean();
    mc.norm_std = s.d.series.observed_std();
    s.m = model::ForecastModel(mc, seed + 1, &s.d.factors.location_embeddings());
    s.ctx = train::make_target_context(s.d.series, s.d.factors, s.bank,
                                       s.d.series.t_len() - 2 * h, h, 3, false, 4);
    return s;
}

double param_grad_error(const std::function<Var(Tape&, Var)>& build, const Tensor& p0) {
    Tape tape;
    Var pv = tape.leaf(p0, true);
    Var loss = build(tape, pv);
    auto grads = tape.backward(loss);
    const Tensor& analytic = grads.at(pv.id());
    auto f = [&](const Tensor& probe) {
        Tape t2;
        Var v = t2.leaf(probe, true);
        return build(t2, v).value().item();
    };
    return finite_diff_max_rel_error(f, p0, analytic, 1e-5);
}

} // namespace

TEST_CASE("corrupt: determinism, vanishing scale, moment check") {
    Tensor x_p({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor x_h({2, 3}, {6, 5, 4, 3, 2, 1});

    auto a = corrupt(x_p, x_h, 4, 0.05, 2.0, 42);
    auto b = corrupt(x_p, x_h, 4, 0.05, 2.0, 42);
    REQUIRE(a.size() == 4);
    for (std::size_t j = 0; j < a.size(); ++j)
        for (std::size_t k = 0; k < x_p.size(); ++k) {
            CHECK(a[j].x_p.at(k) == b[j].x_p.at(k));
            CHECK(a[j].x_h.at(k) == b[j].x_h.at(k));
        }

    // vanishing scale: corrupted copies equal the original bit-for-bit
    auto tiny = corrupt(x_p, x_h, 3, 1e-300, 2.0, 7);
    for (const auto& pair : tiny)
        for (std::size_t k = 0; k < x_p.size(); ++k) CHECK(pair.x_p.at(k) == x_p.at(k));

    CHECK_THROWS_AS((void)corrupt(x_p, x_h, 3, 0.0, 2.0, 1), Error);
    CHECK_THROWS_AS((void)corrupt(x_p, x_h, 3, -0.1, 2.0, 1), Error);

    // empirical std of the noise within 1% of rho * sigma_train
    double rho = 0.5, sigma = 3.0;
    Tensor big_p({100, 100});
    Tensor big_h({100, 100});
    auto probes = corrupt(big_p, big_h, 10, rho, sigma, 11);
    double sum = 0.0, sq = 0.0;
    std::int64_t count = 0;
    for (const auto& pair : probes)
        for (std::size_t k = 0; k < pair.x_p.size(); ++k) {
            sum += pair.x_p.at(k);
            sq += pair.x_p.at(k) * pair.x_p.at(k);
            ++count;
        }
    double mean = sum / count;
    double std_emp = std::sqrt(sq / count - mean * mean);
    CHECK(std::fabs(std_emp - rho * sigma) / (rho * sigma) < 0.01);
}

TEST_CASE("epistemic: zero for input-blind model, matches manual recomputation") {
    SmallSetup s = make_setup(5);

    SUBCASE("input-blind model has exactly zero epistemic variance") {
        model::ForecastModel blind = s.m;
        for (auto& p : blind.params()) {
            // zero every path from the observation windows into the forecast:
            // LSTM input weights and the GNN message kernels
            if (p.name == "lstm/w_x" || p.name == "omega0" || p.name == "omega1")
                for (std::size_t k = 0; k < p.value.size(); ++k) p.value.at(k) = 0.0;
        }
        Tensor u_e = epistemic(blind, s.ctx, 5, 0.05, 2.0, 3);
        for (std::size_t k = 0; k < u_e.size(); ++k) CHECK(u_e.at(k) == 0.0);
    }

    SUBCASE("matches an independent variance computation over the same draws") {
        int j_probes = 6;
        double rho = 0.02, sigma = s.m.config().norm_std;
        std::uint64_t seed = 17;
        Tensor u_e = epistemic(s.m, s.ctx, j_probes, rho, sigma, seed);

        auto pairs = corrupt(s.ctx.x_p, s.ctx.x_h, j_probes, rho, sigma, seed);
        std::vector<Tensor> outputs;
        for (const auto& pair : pairs) {
            model::TargetContext probe = s.ctx;
            probe.x_p = pair.x_p;
            probe.x_h = pair.x_h;
            Tape tape;
            auto binding = model::bind(tape, s.m, false);
            outputs.push_back(model::forward(tape, binding, probe).yhat.value());
        }
        for (std::size_t k = 0; k < u_e.size(); ++k) {
            double mean = 0.0;
            for (const auto& o : outputs) mean += o.at(k);
            mean /= j_probes;
            double var = 0.0;
            for (const auto& o : outputs) var += (o.at(k) - mean) * (o.at(k) - mean);
            var /= j_probes;
            CHECK(u_e.at(k) == doctest::Approx(var).epsilon(1e-9));
            CHECK(u_e.at(k) >= 0.0);
        }
    }

    SUBCASE("degenerate identical corruptions give zero variance") {
        Tensor u_e = epistemic(s.m, s.ctx, 2, 1e-300, 2.0, 9);
        for (std::size_t k = 0; k < u_e.size(); ++k) CHECK(u_e.at(k) == 0.0);
    }

    SUBCASE("probe leaves parameters untouched and J < 2 is rejected") {
        std::vector<model::NamedTensor> before = s.m.params();
        (void)epistemic(s.m, s.ctx, 4, 0.05, 2.0, 21);
        for (std::size_t p = 0; p < before.size(); ++p)
            for (std::size_t k = 0; k < before[p].value.size(); ++k)
                CHECK(s.m.params()[p].value.at(k) == before[p].value.at(k));
        CHECK_THROWS_AS((void)epistemic(s.m, s.ctx, 1, 0.05, 2.0, 1), Error);
    }
}

TEST_CASE("recon_uncertainty hand cases") {
    Tensor x({1, 2}, {1, 2});
    Tensor zero({1, 2}, {0, 0});
    CHECK(recon_uncertainty(x, x).at(0, 0) == 0.0);
    CHECK(recon_uncertainty(x, zero).at(0, 0) == doctest::Approx(2.5).epsilon(1e-15));
    CHECK_THROWS_AS((void)recon_uncertainty(x, Tensor({1, 3})), Error);
}

TEST_CASE("variation sets match a brute-force construction") {
    auto d = make_data(13, 3, 28, 12);

    // brute force: scan every t_q < t for the (dow, slot, weather) triple
    auto brute = [&](int i, int t) {
        std::vector<double> out;
        int dow = d.factors.day_of_week(t), slot = d.factors.daily_slot(t);
        int w = d.factors.weather_type(i, t);
        for (int t_q = t - 1; t_q >= 0 && static_cast<int>(out.size()) < 4; --t_q) {
            if (t_q >= d.series.t_len() || !d.series.observed(i, t_q)) continue;
            if (d.factors.day_of_week(t_q) != dow || d.factors.daily_slot(t_q) != slot) continue;
            if (d.factors.weather_type(i, t_q) != w) continue;
            out.push_back(d.series.value_at(i, t_q));
        }
        return out;
    };

    Rng rng(3);
    int exact_matches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        int i = rng.uniform_int(0, 2);
        int t = rng.uniform_int(0, d.series.t_len() + d.factors.t_d() - 1); // includes future day
        if (!d.factors.weather_known(i, t)) continue;
        auto got = build_variation_set(i, t, d.series, d.factors, 4);
        auto expect = brute(i, t);
        REQUIRE(got.size() == expect.size());
        CHECK(got.size() <= 4);
        for (std::size_t k = 0; k < got.size(); ++k) REQUIRE(got[k] == expect[k]);
        CHECK(variation_label(got) == doctest::Approx(variation_label(expect)).epsilon(1e-15));
        ++exact_matches;
    }
    CHECK(exact_matches > 900);
}

TEST_CASE("variation set cardinality cases") {
    // masked series: leave exactly two matching observations
    auto d = make_data(19, 1, 28, 12);
    data::MaskedSeries s = d.series;
    int t = 27 * 12 + 5;
    int week = 7 * 12;
    int w_target = d.factors.weather_type(0, t);
    // mask all candidates, then re-observe two
    int re_observed = 0;
    for (int t_q = t - week; t_q >= 0; t_q -= week) {
        if (d.factors.weather_type(0, t_q) == w_target && re_observed < 2) {
            ++re_observed;
            continue;
        }
        s.mask_out(0, t_q);
    }
    if (re_observed == 2) {
        auto got = build_variation_set(0, t, s, d.factors, 4);
        CHECK(got.size() == 2);
    }

    CHECK(variation_label({3, 3, 3}) == 0.0);
    CHECK(variation_label({1, 3}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(variation_label({}) == 0.0);
    CHECK(variation_label({5}) == 0.0);
}

TEST_CASE("variation head: zero map, ReLU clamp, gradient of L_av") {
    Tape tape;
    Var c = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));

    Var zero_head = variation_head(c, tape.constant(Tensor({3, 1})), tape.constant(Tensor({1, 1})));
    for (std::size_t k = 0; k < 2; ++k) CHECK(zero_head.value().at(k) == 0.0);

    Var negative = variation_head(c, tape.constant(Tensor({3, 1}, {-1, -1, -1})),
                                  tape.constant(Tensor({1, 1}, {0.0})));
    for (std::size_t k = 0; k < 2; ++k) CHECK(negative.value().at(k) == 0.0);

    CHECK_THROWS_AS((void)variation_head(c, tape.constant(Tensor({4, 1})),
                                         tape.constant(Tensor({1, 1}))),
                    Error);

    Rng rng(4);
    Tensor cm({3, 4}, {0.5, 1, -2, 0.3, 1.2, -0.7, 0.9, 2, -1, 0.1, 0.8, 1.5});
    Tensor labels({3, 1}, {0.4, 1.1, 0.2});
    Tensor w0({4, 1}, {0.5, -0.2, 0.3, 0.4});
    auto build = [&](Tape& t, Var w) {
        Var head = variation_head(t.constant(cm), w, t.constant(Tensor({1, 1}, {0.1})));
        Var diff = sub(t.constant(labels), head);
        return mean_all(mul(diff, diff));
    };
    CHECK(param_grad_error(build, w0) < 1e-4);
}

TEST_CASE("consistency loss: hand values, floor, monotonicity, gradient") {
    auto eval_cons = [](const Tensor& y, const Tensor& yhat, const Tensor& u_as,
                        const Tensor& u_av) {
        Tape tape;
        return consistency_loss(tape.constant(y), tape.constant(yhat), tape.constant(u_as),
                                tape.constant(u_av))
            .value()
            .item();
    };

    Tensor y({1, 1}, {5.0});
    CHECK(eval_cons(y, y, Tensor({1, 1}, {1.0}), Tensor({1, 1}, {0.5})) == 0.0);

    // residual 1, total width 2 -> 1/4
    CHECK(eval_cons(Tensor({1, 1}, {5.0}), Tensor({1, 1}, {4.0}), Tensor({1, 1}, {1.5}),
                    Tensor({1, 1}, {0.5})) == doctest::Approx(0.25).epsilon(1e-12));

    // zero width hits the 1e-3 floor -> 1e6
    CHECK(eval_cons(Tensor({1, 1}, {5.0}), Tensor({1, 1}, {4.0}), Tensor({1, 1}, {0.0}),
                    Tensor({1, 1}, {0.0})) == doctest::Approx(1e6).epsilon(1e-12));

    // strictly decreasing in the width above the floor
    double prev = 1e18;
    for (double w : {0.01, 0.1, 0.5, 1.0, 3.0}) {
        double v = eval_cons(Tensor({1, 1}, {5.0}), Tensor({1, 1}, {4.0}), Tensor({1, 1}, {w}),
                             Tensor({1, 1}, {0.0}));
        CHECK(v < prev);
        prev = v;
    }

    // gradient flows to predictions and both heads
    Rng rng(6);
    Tensor yv({2, 3}, {5, 6, 7, 8, 9, 10});
    Tensor yh({2, 3}, {4.5, 6.5, 6.8, 8.2, 9.5, 9.0});
    Tensor uas({2, 1}, {0.5, 0.8});
    Tensor uav({2, 3}, {0.2, 0.3, 0.1, 0.4, 0.2, 0.6});
    auto build_yhat = [&](Tape& t, Var p) {
        return consistency_loss(t.constant(yv), p, t.constant(uas), t.constant(uav));
    };
    auto build_uas = [&](Tape& t, Var p) {
        return consistency_loss(t.constant(yv), t.constant(yh), p, t.constant(uav));
    };
    auto build_uav = [&](Tape& t, Var p) {
        return consistency_loss(t.constant(yv), t.constant(yh), t.constant(uas), p);
    };
    CHECK(param_grad_error(build_yhat, yh) < 1e-4);
    CHECK(param_grad_error(build_uas, uas) < 1e-4);
    CHECK(param_grad_error(build_uav, uav) < 1e-4);
}

TEST_CASE("uncertainty report invariants and json") {
    UncertaintyReport r;
    r.t_ref = 100;
    r.yhat = Tensor({2, 2}, {10, 11, 12, 13});
    r.u_e = Tensor({2, 2}, {0.1, 0.2, 0.3, 0.4});
    r.u_as = Tensor({2, 1}, {0.5, 1.0});
    r.u_av = Tensor({2, 2}, {0.1, 0.0, 0.2, 0.3});

    Tensor u_a = r.total_aleatoric();
    CHECK(u_a.at(0, 0) == doctest::Approx(0.6));
    CHECK(u_a.at(1, 1) == doctest::Approx(1.3));
    Tensor lo = r.lower(), hi = r.upper();
    for (std::size_t k = 0; k < lo.size(); ++k) CHECK(hi.at(k) >= lo.at(k));

    auto j = r.to_json();
    CHECK(j["cells"].size() == 4);
    CHECK(j["cells"][0]["y_hat"] == 10.0);
    CHECK(j["cells"][0]["lower"] == doctest::Approx(10 - 0.6));
    CHECK(j["cells"][0]["upper"] == doctest::Approx(10 + 0.6));
}
