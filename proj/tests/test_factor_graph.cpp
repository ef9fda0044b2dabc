#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>

#include "fdg2s/factor_graph.hpp"
#include "fdg2s/rng.hpp"

using namespace fdg2s;
using namespace fdg2s::ad;
using namespace fdg2s::graph;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t k = 0; k < t.size(); ++k) t.at(k) = rng.uniform(lo, hi);
    return t;
}

// symmetric, unit-diagonal matrix with entries in (0, 1]
Tensor random_bank_matrix(Rng& rng, std::size_t n) {
    Tensor m({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        m.at(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = rng.uniform(0.05, 1.0);
            m.at(i, j) = v;
            m.at(j, i) = v;
        }
    }
    return m;
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

data::SyntheticData small_synth(std::uint64_t seed, int n = 4, int days = 6, int t_d = 4) {
    data::SynthConfig cfg;
    cfg.n_regions = n;
    cfg.days = days;
    cfg.t_d = t_d;
    cfg.weather_probs = {0.6, 0.4};
    cfg.weather_multipliers = {1.0, 0.7};
    return data::generate_synthetic(cfg, seed);
}

} // namespace

TEST_CASE("pairwise similarity formula") {
    CHECK(pairwise_similarity({1, 2}, {1, 2}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pairwise_similarity({1, 0}, {-1, 0}) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(pairwise_similarity({0, 0}, {0, 0}) == doctest::Approx(1.0).epsilon(1e-15));
    // exactly one zero vector: cosine term contributes 0.5 * 0.5
    CHECK(pairwise_similarity({0, 0}, {3, 4}) ==
          doctest::Approx(0.5 / 6.0 + 0.25).epsilon(1e-12));
    CHECK_THROWS_AS((void)pairwise_similarity({1}, {1, 2}), Error);
}

TEST_CASE("bank matrices: invariants and averaging oracle") {
    auto d = small_synth(31);
    int train_end = d.series.t_len() - 4;
    BankCaps caps;
    AdjacencyBank bank = build_adjacency_bank(d.series, d.factors, train_end, 2, caps);

    int n = d.series.n_regions();
    // brute-force rebuild of every entry
    for (int factor = 0; factor < bank.num_factors(); ++factor) {
        std::map<int, std::vector<int>> by_value;
        for (int t = 2; t <= train_end; ++t) {
            if (!d.series.window_observed(t - 2, t)) continue;
            int value = 0;
            switch (factor) {
                case 0: value = d.factors.day_of_week(t); break;
                case 1: value = d.factors.daily_slot(t); break;
                case 2: value = d.factors.weather_type(0, t); break;
                case 3: value = bank.numeric_bin(d.factors.numeric_summary(0, t)); break;
                default: value = 0;
            }
            by_value[value].push_back(t);
        }
        for (const auto& [value, stamps] : by_value) {
            REQUIRE(bank.has(factor, value));
            const Tensor& mat = bank.matrix(factor, value);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    double expect = 0.0;
                    for (int t : stamps) {
                        std::vector<double> wi(2), wj(2);
                        for (int s = 0; s < 2; ++s) {
                            wi[s] = d.series.value_at(i, t - 2 + s);
                            wj[s] = d.series.value_at(j, t - 2 + s);
                        }
                        expect += pairwise_similarity(wi, wj);
                    }
                    expect /= static_cast<double>(stamps.size());
                    CHECK(mat.at(i, j) == doctest::Approx(expect).epsilon(1e-12));
                    // invariants: symmetric, unit diagonal, [0, 1]
                    CHECK(mat.at(i, j) == mat.at(j, i));
                    CHECK(mat.at(i, j) >= 0.0);
                    CHECK(mat.at(i, j) <= 1.0 + 1e-15);
                }
            for (int i = 0; i < n; ++i) CHECK(mat.at(i, i) == doctest::Approx(1.0).epsilon(1e-15));
        }
    }

    // a value never seen -> MissingBankEntry
    CHECK(!bank.has(2, 99));
    CHECK_THROWS_AS((void)bank.matrix(2, 99), Error);
}

TEST_CASE("bank with identical region series is all ones") {
    data::MaskedSeries s(3, 8, 360, 0);
    for (int t = 0; t < 8; ++t)
        for (int i = 0; i < 3; ++i) s.set_value(i, t, 1.0 + t);
    data::FactorFrame f(3, 12, 4, 0, 0, 2, 2, 4, 5);
    for (int t = 0; t < 12; ++t) f.set_weather_all_regions(t, 0, {10, 0});
    f.fit_numeric_stats(8);

    AdjacencyBank bank = build_adjacency_bank(s, f, 8, 2);
    const Tensor& m = bank.matrix(0, 0);
    for (std::size_t k = 0; k < m.size(); ++k) CHECK(m.at(k) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("bank subsampling cap and serialization round trip") {
    auto d = small_synth(7, 3, 20, 4);
    BankCaps caps;
    caps.max_windows_per_value = 4;
    caps.subsample_seed = 9;
    AdjacencyBank bank = build_adjacency_bank(d.series, d.factors, d.series.t_len() - 4, 2, caps);
    AdjacencyBank again = build_adjacency_bank(d.series, d.factors, d.series.t_len() - 4, 2, caps);
    // deterministic under the same seed
    const Tensor& a = bank.matrix(0, 0);
    const Tensor& b = again.matrix(0, 0);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a.at(k) == b.at(k));

    std::filesystem::create_directories("data_test_tmp");
    bank.save("data_test_tmp/bank.bin");
    AdjacencyBank loaded = AdjacencyBank::load("data_test_tmp/bank.bin");
    CHECK(loaded.source_hash() == bank.source_hash());
    CHECK(loaded.entry_count() == bank.entry_count());
    CHECK(loaded.horizon() == bank.horizon());
    const Tensor& c = loaded.matrix(0, 0);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(c.at(k) == a.at(k));
    CHECK(dataset_hash(d.series) == bank.source_hash());
}

TEST_CASE("interaction adjacency is the entrywise product") {
    Rng rng(4);
    Tensor a = random_bank_matrix(rng, 3);
    Tensor b = random_bank_matrix(rng, 3);
    Tensor c = random_bank_matrix(rng, 3);

    Tensor single = interaction_adjacency({&a});
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(single.at(k) == a.at(k));

    Tensor triple = interaction_adjacency({&a, &b, &c});
    for (std::size_t k = 0; k < a.size(); ++k)
        CHECK(triple.at(k) == doctest::Approx(a.at(k) * b.at(k) * c.at(k)).epsilon(1e-15));

    Tensor zeroed = a;
    zeroed.at(0, 1) = 0.0;
    Tensor prod = interaction_adjacency({&zeroed, &b});
    CHECK(prod.at(0, 1) == 0.0);
}

TEST_CASE("aggregation weights: softmax over S_k^T c_k") {
    SUBCASE("zero parameters give the uniform simplex point") {
        Tape tape;
        std::vector<Var> segs = {tape.constant(Tensor({1, 3}, {1, 2, 3})),
                                 tape.constant(Tensor({1, 2}, {4, 5})),
                                 tape.constant(Tensor({1, 5}, {1, 2, 3, 4, 5}))};
        std::vector<Var> params = {tape.constant(Tensor({3, 1})), tape.constant(Tensor({2, 1})),
                                   tape.constant(Tensor({5, 1}))};
        Var g = aggregation_weights(segs, params);
        double sum = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(g.value().at(k) == doctest::Approx(1.0 / 3).epsilon(1e-12));
            sum += g.value().at(k);
        }
        CHECK(std::fabs(sum - 1.0) < 1e-9);
    }

    SUBCASE("hand logits [ln 2, 0] give [2/3, 1/3]") {
        Tape tape;
        std::vector<Var> segs = {tape.constant(Tensor({1, 1}, {1.0})),
                                 tape.constant(Tensor({1, 1}, {1.0}))};
        std::vector<Var> params = {tape.constant(Tensor({1, 1}, {std::log(2.0)})),
                                   tape.constant(Tensor({1, 1}, {0.0}))};
        Var g = aggregation_weights(segs, params);
        CHECK(g.value().at(0) == doctest::Approx(2.0 / 3).epsilon(1e-12));
        CHECK(g.value().at(1) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }

    SUBCASE("argmax invariant under shared logit shift, 100 random sets") {
        for (std::uint64_t trial = 0; trial < 100; ++trial) {
            Rng rng(trial + 5);
            int m = rng.uniform_int(2, 6);
            double shift = rng.uniform(-7.0, 7.0);
            std::vector<double> logits(m);
            for (auto& v : logits) v = rng.uniform(-3.0, 3.0);

            auto eval = [&](double offset) {
                Tape tape;
                std::vector<Var> segs, params;
                for (int k = 0; k < m; ++k) {
                    segs.push_back(tape.constant(Tensor({1, 1}, {1.0})));
                    params.push_back(tape.constant(Tensor({1, 1}, {logits[k] + offset})));
                }
                Var g = aggregation_weights(segs, params);
                double sum = 0.0;
                std::size_t argmax = 0;
                for (int k = 0; k < m; ++k) {
                    sum += g.value().at(k);
                    if (g.value().at(k) > g.value().at(argmax)) argmax = k;
                }
                REQUIRE(std::fabs(sum - 1.0) < 1e-9);
                return argmax;
            };
            CHECK(eval(0.0) == eval(shift));
        }
    }

    SUBCASE("segment width mismatch is rejected") {
        Tape tape;
        std::vector<Var> segs = {tape.constant(Tensor({1, 3}, {1, 2, 3}))};
        std::vector<Var> params = {tape.constant(Tensor({2, 1}, {1, 2}))};
        CHECK_THROWS_AS((void)aggregation_weights(segs, params), Error);
    }
}

TEST_CASE("combine adjacency: simplex collapse, hand case, brute force, row sums") {
    SUBCASE("M=1 pre-normalization equals the single matrix") {
        Rng rng(6);
        Tensor a = random_bank_matrix(rng, 4);
        Tape tape;
        Var g = tape.constant(Tensor({1, 2}, {0.37, 0.63}));
        Var pre = combine_adjacency_prenorm(tape, {&a}, g);
        for (std::size_t k = 0; k < a.size(); ++k)
            CHECK(std::fabs(pre.value().at(k) - a.at(k)) < 1e-12);
    }

    SUBCASE("M=2 hand-computed blend") {
        Tensor a({2, 2}, {1, 0.5, 0.5, 1});
        Tensor b({2, 2}, {1, 0, 0, 1});
        Tape tape;
        Var g = tape.constant(Tensor({1, 3}, {0.5, 0.25, 0.25}));
        Var pre = combine_adjacency_prenorm(tape, {&a, &b}, g);
        // .5A + .25B + .25(A.B)
        CHECK(pre.value().at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(pre.value().at(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(pre.value().at(1, 0) == doctest::Approx(0.25).epsilon(1e-12));
    }

    SUBCASE("M=3 on 5x5 equals entrywise brute force; rows sum to 1") {
        Rng rng(8);
        Tensor a = random_bank_matrix(rng, 5);
        Tensor b = random_bank_matrix(rng, 5);
        Tensor c = random_bank_matrix(rng, 5);
        double l0 = rng.uniform(), l1 = rng.uniform(), l2 = rng.uniform(), l3 = rng.uniform();
        double z = std::exp(l0) + std::exp(l1) + std::exp(l2) + std::exp(l3);
        Tensor gv({1, 4}, {std::exp(l0) / z, std::exp(l1) / z, std::exp(l2) / z, std::exp(l3) / z});

        Tape tape;
        Var g = tape.constant(gv);
        Var pre = combine_adjacency_prenorm(tape, {&a, &b, &c}, g);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                double expect = gv.at(0, 0) * a.at(i, j) + gv.at(0, 1) * b.at(i, j) +
                                gv.at(0, 2) * c.at(i, j) +
                                gv.at(0, 3) * a.at(i, j) * b.at(i, j) * c.at(i, j);
                CHECK(std::fabs(pre.value().at(i, j) - expect) < 1e-12);
            }

        Var norm = row_normalize(pre);
        for (std::size_t i = 0; i < 5; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 5; ++j) sum += norm.value().at(i, j);
            CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("status network forward and gradients") {
    SUBCASE("zero weights give the zero map") {
        Tape tape;
        StatusNetParams p{tape.constant(Tensor({3, 4})), tape.constant(Tensor({1, 4})),
                          tape.constant(Tensor({4, 2})), tape.constant(Tensor({1, 2}))};
        Var c = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
        Var out = status_network(c, p);
        for (std::size_t k = 0; k < out.value().size(); ++k) CHECK(out.value().at(k) == 0.0);
    }

    SUBCASE("identity-like chain matches hand computation") {
        Tape tape;
        StatusNetParams p{tape.constant(Tensor::eye(2)),
                          tape.constant(Tensor({1, 2}, {0.5, -3.0})),
                          tape.constant(Tensor({2, 1}, {2.0, 1.0})),
                          tape.constant(Tensor({1, 1}, {0.25}))};
        Var c = tape.constant(Tensor({1, 2}, {1.0, 2.0}));
        Var out = status_network(c, p);
        // relu([1+.5, 2-3]) = [1.5, 0]; [1.5,0]*[2;1] + .25 = 3.25
        CHECK(out.value().item() == doctest::Approx(3.25).epsilon(1e-15));
    }

    SUBCASE("gradient w.r.t. every parameter block") {
        Rng rng(9);
        Tensor c = random_tensor(rng, {3, 4});
        Tensor w1 = random_tensor(rng, {4, 5});
        Tensor b1 = random_tensor(rng, {1, 5});
        Tensor w2 = random_tensor(rng, {5, 2});
        Tensor b2 = random_tensor(rng, {1, 2});
        Tensor blend = random_tensor(rng, {3, 2});

        auto build_with = [&](int which) {
            return [&, which](Tape& t, Var pv) {
                StatusNetParams p{which == 0 ? pv : t.constant(w1),
                                  which == 1 ? pv : t.constant(b1),
                                  which == 2 ? pv : t.constant(w2),
                                  which == 3 ? pv : t.constant(b2)};
                return sum_all(mul(status_network(t.constant(c), p), t.constant(blend)));
            };
        };
        CHECK(param_grad_error(build_with(0), w1) < 1e-4);
        CHECK(param_grad_error(build_with(1), b1) < 1e-4);
        CHECK(param_grad_error(build_with(2), w2) < 1e-4);
        CHECK(param_grad_error(build_with(3), b2) < 1e-4);
    }

    SUBCASE("width mismatch is rejected") {
        Tape tape;
        StatusNetParams p{tape.constant(Tensor({3, 4})), tape.constant(Tensor({1, 4})),
                          tape.constant(Tensor({4, 2})), tape.constant(Tensor({1, 2}))};
        Var c = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
        CHECK_THROWS_AS((void)status_network(c, p), Error);
    }
}

namespace {

// independent dense evaluation of the two-layer propagation formula
Tensor gnn_reference(const Tensor& x, const Tensor& adj, const Tensor& c, const Tensor& w1a,
                     const Tensor& b1a, const Tensor& w2a, const Tensor& b2a, const Tensor& w1b,
                     const Tensor& b1b, const Tensor& w2b, const Tensor& b2b, const Tensor& om0,
                     const Tensor& om1, double alpha) {
    auto matmul_ref = [](const Tensor& A, const Tensor& B) {
        Tensor out({A.rows(), B.cols()});
        for (std::size_t i = 0; i < A.rows(); ++i)
            for (std::size_t j = 0; j < B.cols(); ++j) {
                double s = 0;
                for (std::size_t p = 0; p < A.cols(); ++p) s += A.at(i, p) * B.at(p, j);
                out.at(i, j) = s;
            }
        return out;
    };
    auto status = [&](const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
        Tensor hidden = matmul_ref(c, w1);
        for (std::size_t i = 0; i < hidden.rows(); ++i)
            for (std::size_t j = 0; j < hidden.cols(); ++j)
                hidden.at(i, j) = std::max(0.0, hidden.at(i, j) + b1.at(0, j));
        Tensor out = matmul_ref(hidden, w2);
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += b2.at(0, j);
        return out;
    };
    Tensor b0 = status(w1a, b1a, w2a, b2a);
    Tensor msg0 = matmul_ref(matmul_ref(adj, x), om0);
    Tensor h1({b0.rows(), b0.cols()});
    for (std::size_t k = 0; k < h1.size(); ++k)
        h1.at(k) = std::max(0.0, alpha * b0.at(k) + (1 - alpha) * msg0.at(k));
    Tensor b1 = status(w1b, b1b, w2b, b2b);
    Tensor msg1 = matmul_ref(matmul_ref(adj, h1), om1);
    Tensor h2({b1.rows(), b1.cols()});
    for (std::size_t k = 0; k < h2.size(); ++k)
        h2.at(k) = alpha * b1.at(k) + (1 - alpha) * msg1.at(k);
    return h2;
}

} // namespace

TEST_CASE("gnn forward: blend endpoints, dense oracle, equivariance") {
    Rng rng(10);
    std::size_t n = 5, h = 3, kernel = 4, d_c = 6;
    Tensor x = random_tensor(rng, {n, h}, 0.1, 2.0);
    Tensor adj = random_bank_matrix(rng, n);
    Tensor c = random_tensor(rng, {n, d_c});
    Tensor w1a = random_tensor(rng, {d_c, kernel}), b1a = random_tensor(rng, {1, kernel});
    Tensor w2a = random_tensor(rng, {kernel, kernel}), b2a = random_tensor(rng, {1, kernel});
    Tensor w1b = random_tensor(rng, {d_c, kernel}), b1b = random_tensor(rng, {1, kernel});
    Tensor w2b = random_tensor(rng, {kernel, h}), b2b = random_tensor(rng, {1, h});
    Tensor om0 = random_tensor(rng, {h, kernel}), om1 = random_tensor(rng, {kernel, h});

    auto run = [&](double alpha, const Tensor& xv, const Tensor& adjv, const Tensor& cv) {
        Tape tape;
        GnnParams p{{tape.constant(w1a), tape.constant(b1a), tape.constant(w2a), tape.constant(b2a)},
                    {tape.constant(w1b), tape.constant(b1b), tape.constant(w2b), tape.constant(b2b)},
                    tape.constant(om0),
                    tape.constant(om1),
                    alpha};
        return gnn_forward(tape.constant(xv), tape.constant(adjv), tape.constant(cv), p).value();
    };

    SUBCASE("matches the independent dense reference") {
        Tensor got = run(0.5, x, adj, c);
        Tensor expect = gnn_reference(x, adj, c, w1a, b1a, w2a, b2a, w1b, b1b, w2b, b2b, om0, om1, 0.5);
        REQUIRE(got.same_shape(expect));
        for (std::size_t k = 0; k < got.size(); ++k)
            CHECK(got.at(k) == doctest::Approx(expect.at(k)).epsilon(1e-12));
    }

    SUBCASE("alpha=1 ignores the graph entirely") {
        Tensor got = run(1.0, x, adj, c);
        Tensor other_graph = run(1.0, random_tensor(rng, {n, h}), random_bank_matrix(rng, n), c);
        for (std::size_t k = 0; k < got.size(); ++k) CHECK(got.at(k) == other_graph.at(k));
    }

    SUBCASE("alpha=0 with identity adjacency and identity kernels is a pass-through") {
        std::size_t hs = 3; // square config: h == kernel
        Tensor xs = random_tensor(rng, {n, hs}, 0.1, 2.0); // nonnegative, ReLU transparent
        Tape tape;
        GnnParams p{{tape.constant(Tensor({d_c, hs})), tape.constant(Tensor({1, hs})),
                     tape.constant(Tensor({hs, hs})), tape.constant(Tensor({1, hs}))},
                    {tape.constant(Tensor({d_c, hs})), tape.constant(Tensor({1, hs})),
                     tape.constant(Tensor({hs, hs})), tape.constant(Tensor({1, hs}))},
                    tape.constant(Tensor::eye(hs)),
                    tape.constant(Tensor::eye(hs)),
                    0.0};
        Var out = gnn_forward(tape.constant(xs), tape.constant(Tensor::eye(n)),
                              tape.constant(Tensor({n, d_c})), p);
        for (std::size_t k = 0; k < xs.size(); ++k)
            CHECK(out.value().at(k) == doctest::Approx(xs.at(k)).epsilon(1e-15));
    }

    SUBCASE("node permutation equivariance") {
        std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
        Tensor xp({n, h}), cp({n, d_c}), adjp({n, n});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < h; ++j) xp.at(i, j) = x.at(perm[i], j);
            for (std::size_t j = 0; j < d_c; ++j) cp.at(i, j) = c.at(perm[i], j);
            for (std::size_t j = 0; j < n; ++j) adjp.at(i, j) = adj.at(perm[i], perm[j]);
        }
        Tensor base = run(0.5, x, adj, c);
        Tensor permuted = run(0.5, xp, adjp, cp);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < h; ++j)
                CHECK(permuted.at(i, j) == doctest::Approx(base.at(perm[i], j)).epsilon(1e-12));
    }

    SUBCASE("full-chain gradient through adjacency combination and GNN") {
        // 4-node instance: g -> combined adjacency -> 2 GNN layers
        std::size_t n4 = 4;
        Rng r2(11);
        Tensor ma = random_bank_matrix(r2, n4);
        Tensor mb = random_bank_matrix(r2, n4);
        Tensor mc = random_bank_matrix(r2, n4);
        Tensor x4 = random_tensor(r2, {n4, h}, 0.1, 1.5);
        Tensor c4 = random_tensor(r2, {n4, d_c});
        Tensor s_all = random_tensor(r2, {d_c, 1});

        Tensor s1 = random_tensor(r2, {2, 1});
        Tensor s2 = random_tensor(r2, {2, 1});
        Tensor s3 = random_tensor(r2, {2, 1});
        Tensor s4 = random_tensor(r2, {6, 1});
        auto build_fixed = [&](Tape& t, Var s_var) {
            std::vector<Var> segs;
            segs.push_back(t.constant(Tensor({1, 2}, {c4.at(0, 0), c4.at(0, 1)})));
            segs.push_back(t.constant(Tensor({1, 2}, {c4.at(0, 2), c4.at(0, 3)})));
            segs.push_back(t.constant(Tensor({1, 2}, {c4.at(0, 4), c4.at(0, 5)})));
            Var full = concat(concat(segs[0], segs[1], 1), segs[2], 1);
            std::vector<Var> all_segs = {segs[0], segs[1], segs[2], full};
            std::vector<Var> params = {t.constant(s1), t.constant(s2), t.constant(s3), s_var};
            Var g = aggregation_weights(all_segs, params);
            Var adj_c = combine_adjacency(t, {&ma, &mb, &mc}, g);
            GnnParams p{{t.constant(w1a), t.constant(b1a), t.constant(w2a), t.constant(b2a)},
                        {t.constant(w1b), t.constant(b1b), t.constant(w2b), t.constant(b2b)},
                        t.constant(om0),
                        t.constant(om1),
                        0.5};
            return sum_all(gnn_forward(t.constant(x4), adj_c, t.constant(c4), p));
        };
        CHECK(param_grad_error(build_fixed, s4) < 1e-4);
    }
}
