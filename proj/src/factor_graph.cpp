#include "fdg2s/factor_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fdg2s/rng.hpp"
#include "fdg2s/sampler.hpp"

namespace fdg2s::graph {

using ad::Tape;
using ad::Tensor;
using ad::Var;

// =============================================================================
// Similarity
// =============================================================================

double pairwise_similarity(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size())
        throw Error(ErrorCode::LengthMismatch,
                    std::to_string(p.size()) + " vs " + std::to_string(q.size()));
    double dist2 = 0.0, dot = 0.0, np = 0.0, nq = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        double d = p[k] - q[k];
        dist2 += d * d;
        dot += p[k] * q[k];
        np += p[k] * p[k];
        nq += q[k] * q[k];
    }
    double cosine;
    if (np == 0.0 && nq == 0.0)
        cosine = 1.0;
    else if (np == 0.0 || nq == 0.0)
        cosine = 0.0;
    else
        cosine = dot / (std::sqrt(np) * std::sqrt(nq));
    return 0.5 * (1.0 / (1.0 + std::sqrt(dist2))) + 0.5 * ((cosine + 1.0) / 2.0);
}

// =============================================================================
// AdjacencyBank
// =============================================================================

std::uint64_t dataset_hash(const data::MaskedSeries& series) {
    std::uint64_t hash = 1469598103934665603ULL;
    auto mix = [&hash](const void* bytes, std::size_t len) {
        const unsigned char* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t k = 0; k < len; ++k) {
            hash ^= p[k];
            hash *= 1099511628211ULL;
        }
    };
    int dims[2] = {series.n_regions(), series.t_len()};
    mix(dims, sizeof(dims));
    for (int i = 0; i < series.n_regions(); ++i)
        for (int t = 0; t < series.t_len(); ++t) {
            unsigned char obs = series.observed(i, t) ? 1 : 0;
            mix(&obs, 1);
            if (obs) {
                double v = series.value_at(i, t);
                mix(&v, sizeof(v));
            }
        }
    return hash;
}

bool AdjacencyBank::has(int factor, int value) const {
    return entries_.count({factor, value}) > 0;
}

const Tensor& AdjacencyBank::matrix(int factor, int value) const {
    auto it = entries_.find({factor, value});
    if (it == entries_.end())
        throw Error(ErrorCode::MissingBankEntry,
                    "factor " + std::to_string(factor) + " value " + std::to_string(value));
    return it->second;
}

int AdjacencyBank::numeric_bin(double summary) const {
    int bin = 0;
    for (double edge : bin_edges_)
        if (summary >= edge) ++bin;
    return bin;
}

std::vector<int> AdjacencyBank::target_values(const data::FactorFrame& factors, int t_ref) const {
    return {factors.day_of_week(t_ref), factors.daily_slot(t_ref),
            sampling::interval_weather(factors, t_ref),
            numeric_bin(factors.numeric_summary(0, t_ref)), 0};
}

std::vector<const Tensor*> AdjacencyBank::select(const std::vector<int>& values) const {
    if (static_cast<int>(values.size()) != num_factors_)
        throw Error(ErrorCode::ShapeMismatch, "expected one value per factor type");
    std::vector<const Tensor*> out;
    out.reserve(values.size());
    for (int k = 0; k < num_factors_; ++k) out.push_back(&matrix(k, values[k]));
    return out;
}

AdjacencyBank build_adjacency_bank(const data::MaskedSeries& series,
                                   const data::FactorFrame& factors, int train_end, int h,
                                   const BankCaps& caps) {
    if (h <= 0 || train_end <= h || train_end > series.t_len())
        throw Error(ErrorCode::InvalidConfig, "bank build range invalid");

    AdjacencyBank bank;
    bank.n_ = series.n_regions();
    bank.h_ = h;
    bank.num_factors_ = data::FactorFrame::kNumFactorTypes;
    bank.dataset_hash_ = dataset_hash(series);
    bank.caps_ = caps;

    // Timestamps whose trailing h-window is fully observed.
    std::vector<int> candidates;
    for (int t = h; t <= train_end; ++t)
        if (series.window_observed(t - h, t)) candidates.push_back(t);
    if (candidates.empty())
        throw Error(ErrorCode::EmptyValueSet, "no fully observed windows in the training range");

    // Quantile edges for the numeric-weather summary over candidate timestamps.
    {
        std::vector<double> summaries;
        summaries.reserve(candidates.size());
        for (int t : candidates) summaries.push_back(factors.numeric_summary(0, t));
        std::sort(summaries.begin(), summaries.end());
        for (int q = 1; q < AdjacencyBank::kNumericBins; ++q) {
            std::size_t idx = summaries.size() * static_cast<std::size_t>(q) /
                              AdjacencyBank::kNumericBins;
            idx = std::min(idx, summaries.size() - 1);
            bank.bin_edges_.push_back(summaries[idx]);
        }
    }

    auto value_of = [&](int factor, int t) -> int {
        switch (factor) {
            case 0: return factors.day_of_week(t);
            case 1: return factors.daily_slot(t);
            case 2: return sampling::interval_weather(factors, t);
            case 3: return bank.numeric_bin(factors.numeric_summary(0, t));
            default: return 0; // location: every timestamp carries all locations
        }
    };

    int n = series.n_regions();
    std::vector<std::vector<double>> windows(n, std::vector<double>(h));
    for (int factor = 0; factor < bank.num_factors_; ++factor) {
        std::map<int, std::vector<int>> by_value;
        for (int t : candidates) by_value[value_of(factor, t)].push_back(t);

        for (auto& [value, stamps] : by_value) {
            if (static_cast<int>(stamps.size()) > caps.max_windows_per_value) {
                Rng rng(caps.subsample_seed ^ (static_cast<std::uint64_t>(factor) << 32 ^
                                               static_cast<std::uint64_t>(value)));
                // partial Fisher-Yates, then restore chronological order
                for (int k = 0; k < caps.max_windows_per_value; ++k) {
                    int j = rng.uniform_int(k, static_cast<int>(stamps.size()) - 1);
                    std::swap(stamps[k], stamps[j]);
                }
                stamps.resize(caps.max_windows_per_value);
                std::sort(stamps.begin(), stamps.end());
            }

            Tensor acc({static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
            for (int t : stamps) {
                for (int i = 0; i < n; ++i)
                    for (int s = 0; s < h; ++s) windows[i][s] = series.value_at(i, t - h + s);
                for (int i = 0; i < n; ++i) {
                    acc.at(i, i) += 1.0;
                    for (int j = i + 1; j < n; ++j) {
                        double sim = pairwise_similarity(windows[i], windows[j]);
                        acc.at(i, j) += sim;
                        acc.at(j, i) += sim;
                    }
                }
            }
            double inv = 1.0 / static_cast<double>(stamps.size());
            for (std::size_t k = 0; k < acc.size(); ++k) acc.at(k) *= inv;
            bank.entries_.emplace(std::make_pair(factor, value), std::move(acc));
        }
    }
    return bank;
}

// =============================================================================
// Bank serialization (binary sidecar)
// =============================================================================

namespace {
constexpr char kBankMagic[8] = {'F', 'D', 'G', '2', 'S', 'B', 'K', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error(ErrorCode::InvalidConfig, "truncated bank file");
    return v;
}
} // namespace

void AdjacencyBank::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::InvalidConfig, "cannot write " + path);
    out.write(kBankMagic, sizeof(kBankMagic));
    write_pod<std::uint32_t>(out, 1);
    write_pod<std::uint64_t>(out, dataset_hash_);
    write_pod<std::int32_t>(out, n_);
    write_pod<std::int32_t>(out, h_);
    write_pod<std::int32_t>(out, num_factors_);
    write_pod<std::int32_t>(out, caps_.max_windows_per_value);
    write_pod<std::uint64_t>(out, caps_.subsample_seed);
    write_pod<std::int32_t>(out, static_cast<std::int32_t>(bin_edges_.size()));
    for (double e : bin_edges_) write_pod(out, e);
    write_pod<std::int32_t>(out, static_cast<std::int32_t>(entries_.size()));
    for (const auto& [key, mat] : entries_) {
        write_pod<std::int32_t>(out, key.first);
        write_pod<std::int32_t>(out, key.second);
        out.write(reinterpret_cast<const char*>(mat.data()),
                  static_cast<std::streamsize>(mat.size() * sizeof(double)));
    }
}

AdjacencyBank AdjacencyBank::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kBankMagic, sizeof(magic)) != 0)
        throw Error(ErrorCode::InvalidConfig, path + " is not an adjacency bank file");
    auto version = read_pod<std::uint32_t>(in);
    if (version != 1)
        throw Error(ErrorCode::InvalidConfig, "unsupported bank version " + std::to_string(version));

    AdjacencyBank bank;
    bank.dataset_hash_ = read_pod<std::uint64_t>(in);
    bank.n_ = read_pod<std::int32_t>(in);
    bank.h_ = read_pod<std::int32_t>(in);
    bank.num_factors_ = read_pod<std::int32_t>(in);
    bank.caps_.max_windows_per_value = read_pod<std::int32_t>(in);
    bank.caps_.subsample_seed = read_pod<std::uint64_t>(in);
    int n_edges = read_pod<std::int32_t>(in);
    for (int k = 0; k < n_edges; ++k) bank.bin_edges_.push_back(read_pod<double>(in));
    int n_entries = read_pod<std::int32_t>(in);
    for (int k = 0; k < n_entries; ++k) {
        int factor = read_pod<std::int32_t>(in);
        int value = read_pod<std::int32_t>(in);
        std::size_t n = static_cast<std::size_t>(bank.n_);
        Tensor mat({n, n});
        in.read(reinterpret_cast<char*>(mat.data()),
                static_cast<std::streamsize>(mat.size() * sizeof(double)));
        if (!in) throw Error(ErrorCode::InvalidConfig, "truncated bank matrix");
        bank.entries_.emplace(std::make_pair(factor, value), std::move(mat));
    }
    return bank;
}

// =============================================================================
// Aggregation ops
// =============================================================================

Tensor interaction_adjacency(const std::vector<const Tensor*>& matrices) {
    if (matrices.empty()) throw Error(ErrorCode::ShapeMismatch, "no matrices to multiply");
    Tensor out = *matrices[0];
    for (std::size_t m = 1; m < matrices.size(); ++m) {
        if (!matrices[m]->same_shape(out))
            throw Error(ErrorCode::ShapeMismatch, "interaction matrices differ in shape");
        for (std::size_t k = 0; k < out.size(); ++k) out.at(k) *= matrices[m]->at(k);
    }
    return out;
}

Var aggregation_weights(const std::vector<Var>& segments, const std::vector<Var>& s_params) {
    if (segments.size() != s_params.size() || segments.empty())
        throw Error(ErrorCode::SegmentWidthMismatch, "need one S_k per segment");
    Var logits;
    for (std::size_t k = 0; k < segments.size(); ++k) {
        if (segments[k].value().cols() != s_params[k].value().rows() ||
            segments[k].value().rows() != 1 || s_params[k].value().cols() != 1)
            throw Error(ErrorCode::SegmentWidthMismatch,
                        "segment " + std::to_string(k) + " width " +
                            std::to_string(segments[k].value().cols()) + " vs S_k rows " +
                            std::to_string(s_params[k].value().rows()));
        Var logit = ad::matmul(segments[k], s_params[k]); // 1 x 1
        logits = k == 0 ? logit : ad::concat(logits, logit, 1);
    }
    return ad::softmax(logits); // 1 x (M+1)
}

Var combine_adjacency_prenorm(Tape& tape, const std::vector<const Tensor*>& matrices, Var g) {
    if (matrices.empty()) throw Error(ErrorCode::ShapeMismatch, "no bank matrices");
    std::size_t m_count = matrices.size();
    if (g.value().size() != m_count + 1)
        throw Error(ErrorCode::ShapeMismatch, "g must have M+1 entries");

    Var out;
    for (std::size_t k = 0; k < m_count; ++k) {
        Var term = ad::mul(ad::slice(g, 1, k, 1), tape.constant(*matrices[k]));
        out = k == 0 ? term : ad::add(out, term);
    }
    Var interaction = tape.constant(interaction_adjacency(matrices));
    return ad::add(out, ad::mul(ad::slice(g, 1, m_count, 1), interaction));
}

Var row_normalize(Var a) {
    Tape& tape = *a.tape();
    std::size_t n = a.value().rows();
    Var row_sums = ad::sum(a, 1);                                       // N x 1
    Var inv = ad::div(tape.constant(Tensor::ones({n, 1})), row_sums);   // N x 1
    Var diag = ad::mul(tape.constant(Tensor::eye(n)),
                       ad::matmul(inv, tape.constant(Tensor::ones({1, n}))));
    return ad::matmul(diag, a);
}

Var status_network(Var c_matrix, const StatusNetParams& params) {
    if (c_matrix.value().cols() != params.w1.value().rows())
        throw Error(ErrorCode::WidthMismatch,
                    "factor width " + std::to_string(c_matrix.value().cols()) + " vs w1 rows " +
                        std::to_string(params.w1.value().rows()));
    Tape& tape = *c_matrix.tape();
    std::size_t n = c_matrix.value().rows();
    Var ones = tape.constant(Tensor::ones({n, 1}));
    Var hidden = ad::relu(ad::add(ad::matmul(c_matrix, params.w1), ad::matmul(ones, params.b1)));
    return ad::add(ad::matmul(hidden, params.w2), ad::matmul(ones, params.b2));
}

Var gnn_forward(Var x_h, Var a_combined, Var c_matrix, const GnnParams& params) {
    if (a_combined.value().rows() != x_h.value().rows() ||
        a_combined.value().cols() != x_h.value().rows())
        throw Error(ErrorCode::ShapeMismatch, "adjacency does not match node count");
    if (x_h.value().cols() != params.omega0.value().rows())
        throw Error(ErrorCode::ShapeMismatch, "omega0 does not match window width");

    double alpha = params.alpha;
    Var msg0 = ad::matmul(ad::matmul(a_combined, x_h), params.omega0);
    Var h1 = ad::relu(ad::add(ad::mul_scalar(status_network(c_matrix, params.b0), alpha),
                              ad::mul_scalar(msg0, 1.0 - alpha)));
    Var msg1 = ad::matmul(ad::matmul(a_combined, h1), params.omega1);
    return ad::add(ad::mul_scalar(status_network(c_matrix, params.b1), alpha),
                   ad::mul_scalar(msg1, 1.0 - alpha));
}

} // namespace fdg2s::graph
