#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fdg2s/data.hpp"
#include "fdg2s/tensor.hpp"

namespace fdg2s::graph {

// =============================================================================
// Sequence-level similarity
// =============================================================================
// 0.5 * (1 / (1 + ||p-q||)) + 0.5 * ((cos(p,q) + 1) / 2); cos is 1 when both
// vectors are zero and 0 when exactly one is zero, so identical windows score
// exactly 1 and the result stays in [0, 1].
double pairwise_similarity(const std::vector<double>& p, const std::vector<double>& q);

// =============================================================================
// AdjacencyBank — factor-value-conditioned region similarity matrices
// =============================================================================

struct BankCaps {
    int max_windows_per_value = 64;
    std::uint64_t subsample_seed = 0;
};

std::uint64_t dataset_hash(const data::MaskedSeries& series);

class AdjacencyBank {
public:
    int n_regions() const { return n_; }
    int horizon() const { return h_; }
    int num_factors() const { return num_factors_; }
    std::uint64_t source_hash() const { return dataset_hash_; }
    const BankCaps& caps() const { return caps_; }

    bool has(int factor, int value) const;
    // Throws MissingBankEntry for a (factor, value) never built.
    const ad::Tensor& matrix(int factor, int value) const;
    int entry_count() const { return static_cast<int>(entries_.size()); }

    // Number of quantile bins used for the numeric-weather factor.
    static constexpr int kNumericBins = 4;
    int numeric_bin(double summary) const;

    // Factor-value ids of a target interval: day-of-week, slot, weather type,
    // numeric bin, location (always 0).
    std::vector<int> target_values(const data::FactorFrame& factors, int t_ref) const;
    // Matrices selected by the target's factor values, in factor order.
    std::vector<const ad::Tensor*> select(const std::vector<int>& values) const;

    void save(const std::string& path) const;
    static AdjacencyBank load(const std::string& path);

private:
    friend AdjacencyBank build_adjacency_bank(const data::MaskedSeries&, const data::FactorFrame&,
                                              int, int, const BankCaps&);
    int n_ = 0, h_ = 0, num_factors_ = 0;
    std::uint64_t dataset_hash_ = 0;
    BankCaps caps_;
    std::vector<double> bin_edges_; // ascending quantile edges for numeric factor
    std::map<std::pair<int, int>, ad::Tensor> entries_;
};

// Builds conditioned similarity matrices from the training range [h, train_end].
// Factor order: day-of-week, daily slot, weather type, numeric-weather bin
// (quartiles of the z-score summary), location (a single unconditional matrix:
// every timestamp carries all locations, so the conditioning set is the full
// window set).
AdjacencyBank build_adjacency_bank(const data::MaskedSeries& series,
                                   const data::FactorFrame& factors, int train_end, int h,
                                   const BankCaps& caps = {});

// =============================================================================
// Aggregation (differentiable, recorded on a Tape)
// =============================================================================

// Entrywise product of the selected per-factor matrices.
ad::Tensor interaction_adjacency(const std::vector<const ad::Tensor*>& matrices);

// g = softmax_k(S_k^T c_k) over M+1 entries; segments are 1 x w_k rows, the
// last one being the concatenation of the first M. Returns a 1 x (M+1) Var.
ad::Var aggregation_weights(const std::vector<ad::Var>& segments,
                            const std::vector<ad::Var>& s_params);

// sum_k g_k A_k + g_{M+1} prod_k A_k, before row normalization.
ad::Var combine_adjacency_prenorm(ad::Tape& tape,
                                  const std::vector<const ad::Tensor*>& matrices, ad::Var g);

// Divides each row by its sum (rows are strictly positive for bank matrices).
ad::Var row_normalize(ad::Var a);

inline ad::Var combine_adjacency(ad::Tape& tape, const std::vector<const ad::Tensor*>& matrices,
                                 ad::Var g) {
    return row_normalize(combine_adjacency_prenorm(tape, matrices, g));
}

// Two-layer status feature network B(c): affine -> ReLU -> affine, applied
// row-wise to an N x d_c matrix of factor vectors.
struct StatusNetParams {
    ad::Var w1, b1; // d_c x hidden, 1 x hidden
    ad::Var w2, b2; // hidden x out, 1 x out
};

ad::Var status_network(ad::Var c_matrix, const StatusNetParams& params);

// Two factor-decoupled GNN layers over the combined adjacency:
//   H1 = ReLU(alpha B0(C) + (1-alpha) A X_H w0)
//   H2 =      alpha B1(C) + (1-alpha) A H1  w1
struct GnnParams {
    StatusNetParams b0; // outputs N x kernel
    StatusNetParams b1; // outputs N x h
    ad::Var omega0;     // h x kernel
    ad::Var omega1;     // kernel x h
    double alpha = 0.5;
};

ad::Var gnn_forward(ad::Var x_h, ad::Var a_combined, ad::Var c_matrix, const GnnParams& params);

} // namespace fdg2s::graph
