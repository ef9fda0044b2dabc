#pragma once

#include <utility>

#include "fdg2s/tensor.hpp"

namespace fdg2s::seq {

// One LSTM shared across all nodes; each node contributes a scalar per step.
// Gate weights are packed [input, forget, cell, output] along the last axis.
struct LstmParams {
    ad::Var w_x; // 1 x 4H
    ad::Var w_h; // H x 4H
    ad::Var b;   // 1 x 4H
};

// Single cell update. x_col is N x 1, h_prev and c_prev are N x H.
// Returns (h, c).
std::pair<ad::Var, ad::Var> lstm_step(ad::Var x_col, ad::Var h_prev, ad::Var c_prev,
                                      const LstmParams& params);

// Consumes an N x S matrix column by column; returns the final hidden state N x H.
ad::Var lstm_final_hidden(ad::Var sequence, const LstmParams& params);

// Forecast head: [X_P || H_ins] -> LSTM -> concat(hidden, location embedding)
// -> affine readout of h values per node.
struct SequenceHead {
    LstmParams lstm;
    ad::Var w_read; // (H + d_l) x h
    ad::Var b_read; // 1 x h
};

ad::Var forecast(ad::Var x_p, ad::Var h_ins, ad::Var embeddings, const SequenceHead& head);

// Reconstruction decoder: X_H -> LSTM -> affine readout of h values per node.
struct DecoderHead {
    LstmParams lstm;
    ad::Var w_read; // H x h
    ad::Var b_read; // 1 x h
};

ad::Var reconstruct(ad::Var x_h, const DecoderHead& head);

} // namespace fdg2s::seq
