#include "fdg2s/seq_model.hpp"

namespace fdg2s::seq {

using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

std::size_t hidden_width(const LstmParams& params) {
    std::size_t h = params.w_h.value().rows();
    if (params.w_x.value().rows() != 1 || params.w_x.value().cols() != 4 * h ||
        params.w_h.value().cols() != 4 * h || params.b.value().rows() != 1 ||
        params.b.value().cols() != 4 * h)
        throw Error(ErrorCode::ShapeMismatch, "LSTM parameter shapes do not agree");
    return h;
}

} // namespace

std::pair<Var, Var> lstm_step(Var x_col, Var h_prev, Var c_prev, const LstmParams& params) {
    std::size_t hidden = hidden_width(params);
    std::size_t n = x_col.value().rows();
    if (x_col.value().cols() != 1 || h_prev.value().rows() != n || c_prev.value().rows() != n)
        throw Error(ErrorCode::ShapeMismatch, "LSTM step operands");
    Tape& tape = *x_col.tape();

    Var ones = tape.constant(Tensor::ones({n, 1}));
    Var z = ad::add(ad::add(ad::matmul(x_col, params.w_x), ad::matmul(h_prev, params.w_h)),
                    ad::matmul(ones, params.b)); // N x 4H
    Var gate_i = ad::sigmoid(ad::slice(z, 1, 0, hidden));
    Var gate_f = ad::sigmoid(ad::slice(z, 1, hidden, hidden));
    Var gate_g = ad::tanh(ad::slice(z, 1, 2 * hidden, hidden));
    Var gate_o = ad::sigmoid(ad::slice(z, 1, 3 * hidden, hidden));
    Var c = ad::add(ad::mul(gate_f, c_prev), ad::mul(gate_i, gate_g));
    Var h = ad::mul(gate_o, ad::tanh(c));
    return {h, c};
}

Var lstm_final_hidden(Var sequence, const LstmParams& params) {
    std::size_t hidden = hidden_width(params);
    std::size_t n = sequence.value().rows();
    std::size_t steps = sequence.value().cols();
    Tape& tape = *sequence.tape();

    Var h = tape.constant(Tensor({n, hidden}));
    Var c = tape.constant(Tensor({n, hidden}));
    for (std::size_t s = 0; s < steps; ++s) {
        auto [h_next, c_next] = lstm_step(ad::slice(sequence, 1, s, 1), h, c, params);
        h = h_next;
        c = c_next;
    }
    return h;
}

Var forecast(Var x_p, Var h_ins, Var embeddings, const SequenceHead& head) {
    if (!x_p.value().same_shape(h_ins.value()))
        throw Error(ErrorCode::ShapeMismatch, "X_P and H_ins must share N x h");
    if (embeddings.value().rows() != x_p.value().rows())
        throw Error(ErrorCode::ShapeMismatch, "embedding rows must match node count");
    std::size_t hidden = hidden_width(head.lstm);
    if (head.w_read.value().rows() != hidden + embeddings.value().cols())
        throw Error(ErrorCode::ShapeMismatch, "readout width must be hidden + embed dim");

    Tape& tape = *x_p.tape();
    Var sequence = ad::concat(x_p, h_ins, 1); // N x 2h
    Var h_final = lstm_final_hidden(sequence, head.lstm);
    Var features = ad::concat(h_final, embeddings, 1);
    Var ones = tape.constant(Tensor::ones({x_p.value().rows(), 1}));
    return ad::add(ad::matmul(features, head.w_read), ad::matmul(ones, head.b_read));
}

Var reconstruct(Var x_h, const DecoderHead& head) {
    std::size_t hidden = hidden_width(head.lstm);
    if (head.w_read.value().rows() != hidden)
        throw Error(ErrorCode::ShapeMismatch, "decoder readout width must equal hidden");
    Tape& tape = *x_h.tape();
    Var h_final = lstm_final_hidden(x_h, head.lstm);
    Var ones = tape.constant(Tensor::ones({x_h.value().rows(), 1}));
    return ad::add(ad::matmul(h_final, head.w_read), ad::matmul(ones, head.b_read));
}

} // namespace fdg2s::seq
