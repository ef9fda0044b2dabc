#include "fdg2s/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "fdg2s/rng.hpp"

namespace fdg2s::model {

using ad::Tape;
using ad::Tensor;
using ad::Var;

// =============================================================================
// ModelConfig
// =============================================================================

int ModelConfig::factor_width() const {
    return std::accumulate(segment_widths.begin(), segment_widths.end(), 0);
}

void ModelConfig::validate() const {
    if (n_regions <= 0 || horizon <= 0 || kernel_dim <= 0 || lstm_hidden <= 0)
        throw Error(ErrorCode::InvalidConfig, "non-positive model dimension");
    if (segment_widths.size() < 2)
        throw Error(ErrorCode::InvalidConfig, "need at least two factor segments");
    for (int w : segment_widths)
        if (w <= 0) throw Error(ErrorCode::InvalidConfig, "non-positive segment width");
    if (alpha < 0.0 || alpha > 1.0)
        throw Error(ErrorCode::InvalidConfig, "alpha must be in [0, 1]");
    if (norm_std <= 0.0) throw Error(ErrorCode::InvalidConfig, "norm_std must be positive");
}

// =============================================================================
// Parameter initialization
// =============================================================================

namespace {

Tensor xavier(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    double scale = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (std::size_t k = 0; k < t.size(); ++k) t.at(k) = rng.uniform(-scale, scale);
    return t;
}

Tensor lstm_bias(std::size_t hidden) {
    // forget-gate block initialized to 1, everything else 0
    Tensor b({1, 4 * hidden});
    for (std::size_t k = hidden; k < 2 * hidden; ++k) b.at(k) = 1.0;
    return b;
}

} // namespace

ForecastModel::ForecastModel(ModelConfig config, std::uint64_t seed,
                             const Tensor* initial_embeddings)
    : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    std::size_t n = static_cast<std::size_t>(config_.n_regions);
    std::size_t h = static_cast<std::size_t>(config_.horizon);
    std::size_t d_c = static_cast<std::size_t>(config_.factor_width());
    std::size_t kernel = static_cast<std::size_t>(config_.kernel_dim);
    std::size_t hidden = static_cast<std::size_t>(config_.lstm_hidden);
    std::size_t d_l = static_cast<std::size_t>(config_.embed_dim());

    auto add = [&](const std::string& name, Tensor t) {
        params_.push_back({name, std::move(t)});
    };

    for (int k = 0; k < config_.num_segments(); ++k)
        add("s_k/" + std::to_string(k),
            xavier(rng, static_cast<std::size_t>(config_.segment_widths[k]), 1));
    add("s_k/" + std::to_string(config_.num_segments()), xavier(rng, d_c, 1));

    add("b0/w1", xavier(rng, d_c, kernel));
    add("b0/b1", Tensor({1, kernel}));
    add("b0/w2", xavier(rng, kernel, kernel));
    add("b0/b2", Tensor({1, kernel}));
    add("b1/w1", xavier(rng, d_c, kernel));
    add("b1/b1", Tensor({1, kernel}));
    add("b1/w2", xavier(rng, kernel, h));
    add("b1/b2", Tensor({1, h}));
    add("omega0", xavier(rng, h, kernel));
    add("omega1", xavier(rng, kernel, h));

    add("lstm/w_x", xavier(rng, 1, 4 * hidden));
    add("lstm/w_h", xavier(rng, hidden, 4 * hidden));
    add("lstm/b", lstm_bias(hidden));
    add("read/w", xavier(rng, hidden + d_l, h));
    add("read/b", Tensor({1, h}));

    add("dec/w_x", xavier(rng, 1, 4 * hidden));
    add("dec/w_h", xavier(rng, hidden, 4 * hidden));
    add("dec/b", lstm_bias(hidden));
    add("dec/read_w", xavier(rng, hidden, h));
    add("dec/read_b", Tensor({1, h}));

    add("w_av", xavier(rng, d_c, 1));
    add("b_av", Tensor({1, 1}));

    if (initial_embeddings) {
        if (initial_embeddings->rows() != n || initial_embeddings->cols() != d_l)
            throw Error(ErrorCode::ShapeMismatch, "initial embedding table shape");
        add("embeddings", *initial_embeddings);
    } else {
        add("embeddings", xavier(rng, n, d_l));
    }
}

ForecastModel::ForecastModel(ModelConfig config, std::vector<NamedTensor> params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
}

const Tensor& ForecastModel::param(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.value;
    throw Error(ErrorCode::InvalidConfig, "unknown parameter " + name);
}

// =============================================================================
// Binding
// =============================================================================

ModelBinding bind(Tape& tape, const ForecastModel& model, bool trainable) {
    ModelBinding binding;
    binding.model = &model;
    binding.vars.reserve(model.params().size());
    for (const auto& p : model.params()) binding.vars.push_back(tape.leaf(p.value, trainable));
    return binding;
}

Var ModelBinding::at(const std::string& name) const {
    const auto& params = model->params();
    for (std::size_t k = 0; k < params.size(); ++k)
        if (params[k].name == name) return vars[k];
    throw Error(ErrorCode::InvalidConfig, "unknown parameter " + name);
}

// =============================================================================
// Forward
// =============================================================================

namespace {

Tensor normalized(const Tensor& t, double mean, double std) {
    Tensor out = t;
    for (std::size_t k = 0; k < out.size(); ++k) out.at(k) = (out.at(k) - mean) / std;
    return out;
}

} // namespace

ForwardOut forward(Tape& tape, const ModelBinding& binding, const TargetContext& ctx) {
    const ModelConfig& cfg = binding.model->config();
    std::size_t n = static_cast<std::size_t>(cfg.n_regions);
    std::size_t h = static_cast<std::size_t>(cfg.horizon);
    int m_count = cfg.num_segments();

    if (ctx.x_p.rows() != n || ctx.x_p.cols() != h || !ctx.x_h.same_shape(ctx.x_p))
        throw Error(ErrorCode::ShapeMismatch, "window tensors must be N x h");
    if (static_cast<int>(ctx.step_statics.size()) != cfg.horizon)
        throw Error(ErrorCode::ShapeMismatch, "need one static factor matrix per step");
    if (static_cast<int>(ctx.bank_matrices.size()) != m_count)
        throw Error(ErrorCode::ShapeMismatch, "need one bank matrix per factor type");

    Var embeddings = binding.at("embeddings");

    // Factor matrix at the target interval: static part + embedding columns.
    Var c_target = ad::concat(tape.constant(ctx.step_statics[0]), embeddings, 1);

    // Graph-level segment summaries (mean over nodes) feed the aggregation
    // weights; calendar/weather columns are node-constant so the mean is the
    // value itself, the embedding column becomes a graph summary.
    std::vector<Var> segments;
    int offset = 0;
    for (int k = 0; k < m_count; ++k) {
        Var seg = ad::mean(ad::slice(c_target, 1, offset, cfg.segment_widths[k]), 0);
        segments.push_back(seg);
        offset += cfg.segment_widths[k];
    }
    segments.push_back(ad::mean(c_target, 0)); // c_{M+1} = concat of all segments

    std::vector<Var> s_params;
    for (int k = 0; k <= m_count; ++k) s_params.push_back(binding.at("s_k/" + std::to_string(k)));
    Var g = graph::aggregation_weights(segments, s_params);

    std::vector<const Tensor*> mats;
    mats.reserve(ctx.bank_matrices.size());
    for (const auto& m : ctx.bank_matrices) mats.push_back(&m);
    Var adjacency = graph::combine_adjacency(tape, mats, g);

    graph::GnnParams gnn{{binding.at("b0/w1"), binding.at("b0/b1"), binding.at("b0/w2"),
                          binding.at("b0/b2")},
                         {binding.at("b1/w1"), binding.at("b1/b1"), binding.at("b1/w2"),
                          binding.at("b1/b2")},
                         binding.at("omega0"),
                         binding.at("omega1"),
                         cfg.alpha};

    Var x_h_norm = tape.constant(normalized(ctx.x_h, cfg.norm_mean, cfg.norm_std));
    Var x_p_norm = tape.constant(normalized(ctx.x_p, cfg.norm_mean, cfg.norm_std));
    Var h_ins = graph::gnn_forward(x_h_norm, adjacency, c_target, gnn);

    seq::SequenceHead head{{binding.at("lstm/w_x"), binding.at("lstm/w_h"), binding.at("lstm/b")},
                           binding.at("read/w"), binding.at("read/b")};
    Var yhat_norm = seq::forecast(x_p_norm, h_ins, embeddings, head);
    Var yhat = ad::add_scalar(ad::mul_scalar(yhat_norm, cfg.norm_std), cfg.norm_mean);

    seq::DecoderHead decoder{{binding.at("dec/w_x"), binding.at("dec/w_h"), binding.at("dec/b")},
                             binding.at("dec/read_w"), binding.at("dec/read_b")};
    Var xhat_norm = seq::reconstruct(x_h_norm, decoder);
    Var xhat = ad::add_scalar(ad::mul_scalar(xhat_norm, cfg.norm_std), cfg.norm_mean);

    Var resid = ad::sub(tape.constant(ctx.x_h), xhat);
    Var u_as = ad::mean(ad::mul(resid, resid), 1); // N x 1

    Var w_av = binding.at("w_av");
    Var b_av = binding.at("b_av");
    Var ones = tape.constant(Tensor::ones({n, 1}));
    Var u_av;
    for (int s = 0; s < cfg.horizon; ++s) {
        Var c_step = ad::concat(tape.constant(ctx.step_statics[s]), embeddings, 1);
        Var col = ad::relu(ad::add(ad::matmul(c_step, w_av), ad::matmul(ones, b_av)));
        u_av = s == 0 ? col : ad::concat(u_av, col, 1);
    }

    return ForwardOut{yhat, xhat, u_as, u_av, g};
}

// =============================================================================
// Checkpointing
// =============================================================================

namespace {

constexpr char kCkptMagic[8] = {'F', 'D', 'G', '2', 'S', 'C', 'P', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error(ErrorCode::InvalidConfig, "truncated checkpoint");
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
    auto len = read_pod<std::uint32_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw Error(ErrorCode::InvalidConfig, "truncated checkpoint string");
    return s;
}

void write_tensor(std::ofstream& out, const Tensor& t) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) write_pod<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::ifstream& in) {
    auto rank = read_pod<std::uint32_t>(in);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw Error(ErrorCode::InvalidConfig, "truncated checkpoint tensor");
    return t;
}

void write_named(std::ofstream& out, const std::vector<NamedTensor>& tensors) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& p : tensors) {
        write_string(out, p.name);
        write_tensor(out, p.value);
    }
}

std::vector<NamedTensor> read_named(std::ifstream& in) {
    auto count = read_pod<std::uint32_t>(in);
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        std::string name = read_string(in);
        out.push_back({std::move(name), read_tensor(in)});
    }
    return out;
}

} // namespace

void save_checkpoint(const std::string& path, const ForecastModel& model,
                     std::uint64_t config_hash, const OptimizerSnapshot* optimizer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::InvalidConfig, "cannot write " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    write_pod<std::uint32_t>(out, 1);
    write_pod<std::uint64_t>(out, config_hash);

    const ModelConfig& cfg = model.config();
    write_pod<std::int32_t>(out, cfg.n_regions);
    write_pod<std::int32_t>(out, cfg.horizon);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.segment_widths.size()));
    for (int w : cfg.segment_widths) write_pod<std::int32_t>(out, w);
    write_pod<std::int32_t>(out, cfg.kernel_dim);
    write_pod<std::int32_t>(out, cfg.lstm_hidden);
    write_pod<double>(out, cfg.alpha);
    write_pod<double>(out, cfg.norm_mean);
    write_pod<double>(out, cfg.norm_std);

    write_named(out, model.params());
    write_pod<std::uint8_t>(out, optimizer ? 1 : 0);
    if (optimizer) {
        write_pod<std::int64_t>(out, optimizer->step);
        write_named(out, optimizer->tensors);
    }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw Error(ErrorCode::InvalidConfig, path + " is not a checkpoint file");
    auto version = read_pod<std::uint32_t>(in);
    if (version != 1)
        throw Error(ErrorCode::InvalidConfig,
                    "unsupported checkpoint version " + std::to_string(version));

    LoadedCheckpoint loaded;
    loaded.config_hash = read_pod<std::uint64_t>(in);

    ModelConfig cfg;
    cfg.n_regions = read_pod<std::int32_t>(in);
    cfg.horizon = read_pod<std::int32_t>(in);
    auto seg_count = read_pod<std::uint32_t>(in);
    cfg.segment_widths.resize(seg_count);
    for (auto& w : cfg.segment_widths) w = read_pod<std::int32_t>(in);
    cfg.kernel_dim = read_pod<std::int32_t>(in);
    cfg.lstm_hidden = read_pod<std::int32_t>(in);
    cfg.alpha = read_pod<double>(in);
    cfg.norm_mean = read_pod<double>(in);
    cfg.norm_std = read_pod<double>(in);

    std::vector<NamedTensor> params = read_named(in);
    loaded.model = ForecastModel(std::move(cfg), std::move(params));
    loaded.has_optimizer = read_pod<std::uint8_t>(in) != 0;
    if (loaded.has_optimizer) {
        loaded.optimizer.step = read_pod<std::int64_t>(in);
        loaded.optimizer.tensors = read_named(in);
    }
    return loaded;
}

} // namespace fdg2s::model
