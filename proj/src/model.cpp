#include "gsmt/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gsmt/error.hpp"
#include "gsmt/ops.hpp"

namespace gsmt {

namespace {

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Tensor glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = (2.0 * unit_uniform(rng) - 1.0) * limit;
  return Tensor({rows, cols}, std::move(v), true);
}

Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }

RecurrentCellParams make_cell(CellKind kind, std::size_t in, std::size_t hidden,
                              std::mt19937_64& rng) {
  RecurrentCellParams p;
  p.kind = kind;
  const std::size_t gates = kind == CellKind::lstm ? 4 : 3;
  p.wx = glorot(in, gates * hidden, rng);
  p.wh = glorot(hidden, gates * hidden, rng);
  p.b = zeros_param(gates * hidden);
  if (kind == CellKind::lstm) {
    auto b = p.b.mutable_values();
    std::fill(b.begin() + hidden, b.begin() + 2 * hidden, 1.0);
  } else {
    p.bh = zeros_param(gates * hidden);
  }
  return p;
}

template <class Model, class Fn>
void visit_parameters(Model& m, Fn&& fn) {
  fn("gat.in_w", m.gat.in_w);
  fn("gat.in_b", m.gat.in_b);
  for (std::size_t k = 0; k < m.gat.layers.size(); ++k) {
    auto& l = m.gat.layers[k];
    const std::string p = "gat.layer" + std::to_string(k) + ".";
    fn(p + "att_self", l.att_self);
    fn(p + "att_nbr", l.att_nbr);
    fn(p + "att_gamma", l.att_gamma);
    fn(p + "att_bias", l.att_bias);
    fn(p + "att_out", l.att_out);
    fn(p + "att_out_bias", l.att_out_bias);
    fn(p + "w1", l.w1);
    fn(p + "b1", l.b1);
    fn(p + "w2", l.w2);
    fn(p + "b2", l.b2);
  }
  for (auto* cell : {&m.seq.encoder, &m.seq.decoder}) {
    const std::string p = cell == &m.seq.encoder ? "encoder." : "decoder.";
    fn(p + "wx", cell->wx);
    fn(p + "wh", cell->wh);
    fn(p + "b", cell->b);
    if (cell->kind == CellKind::gru) fn(p + "bh", cell->bh);
  }
  fn("head.w", m.seq.head_w);
  fn("head.b", m.seq.head_b);
}

}  // namespace

const char* to_string(CellKind kind) { return kind == CellKind::lstm ? "lstm" : "gru"; }

CellKind cell_kind_from_string(const std::string& name) {
  if (name == "lstm") return CellKind::lstm;
  if (name == "gru") return CellKind::gru;
  throw ConfigError("unknown cell kind '" + name + "' (expected lstm or gru)");
}

void ModelConfig::validate() const {
  if (hidden_width < 1) throw ConfigError("model.hidden_width must be >= 1");
  if (gat_layers < 1) throw ConfigError("model.gat_layers must be >= 1");
  if (l_in < 1) throw ConfigError("model: L_in must be >= 1");
  if (l_out < 1) throw ConfigError("model: L_out must be >= 1");
  if (!(leaky_slope >= 0.0)) throw ConfigError("model.leaky_slope must be >= 0");
  if (!(teacher_forcing >= 0.0 && teacher_forcing <= 1.0)) {
    throw ConfigError("model.teacher_forcing must lie in [0, 1]");
  }
}

GsmtModel::GsmtModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const std::size_t d = config_.hidden_width;
  gat.in_w = glorot(3, d, rng);
  gat.in_b = zeros_param(d);
  for (std::size_t k = 0; k < config_.gat_layers; ++k) {
    GatLayerParams l;
    l.att_self = glorot(d, d, rng);
    l.att_nbr = glorot(d, d, rng);
    l.att_gamma = glorot(1, d, rng);
    l.att_bias = zeros_param(d);
    l.att_out = glorot(d, 1, rng);
    l.att_out_bias = zeros_param(1);
    l.w1 = glorot(d, d, rng);
    l.b1 = zeros_param(d);
    l.w2 = glorot(d, d, rng);
    l.b2 = zeros_param(d);
    gat.layers.push_back(std::move(l));
  }
  seq.encoder = make_cell(config_.cell, d, d, rng);
  seq.decoder = make_cell(config_.cell, d, d, rng);
  seq.head_w = glorot(d, 2, rng);
  seq.head_b = zeros_param(2);
}

GsmtModel GsmtModel::clone() const {
  GsmtModel copy = *this;
  visit_parameters(copy, [](const std::string&, Tensor& t) {
    Tensor fresh = t.detach();
    fresh.set_requires_grad(true);
    t = fresh;
  });
  return copy;
}

std::vector<NamedTensor> GsmtModel::named_parameters() const {
  std::vector<NamedTensor> out;
  visit_parameters(*this, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::vector<Tensor> GsmtModel::parameters() const {
  std::vector<Tensor> out;
  visit_parameters(*this, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

GatScores gat_scores(const Tensor& u_prev, const AdjacencyMatrix& gamma,
                     const GatLayerParams& layer, double leaky_slope) {
  const std::size_t n = u_prev.rows();
  if (gamma.n != n) {
    throw DimensionError("gat_scores: graph has " + std::to_string(gamma.n) + " nodes, features have " +
                         std::to_string(n));
  }
  if (layer.att_self.rows() != u_prev.cols()) {
    throw DimensionError("gat_scores: feature width " + std::to_string(u_prev.cols()) +
                         " does not match the attention MLP input " +
                         std::to_string(layer.att_self.rows()));
  }
  const Tensor p = matmul(u_prev, layer.att_self);
  const Tensor q = matmul(u_prev, layer.att_nbr);
  const Tensor g = Tensor({n * n, 1}, gamma.weights);
  Tensor hidden = add(pair_sum(p, q), matmul(g, layer.att_gamma));
  hidden = leaky_relu(add_row(hidden, layer.att_bias), leaky_slope);
  Tensor scores = add_row(matmul(hidden, layer.att_out), layer.att_out_bias);

  GatScores out;
  out.scores = reshape(scores, {n, n});
  out.mask.resize(n * n);
  for (std::size_t k = 0; k < n * n; ++k) out.mask[k] = gamma.weights[k] > 0.0 ? 1 : 0;
  return out;
}

Tensor gat_weights(const Tensor& scores, std::span<const std::uint8_t> mask) {
  return masked_row_softmax(scores, mask);
}

Tensor gat_aggregate(const Tensor& alpha, const Tensor& u_prev) {
  return neighbor_sum(alpha, u_prev);
}

Tensor gat_update(const Tensor& u_prev, const Tensor& v, const GatLayerParams& layer) {
  if (u_prev.shape() != v.shape()) {
    throw DimensionError("gat_update: residual needs equal widths, got " +
                         shape_str(u_prev.shape()) + " and " + shape_str(v.shape()));
  }
  const Tensor hidden = relu(add_row(matmul(v, layer.w1), layer.b1));
  const Tensor delta = relu(add_row(matmul(hidden, layer.w2), layer.b2));
  return add(u_prev, delta);
}

Tensor gat_layer(const Tensor& u_prev, const AdjacencyMatrix& gamma, const GatLayerParams& layer,
                 double leaky_slope) {
  const auto scores = gat_scores(u_prev, gamma, layer, leaky_slope);
  const Tensor alpha = gat_weights(scores.scores, scores.mask);
  const Tensor v = gat_aggregate(alpha, u_prev);
  return gat_update(u_prev, v, layer);
}

Tensor gat_forward(const Tensor& frame, const AdjacencyMatrix& gamma, const GatStack& stack,
                   double leaky_slope) {
  Tensor u = add_row(matmul(frame, stack.in_w), stack.in_b);
  for (const auto& layer : stack.layers) u = gat_layer(u, gamma, layer, leaky_slope);
  return u;
}

RecurrentState lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c,
                         const RecurrentCellParams& params) {
  const std::size_t hw = params.hidden();
  const Tensor gates = add_row(add(matmul(x, params.wx), matmul(h, params.wh)), params.b);
  const Tensor i = sigmoid(slice_cols(gates, 0, hw));
  const Tensor f = sigmoid(slice_cols(gates, hw, 2 * hw));
  const Tensor g = tanh(slice_cols(gates, 2 * hw, 3 * hw));
  const Tensor o = sigmoid(slice_cols(gates, 3 * hw, 4 * hw));
  const Tensor c_next = add(mul(f, c), mul(i, g));
  return {mul(o, tanh(c_next)), c_next};
}

Tensor gru_cell(const Tensor& x, const Tensor& h, const RecurrentCellParams& params) {
  const std::size_t hw = params.hidden();
  const Tensor gx = add_row(matmul(x, params.wx), params.b);
  const Tensor gh = add_row(matmul(h, params.wh), params.bh);
  const Tensor z = sigmoid(add(slice_cols(gx, 0, hw), slice_cols(gh, 0, hw)));
  const Tensor r = sigmoid(add(slice_cols(gx, hw, 2 * hw), slice_cols(gh, hw, 2 * hw)));
  const Tensor n = tanh(add(slice_cols(gx, 2 * hw, 3 * hw), mul(r, slice_cols(gh, 2 * hw, 3 * hw))));
  return add(h, mul(z, sub(n, h)));
}

RecurrentState cell_step(const Tensor& x, const RecurrentState& state,
                         const RecurrentCellParams& params) {
  if (params.kind == CellKind::lstm) return lstm_cell(x, state.h, state.c, params);
  return {gru_cell(x, state.h, params), Tensor{}};
}

RecurrentState zero_state(std::size_t nodes, const RecurrentCellParams& params) {
  RecurrentState s;
  s.h = Tensor::zeros({nodes, params.hidden()});
  if (params.kind == CellKind::lstm) s.c = Tensor::zeros({nodes, params.hidden()});
  return s;
}

RecurrentState encode(std::span<const Tensor> embeddings, const RecurrentCellParams& params) {
  if (embeddings.empty()) throw ContractError("encode: empty input sequence");
  RecurrentState state = zero_state(embeddings.front().rows(), params);
  for (const auto& x : embeddings) state = cell_step(x, state, params);
  return state;
}

Tensor frame_tensor(const FrameArray& frames, std::size_t step, std::size_t features) {
  if (step >= frames.steps || features > frames.features) {
    throw DimensionError("frame_tensor: step or feature count out of range");
  }
  std::vector<double> v(frames.nodes * features);
  for (std::size_t b = 0; b < frames.nodes; ++b)
    for (std::size_t f = 0; f < features; ++f) v[b * features + f] = frames.at(step, b, f);
  return Tensor({frames.nodes, features}, std::move(v));
}

std::vector<Tensor> decode(const RecurrentState& encoded, const Tensor& last_frame,
                           std::size_t l_out, const AdjacencyMatrix& gamma,
                           const GsmtModel& model, const TeacherForcing& teacher) {
  if (l_out < 1) throw ContractError("decode: L_out must be >= 1");
  if (last_frame.rank() != 2 || last_frame.cols() != 3) {
    throw DimensionError("decode: last frame must be N x 3, got " + shape_str(last_frame.shape()));
  }
  const bool forcing = teacher.targets != nullptr && teacher.rng != nullptr && teacher.ratio > 0.0;
  if (forcing && teacher.targets->steps < l_out) {
    throw DimensionError("decode: teacher targets shorter than L_out");
  }
  const double slope = model.config().leaky_slope;
  const Tensor speed = slice_cols(last_frame, 2, 3);

  std::vector<Tensor> outputs;
  outputs.reserve(l_out);
  RecurrentState state = encoded;
  Tensor input = last_frame;
  for (std::size_t k = 0; k < l_out; ++k) {
    const Tensor x = gat_forward(input, gamma, model.gat, slope);
    state = cell_step(x, state, model.seq.decoder);
    outputs.push_back(add_row(matmul(state.h, model.seq.head_w), model.seq.head_b));
    if (k + 1 == l_out) break;
    Tensor previous = outputs.back();
    if (forcing && unit_uniform(*teacher.rng) < teacher.ratio) {
      previous = frame_tensor(*teacher.targets, k, 2);
    }
    const Tensor parts[] = {previous, speed};
    input = concat_cols(parts);
  }
  return outputs;
}

std::vector<Tensor> forward(const WindowSample& sample, const AdjacencyMatrix& gamma,
                            const GsmtModel& model, const TeacherForcing& teacher) {
  const auto& cfg = model.config();
  const auto& in = sample.input;
  if (in.steps != cfg.l_in || in.features != 3) {
    throw DimensionError("forward: window input is " + std::to_string(in.steps) + "x" +
                         std::to_string(in.nodes) + "x" + std::to_string(in.features) +
                         ", model expects L_in=" + std::to_string(cfg.l_in) + " with 3 features");
  }
  std::vector<Tensor> embeddings;
  embeddings.reserve(in.steps);
  Tensor last;
  for (std::size_t s = 0; s < in.steps; ++s) {
    last = frame_tensor(in, s, 3);
    embeddings.push_back(gat_forward(last, gamma, model.gat, cfg.leaky_slope));
  }
  const RecurrentState state = encode(embeddings, model.seq.encoder);
  return decode(state, last, cfg.l_out, gamma, model, teacher);
}

FrameArray predict(const WindowSample& sample, const AdjacencyMatrix& gamma,
                   const GsmtModel& model) {
  const auto outputs = forward(sample, gamma, model);
  FrameArray out(outputs.size(), sample.input.nodes, 2);
  for (std::size_t s = 0; s < outputs.size(); ++s) {
    auto v = outputs[s].values();
    std::copy(v.begin(), v.end(), out.values.begin() + static_cast<std::ptrdiff_t>(s * v.size()));
  }
  return out;
}

Tensor mae_loss(std::span<const Tensor> predictions, const FrameArray& target) {
  if (predictions.size() != target.steps) {
    throw DimensionError("mae_loss: " + std::to_string(predictions.size()) + " predicted steps for " +
                         std::to_string(target.steps) + " target steps");
  }
  Tensor total;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    const Tensor term = sum(abs(sub(predictions[s], frame_tensor(target, s, 2))));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(target.values.size()));
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  adam.validate();
}

TrainState TrainState::clone() const {
  TrainState out(*this);
  out.model = model.clone();
  out.best = best.clone();
  return out;
}

TrainState init_training(const ModelConfig& model_config, const TrainConfig& train_config) {
  train_config.validate();
  TrainState state(model_config);
  state.adam.config = train_config.adam;
  state.best_validation = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(train_config.seed);
  std::ostringstream os;
  os << rng;
  state.rng_state = os.str();
  return state;
}

double evaluate_mae(const GsmtModel& model, std::span<const TrainingSample> samples) {
  if (samples.empty()) throw ContractError("evaluate_mae: empty sample set");
  double total = 0.0;
  for (const auto& s : samples) {
    const auto pred = predict(s.window, s.graph, model);
    double acc = 0.0;
    for (std::size_t k = 0; k < pred.values.size(); ++k) {
      acc += std::fabs(pred.values[k] - s.window.target.values[k]);
    }
    total += acc / static_cast<double>(pred.values.size());
  }
  return total / static_cast<double>(samples.size());
}

namespace {

// "loss trace: 0.31, 0.12, nan" over the last few epochs plus the failing one.
std::string loss_trace(const std::vector<EpochRecord>& history, double current) {
  std::ostringstream os;
  os << "; loss trace:";
  const std::size_t first = history.size() > 5 ? history.size() - 5 : 0;
  for (std::size_t i = first; i < history.size(); ++i) os << ' ' << history[i].train_loss << ',';
  os << ' ' << current;
  return os.str();
}

}  // namespace

void train(TrainState& state, std::span<const TrainingSample> train_set,
           std::span<const TrainingSample> validation_set, const TrainConfig& cfg,
           const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (validation_set.empty()) throw ContractError("train: empty validation set");

  std::mt19937_64 rng;
  {
    std::istringstream is(state.rng_state);
    is >> rng;
    if (!is) throw StateError("train: corrupt RNG state");
  }
  state.adam.config = cfg.adam;
  auto params = state.model.parameters();
  const double forcing = state.model.config().teacher_forcing;

  std::vector<std::size_t> order(train_set.size());
  while (state.epochs_done < cfg.epochs && !state.stopped_early) {
    const std::size_t epoch = state.epochs_done + 1;
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng() % i]);
    }

    double loss_total = 0.0;
    try {
      for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
        for (auto& p : params) p.zero_grad();
        Tape tape;
        TapeScope scope(tape);
        Tensor batch_loss;
        for (std::size_t k = begin; k < end; ++k) {
          const auto& sample = train_set[order[k]];
          TeacherForcing teacher{&sample.window.target, forcing, &rng};
          const auto outputs = forward(sample.window, sample.graph, state.model, teacher);
          const Tensor loss = mae_loss(outputs, sample.window.target);
          loss_total += loss.item();
          batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
        }
        tape.backward(scale(batch_loss, 1.0 / static_cast<double>(end - begin)));
        adam_step(params, state.adam);
      }
    } catch (const NumericError& e) {
      throw TrainingError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what() +
                          loss_trace(state.history, loss_total));
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_total / static_cast<double>(train_set.size());
    if (!std::isfinite(record.train_loss)) {
      throw TrainingError("training diverged in epoch " + std::to_string(epoch) + ": loss is not finite" +
                          loss_trace(state.history, record.train_loss));
    }
    try {
      record.validation_mae = evaluate_mae(state.model, validation_set);
    } catch (const NumericError& e) {
      throw TrainingError("validation failed in epoch " + std::to_string(epoch) + ": " + e.what() +
                          loss_trace(state.history, record.train_loss));
    }

    if (record.validation_mae < state.best_validation) {
      state.best_validation = record.validation_mae;
      state.best = state.model.clone();
      state.epochs_since_best = 0;
    } else {
      ++state.epochs_since_best;
      if (cfg.patience > 0 && state.epochs_since_best >= cfg.patience) state.stopped_early = true;
    }
    state.history.push_back(record);
    state.epochs_done = epoch;
    std::ostringstream os;
    os << rng;
    state.rng_state = os.str();
    if (on_epoch) on_epoch(record);
  }
  for (auto& p : params) p.zero_grad();
}

}  // namespace gsmt
