#pragma once

// Graph-attention encoder over the fused window graph feeding a
// sequence-to-sequence recurrent forecaster.
//
// Node features are rows: a frame is an N x F matrix, and every weight maps
// row vectors on the right (x * W). One recurrent cell is shared by all nodes.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gsmt/adam.hpp"
#include "gsmt/graphs.hpp"
#include "gsmt/ingest.hpp"
#include "gsmt/tensor.hpp"

namespace gsmt {

enum class CellKind { lstm, gru };

const char* to_string(CellKind kind);
CellKind cell_kind_from_string(const std::string& name);

struct ModelConfig {
  std::size_t hidden_width = 32;
  std::size_t gat_layers = 3;
  std::size_t l_in = 10;
  std::size_t l_out = 5;
  double leaky_slope = 0.2;
  double teacher_forcing = 0.5;
  std::uint64_t seed = 42;
  CellKind cell = CellKind::lstm;

  void validate() const;
};

struct GatLayerParams {
  // Attention MLP: hidden = leaky_relu([u_i, u_j, gamma_ij] * W + b), with W
  // stored as three row blocks; score = hidden * att_out + att_out_bias.
  Tensor att_self;      // d x d
  Tensor att_nbr;       // d x d
  Tensor att_gamma;     // 1 x d
  Tensor att_bias;      // d
  Tensor att_out;       // d x 1
  Tensor att_out_bias;  // 1
  // Residual update: u + relu(relu(v * w1 + b1) * w2 + b2).
  Tensor w1, b1, w2, b2;
};

struct GatStack {
  Tensor in_w;  // 3 x d
  Tensor in_b;  // d
  std::vector<GatLayerParams> layers;
};

/// LSTM: gates = x*wx + h*wh + b in (input, forget, candidate, output) order.
/// GRU: gx = x*wx + b, gh = h*wh + bh in (update, reset, candidate) order,
///      h' = h + z * (n - h) with n = tanh(gx_n + r * gh_n).
struct RecurrentCellParams {
  CellKind kind = CellKind::lstm;
  Tensor wx;
  Tensor wh;
  Tensor b;
  Tensor bh;  // GRU only

  std::size_t hidden() const { return wh.rows(); }
};

struct Seq2SeqParams {
  RecurrentCellParams encoder;
  RecurrentCellParams decoder;
  Tensor head_w;  // H x 2
  Tensor head_b;  // 2
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class GsmtModel {
 public:
  /// Seeded Glorot-uniform initialisation; zero biases except LSTM forget
  /// gates, which start at 1.
  explicit GsmtModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  /// Deep copy: parameters of the clone do not alias this model's.
  GsmtModel clone() const;

  /// Every trainable tensor in a fixed order with stable names. The returned
  /// tensors alias the model's storage.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;

  GatStack gat;
  Seq2SeqParams seq;

 private:
  ModelConfig config_;
};

/// Scores for every ordered pair plus the mask of pairs with gamma_ij > 0.
struct GatScores {
  Tensor scores;                   // N x N; entries under a 0 mask are ignored downstream
  std::vector<std::uint8_t> mask;  // 1 where gamma_ij > 0
};

GatScores gat_scores(const Tensor& u_prev, const AdjacencyMatrix& gamma,
                     const GatLayerParams& layer, double leaky_slope);
Tensor gat_weights(const Tensor& scores, std::span<const std::uint8_t> mask);
Tensor gat_aggregate(const Tensor& alpha, const Tensor& u_prev);
Tensor gat_update(const Tensor& u_prev, const Tensor& v, const GatLayerParams& layer);
Tensor gat_layer(const Tensor& u_prev, const AdjacencyMatrix& gamma, const GatLayerParams& layer,
                 double leaky_slope);

/// frame: N x 3 normalised (lat, lon, speed) -> N x d embeddings.
Tensor gat_forward(const Tensor& frame, const AdjacencyMatrix& gamma, const GatStack& stack,
                   double leaky_slope);

struct RecurrentState {
  Tensor h;
  Tensor c;  // undefined for GRU
};

RecurrentState lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c,
                         const RecurrentCellParams& params);
Tensor gru_cell(const Tensor& x, const Tensor& h, const RecurrentCellParams& params);
RecurrentState cell_step(const Tensor& x, const RecurrentState& state,
                         const RecurrentCellParams& params);
RecurrentState zero_state(std::size_t nodes, const RecurrentCellParams& params);

/// Runs the encoder over per-step N x d embeddings from a zero state.
RecurrentState encode(std::span<const Tensor> embeddings, const RecurrentCellParams& params);

/// Teacher forcing for training: with probability `ratio` per decoder step
/// the next input uses the ground-truth frame instead of the prediction.
struct TeacherForcing {
  const FrameArray* targets = nullptr;  // L_out x N x 2, normalised
  double ratio = 0.0;
  std::mt19937_64* rng = nullptr;
};

/// Autoregressive decoder. The first input is the GAT embedding of
/// `last_frame` (N x 3); later inputs embed the previous (lat, lon) output
/// (or teacher frame) together with the last observed speed. Returns L_out
/// tensors of shape N x 2.
std::vector<Tensor> decode(const RecurrentState& state, const Tensor& last_frame,
                           std::size_t l_out, const AdjacencyMatrix& gamma,
                           const GsmtModel& model, const TeacherForcing& teacher = {});

/// Full model on one normalised window: GAT per input frame, encode, decode.
std::vector<Tensor> forward(const WindowSample& sample, const AdjacencyMatrix& gamma,
                            const GsmtModel& model, const TeacherForcing& teacher = {});

/// Inference without recording: L_out x N x 2 normalised coordinates.
FrameArray predict(const WindowSample& sample, const AdjacencyMatrix& gamma,
                   const GsmtModel& model);

/// Mean |prediction - target| over steps, nodes and both coordinates.
Tensor mae_loss(std::span<const Tensor> predictions, const FrameArray& target);

Tensor frame_tensor(const FrameArray& frames, std::size_t step, std::size_t features);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t patience = 30;
  std::size_t batch_size = 8;
  AdamConfig adam;
  std::uint64_t seed = 42;

  void validate() const;
};

/// A window and its row-normalised fused graph.
struct TrainingSample {
  WindowSample window;
  AdjacencyMatrix graph;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_mae = 0.0;
};

/// Everything needed to continue training where it stopped.
struct TrainState {
  GsmtModel model;
  GsmtModel best;
  AdamState adam;
  std::size_t epochs_done = 0;
  std::size_t epochs_since_best = 0;
  double best_validation = 0.0;
  bool stopped_early = false;
  std::vector<EpochRecord> history;
  std::string rng_state;

  explicit TrainState(const ModelConfig& config) : model(config), best(model.clone()) {}

  /// Copy with parameters that do not alias this state's.
  TrainState clone() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Starts a fresh training state for `config`.
TrainState init_training(const ModelConfig& model_config, const TrainConfig& train_config);

/// Minimises the MAE with Adam until `train_config.epochs` epochs have run in
/// total or validation MAE has not improved for `patience` epochs. `state.best`
/// holds the parameters with the lowest validation MAE seen.
void train(TrainState& state, std::span<const TrainingSample> train_set,
           std::span<const TrainingSample> validation_set, const TrainConfig& train_config,
           const EpochCallback& on_epoch = {});

/// Mean inference MAE over a sample set.
double evaluate_mae(const GsmtModel& model, std::span<const TrainingSample> samples);

}  // namespace gsmt
