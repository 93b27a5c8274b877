#include "gsmt/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "gsmt/error.hpp"

namespace gsmt {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

void require_finite(const char* what, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(what) + ": non-finite value");
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  require_finite("tensor", values);
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw StateError("tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("tensor: rows() on " + shape_str(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("tensor: cols() on " + shape_str(shape()));
  return node_->shape[1];
}

std::span<const double> Tensor::values() const {
  if (!node_) throw StateError("tensor: undefined");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw StateError("tensor: undefined");
  if (node_->producer != 0) throw StateError("tensor: op outputs are immutable");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("tensor: item() on " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) throw StateError("tensor: undefined");
  if (!is_leaf()) throw StateError("tensor: requires_grad is fixed on op outputs");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return node_ && node_->producer == 0; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

void Tape::clear() {
  entries_.clear();
  consumed_ = false;
  // Fresh id so outputs recorded before the reset read as detached.
  id_ = g_next_tape_id.fetch_add(1);
}

void Tape::record(Entry entry) {
  if (consumed_) throw TapeError("tape: recording on a consumed tape; clear() it first");
  entries_.push_back(std::move(entry));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) throw ContractError("backward: loss does not require grad");
  if (consumed_) throw TapeError("backward: tape already consumed; clear() it first");
  const auto& root = loss.node();
  if (root->producer != id_) {
    throw TapeError("backward: loss was not recorded on this tape");
  }

  root->grad.assign(1, 0.0);
  root->grad[0] = 1.0;

  std::vector<std::vector<double>*> slots;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto& entry = *it;
    if (entry.output->grad.empty()) continue;
    slots.assign(entry.inputs.size(), nullptr);
    for (std::size_t k = 0; k < entry.inputs.size(); ++k) {
      auto& in = entry.inputs[k];
      if (!in->requires_grad) continue;
      if (in->producer != 0 && in->producer != id_) {
        throw TapeError(std::string("backward: input of '") + entry.op +
                        "' was produced on another tape");
      }
      if (in->grad.empty()) in->grad.assign(in->value.size(), 0.0);
      slots[k] = &in->grad;
    }
    entry.backward(entry.output->grad, slots);
  }
  consumed_ = true;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() noexcept { return g_active_tape; }

Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::span<const Tensor* const> inputs,
                      std::function<void(std::span<const double>,
                                         std::span<std::vector<double>*>)> backward) {
  bool needs_grad = false;
  for (const Tensor* in : inputs) {
    if (in->is_leaf()) require_finite(op, in->values());
    needs_grad = needs_grad || in->requires_grad();
  }
  require_finite(op, value);

  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);

  Tape* tape = active_tape();
  if (needs_grad && tape != nullptr) {
    node->requires_grad = true;
    node->producer = tape->id();
    Tape::Entry entry;
    entry.op = op;
    entry.inputs.reserve(inputs.size());
    for (const Tensor* in : inputs) entry.inputs.push_back(in->node());
    entry.output = node;
    entry.backward = std::move(backward);
    tape->record(std::move(entry));
  }
  return Tensor(std::move(node));
}

}  // namespace gsmt
