#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node; copying a Tensor aliases the
// same storage. Values produced by an operation are immutable. Leaves (tensors
// not produced by an operation) may be mutated in place, which is how the
// optimizer updates parameters.
//
// Operations record themselves on the thread's active Tape (see TapeScope)
// whenever at least one input requires a gradient. Without an active tape the
// result is a plain constant.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gsmt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::uint64_t producer = 0;  // id of the recording tape; 0 for leaves
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  /// Writable view of a leaf's storage. Throws StateError on op outputs.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// New leaf holding a copy of the values, cut from any tape.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(const char*, Shape, std::vector<double>,
                               std::span<const Tensor* const>,
                               std::function<void(std::span<const double>,
                                                  std::span<std::vector<double>*>)>);
  std::shared_ptr<detail::Node> node_;
};

/// Ordered log of recorded operations. Entries are appended in execution
/// order, so inputs always precede the operations that consume them.
///
/// backward() consumes the tape: a second call without clear() throws
/// TapeError. Leaf gradients accumulate across tapes until zero_grad().
class Tape {
 public:
  using BackwardFn =
      std::function<void(std::span<const double>, std::span<std::vector<double>*>)>;

  struct Entry {
    const char* op = "";
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    BackwardFn backward;
  };

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }
  std::uint64_t id() const noexcept { return id_; }

  void clear();
  void backward(const Tensor& loss);

  void record(Entry entry);

 private:
  std::uint64_t id_;
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Makes `tape` the active tape of the calling thread for the scope's
/// lifetime; the previous active tape is restored on exit.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

/// Builds an op output and records it when gradients are needed. Backward
/// receives the output gradient and one pointer per input (null when that
/// input needs no gradient); it must accumulate (+=) into non-null buffers.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::span<const Tensor* const> inputs,
                      std::function<void(std::span<const double>,
                                         std::span<std::vector<double>*>)> backward);

inline Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                             std::initializer_list<const Tensor*> inputs,
                             std::function<void(std::span<const double>,
                                                std::span<std::vector<double>*>)> backward) {
  return make_op_result(op, std::move(shape), std::move(value),
                        std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                        std::move(backward));
}

}  // namespace gsmt
