#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major tensors.
//
// A Graph is an append-only tape. Every operation evaluates its output eagerly,
// appends a node holding the output together with a closure that pushes the
// output gradient back to the inputs, and returns a lightweight Var handle.
// Graph::backward walks the tape in strict reverse construction order.
//
// Parameters are bound by reference (Graph::parameter): the graph never copies
// them and their gradients accumulate directly into Tensor::grad until the
// owner zeroes them. The graph must not outlive the tensors bound into it.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lmnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised when an operation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense real array. `grad` is allocated only for tensors that take part in
/// gradient computation (requires_grad); otherwise it stays empty.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, bool requires_grad = false);
  Tensor(Shape s, std::vector<double> v, bool requires_grad = false);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  void zero_grad();
  void set_requires_grad(bool on);
};

/// Ordered (name, tensor) lists used for optimizers and checkpoints.
using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;
using ConstNamedTensors = std::vector<std::pair<std::string, const Tensor*>>;

enum class Mode { train, eval };

struct Var {
  std::size_t id = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf bound by reference. Gradients accumulate into `t.grad` when
  /// `t.requires_grad` is set.
  Var parameter(Tensor& t);
  /// Leaf bound by reference that never receives a gradient (frozen weights).
  Var constant(const Tensor& t);
  Var constant(const Tensor&&) = delete;  // would dangle; use input()
  /// Owned leaf without gradient.
  Var input(Tensor t);
  /// Owned leaf with gradient; read it back with grad().
  Var variable(Tensor t);

  /// Appends an interior node. The output requires a gradient iff any input
  /// does; `backward` is only invoked in that case.
  Var record(std::string_view op, std::vector<Var> inputs, Tensor out, BackwardFn backward);

  const Tensor& value(Var v) const { return *nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return value(v).shape; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).grad_sink != nullptr; }
  /// Gradient storage of a node; empty span when the node carries no gradient.
  std::span<double> grad(Var v);
  std::span<const double> grad(Var v) const;

  std::string_view op(Var v) const { return nodes_.at(v.id).op; }
  const std::vector<Var>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Interior gradients are reset on
  /// every call; leaf gradients accumulate across calls.
  void backward(Var loss);

 private:
  struct Node {
    std::string op;
    std::vector<Var> inputs;
    const Tensor* value = nullptr;
    Tensor* grad_sink = nullptr;
    BackwardFn backward;
  };

  Var push_leaf(std::string_view op, const Tensor* value, Tensor* sink);

  std::deque<Tensor> owned_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. Shape violations throw std::invalid_argument naming both shapes.

/// out = input · weight + bias, input [R×Din], weight [Din×Dout], bias [Dout].
/// Every output row is produced by the same instruction sequence, so the
/// result for a row does not depend on its position in the batch.
Var linear(Graph& g, Var input, Var weight, Var bias);

/// Adds `bias` [C] to every row of a tensor whose last dimension is C.
Var add_bias(Graph& g, Var input, Var bias);

Var relu(Graph& g, Var input);
Var softplus(Graph& g, Var input);
Var abs(Graph& g, Var input);
Var square(Graph& g, Var input);

Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var input, double factor);

/// Scalar sum / mean of all entries, shape {1}.
Var sum(Graph& g, Var input);
Var mean(Graph& g, Var input);

Var reshape(Graph& g, Var input, Shape shape);
/// Columns [begin, end) of a rank-2 tensor.
Var slice_columns(Graph& g, Var input, std::size_t begin, std::size_t end);

struct RunningStats {
  Tensor mean;
  Tensor var;
  explicit RunningStats(std::size_t channels = 0);
};

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.9;
};

/// Per-channel normalization over every leading axis (the last axis is the
/// channel). Train mode uses the batch statistics and updates `stats` as
/// stats = momentum·stats + (1−momentum)·batch; eval mode uses `stats`.
Var batch_norm(Graph& g, Var input, Var gamma, Var beta, RunningStats& stats, Mode mode,
               const BatchNormOptions& options = {});
/// Eval-mode batch norm over read-only running statistics.
Var batch_norm(Graph& g, Var input, Var gamma, Var beta, const RunningStats& stats,
               const BatchNormOptions& options = {});

/// Max over the rows of `input` [(S·N)×D] split into `segments` equal
/// consecutive groups; output [S×D]. Ties route the gradient to the lowest row.
Var maxpool_over_points(Graph& g, Var input, std::size_t segments = 1);

/// Cross-correlation with "same" zero padding. input [B×H×W×Cin],
/// kernel [kh×kw×Cin×Cout] with odd kh, kw; stride 1 or 2.
/// Output [B×ceil(H/stride)×ceil(W/stride)×Cout].
Var conv2d(Graph& g, Var input, Var kernel, std::size_t stride);

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;
  AdamOptions options;

  AdamState() = default;
  AdamState(std::size_t n, AdamOptions opts);
};

/// One bias-corrected Adam update. Throws NumericError naming the first
/// non-finite gradient index.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

/// Adam over a fixed list of tensors; the tensors must outlive the optimizer.
class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamOptions options);

  void step();
  void zero_grad();
  double grad_norm() const;
  std::uint64_t step_count() const;

 private:
  std::vector<Tensor*> params_;
  std::vector<AdamState> states_;
};

}  // namespace lmnet
