#pragma once

// Reverse-mode automatic differentiation over dense row-major float64 tensors.
//
// A Tensor is a shared handle to a buffer. Operations record a node on the
// thread's active Tape when any input requires a gradient; with no active tape
// they only compute values. Tape::backward sweeps the recorded nodes once in
// reverse order and freezes the tape.

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace agsa::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

enum class Op : int {
  kMatMul = 0,
  kBatchMatMul,
  kConv2d,
  kRelu,
  kSigmoid,
  kTanh,
  kSoftmax,
  kLogSoftmax,
  kConcat,
  kSlice,
  kAdd,
  kSub,
  kMul,
  kScale,
  kBiasAdd,
  kSum,
  kMean,
  kSumLastAxis,
  kExp,
  kLog,
  kReshape,
  kClamp,
  kMinimum,
  kCount,  // sentinel, not an operation
};

const char* op_name(Op op);

struct OpAttrs {
  std::size_t axis = 0;
  std::size_t offset = 0;   // slice start along axis
  std::size_t length = 0;   // slice length along axis
  std::size_t stride = 1;   // conv2d
  std::size_t padding = 0;  // conv2d, zero padding on every side
  bool transpose_a = false;  // batch matmul
  bool transpose_b = false;
  double scale = 1.0;
  double lo = 0.0;  // clamp
  double hi = 0.0;
  Shape shape;  // reshape target
};

class Tape;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  Tape* tape = nullptr;  // producing tape; null for leaves
};

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Writing through this span after the tensor was used by a recorded op
  // invalidates that op's gradient.
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const { return impl_->tape == nullptr; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Zeros when no gradient has been accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Deep copy of the values, detached from any tape.
  Tensor clone() const;

  bool same_object(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl& impl() const { return *impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

struct Node {
  Op op;
  std::vector<Tensor> inputs;
  Tensor output;
  OpAttrs attrs;
};

class Tape {
 public:
  // The new tape becomes the active tape of the calling thread until it is
  // destroyed; the previously active tape is restored afterwards.
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Populates gradients of every requires_grad tensor reached from output.
  void backward(const Tensor& output);

  bool frozen() const { return frozen_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  void record(Op op, std::vector<Tensor> inputs, const Tensor& output, const OpAttrs& attrs);

 private:
  std::vector<Node> nodes_;
  bool frozen_ = false;
  Tape* previous_ = nullptr;
};

Tensor eval_primitive(Op op, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

// (m,k) x (k,n) -> (m,n)
Tensor matmul(const Tensor& a, const Tensor& b);
// (b,m,k) x (b,k,n) -> (b,m,n); either operand may be transposed in its last two axes.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
// x (B,C,H,W), weight (O,C,k,k) -> (B,O,Ho,Wo), Ho = floor((H + 2p - k)/s) + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding);
// Adds a per-channel bias (O) to a (B,O,H,W) map.
Tensor conv_bias_add(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softmax(const Tensor& x);      // over the last axis
Tensor log_softmax(const Tensor& x);  // over the last axis

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x (..., n) + bias (n), bias repeated over leading axes.
Tensor bias_add(const Tensor& x, const Tensor& bias);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar
Tensor sum_last_axis(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t offset, std::size_t length);
std::vector<Tensor> split(const Tensor& x, std::size_t axis, std::span<const std::size_t> sizes);

namespace testing {

// Multiplies the backward contribution of one primitive on this thread while
// alive. Used to verify that gradient checks detect broken backward rules.
class BackwardScaleOverride {
 public:
  BackwardScaleOverride(Op op, double factor);
  ~BackwardScaleOverride();
  BackwardScaleOverride(const BackwardScaleOverride&) = delete;
  BackwardScaleOverride& operator=(const BackwardScaleOverride&) = delete;

 private:
  Op op_;
  double previous_;
};

}  // namespace testing

}  // namespace agsa::ad
