#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mesin/errors.hpp"

namespace mesin {

class Rng;
class Tape;

using Shape = std::vector<int>;

int numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense float64 tensor. Values are immutable once created. A tensor produced
// through a tape carries a node handle linking it into the gradient graph;
// constants carry node -1 and receive no gradient.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const { return shape_; }
  int size() const { return buf_ ? static_cast<int>(buf_->size()) : 0; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  const std::vector<double>& data() const { return *buf_; }
  double at(int i) const { return (*buf_)[static_cast<std::size_t>(i)]; }
  double scalar() const;

  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  std::shared_ptr<std::vector<double>> buf_;
  Shape shape_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Append-only reverse-mode gradient tape. A tape and its tensors are confined
// to one thread; the tape is built per forward pass and discarded after
// backward. Every primitive validates shapes (ContractError) and rejects
// non-finite outputs (NumericError).
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- tensor creation ---------------------------------------------------
  Tensor leaf(const Shape& shape, std::span<const double> values);
  // Shares the buffer (no copy); the buffer must stay alive and unmodified
  // for the life of the tape.
  Tensor leaf_shared(const Shape& shape, std::shared_ptr<std::vector<double>> buf);
  Tensor constant(const Shape& shape, std::span<const double> values);
  Tensor constant_fill(const Shape& shape, double value);
  Tensor scalar_const(double v) { return constant_fill({1}, v); }

  // Op-author API: record a custom node. `backward` receives the upstream
  // gradient of the node's output and must accumulate into the inputs via
  // add_grad(). Used internally by the entmax/softmax ops and available to
  // tests.
  Tensor custom(const std::string& name, const Shape& shape,
                std::vector<double> data, const std::vector<Tensor>& inputs,
                BackwardFn backward);

  // --- primitives ---------------------------------------------------------
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor hadamard(const Tensor& a, const Tensor& b);
  // [m,k]x[k] -> [m]  or  [m,k]x[k,n] -> [m,n]
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor concat(const std::vector<Tensor>& parts);
  // Flat view of `len` elements starting at `offset` (row-major); covers both
  // vector slicing and embedding-row lookup on a [rows, cols] matrix.
  Tensor slice(const Tensor& x, int offset, int len);
  Tensor sum(const Tensor& x);
  Tensor scale(const Tensor& x, double c);
  // v + s, s broadcast over the vector
  Tensor add_scalar(const Tensor& v, const Tensor& s);
  // v * s, s broadcast over the vector
  Tensor mul_scalar(const Tensor& v, const Tensor& s);
  // m + v with v broadcast across the rows of m
  Tensor add_rowvec(const Tensor& m, const Tensor& v);
  Tensor tanh(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor relu(const Tensor& x);
  Tensor log(const Tensor& x);
  Tensor clamp(const Tensor& x, double lo, double hi);
  // Inverted dropout with a recorded mask; rate 0 is the identity.
  Tensor dropout(const Tensor& x, double rate, Rng& rng);
  Tensor softmax(const Tensor& scores);
  Tensor entmax(const Tensor& scores, double gamma);
  Tensor dot(const Tensor& a, const Tensor& b);

  // --- backward ------------------------------------------------------------
  // Seeds d(loss)/d(loss) = 1 and traverses nodes once in reverse append
  // order. May be called repeatedly; each call recomputes from scratch.
  void backward(const Tensor& loss);
  bool has_gradients() const { return ran_backward_; }
  // Gradient w.r.t. a tracked tensor; zeros if unreachable from the loss.
  std::vector<double> grad(const Tensor& t) const;

  // Accumulates into a node's gradient buffer; no-op for untracked inputs.
  void add_grad(int node, std::span<const double> g);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    BackwardFn backward;  // null for leaves/constants
  };

  Tensor make(const std::string& op, const Shape& shape,
              std::vector<double> data, BackwardFn backward);
  std::vector<double>& grad_buf(int node);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool ran_backward_ = false;
};

// --- finite-difference verification ----------------------------------------

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  int worst_input = -1;
  int worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::string to_string() const;
};

// f builds a scalar loss on the given tape from the supplied leaves.
using TapeFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Compares tape gradients against central finite differences at the given
// points. rel err = |a-n| / max(|a|, |n|, 1).
GradCheckReport grad_check(
    const TapeFn& f,
    const std::vector<std::pair<Shape, std::vector<double>>>& points,
    double step, double tol);

GradCheckReport grad_check(const TapeFn& f, const Shape& shape,
                           const std::vector<double>& point, double step,
                           double tol);

}  // namespace mesin
