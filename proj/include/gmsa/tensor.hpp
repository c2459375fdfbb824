#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gmsa/rng.hpp"

namespace gmsa {

using Shape = std::vector<int>;

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
};

// Dense row-major tensor of doubles (rank 1 or 2) with reverse-mode autodiff.
// A Tensor is a cheap handle onto a shared node; copies alias the same data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value);
  static Tensor from_data(const Shape& shape, std::vector<double> data);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t numel() const { return node_->data.size(); }
  int rows() const;
  int cols() const;

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  double& at(int i, int j) { return node_->data[static_cast<size_t>(i) * cols() + j]; }
  double at(int i, int j) const { return node_->data[static_cast<size_t>(i) * cols() + j]; }

  double scalar() const;  // value of a 1-element tensor

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  // gradient buffer, allocated (zeroed) on first access
  std::vector<double>& grad();
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void zero_grad();

  // deep copy with no autodiff history
  Tensor clone() const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---------------------------------------------------------------------------
// recording tape
// ---------------------------------------------------------------------------

// One recorded operation: the node it produced plus the rule that pushes the
// output gradient into the inputs. Replaying entries newest-to-oldest visits
// every node that feeds the loss exactly once (outputs are always recorded
// after their inputs).
struct TapeEntry {
  std::shared_ptr<TensorNode> output;
  std::function<void()> backward;
};

class Tape {
 public:
  void record(std::shared_ptr<TensorNode> out, std::function<void()> fn);
  void clear();
  size_t size() const { return entries_.size(); }

  // seeds d(loss)/d(loss) = 1 and replays in reverse order; consumes the tape
  void run_backward(const Tensor& loss);

 private:
  std::vector<TapeEntry> entries_;
};

Tape& tape();           // per-thread recording tape
bool grad_enabled();    // false inside a NoGradGuard

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// backward on a scalar loss; throws std::invalid_argument on non-scalar input
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// forward-FLOP instrumentation
// ---------------------------------------------------------------------------

// Counts 2*m*n*k per forward matmul and one unit per softmax score entry.
// Backward-pass work is not counted.
void reset_flop_counter();
uint64_t flop_counter();

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

// Row-major boolean mask for row_softmax; true = entry participates.
using SoftmaxMask = std::vector<uint8_t>;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor silu(const Tensor& x);

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T where a is [m x k], b is [n x k] -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Row-wise softmax with optional mask (true entries kept, masked entries are
// exactly 0). A fully masked row raises std::domain_error.
Tensor row_softmax(const Tensor& x, const SoftmaxMask* mask = nullptr);

// y[i] = x[i] * scale / sqrt(mean(x[i]^2) + eps), per row
Tensor rmsnorm(const Tensor& x, const Tensor& scale_vec, double eps = 1e-5);

// Rotary embedding over heads of width head_dim laid out side by side in the
// column dimension; adjacent element pairs are rotated. Position 0 is the
// identity.
Tensor rope_apply(const Tensor& x, const std::vector<int>& positions, int head_dim,
                  double base = 10000.0);

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor col_slice(const Tensor& x, int start, int count);
Tensor col_concat(const std::vector<Tensor>& parts);

// Consecutive groups of group_len rows averaged to one row each; the final
// group may be shorter and is averaged over its actual size.
Tensor group_mean_rows(const Tensor& x, int group_len);

// mean over rows of -log softmax(logits)[i, target_i]
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets);

// per-row -log softmax(logits)[i, target_i], no autodiff
std::vector<double> row_nll(const Tensor& logits, const std::vector<int>& targets);

Tensor sum_all(const Tensor& x);

}  // namespace gmsa
