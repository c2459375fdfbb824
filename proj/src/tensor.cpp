#include "gmsa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace gmsa {

namespace {

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: shape dimensions must be positive");
    n *= static_cast<size_t>(d);
  }
  if (shape.empty()) throw std::invalid_argument("Tensor: rank-0 shapes are not supported");
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void ensure_grad(const std::shared_ptr<TensorNode>& n) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
}

thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;
thread_local uint64_t g_flops = 0;

// ------------------------------ matmul kernels ------------------------------
// Row-major kernels tuned for contiguous inner loops.

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    const double* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

bool track(const Tensor& t) { return g_grad_enabled && t.requires_grad(); }

Tensor make_result(Shape shape, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data.assign(shape_numel(node->shape), 0.0);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

}  // namespace

// --------------------------------- Tensor ----------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  Tensor t = make_result(shape, requires_grad);
  return t;
}

Tensor Tensor::full(const Shape& shape, double value) {
  Tensor t = make_result(shape, false);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("Tensor::from_data: shape " + shape_str(shape) +
                                " does not match data length " + std::to_string(data.size()));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = shape;
  node->data = std::move(data);
  return Tensor(node);
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev) {
  Tensor t = make_result(shape, false);
  for (auto& v : t.data()) v = rng.next_normal(0.0, stddev);
  return t;
}

int Tensor::rows() const { return node_->shape[0]; }

int Tensor::cols() const {
  return node_->shape.size() >= 2 ? node_->shape[1] : 1;
}

double Tensor::scalar() const {
  if (numel() != 1) {
    throw std::invalid_argument("Tensor::scalar: tensor has " + std::to_string(numel()) +
                                " elements, expected 1");
  }
  return node_->data[0];
}

std::vector<double>& Tensor::grad() {
  ensure_grad(node_);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<TensorNode>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->requires_grad = node_->requires_grad;
  return Tensor(node);
}

// ---------------------------------- Tape -----------------------------------

void Tape::record(std::shared_ptr<TensorNode> out, std::function<void()> fn) {
  entries_.push_back({std::move(out), std::move(fn)});
}

void Tape::clear() { entries_.clear(); }

void Tape::run_backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape with " +
                                std::to_string(loss.numel()) + " elements");
  }
  ensure_grad(loss.node());
  loss.node()->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output->grad.empty()) it->backward();
  }
  entries_.clear();
}

Tape& tape() { return g_tape; }
bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) { g_tape.run_backward(loss); }

void reset_flop_counter() { g_flops = 0; }
uint64_t flop_counter() { return g_flops; }

// ----------------------------- elementwise ops -----------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_result(a.shape(), track(a) || track(b));
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    g_tape.record(on, [an, bn, on] {
      if (an->requires_grad) {
        ensure_grad(an);
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_result(a.shape(), track(a) || track(b));
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    g_tape.record(on, [an, bn, on] {
      if (an->requires_grad) {
        ensure_grad(an);
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_result(a.shape(), track(a) || track(b));
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    g_tape.record(on, [an, bn, on] {
      if (an->requires_grad) {
        ensure_grad(an);
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = make_result(a.shape(), track(a));
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    g_tape.record(on, [an, on, s] {
      ensure_grad(an);
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * s;
    });
  }
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = make_result(x.shape(), track(x));
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    out.data()[i] = v / (1.0 + std::exp(-v));
  }
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    g_tape.record(on, [xn, on] {
      ensure_grad(xn);
      for (size_t i = 0; i < on->grad.size(); ++i) {
        const double v = xn->data[i];
        const double sig = 1.0 / (1.0 + std::exp(-v));
        xn->grad[i] += on->grad[i] * sig * (1.0 + v * (1.0 - sig));
      }
    });
  }
  return out;
}

// --------------------------------- matmul ----------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = make_result({m, n}, track(a) || track(b));
  gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  g_flops += 2ull * m * n * k;
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    g_tape.record(on, [an, bn, on, m, k, n] {
      if (an->requires_grad) {
        ensure_grad(an);
        gemm_nt(on->grad.data(), bn->data.data(), an->grad.data(), m, n, k);
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        gemm_tn(an->data.data(), on->grad.data(), bn->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1]) {
    throw std::invalid_argument("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  }
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  Tensor out = make_result({m, n}, track(a) || track(b));
  gemm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  g_flops += 2ull * m * n * k;
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    g_tape.record(on, [an, bn, on, m, k, n] {
      if (an->requires_grad) {
        ensure_grad(an);
        gemm_nn(on->grad.data(), bn->data.data(), an->grad.data(), m, n, k);
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        gemm_tn(on->grad.data(), an->data.data(), bn->grad.data(), m, n, k);
      }
    });
  }
  return out;
}

// --------------------------------- softmax ---------------------------------

Tensor row_softmax(const Tensor& x, const SoftmaxMask* mask) {
  if (x.shape().size() != 2) throw std::invalid_argument("row_softmax: expected a 2-D tensor");
  const int m = x.shape()[0], n = x.shape()[1];
  if (mask && mask->size() != static_cast<size_t>(m) * n) {
    throw std::invalid_argument("row_softmax: mask size does not match tensor shape");
  }
  Tensor out = make_result(x.shape(), track(x));
  for (int i = 0; i < m; ++i) {
    const double* row = x.data().data() + static_cast<size_t>(i) * n;
    double* orow = out.data().data() + static_cast<size_t>(i) * n;
    const uint8_t* mrow = mask ? mask->data() + static_cast<size_t>(i) * n : nullptr;
    double maxv = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (!mrow || mrow[j]) maxv = std::max(maxv, row[j]);
    }
    if (maxv == -std::numeric_limits<double>::infinity()) {
      throw std::domain_error("row_softmax: row " + std::to_string(i) + " is fully masked");
    }
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      if (!mrow || mrow[j]) {
        orow[j] = std::exp(row[j] - maxv);
        denom += orow[j];
      } else {
        orow[j] = 0.0;
      }
    }
    for (int j = 0; j < n; ++j) orow[j] /= denom;
    // keep masked entries exactly zero after the division
    if (mrow) {
      for (int j = 0; j < n; ++j) {
        if (!mrow[j]) orow[j] = 0.0;
      }
    }
  }
  g_flops += static_cast<uint64_t>(m) * n;
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    g_tape.record(on, [xn, on, m, n] {
      ensure_grad(xn);
      for (int i = 0; i < m; ++i) {
        const double* p = on->data.data() + static_cast<size_t>(i) * n;
        const double* g = on->grad.data() + static_cast<size_t>(i) * n;
        double* gx = xn->grad.data() + static_cast<size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += g[j] * p[j];
        for (int j = 0; j < n; ++j) gx[j] += p[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

// --------------------------------- rmsnorm ---------------------------------

Tensor rmsnorm(const Tensor& x, const Tensor& scale_vec, double eps) {
  if (x.shape().size() != 2) throw std::invalid_argument("rmsnorm: expected a 2-D tensor");
  const int m = x.shape()[0], n = x.shape()[1];
  if (static_cast<int>(scale_vec.numel()) != n) {
    throw std::invalid_argument("rmsnorm: scale length " + std::to_string(scale_vec.numel()) +
                                " does not match row width " + std::to_string(n));
  }
  if (eps <= 0.0) throw std::invalid_argument("rmsnorm: eps must be positive");
  Tensor out = make_result(x.shape(), track(x) || track(scale_vec));
  std::vector<double> inv_rms(m);
  for (int i = 0; i < m; ++i) {
    const double* row = x.data().data() + static_cast<size_t>(i) * n;
    double ms = 0.0;
    for (int j = 0; j < n; ++j) ms += row[j] * row[j];
    ms = ms / n + eps;
    inv_rms[i] = 1.0 / std::sqrt(ms);
    double* orow = out.data().data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = row[j] * inv_rms[i] * scale_vec.data()[j];
  }
  if (out.requires_grad()) {
    auto xn = x.node(), sn = scale_vec.node(), on = out.node();
    g_tape.record(on, [xn, sn, on, m, n, inv_rms = std::move(inv_rms)] {
      for (int i = 0; i < m; ++i) {
        const double* row = xn->data.data() + static_cast<size_t>(i) * n;
        const double* g = on->grad.data() + static_cast<size_t>(i) * n;
        const double r = inv_rms[i];
        if (xn->requires_grad) {
          ensure_grad(xn);
          double dot = 0.0;
          for (int j = 0; j < n; ++j) dot += g[j] * sn->data[j] * row[j];
          double* gx = xn->grad.data() + static_cast<size_t>(i) * n;
          const double c = dot * r * r * r / n;
          for (int j = 0; j < n; ++j) gx[j] += g[j] * sn->data[j] * r - row[j] * c;
        }
        if (sn->requires_grad) {
          ensure_grad(sn);
          for (int j = 0; j < n; ++j) sn->grad[j] += g[j] * row[j] * r;
        }
      }
    });
  }
  return out;
}

// ---------------------------------- rope -----------------------------------

Tensor rope_apply(const Tensor& x, const std::vector<int>& positions, int head_dim, double base) {
  if (x.shape().size() != 2) throw std::invalid_argument("rope_apply: expected a 2-D tensor");
  const int m = x.shape()[0], n = x.shape()[1];
  if (head_dim <= 0 || head_dim % 2 != 0) {
    throw std::invalid_argument("rope_apply: head_dim must be even and positive, got " +
                                std::to_string(head_dim));
  }
  if (n % head_dim != 0) {
    throw std::invalid_argument("rope_apply: row width is not a multiple of head_dim");
  }
  if (static_cast<int>(positions.size()) != m) {
    throw std::invalid_argument("rope_apply: positions length does not match row count");
  }
  const int pairs = head_dim / 2;
  std::vector<double> inv_freq(pairs);
  for (int t = 0; t < pairs; ++t) inv_freq[t] = std::pow(base, -2.0 * t / head_dim);

  Tensor out = make_result(x.shape(), track(x));
  // captured by value: the backward closure outlives this scope
  auto rotate = [m, n, head_dim, pairs, inv_freq,
                 positions](const std::vector<double>& src, std::vector<double>& dst, double sign) {
    for (int i = 0; i < m; ++i) {
      const double* row = src.data() + static_cast<size_t>(i) * n;
      double* orow = dst.data() + static_cast<size_t>(i) * n;
      for (int h = 0; h < n / head_dim; ++h) {
        for (int t = 0; t < pairs; ++t) {
          const double theta = sign * positions[i] * inv_freq[t];
          const double c = std::cos(theta), s = std::sin(theta);
          const int j = h * head_dim + 2 * t;
          const double a = row[j], b = row[j + 1];
          orow[j] += a * c - b * s;
          orow[j + 1] += a * s + b * c;
        }
      }
    }
  };
  rotate(x.data(), out.data(), 1.0);
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    g_tape.record(on, [xn, on, rotate] {
      ensure_grad(xn);
      rotate(on->grad, xn->grad, -1.0);  // inverse rotation
    });
  }
  return out;
}

// ------------------------------ gather / layout -----------------------------

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.shape().size() != 2) throw std::invalid_argument("embedding_rows: table must be 2-D");
  const int v = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw std::invalid_argument("embedding_rows: empty id list");
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) {
      throw std::out_of_range("embedding_rows: id " + std::to_string(ids[i]) + " at position " +
                              std::to_string(i) + " outside vocabulary of " + std::to_string(v));
    }
  }
  const int m = static_cast<int>(ids.size());
  Tensor out = make_result({m, d}, track(table));
  for (int i = 0; i < m; ++i) {
    std::copy_n(table.data().data() + static_cast<size_t>(ids[i]) * d, d,
                out.data().data() + static_cast<size_t>(i) * d);
  }
  if (out.requires_grad()) {
    auto tn = table.node(), on = out.node();
    g_tape.record(on, [tn, on, ids, d] {
      ensure_grad(tn);
      for (size_t i = 0; i < ids.size(); ++i) {
        const double* g = on->grad.data() + i * d;
        double* t = tn->grad.data() + static_cast<size_t>(ids[i]) * d;
        for (int j = 0; j < d; ++j) t[j] += g[j];
      }
    });
  }
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1]) {
    throw std::invalid_argument("concat_rows: column widths differ: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const int ma = a.shape()[0], mb = b.shape()[0], n = a.shape()[1];
  Tensor out = make_result({ma + mb, n}, track(a) || track(b));
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.numel());
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    g_tape.record(on, [an, bn, on, ma, mb, n] {
      if (an->requires_grad) {
        ensure_grad(an);
        for (size_t i = 0; i < static_cast<size_t>(ma) * n; ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        const size_t off = static_cast<size_t>(ma) * n;
        for (size_t i = 0; i < static_cast<size_t>(mb) * n; ++i) bn->grad[i] += on->grad[off + i];
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int start, int count) {
  if (x.shape().size() != 2) throw std::invalid_argument("slice_rows: expected a 2-D tensor");
  const int m = x.shape()[0], n = x.shape()[1];
  if (start < 0 || count <= 0 || start + count > m) {
    throw std::out_of_range("slice_rows: range [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") outside " + std::to_string(m) +
                            " rows");
  }
  Tensor out = make_result({count, n}, track(x));
  std::copy_n(x.data().data() + static_cast<size_t>(start) * n, static_cast<size_t>(count) * n,
              out.data().data());
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    g_tape.record(on, [xn, on, start, count, n] {
      ensure_grad(xn);
      const size_t off = static_cast<size_t>(start) * n;
      for (size_t i = 0; i < static_cast<size_t>(count) * n; ++i) xn->grad[off + i] += on->grad[i];
    });
  }
  return out;
}

Tensor col_slice(const Tensor& x, int start, int count) {
  if (x.shape().size() != 2) throw std::invalid_argument("col_slice: expected a 2-D tensor");
  const int m = x.shape()[0], n = x.shape()[1];
  if (start < 0 || count <= 0 || start + count > n) {
    throw std::out_of_range("col_slice: range [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") outside " + std::to_string(n) +
                            " columns");
  }
  Tensor out = make_result({m, count}, track(x));
  for (int i = 0; i < m; ++i) {
    std::copy_n(x.data().data() + static_cast<size_t>(i) * n + start, count,
                out.data().data() + static_cast<size_t>(i) * count);
  }
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    g_tape.record(on, [xn, on, start, count, m, n] {
      ensure_grad(xn);
      for (int i = 0; i < m; ++i) {
        const double* g = on->grad.data() + static_cast<size_t>(i) * count;
        double* gx = xn->grad.data() + static_cast<size_t>(i) * n + start;
        for (int j = 0; j < count; ++j) gx[j] += g[j];
      }
    });
  }
  return out;
}

Tensor col_concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("col_concat: no parts");
  const int m = parts[0].shape()[0];
  int n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != m) {
      throw std::invalid_argument("col_concat: row counts differ");
    }
    n += p.shape()[1];
    rg = rg || track(p);
  }
  Tensor out = make_result({m, n}, rg);
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.shape()[1];
    for (int i = 0; i < m; ++i) {
      std::copy_n(p.data().data() + static_cast<size_t>(i) * w, w,
                  out.data().data() + static_cast<size_t>(i) * n + off);
    }
    off += w;
  }
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    g_tape.record(on, [nodes, on, m, n] {
      int off2 = 0;
      for (const auto& pn : nodes) {
        const int w = pn->shape[1];
        if (pn->requires_grad) {
          ensure_grad(pn);
          for (int i = 0; i < m; ++i) {
            const double* g = on->grad.data() + static_cast<size_t>(i) * n + off2;
            double* gp = pn->grad.data() + static_cast<size_t>(i) * w;
            for (int j = 0; j < w; ++j) gp[j] += g[j];
          }
        }
        off2 += w;
      }
    });
  }
  return out;
}

Tensor group_mean_rows(const Tensor& x, int group_len) {
  if (x.shape().size() != 2) throw std::invalid_argument("group_mean_rows: expected a 2-D tensor");
  if (group_len < 1) {
    throw std::invalid_argument("group_mean_rows: group length must be >= 1, got " +
                                std::to_string(group_len));
  }
  const int m = x.shape()[0], n = x.shape()[1];
  const int groups = (m + group_len - 1) / group_len;
  Tensor out = make_result({groups, n}, track(x));
  for (int g = 0; g < groups; ++g) {
    const int lo = g * group_len;
    const int hi = std::min(m, lo + group_len);
    double* orow = out.data().data() + static_cast<size_t>(g) * n;
    for (int i = lo; i < hi; ++i) {
      const double* row = x.data().data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += row[j];
    }
    // true division: bit-identical to a sum-then-divide reference
    for (int j = 0; j < n; ++j) orow[j] /= (hi - lo);
  }
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    g_tape.record(on, [xn, on, m, n, group_len, groups] {
      ensure_grad(xn);
      for (int g = 0; g < groups; ++g) {
        const int lo = g * group_len;
        const int hi = std::min(m, lo + group_len);
        const double inv = 1.0 / (hi - lo);
        const double* grow = on->grad.data() + static_cast<size_t>(g) * n;
        for (int i = lo; i < hi; ++i) {
          double* gx = xn->grad.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) gx[j] += grow[j] * inv;
        }
      }
    });
  }
  return out;
}

// ----------------------------- losses / reductions --------------------------

namespace {

// per-row stabilized -log p[target]; also writes log-sum-exp terms if asked
void nll_rows(const Tensor& logits, const std::vector<int>& targets, std::vector<double>& out) {
  const int m = logits.shape()[0], v = logits.shape()[1];
  if (static_cast<int>(targets.size()) != m) {
    throw std::invalid_argument("cross entropy: got " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(m) + " rows");
  }
  out.resize(m);
  for (int i = 0; i < m; ++i) {
    const int t = targets[i];
    if (t < 0 || t >= v) {
      throw std::out_of_range("cross entropy: target id " + std::to_string(t) + " at row " +
                              std::to_string(i) + " outside vocabulary of " + std::to_string(v));
    }
    const double* row = logits.data().data() + static_cast<size_t>(i) * v;
    double maxv = row[0];
    for (int j = 1; j < v; ++j) maxv = std::max(maxv, row[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) denom += std::exp(row[j] - maxv);
    out[i] = maxv + std::log(denom) - row[t];
  }
}

}  // namespace

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.shape().size() != 2) {
    throw std::invalid_argument("cross_entropy_mean: logits must be 2-D");
  }
  std::vector<double> nll;
  nll_rows(logits, targets, nll);
  double total = 0.0;
  for (double x : nll) total += x;
  const int m = logits.shape()[0], v = logits.shape()[1];
  Tensor out = Tensor::from_data({1}, {total / m});
  out.set_requires_grad(track(logits));
  if (out.requires_grad()) {
    auto ln = logits.node(), on = out.node();
    g_tape.record(on, [ln, on, targets, m, v] {
      ensure_grad(ln);
      const double g = on->grad[0] / m;
      for (int i = 0; i < m; ++i) {
        const double* row = ln->data.data() + static_cast<size_t>(i) * v;
        double* grow = ln->grad.data() + static_cast<size_t>(i) * v;
        double maxv = row[0];
        for (int j = 1; j < v; ++j) maxv = std::max(maxv, row[j]);
        double denom = 0.0;
        for (int j = 0; j < v; ++j) denom += std::exp(row[j] - maxv);
        for (int j = 0; j < v; ++j) grow[j] += g * std::exp(row[j] - maxv) / denom;
        grow[targets[i]] -= g;
      }
    });
  }
  return out;
}

std::vector<double> row_nll(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.shape().size() != 2) throw std::invalid_argument("row_nll: logits must be 2-D");
  std::vector<double> nll;
  nll_rows(logits, targets, nll);
  return nll;
}

Tensor sum_all(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::from_data({1}, {total});
  out.set_requires_grad(track(x));
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    g_tape.record(on, [xn, on] {
      ensure_grad(xn);
      for (auto& g : xn->grad) g += on->grad[0];
    });
  }
  return out;
}

}  // namespace gmsa
