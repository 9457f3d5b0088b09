#include "asmmd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <unordered_set>
#include <utility>

#include "asmmd/errors.hpp"
#include "asmmd/gemm.hpp"

namespace asmmd {

namespace {

void check_defined(const Value& v, const char* op) {
  if (!v.defined()) throw ValueError(std::string(op) + ": undefined value");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
}

// dst += s * g over flat storage.
void axpy(Tensor& dst, const Tensor& g, double s) {
  double* d = dst.ptr();
  const double* p = g.ptr();
  const std::int64_t n = g.numel();
  for (std::int64_t i = 0; i < n; ++i) d[i] += s * p[i];
}

}  // namespace

Value Value::leaf(Tensor t, bool requires_grad, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = requires_grad;
  n->op = std::move(name);
  return Value(std::move(n));
}

const Tensor& Value::val() const {
  if (!node_) throw ValueError("Value: access to undefined value");
  return node_->value;
}

Tensor& Value::mutable_val() {
  if (!node_) throw ValueError("Value: access to undefined value");
  return node_->value;
}

const Tensor& Value::grad() const {
  if (!node_) throw ValueError("Value: access to undefined value");
  if (!node_->requires_grad)
    throw ValueError("grad: '" + node_->op + "' does not require gradients");
  return node_->ensure_grad();
}

bool Value::has_grad() const {
  return node_ && !node_->grad.data.empty();
}

bool Value::requires_grad() const { return node_ && node_->requires_grad; }

void Value::zero_grad() {
  if (node_ && !node_->grad.data.empty())
    std::fill(node_->grad.data.begin(), node_->grad.data.end(), 0.0);
}

const std::string& Value::op() const {
  static const std::string undefined = "<undefined>";
  return node_ ? node_->op : undefined;
}

Tensor& Node::ensure_grad() {
  if (grad.data.empty()) grad = Tensor::zeros(value.shape);
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (g.shape != value.shape)
    throw ShapeError("accumulate: gradient shape " + shape_str(g.shape) +
                     " does not match value shape " + shape_str(value.shape));
  axpy(ensure_grad(), g, 1.0);
}

Value make_op(Tensor out, std::vector<Value> parents, std::string op,
              std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  n->op = std::move(op);
  for (const Value& p : parents) {
    check_defined(p, n->op.c_str());
    if (p.requires_grad()) n->requires_grad = true;
  }
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward = std::move(backward);
  return Value(std::move(n));
}

std::vector<Node*> topo_order(const Value& root) {
  check_defined(root, "topo_order");
  std::vector<Node*> order;
  std::unordered_set<const Node*> seen;
  struct Frame {
    Node* node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.raw(), 0});
  seen.insert(root.raw());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      Node* p = f.node->parents[f.next++].raw();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Value& root) {
  const Tensor& v = root.val();
  if (v.numel() != 1)
    throw ShapeError("backward: root is not a scalar (shape " +
                     shape_str(v.shape) + ")");
  std::vector<Node*> order = topo_order(root);
  root.raw()->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->requires_grad || !n->backward) continue;
    if (n->grad.data.empty()) continue;  // nothing flowed into this node
    n->backward(*n);
  }
}

void check_finite(const Value& root) {
  for (Node* n : topo_order(root)) {
    if (!n->value.all_finite())
      throw NumericError("non-finite value in '" + n->op + "' output (shape " +
                         shape_str(n->value.shape) + ")");
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

Value add(const Value& a, const Value& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  check_same_shape("add", a.val(), b.val());
  Tensor out = a.val();
  axpy(out, b.val(), 1.0);
  return make_op(std::move(out), {a, b}, "add", [](Node& self) {
    for (int i = 0; i < 2; ++i)
      if (self.parents[i].requires_grad())
        self.parents[i].raw()->accumulate(self.grad);
  });
}

Value sub(const Value& a, const Value& b) {
  check_defined(a, "sub");
  check_defined(b, "sub");
  check_same_shape("sub", a.val(), b.val());
  Tensor out = a.val();
  axpy(out, b.val(), -1.0);
  return make_op(std::move(out), {a, b}, "sub", [](Node& self) {
    if (self.parents[0].requires_grad())
      self.parents[0].raw()->accumulate(self.grad);
    if (self.parents[1].requires_grad())
      axpy(self.parents[1].raw()->ensure_grad(), self.grad, -1.0);
  });
}

Value mul(const Value& a, const Value& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  check_same_shape("mul", a.val(), b.val());
  Tensor out = a.val();
  const double* pb = b.val().ptr();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
  return make_op(std::move(out), {a, b}, "mul", [](Node& self) {
    const Tensor& g = self.grad;
    const std::int64_t n = g.numel();
    for (int which = 0; which < 2; ++which) {
      if (!self.parents[which].requires_grad()) continue;
      const double* other = self.parents[1 - which].val().ptr();
      double* d = self.parents[which].raw()->ensure_grad().ptr();
      const double* gp = g.ptr();
      for (std::int64_t i = 0; i < n; ++i) d[i] += gp[i] * other[i];
    }
  });
}

Value scale(const Value& a, double c) {
  check_defined(a, "scale");
  Tensor out = a.val();
  for (double& x : out.data) x *= c;
  return make_op(std::move(out), {a}, "scale", [c](Node& self) {
    if (self.parents[0].requires_grad())
      axpy(self.parents[0].raw()->ensure_grad(), self.grad, c);
  });
}

Value add_bias(const Value& x, const Value& b) {
  check_defined(x, "add_bias");
  check_defined(b, "add_bias");
  const Tensor& xt = x.val();
  const Tensor& bt = b.val();
  if (xt.rank() < 1 || bt.rank() != 1 || xt.shape.back() != bt.dim(0))
    throw ShapeError("add_bias: bias " + shape_str(bt.shape) +
                     " does not match last axis of " + shape_str(xt.shape));
  const std::int64_t f = bt.dim(0);
  const std::int64_t rows = xt.numel() / f;
  Tensor out = xt;
  double* o = out.ptr();
  const double* bp = bt.ptr();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < f; ++j) o[r * f + j] += bp[j];
  return make_op(std::move(out), {x, b}, "add_bias", [f, rows](Node& self) {
    if (self.parents[0].requires_grad())
      self.parents[0].raw()->accumulate(self.grad);
    if (self.parents[1].requires_grad()) {
      double* db = self.parents[1].raw()->ensure_grad().ptr();
      const double* g = self.grad.ptr();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < f; ++j) db[j] += g[r * f + j];
    }
  });
}

Value add_rows(const Value& x, const Value& r) {
  check_defined(x, "add_rows");
  check_defined(r, "add_rows");
  const Tensor& xt = x.val();
  const Tensor& rt = r.val();
  if (xt.rank() != 3 || rt.rank() != 2 || xt.dim(1) != rt.dim(0) ||
      xt.dim(2) != rt.dim(1))
    throw ShapeError("add_rows: " + shape_str(rt.shape) +
                     " does not broadcast over " + shape_str(xt.shape));
  const std::int64_t batch = xt.dim(0);
  const std::int64_t block = rt.numel();
  Tensor out = xt;
  for (std::int64_t i = 0; i < batch; ++i) {
    double* dst = out.ptr() + i * block;
    const double* src = rt.ptr();
    for (std::int64_t j = 0; j < block; ++j) dst[j] += src[j];
  }
  return make_op(std::move(out), {x, r}, "add_rows",
                 [batch, block](Node& self) {
                   if (self.parents[0].requires_grad())
                     self.parents[0].raw()->accumulate(self.grad);
                   if (self.parents[1].requires_grad()) {
                     double* dr = self.parents[1].raw()->ensure_grad().ptr();
                     const double* g = self.grad.ptr();
                     for (std::int64_t i = 0; i < batch; ++i)
                       for (std::int64_t j = 0; j < block; ++j)
                         dr[j] += g[i * block + j];
                   }
                 });
}

// ---------------------------------------------------------------------------
// Linear algebra

Value matmul(const Value& a, const Value& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  const Tensor& at = a.val();
  const Tensor& bt = b.val();
  if (at.rank() != 2 || bt.rank() != 2 || at.dim(1) != bt.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(at.shape) +
                     " and " + shape_str(bt.shape));
  const std::int64_t m = at.dim(0), k = at.dim(1), n = bt.dim(1);
  Tensor out = Tensor::zeros({m, n});
  gemm(false, false, m, n, k, 1.0, at.ptr(), k, bt.ptr(), n, 0.0, out.ptr(), n);
  return make_op(std::move(out), {a, b}, "matmul", [m, n, k](Node& self) {
    const double* g = self.grad.ptr();
    if (self.parents[0].requires_grad()) {
      double* da = self.parents[0].raw()->ensure_grad().ptr();
      const double* bp = self.parents[1].val().ptr();
      gemm(false, true, m, k, n, 1.0, g, n, bp, n, 1.0, da, k);
    }
    if (self.parents[1].requires_grad()) {
      double* db = self.parents[1].raw()->ensure_grad().ptr();
      const double* ap = self.parents[0].val().ptr();
      gemm(true, false, k, n, m, 1.0, ap, k, g, n, 1.0, db, n);
    }
  });
}

Value bmm(const Value& a, const Value& b, bool trans_b) {
  check_defined(a, "bmm");
  check_defined(b, "bmm");
  const Tensor& at = a.val();
  const Tensor& bt = b.val();
  if (at.rank() != 3 || bt.rank() != 3 || at.dim(0) != bt.dim(0))
    throw ShapeError("bmm: incompatible shapes " + shape_str(at.shape) +
                     " and " + shape_str(bt.shape));
  const std::int64_t batch = at.dim(0), m = at.dim(1), k = at.dim(2);
  const std::int64_t n = trans_b ? bt.dim(1) : bt.dim(2);
  const std::int64_t bk = trans_b ? bt.dim(2) : bt.dim(1);
  if (bk != k)
    throw ShapeError("bmm: incompatible shapes " + shape_str(at.shape) +
                     " and " + shape_str(bt.shape));
  Tensor out = Tensor::zeros({batch, m, n});
  const std::int64_t ldb = trans_b ? k : n;
  for (std::int64_t i = 0; i < batch; ++i)
    gemm(false, trans_b, m, n, k, 1.0, at.ptr() + i * m * k, k,
         bt.ptr() + i * (trans_b ? n * k : k * n), ldb, 0.0,
         out.ptr() + i * m * n, n);
  return make_op(
      std::move(out), {a, b}, "bmm",
      [batch, m, n, k, trans_b, ldb](Node& self) {
        const double* g = self.grad.ptr();
        const double* ap = self.parents[0].val().ptr();
        const double* bp = self.parents[1].val().ptr();
        const std::int64_t bstep = trans_b ? n * k : k * n;
        if (self.parents[0].requires_grad()) {
          double* da = self.parents[0].raw()->ensure_grad().ptr();
          for (std::int64_t i = 0; i < batch; ++i) {
            // da += g * op(b)^T
            gemm(false, !trans_b, m, k, n, 1.0, g + i * m * n, n,
                 bp + i * bstep, ldb, 1.0, da + i * m * k, k);
          }
        }
        if (self.parents[1].requires_grad()) {
          double* db = self.parents[1].raw()->ensure_grad().ptr();
          for (std::int64_t i = 0; i < batch; ++i) {
            if (!trans_b) {
              // db += a^T * g
              gemm(true, false, k, n, m, 1.0, ap + i * m * k, k, g + i * m * n,
                   n, 1.0, db + i * bstep, n);
            } else {
              // out = a * b^T, so db += g^T * a
              gemm(true, false, n, k, m, 1.0, g + i * m * n, n, ap + i * m * k,
                   k, 1.0, db + i * bstep, k);
            }
          }
        }
      });
}

Value conv1d_valid(const Value& x, const Value& w, const Value& b,
                   std::int64_t stride) {
  check_defined(x, "conv1d_valid");
  check_defined(w, "conv1d_valid");
  check_defined(b, "conv1d_valid");
  const Tensor& xt = x.val();
  const Tensor& wt = w.val();
  const Tensor& bt = b.val();
  if (xt.rank() != 3 || wt.rank() != 3)
    throw ShapeError("conv1d_valid: input " + shape_str(xt.shape) +
                     ", weight " + shape_str(wt.shape));
  const std::int64_t batch = xt.dim(0), t_in = xt.dim(1), c = xt.dim(2);
  const std::int64_t f = wt.dim(0), k = wt.dim(1);
  if (wt.dim(2) != c)
    throw ShapeError("conv1d_valid: weight channels " + shape_str(wt.shape) +
                     " do not match input " + shape_str(xt.shape));
  if (bt.rank() != 1 || bt.dim(0) != f)
    throw ShapeError("conv1d_valid: bias " + shape_str(bt.shape) + " for " +
                     std::to_string(f) + " filters");
  if (stride < 1) throw ValueError("conv1d_valid: stride must be positive");
  if (k > t_in)
    throw ShapeError("conv1d_valid: kernel " + std::to_string(k) +
                     " longer than input " + std::to_string(t_in));
  const std::int64_t t_out = (t_in - k) / stride + 1;
  const std::int64_t rows = batch * t_out;
  const std::int64_t kc = k * c;

  // Adjacent time rows are contiguous, so each im2col row is one block copy.
  // A kernel of length 1 with unit stride needs no copy at all.
  const bool identity_cols = (k == 1 && stride == 1);
  Tensor col;
  if (!identity_cols) {
    col = Tensor::zeros({rows, kc});
    for (std::int64_t nb = 0; nb < batch; ++nb)
      for (std::int64_t to = 0; to < t_out; ++to)
        std::memcpy(col.ptr() + (nb * t_out + to) * kc,
                    xt.ptr() + (nb * t_in + to * stride) * c,
                    static_cast<std::size_t>(kc) * sizeof(double));
  }
  const double* colp = identity_cols ? xt.ptr() : col.ptr();

  Tensor out = Tensor::zeros({batch, t_out, f});
  gemm(false, true, rows, f, kc, 1.0, colp, kc, wt.ptr(), kc, 0.0, out.ptr(),
       f);
  {
    double* o = out.ptr();
    const double* bp = bt.ptr();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < f; ++j) o[r * f + j] += bp[j];
  }

  return make_op(
      std::move(out), {x, w, b}, "conv1d_valid",
      [col = std::move(col), identity_cols, batch, t_in, t_out, c, f, k, kc,
       stride](Node& self) {
        const std::int64_t rows = batch * t_out;
        const double* g = self.grad.ptr();
        const Tensor& xt = self.parents[0].val();
        const Tensor& wt = self.parents[1].val();
        const double* colp = identity_cols ? xt.ptr() : col.ptr();
        if (self.parents[2].requires_grad()) {
          double* db = self.parents[2].raw()->ensure_grad().ptr();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < f; ++j) db[j] += g[r * f + j];
        }
        if (self.parents[1].requires_grad()) {
          double* dw = self.parents[1].raw()->ensure_grad().ptr();
          gemm(true, false, f, kc, rows, 1.0, g, f, colp, kc, 1.0, dw, kc);
        }
        if (self.parents[0].requires_grad()) {
          double* dx = self.parents[0].raw()->ensure_grad().ptr();
          if (identity_cols) {
            gemm(false, false, rows, kc, f, 1.0, g, f, wt.ptr(), kc, 1.0, dx,
                 kc);
          } else {
            Tensor dcol = Tensor::zeros({rows, kc});
            gemm(false, false, rows, kc, f, 1.0, g, f, wt.ptr(), kc, 0.0,
                 dcol.ptr(), kc);
            for (std::int64_t nb = 0; nb < batch; ++nb)
              for (std::int64_t to = 0; to < t_out; ++to) {
                double* dst = dx + (nb * t_in + to * stride) * c;
                const double* src = dcol.ptr() + (nb * t_out + to) * kc;
                for (std::int64_t i = 0; i < kc; ++i) dst[i] += src[i];
              }
          }
        }
      });
}

Value avg_pool1d(const Value& x, std::int64_t window, std::int64_t stride) {
  check_defined(x, "avg_pool1d");
  const Tensor& xt = x.val();
  if (xt.rank() != 3)
    throw ShapeError("avg_pool1d: expected rank 3, got " + shape_str(xt.shape));
  if (window < 1 || stride < 1)
    throw ValueError("avg_pool1d: window and stride must be positive");
  const std::int64_t batch = xt.dim(0), t_in = xt.dim(1), f = xt.dim(2);
  if (window > t_in)
    throw ShapeError("avg_pool1d: window " + std::to_string(window) +
                     " longer than input " + std::to_string(t_in));
  const std::int64_t t_out = (t_in - window) / stride + 1;
  Tensor out = Tensor::zeros({batch, t_out, f});
  const double inv = 1.0 / static_cast<double>(window);
  for (std::int64_t nb = 0; nb < batch; ++nb)
    for (std::int64_t to = 0; to < t_out; ++to) {
      double* o = out.ptr() + (nb * t_out + to) * f;
      for (std::int64_t kk = 0; kk < window; ++kk) {
        const double* src = xt.ptr() + (nb * t_in + to * stride + kk) * f;
        for (std::int64_t j = 0; j < f; ++j) o[j] += src[j];
      }
      for (std::int64_t j = 0; j < f; ++j) o[j] *= inv;
    }
  return make_op(std::move(out), {x}, "avg_pool1d",
                 [batch, t_in, t_out, f, window, stride](Node& self) {
                   if (!self.parents[0].requires_grad()) return;
                   double* dx = self.parents[0].raw()->ensure_grad().ptr();
                   const double* g = self.grad.ptr();
                   const double inv = 1.0 / static_cast<double>(window);
                   for (std::int64_t nb = 0; nb < batch; ++nb)
                     for (std::int64_t to = 0; to < t_out; ++to) {
                       const double* gi = g + (nb * t_out + to) * f;
                       for (std::int64_t kk = 0; kk < window; ++kk) {
                         double* dst =
                             dx + (nb * t_in + to * stride + kk) * f;
                         for (std::int64_t j = 0; j < f; ++j)
                           dst[j] += gi[j] * inv;
                       }
                     }
                 });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

Value gelu(const Value& x) {
  check_defined(x, "gelu");
  Tensor out = x.val();
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * (1.0 / std::numbers::sqrt2)));
  return make_op(std::move(out), {x}, "gelu", [](Node& self) {
    if (!self.parents[0].requires_grad()) return;
    const Tensor& xt = self.parents[0].val();
    double* dx = self.parents[0].raw()->ensure_grad().ptr();
    const double* g = self.grad.ptr();
    const double* xp = xt.ptr();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::int64_t i = 0; i < xt.numel(); ++i) {
      const double v = xp[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * (1.0 / std::numbers::sqrt2)));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Value softmax_lastdim(const Value& x) {
  check_defined(x, "softmax");
  const Tensor& xt = x.val();
  if (xt.rank() < 1) throw ShapeError("softmax: scalar input");
  const std::int64_t f = xt.shape.back();
  const std::int64_t rows = xt.numel() / f;
  Tensor out = xt;
  double* o = out.ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = o + r * f;
    double mx = row[0];
    for (std::int64_t j = 1; j < f; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < f; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (std::int64_t j = 0; j < f; ++j) row[j] *= inv;
  }
  return make_op(std::move(out), {x}, "softmax", [f, rows](Node& self) {
    if (!self.parents[0].requires_grad()) return;
    double* dx = self.parents[0].raw()->ensure_grad().ptr();
    const double* g = self.grad.ptr();
    const double* y = self.value.ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* gr = g + r * f;
      const double* yr = y + r * f;
      double dot = 0.0;
      for (std::int64_t j = 0; j < f; ++j) dot += gr[j] * yr[j];
      double* dr = dx + r * f;
      for (std::int64_t j = 0; j < f; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Value layer_norm(const Value& x, const Value& gamma, const Value& beta,
                 double eps) {
  check_defined(x, "layer_norm");
  check_defined(gamma, "layer_norm");
  check_defined(beta, "layer_norm");
  const Tensor& xt = x.val();
  const Tensor& gt = gamma.val();
  const Tensor& bt = beta.val();
  const std::int64_t f = xt.shape.empty() ? 0 : xt.shape.back();
  if (gt.rank() != 1 || bt.rank() != 1 || gt.dim(0) != f || bt.dim(0) != f)
    throw ShapeError("layer_norm: parameters " + shape_str(gt.shape) + "/" +
                     shape_str(bt.shape) + " for last axis of " +
                     shape_str(xt.shape));
  const std::int64_t rows = xt.numel() / f;
  Tensor out = Tensor::zeros(xt.shape);
  Tensor mean = Tensor::zeros({rows});
  Tensor inv_std = Tensor::zeros({rows});
  const double* xp = xt.ptr();
  const double* gp = gt.ptr();
  const double* bp = bt.ptr();
  double* o = out.ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = xp + r * f;
    double m = 0.0;
    for (std::int64_t j = 0; j < f; ++j) m += row[j];
    m /= static_cast<double>(f);
    double v = 0.0;
    for (std::int64_t j = 0; j < f; ++j) {
      const double d = row[j] - m;
      v += d * d;
    }
    v /= static_cast<double>(f);
    const double inv = 1.0 / std::sqrt(v + eps);
    mean[r] = m;
    inv_std[r] = inv;
    double* orow = o + r * f;
    for (std::int64_t j = 0; j < f; ++j)
      orow[j] = gp[j] * (row[j] - m) * inv + bp[j];
  }
  return make_op(
      std::move(out), {x, gamma, beta}, "layer_norm",
      [mean = std::move(mean), inv_std = std::move(inv_std), f,
       rows](Node& self) {
        const double* g = self.grad.ptr();
        const double* xp = self.parents[0].val().ptr();
        const double* gp = self.parents[1].val().ptr();
        const bool need_x = self.parents[0].requires_grad();
        const bool need_g = self.parents[1].requires_grad();
        const bool need_b = self.parents[2].requires_grad();
        double* dx = need_x ? self.parents[0].raw()->ensure_grad().ptr() : nullptr;
        double* dg = need_g ? self.parents[1].raw()->ensure_grad().ptr() : nullptr;
        double* db = need_b ? self.parents[2].raw()->ensure_grad().ptr() : nullptr;
        const double invf = 1.0 / static_cast<double>(f);
        std::vector<double> xhat(static_cast<std::size_t>(f));
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* xrow = xp + r * f;
          const double* grow = g + r * f;
          const double m = mean[r];
          const double inv = inv_std[r];
          for (std::int64_t j = 0; j < f; ++j)
            xhat[static_cast<std::size_t>(j)] = (xrow[j] - m) * inv;
          if (need_g)
            for (std::int64_t j = 0; j < f; ++j)
              dg[j] += grow[j] * xhat[static_cast<std::size_t>(j)];
          if (need_b)
            for (std::int64_t j = 0; j < f; ++j) db[j] += grow[j];
          if (need_x) {
            double s1 = 0.0, s2 = 0.0;
            for (std::int64_t j = 0; j < f; ++j) {
              const double dxh = grow[j] * gp[j];
              s1 += dxh;
              s2 += dxh * xhat[static_cast<std::size_t>(j)];
            }
            double* drow = dx + r * f;
            for (std::int64_t j = 0; j < f; ++j) {
              const double dxh = grow[j] * gp[j];
              drow[j] += inv * (dxh - invf * s1 -
                               xhat[static_cast<std::size_t>(j)] * invf * s2);
            }
          }
        }
      });
}

Value dropout(const Value& x, double p, Rng& rng, Mode mode) {
  check_defined(x, "dropout");
  if (p < 0.0 || p >= 1.0)
    throw ValueError("dropout: rate must be in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  const Tensor& xt = x.val();
  Tensor mask = Tensor::zeros(xt.shape);
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = xt;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return make_op(std::move(out), {x}, "dropout",
                 [mask = std::move(mask)](Node& self) {
                   if (!self.parents[0].requires_grad()) return;
                   double* dx = self.parents[0].raw()->ensure_grad().ptr();
                   const double* g = self.grad.ptr();
                   const double* m = mask.ptr();
                   for (std::int64_t i = 0; i < self.grad.numel(); ++i)
                     dx[i] += g[i] * m[i];
                 });
}

// ---------------------------------------------------------------------------
// Reductions

Value sum_all(const Value& x) {
  check_defined(x, "sum");
  const Tensor& xt = x.val();
  double s = 0.0;
  for (double v : xt.data) s += v;
  return make_op(Tensor::scalar(s), {x}, "sum", [](Node& self) {
    if (!self.parents[0].requires_grad()) return;
    double* dx = self.parents[0].raw()->ensure_grad().ptr();
    const double g = self.grad[0];
    for (std::int64_t i = 0; i < self.parents[0].val().numel(); ++i) dx[i] += g;
  });
}

Value mean_all(const Value& x) {
  check_defined(x, "mean");
  const Tensor& xt = x.val();
  if (xt.numel() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : xt.data) s += v;
  const double inv = 1.0 / static_cast<double>(xt.numel());
  return make_op(Tensor::scalar(s * inv), {x}, "mean", [inv](Node& self) {
    if (!self.parents[0].requires_grad()) return;
    double* dx = self.parents[0].raw()->ensure_grad().ptr();
    const double g = self.grad[0] * inv;
    for (std::int64_t i = 0; i < self.parents[0].val().numel(); ++i) dx[i] += g;
  });
}

Value var_biased(const Value& x) {
  check_defined(x, "var_biased");
  const Tensor& xt = x.val();
  const std::int64_t n = xt.numel();
  if (n == 0) throw ShapeError("var_biased: empty tensor");
  double m = 0.0;
  for (double v : xt.data) m += v;
  m /= static_cast<double>(n);
  double s = 0.0;
  for (double v : xt.data) {
    const double d = v - m;
    s += d * d;
  }
  const double invn = 1.0 / static_cast<double>(n);
  return make_op(Tensor::scalar(s * invn), {x}, "var_biased",
                 [m, invn](Node& self) {
                   if (!self.parents[0].requires_grad()) return;
                   const Tensor& xt = self.parents[0].val();
                   double* dx = self.parents[0].raw()->ensure_grad().ptr();
                   const double g = self.grad[0];
                   for (std::int64_t i = 0; i < xt.numel(); ++i)
                     dx[i] += g * 2.0 * (xt[i] - m) * invn;
                 });
}

Value mean_axis(const Value& x, int axis) {
  check_defined(x, "mean_axis");
  const Tensor& xt = x.val();
  if (axis < 0 || axis >= xt.rank())
    throw ShapeError("mean_axis: axis " + std::to_string(axis) + " for " +
                     shape_str(xt.shape));
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= xt.dim(i);
  for (int i = axis + 1; i < xt.rank(); ++i) inner *= xt.dim(i);
  const std::int64_t len = xt.dim(axis);
  if (len == 0) throw ShapeError("mean_axis: empty axis");
  std::vector<std::int64_t> out_shape;
  for (int i = 0; i < xt.rank(); ++i)
    if (i != axis) out_shape.push_back(xt.dim(i));
  if (out_shape.empty()) out_shape = {1};
  Tensor out = Tensor::zeros(out_shape);
  const double inv = 1.0 / static_cast<double>(len);
  const double* xp = xt.ptr();
  double* o = out.ptr();
  for (std::int64_t a = 0; a < outer; ++a)
    for (std::int64_t l = 0; l < len; ++l) {
      const double* src = xp + (a * len + l) * inner;
      double* dst = o + a * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
    }
  return make_op(std::move(out), {x}, "mean_axis",
                 [outer, len, inner, inv](Node& self) {
                   if (!self.parents[0].requires_grad()) return;
                   double* dx = self.parents[0].raw()->ensure_grad().ptr();
                   const double* g = self.grad.ptr();
                   for (std::int64_t a = 0; a < outer; ++a)
                     for (std::int64_t l = 0; l < len; ++l) {
                       double* dst = dx + (a * len + l) * inner;
                       const double* src = g + a * inner;
                       for (std::int64_t i = 0; i < inner; ++i)
                         dst[i] += src[i] * inv;
                     }
                 });
}

// ---------------------------------------------------------------------------
// Shape ops

Value reshape(const Value& x, std::vector<std::int64_t> shape) {
  check_defined(x, "reshape");
  const Tensor& xt = x.val();
  if (shape_numel(shape) != xt.numel())
    throw ShapeError("reshape: cannot view " + shape_str(xt.shape) + " as " +
                     shape_str(shape));
  Tensor out;
  out.shape = std::move(shape);
  out.data = xt.data;
  return make_op(std::move(out), {x}, "reshape", [](Node& self) {
    if (!self.parents[0].requires_grad()) return;
    Tensor& dx = self.parents[0].raw()->ensure_grad();
    const double* g = self.grad.ptr();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) dx[i] += g[i];
  });
}

namespace {

// Swap of two axes expressed as a 5-d view (pre, A, mid, B, post); the post
// block is contiguous in both source and destination.
void transpose_copy(const Tensor& src, Tensor& dst, std::int64_t pre,
                    std::int64_t da, std::int64_t mid, std::int64_t db,
                    std::int64_t post) {
  const double* s = src.ptr();
  double* d = dst.ptr();
  for (std::int64_t p = 0; p < pre; ++p)
    for (std::int64_t ia = 0; ia < da; ++ia)
      for (std::int64_t im = 0; im < mid; ++im)
        for (std::int64_t ib = 0; ib < db; ++ib) {
          const std::int64_t si = (((p * da + ia) * mid + im) * db + ib) * post;
          const std::int64_t di = (((p * db + ib) * mid + im) * da + ia) * post;
          std::memcpy(d + di, s + si,
                      static_cast<std::size_t>(post) * sizeof(double));
        }
}

}  // namespace

Value transpose(const Value& x, int axis_a, int axis_b) {
  check_defined(x, "transpose");
  const Tensor& xt = x.val();
  const int r = xt.rank();
  if (axis_a < 0 || axis_b < 0 || axis_a >= r || axis_b >= r)
    throw ShapeError("transpose: axes " + std::to_string(axis_a) + "," +
                     std::to_string(axis_b) + " for " + shape_str(xt.shape));
  if (axis_a == axis_b) throw ShapeError("transpose: axes must differ");
  const int a = std::min(axis_a, axis_b);
  const int b = std::max(axis_a, axis_b);
  std::int64_t pre = 1, mid = 1, post = 1;
  for (int i = 0; i < a; ++i) pre *= xt.dim(i);
  for (int i = a + 1; i < b; ++i) mid *= xt.dim(i);
  for (int i = b + 1; i < r; ++i) post *= xt.dim(i);
  const std::int64_t da = xt.dim(a), db = xt.dim(b);
  std::vector<std::int64_t> out_shape = xt.shape;
  std::swap(out_shape[static_cast<std::size_t>(a)],
            out_shape[static_cast<std::size_t>(b)]);
  Tensor out = Tensor::zeros(out_shape);
  transpose_copy(xt, out, pre, da, mid, db, post);
  return make_op(std::move(out), {x}, "transpose",
                 [pre, da, mid, db, post](Node& self) {
                   if (!self.parents[0].requires_grad()) return;
                   Tensor back = Tensor::zeros(self.parents[0].val().shape);
                   // the inverse swap has A and B exchanged
                   transpose_copy(self.grad, back, pre, db, mid, da, post);
                   self.parents[0].raw()->accumulate(back);
                 });
}

// ---------------------------------------------------------------------------
// Gradient verification

GradCheckResult grad_check(const std::function<Value()>& f,
                           std::span<Value> leaves, double step) {
  if (step <= 0.0) throw ValueError("grad_check: step must be positive");
  Value out = f();
  if (out.val().numel() != 1)
    throw ShapeError("grad_check: function output is not a scalar");
  check_finite(out);
  for (Value& l : leaves) {
    if (!l.requires_grad())
      throw ValueError("grad_check: leaf '" + l.op() + "' does not require gradients");
    l.zero_grad();
  }
  backward(out);
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (Value& l : leaves) analytic.push_back(l.grad());

  GradCheckResult res;
  const auto eval_scalar = [&]() { return f().val()[0]; };
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& xv = leaves[li].mutable_val();
    for (std::int64_t i = 0; i < xv.numel(); ++i) {
      const double orig = xv[i];
      xv[i] = orig + step;
      const double f_plus = eval_scalar();
      xv[i] = orig - step;
      const double f_minus = eval_scalar();
      xv[i] = orig;
      const double fd = (f_plus - f_minus) / (2.0 * step);
      const double err =
          std::abs(analytic[li][i] - fd) / std::max(1.0, std::abs(fd));
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_leaf = leaves[li].op() + "[" + std::to_string(i) + "]";
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace asmmd
