#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "asmmd/rng.hpp"
#include "asmmd/tensor.hpp"

namespace asmmd {

enum class Mode { train, eval };

struct Node;

/// Handle to a node of the reverse-mode differentiation graph. Copying a
/// Value copies the handle, not the tensor.
class Value {
 public:
  Value() = default;

  /// Wraps a tensor as a graph leaf. Parameters pass requires_grad = true.
  static Value leaf(Tensor t, bool requires_grad = false,
                    std::string name = "leaf");

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const;
  /// Mutable access for optimizer updates. Only meaningful on leaves and
  /// only between backward passes.
  Tensor& mutable_val();
  const Tensor& grad() const;
  bool has_grad() const;
  bool requires_grad() const;
  void zero_grad();
  const std::string& op() const;

  Node* raw() const { return node_.get(); }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Value(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  std::vector<Value> parents;
  // Reads this->grad and accumulates into the parents' grads. Empty on
  // leaves. Must be linear in this->grad.
  std::function<void(Node&)> backward;
  std::string op = "leaf";
  bool requires_grad = false;

  Tensor& ensure_grad();
  void accumulate(const Tensor& g);
};

/// Builds an operation node. `parents` are the differentiable inputs; the
/// node requires grad iff any parent does. This is the extension point used
/// by the normalization, kernel and loss modules for their fused operations.
Value make_op(Tensor out, std::vector<Value> parents, std::string op,
              std::function<void(Node&)> backward);

/// Reverse pass from a scalar root. Gradients accumulate (+=) into every
/// reachable node with requires_grad; leaves keep them until zero_grad.
void backward(const Value& root);

/// Nodes reachable from `root` in topological order (parents first).
std::vector<Node*> topo_order(const Value& root);

/// Throws NumericError naming the first operation whose value holds a NaN
/// or infinity.
void check_finite(const Value& root);

// Elementwise and linear algebra primitives.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double c);
Value add_bias(const Value& x, const Value& b);   // broadcast over last axis
Value add_rows(const Value& x, const Value& r);   // (B,T,D) + (T,D)
Value matmul(const Value& a, const Value& b);     // (M,K) x (K,N)
Value bmm(const Value& a, const Value& b, bool trans_b = false);
Value gelu(const Value& x);                       // exact erf form
Value softmax_lastdim(const Value& x);
Value layer_norm(const Value& x, const Value& gamma, const Value& beta,
                 double eps = 1e-5);
Value dropout(const Value& x, double p, Rng& rng, Mode mode);

/// 1-D valid cross-correlation, channels last. x is (N, T, C), w is
/// (F, K, C) flattened kernel-major, b is (F); output (N, T_out, F) with
/// T_out = floor((T - K) / stride) + 1.
Value conv1d_valid(const Value& x, const Value& w, const Value& b,
                   std::int64_t stride = 1);

/// Mean pooling over the time axis of (N, T, F), windows may overlap.
Value avg_pool1d(const Value& x, std::int64_t window, std::int64_t stride);

// Reductions.
Value sum_all(const Value& x);
Value mean_all(const Value& x);
Value var_biased(const Value& x);  // population variance, scalar
Value mean_axis(const Value& x, int axis);

// Shape manipulation (both copy; gradients flow through).
Value reshape(const Value& x, std::vector<std::int64_t> shape);
Value transpose(const Value& x, int axis_a, int axis_b);

/// Central-difference gradient verification. `f` must rebuild its graph
/// from the given leaves on every call and be deterministic between calls.
/// Returns the largest relative error |analytic - numeric| / max(1, |numeric|)
/// over every element of every leaf, and the leaf name where it occurred.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_leaf;
  std::int64_t checked = 0;
};
GradCheckResult grad_check(const std::function<Value()>& f,
                           std::span<Value> leaves, double step = 1e-4);

}  // namespace asmmd
