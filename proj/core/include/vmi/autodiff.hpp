#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vmi/tensor.hpp"

namespace vmi::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Value {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class OpKind {
  leaf,
  matmul,
  add,
  mul,
  scale,
  tanh_fn,
  elu_fn,
  sigmoid_fn,
  exp_fn,
  log_fn,
  sum_all,
  sum_axis,
  mean_all,
  concat_cols,
  slice_cols,
  permute_cols,
  gather_rows,
  softmax_log_prob,
  gauss_reparam,
};

const char* op_name(OpKind k);

// Single-use reverse-mode tape. Nodes are appended in forward order, so
// parents always precede children; backward() walks the list in reverse.
// One tape belongs to one thread; distinct tapes are independent.
//
// Any op producing a non-finite entry throws immediately, naming the node,
// so a diverging optimization step fails loudly instead of spreading NaNs.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value leaf(Tensor t, std::string name = {});

  const Tensor& value(Value v) const;
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar root. Adjoints of nodes the root does not
  // depend on are zero. May be called repeatedly (adjoints reset each time).
  void backward(Value root);

  // Adjoint of v after backward(); throws if backward has not run.
  const Tensor& grad(Value v) const;

  std::string node_label(int id) const;

 private:
  friend struct NodeAccess;

  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<int> parents;
    Tensor value;
    std::string name;
    // Op-specific payload.
    std::vector<std::size_t> index_aux;  // permutation / gathered rows / slice bounds
    std::vector<int> labels;             // softmax_log_prob targets
    Tensor cached;                       // softmax probabilities, etc.
    double scalar_aux = 0.0;             // scale factor
    int int_aux = 0;                     // axis
  };

  int check(Value v) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
  bool has_grads_ = false;
};

// Registered operations. Inputs must be 2-d tensors on the same tape.
Value matmul(Value a, Value b);
// add/mul accept equal shapes or an (n x d, 1 x d) row-broadcast pair.
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value scale(Value a, double c);
Value neg(Value a);
Value tanh(Value a);
Value elu(Value a);      // alpha = 1
Value sigmoid(Value a);
Value exp(Value a);
Value log(Value a);      // strictly positive inputs
Value sum(Value a);                 // -> 1x1
Value sum(Value a, int axis);       // axis 0 -> 1xd, axis 1 -> nx1
Value mean(Value a);                // -> 1x1
Value mean(Value a, int axis);
Value concat_cols(Value a, Value b);
Value slice_cols(Value a, std::size_t begin, std::size_t end);  // [begin, end)
Value permute_cols(Value a, const std::vector<std::size_t>& perm);
Value gather_rows(Value a, const std::vector<std::size_t>& rows);
// Per-row log softmax probability of the given label: (n x C, n) -> n x 1.
Value softmax_log_prob(Value logits, const std::vector<int>& labels);
// mu + exp(log_std) * eps; mu/log_std are 1 x d (broadcast over rows of eps)
// or match eps elementwise.
Value gauss_reparam(Value mu, Value log_std, Value eps);

// log sigmoid(t), columnwise stable via the two-class log-softmax identity.
Value log_sigmoid(Value t);

// Scalar objective: builds the computation for one evaluation point on a
// fresh tape. Must be deterministic in the point (fix any noise outside).
using ScalarFn = std::function<Value(Tape&, Value)>;

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |central| + 1e-12), with the analytic gradient taken from
// the tape and the central difference recomputed per coordinate.
double finite_diff_check(const ScalarFn& f, const Tensor& point, double eps);

}  // namespace vmi::ad
