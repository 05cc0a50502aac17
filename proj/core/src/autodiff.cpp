#include "vmi/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace vmi::ad {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require_matrix(const Tensor& t, const char* op) {
  if (t.ndim() != 2) fail(std::string(op) + ": expected 2-d tensor, got " + t.shape_string());
}

void require_same_tape(Value a, Value b, const char* op) {
  if (a.tape == nullptr || b.tape == nullptr || a.tape != b.tape) {
    fail(std::string(op) + ": values from different tapes");
  }
}

// Broadcast layout for binary elementwise ops: equal shapes, or one side a
// single row broadcast over the other's rows.
struct Broadcast {
  bool a_row = false;
  bool b_row = false;
};

Broadcast binary_layout(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast bc;
  if (a.same_shape(b)) return bc;
  if (a.cols() == b.cols()) {
    if (a.rows() == 1 && b.rows() > 1) {
      bc.a_row = true;
      return bc;
    }
    if (b.rows() == 1 && a.rows() > 1) {
      bc.b_row = true;
      return bc;
    }
  }
  fail(std::string(op) + ": shape mismatch (" + a.shape_string() + " vs " + b.shape_string() + ")");
}

// Build a tensor without the constructor's finite check; the tape's append
// check reports non-finite entries with the node name instead.
struct NonFiniteGuard {
  bool prev = Tensor::nonfinite_allowed();
  NonFiniteGuard() { Tensor::allow_nonfinite(true); }
  ~NonFiniteGuard() { Tensor::allow_nonfinite(prev); }
};

Tensor raw_tensor(std::vector<std::size_t> shape, std::vector<double> data) {
  NonFiniteGuard guard;
  return Tensor(std::move(shape), std::move(data));
}

Tensor reduce_rows_to(const Tensor& g, std::size_t target_rows) {
  if (g.rows() == target_rows) return g;
  Tensor out = Tensor::zeros({target_rows, g.cols()});
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) out.at(0, c) += g.at(r, c);
  }
  return out;
}

}  // namespace

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::tanh_fn: return "tanh";
    case OpKind::elu_fn: return "elu";
    case OpKind::sigmoid_fn: return "sigmoid";
    case OpKind::exp_fn: return "exp";
    case OpKind::log_fn: return "log";
    case OpKind::sum_all: return "sum";
    case OpKind::sum_axis: return "sum-axis";
    case OpKind::mean_all: return "mean";
    case OpKind::concat_cols: return "concat-cols";
    case OpKind::slice_cols: return "slice-cols";
    case OpKind::permute_cols: return "permute-cols";
    case OpKind::gather_rows: return "gather-rows";
    case OpKind::softmax_log_prob: return "softmax-log-prob";
    case OpKind::gauss_reparam: return "gauss-reparam";
  }
  return "?";
}

struct NodeAccess {
  static Tape::Node make(OpKind kind, std::vector<int> parents, Tensor value) {
    Tape::Node n;
    n.kind = kind;
    n.parents = std::move(parents);
    n.value = std::move(value);
    return n;
  }
  static Value append(Tape& t, Tape::Node n) {
    // NaN policy: a non-finite intermediate aborts the step naming the node.
    if (!Tensor::nonfinite_allowed()) {
      for (double v : n.value.data()) {
        if (!std::isfinite(v)) {
          throw std::runtime_error("non-finite value in node " + std::to_string(t.nodes_.size()) +
                                   " (" + op_name(n.kind) + (n.name.empty() ? "" : " '" + n.name + "'") +
                                   ")");
        }
      }
    }
    t.nodes_.push_back(std::move(n));
    t.has_grads_ = false;
    return Value{&t, static_cast<int>(t.nodes_.size()) - 1};
  }
};

Value Tape::leaf(Tensor t, std::string name) {
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(t);
  n.name = std::move(name);
  return NodeAccess::append(*this, std::move(n));
}

int Tape::check(Value v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    fail("tape: value does not belong to this tape");
  }
  return v.id;
}

const Tensor& Tape::value(Value v) const { return nodes_[check(v)].value; }

std::string Tape::node_label(int id) const {
  const Node& n = nodes_[id];
  return std::string(op_name(n.kind)) + "#" + std::to_string(id);
}

const Tensor& Tape::grad(Value v) const {
  int id = check(v);
  if (!has_grads_) throw std::runtime_error("tape: grad() before backward()");
  return adjoints_[id];
}

void Tape::backward(Value root) {
  int root_id = check(root);
  const Tensor& rv = nodes_[root_id].value;
  if (rv.numel() != 1) {
    fail("backward: root must be scalar, got " + rv.shape_string());
  }

  adjoints_.assign(nodes_.size(), Tensor());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    adjoints_[i] = Tensor::zeros(nodes_[i].value.shape());
  }
  adjoints_[root_id].mutable_data()[0] = 1.0;

  for (int id = root_id; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (n.kind == OpKind::leaf) continue;
    const Tensor& g = adjoints_[id];
    bool all_zero = true;
    for (double v : g.data()) {
      if (v != 0.0) { all_zero = false; break; }
    }
    if (all_zero) continue;

    auto parent_value = [&](int slot) -> const Tensor& { return nodes_[n.parents[slot]].value; };
    auto parent_grad = [&](int slot) -> Tensor& { return adjoints_[n.parents[slot]]; };

    switch (n.kind) {
      case OpKind::matmul: {
        const Tensor& a = parent_value(0);
        const Tensor& b = parent_value(1);
        Tensor& da = parent_grad(0);
        Tensor& db = parent_grad(1);
        const std::size_t rows = a.rows(), inner = a.cols(), cols = b.cols();
        const double* ap = a.data().data();
        const double* bp = b.data().data();
        const double* gp = g.data().data();
        double* dap = da.mutable_data().data();
        double* dbp = db.mutable_data().data();
        // da += g b^T ; db += a^T g
        for (std::size_t i = 0; i < rows; ++i) {
          const double* grow = gp + i * cols;
          for (std::size_t k = 0; k < inner; ++k) {
            const double* brow = bp + k * cols;
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) acc += grow[j] * brow[j];
            dap[i * inner + k] += acc;
          }
        }
        for (std::size_t i = 0; i < rows; ++i) {
          const double* arow = ap + i * inner;
          const double* grow = gp + i * cols;
          for (std::size_t k = 0; k < inner; ++k) {
            double av = arow[k];
            if (av == 0.0) continue;
            double* drow = dbp + k * cols;
            for (std::size_t j = 0; j < cols; ++j) drow[j] += av * grow[j];
          }
        }
        break;
      }
      case OpKind::add: {
        const std::size_t rows = g.rows(), cols = g.cols();
        const double* gp = g.data().data();
        for (int slot = 0; slot < 2; ++slot) {
          Tensor& d = parent_grad(slot);
          double* dp = d.mutable_data().data();
          if (d.rows() == rows) {
            for (std::size_t i = 0; i < rows * cols; ++i) dp[i] += gp[i];
          } else {
            for (std::size_t r = 0; r < rows; ++r) {
              const double* grow = gp + r * cols;
              for (std::size_t c = 0; c < cols; ++c) dp[c] += grow[c];
            }
          }
        }
        break;
      }
      case OpKind::mul: {
        const std::size_t rows = g.rows(), cols = g.cols();
        const double* gp = g.data().data();
        for (int slot = 0; slot < 2; ++slot) {
          const Tensor& other = parent_value(1 - slot);
          Tensor& d = parent_grad(slot);
          const double* op = other.data().data();
          double* dp = d.mutable_data().data();
          const bool other_row = other.rows() == 1 && rows > 1;
          if (d.rows() == rows) {
            for (std::size_t r = 0; r < rows; ++r) {
              const double* grow = gp + r * cols;
              const double* orow = other_row ? op : op + r * cols;
              double* drow = dp + r * cols;
              for (std::size_t c = 0; c < cols; ++c) drow[c] += grow[c] * orow[c];
            }
          } else {
            for (std::size_t r = 0; r < rows; ++r) {
              const double* grow = gp + r * cols;
              const double* orow = other_row ? op : op + r * cols;
              for (std::size_t c = 0; c < cols; ++c) dp[c] += grow[c] * orow[c];
            }
          }
        }
        break;
      }
      case OpKind::scale: {
        Tensor& d = parent_grad(0);
        for (std::size_t i = 0; i < d.numel(); ++i) d.mutable_data()[i] += n.scalar_aux * g.data()[i];
        break;
      }
      case OpKind::tanh_fn: {
        Tensor& d = parent_grad(0);
        for (std::size_t i = 0; i < d.numel(); ++i) {
          double y = n.value.data()[i];
          d.mutable_data()[i] += g.data()[i] * (1.0 - y * y);
        }
        break;
      }
      case OpKind::elu_fn: {
        const Tensor& x = parent_value(0);
        Tensor& d = parent_grad(0);
        for (std::size_t i = 0; i < d.numel(); ++i) {
          double slope = x.data()[i] > 0.0 ? 1.0 : n.value.data()[i] + 1.0;
          d.mutable_data()[i] += g.data()[i] * slope;
        }
        break;
      }
      case OpKind::sigmoid_fn: {
        Tensor& d = parent_grad(0);
        for (std::size_t i = 0; i < d.numel(); ++i) {
          double y = n.value.data()[i];
          d.mutable_data()[i] += g.data()[i] * y * (1.0 - y);
        }
        break;
      }
      case OpKind::exp_fn: {
        Tensor& d = parent_grad(0);
        for (std::size_t i = 0; i < d.numel(); ++i) {
          d.mutable_data()[i] += g.data()[i] * n.value.data()[i];
        }
        break;
      }
      case OpKind::log_fn: {
        const Tensor& x = parent_value(0);
        Tensor& d = parent_grad(0);
        for (std::size_t i = 0; i < d.numel(); ++i) {
          d.mutable_data()[i] += g.data()[i] / x.data()[i];
        }
        break;
      }
      case OpKind::sum_all: {
        Tensor& d = parent_grad(0);
        double gv = g.data()[0];
        for (std::size_t i = 0; i < d.numel(); ++i) d.mutable_data()[i] += gv;
        break;
      }
      case OpKind::mean_all: {
        Tensor& d = parent_grad(0);
        double gv = g.data()[0] / static_cast<double>(d.numel());
        for (std::size_t i = 0; i < d.numel(); ++i) d.mutable_data()[i] += gv;
        break;
      }
      case OpKind::sum_axis: {
        Tensor& d = parent_grad(0);
        if (n.int_aux == 0) {
          for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < d.cols(); ++c) d.at(r, c) += g.at(0, c);
        } else {
          for (std::size_t r = 0; r < d.rows(); ++r)
            for (std::size_t c = 0; c < d.cols(); ++c) d.at(r, c) += g.at(r, 0);
        }
        break;
      }
      case OpKind::concat_cols: {
        const Tensor& a = parent_value(0);
        Tensor& da = parent_grad(0);
        Tensor& db = parent_grad(1);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < a.cols(); ++c) da.at(r, c) += g.at(r, c);
          for (std::size_t c = a.cols(); c < g.cols(); ++c) db.at(r, c - a.cols()) += g.at(r, c);
        }
        break;
      }
      case OpKind::slice_cols: {
        Tensor& d = parent_grad(0);
        std::size_t begin = n.index_aux[0];
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) d.at(r, begin + c) += g.at(r, c);
        break;
      }
      case OpKind::permute_cols: {
        Tensor& d = parent_grad(0);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) d.at(r, n.index_aux[c]) += g.at(r, c);
        break;
      }
      case OpKind::gather_rows: {
        Tensor& d = parent_grad(0);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) d.at(n.index_aux[r], c) += g.at(r, c);
        break;
      }
      case OpKind::softmax_log_prob: {
        // d log p(y) / d logits = onehot(y) - softmax(logits)
        const Tensor& probs = n.cached;
        Tensor& d = parent_grad(0);
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          double gr = g.at(r, 0);
          for (std::size_t c = 0; c < probs.cols(); ++c) {
            double onehot = (static_cast<int>(c) == n.labels[r]) ? 1.0 : 0.0;
            d.at(r, c) += gr * (onehot - probs.at(r, c));
          }
        }
        break;
      }
      case OpKind::gauss_reparam: {
        const Tensor& mu = parent_value(0);
        const Tensor& log_std = parent_value(1);
        const Tensor& eps = parent_value(2);
        Tensor gmu = Tensor::zeros({g.rows(), g.cols()});
        Tensor gls = Tensor::zeros({g.rows(), g.cols()});
        Tensor& deps = parent_grad(2);
        auto bval = [&](const Tensor& t, std::size_t r, std::size_t c) {
          return t.rows() == 1 ? t.at(0, c) : t.at(r, c);
        };
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) {
            double sd = std::exp(bval(log_std, r, c));
            gmu.at(r, c) = g.at(r, c);
            gls.at(r, c) = g.at(r, c) * eps.at(r, c) * sd;
            deps.at(r, c) += g.at(r, c) * sd;
          }
        }
        Tensor rmu = reduce_rows_to(gmu, mu.rows());
        Tensor rls = reduce_rows_to(gls, log_std.rows());
        for (std::size_t i = 0; i < rmu.numel(); ++i) parent_grad(0).mutable_data()[i] += rmu.data()[i];
        for (std::size_t i = 0; i < rls.numel(); ++i) parent_grad(1).mutable_data()[i] += rls.data()[i];
        break;
      }
      case OpKind::leaf:
        break;
    }
  }
  has_grads_ = true;
}

namespace {

Value record(Tape& tape, auto n) { return NodeAccess::append(tape, std::move(n)); }

auto make_node(OpKind kind, std::vector<int> parents, Tensor value) {
  return NodeAccess::make(kind, std::move(parents), std::move(value));
}

Value elementwise(Value a, OpKind kind, const char* name, double (*fn)(double)) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  require_matrix(x, name);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fn(x.data()[i]);
  Tensor v = raw_tensor(std::vector<std::size_t>(x.shape()), std::move(out));
  return record(t, make_node(kind, {a.id}, std::move(v)));
}

}  // namespace

Value matmul(Value a, Value b) {
  require_same_tape(a, b, "matmul");
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_matrix(x, "matmul");
  require_matrix(y, "matmul");
  if (x.cols() != y.rows()) {
    fail("matmul: shape mismatch (" + x.shape_string() + " vs " + y.shape_string() + ")");
  }
  const std::size_t rows = x.rows(), inner = x.cols(), cols = y.cols();
  Tensor out = Tensor::zeros({rows, cols});
  const double* xp = x.data().data();
  const double* yp = y.data().data();
  double* op = out.mutable_data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xrow = xp + i * inner;
    double* orow = op + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      double xv = xrow[k];
      if (xv == 0.0) continue;
      const double* yrow = yp + k * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] += xv * yrow[j];
    }
  }
  return record(t, make_node(OpKind::matmul, {a.id, b.id}, std::move(out)));
}

Value add(Value a, Value b) {
  require_same_tape(a, b, "add");
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_matrix(x, "add");
  require_matrix(y, "add");
  Broadcast bc = binary_layout(x, y, "add");
  const std::size_t rows = bc.a_row ? y.rows() : x.rows();
  const std::size_t cols = x.cols();
  Tensor out = Tensor::zeros({rows, cols});
  const double* xp = x.data().data();
  const double* yp = y.data().data();
  double* op = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xrow = bc.a_row ? xp : xp + r * cols;
    const double* yrow = bc.b_row ? yp : yp + r * cols;
    double* orow = op + r * cols;
    for (std::size_t c = 0; c < cols; ++c) orow[c] = xrow[c] + yrow[c];
  }
  return record(t, make_node(OpKind::add, {a.id, b.id}, std::move(out)));
}

Value sub(Value a, Value b) { return add(a, scale(b, -1.0)); }
Value neg(Value a) { return scale(a, -1.0); }

Value mul(Value a, Value b) {
  require_same_tape(a, b, "mul");
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_matrix(x, "mul");
  require_matrix(y, "mul");
  Broadcast bc = binary_layout(x, y, "mul");
  const std::size_t rows = bc.a_row ? y.rows() : x.rows();
  const std::size_t cols = x.cols();
  Tensor out = Tensor::zeros({rows, cols});
  const double* xp = x.data().data();
  const double* yp = y.data().data();
  double* op = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xrow = bc.a_row ? xp : xp + r * cols;
    const double* yrow = bc.b_row ? yp : yp + r * cols;
    double* orow = op + r * cols;
    for (std::size_t c = 0; c < cols; ++c) orow[c] = xrow[c] * yrow[c];
  }
  return record(t, make_node(OpKind::mul, {a.id, b.id}, std::move(out)));
}

Value scale(Value a, double c) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  require_matrix(x, "scale");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = c * x.data()[i];
  auto n = make_node(OpKind::scale, {a.id},
                           raw_tensor(std::vector<std::size_t>(x.shape()), std::move(out)));
  n.scalar_aux = c;
  return record(t, std::move(n));
}

Value tanh(Value a) {
  return elementwise(a, OpKind::tanh_fn, "tanh", +[](double v) { return std::tanh(v); });
}

Value elu(Value a) {
  return elementwise(a, OpKind::elu_fn, "elu",
                     +[](double v) { return v > 0.0 ? v : std::expm1(v); });
}

Value sigmoid(Value a) {
  return elementwise(a, OpKind::sigmoid_fn, "sigmoid",
                     +[](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Value exp(Value a) {
  return elementwise(a, OpKind::exp_fn, "exp", +[](double v) { return std::exp(v); });
}

Value log(Value a) {
  const Tensor& x = a.tape->value(a);
  for (double v : x.data()) {
    if (v <= 0.0) fail("log: domain violation (input " + std::to_string(v) + ")");
  }
  return elementwise(a, OpKind::log_fn, "log", +[](double v) { return std::log(v); });
}

Value sum(Value a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  require_matrix(x, "sum");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return record(t, make_node(OpKind::sum_all, {a.id}, raw_tensor({1, 1}, {acc})));
}

Value sum(Value a, int axis) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  require_matrix(x, "sum");
  if (axis != 0 && axis != 1) fail("sum: axis must be 0 or 1");
  Tensor out = axis == 0 ? Tensor::zeros({1, x.cols()}) : Tensor::zeros({x.rows(), 1});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (axis == 0) out.at(0, c) += x.at(r, c);
      else out.at(r, 0) += x.at(r, c);
    }
  }
  auto n = make_node(OpKind::sum_axis, {a.id}, std::move(out));
  n.int_aux = axis;
  return record(t, std::move(n));
}

Value mean(Value a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  require_matrix(x, "mean");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return record(t, make_node(OpKind::mean_all, {a.id},
                             raw_tensor({1, 1}, {acc / static_cast<double>(x.numel())})));
}

Value mean(Value a, int axis) {
  const Tensor& x = a.tape->value(a);
  require_matrix(x, "mean");
  double extent = static_cast<double>(axis == 0 ? x.rows() : x.cols());
  return scale(sum(a, axis), 1.0 / extent);
}

Value concat_cols(Value a, Value b) {
  require_same_tape(a, b, "concat-cols");
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_matrix(x, "concat-cols");
  require_matrix(y, "concat-cols");
  if (x.rows() != y.rows()) {
    fail("concat-cols: row mismatch (" + x.shape_string() + " vs " + y.shape_string() + ")");
  }
  Tensor out = Tensor::zeros({x.rows(), x.cols() + y.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c);
    for (std::size_t c = 0; c < y.cols(); ++c) out.at(r, x.cols() + c) = y.at(r, c);
  }
  return record(t, make_node(OpKind::concat_cols, {a.id, b.id}, std::move(out)));
}

Value slice_cols(Value a, std::size_t begin, std::size_t end) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  require_matrix(x, "slice-cols");
  if (begin >= end || end > x.cols()) {
    fail("slice-cols: bad range [" + std::to_string(begin) + ", " + std::to_string(end) +
         ") for " + x.shape_string());
  }
  Tensor out = Tensor::zeros({x.rows(), end - begin});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out.at(r, c - begin) = x.at(r, c);
  auto n = make_node(OpKind::slice_cols, {a.id}, std::move(out));
  n.index_aux = {begin, end};
  return record(t, std::move(n));
}

Value permute_cols(Value a, const std::vector<std::size_t>& perm) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  require_matrix(x, "permute-cols");
  if (perm.size() != x.cols()) fail("permute-cols: permutation size mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) fail("permute-cols: not a permutation");
    seen[p] = true;
  }
  Tensor out = Tensor::zeros({x.rows(), x.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, perm[c]);
  auto n = make_node(OpKind::permute_cols, {a.id}, std::move(out));
  n.index_aux = perm;
  return record(t, std::move(n));
}

Value gather_rows(Value a, const std::vector<std::size_t>& rows) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  require_matrix(x, "gather-rows");
  for (std::size_t r : rows) {
    if (r >= x.rows()) fail("gather-rows: row index out of range");
  }
  Tensor out = Tensor::zeros({rows.size(), x.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(i, c) = x.at(rows[i], c);
  auto n = make_node(OpKind::gather_rows, {a.id}, std::move(out));
  n.index_aux = rows;
  return record(t, std::move(n));
}

Value softmax_log_prob(Value logits, const std::vector<int>& labels) {
  Tape& t = *logits.tape;
  const Tensor& x = t.value(logits);
  require_matrix(x, "softmax-log-prob");
  if (labels.size() != x.rows()) {
    fail("softmax-log-prob: " + std::to_string(labels.size()) + " labels for " +
         std::to_string(x.rows()) + " rows");
  }
  Tensor probs = Tensor::zeros({x.rows(), x.cols()});
  Tensor out = Tensor::zeros({x.rows(), 1});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    int y = labels[r];
    if (y < 0 || y >= static_cast<int>(x.cols())) fail("softmax-log-prob: label out of range");
    double mx = x.at(r, 0);
    for (std::size_t c = 1; c < x.cols(); ++c) mx = std::max(mx, x.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) z += std::exp(x.at(r, c) - mx);
    double logz = std::log(z) + mx;
    for (std::size_t c = 0; c < x.cols(); ++c) probs.at(r, c) = std::exp(x.at(r, c) - logz);
    out.at(r, 0) = x.at(r, static_cast<std::size_t>(y)) - logz;
  }
  auto n = make_node(OpKind::softmax_log_prob, {logits.id}, std::move(out));
  n.labels = labels;
  n.cached = std::move(probs);
  return record(t, std::move(n));
}

Value gauss_reparam(Value mu, Value log_std, Value eps) {
  require_same_tape(mu, log_std, "gauss-reparam");
  require_same_tape(mu, eps, "gauss-reparam");
  Tape& t = *mu.tape;
  const Tensor& m = t.value(mu);
  const Tensor& ls = t.value(log_std);
  const Tensor& e = t.value(eps);
  require_matrix(m, "gauss-reparam");
  require_matrix(ls, "gauss-reparam");
  require_matrix(e, "gauss-reparam");
  if (!m.same_shape(ls)) {
    fail("gauss-reparam: mu/log_std mismatch (" + m.shape_string() + " vs " + ls.shape_string() + ")");
  }
  if (m.cols() != e.cols() || (m.rows() != 1 && m.rows() != e.rows())) {
    fail("gauss-reparam: eps mismatch (" + m.shape_string() + " vs " + e.shape_string() + ")");
  }
  Tensor out = Tensor::zeros({e.rows(), e.cols()});
  for (std::size_t r = 0; r < e.rows(); ++r) {
    std::size_t pr = m.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < e.cols(); ++c) {
      out.at(r, c) = m.at(pr, c) + std::exp(ls.at(pr, c)) * e.at(r, c);
    }
  }
  return record(t, make_node(OpKind::gauss_reparam, {mu.id, log_std.id, eps.id}, std::move(out)));
}

Value log_sigmoid(Value t) {
  Tape& tape = *t.tape;
  const Tensor& v = tape.value(t);
  if (v.cols() != 1) fail("log_sigmoid: expected n x 1 logits, got " + v.shape_string());
  Value zeros = tape.leaf(Tensor::zeros({v.rows(), 1}), "zeros");
  return softmax_log_prob(concat_cols(t, zeros), std::vector<int>(v.rows(), 0));
}

double finite_diff_check(const ScalarFn& f, const Tensor& point, double eps) {
  if (eps <= 0.0) fail("finite_diff_check: eps must be positive");

  auto eval = [&](const Tensor& p) {
    Tape tape;
    Value x = tape.leaf(p, "fd-point");
    Value out = f(tape, x);
    const Tensor& v = tape.value(out);
    if (v.numel() != 1) fail("finite_diff_check: objective is not scalar");
    double fv = v.value();
    if (!std::isfinite(fv)) throw std::runtime_error("finite_diff_check: non-finite objective");
    return fv;
  };

  Tape tape;
  Value x = tape.leaf(point, "fd-point");
  Value out = f(tape, x);
  if (tape.value(out).numel() != 1) fail("finite_diff_check: objective is not scalar");
  tape.backward(out);
  Tensor analytic = tape.grad(x);

  double worst = 0.0;
  std::vector<double> base(point.data().begin(), point.data().end());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> up = base, dn = base;
    up[i] += eps;
    dn[i] -= eps;
    double fp = eval(Tensor(std::vector<std::size_t>(point.shape()), std::move(up)));
    double fm = eval(Tensor(std::vector<std::size_t>(point.shape()), std::move(dn)));
    double numeric = (fp - fm) / (2.0 * eps);
    double a = analytic.data()[i];
    double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace vmi::ad
