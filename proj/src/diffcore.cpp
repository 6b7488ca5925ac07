#include "perturbscore/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "perturbscore/error.hpp"

namespace pscore {

namespace {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::kShape, std::string(op) + ": incompatible shapes " + shape_string(a) +
                                     " and " + shape_string(b));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() > 2) {
    throw Error(ErrorCode::kShape,
                std::string(op) + ": expected rank <= 2, got " + shape_string(t.shape()));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw Error(ErrorCode::kShape, "tensor: shape " + shape_string(shape_) + " does not hold " +
                                       std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const noexcept {
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorCode::kShape, "item: tensor of shape " + shape_string(shape_) + " is not a scalar");
  }
  return data_[0];
}

void Tensor::reset(const Shape& shape) {
  shape_ = shape;
  data_.resize(shape_product(shape_));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::l2_norm() const noexcept {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("tensor +", a.shape(), b.shape());
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("tensor -", a.shape(), b.shape());
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMultiply: return "multiply";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kMean: return "mean";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLog: return "log";
    case OpKind::kSum: return "sum";
    case OpKind::kL2Norm: return "l2_norm";
  }
  return "?";
}

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  forward_done_ = false;
  return nodes_.size() - 1;
}

void Graph::check_id(NodeId id) const {
  if (id >= nodes_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "graph: unknown node id " + std::to_string(id));
  }
}

NodeId Graph::input(std::string name) {
  if (!name.empty()) {
    for (const Node& n : nodes_) {
      if (n.kind == OpKind::kInput && n.name == name) {
        throw Error(ErrorCode::kInvalidArgument, "graph: duplicate input '" + name + "'");
      }
    }
  }
  Node n;
  n.kind = OpKind::kInput;
  n.name = std::move(name);
  return push(std::move(n));
}

#define PSCORE_UNARY(method, op_kind)       \
  NodeId Graph::method(NodeId a) {       \
    check_id(a);                         \
    Node n;                              \
    n.kind = op_kind;                       \
    n.a = a;                             \
    return push(std::move(n));          \
  }

#define PSCORE_BINARY(method, op_kind)           \
  NodeId Graph::method(NodeId a, NodeId b) {  \
    check_id(a);                              \
    check_id(b);                              \
    Node n;                                   \
    n.kind = op_kind;                            \
    n.a = a;                                  \
    n.b = b;                                  \
    return push(std::move(n));               \
  }

PSCORE_BINARY(matmul, OpKind::kMatMul)
PSCORE_BINARY(add, OpKind::kAdd)
PSCORE_BINARY(multiply, OpKind::kMultiply)
PSCORE_UNARY(relu, OpKind::kRelu)
PSCORE_UNARY(tanh, OpKind::kTanh)
PSCORE_UNARY(softmax, OpKind::kSoftmax)
PSCORE_UNARY(log, OpKind::kLog)
PSCORE_UNARY(sum, OpKind::kSum)
PSCORE_UNARY(l2_norm, OpKind::kL2Norm)

#undef PSCORE_UNARY
#undef PSCORE_BINARY

NodeId Graph::mean(NodeId a, std::size_t axis) {
  check_id(a);
  if (axis > 1) throw Error(ErrorCode::kInvalidArgument, "mean: axis must be 0 or 1");
  Node n;
  n.kind = OpKind::kMean;
  n.a = a;
  n.axis = axis;
  return push(std::move(n));
}

void Graph::set_output(NodeId id) {
  check_id(id);
  output_ = id;
  has_output_ = true;
}

NodeId Graph::output() const {
  if (nodes_.empty()) throw Error(ErrorCode::kState, "graph: empty graph has no output");
  return has_output_ ? output_ : nodes_.size() - 1;
}

NodeId Graph::find_input(const std::string& name) const {
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::kInput && nodes_[i].name == name) return i;
  }
  throw Error(ErrorCode::kInvalidArgument, "graph: no input named '" + name + "'");
}

void Graph::bind(NodeId input_id, Tensor value) {
  check_id(input_id);
  Node& n = nodes_[input_id];
  if (n.kind != OpKind::kInput) {
    throw Error(ErrorCode::kInvalidArgument, "graph: node " + std::to_string(input_id) + " is not an input");
  }
  n.value = std::move(value);
  n.bound = true;
  forward_done_ = false;
}

void Graph::bind(const std::string& name, Tensor value) { bind(find_input(name), std::move(value)); }

Tensor& Graph::bound(NodeId input_id) {
  check_id(input_id);
  Node& n = nodes_[input_id];
  if (n.kind != OpKind::kInput || !n.bound) {
    throw Error(ErrorCode::kState, "graph: node " + std::to_string(input_id) + " is not a bound input");
  }
  forward_done_ = false;
  return n.value;
}

const Tensor& Graph::forward(const std::map<std::string, Tensor>& inputs) {
  for (const auto& [name, t] : inputs) bind(name, t);
  return forward();
}

const Tensor& Graph::forward() {
  for (Node& n : nodes_) {
    if (n.kind == OpKind::kInput) {
      if (!n.bound) {
        throw Error(ErrorCode::kState, "graph: input '" + n.name + "' is not bound");
      }
      continue;
    }
    eval(n);
    if (!n.value.all_finite()) {
      throw Error(ErrorCode::kNumeric, std::string(op_name(n.kind)) + ": produced non-finite values");
    }
  }
  forward_done_ = true;
  backward_done_ = false;
  return nodes_[output()].value;
}

void Graph::eval(Node& n) {
  const Tensor& a = nodes_[n.a].value;
  Tensor& out = n.value;
  switch (n.kind) {
    case OpKind::kInput:
      return;
    case OpKind::kMatMul: {
      const Tensor& b = nodes_[n.b].value;
      require_matrix("matmul", a);
      require_matrix("matmul", b);
      const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
      if (b.rows() != k) shape_error("matmul", a.shape(), b.shape());
      out.reset({m, p});
      out.fill(0.0);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double av = a[i * k + kk];
          const double* brow = &b.data()[kk * p];
          double* orow = &out.data()[i * p];
          for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
        }
      }
      return;
    }
    case OpKind::kAdd: {
      const Tensor& b = nodes_[n.b].value;
      if (a.shape() == b.shape()) {
        out.reset(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
        return;
      }
      if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) {
        out.reset(a.shape());
        const std::size_t c = a.cols();
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i % c];
        return;
      }
      shape_error("add", a.shape(), b.shape());
    }
    case OpKind::kMultiply: {
      const Tensor& b = nodes_[n.b].value;
      if (a.shape() != b.shape()) shape_error("multiply", a.shape(), b.shape());
      out.reset(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
      return;
    }
    case OpKind::kRelu:
      out.reset(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
      return;
    case OpKind::kTanh:
      out.reset(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
      return;
    case OpKind::kMean: {
      require_matrix("mean", a);
      const std::size_t r = a.rows(), c = a.cols();
      if (r == 0 || c == 0) throw Error(ErrorCode::kShape, "mean: empty input " + shape_string(a.shape()));
      if (n.axis == 0) {
        out.reset({1, c});
        out.fill(0.0);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) out[j] += a[i * c + j];
        for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(r);
      } else {
        out.reset({r, 1});
        for (std::size_t i = 0; i < r; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += a[i * c + j];
          out[i] = s / static_cast<double>(c);
        }
      }
      return;
    }
    case OpKind::kSoftmax: {
      require_matrix("softmax", a);
      out.reset(a.shape());
      const std::size_t r = a.rows(), c = a.cols();
      for (std::size_t i = 0; i < r; ++i) {
        const double* in = &a.data()[i * c];
        double* o = &out.data()[i * c];
        const double mx = *std::max_element(in, in + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < c; ++j) o[j] /= z;
      }
      return;
    }
    case OpKind::kLog:
      out.reset(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::log(a[i]);
      return;
    case OpKind::kSum: {
      out.reset({});
      double s = 0.0;
      for (double v : a.data()) s += v;
      out[0] = s;
      return;
    }
    case OpKind::kL2Norm:
      out.reset({});
      out[0] = a.l2_norm();
      return;
  }
}

void Graph::backward() {
  if (!forward_done_) throw Error(ErrorCode::kState, "backward: forward has not run on the current bindings");
  const NodeId root = output();
  if (nodes_[root].value.size() != 1) {
    throw Error(ErrorCode::kShape, "backward: output of shape " + shape_string(nodes_[root].value.shape()) +
                                       " is not scalar");
  }
  for (Node& n : nodes_) {
    n.grad.reset(n.value.shape());
    n.grad.fill(0.0);
  }
  nodes_[root].grad[0] = 1.0;
  for (NodeId i = root + 1; i-- > 0;) accumulate(nodes_[i]);
  backward_done_ = true;
}

std::map<NodeId, Tensor> Graph::backward(std::span<const NodeId> wrt) {
  for (NodeId id : wrt) check_id(id);
  backward();
  std::map<NodeId, Tensor> grads;
  for (NodeId id : wrt) grads[id] = nodes_[id].grad;
  return grads;
}

void Graph::accumulate(Node& n) {
  const Tensor& g = n.grad;
  switch (n.kind) {
    case OpKind::kInput:
      return;
    case OpKind::kMatMul: {
      Node& na = nodes_[n.a];
      Node& nb = nodes_[n.b];
      const std::size_t m = na.value.rows(), k = na.value.cols(), p = nb.value.cols();
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
          double s = 0.0;
          for (std::size_t j = 0; j < p; ++j) s += g[i * p + j] * nb.value[kk * p + j];
          na.grad[i * k + kk] += s;
        }
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double av = na.value[i * k + kk];
          for (std::size_t j = 0; j < p; ++j) nb.grad[kk * p + j] += av * g[i * p + j];
        }
      return;
    }
    case OpKind::kAdd: {
      Node& na = nodes_[n.a];
      Node& nb = nodes_[n.b];
      for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
      if (nb.value.shape() == na.value.shape()) {
        for (std::size_t i = 0; i < g.size(); ++i) nb.grad[i] += g[i];
      } else {
        const std::size_t c = nb.value.cols();
        for (std::size_t i = 0; i < g.size(); ++i) nb.grad[i % c] += g[i];
      }
      return;
    }
    case OpKind::kMultiply: {
      Node& na = nodes_[n.a];
      Node& nb = nodes_[n.b];
      for (std::size_t i = 0; i < g.size(); ++i) {
        na.grad[i] += g[i] * nb.value[i];
        nb.grad[i] += g[i] * na.value[i];
      }
      return;
    }
    case OpKind::kRelu: {
      Node& na = nodes_[n.a];
      for (std::size_t i = 0; i < g.size(); ++i)
        if (na.value[i] > 0.0) na.grad[i] += g[i];
      return;
    }
    case OpKind::kTanh: {
      Node& na = nodes_[n.a];
      for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      return;
    }
    case OpKind::kMean: {
      Node& na = nodes_[n.a];
      const std::size_t r = na.value.rows(), c = na.value.cols();
      if (n.axis == 0) {
        const double inv = 1.0 / static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) na.grad[i * c + j] += g[j] * inv;
      } else {
        const double inv = 1.0 / static_cast<double>(c);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) na.grad[i * c + j] += g[i] * inv;
      }
      return;
    }
    case OpKind::kSoftmax: {
      Node& na = nodes_[n.a];
      const std::size_t r = n.value.rows(), c = n.value.cols();
      for (std::size_t i = 0; i < r; ++i) {
        const double* y = &n.value.data()[i * c];
        const double* gy = &g.data()[i * c];
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < c; ++j) na.grad[i * c + j] += y[j] * (gy[j] - dot);
      }
      return;
    }
    case OpKind::kLog: {
      Node& na = nodes_[n.a];
      for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] / na.value[i];
      return;
    }
    case OpKind::kSum: {
      Node& na = nodes_[n.a];
      for (double& v : na.grad.data()) v += g[0];
      return;
    }
    case OpKind::kL2Norm: {
      Node& na = nodes_[n.a];
      const double norm = n.value[0];
      if (norm == 0.0) return;
      for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += g[0] * na.value[i] / norm;
      return;
    }
  }
}

const Tensor& Graph::value(NodeId id) const {
  check_id(id);
  if (!forward_done_ && nodes_[id].kind != OpKind::kInput) {
    throw Error(ErrorCode::kState, "graph: value requested before forward");
  }
  return nodes_[id].value;
}

const Tensor& Graph::gradient(NodeId id) const {
  check_id(id);
  if (!backward_done_) throw Error(ErrorCode::kState, "graph: gradient requested before backward");
  return nodes_[id].grad;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::kInvalidArgument, "finite_diff_grad: step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::kNumeric, "finite_diff_grad: non-finite evaluation at element " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace pscore
