#pragma once

// Dense float64 tensors and a small reverse-mode autodiff tape.
//
// A Graph is built once (define), then bound and evaluated any number of
// times. Node values and gradients are kept between calls so that repeated
// evaluation of the same structure (PGD inner loops, training) does not
// reallocate. A Graph is not safe to share between threads.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pscore {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor row(std::span<const double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  // Rank-2 accessors; rank-0 and rank-1 tensors are treated as 1x1 and 1xn.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  // Reshape in place keeping capacity; contents are unspecified afterwards.
  void reset(const Shape& shape);
  void fill(double v);

  bool all_finite() const noexcept;
  double l2_norm() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);

using NodeId = std::size_t;

enum class OpKind {
  kInput,
  kMatMul,
  kAdd,
  kMultiply,
  kRelu,
  kTanh,
  kMean,
  kSoftmax,
  kLog,
  kSum,
  kL2Norm,
};

const char* op_name(OpKind kind);

class Graph {
 public:
  NodeId input(std::string name);
  NodeId matmul(NodeId a, NodeId b);
  // Same-shape addition, or row-bias addition of a 1xn tensor to an mxn one.
  NodeId add(NodeId a, NodeId b);
  NodeId multiply(NodeId a, NodeId b);
  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  // Mean over axis 0 (-> 1xn) or axis 1 (-> mx1).
  NodeId mean(NodeId a, std::size_t axis);
  // Row-wise softmax.
  NodeId softmax(NodeId a);
  NodeId log(NodeId a);
  NodeId sum(NodeId a);
  NodeId l2_norm(NodeId a);

  void set_output(NodeId id);
  NodeId output() const;
  std::size_t node_count() const noexcept { return nodes_.size(); }
  NodeId find_input(const std::string& name) const;

  void bind(NodeId input_id, Tensor value);
  void bind(const std::string& name, Tensor value);
  // Mutable access to a bound input, for in-place updates between evaluations.
  Tensor& bound(NodeId input_id);

  const Tensor& forward();
  const Tensor& forward(const std::map<std::string, Tensor>& inputs);

  // Requires a prior forward() and a single-element output.
  void backward();
  std::map<NodeId, Tensor> backward(std::span<const NodeId> wrt);

  const Tensor& value(NodeId id) const;
  const Tensor& gradient(NodeId id) const;

 private:
  struct Node {
    OpKind kind = OpKind::kInput;
    NodeId a = 0;
    NodeId b = 0;
    std::size_t axis = 0;
    std::string name;
    bool bound = false;
    Tensor value;
    Tensor grad;
  };

  NodeId push(Node node);
  void check_id(NodeId id) const;
  void eval(Node& node);
  void accumulate(Node& node);

  std::vector<Node> nodes_;
  NodeId output_ = 0;
  bool has_output_ = false;
  bool forward_done_ = false;
  bool backward_done_ = false;
};

// Central-difference gradient of a scalar function.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-4);

}  // namespace pscore
