#pragma once

// Reverse-mode automatic differentiation over dense row-major 2-D arrays.
//
// A Graph is a tape: nodes are appended in evaluation order, so creation
// order is a topological order and backward() walks the tape in reverse.
// Parameters live in a ParamStore outside the graph; every lookup of the same
// name within one graph resolves to one leaf node, so repeated use (e.g. the
// unfolded iterations of the transformer) accumulates into a single gradient.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace itnet::ag {

namespace detail {
/// Default-initializes on resize, so fresh buffers skip the zero fill.
template <class T>
struct UninitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = UninitAllocator<U>;
  };
  UninitAllocator() = default;
  template <class U>
  UninitAllocator(const UninitAllocator<U>&) noexcept {}
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... A>
  void construct(U* p, A&&... a) {
    ::new (static_cast<void*>(p)) U(std::forward<A>(a)...);
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  /// Contents unspecified; every element must be written before use.
  static Tensor uninitialized(std::size_t rows, std::size_t cols) {
    Tensor t;
    t.rows_ = rows;
    t.cols_ = cols;
    t.data_.resize(rows * cols);
    return t;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const;
  bool all_finite() const;
  double squared_norm() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double, detail::UninitAllocator<double>> data_;
};

enum class Mode { Train, Eval };

/// Named parameter arrays. Non-trainable entries hold batch-norm running
/// statistics and model metadata.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    bool trainable = true;
  };

  void set(const std::string& name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  bool trainable(const std::string& name) const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::vector<std::string> trainable_names() const;

 private:
  std::map<std::string, Entry> entries_;
};

using GradMap = std::map<std::string, Tensor>;

class Graph;

struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Batch statistics observed by a train-mode batch_norm, to be folded into the
/// running averages by the optimizer after the step.
struct BnStatUpdate {
  std::string mean_name;
  std::string var_name;
  Tensor mean;
  Tensor var;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor& grad_out)>;

  explicit Graph(Mode mode = Mode::Eval);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Mode mode() const { return mode_; }

  Var constant(Tensor value);
  /// Leaf that receives a gradient but is not a stored parameter.
  Var variable(Tensor value);
  Var param(const ParamStore& store, const std::string& name);

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  /// Gradient of the last backward() wrt v; zeros when v was unreachable.
  Tensor grad(Var v) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  void backward(Var loss);

  /// Gradients for every trainable entry of `store`; zero for entries that
  /// were never used or are unreachable from the loss.
  GradMap param_grads(const ParamStore& store) const;

  const std::vector<BnStatUpdate>& bn_updates() const { return bn_updates_; }
  void record_bn_update(BnStatUpdate u) { bn_updates_.push_back(std::move(u)); }

  std::size_t size() const { return nodes_.size(); }

  // Op-author interface. Ops that cannot turn finite inputs into non-finite
  // outputs may skip the output scan.
  Var add_node(Tensor value, std::vector<int> inputs, Backward backward, const char* op, bool check_finite = true);
  Tensor& grad_slot(int id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Mode mode_;
  std::vector<Node> nodes_;
  std::map<std::string, int> param_nodes_;
  std::vector<BnStatUpdate> bn_updates_;
};

// Elementwise and linear algebra.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// x: R x F, bias: 1 x F.
Var add_bias(Var x, Var bias);
Var relu(Var x);
Var square(Var x);
/// Mean of all entries -> 1 x 1.
Var reduce_mean(Var x);
/// Row sums: R x C -> R x 1.
Var sum_cols(Var x);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
/// Row-wise l2 normalization.
Var normalize_l2(Var x);
Var stop_gradient(Var x);

struct BatchNormParams {
  Var gamma;
  Var beta;
  /// Running statistics in the store; read in eval mode, updated after train steps.
  const ParamStore* store = nullptr;
  std::string mean_name;
  std::string var_name;
  double eps = 1e-5;
};
/// Per-column normalization over all rows; train mode uses batch statistics.
Var batch_norm(Var x, const BatchNormParams& bn);

/// (groups * N) x F -> groups x F, per-feature max within each group of N rows.
/// Backward routes to the lowest row index among ties.
Var reduce_max_over_points(Var x, std::size_t groups);

/// Mean softmax cross-entropy over rows -> 1 x 1.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

// Batched rigid-body ops. Homogeneous transforms are rows of 16 (row-major 4x4).
/// B x 4 unit quaternions (w, x, y, z) -> B x 9 row-major rotation matrices.
Var quat_to_rotmat(Var q);
/// R: B x 9, t: B x 3 -> B x 16.
Var homogeneous(Var rotation, Var translation);
/// Row-wise 4x4 product a_b * b_b.
Var compose(Var a, Var b);
/// points: (B * N) x 3, transforms: B x 16; applies transform b to rows [b*N, (b+1)*N).
Var transform_points(Var points, Var transforms);
/// A: B x 9 -> B x 1 with entries ||A A^T - I||_F.
Var orthogonality_residual(Var a);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for every trainable entry of `params`. `build` must construct a scalar loss.
double finite_difference_check(const std::function<Var(Graph&)>& build, ParamStore& params,
                               double eps, Mode mode = Mode::Eval);

}  // namespace itnet::ag
