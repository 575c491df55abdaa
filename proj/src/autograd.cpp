#include "autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace itnet::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Full reductions are plain loops: Eigen's vectorised redux peels by address,
// which would make sums depend on heap alignment.
ConstMapMat view(const Tensor& t) {
  return ConstMapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MapMat view(Tensor& t) {
  return MapMat(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

Graph& graph_of(Var v) {
  if (v.graph == nullptr) throw Error(ErrorCode::ShapeMismatch, "variable is not bound to a graph");
  return *v.graph;
}

Graph& common_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr)
    throw Error(ErrorCode::ShapeMismatch, "operands belong to different graphs");
  return *a.graph;
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
  if (data_.size() != rows_ * cols_)
    throw Error(ErrorCode::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                              " does not match shape " + shape_str(*this));
}

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on " + shape_str(*this));
  return data_[0];
}

bool Tensor::all_finite() const {
  // v - v is 0 for finite v and NaN otherwise.
  const auto a = view(*this).array();
  return size() == 0 || (a - a).sum() == 0.0;
}

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

void ParamStore::set(const std::string& name, Tensor value, bool trainable) {
  entries_[name] = Entry{std::move(value), trainable};
}

Tensor& ParamStore::value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorCode::Format, "unknown parameter '" + name + "'");
  return it->second.value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorCode::Format, "unknown parameter '" + name + "'");
  return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  return it != entries_.end() && it->second.trainable;
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (e.trainable) out.push_back(name);
  return out;
}

const Tensor& Var::value() const { return graph_of(*this).value(*this); }

Graph::Graph(Mode mode) : mode_(mode) {
#if defined(__GLIBC__)
  // Tape buffers are large and short-lived; keep freed pages in the heap so
  // the next step reuses them instead of faulting in fresh ones.
  static const bool tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)tuned;
#endif
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::param(const ParamStore& store, const std::string& name) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return {this, it->second};
  Var v = store.trainable(name) ? variable(store.value(name)) : constant(store.value(name));
  param_nodes_[name] = v.id;
  return v;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.rows(), n.value.cols());
}

Tensor& Graph::grad_slot(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

Var Graph::add_node(Tensor value, std::vector<int> inputs, Backward backward, const char* op, bool check_finite) {
  const int self = static_cast<int>(nodes_.size());
  bool needs = false;
  for (int in : inputs) {
    if (in < 0 || in >= self) throw Error(ErrorCode::GraphCycle, std::string(op) + ": input does not precede node");
    needs = needs || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  if (check_finite && !value.all_finite()) throw Error(ErrorCode::NonFiniteValue, std::string(op) + " produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.requires_grad = needs && static_cast<bool>(backward);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, self};
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw Error(ErrorCode::ShapeMismatch, "loss belongs to another graph");
  if (value(loss).size() != 1) throw Error(ErrorCode::ShapeMismatch, "backward() needs a scalar loss");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_slot(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.requires_grad || !n.backward) continue;
    // The closure may grow grad slots of earlier nodes but never this one.
    Tensor g = std::move(n.grad);
    n.backward(*this, g);
    n.grad = std::move(g);
  }
}

GradMap Graph::param_grads(const ParamStore& store) const {
  GradMap out;
  for (const auto& [name, entry] : store.entries()) {
    if (!entry.trainable) continue;
    auto it = param_nodes_.find(name);
    Tensor g = (it != param_nodes_.end()) ? grad(Var{const_cast<Graph*>(this), it->second})
                                          : Tensor(entry.value.rows(), entry.value.cols());
    if (!g.all_finite()) throw Error(ErrorCode::NonFiniteGradient, "gradient of '" + name + "' is not finite");
    out.emplace(name, std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = common_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Tensor out = Tensor::uninitialized(av.rows(), bv.cols());
  view(out).noalias() = view(av) * view(bv);
  return g.add_node(std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a.id)) view(g.grad_slot(a.id)).noalias() += view(go) * view(b.value()).transpose();
    if (g.requires_grad(b.id)) view(g.grad_slot(b.id)).noalias() += view(a.value()).transpose() * view(go);
  }, "matmul");
}

Var add(Var a, Var b) {
  Graph& g = common_graph(a, b);
  if (!a.value().same_shape(b.value())) shape_error("add", a.value(), b.value());
  Tensor out = a.value();
  view(out) += view(b.value());
  return g.add_node(std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a.id)) view(g.grad_slot(a.id)) += view(go);
    if (g.requires_grad(b.id)) view(g.grad_slot(b.id)) += view(go);
  }, "add");
}

Var sub(Var a, Var b) {
  Graph& g = common_graph(a, b);
  if (!a.value().same_shape(b.value())) shape_error("sub", a.value(), b.value());
  Tensor out = a.value();
  view(out) -= view(b.value());
  return g.add_node(std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a.id)) view(g.grad_slot(a.id)) += view(go);
    if (g.requires_grad(b.id)) view(g.grad_slot(b.id)) -= view(go);
  }, "sub");
}

Var mul(Var a, Var b) {
  Graph& g = common_graph(a, b);
  if (!a.value().same_shape(b.value())) shape_error("mul", a.value(), b.value());
  Tensor out = a.value();
  view(out).array() *= view(b.value()).array();
  return g.add_node(std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a.id)) view(g.grad_slot(a.id)).array() += view(go).array() * view(b.value()).array();
    if (g.requires_grad(b.id)) view(g.grad_slot(b.id)).array() += view(go).array() * view(a.value()).array();
  }, "mul");
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  view(out) *= s;
  return g.add_node(std::move(out), {a.id}, [a, s](Graph& g, const Tensor& go) {
    view(g.grad_slot(a.id)) += s * view(go);
  }, "scale");
}

Var add_bias(Var x, Var bias) {
  Graph& g = common_graph(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) shape_error("add_bias", xv, bv);
  Tensor out = xv;
  view(out).rowwise() += view(bv).row(0);
  return g.add_node(std::move(out), {x.id, bias.id}, [x, bias](Graph& g, const Tensor& go) {
    if (g.requires_grad(x.id)) view(g.grad_slot(x.id)) += view(go);
    if (g.requires_grad(bias.id)) view(g.grad_slot(bias.id)) += view(go).colwise().sum();
  }, "add_bias");
}

Var relu(Var x) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  Tensor out = Tensor::uninitialized(xv.rows(), xv.cols());
  const double* in = xv.data();
  double* o = out.data();
  const std::size_t n = xv.size();
  for (std::size_t i = 0; i < n; ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  const int self = static_cast<int>(g.size());
  return g.add_node(std::move(out), {x.id}, [x, self](Graph& g, const Tensor& go) {
    const double* y = g.value(Var{&g, self}).data();
    double* gx = g.grad_slot(x.id).data();
    const double* d = go.data();
    const std::size_t n = go.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] > 0.0 ? d[i] : 0.0;
  }, "relu", false);
}

Var square(Var x) {
  Graph& g = graph_of(x);
  Tensor out = x.value();
  view(out).array() = view(out).array().square();
  return g.add_node(std::move(out), {x.id}, [x](Graph& g, const Tensor& go) {
    view(g.grad_slot(x.id)).array() += 2.0 * view(go).array() * view(x.value()).array();
  }, "square");
}

Var reduce_mean(Var x) {
  Graph& g = graph_of(x);
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "reduce_mean of empty tensor");
  double total = 0.0;
  for (std::size_t i = 0; i < x.value().size(); ++i) total += x.value()[i];
  Tensor out = Tensor::scalar(total / n);
  return g.add_node(std::move(out), {x.id}, [x, n](Graph& g, const Tensor& go) {
    view(g.grad_slot(x.id)).array() += go[0] / n;
  }, "reduce_mean");
}

Var sum_cols(Var x) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) total += xv(r, c);
    out(r, 0) = total;
  }
  return g.add_node(std::move(out), {x.id}, [x](Graph& g, const Tensor& go) {
    view(g.grad_slot(x.id)).colwise() += view(go).col(0);
  }, "sum_cols");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  Graph& g = graph_of(parts.front());
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<int> ids;
  for (Var p : parts) {
    if (p.graph != &g) throw Error(ErrorCode::ShapeMismatch, "concat operands belong to different graphs");
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    view(out).middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(p.cols())) = view(p.value());
    offset += p.cols();
  }
  return g.add_node(std::move(out), ids, [parts](Graph& g, const Tensor& go) {
    std::size_t off = 0;
    for (Var p : parts) {
      if (g.requires_grad(p.id))
        view(g.grad_slot(p.id)) += view(go).middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(p.cols()));
      off += p.cols();
    }
  }, "concat_cols", false);
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  if (begin > end || end > xv.cols())
    throw Error(ErrorCode::ShapeMismatch, "slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                                              ") of " + shape_str(xv));
  const auto b = static_cast<Eigen::Index>(begin);
  const auto w = static_cast<Eigen::Index>(end - begin);
  Tensor out(xv.rows(), end - begin);
  view(out) = view(xv).middleCols(b, w);
  return g.add_node(std::move(out), {x.id}, [x, b, w](Graph& g, const Tensor& go) {
    view(g.grad_slot(x.id)).middleCols(b, w) += view(go);
  }, "slice_cols", false);
}

Var normalize_l2(Var x) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  Tensor out = xv;
  std::vector<double> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) ss += xv(r, c) * xv(r, c);
    const double n = std::sqrt(ss);
    if (!(n > 1e-12)) throw Error(ErrorCode::NonFiniteValue, "normalize_l2: row " + std::to_string(r) + " has zero norm");
    norms[r] = n;
    view(out).row(static_cast<Eigen::Index>(r)) /= n;
  }
  const int self = static_cast<int>(g.size());
  return g.add_node(std::move(out), {x.id}, [x, self, norms](Graph& g, const Tensor& go) {
    const auto y = view(g.value(Var{&g, self}));
    auto gx = view(g.grad_slot(x.id));
    const auto gy = view(go);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double d = 0.0;
      for (Eigen::Index c = 0; c < y.cols(); ++c) d += y(r, c) * gy(r, c);
      gx.row(r) += (gy.row(r) - d * y.row(r)) / norms[static_cast<std::size_t>(r)];
    }
  }, "normalize_l2");
}

Var stop_gradient(Var x) {
  Graph& g = graph_of(x);
  return g.add_node(x.value(), {x.id}, Graph::Backward{}, "stop_gradient", false);
}

Var batch_norm(Var x, const BatchNormParams& bn) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  if (bn.gamma.value().rows() != 1 || bn.gamma.value().cols() != cols) shape_error("batch_norm", xv, bn.gamma.value());
  if (bn.beta.value().rows() != 1 || bn.beta.value().cols() != cols) shape_error("batch_norm", xv, bn.beta.value());
  if (rows == 0) throw Error(ErrorCode::ShapeMismatch, "batch_norm on an empty batch");

  std::vector<double> mean(cols, 0.0), var(cols, 0.0);
  const bool train = g.mode() == Mode::Train;
  if (train) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = xv.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) mean[c] += row[c];
    }
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = xv.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = row[c] - mean[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(rows);
  } else {
    if (bn.store == nullptr) throw Error(ErrorCode::Format, "eval-mode batch_norm needs running statistics");
    const Tensor& rm = bn.store->value(bn.mean_name);
    const Tensor& rv = bn.store->value(bn.var_name);
    if (rm.size() != cols || rv.size() != cols) shape_error("batch_norm statistics", xv, rm);
    std::copy_n(rm.data(), cols, mean.begin());
    std::copy_n(rv.data(), cols, var.begin());
  }
  std::vector<double> inv_std(cols);
  for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + bn.eps);

  const double* gamma_v = bn.gamma.value().data();
  const double* beta_v = bn.beta.value().data();
  Tensor xhat = Tensor::uninitialized(rows, cols);
  Tensor out = Tensor::uninitialized(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * cols;
    double* xh = xhat.data() + r * cols;
    double* o = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      xh[c] = (row[c] - mean[c]) * inv_std[c];
      o[c] = xh[c] * gamma_v[c] + beta_v[c];
    }
  }

  if (train && bn.store != nullptr) {
    g.record_bn_update({bn.mean_name, bn.var_name, Tensor(1, cols, std::move(mean)), Tensor(1, cols, std::move(var))});
  }

  const Var gamma = bn.gamma;
  const Var beta = bn.beta;
  return g.add_node(std::move(out), {x.id, gamma.id, beta.id},
                    [x, gamma, beta, train, inv_std = std::move(inv_std), xhat = std::move(xhat)](Graph& g,
                                                                                                   const Tensor& go) {
    const std::size_t rows = go.rows();
    const std::size_t cols = go.cols();
    std::vector<double> sum_dy(cols, 0.0), sum_dy_xh(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = go.data() + r * cols;
      const double* xh = xhat.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        sum_dy[c] += dy[c];
        sum_dy_xh[c] += dy[c] * xh[c];
      }
    }
    if (g.requires_grad(gamma.id)) {
      double* gg = g.grad_slot(gamma.id).data();
      for (std::size_t c = 0; c < cols; ++c) gg[c] += sum_dy_xh[c];
    }
    if (g.requires_grad(beta.id)) {
      double* gb = g.grad_slot(beta.id).data();
      for (std::size_t c = 0; c < cols; ++c) gb[c] += sum_dy[c];
    }
    if (!g.requires_grad(x.id)) return;
    const double* gamma_v = gamma.value().data();
    std::vector<double> scale(cols), a(cols), b(cols);
    const double n = static_cast<double>(rows);
    for (std::size_t c = 0; c < cols; ++c) {
      scale[c] = gamma_v[c] * inv_std[c];
      // dx = scale * (dy - xhat * mean(dy * xhat) - mean(dy)) in train mode
      a[c] = train ? sum_dy_xh[c] / n : 0.0;
      b[c] = train ? sum_dy[c] / n : 0.0;
    }
    double* dx = g.grad_slot(x.id).data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = go.data() + r * cols;
      const double* xh = xhat.data() + r * cols;
      double* d = dx + r * cols;
      for (std::size_t c = 0; c < cols; ++c) d[c] += (dy[c] - xh[c] * a[c] - b[c]) * scale[c];
    }
  }, "batch_norm");
}

Var reduce_max_over_points(Var x, std::size_t groups) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  if (groups == 0 || xv.rows() % groups != 0 || xv.rows() == 0)
    throw Error(ErrorCode::ShapeMismatch, "reduce_max_over_points: " + shape_str(xv) + " into " +
                                              std::to_string(groups) + " groups");
  const std::size_t n = xv.rows() / groups;
  const std::size_t f = xv.cols();
  Tensor out(groups, f);
  std::vector<std::size_t> argmax(groups * f);
  for (std::size_t b = 0; b < groups; ++b) {
    double* o = &out(b, 0);
    std::size_t* am = &argmax[b * f];
    const double* first = &xv(b * n, 0);
    for (std::size_t c = 0; c < f; ++c) {
      o[c] = first[c];
      am[c] = b * n;
    }
    for (std::size_t r = 1; r < n; ++r) {
      const double* row = &xv(b * n + r, 0);
      for (std::size_t c = 0; c < f; ++c) {
        if (row[c] > o[c]) {
          o[c] = row[c];
          am[c] = b * n + r;
        }
      }
    }
  }
  return g.add_node(std::move(out), {x.id}, [x, groups, f, argmax = std::move(argmax)](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_slot(x.id);
    for (std::size_t b = 0; b < groups; ++b)
      for (std::size_t c = 0; c < f; ++c) gx(argmax[b * f + c], c) += go(b, c);
  }, "reduce_max_over_points", false);
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Graph& g = graph_of(logits);
  const Tensor& lv = logits.value();
  if (labels.size() != lv.rows())
    throw Error(ErrorCode::ShapeMismatch, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                              " labels for " + shape_str(lv));
  Tensor probs(lv.rows(), lv.cols());
  double loss = 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (lab[r] < 0 || static_cast<std::size_t>(lab[r]) >= lv.cols())
      throw Error(ErrorCode::ShapeMismatch, "label " + std::to_string(lab[r]) + " out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < lv.cols(); ++c) mx = std::max(mx, lv(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < lv.cols(); ++c) z += std::exp(lv(r, c) - mx);
    for (std::size_t c = 0; c < lv.cols(); ++c) probs(r, c) = std::exp(lv(r, c) - mx) / z;
    loss += (mx + std::log(z)) - lv(r, static_cast<std::size_t>(lab[r]));
  }
  const double n = static_cast<double>(lv.rows());
  return g.add_node(Tensor::scalar(loss / n), {logits.id},
                    [logits, n, lab = std::move(lab), probs = std::move(probs)](Graph& g, const Tensor& go) {
    Tensor& gl = g.grad_slot(logits.id);
    for (std::size_t r = 0; r < probs.rows(); ++r)
      for (std::size_t c = 0; c < probs.cols(); ++c) {
        const double target = static_cast<int>(c) == lab[r] ? 1.0 : 0.0;
        gl(r, c) += go[0] * (probs(r, c) - target) / n;
      }
  }, "softmax_cross_entropy");
}

Var quat_to_rotmat(Var q) {
  Graph& g = graph_of(q);
  const Tensor& qv = q.value();
  if (qv.cols() != 4) throw Error(ErrorCode::ShapeMismatch, "quat_to_rotmat expects B x 4, got " + shape_str(qv));
  Tensor out(qv.rows(), 9);
  for (std::size_t b = 0; b < qv.rows(); ++b) {
    const double w = qv(b, 0), x = qv(b, 1), y = qv(b, 2), z = qv(b, 3);
    double* r = &out(b, 0);
    r[0] = 1 - 2 * (y * y + z * z);
    r[1] = 2 * (x * y - w * z);
    r[2] = 2 * (x * z + w * y);
    r[3] = 2 * (x * y + w * z);
    r[4] = 1 - 2 * (x * x + z * z);
    r[5] = 2 * (y * z - w * x);
    r[6] = 2 * (x * z - w * y);
    r[7] = 2 * (y * z + w * x);
    r[8] = 1 - 2 * (x * x + y * y);
  }
  return g.add_node(std::move(out), {q.id}, [q](Graph& g, const Tensor& go) {
    const Tensor& qv = q.value();
    Tensor& gq = g.grad_slot(q.id);
    for (std::size_t b = 0; b < qv.rows(); ++b) {
      const double w = qv(b, 0), x = qv(b, 1), y = qv(b, 2), z = qv(b, 3);
      const double* d = &go(b, 0);
      gq(b, 0) += 2 * (-z * d[1] + y * d[2] + z * d[3] - x * d[5] - y * d[6] + x * d[7]);
      gq(b, 1) += 2 * (y * d[1] + z * d[2] + y * d[3] - 2 * x * d[4] - w * d[5] + z * d[6] + w * d[7] - 2 * x * d[8]);
      gq(b, 2) += 2 * (-2 * y * d[0] + x * d[1] + w * d[2] + x * d[3] + z * d[5] - w * d[6] + z * d[7] - 2 * y * d[8]);
      gq(b, 3) += 2 * (-2 * z * d[0] - w * d[1] + x * d[2] + w * d[3] - 2 * z * d[4] + y * d[5] + x * d[6] + y * d[7]);
    }
  }, "quat_to_rotmat");
}

Var homogeneous(Var rotation, Var translation) {
  Graph& g = common_graph(rotation, translation);
  const Tensor& rv = rotation.value();
  const Tensor& tv = translation.value();
  if (rv.cols() != 9 || tv.cols() != 3 || rv.rows() != tv.rows()) shape_error("homogeneous", rv, tv);
  Tensor out(rv.rows(), 16);
  for (std::size_t b = 0; b < rv.rows(); ++b) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) out(b, 4 * i + j) = rv(b, 3 * i + j);
      out(b, 4 * i + 3) = tv(b, i);
    }
    out(b, 15) = 1.0;
  }
  return g.add_node(std::move(out), {rotation.id, translation.id}, [rotation, translation](Graph& g, const Tensor& go) {
    const bool gr = g.requires_grad(rotation.id);
    const bool gt = g.requires_grad(translation.id);
    for (std::size_t b = 0; b < go.rows(); ++b)
      for (std::size_t i = 0; i < 3; ++i) {
        if (gr)
          for (std::size_t j = 0; j < 3; ++j) g.grad_slot(rotation.id)(b, 3 * i + j) += go(b, 4 * i + j);
        if (gt) g.grad_slot(translation.id)(b, i) += go(b, 4 * i + 3);
      }
  }, "homogeneous");
}

Var compose(Var a, Var b) {
  Graph& g = common_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != 16 || !av.same_shape(bv)) shape_error("compose", av, bv);
  using M4 = Eigen::Matrix<double, 4, 4, Eigen::RowMajor>;
  Tensor out(av.rows(), 16);
  for (std::size_t r = 0; r < av.rows(); ++r)
    Eigen::Map<M4>(&out(r, 0)) = Eigen::Map<const M4>(&av(r, 0)) * Eigen::Map<const M4>(&bv(r, 0));
  return g.add_node(std::move(out), {a.id, b.id}, [a, b](Graph& g, const Tensor& go) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const bool ga = g.requires_grad(a.id);
    const bool gb = g.requires_grad(b.id);
    for (std::size_t r = 0; r < av.rows(); ++r) {
      Eigen::Map<const M4> d(&go(r, 0));
      if (ga) Eigen::Map<M4>(&g.grad_slot(a.id)(r, 0)) += d * Eigen::Map<const M4>(&bv(r, 0)).transpose();
      if (gb) Eigen::Map<M4>(&g.grad_slot(b.id)(r, 0)) += Eigen::Map<const M4>(&av(r, 0)).transpose() * d;
    }
  }, "compose");
}

Var transform_points(Var points, Var transforms) {
  Graph& g = common_graph(points, transforms);
  const Tensor& pv = points.value();
  const Tensor& tv = transforms.value();
  if (pv.cols() != 3 || tv.cols() != 16 || tv.rows() == 0 || pv.rows() % tv.rows() != 0)
    shape_error("transform_points", pv, tv);
  const std::size_t groups = tv.rows();
  const std::size_t n = pv.rows() / groups;
  Tensor out(pv.rows(), 3);
  for (std::size_t b = 0; b < groups; ++b) {
    const double* t = &tv(b, 0);
    for (std::size_t i = b * n; i < (b + 1) * n; ++i) {
      const double x = pv(i, 0), y = pv(i, 1), z = pv(i, 2);
      out(i, 0) = t[0] * x + t[1] * y + t[2] * z + t[3];
      out(i, 1) = t[4] * x + t[5] * y + t[6] * z + t[7];
      out(i, 2) = t[8] * x + t[9] * y + t[10] * z + t[11];
    }
  }
  return g.add_node(std::move(out), {points.id, transforms.id}, [points, transforms, groups, n](Graph& g, const Tensor& go) {
    const Tensor& pv = points.value();
    const Tensor& tv = transforms.value();
    const bool gp = g.requires_grad(points.id);
    const bool gt = g.requires_grad(transforms.id);
    for (std::size_t b = 0; b < groups; ++b) {
      const double* t = &tv(b, 0);
      double acc[16] = {};
      for (std::size_t i = b * n; i < (b + 1) * n; ++i) {
        const double d0 = go(i, 0), d1 = go(i, 1), d2 = go(i, 2);
        if (gp) {
          Tensor& gpv = g.grad_slot(points.id);
          gpv(i, 0) += t[0] * d0 + t[4] * d1 + t[8] * d2;
          gpv(i, 1) += t[1] * d0 + t[5] * d1 + t[9] * d2;
          gpv(i, 2) += t[2] * d0 + t[6] * d1 + t[10] * d2;
        }
        if (gt) {
          const double x = pv(i, 0), y = pv(i, 1), z = pv(i, 2);
          acc[0] += d0 * x; acc[1] += d0 * y; acc[2] += d0 * z; acc[3] += d0;
          acc[4] += d1 * x; acc[5] += d1 * y; acc[6] += d1 * z; acc[7] += d1;
          acc[8] += d2 * x; acc[9] += d2 * y; acc[10] += d2 * z; acc[11] += d2;
        }
      }
      if (gt) {
        double* gtv = &g.grad_slot(transforms.id)(b, 0);
        for (int k = 0; k < 12; ++k) gtv[k] += acc[k];
      }
    }
  }, "transform_points");
}

Var orthogonality_residual(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  if (av.cols() != 9) throw Error(ErrorCode::ShapeMismatch, "orthogonality_residual expects B x 9, got " + shape_str(av));
  using M3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;
  Tensor out(av.rows(), 1);
  std::vector<M3> residuals(av.rows());
  for (std::size_t b = 0; b < av.rows(); ++b) {
    Eigen::Map<const M3> m(&av(b, 0));
    residuals[b] = m * m.transpose() - M3::Identity();
    out(b, 0) = residuals[b].norm();
  }
  const int self = static_cast<int>(g.size());
  return g.add_node(std::move(out), {a.id}, [a, self, residuals = std::move(residuals)](Graph& g, const Tensor& go) {
    const Tensor& f = g.value(Var{&g, self});
    const Tensor& av = a.value();
    for (std::size_t b = 0; b < av.rows(); ++b) {
      if (f(b, 0) <= 0.0) continue;  // subgradient 0 at orthogonal A
      Eigen::Map<const M3> m(&av(b, 0));
      Eigen::Map<M3>(&g.grad_slot(a.id)(b, 0)) += (go(b, 0) * 2.0 / f(b, 0)) * (residuals[b] * m);
    }
  }, "orthogonality_residual");
}

double finite_difference_check(const std::function<Var(Graph&)>& build, ParamStore& params, double eps, Mode mode) {
  if (eps < 1e-7 || eps > 1e-3) throw Error(ErrorCode::Config, "finite-difference step must lie in [1e-7, 1e-3]");
  GradMap analytic;
  {
    Graph g(mode);
    Var loss = build(g);
    g.backward(loss);
    analytic = g.param_grads(params);
  }
  auto evaluate = [&]() {
    Graph g(mode);
    return build(g).value().item();
  };
  double worst = 0.0;
  for (const auto& name : params.trainable_names()) {
    Tensor& p = params.value(name);
    const Tensor& a = analytic.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double up = evaluate();
      p[i] = saved - eps;
      const double down = evaluate();
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(a[i] - numeric) / std::max(1.0, std::abs(a[i])));
    }
  }
  return worst;
}

}  // namespace itnet::ag
