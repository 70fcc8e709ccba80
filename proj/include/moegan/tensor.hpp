#pragma once

// Dense tensors with reverse-mode differentiation on a per-step tape.
//
// - Tensor<S> is a shared handle to a Node holding an Eigen matrix (rank 0
//   scalars and rank 1 vectors are stored as n x 1 columns).
// - Ops are free functions. While a Tape is active on the current thread and
//   any input requires grad, the op records a backward closure on it; with no
//   active tape the result is a plain value that requires no grad.
// - Tape::backward walks the recorded nodes in reverse execution order once,
//   accumulating into .grad of every tensor that requires grad. Parameter
//   grads persist across tapes until explicitly zeroed.

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace moegan {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::string dims(long r, long c) {
  return std::to_string(r) + "x" + std::to_string(c);
}
}  // namespace detail

template <typename S>
struct Node {
  Mat<S> value;
  Mat<S> grad;  // empty until first accumulation
  int rank = 2;
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 = leaf / untaped
  std::function<void(const Mat<S>&)> backprop;

  void accumulate(const Mat<S>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) grad = Mat<S>::Zero(value.rows(), value.cols());
    grad += g;
  }
};

template <typename S>
class Tape;

template <typename S>
class Tensor {
 public:
  using scalar_type = S;

  Tensor() = default;

  static Tensor scalar(S v, bool requires_grad = false) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m), 0, requires_grad);
  }
  static Tensor vector(std::initializer_list<S> xs, bool requires_grad = false) {
    Mat<S> m(static_cast<long>(xs.size()), 1);
    long i = 0;
    for (S x : xs) m(i++, 0) = x;
    return leaf(std::move(m), 1, requires_grad);
  }
  static Tensor vector(const Mat<S>& col, bool requires_grad = false) {
    if (col.cols() != 1) throw ShapeError("vector: expected a column, got " + detail::dims(col.rows(), col.cols()));
    return leaf(col, 1, requires_grad);
  }
  static Tensor matrix(Mat<S> m, bool requires_grad = false) {
    return leaf(std::move(m), 2, requires_grad);
  }
  static Tensor zeros(long rows, long cols, int rank = 2, bool requires_grad = false) {
    return leaf(Mat<S>::Zero(rows, cols), rank, requires_grad);
  }
  static Tensor make(Mat<S> m, int rank, bool requires_grad = false) {
    return leaf(std::move(m), rank, requires_grad);
  }

  bool valid() const { return node_ != nullptr; }
  const Mat<S>& value() const { return node_->value; }
  Mat<S>& value() { return node_->value; }
  long rows() const { return node_->value.rows(); }
  long cols() const { return node_->value.cols(); }
  long size() const { return node_->value.size(); }
  int rank() const { return node_->rank; }
  S item() const {
    if (node_->value.size() != 1) throw ShapeError("item: tensor is not scalar");
    return node_->value(0, 0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Mat<S>& grad() const {
    if (!has_grad()) ensure_grad();
    return node_->grad;
  }
  Mat<S>& grad() {
    if (!has_grad()) ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.setZero(node_->value.rows(), node_->value.cols()); }

  // Value copy detached from any graph.
  Tensor detached() const { return leaf(node_->value, node_->rank, false); }

  std::shared_ptr<Node<S>> node() const { return node_; }

 private:
  friend class Tape<S>;
  template <typename T, typename B>
  friend Tensor<T> make_op(const char*, Mat<T>, int, std::initializer_list<Tensor<T>>, B&&);

  static Tensor leaf(Mat<S> m, int rank, bool requires_grad) {
    Tensor t;
    t.node_ = std::make_shared<Node<S>>();
    t.node_->value = std::move(m);
    t.node_->rank = rank;
    t.node_->requires_grad = requires_grad;
    return t;
  }
  void ensure_grad() const { node_->grad = Mat<S>::Zero(node_->value.rows(), node_->value.cols()); }

  std::shared_ptr<Node<S>> node_;
};

// Ordered named parameter collection. Shared tensors (e.g. experts with tied
// weights) are registered once; order is the serialization order.
template <typename S>
class ParamRegistry {
 public:
  void add(std::string name, Tensor<S> t) {
    for (const auto& [n, u] : items_) {
      if (n == name) throw std::runtime_error("registry: duplicate name " + name);
      if (u.node() == t.node()) return;  // tied tensor already registered
    }
    items_.emplace_back(std::move(name), std::move(t));
  }
  void merge(const ParamRegistry& other) {
    for (const auto& [n, t] : other.items_) add(n, t);
  }
  const std::vector<std::pair<std::string, Tensor<S>>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor<S>>>& items() { return items_; }
  std::size_t size() const { return items_.size(); }

  Tensor<S>* find(std::string_view name) {
    for (auto& [n, t] : items_)
      if (n == name) return &t;
    return nullptr;
  }

  void zero_grads() {
    for (auto& [n, t] : items_) t.zero_grad();
  }
  void set_requires_grad(bool rg) {
    for (auto& [n, t] : items_) t.set_requires_grad(rg);
  }

  // FNV-1a over the raw value bytes, in registry order.
  std::uint64_t value_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [n, t] : items_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(t.value().data());
      std::size_t len = static_cast<std::size_t>(t.value().size()) * sizeof(S);
      for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> items_;
};

template <typename S>
using GradientMap = std::map<std::string, Tensor<S>>;

template <typename S>
class Tape {
 public:
  Tape() : id_(next_id_.fetch_add(1, std::memory_order_relaxed) + 1), prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::shared_ptr<Node<S>> n) {
    n->tape_id = id_;
    nodes_.push_back(std::move(n));
  }
  std::size_t size() const { return nodes_.size(); }
  bool recorded(const Tensor<S>& t) const { return t.node() && t.node()->tape_id == id_; }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse execution
  // order, visiting each recorded node once.
  void backward(const Tensor<S>& loss) {
    if (nodes_.empty()) throw TapeError("backward: tape is empty");
    if (loss.size() != 1 || loss.rank() != 0) throw TapeError("backward: loss is not a scalar");
    if (loss.node()->tape_id != id_) throw TapeError("backward: loss was not produced on this tape");
    if (backward_run_) throw TapeError("backward: already run on this tape");
    backward_run_ = true;
    loss.node()->accumulate(Mat<S>::Ones(1, 1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<S>& n = **it;
      if (n.grad.size() != 0 && n.backprop) n.backprop(n.grad);
    }
  }

  // Backward plus collection: every registered parameter gets an entry;
  // parameters unreachable from the loss come back as exact zeros.
  GradientMap<S> backward(const Tensor<S>& loss, const ParamRegistry<S>& params) {
    backward(loss);
    GradientMap<S> out;
    for (const auto& [name, t] : params.items()) {
      Mat<S> g = t.has_grad() ? t.grad() : Mat<S>::Zero(t.rows(), t.cols());
      out.emplace(name, Tensor<S>::leaf(std::move(g), t.rank(), false));
    }
    return out;
  }

 private:
  std::vector<std::shared_ptr<Node<S>>> nodes_;
  std::uint64_t id_;
  bool backward_run_ = false;
  Tape* prev_ = nullptr;
  static inline thread_local Tape* active_ = nullptr;
  static inline std::atomic<std::uint64_t> next_id_{0};
};

// Temporarily marks a parameter set as constant (e.g. the discriminator
// while the generator trains); restores the flags on scope exit.
template <typename S>
class FrozenScope {
 public:
  explicit FrozenScope(ParamRegistry<S>& params) : params_(params) {
    for (auto& [n, t] : params_.items()) saved_.push_back(t.requires_grad());
    params_.set_requires_grad(false);
  }
  ~FrozenScope() {
    std::size_t i = 0;
    for (auto& [n, t] : params_.items()) t.set_requires_grad(saved_[i++]);
  }
  FrozenScope(const FrozenScope&) = delete;
  FrozenScope& operator=(const FrozenScope&) = delete;

 private:
  ParamRegistry<S>& params_;
  std::vector<bool> saved_;
};

// Scalar-type conversion; the result is a detached constant.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  return Tensor<To>::make(t.value().template cast<To>(), t.rank(), false);
}

// ---------------------------------------------------------------------------
// Op plumbing

template <typename S, typename Backward>
Tensor<S> make_op(const char* /*name*/, Mat<S> value, int rank,
                  std::initializer_list<Tensor<S>> inputs, Backward&& bwd) {
  Tensor<S> out = Tensor<S>::leaf(std::move(value), rank, false);
  Tape<S>* tape = Tape<S>::active();
  if (!tape) return out;
  bool any = false;
  for (const Tensor<S>& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node()->requires_grad = true;
  out.node()->backprop = std::forward<Backward>(bwd);
  tape->record(out.node());
  return out;
}

namespace detail {
template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch (" + dims(a.rows(), a.cols()) + " vs " +
                     dims(b.rows(), b.cols()) + ")");
}
template <typename S>
int joint_rank(const Tensor<S>& a, const Tensor<S>& b) {
  return a.rank() > b.rank() ? a.rank() : b.rank();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a, b);
  auto na = a.node(), nb = b.node();
  return make_op<S>("add", Mat<S>(a.value() + b.value()), detail::joint_rank(a, b), {a, b},
                    [na, nb](const Mat<S>& g) {
                      na->accumulate(g);
                      nb->accumulate(g);
                    });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("sub", a, b);
  auto na = a.node(), nb = b.node();
  return make_op<S>("sub", Mat<S>(a.value() - b.value()), detail::joint_rank(a, b), {a, b},
                    [na, nb](const Mat<S>& g) {
                      na->accumulate(g);
                      nb->accumulate(Mat<S>(-g));
                    });
}

// Elementwise (Hadamard) product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a, b);
  auto na = a.node(), nb = b.node();
  Mat<S> av = a.value(), bv = b.value();
  return make_op<S>("mul", Mat<S>(av.cwiseProduct(bv)), detail::joint_rank(a, b), {a, b},
                    [na, nb, av, bv](const Mat<S>& g) {
                      na->accumulate(Mat<S>(g.cwiseProduct(bv)));
                      nb->accumulate(Mat<S>(g.cwiseProduct(av)));
                    });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  auto na = a.node();
  return make_op<S>("scale", Mat<S>(a.value() * c), a.rank(), {a},
                    [na, c](const Mat<S>& g) { na->accumulate(Mat<S>(g * c)); });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return scale(a, S(-1));
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  Mat<S> y = a.value().array().exp().matrix();
  auto na = a.node();
  return make_op<S>("exp", Mat<S>(y), a.rank(), {a},
                    [na, y](const Mat<S>& g) { na->accumulate(Mat<S>(g.cwiseProduct(y))); });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  if ((a.value().array() <= S(0)).any())
    throw DomainError("log: non-positive input");
  Mat<S> x = a.value();
  auto na = a.node();
  return make_op<S>("log", Mat<S>(x.array().log().matrix()), a.rank(), {a},
                    [na, x](const Mat<S>& g) { na->accumulate(Mat<S>(g.cwiseQuotient(x))); });
}

// log(max(x, floor)); gradient is 1/x above the floor and 0 on the clamped
// region. Keeps log-probabilities finite at extreme temperatures.
template <typename S>
Tensor<S> log_clamped(const Tensor<S>& a, S floor) {
  Mat<S> x = a.value();
  Mat<S> y = x.array().max(floor).log().matrix();
  auto na = a.node();
  return make_op<S>("log_clamped", std::move(y), a.rank(), {a}, [na, x, floor](const Mat<S>& g) {
    Mat<S> d = (x.array() > floor).select(g.cwiseQuotient(x), Mat<S>::Zero(x.rows(), x.cols()));
    na->accumulate(d);
  });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
  Mat<S> y = a.value().array().tanh().matrix();
  auto na = a.node();
  return make_op<S>("tanh", Mat<S>(y), a.rank(), {a}, [na, y](const Mat<S>& g) {
    na->accumulate(Mat<S>(g.array() * (S(1) - y.array().square())));
  });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Mat<S> y = a.value().unaryExpr([](S x) {
    return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
  });
  auto na = a.node();
  return make_op<S>("sigmoid", Mat<S>(y), a.rank(), {a}, [na, y](const Mat<S>& g) {
    na->accumulate(Mat<S>(g.array() * y.array() * (S(1) - y.array())));
  });
}

// log(sigmoid(x)) in a form that never evaluates log(0):
//   x >= 0: -log1p(exp(-x));  x < 0: x - log1p(exp(x)).
template <typename S>
Tensor<S> log_sigmoid(const Tensor<S>& a) {
  Mat<S> x = a.value();
  Mat<S> y = x.unaryExpr([](S v) {
    return v >= S(0) ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
  });
  auto na = a.node();
  return make_op<S>("log_sigmoid", std::move(y), a.rank(), {a}, [na, x](const Mat<S>& g) {
    // d/dx log sigma(x) = sigma(-x)
    Mat<S> d = x.unaryExpr([](S v) {
      return v >= S(0) ? std::exp(-v) / (S(1) + std::exp(-v)) : S(1) / (S(1) + std::exp(v));
    });
    na->accumulate(Mat<S>(g.cwiseProduct(d)));
  });
}

// ---------------------------------------------------------------------------
// Softmax

// Softmax over a column vector, max-subtracted.
template <typename S>
Tensor<S> softmax(const Tensor<S>& a) {
  if (a.cols() != 1)
    throw ShapeError("softmax: expected a vector, got " + detail::dims(a.rows(), a.cols()));
  Mat<S> z = (a.value().array() - a.value().maxCoeff()).exp().matrix();
  Mat<S> y = z / z.sum();
  auto na = a.node();
  return make_op<S>("softmax", Mat<S>(y), 1, {a}, [na, y](const Mat<S>& g) {
    S dot = (g.array() * y.array()).sum();
    na->accumulate(Mat<S>(y.array() * (g.array() - dot)));
  });
}

// Row-wise softmax over a matrix.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  Mat<S> y(a.rows(), a.cols());
  for (long r = 0; r < a.rows(); ++r) {
    Eigen::Array<S, 1, Eigen::Dynamic> z = (a.value().row(r).array() - a.value().row(r).maxCoeff()).exp();
    y.row(r) = (z / z.sum()).matrix();
  }
  auto na = a.node();
  return make_op<S>("softmax_rows", Mat<S>(y), 2, {a}, [na, y](const Mat<S>& g) {
    Mat<S> d(y.rows(), y.cols());
    for (long r = 0; r < y.rows(); ++r) {
      S dot = (g.row(r).array() * y.row(r).array()).sum();
      d.row(r) = (y.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
    na->accumulate(d);
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  Mat<S> y(1, 1);
  y(0, 0) = a.value().sum();
  auto na = a.node();
  long r = a.rows(), c = a.cols();
  return make_op<S>("sum", std::move(y), 0, {a}, [na, r, c](const Mat<S>& g) {
    na->accumulate(Mat<S>(Mat<S>::Constant(r, c, g(0, 0))));
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  Mat<S> y(1, 1);
  y(0, 0) = a.value().mean();
  auto na = a.node();
  long r = a.rows(), c = a.cols();
  return make_op<S>("mean", std::move(y), 0, {a}, [na, r, c](const Mat<S>& g) {
    na->accumulate(Mat<S>(Mat<S>::Constant(r, c, g(0, 0) / S(r * c))));
  });
}

// Mean across rows of an R x C matrix: the centroid of the row vectors,
// returned as a C-vector.
template <typename S>
Tensor<S> mean_rows(const Tensor<S>& a) {
  Mat<S> y = a.value().colwise().mean().transpose();
  auto na = a.node();
  long r = a.rows();
  return make_op<S>("mean_rows", std::move(y), 1, {a}, [na, r](const Mat<S>& g) {
    Mat<S> d = (Mat<S>::Ones(r, 1) * g.transpose()) / S(r);
    na->accumulate(d);
  });
}

template <typename S>
Tensor<S> l2_norm(const Tensor<S>& a) {
  S n = a.value().norm();
  Mat<S> y(1, 1);
  y(0, 0) = n;
  Mat<S> x = a.value();
  auto na = a.node();
  return make_op<S>("l2_norm", std::move(y), 0, {a}, [na, x, n](const Mat<S>& g) {
    if (n > S(0)) na->accumulate(Mat<S>(x * (g(0, 0) / n)));
  });
}

// ---------------------------------------------------------------------------
// Matrix products

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions mismatch (" + detail::dims(a.rows(), a.cols()) +
                     " vs " + detail::dims(b.rows(), b.cols()) + ")");
  Mat<S> av = a.value(), bv = b.value();
  auto na = a.node(), nb = b.node();
  int rank = b.cols() > 1 ? 2 : (a.rows() > 1 ? 1 : 0);
  return make_op<S>("matmul", Mat<S>(av * bv), rank, {a, b}, [na, nb, av, bv](const Mat<S>& g) {
    if (na->requires_grad) na->accumulate(Mat<S>(g * bv.transpose()));
    if (nb->requires_grad) nb->accumulate(Mat<S>(av.transpose() * g));
  });
}

// A^T * B without materializing the transpose on the tape. Covers products
// such as E^T y-hat (soft feedback through the embedding).
template <typename S>
Tensor<S> matmul_t(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rows() != b.rows())
    throw ShapeError("matmul_t: leading dimensions mismatch (" + detail::dims(a.rows(), a.cols()) +
                     " vs " + detail::dims(b.rows(), b.cols()) + ")");
  Mat<S> av = a.value(), bv = b.value();
  auto na = a.node(), nb = b.node();
  int rank = b.cols() > 1 ? 2 : (a.cols() > 1 ? 1 : 0);
  return make_op<S>("matmul_t", Mat<S>(av.transpose() * bv), rank, {a, b},
                    [na, nb, av, bv](const Mat<S>& g) {
                      if (na->requires_grad) na->accumulate(Mat<S>(bv * g.transpose()));
                      if (nb->requires_grad) nb->accumulate(Mat<S>(av * g));
                    });
}

// A * B^T; the batch-row counterpart of matmul_t. A is (m x k), B (n x k).
template <typename S>
Tensor<S> matmul_bt(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_bt: trailing dimensions mismatch (" + detail::dims(a.rows(), a.cols()) +
                     " vs " + detail::dims(b.rows(), b.cols()) + ")");
  Mat<S> av = a.value(), bv = b.value();
  auto na = a.node(), nb = b.node();
  int rank = b.rows() > 1 ? 2 : (a.rows() > 1 ? 1 : 0);
  return make_op<S>("matmul_bt", Mat<S>(av * bv.transpose()), rank, {a, b},
                    [na, nb, av, bv](const Mat<S>& g) {
                      if (na->requires_grad) na->accumulate(Mat<S>(g * bv));
                      if (nb->requires_grad) nb->accumulate(Mat<S>(g.transpose() * av));
                    });
}

// out.row(i) = x.row(perm[i]); perm must be a permutation of the row indices.
template <typename S>
Tensor<S> permute_rows(const Tensor<S>& x, const std::vector<long>& perm) {
  if (static_cast<long>(perm.size()) != x.rows())
    throw ShapeError("permute_rows: permutation length " + std::to_string(perm.size()) +
                     " != rows " + std::to_string(x.rows()));
  Mat<S> y(x.rows(), x.cols());
  for (long i = 0; i < x.rows(); ++i) {
    if (perm[static_cast<std::size_t>(i)] < 0 || perm[static_cast<std::size_t>(i)] >= x.rows())
      throw ShapeError("permute_rows: index out of range");
    y.row(i) = x.value().row(perm[static_cast<std::size_t>(i)]);
  }
  auto nx = x.node();
  return make_op<S>("permute_rows", std::move(y), x.rank(), {x}, [nx, perm](const Mat<S>& g) {
    Mat<S> d = Mat<S>::Zero(g.rows(), g.cols());
    for (long i = 0; i < g.rows(); ++i) d.row(perm[static_cast<std::size_t>(i)]) += g.row(i);
    nx->accumulate(d);
  });
}

// n identical rows from one column vector.
template <typename S>
Tensor<S> replicate_row(const Tensor<S>& v, long n) {
  if (v.cols() != 1) throw ShapeError("replicate_row: expected a vector");
  Mat<S> y = Mat<S>::Ones(n, 1) * v.value().col(0).transpose();
  auto nv = v.node();
  return make_op<S>("replicate_row", std::move(y), 2, {v}, [nv](const Mat<S>& g) {
    nv->accumulate(Mat<S>(g.colwise().sum().transpose()));
  });
}

// X (R x C) plus a C-vector added to every row.
template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& x, const Tensor<S>& v) {
  if (v.cols() != 1 || v.rows() != x.cols())
    throw ShapeError("add_rowwise: bias " + detail::dims(v.rows(), v.cols()) + " does not match " +
                     detail::dims(x.rows(), x.cols()));
  Mat<S> y = x.value().rowwise() + v.value().col(0).transpose();
  auto nx = x.node(), nv = v.node();
  return make_op<S>("add_rowwise", std::move(y), 2, {x, v}, [nx, nv](const Mat<S>& g) {
    nx->accumulate(g);
    if (nv->requires_grad) nv->accumulate(Mat<S>(g.colwise().sum().transpose()));
  });
}

// ---------------------------------------------------------------------------
// Structure ops: concat, slice, stacking

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis = 0) {
  if (parts.empty()) throw ShapeError("concat: empty input list");
  long rows = parts[0].rows(), cols = parts[0].cols();
  long total = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      if (p.cols() != cols) throw ShapeError("concat: column mismatch");
      total += p.rows();
    } else {
      if (p.rows() != rows) throw ShapeError("concat: row mismatch");
      total += p.cols();
    }
  }
  Mat<S> y = axis == 0 ? Mat<S>(total, cols) : Mat<S>(rows, total);
  long off = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      y.middleRows(off, p.rows()) = p.value();
      off += p.rows();
    } else {
      y.middleCols(off, p.cols()) = p.value();
      off += p.cols();
    }
  }
  int rank = (axis == 0 && cols == 1) ? 1 : 2;

  std::vector<std::shared_ptr<Node<S>>> nodes;
  std::vector<long> sizes;
  bool any = false;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    sizes.push_back(axis == 0 ? p.rows() : p.cols());
    any = any || p.requires_grad();
  }
  Tensor<S> out = Tensor<S>::matrix(std::move(y));
  out.node()->rank = rank;
  Tape<S>* tape = Tape<S>::active();
  if (!tape || !any) return out;
  out.node()->requires_grad = true;
  out.node()->backprop = [nodes, sizes, axis](const Mat<S>& g) {
    long off2 = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (axis == 0)
        nodes[i]->accumulate(Mat<S>(g.middleRows(off2, sizes[i])));
      else
        nodes[i]->accumulate(Mat<S>(g.middleCols(off2, sizes[i])));
      off2 += sizes[i];
    }
  };
  tape->record(out.node());
  return out;
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& a, long start, long count) {
  if (start < 0 || count < 1 || start + count > a.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + std::to_string(a.rows()) +
                     " rows");
  Mat<S> y = a.value().middleRows(start, count);
  auto na = a.node();
  long rows = a.rows(), cols = a.cols();
  int rank = a.rank() == 0 ? 0 : (cols == 1 ? 1 : 2);
  return make_op<S>("slice_rows", std::move(y), rank, {a},
                    [na, start, count, rows, cols](const Mat<S>& g) {
                      Mat<S> d = Mat<S>::Zero(rows, cols);
                      d.middleRows(start, count) = g;
                      na->accumulate(d);
                    });
}

// Row i of a matrix as a column vector (an embedding lookup).
template <typename S>
Tensor<S> row_vec(const Tensor<S>& a, long i) {
  if (i < 0 || i >= a.rows())
    throw ShapeError("row_vec: row " + std::to_string(i) + " out of " + std::to_string(a.rows()));
  Mat<S> y = a.value().row(i).transpose();
  auto na = a.node();
  long rows = a.rows(), cols = a.cols();
  return make_op<S>("row_vec", std::move(y), 1, {a}, [na, i, rows, cols](const Mat<S>& g) {
    Mat<S> d = Mat<S>::Zero(rows, cols);
    d.row(i) = g.transpose();
    na->accumulate(d);
  });
}

// Stacks k column vectors of equal length n into a k x n matrix, one per row.
template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& vecs) {
  if (vecs.empty()) throw ShapeError("stack_rows: empty input list");
  long n = vecs[0].rows();
  Mat<S> y(static_cast<long>(vecs.size()), n);
  std::vector<std::shared_ptr<Node<S>>> nodes;
  bool any = false;
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    if (vecs[i].cols() != 1 || vecs[i].rows() != n) throw ShapeError("stack_rows: length mismatch");
    y.row(static_cast<long>(i)) = vecs[i].value().col(0).transpose();
    nodes.push_back(vecs[i].node());
    any = any || vecs[i].requires_grad();
  }
  Tensor<S> out = Tensor<S>::matrix(std::move(y));
  Tape<S>* tape = Tape<S>::active();
  if (!tape || !any) return out;
  out.node()->requires_grad = true;
  out.node()->backprop = [nodes](const Mat<S>& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      nodes[i]->accumulate(Mat<S>(g.row(static_cast<long>(i)).transpose()));
  };
  tape->record(out.node());
  return out;
}

// ---------------------------------------------------------------------------
// Convolution over time and max-over-time pooling
//
// Sequences of a batch are stacked along rows: x is (batch*time) x channels.
// Valid convolution with window w emits (time - w + 1) rows per sequence.

template <typename S>
Tensor<S> conv1d_over_time(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias,
                           long window, long batch = 1) {
  const long cin = x.cols();
  if (batch < 1 || x.rows() % batch != 0)
    throw ShapeError("conv1d: rows " + std::to_string(x.rows()) + " not divisible by batch " +
                     std::to_string(batch));
  const long time = x.rows() / batch;
  if (window < 1 || window > time)
    throw ShapeError("conv1d: window " + std::to_string(window) + " exceeds time " +
                     std::to_string(time));
  if (kernel.rows() != window * cin)
    throw ShapeError("conv1d: kernel rows " + std::to_string(kernel.rows()) + " != window*cin " +
                     std::to_string(window * cin));
  const long cout = kernel.cols();
  if (bias.rows() != cout || bias.cols() != 1)
    throw ShapeError("conv1d: bias " + detail::dims(bias.rows(), bias.cols()) + " != " +
                     detail::dims(cout, 1));
  const long tout = time - window + 1;

  Mat<S> cols(batch * tout, window * cin);
  for (long b = 0; b < batch; ++b)
    for (long t = 0; t < tout; ++t)
      for (long w = 0; w < window; ++w)
        cols.block(b * tout + t, w * cin, 1, cin) = x.value().row(b * time + t + w);

  Mat<S> y = cols * kernel.value();
  y.rowwise() += bias.value().col(0).transpose();

  auto nx = x.node(), nk = kernel.node(), nb = bias.node();
  Mat<S> kv = kernel.value();
  return make_op<S>("conv1d", std::move(y), 2, {x, kernel, bias},
                    [nx, nk, nb, cols, kv, batch, time, tout, window, cin](const Mat<S>& g) {
                      if (nk->requires_grad) nk->accumulate(Mat<S>(cols.transpose() * g));
                      if (nb->requires_grad) nb->accumulate(Mat<S>(g.colwise().sum().transpose()));
                      if (nx->requires_grad) {
                        Mat<S> gcols = g * kv.transpose();
                        Mat<S> gx = Mat<S>::Zero(batch * time, cin);
                        for (long b = 0; b < batch; ++b)
                          for (long t = 0; t < tout; ++t)
                            for (long w = 0; w < window; ++w)
                              gx.row(b * time + t + w) += gcols.block(b * tout + t, w * cin, 1, cin);
                        nx->accumulate(gx);
                      }
                    });
}

// Per-sequence columnwise max of a (batch*time) x channels matrix, one output
// row per sequence. Ties resolve to the earliest timestep.
template <typename S>
Tensor<S> max_over_time_batch(const Tensor<S>& x, long batch) {
  if (batch < 1 || x.rows() % batch != 0)
    throw ShapeError("max_over_time: rows " + std::to_string(x.rows()) +
                     " not divisible by batch " + std::to_string(batch));
  const long time = x.rows() / batch;
  const long c = x.cols();
  Mat<S> y(batch, c);
  std::vector<long> argmax(static_cast<std::size_t>(batch * c));
  for (long b = 0; b < batch; ++b) {
    for (long j = 0; j < c; ++j) {
      long best = 0;
      S bestv = x.value()(b * time, j);
      for (long t = 1; t < time; ++t) {
        S v = x.value()(b * time + t, j);
        if (v > bestv) {
          bestv = v;
          best = t;
        }
      }
      y(b, j) = bestv;
      argmax[static_cast<std::size_t>(b * c + j)] = best;
    }
  }
  auto nx = x.node();
  long rows = x.rows();
  return make_op<S>("max_over_time", std::move(y), 2, {x},
                    [nx, argmax, batch, time, c, rows](const Mat<S>& g) {
                      Mat<S> d = Mat<S>::Zero(rows, c);
                      for (long b = 0; b < batch; ++b)
                        for (long j = 0; j < c; ++j)
                          d(b * time + argmax[static_cast<std::size_t>(b * c + j)], j) += g(b, j);
                      nx->accumulate(d);
                    });
}

// Single-sequence form: T x C in, pooled C-vector out.
template <typename S>
Tensor<S> max_over_time(const Tensor<S>& x) {
  Tensor<S> pooled = max_over_time_batch(x, 1);  // 1 x C
  auto np = pooled.node();
  Mat<S> y = pooled.value().transpose();
  return make_op<S>("max_over_time_vec", std::move(y), 1, {pooled},
                    [np](const Mat<S>& g) { np->accumulate(Mat<S>(g.transpose())); });
}

}  // namespace moegan
