#pragma once

// Dense row-major tensors with a define-by-run reverse-mode tape.
//
// Every value is a 2-D Eigen matrix; vectors are 1 x n rows. A Tape records
// each primitive as it is evaluated and replays the records backwards in
// backward(). Parameters live outside the tape and receive gradients through
// leaf nodes.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace kbqg::nd {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct NumericError : std::domain_error {
  using std::domain_error::domain_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

template <typename Derived>
std::string shape_str(const Eigen::MatrixBase<Derived>& m) {
  return "[" + std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "]";
}

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kProbFloor = 1e-12;

/// A named trainable matrix with its gradient accumulator.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool frozen = false;

  Parameter(std::string n, Matrix<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

/// Name-keyed registry with stable addresses and deterministic (sorted) order.
template <typename Scalar>
class ParamStore {
 public:
  Parameter<Scalar>& add(const std::string& name, Matrix<Scalar> value) {
    if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<Scalar>>(name, std::move(value));
    auto& ref = *p;
    params_.emplace(name, std::move(p));
    return ref;
  }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter: " + name);
    return *it->second;
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter: " + name);
    return *it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad() {
    for (auto& [_, p] : params_) p->zero_grad();
  }

  std::size_t size() const { return params_.size(); }

  template <typename F>
  void for_each(F&& f) {
    for (auto& [_, p] : params_) f(*p);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& [_, p] : params_) f(static_cast<const Parameter<Scalar>&>(*p));
  }

 private:
  std::map<std::string, std::unique_ptr<Parameter<Scalar>>> params_;
};

template <typename Scalar>
class Tape;

/// Handle to a node on a tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<Scalar>& value() const { return tape->value(id); }
  const Matrix<Scalar>& grad() const { return tape->grad(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// The computation record. Nodes are appended in evaluation order, so the
/// vector order is already topological.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<Scalar> push(Mat value, Backward back = {}) {
    nodes_.push_back(Node{std::move(value), Mat{}, record_ ? std::move(back) : Backward{}, nullptr});
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  Var<Scalar> constant(Mat value) { return push(std::move(value)); }

  Var<Scalar> param(Parameter<Scalar>& p) {
    auto v = push(p.value);
    nodes_.back().param = &p;
    return v;
  }

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  Mat& grad(std::size_t id) { return nodes_[id].grad; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a 1x1 loss. Parameter leaves accumulate into
  /// Parameter::grad (unless frozen).
  void backward(const Var<Scalar>& loss) {
    if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
    if (!record_) throw ContractError("backward: tape was built without recording");
    const auto& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1)
      throw ContractError("backward: loss must be scalar, got " + shape_str(lv));
    for (std::size_t i = 0; i <= loss.id; ++i)
      nodes_[i].grad = Mat::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
    nodes_[loss.id].grad(0, 0) = Scalar(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.param) {
        if (!n.param->frozen) n.param->grad += n.grad;
      } else if (n.back) {
        n.back(*this, i);
      }
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward back;
    Parameter<Scalar>* param;
  };
  std::vector<Node> nodes_;
  bool record_;
};

namespace detail {

template <typename Scalar>
void same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

template <typename Scalar>
void same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

/// a[m,k] * b[k,n]
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.value()) + " x " +
                         shape_str(b.value()));
  auto& t = *a.tape;
  const auto ia = a.id, ib = b.id;
  return t.push(a.value() * b.value(), [ia, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.grad(ia).noalias() += g * t.value(ib).transpose();
    t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

/// a[m,k] * b[n,k]^T
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_tape(a, b);
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_str(a.value()) + " x " +
                         shape_str(b.value()) + "^T");
  auto& t = *a.tape;
  const auto ia = a.id, ib = b.id;
  return t.push(a.value() * b.value().transpose(), [ia, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.grad(ia).noalias() += g * t.value(ib);
    t.grad(ib).noalias() += g.transpose() * t.value(ia);
  });
}

// ---------------------------------------------------------------- elementwise

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_shape("add", a, b);
  const auto ia = a.id, ib = b.id;
  return a.tape->push(a.value() + b.value(), [ia, ib](Tape<Scalar>& t, std::size_t self) {
    t.grad(ia) += t.grad(self);
    t.grad(ib) += t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_shape("sub", a, b);
  const auto ia = a.id, ib = b.id;
  return a.tape->push(a.value() - b.value(), [ia, ib](Tape<Scalar>& t, std::size_t self) {
    t.grad(ia) += t.grad(self);
    t.grad(ib) -= t.grad(self);
  });
}

/// Element-wise (Hadamard) product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::same_shape("mul", a, b);
  const auto ia = a.id, ib = b.id;
  return a.tape->push(a.value().cwiseProduct(b.value()), [ia, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.grad(ia) += g.cwiseProduct(t.value(ib));
    t.grad(ib) += g.cwiseProduct(t.value(ia));
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, std::type_identity_t<Scalar> s) {
  const auto ia = a.id;
  return a.tape->push(a.value() * s, [ia, s](Tape<Scalar>& t, std::size_t self) { t.grad(ia) += t.grad(self) * s; });
}

/// 1 - a
template <typename Scalar>
Var<Scalar> one_minus(const Var<Scalar>& a) {
  const auto ia = a.id;
  Matrix<Scalar> v = (Scalar(1) - a.value().array()).matrix();
  return a.tape->push(std::move(v), [ia](Tape<Scalar>& t, std::size_t self) { t.grad(ia) -= t.grad(self); });
}

/// a[m,n] + row[1,n] broadcast over rows.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  detail::same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_row: expected [1," + std::to_string(a.cols()) + "], got " + shape_str(row.value()));
  const auto ia = a.id, ir = row.id;
  Matrix<Scalar> v = a.value().rowwise() + row.value().row(0);
  return a.tape->push(std::move(v), [ia, ir](Tape<Scalar>& t, std::size_t self) {
    t.grad(ia) += t.grad(self);
    t.grad(ir) += t.grad(self).colwise().sum();
  });
}

/// a[m,n] scaled row-wise by col[m,1].
template <typename Scalar>
Var<Scalar> scale_rows(const Var<Scalar>& a, const Var<Scalar>& col) {
  detail::same_tape(a, col);
  if (col.cols() != 1 || col.rows() != a.rows())
    throw DimensionError("scale_rows: expected [" + std::to_string(a.rows()) + ",1], got " + shape_str(col.value()));
  const auto ia = a.id, ic = col.id;
  Matrix<Scalar> v = col.value().col(0).asDiagonal() * a.value();
  return a.tape->push(std::move(v), [ia, ic](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.grad(ia) += t.value(ic).col(0).asDiagonal() * g;
    t.grad(ic) += g.cwiseProduct(t.value(ia)).rowwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  const auto ia = a.id;
  Matrix<Scalar> v = a.value().cwiseMax(Scalar(0));
  return a.tape->push(std::move(v), [ia](Tape<Scalar>& t, std::size_t self) {
    t.grad(ia) += (t.value(ia).array() > Scalar(0)).select(t.grad(self), Scalar(0)).matrix();
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  const auto ia = a.id;
  Matrix<Scalar> v = a.value().array().tanh().matrix();
  return a.tape->push(std::move(v), [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.grad(ia) += (t.grad(self).array() * (Scalar(1) - y.array().square())).matrix();
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  const auto ia = a.id;
  Matrix<Scalar> v = (Scalar(1) / (Scalar(1) + (-a.value().array()).exp())).matrix();
  return a.tape->push(std::move(v), [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.grad(ia) += (t.grad(self).array() * y.array() * (Scalar(1) - y.array())).matrix();
  });
}

/// Multiply by a fixed 0/1-scaled mask (inverted dropout).
template <typename Scalar>
Var<Scalar> mask_mul(const Var<Scalar>& a, const Matrix<Scalar>& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols())
    throw DimensionError("mask_mul: mask " + shape_str(mask) + " vs " + shape_str(a.value()));
  const auto ia = a.id;
  return a.tape->push(a.value().cwiseProduct(mask), [ia, mask](Tape<Scalar>& t, std::size_t self) {
    t.grad(ia) += t.grad(self).cwiseProduct(mask);
  });
}

// ---------------------------------------------------------------- softmax / norm

/// Row-wise softmax with max subtraction. Entries where `allowed` is false
/// get probability 0; a row needs at least one allowed entry.
template <typename Scalar>
Var<Scalar> masked_softmax_rows(const Var<Scalar>& a, const Mask& allowed) {
  const auto& x = a.value();
  if (allowed.rows() != x.rows() || allowed.cols() != x.cols())
    throw DimensionError("softmax: mask " + shape_str(allowed.template cast<int>()) + " vs " + shape_str(x));
  if (!x.allFinite()) throw NumericError("softmax: non-finite input");
  Matrix<Scalar> y = Matrix<Scalar>::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (allowed(r, c)) mx = std::max(mx, x(r, c));
    if (!std::isfinite(mx)) throw ContractError("softmax: row " + std::to_string(r) + " fully masked");
    Scalar z = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (allowed(r, c)) z += (y(r, c) = std::exp(x(r, c) - mx));
    y.row(r) /= z;
  }
  const auto ia = a.id;
  return a.tape->push(std::move(y), [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    // dx = y * (g - <g, y>) row-wise; masked entries have y = 0.
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    t.grad(ia) += (y.array() * (g.colwise() - dot).array()).matrix();
  });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  return masked_softmax_rows(a, Mask::Constant(a.rows(), a.cols(), true));
}

/// Lower-triangular mask: row i sees columns 0..i.
inline Mask causal_mask(Eigen::Index n) {
  Mask m(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) m(r, c) = c <= r;
  return m;
}

/// Row-wise layer normalization, eps inside the square root, then affine.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& a, const Var<Scalar>& gain, const Var<Scalar>& bias) {
  detail::same_tape(a, gain);
  detail::same_tape(a, bias);
  const auto n = a.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw DimensionError("layer_norm: gain/bias must be [1," + std::to_string(n) + "]");
  const auto& x = a.value();
  Matrix<Scalar> xhat(x.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mu = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
    xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  Matrix<Scalar> y = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  y.rowwise() += bias.value().row(0);
  const auto ia = a.id, ig = gain.id, ib = bias.id;
  return a.tape->push(std::move(y), [ia, ig, ib, xhat, inv_std, n](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
    t.grad(ib) += g.colwise().sum();
    Matrix<Scalar> gh = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const Scalar mean_gh = gh.row(r).mean();
      const Scalar mean_ghx = gh.row(r).dot(xhat.row(r)) / Scalar(n);
      t.grad(ia).row(r) += (inv_std(r) * (gh.row(r).array() - mean_gh - xhat.row(r).array() * mean_ghx)).matrix();
    }
  });
}

// ---------------------------------------------------------------- structure

template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  auto& tp = *parts[0].tape;
  const auto rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.rows() != rows)
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].value()) + " vs " + shape_str(p.value()));
    cols += p.cols();
  }
  Matrix<Scalar> v(rows, cols);
  std::vector<std::size_t> ids;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    ids.push_back(p.id);
  }
  return tp.push(std::move(v), [ids](Tape<Scalar>& t, std::size_t self) {
    Eigen::Index off = 0;
    for (auto id : ids) {
      const auto c = t.value(id).cols();
      t.grad(id) += t.grad(self).middleCols(off, c);
      off += c;
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(std::initializer_list<Var<Scalar>> parts) {
  return concat_cols(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  auto& tp = *parts[0].tape;
  const auto cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.cols() != cols)
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].value()) + " vs " + shape_str(p.value()));
    rows += p.rows();
  }
  Matrix<Scalar> v(rows, cols);
  std::vector<std::size_t> ids;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    ids.push_back(p.id);
  }
  return tp.push(std::move(v), [ids](Tape<Scalar>& t, std::size_t self) {
    Eigen::Index off = 0;
    for (auto id : ids) {
      const auto r = t.value(id).rows();
      t.grad(id) += t.grad(self).middleRows(off, r);
      off += r;
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(std::initializer_list<Var<Scalar>> parts) {
  return concat_rows(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 1 || start + count > a.cols())
    throw IndexError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + count) + ") outside " +
                     shape_str(a.value()));
  const auto ia = a.id;
  return a.tape->push(a.value().middleCols(start, count), [ia, start, count](Tape<Scalar>& t, std::size_t self) {
    t.grad(ia).middleCols(start, count) += t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 1 || start + count > a.rows())
    throw IndexError("slice_rows: [" + std::to_string(start) + "," + std::to_string(start + count) + ") outside " +
                     shape_str(a.value()));
  const auto ia = a.id;
  return a.tape->push(a.value().middleRows(start, count), [ia, start, count](Tape<Scalar>& t, std::size_t self) {
    t.grad(ia).middleRows(start, count) += t.grad(self);
  });
}

/// Rows of an embedding table; backward scatter-adds into the table grad.
template <typename Scalar>
Var<Scalar> gather_rows(Tape<Scalar>& tape, Parameter<Scalar>& table, std::span<const int> ids) {
  Matrix<Scalar> v(static_cast<Eigen::Index>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.value.rows())
      throw IndexError("gather: id " + std::to_string(ids[i]) + " outside table '" + table.name + "' of " +
                       std::to_string(table.value.rows()) + " rows");
    v.row(static_cast<Eigen::Index>(i)) = table.value.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  Parameter<Scalar>* tp = &table;
  return tape.push(std::move(v), [idv, tp](Tape<Scalar>& t, std::size_t self) {
    if (tp->frozen) return;
    const auto& g = t.grad(self);
    for (std::size_t i = 0; i < idv.size(); ++i) tp->grad.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

/// out[:, targets[j]] += a[:, j]; output has `width` columns.
template <typename Scalar>
Var<Scalar> scatter_cols(const Var<Scalar>& a, std::span<const int> targets, Eigen::Index width) {
  if (static_cast<Eigen::Index>(targets.size()) != a.cols())
    throw DimensionError("scatter_cols: " + std::to_string(targets.size()) + " targets for " + shape_str(a.value()));
  Matrix<Scalar> v = Matrix<Scalar>::Zero(a.rows(), width);
  for (std::size_t j = 0; j < targets.size(); ++j) {
    if (targets[j] < 0 || targets[j] >= width)
      throw IndexError("scatter_cols: target " + std::to_string(targets[j]) + " outside width " + std::to_string(width));
    v.col(targets[j]) += a.value().col(static_cast<Eigen::Index>(j));
  }
  std::vector<int> tv(targets.begin(), targets.end());
  const auto ia = a.id;
  return a.tape->push(std::move(v), [ia, tv](Tape<Scalar>& t, std::size_t self) {
    for (std::size_t j = 0; j < tv.size(); ++j) t.grad(ia).col(static_cast<Eigen::Index>(j)) += t.grad(self).col(tv[j]);
  });
}

/// Row-wise max over column groups: out[r, k] = max_{j : group[j] == k} a[r, j].
/// Ties go to the lowest column; the gradient flows to that column only.
template <typename Scalar>
Var<Scalar> group_max_cols(const Var<Scalar>& a, std::span<const int> group, int n_groups) {
  if (static_cast<Eigen::Index>(group.size()) != a.cols())
    throw DimensionError("group_max_cols: " + std::to_string(group.size()) + " labels for " + shape_str(a.value()));
  const auto& x = a.value();
  Matrix<Scalar> v(x.rows(), n_groups);
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg =
      Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(x.rows(), n_groups, -1);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const int k = group[static_cast<std::size_t>(j)];
      if (k < 0 || k >= n_groups) throw IndexError("group_max_cols: group " + std::to_string(k));
      if (arg(r, k) < 0 || x(r, j) > v(r, k)) {
        v(r, k) = x(r, j);
        arg(r, k) = static_cast<int>(j);
      }
    }
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (int k = 0; k < n_groups; ++k)
      if (arg(r, k) < 0) throw ContractError("group_max_cols: empty group " + std::to_string(k));
  const auto ia = a.id;
  return a.tape->push(std::move(v), [ia, arg](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index k = 0; k < g.cols(); ++k) t.grad(ia)(r, arg(r, k)) += g(r, k);
  });
}

/// Divide each row by its sum (rows must have positive sums).
template <typename Scalar>
Var<Scalar> normalize_rows(const Var<Scalar>& a) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> s = a.value().rowwise().sum();
  if ((s.array() <= Scalar(0)).any()) throw NumericError("normalize_rows: non-positive row sum");
  Matrix<Scalar> v = s.cwiseInverse().asDiagonal() * a.value();
  const auto ia = a.id;
  return a.tape->push(std::move(v), [ia, s](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    // d(x_j / S)/dx_i = (delta_ij - y_j) / S
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    t.grad(ia) += s.cwiseInverse().asDiagonal() * (g.colwise() - dot);
  });
}

// ---------------------------------------------------------------- reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> v(1, 1);
  v(0, 0) = a.value().sum();
  const auto ia = a.id;
  return a.tape->push(std::move(v), [ia](Tape<Scalar>& t, std::size_t self) {
    t.grad(ia).array() += t.grad(self)(0, 0);
  });
}

/// -log(max(a[r,c], floor)) as a 1x1 node; zero gradient below the floor.
template <typename Scalar>
Var<Scalar> neg_log_prob(const Var<Scalar>& a, Eigen::Index r, Eigen::Index c,
                         std::type_identity_t<Scalar> floor = Scalar(kProbFloor)) {
  if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols())
    throw IndexError("neg_log_prob: (" + std::to_string(r) + "," + std::to_string(c) + ") outside " +
                     shape_str(a.value()));
  const Scalar p = a.value()(r, c);
  Matrix<Scalar> v(1, 1);
  v(0, 0) = -std::log(std::max(p, floor));
  const auto ia = a.id;
  return a.tape->push(std::move(v), [ia, r, c, p, floor](Tape<Scalar>& t, std::size_t self) {
    if (p > floor) t.grad(ia)(r, c) -= t.grad(self)(0, 0) / p;
  });
}

/// Sum of 1x1 nodes.
template <typename Scalar>
Var<Scalar> add_scalars(std::span<const Var<Scalar>> xs) {
  if (xs.empty()) throw ContractError("add_scalars: no inputs");
  Matrix<Scalar> v = Matrix<Scalar>::Zero(1, 1);
  std::vector<std::size_t> ids;
  for (const auto& x : xs) {
    if (x.rows() != 1 || x.cols() != 1) throw DimensionError("add_scalars: non-scalar " + shape_str(x.value()));
    v(0, 0) += x.value()(0, 0);
    ids.push_back(x.id);
  }
  return xs[0].tape->push(std::move(v), [ids](Tape<Scalar>& t, std::size_t self) {
    for (auto id : ids) t.grad(id) += t.grad(self);
  });
}

}  // namespace kbqg::nd
