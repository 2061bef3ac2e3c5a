#include "memground/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "memground/errors.hpp"

namespace memground {

namespace {

struct Tape {
  std::vector<std::shared_ptr<detail::Node>> nodes;
  bool enabled = true;
};

Tape& tape() {
  thread_local Tape t;
  return t;
}

std::atomic<std::size_t> g_degenerate{0};

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void dim_error(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_of(a) +
                       " and " + shape_of(b));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) dim_error(op, a.value(), b.value());
}

// Builds an op result. `backward` receives the result's grad and must add
// into the grads of parents that require them.
template <typename Fn>
Tensor make_result(Matrix value, std::initializer_list<const Tensor*> parents, Fn&& backward) {
  auto node = std::make_shared<detail::Node>();
  node->grad = Matrix::Zero(value.rows(), value.cols());
  node->value = std::move(value);
  bool needs = false;
  if (tape().enabled) {
    for (const Tensor* p : parents) needs = needs || p->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->backward = std::forward<Fn>(backward);
    tape().nodes.push_back(node);
  }
  return Tensor(std::move(node));
}

template <typename Fn>
Tensor make_result_n(Matrix value, std::span<const Tensor> parents, Fn&& backward) {
  auto node = std::make_shared<detail::Node>();
  node->grad = Matrix::Zero(value.rows(), value.cols());
  node->value = std::move(value);
  bool needs = false;
  if (tape().enabled) {
    for (const Tensor& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->backward = std::forward<Fn>(backward);
    tape().nodes.push_back(node);
  }
  return Tensor(std::move(node));
}

inline void accumulate(const std::shared_ptr<detail::Node>& n, const auto& g) {
  if (n->requires_grad) n->grad += g;
}

}  // namespace

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<detail::Node>();
  node->grad = Matrix::Zero(value.rows(), value.cols());
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  Tensor t = constant(std::move(value));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::zeros(Eigen::Index rows, Eigen::Index cols) {
  return constant(Matrix::Zero(rows, cols));
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

std::string Tensor::shape_string() const { return shape_of(node_->value); }

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) {
    throw DimensionError("item(): expected 1x1 tensor, got " + shape_string());
  }
  return node_->value(0, 0);
}

Tensor Tensor::detach() const { return constant(node_->value); }

void backward(const Tensor& out) {
  if (out.rows() != 1 || out.cols() != 1) {
    throw DimensionError("backward(): output must be 1x1, got " + out.shape_string());
  }
  auto& t = tape();
  if (out.requires_grad()) {
    out.node()->grad(0, 0) += 1.0;
    for (auto it = t.nodes.rbegin(); it != t.nodes.rend(); ++it) {
      auto& n = **it;
      if (n.backward) n.backward(n.grad);
    }
  }
  clear_tape();
}

void clear_tape() {
  auto& t = tape();
  for (auto& n : t.nodes) n->backward = nullptr;
  t.nodes.clear();
}

std::size_t tape_size() { return tape().nodes.size(); }

NoGradGuard::NoGradGuard() : previous_(tape().enabled) { tape().enabled = false; }
NoGradGuard::~NoGradGuard() { tape().enabled = previous_; }

bool grad_enabled() { return tape().enabled; }

std::size_t degenerate_vector_warnings() { return g_degenerate.load(); }

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_sim: vector lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kDegenerateNorm || nb < kDegenerateNorm) {
    g_degenerate.fetch_add(1, std::memory_order_relaxed);
    return 0.0;
  }
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) dim_error("matmul", a.value(), b.value());
  auto an = a.node(), bn = b.node();
  return make_result(a.value() * b.value(), {&a, &b}, [an, bn](const Matrix& g) {
    if (an->requires_grad) an->grad.noalias() += g * bn->value.transpose();
    if (bn->requires_grad) bn->grad.noalias() += an->value.transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  auto an = a.node();
  return make_result(a.value().transpose(), {&a},
                     [an](const Matrix& g) { accumulate(an, g.transpose()); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto an = a.node(), bn = b.node();
  return make_result(a.value() + b.value(), {&a, &b}, [an, bn](const Matrix& g) {
    accumulate(an, g);
    accumulate(bn, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto an = a.node(), bn = b.node();
  return make_result(a.value() - b.value(), {&a, &b}, [an, bn](const Matrix& g) {
    accumulate(an, g);
    if (bn->requires_grad) bn->grad -= g;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto an = a.node(), bn = b.node();
  return make_result(a.value().cwiseProduct(b.value()), {&a, &b}, [an, bn](const Matrix& g) {
    if (an->requires_grad) an->grad += g.cwiseProduct(bn->value);
    if (bn->requires_grad) bn->grad += g.cwiseProduct(an->value);
  });
}

Tensor scale(const Tensor& a, double s) {
  auto an = a.node();
  return make_result(a.value() * s, {&a}, [an, s](const Matrix& g) { accumulate(an, g * s); });
}

Tensor add_row(const Tensor& a, const Tensor& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) dim_error("add_row", a.value(), r.value());
  auto an = a.node(), rn = r.node();
  Matrix out = a.value().rowwise() + r.value().row(0);
  return make_result(std::move(out), {&a, &r}, [an, rn](const Matrix& g) {
    accumulate(an, g);
    if (rn->requires_grad) rn->grad += g.colwise().sum();
  });
}

Tensor sigmoid(const Tensor& a) {
  Matrix y = a.value().unaryExpr([](double x) {
    // Branch keeps exp() from overflowing for large |x|.
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  auto an = a.node();
  Matrix y_copy = y;
  return make_result(std::move(y), {&a}, [an, y_copy](const Matrix& g) {
    if (an->requires_grad) {
      an->grad += g.cwiseProduct(y_copy.cwiseProduct((1.0 - y_copy.array()).matrix()));
    }
  });
}

Tensor tanh(const Tensor& a) {
  Matrix y = a.value().array().tanh().matrix();
  auto an = a.node();
  Matrix y_copy = y;
  return make_result(std::move(y), {&a}, [an, y_copy](const Matrix& g) {
    if (an->requires_grad) an->grad += (g.array() * (1.0 - y_copy.array().square())).matrix();
  });
}

Tensor relu(const Tensor& a) {
  auto an = a.node();
  return make_result(a.value().cwiseMax(0.0), {&a}, [an](const Matrix& g) {
    if (an->requires_grad) {
      an->grad += (an->value.array() > 0.0).select(g, 0.0).matrix();
    }
  });
}

Tensor softplus(const Tensor& a) {
  Matrix y = a.value().unaryExpr([](double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  auto an = a.node();
  return make_result(std::move(y), {&a}, [an](const Matrix& g) {
    if (!an->requires_grad) return;
    Matrix s = an->value.unaryExpr([](double x) {
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      const double e = std::exp(x);
      return e / (1.0 + e);
    });
    an->grad += g.cwiseProduct(s);
  });
}

Tensor exp(const Tensor& a) {
  Matrix y = a.value().array().exp().matrix();
  auto an = a.node();
  Matrix y_copy = y;
  return make_result(std::move(y), {&a}, [an, y_copy](const Matrix& g) {
    if (an->requires_grad) an->grad += g.cwiseProduct(y_copy);
  });
}

Tensor log(const Tensor& a) {
  auto an = a.node();
  return make_result(a.value().array().log().matrix(), {&a}, [an](const Matrix& g) {
    if (an->requires_grad) an->grad += g.cwiseQuotient(an->value);
  });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape("minimum", a, b);
  auto an = a.node(), bn = b.node();
  return make_result(a.value().cwiseMin(b.value()), {&a, &b}, [an, bn](const Matrix& g) {
    // Ties send the gradient to the first operand.
    auto pick_a = (an->value.array() <= bn->value.array());
    if (an->requires_grad) an->grad += pick_a.select(g, 0.0).matrix();
    if (bn->requires_grad) bn->grad += pick_a.select(0.0, g).matrix();
  });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  require_same_shape("maximum", a, b);
  auto an = a.node(), bn = b.node();
  return make_result(a.value().cwiseMax(b.value()), {&a, &b}, [an, bn](const Matrix& g) {
    auto pick_a = (an->value.array() >= bn->value.array());
    if (an->requires_grad) an->grad += pick_a.select(g, 0.0).matrix();
    if (bn->requires_grad) bn->grad += pick_a.select(0.0, g).matrix();
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  auto an = a.node();
  return make_result(a.value().cwiseMax(lo).cwiseMin(hi), {&a}, [an, lo, hi](const Matrix& g) {
    if (!an->requires_grad) return;
    auto inside = (an->value.array() >= lo) && (an->value.array() <= hi);
    an->grad += inside.select(g, 0.0).matrix();
  });
}

Tensor smooth_l1(const Tensor& a, const Tensor& b) {
  require_same_shape("smooth_l1", a, b);
  Matrix diff = a.value() - b.value();
  Matrix y = diff.unaryExpr([](double d) {
    const double ad = std::abs(d);
    return ad < 1.0 ? 0.5 * d * d : ad - 0.5;
  });
  auto an = a.node(), bn = b.node();
  return make_result(std::move(y), {&a, &b}, [an, bn, diff](const Matrix& g) {
    Matrix dd = diff.unaryExpr([](double d) { return std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0); });
    Matrix ga = g.cwiseProduct(dd);
    if (an->requires_grad) an->grad += ga;
    if (bn->requires_grad) bn->grad -= ga;
  });
}

Tensor bce_with_logits(const Tensor& logits, const Matrix& labels) {
  if (labels.rows() != logits.rows() || labels.cols() != logits.cols()) {
    dim_error("bce_with_logits", logits.value(), labels);
  }
  const Matrix& x = logits.value();
  // max(x,0) - x*y + log(1 + exp(-|x|))
  Matrix y = x.cwiseMax(0.0) - x.cwiseProduct(labels) +
             x.unaryExpr([](double v) { return std::log1p(std::exp(-std::abs(v))); });
  auto ln = logits.node();
  return make_result(std::move(y), {&logits}, [ln, labels](const Matrix& g) {
    if (!ln->requires_grad) return;
    Matrix p = ln->value.unaryExpr([](double v) {
      if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
      const double e = std::exp(v);
      return e / (1.0 + e);
    });
    ln->grad += g.cwiseProduct(p - labels);
  });
}

Tensor row_softmax(const Tensor& a) {
  const Matrix& x = a.value();
  if (!x.allFinite()) throw NumericError("row_softmax: non-finite input");
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  auto an = a.node();
  Matrix y_copy = y;
  return make_result(std::move(y), {&a}, [an, y_copy](const Matrix& g) {
    if (!an->requires_grad) return;
    // dx = y * (g - <g, y>) per row
    Eigen::VectorXd dots = g.cwiseProduct(y_copy).rowwise().sum();
    an->grad += y_copy.cwiseProduct((g.colwise() - dots));
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const Eigen::Index r = parts[0].rows();
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) dim_error("concat_cols", parts[0].value(), p.value());
    c += p.cols();
  }
  Matrix out(r, c);
  std::vector<std::shared_ptr<detail::Node>> nodes;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    nodes.push_back(p.node());
  }
  return make_result_n(std::move(out), parts, [nodes](const Matrix& g) {
    Eigen::Index o = 0;
    for (const auto& n : nodes) {
      const auto w = n->value.cols();
      if (n->requires_grad) n->grad += g.middleCols(o, w);
      o += w;
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const Eigen::Index c = parts[0].cols();
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) dim_error("concat_rows", parts[0].value(), p.value());
    r += p.rows();
  }
  Matrix out(r, c);
  std::vector<std::shared_ptr<detail::Node>> nodes;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    nodes.push_back(p.node());
  }
  return make_result_n(std::move(out), parts, [nodes](const Matrix& g) {
    Eigen::Index o = 0;
    for (const auto& n : nodes) {
      const auto h = n->value.rows();
      if (n->requires_grad) n->grad += g.middleRows(o, h);
      o += h;
    }
  });
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 1 || start + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " + a.shape_string());
  }
  auto an = a.node();
  return make_result(a.value().middleRows(start, count), {&a}, [an, start, count](const Matrix& g) {
    if (an->requires_grad) an->grad.middleRows(start, count) += g;
  });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 1 || start + count > a.cols()) {
    throw DimensionError("slice_cols: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " + a.shape_string());
  }
  auto an = a.node();
  return make_result(a.value().middleCols(start, count), {&a}, [an, start, count](const Matrix& g) {
    if (an->requires_grad) an->grad.middleCols(start, count) += g;
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw InputError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  auto tn = table.node();
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result(std::move(out), {&table}, [tn, idx](const Matrix& g) {
    if (!tn->requires_grad) return;
    for (std::size_t i = 0; i < idx.size(); ++i) tn->grad.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Tensor shift_rows(const Tensor& a, Eigen::Index offset) {
  const Eigen::Index n = a.rows();
  Matrix out = Matrix::Zero(n, a.cols());
  // Rows [lo, hi) of the output are copied from rows [lo + offset, hi + offset).
  const Eigen::Index lo = std::max<Eigen::Index>(0, -offset);
  const Eigen::Index hi = std::min<Eigen::Index>(n, n - offset);
  if (hi > lo) out.middleRows(lo, hi - lo) = a.value().middleRows(lo + offset, hi - lo);
  auto an = a.node();
  return make_result(std::move(out), {&a}, [an, lo, hi, offset](const Matrix& g) {
    if (an->requires_grad && hi > lo) an->grad.middleRows(lo + offset, hi - lo) += g.middleRows(lo, hi - lo);
  });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  auto an = a.node();
  return make_result(std::move(out), {&a}, [an](const Matrix& g) {
    if (an->requires_grad) an->grad.array() += g(0, 0);
  });
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Tensor cosine_rows(const Tensor& keys, const Tensor& slots) {
  if (keys.cols() != slots.cols()) dim_error("cosine_rows", keys.value(), slots.value());
  const Matrix& k = keys.value();
  const Matrix& m = slots.value();
  const Eigen::Index p = k.rows(), l = m.rows();
  Eigen::VectorXd kn = k.rowwise().norm();
  Eigen::VectorXd sn = m.rowwise().norm();
  Matrix dots = k * m.transpose();
  Matrix out = Matrix::Zero(p, l);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < l; ++j) {
      if (kn(i) < kDegenerateNorm || sn(j) < kDegenerateNorm) {
        g_degenerate.fetch_add(1, std::memory_order_relaxed);
        continue;
      }
      out(i, j) = std::clamp(dots(i, j) / (kn(i) * sn(j)), -1.0, 1.0);
    }
  }
  auto k_node = keys.node();
  auto m_node = slots.node();
  Matrix cos = out;
  return make_result(std::move(out), {&keys, &slots}, [k_node, m_node, kn, sn, cos](const Matrix& g) {
    const Matrix& kv = k_node->value;
    const Matrix& mv = m_node->value;
    // Entries with a degenerate row carry no gradient.
    Matrix scaled = Matrix::Zero(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      for (Eigen::Index j = 0; j < g.cols(); ++j) {
        if (kn(i) < kDegenerateNorm || sn(j) < kDegenerateNorm) continue;
        scaled(i, j) = g(i, j) / (kn(i) * sn(j));
      }
    }
    const Matrix gc = g.cwiseProduct(cos);
    // d cos(k, m) / dk = m / (|k||m|) - cos * k / |k|^2, symmetric in m.
    if (k_node->requires_grad) {
      Matrix dk = scaled * mv;
      for (Eigen::Index i = 0; i < kv.rows(); ++i) {
        if (kn(i) < kDegenerateNorm) continue;
        dk.row(i) -= (gc.row(i).sum() / (kn(i) * kn(i))) * kv.row(i);
      }
      k_node->grad += dk;
    }
    if (m_node->requires_grad) {
      Matrix dm = scaled.transpose() * kv;
      for (Eigen::Index j = 0; j < mv.rows(); ++j) {
        if (sn(j) < kDegenerateNorm) continue;
        dm.row(j) -= (gc.col(j).sum() / (sn(j) * sn(j))) * mv.row(j);
      }
      m_node->grad += dm;
    }
  });
}

Tensor cosine_rows(const Tensor& keys, const Matrix& slots) { return cosine_rows(keys, Tensor::constant(slots)); }

Tensor slot_read(const Tensor& keys, const Matrix& slots) {
  if (keys.cols() != slots.cols()) dim_error("slot_read", keys.value(), slots);
  const Matrix& k = keys.value();
  const Eigen::Index p = k.rows(), l = slots.rows();
  Eigen::VectorXd kn = k.rowwise().norm();
  Eigen::VectorXd sn = slots.rowwise().norm();
  Matrix cos = k * slots.transpose();
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < l; ++j) {
      if (kn(i) < kDegenerateNorm || sn(j) < kDegenerateNorm) {
        g_degenerate.fetch_add(1, std::memory_order_relaxed);
        cos(i, j) = 0.0;
        continue;
      }
      cos(i, j) = std::clamp(cos(i, j) / (kn(i) * sn(j)), -1.0, 1.0);
    }
  }
  Matrix w(p, l);
  for (Eigen::Index i = 0; i < p; ++i) {
    w.row(i) = (cos.row(i).array() - cos.row(i).maxCoeff()).exp().matrix();
    w.row(i) /= w.row(i).sum();
  }
  Matrix out = w * slots;
  auto kn_node = keys.node();
  return make_result(std::move(out), {&keys}, [kn_node, slots, kn, sn, cos, w](const Matrix& g) {
    if (!kn_node->requires_grad) return;
    const Matrix& kv = kn_node->value;
    const Matrix gw = g * slots.transpose();
    const Eigen::VectorXd dots = gw.cwiseProduct(w).rowwise().sum();
    Matrix gc = w.cwiseProduct(gw.colwise() - dots);
    for (Eigen::Index i = 0; i < gc.rows(); ++i) {
      for (Eigen::Index j = 0; j < gc.cols(); ++j) {
        gc(i, j) = (kn(i) < kDegenerateNorm || sn(j) < kDegenerateNorm) ? 0.0 : gc(i, j) / (kn(i) * sn(j));
      }
    }
    Matrix dk = gc * slots;
    for (Eigen::Index i = 0; i < kv.rows(); ++i) {
      if (kn(i) < kDegenerateNorm) continue;
      const double radial = gc.row(i).dot(cos.row(i).cwiseProduct(sn.transpose())) * kn(i);
      dk.row(i) -= (radial / (kn(i) * kn(i))) * kv.row(i);
    }
    kn_node->grad += dk;
  });
}

}  // namespace memground
