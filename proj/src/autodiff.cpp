#include "bapt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

namespace bapt {

namespace {

Tensor blank(std::size_t rows, std::size_t cols) { return Tensor::matrix(rows, cols); }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape) + " and " +
                         shape_string(b.shape) + " differ");
  }
}

// Reductions below accumulate in a fixed order. Eigen's packet reductions
// peel by pointer alignment, which made results depend on heap addresses.
template <class M>
Eigen::RowVectorXd column_sums(const M& m) {
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) acc += m.row(r);
  return acc;
}

template <class M>
Eigen::VectorXd row_sums(const M& m) {
  Eigen::VectorXd acc(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) s += m(r, c);
    acc(r) = s;
  }
  return acc;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) { return push(std::move(value), {}, nullptr); }

Var Tape::param(Tensor& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node node;
  node.external = &p;
  node.needs_grad = p.requires_grad;
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::push(Tensor value, std::vector<int> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  for (int in : inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

MatrixMap Tape::grad(int id) {
  Node& node = nodes_[id];
  if (node.external) return node.external->grad_mat();
  const Tensor& v = node.value;
  if (node.grad.size() != v.numel()) node.grad.assign(v.numel(), 0.0);
  return MatrixMap(node.grad.data(), v.rows(), v.cols());
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (loss.value().numel() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " + shape_string(loss.value().shape));
  }
  if (!nodes_[loss.id()].needs_grad) return;
  grad(loss.id())(0, 0) += 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.external || !node.backward || node.grad.empty()) continue;
    node.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(av.shape) + " and " +
                         shape_string(bv.shape));
  }
  Tensor out = blank(av.rows(), bv.cols());
  out.mat().noalias() = av.mat() * bv.mat();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    auto g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).mat().transpose();
    if (t.needs_grad(ib)) t.grad(ib).noalias() += t.value(ia).mat().transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ for " + shape_string(av.shape) + " and " +
                         shape_string(bv.shape) + "^T");
  }
  Tensor out = blank(av.rows(), bv.rows());
  out.mat().noalias() = av.mat() * bv.mat().transpose();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    auto g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).mat();
    if (t.needs_grad(ib)) t.grad(ib).noalias() += g.transpose() * t.value(ia).mat();
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  Tensor out = blank(av.cols(), av.rows());
  out.mat() = av.mat().transpose();
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    t.grad(ia) += t.grad(self).transpose();
  });
}

Var add(Var a, Var b) {
  require_same(a.value(), b.value(), "add");
  Tensor out = blank(a.rows(), a.cols());
  out.mat() = a.value().mat() + b.value().mat();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    auto g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) += g;
  });
}

Var sub(Var a, Var b) {
  require_same(a.value(), b.value(), "sub");
  Tensor out = blank(a.rows(), a.cols());
  out.mat() = a.value().mat() - b.value().mat();
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    auto g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) -= g;
  });
}

Var mul(Var a, Var b) {
  require_same(a.value(), b.value(), "mul");
  Tensor out = blank(a.rows(), a.cols());
  out.mat() = a.value().mat().cwiseProduct(b.value().mat());
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    auto g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib).mat());
    if (t.needs_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia).mat());
  });
}

Var scale(Var a, double s) {
  Tensor out = blank(a.rows(), a.cols());
  out.mat() = a.value().mat() * s;
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia, s](Tape& t, int self) { t.grad(ia) += t.grad(self) * s; });
}

Var add_row(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("add_row: row " + shape_string(rv.shape) + " does not broadcast over " +
                         shape_string(av.shape));
  }
  Tensor out = blank(av.rows(), av.cols());
  out.mat() = av.mat().rowwise() + rv.mat().row(0);
  const int ia = a.id(), ir = row.id();
  return a.tape()->push(std::move(out), {ia, ir}, [ia, ir](Tape& t, int self) {
    auto g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ir)) t.grad(ir) += column_sums(g);
  });
}

Var relu(Var a) {
  Tensor out = blank(a.rows(), a.cols());
  out.mat() = a.value().mat().cwiseMax(0.0);
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    auto g = t.grad(self);
    const auto y = t.value(self).mat();
    t.grad(ia) += (y.array() > 0.0).select(g, 0.0);
  });
}

Var tanh(Var a) {
  Tensor out = blank(a.rows(), a.cols());
  out.mat() = a.value().mat().array().tanh().matrix();
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const auto y = t.value(self).mat().array();
    t.grad(ia).array() += t.grad(self).array() * (1.0 - y.square());
  });
}

Var sigmoid(Var a) {
  Tensor out = blank(a.rows(), a.cols());
  out.mat() = a.value().mat().unaryExpr([](double x) { return stable_sigmoid(x); });
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const auto y = t.value(self).mat().array();
    t.grad(ia).array() += t.grad(self).array() * y * (1.0 - y);
  });
}

Var log(Var a) {
  Tensor out = blank(a.rows(), a.cols());
  out.mat() = a.value().mat().array().log().matrix();
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    t.grad(ia).array() += t.grad(self).array() / t.value(ia).mat().array();
  });
}

Var exp(Var a) {
  Tensor out = blank(a.rows(), a.cols());
  out.mat() = a.value().mat().array().exp().matrix();
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    t.grad(ia).array() += t.grad(self).array() * t.value(self).mat().array();
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row counts differ (" + std::to_string(rows) + " vs " +
                           std::to_string(p.rows()) + ")");
    }
    cols += p.cols();
  }
  Tensor out = blank(rows, cols);
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    out.mat().middleCols(off, p.cols()) = p.value().mat();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  Tape* tape = parts[0].tape();
  return tape->push(std::move(out), ids, [ids, offsets](Tape& t, int self) {
    auto g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs_grad(ids[i])) continue;
      t.grad(ids[i]) += g.middleCols(offsets[i], t.value(ids[i]).cols());
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column counts differ (" + std::to_string(cols) + " vs " +
                           std::to_string(p.cols()) + ")");
    }
    rows += p.rows();
  }
  Tensor out = blank(rows, cols);
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    out.mat().middleRows(off, p.rows()) = p.value().mat();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  Tape* tape = parts[0].tape();
  return tape->push(std::move(out), ids, [ids, offsets](Tape& t, int self) {
    auto g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs_grad(ids[i])) continue;
      t.grad(ids[i]) += g.middleRows(offsets[i], t.value(ids[i]).rows());
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw DimensionError("slice_cols: range exceeds " + shape_string(a.value().shape));
  Tensor out = blank(a.rows(), count);
  out.mat() = a.value().mat().middleCols(begin, count);
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia, begin, count](Tape& t, int self) {
    t.grad(ia).middleCols(begin, count) += t.grad(self);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) throw DimensionError("slice_rows: range exceeds " + shape_string(a.value().shape));
  Tensor out = blank(count, a.cols());
  out.mat() = a.value().mat().middleRows(begin, count);
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia, begin, count](Tape& t, int self) {
    t.grad(ia).middleRows(begin, count) += t.grad(self);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  Tensor out = blank(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                              shape_string(av.shape));
    }
    out.mat().row(i) = av.mat().row(rows[i]);
  }
  const int ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape()->push(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& t, int self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(i);
  });
}

Var reverse_rows(Var a) {
  std::vector<std::size_t> idx(a.rows());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = idx.size() - 1 - i;
  return gather_rows(a, idx);
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data) total += v;
  Tensor out = Tensor::scalar(total);
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia](Tape& t, int self) {
    t.grad(ia).array() += t.grad(self)(0, 0);
  });
}

Var mean_rows(Var a) {
  const std::size_t n = a.rows();
  if (n == 0) throw EmptySupportError("mean_rows: no rows");
  Tensor out = blank(1, a.cols());
  out.mat() = column_sums(a.value().mat()) / static_cast<double>(n);
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia, n](Tape& t, int self) {
    auto g = t.grad(self);
    t.grad(ia).rowwise() += g.row(0) / static_cast<double>(n);
  });
}

Var pick(Var a, std::size_t r, std::size_t c) {
  if (r >= a.rows() || c >= a.cols()) throw std::out_of_range("pick: index out of range");
  Tensor out = Tensor::scalar(a.value()(r, c));
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia, r, c](Tape& t, int self) {
    t.grad(ia)(r, c) += t.grad(self)(0, 0);
  });
}

std::vector<double> softmax_masked(std::span<const double> logits, const Mask& mask) {
  if (mask.size() != logits.size()) throw DimensionError("softmax_masked: mask length differs from logits");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) mx = std::max(mx, logits[i]);
  }
  if (!std::isfinite(mx)) throw EmptySupportError("softmax_masked: no unmasked entries");
  std::vector<double> out(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) z += out[i] = std::exp(logits[i] - mx);
  }
  for (double& v : out) v /= z;
  return out;
}

Var softmax_masked_rows(Var logits, const Mask& mask) {
  const Tensor& lv = logits.value();
  if (mask.size() != lv.cols()) {
    throw DimensionError("softmax_masked_rows: mask of length " + std::to_string(mask.size()) +
                         " for logits " + shape_string(lv.shape));
  }
  Tensor out = blank(lv.rows(), lv.cols());
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    auto p = softmax_masked(std::span<const double>(lv.data.data() + r * lv.cols(), lv.cols()), mask);
    std::copy(p.begin(), p.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r * lv.cols()));
  }
  const int il = logits.id();
  return logits.tape()->push(std::move(out), {il}, [il](Tape& t, int self) {
    auto g = t.grad(self);
    const auto y = t.value(self).mat();
    const Eigen::VectorXd inner = row_sums(g.cwiseProduct(y));
    t.grad(il) += y.cwiseProduct(g - inner.replicate(1, g.cols()));
  });
}

Var masked_max_rows(Var a, const Mask& row_mask) {
  const Tensor& av = a.value();
  if (row_mask.size() != av.rows()) {
    throw DimensionError("masked_max_rows: mask of length " + std::to_string(row_mask.size()) + " for " +
                         shape_string(av.shape));
  }
  std::vector<std::size_t> arg(av.cols(), 0);
  Tensor out = blank(1, av.cols());
  bool any = false;
  for (std::size_t r = 0; r < av.rows(); ++r) {
    if (!row_mask[r]) continue;
    for (std::size_t c = 0; c < av.cols(); ++c) {
      if (!any || av(r, c) > out(0, c)) {
        out(0, c) = av(r, c);
        arg[c] = r;
      }
    }
    any = true;
  }
  if (!any) throw EmptySupportError("masked_max_rows: every row is masked");
  const int ia = a.id();
  return a.tape()->push(std::move(out), {ia}, [ia, arg = std::move(arg)](Tape& t, int self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t c = 0; c < arg.size(); ++c) ga(arg[c], c) += g(0, c);
  });
}

Var masked_reduce_max(std::span<const Var> vectors, const Mask& mask) {
  if (vectors.empty() || std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw EmptySupportError("masked_reduce_max: no unmasked vectors");
  }
  for (const Var& v : vectors) {
    if (v.rows() != 1) throw DimensionError("masked_reduce_max: expected row vectors, got " + shape_string(v.value().shape));
  }
  return masked_max_rows(concat_rows(vectors), mask);
}

Var lstm_pointwise(Var gates, Var cell) {
  const Tensor& gv = gates.value();
  const Tensor& cv = cell.value();
  const std::size_t h = cv.cols();
  if (gv.cols() != 4 * h || gv.rows() != cv.rows()) {
    throw DimensionError("lstm_pointwise: gates " + shape_string(gv.shape) + " incompatible with cell " +
                         shape_string(cv.shape));
  }
  const std::size_t m = cv.rows();
  Tensor out = blank(m, 2 * h);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t k = 0; k < h; ++k) {
      const double i = stable_sigmoid(gv(r, k));
      const double f = stable_sigmoid(gv(r, h + k));
      const double g = std::tanh(gv(r, 2 * h + k));
      const double o = stable_sigmoid(gv(r, 3 * h + k));
      const double c = f * cv(r, k) + i * g;
      out(r, k) = o * std::tanh(c);
      out(r, h + k) = c;
    }
  }
  const int ig = gates.id(), ic = cell.id();
  return gates.tape()->push(std::move(out), {ig, ic}, [ig, ic, h, m](Tape& t, int self) {
    auto up = t.grad(self);
    const Tensor& gv = t.value(ig);
    const Tensor& cv = t.value(ic);
    const Tensor& ov = t.value(self);
    const bool want_g = t.needs_grad(ig), want_c = t.needs_grad(ic);
    RowMatrix dg = RowMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(4 * h));
    RowMatrix dc = RowMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(h));
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t k = 0; k < h; ++k) {
        const double i = stable_sigmoid(gv(r, k));
        const double f = stable_sigmoid(gv(r, h + k));
        const double g = std::tanh(gv(r, 2 * h + k));
        const double o = stable_sigmoid(gv(r, 3 * h + k));
        const double tc = std::tanh(ov(r, h + k));
        const double dh = up(r, k);
        const double dcell = up(r, h + k) + dh * o * (1.0 - tc * tc);
        dg(r, k) = dcell * g * i * (1.0 - i);
        dg(r, h + k) = dcell * cv(r, k) * f * (1.0 - f);
        dg(r, 2 * h + k) = dcell * i * (1.0 - g * g);
        dg(r, 3 * h + k) = dh * tc * o * (1.0 - o);
        dc(r, k) = dcell * f;
      }
    }
    if (want_g) t.grad(ig) += dg;
    if (want_c) t.grad(ic) += dc;
  });
}

Var lstm_sequence(Var projected, Var w_hidden, Var h0, Var c0) {
  const Tensor& pv = projected.value();
  const Tensor& wv = w_hidden.value();
  const std::size_t h = wv.cols();
  const std::size_t steps = pv.rows();
  if (wv.rows() != 4 * h || pv.cols() != 4 * h || h0.cols() != h || c0.cols() != h || h0.rows() != 1 ||
      c0.rows() != 1) {
    throw DimensionError("lstm_sequence: projected " + shape_string(pv.shape) + ", w_hidden " +
                         shape_string(wv.shape) + " and states " + shape_string(h0.value().shape) + "/" +
                         shape_string(c0.value().shape) + " are incompatible");
  }
  if (steps == 0) throw std::invalid_argument("lstm_sequence: empty input sequence");
  const auto H = static_cast<Eigen::Index>(h);
  const auto T = static_cast<Eigen::Index>(steps);
  Tensor out = blank(steps, 2 * h);
  auto act = std::make_shared<RowMatrix>(T, 4 * H);  // i, f, g, o after nonlinearity
  RowMatrix gates(1, 4 * H);
  RowMatrix hprev = h0.value().mat();
  RowMatrix cprev = c0.value().mat();
  for (Eigen::Index t = 0; t < T; ++t) {
    gates.noalias() = pv.mat().row(t) + hprev * wv.mat().transpose();
    for (Eigen::Index k = 0; k < H; ++k) {
      const double i = stable_sigmoid(gates(0, k));
      const double f = stable_sigmoid(gates(0, H + k));
      const double g = std::tanh(gates(0, 2 * H + k));
      const double o = stable_sigmoid(gates(0, 3 * H + k));
      const double c = f * cprev(0, k) + i * g;
      (*act)(t, k) = i;
      (*act)(t, H + k) = f;
      (*act)(t, 2 * H + k) = g;
      (*act)(t, 3 * H + k) = o;
      hprev(0, k) = o * std::tanh(c);
      cprev(0, k) = c;
    }
    out.mat().block(t, 0, 1, H) = hprev;
    out.mat().block(t, H, 1, H) = cprev;
  }
  const int ip = projected.id(), iw = w_hidden.id(), ih = h0.id(), ic = c0.id();
  return projected.tape()->push(std::move(out), {ip, iw, ih, ic}, [ip, iw, ih, ic, H, T, act](Tape& t, int self) {
    auto up = t.grad(self);
    const auto ov = t.value(self).mat();
    const auto wv = t.value(iw).mat();
    const auto h0v = t.value(ih).mat();
    const auto c0v = t.value(ic).mat();
    RowMatrix dG(T, 4 * H);
    RowMatrix dh_next = RowMatrix::Zero(1, H);
    RowMatrix dc_next = RowMatrix::Zero(1, H);
    for (Eigen::Index s = T - 1; s >= 0; --s) {
      for (Eigen::Index k = 0; k < H; ++k) {
        const double i = (*act)(s, k), f = (*act)(s, H + k), g = (*act)(s, 2 * H + k), o = (*act)(s, 3 * H + k);
        const double c_prev = s > 0 ? ov(s - 1, H + k) : c0v(0, k);
        const double tc = std::tanh(ov(s, H + k));
        const double dh = up(s, k) + dh_next(0, k);
        const double dc = up(s, H + k) + dc_next(0, k) + dh * o * (1.0 - tc * tc);
        dG(s, k) = dc * g * i * (1.0 - i);
        dG(s, H + k) = dc * c_prev * f * (1.0 - f);
        dG(s, 2 * H + k) = dc * i * (1.0 - g * g);
        dG(s, 3 * H + k) = dh * tc * o * (1.0 - o);
        dc_next(0, k) = dc * f;
      }
      dh_next.noalias() = dG.row(s) * wv;
    }
    if (t.needs_grad(ip)) t.grad(ip) += dG;
    if (t.needs_grad(iw)) {
      auto gw = t.grad(iw);
      gw.noalias() += dG.bottomRows(T - 1).transpose() * ov.topLeftCorner(T - 1, H);
      gw.noalias() += dG.topRows(1).transpose() * h0v;
    }
    if (t.needs_grad(ih)) t.grad(ih) += dh_next;
    if (t.needs_grad(ic)) t.grad(ic) += dc_next;
  });
}

Var dropout(Var x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor mask = blank(x.rows(), x.cols());
  for (double& m : mask.data) m = keep(rng) ? keep_scale : 0.0;
  Tensor out = blank(x.rows(), x.cols());
  out.mat() = x.value().mat().cwiseProduct(mask.mat());
  const int ix = x.id();
  return x.tape()->push(std::move(out), {ix}, [ix, mask = std::move(mask)](Tape& t, int self) {
    t.grad(ix) += t.grad(self).cwiseProduct(mask.mat());
  });
}

Var binary_cross_entropy(Var p, double y) {
  constexpr double kEps = 1e-12;
  const double raw = p.item();
  const double pc = std::clamp(raw, kEps, 1.0 - kEps);
  Tensor out = Tensor::scalar(-y * std::log(pc) - (1.0 - y) * std::log(1.0 - pc));
  const bool clamped = pc != raw;
  const int ip = p.id();
  return p.tape()->push(std::move(out), {ip}, [ip, y, pc, clamped](Tape& t, int self) {
    if (clamped) return;
    t.grad(ip)(0, 0) += t.grad(self)(0, 0) * (-y / pc + (1.0 - y) / (1.0 - pc));
  });
}

}  // namespace bapt
