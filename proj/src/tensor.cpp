#include "mesin/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "mesin/rng.hpp"

namespace mesin {

int numel(const Shape& s) {
  int n = 1;
  for (int e : s) {
    if (e <= 0) throw ContractError("shape extent must be positive, got " + shape_str(s));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

double Tensor::scalar() const {
  if (size() != 1) {
    throw ContractError("scalar() requires a single-element tensor, got " + shape_str(shape_));
  }
  return (*buf_)[0];
}

namespace {

void check_finite(const std::string& op, const std::vector<double>& data) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(op + " produced a non-finite value");
    }
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

void same_tape(const std::string& op, const Tensor& a, const Tensor& b) {
  require(a.tape() == b.tape(), op + ": operands belong to different tapes");
}

}  // namespace

Tensor Tape::make(const std::string& op, const Shape& shape,
                  std::vector<double> data, BackwardFn backward) {
  if (static_cast<int>(data.size()) != numel(shape)) {
    throw ContractError(op + ": data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
  }
  check_finite(op, data);
  Tensor t;
  t.buf_ = std::make_shared<std::vector<double>>(std::move(data));
  t.shape_ = shape;
  t.tape_ = this;
  nodes_.push_back(Node{shape, std::move(backward)});
  t.node_ = static_cast<int>(nodes_.size()) - 1;
  return t;
}

Tensor Tape::leaf(const Shape& shape, std::span<const double> values) {
  return make("leaf", shape, std::vector<double>(values.begin(), values.end()), nullptr);
}

Tensor Tape::leaf_shared(const Shape& shape, std::shared_ptr<std::vector<double>> buf) {
  if (!buf || static_cast<int>(buf->size()) != numel(shape)) {
    throw ContractError("leaf_shared: buffer does not match shape " + shape_str(shape));
  }
  check_finite("leaf", *buf);
  Tensor t;
  t.buf_ = std::move(buf);
  t.shape_ = shape;
  t.tape_ = this;
  nodes_.push_back(Node{shape, nullptr});
  t.node_ = static_cast<int>(nodes_.size()) - 1;
  return t;
}

Tensor Tape::constant(const Shape& shape, std::span<const double> values) {
  if (static_cast<int>(values.size()) != numel(shape)) {
    throw ContractError("constant: data length does not match shape " + shape_str(shape));
  }
  std::vector<double> data(values.begin(), values.end());
  check_finite("constant", data);
  Tensor t;
  t.buf_ = std::make_shared<std::vector<double>>(std::move(data));
  t.shape_ = shape;
  t.tape_ = this;
  t.node_ = -1;
  return t;
}

Tensor Tape::constant_fill(const Shape& shape, double value) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)), value);
  return constant(shape, data);
}

Tensor Tape::custom(const std::string& name, const Shape& shape,
                    std::vector<double> data, const std::vector<Tensor>& inputs,
                    BackwardFn backward) {
  for (const Tensor& in : inputs) {
    require(in.tape() == this, name + ": input belongs to a different tape");
  }
  return make(name, shape, std::move(data), std::move(backward));
}

// --- elementwise -------------------------------------------------------------

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  same_tape("add", a, b);
  require(a.shape() == b.shape(), "add: shapes differ " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data());
  for (int i = 0; i < b.size(); ++i) out[static_cast<std::size_t>(i)] += b.at(i);
  const int na = a.node(), nb = b.node();
  return make("add", a.shape(), std::move(out),
              [na, nb](Tape& t, const std::vector<double>& up) {
                t.add_grad(na, up);
                t.add_grad(nb, up);
              });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  same_tape("sub", a, b);
  require(a.shape() == b.shape(), "sub: shapes differ " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data());
  for (int i = 0; i < b.size(); ++i) out[static_cast<std::size_t>(i)] -= b.at(i);
  const int na = a.node(), nb = b.node();
  return make("sub", a.shape(), std::move(out),
              [na, nb](Tape& t, const std::vector<double>& up) {
                t.add_grad(na, up);
                std::vector<double> neg(up);
                for (double& v : neg) v = -v;
                t.add_grad(nb, neg);
              });
}

Tensor Tape::hadamard(const Tensor& a, const Tensor& b) {
  same_tape("hadamard", a, b);
  require(a.shape() == b.shape(), "hadamard: shapes differ " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(a.size()));
  for (int i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] = a.at(i) * b.at(i);
  const int na = a.node(), nb = b.node();
  auto abuf = a.buf_, bbuf = b.buf_;
  return make("hadamard", a.shape(), std::move(out),
              [na, nb, abuf, bbuf](Tape& t, const std::vector<double>& up) {
                std::vector<double> ga(up.size()), gb(up.size());
                for (std::size_t i = 0; i < up.size(); ++i) {
                  ga[i] = up[i] * (*bbuf)[i];
                  gb[i] = up[i] * (*abuf)[i];
                }
                t.add_grad(na, ga);
                t.add_grad(nb, gb);
              });
}

// --- matmul -------------------------------------------------------------------

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  same_tape("matmul", a, b);
  require(a.ndim() == 2, "matmul: lhs must be 2-d, got " + shape_str(a.shape()));
  const int m = a.shape()[0], k = a.shape()[1];
  const bool vec = b.ndim() == 1;
  require(vec || b.ndim() == 2, "matmul: rhs must be 1-d or 2-d, got " + shape_str(b.shape()));
  const int kb = b.shape()[0];
  const int n = vec ? 1 : b.shape()[1];
  require(k == kb, "matmul: inner extents differ, lhs " + shape_str(a.shape()) +
                       " rhs " + shape_str(b.shape()));

  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  const auto& A = a.data();
  const auto& B = b.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < k; ++j) {
      const double aij = A[static_cast<std::size_t>(i * k + j)];
      if (aij == 0.0) continue;
      for (int c = 0; c < n; ++c) {
        out[static_cast<std::size_t>(i * n + c)] += aij * B[static_cast<std::size_t>(j * n + c)];
      }
    }
  }
  Shape oshape = vec ? Shape{m} : Shape{m, n};
  const int na = a.node(), nb = b.node();
  auto abuf = a.buf_, bbuf = b.buf_;
  return make("matmul", oshape, std::move(out),
              [na, nb, abuf, bbuf, m, k, n](Tape& t, const std::vector<double>& up) {
                // dA = up . B^T ; dB = A^T . up
                std::vector<double> ga(static_cast<std::size_t>(m * k), 0.0);
                std::vector<double> gb(static_cast<std::size_t>(k * n), 0.0);
                for (int i = 0; i < m; ++i) {
                  for (int c = 0; c < n; ++c) {
                    const double u = up[static_cast<std::size_t>(i * n + c)];
                    if (u == 0.0) continue;
                    for (int j = 0; j < k; ++j) {
                      ga[static_cast<std::size_t>(i * k + j)] +=
                          u * (*bbuf)[static_cast<std::size_t>(j * n + c)];
                      gb[static_cast<std::size_t>(j * n + c)] +=
                          u * (*abuf)[static_cast<std::size_t>(i * k + j)];
                    }
                  }
                }
                t.add_grad(na, ga);
                t.add_grad(nb, gb);
              });
}

// --- structural ---------------------------------------------------------------

Tensor Tape::concat(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat: needs at least one part");
  std::vector<double> out;
  std::vector<int> ids, lens;
  for (const Tensor& p : parts) {
    require(p.tape() == this, "concat: part belongs to a different tape");
    require(p.ndim() == 1, "concat: parts must be vectors, got " + shape_str(p.shape()));
    out.insert(out.end(), p.data().begin(), p.data().end());
    ids.push_back(p.node());
    lens.push_back(p.size());
  }
  const int total = static_cast<int>(out.size());
  return make("concat", {total}, std::move(out),
              [ids, lens](Tape& t, const std::vector<double>& up) {
                std::size_t off = 0;
                for (std::size_t i = 0; i < ids.size(); ++i) {
                  t.add_grad(ids[i], std::span<const double>(up.data() + off,
                                                             static_cast<std::size_t>(lens[i])));
                  off += static_cast<std::size_t>(lens[i]);
                }
              });
}

Tensor Tape::slice(const Tensor& x, int offset, int len) {
  require(x.tape() == this, "slice: operand belongs to a different tape");
  require(offset >= 0 && len > 0 && offset + len <= x.size(),
          "slice: range [" + std::to_string(offset) + ", " +
              std::to_string(offset + len) + ") out of bounds for " +
              shape_str(x.shape()));
  std::vector<double> out(x.data().begin() + offset, x.data().begin() + offset + len);
  const int nx = x.node(), total = x.size();
  return make("slice", {len}, std::move(out),
              [nx, offset, total](Tape& t, const std::vector<double>& up) {
                std::vector<double> g(static_cast<std::size_t>(total), 0.0);
                std::copy(up.begin(), up.end(), g.begin() + offset);
                t.add_grad(nx, g);
              });
}

Tensor Tape::sum(const Tensor& x) {
  require(x.tape() == this, "sum: operand belongs to a different tape");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const int nx = x.node(), total = x.size();
  return make("sum", {1}, {s}, [nx, total](Tape& t, const std::vector<double>& up) {
    std::vector<double> g(static_cast<std::size_t>(total), up[0]);
    t.add_grad(nx, g);
  });
}

Tensor Tape::scale(const Tensor& x, double c) {
  require(x.tape() == this, "scale: operand belongs to a different tape");
  std::vector<double> out(x.data());
  for (double& v : out) v *= c;
  const int nx = x.node();
  return make("scale", x.shape(), std::move(out),
              [nx, c](Tape& t, const std::vector<double>& up) {
                std::vector<double> g(up);
                for (double& v : g) v *= c;
                t.add_grad(nx, g);
              });
}

Tensor Tape::add_scalar(const Tensor& v, const Tensor& s) {
  same_tape("add_scalar", v, s);
  require(s.size() == 1, "add_scalar: scalar operand has shape " + shape_str(s.shape()));
  std::vector<double> out(v.data());
  const double sv = s.at(0);
  for (double& x : out) x += sv;
  const int nv = v.node(), ns = s.node();
  return make("add_scalar", v.shape(), std::move(out),
              [nv, ns](Tape& t, const std::vector<double>& up) {
                t.add_grad(nv, up);
                double total = 0.0;
                for (double u : up) total += u;
                t.add_grad(ns, std::vector<double>{total});
              });
}

Tensor Tape::mul_scalar(const Tensor& v, const Tensor& s) {
  same_tape("mul_scalar", v, s);
  require(s.size() == 1, "mul_scalar: scalar operand has shape " + shape_str(s.shape()));
  std::vector<double> out(v.data());
  const double sv = s.at(0);
  for (double& x : out) x *= sv;
  const int nv = v.node(), ns = s.node();
  auto vbuf = v.buf_;
  return make("mul_scalar", v.shape(), std::move(out),
              [nv, ns, sv, vbuf](Tape& t, const std::vector<double>& up) {
                std::vector<double> gv(up);
                for (double& x : gv) x *= sv;
                t.add_grad(nv, gv);
                double gs = 0.0;
                for (std::size_t i = 0; i < up.size(); ++i) gs += up[i] * (*vbuf)[i];
                t.add_grad(ns, std::vector<double>{gs});
              });
}

Tensor Tape::add_rowvec(const Tensor& m, const Tensor& v) {
  same_tape("add_rowvec", m, v);
  require(m.ndim() == 2, "add_rowvec: lhs must be 2-d, got " + shape_str(m.shape()));
  require(v.ndim() == 1 && v.size() == m.shape()[1],
          "add_rowvec: row vector " + shape_str(v.shape()) +
              " does not match matrix " + shape_str(m.shape()));
  const int rows = m.shape()[0], cols = m.shape()[1];
  std::vector<double> out(m.data());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r * cols + c)] += v.at(c);
  const int nm = m.node(), nv = v.node();
  return make("add_rowvec", m.shape(), std::move(out),
              [nm, nv, rows, cols](Tape& t, const std::vector<double>& up) {
                t.add_grad(nm, up);
                std::vector<double> gv(static_cast<std::size_t>(cols), 0.0);
                for (int r = 0; r < rows; ++r)
                  for (int c = 0; c < cols; ++c)
                    gv[static_cast<std::size_t>(c)] += up[static_cast<std::size_t>(r * cols + c)];
                t.add_grad(nv, gv);
              });
}

// --- nonlinearities -------------------------------------------------------------

Tensor Tape::tanh(const Tensor& x) {
  require(x.tape() == this, "tanh: operand belongs to a different tape");
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  for (int i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = std::tanh(x.at(i));
  const int nx = x.node();
  auto ybuf = std::make_shared<std::vector<double>>(out);
  return make("tanh", x.shape(), std::move(out),
              [nx, ybuf](Tape& t, const std::vector<double>& up) {
                std::vector<double> g(up.size());
                for (std::size_t i = 0; i < up.size(); ++i)
                  g[i] = up[i] * (1.0 - (*ybuf)[i] * (*ybuf)[i]);
                t.add_grad(nx, g);
              });
}

Tensor Tape::sigmoid(const Tensor& x) {
  require(x.tape() == this, "sigmoid: operand belongs to a different tape");
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  for (int i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-x.at(i)));
  const int nx = x.node();
  auto ybuf = std::make_shared<std::vector<double>>(out);
  return make("sigmoid", x.shape(), std::move(out),
              [nx, ybuf](Tape& t, const std::vector<double>& up) {
                std::vector<double> g(up.size());
                for (std::size_t i = 0; i < up.size(); ++i)
                  g[i] = up[i] * (*ybuf)[i] * (1.0 - (*ybuf)[i]);
                t.add_grad(nx, g);
              });
}

Tensor Tape::relu(const Tensor& x) {
  require(x.tape() == this, "relu: operand belongs to a different tape");
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  for (int i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = x.at(i) > 0.0 ? x.at(i) : 0.0;
  const int nx = x.node();
  auto xbuf = x.buf_;
  return make("relu", x.shape(), std::move(out),
              [nx, xbuf](Tape& t, const std::vector<double>& up) {
                std::vector<double> g(up.size());
                for (std::size_t i = 0; i < up.size(); ++i)
                  g[i] = (*xbuf)[i] > 0.0 ? up[i] : 0.0;
                t.add_grad(nx, g);
              });
}

Tensor Tape::log(const Tensor& x) {
  require(x.tape() == this, "log: operand belongs to a different tape");
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  for (int i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = std::log(x.at(i));
  const int nx = x.node();
  auto xbuf = x.buf_;
  return make("log", x.shape(), std::move(out),
              [nx, xbuf](Tape& t, const std::vector<double>& up) {
                std::vector<double> g(up.size());
                for (std::size_t i = 0; i < up.size(); ++i) g[i] = up[i] / (*xbuf)[i];
                t.add_grad(nx, g);
              });
}

Tensor Tape::clamp(const Tensor& x, double lo, double hi) {
  require(x.tape() == this, "clamp: operand belongs to a different tape");
  require(lo < hi, "clamp: empty interval");
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  for (int i = 0; i < x.size(); ++i) {
    const double v = x.at(i);
    out[static_cast<std::size_t>(i)] = v < lo ? lo : (v > hi ? hi : v);
  }
  const int nx = x.node();
  auto xbuf = x.buf_;
  return make("clamp", x.shape(), std::move(out),
              [nx, xbuf, lo, hi](Tape& t, const std::vector<double>& up) {
                std::vector<double> g(up.size());
                for (std::size_t i = 0; i < up.size(); ++i) {
                  const double v = (*xbuf)[i];
                  g[i] = (v > lo && v < hi) ? up[i] : 0.0;
                }
                t.add_grad(nx, g);
              });
}

Tensor Tape::dropout(const Tensor& x, double rate, Rng& rng) {
  require(x.tape() == this, "dropout: operand belongs to a different tape");
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (rate == 0.0) return x;
  const double inv_keep = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  for (int i = 0; i < x.size(); ++i) {
    const double m = rng.bernoulli(rate) ? 0.0 : inv_keep;
    (*mask)[static_cast<std::size_t>(i)] = m;
    out[static_cast<std::size_t>(i)] = x.at(i) * m;
  }
  const int nx = x.node();
  return make("dropout", x.shape(), std::move(out),
              [nx, mask](Tape& t, const std::vector<double>& up) {
                std::vector<double> g(up.size());
                for (std::size_t i = 0; i < up.size(); ++i) g[i] = up[i] * (*mask)[i];
                t.add_grad(nx, g);
              });
}

Tensor Tape::dot(const Tensor& a, const Tensor& b) {
  same_tape("dot", a, b);
  require(a.ndim() == 1 && b.ndim() == 1 && a.size() == b.size(),
          "dot: vectors differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return sum(hadamard(a, b));
}

// --- backward --------------------------------------------------------------------

std::vector<double>& Tape::grad_buf(int node) {
  auto& g = grads_[static_cast<std::size_t>(node)];
  if (g.empty()) g.assign(static_cast<std::size_t>(numel(nodes_[static_cast<std::size_t>(node)].shape)), 0.0);
  return g;
}

void Tape::add_grad(int node, std::span<const double> g) {
  if (node < 0) return;
  auto& buf = grad_buf(node);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(const Tensor& loss) {
  require(loss.tape() == this, "backward: loss belongs to a different tape");
  require(loss.tracked(), "backward: loss is not on the tape");
  require(loss.size() == 1, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  grads_.assign(nodes_.size(), {});
  grad_buf(loss.node())[0] = 1.0;
  for (int n = static_cast<int>(nodes_.size()) - 1; n >= 0; --n) {
    auto& g = grads_[static_cast<std::size_t>(n)];
    if (g.empty()) continue;
    if (nodes_[static_cast<std::size_t>(n)].backward) {
      nodes_[static_cast<std::size_t>(n)].backward(*this, g);
    }
  }
  ran_backward_ = true;
}

std::vector<double> Tape::grad(const Tensor& t) const {
  require(ran_backward_, "grad: backward() has not been run on this tape");
  require(t.tape() == this && t.tracked(), "grad: tensor is not tracked by this tape");
  const auto& g = grads_[static_cast<std::size_t>(t.node())];
  if (g.empty()) return std::vector<double>(static_cast<std::size_t>(t.size()), 0.0);
  return g;
}

// --- grad_check --------------------------------------------------------------------

std::string GradCheckReport::to_string() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "%s max_rel_err=%.3e at input %d coord %d (analytic=%.6e numeric=%.6e)",
                pass ? "PASS" : "FAIL", max_rel_err, worst_input, worst_coord,
                analytic, numeric);
  return buf;
}

GradCheckReport grad_check(
    const TapeFn& f,
    const std::vector<std::pair<Shape, std::vector<double>>>& points,
    double step, double tol) {
  // analytic gradients
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(points.size());
    for (const auto& [shape, data] : points) leaves.push_back(tape.leaf(shape, data));
    Tensor loss = f(tape, leaves);
    if (loss.size() != 1) throw ContractError("grad_check: f must return a scalar");
    tape.backward(loss);
    for (const Tensor& l : leaves) analytic.push_back(tape.grad(l));
  }

  auto eval = [&](const std::vector<std::vector<double>>& datas) {
    Tape tape;
    std::vector<Tensor> leaves;
    for (std::size_t i = 0; i < points.size(); ++i)
      leaves.push_back(tape.leaf(points[i].first, datas[i]));
    const double v = f(tape, leaves).scalar();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite evaluation");
    return v;
  };

  std::vector<std::vector<double>> datas;
  for (const auto& p : points) datas.push_back(p.second);

  GradCheckReport rep;
  rep.pass = true;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    for (std::size_t ci = 0; ci < datas[pi].size(); ++ci) {
      const double orig = datas[pi][ci];
      datas[pi][ci] = orig + step;
      const double fp = eval(datas);
      datas[pi][ci] = orig - step;
      const double fm = eval(datas);
      datas[pi][ci] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[pi][ci];
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1.0});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = static_cast<int>(pi);
        rep.worst_coord = static_cast<int>(ci);
        rep.analytic = a;
        rep.numeric = numeric;
      }
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

GradCheckReport grad_check(const TapeFn& f, const Shape& shape,
                           const std::vector<double>& point, double step,
                           double tol) {
  return grad_check(f, {{shape, point}}, step, tol);
}

}  // namespace mesin
