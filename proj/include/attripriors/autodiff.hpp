#pragma once

// Tape-based reverse-mode differentiation.
//
// Every node is a real scalar. Linear-combination nodes hold a list of terms
// `coef * a * b` (b optional) plus a constant bias; they implement add, mul,
// neg, sum and the multiply-accumulate cell of a dense layer. The remaining
// ops are unary (or binary for div/max) elementwise functions.
//
// `Tape::gradient` appends the adjoint computation to the same tape, so the
// returned gradient nodes can be differentiated again. This is what makes a
// penalty on input gradients trainable by a second backward pass over the
// model parameters.
//
// Kink conventions: relu'(0) = 0, abs'(0) = 0, sqrt'(0) = 0. The relu mask and
// the abs sign enter the adjoint as constant coefficients, so their second
// derivatives are zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attripriors/errors.hpp"

namespace attripriors::ad {

using NodeId = std::uint32_t;
inline constexpr NodeId kNone = std::numeric_limits<NodeId>::max();

enum class Op : std::uint8_t {
  variable,
  constant,
  add,
  mul,
  neg,
  div,
  exp,
  log,
  pow,
  max,
  relu,
  sigmoid,
  tanh,
  abs,
  sqrt,
  sum,
  matmul_cell,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::variable: return "variable";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::neg: return "neg";
    case Op::div: return "div";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::pow: return "pow";
    case Op::max: return "max";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::abs: return "abs";
    case Op::sqrt: return "sqrt";
    case Op::sum: return "sum";
    case Op::matmul_cell: return "matmul-cell";
  }
  return "unknown";
}

inline bool is_linear(Op op) {
  return op == Op::add || op == Op::mul || op == Op::neg || op == Op::sum ||
         op == Op::matmul_cell;
}

// coef * a * b, or coef * a when b == kNone.
struct Term {
  double coef = 1.0;
  NodeId a = kNone;
  NodeId b = kNone;
};

class Tape {
 public:
  struct Checkpoint {
    std::size_t nodes = 0;
    std::size_t terms = 0;
  };

  Tape() = default;

  void reserve(std::size_t nodes, std::size_t terms) {
    nodes_.reserve(nodes);
    terms_.reserve(terms);
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t term_count() const { return terms_.size(); }

  Checkpoint checkpoint() const { return {nodes_.size(), terms_.size()}; }

  void truncate(Checkpoint cp) {
    if (cp.nodes > nodes_.size() || cp.terms > terms_.size()) {
      throw InvalidNode("checkpoint is beyond the end of the tape");
    }
    nodes_.resize(cp.nodes);
    terms_.resize(cp.terms);
  }

  void clear() { truncate({}); }

  double value(NodeId id) const { return node(id).value; }
  Op op(NodeId id) const { return node(id).op; }
  bool is_constant(NodeId id) const { return node(id).constant; }

  NodeId variable(double v) { return push(Op::variable, v, 0.0, 0, 0, false); }

  NodeId constant(double v) { return push(Op::constant, v, 0.0, 0, 0, true); }

  // bias + sum_t coef_t * a_t * (b_t or 1)
  NodeId linear(Op tag, double bias, std::span<const Term> terms) {
    double v = bias;
    bool constant = true;
    const auto first = static_cast<std::uint32_t>(terms_.size());
    for (const Term& t : terms) {
      check(t.a);
      const Node& na = nodes_[t.a];
      if (t.b == kNone) {
        v += t.coef * na.value;
        constant = constant && na.constant;
      } else {
        check(t.b);
        const Node& nb = nodes_[t.b];
        v += t.coef * na.value * nb.value;
        constant = constant && na.constant && nb.constant;
      }
      terms_.push_back(t);
    }
    return push(tag, v, bias, first, static_cast<std::uint32_t>(terms.size()),
                constant);
  }

  NodeId unary(Op op, NodeId x, double aux = 0.0) {
    check(x);
    const double xv = nodes_[x].value;
    double v = 0.0;
    switch (op) {
      case Op::exp: v = std::exp(xv); break;
      case Op::log: v = std::log(xv); break;
      case Op::pow: v = aux == 0.0 ? 1.0 : std::pow(xv, aux); break;
      case Op::relu: v = xv > 0.0 ? xv : 0.0; break;
      case Op::sigmoid:
        v = xv >= 0.0 ? 1.0 / (1.0 + std::exp(-xv))
                      : std::exp(xv) / (1.0 + std::exp(xv));
        break;
      case Op::tanh: v = std::tanh(xv); break;
      case Op::abs: v = std::abs(xv); break;
      case Op::sqrt: v = std::sqrt(xv); break;
      default:
        throw InvalidNode(std::string("op is not unary: ") + op_name(op));
    }
    const auto first = static_cast<std::uint32_t>(terms_.size());
    terms_.push_back({1.0, x, kNone});
    return push(op, v, aux, first, 1, nodes_[x].constant);
  }

  NodeId binary(Op op, NodeId a, NodeId b) {
    check(a);
    check(b);
    const double av = nodes_[a].value;
    const double bv = nodes_[b].value;
    double v = 0.0;
    switch (op) {
      case Op::div: v = av / bv; break;
      case Op::max: v = av >= bv ? av : bv; break;
      default:
        throw InvalidNode(std::string("op is not binary: ") + op_name(op));
    }
    const auto first = static_cast<std::uint32_t>(terms_.size());
    terms_.push_back({1.0, a, kNone});
    terms_.push_back({1.0, b, kNone});
    return push(op, v, 0.0, first, 2,
                nodes_[a].constant && nodes_[b].constant);
  }

  // d output / d wrt[i], emitted as new nodes on this tape. Nodes that the
  // output does not depend on get a constant zero.
  std::vector<NodeId> gradient(NodeId output, std::span<const NodeId> wrt);

  std::vector<double> values(std::span<const NodeId> ids) const {
    std::vector<double> out;
    out.reserve(ids.size());
    for (NodeId id : ids) out.push_back(value(id));
    return out;
  }

 private:
  struct Node {
    double value = 0.0;
    double aux = 0.0;  // bias for linear nodes, exponent for pow
    std::uint32_t first = 0;
    std::uint32_t count = 0;
    Op op = Op::constant;
    bool constant = true;
  };

  const Node& node(NodeId id) const {
    check(id);
    return nodes_[id];
  }

  void check(NodeId id) const {
    if (id >= nodes_.size()) {
      throw InvalidNode("node " + std::to_string(id) + " is not on the tape (size " +
                        std::to_string(nodes_.size()) + ")");
    }
  }

  NodeId push(Op op, double v, double aux, std::uint32_t first,
              std::uint32_t count, bool constant) {
    if (!std::isfinite(v)) {
      terms_.resize(first);
      throw NonFiniteValue(std::string("op '") + op_name(op) +
                           "' produced a non-finite value");
    }
    if (nodes_.size() >= static_cast<std::size_t>(kNone)) {
      throw InvalidNode("tape is full");
    }
    nodes_.push_back({v, aux, first, count, op, constant});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Term> terms_;
};

namespace detail {

// Singly linked adjoint contributions, bucketed per receiving node.
struct Contribution {
  Term term;
  std::int64_t next;
};

}  // namespace detail

inline std::vector<NodeId> Tape::gradient(NodeId output,
                                          std::span<const NodeId> wrt) {
  check(output);
  for (NodeId w : wrt) check(w);

  std::vector<NodeId> result(wrt.size(), kNone);
  if (wrt.empty()) return result;

  const NodeId lo = *std::min_element(wrt.begin(), wrt.end());
  NodeId zero = kNone;
  auto zero_node = [&] {
    if (zero == kNone) zero = constant(0.0);
    return zero;
  };
  if (lo > output) {
    for (auto& r : result) r = zero_node();
    return result;
  }

  const std::size_t span = static_cast<std::size_t>(output - lo) + 1;
  // relevant[v - lo]: node v depends on at least one wrt node.
  std::vector<std::uint8_t> relevant(span, 0);
  for (NodeId w : wrt) {
    if (w <= output) relevant[w - lo] = 1;
  }
  auto is_relevant = [&](NodeId id) {
    return id != kNone && id >= lo && id <= output && relevant[id - lo] != 0;
  };
  for (NodeId v = lo; v <= output; ++v) {
    if (relevant[v - lo]) continue;
    const Node& n = nodes_[v];
    for (std::uint32_t t = n.first; t < n.first + n.count; ++t) {
      const Term& term = terms_[t];
      if (is_relevant(term.a) || is_relevant(term.b)) {
        relevant[v - lo] = 1;
        break;
      }
    }
  }
  if (!relevant[output - lo]) {
    for (auto& r : result) r = zero_node();
    return result;
  }

  std::vector<NodeId> adjoint(span, kNone);
  std::vector<std::int64_t> head(span, -1);
  std::vector<detail::Contribution> contributions;
  contributions.reserve(span * 2);

  // Adds coef * g * d to the adjoint of `target`, folding constant factors
  // into the coefficient.
  auto contribute = [&](NodeId target, double coef, NodeId g, NodeId d) {
    if (!is_relevant(target) || coef == 0.0) return;
    Term t{coef, g, d};
    if (t.b != kNone && nodes_[t.b].constant) {
      t.coef *= nodes_[t.b].value;
      t.b = kNone;
    }
    if (t.b != kNone && nodes_[t.a].constant) {
      t.coef *= nodes_[t.a].value;
      t.a = t.b;
      t.b = kNone;
    }
    if (t.coef == 0.0) return;
    contributions.push_back({t, head[target - lo]});
    head[target - lo] = static_cast<std::int64_t>(contributions.size() - 1);
  };

  std::vector<Term> gathered;
  adjoint[output - lo] = constant(1.0);

  for (NodeId v = output + 1; v-- > lo;) {
    const std::size_t slot = v - lo;
    if (!relevant[slot]) continue;

    if (v != output) {
      if (head[slot] < 0) continue;
      gathered.clear();
      double bias = 0.0;
      for (std::int64_t c = head[slot]; c >= 0; c = contributions[c].next) {
        const Term& t = contributions[c].term;
        if (t.b == kNone && nodes_[t.a].constant) {
          bias += t.coef * nodes_[t.a].value;
        } else {
          gathered.push_back(t);
        }
      }
      if (gathered.size() == 1 && bias == 0.0 && gathered[0].coef == 1.0 &&
          gathered[0].b == kNone) {
        adjoint[slot] = gathered[0].a;
      } else {
        // Contributions were pushed in reverse; restore forward order so the
        // floating-point sum is independent of bucket layout.
        std::reverse(gathered.begin(), gathered.end());
        adjoint[slot] = linear(Op::sum, bias, gathered);
      }
    }

    const NodeId g = adjoint[slot];
    // Copy: emitting nodes below may reallocate nodes_ and terms_.
    const Node n = nodes_[v];
    if (n.count == 0) continue;

    if (is_linear(n.op)) {
      for (std::uint32_t i = 0; i < n.count; ++i) {
        const Term t = terms_[n.first + i];
        if (t.b == kNone) {
          contribute(t.a, t.coef, g, kNone);
        } else {
          contribute(t.a, t.coef, g, t.b);
          contribute(t.b, t.coef, g, t.a);
        }
      }
      continue;
    }

    const NodeId x = terms_[n.first].a;
    const double xv = nodes_[x].value;
    switch (n.op) {
      case Op::relu:
        if (xv > 0.0) contribute(x, 1.0, g, kNone);
        break;
      case Op::abs:
        if (xv > 0.0) contribute(x, 1.0, g, kNone);
        else if (xv < 0.0) contribute(x, -1.0, g, kNone);
        break;
      case Op::exp:
        if (is_relevant(x)) contribute(x, 1.0, g, v);
        break;
      case Op::log:
        if (is_relevant(x)) contribute(x, 1.0, g, unary(Op::pow, x, -1.0));
        break;
      case Op::pow: {
        const double k = n.aux;
        if (k == 0.0 || !is_relevant(x)) break;
        if (k == 1.0) {
          contribute(x, 1.0, g, kNone);
        } else if (k == 2.0) {
          contribute(x, 2.0, g, x);
        } else {
          contribute(x, k, g, unary(Op::pow, x, k - 1.0));
        }
        break;
      }
      case Op::sqrt:
        if (n.value > 0.0 && is_relevant(x)) {
          contribute(x, 0.5, g, unary(Op::pow, v, -1.0));
        }
        break;
      case Op::sigmoid:
        if (is_relevant(x)) {
          const Term d[] = {{1.0, v, kNone}, {-1.0, v, v}};
          contribute(x, 1.0, g, linear(Op::add, 0.0, d));
        }
        break;
      case Op::tanh:
        if (is_relevant(x)) {
          const Term d[] = {{-1.0, v, v}};
          contribute(x, 1.0, g, linear(Op::add, 1.0, d));
        }
        break;
      case Op::div: {
        const NodeId b = terms_[n.first + 1].a;
        if (!is_relevant(x) && !is_relevant(b)) break;
        const NodeId inv = unary(Op::pow, b, -1.0);
        contribute(x, 1.0, g, inv);
        if (is_relevant(b)) {
          const Term q[] = {{1.0, v, inv}};
          contribute(b, -1.0, g, linear(Op::mul, 0.0, q));
        }
        break;
      }
      case Op::max: {
        const NodeId b = terms_[n.first + 1].a;
        if (xv >= nodes_[b].value) contribute(x, 1.0, g, kNone);
        else contribute(b, 1.0, g, kNone);
        break;
      }
      default:
        break;
    }
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    const NodeId w = wrt[i];
    const NodeId a = w <= output ? adjoint[w - lo] : kNone;
    result[i] = a == kNone ? zero_node() : a;
  }
  return result;
}

// Value handle for writing expressions against a tape.
class Var {
 public:
  Var() = default;
  Var(Tape& tape, NodeId id) : tape_(&tape), id_(id) {}

  NodeId id() const { return id_; }
  Tape& tape() const { return *tape_; }
  double value() const { return tape_->value(id_); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = kNone;
};

inline Var make_linear(Tape& t, Op tag, double bias,
                       std::initializer_list<Term> terms) {
  return {t, t.linear(tag, bias, std::span<const Term>(terms.begin(), terms.size()))};
}

inline Var operator+(Var a, Var b) {
  return make_linear(a.tape(), Op::add, 0.0, {{1.0, a.id()}, {1.0, b.id()}});
}
inline Var operator-(Var a, Var b) {
  return make_linear(a.tape(), Op::add, 0.0, {{1.0, a.id()}, {-1.0, b.id()}});
}
inline Var operator*(Var a, Var b) {
  return make_linear(a.tape(), Op::mul, 0.0, {{1.0, a.id(), b.id()}});
}
inline Var operator-(Var a) {
  return make_linear(a.tape(), Op::neg, 0.0, {{-1.0, a.id()}});
}
inline Var operator+(Var a, double c) {
  return make_linear(a.tape(), Op::add, c, {{1.0, a.id()}});
}
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a + (-c); }
inline Var operator-(double c, Var a) {
  return make_linear(a.tape(), Op::add, c, {{-1.0, a.id()}});
}
inline Var operator*(Var a, double c) {
  return make_linear(a.tape(), Op::mul, 0.0, {{c, a.id()}});
}
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, Var b) {
  return {a.tape(), a.tape().binary(Op::div, a.id(), b.id())};
}
inline Var operator/(Var a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, Var a) {
  return Var(a.tape(), a.tape().unary(Op::pow, a.id(), -1.0)) * c;
}

inline Var exp(Var x) { return {x.tape(), x.tape().unary(Op::exp, x.id())}; }
inline Var log(Var x) { return {x.tape(), x.tape().unary(Op::log, x.id())}; }
inline Var pow(Var x, double k) {
  return {x.tape(), x.tape().unary(Op::pow, x.id(), k)};
}
inline Var relu(Var x) { return {x.tape(), x.tape().unary(Op::relu, x.id())}; }
inline Var sigmoid(Var x) {
  return {x.tape(), x.tape().unary(Op::sigmoid, x.id())};
}
inline Var tanh(Var x) { return {x.tape(), x.tape().unary(Op::tanh, x.id())}; }
inline Var abs(Var x) { return {x.tape(), x.tape().unary(Op::abs, x.id())}; }
inline Var sqrt(Var x) { return {x.tape(), x.tape().unary(Op::sqrt, x.id())}; }
inline Var max(Var a, Var b) {
  return {a.tape(), a.tape().binary(Op::max, a.id(), b.id())};
}
inline Var square(Var x) { return x * x; }

// Scalar overloads so penalty templates instantiate for plain doubles too.
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline double square(double x) { return x * x; }

// sum_i c_i * x_i in a single node.
inline Var weighted_sum(std::span<const Var> xs, std::span<const double> coefs,
                        double bias = 0.0) {
  if (xs.empty()) throw InvalidNode("weighted_sum of an empty list needs a tape");
  std::vector<Term> terms;
  terms.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    terms.push_back({coefs.empty() ? 1.0 : coefs[i], xs[i].id(), kNone});
  }
  Tape& t = xs.front().tape();
  return {t, t.linear(Op::sum, bias, terms)};
}

inline Var sum(std::span<const Var> xs) { return weighted_sum(xs, {}); }

inline double sum(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

inline Var dot(std::span<const Var> a, std::span<const Var> b) {
  std::vector<Term> terms;
  terms.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) terms.push_back({1.0, a[i].id(), b[i].id()});
  Tape& t = a.front().tape();
  return {t, t.linear(Op::matmul_cell, 0.0, terms)};
}

// Sum of squares in a single node.
inline Var sum_squares(std::span<const Var> xs) {
  std::vector<Term> terms;
  terms.reserve(xs.size());
  for (const Var& x : xs) terms.push_back({1.0, x.id(), x.id()});
  Tape& t = xs.front().tape();
  return {t, t.linear(Op::sum, 0.0, terms)};
}

inline double sum_squares(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x * x;
  return s;
}

inline std::vector<Var> wrap(Tape& t, std::span<const NodeId> ids) {
  std::vector<Var> out;
  out.reserve(ids.size());
  for (NodeId id : ids) out.emplace_back(t, id);
  return out;
}

inline std::vector<NodeId> ids(std::span<const Var> vs) {
  std::vector<NodeId> out;
  out.reserve(vs.size());
  for (const Var& v : vs) out.push_back(v.id());
  return out;
}

// One recorded evaluation of a scalar function of a real vector.
struct Recording {
  Tape tape;
  std::vector<NodeId> inputs;
  NodeId output = kNone;
  double value = 0.0;
};

// Records `fn(inputs)` on a fresh tape. `fn` receives a span of input Vars and
// returns the output Var.
template <class Fn>
Recording forward(Fn&& fn, std::span<const double> inputs) {
  Recording rec;
  std::vector<Var> xs;
  xs.reserve(inputs.size());
  for (double x : inputs) {
    if (!std::isfinite(x)) throw NonFiniteValue("input is not finite");
    const NodeId id = rec.tape.variable(x);
    rec.inputs.push_back(id);
    xs.emplace_back(rec.tape, id);
  }
  const Var out = fn(std::span<const Var>(xs));
  rec.output = out.id();
  rec.value = out.value();
  return rec;
}

inline std::vector<NodeId> backward(Tape& tape, NodeId output,
                                    std::span<const NodeId> wrt) {
  return tape.gradient(output, wrt);
}

// Largest mixed absolute/relative discrepancy |a - b| / max(1, |a|, |b|)
// between reverse-mode derivatives and central differences.
//
// order 1: gradient vs central differences of the function value.
// order 2: Hessian (backward of backward) vs central differences of the
// reverse-mode gradient.
template <class Fn>
double finite_diff_check(Fn&& fn, std::span<const double> point, int order,
                         double step) {
  if (!(step > 0.0)) throw InvalidSpec("finite-difference step must be positive");
  if (order != 1 && order != 2) throw InvalidSpec("order must be 1 or 2");
  const std::size_t n = point.size();
  auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
  };
  auto value_at = [&](const std::vector<double>& x) { return forward(fn, x).value; };
  auto grad_at = [&](const std::vector<double>& x) {
    Recording rec = forward(fn, x);
    return rec.tape.values(rec.tape.gradient(rec.output, rec.inputs));
  };

  double worst = 0.0;
  std::vector<double> x(point.begin(), point.end());
  if (order == 1) {
    const std::vector<double> g = grad_at(x);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      const double fd = (value_at(xp) - value_at(xm)) / (2.0 * step);
      worst = std::max(worst, rel(g[i], fd));
    }
    return worst;
  }

  Recording rec = forward(fn, x);
  const std::vector<NodeId> g = rec.tape.gradient(rec.output, rec.inputs);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> hess_row =
        rec.tape.values(rec.tape.gradient(g[i], rec.inputs));
    std::vector<double> xp = x, xm = x;
    for (std::size_t j = 0; j < n; ++j) {
      xp = x;
      xm = x;
      xp[j] += step;
      xm[j] -= step;
      const double fd = (grad_at(xp)[i] - grad_at(xm)[i]) / (2.0 * step);
      worst = std::max(worst, rel(hess_row[j], fd));
    }
  }
  return worst;
}

}  // namespace attripriors::ad
