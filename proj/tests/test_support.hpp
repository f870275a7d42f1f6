// Shared fixtures and oracles for the test binaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "carlg/carlg.hpp"

namespace carlg::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  }
  return m;
}

inline RowVector random_row(std::mt19937_64& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  return random_matrix(rng, 1, n, lo, hi);
}

// heads x l x l tensor whose rows are probability distributions.
inline std::vector<Matrix> random_attention(std::mt19937_64& rng, int heads, Eigen::Index l) {
  std::vector<Matrix> out;
  for (int h = 0; h < heads; ++h) {
    Matrix a = random_matrix(rng, l, l, 0.01, 1.0);
    for (Eigen::Index r = 0; r < l; ++r) a.row(r) /= a.row(r).sum();
    out.push_back(a);
  }
  return out;
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Five words, trigger in the middle, two roles.
inline EventInstance tiny_instance() {
  EventInstance inst;
  inst.doc_id = "tiny";
  inst.words = {"rebels", "stormed", "the", "capital", "yesterday"};
  inst.event_type = "attack";
  inst.trigger = {1, 1};
  inst.roles = {"attacker", "target"};
  inst.args = {{"attacker", 0, 0}, {"target", 2, 3}};
  return inst;
}

// Six words, two events sharing a role so the label space has three roles.
inline std::vector<EventInstance> tiny_corpus() {
  EventInstance a = tiny_instance();
  EventInstance b;
  b.doc_id = "tiny2";
  b.words = {"police", "arrested", "two", "suspects", "in", "town"};
  b.event_type = "arrest";
  b.trigger = {1, 1};
  b.roles = {"agent", "target", "place"};
  b.args = {{"agent", 0, 0}, {"target", 2, 3}, {"place", 5, 5}};
  return {a, b};
}

// A run configuration small enough for exhaustive finite differences.
inline RunConfig tiny_config(Variant v) {
  RunConfig c = toy_preset(v);
  c.backend.layers = 1;
  c.backend.dim = 8;
  c.backend.heads = 2;
  c.backend.ffn = 12;
  c.backend.max_tokens = 128;
  c.backend.decoder_layers = 1;
  c.backend.dropout = 0.0;
  c.reduced_dim = 4;
  c.interaction_dim = 6;
  c.window = 128;
  c.stride = 64;
  c.seed = 7;
  return c;
}

// Re-draws every parameter so gradients are far from zero.
inline void scramble(ParameterStore& store, std::uint64_t seed, double scale = 0.4) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (Parameter& p : store.all()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += n(rng);
  }
}

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  long checked = 0;
};

// Central differences over every scalar of every parameter. Relative error is
// |a - n| / max(|a| + |n|, floor).
inline GradCheck check_gradients(ParameterStore& store, const std::function<double()>& loss,
                                 const std::function<void()>& analytic, double eps = 1e-4, double floor = 1e-6) {
  store.zero_grad();
  analytic();
  GradCheck out;
  for (Parameter& p : store.all()) {
    const Matrix g = p.grad;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& x = p.value.data()[i];
      const double keep = x;
      x = keep + eps;
      const double up = loss();
      x = keep - eps;
      const double down = loss();
      x = keep;
      const double num = (up - down) / (2.0 * eps);
      const double a = g.data()[i];
      const double rel = std::abs(a - num) / std::max(std::abs(a) + std::abs(num), floor);
      ++out.checked;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        std::ostringstream ss;
        ss.precision(3);
        ss << p.name << "[" << i << "] analytic " << a << " numeric " << num;
        out.worst = ss.str();
      }
    }
  }
  return out;
}

// Central differences on tape inputs. `build` records a scalar loss from the
// given leaves; returns the worst relative error.
inline double input_gradient_error(const std::vector<Matrix>& inputs,
                            const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& build) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Matrix& m : inputs) leaves.push_back(tape.input(m));
  ad::Var loss = build(tape, leaves);
  tape.backward(loss);
  auto eval = [&](const std::vector<Matrix>& xs) {
    ad::Tape t;
    std::vector<ad::Var> ls;
    for (const Matrix& m : xs) ls.push_back(t.input(m));
    return build(t, ls).value()(0, 0);
  };
  double worst = 0.0;
  const double eps = 1e-5;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      std::vector<Matrix> up = inputs, down = inputs;
      up[k].data()[i] += eps;
      down[k].data()[i] -= eps;
      const double num = (eval(up) - eval(down)) / (2 * eps);
      const double an = leaves[k].grad().data()[i];
      worst = std::max(worst, std::abs(an - num) / std::max(std::abs(an) + std::abs(num), 1e-6));
    }
  }
  return worst;
}

// Brute-force minimum assignment cost for rows <= cols.
inline double brute_force_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> cols(static_cast<std::size_t>(cost.cols()));
  for (int j = 0; j < static_cast<int>(cols.size()); ++j) cols[static_cast<std::size_t>(j)] = j;
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += cost(i, cols[static_cast<std::size_t>(i)]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

inline double assignment_cost(const Matrix& cost, const std::vector<int>& assign) {
  double s = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i) s += cost(static_cast<Eigen::Index>(i), assign[i]);
  return s;
}

// Loop oracles.

inline Vector loop_pool(const std::vector<Matrix>& A, int i, int j, const std::vector<int>& cols) {
  Vector out = Vector::Zero(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    double s = 0.0;
    for (const Matrix& a : A) {
      for (int k = i; k <= j; ++k) s += a(k, cols[c]);
    }
    out(static_cast<Eigen::Index>(c)) = s / (static_cast<double>(A.size()) * (j - i + 1));
  }
  return out;
}

inline std::pair<Vector, Vector> loop_aggregate(const Matrix& H, const Vector& a, const Vector& t) {
  const Eigen::Index n = H.rows();
  std::vector<double> z(static_cast<std::size_t>(n));
  double mx = -1e300;
  for (Eigen::Index k = 0; k < n; ++k) {
    z[static_cast<std::size_t>(k)] = a(k) * t(k);
    mx = std::max(mx, z[static_cast<std::size_t>(k)]);
  }
  double den = 0.0;
  for (double v : z) den += std::exp(v - mx);
  Vector p(n);
  for (Eigen::Index k = 0; k < n; ++k) p(k) = std::exp(z[static_cast<std::size_t>(k)] - mx) / den;
  Vector c = Vector::Zero(H.cols());
  for (Eigen::Index col = 0; col < H.cols(); ++col) {
    for (Eigen::Index k = 0; k < n; ++k) c(col) += p(k) * H(k, col);
  }
  return {c, p};
}

inline RowVector loop_tanh_fuse(const RowVector& x, const Matrix& W) {
  RowVector out(W.cols());
  for (Eigen::Index j = 0; j < W.cols(); ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) s += x(i) * W(i, j);
    out(j) = std::tanh(s);
  }
  return out;
}

// Ten single-event cases covering every error category. Expected totals, by
// hand (head = last word):
//   golds 12, predictions 11 after dedupe
//   Arg-I tp 5, Arg-C tp 4, Head-I tp 6, Head-C tp 5
//   Wrong Span 1, Over-extract 2, Partial 2, Overlap 1, Wrong Role 1
struct MetricFixture {
  std::vector<std::vector<Prediction>> preds;
  std::vector<std::vector<Argument>> golds;
};

inline MetricFixture metric_fixture() {
  MetricFixture f;
  auto add = [&](std::vector<Prediction> p, std::vector<Argument> g) {
    f.preds.push_back(std::move(p));
    f.golds.push_back(std::move(g));
  };
  add({{"A", 0, 1, 0.9}, {"B", 3, 3, 0.8}}, {{"A", 0, 1}, {"B", 3, 3}});  // both correct
  add({{"A", 2, 3, 0.5}}, {{"A", 2, 5}});                                  // partial
  add({{"A", 1, 3, 0.5}}, {{"A", 2, 5}});                                  // overlap
  add({{"A", 8, 9, 0.5}}, {{"A", 2, 5}});                                  // wrong span
  add({{"V", 3, 4, 0.5}}, {{"K", 3, 4}});                                  // wrong role
  add({{"B", 5, 6, 0.5}}, {{"A", 0, 0}});                                  // over-extract
  add({{"A", 3, 5, 0.5}}, {{"A", 2, 5}});                                  // partial, same head
  add({{"A", 1, 1, 0.5}}, {});                                             // over-extract, no golds
  add({{"A", 4, 4, 0.9}, {"A", 4, 4, 0.5}, {"A", 0, 1, 0.7}}, {{"A", 0, 1}, {"A", 4, 4}});  // duplicate
  add({}, {{"A", 1, 2}, {"B", 6, 7}});                                     // missed
  return f;
}

// Six events over roles A..D (D never filled). By hand:
//   tot A 5, B 4, C 3, D 0; co(A,B) 3, co(A,C) 2, co(B,C) 2
inline std::vector<EventInstance> cooccurrence_fixture() {
  const std::vector<std::vector<Argument>> fills = {
      {{"A", 0, 0}, {"B", 1, 1}},
      {{"A", 0, 0}, {"B", 1, 1}, {"C", 2, 2}},
      {{"A", 0, 0}},
      {{"B", 1, 1}, {"C", 2, 2}},
      {{"A", 0, 0}, {"C", 2, 2}},
      {{"A", 0, 0}, {"A", 3, 3}, {"B", 1, 1}},
  };
  std::vector<EventInstance> out;
  for (std::size_t i = 0; i < fills.size(); ++i) {
    EventInstance e;
    e.doc_id = "co" + std::to_string(i);
    e.words = {"w0", "w1", "w2", "w3", "t"};
    e.event_type = "ev";
    e.trigger = {4, 4};
    e.roles = {"A", "B", "C", "D"};
    e.args = fills[i];
    out.push_back(e);
  }
  return out;
}

}  // namespace carlg::testing
