// Role-based guidance: token-to-role attention, role fusion, role feature
// reduction and the Tucker-style triple scorer
//
//   I      = tanh([h_t; s] W_f + b_f)              (d_i)
//   r'_k   = H_R[k] W_3 + b_w                      (d')
//   score  = sigmoid(Iᵀ Z r'_k + b_k)
//
// The "none" category is the last row of H_R.

#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "carlg/autodiff.hpp"
#include "carlg/cca.hpp"
#include "carlg/encoder.hpp"
#include "carlg/parameters.hpp"
#include "carlg/sequence.hpp"

namespace carlg {

using RoleAttentionProfile = AttentionProfile;
using RoleFusionVector = ClueVector;

// Mean attention of `rows` onto each role's representative token, then none.
inline RoleAttentionProfile extract_role_attention(const std::vector<Matrix>& attention, const MarkedSequence& seq,
                                                   PieceRange rows) {
  const std::vector<int> cols = seq.role_positions();
  if (seq.role_tokens.empty() || seq.none_index < 0) throw std::invalid_argument("sequence has no role block");
  if (rows.empty() || rows.begin < seq.context.begin || rows.end > seq.context.end) {
    throw std::out_of_range("span outside the context");
  }
  return pool_attention(attention, rows, cols);
}

inline RoleFusionVector role_fusion(const Matrix& H_R, const RoleAttentionProfile& a_span,
                                    const RoleAttentionProfile& a_trig) {
  return aggregate_profiles(H_R, a_span, a_trig);
}

struct TripleScoreModel {
  Matrix W3;      // d x d'
  RowVector b_w;  // d'
  Matrix Z;       // d_i x d'
  RowVector b;    // l_r
  Matrix W_f;     // 2d x d_i, rows [0, d) act on h_t, rows [d, 2d) on s
  RowVector b_f;  // d_i

  Eigen::Index dim() const { return W3.rows(); }
  Eigen::Index reduced_dim() const { return W3.cols(); }
  Eigen::Index interaction_dim() const { return Z.rows(); }

  void check() const {
    const bool ok = b_w.size() == W3.cols() && Z.cols() == W3.cols() && W_f.rows() == 2 * W3.rows() &&
                    W_f.cols() == Z.rows() && b_f.size() == Z.rows();
    if (!ok) throw std::invalid_argument("inconsistent triple-score model shapes");
  }

  static TripleScoreModel random(int d, int d_reduced, int d_i, int l_r, std::mt19937_64& rng, double std_dev = 0.02) {
    auto fill = [&](Eigen::Index r, Eigen::Index c) {
      Matrix m(r, c);
      for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = truncated_normal(rng, std_dev);
      }
      return m;
    };
    return {fill(d, d_reduced), RowVector::Zero(d_reduced), fill(d_i, d_reduced), RowVector::Zero(l_r),
            fill(2 * d, d_i), RowVector::Zero(d_i)};
  }
};

inline Matrix reduce_roles(const TripleScoreModel& m, const Matrix& H_R) {
  if (H_R.cols() != m.W3.rows()) throw std::invalid_argument("role features do not match W3");
  return (H_R * m.W3).rowwise() + m.b_w;
}

inline RowVector interaction(const TripleScoreModel& m, const RowVector& h_t, const RowVector& s) {
  m.check();
  if (h_t.size() != m.dim() || s.size() != m.dim()) throw std::invalid_argument("interaction input size");
  RowVector hs(2 * m.dim());
  hs << h_t, s;
  return (hs * m.W_f + m.b_f).array().tanh().matrix();
}

// Pre-sigmoid score of one (span, role, trigger) triple. `H_R_reduced` comes
// from reduce_roles.
inline double tucker_logit(const TripleScoreModel& m, const RowVector& h_t, const RowVector& s,
                           const Matrix& H_R_reduced, int role_k) {
  if (role_k < 0 || role_k >= H_R_reduced.rows() || role_k >= m.b.size()) {
    throw std::out_of_range("role index out of range");
  }
  const RowVector I = interaction(m, h_t, s);
  return (I * m.Z).dot(H_R_reduced.row(role_k)) + m.b(role_k);
}

inline double tucker_score(const TripleScoreModel& m, const RowVector& h_t, const RowVector& s,
                           const Matrix& H_R_reduced, int role_k) {
  const double z = tucker_logit(m, h_t, s, H_R_reduced, role_k);
  if (!std::isfinite(z)) throw std::domain_error("non-finite triple score");
  return 1.0 / (1.0 + std::exp(-z));
}

// ---------------------------------------------------------------------------
// Batched, differentiable scorer.

struct TripleScoreVars {
  ad::Var W3, b_w, Z, b, W_ft, W_fs, b_f;
};

// Differentiable view of a value-level model; every tensor is a tape input so
// its gradient can be read back.
inline TripleScoreVars to_vars(ad::Tape& tape, const TripleScoreModel& m) {
  m.check();
  const Eigen::Index d = m.dim();
  return {tape.input(m.W3), tape.input(m.b_w),           tape.input(m.Z),           tape.input(m.b),
          tape.input(m.W_f.topRows(d)), tape.input(m.W_f.bottomRows(d)), tape.input(m.b_f)};
}

// h_t [1 x d], S [n x d] -> I [n x d_i].
inline ad::Var interaction(const TripleScoreVars& v, ad::Var h_t, ad::Var S) {
  ad::Var trig = ad::matmul(h_t, v.W_ft);
  return ad::tanh(ad::add_row(ad::add_row(ad::matmul(S, v.W_fs), trig), v.b_f));
}

inline ad::Var reduce_roles(const TripleScoreVars& v, ad::Var H_R) { return ad::add_row(ad::matmul(H_R, v.W3), v.b_w); }

// I [n x d_i], H_R' [l_r x d'], bias [1 x l_r] -> logits [n x l_r].
inline ad::Var tucker_logits(ad::Var I, ad::Var Z, ad::Var H_R_reduced, ad::Var bias) {
  return ad::add_row(ad::matmul_nt(ad::matmul(I, Z), H_R_reduced), bias);
}

// All (span, role) probabilities in one pass: rows are spans, columns roles.
inline Matrix tucker_scores(const TripleScoreModel& m, const RowVector& h_t, const Matrix& S, const Matrix& H_R) {
  ad::Tape tape;
  const TripleScoreVars v = to_vars(tape, m);
  ad::Var I = interaction(v, tape.constant(h_t), tape.constant(S));
  ad::Var logits = tucker_logits(I, v.Z, reduce_roles(v, tape.constant(H_R)), v.b);
  return ad::sigmoid(logits).value();
}

}  // namespace carlg
