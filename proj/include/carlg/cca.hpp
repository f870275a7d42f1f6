// Contextual clue aggregation.
//
// Attention rows of a span (or the trigger) are averaged over heads and over
// the span's query rows. The span profile and the trigger profile are
// multiplied position by position and passed through a softmax restricted to
// document tokens; the resulting weights pool the context hidden states into
// a clue vector. Nothing here is trainable: the weights come from the
// encoder's final-layer attention.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "carlg/autodiff.hpp"
#include "carlg/encoder.hpp"
#include "carlg/sequence.hpp"

namespace carlg {

struct AttentionProfile {
  Vector weights;
};

struct ClueVector {
  Vector c;
  Vector attn;  // softmax weights over the pooled positions
};

// Mean over heads and over query rows [i, j] (inclusive) of a heads x l x l
// tensor; all key columns are kept.
inline AttentionProfile pool_attention(const std::vector<Matrix>& attention, int i, int j) {
  if (attention.empty()) throw std::invalid_argument("empty attention tensor");
  const Eigen::Index l = attention.front().rows();
  if (i < 0 || j < i || j >= l) {
    throw std::out_of_range("span [" + std::to_string(i) + ", " + std::to_string(j) + "] outside attention rows");
  }
  Vector out = Vector::Zero(attention.front().cols());
  for (const Matrix& a : attention) out += a.middleRows(i, j - i + 1).colwise().sum().transpose();
  out /= static_cast<double>(attention.size()) * (j - i + 1);
  return {out};
}

// Same pooling with the key columns restricted to `columns`.
inline AttentionProfile pool_attention(const std::vector<Matrix>& attention, PieceRange rows,
                                       const std::vector<int>& columns) {
  const AttentionProfile full = pool_attention(attention, rows.begin, rows.end - 1);
  AttentionProfile out{Vector(static_cast<Eigen::Index>(columns.size()))};
  for (std::size_t k = 0; k < columns.size(); ++k) out.weights(static_cast<Eigen::Index>(k)) = full.weights(columns[k]);
  return out;
}

// Token-to-token block of the attention restricted to the context pieces.
inline std::vector<Matrix> context_attention(const EncodingResult& enc, const MarkedSequence& seq) {
  std::vector<Matrix> out;
  for (const Matrix& a : enc.attention) out.push_back(a.block(seq.context.begin, seq.context.begin,
                                                                seq.context.size(), seq.context.size()));
  return out;
}

// p = softmax(a_span * a_trig) elementwise; value = Hᵀp.
inline ClueVector aggregate_profiles(const Matrix& values, const AttentionProfile& a_span,
                                     const AttentionProfile& a_trig) {
  const Eigen::Index n = values.rows();
  if (a_span.weights.size() != n || a_trig.weights.size() != n) {
    throw std::invalid_argument("profile length does not match hidden-state rows");
  }
  if (n == 0) throw std::invalid_argument("no positions to aggregate over");
  if (!a_span.weights.allFinite() || !a_trig.weights.allFinite() || !values.allFinite()) {
    throw std::invalid_argument("non-finite input to attention aggregation");
  }
  const Matrix prod = a_span.weights.cwiseProduct(a_trig.weights).transpose();
  Vector p = ad::softmax_rows_value(prod).transpose();
  Vector c = values.transpose() * p;
  return {std::move(c), std::move(p)};
}

inline ClueVector clue_vector(const Matrix& H_C, const AttentionProfile& a_span, const AttentionProfile& a_trig) {
  return aggregate_profiles(H_C, a_span, a_trig);
}

// ---------------------------------------------------------------------------
// Batched, differentiable forms used by the extractors.

// Row k averages the pieces of ranges[k] (uniform weights).
inline Matrix averaging_matrix(const std::vector<PieceRange>& ranges, int length) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(ranges.size()), length);
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    const PieceRange r = ranges[k];
    if (r.empty() || r.begin < 0 || r.end > length) throw std::out_of_range("pooling range outside sequence");
    m.row(static_cast<Eigen::Index>(k)).segment(r.begin, r.size()).setConstant(1.0 / r.size());
  }
  return m;
}

inline ad::Var head_mean(const std::vector<ad::Var>& attention) {
  if (attention.empty()) throw std::invalid_argument("empty attention tensor");
  return ad::scale(ad::sum(attention), 1.0 / static_cast<double>(attention.size()));
}

struct Aggregated {
  ad::Var p;      // [n x k]
  ad::Var value;  // [n x d]
};

// span_profiles [n x k], trig_profile [1 x k], values [k x d].
inline Aggregated aggregate_profiles(ad::Var span_profiles, ad::Var trig_profile, ad::Var values) {
  if (span_profiles.cols() != trig_profile.cols() || trig_profile.rows() != 1 ||
      values.rows() != span_profiles.cols()) {
    throw std::invalid_argument("attention aggregation shape mismatch");
  }
  ad::Var p = ad::softmax_rows(ad::mul_row(span_profiles, trig_profile));
  return {p, ad::matmul(p, values)};
}

}  // namespace carlg
