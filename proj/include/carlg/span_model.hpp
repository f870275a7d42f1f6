// Span extractor.
//
// Every word span up to max_span_length is a candidate. Its representation
// fuses the mean of its hidden states with the clue vector and the role
// fusion vector, s = tanh(m W_m + c W_c + r W_r), and each (span, role) pair
// is scored by the triple scorer. The per-role logits of a span are
// normalized with a softmax over the event's roles plus "none" for the focal
// loss and for argmax decoding.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "carlg/autodiff.hpp"
#include "carlg/cca.hpp"
#include "carlg/dataset.hpp"
#include "carlg/encoder.hpp"
#include "carlg/evaluation.hpp"
#include "carlg/extractor.hpp"
#include "carlg/parameters.hpp"
#include "carlg/rlig.hpp"
#include "carlg/sequence.hpp"
#include "carlg/tokenizer.hpp"

namespace carlg {

inline std::vector<WordSpan> enumerate_spans(int n_words, int max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  std::vector<WordSpan> out;
  for (int i = 0; i < n_words; ++i) {
    for (int j = i; j < n_words && j - i + 1 <= max_len; ++j) out.push_back({i, j});
  }
  return out;
}

// tanh([mean(H_C[i..j]); c; r] W_span) with W_span of shape 3d x d. `span`
// indexes rows of H_C.
inline RowVector fuse_span(const Matrix& H_C, PieceRange span, const ClueVector& clue, const RoleFusionVector& role,
                           const Matrix& W_span) {
  const Eigen::Index d = H_C.cols();
  if (span.empty() || span.begin < 0 || span.end > H_C.rows()) throw std::invalid_argument("empty or invalid span range");
  if (W_span.rows() != 3 * d || W_span.cols() != d || clue.c.size() != d || role.c.size() != d) {
    throw std::invalid_argument("fuse_span shape mismatch");
  }
  RowVector x(3 * d);
  x << H_C.middleRows(span.begin, span.size()).colwise().mean(), clue.c.transpose(), role.c.transpose();
  return (x * W_span).array().tanh().matrix();
}

// ---------------------------------------------------------------------------
// Focal loss.

struct FocalLossConfig {
  double alpha = 10.0;
  double gamma = 2.0;

  void check() const {
    if (!(alpha > 0.0) || !(gamma >= 0.0)) throw std::invalid_argument("focal loss needs alpha > 0 and gamma >= 0");
  }
};

inline constexpr double kMinProbability = 1e-12;

namespace detail {

// f(p) = alpha (1-p)^gamma (-log p) and df/dp.
inline double focal_term(double p, double log_p, const FocalLossConfig& cfg) {
  return cfg.alpha * std::pow(1.0 - p, cfg.gamma) * -log_p;
}

inline double focal_derivative(double p, double log_p, const FocalLossConfig& cfg) {
  const double q = 1.0 - p;
  double d = -std::pow(q, cfg.gamma) / p;
  if (cfg.gamma != 0.0 && q > 0.0) d += -cfg.gamma * std::pow(q, cfg.gamma - 1.0) * -log_p;
  return cfg.alpha * d;
}

}  // namespace detail

// Loss from a row-stochastic probability matrix; gold[k] indexes a column.
inline double focal_loss(const Matrix& probs, const std::vector<int>& gold, const FocalLossConfig& cfg,
                         LossStats* stats = nullptr) {
  cfg.check();
  if (static_cast<Eigen::Index>(gold.size()) != probs.rows()) throw std::invalid_argument("one gold label per span");
  double loss = 0.0;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    double p = probs(static_cast<Eigen::Index>(k), gold[k]);
    if (p < kMinProbability) {
      p = kMinProbability;
      if (stats != nullptr) ++stats->clamped_probabilities;
    }
    loss += detail::focal_term(p, std::log(p), cfg);
  }
  return loss;
}

// Differentiable form over logits [n x l_r]; the softmax is folded in.
inline ad::Var focal_loss(ad::Var logits, std::vector<int> gold, const FocalLossConfig& cfg,
                          LossStats* stats = nullptr) {
  cfg.check();
  if (static_cast<Eigen::Index>(gold.size()) != logits.rows()) throw std::invalid_argument("one gold label per span");
  ad::Tape& t = *logits.tape();
  const Matrix probs = ad::softmax_rows_value(logits.value());
  Eigen::VectorXd coef(probs.rows());  // df/dp * p per row
  double loss = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int y = gold[static_cast<std::size_t>(r)];
    if (y < 0 || y >= probs.cols()) throw std::out_of_range("gold label outside role columns");
    const Eigen::RowVectorXd z = logits.value().row(r);
    double log_p = z(y) - (z.maxCoeff() + std::log((z.array() - z.maxCoeff()).exp().sum()));
    double p = probs(r, y);
    if (p < kMinProbability) {
      p = kMinProbability;
      log_p = std::log(p);
      if (stats != nullptr) ++stats->clamped_probabilities;
    }
    loss += detail::focal_term(p, log_p, cfg);
    coef(r) = detail::focal_derivative(p, log_p, cfg) * p;
  }
  const int il = logits.id();
  return t.push(Matrix::Constant(1, 1, loss), t.requires_grad(il),
                [il, probs, coef, gold = std::move(gold)](ad::Tape& t, int self) {
                  const double g = t.grad(self)(0, 0);
                  Matrix d = -probs;
                  for (Eigen::Index r = 0; r < d.rows(); ++r) {
                    d(r, gold[static_cast<std::size_t>(r)]) += 1.0;
                    d.row(r) *= coef(r) * g;
                  }
                  t.accumulate(il, d);
                });
}

// Argmax per span (lowest column wins ties); spans whose argmax is the last
// ("none") column are dropped; several spans may share a role.
inline std::vector<Prediction> decode_spans(const Matrix& scores, const std::vector<WordSpan>& spans,
                                            const std::vector<std::string>& roles) {
  if (scores.rows() != static_cast<Eigen::Index>(spans.size()) ||
      scores.cols() != static_cast<Eigen::Index>(roles.size()) + 1) {
    throw std::invalid_argument("score matrix does not match spans x (roles + none)");
  }
  std::vector<Prediction> out;
  for (Eigen::Index s = 0; s < scores.rows(); ++s) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < scores.cols(); ++k) {
      if (scores(s, k) > scores(s, best)) best = k;
    }
    if (best == scores.cols() - 1) continue;
    const WordSpan w = spans[static_cast<std::size_t>(s)];
    out.push_back({roles[static_cast<std::size_t>(best)], w.start, w.end, scores(s, best)});
  }
  return out;
}

// Gold column for every candidate: the inventory index of the role whose gold
// span matches exactly, otherwise "none" (= roles.size()).
inline std::vector<int> span_gold_labels(const std::vector<WordSpan>& spans, const EventInstance& inst,
                                         LossStats* stats = nullptr) {
  const int none = static_cast<int>(inst.roles.size());
  std::vector<int> gold(spans.size(), none);
  for (std::size_t s = 0; s < spans.size(); ++s) {
    for (const Argument& a : inst.args) {
      if (a.span() != spans[s]) continue;
      const int k = static_cast<int>(std::find(inst.roles.begin(), inst.roles.end(), a.role) - inst.roles.begin());
      if (gold[s] == none) {
        gold[s] = k;
      } else if (gold[s] != k && stats != nullptr) {
        ++stats->conflicting_labels;
      }
    }
  }
  return gold;
}

// ---------------------------------------------------------------------------

struct SpanModelConfig {
  int max_span_length = 8;
  FocalLossConfig focal;
  bool use_cca = true;
  bool use_rlig = true;
  int reduced_dim = 8;       // d'
  int interaction_dim = 16;  // d_i
  RoleBlock role_block = RoleBlock::kAfterContext;
  int window = 512;
  int stride = 256;
};

// Head parameters for `n_roles` global roles (a bias column is added for "none").
inline Manifest span_head_manifest(const SpanModelConfig& c, int d, int n_roles) {
  Manifest m;
  add_fusion_manifest(m, {"span.fuse.w_m"}, "span", d, c.use_cca, c.use_rlig);
  if (c.use_rlig) {
    m.push_back({"rlig.w3", d, c.reduced_dim, "rlig", "head", Init::kTruncatedNormal});
    m.push_back({"rlig.b_w", 1, c.reduced_dim, "rlig", "head", Init::kZeros});
    m.push_back({"rlig.z", c.interaction_dim, c.reduced_dim, "rlig", "head", Init::kTruncatedNormal});
    m.push_back({"rlig.b", 1, n_roles + 1, "rlig", "head", Init::kZeros});
    m.push_back({"rlig.ffn.w_t", d, c.interaction_dim, "rlig", "head", Init::kTruncatedNormal});
    m.push_back({"rlig.ffn.w_s", d, c.interaction_dim, "rlig", "head", Init::kTruncatedNormal});
    m.push_back({"rlig.ffn.b", 1, c.interaction_dim, "rlig", "head", Init::kZeros});
  } else {
    // Plain classifier over [h_t; s] when role guidance is off.
    m.push_back({"span.cls.w_t", d, d, "span", "head", Init::kTruncatedNormal});
    m.push_back({"span.cls.w_s", d, d, "span", "head", Init::kTruncatedNormal});
    m.push_back({"span.cls.b1", 1, d, "span", "head", Init::kZeros});
    m.push_back({"span.cls.w2", d, n_roles + 1, "span", "head", Init::kTruncatedNormal});
    m.push_back({"span.cls.b2", 1, n_roles + 1, "span", "head", Init::kZeros});
  }
  return m;
}

struct SpanForward {
  std::vector<WordSpan> spans;
  std::vector<std::string> roles;  // logits columns; "none" is the extra last column
  EncoderVars enc;
  ad::Var fused;          // s, [n x d]
  ad::Var trigger;        // h_t, [1 x d]
  ad::Var clue_p;         // [n x l_w], CCA only
  ad::Var role_p;         // [n x l_r], RLIG only
  ad::Var role_features;  // H_R, [l_r x d], RLIG only
  ad::Var logits;         // [n x l_r]
};

class SpanExtractor final : public Extractor {
 public:
  SpanExtractor(SpanModelConfig cfg, const LabelSpace& labels, const Tokenizer& tok, const EncoderBackend& backend,
                ParameterStore& store)
      : cfg_(cfg), labels_(labels), tok_(tok), backend_(backend), store_(store) {
    cfg_.focal.check();
  }

  const SpanModelConfig& config() const { return cfg_; }

  MarkedSequence build(const EventInstance& inst) const {
    return build_span_input(inst, tok_, cfg_.use_rlig ? cfg_.role_block : RoleBlock::kNone, &labels_);
  }

  int input_length(const EventInstance& inst) const override { return build(inst).length(); }

  EncoderVars encode(ad::Tape& tape, const MarkedSequence& seq, const ForwardMode& mode) const {
    return encode_auto(tape, seq, backend_, cfg_.window, cfg_.stride, mode);
  }

  SpanForward forward(ad::Tape& tape, const EventInstance& inst, const ForwardMode& mode = {}) const {
    const MarkedSequence seq = build(inst);
    return forward(tape, inst, seq, encode(tape, seq, mode));
  }

  // Scoring from an existing encoding of `seq`.
  SpanForward forward(ad::Tape& tape, const EventInstance& inst, const MarkedSequence& seq, EncoderVars enc) const {
    SpanForward f;
    f.enc = std::move(enc);
    f.roles = inst.roles;
    f.spans = enumerate_spans(static_cast<int>(inst.words.size()), cfg_.max_span_length);
    const int l = seq.length();
    std::vector<PieceRange> ranges;
    for (const WordSpan& s : f.spans) ranges.push_back(seq.span_pieces(s));
    const Matrix M = averaging_matrix(ranges, l);
    const Matrix Mt = averaging_matrix({seq.trigger}, l);
    const ad::Var H = f.enc.hidden;
    const ad::Var m = ad::lmul(M, H);
    f.trigger = ad::lmul(Mt, H);

    ad::Var pre = ad::matmul(m, param(tape, "span.fuse.w_m"));
    if (cfg_.use_cca || cfg_.use_rlig) {
      const ad::Var abar = head_mean(f.enc.attention);
      const ad::Var span_rows = ad::lmul(M, abar);
      const ad::Var trig_row = ad::lmul(Mt, abar);
      if (cfg_.use_cca) {
        const std::vector<int> ctx = seq.context_positions();
        Aggregated a = aggregate_profiles(ad::gather_cols(span_rows, ctx), ad::gather_cols(trig_row, ctx),
                                          ad::gather_rows(H, ctx));
        f.clue_p = a.p;
        pre = ad::add(pre, ad::matmul(a.value, param(tape, "cca.fuse.w_c")));
      }
      if (cfg_.use_rlig) {
        const std::vector<int> rp = seq.role_positions();
        f.role_features = ad::gather_rows(H, rp);
        Aggregated a = aggregate_profiles(ad::gather_cols(span_rows, rp), ad::gather_cols(trig_row, rp), f.role_features);
        f.role_p = a.p;
        pre = ad::add(pre, ad::matmul(a.value, param(tape, "rlig.fuse.w_r")));
      }
    }
    f.fused = ad::tanh(pre);

    const std::vector<int> cols = role_columns(inst);
    if (cfg_.use_rlig) {
      const TripleScoreVars v = score_vars(tape);
      const ad::Var I = interaction(v, f.trigger, f.fused);
      f.logits = tucker_logits(I, v.Z, reduce_roles(v, f.role_features), ad::gather_cols(v.b, cols));
    } else {
      ad::Var hidden = ad::add_row(ad::matmul(f.fused, param(tape, "span.cls.w_s")),
                                   ad::matmul(f.trigger, param(tape, "span.cls.w_t")));
      hidden = ad::tanh(ad::add_row(hidden, param(tape, "span.cls.b1")));
      ad::Var all = ad::add_row(ad::matmul(hidden, param(tape, "span.cls.w2")), param(tape, "span.cls.b2"));
      f.logits = ad::gather_cols(all, cols);
    }
    return f;
  }

  ad::Var loss(ad::Tape& tape, const EventInstance& inst, const ForwardMode& mode) const override {
    SpanForward f = forward(tape, inst, mode);
    return focal_loss(f.logits, span_gold_labels(f.spans, inst, &stats_), cfg_.focal, &stats_);
  }

  // Independent per-role sigmoid scores [n_spans x l_r].
  Matrix score_all(const EventInstance& inst) const {
    ad::Tape tape;
    return ad::sigmoid(forward(tape, inst).logits).value();
  }

  EventPrediction predict(const EventInstance& inst) const override {
    ad::Tape tape;
    SpanForward f = forward(tape, inst);
    const Matrix probs = ad::softmax_rows_value(f.logits.value());
    return {inst.doc_id, inst.event_type, inst.trigger, decode_spans(probs, f.spans, f.roles)};
  }

 private:
  ad::Var param(ad::Tape& tape, const std::string& name) const { return tape.param(store_.at(name)); }

  TripleScoreVars score_vars(ad::Tape& tape) const {
    return {param(tape, "rlig.w3"),    param(tape, "rlig.b_w"),     param(tape, "rlig.z"), param(tape, "rlig.b"),
            param(tape, "rlig.ffn.w_t"), param(tape, "rlig.ffn.w_s"), param(tape, "rlig.ffn.b")};
  }

  // Global role ids of the event's inventory followed by the "none" column.
  std::vector<int> role_columns(const EventInstance& inst) const {
    std::vector<int> cols;
    for (const std::string& r : inst.roles) cols.push_back(labels_.role_id(r));
    cols.push_back(static_cast<int>(labels_.roles.size()));
    return cols;
  }

  SpanModelConfig cfg_;
  const LabelSpace& labels_;
  const Tokenizer& tok_;
  const EncoderBackend& backend_;
  ParameterStore& store_;
};

}  // namespace carlg
