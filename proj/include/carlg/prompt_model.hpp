// Prompt extractor.
//
// The encoder reads [CLS] roles [SEP] context [SEP] prompt [SEP]; a decoder
// stack re-encodes the result. Each prompt slot is fused with its clue and
// role vectors, h~ = tanh(h W_h + c W_c + r W_r), and turned into start/end
// selectors h~ * w_start and h~ * w_end. Selector logits range over an EMPTY
// sentinel (the [CLS] row, index 0) followed by the first piece of every
// document word. Training assigns gold spans to same-role slots by minimum
// cost matching.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
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

namespace carlg {

inline RowVector fuse_slot(const RowVector& h_slot, const ClueVector& clue, const RoleFusionVector& role,
                           const Matrix& W_prompt) {
  const Eigen::Index d = h_slot.size();
  if (W_prompt.rows() != 3 * d || W_prompt.cols() != d || clue.c.size() != d || role.c.size() != d) {
    throw std::invalid_argument("fuse_slot shape mismatch");
  }
  RowVector x(3 * d);
  x << h_slot, clue.c.transpose(), role.c.transpose();
  return (x * W_prompt).array().tanh().matrix();
}

struct Selectors {
  RowVector start;
  RowVector end;
};

inline Selectors make_selectors(const RowVector& h_tilde, const RowVector& w_start, const RowVector& w_end) {
  if (w_start.size() != h_tilde.size() || w_end.size() != h_tilde.size()) throw std::invalid_argument("selector size");
  return {h_tilde.cwiseProduct(w_start), h_tilde.cwiseProduct(w_end)};
}

struct SpanPrediction {
  bool empty = true;
  int start = 0;  // word indices, valid when !empty
  int end = 0;
  double score = 0.0;  // start logit + end logit
};

// Logits over [EMPTY, word 0, ..., word n-1]. The best (s, e) with s <= e and
// e - s + 1 <= max_len is returned unless the EMPTY pair scores higher.
// Earlier starts, then earlier ends, win ties.
inline SpanPrediction select_span(const RowVector& start_logits, const RowVector& end_logits, int max_len) {
  const Eigen::Index n = start_logits.size() - 1;
  if (n < 1 || end_logits.size() != start_logits.size()) throw std::invalid_argument("empty context");
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  SpanPrediction best{false, 0, 0, -std::numeric_limits<double>::infinity()};
  for (Eigen::Index s = 1; s <= n; ++s) {
    for (Eigen::Index e = s; e <= n && e - s + 1 <= max_len; ++e) {
      const double v = start_logits(s) + end_logits(e);
      if (v > best.score) best = {false, static_cast<int>(s - 1), static_cast<int>(e - 1), v};
    }
  }
  const double empty = start_logits(0) + end_logits(0);
  if (empty > best.score) return {true, 0, 0, empty};
  return best;
}

// H_context: the EMPTY sentinel row followed by one row per context word.
inline SpanPrediction select_span(const RowVector& phi_start, const RowVector& phi_end, const Matrix& H_context,
                                  int max_len) {
  if (H_context.rows() < 2) throw std::invalid_argument("empty context");
  return select_span(RowVector(phi_start * H_context.transpose()), RowVector(phi_end * H_context.transpose()), max_len);
}

// ---------------------------------------------------------------------------
// Minimum-cost assignment (Hungarian algorithm with potentials). Requires
// rows <= cols; returns the column assigned to each row.

inline std::vector<int> hungarian(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw std::invalid_argument("hungarian needs rows <= cols");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) assign[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  }
  return assign;
}

// Per-slot start/end logits over [EMPTY, words...].
struct SlotLogits {
  std::string role;
  RowVector start;
  RowVector end;
};

struct MatchResult {
  std::vector<int> start_target;  // per slot, 0 = EMPTY, w + 1 = word w
  std::vector<int> end_target;
  long dropped = 0;               // golds left without a slot
};

namespace detail {

inline RowVector log_softmax(const RowVector& z) {
  const double mx = z.maxCoeff();
  return z.array() - (mx + std::log((z.array() - mx).exp().sum()));
}

}  // namespace detail

// Within each role, golds are matched to that role's slots minimizing
// -(log p_start(s) + log p_end(e)). Unmatched slots target EMPTY.
inline MatchResult match_slots(const std::vector<SlotLogits>& slots,
                               const std::map<std::string, std::vector<WordSpan>>& golds) {
  MatchResult r;
  r.start_target.assign(slots.size(), 0);
  r.end_target.assign(slots.size(), 0);
  std::map<std::string, std::vector<int>> groups;
  for (std::size_t k = 0; k < slots.size(); ++k) groups[slots[k].role].push_back(static_cast<int>(k));
  for (const auto& [role, spans] : golds) {
    auto it = groups.find(role);
    if (it == groups.end()) {
      r.dropped += static_cast<long>(spans.size());
      continue;
    }
    const std::vector<int>& group = it->second;
    const auto ng = static_cast<Eigen::Index>(spans.size());
    const auto ns = static_cast<Eigen::Index>(group.size());
    Matrix cost(ng, ns);
    for (Eigen::Index s = 0; s < ns; ++s) {
      const SlotLogits& sl = slots[static_cast<std::size_t>(group[static_cast<std::size_t>(s)])];
      const RowVector ls = detail::log_softmax(sl.start);
      const RowVector le = detail::log_softmax(sl.end);
      for (Eigen::Index g = 0; g < ng; ++g) {
        const WordSpan w = spans[static_cast<std::size_t>(g)];
        if (w.end + 1 >= ls.size()) throw std::out_of_range("gold span outside slot logits");
        cost(g, s) = -(ls(w.start + 1) + le(w.end + 1));
      }
    }
    auto assign_pair = [&](Eigen::Index g, Eigen::Index s) {
      const int k = group[static_cast<std::size_t>(s)];
      r.start_target[static_cast<std::size_t>(k)] = spans[static_cast<std::size_t>(g)].start + 1;
      r.end_target[static_cast<std::size_t>(k)] = spans[static_cast<std::size_t>(g)].end + 1;
    };
    if (ng <= ns) {
      const std::vector<int> a = hungarian(cost);
      for (Eigen::Index g = 0; g < ng; ++g) assign_pair(g, a[static_cast<std::size_t>(g)]);
    } else {
      const std::vector<int> a = hungarian(cost.transpose());
      for (Eigen::Index s = 0; s < ns; ++s) assign_pair(a[static_cast<std::size_t>(s)], s);
      r.dropped += static_cast<long>(ng - ns);
    }
  }
  return r;
}

struct BipartiteLoss {
  double loss = 0.0;
  MatchResult match;
};

// Summed start and end cross-entropy against the matched targets.
inline BipartiteLoss bipartite_loss(const std::vector<SlotLogits>& slots,
                                    const std::map<std::string, std::vector<WordSpan>>& golds) {
  BipartiteLoss out{0.0, match_slots(slots, golds)};
  for (std::size_t k = 0; k < slots.size(); ++k) {
    out.loss -= detail::log_softmax(slots[k].start)(out.match.start_target[k]);
    out.loss -= detail::log_softmax(slots[k].end)(out.match.end_target[k]);
  }
  return out;
}

inline std::map<std::string, std::vector<WordSpan>> golds_by_role(const EventInstance& inst) {
  std::map<std::string, std::vector<WordSpan>> out;
  for (const Argument& a : inst.args) out[a.role].push_back(a.span());
  return out;
}

// ---------------------------------------------------------------------------

struct PromptModelConfig {
  int max_span_length = 10;
  bool use_cca = true;
  bool use_rlig = true;
  RoleBlock role_block = RoleBlock::kBeforeContext;
  int context_window = 250;  // words kept around the trigger
  int window = 512;
  int stride = 256;
};

inline Manifest prompt_head_manifest(const PromptModelConfig& c, int d) {
  Manifest m;
  add_fusion_manifest(m, {"prompt.fuse.w_h"}, "prompt", d, c.use_cca, c.use_rlig);
  m.push_back({"prompt.w_start", 1, d, "prompt", "head", Init::kOnes});
  m.push_back({"prompt.w_end", 1, d, "prompt", "head", Init::kOnes});
  return m;
}

// Keeps at most `window` words centred on the trigger. Arguments outside the
// window are dropped; `offset` maps cropped word indices back.
struct CroppedInstance {
  EventInstance inst;
  int offset = 0;
};

inline CroppedInstance crop_to_window(const EventInstance& inst, int window) {
  const int n = static_cast<int>(inst.words.size());
  if (window <= 0 || n <= window) return {inst, 0};
  const int centre = (inst.trigger.start + inst.trigger.end) / 2;
  int lo = std::clamp(centre - window / 2, 0, n - window);
  lo = std::min(lo, inst.trigger.start);
  int hi = std::max(lo + window, inst.trigger.end + 1);
  CroppedInstance c{inst, lo};
  c.inst.words.assign(inst.words.begin() + lo, inst.words.begin() + hi);
  c.inst.trigger = {inst.trigger.start - lo, inst.trigger.end - lo};
  c.inst.args.clear();
  for (const Argument& a : inst.args) {
    if (a.start >= lo && a.end < hi) c.inst.args.push_back({a.role, a.start - lo, a.end - lo});
  }
  return c;
}

struct PromptForward {
  MarkedSequence seq;
  EncoderVars enc;
  ad::Var decoded;   // H_de
  ad::Var slot_h;    // [K x d]
  ad::Var fused;     // h~, [K x d]
  ad::Var clue_p;    // [K x l_w], CCA only
  ad::Var role_p;    // [K x l_r], RLIG only
  ad::Var start_logits;  // [K x (n + 1)]
  ad::Var end_logits;
};

class PromptExtractor final : public Extractor {
 public:
  PromptExtractor(PromptModelConfig cfg, const LabelSpace& labels, const TemplateRegistry& templates,
                  const Tokenizer& tok, const EncoderBackend& backend, ParameterStore& store)
      : cfg_(cfg), labels_(labels), templates_(templates), tok_(tok), backend_(backend), store_(store) {
    if (!backend_.has_decoder()) throw std::invalid_argument("prompt extractor needs a backend with a decoder");
  }

  const PromptModelConfig& config() const { return cfg_; }

  MarkedSequence build(const EventInstance& inst) const {
    return build_prompt_input(inst, templates_, tok_, cfg_.use_rlig ? cfg_.role_block : RoleBlock::kNone, &labels_);
  }

  int input_length(const EventInstance& inst) const override {
    return build(crop_to_window(inst, cfg_.context_window).inst).length();
  }

  // `inst` must already be cropped.
  PromptForward forward(ad::Tape& tape, const EventInstance& inst, const ForwardMode& mode = {}) const {
    MarkedSequence seq = build(inst);
    EncoderVars enc = encode_auto(tape, seq, backend_, cfg_.window, cfg_.stride, mode);
    return forward(tape, std::move(seq), std::move(enc), mode);
  }

  PromptForward forward(ad::Tape& tape, MarkedSequence seq, EncoderVars enc, const ForwardMode& mode = {}) const {
    PromptForward f;
    f.seq = std::move(seq);
    f.enc = std::move(enc);
    f.decoded = backend_.decode(tape, f.enc.hidden, mode);
    const int l = f.seq.length();
    const int d = static_cast<int>(f.enc.hidden.cols());
    std::vector<PieceRange> ranges;
    for (const Slot& s : f.seq.slots) ranges.push_back(s.range);
    std::vector<int> rows{0};
    for (const PieceRange& r : f.seq.word_to_pieces) rows.push_back(r.begin);
    const ad::Var H_ctx = ad::gather_rows(f.decoded, rows);
    if (ranges.empty()) {
      f.slot_h = f.fused = tape.constant(Matrix::Zero(0, d));
      f.start_logits = f.end_logits = tape.constant(Matrix::Zero(0, static_cast<Eigen::Index>(rows.size())));
      return f;
    }
    const Matrix M = averaging_matrix(ranges, l);
    const Matrix Mt = averaging_matrix({f.seq.trigger}, l);
    f.slot_h = ad::lmul(M, f.decoded);
    ad::Var pre = ad::matmul(f.slot_h, param(tape, "prompt.fuse.w_h"));
    if (cfg_.use_cca || cfg_.use_rlig) {
      const ad::Var abar = head_mean(f.enc.attention);
      const ad::Var slot_rows = ad::lmul(M, abar);
      const ad::Var trig_row = ad::lmul(Mt, abar);
      if (cfg_.use_cca) {
        const std::vector<int> ctx = f.seq.context_positions();
        Aggregated a = aggregate_profiles(ad::gather_cols(slot_rows, ctx), ad::gather_cols(trig_row, ctx),
                                          ad::gather_rows(f.enc.hidden, ctx));
        f.clue_p = a.p;
        pre = ad::add(pre, ad::matmul(a.value, param(tape, "cca.fuse.w_c")));
      }
      if (cfg_.use_rlig) {
        const std::vector<int> rp = f.seq.role_positions();
        Aggregated a = aggregate_profiles(ad::gather_cols(slot_rows, rp), ad::gather_cols(trig_row, rp),
                                          ad::gather_rows(f.enc.hidden, rp));
        f.role_p = a.p;
        pre = ad::add(pre, ad::matmul(a.value, param(tape, "rlig.fuse.w_r")));
      }
    }
    f.fused = ad::tanh(pre);
    f.start_logits = ad::matmul_nt(ad::mul_row(f.fused, param(tape, "prompt.w_start")), H_ctx);
    f.end_logits = ad::matmul_nt(ad::mul_row(f.fused, param(tape, "prompt.w_end")), H_ctx);
    return f;
  }

  ad::Var loss(ad::Tape& tape, const EventInstance& inst, const ForwardMode& mode) const override {
    const CroppedInstance c = crop_to_window(inst, cfg_.context_window);
    stats_.dropped_golds += static_cast<long>(inst.args.size() - c.inst.args.size());
    PromptForward f = forward(tape, c.inst, mode);
    if (f.seq.slots.empty()) {
      stats_.dropped_golds += static_cast<long>(c.inst.args.size());
      return tape.constant(Matrix::Zero(1, 1));
    }
    const std::vector<SlotLogits> slots = slot_logits(f);
    const MatchResult m = match_slots(slots, golds_by_role(c.inst));
    stats_.dropped_golds += m.dropped;
    return ad::add(ad::cross_entropy_rows(f.start_logits, m.start_target),
                   ad::cross_entropy_rows(f.end_logits, m.end_target));
  }

  EventPrediction predict(const EventInstance& inst) const override {
    const CroppedInstance c = crop_to_window(inst, cfg_.context_window);
    ad::Tape tape;
    PromptForward f = forward(tape, c.inst);
    EventPrediction out{inst.doc_id, inst.event_type, inst.trigger, {}};
    for (const SlotLogits& s : slot_logits(f)) {
      const SpanPrediction p = select_span(s.start, s.end, cfg_.max_span_length);
      if (!p.empty) out.predictions.push_back({s.role, p.start + c.offset, p.end + c.offset, p.score});
    }
    return out;
  }

  static std::vector<SlotLogits> slot_logits(const PromptForward& f) {
    std::vector<SlotLogits> out;
    for (std::size_t k = 0; k < f.seq.slots.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      out.push_back({f.seq.slots[k].role, f.start_logits.value().row(r), f.end_logits.value().row(r)});
    }
    return out;
  }

 private:
  ad::Var param(ad::Tape& tape, const std::string& name) const { return tape.param(store_.at(name)); }

  PromptModelConfig cfg_;
  const LabelSpace& labels_;
  const TemplateRegistry& templates_;
  const Tokenizer& tok_;
  const EncoderBackend& backend_;
  ParameterStore& store_;
};

}  // namespace carlg
