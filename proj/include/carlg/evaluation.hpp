// Argument metrics, error taxonomy and role co-occurrence.

#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "carlg/autodiff.hpp"
#include "carlg/dataset.hpp"

namespace carlg {

struct Prediction {
  std::string role;
  int start = 0;
  int end = 0;
  double score = 0.0;

  WordSpan span() const { return {start, end}; }
};

// Predictions for one event instance.
struct EventPrediction {
  std::string doc_id;
  std::string event_type;
  WordSpan trigger;
  std::vector<Prediction> predictions;
};

inline nlohmann::json to_json(const EventPrediction& ep) {
  nlohmann::json preds = nlohmann::json::array();
  for (const Prediction& p : ep.predictions) {
    preds.push_back({{"role", p.role}, {"start", p.start}, {"end", p.end}, {"score", p.score}});
  }
  return {{"doc_id", ep.doc_id},
          {"event_type", ep.event_type},
          {"trigger", {ep.trigger.start, ep.trigger.end}},
          {"predictions", preds}};
}

inline EventPrediction event_prediction_from_json(const nlohmann::json& j) {
  EventPrediction ep;
  ep.doc_id = j.at("doc_id").get<std::string>();
  ep.event_type = j.at("event_type").get<std::string>();
  ep.trigger = {j.at("trigger")[0].get<int>(), j.at("trigger")[1].get<int>()};
  for (const auto& p : j.at("predictions")) {
    ep.predictions.push_back({p.at("role").get<std::string>(), p.at("start").get<int>(), p.at("end").get<int>(),
                              p.value("score", 0.0)});
  }
  return ep;
}

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0;
  int n_pred = 0;
  int n_gold = 0;
};

inline PRF make_prf(int tp, int n_pred, int n_gold) {
  PRF r{0.0, 0.0, 0.0, tp, n_pred, n_gold};
  if (n_pred > 0) r.precision = static_cast<double>(tp) / n_pred;
  if (n_gold > 0) r.recall = static_cast<double>(tp) / n_gold;
  if (tp > 0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

inline nlohmann::json to_json(const PRF& r) {
  return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
          {"tp", r.tp}, {"pred", r.n_pred}, {"gold", r.n_gold}};
}

enum class MatchMode { kIdentification, kClassification };

using HeadFn = std::function<int(WordSpan)>;

inline int last_word_head(WordSpan s) { return s.end; }
inline int first_word_head(WordSpan s) { return s.start; }

// Keeps the highest-scoring copy of each (role, span).
inline std::vector<Prediction> dedupe(const std::vector<Prediction>& preds) {
  std::map<std::tuple<std::string, int, int>, std::size_t> seen;
  std::vector<Prediction> out;
  for (const Prediction& p : preds) {
    auto [it, inserted] = seen.emplace(std::make_tuple(p.role, p.start, p.end), out.size());
    if (inserted) {
      out.push_back(p);
    } else if (p.score > out[it->second].score) {
      out[it->second].score = p.score;
    }
  }
  return out;
}

namespace detail {

// Greedy multiset matching, highest score first. Returns, per deduplicated
// prediction, whether it was matched to a distinct gold.
template <typename KeyFn>
std::vector<bool> match_event(const std::vector<Prediction>& preds, const std::vector<Argument>& golds, KeyFn key_pred,
                              KeyFn key_gold) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::vector<bool> used(golds.size(), false);
  std::vector<bool> hit(preds.size(), false);
  for (std::size_t i : order) {
    const auto k = key_pred(preds[i].role, preds[i].span());
    for (std::size_t g = 0; g < golds.size(); ++g) {
      if (!used[g] && key_gold(golds[g].role, golds[g].span()) == k) {
        used[g] = hit[i] = true;
        break;
      }
    }
  }
  return hit;
}

inline PRF score_events(const std::vector<std::vector<Prediction>>& preds, const std::vector<std::vector<Argument>>& golds,
                        const std::function<std::pair<int, int>(WordSpan)>& span_key, MatchMode mode) {
  if (preds.size() != golds.size()) throw std::invalid_argument("prediction and gold event counts differ");
  int tp = 0, np = 0, ng = 0;
  using Key = std::tuple<std::string, int, int>;
  std::function<Key(const std::string&, WordSpan)> key = [&](const std::string& role, WordSpan s) {
    const auto [a, b] = span_key(s);
    return Key{mode == MatchMode::kClassification ? role : std::string(), a, b};
  };
  for (std::size_t e = 0; e < preds.size(); ++e) {
    const std::vector<Prediction> p = dedupe(preds[e]);
    const std::vector<bool> hit = match_event(p, golds[e], key, key);
    tp += static_cast<int>(std::count(hit.begin(), hit.end(), true));
    np += static_cast<int>(p.size());
    ng += static_cast<int>(golds[e].size());
  }
  return make_prf(tp, np, ng);
}

}  // namespace detail

inline PRF span_f1(const std::vector<std::vector<Prediction>>& preds, const std::vector<std::vector<Argument>>& golds,
                   MatchMode mode) {
  return detail::score_events(preds, golds, [](WordSpan s) { return std::make_pair(s.start, s.end); }, mode);
}

inline PRF head_f1(const std::vector<std::vector<Prediction>>& preds, const std::vector<std::vector<Argument>>& golds,
                   const HeadFn& head_fn = last_word_head, MatchMode mode = MatchMode::kClassification) {
  return detail::score_events(preds, golds, [&](WordSpan s) { return std::make_pair(head_fn(s), 0); }, mode);
}

// ---------------------------------------------------------------------------
// Error taxonomy.

enum class ErrorCategory { kCorrect, kWrongSpan, kOverExtract, kPartial, kOverlap, kWrongRole };

inline constexpr std::array<ErrorCategory, 5> kErrorCategories = {
    ErrorCategory::kWrongSpan, ErrorCategory::kOverExtract, ErrorCategory::kPartial, ErrorCategory::kOverlap,
    ErrorCategory::kWrongRole};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kCorrect: return "Correct";
    case ErrorCategory::kWrongSpan: return "Wrong Span";
    case ErrorCategory::kOverExtract: return "Over-extract";
    case ErrorCategory::kPartial: return "Partial";
    case ErrorCategory::kOverlap: return "Overlap";
    case ErrorCategory::kWrongRole: return "Wrong Role";
  }
  return "?";
}

inline ErrorCategory classify_error(const Prediction& pred, const std::vector<Argument>& golds) {
  const WordSpan ps = pred.span();
  bool exact_other_role = false;
  bool role_present = false;
  for (const Argument& g : golds) {
    if (g.span() == ps) {
      if (g.role == pred.role) return ErrorCategory::kCorrect;
      exact_other_role = true;
    }
    if (g.role == pred.role) role_present = true;
  }
  if (exact_other_role) return ErrorCategory::kWrongRole;
  if (!role_present) return ErrorCategory::kOverExtract;
  bool overlap = false;
  for (const Argument& g : golds) {
    if (g.role != pred.role) continue;
    if (ps.start >= g.start && ps.end <= g.end) return ErrorCategory::kPartial;
    if (ps.start <= g.end && g.start <= ps.end) overlap = true;
  }
  return overlap ? ErrorCategory::kOverlap : ErrorCategory::kWrongSpan;
}

struct ErrorReport {
  std::map<ErrorCategory, int> counts;
  int total = 0;

  int count(ErrorCategory c) const {
    auto it = counts.find(c);
    return it == counts.end() ? 0 : it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (ErrorCategory c : kErrorCategories) j[to_string(c)] = count(c);
    j["total"] = total;
    return j;
  }
};

// Classifies every prediction that is not a classification true positive.
inline ErrorReport error_report(const std::vector<std::vector<Prediction>>& preds,
                                const std::vector<std::vector<Argument>>& golds) {
  if (preds.size() != golds.size()) throw std::invalid_argument("prediction and gold event counts differ");
  ErrorReport rep;
  for (ErrorCategory c : kErrorCategories) rep.counts[c] = 0;
  using Key = std::tuple<std::string, int, int>;
  auto key = [](const std::string& role, WordSpan s) { return Key{role, s.start, s.end}; };
  for (std::size_t e = 0; e < preds.size(); ++e) {
    const std::vector<Prediction> p = dedupe(preds[e]);
    const std::vector<bool> hit = detail::match_event(p, golds[e], std::function<Key(const std::string&, WordSpan)>(key),
                                                      std::function<Key(const std::string&, WordSpan)>(key));
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (hit[i]) continue;
      ErrorCategory c = classify_error(p[i], golds[e]);
      if (c == ErrorCategory::kCorrect) c = ErrorCategory::kWrongSpan;  // unreachable after dedupe
      ++rep.counts[c];
      ++rep.total;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Aggregate report over a dataset.

struct MetricsReport {
  PRF arg_i;
  PRF arg_c;
  PRF head_i;
  PRF head_c;
  int events = 0;

  nlohmann::json to_json() const {
    return {{"events", events},
            {"arg_i", carlg::to_json(arg_i)},
            {"arg_c", carlg::to_json(arg_c)},
            {"head_i", carlg::to_json(head_i)},
            {"head_c", carlg::to_json(head_c)}};
  }

  std::string table() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "metric      P       R       F1\n";
    auto row = [&](const char* name, const PRF& r) {
      os << name << "  " << r.precision << "  " << r.recall << "  " << r.f1 << '\n';
    };
    row("arg_i  ", arg_i);
    row("arg_c  ", arg_c);
    row("head_i ", head_i);
    row("head_c ", head_c);
    return os.str();
  }
};

inline MetricsReport compute_metrics(const std::vector<std::vector<Prediction>>& preds,
                                     const std::vector<std::vector<Argument>>& golds, const HeadFn& head_fn = last_word_head) {
  MetricsReport r;
  r.events = static_cast<int>(golds.size());
  r.arg_i = span_f1(preds, golds, MatchMode::kIdentification);
  r.arg_c = span_f1(preds, golds, MatchMode::kClassification);
  r.head_i = head_f1(preds, golds, head_fn, MatchMode::kIdentification);
  r.head_c = head_f1(preds, golds, head_fn, MatchMode::kClassification);
  return r;
}

// ---------------------------------------------------------------------------
// Role co-occurrence: M[a][b] = co(a, b) / (tot(a) + tot(b)), counted per
// event over roles filled by at least one gold argument. Diagonal is zero.

struct CooccurrenceMatrix {
  std::vector<std::string> roles;
  Matrix values;

  std::string csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "role";
    for (const std::string& r : roles) os << ',' << r;
    os << '\n';
    for (std::size_t a = 0; a < roles.size(); ++a) {
      os << roles[a];
      for (std::size_t b = 0; b < roles.size(); ++b) {
        os << ',' << values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      }
      os << '\n';
    }
    return os.str();
  }
};

inline CooccurrenceMatrix role_cooccurrence(const std::vector<EventInstance>& data) {
  std::set<std::string> all;
  for (const EventInstance& inst : data) all.insert(inst.roles.begin(), inst.roles.end());
  CooccurrenceMatrix m{{all.begin(), all.end()}, {}};
  const auto n = static_cast<Eigen::Index>(m.roles.size());
  Matrix co = Matrix::Zero(n, n);
  Vector tot = Vector::Zero(n);
  auto id = [&](const std::string& r) {
    return static_cast<Eigen::Index>(std::lower_bound(m.roles.begin(), m.roles.end(), r) - m.roles.begin());
  };
  for (const EventInstance& inst : data) {
    std::set<Eigen::Index> filled;
    for (const Argument& a : inst.args) filled.insert(id(a.role));
    for (Eigen::Index a : filled) {
      tot(a) += 1.0;
      for (Eigen::Index b : filled) {
        if (a != b) co(a, b) += 1.0;
      }
    }
  }
  m.values = Matrix::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a != b && tot(a) + tot(b) > 0) m.values(a, b) = co(a, b) / (tot(a) + tot(b));
    }
  }
  return m;
}

}  // namespace carlg
