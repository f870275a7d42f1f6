// Marked input sequences for the span and prompt extractors.
//
// Span layout (role block after the context):
//   [CLS] [E] type [E] [SEP] w1 .. * t .. * .. wN [SEP] [R0] r0 [R0] [R1] r1 [R1] .. [SEP]
// Prompt layout (role block prepended):
//   [CLS] [R0] r0 [R0] .. [SEP] w1 .. * t * .. wN [SEP] prompt [SEP]
// The separator that closes the role block stands for the "none" role. A
// role's representative position is the first marker of its wrapping pair.

#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carlg/dataset.hpp"
#include "carlg/errors.hpp"
#include "carlg/tokenizer.hpp"

namespace carlg {

enum class RoleBlock { kNone, kBeforeContext, kAfterContext };

struct RoleToken {
  std::string role;
  int piece = 0;
  friend bool operator==(const RoleToken&, const RoleToken&) = default;
};

struct Slot {
  std::string role;
  int piece = 0;      // first piece of the slot
  PieceRange range;   // all pieces of the slot
  friend bool operator==(const Slot&, const Slot&) = default;
};

struct MarkedSequence {
  std::vector<int> pieces;
  PieceRange context;                 // covers w1 .. wN including trigger markers
  PieceRange trigger;                 // pieces of the trigger words
  std::vector<RoleToken> role_tokens; // inventory order
  int none_index = -1;
  std::vector<Slot> slots;            // prompt variant only, in order of appearance
  std::optional<int> event_marker_index;
  std::vector<PieceRange> word_to_pieces;
  std::vector<int> piece_to_word;     // -1 outside the context

  int length() const { return static_cast<int>(pieces.size()); }

  // Role-token positions followed by the none position: the l_r columns.
  std::vector<int> role_positions() const {
    std::vector<int> out;
    for (const RoleToken& r : role_tokens) out.push_back(r.piece);
    if (none_index >= 0) out.push_back(none_index);
    return out;
  }

  std::map<std::string, int> role_token_index() const {
    std::map<std::string, int> out;
    for (const RoleToken& r : role_tokens) out[r.role] = r.piece;
    return out;
  }

  std::vector<int> context_positions() const {
    std::vector<int> out;
    for (int p = context.begin; p < context.end; ++p) out.push_back(p);
    return out;
  }

  // Contiguous pieces of words [start, end].
  PieceRange span_pieces(WordSpan span) const {
    return {word_to_pieces.at(static_cast<std::size_t>(span.start)).begin,
            word_to_pieces.at(static_cast<std::size_t>(span.end)).end};
  }

  friend bool operator==(const MarkedSequence&, const MarkedSequence&) = default;
};

struct PromptTemplate {
  std::string event_type;
  std::string text;
  std::vector<std::string> slots;  // role names in order of appearance

  // Words of the filled prompt; slot words are the role names themselves.
  struct Word {
    std::string text;
    bool is_slot = false;
  };
  std::vector<Word> words;
};

// Parses "<killer> killed <victim> at <place>" (also accepts U+27E8/U+27E9).
inline PromptTemplate parse_template(const std::string& event_type, const std::string& text) {
  static const std::string kOpenU = "\xE2\x9F\xA8";   // ⟨
  static const std::string kCloseU = "\xE2\x9F\xA9";  // ⟩
  PromptTemplate t;
  t.event_type = event_type;
  t.text = text;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) t.words.push_back({word, false});
    word.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const bool ascii_open = text[i] == '<';
    const bool utf_open = text.compare(i, kOpenU.size(), kOpenU) == 0;
    if (ascii_open || utf_open) {
      flush();
      const std::string& close = ascii_open ? std::string(">") : kCloseU;
      const std::size_t body = i + (ascii_open ? 1 : kOpenU.size());
      const std::size_t stop = text.find(close, body);
      if (stop == std::string::npos) throw DataError("unterminated slot in template for " + event_type);
      const std::string role = text.substr(body, stop - body);
      if (role.empty()) throw DataError("empty slot in template for " + event_type);
      t.words.push_back({role, true});
      t.slots.push_back(role);
      i = stop + close.size();
    } else if (std::isspace(static_cast<unsigned char>(text[i]))) {
      flush();
      ++i;
    } else if (text[i] == '.' || text[i] == ',') {
      flush();
      t.words.push_back({std::string(1, text[i]), false});
      ++i;
    } else {
      word += text[i++];
    }
  }
  flush();
  return t;
}

inline PromptTemplate fallback_template(const std::string& event_type, const std::vector<std::string>& roles) {
  std::string text;
  for (const std::string& r : roles) text += (text.empty() ? "<" : " <") + r + ">";
  return parse_template(event_type, text);
}

using TemplateRegistry = std::map<std::string, PromptTemplate>;

// Registry from a JSON object {event_type: template}. Event types of the label
// space without an entry receive a fallback listing every role as a slot.
inline TemplateRegistry make_template_registry(const std::string& json_text, const LabelSpace& labels) {
  std::map<std::string, int> key_counts;
  nlohmann::json::parser_callback_t cb = [&](int d, nlohmann::json::parse_event_t ev, nlohmann::json& parsed) {
    if (ev == nlohmann::json::parse_event_t::key && d == 1) ++key_counts[parsed.get<std::string>()];
    return true;
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text, cb);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("template registry: ") + e.what());
  }
  for (const auto& [key, n] : key_counts) {
    if (n > 1) throw DataError("template registry: duplicate entry for event type '" + key + "'");
  }
  if (!j.is_object()) throw DataError("template registry must be a JSON object");
  TemplateRegistry reg;
  for (const auto& [event_type, text] : j.items()) {
    PromptTemplate t = parse_template(event_type, text.get<std::string>());
    auto inv = labels.inventories.find(event_type);
    if (inv != labels.inventories.end()) {
      for (const std::string& s : t.slots) {
        if (std::find(inv->second.begin(), inv->second.end(), s) == inv->second.end()) {
          throw DataError("template for '" + event_type + "' uses role '" + s + "' outside its inventory");
        }
      }
    }
    reg.emplace(event_type, std::move(t));
  }
  for (const auto& [event_type, roles] : labels.inventories) {
    if (reg.count(event_type) == 0) reg.emplace(event_type, fallback_template(event_type, roles));
  }
  return reg;
}

inline TemplateRegistry load_template_registry(const std::string& path, const LabelSpace& labels) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open template registry " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return make_template_registry(ss.str(), labels);
}

inline TemplateRegistry fallback_registry(const LabelSpace& labels) {
  return make_template_registry("{}", labels);
}

namespace detail {

class SequenceWriter {
 public:
  explicit SequenceWriter(const Tokenizer& tok) : tok_(tok) {}

  int special(const char* name) {
    seq.pieces.push_back(tok_.special_token_id(name));
    seq.piece_to_word.push_back(-1);
    return seq.length() - 1;
  }

  PieceRange words(const std::vector<std::string>& ws) {
    const int begin = seq.length();
    for (int id : tok_.encode(ws).pieces) {
      seq.pieces.push_back(id);
      seq.piece_to_word.push_back(-1);
    }
    return {begin, seq.length()};
  }

  void role_block(const std::vector<std::string>& roles) {
    for (const std::string& r : roles) {
      const int marker = tok_.role_marker_id(r);
      seq.pieces.push_back(marker);
      seq.piece_to_word.push_back(-1);
      seq.role_tokens.push_back({r, seq.length() - 1});
      words({r});
      seq.pieces.push_back(marker);
      seq.piece_to_word.push_back(-1);
    }
    seq.none_index = special(kSepToken);
  }

  // Document words with trigger markers around the trigger span. Markers are
  // attributed to the trigger's boundary words.
  void context(const EventInstance& inst) {
    const TokenizedWords tw = tok_.encode(inst.words);
    seq.context.begin = seq.length();
    seq.word_to_pieces.resize(inst.words.size());
    const int star = tok_.special_token_id(kTriggerMarker);
    for (std::size_t w = 0; w < inst.words.size(); ++w) {
      const int wi = static_cast<int>(w);
      if (wi == inst.trigger.start) {
        seq.pieces.push_back(star);
        seq.piece_to_word.push_back(wi);
        seq.trigger.begin = seq.length();
      }
      const PieceRange r = tw.words[w];
      const int begin = seq.length();
      for (int p = r.begin; p < r.end; ++p) {
        seq.pieces.push_back(tw.pieces[static_cast<std::size_t>(p)]);
        seq.piece_to_word.push_back(wi);
      }
      seq.word_to_pieces[w] = {begin, seq.length()};
      if (wi == inst.trigger.end) {
        seq.trigger.end = seq.length();
        seq.pieces.push_back(star);
        seq.piece_to_word.push_back(wi);
      }
    }
    seq.context.end = seq.length();
    for (const PieceRange& r : seq.word_to_pieces) {
      if (r.empty()) throw DataError("document word produced no pieces in " + inst.doc_id);
    }
  }

  MarkedSequence seq;

 private:
  const Tokenizer& tok_;
};

inline void check_instance(const EventInstance& inst, const LabelSpace* labels) {
  validate(inst);
  if (labels != nullptr) labels->inventory(inst.event_type);
}

}  // namespace detail

// Span extractor input. `labels`, when given, rejects unknown event types.
inline MarkedSequence build_span_input(const EventInstance& inst, const Tokenizer& tok,
                                       RoleBlock block = RoleBlock::kAfterContext,
                                       const LabelSpace* labels = nullptr) {
  detail::check_instance(inst, labels);
  detail::SequenceWriter w(tok);
  w.special(kClsToken);
  w.seq.event_marker_index = w.special(kEventMarker);
  w.words({inst.event_type});
  w.special(kEventMarker);
  w.special(kSepToken);
  if (block == RoleBlock::kBeforeContext) w.role_block(inst.roles);
  w.context(inst);
  w.special(kSepToken);
  if (block == RoleBlock::kAfterContext) w.role_block(inst.roles);
  return std::move(w.seq);
}

inline MarkedSequence build_prompt_input(const EventInstance& inst, const PromptTemplate& tmpl,
                                         const Tokenizer& tok, RoleBlock block = RoleBlock::kBeforeContext,
                                         const LabelSpace* labels = nullptr) {
  detail::check_instance(inst, labels);
  if (tmpl.event_type != inst.event_type) {
    throw DataError("template for '" + tmpl.event_type + "' used on event '" + inst.event_type + "'");
  }
  for (const std::string& s : tmpl.slots) {
    if (std::find(inst.roles.begin(), inst.roles.end(), s) == inst.roles.end()) {
      throw DataError("slot role '" + s + "' absent from role inventory of '" + inst.event_type + "'");
    }
  }
  detail::SequenceWriter w(tok);
  w.special(kClsToken);
  if (block == RoleBlock::kBeforeContext) w.role_block(inst.roles);
  w.context(inst);
  w.special(kSepToken);
  for (const PromptTemplate::Word& word : tmpl.words) {
    const PieceRange r = w.words({word.text});
    if (word.is_slot) w.seq.slots.push_back({word.text, r.begin, r});
  }
  w.special(kSepToken);
  if (block == RoleBlock::kAfterContext) w.role_block(inst.roles);
  return std::move(w.seq);
}

inline MarkedSequence build_prompt_input(const EventInstance& inst, const TemplateRegistry& registry,
                                         const Tokenizer& tok, RoleBlock block = RoleBlock::kBeforeContext,
                                         const LabelSpace* labels = nullptr) {
  auto it = registry.find(inst.event_type);
  if (it == registry.end()) throw DataError("no prompt template for event type '" + inst.event_type + "'");
  return build_prompt_input(inst, it->second, tok, block, labels);
}

// Every word of the corpus, role names, event types and template words; the
// vocabulary a SubwordTokenizer needs to cover a dataset.
inline std::vector<std::string> vocabulary_words(const std::vector<EventInstance>& data,
                                                 const TemplateRegistry* templates = nullptr) {
  std::vector<std::string> out;
  for (const EventInstance& inst : data) {
    out.insert(out.end(), inst.words.begin(), inst.words.end());
    out.insert(out.end(), inst.roles.begin(), inst.roles.end());
    out.push_back(inst.event_type);
  }
  if (templates != nullptr) {
    for (const auto& [_, t] : *templates) {
      for (const auto& w : t.words) out.push_back(w.text);
    }
  }
  return out;
}

}  // namespace carlg
