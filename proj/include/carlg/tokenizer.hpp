// Subword tokenization.
//
// Sequence construction only depends on the abstract Tokenizer; the bundled
// SubwordTokenizer splits words into fixed-width character chunks
// ("attacker" -> "attac", "##ker") over a vocabulary fitted on a corpus.
// Role markers are one special token per role type, appended after the base
// vocabulary in sorted role-name order so their ids are reproducible.

#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carlg/errors.hpp"

namespace carlg {

inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kClsToken = "[CLS]";
inline constexpr const char* kSepToken = "[SEP]";
inline constexpr const char* kEventMarker = "[E]";
inline constexpr const char* kTriggerMarker = "*";

inline std::string role_marker_name(const std::string& role) { return "[R:" + role + "]"; }

struct PieceRange {
  int begin = 0;  // first piece
  int end = 0;    // one past the last piece

  int size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  friend bool operator==(const PieceRange&, const PieceRange&) = default;
};

struct TokenizedWords {
  std::vector<int> pieces;
  std::vector<PieceRange> words;  // relative to `pieces`
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual TokenizedWords encode(std::span<const std::string> words) const = 0;
  // Throws DataError when the name is not a registered special token.
  virtual int special_token_id(const std::string& name) const = 0;
  virtual std::string piece(int id) const = 0;
  virtual int vocab_size() const = 0;

  // Ids in [base_vocab_size(), vocab_size()) are role markers.
  virtual int base_vocab_size() const = 0;
  virtual std::vector<std::string> marker_roles() const = 0;

  int role_marker_id(const std::string& role) const { return special_token_id(role_marker_name(role)); }

  // Joins pieces back into surface words ("##" continues the previous word).
  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
      const std::string p = piece(id);
      if (p.rfind("##", 0) == 0) {
        out += p.substr(2);
      } else {
        if (!out.empty()) out += ' ';
        out += p;
      }
    }
    return out;
  }
};

class SubwordTokenizer final : public Tokenizer {
 public:
  static constexpr int kDefaultPieceChars = 6;

  SubwordTokenizer() : SubwordTokenizer(std::vector<std::string>{}, {}) {}

  SubwordTokenizer(const std::vector<std::string>& corpus_words, const std::vector<std::string>& roles,
                   int max_piece_chars = kDefaultPieceChars)
      : max_piece_chars_(max_piece_chars) {
    if (max_piece_chars_ < 1) throw DataError("max_piece_chars must be positive");
    for (const char* s : {kPadToken, kUnkToken, kClsToken, kSepToken, kEventMarker, kTriggerMarker}) {
      intern(s);
    }
    std::set<std::string> pieces;
    for (const std::string& w : corpus_words) {
      for (std::string& p : split(w)) pieces.insert(std::move(p));
    }
    for (const std::string& p : pieces) intern(p);
    base_size_ = static_cast<int>(pieces_.size());
    std::set<std::string> sorted_roles(roles.begin(), roles.end());
    roles_.assign(sorted_roles.begin(), sorted_roles.end());
    for (const std::string& r : roles_) intern(role_marker_name(r));
  }

  TokenizedWords encode(std::span<const std::string> words) const override {
    TokenizedWords out;
    const int unk = ids_.at(kUnkToken);
    for (const std::string& w : words) {
      PieceRange range{static_cast<int>(out.pieces.size()), 0};
      for (const std::string& p : split(w)) {
        auto it = ids_.find(p);
        out.pieces.push_back(it == ids_.end() ? unk : it->second);
      }
      range.end = static_cast<int>(out.pieces.size());
      out.words.push_back(range);
    }
    return out;
  }

  int special_token_id(const std::string& name) const override {
    auto it = ids_.find(name);
    const bool special = it != ids_.end() && (it->second < kNumBaseSpecials || it->second >= base_size_);
    if (!special) throw DataError("unknown special token '" + name + "'");
    return it->second;
  }

  std::string piece(int id) const override {
    if (id < 0 || id >= static_cast<int>(pieces_.size())) return kUnkToken;
    return pieces_[static_cast<std::size_t>(id)];
  }

  int vocab_size() const override { return static_cast<int>(pieces_.size()); }
  int base_vocab_size() const override { return base_size_; }
  std::vector<std::string> marker_roles() const override { return roles_; }
  int max_piece_chars() const { return max_piece_chars_; }

  // Splits one word into chunks of at most max_piece_chars characters.
  std::vector<std::string> split(const std::string& word) const {
    std::vector<std::string> out;
    if (word.empty()) return out;
    const std::size_t w = static_cast<std::size_t>(max_piece_chars_);
    for (std::size_t at = 0; at < word.size(); at += w) {
      std::string chunk = word.substr(at, w);
      out.push_back(at == 0 ? chunk : "##" + chunk);
    }
    return out;
  }

  nlohmann::json to_json() const {
    std::vector<std::string> base(pieces_.begin(), pieces_.begin() + base_size_);
    return {{"max_piece_chars", max_piece_chars_}, {"pieces", base}, {"roles", roles_}};
  }

  static SubwordTokenizer from_json(const nlohmann::json& j) {
    SubwordTokenizer t;
    t.pieces_.clear();
    t.ids_.clear();
    t.max_piece_chars_ = j.at("max_piece_chars").get<int>();
    for (const std::string& p : j.at("pieces").get<std::vector<std::string>>()) t.intern(p);
    t.base_size_ = static_cast<int>(t.pieces_.size());
    t.roles_ = j.at("roles").get<std::vector<std::string>>();
    for (const std::string& r : t.roles_) t.intern(role_marker_name(r));
    return t;
  }

 private:
  static constexpr int kNumBaseSpecials = 6;

  void intern(const std::string& p) {
    if (ids_.count(p) != 0) return;
    ids_[p] = static_cast<int>(pieces_.size());
    pieces_.push_back(p);
  }

  int max_piece_chars_ = kDefaultPieceChars;
  std::vector<std::string> pieces_;
  std::map<std::string, int> ids_;
  std::vector<std::string> roles_;
  int base_size_ = 0;
};

}  // namespace carlg
