// Event instances and the JSONL dataset format.
//
// One record per event:
//   {"doc_id": "...", "words": [...], "event_type": "...", "trigger": [s, e],
//    "roles": [...], "args": [{"role": "...", "start": s, "end": e}, ...]}
// Word indices are inclusive. Documents with several events appear as several
// records.

#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carlg/errors.hpp"

namespace carlg {

struct WordSpan {
  int start = 0;
  int end = 0;  // inclusive

  int length() const { return end - start + 1; }
  bool contains(int w) const { return w >= start && w <= end; }
  friend bool operator==(const WordSpan&, const WordSpan&) = default;
  friend auto operator<=>(const WordSpan&, const WordSpan&) = default;
};

struct Argument {
  std::string role;
  int start = 0;
  int end = 0;

  WordSpan span() const { return {start, end}; }
  friend bool operator==(const Argument&, const Argument&) = default;
  friend auto operator<=>(const Argument&, const Argument&) = default;
};

struct EventInstance {
  std::string doc_id;
  std::vector<std::string> words;
  std::string event_type;
  WordSpan trigger;
  std::vector<std::string> roles;  // inventory of the event type, in order
  std::vector<Argument> args;

  friend bool operator==(const EventInstance&, const EventInstance&) = default;
};

// Throws DataError describing the first violated invariant.
inline void validate(const EventInstance& inst) {
  const int n = static_cast<int>(inst.words.size());
  auto fail = [&](const std::string& what) {
    throw DataError("instance '" + inst.doc_id + "': " + what);
  };
  if (n == 0) fail("empty document");
  if (inst.event_type.empty()) fail("missing event type");
  if (inst.trigger.start < 0 || inst.trigger.start > inst.trigger.end || inst.trigger.end >= n) {
    fail("trigger span outside document");
  }
  std::set<std::string> seen;
  for (const std::string& r : inst.roles) {
    if (r.empty()) fail("empty role name");
    if (!seen.insert(r).second) fail("duplicate role '" + r + "' in inventory");
  }
  for (const Argument& a : inst.args) {
    if (a.start < 0 || a.start > a.end || a.end >= n) fail("argument span outside document");
    if (seen.count(a.role) == 0) fail("argument role '" + a.role + "' not in role inventory");
  }
}

inline nlohmann::json to_json(const EventInstance& inst) {
  nlohmann::json args = nlohmann::json::array();
  for (const Argument& a : inst.args) {
    args.push_back({{"role", a.role}, {"start", a.start}, {"end", a.end}});
  }
  return {{"doc_id", inst.doc_id},
          {"words", inst.words},
          {"event_type", inst.event_type},
          {"trigger", {inst.trigger.start, inst.trigger.end}},
          {"roles", inst.roles},
          {"args", args}};
}

inline EventInstance instance_from_json(const nlohmann::json& j) {
  EventInstance inst;
  inst.doc_id = j.at("doc_id").get<std::string>();
  inst.words = j.at("words").get<std::vector<std::string>>();
  inst.event_type = j.at("event_type").get<std::string>();
  const auto& trig = j.at("trigger");
  if (!trig.is_array() || trig.size() != 2) throw DataError("trigger must be [start, end]");
  inst.trigger = {trig[0].get<int>(), trig[1].get<int>()};
  inst.roles = j.at("roles").get<std::vector<std::string>>();
  for (const auto& a : j.at("args")) {
    inst.args.push_back({a.at("role").get<std::string>(), a.at("start").get<int>(), a.at("end").get<int>()});
  }
  return inst;
}

inline std::vector<EventInstance> parse_dataset(std::istream& in, const std::string& source = "<stream>") {
  std::vector<EventInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    try {
      EventInstance inst = instance_from_json(nlohmann::json::parse(line));
      validate(inst);
      out.push_back(std::move(inst));
    } catch (const std::exception& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<EventInstance> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path);
  return parse_dataset(in, path);
}

inline void write_dataset(std::ostream& out, const std::vector<EventInstance>& data) {
  for (const EventInstance& inst : data) out << to_json(inst).dump() << '\n';
}

inline void save_dataset(const std::string& path, const std::vector<EventInstance>& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset " + path);
  write_dataset(out, data);
}

// Event type -> role inventory, and the sorted global role set.
struct LabelSpace {
  std::map<std::string, std::vector<std::string>> inventories;
  std::vector<std::string> roles;  // sorted, unique

  int role_id(const std::string& role) const {
    auto it = std::lower_bound(roles.begin(), roles.end(), role);
    if (it == roles.end() || *it != role) throw DataError("unknown role '" + role + "'");
    return static_cast<int>(it - roles.begin());
  }

  const std::vector<std::string>& inventory(const std::string& event_type) const {
    auto it = inventories.find(event_type);
    if (it == inventories.end()) throw DataError("unknown event type '" + event_type + "'");
    return it->second;
  }

  static LabelSpace from(const std::vector<EventInstance>& data) {
    LabelSpace ls;
    std::set<std::string> roles;
    for (const EventInstance& inst : data) {
      auto [it, inserted] = ls.inventories.emplace(inst.event_type, inst.roles);
      if (!inserted && it->second != inst.roles) {
        throw DataError("event type '" + inst.event_type + "' has inconsistent role inventories");
      }
      roles.insert(inst.roles.begin(), inst.roles.end());
    }
    ls.roles.assign(roles.begin(), roles.end());
    return ls;
  }
};

}  // namespace carlg
