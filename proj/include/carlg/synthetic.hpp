// Synthetic corpus with planted clues.
//
// Every event type has a trigger word and a fixed role inventory drawn from a
// global role pool. Each role has a clue word. An argument is one entity
// name (odd-numbered entities have two-word names) preceded by a clue word,
// optionally with one filler in between. With probability clue_strength the
// clue is the argument role's own, otherwise that of a random role. One
// distractor entity without a clue appears in every document.
//
// Role fills are stratified: for event type e and inventory position k,
// exactly round(prior_k * n_e) events fill the role. Which events do is
// decided by ranking a latent score coupling * z_event + (1 - coupling) *
// noise, so a positive coupling makes roles co-occur.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "carlg/dataset.hpp"
#include "carlg/errors.hpp"

namespace carlg {

struct SynthConfig {
  std::uint64_t seed = 1;
  int n_docs = 200;
  int vocab = 80;           // distinct words: triggers + clues + entities + fillers
  int n_event_types = 3;
  int n_roles = 6;          // global role pool
  int roles_per_event = 3;
  int n_entities = 12;
  double clue_strength = 1.0;
  double coupling = 0.5;
  int doc_length = 18;      // minimum words per document
  double clue_gap_prob = 0.0;  // chance of one filler between clue and argument
  std::vector<double> fill_priors = {0.9, 0.7, 0.5};  // by inventory position, last value repeats

  double prior(int k) const {
    if (fill_priors.empty()) return 0.5;
    return fill_priors[static_cast<std::size_t>(std::min<int>(k, static_cast<int>(fill_priors.size()) - 1))];
  }

  int entity_words() const { return n_entities + n_entities / 2; }
  int reserved_words() const { return n_event_types + n_roles + entity_words(); }
};

struct SynthSchema {
  std::vector<std::string> event_types;
  std::vector<std::string> triggers;  // one per event type
  std::vector<std::vector<std::string>> inventories;
  std::vector<std::string> roles;
  std::vector<std::string> clues;     // one per global role
  std::vector<std::vector<std::string>> entities;  // entity names, one or two words
  std::vector<std::string> fillers;
};

inline SynthSchema synth_schema(const SynthConfig& c, std::mt19937_64& rng) {
  if (c.n_docs < 0 || c.n_event_types < 1 || c.n_roles < 1 || c.n_entities < 2 || c.roles_per_event < 1) {
    throw DataError("synthetic corpus sizes must be positive");
  }
  if (c.roles_per_event > c.n_roles) throw DataError("roles_per_event exceeds the role pool");
  if (c.vocab < c.reserved_words() + 1) {
    throw DataError("vocabulary of " + std::to_string(c.vocab) + " words cannot hold " +
                    std::to_string(c.reserved_words()) + " marker words plus fillers");
  }
  if (c.clue_strength < 0.0 || c.clue_strength > 1.0) throw DataError("clue_strength must lie in [0, 1]");
  SynthSchema s;
  for (int r = 0; r < c.n_roles; ++r) {
    s.roles.push_back("role" + std::to_string(r));
    s.clues.push_back("c" + std::to_string(r));
  }
  for (int e = 0; e < c.n_event_types; ++e) {
    s.event_types.push_back("ev" + std::to_string(e));
    s.triggers.push_back("t" + std::to_string(e));
    std::vector<int> pool(static_cast<std::size_t>(c.n_roles));
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::string> inv;
    for (int k = 0; k < c.roles_per_event; ++k) inv.push_back(s.roles[static_cast<std::size_t>(pool[static_cast<std::size_t>(k)])]);
    s.inventories.push_back(inv);
  }
  for (int i = 0; i < c.n_entities; ++i) {
    std::vector<std::string> name{"e" + std::to_string(i)};
    if (i % 2 == 1) name.push_back("e" + std::to_string(i) + "b");
    s.entities.push_back(name);
  }
  for (int i = 0; i < c.vocab - c.reserved_words(); ++i) s.fillers.push_back("w" + std::to_string(i));
  return s;
}

inline std::vector<EventInstance> generate_synthetic(const SynthConfig& c) {
  std::mt19937_64 rng(c.seed);
  const SynthSchema s = synth_schema(c, rng);
  auto uniform = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Event types round-robin, then stratified role fills per type.
  std::vector<int> types(static_cast<std::size_t>(c.n_docs));
  for (int i = 0; i < c.n_docs; ++i) types[static_cast<std::size_t>(i)] = i % c.n_event_types;
  std::shuffle(types.begin(), types.end(), rng);
  std::vector<std::vector<bool>> filled(static_cast<std::size_t>(c.n_docs),
                                        std::vector<bool>(static_cast<std::size_t>(c.roles_per_event), false));
  for (int e = 0; e < c.n_event_types; ++e) {
    std::vector<int> docs;
    for (int i = 0; i < c.n_docs; ++i) {
      if (types[static_cast<std::size_t>(i)] == e) docs.push_back(i);
    }
    std::vector<double> z(docs.size());
    for (double& v : z) v = normal(rng);
    for (int k = 0; k < c.roles_per_event; ++k) {
      const auto quota = static_cast<std::size_t>(std::lround(c.prior(k) * static_cast<double>(docs.size())));
      std::vector<std::pair<double, int>> ranked;
      for (std::size_t i = 0; i < docs.size(); ++i) {
        ranked.push_back({c.coupling * z[i] + (1.0 - c.coupling) * normal(rng), docs[i]});
      }
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      for (std::size_t i = 0; i < quota && i < ranked.size(); ++i) {
        filled[static_cast<std::size_t>(ranked[i].second)][static_cast<std::size_t>(k)] = true;
      }
    }
  }

  std::vector<EventInstance> out;
  for (int i = 0; i < c.n_docs; ++i) {
    const int e = types[static_cast<std::size_t>(i)];
    const std::vector<std::string>& inv = s.inventories[static_cast<std::size_t>(e)];
    auto filler = [&] { return s.fillers[static_cast<std::size_t>(uniform(static_cast<int>(s.fillers.size())))]; };

    // Chunks are placed in random order with fillers between them.
    struct Chunk {
      std::vector<std::string> words;
      int role = -1;       // inventory index, -1 for none
      int arg_offset = 0;  // first argument word inside the chunk
      int arg_len = 0;
      bool trigger = false;
    };
    std::vector<Chunk> chunks;
    chunks.push_back({{s.triggers[static_cast<std::size_t>(e)]}, -1, 0, 0, true});
    std::vector<int> shuffled_entities(s.entities.size());
    std::iota(shuffled_entities.begin(), shuffled_entities.end(), 0);
    std::shuffle(shuffled_entities.begin(), shuffled_entities.end(), rng);
    std::size_t next_entity = 0;
    auto next_name = [&] {
      return s.entities[static_cast<std::size_t>(shuffled_entities[next_entity++ % shuffled_entities.size()])];
    };
    for (int k = 0; k < c.roles_per_event; ++k) {
      if (!filled[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]) continue;
      const auto global = std::find(s.roles.begin(), s.roles.end(), inv[static_cast<std::size_t>(k)]) - s.roles.begin();
      const int clue_role = unit(rng) < c.clue_strength ? static_cast<int>(global) : uniform(c.n_roles);
      Chunk ch;
      ch.role = k;
      ch.words.push_back(s.clues[static_cast<std::size_t>(clue_role)]);
      if (unit(rng) < c.clue_gap_prob) ch.words.push_back(filler());
      ch.arg_offset = static_cast<int>(ch.words.size());
      const std::vector<std::string> name = next_name();
      ch.arg_len = static_cast<int>(name.size());
      ch.words.insert(ch.words.end(), name.begin(), name.end());
      chunks.push_back(std::move(ch));
    }
    chunks.push_back({next_name(), -1, 0, 0, false});
    std::shuffle(chunks.begin(), chunks.end(), rng);

    int chunk_words = 0;
    for (const Chunk& ch : chunks) chunk_words += static_cast<int>(ch.words.size());
    const int gaps = static_cast<int>(chunks.size()) + 1;
    std::vector<int> gap_len(static_cast<std::size_t>(gaps), 1);
    for (int extra = std::max(0, c.doc_length - chunk_words - gaps); extra > 0; --extra) ++gap_len[static_cast<std::size_t>(uniform(gaps))];

    EventInstance inst;
    inst.doc_id = "synth-" + std::to_string(c.seed) + "-" + std::to_string(i);
    inst.event_type = s.event_types[static_cast<std::size_t>(e)];
    inst.roles = inv;
    for (std::size_t g = 0; g < chunks.size(); ++g) {
      for (int f = 0; f < gap_len[g]; ++f) inst.words.push_back(filler());
      const Chunk& ch = chunks[g];
      const int base = static_cast<int>(inst.words.size());
      inst.words.insert(inst.words.end(), ch.words.begin(), ch.words.end());
      if (ch.trigger) inst.trigger = {base, base};
      if (ch.role >= 0) {
        inst.args.push_back({inv[static_cast<std::size_t>(ch.role)], base + ch.arg_offset, base + ch.arg_offset + ch.arg_len - 1});
      }
    }
    for (int f = 0; f < gap_len.back(); ++f) inst.words.push_back(filler());
    std::sort(inst.args.begin(), inst.args.end(), [](const Argument& a, const Argument& b) { return a.start < b.start; });
    validate(inst);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace carlg
