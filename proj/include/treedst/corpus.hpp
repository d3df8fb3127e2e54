#pragma once

// Corpus files: one JSON object per line. The first line is a meta record
// describing how the corpus was produced; every following line is one
// conversation. Splitting is by conversation so no dialog straddles sets.

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "treedst/simulator.hpp"
#include "treedst/tree.hpp"
#include "treedst/util.hpp"
#include "treedst/version.hpp"

namespace treedst {

struct Corpus {
  nlohmann::json meta;
  std::vector<Conversation> conversations;
};

inline nlohmann::json make_corpus_meta(const SimulatorConfig& config,
                                       std::uint64_t base_seed, int count,
                                       int attempts) {
  return {{"type", "meta"},
          {"format", "treedst-corpus"},
          {"format_version", 1},
          {"tool_version", kVersion},
          {"config", config.to_json()},
          {"base_seed", base_seed},
          {"count", count},
          {"attempts", attempts}};
}

inline void write_corpus(std::ostream& os, const Corpus& corpus) {
  os << corpus.meta.dump() << "\n";
  for (const Conversation& c : corpus.conversations)
    os << conversation_to_json(c).dump() << "\n";
}

inline void write_corpus_file(const std::string& path, const Corpus& corpus) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_corpus(os, corpus);
  if (!os) throw Error("write failed: " + path);
}

inline Corpus read_corpus(std::istream& is, const std::string& name = "<stream>") {
  Corpus corpus;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(name + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    std::string type = j.value("type", std::string());
    if (type == "meta") {
      if (lineno != 1)
        throw Error(name + ":" + std::to_string(lineno) + ": meta record not first");
      corpus.meta = std::move(j);
    } else if (type == "conversation") {
      try {
        corpus.conversations.push_back(conversation_from_json(j));
      } catch (const std::exception& e) {
        throw Error(name + ":" + std::to_string(lineno) + ": " + e.what());
      }
    } else {
      throw Error(name + ":" + std::to_string(lineno) + ": unknown record type '" +
                  type + "'");
    }
  }
  return corpus;
}

inline Corpus read_corpus_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return read_corpus(is, path);
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitFractions {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

struct CorpusSplit {
  Corpus train, dev, test;
};

inline CorpusSplit split_corpus(const Corpus& corpus, SplitFractions f,
                                std::uint64_t seed) {
  if (f.train <= 0 || f.dev < 0 || f.test < 0 ||
      std::abs(f.train + f.dev + f.test - 1.0) > 1e-9)
    throw Error("split fractions must be nonnegative and sum to 1");
  const int n = static_cast<int>(corpus.conversations.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  int n_dev = static_cast<int>(std::lround(f.dev * n));
  int n_test = static_cast<int>(std::lround(f.test * n));
  if (n_dev + n_test >= n && n > 0) throw Error("split leaves train set empty");

  CorpusSplit out;
  auto meta_for = [&](const char* which) {
    nlohmann::json m = corpus.meta.is_null() ? nlohmann::json::object() : corpus.meta;
    m["type"] = "meta";
    m["split"] = which;
    m["split_seed"] = seed;
    return m;
  };
  out.dev.meta = meta_for("dev");
  out.test.meta = meta_for("test");
  out.train.meta = meta_for("train");
  for (int i = 0; i < n; ++i) {
    const Conversation& c = corpus.conversations[order[i]];
    if (i < n_dev)
      out.dev.conversations.push_back(c);
    else if (i < n_dev + n_test)
      out.test.conversations.push_back(c);
    else
      out.train.conversations.push_back(c);
  }
  // Keep file order deterministic regardless of the shuffle.
  auto by_seed = [](const Conversation& a, const Conversation& b) {
    return a.seed < b.seed;
  };
  std::sort(out.train.conversations.begin(), out.train.conversations.end(), by_seed);
  std::sort(out.dev.conversations.begin(), out.dev.conversations.end(), by_seed);
  std::sort(out.test.conversations.begin(), out.test.conversations.end(), by_seed);
  return out;
}

// ---------------------------------------------------------------------------
// Flat derivation: replace every user state with its depth-two slot-pair form.

inline Corpus derive_flat_corpus(const Corpus& corpus) {
  Corpus out;
  out.meta = corpus.meta.is_null() ? nlohmann::json::object() : corpus.meta;
  out.meta["type"] = "meta";
  out.meta["representation"] = "flat";
  out.conversations = corpus.conversations;
  for (Conversation& c : out.conversations) {
    for (TurnRecord& t : c.turns) {
      t.user_state = flat_state_tree(flatten(t.user_state));
      t.stack_top_user_before = flat_state_tree(flatten(t.stack_top_user_before));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stats

struct CorpusStats {
  int conversations = 0;
  int turns = 0;
  double avg_turns = 0.0;
  double avg_utterance_tokens = 0.0;
  int distinct_slots = 0;   // distinct flattened slot names observed
  int distinct_values = 0;  // distinct slot values observed
  int multi_domain_dialogs = 0;
  int compositional_turns = 0;
  int cross_turn_coref_turns = 0;
  int max_stack_depth = 0;
  double avg_user_nodes = 0.0;
  int user_vocab = 0;
  std::map<std::string, int> by_kind;
  std::map<std::string, int> by_tag;
  std::map<std::string, int> by_status;
  std::map<std::string, int> by_domain;
  std::map<std::string, int> by_rule;

  nlohmann::json to_json() const {
    return {{"tool_version", kVersion},
            {"conversations", conversations},
            {"turns", turns},
            {"avg_turns_per_conversation", avg_turns},
            {"avg_tokens_per_utterance", avg_utterance_tokens},
            {"distinct_slots", distinct_slots},
            {"distinct_values", distinct_values},
            {"multi_domain_dialogs", multi_domain_dialogs},
            {"compositional_turns", compositional_turns},
            {"cross_turn_coref_turns", cross_turn_coref_turns},
            {"max_stack_depth", max_stack_depth},
            {"avg_user_state_nodes", avg_user_nodes},
            {"user_vocab", user_vocab},
            {"update_kinds", by_kind},
            {"tags", by_tag},
            {"status", by_status},
            {"domains", by_domain},
            {"rules", by_rule},
            {"reference_full_scale",
             {{"note", "full-scale reference numbers for context, not desk targets"},
              {"dialogs", 27280},
              {"turns", 167507},
              {"avg_turns_per_dialog", 7.14},
              {"slots", 287}}}};
  }
};

inline CorpusStats compute_stats(const Corpus& corpus) {
  CorpusStats s;
  s.conversations = static_cast<int>(corpus.conversations.size());
  std::set<std::string> vocab, slots, values;
  long long node_sum = 0, token_sum = 0;
  for (const Conversation& c : corpus.conversations) {
    s.by_status[c.status]++;
    std::set<std::string> dialog_domains;
    for (const TurnRecord& t : c.turns) {
      ++s.turns;
      s.by_kind[t.update_kind]++;
      for (const std::string& tag : t.tags) s.by_tag[tag]++;
      s.compositional_turns += t.tags.count(kTagCompositional);
      s.cross_turn_coref_turns += t.tags.count(kTagCrossTurnCoref);
      std::vector<std::string> words = split_ws(t.user_text);
      token_sum += static_cast<long long>(words.size());
      for (const std::string& w : words) vocab.insert(w);
      node_sum += node_count(t.user_state);
      s.max_stack_depth = std::max(s.max_stack_depth, t.stack_depth_after);
      for (const Node& dom : t.user_state.children)
        if (dom.kind == NodeKind::Domain) {
          s.by_domain[dom.label]++;
          dialog_domains.insert(dom.label);
        }
      FlatState fl;
      try {
        fl = flatten(t.user_state);
      } catch (const Error&) {
        // Derived flat corpora and system-only shapes have no flattening.
        for (const Node& sn : t.user_state.children)
          for (const Node& vn : sn.children) fl.insert({sn.label, vn.label});
      }
      for (const auto& [slot, value] : fl) {
        slots.insert(slot);
        values.insert(value);
      }
      for (const std::string& id : t.rule_ids) s.by_rule[id]++;
      for (const std::string& id : t.response_rule_ids) s.by_rule[id]++;
    }
    if (dialog_domains.size() >= 2) ++s.multi_domain_dialogs;
  }
  s.avg_turns = s.turns ? static_cast<double>(s.turns) / s.conversations : 0.0;
  s.avg_utterance_tokens =
      s.turns ? static_cast<double>(token_sum) / s.turns : 0.0;
  s.avg_user_nodes = s.turns ? static_cast<double>(node_sum) / s.turns : 0.0;
  s.user_vocab = static_cast<int>(vocab.size());
  s.distinct_slots = static_cast<int>(slots.size());
  s.distinct_values = static_cast<int>(values.size());
  return s;
}

// ---------------------------------------------------------------------------
// Training examples: one prediction problem per turn.

struct TurnExample {
  std::string conversation_id;
  int turn_index = 0;
  std::vector<std::string> utterance;  // tokenized user text
  Node prev_system_act;                // y^s from the previous turn
  Node prev_state_merged;              // merged stack view before this turn
  Node target;                         // user state to predict
  std::set<std::string> tags;
  std::string update_kind;
};

// The encoder context for turn t is the previous turn's system act plus the
// pre-turn stack top merged with the previous turn's user state. Turn 0 has no
// history: both context sequences collapse to a single marker token.
inline Node empty_history_state() { return make_node("HISTORY", NodeKind::Marker); }

inline std::vector<TurnExample> make_examples(const Corpus& corpus) {
  std::vector<TurnExample> out;
  for (const Conversation& c : corpus.conversations) {
    for (std::size_t i = 0; i < c.turns.size(); ++i) {
      const TurnRecord& t = c.turns[i];
      TurnExample ex;
      ex.conversation_id = c.id;
      ex.turn_index = t.index;
      ex.utterance = split_ws(t.user_text);
      ex.prev_system_act = i == 0 ? make_node("system", NodeKind::RootSystem)
                                  : c.turns[i - 1].system_act;
      ex.prev_state_merged =
          i == 0 ? empty_history_state()
                 : merge_states(c.turns[i - 1].user_state, t.stack_top_user_before);
      ex.target = canonicalize(t.user_state);
      ex.tags = t.tags;
      ex.update_kind = t.update_kind;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace treedst
