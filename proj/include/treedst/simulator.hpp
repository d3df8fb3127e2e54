#pragma once

// Turn-level orchestration of the grammars into whole conversations.
//
// A stack of (user state, system act) frames models unfinished tasks. Each
// turn the user either continues the active task, interrupts with a new goal
// (push), or resumes an earlier one after the interruption finished (the
// finishing act pops its frame eagerly, so resume updates see the exposed
// frame). Conversations are a pure function of (config, seed).

#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "treedst/grammar.hpp"
#include "treedst/ontology.hpp"
#include "treedst/tree.hpp"
#include "treedst/util.hpp"

namespace treedst {

inline const char* kTagIntentChange = "intent_change";
inline const char* kTagCompositional = "compositional";
inline const char* kTagMultiIntent = "multi_intent";
inline const char* kTagCrossTurnCoref = "cross_turn_coref";

struct TurnRecord {
  int index = 0;
  std::string user_text;
  std::string system_text;
  Node user_state;
  Node system_act;
  std::string update_kind;  // "initial", "continue", "new_goal", "resume"
  std::vector<std::string> rule_ids;           // user-side derivation
  std::string response_rule_id;
  std::vector<std::string> response_rule_ids;  // system-side derivation
  std::set<std::string> tags;
  Node stack_top_user_before;  // empty user state when the stack was empty
  Node stack_top_sys_before;   // bare "system" node when the stack was empty
  int stack_depth_after = 0;
  std::vector<std::string> stack_events;  // "push" / "update" / "pop" this turn
  std::string finishing;                  // finishing class of the system act
};

struct Conversation {
  std::string id;
  std::uint64_t seed = 0;
  std::string status;  // "success" or "failure"
  std::vector<TurnRecord> turns;
};

struct SimulatorConfig {
  int max_turns = 12;
  int max_stack_depth = 3;
  double p_interrupt = 0.18;
  double p_followup = 0.25;

  static SimulatorConfig from_json(const nlohmann::json& j) {
    SimulatorConfig c;
    c.max_turns = j.value("max_turns", c.max_turns);
    c.max_stack_depth = j.value("max_stack_depth", c.max_stack_depth);
    c.p_interrupt = j.value("p_interrupt", c.p_interrupt);
    c.p_followup = j.value("p_followup", c.p_followup);
    if (c.max_turns < 1) throw Error("max_turns must be at least 1");
    if (c.max_stack_depth < 1) throw Error("max_stack_depth must be at least 1");
    return c;
  }

  nlohmann::json to_json() const {
    return {{"max_turns", max_turns},
            {"max_stack_depth", max_stack_depth},
            {"p_interrupt", p_interrupt},
            {"p_followup", p_followup}};
  }
};

inline bool contains_reference_node(const Node& n) {
  if (n.kind == NodeKind::Reference) return true;
  for (const Node& ch : n.children)
    if (contains_reference_node(ch)) return true;
  return false;
}

inline int action_child_count(const Node& system_act) {
  return static_cast<int>(system_act.children.size());
}

class Simulator {
 public:
  Simulator(const Ontology& ont, const Grammar& grammar, SimulatorConfig config = {})
      : ont_(ont), grammar_(grammar), config_(config) {}

  Conversation run(std::uint64_t seed) const {
    Rng rng(seed);
    Conversation conv;
    conv.seed = seed;
    conv.id = "conv-" + std::to_string(seed);

    struct Frame {
      Node user_state;
      Node system_act;
    };
    std::vector<Frame> stack;
    bool just_popped = false;

    for (int t = 0; t < config_.max_turns; ++t) {
      TurnRecord turn;
      turn.index = t;
      turn.stack_top_user_before =
          stack.empty() ? empty_user_state() : stack.back().user_state;
      turn.stack_top_sys_before = stack.empty()
                                      ? make_node("system", NodeKind::RootSystem)
                                      : stack.back().system_act;

      // --- user side: pick an update kind and derive the next state
      if (stack.empty()) {
        Expansion e = grammar_.sample_intent(rng);
        turn.update_kind = t == 0 ? "initial" : "new_goal";
        turn.user_state = std::move(e.tree);
        turn.user_text = std::move(e.text);
        turn.rule_ids = std::move(e.rule_ids);
        stack.push_back({turn.user_state, {}});
        turn.stack_events.push_back("push");
      } else {
        const Node& top_user = stack.back().user_state;
        const Node& top_sys = stack.back().system_act;
        UpdateKind kind;
        if (just_popped) {
          kind = UpdateKind::Resume;
        } else {
          bool may_interrupt = static_cast<int>(stack.size()) < config_.max_stack_depth &&
                               t + 3 <= config_.max_turns;
          bool interrupt = may_interrupt && std::uniform_real_distribution<double>(
                                                0.0, 1.0)(rng) < config_.p_interrupt;
          kind = interrupt ? UpdateKind::NewGoal : UpdateKind::Continue;
        }
        std::optional<Update> up = grammar_.update(kind, top_user, top_sys, rng);
        if (!up && kind == UpdateKind::NewGoal)
          up = grammar_.update(kind = UpdateKind::Continue, top_user, top_sys, rng);
        if (!up && kind == UpdateKind::Continue)
          up = grammar_.update(kind = UpdateKind::NewGoal, top_user, top_sys, rng);
        if (!up)
          throw Error("no update rule applies at turn " + std::to_string(t) +
                      " of conversation " + conv.id);
        turn.update_kind = update_kind_name(kind);
        turn.user_state = std::move(up->state);
        turn.user_text = std::move(up->text);
        turn.rule_ids = std::move(up->rule_ids);
        if (kind == UpdateKind::NewGoal) {
          stack.push_back({turn.user_state, {}});
          turn.stack_events.push_back("push");
        } else {
          stack.back().user_state = turn.user_state;
          turn.stack_events.push_back("update");
        }
        bool coref = (kind == UpdateKind::NewGoal &&
                      (up->copied_from_user || up->copied_from_sys)) ||
                     (kind == UpdateKind::Resume && up->copied_from_sys);
        if (coref) turn.tags.insert(kTagCrossTurnCoref);
      }
      just_popped = false;

      // --- system side
      bool last_allowed = t == config_.max_turns - 1;
      std::optional<Response> resp = grammar_.respond(turn.user_state, rng, last_allowed);
      if (!resp)
        throw Error("no response rule applies at turn " + std::to_string(t) +
                    " of conversation " + conv.id);
      turn.system_act = std::move(resp->act);
      turn.system_text = std::move(resp->text);
      turn.response_rule_id = resp->rule_id;
      turn.response_rule_ids = std::move(resp->rule_ids);
      turn.finishing = finishing_name(resp->finishing);
      stack.back().system_act = turn.system_act;
      if (resp->finishing != Finishing::None) {
        stack.pop_back();
        turn.stack_events.push_back("pop");
        just_popped = true;
      }

      // --- phenomenon tags
      if (turn.update_kind == "new_goal" || turn.update_kind == "resume")
        turn.tags.insert(kTagIntentChange);
      if (contains_reference_node(turn.user_state))
        turn.tags.insert(kTagCompositional);
      if (!conv.turns.empty() && action_child_count(conv.turns.back().system_act) >= 2)
        turn.tags.insert(kTagMultiIntent);

      turn.stack_depth_after = static_cast<int>(stack.size());
      conv.turns.push_back(std::move(turn));

      if (stack.empty()) {
        bool success = conv.turns.back().finishing == "success";
        bool more_room = t + 2 < config_.max_turns;
        if (success && more_room &&
            std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config_.p_followup) {
          continue;  // follow up with a fresh goal next turn
        }
        conv.status = success ? "success" : "failure";
        return conv;
      }
    }
    // Turn budget exhausted with unfinished frames still stacked.
    conv.status = "failure";
    return conv;
  }

  const SimulatorConfig& config() const { return config_; }
  const Ontology& ontology() const { return ont_; }
  const Grammar& grammar() const { return grammar_; }

 private:
  const Ontology& ont_;
  const Grammar& grammar_;
  SimulatorConfig config_;
};

// ---------------------------------------------------------------------------
// Batch generation

struct BatchResult {
  std::vector<Conversation> conversations;
  int attempts = 0;
};

// Runs seeds base_seed, base_seed+1, ... until `n` conversations pass the
// filter. The filter is data-level quality control; rejected flows are only
// counted.
template <typename Filter>
inline BatchResult generate_batch(const Simulator& sim, std::uint64_t base_seed, int n,
                                  Filter&& keep) {
  BatchResult out;
  std::uint64_t seed = base_seed;
  while (static_cast<int>(out.conversations.size()) < n) {
    ++out.attempts;
    Conversation conv = sim.run(seed++);
    if (keep(conv)) out.conversations.push_back(std::move(conv));
    if (out.attempts > 20 * n + 1000)
      throw Error("conversation filter rejects nearly everything");
  }
  return out;
}

inline BatchResult generate_batch(const Simulator& sim, std::uint64_t base_seed, int n) {
  return generate_batch(sim, base_seed, n, [](const Conversation&) { return true; });
}

// ---------------------------------------------------------------------------
// JSON round-trip

inline nlohmann::json turn_to_json(const TurnRecord& t) {
  nlohmann::json j;
  j["index"] = t.index;
  j["user_text"] = t.user_text;
  j["system_text"] = t.system_text;
  j["user_state"] = tree_to_json(t.user_state);
  j["system_act"] = tree_to_json(t.system_act);
  j["update_kind"] = t.update_kind;
  j["rule_ids"] = t.rule_ids;
  j["response_rule_id"] = t.response_rule_id;
  j["response_rule_ids"] = t.response_rule_ids;
  j["tags"] = std::vector<std::string>(t.tags.begin(), t.tags.end());
  j["stack_top_user_before"] = tree_to_json(t.stack_top_user_before);
  j["stack_top_sys_before"] = tree_to_json(t.stack_top_sys_before);
  j["stack_depth_after"] = t.stack_depth_after;
  j["stack_events"] = t.stack_events;
  j["finishing"] = t.finishing;
  return j;
}

inline TurnRecord turn_from_json(const nlohmann::json& j) {
  TurnRecord t;
  t.index = j.at("index").get<int>();
  t.user_text = j.value("user_text", std::string());
  t.system_text = j.value("system_text", std::string());
  t.user_state = tree_from_json(j.at("user_state"));
  t.system_act = tree_from_json(j.at("system_act"));
  t.update_kind = j.value("update_kind", std::string("continue"));
  t.rule_ids = j.value("rule_ids", std::vector<std::string>());
  t.response_rule_id = j.value("response_rule_id", std::string());
  t.response_rule_ids = j.value("response_rule_ids", std::vector<std::string>());
  for (const auto& tag : j.value("tags", std::vector<std::string>())) t.tags.insert(tag);
  if (j.contains("stack_top_user_before"))
    t.stack_top_user_before = tree_from_json(j.at("stack_top_user_before"));
  else
    t.stack_top_user_before = empty_user_state();
  if (j.contains("stack_top_sys_before"))
    t.stack_top_sys_before = tree_from_json(j.at("stack_top_sys_before"));
  else
    t.stack_top_sys_before = make_node("system", NodeKind::RootSystem);
  t.stack_depth_after = j.value("stack_depth_after", 0);
  t.stack_events = j.value("stack_events", std::vector<std::string>());
  t.finishing = j.value("finishing", std::string("none"));
  return t;
}

inline nlohmann::json conversation_to_json(const Conversation& c) {
  nlohmann::json j;
  j["type"] = "conversation";
  j["id"] = c.id;
  j["seed"] = c.seed;
  j["status"] = c.status;
  nlohmann::json turns = nlohmann::json::array();
  for (const TurnRecord& t : c.turns) turns.push_back(turn_to_json(t));
  j["turns"] = std::move(turns);
  return j;
}

inline Conversation conversation_from_json(const nlohmann::json& j) {
  Conversation c;
  c.id = j.at("id").get<std::string>();
  c.seed = j.value("seed", std::uint64_t{0});
  c.status = j.value("status", std::string());
  for (const auto& tj : j.at("turns")) c.turns.push_back(turn_from_json(tj));
  return c;
}

}  // namespace treedst
