#pragma once

// Dialog-level tracking: run the model over a whole conversation, maintaining
// either the gold history (oracle) or its own predictions (predicted). The
// system side is observable, so gold system acts and their finishing status
// feed both modes; only the user-state history differs.

#include <set>
#include <string>
#include <vector>

#include "treedst/corpus.hpp"
#include "treedst/model/ted.hpp"

namespace treedst {

enum class HistoryMode { Oracle, Predicted };

inline const char* history_mode_name(HistoryMode m) {
  return m == HistoryMode::Oracle ? "oracle" : "predicted";
}

inline HistoryMode history_mode_from_name(const std::string& s) {
  if (s == "oracle") return HistoryMode::Oracle;
  if (s == "predicted") return HistoryMode::Predicted;
  throw Error("unknown history mode '" + s + "' (want oracle or predicted)");
}

struct TrackedTurn {
  int turn_index = 0;
  Node predicted;
  Node gold;
  std::set<std::string> tags;
  bool truncated = false;
};

struct TrackedDialog {
  std::string conversation_id;
  std::string mode;
  std::vector<TrackedTurn> turns;
  std::vector<Node> final_stack;  // predicted mode: stack left after the dialog
};

// Signature used to decide between replacing the stack top and pushing a new
// frame: the (domain, verb) pair of a state's first domain child.
inline std::pair<std::string, std::string> goal_signature(const Node& state) {
  if (state.children.empty()) return {"", ""};
  const Node& dom = state.children.front();
  return {dom.label, dom.children.empty() ? "" : dom.children.front().label};
}

inline TrackedDialog track_dialog(TedModel& model, const Conversation& conv,
                                  HistoryMode mode) {
  TrackedDialog out;
  out.conversation_id = conv.id;
  out.mode = history_mode_name(mode);

  std::vector<Node> stack;  // predicted-mode stack of user states
  Node prev_pred = empty_user_state();

  for (std::size_t i = 0; i < conv.turns.size(); ++i) {
    const TurnRecord& turn = conv.turns[i];
    TurnExample ex;
    ex.conversation_id = conv.id;
    ex.turn_index = turn.index;
    ex.utterance = split_ws(turn.user_text);
    ex.prev_system_act = i == 0 ? make_node("system", NodeKind::RootSystem)
                                : conv.turns[i - 1].system_act;
    if (mode == HistoryMode::Oracle) {
      ex.prev_state_merged =
          i == 0 ? empty_history_state()
                 : merge_states(conv.turns[i - 1].user_state, turn.stack_top_user_before);
    } else {
      // The previous turn's finishing act closed the task the stack top holds.
      if (i > 0 && conv.turns[i - 1].finishing != "none" && !stack.empty())
        stack.pop_back();
      Node top = stack.empty() ? empty_user_state() : stack.back();
      ex.prev_state_merged =
          i == 0 ? empty_history_state() : merge_states(prev_pred, top);
    }
    ex.target = canonicalize(turn.user_state);

    DecodeResult dec = model.greedy(featurize(ex));
    TrackedTurn tt;
    tt.turn_index = turn.index;
    tt.predicted = canonicalize(dec.tree);
    tt.gold = ex.target;
    tt.tags = turn.tags;
    tt.truncated = dec.truncated;
    out.turns.push_back(std::move(tt));

    if (mode == HistoryMode::Predicted) {
      const Node& pred = out.turns.back().predicted;
      if (!stack.empty() && goal_signature(pred) == goal_signature(stack.back()))
        stack.back() = pred;
      else
        stack.push_back(pred);
      prev_pred = pred;
    }
  }
  if (mode == HistoryMode::Predicted) out.final_stack = stack;
  return out;
}

}  // namespace treedst
