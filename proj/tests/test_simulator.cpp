#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"
#include "treedst/simulator.hpp"

using namespace treedst;

namespace {

const Ontology& ont() {
  static Ontology o = Ontology::load_file(testutil::repo_file("data/ontology.json"));
  return o;
}

const Grammar& grammar() {
  static Grammar g = Grammar::load_file(testutil::repo_file("data/grammar.json"), ont());
  return g;
}

const Simulator& sim() {
  static Simulator s(ont(), grammar());
  return s;
}

// Replays the recorded stack events and checks the per-turn snapshots.
void audit_stack(const Conversation& conv) {
  std::vector<const TurnRecord*> stack;
  for (const TurnRecord& t : conv.turns) {
    if (!stack.empty()) {
      CHECK(tree_equal(t.stack_top_user_before, stack.back()->user_state));
    } else {
      CHECK(is_empty_state(t.stack_top_user_before));
    }
    for (const std::string& ev : t.stack_events) {
      if (ev == "push") {
        stack.push_back(&t);
      } else if (ev == "update") {
        REQUIRE_FALSE(stack.empty());
        stack.back() = &t;
      } else if (ev == "pop") {
        REQUIRE_FALSE(stack.empty());
        stack.pop_back();
      } else {
        FAIL("unknown stack event: " << ev);
      }
    }
    CHECK(t.stack_depth_after == static_cast<int>(stack.size()));
    CHECK(t.stack_depth_after <= sim().config().max_stack_depth);
  }
  if (conv.status == "success") CHECK(stack.empty());
}

}  // namespace

TEST_CASE("conversations are deterministic in their seed") {
  Conversation a = sim().run(123);
  Conversation b = sim().run(123);
  CHECK(conversation_to_json(a).dump() == conversation_to_json(b).dump());
  Conversation c = sim().run(124);
  CHECK(conversation_to_json(a).dump() != conversation_to_json(c).dump());
}

TEST_CASE("every turn of every conversation is ontology-valid") {
  for (std::uint64_t seed = 0; seed < 150; ++seed) {
    Conversation conv = sim().run(seed);
    for (const TurnRecord& t : conv.turns) {
      for (const Violation& v : validate_user_state(t.user_state, ont())) {
        INFO("seed " << seed << " turn " << t.index << ": " << v.str());
        CHECK(false);
      }
      for (const Violation& v : validate_system_act(t.system_act, ont())) {
        INFO("seed " << seed << " turn " << t.index << ": " << v.str());
        CHECK(false);
      }
      CHECK_FALSE(t.user_text.empty());
      CHECK_FALSE(t.system_text.empty());
    }
  }
}

TEST_CASE("stack discipline holds across seeds") {
  for (std::uint64_t seed = 0; seed < 150; ++seed) audit_stack(sim().run(seed));
}

TEST_CASE("an interruption pushes and a resume returns to the earlier goal") {
  bool seen = false;
  for (std::uint64_t seed = 0; seed < 400 && !seen; ++seed) {
    Conversation conv = sim().run(seed);
    for (size_t i = 0; i + 1 < conv.turns.size(); ++i) {
      const TurnRecord& t = conv.turns[i];
      if (t.update_kind != "new_goal" || t.stack_depth_after < 2) continue;
      // Find the later resume of the goal beneath the interruption.
      for (size_t j = i + 1; j < conv.turns.size(); ++j) {
        const TurnRecord& r = conv.turns[j];
        if (r.update_kind != "resume") continue;
        CHECK_FALSE(is_empty_state(r.stack_top_user_before));
        CHECK(r.user_state.children.size() == 1);
        seen = true;
        break;
      }
      if (seen) break;
    }
  }
  CHECK(seen);
}

TEST_CASE("all update kinds and tags occur within a few hundred seeds") {
  std::map<std::string, int> kinds, tags;
  int max_depth = 0;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    Conversation conv = sim().run(seed);
    for (const TurnRecord& t : conv.turns) {
      kinds[t.update_kind]++;
      for (const std::string& tg : t.tags) tags[tg]++;
      max_depth = std::max(max_depth, t.stack_depth_after);
    }
  }
  CHECK(kinds["initial"] > 0);
  CHECK(kinds["continue"] > 0);
  CHECK(kinds["new_goal"] > 0);
  CHECK(kinds["resume"] > 0);
  CHECK(tags[kTagIntentChange] > 0);
  CHECK(tags[kTagCompositional] > 0);
  CHECK(tags[kTagMultiIntent] > 0);
  CHECK(tags[kTagCrossTurnCoref] > 0);
  CHECK(max_depth >= 2);
}

TEST_CASE("phenomenon tags match their definitions") {
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    Conversation conv = sim().run(seed);
    for (size_t i = 0; i < conv.turns.size(); ++i) {
      const TurnRecord& t = conv.turns[i];
      CHECK(t.tags.count(kTagIntentChange) ==
            (t.update_kind == "new_goal" || t.update_kind == "resume" ? 1u : 0u));
      CHECK(t.tags.count(kTagCompositional) ==
            (contains_reference_node(t.user_state) ? 1u : 0u));
      bool expect_multi = i > 0 && action_child_count(conv.turns[i - 1].system_act) >= 2;
      CHECK(t.tags.count(kTagMultiIntent) == (expect_multi ? 1u : 0u));
    }
  }
}

TEST_CASE("turn counts respect the configured budget") {
  SimulatorConfig cfg;
  cfg.max_turns = 5;
  Simulator small(ont(), grammar(), cfg);
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Conversation conv = small.run(seed);
    CHECK(conv.turns.size() <= 5);
    CHECK((conv.status == "success" || conv.status == "failure"));
  }
}

TEST_CASE("batch generation is reproducible and reports attempts") {
  BatchResult a = generate_batch(sim(), 500, 20);
  BatchResult b = generate_batch(sim(), 500, 20);
  REQUIRE(a.conversations.size() == 20);
  CHECK(a.attempts >= 20);
  for (size_t i = 0; i < 20; ++i)
    CHECK(conversation_to_json(a.conversations[i]).dump() ==
          conversation_to_json(b.conversations[i]).dump());
}

TEST_CASE("conversations survive a JSON round trip") {
  Conversation conv = sim().run(991);
  Conversation back = conversation_from_json(conversation_to_json(conv));
  CHECK(conversation_to_json(back).dump() == conversation_to_json(conv).dump());
  REQUIRE_FALSE(conv.turns.empty());
  const TurnRecord& t = conv.turns[0];
  CHECK(t.update_kind == "initial");
  CHECK(t.index == 0);
}

TEST_CASE("system acts on non-final turns drive the dialog forward") {
  Conversation conv = sim().run(17);
  for (const TurnRecord& t : conv.turns) {
    CHECK(t.system_act.label == "system");
    CHECK(action_child_count(t.system_act) >= 1);
  }
}
