#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"
#include "treedst/grammar.hpp"

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

bool clean_text(const std::string& s) {
  return !s.empty() && s.find('{') == std::string::npos &&
         s.find('}') == std::string::npos && s.find('$') == std::string::npos;
}

}  // namespace

TEST_CASE("sampled intents are valid single-goal user states with clean text") {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    Expansion e = grammar().sample_intent(rng);
    std::vector<Violation> vs = validate_user_state(e.tree, ont());
    for (const Violation& v : vs) INFO(v.str());
    CHECK(vs.empty());
    REQUIRE(e.tree.children.size() == 1);
    CHECK(e.tree.children[0].kind == NodeKind::Domain);
    CHECK(clean_text(e.text));
    CHECK_FALSE(e.rule_ids.empty());
  }
}

TEST_CASE("intent sampling is deterministic in the seed") {
  Rng a(99), b(99);
  for (int i = 0; i < 20; ++i) {
    Expansion ea = grammar().sample_intent(a);
    Expansion eb = grammar().sample_intent(b);
    CHECK(render_dotted(ea.tree) == render_dotted(eb.tree));
    CHECK(ea.text == eb.text);
    CHECK(ea.rule_ids == eb.rule_ids);
  }
}

TEST_CASE("responses to sampled intents are valid system acts") {
  Rng rng(5);
  int answered = 0;
  for (int i = 0; i < 100; ++i) {
    Expansion e = grammar().sample_intent(rng);
    std::optional<Response> r = grammar().respond(e.tree, rng);
    REQUIRE(r.has_value());
    ++answered;
    std::vector<Violation> vs = validate_system_act(r->act, ont());
    for (const Violation& v : vs) INFO(render_dotted(r->act) + "\n" + v.str());
    CHECK(vs.empty());
    CHECK(clean_text(r->text));
    CHECK(r->act.label == "system");
  }
  CHECK(answered == 100);
}

TEST_CASE("a finishing response exists for every reachable state") {
  Rng rng(31);
  for (int i = 0; i < 60; ++i) {
    Expansion e = grammar().sample_intent(rng);
    std::optional<Response> r = grammar().respond(e.tree, rng, /*require_finishing=*/true);
    REQUIRE(r.has_value());
    CHECK(r->finishing != Finishing::None);
  }
}

TEST_CASE("continue updates extend the current goal and stay valid") {
  Rng rng(77);
  int continued = 0;
  for (int i = 0; i < 150; ++i) {
    Expansion e = grammar().sample_intent(rng);
    std::optional<Response> r = grammar().respond(e.tree, rng);
    REQUIRE(r.has_value());
    std::optional<Update> u = grammar().update(UpdateKind::Continue, e.tree, r->act, rng);
    if (!u) continue;
    ++continued;
    std::vector<Violation> vs = validate_user_state(u->state, ont());
    for (const Violation& v : vs) INFO(render_dotted(u->state) + "\n" + v.str());
    CHECK(vs.empty());
    CHECK(clean_text(u->text));
    REQUIRE(u->state.children.size() == 1);
    CHECK(u->state.children[0].label == e.tree.children[0].label);
  }
  CHECK(continued > 50);
}

TEST_CASE("a continue answer can pick up content the system offered") {
  // A booking that leaves the departure time open invites a concrete time
  // offer; the follow-up answer copies the offered subtree out of the act.
  Node state = parse_dotted(R"(user.flight.book.object.equals
  .source.equals.location.equals.London
  .destination.equals.location.equals.Paris
  .departureDateTime.equals.date.equals.definedValue.equals.Tomorrow)");
  Rng rng(9);
  bool picked_up = false;
  for (int i = 0; i < 60 && !picked_up; ++i) {
    std::optional<Response> r = grammar().respond(state, rng);
    REQUIRE(r.has_value());
    if (r->rule_id != "r.flight.inform_prompt_time") continue;
    std::optional<Update> u = grammar().update(UpdateKind::Continue, state, r->act, rng);
    REQUIRE(u.has_value());
    CHECK(u->copied_from_sys);
    CHECK(validate_user_state(u->state, ont()).empty());
    // The answered time matches what the system offered, not a fresh sample.
    CHECK(render_dotted(u->state).find("hour") != std::string::npos);
    picked_up = true;
  }
  CHECK(picked_up);
}

TEST_CASE("new-goal updates start a different task") {
  Rng rng(13);
  int fresh = 0, identical = 0;
  std::set<std::string> domains;
  for (int i = 0; i < 60; ++i) {
    Expansion e = grammar().sample_intent(rng);
    std::optional<Response> r = grammar().respond(e.tree, rng);
    REQUIRE(r.has_value());
    std::optional<Update> u = grammar().update(UpdateKind::NewGoal, e.tree, r->act, rng);
    if (!u) continue;
    ++fresh;
    CHECK(validate_user_state(u->state, ont()).empty());
    REQUIRE(u->state.children.size() == 1);
    domains.insert(u->state.children[0].label);
    if (tree_equal(u->state, e.tree)) ++identical;
  }
  CHECK(fresh > 30);
  CHECK(domains.size() >= 4);
  // Tiny closed value pools can collide with the goal being abandoned, but
  // almost every new goal should be a genuinely different task.
  CHECK(identical * 10 <= fresh);
}

TEST_CASE("resume updates restate the interrupted goal") {
  Rng rng(21);
  int resumed = 0;
  for (int i = 0; i < 60; ++i) {
    Expansion e = grammar().sample_intent(rng);
    std::optional<Response> r = grammar().respond(e.tree, rng);
    REQUIRE(r.has_value());
    std::optional<Update> u = grammar().update(UpdateKind::Resume, e.tree, r->act, rng);
    if (!u) continue;
    ++resumed;
    CHECK(validate_user_state(u->state, ont()).empty());
    CHECK(u->copied_from_user);
    REQUIRE(u->state.children.size() == 1);
    CHECK(u->state.children[0].label == e.tree.children[0].label);
  }
  CHECK(resumed > 30);
}

TEST_CASE("rules with absent-subtree guards do not fire when the subtree exists") {
  // The prompt asking for both source and date requires both to be missing.
  Node with_source = parse_dotted(R"(user.flight.book.object.equals
  .source.equals.location.equals.London)",
                                  ont().classifier());
  Rng rng(8);
  for (int i = 0; i < 40; ++i) {
    std::optional<Response> r = grammar().respond(with_source, rng);
    REQUIRE(r.has_value());
    bool asks_source = contains_subtree(
        r->act, make_node("source", NodeKind::Slot));
    CHECK_FALSE(asks_source);
  }
}

TEST_CASE("grammar files with malformed rules are rejected") {
  nlohmann::json base = nlohmann::json::parse(R"({
    "version": 1, "start": "intent", "open_samples": {},
    "rules": [{"id": "i.x", "type": "nt", "nt": "intent", "weight": 1,
               "tree": "user.flight.find.object.equals.source.equals.location.equals.$val:location=s",
               "template": "flights from {s}"}]
  })");
  CHECK_NOTHROW(Grammar::from_json(base, ont()));

  nlohmann::json bad_kind = base;
  bad_kind["rules"].push_back(nlohmann::json::parse(R"({
    "id": "u.x", "type": "update", "kind": "sidestep", "weight": 1,
    "match_user": "user.$a", "match_sys": "system.$b", "out": "user.@a", "template": "x"})"));
  CHECK_THROWS_AS(Grammar::from_json(bad_kind, ont()), Error);

  nlohmann::json dangling = base;
  dangling["rules"][0]["tree"] = "user.flight.find.$missingNt";
  CHECK_THROWS_AS(Grammar::from_json(dangling, ont()), Error);

  nlohmann::json bad_copy = base;
  bad_copy["rules"].push_back(nlohmann::json::parse(R"({
    "id": "u.y", "type": "update", "kind": "continue", "weight": 1,
    "match_user": "user.$a", "match_sys": "system.$b", "out": "user.@zzz", "template": "x"})"));
  CHECK_THROWS_AS(Grammar::from_json(bad_copy, ont()), Error);
}
