#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "testutil.hpp"
#include "treedst/eval.hpp"
#include "treedst/simulator.hpp"

using namespace treedst;

namespace {

Node state(const std::string& dotted) { return parse_dotted(dotted); }

// One record with a known verdict; gold/predicted differ iff ok is false.
PredRecord rec(const std::string& id, int turn, bool ok,
               std::set<std::string> tags = {}, const std::string& mode = "oracle") {
  PredRecord r;
  r.dialog_id = id;
  r.turn_index = turn;
  r.gold = state("user.flight.book.object.equals.source.equals.location.equals.London");
  r.predicted =
      ok ? r.gold
         : state("user.flight.book.object.equals.source.equals.location.equals.Paris");
  r.mode = mode;
  r.tags = std::move(tags);
  return r;
}

}  // namespace

TEST_CASE("exact match is the fraction of canonically equal trees") {
  Node a = state("user.flight.book.object.equals.source.equals.location.equals.London");
  Node b = state("user.flight.book.object.equals.source.equals.location.equals.Paris");
  Node a_shuffled = a;
  std::reverse(a_shuffled.children.begin(), a_shuffled.children.end());

  CHECK(exact_match({a, b}, {a, b}) == 1.0);
  CHECK(exact_match({a, a}, {a, b}) == 0.5);
  CHECK(exact_match({a_shuffled}, {a}) == 1.0);  // order is not meaning
  CHECK(exact_match({}, {}) == 0.0);
  CHECK_THROWS_AS(exact_match({a}, {a, b}), Error);
}

TEST_CASE("flat comparison ignores structure that flattening hides") {
  Node gold = state(
      "user.flight.book.object.equals\n"
      "  .source.equals.location.equals.London\n"
      "  .destination.equals.location.equals.Paris");
  Node reordered = state(
      "user.flight.book.object.equals\n"
      "  .destination.equals.location.equals.Paris\n"
      "  .source.equals.location.equals.London");
  Node wrong = state(
      "user.flight.book.object.equals.source.equals.location.equals.Rome");
  CHECK(flat_equal(gold, reordered));
  CHECK_FALSE(flat_equal(gold, wrong));

  // Malformed trees flatten to the empty pair set instead of throwing.
  Node sys = make_node("system", NodeKind::RootSystem);
  CHECK(try_flatten(sys).empty());
  CHECK(flat_equal(sys, empty_user_state()));
}

TEST_CASE("breakdown buckets partition disjoint tags and flag small samples") {
  std::vector<PredRecord> preds;
  for (int i = 0; i < 30; ++i) preds.push_back(rec("big", i, i % 2 == 0, {"alpha"}));
  for (int i = 0; i < 4; ++i) preds.push_back(rec("small", i, i == 0, {"beta"}));
  for (int i = 0; i < 6; ++i) preds.push_back(rec("plain", i, true));

  std::vector<BucketRow> rows = breakdown(preds);
  REQUIRE(rows.size() == 4);  // all, alpha, beta, untagged; nothing for unused tags
  CHECK(rows[0].name == "all");
  CHECK(rows[0].n == 40);
  CHECK(rows[0].correct == 15 + 1 + 6);
  CHECK(rows[0].em == Catch::Approx(22.0 / 40));

  auto find = [&](const std::string& name) -> const BucketRow& {
    for (const BucketRow& r : rows)
      if (r.name == name) return r;
    FAIL("missing bucket " + name);
    return rows[0];
  };
  CHECK(find("alpha").n == 30);
  CHECK(find("alpha").correct == 15);
  CHECK_FALSE(find("alpha").low_confidence);  // exactly at the threshold
  CHECK(find("beta").n == 4);
  CHECK(find("beta").low_confidence);
  CHECK(find("untagged").n == 6);
  CHECK(find("untagged").em == 1.0);

  // With disjoint tags the buckets partition the total exactly.
  CHECK(find("alpha").n + find("beta").n + find("untagged").n == rows[0].n);
  CHECK(find("alpha").correct + find("beta").correct + find("untagged").correct ==
        rows[0].correct);
}

TEST_CASE("a turn with several tags lands in every one of its buckets") {
  std::vector<PredRecord> preds = {
      rec("d", 0, true, {"alpha", "beta"}),
      rec("d", 1, false, {"alpha"}),
  };
  std::vector<BucketRow> rows = breakdown(preds);
  std::map<std::string, BucketRow> by;
  for (const BucketRow& r : rows) by[r.name] = r;
  CHECK(by.at("alpha").n == 2);
  CHECK(by.at("alpha").correct == 1);
  CHECK(by.at("beta").n == 1);
  CHECK(by.at("beta").correct == 1);
  CHECK(by.count("untagged") == 0);  // no untagged turns, so no untagged row
}

TEST_CASE("reports aggregate per-turn curves and tag overlap") {
  std::vector<PredRecord> preds;
  // oracle: t0 both right, t1 one of two right; predicted: t0 wrong
  preds.push_back(rec("a", 0, true));
  preds.push_back(rec("b", 0, true));
  preds.push_back(rec("a", 1, true, {"alpha", "beta"}));
  preds.push_back(rec("b", 1, false));
  preds.push_back(rec("a", 0, false, {}, "predicted"));

  EvalReport rep = build_report(preds);
  CHECK(rep.total_turns == 5);
  CHECK(rep.overall_em == Catch::Approx(3.0 / 5));
  CHECK(rep.multi_tagged_turns == 1);
  CHECK(rep.tag_overlap.at("alpha&beta") == 1);

  REQUIRE(rep.curves.count("oracle") == 1);
  REQUIRE(rep.curves.count("predicted") == 1);
  const std::vector<CurvePoint>& oc = rep.curves.at("oracle");
  REQUIRE(oc.size() == 2);
  CHECK(oc[0].turn_index == 0);
  CHECK(oc[0].n == 2);
  CHECK(oc[0].correct == 2);
  CHECK(oc[0].em == 1.0);
  CHECK(oc[1].turn_index == 1);
  CHECK(oc[1].n == 2);
  CHECK(oc[1].correct == 1);
  CHECK(oc[1].em == 0.5);
  const std::vector<CurvePoint>& pc = rep.curves.at("predicted");
  REQUIRE(pc.size() == 1);
  CHECK(pc[0].n == 1);
  CHECK(pc[0].em == 0.0);

  // Curve cells add back up to the overall tally.
  int total = 0, correct = 0;
  for (const auto& [mode, pts] : rep.curves)
    for (const CurvePoint& p : pts) {
      total += p.n;
      correct += p.correct;
    }
  CHECK(total == rep.total_turns);
  CHECK(correct == 3);
}

TEST_CASE("report serialization carries buckets, curves and the scale note") {
  EvalReport rep = build_report({rec("a", 0, true), rec("a", 1, false, {"alpha"})});
  nlohmann::json j = rep.to_json();
  CHECK(j.at("total_turns") == 2);
  CHECK(j.at("buckets").is_array());
  CHECK(j.at("buckets").at(0).at("bucket") == "all");
  CHECK(j.at("curves").contains("oracle"));
  CHECK(j.at("reference_full_scale").contains("overall_em"));

  std::string text = rep.render_text();
  CHECK(text.find("overall EM") != std::string::npos);
  CHECK(text.find("low confidence") != std::string::npos);

  std::string csv = rep.curves_csv();
  CHECK(csv.rfind("mode,turn_index,n,correct,em\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + two cells
}

TEST_CASE("prediction dumps survive a byte-identical round trip") {
  std::vector<PredRecord> preds = {
      rec("conv-1", 0, true, {"alpha"}),
      rec("conv-1", 1, false, {"alpha", "beta"}, "predicted"),
      rec("conv-2", 0, false),
  };
  std::ostringstream first;
  write_predictions(first, preds);
  std::istringstream in(first.str());
  std::vector<PredRecord> back = read_predictions(in, "roundtrip");
  REQUIRE(back.size() == preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    CHECK(back[i].dialog_id == preds[i].dialog_id);
    CHECK(back[i].turn_index == preds[i].turn_index);
    CHECK(back[i].mode == preds[i].mode);
    CHECK(back[i].tags == preds[i].tags);
    CHECK(tree_equal(back[i].gold, preds[i].gold));
    CHECK(tree_equal(back[i].predicted, preds[i].predicted));
  }
  std::ostringstream second;
  write_predictions(second, back);
  CHECK(second.str() == first.str());

  std::istringstream bad("{\"dialog_id\": \"x\"}\nnot json\n");
  try {
    read_predictions(bad, "dump.jsonl");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("dump.jsonl:1") != std::string::npos);
  }
}

TEST_CASE("history mode names round trip and reject strangers") {
  CHECK(history_mode_name(HistoryMode::Oracle) == std::string("oracle"));
  CHECK(history_mode_name(HistoryMode::Predicted) == std::string("predicted"));
  CHECK(history_mode_from_name("oracle") == HistoryMode::Oracle);
  CHECK(history_mode_from_name("predicted") == HistoryMode::Predicted);
  CHECK_THROWS_AS(history_mode_from_name("clairvoyant"), Error);
}

TEST_CASE("goal signatures read the domain and verb off a state") {
  Node s = state("user.flight.book.object.equals.source.equals.location.equals.London");
  CHECK(goal_signature(s) == std::pair<std::string, std::string>{"flight", "book"});
  CHECK(goal_signature(empty_user_state()) ==
        std::pair<std::string, std::string>{"", ""});
}

TEST_CASE("tracking a dialog yields one aligned record per turn in both modes") {
  static Ontology ont =
      Ontology::load_file(testutil::repo_file("data/ontology.json"));
  static Grammar grammar =
      Grammar::load_file(testutil::repo_file("data/grammar.json"), ont);
  Simulator sim(ont, grammar);
  BatchResult batch = generate_batch(sim, 77, 2);
  Corpus corpus;
  corpus.conversations = std::move(batch.conversations);

  TedConfig tc;
  tc.word_dim = 6;
  tc.node_dim = 5;
  tc.utt_hidden = 8;
  tc.act_hidden = 6;
  tc.state_hidden = 6;
  tc.dec_hidden = 8;
  tc.attn_dim = 5;
  Vocab words, nodes;
  std::vector<TurnExample> exs = make_examples(corpus);
  build_vocabs(exs, words, nodes);
  TedModel model(tc, words, nodes, {"user"});

  for (HistoryMode mode : {HistoryMode::Oracle, HistoryMode::Predicted}) {
    const Conversation& conv = corpus.conversations[0];
    TrackedDialog td = track_dialog(model, conv, mode);
    CHECK(td.conversation_id == conv.id);
    CHECK(td.mode == history_mode_name(mode));
    REQUIRE(td.turns.size() == conv.turns.size());
    for (std::size_t i = 0; i < td.turns.size(); ++i) {
      CHECK(td.turns[i].turn_index == conv.turns[i].index);
      CHECK(tree_equal(td.turns[i].gold, conv.turns[i].user_state));
      CHECK(td.turns[i].tags == conv.turns[i].tags);
    }
    if (mode == HistoryMode::Predicted) {
      CHECK(td.final_stack.size() <= td.turns.size());
    } else {
      CHECK(td.final_stack.empty());
    }

    TrackedDialog again = track_dialog(model, conv, mode);  // decoding is greedy
    for (std::size_t i = 0; i < td.turns.size(); ++i)
      CHECK(render_dotted(again.turns[i].predicted) ==
            render_dotted(td.turns[i].predicted));
  }

  std::vector<PredRecord> preds =
      predict_corpus(model, corpus, HistoryMode::Oracle);
  std::size_t total = 0;
  for (const Conversation& c : corpus.conversations) total += c.turns.size();
  CHECK(preds.size() == total);
  for (const PredRecord& p : preds) CHECK(p.mode == "oracle");
}

TEST_CASE("evaluating identical predictions scores a clean one") {
  // End-to-end over real structures: every gold repeated as its own prediction.
  std::vector<PredRecord> preds;
  Rng rng(5);
  testutil::TreeGen gen(
      testutil::load_raw_ontology(testutil::repo_file("data/ontology.json")), rng);
  for (int i = 0; i < 25; ++i) {
    PredRecord r;
    r.dialog_id = "conv-" + std::to_string(i);
    r.turn_index = i % 5;
    r.gold = gen.user_state();
    r.predicted = testutil::shuffled(r.gold, rng);
    r.mode = i % 2 == 0 ? "oracle" : "predicted";
    preds.push_back(std::move(r));
  }
  EvalReport rep = build_report(preds);
  CHECK(rep.overall_em == 1.0);
  for (const BucketRow& b : rep.buckets) CHECK(b.em == 1.0);
}
