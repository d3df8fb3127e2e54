#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "testutil.hpp"
#include "treedst/corpus.hpp"
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

const Corpus& corpus30() {
  static Corpus c = [] {
    Simulator sim(ont(), grammar());
    BatchResult b = generate_batch(sim, 7, 30);
    Corpus out;
    out.meta = make_corpus_meta(sim.config(), 7, 30, b.attempts);
    out.conversations = std::move(b.conversations);
    return out;
  }();
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("corpus files round-trip byte for byte") {
  std::string p1 = temp_path("corpus_rt1.jsonl"), p2 = temp_path("corpus_rt2.jsonl");
  write_corpus_file(p1, corpus30());
  Corpus back = read_corpus_file(p1);
  write_corpus_file(p2, back);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(back.conversations.size() == 30);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("corpus reading reports the offending line") {
  std::string p = temp_path("corpus_bad.jsonl");
  {
    std::ofstream os(p);
    os << R"({"type":"meta","format":"treedst-corpus","format_version":1})" << "\n";
    os << "this is not json\n";
  }
  try {
    read_corpus_file(p);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  {
    std::ofstream os(p);
    os << R"({"type":"conversation"})" << "\n";
  }
  CHECK_THROWS_AS(read_corpus_file(p), Error);  // meta must come first
  std::remove(p.c_str());
}

TEST_CASE("splits are disjoint, exhaustive and deterministic") {
  CorpusSplit a = split_corpus(corpus30(), {0.8, 0.1, 0.1}, 13);
  CorpusSplit b = split_corpus(corpus30(), {0.8, 0.1, 0.1}, 13);
  CHECK(a.train.conversations.size() == 24);
  CHECK(a.dev.conversations.size() == 3);
  CHECK(a.test.conversations.size() == 3);

  std::set<std::string> ids;
  for (const Corpus* part : {&a.train, &a.dev, &a.test})
    for (const Conversation& c : part->conversations) CHECK(ids.insert(c.id).second);
  CHECK(ids.size() == 30);

  auto id_list = [](const Corpus& c) {
    std::vector<std::string> out;
    for (const Conversation& conv : c.conversations) out.push_back(conv.id);
    return out;
  };
  CHECK(id_list(a.train) == id_list(b.train));
  CHECK(id_list(a.dev) == id_list(b.dev));

  CorpusSplit other = split_corpus(corpus30(), {0.8, 0.1, 0.1}, 14);
  CHECK(id_list(a.train) != id_list(other.train));

  CHECK(a.train.meta.at("split") == "train");
  CHECK(a.train.meta.at("split_seed") == 13);
}

TEST_CASE("split fractions must sum to one") {
  CHECK_THROWS_AS(split_corpus(corpus30(), {0.5, 0.1, 0.1}, 1), Error);
}

TEST_CASE("the flat corpus has one pair per value leaf") {
  Corpus flat = derive_flat_corpus(corpus30());
  REQUIRE(flat.conversations.size() == corpus30().conversations.size());
  CHECK(flat.meta.at("representation") == "flat");
  for (size_t ci = 0; ci < flat.conversations.size(); ++ci) {
    const Conversation& orig = corpus30().conversations[ci];
    const Conversation& fc = flat.conversations[ci];
    REQUIRE(fc.turns.size() == orig.turns.size());
    for (size_t ti = 0; ti < fc.turns.size(); ++ti) {
      const Node& flat_state = fc.turns[ti].user_state;
      // Each slot node holds exactly one value, and the pair count matches an
      // independent count of value leaves in the original tree.
      std::function<int(const Node&)> leaves = [&](const Node& n) {
        if (n.leaf()) return is_value_kind(n.kind) ? 1 : 0;
        int s = 0;
        for (const Node& ch : n.children) s += leaves(ch);
        return s;
      };
      CHECK(static_cast<int>(flat_state.children.size()) ==
            leaves(orig.turns[ti].user_state));
      for (const Node& s : flat_state.children) REQUIRE(s.children.size() == 1);
      CHECK(flat_pairs_from_tree(flat_state) == flatten(orig.turns[ti].user_state));
    }
  }
}

TEST_CASE("statistics agree with an independent recount") {
  CorpusStats st = compute_stats(corpus30());

  int turns = 0, comp = 0, coref = 0, multi_domain = 0;
  double tokens = 0;
  std::set<std::string> slots, values;
  for (const Conversation& c : corpus30().conversations) {
    turns += static_cast<int>(c.turns.size());
    std::set<std::string> domains;
    for (const TurnRecord& t : c.turns) {
      tokens += static_cast<double>(split_ws(t.user_text).size());
      if (t.tags.count(kTagCompositional)) comp++;
      if (t.tags.count(kTagCrossTurnCoref)) coref++;
      for (const auto& [s, v] : flatten(t.user_state)) {
        slots.insert(s);
        values.insert(v);
      }
      for (const Node& d : t.user_state.children) domains.insert(d.label);
    }
    if (domains.size() >= 2) multi_domain++;
  }

  CHECK(st.conversations == 30);
  CHECK(st.turns == turns);
  CHECK(st.avg_turns == Catch::Approx(static_cast<double>(turns) / 30));
  CHECK(st.avg_utterance_tokens == Catch::Approx(tokens / turns));
  CHECK(st.compositional_turns == comp);
  CHECK(st.cross_turn_coref_turns == coref);
  CHECK(st.multi_domain_dialogs == multi_domain);
  CHECK(st.distinct_slots == static_cast<int>(slots.size()));
  CHECK(st.distinct_values == static_cast<int>(values.size()));

  nlohmann::json j = st.to_json();
  CHECK(j.at("conversations") == 30);
  CHECK(j.contains("reference_full_scale"));
}

TEST_CASE("turn examples carry the merged history and canonical targets") {
  std::vector<TurnExample> exs = make_examples(corpus30());
  int total_turns = 0;
  for (const Conversation& c : corpus30().conversations)
    total_turns += static_cast<int>(c.turns.size());
  REQUIRE(static_cast<int>(exs.size()) == total_turns);

  size_t at = 0;
  for (const Conversation& c : corpus30().conversations) {
    for (size_t ti = 0; ti < c.turns.size(); ++ti, ++at) {
      const TurnExample& ex = exs[at];
      CHECK(ex.conversation_id == c.id);
      CHECK(ex.turn_index == static_cast<int>(ti));
      CHECK(ex.utterance == split_ws(c.turns[ti].user_text));
      CHECK(tree_equal(ex.target, c.turns[ti].user_state));
      CHECK(render_dotted(ex.target) == render_dotted(canonicalize(ex.target)));
      if (ti == 0) {
        // Opening turns see an empty history marker and a bare system node.
        CHECK(ex.prev_state_merged.label == "HISTORY");
        CHECK(ex.prev_state_merged.leaf());
        CHECK(ex.prev_system_act.label == "system");
        CHECK(ex.prev_system_act.leaf());
      } else {
        CHECK(tree_equal(ex.prev_system_act, c.turns[ti - 1].system_act));
        REQUIRE(ex.prev_state_merged.children.size() == 2);
        CHECK(tree_equal(ex.prev_state_merged.children[0].children[0],
                         c.turns[ti - 1].user_state));
      }
    }
  }
}

TEST_CASE("meta records the generating configuration") {
  const nlohmann::json& meta = corpus30().meta;
  CHECK(meta.at("type") == "meta");
  CHECK(meta.at("base_seed") == 7);
  CHECK(meta.at("count") == 30);
  CHECK(meta.at("config").contains("max_turns"));
}
