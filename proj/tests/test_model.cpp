#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"
#include "treedst/corpus.hpp"
#include "treedst/model/gradcheck.hpp"
#include "treedst/model/nn.hpp"
#include "treedst/model/ted.hpp"
#include "treedst/simulator.hpp"

using namespace treedst;

namespace {

const Ontology& ont() {
  static Ontology o = Ontology::load_file(testutil::repo_file("data/ontology.json"));
  return o;
}

std::set<std::string> branch_labels() {
  std::set<std::string> out = {"user", "system", "reference"};
  for (const std::string& m : reserved_marker_labels()) out.insert(m);
  for (const std::string& v : ont().verbs) out.insert(v);
  for (const std::string& a : ont().actions) out.insert(a);
  for (const std::string& o : ont().operators) out.insert(o);
  std::function<void(const std::vector<SlotSchema>&)> walk =
      [&](const std::vector<SlotSchema>& slots) {
        for (const SlotSchema& s : slots) {
          out.insert(s.name);
          walk(s.children);
        }
      };
  for (const auto& [name, d] : ont().domains) {
    out.insert(name);
    walk(d.slots);
  }
  return out;
}

// Two short conversations turned into examples, shared by most tests here.
const std::vector<TurnExample>& examples() {
  static std::vector<TurnExample> exs = [] {
    static Grammar g = Grammar::load_file(testutil::repo_file("data/grammar.json"), ont());
    Simulator sim(ont(), g);
    BatchResult b = generate_batch(sim, 42, 2);
    Corpus c;
    c.conversations = std::move(b.conversations);
    return make_examples(c);
  }();
  return exs;
}

TedConfig tiny_config(const std::string& mode) {
  TedConfig c;
  c.mode = mode;
  c.word_dim = 6;
  c.node_dim = 5;
  c.utt_hidden = 8;
  c.act_hidden = 6;
  c.state_hidden = 6;
  c.dec_hidden = 8;
  c.attn_dim = 5;
  c.seed = 17;
  return c;
}

TedModel tiny_model(const std::string& mode) {
  Vocab words, nodes;
  build_vocabs(examples(), words, nodes);
  return TedModel(tiny_config(mode), words, nodes, branch_labels());
}

}  // namespace

TEST_CASE("vocabularies open with the reserved tokens") {
  Vocab v = Vocab::with_reserved();
  CHECK(v.id(kPadTok) == 0);
  CHECK(v.id(kBosTok) == 1);
  CHECK(v.id(kEosTok) == 2);
  CHECK(v.id(kUnkTok) == 3);
  CHECK(v.contains(kOpenTok));
  CHECK(v.contains(kCloseTok));
  for (const std::string m : {"HISTORY", "PREV", "STACKTOP", "SAME"}) CHECK(v.contains(m));
  CHECK(v.id("never-seen") == v.unk);
  int before = v.size();
  CHECK(v.add("HISTORY") == v.id("HISTORY"));
  CHECK(v.size() == before);

  Vocab back = Vocab::from_json(v.to_json());
  CHECK(back.tokens == v.tokens);
  CHECK(back.unk == v.unk);
  CHECK_THROWS_AS(Vocab::from_json(nlohmann::json::array({"a", "b"})), Error);
}

TEST_CASE("featurization covers the three inputs and both target forms") {
  REQUIRE(examples().size() >= 2);
  const TurnExample& ex = examples()[1];
  TurnFeatures f = featurize(ex);
  CHECK_FALSE(f.utt.empty());
  CHECK(f.act_toks.front() == "system");
  CHECK(f.state_toks.front() == "HISTORY");
  CHECK(f.target_toks.front() == "user");
  CHECK(f.target_npf.nodes.size() == static_cast<size_t>(node_count(f.target)));
  CHECK(f.target_npf.nodes.size() == f.target_can_parent.size());
  CHECK(render_dotted(f.target) == render_dotted(canonicalize(ex.target)));

  TurnExample empty_utt = ex;
  empty_utt.utterance.clear();
  TurnFeatures fe = featurize(empty_utt);
  REQUIRE(fe.utt.size() == 1);
  CHECK(fe.utt[0] == kBosTok);
}

TEST_CASE("only non-value nodes may take children in the parent targets") {
  for (const TurnExample& ex : examples()) {
    TurnFeatures f = featurize(ex);
    std::vector<const Node*> order;
    std::function<void(const Node&)> pre = [&](const Node& n) {
      order.push_back(&n);
      for (const Node& ch : n.children) pre(ch);
    };
    pre(f.target);
    REQUIRE(order.size() == f.target_can_parent.size());
    for (size_t i = 0; i < order.size(); ++i)
      CHECK(static_cast<bool>(f.target_can_parent[i]) == !is_value_kind(order[i]->kind));
  }
}

TEST_CASE("teacher-forced step counts follow the node and bracket laws") {
  for (const TurnExample& ex : examples()) {
    TurnFeatures f = featurize(ex);
    int nodes = node_count(f.target);
    int internals = internal_count(f.target);
    CHECK(autoregression_steps(f, "pp") == nodes);
    CHECK(autoregression_steps(f, "vanilla") == nodes + 2 * internals);
    if (internals > 0)
      CHECK(autoregression_steps(f, "pp") < autoregression_steps(f, "vanilla"));
  }
}

TEST_CASE("attention with identical memory rows is uniform") {
  ParamSet ps;
  Rng rng(3);
  AttnHead head;
  head.init(ps, "h", 4, 5, 3, rng);
  Tape t;
  Vec row = Vec::Random(5);
  std::vector<Var> mem = {t.input(row), t.input(row), t.input(row)};
  Var keys = head.keys(t, mem);
  Attended a = attend(t, head, t.input(Vec::Random(4)), keys, mem);
  const Vec& w = t.val(a.weights);
  REQUIRE(w.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(w(i) == Catch::Approx(1.0 / 3).epsilon(1e-12));
  CHECK((t.val(a.context) - row).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("step distributions are proper and the gate stays strictly inside (0,1)") {
  TedModel m = tiny_model("vanilla");
  TurnFeatures f = featurize(examples()[1]);
  Tape t;
  TedModel::Encoded e = m.encode(t, f);
  CHECK(e.copy_surface.size() == f.utt.size() + f.act_toks.size() + f.state_toks.size());
  StackedLstm::State st = m.decoder_start(t);
  Var x = t.embed(*m.params().find("node_emb"), m.node_vocab().bos);
  TedModel::StepDist d = m.step(t, x, st, e);
  double lam = t.val(d.lambda)(0);
  CHECK(lam > 0.0);
  CHECK(lam < 1.0);
  CHECK(t.val(d.p_gen).sum() == Catch::Approx(1.0).epsilon(1e-9));
  CHECK(t.val(d.p_gen).minCoeff() > 0.0);
  CHECK(t.val(d.p_copy).sum() == Catch::Approx(1.0).epsilon(1e-9));
  CHECK(t.val(d.p_copy).size() == static_cast<int>(e.copy_surface.size()));
}

TEST_CASE("an extreme gate bias collapses the mixture to one side") {
  TurnFeatures f = featurize(examples()[1]);
  const std::string tok = "user";  // in the node vocab and on the copy surface

  auto probe = [&](double bias) {
    TedModel m = tiny_model("vanilla");
    m.params().find("gate.b")->value(0, 0) = bias;
    Tape t;
    TedModel::Encoded e = m.encode(t, f);
    StackedLstm::State st = m.decoder_start(t);
    Var x = t.embed(*m.params().find("node_emb"), m.node_vocab().bos);
    TedModel::StepDist d = m.step(t, x, st, e);
    double lam = t.val(d.lambda)(0);
    double gen = t.val(d.p_gen)(m.node_vocab().id(tok));
    double copy = 0.0;
    for (size_t j = 0; j < e.copy_surface.size(); ++j)
      if (e.copy_surface[j] == tok) copy += t.val(d.p_copy)(static_cast<int>(j));
    REQUIRE(copy > 0.0);  // the token really is on the copy surface
    double credit = t.val(m.token_credit(t, d, e, tok))(0);
    return std::tuple{lam, gen, copy, credit};
  };

  auto [lam_hi, gen_hi, copy_hi, credit_hi] = probe(40.0);
  (void)copy_hi;
  CHECK(lam_hi == Catch::Approx(1.0).margin(1e-12));
  CHECK(credit_hi == Catch::Approx(gen_hi).margin(1e-9));

  auto [lam_lo, gen_lo, copy_lo, credit_lo] = probe(-40.0);
  (void)gen_lo;
  CHECK(lam_lo == Catch::Approx(0.0).margin(1e-12));
  CHECK(credit_lo == Catch::Approx(copy_lo).margin(1e-9));
}

TEST_CASE("perturbing an utterance token moves only the utterance memory") {
  TedModel m = tiny_model("vanilla");
  TurnFeatures f = featurize(examples()[1]);
  REQUIRE(f.utt.size() >= 2);
  TurnFeatures g = f;
  g.utt[1] = kUnkTok;
  REQUIRE(f.utt[1] != g.utt[1]);

  Tape t1, t2;
  TedModel::Encoded e1 = m.encode(t1, f);
  TedModel::Encoded e2 = m.encode(t2, g);
  REQUIRE(e1.hx.size() == e2.hx.size());
  for (size_t j = 0; j < e1.hx.size(); ++j)
    CHECK((t1.val(e1.hx[j]) - t2.val(e2.hx[j])).cwiseAbs().maxCoeff() > 0.0);
  for (size_t j = 0; j < e1.hs.size(); ++j)
    CHECK((t1.val(e1.hs[j]) - t2.val(e2.hs[j])).cwiseAbs().maxCoeff() == 0.0);
  for (size_t j = 0; j < e1.hu.size(); ++j)
    CHECK((t1.val(e1.hu[j]) - t2.val(e2.hu[j])).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a generation-only model with zero logits scores ln V per step") {
  TedModel m = tiny_model("vanilla");
  m.params().find("gate.b")->value(0, 0) = 40.0;  // pin the gate to generation
  m.params().find("gen.w")->value.setZero();
  m.params().find("gen.b")->value.setZero();
  for (const TurnExample& ex : examples()) {
    TurnFeatures f = featurize(ex);
    Tape t;
    double loss = t.val(m.loss(t, f))(0);
    CHECK(loss == Catch::Approx(std::log(m.node_vocab().size())).epsilon(1e-9));
  }
}

TEST_CASE("out-of-vocabulary tokens are reachable through copying alone") {
  TedModel m = tiny_model("vanilla");
  TurnFeatures f = featurize(examples()[1]);
  const std::string oov = "zanzibar";
  f.utt.push_back(oov);
  REQUIRE_FALSE(m.node_vocab().contains(oov));

  Tape t;
  TedModel::Encoded e = m.encode(t, f);
  REQUIRE(std::count(e.copy_surface.begin(), e.copy_surface.end(), oov) == 1);
  StackedLstm::State st = m.decoder_start(t);
  Var x = t.embed(*m.params().find("node_emb"), m.node_vocab().bos);
  TedModel::StepDist d = m.step(t, x, st, e);
  double lam = t.val(d.lambda)(0);
  size_t pos = f.utt.size() - 1;
  double expected = (1.0 - lam) * t.val(d.p_copy)(static_cast<int>(pos));
  double credit = t.val(m.token_credit(t, d, e, oov))(0);
  // With a copy match available, the UNK generation route contributes nothing.
  CHECK(credit == Catch::Approx(expected).epsilon(1e-12));
  CHECK(credit > 0.0);
}

TEST_CASE("losses are identical after a checkpoint round trip") {
  for (const std::string mode : {"vanilla", "pp"}) {
    TedModel m = tiny_model(mode);
    TurnFeatures f = featurize(examples()[1]);
    Tape t1;
    double before = t1.val(m.loss(t1, f))(0);
    TedModel back = TedModel::from_checkpoint(m.checkpoint());
    Tape t2;
    double after = t2.val(back.loss(t2, f))(0);
    CHECK(before == after);  // bitwise: same params, same arithmetic
    CHECK(back.config().mode == mode);
    CHECK(back.node_vocab().tokens == m.node_vocab().tokens);
    CHECK(back.can_branch("flight"));
    CHECK_FALSE(back.can_branch("London"));
  }
}

TEST_CASE("damaged checkpoints are rejected") {
  TedModel m = tiny_model("vanilla");
  nlohmann::json ck = m.checkpoint();
  ck["params"]["gate.w"]["data"].erase(0);
  CHECK_THROWS_AS(TedModel::from_checkpoint(ck), Error);

  nlohmann::json not_ck = {{"type", "something-else"}};
  CHECK_THROWS_AS(TedModel::from_checkpoint(not_ck), Error);
}

TEST_CASE("accumulated batch gradients do not depend on example order") {
  std::vector<TurnFeatures> fs;
  for (size_t i = 0; i < std::min<size_t>(4, examples().size()); ++i)
    fs.push_back(featurize(examples()[i]));
  REQUIRE(fs.size() == 4);

  auto grads_for = [&](std::vector<size_t> order) {
    TedModel m = tiny_model("pp");
    m.params().zero_grads();
    for (size_t i : order) {
      Tape t;
      Var l = m.loss(t, fs[i]);
      t.backward(t.scale(l, 1.0 / static_cast<double>(fs.size())));
    }
    std::map<std::string, Mat> out;
    for (const auto& p : m.params().all()) out[p->name] = p->grad;
    return out;
  };

  auto a = grads_for({0, 1, 2, 3});
  auto b = grads_for({3, 1, 0, 2});
  REQUIRE(a.size() == b.size());
  for (const auto& [name, ga] : a) {
    INFO(name);
    CHECK((ga - b.at(name)).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("both losses pass a quick finite-difference check") {
  std::vector<TurnFeatures> fs = {featurize(examples()[0]), featurize(examples()[1])};
  for (const std::string mode : {"vanilla", "pp"}) {
    TedModel m = tiny_model(mode);
    GradCheckResult r = grad_check(m, fs, 6);
    INFO(mode << ": worst " << r.worst_param << " rel err " << r.max_rel_err);
    CHECK(r.entries_checked > 100);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("one example can be memorized exactly by both decoders") {
  for (const std::string mode : {"vanilla", "pp"}) {
    TedModel m = tiny_model(mode);
    TurnFeatures f = featurize(examples()[1]);
    double loss = 0;
    for (int epoch = 0; epoch < 1500; ++epoch) {
      m.params().zero_grads();
      Tape t;
      Var l = m.loss(t, f);
      loss = t.val(l)(0);
      if (loss < 5e-3) break;
      t.backward(l);
      m.params().adam_step(3e-3, 0.9, 0.999, 1e-8);
    }
    INFO(mode << ": final loss " << loss);
    CHECK(loss < 1e-2);
    DecodeResult d = m.greedy(f);
    CHECK_FALSE(d.truncated);
    CHECK(tree_equal(d.tree, f.target));
    CHECK(d.steps == autoregression_steps(f, mode));

    DecodeResult again = m.greedy(f);  // greedy decoding is deterministic
    CHECK(render_dotted(again.tree) == render_dotted(d.tree));
  }
}
