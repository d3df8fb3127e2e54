#pragma once

// The tree encoder-decoder tracker. Three bidirectional encoders read the
// utterance, the previous system act and the merged dialog state; a recurrent
// decoder emits the next state either as a bracketed token sequence (vanilla)
// or as (node, parent) pairs (parent-pointer). Next-token probabilities mix a
// generation softmax with a copy distribution over all encoder positions,
// blended by a sigmoid gate.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "treedst/corpus.hpp"
#include "treedst/model/nn.hpp"
#include "treedst/tree.hpp"
#include "treedst/version.hpp"

namespace treedst {

inline const char* kPadTok = "<pad>";
inline const char* kBosTok = "<bos>";
inline const char* kEosTok = "<eos>";
inline const char* kUnkTok = "<unk>";

struct Vocab {
  std::vector<std::string> tokens;
  std::map<std::string, int> index;
  int pad = -1, bos = -1, eos = -1, unk = -1;

  static Vocab with_reserved() {
    Vocab v;
    v.pad = v.add(kPadTok);
    v.bos = v.add(kBosTok);
    v.eos = v.add(kEosTok);
    v.unk = v.add(kUnkTok);
    v.add(kOpenTok);
    v.add(kCloseTok);
    for (const std::string& m : {"HISTORY", "PREV", "STACKTOP", "SAME"}) v.add(m);
    return v;
  }

  int add(const std::string& tok) {
    auto it = index.find(tok);
    if (it != index.end()) return it->second;
    int id = static_cast<int>(tokens.size());
    tokens.push_back(tok);
    index.emplace(tok, id);
    return id;
  }

  int id(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? unk : it->second;
  }

  bool contains(const std::string& tok) const { return index.count(tok) > 0; }
  int size() const { return static_cast<int>(tokens.size()); }

  nlohmann::json to_json() const { return tokens; }

  static Vocab from_json(const nlohmann::json& j) {
    Vocab v;
    for (const auto& t : j) v.add(t.get<std::string>());
    v.pad = v.id(kPadTok);
    v.bos = v.id(kBosTok);
    v.eos = v.id(kEosTok);
    v.unk = v.id(kUnkTok);
    if (v.pad < 0 || v.bos < 0 || v.eos < 0 || v.unk < 0)
      throw Error("vocab is missing reserved tokens");
    return v;
  }
};

struct TedConfig {
  std::string mode = "vanilla";  // "vanilla" or "pp"
  int word_dim = 32;
  int node_dim = 16;
  int utt_hidden = 64;
  int act_hidden = 32;
  int state_hidden = 32;
  int enc_layers = 1;
  int dec_hidden = 64;
  int dec_layers = 1;
  int attn_dim = 32;
  int max_decode = 220;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const {
    return {{"mode", mode},           {"word_dim", word_dim},
            {"node_dim", node_dim},   {"utt_hidden", utt_hidden},
            {"act_hidden", act_hidden}, {"state_hidden", state_hidden},
            {"enc_layers", enc_layers}, {"dec_hidden", dec_hidden},
            {"dec_layers", dec_layers}, {"attn_dim", attn_dim},
            {"max_decode", max_decode}, {"seed", seed}};
  }

  static TedConfig from_json(const nlohmann::json& j) {
    TedConfig c;
    c.mode = j.value("mode", c.mode);
    c.word_dim = j.value("word_dim", c.word_dim);
    c.node_dim = j.value("node_dim", c.node_dim);
    c.utt_hidden = j.value("utt_hidden", c.utt_hidden);
    c.act_hidden = j.value("act_hidden", c.act_hidden);
    c.state_hidden = j.value("state_hidden", c.state_hidden);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.dec_hidden = j.value("dec_hidden", c.dec_hidden);
    c.dec_layers = j.value("dec_layers", c.dec_layers);
    c.attn_dim = j.value("attn_dim", c.attn_dim);
    c.max_decode = j.value("max_decode", c.max_decode);
    c.seed = j.value("seed", c.seed);
    if (c.mode != "vanilla" && c.mode != "pp")
      throw Error("mode must be 'vanilla' or 'pp'");
    return c;
  }
};

// Tokenized view of one turn: encoder inputs plus both target encodings.
struct TurnFeatures {
  std::vector<std::string> utt;
  std::vector<std::string> act_toks;
  std::vector<std::string> state_toks;
  std::vector<std::string> target_toks;  // linearized canonical target
  NodeParentForm target_npf;             // same tree as (node, parent) lists
  std::vector<char> target_can_parent;   // per npf node: may take children
  Node target;
};

namespace detail {
inline void collect_kinds_preorder(const Node& n, std::vector<NodeKind>& out) {
  out.push_back(n.kind);
  for (const Node& ch : n.children) collect_kinds_preorder(ch, out);
}
}  // namespace detail

inline TurnFeatures featurize(const TurnExample& ex) {
  TurnFeatures f;
  f.utt = ex.utterance.empty() ? std::vector<std::string>{kBosTok} : ex.utterance;
  f.act_toks = linearize(ex.prev_system_act);
  f.state_toks = linearize(ex.prev_state_merged);
  f.target = canonicalize(ex.target);
  f.target_toks = linearize(f.target);
  f.target_npf = to_node_parent_form(f.target);
  std::vector<NodeKind> kinds;
  detail::collect_kinds_preorder(f.target, kinds);
  f.target_can_parent.reserve(kinds.size());
  for (NodeKind k : kinds) f.target_can_parent.push_back(!is_value_kind(k));
  return f;
}

// Teacher-forced autoregression count per example (the end-of-sequence step is
// a constant extra in both modes and excluded from the count).
inline int autoregression_steps(const TurnFeatures& f, const std::string& mode) {
  if (mode == "pp") return static_cast<int>(f.target_npf.nodes.size());
  return static_cast<int>(f.target_toks.size());
}

struct DecodeResult {
  Node tree;
  int steps = 0;       // content emissions, end-of-sequence excluded
  bool truncated = false;
  bool repaired = false;
};

class TedModel {
 public:
  TedModel(TedConfig cfg, Vocab words, Vocab nodes, std::set<std::string> branch_labels)
      : cfg_(std::move(cfg)),
        words_(std::move(words)),
        nodes_(std::move(nodes)),
        branch_labels_(std::move(branch_labels)) {
    Rng rng(cfg_.seed);
    word_emb_ = &params_.add("word_emb", cfg_.word_dim, words_.size(), rng);
    node_emb_ = &params_.add("node_emb", cfg_.node_dim, nodes_.size(), rng);
    enc_x_.init(params_, "enc_x", cfg_.word_dim, cfg_.utt_hidden, cfg_.enc_layers, rng);
    enc_s_.init(params_, "enc_s", cfg_.node_dim, cfg_.act_hidden, cfg_.enc_layers, rng);
    enc_u_.init(params_, "enc_u", cfg_.node_dim, cfg_.state_hidden, cfg_.enc_layers,
                rng);
    int dec_in = cfg_.mode == "pp" ? 2 * cfg_.node_dim : cfg_.node_dim;
    dec_.init(params_, "dec", dec_in, cfg_.dec_hidden, cfg_.dec_layers, rng);
    attn_x_.init(params_, "attn_x", cfg_.dec_hidden, cfg_.utt_hidden, cfg_.attn_dim, rng);
    attn_s_.init(params_, "attn_s", cfg_.dec_hidden, cfg_.act_hidden, cfg_.attn_dim, rng);
    attn_u_.init(params_, "attn_u", cfg_.dec_hidden, cfg_.state_hidden, cfg_.attn_dim,
                 rng);
    if (cfg_.mode == "pp")
      attn_parent_.init(params_, "attn_parent", cfg_.dec_hidden, cfg_.dec_hidden,
                        cfg_.attn_dim, rng);
    int feat = cfg_.dec_hidden + cfg_.utt_hidden + cfg_.act_hidden + cfg_.state_hidden;
    gate_w_ = &params_.add("gate.w", 1, feat, rng);
    gate_b_ = &params_.add("gate.b", 1, 1, rng, 0.0);
    gen_w_ = &params_.add("gen.w", nodes_.size(), feat, rng);
    gen_b_ = &params_.add("gen.b", nodes_.size(), 1, rng, 0.0);
  }

  const TedConfig& config() const { return cfg_; }
  const Vocab& word_vocab() const { return words_; }
  const Vocab& node_vocab() const { return nodes_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // Labels allowed to take children when a decoded tree is assembled.
  bool can_branch(const std::string& label) const {
    return branch_labels_.count(label) > 0;
  }

  // Fresh all-zero decoder state, for driving `step` externally.
  StackedLstm::State decoder_start(Tape& t) const { return dec_.start(t); }

  struct Encoded {
    std::vector<Var> hx, hs, hu;
    Var keys_x = -1, keys_s = -1, keys_u = -1;
    std::vector<std::string> copy_surface;  // utterance words then act/state labels
    std::vector<char> copy_keep_pp;         // brackets masked out in pp mode
  };

  Encoded encode(Tape& t, const TurnFeatures& f) const {
    Encoded e;
    std::vector<Var> in;
    for (const std::string& w : f.utt) in.push_back(t.embed(*word_emb_, words_.id(w)));
    e.hx = enc_x_.run(t, in);
    in.clear();
    for (const std::string& s : f.act_toks)
      in.push_back(t.embed(*node_emb_, nodes_.id(s)));
    e.hs = enc_s_.run(t, in);
    in.clear();
    for (const std::string& s : f.state_toks)
      in.push_back(t.embed(*node_emb_, nodes_.id(s)));
    e.hu = enc_u_.run(t, in);
    e.keys_x = attn_x_.keys(t, e.hx);
    e.keys_s = attn_s_.keys(t, e.hs);
    e.keys_u = attn_u_.keys(t, e.hu);
    for (const std::string& w : f.utt) e.copy_surface.push_back(w);
    for (const std::string& s : f.act_toks) e.copy_surface.push_back(s);
    for (const std::string& s : f.state_toks) e.copy_surface.push_back(s);
    e.copy_keep_pp.reserve(e.copy_surface.size());
    for (const std::string& s : e.copy_surface)
      e.copy_keep_pp.push_back(s != kOpenTok && s != kCloseTok);
    return e;
  }

  struct StepDist {
    Var g = -1;       // top decoder hidden
    Var lambda = -1;  // 1-dim gate
    Var p_gen = -1;   // generation softmax
    Var p_copy = -1;  // copy softmax over all encoder positions
  };

  // One decoder step: advance the LSTM on `x_in`, attend to all memories,
  // produce the mixture components. In pp mode bracket positions are excluded
  // from the copy softmax since pp targets never contain brackets.
  StepDist step(Tape& t, Var x_in, StackedLstm::State& state, const Encoded& e) const {
    StepDist d;
    d.g = dec_.step(t, x_in, state);
    Attended ax = attend(t, attn_x_, d.g, e.keys_x, e.hx);
    Attended as = attend(t, attn_s_, d.g, e.keys_s, e.hs);
    Attended au = attend(t, attn_u_, d.g, e.keys_u, e.hu);
    Var f = t.concat({d.g, ax.context, as.context, au.context});
    d.lambda = t.sigmoid(t.affine(*gate_w_, *gate_b_, f));
    d.p_gen = t.softmax(t.affine(*gen_w_, *gen_b_, f));
    Var copy_logits = t.concat({ax.logits, as.logits, au.logits});
    d.p_copy = t.softmax(copy_logits,
                         cfg_.mode == "pp" ? e.copy_keep_pp : std::vector<char>{});
    return d;
  }

  // Mixture probability of emitting `tok`: lambda * P_gen[tok] plus
  // (1 - lambda) * summed copy mass at positions whose surface equals `tok`.
  // Out-of-vocabulary targets only collect generation mass through UNK when no
  // copy position can produce them.
  Var token_credit(Tape& t, const StepDist& d, const Encoded& e,
                   const std::string& tok) const {
    int tid = nodes_.id(tok);
    std::vector<int> matches;
    for (std::size_t j = 0; j < e.copy_surface.size(); ++j) {
      if (cfg_.mode == "pp" && !e.copy_keep_pp[j]) continue;
      if (e.copy_surface[j] == tok) matches.push_back(static_cast<int>(j));
    }
    std::optional<Var> credit;
    if (!(tid == nodes_.unk && !matches.empty()))
      credit = t.scale_by(t.sum_at(d.p_gen, {tid}), d.lambda);
    if (!matches.empty()) {
      Var copy_part =
          t.scale_by(t.sum_at(d.p_copy, std::move(matches)), t.one_minus(d.lambda));
      credit = credit ? t.add(*credit, copy_part) : copy_part;
    }
    return *credit;
  }

  Var loss(Tape& t, const TurnFeatures& f) const {
    return cfg_.mode == "pp" ? loss_pp(t, f) : loss_vanilla(t, f);
  }

  DecodeResult greedy(const TurnFeatures& f) const {
    return cfg_.mode == "pp" ? greedy_pp(f) : greedy_vanilla(f);
  }

  // ---------------------------------------------------------------------
  // Checkpoints

  nlohmann::json checkpoint(nlohmann::json trained = {}) const {
    nlohmann::json j;
    j["type"] = "ted-checkpoint";
    j["format_version"] = 1;
    j["tool_version"] = kVersion;
    j["config"] = cfg_.to_json();
    j["word_vocab"] = words_.to_json();
    j["node_vocab"] = nodes_.to_json();
    j["branch_labels"] = std::vector<std::string>(branch_labels_.begin(),
                                                  branch_labels_.end());
    nlohmann::json ps = nlohmann::json::object();
    for (const auto& p : params_.all()) {
      std::vector<double> data(p->value.data(), p->value.data() + p->value.size());
      ps[p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()},
                     {"data", std::move(data)}};
    }
    j["params"] = std::move(ps);
    if (!trained.is_null() && !trained.empty()) j["trained"] = std::move(trained);
    return j;
  }

  static TedModel from_checkpoint(const nlohmann::json& j) {
    if (j.value("type", std::string()) != "ted-checkpoint")
      throw Error("not a checkpoint file");
    TedConfig cfg = TedConfig::from_json(j.at("config"));
    Vocab words = Vocab::from_json(j.at("word_vocab"));
    Vocab nodes = Vocab::from_json(j.at("node_vocab"));
    std::set<std::string> branch;
    for (const auto& s : j.value("branch_labels", std::vector<std::string>()))
      branch.insert(s);
    TedModel m(cfg, std::move(words), std::move(nodes), std::move(branch));
    for (auto& p : m.params_.all()) {
      if (!j.at("params").contains(p->name))
        throw Error("checkpoint is missing parameter " + p->name);
      const nlohmann::json& pj = j.at("params").at(p->name);
      int rows = pj.at("rows").get<int>(), cols = pj.at("cols").get<int>();
      if (rows != p->value.rows() || cols != p->value.cols())
        throw Error("checkpoint shape mismatch for " + p->name);
      const auto& data = pj.at("data");
      if (static_cast<int>(data.size()) != rows * cols)
        throw Error("checkpoint data size mismatch for " + p->name);
      for (int i = 0; i < rows * cols; ++i) p->value.data()[i] = data[i].get<double>();
    }
    return m;
  }

 private:
  Var loss_vanilla(Tape& t, const TurnFeatures& f) const {
    Encoded e = encode(t, f);
    StackedLstm::State state = dec_.start(t);
    std::vector<Var> step_losses;
    int prev = nodes_.bos;
    std::vector<std::string> toks = f.target_toks;
    toks.push_back(kEosTok);
    for (const std::string& tok : toks) {
      StepDist d = step(t, t.embed(*node_emb_, prev), state, e);
      step_losses.push_back(t.neg_log(token_credit(t, d, e, tok)));
      prev = nodes_.id(tok);
    }
    return t.mean(step_losses);
  }

  Var loss_pp(Tape& t, const TurnFeatures& f) const {
    Encoded e = encode(t, f);
    const auto& npf = f.target_npf;
    const int n = static_cast<int>(npf.nodes.size());
    StackedLstm::State state = dec_.start(t);
    std::vector<Var> node_losses, parent_losses;
    std::vector<Var> mem;  // decoder states g_1..g_i
    for (int i = 0; i <= n; ++i) {
      Var in_node, in_parent;
      if (i == 0) {
        in_node = t.embed(*node_emb_, nodes_.bos);
        in_parent = t.embed(*node_emb_, nodes_.bos);
      } else {
        in_node = t.embed(*node_emb_, nodes_.id(npf.nodes[i - 1]));
        int p = npf.parents[i - 1];
        in_parent = t.embed(*node_emb_, p < 0 ? nodes_.bos : nodes_.id(npf.nodes[p]));
      }
      StepDist d = step(t, t.concat({in_node, in_parent}), state, e);
      const std::string& tok = i == n ? kEosTok : npf.nodes[i];
      node_losses.push_back(t.neg_log(token_credit(t, d, e, tok)));
      // Parent selection: step 0 is the forced root and the end step has no
      // parent; every other step attends over previous decoder states, with
      // value-kind nodes masked out as candidates.
      if (i >= 1 && i < n) {
        Var keys = attn_parent_.keys(t, mem);
        Var logits = attn_parent_.logits(t, d.g, keys);
        std::vector<char> keep(f.target_can_parent.begin(),
                               f.target_can_parent.begin() + i);
        Var probs = t.softmax(logits, keep);
        parent_losses.push_back(t.neg_log(t.sum_at(probs, {npf.parents[i]})));
      }
      mem.push_back(d.g);
    }
    Var node_nll = t.mean(node_losses);
    if (parent_losses.empty()) return node_nll;
    return t.scale(t.add(node_nll, t.mean(parent_losses)), 0.5);
  }

  // Pick the highest-probability surface string under the full mixture
  // distribution. Ties break lexicographically for determinism.
  std::string pick_extended(Tape& t, const StepDist& d, const Encoded& e,
                            bool allow_brackets) const {
    double lv = t.val(d.lambda)[0];
    std::map<std::string, double> score;
    const Vec& pg = t.val(d.p_gen);
    for (int v = 0; v < nodes_.size(); ++v) {
      if (v == nodes_.pad || v == nodes_.bos || v == nodes_.unk) continue;
      const std::string& tok = nodes_.tokens[v];
      if (!allow_brackets && (tok == kOpenTok || tok == kCloseTok)) continue;
      score[tok] += lv * pg[v];
    }
    const Vec& pc = t.val(d.p_copy);
    for (std::size_t j = 0; j < e.copy_surface.size(); ++j) {
      if (cfg_.mode == "pp" && !e.copy_keep_pp[j]) continue;
      const std::string& s = e.copy_surface[j];
      if (!allow_brackets && (s == kOpenTok || s == kCloseTok)) continue;
      score[s] += (1.0 - lv) * pc[j];
    }
    std::string best;
    double best_p = -1.0;
    for (const auto& [tok, p] : score)
      if (p > best_p) {
        best = tok;
        best_p = p;
      }
    return best;
  }

  DecodeResult greedy_vanilla(const TurnFeatures& f) const {
    Tape t;
    Encoded e = encode(t, f);
    StackedLstm::State state = dec_.start(t);
    std::vector<std::string> out;
    int prev = nodes_.bos;
    DecodeResult res;
    while (true) {
      if (static_cast<int>(out.size()) >= cfg_.max_decode) {
        res.truncated = true;
        break;
      }
      StepDist d = step(t, t.embed(*node_emb_, prev), state, e);
      std::string tok = pick_extended(t, d, e, /*allow_brackets=*/true);
      if (tok == kEosTok) break;
      out.push_back(tok);
      prev = nodes_.id(tok);
    }
    res.steps = static_cast<int>(out.size());
    if (out.empty()) {
      res.tree = empty_user_state();
      res.repaired = true;
    } else {
      DelinearizeResult dr = delinearize(out);
      res.tree = std::move(dr.tree);
      res.repaired = dr.repaired;
    }
    return res;
  }

  DecodeResult greedy_pp(const TurnFeatures& f) const {
    Tape t;
    Encoded e = encode(t, f);
    StackedLstm::State state = dec_.start(t);
    NodeParentForm npf;
    std::vector<Var> mem;
    DecodeResult res;
    while (true) {
      int i = static_cast<int>(npf.nodes.size());
      if (i >= cfg_.max_decode) {
        res.truncated = true;
        break;
      }
      Var in_node, in_parent;
      if (i == 0) {
        in_node = t.embed(*node_emb_, nodes_.bos);
        in_parent = t.embed(*node_emb_, nodes_.bos);
      } else {
        in_node = t.embed(*node_emb_, nodes_.id(npf.nodes[i - 1]));
        int p = npf.parents[i - 1];
        in_parent = t.embed(*node_emb_, p < 0 ? nodes_.bos : nodes_.id(npf.nodes[p]));
      }
      StepDist d = step(t, t.concat({in_node, in_parent}), state, e);
      std::string tok = pick_extended(t, d, e, /*allow_brackets=*/false);
      if (tok == kEosTok) break;
      if (i == 0) {
        npf.nodes.push_back(tok);
        npf.parents.push_back(-1);
      } else {
        Var keys = attn_parent_.keys(t, mem);
        Var logits = attn_parent_.logits(t, d.g, keys);
        std::vector<char> keep;
        for (int j = 0; j < i; ++j)
          keep.push_back(can_branch(npf.nodes[j]) ? 1 : 0);
        bool any = false;
        for (char k : keep) any = any || k;
        if (!any) keep.assign(i, 1);
        const Vec& pr = t.val(t.softmax(logits, keep));
        int best = 0;
        for (int j = 1; j < i; ++j)
          if (pr[j] > pr[best]) best = j;
        npf.nodes.push_back(tok);
        npf.parents.push_back(best);
      }
      mem.push_back(d.g);
    }
    res.steps = static_cast<int>(npf.nodes.size());
    if (npf.nodes.empty()) {
      res.tree = empty_user_state();
      res.repaired = true;
    } else {
      res.tree = from_node_parent_form(npf);
    }
    return res;
  }

  TedConfig cfg_;
  Vocab words_, nodes_;
  std::set<std::string> branch_labels_;
  ParamSet params_;
  Param* word_emb_ = nullptr;
  Param* node_emb_ = nullptr;
  BiEncoder enc_x_, enc_s_, enc_u_;
  StackedLstm dec_;
  AttnHead attn_x_, attn_s_, attn_u_, attn_parent_;
  Param* gate_w_ = nullptr;
  Param* gate_b_ = nullptr;
  Param* gen_w_ = nullptr;
  Param* gen_b_ = nullptr;
};

// Vocabulary construction from training examples: words from utterances, node
// tokens from every tree the model reads or writes.
inline void build_vocabs(const std::vector<TurnExample>& train, Vocab& words,
                         Vocab& nodes) {
  words = Vocab::with_reserved();
  nodes = Vocab::with_reserved();
  for (const TurnExample& ex : train) {
    for (const std::string& w : ex.utterance) words.add(w);
    for (const std::string& s : linearize(ex.prev_system_act)) nodes.add(s);
    for (const std::string& s : linearize(ex.prev_state_merged)) nodes.add(s);
    for (const std::string& s : linearize(canonicalize(ex.target))) nodes.add(s);
  }
}

}  // namespace treedst
