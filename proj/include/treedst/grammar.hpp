#pragma once

// Generative grammars behind the dialog simulator.
//
// Three rule families share one dotted-tree syntax with prefixed labels:
//   intents   $nt -> tree            probabilistic tree substitution
//   responses A -> B                 transform the user state into a system act
//   updates   A, B -> C              derive the next state from the stack top
//
// Inside pattern trees:  $x captures a child subtree, -label forbids a child
// label, anything else must be embeddable in the matched tree (extra children
// in the target are fine, assignments are injective).
// Inside output trees:   $name[=alias] expands a nonterminal ($val:space
// samples a value from the ontology), @x splices a deep copy of a captured
// subtree; children of @x are merged into the copy label-by-label.
//
// Every rule carries a template whose {alias} slots are filled synchronously
// with the tree expansion, giving each turn a faithful utterance.

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "treedst/ontology.hpp"
#include "treedst/tree.hpp"
#include "treedst/util.hpp"

namespace treedst {

enum class UpdateKind { Continue, NewGoal, Resume };

inline const char* update_kind_name(UpdateKind k) {
  switch (k) {
    case UpdateKind::Continue: return "continue";
    case UpdateKind::NewGoal: return "new_goal";
    case UpdateKind::Resume: return "resume";
  }
  return "continue";
}

inline UpdateKind update_kind_from_name(const std::string& s) {
  if (s == "continue") return UpdateKind::Continue;
  if (s == "new_goal") return UpdateKind::NewGoal;
  if (s == "resume") return UpdateKind::Resume;
  throw Error("unknown update kind: " + s);
}

enum class Finishing { None, Success, Failure };

inline const char* finishing_name(Finishing f) {
  switch (f) {
    case Finishing::None: return "none";
    case Finishing::Success: return "success";
    case Finishing::Failure: return "failure";
  }
  return "none";
}

inline Finishing finishing_from_name(const std::string& s) {
  if (s == "none") return Finishing::None;
  if (s == "success") return Finishing::Success;
  if (s == "failure") return Finishing::Failure;
  throw Error("unknown finishing class: " + s);
}

// ---------------------------------------------------------------------------
// Pattern and output trees

enum class PatKind { Literal, Capture, Absent };

struct PatNode {
  PatKind kind = PatKind::Literal;
  std::string text;  // label, capture name, or forbidden label
  std::vector<PatNode> children;
};

enum class OutKind { Literal, Expand, Copy };

struct OutNode {
  OutKind kind = OutKind::Literal;
  std::string text;          // label / nonterminal name / capture name
  std::string alias;         // template placeholder for Expand nodes
  bool open_value = false;   // literal open-value leaf
  std::vector<OutNode> children;
};

namespace detail {

inline PatNode pattern_from_node(const Node& n, std::set<std::string>& captures) {
  PatNode p;
  if (starts_with(n.label, "$")) {
    p.kind = PatKind::Capture;
    p.text = n.label.substr(1);
    if (p.text.empty()) throw Error("pattern capture with empty name");
    if (!n.children.empty())
      throw Error("pattern capture $" + p.text + " must be a leaf");
    if (!captures.insert(p.text).second)
      throw Error("duplicate capture name $" + p.text);
    return p;
  }
  if (starts_with(n.label, "-")) {
    p.kind = PatKind::Absent;
    p.text = n.label.substr(1);
    if (p.text.empty()) throw Error("absent marker with empty label");
    if (!n.children.empty())
      throw Error("absent marker -" + p.text + " must be a leaf");
    return p;
  }
  if (starts_with(n.label, "@")) throw Error("copies are not allowed in patterns");
  p.text = n.label;
  for (const Node& ch : n.children) p.children.push_back(pattern_from_node(ch, captures));
  return p;
}

inline PatNode parse_pattern(const std::string& text, const char* root_label) {
  Node n = parse_dotted(text);
  std::set<std::string> captures;
  PatNode p = pattern_from_node(n, captures);
  if (p.kind != PatKind::Literal || p.text != root_label)
    throw Error(std::string("pattern must be rooted at '") + root_label + "'");
  return p;
}

inline OutNode output_from_node(const Node& n) {
  OutNode o;
  if (starts_with(n.label, "$")) {
    o.kind = OutKind::Expand;
    std::string body = n.label.substr(1);
    size_t eq = body.find('=');
    if (eq == std::string::npos) {
      o.text = body;
      o.alias = body;
    } else {
      o.text = body.substr(0, eq);
      o.alias = body.substr(eq + 1);
    }
    if (o.text.empty() || o.alias.empty())
      throw Error("malformed expansion label $" + body);
    if (!n.children.empty())
      throw Error("expansion $" + o.text + " must be a leaf");
    return o;
  }
  if (starts_with(n.label, "@")) {
    o.kind = OutKind::Copy;
    o.text = n.label.substr(1);
    if (o.text.empty()) throw Error("copy with empty capture name");
  } else {
    if (starts_with(n.label, "-")) throw Error("absent markers are not allowed in outputs");
    o.text = n.label;
    o.open_value = n.kind == NodeKind::OpenValue;
  }
  for (const Node& ch : n.children) o.children.push_back(output_from_node(ch));
  return o;
}

inline OutNode parse_output(const std::string& text) {
  return output_from_node(parse_dotted(text));
}

inline void collect_copy_vars(const OutNode& o, std::set<std::string>& out) {
  if (o.kind == OutKind::Copy) out.insert(o.text);
  for (const OutNode& ch : o.children) collect_copy_vars(ch, out);
}

inline void collect_expansions(const OutNode& o, std::vector<const OutNode*>& out) {
  if (o.kind == OutKind::Expand) out.push_back(&o);
  for (const OutNode& ch : o.children) collect_expansions(ch, out);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matching

enum class BindSource { User, Sys };

struct Bound {
  const Node* node = nullptr;
  BindSource source = BindSource::User;
};

using Binding = std::map<std::string, Bound>;

namespace detail {

constexpr size_t kMaxBindings = 64;

bool match_into(const PatNode& pat, const Node& tree, BindSource src, Binding cur,
                std::vector<Binding>& out);

// Enumerates injective assignments of pattern children to tree children.
inline void assign_children(const PatNode& pat, const Node& tree, BindSource src,
                            size_t idx, std::vector<bool>& used, Binding cur,
                            std::vector<Binding>& out) {
  if (out.size() >= kMaxBindings) return;
  // Skip absent markers (checked before enumeration starts).
  while (idx < pat.children.size() && pat.children[idx].kind == PatKind::Absent) ++idx;
  if (idx == pat.children.size()) {
    out.push_back(std::move(cur));
    return;
  }
  const PatNode& p = pat.children[idx];
  for (size_t j = 0; j < tree.children.size(); ++j) {
    if (used[j]) continue;
    const Node& cand = tree.children[j];
    if (p.kind == PatKind::Capture) {
      Binding next = cur;
      next[p.text] = {&cand, src};
      used[j] = true;
      assign_children(pat, tree, src, idx + 1, used, std::move(next), out);
      used[j] = false;
    } else {  // literal
      if (cand.label != p.text) continue;
      std::vector<Binding> subs;
      if (!match_into(p, cand, src, cur, subs)) continue;
      used[j] = true;
      for (Binding& b : subs) assign_children(pat, tree, src, idx + 1, used, b, out);
      used[j] = false;
    }
  }
}

inline bool match_into(const PatNode& pat, const Node& tree, BindSource src, Binding cur,
                       std::vector<Binding>& out) {
  if (pat.text != tree.label) return false;
  for (const PatNode& p : pat.children) {
    if (p.kind != PatKind::Absent) continue;
    for (const Node& ch : tree.children)
      if (ch.label == p.text) return false;
  }
  std::vector<bool> used(tree.children.size(), false);
  size_t before = out.size();
  assign_children(pat, tree, src, 0, used, std::move(cur), out);
  return out.size() > before;
}

}  // namespace detail

inline std::vector<Binding> match_pattern(const PatNode& pat, const Node& tree,
                                          BindSource src = BindSource::User) {
  std::vector<Binding> out;
  detail::match_into(pat, tree, src, {}, out);
  return out;
}

// ---------------------------------------------------------------------------
// Grammar

struct GrammarRule {
  enum class Type { Nt, Response, Update };
  Type type = Type::Nt;
  std::string id;
  double weight = 1.0;
  std::string tmpl;

  // Nt
  std::string nt;       // nonterminal this rule produces, e.g. "intent"
  OutNode tree;

  // Response
  PatNode match;
  OutNode out;
  Finishing finishing = Finishing::None;
  bool fallback = false;

  // Update
  UpdateKind kind = UpdateKind::Continue;
  PatNode match_user;
  PatNode match_sys;
};

struct Expansion {
  Node tree;
  std::string text;
  std::vector<std::string> rule_ids;
};

struct Response {
  Node act;
  std::string text;
  std::string rule_id;
  std::vector<std::string> rule_ids;
  Finishing finishing = Finishing::None;
};

struct Update {
  Node state;
  std::string text;
  std::string rule_id;
  std::vector<std::string> rule_ids;
  bool copied_from_user = false;
  bool copied_from_sys = false;
};

class Grammar {
 public:
  static Grammar from_json(const nlohmann::json& j, const Ontology& ont);

  static Grammar load_file(const std::string& path, const Ontology& ont) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open grammar file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("grammar file " + path + " is not valid json: " + e.what());
    }
    return from_json(j, ont);
  }

  Expansion sample_intent(Rng& rng) const {
    Realized ctx;
    Node tree = expand_nonterminal(start_, ctx, rng, 0);
    classifier_.assign(tree);
    return {std::move(tree), ctx.env.at(start_), std::move(ctx.rule_ids)};
  }

  std::optional<Response> respond(const Node& user_state, Rng& rng,
                                  bool require_finishing = false) const {
    struct Cand {
      const GrammarRule* rule;
      std::vector<Binding> bindings;
    };
    auto gather = [&](bool use_fallback) {
      std::vector<Cand> cands;
      for (const GrammarRule& r : responses_) {
        if (r.fallback != use_fallback) continue;
        if (require_finishing && r.finishing == Finishing::None) continue;
        std::vector<Binding> bs = match_pattern(r.match, user_state, BindSource::User);
        if (!bs.empty()) cands.push_back({&r, std::move(bs)});
      }
      return cands;
    };
    std::vector<Cand> cands = gather(false);
    if (cands.empty()) cands = gather(true);
    if (cands.empty()) return std::nullopt;
    std::vector<double> weights;
    for (const Cand& c : cands) weights.push_back(c.rule->weight);
    const Cand& chosen = cands[weighted_pick(weights, rng)];
    const Binding& binding =
        chosen.bindings[chosen.bindings.size() == 1
                            ? 0
                            : std::uniform_int_distribution<size_t>(
                                  0, chosen.bindings.size() - 1)(rng)];
    Realized ctx;
    seed_env_with_captures(binding, ctx);
    Node act = realize(chosen.rule->out, binding, ctx, rng, 0);
    classifier_.assign(act);
    Response resp;
    resp.act = std::move(act);
    resp.text = render_template(*chosen.rule, ctx);
    resp.rule_id = chosen.rule->id;
    resp.rule_ids = std::move(ctx.rule_ids);
    resp.rule_ids.insert(resp.rule_ids.begin(), chosen.rule->id);
    resp.finishing = chosen.rule->finishing;
    return resp;
  }

  std::optional<Update> update(UpdateKind kind, const Node& top_user, const Node& top_sys,
                               Rng& rng) const {
    struct Cand {
      const GrammarRule* rule;
      std::vector<Binding> bindings;
    };
    std::vector<Cand> cands;
    for (const GrammarRule& r : updates_) {
      if (r.kind != kind) continue;
      std::vector<Binding> user_bs = match_pattern(r.match_user, top_user, BindSource::User);
      if (user_bs.empty()) continue;
      std::vector<Binding> sys_bs = match_pattern(r.match_sys, top_sys, BindSource::Sys);
      if (sys_bs.empty()) continue;
      std::vector<Binding> merged;
      for (const Binding& ub : user_bs) {
        for (const Binding& sb : sys_bs) {
          Binding m = ub;
          m.insert(sb.begin(), sb.end());
          merged.push_back(std::move(m));
          if (merged.size() >= detail::kMaxBindings) break;
        }
        if (merged.size() >= detail::kMaxBindings) break;
      }
      cands.push_back({&r, std::move(merged)});
    }
    if (cands.empty()) return std::nullopt;
    std::vector<double> weights;
    for (const Cand& c : cands) weights.push_back(c.rule->weight);
    const Cand& chosen = cands[weighted_pick(weights, rng)];
    const Binding& binding =
        chosen.bindings[chosen.bindings.size() == 1
                            ? 0
                            : std::uniform_int_distribution<size_t>(
                                  0, chosen.bindings.size() - 1)(rng)];
    Realized ctx;
    seed_env_with_captures(binding, ctx);
    Node state = realize(chosen.rule->out, binding, ctx, rng, 0);
    classifier_.assign(state);
    Update up;
    up.state = std::move(state);
    up.text = render_template(*chosen.rule, ctx);
    up.rule_id = chosen.rule->id;
    up.rule_ids = std::move(ctx.rule_ids);
    up.rule_ids.insert(up.rule_ids.begin(), chosen.rule->id);
    up.copied_from_user = ctx.copied_from_user;
    up.copied_from_sys = ctx.copied_from_sys;
    return up;
  }

  bool has_update_rules(UpdateKind kind, const Node& top_user, const Node& top_sys) const {
    for (const GrammarRule& r : updates_) {
      if (r.kind != kind) continue;
      if (match_pattern(r.match_user, top_user).empty()) continue;
      if (!match_pattern(r.match_sys, top_sys, BindSource::Sys).empty()) return true;
    }
    return false;
  }

  const std::vector<GrammarRule>& responses() const { return responses_; }
  const std::vector<GrammarRule>& updates() const { return updates_; }
  const std::map<std::string, std::vector<GrammarRule>>& nonterminals() const {
    return nts_;
  }
  const std::map<std::string, std::vector<std::string>>& open_samples() const {
    return open_samples_;
  }

 private:
  struct Realized {
    std::vector<std::string> rule_ids;
    std::map<std::string, std::string> env;
    bool copied_from_user = false;
    bool copied_from_sys = false;
  };

  static constexpr int kMaxDepth = 16;

  std::string start_ = "intent";
  std::map<std::string, std::vector<GrammarRule>> nts_;
  std::vector<GrammarRule> responses_;
  std::vector<GrammarRule> updates_;
  std::map<std::string, std::vector<std::string>> open_samples_;
  KindClassifier classifier_;
  const Ontology* ont_ = nullptr;

  // A value phrase spoken in an utterance: the value leaves of a subtree in
  // depth-first order, open values kept in brackets.
  static void leaf_phrase_rec(const Node& n, std::vector<std::string>& out) {
    if (n.leaf()) {
      out.push_back(n.kind == NodeKind::OpenValue ? "[" + n.label + "]" : n.label);
      return;
    }
    for (const Node& ch : n.children) leaf_phrase_rec(ch, out);
  }

  static std::string leaf_phrase(const Node& n) {
    std::vector<std::string> parts;
    leaf_phrase_rec(n, parts);
    return join(parts, " ");
  }

  static void seed_env_with_captures(const Binding& b, Realized& ctx) {
    for (const auto& [name, bound] : b) ctx.env[name] = leaf_phrase(*bound.node);
  }

  std::string render_template(const GrammarRule& rule, const Realized& ctx) const {
    std::string out;
    const std::string& t = rule.tmpl;
    size_t i = 0;
    while (i < t.size()) {
      if (t[i] == '{') {
        size_t close = t.find('}', i);
        if (close == std::string::npos)
          throw Error("rule " + rule.id + ": unterminated placeholder in template");
        std::string name = t.substr(i + 1, close - i - 1);
        auto it = ctx.env.find(name);
        if (it == ctx.env.end())
          throw Error("rule " + rule.id + ": template placeholder {" + name +
                      "} has no value");
        out += it->second;
        i = close + 1;
      } else {
        out += t[i];
        ++i;
      }
    }
    return out;
  }

  Node expand_nonterminal(const std::string& name, Realized& ctx, Rng& rng,
                          int depth) const {
    if (depth > kMaxDepth) throw Error("nonterminal expansion too deep: $" + name);
    if (starts_with(name, "val:")) return sample_value(name.substr(4), rng);
    auto it = nts_.find(name);
    if (it == nts_.end()) throw Error("undefined nonterminal: $" + name);
    std::vector<double> weights;
    for (const GrammarRule& r : it->second) weights.push_back(r.weight);
    const GrammarRule& rule = it->second[weighted_pick(weights, rng)];
    Realized sub;
    Node tree = realize(rule.tree, {}, sub, rng, depth + 1);
    ctx.rule_ids.push_back(rule.id);
    ctx.rule_ids.insert(ctx.rule_ids.end(), sub.rule_ids.begin(), sub.rule_ids.end());
    ctx.env[name] = render_template(rule, sub);
    return tree;
  }

  Node sample_value(const std::string& space_name, Rng& rng) const {
    const ValueSpace& sp = ont_->space(space_name);
    if (sp.open) {
      auto it = open_samples_.find(space_name);
      if (it == open_samples_.end() || it->second.empty())
        throw Error("no open samples configured for value space: " + space_name);
      const auto& pool = it->second;
      size_t i = std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng);
      return make_node(pool[i], NodeKind::OpenValue);
    }
    size_t i = std::uniform_int_distribution<size_t>(0, sp.values.size() - 1)(rng);
    return make_node(sp.values[i], NodeKind::Value);
  }

  // Merges `graft` into `target`: descend along equal labels, attach what is
  // missing. Used for children written under a @copy node.
  static void merge_into(Node& target, const Node& graft) {
    for (Node& ch : target.children) {
      if (ch.label == graft.label) {
        for (const Node& g : graft.children) merge_into(ch, g);
        return;
      }
    }
    target.children.push_back(graft);
  }

  Node realize(const OutNode& o, const Binding& b, Realized& ctx, Rng& rng,
               int depth) const {
    if (depth > kMaxDepth) throw Error("output realization too deep");
    switch (o.kind) {
      case OutKind::Expand: {
        Realized inner;
        Node n = expand_nonterminal(o.text, inner, rng, depth);
        ctx.rule_ids.insert(ctx.rule_ids.end(), inner.rule_ids.begin(),
                            inner.rule_ids.end());
        ctx.copied_from_user |= inner.copied_from_user;
        ctx.copied_from_sys |= inner.copied_from_sys;
        std::string text = starts_with(o.text, "val:") ? leaf_phrase(n)
                                                       : inner.env.at(o.text);
        if (ctx.env.count(o.alias))
          throw Error("template alias used twice in one rule: " + o.alias);
        ctx.env[o.alias] = text;
        return n;
      }
      case OutKind::Copy: {
        auto it = b.find(o.text);
        if (it == b.end()) throw Error("copy @" + o.text + " has no matching capture");
        Node copy = *it->second.node;
        if (it->second.source == BindSource::User)
          ctx.copied_from_user = true;
        else
          ctx.copied_from_sys = true;
        for (const OutNode& ch : o.children) {
          Node g = realize(ch, b, ctx, rng, depth + 1);
          merge_into(copy, g);
        }
        return copy;
      }
      case OutKind::Literal:
      default: {
        Node n = make_node(o.text, o.open_value ? NodeKind::OpenValue : NodeKind::Value);
        for (const OutNode& ch : o.children)
          n.children.push_back(realize(ch, b, ctx, rng, depth + 1));
        return n;
      }
    }
  }

  friend class GrammarLoader;
};

class GrammarLoader {
 public:
  static Grammar load(const nlohmann::json& j, const Ontology& ont) {
    if (!j.is_object()) throw Error("grammar config must be a json object");
    Grammar g;
    g.ont_ = &ont;
    g.classifier_ = ont.classifier();
    g.start_ = j.value("start", std::string("intent"));

    const nlohmann::json samples_j = j.value("open_samples", nlohmann::json::object());
    for (const auto& [name, arr] : samples_j.items()) {
      const ValueSpace& sp = ont.space(name);
      if (!sp.open) throw Error("open_samples given for closed value space: " + name);
      std::vector<std::string> vals;
      for (const auto& v : arr) {
        std::string s = v.get<std::string>();
        if (s.empty() || s.find_first_of("()[]") != std::string::npos)
          throw Error("bad open sample for " + name + ": " + s);
        vals.push_back(s);
      }
      if (vals.empty()) throw Error("empty open_samples for value space: " + name);
      g.open_samples_[name] = std::move(vals);
    }

    std::set<std::string> ids;
    if (!j.contains("rules") || !j.at("rules").is_array() || j.at("rules").empty())
      throw Error("grammar declares no rules");
    for (const auto& rj : j.at("rules")) {
      GrammarRule r;
      r.id = rj.at("id").get<std::string>();
      if (!ids.insert(r.id).second) throw Error("duplicate rule id: " + r.id);
      r.weight = rj.value("weight", 1.0);
      if (!(r.weight > 0)) throw Error("rule " + r.id + ": weight must be positive");
      r.tmpl = rj.value("template", std::string());
      std::string type = rj.at("type").get<std::string>();
      if (type == "nt") {
        r.type = GrammarRule::Type::Nt;
        r.nt = rj.at("nt").get<std::string>();
        if (starts_with(r.nt, "$")) r.nt = r.nt.substr(1);
        if (r.nt.empty() || starts_with(r.nt, "val:"))
          throw Error("rule " + r.id + ": bad nonterminal name");
        r.tree = detail::parse_output(rj.at("tree").get<std::string>());
        std::set<std::string> copies;
        detail::collect_copy_vars(r.tree, copies);
        if (!copies.empty())
          throw Error("rule " + r.id + ": copies are not allowed in nonterminal trees");
        g.nts_[r.nt].push_back(std::move(r));
      } else if (type == "response") {
        r.type = GrammarRule::Type::Response;
        r.match = detail::parse_pattern(rj.at("match").get<std::string>(), "user");
        r.out = detail::parse_output(rj.at("out").get<std::string>());
        r.finishing = finishing_from_name(rj.value("finishing", std::string("none")));
        r.fallback = rj.value("fallback", false);
        check_copies(r, r.out, r.match, std::nullopt);
        g.responses_.push_back(std::move(r));
      } else if (type == "update") {
        r.type = GrammarRule::Type::Update;
        r.kind = update_kind_from_name(rj.at("kind").get<std::string>());
        r.match_user = detail::parse_pattern(rj.at("match_user").get<std::string>(), "user");
        r.match_sys = detail::parse_pattern(rj.at("match_sys").get<std::string>(), "system");
        r.out = detail::parse_output(rj.at("out").get<std::string>());
        check_copies(r, r.out, r.match_user, r.match_sys);
        g.updates_.push_back(std::move(r));
      } else {
        throw Error("rule " + r.id + ": unknown type '" + type + "'");
      }
    }

    if (!g.nts_.count(g.start_))
      throw Error("grammar start nonterminal $" + g.start_ + " has no rules");
    for (const auto& [name, rules] : g.nts_) {
      for (const GrammarRule& r : rules) {
        check_expansions(g, ont, r, r.tree);
        check_template(r, r.tree, nullptr, nullptr);
      }
    }
    for (const GrammarRule& r : g.responses_) {
      check_expansions(g, ont, r, r.out);
      check_template(r, r.out, &r.match, nullptr);
    }
    for (const GrammarRule& r : g.updates_) {
      check_expansions(g, ont, r, r.out);
      check_template(r, r.out, &r.match_user, &r.match_sys);
    }
    return g;
  }

 private:
  static void collect_captures(const PatNode& p, std::set<std::string>& out) {
    if (p.kind == PatKind::Capture) out.insert(p.text);
    for (const PatNode& ch : p.children) collect_captures(ch, out);
  }

  static void check_copies(const GrammarRule& r, const OutNode& out, const PatNode& a,
                           const std::optional<PatNode>& b) {
    std::set<std::string> captures;
    collect_captures(a, captures);
    if (b) {
      std::set<std::string> more;
      collect_captures(*b, more);
      for (const std::string& name : more)
        if (!captures.insert(name).second)
          throw Error("rule " + r.id + ": capture $" + name + " bound in both patterns");
    }
    std::set<std::string> copies;
    detail::collect_copy_vars(out, copies);
    for (const std::string& name : copies)
      if (!captures.count(name))
        throw Error("rule " + r.id + ": copy @" + name + " has no capture");
  }

  // Every {placeholder} in the template must name a capture or an expansion
  // alias of this rule.
  static void check_template(const GrammarRule& r, const OutNode& out, const PatNode* a,
                             const PatNode* b) {
    std::set<std::string> names;
    if (a) collect_captures(*a, names);
    if (b) collect_captures(*b, names);
    std::vector<const OutNode*> exps;
    detail::collect_expansions(out, exps);
    for (const OutNode* e : exps) names.insert(e->alias);
    const std::string& t = r.tmpl;
    size_t i = 0;
    while ((i = t.find('{', i)) != std::string::npos) {
      size_t close = t.find('}', i);
      if (close == std::string::npos)
        throw Error("rule " + r.id + ": unterminated placeholder in template");
      std::string name = t.substr(i + 1, close - i - 1);
      if (!names.count(name))
        throw Error("rule " + r.id + ": template placeholder {" + name +
                    "} names no capture or alias");
      i = close + 1;
    }
  }

  static void check_expansions(const Grammar& g, const Ontology& ont,
                               const GrammarRule& r, const OutNode& out) {
    std::vector<const OutNode*> exps;
    detail::collect_expansions(out, exps);
    std::set<std::string> aliases;
    for (const OutNode* e : exps) {
      if (starts_with(e->text, "val:")) {
        std::string space = e->text.substr(4);
        const ValueSpace& sp = ont.space(space);  // throws on unknown space
        if (sp.open && !g.open_samples_.count(space))
          throw Error("rule " + r.id + ": open value space '" + space +
                      "' has no open_samples");
      } else if (!g.nts_.count(e->text)) {
        throw Error("rule " + r.id + ": undefined nonterminal $" + e->text);
      }
      if (!aliases.insert(e->alias).second)
        throw Error("rule " + r.id + ": template alias '" + e->alias + "' used twice");
    }
  }
};

inline Grammar Grammar::from_json(const nlohmann::json& j, const Ontology& ont) {
  return GrammarLoader::load(j, ont);
}

}  // namespace treedst
