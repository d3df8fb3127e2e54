#pragma once

// Rooted labeled trees for dialog states and system acts, plus the text and
// token formats they travel in: dotted text for humans, bracketed token
// sequences for the decoder, node/parent lists for the parent-pointer decoder
// and a canonical JSON encoding for corpus files.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "treedst/util.hpp"

namespace treedst {

enum class NodeKind {
  RootUser,
  RootSystem,
  Domain,
  Verb,
  Action,
  Slot,
  Operator,
  Value,      // categorical value leaf
  OpenValue,  // free-text value leaf, stored verbatim as a single token
  Reference,  // embeds a whole intent as a slot value
  Marker,     // synthetic labels used by the merged-history tree
};

inline const char* kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::RootUser: return "root_user";
    case NodeKind::RootSystem: return "root_system";
    case NodeKind::Domain: return "domain";
    case NodeKind::Verb: return "verb";
    case NodeKind::Action: return "action";
    case NodeKind::Slot: return "slot";
    case NodeKind::Operator: return "operator";
    case NodeKind::Value: return "value";
    case NodeKind::OpenValue: return "open_value";
    case NodeKind::Reference: return "reference";
    case NodeKind::Marker: return "marker";
  }
  return "value";
}

inline NodeKind kind_from_name(const std::string& s) {
  static const std::map<std::string, NodeKind> table = {
      {"root_user", NodeKind::RootUser},   {"root_system", NodeKind::RootSystem},
      {"domain", NodeKind::Domain},        {"verb", NodeKind::Verb},
      {"action", NodeKind::Action},        {"slot", NodeKind::Slot},
      {"operator", NodeKind::Operator},    {"value", NodeKind::Value},
      {"open_value", NodeKind::OpenValue}, {"reference", NodeKind::Reference},
      {"marker", NodeKind::Marker},
  };
  auto it = table.find(s);
  if (it == table.end()) throw Error("unknown node kind: " + s);
  return it->second;
}

inline bool is_value_kind(NodeKind k) {
  return k == NodeKind::Value || k == NodeKind::OpenValue;
}

struct Node {
  std::string label;
  NodeKind kind = NodeKind::Value;
  std::vector<Node> children;

  bool operator==(const Node&) const = default;

  bool leaf() const { return children.empty(); }
};

inline Node make_node(std::string label, NodeKind kind, std::vector<Node> children = {}) {
  Node n;
  n.label = std::move(label);
  n.kind = kind;
  n.children = std::move(children);
  return n;
}

// The empty dialog state: a bare user root with no goal attached.
inline Node empty_user_state() { return make_node("user", NodeKind::RootUser); }

inline bool is_empty_state(const Node& n) {
  return n.kind == NodeKind::RootUser && n.children.empty();
}

inline int node_count(const Node& n) {
  int c = 1;
  for (const Node& ch : n.children) c += node_count(ch);
  return c;
}

inline int internal_count(const Node& n) {
  if (n.leaf()) return 0;
  int c = 1;
  for (const Node& ch : n.children) c += internal_count(ch);
  return c;
}

inline int tree_depth(const Node& n) {
  int d = 0;
  for (const Node& ch : n.children) d = std::max(d, tree_depth(ch));
  return d + 1;
}

// ---------------------------------------------------------------------------
// Kind classification
//
// Trees read from text carry only labels; kinds are recovered from the label
// inventories of the ontology plus structural position. The default
// classifier knows only the closed verb/action/operator classes and reserved
// labels, which is enough for ontology-free parsing of well-formed trees.

inline const std::set<std::string>& reserved_marker_labels() {
  static const std::set<std::string> labels = {"HISTORY", "PREV", "STACKTOP", "SAME"};
  return labels;
}

struct KindClassifier {
  std::set<std::string> domains;  // empty = infer domains structurally
  std::set<std::string> verbs;
  std::set<std::string> actions;
  std::set<std::string> operators;
  std::set<std::string> slots;   // all slot labels of the ontology, may be empty
  std::set<std::string> values;  // all categorical values, may be empty
  std::set<std::string> prompt_like = {"prompt"};

  NodeKind classify(const std::string& label, std::optional<NodeKind> parent,
                    bool leaf, bool under_prompt, bool at_root) const {
    bool root_position = at_root || (parent && *parent == NodeKind::Marker);
    if (root_position && label == "user") return NodeKind::RootUser;
    if (root_position && label == "system") return NodeKind::RootSystem;
    if (reserved_marker_labels().count(label)) return NodeKind::Marker;
    if (label == "reference") return NodeKind::Reference;
    if (operators.count(label)) return NodeKind::Operator;
    if (verbs.count(label)) return NodeKind::Verb;
    if (actions.count(label)) return NodeKind::Action;
    bool domain_position =
        parent && (*parent == NodeKind::RootUser || *parent == NodeKind::RootSystem ||
                   *parent == NodeKind::Action || *parent == NodeKind::Reference);
    if (!domains.empty() && domains.count(label)) return NodeKind::Domain;
    if (domains.empty() && domain_position) return NodeKind::Domain;
    if (slots.count(label)) return NodeKind::Slot;
    if (values.count(label)) return NodeKind::Value;
    if (domain_position) return NodeKind::Domain;
    if (leaf) return under_prompt ? NodeKind::Slot : NodeKind::Value;
    return NodeKind::Slot;
  }

  void assign(Node& n) const { assign_impl(n, std::nullopt, false, true); }

 private:
  void assign_impl(Node& n, std::optional<NodeKind> parent, bool under_prompt,
                   bool at_root) const {
    if (n.kind != NodeKind::OpenValue) {
      n.kind = classify(n.label, parent, n.leaf(), under_prompt, at_root);
    }
    bool prompt_below =
        under_prompt || (n.kind == NodeKind::Action && prompt_like.count(n.label));
    for (Node& ch : n.children) assign_impl(ch, n.kind, prompt_below, false);
  }
};

inline const KindClassifier& default_classifier() {
  static const KindClassifier c = [] {
    KindClassifier k;
    k.verbs = {"create", "delete", "update", "find", "book", "checkExistence"};
    k.actions = {"prompt", "inform", "confirm", "offer", "success", "failure", "notExisted"};
    k.operators = {"equals"};
    return k;
  }();
  return c;
}

// ---------------------------------------------------------------------------
// Dotted text format
//
// Dots are edges; one extra indentation level per depth introduces additional
// children of the last node of the most recent shallower line. Open values
// are bracketed ("[pick up milk]") so their text is kept as a single label.

inline void check_plain_label(const std::string& label) {
  if (label.empty()) throw Error("empty node label");
  if (label.find_first_of("().") != std::string::npos)
    throw Error("label may not contain '(', ')' or '.': " + label);
}

inline std::string escape_open_value(const std::string& s) {
  std::string out = "[";
  for (char c : s) {
    if (c == '[' || c == ']' || c == '\\') out += '\\';
    out += c;
  }
  out += ']';
  return out;
}

namespace detail {

struct DottedToken {
  std::string text;
  bool open = false;
};

// Splits one dotted line (indentation already stripped) into labels.
inline std::vector<DottedToken> split_dotted_labels(const std::string& line) {
  std::vector<DottedToken> out;
  size_t i = 0;
  if (i < line.size() && line[i] == '.') ++i;  // leading dot on continuation lines
  while (i < line.size()) {
    if (line[i] == '[') {
      ++i;
      std::string text;
      bool closed = false;
      while (i < line.size()) {
        char c = line[i];
        if (c == '\\') {
          if (i + 1 >= line.size()) throw Error("dangling escape in open value");
          char e = line[i + 1];
          if (e != '[' && e != ']' && e != '\\')
            throw Error(std::string("unknown escape in open value: \\") + e);
          text += e;
          i += 2;
        } else if (c == ']') {
          ++i;
          closed = true;
          break;
        } else {
          text += c;
          ++i;
        }
      }
      if (!closed) throw Error("unterminated open value bracket");
      if (text.find_first_of("()") != std::string::npos)
        throw Error("open value may not contain parentheses: " + text);
      out.push_back({text, true});
      if (i < line.size()) {
        if (line[i] != '.') throw Error("expected '.' after open value");
        ++i;
      }
    } else {
      size_t dot = line.find('.', i);
      std::string label = line.substr(i, dot == std::string::npos ? dot : dot - i);
      check_plain_label(label);
      out.push_back({label, false});
      if (dot == std::string::npos) break;
      i = dot + 1;
      if (i >= line.size()) throw Error("trailing '.' in dotted line");
    }
  }
  if (out.empty()) throw Error("dotted line has no labels");
  return out;
}

}  // namespace detail

inline Node parse_dotted(const std::string& text,
                         const KindClassifier& classifier = default_classifier()) {
  std::optional<Node> root;
  std::vector<Node*> last_at_level;
  char indent_char = 0;
  size_t indent_unit = 0;
  int prev_level = -1;

  for (const std::string& raw : split_lines(text)) {
    size_t ws = 0;
    while (ws < raw.size() && (raw[ws] == ' ' || raw[ws] == '\t')) ++ws;
    if (ws == raw.size()) continue;  // blank line
    for (size_t i = 1; i < ws; ++i)
      if (raw[i] != raw[0]) throw Error("mixed indentation in dotted text");
    int level = 0;
    if (ws > 0) {
      if (indent_char == 0) {
        indent_char = raw[0];
        indent_unit = ws;
      }
      if (raw[0] != indent_char) throw Error("mixed indentation in dotted text");
      if (ws % indent_unit != 0) throw Error("indentation not a multiple of the unit");
      level = static_cast<int>(ws / indent_unit);
    }
    if (level > prev_level + 1) throw Error("indentation jumps more than one level");

    auto labels = detail::split_dotted_labels(raw.substr(ws));
    if (level == 0) {
      if (root) throw Error("dotted text has more than one root");
      root = make_node(labels[0].text,
                       labels[0].open ? NodeKind::OpenValue : NodeKind::Value);
      Node* cur = &*root;
      for (size_t i = 1; i < labels.size(); ++i) {
        cur->children.push_back(make_node(
            labels[i].text, labels[i].open ? NodeKind::OpenValue : NodeKind::Value));
        cur = &cur->children.back();
      }
      last_at_level.assign(1, cur);
    } else {
      Node* parent = last_at_level[level - 1];
      Node* cur = parent;
      for (const auto& tok : labels) {
        cur->children.push_back(
            make_node(tok.text, tok.open ? NodeKind::OpenValue : NodeKind::Value));
        cur = &cur->children.back();
      }
      last_at_level.resize(level);
      last_at_level.push_back(cur);
    }
    prev_level = level;
  }
  if (!root) throw Error("empty dotted text");
  classifier.assign(*root);
  return *root;
}

namespace detail {

inline std::string dotted_label(const Node& n) {
  return n.kind == NodeKind::OpenValue ? escape_open_value(n.label) : n.label;
}

inline void render_dotted_rec(const Node& n, int level, std::vector<std::string>& out) {
  std::string line(2 * static_cast<size_t>(level), ' ');
  if (level > 0) line += '.';
  const Node* cur = &n;
  line += dotted_label(*cur);
  while (cur->children.size() == 1) {  // collapse single-child chains onto one line
    cur = &cur->children[0];
    line += '.';
    line += dotted_label(*cur);
  }
  out.push_back(line);
  for (const Node& ch : cur->children) render_dotted_rec(ch, level + 1, out);
}

}  // namespace detail

inline std::string render_dotted(const Node& tree) {
  std::vector<std::string> lines;
  detail::render_dotted_rec(tree, 0, lines);
  return join(lines, "\n");
}

// ---------------------------------------------------------------------------
// Depth-first linearization with structural brackets

inline const std::string kOpenTok = "(";
inline const std::string kCloseTok = ")";

inline bool is_bracket_token(const std::string& t) { return t == kOpenTok || t == kCloseTok; }

using TokenSequence = std::vector<std::string>;

namespace detail {
inline void linearize_rec(const Node& n, TokenSequence& out) {
  out.push_back(n.label);
  if (!n.children.empty()) {
    out.push_back(kOpenTok);
    for (const Node& ch : n.children) linearize_rec(ch, out);
    out.push_back(kCloseTok);
  }
}
}  // namespace detail

inline TokenSequence linearize(const Node& tree) {
  TokenSequence out;
  detail::linearize_rec(tree, out);
  return out;
}

struct DelinearizeResult {
  Node tree;
  bool repaired = false;
};

// Total over arbitrary token sequences: well-formed input yields the unique
// tree; malformed input (decoder output) is repaired and flagged.
inline DelinearizeResult delinearize(const TokenSequence& tokens,
                                     const KindClassifier& classifier = default_classifier()) {
  DelinearizeResult res;
  std::optional<Node> root;
  std::vector<Node*> stack;  // open scopes
  Node* last = nullptr;      // most recently attached node in the current scope

  for (const std::string& tok : tokens) {
    if (tok == kOpenTok) {
      if (last == nullptr) {
        res.repaired = true;  // "(" with nothing to attach children to
        continue;
      }
      stack.push_back(last);
      last = nullptr;
    } else if (tok == kCloseTok) {
      if (stack.empty()) {
        res.repaired = true;  // stray ")"
        continue;
      }
      last = stack.back();
      stack.pop_back();
    } else {
      if (stack.empty()) {
        if (root) {
          res.repaired = true;  // extra top-level material is dropped
          continue;
        }
        root = make_node(tok, NodeKind::Value);
        last = &*root;
      } else {
        stack.back()->children.push_back(make_node(tok, NodeKind::Value));
        last = &stack.back()->children.back();
      }
    }
  }
  if (!stack.empty()) res.repaired = true;  // unclosed brackets closed at end
  if (!root) {
    res.repaired = true;
    res.tree = empty_user_state();
    return res;
  }
  res.tree = std::move(*root);
  classifier.assign(res.tree);
  return res;
}

// ---------------------------------------------------------------------------
// Node/parent form (targets of the parent-pointer decoder)

struct NodeParentForm {
  std::vector<std::string> nodes;  // depth-first order
  std::vector<int> parents;        // parents[i] < i; parents[0] == -1 (sentinel root)
};

namespace detail {
inline void npf_rec(const Node& n, int parent, NodeParentForm& out) {
  int idx = static_cast<int>(out.nodes.size());
  out.nodes.push_back(n.label);
  out.parents.push_back(parent);
  for (const Node& ch : n.children) npf_rec(ch, idx, out);
}
}  // namespace detail

inline NodeParentForm to_node_parent_form(const Node& tree) {
  NodeParentForm out;
  detail::npf_rec(tree, -1, out);
  return out;
}

inline Node from_node_parent_form(const NodeParentForm& npf,
                                  const KindClassifier& classifier = default_classifier()) {
  if (npf.nodes.empty()) throw Error("node/parent form is empty");
  if (npf.nodes.size() != npf.parents.size())
    throw Error("node/parent form: size mismatch");
  if (npf.parents[0] != -1) throw Error("node/parent form: parents[0] must be the root sentinel");
  std::vector<Node> built(npf.nodes.size());
  // Children attach in reverse so each parent's vector is complete before the
  // parent itself is moved into place.
  for (size_t i = npf.nodes.size(); i-- > 0;) {
    built[i].label = npf.nodes[i];
    built[i].kind = NodeKind::Value;
    std::reverse(built[i].children.begin(), built[i].children.end());
    if (i > 0) {
      int p = npf.parents[i];
      if (p < 0 || p >= static_cast<int>(i))
        throw Error("node/parent form: parents[i] must precede i");
      built[p].children.push_back(std::move(built[i]));
    }
  }
  Node root = std::move(built[0]);
  classifier.assign(root);
  return root;
}

// ---------------------------------------------------------------------------
// Canonical form and equality
//
// Sibling order is not semantically significant: equality compares canonical
// forms in which siblings are sorted by (label, canonical form of subtree).
// Labels never contain parentheses, so the key grammar is unambiguous.

inline std::string canonical_key(const Node& n) {
  std::vector<std::string> child_keys;
  child_keys.reserve(n.children.size());
  for (const Node& ch : n.children) child_keys.push_back(canonical_key(ch));
  std::sort(child_keys.begin(), child_keys.end());
  return n.label + "(" + join(child_keys, "") + ")";
}

inline Node canonicalize(const Node& n) {
  Node out = make_node(n.label, n.kind);
  std::vector<std::pair<std::string, Node>> keyed;
  keyed.reserve(n.children.size());
  for (const Node& ch : n.children) {
    Node c = canonicalize(ch);
    keyed.emplace_back(canonical_key(c), std::move(c));
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [key, c] : keyed) out.children.push_back(std::move(c));
  return out;
}

inline bool tree_equal(const Node& a, const Node& b) {
  return canonical_key(a) == canonical_key(b);
}

// True iff some subtree of `hay` is tree_equal to `needle`.
inline bool contains_subtree(const Node& hay, const Node& needle) {
  std::string want = canonical_key(needle);
  std::vector<const Node*> work{&hay};
  while (!work.empty()) {
    const Node* n = work.back();
    work.pop_back();
    if (canonical_key(*n) == want) return true;
    for (const Node& ch : n->children) work.push_back(&ch);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Merged history tree: one tree carrying the previous state and the top of
// the stack, with a SAME marker when the two coincide.

inline Node merge_states(const Node& prev, const Node& stack_top) {
  Node root = make_node("HISTORY", NodeKind::Marker);
  Node prev_slot = make_node("PREV", NodeKind::Marker);
  prev_slot.children.push_back(prev);
  Node top_slot = make_node("STACKTOP", NodeKind::Marker);
  if (tree_equal(prev, stack_top)) {
    top_slot.children.push_back(make_node("SAME", NodeKind::Marker));
  } else {
    top_slot.children.push_back(stack_top);
  }
  root.children.push_back(std::move(prev_slot));
  root.children.push_back(std::move(top_slot));
  return root;
}

// ---------------------------------------------------------------------------
// Subtree addressing

using PathStep = std::pair<std::string, int>;  // (label, occurrence index)
using TreePath = std::vector<PathStep>;

inline const Node* find_subtree(const Node& tree, const TreePath& path) {
  const Node* cur = &tree;
  for (const auto& [label, occurrence] : path) {
    int seen = 0;
    const Node* next = nullptr;
    for (const Node& ch : cur->children) {
      if (ch.label == label && seen++ == occurrence) {
        next = &ch;
        break;
      }
    }
    if (!next) return nullptr;
    cur = next;
  }
  return cur;
}

inline Node subtree_at(const Node& tree, const TreePath& path) {
  const Node* found = find_subtree(tree, path);
  if (!found) {
    std::vector<std::string> parts;
    for (const auto& [label, occ] : path)
      parts.push_back(label + "#" + std::to_string(occ));
    throw Error("subtree_at: path does not resolve: " + join(parts, "/"));
  }
  return *found;
}

// ---------------------------------------------------------------------------
// Slot-value flattening
//
// One pair per root-to-value path; slot names join domain and slot labels
// with '+'. Verb nodes and the equals operator are excluded; reference nodes
// splice the embedded intent in under the referring slot's name.

using SlotValuePair = std::pair<std::string, std::string>;
using FlatState = std::multiset<SlotValuePair>;

namespace detail {
inline void flatten_rec(const Node& n, std::vector<std::string>& path, FlatState& out) {
  switch (n.kind) {
    case NodeKind::Value:
    case NodeKind::OpenValue:
      out.insert({join(path, "+"), n.label});
      return;
    case NodeKind::RootUser:
    case NodeKind::RootSystem:
    case NodeKind::Verb:
    case NodeKind::Reference:
      for (const Node& ch : n.children) flatten_rec(ch, path, out);
      return;
    case NodeKind::Operator:
      if (n.label == "equals") {
        for (const Node& ch : n.children) flatten_rec(ch, path, out);
        return;
      }
      [[fallthrough]];
    default:
      path.push_back(n.label);
      for (const Node& ch : n.children) flatten_rec(ch, path, out);
      path.pop_back();
      return;
  }
}
}  // namespace detail

inline FlatState flatten(const Node& tree) {
  if (tree.kind != NodeKind::RootUser)
    throw Error("flatten: tree must be rooted at a user node");
  if (tree.children.empty()) return {};
  bool has_domain = false;
  for (const Node& ch : tree.children)
    if (ch.kind == NodeKind::Domain) has_domain = true;
  if (!has_domain) throw Error("flatten: user state has no domain child");
  FlatState out;
  std::vector<std::string> path;
  detail::flatten_rec(tree, path, out);
  return out;
}

// Represents a flat state as a depth-two tree so flat targets run through the
// same linearizer and decoder as hierarchical ones.
inline Node flat_state_tree(const FlatState& flat) {
  Node root = empty_user_state();
  for (const auto& [slot, value] : flat) {
    Node s = make_node(slot, NodeKind::Slot);
    s.children.push_back(make_node(value, NodeKind::Value));
    root.children.push_back(std::move(s));
  }
  return root;
}

inline FlatState flat_pairs_from_tree(const Node& flat_tree) {
  FlatState out;
  for (const Node& s : flat_tree.children)
    for (const Node& v : s.children) out.insert({s.label, v.label});
  return out;
}

// ---------------------------------------------------------------------------
// JSON encoding (kinds are stored, so decoding needs no classifier)

inline nlohmann::json tree_to_json(const Node& n) {
  nlohmann::json j;
  j["label"] = n.label;
  j["kind"] = kind_name(n.kind);
  if (!n.children.empty()) {
    nlohmann::json kids = nlohmann::json::array();
    for (const Node& ch : n.children) kids.push_back(tree_to_json(ch));
    j["children"] = std::move(kids);
  }
  return j;
}

inline Node tree_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("label"))
    throw Error("tree json: expected object with label");
  Node n;
  n.label = j.at("label").get<std::string>();
  n.kind = kind_from_name(j.value("kind", "value"));
  if (j.contains("children"))
    for (const auto& cj : j.at("children")) n.children.push_back(tree_from_json(cj));
  return n;
}

}  // namespace treedst
