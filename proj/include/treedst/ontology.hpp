#pragma once

// Closed-world ontology: domains, verbs, actions, value spaces and per-domain
// slot schemas. Loaded from a JSON config; drives label classification and
// structural validation of dialog states and system acts.
//
// Slot schema JSON uses '$'-prefixed directives:
//   {"$space": "location"}      leaf slot whose values come from a value space
//   {"$include": "dateTime"}    splice a shared child map
//   {"$system": true}           slot only valid inside system acts
//   {"$reference": true}        an embedded-intent `reference` child is allowed
// all other keys are child slot names mapping to nested specs.

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "treedst/tree.hpp"
#include "treedst/util.hpp"

namespace treedst {

struct ValueSpace {
  std::string name;
  bool open = false;
  std::vector<std::string> values;  // empty iff open

  bool contains(const std::string& v) const {
    return open || std::find(values.begin(), values.end(), v) != values.end();
  }
};

struct SlotSchema {
  std::string name;
  std::string space;  // nonempty => value slot, no structural children
  bool system_only = false;
  bool allow_reference = false;
  std::vector<SlotSchema> children;

  const SlotSchema* child(const std::string& label) const {
    for (const SlotSchema& c : children)
      if (c.name == label) return &c;
    return nullptr;
  }
};

struct DomainSchema {
  std::string name;
  std::set<std::string> verbs;
  std::vector<SlotSchema> slots;

  const SlotSchema* slot(const std::string& label) const {
    for (const SlotSchema& s : slots)
      if (s.name == label) return &s;
    return nullptr;
  }
};

enum class ViolationKind {
  UnknownLabel,
  KindMismatch,
  ValueOutsideVocab,
  UnknownDomainReference,
  StructureError,
};

inline const char* violation_kind_name(ViolationKind k) {
  switch (k) {
    case ViolationKind::UnknownLabel: return "unknown_label";
    case ViolationKind::KindMismatch: return "kind_mismatch";
    case ViolationKind::ValueOutsideVocab: return "value_outside_vocab";
    case ViolationKind::UnknownDomainReference: return "unknown_domain_reference";
    case ViolationKind::StructureError: return "structure_error";
  }
  return "structure_error";
}

struct Violation {
  ViolationKind kind;
  std::string path;
  std::string message;

  std::string str() const {
    return std::string(violation_kind_name(kind)) + " at " + path + ": " + message;
  }
};

class Ontology {
 public:
  int version = 0;
  std::set<std::string> verbs;
  std::set<std::string> actions;
  std::set<std::string> operators;
  std::map<std::string, ValueSpace> spaces;
  std::map<std::string, DomainSchema> domains;

  static Ontology from_json(const nlohmann::json& j);

  static Ontology load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open ontology file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("ontology file " + path + " is not valid json: " + e.what());
    }
    return from_json(j);
  }

  const DomainSchema* domain(const std::string& name) const {
    auto it = domains.find(name);
    return it == domains.end() ? nullptr : &it->second;
  }

  const ValueSpace& space(const std::string& name) const {
    auto it = spaces.find(name);
    if (it == spaces.end()) throw Error("unknown value space: " + name);
    return it->second;
  }

  // Classifier with the full label inventories of this ontology.
  KindClassifier classifier() const {
    KindClassifier c;
    c.verbs = verbs;
    c.actions = actions;
    c.operators = operators;
    for (const auto& [name, d] : domains) c.domains.insert(name);
    for (const auto& [name, d] : domains) collect_slot_labels(d.slots, c.slots);
    for (const auto& [name, sp] : spaces)
      for (const std::string& v : sp.values) c.values.insert(v);
    return c;
  }

  // Every label the generator may emit (used to build the node vocabulary).
  std::set<std::string> all_labels() const {
    std::set<std::string> out = {"user", "system", "reference"};
    out.insert(verbs.begin(), verbs.end());
    out.insert(actions.begin(), actions.end());
    out.insert(operators.begin(), operators.end());
    for (const auto& [name, d] : domains) {
      out.insert(name);
      collect_slot_labels(d.slots, out);
    }
    for (const auto& [name, sp] : spaces)
      for (const std::string& v : sp.values) out.insert(v);
    out.insert(reserved_marker_labels().begin(), reserved_marker_labels().end());
    return out;
  }

 private:
  static void collect_slot_labels(const std::vector<SlotSchema>& slots,
                                  std::set<std::string>& out) {
    for (const SlotSchema& s : slots) {
      out.insert(s.name);
      collect_slot_labels(s.children, out);
    }
  }
};

namespace detail {

inline std::vector<SlotSchema> parse_slot_map(const nlohmann::json& j,
                                              const nlohmann::json& shared,
                                              std::vector<std::string>& include_stack);

inline SlotSchema parse_slot_spec(const std::string& name, const nlohmann::json& j,
                                  const nlohmann::json& shared,
                                  std::vector<std::string>& include_stack) {
  if (!j.is_object()) throw Error("slot spec for '" + name + "' must be an object");
  SlotSchema s;
  s.name = name;
  nlohmann::json children = nlohmann::json::object();
  for (const auto& [key, val] : j.items()) {
    if (key == "$space") {
      s.space = val.get<std::string>();
    } else if (key == "$system") {
      s.system_only = val.get<bool>();
    } else if (key == "$reference") {
      s.allow_reference = val.get<bool>();
    } else if (key == "$include") {
      std::string inc = val.get<std::string>();
      if (std::find(include_stack.begin(), include_stack.end(), inc) != include_stack.end())
        throw Error("cyclic $include of shared subtree: " + inc);
      if (!shared.contains(inc)) throw Error("unknown shared subtree: " + inc);
      include_stack.push_back(inc);
      for (const auto& [ck, cv] : shared.at(inc).items()) {
        if (children.contains(ck))
          throw Error("slot '" + name + "': child '" + ck + "' defined twice");
        children[ck] = cv;
      }
      include_stack.pop_back();
    } else if (!key.empty() && key[0] == '$') {
      throw Error("unknown directive '" + key + "' in slot spec '" + name + "'");
    } else {
      if (children.contains(key))
        throw Error("slot '" + name + "': child '" + key + "' defined twice");
      children[key] = val;
    }
  }
  s.children = parse_slot_map(children, shared, include_stack);
  if (!s.space.empty() && !s.children.empty())
    throw Error("slot '" + name + "' mixes $space with structural children");
  if (s.space.empty() && s.children.empty() && !s.allow_reference)
    throw Error("slot '" + name + "' has neither a value space nor children");
  return s;
}

inline std::vector<SlotSchema> parse_slot_map(const nlohmann::json& j,
                                              const nlohmann::json& shared,
                                              std::vector<std::string>& include_stack) {
  std::vector<SlotSchema> out;
  for (const auto& [key, val] : j.items()) {
    check_plain_label(key);
    out.push_back(parse_slot_spec(key, val, shared, include_stack));
  }
  return out;
}

}  // namespace detail

inline Ontology Ontology::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("ontology config must be a json object");
  Ontology ont;
  ont.version = j.value("version", 1);

  auto read_labels = [&](const char* key) {
    std::set<std::string> out;
    for (const auto& v : j.value(key, nlohmann::json::array())) {
      std::string s = v.get<std::string>();
      check_plain_label(s);
      if (!out.insert(s).second) throw Error(std::string("duplicate label in ") + key + ": " + s);
    }
    return out;
  };
  ont.verbs = read_labels("verbs");
  ont.actions = read_labels("actions");
  ont.operators = read_labels("operators");
  if (ont.verbs.empty()) throw Error("ontology declares no verbs");
  if (!ont.operators.count("equals")) throw Error("ontology must declare the equals operator");

  const nlohmann::json spaces_j = j.value("value_spaces", nlohmann::json::object());
  for (const auto& [name, spec] : spaces_j.items()) {
    ValueSpace sp;
    sp.name = name;
    sp.open = spec.value("open", false);
    for (const auto& v : spec.value("values", nlohmann::json::array())) {
      std::string s = v.get<std::string>();
      check_plain_label(s);
      sp.values.push_back(s);
    }
    if (!sp.open && sp.values.empty())
      throw Error("value space '" + name + "' is closed but has no values");
    if (sp.open && !sp.values.empty())
      throw Error("value space '" + name + "' cannot be open and enumerated");
    ont.spaces[name] = std::move(sp);
  }

  nlohmann::json shared = j.value("shared", nlohmann::json::object());
  if (!j.contains("domains") || j.at("domains").empty())
    throw Error("ontology declares no domains");
  for (const auto& [name, spec] : j.at("domains").items()) {
    check_plain_label(name);
    DomainSchema d;
    d.name = name;
    for (const auto& v : spec.value("verbs", nlohmann::json::array())) {
      std::string s = v.get<std::string>();
      if (!ont.verbs.count(s))
        throw Error("domain '" + name + "' uses undeclared verb: " + s);
      d.verbs.insert(s);
    }
    if (d.verbs.empty()) throw Error("domain '" + name + "' supports no verbs");
    std::vector<std::string> include_stack;
    d.slots = detail::parse_slot_map(spec.value("slots", nlohmann::json::object()), shared,
                                     include_stack);
    ont.domains[name] = std::move(d);
  }

  // The label universe must be unambiguous for classification.
  auto check_space_refs = [&](const std::vector<SlotSchema>& slots, auto&& self) -> void {
    for (const SlotSchema& s : slots) {
      if (!s.space.empty() && !ont.spaces.count(s.space))
        throw Error("slot '" + s.name + "' references unknown value space: " + s.space);
      self(s.children, self);
    }
  };
  for (const auto& [name, d] : ont.domains) check_space_refs(d.slots, check_space_refs);

  KindClassifier c = ont.classifier();
  std::vector<std::pair<const char*, const std::set<std::string>*>> groups = {
      {"domain", &c.domains}, {"verb", &c.verbs},     {"action", &c.actions},
      {"operator", &c.operators}, {"slot", &c.slots}, {"value", &c.values},
  };
  for (size_t a = 0; a < groups.size(); ++a) {
    for (size_t b = a + 1; b < groups.size(); ++b) {
      for (const std::string& label : *groups[a].second)
        if (groups[b].second->count(label))
          throw Error(std::string("label '") + label + "' is both a " + groups[a].first +
                      " and a " + groups[b].first);
    }
  }
  for (const auto* group : {&c.domains, &c.verbs, &c.actions, &c.operators, &c.slots, &c.values})
    for (const std::string& label : *group)
      if (reserved_marker_labels().count(label) || label == "reference" || label == "user" ||
          label == "system")
        throw Error("label '" + label + "' collides with a reserved label");

  return ont;
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

struct ValidateCtx {
  const Ontology& ont;
  std::vector<Violation>& out;
  bool system_side = false;  // inside a system act
  bool in_prompt = false;    // under a prompt-class action: leaf slots allowed

  void add(ViolationKind kind, const std::string& path, const std::string& msg) const {
    out.push_back({kind, path, msg});
  }
};

inline std::string extend(const std::string& path, const std::string& label) {
  return path.empty() ? label : path + "/" + label;
}

void validate_domain_node(const Node& n, const ValidateCtx& ctx, const std::string& path,
                          bool in_reference);

inline void validate_value_children(const Node& equals, const SlotSchema& schema,
                                    const ValidateCtx& ctx, const std::string& path) {
  const ValueSpace& sp = ctx.ont.space(schema.space);
  for (const Node& v : equals.children) {
    std::string vpath = extend(path, v.label);
    if (!v.leaf()) {
      ctx.add(ViolationKind::StructureError, vpath, "value node has children");
      continue;
    }
    if (v.label == "reference") {
      ctx.add(ViolationKind::KindMismatch, vpath, "reference under a value slot");
      continue;
    }
    if (sp.open) continue;  // open space: any single-token text
    if (v.kind == NodeKind::OpenValue) {
      ctx.add(ViolationKind::KindMismatch, vpath,
              "open value under closed space '" + sp.name + "'");
    } else if (!sp.contains(v.label)) {
      ctx.add(ViolationKind::ValueOutsideVocab, vpath,
              "'" + v.label + "' not in value space '" + sp.name + "'");
    }
  }
  if (equals.children.empty())
    ctx.add(ViolationKind::StructureError, path, "equals with no value children");
}

inline void validate_reference_node(const Node& n, const ValidateCtx& ctx,
                                    const std::string& path) {
  if (n.children.size() != 1) {
    ctx.add(ViolationKind::StructureError, path, "reference must embed exactly one intent");
    return;
  }
  const Node& dom = n.children[0];
  if (!ctx.ont.domain(dom.label)) {
    ctx.add(ViolationKind::UnknownDomainReference, extend(path, dom.label),
            "reference to unknown domain '" + dom.label + "'");
    return;
  }
  validate_domain_node(dom, ctx, extend(path, dom.label), /*in_reference=*/true);
}

void validate_slot_node(const Node& n, const SlotSchema& schema, const ValidateCtx& ctx,
                        const std::string& path);

inline void validate_slot_set(const Node& parent, const std::vector<SlotSchema>& level,
                              const ValidateCtx& ctx, const std::string& path,
                              bool allow_reference) {
  for (const Node& ch : parent.children) {
    std::string cpath = extend(path, ch.label);
    if (ch.label == "reference") {
      if (!allow_reference) {
        ctx.add(ViolationKind::KindMismatch, cpath, "reference not allowed here");
      } else {
        validate_reference_node(ch, ctx, cpath);
      }
      continue;
    }
    if (ctx.system_side && !ctx.in_prompt && ch.label == "notExisted" && ch.leaf() &&
        ctx.ont.actions.count("notExisted")) {
      continue;  // result marker in inform acts
    }
    const SlotSchema* sub = nullptr;
    for (const SlotSchema& s : level)
      if (s.name == ch.label) sub = &s;
    if (!sub) {
      if (ctx.ont.classifier().slots.count(ch.label)) {
        ctx.add(ViolationKind::StructureError, cpath, "slot not valid at this position");
      } else {
        ctx.add(ViolationKind::UnknownLabel, cpath, "unknown label '" + ch.label + "'");
      }
      continue;
    }
    if (sub->system_only && !ctx.system_side) {
      ctx.add(ViolationKind::KindMismatch, cpath, "system-only slot in user state");
      continue;
    }
    validate_slot_node(ch, *sub, ctx, cpath);
  }
}

inline void validate_slot_node(const Node& n, const SlotSchema& schema,
                               const ValidateCtx& ctx, const std::string& path) {
  if (n.leaf()) {
    if (!ctx.in_prompt)
      ctx.add(ViolationKind::StructureError, path, "slot without equals constraint");
    return;
  }
  if (n.children.size() != 1 || n.children[0].label != "equals") {
    ctx.add(ViolationKind::StructureError, path,
            "slot must carry a single equals operator child");
    return;
  }
  const Node& eq = n.children[0];
  std::string epath = extend(path, "equals");
  if (!schema.space.empty()) {
    // In prompts a path may stop early at any slot, including value slots.
    if (ctx.in_prompt) {
      bool all_slots_or_values = true;
      for (const Node& v : eq.children)
        if (!v.leaf()) all_slots_or_values = false;
      if (!all_slots_or_values) {
        ctx.add(ViolationKind::StructureError, epath, "malformed prompt constraint");
        return;
      }
    }
    validate_value_children(eq, schema, ctx, epath);
    return;
  }
  if (eq.children.empty()) {
    ctx.add(ViolationKind::StructureError, epath, "equals with no children");
    return;
  }
  validate_slot_set(eq, schema.children, ctx, epath, schema.allow_reference);
}

inline void validate_verb_body(const Node& verb, const DomainSchema& schema,
                               const ValidateCtx& ctx, const std::string& path) {
  validate_slot_set(verb, schema.slots, ctx, path, /*allow_reference=*/false);
}

inline void validate_domain_node(const Node& n, const ValidateCtx& ctx,
                                 const std::string& path, bool in_reference) {
  const DomainSchema* schema = ctx.ont.domain(n.label);
  if (!schema) {
    ctx.add(in_reference ? ViolationKind::UnknownDomainReference : ViolationKind::UnknownLabel,
            path, "unknown domain '" + n.label + "'");
    return;
  }
  if (n.children.empty()) {
    ctx.add(ViolationKind::StructureError, path, "domain with no content");
    return;
  }
  bool verb_form = n.children.size() == 1 && ctx.ont.verbs.count(n.children[0].label);
  if (verb_form) {
    const Node& verb = n.children[0];
    std::string vpath = extend(path, verb.label);
    if (!schema->verbs.count(verb.label))
      ctx.add(ViolationKind::KindMismatch, vpath,
              "verb '" + verb.label + "' not supported by domain '" + n.label + "'");
    if (verb.children.empty() && !ctx.system_side && !in_reference)
      ctx.add(ViolationKind::StructureError, vpath, "intent with empty verb");
    validate_verb_body(verb, *schema, ctx, vpath);
    return;
  }
  if (!in_reference) {
    ctx.add(ViolationKind::StructureError, path,
            "domain must carry exactly one verb child");
    return;
  }
  // Reference-embedded intents may omit the verb and attach slots directly.
  validate_slot_set(n, schema->slots, ctx, path, /*allow_reference=*/false);
}

}  // namespace detail

inline std::vector<Violation> validate_user_state(const Node& tree, const Ontology& ont) {
  std::vector<Violation> out;
  detail::ValidateCtx ctx{ont, out};
  if (tree.label != "user" || tree.kind != NodeKind::RootUser) {
    ctx.add(ViolationKind::StructureError, tree.label, "user state must be rooted at 'user'");
    return out;
  }
  for (const Node& dom : tree.children)
    detail::validate_domain_node(dom, ctx, detail::extend("user", dom.label),
                                 /*in_reference=*/false);
  return out;
}

inline std::vector<Violation> validate_system_act(const Node& tree, const Ontology& ont) {
  std::vector<Violation> out;
  detail::ValidateCtx ctx{ont, out};
  ctx.system_side = true;
  if (tree.label != "system" || tree.kind != NodeKind::RootSystem) {
    ctx.add(ViolationKind::StructureError, tree.label, "system act must be rooted at 'system'");
    return out;
  }
  if (tree.children.empty()) {
    ctx.add(ViolationKind::StructureError, "system", "system act with no actions");
    return out;
  }
  for (const Node& act : tree.children) {
    std::string apath = detail::extend("system", act.label);
    if (!ont.actions.count(act.label)) {
      ctx.add(ViolationKind::UnknownLabel, apath, "unknown action '" + act.label + "'");
      continue;
    }
    detail::ValidateCtx actx = ctx;
    actx.in_prompt = ont.classifier().prompt_like.count(act.label) > 0;
    if (act.children.empty()) {
      ctx.add(ViolationKind::StructureError, apath, "action with no domain");
      continue;
    }
    for (const Node& dom : act.children)
      detail::validate_domain_node(dom, actx, detail::extend(apath, dom.label),
                                   /*in_reference=*/false);
  }
  return out;
}

inline std::vector<Violation> validate(const Node& tree, const Ontology& ont) {
  if (tree.label == "system") return validate_system_act(tree, ont);
  return validate_user_state(tree, ont);
}

}  // namespace treedst
