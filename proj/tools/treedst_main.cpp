// treedst: one binary, subcommand per pipeline stage. Every artifact embeds
// the configuration and seeds that produced it, so each stage is reproducible
// from its outputs alone.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "treedst/eval.hpp"
#include "treedst/model/gradcheck.hpp"
#include "treedst/model/track.hpp"
#include "treedst/model/train.hpp"
#include "treedst/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace treedst {
namespace {

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error(path + ": bad JSON: " + std::string(e.what()));
  }
  return j;
}

void write_json_file(const std::string& path, const json& j, int indent = 1) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  os << j.dump(indent) << "\n";
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  os << text;
}

// Labels that may take children in a decoded tree: everything the ontology
// names except value-space members.
std::set<std::string> branch_labels(const Ontology& ont) {
  std::set<std::string> out = {"user", "system", "reference"};
  for (const std::string& m : reserved_marker_labels()) out.insert(m);
  for (const std::string& v : ont.verbs) out.insert(v);
  for (const std::string& a : ont.actions) out.insert(a);
  for (const std::string& o : ont.operators) out.insert(o);
  std::function<void(const std::vector<SlotSchema>&)> walk =
      [&](const std::vector<SlotSchema>& slots) {
        for (const SlotSchema& s : slots) {
          out.insert(s.name);
          walk(s.children);
        }
      };
  for (const auto& [name, d] : ont.domains) {
    out.insert(name);
    walk(d.slots);
  }
  return out;
}

struct DataPaths {
  std::string ontology = "data/ontology.json";
  std::string grammar = "data/grammar.json";
};

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const DataPaths& dp, const std::string& config_path, int num,
                 std::uint64_t seed, const std::string& out_path,
                 const std::map<std::string, double>& overrides) {
  Ontology ont = Ontology::load_file(dp.ontology);
  Grammar gram = Grammar::load_file(dp.grammar, ont);
  SimulatorConfig cfg;
  if (!config_path.empty()) cfg = SimulatorConfig::from_json(read_json_file(config_path));
  if (auto it = overrides.find("max_turns"); it != overrides.end())
    cfg.max_turns = static_cast<int>(it->second);
  if (auto it = overrides.find("max_stack_depth"); it != overrides.end())
    cfg.max_stack_depth = static_cast<int>(it->second);
  if (auto it = overrides.find("p_interrupt"); it != overrides.end())
    cfg.p_interrupt = it->second;
  if (auto it = overrides.find("p_followup"); it != overrides.end())
    cfg.p_followup = it->second;

  Simulator sim(ont, gram, cfg);
  BatchResult batch = generate_batch(sim, seed, num);
  Corpus corpus;
  corpus.meta = make_corpus_meta(cfg, seed, num, batch.attempts);
  corpus.meta["ontology"] = dp.ontology;
  corpus.meta["grammar"] = dp.grammar;
  corpus.conversations = std::move(batch.conversations);

  int violations = 0;
  for (const Conversation& c : corpus.conversations)
    for (const TurnRecord& t : c.turns) {
      violations += static_cast<int>(validate_user_state(t.user_state, ont).size());
      violations += static_cast<int>(validate_system_act(t.system_act, ont).size());
    }
  if (violations > 0) throw Error("generated corpus has ontology violations");

  write_corpus_file(out_path, corpus);
  CorpusStats st = compute_stats(corpus);
  std::cout << "wrote " << out_path << ": " << st.conversations << " conversations, "
            << st.turns << " turns (avg " << st.avg_turns << "), acceptance rate "
            << static_cast<double>(num) / batch.attempts << " over " << batch.attempts
            << " seeds\n";
  return 0;
}

// ---------------------------------------------------------------------------
// stats / split / flatten

int cmd_stats(const std::string& in_path, const std::string& json_out, bool json_only) {
  Corpus corpus = read_corpus_file(in_path);
  CorpusStats st = compute_stats(corpus);
  json j = st.to_json();
  if (!json_out.empty()) write_json_file(json_out, j);
  if (json_only) {
    std::cout << j.dump(1) << "\n";
    return 0;
  }
  std::cout << "conversations:            " << st.conversations << "\n"
            << "turns:                    " << st.turns << "\n"
            << "avg turns/conversation:   " << st.avg_turns << "\n"
            << "avg tokens/utterance:     " << st.avg_utterance_tokens << "\n"
            << "distinct slots:           " << st.distinct_slots << "\n"
            << "distinct values:          " << st.distinct_values << "\n"
            << "multi-domain dialogs:     " << st.multi_domain_dialogs << "\n"
            << "compositional turns:      " << st.compositional_turns << "\n"
            << "cross-turn coref turns:   " << st.cross_turn_coref_turns << "\n"
            << "max stack depth:          " << st.max_stack_depth << "\n"
            << "user vocabulary:          " << st.user_vocab << "\n";
  std::cout << "update kinds:";
  for (const auto& [k, v] : st.by_kind) std::cout << "  " << k << "=" << v;
  std::cout << "\ntags:        ";
  for (const auto& [k, v] : st.by_tag) std::cout << "  " << k << "=" << v;
  std::cout << "\nstatus:      ";
  for (const auto& [k, v] : st.by_status) std::cout << "  " << k << "=" << v;
  std::cout << "\n(full-scale reference: 27280 dialogs / 167507 turns / 7.14 avg "
               "turns / 287 slots — context, not a desk target)\n";
  return 0;
}

int cmd_split(const std::string& in_path, const std::string& train_path,
              const std::string& dev_path, const std::string& test_path,
              const std::string& fractions, std::uint64_t seed) {
  Corpus corpus = read_corpus_file(in_path);
  SplitFractions f;
  if (!fractions.empty()) {
    std::vector<std::string> nums;
    std::string cur;
    for (char ch : fractions) {
      if (ch == ',') {
        nums.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    nums.push_back(cur);
    if (nums.size() != 3) throw Error("--fractions wants three comma-separated numbers");
    f.train = std::stod(nums[0]);
    f.dev = std::stod(nums[1]);
    f.test = std::stod(nums[2]);
  }
  CorpusSplit sp = split_corpus(corpus, f, seed);
  write_corpus_file(train_path, sp.train);
  write_corpus_file(dev_path, sp.dev);
  write_corpus_file(test_path, sp.test);
  std::cout << "split " << corpus.conversations.size() << " conversations into "
            << sp.train.conversations.size() << " train / "
            << sp.dev.conversations.size() << " dev / " << sp.test.conversations.size()
            << " test (seed " << seed << ")\n";
  return 0;
}

int cmd_flatten(const std::string& in_path, const std::string& out_path) {
  Corpus corpus = read_corpus_file(in_path);
  Corpus flat = derive_flat_corpus(corpus);
  write_corpus_file(out_path, flat);
  std::cout << "wrote flat corpus " << out_path << " (" << flat.conversations.size()
            << " conversations)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const DataPaths& dp, const std::string& config_path,
              const std::string& train_path, const std::string& dev_path,
              const std::string& mode, const std::string& ckpt_path,
              const std::string& log_path, const std::map<std::string, double>& num_over) {
  json cfg_j = config_path.empty() ? json::object() : read_json_file(config_path);
  TedConfig ted = TedConfig::from_json(cfg_j.value("ted", json::object()));
  TrainConfig trc = TrainConfig::from_json(cfg_j.value("train", json::object()));
  json data_j = cfg_j.value("data", json::object());
  std::string train_file = !train_path.empty() ? train_path
                                               : data_j.value("train", std::string());
  std::string dev_file = !dev_path.empty() ? dev_path : data_j.value("dev", std::string());
  if (!mode.empty()) ted.mode = mode;
  auto override_num = [&](const char* key, auto setter) {
    if (auto it = num_over.find(key); it != num_over.end()) setter(it->second);
  };
  override_num("epochs", [&](double v) { trc.max_epochs = static_cast<int>(v); });
  override_num("batch", [&](double v) { trc.batch_size = static_cast<int>(v); });
  override_num("lr", [&](double v) { trc.lr = v; });
  override_num("patience", [&](double v) { trc.patience = static_cast<int>(v); });
  override_num("validate_every", [&](double v) { trc.validate_every = static_cast<int>(v); });
  override_num("seed", [&](double v) {
    trc.seed = static_cast<std::uint64_t>(v);
    ted.seed = static_cast<std::uint64_t>(v);
  });
  override_num("hidden", [&](double v) {
    ted.dec_hidden = static_cast<int>(v);
    ted.utt_hidden = static_cast<int>(v);
  });
  if (train_file.empty()) throw Error("no training corpus (use --train or config data.train)");
  if (ted.mode != "vanilla" && ted.mode != "pp")
    throw Error("mode must be 'vanilla' or 'pp'");

  Ontology ont = Ontology::load_file(dp.ontology);
  Corpus train_c = read_corpus_file(train_file);
  Corpus dev_c = dev_file.empty() ? Corpus{} : read_corpus_file(dev_file);
  std::vector<TurnExample> train_ex = make_examples(train_c);
  std::vector<TurnExample> dev_ex = make_examples(dev_c);
  Vocab words, nodes;
  build_vocabs(train_ex, words, nodes);
  TedModel model(ted, words, nodes, branch_labels(ont));

  std::ofstream log_os;
  std::ostream* log = nullptr;
  if (!log_path.empty()) {
    log_os.open(log_path);
    if (!log_os) throw Error("cannot open " + log_path + " for writing");
    log = &log_os;
  }
  TrainResult res = train_model(model, train_ex, dev_ex, trc, log);

  json trained = res.to_json();
  trained["train_config"] = trc.to_json();
  trained["train_corpus"] = train_file;
  trained["dev_corpus"] = dev_file;
  write_json_file(ckpt_path, model.checkpoint(trained), -1);
  std::cout << "mode " << ted.mode << ": " << res.log.size() << " epochs, final loss "
            << res.log.back().loss << ", best dev EM " << res.best_dev_em
            << " (epoch " << res.best_epoch << ")"
            << (res.early_stopped ? ", early stopped" : "") << ", "
            << res.avg_epoch_seconds << " s/epoch\n"
            << "wrote " << ckpt_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval / track / report

std::vector<PredRecord> run_predictions(TedModel& model, const Corpus& corpus,
                                        const std::string& mode) {
  std::vector<PredRecord> preds;
  if (mode == "oracle" || mode == "both") {
    auto p = predict_corpus(model, corpus, HistoryMode::Oracle);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  if (mode == "predicted" || mode == "both") {
    auto p = predict_corpus(model, corpus, HistoryMode::Predicted);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  if (preds.empty()) throw Error("mode must be oracle, predicted or both");
  return preds;
}

int cmd_eval(const std::string& ckpt_path, const std::string& corpus_path,
             const std::string& mode, const std::string& dump_path,
             const std::string& report_path, const std::string& csv_path) {
  TedModel model = TedModel::from_checkpoint(read_json_file(ckpt_path));
  Corpus corpus = read_corpus_file(corpus_path);
  std::vector<PredRecord> preds = run_predictions(model, corpus, mode);
  if (!dump_path.empty()) write_predictions_file(dump_path, preds);
  EvalReport rep = build_report(preds);
  if (!report_path.empty()) write_json_file(report_path, rep.to_json());
  if (!csv_path.empty()) write_text_file(csv_path, rep.curves_csv());
  std::cout << rep.render_text();
  return 0;
}

int cmd_track(const std::string& ckpt_path, const std::string& corpus_path,
              const std::string& mode, const std::string& dialog_id,
              const std::string& out_path) {
  TedModel model = TedModel::from_checkpoint(read_json_file(ckpt_path));
  Corpus corpus = read_corpus_file(corpus_path);
  HistoryMode hm = history_mode_from_name(mode);
  std::vector<PredRecord> preds;
  for (const Conversation& conv : corpus.conversations) {
    if (!dialog_id.empty() && conv.id != dialog_id) continue;
    TrackedDialog td = track_dialog(model, conv, hm);
    for (const TrackedTurn& t : td.turns) {
      if (!dialog_id.empty()) {
        std::cout << "--- " << conv.id << " turn " << t.turn_index
                  << (tree_equal(t.predicted, t.gold) ? "  [match]" : "  [MISS]") << "\n"
                  << "predicted:\n" << render_dotted(t.predicted) << "\n"
                  << "gold:\n" << render_dotted(t.gold) << "\n";
      }
      PredRecord r;
      r.dialog_id = conv.id;
      r.turn_index = t.turn_index;
      r.gold = t.gold;
      r.predicted = t.predicted;
      r.mode = td.mode;
      r.tags = t.tags;
      preds.push_back(std::move(r));
    }
  }
  if (preds.empty()) throw Error(dialog_id.empty() ? "corpus is empty"
                                                   : "no dialog with id " + dialog_id);
  if (!out_path.empty()) write_predictions_file(out_path, preds);
  std::vector<Node> p, g;
  for (const PredRecord& r : preds) {
    p.push_back(r.predicted);
    g.push_back(r.gold);
  }
  std::cout << "tracked " << preds.size() << " turns (" << mode << " history), EM "
            << exact_match(p, g) << "\n";
  return 0;
}

int cmd_report(const std::string& dump_path, const std::string& json_out,
               const std::string& csv_out) {
  std::vector<PredRecord> preds = read_predictions_file(dump_path);
  EvalReport rep = build_report(preds);
  if (!json_out.empty()) write_json_file(json_out, rep.to_json());
  if (!csv_out.empty()) write_text_file(csv_out, rep.curves_csv());
  std::cout << rep.render_text();
  return 0;
}

int cmd_flat_vs_tree(const std::string& corpus_path, const std::string& out_path,
                     std::uint64_t seed, int epochs) {
  Corpus corpus = read_corpus_file(corpus_path);
  CorpusSplit sp = split_corpus(corpus, {}, seed);
  TedConfig ted;
  ted.seed = seed;
  TrainConfig trc;
  trc.seed = seed;
  trc.max_epochs = epochs;
  trc.lr = 3e-3;
  FlatVsTreeResult res = compare_flat_vs_tree(sp.train, sp.dev, sp.test, ted, trc);
  res.report["corpus"] = corpus_path;
  res.report["split_seed"] = seed;
  if (!out_path.empty()) write_json_file(out_path, res.report);
  std::cout << "tree EM " << res.report["tree_em"] << ", tree EM after flattening "
            << res.report["tree_em_after_flattening"] << ", flat EM (slot-value sets) "
            << res.report["flat_em_slot_value_sets"] << "\n"
            << "(full-scale reference: tree 0.622 vs flat 0.535 — context only)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const DataPaths& dp, const std::string& mode, int entries) {
  Ontology ont = Ontology::load_file(dp.ontology);
  Grammar gram = Grammar::load_file(dp.grammar, ont);
  Simulator sim(ont, gram);
  BatchResult batch = generate_batch(sim, 42, 2);
  Corpus corpus;
  corpus.conversations = std::move(batch.conversations);
  std::vector<TurnExample> exs = make_examples(corpus);
  Vocab words, nodes;
  build_vocabs(exs, words, nodes);
  std::vector<TurnFeatures> fs = {featurize(exs[0]), featurize(exs[1])};

  bool ok = true;
  for (const std::string& m : {std::string("vanilla"), std::string("pp")}) {
    if (mode != "both" && mode != m) continue;
    TedConfig tc;
    tc.mode = m;
    tc.word_dim = 5;
    tc.node_dim = 4;
    tc.utt_hidden = 6;
    tc.act_hidden = 6;
    tc.state_hidden = 6;
    tc.dec_hidden = 6;
    tc.attn_dim = 4;
    tc.enc_layers = 2;
    tc.dec_layers = 2;
    tc.seed = 3;
    TedModel model(tc, words, nodes, branch_labels(ont));
    GradCheckResult gr = grad_check(model, fs, entries);
    std::cout << m << ": max relative gradient error " << gr.max_rel_err << " over "
              << gr.entries_checked << " entries (worst " << gr.worst_param << ")\n";
    ok = ok && gr.max_rel_err < 1e-4;
  }
  std::cout << (ok ? "gradient check passed\n" : "gradient check FAILED\n");
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// demo: the whole pipeline on a tiny config, deterministic end to end

int cmd_demo(const DataPaths& dp, std::uint64_t seed, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

  Ontology ont = Ontology::load_file(dp.ontology);
  Grammar gram = Grammar::load_file(dp.grammar, ont);
  SimulatorConfig scfg;
  scfg.max_turns = 8;
  Simulator sim(ont, gram, scfg);
  BatchResult batch = generate_batch(sim, seed, 24);
  Corpus corpus;
  corpus.meta = make_corpus_meta(scfg, seed, 24, batch.attempts);
  corpus.conversations = std::move(batch.conversations);
  write_corpus_file(path("corpus.jsonl"), corpus);

  CorpusSplit sp = split_corpus(corpus, {0.75, 0.125, 0.125}, seed);
  write_corpus_file(path("train.jsonl"), sp.train);
  write_corpus_file(path("dev.jsonl"), sp.dev);
  write_corpus_file(path("test.jsonl"), sp.test);

  std::vector<TurnExample> train_ex = make_examples(sp.train);
  std::vector<TurnExample> dev_ex = make_examples(sp.dev);
  Vocab words, nodes;
  build_vocabs(train_ex, words, nodes);
  TedConfig ted;
  ted.mode = "vanilla";
  ted.seed = seed;
  TrainConfig trc;
  trc.seed = seed;
  trc.max_epochs = 250;
  trc.validate_every = 10;
  trc.patience = 8;
  trc.lr = 3e-3;
  TedModel model(ted, words, nodes, branch_labels(ont));
  std::ofstream log_os(path("train_log.jsonl"));
  TrainResult res = train_model(model, train_ex, dev_ex, trc, &log_os);

  // Timing lives in its own file so the main artifacts are byte-stable.
  write_json_file(path("timing.json"),
                  {{"total_seconds", res.total_seconds},
                   {"avg_epoch_seconds", res.avg_epoch_seconds}});
  json trained = {{"best_dev_em", res.best_dev_em},
                  {"best_epoch", res.best_epoch},
                  {"epochs", static_cast<int>(res.log.size())},
                  {"seed", seed}};
  write_json_file(path("checkpoint.json"), model.checkpoint(trained), -1);

  std::vector<PredRecord> preds = run_predictions(model, sp.test, "both");
  write_predictions_file(path("predictions.jsonl"), preds);
  EvalReport rep = build_report(preds);
  write_json_file(path("report.json"), rep.to_json());
  write_text_file(path("curves.csv"), rep.curves_csv());

  std::cout << "demo artifacts in " << out_dir << "\n" << rep.render_text();
  std::cout << "demo complete (seed " << seed << ")\n";
  return 0;
}

}  // namespace
}  // namespace treedst

int main(int argc, char** argv) {
  using namespace treedst;
  CLI::App app{"dialog state tracking toolkit: trees, simulation, tracking"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  DataPaths dp;
  int exit_code = 0;

  // simulate
  auto* sc = app.add_subcommand("simulate", "generate an annotated conversation corpus");
  std::string sc_config, sc_out = "corpus.jsonl";
  int sc_num = 100;
  std::uint64_t sc_seed = 1;
  std::map<std::string, double> sc_over;
  double sc_maxturns = -1, sc_depth = -1, sc_pint = -1, sc_pfol = -1;
  sc->add_option("--ontology", dp.ontology, "ontology file");
  sc->add_option("--grammar", dp.grammar, "grammar file");
  sc->add_option("--config", sc_config, "simulator config JSON");
  sc->add_option("--num", sc_num, "number of conversations");
  sc->add_option("--seed", sc_seed, "base seed");
  sc->add_option("--out", sc_out, "output corpus path");
  sc->add_option("--max-turns", sc_maxturns, "override: turn cap");
  sc->add_option("--max-stack-depth", sc_depth, "override: stack depth cap");
  sc->add_option("--p-interrupt", sc_pint, "override: interruption probability");
  sc->add_option("--p-followup", sc_pfol, "override: follow-up goal probability");
  sc->callback([&] {
    if (sc_maxturns >= 0) sc_over["max_turns"] = sc_maxturns;
    if (sc_depth >= 0) sc_over["max_stack_depth"] = sc_depth;
    if (sc_pint >= 0) sc_over["p_interrupt"] = sc_pint;
    if (sc_pfol >= 0) sc_over["p_followup"] = sc_pfol;
    exit_code = cmd_simulate(dp, sc_config, sc_num, sc_seed, sc_out, sc_over);
  });

  // stats
  auto* st = app.add_subcommand("stats", "corpus statistics");
  std::string st_in, st_json;
  bool st_json_only = false;
  st->add_option("--in", st_in, "corpus path")->required();
  st->add_option("--out", st_json, "also write JSON stats here");
  st->add_flag("--json", st_json_only, "print JSON instead of the table");
  st->callback([&] { exit_code = cmd_stats(st_in, st_json, st_json_only); });

  // split
  auto* sp = app.add_subcommand("split", "split a corpus by conversation");
  std::string sp_in, sp_train = "train.jsonl", sp_dev = "dev.jsonl",
              sp_test = "test.jsonl", sp_frac;
  std::uint64_t sp_seed = 1;
  sp->add_option("--in", sp_in, "corpus path")->required();
  sp->add_option("--train", sp_train, "train output");
  sp->add_option("--dev", sp_dev, "dev output");
  sp->add_option("--test", sp_test, "test output");
  sp->add_option("--fractions", sp_frac, "train,dev,test fractions (default 0.8,0.1,0.1)");
  sp->add_option("--seed", sp_seed, "shuffle seed");
  sp->callback(
      [&] { exit_code = cmd_split(sp_in, sp_train, sp_dev, sp_test, sp_frac, sp_seed); });

  // flatten
  auto* fl = app.add_subcommand("flatten", "derive the flat slot-value corpus");
  std::string fl_in, fl_out = "flat.jsonl";
  fl->add_option("--in", fl_in, "corpus path")->required();
  fl->add_option("--out", fl_out, "flat corpus output");
  fl->callback([&] { exit_code = cmd_flatten(fl_in, fl_out); });

  // train
  auto* tr = app.add_subcommand("train", "train a tracker");
  std::string tr_config, tr_train, tr_dev, tr_mode, tr_ckpt = "checkpoint.json", tr_log;
  double tr_epochs = -1, tr_batch = -1, tr_lr = -1, tr_seed = -1, tr_hidden = -1;
  tr->add_option("--ontology", dp.ontology, "ontology file");
  tr->add_option("--config", tr_config, "config JSON with ted/train/data sections");
  tr->add_option("--train", tr_train, "training corpus (overrides config)");
  tr->add_option("--dev", tr_dev, "dev corpus (overrides config)");
  tr->add_option("--mode", tr_mode, "vanilla or pp (overrides config)");
  tr->add_option("--ckpt", tr_ckpt, "checkpoint output");
  tr->add_option("--log", tr_log, "training log JSONL output");
  tr->add_option("--epochs", tr_epochs, "override: max epochs");
  tr->add_option("--batch", tr_batch, "override: batch size");
  tr->add_option("--lr", tr_lr, "override: learning rate");
  tr->add_option("--seed", tr_seed, "override: seed");
  tr->add_option("--hidden", tr_hidden, "override: encoder/decoder hidden size");
  double tr_patience = -1, tr_valevery = -1;
  tr->add_option("--patience", tr_patience, "override: non-improving validations before stop");
  tr->add_option("--validate-every", tr_valevery, "override: epochs between validations");
  tr->callback([&] {
    std::map<std::string, double> over;
    if (tr_epochs >= 0) over["epochs"] = tr_epochs;
    if (tr_batch >= 0) over["batch"] = tr_batch;
    if (tr_lr >= 0) over["lr"] = tr_lr;
    if (tr_seed >= 0) over["seed"] = tr_seed;
    if (tr_hidden >= 0) over["hidden"] = tr_hidden;
    if (tr_patience >= 0) over["patience"] = tr_patience;
    if (tr_valevery >= 0) over["validate_every"] = tr_valevery;
    exit_code = cmd_train(dp, tr_config, tr_train, tr_dev, tr_mode, tr_ckpt, tr_log, over);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  std::string ev_ckpt, ev_corpus, ev_mode = "oracle", ev_dump, ev_report, ev_csv;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--corpus", ev_corpus, "corpus path")->required();
  ev->add_option("--mode", ev_mode, "oracle, predicted or both");
  ev->add_option("--dump", ev_dump, "write prediction dump JSONL");
  ev->add_option("--report", ev_report, "write report JSON");
  ev->add_option("--csv", ev_csv, "write per-turn curves CSV");
  ev->callback(
      [&] { exit_code = cmd_eval(ev_ckpt, ev_corpus, ev_mode, ev_dump, ev_report, ev_csv); });

  // track
  auto* tk = app.add_subcommand("track", "run the tracker over whole dialogs");
  std::string tk_ckpt, tk_corpus, tk_mode = "predicted", tk_dialog, tk_out;
  tk->add_option("--ckpt", tk_ckpt, "checkpoint path")->required();
  tk->add_option("--corpus", tk_corpus, "corpus path")->required();
  tk->add_option("--mode", tk_mode, "oracle or predicted history");
  tk->add_option("--dialog", tk_dialog, "print trees for one dialog id");
  tk->add_option("--out", tk_out, "write prediction dump JSONL");
  tk->callback(
      [&] { exit_code = cmd_track(tk_ckpt, tk_corpus, tk_mode, tk_dialog, tk_out); });

  // report
  auto* rp = app.add_subcommand("report", "build reports from dumps, or run the "
                                          "flat-vs-tree experiment");
  std::string rp_dump, rp_json, rp_csv, rp_corpus, rp_out;
  bool rp_fvt = false;
  std::uint64_t rp_seed = 1;
  int rp_epochs = 60;
  rp->add_option("--dump", rp_dump, "prediction dump JSONL");
  rp->add_option("--json", rp_json, "write report JSON");
  rp->add_option("--csv", rp_csv, "write curves CSV");
  rp->add_flag("--flat-vs-tree", rp_fvt, "train tree and flat models and compare");
  rp->add_option("--corpus", rp_corpus, "corpus for --flat-vs-tree");
  rp->add_option("--out", rp_out, "report output for --flat-vs-tree");
  rp->add_option("--seed", rp_seed, "seed for --flat-vs-tree");
  rp->add_option("--epochs", rp_epochs, "training epochs for --flat-vs-tree");
  rp->callback([&] {
    if (rp_fvt) {
      if (rp_corpus.empty()) throw CLI::ValidationError("--flat-vs-tree needs --corpus");
      exit_code = cmd_flat_vs_tree(rp_corpus, rp_out, rp_seed, rp_epochs);
    } else {
      if (rp_dump.empty()) throw CLI::ValidationError("report needs --dump (or --flat-vs-tree)");
      exit_code = cmd_report(rp_dump, rp_json, rp_csv);
    }
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "verify gradients against finite differences");
  std::string gc_mode = "both";
  int gc_entries = 40;
  gc->add_option("--ontology", dp.ontology, "ontology file");
  gc->add_option("--grammar", dp.grammar, "grammar file");
  gc->add_option("--mode", gc_mode, "vanilla, pp or both");
  gc->add_option("--entries", gc_entries, "entries checked per parameter");
  gc->callback([&] { exit_code = cmd_gradcheck(dp, gc_mode, gc_entries); });

  // demo
  auto* dm = app.add_subcommand("demo", "full pipeline on a tiny config");
  std::uint64_t dm_seed = 7;
  std::string dm_out = "demo_out";
  dm->add_option("--ontology", dp.ontology, "ontology file");
  dm->add_option("--grammar", dp.grammar, "grammar file");
  dm->add_option("--seed", dm_seed, "pipeline seed");
  dm->add_option("--out-dir", dm_out, "artifact directory");
  dm->callback([&] { exit_code = cmd_demo(dp, dm_seed, dm_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage problems (missing subcommand, unknown flags) all exit with 2;
    // --help and --version stay 0.
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
