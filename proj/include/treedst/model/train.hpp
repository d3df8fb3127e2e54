#pragma once

// Training: Adam over shuffled mini-batches, dev exact match measured every
// few epochs, early stopping when validation stops improving, best parameters
// restored at the end. Deterministic for a fixed seed.

#include <algorithm>
#include <chrono>
#include <numeric>
#include <ostream>
#include <vector>

#include "json.hpp"
#include "treedst/model/ted.hpp"

namespace treedst {

struct TrainConfig {
  int batch_size = 10;
  int max_epochs = 200;
  int validate_every = 2;   // epochs between validations
  int patience = 4;         // consecutive non-improving validations before stopping
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  bool restore_best = true;

  nlohmann::json to_json() const {
    return {{"batch_size", batch_size}, {"max_epochs", max_epochs},
            {"validate_every", validate_every}, {"patience", patience},
            {"lr", lr}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps},
            {"seed", seed}, {"restore_best", restore_best}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.validate_every = j.value("validate_every", c.validate_every);
    c.patience = j.value("patience", c.patience);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.seed = j.value("seed", c.seed);
    c.restore_best = j.value("restore_best", c.restore_best);
    if (c.batch_size < 1 || c.max_epochs < 1 || c.validate_every < 1 || c.patience < 1)
      throw Error("training config values must be positive");
    return c;
  }
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double dev_em = -1.0;  // negative when this epoch had no validation
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_dev_em = 0.0;
  int best_epoch = 0;
  bool early_stopped = false;
  double total_seconds = 0.0;
  double avg_epoch_seconds = 0.0;

  nlohmann::json to_json() const {
    return {{"best_dev_em", best_dev_em}, {"best_epoch", best_epoch},
            {"early_stopped", early_stopped}, {"total_seconds", total_seconds},
            {"avg_epoch_seconds", avg_epoch_seconds},
            {"epochs", static_cast<int>(log.size())}};
  }
};

inline double exact_match_on(TedModel& model, const std::vector<TurnFeatures>& feats) {
  if (feats.empty()) return 0.0;
  int correct = 0;
  for (const TurnFeatures& f : feats)
    if (tree_equal(model.greedy(f).tree, f.target)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(feats.size());
}

inline TrainResult train_model(TedModel& model, const std::vector<TurnExample>& train,
                               const std::vector<TurnExample>& dev, TrainConfig cfg,
                               std::ostream* log_stream = nullptr) {
  if (train.empty()) throw Error("training set is empty");
  std::vector<TurnFeatures> train_f, dev_f;
  for (const TurnExample& ex : train) train_f.push_back(featurize(ex));
  for (const TurnExample& ex : dev) dev_f.push_back(featurize(ex));

  Rng rng(cfg.seed);
  std::vector<int> order(train_f.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult res;
  std::vector<Mat> best;
  int evals_since_best = 0;
  bool have_eval = false;
  auto t_start = std::chrono::steady_clock::now();

  Tape tape;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto e_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      std::size_t end = std::min(order.size(), off + cfg.batch_size);
      model.params().zero_grads();
      double batch_loss = 0.0;
      for (std::size_t k = off; k < end; ++k) {
        tape.reset();
        Var loss = model.loss(tape, train_f[order[k]]);
        // Per-example losses average into the batch objective.
        Var scaled = tape.scale(loss, 1.0 / static_cast<double>(end - off));
        tape.backward(scaled);
        batch_loss += tape.val(loss)[0];
      }
      batch_loss /= static_cast<double>(end - off);
      if (!std::isfinite(batch_loss)) throw Error("training diverged: loss is not finite");
      model.params().adam_step(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
      if (!model.params().finite())
        throw Error("training diverged: parameters are not finite");
      epoch_loss += batch_loss * static_cast<double>(end - off);
    }
    epoch_loss /= static_cast<double>(order.size());

    EpochLog el;
    el.epoch = epoch;
    el.loss = epoch_loss;
    bool validate = epoch % cfg.validate_every == 0 && !dev_f.empty();
    if (validate) {
      double em = exact_match_on(model, dev_f);
      el.dev_em = em;
      if (!have_eval || em > res.best_dev_em) {
        res.best_dev_em = em;
        res.best_epoch = epoch;
        best = model.params().snapshot_values();
        evals_since_best = 0;
        have_eval = true;
      } else {
        ++evals_since_best;
      }
    }
    el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                               e_start)
                     .count();
    res.log.push_back(el);
    if (log_stream) {
      nlohmann::json line = {{"epoch", el.epoch}, {"loss", el.loss},
                             {"seconds", el.seconds}};
      if (el.dev_em >= 0) line["dev_em"] = el.dev_em;
      (*log_stream) << line.dump() << "\n";
    }
    if (validate && evals_since_best >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }

  if (cfg.restore_best && have_eval) model.params().restore_values(best);
  res.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  res.avg_epoch_seconds = res.log.empty() ? 0.0 : res.total_seconds / res.log.size();
  return res;
}

}  // namespace treedst
