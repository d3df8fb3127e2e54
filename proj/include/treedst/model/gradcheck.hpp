#pragma once

// Finite-difference verification of every analytic gradient. The batch loss
// is treated as a black-box function of each parameter entry; central
// differences must agree with the tape's gradients to tight tolerance.

#include <string>
#include <vector>

#include "treedst/model/ted.hpp"

namespace treedst {

struct GradCheckResult {
  double max_rel_err = 0.0;
  long entries_checked = 0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

namespace detail {
inline double batch_loss_value(TedModel& model, const std::vector<TurnFeatures>& fs) {
  Tape tape;
  double total = 0.0;
  for (const TurnFeatures& f : fs) {
    tape.reset();
    total += tape.val(model.loss(tape, f))[0];
  }
  return total / static_cast<double>(fs.size());
}
}  // namespace detail

// Checks up to `max_entries_per_param` entries of each parameter (evenly
// strided so embeddings, gates and deep layers are all covered).
inline GradCheckResult grad_check(TedModel& model,
                                  const std::vector<TurnFeatures>& examples,
                                  int max_entries_per_param = 40, double h = 1e-5) {
  if (examples.empty()) throw Error("grad check needs at least one example");
  model.params().zero_grads();
  Tape tape;
  for (const TurnFeatures& f : examples) {
    tape.reset();
    Var loss = model.loss(tape, f);
    tape.backward(tape.scale(loss, 1.0 / static_cast<double>(examples.size())));
  }

  GradCheckResult res;
  for (auto& p : model.params().all()) {
    long n = p->value.size();
    long stride = std::max<long>(1, n / max_entries_per_param);
    for (long i = 0; i < n; i += stride) {
      double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      double up = detail::batch_loss_value(model, examples);
      p->value.data()[i] = saved - h;
      double down = detail::batch_loss_value(model, examples);
      p->value.data()[i] = saved;
      double numeric = (up - down) / (2.0 * h);
      double analytic = p->grad.data()[i];
      double rel = std::abs(analytic - numeric) /
                   std::max({std::abs(analytic), std::abs(numeric), 1e-5});
      ++res.entries_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p->name;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace treedst
