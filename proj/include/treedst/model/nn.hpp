#pragma once

// Recurrent building blocks on top of the tape: a fused-gate LSTM cell,
// multi-layer bidirectional encoders, and additive attention heads.

#include <string>
#include <vector>

#include "treedst/model/autodiff.hpp"
#include "treedst/util.hpp"

namespace treedst {

// One LSTM layer: a single weight matrix [4H x (in+H)] computes all gates.
// Gate order in the fused output: input, forget, output, candidate. The
// forget-gate bias starts at +1.
struct LstmCell {
  Param* w = nullptr;
  Param* b = nullptr;
  int in_dim = 0;
  int hidden = 0;

  void init(ParamSet& ps, const std::string& name, int in, int h, Rng& rng) {
    in_dim = in;
    hidden = h;
    w = &ps.add(name + ".w", 4 * h, in + h, rng);
    b = &ps.add(name + ".b", 4 * h, 1, rng, 0.0);
    b->value.block(h, 0, h, 1).setConstant(1.0);
  }

  struct State {
    Var h = -1;
    Var c = -1;
  };

  State start(Tape& t) const { return {t.zeros(hidden), t.zeros(hidden)}; }

  State step(Tape& t, Var x, State prev) const {
    Var z = t.affine(*w, *b, t.concat({x, prev.h}));
    Var gi = t.sigmoid(t.slice(z, 0, hidden));
    Var gf = t.sigmoid(t.slice(z, hidden, hidden));
    Var go = t.sigmoid(t.slice(z, 2 * hidden, hidden));
    Var gc = t.tanh_(t.slice(z, 3 * hidden, hidden));
    Var c = t.add(t.mul(gf, prev.c), t.mul(gi, gc));
    Var h = t.mul(go, t.tanh_(c));
    return {h, c};
  }
};

// Bidirectional encoder with `layers` stacked layers. The per-position output
// dimension is `hidden` (each direction contributes hidden/2); deeper layers
// read the previous layer's outputs.
struct BiEncoder {
  std::vector<LstmCell> fwd, bwd;
  int hidden = 0;

  void init(ParamSet& ps, const std::string& name, int in_dim, int h, int layers,
            Rng& rng) {
    if (h % 2 != 0) throw Error("encoder hidden size must be even");
    if (layers < 1) throw Error("encoder needs at least one layer");
    hidden = h;
    fwd.resize(layers);
    bwd.resize(layers);
    for (int l = 0; l < layers; ++l) {
      int in = l == 0 ? in_dim : h;
      fwd[l].init(ps, name + ".l" + std::to_string(l) + ".fwd", in, h / 2, rng);
      bwd[l].init(ps, name + ".l" + std::to_string(l) + ".bwd", in, h / 2, rng);
    }
  }

  std::vector<Var> run(Tape& t, const std::vector<Var>& inputs) const {
    if (inputs.empty()) throw Error("encoder input is empty");
    std::vector<Var> cur = inputs;
    const int n = static_cast<int>(inputs.size());
    for (std::size_t l = 0; l < fwd.size(); ++l) {
      std::vector<Var> hf(n), hb(n);
      LstmCell::State sf = fwd[l].start(t);
      for (int i = 0; i < n; ++i) {
        sf = fwd[l].step(t, cur[i], sf);
        hf[i] = sf.h;
      }
      LstmCell::State sb = bwd[l].start(t);
      for (int i = n - 1; i >= 0; --i) {
        sb = bwd[l].step(t, cur[i], sb);
        hb[i] = sb.h;
      }
      for (int i = 0; i < n; ++i) cur[i] = t.concat({hf[i], hb[i]});
    }
    return cur;
  }
};

// Additive attention head over one memory. Keys are precomputed once per
// memory; each query then yields logits, weights and a context vector.
struct AttnHead {
  Param* wq = nullptr;
  Param* uk = nullptr;
  Param* bk = nullptr;
  Param* v = nullptr;

  void init(ParamSet& ps, const std::string& name, int query_dim, int key_dim,
            int attn_dim, Rng& rng) {
    wq = &ps.add(name + ".wq", attn_dim, query_dim, rng);
    uk = &ps.add(name + ".uk", attn_dim, key_dim, rng);
    bk = &ps.add(name + ".bk", attn_dim, 1, rng, 0.0);
    v = &ps.add(name + ".v", attn_dim, 1, rng);
  }

  Var keys(Tape& t, const std::vector<Var>& mem) const {
    return t.attn_keys(*uk, *bk, mem);
  }

  Var logits(Tape& t, Var query, Var keys) const {
    return t.attn_scores(*wq, *v, query, keys);
  }
};

struct Attended {
  Var logits = -1;
  Var weights = -1;
  Var context = -1;
};

inline Attended attend(Tape& t, const AttnHead& head, Var query, Var keys,
                       const std::vector<Var>& mem) {
  Attended out;
  out.logits = head.logits(t, query, keys);
  out.weights = t.softmax(out.logits);
  out.context = t.weighted_sum(mem, out.weights);
  return out;
}

// Stacked unidirectional LSTM used by the decoder.
struct StackedLstm {
  std::vector<LstmCell> layers;

  void init(ParamSet& ps, const std::string& name, int in_dim, int hidden,
            int n_layers, Rng& rng) {
    if (n_layers < 1) throw Error("decoder needs at least one layer");
    layers.resize(n_layers);
    for (int l = 0; l < n_layers; ++l)
      layers[l].init(ps, name + ".l" + std::to_string(l), l == 0 ? in_dim : hidden,
                     hidden, rng);
  }

  using State = std::vector<LstmCell::State>;

  State start(Tape& t) const {
    State s;
    for (const auto& cell : layers) s.push_back(cell.start(t));
    return s;
  }

  // Returns the top-layer hidden state; `state` is updated in place.
  Var step(Tape& t, Var x, State& state) const {
    Var cur = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      state[l] = layers[l].step(t, cur, state[l]);
      cur = state[l].h;
    }
    return cur;
  }
};

}  // namespace treedst
