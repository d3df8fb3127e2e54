#pragma once

// Reverse-mode automatic differentiation on a tape of vector values.
//
// Every forward op records a closure that, replayed in reverse, accumulates
// gradients into its inputs and into any Param it touched. Everything is
// double precision so analytic gradients can be compared against central
// finite differences tightly.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "treedst/util.hpp"

namespace treedst {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// A learnable tensor (vectors are single-column matrices) plus its gradient
// accumulator and Adam moments.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;

  void init(std::string n, int rows, int cols, Rng& rng, double scale = -1.0) {
    name = std::move(n);
    if (scale < 0) scale = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> dist(-scale, scale);
    value = Mat::NullaryExpr(rows, cols, [&](Eigen::Index, Eigen::Index) {
      return dist(rng);
    });
    grad = Mat::Zero(rows, cols);
    adam_m = Mat::Zero(rows, cols);
    adam_v = Mat::Zero(rows, cols);
  }
};

class ParamSet {
 public:
  Param& add(const std::string& name, int rows, int cols, Rng& rng,
             double scale = -1.0) {
    params_.push_back(std::make_unique<Param>());
    params_.back()->init(name, rows, cols, rng, scale);
    return *params_.back();
  }

  std::vector<std::unique_ptr<Param>>& all() { return params_; }
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }

  Param* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p->grad.setZero();
  }

  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8) {
    ++adam_t_;
    double c1 = 1.0 - std::pow(beta1, adam_t_);
    double c2 = 1.0 - std::pow(beta2, adam_t_);
    for (auto& p : params_) {
      p->adam_m = beta1 * p->adam_m + (1.0 - beta1) * p->grad;
      p->adam_v = beta2 * p->adam_v + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
      Mat mhat = p->adam_m / c1;
      Mat vhat = p->adam_v / c2;
      p->value -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    }
  }

  bool finite() const {
    for (const auto& p : params_)
      if (!p->value.allFinite()) return false;
    return true;
  }

  std::vector<Mat> snapshot_values() const {
    std::vector<Mat> out;
    for (const auto& p : params_) out.push_back(p->value);
    return out;
  }

  void restore_values(const std::vector<Mat>& vals) {
    if (vals.size() != params_.size()) throw Error("snapshot shape mismatch");
    for (std::size_t i = 0; i < vals.size(); ++i) params_[i]->value = vals[i];
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
  long adam_t_ = 0;
};

class Tape {
 public:
  using Var = int;

  void reset() {
    vals_.clear();
    grads_.clear();
    backs_.clear();
  }

  std::size_t size() const { return vals_.size(); }
  const Vec& val(Var v) const { return vals_[v]; }
  const Vec& grad(Var v) const { return grads_[v]; }

  Var input(Vec v) { return fresh(std::move(v)); }

  Var zeros(int n) { return fresh(Vec::Zero(n)); }

  // Column `col` of an embedding table.
  Var embed(Param& table, int col) {
    Var y = fresh(table.value.col(col));
    push([this, &table, col, y] { table.grad.col(col) += grads_[y]; });
    return y;
  }

  Var matvec(Param& w, Var x) {
    Var y = fresh(w.value * vals_[x]);
    push([this, &w, x, y] {
      w.grad += grads_[y] * vals_[x].transpose();
      grads_[x] += w.value.transpose() * grads_[y];
    });
    return y;
  }

  // w * x + b, with b a single-column param.
  Var affine(Param& w, Param& b, Var x) {
    Var y = fresh(w.value * vals_[x] + b.value.col(0));
    push([this, &w, &b, x, y] {
      w.grad += grads_[y] * vals_[x].transpose();
      b.grad.col(0) += grads_[y];
      grads_[x] += w.value.transpose() * grads_[y];
    });
    return y;
  }

  Var add(Var a, Var b) {
    Var y = fresh(vals_[a] + vals_[b]);
    push([this, a, b, y] {
      grads_[a] += grads_[y];
      grads_[b] += grads_[y];
    });
    return y;
  }

  Var mul(Var a, Var b) {  // elementwise
    Var y = fresh(vals_[a].cwiseProduct(vals_[b]));
    push([this, a, b, y] {
      grads_[a] += grads_[y].cwiseProduct(vals_[b]);
      grads_[b] += grads_[y].cwiseProduct(vals_[a]);
    });
    return y;
  }

  Var scale(Var a, double s) {
    Var y = fresh(vals_[a] * s);
    push([this, a, s, y] { grads_[a] += grads_[y] * s; });
    return y;
  }

  Var sigmoid(Var a) {
    Var y = fresh(vals_[a].unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }));
    push([this, a, y] {
      const Vec& s = vals_[y];
      grads_[a] += grads_[y].cwiseProduct(s.cwiseProduct(Vec::Ones(s.size()) - s));
    });
    return y;
  }

  Var tanh_(Var a) {
    Var y = fresh(vals_[a].array().tanh().matrix());
    push([this, a, y] {
      const Vec& t = vals_[y];
      grads_[a] += grads_[y].cwiseProduct((1.0 - t.array().square()).matrix());
    });
    return y;
  }

  Var concat(const std::vector<Var>& xs) {
    int n = 0;
    for (Var x : xs) n += static_cast<int>(vals_[x].size());
    Vec v(n);
    int off = 0;
    for (Var x : xs) {
      v.segment(off, vals_[x].size()) = vals_[x];
      off += static_cast<int>(vals_[x].size());
    }
    Var y = fresh(std::move(v));
    push([this, xs, y] {
      int o = 0;
      for (Var x : xs) {
        int len = static_cast<int>(vals_[x].size());
        grads_[x] += grads_[y].segment(o, len);
        o += len;
      }
    });
    return y;
  }

  Var slice(Var a, int off, int len) {
    Var y = fresh(vals_[a].segment(off, len));
    push([this, a, off, len, y] { grads_[a].segment(off, len) += grads_[y]; });
    return y;
  }

  // Softmax with optional mask; masked entries get probability exactly 0 and
  // receive no gradient. `keep` may be empty (no mask).
  Var softmax(Var a, const std::vector<char>& keep = {}) {
    const Vec& x = vals_[a];
    int n = static_cast<int>(x.size());
    if (!keep.empty() && static_cast<int>(keep.size()) != n)
      throw Error("softmax mask length mismatch");
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
      if (keep.empty() || keep[i]) mx = std::max(mx, x[i]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw Error("softmax over fully masked vector");
    Vec e = Vec::Zero(n);
    double z = 0;
    for (int i = 0; i < n; ++i)
      if (keep.empty() || keep[i]) {
        e[i] = std::exp(x[i] - mx);
        z += e[i];
      }
    Var y = fresh(e / z);
    push([this, a, y] {
      const Vec& p = vals_[y];
      double inner = p.dot(grads_[y]);
      grads_[a] += p.cwiseProduct(grads_[y] - Vec::Constant(p.size(), inner));
    });
    return y;
  }

  Var dot(Var a, Var b) {
    Vec v(1);
    v[0] = vals_[a].dot(vals_[b]);
    Var y = fresh(std::move(v));
    push([this, a, b, y] {
      grads_[a] += grads_[y][0] * vals_[b];
      grads_[b] += grads_[y][0] * vals_[a];
    });
    return y;
  }

  // v * s[0] with s a 1-dim var.
  Var scale_by(Var v, Var s) {
    Var y = fresh(vals_[v] * vals_[s][0]);
    push([this, v, s, y] {
      grads_[v] += grads_[y] * vals_[s][0];
      grads_[s][0] += grads_[y].dot(vals_[v]);
    });
    return y;
  }

  // 1-dim: sum of entries of v at `idx` (empty -> 0).
  Var sum_at(Var v, std::vector<int> idx) {
    Vec s(1);
    s[0] = 0;
    for (int i : idx) s[0] += vals_[v][i];
    Var y = fresh(std::move(s));
    push([this, v, idx = std::move(idx), y] {
      for (int i : idx) grads_[v][i] += grads_[y][0];
    });
    return y;
  }

  // 1-dim: 1 - s[0].
  Var one_minus(Var s) {
    Vec v(1);
    v[0] = 1.0 - vals_[s][0];
    Var y = fresh(std::move(v));
    push([this, s, y] { grads_[s][0] -= grads_[y][0]; });
    return y;
  }

  // 1-dim: -log(max(s[0], floor)).
  Var neg_log(Var s, double floor = 1e-12) {
    double x = std::max(vals_[s][0], floor);
    Vec v(1);
    v[0] = -std::log(x);
    Var y = fresh(std::move(v));
    push([this, s, x, y] { grads_[s][0] += -grads_[y][0] / x; });
    return y;
  }

  // Mean of 1-dim vars.
  Var mean(const std::vector<Var>& xs) {
    if (xs.empty()) throw Error("mean of empty list");
    Vec v(1);
    v[0] = 0;
    for (Var x : xs) v[0] += vals_[x][0];
    v[0] /= static_cast<double>(xs.size());
    Var y = fresh(std::move(v));
    push([this, xs, y] {
      double g = grads_[y][0] / static_cast<double>(xs.size());
      for (Var x : xs) grads_[x][0] += g;
    });
    return y;
  }

  // Context vector sum_j w[j] * mem[j].
  Var weighted_sum(const std::vector<Var>& mem, Var w) {
    if (mem.empty()) throw Error("weighted_sum over empty memory");
    Vec v = Vec::Zero(vals_[mem[0]].size());
    for (std::size_t j = 0; j < mem.size(); ++j) v += vals_[w][j] * vals_[mem[j]];
    Var y = fresh(std::move(v));
    push([this, mem, w, y] {
      for (std::size_t j = 0; j < mem.size(); ++j) {
        grads_[mem[j]] += vals_[w][j] * grads_[y];
        grads_[w][static_cast<int>(j)] += grads_[y].dot(vals_[mem[j]]);
      }
    });
    return y;
  }

  // Attention keys for a memory: packed column-major [A x L] where column j is
  // U*mem[j] + b. Computed once per example, reused by every attn_scores call.
  Var attn_keys(Param& u, Param& b, const std::vector<Var>& mem) {
    int a = static_cast<int>(u.value.rows());
    int l = static_cast<int>(mem.size());
    Vec packed(a * l);
    for (int j = 0; j < l; ++j)
      packed.segment(static_cast<Eigen::Index>(j) * a, a) =
          u.value * vals_[mem[j]] + b.value.col(0);
    Var y = fresh(std::move(packed));
    push([this, &u, &b, mem, a, y] {
      for (std::size_t j = 0; j < mem.size(); ++j) {
        Vec gk = grads_[y].segment(static_cast<Eigen::Index>(j) * a, a);
        u.grad += gk * vals_[mem[j]].transpose();
        b.grad.col(0) += gk;
        grads_[mem[j]] += u.value.transpose() * gk;
      }
    });
    return y;
  }

  // Additive attention scores: score_j = v . tanh(Wq*g + keys_j), returned as
  // an L-vector. `keys` is the packed output of attn_keys.
  Var attn_scores(Param& wq, Param& v, Var g, Var keys) {
    int a = static_cast<int>(wq.value.rows());
    int l = static_cast<int>(vals_[keys].size()) / a;
    Vec q = wq.value * vals_[g];
    Mat t(a, l);
    for (int j = 0; j < l; ++j)
      t.col(j) = (q + vals_[keys].segment(static_cast<Eigen::Index>(j) * a, a))
                     .array()
                     .tanh()
                     .matrix();
    Vec scores = t.transpose() * v.value.col(0);
    Var y = fresh(std::move(scores));
    push([this, &wq, &v, g, keys, t, a, l, y] {
      Vec gq = Vec::Zero(a);
      for (int j = 0; j < l; ++j) {
        Vec dt = grads_[y][j] *
                 v.value.col(0).cwiseProduct((1.0 - t.col(j).array().square()).matrix());
        v.grad.col(0) += grads_[y][j] * t.col(j);
        grads_[keys].segment(static_cast<Eigen::Index>(j) * a, a) += dt;
        gq += dt;
      }
      wq.grad += gq * vals_[g].transpose();
      grads_[g] += wq.value.transpose() * gq;
    });
    return y;
  }

  void backward(Var loss) {
    if (vals_[loss].size() != 1) throw Error("backward target must be scalar");
    for (std::size_t i = 0; i < vals_.size(); ++i)
      if (grads_[i].size() == 0) grads_[i] = Vec::Zero(vals_[i].size());
    grads_[loss][0] = 1.0;
    for (auto it = backs_.rbegin(); it != backs_.rend(); ++it) (*it)();
  }

 private:
  Var fresh(Vec v) {
    vals_.push_back(std::move(v));
    grads_.emplace_back();
    return static_cast<Var>(vals_.size() - 1);
  }

  void push(std::function<void()> f) { backs_.push_back(std::move(f)); }

  std::vector<Vec> vals_;
  std::vector<Vec> grads_;
  std::vector<std::function<void()>> backs_;
};

using Var = Tape::Var;

}  // namespace treedst
