#include "prism/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>

namespace prism::autodiff {

Parameter::Parameter(std::string n, RealTensor v, bool decays)
    : name(std::move(n)), value(std::move(v)), grad(value.size(), 0.0), decay(decays) {}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

Parameter& ParameterSet::add(std::string name, RealTensor value, bool decay) {
  if (find(name) != nullptr) throw std::logic_error("parameter registered twice: " + name);
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value), decay));
  return *params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i]->name == name) return i;
  }
  throw std::out_of_range("unknown parameter: " + name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

Var Tape::constant(RealTensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, {}, &p, record_ && p.trainable});
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push(RealTensor value, std::vector<int> inputs, BackwardFn fn) {
  const int self = static_cast<int>(nodes_.size());
  bool needs = false;
  for (int in : inputs) {
    if (in < 0 || in >= self) throw std::logic_error("tape: input does not precede its consumer");
    needs = needs || nodes_[in].requires_grad;
  }
  needs = needs && record_;
  Node node{std::move(value), {}, {}, {}, nullptr, needs};
  if (needs) {
    node.inputs = std::move(inputs);
    node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return Var{self};
}

void Tape::truncate(std::size_t n) {
  if (n < nodes_.size()) nodes_.resize(n);
}

void Tape::backward(Var loss) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size())) throw std::invalid_argument("backward: bad loss node");
  if (nodes_[loss.id].value.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  for (auto& n : nodes_) {
    if (n.requires_grad) {
      n.grad.assign(n.value.size(), 0.0);
    } else {
      n.grad.clear();
    }
  }
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    auto& n = nodes_[id];
    if (!n.requires_grad) continue;
    if (n.param != nullptr) {
      auto& g = n.param->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

namespace {

void require_same(const Tape& t, Var a, Var b, const char* what) {
  if (t.shape(a) != t.shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

void require_planar(const Tape& t, Var a, const char* what) {
  const auto& s = t.shape(a);
  if (s.empty() || s[0] != 2) throw std::invalid_argument(std::string(what) + ": expected a planar complex tensor");
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  require_same(t, a, b, "add");
  RealTensor out = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.push(std::move(out), {a.id, b.id}, [a, b](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto& gv = tp.grad(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same(t, a, b, "sub");
  RealTensor out = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.push(std::move(out), {a.id, b.id}, [a, b](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(a)) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same(t, a, b, "mul");
  RealTensor out = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.push(std::move(out), {a.id, b.id}, [a, b](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av = tp.value(a).data;
    const auto& bv = tp.value(b).data;
    if (tp.requires_grad(a)) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Tape& t, Var a, double s) {
  RealTensor out = t.value(a);
  for (auto& v : out.data) v *= s;
  return t.push(std::move(out), {a.id}, [a, s](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var square(Tape& t, Var a) { return mul(t, a, a); }

Var sum(Tape& t, Var a) {
  const auto& av = t.value(a).data;
  RealTensor out(Shape{1}, std::accumulate(av.begin(), av.end(), 0.0));
  return t.push(std::move(out), {a.id}, [a](Tape& tp, int self) {
    const double g = tp.grad(self)[0];
    for (auto& v : tp.grad(a)) v += g;
  });
}

Var mean(Tape& t, Var a) {
  const auto n = static_cast<double>(t.value(a).size());
  return scale(t, sum(t, a), 1.0 / n);
}

Var complex_mul(Tape& t, Var a, Var b) {
  require_planar(t, a, "complex_mul");
  require_same(t, a, b, "complex_mul");
  const auto& av = t.value(a).data;
  const auto& bv = t.value(b).data;
  const std::size_t n = av.size() / 2;
  RealTensor out(t.shape(a));
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = av[i] * bv[i] - av[n + i] * bv[n + i];
    out[n + i] = av[i] * bv[n + i] + av[n + i] * bv[i];
  }
  return t.push(std::move(out), {a.id, b.id}, [a, b, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av = tp.value(a).data;
    const auto& bv = tp.value(b).data;
    // out_re = ar br - ai bi ; out_im = ar bi + ai br
    if (tp.requires_grad(a)) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += g[i] * bv[i] + g[n + i] * bv[n + i];
        ga[n + i] += -g[i] * bv[n + i] + g[n + i] * bv[i];
      }
    }
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad(b);
      for (std::size_t i = 0; i < n; ++i) {
        gb[i] += g[i] * av[i] + g[n + i] * av[n + i];
        gb[n + i] += -g[i] * av[n + i] + g[n + i] * av[i];
      }
    }
  });
}

Var complex_conj(Tape& t, Var a) {
  require_planar(t, a, "complex_conj");
  RealTensor out = t.value(a);
  const std::size_t n = out.size() / 2;
  for (std::size_t i = n; i < 2 * n; ++i) out[i] = -out[i];
  return t.push(std::move(out), {a.id}, [a, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < n; ++i) {
      ga[i] += g[i];
      ga[n + i] -= g[n + i];
    }
  });
}

namespace {

Var complex_part(Tape& t, Var a, bool imag) {
  require_planar(t, a, "complex_part");
  const auto& s = t.shape(a);
  Shape part_shape(s.begin() + 1, s.end());
  const std::size_t n = t.value(a).size() / 2;
  const std::size_t offset = imag ? n : 0;
  const auto& av = t.value(a).data;
  RealTensor out(part_shape, std::vector<double>(av.begin() + offset, av.begin() + offset + n));
  return t.push(std::move(out), {a.id}, [a, n, offset](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < n; ++i) ga[offset + i] += g[i];
  });
}

}  // namespace

Var complex_real(Tape& t, Var a) { return complex_part(t, a, false); }
Var complex_imag(Tape& t, Var a) { return complex_part(t, a, true); }

GradCheckResult grad_check(const LossFn& f, std::span<Parameter* const> params, const GradCheckOptions& opts) {
  if (opts.eps < 1e-7 || opts.eps > 1e-3) throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    const Var loss = f(tape);
    numerics::require_finite(tape.value(loss).data, "grad_check loss");
    tape.backward(loss);
  }
  auto evaluate = [&f]() {
    Tape tape(false);
    const double v = tape.value(f(tape))[0];
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite loss during finite differences");
    return v;
  };

  GradCheckResult result;
  std::mt19937_64 rng(opts.seed);
  for (auto* p : params) {
    numerics::require_finite(p->grad, "grad_check analytic gradient");
    const std::size_t n = p->value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > opts.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_param);
    }
    for (auto c : coords) {
      const double saved = p->value[c];
      p->value[c] = saved + opts.eps;
      const double up = evaluate();
      p->value[c] = saved - opts.eps;
      const double down = evaluate();
      p->value[c] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double err = std::abs(p->grad[c] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p->name;
      }
      ++result.coords_checked;
    }
  }
  return result;
}

}  // namespace prism::autodiff
