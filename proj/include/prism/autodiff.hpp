#pragma once

// Reverse-mode differentiation over real tensors.
//
// Complex quantities never appear on the tape directly: they are carried as
// planar real tensors of shape [2, ...] (real block first, imaginary block
// second), so every complex parameter gets independent adjoints for its real
// and imaginary parts.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prism/numerics.hpp"

namespace prism::autodiff {

using numerics::RealTensor;
using numerics::Shape;

struct Parameter {
  std::string name;
  RealTensor value;
  std::vector<double> grad;
  bool trainable = true;
  bool decay = false;  // decoupled weight decay applies to this tensor

  Parameter() = default;
  Parameter(std::string n, RealTensor v, bool decays);
  void zero_grad();
};

/// Owns parameters at stable addresses; registration order is the
/// serialization and optimizer order.
class ParameterSet {
 public:
  Parameter& add(std::string name, RealTensor value, bool decay);
  Parameter& get(std::size_t index) { return *params_[index]; }
  const Parameter& get(std::size_t index) const { return *params_[index]; }
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape;
using BackwardFn = std::function<void(Tape&, int self)>;

class Tape {
 public:
  /// A tape built with record=false keeps forward values only; backward()
  /// is rejected on it.
  explicit Tape(bool record = true) : record_(record) {}

  Var constant(RealTensor value);
  Var param(Parameter& p);
  Var push(RealTensor value, std::vector<int> inputs, BackwardFn fn);

  const RealTensor& value(Var v) const { return nodes_[v.id].value; }
  const Shape& shape(Var v) const { return nodes_[v.id].value.shape; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool recording() const { return record_; }

  /// Adjoint buffer of a node; only meaningful inside backward().
  std::vector<double>& grad(int id) { return nodes_[id].grad; }
  std::vector<double>& grad(Var v) { return nodes_[v.id].grad; }

  /// Accumulates into every reachable parameter's grad. Node adjoints are
  /// reset on entry, parameter adjoints are not.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  /// Drops nodes past `n`; used to discard per-step graphs during decoding.
  void truncate(std::size_t n);

 private:
  struct Node {
    RealTensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    std::vector<double> grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool record_;
};

// Generic real ops. Shapes of binary operands must match exactly.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var square(Tape& t, Var a);
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);

// Complex elementwise ops over planar [2, ...] tensors.
Var complex_mul(Tape& t, Var a, Var b);
Var complex_conj(Tape& t, Var a);
Var complex_real(Tape& t, Var a);
Var complex_imag(Tape& t, Var a);

/// Loss builder for gradient checking; called once per evaluation on a fresh tape.
using LossFn = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t max_coords_per_param = 64;
  std::uint64_t seed = 1234;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t coords_checked = 0;
};

/// Central differences against the analytic gradient on sampled coordinates.
/// Error per coordinate is |analytic - numeric| / max(1, |numeric|).
GradCheckResult grad_check(const LossFn& f, std::span<Parameter* const> params, const GradCheckOptions& opts = {});

}  // namespace prism::autodiff
