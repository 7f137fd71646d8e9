#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "lbpo/rng.hpp"

namespace lbpo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Feed-forward network with tanh hidden layers and an identity output layer.
///
/// Parameters live in one flat vector. Layer l contributes its weight matrix
/// (out x in, column-major) followed by its bias (out), in layer order, so the
/// flat length is sum over consecutive pairs of (in + 1) * out.
///
/// Batched calls take one sample per column.
class Mlp {
 public:
  Mlp() = default;
  /// All-zero parameters.
  explicit Mlp(std::vector<std::size_t> layer_sizes);
  Mlp(std::vector<std::size_t> layer_sizes, Vector params);

  /// Weights uniform in +-1/sqrt(fan_in), zero biases, last layer scaled by
  /// `output_scale`.
  static Mlp initialized(std::vector<std::size_t> layer_sizes, Rng& rng, double output_scale = 1.0);

  static std::size_t param_count(const std::vector<std::size_t>& layer_sizes);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }

  const Vector& params() const { return params_; }
  void set_params(const Vector& params);

  Vector forward(const Vector& input) const;
  Matrix forward_batch(const Matrix& inputs) const;

  /// Gradient of upstream^T forward(input) with respect to the flat parameters.
  Vector grad_params(const Vector& input, const Vector& upstream) const;
  /// Sum over columns of the per-sample parameter gradients.
  Vector grad_params_batch(const Matrix& inputs, const Matrix& upstream) const;
  /// One forward pass; the upstream is computed from the batch output.
  Vector grad_params_fused(const Matrix& inputs, const std::function<Matrix(const Matrix&)>& upstream_of_output) const;

  /// Gradient of upstream^T forward(input) with respect to the input.
  Vector grad_input(const Vector& input, const Vector& upstream) const;
  Matrix grad_input_batch(const Matrix& inputs, const Matrix& upstream) const;

  /// Directional derivative of the output along a parameter-space tangent.
  Vector jvp_params(const Vector& input, const Vector& tangent) const;
  Matrix jvp_params_batch(const Matrix& inputs, const Vector& tangent) const;

 private:
  struct Tape {
    std::vector<Matrix> activations;  // activations[0] = inputs, last = output
  };

  std::size_t num_layers() const { return sizes_.size() - 1; }
  Tape run(const Matrix& inputs) const;
  /// Reverse pass; fills grad_params (may be null) and returns d/d input.
  Matrix backward(const Tape& tape, const Matrix& upstream, Vector* grad_params) const;
  void check_input(const Matrix& inputs) const;

  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;  // start of each layer's weights in params_
  Vector params_;
};

/// Max over parameter and input coordinates of
/// |analytic - central difference| / max(1, |analytic|) for the gradient of the
/// sum of outputs.
double finite_diff_check(const Mlp& net, const Vector& input, double step);

/// pi(s) = mid + half_range * tanh(net(s)); outputs always stay inside the box.
class DeterministicPolicy {
 public:
  DeterministicPolicy() = default;
  DeterministicPolicy(Mlp net, Vector action_low, Vector action_high);

  /// Hidden layers from `hidden`, output layer scaled by `output_scale`.
  static DeterministicPolicy initialized(std::size_t state_dim, const std::vector<std::size_t>& hidden,
                                         const Vector& action_low, const Vector& action_high, Rng& rng,
                                         double output_scale = 0.01);

  std::size_t state_dim() const { return net_.input_dim(); }
  std::size_t action_dim() const { return net_.output_dim(); }
  std::size_t num_params() const { return net_.num_params(); }
  const Vector& params() const { return net_.params(); }
  void set_params(const Vector& params) { net_.set_params(params); }
  DeterministicPolicy with_params(const Vector& params) const;

  const Mlp& net() const { return net_; }
  const Vector& action_low() const { return low_; }
  const Vector& action_high() const { return high_; }

  Vector act(const Vector& state) const;
  Matrix act_batch(const Matrix& states) const;

  /// sum_j J_j^T u_j where J_j is the action Jacobian wrt parameters at states.col(j).
  Vector vjp_params(const Matrix& states, const Matrix& upstream) const;
  /// Columns J_j v.
  Matrix jvp_params(const Matrix& states, const Vector& tangent) const;

 private:
  Mlp net_;
  Vector low_;
  Vector high_;
  Vector mid_;
  Vector half_;
};

/// Scalar critic over concatenated (state, action).
class QFunction {
 public:
  QFunction() = default;
  QFunction(Mlp net, std::size_t state_dim, std::size_t action_dim);

  static QFunction initialized(std::size_t state_dim, std::size_t action_dim, const std::vector<std::size_t>& hidden,
                               Rng& rng);

  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

  double value(const Vector& state, const Vector& action) const;
  Vector value_batch(const Matrix& states, const Matrix& actions) const;

  /// Column j holds dQ/da at (states.col(j), actions.col(j)).
  Matrix grad_action_batch(const Matrix& states, const Matrix& actions) const;

  Matrix stack(const Matrix& states, const Matrix& actions) const;

 private:
  Mlp net_;
  std::size_t state_dim_ = 0;
  std::size_t action_dim_ = 0;
};

/// Snapshot format, all fields little-endian:
///   8 bytes  magic "LBPOMLP1"
///   u64      number of layer sizes L
///   u64 x L  layer sizes
///   u64      number of parameters P
///   f64 x P  flat parameters
void save_params(const std::filesystem::path& path, const Mlp& net);
Mlp load_params(const std::filesystem::path& path);

}  // namespace lbpo
