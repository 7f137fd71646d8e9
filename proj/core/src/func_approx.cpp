#include "lbpo/func_approx.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "lbpo/errors.hpp"

namespace lbpo {

namespace {

using ConstMatMap = Eigen::Map<const Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;

}  // namespace

Mlp::Mlp(std::vector<std::size_t> layer_sizes) : Mlp(layer_sizes, Vector::Zero(static_cast<Eigen::Index>(param_count(layer_sizes)))) {}

Mlp::Mlp(std::vector<std::size_t> layer_sizes, Vector params) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw InputError("an MLP needs at least input and output sizes");
  for (std::size_t s : sizes_) {
    if (s == 0) throw InputError("layer sizes must be positive");
  }
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(offset);
    offset += (sizes_[l] + 1) * sizes_[l + 1];
  }
  set_params(params);
}

std::size_t Mlp::param_count(const std::vector<std::size_t>& layer_sizes) {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) total += (layer_sizes[l] + 1) * layer_sizes[l + 1];
  return total;
}

Mlp Mlp::initialized(std::vector<std::size_t> layer_sizes, Rng& rng, double output_scale) {
  Mlp net(std::move(layer_sizes));
  Vector p = Vector::Zero(static_cast<Eigen::Index>(net.num_params()));
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const std::size_t in = net.sizes_[l];
    const std::size_t out = net.sizes_[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const double scale = (l + 1 == net.num_layers()) ? output_scale : 1.0;
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (std::size_t i = 0; i < in * out; ++i) p(static_cast<Eigen::Index>(net.offsets_[l] + i)) = scale * unif(rng);
  }
  net.set_params(p);
  return net;
}

void Mlp::set_params(const Vector& params) {
  if (static_cast<std::size_t>(params.size()) != param_count(sizes_)) {
    throw InputError("parameter vector length does not match layer sizes");
  }
  params_ = params;
}

void Mlp::check_input(const Matrix& inputs) const {
  if (static_cast<std::size_t>(inputs.rows()) != input_dim()) {
    throw InputError("input dimension " + std::to_string(inputs.rows()) + " does not match network input " +
                     std::to_string(input_dim()));
  }
}

namespace {

// Eigen vectorizes exp for doubles but not tanh.
Matrix tanh_fast(const Matrix& z) {
  const Eigen::ArrayXXd e = (2.0 * z.array()).exp();
  return (1.0 - 2.0 / (e + 1.0)).matrix();
}

}  // namespace

Mlp::Tape Mlp::run(const Matrix& inputs) const {
  check_input(inputs);
  Tape tape;
  tape.activations.reserve(sizes_.size());
  tape.activations.push_back(inputs);
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    const double* base = params_.data() + offsets_[l];
    ConstMatMap w(base, out, in);
    ConstVecMap b(base + out * in, out);
    Matrix z = w * tape.activations.back();
    z.colwise() += b;
    if (l + 1 < num_layers()) z = tanh_fast(z);
    tape.activations.push_back(std::move(z));
  }
  return tape;
}

Matrix Mlp::backward(const Tape& tape, const Matrix& upstream, Vector* grad_params) const {
  if (static_cast<std::size_t>(upstream.rows()) != output_dim() || upstream.cols() != tape.activations[0].cols()) {
    throw InputError("upstream shape does not match network output");
  }
  if (grad_params) *grad_params = Vector::Zero(params_.size());
  Matrix delta = upstream;  // d/d pre-activation of the current layer
  for (std::size_t l = num_layers(); l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    const double* base = params_.data() + offsets_[l];
    ConstMatMap w(base, out, in);
    const Matrix& prev = tape.activations[l];
    if (grad_params) {
      double* g = grad_params->data() + offsets_[l];
      Eigen::Map<Matrix>(g, out, in).noalias() = delta * prev.transpose();
      Eigen::Map<Vector>(g + out * in, out) = delta.rowwise().sum();
    }
    Matrix back = w.transpose() * delta;
    if (l > 0) back.array() *= (1.0 - prev.array().square());
    delta = std::move(back);
  }
  return delta;
}

Vector Mlp::forward(const Vector& input) const { return forward_batch(input); }

Matrix Mlp::forward_batch(const Matrix& inputs) const { return run(inputs).activations.back(); }

Vector Mlp::grad_params(const Vector& input, const Vector& upstream) const {
  return grad_params_batch(input, upstream);
}

Vector Mlp::grad_params_batch(const Matrix& inputs, const Matrix& upstream) const {
  Vector g;
  backward(run(inputs), upstream, &g);
  return g;
}

Vector Mlp::grad_input(const Vector& input, const Vector& upstream) const {
  return grad_input_batch(input, upstream);
}

Vector Mlp::grad_params_fused(const Matrix& inputs,
                               const std::function<Matrix(const Matrix&)>& upstream_of_output) const {
  const Tape tape = run(inputs);
  Vector g;
  backward(tape, upstream_of_output(tape.activations.back()), &g);
  return g;
}

Matrix Mlp::grad_input_batch(const Matrix& inputs, const Matrix& upstream) const {
  return backward(run(inputs), upstream, nullptr);
}

Vector Mlp::jvp_params(const Vector& input, const Vector& tangent) const { return jvp_params_batch(input, tangent); }

Matrix Mlp::jvp_params_batch(const Matrix& inputs, const Vector& tangent) const {
  if (tangent.size() != params_.size()) throw InputError("tangent length does not match parameter count");
  const Tape tape = run(inputs);
  Matrix dact = Matrix::Zero(inputs.rows(), inputs.cols());  // d activation of previous layer
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    const double* base = params_.data() + offsets_[l];
    const double* tbase = tangent.data() + offsets_[l];
    ConstMatMap w(base, out, in);
    ConstMatMap dw(tbase, out, in);
    ConstVecMap db(tbase + out * in, out);
    Matrix dz = dw * tape.activations[l];
    if (l > 0) dz.noalias() += w * dact;
    dz.colwise() += db;
    if (l + 1 < num_layers()) dz.array() *= (1.0 - tape.activations[l + 1].array().square());
    dact = std::move(dz);
  }
  return dact;
}

double finite_diff_check(const Mlp& net, const Vector& input, double step) {
  if (!(step > 0.0)) throw InputError("finite-difference step must be positive");
  const Vector ones = Vector::Ones(static_cast<Eigen::Index>(net.output_dim()));
  auto scalar = [&](const Mlp& m, const Vector& x) { return m.forward(x).sum(); };
  auto rel = [](double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
  };

  double worst = 0.0;
  const Vector gp = net.grad_params(input, ones);
  Mlp probe = net;
  Vector p = net.params();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double orig = p(i);
    p(i) = orig + step;
    probe.set_params(p);
    const double up = scalar(probe, input);
    p(i) = orig - step;
    probe.set_params(p);
    const double down = scalar(probe, input);
    p(i) = orig;
    worst = std::max(worst, rel(gp(i), (up - down) / (2.0 * step)));
  }

  const Vector gx = net.grad_input(input, ones);
  Vector x = input;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x(i);
    x(i) = orig + step;
    const double up = scalar(net, x);
    x(i) = orig - step;
    const double down = scalar(net, x);
    x(i) = orig;
    worst = std::max(worst, rel(gx(i), (up - down) / (2.0 * step)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Policy

DeterministicPolicy::DeterministicPolicy(Mlp net, Vector action_low, Vector action_high)
    : net_(std::move(net)), low_(std::move(action_low)), high_(std::move(action_high)) {
  if (static_cast<std::size_t>(low_.size()) != net_.output_dim() || low_.size() != high_.size()) {
    throw InputError("policy bounds do not match network output");
  }
  if (!((low_.array() < high_.array()).all())) throw InputError("policy bounds must satisfy low < high");
  mid_ = 0.5 * (low_ + high_);
  half_ = 0.5 * (high_ - low_);
}

DeterministicPolicy DeterministicPolicy::initialized(std::size_t state_dim, const std::vector<std::size_t>& hidden,
                                                     const Vector& action_low, const Vector& action_high, Rng& rng,
                                                     double output_scale) {
  std::vector<std::size_t> sizes{state_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(static_cast<std::size_t>(action_low.size()));
  return DeterministicPolicy(Mlp::initialized(sizes, rng, output_scale), action_low, action_high);
}

DeterministicPolicy DeterministicPolicy::with_params(const Vector& params) const {
  DeterministicPolicy copy = *this;
  copy.set_params(params);
  return copy;
}

Vector DeterministicPolicy::act(const Vector& state) const { return act_batch(state); }

Matrix DeterministicPolicy::act_batch(const Matrix& states) const {
  Matrix z = net_.forward_batch(states);
  Matrix out = z.array().tanh().matrix();
  out = (out.array().colwise() * half_.array()).matrix();
  out.colwise() += mid_;
  return out;
}

Vector DeterministicPolicy::vjp_params(const Matrix& states, const Matrix& upstream) const {
  const Matrix z = net_.forward_batch(states);
  Matrix scaled = (1.0 - z.array().tanh().square()).matrix();
  scaled = (scaled.array().colwise() * half_.array()).matrix();
  return net_.grad_params_batch(states, upstream.cwiseProduct(scaled));
}

Matrix DeterministicPolicy::jvp_params(const Matrix& states, const Vector& tangent) const {
  const Matrix z = net_.forward_batch(states);
  Matrix scaled = (1.0 - z.array().tanh().square()).matrix();
  scaled = (scaled.array().colwise() * half_.array()).matrix();
  return net_.jvp_params_batch(states, tangent).cwiseProduct(scaled);
}

// ---------------------------------------------------------------------------
// Q-function

QFunction::QFunction(Mlp net, std::size_t state_dim, std::size_t action_dim)
    : net_(std::move(net)), state_dim_(state_dim), action_dim_(action_dim) {
  if (net_.input_dim() != state_dim + action_dim || net_.output_dim() != 1) {
    throw InputError("Q network must map state_dim + action_dim to 1");
  }
}

QFunction QFunction::initialized(std::size_t state_dim, std::size_t action_dim, const std::vector<std::size_t>& hidden,
                                 Rng& rng) {
  std::vector<std::size_t> sizes{state_dim + action_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return QFunction(Mlp::initialized(sizes, rng), state_dim, action_dim);
}

Matrix QFunction::stack(const Matrix& states, const Matrix& actions) const {
  if (static_cast<std::size_t>(states.rows()) != state_dim_ || static_cast<std::size_t>(actions.rows()) != action_dim_ ||
      states.cols() != actions.cols()) {
    throw InputError("Q input shape mismatch");
  }
  Matrix x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

double QFunction::value(const Vector& state, const Vector& action) const {
  return value_batch(state, action)(0);
}

Vector QFunction::value_batch(const Matrix& states, const Matrix& actions) const {
  return net_.forward_batch(stack(states, actions)).row(0).transpose();
}

Matrix QFunction::grad_action_batch(const Matrix& states, const Matrix& actions) const {
  const Matrix ones = Matrix::Ones(1, states.cols());
  return net_.grad_input_batch(stack(states, actions), ones).bottomRows(static_cast<Eigen::Index>(action_dim_));
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {

constexpr std::array<char, 8> kMagic{'L', 'B', 'P', 'O', 'M', 'L', 'P', '1'};

template <typename T>
void write_le(std::ostream& out, T value) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.write(reinterpret_cast<const char*>(bits.data()), bits.size());
}

template <typename T>
T read_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bits{};
  in.read(reinterpret_cast<char*>(bits.data()), bits.size());
  if (!in) throw InputError("truncated parameter snapshot");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  return std::bit_cast<T>(bits);
}

}  // namespace

void save_params(const std::filesystem::path& path, const Mlp& net) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  write_le<std::uint64_t>(out, net.layer_sizes().size());
  for (std::size_t s : net.layer_sizes()) write_le<std::uint64_t>(out, s);
  write_le<std::uint64_t>(out, net.num_params());
  for (Eigen::Index i = 0; i < net.params().size(); ++i) write_le<double>(out, net.params()(i));
  if (!out) throw InputError("failed writing " + path.string());
}

Mlp load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InputError(path.string() + " is not a parameter snapshot");
  const auto num_sizes = read_le<std::uint64_t>(in);
  if (num_sizes < 2 || num_sizes > 1024) throw InputError("implausible layer count in snapshot");
  std::vector<std::size_t> sizes;
  for (std::uint64_t i = 0; i < num_sizes; ++i) sizes.push_back(static_cast<std::size_t>(read_le<std::uint64_t>(in)));
  const auto count = read_le<std::uint64_t>(in);
  if (count != Mlp::param_count(sizes)) throw InputError("snapshot parameter count does not match layer sizes");
  Vector params(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < params.size(); ++i) params(i) = read_le<double>(in);
  return Mlp(std::move(sizes), std::move(params));
}

}  // namespace lbpo
