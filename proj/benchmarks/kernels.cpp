#include <benchmark/benchmark.h>

#include "lbpo/func_approx.hpp"
#include "lbpo/rng.hpp"
#include "lbpo/safe_update.hpp"

namespace {

using lbpo::Matrix;
using lbpo::Vector;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, lbpo::Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Matrix::NullaryExpr(rows, cols, [&]() { return n(rng); });
}

void BM_MlpForward(benchmark::State& state) {
  lbpo::Rng rng(1);
  const auto batch = state.range(0);
  const auto net = lbpo::Mlp::initialized({4, 32, 32, 1}, rng);
  const Matrix x = random_matrix(4, batch, rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward_batch(x));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpForward)->Arg(1)->Arg(256)->Arg(1000);

void BM_MlpGradParams(benchmark::State& state) {
  lbpo::Rng rng(2);
  const auto batch = state.range(0);
  const auto net = lbpo::Mlp::initialized({4, 32, 32, 1}, rng);
  const Matrix x = random_matrix(4, batch, rng);
  const Matrix up = random_matrix(1, batch, rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.grad_params_batch(x, up));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpGradParams)->Arg(256)->Arg(1000);

lbpo::DeterministicPolicy make_policy(lbpo::Rng& rng) {
  return lbpo::DeterministicPolicy::initialized(2, {32, 32}, Vector::Constant(2, -0.2), Vector::Constant(2, 0.2), rng,
                                                0.1);
}

void BM_FisherVectorProduct(benchmark::State& state) {
  lbpo::Rng rng(3);
  const auto policy = make_policy(rng);
  const Matrix states = random_matrix(2, state.range(0), rng);
  const Vector v = random_matrix(static_cast<Eigen::Index>(policy.num_params()), 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(lbpo::fisher_vector_product(policy, states, v, 0.05, 1e-2));
}
BENCHMARK(BM_FisherVectorProduct)->Arg(300)->Arg(1000);

void BM_ConjugateGradient(benchmark::State& state) {
  lbpo::Rng rng(4);
  const auto n = state.range(0);
  const Matrix a = random_matrix(n, n, rng);
  const Matrix h = a * a.transpose() + Matrix::Identity(n, n);
  const Vector g = random_matrix(n, 1, rng);
  const lbpo::LinearOperator apply = [&h](const Vector& v) -> Vector { return h * v; };
  for (auto _ : state) benchmark::DoNotOptimize(lbpo::conjugate_gradient(apply, g, 10, 1e-8));
}
BENCHMARK(BM_ConjugateGradient)->Arg(50)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
