#include "doctest.h"
#include "dkge/agcn.hpp"

#include <random>

using namespace dkge;

namespace {

template <typename Scalar>
MatrixX<Scalar> random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::uniform_real_distribution<double> u(-1, 1);
  MatrixX<Scalar> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(u(rng));
  return m;
}

MatrixX<double> random_adjacency(std::mt19937_64& rng, Eigen::Index n) {
  std::bernoulli_distribution edge(0.4);
  MatrixX<double> a = MatrixX<double>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) a(i, j) = a(j, i) = edge(rng) ? 1 : 0;
  }
  return a;
}

template <typename Scalar>
AgcnParams<Scalar> random_params(std::mt19937_64& rng, Eigen::Index d, std::size_t layers) {
  AgcnParams<Scalar> p;
  for (std::size_t l = 0; l < layers; ++l) p.weights.push_back(random_matrix<Scalar>(rng, d, d));
  p.attention = random_matrix<Scalar>(rng, d, 1);
  return p;
}

}  // namespace

TEST_CASE("normalized adjacency matches an element-wise reference") {
  std::mt19937_64 rng(1);
  const MatrixX<double> a = random_adjacency(rng, 7);
  const MatrixX<double> n = normalize_adjacency(a);
  for (Eigen::Index i = 0; i < 7; ++i) {
    for (Eigen::Index j = 0; j < 7; ++j) {
      double di = 1, dj = 1;
      for (Eigen::Index k = 0; k < 7; ++k) {
        di += a(i, k);
        dj += a(j, k);
      }
      const double expected = (a(i, j) + (i == j ? 1 : 0)) / std::sqrt(di * dj);
      CHECK(n(i, j) == doctest::Approx(expected).epsilon(1e-14));
    }
  }
  MatrixX<double> asym = a;
  asym(0, 1) = 1;
  asym(1, 0) = 0;
  CHECK_THROWS_AS(normalize_adjacency(asym), ContractError);
  CHECK_THROWS_AS(normalize_adjacency(MatrixX<double>::Zero(2, 3)), ContractError);
}

TEST_CASE("isolated vertex normalizes to identity") {
  const MatrixX<double> n = normalize_adjacency(MatrixX<double>::Zero(1, 1));
  CHECK(n(0, 0) == 1.0);
}

TEST_CASE("attention weights form a distribution over real vertices only") {
  std::mt19937_64 rng(2);
  const Eigen::Index d = 5, n = 6, padded = 9;
  MatrixX<double> h0 = MatrixX<double>::Zero(padded, d);
  h0.topRows(n) = random_matrix<double>(rng, n, d);
  MatrixX<double> adj = MatrixX<double>::Zero(padded, padded);
  adj.topLeftCorner(n, n) = random_adjacency(rng, n);
  const auto p = random_params<double>(rng, d, 2);
  const VectorX<double> o = random_matrix<double>(rng, d, 1);
  const auto f = agcn_forward(h0, adj, p, o, n);
  CHECK(f.cache.alpha.size() == padded);
  CHECK(f.cache.alpha.sum() == doctest::Approx(1.0));
  CHECK((f.cache.alpha.head(n).array() > 0).all());
  CHECK(f.cache.alpha.tail(padded - n).isZero());

  // Changing padding rows never changes the output.
  MatrixX<double> noisy = h0;
  noisy.bottomRows(padded - n) = random_matrix<double>(rng, padded - n, d);
  CHECK(agcn_forward(noisy, adj, p, o, n).embedding == f.embedding);
}

TEST_CASE("single-vertex context returns the owner's own activation") {
  std::mt19937_64 rng(4);
  const auto p = random_params<double>(rng, 3, 1);
  const MatrixX<double> h0 = random_matrix<double>(rng, 1, 3);
  const VectorX<double> o = random_matrix<double>(rng, 3, 1);
  const auto f = agcn_forward(h0, MatrixX<double>(MatrixX<double>::Zero(1, 1)), p, o, 1);
  CHECK(f.cache.alpha(0) == 1.0);
  const VectorX<double> expected = (h0 * p.weights[0]).cwiseMax(0.0).transpose();
  CHECK(f.embedding.isApprox(expected, 1e-14));
}

TEST_CASE("output is invariant to relabelling the non-owner vertices") {
  std::mt19937_64 rng(6);
  const Eigen::Index d = 4, n = 7;
  const MatrixX<double> h0 = random_matrix<double>(rng, n, d);
  const MatrixX<double> adj = random_adjacency(rng, n);
  const auto p = random_params<double>(rng, d, 2);
  const VectorX<double> o = random_matrix<double>(rng, d, 1);
  Eigen::VectorXi perm(n);
  perm << 0, 3, 5, 1, 6, 2, 4;
  Eigen::PermutationMatrix<Eigen::Dynamic> P(perm);
  const MatrixX<double> h_perm = P * h0;
  const MatrixX<double> a_perm = P * adj * P.transpose();
  const auto a = agcn_forward(h0, adj, p, o, n).embedding;
  const auto b = agcn_forward(h_perm, a_perm, p, o, n).embedding;
  CHECK(a.isApprox(b, 1e-12));
}

TEST_CASE("softmax stays finite for large scores") {
  AgcnParams<double> p = AgcnParams<double>::zeros(2, 1);
  p.weights[0].setIdentity();
  p.attention << 1e4, 1e4;
  MatrixX<double> h0(2, 2);
  h0 << 1, 1, 2, 2;
  const VectorX<double> o = VectorX<double>::Constant(2, 1.0);
  MatrixX<double> adj = MatrixX<double>::Zero(2, 2);
  const auto f = agcn_forward(h0, adj, p, o, 2);
  CHECK(f.embedding.allFinite());
  CHECK(f.cache.alpha(1) == doctest::Approx(1.0));
}

TEST_CASE("parameter validation and shape contracts") {
  CHECK_THROWS_AS(AgcnParams<double>::zeros(3, 0).validate(), ContractError);
  CHECK_THROWS_AS(AgcnParams<double>::zeros(3, 3).validate(), ContractError);
  CHECK_NOTHROW(AgcnParams<double>::zeros(3, 2).validate());
  const auto p = AgcnParams<double>::zeros(3, 1);
  auto zeros = [](Eigen::Index r, Eigen::Index c) { return MatrixX<double>(MatrixX<double>::Zero(r, c)); };
  const VectorX<double> o = VectorX<double>::Zero(3);
  CHECK_THROWS_AS(agcn_forward(zeros(2, 3), zeros(3, 3), p, o, 2), ContractError);
  CHECK_THROWS_AS(agcn_forward(zeros(2, 4), zeros(2, 2), p, o, 2), ContractError);
  CHECK_THROWS_AS(agcn_forward(zeros(2, 3), zeros(2, 2), p, o, 0), ContractError);
}

// Central differences in long double against the analytic backward pass.
TEST_CASE("backward pass matches finite differences") {
  using LD = long double;
  int checked_seeds = 0;
  for (std::uint64_t seed = 0; checked_seeds < 12 && seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    const Eigen::Index d = 3 + Eigen::Index(seed % 3), n = 2 + Eigen::Index(seed % 5);
    const std::size_t layers = 1 + seed % 2;
    MatrixX<LD> h0 = random_matrix<LD>(rng, n, d);
    const MatrixX<LD> norm = normalize_adjacency(random_adjacency(rng, n)).cast<LD>();
    auto p = random_params<LD>(rng, d, layers);
    VectorX<LD> o = random_matrix<LD>(rng, d, 1);
    const VectorX<LD> w = random_matrix<LD>(rng, d, 1);

    auto loss = [&] { return agcn_forward_normalized<LD>(h0, norm, p, o).embedding.dot(w); };
    const auto f = agcn_forward_normalized<LD>(h0, norm, p, o);
    const auto g = agcn_backward(f.cache, p, o, w);

    auto pattern = [&] {
      const auto c = agcn_forward_normalized<LD>(h0, norm, p, o).cache;
      std::vector<bool> s;
      for (const auto& m : c.pre_activations) {
        for (Eigen::Index i = 0; i < m.size(); ++i) s.push_back(m.data()[i] > 0);
      }
      for (Eigen::Index i = 0; i < c.attention_input.size(); ++i) s.push_back(c.attention_input.data()[i] > 0);
      return s;
    };
    const auto base = pattern();
    const LD h = 1e-6L;
    bool generic = true;
    LD worst = 0;
    auto probe = [&](LD& x, LD analytic) {
      const LD saved = x;
      x = saved + h;
      const LD up = loss();
      generic = generic && pattern() == base;
      x = saved - h;
      const LD down = loss();
      generic = generic && pattern() == base;
      x = saved;
      const LD numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(numeric - analytic) / std::max<LD>({1e-3L, std::abs(numeric), std::abs(analytic)}));
    };
    for (Eigen::Index i = 0; i < h0.size(); ++i) probe(h0.data()[i], g.input.data()[i]);
    for (Eigen::Index i = 0; i < o.size(); ++i) probe(o(i), g.owner(i));
    for (Eigen::Index i = 0; i < p.attention.size(); ++i) probe(p.attention(i), g.params.attention(i));
    for (std::size_t l = 0; l < layers; ++l) {
      for (Eigen::Index i = 0; i < p.weights[l].size(); ++i) probe(p.weights[l].data()[i], g.params.weights[l].data()[i]);
    }
    if (!generic) continue;
    ++checked_seeds;
    CHECK(double(worst) < 1e-7);
  }
  CHECK(checked_seeds == 12);
}

TEST_CASE("skipping parameter gradients leaves input gradients unchanged") {
  std::mt19937_64 rng(8);
  const auto p = random_params<double>(rng, 4, 2);
  const MatrixX<double> h0 = random_matrix<double>(rng, 5, 4);
  const MatrixX<double> norm = normalize_adjacency(random_adjacency(rng, 5));
  const VectorX<double> o = random_matrix<double>(rng, 4, 1);
  const VectorX<double> w = random_matrix<double>(rng, 4, 1);
  const auto f = agcn_forward_normalized<double>(h0, norm, p, o);
  const auto full = agcn_backward(f.cache, p, o, w, true);
  const auto partial = agcn_backward(f.cache, p, o, w, false);
  CHECK(full.input == partial.input);
  CHECK(full.owner == partial.owner);
  CHECK(partial.params.weights.empty());
}
