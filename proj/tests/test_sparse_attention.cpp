#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vsparse/sparse_attention.hpp"

using namespace vsparse;
using MatD = Mat<double>;

namespace {

MatD rand_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  std::uniform_real_distribution<double> u(-s, s);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

AttnParams<double> random_attn(std::mt19937_64& rng, int d, int heads) {
  AttnParams<double> p = init_attn_params<double>(d, heads, rng);
  // non-trivial norms so gain/bias mistakes show up
  p.ln1_gain = rand_mat(rng, 1, d).array() + 1.0;
  p.ln1_bias = rand_mat(rng, 1, d, 0.3);
  p.ln2_gain = rand_mat(rng, 1, d).array() + 1.0;
  p.ln2_bias = rand_mat(rng, 1, d, 0.3);
  p.b1 = rand_mat(rng, 1, 4 * d, 0.3);
  p.b2 = rand_mat(rng, 1, d, 0.3);
  return p;
}

MatD layer_norm(const MatD& x, const MatD& g, const MatD& b) {
  MatD out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * g(0, c) + b(0, c);
  }
  return out;
}

double gelu(double v) {
  return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
}

/// Plain dense pre-norm transformer block over one set of tokens.
MatD dense_block(const MatD& x, const AttnParams<double>& p) {
  const int d = p.d_model();
  const int dh = d / p.heads;
  const MatD ln = layer_norm(x, p.ln1_gain, p.ln1_bias);
  const MatD q = ln * p.wq, k = ln * p.wk, v = ln * p.wv;
  MatD mixed = MatD::Zero(x.rows(), d);
  for (int h = 0; h < p.heads; ++h) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      std::vector<double> s(static_cast<std::size_t>(x.rows()));
      double mx = -1e300;
      for (Eigen::Index j = 0; j < x.rows(); ++j) {
        double dot = 0.0;
        for (int c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
        s[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (Eigen::Index j = 0; j < x.rows(); ++j)
        for (int c = 0; c < dh; ++c) mixed(i, h * dh + c) += s[static_cast<std::size_t>(j)] / z * v(j, h * dh + c);
    }
  }
  const MatD hres = x + mixed * p.wo;
  MatD hidden = layer_norm(hres, p.ln2_gain, p.ln2_bias) * p.w1;
  for (Eigen::Index r = 0; r < hidden.rows(); ++r)
    for (Eigen::Index c = 0; c < hidden.cols(); ++c) hidden(r, c) = gelu(hidden(r, c) + p.b1(0, c));
  MatD out = hidden * p.w2;
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) += p.b2.row(0);
  return hres + out;
}

}  // namespace

TEST_CASE("positional encoding") {
  const std::vector<Coord> zero{{0, 0, 0}};
  const MatD pe0 = positional_encoding<double>(zero, 12);
  for (int c = 0; c < 12; ++c) CHECK(pe0(0, c) == ((c % 2) ? 1.0 : 0.0));

  const std::vector<Coord> same{{3, 1, 4}, {3, 1, 4}};
  const MatD pe2 = positional_encoding<double>(same, 12);
  CHECK(pe2.row(0) == pe2.row(1));
  CHECK_THROWS(positional_encoding<double>(zero, 8));

  std::mt19937_64 rng(1);
  const auto coords = oracle::random_coords(rng, {30, 30, 30}, 25);
  const MatD pe = positional_encoding<double>(coords, 12);
  const int m = 4;
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const double axis[3] = {double(coords[n].x), double(coords[n].y), double(coords[n].z)};
    for (int a = 0; a < 3; ++a)
      for (int i = 0; i < m / 2; ++i) {
        const double freq = std::pow(10000.0, 2.0 * i / m);
        CHECK(pe(static_cast<Eigen::Index>(n), a * m + 2 * i) == doctest::Approx(std::sin(axis[a] / freq)).epsilon(1e-12));
        CHECK(pe(static_cast<Eigen::Index>(n), a * m + 2 * i + 1) == doctest::Approx(std::cos(axis[a] / freq)).epsilon(1e-12));
      }
  }
}

TEST_CASE("single-token window") {
  std::mt19937_64 rng(2);
  const auto p = random_attn(rng, 12, 2);
  const MatD x = rand_mat(rng, 1, 12);
  const std::vector<Coord> c{{0, 0, 0}};
  std::vector<MatD> weights;
  const MatD out = window_attention_block(x, c, p, 8, &weights);
  REQUIRE(weights.size() == 2);
  for (const MatD& w : weights) CHECK(w(0, 0) == doctest::Approx(1.0));
  CHECK((out - dense_block(x, p)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("three-token window matches dense attention") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_attn(rng, 12, 3);
    const MatD x = rand_mat(rng, 3, 12);
    const std::vector<Coord> c{{0, 0, 0}, {1, 2, 3}, {7, 7, 7}};
    const MatD out = window_attention_block(x, c, p, 8);
    CHECK((out - dense_block(x, p)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("windows are independent and attention rows sum to one") {
  std::mt19937_64 rng(4);
  const auto p = random_attn(rng, 12, 2);
  const std::vector<Coord> c{{0, 0, 0}, {1, 0, 0}, {2, 1, 0}, {4, 0, 0}, {5, 1, 1}};
  const MatD x = rand_mat(rng, 5, 12);
  std::vector<MatD> weights;
  const MatD out = window_attention_block(x, c, p, 4, &weights);
  REQUIRE(weights.size() == 4);  // two windows x two heads
  for (const MatD& w : weights)
    for (Eigen::Index r = 0; r < w.rows(); ++r) CHECK(std::abs(w.row(r).sum() - 1.0) <= 1e-6);

  MatD y = x;
  y.row(4) = rand_mat(rng, 1, 12);
  const MatD out2 = window_attention_block(y, c, p, 4);
  CHECK(out2.topRows(3) == out.topRows(3));
  CHECK((out.topRows(3) - dense_block(x.topRows(3), p)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((out.bottomRows(2) - dense_block(x.bottomRows(2), p)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("identical tokens and permutation equivariance") {
  std::mt19937_64 rng(5);
  const auto p = random_attn(rng, 12, 2);
  const std::vector<Coord> c{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  MatD x = rand_mat(rng, 3, 12);
  x.row(1) = x.row(0);
  const MatD out = window_attention_block(x, c, p, 8);
  CHECK((out.row(0) - out.row(1)).cwiseAbs().maxCoeff() < 1e-12);

  const MatD a = rand_mat(rng, 3, 12);
  MatD b(3, 12);
  b.row(0) = a.row(2);
  b.row(1) = a.row(0);
  b.row(2) = a.row(1);
  const MatD oa = window_attention_block(a, c, p, 8);
  const MatD ob = window_attention_block(b, c, p, 8);
  CHECK((ob.row(0) - oa.row(2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ob.row(1) - oa.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ob.row(2) - oa.row(1)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("d_model mismatch is rejected") {
  std::mt19937_64 rng(6);
  const auto p = random_attn(rng, 12, 2);
  const std::vector<Coord> c{{0, 0, 0}};
  CHECK_THROWS(window_attention_block(rand_mat(rng, 1, 6), c, p, 8));
  CHECK_THROWS(init_attn_params<double>(12, 5, rng));
}

TEST_CASE("attention block gradients") {
  std::mt19937_64 rng(7);
  const std::vector<Coord> c{{0, 0, 0}, {1, 0, 0}, {2, 1, 0}, {4, 0, 0}};
  const WindowGroups w = window_partition(c, 4);
  const auto p = random_attn(rng, 6, 2);
  const MatD probe = rand_mat(rng, 4, 6);
  const double err =
      ad::grad_check(
          [&](ad::Tape<double>& t, std::span<const ad::Var> in) {
            AttnVars v{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9], in[10], in[11], in[12], 2};
            return ad::sum(t, ad::mul(t, window_attention(t, in[0], w, v), t.leaf(probe)));
          },
          {rand_mat(rng, 4, 6), p.wq, p.wk, p.wv, p.wo, p.w1, p.b1, p.w2, p.b2, p.ln1_gain, p.ln1_bias,
           p.ln2_gain, p.ln2_bias})
          .max_rel_error;
  CHECK(err <= 1e-4);
}
