#include <cmath>
#include <random>

#include "doctest.h"
#include "kpg/errors.hpp"
#include "kpg/heads.hpp"

using namespace kpg;

namespace {

CrfParams<double> random_crf(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  CrfParams<double> c;
  for (auto& row : c.transition)
    for (auto& v : row) v = d(rng);
  for (auto& v : c.start) v = d(rng);
  for (auto& v : c.end) v = d(rng);
  return c;
}

Tensor<double> random_emissions(std::size_t L, std::mt19937_64& rng) {
  Tensor<double> e({L, 3});
  std::normal_distribution<double> d(0.0, 1.5);
  for (auto& v : e.values()) v = d(rng);
  return e;
}

std::vector<LabelSequence> all_sequences(std::size_t L) {
  std::vector<LabelSequence> out;
  std::size_t total = 1;
  for (std::size_t i = 0; i < L; ++i) total *= 3;
  for (std::size_t code = 0; code < total; ++code) {
    LabelSequence s(L);
    std::size_t c = code;
    for (std::size_t i = L; i-- > 0;) {
      s[i] = Label(c % 3);
      c /= 3;
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("label helpers") {
  CHECK(labels_to_string(labels_from_string("BIO")) == "BIO");
  CHECK_THROWS_AS(labels_from_string("BX"), ContractError);
}

TEST_CASE("bio logits: zero head gives uniform labels, shape and locality") {
  std::mt19937_64 rng(1);
  Tensor<double> h({4, 8});
  std::normal_distribution<double> d;
  for (auto& v : h.values()) v = d(rng);
  Tensor<double> w({8, 3}), b({3});
  auto z = bio_label_logits(h, w, b);
  CHECK(z.shape() == Shape{4, 3});
  for (double v : z.values()) CHECK(v == 0.0);

  for (auto& v : w.values()) v = d(rng);
  auto y = bio_label_logits(h, w, b);
  Tensor<double> swapped = h;
  for (std::size_t j = 0; j < 8; ++j) std::swap(swapped(0, j), swapped(2, j));
  auto ys = bio_label_logits(swapped, w, b);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(ys(0, c) == y(2, c));
    CHECK(ys(2, c) == y(0, c));
    CHECK(ys(1, c) == y(1, c));
  }
}

TEST_CASE("partition function special cases") {
  std::mt19937_64 rng(2);
  auto crf = random_crf(rng);
  auto e1 = random_emissions(1, rng);
  std::vector<double> v(3);
  for (std::size_t c = 0; c < 3; ++c) v[c] = crf.start[c] + e1(0, c) + crf.end[c];
  CHECK(crf_log_partition(e1, crf) == doctest::Approx(logsumexp<double>(v)).epsilon(1e-12));

  CrfParams<double> zero;
  auto e2 = random_emissions(2, rng);
  CHECK(crf_log_partition(e2, zero) ==
        doctest::Approx(logsumexp<double>(e2.row(0)) + logsumexp<double>(e2.row(1))).epsilon(1e-12));

  CHECK_THROWS_AS(crf_log_partition(Tensor<double>({0, 3}), zero), ContractError);
}

TEST_CASE("partition function matches brute force") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t L = 1 + seed % 5;
    auto crf = random_crf(rng);
    auto e = random_emissions(L, rng);
    std::vector<double> scores;
    for (const auto& s : all_sequences(L)) scores.push_back(crf_sequence_score(e, s, crf));
    CHECK(std::abs(crf_log_partition(e, crf) - logsumexp<double>(scores)) < 1e-8);
  }
}

TEST_CASE("nll examples") {
  CrfParams<double> zero;
  Tensor<double> e({2, 3});
  CHECK(crf_nll(e, labels_from_string("BO"), zero) == doctest::Approx(2 * std::log(3.0)));

  Tensor<double> sharp({3, 3});
  const auto gold = labels_from_string("BIO");
  for (std::size_t i = 0; i < 3; ++i) sharp(i, std::size_t(gold[i])) = 50.0;
  const double nll = crf_nll(sharp, gold, zero);
  CHECK(nll >= 0.0);
  CHECK(nll < 1e-20);

  std::mt19937_64 rng(5);
  auto crf = random_crf(rng);
  auto er = random_emissions(4, rng);
  std::vector<double> scores;
  for (const auto& s : all_sequences(4)) scores.push_back(crf_sequence_score(er, s, crf));
  const auto g = labels_from_string("OBIB");
  CHECK(crf_nll(er, g, crf) ==
        doctest::Approx(logsumexp<double>(scores) - crf_sequence_score(er, g, crf)).epsilon(1e-10));
  CHECK_THROWS_AS(crf_nll(er, labels_from_string("BI"), crf), ContractError);
}

TEST_CASE("crf distribution is normalized") {
  for (std::size_t L = 1; L <= 5; ++L) {
    std::mt19937_64 rng(40 + L);
    auto crf = random_crf(rng);
    auto e = random_emissions(L, rng);
    double total = 0;
    for (const auto& s : all_sequences(L)) total += std::exp(-crf_nll(e, s, crf));
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("partition shifts exactly with a per-position constant") {
  std::mt19937_64 rng(8);
  auto crf = random_crf(rng);
  auto e = random_emissions(5, rng);
  auto shifted = e;
  for (std::size_t c = 0; c < 3; ++c) shifted(2, c) += 0.75;
  CHECK(crf_log_partition(shifted, crf) == doctest::Approx(crf_log_partition(e, crf) + 0.75).epsilon(1e-12));
}

TEST_CASE("viterbi examples") {
  std::mt19937_64 rng(11);
  auto e = random_emissions(4, rng);
  CrfParams<double> crf;
  crf.start = {0.3, -0.2, 0.1};
  crf.end = {-0.4, 0.2, 0.0};
  auto adjusted = e;
  for (std::size_t c = 0; c < 3; ++c) {
    adjusted(0, c) += crf.start[c];
    adjusted(3, c) += crf.end[c];
  }
  CHECK(viterbi_decode(e, crf) == argmax_labels(adjusted));

  Tensor<double> flat({4, 3});
  CHECK(labels_to_string(viterbi_decode(flat, CrfParams<double>{})) == "BBBB");
}

TEST_CASE("viterbi matches brute force and dominates random sequences") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const std::size_t L = 1 + seed % 5;
    auto crf = random_crf(rng);
    auto e = random_emissions(L, rng);
    double best = -1e300;
    LabelSequence arg;
    for (const auto& s : all_sequences(L)) {
      const double sc = crf_sequence_score(e, s, crf);
      if (sc > best) {
        best = sc;
        arg = s;
      }
    }
    auto v = viterbi_decode(e, crf);
    CHECK(v == arg);
    const double vs = crf_sequence_score(e, v, crf);
    std::uniform_int_distribution<int> lab(0, 2);
    for (int k = 0; k < 1000; ++k) {
      LabelSequence r(L);
      for (auto& x : r) x = Label(lab(rng));
      CHECK(vs >= crf_sequence_score(e, r, crf));
    }
  }
}

TEST_CASE("nll gradient matches finite differences") {
  std::mt19937_64 rng(21);
  auto crf = random_crf(rng);
  auto e = random_emissions(5, rng);
  const auto gold = labels_from_string("BIOBI");
  Tensor<double> de({5, 3});
  CrfParams<double> dc;
  crf_nll_with_grad(e, gold, crf, 1.0, de, dc);
  const double h = 1e-5;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      auto ep = e, em = e;
      ep(i, c) += h;
      em(i, c) -= h;
      CHECK(de(i, c) == doctest::Approx((crf_nll(ep, gold, crf) - crf_nll(em, gold, crf)) / (2 * h)).epsilon(1e-6));
    }
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      auto cp = crf, cm = crf;
      cp.transition[a][b] += h;
      cm.transition[a][b] -= h;
      CHECK(dc.transition[a][b] ==
            doctest::Approx((crf_nll(e, gold, cp) - crf_nll(e, gold, cm)) / (2 * h)).epsilon(1e-6));
    }
}
