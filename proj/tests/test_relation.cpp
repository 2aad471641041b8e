// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msvq/grad_check.hpp"
#include "msvq/kernels.hpp"
#include "msvq/ops.hpp"
#include "msvq/relation.hpp"
#include "msvq/rng.hpp"

using namespace msvq;
using Td = Tensor<double>;

namespace {

const Temperatures kTemps{0.1, 0.04};

Td unit_rows(std::size_t n, std::size_t d, SeededRng& rng) {
  Td z({n, d});
  for (double& v : z.data()) v = rng.normal();
  return kernels::l2_normalize_rows(z, 1e-12);
}

Td unit_cols(std::size_t d, std::size_t q, SeededRng& rng) { return unit_rows(q, d, rng).transposed(); }

// Direct per-element evaluation: p[i][j] = exp(s_ij/τ) / Σ_k exp(s_ik/τ), with s_ij a dot product.
Td brute_probs(const Td& z, const Td& queue, double tau) {
  const std::size_t n = z.dim(0), d = z.dim(1), q = queue.dim(1);
  Td p({n, q});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(q);
    for (std::size_t j = 0; j < q; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += z.at(i, k) * queue.at(k, j);
      s[j] = dot / tau;
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double denom = 0;
    for (double v : s) denom += std::exp(v - mx);
    for (std::size_t j = 0; j < q; ++j) p.at(i, j) = std::exp(s[j] - mx) / denom;
  }
  return p;
}

double brute_ce(const Td& target, const Td& pred) {
  double total = 0;
  for (std::size_t i = 0; i < target.dim(0); ++i)
    for (std::size_t j = 0; j < target.dim(1); ++j) total -= target.at(i, j) * std::log(pred.at(i, j));
  return total / static_cast<double>(target.dim(0));
}

double brute_kl(const Td& target, const Td& pred) {
  double total = 0;
  for (std::size_t i = 0; i < target.dim(0); ++i)
    for (std::size_t j = 0; j < target.dim(1); ++j)
      total += target.at(i, j) * (std::log(target.at(i, j)) - std::log(pred.at(i, j)));
  return total / static_cast<double>(target.dim(0));
}

double brute_entropy(const Td& p) {
  double h = 0;
  for (double v : p.data())
    if (v > 0) h -= v * std::log(v);
  return h / static_cast<double>(p.dim(0));
}

Td permute_cols(const Td& m, const std::vector<std::size_t>& perm) {
  Td out(m.shape());
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < perm.size(); ++j) out.at(i, j) = m.at(i, perm[j]);
  return out;
}

// One random instance shared by the loss tests: N student rows against two queues.
struct Instance {
  Td z1, z2, z3, z4, q1, q2;
  Instance(std::size_t n, std::size_t d, std::size_t q, std::uint64_t seed) {
    SeededRng rng(seed, 0);
    z1 = unit_rows(n, d, rng);
    z2 = unit_rows(n, d, rng);
    z3 = unit_rows(n, d, rng);
    z4 = unit_rows(n, d, rng);
    q1 = unit_cols(d, q, rng);
    q2 = unit_cols(d, q, rng);
  }
};

double eval(Method m, const Instance& in) {
  Tape<double> tape;
  const Var<double> z1 = tape.leaf(in.z1);
  const Var<double> l11 = similarity_logits(z1, in.q1);
  const Var<double> l12 = similarity_logits(z1, in.q2);
  const Td l21 = similarity_logits(in.z2, in.q1);
  const Td l31 = similarity_logits(in.z3, in.q1);
  const Td l42 = similarity_logits(in.z4, in.q2);
  switch (m) {
    case Method::MoCo: return loss_moco(z1, in.z2, in.q1, kTemps.student).value()[0];
    case Method::ReSSL: return loss_ressl(l11, l21, kTemps).value()[0];
    case Method::MSV: return loss_msv(l11, l21, l31, kTemps).value()[0];
    case Method::MQ: return loss_mq(l11, l21, l12, l42, kTemps).value()[0];
    case Method::MSVQ: return loss_msvq(l11, l12, l21, l31, l42, kTemps).value()[0];
  }
  return 0;
}

}  // namespace

TEST(SimilarityLogits, HandCosine) {
  const Td u({1, 2}, {1 / std::sqrt(2.0), 1 / std::sqrt(2.0)});
  const Td v({2, 1}, {1.0, 0.0});
  EXPECT_NEAR(similarity_logits(u, v)[0], 0.70711, 1e-5);
}

TEST(SimilarityLogits, ShapeMismatch) {
  EXPECT_THROW(similarity_logits(Td({2, 3}), Td({4, 5})), ShapeError);
}

TEST(RelationDistribution, SharpenedTwoEntryOracle) {
  const Td logits({1, 2}, {1.0, 0.0});
  const auto d = relation_distribution(logits, 0.04, RelationSource::P21);
  const double e = std::exp(-25.0);
  EXPECT_NEAR(d.probs[0], 1 / (1 + e), 1e-15);
  EXPECT_NEAR(d.probs[1], e / (1 + e), 1e-20);
  EXPECT_EQ(d.source, RelationSource::P21);
}

TEST(RelationDistribution, MatchesBruteForceOnHundredInstances) {
  SeededRng rng(1, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const Td z = unit_rows(5, 6, rng), q = unit_cols(6, 7, rng);
    for (double tau : {0.1, 0.04}) {
      const Td p = relation_distribution(similarity_logits(z, q), tau, RelationSource::P11).probs;
      const Td oracle = brute_probs(z, q, tau);
      for (std::size_t i = 0; i < p.size(); ++i) ASSERT_NEAR(p[i], oracle[i], 1e-12);
    }
  }
}

TEST(RelationDistribution, RejectsNonPositiveTemperature) {
  EXPECT_THROW(relation_distribution(Td({1, 2}), 0.0, RelationSource::P11), ParameterError);
}

TEST(Temperatures, SharpeningConstraint) {
  EXPECT_NO_THROW(kTemps.validate());
  EXPECT_THROW((Temperatures{0.1, 0.2}.validate()), ParameterError);
  EXPECT_THROW((Temperatures{0.1, 0.1}.validate()), ParameterError);
  EXPECT_THROW((Temperatures{0.0, -1.0}.validate()), ParameterError);
}

TEST(Method, NamesAndViewUsage) {
  for (Method m : {Method::MoCo, Method::ReSSL, Method::MSV, Method::MQ, Method::MSVQ})
    EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_THROW(method_from_string("byol"), ParameterError);
  EXPECT_TRUE(uses_third_view(Method::MSV));
  EXPECT_TRUE(uses_third_view(Method::MSVQ));
  EXPECT_FALSE(uses_third_view(Method::MQ));
  EXPECT_TRUE(uses_second_queue(Method::MQ));
  EXPECT_TRUE(uses_second_queue(Method::MSVQ));
  EXPECT_FALSE(uses_second_queue(Method::ReSSL));
  EXPECT_FALSE(uses_second_queue(Method::MoCo));
}

TEST(LossMoco, AlignedPositiveOrthogonalQueue) {
  Td z({1, 3}, {1, 0, 0});
  const Td queue({3, 2}, {0, 0, 1, 0, 0, 1});
  Tape<double> tape;
  const double loss = loss_moco(tape.leaf(z), z, queue, 0.1).value()[0];
  EXPECT_NEAR(loss, -std::log(std::exp(10.0) / (std::exp(10.0) + 2)), 1e-12);
  EXPECT_NEAR(loss, 9.079e-5, 1e-8);
}

TEST(LossMoco, EqualsOneHotCrossEntropyOnAppendedLogits) {
  const Instance in(4, 5, 6, 2);
  Tape<double> tape;
  const double got = loss_moco(tape.leaf(in.z1), in.z2, in.q1, 0.1).value()[0];
  Td logits({4, 7});
  Td target({4, 7});
  const Td neg = similarity_logits(in.z1, in.q1);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 6; ++j) logits.at(i, j) = neg.at(i, j);
    double pos = 0;
    for (std::size_t k = 0; k < 5; ++k) pos += in.z1.at(i, k) * in.z2.at(i, k);
    logits.at(i, 6) = pos;
    target.at(i, 6) = 1.0;
  }
  Tape<double> t2;
  EXPECT_NEAR(got, ops::soft_cross_entropy(t2.leaf(logits), target, 0.1).value()[0], 1e-12);
}

TEST(LossRessl, CrossEntropyMinusEntropyIsKl) {
  const Instance in(3, 4, 5, 3);
  const double ce = eval(Method::ReSSL, in);
  const Td pt = brute_probs(in.z2, in.q1, 0.04), ps = brute_probs(in.z1, in.q1, 0.1);
  EXPECT_NEAR(ce, brute_ce(pt, ps), 1e-10);
  EXPECT_NEAR(ce - teacher_entropy(similarity_logits(in.z2, in.q1), 0.04), brute_kl(pt, ps), 1e-10);
}

TEST(LossMsv, MatchesBruteForce) {
  const Instance in(3, 4, 5, 4);
  const Td ps = brute_probs(in.z1, in.q1, 0.1);
  const double kl2 = brute_kl(brute_probs(in.z2, in.q1, 0.04), ps);
  const double kl3 = brute_kl(brute_probs(in.z3, in.q1, 0.04), ps);
  const double h = 0.5 * (brute_entropy(brute_probs(in.z2, in.q1, 0.04)) +
                          brute_entropy(brute_probs(in.z3, in.q1, 0.04)));
  EXPECT_NEAR(eval(Method::MSV, in), 0.5 * (kl2 + kl3) + h, 1e-10);
}

TEST(LossMq, MatchesBruteForce) {
  const Instance in(3, 4, 5, 5);
  const double ce1 = brute_ce(brute_probs(in.z2, in.q1, 0.04), brute_probs(in.z1, in.q1, 0.1));
  const double ce2 = brute_ce(brute_probs(in.z4, in.q2, 0.04), brute_probs(in.z1, in.q2, 0.1));
  EXPECT_NEAR(eval(Method::MQ, in), 0.5 * (ce1 + ce2), 1e-10);
}

TEST(LossMsvq, MatchesBruteForce) {
  const Instance in(3, 4, 5, 6);
  const Td ps1 = brute_probs(in.z1, in.q1, 0.1), ps2 = brute_probs(in.z1, in.q2, 0.1);
  const double ce = brute_ce(brute_probs(in.z2, in.q1, 0.04), ps1) +
                    brute_ce(brute_probs(in.z3, in.q1, 0.04), ps1) +
                    brute_ce(brute_probs(in.z4, in.q2, 0.04), ps2);
  EXPECT_NEAR(eval(Method::MSVQ, in), ce / 3, 1e-10);
}

TEST(LossIdentities, MsvqIsCombinationOfMsvMqAndRessl) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Instance in(4, 4, 8, 100 + seed);
    const double lhs = eval(Method::MSVQ, in);
    const double rhs = (2 * eval(Method::MSV, in) + 2 * eval(Method::MQ, in) - eval(Method::ReSSL, in)) / 3;
    EXPECT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST(LossIdentities, DuplicateViewCollapsesMsvToRessl) {
  Instance in(4, 4, 8, 7);
  in.z3 = in.z2;
  EXPECT_NEAR(eval(Method::MSV, in), eval(Method::ReSSL, in), 1e-12);
  // Same collapse seen through the three-term objective.
  const double ce3 = brute_ce(brute_probs(in.z4, in.q2, 0.04), brute_probs(in.z1, in.q2, 0.1));
  EXPECT_NEAR(eval(Method::MSVQ, in), (2 * eval(Method::ReSSL, in) + ce3) / 3, 1e-10);
}

TEST(LossIdentities, DuplicateQueueCollapsesMqToRessl) {
  Instance in(4, 4, 8, 8);
  in.q2 = in.q1;
  in.z4 = in.z2;
  EXPECT_NEAR(eval(Method::MQ, in), eval(Method::ReSSL, in), 1e-12);
}

TEST(LossIdentities, CrossEntropyBoundedBelowByTeacherEntropy) {
  SeededRng rng(9, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance in(3, 4, 6, 1000 + trial);
    const double h = teacher_entropy(similarity_logits(in.z2, in.q1), 0.04);
    EXPECT_GE(eval(Method::ReSSL, in), h - 1e-12);
  }
  // Equality when teacher and student distributions coincide.
  const Instance in(3, 4, 6, 11);
  Tape<double> tape;
  const Td l = similarity_logits(in.z1, in.q1);
  const Temperatures same{0.1, 0.05};
  Td doubled = l;
  for (double& v : doubled.data()) v *= 2;
  const double ce = loss_ressl(tape.leaf(doubled), l, same).value()[0];
  EXPECT_NEAR(ce, teacher_entropy(l, 0.05), 1e-12);
}

TEST(LossIdentities, QueuePermutationInvariance) {
  const Instance in(4, 4, 8, 12);
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  SeededRng rng(13, 0);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  Instance p = in;
  p.q1 = permute_cols(in.q1, perm);
  p.q2 = permute_cols(in.q2, perm);
  for (Method m : {Method::MoCo, Method::ReSSL, Method::MSV, Method::MQ, Method::MSVQ})
    EXPECT_NEAR(eval(m, in), eval(m, p), 1e-12) << to_string(m);
}

TEST(LossShapes, MismatchedTeacherLogitsRejected) {
  Tape<double> tape;
  const Var<double> l11 = tape.leaf(Td({2, 4}));
  EXPECT_THROW(loss_ressl(l11, Td({2, 5}), kTemps), ShapeError);
  EXPECT_THROW(loss_ressl(l11, Td({3, 4}), kTemps), ShapeError);
}

TEST(Sharpening, LowerTeacherTemperatureLowersEntropy) {
  SeededRng rng(16, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Td l = similarity_logits(unit_rows(3, 4, rng), unit_cols(4, 6, rng));
    double prev = teacher_entropy(l, 0.2);
    for (double tau : {0.1, 0.07, 0.04, 0.01}) {
      const double h = teacher_entropy(l, tau);
      EXPECT_LT(h, prev);
      prev = h;
    }
  }
}

TEST(LossGradients, AllObjectivesMatchFiniteDifferences) {
  // Student: z1 = normalize(x·W), batch 4, embedding 4, hidden 8, Q = 8.
  SeededRng rng(14, 0);
  Td x({4, 8});
  for (double& v : x.data()) v = rng.normal();
  Parameter<double> w("w", Td({8, 4}));
  for (double& v : w.value.data()) v = 0.5 * rng.normal();
  const Instance in(4, 4, 8, 15);
  for (Method m : {Method::MoCo, Method::ReSSL, Method::MSV, Method::MQ, Method::MSVQ}) {
    const LossBuilder build = [&](Tape<double>& tape) {
      const Var<double> z1 = ops::l2_normalize_rows(ops::matmul(tape.constant(x), tape.param(w)));
      const Var<double> l11 = similarity_logits(z1, in.q1);
      const Var<double> l12 = similarity_logits(z1, in.q2);
      const Td l21 = similarity_logits(in.z2, in.q1);
      const Td l31 = similarity_logits(in.z3, in.q1);
      const Td l42 = similarity_logits(in.z4, in.q2);
      switch (m) {
        case Method::MoCo: return loss_moco(z1, in.z2, in.q1, kTemps.student);
        case Method::ReSSL: return loss_ressl(l11, l21, kTemps);
        case Method::MSV: return loss_msv(l11, l21, l31, kTemps);
        case Method::MQ: return loss_mq(l11, l21, l12, l42, kTemps);
        case Method::MSVQ: return loss_msvq(l11, l12, l21, l31, l42, kTemps);
      }
      throw std::logic_error("unreachable");
    };
    EXPECT_LT(grad_check(build, {&w}), 1e-5) << to_string(m);
  }
}
