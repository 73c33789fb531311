#include <cmath>
#include <set>

#include <Eigen/SVD>
#include <gtest/gtest.h>

#include "rsgn/sketch.hpp"

namespace rsgn {
namespace {

const std::vector<SketchKind> kAllRandomKinds = {SketchKind::gaussian(), SketchKind::hashing(1),
                                                 SketchKind::hashing(3), SketchKind::sampling()};

Vector random_vector(Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

TEST(Sketch, IdentityIsIdentity) {
  Rng rng(1);
  const auto s = draw_sketch(SketchKind::identity(), 3, 3, rng);
  EXPECT_TRUE(s.transpose_dense().isApprox(Matrix::Identity(3, 3)));
  const Vector y = Vector::LinSpaced(3, 1.0, 3.0);
  EXPECT_EQ(s.apply(y), y);
  const Vector t = Vector::LinSpaced(2, 1.0, 2.0);
  EXPECT_EQ(draw_sketch(SketchKind::identity(), 2, 2, rng).apply_transpose(t), t);
}

TEST(Sketch, OneByOneSamplingIsOne) {
  Rng rng(5);
  const auto s = draw_sketch(SketchKind::sampling(), 1, 1, rng);
  ASSERT_EQ(s.entries().size(), 1u);
  EXPECT_EQ(s.entries()[0], (SketchEntry{0, 0, 1.0}));
}

TEST(Sketch, HashingColumnsHaveExactlySNonzeros) {
  Rng rng(0);
  const auto s = draw_sketch(SketchKind::hashing(2), 4, 10, rng);
  std::vector<std::set<Index>> rows_of(10);
  for (const auto& e : s.entries()) {
    EXPECT_DOUBLE_EQ(std::abs(e.value), 1.0 / std::sqrt(2.0));
    EXPECT_TRUE(rows_of[static_cast<std::size_t>(e.col)].insert(e.row).second) << "repeated row";
  }
  for (const auto& rows : rows_of) EXPECT_EQ(rows.size(), 2u);
  EXPECT_EQ(s.entries().size(), 20u);
  // Unit column norms.
  const Matrix st = s.transpose_dense();
  for (Index j = 0; j < 10; ++j) EXPECT_NEAR(st.row(j).norm(), 1.0, 1e-15);
}

TEST(Sketch, PayloadSortedByColumn) {
  Rng rng(3);
  for (const auto& kind : {SketchKind::hashing(3), SketchKind::sampling()}) {
    const auto s = draw_sketch(kind, 6, 40, rng);
    for (std::size_t i = 1; i < s.entries().size(); ++i)
      EXPECT_LE(s.entries()[i - 1].col, s.entries()[i].col);
  }
}

TEST(Sketch, SamplingRowsHaveOneScaledEntry) {
  Rng rng(9);
  const auto s = draw_sketch(SketchKind::sampling(), 7, 50, rng);
  std::vector<int> per_row(7, 0);
  for (const auto& e : s.entries()) {
    ++per_row[static_cast<std::size_t>(e.row)];
    EXPECT_DOUBLE_EQ(e.value, std::sqrt(50.0 / 7.0));
  }
  for (int c : per_row) EXPECT_EQ(c, 1);
}

TEST(Sketch, DrawRejectsBadDimensions) {
  Rng rng(0);
  EXPECT_THROW(draw_sketch(SketchKind::gaussian(), 5, 4, rng), DimensionError);
  EXPECT_THROW(draw_sketch(SketchKind::sampling(), 0, 4, rng), DimensionError);
  EXPECT_THROW(draw_sketch(SketchKind::identity(), 2, 3, rng), DimensionError);
  EXPECT_THROW(draw_sketch(SketchKind::hashing(5), 4, 10, rng), ParameterError);
  EXPECT_THROW(draw_sketch(SketchKind::hashing(0), 4, 10, rng), ParameterError);
}

TEST(Sketch, ApplyRejectsWrongLength) {
  Rng rng(0);
  const auto s = draw_sketch(SketchKind::gaussian(), 2, 4, rng);
  EXPECT_THROW(s.apply(Vector::Zero(3)), DimensionError);
  EXPECT_THROW(s.apply_transpose(Vector::Zero(4)), DimensionError);
}

TEST(Sketch, SamplingApplyByHand) {
  // Selected coordinates (3, 1), d = 4, l = 2, scale sqrt(2).
  const double r2 = std::sqrt(2.0);
  const SketchOperator s(SketchKind::sampling(), 2, 4, {{1, 1, r2}, {0, 3, r2}}, {3, 1});
  const Vector y = (Vector(4) << 10.0, 20.0, 30.0, 40.0).finished();
  const Vector sy = s.apply(y);
  EXPECT_DOUBLE_EQ(sy[0], r2 * 40.0);
  EXPECT_DOUBLE_EQ(sy[1], r2 * 20.0);
  EXPECT_EQ(*s.column_support(), (std::vector<Index>{3, 1}));
}

TEST(Sketch, SamplingTransposeByHand) {
  const double r3 = std::sqrt(3.0);
  const SketchOperator s(SketchKind::sampling(), 1, 3, {{0, 1, r3}}, {1});
  const Vector out = s.apply_transpose((Vector(1) << 5.0).finished());
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[1], 5.0 * r3);
  EXPECT_DOUBLE_EQ(out[2], 0.0);
}

TEST(Sketch, GaussianNormPreservedOnAverage) {
  Rng rng(123);
  Vector y = random_vector(500, rng);
  y.normalize();
  double sum = 0.0;
  for (int t = 0; t < 1000; ++t) sum += draw_sketch(SketchKind::gaussian(), 50, 500, rng).apply(y).squaredNorm();
  const double mean = sum / 1000.0;
  EXPECT_GE(mean, 0.9);
  EXPECT_LE(mean, 1.1);
}

TEST(Sketch, AdjointIdentityAllKinds) {
  Rng rng(77);
  std::vector<SketchKind> kinds = kAllRandomKinds;
  kinds.push_back(SketchKind::identity());
  for (const auto& kind : kinds) {
    for (int trial = 0; trial < 20; ++trial) {
      const Index d = 30;
      const Index l = kind.family == SketchKind::Family::Identity ? d : 7;
      const auto s = draw_sketch(kind, l, d, rng);
      const Vector y = random_vector(d, rng);
      const Vector z = random_vector(l, rng);
      const double lhs = s.apply_transpose(z).dot(y);
      const double rhs = z.dot(s.apply(y));
      EXPECT_LE(std::abs(lhs - rhs), 1e-12 * z.norm() * y.norm()) << kind.name();
    }
  }
}

TEST(Sketch, ColumnSupport) {
  Rng rng(4);
  EXPECT_EQ(*draw_sketch(SketchKind::identity(), 3, 3, rng).column_support(),
            (std::vector<Index>{0, 1, 2}));
  EXPECT_FALSE(draw_sketch(SketchKind::hashing(2), 3, 9, rng).column_support());
  EXPECT_FALSE(draw_sketch(SketchKind::gaussian(), 3, 9, rng).column_support());

  const SketchOperator repeated(SketchKind::sampling(), 2, 9, {{0, 7, 1.5}, {1, 7, 1.5}}, {7, 7});
  EXPECT_EQ(*repeated.column_support(), (std::vector<Index>{7, 7}));
  EXPECT_EQ(repeated.apply(Vector::Unit(9, 7)), (Vector(2) << 1.5, 1.5).finished());
}

TEST(Sketch, SamplingDrawsWithReplacement) {
  // l = d = 6 without repeats has probability 6!/6^6 ~ 1.5%; some seed must repeat.
  bool saw_repeat = false;
  for (std::uint64_t seed = 0; seed < 50 && !saw_repeat; ++seed) {
    Rng rng(seed);
    const auto support = *draw_sketch(SketchKind::sampling(), 6, 6, rng).column_support();
    saw_repeat = std::set<Index>(support.begin(), support.end()).size() < support.size();
  }
  EXPECT_TRUE(saw_repeat);
}

TEST(Sketch, OperatorNormEstimate) {
  Rng rng(2);
  EXPECT_NEAR(operator_norm_estimate(draw_sketch(SketchKind::identity(), 5, 5, rng)), 1.0, 1e-8);

  const SketchOperator distinct(SketchKind::sampling(), 2, 8, {{1, 2, 2.0}, {0, 5, 2.0}}, {5, 2});
  EXPECT_NEAR(operator_norm_estimate(distinct), 2.0, 1e-6);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r(seed);
    EXPECT_GE(operator_norm_estimate(draw_sketch(SketchKind::hashing(1), 10, 40, r)), 1.0 - 1e-12);
  }
  EXPECT_THROW(operator_norm_estimate(distinct, 0), ParameterError);
}

TEST(Sketch, OperatorNormIsLowerBoundOfExact) {
  Rng rng(8);
  const auto s = draw_sketch(SketchKind::gaussian(), 6, 20, rng);
  Eigen::JacobiSVD<Matrix> svd(s.dense());
  const double exact = svd.singularValues()[0];
  const double est = operator_norm_estimate(s, 200);
  EXPECT_LE(est, exact * (1.0 + 1e-12));
  EXPECT_NEAR(est, exact, 1e-6 * exact);
}

TEST(Sketch, EmbeddingTrialIdentityNeverFails) {
  Rng rng(1);
  EXPECT_EQ(embedding_trial(SketchKind::identity(), 20, 20, 0.1, 50, rng), 0.0);
}

TEST(Sketch, EmbeddingTrialSamplingMatchesClosedForm) {
  Rng rng(2024);
  const Index d = 100;
  const Index l = 25;
  const double rate = embedding_trial(SketchKind::sampling(), l, d, 0.3, 10000, rng,
                                      Vector::Unit(d, 0), EmbeddingSide::Lower);
  const double closed = std::pow(1.0 - 1.0 / d, static_cast<double>(l));
  EXPECT_NEAR(closed, 0.778, 5e-4);
  EXPECT_NEAR(rate, closed, 0.05);
  // Sampling e_1 once already overshoots: |Sy|^2 = d/l = 4 per hit, so the
  // two-sided test always fails.
  EXPECT_EQ(embedding_trial(SketchKind::sampling(), l, d, 0.3, 200, rng, Vector::Unit(d, 0)), 1.0);
}

TEST(Sketch, SamplingSensitiveToNonUniformity) {
  Rng rng(31);
  const Index d = 64;
  const Index l = 16;
  const Vector flat = Vector::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  const double spiky = embedding_trial(SketchKind::sampling(), l, d, 0.5, 2000, rng, Vector::Unit(d, 0));
  const double uniform = embedding_trial(SketchKind::sampling(), l, d, 0.5, 2000, rng, flat);
  EXPECT_GT(spiky, uniform);
}

TEST(Sketch, EmbeddingTrialValidatesArguments) {
  Rng rng(0);
  EXPECT_THROW(embedding_trial(SketchKind::gaussian(), 2, 4, 0.0, 10, rng), ParameterError);
  EXPECT_THROW(embedding_trial(SketchKind::gaussian(), 2, 4, 0.5, 0, rng), ParameterError);
}

// Monte-Carlo mean of |Sy|^2 / |y|^2 within three standard errors of one.
TEST(SketchProperty, UnbiasedSquaredNorm) {
  Rng rng(4242);
  const Index d = 64;
  const Index l = 16;
  for (const auto& kind : kAllRandomKinds) {
    const Vector y = random_vector(d, rng);
    const double ny2 = y.squaredNorm();
    const int draws = 10000;
    double sum = 0.0;
    double sum2 = 0.0;
    for (int t = 0; t < draws; ++t) {
      const double ratio = draw_sketch(kind, l, d, rng).apply(y).squaredNorm() / ny2;
      sum += ratio;
      sum2 += ratio * ratio;
    }
    const double mean = sum / draws;
    const double var = (sum2 - draws * mean * mean) / (draws - 1);
    const double se = std::sqrt(var / draws);
    EXPECT_LE(std::abs(mean - 1.0), 3.0 * se) << kind.name() << " mean " << mean;
  }
}

TEST(SketchProperty, SameSeedSamePayload) {
  for (const auto& kind : kAllRandomKinds) {
    Rng a(99);
    Rng b(99);
    const auto s1 = draw_sketch(kind, 5, 33, a);
    const auto s2 = draw_sketch(kind, 5, 33, b);
    EXPECT_EQ(s1.entries(), s2.entries());
    EXPECT_EQ(s1.dense(), s2.dense());
  }
}

TEST(SketchKindNames, RoundTrip) {
  for (const auto& kind : {SketchKind::gaussian(), SketchKind::hashing(4), SketchKind::sampling(),
                           SketchKind::identity()}) {
    EXPECT_EQ(SketchKind::parse(kind.name()), kind);
  }
  EXPECT_EQ(SketchKind::parse("hashing"), SketchKind::hashing(1));
  EXPECT_THROW(SketchKind::parse("hashing:x"), ParameterError);
  EXPECT_THROW(SketchKind::parse("srht"), ParameterError);
}

}  // namespace
}  // namespace rsgn
