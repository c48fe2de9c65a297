#include <gtest/gtest.h>

#include "feddadil/adaptation.hpp"
#include "oracles.hpp"

using namespace feddadil;

namespace {

// True when y lies in the convex hull of the rows of `pts` (3 classes): by
// Caratheodory a triangle of rows suffices, so every triple is tried.
bool in_hull_3(const Matrix& pts, const RowVector& y, double tol = 1e-9) {
  const auto n = pts.rows();
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a; b < n; ++b) {
      for (Eigen::Index c = b; c < n; ++c) {
        Eigen::Matrix3d m;
        m << pts(a, 0), pts(b, 0), pts(c, 0), pts(a, 1), pts(b, 1), pts(c, 1), 1, 1, 1;
        const Eigen::Vector3d rhs(y(0), y(1), 1.0);
        Eigen::Vector3d w;
        if (std::abs(m.determinant()) > 1e-12) {
          w = m.partialPivLu().solve(rhs);
        } else {
          w = m.completeOrthogonalDecomposition().solve(rhs);
          if ((m * w - rhs).norm() > tol) continue;
        }
        if (w.minCoeff() >= -tol && (w(0) * pts.row(a) + w(1) * pts.row(b) + w(2) * pts.row(c) - y).norm() < 1e-7) {
          return true;
        }
      }
    }
  }
  return false;
}

BarycenterConfig bary(std::size_t nb = 0) { return {nb, 1.0, 100, 1e-9, 0}; }

struct Constant {
  Matrix p;
  Matrix predict_proba(const Matrix& x) const { return p.topRows(x.rows()); }
};

}  // namespace

TEST(ReconstructTarget, SingleAtomIsReproduced) {
  std::mt19937_64 rng(1);
  const LabeledMeasure atom(oracle::gaussian(10, 3, rng), oracle::soft_labels(10, 4, rng));
  const Dictionary dict({atom});
  const LabeledMeasure rec = reconstruct_target(dict, BarycentricCoordinates::uniform(1), 0, bary());
  EXPECT_LT(wasserstein2_squared(rec, atom), 1e-5);
  EXPECT_LT(transport_cost(label_aware_cost(rec, atom, 1.0), solve_exact_ot(label_aware_cost(rec, atom, 1.0))),
            1e-5);
}

TEST(ReconstructTarget, MidpointOfTwoPoints) {
  Matrix a(1, 2), b(1, 2), ya(1, 2), yb(1, 2);
  a << 0, 0;
  b << 2, 4;
  ya << 1, 0;
  yb << 0, 1;
  const Dictionary dict({LabeledMeasure(a, ya), LabeledMeasure(b, yb)});
  const LabeledMeasure rec = reconstruct_target(dict, BarycentricCoordinates::uniform(2), 0, bary());
  EXPECT_NEAR(rec.features()(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(rec.features()(0, 1), 2.0, 1e-15);
  EXPECT_NEAR(rec.labels()(0, 0), 0.5, 1e-15);
}

TEST(ReconstructTarget, LabelRowsStayInTheHullOfAtomLabels) {
  std::mt19937_64 rng(2);
  std::vector<LabeledMeasure> atoms;
  for (int k = 0; k < 2; ++k) atoms.emplace_back(oracle::gaussian(4, 2, rng), oracle::soft_labels(4, 3, rng));
  const Dictionary dict(atoms);
  Vector w(2);
  w << 0.3, 0.7;
  const LabeledMeasure rec = reconstruct_target(dict, BarycentricCoordinates(w), 6, bary());
  Matrix all(8, 3);
  all << atoms[0].labels(), atoms[1].labels();
  EXPECT_EQ(rec.size(), 6u);
  EXPECT_TRUE(rows_on_simplex(rec.labels(), 1e-9));
  for (Eigen::Index i = 0; i < rec.labels().rows(); ++i) EXPECT_TRUE(in_hull_3(all, rec.labels().row(i))) << i;
  EXPECT_THROW(reconstruct_target(dict, BarycentricCoordinates::uniform(3), 0, bary()), ShapeError);
}

TEST(HullOracle, RejectsOutsidePoints) {
  Matrix pts(3, 3);
  pts << 0.5, 0.5, 0, 0.5, 0, 0.5, 0.4, 0.3, 0.3;
  RowVector inside(3), outside(3);
  inside << 0.45, 0.3, 0.25;
  outside << 0, 0, 1;
  EXPECT_TRUE(in_hull_3(pts, inside));
  EXPECT_FALSE(in_hull_3(pts, outside));
}

TEST(TrainErm, SeparatedClassesOnALine) {
  Matrix x(40, 1);
  std::vector<std::size_t> cls;
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = i < 20 ? -2.0 - 0.1 * i : 2.0 + 0.1 * (i - 20);
    cls.push_back(i < 20 ? 0 : 1);
  }
  const LabeledMeasure data(x, one_hot(cls, 2));
  const SoftmaxClassifier clf = train_erm(data, {200, 0.5, 0, false, 0});
  EXPECT_GE(evaluate_accuracy(clf, data), 0.99);
}

TEST(TrainErm, UniformLabelsReachTheEntropyFloor) {
  std::mt19937_64 rng(3);
  const LabeledMeasure data(oracle::gaussian(30, 2, rng), Matrix::Constant(30, 4, 0.25));
  std::vector<double> losses;
  train_erm(data, {300, 0.5, 0, false, 0}, &losses);
  EXPECT_NEAR(losses.back(), std::log(4.0), 1e-2);
  for (std::size_t e = 1; e < losses.size(); ++e) EXPECT_LE(losses[e], losses[e - 1] + 1e-6);
}

TEST(TrainErm, ZeroEpochsAndHardLabels) {
  std::mt19937_64 rng(4);
  const LabeledMeasure data(oracle::gaussian(12, 3, rng), oracle::soft_labels(12, 3, rng));
  EXPECT_EQ(train_erm(data, {0, 0.1, 0, false, 0}), SoftmaxClassifier::zeros(3, 3));

  Matrix hard = data.labels();
  for (Eigen::Index i = 0; i < hard.rows(); ++i) {
    Eigen::Index c;
    hard.row(i).maxCoeff(&c);
    hard.row(i).setZero();
    hard(i, c) = 1.0;
  }
  const LabeledMeasure argmaxed(data.features(), hard);
  EXPECT_EQ(train_erm(data, {20, 0.1, 5, true, 3}), train_erm(argmaxed, {20, 0.1, 5, false, 3}));
  EXPECT_THROW(train_erm(data.without_labels(), {}), DomainError);
}

TEST(TrainErm, LossNonIncreasingAtModerateStep) {
  std::mt19937_64 rng(5);
  const LabeledMeasure data(oracle::gaussian(50, 4, rng), oracle::soft_labels(50, 3, rng));
  std::vector<double> losses;
  train_erm(data, {100, 0.1, 0, false, 0}, &losses);
  for (std::size_t e = 1; e < losses.size(); ++e) EXPECT_LE(losses[e], losses[e - 1] + 1e-6);
}

TEST(Ensemble, Examples) {
  std::mt19937_64 rng(6);
  const LabeledMeasure data(oracle::gaussian(20, 2, rng), oracle::soft_labels(20, 2, rng));
  const SoftmaxClassifier one = train_erm(data, {50, 0.3, 0, false, 0});
  const Ensemble single{{one}, BarycentricCoordinates::uniform(1)};
  RowVector z(2);
  z << 0.3, -1.2;
  EXPECT_EQ(ensemble_predict(single, z), one.predict_proba(Matrix(z)).row(0));

  // Members that are certain of opposite classes.
  SoftmaxClassifier left = SoftmaxClassifier::zeros(2, 2);
  SoftmaxClassifier right = SoftmaxClassifier::zeros(2, 2);
  left.bias << 1000, 0;
  right.bias << 0, 1000;
  const Ensemble pair{{left, right}, BarycentricCoordinates::uniform(2)};
  const RowVector out = ensemble_predict(pair, z);
  EXPECT_NEAR(out(0), 0.5, 1e-12);
  EXPECT_NEAR(out(1), 0.5, 1e-12);

  const Ensemble mismatch{{left}, BarycentricCoordinates::uniform(2)};
  EXPECT_THROW(ensemble_predict(mismatch, z), ShapeError);
}

TEST(Ensemble, OutputsStayOnTheSimplex) {
  std::mt19937_64 rng(7);
  std::vector<LabeledMeasure> atoms;
  for (int k = 0; k < 3; ++k) atoms.emplace_back(oracle::gaussian(15, 3, rng), oracle::soft_labels(15, 4, rng));
  const Dictionary dict(atoms);
  Vector w(3);
  w << 0.2, 0.5, 0.3;
  const Ensemble ens = train_ensemble(dict, BarycentricCoordinates(w), {30, 0.3, 0, false, 1});
  ASSERT_EQ(ens.members.size(), 3u);
  const Matrix p = ens.predict_proba(oracle::gaussian(25, 3, rng, 3.0));
  EXPECT_LT((p.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_GE(p.minCoeff(), 0.0);
}

TEST(Distill, SummarySizes) {
  std::mt19937_64 rng(8);
  std::vector<LabeledMeasure> atoms;
  for (int k = 0; k < 2; ++k) atoms.emplace_back(oracle::gaussian(12, 2, rng), oracle::soft_labels(12, 3, rng));
  const Dictionary dict(atoms);
  const BarycentricCoordinates alpha = BarycentricCoordinates::uniform(2);
  EXPECT_EQ(distill(dict, alpha, 1, bary()).size(), 3u);
  EXPECT_EQ(distill(dict, alpha, 3, bary()).size(), 9u);
  const LabeledMeasure full = distill(dict, alpha, 4, bary());
  const LabeledMeasure rec = reconstruct_target(dict, alpha, 0, bary());
  EXPECT_EQ(full.features(), rec.features());
  EXPECT_EQ(full.labels(), rec.labels());
  EXPECT_THROW(distill(dict, alpha, 0, bary()), ConfigError);
}

TEST(MeanLabelEntropy, KnownValues) {
  Matrix y(2, 2);
  y << 1, 0, 0.5, 0.5;
  EXPECT_NEAR(mean_label_entropy(LabeledMeasure(Matrix::Zero(2, 1), y)), 0.5 * std::log(2.0), 1e-15);
}

TEST(EvaluateAccuracy, Examples) {
  const Matrix truth = one_hot({0, 1, 1, 0}, 2);
  const LabeledMeasure test(Matrix::Zero(4, 1), truth);
  EXPECT_EQ(evaluate_accuracy(Constant{truth}, test), 1.0);
  EXPECT_EQ(evaluate_accuracy(Constant{Matrix::Constant(4, 2, 0.5)}, test), 0.5);
  Matrix three_right = truth;
  three_right.row(2) << 0.9, 0.1;
  EXPECT_EQ(evaluate_accuracy(Constant{three_right}, test), 0.75);

  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Matrix permuted(4, 2);
  for (int i = 0; i < 4; ++i) permuted.row(i) = three_right.row(static_cast<Eigen::Index>(perm[i]));
  EXPECT_EQ(evaluate_accuracy(Constant{permuted}, test.subset(perm)), 0.75);
  EXPECT_THROW(evaluate_accuracy(Constant{truth}, test.without_labels()), DomainError);
}

TEST(Classifier, PredictionsAreDistributions) {
  std::mt19937_64 rng(9);
  SoftmaxClassifier clf{oracle::gaussian(5, 3, rng, 10.0), oracle::gaussian(5, 1, rng)};
  const Matrix p = clf.predict_proba(oracle::gaussian(40, 3, rng, 10.0));
  EXPECT_LT((p.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
  EXPECT_TRUE(p.allFinite());
  EXPECT_THROW(clf.predict_proba(Matrix::Zero(1, 2)), ShapeError);
}
