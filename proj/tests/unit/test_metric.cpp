#include <catch2/catch.hpp>

#include <cmath>

#include "sig2d/metric.hpp"
#include "../support/test_helpers.hpp"

using namespace sig2d;
using testsupport::gauss_jordan_inverse;

TEST_CASE("fit_gaussian uses the unbiased estimators", "[metric]") {
  Mat f(2, 2);
  f << 0, 0, 2, 2;
  GaussianModel m = fit_gaussian(f);
  REQUIRE(m.mean()[0] == Approx(1.0));
  REQUIRE(m.mean()[1] == Approx(1.0));
  REQUIRE(m.covariance()(0, 0) == Approx(2.0));
  REQUIRE(m.covariance()(0, 1) == Approx(2.0));
  REQUIRE(m.covariance()(1, 0) == Approx(2.0));
  REQUIRE(m.covariance()(1, 1) == Approx(2.0));
  REQUIRE(m.ridge() > 0.0);  // singular covariance
  REQUIRE(m.sample_count() == 2);
}

TEST_CASE("fit_gaussian rejects degenerate input", "[metric]") {
  Mat one_row(1, 3);
  one_row << 1, 2, 3;
  try {
    fit_gaussian(one_row);
    FAIL("expected insufficient data");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::InsufficientData);
  }

  Mat bad(3, 2);
  bad << 1, 2, 3, std::nan(""), 5, 6;
  try {
    fit_gaussian(bad);
    FAIL("expected validation error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::Validation);
  }
}

TEST_CASE("covariance of standard-normal draws is near identity", "[metric]") {
  Rng rng(42);
  const Mat f = testsupport::random_matrix(10000, 4, rng);
  GaussianModel m = fit_gaussian(f);
  REQUIRE((m.covariance() - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 0.1);
  REQUIRE(m.ridge() == 0.0);
}

TEST_CASE("identical rows keep solves finite through the ridge", "[metric]") {
  Mat f(5, 3);
  for (int r = 0; r < 5; ++r) f.row(r) << 0.4, 0.7, 0.1;
  GaussianModel m = fit_gaussian(f);
  REQUIRE(m.covariance().cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(m.ridge() > 0.0);
  Vec x(3);
  x << 1.0, 0.0, 0.0;
  const double score = covariance_norm(m, x);
  REQUIRE(std::isfinite(score));
  REQUIRE(score > 0.0);
}

TEST_CASE("factor solves reproduce (A + ridge I) v = b", "[metric]") {
  Rng rng(7);
  const Mat f = testsupport::random_matrix(40, 6, rng);
  GaussianModel m = fit_gaussian(f);
  for (int rep = 0; rep < 10; ++rep) {
    Vec v(6);
    for (int i = 0; i < 6; ++i) v[i] = rng.next_normal();
    Mat shifted = m.covariance();
    shifted.diagonal().array() += m.ridge();
    const Vec back = shifted * m.solve(v);
    REQUIRE((back - v).norm() <= 1e-8 * std::max(1.0, v.norm()));
  }
}

TEST_CASE("covariance norm identities", "[metric]") {
  SECTION("query at the mean scores zero") {
    Rng rng(9);
    const Mat f = testsupport::random_matrix(30, 5, rng);
    GaussianModel m = fit_gaussian(f);
    REQUIRE(covariance_norm(m, m.mean()) == 0.0);
  }

  SECTION("identity covariance reduces to the Euclidean norm") {
    GaussianModel m =
        GaussianModel::from_moments(Vec::Zero(2), Mat::Identity(2, 2), 10);
    Vec x(2);
    x << 3.0, 4.0;
    REQUIRE(covariance_norm(m, x) == Approx(5.0).margin(1e-12));
  }

  SECTION("matches an explicit dense-inverse computation") {
    Rng rng(13);
    const Mat a = testsupport::random_spd(6, rng);
    Vec mu(6);
    for (int i = 0; i < 6; ++i) mu[i] = rng.next_normal();
    GaussianModel m = GaussianModel::from_moments(mu, a, 100);
    REQUIRE(m.ridge() == 0.0);

    const Mat inv = gauss_jordan_inverse(a);
    for (int rep = 0; rep < 20; ++rep) {
      Vec x(6);
      for (int i = 0; i < 6; ++i) x[i] = rng.next_normal();
      const Vec diff = x - mu;
      const double expected = std::sqrt(diff.dot(inv * diff));
      const double got = covariance_norm(m, x);
      REQUIRE(got == Approx(expected).epsilon(1e-10));
    }
  }

  SECTION("dimension mismatch is a shape error") {
    GaussianModel m =
        GaussianModel::from_moments(Vec::Zero(2), Mat::Identity(2, 2), 10);
    try {
      covariance_norm(m, Vec::Zero(3));
      FAIL("expected shape error");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::Shape);
    }
  }
}

TEST_CASE("batched covariance norms equal looped single calls", "[metric]") {
  Rng rng(31);
  const Mat f = testsupport::random_matrix(50, 8, rng);
  GaussianModel m = fit_gaussian(f);
  const Mat queries = testsupport::random_matrix(1000, 8, rng);
  const ScoreList batch = covariance_norm_batch(m, queries);
  REQUIRE(batch.scores.size() == 1000);
  for (Eigen::Index r = 0; r < queries.rows(); ++r) {
    const double single = covariance_norm(m, queries.row(r).transpose());
    REQUIRE(batch.scores[static_cast<std::size_t>(r)] == single);  // bit-for-bit
  }
}

TEST_CASE("conformance score identities", "[metric]") {
  Rng rng(17);
  const Mat corpus = testsupport::random_matrix(25, 4, rng);

  SECTION("corpus members score zero") {
    for (Eigen::Index r = 0; r < corpus.rows(); ++r)
      REQUIRE(conformance_score(corpus, corpus.row(r).transpose()) <= 1e-8);
  }

  SECTION("square corpus example equals the member minimum") {
    Mat square(4, 2);
    square << 0, 0, 2, 0, 0, 2, 2, 2;
    Vec x(2);
    x << 1, 1;
    const GaussianModel m = fit_gaussian(square);
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < square.rows(); ++r)
      best = std::min(best,
                      std::sqrt(m.squared_norm(square.row(r).transpose() - x)));
    REQUIRE(conformance_score(square, x) == Approx(best).epsilon(1e-12));
  }

  SECTION("equals the brute-force min over members") {
    const GaussianModel m = fit_gaussian(corpus);
    Mat shifted = m.covariance();
    shifted.diagonal().array() += m.ridge();
    const Mat inv = gauss_jordan_inverse(shifted);
    for (int rep = 0; rep < 100; ++rep) {
      Vec x(4);
      for (int i = 0; i < 4; ++i) x[i] = rng.next_normal();
      double best = std::numeric_limits<double>::infinity();
      double worst = 0.0;
      for (Eigen::Index r = 0; r < corpus.rows(); ++r) {
        const Vec diff = corpus.row(r).transpose() - x;
        const double dist = std::sqrt(diff.dot(inv * diff));
        best = std::min(best, dist);
        worst = std::max(worst, dist);
      }
      const double got = conformance_score(corpus, x);
      REQUIRE(got == Approx(best).epsilon(1e-10));
      REQUIRE(got <= worst + 1e-12);  // min <= max, forced
    }
  }

  SECTION("undersized corpus is rejected") {
    Mat tiny(1, 4);
    tiny << 1, 2, 3, 4;
    try {
      conformance_score(tiny, Vec::Zero(4));
      FAIL("expected insufficient data");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::InsufficientData);
    }
  }
}

TEST_CASE("scores are nonnegative and finite", "[metric]") {
  Rng rng(23);
  const Mat corpus = testsupport::random_matrix(30, 3, rng);
  const GaussianModel m = fit_gaussian(corpus);
  const ConformanceScorer scorer(corpus);
  for (int rep = 0; rep < 50; ++rep) {
    Vec x(3);
    for (int i = 0; i < 3; ++i) x[i] = 10.0 * rng.next_normal();
    const double cov = covariance_norm(m, x);
    const double conf = scorer.score(x);
    REQUIRE(std::isfinite(cov));
    REQUIRE(std::isfinite(conf));
    REQUIRE(cov >= 0.0);
    REQUIRE(conf >= 0.0);
  }
}

TEST_CASE("covariance norm is affine invariant", "[metric]") {
  Rng rng(29);
  const Mat corpus = testsupport::random_matrix(60, 4, rng);
  Vec query(4);
  for (int i = 0; i < 4; ++i) query[i] = rng.next_normal();

  const GaussianModel base = fit_gaussian(corpus);
  REQUIRE(base.ridge() == 0.0);
  const double reference = covariance_norm(base, query);

  SECTION("general invertible map when no ridge is involved") {
    const Mat map = testsupport::random_spd(4, rng);  // invertible
    Vec shift(4);
    for (int i = 0; i < 4; ++i) shift[i] = rng.next_normal();
    Mat mapped = corpus * map.transpose();
    mapped.rowwise() += shift.transpose();
    const GaussianModel transformed = fit_gaussian(mapped);
    REQUIRE(transformed.ridge() == 0.0);
    const double got = covariance_norm(transformed, map * query + shift);
    REQUIRE(got == Approx(reference).epsilon(1e-8));
  }

  SECTION("orthogonal map with a ridged model") {
    // Duplicate a column so the covariance is singular and the ridge
    // engages; the ridge term is rotation invariant, so a reflector must
    // leave the score unchanged.
    Mat degenerate(60, 5);
    degenerate.leftCols(4) = corpus;
    degenerate.col(4) = corpus.col(0);
    Vec q5(5);
    q5 << query[0], query[1], query[2], query[3], query[0];

    Vec u(5);
    for (int i = 0; i < 5; ++i) u[i] = rng.next_normal();
    u.normalize();
    const Mat rot = Mat::Identity(5, 5) - 2.0 * u * u.transpose();

    const GaussianModel m1 = fit_gaussian(degenerate);
    REQUIRE(m1.ridge() > 0.0);
    const GaussianModel m2 = fit_gaussian(degenerate * rot.transpose());
    const double s1 = covariance_norm(m1, q5);
    const double s2 = covariance_norm(m2, rot * q5);
    REQUIRE(s2 == Approx(s1).epsilon(1e-6));
  }
}

TEST_CASE("model round-trips through its file format", "[metric]") {
  testsupport::TempDir dir;
  Rng rng(37);
  const Mat f = testsupport::random_matrix(20, 5, rng);
  GaussianModel m = fit_gaussian(f);
  const std::string path = dir.file("model.bin");
  m.save(path);
  GaussianModel loaded = GaussianModel::load(path);
  REQUIRE(loaded.dim() == 5);
  REQUIRE(loaded.ridge() == m.ridge());
  REQUIRE(loaded.sample_count() == 20);
  for (int i = 0; i < 5; ++i) REQUIRE(loaded.mean()[i] == m.mean()[i]);
  Vec x(5);
  for (int i = 0; i < 5; ++i) x[i] = rng.next_normal();
  REQUIRE(covariance_norm(loaded, x) == covariance_norm(m, x));
}
