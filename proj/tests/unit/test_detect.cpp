#include <catch2/catch.hpp>

#include <cmath>
#include <fstream>
#include <set>

#include "sig2d/detect.hpp"
#include "../support/test_helpers.hpp"

using namespace sig2d;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

// Batch of constant tensors whose channel means are given per sample; the
// Flatten pipeline then produces exactly those feature vectors.
TensorBatch constant_batch(const Mat& channel_means) {
  TensorBatch batch;
  for (Eigen::Index r = 0; r < channel_means.rows(); ++r) {
    ImageTensor t = ImageTensor::zeros(4, 4, static_cast<int>(channel_means.cols()));
    for (int rr = 0; rr < 4; ++rr)
      for (int cc = 0; cc < 4; ++cc)
        for (Eigen::Index ch = 0; ch < channel_means.cols(); ++ch)
          t.at(rr, cc, static_cast<int>(ch)) = channel_means(r, ch);
    batch.tensors.push_back(std::move(t));
    batch.sample_ids.push_back(r);
  }
  return batch;
}

Threshold manual_threshold(int label, const Vec& mean, double cutoff) {
  Threshold th;
  th.label = label;
  th.metric = Metric::CovNorm;
  th.cutoff = cutoff;
  th.percentile = 50.0;
  auto ref = std::make_shared<Mat>(2, mean.size());
  ref->row(0) = mean.transpose();
  ref->row(1) = mean.transpose();
  th.reference = ref;
  th.model = std::make_shared<GaussianModel>(GaussianModel::from_moments(
      mean, Mat::Identity(mean.size(), mean.size()), 2));
  return th;
}

}  // namespace

TEST_CASE("percentile interpolation between closest ranks", "[detect]") {
  REQUIRE(percentile_interpolated({1, 2, 3, 4, 5}, 80.0) == Approx(4.2));
  REQUIRE(percentile_interpolated({5, 4, 3, 2, 1}, 80.0) == Approx(4.2));
  for (double r : {5.0, 33.0, 50.0, 97.0})
    REQUIRE(percentile_interpolated({7.5, 7.5, 7.5}, r) == 7.5);
  REQUIRE_THROWS_AS(percentile_interpolated({1.0, 2.0}, 0.0), Error);
  REQUIRE_THROWS_AS(percentile_interpolated({1.0, 2.0}, 100.0), Error);
}

TEST_CASE("threshold calibration splits, scores and interpolates", "[detect]") {
  Rng rng(5);
  const Mat corpus = testsupport::random_matrix(101, 3, rng);

  SECTION("same seed reproduces the cutoff bit-for-bit") {
    const Threshold a = calibrate_threshold(corpus, 80.0, Metric::CovNorm, 123);
    const Threshold b = calibrate_threshold(corpus, 80.0, Metric::CovNorm, 123);
    REQUIRE(a.cutoff == b.cutoff);
    REQUIRE(a.reference->rows() == 51);  // odd corpus: extra row kept
    REQUIRE((*a.reference - *b.reference).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("cutoff is monotone in the percentile on one split") {
    double prev = -1.0;
    for (double r : {10.0, 30.0, 50.0, 70.0, 90.0}) {
      const Threshold th = calibrate_threshold(corpus, r, Metric::CovNorm, 7);
      REQUIRE(th.cutoff >= prev);
      prev = th.cutoff;
    }
  }

  SECTION("conf-score calibration works and scores members zero") {
    const Threshold th = calibrate_threshold(corpus, 50.0, Metric::ConfScore, 9);
    REQUIRE(th.cutoff > 0.0);
    REQUIRE(score_against_reference(th, th.reference->row(0).transpose()) <=
            1e-8);
  }

  SECTION("parameter and size errors") {
    REQUIRE_THROWS_AS(calibrate_threshold(corpus, 101.0, Metric::CovNorm, 1), Error);
    Mat tiny(3, 2);
    tiny << 1, 2, 3, 4, 5, 6;
    try {
      calibrate_threshold(tiny, 50.0, Metric::CovNorm, 1);
      FAIL("expected insufficient data");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::InsufficientData);
    }
  }
}

TEST_CASE("detect scores corpus members as benign under conf-score", "[detect]") {
  Rng rng(15);
  Mat means(40, 2);
  for (Eigen::Index r = 0; r < 40; ++r) {
    means(r, 0) = 0.2 + 0.6 * rng.next_unit();
    means(r, 1) = 0.2 + 0.6 * rng.next_unit();
  }
  TensorBatch corpus = constant_batch(means);
  FeatureConfig pipeline;
  pipeline.kind = FeatureConfig::Kind::Flatten;

  const Mat features = pipeline.apply_batch(corpus);
  const Threshold th =
      calibrate_threshold(features, 80.0, Metric::ConfScore, 321);

  // A test sample equal to a retained reference member scores exactly zero.
  Mat one(1, 2);
  one.row(0) = th.reference->row(0);
  TensorBatch test = constant_batch(one);
  const DetectionReport report =
      detect(test, {th}, pipeline, DecisionRule::SingleClass);
  REQUIRE(report.per_sample.size() == 1);
  REQUIRE(report.per_sample[0].scores[0] == 0.0);
  REQUIRE_FALSE(report.per_sample[0].anomalous);
}

TEST_CASE("all-classes rule needs every cutoff exceeded", "[detect]") {
  Vec mu0(2), mu1(2);
  mu0 << 0.0, 0.0;
  mu1 << 10.0, 10.0;
  const Threshold t0 = manual_threshold(0, mu0, 1.0);
  const Threshold t1 = manual_threshold(1, mu1, 1.0);
  FeatureConfig pipeline;
  pipeline.kind = FeatureConfig::Kind::Flatten;

  // Sample at (0.5, 0): inside class 0's cutoff, far outside class 1's.
  Mat means(1, 2);
  means << 0.5, 0.0;
  TensorBatch test = constant_batch(means);

  const DetectionReport all =
      detect(test, {t0, t1}, pipeline, DecisionRule::AllClasses);
  REQUIRE(all.thresholds_used.size() == 2);
  REQUIRE(all.thresholds_used[1].label == 1);
  REQUIRE_FALSE(all.per_sample[0].anomalous);  // benign for class 0
  REQUIRE_FALSE(all.per_sample[0].exceeds[0]);
  REQUIRE(all.per_sample[0].exceeds[1]);

  // Far from both means: anomalous under the joint rule.
  Mat far(1, 2);
  far << 100.0, -40.0;
  const DetectionReport flagged =
      detect(constant_batch(far), {t0, t1}, pipeline, DecisionRule::AllClasses);
  REQUIRE(flagged.per_sample[0].anomalous);
}

TEST_CASE("raising a cutoff never flips benign to anomalous", "[detect]") {
  Rng rng(25);
  Mat means(30, 2);
  for (Eigen::Index r = 0; r < 30; ++r) {
    means(r, 0) = rng.next_unit();
    means(r, 1) = rng.next_unit();
  }
  TensorBatch test = constant_batch(means);
  FeatureConfig pipeline;
  pipeline.kind = FeatureConfig::Kind::Flatten;

  Vec mu(2);
  mu << 0.5, 0.5;
  const Threshold low = manual_threshold(0, mu, 0.2);
  Threshold high = low;
  high.cutoff = 0.3;

  const DetectionReport before =
      detect(test, {low}, pipeline, DecisionRule::SingleClass);
  const DetectionReport after =
      detect(test, {high}, pipeline, DecisionRule::SingleClass);
  for (std::size_t i = 0; i < before.per_sample.size(); ++i)
    if (!before.per_sample[i].anomalous)
      REQUIRE_FALSE(after.per_sample[i].anomalous);
}

TEST_CASE("detect validates threshold and pipeline compatibility", "[detect]") {
  Vec mu(6);
  mu.setZero();
  const Threshold th = manual_threshold(0, mu, 1.0);
  FeatureConfig pipeline;
  pipeline.kind = FeatureConfig::Kind::Flatten;  // 3 features on 3 channels
  Mat means = Mat::Constant(1, 3, 0.5);
  try {
    detect(constant_batch(means), {th}, pipeline, DecisionRule::SingleClass);
    FAIL("expected config error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::Config);
  }
  REQUIRE_THROWS_AS(
      detect(constant_batch(means), {}, pipeline, DecisionRule::SingleClass),
      Error);
}

TEST_CASE("report CSV is deterministic across thread counts", "[detect]") {
  testsupport::TempDir dir;
  Rng rng(35);
  Mat corpus_means(24, 3);
  for (Eigen::Index r = 0; r < 24; ++r)
    for (int c = 0; c < 3; ++c) corpus_means(r, c) = rng.next_unit();
  FeatureConfig pipeline;
  pipeline.kind = FeatureConfig::Kind::Flatten;
  TensorBatch corpus = constant_batch(corpus_means);
  const Threshold th = calibrate_threshold(pipeline.apply_batch(corpus), 80.0,
                                           Metric::CovNorm, 55);

  Mat test_means(17, 3);
  for (Eigen::Index r = 0; r < 17; ++r)
    for (int c = 0; c < 3; ++c) test_means(r, c) = rng.next_unit();
  TensorBatch test = constant_batch(test_means);

  const DetectionReport r1 =
      detect(test, {th}, pipeline, DecisionRule::SingleClass, 1);
  const DetectionReport r3 =
      detect(test, {th}, pipeline, DecisionRule::SingleClass, 3);
  const std::string p1 = dir.file("report1.csv");
  const std::string p3 = dir.file("report3.csv");
  write_report_csv(r1, p1);
  write_report_csv(r3, p3);
  REQUIRE(slurp(p1) == slurp(p3));
  // One row per (sample, class) plus the header.
  std::string body = slurp(p1);
  REQUIRE(std::count(body.begin(), body.end(), '\n') == 17 + 1);
}

TEST_CASE("mean difference diagnostics", "[detect]") {
  SECTION("zero against the model's own mean") {
    Rng rng(45);
    const Mat f = testsupport::random_matrix(30, 4, rng);
    const GaussianModel m = fit_gaussian(f);
    REQUIRE(mean_difference(m, m.mean()) == 0.0);
  }

  SECTION("identity covariance reduces to the Euclidean distance") {
    const GaussianModel m =
        GaussianModel::from_moments(Vec::Zero(3), Mat::Identity(3, 3), 10);
    Vec e1(3);
    e1 << 1, 0, 0;
    REQUIRE(mean_difference(m, e1) == Approx(1.0));
  }

  SECTION("class matrix matches direct recomputation and is asymmetric") {
    Rng rng(55);
    std::vector<Mat> classes;
    for (int k = 0; k < 4; ++k) {
      Mat f = testsupport::random_matrix(40, 3, rng);
      f.array() *= (1.0 + 0.5 * k);     // different covariances per class
      f.array() += 2.0 * k;             // different means per class
      classes.push_back(f);
    }
    const Mat m = mean_difference_matrix(classes);
    REQUIRE(m.rows() == 4);
    for (int i = 0; i < 4; ++i) {
      const GaussianModel model = fit_gaussian(classes[static_cast<std::size_t>(i)]);
      for (int j = 0; j < 4; ++j) {
        const Vec other = classes[static_cast<std::size_t>(j)].colwise().mean();
        REQUIRE(m(i, j) == Approx(covariance_norm(model, other)).epsilon(1e-12));
      }
      REQUIRE(m(i, i) <= 1e-10);
    }
    REQUIRE(m(0, 3) != m(3, 0));  // rows use different reference covariances
  }
}

TEST_CASE("backdoor filter removes exactly the budget", "[detect]") {
  FeatureConfig pipeline;
  pipeline.kind = FeatureConfig::Kind::Flatten;
  Rng rng(65);

  // Clean reference cloud around (0.5, 0.5).
  Mat clean_means(20, 2);
  for (Eigen::Index r = 0; r < 20; ++r) {
    clean_means(r, 0) = 0.5 + 0.01 * rng.next_normal();
    clean_means(r, 1) = 0.5 + 0.01 * rng.next_normal();
  }
  TensorBatch clean = constant_batch(clean_means);

  SECTION("ties broken by ascending sample id") {
    Mat suspect_means = Mat::Constant(10, 2, 0.5);
    suspect_means.col(0) = clean_means.col(0).mean() * Vec::Ones(10);
    suspect_means.col(1) = clean_means.col(1).mean() * Vec::Ones(10);
    TensorBatch suspects = constant_batch(suspect_means);
    for (auto& id : suspects.sample_ids) id += 500;  // distinct from clean

    BackdoorConfig cfg;
    cfg.budget = 3;
    cfg.targeted_labels = {4};
    const auto result =
        backdoor_filter({{4, suspects}}, {{4, clean}}, cfg, pipeline);
    REQUIRE(result.manifest.size() == 3);
    REQUIRE(result.manifest[0].sample_id == 500);
    REQUIRE(result.manifest[1].sample_id == 501);
    REQUIRE(result.manifest[2].sample_id == 502);
    REQUIRE(result.filtered.at(4).count() == 7);
  }

  SECTION("largest scores go first and clean ids are never removed") {
    Mat suspect_means(12, 2);
    for (Eigen::Index r = 0; r < 12; ++r) {
      suspect_means(r, 0) = 0.5 + 0.02 * static_cast<double>(r);
      suspect_means(r, 1) = 0.5;
    }
    TensorBatch suspects = constant_batch(suspect_means);
    for (auto& id : suspects.sample_ids) id += 1000;  // distinct from clean

    BackdoorConfig cfg;
    cfg.budget = 4;
    cfg.targeted_labels = {0};
    const auto result =
        backdoor_filter({{0, suspects}}, {{0, clean}}, cfg, pipeline);
    REQUIRE(result.manifest.size() == 4);
    // Means drift upward with the index, so the last four go.
    std::set<std::int64_t> removed;
    for (const auto& r : result.manifest) removed.insert(r.sample_id);
    REQUIRE(removed == std::set<std::int64_t>{1008, 1009, 1010, 1011});
    for (const auto& rec : result.manifest)
      for (std::int64_t cid : clean.sample_ids) REQUIRE(rec.sample_id != cid);
    // Kept samples preserve their order.
    REQUIRE(result.filtered.at(0).sample_ids.front() == 1000);
    REQUIRE(result.filtered.at(0).sample_ids.back() == 1007);
  }

  SECTION("manifest covers budget times the number of classes") {
    Mat other = clean_means;
    other.array() += 0.005;
    TensorBatch suspects_a = constant_batch(clean_means);
    TensorBatch suspects_b = constant_batch(other);
    for (auto& id : suspects_a.sample_ids) id += 100;
    for (auto& id : suspects_b.sample_ids) id += 200;
    BackdoorConfig cfg;
    cfg.budget = 5;
    cfg.targeted_labels = {1, 2};
    const auto result = backdoor_filter({{1, suspects_a}, {2, suspects_b}},
                                        {{1, clean}, {2, clean}}, cfg, pipeline);
    REQUIRE(result.manifest.size() == 10);
  }

  SECTION("parameter and precondition errors") {
    TensorBatch suspects = constant_batch(Mat::Constant(3, 2, 0.5));
    BackdoorConfig cfg;
    cfg.budget = 5;  // larger than the class
    cfg.targeted_labels = {0};
    try {
      backdoor_filter({{0, suspects}}, {{0, clean}}, cfg, pipeline);
      FAIL("expected parameter error");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::Parameter);
    }

    cfg.budget = 1;
    try {
      backdoor_filter({{0, suspects}}, {{0, TensorBatch{}}}, cfg, pipeline);
      FAIL("expected insufficient data");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::InsufficientData);
    }

    BackdoorConfig odd = cfg;
    odd.tie_break = "coin_flip";
    REQUIRE_THROWS_AS(backdoor_filter({{0, suspects}}, {{0, clean}}, odd, pipeline),
                      Error);

    // Shared sample id between clean and suspects violates disjointness.
    TensorBatch overlapping = constant_batch(Mat::Constant(3, 2, 0.5));
    try {
      backdoor_filter({{0, overlapping}}, {{0, clean}}, cfg, pipeline);
      FAIL("expected validation error");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::Validation);
    }
  }
}

TEST_CASE("manifest CSV format", "[detect]") {
  testsupport::TempDir dir;
  std::vector<RemovalRecord> manifest = {{2, 7, 1.5}, {2, 3, 1.25}};
  const std::string path = dir.file("manifest.csv");
  write_manifest_csv(manifest, path);
  REQUIRE(slurp(path) ==
          "sample_id,class,score,decision\n7,2,1.5,removed\n3,2,1.25,removed\n");
}
