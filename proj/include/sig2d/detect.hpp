#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "sig2d/core.hpp"
#include "sig2d/metric.hpp"
#include "sig2d/rng.hpp"
#include "sig2d/signature.hpp"
#include "sig2d/tensor.hpp"

namespace sig2d {

enum class Metric { CovNorm, ConfScore };
enum class DecisionRule { SingleClass, AllClasses };

inline const char* to_string(Metric m) {
  return m == Metric::CovNorm ? "covnorm" : "confscore";
}
inline const char* to_string(DecisionRule r) {
  return r == DecisionRule::SingleClass ? "single" : "all";
}

// Feature map applied to test/corpus tensors: a 2D-signature configuration,
// or the channel-mean flatten used by the naive baseline.
struct FeatureConfig {
  enum class Kind { Signature, Flatten };
  Kind kind = Kind::Signature;
  SigConfig sig;

  std::size_t length(int channels) const {
    return kind == Kind::Signature ? feature_length(sig, channels)
                                   : static_cast<std::size_t>(channels);
  }
  Vec apply(const ImageTensor& t) const {
    if (kind == Kind::Flatten) return channel_mean_flatten(t);
    return compute_signature(t, sig).values;
  }
  Mat apply_batch(const TensorBatch& batch, int threads = 1) const {
    if (batch.count() == 0)
      fail(ErrorKind::Parameter, "cannot featurize an empty batch");
    validate_batch_shape(batch, "apply_batch");
    validate_tensor_shape(batch.height(), batch.width(), batch.channels(),
                          "apply_batch");
    if (kind == Kind::Signature) validate_config(sig);
    Mat out(static_cast<Eigen::Index>(batch.count()),
            static_cast<Eigen::Index>(length(batch.channels())));
    parallel_for(batch.count(), threads, [&](std::size_t i) {
      out.row(static_cast<Eigen::Index>(i)) =
          apply(batch.tensors[i]).transpose();
    });
    return out;
  }
};

// Percentile of an ascending-sorted list, linear interpolation between
// closest ranks: position 1 + (r/100)(n-1), 1-based.
inline double percentile_interpolated(std::vector<double> scores, double r) {
  if (scores.empty()) fail(ErrorKind::Parameter, "percentile of an empty list");
  if (!(r > 0.0 && r < 100.0))
    fail(ErrorKind::Parameter,
         "percentile must lie in (0, 100), got " + fmt_double(r));
  std::sort(scores.begin(), scores.end());
  const std::size_t n = scores.size();
  if (n == 1) return scores[0];
  const double pos = 1.0 + (r / 100.0) * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);  // 1-based floor
  const double frac = pos - static_cast<double>(lo);
  if (lo >= n) return scores[n - 1];
  return scores[lo - 1] + frac * (scores[lo] - scores[lo - 1]);
}

// Calibrated decision threshold plus the retained reference half-corpus.
struct Threshold {
  double percentile = 0.0;
  double cutoff = 0.0;
  Metric metric = Metric::CovNorm;
  std::uint64_t split_seed = 0;
  int label = 0;
  std::shared_ptr<const Mat> reference;             // C_t features
  std::shared_ptr<const GaussianModel> model;       // fit of C_t
  std::shared_ptr<const ConformanceScorer> scorer;  // only for ConfScore
};

inline double score_against_reference(const Threshold& th, const Vec& x) {
  if (th.metric == Metric::CovNorm) return covariance_norm(*th.model, x);
  return th.scorer->score(x);
}

// Splits the corpus in half (seeded; the odd element goes to the reference
// side), scores the held-out half against the reference, and takes the r-th
// percentile of the ascending score list as the cutoff.
inline Threshold calibrate_threshold(const Mat& corpus_features, double r,
                                     Metric metric, std::uint64_t seed,
                                     int label = 0) {
  if (corpus_features.rows() < 4)
    fail(ErrorKind::InsufficientData,
         "threshold calibration needs at least 4 corpus rows, got " +
             std::to_string(corpus_features.rows()));
  if (!(r > 0.0 && r < 100.0))
    fail(ErrorKind::Parameter,
         "percentile must lie in (0, 100), got " + fmt_double(r));

  const std::size_t n = static_cast<std::size_t>(corpus_features.rows());
  Rng rng(seed);
  const std::vector<std::size_t> perm = rng.permutation(n);
  const std::size_t n_ref = (n + 1) / 2;

  auto reference = std::make_shared<Mat>(static_cast<Eigen::Index>(n_ref),
                                         corpus_features.cols());
  for (std::size_t i = 0; i < n_ref; ++i)
    reference->row(static_cast<Eigen::Index>(i)) =
        corpus_features.row(static_cast<Eigen::Index>(perm[i]));

  Threshold th;
  th.percentile = r;
  th.metric = metric;
  th.split_seed = seed;
  th.label = label;
  th.reference = reference;
  if (metric == Metric::ConfScore) {
    th.scorer = std::make_shared<ConformanceScorer>(*reference);
    th.model = std::shared_ptr<const GaussianModel>(th.scorer,
                                                    &th.scorer->model());
  } else {
    th.model = std::make_shared<GaussianModel>(fit_gaussian(*reference));
  }

  std::vector<double> validation_scores;
  validation_scores.reserve(n - n_ref);
  for (std::size_t i = n_ref; i < n; ++i)
    validation_scores.push_back(score_against_reference(
        th, corpus_features.row(static_cast<Eigen::Index>(perm[i])).transpose()));
  th.cutoff = percentile_interpolated(std::move(validation_scores), r);
  return th;
}

struct DetectionRow {
  std::int64_t sample_id = 0;
  std::vector<double> scores;          // one per threshold, same order
  std::vector<bool> exceeds;           // score > cutoff per threshold
  bool anomalous = false;              // decision under the rule
};

struct DetectionReport {
  DecisionRule rule = DecisionRule::SingleClass;
  std::vector<int> labels;  // class label per threshold column
  std::vector<Threshold> thresholds_used;
  std::vector<DetectionRow> per_sample;
};

// Scores every test tensor against every class reference and applies the
// decision rule: SingleClass flags per class; AllClasses flags a sample only
// when it exceeds the cutoff for every class.
inline DetectionReport detect(const TensorBatch& test,
                              const std::vector<Threshold>& thresholds,
                              const FeatureConfig& pipeline, DecisionRule rule,
                              int threads = 1) {
  if (thresholds.empty())
    fail(ErrorKind::Parameter, "detect needs at least one threshold");
  const Eigen::Index want = thresholds[0].reference->cols();
  for (const Threshold& th : thresholds) {
    if (th.metric != thresholds[0].metric)
      fail(ErrorKind::Config, "detect thresholds must share one metric");
    if (th.reference->cols() != want)
      fail(ErrorKind::Config, "detect thresholds must share one feature layout");
  }
  if (static_cast<Eigen::Index>(pipeline.length(test.channels())) != want)
    fail(ErrorKind::Config,
         "pipeline produces " +
             std::to_string(pipeline.length(test.channels())) +
             " features but threshold references have " + std::to_string(want));

  const Mat features = pipeline.apply_batch(test, threads);

  DetectionReport report;
  report.rule = rule;
  report.thresholds_used = thresholds;
  for (const Threshold& th : thresholds) report.labels.push_back(th.label);
  report.per_sample.resize(test.count());
  parallel_for(test.count(), threads, [&](std::size_t i) {
    DetectionRow row;
    row.sample_id = test.sample_ids[i];
    row.scores.reserve(thresholds.size());
    bool all_exceed = true;
    bool any_exceed = false;
    for (const Threshold& th : thresholds) {
      const double s = score_against_reference(
          th, features.row(static_cast<Eigen::Index>(i)).transpose());
      const bool exceeds = s > th.cutoff;
      row.scores.push_back(s);
      row.exceeds.push_back(exceeds);
      all_exceed = all_exceed && exceeds;
      any_exceed = any_exceed || exceeds;
    }
    row.anomalous = rule == DecisionRule::AllClasses ? all_exceed : any_exceed;
    report.per_sample[i] = std::move(row);
  });
  return report;
}

// One CSV row per (sample, class). Under SingleClass the decision column is
// the per-class comparison; under AllClasses it is the sample's joint
// decision, repeated on each of its rows.
inline void write_report_csv(const DetectionReport& report,
                             const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open file for writing: " + path);
  out << "sample_id,class,score,decision\n";
  for (const DetectionRow& row : report.per_sample) {
    for (std::size_t k = 0; k < report.labels.size(); ++k) {
      const bool decision = report.rule == DecisionRule::AllClasses
                                ? row.anomalous
                                : static_cast<bool>(row.exceeds[k]);
      out << row.sample_id << ',' << report.labels[k] << ','
          << fmt_double(row.scores[k]) << ','
          << (decision ? "anomalous" : "benign") << '\n';
    }
  }
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

// Mean difference under the covariance norm of the reference class.
inline double mean_difference(const GaussianModel& model_c,
                              const Vec& other_mean) {
  return covariance_norm(model_c, other_mean);
}

// Heatmap matrix: entry (i, j) is the mean of class j measured in the
// covariance norm of class i.
inline Mat mean_difference_matrix(const std::vector<Mat>& class_features) {
  const std::size_t k = class_features.size();
  if (k == 0) fail(ErrorKind::Parameter, "mean_difference_matrix needs classes");
  std::vector<GaussianModel> models;
  std::vector<Vec> means;
  models.reserve(k);
  means.reserve(k);
  for (const Mat& f : class_features) {
    models.push_back(fit_gaussian(f));
    means.push_back(f.colwise().mean());
  }
  Mat out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          mean_difference(models[i], means[j]);
  return out;
}

struct BackdoorConfig {
  std::int64_t budget = 0;            // N_b, removed per targeted class
  std::vector<int> targeted_labels;   // J
  double clean_fraction = 0.0;        // beta, informational
  // The one supported deterministic tie-break for equal scores.
  std::string tie_break = "ascending_sample_id";
};

struct RemovalRecord {
  int label = 0;
  std::int64_t sample_id = 0;
  double score = 0.0;
};

struct BackdoorFilterResult {
  std::map<int, TensorBatch> filtered;
  std::vector<RemovalRecord> manifest;  // per class, rank order
  std::map<int, double> ridge_by_label;
};

// Per targeted class: fit the clean-subset model, score every suspect sample
// with the covariance norm, and remove exactly budget samples with the
// largest scores (ties broken by ascending sample_id).
inline BackdoorFilterResult backdoor_filter(
    const std::map<int, TensorBatch>& dataset,
    const std::map<int, TensorBatch>& clean, const BackdoorConfig& cfg,
    const FeatureConfig& pipeline, int threads = 1) {
  if (cfg.budget <= 0)
    fail(ErrorKind::Parameter, "backdoor filter budget must be positive");
  if (cfg.tie_break != "ascending_sample_id")
    fail(ErrorKind::Parameter, "unknown tie-break rule: " + cfg.tie_break);
  std::vector<int> labels = cfg.targeted_labels;
  std::sort(labels.begin(), labels.end());

  BackdoorFilterResult result;
  for (int label : labels) {
    const auto dit = dataset.find(label);
    if (dit == dataset.end())
      fail(ErrorKind::Parameter,
           "no dataset for targeted label " + std::to_string(label));
    const auto cit = clean.find(label);
    if (cit == clean.end() || cit->second.count() == 0)
      fail(ErrorKind::InsufficientData,
           "empty clean set for targeted label " + std::to_string(label));
    const TensorBatch& suspects = dit->second;
    const TensorBatch& known_clean = cit->second;
    if (cfg.budget > static_cast<std::int64_t>(suspects.count()))
      fail(ErrorKind::Parameter,
           "budget " + std::to_string(cfg.budget) + " exceeds class " +
               std::to_string(label) + " size " +
               std::to_string(suspects.count()));
    for (std::int64_t id : known_clean.sample_ids)
      if (std::find(suspects.sample_ids.begin(), suspects.sample_ids.end(),
                    id) != suspects.sample_ids.end())
        fail(ErrorKind::Validation,
             "clean and suspect sets for label " + std::to_string(label) +
                 " share sample_id " + std::to_string(id));

    const GaussianModel model =
        fit_gaussian(pipeline.apply_batch(known_clean, threads));
    result.ridge_by_label[label] = model.ridge();
    const Mat features = pipeline.apply_batch(suspects, threads);
    const ScoreList scores = covariance_norm_batch(model, features);

    std::vector<std::size_t> order(suspects.count());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores.scores[a] != scores.scores[b])
        return scores.scores[a] > scores.scores[b];
      return suspects.sample_ids[a] < suspects.sample_ids[b];
    });

    std::vector<bool> removed(suspects.count(), false);
    for (std::int64_t k = 0; k < cfg.budget; ++k) {
      const std::size_t idx = order[static_cast<std::size_t>(k)];
      removed[idx] = true;
      result.manifest.push_back(
          {label, suspects.sample_ids[idx], scores.scores[idx]});
    }

    TensorBatch kept;
    for (std::size_t i = 0; i < suspects.count(); ++i) {
      if (removed[i]) continue;
      kept.tensors.push_back(suspects.tensors[i]);
      kept.sample_ids.push_back(suspects.sample_ids[i]);
      if (!suspects.labels.empty()) kept.labels.push_back(suspects.labels[i]);
    }
    result.filtered.emplace(label, std::move(kept));
  }
  return result;
}

inline void write_manifest_csv(const std::vector<RemovalRecord>& manifest,
                               const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open file for writing: " + path);
  out << "sample_id,class,score,decision\n";
  for (const RemovalRecord& r : manifest)
    out << r.sample_id << ',' << r.label << ',' << fmt_double(r.score)
        << ",removed\n";
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

}  // namespace sig2d
