#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "sig2d/core.hpp"
#include "sig2d/metric.hpp"
#include "sig2d/rng.hpp"

namespace sig2d {

// Scores with aligned binary labels; 1 marks an anomaly (positive).
struct LabeledScores {
  std::vector<double> scores;
  std::vector<int> labels;
};

inline void validate_labeled(const LabeledScores& ls) {
  if (ls.scores.size() != ls.labels.size())
    fail(ErrorKind::Shape, "scores and labels differ in length");
  if (ls.scores.empty()) fail(ErrorKind::Parameter, "empty score list");
  for (double s : ls.scores)
    if (!std::isfinite(s))
      fail(ErrorKind::Validation, "non-finite score in labeled list");
  for (int l : ls.labels)
    if (l != 0 && l != 1)
      fail(ErrorKind::Validation, "labels must be 0 or 1");
}

// AUC as the normalized Mann-Whitney U statistic; ties count 1/2 via average
// ranks over tied groups.
inline double roc_auc(const LabeledScores& ls) {
  validate_labeled(ls);
  const std::size_t n = ls.scores.size();
  std::size_t npos = 0;
  for (int l : ls.labels) npos += static_cast<std::size_t>(l);
  const std::size_t nneg = n - npos;
  if (npos == 0 || nneg == 0)
    fail(ErrorKind::UndefinedMetric,
         "AUC needs at least one positive and one negative label");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ls.scores[a] < ls.scores[b];
  });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && ls.scores[order[j]] == ls.scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (ls.labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(npos) *
                                      static_cast<double>(npos + 1);
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

struct ConfusionMetrics {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double tpr = 0, tnr = 0, fpr = 0, fnr = 0;
  double precision = 0, f1 = 0, accuracy = 0;
};

// Predicted positive iff score strictly exceeds the cutoff; degenerate cells
// yield 0 for the affected rates.
inline ConfusionMetrics confusion_metrics(const LabeledScores& ls, double cutoff) {
  validate_labeled(ls);
  ConfusionMetrics m;
  for (std::size_t i = 0; i < ls.scores.size(); ++i) {
    const bool pred = ls.scores[i] > cutoff;
    const bool truth = ls.labels[i] == 1;
    if (pred && truth) ++m.tp;
    else if (pred && !truth) ++m.fp;
    else if (!pred && truth) ++m.fn;
    else ++m.tn;
  }
  const auto ratio = [](std::int64_t a, std::int64_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  m.tpr = ratio(m.tp, m.tp + m.fn);
  m.fnr = ratio(m.fn, m.tp + m.fn);
  m.tnr = ratio(m.tn, m.tn + m.fp);
  m.fpr = ratio(m.fp, m.tn + m.fp);
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.f1 = (m.precision + m.tpr) == 0.0
             ? 0.0
             : 2.0 * m.precision * m.tpr / (m.precision + m.tpr);
  m.accuracy = ratio(m.tp + m.tn, m.tp + m.tn + m.fp + m.fn);
  return m;
}

struct RocPoint {
  double fpr = 0, tpr = 0, cutoff = 0;
};

// Full ROC sweep over the distinct score cutoffs, ascending cutoff.
inline std::vector<RocPoint> roc_points(const LabeledScores& ls) {
  validate_labeled(ls);
  std::vector<double> cuts = ls.scores;
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<RocPoint> pts;
  pts.reserve(cuts.size() + 1);
  const double below_min = cuts.front() - 1.0;
  for (std::size_t i = 0; i <= cuts.size(); ++i) {
    const double cut = i == 0 ? below_min : cuts[i - 1];
    const ConfusionMetrics m = confusion_metrics(ls, cut);
    pts.push_back({m.fpr, m.tpr, cut});
  }
  return pts;
}

inline void write_roc_csv(const std::vector<RocPoint>& pts,
                          const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open file for writing: " + path);
  out << "fpr,tpr,cutoff\n";
  for (const RocPoint& p : pts)
    out << fmt_double(p.fpr) << ',' << fmt_double(p.tpr) << ','
        << fmt_double(p.cutoff) << '\n';
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

struct TimingRow {
  std::size_t corpus_size = 0;
  double median_per_query_seconds = 0.0;
};

namespace timing_detail {

inline double median5(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

template <typename Fn>
double per_query_seconds(Fn&& run_block, std::size_t queries_per_block) {
  using clock = std::chrono::steady_clock;
  run_block();  // warm-up, discarded
  std::vector<double> reps;
  reps.reserve(5);
  for (int rep = 0; rep < 5; ++rep) {
    const auto t0 = clock::now();
    run_block();
    const auto t1 = clock::now();
    reps.push_back(std::chrono::duration<double>(t1 - t0).count() /
                   static_cast<double>(queries_per_block));
  }
  return median5(std::move(reps));
}

}  // namespace timing_detail

// Median-of-5 per-query wall times (one warm-up discarded) for the two
// scoring frameworks, single-threaded. Tasks: "covnorm" times scoring only,
// after the corpus fit; "confscore" times the whole per-query call.
inline std::vector<TimingRow> timing_harness(const std::string& task,
                                             const std::vector<std::size_t>& sizes,
                                             int dim = 16,
                                             std::uint64_t seed = 20240831) {
  if (task != "covnorm" && task != "confscore")
    fail(ErrorKind::Parameter, "unknown timing task: " + task);
  if (dim < 1) fail(ErrorKind::Parameter, "timing dim must be >= 1");

  std::vector<TimingRow> rows;
  volatile double sink = 0.0;  // keeps the measured loops alive
  for (std::size_t n : sizes) {
    if (n < 4) fail(ErrorKind::Parameter, "timing corpus size must be >= 4");
    Rng rng(mix_seed(seed, n));
    Mat corpus(static_cast<Eigen::Index>(n), dim);
    for (Eigen::Index r = 0; r < corpus.rows(); ++r)
      for (Eigen::Index c = 0; c < dim; ++c) corpus(r, c) = rng.next_normal();
    Vec query(dim);
    for (int c = 0; c < dim; ++c) query[c] = rng.next_normal();

    TimingRow row;
    row.corpus_size = n;
    if (task == "covnorm") {
      const GaussianModel model = fit_gaussian(corpus);
      const std::size_t block = 16384;
      row.median_per_query_seconds = timing_detail::per_query_seconds(
          [&] {
            double acc = 0.0;
            for (std::size_t q = 0; q < block; ++q)
              acc += covariance_norm(model, query);
            sink = acc;
          },
          block);
    } else {
      const std::size_t block = std::max<std::size_t>(2, 8192 / n);
      row.median_per_query_seconds = timing_detail::per_query_seconds(
          [&] {
            double acc = 0.0;
            for (std::size_t q = 0; q < block; ++q)
              acc += conformance_score(corpus, query);
            sink = acc;
          },
          block);
    }
    rows.push_back(row);
  }
  (void)sink;
  return rows;
}

inline void write_timing_csv(const std::vector<TimingRow>& rows,
                             const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open file for writing: " + path);
  out << "size,median_seconds\n";
  for (const TimingRow& r : rows)
    out << r.corpus_size << ',' << fmt_double(r.median_per_query_seconds) << '\n';
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

}  // namespace sig2d
