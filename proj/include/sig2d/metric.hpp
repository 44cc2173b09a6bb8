#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "sig2d/core.hpp"

namespace sig2d {

// Empirical Gaussian model of a benign feature corpus: mean, unbiased
// covariance and an SPD factorization of A + ridge*I used for all solves.
// The covariance inverse is never formed explicitly.
class GaussianModel {
 public:
  static GaussianModel from_moments(const Vec& mean, const Mat& covariance,
                                    std::int64_t sample_count) {
    if (covariance.rows() != covariance.cols() ||
        covariance.rows() != mean.size())
      fail(ErrorKind::Shape, "mean/covariance dimensions disagree");
    GaussianModel m;
    m.mean_ = mean;
    m.cov_ = 0.5 * (covariance + covariance.transpose());
    m.sample_count_ = sample_count;
    m.factorize();
    return m;
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vec& mean() const { return mean_; }
  const Mat& covariance() const { return cov_; }
  double ridge() const { return ridge_; }
  std::int64_t sample_count() const { return sample_count_; }

  // Solves (A + ridge*I) y = v through the triangular factor.
  Vec solve(const Vec& v) const { return llt_.solve(v); }

  // Squared covariance norm of (x - mean): |L^{-1}(x - mean)|^2.
  double squared_norm_to_mean(const Vec& x) const {
    Vec z = llt_.matrixL().solve(x - mean_);
    return z.squaredNorm();
  }

  // Squared covariance norm of an arbitrary displacement vector.
  double squared_norm(const Vec& displacement) const {
    Vec z = llt_.matrixL().solve(displacement);
    return z.squaredNorm();
  }

  void save(const std::string& path) const {
    nlohmann::json header;
    header["format"] = "sig2d.model";
    header["version"] = 1;
    header["dim"] = dim();
    header["ridge"] = ridge_;
    header["sample_count"] = sample_count_;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open file for writing: " + path);
    out << header.dump() << '\n';
    out.write(reinterpret_cast<const char*>(mean_.data()),
              static_cast<std::streamsize>(sizeof(double) * mean_.size()));
    std::vector<double> rowmajor(static_cast<std::size_t>(dim()) * dim());
    for (int r = 0; r < dim(); ++r)
      for (int c = 0; c < dim(); ++c)
        rowmajor[static_cast<std::size_t>(r) * dim() + c] = cov_(r, c);
    out.write(reinterpret_cast<const char*>(rowmajor.data()),
              static_cast<std::streamsize>(sizeof(double) * rowmajor.size()));
    if (!out) fail(ErrorKind::Io, "write failed: " + path);
  }

  static GaussianModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open file: " + path);
    std::string line;
    if (!std::getline(in, line))
      fail(ErrorKind::Format, path + ": missing model header");
    nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "sig2d.model")
      fail(ErrorKind::Format, path + ": not a sig2d model file");
    const int d = header.at("dim").get<int>();
    if (d < 1) fail(ErrorKind::Format, path + ": bad header field 'dim'");

    GaussianModel m;
    m.mean_.resize(d);
    in.read(reinterpret_cast<char*>(m.mean_.data()),
            static_cast<std::streamsize>(sizeof(double) * d));
    std::vector<double> rowmajor(static_cast<std::size_t>(d) * d);
    in.read(reinterpret_cast<char*>(rowmajor.data()),
            static_cast<std::streamsize>(sizeof(double) * rowmajor.size()));
    if (!in) fail(ErrorKind::Format, path + ": truncated model payload");
    m.cov_.resize(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c)
        m.cov_(r, c) = rowmajor[static_cast<std::size_t>(r) * d + c];
    m.sample_count_ = header.at("sample_count").get<std::int64_t>();
    m.ridge_ = header.at("ridge").get<double>();
    m.factorize(/*reuse_ridge=*/true);
    return m;
  }

 private:
  friend GaussianModel fit_gaussian(const Mat&);

  void factorize(bool reuse_ridge = false) {
    const int d = dim();
    if (!reuse_ridge) {
      const double scale = cov_.trace() / d;
      Eigen::SelfAdjointEigenSolver<Mat> eig(cov_, Eigen::EigenvaluesOnly);
      const double min_eig = eig.eigenvalues().minCoeff();
      // <= so a zero-trace covariance still triggers; the unit fallback keeps
      // the ridge positive when the corpus is entirely constant.
      ridge_ = 0.0;
      if (min_eig <= 1e-10 * scale)
        ridge_ = 1e-6 * (scale > 0.0 ? scale : 1.0);
    }
    Mat shifted = cov_;
    shifted.diagonal().array() += ridge_;
    llt_.compute(shifted);
    if (llt_.info() != Eigen::Success)
      fail(ErrorKind::Internal, "covariance factorization failed");
  }

  Vec mean_;
  Mat cov_;
  double ridge_ = 0.0;
  std::int64_t sample_count_ = 0;
  Eigen::LLT<Mat> llt_;
};

// Unbiased empirical estimators: mean = sum(y)/n, A = Ybar^T Ybar / (n-1).
inline GaussianModel fit_gaussian(const Mat& features) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (n < 2)
    fail(ErrorKind::InsufficientData,
         "fit_gaussian needs at least 2 samples, got " + std::to_string(n));
  if (d < 1) fail(ErrorKind::Shape, "fit_gaussian needs at least 1 feature");
  if (!features.allFinite())
    fail(ErrorKind::Validation, "fit_gaussian input contains non-finite values");

  GaussianModel m;
  m.mean_ = features.colwise().mean();
  Mat centered = features.rowwise() - m.mean_.transpose();
  m.cov_ = (centered.transpose() * centered) / static_cast<double>(n - 1);
  m.cov_ = 0.5 * (m.cov_ + m.cov_.transpose()).eval();
  m.sample_count_ = n;
  m.factorize();
  return m;
}

inline double covariance_norm(const GaussianModel& model, const Vec& x) {
  if (x.size() != model.mean().size())
    fail(ErrorKind::Shape, "covariance_norm: query has dimension " +
                               std::to_string(x.size()) + ", model expects " +
                               std::to_string(model.mean().size()));
  return std::sqrt(model.squared_norm_to_mean(x));
}

struct ScoreList {
  std::vector<double> scores;
  std::vector<std::int64_t> sample_ids;
};

inline ScoreList covariance_norm_batch(const GaussianModel& model, const Mat& X) {
  if (X.cols() != model.mean().size())
    fail(ErrorKind::Shape, "covariance_norm_batch: column count mismatch");
  ScoreList out;
  out.scores.reserve(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    out.scores.push_back(covariance_norm(model, X.row(r).transpose()));
    out.sample_ids.push_back(r);
  }
  return out;
}

// Conformance scoring with the corpus fit done once; reusing the scorer is
// bit-identical to refitting per query because the fit is a pure function of
// the corpus.
class ConformanceScorer {
 public:
  explicit ConformanceScorer(const Mat& corpus)
      : corpus_(corpus), model_(fit_gaussian(corpus)) {}

  const GaussianModel& model() const { return model_; }

  // min over corpus rows y of sqrt((y-x)^T (A+ridge I)^{-1} (y-x)).
  double score(const Vec& x) const {
    if (x.size() != corpus_.cols())
      fail(ErrorKind::Shape, "conformance_score: query dimension mismatch");
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < corpus_.rows(); ++r) {
      const double sq = model_.squared_norm(corpus_.row(r).transpose() - x);
      if (sq < best) best = sq;
    }
    return std::sqrt(best);
  }

 private:
  Mat corpus_;
  GaussianModel model_;
};

inline double conformance_score(const Mat& corpus, const Vec& x) {
  return ConformanceScorer(corpus).score(x);
}

}  // namespace sig2d
