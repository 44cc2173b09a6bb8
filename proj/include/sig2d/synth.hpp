#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "sig2d/core.hpp"
#include "sig2d/rng.hpp"
#include "sig2d/tensor.hpp"

namespace sig2d {

enum class DistKind { Gaussian, UniformBox, SmoothField2D };

// Ground-truth distribution description. Vector kinds use (dim, mean,
// covariance); SmoothField2D generates image tensors from smoothed white
// noise with the given correlation length, clipped to [0,1].
struct SyntheticSpec {
  DistKind kind = DistKind::Gaussian;
  int dim = 0;
  Vec mean;
  Mat covariance;
  std::uint64_t seed = 0;
  // SmoothField2D only:
  int height = 0;
  int width = 0;
  int channels = 0;
  double correlation_length = 0.0;

  static SyntheticSpec gaussian(const Vec& mean, const Mat& covariance,
                                std::uint64_t seed) {
    SyntheticSpec s;
    s.kind = DistKind::Gaussian;
    s.dim = static_cast<int>(mean.size());
    s.mean = mean;
    s.covariance = covariance;
    s.seed = seed;
    return s;
  }
  static SyntheticSpec uniform_box(const Vec& mean, const Mat& covariance,
                                   std::uint64_t seed) {
    SyntheticSpec s = gaussian(mean, covariance, seed);
    s.kind = DistKind::UniformBox;
    return s;
  }
  static SyntheticSpec smooth_field(int height, int width, int channels,
                                    double correlation_length,
                                    std::uint64_t seed) {
    SyntheticSpec s;
    s.kind = DistKind::SmoothField2D;
    s.height = height;
    s.width = width;
    s.channels = channels;
    s.correlation_length = correlation_length;
    s.seed = seed;
    return s;
  }
};

namespace synth_detail {

// Lower-triangular B with B B^T = A for positive semidefinite A; a zero
// pivot zeroes its column instead of failing.
inline Mat psd_cholesky(const Mat& a) {
  const Eigen::Index d = a.rows();
  if (a.cols() != d) fail(ErrorKind::Parameter, "covariance must be square");
  if ((a - a.transpose()).cwiseAbs().maxCoeff() >
      1e-10 * std::max(1.0, a.cwiseAbs().maxCoeff()))
    fail(ErrorKind::Parameter, "covariance must be symmetric");
  double scale = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) scale = std::max(scale, std::abs(a(i, i)));
  const double tol = 1e-12 * std::max(1.0, scale);

  Mat L = Mat::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    double diag = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) diag -= L(j, k) * L(j, k);
    if (diag < -tol)
      fail(ErrorKind::Parameter,
           "covariance is not positive semidefinite (pivot " +
               fmt_double(diag) + " at " + std::to_string(j) + ")");
    if (diag <= tol) continue;  // rank-deficient direction, column stays zero
    L(j, j) = std::sqrt(diag);
    for (Eigen::Index i = j + 1; i < d; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      L(i, j) = s / L(j, j);
    }
  }
  return L;
}

inline void check_vector_kind(const SyntheticSpec& spec) {
  if (spec.kind == DistKind::SmoothField2D)
    fail(ErrorKind::Parameter,
         "expected a vector distribution, got SmoothField2D");
  if (spec.dim < 1 || spec.mean.size() != spec.dim ||
      spec.covariance.rows() != spec.dim || spec.covariance.cols() != spec.dim)
    fail(ErrorKind::Parameter, "synthetic spec dimensions disagree");
}

inline Vec draw_vector(const SyntheticSpec& spec, const Mat& transform, Rng& rng) {
  Vec x(spec.dim);
  if (spec.kind == DistKind::Gaussian) {
    Vec z(spec.dim);
    for (int i = 0; i < spec.dim; ++i) z[i] = rng.next_normal();
    x = spec.mean + transform * z;
  } else {
    for (int i = 0; i < spec.dim; ++i) {
      const double half_width = std::sqrt(3.0 * spec.covariance(i, i));
      x[i] = spec.mean[i] + half_width * (2.0 * rng.next_unit() - 1.0);
    }
  }
  return x;
}

inline Mat vector_transform(const SyntheticSpec& spec) {
  check_vector_kind(spec);
  if (spec.kind == DistKind::UniformBox) {
    for (Eigen::Index r = 0; r < spec.covariance.rows(); ++r)
      for (Eigen::Index c = 0; c < spec.covariance.cols(); ++c)
        if (r != c && spec.covariance(r, c) != 0.0)
          fail(ErrorKind::Parameter,
               "UniformBox requires a diagonal covariance");
    return Mat();
  }
  return psd_cholesky(spec.covariance);
}

// Separable Gaussian blur, reflect padding, kernel renormalized so white
// noise keeps unit variance in the interior.
inline void smooth_inplace(std::vector<double>& field, int rows, int cols,
                           double corr_len) {
  if (corr_len <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * corr_len)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] =
        std::exp(-0.5 * (k * k) / (corr_len * corr_len));
    sum += kernel[static_cast<std::size_t>(k + radius)];
  }
  double sq = 0.0;
  for (double& w : kernel) {
    w /= sum;
    sq += w * w;
  }
  const double gain = 1.0 / std::sqrt(sq);

  const auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - i - 1;
    }
    return i;
  };

  std::vector<double> tmp(field.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               field[static_cast<std::size_t>(r) * cols + reflect(c + k, cols)];
      tmp[static_cast<std::size_t>(r) * cols + c] = acc;
    }
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               tmp[static_cast<std::size_t>(reflect(r + k, rows)) * cols + c];
      field[static_cast<std::size_t>(r) * cols + c] = acc * gain;
    }
}

}  // namespace synth_detail

// n i.i.d. draws from a vector distribution, one row per sample.
inline Mat sample_features(const SyntheticSpec& spec, std::size_t n) {
  if (n < 1) fail(ErrorKind::Parameter, "sample count must be >= 1");
  const Mat transform = synth_detail::vector_transform(spec);
  Rng rng(spec.seed);
  Mat out(static_cast<Eigen::Index>(n), spec.dim);
  for (std::size_t r = 0; r < n; ++r)
    out.row(static_cast<Eigen::Index>(r)) =
        synth_detail::draw_vector(spec, transform, rng).transpose();
  return out;
}

inline constexpr double kFieldBase = 0.5;
inline constexpr double kFieldAmplitude = 0.25;

// n random image tensors: per channel, unit-variance (possibly smoothed)
// noise mapped to base + amplitude * g and clipped to [0,1].
inline TensorBatch sample_tensors(const SyntheticSpec& spec, std::size_t n) {
  if (spec.kind != DistKind::SmoothField2D)
    fail(ErrorKind::Parameter, "sample_tensors needs a SmoothField2D spec");
  if (n < 1) fail(ErrorKind::Parameter, "sample count must be >= 1");
  validate_tensor_shape(spec.height, spec.width, spec.channels, "sample_tensors");

  TensorBatch batch;
  for (std::size_t s = 0; s < n; ++s) {
    Rng rng(mix_seed(spec.seed, s));
    ImageTensor t = ImageTensor::zeros(spec.height, spec.width, spec.channels);
    std::vector<double> field(
        static_cast<std::size_t>(spec.height) * spec.width);
    for (int ch = 0; ch < spec.channels; ++ch) {
      for (double& v : field) v = rng.next_normal();
      synth_detail::smooth_inplace(field, spec.height, spec.width,
                                   spec.correlation_length);
      for (int r = 0; r < spec.height; ++r)
        for (int c = 0; c < spec.width; ++c) {
          const double v =
              kFieldBase +
              kFieldAmplitude * field[static_cast<std::size_t>(r) * spec.width + c];
          t.at(r, c, ch) = std::min(1.0, std::max(0.0, v));
        }
    }
    batch.tensors.push_back(std::move(t));
    batch.sample_ids.push_back(static_cast<std::int64_t>(s));
  }
  return batch;
}

// Monte-Carlo check of a closed-form error bound. Bounds are evaluated from
// the ground-truth parameters; only the empirical rates involve sampling.
struct BoundReport {
  std::string metric;        // "covnorm" or "confscore"
  int dim = 0;
  double delta = 0.0;
  std::size_t trials = 0;
  std::size_t corpus_n = 0;  // confscore only
  double empirical_type1 = 0.0;
  double bound_type1 = 0.0;
  double se_type1 = 0.0;
  double empirical_type2 = 0.0;
  double bound_type2 = 0.0;
  double se_type2 = 0.0;
  double mean_diff = 0.0;      // |A^{-1/2}(mu_u - mu)|
  double operator_norm = 0.0;  // ||A^{-1/2} A_u^{1/2}||
  bool violated = false;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const BoundReport& r) {
  nlohmann::json j;
  j["metric"] = r.metric;
  j["dim"] = r.dim;
  j["delta"] = r.delta;
  j["trials"] = r.trials;
  if (r.metric == "confscore") j["corpus_n"] = r.corpus_n;
  j["empirical_type1"] = r.empirical_type1;
  j["bound_type1"] = r.bound_type1;
  j["se_type1"] = r.se_type1;
  j["empirical_type2"] = r.empirical_type2;
  j["bound_type2"] = r.bound_type2;
  j["se_type2"] = r.se_type2;
  j["mean_diff"] = r.mean_diff;
  j["operator_norm"] = r.operator_norm;
  j["violated"] = r.violated;
  j["seed"] = r.seed;
  return j;
}

namespace synth_detail {

struct GroundTruth {
  Mat chol_c;          // L with L L^T = A_c (invertible required)
  Vec mu_c;
  double mean_diff;      // |A^{-1/2}(mu_u - mu)|
  double operator_norm;  // ||A^{-1/2} A_u^{1/2}||

  // |A_c^{-1/2} v| via the triangular factor.
  double whitened_norm(const Vec& v) const {
    return chol_c.triangularView<Eigen::Lower>().solve(v).norm();
  }
};

inline GroundTruth ground_truth(const SyntheticSpec& spec_c,
                                const SyntheticSpec& spec_u) {
  check_vector_kind(spec_c);
  check_vector_kind(spec_u);
  if (spec_c.dim != spec_u.dim)
    fail(ErrorKind::Parameter, "reference and unknown dimensions differ");
  Eigen::LLT<Mat> llt(spec_c.covariance);
  if (llt.info() != Eigen::Success)
    fail(ErrorKind::Parameter, "reference covariance must be invertible");
  GroundTruth gt;
  gt.chol_c = llt.matrixL();
  gt.mu_c = spec_c.mean;
  gt.mean_diff = gt.whitened_norm(spec_u.mean - spec_c.mean);
  // ||A^{-1/2} A_u^{1/2}||^2 = lambda_max(L^{-1} A_u L^{-T}).
  Mat half = gt.chol_c.triangularView<Eigen::Lower>().solve(spec_u.covariance);
  Mat whitened =
      gt.chol_c.triangularView<Eigen::Lower>().solve(half.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Mat> eig(
      0.5 * (whitened + whitened.transpose()), Eigen::EigenvaluesOnly);
  gt.operator_norm = std::sqrt(std::max(0.0, eig.eigenvalues().maxCoeff()));
  return gt;
}

inline double binomial_se(double rate, std::size_t trials) {
  return std::sqrt(std::max(0.0, rate * (1.0 - rate)) /
                   static_cast<double>(trials));
}

}  // namespace synth_detail

// The special delta that balances the two covariance-norm bounds:
// |A^{-1/2}(mu_u - mu)| / (1 + ||A^{-1/2} A_u^{1/2}||).
inline double covnorm_special_delta(const SyntheticSpec& spec_c,
                                    const SyntheticSpec& spec_u) {
  const auto gt = synth_detail::ground_truth(spec_c, spec_u);
  return gt.mean_diff / (1.0 + gt.operator_norm);
}

// Type-I bound d/delta^2; Type-II bound d*||A^{-1/2}A_u^{1/2}||^2 /
// (mean_diff - delta)^2. Admissible delta: sqrt(d) < delta < mean_diff.
inline BoundReport validate_covnorm_bounds(const SyntheticSpec& spec_c,
                                           const SyntheticSpec& spec_u,
                                           double delta, std::size_t trials) {
  if (trials < 1) fail(ErrorKind::Parameter, "trials must be >= 1");
  const auto gt = synth_detail::ground_truth(spec_c, spec_u);
  const int d = spec_c.dim;
  if (!(std::sqrt(static_cast<double>(d)) < delta))
    fail(ErrorKind::Parameter,
         "admissibility requires sqrt(d) < delta: sqrt(" + std::to_string(d) +
             ") = " + fmt_double(std::sqrt(static_cast<double>(d))) +
             " >= " + fmt_double(delta));
  if (!(delta < gt.mean_diff))
    fail(ErrorKind::Parameter,
         "admissibility requires delta < |A^{-1/2}(mu_u - mu)|: " +
             fmt_double(delta) + " >= " + fmt_double(gt.mean_diff));

  BoundReport report;
  report.metric = "covnorm";
  report.dim = d;
  report.delta = delta;
  report.trials = trials;
  report.seed = spec_c.seed;
  report.mean_diff = gt.mean_diff;
  report.operator_norm = gt.operator_norm;
  report.bound_type1 = d / (delta * delta);
  const double gap = gt.mean_diff - delta;
  report.bound_type2 = d * gt.operator_norm * gt.operator_norm / (gap * gap);

  const Mat tc = synth_detail::vector_transform(spec_c);
  const Mat tu = synth_detail::vector_transform(spec_u);
  Rng rng_c(mix_seed(spec_c.seed, 1));
  Rng rng_u(mix_seed(spec_u.seed, 2));
  std::size_t exceed = 0, shortfall = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Vec xc = synth_detail::draw_vector(spec_c, tc, rng_c);
    if (gt.whitened_norm(xc - gt.mu_c) > delta) ++exceed;
    const Vec xu = synth_detail::draw_vector(spec_u, tu, rng_u);
    if (gt.whitened_norm(xu - gt.mu_c) < delta) ++shortfall;
  }
  report.empirical_type1 =
      static_cast<double>(exceed) / static_cast<double>(trials);
  report.empirical_type2 =
      static_cast<double>(shortfall) / static_cast<double>(trials);
  report.se_type1 = synth_detail::binomial_se(report.empirical_type1, trials);
  report.se_type2 = synth_detail::binomial_se(report.empirical_type2, trials);
  report.violated =
      report.empirical_type1 > report.bound_type1 + 3.0 * report.se_type1 ||
      report.empirical_type2 > report.bound_type2 + 3.0 * report.se_type2;
  return report;
}

// Conformance-score bounds: Type-I (2d/delta^2)^n; Type-II
// 1 - (1 - d*||Delta_A^{1/2}||^2/(mean_diff - delta)^2)^n with
// Delta_A = A^{-1/2} A_u A^{-1/2} + I. Scores use the ground-truth norm;
// each trial draws a fresh n-sample corpus.
inline BoundReport validate_confscore_bounds(const SyntheticSpec& spec_c,
                                             const SyntheticSpec& spec_u,
                                             double delta, std::size_t corpus_n,
                                             std::size_t trials) {
  if (trials < 1) fail(ErrorKind::Parameter, "trials must be >= 1");
  if (corpus_n < 1) fail(ErrorKind::Parameter, "corpus_n must be >= 1");
  const auto gt = synth_detail::ground_truth(spec_c, spec_u);
  const int d = spec_c.dim;
  if (!(std::sqrt(2.0 * d) < delta))
    fail(ErrorKind::Parameter,
         "admissibility requires sqrt(2d) < delta: sqrt(" +
             std::to_string(2 * d) + ") = " + fmt_double(std::sqrt(2.0 * d)) +
             " >= " + fmt_double(delta));
  if (!(delta < gt.mean_diff))
    fail(ErrorKind::Parameter,
         "admissibility requires delta < |A^{-1/2}(mu_u - mu)|: " +
             fmt_double(delta) + " >= " + fmt_double(gt.mean_diff));
  const double delta_a_sq = gt.operator_norm * gt.operator_norm + 1.0;
  const double gap = gt.mean_diff - delta;
  const double ratio = d * delta_a_sq / (gap * gap);
  if (!(ratio < 1.0))
    fail(ErrorKind::Parameter,
         "admissibility requires d*||Delta_A^{1/2}||^2/(mean_diff - delta)^2 "
         "< 1, got " +
             fmt_double(ratio));

  BoundReport report;
  report.metric = "confscore";
  report.dim = d;
  report.delta = delta;
  report.trials = trials;
  report.corpus_n = corpus_n;
  report.seed = spec_c.seed;
  report.mean_diff = gt.mean_diff;
  report.operator_norm = gt.operator_norm;
  report.bound_type1 =
      std::pow(2.0 * d / (delta * delta), static_cast<double>(corpus_n));
  report.bound_type2 = 1.0 - std::pow(1.0 - ratio, static_cast<double>(corpus_n));

  const Mat tc = synth_detail::vector_transform(spec_c);
  const Mat tu = synth_detail::vector_transform(spec_u);
  Rng rng_c(mix_seed(spec_c.seed, 3));
  Rng rng_u(mix_seed(spec_u.seed, 4));

  const auto conf_with_fresh_corpus = [&](const Vec& x, Rng& corpus_rng) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < corpus_n; ++i) {
      const Vec y = synth_detail::draw_vector(spec_c, tc, corpus_rng);
      best = std::min(best, gt.whitened_norm(y - x));
    }
    return best;
  };

  std::size_t exceed = 0, shortfall = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Vec xc = synth_detail::draw_vector(spec_c, tc, rng_c);
    if (conf_with_fresh_corpus(xc, rng_c) > delta) ++exceed;
    const Vec xu = synth_detail::draw_vector(spec_u, tu, rng_u);
    if (conf_with_fresh_corpus(xu, rng_c) < delta) ++shortfall;
  }
  report.empirical_type1 =
      static_cast<double>(exceed) / static_cast<double>(trials);
  report.empirical_type2 =
      static_cast<double>(shortfall) / static_cast<double>(trials);
  report.se_type1 = synth_detail::binomial_se(report.empirical_type1, trials);
  report.se_type2 = synth_detail::binomial_se(report.empirical_type2, trials);
  report.violated =
      report.empirical_type1 > report.bound_type1 + 3.0 * report.se_type1 ||
      report.empirical_type2 > report.bound_type2 + 3.0 * report.se_type2;
  return report;
}

}  // namespace sig2d
