#pragma once

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sig2d/core.hpp"
#include "sig2d/tensor.hpp"

namespace sig2d {

// Discretized 2D-signature features of multi-channel image tensors.
//
// Two differential families per channel:
//   D    - the mixed second partial; its double integral telescopes to
//          rectangle increments of the pixel values.
//   Dhat - the product of first partials, discretized as a product of
//          forward differences.
// Level 1 emits one value per (family, channel); level 2 pairs an inner and
// an outer factor, iterating the inner one over the lower-left subrectangle.

enum class SigLevel { Level1 = 1, Level2 = 2 };
enum class Pairing { Full, Diagonal };
enum class Family { D, Dhat };

struct SigConfig {
  SigLevel level = SigLevel::Level1;
  Pairing pairing = Pairing::Full;
  bool family_d = true;
  bool family_dhat = true;
  // Optional post-hoc multiplier on every feature. The discrete sums carry no
  // step-size factor of their own, so this stays 1.0 unless a resolution
  // normalization is explicitly wanted.
  double post_scale = 1.0;
};

inline void validate_config(const SigConfig& cfg) {
  if (!cfg.family_d && !cfg.family_dhat)
    fail(ErrorKind::Parameter, "signature config must include at least one family");
  if (!(cfg.post_scale > 0.0) || !std::isfinite(cfg.post_scale))
    fail(ErrorKind::Parameter, "signature post_scale must be positive and finite");
}

inline const char* to_string(Family f) { return f == Family::D ? "d" : "dhat"; }
inline const char* to_string(Pairing p) {
  return p == Pairing::Full ? "full" : "diagonal";
}

// One output slot. Level-1 terms use only (fam_a, chan_a); level-2 terms are
// (inner factor, outer factor) pairs.
struct SigTerm {
  int level = 1;
  Family fam_a = Family::D;
  int chan_a = 0;
  Family fam_b = Family::D;
  int chan_b = -1;
};

struct SignatureFeature {
  SigConfig config;
  Vec values;
  std::vector<SigTerm> layout;
};

inline std::vector<Family> included_families(const SigConfig& cfg) {
  std::vector<Family> fams;
  if (cfg.family_d) fams.push_back(Family::D);
  if (cfg.family_dhat) fams.push_back(Family::Dhat);
  return fams;
}

// Term order is a pure function of (config, d): family blocks in the order
// D, Dhat; channel pairs row-major within a block.
inline std::vector<SigTerm> signature_layout(const SigConfig& cfg, int channels) {
  validate_config(cfg);
  const auto fams = included_families(cfg);
  std::vector<SigTerm> terms;
  if (cfg.level == SigLevel::Level1) {
    for (Family f : fams)
      for (int i = 0; i < channels; ++i) terms.push_back({1, f, i, f, -1});
    return terms;
  }
  for (Family fa : fams)
    for (Family fb : fams) {
      if (cfg.pairing == Pairing::Diagonal) {
        for (int i = 0; i < channels; ++i) terms.push_back({2, fa, i, fb, i});
      } else {
        for (int i = 0; i < channels; ++i)
          for (int j = 0; j < channels; ++j) terms.push_back({2, fa, i, fb, j});
      }
    }
  return terms;
}

inline std::size_t feature_length(const SigConfig& cfg, int channels) {
  validate_config(cfg);
  const std::size_t nf = included_families(cfg).size();
  const std::size_t d = static_cast<std::size_t>(channels);
  if (cfg.level == SigLevel::Level1) return nf * d;
  if (cfg.pairing == Pairing::Full) return nf * d * nf * d;
  return nf * nf * d;
}

inline constexpr std::size_t kCapacityWarnThreshold = 100000;

namespace detail {

// Compensated accumulator; summation order is fixed row-major by the callers.
struct Kahan {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    const double y = v - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

// Per-channel level-2 ingredients on the (N-1) x (M-1) grid of 1-based paper
// index (k1, k2) = (r+1, c+1):
//   rect_from_origin = x[k1,k2] - x[k1,1] - x[1,k2] + x[1,1]
//   rect_local       = x[k1+1,k2+1] - x[k1,k2+1] - x[k1+1,k2] + x[k1,k2]
//   fwd_product      = (x[k1+1,k2] - x[k1,k2]) * (x[k1,k2+1] - x[k1,k2])
//   fwd_prefix       = sum of fwd_product over k3 < k1, k4 < k2
struct ChannelGrids {
  int rows = 0, cols = 0;
  std::vector<double> rect_from_origin;
  std::vector<double> rect_local;
  std::vector<double> fwd_product;
  std::vector<double> fwd_prefix;

  double go(int r, int c) const { return rect_from_origin[idx(r, c)]; }
  double lo(int r, int c) const { return rect_local[idx(r, c)]; }
  double qq(int r, int c) const { return fwd_product[idx(r, c)]; }
  double pp(int r, int c) const { return fwd_prefix[idx(r, c)]; }
  std::size_t idx(int r, int c) const {
    return static_cast<std::size_t>(r) * cols + c;
  }
};

inline ChannelGrids build_grids(const ImageTensor& t, int ch, bool with_prefix) {
  ChannelGrids g;
  g.rows = t.height - 1;
  g.cols = t.width - 1;
  const std::size_t n = static_cast<std::size_t>(g.rows) * g.cols;
  g.rect_from_origin.resize(n);
  g.rect_local.resize(n);
  g.fwd_product.resize(n);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const double x00 = t.at(r, c, ch);
      const double x10 = t.at(r + 1, c, ch);
      const double x01 = t.at(r, c + 1, ch);
      const double x11 = t.at(r + 1, c + 1, ch);
      g.rect_from_origin[g.idx(r, c)] =
          x00 - t.at(r, 0, ch) - t.at(0, c, ch) + t.at(0, 0, ch);
      g.rect_local[g.idx(r, c)] = x11 - x01 - x10 + x00;
      g.fwd_product[g.idx(r, c)] = (x10 - x00) * (x01 - x00);
    }
  }
  if (with_prefix) {
    // Exclusive 2-D prefix sum of fwd_product: entry (r,c) sums rows < r,
    // cols < c. Row 0 and column 0 are zero.
    g.fwd_prefix.assign(n, 0.0);
    for (int r = 1; r < g.rows; ++r)
      for (int c = 1; c < g.cols; ++c)
        g.fwd_prefix[g.idx(r, c)] = g.fwd_product[g.idx(r - 1, c - 1)] +
                                    g.fwd_prefix[g.idx(r - 1, c)] +
                                    g.fwd_prefix[g.idx(r, c - 1)] -
                                    g.fwd_prefix[g.idx(r - 1, c - 1)];
  }
  return g;
}

inline double level2_term(const ChannelGrids& a, const ChannelGrids& b,
                          Family fam_a, Family fam_b) {
  Kahan acc;
  for (int r = 0; r < a.rows; ++r)
    for (int c = 0; c < a.cols; ++c) {
      const double inner = fam_a == Family::D ? a.go(r, c) : a.pp(r, c);
      const double outer = fam_b == Family::D ? b.lo(r, c) : b.qq(r, c);
      acc.add(inner * outer);
    }
  return acc.sum;
}

}  // namespace detail

// Level 1: family D gives the global rectangle increment per channel; family
// Dhat sums the forward-difference products over the grid.
inline SignatureFeature sig_level1(const ImageTensor& t, const SigConfig& cfg_in) {
  SigConfig cfg = cfg_in;
  cfg.level = SigLevel::Level1;
  validate_config(cfg);
  validate_tensor_shape(t.height, t.width, t.channels, "sig_level1");

  SignatureFeature out;
  out.config = cfg;
  out.layout = signature_layout(cfg, t.channels);
  out.values.resize(static_cast<Eigen::Index>(out.layout.size()));

  const int N = t.height, M = t.width;
  Eigen::Index slot = 0;
  if (cfg.family_d) {
    for (int ch = 0; ch < t.channels; ++ch)
      out.values[slot++] = t.at(N - 1, M - 1, ch) - t.at(N - 1, 0, ch) -
                           t.at(0, M - 1, ch) + t.at(0, 0, ch);
  }
  if (cfg.family_dhat) {
    for (int ch = 0; ch < t.channels; ++ch) {
      detail::Kahan acc;
      for (int r = 0; r + 1 < N; ++r)
        for (int c = 0; c + 1 < M; ++c)
          acc.add((t.at(r + 1, c, ch) - t.at(r, c, ch)) *
                  (t.at(r, c + 1, ch) - t.at(r, c, ch)));
      out.values[slot++] = acc.sum;
    }
  }
  if (cfg.post_scale != 1.0) out.values *= cfg.post_scale;
  return out;
}

// Level 2: per admitted channel pair, the four inner/outer family
// combinations. Inner D telescopes to a rectangle increment and inner Dhat is
// carried by a 2-D prefix sum, so each term costs O(N*M).
inline SignatureFeature sig_level2(const ImageTensor& t, const SigConfig& cfg_in) {
  SigConfig cfg = cfg_in;
  cfg.level = SigLevel::Level2;
  validate_config(cfg);
  validate_tensor_shape(t.height, t.width, t.channels, "sig_level2");

  SignatureFeature out;
  out.config = cfg;
  out.layout = signature_layout(cfg, t.channels);
  out.values.resize(static_cast<Eigen::Index>(out.layout.size()));
  if (out.layout.size() > kCapacityWarnThreshold)
    std::cerr << "sig2d: warning: level-2 feature length "
              << out.layout.size() << " exceeds " << kCapacityWarnThreshold
              << "; consider diagonal pairing\n";

  std::vector<detail::ChannelGrids> grids;
  grids.reserve(static_cast<std::size_t>(t.channels));
  for (int ch = 0; ch < t.channels; ++ch)
    grids.push_back(detail::build_grids(t, ch, cfg.family_dhat));

  for (std::size_t k = 0; k < out.layout.size(); ++k) {
    const SigTerm& term = out.layout[k];
    out.values[static_cast<Eigen::Index>(k)] = detail::level2_term(
        grids[static_cast<std::size_t>(term.chan_a)],
        grids[static_cast<std::size_t>(term.chan_b)], term.fam_a, term.fam_b);
  }
  if (cfg.post_scale != 1.0) out.values *= cfg.post_scale;
  return out;
}

inline SignatureFeature compute_signature(const ImageTensor& t,
                                          const SigConfig& cfg) {
  return cfg.level == SigLevel::Level1 ? sig_level1(t, cfg) : sig_level2(t, cfg);
}

// Batch extraction; one row per sample, fan-out across samples is safe and
// deterministic because every sample fills only its own row.
inline Mat extract_signatures(const TensorBatch& batch, const SigConfig& cfg,
                              int threads = 1) {
  if (batch.count() == 0)
    fail(ErrorKind::Parameter, "cannot extract signatures from an empty batch");
  validate_batch_shape(batch, "extract_signatures");
  validate_tensor_shape(batch.height(), batch.width(), batch.channels(),
                        "extract_signatures");
  const std::size_t len = feature_length(cfg, batch.channels());
  Mat out(static_cast<Eigen::Index>(batch.count()), static_cast<Eigen::Index>(len));
  parallel_for(batch.count(), threads, [&](std::size_t i) {
    const SignatureFeature f = compute_signature(batch.tensors[i], cfg);
    out.row(static_cast<Eigen::Index>(i)) = f.values.transpose();
  });
  return out;
}

inline nlohmann::json layout_to_json(const SigConfig& cfg, int channels) {
  nlohmann::json j;
  j["format"] = "sig2d.layout";
  j["version"] = 1;
  j["level"] = static_cast<int>(cfg.level);
  j["pairing"] = to_string(cfg.pairing);
  nlohmann::json fams = nlohmann::json::array();
  for (Family f : included_families(cfg)) fams.push_back(to_string(f));
  j["families"] = fams;
  j["post_scale"] = cfg.post_scale;
  j["channels"] = channels;
  const auto terms = signature_layout(cfg, channels);
  j["length"] = terms.size();
  nlohmann::json jterms = nlohmann::json::array();
  for (const SigTerm& t : terms) {
    nlohmann::json jt;
    jt["level"] = t.level;
    if (t.level == 1) {
      jt["family"] = to_string(t.fam_a);
      jt["channel"] = t.chan_a;
    } else {
      jt["inner_family"] = to_string(t.fam_a);
      jt["inner_channel"] = t.chan_a;
      jt["outer_family"] = to_string(t.fam_b);
      jt["outer_channel"] = t.chan_b;
    }
    jterms.push_back(jt);
  }
  j["terms"] = jterms;
  return j;
}

}  // namespace sig2d
