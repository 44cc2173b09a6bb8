#pragma once

#include "sig2d/signature.hpp"

namespace sig2d {

// Literal nested-loop transcription of the discretized signature sums, kept
// deliberately independent of the fast path (no prefix sums, no telescoping,
// plain accumulation). Quadratic in pixel count, hence the size guard.

namespace oracle_detail {

// All indices 1-based as in the formulas; x(k1, k2) translates at the call.
inline double rect_local(const ImageTensor& t, int ch, int k1, int k2) {
  auto x = [&](int a, int b) { return t.at(a - 1, b - 1, ch); };
  return x(k1 + 1, k2 + 1) - x(k1, k2 + 1) - x(k1 + 1, k2) + x(k1, k2);
}

inline double fwd_product(const ImageTensor& t, int ch, int k1, int k2) {
  auto x = [&](int a, int b) { return t.at(a - 1, b - 1, ch); };
  return (x(k1 + 1, k2) - x(k1, k2)) * (x(k1, k2 + 1) - x(k1, k2));
}

inline double level1_term(const ImageTensor& t, Family fam, int ch) {
  const int N = t.height, M = t.width;
  auto x = [&](int a, int b) { return t.at(a - 1, b - 1, ch); };
  if (fam == Family::D) return x(N, M) - x(N, 1) - x(1, M) + x(1, 1);
  double sum = 0.0;
  for (int k1 = 1; k1 <= N - 1; ++k1)
    for (int k2 = 1; k2 <= M - 1; ++k2) sum += fwd_product(t, ch, k1, k2);
  return sum;
}

inline double level2_term(const ImageTensor& t, Family fam_a, int ch_a,
                          Family fam_b, int ch_b) {
  const int N = t.height, M = t.width;
  double sum = 0.0;
  for (int k1 = 1; k1 <= N - 1; ++k1) {
    for (int k2 = 1; k2 <= M - 1; ++k2) {
      double inner = 0.0;
      for (int k3 = 1; k3 <= k1 - 1; ++k3)
        for (int k4 = 1; k4 <= k2 - 1; ++k4)
          inner += fam_a == Family::D ? rect_local(t, ch_a, k3, k4)
                                      : fwd_product(t, ch_a, k3, k4);
      const double outer = fam_b == Family::D ? rect_local(t, ch_b, k1, k2)
                                              : fwd_product(t, ch_b, k1, k2);
      sum += inner * outer;
    }
  }
  return sum;
}

}  // namespace oracle_detail

inline SignatureFeature sig_oracle(const ImageTensor& t, const SigConfig& cfg) {
  validate_config(cfg);
  validate_tensor_shape(t.height, t.width, t.channels, "sig_oracle");
  if (static_cast<long>(t.height) * t.width > 4096)
    fail(ErrorKind::Capacity,
         "sig_oracle is quadratic in pixel count; N*M must be <= 4096");

  SignatureFeature out;
  out.config = cfg;
  out.layout = signature_layout(cfg, t.channels);
  out.values.resize(static_cast<Eigen::Index>(out.layout.size()));
  for (std::size_t k = 0; k < out.layout.size(); ++k) {
    const SigTerm& term = out.layout[k];
    out.values[static_cast<Eigen::Index>(k)] =
        term.level == 1
            ? oracle_detail::level1_term(t, term.fam_a, term.chan_a)
            : oracle_detail::level2_term(t, term.fam_a, term.chan_a, term.fam_b,
                                         term.chan_b);
  }
  if (cfg.post_scale != 1.0) out.values *= cfg.post_scale;
  return out;
}

}  // namespace sig2d
