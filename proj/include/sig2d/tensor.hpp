#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sig2d/core.hpp"
#include "sig2d/npy.hpp"

namespace sig2d {

// One multi-channel image (or learned representation): height x width x
// channels, row-major with the channel index fastest.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  static ImageTensor zeros(int n, int m, int d) {
    ImageTensor t;
    t.height = n;
    t.width = m;
    t.channels = d;
    t.values.assign(static_cast<std::size_t>(n) * m * d, 0.0);
    return t;
  }

  // Row/col/channel are 0-based here; formulas elsewhere keep the 1-based
  // convention and translate at the boundary.
  double at(int r, int c, int ch) const {
    return values[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  double& at(int r, int c, int ch) {
    return values[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
};

struct TensorBatch {
  std::vector<ImageTensor> tensors;
  std::vector<std::int64_t> sample_ids;
  std::vector<int> labels;  // empty when unlabeled

  std::size_t count() const { return tensors.size(); }
  int height() const { return tensors.empty() ? 0 : tensors[0].height; }
  int width() const { return tensors.empty() ? 0 : tensors[0].width; }
  int channels() const { return tensors.empty() ? 0 : tensors[0].channels; }
};

// Every member must share the leading tensor's shape.
inline void validate_batch_shape(const TensorBatch& batch,
                                 const std::string& where) {
  for (const ImageTensor& t : batch.tensors)
    if (t.height != batch.height() || t.width != batch.width() ||
        t.channels != batch.channels())
      fail(ErrorKind::Shape, where + ": batch tensors disagree on shape");
}

inline void validate_tensor_shape(int n, int m, int d, const std::string& where) {
  if (n < 2 || m < 2)
    fail(ErrorKind::Shape, where + ": height and width must both be >= 2, got (" +
                               std::to_string(n) + ", " + std::to_string(m) + ")");
  if (d < 1)
    fail(ErrorKind::Shape, where + ": channel count must be >= 1");
}

namespace detail {

inline void check_finite(const ImageTensor& t, std::size_t sample_index) {
  for (double v : t.values)
    if (!std::isfinite(v))
      fail(ErrorKind::Validation,
           "non-finite value in sample " + std::to_string(sample_index));
}

// Per-sample min-max rescale to [0,1]; a constant tensor maps to all zeros.
inline void minmax_rescale(ImageTensor& t) {
  double lo = t.values[0], hi = t.values[0];
  for (double v : t.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) {
    for (double& v : t.values) v = 0.0;
    return;
  }
  const double inv = 1.0 / (hi - lo);
  for (double& v : t.values) v = (v - lo) * inv;
}

}  // namespace detail

// Loads a 3-D (N,M,d) or 4-D (n,N,M,d) array file into a batch. With
// normalize=true, u8 data is divided by 255 and float data that strays
// outside [0,1] is min-max rescaled per sample.
inline TensorBatch load_array_file(const std::string& path, bool normalize) {
  npy::Array arr = npy::read(path);
  std::size_t n = 1, N, M, d;
  if (arr.shape.size() == 3) {
    N = arr.shape[0];
    M = arr.shape[1];
    d = arr.shape[2];
  } else if (arr.shape.size() == 4) {
    n = arr.shape[0];
    N = arr.shape[1];
    M = arr.shape[2];
    d = arr.shape[3];
  } else {
    fail(ErrorKind::Shape, path + ": expected 3 or 4 dimensions, got " +
                               std::to_string(arr.shape.size()));
  }
  validate_tensor_shape(static_cast<int>(N), static_cast<int>(M),
                        static_cast<int>(d), path);

  const bool is_u8 = (arr.dtype == "|u1" || arr.dtype == "u1");
  const std::size_t per = N * M * d;

  TensorBatch batch;
  batch.tensors.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    ImageTensor t;
    t.height = static_cast<int>(N);
    t.width = static_cast<int>(M);
    t.channels = static_cast<int>(d);
    t.values.assign(arr.data.begin() + static_cast<std::ptrdiff_t>(k * per),
                    arr.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * per));
    detail::check_finite(t, k);
    if (normalize) {
      if (is_u8) {
        for (double& v : t.values) v *= (1.0 / 255.0);
      } else {
        bool in_range = true;
        for (double v : t.values)
          if (v < 0.0 || v > 1.0) {
            in_range = false;
            break;
          }
        if (!in_range) detail::minmax_rescale(t);
      }
    }
    batch.tensors.push_back(std::move(t));
    batch.sample_ids.push_back(static_cast<std::int64_t>(k));
  }
  return batch;
}

inline void save_array_file(const std::string& path, const TensorBatch& batch) {
  if (batch.count() == 0) fail(ErrorKind::Parameter, "cannot save an empty batch");
  validate_batch_shape(batch, path);
  const std::size_t per = batch.tensors[0].values.size();
  std::vector<double> buf;
  buf.reserve(batch.count() * per);
  for (const auto& t : batch.tensors)
    buf.insert(buf.end(), t.values.begin(), t.values.end());
  npy::write(path,
             {batch.count(), static_cast<std::size_t>(batch.height()),
              static_cast<std::size_t>(batch.width()),
              static_cast<std::size_t>(batch.channels())},
             buf.data());
}

// Per-channel arithmetic mean over all pixels; the flattened representation
// used by the naive baseline.
inline Vec channel_mean_flatten(const ImageTensor& t) {
  Vec mean = Vec::Zero(t.channels);
  for (int r = 0; r < t.height; ++r)
    for (int c = 0; c < t.width; ++c)
      for (int ch = 0; ch < t.channels; ++ch) mean[ch] += t.at(r, c, ch);
  mean /= static_cast<double>(t.height) * t.width;
  return mean;
}

}  // namespace sig2d
