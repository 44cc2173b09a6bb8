#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace sig2d {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;  // rows are samples unless stated otherwise

inline constexpr const char* kVersion = "0.1.0";

enum class ErrorKind {
  Io,
  Format,
  Validation,
  Shape,
  Parameter,
  InsufficientData,
  Capacity,
  Config,
  UndefinedMetric,
  Internal,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::InsufficientData: return "insufficient_data";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Config: return "config";
    case ErrorKind::UndefinedMetric: return "undefined_metric";
    case ErrorKind::Internal: return "internal";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

// Round-trippable decimal rendering for doubles written to CSV/JSON.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Runs fn(i) for i in [0, n). Each index writes only its own output slot,
// so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t nworkers =
      std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(nworkers);
  for (std::size_t w = 0; w < nworkers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += nworkers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace sig2d
