#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sig2d/core.hpp"

namespace sig2d::npy {

// Minimal .npy (version 1.0) reader/writer. Element types accepted on read:
// <f8, <f4, |u1. Writes are always <f8, C order.

struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> data;  // row-major
  std::string dtype;         // descriptor as found in the file

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\n");
  std::size_t b = s.find_last_not_of(" \t\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

// Extracts the value of `key` from the python-dict header text.
inline std::string dict_value(const std::string& header, const std::string& key,
                              const std::string& path) {
  const std::string quoted = "'" + key + "'";
  std::size_t kpos = header.find(quoted);
  if (kpos == std::string::npos)
    fail(ErrorKind::Format,
         path + ": header missing field '" + key + "'");
  std::size_t colon = header.find(':', kpos + quoted.size());
  if (colon == std::string::npos)
    fail(ErrorKind::Format, path + ": malformed header near '" + key + "'");
  // Value ends at the next top-level comma or the closing brace.
  std::size_t pos = colon + 1;
  int depth = 0;
  std::size_t end = pos;
  for (; end < header.size(); ++end) {
    char c = header[end];
    if (c == '(' || c == '[') ++depth;
    if (c == ')' || c == ']') --depth;
    if (depth == 0 && (c == ',' || c == '}')) break;
  }
  return trim(header.substr(pos, end - pos));
}

inline std::vector<std::size_t> parse_shape(const std::string& value,
                                            const std::string& path) {
  if (value.size() < 2 || value.front() != '(' || value.back() != ')')
    fail(ErrorKind::Format, path + ": malformed header field 'shape'");
  std::vector<std::size_t> shape;
  std::string body = value.substr(1, value.size() - 2);
  std::size_t start = 0;
  while (start < body.size()) {
    std::size_t comma = body.find(',', start);
    std::string tok = trim(body.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!tok.empty()) {
      for (char c : tok)
        if (c < '0' || c > '9')
          fail(ErrorKind::Format, path + ": malformed header field 'shape'");
      shape.push_back(static_cast<std::size_t>(std::stoull(tok)));
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (shape.empty())
    fail(ErrorKind::Format, path + ": malformed header field 'shape'");
  return shape;
}

template <typename T>
void read_payload(std::ifstream& in, std::size_t count, std::vector<double>& out,
                  const std::string& path) {
  std::vector<T> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(count * sizeof(T)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(T))
    fail(ErrorKind::Format, path + ": data payload shorter than shape implies");
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(raw[i]);
}

}  // namespace detail

inline Array read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open file: " + path);

  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    fail(ErrorKind::Format, path + ": bad magic string");
  const unsigned major = static_cast<unsigned char>(magic[6]);
  if (major != 1 && major != 2)
    fail(ErrorKind::Format,
         path + ": unsupported format version " + std::to_string(major));

  std::size_t header_len = 0;
  if (major == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (in.gcount() != 2) fail(ErrorKind::Format, path + ": truncated header length");
    header_len = b[0] | (static_cast<std::size_t>(b[1]) << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) fail(ErrorKind::Format, path + ": truncated header length");
    header_len = b[0] | (static_cast<std::size_t>(b[1]) << 8) |
                 (static_cast<std::size_t>(b[2]) << 16) |
                 (static_cast<std::size_t>(b[3]) << 24);
  }

  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::size_t>(in.gcount()) != header_len)
    fail(ErrorKind::Format, path + ": truncated header");

  Array arr;
  arr.dtype = detail::dict_value(header, "descr", path);
  if (arr.dtype.size() >= 2 && arr.dtype.front() == '\'' && arr.dtype.back() == '\'')
    arr.dtype = arr.dtype.substr(1, arr.dtype.size() - 2);

  const std::string forder = detail::dict_value(header, "fortran_order", path);
  if (forder != "False")
    fail(ErrorKind::Format,
         path + ": header field 'fortran_order' must be False, got " + forder);

  arr.shape = detail::parse_shape(detail::dict_value(header, "shape", path), path);

  const std::size_t count = arr.element_count();
  if (arr.dtype == "<f8") {
    detail::read_payload<double>(in, count, arr.data, path);
  } else if (arr.dtype == "<f4") {
    detail::read_payload<float>(in, count, arr.data, path);
  } else if (arr.dtype == "|u1" || arr.dtype == "u1") {
    detail::read_payload<unsigned char>(in, count, arr.data, path);
  } else {
    fail(ErrorKind::Format,
         path + ": unsupported header field 'descr': " + arr.dtype);
  }
  return arr;
}

inline void write(const std::string& path, const std::vector<std::size_t>& shape,
                  const double* data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open file for writing: " + path);

  std::string dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (i + 1 < shape.size()) dict += ", ";
  }
  if (shape.size() == 1) dict += ",";
  dict += "), }";
  // Pad so that magic(6)+version(2)+len(2)+dict is a multiple of 64 and the
  // header ends with a newline.
  std::size_t unpadded = 10 + dict.size() + 1;
  std::size_t pad = (64 - unpadded % 64) % 64;
  dict.append(pad, ' ');
  dict += '\n';

  const char magic[8] = {'\x93', 'N', 'U', 'M', 'P', 'Y', '\x01', '\x00'};
  out.write(magic, 8);
  const std::size_t hlen = dict.size();
  unsigned char lenb[2] = {static_cast<unsigned char>(hlen & 0xff),
                           static_cast<unsigned char>((hlen >> 8) & 0xff)};
  out.write(reinterpret_cast<char*>(lenb), 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));

  std::size_t count = 1;
  for (auto s : shape) count *= s;
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

// Feature matrices travel as 2-D arrays, rows = samples.
inline Mat read_matrix(const std::string& path) {
  Array arr = read(path);
  if (arr.shape.size() != 2)
    fail(ErrorKind::Shape, path + ": expected a 2-D array, got " +
                               std::to_string(arr.shape.size()) + "-D");
  const auto rows = static_cast<Eigen::Index>(arr.shape[0]);
  const auto cols = static_cast<Eigen::Index>(arr.shape[1]);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = arr.data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

inline void write_matrix(const std::string& path, const Mat& m) {
  std::vector<double> buf(static_cast<std::size_t>(m.rows() * m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      buf[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  write(path, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
        buf.data());
}

}  // namespace sig2d::npy
