// common.hpp
//
// Copyright 2026 The speecheq authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SPEECHEQ_COMMON_HPP
#define SPEECHEQ_COMMON_HPP

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

extern "C" void openblas_set_num_threads(int num_threads);

namespace speecheq {

// All in-memory math runs in double; persisted numeric payloads are f32.
using real = double;

// ---------------------------------------------------------------------------
// Errors. One base type per failure family so callers can catch precisely
// and the CLI can emit a machine-parseable kind tag.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  Error(std::string kind, std::string msg)
      : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)), msg_(std::move(msg)) {}
  const std::string& kind() const { return kind_; }
  const std::string& msg() const { return msg_; }  // what() minus the kind prefix

 private:
  std::string kind_;
  std::string msg_;
};

#define SPEECHEQ_DEFINE_ERROR(NAME, TAG)                          \
  class NAME : public Error {                                     \
   public:                                                        \
    explicit NAME(const std::string& msg) : Error(TAG, msg) {}    \
  }

SPEECHEQ_DEFINE_ERROR(IoError, "io-error");
SPEECHEQ_DEFINE_ERROR(FormatError, "format-error");
SPEECHEQ_DEFINE_ERROR(ConfigError, "config-error");
SPEECHEQ_DEFINE_ERROR(SchemaError, "schema-error");
SPEECHEQ_DEFINE_ERROR(MappingError, "mapping-error");
SPEECHEQ_DEFINE_ERROR(NumericError, "numeric-error");
SPEECHEQ_DEFINE_ERROR(ParameterError, "parameter-error");
SPEECHEQ_DEFINE_ERROR(ShapeError, "shape-error");
SPEECHEQ_DEFINE_ERROR(OovError, "oov-error");
SPEECHEQ_DEFINE_ERROR(InfeasibleError, "infeasible-error");

#undef SPEECHEQ_DEFINE_ERROR

/// Rethrow a caught Error with a context prefix on its message, preserving
/// the derived type so catch-by-family keeps working at call sites.
[[noreturn]] inline void rethrow_with_context(const Error& e, const std::string& context) {
  const std::string msg = context + ": " + e.msg();
  const std::string& k = e.kind();
  if (k == "io-error") throw IoError(msg);
  if (k == "format-error") throw FormatError(msg);
  if (k == "config-error") throw ConfigError(msg);
  if (k == "schema-error") throw SchemaError(msg);
  if (k == "mapping-error") throw MappingError(msg);
  if (k == "numeric-error") throw NumericError(msg);
  if (k == "parameter-error") throw ParameterError(msg);
  if (k == "shape-error") throw ShapeError(msg);
  if (k == "oov-error") throw OovError(msg);
  if (k == "infeasible-error") throw InfeasibleError(msg);
  throw Error(k, msg);
}

// ---------------------------------------------------------------------------
// Seed derivation. One global seed; every randomized component derives its
// own stream by stable-hashing its name, so adding a component never
// perturbs the draws of another.
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t global_seed, std::string_view component) {
  return splitmix64(global_seed ^ fnv1a64(component));
}

inline uint64_t derive_seed(uint64_t global_seed, std::string_view component, uint64_t counter) {
  return splitmix64(splitmix64(global_seed ^ fnv1a64(component)) + counter);
}

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// f32 snapping. Trainable state is kept f32-representable so that the f32
// checkpoint encoding is lossless and resume reproduces an uninterrupted
// run bit for bit.
// ---------------------------------------------------------------------------

inline real snap_f32(real x) { return static_cast<real>(static_cast<float>(x)); }

inline void snap_f32(std::vector<real>& xs) {
  for (auto& x : xs) x = snap_f32(x);
}

// ---------------------------------------------------------------------------
// Little-endian binary stream helpers (file formats are pinned LE).
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
void put_le(std::string& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}
}  // namespace detail

class ByteWriter {
 public:
  void u8(uint8_t v) { detail::put_le(buf_, v); }
  void u16(uint16_t v) { detail::put_le(buf_, v); }
  void u32(uint32_t v) { detail::put_le(buf_, v); }
  void u64(uint64_t v) { detail::put_le(buf_, v); }
  void f32(float v) { detail::put_le(buf_, v); }
  void bytes(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void str(std::string_view s) { buf_.append(s); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const void* data, size_t n)
      : p_(static_cast<const unsigned char*>(data)), n_(n) {}
  explicit ByteReader(const std::string& s) : ByteReader(s.data(), s.size()) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > n_) throw FormatError("truncated input");
    T v;
    std::memcpy(&v, p_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  uint8_t u8() { return get<uint8_t>(); }
  uint16_t u16() { return get<uint16_t>(); }
  uint32_t u32() { return get<uint32_t>(); }
  uint64_t u64() { return get<uint64_t>(); }
  float f32() { return get<float>(); }
  std::string str(size_t n) {
    if (pos_ + n > n_) throw FormatError("truncated input");
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return n_ - pos_; }

 private:
  const unsigned char* p_;
  size_t n_;
  size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// File helpers. Output files are written temp-then-rename so a crashed run
// never leaves a half-written artifact behind.
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on " + path.string());
  return ss.str();
}

inline void atomic_write_file(const std::filesystem::path& path, std::string_view contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failure on " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Small string utilities for the delimited manifest formats.
// ---------------------------------------------------------------------------

inline std::vector<std::string> split(std::string_view s, char delim) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = s.find(delim, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

// Format a double with enough digits to round-trip, for logs that must be
// byte-identical across reruns.
inline std::string format_real(real x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// BLAS runs single-threaded: the runtime budget is one core and threaded
// reductions would be a nondeterminism hazard.
namespace detail {
struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
};
inline const BlasInit blas_init_once{};
}  // namespace detail

}  // namespace speecheq

#endif  // SPEECHEQ_COMMON_HPP
