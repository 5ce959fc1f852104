#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace msnc {

// Error taxonomy: ShapeError for call-site contract violations, FormatError
// for bad external bytes, NumericError for non-finite values, UsageError for
// bad invocations (CLI, non-scalar loss, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class FormatError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class UsageError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline void require_shape(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// Deterministic parallel map: the loop body writes disjoint output ranges,
// so results are bitwise independent of the thread count.
int num_threads();
void set_num_threads(int n);
void parallel_for(int64_t n, int64_t grain,
                  const std::function<void(int64_t, int64_t)>& body);

// Marks the current thread as already parallel; nested parallel_for calls
// run serially for the guard's lifetime. Used by threads that partition
// work above the op level (batch-parallel training).
class SerialSectionGuard {
 public:
  SerialSectionGuard();
  ~SerialSectionGuard();
  SerialSectionGuard(const SerialSectionGuard&) = delete;
  SerialSectionGuard& operator=(const SerialSectionGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace msnc
