#pragma once

#include <stdexcept>
#include <string>

namespace svw {

/// Failure categories; each maps to a CLI exit code.
enum class ErrorCategory { usage, data, numeric };

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorCategory::usage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

/// A training loss became NaN or infinite.
class LossDivergedError : public NumericError {
 public:
  explicit LossDivergedError(long long iteration, double loss)
      : NumericError("non-finite training loss (" + std::to_string(loss) + ") at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  long long iteration() const { return iteration_; }

 private:
  long long iteration_;
};

/// Raised by the integrator when a field becomes non-finite or |h| exceeds the depth.
class DivergenceError : public NumericError {
 public:
  DivergenceError(double time, const std::string& detail, int frame = -1)
      : NumericError("integration diverged at t=" + std::to_string(time) + "s" +
                     (frame >= 0 ? " (frame " + std::to_string(frame) + ")" : std::string()) +
                     ": " + detail),
        time_(time),
        frame_(frame),
        detail_(detail) {}
  double time() const { return time_; }
  /// Output frame index being computed, or -1 when raised outside a sequence.
  int frame() const { return frame_; }
  const std::string& detail() const { return detail_; }

 private:
  double time_;
  int frame_;
  std::string detail_;
};

/// Shape mismatch inside a tensor op; the message names the op and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace svw
