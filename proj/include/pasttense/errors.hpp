#pragma once

#include <stdexcept>
#include <string>

namespace pasttense {

// Every error carries a short machine-readable kind tag so the command line
// front end can emit a uniform "error kind=<tag> message=<...>" line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape", w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric", w) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error("usage", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error("data", w) {}
};
struct SplitError : Error {
  explicit SplitError(const std::string& w) : Error("split", w) {}
};
struct ResampleError : Error {
  explicit ResampleError(const std::string& w) : Error("resample", w) {}
};
struct ScoringError : Error {
  explicit ScoringError(const std::string& w) : Error("scoring", w) {}
};
struct LoadError : Error {
  explicit LoadError(const std::string& w) : Error("load", w) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("divergence", w) {}
};

}  // namespace pasttense
