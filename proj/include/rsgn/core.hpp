#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace rsgn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent vector or matrix shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A parameter outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input data that parsed but is semantically invalid (bad labels, empty file).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A residual evaluation produced a non-finite component.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, Index component)
      : Error(what + " (component " + std::to_string(component) + ")"),
        component_(component) {}

  Index component() const noexcept { return component_; }

 private:
  Index component_;
};

/// Malformed text input; `line()` / `row()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline void require_size(Index actual, Index expected, const char* what) {
  if (actual != expected) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(expected) +
                         ", got " + std::to_string(actual));
  }
}

/// SplitMix64 finaliser. Used to derive independent child seeds from a base seed.
constexpr std::uint64_t mix_seed(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stable combination of a base seed with a sequence of indices.
template <typename... Ints>
constexpr std::uint64_t derive_seed(std::uint64_t base, Ints... parts) noexcept {
  std::uint64_t h = mix_seed(base);
  ((h = mix_seed(h ^ (static_cast<std::uint64_t>(parts) + 0x632be59bd9b4e019ULL))), ...);
  return h;
}

}  // namespace rsgn
