// Apache License, Version 2.0, refer to LICENSE.txt

#ifndef GOLA_TYPES_HPP
#define GOLA_TYPES_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gola {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error hierarchy. Every module reports failures by throwing one of these;
// the CLI maps them onto a machine-readable error document via kind().
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ArgumentError : Error {
  explicit ArgumentError(const std::string& what) : Error("argument", what) {}
};

struct ConstructionError : Error {
  explicit ConstructionError(const std::string& what)
      : Error("construction", what) {}
};

// A finite-difference stencil touched a non-finite log density.
class DerivativeError : public Error {
 public:
  DerivativeError(const std::string& what, Vector point)
      : Error("derivative", what), point_(std::move(point)) {}
  const Vector& point() const noexcept { return point_; }

 private:
  Vector point_;
};

struct SingularMatrixError : Error {
  explicit SingularMatrixError(const std::string& what)
      : Error("singular_matrix", what) {}
};

struct RejectedStartError : Error {
  explicit RejectedStartError(const std::string& what)
      : Error("rejected_start", what) {}
};

struct NoModesFoundError : Error {
  explicit NoModesFoundError(const std::string& what)
      : Error("no_modes_found", what) {}
};

class DegenerateModeError : public Error {
 public:
  DegenerateModeError(const std::string& what, Vector mode)
      : Error("degenerate_mode", what), mode_(std::move(mode)) {}
  const Vector& mode() const noexcept { return mode_; }

 private:
  Vector mode_;
};

struct ScalingError : Error {
  explicit ScalingError(const std::string& what) : Error("scaling", what) {}
};

struct GenerationError : Error {
  explicit GenerationError(const std::string& what)
      : Error("generation", what) {}
};

struct DegenerateOutputError : Error {
  explicit DegenerateOutputError(const std::string& what)
      : Error("degenerate_output", what) {}
};

struct UnsupportedConfigurationError : Error {
  explicit UnsupportedConfigurationError(const std::string& what)
      : Error("unsupported_configuration", what) {}
};

// A user-supplied model failed on a design row.
struct EvaluationError : Error {
  explicit EvaluationError(const std::string& what) : Error("evaluation", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

// splitmix64 finalizer; used to derive independent sub-seeds from a master
// seed so that every stochastic stage has its own stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace gola

#endif  // GOLA_TYPES_HPP
