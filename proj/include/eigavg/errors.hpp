#pragma once

#include <stdexcept>
#include <string>

namespace eigavg {

/// Base of every exception raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChartDomainError : public Error { public: using Error::Error; };
class ConvergenceError : public Error { public: using Error::Error; };
class ToleranceError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class DegenerateCurveError : public Error { public: using Error::Error; };
class DegenerateSampleError : public Error { public: using Error::Error; };
class CoverError : public Error { public: using Error::Error; };
class ColorBudgetError : public Error { public: using Error::Error; };
class NonContractingError : public Error { public: using Error::Error; };
class NonHyperbolicError : public Error { public: using Error::Error; };
class TransversalityError : public Error { public: using Error::Error; };
class NoConvergenceError : public Error { public: using Error::Error; };
class OverflowGuardError : public Error { public: using Error::Error; };
class QuadratureError : public Error { public: using Error::Error; };
class ResolutionError : public Error { public: using Error::Error; };
class RankError : public Error { public: using Error::Error; };
class RankCapError : public Error { public: using Error::Error; };
class CertificateMissingError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class SchemaMismatch : public Error { public: using Error::Error; };

/// A predicted inequality or invariant was violated at tolerance.
class AssertionFailure : public Error { public: using Error::Error; };

}  // namespace eigavg
