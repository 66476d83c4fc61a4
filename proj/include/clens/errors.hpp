#pragma once

#include <stdexcept>
#include <string>

namespace clens {

/// Base of every library error. `kind()` is a stable machine-readable tag
/// that the CLI copies into its JSON diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CLENS_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  };

CLENS_DEFINE_ERROR(InvalidSpec)
CLENS_DEFINE_ERROR(DimensionMismatch)
CLENS_DEFINE_ERROR(RankDeficient)
CLENS_DEFINE_ERROR(NonpositiveVariance)
CLENS_DEFINE_ERROR(DegenerateVariance)
CLENS_DEFINE_ERROR(NoConvergence)
CLENS_DEFINE_ERROR(AllZeroWeights)
CLENS_DEFINE_ERROR(DomainError)
CLENS_DEFINE_ERROR(OutOfSupport)
CLENS_DEFINE_ERROR(EmptyInput)

#undef CLENS_DEFINE_ERROR

}  // namespace clens
