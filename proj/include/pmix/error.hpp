#pragma once

#include <stdexcept>
#include <string>

namespace pmix {

// Exit-code class of an error as seen by the command line tool.
enum class ErrorClass { input = 1, pathology = 2 };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what)
      : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

#define PMIX_DEFINE_ERROR(Name, cls)                                    \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(cls, what) {}        \
  };

PMIX_DEFINE_ERROR(InputError, ErrorClass::input)
PMIX_DEFINE_ERROR(ConfigurationError, ErrorClass::input)
PMIX_DEFINE_ERROR(DomainError, ErrorClass::input)
PMIX_DEFINE_ERROR(OracleSizeError, ErrorClass::input)
PMIX_DEFINE_ERROR(DegenerateConditional, ErrorClass::pathology)
PMIX_DEFINE_ERROR(ConcavityViolation, ErrorClass::pathology)
PMIX_DEFINE_ERROR(PathologicalTarget, ErrorClass::pathology)
PMIX_DEFINE_ERROR(KernelInconsistency, ErrorClass::pathology)
PMIX_DEFINE_ERROR(EnvelopeDegenerate, ErrorClass::pathology)
PMIX_DEFINE_ERROR(NonCoalescence, ErrorClass::pathology)

#undef PMIX_DEFINE_ERROR

}  // namespace pmix
