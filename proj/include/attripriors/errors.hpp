#pragma once

#include <stdexcept>
#include <string>

namespace attripriors {

// Base of every exception thrown by the library. Each subclass corresponds to
// one failure category so callers (and the CLI exit-code mapping) can
// dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ATTRIPRIORS_DEFINE_ERROR(Name)          \
  class Name : public Error {                   \
   public:                                      \
    explicit Name(const std::string& what)      \
        : Error(#Name ": " + what) {}           \
  }

ATTRIPRIORS_DEFINE_ERROR(NonFiniteValue);
ATTRIPRIORS_DEFINE_ERROR(InvalidNode);
ATTRIPRIORS_DEFINE_ERROR(InvalidSpec);
ATTRIPRIORS_DEFINE_ERROR(ShapeError);
ATTRIPRIORS_DEFINE_ERROR(LabelError);
ATTRIPRIORS_DEFINE_ERROR(EmptyReferences);
ATTRIPRIORS_DEFINE_ERROR(InvalidK);
ATTRIPRIORS_DEFINE_ERROR(InvalidAttribution);
ATTRIPRIORS_DEFINE_ERROR(FormatError);
ATTRIPRIORS_DEFINE_ERROR(SplitError);
ATTRIPRIORS_DEFINE_ERROR(DivergenceError);
ATTRIPRIORS_DEFINE_ERROR(NotFitted);
ATTRIPRIORS_DEFINE_ERROR(DegenerateLabels);
ATTRIPRIORS_DEFINE_ERROR(DegenerateTarget);
ATTRIPRIORS_DEFINE_ERROR(DegenerateAttribution);
ATTRIPRIORS_DEFINE_ERROR(DegeneratePairs);
ATTRIPRIORS_DEFINE_ERROR(ConfigError);

#undef ATTRIPRIORS_DEFINE_ERROR

}  // namespace attripriors
