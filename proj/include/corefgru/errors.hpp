#pragma once

#include <stdexcept>
#include <string>

namespace corefgru {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define COREFGRU_DEFINE_ERROR(Name)    \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

COREFGRU_DEFINE_ERROR(InvalidShape);
COREFGRU_DEFINE_ERROR(NonFinite);
COREFGRU_DEFINE_ERROR(UnsupportedOp);
COREFGRU_DEFINE_ERROR(NonDeterministic);
COREFGRU_DEFINE_ERROR(OverlapError);
COREFGRU_DEFINE_ERROR(RangeError);
COREFGRU_DEFINE_ERROR(OrderViolation);
COREFGRU_DEFINE_ERROR(MissingMention);
COREFGRU_DEFINE_ERROR(LabelError);
COREFGRU_DEFINE_ERROR(SpecError);
COREFGRU_DEFINE_ERROR(DivergenceError);
COREFGRU_DEFINE_ERROR(IncompatibleCheckpoint);
COREFGRU_DEFINE_ERROR(VersionError);
COREFGRU_DEFINE_ERROR(CorruptCheckpoint);
COREFGRU_DEFINE_ERROR(ParseError);

#undef COREFGRU_DEFINE_ERROR

}  // namespace corefgru
