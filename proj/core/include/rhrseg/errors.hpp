#pragma once

#include <stdexcept>
#include <string>

namespace rhrseg {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RHRSEG_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

RHRSEG_DEFINE_ERROR(ShapeError);
RHRSEG_DEFINE_ERROR(ChannelMismatch);
RHRSEG_DEFINE_ERROR(NonPositiveOutput);
RHRSEG_DEFINE_ERROR(InvalidConfig);
RHRSEG_DEFINE_ERROR(LayoutError);
RHRSEG_DEFINE_ERROR(AlignmentError);
RHRSEG_DEFINE_ERROR(InvalidPrediction);
RHRSEG_DEFINE_ERROR(NoClassesPresent);
RHRSEG_DEFINE_ERROR(SizeMismatch);
RHRSEG_DEFINE_ERROR(IOError);
RHRSEG_DEFINE_ERROR(CheckpointError);
RHRSEG_DEFINE_ERROR(ConfigError);

#undef RHRSEG_DEFINE_ERROR

}  // namespace rhrseg
