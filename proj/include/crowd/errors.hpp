#pragma once

#include <stdexcept>
#include <string>

namespace crowd {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define CROWD_DEFINE_ERROR(Name)                                        \
  struct Name : Error {                                                 \
    explicit Name(const std::string& msg) : Error(#Name ": " + msg) {} \
  }

CROWD_DEFINE_ERROR(ShapeMismatch);
CROWD_DEFINE_ERROR(NonScalarOutput);
CROWD_DEFINE_ERROR(NonFiniteValue);
CROWD_DEFINE_ERROR(BadSize);
CROWD_DEFINE_ERROR(BadRatio);
CROWD_DEFINE_ERROR(GridTooSmall);
CROWD_DEFINE_ERROR(MissingP5);
CROWD_DEFINE_ERROR(PointOutOfBounds);
CROWD_DEFINE_ERROR(NoPositives);
CROWD_DEFINE_ERROR(NoNegatives);
CROWD_DEFINE_ERROR(LengthMismatch);
CROWD_DEFINE_ERROR(EmptyInput);
CROWD_DEFINE_ERROR(IoError);
CROWD_DEFINE_ERROR(FormatError);
CROWD_DEFINE_ERROR(ManifestMismatch);
CROWD_DEFINE_ERROR(UnknownAxis);
CROWD_DEFINE_ERROR(ConfigError);

#undef CROWD_DEFINE_ERROR

}  // namespace crowd
