#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prockd {

enum class Errc {
  ShapeMismatch,
  AxisOutOfRange,
  LabelOutOfRange,
  NotScalar,
  DetachedFromTape,
  NonFinite,
  IndexOutOfRange,
  GridMismatch,
  HeadMismatch,
  InvalidDepths,
  InvalidSpec,
  InvalidConfig,
  ChecksumMismatch,
  VersionUnsupported,
  FormatError,
  IoError,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

}  // namespace prockd
