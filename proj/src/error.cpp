#include "prockd/error.hpp"

namespace prockd {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::AxisOutOfRange: return "AxisOutOfRange";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::NotScalar: return "NotScalar";
    case Errc::DetachedFromTape: return "DetachedFromTape";
    case Errc::NonFinite: return "NonFinite";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::GridMismatch: return "GridMismatch";
    case Errc::HeadMismatch: return "HeadMismatch";
    case Errc::InvalidDepths: return "InvalidDepths";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::FormatError: return "FormatError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace prockd
