#include "lookalike/binary_io.hpp"

#include <limits>

namespace lookalike {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::OutOfBand: return "OutOfBand";
    case ErrorCode::DegenerateSnippet: return "DegenerateSnippet";
    case ErrorCode::DegenerateWindow: return "DegenerateWindow";
    case ErrorCode::DegenerateCluster: return "DegenerateCluster";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidClustering: return "InvalidClustering";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::NumericalError: return "NumericalError";
    case ErrorCode::IndexError: return "IndexError";
    case ErrorCode::MissingFrequency: return "MissingFrequency";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::IOError: return "IOError";
  }
  return "Unknown";
}

namespace binio {

void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4] = {};
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0) {
    throw Error(ErrorCode::FormatError, std::string("bad magic, expected ") + magic);
  }
}

void write_string(std::ostream& os, const std::string& s, std::size_t length_bytes) {
  switch (length_bytes) {
    case 2:
      if (s.size() > std::numeric_limits<std::uint16_t>::max())
        throw Error(ErrorCode::InvalidConfig, "string too long for u16 length prefix");
      write_le<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
      break;
    case 4: write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size())); break;
    default: throw Error(ErrorCode::InvalidConfig, "unsupported length prefix width");
  }
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, std::size_t length_bytes, std::size_t max_len) {
  std::size_t n = 0;
  switch (length_bytes) {
    case 2: n = read_le<std::uint16_t>(is); break;
    case 4: n = read_le<std::uint32_t>(is); break;
    default: throw Error(ErrorCode::InvalidConfig, "unsupported length prefix width");
  }
  if (n > max_len) throw Error(ErrorCode::FormatError, "string length out of range");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw Error(ErrorCode::FormatError, "unexpected end of file in string");
  return s;
}

}  // namespace binio
}  // namespace lookalike
