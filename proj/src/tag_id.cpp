#include <openssl/sha.h>

#include "dendrite/error.hpp"
#include "dendrite/graph_extract.hpp"

namespace dendrite {

std::string TagId::hex() const {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (auto b : bytes) {
    out += digits[b >> 4];
    out += digits[b & 15];
  }
  return out;
}

TagId TagId::from_hex(const std::string& hex) {
  if (hex.size() != 64) throw Error(ErrorCode::bad_request, "tag id must be 64 hex digits");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(ErrorCode::bad_request, "tag id is not hexadecimal");
  };
  TagId id;
  for (std::size_t i = 0; i < 32; ++i) {
    id.bytes[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  }
  return id;
}

TagId canonical_id(const KeyPointGraph& graph) {
  const std::string text = canonical_serialization(graph);
  TagId id;
  SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), id.bytes.data());
  return id;
}

}  // namespace dendrite
