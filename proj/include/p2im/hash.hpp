#pragma once

#include <string>
#include <string_view>

namespace p2im {

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// Incremental SHA-256 over length-prefixed fields, so ("ab","c") and
/// ("a","bc") hash differently.
class FieldHasher {
public:
  FieldHasher();
  ~FieldHasher();
  FieldHasher(const FieldHasher&) = delete;
  FieldHasher& operator=(const FieldHasher&) = delete;

  FieldHasher& add(std::string_view field);
  std::string hex_digest();

private:
  void* ctx_;
};

} // namespace p2im
