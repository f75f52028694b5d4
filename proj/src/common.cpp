#include "mtrc/common.hpp"

#include <cstdio>

namespace mtrc {

std::string to_hex(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace mtrc
