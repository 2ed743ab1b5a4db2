#pragma once

#include <cstdint>
#include <vector>

#include "flavars/common.hpp"

namespace flavars {

// Special token ids, fixed across every vocabulary.
namespace tok {
constexpr int kPad = 0;
constexpr int kUnk = 1;
constexpr int kCls = 2;
constexpr int kSep = 3;
constexpr int kMask = 4;
constexpr int kNumSpecials = 5;
}  // namespace tok

// Fixed-length token buffer. pad[i] is true at padding positions; padding
// always forms a suffix.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> pad;

  std::size_t size() const { return ids.size(); }

  void validate(int vocab_size) const {
    if (ids.size() != pad.size()) throw DataError("TokenSequence: length mismatch");
    bool seen_pad = false;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= vocab_size)
        throw DataError("TokenSequence: id out of vocabulary range");
      if (pad[i]) seen_pad = true;
      else if (seen_pad) throw DataError("TokenSequence: pad positions must form a suffix");
    }
  }
};

}  // namespace flavars
