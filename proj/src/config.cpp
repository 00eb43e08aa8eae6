#include "dqa/config.hpp"

namespace dqa {

std::string to_string(HuffmanMode mode) {
  return mode == HuffmanMode::kDynamic ? "dynamic" : "static";
}

HuffmanMode huffman_mode_from_string(const std::string& name) {
  if (name == "dynamic") return HuffmanMode::kDynamic;
  if (name == "static") return HuffmanMode::kStatic;
  throw OutOfRange("unknown huffman mode '" + name + "'");
}

void QuantConfig::validate() const {
  if (target_bits < 1 || target_bits > 8)
    throw OutOfRange("target_bits must be in [1, 8], got " + std::to_string(target_bits));
  if (extra_bits < 0 || extra_bits > target_bits)
    throw OutOfRange("extra_bits must be in [0, target_bits], got " + std::to_string(extra_bits));
  if (!(important_ratio >= 0.0 && important_ratio <= 1.0))
    throw OutOfRange("important_ratio must be in [0, 1], got " + std::to_string(important_ratio));
}

}  // namespace dqa
