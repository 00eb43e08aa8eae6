#pragma once

#include <string>

#include "dqa/errors.hpp"

namespace dqa {

enum class HuffmanMode { kDynamic, kStatic };

std::string to_string(HuffmanMode mode);
HuffmanMode huffman_mode_from_string(const std::string& name);

// Quantization parameters shared across the pipeline. n is the stored bit
// width, m the extra precision used for important channels before the right
// shift brings them back to n bits.
struct QuantConfig {
  int target_bits = 3;
  int extra_bits = 3;
  double important_ratio = 0.5;
  HuffmanMode huffman_mode = HuffmanMode::kDynamic;

  // Throws OutOfRange unless 1 <= n <= 8, 0 <= m <= n and 0 <= ratio <= 1.
  void validate() const;
};

}  // namespace dqa
