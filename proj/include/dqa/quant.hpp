#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dqa/config.hpp"
#include "dqa/errors.hpp"
#include "dqa/huffman.hpp"
#include "dqa/tensor.hpp"

namespace dqa {

using MatrixXi32 = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;
using VectorXi32 = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 1>;

// Quantization steps of one layer, both derived from the same |max| so that
// delta_n == delta_nm * 2^m holds exactly (powers of two are exact in binary
// floating point). abs_max == 0 marks the all-zero sentinel layer.
struct ScaleParams {
  float abs_max = 0.0f;
  float delta_n = 0.0f;
  float delta_nm = 0.0f;
};

ScaleParams scale_from_absmax(float abs_max, int n, int m);

// delta_N = |max| / 2^{N-1} for N = n and N = n+m. Throws AllZeroLayer when
// the layer's |max| is zero; callers store zeros and skip the arithmetic.
ScaleParams compute_scale(const ActivationTensor& tensor, int n, int m);

inline std::int32_t signed_min(int bits) { return -(std::int32_t{1} << (bits - 1)); }
inline std::int32_t signed_max(int bits) { return (std::int32_t{1} << (bits - 1)) - 1; }

// Round(x) with halfway cases away from zero.
inline std::int32_t round_half_away(float x) {
  return static_cast<std::int32_t>(std::lroundf(x));
}

// clamp(round(v / delta_n)) into the n-bit signed range, elementwise.
template <typename Derived>
VectorXi32 direct_quantize(const Eigen::DenseBase<Derived>& channel,
                           typename Derived::Scalar delta_n, int n) {
  const std::int32_t lo = signed_min(n);
  const std::int32_t hi = signed_max(n);
  VectorXi32 q(channel.size());
  for (Eigen::Index i = 0; i < channel.size(); ++i) {
    const std::int32_t r = round_half_away(static_cast<float>(channel(i) / delta_n));
    q(i) = std::clamp(r, lo, hi);
  }
  return q;
}

template <typename Derived>
Eigen::VectorXf direct_dequantize(const Eigen::DenseBase<Derived>& q, float delta_n) {
  return q.derived().template cast<float>() * delta_n;
}

// Right shift of an (n+m)-bit integer by m with exact low-bit extraction:
// shifted * 2^m + low_bits == a_more for both signs (floor semantics).
struct ShiftResult {
  std::int32_t shifted = 0;
  std::uint32_t low_bits = 0;
};

constexpr ShiftResult shift_right_with_error(std::int32_t a_more, int m) {
  const std::int32_t shifted = a_more >> m;  // arithmetic shift == floor division
  const std::uint32_t low = static_cast<std::uint32_t>(a_more - (shifted << m));
  return {shifted, low};
}

// Pre-computed map from the m low bits to the fractional shifting error, in
// units of delta_n: entry[k] = k / 2^m.
struct ErrorLookupTable {
  int m = 0;
  Eigen::VectorXf entries;  // 2^m values
};

ErrorLookupTable make_error_table(int m);

// Throws OutOfRange when low_bits >= 2^m.
float lookup_error(const ErrorLookupTable& table, std::uint32_t low_bits);

// Packed result of quantizing one layer. Every stored value fits n signed
// bits regardless of importance; the shifting errors of important channels
// live in the Huffman stream, channel order then element order.
struct QuantizedLayer {
  std::string layer_id;
  int n = 0;
  int m = 0;
  ScaleParams scale;
  std::vector<int> important_set;  // sorted ascending
  MatrixXi32 values;               // channel_len x channel_count
  std::optional<HuffmanTable> huffman_table;
  std::optional<EncodedStream> error_stream;

  int channel_count() const { return static_cast<int>(values.cols()); }
  int channel_len() const { return static_cast<int>(values.rows()); }
  bool is_important(int channel) const;
  bool has_error_section() const { return error_stream.has_value(); }
};

// Pluggable entropy coder so the quantizer does not hard-wire a codec.
using ShiftErrorEncoder = std::function<std::pair<HuffmanTable, EncodedStream>(
    std::span<const std::uint8_t> symbols, int m)>;
using ShiftErrorDecoder = std::function<std::vector<std::uint8_t>(
    const EncodedStream& stream, const HuffmanTable& table)>;

// Default coders backed by huffman.hpp. The dynamic encoder builds the table
// from the symbols at hand; the static encoder reuses a calibration table.
ShiftErrorEncoder dynamic_huffman_encoder();
ShiftErrorEncoder static_huffman_encoder(HuffmanTable calibration_table);
ShiftErrorDecoder huffman_decoder();

// Important channels are quantized at n+m bits and right-shifted back to n,
// their shifting errors Huffman-encoded; the rest take the direct path at n
// bits. m == 0 degenerates to the direct path for every channel.
QuantizedLayer dqa_quantize_layer(const ActivationTensor& tensor, const QuantConfig& config,
                                  std::span<const int> important,
                                  const ShiftErrorEncoder& encoder);

// Convenience overload using the dynamic Huffman encoder.
QuantizedLayer dqa_quantize_layer(const ActivationTensor& tensor, const QuantConfig& config,
                                  std::span<const int> important);

// delta_n * (value + se) for important channels, delta_n * value otherwise.
// Throws CorruptStream when the decoded symbol count does not match.
ActivationTensor dqa_dequantize_layer(const QuantizedLayer& q, const ShiftErrorDecoder& decoder);
ActivationTensor dqa_dequantize_layer(const QuantizedLayer& q);

// Error statistics of a quantize/de-quantize round trip. The re statistic is
// |orig - recon| in units of the step actually used per channel (delta_nm for
// important channels, delta_n otherwise), averaged over non-clipped values;
// clipping is outside Eq. 2's model so clipped values are counted separately.
struct ErrorReport {
  double mean_abs_error = 0.0;
  double max_abs_error = 0.0;
  double mean_re = 0.0;
  std::int64_t value_count = 0;
  std::int64_t clipped_count = 0;
};

ErrorReport measure_quant_error(const ActivationTensor& original,
                                const ActivationTensor& reconstructed,
                                const QuantizedLayer& q);

}  // namespace dqa
