#include "dqa/quant.hpp"

#include <algorithm>
#include <limits>

namespace dqa {

namespace {

// Sorted, deduplicated copy of the important set, range-checked against the
// layer's channel count.
std::vector<int> normalize_important(std::span<const int> important, int channel_count) {
  std::vector<int> set(important.begin(), important.end());
  std::sort(set.begin(), set.end());
  set.erase(std::unique(set.begin(), set.end()), set.end());
  if (!set.empty() && (set.front() < 0 || set.back() >= channel_count))
    throw OutOfRange("important channel index out of range");
  return set;
}

}  // namespace

ScaleParams scale_from_absmax(float abs_max, int n, int m) {
  ScaleParams scale;
  scale.abs_max = abs_max;
  if (abs_max == 0.0f) return scale;
  scale.delta_n = abs_max / static_cast<float>(std::int64_t{1} << (n - 1));
  scale.delta_nm = abs_max / static_cast<float>(std::int64_t{1} << (n + m - 1));
  return scale;
}

ScaleParams compute_scale(const ActivationTensor& tensor, int n, int m) {
  tensor.validate();
  const float abs_max = tensor.values.cwiseAbs().maxCoeff();
  if (abs_max == 0.0f) throw AllZeroLayer("layer '" + tensor.layer_id + "' is all zero");
  return scale_from_absmax(abs_max, n, m);
}

ErrorLookupTable make_error_table(int m) {
  if (m < 0 || m > 8) throw OutOfRange("extra bits m out of range: " + std::to_string(m));
  ErrorLookupTable table;
  table.m = m;
  table.entries.resize(std::int64_t{1} << m);
  const float step = 1.0f / static_cast<float>(std::int64_t{1} << m);
  for (Eigen::Index k = 0; k < table.entries.size(); ++k)
    table.entries(k) = static_cast<float>(k) * step;
  return table;
}

float lookup_error(const ErrorLookupTable& table, std::uint32_t low_bits) {
  if (low_bits >= static_cast<std::uint32_t>(table.entries.size()))
    throw OutOfRange("low bits " + std::to_string(low_bits) + " exceed table for m=" +
                     std::to_string(table.m));
  return table.entries(static_cast<Eigen::Index>(low_bits));
}

bool QuantizedLayer::is_important(int channel) const {
  return std::binary_search(important_set.begin(), important_set.end(), channel);
}

ShiftErrorEncoder dynamic_huffman_encoder() {
  return [](std::span<const std::uint8_t> symbols, int m) {
    HuffmanTable table = build_table(build_histogram(symbols, m));
    EncodedStream stream = encode(symbols, table);
    return std::make_pair(std::move(table), std::move(stream));
  };
}

ShiftErrorEncoder static_huffman_encoder(HuffmanTable calibration_table) {
  return [table = std::move(calibration_table)](std::span<const std::uint8_t> symbols, int m) {
    if (table.m != m) throw OutOfRange("static table built for different m");
    return std::make_pair(table, encode(symbols, table));
  };
}

ShiftErrorDecoder huffman_decoder() {
  return [](const EncodedStream& stream, const HuffmanTable& table) {
    return decode(stream, table);
  };
}

QuantizedLayer dqa_quantize_layer(const ActivationTensor& tensor, const QuantConfig& config,
                                  std::span<const int> important,
                                  const ShiftErrorEncoder& encoder) {
  config.validate();
  tensor.validate();
  const int n = config.target_bits;
  const int m = config.extra_bits;
  const int channels = tensor.channel_count();
  const int len = tensor.channel_len();

  QuantizedLayer q;
  q.layer_id = tensor.layer_id;
  q.n = n;
  q.m = m;
  q.important_set = normalize_important(important, channels);
  q.values.setZero(len, channels);

  const bool shifted_path = m > 0 && !q.important_set.empty();
  const float abs_max = tensor.values.cwiseAbs().maxCoeff();
  std::vector<std::uint8_t> symbols;
  if (shifted_path) symbols.reserve(static_cast<std::size_t>(q.important_set.size()) * len);

  if (abs_max == 0.0f) {
    // All-zero sentinel: keep zeros, delta stays 0, skip the arithmetic. The
    // error stream still carries the (all-zero) symbols so the layer shape
    // is indistinguishable from the regular path.
    if (shifted_path) symbols.assign(static_cast<std::size_t>(q.important_set.size()) * len, 0);
  } else {
    q.scale = scale_from_absmax(abs_max, n, m);
    const std::int32_t lo_nm = signed_min(n + m);
    const std::int32_t hi_nm = signed_max(n + m);
    for (int c = 0; c < channels; ++c) {
      if (shifted_path && q.is_important(c)) {
        for (int i = 0; i < len; ++i) {
          const std::int32_t a_more = std::clamp(
              round_half_away(tensor.values(i, c) / q.scale.delta_nm), lo_nm, hi_nm);
          const ShiftResult shift = shift_right_with_error(a_more, m);
          q.values(i, c) = shift.shifted;
          symbols.push_back(static_cast<std::uint8_t>(shift.low_bits));
        }
      } else {
        q.values.col(c) = direct_quantize(tensor.values.col(c), q.scale.delta_n, n);
      }
    }
  }

  if (shifted_path) {
    auto [table, stream] = encoder(symbols, m);
    q.huffman_table = std::move(table);
    q.error_stream = std::move(stream);
  }
  return q;
}

QuantizedLayer dqa_quantize_layer(const ActivationTensor& tensor, const QuantConfig& config,
                                  std::span<const int> important) {
  return dqa_quantize_layer(tensor, config, important, dynamic_huffman_encoder());
}

ActivationTensor dqa_dequantize_layer(const QuantizedLayer& q, const ShiftErrorDecoder& decoder) {
  const int channels = q.channel_count();
  const int len = q.channel_len();
  ActivationTensor out;
  out.layer_id = q.layer_id;
  out.values.resize(len, channels);

  std::vector<std::uint8_t> symbols;
  if (q.has_error_section()) {
    symbols = decoder(*q.error_stream, *q.huffman_table);
    if (symbols.size() != q.important_set.size() * static_cast<std::size_t>(len))
      throw CorruptStream("decoded " + std::to_string(symbols.size()) + " symbols, expected " +
                          std::to_string(q.important_set.size() * static_cast<std::size_t>(len)));
  }

  const ErrorLookupTable error_table = make_error_table(q.m);
  std::size_t next_symbol = 0;
  for (int c = 0; c < channels; ++c) {
    if (q.has_error_section() && q.is_important(c)) {
      for (int i = 0; i < len; ++i) {
        const float se = lookup_error(error_table, symbols[next_symbol++]);
        out.values(i, c) = q.scale.delta_n * (static_cast<float>(q.values(i, c)) + se);
      }
    } else {
      out.values.col(c) = direct_dequantize(q.values.col(c), q.scale.delta_n);
    }
  }
  return out;
}

ActivationTensor dqa_dequantize_layer(const QuantizedLayer& q) {
  return dqa_dequantize_layer(q, huffman_decoder());
}

ErrorReport measure_quant_error(const ActivationTensor& original,
                                const ActivationTensor& reconstructed, const QuantizedLayer& q) {
  if (original.values.rows() != reconstructed.values.rows() ||
      original.values.cols() != reconstructed.values.cols() ||
      original.values.rows() != q.values.rows() || original.values.cols() != q.values.cols())
    throw ShapeMismatch("error report inputs disagree on shape");

  ErrorReport report;
  report.value_count = original.values.size();
  if (report.value_count == 0) return report;

  double abs_sum = 0.0, re_sum = 0.0;
  std::int64_t re_count = 0;
  for (int c = 0; c < original.channel_count(); ++c) {
    const bool shifted = q.m > 0 && q.is_important(c);
    const float step = shifted ? q.scale.delta_nm : q.scale.delta_n;
    const std::int32_t hi = signed_max(shifted ? q.n + q.m : q.n);
    const std::int32_t lo = signed_min(shifted ? q.n + q.m : q.n);
    for (int i = 0; i < original.channel_len(); ++i) {
      const double err = std::abs(static_cast<double>(original.values(i, c)) -
                                  static_cast<double>(reconstructed.values(i, c)));
      abs_sum += err;
      report.max_abs_error = std::max(report.max_abs_error, err);
      if (step == 0.0f) continue;  // all-zero sentinel layer, nothing rounds
      const std::int32_t r = round_half_away(original.values(i, c) / step);
      if (r > hi || r < lo) {
        ++report.clipped_count;
      } else {
        re_sum += err / step;
        ++re_count;
      }
    }
  }
  report.mean_abs_error = abs_sum / static_cast<double>(report.value_count);
  report.mean_re = re_count > 0 ? re_sum / static_cast<double>(re_count) : 0.0;
  return report;
}

}  // namespace dqa
