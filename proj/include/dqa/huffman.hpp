#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dqa/errors.hpp"

namespace dqa {

// Frequency counts of the 2^m shifting-error symbols of one layer.
struct SymbolHistogram {
  int m = 0;
  std::vector<std::uint64_t> counts;  // size 2^m

  std::uint64_t total() const;
  int present_symbols() const;
};

SymbolHistogram build_histogram(std::span<const std::uint8_t> symbols, int m);

// Canonical prefix code over the m-bit symbol alphabet. Codes are assigned
// by (length, symbol value), so the table round-trips through code lengths
// alone. length 0 means the symbol has no code.
struct HuffmanTable {
  int m = 0;
  std::vector<std::uint8_t> code_lengths;  // size 2^m
  std::vector<std::uint64_t> codes;        // canonical bit patterns, LSB-aligned

  int max_length() const;
  bool operator==(const HuffmanTable&) const = default;
};

// Optimal prefix code for the histogram. Symbols with zero count receive no
// code; a single-symbol alphabet gets code length 1 so streams stay
// self-delimiting by count. Tree ties break toward the smaller symbol value.
HuffmanTable build_table(const SymbolHistogram& hist);

// Static-mode variant: every symbol is codeable. Zero-count symbols share an
// escape subtree of prefix length p (the Huffman length of a weight-1 escape
// pseudo-symbol) and are assigned canonical codes of length p + m.
HuffmanTable build_static_table(const SymbolHistogram& hist);

struct EncodedStream {
  std::uint32_t symbol_count = 0;
  std::uint32_t bit_count = 0;
  std::vector<std::uint8_t> bytes;  // MSB-first, zero-padded to a byte

  bool operator==(const EncodedStream&) const = default;
};

// Throws UncodedSymbol if a symbol has no code in the table.
EncodedStream encode(std::span<const std::uint8_t> symbols, const HuffmanTable& table);

// Exact inverse of encode for streams produced with the same table. Throws
// TruncatedStream when bits run out early, InvalidCode when a bit pattern
// matches no code.
std::vector<std::uint8_t> decode(const EncodedStream& stream, const HuffmanTable& table);

// Size_of_Original_Shifting_Errors / Size_of_Huffman_Code. raw_bits is
// symbol_count * m; the denominator optionally counts the serialized table.
double compression_ratio(std::uint64_t raw_bits, const EncodedStream& stream,
                         std::uint64_t table_bits, bool include_table);

// Shannon entropy of the histogram in bits per symbol.
double entropy_bits(const SymbolHistogram& hist);

// Mean code length in bits per symbol under the histogram's weights.
double average_code_length(const HuffmanTable& table, const SymbolHistogram& hist);

// Serialized table size in bits: [m: 1 byte][code_lengths: 2^m bytes].
std::uint64_t table_bits(const HuffmanTable& table);

// Wire formats. Table: [m: 1 byte][code_lengths: 2^m bytes]. Stream:
// [symbol_count: u32 LE][bit_count: u32 LE][payload bytes].
void serialize_table(const HuffmanTable& table, std::vector<std::uint8_t>& out);
HuffmanTable deserialize_table(std::span<const std::uint8_t> bytes, std::size_t& pos);
void serialize_stream(const EncodedStream& stream, std::vector<std::uint8_t>& out);
EncodedStream deserialize_stream(std::span<const std::uint8_t> bytes, std::size_t& pos);

}  // namespace dqa
