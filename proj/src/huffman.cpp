#include "dqa/huffman.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <queue>
#include <tuple>

#include "dqa/bitstream.hpp"

namespace dqa {

namespace {

constexpr int kMaxCodeBits = 57;  // canonical codes are accumulated in 64-bit words

void check_m(int m) {
  if (m < 0 || m > 8) throw OutOfRange("symbol width m out of range: " + std::to_string(m));
}

// Huffman code lengths for the given weights. Ties break toward the node
// containing the smallest symbol value, which pins the tree shape (and thus
// the length multiset) across platforms.
std::vector<std::uint8_t> huffman_lengths(const std::vector<std::pair<int, std::uint64_t>>& weighted,
                                          int alphabet) {
  std::vector<std::uint8_t> lengths(static_cast<std::size_t>(alphabet), 0);
  if (weighted.empty()) return lengths;
  if (weighted.size() == 1) {
    lengths[static_cast<std::size_t>(weighted[0].first)] = 1;
    return lengths;
  }

  struct Node {
    std::uint64_t weight;
    int min_symbol;
    int left = -1, right = -1;
    int symbol = -1;
  };
  std::vector<Node> nodes;
  nodes.reserve(weighted.size() * 2);
  using Key = std::tuple<std::uint64_t, int, int>;  // (weight, min symbol, node id)
  std::priority_queue<Key, std::vector<Key>, std::greater<Key>> heap;
  for (const auto& [sym, w] : weighted) {
    nodes.push_back({w, sym, -1, -1, sym});
    heap.emplace(w, sym, static_cast<int>(nodes.size()) - 1);
  }
  while (heap.size() > 1) {
    auto [wa, sa, a] = heap.top();
    heap.pop();
    auto [wb, sb, b] = heap.top();
    heap.pop();
    nodes.push_back({wa + wb, std::min(sa, sb), a, b});
    heap.emplace(wa + wb, std::min(sa, sb), static_cast<int>(nodes.size()) - 1);
  }

  // Depth-first depth assignment, iterative to keep pathological trees safe.
  std::vector<std::pair<int, int>> stack{{std::get<2>(heap.top()), 0}};
  while (!stack.empty()) {
    auto [id, depth] = stack.back();
    stack.pop_back();
    const Node& node = nodes[static_cast<std::size_t>(id)];
    if (node.symbol >= 0) {
      if (depth > kMaxCodeBits) throw Error("huffman code length overflow");
      lengths[static_cast<std::size_t>(node.symbol)] = static_cast<std::uint8_t>(depth);
    } else {
      stack.emplace_back(node.left, depth + 1);
      stack.emplace_back(node.right, depth + 1);
    }
  }
  return lengths;
}

// Canonical assignment by (length, symbol). Valid for any Kraft-feasible
// length multiset, not only full Huffman trees.
HuffmanTable canonicalize(int m, std::vector<std::uint8_t> lengths) {
  HuffmanTable table;
  table.m = m;
  table.code_lengths = std::move(lengths);
  table.codes.assign(table.code_lengths.size(), 0);

  std::vector<int> order;
  for (int s = 0; s < static_cast<int>(table.code_lengths.size()); ++s)
    if (table.code_lengths[static_cast<std::size_t>(s)] > 0) order.push_back(s);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto la = table.code_lengths[static_cast<std::size_t>(a)];
    const auto lb = table.code_lengths[static_cast<std::size_t>(b)];
    return std::tie(la, a) < std::tie(lb, b);
  });

  std::uint64_t code = 0;
  int prev_len = 0;
  for (int s : order) {
    const int len = table.code_lengths[static_cast<std::size_t>(s)];
    code <<= (len - prev_len);
    table.codes[static_cast<std::size_t>(s)] = code;
    ++code;
    prev_len = len;
  }
  return table;
}

struct CanonicalDecoder {
  int max_len = 0;
  // Per length: first canonical code, index of its first symbol, symbol count.
  std::vector<std::uint64_t> first_code;
  std::vector<int> first_index;
  std::vector<int> count;
  std::vector<int> symbols;  // sorted by (length, symbol)

  explicit CanonicalDecoder(const HuffmanTable& table) {
    max_len = table.max_length();
    first_code.assign(static_cast<std::size_t>(max_len) + 1, 0);
    first_index.assign(static_cast<std::size_t>(max_len) + 1, 0);
    count.assign(static_cast<std::size_t>(max_len) + 1, 0);
    for (int s = 0; s < static_cast<int>(table.code_lengths.size()); ++s) {
      const int len = table.code_lengths[static_cast<std::size_t>(s)];
      if (len > 0) ++count[static_cast<std::size_t>(len)];
    }
    int index = 0;
    std::uint64_t code = 0;
    for (int len = 1; len <= max_len; ++len) {
      code <<= 1;
      first_code[static_cast<std::size_t>(len)] = code;
      first_index[static_cast<std::size_t>(len)] = index;
      code += static_cast<std::uint64_t>(count[static_cast<std::size_t>(len)]);
      index += count[static_cast<std::size_t>(len)];
    }
    symbols.reserve(static_cast<std::size_t>(index));
    for (int len = 1; len <= max_len; ++len)
      for (int s = 0; s < static_cast<int>(table.code_lengths.size()); ++s)
        if (table.code_lengths[static_cast<std::size_t>(s)] == len) symbols.push_back(s);
  }

  std::uint8_t next(BitReader& reader) const {
    std::uint64_t acc = 0;
    for (int len = 1; len <= max_len; ++len) {
      acc = (acc << 1) | (reader.get_bit() ? 1u : 0u);
      const int n = count[static_cast<std::size_t>(len)];
      if (n > 0 && acc >= first_code[static_cast<std::size_t>(len)] &&
          acc < first_code[static_cast<std::size_t>(len)] + static_cast<std::uint64_t>(n)) {
        const auto offset = acc - first_code[static_cast<std::size_t>(len)];
        return static_cast<std::uint8_t>(
            symbols[static_cast<std::size_t>(first_index[static_cast<std::size_t>(len)]) +
                    offset]);
      }
    }
    throw InvalidCode("bit pattern matches no code");
  }
};

void put_u32_le(std::uint32_t v, std::vector<std::uint8_t>& out) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos + 4 > bytes.size()) throw Truncated("stream header truncated");
  const std::uint32_t v = static_cast<std::uint32_t>(bytes[pos]) |
                          (static_cast<std::uint32_t>(bytes[pos + 1]) << 8) |
                          (static_cast<std::uint32_t>(bytes[pos + 2]) << 16) |
                          (static_cast<std::uint32_t>(bytes[pos + 3]) << 24);
  pos += 4;
  return v;
}

}  // namespace

std::uint64_t SymbolHistogram::total() const {
  std::uint64_t sum = 0;
  for (auto c : counts) sum += c;
  return sum;
}

int SymbolHistogram::present_symbols() const {
  int n = 0;
  for (auto c : counts)
    if (c > 0) ++n;
  return n;
}

SymbolHistogram build_histogram(std::span<const std::uint8_t> symbols, int m) {
  check_m(m);
  SymbolHistogram hist;
  hist.m = m;
  hist.counts.assign(std::size_t{1} << m, 0);
  for (auto s : symbols) {
    if (s >= hist.counts.size())
      throw SymbolOutOfRange("symbol " + std::to_string(int(s)) + " needs more than " +
                             std::to_string(m) + " bits");
    ++hist.counts[s];
  }
  return hist;
}

int HuffmanTable::max_length() const {
  int len = 0;
  for (auto l : code_lengths) len = std::max(len, static_cast<int>(l));
  return len;
}

HuffmanTable build_table(const SymbolHistogram& hist) {
  check_m(hist.m);
  std::vector<std::pair<int, std::uint64_t>> weighted;
  for (int s = 0; s < static_cast<int>(hist.counts.size()); ++s)
    if (hist.counts[static_cast<std::size_t>(s)] > 0)
      weighted.emplace_back(s, hist.counts[static_cast<std::size_t>(s)]);
  if (weighted.empty()) throw EmptyHistogram("cannot build a code from zero symbols");
  return canonicalize(hist.m, huffman_lengths(weighted, static_cast<int>(hist.counts.size())));
}

HuffmanTable build_static_table(const SymbolHistogram& hist) {
  check_m(hist.m);
  const int alphabet = static_cast<int>(hist.counts.size());
  std::vector<std::pair<int, std::uint64_t>> weighted;
  std::vector<int> absent;
  for (int s = 0; s < alphabet; ++s) {
    if (hist.counts[static_cast<std::size_t>(s)] > 0)
      weighted.emplace_back(s, hist.counts[static_cast<std::size_t>(s)]);
    else
      absent.push_back(s);
  }
  if (weighted.empty()) throw EmptyHistogram("cannot build a code from zero symbols");
  if (absent.empty()) return canonicalize(hist.m, huffman_lengths(weighted, alphabet));

  // Escape pseudo-symbol at index `alphabet`, weight 1. Its prefix slot of
  // length p is replaced by the absent symbols at length p + m; Kraft holds
  // because fewer than 2^m symbols can be absent.
  weighted.emplace_back(alphabet, 1);
  auto lengths = huffman_lengths(weighted, alphabet + 1);
  const int escape_len = lengths[static_cast<std::size_t>(alphabet)];
  lengths.resize(static_cast<std::size_t>(alphabet));
  if (escape_len + hist.m > kMaxCodeBits) throw Error("huffman code length overflow");
  for (int s : absent)
    lengths[static_cast<std::size_t>(s)] = static_cast<std::uint8_t>(escape_len + hist.m);
  return canonicalize(hist.m, std::move(lengths));
}

EncodedStream encode(std::span<const std::uint8_t> symbols, const HuffmanTable& table) {
  BitWriter writer;
  for (auto s : symbols) {
    if (s >= table.code_lengths.size() || table.code_lengths[s] == 0)
      throw UncodedSymbol("symbol " + std::to_string(int(s)) + " has no code");
    writer.put_bits(table.codes[s], table.code_lengths[s]);
  }
  EncodedStream stream;
  stream.symbol_count = static_cast<std::uint32_t>(symbols.size());
  stream.bit_count = static_cast<std::uint32_t>(writer.bit_count());
  stream.bytes = writer.take();
  return stream;
}

std::vector<std::uint8_t> decode(const EncodedStream& stream, const HuffmanTable& table) {
  std::vector<std::uint8_t> symbols;
  symbols.reserve(stream.symbol_count);
  if (stream.symbol_count == 0) return symbols;
  if (table.max_length() == 0) throw InvalidCode("table has no codes");
  CanonicalDecoder decoder(table);
  BitReader reader(stream.bytes, stream.bit_count);
  for (std::uint32_t i = 0; i < stream.symbol_count; ++i) symbols.push_back(decoder.next(reader));
  return symbols;
}

double compression_ratio(std::uint64_t raw_bits, const EncodedStream& stream,
                         std::uint64_t table_bits, bool include_table) {
  const std::uint64_t coded = stream.bit_count + (include_table ? table_bits : 0);
  if (coded == 0) return 1.0;
  return static_cast<double>(raw_bits) / static_cast<double>(coded);
}

double entropy_bits(const SymbolHistogram& hist) {
  const std::uint64_t total = hist.total();
  if (total == 0) return 0.0;
  double h = 0.0;
  for (auto c : hist.counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

double average_code_length(const HuffmanTable& table, const SymbolHistogram& hist) {
  const std::uint64_t total = hist.total();
  if (total == 0) return 0.0;
  double bits = 0.0;
  for (std::size_t s = 0; s < hist.counts.size(); ++s)
    bits += static_cast<double>(hist.counts[s]) * table.code_lengths[s];
  return bits / static_cast<double>(total);
}

std::uint64_t table_bits(const HuffmanTable& table) {
  return 8ull * (1 + table.code_lengths.size());
}

void serialize_table(const HuffmanTable& table, std::vector<std::uint8_t>& out) {
  out.push_back(static_cast<std::uint8_t>(table.m));
  out.insert(out.end(), table.code_lengths.begin(), table.code_lengths.end());
}

HuffmanTable deserialize_table(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (pos >= bytes.size()) throw Truncated("table header truncated");
  const int m = bytes[pos++];
  check_m(m);
  const std::size_t n = std::size_t{1} << m;
  if (pos + n > bytes.size()) throw Truncated("table lengths truncated");
  std::vector<std::uint8_t> lengths(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  pos += n;
  // Reject infeasible length sets up front so decode cannot misbehave later.
  double kraft = 0.0;
  for (auto l : lengths) {
    if (l > kMaxCodeBits) throw FormatError("code length out of range");
    if (l > 0) kraft += std::ldexp(1.0, -static_cast<int>(l));
  }
  if (kraft > 1.0 + 1e-12) throw FormatError("code lengths violate Kraft inequality");
  return canonicalize(m, std::move(lengths));
}

void serialize_stream(const EncodedStream& stream, std::vector<std::uint8_t>& out) {
  put_u32_le(stream.symbol_count, out);
  put_u32_le(stream.bit_count, out);
  out.insert(out.end(), stream.bytes.begin(), stream.bytes.end());
}

EncodedStream deserialize_stream(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  EncodedStream stream;
  stream.symbol_count = get_u32_le(bytes, pos);
  stream.bit_count = get_u32_le(bytes, pos);
  const std::size_t nbytes = (static_cast<std::size_t>(stream.bit_count) + 7) / 8;
  if (pos + nbytes > bytes.size()) throw Truncated("stream payload truncated");
  stream.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + nbytes));
  pos += nbytes;
  return stream;
}

}  // namespace dqa
