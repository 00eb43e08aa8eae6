#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dqa/blob.hpp"
#include "dqa/config.hpp"
#include "dqa/pipeline.hpp"
#include "dqa/quant.hpp"
#include "dqa/ranking.hpp"
#include "dqa/toy_net.hpp"

namespace dqa {

enum class Method { kDirect, kDqa };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct BenchConfig {
  std::vector<int> bits = {3};
  int extra_bits = 3;
  double important_ratio = 0.5;
  HuffmanMode huffman_mode = HuffmanMode::kDynamic;
  std::vector<std::uint64_t> seeds = {1};
  std::vector<Method> methods = {Method::kDirect, Method::kDqa};
  int calib_samples = 256;

  void validate() const;
  QuantConfig quant_config(int n) const;
};

// Quantization statistics of one capture layer over the whole dataset
// (activations concatenated across samples, one scale per layer).
struct LayerStats {
  std::string layer_id;
  ErrorReport error;
  MemoryReport memory;
  SymbolHistogram histogram;  // all-zero counts when no error stream
  double entropy = 0.0;
  std::uint64_t raw_symbol_bits = 0;  // symbol_count * m
  std::uint64_t payload_bits = 0;
  std::uint64_t table_bits = 0;
  double ratio_payload = 1.0;
  double ratio_with_table = 1.0;
};

// Quantizes every capture layer of the dataset-wide activation tensors with
// the given per-layer important sets. In static mode the Huffman tables come
// from the calibration activations instead of the layer's own symbols.
std::vector<LayerStats> quantize_dataset_layers(
    const std::map<std::string, ActivationTensor>& activations,
    const std::map<std::string, std::vector<int>>& important_per_layer, const QuantConfig& config,
    const std::map<std::string, ActivationTensor>* calibration = nullptr);

struct BenchCell {
  Method method = Method::kDirect;
  int n = 0;
  double mean_accuracy = 0.0;
  double mean_abs_error = 0.0;
  double max_abs_error = 0.0;
  double mean_re = 0.0;
  std::int64_t clipped_count = 0;
  double ratio_payload = 1.0;
  double ratio_with_table = 1.0;
  std::int64_t raw_float_bits = 0;
  std::int64_t direct_total_bits = 0;
  std::int64_t dqa_total_bits = 0;
  double overhead_pct = 0.0;
  double compression_vs_float = 0.0;
};

struct HistogramRecord {
  int n = 0;
  std::string layer_id;
  SymbolHistogram histogram;  // summed over seeds
};

struct BenchReport {
  BenchConfig config;
  std::string dataset_id;
  std::vector<BenchCell> cells;        // methods x bits
  std::vector<HistogramRecord> histograms;  // DQA runs only
};

// Per seed: rank (greedy on a seed-chosen calibration subsample unless a
// fixed table is given), then evaluate each method; averages over seeds.
BenchReport run_bench(const ToyModel& model, const ToyDataset& dataset,
                      const std::optional<RankTable>& fixed_rank, const BenchConfig& config);

void write_report_text(const BenchReport& report, std::ostream& out);
// Stable, versioned schema; byte-identical for identical inputs.
void write_report_json(const BenchReport& report, std::ostream& out);

}  // namespace dqa
