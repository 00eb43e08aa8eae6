#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dqa/config.hpp"
#include "dqa/errors.hpp"

namespace dqa {

// Most important channel recorded per already-ranked layer. Layers whose
// every skip evaluated to zero accuracy have no entry (the search keeps a
// strict "better than zero" bar, so none was selected).
using MostImportantMap = std::map<std::string, int>;

struct LayerInfo {
  std::string layer_id;
  int channel_count = 0;
};

// Pluggable evaluator: accuracy of the model with `skip_channel` of `layer`
// left unquantized, every other channel of that layer quantized, and each
// previous layer quantized with its recorded most-important channel skipped.
// Must be deterministic for fixed inputs.
class RankableModel {
 public:
  virtual ~RankableModel() = default;
  virtual std::vector<LayerInfo> layers() const = 0;  // forward order
  virtual double evaluate(const LayerInfo& layer, int skip_channel,
                          const MostImportantMap& previous) const = 0;
};

// Counts evaluator calls; the greedy search must spend exactly
// sum(channel_count) of them.
class CountingModel : public RankableModel {
 public:
  explicit CountingModel(const RankableModel& inner) : inner_(inner) {}
  std::vector<LayerInfo> layers() const override { return inner_.layers(); }
  double evaluate(const LayerInfo& layer, int skip_channel,
                  const MostImportantMap& previous) const override {
    ++calls_;
    return inner_.evaluate(layer, skip_channel, previous);
  }
  std::int64_t calls() const { return calls_; }

 private:
  const RankableModel& inner_;
  mutable std::int64_t calls_ = 0;
};

struct RankEntry {
  int channel = 0;
  double accuracy = 0.0;
};

struct LayerRank {
  std::string layer_id;
  std::vector<RankEntry> entries;  // sorted by accuracy desc, channel asc
};

struct RankTableMetadata {
  QuantConfig config;
  std::string dataset_id;
  std::uint64_t seed = 0;
  int sample_count = 0;
  std::string created;  // ISO-8601; honors SOURCE_DATE_EPOCH for reproducible files
};

struct RankTable {
  RankTableMetadata metadata;
  std::vector<LayerRank> layers;  // forward order

  const LayerRank* find(const std::string& layer_id) const;
};

// One pass of single-channel skips per layer in forward order, recording the
// accuracy of each skip and feeding the per-layer winner forward. Exactly
// sum(channel_count) evaluator calls. Evaluator exceptions surface as
// EvaluatorFailure with layer/channel context.
RankTable greedy_rank(const RankableModel& model, RankTableMetadata metadata);

// Top round(ratio * channel_count) channels of the layer, returned sorted by
// channel index for the quantizer. Throws UnknownLayer.
std::vector<int> select_important(const RankTable& table, const std::string& layer_id,
                                  double ratio);

// Mean pairwise Jaccard overlap of the selected important sets across runs,
// per layer and overall. Tables must describe the same layer structure.
struct StabilityReport {
  std::vector<std::pair<std::string, double>> per_layer;
  double mean_overlap = 0.0;
};

StabilityReport rank_stability_report(std::span<const RankTable> tables);

// Structured text format, one record per layer, stable field order.
void write_rank_table(const RankTable& table, std::ostream& out);
RankTable read_rank_table(std::istream& in);
void save_rank_table(const RankTable& table, const std::filesystem::path& path);
RankTable load_rank_table(const std::filesystem::path& path);

// ISO-8601 UTC timestamp; SOURCE_DATE_EPOCH overrides the wall clock so
// repeated runs can produce identical files.
std::string reproducible_timestamp();

}  // namespace dqa
