#pragma once

#include <map>
#include <string>
#include <vector>

#include "dqa/config.hpp"
#include "dqa/quant.hpp"
#include "dqa/ranking.hpp"
#include "dqa/toy_net.hpp"

namespace dqa {

// Direct method: every channel through an n-bit quantize/de-quantize round
// trip. All-zero activations pass through unchanged (zero sentinel).
QuantHook direct_hook(int n);

// DQA method: the layer's important channels (from the rank table at the
// config ratio) take the n+m shifting path with Huffman-coded errors, the
// rest the direct path. Layers missing from the table raise UnknownLayer.
QuantHook dqa_hook(const QuantConfig& config, const RankTable& table);
QuantHook dqa_hook(const QuantConfig& config,
                   std::map<std::string, std::vector<int>> important_per_layer);

// Adapter exposing a toy model's capture layers to the greedy search. During
// evaluation the layer under test is direct-quantized at n bits with the
// probed channel skipped (left at full precision); already-ranked layers are
// quantized with their most-important channel skipped; later layers pass
// through untouched. The quantization scale comes from the channels actually
// being quantized. Keeps a reference to the model; the evaluation split is
// copied at construction.
class ToyRankingModel : public RankableModel {
 public:
  // subset: dataset indices evaluated during ranking (empty = all samples).
  // holdout: evaluate on the complement of `subset` instead.
  ToyRankingModel(const ToyModel& model, const ToyDataset& dataset, QuantConfig config,
                  std::vector<int> subset = {}, bool holdout = false);

  std::vector<LayerInfo> layers() const override;
  double evaluate(const LayerInfo& layer, int skip_channel,
                  const MostImportantMap& previous) const override;

 private:
  const ToyModel& model_;
  ToyDataset eval_data_;
  QuantConfig config_;
};

// Encoder honoring the config's huffman mode. Dynamic mode builds the table
// from the symbols being encoded; static mode freezes a full-alphabet table
// from the calibration tensor's shifting errors up front.
ShiftErrorEncoder make_encoder(const QuantConfig& config, const ActivationTensor& calibration,
                               std::span<const int> important);

// Seeded sample of `count` distinct indices from [0, total).
std::vector<int> calibration_subset(int total, int count, std::uint64_t seed);

// Capture-layer activations concatenated across the dataset: channel_len of
// the result is per-sample length times sample count.
std::map<std::string, ActivationTensor> collect_activations(const ToyModel& model,
                                                            const ToyDataset& dataset);

// Channel counts of the model's capture layers, in forward order.
std::vector<LayerInfo> capture_layer_infos(const ToyModel& model, const ToyDataset& dataset);

}  // namespace dqa
