#include "dqa/pipeline.hpp"

#include <algorithm>
#include <numeric>

#include "dqa/rng.hpp"

namespace dqa {

namespace {

// Direct quantize/de-quantize of the given channels in place, scale from the
// channels being quantized. Channels not listed are left untouched.
void direct_roundtrip_channels(Eigen::MatrixXf& values, const std::vector<int>& channels, int n) {
  float abs_max = 0.0f;
  for (int c : channels) abs_max = std::max(abs_max, values.col(c).cwiseAbs().maxCoeff());
  if (abs_max == 0.0f) return;
  const float delta_n = abs_max / static_cast<float>(std::int64_t{1} << (n - 1));
  for (int c : channels)
    values.col(c) = direct_dequantize(direct_quantize(values.col(c), delta_n, n), delta_n);
}

std::vector<int> all_but(int channel_count, int skip) {
  std::vector<int> channels;
  channels.reserve(static_cast<std::size_t>(channel_count) - (skip >= 0 ? 1 : 0));
  for (int c = 0; c < channel_count; ++c)
    if (c != skip) channels.push_back(c);
  return channels;
}

}  // namespace

QuantHook direct_hook(int n) {
  return [n](const ActivationTensor& tensor) {
    ActivationTensor out = tensor;
    direct_roundtrip_channels(out.values, all_but(tensor.channel_count(), -1), n);
    return out;
  };
}

QuantHook dqa_hook(const QuantConfig& config,
                   std::map<std::string, std::vector<int>> important_per_layer) {
  return [config, important = std::move(important_per_layer)](const ActivationTensor& tensor) {
    const auto it = important.find(tensor.layer_id);
    if (it == important.end())
      throw UnknownLayer("no important set for layer '" + tensor.layer_id + "'");
    const QuantizedLayer q = dqa_quantize_layer(tensor, config, it->second);
    return dqa_dequantize_layer(q);
  };
}

QuantHook dqa_hook(const QuantConfig& config, const RankTable& table) {
  std::map<std::string, std::vector<int>> important;
  for (const auto& layer : table.layers)
    important[layer.layer_id] =
        select_important(table, layer.layer_id, config.important_ratio);
  return dqa_hook(config, std::move(important));
}

ToyRankingModel::ToyRankingModel(const ToyModel& model, const ToyDataset& dataset,
                                 QuantConfig config, std::vector<int> subset, bool holdout)
    : model_(model), config_(config) {
  config_.validate();
  dataset.validate();
  std::vector<char> in_subset(dataset.samples.size(), subset.empty() ? 1 : 0);
  for (int i : subset) {
    if (i < 0 || i >= dataset.sample_count()) throw OutOfRange("subset index out of range");
    in_subset[static_cast<std::size_t>(i)] = 1;
  }
  eval_data_.dataset_id = dataset.dataset_id;
  eval_data_.num_classes = dataset.num_classes;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    if ((in_subset[i] != 0) == holdout) continue;
    eval_data_.samples.push_back(dataset.samples[i]);
    eval_data_.labels.push_back(dataset.labels[i]);
  }
  if (eval_data_.samples.empty()) throw ShapeMismatch("ranking evaluation split is empty");
}

std::vector<LayerInfo> ToyRankingModel::layers() const {
  return capture_layer_infos(model_, eval_data_);
}

double ToyRankingModel::evaluate(const LayerInfo& layer, int skip_channel,
                                 const MostImportantMap& previous) const {
  const int n = config_.target_bits;
  QuantHook hook = [&](const ActivationTensor& tensor) {
    ActivationTensor out = tensor;
    if (tensor.layer_id == layer.layer_id) {
      direct_roundtrip_channels(out.values, all_but(tensor.channel_count(), skip_channel), n);
    } else if (const auto it = previous.find(tensor.layer_id); it != previous.end()) {
      direct_roundtrip_channels(out.values, all_but(tensor.channel_count(), it->second), n);
    }
    // Layers ranked later pass through at full precision.
    return out;
  };
  return evaluate_accuracy(model_, eval_data_, hook);
}

ShiftErrorEncoder make_encoder(const QuantConfig& config, const ActivationTensor& calibration,
                               std::span<const int> important) {
  if (config.huffman_mode == HuffmanMode::kDynamic || config.extra_bits == 0 ||
      important.empty())
    return dynamic_huffman_encoder();
  // One dynamic pass extracts the calibration symbols to freeze the table.
  const QuantizedLayer calib = dqa_quantize_layer(calibration, config, important);
  if (!calib.has_error_section()) return dynamic_huffman_encoder();
  const auto symbols = decode(*calib.error_stream, *calib.huffman_table);
  return static_huffman_encoder(
      build_static_table(build_histogram(symbols, config.extra_bits)));
}

std::vector<int> calibration_subset(int total, int count, std::uint64_t seed) {
  std::vector<int> indices(static_cast<std::size_t>(total));
  std::iota(indices.begin(), indices.end(), 0);
  if (count >= total) return indices;
  Rng rng(seed);
  for (int i = total - 1; i > 0; --i)
    std::swap(indices[static_cast<std::size_t>(i)],
              indices[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  indices.resize(static_cast<std::size_t>(count));
  std::sort(indices.begin(), indices.end());
  return indices;
}

std::map<std::string, ActivationTensor> collect_activations(const ToyModel& model,
                                                            const ToyDataset& dataset) {
  dataset.validate();
  std::map<std::string, std::vector<Eigen::MatrixXf>> per_layer;
  QuantHook recorder = [&](const ActivationTensor& tensor) {
    per_layer[tensor.layer_id].push_back(tensor.values);
    return tensor;
  };
  for (const auto& sample : dataset.samples) forward(model, sample, recorder);

  std::map<std::string, ActivationTensor> result;
  for (auto& [layer_id, slices] : per_layer) {
    const Eigen::Index len = slices.front().rows();
    const Eigen::Index channels = slices.front().cols();
    ActivationTensor tensor;
    tensor.layer_id = layer_id;
    tensor.values.resize(len * static_cast<Eigen::Index>(slices.size()), channels);
    for (std::size_t s = 0; s < slices.size(); ++s)
      tensor.values.middleRows(static_cast<Eigen::Index>(s) * len, len) = slices[s];
    result.emplace(layer_id, std::move(tensor));
  }
  return result;
}

std::vector<LayerInfo> capture_layer_infos(const ToyModel& model, const ToyDataset& dataset) {
  dataset.validate();
  std::map<std::string, int> channel_counts;
  QuantHook recorder = [&](const ActivationTensor& tensor) {
    channel_counts[tensor.layer_id] = tensor.channel_count();
    return tensor;
  };
  forward(model, dataset.samples.front(), recorder);

  std::vector<LayerInfo> infos;
  for (const auto& layer : model.layers) {
    const auto it = channel_counts.find(layer.id);
    if (it != channel_counts.end()) infos.push_back({layer.id, it->second});
  }
  return infos;
}

}  // namespace dqa
