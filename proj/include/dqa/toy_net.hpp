#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "dqa/tensor.hpp"

namespace dqa {

// Minimal forward-only layers. Dense weights are out x in; conv weights are
// out_ch x (in_ch * kernel * kernel), valid padding, stride 1.
struct DenseLayer {
  Eigen::MatrixXf weights;
  Eigen::VectorXf bias;
};

struct Conv2dLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  Eigen::MatrixXf weights;
  Eigen::VectorXf bias;
};

struct ReluLayer {};
struct SoftmaxLayer {};

struct Layer {
  std::string id;
  std::variant<DenseLayer, Conv2dLayer, ReluLayer, SoftmaxLayer> op;
};

// Intermediate activation: one column per channel, rows are the spatial
// positions in row-major (y * width + x) order. Dense outputs have
// height == width == 1 and one unit per channel.
struct Activation {
  Eigen::MatrixXf values;
  int height = 1;
  int width = 1;

  int channels() const { return static_cast<int>(values.cols()); }
  int channel_len() const { return static_cast<int>(values.rows()); }
};

struct ToyModel {
  int input_channels = 1;
  int input_height = 1;
  int input_width = 1;
  std::vector<Layer> layers;
  std::vector<std::string> capture_points;  // layer ids quantized in-line

  bool is_capture(const std::string& layer_id) const;
  const Layer* find_layer(const std::string& layer_id) const;
};

struct ToyDataset {
  std::string dataset_id;
  std::vector<Eigen::VectorXf> samples;  // flattened channel-major inputs
  std::vector<int> labels;
  int num_classes = 2;

  int sample_count() const { return static_cast<int>(samples.size()); }
  void validate() const;
};

// Transform applied to captured activations (a quantize/de-quantize round
// trip in the pipeline). Receives the activation with its layer id; must
// return the same shape.
using QuantHook = std::function<ActivationTensor(const ActivationTensor&)>;

// Deterministic forward pass; at each capture point the activation passes
// through `hook` before continuing. Returns the final layer's output
// flattened to a vector (class scores for a softmax head).
Eigen::VectorXf forward(const ToyModel& model, const Eigen::VectorXf& input,
                        const QuantHook& hook = nullptr);

// Fraction of argmax-correct predictions; ties resolve to the lowest class
// index so degenerate all-zero scores stay deterministic.
double evaluate_accuracy(const ToyModel& model, const ToyDataset& dataset,
                         const QuantHook& hook = nullptr);

int argmax(const Eigen::VectorXf& scores);

// Synthetic ground truth for ranking and accuracy experiments: a known
// subset of channels at the capture layer carries class signal whose margin
// sits well below the layer's dynamic range (each signal channel also holds
// a constant full-range anchor element, so quantization damages the payload
// most), the rest carry class-free noise of amplitude `noise_level`
// (exactly zero at noise_level 0). Channels at the capture layer are two
// elements long: payload first, anchor second.
struct PlantedInstance {
  ToyModel model;
  ToyDataset dataset;
  std::vector<int> planted_channels;  // sorted ascending
  std::string capture_layer;
};

PlantedInstance make_planted_model(std::uint64_t seed, int channels, float noise_level,
                                   int samples = 400);

// Binary file formats, little-endian and version-tagged.
void save_model(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_model(const std::filesystem::path& path);
void save_dataset(const ToyDataset& dataset, const std::filesystem::path& path);
ToyDataset load_dataset(const std::filesystem::path& path);
void save_activations(const ActivationTensor& tensor, const std::filesystem::path& path);
ActivationTensor load_activations(const std::filesystem::path& path);

}  // namespace dqa
