#include "dqa/toy_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dqa/byteio.hpp"
#include "dqa/rng.hpp"

namespace dqa {

namespace {

Activation apply_dense(const DenseLayer& dense, const Activation& in) {
  const Eigen::Index flat = in.values.size();
  if (dense.weights.cols() != flat)
    throw ShapeMismatch("dense layer expects " + std::to_string(dense.weights.cols()) +
                        " inputs, got " + std::to_string(flat));
  // Column-major flatten == channel-major order, matching the file formats.
  const Eigen::Map<const Eigen::VectorXf> x(in.values.data(), flat);
  Activation out;
  out.values = ((dense.weights * x + dense.bias).transpose()).eval();
  out.height = 1;
  out.width = 1;
  return out;
}

Activation apply_conv(const Conv2dLayer& conv, const Activation& in) {
  if (in.channels() != conv.in_channels || in.height < conv.kernel || in.width < conv.kernel)
    throw ShapeMismatch("conv2d input shape mismatch");
  const int out_h = in.height - conv.kernel + 1;
  const int out_w = in.width - conv.kernel + 1;
  const int patch = conv.in_channels * conv.kernel * conv.kernel;

  // im2col: one column per output position, then a single matrix product.
  Eigen::MatrixXf columns(patch, out_h * out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      int row = 0;
      const int col = y * out_w + x;
      for (int c = 0; c < conv.in_channels; ++c)
        for (int ky = 0; ky < conv.kernel; ++ky)
          for (int kx = 0; kx < conv.kernel; ++kx)
            columns(row++, col) = in.values((y + ky) * in.width + (x + kx), c);
    }
  }
  Eigen::MatrixXf out = conv.weights * columns;       // out_ch x positions
  out.colwise() += conv.bias;
  Activation result;
  result.values = out.transpose();                    // positions x out_ch
  result.height = out_h;
  result.width = out_w;
  return result;
}

Activation apply_softmax(const Activation& in) {
  const Eigen::Map<const Eigen::VectorXf> x(in.values.data(), in.values.size());
  Eigen::VectorXf shifted = x.array() - x.maxCoeff();
  Eigen::VectorXf exps = shifted.array().exp();
  Activation out;
  out.values = (exps / exps.sum()).transpose().eval();
  out.height = 1;
  out.width = 1;
  return out;
}

}  // namespace

bool ToyModel::is_capture(const std::string& layer_id) const {
  return std::find(capture_points.begin(), capture_points.end(), layer_id) !=
         capture_points.end();
}

const Layer* ToyModel::find_layer(const std::string& layer_id) const {
  for (const auto& layer : layers)
    if (layer.id == layer_id) return &layer;
  return nullptr;
}

void ToyDataset::validate() const {
  if (samples.empty() || samples.size() != labels.size())
    throw ShapeMismatch("dataset sample/label counts disagree");
  for (int label : labels)
    if (label < 0 || label >= num_classes) throw OutOfRange("label outside class range");
}

int argmax(const Eigen::VectorXf& scores) {
  int best = 0;
  for (int i = 1; i < scores.size(); ++i)
    if (scores(i) > scores(best)) best = i;
  return best;
}

Eigen::VectorXf forward(const ToyModel& model, const Eigen::VectorXf& input,
                        const QuantHook& hook) {
  const Eigen::Index expected =
      Eigen::Index{model.input_channels} * model.input_height * model.input_width;
  if (input.size() != expected)
    throw ShapeMismatch("input size " + std::to_string(input.size()) + ", model expects " +
                        std::to_string(expected));

  Activation act;
  act.values = Eigen::Map<const Eigen::MatrixXf>(input.data(),
                                                 model.input_height * model.input_width,
                                                 model.input_channels);
  act.height = model.input_height;
  act.width = model.input_width;

  for (const auto& layer : model.layers) {
    if (std::holds_alternative<DenseLayer>(layer.op))
      act = apply_dense(std::get<DenseLayer>(layer.op), act);
    else if (std::holds_alternative<Conv2dLayer>(layer.op))
      act = apply_conv(std::get<Conv2dLayer>(layer.op), act);
    else if (std::holds_alternative<ReluLayer>(layer.op))
      act.values = act.values.cwiseMax(0.0f);
    else
      act = apply_softmax(act);

    if (hook && model.is_capture(layer.id)) {
      ActivationTensor tensor{layer.id, act.values};
      ActivationTensor transformed = hook(tensor);
      if (transformed.values.rows() != act.values.rows() ||
          transformed.values.cols() != act.values.cols())
        throw ShapeMismatch("hook changed activation shape at '" + layer.id + "'");
      act.values = std::move(transformed.values);
    }
  }
  return Eigen::Map<const Eigen::VectorXf>(act.values.data(), act.values.size());
}

double evaluate_accuracy(const ToyModel& model, const ToyDataset& dataset,
                         const QuantHook& hook) {
  dataset.validate();
  int correct = 0;
  for (int i = 0; i < dataset.sample_count(); ++i) {
    const Eigen::VectorXf scores = forward(model, dataset.samples[i], hook);
    if (argmax(scores) == dataset.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / dataset.sample_count();
}

PlantedInstance make_planted_model(std::uint64_t seed, int channels, float noise_level,
                                   int samples) {
  if (channels < 2) throw OutOfRange("planted model needs at least 2 channels");
  if (samples < 2) throw OutOfRange("planted model needs at least 2 samples");
  Rng rng(seed);

  // Each channel holds two elements. Signal channels carry the class payload
  // y * s_i * (margin_base + margin_spread * u) in element 0 and a constant
  // full-range anchor in element 1; the anchor pins the layer |max| at every
  // noise level, so the payload sits far below the quantization step and the
  // channel is exactly the kind quantization damages most. The per-sample
  // scale s_i is shared across signal channels so a whole sample drops below
  // the rounding threshold together, which makes accuracy degrade smoothly
  // as the step grows.
  constexpr float kMarginBase = 0.05f;
  constexpr float kMarginSpread = 0.2f;
  constexpr float kScaleMin = 0.05f;
  constexpr float kAnchor = 1.0f;
  constexpr int kChannelLen = 2;

  PlantedInstance instance;
  instance.capture_layer = "features";

  std::vector<int> order(static_cast<std::size_t>(channels));
  std::iota(order.begin(), order.end(), 0);
  for (int i = channels - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  const int planted_count = channels / 2;
  instance.planted_channels.assign(order.begin(), order.begin() + planted_count);
  std::sort(instance.planted_channels.begin(), instance.planted_channels.end());

  ToyModel& model = instance.model;
  model.input_channels = channels;
  model.input_height = kChannelLen;
  model.input_width = 1;
  model.capture_points = {instance.capture_layer};

  // 1x1 identity convolution: keeps the channel/position structure intact
  // while giving the capture point a real layer output.
  Conv2dLayer features;
  features.in_channels = channels;
  features.out_channels = channels;
  features.kernel = 1;
  features.weights = Eigen::MatrixXf::Identity(channels, channels);
  features.bias = Eigen::VectorXf::Zero(channels);
  model.layers.push_back({instance.capture_layer, std::move(features)});

  // Head reads only the payload element of the planted channels.
  DenseLayer head;
  head.weights = Eigen::MatrixXf::Zero(2, channels * kChannelLen);
  head.bias = Eigen::VectorXf::Zero(2);
  for (int c : instance.planted_channels) {
    head.weights(0, c * kChannelLen) = -1.0f;
    head.weights(1, c * kChannelLen) = 1.0f;
  }
  model.layers.push_back({"head", std::move(head)});
  model.layers.push_back({"softmax", SoftmaxLayer{}});

  ToyDataset& data = instance.dataset;
  data.dataset_id = "planted-c" + std::to_string(channels) + "-s" + std::to_string(seed);
  data.num_classes = 2;
  data.samples.reserve(static_cast<std::size_t>(samples));
  data.labels.reserve(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    const int label = i % 2;
    const float sign = label == 1 ? 1.0f : -1.0f;
    const float scale = static_cast<float>(rng.uniform(kScaleMin, 1.0));
    Eigen::VectorXf x(channels * kChannelLen);
    for (int c = 0; c < channels * kChannelLen; ++c)
      x(c) = noise_level * static_cast<float>(rng.uniform(-1, 1));
    for (int c : instance.planted_channels) {
      x(c * kChannelLen) =
          sign * scale * (kMarginBase + kMarginSpread * static_cast<float>(rng.uniform()));
      x(c * kChannelLen + 1) = kAnchor;
    }
    data.samples.push_back(std::move(x));
    data.labels.push_back(label);
  }
  return instance;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint16_t kModelVersion = 1;
constexpr std::uint16_t kDatasetVersion = 1;
constexpr std::uint16_t kActivationVersion = 1;

enum class LayerKind : std::uint8_t { kDense = 0, kConv2d = 1, kRelu = 2, kSoftmax = 3 };

void write_matrix(ByteWriter& w, const Eigen::MatrixXf& mat) {
  for (Eigen::Index r = 0; r < mat.rows(); ++r)
    for (Eigen::Index c = 0; c < mat.cols(); ++c) w.f32(mat(r, c));
}

Eigen::MatrixXf read_matrix(ByteReader& r, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXf mat(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) mat(i, j) = r.f32();
  return mat;
}

}  // namespace

void save_model(const ToyModel& model, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>("DQTM"), 4));
  w.u16(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.input_channels));
  w.u32(static_cast<std::uint32_t>(model.input_height));
  w.u32(static_cast<std::uint32_t>(model.input_width));
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    w.str16(layer.id);
    if (const auto* dense = std::get_if<DenseLayer>(&layer.op)) {
      w.u8(static_cast<std::uint8_t>(LayerKind::kDense));
      w.u32(static_cast<std::uint32_t>(dense->weights.cols()));
      w.u32(static_cast<std::uint32_t>(dense->weights.rows()));
      write_matrix(w, dense->weights);
      for (Eigen::Index i = 0; i < dense->bias.size(); ++i) w.f32(dense->bias(i));
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer.op)) {
      w.u8(static_cast<std::uint8_t>(LayerKind::kConv2d));
      w.u32(static_cast<std::uint32_t>(conv->in_channels));
      w.u32(static_cast<std::uint32_t>(conv->out_channels));
      w.u32(static_cast<std::uint32_t>(conv->kernel));
      write_matrix(w, conv->weights);
      for (Eigen::Index i = 0; i < conv->bias.size(); ++i) w.f32(conv->bias(i));
    } else if (std::holds_alternative<ReluLayer>(layer.op)) {
      w.u8(static_cast<std::uint8_t>(LayerKind::kRelu));
    } else {
      w.u8(static_cast<std::uint8_t>(LayerKind::kSoftmax));
    }
  }
  w.u32(static_cast<std::uint32_t>(model.capture_points.size()));
  for (const auto& id : model.capture_points) w.str16(id);
  write_file(path, w.bytes());
}

ToyModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic("DQTM");
  const std::uint16_t version = r.u16();
  if (version != kModelVersion)
    throw VersionUnsupported("model version " + std::to_string(version));
  ToyModel model;
  model.input_channels = static_cast<int>(r.u32());
  model.input_height = static_cast<int>(r.u32());
  model.input_width = static_cast<int>(r.u32());
  const std::uint32_t layer_count = r.u32();
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    Layer layer;
    layer.id = r.str16();
    switch (static_cast<LayerKind>(r.u8())) {
      case LayerKind::kDense: {
        DenseLayer dense;
        const std::uint32_t in = r.u32();
        const std::uint32_t out = r.u32();
        dense.weights = read_matrix(r, out, in);
        dense.bias.resize(out);
        for (std::uint32_t j = 0; j < out; ++j) dense.bias(j) = r.f32();
        layer.op = std::move(dense);
        break;
      }
      case LayerKind::kConv2d: {
        Conv2dLayer conv;
        conv.in_channels = static_cast<int>(r.u32());
        conv.out_channels = static_cast<int>(r.u32());
        conv.kernel = static_cast<int>(r.u32());
        conv.weights =
            read_matrix(r, conv.out_channels,
                        Eigen::Index{conv.in_channels} * conv.kernel * conv.kernel);
        conv.bias.resize(conv.out_channels);
        for (int j = 0; j < conv.out_channels; ++j) conv.bias(j) = r.f32();
        layer.op = std::move(conv);
        break;
      }
      case LayerKind::kRelu:
        layer.op = ReluLayer{};
        break;
      case LayerKind::kSoftmax:
        layer.op = SoftmaxLayer{};
        break;
      default:
        throw FormatError("unknown layer kind in model file");
    }
    model.layers.push_back(std::move(layer));
  }
  const std::uint32_t captures = r.u32();
  for (std::uint32_t i = 0; i < captures; ++i) model.capture_points.push_back(r.str16());
  return model;
}

void save_dataset(const ToyDataset& dataset, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>("DQTD"), 4));
  w.u16(kDatasetVersion);
  w.str16(dataset.dataset_id);
  w.u32(static_cast<std::uint32_t>(dataset.samples.size()));
  w.u32(dataset.samples.empty() ? 0
                                : static_cast<std::uint32_t>(dataset.samples.front().size()));
  w.u32(static_cast<std::uint32_t>(dataset.num_classes));
  for (const auto& sample : dataset.samples)
    for (Eigen::Index i = 0; i < sample.size(); ++i) w.f32(sample(i));
  for (int label : dataset.labels) w.u32(static_cast<std::uint32_t>(label));
  write_file(path, w.bytes());
}

ToyDataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic("DQTD");
  const std::uint16_t version = r.u16();
  if (version != kDatasetVersion)
    throw VersionUnsupported("dataset version " + std::to_string(version));
  ToyDataset dataset;
  dataset.dataset_id = r.str16();
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  dataset.num_classes = static_cast<int>(r.u32());
  dataset.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Eigen::VectorXf sample(dim);
    for (std::uint32_t j = 0; j < dim; ++j) sample(j) = r.f32();
    dataset.samples.push_back(std::move(sample));
  }
  dataset.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) dataset.labels.push_back(static_cast<int>(r.u32()));
  return dataset;
}

void save_activations(const ActivationTensor& tensor, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>("DQAC"), 4));
  w.u16(kActivationVersion);
  w.str16(tensor.layer_id);
  w.u32(static_cast<std::uint32_t>(tensor.channel_count()));
  w.u32(static_cast<std::uint32_t>(tensor.channel_len()));
  for (int c = 0; c < tensor.channel_count(); ++c)
    for (int i = 0; i < tensor.channel_len(); ++i) w.f32(tensor.values(i, c));
  write_file(path, w.bytes());
}

ActivationTensor load_activations(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect_magic("DQAC");
  const std::uint16_t version = r.u16();
  if (version != kActivationVersion)
    throw VersionUnsupported("activation dump version " + std::to_string(version));
  ActivationTensor tensor;
  tensor.layer_id = r.str16();
  const std::uint32_t channels = r.u32();
  const std::uint32_t len = r.u32();
  tensor.values.resize(len, channels);
  for (std::uint32_t c = 0; c < channels; ++c)
    for (std::uint32_t i = 0; i < len; ++i) tensor.values(i, c) = r.f32();
  return tensor;
}

}  // namespace dqa
