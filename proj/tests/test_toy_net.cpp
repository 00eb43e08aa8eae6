#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dqa/pipeline.hpp"
#include "dqa/quant.hpp"
#include "dqa/rng.hpp"
#include "dqa/toy_net.hpp"

using namespace dqa;

namespace {

namespace fs = std::filesystem;

Eigen::MatrixXf random_matrix(Rng& rng, int rows, int cols, float amp = 1.0f) {
  Eigen::MatrixXf mat(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) mat(r, c) = amp * static_cast<float>(rng.uniform(-1.0, 1.0));
  return mat;
}

// Plain six-loop valid convolution, the reference the engine is checked
// against.
Eigen::MatrixXf conv_reference(const Conv2dLayer& conv, const Eigen::MatrixXf& input, int in_h,
                               int in_w) {
  const int out_h = in_h - conv.kernel + 1;
  const int out_w = in_w - conv.kernel + 1;
  Eigen::MatrixXf out(out_h * out_w, conv.out_channels);
  for (int oc = 0; oc < conv.out_channels; ++oc)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        float acc = conv.bias(oc);
        for (int ic = 0; ic < conv.in_channels; ++ic)
          for (int ky = 0; ky < conv.kernel; ++ky)
            for (int kx = 0; kx < conv.kernel; ++kx)
              acc += conv.weights(oc, (ic * conv.kernel + ky) * conv.kernel + kx) *
                     input((y + ky) * in_w + (x + kx), ic);
        out(y * out_w + x, oc) = acc;
      }
  return out;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("dqa_test_" + name);
}

}  // namespace

TEST_CASE("conv2d matches the six-loop reference") {
  Rng rng(401);
  for (int trial = 0; trial < 20; ++trial) {
    Conv2dLayer conv;
    conv.in_channels = rng.uniform_int(1, 3);
    conv.out_channels = rng.uniform_int(1, 4);
    conv.kernel = rng.uniform_int(1, 3);
    conv.weights = random_matrix(rng, conv.out_channels,
                                 conv.in_channels * conv.kernel * conv.kernel);
    conv.bias = random_matrix(rng, conv.out_channels, 1).col(0);

    const int h = 4, w = 4;
    ToyModel model;
    model.input_channels = conv.in_channels;
    model.input_height = h;
    model.input_width = w;
    model.layers.push_back({"conv", conv});

    Eigen::MatrixXf input_mat = random_matrix(rng, h * w, conv.in_channels);
    const Eigen::Map<const Eigen::VectorXf> input(input_mat.data(), input_mat.size());
    const Eigen::VectorXf out = forward(model, input);
    const Eigen::MatrixXf expected = conv_reference(conv, input_mat, h, w);
    const Eigen::Map<const Eigen::VectorXf> expected_flat(expected.data(), expected.size());
    CHECK((out - expected_flat).cwiseAbs().maxCoeff() <= 1e-6f);
  }
}

TEST_CASE("dense and relu work through a handcrafted trace") {
  ToyModel model;
  model.input_channels = 2;
  DenseLayer dense;
  dense.weights.resize(2, 2);
  dense.weights << 1.0f, -1.0f, 2.0f, 0.5f;
  dense.bias.resize(2);
  dense.bias << 0.25f, -3.0f;
  model.layers.push_back({"fc", dense});
  model.layers.push_back({"act", ReluLayer{}});

  Eigen::VectorXf input(2);
  input << 1.0f, 2.0f;
  const Eigen::VectorXf out = forward(model, input);
  // unit0 = 1*1 + (-1)*2 + 0.25 = -0.75 -> relu -> 0
  CHECK(out(0) == 0.0f);
  // unit1 = 2*1 + 0.5*2 - 3 = 0 -> relu -> 0
  CHECK(out(1) == 0.0f);
}

TEST_CASE("identity hook does not change the forward pass") {
  const auto instance = make_planted_model(77, 8, 1.0f, 64);
  QuantHook identity = [](const ActivationTensor& t) { return t; };
  for (int i = 0; i < 8; ++i) {
    const Eigen::VectorXf a = forward(instance.model, instance.dataset.samples[i]);
    const Eigen::VectorXf b = forward(instance.model, instance.dataset.samples[i], identity);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("zeroing hook reduces the head to its bias response") {
  ToyModel model;
  model.input_channels = 3;
  DenseLayer features;
  features.weights = Eigen::MatrixXf::Identity(3, 3);
  features.bias = Eigen::VectorXf::Zero(3);
  model.layers.push_back({"features", features});
  DenseLayer head;
  head.weights.resize(2, 3);
  head.weights << 1.0f, 2.0f, 3.0f, -1.0f, 0.5f, 2.0f;
  head.bias.resize(2);
  head.bias << 0.125f, -0.5f;
  model.layers.push_back({"head", head});
  model.capture_points = {"features"};

  QuantHook zeroing = [](const ActivationTensor& t) {
    ActivationTensor out = t;
    out.values.setZero();
    return out;
  };
  Eigen::VectorXf input(3);
  input << 0.3f, -0.7f, 0.9f;
  const Eigen::VectorXf out = forward(model, input, zeroing);
  CHECK(out(0) == 0.125f);
  CHECK(out(1) == -0.5f);
}

TEST_CASE("planted model is separable at full precision") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto instance = make_planted_model(seed, 8, 1.0f, 200);
    CHECK(evaluate_accuracy(instance.model, instance.dataset) >= 0.95);
  }
}

TEST_CASE("direct 3-bit quantization costs accuracy on the planted task") {
  const auto instance = make_planted_model(5, 8, 1.0f, 400);
  const double full = evaluate_accuracy(instance.model, instance.dataset);
  const double quantized =
      evaluate_accuracy(instance.model, instance.dataset, direct_hook(3));
  CHECK(quantized < full);
}

TEST_CASE("planted generator is deterministic") {
  const auto a = make_planted_model(99, 8, 0.5f, 50);
  const auto b = make_planted_model(99, 8, 0.5f, 50);
  CHECK(a.planted_channels == b.planted_channels);
  for (int i = 0; i < 50; ++i) {
    CHECK(a.dataset.labels[i] == b.dataset.labels[i]);
    CHECK((a.dataset.samples[i] - b.dataset.samples[i]).cwiseAbs().maxCoeff() == 0.0f);
  }
  const auto c = make_planted_model(100, 8, 0.5f, 50);
  bool any_diff = false;
  for (int i = 0; i < 50 && !any_diff; ++i)
    any_diff = (a.dataset.samples[i] - c.dataset.samples[i]).cwiseAbs().maxCoeff() > 0.0f;
  CHECK(any_diff);
}

TEST_CASE("noise level zero silences the non-planted channels") {
  const auto instance = make_planted_model(7, 8, 0.0f, 100);
  const auto activations = collect_activations(instance.model, instance.dataset);
  const ActivationTensor& tensor = activations.at(instance.capture_layer);
  for (int c = 0; c < 8; ++c) {
    const bool planted = std::find(instance.planted_channels.begin(),
                                   instance.planted_channels.end(),
                                   c) != instance.planted_channels.end();
    if (!planted) CHECK(tensor.channel(c).cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("random-weight model scores near chance on balanced labels") {
  Rng rng(409);
  ToyModel model;
  model.input_channels = 6;
  DenseLayer fc1;
  fc1.weights = random_matrix(rng, 8, 6, 0.5f);
  fc1.bias = Eigen::VectorXf::Zero(8);
  model.layers.push_back({"fc1", fc1});
  model.layers.push_back({"relu", ReluLayer{}});
  DenseLayer fc2;
  fc2.weights = random_matrix(rng, 2, 8, 0.5f);
  fc2.bias = Eigen::VectorXf::Zero(2);
  model.layers.push_back({"fc2", fc2});
  model.layers.push_back({"softmax", SoftmaxLayer{}});

  ToyDataset dataset;
  dataset.dataset_id = "random";
  dataset.num_classes = 2;
  for (int i = 0; i < 600; ++i) {
    dataset.samples.push_back(random_matrix(rng, 6, 1).col(0));
    dataset.labels.push_back(i % 2);
  }
  const double acc = evaluate_accuracy(model, dataset);
  CHECK(acc > 0.4);
  CHECK(acc < 0.6);
}

TEST_CASE("shape mismatches are rejected") {
  const auto instance = make_planted_model(3, 8, 1.0f, 10);
  Eigen::VectorXf wrong(5);
  wrong.setZero();
  CHECK_THROWS_AS(forward(instance.model, wrong), ShapeMismatch);

  QuantHook bad_hook = [](const ActivationTensor& t) {
    ActivationTensor out = t;
    out.values.resize(t.values.rows(), t.values.cols() + 1);
    out.values.setZero();
    return out;
  };
  CHECK_THROWS_AS(forward(instance.model, instance.dataset.samples[0], bad_hook),
                  ShapeMismatch);
}

TEST_CASE("capture-point perturbation obeys the step bounds") {
  const auto instance = make_planted_model(11, 8, 1.0f, 64);
  const auto activations = collect_activations(instance.model, instance.dataset);
  const ActivationTensor& tensor = activations.at(instance.capture_layer);

  SUBCASE("direct hook: half of delta_n for non-clipped values") {
    const int n = 3;
    const ActivationTensor out = direct_hook(n)(tensor);
    const float delta = tensor.values.cwiseAbs().maxCoeff() / 4.0f;
    for (int c = 0; c < tensor.channel_count(); ++c)
      for (int i = 0; i < tensor.channel_len(); ++i) {
        if (round_half_away(tensor.values(i, c) / delta) > signed_max(n)) continue;
        CHECK(std::abs(tensor.values(i, c) - out.values(i, c)) <=
              0.5f * delta * (1.0f + 1e-5f));
      }
  }
  SUBCASE("dqa hook with every channel important: half of delta_nm") {
    QuantConfig config;
    config.target_bits = 3;
    config.extra_bits = 3;
    std::map<std::string, std::vector<int>> important;
    important[instance.capture_layer] = {0, 1, 2, 3, 4, 5, 6, 7};
    const ActivationTensor out = dqa_hook(config, important)(tensor);
    const float delta_nm = tensor.values.cwiseAbs().maxCoeff() / 32.0f;
    for (int c = 0; c < tensor.channel_count(); ++c)
      for (int i = 0; i < tensor.channel_len(); ++i) {
        if (round_half_away(tensor.values(i, c) / delta_nm) > signed_max(6)) continue;
        CHECK(std::abs(tensor.values(i, c) - out.values(i, c)) <=
              0.5f * delta_nm * (1.0f + 1e-5f));
      }
  }
}

TEST_CASE("model, dataset and activation files round trip") {
  const auto instance = make_planted_model(123, 6, 1.0f, 20);
  const auto model_path = temp_file("model.bin");
  const auto data_path = temp_file("data.bin");
  const auto act_path = temp_file("act.bin");

  save_model(instance.model, model_path);
  const ToyModel model = load_model(model_path);
  CHECK(model.layers.size() == instance.model.layers.size());
  CHECK(model.capture_points == instance.model.capture_points);
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXf a = forward(instance.model, instance.dataset.samples[i]);
    const Eigen::VectorXf b = forward(model, instance.dataset.samples[i]);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0f);
  }

  save_dataset(instance.dataset, data_path);
  const ToyDataset dataset = load_dataset(data_path);
  CHECK(dataset.dataset_id == instance.dataset.dataset_id);
  CHECK(dataset.labels == instance.dataset.labels);
  CHECK(dataset.num_classes == 2);
  for (int i = 0; i < dataset.sample_count(); ++i)
    CHECK((dataset.samples[i] - instance.dataset.samples[i]).cwiseAbs().maxCoeff() == 0.0f);

  const auto activations = collect_activations(instance.model, instance.dataset);
  const ActivationTensor& tensor = activations.at(instance.capture_layer);
  save_activations(tensor, act_path);
  const ActivationTensor back = load_activations(act_path);
  CHECK(back.layer_id == tensor.layer_id);
  CHECK((back.values.array() == tensor.values.array()).all());

  fs::remove(model_path);
  fs::remove(data_path);
  fs::remove(act_path);
}

TEST_CASE("conv model with capture point runs end to end") {
  Rng rng(431);
  ToyModel model;
  model.input_channels = 1;
  model.input_height = 4;
  model.input_width = 4;
  Conv2dLayer conv;
  conv.in_channels = 1;
  conv.out_channels = 3;
  conv.kernel = 2;
  conv.weights = random_matrix(rng, 3, 4);
  conv.bias = Eigen::VectorXf::Zero(3);
  model.layers.push_back({"conv", conv});
  model.layers.push_back({"relu", ReluLayer{}});
  DenseLayer head;
  head.weights = random_matrix(rng, 2, 27);
  head.bias = Eigen::VectorXf::Zero(2);
  model.layers.push_back({"head", head});
  model.layers.push_back({"softmax", SoftmaxLayer{}});
  model.capture_points = {"conv"};

  // The captured conv activation has 9 positions per channel.
  bool saw_capture = false;
  QuantHook probe = [&](const ActivationTensor& t) {
    saw_capture = true;
    CHECK(t.channel_count() == 3);
    CHECK(t.channel_len() == 9);
    return t;
  };
  const Eigen::VectorXf input = random_matrix(rng, 16, 1).col(0);
  const Eigen::VectorXf scores = forward(model, input, probe);
  CHECK(saw_capture);
  CHECK(scores.size() == 2);
  CHECK(scores.sum() == doctest::Approx(1.0).epsilon(1e-5));
}
