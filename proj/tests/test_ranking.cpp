#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>

#include "dqa/pipeline.hpp"
#include "dqa/ranking.hpp"
#include "dqa/rng.hpp"
#include "dqa/toy_net.hpp"

using namespace dqa;

namespace {

RankTableMetadata meta_for(const QuantConfig& config, const std::string& dataset_id,
                           std::uint64_t seed, int samples) {
  RankTableMetadata meta;
  meta.config = config;
  meta.dataset_id = dataset_id;
  meta.seed = seed;
  meta.sample_count = samples;
  meta.created = "2000-01-01T00:00:00Z";
  return meta;
}

QuantConfig config_n3m3(double ratio = 0.5) {
  QuantConfig config;
  config.target_bits = 3;
  config.extra_bits = 3;
  config.important_ratio = ratio;
  return config;
}

// Fixed-score table for select/stability tests.
RankTable table_from_scores(const std::vector<std::pair<std::string, std::vector<double>>>& layers,
                            double ratio) {
  RankTable table;
  table.metadata = meta_for(config_n3m3(ratio), "fixture", 0, 0);
  for (const auto& [id, scores] : layers) {
    LayerRank rank;
    rank.layer_id = id;
    for (std::size_t c = 0; c < scores.size(); ++c)
      rank.entries.push_back({static_cast<int>(c), scores[c]});
    std::sort(rank.entries.begin(), rank.entries.end(), [](const RankEntry& a, const RankEntry& b) {
      if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
      return a.channel < b.channel;
    });
    table.layers.push_back(std::move(rank));
  }
  return table;
}

// Two capture layers so the most-important-channel propagation matters.
struct TwoLayerFixture {
  ToyModel model;
  ToyDataset dataset;
};

TwoLayerFixture make_two_layer_model(std::uint64_t seed) {
  Rng rng(seed);
  TwoLayerFixture fix;
  fix.model.input_channels = 3;
  DenseLayer fc1;
  fc1.weights.resize(3, 3);
  fc1.bias = Eigen::VectorXf::Zero(3);
  DenseLayer fc2;
  fc2.weights.resize(3, 3);
  fc2.bias = Eigen::VectorXf::Zero(3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      fc1.weights(r, c) = static_cast<float>(rng.uniform(-1, 1));
      fc2.weights(r, c) = static_cast<float>(rng.uniform(-1, 1));
    }
  DenseLayer head;
  head.weights.resize(2, 3);
  for (int c = 0; c < 3; ++c) {
    head.weights(0, c) = static_cast<float>(rng.uniform(-1, 1));
    head.weights(1, c) = static_cast<float>(rng.uniform(-1, 1));
  }
  head.bias = Eigen::VectorXf::Zero(2);
  fix.model.layers.push_back({"a", fc1});
  fix.model.layers.push_back({"b", fc2});
  fix.model.layers.push_back({"head", head});
  fix.model.layers.push_back({"softmax", SoftmaxLayer{}});
  fix.model.capture_points = {"a", "b"};

  fix.dataset.dataset_id = "two-layer";
  fix.dataset.num_classes = 2;
  for (int i = 0; i < 96; ++i) {
    Eigen::VectorXf x(3);
    for (int c = 0; c < 3; ++c) x(c) = static_cast<float>(rng.uniform(-1, 1));
    fix.dataset.samples.push_back(x);
    fix.dataset.labels.push_back(i % 2);
  }
  return fix;
}

}  // namespace

TEST_CASE("greedy ranking puts planted channels strictly first at zero noise") {
  for (std::uint64_t seed : {1ull, 9ull, 42ull}) {
    const auto instance = make_planted_model(seed, 8, 0.0f, 400);
    ToyRankingModel rankable(instance.model, instance.dataset, config_n3m3());
    const RankTable table =
        greedy_rank(rankable, meta_for(config_n3m3(), instance.dataset.dataset_id, seed, 400));
    REQUIRE(table.layers.size() == 1);
    const auto& entries = table.layers[0].entries;
    std::vector<int> first_k;
    for (std::size_t i = 0; i < instance.planted_channels.size(); ++i)
      first_k.push_back(entries[i].channel);
    std::sort(first_k.begin(), first_k.end());
    CHECK(first_k == instance.planted_channels);
    // Strictly first: the last planted score beats the best non-planted one.
    const double worst_planted = entries[instance.planted_channels.size() - 1].accuracy;
    const double best_rest = entries[instance.planted_channels.size()].accuracy;
    CHECK(worst_planted > best_rest);
  }
}

TEST_CASE("signal channels evaluate to a perfect skip score") {
  const auto instance = make_planted_model(21, 8, 1.0f, 300);
  ToyRankingModel rankable(instance.model, instance.dataset, config_n3m3());
  const RankTable table =
      greedy_rank(rankable, meta_for(config_n3m3(), instance.dataset.dataset_id, 21, 300));
  for (const auto& entry : table.layers[0].entries) {
    const bool planted = std::binary_search(instance.planted_channels.begin(),
                                            instance.planted_channels.end(), entry.channel);
    if (planted) CHECK(entry.accuracy == 1.0);
  }
}

TEST_CASE("greedy matches exhaustive single-skip enumeration on a 2-layer model") {
  const auto fix = make_two_layer_model(4242);
  ToyRankingModel rankable(fix.model, fix.dataset, config_n3m3());
  const RankTable greedy =
      greedy_rank(rankable, meta_for(config_n3m3(), fix.dataset.dataset_id, 0, 96));

  // Exhaustive oracle: re-run every (layer, skip) cell by hand, tracking the
  // strict first-maximum the same way the algorithm defines it.
  MostImportantMap previous;
  const auto layers = rankable.layers();
  REQUIRE(layers.size() == 2);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<RankEntry> cells;
    double best = 0.0;
    int best_channel = -1;
    for (int ch = 0; ch < layers[l].channel_count; ++ch) {
      const double acc = rankable.evaluate(layers[l], ch, previous);
      cells.push_back({ch, acc});
      if (acc > best) {
        best = acc;
        best_channel = ch;
      }
    }
    if (best_channel >= 0) previous[layers[l].layer_id] = best_channel;
    std::sort(cells.begin(), cells.end(), [](const RankEntry& a, const RankEntry& b) {
      if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
      return a.channel < b.channel;
    });
    const auto& greedy_layer = greedy.layers[l];
    REQUIRE(greedy_layer.entries.size() == cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      CHECK(greedy_layer.entries[i].channel == cells[i].channel);
      CHECK(greedy_layer.entries[i].accuracy == cells[i].accuracy);
    }
  }
}

TEST_CASE("identical channels tie-break by lower index") {
  struct UniformModel : RankableModel {
    std::vector<LayerInfo> layers() const override { return {{"flat", 5}}; }
    double evaluate(const LayerInfo&, int, const MostImportantMap&) const override {
      return 0.75;
    }
  } model;
  const RankTable table = greedy_rank(model, meta_for(config_n3m3(), "flat", 0, 0));
  for (int c = 0; c < 5; ++c) {
    CHECK(table.layers[0].entries[static_cast<std::size_t>(c)].channel == c);
    CHECK(table.layers[0].entries[static_cast<std::size_t>(c)].accuracy == 0.75);
  }
}

TEST_CASE("evaluation budget is exactly the channel total") {
  const auto fix = make_two_layer_model(77);
  ToyRankingModel rankable(fix.model, fix.dataset, config_n3m3());
  CountingModel counting(rankable);
  greedy_rank(counting, meta_for(config_n3m3(), fix.dataset.dataset_id, 0, 96));
  CHECK(counting.calls() == 6);  // two layers of three channels
}

TEST_CASE("evaluator failures carry layer and channel context") {
  struct ThrowingModel : RankableModel {
    std::vector<LayerInfo> layers() const override { return {{"boom", 2}}; }
    double evaluate(const LayerInfo&, int skip, const MostImportantMap&) const override {
      if (skip == 1) throw std::runtime_error("backend died");
      return 0.5;
    }
  } model;
  try {
    greedy_rank(model, meta_for(config_n3m3(), "x", 0, 0));
    FAIL("expected EvaluatorFailure");
  } catch (const EvaluatorFailure& e) {
    const std::string what = e.what();
    CHECK(what.find("boom") != std::string::npos);
    CHECK(what.find("channel 1") != std::string::npos);
    CHECK(what.find("backend died") != std::string::npos);
  }
}

TEST_CASE("select_important takes the top ranked channels") {
  const RankTable table =
      table_from_scores({{"fc", {0.1, 0.9, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4, 0.5, 0.0}}}, 0.4);
  SUBCASE("ratio 0.4 of 10 channels keeps 4") {
    const auto selected = select_important(table, "fc", 0.4);
    CHECK(selected == std::vector<int>{1, 2, 4, 6});
  }
  SUBCASE("ratio 0 keeps none") { CHECK(select_important(table, "fc", 0.0).empty()); }
  SUBCASE("ratio 1 keeps all") {
    CHECK(select_important(table, "fc", 1.0).size() == 10);
  }
  SUBCASE("rounding is half away from zero") {
    // 10 * 0.45 = 4.5 -> 5 channels.
    CHECK(select_important(table, "fc", 0.45).size() == 5);
  }
  SUBCASE("unknown layer") {
    CHECK_THROWS_AS(select_important(table, "nope", 0.4), UnknownLayer);
  }
}

TEST_CASE("stability report on fixed tables") {
  SUBCASE("identical tables overlap fully") {
    const RankTable t = table_from_scores({{"fc", {0.9, 0.8, 0.1, 0.2}}}, 0.5);
    const std::vector<RankTable> tables = {t, t, t};
    const StabilityReport report = rank_stability_report(tables);
    CHECK(report.mean_overlap == 1.0);
    CHECK(report.per_layer[0].second == 1.0);
  }
  SUBCASE("disjoint selections overlap zero") {
    const RankTable a = table_from_scores({{"fc", {0.9, 0.8, 0.1, 0.2}}}, 0.5);
    const RankTable b = table_from_scores({{"fc", {0.1, 0.2, 0.9, 0.8}}}, 0.5);
    const std::vector<RankTable> tables = {a, b};
    CHECK(rank_stability_report(tables).mean_overlap == 0.0);
  }
  SUBCASE("mismatched models are rejected") {
    const RankTable a = table_from_scores({{"fc", {0.9, 0.8}}}, 0.5);
    const RankTable b = table_from_scores({{"other", {0.9, 0.8}}}, 0.5);
    const std::vector<RankTable> tables = {a, b};
    CHECK_THROWS_AS(rank_stability_report(tables), ModelMismatch);
    const std::vector<RankTable> one = {a};
    CHECK_THROWS_AS(rank_stability_report(one), ModelMismatch);
  }
}

TEST_CASE("five seeded calibration runs select a stable important set") {
  const auto instance = make_planted_model(33, 8, 1.0f, 400);
  std::vector<RankTable> tables;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto subset = calibration_subset(400, 128, seed);
    ToyRankingModel rankable(instance.model, instance.dataset, config_n3m3(), subset);
    tables.push_back(greedy_rank(
        rankable, meta_for(config_n3m3(), instance.dataset.dataset_id, seed, 128)));
  }
  const StabilityReport report = rank_stability_report(tables);
  CHECK(report.mean_overlap >= 0.8);
}

TEST_CASE("ranking is deterministic for a fixed seed") {
  const auto instance = make_planted_model(55, 8, 1.0f, 200);
  const auto subset = calibration_subset(200, 100, 7);
  std::ostringstream a, b;
  for (std::ostringstream* out : {&a, &b}) {
    ToyRankingModel rankable(instance.model, instance.dataset, config_n3m3(), subset);
    write_rank_table(greedy_rank(rankable,
                                 meta_for(config_n3m3(), instance.dataset.dataset_id, 7, 100)),
                     *out);
  }
  CHECK(a.str() == b.str());
}

TEST_CASE("holdout split evaluates on the complement") {
  const auto instance = make_planted_model(66, 8, 1.0f, 100);
  const std::vector<int> subset = {0, 1, 2, 3, 4};
  ToyRankingModel calib(instance.model, instance.dataset, config_n3m3(), subset, false);
  ToyRankingModel holdout(instance.model, instance.dataset, config_n3m3(), subset, true);
  const auto layer = calib.layers().front();
  // 5 vs 95 samples: accuracies are quantized to different grids.
  const double acc_calib = calib.evaluate(layer, 0, {});
  const double acc_holdout = holdout.evaluate(layer, 0, {});
  CHECK(acc_calib * 5 == doctest::Approx(std::round(acc_calib * 5)).epsilon(1e-9));
  CHECK(acc_holdout * 95 == doctest::Approx(std::round(acc_holdout * 95)).epsilon(1e-9));
}

TEST_CASE("rank table text format round trips") {
  const auto instance = make_planted_model(77, 6, 1.0f, 120);
  ToyRankingModel rankable(instance.model, instance.dataset, config_n3m3(0.4));
  const RankTable table = greedy_rank(
      rankable, meta_for(config_n3m3(0.4), instance.dataset.dataset_id, 77, 120));

  std::ostringstream out;
  write_rank_table(table, out);
  std::istringstream in(out.str());
  const RankTable back = read_rank_table(in);
  CHECK(back.metadata.config.target_bits == 3);
  CHECK(back.metadata.config.important_ratio == 0.4);
  CHECK(back.metadata.dataset_id == table.metadata.dataset_id);
  CHECK(back.metadata.seed == 77);
  REQUIRE(back.layers.size() == table.layers.size());
  for (std::size_t l = 0; l < table.layers.size(); ++l)
    for (std::size_t i = 0; i < table.layers[l].entries.size(); ++i) {
      CHECK(back.layers[l].entries[i].channel == table.layers[l].entries[i].channel);
      CHECK(back.layers[l].entries[i].accuracy ==
            doctest::Approx(table.layers[l].entries[i].accuracy).epsilon(1e-12));
    }

  // A second serialization of the parsed table is byte-identical.
  std::ostringstream again;
  write_rank_table(back, again);
  CHECK(again.str() == out.str());
}

TEST_CASE("tampered rank table files are rejected") {
  SUBCASE("bad header") {
    std::istringstream in("# not a rank table\n");
    CHECK_THROWS_AS(read_rank_table(in), FormatError);
  }
  SUBCASE("channel indices must form a permutation") {
    std::istringstream in(
        "# dqa rank table v1\n"
        "n 3\nm 3\nratio 0.5\nhuffman dynamic\nseed 1\ndataset d\nsamples 2\n"
        "created now\nlayers 1\nlayer fc 2\nrank 0 0.9 0 0.8\n");
    CHECK_THROWS_AS(read_rank_table(in), FormatError);
  }
  SUBCASE("scores must be non-increasing") {
    std::istringstream in(
        "# dqa rank table v1\n"
        "n 3\nm 3\nratio 0.5\nhuffman dynamic\nseed 1\ndataset d\nsamples 2\n"
        "created now\nlayers 1\nlayer fc 2\nrank 0 0.5 1 0.8\n");
    CHECK_THROWS_AS(read_rank_table(in), FormatError);
  }
}

TEST_CASE("greedy table beats a random table for DQA accuracy on average") {
  double greedy_sum = 0.0, random_sum = 0.0;
  const QuantConfig config = config_n3m3(0.5);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto instance = make_planted_model(seed, 8, 1.0f, 200);
    ToyRankingModel rankable(instance.model, instance.dataset, config);
    const RankTable table =
        greedy_rank(rankable, meta_for(config, instance.dataset.dataset_id, seed, 200));
    greedy_sum += evaluate_accuracy(instance.model, instance.dataset, dqa_hook(config, table));

    // Random rank table over the same layer.
    Rng rng(seed * 1000 + 17);
    std::vector<double> scores(8);
    for (auto& s : scores) s = rng.uniform();
    const RankTable random_table = table_from_scores({{"features", scores}}, 0.5);
    random_sum +=
        evaluate_accuracy(instance.model, instance.dataset, dqa_hook(config, random_table));
  }
  CHECK(greedy_sum / 20.0 >= random_sum / 20.0);
}
