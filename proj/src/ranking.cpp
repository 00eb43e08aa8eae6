#include "dqa/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace dqa {

namespace {

std::string format_score(double score) {
  std::ostringstream out;
  out.precision(17);
  out << score;
  return out.str();
}

double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::vector<int> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(uni));
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

}  // namespace

const LayerRank* RankTable::find(const std::string& layer_id) const {
  for (const auto& layer : layers)
    if (layer.layer_id == layer_id) return &layer;
  return nullptr;
}

RankTable greedy_rank(const RankableModel& model, RankTableMetadata metadata) {
  RankTable table;
  table.metadata = std::move(metadata);
  MostImportantMap previous;

  for (const LayerInfo& layer : model.layers()) {
    LayerRank rank;
    rank.layer_id = layer.layer_id;
    double highest_accuracy = 0.0;
    std::optional<int> most_important;
    for (int channel = 0; channel < layer.channel_count; ++channel) {
      double accuracy = 0.0;
      try {
        accuracy = model.evaluate(layer, channel, previous);
      } catch (const std::exception& e) {
        throw EvaluatorFailure("layer '" + layer.layer_id + "' channel " +
                               std::to_string(channel) + ": " + e.what());
      }
      rank.entries.push_back({channel, accuracy});
      if (accuracy > highest_accuracy) {  // strict: first maximum wins
        highest_accuracy = accuracy;
        most_important = channel;
      }
    }
    if (most_important) previous[layer.layer_id] = *most_important;
    std::sort(rank.entries.begin(), rank.entries.end(), [](const RankEntry& a, const RankEntry& b) {
      if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
      return a.channel < b.channel;
    });
    table.layers.push_back(std::move(rank));
  }
  return table;
}

std::vector<int> select_important(const RankTable& table, const std::string& layer_id,
                                  double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw OutOfRange("ratio must be in [0, 1]");
  const LayerRank* layer = table.find(layer_id);
  if (!layer) throw UnknownLayer("no rank entry for layer '" + layer_id + "'");
  const auto count =
      static_cast<std::size_t>(std::lround(ratio * static_cast<double>(layer->entries.size())));
  std::vector<int> selected;
  selected.reserve(count);
  for (std::size_t i = 0; i < count && i < layer->entries.size(); ++i)
    selected.push_back(layer->entries[i].channel);
  std::sort(selected.begin(), selected.end());
  return selected;
}

StabilityReport rank_stability_report(std::span<const RankTable> tables) {
  if (tables.size() < 2) throw ModelMismatch("stability needs at least two rank tables");
  const RankTable& first = tables.front();
  for (const RankTable& table : tables.subspan(1)) {
    if (table.layers.size() != first.layers.size())
      throw ModelMismatch("rank tables disagree on layer count");
    for (std::size_t i = 0; i < first.layers.size(); ++i)
      if (table.layers[i].layer_id != first.layers[i].layer_id ||
          table.layers[i].entries.size() != first.layers[i].entries.size())
        throw ModelMismatch("rank tables describe different models");
  }

  StabilityReport report;
  double sum = 0.0;
  for (const auto& layer : first.layers) {
    std::vector<std::vector<int>> selections;
    selections.reserve(tables.size());
    for (const RankTable& table : tables)
      selections.push_back(
          select_important(table, layer.layer_id, table.metadata.config.important_ratio));
    double pair_sum = 0.0;
    int pairs = 0;
    for (std::size_t i = 0; i < selections.size(); ++i)
      for (std::size_t j = i + 1; j < selections.size(); ++j) {
        pair_sum += jaccard(selections[i], selections[j]);
        ++pairs;
      }
    const double overlap = pair_sum / pairs;
    report.per_layer.emplace_back(layer.layer_id, overlap);
    sum += overlap;
  }
  report.mean_overlap = report.per_layer.empty() ? 0.0 : sum / report.per_layer.size();
  return report;
}

std::string reproducible_timestamp() {
  std::time_t now = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const long long value = std::strtoll(epoch, &end, 10);
    if (end != epoch) now = static_cast<std::time_t>(value);
  }
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

void write_rank_table(const RankTable& table, std::ostream& out) {
  const auto& meta = table.metadata;
  out << "# dqa rank table v1\n";
  out << "n " << meta.config.target_bits << "\n";
  out << "m " << meta.config.extra_bits << "\n";
  out << "ratio " << format_score(meta.config.important_ratio) << "\n";
  out << "huffman " << to_string(meta.config.huffman_mode) << "\n";
  out << "seed " << meta.seed << "\n";
  out << "dataset " << meta.dataset_id << "\n";
  out << "samples " << meta.sample_count << "\n";
  out << "created " << meta.created << "\n";
  out << "layers " << table.layers.size() << "\n";
  for (const auto& layer : table.layers) {
    out << "layer " << layer.layer_id << " " << layer.entries.size() << "\n";
    out << "rank";
    for (const auto& entry : layer.entries)
      out << " " << entry.channel << " " << format_score(entry.accuracy);
    out << "\n";
  }
}

namespace {

std::string expect_key(std::istream& in, const std::string& key) {
  std::string token;
  if (!(in >> token) || token != key)
    throw FormatError("rank table: expected '" + key + "', got '" + token + "'");
  std::string value;
  if (!(in >> value)) throw FormatError("rank table: missing value for '" + key + "'");
  return value;
}

}  // namespace

RankTable read_rank_table(std::istream& in) {
  std::string header;
  std::getline(in, header);
  if (header != "# dqa rank table v1") throw FormatError("rank table: bad header");

  RankTable table;
  auto& meta = table.metadata;
  meta.config.target_bits = std::stoi(expect_key(in, "n"));
  meta.config.extra_bits = std::stoi(expect_key(in, "m"));
  meta.config.important_ratio = std::stod(expect_key(in, "ratio"));
  meta.config.huffman_mode = huffman_mode_from_string(expect_key(in, "huffman"));
  meta.seed = std::stoull(expect_key(in, "seed"));
  meta.dataset_id = expect_key(in, "dataset");
  meta.sample_count = std::stoi(expect_key(in, "samples"));
  meta.created = expect_key(in, "created");
  const int layer_count = std::stoi(expect_key(in, "layers"));

  for (int l = 0; l < layer_count; ++l) {
    std::string token;
    if (!(in >> token) || token != "layer") throw FormatError("rank table: expected 'layer'");
    LayerRank layer;
    int channels = 0;
    if (!(in >> layer.layer_id >> channels)) throw FormatError("rank table: bad layer record");
    if (!(in >> token) || token != "rank") throw FormatError("rank table: expected 'rank'");
    std::set<int> seen;
    for (int c = 0; c < channels; ++c) {
      RankEntry entry;
      if (!(in >> entry.channel >> entry.accuracy))
        throw FormatError("rank table: bad rank entry");
      if (entry.channel < 0 || entry.channel >= channels || !seen.insert(entry.channel).second)
        throw FormatError("rank table: channels are not a permutation");
      if (c > 0 && entry.accuracy > layer.entries.back().accuracy)
        throw FormatError("rank table: scores are not non-increasing");
      layer.entries.push_back(entry);
    }
    table.layers.push_back(std::move(layer));
  }
  return table;
}

void save_rank_table(const RankTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_rank_table(table, out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

RankTable load_rank_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_rank_table(in);
}

}  // namespace dqa
