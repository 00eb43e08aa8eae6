// Command-line surface for the DQA pipeline: planted-instance generation,
// offline channel ranking, layer quantization round trips, and benchmark
// statistics over the toy inference engine.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dqa/bench.hpp"
#include "dqa/blob.hpp"
#include "dqa/byteio.hpp"
#include "dqa/pipeline.hpp"
#include "dqa/quant.hpp"
#include "dqa/ranking.hpp"
#include "dqa/toy_net.hpp"

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

struct QuantFlags {
  int bits = 3;
  int extra_bits = 3;
  double ratio = 0.5;
  std::string huffman_mode = "dynamic";

  dqa::QuantConfig config() const {
    dqa::QuantConfig c;
    c.target_bits = bits;
    c.extra_bits = extra_bits;
    c.important_ratio = ratio;
    c.huffman_mode = dqa::huffman_mode_from_string(huffman_mode);
    c.validate();
    return c;
  }
};

void add_quant_flags(CLI::App* cmd, QuantFlags& flags) {
  cmd->add_option("-n,--bits", flags.bits, "target bits n")->check(CLI::Range(1, 8));
  cmd->add_option("-m,--extra-bits", flags.extra_bits, "extra bits m for important channels")
      ->check(CLI::Range(0, 8));
  cmd->add_option("--ratio", flags.ratio, "important-channel ratio in [0,1]")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--huffman-mode", flags.huffman_mode, "huffman table mode")
      ->check(CLI::IsMember({"dynamic", "static"}));
}

std::map<std::string, std::vector<int>> important_from_rank(
    const std::optional<dqa::RankTable>& table, double ratio,
    const std::string& layer_id) {
  std::map<std::string, std::vector<int>> important;
  if (table) {
    if (table->find(layer_id))
      important[layer_id] = dqa::select_important(*table, layer_id, ratio);
    else
      throw dqa::UnknownLayer("rank table has no entry for layer '" + layer_id + "'");
  } else {
    important[layer_id] = {};
  }
  return important;
}

void write_text_or_stdout(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw dqa::IoError("cannot open '" + out_path + "' for writing");
  out << text;
  if (!out) throw dqa::IoError("write failed for '" + out_path + "'");
}

std::string error_report_text(const dqa::ErrorReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "values " << report.value_count << "\n"
      << "mean_abs_error " << report.mean_abs_error << "\n"
      << "max_abs_error " << report.max_abs_error << "\n"
      << "mean_re " << report.mean_re << "\n"
      << "clipped " << report.clipped_count << "\n";
  return out.str();
}

ordered_json error_report_json(const dqa::ErrorReport& report) {
  ordered_json j;
  j["values"] = report.value_count;
  j["mean_abs_error"] = report.mean_abs_error;
  j["max_abs_error"] = report.max_abs_error;
  j["mean_re"] = report.mean_re;
  j["clipped"] = report.clipped_count;
  return j;
}

int run(int argc, char** argv) {
  CLI::App app{"DQA activation quantization toolkit"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "emit a planted toy model + dataset");
  std::uint64_t gen_seed = 1;
  int gen_channels = 8;
  float gen_noise = 1.0f;
  int gen_samples = 400;
  std::string gen_out = ".";
  generate->add_option("--seed", gen_seed, "generator seed");
  generate->add_option("--channels", gen_channels, "channels at the capture layer")
      ->check(CLI::Range(2, 4096));
  generate->add_option("--noise", gen_noise, "noise channel amplitude (0 = silent)");
  generate->add_option("--samples", gen_samples, "dataset size")->check(CLI::Range(2, 1000000));
  generate->add_option("--out", gen_out, "output directory");

  // rank
  auto* rank = app.add_subcommand("rank", "greedy-rank activation channels offline");
  std::string rank_model, rank_data, rank_out = "rank_table.txt";
  QuantFlags rank_flags;
  std::uint64_t rank_seed = 1;
  int rank_samples = 256;
  bool rank_holdout = false;
  bool rank_count_evals = false;
  rank->add_option("--model", rank_model, "model file")->required();
  rank->add_option("--data", rank_data, "dataset file")->required();
  add_quant_flags(rank, rank_flags);
  rank->add_option("--seed", rank_seed, "calibration subset seed");
  rank->add_option("--samples", rank_samples, "calibration subset size");
  rank->add_flag("--holdout", rank_holdout, "evaluate on the held-out split");
  rank->add_flag("--count-evals", rank_count_evals, "print the evaluator call count");
  rank->add_option("--out", rank_out, "rank table output path");

  // quantize
  auto* quantize = app.add_subcommand("quantize", "quantize an activation dump into a blob");
  std::string q_input, q_rank, q_out = "layer.dqa";
  QuantFlags q_flags;
  quantize->add_option("--input", q_input, "activation dump file")->required();
  quantize->add_option("--rank", q_rank, "rank table (omit for no important channels)");
  add_quant_flags(quantize, q_flags);
  quantize->add_option("--out", q_out, "blob output path");

  // dequantize
  auto* dequantize = app.add_subcommand("dequantize", "reconstruct activations from a blob");
  std::string dq_input, dq_out = "recon.act";
  dequantize->add_option("--input", dq_input, "blob file")->required();
  dequantize->add_option("--out", dq_out, "activation dump output path");

  // roundtrip
  auto* roundtrip = app.add_subcommand(
      "roundtrip", "quantize, serialize, deserialize, de-quantize, report errors");
  std::string rt_input, rt_rank, rt_blob, rt_recon, rt_report = "text", rt_out;
  QuantFlags rt_flags;
  roundtrip->add_option("--input", rt_input, "activation dump file")->required();
  roundtrip->add_option("--rank", rt_rank, "rank table (omit for no important channels)");
  add_quant_flags(roundtrip, rt_flags);
  roundtrip->add_option("--out-blob", rt_blob, "also keep the intermediate blob");
  roundtrip->add_option("--out-recon", rt_recon, "also keep the reconstructed dump");
  roundtrip->add_option("--report", rt_report, "report format")
      ->check(CLI::IsMember({"text", "structured"}));
  roundtrip->add_option("--out", rt_out, "report output path (default stdout)");

  // bench
  auto* bench = app.add_subcommand("bench", "direct-vs-DQA benchmark over seeds");
  std::string b_model, b_data, b_rank, b_report = "text", b_out;
  std::vector<int> b_bits{3};
  int b_extra = 3;
  double b_ratio = 0.5;
  std::string b_huffman = "dynamic";
  std::vector<std::uint64_t> b_seeds{1};
  std::vector<std::string> b_methods{"direct", "dqa"};
  int b_calib = 256;
  bench->add_option("--model", b_model, "model file")->required();
  bench->add_option("--data", b_data, "dataset file")->required();
  bench->add_option("--rank", b_rank, "fixed rank table (omit to re-rank per seed)");
  bench->add_option("-n,--bits", b_bits, "target bit widths")->check(CLI::Range(1, 8));
  bench->add_option("-m,--extra-bits", b_extra, "extra bits m")->check(CLI::Range(0, 8));
  bench->add_option("--ratio", b_ratio, "important-channel ratio")->check(CLI::Range(0.0, 1.0));
  bench->add_option("--huffman-mode", b_huffman, "huffman table mode")
      ->check(CLI::IsMember({"dynamic", "static"}));
  bench->add_option("--seeds", b_seeds, "seeds, one replica each")->delimiter(',');
  bench->add_option("--methods", b_methods, "methods to run")
      ->delimiter(',')
      ->check(CLI::IsMember({"direct", "dqa"}));
  bench->add_option("--calib-samples", b_calib, "ranking calibration subset size");
  bench->add_option("--report", b_report, "report format")
      ->check(CLI::IsMember({"text", "structured"}));
  bench->add_option("--out", b_out, "report output path (default stdout)");

  // stats
  auto* stats = app.add_subcommand("stats", "per-layer shifting-error statistics");
  std::string s_model, s_data, s_rank, s_report = "text", s_out;
  QuantFlags s_flags;
  stats->add_option("--model", s_model, "model file")->required();
  stats->add_option("--data", s_data, "dataset file")->required();
  stats->add_option("--rank", s_rank, "rank table")->required();
  add_quant_flags(stats, s_flags);
  stats->add_option("--report", s_report, "report format")
      ->check(CLI::IsMember({"text", "structured"}));
  stats->add_option("--out", s_out, "report output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (generate->parsed()) {
    const auto instance = dqa::make_planted_model(gen_seed, gen_channels, gen_noise, gen_samples);
    fs::create_directories(gen_out);
    dqa::save_model(instance.model, fs::path(gen_out) / "model.bin");
    dqa::save_dataset(instance.dataset, fs::path(gen_out) / "dataset.bin");
    const auto activations = dqa::collect_activations(instance.model, instance.dataset);
    dqa::save_activations(activations.at(instance.capture_layer),
                          fs::path(gen_out) / "activations.bin");
    ordered_json meta;
    meta["seed"] = gen_seed;
    meta["channels"] = gen_channels;
    meta["noise"] = gen_noise;
    meta["samples"] = gen_samples;
    meta["capture_layer"] = instance.capture_layer;
    meta["planted_channels"] = instance.planted_channels;
    std::ofstream meta_out(fs::path(gen_out) / "meta.json", std::ios::trunc);
    if (!meta_out) throw dqa::IoError("cannot write meta.json");
    meta_out << meta.dump(2) << "\n";
    std::cout << "wrote model.bin dataset.bin activations.bin meta.json to " << gen_out << "\n";
    return 0;
  }

  if (rank->parsed()) {
    const auto model = dqa::load_model(rank_model);
    const auto dataset = dqa::load_dataset(rank_data);
    const auto config = rank_flags.config();
    const auto subset = dqa::calibration_subset(
        dataset.sample_count(), std::min(rank_samples, dataset.sample_count()), rank_seed);
    dqa::ToyRankingModel rankable(model, dataset, config, subset, rank_holdout);
    dqa::CountingModel counting(rankable);
    dqa::RankTableMetadata meta;
    meta.config = config;
    meta.dataset_id = dataset.dataset_id;
    meta.seed = rank_seed;
    meta.sample_count = static_cast<int>(subset.size());
    meta.created = dqa::reproducible_timestamp();
    const auto table = dqa::greedy_rank(counting, std::move(meta));
    dqa::save_rank_table(table, rank_out);
    if (rank_count_evals) std::cout << "evaluator calls: " << counting.calls() << "\n";
    std::cout << "wrote rank table to " << rank_out << "\n";
    return 0;
  }

  if (quantize->parsed()) {
    const auto tensor = dqa::load_activations(q_input);
    const auto config = q_flags.config();
    std::optional<dqa::RankTable> table;
    if (!q_rank.empty()) table = dqa::load_rank_table(q_rank);
    const auto important = important_from_rank(table, config.important_ratio, tensor.layer_id);
    const auto q =
        dqa::dqa_quantize_layer(tensor, config, important.at(tensor.layer_id),
                                dqa::make_encoder(config, tensor, important.at(tensor.layer_id)));
    const auto bytes = dqa::serialize(q);
    dqa::write_file(q_out, bytes);
    std::cout << "wrote " << bytes.size() << " bytes to " << q_out << "\n";
    return 0;
  }

  if (dequantize->parsed()) {
    const auto bytes = dqa::read_file(dq_input);
    const auto q = dqa::deserialize(bytes);
    dqa::save_activations(dqa::dqa_dequantize_layer(q), dq_out);
    std::cout << "wrote reconstructed activations to " << dq_out << "\n";
    return 0;
  }

  if (roundtrip->parsed()) {
    const auto tensor = dqa::load_activations(rt_input);
    const auto config = rt_flags.config();
    std::optional<dqa::RankTable> table;
    if (!rt_rank.empty()) table = dqa::load_rank_table(rt_rank);
    const auto important = important_from_rank(table, config.important_ratio, tensor.layer_id);
    const auto q =
        dqa::dqa_quantize_layer(tensor, config, important.at(tensor.layer_id),
                                dqa::make_encoder(config, tensor, important.at(tensor.layer_id)));
    const auto bytes = dqa::serialize(q);
    if (!rt_blob.empty()) dqa::write_file(rt_blob, bytes);
    const auto restored = dqa::deserialize(bytes);
    const auto recon = dqa::dqa_dequantize_layer(restored);
    if (!rt_recon.empty()) dqa::save_activations(recon, rt_recon);
    const auto report = dqa::measure_quant_error(tensor, recon, restored);
    if (rt_report == "structured") {
      ordered_json j = error_report_json(report);
      j["blob_bytes"] = bytes.size();
      write_text_or_stdout(j.dump(2) + "\n", rt_out);
    } else {
      write_text_or_stdout(error_report_text(report) +
                               "blob_bytes " + std::to_string(bytes.size()) + "\n",
                           rt_out);
    }
    return 0;
  }

  if (bench->parsed()) {
    const auto model = dqa::load_model(b_model);
    const auto dataset = dqa::load_dataset(b_data);
    dqa::BenchConfig config;
    config.bits = b_bits;
    config.extra_bits = b_extra;
    config.important_ratio = b_ratio;
    config.huffman_mode = dqa::huffman_mode_from_string(b_huffman);
    config.seeds = b_seeds;
    config.methods.clear();
    for (const auto& name : b_methods) config.methods.push_back(dqa::method_from_string(name));
    config.calib_samples = b_calib;
    std::optional<dqa::RankTable> table;
    if (!b_rank.empty()) table = dqa::load_rank_table(b_rank);
    const auto report = dqa::run_bench(model, dataset, table, config);
    std::ostringstream out;
    if (b_report == "structured")
      dqa::write_report_json(report, out);
    else
      dqa::write_report_text(report, out);
    write_text_or_stdout(out.str(), b_out);
    return 0;
  }

  if (stats->parsed()) {
    const auto model = dqa::load_model(s_model);
    const auto dataset = dqa::load_dataset(s_data);
    const auto table = dqa::load_rank_table(s_rank);
    const auto config = s_flags.config();
    const auto activations = dqa::collect_activations(model, dataset);
    std::map<std::string, std::vector<int>> important;
    for (const auto& [layer_id, tensor] : activations)
      important[layer_id] = dqa::select_important(table, layer_id, config.important_ratio);
    const auto layer_stats = dqa::quantize_dataset_layers(
        activations, important, config,
        config.huffman_mode == dqa::HuffmanMode::kStatic ? &activations : nullptr);
    if (s_report == "structured") {
      ordered_json root;
      root["report_version"] = 1;
      root["dataset"] = dataset.dataset_id;
      root["bits"] = config.target_bits;
      root["extra_bits"] = config.extra_bits;
      ordered_json layers = ordered_json::array();
      for (const auto& layer : layer_stats) {
        ordered_json j;
        j["layer"] = layer.layer_id;
        j["symbol_count"] = layer.histogram.total();
        j["counts"] = layer.histogram.counts;
        j["entropy_bits"] = layer.entropy;
        j["compression_ratio_payload"] = layer.ratio_payload;
        j["compression_ratio_with_table"] = layer.ratio_with_table;
        j["error"] = error_report_json(layer.error);
        j["dqa_total_bits"] = layer.memory.dqa_total_bits;
        j["direct_total_bits"] = layer.memory.direct_total_bits;
        layers.push_back(j);
      }
      root["layers"] = layers;
      write_text_or_stdout(root.dump(2) + "\n", s_out);
    } else {
      std::ostringstream out;
      out.precision(6);
      for (const auto& layer : layer_stats) {
        out << "layer " << layer.layer_id << "\n";
        out << "  symbols " << layer.histogram.total() << " entropy " << layer.entropy
            << " ratio " << layer.ratio_payload << " ratio+table " << layer.ratio_with_table
            << "\n  counts";
        for (auto c : layer.histogram.counts) out << " " << c;
        out << "\n  " << "mean_abs_error " << layer.error.mean_abs_error << " mean_re "
            << layer.error.mean_re << " clipped " << layer.error.clipped_count << "\n";
      }
      write_text_or_stdout(out.str(), s_out);
    }
    return 0;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dqa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::logic_error& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
