#include "dqa/bench.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dqa {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

std::string to_string(Method method) {
  return method == Method::kDirect ? "direct" : "dqa";
}

Method method_from_string(const std::string& name) {
  if (name == "direct") return Method::kDirect;
  if (name == "dqa") return Method::kDqa;
  throw OutOfRange("unknown method '" + name + "'");
}

void BenchConfig::validate() const {
  if (seeds.empty()) throw OutOfRange("bench needs at least one seed");
  if (methods.empty()) throw OutOfRange("bench needs at least one method");
  if (bits.empty()) throw OutOfRange("bench needs at least one bit width");
  if (calib_samples < 1) throw OutOfRange("calibration sample count must be positive");
  for (int n : bits) quant_config(n).validate();
}

QuantConfig BenchConfig::quant_config(int n) const {
  QuantConfig config;
  config.target_bits = n;
  config.extra_bits = std::min(extra_bits, n);
  config.important_ratio = important_ratio;
  config.huffman_mode = huffman_mode;
  return config;
}

std::vector<LayerStats> quantize_dataset_layers(
    const std::map<std::string, ActivationTensor>& activations,
    const std::map<std::string, std::vector<int>>& important_per_layer, const QuantConfig& config,
    const std::map<std::string, ActivationTensor>* calibration) {
  std::vector<LayerStats> stats;
  for (const auto& [layer_id, tensor] : activations) {
    const auto important_it = important_per_layer.find(layer_id);
    const std::vector<int> important =
        important_it != important_per_layer.end() ? important_it->second : std::vector<int>{};

    ShiftErrorEncoder encoder = dynamic_huffman_encoder();
    if (config.huffman_mode == HuffmanMode::kStatic && calibration) {
      const auto calib_it = calibration->find(layer_id);
      if (calib_it != calibration->end())
        encoder = make_encoder(config, calib_it->second, important);
    }

    LayerStats layer;
    layer.layer_id = layer_id;
    const QuantizedLayer q = dqa_quantize_layer(tensor, config, important, encoder);
    const ActivationTensor recon = dqa_dequantize_layer(q);
    layer.error = measure_quant_error(tensor, recon, q);
    layer.memory = memory_report(q);
    if (q.has_error_section()) {
      const auto symbols = decode(*q.error_stream, *q.huffman_table);
      layer.histogram = build_histogram(symbols, q.m);
      layer.entropy = entropy_bits(layer.histogram);
      layer.raw_symbol_bits = std::uint64_t{q.error_stream->symbol_count} * q.m;
      layer.payload_bits = q.error_stream->bit_count;
      layer.table_bits = dqa::table_bits(*q.huffman_table);
      layer.ratio_payload =
          compression_ratio(layer.raw_symbol_bits, *q.error_stream, layer.table_bits, false);
      layer.ratio_with_table =
          compression_ratio(layer.raw_symbol_bits, *q.error_stream, layer.table_bits, true);
    } else {
      layer.histogram.m = config.extra_bits;
      layer.histogram.counts.assign(std::size_t{1} << config.extra_bits, 0);
    }
    stats.push_back(std::move(layer));
  }
  return stats;
}

BenchReport run_bench(const ToyModel& model, const ToyDataset& dataset,
                      const std::optional<RankTable>& fixed_rank, const BenchConfig& config) {
  config.validate();
  dataset.validate();

  BenchReport report;
  report.config = config;
  report.dataset_id = dataset.dataset_id;

  const auto activations = collect_activations(model, dataset);
  std::map<std::pair<int, std::string>, SymbolHistogram> merged_histograms;

  for (Method method : config.methods) {
    for (int n : config.bits) {
      const QuantConfig quant = config.quant_config(n);
      BenchCell cell;
      cell.method = method;
      cell.n = n;

      double acc_sum = 0.0;
      double abs_sum = 0.0, re_sum = 0.0, ratio_payload_sum = 0.0, ratio_table_sum = 0.0;
      double overhead_sum = 0.0, vs_float_sum = 0.0;
      double raw_bits_sum = 0.0, direct_bits_sum = 0.0, dqa_bits_sum = 0.0;

      for (std::uint64_t seed : config.seeds) {
        std::map<std::string, std::vector<int>> important;
        std::optional<ToyDataset> calib_data;
        if (method == Method::kDqa) {
          RankTable table;
          if (fixed_rank) {
            table = *fixed_rank;
          } else {
            const auto subset = calibration_subset(
                dataset.sample_count(), std::min(config.calib_samples, dataset.sample_count()),
                seed);
            ToyRankingModel rankable(model, dataset, quant, subset);
            RankTableMetadata meta;
            meta.config = quant;
            meta.dataset_id = dataset.dataset_id;
            meta.seed = seed;
            meta.sample_count = static_cast<int>(subset.size());
            table = greedy_rank(rankable, std::move(meta));
            if (quant.huffman_mode == HuffmanMode::kStatic) {
              calib_data.emplace();
              calib_data->dataset_id = dataset.dataset_id;
              calib_data->num_classes = dataset.num_classes;
              for (int i : subset) {
                calib_data->samples.push_back(dataset.samples[i]);
                calib_data->labels.push_back(dataset.labels[i]);
              }
            }
          }
          for (const auto& layer : table.layers)
            important[layer.layer_id] =
                select_important(table, layer.layer_id, quant.important_ratio);
        } else {
          for (const auto& [layer_id, tensor] : activations) important[layer_id] = {};
        }

        const QuantHook hook = method == Method::kDqa
                                   ? dqa_hook(quant, important)
                                   : direct_hook(n);
        acc_sum += evaluate_accuracy(model, dataset, hook);

        std::map<std::string, ActivationTensor> calib_tensors;
        if (calib_data) calib_tensors = collect_activations(model, *calib_data);
        const auto stats = quantize_dataset_layers(activations, important, quant,
                                                   calib_data ? &calib_tensors : nullptr);

        double abs_acc = 0.0, re_acc = 0.0;
        std::int64_t values = 0, re_values = 0;
        std::uint64_t raw_sym_bits = 0, payload_total = 0, table_total = 0;
        std::int64_t raw_bits = 0, direct_bits = 0, dqa_bits = 0;
        for (const auto& layer : stats) {
          abs_acc += layer.error.mean_abs_error * static_cast<double>(layer.error.value_count);
          values += layer.error.value_count;
          const std::int64_t non_clipped = layer.error.value_count - layer.error.clipped_count;
          re_acc += layer.error.mean_re * static_cast<double>(non_clipped);
          re_values += non_clipped;
          cell.max_abs_error = std::max(cell.max_abs_error, layer.error.max_abs_error);
          cell.clipped_count += layer.error.clipped_count;
          raw_bits += layer.memory.raw_float_bits;
          direct_bits += layer.memory.direct_total_bits;
          dqa_bits += layer.memory.dqa_total_bits;
          raw_sym_bits += layer.raw_symbol_bits;
          payload_total += layer.payload_bits;
          table_total += layer.table_bits;
          if (layer.histogram.total() > 0) {
            auto& merged = merged_histograms[{n, layer.layer_id}];
            if (merged.counts.empty()) merged = layer.histogram;
            else
              for (std::size_t k = 0; k < merged.counts.size(); ++k)
                merged.counts[k] += layer.histogram.counts[k];
          }
        }
        abs_sum += values > 0 ? abs_acc / static_cast<double>(values) : 0.0;
        re_sum += re_values > 0 ? re_acc / static_cast<double>(re_values) : 0.0;
        ratio_payload_sum +=
            payload_total > 0
                ? static_cast<double>(raw_sym_bits) / static_cast<double>(payload_total)
                : 1.0;
        ratio_table_sum += payload_total + table_total > 0
                               ? static_cast<double>(raw_sym_bits) /
                                     static_cast<double>(payload_total + table_total)
                               : 1.0;
        raw_bits_sum += static_cast<double>(raw_bits);
        direct_bits_sum += static_cast<double>(direct_bits);
        dqa_bits_sum += static_cast<double>(dqa_bits);
        overhead_sum += direct_bits > 0
                            ? 100.0 * static_cast<double>(dqa_bits - direct_bits) /
                                  static_cast<double>(direct_bits)
                            : 0.0;
        vs_float_sum +=
            dqa_bits > 0 ? static_cast<double>(raw_bits) / static_cast<double>(dqa_bits) : 0.0;
      }

      const double runs = static_cast<double>(config.seeds.size());
      cell.mean_accuracy = acc_sum / runs;
      cell.mean_abs_error = abs_sum / runs;
      cell.mean_re = re_sum / runs;
      cell.ratio_payload = ratio_payload_sum / runs;
      cell.ratio_with_table = ratio_table_sum / runs;
      cell.raw_float_bits = static_cast<std::int64_t>(raw_bits_sum / runs);
      cell.direct_total_bits = static_cast<std::int64_t>(direct_bits_sum / runs);
      cell.dqa_total_bits = static_cast<std::int64_t>(dqa_bits_sum / runs);
      cell.overhead_pct = overhead_sum / runs;
      cell.compression_vs_float = vs_float_sum / runs;
      report.cells.push_back(cell);
    }
  }

  for (auto& [key, hist] : merged_histograms)
    report.histograms.push_back({key.first, key.second, std::move(hist)});
  return report;
}

void write_report_text(const BenchReport& report, std::ostream& out) {
  out << "dataset: " << report.dataset_id << "\n";
  out << "seeds:";
  for (auto seed : report.config.seeds) out << " " << seed;
  out << "\nextra bits m=" << report.config.extra_bits << " ratio="
      << report.config.important_ratio << " huffman=" << to_string(report.config.huffman_mode)
      << "\n\n";
  out << std::left << std::setw(8) << "method" << std::setw(6) << "bits" << std::setw(12)
      << "accuracy" << std::setw(14) << "mean|err|" << std::setw(14) << "max|err|"
      << std::setw(10) << "re" << std::setw(10) << "ratio" << std::setw(12) << "ratio+tbl"
      << std::setw(12) << "bits/value" << "\n";
  for (const auto& cell : report.cells) {
    const double per_value =
        cell.raw_float_bits > 0
            ? 32.0 * static_cast<double>(cell.dqa_total_bits) /
                  static_cast<double>(cell.raw_float_bits)
            : 0.0;
    out << std::left << std::setw(8) << to_string(cell.method) << std::setw(6) << cell.n
        << std::setw(12) << std::setprecision(6) << cell.mean_accuracy << std::setw(14)
        << std::setprecision(6) << cell.mean_abs_error << std::setw(14) << cell.max_abs_error
        << std::setw(10) << std::setprecision(4) << cell.mean_re << std::setw(10)
        << cell.ratio_payload << std::setw(12) << cell.ratio_with_table << std::setw(12)
        << per_value << "\n";
  }
  if (!report.histograms.empty()) {
    out << "\nshifting-error histograms (counts per low-bit pattern):\n";
    for (const auto& record : report.histograms) {
      out << "n=" << record.n << " layer=" << record.layer_id << ":";
      for (auto count : record.histogram.counts) out << " " << count;
      out << "\n";
    }
  }
}

void write_report_json(const BenchReport& report, std::ostream& out) {
  ordered_json root;
  root["report_version"] = 1;
  ordered_json config;
  config["bits"] = report.config.bits;
  config["extra_bits"] = report.config.extra_bits;
  config["important_ratio"] = report.config.important_ratio;
  config["huffman_mode"] = to_string(report.config.huffman_mode);
  config["seeds"] = report.config.seeds;
  std::vector<std::string> methods;
  for (Method method : report.config.methods) methods.push_back(to_string(method));
  config["methods"] = methods;
  config["calib_samples"] = report.config.calib_samples;
  root["config"] = config;
  root["dataset"] = report.dataset_id;

  ordered_json cells = ordered_json::array();
  for (const auto& cell : report.cells) {
    ordered_json c;
    c["method"] = to_string(cell.method);
    c["bits"] = cell.n;
    c["mean_accuracy"] = format_double(cell.mean_accuracy);
    c["mean_abs_error"] = format_double(cell.mean_abs_error);
    c["max_abs_error"] = format_double(cell.max_abs_error);
    c["mean_re"] = format_double(cell.mean_re);
    c["clipped_count"] = cell.clipped_count;
    c["compression_ratio_payload"] = format_double(cell.ratio_payload);
    c["compression_ratio_with_table"] = format_double(cell.ratio_with_table);
    c["raw_float_bits"] = cell.raw_float_bits;
    c["direct_total_bits"] = cell.direct_total_bits;
    c["dqa_total_bits"] = cell.dqa_total_bits;
    c["overhead_pct"] = format_double(cell.overhead_pct);
    c["compression_vs_float"] = format_double(cell.compression_vs_float);
    cells.push_back(c);
  }
  root["cells"] = cells;

  ordered_json histograms = ordered_json::array();
  for (const auto& record : report.histograms) {
    ordered_json h;
    h["bits"] = record.n;
    h["layer"] = record.layer_id;
    h["m"] = record.histogram.m;
    h["counts"] = record.histogram.counts;
    h["symbol_count"] = record.histogram.total();
    histograms.push_back(h);
  }
  root["histograms"] = histograms;
  out << root.dump(2) << "\n";
}

}  // namespace dqa
