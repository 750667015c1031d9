#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stsr/tensor.hpp"

namespace stsr {

/// Per-gene RMSE over spatial positions of one [G, H, W] map pair.
std::vector<double> rmse(const Tensor& pred, const Tensor& truth);

/// Per-gene Pearson correlation over spatial positions. A gene whose truth map is
/// constant has no defined correlation and is reported as nullopt.
std::vector<std::optional<double>> pcc(const Tensor& pred, const Tensor& truth);

/// Symmetric G x G Pearson matrix over all pooled pixels. Genes with zero variance
/// have their row and column flagged absent.
struct GeneCorrelationMatrix {
  std::size_t genes = 0;
  std::vector<double> values;
  std::vector<bool> defined;

  double at(std::size_t i, std::size_t j) const { return values[i * genes + j]; }
  /// Frobenius distance over entries defined in both matrices.
  double frobenius_distance(const GeneCorrelationMatrix& other) const;
};

/// maps: one [G, H, W] tensor per sample.
GeneCorrelationMatrix gene_correlation(std::span<const Tensor> maps);

struct MetricReport {
  std::string label;
  std::string config_fingerprint;
  std::size_t sample_count = 0;
  std::vector<std::int32_t> gene_ids;
  std::vector<double> rmse;
  std::vector<std::optional<double>> pcc;
  double mean_rmse = 0.0;
  std::optional<double> mean_pcc;

  bool operator==(const MetricReport&) const = default;
};

/// Per-gene metrics averaged over samples; aggregates are means over genes.
MetricReport evaluate_maps(std::span<const Tensor> preds, std::span<const Tensor> truths,
                           std::vector<std::int32_t> gene_ids, std::string label, std::string config_fingerprint);

/// Rounds to 6 significant digits, the precision written to reports.
double round_significant(double value);

enum class ReportFormat { json, csv };

/// Writes one or more reports. JSON holds an object per report; CSV one row per gene
/// plus a "mean" row, with a header naming every column.
void emit_reports(std::span<const MetricReport> reports, const std::filesystem::path& path, ReportFormat format);
std::vector<MetricReport> load_reports(const std::filesystem::path& path, ReportFormat format);

std::string reports_to_json(std::span<const MetricReport> reports);
std::vector<MetricReport> reports_from_json(const std::string& text);
std::string reports_to_csv(std::span<const MetricReport> reports);
std::vector<MetricReport> reports_from_csv(const std::string& text);

inline constexpr const char* kCsvHeader = "label,config_fingerprint,sample_count,gene_index,gene_id,rmse,pcc";

/// Writes a greyscale ASCII PPM (P3) of one [H, W] plane with values clamped to [0, 1].
void write_heatmap(const Tensor& map, std::size_t channel, const std::filesystem::path& path);

}  // namespace stsr
