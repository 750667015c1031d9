#include "stsr/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stsr/errors.hpp"

namespace stsr {

namespace {

using ordered_json = nlohmann::ordered_json;

void require_maps(const Tensor& pred, const Tensor& truth, const char* what) {
  if (pred.rank() != 3 || pred.shape() != truth.shape()) {
    throw DimensionError(std::string(what) + ": prediction " + shape_string(pred.shape()) + " and truth " +
                         shape_string(truth.shape()) + " must be equal [G, H, W]");
  }
}

/// Pearson correlation of two equally long double sequences; nullopt when either is constant.
std::optional<double> pearson(const double* a, const double* b, std::size_t n, std::size_t stride_a = 1,
                              std::size_t stride_b = 1) {
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i * stride_a];
    mb += b[i * stride_b];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i * stride_a] - ma;
    const double db = b[i * stride_b] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) {
    return std::nullopt;
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string() + " for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << text;
  if (!out) {
    throw IoError("failed writing " + path.string());
  }
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) {
    out.push_back(field);
  }
  if (!line.empty() && line.back() == sep) {
    out.emplace_back();
  }
  return out;
}

double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) {
      throw FormatError("");
    }
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("report field ") + what + " is not a number: '" + s + "'");
  }
}

}  // namespace

std::vector<double> rmse(const Tensor& pred, const Tensor& truth) {
  require_maps(pred, truth, "rmse");
  const std::size_t g = pred.dim(0);
  const std::size_t plane = pred.dim(1) * pred.dim(2);
  std::vector<double> out(g);
  for (std::size_t c = 0; c < g; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = static_cast<double>(pred[c * plane + i]) - truth[c * plane + i];
      s += d * d;
    }
    out[c] = std::sqrt(s / static_cast<double>(plane));
  }
  return out;
}

std::vector<std::optional<double>> pcc(const Tensor& pred, const Tensor& truth) {
  require_maps(pred, truth, "pcc");
  const std::size_t g = pred.dim(0);
  const std::size_t plane = pred.dim(1) * pred.dim(2);
  std::vector<std::optional<double>> out(g);
  std::vector<double> a(plane);
  std::vector<double> b(plane);
  for (std::size_t c = 0; c < g; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      a[i] = pred[c * plane + i];
      b[i] = truth[c * plane + i];
    }
    const auto r = pearson(a.data(), b.data(), plane);
    // A constant prediction against a varying truth is a legitimate zero correlation.
    const bool truth_varies = pearson(b.data(), b.data(), plane).has_value();
    out[c] = r ? r : (truth_varies ? std::optional<double>(0.0) : std::nullopt);
  }
  return out;
}

double GeneCorrelationMatrix::frobenius_distance(const GeneCorrelationMatrix& other) const {
  if (other.genes != genes) {
    throw DimensionError("gene correlation matrices differ in size");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < genes; ++i) {
    for (std::size_t j = 0; j < genes; ++j) {
      if (defined[i] && defined[j] && other.defined[i] && other.defined[j]) {
        const double d = at(i, j) - other.at(i, j);
        s += d * d;
      }
    }
  }
  return std::sqrt(s);
}

GeneCorrelationMatrix gene_correlation(std::span<const Tensor> maps) {
  if (maps.empty()) {
    throw InvalidArgument("gene correlation needs at least one map");
  }
  const std::size_t g = maps.front().dim(0);
  std::size_t pixels = 0;
  for (const auto& m : maps) {
    if (m.rank() != 3 || m.dim(0) != g) {
      throw DimensionError("gene correlation maps must all be [" + std::to_string(g) + ", H, W], got " +
                           shape_string(m.shape()));
    }
    pixels += m.dim(1) * m.dim(2);
  }
  if (pixels < 2) {
    throw InvalidArgument("gene correlation needs at least two spatial observations");
  }
  // Pooled [pixels, G] table in double.
  std::vector<double> table(pixels * g);
  std::size_t row = 0;
  for (const auto& m : maps) {
    const std::size_t plane = m.dim(1) * m.dim(2);
    for (std::size_t i = 0; i < plane; ++i, ++row) {
      for (std::size_t c = 0; c < g; ++c) {
        table[row * g + c] = m[c * plane + i];
      }
    }
  }
  GeneCorrelationMatrix out;
  out.genes = g;
  out.values.assign(g * g, std::nan(""));
  out.defined.assign(g, false);
  for (std::size_t c = 0; c < g; ++c) {
    out.defined[c] = pearson(table.data() + c, table.data() + c, pixels, g, g).has_value();
  }
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = i; j < g; ++j) {
      if (out.defined[i] && out.defined[j]) {
        const double r = i == j ? 1.0 : *pearson(table.data() + i, table.data() + j, pixels, g, g);
        out.values[i * g + j] = r;
        out.values[j * g + i] = r;
      }
    }
  }
  return out;
}

MetricReport evaluate_maps(std::span<const Tensor> preds, std::span<const Tensor> truths,
                           std::vector<std::int32_t> gene_ids, std::string label, std::string config_fingerprint) {
  if (preds.size() != truths.size() || preds.empty()) {
    throw InvalidArgument("evaluation needs equally many predictions and truths, at least one");
  }
  const std::size_t g = truths.front().dim(0);
  if (gene_ids.size() != g) {
    throw DimensionError("gene id list of " + std::to_string(gene_ids.size()) + " for maps with " +
                         std::to_string(g) + " genes");
  }
  MetricReport r;
  r.label = std::move(label);
  r.config_fingerprint = std::move(config_fingerprint);
  r.sample_count = preds.size();
  r.gene_ids = std::move(gene_ids);
  r.rmse.assign(g, 0.0);
  std::vector<double> pcc_sum(g, 0.0);
  std::vector<std::size_t> pcc_count(g, 0);
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto e = rmse(preds[s], truths[s]);
    const auto p = pcc(preds[s], truths[s]);
    for (std::size_t c = 0; c < g; ++c) {
      r.rmse[c] += e[c] / static_cast<double>(preds.size());
      if (p[c]) {
        pcc_sum[c] += *p[c];
        ++pcc_count[c];
      }
    }
  }
  r.pcc.resize(g);
  double pcc_total = 0.0;
  std::size_t pcc_genes = 0;
  for (std::size_t c = 0; c < g; ++c) {
    r.mean_rmse += r.rmse[c] / static_cast<double>(g);
    if (pcc_count[c] > 0) {
      r.pcc[c] = pcc_sum[c] / static_cast<double>(pcc_count[c]);
      pcc_total += *r.pcc[c];
      ++pcc_genes;
    }
  }
  if (pcc_genes > 0) {
    r.mean_pcc = pcc_total / static_cast<double>(pcc_genes);
  }
  return r;
}

double round_significant(double value) {
  if (!std::isfinite(value)) {
    return value;
  }
  return std::strtod(format_number(value).c_str(), nullptr);
}

std::string reports_to_json(std::span<const MetricReport> reports) {
  ordered_json root;
  root["reports"] = ordered_json::array();
  auto number = [](double v) { return ordered_json(round_significant(v)); };
  auto optional_number = [&](const std::optional<double>& v) { return v ? number(*v) : ordered_json(nullptr); };
  for (const auto& r : reports) {
    ordered_json j;
    j["label"] = r.label;
    j["config_fingerprint"] = r.config_fingerprint;
    j["sample_count"] = r.sample_count;
    j["mean_rmse"] = number(r.mean_rmse);
    j["mean_pcc"] = optional_number(r.mean_pcc);
    j["genes"] = ordered_json::array();
    for (std::size_t c = 0; c < r.rmse.size(); ++c) {
      ordered_json gene;
      gene["index"] = c;
      gene["gene_id"] = r.gene_ids.at(c);
      gene["rmse"] = number(r.rmse[c]);
      gene["pcc"] = optional_number(r.pcc.at(c));
      j["genes"].push_back(gene);
    }
    root["reports"].push_back(j);
  }
  return root.dump(2) + "\n";
}

std::vector<MetricReport> reports_from_json(const std::string& text) {
  ordered_json root;
  try {
    root = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report JSON does not parse: ") + e.what());
  }
  std::vector<MetricReport> out;
  try {
    for (const auto& j : root.at("reports")) {
      MetricReport r;
      r.label = j.at("label").get<std::string>();
      r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
      r.sample_count = j.at("sample_count").get<std::size_t>();
      r.mean_rmse = j.at("mean_rmse").get<double>();
      if (!j.at("mean_pcc").is_null()) {
        r.mean_pcc = j.at("mean_pcc").get<double>();
      }
      for (const auto& gene : j.at("genes")) {
        r.gene_ids.push_back(gene.at("gene_id").get<std::int32_t>());
        r.rmse.push_back(gene.at("rmse").get<double>());
        r.pcc.push_back(gene.at("pcc").is_null() ? std::nullopt : std::optional<double>(gene.at("pcc").get<double>()));
      }
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report JSON has an unexpected layout: ") + e.what());
  }
  return out;
}

std::string reports_to_csv(std::span<const MetricReport> reports) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : reports) {
    if (r.label.find_first_of(",\n") != std::string::npos ||
        r.config_fingerprint.find_first_of(",\n") != std::string::npos) {
      throw InvalidArgument("report labels may not contain commas or newlines");
    }
    const std::string prefix = r.label + "," + r.config_fingerprint + "," + std::to_string(r.sample_count) + ",";
    for (std::size_t c = 0; c < r.rmse.size(); ++c) {
      out += prefix + std::to_string(c) + "," + std::to_string(r.gene_ids.at(c)) + "," + format_number(r.rmse[c]) +
             "," + (r.pcc.at(c) ? format_number(*r.pcc[c]) : "") + "\n";
    }
    out += prefix + "mean,," + format_number(r.mean_rmse) + "," + (r.mean_pcc ? format_number(*r.mean_pcc) : "") +
           "\n";
  }
  return out;
}

std::vector<MetricReport> reports_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw FormatError("report CSV header must be '" + std::string(kCsvHeader) + "'");
  }
  std::vector<MetricReport> out;
  MetricReport current;
  bool open = false;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 7) {
      throw FormatError("report CSV row has " + std::to_string(f.size()) + " fields, expected 7: " + line);
    }
    if (!open) {
      current = MetricReport{};
      current.label = f[0];
      current.config_fingerprint = f[1];
      current.sample_count = static_cast<std::size_t>(parse_double(f[2], "sample_count"));
      open = true;
    }
    const std::optional<double> p = f[6].empty() ? std::nullopt : std::optional<double>(parse_double(f[6], "pcc"));
    if (f[3] == "mean") {
      current.mean_rmse = parse_double(f[5], "rmse");
      current.mean_pcc = p;
      out.push_back(std::move(current));
      open = false;
    } else {
      current.gene_ids.push_back(static_cast<std::int32_t>(parse_double(f[4], "gene_id")));
      current.rmse.push_back(parse_double(f[5], "rmse"));
      current.pcc.push_back(p);
    }
  }
  if (open) {
    throw FormatError("report CSV ends without a mean row");
  }
  return out;
}

void emit_reports(std::span<const MetricReport> reports, const std::filesystem::path& path, ReportFormat format) {
  write_text(path, format == ReportFormat::json ? reports_to_json(reports) : reports_to_csv(reports));
}

std::vector<MetricReport> load_reports(const std::filesystem::path& path, ReportFormat format) {
  const auto text = read_text(path);
  return format == ReportFormat::json ? reports_from_json(text) : reports_from_csv(text);
}

void write_heatmap(const Tensor& map, std::size_t channel, const std::filesystem::path& path) {
  if (map.rank() != 3 || channel >= map.dim(0)) {
    throw DimensionError("heatmap needs a [G, H, W] map and a channel below G, got " + shape_string(map.shape()));
  }
  const std::size_t h = map.dim(1);
  const std::size_t w = map.dim(2);
  std::string text = "P3\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const float v = std::clamp(map[(channel * h + y) * w + x], 0.0f, 1.0f);
      const std::string level = std::to_string(static_cast<int>(std::lround(v * 255.0f)));
      text += level + " " + level + " " + level + (x + 1 == w ? "\n" : " ");
    }
  }
  write_text(path, text);
}

}  // namespace stsr
