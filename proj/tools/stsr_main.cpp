// stsr command line: gen-data | train | sample | eval | ablate.
//
// Exit codes: 0 success (including --help), 1 runtime failure (I/O, format,
// numerical), 2 usage error (unknown subcommand or flag, missing argument),
// 3 invalid flag value.

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stsr/binary_io.hpp"
#include "stsr/config.hpp"
#include "stsr/errors.hpp"
#include "stsr/evaluate.hpp"
#include "stsr/synth_data.hpp"
#include "stsr/trainer.hpp"

namespace fs = std::filesystem;
using namespace stsr;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;
constexpr int kInvalidValue = 3;

const std::vector<std::string> kSubcommands{"gen-data", "train", "sample", "eval", "ablate"};

ReportFormat format_for(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") {
    return ReportFormat::csv;
  }
  if (ext == ".json") {
    return ReportFormat::json;
  }
  throw InvalidArgument("report path " + path.string() + " must end in .json or .csv");
}

std::shared_ptr<const Dataset> load_shared(const fs::path& path) {
  return std::make_shared<const Dataset>(load_dataset(path));
}

// Rows to predict: the checkpoint's validation split, or every sample.
std::vector<std::size_t> selection(const Trainer& t, bool all) {
  if (!all) {
    return t.validation_indices();
  }
  std::vector<std::size_t> idx(t.dataset().samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i;
  }
  return idx;
}

void print_report(const MetricReport& r) {
  std::printf("%-20s rmse %.6f  pcc %s  (%zu samples)\n", r.label.c_str(), r.mean_rmse,
              r.mean_pcc ? std::to_string(*r.mean_pcc).c_str() : "n/a", r.sample_count);
}

struct GenDataArgs {
  DatasetManifest manifest;
  std::string out;
};

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string out;
  std::string dataset;
  std::string resume;
  std::string loss_log;
};

struct SampleArgs {
  std::string checkpoint;
  std::string dataset;
  float omega = 1.0f;
  std::size_t steps = 0;
  bool no_lr_st = false;
  std::uint64_t seed = 0;
  bool all = false;
  std::string out;
};

struct EvalArgs {
  SampleArgs sample;
  std::string predictions;
  std::string out;
  std::string heatmaps;
  std::size_t heatmap_samples = 4;
  std::string label = "eval";
};

struct AblateArgs {
  std::string config;
  std::string rows = "all";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string out;
};

int run_gen_data(const GenDataArgs& a) {
  const Dataset d = generate(a.manifest);
  save_dataset(d, a.out);
  std::size_t absent = 0;
  for (const auto& s : d.samples) {
    absent += !s.lr_st.has_value();
  }
  std::printf("wrote %zu samples (%zu without LR maps) to %s\n", d.samples.size(), absent, a.out.c_str());
  return 0;
}

int run_train(const TrainArgs& a) {
  std::unique_ptr<Trainer> trainer;
  std::string out = a.out;
  if (!a.resume.empty()) {
    const auto bytes = read_file(a.resume);
    RunConfig c = Trainer::checkpoint_config(bytes);
    const auto data = std::make_shared<const Dataset>(a.dataset.empty() ? load_run_dataset(c) : load_dataset(a.dataset));
    trainer = Trainer::from_checkpoint(bytes, data);
    if (out.empty()) {
      out = c.train.checkpoint;
    }
  } else {
    if (a.config.empty()) {
      throw ConfigError("train needs --config or --resume");
    }
    RunConfig c = load_config(a.config);
    if (a.seed) {
      c.seed = *a.seed;
    }
    if (a.steps) {
      c.train.steps = *a.steps;
    }
    if (!a.dataset.empty()) {
      c.dataset = a.dataset;
    }
    if (!a.loss_log.empty()) {
      c.train.loss_log = a.loss_log;
    }
    if (!out.empty()) {
      c.train.checkpoint = out;
    }
    c.validate();
    out = c.train.checkpoint;
    trainer = std::make_unique<Trainer>(c, std::make_shared<const Dataset>(load_run_dataset(c)));
  }
  const auto& c = trainer->config();
  const std::size_t remaining = c.train.steps > trainer->step() ? c.train.steps - trainer->step() : 0;
  std::printf("training %zu steps from step %zu (config %s)\n", remaining, trainer->step(), fingerprint(c).c_str());
  trainer->train(remaining, [](const LossReport& r) {
    std::printf("step %6zu  total %.5f  mse %.5f  tau %.4f  alpha %.3f\n", r.step, r.total, r.mse, r.tau, r.alpha);
    std::fflush(stdout);
  });
  trainer->save_checkpoint(out);
  std::printf("wrote checkpoint %s at step %zu\n", out.c_str(), trainer->step());
  return 0;
}

PredictOptions predict_options(const SampleArgs& a) {
  PredictOptions o;
  o.omega = a.omega;
  o.steps = a.steps;
  o.no_lr_st = a.no_lr_st;
  o.seed = a.seed;
  return o;
}

int run_sample(const SampleArgs& a) {
  const auto trainer = Trainer::from_checkpoint_file(a.checkpoint, load_shared(a.dataset));
  const auto idx = selection(*trainer, a.all);
  const auto preds = trainer->predict(idx, predict_options(a));
  Dataset out;
  out.manifest = trainer->dataset().manifest;
  out.manifest.count = static_cast<std::uint32_t>(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    SpatialSample s = trainer->dataset().samples[idx[k]];
    s.hr_st = preds[k];
    out.samples.push_back(std::move(s));
  }
  save_dataset(out, a.out);
  std::printf("wrote %zu predicted maps to %s\n", idx.size(), a.out.c_str());
  return 0;
}

int run_eval(const EvalArgs& a) {
  const auto data = load_shared(a.sample.dataset);
  const auto trainer = Trainer::from_checkpoint_file(a.sample.checkpoint, data);
  const auto idx = selection(*trainer, a.sample.all);
  std::vector<Tensor> preds;
  std::vector<Tensor> truths;
  for (auto i : idx) {
    truths.push_back(data->samples[i].hr_st);
  }
  if (a.predictions.empty()) {
    preds = trainer->predict(idx, predict_options(a.sample));
  } else {
    const Dataset p = load_dataset(a.predictions);
    for (auto i : idx) {
      const auto& id = data->samples[i].sample_id;
      const auto it = std::find_if(p.samples.begin(), p.samples.end(), [&](const SpatialSample& s) { return s.sample_id == id; });
      if (it == p.samples.end()) {
        throw InvalidArgument("predictions file has no sample " + id);
      }
      preds.push_back(it->hr_st);
    }
  }
  const auto report =
      evaluate_maps(preds, truths, data->samples[idx.front()].gene_ids, a.label, fingerprint(trainer->config()));
  print_report(report);
  const auto gec_pred = gene_correlation(preds);
  const auto gec_true = gene_correlation(truths);
  std::printf("gene correlation matrix distance %.6f\n", gec_pred.frobenius_distance(gec_true));
  if (!a.out.empty()) {
    const std::vector<MetricReport> one{report};
    emit_reports(one, a.out, format_for(a.out));
    std::printf("wrote %s\n", a.out.c_str());
  }
  if (!a.heatmaps.empty()) {
    fs::create_directories(a.heatmaps);
    const std::size_t n = std::min(a.heatmap_samples, idx.size());
    for (std::size_t k = 0; k < n; ++k) {
      const auto& id = data->samples[idx[k]].sample_id;
      for (std::size_t g = 0; g < preds[k].dim(0); ++g) {
        const std::string stem = id + "_gene" + std::to_string(g);
        write_heatmap(preds[k], g, fs::path(a.heatmaps) / (stem + "_pred.ppm"));
        write_heatmap(truths[k], g, fs::path(a.heatmaps) / (stem + "_true.ppm"));
      }
    }
    std::printf("wrote heatmaps for %zu samples to %s\n", n, a.heatmaps.c_str());
  }
  return 0;
}

int run_ablate(const AblateArgs& a) {
  RunConfig base = load_config(a.config);
  if (a.seed) {
    base.seed = *a.seed;
  }
  if (a.steps) {
    base.train.steps = *a.steps;
  }
  base.validate();
  std::vector<std::string> rows;
  if (a.rows == "all") {
    rows = kAblationRows;
  } else {
    std::stringstream ss(a.rows);
    std::string r;
    while (std::getline(ss, r, ',')) {
      ablation_config(base, r);  // rejects unknown rows before any training starts
      rows.push_back(r);
    }
  }
  const auto data = std::make_shared<const Dataset>(load_run_dataset(base));
  std::vector<MetricReport> reports;
  for (const auto& row : rows) {
    std::printf("training variant %s (%zu steps)\n", row.c_str(), base.train.steps);
    std::fflush(stdout);
    reports.push_back(ablate(base, row, data));
    print_report(reports.back());
  }
  if (!a.out.empty()) {
    emit_reports(reports, a.out, format_for(a.out));
    std::printf("wrote %zu reports to %s\n", reports.size(), a.out.c_str());
  }
  return 0;
}

void add_sample_flags(CLI::App* cmd, SampleArgs& a) {
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file (C3CK)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--dataset", a.dataset, "Dataset file (C3DF)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--omega", a.omega, "Guidance weight")->capture_default_str();
  cmd->add_option("--steps", a.steps, "Reverse-chain length; 0 uses the run config")->capture_default_str();
  cmd->add_flag("--no-lr-st", a.no_lr_st, "Condition on histology only (LR maps zero-padded)");
  cmd->add_option("--seed", a.seed, "Sampling seed")->capture_default_str();
  cmd->add_flag("--all", a.all, "Use every sample instead of the validation split");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive conditional diffusion for spatial expression super-resolution"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic paired dataset");
  gen_cmd->add_option("--n", gen.manifest.count, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--height", gen.manifest.height, "HR map height")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--width", gen.manifest.width, "HR map width")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--genes", gen.manifest.genes, "Genes per sample")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--scale", gen.manifest.scale, "HR/LR enlargement factor")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--missing", gen.manifest.missing_fraction, "Fraction of samples without LR maps")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--noise", gen.manifest.noise, "Expression noise level")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", gen.manifest.seed, "Generation seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output dataset file")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train from a run config");
  auto* config_opt = train_cmd->add_option("--config", train.config, "Run config file")->check(CLI::ExistingFile);
  auto* seed_opt = train_cmd->add_option("--seed", train.seed, "Override the run seed");
  auto* steps_opt = train_cmd->add_option("--steps", train.steps, "Override the step count");
  // A resumed run keeps the embedded config so the schedule and sampling streams continue unchanged.
  train_cmd->add_option("--resume", train.resume, "Continue from a checkpoint up to its configured step count")
      ->check(CLI::ExistingFile)
      ->excludes(config_opt)
      ->excludes(seed_opt)
      ->excludes(steps_opt);
  train_cmd->add_option("--dataset", train.dataset, "Dataset file instead of the config's")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out, "Checkpoint path");
  train_cmd->add_option("--loss-log", train.loss_log, "Append loss rows to this CSV");

  SampleArgs sample;
  auto* sample_cmd = app.add_subcommand("sample", "Sample HR maps from a checkpoint");
  add_sample_flags(sample_cmd, sample);
  sample_cmd->add_option("--out", sample.out, "Output dataset file holding the predicted maps")->required();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or a predictions file");
  add_sample_flags(eval_cmd, eval.sample);
  eval_cmd->add_option("--predictions", eval.predictions, "Dataset file written by sample")->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval.out, "Report path (.json or .csv)");
  eval_cmd->add_option("--heatmaps", eval.heatmaps, "Directory for PPM heatmaps");
  eval_cmd->add_option("--heatmap-samples", eval.heatmap_samples, "Samples to draw heatmaps for")->capture_default_str();
  eval_cmd->add_option("--label", eval.label, "Report label")->capture_default_str();

  AblateArgs abl;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  ablate_cmd->add_option("--config", abl.config, "Baseline run config")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--rows", abl.rows, "Comma-separated rows or 'all'")->capture_default_str();
  ablate_cmd->add_option("--seed", abl.seed, "Override the run seed");
  ablate_cmd->add_option("--steps", abl.steps, "Override the step count");
  ablate_cmd->add_option("--out", abl.out, "Report path (.json or .csv)");

  if (argc > 1 && argv[1][0] != '-' &&
      std::find(kSubcommands.begin(), kSubcommands.end(), std::string(argv[1])) == kSubcommands.end()) {
    std::cerr << "error: unknown subcommand '" << argv[1] << "'\n" << app.help();
    return kUsageError;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ExtrasError& e) {
    std::cerr << "error: unknown flag or argument: " << e.what() << "\n";
    return kUsageError;
  } catch (const CLI::ConversionError& e) {
    std::cerr << "error: invalid value: " << e.what() << "\n";
    return kInvalidValue;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: invalid value: " << e.what() << "\n";
    return kInvalidValue;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }

  try {
    if (gen_cmd->parsed()) {
      return run_gen_data(gen);
    }
    if (train_cmd->parsed()) {
      return run_train(train);
    }
    if (sample_cmd->parsed()) {
      return run_sample(sample);
    }
    if (eval_cmd->parsed()) {
      return run_eval(eval);
    }
    return run_ablate(abl);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalidValue;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalidValue;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}
