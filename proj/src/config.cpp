#include "stsr/config.hpp"

#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <type_traits>

#include "stsr/errors.hpp"

namespace stsr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Values are written so that parsing them back gives the identical bits.
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fmt(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* kind) {
  throw ConfigError("invalid value '" + value + "' for " + key + ": expected " + kind);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (v.empty() || r.ec != std::errc() || r.ptr != end) {
    bad_value(key, v, "a non-negative integer");
  }
  return out;
}

double parse_f64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
  if (used != v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") {
    return true;
  }
  if (v == "false") {
    return false;
  }
  bad_value(key, v, "true or false");
}

template <class Ref>
Field make_uint(const char* section, const char* key, Ref ref) {
  return {section, key,
          [ref](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(ref(const_cast<RunConfig&>(c)))); },
          [ref, key](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(ref(c))>;
            const auto x = parse_u64(key, v);
            if (x > std::numeric_limits<T>::max()) {
              bad_value(key, v, "a smaller integer");
            }
            ref(c) = static_cast<T>(x);
          }};
}

template <class Ref>
Field make_float(const char* section, const char* key, Ref ref) {
  return {section, key, [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
          [ref, key](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(ref(c))>;
            ref(c) = static_cast<T>(parse_f64(key, v));
          }};
}

template <class Ref>
Field make_bool(const char* section, const char* key, Ref ref) {
  return {section, key, [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}

template <class Ref>
Field make_string(const char* section, const char* key, Ref ref) {
  return {section, key, [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(make_uint("run", "seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));

    f.push_back(make_string("data", "path", [](RunConfig& c) -> std::string& { return c.dataset; }));
    f.push_back(make_uint("data", "count", [](RunConfig& c) -> std::uint32_t& { return c.manifest.count; }));
    f.push_back(make_uint("data", "height", [](RunConfig& c) -> std::uint32_t& { return c.manifest.height; }));
    f.push_back(make_uint("data", "width", [](RunConfig& c) -> std::uint32_t& { return c.manifest.width; }));
    f.push_back(make_uint("data", "genes", [](RunConfig& c) -> std::uint32_t& { return c.manifest.genes; }));
    f.push_back(make_uint("data", "scale", [](RunConfig& c) -> std::uint32_t& { return c.manifest.scale; }));
    f.push_back(make_float("data", "missing", [](RunConfig& c) -> double& { return c.manifest.missing_fraction; }));
    f.push_back(make_float("data", "noise", [](RunConfig& c) -> double& { return c.manifest.noise; }));
    f.push_back(make_uint("data", "seed", [](RunConfig& c) -> std::uint64_t& { return c.manifest.seed; }));

    f.push_back(make_uint("encoder", "feature_dim", [](RunConfig& c) -> std::size_t& { return c.encoder.feature_dim; }));
    f.push_back({"encoder", "widths",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.encoder.widths.size(); ++i) {
                     s += (i ? "," : "") + std::to_string(c.encoder.widths[i]);
                   }
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.encoder.widths.clear();
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     c.encoder.widths.push_back(static_cast<std::size_t>(parse_u64("widths", trim(item))));
                   }
                 }});
    f.push_back(make_uint("encoder", "gene_embedding_dim",
                                [](RunConfig& c) -> std::size_t& { return c.encoder.gene_embedding_dim; }));
    f.push_back(make_uint("encoder", "gene_panel", [](RunConfig& c) -> std::size_t& { return c.encoder.gene_panel; }));
    f.push_back(make_uint("encoder", "condition_planes",
                                [](RunConfig& c) -> std::size_t& { return c.encoder.condition_planes; }));
    f.push_back(make_bool("encoder", "histology_planes", [](RunConfig& c) -> bool& { return c.encoder.histology_planes; }));
    f.push_back(make_uint("encoder", "seed", [](RunConfig& c) -> std::uint64_t& { return c.encoder.seed; }));

    f.push_back(make_float("contrastive", "tau_init", [](RunConfig& c) -> float& { return c.contrastive.tau_init; }));
    f.push_back(make_bool("contrastive", "learn_tau", [](RunConfig& c) -> bool& { return c.contrastive.learn_tau; }));
    f.push_back(make_float("contrastive", "sigma", [](RunConfig& c) -> float& { return c.contrastive.sigma; }));
    f.push_back(make_float("contrastive", "lambda_modal", [](RunConfig& c) -> float& { return c.contrastive.lambda_modal; }));
    f.push_back(make_float("contrastive", "lambda_content", [](RunConfig& c) -> float& { return c.contrastive.lambda_content; }));
    f.push_back(make_float("contrastive", "lambda_inter", [](RunConfig& c) -> float& { return c.contrastive.lambda_inter; }));

    f.push_back({"impute", "mode", [](const RunConfig& c) { return to_string(c.impute.mode); },
                 [](RunConfig& c, const std::string& v) { c.impute.mode = imputation_mode_from_string(v); }});
    f.push_back(make_float("impute", "temperature", [](RunConfig& c) -> float& { return c.impute.temperature; }));
    f.push_back(make_float("impute", "alpha0", [](RunConfig& c) -> float& { return c.impute.alpha0; }));
    f.push_back(make_float("impute", "beta0", [](RunConfig& c) -> float& { return c.impute.beta0; }));
    f.push_back(make_float("impute", "decay_fraction", [](RunConfig& c) -> double& { return c.impute.decay_fraction; }));

    f.push_back(make_uint("diffusion", "timesteps", [](RunConfig& c) -> std::size_t& { return c.diffusion.timesteps; }));
    f.push_back(make_uint("diffusion", "sample_steps",
                                [](RunConfig& c) -> std::size_t& { return c.diffusion.sample_steps; }));
    f.push_back(make_float("diffusion", "omega", [](RunConfig& c) -> float& { return c.diffusion.guidance.omega; }));
    f.push_back(make_float("diffusion", "drop_probability",
                           [](RunConfig& c) -> float& { return c.diffusion.guidance.drop_probability; }));
    f.push_back(make_uint("diffusion", "base_width",
                                [](RunConfig& c) -> std::size_t& { return c.diffusion.denoiser.base_width; }));
    f.push_back(make_uint("diffusion", "time_dim",
                                [](RunConfig& c) -> std::size_t& { return c.diffusion.denoiser.time_dim; }));
    f.push_back(make_uint("diffusion", "seed", [](RunConfig& c) -> std::uint64_t& { return c.diffusion.denoiser.seed; }));

    f.push_back(make_uint("train", "steps", [](RunConfig& c) -> std::size_t& { return c.train.steps; }));
    f.push_back(make_uint("train", "batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    f.push_back(make_float("train", "learning_rate", [](RunConfig& c) -> float& { return c.train.learning_rate; }));
    f.push_back(make_float("train", "clip_norm", [](RunConfig& c) -> float& { return c.train.clip_norm; }));
    f.push_back(make_uint("train", "validation_count",
                                [](RunConfig& c) -> std::size_t& { return c.train.validation_count; }));
    f.push_back(make_uint("train", "checkpoint_every",
                                [](RunConfig& c) -> std::size_t& { return c.train.checkpoint_every; }));
    f.push_back(make_uint("train", "log_every", [](RunConfig& c) -> std::size_t& { return c.train.log_every; }));
    f.push_back(make_string("train", "checkpoint", [](RunConfig& c) -> std::string& { return c.train.checkpoint; }));
    f.push_back(make_string("train", "loss_log", [](RunConfig& c) -> std::string& { return c.train.loss_log; }));

    f.push_back(make_bool("ablation", "augmentation", [](RunConfig& c) -> bool& { return c.ablation.augmentation; }));
    f.push_back(make_bool("ablation", "modal", [](RunConfig& c) -> bool& { return c.ablation.modal; }));
    f.push_back(make_bool("ablation", "content", [](RunConfig& c) -> bool& { return c.ablation.content; }));
    f.push_back(make_bool("ablation", "inter_sphere", [](RunConfig& c) -> bool& { return c.ablation.inter_sphere; }));
    return f;
  }();
  return table;
}

void require(bool ok, const std::string& message) {
  if (!ok) {
    throw ConfigError(message);
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    manifest.validate();
    encoder.validate();
    impute.validate();
    diffusion.guidance.validate();
    diffusion.denoiser.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  require(manifest.height % 2 == 0 && manifest.width % 2 == 0, "data: height and width must be even");
  require(encoder.gene_panel >= manifest.genes, "encoder: gene_panel must cover every gene in the data");
  require(std::isfinite(contrastive.tau_init) && contrastive.tau_init > 0.0f, "contrastive: tau_init must be positive");
  require(contrastive.sigma >= 0.0f, "contrastive: sigma must be non-negative");
  require(contrastive.lambda_modal >= 0.0f && contrastive.lambda_content >= 0.0f && contrastive.lambda_inter >= 0.0f,
          "contrastive: loss weights must be non-negative");
  require(diffusion.timesteps >= 2, "diffusion: timesteps must be at least 2");
  require(diffusion.sample_steps >= 1 && diffusion.sample_steps <= diffusion.timesteps,
          "diffusion: sample_steps must lie in [1, timesteps]");
  require(train.batch_size >= 2, "train: batch_size must be at least 2");
  require(train.learning_rate > 0.0f, "train: learning_rate must be positive");
  require(train.clip_norm >= 0.0f, "train: clip_norm must be non-negative");
  require(train.log_every >= 1, "train: log_every must be at least 1");
  if (dataset.empty()) {
    require(train.validation_count < manifest.count, "train: validation_count must leave training samples");
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::set<std::string> seen;
  std::set<std::string> sections;
  for (const auto& f : fields()) {
    sections.insert(f.section);
  }
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = "line " + std::to_string(number) + ": ";
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') {
      continue;
    }
    if (s.front() == '[') {
      if (s.back() != ']') {
        throw ConfigError(where + "unterminated section header '" + s + "'");
      }
      section = trim(s.substr(1, s.size() - 2));
      if (!sections.count(section)) {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + "expected key = value, got '" + s + "'");
    }
    if (section.empty()) {
      throw ConfigError(where + "entry before any section header");
    }
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (section == f.section && key == f.key) {
        field = &f;
      }
    }
    if (!field) {
      throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    }
    if (!seen.insert(section + "." + key).second) {
      throw ConfigError(where + "repeated key '" + key + "' in [" + section + "]");
    }
    try {
      field->set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open config file " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::string to_text(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      section = f.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string fingerprint(const RunConfig& config) {
  // Output locations and logging cadence do not change what is trained.
  RunConfig c = config;
  c.train.checkpoint = TrainConfig{}.checkpoint;
  c.train.loss_log.clear();
  c.train.checkpoint_every = 0;
  c.train.log_every = TrainConfig{}.log_every;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace stsr
