#include "stsr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "stsr/binary_io.hpp"
#include "stsr/contrastive.hpp"
#include "stsr/errors.hpp"
#include "stsr/imputation.hpp"
#include "stsr/ops.hpp"

namespace stsr {

namespace {

// Stream identifiers mixed into the run seed.
constexpr std::uint64_t kBatchStream = 0xb47c;
constexpr std::uint64_t kAugmentStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kSampleStream = 3;

void check_finite(const Tensor& t, const std::string& name, std::size_t step) {
  if (!t.defined()) {
    return;
  }
  for (float v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericalError("non-finite value in " + name + " at step " + std::to_string(step));
    }
  }
}

std::string optional_field(const std::optional<double>& v) {
  if (!v) {
    return "";
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

std::vector<float> flat(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

std::string to_csv_row(const LossReport& r) {
  char head[96];
  std::snprintf(head, sizeof head, "%zu,%.9g,%.9g", r.step, r.total, r.mse);
  char tail[96];
  std::snprintf(tail, sizeof tail, "%.9g,%.9g,%.9g", r.tau, r.alpha, r.beta);
  return std::string(head) + "," + optional_field(r.modal) + "," + optional_field(r.content) + "," +
         optional_field(r.inter_sphere) + "," + tail;
}

Dataset load_run_dataset(const RunConfig& config) {
  if (!config.dataset.empty()) {
    return load_dataset(config.dataset);
  }
  return generate(config.manifest);
}

struct Trainer::Batch {
  Tensor histology;   // [B, 3, H, W]
  Tensor lr_present;  // [P, G, h, w]
  Tensor lr_full;     // [B, G, h, w]
  Tensor hr;          // [B, G, H, W]
  std::vector<bool> present;
  std::vector<std::vector<std::int32_t>> gene_ids;
};

Trainer::Trainer(RunConfig config, std::shared_ptr<const Dataset> data)
    : config_(std::move(config)), data_(std::move(data)) {
  config_.validate();
  if (!data_ || data_->samples.empty()) {
    throw InvalidArgument("trainer needs a non-empty dataset");
  }
  const auto& first = data_->samples.front();
  const std::size_t genes = first.hr_st.dim(0);
  for (const auto& s : data_->samples) {
    if (s.hr_st.shape() != first.hr_st.shape() || s.histology.shape() != first.histology.shape()) {
      throw DimensionError("dataset samples disagree in shape: " + shape_string(s.hr_st.shape()) + " vs " +
                           shape_string(first.hr_st.shape()));
    }
  }
  if (first.hr_st.dim(1) % 2 != 0 || first.hr_st.dim(2) % 2 != 0) {
    throw DimensionError("HR maps need even height and width, got " + shape_string(first.hr_st.shape()));
  }

  // Every initializer draws from the run seed so --seed controls all randomness.
  EncoderConfig enc = config_.encoder;
  enc.seed = Rng::derive(config_.seed, config_.encoder.seed);
  encoders_ = EncoderBank(store_, enc, genes);
  DenoiserConfig den = config_.diffusion.denoiser;
  den.seed = Rng::derive(config_.seed, config_.diffusion.denoiser.seed);
  denoiser_ = Denoiser(store_, den, genes, encoders_.condition_channels());
  log_tau_ = store_.add_constant("contrastive.log_tau", {1}, std::log(config_.contrastive.tau_init));

  AdamConfig adam;
  adam.learning_rate = config_.train.learning_rate;
  adam.clip_norm = config_.train.clip_norm;
  adam_ = Adam(store_, adam);
  schedule_ = DiffusionSchedule::cosine(config_.diffusion.timesteps);
  rng_ = Rng(Rng::derive(config_.seed, kBatchStream));
  std::tie(alpha_, beta_) = decay(config_.impute, 0, decay_steps());

  for (auto i : training_indices()) {
    (data_->samples[i].lr_st ? present_pool_ : missing_pool_).push_back(i);
  }
}

std::size_t Trainer::decay_steps() const {
  return static_cast<std::size_t>(std::llround(config_.impute.decay_fraction * static_cast<double>(config_.train.steps)));
}

std::vector<std::size_t> Trainer::validation_indices() const {
  const std::size_t n = data_->samples.size();
  const std::size_t v = std::min(config_.train.validation_count, n);
  std::vector<std::size_t> out(v);
  for (std::size_t i = 0; i < v; ++i) {
    out[i] = n - v + i;
  }
  return out;
}

std::vector<std::size_t> Trainer::training_indices() const {
  const std::size_t n = data_->samples.size();
  std::vector<std::size_t> out(n - std::min(config_.train.validation_count, n));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = i;
  }
  return out;
}

std::vector<std::size_t> Trainer::draw_batch() {
  const std::size_t n = config_.train.batch_size;
  const bool dropout = config_.impute.mode == ImputationMode::dropout;
  std::size_t missing = 0;
  if (!dropout) {
    missing = static_cast<std::size_t>(std::llround(data_->manifest.missing_fraction * static_cast<double>(n)));
    missing = std::min(missing, missing_pool_.size());
    // Top up from the missing pool when there are not enough complete samples.
    if (n - missing > present_pool_.size()) {
      missing = std::min(n - present_pool_.size(), missing_pool_.size());
    }
  }
  const std::size_t present = n - missing;
  if (present > present_pool_.size() || missing > missing_pool_.size()) {
    throw InvalidArgument("training split has " + std::to_string(present_pool_.size()) + " samples with and " +
                          std::to_string(missing_pool_.size()) + " without LR maps; cannot fill a batch of " +
                          std::to_string(n) + (dropout ? " complete samples" : ""));
  }
  auto pick = [this](std::vector<std::size_t> pool, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(pool[i], pool[i + rng_.below(pool.size() - i)]);
    }
    pool.resize(k);
    return pool;
  };
  auto out = pick(present_pool_, present);
  const auto extra = pick(missing_pool_, missing);
  out.insert(out.end(), extra.begin(), extra.end());
  return pick(out, out.size());
}

Trainer::Batch Trainer::assemble(const std::vector<std::size_t>& indices, bool zero_lr,
                                 const std::vector<std::size_t>* histology_source) const {
  Batch b;
  std::vector<Tensor> hist;
  std::vector<Tensor> hr;
  std::vector<Tensor> lr_present;
  std::vector<Tensor> lr_full;
  const auto& m = data_->manifest;
  const auto& first = data_->samples[indices.front()];
  const Shape lr_shape{first.hr_st.dim(0), first.hr_st.dim(1) / m.scale, first.hr_st.dim(2) / m.scale};
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& s = data_->samples[indices[k]];
    const std::size_t h = histology_source ? (*histology_source)[k] : indices[k];
    hist.push_back(data_->samples.at(h).histology);
    hr.push_back(s.hr_st);
    const bool has = s.lr_st.has_value() && !zero_lr;
    b.present.push_back(has);
    if (has) {
      lr_present.push_back(*s.lr_st);
      lr_full.push_back(*s.lr_st);
    } else {
      lr_full.push_back(Tensor::zeros(lr_shape));
    }
    b.gene_ids.push_back(s.gene_ids);
  }
  b.histology = stack(hist);
  b.hr = stack(hr);
  b.lr_full = stack(lr_full);
  if (!lr_present.empty()) {
    b.lr_present = stack(lr_present);
  }
  return b;
}

LossReport Trainer::train_step() {
  if (present_pool_.empty() && missing_pool_.empty()) {
    throw InvalidArgument("no training samples: validation_count covers the whole dataset");
  }
  const std::size_t s = step_;
  std::tie(alpha_, beta_) = decay(config_.impute, s, decay_steps());
  const auto indices = draw_batch();
  const Batch batch = assemble(indices, false, nullptr);
  const std::size_t n = indices.size();
  auto rngs_for = [&](std::uint64_t stream, bool present_only) {
    std::vector<Rng> out;
    for (std::size_t k = 0; k < n; ++k) {
      if (!present_only || batch.present[k]) {
        out.emplace_back(Rng::derive(config_.seed, s, indices[k], stream));
      }
    }
    return out;
  };

  for (const auto& [name, t] : store_.entries()) {
    check_finite(t, "parameter " + name, s);
  }
  store_.zero_grad();
  const RawFeatures raw = encoders_.encode(batch.histology, batch.lr_present, batch.present);
  check_finite(raw.m_h, "histology modal features", s);
  check_finite(raw.c_h, "histology content features", s);
  check_finite(raw.m_y, "ST modal features", s);
  check_finite(raw.c_y, "ST content features", s);

  Tensor m_y = raw.m_y;
  Tensor c_y = raw.c_y;
  const std::size_t p = raw.present_count();
  if (p > 0 && config_.ablation.augmentation && config_.contrastive.sigma > 0.0f) {
    auto rngs = rngs_for(kAugmentStream, true);
    std::tie(m_y, c_y) = augment(raw.m_y, raw.c_y, config_.contrastive.sigma, rngs);
  }
  const ImputedRows imputed = impute(raw.m_h, raw.c_h, m_y, c_y, batch.present, alpha_, beta_,
                                     config_.impute.temperature, config_.impute.mode);
  check_finite(imputed.m_tilde, "imputed modal features", s);
  check_finite(imputed.c_tilde, "imputed content features", s);
  const EmbeddingSet emb = assemble_embeddings(raw.m_h, raw.c_h, m_y, c_y, imputed, batch.present);
  const Tensor genes = encoders_.gene_vectors(batch.gene_ids);
  const Tensor condition = encoders_.build_condition(emb, batch.lr_full, genes, batch.histology);
  check_finite(condition, "condition bundle", s);

  auto noise_rngs = rngs_for(kNoiseStream, false);
  const Tensor mse_loss = mse_objective(denoiser_.as_model(), to_model_space(batch.hr), condition, schedule_,
                                        config_.diffusion.guidance.drop_probability, noise_rngs);
  check_finite(mse_loss, "diffusion loss", s);

  const Tensor tau = config_.contrastive.learn_tau ? exp(log_tau_)
                                                   : Tensor::scalar(config_.contrastive.tau_init);
  LossReport report;
  report.step = s;
  report.mse = mse_loss.item();
  report.tau = tau.item();
  report.alpha = alpha_;
  report.beta = beta_;
  Tensor total = mse_loss;
  auto add_term = [&](const Tensor& term, float weight, const char* name, std::optional<double>& slot) {
    check_finite(term, name, s);
    slot = term.item();
    total = add(total, scale(term, weight));
  };
  // Contrastive pairs use genuine ST rows only.
  if (p >= 2 && (config_.ablation.modal || config_.ablation.content)) {
    const auto rows = raw.present_rows();
    const Tensor m_h = gather_rows(raw.m_h, rows);
    const Tensor c_h = gather_rows(raw.c_h, rows);
    if (config_.ablation.modal) {
      add_term(loss_modal(m_h, m_y, tau), config_.contrastive.lambda_modal, "modal loss", report.modal);
    }
    if (config_.ablation.content) {
      add_term(loss_content(c_h, c_y, tau), config_.contrastive.lambda_content, "content loss", report.content);
    }
  }
  if (config_.ablation.inter_sphere) {
    add_term(loss_inter_sphere(raw.m_h, raw.c_h, tau), config_.contrastive.lambda_inter, "inter-sphere loss",
             report.inter_sphere);
  }
  check_finite(total, "total loss", s);
  report.total = total.item();

  total.backward();
  for (const auto& [name, t] : store_.entries()) {
    for (float g : t.grad()) {
      if (!std::isfinite(g)) {
        throw NumericalError("non-finite value in gradient of " + name + " at step " + std::to_string(s));
      }
    }
  }
  adam_.step(store_);
  ++step_;
  std::tie(alpha_, beta_) = decay(config_.impute, step_, decay_steps());
  return report;
}

std::vector<LossReport> Trainer::train(std::size_t steps, const std::function<void(const LossReport&)>& on_log) {
  std::ofstream log;
  if (!config_.train.loss_log.empty()) {
    const bool fresh = !std::filesystem::exists(config_.train.loss_log) ||
                       std::filesystem::file_size(config_.train.loss_log) == 0;
    log.open(config_.train.loss_log, std::ios::app);
    if (!log) {
      throw IoError("cannot open loss log " + config_.train.loss_log);
    }
    if (fresh) {
      log << kLossLogHeader << "\n";
    }
  }
  std::vector<LossReport> reports;
  reports.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    reports.push_back(train_step());
    const auto& r = reports.back();
    if (r.step % config_.train.log_every == 0 || k + 1 == steps) {
      if (log.is_open()) {
        log << to_csv_row(r) << "\n";
      }
      if (on_log) {
        on_log(r);
      }
    }
    if (config_.train.checkpoint_every > 0 && step_ % config_.train.checkpoint_every == 0 &&
        !config_.train.checkpoint.empty()) {
      save_checkpoint(config_.train.checkpoint);
    }
  }
  return reports;
}

std::vector<std::uint8_t> Trainer::checkpoint_bytes() const {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kCheckpointMagic), 4});
  w.u16(kCheckpointVersion);
  w.string(to_text(config_));
  w.u64(step_);
  w.string(rng_.state());
  w.f32(alpha_);
  w.f32(beta_);
  w.u64(adam_.steps_taken());
  const auto& entries = store_.entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& [name, t] = entries[k];
    w.string(name);
    w.tensor(t);
    w.tensor(Tensor::from_data({t.numel()}, adam_.first_moments()[k]));
    w.tensor(Tensor::from_data({t.numel()}, adam_.second_moments()[k]));
  }
  return w.bytes();
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const { write_file(path, checkpoint_bytes()); }

namespace {

RunConfig read_header(ByteReader& r) {
  const auto magic = r.raw(4, "checkpoint magic");
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) {
    throw FormatError("not a checkpoint file: bad magic");
  }
  const auto version = r.u16("checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::string text = r.string("checkpoint config");
  try {
    return parse_config(text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid config: ") + e.what());
  }
}

}  // namespace

RunConfig Trainer::checkpoint_config(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  return read_header(r);
}

void Trainer::restore(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  read_header(r);
  step_ = r.u64("checkpoint step");
  rng_.set_state(r.string("checkpoint RNG state"));
  alpha_ = r.f32("checkpoint alpha");
  beta_ = r.f32("checkpoint beta");
  adam_.set_steps_taken(r.u64("optimizer step"));
  auto& entries = store_.entries();
  const auto count = r.u32("parameter count");
  if (count != entries.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " parameters, the model has " +
                      std::to_string(entries.size()));
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& [name, t] = entries[k];
    const std::string stored = r.string("parameter name");
    if (stored != name) {
      throw FormatError("checkpoint parameter " + std::to_string(k) + " is " + stored + ", expected " + name);
    }
    const Tensor value = r.tensor("parameter value");
    const Tensor m = r.tensor("first moment");
    const Tensor v = r.tensor("second moment");
    if (value.shape() != t.shape() || m.numel() != t.numel() || v.numel() != t.numel()) {
      throw FormatError("checkpoint parameter " + name + " has shape " + shape_string(value.shape()) +
                        ", expected " + shape_string(t.shape()));
    }
    std::copy(value.data().begin(), value.data().end(), t.mutable_data().begin());
    adam_.first_moments()[k] = flat(m);
    adam_.second_moments()[k] = flat(v);
  }
  if (r.remaining() != 0) {
    throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  }
}

std::unique_ptr<Trainer> Trainer::from_checkpoint(std::span<const std::uint8_t> bytes,
                                                  std::shared_ptr<const Dataset> data) {
  auto t = std::make_unique<Trainer>(checkpoint_config(bytes), std::move(data));
  t->restore(bytes);
  return t;
}

std::unique_ptr<Trainer> Trainer::from_checkpoint_file(const std::filesystem::path& path,
                                                       std::shared_ptr<const Dataset> data) {
  const auto bytes = read_file(path);
  return from_checkpoint(bytes, std::move(data));
}

std::vector<Tensor> Trainer::predict(std::span<const std::size_t> indices, const PredictOptions& options) const {
  NoGradGuard no_grad;
  if (!options.histology_source.empty() && options.histology_source.size() != indices.size()) {
    throw InvalidArgument("histology_source must give one source per predicted sample");
  }
  const std::size_t steps = options.steps == 0 ? config_.diffusion.sample_steps : options.steps;
  if (steps > schedule_.steps()) {
    throw InvalidArgument("sampling steps " + std::to_string(steps) + " exceed the schedule length " +
                          std::to_string(schedule_.steps()));
  }
  std::vector<Tensor> out;
  const std::size_t chunk = config_.train.batch_size;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::size_t end = std::min(indices.size(), start + chunk);
    const std::vector<std::size_t> part(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                        indices.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<std::size_t> sources;
    if (!options.histology_source.empty()) {
      sources.assign(options.histology_source.begin() + static_cast<std::ptrdiff_t>(start),
                     options.histology_source.begin() + static_cast<std::ptrdiff_t>(end));
    }
    const Batch batch = assemble(part, options.no_lr_st, sources.empty() ? nullptr : &sources);
    const RawFeatures raw = encoders_.encode(batch.histology, batch.lr_present, batch.present);
    // A run trained without imputation, or a batch with nothing to impute from, gets zero rows.
    ImputationMode mode = config_.impute.mode;
    if (mode == ImputationMode::dropout || raw.present_count() == 0) {
      mode = ImputationMode::zero_padding;
    }
    const ImputedRows imputed =
        impute(raw.m_h, raw.c_h, raw.m_y, raw.c_y, batch.present, alpha_, beta_, config_.impute.temperature, mode);
    const EmbeddingSet emb = assemble_embeddings(raw.m_h, raw.c_h, raw.m_y, raw.c_y, imputed, batch.present);
    const Tensor condition = encoders_.build_condition(emb, batch.lr_full, encoders_.gene_vectors(batch.gene_ids),
                                                       batch.histology);
    std::vector<Rng> rngs;
    for (auto i : part) {
      rngs.emplace_back(Rng::derive(options.seed, i, kSampleStream));
    }
    const Tensor maps = sample(denoiser_.as_model(), condition, denoiser_.genes(), schedule_, options.omega, steps, rngs);
    const std::size_t per = maps.numel() / part.size();
    const Shape shape{maps.dim(1), maps.dim(2), maps.dim(3)};
    for (std::size_t k = 0; k < part.size(); ++k) {
      out.push_back(Tensor::from_data(shape, std::vector<float>(maps.data().begin() + static_cast<std::ptrdiff_t>(k * per),
                                                                maps.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * per))));
    }
  }
  return out;
}

MetricReport Trainer::evaluate(std::span<const std::size_t> indices, const PredictOptions& options,
                               const std::string& label) const {
  if (indices.empty()) {
    throw InvalidArgument("nothing to evaluate: empty sample selection");
  }
  const auto preds = predict(indices, options);
  std::vector<Tensor> truths;
  for (auto i : indices) {
    truths.push_back(data_->samples[i].hr_st);
  }
  return evaluate_maps(preds, truths, data_->samples[indices.front()].gene_ids, label, fingerprint(config_));
}

RunConfig ablation_config(const RunConfig& base, const std::string& row) {
  RunConfig c = base;
  if (row == "full") {
  } else if (row == "no-augmentation") {
    c.ablation.augmentation = false;
  } else if (row == "no-modal") {
    c.ablation.modal = false;
  } else if (row == "no-content") {
    c.ablation.content = false;
  } else if (row == "no-inter-sphere") {
    c.ablation.inter_sphere = false;
  } else if (row == "dropout" || row == "zero-padding" || row == "arithmetic-average") {
    c.impute.mode = imputation_mode_from_string(row);
  } else {
    std::string known;
    for (const auto& r : kAblationRows) {
      known += (known.empty() ? "" : ", ") + r;
    }
    throw ConfigError("unknown ablation row '" + row + "' (known: " + known + ")");
  }
  return c;
}

MetricReport ablate(const RunConfig& base, const std::string& row, std::shared_ptr<const Dataset> data,
                    const PredictOptions& options) {
  RunConfig c = ablation_config(base, row);
  // Variants share the baseline's output paths; keep them from overwriting each other.
  c.train.checkpoint_every = 0;
  c.train.loss_log.clear();
  Trainer trainer(c, std::move(data));
  trainer.train(c.train.steps);
  return trainer.evaluate(trainer.validation_indices(), options, row);
}

}  // namespace stsr
