#include "gqtok/trainer.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "gqtok/data.hpp"

namespace gqtok {

TrainingDiverged::TrainingDiverged(std::size_t step, const std::string& detail)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + detail), step_(step) {}

// ---------------------------------------------------------------------------
// Config

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("config: bad value '" + std::string(value) + "' for " + std::string(key) + " (expected " +
                    expected + ")");
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "non-negative integer");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "finite number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_u64(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) bad_value(key, v, "comma-separated integers");
  return out;
}

struct Field {
  const char* name;
  void (*set)(TrainConfig&, std::string_view key, std::string_view value);
  std::string (*get)(const TrainConfig&);
};

#define GQ_SIZE(f) \
  Field { #f, [](TrainConfig& c, std::string_view k, std::string_view v) { c.f = parse_u64(k, v); }, \
          [](const TrainConfig& c) { return std::to_string(c.f); } }
#define GQ_DOUBLE(f) \
  Field { #f, [](TrainConfig& c, std::string_view k, std::string_view v) { c.f = parse_double(k, v); }, \
          [](const TrainConfig& c) { return fmt(c.f); } }
#define GQ_BOOL(f) \
  Field { #f, [](TrainConfig& c, std::string_view k, std::string_view v) { c.f = parse_bool(k, v); }, \
          [](const TrainConfig& c) { return std::string(c.f ? "true" : "false"); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"stage",
            [](TrainConfig& c, std::string_view k, std::string_view v) {
              c.stage = static_cast<int>(parse_u64(k, v));
            },
            [](const TrainConfig& c) { return std::to_string(c.stage); }},
      GQ_DOUBLE(lr),
      GQ_DOUBLE(beta1),
      GQ_DOUBLE(beta2),
      GQ_DOUBLE(adam_eps),
      GQ_SIZE(batch_size),
      GQ_SIZE(steps),
      GQ_DOUBLE(recon_weight),
      GQ_DOUBLE(entropy_weight),
      GQ_DOUBLE(zeta),
      GQ_DOUBLE(gan_weight),
      GQ_DOUBLE(commitment_weight),
      GQ_BOOL(non_saturating),
      GQ_DOUBLE(tau),
      GQ_SIZE(seed),
      GQ_BOOL(ema),
      GQ_DOUBLE(ema_decay),
      GQ_SIZE(image_size),
      GQ_SIZE(image_channels),
      GQ_SIZE(base_channels),
      Field{"channel_mult",
            [](TrainConfig& c, std::string_view k, std::string_view v) { c.channel_mult = parse_list(k, v); },
            [](const TrainConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.channel_mult.size(); ++i) {
                if (i) s += ",";
                s += std::to_string(c.channel_mult[i]);
              }
              return s;
            }},
      GQ_SIZE(n_res_blocks),
      GQ_SIZE(downsample),
      GQ_SIZE(groups),
      GQ_SIZE(group_channels),
      GQ_SIZE(noise_channels),
      Field{"pre_activation",
            [](TrainConfig& c, std::string_view k, std::string_view v) {
              if (v == "none") c.pre_activation = PreActivation::None;
              else if (v == "tanh") c.pre_activation = PreActivation::Tanh;
              else bad_value(k, v, "none or tanh");
            },
            [](const TrainConfig& c) {
              return std::string(c.pre_activation == PreActivation::Tanh ? "tanh" : "none");
            }},
      GQ_SIZE(disc_base_channels),
      GQ_SIZE(disc_layers),
      GQ_SIZE(dataset_size),
      GQ_SIZE(data_seed),
      Field{"init_checkpoint",
            [](TrainConfig& c, std::string_view, std::string_view v) { c.init_checkpoint = std::string(v); },
            [](const TrainConfig& c) { return c.init_checkpoint; }},
  };
  return table;
}

#undef GQ_SIZE
#undef GQ_DOUBLE
#undef GQ_BOOL

const char* const kArchitectureKeys[] = {"image_size", "image_channels", "base_channels",  "channel_mult",
                                         "n_res_blocks", "downsample",   "groups",         "group_channels",
                                         "noise_channels", "pre_activation", "tau"};

}  // namespace

void TrainConfig::set(std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (key == f.name) {
      f.set(*this, key, trim(value));
      return;
    }
  }
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " at line " + std::to_string(line_no));
    }
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.name) + " = " + f.get(*this) + "\n";
  return out;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (stage != 1 && stage != 2) fail("stage must be 1 or 2");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (recon_weight < 0.0 || entropy_weight < 0.0 || gan_weight < 0.0 || commitment_weight < 0.0) {
    fail("loss weights must be >= 0");
  }
  if (zeta < 0.0) fail("zeta must be >= 0");
  if (!(tau > 0.0)) fail("tau must be > 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) fail("ema_decay must be in [0, 1]");
  if (dataset_size == 0) fail("dataset_size must be >= 1");
  if (image_size == 0 || image_size % downsample != 0) fail("image_size must be a positive multiple of downsample");
  if (disc_layers == 0) fail("disc_layers must be >= 1");
  try {
    tokenizer_spec(*this).validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

TokenizerSpec tokenizer_spec(const TrainConfig& cfg) {
  TokenizerSpec s;
  s.encoder.image_channels = cfg.image_channels;
  s.encoder.base_channels = cfg.base_channels;
  s.encoder.channel_mult = cfg.channel_mult;
  s.encoder.n_res_blocks = cfg.n_res_blocks;
  s.encoder.downsample = cfg.downsample;
  s.encoder.latent_channels = cfg.latent_channels();
  s.decoder.backbone = s.encoder;
  s.decoder.noise_channels = cfg.resolved_noise_channels();
  s.decoder.generative_mode = false;
  s.quant.groups = cfg.groups;
  s.quant.group_channels = cfg.group_channels;
  s.quant.pre_activation = cfg.pre_activation;
  s.tau = cfg.tau;
  return s;
}

DiscriminatorSpec discriminator_spec(const TrainConfig& cfg) {
  DiscriminatorSpec s;
  s.image_channels = cfg.image_channels;
  s.base_channels = cfg.disc_base_channels;
  s.n_layers = cfg.disc_layers;
  return s;
}

// ---------------------------------------------------------------------------
// Losses

ad::Var reconstruction_loss(ad::Var recon, const Tensor& images) {
  ad::Var diff = ad::sub(recon, recon.tape()->constant(images));
  return ad::mean(ad::mul(diff, diff));
}

ad::Var commitment_loss(ad::Var grouped, const Tensor& signs) {
  ad::Var diff = ad::sub(grouped, grouped.tape()->constant(signs));
  return ad::mean(ad::mul(diff, diff));
}

ad::Var generator_adversarial_loss(ad::Var fake_logits, bool non_saturating) {
  // log(1 - sigmoid(l)) = log_sigmoid(-l); -log sigmoid(l) = -log_sigmoid(l).
  if (non_saturating) return ad::scale(ad::mean(ad::log_sigmoid(fake_logits)), -1.0);
  return ad::mean(ad::log_sigmoid(ad::scale(fake_logits, -1.0)));
}

ad::Var discriminator_adversarial_loss(ad::Var real_logits, ad::Var fake_logits) {
  ad::Var real = ad::mean(ad::log_sigmoid(real_logits));
  ad::Var fake = ad::mean(ad::log_sigmoid(ad::scale(fake_logits, -1.0)));
  return ad::scale(ad::add(real, fake), -1.0);
}

GeneratorTerms generator_loss(ad::Tape& tape, Tokenizer& tok, const Discriminator* disc, const Tensor& images,
                              const Tensor* noise, const TrainConfig& cfg) {
  GeneratorTerms t;
  std::optional<ad::Var> z;
  if (noise) z = tape.constant(*noise);
  t.forward = tok.forward(tape, tape.constant(images), z);
  t.recon = reconstruction_loss(t.forward.recon, images);
  SoftAssignment q = soft_assignment(t.forward.grouped, tok.spec().tau);
  EntropyTerms e = entropy_loss(q, cfg.zeta);
  t.token_h = e.token;
  t.codebook_h = e.codebook;
  t.commitment = commitment_loss(t.forward.grouped, t.forward.signs);

  ad::Var total = cfg.recon_weight == 1.0 ? t.recon : ad::scale(t.recon, cfg.recon_weight);
  if (cfg.entropy_weight != 0.0) total = ad::add(total, ad::scale(e.combined, cfg.entropy_weight));
  if (cfg.commitment_weight != 0.0) total = ad::add(total, ad::scale(t.commitment, cfg.commitment_weight));
  if (disc) {
    t.gan_g = generator_adversarial_loss(disc->forward_frozen(tape, t.forward.recon), cfg.non_saturating);
    if (cfg.gan_weight != 0.0) total = ad::add(total, ad::scale(*t.gan_g, cfg.gan_weight));
  }
  t.total = total;
  return t;
}

// ---------------------------------------------------------------------------
// Optimization

void Adam::step(std::span<ad::Parameter* const> params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("Adam::step: parameter list changed");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Parameter& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.size() != p.value.size()) throw std::logic_error("Adam::step: parameter " + p.name + " changed size");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = p.grad[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * g;
      v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
      p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void ema_update(std::span<double> shadow, std::span<const double> weights, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("ema_update: decay must be in [0, 1]");
  if (shadow.size() != weights.size()) throw std::invalid_argument("ema_update: size mismatch");
  for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = decay * shadow[i] + (1.0 - decay) * weights[i];
}

void round_to_float32(Tensor& t) {
  for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Reports

std::vector<double> codebook_usage(std::span<const TokenGrid> grids) {
  if (grids.empty()) throw std::invalid_argument("codebook_usage: no token grids");
  const std::size_t g = grids[0].groups, dp = grids[0].group_channels;
  const std::size_t k = std::size_t{1} << dp;
  std::vector<std::vector<bool>> seen(g, std::vector<bool>(k, false));
  std::vector<std::size_t> distinct(g, 0);
  for (const auto& grid : grids) {
    if (grid.groups != g || grid.group_channels != dp) throw std::invalid_argument("codebook_usage: mixed (g, d')");
    for (std::size_t p = 0; p < grid.height * grid.width; ++p) {
      for (std::size_t j = 0; j < g; ++j) {
        const std::uint32_t idx = grid.indices[p * g + j];
        if (idx >= k) throw std::invalid_argument("codebook_usage: index out of range");
        if (!seen[j][idx]) {
          seen[j][idx] = true;
          ++distinct[j];
        }
      }
    }
  }
  std::vector<double> out(g);
  for (std::size_t j = 0; j < g; ++j) out[j] = static_cast<double>(distinct[j]) / static_cast<double>(k);
  return out;
}

double mean_usage(std::span<const double> usage) {
  if (usage.empty()) return 0.0;
  double s = 0.0;
  for (double u : usage) s += u;
  return s / static_cast<double>(usage.size());
}

std::string loss_csv_header() { return "step,recon,token_h,codebook_h,gan_g,gan_d,total,usage_mean,commitment"; }

std::string loss_csv_row(const StepReport& r) {
  return std::to_string(r.step) + "," + fmt(r.recon) + "," + fmt(r.token_h) + "," + fmt(r.codebook_h) + "," +
         fmt(r.gan_g) + "," + fmt(r.gan_d) + "," + fmt(r.total) + "," + fmt(r.usage_mean) + "," + fmt(r.commitment);
}

void write_loss_csv(std::ostream& out, std::span<const StepReport> reports) {
  out << loss_csv_header() << "\n";
  for (const auto& r : reports) out << loss_csv_row(r) << "\n";
}

// ---------------------------------------------------------------------------
// Training

namespace {

constexpr std::uint64_t kDiscSeedSalt = 0x5D15C0A7ULL;
constexpr std::uint64_t kNoiseSeedSalt = 0x9E3779B97F4A7C15ULL;

std::vector<ad::Parameter*> parameter_list(Module& m) {
  std::vector<ad::Parameter*> out;
  for (auto& p : m.parameters()) out.push_back(&p);
  return out;
}

std::vector<ad::Parameter*> tokenizer_parameters(Tokenizer& tok) {
  auto out = parameter_list(tok.encoder());
  auto dec = parameter_list(tok.decoder());
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

void round_all(std::span<ad::Parameter* const> params) {
  for (auto* p : params) round_to_float32(p->value);
}

void zero_all(std::span<ad::Parameter* const> params) {
  for (auto* p : params) p->zero_grad();
}

void update_ema(TrainRun& run, std::span<ad::Parameter* const> params) {
  if (!run.config.ema) return;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ema_update(run.ema_shadow[k].data(), params[k]->value.data(), run.config.ema_decay);
  }
}

void init_ema(TrainRun& run, std::span<ad::Parameter* const> params) {
  run.ema_shadow.clear();
  if (!run.config.ema) return;
  for (auto* p : params) run.ema_shadow.push_back(p->value);
}

StepReport report_from(std::size_t step, const GeneratorTerms& t) {
  StepReport r;
  r.step = step;
  r.recon = t.recon.value().item();
  r.token_h = t.token_h.value().item();
  r.codebook_h = t.codebook_h.value().item();
  r.commitment = t.commitment.value().item();
  r.gan_g = t.gan_g ? t.gan_g->value().item() : 0.0;
  r.total = t.total.value().item();
  r.usage = codebook_usage(t.forward.tokens);
  r.usage_mean = mean_usage(r.usage);
  return r;
}

void check_data(const TrainConfig& cfg, const std::vector<Tensor>& data) {
  if (data.empty()) throw std::invalid_argument("training data is empty");
  const Shape want{cfg.image_size, cfg.image_size, cfg.image_channels};
  for (const auto& img : data) {
    if (img.shape() != want) throw ShapeError::mismatch("training data", want, img.shape());
  }
}

void copy_weights(Module& m, const Checkpoint& ckpt, const std::string& prefix) {
  for (auto& p : m.parameters()) {
    const NamedArray* a = ckpt.find(prefix + p.name);
    if (!a && !prefix.empty()) a = ckpt.find(p.name);
    if (!a) throw CheckpointError("checkpoint has no array '" + p.name + "'");
    if (a->shape != p.value.shape()) {
      throw CheckpointError("checkpoint array '" + p.name + "' has shape " + shape_string(a->shape) + ", model expects " +
                            shape_string(p.value.shape()));
    }
    p.value = a->to_tensor();
  }
}

}  // namespace

std::unique_ptr<Tokenizer> initial_tokenizer(const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  auto tok = std::make_unique<Tokenizer>(tokenizer_spec(cfg), rng);
  round_all(tokenizer_parameters(*tok));
  return tok;
}

std::vector<std::size_t> batch_indices(std::size_t step, std::size_t batch_size, std::size_t dataset_size) {
  std::vector<std::size_t> out(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) out[b] = (step * batch_size + b) % dataset_size;
  return out;
}

TrainRun train_stage1(const TrainConfig& cfg, const std::vector<Tensor>& data, const StepCallback& on_step) {
  cfg.validate();
  if (cfg.stage != 1) throw ConfigError("config: train_stage1 needs stage = 1");
  check_data(cfg, data);
  TrainRun run;
  run.config = cfg;
  run.tokenizer = initial_tokenizer(cfg);
  const auto params = tokenizer_parameters(*run.tokenizer);
  init_ema(run, params);
  Adam adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Tensor images = stack_images(data, batch_indices(step, cfg.batch_size, data.size()));
    StepReport report;
    try {
      zero_all(params);
      ad::Tape tape;
      GeneratorTerms terms = generator_loss(tape, *run.tokenizer, nullptr, images, nullptr, cfg);
      report = report_from(step, terms);
      tape.backward(terms.total);
      tape.accumulate_parameter_grads();
      adam.step(params);
      round_all(params);
      for (auto* p : params)
        if (!p->value.all_finite()) throw NumericError("parameter " + p->name + " became non-finite");
    } catch (const NumericError& e) {
      throw TrainingDiverged(step, e.what());
    }
    update_ema(run, params);
    run.reports.push_back(report);
    if (on_step) on_step(report);
  }
  return run;
}

TrainRun train_stage2(const TrainConfig& cfg_in, const Checkpoint& stage1, const std::vector<Tensor>& data,
                      const StepCallback& on_step) {
  if (cfg_in.stage != 2) throw ConfigError("config: train_stage2 needs stage = 2");
  LoadedModel base = load_model(stage1);
  if (base.config.stage != 1) throw CheckpointError("stage 2 must start from a stage-1 checkpoint");

  TrainConfig cfg = cfg_in;
  for (const char* key : kArchitectureKeys) {
    for (const auto& f : fields()) {
      if (std::string_view(f.name) == key) f.set(cfg, key, f.get(base.config));
    }
  }
  cfg.validate();
  check_data(cfg, data);

  TrainRun run;
  run.config = cfg;
  run.tokenizer = std::move(base.tokenizer);
  run.tokenizer->expand_decoder();
  Rng disc_rng(cfg.seed ^ kDiscSeedSalt);
  run.discriminator = std::make_unique<Discriminator>(discriminator_spec(cfg), disc_rng);

  const auto params = tokenizer_parameters(*run.tokenizer);
  const auto disc_params = parameter_list(*run.discriminator);
  round_all(disc_params);
  init_ema(run, params);
  Adam g_adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Adam d_adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Rng noise_rng(cfg.seed ^ kNoiseSeedSalt);
  const std::size_t h = cfg.image_size / cfg.downsample;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Tensor images = stack_images(data, batch_indices(step, cfg.batch_size, data.size()));
    const Tensor noise = noise_rng.normal_tensor({cfg.batch_size, h, h, cfg.resolved_noise_channels()});
    StepReport report;
    try {
      // Generator step against the current discriminator.
      zero_all(params);
      Tensor fake;
      {
        ad::Tape tape;
        GeneratorTerms terms = generator_loss(tape, *run.tokenizer, run.discriminator.get(), images, &noise, cfg);
        report = report_from(step, terms);
        fake = terms.forward.recon.value();
        tape.backward(terms.total);
        tape.accumulate_parameter_grads();
      }
      g_adam.step(params);
      round_all(params);

      // Discriminator step on the same batch and the generator's output.
      zero_all(disc_params);
      {
        ad::Tape tape;
        ad::Var real = run.discriminator->forward(tape, tape.constant(images));
        ad::Var fk = run.discriminator->forward(tape, tape.constant(fake));
        ad::Var loss_d = discriminator_adversarial_loss(real, fk);
        report.gan_d = loss_d.value().item();
        tape.backward(loss_d);
        tape.accumulate_parameter_grads();
      }
      d_adam.step(disc_params);
      round_all(disc_params);
      for (auto* p : params)
        if (!p->value.all_finite()) throw NumericError("parameter " + p->name + " became non-finite");
      for (auto* p : disc_params)
        if (!p->value.all_finite()) throw NumericError("parameter " + p->name + " became non-finite");
    } catch (const NumericError& e) {
      throw TrainingDiverged(step, e.what());
    }
    update_ema(run, params);
    run.reports.push_back(report);
    if (on_step) on_step(report);
  }
  return run;
}

Checkpoint TrainRun::checkpoint() const {
  Checkpoint c;
  c.config_text = config.to_text();
  std::vector<const ad::Parameter*> params;
  for (const auto& p : tokenizer->encoder().parameters()) params.push_back(&p);
  for (const auto& p : tokenizer->decoder().parameters()) params.push_back(&p);
  for (const auto* p : params) c.arrays.push_back(NamedArray::from_tensor(p->name, p->value));
  if (discriminator) {
    for (const auto& p : discriminator->parameters()) c.arrays.push_back(NamedArray::from_tensor(p.name, p.value));
  }
  for (std::size_t k = 0; k < ema_shadow.size(); ++k) {
    c.arrays.push_back(NamedArray::from_tensor("ema." + params[k]->name, ema_shadow[k]));
  }
  return c;
}

LoadedModel load_model(const Checkpoint& ckpt, bool use_ema) {
  LoadedModel m;
  m.config = TrainConfig::parse(ckpt.config_text);
  m.config.validate();
  Rng rng(m.config.seed);
  m.tokenizer = std::make_unique<Tokenizer>(tokenizer_spec(m.config), rng);
  if (m.config.stage == 2) m.tokenizer->expand_decoder();
  const std::string prefix = use_ema ? "ema." : "";
  copy_weights(m.tokenizer->encoder(), ckpt, prefix);
  copy_weights(m.tokenizer->decoder(), ckpt, prefix);
  if (m.config.stage == 2 && ckpt.find("disc.conv0.weight")) {
    Rng disc_rng(0);
    m.discriminator = std::make_unique<Discriminator>(discriminator_spec(m.config), disc_rng);
    copy_weights(*m.discriminator, ckpt, "");
  }
  return m;
}

}  // namespace gqtok
