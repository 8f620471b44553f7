#include "gqtok/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gqtok/codec.hpp"
#include "gqtok/data.hpp"
#include "gqtok/entropy.hpp"
#include "gqtok/metrics.hpp"
#include "gqtok/parallel.hpp"
#include "gqtok/rng.hpp"
#include "gqtok/trainer.hpp"

namespace gqtok {

namespace {

// Raised for semantic problems with otherwise well-formed arguments.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

std::string fmt(double v) { return format_metric(v); }

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  return f;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string loss_csv;
  std::string init;
  std::vector<std::string> images;
  bool verbose = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : TrainConfig::load(a.config);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("config: --set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (a.seed) cfg.seed = *a.seed;
  if (!a.init.empty()) cfg.init_checkpoint = a.init;
  if (cfg.stage == 2 && cfg.init_checkpoint.empty()) {
    throw ConfigError("config: stage 2 requires init_checkpoint (a stage-1 checkpoint)");
  }
  std::optional<Checkpoint> stage1;
  if (cfg.stage == 2) {
    stage1 = Checkpoint::load(cfg.init_checkpoint);
    // Architecture comes from the checkpoint; validate with it applied.
    const TrainConfig base = TrainConfig::parse(stage1->config_text);
    cfg.image_size = base.image_size;
    cfg.image_channels = base.image_channels;
  }
  cfg.validate();

  std::vector<Tensor> data;
  if (a.images.empty()) {
    data = synthetic_images(cfg.dataset_size, cfg.image_size, cfg.image_channels, cfg.data_seed);
  } else {
    for (const auto& p : a.images) data.push_back(image_to_tensor(read_pnm(p)));
  }

  err << "# resolved config\n";
  std::istringstream lines(cfg.to_text());
  for (std::string line; std::getline(lines, line);) err << "#   " << line << "\n";
  err << "# threads = " << worker_count() << "\n";

  std::ofstream csv_file;
  std::ostream* csv = &out;
  if (!a.loss_csv.empty()) {
    csv_file = open_out(a.loss_csv);
    csv = &csv_file;
  }
  *csv << loss_csv_header() << "\n";
  auto on_step = [&](const StepReport& r) {
    *csv << loss_csv_row(r) << "\n";
    if (a.verbose && (r.step % 10 == 0)) err << "# step " << r.step << " total " << fmt(r.total) << "\n";
  };
  TrainRun run = cfg.stage == 1 ? train_stage1(cfg, data, on_step) : train_stage2(cfg, *stage1, data, on_step);
  csv->flush();
  run.checkpoint().save(a.checkpoint);
  err << "# wrote " << a.checkpoint << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_encode(const std::string& ckpt_path, const std::string& input, const std::string& output, std::ostream& err) {
  LoadedModel m = load_model(Checkpoint::load(ckpt_path));
  const Image img = read_pnm(input);
  if (img.channels != m.config.image_channels) {
    throw UsageError("image has " + std::to_string(img.channels) + " channels, model expects " +
                     std::to_string(m.config.image_channels));
  }
  const TokenGrid tokens = m.tokenizer->tokenize(image_to_tensor(img));
  const auto bytes = pack(tokens, img.height, img.width);
  write_file_bytes(output, bytes);
  err << "# encoded " << tokens.height << "x" << tokens.width << "x" << tokens.groups << " tokens, "
      << bytes.size() << " bytes\n";
  return 0;
}

int cmd_decode(const std::string& ckpt_path, const std::string& input, const std::string& output,
               std::uint64_t seed, std::ostream& err) {
  LoadedModel m = load_model(Checkpoint::load(ckpt_path));
  const DecodedStream s = unpack(read_file_bytes(input));
  const TrainConfig& c = m.config;
  if (s.header.groups != c.groups || s.header.group_channels != c.group_channels) {
    throw UsageError("stream has g=" + std::to_string(s.header.groups) + " d'=" +
                     std::to_string(s.header.group_channels) + ", model has g=" + std::to_string(c.groups) +
                     " d'=" + std::to_string(c.group_channels));
  }
  if (std::size_t{s.header.height} * c.downsample != s.header.image_height ||
      std::size_t{s.header.width} * c.downsample != s.header.image_width) {
    throw UsageError("stream token grid does not match the image size for downsample " +
                     std::to_string(c.downsample));
  }
  Tensor recon;
  if (m.tokenizer->decoder().generative()) {
    const Tensor z =
        without_batch_axis(NoisePrior{c.resolved_noise_channels(), seed}.sample(1, s.header.height, s.header.width));
    recon = m.tokenizer->reconstruct(s.tokens, &z);
  } else {
    recon = m.tokenizer->reconstruct(s.tokens);
  }
  write_pnm(output, tensor_to_image(recon));
  err << "# decoded " << s.header.image_height << "x" << s.header.image_width << "\n";
  return 0;
}

int cmd_stats(const std::string& original, const std::string& recon, const std::string& wtok, std::ostream& out) {
  const Image a = read_pnm(original);
  const Image b = read_pnm(recon);
  const MetricReport r = compare(a, b);
  out << "psnr,ssim,mse,compression_ratio\n";
  std::string ratio;
  if (!wtok.empty()) ratio = fmt(compression_ratio(read_header(read_file_bytes(wtok)), a.channels));
  out << fmt(r.psnr) << "," << fmt(r.ssim) << "," << fmt(r.mse) << "," << ratio << "\n";
  return 0;
}

int cmd_oracle(std::size_t d, std::vector<std::size_t> gs, double tau, std::size_t hw, std::size_t seeds,
               std::uint64_t base_seed, std::ostream& out) {
  if (d < 1 || d > kOracleMaxChannels) {
    throw UsageError("--d must be in [1, " + std::to_string(kOracleMaxChannels) + "] for exhaustive enumeration");
  }
  if (hw < 1) throw UsageError("--hw must be >= 1");
  if (gs.empty()) {
    for (std::size_t g = 1; g <= d; ++g)
      if (d % g == 0) gs.push_back(g);
  }
  for (std::size_t g : gs) {
    if (g < 1 || d % g != 0) throw UsageError("--g " + std::to_string(g) + " does not divide d=" + std::to_string(d));
  }
  out << "seed,d,g,d_prime,tau,h,w,grouped_token_h,exact_token_h,token_gap,grouped_codebook_h,exact_codebook_h,"
         "codebook_gap\n";
  for (std::size_t k = 0; k < seeds; ++k) {
    const std::uint64_t seed = base_seed + k;
    Rng rng(seed);
    const Tensor u = rng.normal_tensor({hw, hw, d});
    const ExactEntropy exact = oracle_full_entropy(u, tau);
    for (std::size_t g : gs) {
      QuantConfig q;
      q.groups = g;
      q.group_channels = d / g;
      const GroupDistribution dist = soft_assignment(group_reshape(u, q), tau);
      const double th = token_entropy(dist), ch = codebook_entropy(dist);
      out << seed << "," << d << "," << g << "," << d / g << "," << fmt(tau) << "," << hw << "," << hw << ","
          << fmt(th) << "," << fmt(exact.token) << "," << fmt(th - exact.token) << "," << fmt(ch) << ","
          << fmt(exact.codebook) << "," << fmt(ch - exact.codebook) << "\n";
    }
  }
  return 0;
}

int cmd_bench_memory(const std::vector<std::size_t>& dps, const std::vector<std::size_t>& gs,
                     const std::vector<std::size_t>& hs, const std::vector<std::size_t>& ws, std::size_t elem,
                     double budget_gib, bool measure, std::ostream& out) {
  const double budget = budget_gib * 1024.0 * 1024.0 * 1024.0;
  out << "d_prime,g,h,w,d,grouped_bytes,ungrouped_bytes,ungrouped_peak_bytes,budget_bytes,status,"
         "measured_grouped_bytes\n";
  for (std::size_t dp : dps)
    for (std::size_t g : gs)
      for (std::size_t h : hs)
        for (std::size_t w : ws) {
          QuantConfig q;
          q.groups = g;
          q.group_channels = dp;
          q.validate();
          const BufferFootprint f = entropy_buffer_footprint(q, h, w, elem);
          const double peak = static_cast<double>(kLiveCodeBuffers) * f.ungrouped_bytes;
          std::string measured;
          if (measure && f.grouped_bytes <= 256.0 * 1024 * 1024) {
            Rng rng(dp * 1000 + g);
            AllocationProbe probe;
            ad::Tape tape;
            SoftAssignment sa = soft_assignment(tape.variable(rng.normal_tensor({h, w, g, dp})), 1.0);
            tape.backward(entropy_loss(sa, 1.0).combined);
            measured = fmt(static_cast<double>(probe.peak_elements() * elem));
          } else if (measure) {
            measured = "skipped";
          }
          out << dp << "," << g << "," << h << "," << w << "," << g * dp << "," << fmt(f.grouped_bytes) << ","
              << fmt(f.ungrouped_bytes) << "," << fmt(peak) << "," << fmt(budget) << ","
              << (peak > budget ? "exceeds-budget" : "ok") << "," << measured << "\n";
        }
  return 0;
}

const char* kind_of(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (auto* c = dynamic_cast<const CodecError*>(&e)) return codec_error_name(c->kind());
  if (dynamic_cast<const ImageError*>(&e)) return "image";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const TrainingDiverged*>(&e)) return "diverged";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid-argument";
  return "internal";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Group-wise lookup-free quantization toolkit", "gqtok"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train stage 1 or 2; writes a checkpoint and a loss CSV");
  t->add_option("--config", train.config, "key = value config file");
  t->add_option("--set", train.sets, "Override, key=value (repeatable)");
  t->add_option("--seed", train.seed, "Overrides the config seed");
  t->add_option("--checkpoint,-o", train.checkpoint, "Output checkpoint")->required();
  t->add_option("--loss-csv", train.loss_csv, "Loss CSV path (default: stdout)");
  t->add_option("--init", train.init, "Stage-1 checkpoint for stage 2");
  t->add_option("--image", train.images, "Training image (PPM/PGM, repeatable); default synthetic");
  t->add_flag("-v,--verbose", train.verbose);

  std::string ckpt, input, output, original, recon, wtok;
  std::uint64_t seed = 0;
  auto* enc = app.add_subcommand("encode", "Image -> .wtok");
  enc->add_option("--checkpoint", ckpt)->required();
  enc->add_option("--input,-i", input)->required();
  enc->add_option("--output,-o", output)->required();

  auto* dec = app.add_subcommand("decode", ".wtok -> image");
  dec->add_option("--checkpoint", ckpt)->required();
  dec->add_option("--input,-i", input)->required();
  dec->add_option("--output,-o", output)->required();
  dec->add_option("--seed", seed, "Noise seed for the generative decoder");

  auto* st = app.add_subcommand("stats", "PSNR / SSIM / MSE CSV");
  st->add_option("--original", original)->required();
  st->add_option("--recon", recon)->required();
  st->add_option("--wtok", wtok, "Stream whose header gives the compression ratio");

  std::size_t d = 0, hw = 4, seeds = 10;
  std::vector<std::size_t> gs;
  double tau = 1.0;
  auto* orc = app.add_subcommand("oracle", "Grouped vs exhaustive entropies CSV");
  orc->add_option("--d", d)->required();
  orc->add_option("--g", gs, "Groupings (default: every divisor of d)")->delimiter(',');
  orc->add_option("--tau", tau);
  orc->add_option("--hw", hw, "Spatial extent h = w");
  orc->add_option("--seeds", seeds, "Number of random latents");
  orc->add_option("--seed", seed, "First seed");

  std::vector<std::size_t> dps{4, 8, 12, 16, 20, 24}, bgs{1, 2, 4}, hs{16}, ws{16};
  std::size_t elem = 4;
  double budget = 16.0;
  bool measure = false;
  auto* bm = app.add_subcommand("bench-memory", "Entropy buffer footprint sweep CSV");
  bm->add_option("--d-prime", dps)->delimiter(',');
  bm->add_option("--g", bgs)->delimiter(',');
  bm->add_option("--height", hs)->delimiter(',');
  bm->add_option("--width", ws)->delimiter(',');
  bm->add_option("--element-bytes", elem);
  bm->add_option("--budget-gib", budget);
  bm->add_flag("--measure", measure, "Also run the grouped path and record its largest allocation");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error kind=usage message=" << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*t) return cmd_train(train, out, err);
    if (*enc) return cmd_encode(ckpt, input, output, err);
    if (*dec) return cmd_decode(ckpt, input, output, seed, err);
    if (*st) return cmd_stats(original, recon, wtok, out);
    if (*orc) return cmd_oracle(d, gs, tau, hw, seeds, seed, out);
    if (*bm) return cmd_bench_memory(dps, bgs, hs, ws, elem, budget, measure, out);
  } catch (const UsageError& e) {
    err << "error kind=usage message=" << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error kind=" << kind_of(e) << " message=" << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace gqtok
