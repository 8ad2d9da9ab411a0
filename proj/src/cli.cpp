// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "nbsep/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>

#include "nbsep/checkpoint.hpp"
#include "nbsep/config.hpp"
#include "nbsep/dataset.hpp"
#include "nbsep/gradient_suite.hpp"
#include "nbsep/network.hpp"
#include "nbsep/trainer.hpp"
#include "nbsep/wav.hpp"

#include "format.hpp"

namespace fs = std::filesystem;

namespace nbsep {

namespace {

// Reference values of the two presets, in parameters.
constexpr double kSmallTarget = 0.9e6;
constexpr double kLargeTarget = 5.6e6;

struct Globals {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t threads = 1;
  bool threads_given = false;
  std::string resume;
  bool record_attention = false;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ConfigMap effective_config(const Globals& g) {
  ConfigMap cfg = default_config();
  if (!g.config_path.empty()) {
    for (const auto& [k, v] : read_config_file(g.config_path)) cfg[k] = v;
  }
  for (const auto& s : g.sets) apply_override(cfg, s);
  if (g.seed_given) {
    cfg["train.seed"] = std::to_string(g.seed);
    cfg["data.seed"] = std::to_string(g.seed);
  }
  if (g.threads_given) cfg["train.threads"] = std::to_string(g.threads);
  return cfg;
}

void echo_config(const ConfigMap& cfg, std::ostream& log) {
  log << "effective configuration:\n";
  for (const auto& [k, v] : cfg) log << "  " << k << " = " << v << "\n";
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << text;
}

std::string data_root(const std::string& given) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv("NBSEP_DATA_DIR"); env && *env) return env;
  throw UsageError("no dataset given: pass --data or set NBSEP_DATA_DIR");
}

bool has_manifest(const fs::path& dir) { return fs::exists(dir / kManifestName); }

// Runs `fn` with the checkpoint's model in its stored precision.
template <typename Fn>
void with_model(const Checkpoint& ckpt, Fn&& fn) {
  auto it = ckpt.metadata.find("precision");
  if (it != ckpt.metadata.end() && it->second == "float64") {
    Model<double> m = restore_model<double>(ckpt);
    fn(m);
  } else {
    Model<float> m = restore_model<float>(ckpt);
    fn(m);
  }
}

void check_mixture(const Waveform& mix, const ModelConfig& mc, double rate,
                   const std::string& what) {
  if (mix.channels != mc.channels) {
    throw DataError(what + ": expected " + std::to_string(mc.channels) + " channels, got " +
                    std::to_string(mix.channels));
  }
  if (mix.sample_rate != rate) {
    throw DataError(what + ": expected sample rate " + fmt("%g", rate) + " Hz, got " +
                    fmt("%g", mix.sample_rate) + " Hz");
  }
}

void write_matrix(const std::string& path, const std::vector<double>& v, std::size_t rows,
                  std::size_t cols) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  char buf[32];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", v[r * cols + c]);
      os << (c ? "\t" : "") << buf;
    }
    os << '\n';
  }
}

// Q-K values above this are clipped when rendering so that the diagonal does
// not wash out the rest of the map. The text export is never clipped.
constexpr double kQkRenderClip = 0.03;

void export_summary(const AttentionSummary& s, const std::string& prefix) {
  write_matrix(prefix + "qk.tsv", s.query_key, s.frames, s.frames);
  write_matrix(prefix + "fk.tsv", s.freq_key, s.freqs, s.frames);
  write_heatmap(prefix + "qk.ppm", s.query_key, s.frames, s.frames, kQkRenderClip);
  const double fk_max = *std::max_element(s.freq_key.begin(), s.freq_key.end());
  write_heatmap(prefix + "fk.ppm", s.freq_key, s.freqs, s.frames, fk_max);
}

int cmd_simulate(const ConfigMap& cfg, const std::string& out_dir, std::ostream& out,
                 std::ostream& log) {
  const DatasetConfig dc = dataset_config(cfg);
  echo_config(cfg, log);
  make_dir(out_dir);
  const auto entries = write_dataset(dc, out_dir);
  write_text((fs::path(out_dir) / "config.txt").string(), format_config(cfg));
  out << "wrote " << entries.size() << " mixtures to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(ConfigMap cfg, const Globals& g, const std::string& data,
              const std::string& out_dir, std::ostream& out, std::ostream& log) {
  const fs::path root(data_root(data));
  fs::path train_dir = root / "train";
  if (!has_manifest(train_dir)) train_dir = root;
  if (!has_manifest(train_dir)) {
    throw DataError("train: no " + std::string(kManifestName) + " in " + root.string() +
                    " or " + (root / "train").string());
  }
  const DirectorySource train(train_dir.string());
  std::unique_ptr<DirectorySource> val;
  if (has_manifest(root / "val")) val = std::make_unique<DirectorySource>((root / "val").string());
  if (train.size() == 0) throw DataError("train: " + train_dir.string() + " is empty");

  const Utterance first = train.get(0);
  if (first.mixture.sample_rate != std::stod(cfg.at("data.sample_rate"))) {
    log << "note: using the dataset's sample rate " << first.mixture.sample_rate << " Hz\n";
    cfg["data.sample_rate"] = detail::format_double(first.mixture.sample_rate);
  }
  const ModelConfig mc = model_config(cfg);
  const TrainConfig tc = train_config(cfg);
  const StftConfig sc = stft_config(cfg);
  if (first.mixture.channels != mc.channels) {
    throw DataError("train: model expects " + std::to_string(mc.channels) +
                    " channels, dataset has " + std::to_string(first.mixture.channels));
  }
  echo_config(cfg, log);
  make_dir(out_dir);
  write_text((fs::path(out_dir) / "config.txt").string(), format_config(cfg));

  FitOptions fo;
  fo.out_dir = out_dir;
  fo.resume_from = g.resume;
  fo.progress = &log;
  const FitResult r = fit(train, val.get(), mc, tc, sc, fo);
  const std::size_t batches = train.size() / tc.utterances_per_batch;
  if (!r.epochs.empty() && r.epochs.back().skipped == batches) {
    throw NumericError("train: every step of the last epoch had a non-finite loss or gradient");
  }
  out << "steps\t" << r.steps << "\n";
  out << "best_val_si_sdri\t" << fmt("%.4f", r.best_si_sdri) << "\n";
  out << "best_checkpoint\t" << r.best_checkpoint << "\n";
  out << "last_checkpoint\t" << r.last_checkpoint << "\n";
  return kExitOk;
}

template <typename T>
void separate_one(Model<T>& model, const Waveform& mix, const StftConfig& sc,
                  const std::string& prefix, bool record, std::ostream& log) {
  AttentionRecord rec;
  const SpeakerSignals est = separate(model, mix, sc, 0, record ? &rec : nullptr);
  for (double v : est.data) {
    if (!std::isfinite(v)) throw NumericError("separate: non-finite output for " + prefix);
  }
  for (std::size_t n = 0; n < est.speakers; ++n) {
    const auto row = est.row(0, n);
    write_wav(prefix + "_s" + std::to_string(n) + ".wav",
              Waveform::mono(mix.sample_rate, std::vector<double>(row.begin(), row.end())));
  }
  if (record) {
    for (std::size_t b = 0; b < rec.blocks.size(); ++b)
      for (std::size_t h = 0; h < rec.heads; ++h)
        export_summary(attention_summaries(rec, b, h),
                       prefix + "_b" + std::to_string(b) + "_h" + std::to_string(h) + "_");
  }
  log << "separated " << prefix << "\n";
}

int cmd_separate(const ConfigMap& cfg, const Globals& g, const std::string& ckpt_path,
                 const std::string& input, const std::string& data, const std::string& out_dir,
                 std::ostream& out, std::ostream& log) {
  if (input.empty() == data.empty()) throw UsageError("separate: give exactly one of --input or --data");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const StftConfig sc = checkpoint_stft(ckpt);
  const double rate = checkpoint_sample_rate(ckpt);
  echo_config(cfg, log);
  make_dir(out_dir);
  std::size_t count = 0;
  with_model(ckpt, [&](auto& model) {
    if (!input.empty()) {
      const Waveform mix = read_wav(input);
      check_mixture(mix, model.config(), rate, input);
      separate_one(model, mix, sc, (fs::path(out_dir) / fs::path(input).stem()).string(),
                   g.record_attention, log);
      ++count;
      return;
    }
    const DirectorySource src(data_root(data));
    for (const auto& e : src.entries()) {
      const Waveform mix = read_wav((fs::path(data_root(data)) / e.mixture).string());
      check_mixture(mix, model.config(), rate, e.mixture);
      separate_one(model, mix, sc, (fs::path(out_dir) / e.id).string(), g.record_attention,
                   log);
      ++count;
    }
  });
  out << "separated " << count << " mixtures into " << out_dir << "\n";
  return kExitOk;
}

int cmd_evaluate(const ConfigMap& cfg, const std::string& data, const std::string& est_dir,
                 const std::string& out_path, std::ostream& out, std::ostream& log) {
  const std::string root = data_root(data);
  const DirectorySource src(root);
  if (src.size() == 0) throw DataError("evaluate: " + root + " is empty");
  echo_config(cfg, log);
  EvalTable all;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Utterance u = src.get(i);
    const std::size_t S = u.mixture.samples(), N = u.targets.size();
    const std::size_t hop = (cfg.at("stft.window_length") == "auto"
                                 ? StftConfig::for_sample_rate(u.mixture.sample_rate)
                                 : stft_config(cfg))
                                .hop();
    SpeakerSignals est(1, N, S), tgt(1, N, S), mix(1, 1, S);
    const auto ref = u.mixture.channel(0);
    std::copy(ref.begin(), ref.end(), mix.row(0, 0).begin());
    for (std::size_t n = 0; n < N; ++n) {
      std::copy(u.targets[n].begin(), u.targets[n].end(), tgt.row(0, n).begin());
      const std::string path =
          (fs::path(est_dir) / (u.id + "_s" + std::to_string(n) + ".wav")).string();
      const Waveform w = read_wav(path);
      if (w.channels != 1) throw DataError("evaluate: " + path + " is not mono");
      const std::size_t L = w.samples();
      if ((L > S ? L - S : S - L) > hop) {
        throw DataError("evaluate: " + path + " has " + std::to_string(L) +
                        " samples, target has " + std::to_string(S) + " (allowed: one hop, " +
                        std::to_string(hop) + ")");
      }
      std::copy_n(w.data.begin(), std::min(L, S), est.row(0, n).begin());
    }
    const EvalTable t = evaluate(est, tgt, mix, {u.id});
    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
  }
  for (const auto& r : all.rows) {
    all.mean_si_sdr += r.si_sdr / double(all.rows.size());
    all.mean_si_sdri += r.si_sdri / double(all.rows.size());
  }
  const std::string text = all.to_text();
  out << text;
  if (!out_path.empty()) write_text(out_path, text);
  return kExitOk;
}

int cmd_export_attention(const ConfigMap& cfg, const std::string& ckpt_path,
                         const std::string& input, std::size_t block, std::size_t head,
                         const std::string& out_dir, std::ostream& out, std::ostream& log) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const StftConfig sc = checkpoint_stft(ckpt);
  const double rate = checkpoint_sample_rate(ckpt);
  echo_config(cfg, log);
  with_model(ckpt, [&](auto& model) {
    const ModelConfig& mc = model.config();
    if (block >= mc.num_blocks || head >= mc.num_heads) {
      throw UsageError("export-attention: block " + std::to_string(block) + " / head " +
                       std::to_string(head) + " out of range (model has " +
                       std::to_string(mc.num_blocks) + " blocks, " +
                       std::to_string(mc.num_heads) + " heads)");
    }
    const Waveform mix = read_wav(input);
    check_mixture(mix, mc, rate, input);
    AttentionRecord rec;
    separate(model, mix, sc, 0, &rec);
    make_dir(out_dir);
    const AttentionSummary s = attention_summaries(rec, block, head);
    export_summary(s, (fs::path(out_dir) / "").string());
    out << "Q-K map " << s.frames << "x" << s.frames << ", F-K map " << s.freqs << "x"
        << s.frames << " written to " << out_dir << "\n";
  });
  return kExitOk;
}

int cmd_gradcheck(std::size_t seeds, std::ostream& out) {
  const auto results = run_gradient_suite(1, seeds);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.result.passed(kGradSuiteTolerance);
    ok = ok && pass;
    char line[160];
    std::snprintf(line, sizeof line, "%-16s seed %llu  checked %6zu  max rel error %.3e  %s\n",
                  r.name.c_str(), static_cast<unsigned long long>(r.seed), r.result.checked,
                  r.result.max_rel_error, pass ? "ok" : "FAIL");
    out << line;
  }
  if (!ok) throw NumericError("gradcheck: relative error at or above 1e-4");
  return kExitOk;
}

int cmd_params(const ConfigMap& cfg, std::ostream& out) {
  out << "model\tchannels\tparameters\treference\tdeviation\n";
  for (const char* name : {"small", "large"}) {
    for (std::size_t c : {2, 4, 8}) {
      ModelConfig m = std::string(name) == "small" ? ModelConfig::small() : ModelConfig::large();
      m.channels = c;
      const double ref = std::string(name) == "small" ? kSmallTarget : kLargeTarget;
      const std::size_t n = count_parameters(m);
      out << name << '\t' << c << '\t' << n << '\t' << fmt("%.0f", ref) << '\t'
          << fmt("%+.2f%%", 100.0 * (double(n) - ref) / ref) << '\n';
    }
  }
  const ModelConfig mc = model_config(cfg);
  out << "configured\t" << mc.channels << '\t' << count_parameters(mc) << "\t-\t-\n";
  return kExitOk;
}

}  // namespace

void write_heatmap(const std::string& path, const std::vector<double>& values,
                   std::size_t rows, std::size_t cols, double max_value) {
  // Dark blue through teal and green to yellow.
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << "P6\n" << cols << ' ' << rows << "\n255\n";
  const double scale = max_value > 0.0 ? 1.0 / max_value : 0.0;
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const double x = std::clamp(values[i] * scale, 0.0, 1.0) * double(stops.size() - 1);
    const std::size_t k = std::min(std::size_t(x), stops.size() - 2);
    const double a = x - double(k);
    for (int ch = 0; ch < 3; ++ch) {
      const double v = stops[k][ch] * (1.0 - a) + stops[k + 1][ch] * a;
      os.put(char(static_cast<unsigned char>(std::lround(v))));
    }
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& log) {
  CLI::App app{"Narrow-band multichannel speech separation", "nbsep"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "key = value configuration file");
  app.add_option("--set", g.sets, "override one key (key=value); repeatable");
  auto* seed_opt = app.add_option("--seed", g.seed, "sets train.seed and data.seed");
  auto* threads_opt =
      app.add_option("--threads", g.threads, "worker threads; 1 is the reproducible mode")
          ->check(CLI::PositiveNumber);
  app.add_option("--resume", g.resume, "checkpoint to continue training from");
  app.add_flag("--record-attention", g.record_attention,
               "separate: also export attention maps of every block and head");

  std::string out_dir, data, ckpt, input, estimates, out_file;
  std::size_t block = 0, head = 0, seeds = 5;

  auto* sim = app.add_subcommand("simulate", "write a synthetic dataset split");
  sim->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", data, "dataset root holding train/ and optionally val/");
  train->add_option("--out", out_dir, "run directory")->required();

  auto* sep = app.add_subcommand("separate", "separate a mixture or a dataset");
  sep->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  sep->add_option("--input", input, "multichannel mixture WAV");
  sep->add_option("--data", data, "dataset directory with a manifest");
  sep->add_option("--out", out_dir, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "score separated estimates");
  ev->add_option("--data", data, "dataset directory with a manifest");
  ev->add_option("--estimates", estimates, "directory of <id>_s<n>.wav files")->required();
  ev->add_option("--out", out_file, "also write the table to this file");

  auto* att = app.add_subcommand("export-attention", "export Q-K and F-K attention maps");
  att->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  att->add_option("--input", input, "multichannel mixture WAV")->required();
  att->add_option("--block", block, "block index");
  att->add_option("--head", head, "head index");
  att->add_option("--out", out_dir, "output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every layer");
  gc->add_option("--seeds", seeds, "number of seeds")->check(CLI::PositiveNumber);

  auto* params = app.add_subcommand("params", "print exact parameter counts");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, log);
    return code == 0 ? kExitOk : kExitUsage;
  }
  g.seed_given = seed_opt->count() > 0;
  g.threads_given = threads_opt->count() > 0;

  try {
    const ConfigMap cfg = effective_config(g);
    if (sim->parsed()) return cmd_simulate(cfg, out_dir, out, log);
    if (train->parsed()) return cmd_train(cfg, g, data, out_dir, out, log);
    if (sep->parsed()) return cmd_separate(cfg, g, ckpt, input, data, out_dir, out, log);
    if (ev->parsed()) return cmd_evaluate(cfg, data, estimates, out_file, out, log);
    if (att->parsed()) {
      return cmd_export_attention(cfg, ckpt, input, block, head, out_dir, out, log);
    }
    if (gc->parsed()) return cmd_gradcheck(seeds, out);
    if (params->parsed()) return cmd_params(cfg, out);
  } catch (const NumericError& e) {
    log << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    log << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    log << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace nbsep
