// Command-line entry point: gen-data, train, decode, evaluate, analyze, rerun.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "compslu/checkpoint.hpp"
#include "compslu/errors.hpp"
#include "compslu/parallel.hpp"
#include "compslu/pipelines.hpp"

#ifndef COMPSLU_VERSION
#define COMPSLU_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace compslu;

namespace {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kMissingFile = 3,
  kConfig = 4,
  kData = 5,
  kInvalidInput = 6,
};

struct MissingFileError : Error {
  using Error::Error;
};

void require_exists(const fs::path& p) {
  if (!fs::exists(p)) throw MissingFileError("no such file or directory: " + p.string());
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path default_out(const std::string& command) {
  const char* root = std::getenv("COMPSLU_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / command;
}

/// Written last into every output directory.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_path;
  KeyValueConfig config;
  std::uint64_t seed = 0;
  std::string started_at = utc_now();
  std::vector<std::string> outputs;

  void write(const fs::path& dir) const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config_path"] = config_path;
    j["config"] = config.values();
    j["seed"] = seed;
    j["code_version"] = COMPSLU_VERSION;
    j["started_at"] = started_at;
    j["finished_at"] = utc_now();
    j["outputs"] = outputs;
    std::ofstream(dir / "manifest.json") << j.dump(2) << '\n';
  }
};

/// Reads the optional config file and overrides, then checks every key
/// belongs to some section.
KeyValueConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  KeyValueConfig cfg;
  if (!path.empty()) {
    require_exists(path);
    cfg = KeyValueConfig::parse_file(path);
  }
  cfg.apply_overrides(overrides);
  return cfg;
}

void check_known_keys(const KeyValueConfig& cfg) {
  SynthConfig::from_config(cfg);
  SystemConfig::from_config(cfg);
  TrainConfig::from_config(cfg);
  cfg.require_all_used();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

std::vector<Example> load_split(const fs::path& corpus, const std::string& split) {
  require_exists(corpus / "labels.txt");
  require_exists(corpus / (split + ".meta"));
  require_exists(corpus / (split + ".frames"));
  return read_split(corpus, split, LabelSet::read(corpus / "labels.txt"));
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string corpus;
  std::string split = "test";
  std::string system;
  std::string checkpoint;
  std::string mode = "beam";
  std::string predictions;
  std::string manifest;
  std::size_t workers = default_workers();
  std::size_t log_every = 100;
};

int cmd_gen_data(const Options& o, RunManifest& m) {
  m.config = load_config(o.config_path, o.overrides);
  check_known_keys(m.config);
  const auto synth = SynthConfig::from_config(m.config);
  m.seed = synth.seed;
  const fs::path out = o.out.empty() ? default_out("gen-data") : fs::path(o.out);
  const auto corpus = generate_corpus(synth);
  write_corpus(corpus, out);
  m.outputs = {"labels.txt", "vocab.txt"};
  for (const auto& [split, examples] : corpus.splits) {
    m.outputs.push_back(split + ".meta");
    m.outputs.push_back(split + ".frames");
  }
  m.write(out);
  std::cerr << "wrote corpus to " << out.string() << '\n';
  return kOk;
}

int cmd_train(const Options& o, RunManifest& m) {
  m.config = load_config(o.config_path, o.overrides);
  if (!o.system.empty()) m.config.set("system", o.system);
  require_exists(o.corpus);
  const fs::path corpus_dir(o.corpus);
  require_exists(corpus_dir / "vocab.txt");
  const auto labels = LabelSet::read(corpus_dir / "labels.txt");
  const auto vocab = Vocabulary::read(corpus_dir / "vocab.txt");
  const auto train = load_split(corpus_dir, "train");
  if (train.empty()) throw DataError("training split is empty");
  if (!m.config.has("encoder.input_dim")) {
    m.config.set("encoder.input_dim", std::to_string(train.front().frame_dim));
  }
  check_known_keys(m.config);
  const auto system_config = SystemConfig::from_config(m.config);
  const auto train_config = TrainConfig::from_config(m.config);
  m.seed = train_config.seed;

  const fs::path out = o.out.empty() ? default_out("train") : fs::path(o.out);
  fs::create_directories(out);
  SluSystem system(system_config, labels, vocab, train_config.seed);
  std::ofstream log(out / "train_log.tsv");
  log << "step\tloss\tasr_loss\tnlu_loss\tgrad_norm\n";
  const auto stats = train_system(system, train, train_config, [&](const TrainStats& s) {
    log << s.step << '\t' << format_fixed(s.loss.total, 6) << '\t' << format_fixed(s.loss.asr, 6)
        << '\t' << format_fixed(s.loss.nlu, 6) << '\t' << format_fixed(s.grad_norm, 6) << '\n';
    if (o.log_every > 0 && s.step % o.log_every == 0) {
      std::cerr << "step " << s.step << " loss " << format_fixed(s.loss.total, 4) << '\n';
    }
  });
  save_system(out, system, m.config, train_config.seed, stats.step);
  m.outputs = {"model.ckpt", "config.txt", "labels.txt", "vocab.txt", "train_log.tsv"};
  m.write(out);
  std::cerr << "saved " << to_string(system_config.system) << " checkpoint to " << out.string()
            << '\n';
  return kOk;
}

int cmd_decode(const Options& o, RunManifest& m) {
  require_exists(o.checkpoint);
  const auto system = load_system(o.checkpoint);
  m.config = KeyValueConfig::parse_file(fs::path(o.checkpoint) / "config.txt");
  m.config_path = (fs::path(o.checkpoint) / "config.txt").string();
  m.seed = read_checkpoint_meta(fs::path(o.checkpoint) / "model.ckpt").seed;
  const auto examples = load_split(o.corpus, o.split);

  DecodeMode mode = DecodeMode::Beam;
  std::vector<Prediction> injected;
  if (o.mode == "beam") {
    mode = DecodeMode::Beam;
  } else if (o.mode == "gold-transcript") {
    mode = DecodeMode::GoldTranscript;
  } else if (o.mode.rfind("inject:", 0) == 0) {
    mode = DecodeMode::Injected;
    const fs::path src = o.mode.substr(7);
    require_exists(src);
    injected = read_predictions(src);
  } else {
    throw ConfigError("unknown decode mode '" + o.mode +
                      "' (expected beam, gold-transcript or inject:<path>)");
  }
  const fs::path out = o.out.empty() ? default_out("decode") : fs::path(o.out);
  fs::create_directories(out);
  const auto preds = decode_corpus(*system, examples, mode, o.workers, injected);
  write_predictions(out / "predictions.jsonl", preds);
  m.outputs = {"predictions.jsonl"};
  m.write(out);
  std::cerr << "decoded " << preds.size() << " utterances to " << (out / "predictions.jsonl").string()
            << '\n';
  return kOk;
}

int cmd_evaluate(const Options& o, RunManifest& m) {
  require_exists(o.predictions);
  const auto examples = load_split(o.corpus, o.split);
  const auto report = score_predictions(examples, read_predictions(o.predictions));
  const fs::path out = o.out.empty() ? default_out("evaluate") : fs::path(o.out);
  fs::create_directories(out);
  write_text(out / "report.txt", report.to_text());
  write_text(out / "scores.txt", report.to_key_values());
  write_text(out / "f1.txt", format_fixed(report.f1(), 6) + "\n");
  write_text(out / "label_f1.txt", format_fixed(report.label_f1(), 6) + "\n");
  write_text(out / "slu_f1.txt", format_fixed(report.slu_f1(), 6) + "\n");
  write_text(out / "wer.txt", format_fixed(report.wer, 6) + "\n");
  m.outputs = {"report.txt", "scores.txt", "f1.txt", "label_f1.txt", "slu_f1.txt", "wer.txt"};
  m.write(out);
  std::cout << report.to_text();
  return kOk;
}

int cmd_analyze(const Options& o, RunManifest& m) {
  require_exists(o.predictions);
  const auto examples = load_split(o.corpus, o.split);
  const auto preds = read_predictions(o.predictions);
  const fs::path out = o.out.empty() ? default_out("analyze") : fs::path(o.out);
  fs::create_directories(out);
  const auto table = quadrants_for(examples, preds).to_table();
  write_text(out / "quadrants.txt", table);
  std::string corr;
  try {
    const auto c = correlation_for(examples, preds);
    corr = "n = " + std::to_string(c.n) + "\nr = " + format_fixed(c.r, 4) +
           "\np = " + format_fixed(c.p_value, 4) + "\n";
  } catch (const UndefinedCorrelationError& e) {
    corr = "r = undefined\nreason = " + std::string(e.what()) + "\n";
  }
  write_text(out / "correlation.txt", corr);
  m.outputs = {"quadrants.txt", "correlation.txt"};
  m.write(out);
  std::cout << table << corr;
  return kOk;
}

int run(std::vector<std::string> args);

int cmd_rerun(const Options& o) {
  require_exists(o.manifest);
  std::ifstream in(o.manifest);
  std::vector<std::string> argv;
  try {
    argv = nlohmann::json::parse(in).at("argv").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(o.manifest + ": " + e.what());
  }
  if (argv.empty() || argv.front() == "rerun") throw DataError(o.manifest + ": nothing to rerun");
  return run(argv);
}

int run(std::vector<std::string> args) {
  CLI::App app{"Compositional spoken sequence labeling toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", COMPSLU_VERSION);
  Options o;

  const auto add_config = [&](CLI::App* c) {
    c->add_option("--config", o.config_path, "Key-value config file");
    c->add_option("--set", o.overrides, "Override, key=value (repeatable)");
  };
  const auto add_out = [&](CLI::App* c) {
    c->add_option("--out", o.out, "Output directory (default $COMPSLU_OUTPUT_ROOT/<command>)");
  };
  const auto add_split = [&](CLI::App* c) {
    c->add_option("--corpus", o.corpus, "Corpus directory")->required();
    c->add_option("--split", o.split, "Split name")->capture_default_str();
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  add_config(gen);
  add_out(gen);

  auto* train = app.add_subcommand("train", "Train a system");
  add_config(train);
  add_out(train);
  train->add_option("--system", o.system, "compositional | compositional-direct | direct | cascaded");
  train->add_option("--corpus", o.corpus, "Corpus directory")->required();
  train->add_option("--log-every", o.log_every, "Progress interval in steps (0: quiet)")
      ->capture_default_str();

  auto* decode = app.add_subcommand("decode", "Decode a corpus split");
  decode->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  add_split(decode);
  add_out(decode);
  decode->add_option("--mode", o.mode, "beam | gold-transcript | inject:<predictions.jsonl>")
      ->capture_default_str();
  decode->add_option("--workers", o.workers, "Worker threads")->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "Score a prediction dump");
  evaluate->add_option("--predictions", o.predictions, "Prediction dump")->required();
  add_split(evaluate);
  add_out(evaluate);

  auto* analyze = app.add_subcommand("analyze", "Error quadrants and confidence correlation");
  analyze->add_option("--predictions", o.predictions, "Prediction dump")->required();
  add_split(analyze);
  add_out(analyze);

  auto* rerun = app.add_subcommand("rerun", "Repeat the command recorded in a manifest");
  rerun->add_option("manifest", o.manifest, "manifest.json")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {  // --help, --version
    return app.exit(e);
  }

  RunManifest m;
  m.argv = args;
  m.config_path = o.config_path;
  m.command = app.get_subcommands().front()->get_name();
  if (*gen) return cmd_gen_data(o, m);
  if (*train) return cmd_train(o, m);
  if (*decode) return cmd_decode(o, m);
  if (*evaluate) return cmd_evaluate(o, m);
  if (*analyze) return cmd_analyze(o, m);
  return cmd_rerun(o);
}

int fail(ExitCode code, const std::string& kind, const std::string& message) {
  nlohmann::json j{{"error", kind}, {"exit", static_cast<int>(code)}, {"message", message}};
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, "usage", e.what());
  } catch (const MissingFileError& e) {
    return fail(kMissingFile, "missing_file", e.what());
  } catch (const ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const DataError& e) {
    return fail(kData, "data", e.what());
  } catch (const Error& e) {
    return fail(kInvalidInput, "invalid_input", e.what());
  } catch (const std::exception& e) {
    return fail(kInternal, "internal", e.what());
  }
}
