// Copyright 2026 The hkd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hkd/cli.hpp"

#include <cstdio>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "hkd/datagen.hpp"
#include "hkd/errors.hpp"
#include "hkd/evaluation.hpp"
#include "hkd/io.hpp"
#include "hkd/training.hpp"

namespace hkd {

namespace fs = std::filesystem;

namespace {

nlohmann::json file_record(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing artifact " + path.string());
  return {{"path", path.string()}, {"hash", hash_file(path)}};
}

nlohmann::json parse_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing file " + path.string());
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
  }
}

}  // namespace

void ManifestEntry::add_input(const std::string& name, const fs::path& path) { inputs[name] = file_record(path); }

void ManifestEntry::add_artifact(const std::string& name, const fs::path& path) {
  artifacts[name] = file_record(path);
}

void update_manifest(const fs::path& manifest, const std::string& experiment, const ManifestEntry& entry) {
  nlohmann::json doc = nlohmann::json::object();
  if (fs::exists(manifest)) {
    try {
      doc = nlohmann::json::parse(read_text_file(manifest));
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError(fmt::format("manifest {} is corrupt: {}", manifest.string(), e.what()));
    }
  }
  doc["experiment"] = experiment;
  doc["commands"][entry.command] = {{"config", entry.config},
                                    {"config_hash", entry.config_hash},
                                    {"inputs", entry.inputs},
                                    {"artifacts", entry.artifacts}};
  write_file_atomic(manifest, doc.dump(2) + "\n");
}

namespace {

// Flags shared by the two training commands. Empty optionals mean "not given
// on the command line"; they override the config file only when set.
struct TrainFlags {
  std::string corpus;
  std::string out;
  std::string config;
  std::string loss;
  std::string teacher;
  std::string teacher_temp;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> warmup;
  std::optional<std::size_t> max_tokens;
  std::optional<double> ls_epsilon;
  std::optional<double> soft_kd_alpha;
  std::optional<double> soft_kd_tau;
  std::optional<double> dropout;
  std::string tokenization = "whitespace";
  std::string manifest;
  std::string name = "experiment";
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--corpus", f.corpus, "Corpus directory")->required();
  cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_option("--config", f.config, "TrainConfig JSON file; flags win over it");
  cmd->add_option("--teacher-temp", f.teacher_temp, "Teacher temperature: a value or 'fit'");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--lr", f.lr, "Peak learning rate");
  cmd->add_option("--warmup", f.warmup, "Warmup steps");
  cmd->add_option("--max-tokens", f.max_tokens, "Token budget per batch");
  cmd->add_option("--ls-epsilon", f.ls_epsilon);
  cmd->add_option("--dropout", f.dropout);
  cmd->add_option("--tokenization", f.tokenization)->check(CLI::IsMember({"whitespace", "char"}));
  cmd->add_option("--manifest", f.manifest, "Manifest path (default: <out>/manifest.json)");
  cmd->add_option("--name", f.name, "Experiment name recorded in the manifest");
}

std::optional<double> parse_temperature(const std::string& text) {
  if (text == "fit") return std::nullopt;
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !(value > 0.0) || !std::isfinite(value)) {
    throw ValidationError(fmt::format("--teacher-temp must be a positive number or 'fit', got '{}'", text));
  }
  return value;
}

TrainConfig assemble_config(const TrainFlags& f) {
  TrainConfig c;
  if (!f.config.empty()) from_json(parse_json_file(f.config), c);
  if (!f.loss.empty()) c.loss_mode = parse_loss_mode(f.loss);
  if (!f.teacher.empty()) c.teacher_checkpoint = f.teacher;
  if (!f.teacher_temp.empty()) c.teacher_temperature = parse_temperature(f.teacher_temp);
  if (f.seed) c.seed = *f.seed;
  if (f.epochs) c.epochs = *f.epochs;
  if (f.lr) c.optimizer.lr = *f.lr;
  if (f.warmup) c.optimizer.warmup_steps = *f.warmup;
  if (f.max_tokens) c.max_tokens = *f.max_tokens;
  if (f.ls_epsilon) c.ls_epsilon = *f.ls_epsilon;
  if (f.soft_kd_alpha) c.soft_kd_alpha = *f.soft_kd_alpha;
  if (f.soft_kd_tau) c.soft_kd_tau = *f.soft_kd_tau;
  if (f.dropout) c.model.dropout = *f.dropout;
  c.validate();
  return c;
}

fs::path manifest_path(const std::string& flag, const fs::path& out) {
  return flag.empty() ? out / "manifest.json" : fs::path(flag);
}

std::string config_hash(const nlohmann::json& config) { return hex64(fnv1a64(config.dump())); }

void write_run_logs(const fs::path& out, const RunLog& log, ManifestEntry& entry) {
  write_file_atomic(out / "steps.csv", log.steps_csv());
  write_file_atomic(out / "epochs.json", log.epochs_json().dump(2) + "\n");
  entry.add_artifact("steps", out / "steps.csv");
  entry.add_artifact("epochs", out / "epochs.json");
  if (is_hkd(log.mode)) {
    write_file_atomic(out / "gate_trace.csv", log.gate_trace_csv());
    entry.add_artifact("gate_trace", out / "gate_trace.csv");
  }
}

void add_corpus_inputs(const fs::path& dir, ManifestEntry& entry) {
  for (const auto& f : corpus_files(dir)) entry.add_input("corpus/" + f.filename().string(), f);
}

nlohmann::json base_metadata(const TrainConfig& c, const ParallelCorpus& corpus, const RunLog& log,
                             const std::string& role) {
  return {{"role", role},
          {"loss_mode", to_string(c.loss_mode)},
          {"seed", c.seed},
          {"max_tokens", c.max_tokens},
          {"best_epoch", log.best_epoch},
          {"vocab_fingerprint", hex64(corpus.vocab.fingerprint())}};
}

void check_vocab(const Checkpoint& ckpt, const ParallelCorpus& corpus, const std::string& path) {
  if (ckpt.params.config().vocab_size != corpus.vocab.size()) {
    throw IncompatibilityError(fmt::format("{} has vocab size {} but the corpus has {}", path,
                                           ckpt.params.config().vocab_size, corpus.vocab.size()));
  }
  if (ckpt.metadata.contains("vocab_fingerprint") &&
      ckpt.metadata.at("vocab_fingerprint").get<std::string>() != hex64(corpus.vocab.fingerprint())) {
    throw IncompatibilityError(fmt::format("{} was trained on a different vocabulary", path));
  }
}

// ---------------------------------------------------------------------------

struct GenFlags {
  std::string out;
  std::size_t pairs = 5000;
  double ambiguity = 0.7;
  std::size_t source_vocab = 50;
  std::size_t target_vocab = 50;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  std::size_t alternatives = 3;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> grammar_seed;
  std::string grammar;
  std::string source_text;
  std::string target_text;
  std::string tokenization = "whitespace";
  std::size_t max_vocab = 0;
  std::string manifest;
  std::string name = "experiment";
};

void cmd_gen_corpus(const GenFlags& f) {
  const fs::path out(f.out);
  ManifestEntry entry;
  entry.command = "gen-corpus";
  ParallelCorpus corpus;
  if (!f.source_text.empty() || !f.target_text.empty()) {
    if (f.source_text.empty() || f.target_text.empty()) {
      throw ValidationError("--source-text and --target-text go together");
    }
    const Tokenization mode = parse_tokenization(f.tokenization);
    IngestResult in = ingest_parallel_text(f.source_text, f.target_text, mode, f.max_vocab);
    if (in.pairs.size() < 10) throw ValidationError("need at least 10 sentence pairs to split");
    const std::size_t n_train = in.pairs.size() * 8 / 10, n_valid = in.pairs.size() / 10;
    for (std::size_t i = 0; i < in.pairs.size(); ++i) {
      auto& split = i < n_train ? corpus.train : (i < n_train + n_valid ? corpus.valid : corpus.test);
      split.push_back(std::move(in.pairs[i]));
    }
    corpus.vocab = std::move(in.vocab);
    entry.config = {{"source_text", f.source_text},
                    {"target_text", f.target_text},
                    {"tokenization", f.tokenization},
                    {"max_vocab", f.max_vocab}};
    entry.add_input("source_text", f.source_text);
    entry.add_input("target_text", f.target_text);
  } else {
    if (!(f.ambiguity > 0.0 && f.ambiguity <= 1.0)) {
      throw ValidationError(fmt::format("--ambiguity must lie in (0, 1], got {}", f.ambiguity));
    }
    if (f.pairs < 10) throw ValidationError("--pairs must be at least 10");
    ToyGrammar g;
    if (!f.grammar.empty()) {
      try {
        g = parse_json_file(f.grammar).get<ToyGrammar>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("bad grammar {}: {}", f.grammar, e.what()));
      }
      g.validate();
      entry.add_input("grammar", f.grammar);
    } else {
      g = ToyGrammar::build(f.source_vocab, f.target_vocab, f.ambiguity, f.min_len, f.max_len,
                            f.grammar_seed.value_or(f.seed), f.alternatives);
    }
    corpus = generate_corpus(g, f.pairs, f.seed);
    write_file_atomic(out / "grammar.json", nlohmann::json(g).dump(1) + "\n");
    entry.config = {{"pairs", f.pairs}, {"seed", f.seed}, {"grammar", nlohmann::json(g)}};
  }
  write_corpus(out, corpus);
  entry.config_hash = config_hash(entry.config);
  for (const auto& p : corpus_files(out)) entry.add_artifact(p.filename().string(), p);
  if (fs::exists(out / "grammar.json") && f.source_text.empty()) entry.add_artifact("grammar.json", out / "grammar.json");
  update_manifest(manifest_path(f.manifest, out), f.name, entry);
  std::printf("wrote %zu/%zu/%zu pairs, vocab %zu, to %s\n", corpus.train.size(), corpus.valid.size(),
              corpus.test.size(), corpus.vocab.size(), out.string().c_str());
}

void cmd_train_teacher(const TrainFlags& f) {
  TrainConfig c = assemble_config(f);
  if (c.loss_mode != LossMode::kCe && c.loss_mode != LossMode::kLsUniform) {
    throw ValidationError("train-teacher supports --loss ce or ls_uniform");
  }
  const fs::path out(f.out);
  const ParallelCorpus corpus = load_corpus(f.corpus, parse_tokenization(f.tokenization));
  const TeacherBuild built = build_teacher(c, corpus);

  nlohmann::json meta = base_metadata(c, corpus, built.log, "teacher");
  meta["temperature"] = built.handle.temperature;
  if (built.fit) meta["temperature_fit"] = {{"grid", built.fit->grid}, {"nll", built.fit->nll}};
  save_checkpoint(out / "teacher.ckpt", built.handle.params, meta);

  ManifestEntry entry;
  entry.command = "train-teacher";
  entry.config = c;
  entry.config_hash = config_hash(entry.config);
  add_corpus_inputs(f.corpus, entry);
  write_file_atomic(out / "config.json", entry.config.dump(2) + "\n");
  entry.add_artifact("config", out / "config.json");
  entry.add_artifact("checkpoint", out / "teacher.ckpt");
  write_run_logs(out, built.log, entry);
  update_manifest(manifest_path(f.manifest, out), f.name, entry);
  std::printf("teacher: best epoch %zu, temperature %s\n", built.log.best_epoch,
              format_real(built.handle.temperature).c_str());
}

void cmd_train_student(const TrainFlags& f) {
  // Usage checks come before any file is read.
  if (f.loss.empty() && f.config.empty()) throw ValidationError("--loss is required");
  TrainConfig c = assemble_config(f);
  if (needs_teacher(c.loss_mode)) {
    if (c.teacher_checkpoint.empty()) {
      throw ValidationError(fmt::format("--loss {} needs --teacher", to_string(c.loss_mode)));
    }
  } else if (!f.teacher_temp.empty() || !f.teacher.empty()) {
    std::fprintf(stderr, "warning: --loss %s ignores --teacher and --teacher-temp\n",
                 to_string(c.loss_mode).c_str());
  }
  const fs::path out(f.out);
  const ParallelCorpus corpus = load_corpus(f.corpus, parse_tokenization(f.tokenization));

  ManifestEntry entry;
  entry.command = "train-student";
  add_corpus_inputs(f.corpus, entry);

  std::optional<TeacherHandle> teacher;
  std::optional<TemperatureFit> fit;
  if (needs_teacher(c.loss_mode)) {
    Checkpoint t = load_checkpoint(c.teacher_checkpoint);
    check_vocab(t, corpus, c.teacher_checkpoint);
    entry.add_input("teacher", c.teacher_checkpoint);
    const double tau = resolve_temperature(t.params, corpus, c.teacher_temperature, c, &fit);
    teacher = TeacherHandle{std::move(t.params), tau};
  }
  const TrainResult result = train(c, corpus, teacher ? &*teacher : nullptr);

  nlohmann::json meta = base_metadata(c, corpus, result.log, "student");
  if (teacher) meta["teacher_temperature"] = teacher->temperature;
  if (fit) meta["temperature_fit"] = {{"grid", fit->grid}, {"nll", fit->nll}};
  save_checkpoint(out / "student.ckpt", result.best, meta);

  entry.config = c;
  entry.config_hash = config_hash(entry.config);
  write_file_atomic(out / "config.json", entry.config.dump(2) + "\n");
  entry.add_artifact("config", out / "config.json");
  entry.add_artifact("checkpoint", out / "student.ckpt");
  write_run_logs(out, result.log, entry);
  update_manifest(manifest_path(f.manifest, out), f.name, entry);
  std::printf("student (%s): best epoch %zu%s\n", to_string(c.loss_mode).c_str(), result.log.best_epoch,
              teacher ? fmt::format(", teacher temperature {}", format_real(teacher->temperature)).c_str() : "");
}

struct EvalFlags {
  std::string checkpoint;
  std::string corpus;
  std::string out;
  std::string run_dir;
  std::size_t bins = kDefaultNumBins;
  std::vector<double> grid = kDefaultTemperatureGrid;
  std::string tokenization = "whitespace";
  std::string manifest;
  std::string name = "experiment";
};

void add_eval_flags(CLI::App* cmd, EvalFlags& f) {
  cmd->add_option("--checkpoint", f.checkpoint)->required();
  cmd->add_option("--corpus", f.corpus)->required();
  cmd->add_option("--out", f.out)->required();
  cmd->add_option("--bins", f.bins)->check(CLI::PositiveNumber);
  cmd->add_option("--tokenization", f.tokenization)->check(CLI::IsMember({"whitespace", "char"}));
  cmd->add_option("--manifest", f.manifest);
  cmd->add_option("--name", f.name);
}

void cmd_calibrate(const EvalFlags& f) {
  const fs::path out(f.out);
  const ParallelCorpus corpus = load_corpus(f.corpus, parse_tokenization(f.tokenization));
  const Checkpoint ckpt = load_checkpoint(f.checkpoint);
  check_vocab(ckpt, corpus, f.checkpoint);
  std::size_t max_tokens = 512;
  if (ckpt.metadata.contains("max_tokens")) max_tokens = ckpt.metadata.at("max_tokens").get<std::size_t>();
  const auto valid = make_batches(corpus.valid, max_tokens, 0);
  const TemperatureFit fit = fit_temperature(ckpt.params, valid, f.grid);

  const auto before = bin_predictions(collect_next_token_records(ckpt.params, 1.0, valid), f.bins);
  const auto after = bin_predictions(collect_next_token_records(ckpt.params, fit.temperature, valid), f.bins);
  nlohmann::json summary = {{"temperature", fit.temperature},
                            {"grid", fit.grid},
                            {"nll", fit.nll},
                            {"at_unit_temperature", calibration_summary(before, 1.0)},
                            {"at_fitted_temperature", calibration_summary(after, fit.temperature)}};
  write_file_atomic(out / "calibration.json", summary.dump(2) + "\n");
  write_file_atomic(out / "reliability_fitted.csv", reliability_csv(after));
  write_file_atomic(out / "histogram_fitted.csv", histogram_csv(after));

  ManifestEntry entry;
  entry.command = "calibrate";
  entry.config = {{"grid", f.grid}, {"bins", f.bins}};
  entry.config_hash = config_hash(entry.config);
  entry.add_input("checkpoint", f.checkpoint);
  add_corpus_inputs(f.corpus, entry);
  entry.add_artifact("calibration", out / "calibration.json");
  entry.add_artifact("reliability_fitted", out / "reliability_fitted.csv");
  entry.add_artifact("histogram_fitted", out / "histogram_fitted.csv");
  update_manifest(manifest_path(f.manifest, out), f.name, entry);
  std::printf("fitted temperature %s\n", format_real(fit.temperature).c_str());
}

MetricsReport run_evaluation(const EvalFlags& f, ManifestEntry& entry) {
  const fs::path out(f.out);
  const ParallelCorpus corpus = load_corpus(f.corpus, parse_tokenization(f.tokenization));
  if (!fs::exists(f.checkpoint)) throw IoError("missing checkpoint " + f.checkpoint);
  const MetricsReport r = evaluate_checkpoint(f.checkpoint, corpus, f.bins, out, parse_tokenization(f.tokenization));
  entry.config = {{"bins", f.bins}, {"tokenization", f.tokenization}};
  entry.config_hash = config_hash(entry.config);
  entry.add_input("checkpoint", f.checkpoint);
  add_corpus_inputs(f.corpus, entry);
  for (const char* name : {"metrics.json", "reliability.csv", "histogram.csv", "records.csv", "hypotheses.txt",
                           "references.txt"}) {
    entry.add_artifact(name, out / name);
  }
  return r;
}

void cmd_evaluate(const EvalFlags& f) {
  ManifestEntry entry;
  entry.command = "evaluate";
  const MetricsReport r = run_evaluation(f, entry);
  update_manifest(manifest_path(f.manifest, f.out), f.name, entry);
  std::printf("bleu %s wer %s ece %s mce %s\n", format_real(r.bleu).c_str(), format_real(r.wer).c_str(),
              format_real(r.ece).c_str(), format_real(r.mce).c_str());
}

void cmd_report(const EvalFlags& f) {
  // An explicit run directory must hold the logs; otherwise they are picked up
  // from the checkpoint's directory when present.
  fs::path run_dir = f.run_dir.empty() ? fs::path(f.checkpoint).parent_path() : fs::path(f.run_dir);
  const bool have_logs = fs::exists(run_dir / "steps.csv") && fs::exists(run_dir / "epochs.json");
  if (!f.run_dir.empty() && !have_logs) {
    throw IoError(fmt::format("run directory {} has no steps.csv/epochs.json", run_dir.string()));
  }
  ManifestEntry entry;
  entry.command = "report";
  const MetricsReport r = run_evaluation(f, entry);
  const fs::path out(f.out);
  if (have_logs) {
    const RunLog log =
        RunLog::from_files(read_text_file(run_dir / "steps.csv"), parse_json_file(run_dir / "epochs.json"));
    write_file_atomic(out / "alpha_trajectory.csv", log.gate_trace_csv());
    write_file_atomic(out / "epochs.json", log.epochs_json().dump(2) + "\n");
    entry.add_input("steps", run_dir / "steps.csv");
    entry.add_artifact("alpha_trajectory.csv", out / "alpha_trajectory.csv");
    entry.add_artifact("epochs.json", out / "epochs.json");
  }
  update_manifest(manifest_path(f.manifest, out), f.name, entry);
  std::printf("bleu %s wer %s ece %s mce %s\n", format_real(r.bleu).c_str(), format_real(r.wer).c_str(),
              format_real(r.ece).c_str(), format_real(r.mce).c_str());
}

int exit_code(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::kUsage:
      return kExitUsage;
    case ErrorCategory::kNumeric:
      return kExitNumeric;
    case ErrorCategory::kIo:
      return kExitIo;
  }
  return kExitUsage;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Calibration-gated knowledge distillation on a desk-scale seq2seq model"};
  app.require_subcommand(1);

  GenFlags gen;
  auto* g = app.add_subcommand("gen-corpus", "Generate the toy parallel corpus or ingest text files");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--pairs", gen.pairs);
  g->add_option("--ambiguity", gen.ambiguity, "Top-target probability p_amb in (0, 1]");
  g->add_option("--source-vocab", gen.source_vocab);
  g->add_option("--target-vocab", gen.target_vocab);
  g->add_option("--min-len", gen.min_len);
  g->add_option("--max-len", gen.max_len);
  g->add_option("--alternatives", gen.alternatives, "Targets sharing the residual mass");
  g->add_option("--seed", gen.seed);
  g->add_option("--grammar-seed", gen.grammar_seed, "Mapping seed (default: --seed)");
  g->add_option("--grammar", gen.grammar, "ToyGrammar JSON file");
  g->add_option("--source-text", gen.source_text, "Source side of a line-aligned text corpus");
  g->add_option("--target-text", gen.target_text, "Target side of a line-aligned text corpus");
  g->add_option("--tokenization", gen.tokenization)->check(CLI::IsMember({"whitespace", "char"}));
  g->add_option("--max-vocab", gen.max_vocab, "Vocabulary cap for ingested text (0 = none)");
  g->add_option("--manifest", gen.manifest);
  g->add_option("--name", gen.name);

  TrainFlags teacher;
  teacher.loss = "ls_uniform";
  auto* t = app.add_subcommand("train-teacher", "Train and calibrate a self-teacher");
  add_train_flags(t, teacher);
  t->add_option("--loss", teacher.loss)->check(CLI::IsMember({"ce", "ls_uniform"}));

  TrainFlags student;
  auto* s = app.add_subcommand("train-student", "Train a student under a chosen loss");
  add_train_flags(s, student);
  s->add_option("--loss", student.loss)
      ->check(CLI::IsMember({"ce", "ls_uniform", "ls_unigram", "soft_kd", "hkd_token", "hkd_sentence"}));
  s->add_option("--teacher", student.teacher, "Teacher checkpoint");
  s->add_option("--soft-kd-alpha", student.soft_kd_alpha);
  s->add_option("--soft-kd-tau", student.soft_kd_tau);

  EvalFlags cal;
  auto* c = app.add_subcommand("calibrate", "Fit a temperature on validation data");
  add_eval_flags(c, cal);
  c->add_option("--grid", cal.grid, "Temperature grid");

  EvalFlags eval;
  auto* e = app.add_subcommand("evaluate", "Decode the test split and score calibration");
  add_eval_flags(e, eval);

  EvalFlags rep;
  auto* r = app.add_subcommand("report", "Metrics plus reliability, histogram and alpha-trajectory files");
  add_eval_flags(r, rep);
  r->add_option("--run-dir", rep.run_dir, "Directory with steps.csv and epochs.json");

  std::vector<const char*> argv;
  argv.push_back("hkd");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g->parsed()) cmd_gen_corpus(gen);
    if (t->parsed()) cmd_train_teacher(teacher);
    if (s->parsed()) cmd_train_student(student);
    if (c->parsed()) cmd_calibrate(cal);
    if (e->parsed()) cmd_evaluate(eval);
    if (r->parsed()) cmd_report(rep);
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return exit_code(err);
  } catch (const fs::filesystem_error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitIo;
  } catch (const nlohmann::json::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace hkd
