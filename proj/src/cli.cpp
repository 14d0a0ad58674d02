// Copyright 2026 the ptlab authors
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

#include "ptlab/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ptlab/common.hpp"
#include "ptlab/corpus.hpp"
#include "ptlab/encoder.hpp"
#include "ptlab/evaluation.hpp"
#include "ptlab/manifest.hpp"
#include "ptlab/pretrain_data.hpp"
#include "ptlab/tokenizer.hpp"
#include "ptlab/training.hpp"

namespace fs = std::filesystem;

namespace ptlab::cli {

namespace {

// PTLAB_OUT_ROOT, when set, prefixes relative output paths.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("PTLAB_OUT_ROOT");
  if (root != nullptr && root[0] != '\0' && !fs::path(path).is_absolute()) {
    return (fs::path(root) / path).string();
  }
  return path;
}

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// One manifest sibling per artifact, all recording the same resolved run.
void write_manifests(const std::vector<std::string>& outputs,
                     const std::string& command, const cfg::KeyValues& resolved,
                     const std::vector<std::string>& inputs) {
  for (const auto& path : outputs) {
    cfg::write_manifest(path, command, resolved, inputs, {path});
  }
}

std::vector<std::string> list_input_files(const std::string& dir) {
  if (!fs::exists(dir)) throw IoError("input directory not found: " + dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) paths.push_back(entry.path().string());
  }
  if (paths.empty()) throw IoError("no input files in " + dir);
  return paths;
}

// ---------------------------------------------------------------------------
// corpus ingest
// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string in_dir, out_file;
  bool strip_diacritics = false;
  bool lowercase = false;
};

int cmd_corpus_ingest(const IngestArgs& args) {
  corpus::NormalizationPolicy policy;
  policy.keep_diacritics = !args.strip_diacritics;
  policy.keep_casing = !args.lowercase;
  const auto paths = list_input_files(args.in_dir);
  const corpus::IngestResult result = corpus::ingest(paths, policy);
  const std::string out = resolve_out(args.out_file);
  ensure_parent_dir(out);
  corpus::write_corpus_file(out, result.documents);
  cfg::KeyValues resolved{
      {"in", args.in_dir},
      {"out", out},
      {"strip_diacritics", args.strip_diacritics ? "true" : "false"},
      {"lowercase", args.lowercase ? "true" : "false"},
  };
  cfg::write_manifest(out, "corpus ingest", resolved, paths, {out});
  std::cout << "ingested " << result.documents.size() << " documents";
  if (result.skipped_blocks > 0) {
    std::cout << " (" << result.skipped_blocks
              << " blocks skipped: empty after cleaning)";
  }
  std::cout << " -> " << out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// vocab train
// ---------------------------------------------------------------------------

struct VocabArgs {
  std::string algo = "wordpiece";
  std::size_t size = 30000;
  std::string corpus_file, out_file;
  std::uint64_t seed = 0;
};

int cmd_vocab_train(const VocabArgs& args) {
  const auto docs = corpus::read_corpus_file(args.corpus_file);
  tok::TokenizerModel model;
  if (args.algo == "wordpiece") {
    model = tok::train_wordpiece(docs, args.size);
  } else if (args.algo == "unigram") {
    model = tok::train_unigram(docs, args.size);
  } else {
    throw ConfigError("unknown algorithm: " + args.algo);
  }
  const std::string out = resolve_out(args.out_file);
  ensure_parent_dir(out);
  tok::write_vocab_file(out, model);
  cfg::KeyValues resolved{
      {"algo", args.algo},
      {"size", std::to_string(args.size)},
      {"corpus", args.corpus_file},
      {"out", out},
      {"seed", std::to_string(args.seed)},
  };
  cfg::write_manifest(out, "vocab train", resolved, {args.corpus_file}, {out});
  std::cout << "trained " << args.algo << " vocabulary: "
            << model.vocab_size() << " tokens";
  if (!model.reached_target) std::cout << " (corpus too small for target)";
  std::cout << " -> " << out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// pretrain-data build
// ---------------------------------------------------------------------------

struct PretrainDataArgs {
  std::string corpus_file, vocab_file, out_file;
  std::string objective = "nsp";
  std::size_t max_len = 128;
  std::string mask_policy = "literal";
  std::uint64_t seed = 0;
};

int cmd_pretrain_data(const PretrainDataArgs& args) {
  const auto docs = corpus::read_corpus_file(args.corpus_file);
  const auto tokenizer = tok::read_vocab_file(args.vocab_file);
  data::BuildOptions options;
  options.max_len = args.max_len;
  options.seed = args.seed;
  if (args.objective == "nsp") {
    options.objective = data::Objective::kNsp;
  } else if (args.objective == "so") {
    options.objective = data::Objective::kSo;
  } else {
    throw ConfigError("unknown objective: " + args.objective);
  }
  if (args.mask_policy == "literal") {
    options.mask_policy = data::MaskPolicy::kLiteralMask;
  } else if (args.mask_policy == "80-10-10") {
    options.mask_policy = data::MaskPolicy::kBert801010;
  } else {
    throw ConfigError("unknown mask policy: " + args.mask_policy);
  }
  if (args.max_len != 128 && args.max_len != 512) {
    throw ConfigError("max-len must be 128 or 512");
  }
  const data::BuildResult result =
      data::build_instances(docs, tokenizer, options);
  const std::string out = resolve_out(args.out_file);
  ensure_parent_dir(out);
  data::write_instances_jsonl(out, result.instances);
  cfg::KeyValues resolved{
      {"corpus", args.corpus_file}, {"vocab", args.vocab_file},
      {"out", out},                 {"objective", args.objective},
      {"max_len", std::to_string(args.max_len)},
      {"mask_policy", args.mask_policy},
      {"seed", std::to_string(args.seed)},
  };
  cfg::write_manifest(out, "pretrain-data build", resolved,
                      {args.corpus_file, args.vocab_file}, {out});
  std::cout << "built " << result.instances.size() << " instances";
  if (result.skipped_pairs > 0) {
    std::cout << " (" << result.skipped_pairs << " pairs skipped)";
  }
  std::cout << " -> " << out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

nn::ModelConfig model_config_from(const cfg::KeyValues& c,
                                  std::size_t vocab_size) {
  nn::ModelConfig config;
  config.num_layers = cfg::get_u64(c, "num_layers", 2);
  config.hidden = cfg::get_u64(c, "hidden", 64);
  config.heads = cfg::get_u64(c, "heads", 2);
  config.ffn_inner = cfg::get_u64(c, "ffn_inner", 0);
  config.max_positions = cfg::get_u64(c, "max_positions", 512);
  config.embed_dim = cfg::get_u64(c, "embed_dim", 0);
  config.share_layers = cfg::get_string(c, "share_layers", "false") == "true";
  config.vocab_size = vocab_size;
  return config;
}

train::TrainHyper hyper_from(const cfg::KeyValues& c) {
  train::TrainHyper hyper;
  hyper.learning_rate = cfg::get_double(c, "learning_rate", 1e-3);
  hyper.total_steps = cfg::get_u64(c, "total_steps", 500);
  // Default warmup adapts to short runs unless set explicitly.
  hyper.warmup_steps = cfg::get_u64(
      c, "warmup_steps",
      std::min<std::uint64_t>(50, hyper.total_steps / 4));
  hyper.batch_size = cfg::get_u64(c, "batch_size", 8);
  hyper.seed = cfg::get_u64(c, "seed", 0);
  hyper.weight_decay = cfg::get_double(c, "weight_decay", 0.01);
  hyper.clip_norm = cfg::get_double(c, "clip_norm", 1.0);
  hyper.dropout = cfg::get_double(c, "dropout", 0.1);
  hyper.stop_after_step = cfg::get_u64(c, "stop_after_step", 0);
  return hyper;
}

struct PretrainArgs {
  std::string config_file;
  std::vector<std::string> overrides;
};

int cmd_pretrain(const PretrainArgs& args) {
  cfg::KeyValues c = args.config_file.empty()
                         ? cfg::KeyValues{}
                         : cfg::read_config_file(args.config_file);
  cfg::apply_overrides(c, args.overrides);
  const std::string data_path = cfg::get_string(c, "data", "");
  const std::string vocab_path = cfg::get_string(c, "vocab", "");
  const std::string out_dir = resolve_out(cfg::get_string(c, "out_dir", "pretrain_out"));
  if (data_path.empty() || vocab_path.empty()) {
    throw ConfigError("pretrain config needs data= and vocab= paths");
  }
  const auto tokenizer = tok::read_vocab_file(vocab_path);
  const auto instances = data::read_instances_jsonl(data_path);
  const nn::ModelConfig config = model_config_from(c, tokenizer.vocab_size());
  const train::TrainHyper hyper = hyper_from(c);
  const bool tie = cfg::get_string(c, "tie_mlm_head", "true") == "true";

  train::TrainState* resume_ptr = nullptr;
  train::TrainState resume_state;
  const std::string resume_path = cfg::get_string(c, "resume", "");
  if (!resume_path.empty()) {
    nn::ModelConfig stored;
    resume_state = train::load_train_state(resume_path, &stored);
    resume_ptr = &resume_state;
  }

  fs::create_directories(out_dir);
  train::TrainState final_state;
  const train::PretrainResult result = train::pretrain(
      config, instances, hyper, tie, resume_ptr, &final_state);

  const std::string model_path = (fs::path(out_dir) / "model.ckpt").string();
  const std::string state_path =
      (fs::path(out_dir) / "train_state.ckpt").string();
  const std::string trace_path =
      (fs::path(out_dir) / "loss_trace.csv").string();
  nn::save_checkpoint(model_path, config, result.params);
  train::save_train_state(state_path, config, final_state);
  train::write_loss_trace_csv(trace_path, result.trace);

  // Resolved configuration is logged next to the artifacts.
  cfg::KeyValues resolved = c;
  resolved["out_dir"] = out_dir;
  write_file((fs::path(out_dir) / "resolved_config.txt").string(),
             cfg::render_config(resolved));
  write_manifests({model_path, state_path, trace_path}, "pretrain", resolved,
                  {data_path, vocab_path});
  if (!result.trace.empty()) {
    const auto& last = result.trace.back();
    std::cout << "pretrained " << hyper.total_steps << " steps; final mlm "
              << last.mlm << ", pair " << last.pair << " -> " << model_path
              << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Task data (TSV: label <TAB> text_a [<TAB> text_b])
// ---------------------------------------------------------------------------

train::TaskSpec task_spec_from(const cfg::KeyValues& c) {
  train::TaskSpec task;
  task.name = cfg::get_string(c, "task_name", "task");
  const std::string kind = cfg::get_string(c, "task_kind", "single");
  if (kind == "single") {
    task.kind = train::TaskKind::kSingleClassification;
  } else if (kind == "pair") {
    task.kind = train::TaskKind::kPairClassification;
  } else if (kind == "pair-regression") {
    task.kind = train::TaskKind::kPairRegression;
  } else {
    throw ConfigError("unknown task_kind: " + kind);
  }
  task.num_classes = cfg::get_u64(c, "num_classes", 2);
  task.max_len = cfg::get_u64(c, "max_len", 128);
  task.validate();
  return task;
}

std::vector<train::TaskExample> read_task_tsv(const std::string& path,
                                              const train::TaskSpec& task) {
  const std::string raw = read_file(path);
  std::istringstream in(raw);
  std::string line;
  std::vector<train::TaskExample> out;
  std::size_t line_no = 0;
  const bool pair = task.kind != train::TaskKind::kSingleClassification;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
      if (ch == '\t') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    fields.push_back(cur);
    const std::size_t expected = pair ? 3 : 2;
    if (fields.size() != expected) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(expected) + " tab-separated fields");
    }
    train::TaskExample ex;
    try {
      ex.label = std::stod(fields[0]);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad label");
    }
    ex.text_a = fields[1];
    if (pair) ex.text_b = fields[2];
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw DataError("no examples in " + path);
  return out;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

struct FinetuneArgs {
  std::string config_file;
  std::vector<std::string> overrides;
};

int cmd_finetune(const FinetuneArgs& args) {
  cfg::KeyValues c = args.config_file.empty()
                         ? cfg::KeyValues{}
                         : cfg::read_config_file(args.config_file);
  cfg::apply_overrides(c, args.overrides);
  const std::string data_path = cfg::get_string(c, "data", "");
  const std::string vocab_path = cfg::get_string(c, "vocab", "");
  const std::string ckpt_path = cfg::get_string(c, "checkpoint", "");
  const std::string out_dir = resolve_out(cfg::get_string(c, "out_dir", "finetune_out"));
  if (data_path.empty() || vocab_path.empty() || ckpt_path.empty()) {
    throw ConfigError("finetune config needs data=, vocab= and checkpoint=");
  }
  const auto tokenizer = tok::read_vocab_file(vocab_path);
  const train::TaskSpec task = task_spec_from(c);
  const auto examples = read_task_tsv(data_path, task);
  const nn::Checkpoint ckpt = nn::load_checkpoint(ckpt_path);
  train::TrainHyper hyper = hyper_from(c);
  hyper.total_steps = cfg::get_u64(c, "total_steps", 200);
  hyper.learning_rate = cfg::get_double(c, "learning_rate", 3e-4);
  hyper.head_only = cfg::get_string(c, "head_only", "false") == "true";

  const train::TaskModel model = train::finetune(
      ckpt.config, ckpt.params, tokenizer, task, examples, hyper);

  fs::create_directories(out_dir);
  const std::string model_path =
      (fs::path(out_dir) / "task_model.ckpt").string();
  std::map<std::string, std::string> extra{
      {"task_name", task.name},
      {"task_kind", cfg::get_string(c, "task_kind", "single")},
      {"num_classes", std::to_string(task.num_classes)},
      {"task_max_len", std::to_string(task.max_len)},
  };
  nn::save_checkpoint(model_path, model.config, model.params, extra);
  cfg::KeyValues resolved = c;
  resolved["out_dir"] = out_dir;
  write_file((fs::path(out_dir) / "resolved_config.txt").string(),
             cfg::render_config(resolved));
  cfg::write_manifest(model_path, "finetune", resolved,
                      {data_path, vocab_path, ckpt_path}, {model_path});
  std::cout << "fine-tuned task model -> " << model_path << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval (k-fold cross-validated fine-tuning per the task protocol)
// ---------------------------------------------------------------------------

eval::MetricReport run_cv_eval(const nn::ModelConfig& config,
                               const nn::ParamStore<float>& pretrained,
                               const tok::TokenizerModel& tokenizer,
                               const train::TaskSpec& task,
                               const std::vector<train::TaskExample>& examples,
                               std::size_t folds,
                               const train::TrainHyper& hyper) {
  if (task.kind == train::TaskKind::kPairRegression) {
    std::vector<double> labels;
    for (const auto& ex : examples) labels.push_back(ex.label);
    eval::RegressorFactory factory =
        [&](const std::vector<std::size_t>& train_idx) {
          std::vector<train::TaskExample> train_set;
          for (std::size_t i : train_idx) train_set.push_back(examples[i]);
          auto model = std::make_shared<train::TaskModel>(train::finetune(
              config, pretrained, tokenizer, task, train_set, hyper));
          return [&, model](std::size_t idx) {
            return train::predict(*model, tokenizer, {examples[idx]})[0].value;
          };
        };
    eval::MetricReport report =
        eval::cross_validate_regression(labels, folds, hyper.seed, factory);
    report.task = task.name;
    return report;
  }
  std::vector<int> labels;
  for (const auto& ex : examples) {
    labels.push_back(static_cast<int>(ex.label));
  }
  eval::ClassifierFactory factory =
      [&](const std::vector<std::size_t>& train_idx) {
        std::vector<train::TaskExample> train_set;
        for (std::size_t i : train_idx) train_set.push_back(examples[i]);
        auto model = std::make_shared<train::TaskModel>(train::finetune(
            config, pretrained, tokenizer, task, train_set, hyper));
        return [&, model](std::size_t idx) {
          return train::predict(*model, tokenizer, {examples[idx]})[0].label;
        };
      };
  eval::MetricReport report =
      eval::cross_validate_classification(labels, folds, hyper.seed, factory);
  report.task = task.name;
  return report;
}

struct EvalArgs {
  std::string config_file;
  std::vector<std::string> overrides;
};

int cmd_eval(const EvalArgs& args) {
  cfg::KeyValues c = args.config_file.empty()
                         ? cfg::KeyValues{}
                         : cfg::read_config_file(args.config_file);
  cfg::apply_overrides(c, args.overrides);
  const std::string data_path = cfg::get_string(c, "data", "");
  const std::string vocab_path = cfg::get_string(c, "vocab", "");
  const std::string ckpt_path = cfg::get_string(c, "checkpoint", "");
  const std::string out_dir = resolve_out(cfg::get_string(c, "out_dir", "eval_out"));
  const std::size_t folds = cfg::get_u64(c, "folds", 5);
  if (data_path.empty() || vocab_path.empty() || ckpt_path.empty()) {
    throw ConfigError("eval config needs data=, vocab= and checkpoint=");
  }
  const auto tokenizer = tok::read_vocab_file(vocab_path);
  const train::TaskSpec task = task_spec_from(c);
  const auto examples = read_task_tsv(data_path, task);
  const nn::Checkpoint ckpt = nn::load_checkpoint(ckpt_path);
  train::TrainHyper hyper = hyper_from(c);
  hyper.total_steps = cfg::get_u64(c, "total_steps", 200);
  hyper.learning_rate = cfg::get_double(c, "learning_rate", 3e-4);

  const eval::MetricReport report = run_cv_eval(
      ckpt.config, ckpt.params, tokenizer, task, examples, folds, hyper);

  fs::create_directories(out_dir);
  const std::string csv_path = (fs::path(out_dir) / "metrics.csv").string();
  const std::string txt_path = (fs::path(out_dir) / "report.txt").string();
  eval::write_metric_report_csv(csv_path, report);
  write_file(txt_path, eval::format_metric_report(report));
  cfg::KeyValues resolved = c;
  resolved["out_dir"] = out_dir;
  write_file((fs::path(out_dir) / "resolved_config.txt").string(),
             cfg::render_config(resolved));
  write_manifests({csv_path, txt_path}, "eval", resolved,
                  {data_path, vocab_path, ckpt_path});
  std::cout << eval::format_metric_report(report);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareArgs {
  std::string scores_file;
  std::string expected_file;
  std::string out_dir = "compare_out";
  double threshold = 0.05;
};

int cmd_compare(const CompareArgs& args) {
  const auto records = eval::read_score_csv(args.scores_file);
  const eval::ComparisonLedger ledger =
      eval::compare(records, args.threshold);
  const std::string out_dir = resolve_out(args.out_dir);
  fs::create_directories(out_dir);
  const std::string csv_path = (fs::path(out_dir) / "ledger.csv").string();
  const std::string txt_path = (fs::path(out_dir) / "summary.txt").string();
  eval::write_ledger_csv(csv_path, ledger);

  std::string summary = eval::format_ledger_text(ledger);
  std::vector<std::string> inputs{args.scores_file};
  if (!args.expected_file.empty()) {
    const auto expected = eval::read_expected_counts_csv(args.expected_file);
    const auto discrepancies = eval::ledger_discrepancies(ledger, expected);
    summary += "\nPublished-count check:\n";
    if (discrepancies.empty()) {
      summary += "  all pairs match the published counts\n";
    } else {
      for (const auto& d : discrepancies) summary += "  " + d + "\n";
    }
    const std::string disc_path =
        (fs::path(out_dir) / "discrepancies.txt").string();
    std::string disc_text;
    for (const auto& d : discrepancies) disc_text += d + "\n";
    write_file(disc_path, disc_text);
    inputs.push_back(args.expected_file);
  }
  write_file(txt_path, summary);
  cfg::KeyValues resolved{
      {"scores", args.scores_file},
      {"expected", args.expected_file},
      {"threshold", std::to_string(args.threshold)},
      {"out_dir", out_dir},
  };
  write_manifests({csv_path, txt_path}, "compare", resolved, inputs);
  std::cout << summary;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// demo
// ---------------------------------------------------------------------------

[[noreturn]] void demo_fail(const std::string& stage, const std::string& why) {
  throw DataError("demo stage '" + stage + "' failed: " + why);
}

}  // namespace

int demo_pipeline(const DemoOptions& options) {
  const std::string out_dir = resolve_out(options.out_dir);
  fs::create_directories(out_dir);
  auto path_of = [&out_dir](const std::string& name) {
    return (fs::path(out_dir) / name).string();
  };

  // Stage 1: ingest.
  const auto input_files = list_input_files(options.corpus_dir);
  const corpus::IngestResult ingested =
      corpus::ingest(input_files, corpus::NormalizationPolicy{});
  if (ingested.documents.size() < 50) {
    demo_fail("ingest", "only " + std::to_string(ingested.documents.size()) +
                            " documents");
  }
  corpus::write_corpus_file(path_of("corpus.txt"), ingested.documents);
  std::cout << "[demo] ingest: " << ingested.documents.size()
            << " documents\n";

  // Stage 2: vocabulary.
  const tok::TokenizerModel tokenizer =
      tok::train_wordpiece(ingested.documents, options.vocab_size);
  if (tokenizer.vocab_size() != options.vocab_size) {
    demo_fail("vocab", "vocabulary size " +
                           std::to_string(tokenizer.vocab_size()) +
                           " != target " + std::to_string(options.vocab_size));
  }
  tok::write_vocab_file(path_of("vocab.txt"), tokenizer);
  std::cout << "[demo] vocab: " << tokenizer.vocab_size() << " tokens\n";

  // Stage 3: pre-training instances.
  data::BuildOptions build;
  build.max_len = 128;
  build.objective = data::Objective::kNsp;
  build.seed = options.seed;
  const data::BuildResult built =
      data::build_instances(ingested.documents, tokenizer, build);
  if (built.instances.size() < 64) {
    demo_fail("pretrain-data",
              "only " + std::to_string(built.instances.size()) + " instances");
  }
  data::write_instances_jsonl(path_of("instances.jsonl"), built.instances);
  std::cout << "[demo] pretrain-data: " << built.instances.size()
            << " instances\n";

  // Stage 4: pre-training. Threshold: MLM below 0.8 * ln(V).
  nn::ModelConfig config;
  config.num_layers = 2;
  config.hidden = 64;
  config.heads = 2;
  config.max_positions = 128;
  config.vocab_size = tokenizer.vocab_size();
  train::TrainHyper hyper;
  hyper.total_steps = options.pretrain_steps;
  hyper.warmup_steps = std::min<std::size_t>(50, options.pretrain_steps / 10);
  hyper.learning_rate = 1e-3;
  hyper.batch_size = 8;
  hyper.seed = options.seed;
  const train::PretrainResult pretrained =
      train::pretrain(config, built.instances, hyper);
  train::write_loss_trace_csv(path_of("loss_trace.csv"), pretrained.trace);
  nn::save_checkpoint(path_of("model.ckpt"), config, pretrained.params);
  const double target =
      0.8 * std::log(static_cast<double>(config.vocab_size));
  double tail_mlm = 0;
  const std::size_t tail = std::min<std::size_t>(50, pretrained.trace.size());
  for (std::size_t i = pretrained.trace.size() - tail;
       i < pretrained.trace.size(); ++i) {
    tail_mlm += pretrained.trace[i].mlm / static_cast<double>(tail);
  }
  if (tail_mlm >= target) {
    demo_fail("pretrain", "mlm loss " + std::to_string(tail_mlm) +
                              " did not drop below 0.8*ln(V) = " +
                              std::to_string(target));
  }
  std::cout << "[demo] pretrain: mlm " << tail_mlm << " < " << target << '\n';

  // Stage 5: fine-tuning on a synthetic separable task.
  std::vector<train::TaskExample> task_examples;
  {
    Rng rng(options.seed ^ 0x7A5Cull);
    std::vector<std::string> fillers;
    for (const auto& doc : ingested.documents) {
      for (const auto& s : doc.sentences) fillers.push_back(s);
    }
    for (int i = 0; i < 64; ++i) {
      const bool positive = i % 2 == 0;
      const std::string& filler =
          fillers[static_cast<std::size_t>(rng.next_below(fillers.size()))];
      train::TaskExample ex;
      ex.text_a = (positive ? "sinal verde " : "sinal vermelho ") + filler;
      ex.label = positive ? 1.0 : 0.0;
      task_examples.push_back(std::move(ex));
    }
  }
  train::TaskSpec task;
  task.name = "demo-synthetic";
  task.kind = train::TaskKind::kSingleClassification;
  task.num_classes = 2;
  task.max_len = 48;
  train::TrainHyper ft_hyper;
  ft_hyper.total_steps = 200;
  ft_hyper.warmup_steps = 20;
  ft_hyper.learning_rate = 3e-4;
  ft_hyper.batch_size = 8;
  ft_hyper.seed = options.seed;
  const train::TaskModel task_model = train::finetune(
      config, pretrained.params, tokenizer, task, task_examples, ft_hyper);
  const auto train_preds =
      train::predict(task_model, tokenizer, task_examples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < task_examples.size(); ++i) {
    if (train_preds[i].label == static_cast<int>(task_examples[i].label)) {
      ++correct;
    }
  }
  const double train_acc =
      static_cast<double>(correct) / static_cast<double>(task_examples.size());
  if (train_acc < 0.95) {
    demo_fail("finetune",
              "training accuracy " + std::to_string(train_acc) + " < 0.95");
  }
  std::cout << "[demo] finetune: training accuracy " << train_acc << '\n';

  // Stage 6: cross-validated evaluation.
  const eval::MetricReport report =
      run_cv_eval(config, pretrained.params, tokenizer, task, task_examples,
                  4, ft_hyper);
  if (report.accuracy < 0.9) {
    demo_fail("eval", "cross-validated accuracy " +
                          std::to_string(report.accuracy) + " < 0.9");
  }
  eval::write_metric_report_csv(path_of("metrics.csv"), report);
  write_file(path_of("final_report.txt"), eval::format_metric_report(report));
  cfg::KeyValues resolved{
      {"corpus_dir", options.corpus_dir},
      {"out_dir", out_dir},
      {"seed", std::to_string(options.seed)},
      {"pretrain_steps", std::to_string(options.pretrain_steps)},
      {"vocab_size", std::to_string(options.vocab_size)},
  };
  write_file(path_of("resolved_config.txt"), cfg::render_config(resolved));
  // Every artifact gets a manifest sibling; the recorded config reproduces
  // the whole run.
  for (const char* artifact :
       {"corpus.txt", "vocab.txt", "instances.jsonl", "model.ckpt",
        "loss_trace.csv", "metrics.csv", "final_report.txt"}) {
    cfg::write_manifest(path_of(artifact), "demo", resolved, input_files,
                        {path_of(artifact)});
  }
  std::cout << "[demo] eval: accuracy " << report.accuracy
            << "; final report -> " << path_of("final_report.txt") << '\n';
  return kExitOk;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"desk-scale BERT/ALBERT-style pre-training laboratory"};
  app.require_subcommand(1);

  // corpus ingest
  auto* corpus_cmd = app.add_subcommand("corpus", "corpus preparation");
  corpus_cmd->require_subcommand(1);
  IngestArgs ingest_args;
  auto* ingest_cmd = corpus_cmd->add_subcommand(
      "ingest", "normalize raw text files into the corpus format");
  ingest_cmd->add_option("--in", ingest_args.in_dir, "input directory")
      ->required();
  ingest_cmd->add_option("--out", ingest_args.out_file, "output corpus file")
      ->required();
  ingest_cmd->add_flag("--strip-diacritics", ingest_args.strip_diacritics,
                       "remove diacritical marks");
  ingest_cmd->add_flag("--lowercase", ingest_args.lowercase,
                       "lowercase all text");

  // vocab train
  auto* vocab_cmd = app.add_subcommand("vocab", "subword vocabularies");
  vocab_cmd->require_subcommand(1);
  VocabArgs vocab_args;
  auto* vocab_train_cmd =
      vocab_cmd->add_subcommand("train", "train a subword vocabulary");
  vocab_train_cmd
      ->add_option("--algo", vocab_args.algo, "wordpiece or unigram")
      ->check(CLI::IsMember({"wordpiece", "unigram"}));
  vocab_train_cmd->add_option("--size", vocab_args.size, "target size")
      ->required();
  vocab_train_cmd->add_option("--corpus", vocab_args.corpus_file,
                              "corpus file")
      ->required();
  vocab_train_cmd->add_option("--out", vocab_args.out_file, "vocabulary file")
      ->required();
  vocab_train_cmd->add_option("--seed", vocab_args.seed, "rng seed");

  // pretrain-data build
  auto* pd_cmd = app.add_subcommand("pretrain-data", "pre-training instances");
  pd_cmd->require_subcommand(1);
  PretrainDataArgs pd_args;
  auto* pd_build_cmd =
      pd_cmd->add_subcommand("build", "build masked instance files");
  pd_build_cmd->add_option("--corpus", pd_args.corpus_file, "corpus file")
      ->required();
  pd_build_cmd->add_option("--vocab", pd_args.vocab_file, "vocabulary file")
      ->required();
  pd_build_cmd->add_option("--out", pd_args.out_file, "output JSONL file")
      ->required();
  pd_build_cmd->add_option("--objective", pd_args.objective, "nsp or so")
      ->check(CLI::IsMember({"nsp", "so"}));
  pd_build_cmd->add_option("--max-len", pd_args.max_len, "128 or 512");
  pd_build_cmd
      ->add_option("--mask-policy", pd_args.mask_policy,
                   "literal or 80-10-10")
      ->check(CLI::IsMember({"literal", "80-10-10"}));
  pd_build_cmd->add_option("--seed", pd_args.seed, "rng seed");

  // pretrain
  PretrainArgs pt_args;
  auto* pt_cmd = app.add_subcommand("pretrain", "run pre-training");
  pt_cmd->add_option("--config", pt_args.config_file, "key=value config file");
  pt_cmd->add_option("--set", pt_args.overrides,
                     "config override key=value (repeatable)");

  // finetune
  FinetuneArgs ft_args;
  auto* ft_cmd = app.add_subcommand("finetune", "fine-tune a task head");
  ft_cmd->add_option("--config", ft_args.config_file, "key=value config file");
  ft_cmd->add_option("--set", ft_args.overrides,
                     "config override key=value (repeatable)");

  // eval
  EvalArgs ev_args;
  auto* ev_cmd =
      app.add_subcommand("eval", "cross-validated task evaluation");
  ev_cmd->add_option("--config", ev_args.config_file, "key=value config file");
  ev_cmd->add_option("--set", ev_args.overrides,
                     "config override key=value (repeatable)");

  // compare
  CompareArgs cmp_args;
  auto* cmp_cmd =
      app.add_subcommand("compare", "pairwise model comparison ledger");
  cmp_cmd->add_option("--scores", cmp_args.scores_file, "score fixture CSV")
      ->required();
  cmp_cmd->add_option("--expected", cmp_args.expected_file,
                      "published pairwise counts CSV");
  cmp_cmd->add_option("--out", cmp_args.out_dir, "output directory");
  cmp_cmd->add_option("--threshold", cmp_args.threshold,
                      "equivalence threshold (default 0.05)");

  // demo
  DemoOptions demo_args;
  auto* demo_cmd =
      app.add_subcommand("demo", "end-to-end pipeline on the toy corpus");
  demo_cmd->add_option("--corpus-dir", demo_args.corpus_dir,
                       "toy corpus directory");
  demo_cmd->add_option("--out", demo_args.out_dir, "output directory");
  demo_cmd->add_option("--seed", demo_args.seed, "pipeline seed");
  demo_cmd->add_option("--steps", demo_args.pretrain_steps,
                       "pre-training steps");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n' << app.help();
    return kExitConfigError;
  }

  try {
    if (ingest_cmd->parsed()) return cmd_corpus_ingest(ingest_args);
    if (vocab_train_cmd->parsed()) return cmd_vocab_train(vocab_args);
    if (pd_build_cmd->parsed()) return cmd_pretrain_data(pd_args);
    if (pt_cmd->parsed()) return cmd_pretrain(pt_args);
    if (ft_cmd->parsed()) return cmd_finetune(ft_args);
    if (ev_cmd->parsed()) return cmd_eval(ev_args);
    if (cmp_cmd->parsed()) return cmd_compare(cmp_args);
    if (demo_cmd->parsed()) return demo_pipeline(demo_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitDataError;
  }
  std::cerr << "no subcommand\n";
  return kExitConfigError;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace ptlab::cli
