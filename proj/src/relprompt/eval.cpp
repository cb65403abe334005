#include "relprompt/eval.hpp"

#include "relprompt/checkpoint.hpp"
#include "relprompt/error.hpp"
#include "relprompt/hashing.hpp"

#include <fmt/format.h>

#include <chrono>
#include <fstream>
#include <map>

namespace relprompt {

using nlohmann::json;

namespace {

void check_pairs(std::span<const IntentId> preds, std::span<const IntentId> labels) {
  if (preds.empty()) throw_data("metrics over an empty prediction set are undefined");
  if (preds.size() != labels.size()) {
    throw_data(fmt::format("{} predictions but {} labels", preds.size(), labels.size()));
  }
}

double mean_of(const std::vector<RunRecord>& runs, double RunRecord::*field) {
  if (runs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : runs) total += r.*field;
  return total / static_cast<double>(runs.size());
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

double accuracy(std::span<const IntentId> preds, std::span<const IntentId> labels) {
  check_pairs(preds, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

std::vector<ClassMetrics> per_class_metrics(std::span<const IntentId> preds, std::span<const IntentId> labels,
                                            std::size_t num_classes) {
  check_pairs(preds, labels);
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= num_classes || labels[i] >= num_classes) {
      throw_data(fmt::format("class id outside [0, {}) at position {}", num_classes, i));
    }
    if (preds[i] == labels[i]) {
      ++tp[preds[i]];
    } else {
      ++fp[preds[i]];
      ++fn[labels[i]];
    }
  }
  std::vector<ClassMetrics> out(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& m = out[c];
    m.support = tp[c] + fn[c];
    m.precision = tp[c] + fp[c] == 0 ? 0.0 : static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]);
    m.recall = m.support == 0 ? 0.0 : static_cast<double>(tp[c]) / static_cast<double>(m.support);
    // 2tp / (2tp + fp + fn)
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    m.f1 = denom == 0 ? 0.0 : static_cast<double>(2 * tp[c]) / static_cast<double>(denom);
  }
  return out;
}

double macro_f1(std::span<const IntentId> preds, std::span<const IntentId> labels, std::size_t num_classes) {
  if (num_classes == 0) throw_data("macro-F1 needs at least one class");
  const auto metrics = per_class_metrics(preds, labels, num_classes);
  double total = 0.0;
  for (const auto& m : metrics) total += m.f1;
  return total / static_cast<double>(num_classes);
}

Variant parse_variant(const std::string& key) {
  using A = Ablation;
  using S = TransferStrategy;
  static const std::vector<Variant> known = {
      {"said", "SAID", A::None, S::FreshRandom},
      {"wo_pt", "w/o PT", A::NoPretraining, S::FreshRandom},
      {"wo_rel", "w/o REL", A::NoRelations, S::FreshRandom},
      {"wo_qa", "w/o Q-A", A::NoQueryAnswer, S::FreshRandom},
      {"wo_qq", "w/o Q-Q", A::NoQueryQuery, S::FreshRandom},
      {"wo_plft", "w/o PLFT", A::NoPromptLearning, S::FreshRandom},
      {"linear", "+ Linear", A::None, S::LinearGlobal},
      {"mlp", "+ MLP", A::None, S::MlpGenerator},
      {"queryadapt", "+ QueryAdapt", A::None, S::QueryAdapt},
  };
  for (const auto& v : known) {
    if (v.key == key) return v;
  }
  throw_config(fmt::format("unknown variant '{}'", key));
}

std::optional<PretrainConfig> variant_pretraining(const Variant& variant, const PretrainConfig& base) {
  PretrainConfig out = base;
  switch (variant.ablation) {
    case Ablation::NoPretraining: return std::nullopt;
    case Ablation::NoRelations:
      out.text_only = true;
      break;
    case Ablation::NoQueryAnswer:
      out.text_only = false;
      out.use_query_query = true;
      out.use_query_answer = false;
      break;
    case Ablation::NoQueryQuery:
      out.text_only = false;
      out.use_query_query = false;
      out.use_query_answer = true;
      break;
    case Ablation::None:
    case Ablation::NoPromptLearning:
      break;
  }
  return out;
}

FinetuneConfig variant_finetuning(const Variant& variant, const FinetuneConfig& base) {
  FinetuneConfig out = base;
  out.strategy = variant.strategy;
  out.prompt_learning = variant.ablation != Ablation::NoPromptLearning;
  return out;
}

std::vector<std::string> vocabulary_texts(const std::vector<Session>& sessions, const IntentSchema& schema) {
  std::vector<std::string> texts;
  for (const auto& s : sessions) {
    for (const auto& t : s.turns) {
      texts.push_back(t.query);
      if (t.has_answer) texts.push_back(t.answer);
    }
  }
  for (const auto& name : schema.labels()) texts.push_back(name);
  return texts;
}

Vocabulary build_corpus_vocab(const std::vector<Session>& sessions, const IntentSchema& schema,
                              const TokenizerConfig& config) {
  const auto texts = vocabulary_texts(sessions, schema);
  return Vocabulary::build(texts, config.max_size, config.min_freq);
}

ExperimentData synthetic_experiment_data(const SyntheticCorpusSpec& spec, const TokenizerConfig& tokenizer) {
  auto corpus = generate_synthetic_corpus(spec);
  auto filtered = filter_sessions(std::move(corpus.sessions));
  auto vocab = build_corpus_vocab(filtered.sessions, corpus.schema, tokenizer);
  return {std::move(filtered.sessions), std::move(corpus.labeled), std::move(corpus.schema), std::move(vocab)};
}

const CellReport* ExperimentReport::find(const std::string& variant_key, std::size_t shots) const {
  for (const auto& c : cells) {
    if (c.variant.key == variant_key && c.shots == shots) return &c;
  }
  return nullptr;
}

ExperimentReport run_experiment(const ExperimentData& data, const RunConfig& config, const ProgressCallback& progress) {
  const auto& matrix = config.eval;
  if (matrix.runs == 0) throw_config("eval.runs must be at least 1");
  if (matrix.shots.empty() || matrix.variants.empty()) throw_config("eval matrix needs shots and variants");
  for (const auto k : matrix.shots) {
    if (k == 0) throw_config("eval.shots entries must be positive");
  }
  config.finetune.validate();
  EncoderConfig encoder = config.model;
  if (encoder.vocab_size == 0) encoder.vocab_size = data.vocab.size();
  if (encoder.vocab_size != data.vocab.size()) {
    throw_config(fmt::format("model.vocab_size {} does not match the vocabulary ({} tokens)", encoder.vocab_size,
                             data.vocab.size()));
  }
  auto say = [&](const std::string& text) {
    if (progress) progress(text);
  };

  ExperimentReport report;
  report.config = config;
  report.config.model.vocab_size = encoder.vocab_size;
  report.schema = data.schema.labels();
  std::vector<Variant> variants;
  for (const auto& key : matrix.variants) variants.push_back(parse_variant(key));

  std::map<std::string, PretrainedModel> pretrained;
  std::map<std::string, std::vector<double>> pretrain_seconds;
  std::vector<std::string> variant_model;
  for (const auto& v : variants) {
    const auto pcfg = variant_pretraining(v, config.pretrain);
    const std::string key = pcfg ? json(*pcfg).dump() : "none";
    variant_model.push_back(key);
    if (pretrained.count(key)) continue;
    if (!pcfg) {
      pretrained.emplace(key, PretrainedModel{init_parameters(encoder, config.pretrain.seed), {}});
      pretrain_seconds[key] = {};
      continue;
    }
    say(fmt::format("pretraining for {}", v.label));
    std::vector<double> seconds;
    auto result = pretrain(data.sessions, data.vocab, encoder, *pcfg, [&](const EpochLog& e) {
      seconds.push_back(e.wall_seconds);
      say(fmt::format("  epoch {} loss {:.4f} ({:.1f}s)", e.epoch, e.mean_loss, e.wall_seconds));
    });
    pretrained.emplace(key, PretrainedModel{std::move(result.model), pretrained_relations(*pcfg)});
    pretrain_seconds[key] = std::move(seconds);
  }
  for (std::size_t i = 0; i < variants.size(); ++i) {
    report.pretrain_seconds.emplace_back(variants[i].key, pretrain_seconds.at(variant_model[i]));
  }

  const auto C = data.schema.size();
  for (const auto shots : matrix.shots) {
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      const auto& v = variants[vi];
      const auto& start_model = pretrained.at(variant_model[vi]);
      CellReport cell;
      cell.variant = v;
      cell.shots = shots;
      for (std::size_t r = 0; r < matrix.runs; ++r) {
        const std::uint64_t seed = matrix.base_seed + r;
        const auto episode = sample_episode(data.labeled, data.schema, shots, seed);
        auto fcfg = variant_finetuning(v, config.finetune);
        fcfg.seed = seed;
        const auto result = finetune(episode, data.schema, data.vocab, start_model, fcfg);

        RunRecord run;
        run.seed = seed;
        run.learning_rate = result.learning_rate;
        double epoch_seconds = 0.0;
        std::size_t epochs = 0;
        for (const auto& g : result.grid) {
          for (const auto& e : g.epochs) {
            epoch_seconds += e.wall_seconds;
            ++epochs;
          }
        }
        run.train_seconds_per_epoch = epochs == 0 ? 0.0 : epoch_seconds / static_cast<double>(epochs);

        std::vector<IntentId> preds, labels;
        const auto started = Clock::now();
        for (const auto& ex : episode.test) {
          const auto input = result.classifier.prepare(data.vocab.encode(ex.query));
          preds.push_back(argmax(result.classifier.logits(input)));
          labels.push_back(ex.intent);
        }
        run.inference_seconds_per_query = seconds_since(started) / static_cast<double>(episode.test.size());
        run.accuracy = 100.0 * accuracy(preds, labels);
        run.f1 = 100.0 * macro_f1(preds, labels, C);
        run.per_class = per_class_metrics(preds, labels, C);
        say(fmt::format("{} {}-shot run {}: acc {:.2f} f1 {:.2f} (lr {})", v.label, shots, r, run.accuracy, run.f1,
                        run.learning_rate));
        cell.runs.push_back(std::move(run));
      }
      cell.mean_accuracy = mean_of(cell.runs, &RunRecord::accuracy);
      cell.mean_f1 = mean_of(cell.runs, &RunRecord::f1);
      cell.train_seconds_per_epoch = mean_of(cell.runs, &RunRecord::train_seconds_per_epoch);
      cell.inference_seconds_per_query = mean_of(cell.runs, &RunRecord::inference_seconds_per_query);
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

json report_json(const ExperimentReport& report) {
  const json config = report.config;
  json out = {
      {"format", "relprompt-report"},
      {"version", 1},
      {"notes",
       {{"f1", "macro-F1: per-class F1 (0/0 = 0) averaged without weights over all intents"},
        {"episodes", "run r resamples the K-shot episode and seeds fine-tuning with eval.base_seed + r"},
        {"pretraining", "each pretraining setup is trained once and shared by all runs and shot settings"},
        {"units", "accuracy and f1 in percent; per-class metrics as fractions"}}},
      {"config", config},
      {"config_sha256", sha256_hex(config.dump())},
      {"schema", report.schema},
  };
  json seeds = json::array();
  for (std::size_t r = 0; r < report.config.eval.runs; ++r) seeds.push_back(report.config.eval.base_seed + r);
  out["seeds"] = std::move(seeds);

  // Rows = variants, columns = shot settings.
  json table = json::array();
  for (const auto& key : report.config.eval.variants) {
    json row = {{"variant", parse_variant(key).label}, {"key", key}};
    json columns = json::array();
    for (const auto shots : report.config.eval.shots) {
      if (const auto* cell = report.find(key, shots)) {
        columns.push_back({{"shots", shots}, {"accuracy", cell->mean_accuracy}, {"f1", cell->mean_f1}});
      }
    }
    row["columns"] = std::move(columns);
    table.push_back(std::move(row));
  }
  out["table"] = std::move(table);

  json cells = json::array();
  for (const auto& cell : report.cells) {
    json runs = json::array();
    for (const auto& run : cell.runs) {
      json per_class = json::array();
      for (std::size_t c = 0; c < run.per_class.size(); ++c) {
        const auto& m = run.per_class[c];
        per_class.push_back({{"intent", report.schema.at(c)},
                             {"precision", m.precision},
                             {"recall", m.recall},
                             {"f1", m.f1},
                             {"support", m.support}});
      }
      runs.push_back({{"seed", run.seed},
                      {"accuracy", run.accuracy},
                      {"f1", run.f1},
                      {"learning_rate", run.learning_rate},
                      {"per_class", std::move(per_class)}});
    }
    cells.push_back({{"variant", cell.variant.label},
                     {"key", cell.variant.key},
                     {"shots", cell.shots},
                     {"mean_accuracy", cell.mean_accuracy},
                     {"mean_f1", cell.mean_f1},
                     {"runs", std::move(runs)}});
  }
  out["cells"] = std::move(cells);
  return out;
}

json timing_json(const ExperimentReport& report) {
  json pretrain = json::array();
  for (const auto& [key, seconds] : report.pretrain_seconds) {
    pretrain.push_back({{"key", key}, {"seconds_per_epoch", seconds}});
  }
  json cells = json::array();
  for (const auto& cell : report.cells) {
    json runs = json::array();
    for (const auto& run : cell.runs) {
      runs.push_back({{"seed", run.seed},
                      {"train_seconds_per_epoch", run.train_seconds_per_epoch},
                      {"inference_seconds_per_query", run.inference_seconds_per_query}});
    }
    cells.push_back({{"variant", cell.variant.label},
                     {"key", cell.variant.key},
                     {"shots", cell.shots},
                     {"train_seconds_per_epoch", cell.train_seconds_per_epoch},
                     {"inference_seconds_per_query", cell.inference_seconds_per_query},
                     {"runs", std::move(runs)}});
  }
  return {{"format", "relprompt-timing"},
          {"version", 1},
          {"clock", "monotonic wall clock; inference excludes model loading"},
          {"pretrain", std::move(pretrain)},
          {"cells", std::move(cells)}};
}

std::filesystem::path timing_path(const std::filesystem::path& report_path) {
  return std::filesystem::path(report_path.string() + ".timing.json");
}

void emit_report(const ExperimentReport& report, const std::filesystem::path& path) {
  auto write = [](const std::filesystem::path& p, const json& j) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw_io(fmt::format("cannot open '{}' for writing", p.string()));
    out << j.dump(2) << '\n';
    if (!out) throw_io(fmt::format("failed writing '{}'", p.string()));
  };
  write(path, report_json(report));
  write(timing_path(path), timing_json(report));
}

}  // namespace relprompt
