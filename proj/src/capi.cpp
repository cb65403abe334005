#include "relprompt/relprompt.h"

#include "relprompt/checkpoint.hpp"
#include "relprompt/config.hpp"
#include "relprompt/corpus.hpp"
#include "relprompt/error.hpp"
#include "relprompt/eval.hpp"
#include "relprompt/hashing.hpp"
#include "relprompt/numerics.hpp"
#include "relprompt/pretrain.hpp"
#include "relprompt/prompt.hpp"

#include <fmt/format.h>

#include <cstdlib>
#include <cstring>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <new>
#include <string>

using nlohmann::json;
namespace rp = relprompt;

struct rp_model {
  rp::FinetunedModel model;
};

namespace {

thread_local std::string last_error;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

rp_status status_of(rp::ErrorKind kind) {
  switch (kind) {
    case rp::ErrorKind::Config: return RP_ERROR_CONFIG;
    case rp::ErrorKind::Data: return RP_ERROR_DATA;
    case rp::ErrorKind::Io: return RP_ERROR_IO;
    case rp::ErrorKind::Numeric: return RP_ERROR_NUMERIC;
  }
  return RP_ERROR_INTERNAL;
}

template <typename F>
rp_status guarded(F&& body) {
  last_error.clear();
  try {
    body();
    return RP_OK;
  } catch (const UsageError& e) {
    last_error = e.what();
    return RP_ERROR_USAGE;
  } catch (const rp::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const json::exception& e) {
    last_error = e.what();
    return RP_ERROR_CONFIG;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return RP_ERROR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return RP_ERROR_INTERNAL;
  } catch (...) {
    last_error = "unknown failure";
    return RP_ERROR_INTERNAL;
  }
}

const char* need(const char* text, const char* what) {
  if (!text || !*text) throw UsageError(fmt::format("{} is required", what));
  return text;
}

template <typename T>
T section(const char* text, const char* what) {
  T value{};
  if (!text || !*text) return value;
  rp::from_json(rp::parse_json_text(text, what), value);
  return value;
}

char* give(const std::string& text) {
  auto* out = static_cast<char*>(std::malloc(text.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, text.c_str(), text.size() + 1);
  return out;
}

std::vector<rp::Session> sessions_from(const char* path) {
  auto loaded = rp::load_sessions(path);
  if (loaded.sessions.empty()) rp::throw_data(fmt::format("'{}' has no session with at least three turns", path));
  return std::move(loaded.sessions);
}

json metrics_json(const std::vector<rp::IntentId>& preds, const std::vector<rp::IntentId>& labels,
                  const rp::IntentSchema& schema) {
  json per_class = json::array();
  const auto metrics = rp::per_class_metrics(preds, labels, schema.size());
  for (std::size_t c = 0; c < metrics.size(); ++c) {
    per_class.push_back({{"intent", schema.name(c)},
                         {"precision", metrics[c].precision},
                         {"recall", metrics[c].recall},
                         {"f1", metrics[c].f1},
                         {"support", metrics[c].support}});
  }
  return {{"accuracy", 100.0 * rp::accuracy(preds, labels)},
          {"f1", 100.0 * rp::macro_f1(preds, labels, schema.size())},
          {"per_class", std::move(per_class)},
          {"size", labels.size()}};
}

std::vector<rp::TokenId> encode_or_fail(const rp::Vocabulary& vocab, const std::string& text, const char* what) {
  auto ids = vocab.encode(text);
  if (ids.empty()) throw UsageError(fmt::format("{} has no tokens", what));
  return ids;
}

}  // namespace

extern "C" {

const char* rp_version(void) { return RELPROMPT_VERSION; }

const char* rp_last_error(void) { return last_error.c_str(); }

void rp_string_free(char* text) { std::free(text); }

rp_status rp_load_config(const char* path, char** config_json) {
  return guarded([&] {
    if (!config_json) throw UsageError("config_json is required");
    rp::RunConfig config;
    if (path && *path) config = rp::load_run_config(path);
    *config_json = give(json(config).dump());
  });
}

rp_status rp_generate_corpus(const char* corpus_json, const char* sessions_path, const char* labeled_path,
                             const char* schema_path) {
  return guarded([&] {
    need(sessions_path, "sessions path");
    need(labeled_path, "labeled path");
    need(schema_path, "schema path");
    const auto spec = section<rp::SyntheticCorpusSpec>(corpus_json, "corpus config");
    const auto corpus = rp::generate_synthetic_corpus(spec);
    rp::save_sessions(sessions_path, corpus.sessions);
    rp::save_schema(schema_path, corpus.schema);
    rp::save_labeled(labeled_path, corpus.labeled, corpus.schema);
  });
}

rp_status rp_build_vocab(const char* sessions_path, const char* schema_path, const char* tokenizer_json,
                         const char* vocab_path) {
  return guarded([&] {
    need(sessions_path, "sessions path");
    need(vocab_path, "vocab path");
    const auto tokenizer = section<rp::TokenizerConfig>(tokenizer_json, "tokenizer config");
    const auto sessions = sessions_from(sessions_path);
    std::vector<std::string> texts;
    if (schema_path && *schema_path) {
      texts = rp::vocabulary_texts(sessions, rp::load_schema(schema_path));
    } else {
      for (const auto& s : sessions) {
        for (const auto& t : s.turns) {
          texts.push_back(t.query);
          if (t.has_answer) texts.push_back(t.answer);
        }
      }
    }
    rp::Vocabulary::build(texts, tokenizer.max_size, tokenizer.min_freq).save(vocab_path);
  });
}

rp_status rp_pretrain(const char* sessions_path, const char* vocab_path, const char* model_json,
                      const char* pretrain_json, const char* checkpoint_path, const char* log_path) {
  return guarded([&] {
    need(sessions_path, "sessions path");
    need(vocab_path, "vocab path");
    need(checkpoint_path, "checkpoint path");
    auto encoder = section<rp::EncoderConfig>(model_json, "model config");
    const auto pretrain = section<rp::PretrainConfig>(pretrain_json, "pretrain config");
    const auto sessions = sessions_from(sessions_path);
    const auto vocab = rp::Vocabulary::load(vocab_path);
    if (encoder.vocab_size == 0) encoder.vocab_size = vocab.size();
    if (encoder.vocab_size != vocab.size()) {
      rp::throw_config(fmt::format("model.vocab_size {} does not match the vocabulary ({} tokens)",
                                   encoder.vocab_size, vocab.size()));
    }
    std::ofstream log;
    if (log_path && *log_path) {
      log.open(log_path, std::ios::binary);
      if (!log) rp::throw_io(fmt::format("cannot write '{}'", log_path));
    }
    const auto result = rp::pretrain(sessions, vocab, encoder, pretrain, [&](const rp::EpochLog& e) {
      if (!log.is_open()) return;
      log << json{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"wall_seconds", e.wall_seconds}}.dump() << '\n';
      log.flush();
    });
    rp::save_checkpoint(checkpoint_path, result.model, vocab, pretrain, &result.optimizer);
  });
}

rp_status rp_finetune(const char* checkpoint_path, const char* labeled_path, const char* schema_path,
                      unsigned shots, const char* finetune_json, const char* model_path, char** summary_json) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint path");
    need(labeled_path, "labeled path");
    need(schema_path, "schema path");
    need(model_path, "model path");
    if (shots == 0) throw UsageError("shots must be positive");
    const auto config = section<rp::FinetuneConfig>(finetune_json, "finetune config");
    config.validate();
    const auto checkpoint = rp::load_checkpoint(checkpoint_path);
    const auto schema = rp::load_schema(schema_path);
    const auto labeled = rp::load_labeled(labeled_path, schema);
    const auto episode = rp::sample_episode(labeled, schema, shots, config.seed);
    const auto result = rp::finetune(episode, schema, checkpoint.vocab, checkpoint.pretrained, config);
    rp::save_finetuned(model_path, result, checkpoint.vocab, schema, config);
    if (!summary_json) return;

    std::vector<rp::IntentId> preds, labels;
    for (const auto& ex : episode.test) {
      const auto input = result.classifier.prepare(checkpoint.vocab.encode(ex.query));
      preds.push_back(rp::argmax(result.classifier.logits(input)));
      labels.push_back(ex.intent);
    }
    json grid = json::array();
    for (const auto& g : result.grid) {
      json epochs = json::array();
      for (const auto& e : g.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"validation_accuracy", e.validation_accuracy},
                          {"wall_seconds", e.wall_seconds}});
      }
      grid.push_back({{"learning_rate", g.learning_rate},
                      {"best_validation_accuracy", g.best_validation_accuracy},
                      {"best_epoch", g.best_epoch},
                      {"epochs", std::move(epochs)}});
    }
    const json summary = {{"strategy", rp::strategy_name(config.strategy)},
                          {"shots", shots},
                          {"seed", config.seed},
                          {"learning_rate", result.learning_rate},
                          {"validation_accuracy", result.validation_accuracy},
                          {"episode",
                           {{"train", episode.train.size()},
                            {"validation", episode.validation.size()},
                            {"test", episode.test.size()}}},
                          {"test", metrics_json(preds, labels, schema)},
                          {"grid", std::move(grid)}};
    *summary_json = give(summary.dump());
  });
}

rp_status rp_model_load(const char* model_path, rp_model** model) {
  return guarded([&] {
    need(model_path, "model path");
    if (!model) throw UsageError("model handle pointer is required");
    *model = nullptr;
    *model = new rp_model{rp::load_finetuned(model_path)};
  });
}

void rp_model_free(rp_model* model) { delete model; }

rp_status rp_model_predict(const rp_model* model, const char* query, char** result_json) {
  return guarded([&] {
    if (!model) throw UsageError("model handle is required");
    if (!query) throw UsageError("query is required");
    if (!result_json) throw UsageError("result_json is required");
    const auto p = rp::predict(model->model, query);
    json probabilities = json::object();
    for (std::size_t c = 0; c < p.probabilities.size(); ++c) {
      probabilities[model->model.schema.name(c)] = p.probabilities[c];
    }
    json out = {{"intent", model->model.schema.name(p.intent)},
                {"intent_id", p.intent},
                {"probabilities", std::move(probabilities)}};
    if (p.weights && model->model.classifier.strategy() == rp::TransferStrategy::QueryAdapt) {
      out["lambda_qq"] = p.weights->query_query;
      out["lambda_qa"] = p.weights->query_answer;
      out["dominance"] = rp::dominance_name(rp::dominance_category(*p.weights));
    }
    *result_json = give(out.dump());
  });
}

rp_status rp_run_experiment(const char* config_json, const char* sessions_path, const char* labeled_path,
                            const char* schema_path, const char* report_path, int verbose) {
  return guarded([&] {
    need(report_path, "report path");
    auto config = section<rp::RunConfig>(config_json, "run config");
    config.apply_seed();
    const bool any = (sessions_path && *sessions_path) || (labeled_path && *labeled_path) ||
                     (schema_path && *schema_path);
    rp::ExperimentData data;
    if (!any) {
      data = rp::synthetic_experiment_data(config.corpus, config.tokenizer);
    } else {
      need(sessions_path, "sessions path");
      need(labeled_path, "labeled path");
      need(schema_path, "schema path");
      data.sessions = sessions_from(sessions_path);
      data.schema = rp::load_schema(schema_path);
      data.labeled = rp::load_labeled(labeled_path, data.schema);
      data.vocab = rp::build_corpus_vocab(data.sessions, data.schema, config.tokenizer);
    }
    rp::ProgressCallback progress;
    if (verbose) progress = [](const std::string& line) { std::cerr << line << '\n'; };
    const auto report = rp::run_experiment(data, config, progress);
    rp::emit_report(report, report_path);
  });
}

rp_status rp_inspect_prompt(const char* request_json, char** rendering) {
  return guarded([&] {
    if (!rendering) throw UsageError("rendering is required");
    const auto request = rp::parse_json_text(need(request_json, "request"), "prompt request");
    for (const auto& [key, value] : request.items()) {
      static const std::vector<std::string> known{"query",   "intent", "partner", "relation",
                                                  "m",       "max_len", "vocab",  "show_pad"};
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw UsageError(fmt::format("unknown prompt request key '{}'", key));
      }
    }
    if (!request.contains("query")) throw UsageError("query is required");
    const auto query = request.at("query").get<std::string>();
    const bool has_intent = request.contains("intent");
    const bool has_partner = request.contains("partner");
    if (has_intent == has_partner) throw UsageError("give exactly one of intent and partner");
    const auto other = request.at(has_intent ? "intent" : "partner").get<std::string>();
    const auto m = request.value("m", std::size_t{3});
    const auto max_len = request.value("max_len", rp::EncoderConfig{}.max_len);
    const bool show_pad = request.value("show_pad", false);

    rp::Vocabulary vocab;
    if (const auto path = request.value("vocab", std::string()); !path.empty()) {
      vocab = rp::Vocabulary::load(path);
    } else {
      const std::vector<std::string> texts{query, other};
      vocab = rp::Vocabulary::build(texts, rp::TokenizerConfig{}.max_size, 1);
    }
    const auto q = encode_or_fail(vocab, query, "query");
    const auto o = encode_or_fail(vocab, other, has_intent ? "intent" : "partner");
    rp::PromptSequence prompt;
    if (has_intent) {
      prompt = rp::assemble_intent_prompt(q, o, m, max_len);
    } else {
      const auto relation = request.value("relation", std::string("qq"));
      rp::RelationKind kind;
      if (relation == "qq") {
        kind = rp::RelationKind::QueryQuery;
      } else if (relation == "qa") {
        kind = rp::RelationKind::QueryAnswer;
      } else {
        throw UsageError(fmt::format("relation must be qq or qa, not '{}'", relation));
      }
      prompt = rp::assemble_relation_prompt(q, kind, o, m, max_len);
    }
    *rendering = give(rp::render_prompt(prompt, show_pad));
  });
}

rp_status rp_file_digest(const char* path, char** hex) {
  return guarded([&] {
    need(path, "path");
    if (!hex) throw UsageError("hex is required");
    *hex = give(rp::sha256_file(path));
  });
}

}  // extern "C"
