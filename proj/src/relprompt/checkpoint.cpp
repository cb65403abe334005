#include "relprompt/checkpoint.hpp"

#include "relprompt/config.hpp"
#include "relprompt/container.hpp"
#include "relprompt/error.hpp"

#include <fmt/format.h>

namespace relprompt {

namespace {

constexpr std::string_view kAdamFirst = "adam.m/";
constexpr std::string_view kAdamSecond = "adam.v/";
constexpr std::string_view kFrozen = "frozen/";

bool has_prefix(std::string_view text, std::string_view prefix) { return text.substr(0, prefix.size()) == prefix; }

nlohmann::json vocab_json(const Vocabulary& vocab) {
  return {{"tokens", vocab.regular_tokens()}, {"sha256", vocab.digest()}};
}

Vocabulary vocab_from_json(const nlohmann::json& j, const std::string& where) {
  auto vocab = Vocabulary::from_tokens(j.at("tokens").get<std::vector<std::string>>());
  if (vocab.digest() != j.at("sha256").get<std::string>()) {
    throw_data(fmt::format("'{}': vocabulary digest mismatch", where));
  }
  return vocab;
}

void check_format(const nlohmann::json& header, std::string_view format, const std::string& where) {
  if (header.value("format", std::string()) != format) {
    throw_data(fmt::format("'{}' is not a {} file", where, format));
  }
  if (header.value("version", 0) != kCheckpointVersion) {
    throw_data(fmt::format("'{}': unsupported version {}", where, header.value("version", 0)));
  }
}

/// Tensors whose names pass `select`, with `strip` removed from the front.
ParameterStore<float> store_from(const TensorContainer& container, std::string_view strip,
                                 bool (*select)(std::string_view)) {
  ParameterStore<float> store;
  for (const auto& t : container.tensors) {
    if (!select(t.name)) continue;
    const auto id = store.add(t.name.substr(strip.size()), t.value.rows(), t.value.cols());
    store[id].value = t.value;
  }
  return store;
}

bool is_parameter(std::string_view name) {
  return !has_prefix(name, kAdamFirst) && !has_prefix(name, kAdamSecond) && !has_prefix(name, kFrozen);
}

bool is_frozen(std::string_view name) { return has_prefix(name, kFrozen); }

}  // namespace

std::vector<RelationKind> pretrained_relations(const PretrainConfig& config) {
  std::vector<RelationKind> kinds;
  if (config.text_only) return kinds;
  if (config.use_query_query) kinds.push_back(RelationKind::QueryQuery);
  if (config.use_query_answer) kinds.push_back(RelationKind::QueryAnswer);
  return kinds;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const Vocabulary& vocab,
                     const PretrainConfig& pretrain, const AdamOptimizer* optimizer) {
  TensorContainer container;
  container.header = {{"format", "relprompt-checkpoint"},
                      {"version", kCheckpointVersion},
                      {"encoder", model.config()},
                      {"pretrain", pretrain},
                      {"vocab", vocab_json(vocab)}};
  const auto& tensors = model.params().tensors();
  for (const auto& t : tensors) container.tensors.push_back({t.name, t.value});
  if (optimizer) {
    nlohmann::json steps = nlohmann::json::object();
    const auto& states = optimizer->states();
    for (std::size_t i = 0; i < states.size() && i < tensors.size(); ++i) {
      if (states[i].step == 0) continue;
      steps[tensors[i].name] = states[i].step;
      container.tensors.push_back({std::string(kAdamFirst) + tensors[i].name, states[i].first_moment});
      container.tensors.push_back({std::string(kAdamSecond) + tensors[i].name, states[i].second_moment});
    }
    container.header["optimizer"] = {{"learning_rate", optimizer->hyper().learning_rate}, {"steps", steps}};
  }
  write_container(path, container);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto where = path.string();
  const auto container = read_container(path);
  check_format(container.header, "relprompt-checkpoint", where);
  try {
    EncoderConfig encoder;
    from_json(container.header.at("encoder"), encoder);
    PretrainConfig pretrain;
    from_json(container.header.at("pretrain"), pretrain);
    auto vocab = vocab_from_json(container.header.at("vocab"), where);
    if (encoder.vocab_size != vocab.size()) {
      throw_data(fmt::format("'{}': encoder vocab_size {} but {} vocabulary tokens", where, encoder.vocab_size,
                             vocab.size()));
    }
    Model<float> model(encoder, store_from(container, "", is_parameter));
    std::vector<AdamState<float>> states;
    if (const auto it = container.header.find("optimizer"); it != container.header.end()) {
      const auto& steps = it->at("steps");
      states.resize(model.params().tensors().size());
      for (std::size_t i = 0; i < states.size(); ++i) {
        const auto& name = model.params().tensors()[i].name;
        if (!steps.contains(name)) continue;
        const auto* m = container.find(std::string(kAdamFirst) + name);
        const auto* v = container.find(std::string(kAdamSecond) + name);
        if (!m || !v) throw_data(fmt::format("'{}': optimizer moments for '{}' are missing", where, name));
        states[i] = {m->value, v->value, steps.at(name).get<long>()};
      }
    }
    auto relations = pretrained_relations(pretrain);
    return {{std::move(model), std::move(relations)}, std::move(vocab), pretrain, std::move(states)};
  } catch (const nlohmann::json::exception& e) {
    throw_data(fmt::format("'{}': malformed checkpoint header: {}", where, e.what()));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw_data(fmt::format("'{}': {}", where, e.what()));
    throw;
  }
}

void save_finetuned(const std::filesystem::path& path, const FinetuneResult& result, const Vocabulary& vocab,
                    const IntentSchema& schema, const FinetuneConfig& config) {
  const auto& classifier = result.classifier;
  TensorContainer container;
  container.header = {{"format", "relprompt-model"},
                      {"version", kCheckpointVersion},
                      {"encoder", classifier.model().config()},
                      {"finetune", config},
                      {"strategy", strategy_name(classifier.strategy())},
                      {"prompt_learning", classifier.prompt_learning()},
                      {"learning_rate", result.learning_rate},
                      {"schema", schema.labels()},
                      {"vocab", vocab_json(vocab)}};
  for (const auto& t : classifier.model().params().tensors()) container.tensors.push_back({t.name, t.value});
  if (const auto* frozen = classifier.frozen()) {
    for (const auto& t : frozen->params().tensors()) {
      container.tensors.push_back({std::string(kFrozen) + t.name, t.value});
    }
  }
  write_container(path, container);
}

FinetunedModel load_finetuned(const std::filesystem::path& path) {
  const auto where = path.string();
  const auto container = read_container(path);
  check_format(container.header, "relprompt-model", where);
  try {
    const auto& h = container.header;
    EncoderConfig encoder;
    from_json(h.at("encoder"), encoder);
    FinetuneConfig config;
    from_json(h.at("finetune"), config);
    const auto strategy = parse_strategy(h.at("strategy").get<std::string>());
    const bool prompt_learning = h.at("prompt_learning").get<bool>();
    IntentSchema schema(h.at("schema").get<std::vector<std::string>>());
    auto vocab = vocab_from_json(h.at("vocab"), where);
    if (encoder.vocab_size != vocab.size()) throw_data(fmt::format("'{}': vocab_size mismatch", where));
    Model<float> model(encoder, store_from(container, "", is_parameter));
    std::optional<Model<float>> frozen;
    auto frozen_store = store_from(container, kFrozen, is_frozen);
    if (!frozen_store.tensors().empty()) frozen.emplace(encoder, std::move(frozen_store));
    IntentClassifier<float> classifier(std::move(model), std::move(frozen), strategy, prompt_learning,
                                       encode_intents(schema, vocab));
    return {std::move(classifier), std::move(vocab), std::move(schema), config, h.at("learning_rate").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw_data(fmt::format("'{}': malformed model header: {}", where, e.what()));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw_data(fmt::format("'{}': {}", where, e.what()));
    throw;
  }
}

Prediction predict(const FinetunedModel& model, std::string_view query) {
  const auto& classifier = model.classifier;
  const auto input = classifier.prepare(model.vocab.encode(query));
  Prediction out;
  const auto logits = classifier.logits(input);
  out.intent = argmax(logits);
  out.probabilities = softmax(std::span<const float>(logits));
  out.weights = classifier.mixing_weights(input);
  return out;
}

}  // namespace relprompt
