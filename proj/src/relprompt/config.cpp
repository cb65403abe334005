#include "relprompt/config.hpp"

#include "relprompt/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace relprompt {

using nlohmann::json;

namespace {

template <typename T>
struct is_vector : std::false_type {};
template <typename U>
struct is_vector<std::vector<U>> : std::true_type {};

/// Reads known keys of one object and rejects the rest.
class Fields {
 public:
  Fields(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw_config(fmt::format("config section '{}' must be an object", section_));
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      convert(*it, out, key);
    } catch (const json::exception& e) {
      throw_config(fmt::format("{}.{}: {}", section_, key, e.what()));
    }
  }

  template <typename Parse, typename T>
  void read_with(const char* key, T& out, Parse parse) {
    known_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_string()) throw_config(fmt::format("{}.{} must be a string", section_, key));
    out = parse(it->get<std::string>());
  }

  /// Marks a key as handled by the caller.
  void skip(const char* key) { known_.insert(key); }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!known_.count(item.key())) throw_config(fmt::format("unknown key '{}' in config section '{}'", item.key(), section_));
    }
  }

 private:
  template <typename T>
  void convert(const json& v, T& out, const char* key) {
    if constexpr (is_vector<T>::value) {
      using U = typename T::value_type;
      T values;
      if (v.is_array()) {
        for (const auto& e : v) {
          U item{};
          convert(e, item, key);
          values.push_back(std::move(item));
        }
      } else {
        U item{};
        convert(v, item, key);
        values.push_back(std::move(item));
      }
      out = std::move(values);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw_config(fmt::format("{}.{} must be true or false", section_, key));
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
      if (!ok) throw_config(fmt::format("{}.{} must be a non-negative integer", section_, key));
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw_config(fmt::format("{}.{} must be a number", section_, key));
      out = v.get<T>();
    } else {
      out = v.get<T>();
    }
  }

  const json& j_;
  std::string section_;
  std::set<std::string> known_;
};

Pairing parse_pairing(const std::string& name) {
  if (name == "adjacent") return Pairing::Adjacent;
  if (name == "all") return Pairing::All;
  throw_config(fmt::format("unknown pairing '{}' (expected adjacent or all)", name));
}

const char* pairing_name(Pairing p) { return p == Pairing::Adjacent ? "adjacent" : "all"; }

json typed_value(const std::string& raw) {
  std::string text = raw;
  const auto first = text.find_first_not_of(" \t");
  const auto last = text.find_last_not_of(" \t");
  text = first == std::string::npos ? std::string() : text.substr(first, last - first + 1);
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') return text.substr(1, text.size() - 2);
  if (text == "true") return true;
  if (text == "false") return false;
  std::uint64_t u = 0;
  auto [pu, eu] = std::from_chars(text.data(), text.data() + text.size(), u);
  if (eu == std::errc() && pu == text.data() + text.size() && !text.empty()) return u;
  std::int64_t i = 0;
  auto [pi, ei] = std::from_chars(text.data(), text.data() + text.size(), i);
  if (ei == std::errc() && pi == text.data() + text.size() && !text.empty()) return i;
  double d = 0.0;
  auto [pd, ed] = std::from_chars(text.data(), text.data() + text.size(), d);
  if (ed == std::errc() && pd == text.data() + text.size() && !text.empty()) return d;
  return text;
}

json ini_value(const std::string& raw) {
  if (raw.find(',') == std::string::npos) return typed_value(raw);
  json items = json::array();
  std::stringstream stream(raw);
  std::string part;
  while (std::getline(stream, part, ',')) items.push_back(typed_value(part));
  return items;
}

}  // namespace

void to_json(json& j, const TokenizerConfig& c) { j = {{"max_size", c.max_size}, {"min_freq", c.min_freq}}; }

void from_json(const json& j, TokenizerConfig& c) {
  Fields f(j, "tokenizer");
  f.read("max_size", c.max_size);
  f.read("min_freq", c.min_freq);
  f.finish();
}

void to_json(json& j, const SyntheticCorpusSpec& c) {
  j = {{"num_sessions", c.num_sessions},
       {"min_turns", c.min_turns},
       {"max_turns", c.max_turns},
       {"min_query_tokens", c.min_query_tokens},
       {"max_query_tokens", c.max_query_tokens},
       {"min_answer_tokens", c.min_answer_tokens},
       {"max_answer_tokens", c.max_answer_tokens},
       {"num_intents", c.num_intents},
       {"tail_words_per_intent", c.tail_words_per_intent},
       {"tail_filler_words", c.tail_filler_words},
       {"zipf_exponent", c.zipf_exponent},
       {"noise_rate", c.noise_rate},
       {"empty_query_rate", c.empty_query_rate},
       {"answer_name_rate", c.answer_name_rate},
       {"labeled_per_intent", c.labeled_per_intent},
       {"seed", c.seed}};
  if (!c.themes.empty()) {
    json themes = json::array();
    for (const auto& t : c.themes) themes.push_back({{"name", t.name}, {"words", t.words}});
    j["themes"] = std::move(themes);
  }
  if (!c.filler_words.empty()) j["filler_words"] = c.filler_words;
}

void from_json(const json& j, SyntheticCorpusSpec& c) {
  Fields f(j, "corpus");
  f.read("num_sessions", c.num_sessions);
  f.read("min_turns", c.min_turns);
  f.read("max_turns", c.max_turns);
  f.read("min_query_tokens", c.min_query_tokens);
  f.read("max_query_tokens", c.max_query_tokens);
  f.read("min_answer_tokens", c.min_answer_tokens);
  f.read("max_answer_tokens", c.max_answer_tokens);
  f.read("num_intents", c.num_intents);
  f.read("tail_words_per_intent", c.tail_words_per_intent);
  f.read("tail_filler_words", c.tail_filler_words);
  f.read("zipf_exponent", c.zipf_exponent);
  f.read("noise_rate", c.noise_rate);
  f.read("empty_query_rate", c.empty_query_rate);
  f.read("answer_name_rate", c.answer_name_rate);
  f.read("labeled_per_intent", c.labeled_per_intent);
  f.read("seed", c.seed);
  f.read("filler_words", c.filler_words);
  f.skip("themes");
  if (const auto it = j.find("themes"); it != j.end()) {
    if (!it->is_array()) throw_config("corpus.themes must be an array of {name, words} objects");
    c.themes.clear();
    for (const auto& t : *it) {
      IntentTheme theme;
      Fields tf(t, "corpus.themes[]");
      tf.read("name", theme.name);
      tf.read("words", theme.words);
      tf.finish();
      c.themes.push_back(std::move(theme));
    }
  }
  f.finish();
}

void to_json(json& j, const EncoderConfig& c) {
  j = {{"vocab_size", c.vocab_size},   {"hidden_dim", c.hidden_dim},
       {"num_layers", c.num_layers},   {"num_heads", c.num_heads},
       {"ffn_dim", c.ffn_dim},         {"max_len", c.max_len},
       {"relation_tokens", c.relation_tokens}, {"dropout_rate", c.dropout_rate},
       {"tie_mlm_weights", c.tie_mlm_weights}};
}

void from_json(const json& j, EncoderConfig& c) {
  Fields f(j, "model");
  f.read("vocab_size", c.vocab_size);
  f.read("hidden_dim", c.hidden_dim);
  f.read("num_layers", c.num_layers);
  f.read("num_heads", c.num_heads);
  f.read("ffn_dim", c.ffn_dim);
  f.read("max_len", c.max_len);
  f.read("relation_tokens", c.relation_tokens);
  f.read("dropout_rate", c.dropout_rate);
  f.read("tie_mlm_weights", c.tie_mlm_weights);
  f.finish();
}

void to_json(json& j, const PretrainConfig& c) {
  j = {{"mask_ratio", c.mask_ratio},
       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"seed", c.seed},
       {"use_query_query", c.use_query_query},
       {"use_query_answer", c.use_query_answer},
       {"text_only", c.text_only},
       {"pairing", pairing_name(c.pairing)}};
}

void from_json(const json& j, PretrainConfig& c) {
  Fields f(j, "pretrain");
  f.read("mask_ratio", c.mask_ratio);
  f.read("epochs", c.epochs);
  f.read("learning_rate", c.learning_rate);
  f.read("batch_size", c.batch_size);
  f.read("beta1", c.beta1);
  f.read("beta2", c.beta2);
  f.read("epsilon", c.epsilon);
  f.read("seed", c.seed);
  f.read("use_query_query", c.use_query_query);
  f.read("use_query_answer", c.use_query_answer);
  f.read("text_only", c.text_only);
  f.read_with("pairing", c.pairing, parse_pairing);
  f.finish();
}

void to_json(json& j, const FinetuneConfig& c) {
  j = {{"strategy", strategy_name(c.strategy)},
       {"learning_rate_grid", c.learning_rate_grid},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"batch_size", c.batch_size},
       {"freeze_encoder", c.freeze_encoder},
       {"prompt_learning", c.prompt_learning},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"seed", c.seed}};
}

void from_json(const json& j, FinetuneConfig& c) {
  Fields f(j, "finetune");
  f.read_with("strategy", c.strategy, [](const std::string& s) { return parse_strategy(s); });
  f.read("learning_rate_grid", c.learning_rate_grid);
  f.read("max_epochs", c.max_epochs);
  f.read("patience", c.patience);
  f.read("batch_size", c.batch_size);
  f.read("freeze_encoder", c.freeze_encoder);
  f.read("prompt_learning", c.prompt_learning);
  f.read("beta1", c.beta1);
  f.read("beta2", c.beta2);
  f.read("epsilon", c.epsilon);
  f.read("seed", c.seed);
  f.finish();
}

void to_json(json& j, const ExperimentMatrix& c) {
  j = {{"shots", c.shots}, {"variants", c.variants}, {"runs", c.runs}, {"base_seed", c.base_seed}};
}

void from_json(const json& j, ExperimentMatrix& c) {
  Fields f(j, "eval");
  f.read("shots", c.shots);
  f.read("variants", c.variants);
  f.read("runs", c.runs);
  f.read("base_seed", c.base_seed);
  f.finish();
}

void to_json(json& j, const RunConfig& c) {
  j = {{"corpus", c.corpus},     {"tokenizer", c.tokenizer}, {"model", c.model},
       {"pretrain", c.pretrain}, {"finetune", c.finetune},   {"eval", c.eval}};
  if (c.seed) j["seed"] = *c.seed;
}

void from_json(const json& j, RunConfig& c) {
  Fields f(j, "root");
  f.skip("corpus");
  f.skip("tokenizer");
  f.skip("model");
  f.skip("pretrain");
  f.skip("finetune");
  f.skip("eval");
  std::uint64_t seed = 0;
  if (j.contains("seed") && !j.at("seed").is_null()) {
    f.read("seed", seed);
    c.seed = seed;
  } else {
    f.skip("seed");
  }
  f.finish();
  if (j.contains("corpus")) from_json(j.at("corpus"), c.corpus);
  if (j.contains("tokenizer")) from_json(j.at("tokenizer"), c.tokenizer);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("pretrain")) from_json(j.at("pretrain"), c.pretrain);
  if (j.contains("finetune")) from_json(j.at("finetune"), c.finetune);
  if (j.contains("eval")) from_json(j.at("eval"), c.eval);
}

void RunConfig::apply_seed() {
  if (!seed) return;
  corpus.seed = *seed;
  pretrain.seed = *seed;
  finetune.seed = *seed;
  eval.base_seed = *seed;
}

json parse_ini(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream stream(text);
  try {
    boost::property_tree::ini_parser::read_ini(stream, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw_config(fmt::format("config line {}: {}", e.line(), e.message()));
  }
  json out = json::object();
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      out[key] = ini_value(node.data());
      continue;
    }
    json section = json::object();
    for (const auto& [name, leaf] : node) section[name] = ini_value(leaf.data());
    out[key] = std::move(section);
  }
  return out;
}

json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw_config(fmt::format("{}: {}", what, e.what()));
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_io(fmt::format("cannot open config '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  const json tree = path.extension() == ".json" ? parse_json_text(buffer.str(), path.string()) : parse_ini(buffer.str());
  RunConfig config;
  from_json(tree, config);
  return config;
}

}  // namespace relprompt
