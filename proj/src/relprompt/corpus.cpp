#include "relprompt/corpus.hpp"

#include "relprompt/error.hpp"
#include "relprompt/rng.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

namespace relprompt {

using nlohmann::json;

namespace {

bool is_blank(const std::string& text) {
  return std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_io(fmt::format("cannot open '{}' for reading", path.string()));
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_io(fmt::format("cannot open '{}' for writing", path.string()));
  return out;
}

Session parse_session(const std::string& line, std::size_t line_number, const std::string& file) {
  try {
    const json record = json::parse(line);
    Session session;
    session.session_id = record.at("session_id").get<std::string>();
    session.user_id = record.at("user_id").get<std::string>();
    session.timestamp = record.at("timestamp").get<std::int64_t>();
    for (const auto& turn : record.at("turns")) {
      DialogueTurn t;
      t.query = turn.at("query").get<std::string>();
      const auto answer = turn.find("answer");
      if (answer == turn.end() || answer->is_null()) {
        t.has_answer = false;
      } else {
        t.answer = answer->get<std::string>();
        t.has_answer = !is_blank(t.answer);
      }
      session.turns.push_back(std::move(t));
    }
    return session;
  } catch (const json::exception& e) {
    throw_data(fmt::format("{}:{}: malformed session record: {}", file, line_number, e.what()));
  }
}

}  // namespace

IntentSchema::IntentSchema(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.size() < 2) throw_config("intent schema needs at least 2 labels");
  std::set<std::string> seen;
  for (const auto& label : labels_) {
    if (label.empty() || is_blank(label)) throw_config("intent schema contains an empty label");
    if (!seen.insert(label).second) throw_config(fmt::format("duplicate intent label '{}'", label));
  }
}

IntentId IntentSchema::id_of(const std::string& label) const {
  const auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw_data(fmt::format("intent '{}' is not in the schema", label));
  return static_cast<IntentId>(it - labels_.begin());
}

SessionLoadResult filter_sessions(std::vector<Session> sessions) {
  SessionLoadResult result;
  for (auto& session : sessions) {
    const auto before = session.turns.size();
    std::erase_if(session.turns, [](const DialogueTurn& t) { return is_blank(t.query); });
    result.dropped_queries += before - session.turns.size();
    if (session.turns.size() < kMinSessionTurns) {
      ++result.dropped_sessions;
      continue;
    }
    result.sessions.push_back(std::move(session));
  }
  return result;
}

SessionLoadResult load_sessions(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<Session> raw;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (is_blank(line)) continue;
    raw.push_back(parse_session(line, line_number, path.string()));
  }
  auto result = filter_sessions(std::move(raw));
  if (result.sessions.empty()) {
    throw_data(fmt::format("empty corpus: no session in '{}' has {} or more non-empty queries", path.string(),
                           kMinSessionTurns));
  }
  return result;
}

void save_sessions(const std::filesystem::path& path, const std::vector<Session>& sessions) {
  auto out = open_output(path);
  for (const auto& session : sessions) {
    json turns = json::array();
    for (const auto& t : session.turns) {
      json turn = {{"query", t.query}};
      turn["answer"] = t.has_answer ? json(t.answer) : json(nullptr);
      turns.push_back(std::move(turn));
    }
    json record = {{"session_id", session.session_id},
                   {"user_id", session.user_id},
                   {"timestamp", session.timestamp},
                   {"turns", std::move(turns)}};
    out << record.dump() << '\n';
  }
}

IntentSchema load_schema(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    const json doc = json::parse(in);
    return IntentSchema(doc.get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw_data(fmt::format("{}: schema must be a JSON array of strings: {}", path.string(), e.what()));
  }
}

void save_schema(const std::filesystem::path& path, const IntentSchema& schema) {
  auto out = open_output(path);
  out << json(schema.labels()).dump() << '\n';
}

std::vector<LabeledQuery> load_labeled(const std::filesystem::path& path, const IntentSchema& schema) {
  auto in = open_input(path);
  std::vector<LabeledQuery> data;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (is_blank(line)) continue;
    try {
      const json record = json::parse(line);
      LabeledQuery q;
      q.query = record.at("query").get<std::string>();
      q.intent = schema.id_of(record.at("intent").get<std::string>());
      data.push_back(std::move(q));
    } catch (const json::exception& e) {
      throw_data(fmt::format("{}:{}: malformed labeled record: {}", path.string(), line_number, e.what()));
    } catch (const Error& e) {
      throw_data(fmt::format("{}:{}: {}", path.string(), line_number, e.what()));
    }
  }
  if (data.empty()) throw_data(fmt::format("'{}' contains no labeled queries", path.string()));
  return data;
}

void save_labeled(const std::filesystem::path& path, const std::vector<LabeledQuery>& data,
                  const IntentSchema& schema) {
  auto out = open_output(path);
  for (const auto& q : data) {
    out << json{{"query", q.query}, {"intent", schema.name(q.intent)}}.dump() << '\n';
  }
}

std::size_t select_partner(const Session& session, std::size_t turn) {
  return turn + 1 < session.turns.size() ? turn + 1 : turn - 1;
}

std::vector<std::size_t> partners(const Session& session, std::size_t turn, Pairing pairing) {
  if (pairing == Pairing::Adjacent) return {select_partner(session, turn)};
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < session.turns.size(); ++j) {
    if (j != turn) out.push_back(j);
  }
  return out;
}

FewShotEpisode sample_episode(const std::vector<LabeledQuery>& data, const IntentSchema& schema,
                              std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw_config("shots must be at least 1");
  std::vector<std::vector<std::size_t>> by_class(schema.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].intent >= schema.size()) throw_data(fmt::format("labeled query {} has intent id out of range", i));
    by_class[data[i].intent].push_back(i);
  }
  for (IntentId c = 0; c < schema.size(); ++c) {
    if (by_class[c].size() < shots + 2) {
      throw_data(fmt::format("intent '{}' has {} labeled queries; {}-shot sampling needs at least {}", schema.name(c),
                             by_class[c].size(), shots, shots + 2));
    }
  }
  FewShotEpisode episode;
  episode.seed = seed;
  episode.shots = shots;
  const Rng base(seed);
  for (IntentId c = 0; c < schema.size(); ++c) {
    auto indices = by_class[c];
    Rng rng = base.fork(c);
    rng.shuffle(std::span(indices));
    const std::size_t remainder = indices.size() - shots;
    const std::size_t validation = remainder / 2;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& q = data[indices[i]];
      if (i < shots) {
        episode.train.push_back(q);
      } else if (i < shots + validation) {
        episode.validation.push_back(q);
      } else {
        episode.test.push_back(q);
      }
    }
  }
  return episode;
}

std::vector<IntentTheme> builtin_themes() {
  return {
      {"code", {"loop", "bug", "compile", "python", "function", "variable", "array", "debug", "syntax", "script",
                "class", "pointer", "library", "runtime", "recursion", "stack", "compiler", "integer", "regex",
                "api"}},
      {"writing", {"essay", "poem", "story", "paragraph", "sentence", "rewrite", "grammar", "novel", "chapter",
                   "verse", "rhyme", "draft", "headline", "metaphor", "narrator", "prose", "outline", "plot",
                   "author", "tone"}},
      {"travel", {"flight", "hotel", "visa", "passport", "airport", "luggage", "itinerary", "beach", "museum",
                  "tour", "train", "destination", "booking", "resort", "island", "cruise", "backpack", "ticket",
                  "border", "hostel"}},
      {"cooking", {"recipe", "bake", "oven", "flour", "sauce", "garlic", "boil", "fry", "dough", "spice",
                   "noodle", "soup", "grill", "butter", "onion", "dessert", "knead", "potato", "roast", "simmer"}},
      {"health", {"fever", "headache", "doctor", "symptom", "medicine", "sleep", "vitamin", "diet", "cough",
                  "allergy", "pain", "injury", "therapy", "blood", "pressure", "clinic", "dose", "infection",
                  "muscle", "fatigue"}},
      {"finance", {"stock", "loan", "mortgage", "tax", "invest", "budget", "interest", "credit", "bank", "savings",
                   "dividend", "salary", "debt", "pension", "fund", "inflation", "portfolio", "bond", "profit",
                   "insurance"}},
      {"music", {"guitar", "piano", "chord", "melody", "song", "lyrics", "album", "drum", "concert", "tempo",
                 "violin", "band", "singer", "rhythm", "jazz", "note", "scale", "playlist", "harmony", "bass"}},
      {"sports", {"football", "soccer", "goal", "match", "team", "coach", "tennis", "league", "player", "score",
                  "referee", "stadium", "marathon", "workout", "basketball", "tournament", "medal", "sprint",
                  "season", "penalty"}},
      {"shopping", {"discount", "order", "delivery", "refund", "cart", "coupon", "price", "store", "brand",
                    "return", "shipping", "sale", "checkout", "size", "receipt", "warranty", "gift", "seller",
                    "bargain", "catalog"}},
      {"education", {"exam", "homework", "teacher", "lecture", "course", "grade", "study", "university", "thesis",
                     "tutor", "syllabus", "semester", "quiz", "degree", "scholarship", "textbook", "campus",
                     "professor", "diploma", "enroll"}},
      {"weather", {"rain", "forecast", "storm", "snow", "temperature", "wind", "sunny", "cloud", "humidity",
                   "thunder", "umbrella", "climate", "frost", "heatwave", "drizzle", "hurricane", "fog", "celsius",
                   "tornado", "monsoon"}},
      {"legal", {"contract", "lawyer", "court", "lawsuit", "copyright", "license", "tenant", "landlord", "divorce",
                 "judge", "clause", "liability", "patent", "trademark", "custody", "statute", "verdict", "appeal",
                 "attorney", "fine"}},
  };
}

std::vector<std::string> builtin_filler_words() {
  return {"please", "how", "can", "you", "help", "me", "what", "is", "the", "a", "my", "i", "need", "want", "to",
          "with", "for", "about", "some", "quick", "do", "does", "why", "again", "thanks", "tell", "explain",
          "show", "give", "best", "good", "way", "now", "today", "just", "really", "more", "it", "this", "that",
          "of", "in", "on", "and", "or", "maybe", "still", "ok", "hi", "hello"};
}

void SyntheticCorpusSpec::validate() const {
  if (min_turns == 0 || min_turns > max_turns) throw_config("turns_per_session range is empty");
  if (min_query_tokens == 0 || min_query_tokens > max_query_tokens) throw_config("query length range is empty");
  if (min_answer_tokens == 0 || min_answer_tokens > max_answer_tokens) throw_config("answer length range is empty");
  for (const double rate : {noise_rate, empty_query_rate, answer_name_rate}) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw_config("synthetic corpus rates must lie in [0,1]");
  }
  const auto themes_used = resolved_themes();
  if (themes_used.size() < 2) throw_config("synthetic corpus needs at least 2 intents");
  for (const auto& theme : themes_used) {
    if (theme.words.empty()) throw_config(fmt::format("word pool for intent '{}' is empty", theme.name));
  }
  if (noise_rate > 0.0 && resolved_filler().empty()) throw_config("filler vocabulary is empty");
  if (labeled_per_intent == 0) throw_config("labeled_per_intent must be at least 1");
}

std::vector<IntentTheme> SyntheticCorpusSpec::resolved_themes() const {
  if (!themes.empty()) return themes;
  auto all = builtin_themes();
  if (num_intents > all.size()) {
    throw_config(fmt::format("only {} built-in intent themes exist; {} requested", all.size(), num_intents));
  }
  all.resize(num_intents);
  return all;
}

std::vector<std::string> SyntheticCorpusSpec::resolved_filler() const {
  return filler_words.empty() ? builtin_filler_words() : filler_words;
}

std::vector<std::string> pseudo_words(std::size_t offset, std::size_t count) {
  static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  constexpr std::size_t kSyllables = kConsonants.size() * kVowels.size();
  constexpr std::size_t kSpace = kSyllables * kSyllables * kSyllables;
  std::vector<std::string> words;
  words.reserve(count);
  for (std::size_t i = offset; i < offset + count; ++i) {
    // 7919 is coprime with kSpace, so distinct indices give distinct words.
    std::size_t code = (i * 7919 + 12345) % kSpace;
    std::string word;
    for (int s = 0; s < 3; ++s) {
      const std::size_t syllable = code % kSyllables;
      code /= kSyllables;
      word += kConsonants[syllable % kConsonants.size()];
      word += kVowels[syllable / kConsonants.size()];
    }
    words.push_back(std::move(word));
  }
  return words;
}

namespace {

std::size_t uniform_in(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.below(static_cast<std::uint32_t>(hi - lo + 1));
}

/// Word list with Zipf-distributed sampling by rank.
class ZipfPool {
 public:
  ZipfPool(std::vector<std::string> words, double exponent) : words_(std::move(words)) {
    double total = 0.0;
    for (std::size_t r = 0; r < words_.size(); ++r) {
      total += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
      cumulative_.push_back(total);
    }
    for (double& c : cumulative_) c /= total;
  }

  const std::string& draw(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return words_[std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), words_.size() - 1)];
  }

 private:
  std::vector<std::string> words_;
  std::vector<double> cumulative_;
};

struct ThemePools {
  std::string name;
  ZipfPool words;
};

std::string make_query(Rng& rng, const SyntheticCorpusSpec& spec, const ThemePools& theme, const ZipfPool& filler) {
  const auto length = uniform_in(rng, spec.min_query_tokens, spec.max_query_tokens);
  std::string text;
  for (std::size_t i = 0; i < length; ++i) {
    if (i) text += ' ';
    text += rng.bernoulli(spec.noise_rate) ? filler.draw(rng) : theme.words.draw(rng);
  }
  return text;
}

std::string make_answer(Rng& rng, const SyntheticCorpusSpec& spec, const ThemePools& theme, const ZipfPool& filler) {
  const auto length = uniform_in(rng, spec.min_answer_tokens, spec.max_answer_tokens);
  std::string text;
  for (std::size_t i = 0; i < length; ++i) {
    if (i) text += ' ';
    if (rng.bernoulli(spec.answer_name_rate)) {
      text += theme.name;
    } else if (rng.bernoulli(spec.noise_rate)) {
      text += filler.draw(rng);
    } else {
      text += theme.words.draw(rng);
    }
  }
  return text;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  const auto resolved = spec.resolved_themes();
  std::vector<std::string> names;
  std::vector<ThemePools> themes;
  for (std::size_t c = 0; c < resolved.size(); ++c) {
    auto words = resolved[c].words;
    for (auto& w : pseudo_words(c * spec.tail_words_per_intent, spec.tail_words_per_intent)) words.push_back(std::move(w));
    names.push_back(resolved[c].name);
    themes.push_back({resolved[c].name, ZipfPool(std::move(words), spec.zipf_exponent)});
  }
  auto filler_words = spec.resolved_filler();
  for (auto& w : pseudo_words(100000, spec.tail_filler_words)) filler_words.push_back(std::move(w));
  const ZipfPool filler(std::move(filler_words), spec.zipf_exponent);

  SyntheticCorpus corpus;
  corpus.schema = IntentSchema(names);

  const Rng root(spec.seed);
  Rng session_rng = root.fork(1);
  for (std::size_t s = 0; s < spec.num_sessions; ++s) {
    Session session;
    session.session_id = fmt::format("s{:06d}", s);
    session.user_id = fmt::format("u{:05d}", session_rng.below(1000));
    session.timestamp = 1700000000 + static_cast<std::int64_t>(s) * 37;
    const auto& theme = themes[session_rng.below(static_cast<std::uint32_t>(themes.size()))];
    const auto turns = uniform_in(session_rng, spec.min_turns, spec.max_turns);
    for (std::size_t t = 0; t < turns; ++t) {
      DialogueTurn turn;
      turn.query = session_rng.bernoulli(spec.empty_query_rate) ? std::string{}
                                                                 : make_query(session_rng, spec, theme, filler);
      turn.answer = make_answer(session_rng, spec, theme, filler);
      session.turns.push_back(std::move(turn));
    }
    corpus.sessions.push_back(std::move(session));
  }

  Rng label_rng = root.fork(2);
  std::unordered_set<std::string> seen;
  for (IntentId c = 0; c < themes.size(); ++c) {
    std::size_t produced = 0;
    std::size_t attempts = 0;
    while (produced < spec.labeled_per_intent) {
      if (++attempts > spec.labeled_per_intent * 1000) {
        throw_config(fmt::format("cannot draw {} distinct queries for intent '{}'", spec.labeled_per_intent,
                                 names[c]));
      }
      auto text = make_query(label_rng, spec, themes[c], filler);
      if (!seen.insert(text).second) continue;
      corpus.labeled.push_back({std::move(text), c});
      ++produced;
    }
  }
  label_rng.shuffle(std::span(corpus.labeled));
  return corpus;
}

}  // namespace relprompt
