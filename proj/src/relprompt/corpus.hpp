#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace relprompt {

struct DialogueTurn {
  std::string query;
  std::string answer;
  bool has_answer = true;  // false when the record carries no answer
};

struct Session {
  std::string session_id;
  std::string user_id;
  std::int64_t timestamp = 0;
  std::vector<DialogueTurn> turns;
};

using IntentId = std::size_t;

struct LabeledQuery {
  std::string query;
  IntentId intent = 0;
};

class IntentSchema {
 public:
  IntentSchema() = default;
  /// Throws Config if fewer than two labels, an empty label or duplicates.
  explicit IntentSchema(std::vector<std::string> labels);

  std::size_t size() const { return labels_.size(); }
  const std::string& name(IntentId id) const { return labels_.at(id); }
  const std::vector<std::string>& labels() const { return labels_; }
  /// Throws Data naming the label when it is not part of the schema.
  IntentId id_of(const std::string& label) const;

 private:
  std::vector<std::string> labels_;
};

struct FewShotEpisode {
  std::vector<LabeledQuery> train;
  std::vector<LabeledQuery> validation;
  std::vector<LabeledQuery> test;
  std::uint64_t seed = 0;
  std::size_t shots = 0;
};

/// Minimum number of user turns a session needs to survive filtering.
inline constexpr std::size_t kMinSessionTurns = 3;

struct SessionLoadResult {
  std::vector<Session> sessions;
  std::size_t dropped_queries = 0;
  std::size_t dropped_sessions = 0;
};

/// Removes zero-length queries, then sessions with fewer than three turns.
SessionLoadResult filter_sessions(std::vector<Session> sessions);

/// Reads the line-delimited session file and applies filter_sessions.
SessionLoadResult load_sessions(const std::filesystem::path& path);
void save_sessions(const std::filesystem::path& path, const std::vector<Session>& sessions);

IntentSchema load_schema(const std::filesystem::path& path);
void save_schema(const std::filesystem::path& path, const IntentSchema& schema);

std::vector<LabeledQuery> load_labeled(const std::filesystem::path& path, const IntentSchema& schema);
void save_labeled(const std::filesystem::path& path, const std::vector<LabeledQuery>& data,
                  const IntentSchema& schema);

enum class Pairing { Adjacent, All };

/// Successor of turn i, or its predecessor when i is the last turn.
std::size_t select_partner(const Session& session, std::size_t turn);
/// Partner turns for turn i under the given pairing policy.
std::vector<std::size_t> partners(const Session& session, std::size_t turn, Pairing pairing);

/// K training queries per class; the rest of each class is split evenly
/// (seeded) between validation and test.
FewShotEpisode sample_episode(const std::vector<LabeledQuery>& data, const IntentSchema& schema,
                              std::size_t shots, std::uint64_t seed);

struct IntentTheme {
  std::string name;
  std::vector<std::string> words;
};

struct SyntheticCorpusSpec {
  std::size_t num_sessions = 3000;
  std::size_t min_turns = 1;
  std::size_t max_turns = 8;
  std::size_t min_query_tokens = 3;
  std::size_t max_query_tokens = 7;
  std::size_t min_answer_tokens = 4;
  std::size_t max_answer_tokens = 10;
  std::size_t num_intents = 6;
  std::vector<IntentTheme> themes;         // empty: first num_intents built-in themes
  std::vector<std::string> filler_words;   // empty: built-in filler vocabulary
  /// Pseudo-words appended to every intent pool and to the filler vocabulary,
  /// forming the low-frequency tail of a Zipf distribution over each pool.
  std::size_t tail_words_per_intent = 200;
  std::size_t tail_filler_words = 600;
  double zipf_exponent = 1.4;  // 0 = uniform over the pool
  double noise_rate = 0.4;
  double empty_query_rate = 0.03;
  double answer_name_rate = 0.25;
  std::size_t labeled_per_intent = 40;
  std::uint64_t seed = 7;

  /// Throws Config on empty ranges, rates outside [0,1] or empty pools.
  void validate() const;
  std::vector<IntentTheme> resolved_themes() const;
  std::vector<std::string> resolved_filler() const;
};

struct SyntheticCorpus {
  std::vector<Session> sessions;  // unfiltered, as written to disk
  std::vector<LabeledQuery> labeled;
  IntentSchema schema;
};

std::vector<IntentTheme> builtin_themes();
std::vector<std::string> builtin_filler_words();
/// Deterministic consonant-vowel pseudo-words; `offset` selects a disjoint block.
std::vector<std::string> pseudo_words(std::size_t offset, std::size_t count);

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec);

}  // namespace relprompt
