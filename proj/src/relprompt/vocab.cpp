#include "relprompt/vocab.hpp"

#include "relprompt/error.hpp"
#include "relprompt/hashing.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace relprompt {

namespace {

constexpr std::array<std::string_view, special::kCount> kSpecialNames = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                                          "[MASK]"};

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t end = i;
    while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
    if (end == i) break;
    std::string word(text.substr(i, end - i));
    for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::size_t lead = 0;
    while (lead < word.size() && is_punct(word[lead])) ++lead;
    std::size_t trail = word.size();
    while (trail > lead && is_punct(word[trail - 1])) --trail;
    for (std::size_t p = 0; p < lead; ++p) words.emplace_back(1, word[p]);
    if (trail > lead) words.push_back(word.substr(lead, trail - lead));
    for (std::size_t p = std::max(trail, lead); p < word.size(); ++p) words.emplace_back(1, word[p]);
    i = end;
  }
  return words;
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t max_size, std::size_t min_freq) {
  if (max_size < special::kCount + 1) {
    throw_config(fmt::format("vocabulary max_size must be at least {}, got {}", special::kCount + 1, max_size));
  }
  if (texts.empty()) throw_data("cannot build a vocabulary from an empty text collection");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& word : split_words(text)) ++counts[std::move(word)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [word, count] : counts) {
    if (count >= std::max<std::size_t>(min_freq, 1)) ranked.emplace_back(word, count);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_size - special::kCount) ranked.resize(max_size - special::kCount);
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& entry : ranked) tokens.push_back(std::move(entry.first));
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary vocab;
  for (const auto name : kSpecialNames) vocab.id_to_token_.emplace_back(name);
  for (auto& token : tokens) vocab.id_to_token_.push_back(std::move(token));
  for (std::size_t i = 0; i < vocab.id_to_token_.size(); ++i) {
    const auto& token = vocab.id_to_token_[i];
    if (token.empty()) throw_data("vocabulary contains an empty token");
    if (!vocab.token_to_id_.emplace(token, static_cast<TokenId>(i)).second) {
      throw_data(fmt::format("vocabulary token '{}' appears twice", token));
    }
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_io(fmt::format("cannot open vocabulary '{}'", path.string()));
  std::vector<std::string> tokens;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw_data(fmt::format("{}:{}: expected token<TAB>id", path.string(), line_number + 1));
    }
    const std::string token = line.substr(0, tab);
    TokenId id = -1;
    const auto* first = line.data() + tab + 1;
    const auto* last = line.data() + line.size();
    const auto parsed = std::from_chars(first, last, id);
    if (parsed.ec != std::errc{} || parsed.ptr != last || id != static_cast<TokenId>(line_number)) {
      throw_data(fmt::format("{}:{}: ids must be consecutive from 0", path.string(), line_number + 1));
    }
    if (line_number < special::kCount) {
      if (token != kSpecialNames[line_number]) {
        throw_data(fmt::format("{}:{}: expected special token {} at id {}", path.string(), line_number + 1,
                               kSpecialNames[line_number], line_number));
      }
    } else {
      tokens.push_back(token);
    }
    ++line_number;
  }
  if (line_number < special::kCount + 1) {
    throw_data(fmt::format("{}: vocabulary needs the 5 specials and at least one token", path.string()));
  }
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_io(fmt::format("cannot open '{}' for writing", path.string()));
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\t' << i << '\n';
}

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? special::kUnk : it->second;
}

std::vector<std::string> Vocabulary::regular_tokens() const {
  return {id_to_token_.begin() + special::kCount, id_to_token_.end()};
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& word : split_words(text)) {
    const auto it = token_to_id_.find(word);
    ids.push_back(it == token_to_id_.end() || it->second < special::kCount ? special::kUnk : it->second);
  }
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string text;
  for (const auto id : ids) {
    if (!text.empty()) text += ' ';
    text += id >= 0 && static_cast<std::size_t>(id) < size() ? id_to_token_[static_cast<std::size_t>(id)]
                                                             : std::string(kSpecialNames[special::kUnk]);
  }
  return text;
}

std::string Vocabulary::digest() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\t' << i << '\n';
  return sha256_hex(out.str());
}

}  // namespace relprompt
