#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace relprompt {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kCount = 5;
}  // namespace special

/// Lowercases, splits on whitespace and detaches leading/trailing ASCII
/// punctuation into single-character tokens.
std::vector<std::string> split_words(std::string_view text);

class Vocabulary {
 public:
  /// Throws Config when max_size < 6, Data when texts is empty.
  static Vocabulary build(std::span<const std::string> texts, std::size_t max_size, std::size_t min_freq);
  /// Specials followed by `tokens`; throws Data on duplicates or reserved names.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  /// Reads `token<TAB>id` lines; validates the special-token layout.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return id_to_token_.size(); }
  const std::string& token(TokenId id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
  /// UNK when absent.
  TokenId id(std::string_view token) const;
  /// Non-special tokens in id order.
  std::vector<std::string> regular_tokens() const;

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  /// SHA-256 over the serialized vocabulary file contents.
  std::string digest() const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

}  // namespace relprompt
