#pragma once

#include "relprompt/vocab.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace relprompt {

enum class RelationKind : std::uint8_t { QueryQuery = 0, QueryAnswer = 1, QueryIntent = 2 };

inline constexpr std::size_t kRelationKinds = 3;

/// "qq", "qa" or "qi".
const char* relation_tag(RelationKind kind);

struct PromptElement {
  enum class Type : std::uint8_t { Text, Relation, Cls, Sep, Pad };

  Type type = Type::Pad;
  TokenId token = special::kPad;  // Text: vocabulary id; specials: their reserved id
  RelationKind relation = RelationKind::QueryQuery;
  std::uint16_t slot = 0;  // Relation: index within the relation block

  static PromptElement text(TokenId id) { return {Type::Text, id, RelationKind::QueryQuery, 0}; }
  static PromptElement relation_slot(RelationKind kind, std::uint16_t index) {
    return {Type::Relation, special::kPad, kind, index};
  }
  static PromptElement cls() { return {Type::Cls, special::kCls, RelationKind::QueryQuery, 0}; }
  static PromptElement sep() { return {Type::Sep, special::kSep, RelationKind::QueryQuery, 0}; }
  static PromptElement pad() { return {Type::Pad, special::kPad, RelationKind::QueryQuery, 0}; }

  friend bool operator==(const PromptElement&, const PromptElement&) = default;
};

struct PromptSequence {
  std::vector<PromptElement> elements;
  /// Index of the first relation slot; for prompts without a relation block,
  /// the position right after the left text span.
  std::size_t segment_boundary = 0;
  std::size_t relation_count = 0;

  std::size_t size() const { return elements.size(); }
  /// Number of leading elements that are not PAD.
  std::size_t content_length() const;
  std::vector<bool> pad_mask() const;

  friend bool operator==(const PromptSequence&, const PromptSequence&) = default;
};

/// [CLS] left [Z_kind 0..m-1] right [SEP] [PAD...], length exactly max_len.
/// Over budget, both sides are cut from their tails; the remaining budget is
/// split evenly with the odd slot going to the left side.
PromptSequence assemble_relation_prompt(std::span<const TokenId> left, RelationKind kind,
                                        std::span<const TokenId> right, std::size_t m, std::size_t max_len);

/// [CLS] query [Z_qi 0..m-1] intent [SEP] [PAD...]. The intent-name tokens
/// are never truncated; m = 0 yields the plain concatenation.
PromptSequence assemble_intent_prompt(std::span<const TokenId> query, std::span<const TokenId> intent_name,
                                      std::size_t m, std::size_t max_len);

/// [CLS] text [SEP] [PAD...], the text-only layout used without relations.
PromptSequence assemble_text_prompt(std::span<const TokenId> text, std::size_t max_len);

/// Positions holding text tokens.
std::vector<std::size_t> maskable_positions(const PromptSequence& prompt);

/// Left/right text counts kept under the shared-budget truncation rule.
struct TruncationSplit {
  std::size_t left = 0;
  std::size_t right = 0;
};
TruncationSplit split_budget(std::size_t left_len, std::size_t right_len, std::size_t budget);

/// Debug rendering: `CLS T17 Zqq0 ... SEP PAD`. Trailing PAD elements are
/// omitted unless include_padding is set.
std::string render_prompt(const PromptSequence& prompt, bool include_padding = true);

/// Checks the structural invariants; throws Data describing the first violation.
void validate_prompt(const PromptSequence& prompt, std::size_t m, std::size_t max_len);

}  // namespace relprompt
