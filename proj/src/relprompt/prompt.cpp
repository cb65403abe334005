#include "relprompt/prompt.hpp"

#include "relprompt/error.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace relprompt {

const char* relation_tag(RelationKind kind) {
  switch (kind) {
    case RelationKind::QueryQuery: return "qq";
    case RelationKind::QueryAnswer: return "qa";
    case RelationKind::QueryIntent: return "qi";
  }
  return "??";
}

std::size_t PromptSequence::content_length() const {
  std::size_t n = elements.size();
  while (n > 0 && elements[n - 1].type == PromptElement::Type::Pad) --n;
  return n;
}

std::vector<bool> PromptSequence::pad_mask() const {
  std::vector<bool> mask(elements.size());
  for (std::size_t i = 0; i < elements.size(); ++i) mask[i] = elements[i].type == PromptElement::Type::Pad;
  return mask;
}

TruncationSplit split_budget(std::size_t left_len, std::size_t right_len, std::size_t budget) {
  if (left_len + right_len <= budget) return {left_len, right_len};
  const std::size_t left_share = (budget + 1) / 2;
  const std::size_t right_share = budget / 2;
  if (left_len < left_share) return {left_len, budget - left_len};
  if (right_len < right_share) return {budget - right_len, right_len};
  return {left_share, right_share};
}

namespace {

PromptSequence lay_out(std::span<const TokenId> left, std::span<const TokenId> right, RelationKind kind,
                       std::size_t m, std::size_t max_len) {
  PromptSequence prompt;
  prompt.elements.reserve(max_len);
  prompt.elements.push_back(PromptElement::cls());
  for (const auto id : left) prompt.elements.push_back(PromptElement::text(id));
  prompt.segment_boundary = prompt.elements.size();
  for (std::size_t j = 0; j < m; ++j) {
    prompt.elements.push_back(PromptElement::relation_slot(kind, static_cast<std::uint16_t>(j)));
  }
  prompt.relation_count = m;
  for (const auto id : right) prompt.elements.push_back(PromptElement::text(id));
  prompt.elements.push_back(PromptElement::sep());
  prompt.elements.resize(max_len, PromptElement::pad());
  return prompt;
}

}  // namespace

PromptSequence assemble_relation_prompt(std::span<const TokenId> left, RelationKind kind,
                                        std::span<const TokenId> right, std::size_t m, std::size_t max_len) {
  if (m == 0) throw_config("relation prompts need at least one relation token");
  if (max_len < m + 4) {
    throw_config(fmt::format("max_len {} cannot hold CLS, SEP, {} relation tokens and one token per side", max_len, m));
  }
  if (left.empty() || right.empty()) throw_data("relation prompt needs at least one text token on each side");
  const auto split = split_budget(left.size(), right.size(), max_len - 2 - m);
  return lay_out(left.first(split.left), right.first(split.right), kind, m, max_len);
}

PromptSequence assemble_intent_prompt(std::span<const TokenId> query, std::span<const TokenId> intent_name,
                                      std::size_t m, std::size_t max_len) {
  if (query.empty()) throw_data("intent prompt needs at least one query token");
  if (intent_name.empty()) throw_data("intent prompt needs a non-empty intent name");
  if (max_len < m + 4) {
    throw_config(fmt::format("max_len {} cannot hold CLS, SEP, {} relation tokens and one token per side", max_len, m));
  }
  const std::size_t budget = max_len - 2 - m;
  if (intent_name.size() + 1 > budget) {
    throw_data(fmt::format("intent name of {} tokens does not fit max_len {} with m={} (names are never truncated)",
                           intent_name.size(), max_len, m));
  }
  const std::size_t keep = std::min(query.size(), budget - intent_name.size());
  return lay_out(query.first(keep), intent_name, RelationKind::QueryIntent, m, max_len);
}

PromptSequence assemble_text_prompt(std::span<const TokenId> text, std::size_t max_len) {
  if (text.empty()) throw_data("text prompt needs at least one token");
  if (max_len < 3) throw_config("max_len must be at least 3");
  const std::size_t keep = std::min(text.size(), max_len - 2);
  return lay_out(text.first(keep), {}, RelationKind::QueryQuery, 0, max_len);
}

std::vector<std::size_t> maskable_positions(const PromptSequence& prompt) {
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < prompt.elements.size(); ++i) {
    if (prompt.elements[i].type == PromptElement::Type::Text) positions.push_back(i);
  }
  return positions;
}

std::string render_prompt(const PromptSequence& prompt, bool include_padding) {
  const std::size_t count = include_padding ? prompt.elements.size() : prompt.content_length();
  std::string out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& e = prompt.elements[i];
    if (i) out += ' ';
    switch (e.type) {
      case PromptElement::Type::Text: out += fmt::format("T{}", e.token); break;
      case PromptElement::Type::Relation: out += fmt::format("Z{}{}", relation_tag(e.relation), e.slot); break;
      case PromptElement::Type::Cls: out += "CLS"; break;
      case PromptElement::Type::Sep: out += "SEP"; break;
      case PromptElement::Type::Pad: out += "PAD"; break;
    }
  }
  return out;
}

void validate_prompt(const PromptSequence& prompt, std::size_t m, std::size_t max_len) {
  using Type = PromptElement::Type;
  const auto& el = prompt.elements;
  if (el.size() > max_len) throw_data(fmt::format("prompt length {} exceeds max_len {}", el.size(), max_len));
  if (el.empty() || el[0].type != Type::Cls) throw_data("prompt must start with CLS");
  const std::size_t content = prompt.content_length();
  if (content < 2 || el[content - 1].type != Type::Sep) throw_data("prompt must end with SEP before padding");
  std::size_t first_slot = el.size();
  std::size_t slots = 0;
  for (std::size_t i = 1; i + 1 < content; ++i) {
    switch (el[i].type) {
      case Type::Cls: throw_data(fmt::format("extra CLS at position {}", i));
      case Type::Sep: throw_data(fmt::format("extra SEP at position {}", i));
      case Type::Pad: throw_data(fmt::format("PAD inside prompt body at position {}", i));
      case Type::Relation:
        if (first_slot == el.size()) first_slot = i;
        if (i != first_slot + slots) throw_data("relation slots are not contiguous");
        if (el[i].slot != slots || el[i].relation != el[first_slot].relation) {
          throw_data(fmt::format("relation slot at position {} is out of order or of mixed kind", i));
        }
        ++slots;
        break;
      case Type::Text: break;
    }
  }
  if (slots != m) throw_data(fmt::format("prompt carries {} relation slots, expected {}", slots, m));
}

}  // namespace relprompt
