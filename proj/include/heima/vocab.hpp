#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "heima/common.hpp"

namespace heima {

// Reserved structural symbols.
inline constexpr std::string_view kBos = "<BOS>";
inline constexpr std::string_view kEos = "<EOS>";
inline constexpr std::string_view kImgOpen = "<IMG>";
inline constexpr std::string_view kImgClose = "</IMG>";
inline constexpr std::string_view kAnswerOpen = "<ANSWER>";
inline constexpr std::string_view kAnswerClose = "</ANSWER>";

std::string stage_open_symbol(std::string_view stage_name);   // "<SUMMARY>"
std::string stage_close_symbol(std::string_view stage_name);  // "</SUMMARY>"
std::string thinking_symbol(std::string_view stage_name);     // "<Thinking_of_Summary>"

/// Everything a generated sample or prompt may contain, grouped by category.
/// Category order is fixed; build_vocab sorts lexicographically within each.
struct TaskGrammar {
    std::vector<std::string> structural;
    std::vector<std::string> colors;
    std::vector<std::string> shapes;
    std::vector<std::string> objects;
    std::vector<std::string> coordinates;
    std::vector<std::string> digits;
    std::vector<std::string> words;
};

enum class ThinkingMode { fixed_count, retention_ratio };

struct ThinkingTokenSpec {
    std::vector<std::string> stage_names{"Summary", "Caption", "Reasoning"};
    int tokens_per_stage = 1;
    ThinkingMode mode = ThinkingMode::fixed_count;
    double ratio = 1.0;

    int stages() const { return static_cast<int>(stage_names.size()); }
    void validate() const;
};

/// Closed word-level vocabulary. Immutable once built; ids are contiguous from 0.
class Vocab {
public:
    static Vocab build(const TaskGrammar& grammar);

    std::size_t size() const { return symbols_.size(); }
    const std::vector<std::string>& symbols() const { return symbols_; }

    bool contains(std::string_view symbol) const;
    std::optional<TokenId> find(std::string_view symbol) const;
    TokenId id(std::string_view symbol) const;
    const std::string& symbol(TokenId id) const;

    std::vector<TokenId> encode(std::span<const std::string> symbols) const;
    std::vector<std::string> decode(std::span<const TokenId> ids) const;

    TokenId bos() const { return id(kBos); }
    TokenId eos() const { return id(kEos); }
    TokenId answer_open() const { return id(kAnswerOpen); }
    TokenId answer_close() const { return id(kAnswerClose); }

    const std::vector<TokenId>& reserved() const { return reserved_; }
    bool is_reserved(TokenId id) const;

    const std::vector<TokenId>& thinking_ids() const { return thinking_ids_; }
    bool has_thinking_tokens() const { return !thinking_ids_.empty(); }
    /// Zero-based stage index of a thinking id, if it is one.
    std::optional<int> thinking_stage(TokenId id) const;

    std::string digest() const;
    std::string to_text() const;
    static Vocab from_text(std::string_view text);
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

    friend Vocab register_thinking_tokens(const Vocab& base, const ThinkingTokenSpec& spec);

private:
    void append(const std::string& symbol);

    std::vector<std::string> symbols_;
    std::unordered_map<std::string, TokenId> id_of_;
    std::vector<TokenId> reserved_;
    std::vector<TokenId> thinking_ids_;
};

Vocab build_vocab(const TaskGrammar& grammar);

/// Appends one thinking token per stage after all base ids.
Vocab register_thinking_tokens(const Vocab& base, const ThinkingTokenSpec& spec);

}  // namespace heima
