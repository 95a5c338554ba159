#pragma once
#include <string>
#include <unordered_map>
#include <vector>

#include "setfork/errors.hpp"

namespace setfork {

using TokenId = int;

// Closed token alphabet. Layout is fixed: PAD, BOS, EOS, ANSWER_SEP, then a
// contiguous block of N forking tokens, then the payload symbols.
class Vocab {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kBos = 1;
    static constexpr TokenId kEos = 2;
    static constexpr TokenId kAnswerSep = 3;
    static constexpr TokenId kThinkBase = 4;

    explicit Vocab(int n_forking);

    int size() const { return static_cast<int>(symbols_.size()); }
    int n_forking() const { return n_forking_; }

    // 1-based forking token index i -> token id of <think i>.
    TokenId think(int i) const;
    bool is_think(TokenId t) const { return t >= kThinkBase && t < kThinkBase + n_forking_; }

    const std::string& symbol(TokenId t) const;
    TokenId id(const std::string& symbol) const;
    bool has(const std::string& symbol) const { return by_name_.count(symbol) > 0; }

    // Encode a whitespace-separated symbol string; unknown symbols throw.
    std::vector<TokenId> encode(const std::string& text) const;
    std::string decode(const std::vector<TokenId>& tokens) const;

private:
    int n_forking_;
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, TokenId> by_name_;
};

}  // namespace setfork
