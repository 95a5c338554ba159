#include "setfork/vocab.hpp"

#include <sstream>

namespace setfork {

namespace {
// Payload alphabet shared by every task family and reasoning style.
const char* kPayload[] = {
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "+", "*", "mod", "=", "(", ")", ";",
    "Q:", "odd", "even", "digitsum",
    "step", "so", "flip", "sort", "check", "fill",
};
}  // namespace

Vocab::Vocab(int n_forking) : n_forking_(n_forking) {
    if (n_forking < 1) throw ConfigError("vocab: n_forking must be >= 1");
    symbols_ = {"<pad>", "<bos>", "<eos>", "<ans>"};
    for (int i = 1; i <= n_forking; ++i) {
        symbols_.push_back("<think" + std::to_string(i) + ">");
    }
    for (const char* s : kPayload) symbols_.push_back(s);
    for (int t = 0; t < static_cast<int>(symbols_.size()); ++t) {
        if (!by_name_.emplace(symbols_[t], t).second) {
            throw ConfigError("vocab: duplicate symbol " + symbols_[t]);
        }
    }
}

TokenId Vocab::think(int i) const {
    if (i < 1 || i > n_forking_) {
        throw ConfigError("vocab: forking index out of range: " + std::to_string(i));
    }
    return kThinkBase + i - 1;
}

const std::string& Vocab::symbol(TokenId t) const {
    if (t < 0 || t >= size()) throw RunError("vocab: token id out of range: " + std::to_string(t));
    return symbols_[t];
}

TokenId Vocab::id(const std::string& symbol) const {
    auto it = by_name_.find(symbol);
    if (it == by_name_.end()) throw RunError("vocab: unknown symbol " + symbol);
    return it->second;
}

std::vector<TokenId> Vocab::encode(const std::string& text) const {
    std::vector<TokenId> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) out.push_back(id(w));
    return out;
}

std::string Vocab::decode(const std::vector<TokenId>& tokens) const {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += symbol(tokens[i]);
    }
    return out;
}

}  // namespace setfork
