#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace prefrank {

// Encoded prompt + completion. Tokens at index >= prompt_len form the
// completion region; everything before it is conditioning context.
struct TokenSequence {
    std::vector<int> ids;
    int prompt_len = 0;

    int length() const { return static_cast<int>(ids.size()); }
    int completion_len() const { return length() - prompt_len; }
};

// Word-level vocabulary with fixed reserved ids. "<" and ">" wrap item
// titles and are always standalone tokens so per-token probabilities of
// title words stay interpretable.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kOpen = 4;   // "<"
    static constexpr int kClose = 5;  // ">"
    static constexpr int kComma = 6;  // ","
    static constexpr int kReservedCount = 7;

    // Frequency-ranked build over a corpus, truncated to `cap` total entries
    // (reserved tokens included in the count). Ties break lexicographically.
    static Vocabulary build(const std::vector<std::string>& corpus, int cap);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int token_id(std::string_view tok) const;
    const std::string& token(int id) const { return id_to_token_.at(static_cast<size_t>(id)); }
    bool contains(std::string_view tok) const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    const std::vector<std::string>& tokens() const { return id_to_token_; }

private:
    Vocabulary() = default;
    void index_tokens();

    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// Splits text into word and punctuation tokens. Runs of alphanumerics
// (plus '-' and ''' inside words) form one token; any other non-space
// character is its own token.
std::vector<std::string> split_tokens(std::string_view text);

// Canonical rendering of a token stream: single spaces between tokens,
// except no space after "<", before ">", or before ",". normalize() is the
// fixed point of encode/decode on UNK-free text.
std::string join_tokens(const std::vector<std::string>& toks);
std::string normalize(std::string_view text);

// Encodes prompt + completion into one sequence. A BOS token is always
// prepended, so the prompt region is never empty and the first completion
// token has a conditioning position.
TokenSequence encode(const Vocabulary& vocab, std::string_view prompt,
                     std::string_view completion = {});

std::string decode(const Vocabulary& vocab, const TokenSequence& seq);

}  // namespace prefrank
