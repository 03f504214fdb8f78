#include "prefrank/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "json.hpp"
#include "prefrank/errors.hpp"

namespace prefrank {

namespace {

const char* kReservedNames[Vocabulary::kReservedCount] = {
    "<pad>", "<unk>", "<bos>", "<eos>", "<", ">", ",",
};

bool is_word_char(unsigned char c) {
    // Bytes >= 0x80 (UTF-8 continuation/multibyte) count as word characters
    // so accented titles stay one token per word.
    return std::isalnum(c) != 0 || c == '-' || c == '\'' || c >= 0x80;
}

}  // namespace

std::vector<std::string> split_tokens(std::string_view text) {
    std::vector<std::string> out;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (is_word_char(c)) {
            size_t j = i + 1;
            while (j < n && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
            out.emplace_back(text.substr(i, j - i));
            i = j;
        } else {
            out.emplace_back(1, text[i]);
            ++i;
        }
    }
    return out;
}

std::string join_tokens(const std::vector<std::string>& toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        const std::string& t = toks[i];
        if (i > 0) {
            const bool after_open = toks[i - 1] == "<";
            const bool before_glue = t == ">" || t == ",";
            if (!after_open && !before_glue) out += ' ';
        }
        out += t;
    }
    return out;
}

std::string normalize(std::string_view text) { return join_tokens(split_tokens(text)); }

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, int cap) {
    if (cap < kReservedCount) {
        throw ConfigError("vocab cap " + std::to_string(cap) + " is below the " +
                          std::to_string(kReservedCount) + " reserved tokens");
    }
    if (corpus.empty()) throw DataError("vocab build requires a non-empty corpus");

    std::map<std::string, int64_t> counts;
    for (const std::string& text : corpus) {
        for (std::string& tok : split_tokens(text)) counts[std::move(tok)] += 1;
    }

    Vocabulary v;
    v.id_to_token_.assign(kReservedNames, kReservedNames + kReservedCount);

    // Sort by descending count, lexicographic tie-break; deterministic for a
    // given corpus regardless of map iteration details.
    std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    for (const auto& [tok, count] : ranked) {
        if (static_cast<int>(v.id_to_token_.size()) >= cap) break;
        if (tok == "<" || tok == ">" || tok == ",") continue;  // already reserved
        v.id_to_token_.push_back(tok);
    }
    v.index_tokens();
    return v;
}

void Vocabulary::index_tokens() {
    token_to_id_.clear();
    for (int id = 0; id < static_cast<int>(id_to_token_.size()); ++id) {
        token_to_id_.emplace(id_to_token_[static_cast<size_t>(id)], id);
    }
}

int Vocabulary::token_id(std::string_view tok) const {
    const auto it = token_to_id_.find(std::string(tok));
    return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view tok) const {
    return token_to_id_.find(std::string(tok)) != token_to_id_.end();
}

void Vocabulary::save(const std::string& path) const {
    nlohmann::ordered_json j;
    j["reserved"] = {{"pad", kPad}, {"unk", kUnk}, {"bos", kBos}, {"eos", kEos},
                     {"open", kOpen}, {"close", kClose}, {"comma", kComma}};
    j["tokens"] = id_to_token_;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    out << j.dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read vocabulary file: " + path);
    nlohmann::json j;
    in >> j;
    Vocabulary v;
    v.id_to_token_ = j.at("tokens").get<std::vector<std::string>>();
    if (v.id_to_token_.size() < kReservedCount) {
        throw DataError("vocabulary file missing reserved tokens: " + path);
    }
    v.index_tokens();
    return v;
}

TokenSequence encode(const Vocabulary& vocab, std::string_view prompt,
                     std::string_view completion) {
    TokenSequence seq;
    seq.ids.push_back(Vocabulary::kBos);
    for (const std::string& tok : split_tokens(prompt)) seq.ids.push_back(vocab.token_id(tok));
    seq.prompt_len = static_cast<int>(seq.ids.size());
    for (const std::string& tok : split_tokens(completion)) seq.ids.push_back(vocab.token_id(tok));
    return seq;
}

std::string decode(const Vocabulary& vocab, const TokenSequence& seq) {
    std::vector<std::string> toks;
    toks.reserve(seq.ids.size());
    for (const int id : seq.ids) {
        if (id == Vocabulary::kBos || id == Vocabulary::kEos || id == Vocabulary::kPad) continue;
        toks.push_back(vocab.token(id));
    }
    return join_tokens(toks);
}

}  // namespace prefrank
