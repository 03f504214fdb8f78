#include "prefrank/datapipe.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "prefrank/errors.hpp"
#include "prefrank/rng.hpp"

namespace prefrank {

namespace {

using ojson = nlohmann::ordered_json;

std::vector<std::string> split_on(const std::string& line, const std::string& delim) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
        const size_t at = line.find(delim, start);
        if (at == std::string::npos) {
            parts.push_back(line.substr(start));
            break;
        }
        parts.push_back(line.substr(start, at - start));
        start = at + delim.size();
    }
    return parts;
}

void replace_all(std::string& text, const std::string& from, const std::string& to) {
    size_t at = 0;
    while ((at = text.find(from, at)) != std::string::npos) {
        text.replace(at, from.size(), to);
        at += to.size();
    }
}

// Titles are delimited with <> downstream, so those characters (and hard
// whitespace) cannot survive inside a title.
std::string sanitize_title(std::string title) {
    std::string out;
    out.reserve(title.size());
    for (const char c : title) {
        if (c == '<' || c == '>') continue;
        out.push_back(c == '\t' || c == '\n' || c == '\r' ? ' ' : c);
    }
    // trim outer whitespace
    const size_t a = out.find_first_not_of(' ');
    if (a == std::string::npos) return "";
    const size_t b = out.find_last_not_of(' ');
    return out.substr(a, b - a + 1);
}

std::string latin1_to_utf8(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (const unsigned char c : s) {
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back(static_cast<char>(0xC0 | (c >> 6)));
            out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
        }
    }
    return out;
}

double parse_rating(const std::string& field, const std::string& where) {
    try {
        size_t used = 0;
        const double r = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument("trailing junk");
        return r;
    } catch (const std::exception&) {
        throw DataError(where + ": unparseable rating '" + field + "'");
    }
}

int64_t parse_timestamp(const std::string& field, const std::string& where) {
    try {
        size_t used = 0;
        const int64_t t = std::stoll(field, &used);
        if (used != field.size()) throw std::invalid_argument("trailing junk");
        return t;
    } catch (const std::exception&) {
        throw DataError(where + ": unparseable timestamp '" + field + "'");
    }
}

void check_event(const InteractionEvent& ev, const std::string& where) {
    if (ev.rating < 1.0 || ev.rating > 5.0) {
        std::ostringstream msg;
        msg << where << ": rating " << ev.rating << " outside [1,5] (user " << ev.user_id
            << ", item '" << ev.item_title << "')";
        throw DataError(msg.str());
    }
    if (ev.item_title.empty()) {
        throw DataError(where + ": empty item title (user " + ev.user_id + ")");
    }
    if (ev.user_id.empty()) {
        throw DataError(where + ": empty user id");
    }
}

std::string wrap(const std::string& title) { return "<" + title + ">"; }

// All <...> spans of a rendered string, in order.
std::vector<std::string> extract_titles(const std::string& text) {
    std::vector<std::string> titles;
    size_t at = 0;
    while ((at = text.find('<', at)) != std::string::npos) {
        const size_t end = text.find('>', at + 1);
        if (end == std::string::npos) break;
        titles.push_back(text.substr(at + 1, end - at - 1));
        at = end + 1;
    }
    return titles;
}

// Distinct titles with the given label, most recent first.
std::vector<std::string> distinct_recent(const UserHistory& h, Label label) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (auto it = h.items.rbegin(); it != h.items.rend(); ++it) {
        if (it->label != label) continue;
        if (!seen.insert(it->item_title).second) continue;
        out.push_back(it->item_title);
    }
    return out;
}

}  // namespace

// --- templates -----------------------------------------------------------

PromptTemplate PromptTemplate::builtin() {
    PromptTemplate t;
    t.text =
        "{role} Here is the user's history of items they have interacted with: "
        "{history}. Rank the likelihood of the user choosing the two items\n{candidates}";
    return t;
}

PromptTemplate PromptTemplate::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open prompt template: " + path);
    PromptTemplate t;
    t.text.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    while (!t.text.empty() && (t.text.back() == '\n' || t.text.back() == '\r')) {
        t.text.pop_back();
    }
    t.validate();
    return t;
}

void PromptTemplate::validate() const {
    for (const char* ph : {"{role}", "{history}", "{candidates}"}) {
        if (text.find(ph) == std::string::npos) {
            throw ConfigError(std::string("prompt template is missing the ") + ph +
                              " placeholder");
        }
    }
}

std::string render_prompt(const PromptTemplate& tmpl, const std::string& role,
                          const std::vector<std::string>& history_titles,
                          const std::vector<std::pair<std::string, std::string>>& pairs) {
    tmpl.validate();
    std::string history;
    for (size_t i = 0; i < history_titles.size(); ++i) {
        if (i > 0) history += ", ";
        history += wrap(history_titles[i]);
    }
    std::string candidates;
    for (size_t i = 0; i < pairs.size(); ++i) {
        if (i > 0) candidates += "\n";
        candidates += "(" + std::to_string(i + 1) + ") " + wrap(pairs[i].first) + " and " +
                      wrap(pairs[i].second);
    }
    std::string out = tmpl.text;
    replace_all(out, "{role}", role);
    replace_all(out, "{history}", history);
    replace_all(out, "{candidates}", candidates);
    return out;
}

// --- raw input -----------------------------------------------------------

std::vector<InteractionEvent> load_interactions_tsv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open interaction file: " + path);
    std::vector<InteractionEvent> events;
    std::string line;
    int row = 0;
    while (std::getline(f, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + " row " + std::to_string(row);
        const std::vector<std::string> parts = split_on(line, "\t");
        if (parts.size() != 4) {
            throw DataError(where + ": expected 4 tab-separated fields, got " +
                            std::to_string(parts.size()));
        }
        InteractionEvent ev;
        ev.user_id = parts[0];
        ev.item_title = sanitize_title(parts[1]);
        ev.rating = parse_rating(parts[2], where);
        ev.timestamp = parse_timestamp(parts[3], where);
        check_event(ev, where);
        events.push_back(std::move(ev));
    }
    return events;
}

std::vector<InteractionEvent> load_movielens_dir(const std::string& dir) {
    const std::string movies_path = dir + "/movies.dat";
    const std::string ratings_path = dir + "/ratings.dat";

    std::unordered_map<std::string, std::string> title_by_id;
    {
        std::ifstream f(movies_path, std::ios::binary);
        if (!f) throw IoError("cannot open " + movies_path);
        std::string line;
        int row = 0;
        while (std::getline(f, line)) {
            ++row;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const std::string where = movies_path + " row " + std::to_string(row);
            const std::vector<std::string> parts = split_on(line, "::");
            if (parts.size() != 3) {
                throw DataError(where + ": expected MovieID::Title::Genres");
            }
            // movies.dat ships latin-1 encoded
            title_by_id[parts[0]] = sanitize_title(latin1_to_utf8(parts[1]));
        }
    }

    std::ifstream f(ratings_path);
    if (!f) throw IoError("cannot open " + ratings_path);
    std::vector<InteractionEvent> events;
    std::string line;
    int row = 0;
    while (std::getline(f, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = ratings_path + " row " + std::to_string(row);
        const std::vector<std::string> parts = split_on(line, "::");
        if (parts.size() != 4) {
            throw DataError(where + ": expected UserID::MovieID::Rating::Timestamp");
        }
        const auto it = title_by_id.find(parts[1]);
        if (it == title_by_id.end()) {
            throw DataError(where + ": rating references unknown movie id " + parts[1]);
        }
        InteractionEvent ev;
        ev.user_id = parts[0];
        ev.item_title = it->second;
        ev.rating = parse_rating(parts[2], where);
        ev.timestamp = parse_timestamp(parts[3], where);
        check_event(ev, where);
        events.push_back(std::move(ev));
    }
    return events;
}

int convert_amazon(const std::string& reviews_path, const std::string& meta_path,
                   const std::string& out_tsv) {
    std::unordered_map<std::string, std::string> title_by_asin;
    {
        std::ifstream f(meta_path);
        if (!f) throw IoError("cannot open " + meta_path);
        std::string line;
        int row = 0;
        while (std::getline(f, line)) {
            ++row;
            if (line.empty()) continue;
            ojson j;
            try {
                j = ojson::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw DataError(meta_path + " row " + std::to_string(row) +
                                ": unparseable JSON: " + e.what());
            }
            if (!j.contains("asin") || !j.contains("title")) continue;
            const std::string title = sanitize_title(j["title"].get<std::string>());
            if (!title.empty()) title_by_asin[j["asin"].get<std::string>()] = title;
        }
    }

    std::ifstream f(reviews_path);
    if (!f) throw IoError("cannot open " + reviews_path);
    std::ofstream out(out_tsv, std::ios::trunc);
    if (!out) throw IoError("cannot open output file: " + out_tsv);
    std::string line;
    int row = 0, dropped = 0;
    while (std::getline(f, line)) {
        ++row;
        if (line.empty()) continue;
        const std::string where = reviews_path + " row " + std::to_string(row);
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": unparseable JSON: " + e.what());
        }
        for (const char* key : {"reviewerID", "asin", "overall", "unixReviewTime"}) {
            if (!j.contains(key)) {
                throw DataError(where + ": missing field '" + key + "'");
            }
        }
        const auto it = title_by_asin.find(j["asin"].get<std::string>());
        if (it == title_by_asin.end()) {
            ++dropped;  // no item title known for this product
            continue;
        }
        InteractionEvent ev;
        ev.user_id = j["reviewerID"].get<std::string>();
        ev.item_title = it->second;
        ev.rating = j["overall"].get<double>();
        ev.timestamp = j["unixReviewTime"].get<int64_t>();
        check_event(ev, where);
        out << ev.user_id << '\t' << ev.item_title << '\t' << ev.rating << '\t'
            << ev.timestamp << '\n';
    }
    if (!out) throw IoError("short write to " + out_tsv);
    return dropped;
}

// --- pipeline stages -----------------------------------------------------

Label label_rating(double rating) {
    if (rating < 1.0 || rating > 5.0) {
        std::ostringstream msg;
        msg << "rating " << rating << " outside [1,5]";
        throw DataError(msg.str());
    }
    return rating > 3.0 ? Label::positive : Label::negative;
}

std::vector<UserHistory> filter_and_truncate(std::vector<InteractionEvent> events,
                                             int min_pos, int min_neg, int max_history) {
    // Stable sorts: by user, then by time within user, so equal keys keep
    // input order and the result is independent of input permutation only
    // up to that tie rule.
    std::stable_sort(events.begin(), events.end(),
                     [](const InteractionEvent& a, const InteractionEvent& b) {
                         return a.user_id < b.user_id;
                     });
    std::vector<UserHistory> out;
    size_t i = 0;
    while (i < events.size()) {
        size_t j = i;
        while (j < events.size() && events[j].user_id == events[i].user_id) ++j;
        std::stable_sort(events.begin() + static_cast<ptrdiff_t>(i),
                         events.begin() + static_cast<ptrdiff_t>(j),
                         [](const InteractionEvent& a, const InteractionEvent& b) {
                             return a.timestamp < b.timestamp;
                         });
        UserHistory h;
        h.user_id = events[i].user_id;
        for (size_t t = i; t < j; ++t) {
            LabeledItem item;
            item.item_title = events[t].item_title;
            item.label = label_rating(events[t].rating);
            h.items.push_back(std::move(item));
        }
        auto recount = [&h] {
            h.pos_count = h.neg_count = 0;
            for (const LabeledItem& item : h.items) {
                (item.label == Label::positive ? h.pos_count : h.neg_count)++;
            }
        };
        recount();
        if (h.pos_count >= min_pos && h.neg_count >= min_neg) {
            if (static_cast<int>(h.items.size()) > max_history) {
                h.items.erase(h.items.begin(),
                              h.items.end() - max_history);  // keep most recent
                recount();
            }
            if (h.pos_count >= min_pos && h.neg_count >= min_neg) {
                out.push_back(std::move(h));
            }
        }
        i = j;
    }
    return out;
}

std::optional<std::vector<std::string>> sample_negatives(
    const UserHistory& history, const std::string& positive_title,
    const std::vector<std::string>& window_titles, int k, uint64_t seed,
    std::string* reason) {
    const std::unordered_set<std::string> window(window_titles.begin(), window_titles.end());
    std::vector<std::string> eligible;
    for (const std::string& title : distinct_recent(history, Label::negative)) {
        if (title == positive_title || window.count(title)) continue;
        eligible.push_back(title);
    }
    if (static_cast<int>(eligible.size()) < k) {
        if (reason != nullptr) {
            *reason = "user " + history.user_id + ": only " +
                      std::to_string(eligible.size()) + " eligible negatives for k=" +
                      std::to_string(k);
        }
        return std::nullopt;
    }
    Rng rng(seed);
    rng.shuffle(eligible);
    eligible.resize(static_cast<size_t>(k));
    return eligible;
}

std::optional<PreferenceSample> build_user_sample(const UserHistory& history,
                                                  const SampleBuildConfig& cfg,
                                                  int sample_index, uint64_t root_seed,
                                                  std::string* reason) {
    if (cfg.k < 1) throw ConfigError("negatives per sample (k) must be >= 1");
    cfg.tmpl.validate();

    const std::vector<std::string> positives = distinct_recent(history, Label::positive);
    if (sample_index >= static_cast<int>(positives.size())) {
        if (reason != nullptr) {
            *reason = "user " + history.user_id + ": only " +
                      std::to_string(positives.size()) +
                      " distinct positives, cannot build sample #" +
                      std::to_string(sample_index + 1);
        }
        return std::nullopt;
    }
    const std::string positive = positives[static_cast<size_t>(sample_index)];

    const uint64_t user_seed = derive_seed(root_seed, history.user_id);
    const auto idx = static_cast<uint64_t>(sample_index);
    // Negatives come first, from the user's whole low-rated pool; the
    // history window is then rendered from the remaining items, so no
    // candidate ever appears in the prompt history.
    const auto negatives = sample_negatives(history, positive, {}, cfg.k,
                                            derive_seed(user_seed, "negatives", idx), reason);
    if (!negatives.has_value()) return std::nullopt;

    std::vector<std::string> window;
    {
        std::unordered_set<std::string> banned(negatives->begin(), negatives->end());
        banned.insert(positive);
        std::unordered_set<std::string> seen;
        for (auto it = history.items.rbegin(); it != history.items.rend(); ++it) {
            if (static_cast<int>(window.size()) >= cfg.prompt_history) break;
            if (banned.count(it->item_title)) continue;
            if (!seen.insert(it->item_title).second) continue;
            window.push_back(it->item_title);
        }
        std::reverse(window.begin(), window.end());  // oldest first, as read
    }

    PreferenceSample sample;
    sample.user_id = history.user_id;
    sample.positive_item = positive;
    sample.negative_items = *negatives;
    sample.rng_tag = derive_seed(user_seed, "pair-order", idx);

    // Candidate display order is flipped per pair so position carries no
    // signal; the correct answer always lists the positive first.
    Rng order_rng(sample.rng_tag);
    std::vector<std::pair<std::string, std::string>> display;
    for (const std::string& neg : *negatives) {
        if (order_rng.next_bool()) {
            display.emplace_back(neg, positive);
        } else {
            display.emplace_back(positive, neg);
        }
        if (!sample.chosen_text.empty()) sample.chosen_text += "\n";
        sample.chosen_text += wrap(positive) + ", " + wrap(neg);
        sample.rejected_texts.push_back(wrap(neg) + ", " + wrap(positive));
    }
    sample.prompt_text = render_prompt(cfg.tmpl, cfg.role, window, display);
    return sample;
}

PrepareResult prepare_dataset(std::vector<InteractionEvent> events, const DataConfig& cfg) {
    for (size_t i = 0; i < events.size(); ++i) {
        check_event(events[i], "event " + std::to_string(i + 1));
    }
    std::unordered_set<std::string> users;
    for (const InteractionEvent& ev : events) users.insert(ev.user_id);

    PrepareResult result;
    result.users_seen = static_cast<int>(users.size());
    const std::vector<UserHistory> histories =
        filter_and_truncate(std::move(events), cfg.min_pos, cfg.min_neg, cfg.max_history);
    result.users_kept = static_cast<int>(histories.size());

    for (const UserHistory& h : histories) {
        for (int j = 0; j < cfg.build.samples_per_user; ++j) {
            std::string reason;
            auto sample = build_user_sample(h, cfg.build, j, cfg.seed, &reason);
            if (sample.has_value()) {
                result.samples.push_back(std::move(*sample));
            } else {
                result.skipped.push_back(reason);
            }
        }
    }
    return result;
}

// --- splits --------------------------------------------------------------

namespace {

// One sample per user (the first emitted), preserving input order.
std::vector<PreferenceSample> first_sample_per_user(
    const std::vector<PreferenceSample>& samples) {
    std::vector<PreferenceSample> out;
    std::unordered_set<std::string> seen;
    for (const PreferenceSample& s : samples) {
        if (seen.insert(s.user_id).second) out.push_back(s);
    }
    return out;
}

std::vector<PreferenceSample> shuffled_pool(const std::vector<PreferenceSample>& samples,
                                            const std::string& split_mode, uint64_t seed,
                                            const std::string& what, int needed) {
    if (split_mode != "user" && split_mode != "sample") {
        throw ConfigError("split_mode must be 'user' or 'sample', got '" + split_mode + "'");
    }
    std::vector<PreferenceSample> pool =
        split_mode == "user" ? first_sample_per_user(samples) : samples;
    if (static_cast<int>(pool.size()) < needed) {
        throw DataError("need " + std::to_string(needed) + " " +
                        (split_mode == "user" ? std::string("users") : std::string("samples")) +
                        " for the " + what + " splits, only " + std::to_string(pool.size()) +
                        " available");
    }
    Rng rng(seed);
    rng.shuffle(pool);
    return pool;
}

}  // namespace

DatasetSplit make_splits(const std::vector<PreferenceSample>& samples,
                         const SplitSizes& sizes, uint64_t seed,
                         const std::string& split_mode) {
    if (sizes.train < 0 || sizes.valid < 0 || sizes.test < 0) {
        throw ConfigError("split sizes must be non-negative");
    }
    const int needed = sizes.train + sizes.valid + sizes.test;
    std::vector<PreferenceSample> pool =
        shuffled_pool(samples, split_mode, derive_seed(seed, "splits"), "requested", needed);
    DatasetSplit split;
    auto take = [&pool](int from, int count) {
        return std::vector<PreferenceSample>(pool.begin() + from, pool.begin() + from + count);
    };
    split.train = take(0, sizes.train);
    split.valid = take(sizes.train, sizes.valid);
    split.test = take(sizes.train + sizes.valid, sizes.test);
    return split;
}

DatasetSplit cross_domain_splits(const std::vector<PreferenceSample>& source,
                                 const std::vector<PreferenceSample>& target,
                                 const SplitSizes& sizes, uint64_t seed) {
    if (sizes.train < 0 || sizes.valid < 0 || sizes.test < 0) {
        throw ConfigError("split sizes must be non-negative");
    }
    std::vector<PreferenceSample> src_pool = shuffled_pool(
        source, "user", derive_seed(seed, "cross-source"), "source-domain", sizes.train);
    std::vector<PreferenceSample> tgt_pool =
        shuffled_pool(target, "user", derive_seed(seed, "cross-target"), "target-domain",
                      sizes.valid + sizes.test);
    DatasetSplit split;
    split.train.assign(src_pool.begin(), src_pool.begin() + sizes.train);
    split.valid.assign(tgt_pool.begin(), tgt_pool.begin() + sizes.valid);
    split.test.assign(tgt_pool.begin() + sizes.valid,
                      tgt_pool.begin() + sizes.valid + sizes.test);
    return split;
}

// --- serialization and checking ------------------------------------------

void write_samples_jsonl(const std::string& path,
                         const std::vector<PreferenceSample>& samples) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open output file: " + path);
    for (const PreferenceSample& s : samples) {
        ojson j;
        j["prompt"] = s.prompt_text;
        j["chosen"] = s.chosen_text;
        j["rejected"] = s.rejected_texts;
        j["positive_item"] = s.positive_item;
        j["negative_items"] = s.negative_items;
        j["rng_tag"] = s.rng_tag;
        j["meta"] = ojson{{"user_id", s.user_id}};
        f << j.dump() << '\n';
    }
    if (!f) throw IoError("short write to " + path);
}

void write_interactions_tsv(const std::string& path,
                            const std::vector<InteractionEvent>& events) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    char rating[32];
    for (const InteractionEvent& ev : events) {
        std::snprintf(rating, sizeof(rating), "%.10g", ev.rating);
        f << ev.user_id << '\t' << ev.item_title << '\t' << rating << '\t' << ev.timestamp
          << '\n';
    }
    if (!f) throw IoError("short write to " + path);
}

std::vector<PreferenceSample> read_samples_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open sample file: " + path);
    std::vector<PreferenceSample> samples;
    std::string line;
    int row = 0;
    while (std::getline(f, line)) {
        ++row;
        if (line.empty()) continue;
        const std::string where = path + " line " + std::to_string(row);
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": unparseable JSON: " + e.what());
        }
        try {
            PreferenceSample s;
            s.prompt_text = j.at("prompt").get<std::string>();
            s.chosen_text = j.at("chosen").get<std::string>();
            s.rejected_texts = j.at("rejected").get<std::vector<std::string>>();
            s.positive_item = j.at("positive_item").get<std::string>();
            s.negative_items = j.at("negative_items").get<std::vector<std::string>>();
            s.rng_tag = j.at("rng_tag").get<uint64_t>();
            s.user_id = j.at("meta").at("user_id").get<std::string>();
            samples.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": missing or mistyped field: " + e.what());
        }
    }
    return samples;
}

void validate_samples(const std::vector<PreferenceSample>& samples) {
    for (size_t idx = 0; idx < samples.size(); ++idx) {
        const PreferenceSample& s = samples[idx];
        const std::string where =
            "sample " + std::to_string(idx + 1) + " (user " + s.user_id + ")";
        auto fail = [&where](const std::string& what) {
            throw DataError(where + ": " + what);
        };

        const size_t k = s.rejected_texts.size();
        if (k < 1) fail("no rejected completions");
        if (s.negative_items.size() != k) {
            fail("rejected/negative_items length mismatch");
        }
        std::unordered_set<std::string> distinct(s.negative_items.begin(),
                                                 s.negative_items.end());
        if (distinct.size() != k) fail("negative items are not pairwise distinct");
        if (distinct.count(s.positive_item)) {
            fail("positive item also listed as a negative");
        }

        // chosen text = k pairs, each positive-first
        const std::vector<std::string> chosen_titles = extract_titles(s.chosen_text);
        if (chosen_titles.size() != 2 * k) {
            fail("chosen text does not contain exactly " + std::to_string(2 * k) + " titles");
        }
        for (size_t i = 0; i < k; ++i) {
            if (chosen_titles[2 * i] != s.positive_item ||
                chosen_titles[2 * i + 1] != s.negative_items[i]) {
                fail("chosen pair " + std::to_string(i + 1) +
                     " is not '<positive>, <negative>'");
            }
            const std::vector<std::string> rej = extract_titles(s.rejected_texts[i]);
            if (rej.size() != 2 || rej[0] != s.negative_items[i] ||
                rej[1] != s.positive_item) {
                fail("rejected pair " + std::to_string(i + 1) +
                     " is not the order-flipped chosen pair");
            }
        }

        // Candidates may not leak into the rendered history: the positive
        // appears once per pair and each negative exactly once; any extra
        // occurrence means it was also shown as history.
        const std::vector<std::string> prompt_titles = extract_titles(s.prompt_text);
        std::unordered_map<std::string, int> count;
        for (const std::string& t : prompt_titles) count[t]++;
        if (count[s.positive_item] != static_cast<int>(k)) {
            fail("positive item appears " + std::to_string(count[s.positive_item]) +
                 " times in the prompt, expected once per pair");
        }
        for (const std::string& neg : s.negative_items) {
            if (count[neg] != 1) {
                fail("negative item '" + neg + "' appears " + std::to_string(count[neg]) +
                     " times in the prompt, expected exactly once");
            }
        }
    }
}

}  // namespace prefrank
