#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace prefrank {

// One raw rating-log row.
struct InteractionEvent {
    std::string user_id;
    std::string item_title;
    double rating = 0.0;     // must lie in [1,5]
    int64_t timestamp = 0;   // seconds
};

enum class Label { positive, negative };

struct LabeledItem {
    std::string item_title;
    Label label = Label::negative;
};

// A user's filtered interaction list in timestamp order.
struct UserHistory {
    std::string user_id;
    std::vector<LabeledItem> items;
    int pos_count = 0;
    int neg_count = 0;
};

// One instruction-style ranking sample: a prompt, the correct pair list,
// and k order-flipped wrong answers.
struct PreferenceSample {
    std::string prompt_text;
    std::string chosen_text;
    std::vector<std::string> rejected_texts;
    std::string positive_item;
    std::vector<std::string> negative_items;
    uint64_t rng_tag = 0;  // seed that fixed the candidate display order
    std::string user_id;
};

struct SplitSizes {
    int train = 100;
    int valid = 100;
    int test = 1000;
};

struct DatasetSplit {
    std::vector<PreferenceSample> train;
    std::vector<PreferenceSample> valid;
    std::vector<PreferenceSample> test;
};

// Prompt template; must contain {role}, {history} and {candidates}.
struct PromptTemplate {
    std::string text;

    static PromptTemplate builtin();
    static PromptTemplate load(const std::string& path);
    void validate() const;  // missing placeholder -> ConfigError
};

// Knobs for turning histories into samples (data section of the config).
struct SampleBuildConfig {
    PromptTemplate tmpl = PromptTemplate::builtin();
    std::string role = "You are an assistant working on movie recommendations.";
    int k = 1;                 // negatives per sample
    int prompt_history = 10;   // most recent titles rendered in the prompt
    int samples_per_user = 1;  // >1 pairs each user with several positives
};

struct DataConfig {
    int min_pos = 5;
    int min_neg = 5;
    int max_history = 40;
    SplitSizes sizes{};
    uint64_t seed = 0;
    std::string split_mode = "user";  // "user" (disjoint) or "sample"
    SampleBuildConfig build{};
};

// --- raw input -----------------------------------------------------------

// Canonical rows: user_id <TAB> item_title <TAB> rating <TAB> timestamp.
std::vector<InteractionEvent> load_interactions_tsv(const std::string& path);

// Native MovieLens-1M layout: ratings.dat ("UserID::MovieID::Rating::Timestamp")
// joined with movies.dat ("MovieID::Title::Genres", latin-1 encoded).
std::vector<InteractionEvent> load_movielens_dir(const std::string& dir);

// Flattens an Amazon review dump (reviews JSONL with reviewerID/asin/overall/
// unixReviewTime plus a metadata JSONL mapping asin -> title) to canonical
// rows. Returns the number of reviews dropped for missing titles.
int convert_amazon(const std::string& reviews_path, const std::string& meta_path,
                   const std::string& out_tsv);

// --- pipeline stages -----------------------------------------------------

Label label_rating(double rating);  // context added by callers on error

std::vector<UserHistory> filter_and_truncate(std::vector<InteractionEvent> events,
                                             int min_pos, int min_neg, int max_history);

// Draws k distinct low-rated titles of this user, excluding the candidate
// positive and everything shown in the prompt window. nullopt when fewer
// than k are eligible; *reason then says why.
std::optional<std::vector<std::string>> sample_negatives(
    const UserHistory& history, const std::string& positive_title,
    const std::vector<std::string>& window_titles, int k, uint64_t seed,
    std::string* reason = nullptr);

std::string render_prompt(const PromptTemplate& tmpl, const std::string& role,
                          const std::vector<std::string>& history_titles,
                          const std::vector<std::pair<std::string, std::string>>& pairs);

// Builds the sample_index-th sample for one user (0 = most recent positive).
// nullopt (plus *reason) when the user cannot supply it.
std::optional<PreferenceSample> build_user_sample(const UserHistory& history,
                                                  const SampleBuildConfig& cfg,
                                                  int sample_index, uint64_t root_seed,
                                                  std::string* reason = nullptr);

struct PrepareResult {
    std::vector<PreferenceSample> samples;
    std::vector<std::string> skipped;  // one reason line per dropped sample
    int users_seen = 0;
    int users_kept = 0;
};

// Full pipeline: group/sort raw events, filter, build samples in stable
// user_id order.
PrepareResult prepare_dataset(std::vector<InteractionEvent> events, const DataConfig& cfg);

DatasetSplit make_splits(const std::vector<PreferenceSample>& samples,
                         const SplitSizes& sizes, uint64_t seed,
                         const std::string& split_mode = "user");

// Train from the source pool; valid/test from the target pool.
DatasetSplit cross_domain_splits(const std::vector<PreferenceSample>& source,
                                 const std::vector<PreferenceSample>& target,
                                 const SplitSizes& sizes, uint64_t seed);

// --- serialization and checking ------------------------------------------

void write_samples_jsonl(const std::string& path,
                         const std::vector<PreferenceSample>& samples);
std::vector<PreferenceSample> read_samples_jsonl(const std::string& path);

// Counterpart of load_interactions_tsv: user, title, rating, timestamp.
void write_interactions_tsv(const std::string& path,
                            const std::vector<InteractionEvent>& events);

// Re-checks every structural invariant of emitted samples; throws DataError
// naming the first offending sample.
void validate_samples(const std::vector<PreferenceSample>& samples);

}  // namespace prefrank
