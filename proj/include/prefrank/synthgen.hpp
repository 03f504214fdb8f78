#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefrank/datapipe.hpp"

namespace prefrank {

// Generator for separable preference logs. Each domain carries six latent
// genres with skewed global popularity; a user likes a genre with that
// genre's popularity, rates its items 4-5 when liked and 1-3 otherwise
// (with a small per-item flip noise). Titles are "Adjective Noun" where the
// adjective bank is shared between the two domains (it carries the signal
// that transfers) and the noun bank is domain-specific.
struct SynthConfig {
    int users = 400;
    int items_per_genre = 20;  // catalog size per genre, at most 48
    int min_events = 24;       // rating events per user
    int max_events = 40;
    double flip_noise = 0.02;  // per-item chance the rating contradicts taste
    uint64_t seed = 1;
    std::string domain = "movie";  // "movie" or "game"

    void validate() const;
};

struct CatalogItem {
    std::string title;
    int genre = 0;
};

// The fixed item universe of a domain (independent of cfg.seed).
std::vector<CatalogItem> synth_catalog(const std::string& domain, int items_per_genre);

// How strongly the population likes each genre; index = genre.
const std::vector<double>& genre_popularity();

std::vector<InteractionEvent> generate_interactions(const SynthConfig& cfg);

// Writes the corpus in the native rating-file layout (ratings.dat with
// ::-separated integer ids, movies.dat latin-1 encoded) for exercising the
// raw-file loader.
void write_movielens_fixture(const std::string& dir, const SynthConfig& cfg);

}  // namespace prefrank
