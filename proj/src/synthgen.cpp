#include "prefrank/synthgen.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "prefrank/errors.hpp"
#include "prefrank/rng.hpp"

namespace prefrank {

namespace {

constexpr int kGenres = 6;
constexpr int kAdjPerGenre = 6;
constexpr int kNounPerGenre = 8;

// Adjectives are shared across domains and carry the transferable taste
// signal; all words are globally unique so titles never collide.
constexpr std::array<std::array<const char*, kAdjPerGenre>, kGenres> kAdjectives = {{
    {"Golden", "Radiant", "Lucky", "Sunny", "Gentle", "Merry"},
    {"Brave", "Noble", "Valiant", "Mighty", "Bold", "Grand"},
    {"Clever", "Curious", "Witty", "Nimble", "Keen", "Bright"},
    {"Gloomy", "Dreary", "Bleak", "Dismal", "Sombre", "Murky"},
    {"Rusty", "Broken", "Crooked", "Shabby", "Ragged", "Faded"},
    {"Vicious", "Savage", "Bitter", "Cruel", "Grim", "Harsh"},
}};

constexpr std::array<std::array<const char*, kNounPerGenre>, kGenres> kMovieNouns = {{
    {"Holiday", "Serenade", "Wedding", "Carnival", "Ballad", "Sunrise", "Meadow", "Waltz"},
    {"Voyage", "Legend", "Crusade", "Kingdom", "Banner", "Saga", "Armada", "Summit"},
    {"Detective", "Puzzle", "Heist", "Cipher", "Gambit", "Scholar", "Library", "Riddle"},
    {"Shadow", "Requiem", "Winter", "Mourning", "S\xC3\xA9"
                                               "ance",
     "Lament", "Ruin", "Twilight"},
    {"Junkyard", "Alley", "Basement", "Scrapheap", "Gutter", "Attic", "Cellar", "Backlot"},
    {"Vendetta", "Ambush", "Betrayal", "Outlaw", "Duel", "Feud", "Siege", "Menace"},
}};

constexpr std::array<std::array<const char*, kNounPerGenre>, kGenres> kGameNouns = {{
    {"Garden", "Picnic", "Festival", "Orchard", "Rainbow", "Lagoon", "Melody", "Breeze"},
    {"Dragon", "Fortress", "Champion", "Blade", "Shield", "Tournament", "Citadel", "Valor"},
    {"Labyrinth", "Enigma", "Codex", "Mechanism", "Circuit", "Gadget", "Workshop", "Blueprint"},
    {"Dungeon", "Phantom", "Eclipse", "Crypt", "Specter", "Abyss", "Mist", "Raven"},
    {"Wasteland", "Rubble", "Scrap", "Debris", "Bunker", "Sludge", "Derelict", "Husk"},
    {"Carnage", "Warpath", "Onslaught", "Havoc", "Rampage", "Skirmish", "Clash", "Fury"},
}};

const std::vector<double> kPopularity = {0.97, 0.94, 0.91, 0.09, 0.06, 0.03};

std::string utf8_to_latin1(const std::string& s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
        } else if ((c & 0xE0) == 0xC0 && i + 1 < s.size()) {
            const auto d = static_cast<unsigned char>(s[i + 1]);
            out.push_back(static_cast<char>(((c & 0x1F) << 6) | (d & 0x3F)));
            ++i;
        } else {
            out.push_back('?');  // not representable in latin-1
        }
    }
    return out;
}

}  // namespace

void SynthConfig::validate() const {
    if (users < 1) throw ConfigError("synthetic corpus needs at least one user");
    if (items_per_genre < 2 || items_per_genre > kAdjPerGenre * kNounPerGenre) {
        throw ConfigError("items_per_genre must lie in [2, " +
                          std::to_string(kAdjPerGenre * kNounPerGenre) + "]");
    }
    if (min_events < 16 || min_events > max_events) {
        throw ConfigError("event counts must satisfy 16 <= min_events <= max_events");
    }
    if (max_events > kGenres * items_per_genre) {
        throw ConfigError("max_events exceeds the catalog size");
    }
    if (flip_noise < 0.0 || flip_noise >= 0.5) {
        throw ConfigError("flip_noise must lie in [0, 0.5)");
    }
    if (domain != "movie" && domain != "game") {
        throw ConfigError("domain must be 'movie' or 'game', got '" + domain + "'");
    }
}

const std::vector<double>& genre_popularity() { return kPopularity; }

std::vector<CatalogItem> synth_catalog(const std::string& domain, int items_per_genre) {
    if (domain != "movie" && domain != "game") {
        throw ConfigError("domain must be 'movie' or 'game', got '" + domain + "'");
    }
    const auto& nouns = domain == "movie" ? kMovieNouns : kGameNouns;
    std::vector<CatalogItem> catalog;
    for (int g = 0; g < kGenres; ++g) {
        std::vector<std::string> combos;
        for (int a = 0; a < kAdjPerGenre; ++a) {
            for (int n = 0; n < kNounPerGenre; ++n) {
                combos.push_back(std::string(kAdjectives[g][a]) + " " + nouns[g][n]);
            }
        }
        // domain- and genre-keyed shuffle fixes the subset independently of
        // any corpus seed, so every corpus shares one item universe
        Rng rng(derive_seed(fnv1a(domain), "catalog", static_cast<uint64_t>(g)));
        rng.shuffle(combos);
        for (int i = 0; i < items_per_genre; ++i) {
            catalog.push_back({combos[static_cast<size_t>(i)], g});
        }
    }
    return catalog;
}

std::vector<InteractionEvent> generate_interactions(const SynthConfig& cfg) {
    cfg.validate();
    const std::vector<CatalogItem> catalog = synth_catalog(cfg.domain, cfg.items_per_genre);
    const std::string prefix = cfg.domain == "movie" ? "mu" : "gu";

    std::vector<InteractionEvent> events;
    for (int u = 0; u < cfg.users; ++u) {
        std::ostringstream uid_s;
        uid_s << prefix;
        uid_s.width(5);
        uid_s.fill('0');
        uid_s << u + 1;
        const std::string uid = uid_s.str();
        const uint64_t user_seed = derive_seed(cfg.seed, uid);

        Rng taste_rng(derive_seed(user_seed, "taste"));
        std::array<bool, kGenres> likes{};
        bool any_like = false, any_dislike = false;
        for (int g = 0; g < kGenres; ++g) {
            likes[static_cast<size_t>(g)] = taste_rng.next_unit() < kPopularity[static_cast<size_t>(g)];
            (likes[static_cast<size_t>(g)] ? any_like : any_dislike) = true;
        }
        // a user with uniform taste cannot supply both candidate kinds
        if (!any_dislike) likes[kGenres - 1] = false;
        if (!any_like) likes[0] = true;

        // redraw until the history clears the 5/5 floor with slack
        std::vector<InteractionEvent> drawn;
        for (uint64_t attempt = 0; attempt < 20; ++attempt) {
            drawn.clear();
            Rng rng(derive_seed(user_seed, "events", attempt));
            const int n = cfg.min_events +
                          static_cast<int>(rng.next_below(
                              static_cast<uint64_t>(cfg.max_events - cfg.min_events + 1)));
            std::vector<size_t> order(catalog.size());
            std::iota(order.begin(), order.end(), size_t{0});
            rng.shuffle(order);
            int pos = 0, neg = 0;
            for (int i = 0; i < n; ++i) {
                const CatalogItem& item = catalog[order[static_cast<size_t>(i)]];
                bool affinity = likes[static_cast<size_t>(item.genre)];
                if (rng.next_unit() < cfg.flip_noise) affinity = !affinity;
                const double rating =
                    affinity ? 4.0 + static_cast<double>(rng.next_below(2))
                             : 1.0 + static_cast<double>(rng.next_below(3));
                (affinity ? pos : neg)++;
                drawn.push_back({uid, item.title, rating,
                                 1000000 + static_cast<int64_t>(u) * 1000 + i});
            }
            if (pos >= 7 && neg >= 7) break;  // else keep the final attempt
        }
        events.insert(events.end(), drawn.begin(), drawn.end());
    }
    return events;
}

void write_movielens_fixture(const std::string& dir, const SynthConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(dir);
    const std::vector<CatalogItem> catalog = synth_catalog(cfg.domain, cfg.items_per_genre);
    const std::vector<InteractionEvent> events = generate_interactions(cfg);

    std::unordered_map<std::string, int> movie_id;
    {
        std::ofstream f(dir + "/movies.dat", std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + dir + "/movies.dat");
        for (size_t i = 0; i < catalog.size(); ++i) {
            movie_id[catalog[i].title] = static_cast<int>(i) + 1;
            f << i + 1 << "::" << utf8_to_latin1(catalog[i].title) << "::genre"
              << catalog[i].genre << '\n';
        }
        if (!f) throw IoError("short write to " + dir + "/movies.dat");
    }

    std::unordered_map<std::string, int> user_id;
    std::ofstream f(dir + "/ratings.dat", std::ios::trunc);
    if (!f) throw IoError("cannot write " + dir + "/ratings.dat");
    for (const InteractionEvent& ev : events) {
        const auto [it, fresh] = user_id.try_emplace(ev.user_id,
                                                     static_cast<int>(user_id.size()) + 1);
        (void)fresh;
        f << it->second << "::" << movie_id.at(ev.item_title) << "::"
          << static_cast<int>(ev.rating) << "::" << ev.timestamp << '\n';
    }
    if (!f) throw IoError("short write to " + dir + "/ratings.dat");
}

}  // namespace prefrank
