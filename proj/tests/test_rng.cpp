#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "prefrank/rng.hpp"

using namespace prefrank;

TEST_CASE("splitmix64 stream matches reference values") {
    // Frozen outputs from an independent python implementation of
    // splitmix64 (same constants as the C++ generator).
    Rng rng(42);
    CHECK(rng.next_u64() == 0xbdd732262feb6e95ull);
    CHECK(rng.next_u64() == 0x28efe333b266f103ull);
    CHECK(rng.next_u64() == 0x47526757130f9f52ull);

    Rng zero(0);
    CHECK(zero.next_u64() == 0xe220a8397b1dcdafull);
    CHECK(zero.next_u64() == 0x6e789e6aa1b965f4ull);
}

TEST_CASE("fnv1a matches reference values") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a("model-init") == 0xd25a2ebc1a1c9663ull);
}

TEST_CASE("derive_seed matches reference values and separates streams") {
    CHECK(derive_seed(7, "negatives") == 0x7ac92a431e104923ull);
    CHECK(derive_seed(7, "negatives", 3) == 0xfaf4eb5d3e374dabull);
    CHECK(derive_seed(7, "negatives") != derive_seed(7, "splits"));
    CHECK(derive_seed(7, "negatives", 0) != derive_seed(7, "negatives", 1));
    CHECK(derive_seed(7, "negatives") == derive_seed(7, "negatives"));
}

TEST_CASE("next_unit stays in [0,1) and reproduces the first draw") {
    Rng rng(42);
    CHECK(rng.next_unit() == doctest::Approx(0.7415648787718233).epsilon(1e-15));
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.next_unit();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("next_unit mean is close to one half") {
    Rng rng(123);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) sum += rng.next_unit();
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("next_gauss has roughly unit variance and zero mean") {
    Rng rng(7);
    const int n = 20000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.next_gauss();
        sum += g;
        sumsq += g * g;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("next_below never reaches the bound and covers small ranges") {
    Rng rng(99);
    std::vector<int> seen(10, 0);
    for (int i = 0; i < 5000; ++i) {
        const uint64_t x = rng.next_below(10);
        REQUIRE(x < 10);
        ++seen[static_cast<size_t>(x)];
    }
    for (const int c : seen) CHECK(c > 0);
}

TEST_CASE("shuffle yields a permutation and depends on the seed") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<size_t>(i)] = i;
    std::vector<int> a = v, b = v, c = v;
    Rng(5).shuffle(a);
    Rng(5).shuffle(b);
    Rng(6).shuffle(c);
    CHECK(a == b);
    CHECK(a != c);
    std::sort(a.begin(), a.end());
    CHECK(a == v);
}
