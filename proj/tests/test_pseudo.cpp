#include "checks.hpp"
#include "doctest.h"
#include "mspa/pseudo.hpp"

using namespace mspa;

namespace {

BinaryMask grid2(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    BinaryMask m(2, 2);
    m.values = {a, b, c, d};
    return m;
}

}  // namespace

TEST_CASE("prototype vote") {
    const Tensor g0 = Tensor::from({2, 2}, {0.1f, 0.5f, 0.5f, 0.2f});
    const Tensor g1 = Tensor::from({2, 2}, {0.4f, 0.3f, 0.2f, 0.9f});
    CHECK(prototype_vote(g0, g1) == grid2(1, 0, 0, 1));
    CHECK(prototype_vote(g0, g0) == grid2(0, 0, 0, 0));  // ties go to background
    CHECK(prototype_vote(Tensor::full({2, 2}, -1.0f), Tensor::full({2, 2}, 1.0f)) == grid2(1, 1, 1, 1));
}

TEST_CASE("plain vote") {
    const Tensor probs = Tensor::from({2, 1, 3}, {0.2f, 0.5f, 0.9f, 0.8f, 0.5f, 0.1f});
    const BinaryMask v = plain_vote(probs);
    CHECK(v[0] == 1);
    CHECK(v[1] == 0);
    CHECK(v[2] == 0);
}

TEST_CASE("majority threshold") {
    CHECK(majority_threshold(4) == 3);
    CHECK(majority_threshold(3) == 3);
    CHECK(majority_threshold(2) == 2);
    CHECK(majority_threshold(1) == 2);
    CHECK(majority_threshold(0) == 1);
}

TEST_CASE("fused pseudo-label for N = 4") {
    // vote sums 5, 2, 3, 0 at the four pixels
    const std::vector<BinaryMask> votes{grid2(1, 1, 1, 0), grid2(1, 1, 1, 0), grid2(1, 0, 1, 0), grid2(1, 0, 0, 0),
                                        grid2(1, 0, 0, 0)};
    const VoteState s = fuse_votes(votes);
    CHECK(s.n_valid == 4);
    CHECK(s.vote_sum.values == std::vector<std::int32_t>{5, 2, 3, 0});
    CHECK(s.pseudo_label == grid2(1, 0, 1, 0));
}

TEST_CASE("voting table is exhaustive and matches the majority mapping") {
    const auto r = checks::voting_table();
    INFO(r.detail);
    CHECK(r.passed);
}

TEST_CASE("flipping one vote up never lowers the pseudo-label") {
    Rng rng(3);
    std::bernoulli_distribution b(0.5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<BinaryMask> votes(5, BinaryMask(3, 3));
        for (auto& v : votes)
            for (auto& x : v.values) x = b(rng);
        const VoteState before = fuse_votes(votes);
        const std::size_t voter = trial % 5, pixel = trial % 9;
        if (votes[voter][pixel] == 1) continue;
        votes[voter][pixel] = 1;
        const VoteState after = fuse_votes(votes);
        CHECK(after.pseudo_label[pixel] >= before.pseudo_label[pixel]);
    }
}

TEST_CASE("region masks") {
    VoteState s;
    s.n_valid = 4;
    s.vote_sum = LabelMap(2, 2);
    s.vote_sum.values = {3, 4, 1, 2};
    const auto r = region_masks(s);
    CHECK(r[0] == grid2(0, 0, 1, 0));
    CHECK(r[1] == grid2(0, 0, 0, 1));
    CHECK(r[2] == grid2(1, 0, 0, 0));
    CHECK(r[3] == grid2(0, 1, 0, 0));

    s.vote_sum.values = {5, 5, 5, 5};
    for (const auto& m : region_masks(s)) CHECK(m == grid2(0, 0, 0, 0));

    s.n_valid = 3;
    CHECK_THROWS_AS(region_masks(s), std::invalid_argument);
}

TEST_CASE("region masks partition pixels with sums 1..4") {
    Rng rng(8);
    std::uniform_int_distribution<int> u(0, 5);
    VoteState s;
    s.n_valid = 4;
    s.vote_sum = LabelMap(8, 8);
    for (auto& v : s.vote_sum.values) v = u(rng);
    const auto r = region_masks(s);
    int in_range = 0, covered = 0;
    for (std::size_t i = 0; i < 64; ++i) {
        const int v = s.vote_sum[i];
        if (v >= 1 && v <= 4) ++in_range;
        int hits = 0;
        for (const auto& m : r) hits += m[i];
        CHECK(hits <= 1);
        covered += hits;
    }
    CHECK(covered == in_range);
}

TEST_CASE("fuse_votes input validation") {
    CHECK_THROWS_AS(fuse_votes({}), std::invalid_argument);
    CHECK_THROWS_AS(fuse_votes({BinaryMask(2, 2), BinaryMask(2, 3)}), std::invalid_argument);
}
