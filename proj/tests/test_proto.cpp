#include <cmath>

#include "checks.hpp"
#include "doctest.h"
#include "mspa/proto.hpp"

using namespace mspa;

namespace {

// D x 1 x W feature from columns.
Tensor columns(const std::vector<std::vector<float>>& cols) {
    const int w = static_cast<int>(cols.size());
    const int d = static_cast<int>(cols[0].size());
    std::vector<float> v(static_cast<std::size_t>(d) * w);
    for (int x = 0; x < w; ++x)
        for (int k = 0; k < d; ++k) v[static_cast<std::size_t>(k) * w + x] = cols[x][k];
    return Tensor::from({d, 1, w}, v);
}

BinaryMask row_mask(std::vector<std::uint8_t> v) {
    BinaryMask m(1, static_cast<int>(v.size()));
    m.values = std::move(v);
    return m;
}

}  // namespace

TEST_CASE("prototype pooling") {
    const Tensor constant = Tensor::full({3, 2, 2}, 0.7f);
    const PrototypePair full = extract_prototypes(constant, BinaryMask(2, 2, 1));
    CHECK(full.valid[1]);
    CHECK_FALSE(full.valid[0]);
    CHECK_FALSE(full.complete());
    for (float v : full.p[1].data()) CHECK(v == doctest::Approx(0.7));
    for (float v : full.p[0].data()) CHECK(v == 0.0f);

    const Tensor f = columns({{1, 0}, {0, 1}, {5, 5}});
    const PrototypePair pair = extract_prototypes(f, row_mask({1, 1, 0}));
    CHECK(pair.complete());
    CHECK(pair.p[1][0] == doctest::Approx(0.5));
    CHECK(pair.p[1][1] == doctest::Approx(0.5));
    CHECK(pair.p[0][0] == doctest::Approx(5.0));

    const PrototypePair single = extract_prototypes(f, row_mask({0, 1, 0}));
    CHECK(single.p[1][0] == 0.0f);
    CHECK(single.p[1][1] == 1.0f);
}

TEST_CASE("pooling with ground-truth fallback") {
    const Tensor f = columns({{1, 0}, {0, 1}, {4, 4}});
    const BinaryMask predicted = row_mask({0, 0, 0});
    const BinaryMask truth = row_mask({1, 0, 0});
    const PrototypePair p = extract_prototypes_with_fallback(f, predicted, truth);
    CHECK(p.complete());
    CHECK(p.p[1][0] == doctest::Approx(1.0));  // from truth
    CHECK(p.p[0][0] == doctest::Approx(5.0 / 3.0));  // from the prediction
    CHECK_FALSE(extract_prototypes_with_fallback(f, predicted, row_mask({0, 0, 0})).valid[1]);
}

TEST_CASE("cosine similarity") {
    const Tensor f = columns({{1, 1}, {0, 3}, {2, 0}});
    const Tensor g = cosine_similarity_map(f, Tensor::from({2}, {1, 0}));
    CHECK(g[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
    CHECK(g[0] == doctest::Approx(0.7071).epsilon(1e-4));
    CHECK(g[1] == doctest::Approx(0.0));
    CHECK(g[2] == doctest::Approx(1.0));
    const Tensor z = cosine_similarity_map(Tensor::zeros({2, 1, 1}), Tensor::from({2}, {1, 0}));
    CHECK(std::isfinite(z[0]));
}

TEST_CASE("aggregated probability") {
    const Tensor f = columns({{1, 1}});
    PrototypePair equal;
    equal.p = {Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 1})};
    equal.valid = {true, true};
    const Tensor half = aggregate_probability(similarity_stack(f, {equal}));
    CHECK(half[0] == doctest::Approx(0.5));
    CHECK(half[1] == doctest::Approx(0.5));

    // Four pairs whose similarities sum to +2 (class 1) and -2 (class 0).
    PrototypePair pos;
    pos.p = {Tensor::from({2}, {-1, 0}), Tensor::from({2}, {1, 0})};
    pos.valid = {true, true};
    PrototypePair orth;
    orth.p = {Tensor::from({2}, {0, 1}), Tensor::from({2}, {0, 1})};
    orth.valid = {true, true};
    const Tensor one = columns({{1, 0}});
    const Tensor m = aggregate_probability(similarity_stack(one, {pos, pos, orth, orth}));
    CHECK(m[1] == doctest::Approx(0.9820).epsilon(1e-4));

    PrototypePair broken = pos;
    broken.valid[1] = false;
    const SimilarityStack sims = similarity_stack(one, {broken});
    CHECK_FALSE(sims[0].usable);
    CHECK_THROWS_AS(aggregate_probability(sims), NoPrototypesError);
}

TEST_CASE("prototype averaging") {
    PrototypePair a, b, c;
    a.p = {Tensor::from({2}, {1, 1}), Tensor::from({2}, {1, 0})};
    a.valid = {true, true};
    b.p = {Tensor::from({2}, {3, 3}), Tensor::from({2}, {0, 1})};
    b.valid = {true, true};
    c.p = {Tensor::from({2}, {5, 5}), Tensor::zeros({2})};
    c.valid = {true, false};

    const AveragedPrototype one = average_prototypes({a});
    CHECK(one.p[1][0] == 1.0f);
    const AveragedPrototype two = average_prototypes({a, b});
    CHECK(two.p[1][0] == doctest::Approx(0.5));
    CHECK(two.p[1][1] == doctest::Approx(0.5));
    const AveragedPrototype three = average_prototypes({a, b, c});
    CHECK(three.contributing_count[1] == 2);
    CHECK(three.contributing_count[0] == 3);
    CHECK(three.p[1][0] == doctest::Approx(0.5));
    CHECK(three.p[0][0] == doctest::Approx(3.0));
}

TEST_CASE("regional prototypes") {
    const Tensor f = columns({{2, 0}, {0, 2}, {9, 9}});
    LabelMap votes(1, 3);
    votes.values = {3, 3, 1};
    // probs: class 1 weights 0.75 / 0.25 on the two region pixels
    const Tensor probs = Tensor::from({2, 1, 3}, {0.25f, 0.75f, 0.5f, 0.75f, 0.25f, 0.5f});
    const auto r = regional_prototype(f, probs, votes, 3, region_weight_class(3));
    REQUIRE(r);
    CHECK(r->vector[0] == doctest::Approx(1.5));
    CHECK(r->vector[1] == doctest::Approx(0.5));
    CHECK(r->pixel_count == 2);

    const Tensor uniform = Tensor::full({2, 1, 3}, 0.5f);
    const auto plain = regional_prototype(f, uniform, votes, 3, 1);
    CHECK(plain->vector[0] == doctest::Approx(1.0));
    CHECK(plain->vector[1] == doctest::Approx(1.0));

    CHECK_FALSE(regional_prototype(f, probs, votes, 4, 1));
    const Tensor zero_w = Tensor::from({2, 1, 3}, {1, 1, 1, 0, 0, 0});
    CHECK_FALSE(regional_prototype(f, zero_w, votes, 3, 1));

    CHECK(region_weight_class(1) == 0);
    CHECK(region_weight_class(2) == 0);
    CHECK(region_weight_class(3) == 1);
    CHECK(region_weight_class(4) == 1);
}

TEST_CASE("pooling matches a per-pixel oracle on random instances") {
    const auto r = checks::oracle_suite(300, 99);
    INFO(r.detail);
    CHECK(r.passed);
}
