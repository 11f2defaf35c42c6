#include <algorithm>
#include <cmath>
#include <numeric>

#include "checks.hpp"
#include "doctest.h"
#include "mspa/eval.hpp"
#include "mspa/report.hpp"

using namespace mspa;

namespace {

BinaryMask from_bits(int h, int w, std::vector<std::uint8_t> v) {
    BinaryMask m(h, w);
    m.values = std::move(v);
    return m;
}

}  // namespace

TEST_CASE("confusion counts and reference metrics") {
    // tp 3, fp 1, fn 1, tn 5
    const BinaryMask pred = from_bits(2, 5, {1, 1, 1, 1, 0, 0, 0, 0, 0, 0});
    const BinaryMask truth = from_bits(2, 5, {1, 1, 1, 0, 1, 0, 0, 0, 0, 0});
    const ConfusionCounts c = confusion(pred, truth);
    CHECK(c == ConfusionCounts{3, 1, 1, 5});
    const Metrics m = metrics(c);
    CHECK(m.dsc == doctest::Approx(0.75));
    CHECK(m.iou == doctest::Approx(0.6));
    CHECK(m.sen == doctest::Approx(0.75));
    CHECK(m.spe == doctest::Approx(5.0 / 6.0));
    CHECK(m.acc == doctest::Approx(0.8));
    CHECK_THROWS_AS(confusion(pred, BinaryMask(5, 2)), std::invalid_argument);
}

TEST_CASE("empty foreground is vacuously perfect; full inversion scores zero") {
    const BinaryMask bg(3, 3);
    const Metrics m = metrics(confusion(bg, bg));
    CHECK(m.dsc == 1.0);
    CHECK(m.iou == 1.0);
    CHECK(m.sen == 1.0);
    CHECK(m.spe == 1.0);
    CHECK(m.acc == 1.0);

    const BinaryMask truth = from_bits(1, 4, {1, 0, 1, 0});
    const BinaryMask inv = from_bits(1, 4, {0, 1, 0, 1});
    const Metrics z = metrics(confusion(inv, truth));
    CHECK(z.dsc == 0.0);
    CHECK(z.acc == 0.0);
    CHECK(z.sen == 0.0);
    CHECK(z.spe == 0.0);
}

TEST_CASE("metrics agree with the brute-force oracle") {
    Rng rng(31);
    std::bernoulli_distribution b(0.3);
    for (int trial = 0; trial < 200; ++trial) {
        BinaryMask p(5, 7), t(5, 7);
        for (auto& v : p.values) v = b(rng);
        for (auto& v : t.values) v = b(rng);
        const auto bc = checks::brute_counts(p, t);
        const ConfusionCounts c = confusion(p, t);
        CHECK(c == ConfusionCounts{bc.tp, bc.fp, bc.fn, bc.tn});
        const auto bm = checks::brute_metrics(bc);
        const Metrics m = metrics(c);
        CHECK(m.dsc == doctest::Approx(bm.dsc));
        CHECK(m.iou == doctest::Approx(bm.iou));
        CHECK(m.sen == doctest::Approx(bm.sen));
        CHECK(m.spe == doctest::Approx(bm.spe));
        CHECK(m.acc == doctest::Approx(bm.acc));
    }
}

TEST_CASE("evaluate: determinism, averaging, permutation invariance") {
    const SegNetParams p = init_params(NetDescriptor{{4, 8, 8}, 4}, 3);
    auto samples = generate_synthetic(5, 16, 2);
    const MetricsRecord a = evaluate(p, samples);
    const MetricsRecord b = evaluate(p, samples);
    REQUIRE(a.per_image.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a.per_image[i].dsc == b.per_image[i].dsc);
    double sum = 0;
    for (const auto& m : a.per_image) sum += m.acc;
    CHECK(a.mean.acc == doctest::Approx(sum / 5));

    const MetricsRecord one = evaluate(p, std::vector<Sample>{samples[2]});
    CHECK(one.mean.dsc == a.per_image[2].dsc);
    CHECK(one.ids[0] == samples[2].id);

    std::reverse(samples.begin(), samples.end());
    const MetricsRecord r = evaluate(p, samples);
    CHECK(r.mean.dsc == doctest::Approx(a.mean.dsc).epsilon(1e-12));

    auto unlabeled = samples;
    unlabeled[1].mask.reset();
    CHECK_THROWS_AS(evaluate(p, unlabeled), DataError);

    const auto ok = checks::metric_identities({a, r});
    INFO(ok.detail);
    CHECK(ok.passed);
}

TEST_CASE("ablation report structure") {
    const auto rows = ablation_rows();
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].first == "L_S");
    CHECK_FALSE(rows[0].second.any());
    CHECK(rows[3].second.lpa);
    CHECK(rows[3].second.upa);
    CHECK(rows[3].second.spa);
    CHECK(rows[1].second.lpa);
    CHECK_FALSE(rows[1].second.upa);

    AblationReport rep;
    for (const auto& [name, toggles] : rows) {
        AblationRow row{name, toggles, {1, 2}, {}, {}, {}};
        row.per_seed = {Metrics{0.8, 0.7, 0.9, 0.95, 0.97}, Metrics{0.9, 0.8, 0.9, 0.95, 0.97}};
        finalize_row(row);
        rep.rows.push_back(row);
    }
    CHECK(rep.rows[0].mean.dsc == doctest::Approx(0.85));
    CHECK(rep.rows[0].stddev.dsc == doctest::Approx(std::sqrt(0.005)));
    CHECK(rep.rows[0].stddev.sen == 0.0);

    const auto j = ablation_json(rep);
    REQUIRE(j["rows"].size() == 4);
    CHECK(j["rows"][2]["name"] == "L_S + L_LPA + L_UPA");
    const std::string text = ablation_text(rep);
    CHECK(text.find("85.00+-7.07") != std::string::npos);
    CHECK(text.find("L_S + L_LPA + L_UPA + L_SPA") != std::string::npos);

    AblationRow single{"x", {}, {7}, {Metrics{0.5, 0.5, 0.5, 0.5, 0.5}}, {}, {}};
    finalize_row(single);
    CHECK(single.stddev.dsc == 0.0);
}

TEST_CASE("spatial shuffles applied to both maps leave the metrics unchanged") {
    Rng rng(77);
    std::bernoulli_distribution b(0.4);
    for (int trial = 0; trial < 50; ++trial) {
        BinaryMask p(6, 6), t(6, 6);
        for (auto& v : p.values) v = b(rng);
        for (auto& v : t.values) v = b(rng);
        std::vector<std::size_t> perm(36);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        BinaryMask ps(6, 6), ts(6, 6);
        for (std::size_t i = 0; i < 36; ++i) {
            ps[i] = p[perm[i]];
            ts[i] = t[perm[i]];
        }
        CHECK(confusion(ps, ts) == confusion(p, t));
    }
}

TEST_CASE("untrained network baseline") {
    // Recorded, not asserted: an untrained net's accuracy depends on which
    // class its initial logits favour. Per image, acc = spe * bg + sen * fg.
    const auto samples = generate_synthetic(16, 64, 77);
    const MetricsRecord r = evaluate(init_params(NetDescriptor{}, 2), samples);
    double prior = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& m = *samples[i].mask;
        const double fg = double(std::count(m.values.begin(), m.values.end(), 1)) / m.size();
        prior += 1.0 - fg;
        const Metrics& e = r.per_image[i];
        CHECK(e.acc == doctest::Approx(e.spe * (1.0 - fg) + e.sen * fg).epsilon(1e-12));
    }
    prior /= samples.size();
    MESSAGE("untrained acc " << r.mean.acc << ", background prior " << prior);
    CHECK(r.mean.acc >= 0.0);
    CHECK(r.mean.acc <= 1.0);
}
