#include <cmath>

#include "checks.hpp"
#include "doctest.h"
#include "mspa/losses.hpp"

using namespace mspa;

TEST_CASE("cross-entropy reference values") {
    BinaryMask label(2, 2);
    label.values = {1, 0, 1, 0};
    const Tensor one_hot = Tensor::from({2, 2, 2}, {0, 1, 0, 1, 1, 0, 1, 0});
    CHECK(cross_entropy(one_hot, label).item() < 1e-6f);
    CHECK(cross_entropy(Tensor::full({2, 2, 2}, 0.5f), label).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(cross_entropy(Tensor::full({2, 2, 2}, 0.5f), label).item() == doctest::Approx(0.6931).epsilon(1e-4));
    const Tensor p9 = Tensor::from({2, 2, 2}, {0.1f, 0.9f, 0.1f, 0.9f, 0.9f, 0.1f, 0.9f, 0.1f});
    CHECK(cross_entropy(p9, label).item() == doctest::Approx(0.1054).epsilon(1e-3));
    // A zero probability on the true class is clamped, not infinite.
    CHECK(std::isfinite(cross_entropy(Tensor::from({2, 1, 1}, {1, 0}), BinaryMask(1, 1, 1)).item()));
}

TEST_CASE("prototype-alignment losses") {
    const Tensor a = Tensor::full({2, 2, 2}, 0.75f);
    CHECK(lpa_loss(a, a).item() == 0.0f);
    CHECK(lpa_loss(a, Tensor::full({2, 2, 2}, 0.25f)).item() == doctest::Approx(0.25));
    std::vector<float> v(8, 0.5f);
    v[0] = 1.5f;
    v[4] = 1.5f;
    CHECK(lpa_loss(Tensor::full({2, 2, 2}, 0.5f), Tensor::from({2, 2, 2}, v)).item() == doctest::Approx(0.25));

    Rng rng(2);
    std::uniform_real_distribution<float> u(0, 1);
    std::vector<float> x(18), y(18);
    for (auto& e : x) e = u(rng);
    for (auto& e : y) e = u(rng);
    const Tensor tx = Tensor::from({2, 3, 3}, x), ty = Tensor::from({2, 3, 3}, y);
    CHECK(lpa_loss(tx, ty).item() == lpa_loss(ty, tx).item());

    BinaryMask truth(1, 2);
    truth.values = {1, 0};
    CHECK(upa_loss(Tensor::full({2, 1, 2}, 0.5f), truth).item() == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("prototype classifying a labeled image beats the uniform baseline") {
    // 4x4 image whose left half is foreground with feature (1,0), right half (0,1).
    std::vector<float> f(2 * 16);
    BinaryMask truth(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const bool fg = x < 2;
            truth.at(y, x) = fg;
            f[y * 4 + x] = fg ? 1.0f : 0.0f;
            f[16 + y * 4 + x] = fg ? 0.0f : 1.0f;
        }
    const Tensor feature = Tensor::from({2, 4, 4}, f);
    const Tensor probs = pair_probability(feature, {Tensor::from({2}, {0, 1}), Tensor::from({2}, {1, 0})});
    CHECK(upa_loss(probs, truth).item() < std::log(2.0f));
}

TEST_CASE("self-alignment loss") {
    const Tensor v = Tensor::from({3}, {0.2f, -1.0f, 4.0f});
    std::array<std::optional<RegionalPrototype>, 4> same;
    for (int k = 0; k < 4; ++k) same[k] = RegionalPrototype{v, k + 1, 1};
    CHECK(spa_loss(same)->item() == 0.0f);

    std::array<std::optional<RegionalPrototype>, 4> fg_only;
    fg_only[2] = RegionalPrototype{Tensor::from({2}, {1, 0}), 3, 1};
    fg_only[3] = RegionalPrototype{Tensor::from({2}, {0, 1}), 4, 1};
    CHECK(spa_loss(fg_only)->item() == doctest::Approx(1.0));

    std::array<std::optional<RegionalPrototype>, 4> bg_only;
    bg_only[0] = RegionalPrototype{v, 1, 1};
    bg_only[1] = RegionalPrototype{v, 2, 1};
    CHECK(spa_loss(bg_only)->item() == 0.0f);

    std::array<std::optional<RegionalPrototype>, 4> none;
    none[0] = RegionalPrototype{v, 1, 1};
    none[3] = RegionalPrototype{v, 4, 1};
    CHECK_FALSE(spa_loss(none));
}

TEST_CASE("ramp-up weight") {
    const RampSchedule s{0.1f, 2000};
    CHECK(ramp_weight(s, 2000) == doctest::Approx(0.1));
    CHECK(ramp_weight(s, 5000) == doctest::Approx(0.1));
    CHECK(ramp_weight(s, 0) / 0.1 == doctest::Approx(0.0067379).epsilon(1e-4));
    CHECK(ramp_weight(s, 1000) / 0.1 == doctest::Approx(0.2865).epsilon(1e-3));
    for (long t = 1; t <= 2000; ++t) CHECK(ramp_weight(s, t) >= ramp_weight(s, t - 1));
    const auto r = checks::ramp_curve();
    INFO(r.detail);
    CHECK(r.passed);
}

TEST_CASE("total loss combination") {
    const auto s = [](float v) { return Tensor::scalar(v); };
    const LossBundle b = total_loss(s(1.0f), s(0.2f), s(0.3f), s(0.1f), LossToggles::all(), 0.1f);
    CHECK(b.total.item() == doctest::Approx(1.06));

    const LossBundle off = total_loss(s(1.0f), s(0.2f), s(0.3f), s(0.1f), LossToggles::supervised(), 0.1f);
    CHECK(off.total.item() == 1.0f);
    CHECK_FALSE(off.l_lpa);
    CHECK_FALSE(off.l_upa);
    CHECK_FALSE(off.l_spa);

    const LossBundle zero = total_loss(s(1.0f), s(0.2f), s(0.3f), s(0.1f), LossToggles::all(), 0.0f);
    CHECK(zero.total.item() == 1.0f);

    const LossBundle partial = total_loss(s(1.0f), s(0.2f), std::nullopt, s(0.1f), LossToggles{true, true, false}, 0.5f);
    CHECK(partial.total.item() == doctest::Approx(1.1));
    CHECK_FALSE(partial.l_upa);
    CHECK_FALSE(partial.l_spa);
}
