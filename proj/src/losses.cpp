#include "mspa/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace mspa {

Tensor cross_entropy(const Tensor& probs, const BinaryMask& label) {
    if (probs.rank() != 3 || probs.dim(0) != 2 || probs.dim(1) != label.height || probs.dim(2) != label.width) {
        throw ShapeError("cross_entropy: probs " + shape_str(probs.shape()) + " vs label " + std::to_string(label.height) +
                         "x" + std::to_string(label.width));
    }
    const std::size_t plane = label.size();
    std::vector<float> onehot(2 * plane, 0.0f);
    for (std::size_t i = 0; i < plane; ++i) onehot[(label[i] ? plane : 0) + i] = 1.0f;
    const Tensor selector = Tensor::from(probs.shape(), std::move(onehot));
    const Tensor p_true = sum(mul(probs, selector), 0);
    return scale(mean(log(p_true)), -1.0f);
}

Tensor lpa_loss(const Tensor& probs, const Tensor& proto_probs) {
    if (probs.shape() != proto_probs.shape()) {
        throw ShapeError("lpa_loss: " + shape_str(probs.shape()) + " vs " + shape_str(proto_probs.shape()));
    }
    return mean(square(sub(probs, proto_probs)));
}

std::optional<Tensor> spa_loss(const std::array<std::optional<RegionalPrototype>, 4>& regions) {
    std::optional<Tensor> total;
    const auto term = [&](int a, int b) {
        const auto& pa = regions[a - 1];
        const auto& pb = regions[b - 1];
        if (!pa || !pb) return;
        Tensor t = mean(abs(sub(pa->vector, pb->vector)));
        total = total ? add(*total, t) : t;
    };
    term(3, 4);
    term(2, 1);
    return total;
}

float ramp_weight(const RampSchedule& schedule, long t) {
    if (schedule.t_max <= 0) throw std::invalid_argument("ramp_weight: t_max must be positive");
    if (t < 0) throw std::invalid_argument("ramp_weight: t must be nonnegative");
    if (t >= schedule.t_max) return schedule.w_max;
    const double phase = 1.0 - static_cast<double>(t) / static_cast<double>(schedule.t_max);
    return static_cast<float>(schedule.w_max * std::exp(-5.0 * phase * phase));
}

LossBundle total_loss(Tensor l_s, std::optional<Tensor> l_lpa, std::optional<Tensor> l_upa,
                      std::optional<Tensor> l_spa, const LossToggles& toggles, float lambda_t) {
    if (!l_s.defined()) throw std::invalid_argument("total_loss: supervised loss is required");
    LossBundle b;
    b.l_s = std::move(l_s);
    b.lambda_t = lambda_t;
    if (toggles.lpa) b.l_lpa = std::move(l_lpa);
    if (toggles.upa) b.l_upa = std::move(l_upa);
    if (toggles.spa) b.l_spa = std::move(l_spa);

    std::optional<Tensor> alignment;
    for (const auto* term : {&b.l_lpa, &b.l_upa, &b.l_spa}) {
        if (*term) alignment = alignment ? add(*alignment, **term) : **term;
    }
    b.total = alignment && lambda_t != 0.0f ? add(b.l_s, scale(*alignment, lambda_t)) : b.l_s;
    return b;
}

}  // namespace mspa
