#pragma once

#include <array>
#include <optional>

#include "mspa/grid.hpp"
#include "mspa/proto.hpp"
#include "mspa/tensor.hpp"

namespace mspa {

// Which alignment terms enter the total. The four ablation rows are
// supervised(), +lpa, +lpa+upa and all().
struct LossToggles {
    bool lpa = true;
    bool upa = true;
    bool spa = true;

    static LossToggles supervised() { return {false, false, false}; }
    static LossToggles all() { return {true, true, true}; }
    bool any() const { return lpa || upa || spa; }
    bool operator==(const LossToggles&) const = default;
};

struct RampSchedule {
    float w_max = 0.1f;
    long t_max = 2000;
};

struct LossBundle {
    Tensor l_s;
    std::optional<Tensor> l_lpa;
    std::optional<Tensor> l_upa;
    std::optional<Tensor> l_spa;
    float lambda_t = 0.0f;
    Tensor total;
};

// Mean over pixels of -log(max(p_true, 1e-12)).
Tensor cross_entropy(const Tensor& probs, const BinaryMask& label);
inline Tensor supervised_ce(const Tensor& probs, const BinaryMask& label) { return cross_entropy(probs, label); }

// Mean squared difference between two 2 x H x W probability maps.
Tensor lpa_loss(const Tensor& probs, const Tensor& proto_probs);

inline Tensor upa_loss(const Tensor& proto_probs_labeled, const BinaryMask& truth) {
    return cross_entropy(proto_probs_labeled, truth);
}

// regions[k-1] is the regional prototype of R_k (or nullopt). Each term is
// the mean absolute difference over the feature axis; a term with a missing
// endpoint is dropped, and nullopt is returned when both are.
std::optional<Tensor> spa_loss(const std::array<std::optional<RegionalPrototype>, 4>& regions);

// w_max * exp(-5 (1 - t/t_max)^2), held at w_max once t > t_max.
float ramp_weight(const RampSchedule& schedule, long t);

// total = l_s + lambda * (sum of present, enabled alignment terms).
// Disabled terms are removed from the bundle.
LossBundle total_loss(Tensor l_s, std::optional<Tensor> l_lpa, std::optional<Tensor> l_upa,
                      std::optional<Tensor> l_spa, const LossToggles& toggles, float lambda_t);

}  // namespace mspa
