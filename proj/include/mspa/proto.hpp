#pragma once

// Prototype machinery: masked average pooling of a feature map into
// per-class vectors, cosine-similarity classification against them, and
// the soft-weighted regional variant used for self-alignment.

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mspa/grid.hpp"
#include "mspa/tensor.hpp"

namespace mspa {

inline constexpr float kCosineEps = 1e-8f;
inline constexpr float kRegionWeightFloor = 1e-8f;

// Background (class 0) and foreground (class 1) prototypes of one image.
// An absent class holds a zero placeholder and valid[c] == false.
struct PrototypePair {
    std::array<Tensor, 2> p;
    std::array<bool, 2> valid{false, false};
    std::string source_id;

    bool complete() const { return valid[0] && valid[1]; }
};

struct AveragedPrototype {
    std::array<Tensor, 2> p;
    std::array<int, 2> contributing_count{0, 0};

    bool valid(int c) const { return contributing_count[c] > 0; }
    bool complete() const { return valid(0) && valid(1); }
};

// Cosine maps of one feature map against one prototype pair.
struct SimilarityPair {
    std::array<Tensor, 2> g;  // each H x W
    bool usable = false;      // both prototypes valid
};

using SimilarityStack = std::vector<SimilarityPair>;

struct RegionalPrototype {
    Tensor vector;
    int region = 0;
    int pixel_count = 0;
};

class NoPrototypesError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Mean feature column over pixels with mask == c, differentiable w.r.t.
// the feature. Returns nullopt when no pixel carries class c.
std::optional<Tensor> masked_mean(const Tensor& feature, const BinaryMask& mask, int c);

PrototypePair extract_prototypes(const Tensor& feature, const BinaryMask& mask, std::string source_id = {});

// Prototypes from a predicted mask; a class missing from the prediction
// falls back to the ground truth for that class.
PrototypePair extract_prototypes_with_fallback(const Tensor& feature, const BinaryMask& predicted,
                                               const BinaryMask& truth, std::string source_id = {});

// Per-pixel cos(feature column, prototype), with kCosineEps added to both
// norms and the result clamped to [-1, 1].
Tensor cosine_similarity_map(const Tensor& feature, const Tensor& prototype);

SimilarityStack similarity_stack(const Tensor& feature, const std::vector<PrototypePair>& pairs);

// softmax over c of the summed similarities of every usable pair.
// Throws NoPrototypesError when no pair is usable.
Tensor aggregate_probability(const SimilarityStack& sims);

AveragedPrototype average_prototypes(const std::vector<PrototypePair>& pairs);

// Probability map of a feature map under a single complete prototype pair.
Tensor pair_probability(const Tensor& feature, const std::array<Tensor, 2>& pair);

// Mean of feature columns over {vote_sum == k}, each weighted by
// probs[weight_class]. nullopt if the region is empty or its total weight
// is below kRegionWeightFloor.
std::optional<RegionalPrototype> regional_prototype(const Tensor& feature, const Tensor& probs,
                                                    const LabelMap& vote_sum, int k, int weight_class);

// Foreground regions (3, 4) weight by class 1, background regions by class 0.
int region_weight_class(int k);

}  // namespace mspa
