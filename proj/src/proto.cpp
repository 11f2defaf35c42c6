#include "mspa/proto.hpp"

#include <algorithm>
#include <cmath>

namespace mspa {

using autograd::grad_sink;
using autograd::record;

namespace {

void require_feature(const Tensor& feature, const char* what) {
    if (feature.rank() != 3) throw ShapeError(std::string(what) + ": feature must be D x H x W, got " + shape_str(feature.shape()));
}

template <typename T>
void require_spatial(const Tensor& feature, const Grid<T>& grid, const char* what) {
    if (feature.dim(1) != grid.height || feature.dim(2) != grid.width) {
        throw ShapeError(std::string(what) + ": feature " + shape_str(feature.shape()) + " vs map " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width));
    }
}

}  // namespace

std::optional<Tensor> masked_mean(const Tensor& feature, const BinaryMask& mask, int c) {
    require_feature(feature, "masked_mean");
    require_spatial(feature, mask, "masked_mean");
    const int depth = feature.dim(0);
    const std::size_t plane = mask.size();
    std::vector<std::uint32_t> selected;
    for (std::size_t i = 0; i < plane; ++i)
        if (mask[i] == c) selected.push_back(static_cast<std::uint32_t>(i));
    if (selected.empty()) return std::nullopt;

    auto f = feature.data();
    const double inv = 1.0 / static_cast<double>(selected.size());
    std::vector<float> out(depth);
    for (int d = 0; d < depth; ++d) {
        const float* row = f.data() + static_cast<std::size_t>(d) * plane;
        double acc = 0.0;
        for (auto i : selected) acc += row[i];
        out[d] = static_cast<float>(acc * inv);
    }
    return record({depth}, std::move(out), {feature},
                  [feature, selected = std::move(selected), depth, plane](std::span<const float> g) {
                      auto gf = grad_sink(feature);
                      if (gf.empty()) return;
                      const float inv = 1.0f / static_cast<float>(selected.size());
                      for (int d = 0; d < depth; ++d) {
                          float* row = gf.data() + static_cast<std::size_t>(d) * plane;
                          const float gd = g[d] * inv;
                          for (auto i : selected) row[i] += gd;
                      }
                  });
}

PrototypePair extract_prototypes(const Tensor& feature, const BinaryMask& mask, std::string source_id) {
    require_feature(feature, "extract_prototypes");
    PrototypePair pair;
    pair.source_id = std::move(source_id);
    for (int c = 0; c < 2; ++c) {
        auto m = masked_mean(feature, mask, c);
        pair.valid[c] = m.has_value();
        pair.p[c] = m ? *m : Tensor::zeros({feature.dim(0)});
    }
    return pair;
}

PrototypePair extract_prototypes_with_fallback(const Tensor& feature, const BinaryMask& predicted,
                                               const BinaryMask& truth, std::string source_id) {
    require_feature(feature, "extract_prototypes");
    PrototypePair pair;
    pair.source_id = std::move(source_id);
    for (int c = 0; c < 2; ++c) {
        auto m = masked_mean(feature, predicted, c);
        if (!m) m = masked_mean(feature, truth, c);
        pair.valid[c] = m.has_value();
        pair.p[c] = m ? *m : Tensor::zeros({feature.dim(0)});
    }
    return pair;
}

Tensor cosine_similarity_map(const Tensor& feature, const Tensor& prototype) {
    require_feature(feature, "cosine_similarity_map");
    const int depth = feature.dim(0);
    if (prototype.rank() != 1 || prototype.dim(0) != depth) {
        throw ShapeError("cosine_similarity_map: prototype " + shape_str(prototype.shape()) + " does not match feature depth " +
                         std::to_string(depth));
    }
    const int h = feature.dim(1), w = feature.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto f = feature.data();
    auto p = prototype.data();

    double pp = 0.0;
    for (float v : p) pp += double(v) * v;
    const float p_norm = static_cast<float>(std::sqrt(pp));

    std::vector<float> dot(plane, 0.0f), f_norm(plane, 0.0f), out(plane);
    {
        std::vector<double> dacc(plane, 0.0), nacc(plane, 0.0);
        for (int d = 0; d < depth; ++d) {
            const float* row = f.data() + static_cast<std::size_t>(d) * plane;
            const double pd = p[d];
            for (std::size_t i = 0; i < plane; ++i) {
                dacc[i] += row[i] * pd;
                nacc[i] += double(row[i]) * row[i];
            }
        }
        for (std::size_t i = 0; i < plane; ++i) {
            dot[i] = static_cast<float>(dacc[i]);
            f_norm[i] = static_cast<float>(std::sqrt(nacc[i]));
            const float v = dot[i] / ((f_norm[i] + kCosineEps) * (p_norm + kCosineEps));
            out[i] = std::clamp(v, -1.0f, 1.0f);
        }
    }
    std::vector<float> clamped = out;
    return record(
        {h, w}, std::move(out), {feature, prototype},
        [feature, prototype, dot = std::move(dot), f_norm = std::move(f_norm), clamped = std::move(clamped), p_norm,
         depth, plane](std::span<const float> g) {
            auto gf = grad_sink(feature);
            auto gp = grad_sink(prototype);
            auto f = feature.data();
            auto p = prototype.data();
            const float b = p_norm + kCosineEps;
            std::vector<double> gp_acc(gp.empty() ? 0 : depth, 0.0);
            for (std::size_t i = 0; i < plane; ++i) {
                if (g[i] == 0.0f || std::fabs(clamped[i]) >= 1.0f) continue;
                const float a = f_norm[i] + kCosineEps;
                const float inv_ab = 1.0f / (a * b);
                // d/df: p/(ab) - dot * f / (a^2 b |f|);  d/dp: f/(ab) - dot * p / (a b^2 |p|)
                const float cf = f_norm[i] > 0.0f ? dot[i] / (a * a * b * f_norm[i]) : 0.0f;
                const float cp = p_norm > 0.0f ? dot[i] / (a * b * b * p_norm) : 0.0f;
                for (int d = 0; d < depth; ++d) {
                    const std::size_t idx = static_cast<std::size_t>(d) * plane + i;
                    if (!gf.empty()) gf[idx] += g[i] * (p[d] * inv_ab - cf * f[idx]);
                    if (!gp.empty()) gp_acc[d] += double(g[i]) * (f[idx] * inv_ab - cp * p[d]);
                }
            }
            for (std::size_t d = 0; d < gp_acc.size(); ++d) gp[d] += static_cast<float>(gp_acc[d]);
        });
}

SimilarityStack similarity_stack(const Tensor& feature, const std::vector<PrototypePair>& pairs) {
    SimilarityStack sims;
    sims.reserve(pairs.size());
    for (const auto& pair : pairs) {
        SimilarityPair s;
        s.usable = pair.complete();
        if (s.usable) {
            for (int c = 0; c < 2; ++c) s.g[c] = cosine_similarity_map(feature, pair.p[c]);
        }
        sims.push_back(std::move(s));
    }
    return sims;
}

Tensor aggregate_probability(const SimilarityStack& sims) {
    std::array<Tensor, 2> total;
    for (const auto& s : sims) {
        if (!s.usable) continue;
        for (int c = 0; c < 2; ++c) total[c] = total[c].defined() ? add(total[c], s.g[c]) : s.g[c];
    }
    if (!total[0].defined()) throw NoPrototypesError("aggregate_probability: no prototype pair with both classes");
    return channel_softmax(stack({total[0], total[1]}));
}

AveragedPrototype average_prototypes(const std::vector<PrototypePair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("average_prototypes: empty list");
    AveragedPrototype avg;
    const int depth = pairs.front().p[0].dim(0);
    for (int c = 0; c < 2; ++c) {
        Tensor acc;
        int count = 0;
        for (const auto& pair : pairs) {
            if (!pair.valid[c]) continue;
            acc = acc.defined() ? add(acc, pair.p[c]) : pair.p[c];
            ++count;
        }
        avg.contributing_count[c] = count;
        avg.p[c] = count > 0 ? scale(acc, 1.0f / static_cast<float>(count)) : Tensor::zeros({depth});
    }
    return avg;
}

Tensor pair_probability(const Tensor& feature, const std::array<Tensor, 2>& pair) {
    SimilarityStack sims(1);
    sims[0].usable = true;
    for (int c = 0; c < 2; ++c) sims[0].g[c] = cosine_similarity_map(feature, pair[c]);
    return aggregate_probability(sims);
}

std::optional<RegionalPrototype> regional_prototype(const Tensor& feature, const Tensor& probs,
                                                    const LabelMap& vote_sum, int k, int weight_class) {
    require_feature(feature, "regional_prototype");
    require_spatial(feature, vote_sum, "regional_prototype");
    if (k < 1 || k > 4) throw std::invalid_argument("regional_prototype: region index must be in 1..4, got " + std::to_string(k));
    if (weight_class != 0 && weight_class != 1) throw std::invalid_argument("regional_prototype: weight class must be 0 or 1");
    if (probs.rank() != 3 || probs.dim(0) != 2 || probs.dim(1) != vote_sum.height || probs.dim(2) != vote_sum.width) {
        throw ShapeError("regional_prototype: probs must be 2 x H x W matching the feature, got " + shape_str(probs.shape()));
    }
    const int depth = feature.dim(0);
    const std::size_t plane = vote_sum.size();
    std::vector<std::uint32_t> region;
    for (std::size_t i = 0; i < plane; ++i)
        if (vote_sum[i] == k) region.push_back(static_cast<std::uint32_t>(i));
    if (region.empty()) return std::nullopt;

    auto f = feature.data();
    const float* weights = probs.data().data() + static_cast<std::size_t>(weight_class) * plane;
    double total = 0.0;
    for (auto i : region) total += weights[i];
    if (total < kRegionWeightFloor) return std::nullopt;

    std::vector<float> out(depth);
    for (int d = 0; d < depth; ++d) {
        const float* row = f.data() + static_cast<std::size_t>(d) * plane;
        double acc = 0.0;
        for (auto i : region) acc += double(weights[i]) * row[i];
        out[d] = static_cast<float>(acc / total);
    }
    std::vector<float> centroid = out;
    const int pixel_count = static_cast<int>(region.size());
    Tensor vec = record({depth}, std::move(out), {feature, probs},
                        [feature, probs, region = std::move(region), centroid = std::move(centroid),
                         total = static_cast<float>(total), weight_class, depth, plane](std::span<const float> g) {
                            auto gf = grad_sink(feature);
                            auto gw = grad_sink(probs);
                            auto f = feature.data();
                            const float* weights = probs.data().data() + static_cast<std::size_t>(weight_class) * plane;
                            const float inv = 1.0f / total;
                            if (!gf.empty()) {
                                for (int d = 0; d < depth; ++d) {
                                    float* row = gf.data() + static_cast<std::size_t>(d) * plane;
                                    const float gd = g[d] * inv;
                                    for (auto i : region) row[i] += gd * weights[i];
                                }
                            }
                            if (!gw.empty()) {
                                float* wrow = gw.data() + static_cast<std::size_t>(weight_class) * plane;
                                for (auto i : region) {
                                    double acc = 0.0;
                                    for (int d = 0; d < depth; ++d)
                                        acc += double(g[d]) * (f[static_cast<std::size_t>(d) * plane + i] - centroid[d]);
                                    wrow[i] += static_cast<float>(acc) * inv;
                                }
                            }
                        });
    return RegionalPrototype{vec, k, pixel_count};
}

int region_weight_class(int k) { return k >= 3 ? 1 : 0; }

}  // namespace mspa
