#include "mspa/pseudo.hpp"

#include <stdexcept>
#include <string>

namespace mspa {

BinaryMask prototype_vote(const Tensor& g0, const Tensor& g1) {
    if (g0.rank() != 2 || g0.shape() != g1.shape()) {
        throw ShapeError("prototype_vote: similarity maps must share an H x W shape, got " + shape_str(g0.shape()) +
                         " and " + shape_str(g1.shape()));
    }
    BinaryMask out(g0.dim(0), g0.dim(1));
    auto a = g0.data();
    auto b = g1.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = b[i] > a[i] ? 1 : 0;
    return out;
}

BinaryMask plain_vote(const Tensor& probs) {
    if (probs.rank() != 3 || probs.dim(0) != 2) throw ShapeError("plain_vote: expected 2 x H x W, got " + shape_str(probs.shape()));
    const LabelMap arg = argmax_channels(probs);
    BinaryMask out(arg.height, arg.width);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::uint8_t>(arg[i]);
    return out;
}

int majority_threshold(int n_valid) { return (n_valid + 2 + 1) / 2; }

VoteState fuse_votes(std::vector<BinaryMask> votes) {
    if (votes.empty()) throw std::invalid_argument("fuse_votes: need at least one vote map");
    const int h = votes[0].height, w = votes[0].width;
    for (std::size_t i = 0; i < votes.size(); ++i) {
        if (votes[i].height != h || votes[i].width != w) {
            throw std::invalid_argument("fuse_votes: vote " + std::to_string(i) + " is " + std::to_string(votes[i].height) +
                                        "x" + std::to_string(votes[i].width) + ", expected " + std::to_string(h) + "x" +
                                        std::to_string(w));
        }
    }
    VoteState state;
    state.n_valid = static_cast<int>(votes.size()) - 1;
    state.vote_sum = LabelMap(h, w, 0);
    state.pseudo_label = BinaryMask(h, w, 0);
    for (const auto& v : votes)
        for (std::size_t i = 0; i < v.size(); ++i) state.vote_sum[i] += v[i] ? 1 : 0;
    const int threshold = majority_threshold(state.n_valid);
    for (std::size_t i = 0; i < state.vote_sum.size(); ++i) state.pseudo_label[i] = state.vote_sum[i] >= threshold ? 1 : 0;
    state.votes = std::move(votes);
    return state;
}

std::array<BinaryMask, 4> region_masks(const VoteState& state) {
    if (state.n_valid != 4) {
        throw std::invalid_argument("region_masks: regions are defined for 4 prototype votes, got " + std::to_string(state.n_valid));
    }
    const auto& s = state.vote_sum;
    std::array<BinaryMask, 4> masks;
    for (auto& m : masks) m = BinaryMask(s.height, s.width, 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const int k = s[i];
        if (k >= 1 && k <= 4) masks[k - 1][i] = 1;
    }
    return masks;
}

}  // namespace mspa
