#pragma once

#include <array>
#include <vector>

#include "mspa/grid.hpp"
#include "mspa/tensor.hpp"

namespace mspa {

struct VoteState {
    std::vector<BinaryMask> votes;  // n_valid prototype votes, then the plain prediction
    LabelMap vote_sum;
    BinaryMask pseudo_label;
    int n_valid = 0;
};

// Per-pixel argmax over {g0, g1}; ties go to background.
BinaryMask prototype_vote(const Tensor& g0, const Tensor& g1);

// Binary map from a 2 x H x W probability tensor; ties go to background.
BinaryMask plain_vote(const Tensor& probs);

// Smallest vote sum that yields a foreground pseudo-label when `n_valid`
// prototype votes plus one plain vote are cast: ceil((n_valid + 2) / 2).
int majority_threshold(int n_valid);

// `votes` holds the prototype-based maps followed by the plain one, so
// n_valid = votes.size() - 1.
VoteState fuse_votes(std::vector<BinaryMask> votes);

// mask[k-1] selects pixels with vote_sum == k for k = 1..4. Requires n_valid == 4.
std::array<BinaryMask, 4> region_masks(const VoteState& state);

}  // namespace mspa
