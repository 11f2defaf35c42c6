#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mspa/tensor.hpp"

namespace mspa {

// U-shaped encoder-decoder. Each encoder stage is two 3x3 conv + relu with
// a 2x2 max-pool between stages; the decoder mirrors it with nearest
// upsampling and skip concatenation. The topmost decoder stage has width
// `feature_dim` and its activation is the embedding used for prototypes.
struct NetDescriptor {
    std::vector<int> widths{16, 32, 64};
    int feature_dim = 32;

    void validate() const;
    // Spatial extents must be multiples of this.
    int spatial_divisor() const;
    bool operator==(const NetDescriptor&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct SegNetParams {
    NetDescriptor descriptor;
    std::vector<NamedTensor> tensors;

    const Tensor& get(const std::string& name) const;
    std::size_t parameter_count() const;
    void zero_grad();
    SegNetParams clone() const;
};

struct NetOutput {
    Tensor feature;  // D x H x W
    Tensor logits;   // 2 x H x W
    Tensor probs;    // channel_softmax(logits)
};

// Kernels ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero.
SegNetParams init_params(const NetDescriptor& descriptor, std::uint64_t seed);

// Ordered (name, shape) layout implied by a descriptor.
std::vector<std::pair<std::string, Shape>> param_layout(const NetDescriptor& descriptor);

NetOutput forward(const SegNetParams& params, const Tensor& image);

}  // namespace mspa
