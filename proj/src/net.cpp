#include "mspa/net.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace mspa {

void NetDescriptor::validate() const {
    if (widths.size() < 2) throw std::invalid_argument("net descriptor: need at least 2 stages, got " + std::to_string(widths.size()));
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (widths[i] <= 0) throw std::invalid_argument("net descriptor: widths[" + std::to_string(i) + "] must be positive");
    }
    if (feature_dim < 2) throw std::invalid_argument("net descriptor: feature_dim must be >= 2, got " + std::to_string(feature_dim));
    if (widths.size() > 8) throw std::invalid_argument("net descriptor: at most 8 stages");
}

int NetDescriptor::spatial_divisor() const { return 1 << (static_cast<int>(widths.size()) - 1); }

const Tensor& SegNetParams::get(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.value;
    throw std::out_of_range("no parameter named '" + name + "'");
}

std::size_t SegNetParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.numel();
    return n;
}

void SegNetParams::zero_grad() {
    for (auto& t : tensors) t.value.zero_grad();
}

SegNetParams SegNetParams::clone() const {
    SegNetParams out{descriptor, {}};
    for (const auto& t : tensors) out.tensors.push_back({t.name, t.value.clone()});
    return out;
}

namespace {

void add_conv(std::vector<std::pair<std::string, Shape>>& layout, const std::string& prefix, int out, int in, int k) {
    layout.emplace_back(prefix + ".weight", Shape{out, in, k, k});
    layout.emplace_back(prefix + ".bias", Shape{out});
}

int decoder_width(const NetDescriptor& d, std::size_t stage) {
    return stage == 0 ? d.feature_dim : d.widths[stage];
}

}  // namespace

std::vector<std::pair<std::string, Shape>> param_layout(const NetDescriptor& d) {
    d.validate();
    std::vector<std::pair<std::string, Shape>> layout;
    const std::size_t stages = d.widths.size();
    int in = 1;
    for (std::size_t i = 0; i < stages; ++i) {
        const std::string p = "enc" + std::to_string(i);
        add_conv(layout, p + ".conv1", d.widths[i], in, 3);
        add_conv(layout, p + ".conv2", d.widths[i], d.widths[i], 3);
        in = d.widths[i];
    }
    for (std::size_t i = stages - 1; i-- > 0;) {
        const std::string p = "dec" + std::to_string(i);
        const int out = decoder_width(d, i);
        add_conv(layout, p + ".conv1", out, in + d.widths[i], 3);
        add_conv(layout, p + ".conv2", out, out, 3);
        in = out;
    }
    add_conv(layout, "head", 2, d.feature_dim, 1);
    return layout;
}

SegNetParams init_params(const NetDescriptor& descriptor, std::uint64_t seed) {
    const auto layout = param_layout(descriptor);
    std::mt19937_64 rng(seed);
    SegNetParams params{descriptor, {}};
    for (const auto& [name, shape] : layout) {
        std::vector<float> values(shape_numel(shape), 0.0f);
        if (shape.size() == 4) {
            const int fan_in = shape[1] * shape[2] * shape[3];
            const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
            std::uniform_real_distribution<float> dist(-bound, bound);
            for (auto& v : values) v = dist(rng);
        }
        params.tensors.push_back({name, Tensor::from(shape, std::move(values), true)});
    }
    return params;
}

namespace {

Tensor conv_relu(const SegNetParams& p, const std::string& prefix, const Tensor& x) {
    return relu(conv2d(x, p.get(prefix + ".weight"), p.get(prefix + ".bias"), 1, 1));
}

Tensor block(const SegNetParams& p, const std::string& prefix, const Tensor& x) {
    return conv_relu(p, prefix + ".conv2", conv_relu(p, prefix + ".conv1", x));
}

}  // namespace

NetOutput forward(const SegNetParams& params, const Tensor& image) {
    const auto& d = params.descriptor;
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw ShapeError("forward: image must be 1 x H x W, got " + shape_str(image.shape()));
    }
    const int div = d.spatial_divisor();
    if (image.dim(1) % div != 0 || image.dim(2) % div != 0) {
        throw ShapeError("forward: image " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                         " must have height and width divisible by " + std::to_string(div));
    }
    const std::size_t stages = d.widths.size();
    std::vector<Tensor> skips;
    Tensor x = image;
    for (std::size_t i = 0; i < stages; ++i) {
        if (i > 0) x = max_pool2x2(x);
        x = block(params, "enc" + std::to_string(i), x);
        skips.push_back(x);
    }
    for (std::size_t i = stages - 1; i-- > 0;) {
        x = concat_channels({upsample_nearest2x(x), skips[i]});
        x = block(params, "dec" + std::to_string(i), x);
    }
    NetOutput out;
    out.feature = x;
    out.logits = conv2d(x, params.get("head.weight"), params.get("head.bias"), 1, 0);
    out.probs = channel_softmax(out.logits);
    return out;
}

}  // namespace mspa
