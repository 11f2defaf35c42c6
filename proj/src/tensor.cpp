#include "mspa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gemm.hpp"

namespace mspa {

struct TensorAccess {
    static Tensor wrap(std::shared_ptr<detail::Storage> s) { return Tensor(std::move(s)); }
    static const std::shared_ptr<detail::Storage>& storage(const Tensor& t) { return t.impl_; }
};

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

namespace {

std::shared_ptr<detail::Storage> make_storage(Shape shape, std::vector<float> values, bool requires_grad) {
    if (shape.size() > 4) throw ShapeError("tensor rank above 4: " + shape_str(shape));
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " elements, got " + std::to_string(values.size()));
    }
    auto s = std::make_shared<detail::Storage>();
    s->shape = std::move(shape);
    s->data = std::move(values);
    s->requires_grad = requires_grad;
    return s;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    std::vector<float> v(shape_numel(shape), value);
    return Tensor(make_storage(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
    return Tensor(make_storage(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({}, {value}, requires_grad); }

float Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

Tensor Tensor::clone() const { return from(impl_->shape, impl_->data, impl_->requires_grad); }

Tensor Tensor::detach() const { return from(impl_->shape, impl_->data, false); }

// ---- tape ---------------------------------------------------------------

namespace autograd {
namespace {

struct Node {
    std::shared_ptr<detail::Storage> out;
    BackwardFn fn;
};

thread_local std::vector<Node> t_tape;
thread_local bool t_grad_enabled = true;

}  // namespace

bool grad_enabled() { return t_grad_enabled; }
std::size_t tape_size() { return t_tape.size(); }
void clear() { t_tape.clear(); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor record(Shape shape, std::vector<float> values, const std::vector<Tensor>& inputs, BackwardFn backward) {
    bool track = false;
    if (t_grad_enabled) {
        for (const auto& in : inputs) track = track || (in.defined() && in.requires_grad());
    }
    auto storage = make_storage(std::move(shape), std::move(values), track);
    if (track) t_tape.push_back(Node{storage, std::move(backward)});
    return TensorAccess::wrap(std::move(storage));
}

std::span<float> grad_sink(const Tensor& t) {
    const auto& s = TensorAccess::storage(t);
    if (!s || !s->requires_grad) return {};
    if (s->grad.empty()) s->grad.assign(s->data.size(), 0.0f);
    return s->grad;
}

void backward(const Tensor& scalar_loss) {
    if (!scalar_loss.defined() || scalar_loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " +
                         (scalar_loss.defined() ? shape_str(scalar_loss.shape()) : std::string("<undefined>")));
    }
    if (scalar_loss.requires_grad()) {
        auto g = grad_sink(scalar_loss);
        g[0] += 1.0f;
        for (auto it = t_tape.rbegin(); it != t_tape.rend(); ++it) {
            if (!it->out->grad.empty()) it->fn(it->out->grad);
        }
    }
    t_tape.clear();
}

}  // namespace autograd

using autograd::grad_sink;
using autograd::record;

// ---- elementwise --------------------------------------------------------

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    const std::size_t na = a.numel(), nb = b.numel();
    const bool same = a.shape() == b.shape();
    if (!same && na != 1 && nb != 1) {
        throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const Shape out_shape = (same || nb == 1) ? a.shape() : b.shape();
    const std::size_t n = std::max(na, nb);
    const std::size_t sa = na == 1 ? 0 : 1, sb = nb == 1 ? 0 : 1;
    auto da = a.data();
    auto db = b.data();
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float x = da[i * sa], y = db[i * sb];
        switch (op) {
            case BinOp::Add: out[i] = x + y; break;
            case BinOp::Sub: out[i] = x - y; break;
            case BinOp::Mul: out[i] = x * y; break;
        }
    }
    return record(out_shape, std::move(out), {a, b}, [a, b, op, n, sa, sb](std::span<const float> g) {
        auto ga = grad_sink(a);
        auto gb = grad_sink(b);
        auto va = a.data();
        auto vb = b.data();
        if (!ga.empty()) {
            if (sa == 0) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += op == BinOp::Mul ? double(g[i]) * vb[i * sb] : double(g[i]);
                ga[0] += static_cast<float>(acc);
            } else {
                for (std::size_t i = 0; i < n; ++i) ga[i] += op == BinOp::Mul ? g[i] * vb[i * sb] : g[i];
            }
        }
        if (!gb.empty()) {
            const float sign = op == BinOp::Sub ? -1.0f : 1.0f;
            if (sb == 0) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += op == BinOp::Mul ? double(g[i]) * va[i * sa] : double(g[i]);
                gb[0] += sign * static_cast<float>(acc);
            } else {
                for (std::size_t i = 0; i < n; ++i) gb[i] += op == BinOp::Mul ? g[i] * va[i * sa] : sign * g[i];
            }
        }
    });
}

// Pointwise unary op; `deriv(x, y)` gives dy/dx from input and output.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
    auto dx = x.data();
    std::vector<float> out(dx.size());
    for (std::size_t i = 0; i < dx.size(); ++i) out[i] = fwd(dx[i]);
    // Output values are copied into the closure; capturing the result
    // handle would make its storage own itself through the tape node.
    std::vector<float> y = out;
    return record(x.shape(), std::move(out), {x}, [x, y = std::move(y), deriv](std::span<const float> g) {
        auto gx = grad_sink(x);
        if (gx.empty()) return;
        auto vx = x.data();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv(vx[i], y[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor relu(const Tensor& x) {
    return unary(
        x, [](float v) { return v > 0.0f ? v : 0.0f; }, [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor exp(const Tensor& x) {
    return unary(
        x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(
        x, [](float v) { return std::log(std::max(v, kLogFloor)); },
        [](float v, float) { return v > kLogFloor ? 1.0f / v : 0.0f; });
}

Tensor abs(const Tensor& x) {
    return unary(
        x, [](float v) { return std::fabs(v); },
        [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor square(const Tensor& x) {
    return unary(
        x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor scale(const Tensor& x, float factor) {
    return unary(
        x, [factor](float v) { return v * factor; }, [factor](float, float) { return factor; });
}

// ---- reductions ---------------------------------------------------------

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    return record({}, {static_cast<float>(acc)}, {x}, [x](std::span<const float> g) {
        auto gx = grad_sink(x);
        for (auto& v : gx) v += g[0];
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean over empty tensor");
    return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor sum(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0 || axis >= r) throw ShapeError("sum: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    const Shape& s = x.shape();
    const std::size_t n = static_cast<std::size_t>(s[axis]);
    if (n == 0) throw ShapeError("sum: empty reduction axis " + std::to_string(axis));
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
    Shape out_shape;
    for (int i = 0; i < r; ++i)
        if (i != axis) out_shape.push_back(s[i]);
    auto dx = x.data();
    std::vector<float> out(outer * inner);
    std::vector<double> acc(inner);
    for (std::size_t o = 0; o < outer; ++o) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            const float* row = dx.data() + (o * n + k) * inner;
            for (std::size_t i = 0; i < inner; ++i) acc[i] += row[i];
        }
        for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = static_cast<float>(acc[i]);
    }
    return record(out_shape, std::move(out), {x}, [x, outer, n, inner](std::span<const float> g) {
        auto gx = grad_sink(x);
        if (gx.empty()) return;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t i = 0; i < inner; ++i) gx[(o * n + k) * inner + i] += g[o * inner + i];
    });
}

Tensor mean(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) throw ShapeError("mean: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    return scale(sum(x, axis), 1.0f / static_cast<float>(x.dim(axis)));
}

LabelMap argmax_channels(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("argmax_channels expects CxHxW, got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (c == 0) throw ShapeError("argmax_channels: empty channel axis");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto d = x.data();
    LabelMap out(h, w, 0);
    for (std::size_t p = 0; p < plane; ++p) {
        int best = 0;
        float best_v = d[p];
        for (int k = 1; k < c; ++k) {
            const float v = d[k * plane + p];
            if (v > best_v) {
                best_v = v;
                best = k;
            }
        }
        out[p] = best;
    }
    return out;
}

// ---- structural ---------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
    }
    std::vector<float> v(x.data().begin(), x.data().end());
    return record(std::move(shape), std::move(v), {x}, [x](std::span<const float> g) {
        auto gx = grad_sink(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const int h = parts[0].rank() == 3 ? parts[0].dim(1) : -1;
    const int w = parts[0].rank() == 3 ? parts[0].dim(2) : -1;
    int channels = 0;
    for (const auto& p : parts) {
        if (p.rank() != 3) throw ShapeError("concat_channels expects CxHxW, got " + shape_str(p.shape()));
        if (p.dim(1) != h) throw ShapeError("concat_channels: height mismatch " + shape_str(p.shape()));
        if (p.dim(2) != w) throw ShapeError("concat_channels: width mismatch " + shape_str(p.shape()));
        channels += p.dim(0);
    }
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(channels) * h * w);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return record({channels, h, w}, std::move(out), parts, [parts](std::span<const float> g) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            auto gp = grad_sink(p);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
            offset += p.numel();
        }
    });
}

Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("stack: no inputs");
    const Shape& s = parts[0].shape();
    if (s.size() >= 4) throw ShapeError("stack: result would exceed rank 4");
    for (const auto& p : parts)
        if (p.shape() != s) throw ShapeError("stack: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s));
    Shape out_shape{static_cast<int>(parts.size())};
    out_shape.insert(out_shape.end(), s.begin(), s.end());
    std::vector<float> out;
    out.reserve(shape_numel(out_shape));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return record(std::move(out_shape), std::move(out), parts, [parts](std::span<const float> g) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            auto gp = grad_sink(p);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
            offset += p.numel();
        }
    });
}

Tensor select(const Tensor& x, int i) {
    if (x.rank() == 0) throw ShapeError("select on a scalar");
    if (i < 0 || i >= x.dim(0)) throw ShapeError("select: index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
    Shape out_shape(x.shape().begin() + 1, x.shape().end());
    const std::size_t block = shape_numel(out_shape);
    const std::size_t offset = static_cast<std::size_t>(i) * block;
    std::vector<float> out(x.data().begin() + offset, x.data().begin() + offset + block);
    return record(std::move(out_shape), std::move(out), {x}, [x, offset, block](std::span<const float> g) {
        auto gx = grad_sink(x);
        if (gx.empty()) return;
        for (std::size_t k = 0; k < block; ++k) gx[offset + k] += g[k];
    });
}

// ---- image ops ----------------------------------------------------------

Tensor channel_softmax(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("channel_softmax expects CxHxW, got " + shape_str(x.shape()));
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    auto d = x.data();
    std::vector<float> out(d.size());
    for (std::size_t p = 0; p < plane; ++p) {
        float m = d[p];
        for (int k = 1; k < c; ++k) m = std::max(m, d[k * plane + p]);
        double z = 0.0;
        for (int k = 0; k < c; ++k) {
            const float e = std::exp(d[k * plane + p] - m);
            out[k * plane + p] = e;
            z += e;
        }
        const float inv = static_cast<float>(1.0 / z);
        for (int k = 0; k < c; ++k) out[k * plane + p] *= inv;
    }
    std::vector<float> y = out;
    return record(x.shape(), std::move(out), {x}, [x, y = std::move(y), c, plane](std::span<const float> g) {
        auto gx = grad_sink(x);
        if (gx.empty()) return;
        for (std::size_t p = 0; p < plane; ++p) {
            double dot = 0.0;
            for (int k = 0; k < c; ++k) dot += double(g[k * plane + p]) * y[k * plane + p];
            for (int k = 0; k < c; ++k) {
                const std::size_t i = k * plane + p;
                gx[i] += y[i] * (g[i] - static_cast<float>(dot));
            }
        }
    });
}

namespace {

struct ConvGeometry {
    int c_in, h, w, c_out, k, stride, pad, h_out, w_out;
    std::size_t patch() const { return static_cast<std::size_t>(c_in) * k * k; }
    std::size_t pixels() const { return static_cast<std::size_t>(h_out) * w_out; }
    bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Reusable im2col buffer; contents are fully overwritten by each user.
float* col_scratch(std::size_t n) {
    thread_local std::vector<float> buffer;
    if (buffer.size() < n) buffer.resize(n);
    return buffer.data();
}

// Output columns [lo, hi) read an in-bounds input column for tap kx.
std::pair<int, int> valid_columns(const ConvGeometry& g, int kx) {
    int lo = 0;
    while (lo < g.w_out && lo * g.stride - g.pad + kx < 0) ++lo;
    int hi = g.w_out;
    while (hi > lo && (hi - 1) * g.stride - g.pad + kx >= g.w) --hi;
    return {lo, hi};
}

void im2col(const ConvGeometry& g, const float* in, float* col) {
    const std::size_t P = g.pixels();
    for (int ci = 0; ci < g.c_in; ++ci) {
        const float* plane = in + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                float* row = col + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * P;
                const auto [lo, hi] = valid_columns(g, kx);
                const int shift = kx - g.pad;
                for (int oy = 0; oy < g.h_out; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    float* dst = row + static_cast<std::size_t>(oy) * g.w_out;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.w_out, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * g.w;
                    std::fill(dst, dst + lo, 0.0f);
                    if (g.stride == 1) {
                        std::copy(src + lo + shift, src + hi + shift, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride + shift];
                    }
                    std::fill(dst + hi, dst + g.w_out, 0.0f);
                }
            }
        }
    }
}

void col2im_add(const ConvGeometry& g, const float* col, float* in) {
    const std::size_t P = g.pixels();
    for (int ci = 0; ci < g.c_in; ++ci) {
        float* plane = in + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const float* row = col + ((static_cast<std::size_t>(ci) * g.k + ky) * g.k + kx) * P;
                const auto [lo, hi] = valid_columns(g, kx);
                const int shift = kx - g.pad;
                for (int oy = 0; oy < g.h_out; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    const float* src = row + static_cast<std::size_t>(oy) * g.w_out;
                    float* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    if (g.stride == 1) {
                        float* d = dst + shift;
                        for (int ox = lo; ox < hi; ++ox) d[ox] += src[ox];
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride + shift] += src[ox];
                    }
                }
            }
        }
    }
}

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
    if (input.rank() != 3) throw ShapeError("conv2d: input must be C_in x H x W, got " + shape_str(input.shape()));
    if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be C_out x C_in x k x k, got " + shape_str(kernel.shape()));
    if (stride < 1) throw ShapeError("conv2d: stride must be positive, got " + std::to_string(stride));
    if (padding < 0) throw ShapeError("conv2d: padding must be nonnegative, got " + std::to_string(padding));
    ConvGeometry g{};
    g.c_in = input.dim(0);
    g.h = input.dim(1);
    g.w = input.dim(2);
    g.c_out = kernel.dim(0);
    g.k = kernel.dim(2);
    g.stride = stride;
    g.pad = padding;
    if (kernel.dim(1) != g.c_in) {
        throw ShapeError("conv2d: kernel in-channels (dim 1) = " + std::to_string(kernel.dim(1)) +
                         " but input channels (dim 0) = " + std::to_string(g.c_in));
    }
    if (kernel.dim(3) != g.k) throw ShapeError("conv2d: kernel must be square, got " + shape_str(kernel.shape()));
    if (g.k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(g.k));
    if (!bias.defined() || bias.rank() != 1 || bias.dim(0) != g.c_out) {
        throw ShapeError("conv2d: bias must have C_out = " + std::to_string(g.c_out) + " entries");
    }
    const int span_h = g.h + 2 * padding - g.k;
    const int span_w = g.w + 2 * padding - g.k;
    if (span_h < 0 || span_h % stride != 0) {
        throw ShapeError("conv2d: height " + std::to_string(g.h) + " incompatible with k=" + std::to_string(g.k) +
                         ", stride=" + std::to_string(stride) + ", padding=" + std::to_string(padding));
    }
    if (span_w < 0 || span_w % stride != 0) {
        throw ShapeError("conv2d: width " + std::to_string(g.w) + " incompatible with k=" + std::to_string(g.k) +
                         ", stride=" + std::to_string(stride) + ", padding=" + std::to_string(padding));
    }
    g.h_out = span_h / stride + 1;
    g.w_out = span_w / stride + 1;
    return g;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
    const ConvGeometry g = conv_geometry(input, kernel, bias, stride, padding);
    const std::size_t P = g.pixels();
    const std::size_t K = g.patch();
    std::vector<float> out(static_cast<std::size_t>(g.c_out) * P);
    auto b = bias.data();
    for (int co = 0; co < g.c_out; ++co) std::fill(out.begin() + co * P, out.begin() + (co + 1) * P, b[co]);

    const float* colp = input.data().data();
    if (!g.is_pointwise()) {
        float* col = col_scratch(K * P);
        im2col(g, input.data().data(), col);
        colp = col;
    }
    detail::gemm(false, false, g.c_out, static_cast<int>(P), static_cast<int>(K), 1.0f, kernel.data().data(),
                 static_cast<int>(K), colp, static_cast<int>(P), 1.0f, out.data(), static_cast<int>(P));

    return record({g.c_out, g.h_out, g.w_out}, std::move(out), {input, kernel, bias},
                  [input, kernel, bias, g](std::span<const float> gout) {
                      const std::size_t P = g.pixels();
                      const std::size_t K = g.patch();
                      auto gk = grad_sink(kernel);
                      auto gb = grad_sink(bias);
                      auto gi = grad_sink(input);
                      if (!gb.empty()) {
                          for (int co = 0; co < g.c_out; ++co) {
                              double acc = 0.0;
                              for (std::size_t p = 0; p < P; ++p) acc += gout[co * P + p];
                              gb[co] += static_cast<float>(acc);
                          }
                      }
                      const float* colp = input.data().data();
                      if (!gk.empty()) {
                          if (!g.is_pointwise()) {
                              float* col = col_scratch(K * P);
                              im2col(g, input.data().data(), col);
                              colp = col;
                          }
                          detail::gemm(false, true, g.c_out, static_cast<int>(K), static_cast<int>(P), 1.0f,
                                       gout.data(), static_cast<int>(P), colp, static_cast<int>(P), 1.0f, gk.data(),
                                       static_cast<int>(K));
                      }
                      if (!gi.empty()) {
                          if (g.is_pointwise()) {
                              detail::gemm(true, false, static_cast<int>(K), static_cast<int>(P), g.c_out, 1.0f,
                                           kernel.data().data(), static_cast<int>(K), gout.data(),
                                           static_cast<int>(P), 1.0f, gi.data(), static_cast<int>(P));
                          } else {
                              float* col = col_scratch(K * P);
                              detail::gemm(true, false, static_cast<int>(K), static_cast<int>(P), g.c_out, 1.0f,
                                           kernel.data().data(), static_cast<int>(K), gout.data(),
                                           static_cast<int>(P), 0.0f, col, static_cast<int>(P));
                              col2im_add(g, col, gi.data());
                          }
                      }
                  });
}

Tensor max_pool2x2(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("max_pool2x2 expects CxHxW, got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0) throw ShapeError("max_pool2x2: height " + std::to_string(h) + " is not even");
    if (w % 2 != 0) throw ShapeError("max_pool2x2: width " + std::to_string(w) + " is not even");
    const int ho = h / 2, wo = w / 2;
    auto d = x.data();
    std::vector<float> out(static_cast<std::size_t>(c) * ho * wo);
    std::vector<std::uint32_t> source(out.size());
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < ho; ++y) {
            for (int xx = 0; xx < wo; ++xx, ++o) {
                const std::size_t i00 = base + static_cast<std::size_t>(2 * y) * w + 2 * xx;
                const std::size_t cand[4] = {i00, i00 + 1, i00 + w, i00 + w + 1};
                std::size_t best = cand[0];
                for (int k = 1; k < 4; ++k)
                    if (d[cand[k]] > d[best]) best = cand[k];
                out[o] = d[best];
                source[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return record({c, ho, wo}, std::move(out), {x}, [x, source = std::move(source)](std::span<const float> g) {
        auto gx = grad_sink(x);
        if (gx.empty()) return;
        for (std::size_t i = 0; i < source.size(); ++i) gx[source[i]] += g[i];
    });
}

Tensor upsample_nearest2x(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("upsample_nearest2x expects CxHxW, got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = 2 * h, wo = 2 * w;
    auto d = x.data();
    std::vector<float> out(static_cast<std::size_t>(c) * ho * wo);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx)
                out[(static_cast<std::size_t>(ch) * ho + y) * wo + xx] =
                    d[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2];
    return record({c, ho, wo}, std::move(out), {x}, [x, c, h, w](std::span<const float> g) {
        auto gx = grad_sink(x);
        if (gx.empty()) return;
        const int ho = 2 * h, wo = 2 * w;
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < ho; ++y)
                for (int xx = 0; xx < wo; ++xx)
                    gx[(static_cast<std::size_t>(ch) * h + y / 2) * w + xx / 2] +=
                        g[(static_cast<std::size_t>(ch) * ho + y) * wo + xx];
    });
}

}  // namespace mspa
