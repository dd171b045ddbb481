#include "voxlow/exec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <variant>

namespace voxlow {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

int64_t out_extent(int64_t in, int64_t k, int64_t s, int64_t p) {
    const int64_t span = in + 2 * p - k;
    return span < 0 ? 0 : span / s + 1;
}

// Range of kernel taps [lo, hi) whose input coordinate lands inside [0, extent).
inline void tap_range(int64_t origin, int64_t k, int64_t extent, int64_t& lo, int64_t& hi) {
    lo = std::max<int64_t>(0, -origin);
    hi = std::min<int64_t>(k, extent - origin);
}

void check_conv_args(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t rank) {
    if (x.rank() != rank || w.rank() != rank) {
        throw ShapeError("conv expects rank-" + std::to_string(rank) + " input and weight, got " + x.shape().str() +
                         " and " + w.shape().str());
    }
    if (w.shape()[1] != x.shape()[1]) {
        throw ShapeError("conv channel mismatch: input " + x.shape().str() + ", weight " + w.shape().str());
    }
    if (bias.rank() != 1 || bias.shape()[0] != w.shape()[0]) {
        throw ShapeError("conv bias " + bias.shape().str() + " does not match weight " + w.shape().str());
    }
}

float quantize_value(double x, double scale) {
    const double q = std::clamp(std::round(x / scale), -127.0, 127.0);
    return static_cast<float>(q);
}

// Integer-affine 2D conv: int8 operands, int64 accumulation, int32-style bias at scale sx*sw.
Tensor conv2d_int8(const Tensor& x, double sx, const Tensor& w, double sw, const Tensor& bias,
                   std::array<int64_t, 2> stride, std::array<int64_t, 2> pad) {
    check_conv_args(x, w, bias, 4);
    const int64_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int64_t O = w.shape()[0], kH = w.shape()[2], kW = w.shape()[3];
    const int64_t Ho = out_extent(H, kH, stride[0], pad[0]);
    const int64_t Wo = out_extent(W, kW, stride[1], pad[1]);
    if (Ho < 1 || Wo < 1) throw ShapeError("conv output extent is not positive");

    std::vector<int32_t> qx(x.data().size()), qw(w.data().size());
    for (std::size_t i = 0; i < qx.size(); ++i) qx[i] = static_cast<int32_t>(quantize_value(x.data()[i], sx));
    for (std::size_t i = 0; i < qw.size(); ++i) qw[i] = static_cast<int32_t>(quantize_value(w.data()[i], sw));
    const double acc_scale = sx * sw;

    Tensor y{Shape{B, O, Ho, Wo}};
    auto out = y.data();
    std::size_t n = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t o = 0; o < O; ++o) {
            const int64_t qb = std::llround(static_cast<double>(bias.data()[o]) / acc_scale);
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    const int64_t h0 = oh * stride[0] - pad[0], w0 = ow * stride[1] - pad[1];
                    int64_t jlo, jhi, klo, khi;
                    tap_range(h0, kH, H, jlo, jhi);
                    tap_range(w0, kW, W, klo, khi);
                    int64_t acc = qb;
                    for (int64_t c = 0; c < C; ++c) {
                        const int32_t* xs = qx.data() + ((b * C + c) * H) * W;
                        const int32_t* ws = qw.data() + ((o * C + c) * kH) * kW;
                        for (int64_t j = jlo; j < jhi; ++j)
                            for (int64_t k = klo; k < khi; ++k)
                                acc += int64_t{xs[(h0 + j) * W + w0 + k]} * ws[j * kW + k];
                    }
                    out[n++] = static_cast<float>(static_cast<double>(acc) * acc_scale);
                }
        }
    return y;
}

void require_finite(const std::string& id, const Tensor& t) {
    for (float v : t.data()) {
        if (!std::isfinite(v)) throw ExecError("node '" + id + "' produced a non-finite value");
    }
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (float& v : y.data()) v = std::max(v, 0.0f);
    return y;
}

Tensor add(const std::vector<const Tensor*>& xs) {
    Tensor y{xs.front()->shape()};
    auto out = y.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (const Tensor* x : xs) acc += x->data()[i];
        out[i] = static_cast<float>(acc);
    }
    return y;
}

Tensor concat(const std::vector<const Tensor*>& xs, int64_t axis, const Shape& out_shape) {
    Tensor y{out_shape};
    const auto& dims = out_shape.dims();
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= dims[i];
    for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
    auto out = y.data();
    std::size_t n = 0;
    for (int64_t o = 0; o < outer; ++o) {
        for (const Tensor* x : xs) {
            const int64_t block = x->shape()[axis] * inner;
            auto src = x->data().subspan(static_cast<std::size_t>(o * block), static_cast<std::size_t>(block));
            std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(n));
            n += static_cast<std::size_t>(block);
        }
    }
    return y;
}

Tensor channel_slice(const Tensor& x, int64_t start, int64_t len, const Shape& out_shape) {
    Tensor y{out_shape};
    const auto& dims = x.shape().dims();
    int64_t inner = 1;
    for (std::size_t i = 2; i < dims.size(); ++i) inner *= dims[i];
    auto out = y.data();
    for (int64_t b = 0; b < dims[0]; ++b) {
        auto src = x.data().subspan(static_cast<std::size_t>((b * dims[1] + start) * inner),
                                    static_cast<std::size_t>(len * inner));
        std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(b * len * inner));
    }
    return y;
}

Tensor upsample(const Tensor& x, int64_t fh, int64_t fw, const Shape& out_shape) {
    Tensor y{out_shape};
    const std::size_t r = x.rank();
    const int64_t H = x.shape()[r - 2], W = x.shape()[r - 1];
    const int64_t planes = x.numel() / (H * W);
    const int64_t Ho = H * fh, Wo = W * fw;
    auto src = x.data();
    auto out = y.data();
    for (int64_t p = 0; p < planes; ++p)
        for (int64_t h = 0; h < Ho; ++h)
            for (int64_t w = 0; w < Wo; ++w)
                out[static_cast<std::size_t>((p * Ho + h) * Wo + w)] =
                    src[static_cast<std::size_t>((p * H + h / fh) * W + w / fw)];
    return y;
}

const Tensor& weight_of(const Graph& g, const std::string& name, const std::string& node) {
    auto it = g.weights.find(name);
    if (it == g.weights.end()) throw ExecError("node '" + node + "': missing weight '" + name + "'");
    return it->second;
}

double scale_of(const Graph& g, const std::string& name) {
    auto it = g.quant.find(name);
    if (it == g.quant.end()) throw ExecError("no quantization scale for '" + name + "'");
    return it->second.scale;
}

Tensor fake_quantize_tensor(const Tensor& x, double scale) {
    Tensor y = x;
    for (float& v : y.data()) v = voxlow::fake_quantize(v, scale);
    return y;
}

} // namespace

float fake_quantize(float x, double scale) { return static_cast<float>(quantize_value(x, scale) * scale); }

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, std::array<int64_t, 3> stride,
              std::array<int64_t, 3> pad) {
    check_conv_args(x, w, bias, 5);
    const auto& xs = x.shape();
    const int64_t B = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const int64_t O = w.shape()[0], kD = w.shape()[2], kH = w.shape()[3], kW = w.shape()[4];
    const int64_t Do = out_extent(D, kD, stride[0], pad[0]);
    const int64_t Ho = out_extent(H, kH, stride[1], pad[1]);
    const int64_t Wo = out_extent(W, kW, stride[2], pad[2]);
    if (Do < 1 || Ho < 1 || Wo < 1) throw ShapeError("conv3d output extent is not positive for " + xs.str());

    Tensor y{Shape{B, O, Do, Ho, Wo}};
    const float* xd = x.data().data();
    const float* wd = w.data().data();
    auto out = y.data();
    std::size_t n = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t od = 0; od < Do; ++od)
                for (int64_t oh = 0; oh < Ho; ++oh)
                    for (int64_t ow = 0; ow < Wo; ++ow) {
                        const int64_t d0 = od * stride[0] - pad[0];
                        const int64_t h0 = oh * stride[1] - pad[1];
                        const int64_t w0 = ow * stride[2] - pad[2];
                        int64_t ilo, ihi, jlo, jhi, klo, khi;
                        tap_range(d0, kD, D, ilo, ihi);
                        tap_range(h0, kH, H, jlo, jhi);
                        tap_range(w0, kW, W, klo, khi);
                        double acc = bias.data()[o];
                        for (int64_t c = 0; c < C; ++c) {
                            const float* xc = xd + (b * C + c) * D * H * W;
                            const float* wc = wd + (o * C + c) * kD * kH * kW;
                            for (int64_t i = ilo; i < ihi; ++i)
                                for (int64_t j = jlo; j < jhi; ++j)
                                    for (int64_t k = klo; k < khi; ++k)
                                        acc += static_cast<double>(xc[((d0 + i) * H + h0 + j) * W + w0 + k]) *
                                               static_cast<double>(wc[(i * kH + j) * kW + k]);
                        }
                        out[n++] = static_cast<float>(acc);
                    }
    return y;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::array<int64_t, 2> stride,
              std::array<int64_t, 2> pad) {
    check_conv_args(x, w, bias, 4);
    const auto& xs = x.shape();
    const int64_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const int64_t O = w.shape()[0], kH = w.shape()[2], kW = w.shape()[3];
    const int64_t Ho = out_extent(H, kH, stride[0], pad[0]);
    const int64_t Wo = out_extent(W, kW, stride[1], pad[1]);
    if (Ho < 1 || Wo < 1) throw ShapeError("conv2d output extent is not positive for " + xs.str());

    Tensor y{Shape{B, O, Ho, Wo}};
    const float* xd = x.data().data();
    const float* wd = w.data().data();
    auto out = y.data();
    std::size_t n = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    const int64_t h0 = oh * stride[0] - pad[0];
                    const int64_t w0 = ow * stride[1] - pad[1];
                    int64_t jlo, jhi, klo, khi;
                    tap_range(h0, kH, H, jlo, jhi);
                    tap_range(w0, kW, W, klo, khi);
                    double acc = bias.data()[o];
                    for (int64_t c = 0; c < C; ++c) {
                        const float* xc = xd + (b * C + c) * H * W;
                        const float* wc = wd + (o * C + c) * kH * kW;
                        for (int64_t j = jlo; j < jhi; ++j)
                            for (int64_t k = klo; k < khi; ++k)
                                acc += static_cast<double>(xc[(h0 + j) * W + w0 + k]) *
                                       static_cast<double>(wc[j * kW + k]);
                    }
                    out[n++] = static_cast<float>(acc);
                }
    return y;
}

ExecResult run_graph(const Graph& g, const TensorMap& inputs, const ExecOptions& options) {
    using clock = std::chrono::steady_clock;

    std::vector<std::string> order;
    try {
        order = topo_order(g);
    } catch (const GraphError& e) {
        throw ExecError(e.what());
    }

    // Remaining consumer count per tensor, so intermediates can be released early.
    std::map<std::string, int> uses;
    for (const auto& n : g.nodes)
        for (const auto& in : n.inputs) ++uses[in];
    for (const auto& out : g.outputs) ++uses[out];

    TensorMap live;
    for (const auto& gi : g.inputs) {
        auto it = inputs.find(gi.name);
        if (it == inputs.end()) throw ExecError("missing value for graph input '" + gi.name + "'");
        if (it->second.shape() != gi.shape) {
            throw ExecError("graph input '" + gi.name + "' expects " + gi.shape.str() + ", got " +
                            it->second.shape().str());
        }
        Tensor v = options.quantized ? fake_quantize_tensor(it->second, scale_of(g, gi.name)) : it->second;
        if (options.on_tensor) options.on_tensor(gi.name, v);
        live.insert_or_assign(gi.name, std::move(v));
    }

    ExecResult result;
    for (const auto& id : order) {
        const Node& n = *g.find(id);
        std::vector<const Tensor*> xs;
        std::vector<Shape> in_shapes;
        for (const auto& in : n.inputs) {
            const Tensor& t = live.at(in);
            xs.push_back(&t);
            in_shapes.push_back(t.shape());
        }

        const auto t0 = clock::now();
        Tensor y;
        try {
            const Shape out_shape = infer_node_shape(n, in_shapes);
            y = std::visit(
                overloaded{
                    [&](const Conv3DAttrs& a) {
                        if (options.quantized) throw ExecError("quantized execution requires a rank-4 graph");
                        return conv3d(*xs[0], weight_of(g, n.weight, id), weight_of(g, bias_name(n), id), a.stride,
                                      a.pad);
                    },
                    [&](const Conv2DAttrs& a) {
                        const Tensor& w = weight_of(g, n.weight, id);
                        const Tensor& b = weight_of(g, bias_name(n), id);
                        if (options.quantized) {
                            return conv2d_int8(*xs[0], scale_of(g, n.inputs[0]), w, scale_of(g, n.weight), b,
                                               a.stride, a.pad);
                        }
                        return conv2d(*xs[0], w, b, a.stride, a.pad);
                    },
                    [&](const ReluAttrs&) { return relu(*xs[0]); },
                    [&](const AddAttrs&) { return add(xs); },
                    [&](const ConcatAttrs& a) { return concat(xs, a.axis, out_shape); },
                    [&](const ChannelSliceAttrs& a) { return channel_slice(*xs[0], a.start, a.len, out_shape); },
                    [&](const UpsampleAttrs& a) { return upsample(*xs[0], a.fh, a.fw, out_shape); },
                },
                n.op);
            if (y.shape() != out_shape) throw ShapeError("kernel produced " + y.shape().str());
        } catch (const ShapeError& e) {
            throw ExecError("node '" + id + "': " + e.what());
        }
        if (options.quantized) y = fake_quantize_tensor(y, scale_of(g, id));
        result.node_seconds[id] = std::chrono::duration<double>(clock::now() - t0).count();

        require_finite(id, y);
        if (options.on_tensor) options.on_tensor(id, y);

        for (const auto& in : n.inputs) {
            if (--uses[in] == 0) live.erase(in);
        }
        live.insert_or_assign(id, std::move(y));
    }

    for (const auto& out : g.outputs) {
        auto it = live.find(out);
        if (it == live.end()) throw ExecError("output '" + out + "' was not produced");
        result.outputs.insert_or_assign(out, it->second);
    }
    return result;
}

std::vector<Tensor> ordered_outputs(const Graph& g, const ExecResult& r) {
    std::vector<Tensor> out;
    for (const auto& id : g.outputs) out.push_back(r.outputs.at(id));
    return out;
}

} // namespace voxlow
