#pragma once

#include <array>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "voxlow/graph.hpp"
#include "voxlow/tensor.hpp"

namespace voxlow {

/// A kernel or graph failed at run time; the message names the offending node.
class ExecError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Direct zero-padded 3D convolution, (B,C,D,H,W) x (O,C,kD,kH,kW) -> (B,O,D',H',W').
/// Accumulates in double, rounds to float on store.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, std::array<int64_t, 3> stride,
              std::array<int64_t, 3> pad);

/// 2D analogue of conv3d on (B,C,H,W).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::array<int64_t, 2> stride,
              std::array<int64_t, 2> pad);

/// Symmetric int8 fake quantization: clamp(round(x / scale), -127, 127) * scale.
float fake_quantize(float x, double scale);

using TensorMap = std::map<std::string, Tensor>;

struct ExecOptions {
    /// Run with the graph's int8 annotations (quantize -> integer conv -> dequantize).
    bool quantized = false;
    /// Observes every graph input and node output as it is materialized.
    std::function<void(const std::string& name, const Tensor& value)> on_tensor;
};

struct ExecResult {
    TensorMap outputs;                          // keyed by output node id
    std::map<std::string, double> node_seconds; // wall time per executed node
};

/// Interprets `g` in topological order. Input shapes must match the declared graph inputs.
ExecResult run_graph(const Graph& g, const TensorMap& inputs, const ExecOptions& options = {});

/// Outputs of `run_graph` in the order of `g.outputs`.
std::vector<Tensor> ordered_outputs(const Graph& g, const ExecResult& r);

} // namespace voxlow
