#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "voxlow/tensor.hpp"

namespace voxlow {

/// Malformed graph/weights/points/detections file. Message carries file and field context.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Graph violates a structural invariant at the point of use.
class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Conv3DAttrs {
    int64_t out_ch = 1;
    std::array<int64_t, 3> kernel{1, 1, 1}; // kD, kH, kW
    std::array<int64_t, 3> stride{1, 1, 1};
    std::array<int64_t, 3> pad{0, 0, 0};
    bool operator==(const Conv3DAttrs&) const = default;
};

struct Conv2DAttrs {
    int64_t out_ch = 1;
    std::array<int64_t, 2> kernel{1, 1}; // kH, kW
    std::array<int64_t, 2> stride{1, 1};
    std::array<int64_t, 2> pad{0, 0};
    bool operator==(const Conv2DAttrs&) const = default;
};

struct ReluAttrs {
    bool operator==(const ReluAttrs&) const = default;
};

/// Elementwise sum of two or more equally shaped inputs.
struct AddAttrs {
    bool operator==(const AddAttrs&) const = default;
};

struct ConcatAttrs {
    int64_t axis = 1;
    bool operator==(const ConcatAttrs&) const = default;
};

/// Copies channels [start, start + len) of axis 1.
struct ChannelSliceAttrs {
    int64_t start = 0;
    int64_t len = 1;
    bool operator==(const ChannelSliceAttrs&) const = default;
};

/// Replicates every cell of the last two axes (H, W) fH x fW times.
struct UpsampleAttrs {
    int64_t fh = 1;
    int64_t fw = 1;
    bool operator==(const UpsampleAttrs&) const = default;
};

using OpKind =
    std::variant<Conv3DAttrs, Conv2DAttrs, ReluAttrs, AddAttrs, ConcatAttrs, ChannelSliceAttrs, UpsampleAttrs>;

std::string op_name(const OpKind& op);
bool is_conv(const OpKind& op);

struct Node;
/// Bias tensor name of a conv node (explicit, or "<weight>.bias").
std::string bias_name(const Node& n);

struct Node {
    std::string id;
    OpKind op;
    std::vector<std::string> inputs;
    std::string weight; // kernel tensor name, Conv only
    std::string bias;   // bias tensor name, Conv only; defaults to "<weight>.bias"

    bool operator==(const Node&) const = default;
};

struct GraphInput {
    std::string name;
    Shape shape;
    bool operator==(const GraphInput&) const = default;
};

/// Per-tensor symmetric int8 quantization parameters (zero point fixed at 0).
struct QuantSpec {
    double scale = 1.0;
    int bits = 8;
    bool operator==(const QuantSpec&) const = default;
};

struct Graph {
    std::vector<GraphInput> inputs;
    std::vector<Node> nodes;
    std::vector<std::string> outputs;
    std::map<std::string, Tensor> weights;
    /// Optional int8 annotations keyed by tensor name (graph inputs, node ids, weight names).
    std::map<std::string, QuantSpec> quant;

    const Node* find(const std::string& id) const;
    const GraphInput* find_input(const std::string& name) const;

    /// Node structure equal and weights bit-identical.
    bool structurally_equal(const Graph& other) const;
};

using ShapeMap = std::map<std::string, Shape>;

/// Human-readable list of invariant violations; empty means the graph is usable.
std::vector<std::string> validate(const Graph& g);

/// Kahn order with lexicographic tie-break. Throws GraphError on cycles or dangling refs.
std::vector<std::string> topo_order(const Graph& g);

/// Shapes of every graph input and node output. Throws ShapeError naming the node.
ShapeMap infer_shapes(const Graph& g);
ShapeMap infer_shapes(const Graph& g, const ShapeMap& input_shapes);

/// Output shape of a single node given its input shapes.
Shape infer_node_shape(const Node& n, const std::vector<Shape>& in);

/// Writes `path` (JSON) and its weights blob next to it (`<stem>.vxw`).
void save_graph(const Graph& g, const std::filesystem::path& path);
Graph load_graph(const std::filesystem::path& path);

/// Named-tensor binary container ("VXW1"), also used for calibration input sets.
void save_tensors(const std::map<std::string, Tensor>& tensors, const std::filesystem::path& path);
std::map<std::string, Tensor> load_tensors(const std::filesystem::path& path);

} // namespace voxlow
