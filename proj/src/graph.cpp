#include "voxlow/graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace voxlow {

using ordered_json = nlohmann::ordered_json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t min_arity(const OpKind& op) { return std::holds_alternative<AddAttrs>(op) ? 2 : 1; }

bool variadic(const OpKind& op) {
    return std::holds_alternative<AddAttrs>(op) || std::holds_alternative<ConcatAttrs>(op);
}

// Attribute invariants that do not need shapes.
std::vector<std::string> attr_violations(const Node& n) {
    std::vector<std::string> out;
    auto bad = [&](const std::string& what) { out.push_back("node '" + n.id + "': " + what); };
    std::visit(overloaded{
                   [&](const Conv3DAttrs& a) {
                       if (a.out_ch < 1) bad("out_ch must be >= 1");
                       for (int i = 0; i < 3; ++i) {
                           if (a.kernel[i] < 1) bad("kernel extents must be >= 1");
                           if (a.stride[i] < 1) bad("strides must be >= 1");
                           if (a.pad[i] < 0) bad("pads must be >= 0");
                       }
                   },
                   [&](const Conv2DAttrs& a) {
                       if (a.out_ch < 1) bad("out_ch must be >= 1");
                       for (int i = 0; i < 2; ++i) {
                           if (a.kernel[i] < 1) bad("kernel extents must be >= 1");
                           if (a.stride[i] < 1) bad("strides must be >= 1");
                           if (a.pad[i] < 0) bad("pads must be >= 0");
                       }
                   },
                   [&](const ChannelSliceAttrs& a) {
                       if (a.start < 0 || a.len < 1) bad("slice needs start >= 0 and len >= 1");
                   },
                   [&](const UpsampleAttrs& a) {
                       if (a.fh < 1 || a.fw < 1) bad("upsample factors must be >= 1");
                   },
                   [&](const ConcatAttrs& a) {
                       if (a.axis < 0) bad("concat axis must be >= 0");
                   },
                   [](const auto&) {},
               },
               n.op);
    return out;
}

int64_t conv_extent(int64_t in, int64_t k, int64_t s, int64_t p) {
    const int64_t span = in + 2 * p - k;
    if (span < 0) return 0;
    return span / s + 1;
}

} // namespace

std::string op_name(const OpKind& op) {
    return std::visit(overloaded{
                          [](const Conv3DAttrs&) { return std::string("Conv3D"); },
                          [](const Conv2DAttrs&) { return std::string("Conv2D"); },
                          [](const ReluAttrs&) { return std::string("ReLU"); },
                          [](const AddAttrs&) { return std::string("Add"); },
                          [](const ConcatAttrs&) { return std::string("Concat"); },
                          [](const ChannelSliceAttrs&) { return std::string("ChannelSlice"); },
                          [](const UpsampleAttrs&) { return std::string("NearestUpsample"); },
                      },
                      op);
}

std::string bias_name(const Node& n) { return n.bias.empty() ? n.weight + ".bias" : n.bias; }

bool is_conv(const OpKind& op) {
    return std::holds_alternative<Conv3DAttrs>(op) || std::holds_alternative<Conv2DAttrs>(op);
}

const Node* Graph::find(const std::string& id) const {
    for (const auto& n : nodes)
        if (n.id == id) return &n;
    return nullptr;
}

const GraphInput* Graph::find_input(const std::string& name) const {
    for (const auto& in : inputs)
        if (in.name == name) return &in;
    return nullptr;
}

bool Graph::structurally_equal(const Graph& other) const {
    if (inputs != other.inputs || outputs != other.outputs || quant != other.quant) return false;
    if (nodes.size() != other.nodes.size()) return false;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Node& a = nodes[i];
        const Node& b = other.nodes[i];
        if (a.id != b.id || a.op != b.op || a.inputs != b.inputs || a.weight != b.weight) return false;
        if (is_conv(a.op) && bias_name(a) != bias_name(b)) return false;
    }
    if (weights.size() != other.weights.size()) return false;
    for (const auto& [name, t] : weights) {
        auto it = other.weights.find(name);
        if (it == other.weights.end() || !t.bit_equal(it->second)) return false;
    }
    return true;
}

Shape infer_node_shape(const Node& n, const std::vector<Shape>& in) {
    auto fail = [&](const std::string& what) -> ShapeError {
        return ShapeError("node '" + n.id + "' (" + op_name(n.op) + "): " + what);
    };
    if (in.size() < min_arity(n.op) || (!variadic(n.op) && in.size() != 1)) {
        throw fail("wrong number of inputs (" + std::to_string(in.size()) + ")");
    }
    const Shape& x = in.front();

    return std::visit(
        overloaded{
            [&](const Conv3DAttrs& a) -> Shape {
                if (x.rank() != 5) throw fail("expects rank-5 input, got " + x.str());
                std::vector<int64_t> dims{x[0], a.out_ch};
                for (int i = 0; i < 3; ++i) {
                    const int64_t e = conv_extent(x[2 + i], a.kernel[i], a.stride[i], a.pad[i]);
                    if (e < 1) throw fail("non-positive output extent on spatial axis " + std::to_string(i));
                    dims.push_back(e);
                }
                return Shape(dims);
            },
            [&](const Conv2DAttrs& a) -> Shape {
                if (x.rank() != 4) throw fail("expects rank-4 input, got " + x.str());
                std::vector<int64_t> dims{x[0], a.out_ch};
                for (int i = 0; i < 2; ++i) {
                    const int64_t e = conv_extent(x[2 + i], a.kernel[i], a.stride[i], a.pad[i]);
                    if (e < 1) throw fail("non-positive output extent on spatial axis " + std::to_string(i));
                    dims.push_back(e);
                }
                return Shape(dims);
            },
            [&](const ReluAttrs&) -> Shape { return x; },
            [&](const AddAttrs&) -> Shape {
                for (const auto& s : in)
                    if (s != x) throw fail("operand shapes differ: " + x.str() + " vs " + s.str());
                return x;
            },
            [&](const ConcatAttrs& a) -> Shape {
                if (a.axis < 0 || static_cast<std::size_t>(a.axis) >= x.rank()) throw fail("axis out of range");
                std::vector<int64_t> dims = x.dims();
                dims[a.axis] = 0;
                for (const auto& s : in) {
                    if (s.rank() != x.rank()) throw fail("operand ranks differ");
                    for (std::size_t i = 0; i < x.rank(); ++i) {
                        if (i != static_cast<std::size_t>(a.axis) && s[i] != x[i]) {
                            throw fail("operand extents differ off the concat axis: " + x.str() + " vs " + s.str());
                        }
                    }
                    dims[a.axis] += s[a.axis];
                }
                return Shape(dims);
            },
            [&](const ChannelSliceAttrs& a) -> Shape {
                if (x.rank() < 2) throw fail("needs a channel axis");
                if (a.start < 0 || a.len < 1 || a.start + a.len > x[1]) {
                    throw fail("slice [" + std::to_string(a.start) + ", " + std::to_string(a.start + a.len) +
                               ") exceeds " + std::to_string(x[1]) + " channels");
                }
                std::vector<int64_t> dims = x.dims();
                dims[1] = a.len;
                return Shape(dims);
            },
            [&](const UpsampleAttrs& a) -> Shape {
                if (x.rank() < 4) throw fail("expects rank 4 or 5");
                std::vector<int64_t> dims = x.dims();
                dims[x.rank() - 2] *= a.fh;
                dims[x.rank() - 1] *= a.fw;
                return Shape(dims);
            },
        },
        n.op);
}

std::vector<std::string> topo_order(const Graph& g) {
    std::map<std::string, const Node*> by_id;
    for (const auto& n : g.nodes) {
        if (!by_id.emplace(n.id, &n).second) throw GraphError("duplicate node id '" + n.id + "'");
    }
    std::map<std::string, int> pending;
    std::map<std::string, std::vector<std::string>> consumers;
    for (const auto& n : g.nodes) {
        int deps = 0;
        for (const auto& in : n.inputs) {
            if (by_id.count(in)) {
                ++deps;
                consumers[in].push_back(n.id);
            } else if (!g.find_input(in)) {
                throw GraphError("node '" + n.id + "' references unknown input '" + in + "'");
            }
        }
        pending[n.id] = deps;
    }

    std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
    for (const auto& [id, deps] : pending)
        if (deps == 0) ready.push(id);

    std::vector<std::string> order;
    order.reserve(g.nodes.size());
    while (!ready.empty()) {
        std::string id = ready.top();
        ready.pop();
        order.push_back(id);
        for (const auto& c : consumers[id]) {
            if (--pending[c] == 0) ready.push(c);
        }
    }
    if (order.size() != g.nodes.size()) throw GraphError("graph contains a cycle");
    return order;
}

ShapeMap infer_shapes(const Graph& g) {
    ShapeMap declared;
    for (const auto& in : g.inputs) declared.emplace(in.name, in.shape);
    return infer_shapes(g, declared);
}

ShapeMap infer_shapes(const Graph& g, const ShapeMap& input_shapes) {
    ShapeMap shapes;
    for (const auto& in : g.inputs) {
        auto it = input_shapes.find(in.name);
        if (it == input_shapes.end()) throw ShapeError("no shape supplied for graph input '" + in.name + "'");
        shapes.emplace(in.name, it->second);
    }
    for (const auto& id : topo_order(g)) {
        const Node& n = *g.find(id);
        std::vector<Shape> in;
        in.reserve(n.inputs.size());
        for (const auto& name : n.inputs) in.push_back(shapes.at(name));
        shapes.insert_or_assign(id, infer_node_shape(n, in));
    }
    return shapes;
}

std::vector<std::string> validate(const Graph& g) {
    std::vector<std::string> v;

    std::set<std::string> names;
    for (const auto& in : g.inputs) {
        if (!names.insert(in.name).second) v.push_back("duplicate graph input '" + in.name + "'");
    }
    for (const auto& n : g.nodes) {
        if (n.id.empty()) v.push_back("node with empty id");
        if (!names.insert(n.id).second) v.push_back("duplicate id '" + n.id + "'");
    }
    for (const auto& n : g.nodes) {
        for (auto& s : attr_violations(n)) v.push_back(std::move(s));
        if (n.inputs.size() < min_arity(n.op) || (!variadic(n.op) && n.inputs.size() != 1)) {
            v.push_back("node '" + n.id + "': " + op_name(n.op) + " has " + std::to_string(n.inputs.size()) +
                        " inputs");
        }
        for (const auto& in : n.inputs) {
            if (!names.count(in)) v.push_back("node '" + n.id + "': dangling reference to '" + in + "'");
        }
        if (is_conv(n.op) && n.weight.empty()) v.push_back("node '" + n.id + "': conv without weight");
    }
    if (g.outputs.empty()) v.push_back("graph declares no outputs");
    for (const auto& out : g.outputs) {
        if (!g.find(out) && !g.find_input(out)) v.push_back("output '" + out + "' is not a node");
    }
    if (!v.empty()) return v;

    try {
        topo_order(g);
    } catch (const GraphError& e) {
        v.push_back(e.what());
        return v;
    }

    // Forward reachability from graph inputs.
    std::set<std::string> reached;
    for (const auto& in : g.inputs) reached.insert(in.name);
    for (const auto& id : topo_order(g)) {
        const Node& n = *g.find(id);
        if (std::all_of(n.inputs.begin(), n.inputs.end(), [&](const auto& i) { return reached.count(i) > 0; })) {
            reached.insert(id);
        } else {
            v.push_back("node '" + id + "' is not reachable from the graph inputs");
        }
    }

    std::optional<ShapeMap> shapes;
    try {
        shapes = infer_shapes(g);
    } catch (const ShapeError& e) {
        v.push_back(e.what());
    }

    for (const auto& n : g.nodes) {
        if (!is_conv(n.op)) continue;
        auto w = g.weights.find(n.weight);
        auto b = g.weights.find(bias_name(n));
        if (w == g.weights.end()) v.push_back("node '" + n.id + "': missing weight '" + n.weight + "'");
        if (b == g.weights.end()) v.push_back("node '" + n.id + "': missing bias '" + bias_name(n) + "'");
        if (!shapes || w == g.weights.end() || b == g.weights.end()) continue;

        const int64_t in_ch = shapes->at(n.inputs.front())[1];
        std::vector<int64_t> expect;
        int64_t out_ch = 0;
        if (auto* a = std::get_if<Conv3DAttrs>(&n.op)) {
            out_ch = a->out_ch;
            expect = {a->out_ch, in_ch, a->kernel[0], a->kernel[1], a->kernel[2]};
        } else {
            auto& c = std::get<Conv2DAttrs>(n.op);
            out_ch = c.out_ch;
            expect = {c.out_ch, in_ch, c.kernel[0], c.kernel[1]};
        }
        if (w->second.shape().dims() != expect) {
            v.push_back("node '" + n.id + "': weight '" + n.weight + "' has shape " + w->second.shape().str() +
                        ", expected " + Shape(expect).str());
        }
        if (b->second.shape().dims() != std::vector<int64_t>{out_ch}) {
            v.push_back("node '" + n.id + "': bias '" + bias_name(n) + "' has shape " + b->second.shape().str() +
                        ", expected (" + std::to_string(out_ch) + ")");
        }
    }

    for (const auto& [name, t] : g.weights) {
        auto d = t.data();
        if (!std::all_of(d.begin(), d.end(), [](float x) { return std::isfinite(x); })) {
            v.push_back("weight '" + name + "' contains non-finite values");
        }
    }
    for (const auto& [name, q] : g.quant) {
        if (!(q.scale > 0.0) || q.bits != 8) v.push_back("quant spec for '" + name + "' is invalid");
    }
    return v;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void put_u16(std::ostream& os, uint16_t x) {
    const char b[2] = {static_cast<char>(x & 0xff), static_cast<char>(x >> 8)};
    os.write(b, 2);
}

void put_u32(std::ostream& os, uint32_t x) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xff);
    os.write(b, 4);
}

class ByteReader {
public:
    ByteReader(std::string bytes, std::string file) : bytes_(std::move(bytes)), file_(std::move(file)) {}

    bool has(std::size_t n) const { return pos_ + n <= bytes_.size(); }
    bool done() const { return pos_ == bytes_.size(); }

    uint32_t le(std::size_t width, const std::string& ctx) {
        need(width, ctx);
        uint32_t x = 0;
        for (std::size_t i = 0; i < width; ++i) {
            x |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += width;
        return x;
    }

    std::string take(std::size_t n, const std::string& ctx) {
        need(n, ctx);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n, const std::string& ctx) const {
        if (!has(n)) throw ParseError(file_ + ": truncated while reading " + ctx);
    }

    std::string bytes_;
    std::string file_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Field access with path context for error messages.
class Field {
public:
    Field(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {}

    Field operator[](const std::string& key) const {
        if (!j_.is_object() || !j_.contains(key)) throw ParseError(path_ + ": missing field '" + key + "'");
        return Field(j_.at(key), path_ + "." + key);
    }
    Field operator[](std::size_t i) const { return Field(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }
    bool has(const std::string& key) const { return j_.is_object() && j_.contains(key) && !j_.at(key).is_null(); }

    int64_t integer() const {
        if (!j_.is_number_integer()) throw ParseError(path_ + ": expected an integer");
        return j_.get<int64_t>();
    }
    double real() const {
        if (!j_.is_number()) throw ParseError(path_ + ": expected a number");
        return j_.get<double>();
    }
    std::string str() const {
        if (!j_.is_string()) throw ParseError(path_ + ": expected a string");
        return j_.get<std::string>();
    }
    std::size_t size() const {
        if (!j_.is_array()) throw ParseError(path_ + ": expected an array");
        return j_.size();
    }
    const ordered_json& raw() const { return j_; }
    const std::string& path() const { return path_; }

    template <std::size_t N>
    std::array<int64_t, N> ints() const {
        if (size() != N) throw ParseError(path_ + ": expected " + std::to_string(N) + " integers");
        std::array<int64_t, N> out{};
        for (std::size_t i = 0; i < N; ++i) out[i] = (*this)[i].integer();
        return out;
    }

private:
    const ordered_json& j_;
    std::string path_;
};

ordered_json attrs_json(const OpKind& op) {
    return std::visit(overloaded{
                          [](const Conv3DAttrs& a) {
                              return ordered_json{{"out_ch", a.out_ch},
                                                  {"kernel", a.kernel},
                                                  {"stride", a.stride},
                                                  {"pad", a.pad}};
                          },
                          [](const Conv2DAttrs& a) {
                              return ordered_json{{"out_ch", a.out_ch},
                                                  {"kernel", a.kernel},
                                                  {"stride", a.stride},
                                                  {"pad", a.pad}};
                          },
                          [](const ConcatAttrs& a) { return ordered_json{{"axis", a.axis}}; },
                          [](const ChannelSliceAttrs& a) { return ordered_json{{"start", a.start}, {"len", a.len}}; },
                          [](const UpsampleAttrs& a) { return ordered_json{{"fH", a.fh}, {"fW", a.fw}}; },
                          [](const auto&) { return ordered_json::object(); },
                      },
                      op);
}

OpKind parse_op(const std::string& name, const Field& attrs) {
    if (name == "Conv3D") {
        Conv3DAttrs a;
        a.out_ch = attrs["out_ch"].integer();
        a.kernel = attrs["kernel"].ints<3>();
        a.stride = attrs.has("stride") ? attrs["stride"].ints<3>() : std::array<int64_t, 3>{1, 1, 1};
        a.pad = attrs.has("pad") ? attrs["pad"].ints<3>() : std::array<int64_t, 3>{0, 0, 0};
        return a;
    }
    if (name == "Conv2D") {
        Conv2DAttrs a;
        a.out_ch = attrs["out_ch"].integer();
        a.kernel = attrs["kernel"].ints<2>();
        a.stride = attrs.has("stride") ? attrs["stride"].ints<2>() : std::array<int64_t, 2>{1, 1};
        a.pad = attrs.has("pad") ? attrs["pad"].ints<2>() : std::array<int64_t, 2>{0, 0};
        return a;
    }
    if (name == "ReLU") return ReluAttrs{};
    if (name == "Add") return AddAttrs{};
    if (name == "Concat") return ConcatAttrs{attrs["axis"].integer()};
    if (name == "ChannelSlice") return ChannelSliceAttrs{attrs["start"].integer(), attrs["len"].integer()};
    if (name == "NearestUpsample") return UpsampleAttrs{attrs["fH"].integer(), attrs["fW"].integer()};
    throw ParseError(attrs.path() + ": unknown op '" + name + "'");
}

Shape parse_shape(const Field& f) {
    std::vector<int64_t> dims;
    for (std::size_t i = 0; i < f.size(); ++i) dims.push_back(f[i].integer());
    try {
        return Shape(dims);
    } catch (const ShapeError& e) {
        throw ParseError(f.path() + ": " + e.what());
    }
}

} // namespace

void save_tensors(const std::map<std::string, Tensor>& tensors, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os.write("VXW1", 4);
    put_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw IoError("tensor name too long: " + name.substr(0, 32));
        put_u16(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(t.rank()));
        for (int64_t d : t.shape().dims()) put_u32(os, static_cast<uint32_t>(d));
        for (float x : t.data()) put_u32(os, std::bit_cast<uint32_t>(x));
    }
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

std::map<std::string, Tensor> load_tensors(const std::filesystem::path& path) {
    const std::string file = path.string();
    ByteReader r(read_file(path), file);
    if (r.take(4, "magic") != "VXW1") throw ParseError(file + ": bad magic, expected VXW1");
    const uint32_t count = r.le(4, "entry count");
    std::map<std::string, Tensor> out;
    for (uint32_t e = 0; e < count; ++e) {
        const std::string entry = "entry " + std::to_string(e);
        const uint32_t len = r.le(2, entry + " name length");
        const std::string name = r.take(len, entry + " name");
        const std::string ctx = "weight '" + name + "'";
        const uint32_t rank = r.le(1, ctx + " rank");
        if (rank < 1 || rank > kMaxRank) throw ParseError(file + ": " + ctx + " has invalid rank " + std::to_string(rank));
        std::vector<int64_t> dims(rank);
        for (auto& d : dims) {
            d = r.le(4, ctx + " dims");
            if (d < 1) throw ParseError(file + ": " + ctx + " has a zero extent");
        }
        const Shape shape(dims);
        std::vector<float> data(static_cast<std::size_t>(shape.numel()));
        if (!r.has(data.size() * 4)) throw ParseError(file + ": truncated while reading " + ctx + " data");
        for (auto& x : data) x = std::bit_cast<float>(r.le(4, ctx + " data"));
        if (!out.emplace(name, Tensor(shape, std::move(data))).second) {
            throw ParseError(file + ": duplicate " + ctx);
        }
    }
    if (!r.done()) throw ParseError(file + ": trailing bytes after " + std::to_string(count) + " entries");
    return out;
}

void save_graph(const Graph& g, const std::filesystem::path& path) {
    std::filesystem::path weights_path = path;
    weights_path.replace_extension(".vxw");

    ordered_json j;
    j["inputs"] = ordered_json::object();
    for (const auto& in : g.inputs) j["inputs"][in.name] = in.shape.dims();
    j["nodes"] = ordered_json::array();
    for (const auto& n : g.nodes) {
        ordered_json jn{{"id", n.id}, {"op", op_name(n.op)}, {"attrs", attrs_json(n.op)}, {"inputs", n.inputs}};
        if (is_conv(n.op)) {
            jn["weight"] = n.weight;
            jn["bias"] = bias_name(n);
        } else {
            jn["weight"] = nullptr;
        }
        j["nodes"].push_back(std::move(jn));
    }
    j["outputs"] = g.outputs;
    j["weights_file"] = weights_path.filename().string();
    if (!g.quant.empty()) {
        ordered_json q = ordered_json::object();
        for (const auto& [name, spec] : g.quant) q[name] = {{"scale", spec.scale}, {"bits", spec.bits}};
        j["quant"] = std::move(q);
    }

    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed for '" + path.string() + "'");
    save_tensors(g.weights, weights_path);
}

Graph load_graph(const std::filesystem::path& path) {
    const std::string file = path.string();
    ordered_json j;
    try {
        j = ordered_json::parse(read_file(path));
    } catch (const ordered_json::parse_error& e) {
        throw ParseError(file + ": " + e.what());
    }

    Graph g;
    try {
        Field root(j, file);
        const Field inputs = root["inputs"];
        if (!inputs.raw().is_object()) throw ParseError(inputs.path() + ": expected an object");
        for (auto it = inputs.raw().begin(); it != inputs.raw().end(); ++it) {
            g.inputs.push_back({it.key(), parse_shape(inputs[it.key()])});
        }
        const Field nodes = root["nodes"];
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const Field jn = nodes[i];
            Node n;
            n.id = jn["id"].str();
            static const ordered_json kNoAttrs = ordered_json::object();
            const Field attrs = jn.has("attrs") ? jn["attrs"] : Field(kNoAttrs, jn.path() + ".attrs");
            n.op = parse_op(jn["op"].str(), attrs);
            const Field ins = jn["inputs"];
            for (std::size_t k = 0; k < ins.size(); ++k) n.inputs.push_back(ins[k].str());
            if (jn.has("weight")) n.weight = jn["weight"].str();
            if (jn.has("bias")) n.bias = jn["bias"].str();
            if (is_conv(n.op)) {
                if (n.weight.empty()) throw ParseError(jn.path() + ": conv node needs a weight");
            }
            g.nodes.push_back(std::move(n));
        }
        const Field outs = root["outputs"];
        for (std::size_t k = 0; k < outs.size(); ++k) g.outputs.push_back(outs[k].str());
        if (root.has("quant")) {
            const Field q = root["quant"];
            for (auto it = q.raw().begin(); it != q.raw().end(); ++it) {
                const Field e = q[it.key()];
                g.quant[it.key()] = QuantSpec{e["scale"].real(), static_cast<int>(e["bits"].integer())};
            }
        }
        const std::filesystem::path wpath = path.parent_path() / root["weights_file"].str();
        g.weights = load_tensors(wpath);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(file + ": " + e.what());
    }
    return g;
}

} // namespace voxlow
