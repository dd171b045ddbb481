#include "random_graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace voxlow::testing {

namespace {

Shape with_dim(const Shape& s, std::size_t axis, int64_t v) {
    auto d = s.dims();
    d[axis] = v;
    return Shape(d);
}

int64_t pick(std::mt19937_64& rng, int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

struct Builder {
    Graph g;
    std::vector<std::pair<std::string, Shape>> tensors;
    std::map<std::string, bool> after_conv; // tensor depends on some Conv3D
    int counter = 0;

    std::string fresh(const std::string& prefix) { return prefix + std::to_string(counter++); }

    void add(Node n, const Shape& s) {
        bool dep = std::holds_alternative<Conv3DAttrs>(n.op);
        for (const auto& in : n.inputs) dep = dep || after_conv[in];
        after_conv[n.id] = dep;
        tensors.emplace_back(n.id, s);
        g.nodes.push_back(std::move(n));
    }

    void conv3d(std::mt19937_64& rng, const std::string& src, const Shape& s, int64_t out_ch,
                std::array<int64_t, 3> k, std::array<int64_t, 3> st, std::array<int64_t, 3> pad) {
        const int64_t C = s[1];
        const std::string id = fresh("conv");
        const std::string w = id + ".w";
        const double fan_in = static_cast<double>(C * k[0] * k[1] * k[2]);
        std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / fan_in));
        Tensor wt{Shape{out_ch, C, k[0], k[1], k[2]}};
        for (float& v : wt.data()) v = static_cast<float>(nd(rng));
        Tensor bt{Shape{out_ch}};
        for (float& v : bt.data()) v = static_cast<float>(nd(rng) * 0.1);
        g.weights.emplace(w, std::move(wt));
        g.weights.emplace(w + ".bias", std::move(bt));
        Node n{id, Conv3DAttrs{out_ch, k, st, pad}, {src}, w, ""};
        const Shape out = infer_node_shape(n, {s});
        add(std::move(n), out);
    }
};

} // namespace

Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> ud(lo, hi);
    Tensor t{s};
    for (float& v : t.data()) v = static_cast<float>(ud(rng));
    return t;
}

TensorMap random_inputs(const Graph& g, std::mt19937_64& rng) {
    TensorMap m;
    for (const auto& in : g.inputs) m.emplace(in.name, random_tensor(in.shape, rng));
    return m;
}

Graph random_graph(std::mt19937_64& rng, const RandomGraphLimits& lim) {
    Builder b;
    const Shape in{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, lim.max_depth), pick(rng, 2, lim.max_hw),
                   pick(rng, 2, lim.max_hw)};
    b.g.inputs.push_back({"x", in});
    b.tensors.emplace_back("x", in);

    const int layers = static_cast<int>(pick(rng, std::min(2, lim.max_layers), lim.max_layers));
    for (int layer = 0; layer < layers; ++layer) {
        // Mostly extend the newest tensor so few layers get pruned; sometimes branch from older ones.
        const auto last = static_cast<int64_t>(b.tensors.size()) - 1;
        const auto [src, s] = b.tensors[static_cast<std::size_t>(pick(rng, 0, 2) ? last : pick(rng, 0, last))];
        int64_t op = pick(rng, 0, 9);
        // The primary output must depend on a Conv3D.
        if (layer == layers - 1 && !b.after_conv[src]) op = 0;
        if (op <= 3) {
            // Conv3D
            const int64_t D = s[2], H = s[3], W = s[4];
            std::array<int64_t, 3> k{pick(rng, 1, std::min<int64_t>(D, 4)), pick(rng, 1, std::min<int64_t>(H, 3)),
                                     pick(rng, 1, std::min<int64_t>(W, 3))};
            std::array<int64_t, 3> st{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
            std::array<int64_t, 3> pad{pick(rng, 0, k[0] - 1), pick(rng, 0, k[1] - 1), pick(rng, 0, k[2] - 1)};
            b.conv3d(rng, src, s, pick(rng, 1, lim.max_channels), k, st, pad);
        } else if (op == 4) {
            b.add(Node{b.fresh("relu"), ReluAttrs{}, {src}, "", ""}, s);
        } else if (op <= 6) {
            std::vector<std::string> ins{src};
            for (const auto& [name, shape] : b.tensors)
                if (shape == s && name != src && ins.size() < 3 && pick(rng, 0, 1)) ins.push_back(name);
            if (ins.size() == 1) ins.push_back(src);
            b.add(Node{b.fresh("add"), AddAttrs{}, ins, "", ""}, s);
        } else if (op == 7) {
            std::vector<std::string> ins{src};
            int64_t channels = s[1];
            for (const auto& [name, shape] : b.tensors) {
                if (name == src || shape[0] != s[0] || shape[2] != s[2] || shape[3] != s[3] || shape[4] != s[4]) continue;
                if (channels + shape[1] > lim.max_channels || !pick(rng, 0, 1)) continue;
                ins.push_back(name);
                channels += shape[1];
            }
            if (ins.size() == 1 && 2 * channels <= lim.max_channels) {
                ins.push_back(src);
                channels *= 2;
            }
            b.add(Node{b.fresh("cat"), ConcatAttrs{1}, ins, "", ""}, with_dim(s, 1, channels));
        } else if (op == 8) {
            const int64_t fh = s[3] * 2 <= lim.max_hw ? pick(rng, 1, 2) : 1;
            const int64_t fw = s[4] * 2 <= lim.max_hw ? pick(rng, 1, 2) : 1;
            const Shape out = with_dim(with_dim(s, 3, s[3] * fh), 4, s[4] * fw);
            b.add(Node{b.fresh("up"), UpsampleAttrs{fh, fw}, {src}, "", ""}, out);
        } else {
            const int64_t start = pick(rng, 0, s[1] - 1);
            const int64_t len = pick(rng, 1, s[1] - start);
            b.add(Node{b.fresh("slice"), ChannelSliceAttrs{start, len}, {src}, "", ""}, with_dim(s, 1, len));
        }
    }

    // The last node is always an output; sometimes another intermediate too.
    b.g.outputs.push_back(b.g.nodes.back().id);
    if (b.g.nodes.size() > 1 && pick(rng, 0, 2) == 0) {
        const auto& other = b.g.nodes[static_cast<std::size_t>(pick(rng, 0, static_cast<int64_t>(b.g.nodes.size()) - 2))];
        b.g.outputs.push_back(other.id);
    }
    // Drop nodes that feed no output so the graph stays valid.
    std::vector<std::string> keep(b.g.outputs.begin(), b.g.outputs.end());
    for (auto it = b.g.nodes.rbegin(); it != b.g.nodes.rend(); ++it) {
        if (std::find(keep.begin(), keep.end(), it->id) == keep.end()) continue;
        keep.insert(keep.end(), it->inputs.begin(), it->inputs.end());
    }
    std::erase_if(b.g.nodes, [&](const Node& n) { return std::find(keep.begin(), keep.end(), n.id) == keep.end(); });
    std::erase_if(b.g.weights, [&](const auto& kv) {
        for (const auto& n : b.g.nodes)
            if (n.weight == kv.first || bias_name(n) == kv.first) return false;
        return true;
    });
    return b.g;
}

Graph random_full_depth_graph(std::mt19937_64& rng, const RandomGraphLimits& lim) {
    Builder b;
    const Shape in{1, pick(rng, 1, lim.max_channels), pick(rng, 1, lim.max_depth), pick(rng, 3, lim.max_hw),
                   pick(rng, 3, lim.max_hw)};
    b.g.inputs.push_back({"x", in});
    const int64_t k = pick(rng, 1, 3);
    b.conv3d(rng, "x", in, pick(rng, 1, lim.max_channels), {in[2], k, k}, {1, pick(rng, 1, 2), pick(rng, 1, 2)},
             {0, pick(rng, 0, k - 1), pick(rng, 0, k - 1)});
    const Shape mid = b.tensors.back().second;
    if (pick(rng, 0, 1)) {
        b.add(Node{b.fresh("relu"), ReluAttrs{}, {b.tensors.back().first}, "", ""}, mid);
        b.conv3d(rng, b.tensors.back().first, mid, pick(rng, 1, lim.max_channels), {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
    }
    b.g.outputs.push_back(b.g.nodes.back().id);
    return b.g;
}

} // namespace voxlow::testing
