#include "voxlow/lowering.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <variant>

namespace voxlow {

namespace {

class Lowerer {
public:
    explicit Lowerer(const Graph& g5) : src_(g5) {}

    LoweredGraph run() {
        if (auto v = validate(src_); !v.empty()) {
            throw LoweringError("source graph does not validate: " + v.front());
        }
        shapes_ = infer_shapes(src_);
        for (const auto& [name, s] : shapes_) {
            if (s.rank() != 4 && s.rank() != 5) {
                throw LoweringError("tensor '" + name + "' has rank " + std::to_string(s.rank()) +
                                    "; only rank 4 and 5 are supported");
            }
        }

        for (const auto& in : src_.inputs) {
            out_.graph.inputs.push_back({in.name, in.shape.rank() == 5 ? folded_shape(in.shape) : in.shape});
            renamed_[in.name] = in.name;
        }
        for (const auto& id : topo_order(src_)) lower_node(*src_.find(id));
        for (const auto& o : src_.outputs) out_.graph.outputs.push_back(renamed_.at(o));

        std::set<std::string> seen;
        for (const auto& in : out_.graph.inputs) seen.insert(in.name);
        for (const auto& n : out_.graph.nodes) {
            if (!seen.insert(n.id).second) {
                throw LoweringError("generated id '" + n.id + "' collides with an existing name");
            }
        }
        for (const auto& [name, s] : infer_shapes(out_.graph)) ++out_.report.tensor_rank_histogram[s.rank()];
        return std::move(out_);
    }

private:
    const std::string& mapped(const std::string& src_name) const { return renamed_.at(src_name); }

    std::vector<std::string> mapped_inputs(const Node& n) const {
        std::vector<std::string> ins;
        for (const auto& i : n.inputs) ins.push_back(mapped(i));
        return ins;
    }

    void emit(const std::string& src_id, Node n) {
        out_.report.node_map[src_id].push_back(n.id);
        out_.graph.nodes.push_back(std::move(n));
    }

    void copy_weight(const std::string& name) {
        if (!out_.graph.weights.count(name)) out_.graph.weights.emplace(name, src_.weights.at(name));
    }

    void lower_node(const Node& n) {
        const Shape& in0 = shapes_.at(n.inputs.front());
        const bool folded = in0.rank() == 5;
        out_.report.node_map[n.id]; // every source node is a key, even if it maps to nothing new

        if (auto* conv = std::get_if<Conv3DAttrs>(&n.op)) {
            lower_conv3d(n, *conv);
            return;
        }

        Node copy = n;
        copy.inputs = mapped_inputs(n);
        if (is_conv(n.op)) {
            copy.bias = bias_name(n);
            copy_weight(n.weight);
            copy_weight(copy.bias);
        }
        if (folded) {
            if (auto* cat = std::get_if<ConcatAttrs>(&copy.op)) {
                switch (cat->axis) {
                case 0:
                case 1: break;
                case 3: cat->axis = 2; break;
                case 4: cat->axis = 3; break;
                default:
                    throw LoweringError("node '" + n.id + "': Concat along the depth axis cannot be folded");
                }
            } else if (auto* sl = std::get_if<ChannelSliceAttrs>(&copy.op)) {
                const int64_t depth = in0[2];
                sl->start *= depth;
                sl->len *= depth;
            }
        }
        renamed_[n.id] = n.id;
        emit(n.id, std::move(copy));
    }

    void lower_conv3d(const Node& n, const Conv3DAttrs& a) {
        const Shape& xs = shapes_.at(n.inputs.front());
        const Shape& ys = shapes_.at(n.id);
        const int64_t C = xs[1], Din = xs[2];
        const int64_t O = a.out_ch, Dout = ys[2];
        const int64_t kD = a.kernel[0], sD = a.stride[0], pD = a.pad[0];
        const Tensor& w = src_.weights.at(n.weight);
        const std::string bias = bias_name(n);
        const std::string x = mapped(n.inputs.front());
        const std::string out_id = n.id + "/out";

        auto taps_for = [&](int64_t dout) {
            std::vector<int64_t> taps;
            for (int64_t j = 0; j < kD; ++j) {
                const int64_t d = dout * sD - pD + j;
                if (d >= 0 && d < Din) taps.push_back(j);
            }
            return taps;
        };

        Conv2DAttrs c2;
        c2.out_ch = O;
        c2.kernel = {a.kernel[1], a.kernel[2]};
        c2.stride = {a.stride[1], a.stride[2]};
        c2.pad = {a.pad[1], a.pad[2]};

        ++out_.report.conv3d_lowered;
        renamed_[n.id] = out_id;
        copy_weight(bias);

        const int64_t plane = a.kernel[1] * a.kernel[2];
        auto kernel_at = [&](int64_t o, int64_t c, int64_t j) {
            return w.data().subspan(static_cast<std::size_t>(((o * C + c) * kD + j) * plane),
                                    static_cast<std::size_t>(plane));
        };

        // A single output slice that sees every input depth: one Conv2D over all folded channels.
        if (Dout == 1 && static_cast<int64_t>(taps_for(0).size()) == Din) {
            const std::string wname = n.weight + "/folded";
            Tensor wf{Shape{O, C * Din, a.kernel[1], a.kernel[2]}};
            for (int64_t o = 0; o < O; ++o)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t d = 0; d < Din; ++d) {
                        auto src = kernel_at(o, c, d + pD);
                        std::copy(src.begin(), src.end(),
                                  wf.data().begin() + static_cast<std::ptrdiff_t>(((o * C + c) * Din + d) * plane));
                    }
            out_.graph.weights.insert_or_assign(wname, std::move(wf));
            emit(n.id, Node{out_id, c2, {x}, wname, bias});
            ++out_.report.depth_taps_emitted;
            return;
        }

        std::map<int64_t, std::string> gathers;
        auto gather = [&](int64_t d) -> std::string {
            if (Din == 1) return x;
            if (auto it = gathers.find(d); it != gathers.end()) return it->second;
            const std::string gid = n.id + "/g" + std::to_string(d);
            if (C == 1) {
                emit(n.id, Node{gid, ChannelSliceAttrs{d, 1}, {x}, "", ""});
            } else {
                // Depth slice d of a c-major fold is the strided channel set {c*Din + d}.
                std::vector<std::string> parts;
                for (int64_t c = 0; c < C; ++c) {
                    const std::string pid = gid + "/c" + std::to_string(c);
                    emit(n.id, Node{pid, ChannelSliceAttrs{c * Din + d, 1}, {x}, "", ""});
                    parts.push_back(pid);
                }
                emit(n.id, Node{gid, ConcatAttrs{1}, parts, "", ""});
            }
            return gathers[d] = gid;
        };

        auto tap_weight = [&](int64_t j) {
            const std::string name = n.weight + "/t" + std::to_string(j);
            if (!out_.graph.weights.count(name)) {
                Tensor t{Shape{O, C, a.kernel[1], a.kernel[2]}};
                for (int64_t o = 0; o < O; ++o)
                    for (int64_t c = 0; c < C; ++c) {
                        auto src = kernel_at(o, c, j);
                        std::copy(src.begin(), src.end(),
                                  t.data().begin() + static_cast<std::ptrdiff_t>((o * C + c) * plane));
                    }
                out_.graph.weights.emplace(name, std::move(t));
            }
            return name;
        };
        const std::string zero_bias = n.weight + "/zero_bias";

        std::vector<std::string> slices;
        for (int64_t dout = 0; dout < Dout; ++dout) {
            const auto taps = taps_for(dout);
            if (taps.empty()) {
                throw LoweringError("node '" + n.id + "': output depth " + std::to_string(dout) +
                                    " sees only padding (pad >= kernel depth)");
            }
            const std::string prefix = n.id + "/d" + std::to_string(dout);
            std::vector<std::string> terms;
            for (std::size_t t = 0; t < taps.size(); ++t) {
                const int64_t j = taps[t];
                const int64_t d = dout * sD - pD + j;
                const std::string in = gather(d);
                std::string b = bias;
                if (t > 0) {
                    if (!out_.graph.weights.count(zero_bias)) out_.graph.weights.emplace(zero_bias, Tensor{Shape{O}});
                    b = zero_bias;
                }
                const std::string tid = prefix + "/t" + std::to_string(j);
                emit(n.id, Node{tid, c2, {in}, tap_weight(j), b});
                ++out_.report.depth_taps_emitted;
                terms.push_back(tid);
            }
            if (terms.size() == 1) {
                slices.push_back(terms.front());
            } else {
                emit(n.id, Node{prefix + "/sum", AddAttrs{}, terms, "", ""});
                slices.push_back(prefix + "/sum");
            }
        }

        // Per-slice results are (B,O,H',W'); c-major folding wants channel o*Dout + d'.
        if (Dout == 1 || O == 1) {
            emit(n.id, Node{out_id, ConcatAttrs{1}, slices, "", ""});
            return;
        }
        std::vector<std::string> interleaved;
        for (int64_t o = 0; o < O; ++o)
            for (int64_t dout = 0; dout < Dout; ++dout) {
                const std::string sid = n.id + "/d" + std::to_string(dout) + "/o" + std::to_string(o);
                emit(n.id, Node{sid, ChannelSliceAttrs{o, 1}, {slices[dout]}, "", ""});
                interleaved.push_back(sid);
            }
        emit(n.id, Node{out_id, ConcatAttrs{1}, interleaved, "", ""});
    }

    const Graph& src_;
    ShapeMap shapes_;
    std::map<std::string, std::string> renamed_;
    LoweredGraph out_;
};

// Portable uniform draw in [-1, 1] from raw generator bits.
float uniform_pm1(std::mt19937_64& rng) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return static_cast<float>(2.0 * u - 1.0);
}

} // namespace

LoweredGraph lower(const Graph& g5) { return Lowerer(g5).run(); }

std::vector<std::string> check_rank4(const Graph& g) {
    std::vector<std::string> v;
    ShapeMap shapes;
    try {
        shapes = infer_shapes(g);
    } catch (const std::exception& e) {
        return {std::string("shape inference failed: ") + e.what()};
    }

    // Union-find over tensors of rank > 4.
    std::map<std::string, std::string> parent;
    std::function<std::string(const std::string&)> root = [&](const std::string& s) -> std::string {
        const std::string p = parent.at(s);
        if (p == s) return s;
        return parent[s] = root(p);
    };
    for (const auto& [name, s] : shapes)
        if (s.rank() > 4) parent[name] = name;
    for (const auto& n : g.nodes) {
        if (!parent.count(n.id)) continue;
        for (const auto& in : n.inputs)
            if (parent.count(in)) parent[root(in)] = root(n.id);
    }

    std::set<std::string> conv_roots;
    for (const auto& n : g.nodes) {
        if (std::holds_alternative<Conv3DAttrs>(n.op)) {
            v.push_back("node '" + n.id + "' is a Conv3D");
            if (parent.count(n.id)) conv_roots.insert(root(n.id));
        }
    }
    std::map<std::string, std::vector<std::string>> regions;
    for (const auto& [name, p] : parent) regions[root(name)].push_back(name);
    for (const auto& [r, members] : regions) {
        if (conv_roots.count(r)) continue;
        std::string list;
        for (const auto& m : members) list += (list.empty() ? "" : ", ") + m + " " + shapes.at(m).str();
        v.push_back("rank > 4 tensors: " + list);
    }
    return v;
}

TensorMap fold_inputs(const TensorMap& inputs) {
    TensorMap out;
    for (const auto& [name, t] : inputs) out.emplace(name, t.rank() == 5 ? fold_depth(t) : t);
    return out;
}

EquivalenceReport verify_equivalence(const Graph& g5, const Graph& g4, int trials, double tol, uint64_t seed) {
    EquivalenceReport rep;
    if (trials < 1) {
        rep.structural_error = "trials must be >= 1";
        return rep;
    }
    std::mt19937_64 rng(seed);
    for (int t = 0; t < trials; ++t) {
        TensorMap in5;
        for (const auto& gi : g5.inputs) {
            Tensor x{gi.shape};
            for (float& v : x.data()) v = uniform_pm1(rng);
            in5.emplace(gi.name, std::move(x));
        }
        std::vector<Tensor> ref, got;
        try {
            const ExecResult r5 = run_graph(g5, in5);
            for (const auto& o : ordered_outputs(g5, r5)) ref.push_back(o.rank() == 5 ? fold_depth(o) : o);
            got = ordered_outputs(g4, run_graph(g4, fold_inputs(in5)));
        } catch (const std::exception& e) {
            rep.structural_error = e.what();
            rep.pass = false;
            return rep;
        }
        if (ref.size() != got.size()) {
            rep.structural_error = "output arity differs: " + std::to_string(ref.size()) + " vs " +
                                   std::to_string(got.size());
            return rep;
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            if (ref[i].shape() != got[i].shape()) {
                rep.structural_error = "output " + std::to_string(i) + " shape differs after folding: " +
                                       ref[i].shape().str() + " vs " + got[i].shape().str();
                return rep;
            }
            worst = std::max(worst, max_abs_diff(ref[i], got[i]));
        }
        rep.trial_max_diff.push_back(worst);
        rep.max_diff = std::max(rep.max_diff, worst);
        ++rep.trials;
    }
    rep.pass = rep.max_diff <= tol;
    return rep;
}

QuantizeResult quantize(const Graph& g4, const std::vector<TensorMap>& calibration) {
    if (auto v = check_rank4(g4); !v.empty()) throw LoweringError("quantize needs a rank-4 graph: " + v.front());
    if (calibration.empty()) throw LoweringError("quantize needs at least one calibration input set");

    QuantizeResult res;
    std::map<std::string, double> max_abs;
    ExecOptions observe;
    observe.on_tensor = [&](const std::string& name, const Tensor& t) {
        double& m = max_abs[name];
        for (float x : t.data()) m = std::max(m, static_cast<double>(std::abs(x)));
    };
    std::vector<ExecResult> reference;
    for (const auto& set : calibration) reference.push_back(run_graph(g4, set, observe));

    auto scale_for = [&](const std::string& name, double m) {
        if (m <= 0.0) {
            res.warnings.push_back("tensor '" + name + "' is all zeros over calibration; scale floored to 1e-8");
            return kMinQuantScale;
        }
        return std::max(m / 127.0, kMinQuantScale);
    };

    res.graph = g4;
    res.graph.quant.clear();
    for (const auto& [name, m] : max_abs) res.graph.quant[name] = QuantSpec{scale_for(name, m), 8};
    for (const auto& n : g4.nodes) {
        if (!is_conv(n.op) || res.graph.quant.count(n.weight)) continue;
        double m = 0.0;
        for (float x : g4.weights.at(n.weight).data()) m = std::max(m, static_cast<double>(std::abs(x)));
        res.graph.quant[n.weight] = QuantSpec{scale_for(n.weight, m), 8};
    }

    ExecOptions q;
    q.quantized = true;
    for (std::size_t i = 0; i < calibration.size(); ++i) {
        const ExecResult r = run_graph(res.graph, calibration[i], q);
        for (const auto& o : g4.outputs) {
            double& d = res.output_max_abs_diff[o];
            d = std::max(d, max_abs_diff(reference[i].outputs.at(o), r.outputs.at(o)));
        }
    }
    return res;
}

} // namespace voxlow
