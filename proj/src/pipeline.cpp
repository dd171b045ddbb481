#include "voxlow/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "voxlow/exec.hpp"
#include "voxlow/lowering.hpp"

namespace voxlow {

using ordered_json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

namespace {

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : "; ") + x;
    return s;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Single-producer single-consumer handoff with bounded capacity.
template <class T>
class Handoff {
public:
    explicit Handoff(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

    bool push(T item) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        not_empty_.notify_one();
        return true;
    }

    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

private:
    std::mutex mu_;
    std::condition_variable not_empty_, not_full_;
    std::deque<T> items_;
    std::size_t capacity_;
    bool closed_ = false;
};

struct Work {
    std::size_t index = 0;
    StageTiming t;
    double io_s = 0.0;
    double done_s = 0.0; // completion time since the run started
    Tensor voxels;
    Tensor folded;
    std::vector<Tensor> outputs;
    std::vector<Detection> dets;
};

struct Stages {
    std::function<void(Work&)> pre;      // may set io_s, which is excluded from pre_s
    std::function<void(Work&)> transfer; // host -> executor handoff (layout fold)
    std::function<void(Work&)> net;
    std::function<void(Work&)> post;
};

void run_pre(const Stages& s, Work& w) {
    const auto t0 = Clock::now();
    s.pre(w);
    w.t.pre_s = std::max(0.0, seconds_since(t0) - w.io_s);
}

void run_net(const Stages& s, Work& w) {
    auto t0 = Clock::now();
    s.transfer(w);
    w.t.transfer_overhead_s = seconds_since(t0);
    t0 = Clock::now();
    s.net(w);
    w.t.net_s = seconds_since(t0);
}

void run_post(const Stages& s, Work& w) {
    const auto t0 = Clock::now();
    s.post(w);
    w.t.post_s = seconds_since(t0);
}

std::vector<Work> drive(std::size_t n, const Stages& s, const PipelineOptions& opts, double& wall) {
    std::vector<Work> done;
    done.reserve(n);
    const auto t0 = Clock::now();

    if (opts.mode == PipelineMode::Sequential) {
        for (std::size_t i = 0; i < n; ++i) {
            Work w;
            w.index = i;
            run_pre(s, w);
            run_net(s, w);
            run_post(s, w);
            w.done_s = seconds_since(t0);
            done.push_back(std::move(w));
        }
        wall = seconds_since(t0);
        return done;
    }

    Handoff<Work> to_net(opts.handoff_capacity), to_post(opts.handoff_capacity);
    std::mutex err_mu;
    std::exception_ptr error;
    auto fail = [&](std::exception_ptr e) {
        {
            std::lock_guard lock(err_mu);
            if (!error) error = e;
        }
        to_net.close();
        to_post.close();
    };

    std::thread pre_worker([&] {
        try {
            for (std::size_t i = 0; i < n; ++i) {
                Work w;
                w.index = i;
                run_pre(s, w);
                if (!to_net.push(std::move(w))) return;
            }
            to_net.close();
        } catch (...) {
            fail(std::current_exception());
        }
    });
    std::thread net_worker([&] {
        try {
            while (auto w = to_net.pop()) {
                run_net(s, *w);
                if (!to_post.push(std::move(*w))) return;
            }
            to_post.close();
        } catch (...) {
            fail(std::current_exception());
        }
    });
    try {
        while (auto w = to_post.pop()) {
            run_post(s, *w);
            w->done_s = seconds_since(t0);
            done.push_back(std::move(*w));
        }
    } catch (...) {
        fail(std::current_exception());
    }
    pre_worker.join();
    net_worker.join();
    if (error) std::rethrow_exception(error);
    wall = seconds_since(t0);
    std::sort(done.begin(), done.end(), [](const Work& a, const Work& b) { return a.index < b.index; });
    return done;
}

StageStats stats_of(std::vector<double> v) {
    StageStats s;
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    s.min = v.front();
    s.max = v.back();
    // Nearest-rank percentile.
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size())));
    s.p95 = v[std::max<std::size_t>(rank, 1) - 1];
    return s;
}

std::string bottleneck_of(double pre, double net, double post) {
    if (net >= pre && net >= post) return "net";
    if (pre >= post) return "pre";
    return "post";
}

void fill_stats(PipelineReport& r) {
    std::vector<double> pre, net, post, tr;
    for (const auto& t : r.samples) {
        pre.push_back(t.pre_s);
        net.push_back(t.net_s);
        post.push_back(t.post_s);
        tr.push_back(t.transfer_overhead_s);
    }
    r.pre = stats_of(pre);
    r.net = stats_of(net);
    r.post = stats_of(post);
    r.transfer = stats_of(tr);
    r.io = stats_of(r.io_samples);
}

void finish_measured(PipelineReport& r, double wall) {
    fill_stats(r);
    r.frames = r.samples.size();
    if (r.frames == 0) return;
    r.measured_fps = wall > 0.0 ? static_cast<double>(r.frames) / wall : 0.0;
    const StageTiming mean{r.pre.mean, r.net.mean, r.post.mean, r.transfer.mean};
    if (mean.pre_s + mean.net_s + mean.post_s > 0.0) {
        const FpsEstimate f = fps_model(mean, r.mode);
        r.theoretical_fps = f.theoretical_fps;
        r.effective_fps = f.effective_fps;
        r.theoretical_fps_with_io = 1.0 / (mean.pre_s + mean.net_s + mean.post_s + r.io.mean);
    }
    r.bottleneck = bottleneck_of(r.pre.mean, r.net.mean, r.post.mean);
}

// --- config JSON -----------------------------------------------------------

const char* kDefaultSource = "artifact-default";

Aggregation parse_aggregation(const std::string& s) {
    if (s == "mean") return Aggregation::Mean;
    if (s == "max") return Aggregation::Max;
    throw ParseError("config: unknown aggregation '" + s + "'");
}

} // namespace

RefusedGraph::RefusedGraph(std::vector<std::string> violations)
    : std::runtime_error("graph is not rank-4 clean: " + join(violations)), violations_(std::move(violations)) {}

std::vector<std::string> PipelineConfig::class_names() const {
    std::vector<std::string> names;
    for (const auto& c : anchors.classes) names.push_back(c.name);
    return names;
}

PipelineConfig default_config() {
    PipelineConfig c;
    c.anchors.classes = {AnchorClass{"car", 1.8, 4.2, 1.6, 0.0, {0.0, std::numbers::pi / 2}}};
    c.anchors.stride = 0.4;
    c.anchors.origin = {c.voxel.roi_min[0], c.voxel.roi_min[1]};
    c.anchors.score_threshold = 0.3;
    return c;
}

void save_config(const PipelineConfig& cfg, const std::filesystem::path& path) {
    ordered_json j;
    ordered_json agg = ordered_json::array();
    for (auto a : cfg.voxel.aggregation) agg.push_back(a == Aggregation::Mean ? "mean" : "max");
    j["voxel"] = {{"roi_min", cfg.voxel.roi_min},
                  {"roi_max", cfg.voxel.roi_max},
                  {"voxel_size", cfg.voxel.voxel_size},
                  {"aggregation", agg},
                  {"include_occupancy", cfg.voxel.include_occupancy},
                  {"source", kDefaultSource}};
    ordered_json classes = ordered_json::array();
    for (const auto& c : cfg.anchors.classes) {
        classes.push_back({{"name", c.name},
                           {"size", {c.w, c.l, c.h}},
                           {"z_center", c.z_center},
                           {"yaw_set", c.yaw_set}});
    }
    j["anchors"] = {{"classes", classes},
                    {"stride", cfg.anchors.stride},
                    {"origin", cfg.anchors.origin},
                    {"score_threshold", cfg.anchors.score_threshold},
                    {"source", kDefaultSource}};
    j["nms"] = {{"t_aabb", cfg.nms.t_aabb},
                {"t_rot", cfg.nms.t_rot},
                {"max_keep", cfg.nms.max_keep},
                {"source", kDefaultSource}};
    j["eval"] = {{"default_iou", cfg.eval.default_iou},
                 {"iou_thresh", cfg.eval.iou_thresh},
                 {"n_points", cfg.eval.n_points},
                 {"source", kDefaultSource}};
    j["head"] = {{"cls_output", cfg.cls_output}, {"reg_output", cfg.reg_output}};

    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << j.dump(2) << '\n';
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    const std::string file = path.string();
    PipelineConfig c = default_config();
    try {
        const auto j = nlohmann::json::parse(is);
        if (j.contains("voxel")) {
            const auto& v = j["voxel"];
            c.voxel.roi_min = v.value("roi_min", c.voxel.roi_min);
            c.voxel.roi_max = v.value("roi_max", c.voxel.roi_max);
            c.voxel.voxel_size = v.value("voxel_size", c.voxel.voxel_size);
            c.voxel.include_occupancy = v.value("include_occupancy", c.voxel.include_occupancy);
            if (v.contains("aggregation")) {
                c.voxel.aggregation.clear();
                for (const auto& a : v["aggregation"]) c.voxel.aggregation.push_back(parse_aggregation(a.get<std::string>()));
            }
            c.anchors.origin = {c.voxel.roi_min[0], c.voxel.roi_min[1]};
        }
        if (j.contains("anchors")) {
            const auto& a = j["anchors"];
            c.anchors.stride = a.value("stride", c.anchors.stride);
            c.anchors.origin = a.value("origin", c.anchors.origin);
            c.anchors.score_threshold = a.value("score_threshold", c.anchors.score_threshold);
            if (a.contains("classes")) {
                c.anchors.classes.clear();
                for (const auto& k : a["classes"]) {
                    AnchorClass ac;
                    ac.name = k.at("name").get<std::string>();
                    const auto size = k.at("size").get<std::vector<double>>();
                    if (size.size() != 3) throw ParseError(file + ": anchors.classes[].size needs [w, l, h]");
                    ac.w = size[0];
                    ac.l = size[1];
                    ac.h = size[2];
                    ac.z_center = k.value("z_center", 0.0);
                    ac.yaw_set = k.value("yaw_set", ac.yaw_set);
                    c.anchors.classes.push_back(std::move(ac));
                }
            }
        }
        if (j.contains("nms")) {
            const auto& n = j["nms"];
            c.nms.t_aabb = n.value("t_aabb", c.nms.t_aabb);
            c.nms.t_rot = n.value("t_rot", c.nms.t_rot);
            c.nms.max_keep = n.value("max_keep", c.nms.max_keep);
        }
        if (j.contains("eval")) {
            const auto& e = j["eval"];
            c.eval.default_iou = e.value("default_iou", c.eval.default_iou);
            c.eval.n_points = e.value("n_points", c.eval.n_points);
            if (e.contains("iou_thresh")) c.eval.iou_thresh = e["iou_thresh"].get<std::map<std::string, double>>();
        }
        if (j.contains("head")) {
            c.cls_output = j["head"].value("cls_output", c.cls_output);
            c.reg_output = j["head"].value("reg_output", c.reg_output);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(file + ": " + e.what());
    }
    try {
        c.voxel.check();
        c.anchors.check();
    } catch (const std::invalid_argument& e) {
        throw ParseError(file + ": " + e.what());
    }
    return c;
}

FpsEstimate fps_model(const StageTiming& t, PipelineMode mode) {
    if (t.pre_s < 0 || t.net_s < 0 || t.post_s < 0 || t.transfer_overhead_s < 0) {
        throw std::invalid_argument("stage timings must be non-negative");
    }
    const double frame = t.pre_s + t.net_s + t.post_s;
    if (!(frame > 0.0)) throw std::invalid_argument("all-zero stage timing has no defined FPS");
    FpsEstimate f;
    f.theoretical_fps = 1.0 / frame;
    if (mode == PipelineMode::Sequential) {
        f.effective_fps = 1.0 / (frame + t.transfer_overhead_s);
    } else {
        f.effective_fps = 1.0 / (std::max({t.pre_s, t.net_s, t.post_s}) + t.transfer_overhead_s);
    }
    return f;
}

std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

PipelineResult run_pipeline(const std::vector<std::filesystem::path>& frames, const Graph& g4,
                            const PipelineConfig& cfg, const PipelineOptions& opts) {
    if (auto v = check_rank4(g4); !v.empty()) throw RefusedGraph(std::move(v));
    if (auto v = validate(g4); !v.empty()) throw GraphError("graph does not validate: " + join(v));
    cfg.voxel.check();
    cfg.anchors.check();

    const auto [W, H, D] = cfg.voxel.extents();
    const Shape voxel_shape{1, cfg.voxel.channels(), D, H, W};
    if (g4.inputs.size() != 1 || g4.inputs.front().shape != folded_shape(voxel_shape)) {
        throw GraphError("graph must take a single input of shape " + folded_shape(voxel_shape).str());
    }
    if (std::max(cfg.cls_output, cfg.reg_output) >= g4.outputs.size()) {
        throw GraphError("graph has " + std::to_string(g4.outputs.size()) + " outputs; head indices exceed it");
    }
    const ShapeMap shapes = infer_shapes(g4);
    const Shape& cls_shape = shapes.at(g4.outputs[cfg.cls_output]);
    if (cls_shape.rank() != 4) throw GraphError("class head output must be rank 4, got " + cls_shape.str());
    const auto anchors = generate_anchors(cls_shape[2], cls_shape[3], cfg.anchors);
    const std::string input_name = g4.inputs.front().name;

    std::atomic<int> max_rank{0};
    ExecOptions exec;
    exec.on_tensor = [&](const std::string&, const Tensor& t) {
        int r = static_cast<int>(t.rank());
        int seen = max_rank.load();
        while (r > seen && !max_rank.compare_exchange_weak(seen, r)) {
        }
    };

    Stages s;
    s.pre = [&](Work& w) {
        const auto t0 = Clock::now();
        const PointCloud cloud = load_points(frames[w.index]);
        w.io_s = seconds_since(t0);
        w.voxels = voxelize(cloud, cfg.voxel);
    };
    s.transfer = [&](Work& w) {
        w.folded = fold_depth(w.voxels);
        w.voxels = Tensor();
    };
    s.net = [&](Work& w) {
        const ExecResult r = run_graph(g4, {{input_name, std::move(w.folded)}}, exec);
        w.outputs = ordered_outputs(g4, r);
    };
    s.post = [&](Work& w) {
        const HeadOutput head = make_head(w.outputs[cfg.cls_output], w.outputs[cfg.reg_output]);
        w.dets = nms_two_stage(decode(head, anchors, cfg.anchors), cfg.nms);
        w.outputs.clear();
    };

    double wall = 0.0;
    auto works = drive(frames.size(), s, opts, wall);

    PipelineResult res;
    res.report.mode = opts.mode;
    for (auto& w : works) {
        res.detections.push_back({frames[w.index].stem().string(), std::move(w.dets)});
        res.report.samples.push_back(w.t);
        res.report.io_samples.push_back(w.io_s);
        res.report.completion_s.push_back(w.done_s);
    }
    finish_measured(res.report, wall);
    res.report.max_infer_rank = max_rank.load();
    return res;
}

PipelineReport bench(const std::vector<std::filesystem::path>& frames, const Graph& g4, const PipelineConfig& cfg,
                     int repeats, const PipelineOptions& opts) {
    if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
    PipelineReport total;
    total.mode = opts.mode;
    double wall = 0.0;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        PipelineResult one = run_pipeline(frames, g4, cfg, opts);
        wall += seconds_since(t0);
        total.samples.insert(total.samples.end(), one.report.samples.begin(), one.report.samples.end());
        total.io_samples.insert(total.io_samples.end(), one.report.io_samples.begin(), one.report.io_samples.end());
        total.max_infer_rank = std::max(total.max_infer_rank, one.report.max_infer_rank);
    }
    finish_measured(total, wall);
    return total;
}

double steady_period(const PipelineReport& r, std::size_t warmup) {
    const auto& c = r.completion_s;
    if (c.size() < warmup + 2) return 0.0;
    return (c.back() - c[warmup]) / static_cast<double>(c.size() - 1 - warmup);
}

void precise_delay(double seconds) {
    if (seconds <= 0.0) return;
    const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds));
    constexpr double tail = 0.0015;
    if (seconds > tail) {
        std::this_thread::sleep_for(std::chrono::duration<double>(seconds - tail));
    }
    while (Clock::now() < deadline) std::this_thread::yield();
}

PipelineReport bench_simulated(const StageTiming& injected, std::size_t frames, const PipelineOptions& opts) {
    const FpsEstimate nominal = fps_model(injected, opts.mode);

    Stages s;
    s.pre = [&](Work&) { precise_delay(injected.pre_s); };
    s.transfer = [&](Work&) { precise_delay(injected.transfer_overhead_s); };
    s.net = [&](Work&) { precise_delay(injected.net_s); };
    s.post = [&](Work&) { precise_delay(injected.post_s); };

    double wall = 0.0;
    const auto works = drive(frames, s, opts, wall);

    PipelineReport r;
    r.mode = opts.mode;
    r.simulated = true;
    for (const auto& w : works) {
        r.samples.push_back(w.t);
        r.io_samples.push_back(0.0);
        r.completion_s.push_back(w.done_s);
    }
    finish_measured(r, wall);
    r.theoretical_fps = nominal.theoretical_fps;
    r.effective_fps = nominal.effective_fps;
    r.theoretical_fps_with_io = nominal.theoretical_fps;
    r.bottleneck = bottleneck_of(injected.pre_s, injected.net_s, injected.post_s);
    return r;
}

std::string report_json(const PipelineReport& r) {
    auto stage = [](const StageStats& s) {
        return ordered_json{{"mean_s", s.mean}, {"p95_s", s.p95}, {"min_s", s.min}, {"max_s", s.max}};
    };
    ordered_json j;
    j["mode"] = r.mode == PipelineMode::Sequential ? "sequential" : "staged";
    j["simulated"] = r.simulated;
    j["frames"] = r.frames;
    j["stages"] = {{"pre", stage(r.pre)},
                   {"net", stage(r.net)},
                   {"post", stage(r.post)},
                   {"transfer_overhead", stage(r.transfer)}};
    j["theoretical_fps"] = r.theoretical_fps;
    j["effective_fps"] = r.effective_fps;
    j["bottleneck"] = r.bottleneck;
    j["measured_fps"] = r.measured_fps;
    j["steady_period_s"] = steady_period(r);
    j["with_io"] = {{"io", stage(r.io)}, {"theoretical_fps", r.theoretical_fps_with_io}};
    j["max_infer_rank"] = r.max_infer_rank;
    return j.dump(2);
}

std::vector<LabeledBox> to_labeled(const std::vector<FrameDetections>& dets, const PipelineConfig& cfg) {
    std::vector<LabeledBox> out;
    for (const auto& f : dets) {
        for (const auto& d : f.dets) {
            out.push_back({f.frame, cfg.anchors.classes.at(static_cast<std::size_t>(d.cls)).name, d.score, d.box});
        }
    }
    return out;
}

} // namespace voxlow
