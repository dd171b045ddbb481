#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxlow/exec.hpp"
#include "voxlow/graph.hpp"

namespace voxlow {

/// The source graph uses something a rank-4 target cannot express.
class LoweringError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LoweringReport {
    std::map<std::string, std::vector<std::string>> node_map; // source id -> generated ids
    std::map<std::size_t, int64_t> tensor_rank_histogram;     // over the lowered graph
    int64_t conv3d_lowered = 0;
    int64_t depth_taps_emitted = 0;
};

struct LoweredGraph {
    Graph graph;
    LoweringReport report;
};

/// Rewrites a Conv3D / rank-5 graph into an equivalent graph whose tensors are all rank <= 4.
///
/// Rank-5 tensors (B,C,D,H,W) are carried in folded form (B,C*D,H,W), channel index c*D + d.
/// Each Conv3D becomes, per output depth slice, a sum of Conv2Ds over the input depth slices
/// its kernel taps touch (taps that fall in the zero padding are dropped), and the slice results
/// are interleaved back into c-major order. When a single output slice sees every input depth
/// the whole kernel collapses into one Conv2D over all folded channels.
///
/// Generated ids: "<src>/d<d'>/t<j>" per tap, "<src>/d<d'>/sum", "<src>/g<d>" for depth gathers,
/// "<src>/out" for the folded result. Other nodes keep their ids.
LoweredGraph lower(const Graph& g5);

/// Empty iff the graph has no Conv3D and no tensor of rank > 4. Reports one violation per Conv3D
/// node and one per connected rank>4 region that contains no Conv3D.
std::vector<std::string> check_rank4(const Graph& g);

struct EquivalenceReport {
    double max_diff = 0.0;
    bool pass = false;
    int trials = 0;
    std::vector<double> trial_max_diff;
    std::string structural_error; // non-empty when the graphs could not be compared
};

/// Runs both graphs on seeded uniform[-1,1] inputs and compares the folded source outputs.
EquivalenceReport verify_equivalence(const Graph& g5, const Graph& g4, int trials, double tol, uint64_t seed);

struct QuantizeResult {
    Graph graph;                                  // g4 with per-tensor QuantSpec annotations
    std::map<std::string, double> output_max_abs_diff; // quantized vs float, per graph output
    std::vector<std::string> warnings;
};

inline constexpr double kMinQuantScale = 1e-8;

/// Calibrates per-tensor symmetric int8 scales (max_abs / 127) over rank-4 input sets.
QuantizeResult quantize(const Graph& g4, const std::vector<TensorMap>& calibration);

/// Converts rank-5 source inputs into the folded form a lowered graph expects.
TensorMap fold_inputs(const TensorMap& inputs);

} // namespace voxlow
