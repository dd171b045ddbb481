#include "voxlow/voxelizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "voxlow/graph.hpp"

namespace voxlow {

std::array<int64_t, 3> VoxelGridCfg::extents() const {
    std::array<int64_t, 3> e{};
    for (int a = 0; a < 3; ++a) e[a] = std::llround((roi_max[a] - roi_min[a]) / voxel_size[a]);
    return e;
}

int64_t VoxelGridCfg::channels() const {
    return static_cast<int64_t>(aggregation.size()) + (include_occupancy ? 1 : 0);
}

void VoxelGridCfg::check() const {
    for (int a = 0; a < 3; ++a) {
        if (!(roi_max[a] > roi_min[a])) throw std::invalid_argument("voxel grid: roi_max must exceed roi_min");
        if (!(voxel_size[a] > 0.0)) throw std::invalid_argument("voxel grid: voxel_size must be positive");
    }
    for (int64_t e : extents()) {
        if (e < 1) throw std::invalid_argument("voxel grid: every extent must be >= 1");
    }
    if (channels() < 1) throw std::invalid_argument("voxel grid: no output channels");
}

Tensor voxelize(const PointCloud& cloud, const VoxelGridCfg& cfg, VoxelizeStats* stats) {
    cfg.check();
    const std::size_t nfeat = cfg.aggregation.size();
    const auto [W, H, D] = cfg.extents();
    const int64_t C = cfg.channels();
    const int64_t cells = D * H * W;
    const int64_t f0 = cfg.include_occupancy ? 1 : 0;

    std::vector<int64_t> count(static_cast<std::size_t>(cells), 0);
    std::vector<double> acc(static_cast<std::size_t>(cells) * nfeat, 0.0);

    VoxelizeStats st;
    const std::array<int64_t, 3> ext{W, H, D};
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const RadarPoint& p = cloud.points[i];
        if (p.features.size() != nfeat) {
            throw std::invalid_argument("point " + std::to_string(i) + " has " + std::to_string(p.features.size()) +
                                        " features, grid expects " + std::to_string(nfeat));
        }
        const std::array<double, 3> pos{p.x, p.y, p.z};
        std::array<int64_t, 3> idx{};
        bool inside = true;
        for (int a = 0; a < 3 && inside; ++a) {
            if (!(pos[a] >= cfg.roi_min[a] && pos[a] <= cfg.roi_max[a])) {
                inside = false;
                break;
            }
            const auto k = static_cast<int64_t>(std::floor((pos[a] - cfg.roi_min[a]) / cfg.voxel_size[a]));
            idx[a] = std::clamp<int64_t>(k, 0, ext[a] - 1); // roi_max itself closes the last cell
        }
        if (!inside) {
            ++st.dropped;
            continue;
        }
        ++st.mapped;
        const std::size_t cell = static_cast<std::size_t>((idx[2] * H + idx[1]) * W + idx[0]);
        const bool first = count[cell]++ == 0;
        for (std::size_t f = 0; f < nfeat; ++f) {
            double& slot = acc[cell * nfeat + f];
            if (cfg.aggregation[f] == Aggregation::Mean) {
                slot += p.features[f];
            } else {
                slot = first ? p.features[f] : std::max(slot, p.features[f]);
            }
        }
    }

    Tensor out{Shape{1, C, D, H, W}};
    auto data = out.data();
    for (int64_t cell = 0; cell < cells; ++cell) {
        const int64_t n = count[static_cast<std::size_t>(cell)];
        if (n == 0) continue;
        if (cfg.include_occupancy) data[static_cast<std::size_t>(cell)] = 1.0f;
        for (std::size_t f = 0; f < nfeat; ++f) {
            double v = acc[static_cast<std::size_t>(cell) * nfeat + f];
            if (cfg.aggregation[f] == Aggregation::Mean) v /= static_cast<double>(n);
            data[static_cast<std::size_t>((f0 + static_cast<int64_t>(f)) * cells + cell)] = static_cast<float>(v);
        }
    }
    if (stats) *stats = st;
    return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    const auto ws = " \t\r";
    s.erase(0, s.find_first_not_of(ws));
    const auto end = s.find_last_not_of(ws);
    s.erase(end == std::string::npos ? 0 : end + 1);
    return s;
}

double parse_real(const std::string& raw, const std::string& ctx) {
    const std::string s = trim(raw);
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (s.empty() || ec != std::errc() || ptr != e || !std::isfinite(v)) {
        throw ParseError(ctx + ": '" + s + "' is not a finite decimal number");
    }
    return v;
}

} // namespace

PointCloud load_points(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    const std::string file = path.string();

    std::string line;
    if (!std::getline(is, line)) throw ParseError(file + ": missing header");
    auto header = split_csv(line);
    for (auto& h : header) h = trim(h);
    if (header.size() < 4 || header[0] != "x" || header[1] != "y" || header[2] != "z" || header[3] != "power") {
        throw ParseError(file + ": header must start with x,y,z,power");
    }

    PointCloud cloud;
    cloud.feature_names.assign(header.begin() + 3, header.end());
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cells = split_csv(line);
        const std::string ctx = file + ": line " + std::to_string(lineno);
        if (cells.size() != header.size()) {
            throw ParseError(ctx + ": expected " + std::to_string(header.size()) + " columns, got " +
                             std::to_string(cells.size()));
        }
        RadarPoint p;
        p.x = parse_real(cells[0], ctx + " column x");
        p.y = parse_real(cells[1], ctx + " column y");
        p.z = parse_real(cells[2], ctx + " column z");
        for (std::size_t c = 3; c < cells.size(); ++c) p.features.push_back(parse_real(cells[c], ctx + " column " + header[c]));
        cloud.points.push_back(std::move(p));
    }
    return cloud;
}

void save_points(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << "x,y,z";
    for (const auto& f : cloud.feature_names) os << ',' << f;
    os << '\n';
    os.precision(std::numeric_limits<double>::max_digits10);
    for (const auto& p : cloud.points) {
        os << p.x << ',' << p.y << ',' << p.z;
        for (double f : p.features) os << ',' << f;
        os << '\n';
    }
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

} // namespace voxlow
