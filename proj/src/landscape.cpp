#include "lpe/landscape.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "lpe/errors.hpp"
#include "lpe/metrics.hpp"

namespace lpe {

std::vector<double> flatten(const Checkpoint& ckpt) {
    std::vector<double> flat;
    flat.reserve(ckpt.parameter_count());
    for (std::size_t i = 0; i < ckpt.spec.num_layers(); ++i) {
        for (float v : ckpt.weight(i).data()) flat.push_back(v);
        for (float v : ckpt.bias(i).data()) flat.push_back(v);
    }
    return flat;
}

Checkpoint unflatten(const Checkpoint& like, const std::vector<double>& flat) {
    if (flat.size() != like.parameter_count()) {
        throw DimensionError("flat vector of " + std::to_string(flat.size()) + " values for a model with " +
                             std::to_string(like.parameter_count()) + " parameters");
    }
    Checkpoint out = like;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < out.spec.num_layers(); ++i) {
        for (auto& v : out.weight(i).mutable_data()) v = static_cast<float>(flat[pos++]);
        for (auto& v : out.bias(i).mutable_data()) v = static_cast<float>(flat[pos++]);
    }
    return out;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> minus(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

}  // namespace

std::vector<double> PlaneBasis::point(PlaneCoord c) const {
    std::vector<double> w(origin.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = origin[i] + c.alpha * u[i] + c.beta * v[i];
    return w;
}

Checkpoint PlaneBasis::checkpoint_at(PlaneCoord c) const { return unflatten(layout, point(c)); }

PlaneCoord PlaneBasis::project(const std::vector<double>& w) const {
    const auto d = minus(w, origin);
    return {dot(d, u), dot(d, v)};
}

PlaneBasis plane_basis(const Checkpoint& w0, const Checkpoint& w1, const Checkpoint& w2) {
    if (!(w0.spec == w1.spec) || !(w0.spec == w2.spec)) {
        throw DimensionError("landscape anchors must share one model layout");
    }
    PlaneBasis basis;
    basis.layout = w0;
    basis.origin = flatten(w0);
    const auto p1 = flatten(w1);
    const auto p2 = flatten(w2);

    basis.u = minus(p1, basis.origin);
    const double len_u = std::sqrt(dot(basis.u, basis.u));
    if (len_u == 0.0) throw GeometryError("anchors a and b coincide; the plane is undefined");
    for (auto& x : basis.u) x /= len_u;

    const auto d2 = minus(p2, basis.origin);
    const double len_d2 = std::sqrt(dot(d2, d2));
    if (len_d2 == 0.0) throw GeometryError("anchors a and c coincide; the plane is undefined");
    const double along = dot(d2, basis.u);
    basis.v = d2;
    for (std::size_t i = 0; i < basis.v.size(); ++i) basis.v[i] -= along * basis.u[i];
    const double len_v = std::sqrt(dot(basis.v, basis.v));
    // Weights are stored as float, so anything within float rounding of a line counts as collinear.
    if (len_v <= 1e-6 * len_d2) {
        throw GeometryError("anchors b and c lie on one line through a; the plane is undefined");
    }
    for (auto& x : basis.v) x /= len_v;

    basis.anchors = {PlaneCoord{0.0, 0.0}, PlaneCoord{len_u, 0.0}, PlaneCoord{along, len_v}};
    return basis;
}

namespace {

std::vector<std::size_t> predictions(const Tensor& logits) {
    std::vector<std::size_t> out(logits.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax(logits.row(i));
    return out;
}

double disagreement(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::size_t differ = 0;
    for (std::size_t i = 0; i < a.size(); ++i) differ += a[i] != b[i] ? 1 : 0;
    return static_cast<double>(differ) / static_cast<double>(a.size());
}

CellMetrics cell_metrics(const Checkpoint& ckpt, const Dataset& data, const std::vector<std::size_t>& ref1,
                         const std::vector<std::size_t>& ref2) {
    const Tensor z = forward(ckpt, data.features);
    const Tensor stacked({1, z.rows(), z.cols()}, z.values());
    const auto pred = predictions(z);
    return {ensemble_nll(stacked, data.labels), disagreement(pred, ref1), disagreement(pred, ref2)};
}

struct AnchorRefs {
    std::vector<std::size_t> first, second;
};

AnchorRefs anchor_refs(const PlaneBasis& basis, const Dataset& data) {
    return {predictions(forward(basis.checkpoint_at(basis.anchors[1]), data.features)),
            predictions(forward(basis.checkpoint_at(basis.anchors[2]), data.features))};
}

}  // namespace

CellMetrics eval_point(const PlaneBasis& basis, const Dataset& data, PlaneCoord c) {
    data.validate();
    const auto refs = anchor_refs(basis, data);
    return cell_metrics(basis.checkpoint_at(c), data, refs.first, refs.second);
}

LandscapeGrid eval_grid(const PlaneBasis& basis, const Dataset& data, std::size_t resolution, double margin) {
    if (resolution < 3) throw ConfigError("landscape resolution must be >= 3");
    if (!(margin >= 0.0)) throw ConfigError("landscape margin must be >= 0");
    data.validate();
    if (data.dim() != basis.layout.spec.input_dim()) {
        throw DimensionError("dataset width " + std::to_string(data.dim()) + " does not match model input width " +
                             std::to_string(basis.layout.spec.input_dim()));
    }

    double a_lo = basis.anchors[0].alpha, a_hi = a_lo, b_lo = basis.anchors[0].beta, b_hi = b_lo;
    for (const auto& c : basis.anchors) {
        a_lo = std::min(a_lo, c.alpha);
        a_hi = std::max(a_hi, c.alpha);
        b_lo = std::min(b_lo, c.beta);
        b_hi = std::max(b_hi, c.beta);
    }
    const double pad = margin * std::hypot(a_hi - a_lo, b_hi - b_lo);
    a_lo -= pad;
    a_hi += pad;
    b_lo -= pad;
    b_hi += pad;

    LandscapeGrid grid;
    grid.resolution = resolution;
    grid.anchors = basis.anchors;
    const double steps = static_cast<double>(resolution - 1);
    for (std::size_t i = 0; i < resolution; ++i) {
        grid.alphas.push_back(a_lo + (a_hi - a_lo) * static_cast<double>(i) / steps);
        grid.betas.push_back(b_lo + (b_hi - b_lo) * static_cast<double>(i) / steps);
    }

    const auto refs = anchor_refs(basis, data);
    grid.cells.reserve(resolution * resolution);
    for (std::size_t i = 0; i < resolution; ++i) {
        for (std::size_t j = 0; j < resolution; ++j) {
            grid.cells.push_back(cell_metrics(basis.checkpoint_at({grid.alphas[i], grid.betas[j]}), data, refs.first,
                                              refs.second));
        }
    }
    for (std::size_t k = 0; k < 3; ++k) {
        grid.anchor_cells[k] = cell_metrics(basis.checkpoint_at(basis.anchors[k]), data, refs.first, refs.second);
    }
    return grid;
}

namespace {

std::string num(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

}  // namespace

void write_grid_csv(const std::filesystem::path& path, const LandscapeGrid& grid) {
    auto out = open_csv(path);
    out << "alpha,beta,nll,disagree_1,disagree_2\n";
    for (std::size_t i = 0; i < grid.resolution; ++i) {
        for (std::size_t j = 0; j < grid.resolution; ++j) {
            const auto& c = grid.at(i, j);
            out << num(grid.alphas[i]) << ',' << num(grid.betas[j]) << ',' << num(c.nll) << ',' << num(c.disagree_1)
                << ',' << num(c.disagree_2) << '\n';
        }
    }
    if (!out) throw Error("failed writing " + path.string());
}

void write_anchor_csv(const std::filesystem::path& path, const LandscapeGrid& grid,
                      const std::array<std::string, 3>& names) {
    auto out = open_csv(path);
    out << "name,alpha,beta,nll,disagree_1,disagree_2\n";
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& c = grid.anchor_cells[k];
        out << names[k] << ',' << num(grid.anchors[k].alpha) << ',' << num(grid.anchors[k].beta) << ',' << num(c.nll)
            << ',' << num(c.disagree_1) << ',' << num(c.disagree_2) << '\n';
    }
    if (!out) throw Error("failed writing " + path.string());
}

}  // namespace lpe
