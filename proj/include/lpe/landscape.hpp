#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "lpe/dataset.hpp"
#include "lpe/nn.hpp"

namespace lpe {

// All parameters in layer order (W then b per layer), widened to double.
std::vector<double> flatten(const Checkpoint& ckpt);

// Inverse of flatten against the layout of `like`.
Checkpoint unflatten(const Checkpoint& like, const std::vector<double>& flat);

struct PlaneCoord {
    double alpha = 0.0;
    double beta = 0.0;
};

// Orthonormal frame of the plane through three weight vectors: origin w0, u along w1 - w0,
// v the Gram-Schmidt remainder of w2 - w0.
struct PlaneBasis {
    Checkpoint layout;  // ModelSpec and tensor shapes used to rebuild checkpoints
    std::vector<double> origin;
    std::vector<double> u;
    std::vector<double> v;
    std::array<PlaneCoord, 3> anchors;

    std::vector<double> point(PlaneCoord c) const;
    Checkpoint checkpoint_at(PlaneCoord c) const;
    PlaneCoord project(const std::vector<double>& w) const;
};

// Throws GeometryError when anchors coincide or are collinear.
PlaneBasis plane_basis(const Checkpoint& w0, const Checkpoint& w1, const Checkpoint& w2);

struct CellMetrics {
    double nll = 0.0;
    double disagree_1 = 0.0;  // argmax disagreement with anchor 1 (w1)
    double disagree_2 = 0.0;  // argmax disagreement with anchor 2 (w2)
};

// R x R surfaces. Cell (i, j) sits at (alphas[i], betas[j]) and is stored at i * R + j.
struct LandscapeGrid {
    std::size_t resolution = 0;
    std::vector<double> alphas;
    std::vector<double> betas;
    std::vector<CellMetrics> cells;
    std::array<PlaneCoord, 3> anchors;
    std::array<CellMetrics, 3> anchor_cells;  // evaluated at each anchor's exact coordinates

    const CellMetrics& at(std::size_t i, std::size_t j) const { return cells[i * resolution + j]; }
};

constexpr std::size_t kDefaultResolution = 25;
constexpr double kDefaultMargin = 0.2;

// Metrics of the model at plane coordinate c. Anchor predictions come from the plane's own
// reconstruction of w1 and w2, so an anchor never disagrees with itself.
CellMetrics eval_point(const PlaneBasis& basis, const Dataset& data, PlaneCoord c);

// The grid covers the anchors' bounding box widened on every side by margin times the box
// diagonal.
LandscapeGrid eval_grid(const PlaneBasis& basis, const Dataset& data, std::size_t resolution = kDefaultResolution,
                        double margin = kDefaultMargin);

// alpha,beta,nll,disagree_1,disagree_2 with one row per cell in storage order.
void write_grid_csv(const std::filesystem::path& path, const LandscapeGrid& grid);

// name,alpha,beta followed by the anchor-cell metrics.
void write_anchor_csv(const std::filesystem::path& path, const LandscapeGrid& grid,
                      const std::array<std::string, 3>& names);

}  // namespace lpe
