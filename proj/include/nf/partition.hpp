#pragma once

// Rectangular grid partitions of a layer volume and per-core resource
// accounting.

#include <compare>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nf/model_ir.hpp"

namespace nf {

/// Split counts along (y, x, channel).
struct Grid
{
    std::int64_t ny = 1;
    std::int64_t nx = 1;
    std::int64_t nz = 1;

    [[nodiscard]] std::int64_t cores() const { return ny * nx * nz; }
    auto operator<=>(const Grid &) const = default;
};

/// Half-open (y, x, z) ranges.
struct Box
{
    std::int64_t y0 = 0, y1 = 0;
    std::int64_t x0 = 0, x1 = 0;
    std::int64_t z0 = 0, z1 = 0;

    [[nodiscard]] std::int64_t height() const { return y1 - y0; }
    [[nodiscard]] std::int64_t width() const { return x1 - x0; }
    [[nodiscard]] std::int64_t depth() const { return z1 - z0; }
    [[nodiscard]] std::int64_t size() const { return height() * width() * depth(); }
    bool operator==(const Box &) const = default;
};

/// A layer split into ny*nx*nz boxes. Core c = (by*nx + bx)*nz + bz; neurons
/// inside a core are ordered row-major over the box.
class Partition
{
public:
    Partition() = default;
    Partition(std::string layer_id, const Shape &shape, const Grid &grid);

    [[nodiscard]] const std::string &layer_id() const { return layer_id_; }
    [[nodiscard]] const Shape &shape() const { return shape_; }
    [[nodiscard]] const Grid &grid() const { return grid_; }
    [[nodiscard]] const std::vector<Box> &boxes() const { return boxes_; }
    [[nodiscard]] std::int64_t core_count() const { return static_cast<std::int64_t>(boxes_.size()); }

    /// (core, local index) of a layer-global neuron index.
    [[nodiscard]] std::pair<std::int32_t, std::int32_t> locate(std::int64_t global) const;
    [[nodiscard]] std::int64_t global_index(std::int32_t core, std::int32_t local) const;

private:
    std::string layer_id_;
    Shape shape_;
    Grid grid_;
    std::vector<Box> boxes_;
    std::vector<std::int32_t> y_part_, x_part_, z_part_;
};

/// Ceil-balanced boundaries of n split into k parts: the first n % k parts get
/// one extra element. Returns k + 1 cut points.
std::vector<std::int64_t> split_axis(std::int64_t n, std::int64_t k);

struct CoreConstraints
{
    std::int64_t max_neurons_per_core = 1024;
    std::int64_t max_input_axons = 4096;
    std::int64_t max_output_axons = 4096;
    std::int64_t synapse_budget_units = 131072;
    std::int64_t cores_per_chip = 128;
};

struct CoreUsage
{
    /// Compartments: two per neuron under soft reset.
    std::int64_t neurons = 0;
    std::int64_t input_axons = 0;
    /// Output axon charge; an off-chip axon counts twice.
    std::int64_t output_axons = 0;
    std::int64_t synapse_units = 0;
    std::int64_t offchip_axons = 0;

    bool operator==(const CoreUsage &) const = default;
};

/// Per-core usage of one layer; the aggregates are sums over cores.
struct ResourceTally
{
    std::vector<CoreUsage> cores;

    [[nodiscard]] std::int64_t n_cores() const { return static_cast<std::int64_t>(cores.size()); }
    [[nodiscard]] std::int64_t n_syn() const;
    [[nodiscard]] std::int64_t n_axons() const;
    [[nodiscard]] std::int64_t n_offchip() const;
    [[nodiscard]] std::int64_t n_neurons() const;
    bool operator==(const ResourceTally &) const = default;
};

/// Chip of every core of a layer; empty means everything is on one chip.
using ChipMap = std::vector<std::int32_t>;

} // namespace nf
