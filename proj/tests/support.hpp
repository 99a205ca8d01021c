#pragma once

// Independent oracles and random generators for the test suites. Nothing
// here calls the library's connectivity or geometry code.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "nf/mapper.hpp"
#include "nf/model_ir.hpp"
#include "nf/partition.hpp"
#include "nf/partitioner.hpp"
#include "nf/simulator.hpp"

namespace oracle {

struct Triple
{
    std::int64_t pre = 0;
    std::int64_t post = 0;
    std::int64_t weight_id = 0;
    auto operator<=>(const Triple &) const = default;
};

/// Every (pre, post, weight id) of the connection into `post`, by direct
/// enumeration of kernel applications, sorted.
std::vector<Triple> brute_force_unroll(const nf::Shape &in, const nf::LayerSpec &post);

/// Core owning each neuron of a layer split by `grid`, from first principles.
std::vector<std::int64_t> owner_core(const nf::Shape &shape, const nf::Grid &grid);
/// Position of each neuron inside its core's row-major box.
std::vector<std::int64_t> local_index(const nf::Shape &shape, const nf::Grid &grid);

/// Per destination core: the distinct canonical column templates (a pre
/// neuron's entries on that core, made relative to their smallest local
/// destination) and their total entry count.
struct TemplateCount
{
    std::int64_t templates = 0;
    std::int64_t entries = 0;
};
std::vector<TemplateCount> canonical_templates(const std::vector<Triple> &triples, const nf::Shape &post_shape,
        const nf::Grid &post_grid);

/// Distinct weight ids reaching each destination core.
std::vector<std::int64_t> distinct_weights(const std::vector<Triple> &triples, const nf::Shape &post_shape,
        const nf::Grid &post_grid);

/// Plain integer simulation straight from brute-force triples.
nf::SpikeTrace simulate(const nf::SnnNetwork &net, const nf::SimInput &input, std::int64_t timesteps);

/// Synapses traversed when every spike before the last step is delivered.
std::int64_t fan_out_ops(const nf::SnnNetwork &net, const nf::SpikeTrace &trace, std::int64_t timesteps);

/// Random lowered integer chain with at most `max_layers` layers (input
/// included) and at most `max_neurons` neurons.
nf::SnnNetwork random_network(std::mt19937_64 &rng, std::int64_t max_layers, std::int64_t max_neurons);

/// Random frame or raster for the network's input layer.
nf::SimInput random_input(std::mt19937_64 &rng, const nf::SnnNetwork &net, std::int64_t timesteps);

std::vector<nf::LayerSpec> specs_of(const nf::SnnNetwork &net);

/// Per-core usage of a whole chain on one chip, from brute-force triples:
/// discrete axons for multi-destination neurons, contiguous runs otherwise
/// (when `sharing`), and per-core canonical templates under the cheapest
/// encoding. Injection, readout and soft-reset extras as in the hardware
/// model.
std::vector<std::vector<nf::CoreUsage>> retally_chain(const std::vector<nf::LayerSpec> &layers,
        const std::vector<nf::Grid> &grids, bool sharing);

/// True when every core of every layer is within the limits.
bool within_limits(const std::vector<std::vector<nf::CoreUsage>> &usage, const nf::CoreConstraints &limits);

/// Cost of a fixed chain from library tallies; `feasible` reports whether
/// every core passes the hard limits.
double chain_cost(std::span<const nf::LayerSpec> layers, std::span<const nf::Partition> parts,
        const nf::OptimizeOptions &o, bool *feasible = nullptr);

/// Every grid whose largest box fits the per-core neuron limit.
std::vector<nf::Grid> all_grids(const nf::LayerSpec &l, const nf::CoreConstraints &c);

/// Minimum feasible chain cost over every grid of every layer; infinity when
/// nothing fits.
double exhaustive_optimum(const std::vector<nf::LayerSpec> &layers, const nf::OptimizeOptions &o);

/// Limits small enough that toy networks need several cores per layer.
nf::OptimizeOptions tight_options(std::int64_t beam);

} // namespace oracle
