#pragma once

// Layer partition search under per-core hard constraints: candidate grids,
// the weighted cost of a layer tally and the reverse-order beam search over
// the layer chain.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nf/connectivity.hpp"
#include "nf/model_ir.hpp"
#include "nf/partition.hpp"

namespace nf {

/// Weights of the core, synapse, axon and off-chip terms of the layer cost.
struct CostWeights
{
    double cores = 1.0;
    double synapses = 1.0;
    double axons = 1.0;
    double offchip = 1.0;
};

/// Throws UsageError when a weight is negative or all are zero.
void validate(const CostWeights &w);
CostWeights parse_cost_weights(const std::string &text);

/// a0*cores + a1*syn/syn_budget + a2*axons/(max_in + max_out) + a3*offchip.
double evaluate_cost(const ResourceTally &tally, const CostWeights &w,
        const CoreConstraints &constraints = {});

enum class Violation { none, neurons, input_axons, output_axons, synapses };
const char *to_string(Violation v);

struct HardCheck
{
    Violation violation = Violation::none;
    /// Offending core, -1 when valid.
    std::int64_t core = -1;
    std::int64_t value = 0;
    std::int64_t limit = 0;

    [[nodiscard]] bool ok() const { return violation == Violation::none; }
};

/// First violated limit in core order, then in the order neurons, input
/// axons, output axons, synapses. Limits are inclusive.
HardCheck check_hard(const ResourceTally &tally, const CoreConstraints &constraints = {});

/// Every balanced grid whose largest box fits the compartment bound, ordered
/// by (cores, largest minus smallest box, nz, ny, nx). Per axis only the
/// smallest split count of each distinct part length is kept. Throws
/// NoFeasiblePartition when nothing fits.
std::vector<Grid> rank_candidates(const LayerSpec &layer, const CoreConstraints &constraints = {});

/// First m entries of rank_candidates.
std::vector<Partition> propose_candidates(const LayerSpec &layer, std::int64_t m,
        const CoreConstraints &constraints = {});

struct OptimizeOptions
{
    std::int64_t beam = 4;
    CostWeights weights;
    CoreConstraints constraints;
    SharingMode sharing = SharingMode::on;
    SynapseCostModel cost_model;
    /// Pair evaluations a chain may spend on infeasible extensions per step,
    /// as a multiple of the beam width.
    std::int64_t failure_budget_factor = 4;
};

struct OptimizeResult
{
    std::vector<Partition> partitions;
    std::vector<ResourceTally> tallies;
    std::vector<double> layer_costs;
    double total_cost = 0.0;
    /// Beam width of the search that produced the chain.
    std::int64_t beam_used = 0;
};

/// Per-layer tallies of a fixed chain, computed from scratch. Chip maps are
/// per layer and may be empty (single chip).
std::vector<ResourceTally> tally_chain(std::span<const LayerSpec> layers,
        std::span<const Partition> partitions, SharingMode sharing,
        const SynapseCostModel &cost_model, std::span<const ChipMap> chips = {});

/// Beam search of exactly the given width, layers visited output to input.
/// Throws InfeasibleNetwork when every chain dies.
OptimizeResult beam_search(std::span<const LayerSpec> layers, const OptimizeOptions &options);

/// Best chain over beam widths 1, 2, 4, ... below options.beam plus
/// options.beam itself, so the returned cost never increases with the width.
/// Layers must be lowered (no Flatten).
OptimizeResult optimize(std::span<const LayerSpec> layers, const OptimizeOptions &options = {});

} // namespace nf
