#pragma once

// Column-major unrolling of layer-to-layer connectivity, canonical shared
// synapse storage and axon accounting for a pair of partitioned layers.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nf/model_ir.hpp"
#include "nf/partition.hpp"

namespace nf {

/// Unrolled connectivity: for each pre-neuron, the (post index, weight id)
/// entries of its column, sorted by post index.
struct ConnectionPair
{
    std::string pre_id;
    std::string post_id;
    Shape pre_shape;
    Shape post_shape;
    std::int64_t weight_count = 0;
    std::vector<std::int64_t> offsets;
    std::vector<std::int32_t> post;
    std::vector<std::int32_t> weight_id;

    [[nodiscard]] std::int64_t pre_count() const { return pre_shape.size(); }
    [[nodiscard]] std::int64_t entry_count() const { return static_cast<std::int64_t>(post.size()); }
    [[nodiscard]] std::span<const std::int32_t> column_post(std::int64_t pre) const;
    [[nodiscard]] std::span<const std::int32_t> column_weight(std::int64_t pre) const;
};

/// Throws UnsupportedKind when post is an Input or Flatten layer.
ConnectionPair unroll(const LayerSpec &pre, const LayerSpec &post);

/// off: private storage per (pre-neuron, destination core);
/// on: populations and deduplicated storage;
/// full: like `on`, but synapse memory is charged as if each kernel element
/// were stored once per core. Hypothetical; used as a lower bound only.
enum class SharingMode { off, on, full };
enum class Compression { automatic, sparse, dense, runlength };

const char *to_string(SharingMode mode);
const char *to_string(Compression scheme);
SharingMode parse_sharing(const std::string &text);
Compression parse_compression(const std::string &text);

struct Synapse
{
    std::int32_t dst_local = 0;
    std::int32_t weight_id = 0;
    bool operator==(const Synapse &) const = default;
};

/// A stored synapse list with destinations relative to its smallest one.
struct SynapseList
{
    std::vector<Synapse> entries;
    std::uint64_t hash = 0;
};

struct GroupSlot
{
    std::int32_t list = 0;
    /// Offset of the slot's first destination from the group base.
    std::int32_t offset = 0;
    bool operator==(const GroupSlot &) const = default;
};

/// Shared synapse group: one slot per member of a source population. Slot s
/// reaches dst_base + offset + entry.dst_local for every entry of its list.
struct SynapseGroup
{
    std::vector<GroupSlot> slots;
    std::uint64_t hash = 0;

    [[nodiscard]] std::int64_t slot_count() const { return static_cast<std::int64_t>(slots.size()); }
};

/// Synapse memory of one destination core.
struct CoreSynapseStore
{
    std::vector<SynapseList> lists;
    std::vector<SynapseGroup> groups;
};

/// An axon from a run of contiguous source neurons [first, first + count) on
/// src_core to dst_core. Non-shared axons carry a single neuron.
struct PopulationAxon
{
    std::int32_t src_core = 0;
    std::int32_t dst_core = 0;
    std::int32_t group = 0;
    std::int32_t dst_base = 0;
    std::int32_t first = 0;
    std::int32_t count = 1;
    bool shared = false;
};

struct GroupSet
{
    SharingMode sharing = SharingMode::on;
    /// Indexed by destination core.
    std::vector<CoreSynapseStore> stores;
    std::vector<PopulationAxon> axons;
};

std::uint64_t hash_synapses(std::span<const Synapse> entries);

/// Per-slot synapse lists of a group relative to the group base.
std::vector<std::vector<Synapse>> group_template(const CoreSynapseStore &store, const SynapseGroup &group);

GroupSet build_groups(const ConnectionPair &pair, const Partition &pre, const Partition &post,
        SharingMode sharing);

/// Synapse memory cost model, in abstract units.
struct SynapseCostModel
{
    Compression scheme = Compression::automatic;
    std::int64_t dense_per_slot = 1;
    std::int64_t sparse_per_entry = 2;
    std::int64_t runlength_per_entry = 1;
    std::int64_t runlength_per_run = 1;
};

/// Cost of a list under a fixed scheme. Dense covers every destination slot
/// from 0 to the largest offset.
std::int64_t encoding_cost(std::span<const Synapse> entries, Compression scheme,
        const SynapseCostModel &model = {});
/// Cheapest scheme; ties resolve sparse < dense < runlength.
Compression select_scheme(std::span<const Synapse> entries, const SynapseCostModel &model = {});

/// Resource charges a layer pair places on its two layers.
struct PairTally
{
    std::vector<std::int64_t> pre_output_axons;
    std::vector<std::int64_t> pre_offchip_axons;
    std::vector<std::int64_t> post_input_axons;
    std::vector<std::int64_t> post_synapse_units;
};

/// Pure accounting over build_groups output. Chip maps may be empty (single
/// chip); otherwise an axon whose endpoints differ in chip is charged twice
/// at its source.
PairTally tally(const Partition &pre, const Partition &post, const GroupSet &groups,
        const SynapseCostModel &cost_model, const ChipMap &pre_chips = {},
        const ChipMap &post_chips = {});

/// Per-layer usage from its own partition plus the pairs on either side. A
/// missing incoming pair means input injection (one input axon per neuron);
/// a missing outgoing pair means readout (one output axon per neuron).
/// Soft-reset layers get two compartments, one input axon and one synapse
/// unit per neuron.
ResourceTally assemble_layer_tally(const LayerSpec &layer, const Partition &partition,
        const PairTally *incoming, const PairTally *outgoing);

} // namespace nf
