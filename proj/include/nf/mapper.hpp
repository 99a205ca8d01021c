#pragma once

// Chip placement, synapse encodings, compartment tables and the deployment
// image with its canonical JSON serialization.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nf/connectivity.hpp"
#include "nf/model_ir.hpp"
#include "nf/partition.hpp"

namespace nf {

inline constexpr const char *kImageFormat = "nfimg/1";

struct CoreRef
{
    std::int32_t chip = 0;
    std::int32_t index = 0;
    auto operator<=>(const CoreRef &) const = default;
};

/// Chip and core slot of every core of every layer.
struct Placement
{
    std::vector<std::vector<CoreRef>> cores;
    std::int64_t chips_used = 0;

    [[nodiscard]] std::vector<ChipMap> chip_maps() const;
};

/// Sequential first-fit in layer order. Throws CapacityError when the chain
/// needs more than chips * cores_per_chip cores.
Placement place(std::span<const Partition> partitions, std::int64_t chips,
        const CoreConstraints &constraints = {});

struct EncodedGroup
{
    Compression scheme = Compression::sparse;
    /// sparse: [dst, weight_id]*; dense: weight_id or -1 per slot from 0 to
    /// the largest dst; runlength: [start, length, weight_id * length]*.
    std::vector<std::int32_t> payload;
    std::int64_t cost_units = 0;
    bool operator==(const EncodedGroup &) const = default;
};

/// Dense and run-length need strictly increasing destinations (MapError
/// otherwise); auto picks the cheapest of the three.
EncodedGroup encode_group(std::span<const Synapse> entries, Compression scheme,
        const SynapseCostModel &model = {});
std::vector<Synapse> decode_group(const EncodedGroup &group);

enum class CompartmentRole : std::int32_t { soma = 0, reset = 1 };

struct Compartment
{
    CompartmentRole role = CompartmentRole::soma;
    /// Layer-global neuron index.
    std::int64_t neuron = 0;
    /// Weight of the reset compartment's connection back to its soma.
    std::int64_t recurrent_weight = 0;
    bool operator==(const Compartment &) const = default;
};

/// Every soma is followed by a reset compartment with recurrent weight
/// -threshold. Throws MapError when the result exceeds the compartment bound.
std::vector<Compartment> expand_soft_reset(std::span<const Compartment> somas, std::int64_t threshold,
        const CoreConstraints &constraints = {});

enum class InputAxonKind : std::int32_t { synaptic = 0, injection = 1, recurrent = 2 };

struct InputAxon
{
    InputAxonKind kind = InputAxonKind::synaptic;
    /// synaptic: group id; injection and recurrent: local target neuron.
    std::int32_t a = 0;
    /// synaptic: destination base of the group.
    std::int32_t b = 0;
    bool operator==(const InputAxon &) const = default;
};

enum class OutputAxonKind : std::int32_t { route = 0, readout = 1 };

struct OutputAxon
{
    OutputAxonKind kind = OutputAxonKind::route;
    /// Source neurons [first, first + count) in local order.
    std::int32_t first = 0;
    std::int32_t count = 1;
    /// -1 for readout.
    std::int32_t dst_chip = -1;
    std::int32_t dst_core = -1;
    std::int32_t dst_axon = -1;
    bool operator==(const OutputAxon &) const = default;
};

struct CoreImage
{
    std::int32_t layer = 0;
    /// Position of the core inside its layer partition.
    std::int32_t part = 0;
    std::vector<Compartment> compartments;
    std::vector<InputAxon> input_axons;
    std::vector<EncodedGroup> lists;
    std::vector<std::vector<GroupSlot>> groups;
    std::vector<OutputAxon> output_axons;
    bool operator==(const CoreImage &) const = default;
};

struct ChipImage
{
    std::vector<CoreImage> cores;
    bool operator==(const ChipImage &) const = default;
};

struct LayerImage
{
    /// Geometry and neuron configuration; weights live in `weights`.
    LayerSpec spec;
    Grid grid;
    std::vector<CoreRef> cores;
    std::vector<std::int64_t> weights;
};

struct DeploymentImage
{
    std::string name;
    std::int64_t timesteps = 0;
    std::int64_t cores_per_chip = 128;
    SharingMode sharing = SharingMode::on;
    Compression compression = Compression::automatic;
    std::vector<LayerImage> layers;
    std::vector<ChipImage> chips;

    [[nodiscard]] const CoreImage &core(const CoreRef &ref) const;
    [[nodiscard]] std::int64_t core_count() const;
};

bool operator==(const LayerImage &a, const LayerImage &b);
bool operator==(const DeploymentImage &a, const DeploymentImage &b);

struct MapOptions
{
    SharingMode sharing = SharingMode::on;
    SynapseCostModel cost_model;
    CoreConstraints constraints;
    std::int64_t chips = 1;
};

/// Maps an integer network with a partition chain. Off-chip doubling is
/// recomputed from the placement; a core over any limit throws
/// CapacityError.
DeploymentImage build_image(const SnnNetwork &net, std::span<const Partition> partitions,
        const MapOptions &options = {});

/// Partition of layer l reconstructed from its grid.
Partition layer_partition(const DeploymentImage &image, std::size_t layer);

/// Per-layer usage recounted from the image tables alone.
std::vector<ResourceTally> tally_image(const DeploymentImage &image);

/// (pre, post, weight_id) with layer-global indices.
struct ExpandedSynapse
{
    std::int64_t pre = 0;
    std::int64_t post = 0;
    std::int32_t weight_id = 0;
    auto operator<=>(const ExpandedSynapse &) const = default;
};

/// Every synapse reachable through route axons, per layer pair, sorted.
std::vector<std::vector<ExpandedSynapse>> expand_connections(const DeploymentImage &image);

/// Throws IntegrityError on the first dangling reference.
void verify_image(const DeploymentImage &image);

/// Canonical text: sorted keys, base64 int32 payload blocks. Verifies first.
std::string emit(const DeploymentImage &image);
DeploymentImage parse_image(const std::string &text);
void write_image(const DeploymentImage &image, const std::filesystem::path &path);
DeploymentImage load_image(const std::filesystem::path &path);

std::string base64_encode_i32(std::span<const std::int32_t> values);
std::vector<std::int32_t> base64_decode_i32(const std::string &text);

} // namespace nf
