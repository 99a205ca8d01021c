#pragma once

// Network intermediate representation: layer chain, neuron configuration,
// shape arithmetic and the JSON manifest + f32 weight blob formats.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace nf {

/// Denominator of the 12-bit decay fractions.
inline constexpr std::int64_t kDecayMax = 4096;

/// (height, width, channels); all-zero means not yet inferred.
struct Shape
{
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::int64_t channels = 0;

    [[nodiscard]] std::int64_t size() const { return height * width * channels; }
    bool operator==(const Shape &) const = default;
};

struct Extent2
{
    std::int64_t y = 1;
    std::int64_t x = 1;
    bool operator==(const Extent2 &) const = default;
};

enum class LayerKind { input, dense, conv2d, depthwise_conv2d, average_pool2d, flatten };
enum class Padding { valid, same };
enum class ResetMode { hard, soft };

const char *to_string(LayerKind kind);
const char *to_string(Padding padding);
const char *to_string(ResetMode mode);
LayerKind parse_layer_kind(const std::string &text);
Padding parse_padding(const std::string &text);
ResetMode parse_reset_mode(const std::string &text);

/// Integer neuron parameters. Decays are retained fractions
/// (kDecayMax - decay) / kDecayMax per step; i_decay = kDecayMax gives an
/// instantaneous synaptic current (plain integrate-and-fire).
struct NeuronConfig
{
    std::int64_t threshold = 1;
    std::int64_t v_decay = 0;
    std::int64_t i_decay = kDecayMax;
    ResetMode reset = ResetMode::hard;
    std::int64_t bias = 0;

    bool operator==(const NeuronConfig &) const = default;
};

/// Offset and length into the weight blob, both counted in floats.
struct WeightRef
{
    std::int64_t offset = 0;
    std::int64_t count = 0;
    bool operator==(const WeightRef &) const = default;
};

struct LayerSpec
{
    std::string id;
    LayerKind kind = LayerKind::input;
    Shape output_shape;
    /// Dense units or Conv2D filters; 0 for kinds that inherit channels.
    std::int64_t out_channels = 0;
    std::optional<Extent2> kernel;
    std::optional<Extent2> strides;
    Padding padding = Padding::valid;
    NeuronConfig neuron;
    std::optional<WeightRef> weight_ref;
    /// Resolved float weights, row-major (kh, kw, c_in, c_out) for conv,
    /// (kh, kw, c) for depthwise and (fan_in, fan_out) for dense.
    std::vector<float> weights;
};

struct NetworkSpec
{
    std::string name;
    std::int64_t timesteps = 0;
    std::vector<LayerSpec> layers;
    std::string blob_path;
};

[[nodiscard]] bool kind_has_kernel(LayerKind kind);
[[nodiscard]] bool kind_has_weights(LayerKind kind);

/// Output extent along one spatial axis; throws ShapeError when the result
/// would be non-positive.
std::int64_t conv_output_extent(
        std::int64_t in, std::int64_t kernel, std::int64_t stride, Padding padding);

/// Geometry of a convolution-like connection between two adjacent layers.
struct ConvGeometry
{
    Shape in;
    Shape out;
    Extent2 kernel;
    Extent2 strides;
    std::int64_t pad_top = 0;
    std::int64_t pad_left = 0;
    bool depthwise = false;
};

ConvGeometry conv_geometry(const Shape &in, const LayerSpec &post);

/// Index of a kernel element in the layer's weight array.
inline std::int64_t conv_weight_id(const ConvGeometry &g, std::int64_t ky,
        std::int64_t kx, std::int64_t ci, std::int64_t co)
{
    if (g.depthwise)
    {
        return (ky * g.kernel.x + kx) * g.in.channels + ci;
    }
    return ((ky * g.kernel.x + kx) * g.in.channels + ci) * g.out.channels + co;
}

/// Neurons are laid out row-major over (y, x, channel).
inline std::int64_t neuron_index(const Shape &s, std::int64_t y, std::int64_t x, std::int64_t c)
{
    return (y * s.width + x) * s.channels + c;
}

std::int64_t expected_weight_count(const Shape &in, const LayerSpec &layer);

/// Fills every output_shape by forward propagation; where a shape was already
/// present it must agree with the arithmetic. Idempotent.
NetworkSpec infer_shapes(NetworkSpec spec);

/// Checks chain structure, kernel presence, shapes and weight counts.
void validate(const NetworkSpec &spec);

std::int64_t total_neurons(const NetworkSpec &spec);

NetworkSpec parse_manifest(const nlohmann::json &manifest);
nlohmann::json to_manifest(const NetworkSpec &spec);
/// One manifest layer entry (without weights).
nlohmann::json layer_to_json(const LayerSpec &layer);
LayerSpec layer_from_json(const nlohmann::json &j);
/// Canonical manifest text: sorted keys, two-space indent, trailing newline.
std::string dump_manifest(const NetworkSpec &spec);

std::vector<float> read_f32_blob(const std::filesystem::path &path);
void write_f32_blob(const std::filesystem::path &path, std::span<const float> values);

/// Loads and validates a manifest plus its blob. An empty blob_path uses the
/// manifest's blob.path, resolved relative to the manifest directory.
NetworkSpec load_network(const std::filesystem::path &manifest_path,
        const std::filesystem::path &blob_path = {});
/// Writes the canonical manifest and the blob it references.
void save_network(const NetworkSpec &spec, const std::filesystem::path &manifest_path,
        const std::filesystem::path &blob_path);

/// Rewrites AveragePool2D as DepthwiseConv2D with uniform 1/(kh*kw) weights
/// and drops Flatten layers (a Flatten is a reindexing under row-major order).
NetworkSpec lower_for_snn(const NetworkSpec &spec);

/// A lowered layer with integer weights.
struct SnnLayer
{
    LayerSpec spec;
    std::vector<std::int64_t> weights;
};

struct SnnNetwork
{
    std::string name;
    std::int64_t timesteps = 0;
    std::vector<SnnLayer> layers;

    [[nodiscard]] std::int64_t neuron_count() const;
};

/// Checks a lowered integer network: kinds, shapes, weight counts and
/// thresholds.
void validate(const SnnNetwork &net);

} // namespace nf
