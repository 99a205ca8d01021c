#pragma once

// End-to-end flow shared by the command-line tool and the acceptance suite:
// lowering and normalization, partitioning plus mapping, utilization reports
// and the two sweeps.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nf/mapper.hpp"
#include "nf/normalizer.hpp"
#include "nf/partitioner.hpp"
#include "nf/simulator.hpp"

namespace nf {

/// Lowers the network, then calibrates it when a batch is given and plainly
/// quantizes it otherwise.
Calibration prepare_network(const NetworkSpec &spec, std::span<const float> calibration_batch,
        const QuantizationConfig &cfg = {});

struct CompileOptions
{
    OptimizeOptions optimize;
    std::int64_t chips = 1;
};

struct Compiled
{
    OptimizeResult plan;
    DeploymentImage image;
    /// Recounted from the image, so off-chip charges reflect placement.
    std::vector<ResourceTally> tallies;
};

Compiled compile_network(const SnnNetwork &net, const CompileOptions &options = {});

/// Mean over all cores of compartments / max_neurons_per_core.
double mean_neuron_utilization(std::span<const ResourceTally> tallies, const CoreConstraints &constraints = {});
std::int64_t total_cores(std::span<const ResourceTally> tallies);

/// Per layer: grid, cores, cost terms and per-core utilization fractions.
nlohmann::json utilization_report(const Compiled &compiled, const OptimizeOptions &options);
/// One row per core: layer,core,chip,neurons,input_axons,output_axons,synapse_units and
/// the four utilization fractions.
std::string utilization_csv(const Compiled &compiled, const CoreConstraints &constraints = {});

struct Dataset
{
    /// Row-major n_samples x input_size analog frames.
    std::vector<float> frames;
    std::vector<std::int64_t> labels;
    std::int64_t input_size = 0;

    [[nodiscard]] std::int64_t size() const;
    [[nodiscard]] std::span<const float> sample(std::int64_t k) const;
};

/// Whitespace-separated non-negative integers.
std::vector<std::int64_t> read_labels(const std::string &path);

struct ErrorPoint
{
    std::int64_t timesteps = 0;
    double error = 0.0;
    EdpProxy edp;
    /// Samples with no output spike at all.
    std::int64_t silent = 0;
};

/// Classification error and mean per-sample EDP proxy of the mapped network
/// for each step budget.
std::vector<ErrorPoint> error_sweep(const DeploymentImage &image, const Dataset &data,
        std::span<const std::int64_t> timesteps, const EdpConstants &k = {});

/// Error of the float network evaluated with ReLU activations; classes are
/// argmax of the last layer's pre-activation (lowest index on ties).
double reference_error(const NetworkSpec &lowered, const Dataset &data);

/// Convolutional family member: Input (n, n, 3) followed by three "same"
/// 3x3 Conv2D layers of `width` filters with strides 1, 2, 1. Float weights
/// drawn uniformly from [-1, 1] with `seed`.
NetworkSpec make_conv_family(std::int64_t width, std::int64_t input_size, std::uint64_t seed);

/// Standard 3x3 conv versus depthwise-separable pair with equal feature maps.
NetworkSpec make_standard_block(std::int64_t width, std::int64_t input_size, std::uint64_t seed);
NetworkSpec make_separable_block(std::int64_t width, std::int64_t input_size, std::uint64_t seed);

struct ScalingRow
{
    std::int64_t model_scale = 0;
    std::int64_t cores_full_bound = 0;
    std::int64_t cores_sharing_on = 0;
    std::int64_t cores_sharing_off = 0;
    double mean_utilization = 0.0;
};

/// Partitions each family member under full, on and off sharing. Mean
/// utilization is that of the sharing-on chain.
std::vector<ScalingRow> scaling_sweep(std::span<const std::int64_t> widths, std::int64_t input_size,
        std::uint64_t seed, const OptimizeOptions &options = {});

std::string error_sweep_csv(std::span<const ErrorPoint> points);
std::string scaling_sweep_csv(std::span<const ScalingRow> rows);

} // namespace nf
