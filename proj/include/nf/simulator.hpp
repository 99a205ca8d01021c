#pragma once

// Discrete-time integer neuron dynamics, a dense reference executor over an
// integer network, an event-driven executor over a deployment image, and the
// counter-based energy/delay proxy.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <json.hpp>

#include "nf/mapper.hpp"
#include "nf/model_ir.hpp"

namespace nf {

struct NeuronState
{
    std::int64_t u = 0;
    std::int64_t i = 0;
    bool spiked = false;
    bool operator==(const NeuronState &) const = default;
};

/// One step: i' = i*(D - i_decay)/D + input, u' = u*(D - v_decay)/D + i' +
/// bias + extra_bias, spike when u' >= threshold, then hard or soft reset.
/// Divisions truncate toward zero.
NeuronState step_dynamics(NeuronState state, std::int64_t weighted_input, const NeuronConfig &cfg,
        std::int64_t extra_bias = 0);

/// Stimulus of the input layer: either a per-neuron bias added every step or
/// a raster of forced spikes (raster[t - 1] lists the input neurons spiking
/// at step t; missing steps are silent).
struct SimInput
{
    std::vector<std::int64_t> frame;
    std::optional<std::vector<std::vector<std::int64_t>>> raster;
};

/// Steps are numbered from 1.
struct SpikeTrace
{
    /// times[layer][neuron] is strictly increasing.
    std::vector<std::vector<std::vector<std::int32_t>>> times;
    /// step_counts[layer][t - 1] spikes in that layer at step t.
    std::vector<std::vector<std::int64_t>> step_counts;

    bool operator==(const SpikeTrace &) const = default;
};

struct Counters
{
    std::int64_t spikes_total = 0;
    /// Synapse entries traversed by delivered spikes; reset wiring excluded.
    std::int64_t synaptic_ops = 0;
    /// One per delivered spike per route axon.
    std::int64_t core_to_core_msgs = 0;
    std::int64_t chip_to_chip_msgs = 0;
    std::int64_t timesteps_run = 0;
    bool operator==(const Counters &) const = default;
};

struct SimResult
{
    SpikeTrace trace;
    std::vector<std::int64_t> output_counts;
    /// Argmax of output counts (lowest index on ties); empty when silent.
    std::optional<std::int64_t> prediction;
    Counters counters;
};

std::optional<std::int64_t> classify(const std::vector<std::int64_t> &counts);

/// Layer-synchronous dense execution; spikes reach the next layer one step
/// later. Only spikes_total and timesteps_run are counted.
SimResult run_reference(const SnnNetwork &net, const SimInput &input, std::int64_t timesteps);

/// Event-driven execution through the image's axon, group and list tables.
SimResult run_mapped(const DeploymentImage &image, const SimInput &input, std::int64_t timesteps);

struct EdpConstants
{
    double e_spike = 1.0;
    double e_syn = 0.1;
    double e_static = 10.0;
    double t_base = 1.0;
    double t_syn = 0.001;
    double t_offchip = 0.01;
};

struct EdpProxy
{
    double energy = 0.0;
    double delay = 0.0;
    double edp = 0.0;
};

EdpProxy edp_proxy(const Counters &counters, std::int64_t n_cores, std::int64_t timesteps,
        const EdpConstants &k = {});
EdpProxy edp_proxy(const Counters &counters, const DeploymentImage &image, std::int64_t timesteps,
        const EdpConstants &k = {});

/// Rows "layer,neuron,t" in layer, neuron, time order.
void write_trace_csv(const SpikeTrace &trace, std::ostream &out);
nlohmann::json counters_to_json(const Counters &c);

} // namespace nf
