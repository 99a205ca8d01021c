#include "nf/simulator.hpp"

#include <algorithm>
#include <ostream>

#include "nf/dense_math.hpp"
#include "nf/error.hpp"

namespace nf {

namespace {

/// Integration without reset.
NeuronState integrate(NeuronState s, std::int64_t weighted_input, const NeuronConfig &cfg, std::int64_t extra_bias)
{
    s.i = s.i * (kDecayMax - cfg.i_decay) / kDecayMax + weighted_input;
    s.u = s.u * (kDecayMax - cfg.v_decay) / kDecayMax + s.i + cfg.bias + extra_bias;
    s.spiked = s.u >= cfg.threshold;
    return s;
}

void check_input(const SimInput &input, std::int64_t n_in)
{
    if (input.raster)
    {
        for (const auto &step : *input.raster)
        {
            for (const std::int64_t n : step)
            {
                if (n < 0 || n >= n_in)
                {
                    throw Error(ErrorKind::shape, "raster spike for input neuron " + std::to_string(n) +
                                    " of " + std::to_string(n_in));
                }
            }
        }
        return;
    }
    if (static_cast<std::int64_t>(input.frame.size()) != n_in)
    {
        throw Error(ErrorKind::shape, "input frame has " + std::to_string(input.frame.size()) +
                        " values for " + std::to_string(n_in) + " input neurons");
    }
}

/// Forced input spikes of step t as a 0/1 mask.
std::vector<char> raster_mask(const SimInput &input, std::int64_t t, std::int64_t n_in)
{
    std::vector<char> mask(static_cast<std::size_t>(n_in), 0);
    if (input.raster && t - 1 < static_cast<std::int64_t>(input.raster->size()))
    {
        for (const std::int64_t n : (*input.raster)[static_cast<std::size_t>(t - 1)])
        {
            mask[static_cast<std::size_t>(n)] = 1;
        }
    }
    return mask;
}

SpikeTrace empty_trace(const std::vector<std::int64_t> &sizes, std::int64_t timesteps)
{
    SpikeTrace trace;
    for (const std::int64_t n : sizes)
    {
        trace.times.emplace_back(static_cast<std::size_t>(n));
        trace.step_counts.emplace_back(static_cast<std::size_t>(timesteps), 0);
    }
    return trace;
}

void check_timesteps(std::int64_t timesteps)
{
    if (timesteps < 0)
    {
        throw Error(ErrorKind::usage, "timesteps must be non-negative");
    }
}

} // namespace

NeuronState step_dynamics(NeuronState state, std::int64_t weighted_input, const NeuronConfig &cfg,
        std::int64_t extra_bias)
{
    NeuronState s = integrate(state, weighted_input, cfg, extra_bias);
    if (s.spiked)
    {
        s.u = cfg.reset == ResetMode::hard ? 0 : s.u - cfg.threshold;
    }
    return s;
}

std::optional<std::int64_t> classify(const std::vector<std::int64_t> &counts)
{
    const auto best = std::max_element(counts.begin(), counts.end());
    if (best == counts.end() || *best <= 0)
    {
        return std::nullopt;
    }
    return static_cast<std::int64_t>(best - counts.begin());
}

SimResult run_reference(const SnnNetwork &net, const SimInput &input, std::int64_t timesteps)
{
    validate(net);
    check_timesteps(timesteps);
    const std::size_t n_layers = net.layers.size();
    const std::int64_t n_in = net.layers.front().spec.output_shape.size();
    check_input(input, n_in);

    std::vector<std::int64_t> sizes;
    std::vector<std::vector<NeuronState>> state;
    std::vector<std::vector<std::int64_t>> prev;
    for (const SnnLayer &l : net.layers)
    {
        sizes.push_back(l.spec.output_shape.size());
        state.emplace_back(static_cast<std::size_t>(sizes.back()));
        prev.emplace_back(static_cast<std::size_t>(sizes.back()), 0);
    }
    SimResult result;
    result.trace = empty_trace(sizes, timesteps);
    std::vector<std::vector<std::int64_t>> cur = prev;

    for (std::int64_t t = 1; t <= timesteps; ++t)
    {
        for (std::size_t l = 0; l < n_layers; ++l)
        {
            const LayerSpec &spec = net.layers[l].spec;
            auto &spikes = cur[l];
            std::fill(spikes.begin(), spikes.end(), 0);
            if (l == 0 && input.raster)
            {
                const std::vector<char> mask = raster_mask(input, t, n_in);
                for (std::size_t n = 0; n < spikes.size(); ++n)
                {
                    spikes[n] = mask[n];
                }
            }
            else
            {
                std::vector<std::int64_t> drive(spikes.size(), 0);
                if (l > 0)
                {
                    accumulate_layer<std::int64_t, std::int64_t>(
                            spec, net.layers[l - 1].spec.output_shape, net.layers[l].weights, prev[l - 1], drive);
                }
                for (std::size_t n = 0; n < spikes.size(); ++n)
                {
                    const std::int64_t extra = l == 0 ? input.frame[n] : 0;
                    state[l][n] = step_dynamics(state[l][n], drive[n], spec.neuron, extra);
                    spikes[n] = state[l][n].spiked ? 1 : 0;
                }
            }
            for (std::size_t n = 0; n < spikes.size(); ++n)
            {
                if (spikes[n] != 0)
                {
                    result.trace.times[l][n].push_back(static_cast<std::int32_t>(t));
                    ++result.trace.step_counts[l][static_cast<std::size_t>(t - 1)];
                    ++result.counters.spikes_total;
                }
            }
        }
        std::swap(prev, cur);
    }
    result.counters.timesteps_run = timesteps;
    for (const auto &times : result.trace.times.back())
    {
        result.output_counts.push_back(static_cast<std::int64_t>(times.size()));
    }
    result.prediction = classify(result.output_counts);
    return result;
}

namespace {

struct ResolvedSynapse
{
    std::int32_t dst;
    std::int64_t weight;
};

struct CoreRun
{
    std::size_t layer = 0;
    CoreRef ref;
    const CoreImage *image = nullptr;
    std::vector<std::int64_t> neuron;
    std::vector<std::int64_t> recurrent;
    std::vector<char> injected;
    std::vector<NeuronState> state;
    std::vector<std::int64_t> acc;
    std::vector<std::vector<ResolvedSynapse>> lists;
    /// Route output axons carrying each local neuron.
    std::vector<std::vector<std::int32_t>> axons_of;
    std::vector<std::int32_t> spiked;
};

} // namespace

SimResult run_mapped(const DeploymentImage &image, const SimInput &input, std::int64_t timesteps)
{
    verify_image(image);
    check_timesteps(timesteps);
    if (image.layers.empty())
    {
        throw Error(ErrorKind::integrity, "image has no layers");
    }
    const std::size_t n_layers = image.layers.size();
    const std::int64_t n_in = image.layers.front().spec.output_shape.size();
    check_input(input, n_in);

    std::vector<CoreRun> cores;
    std::vector<std::vector<std::int32_t>> run_index(image.chips.size());
    for (std::size_t c = 0; c < image.chips.size(); ++c)
    {
        run_index[c].assign(image.chips[c].cores.size(), -1);
    }
    for (std::size_t l = 0; l < n_layers; ++l)
    {
        const LayerImage &layer = image.layers[l];
        for (const CoreRef &ref : layer.cores)
        {
            CoreRun run;
            run.layer = l;
            run.ref = ref;
            run.image = &image.core(ref);
            for (const Compartment &c : run.image->compartments)
            {
                if (c.role == CompartmentRole::soma)
                {
                    run.neuron.push_back(c.neuron);
                    run.recurrent.push_back(0);
                }
                else if (!run.recurrent.empty())
                {
                    run.recurrent.back() = c.recurrent_weight;
                }
            }
            const std::size_t n = run.neuron.size();
            std::vector<char> wired(n, 0);
            run.injected.assign(n, 0);
            for (const InputAxon &a : run.image->input_axons)
            {
                if (a.kind == InputAxonKind::recurrent)
                {
                    wired[static_cast<std::size_t>(a.a)] = 1;
                }
                else if (a.kind == InputAxonKind::injection)
                {
                    run.injected[static_cast<std::size_t>(a.a)] = 1;
                }
            }
            for (std::size_t i = 0; i < n; ++i)
            {
                run.recurrent[i] = wired[i] != 0 ? run.recurrent[i] : 0;
            }
            run.state.assign(n, {});
            run.acc.assign(n, 0);
            for (const EncodedGroup &g : run.image->lists)
            {
                std::vector<ResolvedSynapse> resolved;
                for (const Synapse &s : decode_group(g))
                {
                    resolved.push_back({s.dst_local, layer.weights[static_cast<std::size_t>(s.weight_id)]});
                }
                run.lists.push_back(std::move(resolved));
            }
            run.axons_of.assign(n, {});
            for (std::size_t a = 0; a < run.image->output_axons.size(); ++a)
            {
                const OutputAxon &o = run.image->output_axons[a];
                if (o.kind != OutputAxonKind::route)
                {
                    continue;
                }
                for (std::int32_t m = 0; m < o.count; ++m)
                {
                    run.axons_of[static_cast<std::size_t>(o.first + m)].push_back(static_cast<std::int32_t>(a));
                }
            }
            run_index[static_cast<std::size_t>(ref.chip)][static_cast<std::size_t>(ref.index)] =
                    static_cast<std::int32_t>(cores.size());
            cores.push_back(std::move(run));
        }
    }

    std::vector<std::int64_t> sizes;
    for (const LayerImage &l : image.layers)
    {
        sizes.push_back(l.spec.output_shape.size());
    }
    SimResult result;
    result.trace = empty_trace(sizes, timesteps);
    Counters &k = result.counters;

    for (std::int64_t t = 1; t <= timesteps; ++t)
    {
        // Delivery of the previous step's spikes.
        for (CoreRun &src : cores)
        {
            for (const std::int32_t local : src.spiked)
            {
                for (const std::int32_t a : src.axons_of[static_cast<std::size_t>(local)])
                {
                    const OutputAxon &o = src.image->output_axons[static_cast<std::size_t>(a)];
                    ++k.core_to_core_msgs;
                    k.chip_to_chip_msgs += o.dst_chip != src.ref.chip ? 1 : 0;
                    CoreRun &dst = cores[static_cast<std::size_t>(
                            run_index[static_cast<std::size_t>(o.dst_chip)][static_cast<std::size_t>(o.dst_core)])];
                    const InputAxon &in = dst.image->input_axons[static_cast<std::size_t>(o.dst_axon)];
                    const GroupSlot &slot =
                            dst.image->groups[static_cast<std::size_t>(in.a)][static_cast<std::size_t>(local - o.first)];
                    const auto &list = dst.lists[static_cast<std::size_t>(slot.list)];
                    const std::int32_t base = in.b + slot.offset;
                    for (const ResolvedSynapse &s : list)
                    {
                        dst.acc[static_cast<std::size_t>(base + s.dst)] += s.weight;
                    }
                    k.synaptic_ops += static_cast<std::int64_t>(list.size());
                }
            }
        }
        // Compartment update.
        const std::vector<char> mask =
                input.raster ? raster_mask(input, t, n_in) : std::vector<char>{};
        for (CoreRun &run : cores)
        {
            const NeuronConfig &cfg = image.layers[run.layer].spec.neuron;
            run.spiked.clear();
            for (std::size_t i = 0; i < run.neuron.size(); ++i)
            {
                const auto neuron = static_cast<std::size_t>(run.neuron[i]);
                bool spike = false;
                if (run.layer == 0 && input.raster)
                {
                    spike = run.injected[i] != 0 && mask[neuron] != 0;
                }
                else
                {
                    const std::int64_t extra = run.injected[i] != 0 && !input.raster ? input.frame[neuron] : 0;
                    NeuronState s = integrate(run.state[i], run.acc[i], cfg, extra);
                    if (s.spiked)
                    {
                        s.u = cfg.reset == ResetMode::soft ? s.u + run.recurrent[i] : 0;
                    }
                    run.state[i] = s;
                    spike = s.spiked;
                }
                run.acc[i] = 0;
                if (spike)
                {
                    run.spiked.push_back(static_cast<std::int32_t>(i));
                    result.trace.times[run.layer][neuron].push_back(static_cast<std::int32_t>(t));
                    ++result.trace.step_counts[run.layer][static_cast<std::size_t>(t - 1)];
                    ++k.spikes_total;
                }
            }
        }
    }
    k.timesteps_run = timesteps;
    for (const auto &times : result.trace.times.back())
    {
        result.output_counts.push_back(static_cast<std::int64_t>(times.size()));
    }
    result.prediction = classify(result.output_counts);
    return result;
}

EdpProxy edp_proxy(const Counters &c, std::int64_t n_cores, std::int64_t timesteps, const EdpConstants &k)
{
    EdpProxy p;
    const auto T = static_cast<double>(timesteps);
    p.energy = k.e_spike * static_cast<double>(c.spikes_total) + k.e_syn * static_cast<double>(c.synaptic_ops) +
            k.e_static * static_cast<double>(n_cores) * T;
    if (timesteps > 0)
    {
        p.delay = T * (k.t_base + k.t_syn * static_cast<double>(c.synaptic_ops) / T +
                              k.t_offchip * static_cast<double>(c.chip_to_chip_msgs) / T);
    }
    p.edp = p.energy * p.delay;
    return p;
}

EdpProxy edp_proxy(const Counters &counters, const DeploymentImage &image, std::int64_t timesteps,
        const EdpConstants &k)
{
    return edp_proxy(counters, image.core_count(), timesteps, k);
}

void write_trace_csv(const SpikeTrace &trace, std::ostream &out)
{
    out << "layer,neuron,t\n";
    for (std::size_t l = 0; l < trace.times.size(); ++l)
    {
        for (std::size_t n = 0; n < trace.times[l].size(); ++n)
        {
            for (const std::int32_t t : trace.times[l][n])
            {
                out << l << ',' << n << ',' << t << '\n';
            }
        }
    }
}

nlohmann::json counters_to_json(const Counters &c)
{
    return {{"spikes_total", c.spikes_total}, {"synaptic_ops", c.synaptic_ops},
            {"core_to_core_msgs", c.core_to_core_msgs}, {"chip_to_chip_msgs", c.chip_to_chip_msgs},
            {"timesteps_run", c.timesteps_run}};
}

} // namespace nf
