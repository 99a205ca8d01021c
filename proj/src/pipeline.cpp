#include "nf/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "nf/dense_math.hpp"
#include "nf/error.hpp"

namespace nf {

Calibration prepare_network(const NetworkSpec &spec, std::span<const float> calibration_batch,
        const QuantizationConfig &cfg)
{
    const NetworkSpec lowered = lower_for_snn(spec);
    if (calibration_batch.empty())
    {
        return {quantize_network(lowered, cfg), {}};
    }
    return calibrate_dynamic_range(lowered, calibration_batch, cfg);
}

namespace {

std::vector<LayerSpec> layer_specs(const SnnNetwork &net)
{
    std::vector<LayerSpec> specs;
    for (const SnnLayer &l : net.layers)
    {
        specs.push_back(l.spec);
    }
    return specs;
}

double fraction(std::int64_t value, std::int64_t limit)
{
    return static_cast<double>(value) / static_cast<double>(limit);
}

} // namespace

Compiled compile_network(const SnnNetwork &net, const CompileOptions &options)
{
    const std::vector<LayerSpec> specs = layer_specs(net);
    Compiled out;
    out.plan = optimize(specs, options.optimize);
    MapOptions map;
    map.sharing = options.optimize.sharing;
    map.cost_model = options.optimize.cost_model;
    map.constraints = options.optimize.constraints;
    map.chips = options.chips;
    out.image = build_image(net, out.plan.partitions, map);
    out.tallies = tally_image(out.image);
    return out;
}

double mean_neuron_utilization(std::span<const ResourceTally> tallies, const CoreConstraints &constraints)
{
    double sum = 0.0;
    std::int64_t cores = 0;
    for (const ResourceTally &t : tallies)
    {
        for (const CoreUsage &u : t.cores)
        {
            sum += fraction(u.neurons, constraints.max_neurons_per_core);
            ++cores;
        }
    }
    return cores == 0 ? 0.0 : sum / static_cast<double>(cores);
}

std::int64_t total_cores(std::span<const ResourceTally> tallies)
{
    std::int64_t n = 0;
    for (const ResourceTally &t : tallies)
    {
        n += t.n_cores();
    }
    return n;
}

nlohmann::json utilization_report(const Compiled &compiled, const OptimizeOptions &options)
{
    const CoreConstraints &k = options.constraints;
    const CostWeights &w = options.weights;
    nlohmann::json layers = nlohmann::json::array();
    double total = 0.0;
    for (std::size_t l = 0; l < compiled.tallies.size(); ++l)
    {
        const ResourceTally &t = compiled.tallies[l];
        const LayerImage &li = compiled.image.layers[l];
        const double syn_term = static_cast<double>(t.n_syn()) / static_cast<double>(k.synapse_budget_units);
        const double axon_term =
                static_cast<double>(t.n_axons()) / static_cast<double>(k.max_input_axons + k.max_output_axons);
        const double cost = evaluate_cost(t, w, k);
        total += cost;
        nlohmann::json per_core = nlohmann::json::array();
        for (const CoreUsage &u : t.cores)
        {
            per_core.push_back({{"neurons", fraction(u.neurons, k.max_neurons_per_core)},
                    {"input_axons", fraction(u.input_axons, k.max_input_axons)},
                    {"output_axons", fraction(u.output_axons, k.max_output_axons)},
                    {"synapses", fraction(u.synapse_units, k.synapse_budget_units)}});
        }
        const ResourceTally single[] = {t};
        layers.push_back({{"id", li.spec.id}, {"kind", to_string(li.spec.kind)},
                {"grid", {li.grid.ny, li.grid.nx, li.grid.nz}}, {"cores", t.n_cores()},
                {"neurons", t.n_neurons()}, {"synapse_units", t.n_syn()}, {"axons", t.n_axons()},
                {"offchip_axons", t.n_offchip()}, {"cost", cost},
                {"terms", {{"cores", static_cast<double>(t.n_cores())}, {"synapses", syn_term},
                                  {"axons", axon_term}, {"offchip", static_cast<double>(t.n_offchip())}}},
                {"mean_neuron_utilization", mean_neuron_utilization(single, k)}, {"per_core", std::move(per_core)}});
    }
    return {{"network", compiled.image.name}, {"chips", compiled.image.chips.size()},
            {"sharing", to_string(compiled.image.sharing)}, {"compression", to_string(compiled.image.compression)},
            {"alpha", {w.cores, w.synapses, w.axons, w.offchip}}, {"beam", options.beam},
            {"total_cores", total_cores(compiled.tallies)}, {"total_cost", total},
            {"mean_neuron_utilization", mean_neuron_utilization(compiled.tallies, k)}, {"layers", std::move(layers)}};
}

std::string utilization_csv(const Compiled &compiled, const CoreConstraints &k)
{
    std::ostringstream out;
    out << "layer,core,chip,neurons,input_axons,output_axons,synapse_units,"
           "neuron_util,input_axon_util,output_axon_util,synapse_util\n";
    for (std::size_t l = 0; l < compiled.tallies.size(); ++l)
    {
        const LayerImage &li = compiled.image.layers[l];
        for (std::size_t c = 0; c < compiled.tallies[l].cores.size(); ++c)
        {
            const CoreUsage &u = compiled.tallies[l].cores[c];
            out << li.spec.id << ',' << c << ',' << li.cores[c].chip << ',' << u.neurons << ',' << u.input_axons
                << ',' << u.output_axons << ',' << u.synapse_units << ','
                << fraction(u.neurons, k.max_neurons_per_core) << ',' << fraction(u.input_axons, k.max_input_axons)
                << ',' << fraction(u.output_axons, k.max_output_axons) << ','
                << fraction(u.synapse_units, k.synapse_budget_units) << '\n';
        }
    }
    return out.str();
}

std::int64_t Dataset::size() const
{
    return input_size == 0 ? 0 : static_cast<std::int64_t>(frames.size()) / input_size;
}

std::span<const float> Dataset::sample(std::int64_t k) const
{
    return std::span<const float>(frames).subspan(
            static_cast<std::size_t>(k * input_size), static_cast<std::size_t>(input_size));
}

std::vector<std::int64_t> read_labels(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw Error(ErrorKind::io, "cannot read labels " + path);
    }
    std::vector<std::int64_t> labels;
    std::string token;
    while (in >> token)
    {
        try
        {
            std::size_t used = 0;
            const long long v = std::stoll(token, &used);
            if (used != token.size() || v < 0)
            {
                throw std::invalid_argument(token);
            }
            labels.push_back(v);
        }
        catch (const std::exception &)
        {
            throw Error(ErrorKind::parse, "bad label '" + token + "' in " + path);
        }
    }
    return labels;
}

std::vector<ErrorPoint> error_sweep(const DeploymentImage &image, const Dataset &data,
        std::span<const std::int64_t> timesteps, const EdpConstants &k)
{
    if (data.labels.empty() || static_cast<std::int64_t>(data.labels.size()) != data.size())
    {
        throw Error(ErrorKind::usage, "error sweep needs one label per input sample");
    }
    const std::int64_t tau_in = image.layers.front().spec.neuron.threshold;
    std::vector<ErrorPoint> points;
    for (const std::int64_t T : timesteps)
    {
        ErrorPoint p;
        p.timesteps = T;
        std::int64_t wrong = 0;
        for (std::int64_t s = 0; s < data.size(); ++s)
        {
            SimInput input;
            input.frame = encode_frame(data.sample(s), tau_in);
            const SimResult r = run_mapped(image, input, T);
            wrong += (!r.prediction || *r.prediction != data.labels[static_cast<std::size_t>(s)]) ? 1 : 0;
            p.silent += r.prediction ? 0 : 1;
            const EdpProxy e = edp_proxy(r.counters, image, T, k);
            p.edp.energy += e.energy;
            p.edp.delay += e.delay;
            p.edp.edp += e.edp;
        }
        const auto n = static_cast<double>(data.size());
        p.error = static_cast<double>(wrong) / n;
        p.edp.energy /= n;
        p.edp.delay /= n;
        p.edp.edp /= n;
        points.push_back(p);
    }
    return points;
}

double reference_error(const NetworkSpec &lowered, const Dataset &data)
{
    validate(lowered);
    if (static_cast<std::int64_t>(data.labels.size()) != data.size())
    {
        throw Error(ErrorKind::usage, "reference error needs one label per input sample");
    }
    std::int64_t wrong = 0;
    for (std::int64_t s = 0; s < data.size(); ++s)
    {
        const auto x = data.sample(s);
        std::vector<double> act(x.begin(), x.end());
        for (std::size_t l = 1; l < lowered.layers.size(); ++l)
        {
            const LayerSpec &spec = lowered.layers[l];
            std::vector<double> z(static_cast<std::size_t>(spec.output_shape.size()),
                    static_cast<double>(spec.neuron.bias) / static_cast<double>(spec.neuron.threshold));
            accumulate_layer<double, float>(spec, lowered.layers[l - 1].output_shape, spec.weights, act, z);
            if (l + 1 < lowered.layers.size())
            {
                for (double &v : z)
                {
                    v = std::max(v, 0.0);
                }
            }
            act = std::move(z);
        }
        const auto best = std::max_element(act.begin(), act.end()) - act.begin();
        wrong += best != data.labels[static_cast<std::size_t>(s)] ? 1 : 0;
    }
    return data.size() == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(data.size());
}

namespace {

LayerSpec conv_layer(std::string id, LayerKind kind, std::int64_t kernel, std::int64_t stride,
        std::int64_t filters, Padding padding)
{
    LayerSpec l;
    l.id = std::move(id);
    l.kind = kind;
    l.kernel = Extent2{kernel, kernel};
    l.strides = Extent2{stride, stride};
    l.padding = padding;
    l.out_channels = kind == LayerKind::conv2d ? filters : 0;
    l.neuron.threshold = 256;
    return l;
}

NetworkSpec finish_family(NetworkSpec spec, std::uint64_t seed)
{
    spec = infer_shapes(std::move(spec));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0F, 1.0F);
    std::int64_t offset = 0;
    for (std::size_t l = 1; l < spec.layers.size(); ++l)
    {
        LayerSpec &layer = spec.layers[l];
        const std::int64_t count = expected_weight_count(spec.layers[l - 1].output_shape, layer);
        layer.weights.resize(static_cast<std::size_t>(count));
        for (float &w : layer.weights)
        {
            w = dist(rng);
        }
        layer.weight_ref = WeightRef{offset, count};
        offset += count;
    }
    validate(spec);
    return spec;
}

NetworkSpec input_only(const std::string &name, std::int64_t input_size)
{
    NetworkSpec spec;
    spec.name = name;
    spec.timesteps = 100;
    LayerSpec in;
    in.id = "input";
    in.kind = LayerKind::input;
    in.output_shape = {input_size, input_size, 3};
    in.neuron.threshold = 256;
    spec.layers.push_back(in);
    return spec;
}

} // namespace

NetworkSpec make_conv_family(std::int64_t width, std::int64_t input_size, std::uint64_t seed)
{
    NetworkSpec spec = input_only("convnet_w" + std::to_string(width) + "_n" + std::to_string(input_size), input_size);
    spec.layers.push_back(conv_layer("conv1", LayerKind::conv2d, 3, 1, width, Padding::same));
    spec.layers.push_back(conv_layer("conv2", LayerKind::conv2d, 3, 2, width, Padding::same));
    spec.layers.push_back(conv_layer("conv3", LayerKind::conv2d, 3, 1, width, Padding::same));
    return finish_family(std::move(spec), seed);
}

NetworkSpec make_standard_block(std::int64_t width, std::int64_t input_size, std::uint64_t seed)
{
    NetworkSpec spec = input_only("standard_w" + std::to_string(width), input_size);
    spec.layers.push_back(conv_layer("conv1", LayerKind::conv2d, 3, 1, width, Padding::same));
    spec.layers.push_back(conv_layer("conv2", LayerKind::conv2d, 3, 1, width, Padding::same));
    return finish_family(std::move(spec), seed);
}

NetworkSpec make_separable_block(std::int64_t width, std::int64_t input_size, std::uint64_t seed)
{
    NetworkSpec spec = input_only("separable_w" + std::to_string(width), input_size);
    spec.layers.push_back(conv_layer("conv1", LayerKind::conv2d, 3, 1, width, Padding::same));
    spec.layers.push_back(conv_layer("dw2", LayerKind::depthwise_conv2d, 3, 1, 0, Padding::same));
    spec.layers.push_back(conv_layer("pw2", LayerKind::conv2d, 1, 1, width, Padding::valid));
    return finish_family(std::move(spec), seed);
}

std::vector<ScalingRow> scaling_sweep(std::span<const std::int64_t> widths, std::int64_t input_size,
        std::uint64_t seed, const OptimizeOptions &options)
{
    std::vector<ScalingRow> rows;
    for (const std::int64_t width : widths)
    {
        const NetworkSpec spec = lower_for_snn(make_conv_family(width, input_size, seed));
        ScalingRow row;
        row.model_scale = width;
        auto cores_with = [&](SharingMode mode, OptimizeResult *keep) {
            OptimizeOptions o = options;
            o.sharing = mode;
            OptimizeResult r = optimize(spec.layers, o);
            const std::int64_t n = total_cores(r.tallies);
            if (keep != nullptr)
            {
                *keep = std::move(r);
            }
            return n;
        };
        OptimizeResult on;
        row.cores_full_bound = cores_with(SharingMode::full, nullptr);
        row.cores_sharing_on = cores_with(SharingMode::on, &on);
        row.cores_sharing_off = cores_with(SharingMode::off, nullptr);
        row.mean_utilization = mean_neuron_utilization(on.tallies, options.constraints);
        rows.push_back(row);
    }
    return rows;
}

std::string error_sweep_csv(std::span<const ErrorPoint> points)
{
    std::ostringstream out;
    out << "T,error,energy_proxy,delay_proxy,edp\n";
    for (const ErrorPoint &p : points)
    {
        out << p.timesteps << ',' << p.error << ',' << p.edp.energy << ',' << p.edp.delay << ',' << p.edp.edp << '\n';
    }
    return out.str();
}

std::string scaling_sweep_csv(std::span<const ScalingRow> rows)
{
    std::ostringstream out;
    out << "model_scale,cores_full_sharing_bound,cores_sharing_on,cores_sharing_off,mean_utilization\n";
    for (const ScalingRow &r : rows)
    {
        out << r.model_scale << ',' << r.cores_full_bound << ',' << r.cores_sharing_on << ','
            << r.cores_sharing_off << ',' << r.mean_utilization << '\n';
    }
    return out.str();
}

} // namespace nf
