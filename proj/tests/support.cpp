#include "support.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>

namespace oracle {

namespace {

std::int64_t index_of(const nf::Shape &s, std::int64_t y, std::int64_t x, std::int64_t c)
{
    return (y * s.width + x) * s.channels + c;
}

/// Leading pad of one axis; "same" keeps ceil(in / stride) outputs and puts
/// the odd padding element after the data.
std::int64_t leading_pad(std::int64_t in, std::int64_t k, std::int64_t s, nf::Padding padding)
{
    if (padding == nf::Padding::valid)
    {
        return 0;
    }
    const std::int64_t out = (in + s - 1) / s;
    return std::max<std::int64_t>((out - 1) * s + k - in, 0) / 2;
}

std::vector<std::int64_t> cuts(std::int64_t n, std::int64_t k)
{
    std::vector<std::int64_t> c{0};
    for (std::int64_t i = 0; i < k; ++i)
    {
        c.push_back(c.back() + n / k + (i < n % k ? 1 : 0));
    }
    return c;
}

std::int64_t part_of(const std::vector<std::int64_t> &c, std::int64_t v)
{
    return static_cast<std::int64_t>(std::upper_bound(c.begin(), c.end(), v) - c.begin()) - 1;
}

} // namespace

std::vector<Triple> brute_force_unroll(const nf::Shape &in, const nf::LayerSpec &post)
{
    std::vector<Triple> out;
    const nf::Shape &o = post.output_shape;
    if (post.kind == nf::LayerKind::dense)
    {
        const std::int64_t n_in = in.height * in.width * in.channels;
        const std::int64_t n_out = o.height * o.width * o.channels;
        for (std::int64_t p = 0; p < n_in; ++p)
        {
            for (std::int64_t q = 0; q < n_out; ++q)
            {
                out.push_back({p, q, p * n_out + q});
            }
        }
        return out;
    }
    const std::int64_t kh = post.kernel->y;
    const std::int64_t kw = post.kernel->x;
    const std::int64_t sy = post.strides->y;
    const std::int64_t sx = post.strides->x;
    const std::int64_t py = leading_pad(in.height, kh, sy, post.padding);
    const std::int64_t px = leading_pad(in.width, kw, sx, post.padding);
    const bool depthwise = post.kind != nf::LayerKind::conv2d;
    for (std::int64_t oy = 0; oy < o.height; ++oy)
    {
        for (std::int64_t ox = 0; ox < o.width; ++ox)
        {
            for (std::int64_t co = 0; co < o.channels; ++co)
            {
                for (std::int64_t ky = 0; ky < kh; ++ky)
                {
                    for (std::int64_t kx = 0; kx < kw; ++kx)
                    {
                        const std::int64_t iy = oy * sy + ky - py;
                        const std::int64_t ix = ox * sx + kx - px;
                        if (iy < 0 || ix < 0 || iy >= in.height || ix >= in.width)
                        {
                            continue;
                        }
                        const std::int64_t q = index_of(o, oy, ox, co);
                        if (depthwise)
                        {
                            out.push_back({index_of(in, iy, ix, co), q, (ky * kw + kx) * in.channels + co});
                            continue;
                        }
                        for (std::int64_t ci = 0; ci < in.channels; ++ci)
                        {
                            out.push_back({index_of(in, iy, ix, ci), q,
                                    ((ky * kw + kx) * in.channels + ci) * o.channels + co});
                        }
                    }
                }
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::int64_t> owner_core(const nf::Shape &s, const nf::Grid &g)
{
    const auto ys = cuts(s.height, g.ny);
    const auto xs = cuts(s.width, g.nx);
    const auto zs = cuts(s.channels, g.nz);
    std::vector<std::int64_t> owner;
    for (std::int64_t y = 0; y < s.height; ++y)
    {
        for (std::int64_t x = 0; x < s.width; ++x)
        {
            for (std::int64_t c = 0; c < s.channels; ++c)
            {
                owner.push_back((part_of(ys, y) * g.nx + part_of(xs, x)) * g.nz + part_of(zs, c));
            }
        }
    }
    return owner;
}

std::vector<std::int64_t> local_index(const nf::Shape &s, const nf::Grid &g)
{
    const auto ys = cuts(s.height, g.ny);
    const auto xs = cuts(s.width, g.nx);
    const auto zs = cuts(s.channels, g.nz);
    std::vector<std::int64_t> local;
    for (std::int64_t y = 0; y < s.height; ++y)
    {
        for (std::int64_t x = 0; x < s.width; ++x)
        {
            for (std::int64_t c = 0; c < s.channels; ++c)
            {
                const std::int64_t by = part_of(ys, y);
                const std::int64_t bx = part_of(xs, x);
                const std::int64_t bz = part_of(zs, c);
                const std::int64_t w = xs[bx + 1] - xs[bx];
                const std::int64_t d = zs[bz + 1] - zs[bz];
                local.push_back(((y - ys[by]) * w + (x - xs[bx])) * d + (c - zs[bz]));
            }
        }
    }
    return local;
}

std::vector<TemplateCount> canonical_templates(const std::vector<Triple> &triples, const nf::Shape &post_shape,
        const nf::Grid &post_grid)
{
    const auto owner = owner_core(post_shape, post_grid);
    const auto local = local_index(post_shape, post_grid);
    // (pre, dst core) -> its entries as (local destination, weight id).
    std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::pair<std::int64_t, std::int64_t>>> columns;
    for (const Triple &t : triples)
    {
        const auto q = static_cast<std::size_t>(t.post);
        columns[{t.pre, owner[q]}].emplace_back(local[q], t.weight_id);
    }
    std::vector<std::set<std::vector<std::pair<std::int64_t, std::int64_t>>>> distinct(
            static_cast<std::size_t>(post_grid.ny * post_grid.nx * post_grid.nz));
    for (auto &[key, entries] : columns)
    {
        std::sort(entries.begin(), entries.end());
        const std::int64_t base = entries.front().first;
        for (auto &e : entries)
        {
            e.first -= base;
        }
        distinct[static_cast<std::size_t>(key.second)].insert(entries);
    }
    std::vector<TemplateCount> out;
    for (const auto &set : distinct)
    {
        TemplateCount c;
        c.templates = static_cast<std::int64_t>(set.size());
        for (const auto &t : set)
        {
            c.entries += static_cast<std::int64_t>(t.size());
        }
        out.push_back(c);
    }
    return out;
}

std::vector<std::int64_t> distinct_weights(const std::vector<Triple> &triples, const nf::Shape &post_shape,
        const nf::Grid &post_grid)
{
    const auto owner = owner_core(post_shape, post_grid);
    std::vector<std::set<std::int64_t>> ids(static_cast<std::size_t>(post_grid.ny * post_grid.nx * post_grid.nz));
    for (const Triple &t : triples)
    {
        ids[static_cast<std::size_t>(owner[static_cast<std::size_t>(t.post)])].insert(t.weight_id);
    }
    std::vector<std::int64_t> out;
    for (const auto &s : ids)
    {
        out.push_back(static_cast<std::int64_t>(s.size()));
    }
    return out;
}

nf::SpikeTrace simulate(const nf::SnnNetwork &net, const nf::SimInput &input, std::int64_t timesteps)
{
    const std::size_t n = net.layers.size();
    std::vector<std::vector<Triple>> pairs;
    for (std::size_t l = 1; l < n; ++l)
    {
        pairs.push_back(brute_force_unroll(net.layers[l - 1].spec.output_shape, net.layers[l].spec));
    }
    nf::SpikeTrace trace;
    std::vector<std::vector<std::int64_t>> u(n), i(n);
    std::vector<std::vector<char>> prev(n), cur(n);
    for (std::size_t l = 0; l < n; ++l)
    {
        const auto size = static_cast<std::size_t>(net.layers[l].spec.output_shape.size());
        trace.times.emplace_back(size);
        trace.step_counts.emplace_back(static_cast<std::size_t>(timesteps), 0);
        u[l].assign(size, 0);
        i[l].assign(size, 0);
        prev[l].assign(size, 0);
    }
    const std::int64_t D = nf::kDecayMax;
    for (std::int64_t t = 1; t <= timesteps; ++t)
    {
        cur = prev;
        for (std::size_t l = 0; l < n; ++l)
        {
            const nf::NeuronConfig &cfg = net.layers[l].spec.neuron;
            std::vector<std::int64_t> in(u[l].size(), 0);
            if (l > 0)
            {
                for (const Triple &tr : pairs[l - 1])
                {
                    if (prev[l - 1][static_cast<std::size_t>(tr.pre)] != 0)
                    {
                        in[static_cast<std::size_t>(tr.post)] += net.layers[l].weights[static_cast<std::size_t>(tr.weight_id)];
                    }
                }
            }
            for (std::size_t k = 0; k < u[l].size(); ++k)
            {
                bool spike = false;
                if (l == 0 && input.raster)
                {
                    const auto &r = *input.raster;
                    if (t - 1 < static_cast<std::int64_t>(r.size()))
                    {
                        const auto &step = r[static_cast<std::size_t>(t - 1)];
                        spike = std::find(step.begin(), step.end(), static_cast<std::int64_t>(k)) != step.end();
                    }
                }
                else
                {
                    const std::int64_t extra = l == 0 ? input.frame[k] : 0;
                    i[l][k] = i[l][k] * (D - cfg.i_decay) / D + in[k];
                    u[l][k] = u[l][k] * (D - cfg.v_decay) / D + i[l][k] + cfg.bias + extra;
                    spike = u[l][k] >= cfg.threshold;
                    if (spike)
                    {
                        u[l][k] = cfg.reset == nf::ResetMode::hard ? 0 : u[l][k] - cfg.threshold;
                    }
                }
                cur[l][k] = spike ? 1 : 0;
                if (spike)
                {
                    trace.times[l][k].push_back(static_cast<std::int32_t>(t));
                    ++trace.step_counts[l][static_cast<std::size_t>(t - 1)];
                }
            }
        }
        prev = cur;
    }
    return trace;
}

std::int64_t fan_out_ops(const nf::SnnNetwork &net, const nf::SpikeTrace &trace, std::int64_t timesteps)
{
    std::int64_t ops = 0;
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l)
    {
        std::map<std::int64_t, std::int64_t> fan_out;
        for (const Triple &t : brute_force_unroll(net.layers[l].spec.output_shape, net.layers[l + 1].spec))
        {
            ++fan_out[t.pre];
        }
        for (std::size_t p = 0; p < trace.times[l].size(); ++p)
        {
            for (const std::int32_t t : trace.times[l][p])
            {
                ops += t < timesteps ? fan_out[static_cast<std::int64_t>(p)] : 0;
            }
        }
    }
    return ops;
}

namespace {

std::int64_t uniform(std::mt19937_64 &rng, std::int64_t lo, std::int64_t hi)
{
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

nf::NeuronConfig random_neuron(std::mt19937_64 &rng)
{
    nf::NeuronConfig cfg;
    cfg.threshold = uniform(rng, 1, 200);
    cfg.v_decay = uniform(rng, 0, 1) == 0 ? 0 : uniform(rng, 0, nf::kDecayMax);
    cfg.i_decay = uniform(rng, 0, 1) == 0 ? nf::kDecayMax : uniform(rng, 0, nf::kDecayMax);
    cfg.reset = uniform(rng, 0, 1) == 0 ? nf::ResetMode::hard : nf::ResetMode::soft;
    cfg.bias = uniform(rng, -5, 20);
    return cfg;
}

std::int64_t extent(std::int64_t in, std::int64_t k, std::int64_t s, nf::Padding p)
{
    return p == nf::Padding::valid ? (in - k) / s + 1 : (in + s - 1) / s;
}

} // namespace

nf::SnnNetwork random_network(std::mt19937_64 &rng, std::int64_t max_layers, std::int64_t max_neurons)
{
    nf::SnnNetwork net;
    net.name = "random";
    net.timesteps = 100;
    nf::SnnLayer input;
    input.spec.id = "in";
    input.spec.kind = nf::LayerKind::input;
    do
    {
        input.spec.output_shape = {uniform(rng, 1, 12), uniform(rng, 1, 12), uniform(rng, 1, 4)};
    } while (input.spec.output_shape.size() > max_neurons / 2);
    input.spec.neuron = random_neuron(rng);
    net.layers.push_back(input);
    std::int64_t used = input.spec.output_shape.size();
    const std::int64_t n_layers = uniform(rng, 2, max_layers);
    for (std::int64_t l = 1; l < n_layers; ++l)
    {
        const nf::Shape in = net.layers.back().spec.output_shape;
        for (int attempt = 0; attempt < 20; ++attempt)
        {
            nf::SnnLayer layer;
            layer.spec.id = "l" + std::to_string(l);
            layer.spec.neuron = random_neuron(rng);
            const std::int64_t choice = uniform(rng, 0, 2);
            std::int64_t n_weights = 0;
            if (choice == 0)
            {
                layer.spec.kind = nf::LayerKind::dense;
                layer.spec.out_channels = uniform(rng, 1, 64);
                layer.spec.output_shape = {1, 1, layer.spec.out_channels};
                n_weights = in.size() * layer.spec.out_channels;
            }
            else
            {
                layer.spec.kind = choice == 1 ? nf::LayerKind::conv2d : nf::LayerKind::depthwise_conv2d;
                const nf::Extent2 k{uniform(rng, 1, std::min<std::int64_t>(4, in.height)),
                        uniform(rng, 1, std::min<std::int64_t>(4, in.width))};
                const nf::Extent2 s{uniform(rng, 1, 2), uniform(rng, 1, 2)};
                layer.spec.kernel = k;
                layer.spec.strides = s;
                layer.spec.padding = uniform(rng, 0, 1) == 0 ? nf::Padding::valid : nf::Padding::same;
                const std::int64_t c = choice == 1 ? uniform(rng, 1, 8) : in.channels;
                layer.spec.out_channels = choice == 1 ? c : 0;
                layer.spec.output_shape = {extent(in.height, k.y, s.y, layer.spec.padding),
                        extent(in.width, k.x, s.x, layer.spec.padding), c};
                n_weights = k.y * k.x * in.channels * (choice == 1 ? c : 1);
            }
            if (used + layer.spec.output_shape.size() > max_neurons)
            {
                continue;
            }
            for (std::int64_t w = 0; w < n_weights; ++w)
            {
                layer.weights.push_back(uniform(rng, -60, 90));
            }
            used += layer.spec.output_shape.size();
            net.layers.push_back(std::move(layer));
            break;
        }
        if (static_cast<std::int64_t>(net.layers.size()) != l + 1)
        {
            break;
        }
    }
    if (net.layers.size() == 1)
    {
        // Guarantee at least one connection.
        nf::SnnLayer layer;
        layer.spec.id = "l1";
        layer.spec.kind = nf::LayerKind::dense;
        layer.spec.out_channels = 1;
        layer.spec.output_shape = {1, 1, 1};
        layer.spec.neuron = random_neuron(rng);
        layer.weights.assign(static_cast<std::size_t>(input.spec.output_shape.size()), 40);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

nf::SimInput random_input(std::mt19937_64 &rng, const nf::SnnNetwork &net, std::int64_t timesteps)
{
    const nf::LayerSpec &in = net.layers.front().spec;
    nf::SimInput input;
    if (uniform(rng, 0, 1) == 0)
    {
        for (std::int64_t n = 0; n < in.output_shape.size(); ++n)
        {
            input.frame.push_back(uniform(rng, 0, 2 * in.neuron.threshold));
        }
        return input;
    }
    std::vector<std::vector<std::int64_t>> raster(static_cast<std::size_t>(timesteps));
    for (auto &step : raster)
    {
        for (std::int64_t n = 0; n < in.output_shape.size(); ++n)
        {
            if (uniform(rng, 0, 4) == 0)
            {
                step.push_back(n);
            }
        }
    }
    input.raster = std::move(raster);
    return input;
}

std::vector<nf::LayerSpec> specs_of(const nf::SnnNetwork &net)
{
    std::vector<nf::LayerSpec> specs;
    for (const nf::SnnLayer &l : net.layers)
    {
        specs.push_back(l.spec);
    }
    return specs;
}

namespace {

std::int64_t cheapest_cost(const std::vector<std::pair<std::int64_t, std::int64_t>> &entries)
{
    if (entries.empty())
    {
        return 0;
    }
    const auto n = static_cast<std::int64_t>(entries.size());
    std::int64_t runs = 1;
    for (std::size_t k = 1; k < entries.size(); ++k)
    {
        runs += entries[k].first != entries[k - 1].first + 1 ? 1 : 0;
    }
    return std::min({2 * n, entries.back().first + 1, n + runs});
}

} // namespace

std::vector<std::vector<nf::CoreUsage>> retally_chain(const std::vector<nf::LayerSpec> &layers,
        const std::vector<nf::Grid> &grids, bool sharing)
{
    std::vector<std::vector<nf::CoreUsage>> usage(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l)
    {
        const nf::Shape &shape = layers[l].output_shape;
        usage[l].resize(static_cast<std::size_t>(grids[l].cores()));
        const auto owner = owner_core(shape, grids[l]);
        const bool soft = layers[l].neuron.reset == nf::ResetMode::soft;
        for (const std::int64_t c : owner)
        {
            auto &u = usage[l][static_cast<std::size_t>(c)];
            u.neurons += soft ? 2 : 1;
            u.input_axons += (l == 0 ? 1 : 0) + (soft ? 1 : 0);
            u.output_axons += l + 1 == layers.size() ? 1 : 0;
            u.synapse_units += soft ? 1 : 0;
        }
    }
    for (std::size_t l = 1; l < layers.size(); ++l)
    {
        const nf::Shape &pre_shape = layers[l - 1].output_shape;
        const nf::Shape &post_shape = layers[l].output_shape;
        const auto triples = brute_force_unroll(pre_shape, layers[l]);
        const auto pre_owner = owner_core(pre_shape, grids[l - 1]);
        const auto pre_local = local_index(pre_shape, grids[l - 1]);
        const auto post_owner = owner_core(post_shape, grids[l]);
        const auto post_local = local_index(post_shape, grids[l]);

        // Columns: (pre, destination core) -> (local destination, weight id).
        std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::pair<std::int64_t, std::int64_t>>> cols;
        for (const Triple &t : triples)
        {
            const auto q = static_cast<std::size_t>(t.post);
            cols[{t.pre, post_owner[q]}].emplace_back(post_local[q], t.weight_id);
        }
        std::map<std::int64_t, std::set<std::int64_t>> dsts;
        std::map<std::int64_t, std::set<std::vector<std::pair<std::int64_t, std::int64_t>>>> templates;
        for (auto &[key, entries] : cols)
        {
            dsts[key.first].insert(key.second);
            std::sort(entries.begin(), entries.end());
            const std::int64_t base = entries.front().first;
            for (auto &e : entries)
            {
                e.first -= base;
            }
            auto &units = usage[l][static_cast<std::size_t>(key.second)].synapse_units;
            if (sharing)
            {
                templates[key.second].insert(entries);
            }
            else
            {
                units += cheapest_cost(entries);
            }
        }
        for (const auto &[core, set] : templates)
        {
            for (const auto &tmpl : set)
            {
                usage[l][static_cast<std::size_t>(core)].synapse_units += cheapest_cost(tmpl);
            }
        }

        // Source neurons in (core, local) order so runs are contiguous.
        std::vector<std::pair<std::pair<std::int64_t, std::int64_t>, std::int64_t>> order;
        for (std::size_t p = 0; p < pre_owner.size(); ++p)
        {
            order.push_back({{pre_owner[p], pre_local[p]}, static_cast<std::int64_t>(p)});
        }
        std::sort(order.begin(), order.end());
        std::int64_t run_core = -1;
        std::int64_t run_dst = -1;
        std::int64_t run_last = -2;
        for (const auto &[key, p] : order)
        {
            const auto [core, local] = key;
            const auto &set = dsts[p];
            auto &src = usage[l - 1][static_cast<std::size_t>(core)];
            if (!sharing || set.size() != 1)
            {
                for (const std::int64_t d : set)
                {
                    ++src.output_axons;
                    ++usage[l][static_cast<std::size_t>(d)].input_axons;
                }
                run_dst = -1;
                continue;
            }
            const std::int64_t dst = *set.begin();
            if (core != run_core || dst != run_dst || local != run_last + 1)
            {
                ++src.output_axons;
                ++usage[l][static_cast<std::size_t>(dst)].input_axons;
            }
            run_core = core;
            run_dst = dst;
            run_last = local;
        }
    }
    return usage;
}

bool within_limits(const std::vector<std::vector<nf::CoreUsage>> &usage, const nf::CoreConstraints &limits)
{
    for (const auto &layer : usage)
    {
        for (const auto &u : layer)
        {
            if (u.neurons > limits.max_neurons_per_core || u.input_axons > limits.max_input_axons ||
                    u.output_axons > limits.max_output_axons || u.synapse_units > limits.synapse_budget_units)
            {
                return false;
            }
        }
    }
    return true;
}

double chain_cost(std::span<const nf::LayerSpec> layers, std::span<const nf::Partition> parts,
        const nf::OptimizeOptions &o, bool *feasible)
{
    const auto tallies = nf::tally_chain(layers, parts, o.sharing, o.cost_model);
    double cost = 0.0;
    bool ok = true;
    for (const auto &t : tallies)
    {
        cost += nf::evaluate_cost(t, o.weights, o.constraints);
        ok = ok && nf::check_hard(t, o.constraints).ok();
    }
    if (feasible != nullptr)
    {
        *feasible = ok;
    }
    return cost;
}

std::vector<nf::Grid> all_grids(const nf::LayerSpec &l, const nf::CoreConstraints &c)
{
    std::vector<nf::Grid> grids;
    const nf::Shape &s = l.output_shape;
    const std::int64_t factor = l.neuron.reset == nf::ResetMode::soft ? 2 : 1;
    for (std::int64_t ny = 1; ny <= s.height; ++ny)
    {
        for (std::int64_t nx = 1; nx <= s.width; ++nx)
        {
            for (std::int64_t nz = 1; nz <= s.channels; ++nz)
            {
                const std::int64_t largest = ((s.height + ny - 1) / ny) * ((s.width + nx - 1) / nx) *
                        ((s.channels + nz - 1) / nz);
                if (largest * factor <= c.max_neurons_per_core)
                {
                    grids.push_back({ny, nx, nz});
                }
            }
        }
    }
    return grids;
}

double exhaustive_optimum(const std::vector<nf::LayerSpec> &layers, const nf::OptimizeOptions &o)
{
    double best = std::numeric_limits<double>::infinity();
    std::vector<nf::Partition> chain(layers.size());
    std::vector<std::vector<nf::Grid>> options;
    for (const auto &l : layers)
    {
        options.push_back(all_grids(l, o.constraints));
    }
    for (auto &g : options)
    {
        std::stable_sort(g.begin(), g.end(), [](const nf::Grid &a, const nf::Grid &b) { return a.cores() < b.cores(); });
    }
    std::vector<std::size_t> pick(layers.size(), 0);
    while (true)
    {
        // Every other term is non-negative, so the core term alone bounds the cost.
        std::int64_t cores = 0;
        for (std::size_t l = 0; l < layers.size(); ++l)
        {
            cores += options[l][pick[l]].cores();
        }
        if (o.weights.cores * static_cast<double>(cores) <= best)
        {
            for (std::size_t l = 0; l < layers.size(); ++l)
            {
                chain[l] = nf::Partition(layers[l].id, layers[l].output_shape, options[l][pick[l]]);
            }
            bool feasible = false;
            const double c = chain_cost(layers, chain, o, &feasible);
            if (feasible)
            {
                best = std::min(best, c);
            }
        }
        std::size_t l = 0;
        while (l < layers.size() && ++pick[l] == options[l].size())
        {
            pick[l++] = 0;
        }
        if (l == layers.size())
        {
            break;
        }
    }
    return best;
}

nf::OptimizeOptions tight_options(std::int64_t beam)
{
    nf::OptimizeOptions o;
    o.beam = beam;
    o.constraints.max_neurons_per_core = 24;
    o.constraints.max_input_axons = 40;
    o.constraints.max_output_axons = 40;
    o.constraints.synapse_budget_units = 400;
    return o;
}

} // namespace oracle
