#include "nf/partitioner.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <tuple>

#include "nf/error.hpp"

namespace nf {

void validate(const CostWeights &w)
{
    const double all[] = {w.cores, w.synapses, w.axons, w.offchip};
    bool any_positive = false;
    for (const double a : all)
    {
        if (!(a >= 0.0))
        {
            throw Error(ErrorKind::usage, "cost weights must be non-negative");
        }
        any_positive = any_positive || a > 0.0;
    }
    if (!any_positive)
    {
        throw Error(ErrorKind::usage, "at least one cost weight must be positive");
    }
}

CostWeights parse_cost_weights(const std::string &text)
{
    std::vector<double> values;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ','))
    {
        try
        {
            std::size_t used = 0;
            values.push_back(std::stod(item, &used));
            if (used != item.size())
            {
                throw std::invalid_argument(item);
            }
        }
        catch (const std::exception &)
        {
            throw Error(ErrorKind::usage, "bad cost weight '" + item + "'");
        }
    }
    if (values.size() != 4)
    {
        throw Error(ErrorKind::usage, "expected four comma-separated cost weights, got '" + text + "'");
    }
    CostWeights w{values[0], values[1], values[2], values[3]};
    validate(w);
    return w;
}

double evaluate_cost(const ResourceTally &tally, const CostWeights &w, const CoreConstraints &constraints)
{
    const double syn_max = static_cast<double>(constraints.synapse_budget_units);
    const double axon_max = static_cast<double>(constraints.max_input_axons + constraints.max_output_axons);
    return w.cores * static_cast<double>(tally.n_cores()) +
            w.synapses * static_cast<double>(tally.n_syn()) / syn_max +
            w.axons * static_cast<double>(tally.n_axons()) / axon_max +
            w.offchip * static_cast<double>(tally.n_offchip());
}

const char *to_string(Violation v)
{
    switch (v)
    {
    case Violation::none: return "none";
    case Violation::neurons: return "neurons";
    case Violation::input_axons: return "input_axons";
    case Violation::output_axons: return "output_axons";
    case Violation::synapses: return "synapses";
    }
    return "?";
}

HardCheck check_hard(const ResourceTally &tally, const CoreConstraints &constraints)
{
    for (std::size_t c = 0; c < tally.cores.size(); ++c)
    {
        const CoreUsage &u = tally.cores[c];
        const std::tuple<Violation, std::int64_t, std::int64_t> limits[] = {
                {Violation::neurons, u.neurons, constraints.max_neurons_per_core},
                {Violation::input_axons, u.input_axons, constraints.max_input_axons},
                {Violation::output_axons, u.output_axons, constraints.max_output_axons},
                {Violation::synapses, u.synapse_units, constraints.synapse_budget_units},
        };
        for (const auto &[kind, value, limit] : limits)
        {
            if (value > limit)
            {
                return {kind, static_cast<std::int64_t>(c), value, limit};
            }
        }
    }
    return {};
}

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b)
{
    return (a + b - 1) / b;
}

/// Smallest split count for each distinct ceil(n / k).
std::vector<std::int64_t> axis_splits(std::int64_t n)
{
    std::vector<std::int64_t> splits;
    std::int64_t last = -1;
    for (std::int64_t k = 1; k <= n; ++k)
    {
        const std::int64_t len = ceil_div(n, k);
        if (len != last)
        {
            splits.push_back(k);
            last = len;
        }
    }
    return splits;
}

std::int64_t compartments_per_neuron(const LayerSpec &layer)
{
    return layer.neuron.reset == ResetMode::soft ? 2 : 1;
}

} // namespace

std::vector<Grid> rank_candidates(const LayerSpec &layer, const CoreConstraints &constraints)
{
    const Shape &s = layer.output_shape;
    if (s.size() <= 0)
    {
        throw Error(ErrorKind::shape, "layer '" + layer.id + "' has no inferred shape");
    }
    const std::int64_t per_neuron = compartments_per_neuron(layer);
    struct Ranked
    {
        std::int64_t cores;
        std::int64_t imbalance;
        Grid grid;
    };
    std::vector<Ranked> ranked;
    for (const std::int64_t ny : axis_splits(s.height))
    {
        for (const std::int64_t nx : axis_splits(s.width))
        {
            for (const std::int64_t nz : axis_splits(s.channels))
            {
                const std::int64_t largest =
                        ceil_div(s.height, ny) * ceil_div(s.width, nx) * ceil_div(s.channels, nz);
                if (largest * per_neuron > constraints.max_neurons_per_core)
                {
                    continue;
                }
                const std::int64_t smallest = (s.height / ny) * (s.width / nx) * (s.channels / nz);
                ranked.push_back({ny * nx * nz, largest - smallest, Grid{ny, nx, nz}});
            }
        }
    }
    if (ranked.empty())
    {
        throw Error(ErrorKind::no_feasible_partition,
                "no grid of layer '" + layer.id + "' fits " +
                        std::to_string(constraints.max_neurons_per_core) + " compartments per core");
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked &a, const Ranked &b) {
        return std::tie(a.cores, a.imbalance, a.grid.nz, a.grid.ny, a.grid.nx) <
                std::tie(b.cores, b.imbalance, b.grid.nz, b.grid.ny, b.grid.nx);
    });
    std::vector<Grid> grids;
    grids.reserve(ranked.size());
    for (const Ranked &r : ranked)
    {
        grids.push_back(r.grid);
    }
    return grids;
}

std::vector<Partition> propose_candidates(const LayerSpec &layer, std::int64_t m,
        const CoreConstraints &constraints)
{
    if (m < 1)
    {
        throw Error(ErrorKind::usage, "beam width must be at least 1");
    }
    const std::vector<Grid> grids = rank_candidates(layer, constraints);
    std::vector<Partition> out;
    for (std::size_t i = 0; i < grids.size() && static_cast<std::int64_t>(i) < m; ++i)
    {
        out.emplace_back(layer.id, layer.output_shape, grids[i]);
    }
    return out;
}

std::vector<ResourceTally> tally_chain(std::span<const LayerSpec> layers,
        std::span<const Partition> partitions, SharingMode sharing,
        const SynapseCostModel &cost_model, std::span<const ChipMap> chips)
{
    if (partitions.size() != layers.size())
    {
        throw Error(ErrorKind::partition, "chain has " + std::to_string(partitions.size()) +
                        " partitions for " + std::to_string(layers.size()) + " layers");
    }
    const ChipMap none;
    auto chip_of = [&](std::size_t l) -> const ChipMap & { return chips.empty() ? none : chips[l]; };
    std::vector<PairTally> pairs;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l)
    {
        const ConnectionPair pair = unroll(layers[l], layers[l + 1]);
        const GroupSet groups = build_groups(pair, partitions[l], partitions[l + 1], sharing);
        pairs.push_back(tally(partitions[l], partitions[l + 1], groups, cost_model, chip_of(l), chip_of(l + 1)));
    }
    std::vector<ResourceTally> tallies;
    for (std::size_t l = 0; l < layers.size(); ++l)
    {
        const PairTally *incoming = l > 0 ? &pairs[l - 1] : nullptr;
        const PairTally *outgoing = l + 1 < layers.size() ? &pairs[l] : nullptr;
        tallies.push_back(assemble_layer_tally(layers[l], partitions[l], incoming, outgoing));
    }
    return tallies;
}

namespace {

struct Chain
{
    /// Grids of layers [first, n); entries below first are unset.
    std::vector<Grid> grids;
    std::size_t first = 0;
    /// Costs of finalized layers, indexed by layer.
    std::vector<double> layer_costs;
    double finalized = 0.0;
    std::int64_t cores = 0;
    /// Pair tally from layer `first` to `first + 1`; null at the output layer.
    std::shared_ptr<const PairTally> outgoing;
};

bool chain_less(const Chain &a, const Chain &b)
{
    if (a.finalized != b.finalized)
    {
        return a.finalized < b.finalized;
    }
    if (a.cores != b.cores)
    {
        return a.cores < b.cores;
    }
    return std::lexicographical_compare(a.grids.begin() + static_cast<std::ptrdiff_t>(a.first), a.grids.end(),
            b.grids.begin() + static_cast<std::ptrdiff_t>(b.first), b.grids.end());
}

/// Caches shared across beam widths: partitions, per-layer prospects and
/// pair tallies.
class Searcher
{
public:
    Searcher(std::span<const LayerSpec> layers, const OptimizeOptions &options)
            : layers_(layers)
            , options_(options)
            , ranked_(layers.size())
            , partitions_(layers.size())
            , prospects_(layers.size())
    {
        if (layers.empty())
        {
            throw Error(ErrorKind::usage, "cannot partition an empty network");
        }
        validate(options.weights);
        for (std::size_t l = 0; l + 1 < layers.size(); ++l)
        {
            pairs_.push_back(unroll(layers[l], layers[l + 1]));
        }
        for (std::size_t l = 0; l < layers.size(); ++l)
        {
            ranked_[l] = rank_candidates(layers[l], options.constraints);
        }
    }

    OptimizeResult run(std::int64_t beam);

private:
    const Partition &partition(std::size_t l, const Grid &g)
    {
        auto it = partitions_[l].find(g);
        if (it == partitions_[l].end())
        {
            it = partitions_[l].emplace(g, Partition(layers_[l].id, layers_[l].output_shape, g)).first;
        }
        return it->second;
    }

    bool prospect(std::size_t l, const Grid &g);
    bool output_axons_can_fit(std::size_t l, const Grid &pre, const Grid &post);
    std::shared_ptr<const PairTally> pair_tally(std::size_t l, const Grid &pre, const Grid &post);
    std::vector<Chain> seed(std::int64_t beam);
    std::vector<Chain> extend(const Chain &chain, std::size_t l, std::int64_t beam);
    double layer_cost(const ResourceTally &t) const
    {
        return evaluate_cost(t, options_.weights, options_.constraints);
    }

    std::span<const LayerSpec> layers_;
    const OptimizeOptions &options_;
    std::vector<ConnectionPair> pairs_;
    std::vector<std::vector<Grid>> ranked_;
    std::vector<std::map<Grid, Partition>> partitions_;
    std::vector<std::map<Grid, bool>> prospects_;
    std::map<std::tuple<std::size_t, Grid, Grid>, std::shared_ptr<const PairTally>> pair_cache_;
    /// Distinct destination cores of every pre neuron of pair l, per post grid.
    std::map<std::pair<std::size_t, Grid>, std::vector<std::int32_t>> fan_out_;
};

/// Layer-local necessary conditions: the incoming side with the pre layer on
/// one core (synapse memory does not depend on the pre split; discrete axons
/// are a lower bound on input axons) and, at the ends, injection and readout.
bool Searcher::prospect(std::size_t l, const Grid &g)
{
    const auto cached = prospects_[l].find(g);
    if (cached != prospects_[l].end())
    {
        return cached->second;
    }
    const LayerSpec &layer = layers_[l];
    const Partition &post = partition(l, g);
    const bool soft = layer.neuron.reset == ResetMode::soft;
    const CoreConstraints &k = options_.constraints;
    bool ok = true;
    std::vector<std::int64_t> in_axons(static_cast<std::size_t>(post.core_count()), 0);
    std::vector<std::int64_t> syn(in_axons.size(), 0);
    if (l == 0)
    {
        for (std::size_t c = 0; c < in_axons.size(); ++c)
        {
            in_axons[c] = post.boxes()[c].size();
        }
    }
    else
    {
        const ConnectionPair &pair = pairs_[l - 1];
        const Partition whole(layers_[l - 1].id, layers_[l - 1].output_shape, Grid{});
        const GroupSet groups = build_groups(pair, whole, post, options_.sharing);
        const PairTally t = tally(whole, post, groups, options_.cost_model);
        syn = t.post_synapse_units;
        std::vector<bool> reached_single(in_axons.size(), false);
        std::vector<std::int32_t> dsts;
        for (std::int64_t p = 0; p < pair.pre_count(); ++p)
        {
            dsts.clear();
            for (const std::int32_t q : pair.column_post(p))
            {
                dsts.push_back(post.locate(q).first);
            }
            std::sort(dsts.begin(), dsts.end());
            dsts.erase(std::unique(dsts.begin(), dsts.end()), dsts.end());
            const bool discrete = options_.sharing == SharingMode::off || dsts.size() > 1;
            for (const std::int32_t d : dsts)
            {
                if (discrete)
                {
                    ++in_axons[static_cast<std::size_t>(d)];
                }
                else
                {
                    reached_single[static_cast<std::size_t>(d)] = true;
                }
            }
        }
        for (std::size_t c = 0; c < in_axons.size(); ++c)
        {
            in_axons[c] += reached_single[c] ? 1 : 0;
        }
    }
    for (std::size_t c = 0; c < in_axons.size() && ok; ++c)
    {
        const std::int64_t n = post.boxes()[c].size();
        const std::int64_t extra = soft ? n : 0;
        ok = in_axons[c] + extra <= k.max_input_axons && syn[c] + extra <= k.synapse_budget_units;
        if (l + 1 == layers_.size())
        {
            ok = ok && n <= k.max_output_axons;
        }
    }
    prospects_[l].emplace(g, ok);
    return ok;
}

/// Necessary condition on the pre side of pair l: every multi-destination
/// neuron needs one discrete axon per destination core (all of them when
/// sharing is off), and any single-destination neuron at least one run axon.
/// Candidates failing it are skipped without charging the failure budget.
bool Searcher::output_axons_can_fit(std::size_t l, const Grid &pre, const Grid &post)
{
    const auto key = std::make_pair(l, post);
    auto it = fan_out_.find(key);
    if (it == fan_out_.end())
    {
        const ConnectionPair &pair = pairs_[l];
        const Partition &post_part = partition(l + 1, post);
        std::vector<std::int32_t> counts(static_cast<std::size_t>(pair.pre_count()), 0);
        std::vector<std::int32_t> dsts;
        for (std::int64_t p = 0; p < pair.pre_count(); ++p)
        {
            dsts.clear();
            for (const std::int32_t q : pair.column_post(p))
            {
                dsts.push_back(post_part.locate(q).first);
            }
            std::sort(dsts.begin(), dsts.end());
            counts[static_cast<std::size_t>(p)] =
                    static_cast<std::int32_t>(std::unique(dsts.begin(), dsts.end()) - dsts.begin());
        }
        it = fan_out_.emplace(key, std::move(counts)).first;
    }
    const Partition &pre_part = partition(l, pre);
    std::vector<std::int64_t> discrete(static_cast<std::size_t>(pre_part.core_count()), 0);
    std::vector<bool> has_run(discrete.size(), false);
    const bool sharing = options_.sharing != SharingMode::off;
    for (std::size_t p = 0; p < it->second.size(); ++p)
    {
        const std::int32_t d = it->second[p];
        const auto core = static_cast<std::size_t>(pre_part.locate(static_cast<std::int64_t>(p)).first);
        if (sharing && d == 1)
        {
            has_run[core] = true;
        }
        else
        {
            discrete[core] += d;
        }
    }
    for (std::size_t c = 0; c < discrete.size(); ++c)
    {
        if (discrete[c] + (has_run[c] ? 1 : 0) > options_.constraints.max_output_axons)
        {
            return false;
        }
    }
    return true;
}

std::shared_ptr<const PairTally> Searcher::pair_tally(std::size_t l, const Grid &pre, const Grid &post)
{
    const auto key = std::make_tuple(l, pre, post);
    const auto it = pair_cache_.find(key);
    if (it != pair_cache_.end())
    {
        return it->second;
    }
    const Partition &a = partition(l, pre);
    const Partition &b = partition(l + 1, post);
    const GroupSet groups = build_groups(pairs_[l], a, b, options_.sharing);
    auto t = std::make_shared<const PairTally>(tally(a, b, groups, options_.cost_model));
    pair_cache_.emplace(key, t);
    return t;
}

std::vector<Chain> Searcher::seed(std::int64_t beam)
{
    const std::size_t n = layers_.size();
    const std::size_t last = n - 1;
    std::vector<Chain> chains;
    for (const Grid &g : ranked_[last])
    {
        if (static_cast<std::int64_t>(chains.size()) >= beam)
        {
            break;
        }
        if (!prospect(last, g))
        {
            continue;
        }
        Chain c;
        c.grids.assign(n, Grid{});
        c.grids[last] = g;
        c.first = last;
        c.layer_costs.assign(n, 0.0);
        c.cores = g.cores();
        if (n == 1)
        {
            const ResourceTally t = assemble_layer_tally(layers_[0], partition(0, g), nullptr, nullptr);
            if (!check_hard(t, options_.constraints).ok())
            {
                continue;
            }
            c.layer_costs[0] = layer_cost(t);
            c.finalized = c.layer_costs[0];
        }
        chains.push_back(std::move(c));
    }
    return chains;
}

/// Up to `beam` feasible extensions of a chain to layer l, which finalizes
/// layer l + 1 (and layer 0 itself when l == 0).
std::vector<Chain> Searcher::extend(const Chain &chain, std::size_t l, std::int64_t beam)
{
    std::vector<Chain> out;
    const std::int64_t budget = std::max<std::int64_t>(1, options_.failure_budget_factor * beam);
    std::int64_t failures = 0;
    const Grid &next = chain.grids[l + 1];
    const Partition &next_part = partition(l + 1, next);
    for (const Grid &g : ranked_[l])
    {
        if (static_cast<std::int64_t>(out.size()) >= beam || failures >= budget)
        {
            break;
        }
        if (!prospect(l, g) || !output_axons_can_fit(l, g, next))
        {
            continue;
        }
        const auto pair = pair_tally(l, g, next);
        const ResourceTally upper = assemble_layer_tally(layers_[l + 1], next_part, pair.get(), chain.outgoing.get());
        bool ok = check_hard(upper, options_.constraints).ok();
        std::optional<ResourceTally> lower;
        if (ok)
        {
            const auto &out_axons = pair->pre_output_axons;
            ok = std::all_of(out_axons.begin(), out_axons.end(),
                    [&](std::int64_t v) { return v <= options_.constraints.max_output_axons; });
        }
        if (ok && l == 0)
        {
            lower = assemble_layer_tally(layers_[0], partition(0, g), nullptr, pair.get());
            ok = check_hard(*lower, options_.constraints).ok();
        }
        if (!ok)
        {
            ++failures;
            continue;
        }
        Chain c = chain;
        c.grids[l] = g;
        c.first = l;
        c.cores += g.cores();
        c.layer_costs[l + 1] = layer_cost(upper);
        c.finalized += c.layer_costs[l + 1];
        if (lower)
        {
            c.layer_costs[0] = layer_cost(*lower);
            c.finalized += c.layer_costs[0];
        }
        c.outgoing = pair;
        out.push_back(std::move(c));
    }
    return out;
}

OptimizeResult Searcher::run(std::int64_t beam)
{
    std::vector<Chain> chains = seed(beam);
    for (std::size_t l = layers_.size() - 1; l-- > 0 && !chains.empty();)
    {
        std::vector<Chain> grown;
        for (const Chain &c : chains)
        {
            std::vector<Chain> ext = extend(c, l, beam);
            std::move(ext.begin(), ext.end(), std::back_inserter(grown));
        }
        std::stable_sort(grown.begin(), grown.end(), chain_less);
        if (static_cast<std::int64_t>(grown.size()) > beam)
        {
            grown.resize(static_cast<std::size_t>(beam));
        }
        chains = std::move(grown);
    }
    if (chains.empty())
    {
        throw Error(ErrorKind::infeasible_network,
                "no partition chain satisfies the core constraints with beam width " + std::to_string(beam));
    }
    std::stable_sort(chains.begin(), chains.end(), chain_less);
    const Chain &best = chains.front();
    OptimizeResult result;
    for (std::size_t l = 0; l < layers_.size(); ++l)
    {
        result.partitions.push_back(partition(l, best.grids[l]));
    }
    result.tallies = tally_chain(layers_, result.partitions, options_.sharing, options_.cost_model);
    result.layer_costs = best.layer_costs;
    for (const double c : result.layer_costs)
    {
        result.total_cost += c;
    }
    result.beam_used = beam;
    return result;
}

std::int64_t chain_cores(const OptimizeResult &r)
{
    std::int64_t total = 0;
    for (const Partition &p : r.partitions)
    {
        total += p.core_count();
    }
    return total;
}

bool result_less(const OptimizeResult &a, const OptimizeResult &b)
{
    if (a.total_cost != b.total_cost)
    {
        return a.total_cost < b.total_cost;
    }
    const std::int64_t ca = chain_cores(a);
    const std::int64_t cb = chain_cores(b);
    if (ca != cb)
    {
        return ca < cb;
    }
    for (std::size_t l = 0; l < a.partitions.size(); ++l)
    {
        if (a.partitions[l].grid() != b.partitions[l].grid())
        {
            return a.partitions[l].grid() < b.partitions[l].grid();
        }
    }
    return false;
}

} // namespace

OptimizeResult beam_search(std::span<const LayerSpec> layers, const OptimizeOptions &options)
{
    if (options.beam < 1)
    {
        throw Error(ErrorKind::usage, "beam width must be at least 1");
    }
    Searcher searcher(layers, options);
    return searcher.run(options.beam);
}

OptimizeResult optimize(std::span<const LayerSpec> layers, const OptimizeOptions &options)
{
    if (options.beam < 1)
    {
        throw Error(ErrorKind::usage, "beam width must be at least 1");
    }
    Searcher searcher(layers, options);
    std::vector<std::int64_t> widths;
    for (std::int64_t w = 1; w < options.beam; w *= 2)
    {
        widths.push_back(w);
    }
    widths.push_back(options.beam);
    std::optional<OptimizeResult> best;
    std::optional<Error> last_error;
    for (const std::int64_t w : widths)
    {
        try
        {
            OptimizeResult r = searcher.run(w);
            if (!best || result_less(r, *best))
            {
                best = std::move(r);
            }
        }
        catch (const Error &e)
        {
            if (e.kind() != ErrorKind::infeasible_network)
            {
                throw;
            }
            last_error = e;
        }
    }
    if (!best)
    {
        throw *last_error;
    }
    return *best;
}

} // namespace nf
