#include "nf/connectivity.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>

#include "nf/error.hpp"

namespace nf {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t &h, std::int64_t value)
{
    auto v = static_cast<std::uint64_t>(value);
    for (int i = 0; i < 8; ++i)
    {
        h ^= (v & 0xFFU);
        h *= kFnvPrime;
        v >>= 8;
    }
}

std::int32_t checked_i32(std::int64_t v)
{
    if (v > std::numeric_limits<std::int32_t>::max())
    {
        throw Error(ErrorKind::shape, "layer too large for 32-bit neuron indices");
    }
    return static_cast<std::int32_t>(v);
}

ConnectionPair unroll_dense(ConnectionPair pair)
{
    const std::int64_t n_in = pair.pre_shape.size();
    const std::int64_t n_out = pair.post_shape.size();
    pair.weight_count = n_in * n_out;
    pair.offsets.resize(static_cast<std::size_t>(n_in + 1));
    pair.post.resize(static_cast<std::size_t>(n_in * n_out));
    pair.weight_id.resize(pair.post.size());
    for (std::int64_t p = 0; p <= n_in; ++p)
    {
        pair.offsets[static_cast<std::size_t>(p)] = p * n_out;
    }
    for (std::int64_t p = 0; p < n_in; ++p)
    {
        for (std::int64_t q = 0; q < n_out; ++q)
        {
            const auto k = static_cast<std::size_t>(p * n_out + q);
            pair.post[k] = static_cast<std::int32_t>(q);
            pair.weight_id[k] = checked_i32(p * n_out + q);
        }
    }
    return pair;
}

template <typename Visit>
void for_each_kernel_tap(const ConvGeometry &g, Visit &&visit)
{
    const std::int64_t ci_count = g.in.channels;
    for (std::int64_t oy = 0; oy < g.out.height; ++oy)
    {
        for (std::int64_t ox = 0; ox < g.out.width; ++ox)
        {
            for (std::int64_t co = 0; co < g.out.channels; ++co)
            {
                const std::int64_t q = neuron_index(g.out, oy, ox, co);
                for (std::int64_t ky = 0; ky < g.kernel.y; ++ky)
                {
                    const std::int64_t iy = oy * g.strides.y + ky - g.pad_top;
                    if (iy < 0 || iy >= g.in.height)
                    {
                        continue;
                    }
                    for (std::int64_t kx = 0; kx < g.kernel.x; ++kx)
                    {
                        const std::int64_t ix = ox * g.strides.x + kx - g.pad_left;
                        if (ix < 0 || ix >= g.in.width)
                        {
                            continue;
                        }
                        if (g.depthwise)
                        {
                            visit(neuron_index(g.in, iy, ix, co), q,
                                    conv_weight_id(g, ky, kx, co, co));
                            continue;
                        }
                        for (std::int64_t ci = 0; ci < ci_count; ++ci)
                        {
                            visit(neuron_index(g.in, iy, ix, ci), q,
                                    conv_weight_id(g, ky, kx, ci, co));
                        }
                    }
                }
            }
        }
    }
}

ConnectionPair unroll_conv(ConnectionPair pair, const LayerSpec &post)
{
    const ConvGeometry g = conv_geometry(pair.pre_shape, post);
    if (g.depthwise && g.in.channels != g.out.channels)
    {
        throw Error(ErrorKind::shape, "depthwise layer '" + post.id + "' changes channel count");
    }
    pair.weight_count = g.kernel.y * g.kernel.x * g.in.channels * (g.depthwise ? 1 : g.out.channels);
    const std::int64_t n_in = pair.pre_shape.size();
    std::vector<std::int64_t> counts(static_cast<std::size_t>(n_in), 0);
    for_each_kernel_tap(g, [&](std::int64_t p, std::int64_t, std::int64_t) {
        ++counts[static_cast<std::size_t>(p)];
    });
    pair.offsets.assign(static_cast<std::size_t>(n_in + 1), 0);
    for (std::int64_t p = 0; p < n_in; ++p)
    {
        pair.offsets[p + 1] = pair.offsets[p] + counts[p];
    }
    pair.post.resize(static_cast<std::size_t>(pair.offsets.back()));
    pair.weight_id.resize(pair.post.size());
    std::vector<std::int64_t> cursor(pair.offsets.begin(), pair.offsets.end() - 1);
    // Posts are visited in increasing order, so each column comes out sorted.
    for_each_kernel_tap(g, [&](std::int64_t p, std::int64_t q, std::int64_t w) {
        const auto k = static_cast<std::size_t>(cursor[static_cast<std::size_t>(p)]++);
        pair.post[k] = static_cast<std::int32_t>(q);
        pair.weight_id[k] = checked_i32(w);
    });
    return pair;
}

/// Deduplicating (or, with sharing off, appending) synapse store builder.
class StoreBuilder
{
public:
    explicit StoreBuilder(bool dedup)
            : dedup_(dedup)
    {
    }

    std::int32_t add_list(std::vector<Synapse> entries)
    {
        const std::uint64_t h = hash_synapses(entries);
        if (dedup_)
        {
            auto &bucket = list_index_[h];
            for (const std::int32_t id : bucket)
            {
                if (store_.lists[static_cast<std::size_t>(id)].entries == entries)
                {
                    return id;
                }
            }
            bucket.push_back(static_cast<std::int32_t>(store_.lists.size()));
        }
        store_.lists.push_back({std::move(entries), h});
        return static_cast<std::int32_t>(store_.lists.size() - 1);
    }

    std::int32_t add_group(std::vector<GroupSlot> slots)
    {
        std::uint64_t h = kFnvOffset;
        fnv_mix(h, static_cast<std::int64_t>(slots.size()));
        for (const GroupSlot &s : slots)
        {
            fnv_mix(h, s.offset);
            fnv_mix(h, static_cast<std::int64_t>(store_.lists[static_cast<std::size_t>(s.list)].hash));
        }
        if (dedup_)
        {
            auto &bucket = group_index_[h];
            for (const std::int32_t id : bucket)
            {
                if (store_.groups[static_cast<std::size_t>(id)].slots == slots)
                {
                    return id;
                }
            }
            bucket.push_back(static_cast<std::int32_t>(store_.groups.size()));
        }
        store_.groups.push_back({std::move(slots), h});
        return static_cast<std::int32_t>(store_.groups.size() - 1);
    }

    CoreSynapseStore take() { return std::move(store_); }

private:
    bool dedup_;
    CoreSynapseStore store_;
    std::unordered_map<std::uint64_t, std::vector<std::int32_t>> list_index_;
    std::unordered_map<std::uint64_t, std::vector<std::int32_t>> group_index_;
};

struct Member
{
    std::int32_t local = 0;
    std::int32_t list = 0;
    std::int32_t min_dst = 0;
};

} // namespace

std::span<const std::int32_t> ConnectionPair::column_post(std::int64_t pre) const
{
    const auto begin = static_cast<std::size_t>(offsets[static_cast<std::size_t>(pre)]);
    const auto end = static_cast<std::size_t>(offsets[static_cast<std::size_t>(pre) + 1]);
    return std::span<const std::int32_t>(post).subspan(begin, end - begin);
}

std::span<const std::int32_t> ConnectionPair::column_weight(std::int64_t pre) const
{
    const auto begin = static_cast<std::size_t>(offsets[static_cast<std::size_t>(pre)]);
    const auto end = static_cast<std::size_t>(offsets[static_cast<std::size_t>(pre) + 1]);
    return std::span<const std::int32_t>(weight_id).subspan(begin, end - begin);
}

ConnectionPair unroll(const LayerSpec &pre, const LayerSpec &post)
{
    ConnectionPair pair;
    pair.pre_id = pre.id;
    pair.post_id = post.id;
    pair.pre_shape = pre.output_shape;
    pair.post_shape = post.output_shape;
    checked_i32(pair.pre_shape.size());
    checked_i32(pair.post_shape.size());
    switch (post.kind)
    {
    case LayerKind::dense: return unroll_dense(std::move(pair));
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d:
    case LayerKind::average_pool2d: return unroll_conv(std::move(pair), post);
    case LayerKind::input:
    case LayerKind::flatten: break;
    }
    throw Error(ErrorKind::unsupported_kind,
            std::string(to_string(post.kind)) + " layer '" + post.id + "' has no incoming connections");
}

const char *to_string(SharingMode mode)
{
    switch (mode)
    {
    case SharingMode::off: return "off";
    case SharingMode::on: return "on";
    case SharingMode::full: return "full";
    }
    return "?";
}

const char *to_string(Compression scheme)
{
    switch (scheme)
    {
    case Compression::automatic: return "auto";
    case Compression::sparse: return "sparse";
    case Compression::dense: return "dense";
    case Compression::runlength: return "runlength";
    }
    return "?";
}

SharingMode parse_sharing(const std::string &text)
{
    for (const SharingMode m : {SharingMode::off, SharingMode::on, SharingMode::full})
    {
        if (text == to_string(m))
        {
            return m;
        }
    }
    throw Error(ErrorKind::usage, "sharing must be on|off|full, got '" + text + "'");
}

Compression parse_compression(const std::string &text)
{
    for (const Compression c : {Compression::automatic, Compression::sparse, Compression::dense,
                 Compression::runlength})
    {
        if (text == to_string(c))
        {
            return c;
        }
    }
    throw Error(ErrorKind::usage, "compression must be auto|sparse|dense|runlength, got '" + text + "'");
}

std::uint64_t hash_synapses(std::span<const Synapse> entries)
{
    std::uint64_t h = kFnvOffset;
    fnv_mix(h, static_cast<std::int64_t>(entries.size()));
    for (const Synapse &s : entries)
    {
        fnv_mix(h, s.dst_local);
        fnv_mix(h, s.weight_id);
    }
    return h;
}

std::vector<std::vector<Synapse>> group_template(const CoreSynapseStore &store, const SynapseGroup &group)
{
    std::vector<std::vector<Synapse>> slots;
    slots.reserve(group.slots.size());
    for (const GroupSlot &slot : group.slots)
    {
        std::vector<Synapse> entries = store.lists[static_cast<std::size_t>(slot.list)].entries;
        for (Synapse &s : entries)
        {
            s.dst_local += slot.offset;
        }
        slots.push_back(std::move(entries));
    }
    return slots;
}

GroupSet build_groups(const ConnectionPair &pair, const Partition &pre, const Partition &post,
        SharingMode sharing)
{
    if (pre.shape() != pair.pre_shape || post.shape() != pair.post_shape)
    {
        throw Error(ErrorKind::partition,
                "partitions do not tile layers '" + pair.pre_id + "' -> '" + pair.post_id + "'");
    }
    const std::int64_t n_post = pair.post_shape.size();
    std::vector<std::int32_t> post_core(static_cast<std::size_t>(n_post));
    std::vector<std::int32_t> post_local(static_cast<std::size_t>(n_post));
    for (std::int64_t q = 0; q < n_post; ++q)
    {
        const auto [core, local] = post.locate(q);
        post_core[static_cast<std::size_t>(q)] = core;
        post_local[static_cast<std::size_t>(q)] = local;
    }

    const bool populations = sharing != SharingMode::off;
    std::vector<StoreBuilder> builders;
    builders.reserve(static_cast<std::size_t>(post.core_count()));
    for (std::int64_t c = 0; c < post.core_count(); ++c)
    {
        builders.emplace_back(populations);
    }

    GroupSet result;
    result.sharing = sharing;

    struct Entry
    {
        std::int32_t dst_core;
        std::int32_t dst_local;
        std::int32_t weight_id;
    };
    std::vector<Entry> entries;
    std::vector<Member> run;
    std::int32_t run_dst = -1;
    std::int32_t run_src = -1;

    auto close_run = [&]() {
        if (run.empty())
        {
            return;
        }
        std::int32_t base = run.front().min_dst;
        for (const Member &m : run)
        {
            base = std::min(base, m.min_dst);
        }
        std::vector<GroupSlot> slots;
        slots.reserve(run.size());
        for (const Member &m : run)
        {
            slots.push_back({m.list, m.min_dst - base});
        }
        const std::int32_t group = builders[static_cast<std::size_t>(run_dst)].add_group(std::move(slots));
        result.axons.push_back({run_src, run_dst, group, base, run.front().local,
                static_cast<std::int32_t>(run.size()), run.size() > 1});
        run.clear();
        run_dst = -1;
    };

    for (std::int32_t src = 0; src < pre.core_count(); ++src)
    {
        const auto n_local = static_cast<std::int32_t>(pre.boxes()[static_cast<std::size_t>(src)].size());
        run_src = src;
        for (std::int32_t local = 0; local < n_local; ++local)
        {
            const std::int64_t p = pre.global_index(src, local);
            const auto posts = pair.column_post(p);
            const auto weights = pair.column_weight(p);
            entries.clear();
            for (std::size_t k = 0; k < posts.size(); ++k)
            {
                const auto q = static_cast<std::size_t>(posts[k]);
                entries.push_back({post_core[q], post_local[q], weights[k]});
            }
            std::stable_sort(entries.begin(), entries.end(),
                    [](const Entry &a, const Entry &b) { return a.dst_core < b.dst_core; });

            // Split into per-destination-core synapse lists re-based to their minimum.
            std::vector<std::pair<std::int32_t, std::vector<Synapse>>> per_dst;
            for (const Entry &e : entries)
            {
                if (per_dst.empty() || per_dst.back().first != e.dst_core)
                {
                    per_dst.emplace_back(e.dst_core, std::vector<Synapse>{});
                }
                per_dst.back().second.push_back({e.dst_local, e.weight_id});
            }

            if (populations && per_dst.size() == 1)
            {
                auto &[dst, list] = per_dst.front();
                const std::int32_t min_dst = list.front().dst_local;
                for (Synapse &s : list)
                {
                    s.dst_local -= min_dst;
                }
                if (run.empty() || run_dst != dst || run.back().local + 1 != local)
                {
                    close_run();
                    run_dst = dst;
                }
                const std::int32_t id = builders[static_cast<std::size_t>(dst)].add_list(std::move(list));
                run.push_back({local, id, min_dst});
                continue;
            }

            close_run();
            for (auto &[dst, list] : per_dst)
            {
                const std::int32_t min_dst = list.front().dst_local;
                for (Synapse &s : list)
                {
                    s.dst_local -= min_dst;
                }
                StoreBuilder &builder = builders[static_cast<std::size_t>(dst)];
                const std::int32_t id = builder.add_list(std::move(list));
                const std::int32_t group = builder.add_group({GroupSlot{id, 0}});
                result.axons.push_back({src, dst, group, min_dst, local, 1, false});
            }
        }
        close_run();
    }

    result.stores.reserve(builders.size());
    for (StoreBuilder &b : builders)
    {
        result.stores.push_back(b.take());
    }
    return result;
}

std::int64_t encoding_cost(std::span<const Synapse> entries, Compression scheme,
        const SynapseCostModel &model)
{
    if (entries.empty())
    {
        return 0;
    }
    switch (scheme)
    {
    case Compression::automatic:
        return encoding_cost(entries, select_scheme(entries, model), model);
    case Compression::sparse:
        return model.sparse_per_entry * static_cast<std::int64_t>(entries.size());
    case Compression::dense: {
        std::int32_t span = 0;
        for (const Synapse &s : entries)
        {
            span = std::max(span, s.dst_local + 1);
        }
        return model.dense_per_slot * span;
    }
    case Compression::runlength: {
        std::vector<std::int32_t> dst;
        dst.reserve(entries.size());
        for (const Synapse &s : entries)
        {
            dst.push_back(s.dst_local);
        }
        std::sort(dst.begin(), dst.end());
        std::int64_t runs = 0;
        for (std::size_t i = 0; i < dst.size(); ++i)
        {
            if (i == 0 || dst[i] != dst[i - 1] + 1)
            {
                ++runs;
            }
        }
        return model.runlength_per_entry * static_cast<std::int64_t>(entries.size()) +
                model.runlength_per_run * runs;
    }
    }
    return 0;
}

Compression select_scheme(std::span<const Synapse> entries, const SynapseCostModel &model)
{
    Compression best = Compression::sparse;
    std::int64_t best_cost = encoding_cost(entries, Compression::sparse, model);
    for (const Compression c : {Compression::dense, Compression::runlength})
    {
        const std::int64_t cost = encoding_cost(entries, c, model);
        if (cost < best_cost)
        {
            best = c;
            best_cost = cost;
        }
    }
    return best;
}

PairTally tally(const Partition &pre, const Partition &post, const GroupSet &groups,
        const SynapseCostModel &cost_model, const ChipMap &pre_chips, const ChipMap &post_chips)
{
    PairTally t;
    t.pre_output_axons.assign(static_cast<std::size_t>(pre.core_count()), 0);
    t.pre_offchip_axons.assign(static_cast<std::size_t>(pre.core_count()), 0);
    t.post_input_axons.assign(static_cast<std::size_t>(post.core_count()), 0);
    t.post_synapse_units.assign(static_cast<std::size_t>(post.core_count()), 0);

    const bool chips_known = !pre_chips.empty() && !post_chips.empty();
    for (const PopulationAxon &a : groups.axons)
    {
        const auto src = static_cast<std::size_t>(a.src_core);
        const bool offchip = chips_known &&
                pre_chips[src] != post_chips[static_cast<std::size_t>(a.dst_core)];
        t.pre_output_axons[src] += offchip ? 2 : 1;
        t.pre_offchip_axons[src] += offchip ? 1 : 0;
        t.post_input_axons[static_cast<std::size_t>(a.dst_core)] += 1;
    }

    for (std::size_t c = 0; c < groups.stores.size(); ++c)
    {
        const CoreSynapseStore &store = groups.stores[c];
        if (groups.sharing == SharingMode::full)
        {
            std::vector<std::int32_t> ids;
            for (const SynapseList &l : store.lists)
            {
                for (const Synapse &s : l.entries)
                {
                    ids.push_back(s.weight_id);
                }
            }
            std::sort(ids.begin(), ids.end());
            t.post_synapse_units[c] = static_cast<std::int64_t>(
                    std::unique(ids.begin(), ids.end()) - ids.begin());
            continue;
        }
        std::int64_t units = 0;
        for (const SynapseList &l : store.lists)
        {
            units += encoding_cost(l.entries, cost_model.scheme, cost_model);
        }
        t.post_synapse_units[c] = units;
    }
    return t;
}

ResourceTally assemble_layer_tally(const LayerSpec &layer, const Partition &partition,
        const PairTally *incoming, const PairTally *outgoing)
{
    ResourceTally result;
    result.cores.resize(static_cast<std::size_t>(partition.core_count()));
    const bool soft = layer.neuron.reset == ResetMode::soft;
    for (std::size_t c = 0; c < result.cores.size(); ++c)
    {
        CoreUsage &u = result.cores[c];
        const std::int64_t neurons = partition.boxes()[c].size();
        u.neurons = soft ? 2 * neurons : neurons;
        if (incoming != nullptr)
        {
            u.input_axons = incoming->post_input_axons[c];
            u.synapse_units = incoming->post_synapse_units[c];
        }
        else
        {
            u.input_axons = neurons;
        }
        if (outgoing != nullptr)
        {
            u.output_axons = outgoing->pre_output_axons[c];
            u.offchip_axons = outgoing->pre_offchip_axons[c];
        }
        else
        {
            u.output_axons = neurons;
        }
        if (soft)
        {
            u.input_axons += neurons;
            u.synapse_units += neurons;
        }
    }
    return result;
}

} // namespace nf
