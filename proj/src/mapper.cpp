#include "nf/mapper.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "nf/error.hpp"
#include "nf/partitioner.hpp"

namespace nf {

using nlohmann::json;

std::vector<ChipMap> Placement::chip_maps() const
{
    std::vector<ChipMap> maps;
    maps.reserve(cores.size());
    for (const auto &layer : cores)
    {
        ChipMap m;
        m.reserve(layer.size());
        for (const CoreRef &r : layer)
        {
            m.push_back(r.chip);
        }
        maps.push_back(std::move(m));
    }
    return maps;
}

Placement place(std::span<const Partition> partitions, std::int64_t chips, const CoreConstraints &constraints)
{
    if (chips < 1)
    {
        throw Error(ErrorKind::usage, "chip count must be at least 1");
    }
    std::int64_t total = 0;
    for (const Partition &p : partitions)
    {
        total += p.core_count();
    }
    const std::int64_t capacity = chips * constraints.cores_per_chip;
    if (total > capacity)
    {
        throw Error(ErrorKind::capacity, std::to_string(total) + " cores do not fit on " +
                        std::to_string(chips) + " chip(s) of " +
                        std::to_string(constraints.cores_per_chip) + " cores");
    }
    Placement placement;
    std::int64_t next = 0;
    for (const Partition &p : partitions)
    {
        std::vector<CoreRef> refs;
        for (std::int64_t c = 0; c < p.core_count(); ++c, ++next)
        {
            refs.push_back({static_cast<std::int32_t>(next / constraints.cores_per_chip),
                    static_cast<std::int32_t>(next % constraints.cores_per_chip)});
        }
        placement.cores.push_back(std::move(refs));
    }
    placement.chips_used = (next + constraints.cores_per_chip - 1) / constraints.cores_per_chip;
    return placement;
}

namespace {

bool strictly_increasing(std::span<const Synapse> entries)
{
    for (std::size_t i = 1; i < entries.size(); ++i)
    {
        if (entries[i].dst_local <= entries[i - 1].dst_local)
        {
            return false;
        }
    }
    return entries.empty() || entries.front().dst_local >= 0;
}

} // namespace

EncodedGroup encode_group(std::span<const Synapse> entries, Compression scheme, const SynapseCostModel &model)
{
    if (scheme == Compression::automatic)
    {
        scheme = select_scheme(entries, model);
    }
    EncodedGroup out;
    out.scheme = scheme;
    out.cost_units = encoding_cost(entries, scheme, model);
    if (scheme != Compression::sparse && !strictly_increasing(entries))
    {
        throw Error(ErrorKind::map, std::string(to_string(scheme)) + " encoding needs increasing destinations");
    }
    switch (scheme)
    {
    case Compression::sparse:
        for (const Synapse &s : entries)
        {
            out.payload.push_back(s.dst_local);
            out.payload.push_back(s.weight_id);
        }
        break;
    case Compression::dense:
        if (!entries.empty())
        {
            out.payload.assign(static_cast<std::size_t>(entries.back().dst_local + 1), -1);
            for (const Synapse &s : entries)
            {
                out.payload[static_cast<std::size_t>(s.dst_local)] = s.weight_id;
            }
        }
        break;
    case Compression::runlength:
        for (std::size_t i = 0; i < entries.size();)
        {
            std::size_t j = i + 1;
            while (j < entries.size() && entries[j].dst_local == entries[j - 1].dst_local + 1)
            {
                ++j;
            }
            out.payload.push_back(entries[i].dst_local);
            out.payload.push_back(static_cast<std::int32_t>(j - i));
            for (std::size_t k = i; k < j; ++k)
            {
                out.payload.push_back(entries[k].weight_id);
            }
            i = j;
        }
        break;
    case Compression::automatic: break;
    }
    return out;
}

std::vector<Synapse> decode_group(const EncodedGroup &group)
{
    std::vector<Synapse> out;
    const auto &p = group.payload;
    switch (group.scheme)
    {
    case Compression::sparse:
        if (p.size() % 2 != 0)
        {
            throw Error(ErrorKind::integrity, "sparse payload has odd length");
        }
        for (std::size_t i = 0; i < p.size(); i += 2)
        {
            out.push_back({p[i], p[i + 1]});
        }
        return out;
    case Compression::dense:
        for (std::size_t i = 0; i < p.size(); ++i)
        {
            if (p[i] >= 0)
            {
                out.push_back({static_cast<std::int32_t>(i), p[i]});
            }
        }
        return out;
    case Compression::runlength:
        for (std::size_t i = 0; i < p.size();)
        {
            if (i + 2 > p.size() || p[i + 1] < 1 || i + 2 + static_cast<std::size_t>(p[i + 1]) > p.size())
            {
                throw Error(ErrorKind::integrity, "truncated run-length payload");
            }
            const std::int32_t start = p[i];
            const auto len = static_cast<std::size_t>(p[i + 1]);
            for (std::size_t k = 0; k < len; ++k)
            {
                out.push_back({start + static_cast<std::int32_t>(k), p[i + 2 + k]});
            }
            i += 2 + len;
        }
        return out;
    case Compression::automatic: break;
    }
    throw Error(ErrorKind::integrity, "encoded list without a concrete scheme");
}

std::vector<Compartment> expand_soft_reset(std::span<const Compartment> somas, std::int64_t threshold,
        const CoreConstraints &constraints)
{
    if (static_cast<std::int64_t>(somas.size()) * 2 > constraints.max_neurons_per_core)
    {
        throw Error(ErrorKind::map, std::to_string(somas.size()) + " soft-reset neurons need " +
                        std::to_string(somas.size() * 2) + " compartments");
    }
    std::vector<Compartment> out;
    out.reserve(somas.size() * 2);
    for (const Compartment &c : somas)
    {
        out.push_back({CompartmentRole::soma, c.neuron, 0});
        out.push_back({CompartmentRole::reset, c.neuron, -threshold});
    }
    return out;
}

const CoreImage &DeploymentImage::core(const CoreRef &ref) const
{
    if (ref.chip < 0 || static_cast<std::size_t>(ref.chip) >= chips.size() || ref.index < 0 ||
            static_cast<std::size_t>(ref.index) >= chips[static_cast<std::size_t>(ref.chip)].cores.size())
    {
        throw Error(ErrorKind::integrity,
                "core reference (" + std::to_string(ref.chip) + ", " + std::to_string(ref.index) + ") is dangling");
    }
    return chips[static_cast<std::size_t>(ref.chip)].cores[static_cast<std::size_t>(ref.index)];
}

std::int64_t DeploymentImage::core_count() const
{
    std::int64_t n = 0;
    for (const ChipImage &c : chips)
    {
        n += static_cast<std::int64_t>(c.cores.size());
    }
    return n;
}

bool operator==(const LayerImage &a, const LayerImage &b)
{
    return layer_to_json(a.spec) == layer_to_json(b.spec) && a.grid == b.grid && a.cores == b.cores &&
            a.weights == b.weights;
}

bool operator==(const DeploymentImage &a, const DeploymentImage &b)
{
    return a.name == b.name && a.timesteps == b.timesteps && a.cores_per_chip == b.cores_per_chip &&
            a.sharing == b.sharing && a.compression == b.compression && a.layers == b.layers &&
            a.chips == b.chips;
}

Partition layer_partition(const DeploymentImage &image, std::size_t layer)
{
    const LayerImage &l = image.layers.at(layer);
    try
    {
        return Partition(l.spec.id, l.spec.output_shape, l.grid);
    }
    catch (const Error &e)
    {
        throw Error(ErrorKind::integrity, std::string("layer '") + l.spec.id + "': " + e.what());
    }
}

DeploymentImage build_image(const SnnNetwork &net, std::span<const Partition> partitions, const MapOptions &options)
{
    validate(net);
    if (options.sharing == SharingMode::full)
    {
        throw Error(ErrorKind::usage, "full sharing is an accounting bound and cannot be mapped");
    }
    const std::size_t n = net.layers.size();
    if (partitions.size() != n)
    {
        throw Error(ErrorKind::map, "partition chain does not match the network");
    }
    for (std::size_t l = 0; l < n; ++l)
    {
        if (partitions[l].shape() != net.layers[l].spec.output_shape)
        {
            throw Error(ErrorKind::map, "partition of layer '" + net.layers[l].spec.id + "' has the wrong shape");
        }
    }
    const Placement placement = place(partitions, options.chips, options.constraints);

    DeploymentImage image;
    image.name = net.name;
    image.timesteps = net.timesteps;
    image.cores_per_chip = options.constraints.cores_per_chip;
    image.sharing = options.sharing;
    image.compression = options.cost_model.scheme;
    image.chips.resize(static_cast<std::size_t>(placement.chips_used));
    for (std::size_t l = 0; l < n; ++l)
    {
        LayerImage li;
        li.spec = net.layers[l].spec;
        li.spec.weights.clear();
        li.spec.weight_ref.reset();
        li.grid = partitions[l].grid();
        li.cores = placement.cores[l];
        li.weights = net.layers[l].weights;
        image.layers.push_back(std::move(li));
        for (std::size_t k = 0; k < placement.cores[l].size(); ++k)
        {
            auto &chip = image.chips[static_cast<std::size_t>(placement.cores[l][k].chip)].cores;
            chip.resize(std::max(chip.size(), static_cast<std::size_t>(placement.cores[l][k].index) + 1));
        }
    }
    auto core_at = [&](std::size_t l, std::size_t k) -> CoreImage & {
        const CoreRef &r = placement.cores[l][k];
        return image.chips[static_cast<std::size_t>(r.chip)].cores[static_cast<std::size_t>(r.index)];
    };

    // Compartments and injection axons.
    for (std::size_t l = 0; l < n; ++l)
    {
        const LayerSpec &spec = net.layers[l].spec;
        for (std::size_t k = 0; k < placement.cores[l].size(); ++k)
        {
            CoreImage &core = core_at(l, k);
            core.layer = static_cast<std::int32_t>(l);
            core.part = static_cast<std::int32_t>(k);
            const auto box = static_cast<std::int32_t>(partitions[l].boxes()[k].size());
            std::vector<Compartment> somas;
            for (std::int32_t local = 0; local < box; ++local)
            {
                somas.push_back({CompartmentRole::soma, partitions[l].global_index(static_cast<std::int32_t>(k), local), 0});
            }
            core.compartments = spec.neuron.reset == ResetMode::soft
                    ? expand_soft_reset(somas, spec.neuron.threshold, options.constraints)
                    : std::move(somas);
            if (l == 0)
            {
                for (std::int32_t local = 0; local < box; ++local)
                {
                    core.input_axons.push_back({InputAxonKind::injection, local, 0});
                }
            }
        }
    }

    // Routed connectivity between consecutive layers.
    for (std::size_t l = 0; l + 1 < n; ++l)
    {
        const ConnectionPair pair = unroll(net.layers[l].spec, net.layers[l + 1].spec);
        GroupSet groups = build_groups(pair, partitions[l], partitions[l + 1], options.sharing);
        for (std::size_t d = 0; d < groups.stores.size(); ++d)
        {
            CoreImage &dst = core_at(l + 1, d);
            for (const SynapseList &list : groups.stores[d].lists)
            {
                dst.lists.push_back(encode_group(list.entries, options.cost_model.scheme, options.cost_model));
            }
            for (const SynapseGroup &g : groups.stores[d].groups)
            {
                dst.groups.push_back(g.slots);
            }
        }
        for (const PopulationAxon &a : groups.axons)
        {
            CoreImage &dst = core_at(l + 1, static_cast<std::size_t>(a.dst_core));
            const auto dst_axon = static_cast<std::int32_t>(dst.input_axons.size());
            dst.input_axons.push_back({InputAxonKind::synaptic, a.group, a.dst_base});
            const CoreRef &ref = placement.cores[l + 1][static_cast<std::size_t>(a.dst_core)];
            core_at(l, static_cast<std::size_t>(a.src_core))
                    .output_axons.push_back({OutputAxonKind::route, a.first, a.count, ref.chip, ref.index, dst_axon});
        }
    }

    // Readout and soft-reset recurrence.
    for (std::size_t l = 0; l < n; ++l)
    {
        const bool soft = net.layers[l].spec.neuron.reset == ResetMode::soft;
        for (std::size_t k = 0; k < placement.cores[l].size(); ++k)
        {
            CoreImage &core = core_at(l, k);
            const auto box = static_cast<std::int32_t>(partitions[l].boxes()[k].size());
            for (std::int32_t local = 0; soft && local < box; ++local)
            {
                core.input_axons.push_back({InputAxonKind::recurrent, local, 0});
            }
            for (std::int32_t local = 0; l + 1 == n && local < box; ++local)
            {
                core.output_axons.push_back({OutputAxonKind::readout, local, 1, -1, -1, -1});
            }
        }
    }

    verify_image(image);
    const std::vector<ResourceTally> tallies = tally_image(image);
    for (std::size_t l = 0; l < n; ++l)
    {
        const HardCheck check = check_hard(tallies[l], options.constraints);
        if (!check.ok())
        {
            throw Error(ErrorKind::capacity, "layer '" + net.layers[l].spec.id + "' core " +
                            std::to_string(check.core) + " needs " + std::to_string(check.value) + " " +
                            to_string(check.violation) + " (limit " + std::to_string(check.limit) +
                            ") after placement");
        }
    }
    return image;
}

std::vector<ResourceTally> tally_image(const DeploymentImage &image)
{
    std::vector<ResourceTally> out;
    for (const LayerImage &layer : image.layers)
    {
        ResourceTally t;
        for (const CoreRef &ref : layer.cores)
        {
            const CoreImage &core = image.core(ref);
            CoreUsage u;
            u.neurons = static_cast<std::int64_t>(core.compartments.size());
            u.input_axons = static_cast<std::int64_t>(core.input_axons.size());
            for (const EncodedGroup &g : core.lists)
            {
                u.synapse_units += g.cost_units;
            }
            for (const InputAxon &a : core.input_axons)
            {
                u.synapse_units += a.kind == InputAxonKind::recurrent ? 1 : 0;
            }
            for (const OutputAxon &a : core.output_axons)
            {
                const bool offchip = a.kind == OutputAxonKind::route && a.dst_chip != ref.chip;
                u.output_axons += offchip ? 2 : 1;
                u.offchip_axons += offchip ? 1 : 0;
            }
            t.cores.push_back(u);
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<std::vector<ExpandedSynapse>> expand_connections(const DeploymentImage &image)
{
    std::vector<std::vector<ExpandedSynapse>> out;
    for (std::size_t l = 0; l + 1 < image.layers.size(); ++l)
    {
        const Partition pre = layer_partition(image, l);
        const Partition post = layer_partition(image, l + 1);
        std::vector<ExpandedSynapse> synapses;
        for (std::size_t k = 0; k < image.layers[l].cores.size(); ++k)
        {
            const CoreImage &src = image.core(image.layers[l].cores[k]);
            for (const OutputAxon &a : src.output_axons)
            {
                if (a.kind != OutputAxonKind::route)
                {
                    continue;
                }
                const CoreImage &dst = image.core({a.dst_chip, a.dst_core});
                const InputAxon &in = dst.input_axons.at(static_cast<std::size_t>(a.dst_axon));
                const auto &slots = dst.groups.at(static_cast<std::size_t>(in.a));
                for (std::int32_t m = 0; m < a.count; ++m)
                {
                    const GroupSlot &slot = slots.at(static_cast<std::size_t>(m));
                    const std::int64_t p = pre.global_index(static_cast<std::int32_t>(k), a.first + m);
                    for (const Synapse &s : decode_group(dst.lists.at(static_cast<std::size_t>(slot.list))))
                    {
                        const std::int32_t local = in.b + slot.offset + s.dst_local;
                        synapses.push_back({p, post.global_index(dst.part, local), s.weight_id});
                    }
                }
            }
        }
        std::sort(synapses.begin(), synapses.end());
        out.push_back(std::move(synapses));
    }
    return out;
}

namespace {

[[noreturn]] void dangling(const std::string &what)
{
    throw Error(ErrorKind::integrity, what);
}

} // namespace

void verify_image(const DeploymentImage &image)
{
    std::set<CoreRef> owned;
    for (std::size_t c = 0; c < image.chips.size(); ++c)
    {
        if (static_cast<std::int64_t>(image.chips[c].cores.size()) > image.cores_per_chip)
        {
            dangling("chip " + std::to_string(c) + " holds more than " + std::to_string(image.cores_per_chip) + " cores");
        }
    }
    const std::size_t n = image.layers.size();
    for (std::size_t l = 0; l < n; ++l)
    {
        const LayerImage &layer = image.layers[l];
        const Partition part = layer_partition(image, l);
        if (static_cast<std::int64_t>(layer.cores.size()) != part.core_count())
        {
            dangling("layer '" + layer.spec.id + "' core list does not match its grid");
        }
        const bool soft = layer.spec.neuron.reset == ResetMode::soft;
        for (std::size_t k = 0; k < layer.cores.size(); ++k)
        {
            const CoreRef &ref = layer.cores[k];
            const CoreImage &core = image.core(ref);
            if (!owned.insert(ref).second || core.layer != static_cast<std::int32_t>(l) ||
                    core.part != static_cast<std::int32_t>(k))
            {
                dangling("core (" + std::to_string(ref.chip) + ", " + std::to_string(ref.index) +
                        ") is not owned by layer '" + layer.spec.id + "'");
            }
            const std::int64_t box = part.boxes()[k].size();
            if (static_cast<std::int64_t>(core.compartments.size()) != box * (soft ? 2 : 1))
            {
                dangling("compartment table of layer '" + layer.spec.id + "' has the wrong size");
            }
            for (const Compartment &c : core.compartments)
            {
                if (c.neuron < 0 || c.neuron >= layer.spec.output_shape.size())
                {
                    dangling("compartment neuron out of range");
                }
            }
            // Destination range of every stored list.
            std::vector<std::pair<std::int64_t, std::int64_t>> extent;
            for (const EncodedGroup &g : core.lists)
            {
                const std::vector<Synapse> entries = decode_group(g);
                std::int64_t lo = 0;
                std::int64_t hi = -1;
                for (const Synapse &s : entries)
                {
                    lo = std::min<std::int64_t>(lo, s.dst_local);
                    hi = std::max<std::int64_t>(hi, s.dst_local);
                }
                extent.emplace_back(lo, hi);
                if (encoding_cost(entries, g.scheme) != g.cost_units)
                {
                    dangling("stored list cost does not match its encoding");
                }
                for (const Synapse &s : entries)
                {
                    if (s.weight_id < 0 || static_cast<std::size_t>(s.weight_id) >= layer.weights.size())
                    {
                        dangling("weight id out of range in layer '" + layer.spec.id + "'");
                    }
                }
            }
            for (const auto &slots : core.groups)
            {
                for (const GroupSlot &s : slots)
                {
                    if (s.list < 0 || static_cast<std::size_t>(s.list) >= core.lists.size())
                    {
                        dangling("group slot references a missing list");
                    }
                }
            }
            for (const InputAxon &a : core.input_axons)
            {
                if (a.kind == InputAxonKind::synaptic)
                {
                    if (l == 0 || a.a < 0 || static_cast<std::size_t>(a.a) >= core.groups.size())
                    {
                        dangling("input axon references a missing group");
                    }
                    for (const GroupSlot &s : core.groups[static_cast<std::size_t>(a.a)])
                    {
                        const auto [lo, hi] = extent[static_cast<std::size_t>(s.list)];
                        const std::int64_t shift = std::int64_t{a.b} + s.offset;
                        if (hi >= 0 && (shift + lo < 0 || shift + hi >= box))
                        {
                            dangling("synapse destination outside its core");
                        }
                    }
                }
                else if (a.a < 0 || a.a >= box || (a.kind == InputAxonKind::injection && l != 0) ||
                        (a.kind == InputAxonKind::recurrent && !soft))
                {
                    dangling("input axon target out of range");
                }
            }
            for (const OutputAxon &a : core.output_axons)
            {
                if (a.first < 0 || a.count < 1 || std::int64_t{a.first} + a.count > box)
                {
                    dangling("output axon source range out of range");
                }
                if (a.kind == OutputAxonKind::readout)
                {
                    if (l + 1 != n)
                    {
                        dangling("readout axon on a hidden layer");
                    }
                    continue;
                }
                if (l + 1 == n)
                {
                    dangling("route axon leaves the output layer");
                }
                const CoreImage &dst = image.core({a.dst_chip, a.dst_core});
                if (dst.layer != static_cast<std::int32_t>(l + 1) || a.dst_axon < 0 ||
                        static_cast<std::size_t>(a.dst_axon) >= dst.input_axons.size())
                {
                    dangling("output axon target is dangling");
                }
                const InputAxon &in = dst.input_axons[static_cast<std::size_t>(a.dst_axon)];
                if (in.kind != InputAxonKind::synaptic || in.a < 0 ||
                        static_cast<std::size_t>(in.a) >= dst.groups.size() ||
                        static_cast<std::int64_t>(dst.groups[static_cast<std::size_t>(in.a)].size()) != a.count)
                {
                    dangling("output axon population does not match its group");
                }
            }
        }
    }
    if (static_cast<std::int64_t>(owned.size()) != image.core_count())
    {
        dangling("image holds cores that belong to no layer");
    }
}

std::string base64_encode_i32(std::span<const std::int32_t> values)
{
    const auto *bytes = reinterpret_cast<const unsigned char *>(values.data());
    const std::size_t n = values.size() * sizeof(std::int32_t);
    std::string out(4 * ((n + 2) / 3), '\0');
    const int written = EVP_EncodeBlock(reinterpret_cast<unsigned char *>(out.data()), bytes, static_cast<int>(n));
    out.resize(static_cast<std::size_t>(written));
    return out;
}

std::vector<std::int32_t> base64_decode_i32(const std::string &text)
{
    if (text.size() % 4 != 0)
    {
        throw Error(ErrorKind::integrity, "base64 block has bad length");
    }
    std::vector<unsigned char> bytes(text.size() / 4 * 3);
    const int n = EVP_DecodeBlock(bytes.data(), reinterpret_cast<const unsigned char *>(text.data()),
            static_cast<int>(text.size()));
    if (n < 0)
    {
        throw Error(ErrorKind::integrity, "malformed base64 block");
    }
    std::size_t len = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the bytes that stand for '=' padding.
    for (std::size_t i = text.size(); i > 0 && text[i - 1] == '='; --i)
    {
        --len;
    }
    if (len % sizeof(std::int32_t) != 0)
    {
        throw Error(ErrorKind::integrity, "base64 block is not a whole number of int32 values");
    }
    std::vector<std::int32_t> out(len / sizeof(std::int32_t));
    std::copy_n(bytes.data(), len, reinterpret_cast<unsigned char *>(out.data()));
    return out;
}

namespace {

template <typename T, typename Fn>
std::string pack(const std::vector<T> &rows, Fn &&fields)
{
    std::vector<std::int32_t> flat;
    for (const T &r : rows)
    {
        for (const std::int64_t v : fields(r))
        {
            flat.push_back(static_cast<std::int32_t>(v));
        }
    }
    return base64_encode_i32(flat);
}

std::vector<std::int32_t> unpack(const json &j, std::size_t width, const char *what)
{
    std::vector<std::int32_t> flat = base64_decode_i32(j.get<std::string>());
    if (flat.size() % width != 0)
    {
        throw Error(ErrorKind::integrity, std::string(what) + " block has a partial row");
    }
    return flat;
}

json core_to_json(const CoreImage &core)
{
    json j;
    j["layer"] = core.layer;
    j["part"] = core.part;
    j["compartments"] = pack(core.compartments, [](const Compartment &c) {
        return std::vector<std::int64_t>{static_cast<std::int64_t>(c.role), c.neuron, c.recurrent_weight};
    });
    j["input_axons"] = pack(core.input_axons, [](const InputAxon &a) {
        return std::vector<std::int64_t>{static_cast<std::int64_t>(a.kind), a.a, a.b};
    });
    j["output_axons"] = pack(core.output_axons, [](const OutputAxon &a) {
        return std::vector<std::int64_t>{
                static_cast<std::int64_t>(a.kind), a.first, a.count, a.dst_chip, a.dst_core, a.dst_axon};
    });
    json lists = json::array();
    for (const EncodedGroup &g : core.lists)
    {
        lists.push_back({{"scheme", to_string(g.scheme)}, {"cost", g.cost_units}, {"payload", base64_encode_i32(g.payload)}});
    }
    j["lists"] = std::move(lists);
    json groups = json::array();
    for (const auto &slots : core.groups)
    {
        groups.push_back(pack(slots, [](const GroupSlot &s) { return std::vector<std::int64_t>{s.list, s.offset}; }));
    }
    j["groups"] = std::move(groups);
    return j;
}

CoreImage core_from_json(const json &j)
{
    CoreImage core;
    core.layer = j.at("layer").get<std::int32_t>();
    core.part = j.at("part").get<std::int32_t>();
    const auto comp = unpack(j.at("compartments"), 3, "compartment");
    for (std::size_t i = 0; i < comp.size(); i += 3)
    {
        if (comp[i] != 0 && comp[i] != 1)
        {
            throw Error(ErrorKind::integrity, "unknown compartment role");
        }
        core.compartments.push_back({static_cast<CompartmentRole>(comp[i]), comp[i + 1], comp[i + 2]});
    }
    const auto in = unpack(j.at("input_axons"), 3, "input axon");
    for (std::size_t i = 0; i < in.size(); i += 3)
    {
        if (in[i] < 0 || in[i] > 2)
        {
            throw Error(ErrorKind::integrity, "unknown input axon kind");
        }
        core.input_axons.push_back({static_cast<InputAxonKind>(in[i]), in[i + 1], in[i + 2]});
    }
    const auto out = unpack(j.at("output_axons"), 6, "output axon");
    for (std::size_t i = 0; i < out.size(); i += 6)
    {
        if (out[i] != 0 && out[i] != 1)
        {
            throw Error(ErrorKind::integrity, "unknown output axon kind");
        }
        core.output_axons.push_back(
                {static_cast<OutputAxonKind>(out[i]), out[i + 1], out[i + 2], out[i + 3], out[i + 4], out[i + 5]});
    }
    for (const json &g : j.at("lists"))
    {
        EncodedGroup e;
        e.scheme = parse_compression(g.at("scheme").get<std::string>());
        if (e.scheme == Compression::automatic)
        {
            throw Error(ErrorKind::integrity, "stored list without a concrete scheme");
        }
        e.cost_units = g.at("cost").get<std::int64_t>();
        e.payload = base64_decode_i32(g.at("payload").get<std::string>());
        core.lists.push_back(std::move(e));
    }
    for (const json &g : j.at("groups"))
    {
        const auto flat = unpack(g, 2, "group");
        std::vector<GroupSlot> slots;
        for (std::size_t i = 0; i < flat.size(); i += 2)
        {
            slots.push_back({flat[i], flat[i + 1]});
        }
        core.groups.push_back(std::move(slots));
    }
    return core;
}

} // namespace

std::string emit(const DeploymentImage &image)
{
    verify_image(image);
    json j;
    j["format"] = kImageFormat;
    j["name"] = image.name;
    j["timesteps"] = image.timesteps;
    j["cores_per_chip"] = image.cores_per_chip;
    j["sharing"] = to_string(image.sharing);
    j["compression"] = to_string(image.compression);
    json layers = json::array();
    for (const LayerImage &l : image.layers)
    {
        json lj;
        lj["spec"] = layer_to_json(l.spec);
        lj["grid"] = {l.grid.ny, l.grid.nx, l.grid.nz};
        json refs = json::array();
        for (const CoreRef &r : l.cores)
        {
            refs.push_back({r.chip, r.index});
        }
        lj["cores"] = std::move(refs);
        std::vector<std::int32_t> w(l.weights.begin(), l.weights.end());
        lj["weights"] = base64_encode_i32(w);
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    json chips = json::array();
    for (std::size_t c = 0; c < image.chips.size(); ++c)
    {
        json cores = json::array();
        for (const CoreImage &core : image.chips[c].cores)
        {
            cores.push_back(core_to_json(core));
        }
        chips.push_back({{"id", c}, {"cores", std::move(cores)}});
    }
    j["chips"] = std::move(chips);
    return j.dump(1) + "\n";
}

DeploymentImage parse_image(const std::string &text)
{
    json j;
    try
    {
        j = json::parse(text);
    }
    catch (const json::exception &e)
    {
        throw Error(ErrorKind::parse, e.what());
    }
    if (!j.is_object() || !j.contains("format") || !j["format"].is_string())
    {
        throw Error(ErrorKind::version, "missing image format header");
    }
    if (j["format"].get<std::string>() != kImageFormat)
    {
        throw Error(ErrorKind::version, "image format '" + j["format"].get<std::string>() + "', expected " + kImageFormat);
    }
    DeploymentImage image;
    try
    {
        image.name = j.at("name").get<std::string>();
        image.timesteps = j.at("timesteps").get<std::int64_t>();
        image.cores_per_chip = j.at("cores_per_chip").get<std::int64_t>();
        image.sharing = parse_sharing(j.at("sharing").get<std::string>());
        image.compression = parse_compression(j.at("compression").get<std::string>());
        for (const json &lj : j.at("layers"))
        {
            LayerImage l;
            l.spec = layer_from_json(lj.at("spec"));
            const json &g = lj.at("grid");
            l.grid = {g.at(0).get<std::int64_t>(), g.at(1).get<std::int64_t>(), g.at(2).get<std::int64_t>()};
            for (const json &r : lj.at("cores"))
            {
                l.cores.push_back({r.at(0).get<std::int32_t>(), r.at(1).get<std::int32_t>()});
            }
            const auto w = base64_decode_i32(lj.at("weights").get<std::string>());
            l.weights.assign(w.begin(), w.end());
            image.layers.push_back(std::move(l));
        }
        for (const json &cj : j.at("chips"))
        {
            ChipImage chip;
            for (const json &core : cj.at("cores"))
            {
                chip.cores.push_back(core_from_json(core));
            }
            image.chips.push_back(std::move(chip));
        }
    }
    catch (const json::exception &e)
    {
        throw Error(ErrorKind::parse, e.what());
    }
    catch (const Error &e)
    {
        if (e.kind() == ErrorKind::usage)
        {
            throw Error(ErrorKind::parse, e.what());
        }
        throw;
    }
    verify_image(image);
    return image;
}

void write_image(const DeploymentImage &image, const std::filesystem::path &path)
{
    const std::string text = emit(image);
    std::ofstream out(path, std::ios::binary);
    if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size())))
    {
        throw Error(ErrorKind::io, "cannot write " + path.string());
    }
}

DeploymentImage load_image(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw Error(ErrorKind::io, "cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_image(buf.str());
}

} // namespace nf
