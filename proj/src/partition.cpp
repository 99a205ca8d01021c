#include "nf/partition.hpp"

#include "nf/error.hpp"

namespace nf {

std::vector<std::int64_t> split_axis(std::int64_t n, std::int64_t k)
{
    if (k <= 0 || k > n)
    {
        throw Error(ErrorKind::partition,
                "cannot split extent " + std::to_string(n) + " into " + std::to_string(k));
    }
    std::vector<std::int64_t> cuts(static_cast<std::size_t>(k + 1));
    const std::int64_t base = n / k;
    const std::int64_t extra = n % k;
    cuts[0] = 0;
    for (std::int64_t i = 0; i < k; ++i)
    {
        cuts[i + 1] = cuts[i] + base + (i < extra ? 1 : 0);
    }
    return cuts;
}

namespace {

std::vector<std::int32_t> part_lookup(const std::vector<std::int64_t> &cuts)
{
    std::vector<std::int32_t> part(static_cast<std::size_t>(cuts.back()));
    for (std::size_t p = 0; p + 1 < cuts.size(); ++p)
    {
        for (std::int64_t i = cuts[p]; i < cuts[p + 1]; ++i)
        {
            part[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(p);
        }
    }
    return part;
}

} // namespace

Partition::Partition(std::string layer_id, const Shape &shape, const Grid &grid)
        : layer_id_(std::move(layer_id))
        , shape_(shape)
        , grid_(grid)
{
    const auto ys = split_axis(shape.height, grid.ny);
    const auto xs = split_axis(shape.width, grid.nx);
    const auto zs = split_axis(shape.channels, grid.nz);
    boxes_.reserve(static_cast<std::size_t>(grid.cores()));
    for (std::int64_t by = 0; by < grid.ny; ++by)
    {
        for (std::int64_t bx = 0; bx < grid.nx; ++bx)
        {
            for (std::int64_t bz = 0; bz < grid.nz; ++bz)
            {
                boxes_.push_back({ys[by], ys[by + 1], xs[bx], xs[bx + 1], zs[bz], zs[bz + 1]});
            }
        }
    }
    y_part_ = part_lookup(ys);
    x_part_ = part_lookup(xs);
    z_part_ = part_lookup(zs);
}

std::pair<std::int32_t, std::int32_t> Partition::locate(std::int64_t global) const
{
    const std::int64_t c = global % shape_.channels;
    const std::int64_t x = (global / shape_.channels) % shape_.width;
    const std::int64_t y = global / (shape_.channels * shape_.width);
    const std::int64_t by = y_part_[static_cast<std::size_t>(y)];
    const std::int64_t bx = x_part_[static_cast<std::size_t>(x)];
    const std::int64_t bz = z_part_[static_cast<std::size_t>(c)];
    const auto core = static_cast<std::int32_t>((by * grid_.nx + bx) * grid_.nz + bz);
    const Box &b = boxes_[static_cast<std::size_t>(core)];
    const auto local = static_cast<std::int32_t>(
            ((y - b.y0) * b.width() + (x - b.x0)) * b.depth() + (c - b.z0));
    return {core, local};
}

std::int64_t Partition::global_index(std::int32_t core, std::int32_t local) const
{
    const Box &b = boxes_[static_cast<std::size_t>(core)];
    const std::int64_t c = b.z0 + local % b.depth();
    const std::int64_t x = b.x0 + (local / b.depth()) % b.width();
    const std::int64_t y = b.y0 + local / (b.depth() * b.width());
    return neuron_index(shape_, y, x, c);
}

std::int64_t ResourceTally::n_syn() const
{
    std::int64_t total = 0;
    for (const CoreUsage &c : cores)
    {
        total += c.synapse_units;
    }
    return total;
}

std::int64_t ResourceTally::n_axons() const
{
    std::int64_t total = 0;
    for (const CoreUsage &c : cores)
    {
        total += c.input_axons + c.output_axons;
    }
    return total;
}

std::int64_t ResourceTally::n_offchip() const
{
    std::int64_t total = 0;
    for (const CoreUsage &c : cores)
    {
        total += c.offchip_axons;
    }
    return total;
}

std::int64_t ResourceTally::n_neurons() const
{
    std::int64_t total = 0;
    for (const CoreUsage &c : cores)
    {
        total += c.neurons;
    }
    return total;
}

} // namespace nf
