#pragma once

// Direct (non-unrolled) evaluation of a layer's weighted sum, shared by the
// normalizer emulation and the reference simulator.

#include <span>

#include "nf/error.hpp"
#include "nf/model_ir.hpp"

namespace nf {

/// out[q] += sum_p w(p, q) * pre[p] for the connection into `post`.
template <typename T, typename W>
void accumulate_layer(const LayerSpec &post, const Shape &in, std::span<const W> weights,
        std::span<const T> pre, std::span<T> out)
{
    if (post.kind == LayerKind::dense)
    {
        const std::int64_t n_in = in.size();
        const std::int64_t n_out = post.output_shape.size();
        for (std::int64_t p = 0; p < n_in; ++p)
        {
            const T x = pre[static_cast<std::size_t>(p)];
            if (x == T{})
            {
                continue;
            }
            const W *row = weights.data() + p * n_out;
            for (std::int64_t q = 0; q < n_out; ++q)
            {
                out[static_cast<std::size_t>(q)] += static_cast<T>(row[q]) * x;
            }
        }
        return;
    }
    if (!kind_has_kernel(post.kind))
    {
        throw Error(ErrorKind::unsupported_kind,
                std::string(to_string(post.kind)) + " layer '" + post.id + "' has no weighted input");
    }
    const ConvGeometry g = conv_geometry(in, post);
    for (std::int64_t oy = 0; oy < g.out.height; ++oy)
    {
        for (std::int64_t ox = 0; ox < g.out.width; ++ox)
        {
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
                    for (std::int64_t co = 0; co < g.out.channels; ++co)
                    {
                        T &acc = out[static_cast<std::size_t>(neuron_index(g.out, oy, ox, co))];
                        if (g.depthwise)
                        {
                            acc += static_cast<T>(weights[static_cast<std::size_t>(
                                           conv_weight_id(g, ky, kx, co, co))]) *
                                    pre[static_cast<std::size_t>(neuron_index(g.in, iy, ix, co))];
                            continue;
                        }
                        for (std::int64_t ci = 0; ci < g.in.channels; ++ci)
                        {
                            acc += static_cast<T>(weights[static_cast<std::size_t>(
                                           conv_weight_id(g, ky, kx, ci, co))]) *
                                    pre[static_cast<std::size_t>(neuron_index(g.in, iy, ix, ci))];
                        }
                    }
                }
            }
        }
    }
}

} // namespace nf
