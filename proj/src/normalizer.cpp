#include "nf/normalizer.hpp"

#include <algorithm>
#include <cmath>

#include "nf/dense_math.hpp"
#include "nf/error.hpp"

namespace nf {

std::int64_t QuantizationConfig::representable_max() const
{
    return mantissa_max() * (std::int64_t{1} << std::max(exponent_max, 0));
}

void validate(const QuantizationConfig &cfg)
{
    if (cfg.weight_bits < 2 || cfg.weight_bits > 32 || cfg.bias_bits < 2 || cfg.bias_bits > 32 ||
            cfg.mantissa_bits < 2 || cfg.mantissa_bits > 32)
    {
        throw Error(ErrorKind::usage, "bit widths must lie in [2, 32]");
    }
    if (!(cfg.percentile > 0.0 && cfg.percentile <= 100.0))
    {
        throw Error(ErrorKind::usage, "percentile must lie in (0, 100]");
    }
    if (cfg.exponent_min > cfg.exponent_max || cfg.exponent_max > 30)
    {
        throw Error(ErrorKind::usage, "bad exponent range");
    }
}

double percentile(std::vector<double> values, double p)
{
    if (values.empty())
    {
        throw Error(ErrorKind::empty_calibration, "percentile of an empty set");
    }
    const double rank = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double a = values[lo];
    if (hi == lo)
    {
        return a;
    }
    const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(hi), values.end());
    return a + (b - a) * (rank - static_cast<double>(lo));
}

std::int64_t round_half_away(double v)
{
    return static_cast<std::int64_t>(std::llround(v));
}

QuantizedWeights quantize_weights(std::span<const float> w, const QuantizationConfig &cfg)
{
    validate(cfg);
    if (w.empty())
    {
        throw Error(ErrorKind::degenerate_weights, "empty weight array");
    }
    std::vector<double> magnitudes;
    magnitudes.reserve(w.size());
    for (const float v : w)
    {
        magnitudes.push_back(std::fabs(static_cast<double>(v)));
    }
    QuantizedWeights out;
    out.sigma = percentile(std::move(magnitudes), cfg.percentile);
    if (!(out.sigma > 0.0) || !std::isfinite(out.sigma))
    {
        throw Error(ErrorKind::degenerate_weights, "weight scale is zero or not finite");
    }
    const double scale = static_cast<double>(std::max(-cfg.weight_min(), cfg.weight_max()));
    out.values.reserve(w.size());
    for (const float v : w)
    {
        const std::int64_t q = round_half_away(static_cast<double>(v) / out.sigma * scale);
        out.values.push_back(std::clamp(q, cfg.weight_min(), cfg.weight_max()));
    }
    return out;
}

QuantizedWeight decompose(std::int64_t w, const QuantizationConfig &cfg)
{
    const std::int64_t limit = cfg.representable_max();
    if (w > limit || w < -limit)
    {
        throw Error(ErrorKind::range, std::to_string(w) + " exceeds the representable range +-" +
                        std::to_string(limit));
    }
    const int e_lo = std::max(cfg.exponent_min, 0);
    const int e_hi = std::max(cfg.exponent_max, 0);
    const std::int64_t m_max = cfg.mantissa_max();
    for (int e = e_lo; e <= e_hi; ++e)
    {
        const std::int64_t step = std::int64_t{1} << e;
        if (w % step == 0 && std::abs(w / step) <= m_max)
        {
            return {w / step, w == 0 ? e_lo : e};
        }
    }
    for (int e = e_lo; e <= e_hi; ++e)
    {
        const std::int64_t m = round_half_away(static_cast<double>(w) / static_cast<double>(std::int64_t{1} << e));
        if (std::abs(m) <= m_max)
        {
            return {m, e};
        }
    }
    throw Error(ErrorKind::range, std::to_string(w) + " has no mantissa/exponent form");
}

std::int64_t encode_input(float x, std::int64_t threshold)
{
    const std::int64_t v = round_half_away(static_cast<double>(x) * static_cast<double>(threshold));
    return std::clamp<std::int64_t>(v, 0, threshold);
}

std::vector<std::int64_t> encode_frame(std::span<const float> frame, std::int64_t threshold)
{
    std::vector<std::int64_t> out;
    out.reserve(frame.size());
    for (const float x : frame)
    {
        out.push_back(encode_input(x, threshold));
    }
    return out;
}

namespace {

std::vector<double> input_drive(const LayerSpec &input, std::span<const float> sample)
{
    if (static_cast<std::int64_t>(sample.size()) != input.output_shape.size())
    {
        throw Error(ErrorKind::shape, "sample has " + std::to_string(sample.size()) + " values, input layer has " +
                        std::to_string(input.output_shape.size()) + " neurons");
    }
    std::vector<double> drive;
    drive.reserve(sample.size());
    for (const float x : sample)
    {
        drive.push_back(static_cast<double>(input.neuron.bias + encode_input(x, input.neuron.threshold)));
    }
    return drive;
}

std::vector<double> rates_of(std::span<const double> drive, std::int64_t threshold)
{
    const auto tau = static_cast<double>(threshold);
    std::vector<double> rates(drive.size());
    for (std::size_t i = 0; i < drive.size(); ++i)
    {
        rates[i] = std::clamp(drive[i], 0.0, tau) / tau;
    }
    return rates;
}

std::vector<double> layer_drive(const SnnLayer &layer, const Shape &in, std::span<const double> rates)
{
    std::vector<double> du(static_cast<std::size_t>(layer.spec.output_shape.size()),
            static_cast<double>(layer.spec.neuron.bias));
    accumulate_layer<double, std::int64_t>(layer.spec, in, layer.weights, rates, du);
    return du;
}

std::int64_t sample_count(const NetworkSpec &lowered, std::span<const float> batch)
{
    const std::int64_t n_in = lowered.layers.front().output_shape.size();
    if (batch.empty())
    {
        throw Error(ErrorKind::empty_calibration, "calibration batch is empty");
    }
    if (static_cast<std::int64_t>(batch.size()) % n_in != 0)
    {
        throw Error(ErrorKind::shape, "calibration batch size " + std::to_string(batch.size()) +
                        " is not a multiple of the input size " + std::to_string(n_in));
    }
    return static_cast<std::int64_t>(batch.size()) / n_in;
}

SnnNetwork skeleton(const NetworkSpec &lowered)
{
    validate(lowered);
    SnnNetwork net;
    net.name = lowered.name;
    net.timesteps = lowered.timesteps;
    for (const LayerSpec &l : lowered.layers)
    {
        if (l.kind == LayerKind::flatten || l.kind == LayerKind::average_pool2d)
        {
            throw Error(ErrorKind::unsupported_kind, "layer '" + l.id + "' must be lowered before quantization");
        }
        SnnLayer s;
        s.spec = l;
        s.spec.weights.clear();
        net.layers.push_back(std::move(s));
    }
    return net;
}

} // namespace

std::vector<std::vector<double>> emulate_drive(const SnnNetwork &net, std::span<const float> sample)
{
    std::vector<std::vector<double>> drives;
    drives.push_back(input_drive(net.layers.front().spec, sample));
    for (std::size_t l = 1; l < net.layers.size(); ++l)
    {
        const LayerSpec &prev = net.layers[l - 1].spec;
        const std::vector<double> rates = rates_of(drives.back(), prev.neuron.threshold);
        drives.push_back(layer_drive(net.layers[l], prev.output_shape, rates));
    }
    return drives;
}

SnnNetwork quantize_network(const NetworkSpec &lowered, const QuantizationConfig &cfg)
{
    SnnNetwork net = skeleton(lowered);
    for (std::size_t l = 1; l < net.layers.size(); ++l)
    {
        net.layers[l].weights = quantize_weights(lowered.layers[l].weights, cfg).values;
        net.layers[l].spec.neuron.bias =
                std::clamp(lowered.layers[l].neuron.bias, cfg.bias_min(), cfg.bias_max());
    }
    validate(net);
    return net;
}

Calibration calibrate_dynamic_range(const NetworkSpec &lowered, std::span<const float> batch,
        const QuantizationConfig &cfg)
{
    validate(cfg);
    Calibration result;
    result.network = skeleton(lowered);
    SnnNetwork &net = result.network;
    const std::int64_t n_samples = sample_count(lowered, batch);
    const auto n_in = static_cast<std::size_t>(lowered.layers.front().output_shape.size());

    // Rates of the previous layer for every sample, updated as layers are fixed.
    std::vector<std::vector<double>> rates(static_cast<std::size_t>(n_samples));
    for (std::int64_t s = 0; s < n_samples; ++s)
    {
        const auto sample = batch.subspan(static_cast<std::size_t>(s) * n_in, n_in);
        rates[static_cast<std::size_t>(s)] =
                rates_of(input_drive(net.layers.front().spec, sample), net.layers.front().spec.neuron.threshold);
    }

    for (std::size_t l = 1; l < net.layers.size(); ++l)
    {
        SnnLayer &layer = net.layers[l];
        const Shape &in = net.layers[l - 1].spec.output_shape;
        const QuantizedWeights q = quantize_weights(lowered.layers[l].weights, cfg);
        layer.weights = q.values;
        layer.spec.neuron.bias = std::clamp(layer.spec.neuron.bias, cfg.bias_min(), cfg.bias_max());

        std::vector<double> observed;
        observed.reserve(static_cast<std::size_t>(n_samples * layer.spec.output_shape.size()));
        for (const auto &r : rates)
        {
            const std::vector<double> du = layer_drive(layer, in, r);
            observed.insert(observed.end(), du.begin(), du.end());
        }
        const double lambda = percentile(std::move(observed), cfg.percentile);
        if (!(lambda > 0.0))
        {
            throw Error(ErrorKind::dead_layer, "layer '" + layer.spec.id + "' has no positive drive");
        }
        const std::int64_t tau = layer.spec.neuron.threshold;
        const double scale = static_cast<double>(tau) / lambda;
        const std::int64_t w_lim = cfg.representable_max();
        for (std::int64_t &w : layer.weights)
        {
            const std::int64_t scaled = std::clamp(round_half_away(static_cast<double>(w) * scale), -w_lim, w_lim);
            w = decompose(scaled, cfg).value();
        }
        layer.spec.neuron.bias = std::clamp(round_half_away(static_cast<double>(layer.spec.neuron.bias) * scale),
                cfg.bias_min(), cfg.bias_max());
        result.scales.push_back({layer.spec.id, q.sigma, lambda, tau});

        for (auto &r : rates)
        {
            r = rates_of(layer_drive(layer, in, r), tau);
        }
    }
    validate(net);
    return result;
}

} // namespace nf
