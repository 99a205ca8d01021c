#pragma once

// Float-to-integer parameter conversion: percentile weight normalization,
// per-layer dynamic-range calibration against an emulated rate network, and
// mantissa/exponent decomposition.

#include <cstdint>
#include <span>
#include <vector>

#include "nf/model_ir.hpp"

namespace nf {

struct QuantizationConfig
{
    int weight_bits = 8;
    int bias_bits = 13;
    /// In (0, 100].
    double percentile = 99.9;
    int mantissa_bits = 8;
    int exponent_min = -8;
    int exponent_max = 7;

    [[nodiscard]] std::int64_t weight_min() const { return -(std::int64_t{1} << (weight_bits - 1)); }
    [[nodiscard]] std::int64_t weight_max() const { return (std::int64_t{1} << (weight_bits - 1)) - 1; }
    [[nodiscard]] std::int64_t bias_min() const { return -(std::int64_t{1} << (bias_bits - 1)); }
    [[nodiscard]] std::int64_t bias_max() const { return (std::int64_t{1} << (bias_bits - 1)) - 1; }
    [[nodiscard]] std::int64_t mantissa_max() const { return (std::int64_t{1} << (mantissa_bits - 1)) - 1; }
    /// Largest magnitude decompose accepts.
    [[nodiscard]] std::int64_t representable_max() const;
};

/// Throws UsageError on out-of-range fields.
void validate(const QuantizationConfig &cfg);

/// Linear interpolation between closest ranks (p = 100 is the maximum).
/// Throws EmptyCalibration on empty input.
double percentile(std::vector<double> values, double p);

/// Round half away from zero.
std::int64_t round_half_away(double v);

struct QuantizedWeights
{
    std::vector<std::int64_t> values;
    double sigma = 0.0;
};

/// out = clip(round(W / sigma * 2^(bits-1)), W-lim, W+lim) with sigma the
/// percentile of |W|. Throws DegenerateWeights when sigma is 0.
QuantizedWeights quantize_weights(std::span<const float> w, const QuantizationConfig &cfg = {});

struct QuantizedWeight
{
    std::int64_t mantissa = 0;
    int exponent = 0;

    [[nodiscard]] std::int64_t value() const { return mantissa * (std::int64_t{1} << exponent); }
    bool operator==(const QuantizedWeight &) const = default;
};

/// Exact decomposition with the smallest exponent when one exists, otherwise
/// the mantissa is rounded (half away from zero) at the smallest exponent
/// that fits. Throws RangeError beyond representable_max.
QuantizedWeight decompose(std::int64_t w, const QuantizationConfig &cfg = {});

/// Integer per-step bias of an analog input value: round(x * threshold)
/// clamped to [0, threshold].
std::int64_t encode_input(float x, std::int64_t threshold);
std::vector<std::int64_t> encode_frame(std::span<const float> frame, std::int64_t threshold);

struct LayerScale
{
    std::string layer_id;
    double sigma = 0.0;
    double lambda = 0.0;
    std::int64_t threshold = 0;
};

struct Calibration
{
    SnnNetwork network;
    /// One entry per non-input layer.
    std::vector<LayerScale> scales;
};

/// Net input du/dt of every neuron of every layer for one sample, using the
/// rate emulation clip(du, 0, threshold) / threshold. The input layer entry
/// holds its injected bias.
std::vector<std::vector<double>> emulate_drive(const SnnNetwork &net, std::span<const float> sample);

/// Quantizes and rescales a lowered network layer by layer so the chosen
/// percentile of each layer's emulated du/dt lands at its threshold. `batch`
/// holds n_samples rows of input_size floats. Throws EmptyCalibration,
/// DeadLayer.
Calibration calibrate_dynamic_range(const NetworkSpec &lowered, std::span<const float> batch,
        const QuantizationConfig &cfg = {});

/// Quantization without calibration: each layer's weights go through
/// quantize_weights and are used as-is.
SnnNetwork quantize_network(const NetworkSpec &lowered, const QuantizationConfig &cfg = {});

} // namespace nf
