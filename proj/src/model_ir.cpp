#include "nf/model_ir.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>

#include "nf/error.hpp"

static_assert(std::endian::native == std::endian::little,
        "weight blobs are read as native little-endian floats");

namespace nf {

namespace {

using nlohmann::json;

std::string layer_label(const LayerSpec &layer)
{
    return "layer '" + layer.id + "'";
}

[[noreturn]] void shape_error(const LayerSpec &layer, const std::string &what)
{
    throw Error(ErrorKind::shape, layer_label(layer) + ": " + what);
}

std::string shape_text(const Shape &s)
{
    std::ostringstream out;
    out << "(" << s.height << "," << s.width << "," << s.channels << ")";
    return out.str();
}

Shape infer_one(const Shape &in, const LayerSpec &layer)
{
    switch (layer.kind)
    {
    case LayerKind::input:
        shape_error(layer, "Input layer must be first");
    case LayerKind::flatten:
        return {1, 1, in.size()};
    case LayerKind::dense:
        if (in.height != 1 || in.width != 1)
        {
            shape_error(layer, "Dense input must be 1-D, got " + shape_text(in));
        }
        if (layer.out_channels <= 0)
        {
            shape_error(layer, "Dense needs units > 0");
        }
        return {1, 1, layer.out_channels};
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d:
    case LayerKind::average_pool2d: {
        if (!layer.kernel || !layer.strides)
        {
            shape_error(layer, "kernel and strides are required");
        }
        Shape out;
        try
        {
            out.height = conv_output_extent(
                    in.height, layer.kernel->y, layer.strides->y, layer.padding);
            out.width = conv_output_extent(
                    in.width, layer.kernel->x, layer.strides->x, layer.padding);
        }
        catch (const Error &e)
        {
            shape_error(layer, e.what());
        }
        if (layer.kind == LayerKind::conv2d)
        {
            if (layer.out_channels <= 0)
            {
                shape_error(layer, "Conv2D needs filters > 0");
            }
            out.channels = layer.out_channels;
        }
        else
        {
            out.channels = in.channels;
        }
        return out;
    }
    }
    shape_error(layer, "unknown kind");
}

Shape parse_triple(const json &j, const char *what)
{
    if (!j.is_array() || j.size() != 3)
    {
        throw Error(ErrorKind::parse, std::string(what) + " must be [h, w, c]");
    }
    return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

Extent2 parse_pair(const json &j, const char *what)
{
    if (j.is_number_integer())
    {
        const auto v = j.get<std::int64_t>();
        return {v, v};
    }
    if (!j.is_array() || j.size() != 2)
    {
        throw Error(ErrorKind::parse, std::string(what) + " must be [y, x]");
    }
    return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>()};
}

LayerSpec parse_layer_json(const json &j)
{
    LayerSpec layer;
    layer.id = j.at("id").get<std::string>();
    layer.kind = parse_layer_kind(j.at("kind").get<std::string>());
    if (j.contains("shape"))
    {
        layer.output_shape = parse_triple(j["shape"], "shape");
    }
    if (j.contains("units"))
    {
        layer.out_channels = j["units"].get<std::int64_t>();
    }
    if (j.contains("filters"))
    {
        layer.out_channels = j["filters"].get<std::int64_t>();
    }
    if (j.contains("kernel"))
    {
        layer.kernel = parse_pair(j["kernel"], "kernel");
    }
    if (j.contains("strides"))
    {
        layer.strides = parse_pair(j["strides"], "strides");
    }
    else if (layer.kernel)
    {
        layer.strides = Extent2{1, 1};
    }
    if (j.contains("padding"))
    {
        layer.padding = parse_padding(j["padding"].get<std::string>());
    }
    if (j.contains("neuron"))
    {
        const json &n = j["neuron"];
        layer.neuron.threshold = n.value("threshold", layer.neuron.threshold);
        layer.neuron.v_decay = n.value("v_decay", layer.neuron.v_decay);
        layer.neuron.i_decay = n.value("i_decay", layer.neuron.i_decay);
        layer.neuron.bias = n.value("bias", layer.neuron.bias);
        if (n.contains("reset"))
        {
            layer.neuron.reset = parse_reset_mode(n["reset"].get<std::string>());
        }
    }
    if (j.contains("weights"))
    {
        const json &w = j["weights"];
        layer.weight_ref = WeightRef{
                w.at("offset").get<std::int64_t>(), w.at("count").get<std::int64_t>()};
    }
    return layer;
}

} // namespace

const char *to_string(LayerKind kind)
{
    switch (kind)
    {
    case LayerKind::input: return "Input";
    case LayerKind::dense: return "Dense";
    case LayerKind::conv2d: return "Conv2D";
    case LayerKind::depthwise_conv2d: return "DepthwiseConv2D";
    case LayerKind::average_pool2d: return "AveragePool2D";
    case LayerKind::flatten: return "Flatten";
    }
    return "?";
}

const char *to_string(Padding padding)
{
    return padding == Padding::valid ? "valid" : "same";
}

const char *to_string(ResetMode mode)
{
    return mode == ResetMode::hard ? "hard" : "soft";
}

LayerKind parse_layer_kind(const std::string &text)
{
    for (const LayerKind kind : {LayerKind::input, LayerKind::dense, LayerKind::conv2d,
                 LayerKind::depthwise_conv2d, LayerKind::average_pool2d, LayerKind::flatten})
    {
        if (text == to_string(kind))
        {
            return kind;
        }
    }
    throw Error(ErrorKind::parse, "unknown layer kind '" + text + "'");
}

Padding parse_padding(const std::string &text)
{
    if (text == "valid")
    {
        return Padding::valid;
    }
    if (text == "same")
    {
        return Padding::same;
    }
    throw Error(ErrorKind::parse, "unknown padding '" + text + "'");
}

ResetMode parse_reset_mode(const std::string &text)
{
    if (text == "hard")
    {
        return ResetMode::hard;
    }
    if (text == "soft")
    {
        return ResetMode::soft;
    }
    throw Error(ErrorKind::parse, "unknown reset mode '" + text + "'");
}

bool kind_has_kernel(LayerKind kind)
{
    return kind == LayerKind::conv2d || kind == LayerKind::depthwise_conv2d ||
            kind == LayerKind::average_pool2d;
}

bool kind_has_weights(LayerKind kind)
{
    return kind == LayerKind::dense || kind == LayerKind::conv2d ||
            kind == LayerKind::depthwise_conv2d;
}

std::int64_t conv_output_extent(
        std::int64_t in, std::int64_t kernel, std::int64_t stride, Padding padding)
{
    if (in <= 0 || kernel <= 0 || stride <= 0)
    {
        throw Error(ErrorKind::shape, "non-positive extent, kernel or stride");
    }
    if (padding == Padding::same)
    {
        return (in + stride - 1) / stride;
    }
    if (kernel > in)
    {
        throw Error(ErrorKind::shape,
                "kernel " + std::to_string(kernel) + " exceeds input " + std::to_string(in));
    }
    return (in - kernel) / stride + 1;
}

ConvGeometry conv_geometry(const Shape &in, const LayerSpec &post)
{
    if (!kind_has_kernel(post.kind) || !post.kernel || !post.strides)
    {
        shape_error(post, "not a convolution-like layer");
    }
    ConvGeometry g;
    g.in = in;
    g.out = post.output_shape;
    g.kernel = *post.kernel;
    g.strides = *post.strides;
    g.depthwise = post.kind != LayerKind::conv2d;
    if (post.padding == Padding::same)
    {
        const std::int64_t pad_y =
                std::max<std::int64_t>((g.out.height - 1) * g.strides.y + g.kernel.y - in.height, 0);
        const std::int64_t pad_x =
                std::max<std::int64_t>((g.out.width - 1) * g.strides.x + g.kernel.x - in.width, 0);
        g.pad_top = pad_y / 2;
        g.pad_left = pad_x / 2;
    }
    return g;
}

std::int64_t expected_weight_count(const Shape &in, const LayerSpec &layer)
{
    switch (layer.kind)
    {
    case LayerKind::dense: return in.size() * layer.output_shape.channels;
    case LayerKind::conv2d:
        return layer.kernel->y * layer.kernel->x * in.channels * layer.output_shape.channels;
    case LayerKind::depthwise_conv2d: return layer.kernel->y * layer.kernel->x * in.channels;
    default: return 0;
    }
}

NetworkSpec infer_shapes(NetworkSpec spec)
{
    if (spec.layers.empty() || spec.layers.front().kind != LayerKind::input)
    {
        throw Error(ErrorKind::shape, "network must start with an Input layer");
    }
    LayerSpec &input = spec.layers.front();
    if (input.output_shape.height <= 0 || input.output_shape.width <= 0 ||
            input.output_shape.channels <= 0)
    {
        shape_error(input, "Input needs a positive shape");
    }
    for (std::size_t i = 1; i < spec.layers.size(); ++i)
    {
        LayerSpec &layer = spec.layers[i];
        const Shape inferred = infer_one(spec.layers[i - 1].output_shape, layer);
        if (layer.output_shape.size() != 0 && layer.output_shape != inferred)
        {
            shape_error(layer, "declared output " + shape_text(layer.output_shape) +
                            " but arithmetic gives " + shape_text(inferred));
        }
        layer.output_shape = inferred;
    }
    return spec;
}

void validate(const NetworkSpec &spec)
{
    const NetworkSpec inferred = infer_shapes(spec);
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
    {
        const LayerSpec &layer = spec.layers[i];
        if (i > 0 && layer.kind == LayerKind::input)
        {
            shape_error(layer, "only the first layer may be Input");
        }
        if (layer.output_shape != inferred.layers[i].output_shape)
        {
            shape_error(layer, "output shape not inferred");
        }
        if (kind_has_kernel(layer.kind) != (layer.kernel.has_value() && layer.strides.has_value()))
        {
            shape_error(layer, "kernel/strides presence does not match kind");
        }
        const NeuronConfig &n = layer.neuron;
        if (i > 0 && layer.kind != LayerKind::flatten && n.threshold <= 0)
        {
            shape_error(layer, "threshold must be positive");
        }
        if (n.v_decay < 0 || n.v_decay > kDecayMax || n.i_decay < 0 || n.i_decay > kDecayMax)
        {
            shape_error(layer, "decay outside [0, 4096]");
        }
        if (kind_has_weights(layer.kind))
        {
            const std::int64_t expected =
                    expected_weight_count(spec.layers[i - 1].output_shape, layer);
            if (!layer.weight_ref || layer.weight_ref->count != expected)
            {
                shape_error(layer, "expected " + std::to_string(expected) + " weights");
            }
            if (static_cast<std::int64_t>(layer.weights.size()) != expected)
            {
                throw Error(ErrorKind::blob, layer_label(layer) + ": weights not resolved");
            }
        }
        else if (layer.weight_ref)
        {
            shape_error(layer, std::string(to_string(layer.kind)) + " takes no weights");
        }
    }
}

std::int64_t total_neurons(const NetworkSpec &spec)
{
    std::int64_t total = 0;
    for (const LayerSpec &layer : spec.layers)
    {
        total += layer.output_shape.size();
    }
    return total;
}

NetworkSpec parse_manifest(const json &manifest)
{
    try
    {
        NetworkSpec spec;
        spec.name = manifest.at("name").get<std::string>();
        spec.timesteps = manifest.value("timesteps", std::int64_t{0});
        for (const json &j : manifest.at("layers"))
        {
            spec.layers.push_back(parse_layer_json(j));
        }
        if (manifest.contains("blob"))
        {
            const json &blob = manifest["blob"];
            spec.blob_path = blob.at("path").get<std::string>();
            if (blob.value("dtype", std::string("f32le")) != "f32le")
            {
                throw Error(ErrorKind::parse, "blob dtype must be f32le");
            }
        }
        return spec;
    }
    catch (const json::exception &e)
    {
        throw Error(ErrorKind::parse, e.what());
    }
}

json layer_to_json(const LayerSpec &layer)
{
    json j;
    j["id"] = layer.id;
    j["kind"] = to_string(layer.kind);
    const Shape &s = layer.output_shape;
    j["shape"] = {s.height, s.width, s.channels};
    if (layer.kind == LayerKind::dense)
    {
        j["units"] = layer.out_channels;
    }
    if (layer.kind == LayerKind::conv2d)
    {
        j["filters"] = layer.out_channels;
    }
    if (layer.kernel)
    {
        j["kernel"] = {layer.kernel->y, layer.kernel->x};
    }
    if (layer.strides)
    {
        j["strides"] = {layer.strides->y, layer.strides->x};
    }
    if (kind_has_kernel(layer.kind))
    {
        j["padding"] = to_string(layer.padding);
    }
    j["neuron"] = {{"threshold", layer.neuron.threshold}, {"v_decay", layer.neuron.v_decay},
            {"i_decay", layer.neuron.i_decay}, {"reset", to_string(layer.neuron.reset)},
            {"bias", layer.neuron.bias}};
    if (layer.weight_ref)
    {
        j["weights"] = {{"offset", layer.weight_ref->offset}, {"count", layer.weight_ref->count}};
    }
    return j;
}

LayerSpec layer_from_json(const json &j)
{
    try
    {
        return parse_layer_json(j);
    }
    catch (const json::exception &e)
    {
        throw Error(ErrorKind::parse, e.what());
    }
}

json to_manifest(const NetworkSpec &spec)
{
    json layers = json::array();
    for (const LayerSpec &layer : spec.layers)
    {
        layers.push_back(layer_to_json(layer));
    }
    json manifest;
    manifest["name"] = spec.name;
    manifest["timesteps"] = spec.timesteps;
    manifest["layers"] = std::move(layers);
    if (!spec.blob_path.empty())
    {
        manifest["blob"] = {{"path", spec.blob_path}, {"dtype", "f32le"}};
    }
    return manifest;
}

std::string dump_manifest(const NetworkSpec &spec)
{
    return to_manifest(spec).dump(2) + "\n";
}

std::vector<float> read_f32_blob(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw Error(ErrorKind::blob, "cannot open blob " + path.string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % sizeof(float) != 0)
    {
        throw Error(ErrorKind::blob, "blob size is not a multiple of 4: " + path.string());
    }
    std::vector<float> values(bytes.size() / sizeof(float));
    std::copy(bytes.begin(), bytes.end(), reinterpret_cast<char *>(values.data()));
    return values;
}

void write_f32_blob(const std::filesystem::path &path, std::span<const float> values)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
    {
        throw Error(ErrorKind::io, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char *>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
}

NetworkSpec load_network(
        const std::filesystem::path &manifest_path, const std::filesystem::path &blob_path)
{
    std::ifstream in(manifest_path);
    if (!in)
    {
        throw Error(ErrorKind::parse, "cannot open manifest " + manifest_path.string());
    }
    json manifest;
    try
    {
        manifest = json::parse(in);
    }
    catch (const json::exception &e)
    {
        throw Error(ErrorKind::parse, e.what());
    }
    NetworkSpec spec = parse_manifest(manifest);

    const bool needs_blob = std::any_of(spec.layers.begin(), spec.layers.end(),
            [](const LayerSpec &l) { return l.weight_ref.has_value(); });
    if (needs_blob)
    {
        std::filesystem::path resolved = blob_path;
        if (resolved.empty())
        {
            if (spec.blob_path.empty())
            {
                throw Error(ErrorKind::blob, "manifest references weights but names no blob");
            }
            resolved = manifest_path.parent_path() / spec.blob_path;
        }
        const std::vector<float> blob = read_f32_blob(resolved);
        for (LayerSpec &layer : spec.layers)
        {
            if (!layer.weight_ref)
            {
                continue;
            }
            const WeightRef &ref = *layer.weight_ref;
            if (ref.offset < 0 || ref.count < 0 ||
                    ref.offset + ref.count > static_cast<std::int64_t>(blob.size()))
            {
                throw Error(ErrorKind::blob, layer_label(layer) + ": weight_ref [" +
                                std::to_string(ref.offset) + ", +" + std::to_string(ref.count) +
                                ") exceeds blob of " + std::to_string(blob.size()) + " floats");
            }
            layer.weights.assign(blob.begin() + ref.offset, blob.begin() + ref.offset + ref.count);
        }
    }
    spec = infer_shapes(std::move(spec));
    validate(spec);
    return spec;
}

void save_network(const NetworkSpec &spec, const std::filesystem::path &manifest_path,
        const std::filesystem::path &blob_path)
{
    NetworkSpec out = spec;
    out.blob_path = blob_path.filename().string();
    std::vector<float> blob;
    for (const LayerSpec &layer : out.layers)
    {
        if (!layer.weight_ref)
        {
            continue;
        }
        const auto end = static_cast<std::size_t>(layer.weight_ref->offset + layer.weight_ref->count);
        if (blob.size() < end)
        {
            blob.resize(end, 0.0F);
        }
        std::copy(layer.weights.begin(), layer.weights.end(),
                blob.begin() + layer.weight_ref->offset);
    }
    write_f32_blob(blob_path, blob);
    std::ofstream manifest(manifest_path);
    if (!manifest)
    {
        throw Error(ErrorKind::io, "cannot write " + manifest_path.string());
    }
    manifest << dump_manifest(out);
}

NetworkSpec lower_for_snn(const NetworkSpec &spec)
{
    NetworkSpec lowered;
    lowered.name = spec.name;
    lowered.timesteps = spec.timesteps;
    lowered.blob_path = spec.blob_path;
    for (const LayerSpec &layer : spec.layers)
    {
        if (layer.kind == LayerKind::flatten)
        {
            continue;
        }
        LayerSpec copy = layer;
        if (layer.kind == LayerKind::average_pool2d)
        {
            copy.kind = LayerKind::depthwise_conv2d;
            const std::int64_t taps = layer.kernel->y * layer.kernel->x;
            copy.weights.assign(static_cast<std::size_t>(taps * layer.output_shape.channels),
                    1.0F / static_cast<float>(taps));
            copy.weight_ref.reset();
        }
        lowered.layers.push_back(std::move(copy));
    }
    return lowered;
}

std::int64_t SnnNetwork::neuron_count() const
{
    std::int64_t total = 0;
    for (const SnnLayer &layer : layers)
    {
        total += layer.spec.output_shape.size();
    }
    return total;
}

void validate(const SnnNetwork &net)
{
    if (net.layers.empty() || net.layers.front().spec.kind != LayerKind::input)
    {
        throw Error(ErrorKind::shape, "network must start with an Input layer");
    }
    for (std::size_t i = 0; i < net.layers.size(); ++i)
    {
        const LayerSpec &layer = net.layers[i].spec;
        if (layer.output_shape.size() <= 0)
        {
            shape_error(layer, "empty output shape");
        }
        if (layer.neuron.threshold <= 0)
        {
            shape_error(layer, "threshold must be positive");
        }
        if (i == 0)
        {
            continue;
        }
        switch (layer.kind)
        {
        case LayerKind::dense:
        case LayerKind::conv2d:
        case LayerKind::depthwise_conv2d: break;
        default:
            throw Error(ErrorKind::unsupported_kind,
                    layer_label(layer) + ": " + to_string(layer.kind) + " is not lowered");
        }
        const Shape &in = net.layers[i - 1].spec.output_shape;
        if (layer.kind != LayerKind::dense)
        {
            LayerSpec probe = layer;
            probe.output_shape = {};
            if (infer_one(in, probe) != layer.output_shape)
            {
                shape_error(layer, "output shape inconsistent with input " + shape_text(in));
            }
        }
        const auto expected = static_cast<std::size_t>(expected_weight_count(in, layer));
        if (net.layers[i].weights.size() != expected)
        {
            shape_error(layer, "expected " + std::to_string(expected) + " integer weights");
        }
    }
}

} // namespace nf
