#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "nf/error.hpp"
#include "nf/mapper.hpp"
#include "nf/partitioner.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

nf::ErrorKind kind_of(const std::function<void()> &f)
{
    try
    {
        f();
    }
    catch (const nf::Error &e)
    {
        return e.kind();
    }
    ADD_FAILURE() << "no nf::Error thrown";
    return nf::ErrorKind::io;
}

std::vector<nf::Partition> chain_of_cores(std::initializer_list<std::int64_t> cores)
{
    std::vector<nf::Partition> parts;
    int k = 0;
    for (const std::int64_t c : cores)
    {
        parts.emplace_back("l" + std::to_string(k++), nf::Shape{1, 1, c}, nf::Grid{1, 1, c});
    }
    return parts;
}

/// The 1-D toy: a (1, 6, 1) input and a width-3 valid conv, post split in two.
nf::SnnNetwork conv1d_net()
{
    nf::SnnNetwork net;
    net.name = "conv1d";
    net.timesteps = 16;
    nf::SnnLayer in;
    in.spec.id = "in";
    in.spec.kind = nf::LayerKind::input;
    in.spec.output_shape = {1, 6, 1};
    in.spec.neuron.threshold = 10;
    nf::SnnLayer conv;
    conv.spec.id = "conv";
    conv.spec.kind = nf::LayerKind::conv2d;
    conv.spec.kernel = nf::Extent2{1, 3};
    conv.spec.strides = nf::Extent2{1, 1};
    conv.spec.out_channels = 1;
    conv.spec.output_shape = {1, 4, 1};
    conv.spec.neuron.threshold = 20;
    conv.spec.neuron.reset = nf::ResetMode::soft;
    conv.weights = {3, -5, 7};
    net.layers = {in, conv};
    return net;
}

std::vector<nf::Partition> conv1d_parts()
{
    return {nf::Partition("in", {1, 6, 1}, {1, 1, 1}), nf::Partition("conv", {1, 4, 1}, {1, 2, 1})};
}

std::string slurp(const fs::path &p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nf::Grid random_grid(std::mt19937_64 &rng, const nf::Shape &s)
{
    auto pick = [&](std::int64_t n) { return std::uniform_int_distribution<std::int64_t>(1, n)(rng); };
    return {pick(s.height), pick(s.width), pick(s.channels)};
}

} // namespace

TEST(Place, FourteenCoresFitOneChip)
{
    const auto p = nf::place(chain_of_cores({4, 6, 4}), 1);
    EXPECT_EQ(p.chips_used, 1);
    for (const auto &layer : p.cores)
    {
        for (const auto &ref : layer)
        {
            EXPECT_EQ(ref.chip, 0);
        }
    }
}

TEST(Place, FirstFitSpillsToSecondChip)
{
    const auto p = nf::place(chain_of_cores({100, 30}), 2);
    EXPECT_EQ(p.chips_used, 2);
    std::int64_t on_first = 0;
    for (const auto &layer : p.cores)
    {
        for (const auto &ref : layer)
        {
            on_first += ref.chip == 0 ? 1 : 0;
        }
    }
    EXPECT_EQ(on_first, 128);
    EXPECT_EQ(p.cores[1][27], (nf::CoreRef{0, 127}));
    EXPECT_EQ(p.cores[1][28], (nf::CoreRef{1, 0}));
    EXPECT_EQ(p.cores[1][29], (nf::CoreRef{1, 1}));
}

TEST(Place, TooManyCoresIsCapacityError)
{
    EXPECT_EQ(kind_of([] { nf::place(chain_of_cores({150, 50}), 1); }), nf::ErrorKind::capacity);
}

TEST(Place, CrossingAxonsChargedTwice)
{
    auto net = conv1d_net();
    net.layers[1].spec.neuron.reset = nf::ResetMode::hard;
    nf::MapOptions o;
    o.constraints.cores_per_chip = 2;
    o.chips = 2;
    // Input core and conv core 0 on chip 0, conv core 1 on chip 1.
    const auto image = nf::build_image(net, conv1d_parts(), o);
    const auto tallies = nf::tally_image(image);
    EXPECT_EQ(tallies[0].cores[0].offchip_axons, 3);
    EXPECT_EQ(tallies[0].cores[0].output_axons, 6 + 3);
    nf::MapOptions one;
    const auto flat = nf::tally_image(nf::build_image(net, conv1d_parts(), one));
    EXPECT_EQ(flat[0].cores[0].output_axons, 6);
}

TEST(Encode, Examples)
{
    std::vector<nf::Synapse> nine;
    for (std::int32_t k = 0; k < 9; ++k)
    {
        nine.push_back({k, k});
    }
    const auto dense = nf::encode_group(nine, nf::Compression::automatic);
    EXPECT_EQ(dense.scheme, nf::Compression::dense);
    EXPECT_EQ(dense.cost_units, 9);
    EXPECT_EQ(nf::encode_group(nine, nf::Compression::sparse).cost_units, 18);

    const std::vector<nf::Synapse> far{{0, 3}, {500, 4}};
    const auto sparse = nf::encode_group(far, nf::Compression::automatic);
    EXPECT_EQ(sparse.scheme, nf::Compression::sparse);
    EXPECT_EQ(sparse.cost_units, 4);
    EXPECT_EQ(nf::encode_group(far, nf::Compression::dense).cost_units, 501);

    for (const auto c : {nf::Compression::automatic, nf::Compression::sparse, nf::Compression::dense,
                 nf::Compression::runlength})
    {
        const auto e = nf::encode_group({}, c);
        EXPECT_EQ(e.cost_units, 0);
        EXPECT_TRUE(nf::decode_group(e).empty());
    }
}

TEST(Encode, RoundTripsAndCostsMatchConnectivity)
{
    std::mt19937 rng(6);
    for (int trial = 0; trial < 500; ++trial)
    {
        std::vector<nf::Synapse> entries;
        std::int32_t dst = std::uniform_int_distribution<std::int32_t>(0, 3)(rng);
        const int n = std::uniform_int_distribution<int>(0, 30)(rng);
        for (int k = 0; k < n; ++k)
        {
            entries.push_back({dst, std::uniform_int_distribution<std::int32_t>(0, 50)(rng)});
            dst += std::uniform_int_distribution<std::int32_t>(1, 4)(rng) == 1 ? 5 : 1;
        }
        for (const auto c : {nf::Compression::automatic, nf::Compression::sparse, nf::Compression::dense,
                     nf::Compression::runlength})
        {
            const auto e = nf::encode_group(entries, c);
            EXPECT_EQ(nf::decode_group(e), entries);
            EXPECT_EQ(e.cost_units, nf::encoding_cost(entries, c));
            if (c != nf::Compression::automatic)
            {
                EXPECT_EQ(e.scheme, c);
            }
        }
    }
}

TEST(Encode, DenseNeedsIncreasingDestinations)
{
    const std::vector<nf::Synapse> repeated{{2, 0}, {2, 1}};
    EXPECT_EQ(kind_of([&] { nf::encode_group(repeated, nf::Compression::dense); }), nf::ErrorKind::map);
    EXPECT_EQ(nf::decode_group(nf::encode_group(repeated, nf::Compression::sparse)), repeated);
}

TEST(SoftReset, PairsEachSomaWithInhibitoryReset)
{
    const std::vector<nf::Compartment> one{{nf::CompartmentRole::soma, 7, 0}};
    const auto out = nf::expand_soft_reset(one, 100);
    ASSERT_EQ(out.size(), 2U);
    EXPECT_EQ(out[0].role, nf::CompartmentRole::soma);
    EXPECT_EQ(out[1].role, nf::CompartmentRole::reset);
    EXPECT_EQ(out[1].neuron, 7);
    EXPECT_EQ(out[1].recurrent_weight, -100);
}

TEST(SoftReset, FiveTwelveFillsCoreExactly)
{
    std::vector<nf::Compartment> somas(512);
    for (std::size_t k = 0; k < somas.size(); ++k)
    {
        somas[k].neuron = static_cast<std::int64_t>(k);
    }
    EXPECT_EQ(nf::expand_soft_reset(somas, 9).size(), 1024U);
    somas.push_back({nf::CompartmentRole::soma, 512, 0});
    EXPECT_EQ(kind_of([&] { nf::expand_soft_reset(somas, 9); }), nf::ErrorKind::map);
}

TEST(SoftReset, HardLayersKeepOneCompartmentPerNeuron)
{
    auto net = conv1d_net();
    net.layers[1].spec.neuron.reset = nf::ResetMode::hard;
    const auto image = nf::build_image(net, conv1d_parts());
    for (const auto &ref : image.layers[1].cores)
    {
        const auto &core = image.core(ref);
        EXPECT_EQ(core.compartments.size(), 2U);
        for (const auto &c : core.compartments)
        {
            EXPECT_EQ(c.role, nf::CompartmentRole::soma);
        }
    }
    const auto soft = nf::build_image(conv1d_net(), conv1d_parts());
    EXPECT_EQ(soft.core(soft.layers[1].cores[0]).compartments.size(), 4U);
}

TEST(Image, EmitParseRoundTripIsByteIdentical)
{
    const auto image = nf::build_image(conv1d_net(), conv1d_parts());
    const std::string text = nf::emit(image);
    const auto parsed = nf::parse_image(text);
    EXPECT_EQ(parsed, image);
    EXPECT_EQ(nf::emit(parsed), text);

    const fs::path path = fs::temp_directory_path() / "nf_mapper_roundtrip.json";
    nf::write_image(image, path);
    EXPECT_EQ(nf::emit(nf::load_image(path)), slurp(path));
}

TEST(Image, MatchesGoldenFixture)
{
    const fs::path golden = fs::path(NF_FIXTURES) / "conv1d_image.json";
    // NF_WRITE_GOLDEN=1 regenerates the fixture after a deliberate format change.
    if (std::getenv("NF_WRITE_GOLDEN") != nullptr)
    {
        nf::write_image(nf::build_image(conv1d_net(), conv1d_parts()), golden);
    }
    ASSERT_TRUE(fs::exists(golden)) << golden;
    EXPECT_EQ(nf::emit(nf::build_image(conv1d_net(), conv1d_parts())), slurp(golden));
}

TEST(Image, DanglingReferenceRefusesToEmit)
{
    auto image = nf::build_image(conv1d_net(), conv1d_parts());
    const auto ref = image.layers[0].cores[0];
    auto &core = image.chips[static_cast<std::size_t>(ref.chip)].cores[static_cast<std::size_t>(ref.index)];
    ASSERT_FALSE(core.output_axons.empty());
    core.output_axons[0].dst_axon = 999;
    EXPECT_EQ(kind_of([&] { nf::emit(image); }), nf::ErrorKind::integrity);

    auto other = nf::build_image(conv1d_net(), conv1d_parts());
    auto &dst = other.chips[0].cores[static_cast<std::size_t>(other.layers[1].cores[0].index)];
    dst.input_axons[0].a = 77;
    EXPECT_EQ(kind_of([&] { nf::verify_image(other); }), nf::ErrorKind::integrity);
}

TEST(Image, WrongFormatIsVersionError)
{
    auto text = nf::emit(nf::build_image(conv1d_net(), conv1d_parts()));
    const auto pos = text.find(nf::kImageFormat);
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, std::string(nf::kImageFormat).size(), "nfimg/9");
    EXPECT_EQ(kind_of([&] { nf::parse_image(text); }), nf::ErrorKind::version);
}

TEST(Image, FullSharingCannotBeMapped)
{
    nf::MapOptions o;
    o.sharing = nf::SharingMode::full;
    EXPECT_EQ(kind_of([&] { nf::build_image(conv1d_net(), conv1d_parts(), o); }), nf::ErrorKind::usage);
}

TEST(Image, OverLimitCoreIsCapacityError)
{
    nf::MapOptions o;
    o.constraints.max_output_axons = 5;
    EXPECT_EQ(kind_of([&] { nf::build_image(conv1d_net(), conv1d_parts(), o); }), nf::ErrorKind::capacity);
}

TEST(Base64, RoundTripsInt32Blocks)
{
    std::mt19937 rng(1);
    for (int n = 0; n < 40; ++n)
    {
        std::vector<std::int32_t> v(static_cast<std::size_t>(n));
        for (auto &x : v)
        {
            x = static_cast<std::int32_t>(rng());
        }
        EXPECT_EQ(nf::base64_decode_i32(nf::base64_encode_i32(v)), v);
    }
    // 1 as little-endian int32 is 01 00 00 00.
    EXPECT_EQ(nf::base64_encode_i32(std::vector<std::int32_t>{1}), "AQAAAA==");
}

// The image's own tables must reproduce both the partitioner's tally and the
// brute-force connectivity.
TEST(Image, TallyAndConnectivityFidelity)
{
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 80; ++trial)
    {
        const auto net = oracle::random_network(rng, 4, 500);
        std::vector<nf::Partition> parts;
        for (const auto &l : net.layers)
        {
            parts.emplace_back(l.spec.id, l.spec.output_shape, random_grid(rng, l.spec.output_shape));
        }
        nf::MapOptions o;
        o.sharing = trial % 2 == 0 ? nf::SharingMode::on : nf::SharingMode::off;
        o.cost_model.scheme = static_cast<nf::Compression>(trial % 4);
        o.constraints.cores_per_chip = 4;
        o.chips = 1000;
        const auto image = nf::build_image(net, parts, o);
        const auto placement = nf::place(parts, o.chips, o.constraints);
        const auto specs = oracle::specs_of(net);
        const auto chips = placement.chip_maps();
        EXPECT_EQ(nf::tally_image(image), nf::tally_chain(specs, parts, o.sharing, o.cost_model, chips))
                << "trial " << trial;

        const auto expanded = nf::expand_connections(image);
        ASSERT_EQ(expanded.size(), net.layers.size() - 1);
        for (std::size_t l = 1; l < net.layers.size(); ++l)
        {
            const auto brute = oracle::brute_force_unroll(net.layers[l - 1].spec.output_shape, net.layers[l].spec);
            ASSERT_EQ(expanded[l - 1].size(), brute.size());
            for (std::size_t k = 0; k < brute.size(); ++k)
            {
                EXPECT_EQ(expanded[l - 1][k].pre, brute[k].pre);
                EXPECT_EQ(expanded[l - 1][k].post, brute[k].post);
                EXPECT_EQ(expanded[l - 1][k].weight_id, brute[k].weight_id);
            }
            EXPECT_EQ(image.layers[l].weights, net.layers[l].weights);
        }
        EXPECT_EQ(nf::parse_image(nf::emit(image)), image);
    }
}
