// nfc: compile, run and sweep front end over the nf library.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nf/error.hpp"
#include "nf/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Config
{
    std::string model;
    std::string blob;
    std::string calib;
    std::string image;
    std::string inputs;
    std::string raster;
    std::string labels;
    std::int64_t chips = 1;
    std::int64_t beam = 4;
    std::string alpha = "1,1,1,1";
    std::string sharing = "on";
    std::string compression = "auto";
    std::optional<std::int64_t> timesteps;
    std::uint64_t seed = 0;
    std::string out = ".";
    std::string kind = "error";
    std::vector<std::int64_t> t_values;
    std::vector<std::int64_t> widths{8, 16, 32};
    std::int64_t input_size = 16;
};

nf::CompileOptions compile_options(const Config &cfg)
{
    nf::CompileOptions o;
    o.chips = cfg.chips;
    o.optimize.beam = cfg.beam;
    o.optimize.weights = nf::parse_cost_weights(cfg.alpha);
    o.optimize.sharing = nf::parse_sharing(cfg.sharing);
    if (o.optimize.sharing == nf::SharingMode::full)
    {
        throw nf::Error(nf::ErrorKind::usage, "--sharing accepts on or off");
    }
    o.optimize.cost_model.scheme = nf::parse_compression(cfg.compression);
    return o;
}

void write_text(const fs::path &path, const std::string &text)
{
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out)
    {
        throw nf::Error(nf::ErrorKind::io, "cannot write " + path.string());
    }
}

fs::path out_dir(const Config &cfg)
{
    const fs::path dir(cfg.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
    {
        throw nf::Error(nf::ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    }
    return dir;
}

nf::SnnNetwork integer_network(const Config &cfg)
{
    const nf::NetworkSpec spec = nf::load_network(cfg.model, cfg.blob);
    std::vector<float> batch;
    if (!cfg.calib.empty())
    {
        batch = nf::read_f32_blob(cfg.calib);
        if (batch.empty())
        {
            throw nf::Error(nf::ErrorKind::empty_calibration, "calibration file " + cfg.calib + " is empty");
        }
    }
    nf::SnnNetwork net = nf::prepare_network(spec, batch).network;
    if (cfg.timesteps)
    {
        net.timesteps = *cfg.timesteps;
    }
    return net;
}

/// The image named by --image, or one compiled from --model on the fly.
nf::DeploymentImage obtain_image(const Config &cfg)
{
    if (!cfg.image.empty())
    {
        return nf::load_image(cfg.image);
    }
    if (cfg.model.empty())
    {
        throw nf::Error(nf::ErrorKind::usage, "need --image or --model");
    }
    return nf::compile_network(integer_network(cfg), compile_options(cfg)).image;
}

int cmd_compile(const Config &cfg)
{
    if (cfg.model.empty())
    {
        throw nf::Error(nf::ErrorKind::usage, "compile needs --model");
    }
    const nf::CompileOptions options = compile_options(cfg);
    const nf::Compiled compiled = nf::compile_network(integer_network(cfg), options);
    const fs::path dir = out_dir(cfg);
    nf::write_image(compiled.image, dir / "image.json");
    write_text(dir / "report.json", nf::utilization_report(compiled, options.optimize).dump(2) + "\n");
    write_text(dir / "utilization.csv", nf::utilization_csv(compiled, options.optimize.constraints));
    std::printf("compiled %s: %lld cores, cost %.6f\n", compiled.image.name.c_str(),
            static_cast<long long>(nf::total_cores(compiled.tallies)), compiled.plan.total_cost);
    return 0;
}

/// Rasters file: {"samples": [[[neurons spiking at t = 1], [t = 2], ...], ...]}.
std::vector<std::vector<std::vector<std::int64_t>>> read_rasters(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw nf::Error(nf::ErrorKind::io, "cannot open " + path);
    }
    try
    {
        return json::parse(in).at("samples").get<std::vector<std::vector<std::vector<std::int64_t>>>>();
    }
    catch (const json::exception &e)
    {
        throw nf::Error(nf::ErrorKind::parse, path + ": " + e.what());
    }
}

int cmd_run(const Config &cfg)
{
    const nf::DeploymentImage image = obtain_image(cfg);
    const std::int64_t steps = cfg.timesteps.value_or(image.timesteps);
    const std::int64_t n_in = image.layers.front().spec.output_shape.size();

    std::vector<nf::SimInput> inputs;
    if (!cfg.raster.empty())
    {
        for (auto &r : read_rasters(cfg.raster))
        {
            nf::SimInput in;
            in.frame.assign(static_cast<std::size_t>(n_in), 0);
            in.raster = std::move(r);
            inputs.push_back(std::move(in));
        }
    }
    else if (!cfg.inputs.empty())
    {
        nf::Dataset data;
        data.frames = nf::read_f32_blob(cfg.inputs);
        data.input_size = n_in;
        if (data.frames.size() % static_cast<std::size_t>(n_in) != 0)
        {
            throw nf::Error(nf::ErrorKind::shape, "input file holds a partial frame of " + std::to_string(n_in));
        }
        for (std::int64_t s = 0; s < data.size(); ++s)
        {
            nf::SimInput in;
            in.frame = nf::encode_frame(data.sample(s), image.layers.front().spec.neuron.threshold);
            inputs.push_back(std::move(in));
        }
    }
    else
    {
        throw nf::Error(nf::ErrorKind::usage, "run needs --inputs or --raster");
    }
    std::vector<std::int64_t> labels;
    if (!cfg.labels.empty())
    {
        labels = nf::read_labels(cfg.labels);
        if (labels.size() != inputs.size())
        {
            throw nf::Error(nf::ErrorKind::usage, "labels and inputs differ in count");
        }
    }

    std::ostringstream csv;
    csv << "sample,prediction,label\n";
    json samples = json::array();
    nf::Counters total;
    std::int64_t wrong = 0;
    for (std::size_t s = 0; s < inputs.size(); ++s)
    {
        const nf::SimResult r = nf::run_mapped(image, inputs[s], steps);
        csv << s << ',' << (r.prediction ? std::to_string(*r.prediction) : "") << ','
            << (labels.empty() ? "" : std::to_string(labels[s])) << '\n';
        if (!labels.empty())
        {
            wrong += r.prediction != labels[s] ? 1 : 0;
        }
        const nf::EdpProxy edp = nf::edp_proxy(r.counters, image.core_count(), steps);
        json j = nf::counters_to_json(r.counters);
        j["energy_proxy"] = edp.energy;
        j["delay_proxy"] = edp.delay;
        j["edp"] = edp.edp;
        j["output_counts"] = r.output_counts;
        samples.push_back(std::move(j));
        total.spikes_total += r.counters.spikes_total;
        total.synaptic_ops += r.counters.synaptic_ops;
        total.core_to_core_msgs += r.counters.core_to_core_msgs;
        total.chip_to_chip_msgs += r.counters.chip_to_chip_msgs;
        total.timesteps_run += r.counters.timesteps_run;
    }
    json summary = {{"timesteps", steps}, {"samples", samples}, {"totals", nf::counters_to_json(total)}};
    if (!labels.empty())
    {
        summary["error"] = inputs.empty() ? 0.0 : static_cast<double>(wrong) / static_cast<double>(inputs.size());
    }
    const fs::path dir = out_dir(cfg);
    write_text(dir / "predictions.csv", csv.str());
    write_text(dir / "counters.json", summary.dump(2) + "\n");
    std::printf("ran %zu samples for %lld steps\n", inputs.size(), static_cast<long long>(steps));
    return 0;
}

int cmd_sweep(const Config &cfg)
{
    const fs::path dir = out_dir(cfg);
    if (cfg.kind == "scaling")
    {
        nf::OptimizeOptions o = compile_options(cfg).optimize;
        const auto rows = nf::scaling_sweep(cfg.widths, cfg.input_size, cfg.seed, o);
        write_text(dir / "scaling.csv", nf::scaling_sweep_csv(rows));
        std::printf("scaling sweep over %zu widths\n", rows.size());
        return 0;
    }
    if (cfg.kind != "error")
    {
        throw nf::Error(nf::ErrorKind::usage, "--kind must be error or scaling");
    }
    if (cfg.labels.empty())
    {
        throw nf::Error(nf::ErrorKind::usage, "error sweep needs --labels");
    }
    if (cfg.inputs.empty())
    {
        throw nf::Error(nf::ErrorKind::usage, "error sweep needs --inputs");
    }
    const nf::DeploymentImage image = obtain_image(cfg);
    nf::Dataset data;
    data.frames = nf::read_f32_blob(cfg.inputs);
    data.labels = nf::read_labels(cfg.labels);
    data.input_size = image.layers.front().spec.output_shape.size();
    std::vector<std::int64_t> ts = cfg.t_values;
    if (ts.empty())
    {
        for (std::int64_t t = 10; t <= 200; t += 10)
        {
            ts.push_back(t);
        }
    }
    const auto points = nf::error_sweep(image, data, ts);
    write_text(dir / "error_sweep.csv", nf::error_sweep_csv(points));
    std::printf("error sweep over %zu step budgets\n", points.size());
    return 0;
}

void add_model_flags(CLI::App *app, Config &cfg)
{
    app->add_option("--model", cfg.model, "Model manifest (JSON)")->check(CLI::ExistingFile);
    app->add_option("--blob", cfg.blob, "Weight blob overriding the manifest's")->check(CLI::ExistingFile);
    app->add_option("--calib", cfg.calib, "Calibration frames (f32le)")->check(CLI::ExistingFile);
    app->add_option("--chips", cfg.chips, "Chips available")->check(CLI::PositiveNumber);
    app->add_option("--beam", cfg.beam, "Partitioner beam width M")->check(CLI::PositiveNumber);
    app->add_option("--alpha", cfg.alpha, "Cost weights a0,a1,a2,a3");
    app->add_option("--sharing", cfg.sharing, "Axon sharing: on or off");
    app->add_option("--compression", cfg.compression, "auto, sparse, dense or runlength");
    app->add_option("--timesteps", cfg.timesteps, "Simulation steps")->check(CLI::NonNegativeNumber);
    app->add_option("--seed", cfg.seed, "Seed for generated networks");
    app->add_option("--out", cfg.out, "Output directory");
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Neuromorphic network compiler: partition, map, simulate and sweep"};
    app.require_subcommand(1);
    Config cfg;

    CLI::App *compile = app.add_subcommand("compile", "Partition and map a model; write image and reports");
    add_model_flags(compile, cfg);

    CLI::App *run = app.add_subcommand("run", "Simulate a compiled image on inputs");
    add_model_flags(run, cfg);
    run->add_option("--image", cfg.image, "Deployment image from compile")->check(CLI::ExistingFile);
    run->add_option("--inputs", cfg.inputs, "Analog frames (f32le)")->check(CLI::ExistingFile);
    run->add_option("--raster", cfg.raster, "Event rasters (JSON)")->check(CLI::ExistingFile);
    run->add_option("--labels", cfg.labels, "Labels, one integer per sample")->check(CLI::ExistingFile);

    CLI::App *sweep = app.add_subcommand("sweep", "Error-vs-steps curve or core scaling table");
    add_model_flags(sweep, cfg);
    sweep->add_option("--kind", cfg.kind, "error or scaling");
    sweep->add_option("--image", cfg.image, "Deployment image from compile")->check(CLI::ExistingFile);
    sweep->add_option("--inputs", cfg.inputs, "Analog frames (f32le)")->check(CLI::ExistingFile);
    sweep->add_option("--labels", cfg.labels, "Labels, one integer per sample")->check(CLI::ExistingFile);
    sweep->add_option("--t-values", cfg.t_values, "Step budgets")->delimiter(',');
    sweep->add_option("--widths", cfg.widths, "Conv family widths")->delimiter(',');
    sweep->add_option("--input-size", cfg.input_size, "Conv family input side")->check(CLI::PositiveNumber);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : nf::exit_code(nf::ErrorKind::usage);
    }

    try
    {
        if (*compile)
        {
            return cmd_compile(cfg);
        }
        if (*run)
        {
            return cmd_run(cfg);
        }
        return cmd_sweep(cfg);
    }
    catch (const nf::Error &e)
    {
        std::fprintf(stderr, "nfc: %s\n", e.what());
        return nf::exit_code(e.kind());
    }
    catch (const std::exception &e)
    {
        std::fprintf(stderr, "nfc: %s\n", e.what());
        return 1;
    }
}
