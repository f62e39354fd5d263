// srt: command-line front end for sub-token translation ensembling.
//
// Exit codes: 0 success, 1 runtime/model error, 2 usage error.

#include "srt/alloc_tracker.hpp"

SRT_INSTALL_ALLOC_TRACKER()

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "srt/bench.hpp"
#include "srt/srt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string weights;
    std::string image;
    int layer = -1; // -1: last layer
    int d = 3;
    std::string stat = "mean";
    std::string masked = "on";
    std::string path = "both";
    std::string out = "srt_out";
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    bool override_shift_bound = false;
    std::size_t random = 0; // >0: identity + random-1 sampled shifts instead of the grid
};

void from_json(const json& j, RunConfig& c)
{
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("weights", c.weights);
    get("image", c.image);
    get("layer", c.layer);
    get("d", c.d);
    get("stat", c.stat);
    get("masked", c.masked);
    get("path", c.path);
    get("out", c.out);
    get("seed", c.seed);
    get("jobs", c.jobs);
    get("override_shift_bound", c.override_shift_bound);
    get("random", c.random);
}

json to_json(const RunConfig& c)
{
    return {{"weights", c.weights}, {"image", c.image},   {"layer", c.layer}, {"d", c.d},
            {"stat", c.stat},       {"masked", c.masked}, {"path", c.path},   {"out", c.out},
            {"seed", c.seed},       {"jobs", c.jobs},     {"override_shift_bound", c.override_shift_bound},
            {"random", c.random}};
}

// --config is read before CLI11 parsing so explicit flags override the file.
std::optional<std::string> find_config_arg(int argc, char** argv)
{
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return std::nullopt;
}

std::uint64_t file_checksum(const fs::path& p)
{
    const auto bytes = srt::detail::read_file(p);
    return srt::fnv1a64(std::span<const std::uint8_t>(bytes));
}

srt::Statistic parse_stat(const std::string& s)
{
    if (s == "mean") return srt::Statistic::mean;
    if (s == "median") return srt::Statistic::median;
    if (s == "variance") return srt::Statistic::variance;
    throw UsageError("--stat must be mean, median or variance");
}

std::size_t resolve_layer(const RunConfig& cfg, const srt::ViTModel& model)
{
    if (cfg.layer == -1) return model.depth();
    if (cfg.layer < 0 || static_cast<std::size_t>(cfg.layer) > model.depth())
        throw UsageError("--layer " + std::to_string(cfg.layer) + " out of range; valid layers are 0.." +
                         std::to_string(model.depth()));
    return static_cast<std::size_t>(cfg.layer);
}

void validate_common(const RunConfig& cfg)
{
    if (cfg.d < 0) throw UsageError("--d must be non-negative");
    if (cfg.jobs < 1) throw UsageError("--jobs must be at least 1");
    if (cfg.masked != "on" && cfg.masked != "off") throw UsageError("--masked must be on or off");
    if (cfg.path != "naive" && cfg.path != "efficient" && cfg.path != "both")
        throw UsageError("--path must be naive, efficient or both");
    (void)parse_stat(cfg.stat);
}

srt::SrtOptions make_options(const RunConfig& cfg)
{
    srt::SrtOptions o;
    o.agg.stat = parse_stat(cfg.stat);
    o.agg.masked = cfg.masked == "on";
    o.jobs = cfg.jobs;
    o.override_shift_bound = cfg.override_shift_bound;
    return o;
}

srt::PerturbationSet make_pset(const RunConfig& cfg)
{
    return cfg.random > 0 ? srt::sample_random(cfg.d, cfg.random, cfg.seed) : srt::build_grid(cfg.d);
}

struct Inputs {
    srt::ViTModel model;
    srt::Image image;
    std::size_t layer;
};

Inputs load_inputs(const RunConfig& cfg)
{
    if (cfg.weights.empty()) throw UsageError("--weights is required");
    if (cfg.image.empty()) throw UsageError("--image is required");
    validate_common(cfg);
    auto model = srt::load_weights(cfg.weights);
    const std::size_t layer = resolve_layer(cfg, model);
    auto image = srt::read_ppm(cfg.image);
    return {std::move(model), std::move(image), layer};
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json base_manifest(const std::string& command, const RunConfig& cfg, const Inputs& in, const srt::PerturbationSet& pset)
{
    json shifts = json::array();
    for (auto s : pset) shifts.push_back({s.du, s.dv});
    return {{"command", command},
            {"config", to_json(cfg)},
            {"layer", in.layer},
            {"passes", pset.size()},
            {"shifts", shifts},
            {"checksums",
             {{"weights", srt::hex64(file_checksum(cfg.weights))}, {"image", srt::hex64(file_checksum(cfg.image))}}}};
}

void write_json(const fs::path& p, const json& j)
{
    std::ofstream out(p);
    if (!out) throw srt::FormatError("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

srt::DenseField tokens_as_field(const srt::FeatureMap& f)
{
    srt::DenseField out(f.grid_h(), f.grid_w(), f.channels());
    out.data = f.data;
    for (float& w : out.weight.data()) w = 1.0f;
    return out;
}

int cmd_enhance(const RunConfig& cfg)
{
    const auto in = load_inputs(cfg);
    const auto pset = make_pset(cfg);
    const auto opts = make_options(cfg);
    fs::create_directories(cfg.out);

    json timings = json::object();
    auto t0 = std::chrono::steady_clock::now();
    const srt::DenseField field = srt::srt_dense(in.model, in.image, in.layer, pset, opts);
    timings["dense"] = seconds_since(t0);
    srt::write_srtf(field, fs::path(cfg.out) / "field.srtf");

    auto manifest = base_manifest("enhance", cfg, in, pset);
    manifest["checksums"]["field"] = srt::hex64(srt::fnv1a64(field.data.data()));

    std::optional<srt::FeatureMap> naive, efficient;
    if (cfg.path != "efficient") {
        t0 = std::chrono::steady_clock::now();
        naive = srt::retokenize(field, in.model.config(), in.layer);
        timings["retokenize"] = seconds_since(t0);
        manifest["checksums"]["tokens_naive"] = srt::hex64(srt::fnv1a64(naive->data.data()));
    }
    if (cfg.path != "naive") {
        if (opts.agg.stat != srt::Statistic::mean || !opts.agg.masked) {
            if (cfg.path == "efficient")
                throw srt::UnsupportedStatistic("the efficient path supports only the masked mean");
            std::cerr << "warning: efficient path skipped; it supports only the masked mean\n";
        } else {
            t0 = std::chrono::steady_clock::now();
            efficient = srt::srt_tokens_efficient(in.model, in.image, in.layer, pset, opts);
            timings["efficient"] = seconds_since(t0);
            manifest["checksums"]["tokens_efficient"] = srt::hex64(srt::fnv1a64(efficient->data.data()));
        }
    }
    if (naive && efficient) {
        manifest["naive_efficient_checksum_equal"] =
            srt::fnv1a64(naive->data.data()) == srt::fnv1a64(efficient->data.data());
        manifest["naive_efficient_max_abs_dev"] = srt::max_abs_diff(naive->data, efficient->data);
    }
    const srt::FeatureMap& tokens = efficient ? *efficient : *naive;
    srt::write_srtf(tokens_as_field(tokens), fs::path(cfg.out) / "tokens.srtf");
    manifest["timings"] = timings;
    write_json(fs::path(cfg.out) / "manifest.json", manifest);
    std::cout << "passes " << pset.size() << "\nwrote " << (fs::path(cfg.out) / "field.srtf").string() << ", "
              << (fs::path(cfg.out) / "tokens.srtf").string() << '\n';
    return kExitOk;
}

int cmd_visualize(const RunConfig& cfg)
{
    const auto in = load_inputs(cfg);
    const auto pset = make_pset(cfg);
    fs::create_directories(cfg.out);
    const auto field = srt::srt_dense(in.model, in.image, in.layer, pset, make_options(cfg));
    const auto basis = srt::fit_pca(field);
    const auto img = srt::render_pca(field, basis);
    const auto path = fs::path(cfg.out) / "visualization.ppm";
    srt::write_ppm(img, path);
    auto manifest = base_manifest("visualize", cfg, in, pset);
    manifest["eigenvalues"] = basis.eigenvalues;
    manifest["explained_fraction"] = basis.explained_fraction();
    manifest["checksums"]["output"] = srt::hex64(file_checksum(path));
    write_json(fs::path(cfg.out) / "manifest.json", manifest);
    std::cout << "wrote " << path.string() << '\n';
    return kExitOk;
}

int cmd_noise_map(const RunConfig& cfg, double gamma)
{
    const auto in = load_inputs(cfg);
    const auto pset = make_pset(cfg);
    fs::create_directories(cfg.out);
    const auto nm = srt::noise_map(in.model, in.image, in.layer, pset, make_options(cfg));
    const auto pgm = fs::path(cfg.out) / "noise_map.pgm";
    srt::write_ppm(srt::render_scalar(nm.values, gamma), pgm);
    const auto csv = fs::path(cfg.out) / "noise_histogram.csv";
    {
        std::ofstream out(csv);
        out << "bin_lo,bin_hi,count\n";
        for (std::size_t i = 0; i < nm.histogram.counts.size(); ++i)
            out << srt::sr::format_double(nm.histogram.bin_lo(i)) << ',' << srt::sr::format_double(nm.histogram.bin_hi(i))
                << ',' << nm.histogram.counts[i] << '\n';
    }
    double energy = 0.0;
    for (float v : nm.values.data()) energy += static_cast<double>(v) * v;
    auto manifest = base_manifest("noise-map", cfg, in, pset);
    manifest["mean_energy"] = energy / static_cast<double>(nm.values.size());
    manifest["checksums"]["output"] = srt::hex64(file_checksum(pgm));
    write_json(fs::path(cfg.out) / "manifest.json", manifest);
    std::cout << "wrote " << pgm.string() << ", " << csv.string() << '\n';
    return kExitOk;
}

int cmd_bench(const RunConfig& cfg, const std::vector<int>& levels, std::size_t parallel_jobs, int reps)
{
    if (parallel_jobs < 1) throw UsageError("--jobs must be at least 1");
    for (int d : levels)
        if (d < 0) throw UsageError("--levels must be non-negative");
    srt::ViTConfig toy; // 64x64, patch 8, C=32, depth 2, 4 heads
    const auto model = cfg.weights.empty() ? srt::make_toy_model(cfg.seed, toy) : srt::load_weights(cfg.weights);
    const std::size_t layer = resolve_layer(cfg, model);
    const auto& mc = model.config();
    const auto image = cfg.image.empty() ? srt::synthetic::random_image(mc.img_h, mc.img_w, mc.in_chans, cfg.seed + 1)
                                         : srt::read_ppm(cfg.image);
    fs::create_directories(cfg.out);
    const auto report = srt::bench::run_bench(model, image, layer, levels, parallel_jobs, reps);
    srt::bench::write_table(std::cout, report);
    {
        std::ofstream out(fs::path(cfg.out) / "bench.csv");
        srt::bench::write_csv(out, report);
    }
    for (const auto& row : report.rows) {
        if (row.level == 0)
            std::cout << "d=0 " << row.path << " / single forward = "
                      << row.seconds / report.single_forward_seconds << '\n';
    }
    for (int d : levels) {
        const auto& naive = report.find("naive", d);
        const auto& eff = report.find("efficient", d);
        const auto& par = report.find("efficient-parallel", d);
        std::cout << "d=" << d << " peak efficient/naive = "
                  << (report.memory_tracked && naive.peak_bytes > 0
                          ? std::to_string(static_cast<double>(eff.peak_bytes) / static_cast<double>(naive.peak_bytes))
                          : std::string("n/a"))
                  << ", speedup jobs=" << par.jobs << " vs 1 = " << eff.seconds / par.seconds << '\n';
    }
    std::cout << "hardware threads: " << std::thread::hardware_concurrency() << '\n';
    return kExitOk;
}

struct Sr1dArgs {
    double step = 1.0;
    std::string dither = "uniform";
    double amplitude = 0.5;
    std::size_t samples = 256;
    double ramp_start = 0.0;
    double ramp_step = 0.01;
    std::size_t ramp_count = 100;
};

int cmd_sr1d(const RunConfig& cfg, const Sr1dArgs& a)
{
    srt::sr::DitherSpec d;
    if (a.dither == "uniform") d.dist = srt::sr::DitherSpec::Dist::uniform;
    else if (a.dither == "gaussian") d.dist = srt::sr::DitherSpec::Dist::gaussian;
    else if (a.dither == "none") d.dist = srt::sr::DitherSpec::Dist::none;
    else throw UsageError("--dither must be uniform, gaussian or none");
    if (!(a.step > 0.0)) throw UsageError("--step must be positive");
    if (a.samples < 1) throw UsageError("--samples must be at least 1");
    if (a.ramp_count < 1) throw UsageError("--ramp-count must be at least 1");
    if (d.dist != srt::sr::DitherSpec::Dist::none && !(a.amplitude > 0.0))
        throw UsageError("--amplitude must be positive");
    d.amplitude = a.amplitude;
    d.samples = a.samples;
    d.seed = cfg.seed;
    const auto q = srt::sr::Quantizer::round(a.step);
    const auto signal = srt::sr::ramp(a.ramp_start, a.ramp_step, a.ramp_count);
    const auto r = srt::sr::mse_sweep(q, signal, d, cfg.jobs);
    fs::create_directories(cfg.out);
    const auto path = fs::path(cfg.out) / "sr1d.csv";
    {
        std::ofstream out(path, std::ios::binary);
        srt::sr::write_csv(out, r);
    }
    std::cout << "mse_plain " << srt::sr::format_double(r.mse_plain) << "\nmse_dithered "
              << srt::sr::format_double(r.mse_dithered) << "\nwrote " << path.string() << '\n';
    return kExitOk;
}

struct ToyArgs {
    std::string out = "toy.vitw";
    std::size_t img_h = 64, img_w = 64, patch = 8, dim = 32, depth = 2, heads = 4, in_chans = 3;
    double mlp_ratio = 4.0;
    bool no_cls = false;
};

int cmd_make_toy(const RunConfig& cfg, const ToyArgs& a)
{
    srt::ViTConfig c;
    c.img_h = a.img_h;
    c.img_w = a.img_w;
    c.patch_h = c.patch_w = a.patch;
    c.dim = a.dim;
    c.depth = a.depth;
    c.heads = a.heads;
    c.mlp_ratio = a.mlp_ratio;
    c.use_cls = !a.no_cls;
    c.in_chans = a.in_chans;
    try {
        c.validate();
    } catch (const srt::DimensionError& e) {
        throw UsageError(e.what());
    }
    const auto wc = srt::make_toy_weights(cfg.seed, c);
    srt::save_weights(wc, a.out);
    std::cout << "checksum " << srt::hex64(file_checksum(a.out)) << "\nblocks.0.attn.qkv.weight "
              << srt::hex64(wc.checksum("blocks.0.attn.qkv.weight")) << "\nwrote " << a.out << '\n';
    return kExitOk;
}

int cmd_inspect(const RunConfig& cfg)
{
    if (cfg.weights.empty()) throw UsageError("--weights is required");
    const auto wc = srt::parse_container(srt::detail::read_file(cfg.weights));
    const auto model = srt::to_model(wc); // completeness check
    const auto& c = model.config();
    std::cout << "img " << c.img_h << "x" << c.img_w << " patch " << c.patch_h << "x" << c.patch_w << " in_chans "
              << c.in_chans << " dim " << c.dim << " depth " << c.depth << " heads " << c.heads << " mlp_ratio "
              << c.mlp_ratio << " cls " << (c.use_cls ? "yes" : "no") << '\n';
    for (const auto& [name, t] : wc.tensors)
        std::cout << name << ' ' << srt::shape_string(t.shape()) << ' ' << srt::hex64(srt::fnv1a64(t.data())) << '\n';
    std::cout << "checksum " << srt::hex64(file_checksum(cfg.weights)) << '\n';
    return kExitOk;
}

void add_run_flags(CLI::App* sub, RunConfig& cfg)
{
    sub->add_option("--weights", cfg.weights, "VITW weight file");
    sub->add_option("--image", cfg.image, "input image (binary PPM/PGM)");
    sub->add_option("--layer", cfg.layer, "tap layer 0..depth (default: last)");
    sub->add_option("--d", cfg.d, "perturbation level in pixels");
    sub->add_option("--stat", cfg.stat, "mean | median | variance");
    sub->add_option("--masked", cfg.masked, "on | off");
    sub->add_option("--path", cfg.path, "naive | efficient | both");
    sub->add_option("--out", cfg.out, "output directory");
    sub->add_option("--seed", cfg.seed, "seed");
    sub->add_option("--jobs", cfg.jobs, "parallel forward passes");
    sub->add_flag("--override-shift-bound", cfg.override_shift_bound, "allow shifts beyond half a token");
    sub->add_option("--random", cfg.random, "sample this many shifts (identity included) instead of the full grid");
    sub->add_option("--config", "JSON RunConfig; explicit flags take precedence");
}

} // namespace

int main(int argc, char** argv)
{
    RunConfig cfg;
    try {
        if (auto path = find_config_arg(argc, argv)) {
            std::ifstream in(*path);
            if (!in) throw UsageError("cannot read config " + *path);
            cfg = json::parse(in).get<RunConfig>();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    CLI::App app{"Sub-token translation ensembling for Vision Transformers"};
    app.require_subcommand(1);

    auto* enhance = app.add_subcommand("enhance", "ensembled dense field, tokens and manifest");
    auto* visualize = app.add_subcommand("visualize", "PCA rendering of the ensembled field");
    auto* noise = app.add_subcommand("noise-map", "per-pixel ensemble noise map and histogram");
    auto* bench = app.add_subcommand("bench", "naive vs efficient timing and memory");
    auto* sr1d = app.add_subcommand("sr1d", "scalar stochastic resonance simulation");
    auto* toy = app.add_subcommand("make-toy", "write a seeded toy weight file");
    auto* inspect = app.add_subcommand("inspect-weights", "print a weight file's config and tensors");
    for (auto* sub : {enhance, visualize, noise, bench, sr1d, toy, inspect}) add_run_flags(sub, cfg);

    double gamma = 0.5;
    noise->add_option("--gamma", gamma, "display gamma");

    std::vector<int> levels{0, 1, 2, 3};
    std::size_t parallel_jobs = 4;
    int reps = 3;
    bench->add_option("--levels", levels, "perturbation levels")->delimiter(',');
    bench->add_option("--parallel-jobs", parallel_jobs, "width of the parallel efficient path");
    bench->add_option("--reps", reps, "timing repetitions (best of)");

    Sr1dArgs sa;
    sr1d->add_option("--step", sa.step, "quantizer step");
    sr1d->add_option("--dither", sa.dither, "uniform | gaussian | none");
    sr1d->add_option("--amplitude", sa.amplitude, "uniform half-width or gaussian sigma");
    sr1d->add_option("--samples", sa.samples, "dither samples per input");
    sr1d->add_option("--ramp-start", sa.ramp_start);
    sr1d->add_option("--ramp-step", sa.ramp_step);
    sr1d->add_option("--ramp-count", sa.ramp_count);

    ToyArgs ta;
    toy->add_option("--file", ta.out, "output weight file");
    toy->add_option("--img-h", ta.img_h);
    toy->add_option("--img-w", ta.img_w);
    toy->add_option("--patch", ta.patch);
    toy->add_option("--dim", ta.dim);
    toy->add_option("--depth", ta.depth);
    toy->add_option("--heads", ta.heads);
    toy->add_option("--mlp-ratio", ta.mlp_ratio);
    toy->add_option("--in-chans", ta.in_chans);
    toy->add_flag("--no-cls", ta.no_cls);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*enhance) return cmd_enhance(cfg);
        if (*visualize) return cmd_visualize(cfg);
        if (*noise) return cmd_noise_map(cfg, gamma);
        if (*bench) return cmd_bench(cfg, levels, parallel_jobs, reps);
        if (*sr1d) return cmd_sr1d(cfg, sa);
        if (*toy) {
            // make-toy writes a file, not a directory: --file wins, else --out.
            if (toy->count("--file") == 0 && toy->count("--out") > 0) ta.out = cfg.out;
            return cmd_make_toy(cfg, ta);
        }
        if (*inspect) return cmd_inspect(cfg);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
