#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>

#include "config.hpp"

using namespace pisco;
using namespace pisco::cli;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "1.0.0";

enum ExitCode { kOk = 0, kGeneric = 1, kConfig = 2, kDiverged = 3, kInsufficient = 4 };

struct Run {
    ExperimentConfig cfg;
    fs::path out;
    bool quiet = false;
    json outputs = json::array();
    json summary = json::object();
    json seeds = json::object();

    fs::path file(const std::string& name) {
        outputs.push_back(name);
        return out / name;
    }

    void log(const std::string& msg) const {
        if (!quiet) std::cout << msg << std::endl;
    }
};

std::string frame_name(std::size_t f, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%03zu%s", f, ext);
    return buf;
}

std::uint64_t noise_seed(const ExperimentConfig& c) { return c.seed ^ 0x9e3779b97f4a7c15ULL; }

std::vector<double> phantom_frame_times(int frames) {
    std::vector<double> t;
    const double den = std::max(frames - 1, 1);
    for (int f = 0; f < frames; ++f) t.push_back(f / den);
    return t;
}

PhantomSpec make_spec(const ExperimentConfig& c) {
    PhantomSpec s = cardiac_phantom(c.phantom.n, c.phantom.n_coils);
    if (c.phantom.static_motion)
        for (auto& e : s.components) e.dcx = e.dcy = e.dax = e.day = 0.0;
    validate_phantom(s);
    return s;
}

double scale_of(const MultiCoilKSpace& k, Scale s) {
    if (s == Scale::Natural) return 1.0;
    const double m = k.values.cwiseAbs().maxCoeff();
    if (!(m > 0.0)) throw InvalidArgument("k-space is all zero");
    return 1.0 / m;
}

MultiCoilKSpace with_noise(MultiCoilKSpace k, const ExperimentConfig& c) {
    if (c.noise_over_median > 0.0) k = add_noise(k, c.noise_over_median * median_magnitude(k.values), noise_seed(c));
    return k;
}

/// Full-grid Cartesian data at t = 0: scaled reference and noisy copy.
struct CartesianData {
    CoilSensitivities sens;
    MultiCoilKSpace reference;
    MultiCoilKSpace noisy;
    SamplingMask mask;
    MultiCoilKSpace measured;
    double scale = 1.0;
};

CartesianData cartesian_data(const ExperimentConfig& c) {
    const int n = c.phantom.n;
    CartesianData d;
    d.sens = simulate_sensitivities(n, n, c.phantom.n_coils);
    d.reference = nudft_forward(render_phantom(make_spec(c), 0.0), d.sens, make_cartesian_grid(n, n));
    d.scale = scale_of(d.reference, c.scale);
    d.reference.values *= d.scale;
    d.noisy = with_noise(d.reference, c);
    d.mask = make_mask(n, n, c.mask.acceleration, c.mask.center_fraction, c.mask_seed());
    d.measured = apply_mask(d.noisy, d.mask);
    return d;
}

/// Dynamic radial acquisition (or the masked grid for a Cartesian trajectory).
MultiCoilKSpace acquired_data(const ExperimentConfig& c, double* scale_out) {
    if (c.trajectory.kind == TrajectoryKind::CartesianGrid) {
        auto d = cartesian_data(c);
        *scale_out = d.scale;
        return d.measured;
    }
    const auto spec = make_spec(c);
    const auto sens = simulate_sensitivities(c.phantom.n, c.phantom.n, c.phantom.n_coils);
    Trajectory traj = c.trajectory.kind == TrajectoryKind::RadialUniform
                          ? Trajectory::uniform(c.trajectory.spokes_per_frame * c.phantom.frames, c.n_fe())
                          : Trajectory::golden_angle(c.trajectory.spokes_per_frame * c.phantom.frames, c.n_fe());
    auto acq = simulate_acquisition(spec, sens, traj, c.phantom.frames);
    *scale_out = scale_of(acq, c.scale);
    acq.values *= *scale_out;
    return with_noise(acq, c);
}

// ---------------------------------------------------------------------------
// commands

void cmd_phantom(Run& run) {
    const auto& c = run.cfg;
    const auto spec = make_spec(c);
    const auto sens = simulate_sensitivities(c.phantom.n, c.phantom.n, c.phantom.n_coils);
    double scale = 1.0;
    const auto acq = acquired_data(c, &scale);
    io::write_kspace(run.file("kspace.kspc"), acq, {{"scale", scale}});
    if (c.trajectory.kind == TrajectoryKind::CartesianGrid) {
        const auto d = cartesian_data(c);
        io::write_json(run.file("mask.json"), io::mask_to_json(d.mask));
        io::write_kspace(run.file("reference.kspc"), d.reference, {{"scale", scale}});
    }
    const auto times = phantom_frame_times(c.phantom.frames);
    io::CsvWriter csv(run.file("frame_times.csv"), {"frame", "t"});
    for (std::size_t f = 0; f < times.size(); ++f) {
        const ComplexImage img = render_phantom(spec, times[f]);
        io::write_image(run.file("frames/" + frame_name(f, ".kspc")), img, times[f]);
        io::write_magnitude_png(run.file("frames/" + frame_name(f, ".png")), img);
        csv.row(f, times[f]);
    }
    run.summary["n_samples"] = acq.n_samples();
    run.summary["frames"] = times.size();
    run.seeds["noise"] = noise_seed(c);
    run.seeds["mask"] = c.mask_seed();
    run.log("phantom: " + std::to_string(acq.n_samples()) + " samples, " + std::to_string(times.size()) + " frames");
}

void cmd_validate_kernel(Run& run) {
    const auto& c = run.cfg;
    const int n = c.phantom.n;
    const ComplexImage img = render_phantom(make_spec(c), 0.0);
    const auto sens = simulate_sensitivities(n, n, c.phantom.n_coils);
    const double scale = scale_of(nudft_forward(img, sens, make_cartesian_grid(n, n)), c.scale);
    const ExactKSpace ks(img, sens, scale);

    io::CsvWriter disp(run.file("dispersion.csv"), {"kernel", "order", "n_subsets", "mean_cov", "mean_variance"});
    io::CsvWriter entries(run.file("dispersion_entries.csv"), {"kernel", "entry", "mean_abs", "cov", "variance"});
    for (const KernelKind kind : c.validate.kernels) {
        KernelGeometry g = c.pisco.geometry;
        g.kind = kind;
        const std::string name = to_string(kind);
        std::mt19937_64 rng_sorted(c.seed), rng_random(c.seed);
        const auto sorted = kernel_weight_sets(ks, n, g, c.pisco, c.validate.n_subsets, PartitionOrder::ByRadius, rng_sorted);
        const auto random = kernel_weight_sets(ks, n, g, c.pisco, c.validate.n_subsets, PartitionOrder::Shuffled, rng_random);
        const auto ds = weight_dispersion(sorted), dr = weight_dispersion(random);
        disp.row(name, "sorted", sorted.size(), ds.mean_cov, ds.mean_variance);
        disp.row(name, "random", random.size(), dr.mean_cov, dr.mean_variance);
        for (Eigen::Index e = 0; e < ds.cov.size(); ++e)
            entries.row(name, static_cast<long>(e), ds.mean_abs.data()[e], ds.cov.data()[e], ds.variance.data()[e]);
        for (const auto& [order, sets] : {std::pair{"sorted", &sorted}, std::pair{"random", &random}}) {
            const std::string stem = "weights_" + name + "_" + order;
            io::write_heatmap_png(run.file(stem + "_magnitude.png"), stacked_weights(*sets, false));
            const RealImage phase = stacked_weights(*sets, true);
            io::write_gray_png(run.file(stem + "_phase.png"),
                               RealImage((phase.array() + std::numbers::pi) / (2.0 * std::numbers::pi)));
        }
        run.summary[name] = {{"mean_cov_sorted", ds.mean_cov},
                             {"mean_variance_sorted", ds.mean_variance},
                             {"mean_variance_random", dr.mean_variance}};
        run.log("validate-kernel: " + name + " mean CoV " + io::fmt(ds.mean_cov) + ", variance sorted " +
                io::fmt(ds.mean_variance) + " random " + io::fmt(dr.mean_variance));
    }
    run.seeds["subsets"] = c.seed;
}

void cmd_noise_sweep(Run& run) {
    const auto& c = run.cfg;
    const int n = c.phantom.n;
    const ComplexImage img = render_phantom(make_spec(c), 0.0);
    const auto sens = simulate_sensitivities(n, n, c.phantom.n_coils);
    const auto ideal = nudft_forward(img, sens, make_cartesian_grid(n, n));
    const double scale = scale_of(ideal, c.scale);
    const SweepBase base{img, sens, scale};
    // image noise is relative to the median over the object support
    std::vector<double> support;
    for (Eigen::Index i = 0; i < img.size(); ++i)
        if (std::abs(img.data()[i]) > 0.0) support.push_back(std::abs(img.data()[i]));
    if (support.empty()) throw InvalidArgument("noise sweep: empty phantom");
    std::nth_element(support.begin(), support.begin() + support.size() / 2, support.end());
    const double median_image = support[support.size() / 2];
    const double median_kspace = scale * median_magnitude(ideal.values);

    io::CsvWriter csv(run.file("sweep.csv"), {"sigma", "seed", "raw_loss", "normalized_loss", "measure", "domain"});
    io::CsvWriter trend(run.file("trend.csv"), {"measure", "domain", "sigma_over_median", "mean_loss", "normalized", "spearman"});
    std::vector<io::Series> series;
    for (const auto measure : c.sweep.measures)
        for (const auto domain : c.sweep.domains) {
            const double med = domain == NoiseDomain::KSpace ? median_kspace : median_image;
            std::vector<double> sigmas;
            for (double f : c.sweep.sigmas_over_median) sigmas.push_back(f * med);
            const auto curve = consistency_sweep(base, sigmas, domain, measure, c.sweep.seeds, c.pisco);
            for (const auto& s : curve.samples)
                csv.row(s.sigma, s.seed, s.raw_loss, s.normalized_loss, to_string(measure), to_string(domain));
            const double rho = curve.sigmas.size() > 1 ? spearman(curve.sigmas, curve.mean_loss) : 0.0;
            for (std::size_t i = 0; i < sigmas.size(); ++i)
                trend.row(to_string(measure), to_string(domain), c.sweep.sigmas_over_median[i], curve.mean_loss[i],
                          curve.normalized[i], rho);
            series.push_back({c.sweep.sigmas_over_median, curve.normalized});
            run.summary[to_string(measure) + "_" + to_string(domain) + "_spearman"] = rho;
            run.log("noise-sweep: " + to_string(measure) + "/" + to_string(domain) + " spearman " + io::fmt(rho));
        }
    io::write_png(run.file("sweep.png"), io::line_plot(series));
    run.seeds["sweep"] = c.sweep.seeds;
}

void cmd_fit(Run& run) {
    const auto& c = run.cfg;
    const int n = c.phantom.n;
    const auto d = cartesian_data(c);
    const auto res = fit_kspace(d.measured, d.mask, c.fit);
    const auto zf = zero_filled(d.measured, n, n);
    io::write_history(run.file("loss.csv"), res.history);
    io::write_kspace(run.file("fitted.kspc"), res.fitted, {{"scale", d.scale}});
    io::write_json(run.file("mask.json"), io::mask_to_json(d.mask));

    const auto rz = fill_report(zf, d.mask, d.reference, d.sens);
    const auto rf = fill_report(res.fitted, d.mask, d.reference, d.sens);
    io::CsvWriter report(run.file("report.csv"), {"method", "psnr", "recovered_fraction", "difference_energy"});
    report.row("zero_filled", rz.psnr_db, rz.recovered_fraction, rz.difference_energy);
    report.row("pisco_fit", rf.psnr_db, rf.recovered_fraction, rf.difference_energy);

    const ComplexImage ref = ifft_recon(d.reference, d.sens);
    const ComplexImage xz = ifft_recon(zf, d.sens), xf = ifft_recon(res.fitted, d.sens);
    io::write_magnitude_png(run.file("recon_reference.png"), ref);
    io::write_magnitude_png(run.file("recon_zero_filled.png"), xz);
    io::write_magnitude_png(run.file("recon_fit.png"), xf);
    // differences on the metric scale, amplified 5x, shared between methods
    const RealImage nref = normalize_for_metrics(ref);
    for (const auto& [name, x] : {std::pair{"zero_filled", &xz}, std::pair{"fit", &xf}})
        io::write_gray_png(run.file(std::string("difference_") + name + ".png"),
                           RealImage(5.0 * (normalize_for_metrics(*x) - nref).cwiseAbs()));

    run.summary["zero_filled_psnr"] = rz.psnr_db;
    run.summary["fit_psnr"] = rf.psnr_db;
    run.summary["recovered_fraction"] = rf.recovered_fraction;
    run.seeds["mask"] = c.mask_seed();
    run.seeds["noise"] = noise_seed(c);
    run.seeds["fit"] = c.fit.seed;
    run.log("fit: PSNR " + io::fmt(rz.psnr_db) + " -> " + io::fmt(rf.psnr_db) + " dB, recovered fraction " +
            io::fmt(rf.recovered_fraction));
}

void cmd_train(Run& run) {
    const auto& c = run.cfg;
    double scale = 1.0;
    AcquiredSet acq;
    if (!c.input.empty()) {
        const auto f = io::read_kspace(c.input);
        acq = f.data;
        scale = f.header.value("scale", 1.0);
    } else {
        acq = acquired_data(c, &scale);
    }
    TrainConfig tc = c.train.cfg;
    if (c.train.dc_epsilon_over_median > 0.0) tc.dc_epsilon = c.train.dc_epsilon_over_median * median_magnitude(acq.values);
    NikArchitecture arch = c.train.arch;
    arch.n_coils = static_cast<int>(acq.n_coils());
    const auto res = train(acq, arch, tc);
    io::write_history(run.file("history.csv"), res.history);
    io::write_checkpoint(run.file("model.nikc"), res.model,
                         {{"dc_epsilon", res.dc_epsilon}, {"scale", scale}, {"n_fe", acq.n_fe}});
    if (!res.history.empty()) {
        run.summary["final_dc"] = res.history.back().dc;
        run.summary["final_pisco"] = res.history.back().pisco;
    }
    run.summary["n_samples"] = acq.n_samples();
    run.seeds["train"] = tc.seed;
    run.seeds["noise"] = noise_seed(c);
    run.log("train: " + std::to_string(res.history.size()) + " epochs on " + std::to_string(acq.n_samples()) +
            " samples");
}

void cmd_recon(Run& run) {
    const auto& c = run.cfg;
    if (c.recon.checkpoint.empty()) throw ConfigError("missing key 'recon.checkpoint'");
    const auto ck = io::read_checkpoint(c.recon.checkpoint);
    const int n = c.recon.grid > 0 ? c.recon.grid : c.phantom.n;
    const auto sens = simulate_sensitivities(n, n, ck.model.n_coils());
    const auto times = c.recon.times.empty() ? phantom_frame_times(c.phantom.frames) : c.recon.times;
    std::vector<RealImage> mags;
    io::CsvWriter csv(run.file("frame_times.csv"), {"frame", "t"});
    for (std::size_t f = 0; f < times.size(); ++f) {
        const ComplexImage x = infer_frame(ck.model, times[f], n, n, sens);
        io::write_image(run.file("frames/" + frame_name(f, ".kspc")), x, times[f]);
        io::write_magnitude_png(run.file("frames/" + frame_name(f, ".png")), x);
        mags.push_back(normalize_for_metrics(x));
        csv.row(f, times[f]);
    }
    if (mags.size() >= 2) {
        const int idx = c.recon.profile_index >= 0 ? c.recon.profile_index : n / 2;
        io::write_gray_png(run.file("profile_xt.png"), temporal_profile(mags, ProfileAxis::XT, idx));
        io::write_gray_png(run.file("profile_yt.png"), temporal_profile(mags, ProfileAxis::YT, idx));
    }
    run.summary["frames"] = times.size();
    run.log("recon: " + std::to_string(times.size()) + " frames at " + std::to_string(n) + "x" + std::to_string(n));
}

std::map<std::string, fs::path> image_files(const fs::path& dir) {
    const fs::path frames = fs::is_directory(dir / "frames") ? dir / "frames" : dir;
    if (!fs::is_directory(frames)) throw io::IoError("not a directory: " + dir.string());
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(frames))
        if (e.is_regular_file() && e.path().extension() == ".kspc") out[e.path().filename().string()] = e.path();
    return out;
}

void cmd_metrics(Run& run) {
    const auto& c = run.cfg;
    if (c.metrics.recon_dir.empty()) throw ConfigError("missing key 'metrics.recon_dir'");
    if (c.metrics.reference_dir.empty()) throw ConfigError("missing key 'metrics.reference_dir'");
    const auto rec = image_files(c.metrics.recon_dir), ref = image_files(c.metrics.reference_dir);
    if (rec.empty()) throw InsufficientData("metrics: no image containers in " + c.metrics.recon_dir, 1, 0);
    std::vector<ComplexImage> tests, refs;
    for (const auto& [name, path] : rec) {
        const auto it = ref.find(name);
        if (it == ref.end()) throw InvalidArgument("metrics: reference has no " + name);
        tests.push_back(io::read_image(path));
        refs.push_back(io::read_image(it->second));
    }
    const auto rep = evaluate_frames(tests, refs);
    io::CsvWriter csv(run.file("metrics.csv"), {"method", "R", "frame", "psnr", "ssim"});
    for (std::size_t f = 0; f < tests.size(); ++f) csv.row(c.metrics.method, c.metrics.acceleration, f, rep.psnr[f], rep.ssim[f]);
    run.summary["mean_psnr"] = rep.mean_psnr;
    run.summary["mean_ssim"] = rep.mean_ssim;
    run.log("metrics: mean PSNR " + io::fmt(rep.mean_psnr) + " dB, mean SSIM " + io::fmt(rep.mean_ssim));
}

void write_manifest(const Run& run, const std::string& command, double seconds) {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(run.cfg.raw)));
    json m{{"command", command},
           {"config_hash", hash},
           {"config", run.cfg.raw},
           {"seed", run.cfg.seed},
           {"seeds", run.seeds},
           {"versions",
            {{"pisco", kVersion},
             {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                           std::to_string(EIGEN_MINOR_VERSION)},
             {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                   std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                   std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
             {"libpng", PNG_LIBPNG_VER_STRING},
             {"compiler", __VERSION__}}},
           {"wall_time_s", seconds},
           {"outputs", run.outputs},
           {"summary", run.summary}};
    io::write_json(run.out / "manifest.json", m);
}

void fail(int code, const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", kind}, {"exit_code", code}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PISCO k-space consistency experiments"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    bool quiet = false;
    app.add_option("--config", config_path, "experiment JSON")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "seed override");
    app.add_option("--out", out_dir, "output directory override");
    app.add_flag("--quiet", quiet, "suppress progress output");
    app.set_version_flag("--version", kVersion);

    struct Command {
        void (*run)(Run&);
        const char* help;
    };
    const std::map<std::string, Command> commands{
        {"phantom", {cmd_phantom, "simulate phantom frames and acquired k-space"}},
        {"validate-kernel", {cmd_validate_kernel, "weight consistency of each kernel on ideal k-space"}},
        {"noise-sweep", {cmd_noise_sweep, "consistency measures versus added noise"}},
        {"fit", {cmd_fit, "complete undersampled Cartesian k-space with the PISCO term"}},
        {"train", {cmd_train, "train a neural implicit k-space model on radial data"}},
        {"recon", {cmd_recon, "reconstruct frames from a trained model"}},
        {"metrics", {cmd_metrics, "PSNR and SSIM of reconstructed frames against references"}}};
    for (const auto& [name, c] : commands) app.add_subcommand(name, c.help)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail(kConfig, "usage", e.what());
        return kConfig;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    const auto start = std::chrono::steady_clock::now();
    try {
        json doc = json::object();
        if (!config_path.empty()) {
            try {
                doc = io::read_json(config_path);
            } catch (const io::IoError& e) {
                throw ConfigError(e.what());
            }
        }
        if (!doc.is_object()) throw ConfigError("config must be a JSON object");
        if (*seed_opt) doc["seed"] = seed;
        if (!out_dir.empty()) doc["output_dir"] = out_dir;
        Run run{parse_config(doc), {}, quiet};
        run.out = run.cfg.output_dir;
        fs::create_directories(run.out);
        commands.at(command).run(run);
        write_manifest(run, command,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        return kOk;
    } catch (const ConfigError& e) {
        fail(kConfig, "config", e.what());
        return kConfig;
    } catch (const InvalidArgument& e) {
        fail(kConfig, "invalid-argument", e.what());
        return kConfig;
    } catch (const Diverged& e) {
        fail(kDiverged, "diverged", e.what());
        return kDiverged;
    } catch (const IllConditioned& e) {
        fail(kDiverged, "ill-conditioned", e.what());
        return kDiverged;
    } catch (const InsufficientData& e) {
        fail(kInsufficient, "insufficient-data", e.what());
        return kInsufficient;
    } catch (const std::exception& e) {
        fail(kGeneric, "error", e.what());
        return kGeneric;
    }
}
