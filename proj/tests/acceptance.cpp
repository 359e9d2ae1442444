// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset; the exit code is non-zero when any criterion fails.

#include <fftw3.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pisco/pisco.hpp"

using namespace pisco;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Eigen::MatrixXcd random_complex(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXcd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = cdouble(nd(rng), nd(rng));
    return m;
}

// ---------------------------------------------------------------------------
// 1: exact-relationship recovery

Outcome solver_recovery() {
    const int n_c = 4, n_n = 6;
    const auto n_m = static_cast<Eigen::Index>(subset_size(n_n, n_c, 1.1));
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        SubsetSystem sys;
        sys.patches = random_complex(n_m, n_n * n_c, rng);
        const Eigen::MatrixXcd w = random_complex(n_n * n_c, n_c, rng);
        sys.targets = sys.patches * w;
        const auto est = solve_weights(sys, 1e-8);
        worst = std::max(worst, (est.weights - w).norm() / w.norm());
    }
    return {n_m == 106 && worst <= 1e-3, fmt("N_m %ld, worst relative error %.3g (<= 1e-3)", static_cast<long>(n_m), worst)};
}

// ---------------------------------------------------------------------------
// 2: gradients against central finite differences

/// Subsets of a 1 x 2 kernel (N_n = 2); values are supplied directly.
SubsetPartition small_partition(int n_subsets, int n_m) {
    SubsetPartition part;
    part.pairs_per_subset = static_cast<std::size_t>(n_m);
    for (int s = 0; s < n_subsets; ++s) {
        std::vector<PatchPair> subset;
        for (int i = 0; i < n_m; ++i) {
            const double x = 0.01 * (s * n_m + i);
            subset.push_back({{x, 0.1, 0.0}, {{x, 0.05, 0.0}, {x, 0.15, 0.0}}});
        }
        part.subsets.push_back(std::move(subset));
    }
    return part;
}

double fixed_weight_loss(const SubsetPartition& part, const Eigen::MatrixXcd& values,
                         const std::vector<WeightSet>& frozen) {
    double loss = 0.0;
    Eigen::Index row = 0;
    for (std::size_t s = 0; s < part.subsets.size(); ++s) {
        const auto n = static_cast<Eigen::Index>(part.subsets[s].size());
        const auto sys = system_from_values(values, row, n, 2, 0.0);
        loss += (sys.patches * frozen[s].weights - sys.targets).norm();
        row += n * 3;
    }
    return loss / static_cast<double>(part.subsets.size());
}

Outcome gradient_checks() {
    double worst_pisco = 0.0;
    const double h = 1e-4;
    for (int n_c : {1, 2})
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            std::mt19937_64 rng(seed);
            const auto part = small_partition(2, 15 + static_cast<int>(seed) * 3);
            const auto values = random_complex(static_cast<Eigen::Index>(flatten_partition(part).size()), n_c, rng);
            const auto ev = evaluate_residual(part, values, 1e-4, GradientMode::FixedWeights);
            const double floor = 1e-2 * ev.cotangents.cwiseAbs().maxCoeff();
            for (Eigen::Index i = 0; i < values.size(); ++i)
                for (int re = 0; re < 2; ++re) {
                    Eigen::MatrixXcd plus = values, minus = values;
                    const cdouble step = re == 0 ? cdouble(h, 0) : cdouble(0, h);
                    plus.data()[i] += step;
                    minus.data()[i] -= step;
                    const double numeric = (fixed_weight_loss(part, plus, ev.weights) -
                                            fixed_weight_loss(part, minus, ev.weights)) / (2 * h);
                    const double a = re == 0 ? ev.cotangents.data()[i].real() : ev.cotangents.data()[i].imag();
                    worst_pisco = std::max(worst_pisco, std::abs(a - numeric) / std::max(std::abs(numeric), floor));
                }
        }

    NikArchitecture arch;
    arch.n_features = 4;
    arch.sigma = 1.0;
    arch.hidden = 8;
    arch.layers = 2;
    arch.n_coils = 1;
    const NikModel model(arch, 21);
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<Coord> coords;
    for (int i = 0; i < 10; ++i) coords.push_back({u(rng), u(rng), 0.0});
    const Eigen::MatrixXcd targets = random_complex(10, 1, rng);
    PiscoConfig pisco = PiscoConfig::for_grid(32);
    pisco.n_s_min = 2;
    pisco.alpha = 0.0;  // envelope: fixed weights give the full derivative
    const double times[] = {0.0};
    const auto part = draw_training_partition(pisco, pisco.geometry, 32, 1, times, rng);
    const auto obj = nik_objective(model, coords, targets, 0.05, 0.3, &part, pisco);
    const double hn = 1e-6, floor = 1e-2 * obj.grad.cwiseAbs().maxCoeff();
    double worst_nik = 0.0;
    for (Eigen::Index i = 0; i < model.n_params(); ++i) {
        NikModel plus = model, minus = model;
        plus.params()(i) += hn;
        minus.params()(i) -= hn;
        const double numeric = (nik_objective(plus, coords, targets, 0.05, 0.3, &part, pisco).total -
                                nik_objective(minus, coords, targets, 0.05, 0.3, &part, pisco).total) / (2 * hn);
        worst_nik = std::max(worst_nik, std::abs(obj.grad(i) - numeric) / std::max(std::abs(numeric), floor));
    }
    return {worst_pisco <= 1e-4 && worst_nik <= 1e-3,
            fmt("PISCO fixed-weights %.3g (<= 1e-4), NIK parameters %.3g (<= 1e-3)", worst_pisco, worst_nik)};
}

// ---------------------------------------------------------------------------
// 3, 4: kernel weight consistency on ideal k-space

Outcome kernel_cov() {
    const int n = 64, n_c = 4;
    const ExactKSpace ks(render_phantom(cardiac_phantom(n, n_c), 0.0), simulate_sensitivities(n, n, n_c));
    const auto cfg = PiscoConfig::for_grid(n);
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        double cov[3];
        int k = 0;
        for (auto kind : {KernelKind::Cartesian, KernelKind::Radial, KernelKind::RadialEquidistant}) {
            std::mt19937_64 rng(seed);
            const KernelGeometry g{kind, 3, 2, 2.0 / n};
            cov[k++] = weight_dispersion(kernel_weight_sets(ks, n, g, cfg, 20, PartitionOrder::ByRadius, rng)).mean_cov;
        }
        wins += cov[0] < cov[1] && cov[0] < cov[2];
        detail += fmt("%sseed %lu: %.3f / %.3f / %.3f", seed ? "; " : "", static_cast<unsigned long>(seed), cov[0],
                      cov[1], cov[2]);
    }
    return {wins == 3, "mean CoV cartesian / radial / equidistant, " + detail};
}

Outcome sorting_variance() {
    const int n = 128, n_c = 4;
    const ExactKSpace ks(render_phantom(cardiac_phantom(n, n_c), 0.0), simulate_sensitivities(n, n, n_c));
    const auto cfg = PiscoConfig::for_grid(n);
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        std::mt19937_64 rs(seed), rr(seed);
        const double sorted =
            weight_dispersion(kernel_weight_sets(ks, n, cfg.geometry, cfg, 20, PartitionOrder::ByRadius, rs)).mean_variance;
        const double random =
            weight_dispersion(kernel_weight_sets(ks, n, cfg.geometry, cfg, 20, PartitionOrder::Shuffled, rr)).mean_variance;
        wins += sorted < random;
        detail += fmt("%sseed %lu: %.4f vs %.4f", seed ? "; " : "", static_cast<unsigned long>(seed), sorted, random);
    }
    return {wins == 3, "mean variance sorted vs random, " + detail};
}

// ---------------------------------------------------------------------------
// 5: consistency under noise

Outcome noise_sweep() {
    const int n = 64, n_c = 8;
    const ComplexImage img = render_phantom(cardiac_phantom(n, n_c), 0.0);
    const auto sens = simulate_sensitivities(n, n, n_c);
    const double med_k = median_magnitude(nudft_forward(img, sens, make_cartesian_grid(n, n)).values);
    std::vector<double> support;
    for (Eigen::Index i = 0; i < img.size(); ++i)
        if (std::abs(img.data()[i]) > 0.0) support.push_back(std::abs(img.data()[i]));
    std::nth_element(support.begin(), support.begin() + support.size() / 2, support.end());
    const double med_x = support[support.size() / 2];

    const SweepBase base{img, sens, 1.0};
    const std::uint64_t seeds[] = {0, 1, 2};
    const double factors[] = {0.0, 0.01, 0.02, 0.05, 0.1};
    auto rho = [&](NoiseDomain d, ConsistencyMeasure m) {
        std::vector<double> sigmas;
        for (double f : factors) sigmas.push_back(f * (d == NoiseDomain::KSpace ? med_k : med_x));
        const auto curve = consistency_sweep(base, sigmas, d, m, seeds, PiscoConfig::for_grid(n));
        return spearman(curve.sigmas, curve.normalized);
    };
    const double rk = rho(NoiseDomain::KSpace, ConsistencyMeasure::Residual);
    const double ri = rho(NoiseDomain::Image, ConsistencyMeasure::Residual);
    const double dk = rho(NoiseDomain::KSpace, ConsistencyMeasure::Distance);
    return {rk == 1.0 && ri == 1.0 && dk < 0.0,
            fmt("spearman residual/kspace %+.2f, residual/image %+.2f, distance/kspace %+.2f", rk, ri, dk)};
}

// ---------------------------------------------------------------------------
// 6: Cartesian completion

Outcome completion() {
    const int n = 128, n_c = 4;
    const auto sens = simulate_sensitivities(n, n, n_c);
    auto full = nudft_forward(render_phantom(cardiac_phantom(n, n_c), 0.0), sens, make_cartesian_grid(n, n));
    full.values /= full.values.cwiseAbs().maxCoeff();
    const auto mask = make_mask(n, n, 2.0, 0.04, 1);
    const auto measured = apply_mask(full, mask);
    const double zf = fill_report(zero_filled(measured, n, n), mask, full, sens).psnr_db;

    auto run = [&](int a, int b) {
        FitConfig cfg;
        cfg.pisco = PiscoConfig::for_grid(n);
        cfg.pisco.geometry.a = a;
        cfg.pisco.geometry.b = b;
        cfg.pisco.geometry.delta = 1.0 / n;
        cfg.learning_rate = 1e-4;
        return fill_report(fit_kspace(measured, mask, cfg).fitted, mask, full, sens);
    };
    const auto r32 = run(3, 2), r54 = run(5, 4);
    return {r32.psnr_db - zf >= 1.0 && r54.recovered_fraction >= r32.recovered_fraction - 0.02,
            fmt("zero-filled %.2f dB, 3x2 %.2f dB (gain %+.2f, >= 1), recovered fraction 3x2 %.3f, 5x4 %.3f "
                "(5x4 %.2f dB)",
                zf, r32.psnr_db, r32.psnr_db - zf, r32.recovered_fraction, r54.recovered_fraction, r54.psnr_db)};
}

// ---------------------------------------------------------------------------
// 7: NIK with and without PISCO at 4 spokes per frame

struct NikScore {
    double psnr = 0.0;
    double unsampled_error = 0.0;
};

NikScore score_nik(const NikModel& model, const PhantomSpec& spec, const CoilSensitivities& sens,
                   const AcquiredSet& acq, double scale, int n, int frames) {
    NikScore s;
    for (int f = 0; f < frames; ++f) {
        const double t = f / static_cast<double>(std::max(frames - 1, 1));
        const ComplexImage gt = render_phantom(spec, t);
        s.psnr += psnr(infer_frame(model, t, n, n, sens), gt) / frames;
        std::vector<Coord> sampled;
        for (const auto& c : acq.coords)
            if (std::abs(c.t - t) < 1e-9) sampled.push_back(c);
        const auto truth = nudft_forward(gt, sens, make_cartesian_grid(n, n, t));
        const auto pred = predict_grid(model, t, n, n);
        for (Eigen::Index i = 0; i < truth.n_samples(); ++i) {
            const auto& c = truth.coords[i];
            double d = std::numeric_limits<double>::infinity();
            for (const auto& a : sampled) d = std::min(d, std::hypot(a.kx - c.kx, a.ky - c.ky));
            if (d > 1.0 / n) s.unsampled_error += (pred.values.row(i) - scale * truth.values.row(i)).squaredNorm();
        }
    }
    return s;
}

Outcome nik_benefit() {
    const int n = 32, n_c = 4, frames = 25, spokes = 4;
    const auto spec = cardiac_phantom(n, n_c);
    const auto sens = simulate_sensitivities(n, n, n_c);
    auto acq = simulate_acquisition(spec, sens, Trajectory::golden_angle(frames * spokes, n), frames);
    const double scale = 1.0 / acq.values.cwiseAbs().maxCoeff();
    acq.values *= scale;

    NikArchitecture arch;
    arch.n_features = 32;
    arch.sigma = 1.0;
    arch.hidden = 64;
    arch.layers = 4;
    arch.n_coils = n_c;
    TrainConfig cfg;
    cfg.epochs = 1000;
    cfg.e_pre = 200;
    cfg.learning_rate = 1e-3;
    cfg.pisco = PiscoConfig::for_grid(n);
    cfg.pisco.geometry.delta = 1.0 / n;
    cfg.pisco.n_s_min = 5;
    cfg.dc_epsilon = 100.0 * median_magnitude(acq.values);

    int wins = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        cfg.seed = seed;
        cfg.lambda = 0.0;
        const auto plain = score_nik(train(acq, arch, cfg).model, spec, sens, acq, scale, n, frames);
        cfg.lambda = 0.15;
        const auto reg = score_nik(train(acq, arch, cfg).model, spec, sens, acq, scale, n, frames);
        wins += reg.psnr >= plain.psnr && plain.unsampled_error > reg.unsampled_error;
        detail += fmt("%sseed %lu: %.2f vs %.2f dB, unsampled error %.1f vs %.1f", seed ? "; " : "",
                      static_cast<unsigned long>(seed), reg.psnr, plain.psnr, reg.unsampled_error,
                      plain.unsampled_error);
        std::fflush(stdout);
    }
    return {wins == 3, "NIK+PISCO vs NIK, " + detail};
}

// ---------------------------------------------------------------------------
// 8: CLI determinism

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Outcome cli_determinism() {
    const fs::path root = fs::temp_directory_path() / "pisco_acceptance_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    const json train_cfg{{"phantom", {{"n", 16}, {"n_coils", 2}, {"frames", 3}}},
                         {"pisco", {{"n_s_min", 2}, {"exclusion_radius_in_fe_units", 2}, {"kernel", {{"delta_in_fe_units", 1}}}}},
                         {"train", {{"epochs", 30}, {"e_pre", 10}, {"lambda", 0.1}, {"dc_epsilon_over_median", 100},
                                    {"architecture", {{"n_features", 8}, {"hidden", 16}, {"layers", 3}}}}}};
    json recon_cfg = train_cfg;
    recon_cfg["recon"] = {{"checkpoint", (root / "train_a/model.nikc").string()}, {"times", {0.0, 0.37, 1.0}}};
    const std::vector<std::pair<std::string, json>> runs{
        {"phantom", train_cfg},
        {"validate-kernel", {{"phantom", {{"n", 32}, {"n_coils", 2}}}, {"scale", "natural"}, {"validate", {{"n_subsets", 4}}}}},
        {"noise-sweep", {{"phantom", {{"n", 32}, {"n_coils", 2}}}, {"scale", "natural"}, {"pisco", {{"n_s_min", 3}}},
                         {"sweep", {{"sigmas_over_median", {0.0, 0.05}}, {"seeds", {0, 1}}}}}},
        {"fit", {{"phantom", {{"n", 32}, {"n_coils", 2}}}, {"noise", {{"sigma_over_median", 0.01}}}, {"pisco", {{"n_s_min", 4}}},
                 {"fit", {{"epochs", 30}, {"precondition_epochs", 5}}}}},
        {"train", train_cfg},
        {"recon", recon_cfg},
        {"metrics", {{"metrics", {{"recon_dir", (root / "recon_a").string()}, {"reference_dir", (root / "phantom_a").string()}}}}},
    };
    int identical = 0, total = 0;
    std::string problems;
    for (const auto& [command, base] : runs)
        for (const char* run : {"_a", "_b"}) {
            json cfg = base;
            cfg["seed"] = 5;
            cfg["output_dir"] = (root / (command.substr(0, command.find('-')) + run)).string();
            const fs::path file = root / (command + run + ".json");
            std::ofstream(file) << cfg.dump();
            const std::string cmd = std::string(PISCO_CLI) + " " + command + " --quiet --config " + file.string() +
                                    " > /dev/null 2>> " + (root / "stderr.txt").string();
            if (std::system(cmd.c_str()) != 0) problems += " " + command + " failed;";
        }
    for (const auto& [command, base] : runs) {
        const std::string stem = command.substr(0, command.find('-'));
        const fs::path a = root / (stem + "_a"), b = root / (stem + "_b");
        if (!fs::exists(a)) continue;
        int csvs = 0;
        for (const auto& e : fs::recursive_directory_iterator(a)) {
            if (e.path().extension() != ".csv") continue;
            ++csvs;
            ++total;
            const auto rel = fs::relative(e.path(), a);
            if (slurp(e.path()) == slurp(b / rel)) ++identical;
            else problems += " " + command + "/" + rel.string() + " differs;";
        }
        if (csvs == 0) problems += " " + command + " wrote no CSV;";
    }
    return {problems.empty() && total > 0,
            fmt("%d/%d CSV files byte-identical across 7 commands", identical, total) + problems};
}

// ---------------------------------------------------------------------------
// 9: k-space roundtrip and normalization invariants

Eigen::VectorXcd fftw_centered(const ComplexImage& img) {
    const int nx = static_cast<int>(img.rows()), ny = static_cast<int>(img.cols());
    std::vector<fftw_complex> in(static_cast<std::size_t>(nx) * ny), out(in.size());
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            const cdouble v = img((x + nx / 2) % nx, (y + ny / 2) % ny);
            in[static_cast<std::size_t>(y) * nx + x][0] = v.real();
            in[static_cast<std::size_t>(y) * nx + x][1] = v.imag();
        }
    fftw_plan p = fftw_plan_dft_2d(ny, nx, in.data(), out.data(), FFTW_FORWARD, FFTW_ESTIMATE);
    fftw_execute(p);
    fftw_destroy_plan(p);
    Eigen::VectorXcd res(static_cast<Eigen::Index>(nx) * ny);
    for (int ky = 0; ky < ny; ++ky)
        for (int kx = 0; kx < nx; ++kx) {
            const auto& o = out[static_cast<std::size_t>((ky + ny / 2) % ny) * nx + (kx + nx / 2) % nx];
            res(static_cast<Eigen::Index>(ky) * nx + kx) = cdouble(o[0], o[1]);
        }
    return res;
}

Outcome kspace_invariants() {
    double roundtrip = 0.0, fft = 0.0, norm = 0.0;
    for (int nc : {1, 4, 8})
        for (int n : {16, 32, 48, 64}) {
            const auto img = render_phantom(cardiac_phantom(n, nc), 0.6);
            const auto sens = simulate_sensitivities(n, n, nc);
            const auto k = nudft_forward(img, sens, make_cartesian_grid(n, n));
            const ComplexImage rec = ifft_recon(k, sens);
            roundtrip = std::max(roundtrip, (rec - img).norm() / img.norm());
            Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(n, n);
            for (const auto& m : sens.maps) ss += m.cwiseAbs2();
            norm = std::max(norm, (ss.array() - 1.0).abs().maxCoeff());
        }
    for (auto [nx, ny] : {std::pair{16, 16}, std::pair{32, 32}, std::pair{64, 64}, std::pair{24, 20}, std::pair{18, 14}}) {
        std::mt19937_64 rng(7);
        const ComplexImage img = random_complex(nx, ny, rng);
        const auto sens = simulate_sensitivities(nx, ny, 3);
        const auto k = nudft_forward(img, sens, make_cartesian_grid(nx, ny));
        const auto coils = coil_images(img, sens);
        for (int c = 0; c < 3; ++c) {
            const auto ref = fftw_centered(coils[c]);
            fft = std::max(fft, (k.values.col(c) - ref).norm() / ref.norm());
        }
    }
    return {roundtrip <= 1e-6 && fft <= 1e-10 && norm <= 1e-6,
            fmt("DFT inversion %.2g (<= 1e-6), FFT equivalence %.2g (<= 1e-10), max |sum |S|^2 - 1| %.2g (<= 1e-6)",
                roundtrip, fft, norm)};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0: no runtime bound
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "solver recovers exact weights", 5, solver_recovery},
        {2, "gradients match finite differences", 30, gradient_checks},
        {3, "cartesian kernel most consistent", 60, kernel_cov},
        {4, "radius sorting lowers weight variance", 0, sorting_variance},
        {5, "consistency tracks noise", 120, noise_sweep},
        {6, "completion beats zero filling", 600, completion},
        {7, "PISCO improves NIK at 4 spokes", 1800, nik_benefit},
        {8, "CLI outputs deterministic", 0, cli_determinism},
        {9, "k-space roundtrip and normalization", 0, kspace_invariants},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0 && secs >= c.budget_s) {
            o.pass = false;
            o.detail += fmt("; over the %.0f s budget", c.budget_s);
        }
        failed += !o.pass;
        std::printf("criterion %d %s: %s (%s) [%.1f s]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
