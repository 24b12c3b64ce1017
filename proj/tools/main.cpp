#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "twinbeam/detection.hpp"
#include "twinbeam/em.hpp"
#include "twinbeam/errors.hpp"
#include "twinbeam/intensity.hpp"
#include "twinbeam/joint_pnd.hpp"
#include "twinbeam/mc_sampler.hpp"
#include "twinbeam/serialization.hpp"

namespace {

using nlohmann::json;
using namespace twinbeam;

constexpr const char* kToolVersion = "1.0.0";

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr ||
        EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw io_error("SHA-256 digest computation failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0x0F]);
    }
    return out;
}

// Every output file gets a sibling "<path>.manifest.json" recording the
// command, resolved parameters, seed and content digests, so any
// artifact can be traced back to the exact invocation that made it.
class RunManifest {
public:
    explicit RunManifest(std::string command) : command_(std::move(command)) {}

    json& parameters() { return parameters_; }
    void set_seed(std::uint64_t seed) { seed_ = seed; }

    std::string read_input(const std::string& path) {
        std::string text = read_text_file(path);
        inputs_[path] = sha256_hex(text);
        return text;
    }
    void write_output(const std::string& path, const std::string& text) {
        write_text_file(path, text);
        outputs_[path] = sha256_hex(text);
    }
    void finalize() const {
        if (outputs_.empty())
            return;
        const double wall = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - start_)
                                .count();
        json payload{{"command", command_},
                     {"tool_version", kToolVersion},
                     {"parameters", parameters_},
                     {"inputs", inputs_},
                     {"outputs", outputs_},
                     {"wall_time_seconds", wall}};
        payload["seed"] = seed_ ? json(*seed_) : json(nullptr);
        const json doc{{"kind", "run_manifest"}, {"version", 1}, {"payload", payload}};
        const std::string text = doc.dump(2) + "\n";
        for (const auto& entry : outputs_)
            write_text_file(entry.first + ".manifest.json", text);
    }

private:
    std::string command_;
    json parameters_ = json::object();
    std::optional<std::uint64_t> seed_;
    std::map<std::string, std::string> inputs_;
    std::map<std::string, std::string> outputs_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Per-arm detection flags. An arm is infinite-pixel (T*eta thinning
// plus Poisson dark mean D) unless --pixels-* switches it to the finite
// symmetric multiport with per-detector dark probability d.
struct ArmOptions {
    double t_eta = 1.0;
    double dark_mean = 0.0;
    std::size_t pixels = 0;
    bool finite = false;
    double pixel_dark = 0.0;
};

void add_arm_options(CLI::App* cmd, ArmOptions& arm, const std::string& tag) {
    cmd->add_option("--teta-" + tag, arm.t_eta,
                    "transmissivity*efficiency product, " + tag + " arm")
        ->capture_default_str();
    cmd->add_option("--dark-" + tag, arm.dark_mean,
                    "mean dark count D, infinite-pixel mode, " + tag + " arm")
        ->capture_default_str();
    auto* pix = cmd->add_option("--pixels-" + tag, arm.pixels,
                                "detector count N; selects the finite multiport, " +
                                    tag + " arm");
    pix->each([&arm](const std::string&) { arm.finite = true; });
    cmd->add_option("--pixel-dark-" + tag, arm.pixel_dark,
                    "per-detector dark probability d, finite mode, " + tag + " arm")
        ->capture_default_str()
        ->needs(pix);
}

DetectionChain make_chain(const ArmOptions& arm, const std::string& tag) {
    if (arm.finite) {
        if (arm.dark_mean != 0.0)
            throw validation_error("arm " + tag +
                                   ": --dark-" + tag +
                                   " belongs to the infinite-pixel mode; finite mode "
                                   "takes --pixel-dark-" + tag);
        return DetectionChain::finite(arm.pixels, 1.0, arm.t_eta, arm.pixel_dark);
    }
    return DetectionChain::infinite(1.0, arm.t_eta, arm.dark_mean);
}

json arm_parameters(const ArmOptions& arm) {
    if (arm.finite)
        return json{{"t_eta", arm.t_eta},
                    {"pixels", arm.pixels},
                    {"pixel_dark", arm.pixel_dark}};
    return json{{"t_eta", arm.t_eta}, {"dark_mean", arm.dark_mean}};
}

// Accepts either a bare joint distribution or a reconstruction result
// (whose embedded distribution is used), so stages chain naturally.
JointPnd load_distribution(RunManifest& mb, const std::string& path) {
    const std::string text = mb.read_input(path);
    if (envelope_kind(text) == "em_result")
        return em_result_from_json(text).rho;
    return joint_pnd_from_json(text);
}

void print_joint_analysis(const JointPnd& p) {
    const JointMoments m = joint_moments(p);
    std::cout << "support: n_max_s=" << p.n_max_s() << " n_max_i=" << p.n_max_i()
              << " tail_mass=" << p.tail_mass() << "\n";
    std::cout << "means: <n_S>=" << m.mean_s << "  <n_I>=" << m.mean_i << "\n";
    std::cout << "variances: Var_S=" << m.var_s << "  Var_I=" << m.var_i
              << "  Cov=" << m.cov << "\n";
    std::cout << "C = " << covariance(p) << "\n";
    const auto margs = marginals(p);
    std::cout << "S_S = " << s_coefficient(margs.first)
              << "  S_I = " << s_coefficient(margs.second)
              << "  S_plus = " << s_coefficient(sum_distribution(p)) << "\n";

    const Marginal sum = sum_distribution(p);
    const Marginal diff = diff_distribution(p);
    std::cout << "sum / difference distributions (rows below 1e-9 suppressed):\n";
    std::cout << "  " << std::setw(6) << "n" << std::setw(16) << "rho_plus"
              << std::setw(8) << "d" << std::setw(16) << "rho_minus" << "\n";
    for (std::size_t k = 0; k < sum.probs.size(); ++k) {
        const double plus = sum.probs[k];
        const double minus = k < diff.probs.size() ? diff.probs[k] : 0.0;
        if (plus < 1e-9 && minus < 1e-9)
            continue;
        std::cout << "  " << std::setw(6) << sum.value_at(k) << std::setw(16) << plus
                  << std::setw(8) << diff.value_at(k) << std::setw(16) << minus
                  << "\n";
    }
}

void write_marginal_csv(RunManifest& mb, const std::string& prefix,
                        const JointPnd& p) {
    const Marginal sum = sum_distribution(p);
    const Marginal diff = diff_distribution(p);
    std::ostringstream s;
    s << "n,probability\n";
    for (std::size_t k = 0; k < sum.probs.size(); ++k)
        s << sum.value_at(k) << ',' << std::setprecision(17) << sum.probs[k] << "\n";
    std::ostringstream d;
    d << "difference,probability\n";
    for (std::size_t k = 0; k < diff.probs.size(); ++k)
        d << diff.value_at(k) << ',' << std::setprecision(17) << diff.probs[k] << "\n";
    mb.write_output(prefix + ".sum.csv", s.str());
    mb.write_output(prefix + ".diff.csv", d.str());
}

struct GenerateArgs {
    std::string model;
    double mu = 0.0;
    double eps = kDefaultTailTolerance;
    std::string out;
};

void setup_generate(CLI::App& app) {
    auto args = std::make_shared<GenerateArgs>();
    CLI::App* cmd =
        app.add_subcommand("generate", "emit a model joint photon-number distribution");
    cmd->add_option("--model", args->model, "source model")
        ->required()
        ->check(CLI::IsMember({"poisson", "gaussian"}));
    cmd->add_option("--mu", args->mu, "mean photon-pair number")->required();
    cmd->add_option("--eps", args->eps, "truncation tail tolerance")
        ->capture_default_str();
    cmd->add_option("--out", args->out, "output JSON path")->required();
    cmd->callback([args] {
        RunManifest mb("generate");
        mb.parameters() = json{{"model", args->model},
                               {"mu", args->mu},
                               {"eps", args->eps},
                               {"out", args->out}};
        const JointPnd p = args->model == "poisson"
                               ? make_poisson_pairs(args->mu, args->eps)
                               : make_gaussian_pairs(args->mu, args->eps);
        mb.write_output(args->out, to_json(p));
        mb.finalize();
        std::cout << "wrote " << args->out << ": n_max_s=" << p.n_max_s()
                  << " n_max_i=" << p.n_max_i() << " tail_mass=" << p.tail_mass()
                  << "\n";
    });
}

struct ForwardArgs {
    std::string pnd;
    std::string out;
    ArmOptions arm_s;
    ArmOptions arm_i;
    std::size_t c_max_s = 0;
    std::size_t c_max_i = 0;
    bool have_c_max_s = false;
    bool have_c_max_i = false;
};

void setup_forward(CLI::App& app) {
    auto args = std::make_shared<ForwardArgs>();
    CLI::App* cmd = app.add_subcommand(
        "forward", "map a joint distribution through the detector response");
    cmd->add_option("--pnd", args->pnd, "input distribution (joint_pnd or em_result)")
        ->required();
    add_arm_options(cmd, args->arm_s, "s");
    add_arm_options(cmd, args->arm_i, "i");
    cmd->add_option("--c-max-s", args->c_max_s, "histogram cutoff, signal arm")
        ->each([args](const std::string&) { args->have_c_max_s = true; });
    cmd->add_option("--c-max-i", args->c_max_i, "histogram cutoff, idler arm")
        ->each([args](const std::string&) { args->have_c_max_i = true; });
    cmd->add_option("--out", args->out, "output JSON path")->required();
    cmd->callback([args] {
        RunManifest mb("forward");
        const JointPnd p = load_distribution(mb, args->pnd);
        const DetectionChain chain_s = make_chain(args->arm_s, "s");
        const DetectionChain chain_i = make_chain(args->arm_i, "i");
        std::optional<std::size_t> cs;
        std::optional<std::size_t> ci;
        if (args->have_c_max_s)
            cs = args->c_max_s;
        if (args->have_c_max_i)
            ci = args->c_max_i;
        const CoincidenceDistribution f = forward_map(p, chain_s, chain_i, cs, ci);
        mb.parameters() = json{{"pnd", args->pnd},
                               {"arm_s", arm_parameters(args->arm_s)},
                               {"arm_i", arm_parameters(args->arm_i)},
                               {"c_max_s", f.c_max_s},
                               {"c_max_i", f.c_max_i},
                               {"out", args->out}};
        mb.write_output(args->out, to_json(f));
        mb.finalize();
        double mass = 0.0;
        for (double v : f.freqs)
            mass += v;
        std::cout << "wrote " << args->out << ": c_max_s=" << f.c_max_s
                  << " c_max_i=" << f.c_max_i << " captured_mass=" << mass << "\n";
    });
}

struct SampleArgs {
    std::string pnd;
    std::string out;
    ArmOptions arm_s;
    ArmOptions arm_i;
    std::uint64_t shots = 0;
    std::uint64_t seed = 1;
    unsigned threads = 0;
};

void setup_sample(CLI::App& app) {
    auto args = std::make_shared<SampleArgs>();
    CLI::App* cmd = app.add_subcommand(
        "sample", "Monte Carlo realization of the detected coincidence histogram");
    cmd->add_option("--pnd", args->pnd, "input distribution (joint_pnd or em_result)")
        ->required();
    add_arm_options(cmd, args->arm_s, "s");
    add_arm_options(cmd, args->arm_i, "i");
    cmd->add_option("--shots", args->shots, "number of pulses")->required();
    cmd->add_option("--seed", args->seed, "random seed")->capture_default_str();
    cmd->add_option("--threads", args->threads,
                    "worker threads (0 = TWINBEAM_THREADS or hardware)")
        ->capture_default_str();
    cmd->add_option("--out", args->out, "output JSON path")->required();
    cmd->callback([args] {
        RunManifest mb("sample");
        const JointPnd p = load_distribution(mb, args->pnd);
        const DetectionChain chain_s = make_chain(args->arm_s, "s");
        const DetectionChain chain_i = make_chain(args->arm_i, "i");
        mb.parameters() = json{{"pnd", args->pnd},
                               {"arm_s", arm_parameters(args->arm_s)},
                               {"arm_i", arm_parameters(args->arm_i)},
                               {"shots", args->shots},
                               {"threads", args->threads},
                               {"out", args->out}};
        mb.set_seed(args->seed);
        const SimulationConfig cfg{p, chain_s, chain_i, args->shots, args->seed};
        SimulationStats stats;
        const CoincidenceDistribution f = simulate(cfg, args->threads, &stats);
        mb.write_output(args->out, to_json(f));
        mb.finalize();
        std::cout << "sampled " << args->shots << " shots into " << args->out
                  << ": c_max_s=" << f.c_max_s << " c_max_i=" << f.c_max_i
                  << " tail_draws=" << stats.tail_draws << "\n";
    });
}

struct ReconstructArgs {
    std::string hist;
    std::string out;
    ArmOptions arm_s;
    ArmOptions arm_i;
    EmConfig em;
};

void setup_reconstruct(CLI::App& app) {
    auto args = std::make_shared<ReconstructArgs>();
    CLI::App* cmd = app.add_subcommand(
        "reconstruct", "Expectation-Maximization inversion of a coincidence histogram");
    cmd->add_option("--hist", args->hist, "coincidence histogram JSON")->required();
    add_arm_options(cmd, args->arm_s, "s");
    add_arm_options(cmd, args->arm_i, "i");
    cmd->add_option("--n-max-s", args->em.n_max_s,
                    "reconstruction support, signal arm (0 = heuristic)")
        ->capture_default_str();
    cmd->add_option("--n-max-i", args->em.n_max_i,
                    "reconstruction support, idler arm (0 = heuristic)")
        ->capture_default_str();
    cmd->add_option("--max-iterations", args->em.max_iterations)
        ->capture_default_str();
    cmd->add_option("--stop-tolerance", args->em.stop_tolerance,
                    "relative KL improvement threshold")
        ->capture_default_str();
    cmd->add_option("--out", args->out, "output JSON path")->required();
    cmd->callback([args] {
        RunManifest mb("reconstruct");
        const CoincidenceDistribution f = coincidence_from_json(mb.read_input(args->hist));
        const DetectionChain chain_s = make_chain(args->arm_s, "s");
        const DetectionChain chain_i = make_chain(args->arm_i, "i");
        const EmResult r = reconstruct(f, chain_s, chain_i, args->em);
        mb.parameters() = json{{"hist", args->hist},
                               {"arm_s", arm_parameters(args->arm_s)},
                               {"arm_i", arm_parameters(args->arm_i)},
                               {"n_max_s", r.rho.n_max_s()},
                               {"n_max_i", r.rho.n_max_i()},
                               {"max_iterations", args->em.max_iterations},
                               {"stop_tolerance", args->em.stop_tolerance},
                               {"out", args->out}};
        mb.write_output(args->out, to_json(r));
        mb.finalize();
        std::cout << "wrote " << args->out << ": iterations=" << r.iterations_run
                  << " converged=" << (r.converged ? "yes" : "no")
                  << " final_kl=" << (r.kl_trace.empty() ? 0.0 : r.kl_trace.back())
                  << "\n";
    });
}

struct AnalyzeArgs {
    std::string in;
    std::string csv;
};

void setup_analyze(CLI::App& app) {
    auto args = std::make_shared<AnalyzeArgs>();
    CLI::App* cmd = app.add_subcommand(
        "analyze", "print moment statistics of any pipeline artifact");
    cmd->add_option("--in", args->in, "artifact JSON path")->required();
    cmd->add_option("--csv", args->csv,
                    "prefix for CSV exports (sum/difference tables or grid)");
    cmd->callback([args] {
        RunManifest mb("analyze");
        mb.parameters() = json{{"in", args->in}, {"csv", args->csv}};
        const std::string text = mb.read_input(args->in);
        const std::string kind = envelope_kind(text);
        std::cout << "artifact kind: " << kind << "\n";
        if (kind == "joint_pnd") {
            const JointPnd p = joint_pnd_from_json(text);
            print_joint_analysis(p);
            if (!args->csv.empty())
                write_marginal_csv(mb, args->csv, p);
        } else if (kind == "em_result") {
            const EmResult r = em_result_from_json(text);
            std::cout << "iterations=" << r.iterations_run
                      << " converged=" << (r.converged ? "yes" : "no")
                      << " final_kl=" << (r.kl_trace.empty() ? 0.0 : r.kl_trace.back())
                      << "\n";
            print_joint_analysis(r.rho);
            if (!args->csv.empty())
                write_marginal_csv(mb, args->csv, r.rho);
        } else if (kind == "coincidence_distribution") {
            const CoincidenceDistribution f = coincidence_from_json(text);
            if (f.shots)
                std::cout << "shots: " << *f.shots << "\n";
            const DetectedStatistics ds = detected_statistics(f);
            std::cout << "C_f = " << ds.covariance << "\n";
            std::cout << "S_f_S = " << ds.s_signal << "  S_f_I = " << ds.s_idler
                      << "  S_f_plus = " << ds.s_sum << "\n";
            const JointPnd clicks = f.as_joint();
            print_joint_analysis(clicks);
            if (!args->csv.empty())
                write_marginal_csv(mb, args->csv, clicks);
        } else if (kind == "intensity_grid") {
            const IntensityGrid g = intensity_grid_from_json(text);
            const NegativityReport rep = negativity_report(g);
            std::cout << "s = " << g.s << "\n";
            std::cout << "min P = " << rep.min_value << " at (W_S=" << rep.w_s_at_min
                      << ", W_I=" << rep.w_i_at_min << ")\n";
            std::cout << "negative fraction = " << rep.negative_fraction << "\n";
            std::cout << "grid integral = " << trapezoid_integral(g) << "\n";
            if (g.cancellation_warnings > 0)
                std::cout << "cancellation warnings: " << g.cancellation_warnings
                          << " grid points\n";
            if (!args->csv.empty())
                mb.write_output(args->csv + ".csv", to_csv(g));
        } else {
            throw validation_error("unsupported artifact kind '" + kind + "'");
        }
        mb.finalize();
    });
}

struct IntensityArgs {
    std::string pnd;
    std::string out;
    std::string csv;
    double s = 0.0;
    double w_max = 0.0;
    bool have_w_max = false;
    std::size_t points = kDefaultGridPoints;
};

void setup_intensity(CLI::App& app) {
    auto args = std::make_shared<IntensityArgs>();
    CLI::App* cmd = app.add_subcommand(
        "intensity", "joint integrated-intensity quasi-distribution on a grid");
    cmd->add_option("--pnd", args->pnd, "input distribution (joint_pnd or em_result)")
        ->required();
    cmd->add_option("--s", args->s, "ordering parameter in [-1, 1)")
        ->capture_default_str();
    cmd->add_option("--w-max", args->w_max,
                    "grid extent (default 2.5*(<n_S>+<n_I>))")
        ->each([args](const std::string&) { args->have_w_max = true; });
    cmd->add_option("--points", args->points, "points per axis")
        ->capture_default_str();
    cmd->add_option("--out", args->out, "output JSON path")->required();
    cmd->add_option("--csv", args->csv, "also export the grid as CSV");
    cmd->callback([args] {
        RunManifest mb("intensity");
        const JointPnd p = load_distribution(mb, args->pnd);
        const OrderingParam sp(args->s);
        const double w_max = args->have_w_max ? args->w_max : default_w_max(p);
        const IntensityGrid grid = grid_scan(p, sp, w_max, args->points);
        const NegativityReport rep = negativity_report(grid);
        mb.parameters() = json{{"pnd", args->pnd},
                               {"s", args->s},
                               {"w_max", w_max},
                               {"points", args->points},
                               {"out", args->out},
                               {"csv", args->csv}};
        mb.write_output(args->out, to_json(grid));
        if (!args->csv.empty())
            mb.write_output(args->csv, to_csv(grid));
        mb.finalize();
        std::cout << "grid " << args->points << "x" << args->points
                  << ", w_max=" << w_max << ", s=" << args->s << "\n";
        std::cout << "min P = " << rep.min_value << " at (W_S=" << rep.w_s_at_min
                  << ", W_I=" << rep.w_i_at_min << ")\n";
        std::cout << "negative fraction = " << rep.negative_fraction << "\n";
        if (grid.cancellation_warnings > 0)
            std::cout << "cancellation warnings: " << grid.cancellation_warnings
                      << " grid points\n";
    });
}

} // namespace

int main(int argc, char** argv) {
    std::cout << std::setprecision(10);
    CLI::App app{"twin-beam photon statistics: simulation, reconstruction, analysis"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    setup_generate(app);
    setup_forward(app);
    setup_sample(app);
    setup_reconstruct(app);
    setup_analyze(app);
    setup_intensity(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        // usage problems are validation failures; --help/--version exit 0
        return code == 0 ? 0 : 2;
    } catch (const validation_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const io_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 3;
    } catch (const degeneracy_error& e) {
        std::cerr << "degeneracy error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
