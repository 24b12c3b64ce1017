#include "twinbeam/mc_sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

#include "twinbeam/errors.hpp"
#include "twinbeam/numeric.hpp"

namespace twinbeam {

namespace {

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// splitmix64 stream keyed on (seed, shot). Streams for neighboring
// shots start at unrelated (fully mixed) states, so any partition of
// shots across threads replays identically.
class ShotRng {
public:
    ShotRng(std::uint64_t seed, std::uint64_t shot) {
        state_ = mix64(seed + 0x9E3779B97F4A7C15ULL) ^
                 mix64(shot * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL);
    }
    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix64(state_);
    }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

struct SourceSampler {
    std::vector<double> cdf; // over row-major source entries
    std::size_t cols = 0;
    double body_mass = 0.0; // draws beyond this hit the truncation tail

    explicit SourceSampler(const JointPnd& p) : cols(p.cols()) {
        cdf.resize(p.probs().size());
        CompensatedSum acc;
        for (std::size_t k = 0; k < cdf.size(); ++k) {
            acc.add(p.probs()[k]);
            cdf[k] = acc.value();
        }
        body_mass = cdf.empty() ? 0.0 : cdf.back();
    }

    std::pair<std::uint32_t, std::uint32_t> draw(double u, bool& tail) const {
        tail = u >= body_mass;
        std::size_t idx;
        if (tail) {
            idx = cdf.size() - 1;
        } else {
            idx = static_cast<std::size_t>(
                std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            if (idx >= cdf.size())
                idx = cdf.size() - 1;
        }
        return {static_cast<std::uint32_t>(idx / cols),
                static_cast<std::uint32_t>(idx % cols)};
    }
};

struct ArmContext {
    bool infinite;
    double t_eta;
    double dark;         // D or d
    double exp_neg_dark; // e^-D for the Poisson sampler
    std::size_t pixels;

    explicit ArmContext(const DetectionChain& c)
        : infinite(c.infinite_pixels()), t_eta(c.t_eta()), dark(c.dark()),
          exp_neg_dark(c.infinite_pixels() ? std::exp(-c.dark()) : 0.0),
          pixels(c.infinite_pixels() ? 0 : c.pixel_count()) {}
};

std::uint32_t sample_poisson(double exp_neg_mean, ShotRng& rng) {
    // Knuth multiplication; dark means here are O(1)
    std::uint32_t k = 0;
    double prod = rng.uniform();
    while (prod >= exp_neg_mean) {
        ++k;
        prod *= rng.uniform();
    }
    return k;
}

std::uint32_t detect_arm(const ArmContext& arm, std::uint32_t n, ShotRng& rng,
                         std::vector<unsigned char>& pixel_scratch) {
    if (arm.infinite) {
        // photons are individually thinned; no two share a pixel
        std::uint32_t detected = 0;
        for (std::uint32_t k = 0; k < n; ++k)
            if (rng.uniform() < arm.t_eta)
                ++detected;
        return detected + sample_poisson(arm.exp_neg_dark, rng);
    }
    pixel_scratch.assign(arm.pixels, 0);
    for (std::uint32_t k = 0; k < n; ++k) {
        if (rng.uniform() < arm.t_eta) {
            auto idx = static_cast<std::size_t>(rng.uniform() *
                                                static_cast<double>(arm.pixels));
            if (idx >= arm.pixels)
                idx = arm.pixels - 1;
            pixel_scratch[idx] = 1;
        }
    }
    std::uint32_t clicks = 0;
    for (unsigned char occupied : pixel_scratch)
        if (occupied || rng.uniform() < arm.dark)
            ++clicks;
    return clicks;
}

struct ShotOutcome {
    std::uint32_t c_s;
    std::uint32_t c_i;
    bool tail;
};

ShotOutcome run_shot(const SourceSampler& source, const ArmContext& arm_s,
                     const ArmContext& arm_i, std::uint64_t seed,
                     std::uint64_t shot, std::vector<unsigned char>& scratch) {
    ShotRng rng(seed, shot);
    bool tail = false;
    auto [n_s, n_i] = source.draw(rng.uniform(), tail);
    std::uint32_t c_s = detect_arm(arm_s, n_s, rng, scratch);
    std::uint32_t c_i = detect_arm(arm_i, n_i, rng, scratch);
    return {c_s, c_i, tail};
}

// dense counts grid that grows on demand
struct CountGrid {
    std::vector<std::uint64_t> counts;
    std::size_t rows = 1;
    std::size_t cols = 1;

    CountGrid() : counts(1, 0) {}

    void grow(std::size_t r, std::size_t c) {
        std::size_t nr = std::max(rows, r + 1);
        std::size_t nc = std::max(cols, c + 1);
        if (nr == rows && nc == cols)
            return;
        std::vector<std::uint64_t> next(nr * nc, 0);
        for (std::size_t a = 0; a < rows; ++a)
            for (std::size_t b = 0; b < cols; ++b)
                next[a * nc + b] = counts[a * cols + b];
        counts = std::move(next);
        rows = nr;
        cols = nc;
    }

    void add(std::uint32_t r, std::uint32_t c) {
        grow(r, c);
        ++counts[static_cast<std::size_t>(r) * cols + c];
    }

    void merge(const CountGrid& other) {
        grow(other.rows - 1, other.cols - 1);
        for (std::size_t a = 0; a < other.rows; ++a)
            for (std::size_t b = 0; b < other.cols; ++b)
                counts[a * cols + b] += other.counts[a * other.cols + b];
    }
};

unsigned resolve_threads(unsigned requested) {
    if (requested > 0)
        return requested;
    if (const char* env = std::getenv("TWINBEAM_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1)
            return static_cast<unsigned>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

} // namespace

CoincidenceDistribution simulate(const SimulationConfig& cfg, unsigned threads,
                                 SimulationStats* stats) {
    if (cfg.shots == 0)
        throw validation_error("shot count must be >= 1");

    SourceSampler source(cfg.source);
    ArmContext arm_s(cfg.chain_s), arm_i(cfg.chain_i);

    unsigned workers = resolve_threads(threads);
    if (workers > cfg.shots)
        workers = static_cast<unsigned>(cfg.shots);

    std::vector<CountGrid> grids(workers);
    std::atomic<std::uint64_t> tail_draws{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::uint64_t chunk = cfg.shots / workers;
    std::uint64_t rem = cfg.shots % workers;
    std::uint64_t begin = 0;
    for (unsigned w = 0; w < workers; ++w) {
        std::uint64_t end = begin + chunk + (w < rem ? 1 : 0);
        pool.emplace_back([&, w, begin, end] {
            std::vector<unsigned char> scratch;
            std::uint64_t local_tail = 0;
            for (std::uint64_t shot = begin; shot < end; ++shot) {
                ShotOutcome o = run_shot(source, arm_s, arm_i, cfg.seed, shot,
                                         scratch);
                grids[w].add(o.c_s, o.c_i);
                if (o.tail)
                    ++local_tail;
            }
            tail_draws += local_tail;
        });
        begin = end;
    }
    for (std::thread& t : pool)
        t.join();

    CountGrid total;
    for (const CountGrid& g : grids)
        total.merge(g);
    if (stats)
        stats->tail_draws = tail_draws.load();

    // trim to the occupied block
    std::size_t top_r = 0, top_c = 0;
    for (std::size_t a = 0; a < total.rows; ++a)
        for (std::size_t b = 0; b < total.cols; ++b)
            if (total.counts[a * total.cols + b] != 0) {
                top_r = std::max(top_r, a);
                top_c = std::max(top_c, b);
            }

    CoincidenceDistribution f;
    f.c_max_s = top_r;
    f.c_max_i = top_c;
    f.origin = CoincidenceDistribution::Origin::monte_carlo;
    f.shots = cfg.shots;
    f.freqs.assign((top_r + 1) * (top_c + 1), 0.0);
    for (std::size_t a = 0; a <= top_r; ++a)
        for (std::size_t b = 0; b <= top_c; ++b)
            f.freqs[a * (top_c + 1) + b] =
                static_cast<double>(total.counts[a * total.cols + b]);
    return f;
}

std::pair<std::uint32_t, std::uint32_t>
per_shot_counts(const SimulationConfig& cfg, std::uint64_t shot_index) {
    if (cfg.shots == 0)
        throw validation_error("shot count must be >= 1");
    if (shot_index >= cfg.shots)
        throw validation_error("shot index out of range");
    SourceSampler source(cfg.source);
    ArmContext arm_s(cfg.chain_s), arm_i(cfg.chain_i);
    std::vector<unsigned char> scratch;
    ShotOutcome o = run_shot(source, arm_s, arm_i, cfg.seed, shot_index,
                             scratch);
    return {o.c_s, o.c_i};
}

} // namespace twinbeam
