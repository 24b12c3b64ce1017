#include "twinbeam/em.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "twinbeam/errors.hpp"
#include "twinbeam/numeric.hpp"

namespace twinbeam {

namespace {

constexpr double kDenominatorFloor = 1e-300;
constexpr double kKlFloor = 1e-15; // below this the fit is exact
// Entries this small are collapsed to exact zero on update. They sit
// hundreds of orders below any observable bin mass, and letting them
// decay further floods the inner products with subnormals, which run
// an order of magnitude slower on common hardware.
constexpr double kSupportFloor = 1e-250;

struct Workspace {
    std::size_t bins_s, bins_i; // click-space dimensions
    std::size_t sup_s, sup_i;   // photon-number support dimensions
    const std::vector<double>* ks;
    const std::vector<double>* ki;
    std::vector<double> m1;    // K_S * rho
    std::vector<double> model; // K_S * rho * K_I^T
    std::vector<double> ratio;
    std::vector<double> back1; // K_S^T * ratio
    std::vector<double> mult;  // back-projection per support cell

    Workspace(std::size_t bs, std::size_t bi, std::size_t ss, std::size_t si,
              const std::vector<double>& kernel_s,
              const std::vector<double>& kernel_i)
        : bins_s(bs), bins_i(bi), sup_s(ss), sup_i(si), ks(&kernel_s),
          ki(&kernel_i), m1(bs * si), model(bs * bi), ratio(bs * bi),
          back1(ss * bi), mult(ss * si) {}

    void forward(const std::vector<double>& rho) {
        const std::vector<double>& kS = *ks;
        const std::vector<double>& kI = *ki;
        std::fill(m1.begin(), m1.end(), 0.0);
        for (std::size_t c = 0; c < bins_s; ++c) {
            double* row = &m1[c * sup_i];
            for (std::size_t a = 0; a < sup_s; ++a) {
                double w = kS[c * sup_s + a];
                if (w == 0.0)
                    continue;
                const double* src = &rho[a * sup_i];
                for (std::size_t b = 0; b < sup_i; ++b)
                    row[b] += w * src[b];
            }
        }
        for (std::size_t c = 0; c < bins_s; ++c)
            for (std::size_t e = 0; e < bins_i; ++e) {
                const double* row = &m1[c * sup_i];
                const double* kRow = &kI[e * sup_i];
                double acc = 0.0;
                for (std::size_t b = 0; b < sup_i; ++b)
                    acc += row[b] * kRow[b];
                model[c * bins_i + e] = acc;
            }
    }

    // ratio = f / model where f > 0; throws on vanishing denominators
    void compute_ratio(const std::vector<double>& f_prob) {
        for (std::size_t k = 0; k < ratio.size(); ++k) {
            double fv = f_prob[k];
            if (fv <= 0.0) {
                ratio[k] = 0.0;
                continue;
            }
            if (model[k] < kDenominatorFloor) {
                std::ostringstream msg;
                msg << "EM denominator vanished at bin (" << k / bins_i << ", "
                    << k % bins_i << ") with observed mass " << fv;
                throw degeneracy_error(msg.str());
            }
            ratio[k] = fv / model[k];
        }
    }

    void back_project() {
        const std::vector<double>& kS = *ks;
        const std::vector<double>& kI = *ki;
        std::fill(back1.begin(), back1.end(), 0.0);
        for (std::size_t a = 0; a < sup_s; ++a) {
            double* row = &back1[a * bins_i];
            for (std::size_t c = 0; c < bins_s; ++c) {
                double w = kS[c * sup_s + a];
                if (w == 0.0)
                    continue;
                const double* src = &ratio[c * bins_i];
                for (std::size_t e = 0; e < bins_i; ++e)
                    row[e] += w * src[e];
            }
        }
        for (std::size_t a = 0; a < sup_s; ++a)
            for (std::size_t b = 0; b < sup_i; ++b) {
                const double* row = &back1[a * bins_i];
                double acc = 0.0;
                for (std::size_t e = 0; e < bins_i; ++e)
                    acc += row[e] * kI[e * sup_i + b];
                mult[a * sup_i + b] = acc;
            }
    }

    // rho <- normalize(rho .* mult)
    void apply(std::vector<double>& rho) {
        for (std::size_t k = 0; k < rho.size(); ++k)
            rho[k] *= mult[k];
        CompensatedSum total;
        for (double v : rho)
            total.add(v);
        double t = total.value();
        if (!(t > 0.0))
            throw degeneracy_error("EM update annihilated all mass");
        for (double& v : rho) {
            v /= t;
            if (v < kSupportFloor)
                v = 0.0;
        }
    }

    double kl_against(const std::vector<double>& f_prob) const {
        CompensatedSum acc;
        for (std::size_t k = 0; k < f_prob.size(); ++k) {
            double fv = f_prob[k];
            if (fv <= 0.0)
                continue;
            if (model[k] <= 0.0)
                return std::numeric_limits<double>::infinity();
            acc.add(fv * std::log(fv / model[k]));
        }
        return acc.value();
    }
};

std::vector<double> probability_view(const CoincidenceDistribution& f) {
    std::vector<double> p(f.freqs.size());
    for (std::size_t a = 0; a < f.rows(); ++a)
        for (std::size_t b = 0; b < f.cols(); ++b)
            p[a * f.cols() + b] = f.probability(a, b);
    return p;
}

std::size_t heuristic_support(std::size_t c_max, double t_eta) {
    if (!(t_eta > 0.0))
        throw validation_error(
            "reconstruction support heuristic undefined for T*eta = 0; "
            "set n_max explicitly");
    double c = static_cast<double>(c_max);
    double bound = c / t_eta + 5.0 * std::sqrt(c) / t_eta;
    auto n = static_cast<std::size_t>(std::ceil(bound));
    return std::min<std::size_t>(n, 200);
}

} // namespace

double kl_divergence(const CoincidenceDistribution& f,
                     const CoincidenceDistribution& f_model) {
    if (f.c_max_s != f_model.c_max_s || f.c_max_i != f_model.c_max_i)
        throw validation_error("KL divergence requires a common support");
    CompensatedSum acc;
    for (std::size_t a = 0; a < f.rows(); ++a)
        for (std::size_t b = 0; b < f.cols(); ++b) {
            double p = f.probability(a, b);
            if (p <= 0.0)
                continue;
            double q = f_model.probability(a, b);
            if (q <= 0.0)
                return std::numeric_limits<double>::infinity();
            acc.add(p * std::log(p / q));
        }
    return acc.value();
}

JointPnd em_step(const JointPnd& rho, const CoincidenceDistribution& f,
                 const std::vector<double>& kernel_s,
                 const std::vector<double>& kernel_i) {
    if (kernel_s.size() != f.rows() * rho.rows() ||
        kernel_i.size() != f.cols() * rho.cols())
        throw validation_error("kernel dimensions do not match rho and f");
    Workspace ws(f.rows(), f.cols(), rho.rows(), rho.cols(), kernel_s,
                 kernel_i);
    std::vector<double> f_prob = probability_view(f);
    std::vector<double> state = rho.probs();
    ws.forward(state);
    ws.compute_ratio(f_prob);
    ws.back_project();
    ws.apply(state);
    return JointPnd(std::move(state), rho.n_max_s(), rho.n_max_i(), 0.0);
}

EmResult reconstruct(const CoincidenceDistribution& f,
                     const DetectionChain& chain_s,
                     const DetectionChain& chain_i, const EmConfig& cfg) {
    if (!(cfg.stop_tolerance > 0.0))
        throw validation_error("stop tolerance must be positive");
    if (cfg.max_iterations == 0)
        throw validation_error("iteration budget must be >= 1");

    std::size_t n_s = cfg.n_max_s > 0
                          ? cfg.n_max_s
                          : heuristic_support(f.c_max_s, chain_s.t_eta());
    std::size_t n_i = cfg.n_max_i > 0
                          ? cfg.n_max_i
                          : heuristic_support(f.c_max_i, chain_i.t_eta());

    std::vector<double> state;
    if (cfg.init) {
        if (cfg.init->n_max_s() != n_s || cfg.init->n_max_i() != n_i)
            throw validation_error(
                "initial distribution does not match the requested support");
        state = cfg.init->probs();
    } else {
        state.assign((n_s + 1) * (n_i + 1),
                     1.0 / static_cast<double>((n_s + 1) * (n_i + 1)));
    }

    std::vector<double> kernel_s = detection_kernel(chain_s, f.c_max_s, n_s);
    std::vector<double> kernel_i = detection_kernel(chain_i, f.c_max_i, n_i);
    std::vector<double> f_prob = probability_view(f);

    Workspace ws(f.rows(), f.cols(), n_s + 1, n_i + 1, kernel_s, kernel_i);

    std::vector<double> kl_trace;
    kl_trace.reserve(std::min<std::size_t>(cfg.max_iterations, 1 << 20));
    bool converged = false;

    ws.forward(state);
    double prev_kl = std::numeric_limits<double>::infinity();
    std::size_t it = 0;
    while (it < cfg.max_iterations) {
        ws.compute_ratio(f_prob);
        ws.back_project();
        ws.apply(state);
        ++it;
        ws.forward(state); // doubles as the next iteration's denominator
        double kl = ws.kl_against(f_prob);
        kl_trace.push_back(kl);
        if (kl < kKlFloor) {
            converged = true;
            break;
        }
        if (std::isfinite(prev_kl) &&
            prev_kl - kl < cfg.stop_tolerance * prev_kl) {
            converged = true;
            break;
        }
        prev_kl = kl;
    }

    EmResult out{JointPnd(std::move(state), n_s, n_i, 0.0), std::move(kl_trace),
                 it, converged};
    return out;
}

} // namespace twinbeam
