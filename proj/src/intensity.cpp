#include "twinbeam/intensity.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <vector>

#include "twinbeam/errors.hpp"
#include "twinbeam/numeric.hpp"

namespace twinbeam {

namespace {

constexpr double kRescaleHigh = 1e250;
constexpr double kRescaleLow = 1e-250;
constexpr double kCancellationRatio = 1e-8;
const double kNegInf = -std::numeric_limits<double>::infinity();

// Three-term recurrence with the running pair rescaled whenever it
// leaves [1e-250, 1e250]; magnitudes are recorded as sign + log so the
// caller never sees an overflowed intermediate.
struct ScaledLaguerre {
    std::vector<double> sign;
    std::vector<double> log_mag;
};

ScaledLaguerre laguerre_scaled(std::size_t n_max, double x) {
    ScaledLaguerre seq;
    seq.sign.assign(n_max + 1, 0.0);
    seq.log_mag.assign(n_max + 1, kNegInf);
    double shift = 0.0; // log of the factor divided out of the pair
    auto record = [&](std::size_t k, double v) {
        if (v != 0.0) {
            seq.sign[k] = v > 0.0 ? 1.0 : -1.0;
            seq.log_mag[k] = std::log(std::abs(v)) + shift;
        }
    };
    double prev = 1.0;
    record(0, prev);
    if (n_max == 0)
        return seq;
    double curr = 1.0 - x;
    record(1, curr);
    for (std::size_t k = 1; k < n_max; ++k) {
        const double kk = static_cast<double>(k);
        const double next = ((2.0 * kk + 1.0 - x) * curr - kk * prev) / (kk + 1.0);
        prev = curr;
        curr = next;
        const double mag = std::max(std::abs(prev), std::abs(curr));
        if (mag > kRescaleHigh) {
            prev *= kRescaleLow;
            curr *= kRescaleLow;
            shift -= std::log(kRescaleLow);
        } else if (mag > 0.0 && mag < kRescaleLow) {
            prev /= kRescaleLow;
            curr /= kRescaleLow;
            shift += std::log(kRescaleLow);
        }
        record(k + 1, curr);
    }
    return seq;
}

struct SupportMask {
    std::vector<char> row; // signal indices with any probability
    std::vector<char> col; // idler indices with any probability
    std::size_t nonzero = 0;
};

SupportMask support_mask(const JointPnd& rho) {
    SupportMask m;
    m.row.assign(rho.rows(), 0);
    m.col.assign(rho.cols(), 0);
    for (std::size_t a = 0; a < rho.rows(); ++a)
        for (std::size_t b = 0; b < rho.cols(); ++b)
            if (rho(a, b) > 0.0) {
                m.row[a] = 1;
                m.col[b] = 1;
                ++m.nonzero;
            }
    return m;
}

// Signed per-arm factors for one evaluation point, rescaled so the
// largest factor over the occupied rows is 1. Rows outside the support
// stay zero; they never multiply a live probability.
struct ArmFactors {
    std::vector<double> value;
    double shift = 0.0; // log of the divided-out scale
};

ArmFactors series_factors(const ScaledLaguerre& seq, std::size_t n_max,
                          double log_zeta_mag, const std::vector<char>& occupied) {
    ArmFactors f;
    f.value.assign(n_max + 1, 0.0);
    double shift = kNegInf;
    for (std::size_t n = 0; n <= n_max; ++n)
        if (occupied[n] && seq.sign[n] != 0.0) {
            const double phi = static_cast<double>(n) * log_zeta_mag + seq.log_mag[n];
            shift = std::max(shift, phi);
        }
    if (shift == kNegInf)
        return f;
    f.shift = shift;
    for (std::size_t n = 0; n <= n_max; ++n) {
        if (!occupied[n] || seq.sign[n] == 0.0)
            continue;
        const double phi = static_cast<double>(n) * log_zeta_mag + seq.log_mag[n];
        const double parity = (n & 1U) ? -1.0 : 1.0;
        f.value[n] = parity * seq.sign[n] * std::exp(phi - shift);
    }
    return f;
}

ArmFactors poisson_kernel_factors(std::size_t n_max, double w,
                                  const std::vector<double>& log_fact,
                                  const std::vector<char>& occupied) {
    ArmFactors f;
    f.value.assign(n_max + 1, 0.0);
    for (std::size_t n = 0; n <= n_max; ++n) {
        if (!occupied[n])
            continue;
        double t = -w - log_fact[n];
        if (n > 0)
            t += static_cast<double>(n) * std::log(w);
        f.value[n] = std::exp(t);
    }
    return f;
}

// Canonical traversal order: diagonal entries, then each unordered pair
// {(a,b),(b,a)} added as one subtotal. Swapping the two arms of a
// symmetric distribution permutes terms only inside a subtotal, and
// addition of two doubles commutes bitwise, so P(x,y) == P(y,x) exactly.
struct PairEntry {
    std::uint32_t lo;
    std::uint32_t hi;
};

std::vector<PairEntry> build_pair_order(const JointPnd& rho) {
    const std::size_t ns = rho.n_max_s();
    const std::size_t ni = rho.n_max_i();
    const std::size_t top = std::max(ns, ni);
    std::vector<PairEntry> order;
    for (std::size_t lo = 0; lo <= top; ++lo) {
        if (lo <= ns && lo <= ni && rho(lo, lo) > 0.0)
            order.push_back({static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(lo)});
        for (std::size_t hi = lo + 1; hi <= top; ++hi) {
            const bool fwd = lo <= ns && hi <= ni && rho(lo, hi) > 0.0;
            const bool rev = hi <= ns && lo <= ni && rho(hi, lo) > 0.0;
            if (fwd || rev)
                order.push_back({static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(hi)});
        }
    }
    return order;
}

struct PointAccum {
    double sum = 0.0;
    double largest = 0.0;
    std::size_t term_s = 0;
    std::size_t term_i = 0;
};

PointAccum eval_point(const JointPnd& rho, const std::vector<PairEntry>& order,
                      const double* fs, const double* fi) {
    const std::size_t ns = rho.n_max_s();
    const std::size_t ni = rho.n_max_i();
    CompensatedSum acc;
    PointAccum out;
    auto term = [&](std::size_t a, std::size_t b) {
        const double p = rho(a, b);
        if (p == 0.0)
            return 0.0;
        const double t = p * (fs[a] * fi[b]);
        const double mag = std::abs(t);
        if (mag > out.largest) {
            out.largest = mag;
            out.term_s = a;
            out.term_i = b;
        }
        return t;
    };
    for (const PairEntry& e : order) {
        if (e.lo == e.hi) {
            acc.add(term(e.lo, e.lo));
        } else {
            const double t1 = (e.lo <= ns && e.hi <= ni) ? term(e.lo, e.hi) : 0.0;
            const double t2 = (e.hi <= ns && e.lo <= ni) ? term(e.hi, e.lo) : 0.0;
            acc.add(t1 + t2);
        }
    }
    out.sum = acc.value();
    return out;
}

void require_coordinate(double w, const char* name) {
    if (!(std::isfinite(w) && w >= 0.0)) {
        std::ostringstream msg;
        msg << name << " must be a finite nonnegative intensity, got " << w;
        throw validation_error(msg.str());
    }
}

double closed_form_point(const JointPnd& rho, double w_s, double w_i,
                         const std::vector<PairEntry>& order,
                         const std::vector<double>& log_fact,
                         const SupportMask& mask, QuasiDiagnostics* diag) {
    const ArmFactors fs = poisson_kernel_factors(rho.n_max_s(), w_s, log_fact, mask.row);
    const ArmFactors fi = poisson_kernel_factors(rho.n_max_i(), w_i, log_fact, mask.col);
    const PointAccum pa = eval_point(rho, order, fs.value.data(), fi.value.data());
    if (diag) {
        diag->largest_term = pa.largest;
        diag->cancellation = false; // all terms share one sign
    }
    return pa.sum;
}

} // namespace

OrderingParam::OrderingParam(double value) : s(value) {
    if (!(value >= -1.0 && value < 1.0)) {
        std::ostringstream msg;
        msg << "ordering parameter s must lie in [-1, 1), got " << value;
        if (value == 1.0)
            msg << " (normal ordering needs generalized functions)";
        throw validation_error(msg.str());
    }
}

double laguerre_eval(std::size_t n, double x) {
    const ScaledLaguerre seq = laguerre_scaled(n, x);
    return seq.sign[n] * std::exp(seq.log_mag[n]);
}

double antinormal_closed_form(const JointPnd& rho, double w_s, double w_i) {
    require_coordinate(w_s, "W_S");
    require_coordinate(w_i, "W_I");
    const SupportMask mask = support_mask(rho);
    const std::vector<PairEntry> order = build_pair_order(rho);
    const std::vector<double> lf =
        log_factorial_table(std::max(rho.rows(), rho.cols()));
    return closed_form_point(rho, w_s, w_i, order, lf, mask, nullptr);
}

double quasi_distribution(const JointPnd& rho, OrderingParam s, double w_s,
                          double w_i, QuasiDiagnostics* diag) {
    require_coordinate(w_s, "W_S");
    require_coordinate(w_i, "W_I");
    const SupportMask mask = support_mask(rho);
    const std::vector<PairEntry> order = build_pair_order(rho);
    if (mask.nonzero == 0) {
        if (diag)
            *diag = QuasiDiagnostics{};
        return 0.0;
    }
    if (s.s == -1.0) {
        const std::vector<double> lf =
            log_factorial_table(std::max(rho.rows(), rho.cols()));
        return closed_form_point(rho, w_s, w_i, order, lf, mask, diag);
    }

    const double om = 1.0 - s.s; // 1 - s
    const double op = 1.0 + s.s; // 1 + s
    const double log_zeta = std::log(op) - std::log(om);
    const double x_s = 4.0 * w_s / (om * op);
    const double x_i = 4.0 * w_i / (om * op);
    const ScaledLaguerre seq_s = laguerre_scaled(rho.n_max_s(), x_s);
    const ScaledLaguerre seq_i = laguerre_scaled(rho.n_max_i(), x_i);
    const ArmFactors fs = series_factors(seq_s, rho.n_max_s(), log_zeta, mask.row);
    const ArmFactors fi = series_factors(seq_i, rho.n_max_i(), log_zeta, mask.col);

    const PointAccum pa = eval_point(rho, order, fs.value.data(), fi.value.data());
    const double lin = 4.0 / (om * om);
    const double scale = lin * std::exp(-2.0 * (w_s + w_i) / om + (fs.shift + fi.shift));
    const double value = scale * pa.sum;
    const double largest = scale * pa.largest;
    if (!std::isfinite(value) || !std::isfinite(largest)) {
        std::ostringstream msg;
        msg << "quasi-distribution overflow at series term (n_S=" << pa.term_s
            << ", n_I=" << pa.term_i << "), W_S=" << w_s << ", W_I=" << w_i;
        throw degeneracy_error(msg.str());
    }
    if (diag) {
        diag->largest_term = largest;
        diag->cancellation = largest > 0.0 && std::abs(value) < kCancellationRatio * largest;
    }
    return value;
}

IntensityGrid grid_scan(const JointPnd& rho, OrderingParam s, double w_max,
                        std::size_t points_per_axis) {
    if (!(std::isfinite(w_max) && w_max > 0.0))
        throw validation_error("grid scan needs w_max > 0");
    if (points_per_axis < 2)
        throw validation_error("grid scan needs at least 2 points per axis");

    const std::size_t pts = points_per_axis;
    IntensityGrid grid;
    grid.s = s.s;
    grid.w_s_axis.resize(pts);
    for (std::size_t k = 0; k < pts; ++k)
        grid.w_s_axis[k] = w_max * static_cast<double>(k) / static_cast<double>(pts - 1);
    grid.w_i_axis = grid.w_s_axis;
    grid.values.assign(pts * pts, 0.0);

    const SupportMask mask = support_mask(rho);
    if (mask.nonzero == 0)
        return grid;

    const std::size_t ns = rho.n_max_s();
    const std::size_t ni = rho.n_max_i();
    const bool antinormal = s.s == -1.0;
    const double om = 1.0 - s.s;
    const double op = 1.0 + s.s;
    const double log_zeta = antinormal ? 0.0 : std::log(op) - std::log(om);
    const double lin = antinormal ? 1.0 : 4.0 / (om * om);

    // Per-axis arm factor tables, point-major. The two arms share the
    // same axis, so one Laguerre recurrence per point serves both.
    std::vector<double> tab_s(pts * (ns + 1));
    std::vector<double> tab_i(pts * (ni + 1));
    std::vector<double> shift_s(pts, 0.0);
    std::vector<double> shift_i(pts, 0.0);
    const std::vector<double> lf =
        antinormal ? log_factorial_table(std::max(ns, ni) + 1) : std::vector<double>{};
    for (std::size_t k = 0; k < pts; ++k) {
        const double w = grid.w_s_axis[k];
        ArmFactors fs;
        ArmFactors fi;
        if (antinormal) {
            fs = poisson_kernel_factors(ns, w, lf, mask.row);
            fi = poisson_kernel_factors(ni, w, lf, mask.col);
        } else {
            const double x = 4.0 * w / (om * op);
            const ScaledLaguerre seq = laguerre_scaled(std::max(ns, ni), x);
            fs = series_factors(seq, ns, log_zeta, mask.row);
            fi = series_factors(seq, ni, log_zeta, mask.col);
        }
        std::copy(fs.value.begin(), fs.value.end(), tab_s.begin() + k * (ns + 1));
        std::copy(fi.value.begin(), fi.value.end(), tab_i.begin() + k * (ni + 1));
        shift_s[k] = fs.shift;
        shift_i[k] = fi.shift;
    }

    auto point_scale = [&](std::size_t i, std::size_t j) {
        if (antinormal)
            return 1.0;
        const double ws = grid.w_s_axis[i];
        const double wi = grid.w_i_axis[j];
        return lin * std::exp(-2.0 * (ws + wi) / om + (shift_s[i] + shift_i[j]));
    };
    auto store = [&](std::size_t i, std::size_t j, double raw_sum, double raw_largest,
                     std::size_t wa, std::size_t wb) {
        const double scale = point_scale(i, j);
        const double value = scale * raw_sum;
        const double largest = scale * raw_largest;
        if (!std::isfinite(value) || !std::isfinite(largest)) {
            std::ostringstream msg;
            msg << "quasi-distribution overflow at grid point (W_S="
                << grid.w_s_axis[i] << ", W_I=" << grid.w_i_axis[j]
                << "), series term (n_S=" << wa << ", n_I=" << wb << ")";
            throw degeneracy_error(msg.str());
        }
        grid.values[i * pts + j] = value;
        if (!antinormal && largest > 0.0 &&
            std::abs(value) < kCancellationRatio * largest)
            ++grid.cancellation_warnings;
    };

    const bool sparse = mask.nonzero <= std::max(ns, ni) + 1;
    if (sparse) {
        // diagonal-like supports: direct term loops are cheaper and keep
        // the pair-canonical order (exact symmetry for symmetric inputs)
        const std::vector<PairEntry> order = build_pair_order(rho);
        for (std::size_t i = 0; i < pts; ++i) {
            const double* fs = tab_s.data() + i * (ns + 1);
            for (std::size_t j = 0; j < pts; ++j) {
                const double* fi = tab_i.data() + j * (ni + 1);
                const PointAccum pa = eval_point(rho, order, fs, fi);
                store(i, j, pa.sum, pa.largest, pa.term_s, pa.term_i);
            }
        }
    } else {
        // dense supports: contract the signal arm first, then sweep the
        // idler arm; a max-product companion tracks the largest term so
        // the cancellation detector survives the factorization
        std::vector<double> row_sum(ni + 1);
        std::vector<double> row_max(ni + 1);
        for (std::size_t i = 0; i < pts; ++i) {
            std::fill(row_sum.begin(), row_sum.end(), 0.0);
            std::fill(row_max.begin(), row_max.end(), 0.0);
            const double* fs = tab_s.data() + i * (ns + 1);
            for (std::size_t a = 0; a <= ns; ++a) {
                const double va = fs[a];
                if (va == 0.0)
                    continue;
                const double ava = std::abs(va);
                const double* prow = rho.probs().data() + a * (ni + 1);
                for (std::size_t b = 0; b <= ni; ++b) {
                    const double p = prow[b];
                    if (p == 0.0)
                        continue;
                    row_sum[b] += va * p;
                    row_max[b] = std::max(row_max[b], ava * p);
                }
            }
            for (std::size_t j = 0; j < pts; ++j) {
                const double* fi = tab_i.data() + j * (ni + 1);
                CompensatedSum acc;
                double largest = 0.0;
                std::size_t wb = 0;
                for (std::size_t b = 0; b <= ni; ++b) {
                    acc.add(row_sum[b] * fi[b]);
                    const double m = row_max[b] * std::abs(fi[b]);
                    if (m > largest) {
                        largest = m;
                        wb = b;
                    }
                }
                store(i, j, acc.value(), largest, ns, wb);
            }
        }
    }
    return grid;
}

NegativityReport negativity_report(const IntensityGrid& grid) {
    const std::size_t rows = grid.w_s_axis.size();
    const std::size_t cols = grid.w_i_axis.size();
    if (rows == 0 || cols == 0 || grid.values.size() != rows * cols)
        throw validation_error("negativity report needs a populated grid");
    NegativityReport rep{};
    rep.min_value = grid.values[0];
    std::size_t at = 0;
    std::size_t negatives = 0;
    for (std::size_t k = 0; k < grid.values.size(); ++k) {
        if (grid.values[k] < rep.min_value) {
            rep.min_value = grid.values[k];
            at = k;
        }
        if (grid.values[k] < 0.0)
            ++negatives;
    }
    rep.w_s_at_min = grid.w_s_axis[at / cols];
    rep.w_i_at_min = grid.w_i_axis[at % cols];
    rep.negative_fraction =
        static_cast<double>(negatives) / static_cast<double>(grid.values.size());
    return rep;
}

double trapezoid_integral(const IntensityGrid& grid) {
    const std::size_t rows = grid.w_s_axis.size();
    const std::size_t cols = grid.w_i_axis.size();
    if (rows < 2 || cols < 2 || grid.values.size() != rows * cols)
        throw validation_error("trapezoid quadrature needs at least a 2x2 grid");
    auto weights = [](const std::vector<double>& axis) {
        std::vector<double> w(axis.size());
        w.front() = 0.5 * (axis[1] - axis[0]);
        w.back() = 0.5 * (axis[axis.size() - 1] - axis[axis.size() - 2]);
        for (std::size_t k = 1; k + 1 < axis.size(); ++k)
            w[k] = 0.5 * (axis[k + 1] - axis[k - 1]);
        return w;
    };
    const std::vector<double> ws = weights(grid.w_s_axis);
    const std::vector<double> wi = weights(grid.w_i_axis);
    CompensatedSum total;
    for (std::size_t i = 0; i < rows; ++i) {
        CompensatedSum row;
        for (std::size_t j = 0; j < cols; ++j)
            row.add(wi[j] * grid.values[i * cols + j]);
        total.add(ws[i] * row.value());
    }
    return total.value();
}

double default_w_max(const JointPnd& rho) {
    const JointMoments m = joint_moments(rho);
    return std::max(2.5 * (m.mean_s + m.mean_i), 1.0);
}

} // namespace twinbeam
