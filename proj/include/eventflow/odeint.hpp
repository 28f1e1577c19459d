#pragma once

// Adaptive Dormand-Prince 5(4) integration with FSAL, function-evaluation
// accounting, and the generation/unfolding entry points that transport
// Gaussian prior samples through a trained velocity field.

#include <array>
#include <cstdint>
#include <optional>
#include <span>

#include "eventflow/datasets.hpp"
#include "eventflow/velocity_net.hpp"

namespace evf {

struct SolverConfig {
    double atol = 1e-7;
    double rtol = 1e-7;
    int max_steps = 10000;  // attempted steps per integration
    std::optional<double> initial_step;
    // Shared stepping integrates a whole batch with one step sequence
    // (default); per-trajectory stepping adapts each event independently.
    bool per_trajectory = false;
    std::size_t batch_limit = 16384;  // events per integration shard

    void validate() const {
        if (!(atol > 0.0) || !(rtol > 0.0))
            throw ConfigError("solver: atol and rtol must be positive");
        if (max_steps < 1) throw ConfigError("solver: max_steps must be >= 1");
        if (initial_step && !(*initial_step > 0.0))
            throw ConfigError("solver: initial_step must be positive");
    }
};

inline SolverConfig relaxed_solver_config() {
    SolverConfig s;
    s.atol = 1e-3;
    s.rtol = 1e-3;
    return s;
}

template <class T>
struct IntegrationResultT {
    Mat<T> state;
    long long nfe = 0;  // velocity-field calls: 6*accepted + 6*rejected + 1
    long long accepted = 0;
    long long rejected = 0;
};

using IntegrationResult = IntegrationResultT<double>;

struct SolverNonConvergence : NumericalError {
    SolverNonConvergence(const std::string& msg, double t, MatD state)
        : NumericalError(msg), t_reached(t), partial(std::move(state)) {}
    double t_reached;
    MatD partial;
};

namespace detail {

struct Dopri5Tableau {
    static constexpr std::array<double, 7> c = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5,
                                                8.0 / 9, 1.0, 1.0};
    static constexpr std::array<std::array<double, 6>, 7> a = {{
        {},
        {1.0 / 5},
        {3.0 / 40, 9.0 / 40},
        {44.0 / 45, -56.0 / 15, 32.0 / 9},
        {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
        {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
        {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
    }};
    // 5th-order weights coincide with the last a-row (FSAL); the error
    // estimate uses b - b4th.
    static constexpr std::array<double, 7> err = {
        71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920,
        -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

    template <class T>
    static void combine(Mat<T>& out, const Mat<T>& y,
                        const std::array<Mat<T>, 7>& k, std::span<const double> w,
                        double h) {
        const std::size_t n = y.v.size();
        for (std::size_t i = 0; i < n; ++i) {
            double acc = static_cast<double>(y.v[i]);
            for (std::size_t s = 0; s < w.size(); ++s)
                if (w[s] != 0.0) acc += h * w[s] * static_cast<double>(k[s].v[i]);
            out.v[i] = static_cast<T>(acc);
        }
    }
};

template <class T>
MatD to_double_mat(const Mat<T>& m) {
    MatD out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.v.size(); ++i)
        out.v[i] = static_cast<double>(m.v[i]);
    return out;
}

}  // namespace detail

// One 5th-order step of size h without error control (order studies).
template <class T, class F>
Mat<T> dopri5_fixed(F&& f, const Mat<T>& x0, double t0, double t1, int n_steps) {
    if (n_steps < 1) throw ConfigError("dopri5_fixed: n_steps must be >= 1");
    using Tab = detail::Dopri5Tableau;
    const double h = (t1 - t0) / n_steps;
    Mat<T> y = x0;
    std::array<Mat<T>, 7> k;
    for (auto& m : k) m = Mat<T>(y.rows, y.cols);
    Mat<T> ytmp(y.rows, y.cols);
    for (int step = 0; step < n_steps; ++step) {
        const double t = t0 + step * h;
        f(t, y, k[0]);
        for (int s = 1; s < 6; ++s) {
            Tab::combine(ytmp, y, k, std::span<const double>(Tab::a[static_cast<std::size_t>(s)].data(), static_cast<std::size_t>(s)), h);
            f(t + Tab::c[static_cast<std::size_t>(s)] * h, ytmp, k[static_cast<std::size_t>(s)]);
        }
        Tab::combine(ytmp, y, k, std::span<const double>(Tab::a[6].data(), 6), h);
        y = ytmp;
    }
    return y;
}

// Adaptive DOPRI5 over [t0, t1] (t1 > t0). f(t, x, dx) evaluates the field.
// Error norm: RMS over every component of err_i / (atol + rtol *
// max(|x_i|, |x'_i|)); a step is accepted iff the norm is <= 1. The step
// factor is 0.9 * norm^(-1/5) clamped to [0.2, 5.0] (and to <= 1 after a
// rejection). nfe counts every call to f.
template <class T, class F>
IntegrationResultT<T> dopri5(F&& f, const Mat<T>& x0, double t0, double t1,
                             const SolverConfig& cfg) {
    cfg.validate();
    if (!(t1 > t0)) throw ConfigError("dopri5: need t1 > t0");
    using Tab = detail::Dopri5Tableau;

    IntegrationResultT<T> res;
    res.state = x0;
    Mat<T>& y = res.state;
    const double span = t1 - t0;

    std::array<Mat<T>, 7> k;
    for (auto& m : k) m = Mat<T>(y.rows, y.cols);
    Mat<T> ytmp(y.rows, y.cols), y5(y.rows, y.cols);

    f(t0, y, k[0]);
    res.nfe = 1;

    const auto scaled_rms = [&](const Mat<T>& a, const Mat<T>& b, double h) {
        // a = pre-step state, b = candidate state; error = h * sum(err_s k_s)
        double acc = 0.0;
        const std::size_t n = y.v.size();
        for (std::size_t i = 0; i < n; ++i) {
            double e = 0.0;
            for (std::size_t s = 0; s < 7; ++s)
                if (Tab::err[s] != 0.0) e += Tab::err[s] * static_cast<double>(k[s].v[i]);
            e *= h;
            const double sc =
                cfg.atol + cfg.rtol * std::max(std::abs(static_cast<double>(a.v[i])),
                                               std::abs(static_cast<double>(b.v[i])));
            const double r = e / sc;
            acc += r * r;
        }
        return std::sqrt(acc / static_cast<double>(n));
    };

    double h;
    if (cfg.initial_step) {
        h = std::min(*cfg.initial_step, span);
    } else {
        // h from the state/derivative magnitudes alone; the second
        // evaluation of the full Hairer heuristic would break the pinned
        // nfe identity.
        double d0 = 0.0, d1 = 0.0;
        const std::size_t n = y.v.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double sc = cfg.atol + cfg.rtol * std::abs(static_cast<double>(y.v[i]));
            const double r0 = static_cast<double>(y.v[i]) / sc;
            const double r1 = static_cast<double>(k[0].v[i]) / sc;
            d0 += r0 * r0;
            d1 += r1 * r1;
        }
        d0 = std::sqrt(d0 / static_cast<double>(n));
        d1 = std::sqrt(d1 / static_cast<double>(n));
        if (d1 < 1e-12)
            h = span;  // flat field: try to cross in one step
        else if (d0 < 1e-14)
            h = 1e-6 * span;
        else
            h = std::min(0.01 * d0 / d1, span);
        if (!(h > 0.0) || !std::isfinite(h)) h = 1e-6 * span;
    }

    double t = t0;
    long long attempts = 0;
    while (t < t1 - 1e-14 * span) {
        if (attempts >= cfg.max_steps)
            throw SolverNonConvergence(
                "dopri5: max_steps (" + std::to_string(cfg.max_steps) +
                    ") exceeded at t=" + std::to_string(t),
                t, detail::to_double_mat(y));
        ++attempts;
        h = std::min(h, t1 - t);

        for (int s = 1; s < 6; ++s) {
            Tab::combine(ytmp, y, k, std::span<const double>(Tab::a[static_cast<std::size_t>(s)].data(), static_cast<std::size_t>(s)), h);
            f(t + Tab::c[static_cast<std::size_t>(s)] * h, ytmp, k[static_cast<std::size_t>(s)]);
        }
        Tab::combine(y5, y, k, std::span<const double>(Tab::a[6].data(), 6), h);
        f(t + h, y5, k[6]);
        res.nfe += 6;

        const double norm = scaled_rms(y, y5, h);
        if (!std::isfinite(norm))
            throw NumericalError("dopri5: velocity field returned non-finite values at t=" +
                                 std::to_string(t));

        const bool accept = norm <= 1.0;
        if (accept) {
            ++res.accepted;
            t += h;
            std::swap(y.v, y5.v);
            std::swap(k[0].v, k[6].v);  // FSAL
        } else {
            ++res.rejected;
        }
        double factor = norm > 0.0 ? 0.9 * std::pow(norm, -0.2) : 5.0;
        factor = std::min(5.0, std::max(0.2, factor));
        if (!accept) factor = std::min(factor, 1.0);
        h *= factor;
    }
    if (!y.all_finite())
        throw NumericalError("dopri5: non-finite final state");
    return res;
}

// ----------------------------------------------------------- entry points

struct GenerateResult {
    FeatureMatrix events;  // physical space
    double nfe_mean = 0.0;
    long long accepted = 0;
    long long rejected = 0;
};

// Unconditional sampling: prior draws integrate through the field and the
// result is mapped back to physical units.
GenerateResult generate(const VelocityNetParams& params, const PreprocessStats& stats,
                        std::size_t n, const SolverConfig& cfg, std::uint64_t seed);

// Conditional unfolding of standardized detector-level rows; outputs are
// row-aligned with the input and drawn with per-row prior seeds.
GenerateResult unfold(const VelocityNetParams& params, const PreprocessStats& stats,
                      const FeatureMatrix& detector_std, const SolverConfig& cfg,
                      std::uint64_t seed);
GenerateResult unfold_with_seeds(const VelocityNetParams& params,
                                 const PreprocessStats& stats,
                                 const FeatureMatrix& detector_std,
                                 const SolverConfig& cfg,
                                 std::span<const std::uint64_t> row_seeds);

}  // namespace evf
