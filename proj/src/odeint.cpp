#include "eventflow/odeint.hpp"

#include <cmath>

namespace evf {

namespace {

// Velocity-field adapter: double solver state in, float network eval, double
// derivatives out. cond rows (when present) stay pinned for the whole solve.
struct FieldEval {
    const VelocityNetParams& params;
    const MatF* cond = nullptr;

    void operator()(double t, const MatD& x, MatD& dx) const {
        MatF xf(x.rows, x.cols);
        for (std::size_t i = 0; i < x.v.size(); ++i)
            xf.v[i] = static_cast<float>(x.v[i]);
        std::vector<float> ts(x.rows, static_cast<float>(t));
        const MatF v = net_forward(params, xf, ts, cond);
        for (std::size_t i = 0; i < v.v.size(); ++i)
            dx.v[i] = static_cast<double>(v.v[i]);
    }
};

struct ShardTally {
    double nfe_weighted = 0.0;
    long long accepted = 0;
    long long rejected = 0;
    std::size_t events = 0;

    void add(const IntegrationResult& r, std::size_t rows) {
        nfe_weighted += static_cast<double>(r.nfe) * static_cast<double>(rows);
        accepted += r.accepted;
        rejected += r.rejected;
        events += rows;
    }
    double nfe_mean() const {
        return events ? nfe_weighted / static_cast<double>(events) : 0.0;
    }
};

// Integrate one shard, shared or per-trajectory stepping.
void integrate_shard(const VelocityNetParams& params, const MatF* cond_shard,
                     MatD& x_shard, const SolverConfig& cfg, ShardTally& tally) {
    if (!cfg.per_trajectory) {
        FieldEval field{params, cond_shard};
        IntegrationResult r = dopri5(field, x_shard, 0.0, 1.0, cfg);
        x_shard = std::move(r.state);
        tally.add(r, x_shard.rows);
        return;
    }
    const std::size_t d = x_shard.cols;
    for (std::size_t i = 0; i < x_shard.rows; ++i) {
        MatD row(1, d);
        for (std::size_t j = 0; j < d; ++j) row.v[j] = x_shard.at(i, j);
        MatF cond_row;
        if (cond_shard) {
            cond_row = MatF(1, d);
            for (std::size_t j = 0; j < d; ++j) cond_row.v[j] = cond_shard->at(i, j);
        }
        FieldEval field{params, cond_shard ? &cond_row : nullptr};
        IntegrationResult r = dopri5(field, row, 0.0, 1.0, cfg);
        for (std::size_t j = 0; j < d; ++j) x_shard.at(i, j) = r.state.v[j];
        tally.add(r, 1);
    }
}

GenerateResult run_batches(const VelocityNetParams& params, const PreprocessStats& stats,
                           MatD prior, const MatF* cond, const SolverConfig& cfg) {
    const std::size_t n = prior.rows;
    const std::size_t d = prior.cols;
    const std::size_t limit = cfg.batch_limit == 0 ? n : cfg.batch_limit;

    ShardTally tally;
    FeatureMatrix out_std(n, d, Space::standardized);
    for (std::size_t begin = 0; begin < n; begin += limit) {
        const std::size_t rows = std::min(limit, n - begin);
        MatD shard(rows, d);
        std::copy(prior.v.begin() + static_cast<std::ptrdiff_t>(begin * d),
                  prior.v.begin() + static_cast<std::ptrdiff_t>((begin + rows) * d),
                  shard.v.begin());
        MatF cond_shard;
        if (cond) {
            cond_shard = MatF(rows, d);
            std::copy(cond->v.begin() + static_cast<std::ptrdiff_t>(begin * d),
                      cond->v.begin() + static_cast<std::ptrdiff_t>((begin + rows) * d),
                      cond_shard.v.begin());
        }
        integrate_shard(params, cond ? &cond_shard : nullptr, shard, cfg, tally);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < d; ++j)
                out_std.data.at(begin + i, j) = static_cast<float>(shard.at(i, j));
    }

    GenerateResult res;
    res.events = invert_preprocess(out_std, stats);
    res.nfe_mean = tally.nfe_mean();
    res.accepted = tally.accepted;
    res.rejected = tally.rejected;
    return res;
}

}  // namespace

GenerateResult generate(const VelocityNetParams& params, const PreprocessStats& stats,
                        std::size_t n, const SolverConfig& cfg, std::uint64_t seed) {
    if (params.cfg.mode != NetMode::unconditional)
        throw StateError("generate: checkpoint is conditional; use unfold");
    if (stats.mean.size() != static_cast<std::size_t>(params.cfg.dim))
        throw ShapeError("generate: preprocess stats width != network dim");
    const std::size_t d = static_cast<std::size_t>(params.cfg.dim);
    MatD prior(n, d);
    Rng rng(seed);
    for (auto& x : prior.v) x = rng.normal();
    return run_batches(params, stats, std::move(prior), nullptr, cfg);
}

GenerateResult unfold_with_seeds(const VelocityNetParams& params,
                                 const PreprocessStats& stats,
                                 const FeatureMatrix& detector_std,
                                 const SolverConfig& cfg,
                                 std::span<const std::uint64_t> row_seeds) {
    if (params.cfg.mode != NetMode::conditional)
        throw StateError("unfold: checkpoint is unconditional; use generate");
    if (detector_std.n_features() != static_cast<std::size_t>(params.cfg.dim))
        throw ShapeError("unfold: detector feature count != network dim");
    if (detector_std.space != Space::standardized)
        throw StateError("unfold: detector events must be standardized with the "
                         "checkpoint stats");
    if (row_seeds.size() != detector_std.n_events())
        throw ShapeError("unfold: one prior seed per detector row required");
    const std::size_t d = static_cast<std::size_t>(params.cfg.dim);
    const std::size_t n = detector_std.n_events();
    MatD prior(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        Rng row_rng(row_seeds[i]);
        for (std::size_t j = 0; j < d; ++j) prior.at(i, j) = row_rng.normal();
    }
    return run_batches(params, stats, std::move(prior), &detector_std.data, cfg);
}

GenerateResult unfold(const VelocityNetParams& params, const PreprocessStats& stats,
                      const FeatureMatrix& detector_std, const SolverConfig& cfg,
                      std::uint64_t seed) {
    std::vector<std::uint64_t> seeds(detector_std.n_events());
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = derive_seed(seed, i);
    return unfold_with_seeds(params, stats, detector_std, cfg, seeds);
}

}  // namespace evf
