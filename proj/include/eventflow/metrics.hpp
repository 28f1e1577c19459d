#pragma once

// Distribution-fidelity metrics: truth-bounded histogram chi^2 (1D and
// pairwise 2D), unbinned empirical Wasserstein-1, Pearson correlation-matrix
// distance, and nearest-neighbor memorization diagnostics.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eventflow/datasets.hpp"

namespace evf {

struct HistogramSpec {
    int bins_1d = 50;
    int bins_2d = 20;  // per axis
};

// Truth-bounded 50-bin chi^2: bins span [truth min, truth max], generated
// samples outside the range are dropped, the generated histogram is rescaled
// to the truth total, and bins with zero expected count are excluded.
double chi2_1d(std::span<const float> gen, std::span<const float> truth, int bins = 50);

// Exact empirical W1 via CDFs (sorted-sample mean |difference| for equal
// sizes, piecewise CDF integral otherwise); unbinned.
double wasserstein_1d(std::span<const float> gen, std::span<const float> truth);

struct Chi2PairwiseResult {
    double mean = 0.0;
    int pairs_evaluated = 0;
    int pairs_skipped = 0;  // degenerate truth axis
};

// Mean 2D chi^2 over all unordered feature pairs, 20x20 truth-bounded bins.
Chi2PairwiseResult chi2_2d(const FeatureMatrix& gen, const FeatureMatrix& truth,
                           int bins_per_axis = 20);

// Frobenius norm of the difference of Pearson correlation matrices.
double correlation_distance(const FeatureMatrix& gen, const FeatureMatrix& truth);

// Exact nearest-neighbor queries (L2). Matches a brute-force scan bitwise:
// squared distances accumulate in double over features in index order.
class NearestNeighborIndex {
public:
    explicit NearestNeighborIndex(const FeatureMatrix& points);
    // Nearest distance from q to any indexed point, optionally excluding one
    // index (self-queries).
    double nearest_distance(const float* q, std::ptrdiff_t exclude = -1) const;
    std::size_t size() const { return n_; }

private:
    struct Node {
        std::uint32_t begin, end;  // leaf range in order_
        std::int32_t left = -1, right = -1;
        int split_dim = -1;
        float split_value = 0.f;
    };
    double search(int node, const float* q, std::ptrdiff_t exclude, double best) const;

    std::size_t n_ = 0, d_ = 0;
    std::vector<float> coords_;        // row-major copy
    std::vector<std::uint32_t> order_;  // point indices, permuted by splits
    std::vector<Node> nodes_;
};

struct NnOptions {
    std::size_t gen_subset = 80000;  // generated probes (all rows if fewer)
    std::size_t probe_size = 10000;  // train->train probe sub-sample
    std::uint64_t seed = 0;          // probe sub-sample draw
};

struct NnReport {
    double ratio = 0.0;
    double d_gen_to_train_mean = 0.0;
    double d_gen_to_train_min = 0.0;
    double d_train_to_train_mean = 0.0;
    double d_train_to_train_min = 0.0;
    bool denominator_artifact = false;  // d_train_to_train mean below 1e-12
};

NnReport nn_memorization(const FeatureMatrix& gen, const FeatureMatrix& train,
                         const NnOptions& opt = {});

struct MetricsReport {
    double chi2_mean = 0.0;
    double chi2_sum = 0.0;  // aggregate summed over features
    int chi2_features = 0;  // features with non-degenerate truth support
    double wasserstein_mean = 0.0;
    double chi2_2d_mean = 0.0;
    int chi2_2d_pairs = 0;
    double correlation_distance = 0.0;
    std::optional<NnReport> nn;
    std::optional<double> nfe_mean;
    std::vector<std::string> warnings;
};

struct EvalOptions {
    HistogramSpec hist;
    NnOptions nn;
};

// Full report. The nn block is computed only when train data is supplied;
// both probe sets are standardized internally with stats fit on train.
// Degenerate truth features (zero-width support) fall back to W1/NN with a
// warning instead of failing.
MetricsReport evaluate(const FeatureMatrix& gen, const FeatureMatrix& truth,
                       const FeatureMatrix* train = nullptr, const EvalOptions& opt = {});

std::string report_to_json(const MetricsReport& report);
void write_report(const std::string& path, const MetricsReport& report);

}  // namespace evf
