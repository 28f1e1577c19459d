#include "eventflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

namespace evf {

namespace {

struct Extent {
    double lo, hi;
};

Extent column_extent(const FeatureMatrix& m, std::size_t j) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m.n_events(); ++i) {
        const double x = m.data.at(i, j);
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    return {lo, hi};
}

inline int bin_index(double x, double lo, double hi, int bins) {
    if (x < lo || x > hi) return -1;
    int idx = static_cast<int>((x - lo) / (hi - lo) * bins);
    return std::min(idx, bins - 1);  // x == hi lands in the last bin
}

// sum over E>0 of (O*T/kept - E)^2 / E. Multiplying before dividing keeps
// the statistic exactly invariant under duplicating the generated sample.
double chi2_from_counts(const std::vector<double>& obs, const std::vector<double>& exp,
                        double truth_total, double kept) {
    double chi2 = 0.0;
    for (std::size_t i = 0; i < exp.size(); ++i) {
        if (exp[i] <= 0.0) continue;
        const double scaled = kept > 0.0 ? (obs[i] * truth_total) / kept : 0.0;
        const double d = scaled - exp[i];
        chi2 += d * d / exp[i];
    }
    return chi2;
}

}  // namespace

double chi2_1d(std::span<const float> gen, std::span<const float> truth, int bins) {
    if (truth.empty()) throw ConfigError("chi2_1d: empty truth sample");
    if (bins < 1) throw ConfigError("chi2_1d: bins must be >= 1");
    double lo = truth[0], hi = truth[0];
    for (float x : truth) {
        lo = std::min<double>(lo, x);
        hi = std::max<double>(hi, x);
    }
    if (!(hi > lo))
        throw ConfigError("chi2_1d: degenerate truth support (min == max)");
    std::vector<double> e(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> o(static_cast<std::size_t>(bins), 0.0);
    for (float x : truth) e[static_cast<std::size_t>(bin_index(x, lo, hi, bins))] += 1.0;
    double kept = 0.0;
    for (float x : gen) {
        const int idx = bin_index(x, lo, hi, bins);
        if (idx < 0) continue;
        o[static_cast<std::size_t>(idx)] += 1.0;
        kept += 1.0;
    }
    return chi2_from_counts(o, e, static_cast<double>(truth.size()), kept);
}

double wasserstein_1d(std::span<const float> gen, std::span<const float> truth) {
    if (gen.empty() || truth.empty())
        throw ConfigError("wasserstein_1d: empty sample");
    std::vector<float> a(gen.begin(), gen.end());
    std::vector<float> b(truth.begin(), truth.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.size() == b.size()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
            acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
        return acc / static_cast<double>(a.size());
    }
    // Unequal sizes: integrate |F - G| across the merged breakpoints.
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t ia = 0, ib = 0;
    double prev = std::min<double>(a[0], b[0]);
    double acc = 0.0;
    while (ia < a.size() || ib < b.size()) {
        double x;
        if (ib >= b.size() || (ia < a.size() && a[ia] <= b[ib]))
            x = a[ia];
        else
            x = b[ib];
        const double fa = static_cast<double>(ia) / na;
        const double fb = static_cast<double>(ib) / nb;
        acc += std::abs(fa - fb) * (x - prev);
        prev = x;
        while (ia < a.size() && a[ia] == x) ++ia;
        while (ib < b.size() && b[ib] == x) ++ib;
    }
    return acc;
}

Chi2PairwiseResult chi2_2d(const FeatureMatrix& gen, const FeatureMatrix& truth,
                           int bins_per_axis) {
    if (gen.n_features() != truth.n_features())
        throw ShapeError("chi2_2d: feature counts differ");
    if (truth.n_features() < 2)
        throw ConfigError("chi2_2d: need at least 2 features");
    const std::size_t d = truth.n_features();
    const int nb = bins_per_axis;
    Chi2PairwiseResult res;
    double sum = 0.0;
    for (std::size_t f1 = 0; f1 < d; ++f1) {
        const Extent ex1 = column_extent(truth, f1);
        for (std::size_t f2 = f1 + 1; f2 < d; ++f2) {
            const Extent ex2 = column_extent(truth, f2);
            if (!(ex1.hi > ex1.lo) || !(ex2.hi > ex2.lo)) {
                ++res.pairs_skipped;
                continue;
            }
            std::vector<double> e(static_cast<std::size_t>(nb) * nb, 0.0);
            std::vector<double> o(static_cast<std::size_t>(nb) * nb, 0.0);
            for (std::size_t i = 0; i < truth.n_events(); ++i) {
                const int b1 = bin_index(truth.data.at(i, f1), ex1.lo, ex1.hi, nb);
                const int b2 = bin_index(truth.data.at(i, f2), ex2.lo, ex2.hi, nb);
                e[static_cast<std::size_t>(b1) * nb + b2] += 1.0;
            }
            double kept = 0.0;
            for (std::size_t i = 0; i < gen.n_events(); ++i) {
                const int b1 = bin_index(gen.data.at(i, f1), ex1.lo, ex1.hi, nb);
                const int b2 = bin_index(gen.data.at(i, f2), ex2.lo, ex2.hi, nb);
                if (b1 < 0 || b2 < 0) continue;
                o[static_cast<std::size_t>(b1) * nb + b2] += 1.0;
                kept += 1.0;
            }
            sum += chi2_from_counts(o, e, static_cast<double>(truth.n_events()), kept);
            ++res.pairs_evaluated;
        }
    }
    res.mean = res.pairs_evaluated > 0 ? sum / res.pairs_evaluated : 0.0;
    return res;
}

namespace {

// Population-normalized Pearson correlation matrix (d x d, row-major).
std::vector<double> correlation_matrix(const FeatureMatrix& m) {
    const std::size_t n = m.n_events(), d = m.n_features();
    if (n < 2) throw ConfigError("correlation: need at least 2 events");
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += m.data.at(i, j);
    for (auto& v : mean) v /= static_cast<double>(n);
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = m.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            const double da = row[a] - mean[a];
            for (std::size_t b = a; b < d; ++b)
                cov[a * d + b] += da * (row[b] - mean[b]);
        }
    }
    for (auto& v : cov) v /= static_cast<double>(n);
    std::vector<double> sd(d);
    for (std::size_t a = 0; a < d; ++a) {
        sd[a] = std::sqrt(cov[a * d + a]);
        if (!(sd[a] > 1e-12))
            throw ConfigError("correlation: degenerate feature " + std::to_string(a) +
                              " (zero variance)");
    }
    std::vector<double> corr(d * d, 0.0);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            const double c = cov[a * d + b] / (sd[a] * sd[b]);
            corr[a * d + b] = c;
            corr[b * d + a] = c;
        }
    return corr;
}

}  // namespace

double correlation_distance(const FeatureMatrix& gen, const FeatureMatrix& truth) {
    if (gen.n_features() != truth.n_features())
        throw ShapeError("correlation_distance: feature counts differ");
    const auto cg = correlation_matrix(gen);
    const auto ct = correlation_matrix(truth);
    double acc = 0.0;
    for (std::size_t i = 0; i < cg.size(); ++i) {
        const double d = ct[i] - cg[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

// --------------------------------------------------------------- nn index

namespace {

inline double sq_dist(const float* a, const float* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
        acc += diff * diff;
    }
    return acc;
}

}  // namespace

NearestNeighborIndex::NearestNeighborIndex(const FeatureMatrix& points)
    : n_(points.n_events()), d_(points.n_features()), coords_(points.data.v) {
    if (n_ == 0) throw ConfigError("nn index: empty point set");
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0u);
    constexpr std::uint32_t kLeafSize = 16;

    struct Job {
        std::uint32_t begin, end;
        std::int32_t parent;
        bool is_left;
    };
    std::vector<Job> stack{{0, static_cast<std::uint32_t>(n_), -1, false}};
    while (!stack.empty()) {
        const Job job = stack.back();
        stack.pop_back();
        const std::int32_t id = static_cast<std::int32_t>(nodes_.size());
        nodes_.push_back({job.begin, job.end, -1, -1, -1, 0.f});
        if (job.parent >= 0) {
            if (job.is_left)
                nodes_[static_cast<std::size_t>(job.parent)].left = id;
            else
                nodes_[static_cast<std::size_t>(job.parent)].right = id;
        }
        const std::uint32_t count = job.end - job.begin;
        if (count <= kLeafSize) continue;

        // Split on the widest dimension at the median point.
        int best_dim = 0;
        double best_spread = -1.0;
        for (std::size_t dim = 0; dim < d_; ++dim) {
            double lo = coords_[order_[job.begin] * d_ + dim];
            double hi = lo;
            for (std::uint32_t i = job.begin; i < job.end; ++i) {
                const double x = coords_[order_[i] * d_ + dim];
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                best_dim = static_cast<int>(dim);
            }
        }
        if (best_spread <= 0.0) continue;  // all points identical: leave as leaf
        const std::uint32_t mid = job.begin + count / 2;
        std::nth_element(order_.begin() + job.begin, order_.begin() + mid,
                         order_.begin() + job.end,
                         [&](std::uint32_t a, std::uint32_t b) {
                             return coords_[a * d_ + best_dim] < coords_[b * d_ + best_dim];
                         });
        auto& node = nodes_[static_cast<std::size_t>(id)];
        node.split_dim = best_dim;
        node.split_value = coords_[order_[mid] * d_ + best_dim];
        stack.push_back({job.begin, mid, id, true});
        stack.push_back({mid, job.end, id, false});
    }
}

double NearestNeighborIndex::search(int node_id, const float* q, std::ptrdiff_t exclude,
                                    double best) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.split_dim < 0) {
        for (std::uint32_t i = node.begin; i < node.end; ++i) {
            const std::uint32_t idx = order_[i];
            if (static_cast<std::ptrdiff_t>(idx) == exclude) continue;
            best = std::min(best, sq_dist(q, coords_.data() + idx * d_, d_));
        }
        return best;
    }
    const double delta = static_cast<double>(q[node.split_dim]) -
                         static_cast<double>(node.split_value);
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    best = search(near, q, exclude, best);
    if (delta * delta < best) best = search(far, q, exclude, best);
    return best;
}

double NearestNeighborIndex::nearest_distance(const float* q, std::ptrdiff_t exclude) const {
    const double best = search(0, q, exclude, std::numeric_limits<double>::infinity());
    return std::sqrt(best);
}

NnReport nn_memorization(const FeatureMatrix& gen, const FeatureMatrix& train,
                         const NnOptions& opt) {
    if (gen.n_features() != train.n_features())
        throw ShapeError("nn_memorization: feature counts differ");
    if (train.n_events() < 2)
        throw ConfigError("nn_memorization: need at least 2 training points");
    if (gen.n_events() == 0) throw ConfigError("nn_memorization: empty generated sample");

    const NearestNeighborIndex index(train);
    NnReport rep;

    const std::size_t n_gen = std::min<std::size_t>(opt.gen_subset, gen.n_events());
    double acc = 0.0, mn = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_gen; ++i) {
        const double dist = index.nearest_distance(gen.row(i));
        acc += dist;
        mn = std::min(mn, dist);
    }
    rep.d_gen_to_train_mean = acc / static_cast<double>(n_gen);
    rep.d_gen_to_train_min = mn;

    // Probe sub-sample matched against the remaining training points.
    const std::size_t n_train = train.n_events();
    std::vector<std::uint32_t> probe;
    if (opt.probe_size >= n_train) {
        probe.resize(n_train);
        std::iota(probe.begin(), probe.end(), 0u);
    } else {
        // Partial Fisher-Yates for the first probe_size positions.
        std::vector<std::uint32_t> pool(n_train);
        std::iota(pool.begin(), pool.end(), 0u);
        Rng rng(opt.seed);
        for (std::size_t i = 0; i < opt.probe_size; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(n_train - i));
            std::swap(pool[i], pool[j]);
        }
        probe.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(opt.probe_size));
    }
    acc = 0.0;
    mn = std::numeric_limits<double>::infinity();
    for (const std::uint32_t idx : probe) {
        const double dist =
            index.nearest_distance(train.row(idx), static_cast<std::ptrdiff_t>(idx));
        acc += dist;
        mn = std::min(mn, dist);
    }
    rep.d_train_to_train_mean = acc / static_cast<double>(probe.size());
    rep.d_train_to_train_min = mn;

    rep.denominator_artifact = rep.d_train_to_train_mean < 1e-12;
    const double denom = std::max(rep.d_train_to_train_mean, 1e-12);
    rep.ratio = rep.d_gen_to_train_mean / denom;
    return rep;
}

// --------------------------------------------------------------- evaluate

MetricsReport evaluate(const FeatureMatrix& gen, const FeatureMatrix& truth,
                       const FeatureMatrix* train, const EvalOptions& opt) {
    if (gen.n_features() != truth.n_features())
        throw ShapeError("evaluate: gen/truth feature counts differ");
    if (gen.n_events() == 0 || truth.n_events() == 0)
        throw ConfigError("evaluate: empty sample");
    const std::size_t d = truth.n_features();
    MetricsReport rep;

    int chi2_features = 0;
    double w1_sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const auto gcol = gen.column(j);
        const auto tcol = truth.column(j);
        const Extent ex = column_extent(truth, j);
        if (ex.hi > ex.lo) {
            const double c = chi2_1d(gcol, tcol, opt.hist.bins_1d);
            rep.chi2_sum += c;
            ++chi2_features;
        } else {
            rep.warnings.push_back("chi2 skipped for feature " + std::to_string(j) +
                                   ": degenerate truth support");
        }
        w1_sum += wasserstein_1d(gcol, tcol);
    }
    rep.chi2_features = chi2_features;
    rep.chi2_mean = chi2_features > 0 ? rep.chi2_sum / chi2_features : 0.0;
    rep.wasserstein_mean = w1_sum / static_cast<double>(d);

    if (d >= 2) {
        const auto pw = chi2_2d(gen, truth, opt.hist.bins_2d);
        rep.chi2_2d_mean = pw.mean;
        rep.chi2_2d_pairs = pw.pairs_evaluated;
        if (pw.pairs_skipped > 0)
            rep.warnings.push_back(std::to_string(pw.pairs_skipped) +
                                   " feature pair(s) skipped in 2D chi2: degenerate axis");
    }

    try {
        rep.correlation_distance = correlation_distance(gen, truth);
    } catch (const ConfigError& e) {
        rep.correlation_distance = 0.0;
        rep.warnings.push_back(std::string("correlation distance skipped: ") + e.what());
    }

    if (train) {
        if (train->n_features() != d)
            throw ShapeError("evaluate: train feature count differs");
        // NN distances compare in standardized space; fall back to raw values
        // when the training sample has a degenerate feature.
        try {
            FeatureMatrix gen_raw = gen;
            gen_raw.space = Space::physical;
            FeatureMatrix train_raw = *train;
            train_raw.space = Space::physical;
            const PreprocessStats st = fit_preprocess(train_raw, 1.0);
            rep.nn = nn_memorization(apply_preprocess(gen_raw, st),
                                     apply_preprocess(train_raw, st), opt.nn);
        } catch (const ConfigError&) {
            rep.warnings.push_back("nn block computed on unstandardized values: "
                                   "degenerate training feature");
            rep.nn = nn_memorization(gen, *train, opt.nn);
        }
        if (rep.nn->denominator_artifact)
            rep.warnings.push_back("nn ratio is a denominator-driven artifact "
                                   "(d_train_to_train mean below 1e-12)");
    }
    return rep;
}

std::string report_to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["chi2_mean"] = report.chi2_mean;
    j["chi2_sum"] = report.chi2_sum;
    j["wasserstein_mean"] = report.wasserstein_mean;
    j["chi2_2d_mean"] = report.chi2_2d_mean;
    j["chi2_2d_pairs"] = report.chi2_2d_pairs;
    j["correlation_distance"] = report.correlation_distance;
    if (report.nn) {
        j["nn_ratio"] = report.nn->ratio;
        j["d_gen_to_train_mean"] = report.nn->d_gen_to_train_mean;
        j["d_gen_to_train_min"] = report.nn->d_gen_to_train_min;
        j["d_train_to_train_mean"] = report.nn->d_train_to_train_mean;
        j["d_train_to_train_min"] = report.nn->d_train_to_train_min;
        j["nn_denominator_artifact"] = report.nn->denominator_artifact;
    }
    if (report.nfe_mean) j["nfe_mean"] = *report.nfe_mean;
    if (!report.warnings.empty()) j["warnings"] = report.warnings;
    return j.dump(2);
}

void write_report(const std::string& path, const MetricsReport& report) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << report_to_json(report) << "\n";
}

}  // namespace evf
