#include "eventflow/flow_train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace evf {

// ------------------------------------------------------------- optimizer

OptimizerState OptimizerState::for_params(const VelocityNetParams& params) {
    OptimizerState st;
    for (const auto& ref : tensor_refs(params)) {
        st.m.emplace_back(ref.size, 0.f);
        st.v.emplace_back(ref.size, 0.f);
    }
    return st;
}

void adamw_step(VelocityNetParams& params, const VelocityNetParams& grads,
                OptimizerState& state, double lr, double weight_decay) {
    auto prefs = tensor_refs(params);
    auto grefs = tensor_refs(grads);
    if (prefs.size() != grefs.size() || prefs.size() != state.m.size())
        throw ShapeError("adamw_step: parameter/gradient/state tensor counts differ");
    state.step += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2, eps = state.cfg.eps;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t ti = 0; ti < prefs.size(); ++ti) {
        if (prefs[ti].size != grefs[ti].size || prefs[ti].size != state.m[ti].size())
            throw ShapeError("adamw_step: tensor shape mismatch at " +
                             std::string(prefs[ti].name));
        float* p = prefs[ti].data;
        const float* g = grefs[ti].data;
        float* m = state.m[ti].data();
        float* v = state.v[ti].data();
        for (std::size_t i = 0; i < prefs[ti].size; ++i) {
            const double gi = g[i];
            const double mi = b1 * m[i] + (1.0 - b1) * gi;
            const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            double theta = p[i];
            theta -= lr * weight_decay * theta;  // decoupled decay
            theta -= lr * mhat / (std::sqrt(vhat) + eps);
            p[i] = static_cast<float>(theta);
        }
    }
}

// ------------------------------------------------------------- objective

CfmBatch make_cfm_batch(const FeatureMatrix& data_std,
                        const FeatureMatrix* detector_std,
                        std::span<const std::uint32_t> rows, Rng& rng,
                        std::optional<float> fixed_t) {
    if (data_std.space != Space::standardized)
        throw StateError("cfm batch: data must be standardized");
    if (detector_std && (detector_std->n_events() != data_std.n_events() ||
                         detector_std->n_features() != data_std.n_features()))
        throw ShapeError("cfm batch: detector pairing does not match truth data");
    const std::size_t n = rows.size();
    const std::size_t d = data_std.n_features();
    CfmBatch b;
    b.x_t = MatF(n, d);
    b.u_t = MatF(n, d);
    b.t.resize(n);
    b.has_cond = detector_std != nullptr;
    if (b.has_cond) b.cond = MatF(n, d);

    b.x0 = MatF(n, d);
    MatF& x0 = b.x0;
    for (auto& x : x0.v) x = static_cast<float>(rng.normal());
    for (std::size_t i = 0; i < n; ++i)
        b.t[i] = fixed_t ? *fixed_t : static_cast<float>(rng.uniform());

    for (std::size_t i = 0; i < n; ++i) {
        const float* x1 = data_std.row(rows[i]);
        const float* x0i = x0.row(i);
        const float ti = b.t[i];
        float* xt = b.x_t.row(i);
        float* ut = b.u_t.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            xt[j] = (1.0f - ti) * x0i[j] + ti * x1[j];
            ut[j] = x1[j] - x0i[j];
        }
        if (b.has_cond)
            std::memcpy(b.cond.row(i), detector_std->row(rows[i]), d * sizeof(float));
    }
    return b;
}

CfmBatch sample_cfm_batch(const FeatureMatrix& data_std,
                          const FeatureMatrix* detector_std, std::size_t batch_size,
                          Rng& rng, std::optional<float> fixed_t) {
    if (data_std.n_events() == 0) throw ConfigError("cfm batch: empty dataset");
    std::vector<std::uint32_t> rows(batch_size);
    for (auto& r : rows)
        r = static_cast<std::uint32_t>(rng.below(data_std.n_events()));
    return make_cfm_batch(data_std, detector_std, rows, rng, fixed_t);
}

double cfm_loss(const VelocityNetParams& params, const CfmBatch& batch,
                ForwardCache* cache, MatF* grad_seed) {
    const MatF v = net_forward(params, batch.x_t, batch.t,
                               batch.has_cond ? &batch.cond : nullptr, cache);
    return mse_rowsum_loss(v, batch.u_t, grad_seed);
}

double cfm_loss_and_grads(const VelocityNetParams& params, const CfmBatch& batch,
                          VelocityNetParams& grads) {
    ForwardCache cache;
    MatF seed;
    const double loss = cfm_loss(params, batch, &cache, &seed);
    net_backward(params, cache, seed, grads);
    return loss;
}

// ------------------------------------------------------------- checkpoints

namespace {

constexpr char kCkptMagic[4] = {'J', 'P', 'C', 'K'};
constexpr std::uint16_t kCkptVersion = 1;

struct BinWriter {
    std::ofstream out;
    explicit BinWriter(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw ParseError("cannot open '" + path + "' for writing");
    }
    template <class T>
    void put(T v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
};

struct BinReader {
    std::ifstream in;
    std::string path;
    explicit BinReader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw ParseError("cannot open checkpoint '" + p + "'");
    }
    template <class T>
    T get(const char* field) {
        T v;
        in.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (in.gcount() != sizeof(T))
            throw ParseError("truncated checkpoint '" + path + "' while reading field '" +
                             field + "'");
        return v;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointRecord& record) {
    BinWriter w(path);
    w.out.write(kCkptMagic, 4);
    w.put<std::uint16_t>(kCkptVersion);
    const NetConfig& nc = record.params.cfg;
    w.put<std::uint8_t>(nc.mode == NetMode::conditional ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nc.dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nc.hidden));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nc.blocks));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nc.time_embed.n_frequencies));
    w.put<double>(nc.time_embed.omega_min);
    w.put<double>(nc.time_embed.omega_max);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nc.time_embed.projected_dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nc.cond_hidden));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nc.cond_dim));

    w.put<std::uint32_t>(static_cast<std::uint32_t>(record.stats.mean.size()));
    for (std::size_t j = 0; j < record.stats.mean.size(); ++j) {
        w.put<double>(record.stats.mean[j]);
        w.put<double>(record.stats.stddev[j]);
    }
    w.put<double>(record.stats.scale);

    const TrainConfig& tc = record.config;
    w.put<double>(tc.lr);
    w.put<double>(tc.weight_decay);
    w.put<std::uint64_t>(tc.batch_size);
    w.put<std::int64_t>(tc.max_epochs);
    w.put<double>(tc.lr_decay_factor);
    w.put<std::int64_t>(tc.lr_patience);
    w.put<double>(tc.lr_floor);
    w.put<std::uint64_t>(tc.validation_subset);
    w.put<std::uint8_t>(tc.monitor == TrainConfig::Monitor::loss ? 1 : 0);
    w.put<std::uint64_t>(tc.seed);
    w.put<double>(tc.val_solver.atol);
    w.put<double>(tc.val_solver.rtol);

    w.put<std::int64_t>(record.epoch);
    w.put<double>(record.monitor_value);
    w.put<std::uint64_t>(record.rng_digest);

    for (const auto& ref : tensor_refs(record.params)) {
        w.put<std::uint64_t>(ref.size);
        w.out.write(reinterpret_cast<const char*>(ref.data),
                    static_cast<std::streamsize>(ref.size * sizeof(float)));
    }
    w.out.flush();
    if (!w.out) throw ParseError("checkpoint write failed for '" + path + "'");
}

CheckpointRecord load_checkpoint(const std::string& path) {
    BinReader r(path);
    char magic[4];
    r.in.read(magic, 4);
    if (r.in.gcount() != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw ParseError("'" + path + "' is not a checkpoint file (bad magic)");
    const auto version = r.get<std::uint16_t>("version");
    if (version != kCkptVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));

    NetConfig nc;
    nc.mode = r.get<std::uint8_t>("mode") ? NetMode::conditional : NetMode::unconditional;
    nc.dim = static_cast<int>(r.get<std::uint32_t>("dim"));
    nc.hidden = static_cast<int>(r.get<std::uint32_t>("hidden"));
    nc.blocks = static_cast<int>(r.get<std::uint32_t>("blocks"));
    nc.time_embed.n_frequencies = static_cast<int>(r.get<std::uint32_t>("n_frequencies"));
    nc.time_embed.omega_min = r.get<double>("omega_min");
    nc.time_embed.omega_max = r.get<double>("omega_max");
    nc.time_embed.projected_dim = static_cast<int>(r.get<std::uint32_t>("projected_dim"));
    nc.cond_hidden = static_cast<int>(r.get<std::uint32_t>("cond_hidden"));
    nc.cond_dim = static_cast<int>(r.get<std::uint32_t>("cond_dim"));
    nc.validate();

    CheckpointRecord rec;
    const auto n_stats = r.get<std::uint32_t>("stats width");
    rec.stats.mean.resize(n_stats);
    rec.stats.stddev.resize(n_stats);
    for (std::uint32_t j = 0; j < n_stats; ++j) {
        rec.stats.mean[j] = r.get<double>("stats mean");
        rec.stats.stddev[j] = r.get<double>("stats std");
    }
    rec.stats.scale = r.get<double>("stats scale");

    TrainConfig& tc = rec.config;
    tc.lr = r.get<double>("lr");
    tc.weight_decay = r.get<double>("weight_decay");
    tc.batch_size = r.get<std::uint64_t>("batch_size");
    tc.max_epochs = static_cast<int>(r.get<std::int64_t>("max_epochs"));
    tc.lr_decay_factor = r.get<double>("lr_decay_factor");
    tc.lr_patience = static_cast<int>(r.get<std::int64_t>("lr_patience"));
    tc.lr_floor = r.get<double>("lr_floor");
    tc.validation_subset = r.get<std::uint64_t>("validation_subset");
    tc.monitor = r.get<std::uint8_t>("monitor") ? TrainConfig::Monitor::loss
                                                : TrainConfig::Monitor::chi2_mean;
    tc.seed = r.get<std::uint64_t>("seed");
    tc.val_solver.atol = r.get<double>("val atol");
    tc.val_solver.rtol = r.get<double>("val rtol");

    rec.epoch = r.get<std::int64_t>("epoch");
    rec.monitor_value = r.get<double>("monitor value");
    rec.rng_digest = r.get<std::uint64_t>("rng digest");

    rec.params = init_params(nc, 0);  // allocate; values overwritten below
    for (auto& ref : tensor_refs(rec.params)) {
        const auto count = r.get<std::uint64_t>("tensor size");
        if (count != ref.size)
            throw ParseError("checkpoint tensor '" + std::string(ref.name) +
                             "' has size " + std::to_string(count) + ", expected " +
                             std::to_string(ref.size));
        r.in.read(reinterpret_cast<char*>(ref.data),
                  static_cast<std::streamsize>(ref.size * sizeof(float)));
        if (static_cast<std::size_t>(r.in.gcount()) != ref.size * sizeof(float))
            throw ParseError("truncated checkpoint '" + path + "' in tensor '" +
                             std::string(ref.name) + "'");
    }
    if (!rec.params.all_finite())
        throw ParseError("checkpoint '" + path + "' holds non-finite parameters");
    return rec;
}

// ------------------------------------------------------------- epoch log

std::string epoch_record_to_json(const EpochRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_loss"] = r.val_loss;
    j["chi2_mean"] = r.chi2_mean;
    j["wasserstein_mean"] = r.wasserstein_mean;
    j["correlation_distance"] = r.correlation_distance;
    j["nfe_mean"] = r.nfe_mean;
    j["lr"] = r.lr;
    j["seconds"] = r.seconds;
    return j.dump();
}

void write_epoch_log(const std::string& path, std::span<const EpochRecord> records) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    for (const auto& r : records) out << epoch_record_to_json(r) << "\n";
}

std::vector<EpochRecord> read_epoch_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open epoch log '" + path + "'");
    std::vector<EpochRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        EpochRecord r;
        r.epoch = j.at("epoch").get<std::int64_t>();
        r.train_loss = j.at("train_loss").get<double>();
        r.val_loss = j.at("val_loss").get<double>();
        r.chi2_mean = j.at("chi2_mean").get<double>();
        r.wasserstein_mean = j.at("wasserstein_mean").get<double>();
        r.correlation_distance = j.at("correlation_distance").get<double>();
        r.nfe_mean = j.at("nfe_mean").get<double>();
        r.lr = j.at("lr").get<double>();
        r.seconds = j.at("seconds").get<double>();
        records.push_back(r);
    }
    return records;
}

// ------------------------------------------------------------- train loop

namespace {

constexpr std::uint64_t kStreamInit = 101;
constexpr std::uint64_t kStreamValSubset = 102;
constexpr std::uint64_t kStreamValGen = 103;
constexpr std::uint64_t kStreamEpochShuffle = 104;
constexpr std::uint64_t kStreamEpochBatch = 105;
constexpr std::uint64_t kStreamValLoss = 106;

std::vector<std::uint32_t> choose_subset(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::vector<std::uint32_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0u);
    if (k >= n) return pool;
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

FeatureMatrix gather_rows(const FeatureMatrix& src, std::span<const std::uint32_t> rows) {
    FeatureMatrix out(rows.size(), src.n_features(), src.space);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::memcpy(out.row(i), src.row(rows[i]), src.n_features() * sizeof(float));
    return out;
}

}  // namespace

TrainResult train(const TrainData& data, const NetConfig& net_cfg, const TrainConfig& cfg,
                  const VelocityNetParams* resume_params, std::int64_t start_epoch,
                  const EpochCallback& callback) {
    cfg.validate();
    net_cfg.validate();
    if (data.truth_std.space != Space::standardized)
        throw StateError("train: data must be standardized");
    if (data.truth_std.n_features() != static_cast<std::size_t>(net_cfg.dim))
        throw ShapeError("train: data feature count != network dim");
    const bool conditional = net_cfg.mode == NetMode::conditional;
    if (conditional && !data.detector_std)
        throw ConfigError("train: unfolding mode needs paired detector data");
    if (!conditional && data.detector_std)
        throw ConfigError("train: generation mode got paired detector data");
    const std::size_t n = data.truth_std.n_events();
    if (n < 2) throw ConfigError("train: need at least 2 events");

    TrainResult result;
    VelocityNetParams params = resume_params
                                   ? *resume_params
                                   : init_params(net_cfg, derive_seed(cfg.seed, kStreamInit));
    OptimizerState opt = OptimizerState::for_params(params);
    PlateauScheduler sched{cfg.lr, cfg.lr_decay_factor, cfg.lr_patience, cfg.lr_floor};
    VelocityNetParams grads = make_grad_buffer<float>(net_cfg);

    const auto snapshot = [&](std::int64_t epoch, double monitored) {
        CheckpointRecord rec;
        rec.params = params;
        rec.stats = data.stats;
        rec.config = cfg;
        rec.epoch = epoch;
        rec.monitor_value = monitored;
        rec.rng_digest = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
        return rec;
    };

    result.best = snapshot(start_epoch, std::numeric_limits<double>::infinity());
    result.last = result.best;
    if (cfg.max_epochs == 0) return result;

    // Validation subset and its physical-space truth, fixed once per run.
    const std::size_t n_val = std::min<std::size_t>(cfg.validation_subset, n);
    const auto val_rows =
        choose_subset(n, n_val, derive_seed(cfg.seed, kStreamValSubset));
    const FeatureMatrix val_truth_std = gather_rows(data.truth_std, val_rows);
    const FeatureMatrix val_truth_phys = invert_preprocess(val_truth_std, data.stats);
    FeatureMatrix val_detector_std;
    if (conditional)
        val_detector_std = gather_rows(*data.detector_std, val_rows);
    const std::uint64_t val_gen_seed = derive_seed(cfg.seed, kStreamValGen);

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);

    const FeatureMatrix* det = conditional ? &*data.detector_std : nullptr;

    for (std::int64_t epoch = start_epoch + 1; epoch <= start_epoch + cfg.max_epochs;
         ++epoch) {
        const auto tic = std::chrono::steady_clock::now();
        const double lr_in_use = sched.lr;

        // Shuffled full pass.
        {
            Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, kStreamEpochShuffle),
                                        static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = n; i > 1; --i) {
                const std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i));
                std::swap(order[i - 1], order[j]);
            }
        }
        Rng batch_rng(derive_seed(derive_seed(cfg.seed, kStreamEpochBatch),
                                  static_cast<std::uint64_t>(epoch)));
        double loss_weighted = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++batch_index) {
            const std::size_t rows = std::min(cfg.batch_size, n - begin);
            const CfmBatch batch = make_cfm_batch(
                data.truth_std, det,
                std::span<const std::uint32_t>(order.data() + begin, rows), batch_rng);
            const double loss = cfm_loss_and_grads(params, batch, grads);
            if (!std::isfinite(loss))
                throw NumericalError("train: non-finite loss at epoch " +
                                     std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index));
            adamw_step(params, grads, opt, lr_in_use, cfg.weight_decay);
            zero_tensors(grads);
            loss_weighted += loss * static_cast<double>(rows);
        }
        const double train_loss = loss_weighted / static_cast<double>(n);

        // Validation CFM loss over the fixed subset.
        double val_loss = 0.0;
        {
            Rng val_rng(derive_seed(derive_seed(cfg.seed, kStreamValLoss),
                                    static_cast<std::uint64_t>(epoch)));
            double acc = 0.0;
            for (std::size_t begin = 0; begin < n_val; begin += cfg.batch_size) {
                const std::size_t rows = std::min(cfg.batch_size, n_val - begin);
                const CfmBatch batch = make_cfm_batch(
                    data.truth_std, det,
                    std::span<const std::uint32_t>(val_rows.data() + begin, rows),
                    val_rng);
                acc += cfm_loss(params, batch) * static_cast<double>(rows);
            }
            val_loss = acc / static_cast<double>(n_val);
        }

        // Validation generation + physics metrics (fixed prior seed so the
        // metric curves are comparable across epochs).
        GenerateResult val_gen;
        if (conditional)
            val_gen = unfold(params, data.stats, val_detector_std, cfg.val_solver,
                             val_gen_seed);
        else
            val_gen = generate(params, data.stats, n_val, cfg.val_solver, val_gen_seed);
        const MetricsReport rep = evaluate(val_gen.events, val_truth_phys);

        double monitored;
        if (cfg.monitor == TrainConfig::Monitor::loss) {
            monitored = val_loss;
        } else if (rep.chi2_features > 0) {
            monitored = rep.chi2_mean;
        } else {
            monitored = rep.wasserstein_mean;  // degenerate-support fallback
        }

        sched.step(val_loss);

        EpochRecord er;
        er.epoch = epoch;
        er.train_loss = train_loss;
        er.val_loss = val_loss;
        er.chi2_mean = rep.chi2_mean;
        er.wasserstein_mean = rep.wasserstein_mean;
        er.correlation_distance = rep.correlation_distance;
        er.nfe_mean = val_gen.nfe_mean;
        er.lr = lr_in_use;
        er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - tic)
                         .count();
        result.log.push_back(er);
        if (callback) callback(er);

        if (monitored < result.best.monitor_value) result.best = snapshot(epoch, monitored);
        result.last = snapshot(epoch, monitored);
    }
    return result;
}

}  // namespace evf
