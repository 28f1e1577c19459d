#pragma once

// Run configuration: a JSON config file with sections mirroring the module
// configs, strict unknown-key rejection, and dotted command-line overrides
// (--train.lr=1e-4). Every command writes a resolved snapshot plus a
// manifest of input-file digests into its run directory.

#include <cstdint>
#include <string>
#include <vector>

#include "eventflow/datasets.hpp"
#include "eventflow/flow_train.hpp"
#include "eventflow/odeint.hpp"

namespace evf {

struct MockSection {
    std::string family = "gaussian";
    std::uint64_t n = 100000;
    // Optional family-parameter overrides; empty means the preset default.
    std::vector<MixtureComponent> components;
    bool has_uniform_range = false;
    double lo = -1.0, hi = 1.0;
    bool has_rate = false;
    double rate = 1.0;
    bool has_cutoff = false;
    double cutoff = -0.5;
    bool has_loc = false;
    double loc = 0.0;

    MockSpec to_spec(std::uint64_t seed) const;
};

struct ToySection {
    std::uint64_t n = 100000;
    double beam_energy_min = 8.2;
    double beam_energy_max = 8.8;
    double t_slope = 6.0;
    double boost_jitter = 0.002;
};

struct ModelSection {
    std::string mode = "generate";  // generate | unfold
    int hidden = 512;
    int blocks = 5;
    TimeEmbedConfig time_embed;
    int cond_hidden = 128;
    int cond_dim = 128;

    NetConfig to_net_config(int dim) const;
};

struct EvalSection {
    int bins_1d = 50;
    int bins_2d = 20;
    std::size_t nn_gen_subset = 80000;
    std::size_t nn_probe = 10000;
    bool hist_dump = false;
};

struct BenchSection {
    int train_iters = 10;
    std::size_t train_batch = 20000;
    int infer_runs = 5;
    std::size_t infer_samples = 50000;
};

struct SmearSection {
    double sigma_smear = 1.0;
    double k = 0.01;
};

struct TrainSection {
    TrainConfig config;
    double scale = 5.0;  // standardization scale factor
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir;
    int threads = 1;
    MockSection mock;
    ToySection toy;
    ModelSection model;
    TrainSection train;
    SolverConfig solver;  // sampling/unfolding solver
    SmearSection smear;
    EvalSection eval;
    BenchSection bench;
};

// Parse a config file (strict: unknown keys are an error) and apply dotted
// overrides of the form "section.key=value".
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides);
RunConfig default_run_config();
RunConfig parse_run_config_json(const std::string& text,
                                const std::vector<std::string>& overrides);

std::string run_config_to_json(const RunConfig& cfg);

// Run-directory bookkeeping.
void ensure_directory(const std::string& dir);
void write_text_file(const std::string& path, const std::string& text);
void write_manifest(const std::string& dir, const std::string& command,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs);

}  // namespace evf
