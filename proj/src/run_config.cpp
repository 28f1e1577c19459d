#include "eventflow/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace evf {

using nlohmann::json;
using nlohmann::ordered_json;

MockSpec MockSection::to_spec(std::uint64_t seed) const {
    MockSpec spec = MockSpec::preset(mock_family_from_string(family), n, seed);
    if (!components.empty()) spec.components = components;
    if (has_uniform_range) {
        spec.lo = lo;
        spec.hi = hi;
    }
    if (has_rate) spec.rate = rate;
    if (has_cutoff) spec.cutoff = cutoff;
    if (has_loc) spec.loc = loc;
    spec.validate();
    return spec;
}

NetConfig ModelSection::to_net_config(int dim) const {
    NetConfig nc;
    if (mode == "generate")
        nc.mode = NetMode::unconditional;
    else if (mode == "unfold")
        nc.mode = NetMode::conditional;
    else
        throw ConfigError("model.mode must be 'generate' or 'unfold', got '" + mode + "'");
    nc.dim = dim;
    nc.hidden = hidden;
    nc.blocks = blocks;
    nc.time_embed = time_embed;
    nc.cond_hidden = cond_hidden;
    nc.cond_dim = cond_dim;
    nc.validate();
    return nc;
}

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> known,
                         const std::string& section) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) {
                ok = true;
                break;
            }
        if (!ok)
            throw ConfigError("config: unknown key '" +
                              (section.empty() ? key : section + "." + key) + "'");
    }
}

template <class T>
void read_if(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

void parse_mock(const json& j, MockSection& m) {
    reject_unknown_keys(j, {"family", "n", "components", "lo", "hi", "rate", "cutoff", "loc"},
                        "mock");
    read_if(j, "family", m.family);
    read_if(j, "n", m.n);
    if (j.contains("components")) {
        m.components.clear();
        for (const auto& c : j.at("components")) {
            reject_unknown_keys(c, {"mean", "sigma", "weight"}, "mock.components[]");
            MixtureComponent mc;
            read_if(c, "mean", mc.mean);
            read_if(c, "sigma", mc.sigma);
            read_if(c, "weight", mc.weight);
            m.components.push_back(mc);
        }
    }
    if (j.contains("lo") || j.contains("hi")) {
        m.has_uniform_range = true;
        read_if(j, "lo", m.lo);
        read_if(j, "hi", m.hi);
    }
    if (j.contains("rate")) {
        m.has_rate = true;
        read_if(j, "rate", m.rate);
    }
    if (j.contains("cutoff")) {
        m.has_cutoff = true;
        read_if(j, "cutoff", m.cutoff);
    }
    if (j.contains("loc")) {
        m.has_loc = true;
        read_if(j, "loc", m.loc);
    }
}

void parse_toy(const json& j, ToySection& t) {
    reject_unknown_keys(
        j, {"n", "beam_energy_min", "beam_energy_max", "t_slope", "boost_jitter"}, "toy");
    read_if(j, "n", t.n);
    read_if(j, "beam_energy_min", t.beam_energy_min);
    read_if(j, "beam_energy_max", t.beam_energy_max);
    read_if(j, "t_slope", t.t_slope);
    read_if(j, "boost_jitter", t.boost_jitter);
}

void parse_time_embed(const json& j, TimeEmbedConfig& te) {
    reject_unknown_keys(j, {"n_frequencies", "omega_min", "omega_max", "projected_dim"},
                        "model.time_embed");
    read_if(j, "n_frequencies", te.n_frequencies);
    read_if(j, "omega_min", te.omega_min);
    read_if(j, "omega_max", te.omega_max);
    read_if(j, "projected_dim", te.projected_dim);
}

void parse_model(const json& j, ModelSection& m) {
    reject_unknown_keys(j, {"mode", "hidden", "blocks", "time_embed", "cond_hidden", "cond_dim"},
                        "model");
    read_if(j, "mode", m.mode);
    read_if(j, "hidden", m.hidden);
    read_if(j, "blocks", m.blocks);
    if (j.contains("time_embed")) parse_time_embed(j.at("time_embed"), m.time_embed);
    read_if(j, "cond_hidden", m.cond_hidden);
    read_if(j, "cond_dim", m.cond_dim);
}

void parse_train(const json& j, TrainSection& t) {
    reject_unknown_keys(j,
                        {"lr", "weight_decay", "batch_size", "max_epochs", "lr_decay_factor",
                         "lr_patience", "lr_floor", "validation_subset", "monitor", "scale",
                         "val_atol", "val_rtol"},
                        "train");
    read_if(j, "lr", t.config.lr);
    read_if(j, "weight_decay", t.config.weight_decay);
    read_if(j, "batch_size", t.config.batch_size);
    read_if(j, "max_epochs", t.config.max_epochs);
    read_if(j, "lr_decay_factor", t.config.lr_decay_factor);
    read_if(j, "lr_patience", t.config.lr_patience);
    read_if(j, "lr_floor", t.config.lr_floor);
    read_if(j, "validation_subset", t.config.validation_subset);
    if (j.contains("monitor")) {
        const auto m = j.at("monitor").get<std::string>();
        if (m == "chi2_mean")
            t.config.monitor = TrainConfig::Monitor::chi2_mean;
        else if (m == "loss")
            t.config.monitor = TrainConfig::Monitor::loss;
        else
            throw ConfigError("train.monitor must be 'chi2_mean' or 'loss'");
    }
    read_if(j, "scale", t.scale);
    read_if(j, "val_atol", t.config.val_solver.atol);
    read_if(j, "val_rtol", t.config.val_solver.rtol);
}

void parse_solver(const json& j, SolverConfig& s) {
    reject_unknown_keys(
        j, {"atol", "rtol", "max_steps", "initial_step", "per_trajectory", "batch_limit"},
        "solver");
    read_if(j, "atol", s.atol);
    read_if(j, "rtol", s.rtol);
    read_if(j, "max_steps", s.max_steps);
    if (j.contains("initial_step")) s.initial_step = j.at("initial_step").get<double>();
    read_if(j, "per_trajectory", s.per_trajectory);
    read_if(j, "batch_limit", s.batch_limit);
}

void parse_smear(const json& j, SmearSection& s) {
    reject_unknown_keys(j, {"sigma_smear", "k"}, "smear");
    read_if(j, "sigma_smear", s.sigma_smear);
    read_if(j, "k", s.k);
}

void parse_eval(const json& j, EvalSection& e) {
    reject_unknown_keys(j, {"bins_1d", "bins_2d", "nn_gen_subset", "nn_probe", "hist_dump"},
                        "eval");
    read_if(j, "bins_1d", e.bins_1d);
    read_if(j, "bins_2d", e.bins_2d);
    read_if(j, "nn_gen_subset", e.nn_gen_subset);
    read_if(j, "nn_probe", e.nn_probe);
    read_if(j, "hist_dump", e.hist_dump);
}

void parse_bench(const json& j, BenchSection& b) {
    reject_unknown_keys(j, {"train_iters", "train_batch", "infer_runs", "infer_samples"},
                        "bench");
    read_if(j, "train_iters", b.train_iters);
    read_if(j, "train_batch", b.train_batch);
    read_if(j, "infer_runs", b.infer_runs);
    read_if(j, "infer_samples", b.infer_samples);
}

json apply_override(json root, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + spec + "' is not of the form key.path=value");
    const std::string path = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::parse_error&) {
        parsed = value;  // bare strings stay strings
    }
    json* node = &root;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("override '" + spec + "' has an empty key path");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i)
        node = &(*node)[parts[i]];
    (*node)[parts.back()] = parsed;
    return root;
}

RunConfig parse_root(const json& j) {
    reject_unknown_keys(j,
                        {"seed", "output_dir", "threads", "mock", "toy", "model", "train",
                         "solver", "smear", "eval", "bench"},
                        "");
    RunConfig cfg;
    read_if(j, "seed", cfg.seed);
    read_if(j, "output_dir", cfg.output_dir);
    read_if(j, "threads", cfg.threads);
    if (j.contains("mock")) parse_mock(j.at("mock"), cfg.mock);
    if (j.contains("toy")) parse_toy(j.at("toy"), cfg.toy);
    if (j.contains("model")) parse_model(j.at("model"), cfg.model);
    if (j.contains("train")) parse_train(j.at("train"), cfg.train);
    if (j.contains("solver")) parse_solver(j.at("solver"), cfg.solver);
    if (j.contains("smear")) parse_smear(j.at("smear"), cfg.smear);
    if (j.contains("eval")) parse_eval(j.at("eval"), cfg.eval);
    if (j.contains("bench")) parse_bench(j.at("bench"), cfg.bench);
    if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
    return cfg;
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

RunConfig parse_run_config_json(const std::string& text,
                                const std::vector<std::string>& overrides) {
    json j;
    try {
        j = text.empty() ? json::object() : json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    for (const auto& o : overrides) j = apply_override(j, o);
    return parse_root(j);
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
    std::string text;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config file '" + path + "' not found");
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    return parse_run_config_json(text, overrides);
}

std::string run_config_to_json(const RunConfig& cfg) {
    ordered_json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["threads"] = cfg.threads;
    {
        ordered_json m;
        m["family"] = cfg.mock.family;
        m["n"] = cfg.mock.n;
        const MockSpec spec = cfg.mock.to_spec(cfg.seed);
        if (!spec.components.empty()) {
            ordered_json comps = ordered_json::array();
            for (const auto& c : spec.components)
                comps.push_back({{"mean", c.mean}, {"sigma", c.sigma}, {"weight", c.weight}});
            m["components"] = comps;
        }
        switch (spec.family) {
            case MockFamily::uniform_flat:
                m["lo"] = spec.lo;
                m["hi"] = spec.hi;
                break;
            case MockFamily::exponential_decay: m["rate"] = spec.rate; break;
            case MockFamily::gauss_cutoff: m["cutoff"] = spec.cutoff; break;
            case MockFamily::delta: m["loc"] = spec.loc; break;
            default: break;
        }
        j["mock"] = m;
    }
    j["toy"] = {{"n", cfg.toy.n},
                {"beam_energy_min", cfg.toy.beam_energy_min},
                {"beam_energy_max", cfg.toy.beam_energy_max},
                {"t_slope", cfg.toy.t_slope},
                {"boost_jitter", cfg.toy.boost_jitter}};
    j["model"] = {{"mode", cfg.model.mode},
                  {"hidden", cfg.model.hidden},
                  {"blocks", cfg.model.blocks},
                  {"time_embed",
                   {{"n_frequencies", cfg.model.time_embed.n_frequencies},
                    {"omega_min", cfg.model.time_embed.omega_min},
                    {"omega_max", cfg.model.time_embed.omega_max},
                    {"projected_dim", cfg.model.time_embed.projected_dim}}},
                  {"cond_hidden", cfg.model.cond_hidden},
                  {"cond_dim", cfg.model.cond_dim}};
    j["train"] = {{"lr", cfg.train.config.lr},
                  {"weight_decay", cfg.train.config.weight_decay},
                  {"batch_size", cfg.train.config.batch_size},
                  {"max_epochs", cfg.train.config.max_epochs},
                  {"lr_decay_factor", cfg.train.config.lr_decay_factor},
                  {"lr_patience", cfg.train.config.lr_patience},
                  {"lr_floor", cfg.train.config.lr_floor},
                  {"validation_subset", cfg.train.config.validation_subset},
                  {"monitor", cfg.train.config.monitor == TrainConfig::Monitor::loss
                                  ? "loss"
                                  : "chi2_mean"},
                  {"scale", cfg.train.scale},
                  {"val_atol", cfg.train.config.val_solver.atol},
                  {"val_rtol", cfg.train.config.val_solver.rtol}};
    ordered_json s;
    s["atol"] = cfg.solver.atol;
    s["rtol"] = cfg.solver.rtol;
    s["max_steps"] = cfg.solver.max_steps;
    if (cfg.solver.initial_step) s["initial_step"] = *cfg.solver.initial_step;
    s["per_trajectory"] = cfg.solver.per_trajectory;
    s["batch_limit"] = cfg.solver.batch_limit;
    j["solver"] = s;
    j["smear"] = {{"sigma_smear", cfg.smear.sigma_smear}, {"k", cfg.smear.k}};
    j["eval"] = {{"bins_1d", cfg.eval.bins_1d},
                 {"bins_2d", cfg.eval.bins_2d},
                 {"nn_gen_subset", cfg.eval.nn_gen_subset},
                 {"nn_probe", cfg.eval.nn_probe},
                 {"hist_dump", cfg.eval.hist_dump}};
    j["bench"] = {{"train_iters", cfg.bench.train_iters},
                  {"train_batch", cfg.bench.train_batch},
                  {"infer_runs", cfg.bench.infer_runs},
                  {"infer_samples", cfg.bench.infer_samples}};
    return j.dump(2);
}

void ensure_directory(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw ParseError("write failed for '" + path + "'");
}

void write_manifest(const std::string& dir, const std::string& command,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    ordered_json j;
    j["command"] = command;
    ordered_json ins = ordered_json::array();
    for (const auto& path : inputs) {
        char digest[32];
        std::snprintf(digest, sizeof(digest), "%016llx",
                      static_cast<unsigned long long>(fnv1a64_file(path)));
        ins.push_back({{"path", path}, {"fnv1a64", digest}});
    }
    j["inputs"] = ins;
    j["outputs"] = outputs;
    write_text_file(dir + "/manifest.json", j.dump(2) + "\n");
}

}  // namespace evf
