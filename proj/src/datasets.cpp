#include "eventflow/datasets.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace evf {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

static_assert(std::endian::native == std::endian::little,
              "event file io assumes a little-endian host");

// ---------------------------------------------------------------- kinematics

std::array<double, 24> EventRecord24::flat() const {
    return {photon.e,   photon.px,   photon.py,   photon.pz,    //
            target.e,   target.px,   target.py,   target.pz,    //
            recoil.e,   recoil.px,   recoil.py,   recoil.pz,    //
            pi_plus.e,  pi_plus.px,  pi_plus.py,  pi_plus.pz,   //
            pi_minus.e, pi_minus.px, pi_minus.py, pi_minus.pz,  //
            t,          m_pipi,      cos_theta,   phi};
}

EventRecord24 EventRecord24::from_flat(const std::array<double, 24>& v) {
    EventRecord24 r;
    r.photon = {v[0], v[1], v[2], v[3]};
    r.target = {v[4], v[5], v[6], v[7]};
    r.recoil = {v[8], v[9], v[10], v[11]};
    r.pi_plus = {v[12], v[13], v[14], v[15]};
    r.pi_minus = {v[16], v[17], v[18], v[19]};
    r.t = v[20];
    r.m_pipi = v[21];
    r.cos_theta = v[22];
    r.phi = v[23];
    return r;
}

void EventRecord24::validate(double tol) const {
    if (photon.py != 0.0 || target.py != 0.0)
        throw KinematicsError("photon/target p_y must be identically zero");
    auto check_shell = [&](const FourMomentum& p, double m, const char* who) {
        if (std::abs(p.mass2() - m * m) > tol)
            throw KinematicsError(std::string("off mass shell: ") + who);
    };
    check_shell(photon, 0.0, "photon");
    check_shell(target, kProtonMass, "target");
    check_shell(recoil, kProtonMass, "recoil");
    check_shell(pi_plus, kPionMass, "pi+");
    check_shell(pi_minus, kPionMass, "pi-");
    const FourMomentum residual =
        photon + target - recoil - pi_plus - pi_minus;
    for (double c : {residual.e, residual.px, residual.py, residual.pz})
        if (std::abs(c) > tol)
            throw KinematicsError("four-momentum not conserved");
}

FourMomentum infer_recoil(const FourMomentum& p_gamma, const FourMomentum& p_target,
                          const FourMomentum& p_piplus, const FourMomentum& p_piminus) {
    return p_gamma + p_target - p_piplus - p_piminus;
}

double compute_invariant_mass(const FourMomentum& a, const FourMomentum& b) {
    const FourMomentum s = a + b;
    double m2 = s.mass2();
    if (m2 < -1e-9)
        throw KinematicsError("invariant mass squared is negative: " + std::to_string(m2));
    if (m2 < 0.0) m2 = 0.0;
    return std::sqrt(m2);
}

double compute_mandelstam_t(const FourMomentum& p_gamma, const FourMomentum& p_rho) {
    return (p_gamma - p_rho).mass2();
}

// ---------------------------------------------------------------- preprocess

PreprocessStats fit_preprocess(const FeatureMatrix& data, double scale) {
    if (data.space != Space::physical)
        throw StateError("fit_preprocess: expected physical-space data");
    const std::size_t n = data.n_events(), d = data.n_features();
    if (n < 2) throw ConfigError("fit_preprocess: need at least 2 events");
    if (!(scale > 0.0)) throw ConfigError("fit_preprocess: scale must be positive");
    PreprocessStats st;
    st.scale = scale;
    st.mean.resize(d);
    st.stddev.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += data.data.at(i, j);
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dlt = data.data.at(i, j) - mean;
            ss += dlt * dlt;
        }
        const double sd = std::sqrt(ss / static_cast<double>(n));  // population
        if (!(sd > 1e-12))
            throw ConfigError("fit_preprocess: degenerate feature " + std::to_string(j) +
                              " (zero variance)");
        st.mean[j] = mean;
        st.stddev[j] = sd;
    }
    return st;
}

static void check_stats_width(const FeatureMatrix& data, const PreprocessStats& st) {
    if (st.mean.size() != data.n_features() || st.stddev.size() != data.n_features())
        throw ShapeError("preprocess stats width does not match feature count");
}

FeatureMatrix apply_preprocess(const FeatureMatrix& data, const PreprocessStats& stats) {
    if (data.space != Space::physical)
        throw StateError("apply_preprocess: data is already standardized");
    check_stats_width(data, stats);
    FeatureMatrix out(data.n_events(), data.n_features(), Space::standardized);
    const std::size_t d = data.n_features();
    for (std::size_t i = 0; i < data.n_events(); ++i) {
        const float* src = data.row(i);
        float* dst = out.row(i);
        for (std::size_t j = 0; j < d; ++j)
            dst[j] = static_cast<float>(stats.scale * (src[j] - stats.mean[j]) /
                                        stats.stddev[j]);
    }
    return out;
}

FeatureMatrix invert_preprocess(const FeatureMatrix& data, const PreprocessStats& stats) {
    if (data.space != Space::standardized)
        throw StateError("invert_preprocess: data is not standardized");
    check_stats_width(data, stats);
    FeatureMatrix out(data.n_events(), data.n_features(), Space::physical);
    const std::size_t d = data.n_features();
    for (std::size_t i = 0; i < data.n_events(); ++i) {
        const float* src = data.row(i);
        float* dst = out.row(i);
        for (std::size_t j = 0; j < d; ++j)
            dst[j] = static_cast<float>(src[j] * stats.stddev[j] / stats.scale +
                                        stats.mean[j]);
    }
    return out;
}

// ---------------------------------------------------------------- projection

std::array<float, 10> project_24_to_10(const EventRecord24& event) {
    if (std::abs(event.photon.py) > 1e-6 || std::abs(event.target.py) > 1e-6)
        throw KinematicsError("project_24_to_10: photon/target p_y exceeds 1e-6 GeV");
    return {static_cast<float>(event.photon.px),   static_cast<float>(event.photon.pz),
            static_cast<float>(event.target.px),   static_cast<float>(event.target.pz),
            static_cast<float>(event.pi_plus.px),  static_cast<float>(event.pi_plus.py),
            static_cast<float>(event.pi_plus.pz),  static_cast<float>(event.pi_minus.px),
            static_cast<float>(event.pi_minus.py), static_cast<float>(event.pi_minus.pz)};
}

Particles10 particles_from_features(const float* r) {
    Particles10 p;
    const double gpx = r[0], gpz = r[1];
    p.photon = {std::sqrt(gpx * gpx + gpz * gpz), gpx, 0.0, gpz};
    p.target = from_momentum(r[2], 0.0, r[3], kProtonMass);
    p.pi_plus = from_momentum(r[4], r[5], r[6], kPionMass);
    p.pi_minus = from_momentum(r[7], r[8], r[9], kPionMass);
    return p;
}

// ---------------------------------------------------------------- smearing

std::array<float, 10> smear_event(const std::array<float, 10>& truth,
                                  const SmearConfig& cfg, Rng& rng) {
    std::array<float, 10> out = truth;
    for (std::size_t j = 4; j < 10; ++j) {  // the six pion momentum components
        const double p = truth[j];
        const double width = cfg.k * cfg.sigma_smear * p * p;
        const double z = rng.normal();
        out[j] = static_cast<float>(p + width * z);
    }
    return out;
}

FeatureMatrix smear_sample(const FeatureMatrix& truth, const SmearConfig& cfg) {
    if (truth.n_features() != 10)
        throw ShapeError("smear_sample: expected 10-feature events");
    if (truth.space != Space::physical)
        throw StateError("smear_sample: expected physical-space events");
    if (!(cfg.sigma_smear >= 0.0) || !(cfg.k > 0.0))
        throw ConfigError("smear_sample: need sigma_smear >= 0 and k > 0");
    FeatureMatrix out(truth.n_events(), 10, Space::physical);
    Rng rng(cfg.seed);
    std::array<float, 10> row;
    for (std::size_t i = 0; i < truth.n_events(); ++i) {
        std::memcpy(row.data(), truth.row(i), 10 * sizeof(float));
        const auto smeared = smear_event(row, cfg, rng);
        std::memcpy(out.row(i), smeared.data(), 10 * sizeof(float));
    }
    return out;
}

// ---------------------------------------------------------------- 1D mocks

MockFamily mock_family_from_string(const std::string& name) {
    if (name == "gaussian") return MockFamily::gaussian;
    if (name == "bimodal-asym") return MockFamily::bimodal_asym;
    if (name == "exponential-decay") return MockFamily::exponential_decay;
    if (name == "gauss-cutoff") return MockFamily::gauss_cutoff;
    if (name == "narrow-wide-overlap") return MockFamily::narrow_wide_overlap;
    if (name == "noise-3spikes") return MockFamily::noise_3spikes;
    if (name == "noise-10spikes") return MockFamily::noise_10spikes;
    if (name == "tall-flat-far") return MockFamily::tall_flat_far;
    if (name == "triple-flat-spread") return MockFamily::triple_flat_spread;
    if (name == "triple-mixed") return MockFamily::triple_mixed;
    if (name == "uniform-flat") return MockFamily::uniform_flat;
    if (name == "delta") return MockFamily::delta;
    throw ConfigError("unknown mock family: '" + name + "'");
}

std::string to_string(MockFamily family) {
    switch (family) {
        case MockFamily::gaussian: return "gaussian";
        case MockFamily::bimodal_asym: return "bimodal-asym";
        case MockFamily::exponential_decay: return "exponential-decay";
        case MockFamily::gauss_cutoff: return "gauss-cutoff";
        case MockFamily::narrow_wide_overlap: return "narrow-wide-overlap";
        case MockFamily::noise_3spikes: return "noise-3spikes";
        case MockFamily::noise_10spikes: return "noise-10spikes";
        case MockFamily::tall_flat_far: return "tall-flat-far";
        case MockFamily::triple_flat_spread: return "triple-flat-spread";
        case MockFamily::triple_mixed: return "triple-mixed";
        case MockFamily::uniform_flat: return "uniform-flat";
        case MockFamily::delta: return "delta";
    }
    throw ConfigError("unknown mock family enum value");
}

static std::vector<MixtureComponent> spike_mixture(double base_sigma, double base_weight,
                                                   int n_spikes, double span) {
    std::vector<MixtureComponent> comps;
    comps.push_back({0.0, base_sigma, base_weight});
    const double spike_weight = (1.0 - base_weight) / n_spikes;
    for (int k = 0; k < n_spikes; ++k) {
        const double c = n_spikes == 1
                             ? 0.0
                             : -span + 2.0 * span * static_cast<double>(k) / (n_spikes - 1);
        comps.push_back({c, 0.05, spike_weight});
    }
    return comps;
}

MockSpec MockSpec::preset(MockFamily family, std::uint64_t n, std::uint64_t seed) {
    MockSpec s;
    s.family = family;
    s.sample_count = n;
    s.seed = seed;
    switch (family) {
        case MockFamily::gaussian:
            s.components = {{0.0, 1.0, 1.0}};
            break;
        case MockFamily::bimodal_asym:
            s.components = {{-1.2, 0.4, 0.7}, {1.2, 0.6, 0.3}};
            break;
        case MockFamily::exponential_decay:
            s.rate = 1.0;
            break;
        case MockFamily::gauss_cutoff:
            s.cutoff = -0.5;
            break;
        case MockFamily::narrow_wide_overlap:
            s.components = {{0.0, 0.15, 0.5}, {0.0, 1.0, 0.5}};
            break;
        case MockFamily::noise_3spikes:
            s.components = spike_mixture(1.0, 0.85, 3, 1.0);
            break;
        case MockFamily::noise_10spikes:
            s.components = spike_mixture(1.0, 0.5, 10, 1.5);
            break;
        case MockFamily::tall_flat_far:
            // 5:1 peak-amplitude ratio, widely separated relative to the
            // narrow mode.
            s.components = {{-1.0, 0.16, 0.5}, {1.0, 0.8, 0.5}};
            break;
        case MockFamily::triple_flat_spread:
            s.components = {{-1.2, 0.35, 1.0 / 3.0},
                            {0.0, 0.35, 1.0 / 3.0},
                            {1.2, 0.35, 1.0 / 3.0}};
            break;
        case MockFamily::triple_mixed:
            s.components = {{-1.5, 0.3, 0.5}, {0.0, 0.6, 0.3}, {1.5, 0.2, 0.2}};
            break;
        case MockFamily::uniform_flat:
            s.lo = -1.0;
            s.hi = 1.0;
            break;
        case MockFamily::delta:
            s.loc = 0.0;
            break;
    }
    return s;
}

void MockSpec::validate() const {
    switch (family) {
        case MockFamily::gaussian:
        case MockFamily::bimodal_asym:
        case MockFamily::narrow_wide_overlap:
        case MockFamily::noise_3spikes:
        case MockFamily::noise_10spikes:
        case MockFamily::tall_flat_far:
        case MockFamily::triple_flat_spread:
        case MockFamily::triple_mixed: {
            if (components.empty())
                throw ConfigError("mock spec: mixture family without components");
            double wsum = 0.0;
            for (const auto& c : components) {
                if (!(c.sigma > 0.0))
                    throw ConfigError("mock spec: component width must be positive");
                if (!(c.weight > 0.0))
                    throw ConfigError("mock spec: component weight must be positive");
                wsum += c.weight;
            }
            if (std::abs(wsum - 1.0) > 1e-12)
                throw ConfigError("mock spec: mixture weights sum to " +
                                  std::to_string(wsum) + ", expected 1");
            break;
        }
        case MockFamily::exponential_decay:
            if (!(rate > 0.0)) throw ConfigError("mock spec: rate must be positive");
            break;
        case MockFamily::gauss_cutoff:
            if (!std::isfinite(cutoff)) throw ConfigError("mock spec: bad cutoff");
            break;
        case MockFamily::uniform_flat:
            if (!(hi > lo)) throw ConfigError("mock spec: need hi > lo");
            break;
        case MockFamily::delta:
            if (!std::isfinite(loc)) throw ConfigError("mock spec: bad delta location");
            break;
    }
}

static double draw_mixture(const std::vector<MixtureComponent>& comps, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (const auto& c : comps) {
        acc += c.weight;
        if (u < acc) return rng.normal(c.mean, c.sigma);
    }
    const auto& last = comps.back();
    return rng.normal(last.mean, last.sigma);
}

FeatureMatrix sample_mock(const MockSpec& spec) {
    spec.validate();
    FeatureMatrix out(spec.sample_count, 1, Space::physical);
    Rng rng(spec.seed);
    for (std::uint64_t i = 0; i < spec.sample_count; ++i) {
        double x = 0.0;
        switch (spec.family) {
            case MockFamily::gaussian:
            case MockFamily::bimodal_asym:
            case MockFamily::narrow_wide_overlap:
            case MockFamily::noise_3spikes:
            case MockFamily::noise_10spikes:
            case MockFamily::tall_flat_far:
            case MockFamily::triple_flat_spread:
            case MockFamily::triple_mixed:
                x = draw_mixture(spec.components, rng);
                break;
            case MockFamily::exponential_decay:
                x = -std::log(1.0 - rng.uniform()) / spec.rate;
                break;
            case MockFamily::gauss_cutoff:
                do {
                    x = rng.normal();
                } while (x <= spec.cutoff);
                break;
            case MockFamily::uniform_flat:
                x = rng.uniform(spec.lo, spec.hi);
                break;
            case MockFamily::delta:
                x = spec.loc;
                break;
        }
        out.data.at(i, 0) = static_cast<float>(x);
    }
    return out;
}

// ------------------------------------------------- toy photoproduction

namespace {

// Boost p by velocity beta (the transform that takes a particle at rest to
// velocity beta).
FourMomentum boost(const FourMomentum& p, double bx, double by, double bz) {
    const double b2 = bx * bx + by * by + bz * bz;
    if (b2 == 0.0) return p;
    const double gamma = 1.0 / std::sqrt(1.0 - b2);
    const double bp = bx * p.px + by * p.py + bz * p.pz;
    const double coef = (gamma - 1.0) * bp / b2 + gamma * p.e;
    return {gamma * (p.e + bp), p.px + coef * bx, p.py + coef * by, p.pz + coef * bz};
}

double sample_breit_wigner(Rng& rng, double m0, double gamma, double lo, double hi) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const double m = m0 + 0.5 * gamma * std::tan(0.5 * kTwoPi * (rng.uniform() - 0.5));
        if (m > lo && m < hi) return m;
    }
    return m0;  // pathological window; fall back to the pole
}

// t ~ exp(slope * t) truncated to [t_lo, t_hi] (t_hi closer to zero).
double sample_t_exponential(Rng& rng, double slope, double t_lo, double t_hi) {
    const double u = rng.uniform();
    const double span = 1.0 - std::exp(slope * (t_lo - t_hi));
    return t_hi + std::log(1.0 - u * span) / slope;
}

}  // namespace

EventRecord24 sample_toy_event(const ToyPhysicsConfig& cfg, Rng& rng) {
    const double e_gamma = rng.uniform(cfg.beam_energy_min, cfg.beam_energy_max);
    const double s = kProtonMass * kProtonMass + 2.0 * e_gamma * kProtonMass;
    const double w = std::sqrt(s);

    const double m_rho = sample_breit_wigner(rng, kRhoMass, kRhoWidth,
                                             2.0 * kPionMass + 1e-3, w - kProtonMass - 1e-3);

    // Two-body production in the photon-proton CM frame, photon along +z.
    const double e_gamma_cm = (s - kProtonMass * kProtonMass) / (2.0 * w);
    const double e_rho_cm = (s + m_rho * m_rho - kProtonMass * kProtonMass) / (2.0 * w);
    const double p_out = std::sqrt(std::max(0.0, e_rho_cm * e_rho_cm - m_rho * m_rho));
    const auto t_at = [&](double cos_cm) {
        return m_rho * m_rho - 2.0 * e_gamma_cm * e_rho_cm +
               2.0 * e_gamma_cm * p_out * cos_cm;
    };
    const double t_hi = t_at(1.0);
    const double t_lo = std::max(t_at(-1.0), -1.0);  // forward region |t| < 1
    const double t_val = sample_t_exponential(rng, cfg.t_slope, t_lo, t_hi);
    double cos_cm = (t_val - m_rho * m_rho + 2.0 * e_gamma_cm * e_rho_cm) /
                    (2.0 * e_gamma_cm * p_out);
    cos_cm = std::min(1.0, std::max(-1.0, cos_cm));
    const double sin_cm = std::sqrt(1.0 - cos_cm * cos_cm);
    const double phi_cm = rng.uniform(0.0, kTwoPi);

    const FourMomentum photon_cm = {e_gamma_cm, 0.0, 0.0, e_gamma_cm};
    const FourMomentum rho_cm = {e_rho_cm, p_out * sin_cm * std::cos(phi_cm),
                                 p_out * sin_cm * std::sin(phi_cm), p_out * cos_cm};
    const FourMomentum total_cm = {w, 0.0, 0.0, 0.0};
    const FourMomentum recoil_cm = total_cm - rho_cm;

    // rho -> pi+ pi-, isotropic in the rho rest frame.
    const double p_pi = std::sqrt(std::max(0.0, 0.25 * m_rho * m_rho - kPionMass * kPionMass));
    const double cos_d = rng.uniform(-1.0, 1.0);
    const double sin_d = std::sqrt(1.0 - cos_d * cos_d);
    const double phi_d = rng.uniform(0.0, kTwoPi);
    const double e_pi = 0.5 * m_rho;
    const FourMomentum pip_rest = {e_pi, p_pi * sin_d * std::cos(phi_d),
                                   p_pi * sin_d * std::sin(phi_d), p_pi * cos_d};
    const FourMomentum pim_rest = {e_pi, -pip_rest.px, -pip_rest.py, -pip_rest.pz};

    // CM -> lab (target at rest, beam along +z).
    const double beta_cm = e_gamma / (e_gamma + kProtonMass);
    EventRecord24 ev;
    ev.photon = boost(photon_cm, 0.0, 0.0, beta_cm);
    ev.target = boost({w - e_gamma_cm, 0.0, 0.0, -e_gamma_cm}, 0.0, 0.0, beta_cm);
    ev.recoil = boost(recoil_cm, 0.0, 0.0, beta_cm);
    const double brx = rho_cm.px / rho_cm.e, bry = rho_cm.py / rho_cm.e,
                 brz = rho_cm.pz / rho_cm.e;
    FourMomentum pip_cm = boost(pip_rest, brx, bry, brz);
    FourMomentum pim_cm = boost(pim_rest, brx, bry, brz);
    ev.pi_plus = boost(pip_cm, 0.0, 0.0, beta_cm);
    ev.pi_minus = boost(pim_cm, 0.0, 0.0, beta_cm);

    // Small beamline jitter: a common x-z boost of every particle. This keeps
    // p_y of photon/target exactly zero, conservation exact, masses exact,
    // and gives every projected feature nonzero variance.
    const double jx = rng.normal(0.0, cfg.boost_jitter);
    const double jz = rng.normal(0.0, cfg.boost_jitter);
    for (FourMomentum* p : {&ev.photon, &ev.target, &ev.recoil, &ev.pi_plus, &ev.pi_minus})
        *p = boost(*p, jx, 0.0, jz);
    ev.photon.py = 0.0;
    ev.target.py = 0.0;

    // Photon is massless; pin E = |p| against rounding drift.
    ev.photon.e = std::sqrt(ev.photon.p2());

    ev.t = t_val;  // frame invariant
    ev.m_pipi = m_rho;
    ev.cos_theta = cos_d;
    ev.phi = phi_d;
    return ev;
}

std::vector<EventRecord24> sample_toy_events(const ToyPhysicsConfig& cfg, std::uint64_t n) {
    std::vector<EventRecord24> events;
    events.reserve(n);
    Rng rng(cfg.seed);
    for (std::uint64_t i = 0; i < n; ++i) events.push_back(sample_toy_event(cfg, rng));
    return events;
}

FeatureMatrix project_events(const std::vector<EventRecord24>& events) {
    FeatureMatrix out(events.size(), 10, Space::physical);
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto row = project_24_to_10(events[i]);
        std::memcpy(out.row(i), row.data(), 10 * sizeof(float));
    }
    return out;
}

// ---------------------------------------------------------------- file io

namespace {

constexpr char kMagic[4] = {'J', 'P', 'E', 'V'};
constexpr std::uint16_t kFormatVersion = 1;

struct Writer {
    std::ofstream out;
    explicit Writer(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw ParseError("cannot open '" + path + "' for writing");
    }
    template <class T>
    void put(T v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void put_bytes(const void* p, std::size_t n) {
        out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
};

struct Reader {
    std::ifstream in;
    std::uint64_t offset = 0;
    std::string path;
    explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw ParseError("cannot open '" + p + "' for reading");
    }
    template <class T>
    T get(const char* what) {
        T v;
        in.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (in.gcount() != sizeof(T))
            throw ParseError("truncated event file '" + path + "' while reading " + what,
                             offset);
        offset += sizeof(T);
        return v;
    }
    void get_bytes(void* p, std::size_t n, const char* what) {
        in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw ParseError("truncated event file '" + path + "' while reading " + what,
                             offset + static_cast<std::uint64_t>(in.gcount()));
        offset += n;
    }
};

void save_impl(const std::string& path, const FeatureMatrix& events,
               const FeatureMatrix* detector, const PreprocessStats* stats) {
    if (detector) {
        if (detector->n_events() != events.n_events() ||
            detector->n_features() != events.n_features())
            throw ShapeError("paired save: truth/detector shapes differ");
        if (detector->space != events.space)
            throw StateError("paired save: truth/detector space tags differ");
    }
    if (stats && stats->mean.size() != events.n_features())
        throw ShapeError("save_events: stats width != feature count");
    Writer w(path);
    w.put_bytes(kMagic, 4);
    w.put<std::uint16_t>(kFormatVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(events.n_features()));
    w.put<std::uint64_t>(events.n_events());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(events.space));
    w.put<std::uint8_t>(detector ? 1 : 0);
    w.put<std::uint8_t>(stats ? 1 : 0);
    if (stats) {
        for (std::size_t j = 0; j < stats->mean.size(); ++j) {
            w.put<double>(stats->mean[j]);
            w.put<double>(stats->stddev[j]);
        }
        w.put<double>(stats->scale);
    }
    if (detector) {
        const std::size_t d = events.n_features();
        std::vector<float> row(2 * d);
        for (std::size_t i = 0; i < events.n_events(); ++i) {
            std::memcpy(row.data(), events.row(i), d * sizeof(float));
            std::memcpy(row.data() + d, detector->row(i), d * sizeof(float));
            w.put_bytes(row.data(), 2 * d * sizeof(float));
        }
    } else {
        w.put_bytes(events.data.v.data(), events.data.v.size() * sizeof(float));
    }
    if (!w.out) throw ParseError("write failed for '" + path + "'");
}

}  // namespace

void save_events(const std::string& path, const FeatureMatrix& events,
                 const PreprocessStats* stats) {
    save_impl(path, events, nullptr, stats);
}

void save_paired_events(const std::string& path, const FeatureMatrix& truth,
                        const FeatureMatrix& detector, const PreprocessStats* stats) {
    save_impl(path, truth, &detector, stats);
}

EventFileContents load_events(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.get_bytes(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("bad magic in '" + path + "', not an event file", 0);
    const auto version = r.get<std::uint16_t>("version");
    if (version != kFormatVersion)
        throw ParseError("unsupported event file version " + std::to_string(version), 4);
    const auto n_features = r.get<std::uint32_t>("feature count");
    if (n_features == 0) throw ParseError("feature count is zero", 6);
    const auto n_events = r.get<std::uint64_t>("event count");
    const auto space_raw = r.get<std::uint8_t>("space tag");
    if (space_raw > 1) throw ParseError("invalid space tag", r.offset - 1);
    const auto paired = r.get<std::uint8_t>("paired flag");
    if (paired > 1) throw ParseError("invalid paired flag", r.offset - 1);
    const auto has_stats = r.get<std::uint8_t>("stats flag");
    if (has_stats > 1) throw ParseError("invalid stats flag", r.offset - 1);

    EventFileContents c;
    if (has_stats) {
        PreprocessStats st;
        st.mean.resize(n_features);
        st.stddev.resize(n_features);
        for (std::uint32_t j = 0; j < n_features; ++j) {
            st.mean[j] = r.get<double>("stats mean");
            st.stddev[j] = r.get<double>("stats std");
        }
        st.scale = r.get<double>("stats scale");
        c.stats = std::move(st);
    }

    const Space space = static_cast<Space>(space_raw);
    c.events = FeatureMatrix(n_events, n_features, space);
    if (paired) c.detector = FeatureMatrix(n_events, n_features, space);
    const std::size_t d = n_features;
    std::vector<float> row(paired ? 2 * d : d);
    for (std::uint64_t i = 0; i < n_events; ++i) {
        r.get_bytes(row.data(), row.size() * sizeof(float), "event row");
        std::memcpy(c.events.row(i), row.data(), d * sizeof(float));
        if (paired) std::memcpy(c.detector->row(i), row.data() + d, d * sizeof(float));
    }
    // Trailing garbage means the declared shape disagrees with the payload.
    char extra;
    r.in.read(&extra, 1);
    if (r.in.gcount() == 1)
        throw ParseError("event file '" + path + "' has trailing bytes beyond declared payload",
                         r.offset);
    for (const float x : c.events.data.v)
        if (!std::isfinite(x)) throw ParseError("non-finite value in event payload", r.offset);
    if (paired)
        for (const float x : c.detector->data.v)
            if (!std::isfinite(x)) throw ParseError("non-finite value in event payload", r.offset);
    return c;
}

}  // namespace evf
