#pragma once

// Synthetic 1D benchmark generators, the toy photoproduction stand-in,
// 24->10 feature projection, standardize/scale preprocessing with exact
// inverse, detector smearing, derived kinematics and the binary event-file
// format.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eventflow/common.hpp"
#include "eventflow/numerics.hpp"

namespace evf {

// PDG masses in GeV.
inline constexpr double kPionMass = 0.13957;
inline constexpr double kProtonMass = 0.93827;
inline constexpr double kRhoMass = 0.77526;
inline constexpr double kRhoWidth = 0.1474;

// ---------------------------------------------------------------- kinematics

struct FourMomentum {
    double e = 0.0, px = 0.0, py = 0.0, pz = 0.0;

    double p2() const { return px * px + py * py + pz * pz; }
    double mass2() const { return e * e - p2(); }

    FourMomentum operator+(const FourMomentum& o) const {
        return {e + o.e, px + o.px, py + o.py, pz + o.pz};
    }
    FourMomentum operator-(const FourMomentum& o) const {
        return {e - o.e, px - o.px, py - o.py, pz - o.pz};
    }
};

inline FourMomentum from_momentum(double px, double py, double pz, double mass) {
    const double p2 = px * px + py * py + pz * pz;
    return {std::sqrt(p2 + mass * mass), px, py, pz};
}

// 24-value event record: four-momenta of photon, target proton, recoil
// proton, pi+, pi- plus the derived scalars carried alongside.
struct EventRecord24 {
    FourMomentum photon, target, recoil, pi_plus, pi_minus;
    double t = 0.0;          // squared momentum transfer, GeV^2
    double m_pipi = 0.0;     // two-pion invariant mass, GeV
    double cos_theta = 0.0;  // decay polar angle used at generation time
    double phi = 0.0;        // decay azimuth used at generation time

    std::array<double, 24> flat() const;
    static EventRecord24 from_flat(const std::array<double, 24>& v);
    void validate(double tol = 1e-4) const;  // mass shells + conservation
};

// p_recoil = p_gamma + p_target - p_pi+ - p_pi-; intentionally no shell check,
// smeared inputs land off the exact invariant mass shell.
FourMomentum infer_recoil(const FourMomentum& p_gamma, const FourMomentum& p_target,
                          const FourMomentum& p_piplus, const FourMomentum& p_piminus);

// sqrt((E_a+E_b)^2 - |p_a+p_b|^2); mass-squared below -1e-9 GeV^2 is a
// kinematics error, tiny negatives clamp to zero.
double compute_invariant_mass(const FourMomentum& a, const FourMomentum& b);

// (p_gamma - p_rho)^2 with signature (+,-,-,-).
double compute_mandelstam_t(const FourMomentum& p_gamma, const FourMomentum& p_rho);

// ---------------------------------------------------------------- features

enum class Space : std::uint8_t { physical = 0, standardized = 1 };

struct FeatureMatrix {
    MatF data;  // rows = events, cols = features
    Space space = Space::physical;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t n_events, std::size_t n_features, Space s = Space::physical)
        : data(n_events, n_features), space(s) {}

    std::size_t n_events() const { return data.rows; }
    std::size_t n_features() const { return data.cols; }
    float* row(std::size_t i) { return data.row(i); }
    const float* row(std::size_t i) const { return data.row(i); }

    std::vector<float> column(std::size_t j) const {
        std::vector<float> c(data.rows);
        for (std::size_t i = 0; i < data.rows; ++i) c[i] = data.at(i, j);
        return c;
    }
};

struct PreprocessStats {
    std::vector<double> mean;    // physical units
    std::vector<double> stddev;  // physical units, population convention
    double scale = 5.0;
};

// Population mean/std per feature; throws ConfigError naming the feature
// index when a feature has (near-)zero variance.
PreprocessStats fit_preprocess(const FeatureMatrix& data, double scale = 5.0);

// y = scale * (x - mean) / std, physical -> standardized.
FeatureMatrix apply_preprocess(const FeatureMatrix& data, const PreprocessStats& stats);
// x = y * std / scale + mean, standardized -> physical.
FeatureMatrix invert_preprocess(const FeatureMatrix& data, const PreprocessStats& stats);

// Ordered 10-feature projection: photon (px,pz), target (px,pz),
// pi+ (px,py,pz), pi- (px,py,pz). Recoil and derived scalars are dropped.
std::array<float, 10> project_24_to_10(const EventRecord24& event);

// Rebuild the four-momenta encoded by one 10-feature row (photon massless,
// target proton and pions on their mass shells).
struct Particles10 {
    FourMomentum photon, target, pi_plus, pi_minus;
};
Particles10 particles_from_features(const float* row10);

// ---------------------------------------------------------------- smearing

struct SmearConfig {
    double sigma_smear = 1.0;  // dimensionless scale
    double k = 0.01;           // GeV^-1, width = k * sigma_smear * p^2
    std::uint64_t seed = 0;
};

// Gaussian smearing of the six pion momentum components of a 10-feature row;
// photon and target components pass through untouched.
std::array<float, 10> smear_event(const std::array<float, 10>& truth,
                                  const SmearConfig& cfg, Rng& rng);

// Whole-sample smearing: returns the detector-level matrix, row-aligned.
FeatureMatrix smear_sample(const FeatureMatrix& truth, const SmearConfig& cfg);

// ---------------------------------------------------------------- 1D mocks

enum class MockFamily {
    gaussian,
    bimodal_asym,
    exponential_decay,
    gauss_cutoff,
    narrow_wide_overlap,
    noise_3spikes,
    noise_10spikes,
    tall_flat_far,
    triple_flat_spread,
    triple_mixed,
    uniform_flat,
    delta,
};

MockFamily mock_family_from_string(const std::string& name);
std::string to_string(MockFamily family);

struct MixtureComponent {
    double mean = 0.0;
    double sigma = 1.0;
    double weight = 1.0;
};

struct MockSpec {
    MockFamily family = MockFamily::gaussian;
    std::vector<MixtureComponent> components;  // Gaussian-mixture families
    double lo = -1.0, hi = 1.0;                // uniform_flat support
    double rate = 1.0;                         // exponential_decay
    double cutoff = -0.5;                      // gauss_cutoff lower bound
    double loc = 0.0;                          // delta location
    std::uint64_t sample_count = 0;
    std::uint64_t seed = 0;

    // Documented default parameterization for a family.
    static MockSpec preset(MockFamily family, std::uint64_t n, std::uint64_t seed);
    void validate() const;
};

// i.i.d. draws from the spec's density; pure function of (spec, seed).
FeatureMatrix sample_mock(const MockSpec& spec);

// ------------------------------------------------- toy photoproduction

// Synthetic stand-in for an exclusive photoproduction sample
// (photon + proton -> rho0 + proton -> pi+ pi- proton): forward-peaked
// exp(b*t) momentum transfer, Breit-Wigner two-pion mass, isotropic decay,
// small beamline jitter applied as an x-z boost so no feature is degenerate
// while photon/target p_y stay exactly zero and conservation stays exact.
struct ToyPhysicsConfig {
    double beam_energy_min = 8.2;  // GeV
    double beam_energy_max = 8.8;
    double t_slope = 6.0;          // GeV^-2
    double boost_jitter = 0.002;   // std of beta_x, beta_z
    std::uint64_t seed = 0;
};

EventRecord24 sample_toy_event(const ToyPhysicsConfig& cfg, Rng& rng);
std::vector<EventRecord24> sample_toy_events(const ToyPhysicsConfig& cfg, std::uint64_t n);
FeatureMatrix project_events(const std::vector<EventRecord24>& events);

// ---------------------------------------------------------------- file io

// Binary little-endian event file: magic "JPEV", version u16, feature count
// u32, event count u64, space tag u8, paired flag u8, stats flag u8,
// optional stats block (per-feature mean/std then scale, all f64), then
// row-major f32 values (2x feature count per row when paired).
struct EventFileContents {
    FeatureMatrix events;                   // truth block when paired
    std::optional<FeatureMatrix> detector;  // paired files only
    std::optional<PreprocessStats> stats;
};

void save_events(const std::string& path, const FeatureMatrix& events,
                 const PreprocessStats* stats = nullptr);
void save_paired_events(const std::string& path, const FeatureMatrix& truth,
                        const FeatureMatrix& detector,
                        const PreprocessStats* stats = nullptr);
EventFileContents load_events(const std::string& path);

}  // namespace evf
