#pragma once

// Time-conditional residual MLP velocity field v(x_t, t) and its conditional
// variant v(x_t, t | c). Layout: input projection over the concatenation of
// the state, a projected Fourier time embedding and (conditionally) an
// embedded condition vector, followed by residual blocks of two SiLU-linear
// layers and a linear output head.

#include <cstdint>
#include <optional>
#include <type_traits>
#include <vector>

#include "eventflow/numerics.hpp"

namespace evf {

struct TimeEmbedConfig {
    int n_frequencies = 32;
    double omega_min = 1.0;
    double omega_max = 64.0;
    int projected_dim = 64;

    int raw_dim() const { return 2 * n_frequencies; }

    // Geometric spacing omega_k = omega_min * (omega_max/omega_min)^(k/(n-1)).
    std::vector<double> frequencies() const {
        std::vector<double> w(static_cast<std::size_t>(n_frequencies));
        if (n_frequencies == 1) {
            w[0] = omega_min;
            return w;
        }
        const double ratio = omega_max / omega_min;
        for (int k = 0; k < n_frequencies; ++k)
            w[static_cast<std::size_t>(k)] =
                omega_min * std::pow(ratio, static_cast<double>(k) / (n_frequencies - 1));
        return w;
    }

    void validate() const {
        if (n_frequencies < 1) throw ConfigError("time embed: n_frequencies must be >= 1");
        if (!(omega_min > 0.0) || !(omega_max > omega_min))
            throw ConfigError("time embed: need 0 < omega_min < omega_max");
        if (projected_dim < 1) throw ConfigError("time embed: projected_dim must be >= 1");
    }
};

enum class NetMode { unconditional, conditional };

struct NetConfig {
    NetMode mode = NetMode::unconditional;
    int dim = 10;       // feature dimension D
    int hidden = 512;   // residual width
    int blocks = 5;     // residual blocks, two linear layers each
    TimeEmbedConfig time_embed;
    int cond_hidden = 128;  // condition embedder hidden width
    int cond_dim = 128;     // condition embedding output width

    int input_dim() const {
        int d = dim + time_embed.projected_dim;
        if (mode == NetMode::conditional) d += cond_dim;
        return d;
    }

    void validate() const {
        if (dim < 1 || hidden < 1 || blocks < 0)
            throw ConfigError("net config: dim/hidden/blocks out of range");
        if (mode == NetMode::conditional && (cond_hidden < 1 || cond_dim < 1))
            throw ConfigError("net config: condition embedder dims out of range");
        time_embed.validate();
    }
};

template <class T>
struct ResidualBlockParams {
    Mat<T> w1;
    std::vector<T> b1;
    Mat<T> w2;
    std::vector<T> b2;
};

template <class T>
struct VelocityNetParamsT {
    NetConfig cfg;
    Mat<T> time_proj_w;          // (projected_dim, 2*n_frequencies)
    std::vector<T> time_proj_b;  // projected_dim
    Mat<T> cond_w1;              // (cond_hidden, dim), conditional only
    std::vector<T> cond_b1;
    Mat<T> cond_w2;  // (cond_dim, cond_hidden)
    std::vector<T> cond_b2;
    Mat<T> in_w;  // (hidden, input_dim)
    std::vector<T> in_b;
    std::vector<ResidualBlockParams<T>> blocks;  // w1,w2: (hidden, hidden)
    Mat<T> out_w;  // (dim, hidden)
    std::vector<T> out_b;

    std::size_t parameter_count() const;
    bool all_finite() const;
};

using VelocityNetParams = VelocityNetParamsT<float>;

// Mutable view over one parameter (or gradient/moment) tensor.
template <class T>
struct TensorRef {
    T* data;
    std::size_t size;
    const char* name;
};

// Fixed tensor enumeration order; gradients, optimizer moments and the
// checkpoint format all follow it.
template <class T>
std::vector<TensorRef<T>> tensor_refs(VelocityNetParamsT<T>& p);
template <class T>
std::vector<TensorRef<const T>> tensor_refs(const VelocityNetParamsT<T>& p);

// Gradient buffers reuse the parameter layout, so shapes mirror the
// parameter set by construction.
template <class T>
VelocityNetParamsT<T> make_grad_buffer(const NetConfig& cfg);
template <class T>
void zero_tensors(VelocityNetParamsT<T>& p);

// Forward activations cached for reverse mode.
template <class T>
struct ForwardCacheT {
    Mat<T> time_raw;      // (n, 2*nf) fixed Fourier features
    Mat<T> cond_in;       // (n, dim)
    Mat<T> cond_pre1;     // (n, cond_hidden)
    Mat<T> cond_act1;
    Mat<T> cond_pre2;  // (n, cond_dim)
    Mat<T> input;      // (n, input_dim) concatenated network input
    Mat<T> in_pre;     // (n, hidden)
    Mat<T> h0;         // silu(in_pre)
    struct BlockCache {
        Mat<T> pre1, act1, pre2;
    };
    std::vector<BlockCache> blocks;
    std::vector<Mat<T>> h;  // h[k] = output of block k (h.back() feeds the head)
    bool valid = false;
};

using ForwardCache = ForwardCacheT<float>;

// Fan-in-scaled uniform init, output head zeroed by default so the initial
// flow is the identity map on the prior sample.
template <class T>
VelocityNetParamsT<T> init_params_t(const NetConfig& cfg, std::uint64_t seed,
                                    bool zero_output_head = true);
inline VelocityNetParams init_params(const NetConfig& cfg, std::uint64_t seed,
                                     bool zero_output_head = true) {
    return init_params_t<float>(cfg, seed, zero_output_head);
}

// Raw Fourier features [sin(w_k t)..., cos(w_k t)...] for a batch of times.
template <class T>
Mat<T> time_fourier_features(const TimeEmbedConfig& cfg, const std::vector<T>& t);

// Projected 64-d embedding of a single time value (clamps |t| excursions
// up to 1e-9 outside [0,1]; beyond that it is a domain error).
template <class T>
std::vector<T> embed_time(const VelocityNetParamsT<T>& p, double t);

// Two-layer SiLU condition embedder; conditional mode only.
template <class T>
Mat<T> embed_condition(const VelocityNetParamsT<T>& p, const Mat<T>& c);

// Batched forward pass. t holds one time per row of x_t. cond must be given
// exactly when the network is conditional. When cache is non-null the
// activations needed by net_backward are retained.
template <class T>
Mat<T> net_forward(const VelocityNetParamsT<T>& p, const Mat<T>& x_t,
                   const std::vector<T>& t,
                   const Mat<std::type_identity_t<T>>* cond = nullptr,
                   ForwardCacheT<std::type_identity_t<T>>* cache = nullptr);

// Exact reverse-mode gradients of a scalar loss with output-gradient seed
// g_out, written into grads (overwriting). Requires the cache written by
// net_forward.
template <class T>
void net_backward(const VelocityNetParamsT<T>& p, const ForwardCacheT<T>& cache,
                  const Mat<T>& g_out, VelocityNetParamsT<T>& grads);

// Convert parameters between storage scalars (gradient-check replay).
VelocityNetParamsT<double> to_double(const VelocityNetParams& p);
VelocityNetParams to_float(const VelocityNetParamsT<double>& p);

}  // namespace evf
