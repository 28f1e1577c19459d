#include "eventflow/velocity_net.hpp"

#include <cmath>

namespace evf {

namespace {

template <class T>
void fill_fan_in_uniform(Rng& rng, Mat<T>& w, std::vector<T>& b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols));
    for (auto& x : w.v) x = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& x : b) x = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
Mat<T> hstack3(const Mat<T>& a, const Mat<T>& b, const Mat<T>* c) {
    const std::size_t n = a.rows;
    const std::size_t cols = a.cols + b.cols + (c ? c->cols : 0);
    Mat<T> out(n, cols);
    for (std::size_t i = 0; i < n; ++i) {
        T* dst = out.row(i);
        const T* pa = a.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) dst[j] = pa[j];
        const T* pb = b.row(i);
        for (std::size_t j = 0; j < b.cols; ++j) dst[a.cols + j] = pb[j];
        if (c) {
            const T* pc = c->row(i);
            for (std::size_t j = 0; j < c->cols; ++j) dst[a.cols + b.cols + j] = pc[j];
        }
    }
    return out;
}

template <class T>
void add_inplace(Mat<T>& a, const Mat<T>& b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

}  // namespace

template <class T>
std::size_t VelocityNetParamsT<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& ref : tensor_refs(*this)) n += ref.size;
    return n;
}

template <class T>
bool VelocityNetParamsT<T>::all_finite() const {
    for (const auto& ref : tensor_refs(*this))
        for (std::size_t i = 0; i < ref.size; ++i)
            if (!std::isfinite(static_cast<double>(ref.data[i]))) return false;
    return true;
}

template <class T, class P>
static std::vector<TensorRef<T>> tensor_refs_impl(P& p) {
    std::vector<TensorRef<T>> refs;
    auto push_mat = [&](auto& m, const char* name) {
        refs.push_back({m.v.data(), m.v.size(), name});
    };
    auto push_vec = [&](auto& v, const char* name) {
        refs.push_back({v.data(), v.size(), name});
    };
    push_mat(p.time_proj_w, "time_proj_w");
    push_vec(p.time_proj_b, "time_proj_b");
    if (p.cfg.mode == NetMode::conditional) {
        push_mat(p.cond_w1, "cond_w1");
        push_vec(p.cond_b1, "cond_b1");
        push_mat(p.cond_w2, "cond_w2");
        push_vec(p.cond_b2, "cond_b2");
    }
    push_mat(p.in_w, "in_w");
    push_vec(p.in_b, "in_b");
    for (auto& blk : p.blocks) {
        push_mat(blk.w1, "block_w1");
        push_vec(blk.b1, "block_b1");
        push_mat(blk.w2, "block_w2");
        push_vec(blk.b2, "block_b2");
    }
    push_mat(p.out_w, "out_w");
    push_vec(p.out_b, "out_b");
    return refs;
}

template <class T>
std::vector<TensorRef<T>> tensor_refs(VelocityNetParamsT<T>& p) {
    return tensor_refs_impl<T>(p);
}

template <class T>
std::vector<TensorRef<const T>> tensor_refs(const VelocityNetParamsT<T>& p) {
    return tensor_refs_impl<const T>(p);
}

template <class T>
static VelocityNetParamsT<T> allocate_params(const NetConfig& cfg) {
    cfg.validate();
    VelocityNetParamsT<T> p;
    p.cfg = cfg;
    const std::size_t hidden = static_cast<std::size_t>(cfg.hidden);
    const std::size_t dim = static_cast<std::size_t>(cfg.dim);
    p.time_proj_w = Mat<T>(static_cast<std::size_t>(cfg.time_embed.projected_dim),
                           static_cast<std::size_t>(cfg.time_embed.raw_dim()));
    p.time_proj_b.assign(static_cast<std::size_t>(cfg.time_embed.projected_dim), T(0));
    if (cfg.mode == NetMode::conditional) {
        p.cond_w1 = Mat<T>(static_cast<std::size_t>(cfg.cond_hidden), dim);
        p.cond_b1.assign(static_cast<std::size_t>(cfg.cond_hidden), T(0));
        p.cond_w2 = Mat<T>(static_cast<std::size_t>(cfg.cond_dim),
                           static_cast<std::size_t>(cfg.cond_hidden));
        p.cond_b2.assign(static_cast<std::size_t>(cfg.cond_dim), T(0));
    }
    p.in_w = Mat<T>(hidden, static_cast<std::size_t>(cfg.input_dim()));
    p.in_b.assign(hidden, T(0));
    p.blocks.resize(static_cast<std::size_t>(cfg.blocks));
    for (auto& blk : p.blocks) {
        blk.w1 = Mat<T>(hidden, hidden);
        blk.b1.assign(hidden, T(0));
        blk.w2 = Mat<T>(hidden, hidden);
        blk.b2.assign(hidden, T(0));
    }
    p.out_w = Mat<T>(dim, hidden);
    p.out_b.assign(dim, T(0));
    return p;
}

template <class T>
VelocityNetParamsT<T> make_grad_buffer(const NetConfig& cfg) {
    return allocate_params<T>(cfg);
}

template <class T>
void zero_tensors(VelocityNetParamsT<T>& p) {
    for (auto& ref : tensor_refs(p))
        std::fill(ref.data, ref.data + ref.size, T(0));
}

template <class T>
VelocityNetParamsT<T> init_params_t(const NetConfig& cfg, std::uint64_t seed,
                                    bool zero_output_head) {
    VelocityNetParamsT<T> p = allocate_params<T>(cfg);
    Rng rng(seed);
    fill_fan_in_uniform(rng, p.time_proj_w, p.time_proj_b);
    if (cfg.mode == NetMode::conditional) {
        fill_fan_in_uniform(rng, p.cond_w1, p.cond_b1);
        fill_fan_in_uniform(rng, p.cond_w2, p.cond_b2);
    }
    fill_fan_in_uniform(rng, p.in_w, p.in_b);
    for (auto& blk : p.blocks) {
        fill_fan_in_uniform(rng, blk.w1, blk.b1);
        fill_fan_in_uniform(rng, blk.w2, blk.b2);
    }
    if (!zero_output_head) fill_fan_in_uniform(rng, p.out_w, p.out_b);
    return p;
}

template <class T>
Mat<T> time_fourier_features(const TimeEmbedConfig& cfg, const std::vector<T>& t) {
    const auto freqs = cfg.frequencies();
    const std::size_t nf = freqs.size();
    Mat<T> raw(t.size(), 2 * nf);
    for (std::size_t i = 0; i < t.size(); ++i) {
        double ti = static_cast<double>(t[i]);
        if (ti < -1e-9 || ti > 1.0 + 1e-9)
            throw std::domain_error("time embedding: t=" + std::to_string(ti) +
                                    " outside [0,1]");
        ti = std::min(1.0, std::max(0.0, ti));
        T* row = raw.row(i);
        for (std::size_t k = 0; k < nf; ++k) {
            row[k] = static_cast<T>(std::sin(freqs[k] * ti));
            row[nf + k] = static_cast<T>(std::cos(freqs[k] * ti));
        }
    }
    return raw;
}

template <class T>
std::vector<T> embed_time(const VelocityNetParamsT<T>& p, double t) {
    std::vector<T> tv{static_cast<T>(t)};
    Mat<T> raw = time_fourier_features(p.cfg.time_embed, tv);
    Mat<T> proj = linear_forward(p.time_proj_w, p.time_proj_b, raw);
    return proj.v;
}

template <class T>
Mat<T> embed_condition(const VelocityNetParamsT<T>& p, const Mat<T>& c) {
    if (p.cfg.mode != NetMode::conditional)
        throw StateError("embed_condition: network is unconditional");
    Mat<T> pre1 = linear_forward(p.cond_w1, p.cond_b1, c);
    Mat<T> act1 = silu(pre1);
    Mat<T> pre2 = linear_forward(p.cond_w2, p.cond_b2, act1);
    return silu(pre2);
}

template <class T>
Mat<T> net_forward(const VelocityNetParamsT<T>& p, const Mat<T>& x_t,
                   const std::vector<T>& t,
                   const Mat<std::type_identity_t<T>>* cond,
                   ForwardCacheT<std::type_identity_t<T>>* cache) {
    const NetConfig& cfg = p.cfg;
    if (x_t.cols != static_cast<std::size_t>(cfg.dim))
        throw ShapeError("net_forward: state width != configured dim");
    if (t.size() != x_t.rows)
        throw ShapeError("net_forward: one time value per row required");
    if (cfg.mode == NetMode::conditional) {
        if (!cond) throw StateError("net_forward: conditional network needs a condition batch");
        if (cond->rows != x_t.rows || cond->cols != static_cast<std::size_t>(cfg.dim))
            throw ShapeError("net_forward: condition batch shape mismatch");
    } else if (cond) {
        throw StateError("net_forward: unconditional network got a condition batch");
    }

    Mat<T> time_raw = time_fourier_features<T>(cfg.time_embed, t);
    Mat<T> e_t = linear_forward(p.time_proj_w, p.time_proj_b, time_raw);

    Mat<T> cond_pre1, cond_act1, cond_pre2, e_c;
    if (cfg.mode == NetMode::conditional) {
        cond_pre1 = linear_forward(p.cond_w1, p.cond_b1, *cond);
        cond_act1 = silu(cond_pre1);
        cond_pre2 = linear_forward(p.cond_w2, p.cond_b2, cond_act1);
        e_c = silu(cond_pre2);
    }

    Mat<T> input = hstack3(x_t, e_t, cfg.mode == NetMode::conditional ? &e_c : nullptr);
    Mat<T> in_pre = linear_forward(p.in_w, p.in_b, input);
    Mat<T> h = silu(in_pre);

    if (cache) {
        cache->time_raw = time_raw;
        if (cfg.mode == NetMode::conditional) {
            cache->cond_in = *cond;
            cache->cond_pre1 = cond_pre1;
            cache->cond_act1 = cond_act1;
            cache->cond_pre2 = cond_pre2;
        }
        cache->input = input;
        cache->in_pre = in_pre;
        cache->h0 = h;
        cache->blocks.clear();
        cache->h.clear();
        cache->blocks.reserve(p.blocks.size());
        cache->h.reserve(p.blocks.size());
    }

    for (const auto& blk : p.blocks) {
        Mat<T> pre1 = linear_forward(blk.w1, blk.b1, h);
        Mat<T> act1 = silu(pre1);
        Mat<T> pre2 = linear_forward(blk.w2, blk.b2, act1);
        Mat<T> act2 = silu(pre2);
        add_inplace(act2, h);  // residual
        if (cache) {
            cache->blocks.push_back({std::move(pre1), std::move(act1), std::move(pre2)});
            cache->h.push_back(act2);
        }
        h = std::move(act2);
    }

    Mat<T> out = linear_forward(p.out_w, p.out_b, h);
    if (cache) cache->valid = true;
    return out;
}

template <class T>
void net_backward(const VelocityNetParamsT<T>& p, const ForwardCacheT<T>& cache,
                  const Mat<T>& g_out, VelocityNetParamsT<T>& grads) {
    if (!cache.valid)
        throw StateError("net_backward: forward pass was not run with caching enabled");
    const NetConfig& cfg = p.cfg;

    // Output head.
    const Mat<T>& h_last = cache.h.empty() ? cache.h0 : cache.h.back();
    LinearGrads<T> g_head = linear_backward(p.out_w, h_last, g_out);
    grads.out_w = std::move(g_head.gw);
    grads.out_b = std::move(g_head.gb);
    Mat<T> gh = std::move(g_head.gx);

    // Residual blocks, last to first.
    for (std::size_t bi = p.blocks.size(); bi-- > 0;) {
        const auto& blk = p.blocks[bi];
        const auto& bc = cache.blocks[bi];
        const Mat<T>& h_in = (bi == 0) ? cache.h0 : cache.h[bi - 1];
        Mat<T> g_pre2 = silu_backward(bc.pre2, gh);
        LinearGrads<T> g2 = linear_backward(blk.w2, bc.act1, g_pre2);
        grads.blocks[bi].w2 = std::move(g2.gw);
        grads.blocks[bi].b2 = std::move(g2.gb);
        Mat<T> g_pre1 = silu_backward(bc.pre1, g2.gx);
        LinearGrads<T> g1 = linear_backward(blk.w1, h_in, g_pre1);
        grads.blocks[bi].w1 = std::move(g1.gw);
        grads.blocks[bi].b1 = std::move(g1.gb);
        add_inplace(g1.gx, gh);  // skip connection
        gh = std::move(g1.gx);
    }

    // Input projection.
    Mat<T> g_in_pre = silu_backward(cache.in_pre, gh);
    LinearGrads<T> g_in = linear_backward(p.in_w, cache.input, g_in_pre);
    grads.in_w = std::move(g_in.gw);
    grads.in_b = std::move(g_in.gb);

    // Split the concatenated-input gradient.
    const std::size_t n = cache.input.rows;
    const std::size_t dim = static_cast<std::size_t>(cfg.dim);
    const std::size_t tdim = static_cast<std::size_t>(cfg.time_embed.projected_dim);
    Mat<T> g_et(n, tdim);
    Mat<T> g_ec;
    if (cfg.mode == NetMode::conditional)
        g_ec = Mat<T>(n, static_cast<std::size_t>(cfg.cond_dim));
    for (std::size_t i = 0; i < n; ++i) {
        const T* src = g_in.gx.row(i);
        T* et = g_et.row(i);
        for (std::size_t j = 0; j < tdim; ++j) et[j] = src[dim + j];
        if (cfg.mode == NetMode::conditional) {
            T* ec = g_ec.row(i);
            for (std::size_t j = 0; j < g_ec.cols; ++j) ec[j] = src[dim + tdim + j];
        }
    }

    // Time projection (raw Fourier features are constants of t).
    LinearGrads<T> g_tp = linear_backward(p.time_proj_w, cache.time_raw, g_et);
    grads.time_proj_w = std::move(g_tp.gw);
    grads.time_proj_b = std::move(g_tp.gb);

    // Condition embedder.
    if (cfg.mode == NetMode::conditional) {
        Mat<T> g_cpre2 = silu_backward(cache.cond_pre2, g_ec);
        LinearGrads<T> gc2 = linear_backward(p.cond_w2, cache.cond_act1, g_cpre2);
        grads.cond_w2 = std::move(gc2.gw);
        grads.cond_b2 = std::move(gc2.gb);
        Mat<T> g_cpre1 = silu_backward(cache.cond_pre1, gc2.gx);
        LinearGrads<T> gc1 = linear_backward(p.cond_w1, cache.cond_in, g_cpre1);
        grads.cond_w1 = std::move(gc1.gw);
        grads.cond_b1 = std::move(gc1.gb);
    }
}

VelocityNetParamsT<double> to_double(const VelocityNetParams& p) {
    VelocityNetParamsT<double> q = allocate_params<double>(p.cfg);
    auto src = tensor_refs(p);
    auto dst = tensor_refs(q);
    for (std::size_t i = 0; i < src.size(); ++i)
        for (std::size_t j = 0; j < src[i].size; ++j)
            dst[i].data[j] = static_cast<double>(src[i].data[j]);
    return q;
}

VelocityNetParams to_float(const VelocityNetParamsT<double>& p) {
    VelocityNetParams q = allocate_params<float>(p.cfg);
    auto src = tensor_refs(p);
    auto dst = tensor_refs(q);
    for (std::size_t i = 0; i < src.size(); ++i)
        for (std::size_t j = 0; j < src[i].size; ++j)
            dst[i].data[j] = static_cast<float>(src[i].data[j]);
    return q;
}

// Explicit instantiations: float for production, double for gradient replay.
#define EVF_INSTANTIATE(T)                                                              \
    template struct VelocityNetParamsT<T>;                                              \
    template std::vector<TensorRef<T>> tensor_refs(VelocityNetParamsT<T>&);             \
    template std::vector<TensorRef<const T>> tensor_refs(const VelocityNetParamsT<T>&); \
    template VelocityNetParamsT<T> make_grad_buffer<T>(const NetConfig&);               \
    template void zero_tensors(VelocityNetParamsT<T>&);                                 \
    template VelocityNetParamsT<T> init_params_t<T>(const NetConfig&, std::uint64_t, bool); \
    template Mat<T> time_fourier_features(const TimeEmbedConfig&, const std::vector<T>&);   \
    template std::vector<T> embed_time(const VelocityNetParamsT<T>&, double);           \
    template Mat<T> embed_condition(const VelocityNetParamsT<T>&, const Mat<T>&);       \
    template Mat<T> net_forward(const VelocityNetParamsT<T>&, const Mat<T>&,            \
                                const std::vector<T>&, const Mat<T>*, ForwardCacheT<T>*); \
    template void net_backward(const VelocityNetParamsT<T>&, const ForwardCacheT<T>&,   \
                               const Mat<T>&, VelocityNetParamsT<T>&);

EVF_INSTANTIATE(float)
EVF_INSTANTIATE(double)
#undef EVF_INSTANTIATE

}  // namespace evf
