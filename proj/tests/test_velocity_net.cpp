#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "eventflow/velocity_net.hpp"

using namespace evf;

namespace {

NetConfig miniature(NetMode mode) {
    NetConfig cfg;
    cfg.mode = mode;
    cfg.dim = 3;
    cfg.hidden = 16;
    cfg.blocks = 2;
    cfg.time_embed.n_frequencies = 8;
    cfg.time_embed.projected_dim = 16;
    cfg.cond_hidden = 16;
    cfg.cond_dim = 16;
    return cfg;
}

struct BatchD {
    MatD x_t;
    std::vector<double> t;
    MatD u_t;
    MatD cond;
};

BatchD random_batch(const NetConfig& cfg, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    BatchD b;
    b.x_t = MatD(n, static_cast<std::size_t>(cfg.dim));
    b.u_t = MatD(n, static_cast<std::size_t>(cfg.dim));
    b.t.resize(n);
    for (auto& v : b.x_t.v) v = rng.normal();
    for (auto& v : b.u_t.v) v = rng.normal();
    for (auto& v : b.t) v = rng.uniform();
    if (cfg.mode == NetMode::conditional) {
        b.cond = MatD(n, static_cast<std::size_t>(cfg.dim));
        for (auto& v : b.cond.v) v = rng.normal();
    }
    return b;
}

double loss_f64(const VelocityNetParamsT<double>& p, const BatchD& b,
                ForwardCacheT<double>* cache = nullptr, MatD* seed = nullptr) {
    const MatD v = net_forward(p, b.x_t, b.t,
                               p.cfg.mode == NetMode::conditional ? &b.cond : nullptr,
                               cache);
    return mse_rowsum_loss(v, b.u_t, seed);
}

}  // namespace

TEST_CASE("time embedding frequencies are geometric") {
    TimeEmbedConfig cfg;  // defaults: 32 frequencies, 1..64
    const auto w = cfg.frequencies();
    REQUIRE(w.size() == 32);
    CHECK(w.front() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.back() == doctest::Approx(64.0).epsilon(1e-12));
    const double base_ratio = w[1] / w[0];
    CHECK(w[16] / w[15] == doctest::Approx(base_ratio).epsilon(1e-9));
    for (std::size_t k = 0; k < 32; ++k) {
        const double expect = 1.0 * std::pow(64.0, static_cast<double>(k) / 31.0);
        CHECK(w[k] == doctest::Approx(expect).epsilon(1e-12));
        if (k > 0) CHECK(w[k] > w[k - 1]);
    }
}

TEST_CASE("time embedding at t=0 and domain clamping") {
    TimeEmbedConfig cfg;
    const MatF raw = time_fourier_features<float>(cfg, std::vector<float>{0.f});
    for (std::size_t k = 0; k < 32; ++k) {
        CHECK(raw.v[k] == 0.0f);        // sines
        CHECK(raw.v[32 + k] == 1.0f);   // cosines
    }
    CHECK_NOTHROW(time_fourier_features<float>(cfg, std::vector<float>{1.0f}));
    CHECK_THROWS_AS(time_fourier_features<float>(cfg, std::vector<float>{1.5f}),
                    std::domain_error);
    CHECK_THROWS_AS(time_fourier_features<float>(cfg, std::vector<float>{-0.5f}),
                    std::domain_error);
}

TEST_CASE("identity time projection passes raw features through") {
    NetConfig cfg = miniature(NetMode::unconditional);
    cfg.time_embed.projected_dim = cfg.time_embed.raw_dim();
    VelocityNetParams p = init_params(cfg, 1);
    p.time_proj_w = MatF::identity(static_cast<std::size_t>(cfg.time_embed.raw_dim()));
    std::fill(p.time_proj_b.begin(), p.time_proj_b.end(), 0.f);
    const auto e = embed_time(p, 0.0);
    const MatF raw = time_fourier_features<float>(cfg.time_embed, std::vector<float>{0.f});
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(e[i] == raw.v[i]);
}

TEST_CASE("condition embedder contract") {
    const NetConfig cfg = miniature(NetMode::conditional);
    VelocityNetParams p = init_params(cfg, 2);
    MatF c(5, 3);
    Rng rng(9);
    for (auto& v : c.v) v = static_cast<float>(rng.normal());

    SUBCASE("output width is the configured embedding dim") {
        const MatF e = embed_condition(p, c);
        CHECK(e.rows == 5);
        CHECK(e.cols == 16);
    }
    SUBCASE("zero weights and biases produce the zero vector") {
        zero_tensors(p);
        const MatF e = embed_condition(p, c);
        for (float v : e.v) CHECK(v == 0.0f);
    }
    SUBCASE("unconditional mode rejects the call") {
        const VelocityNetParams q = init_params(miniature(NetMode::unconditional), 2);
        CHECK_THROWS_AS(embed_condition(q, c), StateError);
    }
}

TEST_CASE("default architecture parameter count") {
    NetConfig cfg;  // D=10, hidden 512, 5 blocks, unconditional
    const VelocityNetParams p = init_params(cfg, 0);
    const std::size_t count = p.parameter_count();
    // Layer-by-layer enumeration.
    const std::size_t expect = (64 * 64 + 64)                  // time projection
                               + (512 * 74 + 512)              // input projection
                               + 5 * 2 * (512 * 512 + 512)     // residual blocks
                               + (10 * 512 + 10);              // output head
    CHECK(count == expect);
    CHECK(count >= 2'500'000);
    CHECK(count <= 2'900'000);
}

TEST_CASE("initialization is deterministic and seed-sensitive") {
    const NetConfig cfg = miniature(NetMode::conditional);
    const VelocityNetParams a = init_params(cfg, 42);
    const VelocityNetParams b = init_params(cfg, 42);
    const VelocityNetParams c = init_params(cfg, 43);
    CHECK(a.in_w.v == b.in_w.v);
    CHECK(a.blocks[1].w2.v == b.blocks[1].w2.v);
    CHECK(a.in_w.v != c.in_w.v);
    for (float v : a.out_w.v) CHECK(v == 0.0f);  // zero head by default
    CHECK(a.all_finite());
}

TEST_CASE("zero output head gives identically zero velocity") {
    const NetConfig cfg = miniature(NetMode::unconditional);
    const VelocityNetParams p = init_params(cfg, 4);
    MatF x(7, 3);
    Rng rng(4);
    for (auto& v : x.v) v = static_cast<float>(rng.normal());
    const MatF out = net_forward(p, x, std::vector<float>(7, 0.25f), nullptr);
    for (float v : out.v) CHECK(v == 0.0f);
}

TEST_CASE("residual blocks with zero inner weights reduce to the stem") {
    NetConfig cfg = miniature(NetMode::unconditional);
    VelocityNetParams p = init_params(cfg, 5, /*zero_output_head=*/false);
    for (auto& blk : p.blocks) {
        std::fill(blk.w1.v.begin(), blk.w1.v.end(), 0.f);
        std::fill(blk.b1.begin(), blk.b1.end(), 0.f);
        std::fill(blk.w2.v.begin(), blk.w2.v.end(), 0.f);
        std::fill(blk.b2.begin(), blk.b2.end(), 0.f);
    }
    MatF x(4, 3);
    Rng rng(6);
    for (auto& v : x.v) v = static_cast<float>(rng.normal());
    const std::vector<float> t(4, 0.5f);
    const MatF full = net_forward(p, x, t, nullptr);

    NetConfig stem_cfg = cfg;
    stem_cfg.blocks = 0;
    VelocityNetParams stem = init_params(stem_cfg, 0);
    stem.time_proj_w = p.time_proj_w;
    stem.time_proj_b = p.time_proj_b;
    stem.in_w = p.in_w;
    stem.in_b = p.in_b;
    stem.out_w = p.out_w;
    stem.out_b = p.out_b;
    const MatF reduced = net_forward(stem, x, t, nullptr);
    CHECK(full.v == reduced.v);
}

TEST_CASE("forward is a pure function of its inputs") {
    const NetConfig cfg = miniature(NetMode::conditional);
    const VelocityNetParams p = init_params(cfg, 8, false);
    MatF x(6, 3), c(6, 3);
    Rng rng(8);
    for (auto& v : x.v) v = static_cast<float>(rng.normal());
    for (auto& v : c.v) v = static_cast<float>(rng.normal());
    const std::vector<float> t(6, 0.3f);
    const MatF a = net_forward(p, x, t, &c);
    const MatF b = net_forward(p, x, t, &c);
    CHECK(a.v == b.v);
}

TEST_CASE("forward mode and shape errors") {
    const VelocityNetParams uncond = init_params(miniature(NetMode::unconditional), 1);
    const VelocityNetParams cond = init_params(miniature(NetMode::conditional), 1);
    MatF x(2, 3), c(2, 3);
    const std::vector<float> t(2, 0.5f);
    CHECK_THROWS_AS(net_forward(uncond, x, t, &c), StateError);
    CHECK_THROWS_AS(net_forward(cond, x, t, nullptr), StateError);
    CHECK_THROWS_AS(net_forward(uncond, MatF(2, 4), t, nullptr), ShapeError);
    CHECK_THROWS_AS(net_forward(uncond, x, std::vector<float>(3, 0.5f), nullptr),
                    ShapeError);
}

TEST_CASE("backward needs a cached forward pass") {
    const NetConfig cfg = miniature(NetMode::unconditional);
    const VelocityNetParams p = init_params(cfg, 1);
    VelocityNetParams grads = make_grad_buffer<float>(cfg);
    ForwardCache cache;  // never filled
    CHECK_THROWS_AS(net_backward(p, cache, MatF(2, 3), grads), StateError);
}

TEST_CASE("zero loss gradient produces an all-zero gradient buffer") {
    const NetConfig cfg = miniature(NetMode::conditional);
    const VelocityNetParams p = init_params(cfg, 12, false);
    MatF x(5, 3), c(5, 3);
    Rng rng(12);
    for (auto& v : x.v) v = static_cast<float>(rng.normal());
    for (auto& v : c.v) v = static_cast<float>(rng.normal());
    ForwardCache cache;
    net_forward(p, x, std::vector<float>(5, 0.7f), &c, &cache);
    VelocityNetParams grads = make_grad_buffer<float>(cfg);
    net_backward(p, cache, MatF::zeros(5, 3), grads);
    for (const auto& ref : tensor_refs(grads))
        for (std::size_t i = 0; i < ref.size; ++i) CHECK(ref.data[i] == 0.0f);
}

TEST_CASE("reverse-mode gradients match central finite differences") {
    for (const NetMode mode : {NetMode::unconditional, NetMode::conditional}) {
        CAPTURE(static_cast<int>(mode));
        const NetConfig cfg = miniature(mode);
        VelocityNetParamsT<double> p =
            to_double(init_params(cfg, 77, /*zero_output_head=*/false));
        REQUIRE(p.parameter_count() <= 5000);
        const BatchD batch = random_batch(cfg, 8, 99);

        ForwardCacheT<double> cache;
        MatD seed;
        loss_f64(p, batch, &cache, &seed);
        VelocityNetParamsT<double> grads = make_grad_buffer<double>(cfg);
        net_backward(p, cache, seed, grads);

        auto prefs = tensor_refs(p);
        auto grefs = tensor_refs(grads);
        const auto sweep = [&](double eps, auto&& accept) {
            for (std::size_t ti = 0; ti < prefs.size(); ++ti) {
                for (std::size_t i = 0; i < prefs[ti].size; ++i) {
                    const double saved = prefs[ti].data[i];
                    prefs[ti].data[i] = saved + eps;
                    const double lp = loss_f64(p, batch);
                    prefs[ti].data[i] = saved - eps;
                    const double lm = loss_f64(p, batch);
                    prefs[ti].data[i] = saved;
                    accept(grefs[ti].data[i], (lp - lm) / (2 * eps));
                }
            }
        };
        // eps=1e-3: the difference must sit below the oracle's own
        // truncation floor (~eps^2) plus 1e-4 relative.
        double worst_abs_excess = 0.0;
        sweep(1e-3, [&](double an, double fd) {
            const double bound = 1e-6 + 1e-4 * std::max(std::abs(an), std::abs(fd));
            worst_abs_excess = std::max(worst_abs_excess, std::abs(an - fd) - bound);
        });
        CHECK(worst_abs_excess <= 0.0);
        // eps=1e-4: truncation is negligible, so a strict relative check
        // applies to every parameter.
        double worst_rel = 0.0;
        sweep(1e-4, [&](double an, double fd) {
            const double rel =
                std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
            worst_rel = std::max(worst_rel, rel);
        });
        CHECK(worst_rel < 1e-4);
    }
}
