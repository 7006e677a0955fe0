#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ginv/adam.hpp"
#include "ginv/checkpoint.hpp"
#include "ginv/critic.hpp"
#include "ginv/dataset.hpp"
#include "ginv/generator.hpp"
#include "ginv/png_io.hpp"
#include "ginv/rng.hpp"

namespace ginv {

// Gradient penalty lambda * mean_b(||grad_xhat D(xhat_b, c_b)||_2 - 1)^2 at a
// per-sample uniform interpolation xhat of (x_real, x_fake).
//
// When with_param_grads is set, d(penalty)/d(critic params) is accumulated
// into ws.pgrad by reverse-over-forward: the outer factor
// u_b = (2*lambda/B)(||g_b||-1) * g_b/||g_b|| is held constant, and the
// parameter gradient of sum_b <u_b, grad_x D(xhat_b)> is taken by seeding the
// tangent output of a jvp pass along u.
template <class Critic, typename T = typename Critic::scalar_t>
double gradient_penalty(const Critic& D, const Tensor<T>& x_real, const Tensor<T>& x_fake,
                        const std::vector<int>& labels, double lambda, Rng& rng, nn::Ws<T>& ws,
                        bool with_param_grads) {
    GINV_CHECK(x_real.same_shape(x_fake), "gradient_penalty: real/fake shape mismatch");
    const int64_t B = static_cast<int64_t>(labels.size());
    const int64_t pixels = x_real.numel() / B;
    GINV_CHECK(pixels * B == x_real.numel(), "gradient_penalty: batch does not divide input");

    Tensor<T> xhat(x_real.shape());
    for (int64_t b = 0; b < B; ++b) {
        const T eps = static_cast<T>(rng.uniform());
        const T* xr = x_real.data() + b * pixels;
        const T* xf = x_fake.data() + b * pixels;
        T* xh = xhat.data() + b * pixels;
        for (int64_t i = 0; i < pixels; ++i) xh[i] = eps * xr[i] + (T(1) - eps) * xf[i];
    }

    const bool old_pg = ws.want_pgrads;
    ws.want_pgrads = false;
    D.forward(xhat, labels, ws);
    Tensor<T> seed({B, 1});
    seed.fill(T(1));
    Tensor<T> g;
    D.backward(xhat, labels, seed, ws, g);

    double penalty = 0.0;
    Tensor<T> u(g.shape());
    for (int64_t b = 0; b < B; ++b) {
        const T* gb = g.data() + b * pixels;
        double ss = 0.0;
        for (int64_t i = 0; i < pixels; ++i) ss += static_cast<double>(gb[i]) * gb[i];
        const double norm = std::sqrt(ss);
        penalty += (norm - 1.0) * (norm - 1.0);
        const double scale =
            norm > 1e-12 ? 2.0 * lambda / static_cast<double>(B) * (norm - 1.0) / norm : 0.0;
        T* ub = u.data() + b * pixels;
        for (int64_t i = 0; i < pixels; ++i) ub[i] = static_cast<T>(scale * gb[i]);
    }
    penalty *= lambda / static_cast<double>(B);

    if (with_param_grads) {
        ws.want_pgrads = true;
        const Tensor<T>*y, *ydot;
        D.forward_jvp(xhat, u, labels, ws, &y, &ydot);
        Tensor<T> gy({B, 1}), gydot({B, 1});
        gy.zero();
        gydot.fill(T(1));
        Tensor<T> gx, gxdot;
        D.backward_jvp(xhat, u, labels, gy, gydot, ws, gx, gxdot);
    }
    ws.want_pgrads = old_pg;
    return penalty;
}

struct GanTrainConfig {
    CondGenerator<float>::Arch g_arch;
    CondCritic<float>::Arch d_arch;
    int64_t batch = 64;
    int64_t generator_steps = 60000;
    int critic_iters = 5;
    double lr = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double lambda_gp = 10.0;
    uint64_t seed = 1;
    int64_t log_interval = 100;
    int64_t sample_interval = 5000;
    int64_t checkpoint_interval = 10000;
    std::string out_dir;  // empty disables artifact emission

    ordered_json to_json() const {
        ordered_json j;
        j["g_arch"] = arch_json(g_arch);
        j["d_arch"] = arch_json(d_arch);
        j["batch"] = batch;
        j["generator_steps"] = generator_steps;
        j["critic_iters"] = critic_iters;
        j["lr"] = lr;
        j["beta1"] = beta1;
        j["beta2"] = beta2;
        j["lambda_gp"] = lambda_gp;
        j["seed"] = seed;
        return j;
    }
};

struct GanStepStats {
    int64_t step;
    double d_loss, g_loss, w_gap, gp;
};

struct GanTrainResult {
    CondGenerator<float> G;
    CondCritic<float> D;
    std::vector<GanStepStats> log;
    std::string generator_ckpt, critic_ckpt;
};

namespace detail {

inline void write_sample_sheet(CondGenerator<float>& G, const Tensor<float>& z_fixed,
                               const std::vector<int>& labels, const std::string& path) {
    auto ws = G.make_ws();
    const Tensor<float>& img = G.forward(z_fixed, labels, ws, false);
    const int64_t n = z_fixed.dim(0);
    std::vector<float> canon(static_cast<size_t>(n) * kImagePixels);
    to_canonical_space(img.data(), canon.data(), n * kImagePixels);
    std::vector<const float*> tiles;
    for (int64_t i = 0; i < n; ++i) tiles.push_back(canon.data() + i * kImagePixels);
    int64_t w, h;
    auto sheet = compose_tile_sheet(tiles, n / 10, 10, kImageSide, &w, &h);
    write_png(path, w, h, 1, sheet);
}

}  // namespace detail

// Wasserstein-GP training: `critic_iters` critic updates per generator update,
// adaptive-moment steps for both players.
inline GanTrainResult train_cgan(const LabeledImageSet& train, const GanTrainConfig& cfg) {
    GINV_CHECK(train.size() > 0, "train_cgan: empty training set");
    namespace fs = std::filesystem;
    const bool emit = !cfg.out_dir.empty();
    if (emit) fs::create_directories(cfg.out_dir);

    const std::string digest = config_digest(cfg.to_json());
    // The result owns both players up front: optimizers and workspaces hold
    // pointers into them, so they must never be moved after this point.
    GanTrainResult res{CondGenerator<float>(cfg.g_arch, derive_seed({cfg.seed, 0x696e6974ULL, 1})),
                       CondCritic<float>(cfg.d_arch, derive_seed({cfg.seed, 0x696e6974ULL, 2})),
                       {},
                       "",
                       ""};
    auto gws = res.G.make_ws();
    auto dws = res.D.make_ws();
    auto g_grads = res.G.grad_refs(gws);
    auto d_grads = res.D.grad_refs(dws);
    Adam<float> opt_g(res.G.params(), cfg.lr, cfg.beta1, cfg.beta2);
    Adam<float> opt_d(res.D.params(), cfg.lr, cfg.beta1, cfg.beta2);

    Rng rng_data(derive_seed({cfg.seed, 0x64617461ULL}));
    Rng rng_z(derive_seed({cfg.seed, 0x7aULL}));
    Rng rng_gp(derive_seed({cfg.seed, 0x6770ULL}));

    const int64_t B = cfg.batch;
    const int64_t d = cfg.g_arch.latent_dim;
    Tensor<float> x_real({1, B, kImageSide, kImageSide});
    Tensor<float> x_fake({1, B, kImageSide, kImageSide});
    Tensor<float> z({B, d});
    Tensor<float> seed_r({B, 1}), seed_f({B, 1});
    seed_r.fill(-1.0f / static_cast<float>(B));
    seed_f.fill(1.0f / static_cast<float>(B));
    Tensor<float> gx, gz;
    std::vector<int> labels(static_cast<size_t>(B));

    // fixed latents for periodic sample sheets: 10 per class
    Tensor<float> z_fixed({100, d});
    std::vector<int> fixed_labels(100);
    {
        Rng r(derive_seed({cfg.seed, 0x73616d706cULL}));
        r.fill_normal(z_fixed);
        for (int i = 0; i < 100; ++i) fixed_labels[static_cast<size_t>(i)] = i / 10;
    }

    std::FILE* logf = nullptr;
    if (emit) {
        logf = std::fopen((fs::path(cfg.out_dir) / "train_log.csv").string().c_str(), "w");
        if (logf) std::fprintf(logf, "step,d_loss,g_loss,w_gap,gp\n");
    }

    auto sample_batch = [&](std::vector<int>& lab, Tensor<float>& x) {
        for (int64_t b = 0; b < B; ++b) {
            const int64_t idx = static_cast<int64_t>(rng_data.below(static_cast<uint64_t>(train.size())));
            lab[static_cast<size_t>(b)] = train.labels[static_cast<size_t>(idx)];
            const float* src = train.image(idx);
            float* dst = x.data() + b * kImagePixels;
            to_model_space(src, dst, kImagePixels);
        }
    };

    auto diverged = [&](double v) { return !std::isfinite(v); };

    for (int64_t step = 1; step <= cfg.generator_steps; ++step) {
        double d_loss = 0, w_gap = 0, gp_val = 0;
        for (int it = 0; it < cfg.critic_iters; ++it) {
            sample_batch(labels, x_real);
            rng_z.fill_normal(z);
            {  // fakes come from the training-mode generator, detached
                gws.want_pgrads = false;
                const Tensor<float>& f = res.G.forward(z, labels, gws, true);
                std::copy(f.data(), f.data() + f.numel(), x_fake.data());
            }
            dws.clear_pgrads();
            dws.want_pgrads = true;
            const Tensor<float>& sr = res.D.forward(x_real, labels, dws);
            double mean_r = 0;
            for (int64_t b = 0; b < B; ++b) mean_r += sr[b];
            mean_r /= static_cast<double>(B);
            res.D.backward(x_real, labels, seed_r, dws, gx);

            const Tensor<float>& sf = res.D.forward(x_fake, labels, dws);
            double mean_f = 0;
            for (int64_t b = 0; b < B; ++b) mean_f += sf[b];
            mean_f /= static_cast<double>(B);
            res.D.backward(x_fake, labels, seed_f, dws, gx);

            gp_val = gradient_penalty(res.D, x_real, x_fake, labels, cfg.lambda_gp, rng_gp, dws,
                                      /*with_param_grads=*/true);
            d_loss = mean_f - mean_r + gp_val;
            w_gap = mean_r - mean_f;
            opt_d.step(d_grads);
        }

        // generator step
        rng_z.fill_normal(z);
        for (int64_t b = 0; b < B; ++b)
            labels[static_cast<size_t>(b)] = static_cast<int>(rng_z.below(kNumClasses));
        gws.clear_pgrads();
        gws.want_pgrads = true;
        const Tensor<float>& fake = res.G.forward(z, labels, gws, true);
        dws.want_pgrads = false;
        const Tensor<float>& s = res.D.forward(fake, labels, dws);
        double g_loss = 0;
        for (int64_t b = 0; b < B; ++b) g_loss += s[b];
        g_loss = -g_loss / static_cast<double>(B);
        res.D.backward(fake, labels, seed_r, dws, gx);  // d(-mean)/dx
        res.G.backward(gx, labels, gws, gz);
        opt_g.step(g_grads);

        if (diverged(d_loss) || diverged(g_loss) || diverged(gp_val)) {
            if (emit) {
                ordered_json dump;
                dump["step"] = step;
                dump["d_loss"] = d_loss;
                dump["g_loss"] = g_loss;
                dump["gp"] = gp_val;
                std::FILE* df = std::fopen((fs::path(cfg.out_dir) / "divergence.json").string().c_str(), "w");
                if (df) {
                    const std::string s2 = dump.dump(2);
                    std::fwrite(s2.data(), 1, s2.size(), df);
                    std::fclose(df);
                }
            }
            if (logf) std::fclose(logf);
            throw contract_error("train_cgan: loss diverged to a non-finite value at step " +
                                 std::to_string(step));
        }

        if (step % cfg.log_interval == 0 || step == 1) {
            res.log.push_back({step, d_loss, g_loss, w_gap, gp_val});
            if (logf) {
                std::fprintf(logf, "%lld,%.6f,%.6f,%.6f,%.6f\n", static_cast<long long>(step),
                             d_loss, g_loss, w_gap, gp_val);
                std::fflush(logf);
            }
        }
        if (emit && (step % cfg.sample_interval == 0 || step == cfg.generator_steps)) {
            char name[64];
            std::snprintf(name, sizeof(name), "samples_%07lld.png", static_cast<long long>(step));
            detail::write_sample_sheet(res.G, z_fixed, fixed_labels, (fs::path(cfg.out_dir) / name).string());
        }
        if (emit && (step % cfg.checkpoint_interval == 0 || step == cfg.generator_steps)) {
            res.generator_ckpt = (fs::path(cfg.out_dir) / "generator.ckpt").string();
            res.critic_ckpt = (fs::path(cfg.out_dir) / "critic.ckpt").string();
            save_checkpoint(make_generator_checkpoint(res.G, cfg.seed, step, digest),
                            res.generator_ckpt);
            save_checkpoint(make_critic_checkpoint(res.D, cfg.seed, step, digest), res.critic_ckpt);
        }
    }
    if (logf) std::fclose(logf);
    return res;
}

}  // namespace ginv
