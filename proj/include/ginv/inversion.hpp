#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ginv/nn.hpp"
#include "ginv/rng.hpp"

namespace ginv {

// Latent-space inversion: for a fixed (target image, class), minimize
//   L(z) = ||G(z,c) - x||_2 - beta * log_prior(z)
// by plain gradient descent from N random restarts, keeping the restart with
// the smallest final loss. Everything here lives in model pixel space [-1,1].

struct InversionConfig {
    int steps = 200;          // T
    int restarts = 10;        // N
    double beta = 0.5;
    double alpha = 0.1;       // gradient-descent step size
    uint64_t seed = 0;        // master seed
    int64_t image_index = 0;  // stable per-image id mixed into restart seeds
    bool use_adam = false;    // optional adaptive-moment switch
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    std::vector<int> snapshot_steps;  // record per-restart losses at these step counts
    bool record_trace = false;        // full per-restart, per-step loss trace

    void validate() const {
        GINV_CHECK(steps >= 1, "inversion: steps must be >= 1");
        GINV_CHECK(restarts >= 1, "inversion: restarts must be >= 1");
        GINV_CHECK(beta >= 0.0, "inversion: beta must be >= 0");
        GINV_CHECK(alpha > 0.0, "inversion: alpha must be > 0");
    }
};

// Per-dimension-averaged standard-normal log-density.
template <typename T>
inline double log_prior(const T* z, int64_t d) {
    GINV_CHECK(d >= 1, "log_prior: empty latent");
    double ss = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        const double v = static_cast<double>(z[i]);
        ss += v * v;
    }
    constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*ln(2*pi)
    return -0.5 * ss / static_cast<double>(d) - kHalfLog2Pi;
}

template <typename T>
inline double log_prior(const Tensor<T>& z) {
    return log_prior(z.data(), z.numel());
}

template <typename T>
struct InversionResult {
    Tensor<T> z;             // best latent (d)
    double loss = 0;         // total L
    double l_gen = 0;        // ||G(z,c) - x||_2
    double prior_term = 0;   // -beta * log_prior(z)
    Tensor<T> image;         // G(z,c), flat (pixels)
    int restart = -1;        // which restart won
    // losses[r] at each requested snapshot step; snapshots[s] aligns with
    // config.snapshot_steps[s]
    std::vector<std::vector<double>> snapshots;
    std::vector<std::vector<double>> trace;  // trace[r][t], t = steps completed
};

namespace detail {

template <typename T>
struct BatchInversionOut {
    Tensor<T> z;       // (M, d) final latents
    Tensor<T> images;  // (M, pixels) final generator outputs
    std::vector<double> loss, l_gen, prior;      // per column, final
    std::vector<std::vector<double>> snapshots;  // [snapshot][column]
    std::vector<std::vector<double>> trace;      // [column][step]
};

// Runs M independent gradient descents batched through one generator;
// column m descends on target row m under labels[m].
template <class Gen, typename T = typename Gen::scalar_t>
BatchInversionOut<T> invert_batch(const Gen& G, const Tensor<T>& targets,
                                  const std::vector<int>& labels, Tensor<T> z0,
                                  const InversionConfig& cfg) {
    cfg.validate();
    const int64_t M = targets.dim(0);
    const int64_t pixels = targets.dim(1);
    const int64_t d = G.latent_dim();
    GINV_CHECK(z0.dim(0) == M && z0.dim(1) == d, "invert_batch: latent shape mismatch");
    GINV_CHECK(static_cast<int64_t>(labels.size()) == M, "invert_batch: label count mismatch");

    auto ws = G.make_ws();
    ws.want_pgrads = false;

    BatchInversionOut<T> out;
    out.z = std::move(z0);
    out.loss.assign(static_cast<size_t>(M), 0.0);
    out.l_gen.assign(static_cast<size_t>(M), 0.0);
    out.prior.assign(static_cast<size_t>(M), 0.0);
    out.snapshots.resize(cfg.snapshot_steps.size());
    if (cfg.record_trace) out.trace.resize(static_cast<size_t>(M));

    std::vector<char> alive(static_cast<size_t>(M), 1);
    Tensor<T> gy, gz;
    Tensor<T> m_adam, v_adam;
    if (cfg.use_adam) {
        m_adam.resize({M, d});
        v_adam.resize({M, d});
    }

    for (int t = 0; t <= cfg.steps; ++t) {
        const Tensor<T>& img = G.forward(out.z, labels, ws, false);
        GINV_CHECK(img.numel() == M * pixels, "invert_batch: generator output size mismatch");
        nn::ensure(gy, img.shape());

        // losses + backward seed (gradient of the non-squared norm)
        for (int64_t m = 0; m < M; ++m) {
            const T* gm = img.data() + m * pixels;
            const T* xm = targets.data() + m * pixels;
            double sse = 0.0;
            for (int64_t i = 0; i < pixels; ++i) {
                const double r = static_cast<double>(gm[i]) - static_cast<double>(xm[i]);
                sse += r * r;
            }
            const double norm = std::sqrt(sse + 1e-12);
            const double lp = log_prior(out.z.data() + m * d, d);
            const double total = norm - cfg.beta * lp;
            if (!std::isfinite(total)) alive[static_cast<size_t>(m)] = 0;
            if (alive[static_cast<size_t>(m)]) {
                out.loss[static_cast<size_t>(m)] = total;
                out.l_gen[static_cast<size_t>(m)] = norm;
                out.prior[static_cast<size_t>(m)] = -cfg.beta * lp;
            }
            if (cfg.record_trace) out.trace[static_cast<size_t>(m)].push_back(total);

            T* gym = gy.data() + m * pixels;
            if (!alive[static_cast<size_t>(m)] || sse == 0.0) {
                std::fill(gym, gym + pixels, T(0));
            } else {
                const T inv = static_cast<T>(1.0 / norm);
                for (int64_t i = 0; i < pixels; ++i) gym[i] = (gm[i] - xm[i]) * inv;
            }
        }
        for (size_t s = 0; s < cfg.snapshot_steps.size(); ++s)
            if (cfg.snapshot_steps[s] == t) out.snapshots[s] = out.loss;
        if (t == cfg.steps) {
            out.images.resize(targets.shape());
            std::copy(img.data(), img.data() + img.numel(), out.images.data());
            break;
        }

        G.backward(gy, labels, ws, gz);

        const double inv_d = 1.0 / static_cast<double>(d);
        for (int64_t m = 0; m < M; ++m) {
            if (!alive[static_cast<size_t>(m)]) continue;
            T* zm = out.z.data() + m * d;
            const T* gm = gz.data() + m * d;
            bool finite = true;
            for (int64_t i = 0; i < d; ++i)
                if (!std::isfinite(static_cast<double>(gm[i]))) finite = false;
            if (!finite) {
                alive[static_cast<size_t>(m)] = 0;
                continue;
            }
            if (cfg.use_adam) {
                const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t + 1);
                const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t + 1);
                for (int64_t i = 0; i < d; ++i) {
                    const double g = static_cast<double>(gm[i]) +
                                     cfg.beta * static_cast<double>(zm[i]) * inv_d;
                    m_adam[m * d + i] = static_cast<T>(cfg.adam_beta1 * m_adam[m * d + i] +
                                                       (1 - cfg.adam_beta1) * g);
                    v_adam[m * d + i] = static_cast<T>(cfg.adam_beta2 * v_adam[m * d + i] +
                                                       (1 - cfg.adam_beta2) * g * g);
                    const double mhat = m_adam[m * d + i] / bc1;
                    const double vhat = v_adam[m * d + i] / bc2;
                    zm[i] -= static_cast<T>(cfg.alpha * mhat / (std::sqrt(vhat) + cfg.adam_eps));
                }
            } else {
                for (int64_t i = 0; i < d; ++i) {
                    const double g = static_cast<double>(gm[i]) +
                                     cfg.beta * static_cast<double>(zm[i]) * inv_d;
                    zm[i] -= static_cast<T>(cfg.alpha * g);
                }
            }
        }
    }

    bool any_alive = false;
    for (int64_t m = 0; m < M; ++m) {
        if (alive[static_cast<size_t>(m)]) {
            any_alive = true;
        } else {
            out.loss[static_cast<size_t>(m)] = std::numeric_limits<double>::infinity();
        }
    }
    GINV_CHECK(any_alive, "invert_batch: every restart diverged to a non-finite loss");
    return out;
}

}  // namespace detail

// Draws the restart latent for (seed, image_index, class, restart).
template <typename T>
inline void draw_restart_latent(T* z, int64_t d, uint64_t master, int64_t image_index, int c,
                                int restart) {
    Rng rng(derive_seed({master, static_cast<uint64_t>(image_index), static_cast<uint64_t>(c),
                         static_cast<uint64_t>(restart)}));
    for (int64_t i = 0; i < d; ++i) z[i] = static_cast<T>(rng.normal());
}

// One-off loss evaluation (used by tests and diagnostics).
template <class Gen, typename T = typename Gen::scalar_t>
double inversion_loss(const Gen& G, const Tensor<T>& x, const Tensor<T>& z, int c, double beta) {
    GINV_CHECK(z.rank() == 2 ? z.dim(1) == G.latent_dim() : z.numel() == G.latent_dim(),
               "inversion_loss: latent shape mismatch");
    auto ws = G.make_ws();
    Tensor<T> zb = z;
    zb.reshape({1, G.latent_dim()});
    const Tensor<T>& img = G.forward(zb, {c}, ws, false);
    GINV_CHECK(img.numel() == x.numel(), "inversion_loss: image shape mismatch");
    double sse = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double r = static_cast<double>(img[i]) - static_cast<double>(x[i]);
        sse += r * r;
    }
    return std::sqrt(sse + 1e-12) - beta * log_prior(zb.data(), G.latent_dim());
}

// Algorithm: N restarts of T-step gradient descent; returns the best restart.
// x is a flat model-space image; c the candidate class.
template <class Gen, typename T = typename Gen::scalar_t>
InversionResult<T> invert(const Gen& G, const Tensor<T>& x, int c, const InversionConfig& cfg) {
    const int64_t d = G.latent_dim();
    const int64_t pixels = x.numel();
    const int N = cfg.restarts;

    Tensor<T> targets({N, pixels});
    for (int r = 0; r < N; ++r)
        std::copy(x.data(), x.data() + pixels, targets.data() + r * pixels);
    std::vector<int> labels(static_cast<size_t>(N), c);
    Tensor<T> z0({N, d});
    for (int r = 0; r < N; ++r)
        draw_restart_latent(z0.data() + r * d, d, cfg.seed, cfg.image_index, c, r);

    auto bo = detail::invert_batch(G, targets, labels, std::move(z0), cfg);

    int best = 0;
    for (int r = 1; r < N; ++r)
        if (bo.loss[static_cast<size_t>(r)] < bo.loss[static_cast<size_t>(best)]) best = r;

    InversionResult<T> res;
    res.restart = best;
    res.loss = bo.loss[static_cast<size_t>(best)];
    res.l_gen = bo.l_gen[static_cast<size_t>(best)];
    res.prior_term = bo.prior[static_cast<size_t>(best)];
    res.z.resize({d});
    std::copy(bo.z.data() + best * d, bo.z.data() + (best + 1) * d, res.z.data());
    res.image.resize({pixels});
    std::copy(bo.images.data() + best * pixels, bo.images.data() + (best + 1) * pixels,
              res.image.data());
    if (!cfg.snapshot_steps.empty()) res.snapshots = std::move(bo.snapshots);
    if (cfg.record_trace) res.trace = std::move(bo.trace);
    return res;
}

}  // namespace ginv
