#pragma once

#include <array>
#include <string>
#include <vector>

#include "ginv/nn.hpp"

namespace ginv {

// Conditional critic: strided convolutions with the class embedding tiled
// onto the 14x14 feature map, scalar output, no normalization (keeps the
// gradient-penalty second-order pass exact and simple).
//
// All entry points also exist in a (value, tangent) form so the training loop
// can differentiate the critic's input-gradient norm w.r.t. parameters.
template <typename T>
class CondCritic {
public:
    using scalar_t = T;

    struct Arch {
        int64_t classes = 10;
        int64_t embed_dim = 16;
        int64_t base_channels = 32;  // channels of the 14x14 stage
        int64_t mid_channels = 64;   // channels of the 7x7 stage
    };

    explicit CondCritic(const Arch& arch, uint64_t init_seed = 0)
        : arch_(arch),
          embed_(arch.classes, arch.embed_dim, "d_embed"),
          conv1_(1, arch.base_channels, 4, 2, 1, "d_conv1"),
          act1_(0.2, "d_act1"),
          conv2_(arch.base_channels + arch.embed_dim, arch.mid_channels, 4, 2, 1, "d_conv2"),
          act2_(0.2, "d_act2"),
          flat_("d_flat"),
          fc_(arch.mid_channels * 49, 1, "d_fc") {
        int id = 0;
        for (nn::Layer<T>* l : chain()) l->set_id(id++);
        embed_id_ = id;
        Rng rng(derive_seed({init_seed, 0x637269746963ULL}));  // "critic"
        embed_.init(rng, 1.0);
        conv1_.init(rng, 0.02);
        conv2_.init(rng, 0.02);
        fc_.init(rng, 0.02);
    }

    const Arch& arch() const { return arch_; }

    std::vector<nn::ParamRef<T>> params() {
        std::vector<nn::ParamRef<T>> out = embed_.params();
        for (nn::Layer<T>* l : chain())
            for (auto& p : l->params()) out.push_back(p);
        return out;
    }
    std::vector<nn::ParamRef<T>> buffers() { return {}; }

    nn::Ws<T> make_ws() const {
        nn::Ws<T> ws;
        ws.init(embed_id_ + 1, kActSlots);
        return ws;
    }

    // Gradient tensors in ws.pgrad, allocated/zeroed here, aligned with params().
    std::vector<Tensor<T>*> grad_refs(nn::Ws<T>& ws) {
        std::vector<Tensor<T>*> out;
        nn::claim_pgrads(ws, embed_id_, embed_.params(), out);
        for (nn::Layer<T>* l : chain()) nn::claim_pgrads(ws, l->id(), l->params(), out);
        return out;
    }

    // x: (1, B, 28, 28) in model space [-1,1]. Returns scores (B, 1).
    const Tensor<T>& forward(const Tensor<T>& x, const std::vector<int>& labels,
                             nn::Ws<T>& ws) const {
        auto& a = ws.acts;
        conv1_.forward(x, a[0], ws, false);
        act1_.forward(a[0], a[1], ws, false);
        concat_embed(a[1], labels, a[2], ws);
        conv2_.forward(a[2], a[3], ws, false);
        act2_.forward(a[3], a[4], ws, false);
        flat_.forward(a[4], a[5], ws, false);
        fc_.forward(a[5], a[6], ws, false);
        return a[6];
    }

    // gy: (B, 1). Fills gx (1, B, 28, 28); param grads when ws.want_pgrads.
    void backward(const Tensor<T>& x, const std::vector<int>& labels, const Tensor<T>& gy,
                  nn::Ws<T>& ws, Tensor<T>& gx) const {
        auto& a = ws.acts;
        auto& g = ws.tacts;
        fc_.backward(a[5], a[6], gy, g[5], ws);
        flat_.backward(a[4], a[5], g[5], g[4], ws);
        act2_.backward(a[3], a[4], g[4], g[3], ws);
        conv2_.backward(a[2], a[3], g[3], g[2], ws);
        split_embed_grad(g[2], labels, g[1], ws);
        act1_.backward(a[0], a[1], g[1], g[0], ws);
        conv1_.backward(x, a[0], g[0], gx, ws);
    }

    // (value, tangent) forward: ydot = J_D(x)·xdot with labels fixed.
    void forward_jvp(const Tensor<T>& x, const Tensor<T>& xdot, const std::vector<int>& labels,
                     nn::Ws<T>& ws, const Tensor<T>** y, const Tensor<T>** ydot) const {
        auto& a = ws.acts;
        auto& t = ws.jacts;
        conv1_.forward_jvp(x, xdot, a[0], t[0], ws);
        act1_.forward_jvp(a[0], t[0], a[1], t[1], ws);
        concat_embed(a[1], labels, a[2], ws);
        nn::ensure(t[2], a[2].shape());
        t[2].zero();  // embedding rows have zero tangent
        const int64_t bhw = a[1].dim(1) * a[1].dim(2) * a[1].dim(3);
        std::copy(t[1].data(), t[1].data() + arch_.base_channels * bhw, t[2].data());
        conv2_.forward_jvp(a[2], t[2], a[3], t[3], ws);
        act2_.forward_jvp(a[3], t[3], a[4], t[4], ws);
        flat_.forward_jvp(a[4], t[4], a[5], t[5], ws);
        fc_.forward_jvp(a[5], t[5], a[6], t[6], ws);
        *y = &a[6];
        *ydot = &t[6];
    }

    // Adjoint of forward_jvp: given output seeds (gy, gydot), produce
    // (gx, gxdot) and accumulate parameter gradients when ws.want_pgrads.
    void backward_jvp(const Tensor<T>& x, const Tensor<T>& xdot, const std::vector<int>& labels,
                      const Tensor<T>& gy, const Tensor<T>& gydot, nn::Ws<T>& ws, Tensor<T>& gx,
                      Tensor<T>& gxdot) const {
        auto& a = ws.acts;
        auto& t = ws.jacts;
        auto& g = ws.tacts;
        auto& gd = ws.jgrads;
        fc_.backward_jvp(a[5], t[5], a[6], t[6], gy, gydot, g[5], gd[5], ws);
        flat_.backward_jvp(a[4], t[4], a[5], t[5], g[5], gd[5], g[4], gd[4], ws);
        act2_.backward_jvp(a[3], t[3], a[4], t[4], g[4], gd[4], g[3], gd[3], ws);
        conv2_.backward_jvp(a[2], t[2], a[3], t[3], g[3], gd[3], g[2], gd[2], ws);
        split_embed_grad(g[2], labels, g[1], ws);
        split_tangent_grad(gd[2], gd[1]);
        act1_.backward_jvp(a[0], t[0], a[1], t[1], g[1], gd[1], g[0], gd[0], ws);
        conv1_.backward_jvp(x, xdot, a[0], t[0], g[0], gd[0], gx, gxdot, ws);
    }

    static constexpr int kActSlots = 7;

    Arch arch_;
    nn::Embedding<T> embed_;
    nn::Conv2d<T> conv1_;
    nn::LeakyReLU<T> act1_;
    nn::Conv2d<T> conv2_;
    nn::LeakyReLU<T> act2_;
    nn::FromCBHW<T> flat_;
    nn::Dense<T> fc_;
    int embed_id_ = 0;

private:
    std::array<nn::Layer<T>*, 6> chain() {
        return {&conv1_, &act1_, &conv2_, &act2_, &flat_, &fc_};
    }

    // (Cb, B, 14, 14) + labels -> (Cb+E, B, 14, 14), embedding tiled spatially
    void concat_embed(const Tensor<T>& h, const std::vector<int>& labels, Tensor<T>& out,
                      nn::Ws<T>& ws) const {
        const int64_t Cb = arch_.base_channels, E = arch_.embed_dim;
        const int64_t B = h.dim(1), HW = h.dim(2) * h.dim(3);
        auto& emb = ws.lcache[static_cast<size_t>(embed_id_)][0];
        embed_.forward(labels, emb);  // (B, E)
        nn::ensure(out, {Cb + E, B, h.dim(2), h.dim(3)});
        std::copy(h.data(), h.data() + Cb * B * HW, out.data());
        for (int64_t e = 0; e < E; ++e)
            for (int64_t b = 0; b < B; ++b) {
                T* dst = out.data() + ((Cb + e) * B + b) * HW;
                const T v = emb[b * E + e];
                for (int64_t i = 0; i < HW; ++i) dst[i] = v;
            }
    }

    // adjoint of concat_embed on the value stream
    void split_embed_grad(const Tensor<T>& gout, const std::vector<int>& labels, Tensor<T>& gh,
                          nn::Ws<T>& ws) const {
        const int64_t Cb = arch_.base_channels, E = arch_.embed_dim;
        const int64_t B = gout.dim(1), HW = gout.dim(2) * gout.dim(3);
        nn::ensure(gh, {Cb, B, gout.dim(2), gout.dim(3)});
        std::copy(gout.data(), gout.data() + Cb * B * HW, gh.data());
        if (ws.want_pgrads) {
            Tensor<T> gemb({B, E});
            for (int64_t e = 0; e < E; ++e)
                for (int64_t b = 0; b < B; ++b) {
                    const T* src = gout.data() + ((Cb + e) * B + b) * HW;
                    T s = 0;
                    for (int64_t i = 0; i < HW; ++i) s += src[i];
                    gemb[b * E + e] = s;
                }
            auto& slot = ws.pgrad[static_cast<size_t>(embed_id_)];
            if (slot.empty()) {
                slot.resize(1);
                slot[0].resize({arch_.classes, E});
            }
            embed_.backward(labels, gemb, slot[0]);
        }
    }

    // tangent stream: embedding rows carried zero tangent, so just truncate
    void split_tangent_grad(const Tensor<T>& gout, Tensor<T>& gh) const {
        const int64_t Cb = arch_.base_channels;
        const int64_t B = gout.dim(1), HW = gout.dim(2) * gout.dim(3);
        nn::ensure(gh, {Cb, B, gout.dim(2), gout.dim(3)});
        std::copy(gout.data(), gout.data() + Cb * B * HW, gh.data());
    }
};

}  // namespace ginv
