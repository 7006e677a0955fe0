#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ginv/nn.hpp"

namespace ginv {

// Conditional generator: latent z concatenated with a learned class
// embedding, dense projection to a 7x7 feature map, two stride-2 transposed
// convolutions up to 28x28, tanh output in [-1,1].
//
// Activation layout is channel-major (C, B, H, W); the final output has C=1,
// which makes it memory-identical to a (B, 784) batch of images.
template <typename T>
class CondGenerator {
public:
    using scalar_t = T;

    struct Arch {
        int64_t latent_dim = 100;
        int64_t classes = 10;
        int64_t embed_dim = 16;
        int64_t proj_channels = 64;  // channels of the 7x7 projection
        int64_t mid_channels = 32;   // channels of the 14x14 stage
    };

    explicit CondGenerator(const Arch& arch, uint64_t init_seed = 0)
        : arch_(arch),
          embed_(arch.classes, arch.embed_dim, "g_embed"),
          fc_(arch.latent_dim + arch.embed_dim, arch.proj_channels * 49, "g_fc"),
          proj_(arch.proj_channels, 7, 7, "g_proj"),
          bn0_(arch.proj_channels, "g_bn0"),
          relu0_("g_relu0"),
          up1_(arch.proj_channels, arch.mid_channels, 4, 2, 1, "g_up1"),
          bn1_(arch.mid_channels, "g_bn1"),
          relu1_("g_relu1"),
          up2_(arch.mid_channels, 1, 4, 2, 1, "g_up2"),
          tanh_("g_tanh") {
        int id = 0;
        for (nn::Layer<T>* l : chain()) l->set_id(id++);
        embed_id_ = id;
        Rng rng(derive_seed({init_seed, 0x67656eULL}));  // "gen"
        embed_.init(rng, 1.0);
        fc_.init(rng, 0.02);
        up1_.init(rng, 0.02);
        up2_.init(rng, 0.02);
    }

    const Arch& arch() const { return arch_; }
    int64_t latent_dim() const { return arch_.latent_dim; }
    int64_t classes() const { return arch_.classes; }

    std::vector<nn::ParamRef<T>> params() {
        std::vector<nn::ParamRef<T>> out = embed_.params();
        for (nn::Layer<T>* l : chain())
            for (auto& p : l->params()) out.push_back(p);
        return out;
    }
    std::vector<nn::ParamRef<T>> buffers() {
        std::vector<nn::ParamRef<T>> out;
        for (nn::Layer<T>* l : chain())
            for (auto& p : l->buffers()) out.push_back(p);
        return out;
    }

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

    // z: (B, latent_dim); labels: length B. Returns (1, B, 28, 28) in [-1,1].
    const Tensor<T>& forward(const Tensor<T>& z, const std::vector<int>& labels, nn::Ws<T>& ws,
                             bool train) const {
        const int64_t B = z.dim(0);
        GINV_CHECK(z.rank() == 2 && z.dim(1) == arch_.latent_dim, "generator: bad latent shape");
        GINV_CHECK(static_cast<int64_t>(labels.size()) == B, "generator: label count mismatch");
        auto& a = ws.acts;
        embed_.forward(labels, a[0]);  // (B, e)
        nn::ensure(a[1], {B, arch_.latent_dim + arch_.embed_dim});
        for (int64_t b = 0; b < B; ++b) {  // concat [z | embed]
            std::copy(z.data() + b * arch_.latent_dim, z.data() + (b + 1) * arch_.latent_dim,
                      a[1].data() + b * (arch_.latent_dim + arch_.embed_dim));
            std::copy(a[0].data() + b * arch_.embed_dim, a[0].data() + (b + 1) * arch_.embed_dim,
                      a[1].data() + b * (arch_.latent_dim + arch_.embed_dim) + arch_.latent_dim);
        }
        fc_.forward(a[1], a[2], ws, train);
        proj_.forward(a[2], a[3], ws, train);
        bn0_.forward(a[3], a[4], ws, train);
        relu0_.forward(a[4], a[5], ws, train);
        up1_.forward(a[5], a[6], ws, train);
        bn1_.forward(a[6], a[7], ws, train);
        relu1_.forward(a[7], a[8], ws, train);
        up2_.forward(a[8], a[9], ws, train);
        tanh_.forward(a[9], a[10], ws, train);
        return a[10];
    }

    // gy: gradient at the output image, shape (1, B, 28, 28).
    // Fills gz (B, latent_dim); parameter gradients when ws.want_pgrads.
    void backward(const Tensor<T>& gy, const std::vector<int>& labels, nn::Ws<T>& ws,
                  Tensor<T>& gz) const {
        auto& a = ws.acts;
        auto& g = ws.tacts;  // reuse tangent slots as gradient scratch
        tanh_.backward(a[9], a[10], gy, g[9], ws);
        up2_.backward(a[8], a[9], g[9], g[8], ws);
        relu1_.backward(a[7], a[8], g[8], g[7], ws);
        bn1_.backward(a[6], a[7], g[7], g[6], ws);
        up1_.backward(a[5], a[6], g[6], g[5], ws);
        relu0_.backward(a[4], a[5], g[5], g[4], ws);
        bn0_.backward(a[3], a[4], g[4], g[3], ws);
        proj_.backward(a[2], a[3], g[3], g[2], ws);
        fc_.backward(a[1], a[2], g[2], g[1], ws);
        const int64_t B = g[1].dim(0);
        nn::ensure(gz, {B, arch_.latent_dim});
        for (int64_t b = 0; b < B; ++b)
            std::copy(g[1].data() + b * (arch_.latent_dim + arch_.embed_dim),
                      g[1].data() + b * (arch_.latent_dim + arch_.embed_dim) + arch_.latent_dim,
                      gz.data() + b * arch_.latent_dim);
        if (ws.want_pgrads) {
            nn::ensure(g[0], {B, arch_.embed_dim});
            for (int64_t b = 0; b < B; ++b)
                std::copy(g[1].data() + b * (arch_.latent_dim + arch_.embed_dim) + arch_.latent_dim,
                          g[1].data() + (b + 1) * (arch_.latent_dim + arch_.embed_dim),
                          g[0].data() + b * arch_.embed_dim);
            auto& slot = ws.pgrad[static_cast<size_t>(embed_id_)];
            if (slot.empty()) {
                slot.resize(1);
                slot[0].resize({arch_.classes, arch_.embed_dim});
            }
            embed_.backward(labels, g[0], slot[0]);
        }
    }

    static constexpr int kActSlots = 11;

    Arch arch_;
    nn::Embedding<T> embed_;
    nn::Dense<T> fc_;
    nn::ToCBHW<T> proj_;
    nn::BatchNorm2d<T> bn0_;
    nn::ReLU<T> relu0_;
    nn::ConvTranspose2d<T> up1_;
    nn::BatchNorm2d<T> bn1_;
    nn::ReLU<T> relu1_;
    nn::ConvTranspose2d<T> up2_;
    nn::Tanh<T> tanh_;
    int embed_id_ = 0;

private:
    std::array<nn::Layer<T>*, 9> chain() {
        return {&fc_, &proj_, &bn0_, &relu0_, &up1_, &bn1_, &relu1_, &up2_, &tanh_};
    }
};

}  // namespace ginv
