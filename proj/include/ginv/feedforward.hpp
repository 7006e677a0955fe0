#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "ginv/adam.hpp"
#include "ginv/checkpoint.hpp"
#include "ginv/dataset.hpp"
#include "ginv/nn.hpp"
#include "ginv/rng.hpp"

namespace ginv {

// Conventional feed-forward classifiers over canonical [0,1] images:
//   oracle - conv(32,5x5)/pool/conv(64,5x5)/pool/dense(1024)/dense(10)
//   B      - conv(64,5x5,s2)/conv(128,5x5,s2)/dropout/dense(10)
//   E      - dense(200)/dense(200)/dense(10)
// "oracle" is the conditioning/robustness reference model; B and E are the
// substitute architectures (one convolutional, one fully connected).
template <typename T>
class FeedForwardClassifier {
public:
    using scalar_t = T;

    explicit FeedForwardClassifier(const std::string& arch, uint64_t init_seed = 0)
        : arch_(arch) {
        auto add = [this](auto* layer) {
            layer->set_id(static_cast<int>(chain_.size()));
            chain_.emplace_back(layer);
        };
        if (arch == "oracle") {
            add(new nn::ToCBHW<T>(1, 28, 28, "to_grid"));
            add(new nn::Conv2d<T>(1, 32, 5, 1, 2, "conv1"));
            add(new nn::ReLU<T>("relu1"));
            add(new nn::MaxPool2d<T>("pool1"));
            add(new nn::Conv2d<T>(32, 64, 5, 1, 2, "conv2"));
            add(new nn::ReLU<T>("relu2"));
            add(new nn::MaxPool2d<T>("pool2"));
            add(new nn::FromCBHW<T>("flatten"));
            add(new nn::Dense<T>(64 * 49, 1024, "fc1"));
            add(new nn::ReLU<T>("relu3"));
            add(new nn::Dense<T>(1024, 10, "fc2"));
        } else if (arch == "B") {
            add(new nn::ToCBHW<T>(1, 28, 28, "to_grid"));
            add(new nn::Conv2d<T>(1, 64, 5, 2, 2, "conv1"));
            add(new nn::ReLU<T>("relu1"));
            add(new nn::Conv2d<T>(64, 128, 5, 2, 2, "conv2"));
            add(new nn::ReLU<T>("relu2"));
            add(new nn::FromCBHW<T>("flatten"));
            add(new nn::Dropout<T>(0.5, "drop1"));
            add(new nn::Dense<T>(128 * 49, 10, "fc1"));
        } else if (arch == "E") {
            add(new nn::Dense<T>(784, 200, "fc1"));
            add(new nn::ReLU<T>("relu1"));
            add(new nn::Dense<T>(200, 200, "fc2"));
            add(new nn::ReLU<T>("relu2"));
            add(new nn::Dense<T>(200, 10, "fc3"));
        } else {
            throw contract_error("unknown classifier architecture '" + arch +
                                 "' (expected oracle, B, or E)");
        }
        Rng rng(derive_seed({init_seed, 0x636c66ULL}));  // "clf"
        for (auto& l : chain_) {
            if (auto* d = dynamic_cast<nn::Dense<T>*>(l.get())) d->init_he(rng);
            if (auto* c = dynamic_cast<nn::Conv2d<T>*>(l.get())) c->init_he(rng);
        }
    }

    const std::string& arch() const { return arch_; }
    int64_t classes() const { return 10; }

    std::vector<nn::ParamRef<T>> params() {
        std::vector<nn::ParamRef<T>> out;
        for (auto& l : chain_)
            for (auto& p : l->params()) out.push_back(p);
        return out;
    }
    std::vector<nn::ParamRef<T>> buffers() { return {}; }

    nn::Ws<T> make_ws() const {
        nn::Ws<T> ws;
        ws.init(static_cast<int>(chain_.size()), static_cast<int>(chain_.size()) + 1);
        return ws;
    }

    std::vector<Tensor<T>*> grad_refs(nn::Ws<T>& ws) {
        std::vector<Tensor<T>*> out;
        for (auto& l : chain_) nn::claim_pgrads(ws, l->id(), l->params(), out);
        return out;
    }

    // x: (B, 784) in [0,1]. Returns logits (B, 10).
    const Tensor<T>& forward(const Tensor<T>& x, nn::Ws<T>& ws, bool train) const {
        GINV_CHECK(x.rank() == 2 && x.dim(1) == 784, "classifier: input must be (B, 784)");
        auto& a = ws.acts;
        nn::ensure(a[0], x.shape());
        std::copy(x.data(), x.data() + x.numel(), a[0].data());
        for (size_t i = 0; i < chain_.size(); ++i)
            chain_[i]->forward(a[i], a[i + 1], ws, train);
        return a[chain_.size()];
    }

    // gy: gradient at the logits (B, 10); fills gx (B, 784).
    void backward(const Tensor<T>& gy, nn::Ws<T>& ws, Tensor<T>& gx) const {
        auto& a = ws.acts;
        auto& g = ws.tacts;
        const size_t n = chain_.size();
        const Tensor<T>* up = &gy;
        for (size_t i = n; i-- > 0;) {
            chain_[i]->backward(a[i], a[i + 1], *up, g[i], ws);
            up = &g[i];
        }
        nn::ensure(gx, a[0].shape());
        std::copy(g[0].data(), g[0].data() + g[0].numel(), gx.data());
    }

private:
    std::string arch_;
    std::vector<std::unique_ptr<nn::Layer<T>>> chain_;
};

// Row-wise numerically stable softmax.
template <typename T>
inline void softmax_rows(const Tensor<T>& logits, Tensor<T>& probs) {
    const int64_t B = logits.dim(0), C = logits.dim(1);
    nn::ensure(probs, logits.shape());
    for (int64_t b = 0; b < B; ++b) {
        const T* s = logits.data() + b * C;
        T* p = probs.data() + b * C;
        T mx = s[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, s[c]);
        double z = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            p[c] = std::exp(s[c] - mx);
            z += static_cast<double>(p[c]);
        }
        const T inv = static_cast<T>(1.0 / z);
        for (int64_t c = 0; c < C; ++c) p[c] *= inv;
    }
}

// Mean cross-entropy over the batch; fills the logit gradient
// (softmax - onehot)/B ready to seed backward().
template <typename T>
inline double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                                    Tensor<T>& glogits) {
    const int64_t B = logits.dim(0), C = logits.dim(1);
    GINV_CHECK(static_cast<int64_t>(labels.size()) == B, "cross_entropy: label count mismatch");
    softmax_rows(logits, glogits);
    double loss = 0.0;
    const T invb = static_cast<T>(1.0 / static_cast<double>(B));
    for (int64_t b = 0; b < B; ++b) {
        T* p = glogits.data() + b * C;
        const int y = labels[static_cast<size_t>(b)];
        loss -= std::log(std::max(static_cast<double>(p[y]), 1e-300));
        p[y] -= T(1);
        for (int64_t c = 0; c < C; ++c) p[c] *= invb;
    }
    return loss / static_cast<double>(B);
}

// Ties resolve to the lowest index.
template <typename T>
inline int argmax_row(const T* s, int64_t n) {
    int best = 0;
    for (int64_t c = 1; c < n; ++c)
        if (s[c] > s[best]) best = static_cast<int>(c);
    return best;
}

template <typename T>
inline Tensor<T> predict_scores(const FeedForwardClassifier<T>& clf, const Tensor<T>& x) {
    auto ws = clf.make_ws();
    return clf.forward(x, ws, false);
}

template <typename T>
inline std::vector<int> predict(const FeedForwardClassifier<T>& clf, const Tensor<T>& x) {
    const Tensor<T> scores = predict_scores(clf, x);
    std::vector<int> out(static_cast<size_t>(scores.dim(0)));
    for (int64_t b = 0; b < scores.dim(0); ++b)
        out[static_cast<size_t>(b)] = argmax_row(scores.data() + b * scores.dim(1), scores.dim(1));
    return out;
}

// Eval-mode accuracy over a labeled set, batched.
template <typename T>
inline double classifier_accuracy(const FeedForwardClassifier<T>& clf, const LabeledImageSet& set,
                                  int64_t batch = 512) {
    auto ws = clf.make_ws();
    int64_t correct = 0;
    Tensor<T> x;
    for (int64_t lo = 0; lo < set.size(); lo += batch) {
        const int64_t n = std::min(batch, set.size() - lo);
        nn::ensure(x, {n, kImagePixels});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t p = 0; p < kImagePixels; ++p)
                x[i * kImagePixels + p] = static_cast<T>(set.images[(lo + i) * kImagePixels + p]);
        const Tensor<T>& s = clf.forward(x, ws, false);
        for (int64_t i = 0; i < n; ++i)
            if (argmax_row(s.data() + i * 10, 10) == set.labels[static_cast<size_t>(lo + i)])
                ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

struct ClassifierTrainConfig {
    std::string arch = "oracle";
    int64_t batch = 128;
    int64_t epochs = 10;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;
    uint64_t seed = 1;
    int64_t log_interval = 100;
    std::string out_dir;  // empty disables artifact emission

    ordered_json to_json() const {
        ordered_json j;
        j["arch"] = arch;
        j["batch"] = batch;
        j["epochs"] = epochs;
        j["lr"] = lr;
        j["beta1"] = beta1;
        j["beta2"] = beta2;
        j["seed"] = seed;
        return j;
    }
};

struct ClassifierStepStats {
    int64_t step;
    double loss, batch_accuracy;
};

struct ClassifierTrainResult {
    FeedForwardClassifier<float> model;
    std::vector<ClassifierStepStats> log;
    std::string ckpt;
};

inline Checkpoint make_classifier_checkpoint(FeedForwardClassifier<float>& clf, uint64_t seed,
                                             int64_t train_steps, const std::string& digest) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "classifier";
    ckpt.meta["arch"] = clf.arch();
    ckpt.meta["pixel_range"] = "canonical [0,1]";
    ckpt.meta["seed"] = seed;
    ckpt.meta["train_steps"] = train_steps;
    ckpt.meta["train_config_digest"] = digest;
    collect_blobs(clf, ckpt);
    return ckpt;
}

inline FeedForwardClassifier<float> classifier_from_checkpoint(const Checkpoint& ckpt) {
    GINV_CHECK(ckpt.meta.contains("kind") && ckpt.meta["kind"] == "classifier",
               "checkpoint is not a feed-forward classifier");
    FeedForwardClassifier<float> clf(ckpt.meta["arch"].get<std::string>());
    restore_blobs(clf, ckpt);
    return clf;
}

inline FeedForwardClassifier<float> load_classifier(const std::string& path) {
    return classifier_from_checkpoint(load_checkpoint(path));
}

// Softmax cross-entropy training with epoch-shuffled minibatches.
inline ClassifierTrainResult train_classifier(const LabeledImageSet& train,
                                              const ClassifierTrainConfig& cfg) {
    GINV_CHECK(train.size() >= cfg.batch, "train_classifier: training set smaller than a batch");
    namespace fs = std::filesystem;
    const bool emit = !cfg.out_dir.empty();
    if (emit) fs::create_directories(cfg.out_dir);
    const std::string digest = config_digest(cfg.to_json());

    ClassifierTrainResult res{
        FeedForwardClassifier<float>(cfg.arch, derive_seed({cfg.seed, 0x696e6974ULL})), {}, ""};
    auto ws = res.model.make_ws();
    ws.rng.reseed(derive_seed({cfg.seed, 0x64726f70ULL}));  // dropout masks
    auto grads = res.model.grad_refs(ws);
    Adam<float> opt(res.model.params(), cfg.lr, cfg.beta1, cfg.beta2);
    Rng rng_shuffle(derive_seed({cfg.seed, 0x73687566ULL}));

    const int64_t B = cfg.batch;
    const int64_t n = train.size();
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Tensor<float> x({B, kImagePixels}), glog, gx;
    std::vector<int> labels(static_cast<size_t>(B));

    std::FILE* logf = nullptr;
    if (emit) {
        logf = std::fopen((fs::path(cfg.out_dir) / "train_log.csv").string().c_str(), "w");
        if (logf) std::fprintf(logf, "step,loss,batch_accuracy\n");
    }

    int64_t step = 0;
    const int64_t steps_per_epoch = n / B;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int64_t i = n - 1; i > 0; --i) {
            const int64_t j = static_cast<int64_t>(rng_shuffle.below(static_cast<uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        for (int64_t it = 0; it < steps_per_epoch; ++it) {
            ++step;
            for (int64_t b = 0; b < B; ++b) {
                const int64_t idx = order[static_cast<size_t>(it * B + b)];
                labels[static_cast<size_t>(b)] = train.labels[static_cast<size_t>(idx)];
                const float* src = train.image(idx);
                std::copy(src, src + kImagePixels, x.data() + b * kImagePixels);
            }
            ws.clear_pgrads();
            ws.want_pgrads = true;
            const Tensor<float>& logits = res.model.forward(x, ws, true);
            const double loss = softmax_cross_entropy(logits, labels, glog);
            if (!std::isfinite(loss)) {
                if (logf) std::fclose(logf);
                throw contract_error("train_classifier: loss diverged at step " +
                                     std::to_string(step));
            }
            int64_t hits = 0;
            for (int64_t b = 0; b < B; ++b)
                if (argmax_row(logits.data() + b * 10, 10) == labels[static_cast<size_t>(b)])
                    ++hits;
            res.model.backward(glog, ws, gx);
            opt.step(grads);
            if (step % cfg.log_interval == 0 || step == 1) {
                const double acc = static_cast<double>(hits) / static_cast<double>(B);
                res.log.push_back({step, loss, acc});
                if (logf) {
                    std::fprintf(logf, "%lld,%.6f,%.4f\n", static_cast<long long>(step), loss, acc);
                    std::fflush(logf);
                }
            }
        }
    }
    if (logf) std::fclose(logf);
    if (emit) {
        res.ckpt = (fs::path(cfg.out_dir) / "classifier.ckpt").string();
        save_checkpoint(make_classifier_checkpoint(res.model, cfg.seed, step, digest), res.ckpt);
    }
    return res;
}

}  // namespace ginv
