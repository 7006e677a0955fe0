#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "gradcheck.hpp"
#include "ginv/feedforward.hpp"

using ginv::ClassifierTrainConfig;
using ginv::FeedForwardClassifier;
using ginv::LabeledImageSet;
using ginv::Rng;
using ginv::Tensor;

namespace {

// Separable synthetic task: class c lights up a distinct 7x7 block.
LabeledImageSet block_set(int64_t n, uint64_t seed) {
    LabeledImageSet s;
    s.name = "blocks";
    s.split = "train";
    s.images.resize({n, 784});
    s.labels.resize(static_cast<size_t>(n));
    s.source_index.resize(static_cast<size_t>(n));
    Rng rng(seed);
    for (int64_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(rng.below(10));
        s.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(c);
        s.source_index[static_cast<size_t>(i)] = static_cast<int32_t>(i);
        const int64_t by = (c / 4) * 7, bx = (c % 4) * 7;
        for (int64_t p = 0; p < 784; ++p)
            s.images[i * 784 + p] = static_cast<float>(0.1 * rng.uniform());
        for (int64_t y = by; y < by + 7; ++y)
            for (int64_t x = bx; x < bx + 7; ++x)
                s.images[i * 784 + y * 28 + x] = static_cast<float>(0.7 + 0.3 * rng.uniform());
    }
    return s;
}

}  // namespace

TEST(Softmax, NormalizesAndMatchesHandValues) {
    Tensor<double> logits({2, 3});
    logits[0] = 1.0, logits[1] = 2.0, logits[2] = 3.0;
    logits[3] = 0.0, logits[4] = 0.0, logits[5] = 0.0;
    Tensor<double> p;
    ginv::softmax_rows(logits, p);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    EXPECT_NEAR(p[0], std::exp(1.0) / z, 1e-12);
    EXPECT_NEAR(p[1], std::exp(2.0) / z, 1e-12);
    EXPECT_NEAR(p[2], std::exp(3.0) / z, 1e-12);
    for (int64_t b = 0; b < 2; ++b) {
        double sum = 0;
        for (int64_t c = 0; c < 3; ++c) sum += p[b * 3 + c];
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    EXPECT_NEAR(p[3], 1.0 / 3.0, 1e-12);
}

TEST(Softmax, InvariantToConstantShift) {
    Tensor<double> a({1, 4}), b({1, 4});
    Rng rng(5);
    for (int64_t i = 0; i < 4; ++i) {
        a[i] = rng.normal();
        b[i] = a[i] + 123.25;
    }
    Tensor<double> pa, pb;
    ginv::softmax_rows(a, pa);
    ginv::softmax_rows(b, pb);
    for (int64_t i = 0; i < 4; ++i) EXPECT_NEAR(pa[i], pb[i], 1e-12);
    EXPECT_EQ(ginv::argmax_row(a.data(), 4), ginv::argmax_row(b.data(), 4));
}

TEST(Softmax, CrossEntropyMatchesHandComputation) {
    Tensor<double> logits({2, 3});
    logits[0] = 0.5, logits[1] = -0.2, logits[2] = 1.1;
    logits[3] = 2.0, logits[4] = 1.0, logits[5] = -1.0;
    std::vector<int> labels = {2, 0};
    Tensor<double> g;
    const double loss = ginv::softmax_cross_entropy(logits, labels, g);

    double want = 0.0;
    Tensor<double> p;
    ginv::softmax_rows(logits, p);
    want -= std::log(p[2]);
    want -= std::log(p[3]);
    want /= 2.0;
    EXPECT_NEAR(loss, want, 1e-12);
    // gradient = (softmax - onehot)/B
    EXPECT_NEAR(g[0], p[0] / 2, 1e-12);
    EXPECT_NEAR(g[2], (p[2] - 1.0) / 2, 1e-12);
    EXPECT_NEAR(g[3], (p[3] - 1.0) / 2, 1e-12);
    EXPECT_NEAR(g[5], p[5] / 2, 1e-12);
}

TEST(ArgmaxRow, BreaksTiesTowardLowestIndex) {
    const double tie[4] = {0.3, 0.7, 0.7, 0.1};
    EXPECT_EQ(ginv::argmax_row(tie, 4), 1);
    const double all_equal[3] = {0.5, 0.5, 0.5};
    EXPECT_EQ(ginv::argmax_row(all_equal, 3), 0);
}

TEST(Classifier, RejectsUnknownArchitecture) {
    EXPECT_THROW(FeedForwardClassifier<float>("Z"), ginv::contract_error);
}

TEST(Classifier, PredictAgreesWithScoresArgmax) {
    FeedForwardClassifier<float> clf("E", 3);
    Tensor<float> x({5, 784});
    Rng rng(7);
    rng.fill_uniform(x, 0.0, 1.0);
    const Tensor<float> s = ginv::predict_scores(clf, x);
    const std::vector<int> labels = ginv::predict(clf, x);
    ASSERT_EQ(labels.size(), 5u);
    for (int64_t b = 0; b < 5; ++b)
        EXPECT_EQ(labels[static_cast<size_t>(b)], ginv::argmax_row(s.data() + b * 10, 10));
    // repeat determinism
    const std::vector<int> again = ginv::predict(clf, x);
    EXPECT_EQ(labels, again);
}

// Cross-entropy input gradients vs finite differences for every architecture,
// double precision; ReLU kinks handled by the multi-scale probe.
TEST(Classifier, InputGradientMatchesFiniteDifference) {
    for (const std::string arch : {"oracle", "B", "E"}) {
        FeedForwardClassifier<double> clf(arch, 11);
        auto ws = clf.make_ws();
        Tensor<double> x({2, 784});
        Rng rng(13);
        rng.fill_uniform(x, 0.0, 1.0);
        std::vector<int> labels = {3, 8};

        Tensor<double> glog, gx;
        ws.want_pgrads = false;
        const Tensor<double>& logits = clf.forward(x, ws, false);
        ginv::softmax_cross_entropy(logits, labels, glog);
        clf.backward(glog, ws, gx);
        Tensor<double> analytic = gx;

        auto value = [&]() {
            auto ws2 = clf.make_ws();
            const Tensor<double>& lg = clf.forward(x, ws2, false);
            Tensor<double> tmp;
            return ginv::softmax_cross_entropy(lg, labels, tmp);
        };
        // spot-check a spread of pixels (full 784x2 would be slow for conv nets)
        double worst = 0.0;
        for (int64_t i = 0; i < x.numel(); i += 97) {
            const double old = x[i];
            double err = 1e9;
            for (double h : {1e-5, 1e-6, 1e-7}) {
                x[i] = old + h;
                const double fp = value();
                x[i] = old - h;
                const double fm = value();
                x[i] = old;
                const double fd = (fp - fm) / (2 * h);
                if (std::fabs(fd - analytic[i]) < 1e-7) err = 0.0;
                err = std::min(err, gradcheck::rel_err(fd, analytic[i]));
                if (err <= 1e-4) break;
            }
            worst = std::max(worst, err);
        }
        EXPECT_LE(worst, 1e-4) << "arch " << arch;
    }
}

TEST(Classifier, LossDecreasesOnRepeatedBatch) {
    LabeledImageSet data = block_set(128, 21);
    ClassifierTrainConfig cfg;
    cfg.arch = "E";
    cfg.batch = 128;
    cfg.epochs = 50;  // one batch per epoch -> 50 steps on the same batch
    cfg.log_interval = 1;
    cfg.seed = 5;
    auto res = ginv::train_classifier(data, cfg);
    ASSERT_EQ(res.log.size(), 50u);
    EXPECT_LT(res.log.back().loss, res.log.front().loss);
    EXPECT_LT(res.log.back().loss, 0.1);
}

TEST(Classifier, LearnsSeparableSyntheticTask) {
    LabeledImageSet train = block_set(2048, 22);
    LabeledImageSet fresh = block_set(512, 23);
    ClassifierTrainConfig cfg;
    cfg.arch = "E";
    cfg.batch = 128;
    cfg.epochs = 12;
    cfg.seed = 6;
    auto res = ginv::train_classifier(train, cfg);
    EXPECT_GE(ginv::classifier_accuracy(res.model, fresh), 0.97);
}

TEST(Classifier, TrainingRerunIsBitIdentical) {
    LabeledImageSet data = block_set(256, 24);
    ClassifierTrainConfig cfg;
    cfg.arch = "B";  // exercises the dropout path too
    cfg.batch = 64;
    cfg.epochs = 2;
    cfg.log_interval = 1;
    auto a = ginv::train_classifier(data, cfg);
    auto b = ginv::train_classifier(data, cfg);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
}

TEST(Classifier, CheckpointRoundTripsBitExact) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "ginv_clf_test";
    fs::create_directories(dir);

    LabeledImageSet data = block_set(256, 25);
    ClassifierTrainConfig cfg;
    cfg.arch = "E";
    cfg.batch = 64;
    cfg.epochs = 2;
    auto res = ginv::train_classifier(data, cfg);

    const std::string p1 = (dir / "clf.ckpt").string();
    ginv::save_checkpoint(ginv::make_classifier_checkpoint(res.model, cfg.seed, 8, "x"), p1);
    auto loaded = ginv::load_classifier(p1);
    EXPECT_EQ(loaded.arch(), "E");

    Tensor<float> x({4, 784});
    Rng rng(9);
    rng.fill_uniform(x, 0.0, 1.0);
    const Tensor<float> s0 = ginv::predict_scores(res.model, x);
    const Tensor<float> s1 = ginv::predict_scores(loaded, x);
    for (int64_t i = 0; i < s0.numel(); ++i) EXPECT_EQ(s0[i], s1[i]);

    const std::string p2 = (dir / "clf2.ckpt").string();
    ginv::save_checkpoint(ginv::make_classifier_checkpoint(loaded, cfg.seed, 8, "x"), p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    EXPECT_EQ(b1, b2);
    fs::remove_all(dir);
}

TEST(Classifier, GeneratorCheckpointIsRejected) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "ginv_clf_kind_test";
    fs::create_directories(dir);
    ginv::CondGenerator<float>::Arch arch;
    arch.latent_dim = 8;
    arch.proj_channels = 6;
    arch.mid_channels = 4;
    ginv::CondGenerator<float> g(arch, 1);
    const std::string p = (dir / "gen.ckpt").string();
    ginv::save_checkpoint(ginv::make_generator_checkpoint(g, 1, 0, "d"), p);
    EXPECT_THROW(ginv::load_classifier(p), ginv::contract_error);
    fs::remove_all(dir);
}
