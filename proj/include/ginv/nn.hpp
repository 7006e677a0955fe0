#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "ginv/rng.hpp"
#include "ginv/tensor.hpp"

// Reverse-mode layer substrate.
//
// Conventions:
//  - Dense-path tensors are (B, F) row-major.
//  - Conv-path tensors are stored channel-major as (C, B, H, W) so that each
//    convolution collapses into a single GEMM across the whole batch and each
//    batch-norm channel is one contiguous row.
//  - forward() never mutates the layer; all call state lives in a Ws
//    (workspace) owned by the caller, so concurrent read-only queries on a
//    fixed parameter set are safe.
//  - backward() receives the layer's own forward input/output, returns the
//    input gradient, and (optionally) accumulates parameter gradients into
//    the workspace.
//  - The *_jvp entry points propagate a (value, tangent) pair forward and the
//    corresponding adjoint pair backward; this is the reverse-over-forward
//    machinery used for the gradient-penalty parameter gradient.

namespace ginv::nn {

using ginv::Tensor;

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value = nullptr;
    bool trainable = true;
};

template <typename T>
struct Ws {
    // model-defined activation slots; tacts doubles as gradient scratch in
    // plain backward passes. jacts/jgrads carry the tangent stream and its
    // adjoints during jvp passes.
    std::vector<Tensor<T>> acts;
    std::vector<Tensor<T>> tacts;
    std::vector<Tensor<T>> jacts;
    std::vector<Tensor<T>> jgrads;
    // per-layer tensor caches (BN stats, dropout masks, im2col buffers, ...)
    std::vector<std::array<Tensor<T>, 4>> lcache;
    std::vector<std::vector<int32_t>> icache;  // pool argmax etc.
    // per-layer parameter gradients, aligned with each layer's params()
    std::vector<std::vector<Tensor<T>>> pgrad;
    Rng rng{0};
    bool want_pgrads = false;

    void init(int num_layers, int num_act_slots) {
        lcache.resize(static_cast<size_t>(num_layers));
        icache.resize(static_cast<size_t>(num_layers));
        pgrad.resize(static_cast<size_t>(num_layers));
        acts.resize(static_cast<size_t>(num_act_slots));
        tacts.resize(static_cast<size_t>(num_act_slots));
        jacts.resize(static_cast<size_t>(num_act_slots));
        jgrads.resize(static_cast<size_t>(num_act_slots));
    }

    void clear_pgrads() {
        for (auto& layer : pgrad)
            for (auto& g : layer) g.zero();
    }
};

// Resize without the zero-fill of Tensor::resize; contents are garbage until
// written. For hot-loop buffers that are fully overwritten each call.
template <typename T>
inline void ensure(Tensor<T>& t, const std::vector<int64_t>& shape) {
    if (t.shape() == shape) return;
    Tensor<T> fresh(shape);
    t = std::move(fresh);
}

template <typename T>
inline void accumulate_pgrad(Ws<T>& ws, int layer_id, size_t k, const Tensor<T>& g) {
    auto& slot = ws.pgrad[static_cast<size_t>(layer_id)];
    if (slot.size() <= k) slot.resize(k + 1);
    if (!slot[k].same_shape(g)) {
        slot[k] = g;
    } else {
        slot[k].vec() += g.vec();
    }
}

// Sizes the pgrad slots for one layer's parameters and appends their
// addresses to out, aligned with the model's params() order.
template <typename T>
inline void claim_pgrads(Ws<T>& ws, int id, const std::vector<ParamRef<T>>& ps,
                         std::vector<Tensor<T>*>& out) {
    auto& slot = ws.pgrad[static_cast<size_t>(id)];
    if (slot.size() < ps.size()) slot.resize(ps.size());
    for (size_t k = 0; k < ps.size(); ++k) {
        slot[k].resize(ps[k].value->shape());
        out.push_back(&slot[k]);
    }
}

template <typename T>
class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;

    const std::string& name() const { return name_; }
    int id() const { return id_; }
    void set_id(int id) { id_ = id; }

    virtual std::vector<ParamRef<T>> params() { return {}; }
    virtual std::vector<ParamRef<T>> buffers() { return {}; }

    virtual void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>& ws, bool train) const = 0;
    virtual void backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gy,
                          Tensor<T>& gx, Ws<T>& ws) const = 0;

    // (y, ydot) = (f(x), J_f(x)·xdot); only layers on the critic path implement these.
    virtual void forward_jvp(const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&,
                             Ws<T>&) const {
        throw contract_error("forward_jvp unsupported for layer " + name_);
    }
    // Adjoint of forward_jvp w.r.t. (x, xdot) and parameters.
    virtual void backward_jvp(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,
                              const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,
                              Tensor<T>&, Ws<T>&) const {
        throw contract_error("backward_jvp unsupported for layer " + name_);
    }

protected:
    std::string name_;
    int id_ = -1;
};

// ---------------------------------------------------------------------------
// im2col / col2im for the channel-major (C, B, H, W) layout.
//
// "cols" has shape (C*K*K, B*Hc*Wc) where grid position (cy, cx) corresponds
// to the image window with origin (cy*stride - pad, cx*stride - pad).
// For a convolution the grid is the output; for a transposed convolution the
// grid is the input and the image is the output.

struct ConvGeom {
    int64_t C, B, H, W;    // image
    int64_t K, stride, pad;
    int64_t Hc, Wc;        // grid
};

template <typename T>
inline void im2col_gather(const T* img, const ConvGeom& g, T* cols) {
    const int64_t HW = g.H * g.W;
    const int64_t grid = g.B * g.Hc * g.Wc;
    for (int64_t c = 0; c < g.C; ++c) {
        for (int64_t ky = 0; ky < g.K; ++ky) {
            for (int64_t kx = 0; kx < g.K; ++kx) {
                T* dst = cols + ((c * g.K + ky) * g.K + kx) * grid;
                for (int64_t b = 0; b < g.B; ++b) {
                    const T* src = img + (c * g.B + b) * HW;
                    for (int64_t cy = 0; cy < g.Hc; ++cy) {
                        const int64_t iy = cy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.H) {
                            for (int64_t cx = 0; cx < g.Wc; ++cx) *dst++ = T(0);
                            continue;
                        }
                        for (int64_t cx = 0; cx < g.Wc; ++cx) {
                            const int64_t ix = cx * g.stride - g.pad + kx;
                            *dst++ = (ix >= 0 && ix < g.W) ? src[iy * g.W + ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// img += scatter(cols); caller zeroes img first.
template <typename T>
inline void col2im_scatter(const T* cols, const ConvGeom& g, T* img) {
    const int64_t HW = g.H * g.W;
    const int64_t grid = g.B * g.Hc * g.Wc;
    for (int64_t c = 0; c < g.C; ++c) {
        for (int64_t ky = 0; ky < g.K; ++ky) {
            for (int64_t kx = 0; kx < g.K; ++kx) {
                const T* src = cols + ((c * g.K + ky) * g.K + kx) * grid;
                for (int64_t b = 0; b < g.B; ++b) {
                    T* dst = img + (c * g.B + b) * HW;
                    for (int64_t cy = 0; cy < g.Hc; ++cy) {
                        const int64_t iy = cy * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.H) {
                            src += g.Wc;
                            continue;
                        }
                        for (int64_t cx = 0; cx < g.Wc; ++cx) {
                            const int64_t ix = cx * g.stride - g.pad + kx;
                            if (ix >= 0 && ix < g.W) dst[iy * g.W + ix] += *src;
                            ++src;
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------

// y = x W^T + b over (B, in) -> (B, out); W stored (out, in).
template <typename T>
class Dense : public Layer<T> {
public:
    Dense(int64_t in, int64_t out, std::string name)
        : Layer<T>(std::move(name)), in_(in), out_(out), W_({out, in}), b_({out}) {}

    void init(Rng& rng, double stddev) {
        rng.fill_normal(W_, 0.0, stddev);
        b_.zero();
    }
    void init_he(Rng& rng) { init(rng, std::sqrt(2.0 / static_cast<double>(in_))); }

    std::vector<ParamRef<T>> params() override {
        return {{this->name_ + ".W", &W_, true}, {this->name_ + ".b", &b_, true}};
    }

    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>& ws, bool) const override {
        const int64_t B = x.dim(0);
        GINV_CHECK(x.dim(1) == in_, "dense: input width mismatch in " + this->name_);
        ensure(y, {B, out_});
        gemm<T>(x.data(), W_.data(), y.data(), B, in_, out_, false, true);
        auto ym = as_matrix(y, B, out_);
        ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b_.data(), out_);
        (void)ws;
    }

    void backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>& ws) const override {
        const int64_t B = x.dim(0);
        ensure(gx, {B, in_});
        gemm<T>(gy.data(), W_.data(), gx.data(), B, out_, in_, false, false);
        if (ws.want_pgrads) {
            Tensor<T> gW({out_, in_});
            gemm<T>(gy.data(), x.data(), gW.data(), out_, B, in_, true, false);
            Tensor<T> gb({out_});
            as_matrix(gb, 1, out_).noalias() = as_matrix(gy, B, out_).colwise().sum();
            accumulate_pgrad(ws, this->id_, 0, gW);
            accumulate_pgrad(ws, this->id_, 1, gb);
        }
    }

    void forward_jvp(const Tensor<T>& x, const Tensor<T>& xdot, Tensor<T>& y, Tensor<T>& ydot,
                     Ws<T>& ws) const override {
        forward(x, y, ws, false);
        const int64_t B = x.dim(0);
        ensure(ydot, {B, out_});
        gemm<T>(xdot.data(), W_.data(), ydot.data(), B, in_, out_, false, true);
    }

    void backward_jvp(const Tensor<T>& x, const Tensor<T>& xdot, const Tensor<T>&,
                      const Tensor<T>&, const Tensor<T>& gy, const Tensor<T>& gydot,
                      Tensor<T>& gx, Tensor<T>& gxdot, Ws<T>& ws) const override {
        const int64_t B = x.dim(0);
        ensure(gx, {B, in_});
        ensure(gxdot, {B, in_});
        gemm<T>(gy.data(), W_.data(), gx.data(), B, out_, in_, false, false);
        gemm<T>(gydot.data(), W_.data(), gxdot.data(), B, out_, in_, false, false);
        if (ws.want_pgrads) {
            // y = xW^T: dP/dW picks up both streams (gy x^T from the value path,
            // gydot xdot^T from the tangent path); b only feeds the value path.
            Tensor<T> gW({out_, in_});
            gemm<T>(gy.data(), x.data(), gW.data(), out_, B, in_, true, false);
            gemm<T>(gydot.data(), xdot.data(), gW.data(), out_, B, in_, true, false, T(1), T(1));
            Tensor<T> gb({out_});
            as_matrix(gb, 1, out_).noalias() = as_matrix(gy, B, out_).colwise().sum();
            accumulate_pgrad(ws, this->id_, 0, gW);
            accumulate_pgrad(ws, this->id_, 1, gb);
        }
    }

    int64_t in_, out_;
    Tensor<T> W_, b_;
};

// Convolution on (Cin, B, H, W) -> (Cout, B, Ho, Wo); W stored (Cout, Cin*K*K).
template <typename T>
class Conv2d : public Layer<T> {
public:
    Conv2d(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t pad, std::string name)
        : Layer<T>(std::move(name)), cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad),
          W_({cout, cin * k * k}), b_({cout}) {}

    void init(Rng& rng, double stddev) {
        rng.fill_normal(W_, 0.0, stddev);
        b_.zero();
    }
    void init_he(Rng& rng) { init(rng, std::sqrt(2.0 / static_cast<double>(cin_ * k_ * k_))); }

    std::vector<ParamRef<T>> params() override {
        return {{this->name_ + ".W", &W_, true}, {this->name_ + ".b", &b_, true}};
    }

    // Floor output size: input rows/cols past the last full window are unused
    // (and so receive zero gradient), matching the usual convention.
    ConvGeom geom(const Tensor<T>& x) const {
        const int64_t B = x.dim(1), H = x.dim(2), W = x.dim(3);
        GINV_CHECK(x.dim(0) == cin_, "conv: channel mismatch in " + this->name_);
        GINV_CHECK(H + 2 * pad_ >= k_ && W + 2 * pad_ >= k_,
                   "conv: input smaller than kernel in " + this->name_);
        return {cin_, B, H, W, k_, stride_, pad_,
                (H + 2 * pad_ - k_) / stride_ + 1, (W + 2 * pad_ - k_) / stride_ + 1};
    }

    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>& ws, bool) const override {
        run_forward(x, y, ws, /*cols_slot=*/0);
    }

    void backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>& ws) const override {
        const ConvGeom g = geom(x);
        const int64_t grid = g.B * g.Hc * g.Wc;
        const int64_t rows = cin_ * k_ * k_;
        auto& gcols = ws.lcache[static_cast<size_t>(this->id_)][1];
        ensure(gcols, {rows, grid});
        gemm<T>(W_.data(), gy.data(), gcols.data(), rows, cout_, grid, true, false);
        ensure(gx, {cin_, g.B, g.H, g.W});
        gx.zero();
        col2im_scatter(gcols.data(), g, gx.data());
        if (ws.want_pgrads) add_pgrads(x, gy, gy /*unused tangent*/, nullptr, g, ws);
    }

    void forward_jvp(const Tensor<T>& x, const Tensor<T>& xdot, Tensor<T>& y, Tensor<T>& ydot,
                     Ws<T>& ws) const override {
        run_forward(x, y, ws, 0);
        run_forward(xdot, ydot, ws, 2, /*bias=*/false);
    }

    void backward_jvp(const Tensor<T>& x, const Tensor<T>& xdot, const Tensor<T>&,
                      const Tensor<T>&, const Tensor<T>& gy, const Tensor<T>& gydot,
                      Tensor<T>& gx, Tensor<T>& gxdot, Ws<T>& ws) const override {
        const ConvGeom g = geom(x);
        const int64_t grid = g.B * g.Hc * g.Wc;
        const int64_t rows = cin_ * k_ * k_;
        auto& gcols = ws.lcache[static_cast<size_t>(this->id_)][1];
        ensure(gcols, {rows, grid});

        gemm<T>(W_.data(), gy.data(), gcols.data(), rows, cout_, grid, true, false);
        ensure(gx, {cin_, g.B, g.H, g.W});
        gx.zero();
        col2im_scatter(gcols.data(), g, gx.data());

        gemm<T>(W_.data(), gydot.data(), gcols.data(), rows, cout_, grid, true, false);
        ensure(gxdot, {cin_, g.B, g.H, g.W});
        gxdot.zero();
        col2im_scatter(gcols.data(), g, gxdot.data());

        if (ws.want_pgrads) add_pgrads(x, gy, gydot, &xdot, g, ws);
    }

    int64_t cin_, cout_, k_, stride_, pad_;
    Tensor<T> W_, b_;

private:
    void run_forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>& ws, int cols_slot,
                     bool bias = true) const {
        const ConvGeom g = geom(x);
        const int64_t grid = g.B * g.Hc * g.Wc;
        const int64_t rows = cin_ * k_ * k_;
        auto& cols = ws.lcache[static_cast<size_t>(this->id_)][cols_slot];
        ensure(cols, {rows, grid});
        im2col_gather(x.data(), g, cols.data());
        ensure(y, {cout_, g.B, g.Hc, g.Wc});
        gemm<T>(W_.data(), cols.data(), y.data(), cout_, rows, grid, false, false);
        if (bias) {
            for (int64_t c = 0; c < cout_; ++c) {
                auto row = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(y.data() + c * grid, grid);
                row.array() += b_[c];
            }
        }
    }

    // gW += gy·cols(x)^T (+ gydot·cols(xdot)^T when a tangent stream exists)
    void add_pgrads(const Tensor<T>& x, const Tensor<T>& gy, const Tensor<T>& gydot,
                    const Tensor<T>* xdot, const ConvGeom& g, Ws<T>& ws) const {
        const int64_t grid = g.B * g.Hc * g.Wc;
        const int64_t rows = cin_ * k_ * k_;
        auto& cols = ws.lcache[static_cast<size_t>(this->id_)][0];
        ensure(cols, {rows, grid});
        im2col_gather(x.data(), g, cols.data());
        Tensor<T> gW({cout_, rows});
        gemm<T>(gy.data(), cols.data(), gW.data(), cout_, grid, rows, false, true);
        if (xdot) {
            im2col_gather(xdot->data(), g, cols.data());
            gemm<T>(gydot.data(), cols.data(), gW.data(), cout_, grid, rows, false, true, T(1), T(1));
        }
        Tensor<T> gb({cout_});
        for (int64_t c = 0; c < cout_; ++c) {
            auto row = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(gy.data() + c * grid, grid);
            gb[c] = row.sum();
        }
        accumulate_pgrad(ws, this->id_, 0, gW);
        accumulate_pgrad(ws, this->id_, 1, gb);
    }
};

// Transposed convolution on (Cin, B, H, W) -> (Cout, B, Ho, Wo) with
// Ho = (H-1)*stride - 2*pad + K; W stored (Cin, Cout*K*K).
template <typename T>
class ConvTranspose2d : public Layer<T> {
public:
    ConvTranspose2d(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t pad,
                    std::string name)
        : Layer<T>(std::move(name)), cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad),
          W_({cin, cout * k * k}), b_({cout}) {}

    void init(Rng& rng, double stddev) {
        rng.fill_normal(W_, 0.0, stddev);
        b_.zero();
    }

    std::vector<ParamRef<T>> params() override {
        return {{this->name_ + ".W", &W_, true}, {this->name_ + ".b", &b_, true}};
    }

    ConvGeom geom(const Tensor<T>& x) const {
        const int64_t B = x.dim(1), Hi = x.dim(2), Wi = x.dim(3);
        GINV_CHECK(x.dim(0) == cin_, "deconv: channel mismatch in " + this->name_);
        const int64_t Ho = (Hi - 1) * stride_ - 2 * pad_ + k_;
        const int64_t Wo = (Wi - 1) * stride_ - 2 * pad_ + k_;
        // image = output grid = input for the shared gather/scatter kernels
        return {cout_, B, Ho, Wo, k_, stride_, pad_, Hi, Wi};
    }

    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>& ws, bool) const override {
        const ConvGeom g = geom(x);
        const int64_t grid = g.B * g.Hc * g.Wc;  // B * Hi * Wi
        const int64_t rows = cout_ * k_ * k_;
        auto& cols = ws.lcache[static_cast<size_t>(this->id_)][0];
        ensure(cols, {rows, grid});
        gemm<T>(W_.data(), x.data(), cols.data(), rows, cin_, grid, true, false);
        ensure(y, {cout_, g.B, g.H, g.W});
        y.zero();
        col2im_scatter(cols.data(), g, y.data());
        const int64_t HW = g.H * g.W;
        for (int64_t c = 0; c < cout_; ++c) {
            auto block = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(y.data() + c * g.B * HW, g.B * HW);
            block.array() += b_[c];
        }
    }

    void backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>& ws) const override {
        const ConvGeom g = geom(x);
        const int64_t grid = g.B * g.Hc * g.Wc;
        const int64_t rows = cout_ * k_ * k_;
        auto& gcols = ws.lcache[static_cast<size_t>(this->id_)][1];
        ensure(gcols, {rows, grid});
        im2col_gather(gy.data(), g, gcols.data());
        ensure(gx, {cin_, g.B, g.Hc, g.Wc});
        gemm<T>(W_.data(), gcols.data(), gx.data(), cin_, rows, grid, false, false);
        if (ws.want_pgrads) {
            Tensor<T> gW({cin_, rows});
            gemm<T>(x.data(), gcols.data(), gW.data(), cin_, grid, rows, false, true);
            Tensor<T> gb({cout_});
            const int64_t HW = g.H * g.W;
            for (int64_t c = 0; c < cout_; ++c) {
                auto block = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
                    gy.data() + c * g.B * HW, g.B * HW);
                gb[c] = block.sum();
            }
            accumulate_pgrad(ws, this->id_, 0, gW);
            accumulate_pgrad(ws, this->id_, 1, gb);
        }
    }

    int64_t cin_, cout_, k_, stride_, pad_;
    Tensor<T> W_, b_;
};

// Batch norm over (C, B, H, W): statistics per channel across B*H*W.
template <typename T>
class BatchNorm2d : public Layer<T> {
public:
    BatchNorm2d(int64_t c, std::string name)
        : Layer<T>(std::move(name)), c_(c), gamma_({c}), beta_({c}), rmean_({c}), rvar_({c}) {
        gamma_.fill(T(1));
        rvar_.fill(T(1));
    }

    std::vector<ParamRef<T>> params() override {
        return {{this->name_ + ".gamma", &gamma_, true}, {this->name_ + ".beta", &beta_, true}};
    }
    std::vector<ParamRef<T>> buffers() override {
        return {{this->name_ + ".running_mean", &rmean_, false},
                {this->name_ + ".running_var", &rvar_, false}};
    }

    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>& ws, bool train) const override {
        const int64_t n = x.dim(1) * x.dim(2) * x.dim(3);
        GINV_CHECK(x.dim(0) == c_, "batchnorm: channel mismatch in " + this->name_);
        ensure(y, x.shape());
        auto& stats = ws.lcache[static_cast<size_t>(this->id_)][0];  // (2, C): mean, invstd
        ensure(stats, {2, c_});
        for (int64_t c = 0; c < c_; ++c) {
            const T* xr = x.data() + c * n;
            T* yr = y.data() + c * n;
            T mean, var;
            if (train) {
                auto xm = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(xr, n);
                mean = xm.mean();
                var = (xm.array() - mean).square().sum() / static_cast<T>(n);
                // running stats keep the unbiased variance, torch-style
                const T unbiased = n > 1 ? var * static_cast<T>(n) / static_cast<T>(n - 1) : var;
                const_cast<BatchNorm2d*>(this)->rmean_[c] =
                    T(1 - kMomentum) * rmean_[c] + T(kMomentum) * mean;
                const_cast<BatchNorm2d*>(this)->rvar_[c] =
                    T(1 - kMomentum) * rvar_[c] + T(kMomentum) * unbiased;
            } else {
                mean = rmean_[c];
                var = rvar_[c];
            }
            const T invstd = T(1) / std::sqrt(var + T(kEps));
            stats[c] = mean;
            stats[c_ + c] = invstd;
            const T a = gamma_[c] * invstd;
            const T b = beta_[c] - a * mean;
            for (int64_t i = 0; i < n; ++i) yr[i] = a * xr[i] + b;
        }
        auto& mode = ws.lcache[static_cast<size_t>(this->id_)][1];
        ensure(mode, {1});
        mode[0] = train ? T(1) : T(0);
    }

    void backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>& ws) const override {
        const int64_t n = x.dim(1) * x.dim(2) * x.dim(3);
        ensure(gx, x.shape());
        const auto& stats = ws.lcache[static_cast<size_t>(this->id_)][0];
        const bool train = ws.lcache[static_cast<size_t>(this->id_)][1][0] != T(0);
        Tensor<T> ggamma({c_}), gbeta({c_});
        for (int64_t c = 0; c < c_; ++c) {
            const T* xr = x.data() + c * n;
            const T* gr = gy.data() + c * n;
            T* dr = gx.data() + c * n;
            const T mean = stats[c], invstd = stats[c_ + c];
            T sum_g = 0, sum_gxh = 0;
            for (int64_t i = 0; i < n; ++i) {
                sum_g += gr[i];
                sum_gxh += gr[i] * (xr[i] - mean) * invstd;
            }
            ggamma[c] = sum_gxh;
            gbeta[c] = sum_g;
            if (train) {
                const T inv_n = T(1) / static_cast<T>(n);
                const T a = gamma_[c] * invstd;
                for (int64_t i = 0; i < n; ++i) {
                    const T xh = (xr[i] - mean) * invstd;
                    dr[i] = a * (gr[i] - inv_n * sum_g - inv_n * xh * sum_gxh);
                }
            } else {
                const T a = gamma_[c] * invstd;
                for (int64_t i = 0; i < n; ++i) dr[i] = a * gr[i];
            }
        }
        if (ws.want_pgrads) {
            accumulate_pgrad(ws, this->id_, 0, ggamma);
            accumulate_pgrad(ws, this->id_, 1, gbeta);
        }
    }

    static constexpr double kMomentum = 0.1;
    static constexpr double kEps = 1e-5;
    int64_t c_;
    Tensor<T> gamma_, beta_, rmean_, rvar_;
};

template <typename T>
class ReLU : public Layer<T> {
public:
    explicit ReLU(std::string name) : Layer<T>(std::move(name)) {}
    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>&, bool) const override {
        ensure(y, x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    }
    void backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>&) const override {
        ensure(gx, x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
    }
};

template <typename T>
class LeakyReLU : public Layer<T> {
public:
    LeakyReLU(double slope, std::string name) : Layer<T>(std::move(name)), a_(T(slope)) {}
    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>&, bool) const override {
        ensure(y, x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : a_ * x[i];
    }
    void backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>&) const override {
        ensure(gx, x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] = x[i] > T(0) ? gy[i] : a_ * gy[i];
    }
    void forward_jvp(const Tensor<T>& x, const Tensor<T>& xdot, Tensor<T>& y, Tensor<T>& ydot,
                     Ws<T>&) const override {
        ensure(y, x.shape());
        ensure(ydot, x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) {
            const T m = x[i] > T(0) ? T(1) : a_;
            y[i] = m * x[i];
            ydot[i] = m * xdot[i];
        }
    }
    // The slope mask is piecewise constant, so the tangent stream feeds no
    // gradient back into the value stream (second derivative is 0 a.e.).
    void backward_jvp(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,
                      const Tensor<T>& gy, const Tensor<T>& gydot, Tensor<T>& gx, Tensor<T>& gxdot,
                      Ws<T>&) const override {
        ensure(gx, x.shape());
        ensure(gxdot, x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) {
            const T m = x[i] > T(0) ? T(1) : a_;
            gx[i] = m * gy[i];
            gxdot[i] = m * gydot[i];
        }
    }
    T a_;
};

template <typename T>
class Tanh : public Layer<T> {
public:
    explicit Tanh(std::string name) : Layer<T>(std::move(name)) {}
    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>&, bool) const override {
        ensure(y, x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
    }
    void backward(const Tensor<T>&, const Tensor<T>& y, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>&) const override {
        ensure(gx, y.shape());
        for (int64_t i = 0; i < y.numel(); ++i) gx[i] = gy[i] * (T(1) - y[i] * y[i]);
    }
};

// Max pooling (window = stride = 2) on (C, B, H, W).
template <typename T>
class MaxPool2d : public Layer<T> {
public:
    explicit MaxPool2d(std::string name) : Layer<T>(std::move(name)) {}

    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>& ws, bool) const override {
        const int64_t C = x.dim(0), B = x.dim(1), H = x.dim(2), W = x.dim(3);
        GINV_CHECK(H % 2 == 0 && W % 2 == 0, "maxpool: odd spatial size in " + this->name_);
        const int64_t Ho = H / 2, Wo = W / 2;
        ensure(y, {C, B, Ho, Wo});
        auto& arg = ws.icache[static_cast<size_t>(this->id_)];
        arg.assign(static_cast<size_t>(y.numel()), 0);
        int64_t o = 0;
        for (int64_t cb = 0; cb < C * B; ++cb) {
            const T* src = x.data() + cb * H * W;
            for (int64_t oy = 0; oy < Ho; ++oy) {
                for (int64_t ox = 0; ox < Wo; ++ox, ++o) {
                    int64_t base = (2 * oy) * W + 2 * ox;
                    int64_t best = base;
                    T v = src[base];
                    if (src[base + 1] > v) { v = src[base + 1]; best = base + 1; }
                    if (src[base + W] > v) { v = src[base + W]; best = base + W; }
                    if (src[base + W + 1] > v) { v = src[base + W + 1]; best = base + W + 1; }
                    y[o] = v;
                    arg[static_cast<size_t>(o)] = static_cast<int32_t>(cb * H * W + best);
                }
            }
        }
    }

    void backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>& ws) const override {
        ensure(gx, x.shape());
        gx.zero();
        const auto& arg = ws.icache[static_cast<size_t>(this->id_)];
        for (int64_t o = 0; o < y.numel(); ++o) gx[arg[static_cast<size_t>(o)]] += gy[o];
    }
};

// Inverted dropout; identity in eval mode. Mask randomness comes from ws.rng.
template <typename T>
class Dropout : public Layer<T> {
public:
    Dropout(double p, std::string name) : Layer<T>(std::move(name)), p_(p) {}

    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>& ws, bool train) const override {
        ensure(y, x.shape());
        auto& mask = ws.lcache[static_cast<size_t>(this->id_)][0];
        if (!train || p_ <= 0.0) {
            ensure(mask, {0});
            std::copy(x.data(), x.data() + x.numel(), y.data());
            return;
        }
        ensure(mask, x.shape());
        const T scale = T(1.0 / (1.0 - p_));
        for (int64_t i = 0; i < x.numel(); ++i) {
            mask[i] = ws.rng.uniform() >= p_ ? scale : T(0);
            y[i] = x[i] * mask[i];
        }
    }

    void backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>& ws) const override {
        ensure(gx, x.shape());
        const auto& mask = ws.lcache[static_cast<size_t>(this->id_)][0];
        if (mask.numel() == 0) {
            std::copy(gy.data(), gy.data() + gy.numel(), gx.data());
            return;
        }
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] = gy[i] * mask[i];
    }

    double p_;
};

// (B, C*H*W) -> (C, B, H, W)
template <typename T>
class ToCBHW : public Layer<T> {
public:
    ToCBHW(int64_t c, int64_t h, int64_t w, std::string name)
        : Layer<T>(std::move(name)), c_(c), h_(h), w_(w) {}

    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>&, bool) const override {
        const int64_t B = x.dim(0), HW = h_ * w_;
        GINV_CHECK(x.dim(1) == c_ * HW, "to_cbhw: width mismatch in " + this->name_);
        ensure(y, {c_, B, h_, w_});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < c_; ++c)
                std::copy(x.data() + (b * c_ + c) * HW, x.data() + (b * c_ + c + 1) * HW,
                          y.data() + (c * B + b) * HW);
    }
    void backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>&) const override {
        const int64_t B = x.dim(0), HW = h_ * w_;
        ensure(gx, x.shape());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < c_; ++c)
                std::copy(gy.data() + (c * B + b) * HW, gy.data() + (c * B + b + 1) * HW,
                          gx.data() + (b * c_ + c) * HW);
    }
    int64_t c_, h_, w_;
};

// (C, B, H, W) -> (B, C*H*W)
template <typename T>
class FromCBHW : public Layer<T> {
public:
    explicit FromCBHW(std::string name) : Layer<T>(std::move(name)) {}

    void forward(const Tensor<T>& x, Tensor<T>& y, Ws<T>&, bool) const override {
        copy_over(x, y);
    }
    void backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& gy, Tensor<T>& gx,
                  Ws<T>&) const override {
        const int64_t C = x.dim(0), B = x.dim(1), HW = x.dim(2) * x.dim(3);
        ensure(gx, x.shape());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                std::copy(gy.data() + (b * C + c) * HW, gy.data() + (b * C + c + 1) * HW,
                          gx.data() + (c * B + b) * HW);
    }
    void forward_jvp(const Tensor<T>& x, const Tensor<T>& xdot, Tensor<T>& y, Tensor<T>& ydot,
                     Ws<T>&) const override {
        copy_over(x, y);
        copy_over(xdot, ydot);
    }
    void backward_jvp(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,
                      const Tensor<T>& gy, const Tensor<T>& gydot, Tensor<T>& gx, Tensor<T>& gxdot,
                      Ws<T>& ws) const override {
        backward(x, x, gy, gx, ws);
        backward(x, x, gydot, gxdot, ws);
    }

private:
    static void copy_over(const Tensor<T>& x, Tensor<T>& y) {
        const int64_t C = x.dim(0), B = x.dim(1), HW = x.dim(2) * x.dim(3);
        ensure(y, {B, C * HW});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                std::copy(x.data() + (c * B + b) * HW, x.data() + (c * B + b + 1) * HW,
                          y.data() + (b * C + c) * HW);
    }
};

// Class-label embedding table (C classes -> dim); not on any Layer chain —
// models drive it directly with an integer label vector.
template <typename T>
class Embedding {
public:
    Embedding(int64_t classes, int64_t dim, std::string name)
        : name_(std::move(name)), classes_(classes), dim_(dim), W_({classes, dim}) {}

    void init(Rng& rng, double stddev) { rng.fill_normal(W_, 0.0, stddev); }

    std::vector<ParamRef<T>> params() {
        return {{name_ + ".W", &W_, true}};
    }

    void forward(const std::vector<int>& labels, Tensor<T>& y) const {
        const int64_t B = static_cast<int64_t>(labels.size());
        ensure(y, {B, dim_});
        for (int64_t b = 0; b < B; ++b) {
            const int c = labels[static_cast<size_t>(b)];
            GINV_CHECK(c >= 0 && c < classes_, "embedding: class out of range in " + name_);
            std::copy(W_.data() + c * dim_, W_.data() + (c + 1) * dim_, y.data() + b * dim_);
        }
    }

    // gy is (B, dim); accumulates into grad (classes, dim)
    void backward(const std::vector<int>& labels, const Tensor<T>& gy, Tensor<T>& grad) const {
        if (!grad.same_shape(W_)) {
            grad.resize({classes_, dim_});
        }
        for (size_t b = 0; b < labels.size(); ++b) {
            const int c = labels[b];
            for (int64_t k = 0; k < dim_; ++k)
                grad[c * dim_ + k] += gy[static_cast<int64_t>(b) * dim_ + k];
        }
    }

    std::string name_;
    int64_t classes_, dim_;
    Tensor<T> W_;
};

}  // namespace ginv::nn
