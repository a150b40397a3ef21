#pragma once

#include <optional>
#include <string>
#include <vector>

#include "asc/common.hpp"
#include "asc/tensor.hpp"

namespace asc {

// Forward-pass mode. kFrozen behaves like inference (running batch-norm
// statistics, no dropout) but keeps the caches needed for a backward pass;
// it is what gradient checking runs under.
enum class Mode { kTrain, kInfer, kFrozen };

struct ParamRef {
    std::string name;
    Tensor* tensor;
};

// 2-d convolution, stride 1, "same" zero padding, channels-last.
// Weight layout [kh][kw][cin][cout], bias [cout].
struct Conv2d {
    int kh, kw, cin, cout;
    Tensor w, b;

    Conv2d(int kh_, int kw_, int cin_, int cout_);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, bool keep_cache);
    Tensor backward(const Tensor& dy);

    Tensor x_cache_;
};

struct BatchNorm2d {
    int channels;
    Tensor gamma, beta;
    Tensor running_mean, running_var;
    bool stats_ready = false;
    double momentum = 0.9;
    double eps = 1e-5;

    explicit BatchNorm2d(int channels_);
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& dy);

    Tensor xhat_cache_;
    std::vector<double> inv_std_;
    Mode fwd_mode_ = Mode::kInfer;
    bool has_cache_ = false;
};

// Squeeze-excitation: global average squeeze, two-layer bottleneck with the
// given reduction ratio, sigmoid gates rescaling the channels.
struct SEBlock {
    int channels, ratio, hidden;
    Tensor w1, b1;  // channels x hidden
    Tensor w2, b2;  // hidden x channels

    SEBlock(int channels_, int ratio_);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, bool keep_cache);
    Tensor backward(const Tensor& dy);

    Tensor x_cache_, z_cache_, u_cache_, h_cache_, s_cache_;
};

// Residual conv block with the SE module applied after the residual add:
// conv-BN-ReLU-conv-BN, plus a 1x1-conv shortcut when the channel count
// changes, then ReLU and SE.
struct SEResidualBlock {
    Conv2d conv1, conv2;
    BatchNorm2d bn1, bn2;
    std::optional<Conv2d> shortcut;
    SEBlock se;
    bool with_bn = true;

    SEResidualBlock(int in_channels, int out_channels, int kernel, int se_ratio, bool with_bn_);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& dy);

    std::vector<uint8_t> mask1_, mask2_;
};

// Max pooling over time with pool size (1, pool_w); the trailing remainder
// of the width is discarded.
struct MaxPoolTime {
    int pool_w;

    explicit MaxPoolTime(int pool_w_) : pool_w(pool_w_) {}
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    std::vector<int> in_shape_;
    std::vector<int32_t> argmax_;
};

// Inverted dropout: in train mode each element is zeroed with the given
// probability and survivors are scaled by 1/(1-rate).
struct Dropout {
    double rate;

    explicit Dropout(double rate_) : rate(rate_) {}
    Tensor forward(const Tensor& x, Mode mode, Rng* rng);
    Tensor backward(const Tensor& dy);

    std::vector<double> mask_;
};

struct GlobalAvgPool {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    std::vector<int> in_shape_;
};

// Fully connected layer; weight layout [in][out].
struct Dense {
    int in_dim, out_dim;
    Tensor w, b;

    Dense(int in_dim_, int out_dim_);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, bool keep_cache);
    Tensor backward(const Tensor& dy);

    Tensor x_cache_;
};

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& logits);

// Mean over the batch of -alpha * (1 - p_t)^gamma * ln(p_t) with p_t clamped
// to [1e-12, 1].
double focal_loss(const Tensor& probs, const std::vector<int>& targets, double alpha = 0.25,
                  double gamma = 2.0);

// Gradient of the mean focal loss with respect to the logits that produced
// `probs` (the softmax Jacobian is folded in analytically).
Tensor focal_loss_grad_logits(const Tensor& probs, const std::vector<int>& targets,
                              double alpha = 0.25, double gamma = 2.0);

struct ModelConfig {
    int in_channels = 1;
    int channels = 40;
    int kernel = 3;
    int se_ratio = 2;
    int n_classes = 10;
    int pool_w = 10;
    double dropout_rate = 0.3;
    bool with_batchnorm = true;
    bool operator==(const ModelConfig&) const = default;
};

// The full classifier: two SE residual blocks, each followed by (1, pool_w)
// max pooling and dropout, then global average pooling and a dense softmax
// classifier.
struct Model {
    ModelConfig cfg;
    SEResidualBlock block1, block2;
    MaxPoolTime pool1, pool2;
    Dropout drop1, drop2;
    GlobalAvgPool gap;
    Dense fc;

    explicit Model(const ModelConfig& cfg_);
    void init_params(Rng& rng);

    // x: B x H x W x in_channels; returns class probabilities B x n_classes.
    Tensor forward(const Tensor& x, Mode mode, Rng* rng = nullptr);
    // dlogits: gradient w.r.t. the pre-softmax logits; returns dx.
    Tensor backward(const Tensor& dlogits);

    std::vector<ParamRef> parameters();      // trainable tensors
    std::vector<ParamRef> state_tensors();   // trainable + batch-norm running stats
    void zero_grad();
    void alloc_grads();
    int64_t trainable_param_count();

    Mode last_mode_ = Mode::kInfer;
    bool has_forward_cache_ = false;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-7;
};

struct AdamState {
    int64_t t = 0;
    std::vector<std::vector<double>> m, v;
};

// Bias-corrected Adam update over the given parameters, reading each
// tensor's grad buffer.
void adam_step(const std::vector<ParamRef>& params, AdamState& state, double lr,
               const AdamConfig& cfg = {});

}  // namespace asc
