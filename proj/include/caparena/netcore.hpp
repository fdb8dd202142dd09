#ifndef CAPARENA_NETCORE_HPP
#define CAPARENA_NETCORE_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "caparena/dataset.hpp"
#include "caparena/rng.hpp"
#include "caparena/tensor.hpp"

namespace caparena::net {

// Named view of one learnable tensor and its gradient buffer.
struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

// Named view of one non-learnable state buffer (e.g. running statistics).
struct StateRef {
    std::string name;
    Tensor* value;
};

// One differentiable stage. forward caches whatever backward needs, so a
// backward call is only valid for the most recent forward. backward
// overwrites the layer's param gradients (it never accumulates across calls)
// and returns the gradient with respect to the layer input.
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    virtual Tensor backward(const Tensor& dy) = 0;
    virtual std::vector<ParamRef> params() { return {}; }
    virtual std::vector<StateRef> state() { return {}; }
    virtual void init_params(Rng&) {}
    virtual std::string kind() const = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;
};

// 2-D convolution with zero padding. weight [outC, inC, k, k], bias [outC].
// Output height = floor((H + 2p - k) / s) + 1, same for width.
class Conv2D : public Layer {
public:
    Conv2D(int in_channels, int out_channels, int kernel, int stride, int padding);

    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<ParamRef> params() override;
    void init_params(Rng& rng) override;
    std::string kind() const override { return "conv"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2D>(*this); }

    Tensor weight, bias, dweight, dbias;

private:
    int in_c_, out_c_, k_, s_, p_;
    Tensor x_;
};

// Per-channel batch normalization over (N, H, W) with affine scale/shift.
// Training mode normalizes by batch statistics (biased variance) and updates
// the running buffers as running = momentum * running + (1 - momentum) * batch;
// eval mode normalizes by the frozen running buffers.
class BatchNorm2D : public Layer {
public:
    explicit BatchNorm2D(int channels, double momentum = 0.9, double eps = 1e-5);

    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<ParamRef> params() override;
    std::vector<StateRef> state() override;
    void init_params(Rng& rng) override;
    std::string kind() const override { return "bn"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2D>(*this); }

    Tensor gamma, beta, dgamma, dbeta;
    Tensor running_mean, running_var;

private:
    int c_;
    double momentum_, eps_;
    bool trained_mode_ = false;
    Tensor xhat_;
    std::vector<double> inv_std_;
};

class ReLU : public Layer {
public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::string kind() const override { return "relu"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }

private:
    std::vector<char> mask_;
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

// Max pooling without padding; ties resolve to the first element in scan
// order so the backward routing is deterministic.
class MaxPool2D : public Layer {
public:
    MaxPool2D(int kernel, int stride);

    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::string kind() const override { return "pool"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2D>(*this); }

private:
    int k_, s_;
    int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
    std::vector<std::size_t> argmax_;
    int out_h_ = 0, out_w_ = 0;
};

// [N, C, H, W] -> [N, C*H*W, 1, 1]. Pure reshape.
class Flatten : public Layer {
public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::string kind() const override { return "flatten"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }

private:
    int in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

// Fully connected layer on [N, F, 1, 1] tensors. weight [out, in], bias [out].
class Dense : public Layer {
public:
    Dense(int in_features, int out_features);

    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<ParamRef> params() override;
    void init_params(Rng& rng) override;
    std::string kind() const override { return "dense"; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

    Tensor weight, bias, dweight, dbias;

private:
    int in_f_, out_f_;
    Tensor x_;
};

// Numerically stable softmax of one logit row (subtracts the max first).
std::vector<double> softmax(const std::vector<double>& z);

// Jacobian-vector product of softmax: given p = softmax(z) and dL/dp,
// returns dL/dz.
std::vector<double> softmax_backward(const std::vector<double>& p, const std::vector<double>& dp);

// Architecture presets:
//   "desk"    4 conv blocks + Dense(128) trunk, sized for fast CPU training
//   "compact" 2 conv blocks + Dense(64) trunk, sized for attack-loop tests
//   "deep"    9 conv layers in 3 strided blocks + 3 dense trunk stages
struct ModelConfig {
    std::string preset = "desk";
    int input_height = 24;
    int input_width = 72;
    int input_channels = 1;
};

// Multi-head classifier: a shared convolutional trunk and one 36-way dense
// head per captcha position. forward yields probabilities [N, 4, 36, 1];
// backward takes the loss gradient at the head logits (pre-softmax) and
// returns the loss gradient at the input image batch.
class Model {
public:
    Model() = default;
    Model(const ModelConfig& cfg, std::uint64_t seed);
    Model(const Model& other);
    Model& operator=(const Model& other);
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    const ModelConfig& config() const { return cfg_; }

    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& dlogits);

    std::vector<ParamRef> params();
    // Every persistent tensor (learnable params plus state buffers), in a
    // stable order keyed by unique names. This is the checkpoint payload.
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    std::size_t param_count();

private:
    ModelConfig cfg_;
    std::vector<std::unique_ptr<Layer>> trunk_;
    std::vector<std::unique_ptr<Layer>> heads_;
};

// Adam with bias-corrected first and second moments. Slot buffers are keyed
// by parameter name, so one optimizer instance must only ever drive one model.
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
    void step(const std::vector<ParamRef>& params);

private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> slots_;
};

// Batch assembly. idx selects samples; images must share one shape.
Tensor to_tensor(const data::Image& img);
Tensor batch_tensor(const std::vector<data::Sample>& samples, const std::vector<std::size_t>& idx);
std::vector<data::CaptchaLabel> batch_labels(const std::vector<data::Sample>& samples,
                                             const std::vector<std::size_t>& idx);

// Mean over the batch of the summed per-position cross entropies:
//   (1/N) sum_n sum_h -log(max(p[n,h,label], 1e-12))
double cross_entropy(const Tensor& probs, const std::vector<data::CaptchaLabel>& labels);

// Gradient of cross_entropy at the head logits: (p - onehot) / N.
Tensor ce_logit_grad(const Tensor& probs, const std::vector<data::CaptchaLabel>& labels);

// Loss of a model that outputs the uniform distribution on every head.
double uniform_guess_loss();

// Highest-probability class per head for sample n, first index on ties.
std::array<int, data::kLabelLength> argmax_heads(const Tensor& probs, int n);

data::CaptchaLabel predict_label(Model& model, const data::Image& img);

struct TrainConfig {
    int epochs = 10;
    int batch_size = 32;
    double lr = 1e-3;
    std::uint64_t seed = 1;
};

struct TrainStats {
    std::vector<double> epoch_losses;
};

// Minibatch training with a per-epoch deterministic shuffle. on_epoch, when
// given, observes (epoch index, mean epoch loss) after each epoch.
TrainStats train(Model& model, const std::vector<data::Sample>& samples, const TrainConfig& cfg,
                 const std::function<void(int, double)>& on_epoch = nullptr);

struct EvalResult {
    double per_char_accuracy = 0.0;  // mean over all (sample, position) pairs
    double captcha_accuracy = 0.0;   // all four positions correct
    double mean_loss = 0.0;
    std::array<double, data::kLabelLength> head_accuracy{};
};

EvalResult evaluate(Model& model, const std::vector<data::Sample>& samples, int batch_size = 64);

// Versioned binary checkpoint of config plus every named tensor.
void save_model(Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace caparena::net

#endif
