#pragma once

// Convolutional denoising autoencoder: encoder blocks of
// conv -> batch norm -> ReLU -> 2x2 max pool, decoder blocks of
// conv -> batch norm -> ReLU -> 2x nearest upsample, then a 1-channel conv
// head with a sigmoid.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcbae/ops.hpp"
#include "pcbae/rng.hpp"
#include "pcbae/tensor.hpp"

namespace pcbae {

struct ModelConfig {
  std::size_t input_height = 512;
  std::size_t input_width = 512;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t kernel = 3;
  std::uint64_t seed = 0;

  std::size_t blocks() const { return channels.size(); }

  void validate() const {
    if (channels.empty()) throw Error("ModelConfig: channel list must be nonempty");
    for (auto c : channels) {
      if (c == 0) throw Error("ModelConfig: channel counts must be >= 1");
    }
    if (kernel == 0 || kernel % 2 == 0) throw Error("ModelConfig: kernel must be odd");
    if (blocks() >= 31) throw Error("ModelConfig: too many blocks");
    const std::size_t div = std::size_t{1} << blocks();
    if (input_height == 0 || input_width == 0 || input_height % div != 0 ||
        input_width % div != 0) {
      throw Error("ModelConfig: input size " + std::to_string(input_height) + "x" +
                  std::to_string(input_width) + " is not divisible by 2^" +
                  std::to_string(blocks()) + " = " + std::to_string(div));
    }
  }

  std::size_t bottleneck_height() const { return input_height >> blocks(); }
  std::size_t bottleneck_width() const { return input_width >> blocks(); }

  /// Same architecture (everything but the seed).
  bool same_architecture(const ModelConfig& o) const {
    return input_height == o.input_height && input_width == o.input_width &&
           channels == o.channels && kernel == o.kernel;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ConvLayer {
  ConvSpec spec;
  Tensor weight;
  Tensor bias;
};

struct ConvBlock {
  ConvLayer conv;
  BatchNormState bn;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

/// Activations recorded during a training-mode forward pass.
struct ForwardTape {
  struct Block {
    Tensor input;
    Tensor bn_out;
    BatchNormCache bn_cache;
    Shape pre_resample_shape;
    std::vector<std::uint32_t> pool_argmax;
  };
  std::vector<Block> encoder;
  std::vector<Block> decoder;
  Tensor head_input;
  Tensor output;
};

class Autoencoder {
 public:
  /// Allocates and initializes all parameters: He-uniform conv weights,
  /// zero biases, identity batch norm. Deterministic in config.seed.
  explicit Autoencoder(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto& ch = config_.channels;
    const std::size_t L = ch.size();
    const std::size_t k = config_.kernel;
    for (std::size_t i = 0; i < L; ++i) {
      encoder_.push_back(make_block(i == 0 ? 1 : ch[i - 1], ch[i], k));
    }
    for (std::size_t j = 0; j < L; ++j) {
      const std::size_t in = j == 0 ? ch[L - 1] : ch[L - j];
      decoder_.push_back(make_block(in, ch[L - 1 - j], k));
    }
    head_ = ConvLayer{ConvSpec::same(ch[0], 1, k), Tensor(ConvSpec::same(ch[0], 1, k).weight_shape()),
                      Tensor({1})};
    reinitialize(config_.seed);
  }

  const ModelConfig& config() const { return config_; }

  /// Re-draw every parameter from `seed` and reset batch-norm statistics.
  void reinitialize(std::uint64_t seed) {
    config_.seed = seed;
    Rng rng(seed);
    auto init_conv = [&](ConvLayer& layer) {
      const auto fan_in = static_cast<float>(layer.spec.in_channels * layer.spec.kernel.h *
                                             layer.spec.kernel.w);
      const float bound = std::sqrt(6.0f / fan_in);
      for (float& w : layer.weight.values()) w = rng.uniform(-bound, bound);
      layer.bias.fill(0.0f);
    };
    for (auto* blocks : {&encoder_, &decoder_}) {
      for (auto& b : *blocks) {
        init_conv(b.conv);
        b.bn = BatchNormState::identity(b.conv.spec.out_channels);
      }
    }
    init_conv(head_);
  }

  Shape input_shape(std::size_t batch) const {
    return {batch, 1, config_.input_height, config_.input_width};
  }

  /// Inference pass with running batch-norm statistics. Read-only.
  Tensor infer(const Tensor& batch) const {
    check_input(batch);
    Tensor h = batch;
    for (const auto& b : encoder_) {
      h = relu(batchnorm_infer(conv2d_forward(h, b.conv.weight, b.conv.bias, b.conv.spec), b.bn));
      h = maxpool2d(h).output;
    }
    for (const auto& b : decoder_) {
      h = relu(batchnorm_infer(conv2d_forward(h, b.conv.weight, b.conv.bias, b.conv.spec), b.bn));
      h = upsample_nearest(h, 2);
    }
    return sigmoid(conv2d_forward(h, head_.weight, head_.bias, head_.spec));
  }

  /// Forward pass. In train mode batch statistics are used and the running
  /// statistics are updated; if `tape` is given it receives what backward()
  /// needs.
  Tensor forward(const Tensor& batch, Mode mode, ForwardTape* tape = nullptr) {
    if (mode == Mode::infer) return infer(batch);
    check_input(batch);
    if (tape) {
      tape->encoder.assign(encoder_.size(), {});
      tape->decoder.assign(decoder_.size(), {});
    }
    Tensor h = batch;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      auto& b = encoder_[i];
      BatchNormCache cache;
      Tensor conv = conv2d_forward(h, b.conv.weight, b.conv.bias, b.conv.spec);
      Tensor bn = batchnorm_forward(conv, b.bn, Mode::train, tape ? &cache : nullptr);
      Tensor act = relu(bn);
      PoolResult pooled = maxpool2d(act);
      if (tape) {
        auto& rec = tape->encoder[i];
        rec.input = std::move(h);
        rec.bn_out = std::move(bn);
        rec.bn_cache = std::move(cache);
        rec.pre_resample_shape = act.shape();
        rec.pool_argmax = std::move(pooled.argmax);
      }
      h = std::move(pooled.output);
    }
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
      auto& b = decoder_[j];
      BatchNormCache cache;
      Tensor conv = conv2d_forward(h, b.conv.weight, b.conv.bias, b.conv.spec);
      Tensor bn = batchnorm_forward(conv, b.bn, Mode::train, tape ? &cache : nullptr);
      Tensor act = relu(bn);
      if (tape) {
        auto& rec = tape->decoder[j];
        rec.input = std::move(h);
        rec.bn_out = std::move(bn);
        rec.bn_cache = std::move(cache);
        rec.pre_resample_shape = act.shape();
      }
      h = upsample_nearest(act, 2);
    }
    Tensor out = sigmoid(conv2d_forward(h, head_.weight, head_.bias, head_.spec));
    if (tape) {
      tape->head_input = std::move(h);
      tape->output = out;
    }
    return out;
  }

  /// Gradients for every learnable parameter, in parameters() order, given
  /// the loss gradient with respect to the head's pre-sigmoid logits.
  std::vector<Tensor> backward(const ForwardTape& tape, const Tensor& grad_logits) const {
    require_shape(grad_logits, tape.output.shape(), "Autoencoder::backward");
    std::vector<Tensor> enc_grads(encoder_.size() * 4), dec_grads(decoder_.size() * 4);
    ConvGrads head = conv2d_backward(grad_logits, tape.head_input, head_.weight, head_.spec);
    Tensor g = std::move(head.grad_x);

    for (std::size_t j = decoder_.size(); j-- > 0;) {
      const auto& b = decoder_[j];
      const auto& rec = tape.decoder[j];
      g = upsample_nearest_backward(g, 2);
      g = relu_backward(g, rec.bn_out);
      BatchNormGrads bn = batchnorm_backward(g, rec.bn_cache, b.bn);
      ConvGrads cg = conv2d_backward(bn.grad_x, rec.input, b.conv.weight, b.conv.spec);
      dec_grads[4 * j + 0] = std::move(cg.grad_w);
      dec_grads[4 * j + 1] = std::move(cg.grad_b);
      dec_grads[4 * j + 2] = std::move(bn.grad_gamma);
      dec_grads[4 * j + 3] = std::move(bn.grad_beta);
      g = std::move(cg.grad_x);
    }
    for (std::size_t i = encoder_.size(); i-- > 0;) {
      const auto& b = encoder_[i];
      const auto& rec = tape.encoder[i];
      g = maxpool2d_backward(g, rec.pool_argmax, rec.pre_resample_shape);
      g = relu_backward(g, rec.bn_out);
      BatchNormGrads bn = batchnorm_backward(g, rec.bn_cache, b.bn);
      // The input gradient of the first block is never used.
      ConvGrads cg = conv2d_backward(bn.grad_x, rec.input, b.conv.weight, b.conv.spec);
      enc_grads[4 * i + 0] = std::move(cg.grad_w);
      enc_grads[4 * i + 1] = std::move(cg.grad_b);
      enc_grads[4 * i + 2] = std::move(bn.grad_gamma);
      enc_grads[4 * i + 3] = std::move(bn.grad_beta);
      g = std::move(cg.grad_x);
    }

    std::vector<Tensor> grads;
    grads.reserve(enc_grads.size() + dec_grads.size() + 2);
    for (auto& t : enc_grads) grads.push_back(std::move(t));
    for (auto& t : dec_grads) grads.push_back(std::move(t));
    grads.push_back(std::move(head.grad_w));
    grads.push_back(std::move(head.grad_b));
    return grads;
  }

  /// Learnable parameters: per block conv weight, conv bias, bn gamma,
  /// bn beta (encoder then decoder), then the head weight and bias.
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> p;
    for (auto* blocks : {&encoder_, &decoder_}) {
      for (auto& b : *blocks) {
        p.insert(p.end(), {&b.conv.weight, &b.conv.bias, &b.bn.gamma, &b.bn.beta});
      }
    }
    p.insert(p.end(), {&head_.weight, &head_.bias});
    return p;
  }

  /// Every persisted tensor (parameters and batch-norm running statistics)
  /// in a fixed order.
  std::vector<NamedTensor> named_tensors() {
    std::vector<NamedTensor> out;
    auto add_block = [&](const std::string& prefix, ConvBlock& b) {
      out.push_back({prefix + ".conv.weight", &b.conv.weight});
      out.push_back({prefix + ".conv.bias", &b.conv.bias});
      out.push_back({prefix + ".bn.gamma", &b.bn.gamma});
      out.push_back({prefix + ".bn.beta", &b.bn.beta});
      out.push_back({prefix + ".bn.running_mean", &b.bn.running_mean});
      out.push_back({prefix + ".bn.running_var", &b.bn.running_var});
    };
    for (std::size_t i = 0; i < encoder_.size(); ++i) add_block("encoder." + std::to_string(i), encoder_[i]);
    for (std::size_t j = 0; j < decoder_.size(); ++j) add_block("decoder." + std::to_string(j), decoder_[j]);
    out.push_back({"head.conv.weight", &head_.weight});
    out.push_back({"head.conv.bias", &head_.bias});
    return out;
  }

  std::vector<ConstNamedTensor> named_tensors() const {
    std::vector<ConstNamedTensor> out;
    for (auto& nt : const_cast<Autoencoder*>(this)->named_tensors()) out.push_back({nt.name, nt.tensor});
    return out;
  }

  const std::vector<ConvBlock>& encoder() const { return encoder_; }
  const std::vector<ConvBlock>& decoder() const { return decoder_; }
  const ConvLayer& head() const { return head_; }

 private:
  static ConvBlock make_block(std::size_t in_c, std::size_t out_c, std::size_t k) {
    const ConvSpec spec = ConvSpec::same(in_c, out_c, k);
    return ConvBlock{ConvLayer{spec, Tensor(spec.weight_shape()), Tensor({out_c})},
                     BatchNormState::identity(out_c)};
  }

  void check_input(const Tensor& batch) const {
    require_rank(batch, 4, "Autoencoder input");
    if (batch.dim(1) != 1 || batch.dim(2) != config_.input_height ||
        batch.dim(3) != config_.input_width) {
      throw ShapeError("Autoencoder input: expected N x 1 x " +
                       std::to_string(config_.input_height) + " x " +
                       std::to_string(config_.input_width) + ", got " + shape_str(batch.shape()));
    }
  }

  ModelConfig config_;
  std::vector<ConvBlock> encoder_;
  std::vector<ConvBlock> decoder_;
  ConvLayer head_;
};

/// Copy every tensor of `pretrained` into `model`. Architectures must match.
inline void transfer_weights(Autoencoder& model, const Autoencoder& pretrained) {
  if (!model.config().same_architecture(pretrained.config())) {
    throw ShapeError("transfer_init: pretrained model architecture differs from target model");
  }
  auto dst = model.named_tensors();
  auto src = pretrained.named_tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].tensor = *src[i].tensor;
}

}  // namespace pcbae
