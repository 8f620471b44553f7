#pragma once

// Desk-scale convolutional encoder, decoder and patch discriminator.
//
// All tensors are NHWC. The encoder maps (N, H, W, C) images in [-1, 1] to
// (N, H/f, W/f, d) latents; the decoder maps (N, h, w, d [+ n_z]) back to
// images through a tanh head. After expand_input_zero_init() the decoder's
// conv_in also reads n_z noise channels concatenated after the latent.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gqtok/autodiff.hpp"
#include "gqtok/quantizer.hpp"
#include "gqtok/rng.hpp"
#include "gqtok/tensor.hpp"

namespace gqtok {

struct BackboneSpec {
  std::size_t image_channels = 3;
  std::size_t base_channels = 16;
  std::vector<std::size_t> channel_mult{1, 2};
  std::size_t n_res_blocks = 1;
  std::size_t downsample = 4;  // f, a power of two
  std::size_t latent_channels = 8;

  void validate() const;
  std::size_t levels() const;
  /// Channels after `level` downsamplings.
  std::size_t channels_at(std::size_t level) const;
};

using EncoderSpec = BackboneSpec;

struct DecoderSpec {
  BackboneSpec backbone;
  std::size_t noise_channels = 0;  // n_z used once expanded
  bool generative_mode = false;
};

struct DiscriminatorSpec {
  std::size_t image_channels = 3;
  std::size_t base_channels = 16;
  std::size_t n_layers = 3;  // stride-2 convolutions, last one emits 1 logit channel
};

/// Owns named parameters; layers refer to them by index.
class Module {
 public:
  std::vector<ad::Parameter>& parameters() noexcept { return params_; }
  const std::vector<ad::Parameter>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept;
  ad::Parameter& parameter(std::string_view name);
  const ad::Parameter& parameter(std::string_view name) const;
  void zero_grad();

 protected:
  struct ConvLayer {
    std::size_t weight = 0;
    std::size_t bias = 0;
    ad::ConvOptions options;
    bool transpose = false;
  };

  std::size_t add_parameter(std::string name, Tensor value);
  ConvLayer add_conv(const std::string& name, std::size_t k, std::size_t cin, std::size_t cout,
                     ad::ConvOptions options, bool transpose, Rng& rng);
  /// Trainable binding needs a mutable module; frozen binding records a constant.
  ad::Var bind(ad::Tape& tape, std::size_t index, bool trainable) const;
  ad::Var apply(ad::Tape& tape, const ConvLayer& layer, ad::Var x, bool trainable) const;

  std::vector<ad::Parameter> params_;
};

class Encoder : public Module {
 public:
  Encoder(EncoderSpec spec, Rng& rng);

  const EncoderSpec& spec() const noexcept { return spec_; }

  ad::Var forward(ad::Tape& tape, ad::Var images) { return run(tape, images, true); }
  ad::Var forward_frozen(ad::Tape& tape, ad::Var images) const { return run(tape, images, false); }

  /// Single image (H, W, C) -> latent (h, w, d). Throws ShapeError when H or
  /// W is not divisible by f.
  Tensor encode(const Tensor& image) const;

 private:
  ad::Var run(ad::Tape& tape, ad::Var images, bool trainable) const;

  EncoderSpec spec_;
  ConvLayer conv_in_;
  std::vector<ConvLayer> down_;
  std::vector<std::pair<ConvLayer, ConvLayer>> mid_;
  ConvLayer conv_out_;
};

class Decoder : public Module {
 public:
  Decoder(DecoderSpec spec, Rng& rng);

  const DecoderSpec& spec() const noexcept { return spec_; }
  bool generative() const noexcept { return spec_.generative_mode; }
  std::size_t input_channels() const noexcept;

  /// `noise` is required in generative mode and rejected otherwise.
  ad::Var forward(ad::Tape& tape, ad::Var quantized, std::optional<ad::Var> noise = std::nullopt) {
    return run(tape, quantized, noise, true);
  }
  ad::Var forward_frozen(ad::Tape& tape, ad::Var quantized, std::optional<ad::Var> noise = std::nullopt) const {
    return run(tape, quantized, noise, false);
  }

  /// Single latent (h, w, d) [+ noise (h, w, n_z)] -> image (H, W, C).
  Tensor decode(const Tensor& quantized, const Tensor* noise = nullptr) const;

  /// Widens conv_in to d + n_z input channels. Existing weights are kept bit
  /// for bit, new ones are exactly zero. Throws std::logic_error when the
  /// decoder is already generative or n_z is 0.
  void expand_input_zero_init();

 private:
  ad::Var run(ad::Tape& tape, ad::Var quantized, std::optional<ad::Var> noise, bool trainable) const;

  DecoderSpec spec_;
  ConvLayer conv_in_;
  std::vector<std::pair<ConvLayer, ConvLayer>> mid_;
  std::vector<ConvLayer> up_;
  ConvLayer conv_out_;
};

class Discriminator : public Module {
 public:
  Discriminator(DiscriminatorSpec spec, Rng& rng);

  const DiscriminatorSpec& spec() const noexcept { return spec_; }

  /// (N, H, W, C) -> patch logits (N, H', W', 1).
  ad::Var forward(ad::Tape& tape, ad::Var images) { return run(tape, images, true); }
  ad::Var forward_frozen(ad::Tape& tape, ad::Var images) const { return run(tape, images, false); }

  /// Single image (H, W, C) -> logits (H', W', 1).
  Tensor discriminate(const Tensor& image) const;

 private:
  ad::Var run(ad::Tape& tape, ad::Var images, bool trainable) const;

  DiscriminatorSpec spec_;
  std::vector<ConvLayer> layers_;
};

/// Standard-normal noise for the generative decoder, reproducible per seed.
struct NoisePrior {
  std::size_t channels = 0;
  std::uint64_t seed = 0;

  /// (n, h, w, channels) draws.
  Tensor sample(std::size_t n, std::size_t h, std::size_t w) const;
};

struct TokenizerSpec {
  EncoderSpec encoder;
  DecoderSpec decoder;
  QuantConfig quant;
  double tau = 1.0;

  void validate() const;
};

/// Encoder, quantizer and decoder wired together.
class Tokenizer {
 public:
  Tokenizer(TokenizerSpec spec, Rng& rng);

  const TokenizerSpec& spec() const noexcept { return spec_; }
  Encoder& encoder() noexcept { return encoder_; }
  const Encoder& encoder() const noexcept { return encoder_; }
  Decoder& decoder() noexcept { return decoder_; }
  const Decoder& decoder() const noexcept { return decoder_; }

  void expand_decoder() {
    decoder_.expand_input_zero_init();
    spec_.decoder = decoder_.spec();
  }

  struct Forward {
    ad::Var latent;     // (N, h, w, d), after pre-activation
    ad::Var grouped;    // (N, h, w, g, d')
    Tensor signs;       // (N, h, w, g, d')
    ad::Var quantized;  // straight-through node, (N, h, w, d)
    ad::Var recon;      // (N, H, W, C)
    std::vector<TokenGrid> tokens;
  };

  /// Full differentiable pass; parameters of both networks are trainable.
  Forward forward(ad::Tape& tape, ad::Var images, std::optional<ad::Var> noise = std::nullopt);

  /// Single image -> token grid.
  TokenGrid tokenize(const Tensor& image) const;
  /// Token grid -> image; `noise` required in generative mode.
  Tensor reconstruct(const TokenGrid& tokens, const Tensor* noise = nullptr) const;

 private:
  TokenizerSpec spec_;
  Encoder encoder_;
  Decoder decoder_;
};

/// Adds a leading batch axis of extent 1.
Tensor with_batch_axis(const Tensor& t);
/// Drops a leading batch axis of extent 1.
Tensor without_batch_axis(const Tensor& t);

}  // namespace gqtok
