#include "gqtok/model.hpp"

#include <cmath>
#include <stdexcept>

namespace gqtok {

// ---------------------------------------------------------------------------
// Specs

void BackboneSpec::validate() const {
  if (image_channels < 1) throw std::invalid_argument("model: image_channels must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("model: base_channels must be >= 1");
  if (channel_mult.empty()) throw std::invalid_argument("model: channel_mult must not be empty");
  for (auto m : channel_mult) {
    if (m < 1) throw std::invalid_argument("model: channel_mult entries must be >= 1");
  }
  if (latent_channels < 1) throw std::invalid_argument("model: latent_channels must be >= 1");
  if (downsample < 2 || (downsample & (downsample - 1)) != 0) {
    throw std::invalid_argument("model: downsample factor must be a power of two >= 2, got " + std::to_string(downsample));
  }
}

std::size_t BackboneSpec::levels() const {
  std::size_t l = 0;
  for (std::size_t f = downsample; f > 1; f >>= 1) ++l;
  return l;
}

std::size_t BackboneSpec::channels_at(std::size_t level) const {
  const std::size_t i = std::min(level, channel_mult.size() - 1);
  return base_channels * channel_mult[i];
}

void TokenizerSpec::validate() const {
  encoder.validate();
  decoder.backbone.validate();
  quant.validate();
  if (encoder.latent_channels != quant.channels()) {
    throw std::invalid_argument("model: latent_channels " + std::to_string(encoder.latent_channels) +
                                " != g*d' = " + std::to_string(quant.channels()));
  }
  if (decoder.backbone.latent_channels != encoder.latent_channels ||
      decoder.backbone.image_channels != encoder.image_channels ||
      decoder.backbone.downsample != encoder.downsample) {
    throw std::invalid_argument("model: encoder and decoder specs disagree");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("model: tau must be positive");
}

// ---------------------------------------------------------------------------
// Module

std::size_t Module::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

ad::Parameter& Module::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

const ad::Parameter& Module::parameter(std::string_view name) const {
  return const_cast<Module*>(this)->parameter(name);
}

void Module::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t Module::add_parameter(std::string name, Tensor value) {
  params_.push_back(ad::Parameter{std::move(name), std::move(value), Tensor()});
  params_.back().zero_grad();
  return params_.size() - 1;
}

Module::ConvLayer Module::add_conv(const std::string& name, std::size_t k, std::size_t cin, std::size_t cout,
                                   ad::ConvOptions options, bool transpose, Rng& rng) {
  // LeCun-normal on the effective fan-in; a stride-s transposed conv sees
  // k*k/s^2 taps per output pixel on average.
  double fan_in = static_cast<double>(k * k * cin);
  if (transpose) fan_in /= static_cast<double>(options.stride * options.stride);
  ConvLayer layer;
  layer.weight = add_parameter(name + ".weight", rng.normal_tensor({k, k, cin, cout}, 1.0 / std::sqrt(fan_in)));
  layer.bias = add_parameter(name + ".bias", Tensor(Shape{cout}));
  layer.options = options;
  layer.transpose = transpose;
  return layer;
}

ad::Var Module::bind(ad::Tape& tape, std::size_t index, bool trainable) const {
  if (trainable) return tape.parameter(const_cast<ad::Parameter&>(params_[index]));
  return tape.constant(params_[index].value);
}

ad::Var Module::apply(ad::Tape& tape, const ConvLayer& layer, ad::Var x, bool trainable) const {
  ad::Var w = bind(tape, layer.weight, trainable);
  ad::Var b = bind(tape, layer.bias, trainable);
  return layer.transpose ? ad::conv2d_transpose(x, w, b, layer.options) : ad::conv2d(x, w, b, layer.options);
}

namespace {
constexpr ad::ConvOptions kSame3{1, 1};
constexpr ad::ConvOptions kDown3{2, 1};
constexpr ad::ConvOptions kUp4{2, 1};

void require_images(const char* who, const Shape& s, std::size_t channels) {
  if (s.size() != 4 || s[3] != channels) {
    throw ShapeError(std::string(who) + ": expected (N, H, W, " + std::to_string(channels) + "), got " + shape_string(s));
  }
}
}  // namespace

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(EncoderSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t levels = spec_.levels();
  conv_in_ = add_conv("encoder.conv_in", 3, spec_.image_channels, spec_.channels_at(0), kSame3, false, rng);
  for (std::size_t l = 0; l < levels; ++l) {
    down_.push_back(add_conv("encoder.down" + std::to_string(l), 3, spec_.channels_at(l), spec_.channels_at(l + 1),
                             kDown3, false, rng));
  }
  const std::size_t ch = spec_.channels_at(levels);
  for (std::size_t r = 0; r < spec_.n_res_blocks; ++r) {
    const std::string base = "encoder.mid" + std::to_string(r);
    ConvLayer a = add_conv(base + ".conv1", 3, ch, ch, kSame3, false, rng);
    ConvLayer b = add_conv(base + ".conv2", 3, ch, ch, kSame3, false, rng);
    mid_.emplace_back(a, b);
  }
  conv_out_ = add_conv("encoder.conv_out", 3, ch, spec_.latent_channels, kSame3, false, rng);
}

ad::Var Encoder::run(ad::Tape& tape, ad::Var images, bool trainable) const {
  const Shape& s = images.shape();
  require_images("encode", s, spec_.image_channels);
  if (s[1] % spec_.downsample != 0 || s[2] % spec_.downsample != 0) {
    throw ShapeError("encode: image " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                     " not divisible by downsample factor " + std::to_string(spec_.downsample));
  }
  ad::Var h = apply(tape, conv_in_, images, trainable);
  for (const auto& layer : down_) h = apply(tape, layer, ad::swish(h), trainable);
  for (const auto& [a, b] : mid_) {
    ad::Var r = apply(tape, a, ad::swish(h), trainable);
    r = apply(tape, b, ad::swish(r), trainable);
    h = ad::add(h, r);
  }
  return apply(tape, conv_out_, ad::swish(h), trainable);
}

Tensor Encoder::encode(const Tensor& image) const {
  ad::Tape tape;
  return without_batch_axis(forward_frozen(tape, tape.constant(with_batch_axis(image))).value());
}

// ---------------------------------------------------------------------------
// Decoder

Decoder::Decoder(DecoderSpec spec, Rng& rng) : spec_(std::move(spec)) {
  const BackboneSpec& bb = spec_.backbone;
  bb.validate();
  const std::size_t levels = bb.levels();
  conv_in_ = add_conv("decoder.conv_in", 3, input_channels(), bb.channels_at(levels), kSame3, false, rng);
  for (std::size_t r = 0; r < bb.n_res_blocks; ++r) {
    const std::string base = "decoder.mid" + std::to_string(r);
    ConvLayer a = add_conv(base + ".conv1", 3, bb.channels_at(levels), bb.channels_at(levels), kSame3, false, rng);
    ConvLayer b = add_conv(base + ".conv2", 3, bb.channels_at(levels), bb.channels_at(levels), kSame3, false, rng);
    mid_.emplace_back(a, b);
  }
  for (std::size_t l = levels; l-- > 0;) {
    up_.push_back(add_conv("decoder.up" + std::to_string(l), 4, bb.channels_at(l + 1), bb.channels_at(l), kUp4, true, rng));
  }
  conv_out_ = add_conv("decoder.conv_out", 3, bb.channels_at(0), bb.image_channels, kSame3, false, rng);
}

std::size_t Decoder::input_channels() const noexcept {
  return spec_.backbone.latent_channels + (spec_.generative_mode ? spec_.noise_channels : 0);
}

ad::Var Decoder::run(ad::Tape& tape, ad::Var quantized, std::optional<ad::Var> noise, bool trainable) const {
  const Shape& s = quantized.shape();
  require_images("decode", s, spec_.backbone.latent_channels);
  ad::Var x = quantized;
  if (spec_.generative_mode) {
    if (!noise) throw std::invalid_argument("decode: generative decoder requires a noise input");
    const Shape& ns = noise->shape();
    if (ns.size() != 4 || ns[0] != s[0] || ns[1] != s[1] || ns[2] != s[2] || ns[3] != spec_.noise_channels) {
      throw ShapeError::mismatch("decode(noise)", s, ns);
    }
    x = ad::concat({quantized, *noise});
  } else if (noise) {
    throw std::invalid_argument("decode: noise given to a non-generative decoder");
  }
  ad::Var h = apply(tape, conv_in_, x, trainable);
  for (const auto& [a, b] : mid_) {
    ad::Var r = apply(tape, a, ad::swish(h), trainable);
    r = apply(tape, b, ad::swish(r), trainable);
    h = ad::add(h, r);
  }
  for (const auto& layer : up_) h = apply(tape, layer, ad::swish(h), trainable);
  return ad::tanh(apply(tape, conv_out_, ad::swish(h), trainable));
}

Tensor Decoder::decode(const Tensor& quantized, const Tensor* noise) const {
  ad::Tape tape;
  std::optional<ad::Var> z;
  if (noise != nullptr) z = tape.constant(with_batch_axis(*noise));
  return without_batch_axis(forward_frozen(tape, tape.constant(with_batch_axis(quantized)), z).value());
}

void Decoder::expand_input_zero_init() {
  if (spec_.generative_mode) throw std::logic_error("expand_input_zero_init: decoder is already expanded");
  if (spec_.noise_channels == 0) throw std::logic_error("expand_input_zero_init: noise_channels is 0");
  ad::Parameter& w = params_[conv_in_.weight];
  const Shape& old_shape = w.value.shape();
  const std::size_t kh = old_shape[0], kw = old_shape[1], cin = old_shape[2], cout = old_shape[3];
  const std::size_t new_cin = cin + spec_.noise_channels;
  Tensor widened(Shape{kh, kw, new_cin, cout});
  for (std::size_t tap = 0; tap < kh * kw; ++tap)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t o = 0; o < cout; ++o) widened[(tap * new_cin + c) * cout + o] = w.value[(tap * cin + c) * cout + o];
  w.value = std::move(widened);
  w.zero_grad();
  spec_.generative_mode = true;
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(DiscriminatorSpec spec, Rng& rng) : spec_(spec) {
  if (spec_.n_layers < 1) throw std::invalid_argument("discriminator: n_layers must be >= 1");
  if (spec_.image_channels < 1 || spec_.base_channels < 1) throw std::invalid_argument("discriminator: bad channels");
  std::size_t cin = spec_.image_channels;
  for (std::size_t l = 0; l < spec_.n_layers; ++l) {
    const bool last = l + 1 == spec_.n_layers;
    const std::size_t cout = last ? 1 : spec_.base_channels << l;
    layers_.push_back(add_conv("disc.conv" + std::to_string(l), 3, cin, cout, kDown3, false, rng));
    cin = cout;
  }
}

ad::Var Discriminator::run(ad::Tape& tape, ad::Var images, bool trainable) const {
  require_images("discriminate", images.shape(), spec_.image_channels);
  ad::Var h = images;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = apply(tape, layers_[l], h, trainable);
    if (l + 1 < layers_.size()) h = ad::leaky_relu(h, 0.2);
  }
  return h;
}

Tensor Discriminator::discriminate(const Tensor& image) const {
  ad::Tape tape;
  return without_batch_axis(forward_frozen(tape, tape.constant(with_batch_axis(image))).value());
}

// ---------------------------------------------------------------------------
// Noise, tokenizer

Tensor NoisePrior::sample(std::size_t n, std::size_t h, std::size_t w) const {
  Rng rng(seed);
  return rng.normal_tensor({n, h, w, channels});
}

Tokenizer::Tokenizer(TokenizerSpec spec, Rng& rng)
    : spec_((spec.validate(), std::move(spec))), encoder_(spec_.encoder, rng), decoder_(spec_.decoder, rng) {}

Tokenizer::Forward Tokenizer::forward(ad::Tape& tape, ad::Var images, std::optional<ad::Var> noise) {
  Forward f;
  f.latent = pre_activate(encoder_.forward(tape, images), spec_.quant);
  const Shape& ls = f.latent.shape();
  f.grouped = ad::reshape(f.latent, {ls[0], ls[1], ls[2], spec_.quant.groups, spec_.quant.group_channels});
  f.signs = sign_tensor(f.grouped.value(), spec_.quant.tie);
  f.tokens = tokens_from_signs(f.signs);
  f.quantized = ad::reshape(straight_through(f.grouped, f.signs), ls);
  f.recon = decoder_.forward(tape, f.quantized, noise);
  return f;
}

TokenGrid Tokenizer::tokenize(const Tensor& image) const {
  ad::Tape tape;
  ad::Var latent = pre_activate(encoder_.forward_frozen(tape, tape.constant(with_batch_axis(image))), spec_.quant);
  GroupedLatent grouped = group_reshape(without_batch_axis(latent.value()), spec_.quant);
  return sign_quantize(grouped, spec_.quant.tie).tokens;
}

Tensor Tokenizer::reconstruct(const TokenGrid& tokens, const Tensor* noise) const {
  if (tokens.groups != spec_.quant.groups || tokens.group_channels != spec_.quant.group_channels) {
    throw std::invalid_argument("reconstruct: token grid (g=" + std::to_string(tokens.groups) + ", d'=" +
                                std::to_string(tokens.group_channels) + ") does not match the model");
  }
  return decoder_.decode(signs_from_tokens(tokens), noise);
}

Tensor with_batch_axis(const Tensor& t) {
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return t.reshaped(std::move(s));
}

Tensor without_batch_axis(const Tensor& t) {
  if (t.rank() == 0 || t.dim(0) != 1) throw ShapeError("expected a leading batch axis of 1, got " + shape_string(t.shape()));
  Shape s(t.shape().begin() + 1, t.shape().end());
  return t.reshaped(std::move(s));
}

}  // namespace gqtok
