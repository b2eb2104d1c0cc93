#pragma once

// Dense variational autoencoder.
//   encoder: 784 -> h1 (ReLU) -> h2 (ReLU) -> {mu, log sigma^2} (d each)
//   decoder: d -> h2 (ReLU) -> h1 (ReLU) -> 784 (sigmoid)
// Training minimises Bernoulli reconstruction cross-entropy plus
// KL(q(z|x) || N(0, I)), summed over pixels / latent dims and averaged over
// the batch.

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>

#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/nn.hpp"
#include "ofal/random.hpp"

namespace ofal {

struct VaeShape {
  int latent_dim = 10;
  int hidden1 = 512;
  int hidden2 = 256;
};

template <typename S>
struct Encoding {
  Mat<S> mean;     // B x d
  Mat<S> log_var;  // B x d
};

template <typename S>
struct VaeGradients {
  std::array<Mat<S>, 14> params;
};

struct VaeLoss {
  double reconstruction = 0;  // per sample
  double kl = 0;              // per sample
  double total() const { return reconstruction + kl; }
};

template <typename S>
class Vae {
 public:
  static constexpr int kParamCount = 14;

  Vae() : Vae(VaeShape{}, 0) {}

  Vae(const VaeShape& shape, std::uint64_t init_seed) : shape_(shape) {
    require(shape.latent_dim > 0 && shape.hidden1 > 0 && shape.hidden2 > 0, ErrorCode::InvalidConfig,
            "VAE widths must be positive");
    enc1_ = DenseLayer<S>(kPixels, shape.hidden1);
    enc2_ = DenseLayer<S>(shape.hidden1, shape.hidden2);
    mean_ = DenseLayer<S>(shape.hidden2, shape.latent_dim);
    log_var_ = DenseLayer<S>(shape.hidden2, shape.latent_dim);
    dec1_ = DenseLayer<S>(shape.latent_dim, shape.hidden2);
    dec2_ = DenseLayer<S>(shape.hidden2, shape.hidden1);
    dec3_ = DenseLayer<S>(shape.hidden1, kPixels);
    Rng rng(init_seed);
    for (auto* layer : {&enc1_, &enc2_, &mean_, &log_var_, &dec1_, &dec2_, &dec3_}) layer->init_he(rng);
    // Start near the prior: small posterior variances are learned, not assumed.
    log_var_.w *= S(0.1);
    mean_.w *= S(0.1);
  }

  const VaeShape& shape() const { return shape_; }
  int latent_dim() const { return shape_.latent_dim; }
  int encoder_output_dim() const { return 2 * shape_.latent_dim; }

  std::array<Mat<S>*, kParamCount> parameters() {
    return {&enc1_.w, &enc1_.b, &enc2_.w, &enc2_.b, &mean_.w, &mean_.b, &log_var_.w,
            &log_var_.b, &dec1_.w, &dec1_.b, &dec2_.w, &dec2_.b, &dec3_.w, &dec3_.b};
  }
  std::array<const Mat<S>*, kParamCount> parameters() const {
    return {&enc1_.w, &enc1_.b, &enc2_.w, &enc2_.b, &mean_.w, &mean_.b, &log_var_.w,
            &log_var_.b, &dec1_.w, &dec1_.b, &dec2_.w, &dec2_.b, &dec3_.w, &dec3_.b};
  }

  template <typename T>
  Vae<T> cast() const {
    Vae<T> out;
    out.shape_ = shape_;
    out.enc1_ = enc1_.template cast<T>();
    out.enc2_ = enc2_.template cast<T>();
    out.mean_ = mean_.template cast<T>();
    out.log_var_ = log_var_.template cast<T>();
    out.dec1_ = dec1_.template cast<T>();
    out.dec2_ = dec2_.template cast<T>();
    out.dec3_ = dec3_.template cast<T>();
    return out;
  }

  Encoding<S> encode_full(const Mat<S>& x) const {
    require(x.rows() > 0 && x.cols() == kPixels, ErrorCode::ShapeError, "encoder expects B x 784");
    Mat<S> h1 = enc1_.forward(x);
    relu_inplace(h1);
    Mat<S> h2 = enc2_.forward(h1);
    relu_inplace(h2);
    return {mean_.forward(h2), log_var_.forward(h2)};
  }

  // Posterior mean; deterministic.
  Mat<S> encode(const Mat<S>& x) const { return encode_full(x).mean; }

  struct DecodeCache {
    Mat<S> z;
    Mat<S> h1;  // post-ReLU, hidden2 wide
    Mat<S> h2;  // post-ReLU, hidden1 wide
    Mat<S> logits;
  };

  Mat<S> decode(const Mat<S>& z) const {
    DecodeCache cache;
    return decode_cached(z, cache);
  }

  Mat<S> decode_cached(const Mat<S>& z, DecodeCache& c) const {
    require(z.rows() > 0 && z.cols() == shape_.latent_dim, ErrorCode::ShapeError,
            "latent point has dimension " + std::to_string(z.cols()) + ", expected " +
                std::to_string(shape_.latent_dim));
    c.z = z;
    c.h1 = dec1_.forward(z);
    relu_inplace(c.h1);
    c.h2 = dec2_.forward(c.h1);
    relu_inplace(c.h2);
    c.logits = dec3_.forward(c.h2);
    return c.logits.unaryExpr([](S v) { return sigmoid(v); });
  }

  // d(objective)/dz given d(objective)/d(decoded pixels).
  Mat<S> decode_backward(const DecodeCache& c, const Mat<S>& d_pixels, VaeGradients<S>* grads = nullptr) const {
    const Mat<S> out = c.logits.unaryExpr([](S v) { return sigmoid(v); });
    Mat<S> d_logits = d_pixels.cwiseProduct(out.cwiseProduct((S(1) - out.array()).matrix()));
    return decode_backward_logits(c, d_logits, grads);
  }

  // Negative ELBO of a batch using reparameterised samples drawn from
  // noise_seed; gradients are overwritten.
  VaeLoss training_gradients(const Mat<S>& x, std::uint64_t noise_seed, VaeGradients<S>& grads) const {
    require(x.rows() > 0 && x.cols() == kPixels, ErrorCode::ShapeError, "encoder expects B x 784");
    const auto params = parameters();
    for (int i = 0; i < kParamCount; ++i) grads.params[i] = Mat<S>::Zero(params[i]->rows(), params[i]->cols());

    const Eigen::Index batch = x.rows();
    const int d = shape_.latent_dim;
    Mat<S> h1 = enc1_.forward(x);
    relu_inplace(h1);
    Mat<S> h2 = enc2_.forward(h1);
    relu_inplace(h2);
    const Mat<S> mu = mean_.forward(h2);
    const Mat<S> lv = log_var_.forward(h2);

    Mat<S> eps(batch, d);
    Rng rng(noise_seed);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = static_cast<S>(rng.normal());
    const Mat<S> sigma = (S(0.5) * lv.array()).exp().matrix();
    const Mat<S> z = mu + sigma.cwiseProduct(eps);

    DecodeCache cache;
    decode_cached(z, cache);

    // BCE on logits: softplus(l) - x * l; gradient sigmoid(l) - x.
    const S inv_b = S(1) / static_cast<S>(batch);
    double rec = 0;
    Mat<S> d_logits(batch, kPixels);
    for (Eigen::Index i = 0; i < cache.logits.size(); ++i) {
      const S l = cache.logits.data()[i];
      const S t = x.data()[i];
      const S softplus = l > S(0) ? l + std::log1p(std::exp(-l)) : std::log1p(std::exp(l));
      rec += static_cast<double>(softplus - t * l);
      d_logits.data()[i] = (sigmoid(l) - t) * inv_b;
    }
    double kl = 0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      const S m = mu.data()[i];
      const S v = lv.data()[i];
      kl += 0.5 * static_cast<double>(std::exp(v) + m * m - S(1) - v);
    }

    Mat<S> d_z = decode_backward_logits(cache, d_logits, &grads);
    // KL gradients: d/dmu = mu, d/dlv = 0.5 (exp(lv) - 1); reparameterisation
    // adds d_z and d_z * eps * 0.5 * sigma.
    Mat<S> d_mu = d_z + mu * inv_b;
    Mat<S> d_lv = d_z.cwiseProduct(eps).cwiseProduct(sigma) * S(0.5) +
                  ((lv.array().exp() - S(1)) * S(0.5) * inv_b).matrix();
    Mat<S> d_h2 = mean_.backward(h2, d_mu, &grads.params[4], &grads.params[5]);
    d_h2 += log_var_.backward(h2, d_lv, &grads.params[6], &grads.params[7]);
    relu_backward_inplace(d_h2, h2);
    Mat<S> d_h1 = enc2_.backward(h1, d_h2, &grads.params[2], &grads.params[3]);
    relu_backward_inplace(d_h1, h1);
    enc1_.backward(x, d_h1, &grads.params[0], &grads.params[1], false);

    return {rec / static_cast<double>(batch), kl / static_cast<double>(batch)};
  }

 private:
  template <typename T>
  friend class Vae;

  Mat<S> decode_backward_logits(const DecodeCache& c, const Mat<S>& d_logits, VaeGradients<S>* grads) const {
    Mat<S> d_h2 = dec3_.backward(c.h2, d_logits, grads ? &grads->params[12] : nullptr,
                                 grads ? &grads->params[13] : nullptr);
    relu_backward_inplace(d_h2, c.h2);
    Mat<S> d_h1 = dec2_.backward(c.h1, d_h2, grads ? &grads->params[10] : nullptr,
                                 grads ? &grads->params[11] : nullptr);
    relu_backward_inplace(d_h1, c.h1);
    return dec1_.backward(c.z, d_h1, grads ? &grads->params[8] : nullptr, grads ? &grads->params[9] : nullptr);
  }

  VaeShape shape_;
  DenseLayer<S> enc1_, enc2_, mean_, log_var_;
  DenseLayer<S> dec1_, dec2_, dec3_;
};

}  // namespace ofal
