#pragma once

// Dropout CNN: conv3x3 -> ReLU -> conv3x3 -> ReLU -> maxpool2 -> dropout ->
// dense -> ReLU -> dropout -> dense(10) -> softmax.
//
// Activations are row-major with one sample per row. Convolution maps are
// stored HWC: row (b * H * W + y * W + x), column channel. Both dropout sites
// sit after the convolutions, so the convolutional features of an input are
// shared by every Monte-Carlo draw and only the dense head is re-evaluated.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/nn.hpp"
#include "ofal/random.hpp"

namespace ofal {

struct ClassifierShape {
  int conv1_channels = 32;
  int conv2_channels = 64;
  int hidden = 128;
  double dropout_pool = 0.25;   // after max-pooling
  double dropout_dense = 0.5;   // after the hidden dense layer
};

inline constexpr int kConv1Side = kImageSide - 2;  // 26
inline constexpr int kConv2Side = kConv1Side - 2;  // 24
inline constexpr int kPoolSide = kConv2Side / 2;   // 12

// One dropout draw: a keep-scale row per dropout site, shared by all rows of
// the batch it is applied to.
template <typename S>
struct DropoutMasks {
  Mat<S> pool;   // 1 x feature_dim
  Mat<S> dense;  // 1 x hidden
};

template <typename S>
struct ClassifierGradients {
  std::array<Mat<S>, 8> params;
};

template <typename S>
class Classifier {
 public:
  static constexpr int kParamCount = 8;

  Classifier() : Classifier(ClassifierShape{}, 0) {}

  Classifier(const ClassifierShape& shape, std::uint64_t init_seed) : shape_(shape) {
    require(shape.conv1_channels > 0 && shape.conv2_channels > 0 && shape.hidden > 0, ErrorCode::InvalidConfig,
            "classifier widths must be positive");
    conv1_ = DenseLayer<S>(9, shape.conv1_channels);
    conv2_ = DenseLayer<S>(9 * shape.conv1_channels, shape.conv2_channels);
    fc1_ = DenseLayer<S>(feature_dim(), shape.hidden);
    fc2_ = DenseLayer<S>(shape.hidden, kClassCount);
    Rng rng(init_seed);
    conv1_.init_he(rng);
    conv2_.init_he(rng);
    fc1_.init_he(rng);
    fc2_.init_he(rng);
  }

  const ClassifierShape& shape() const { return shape_; }
  int feature_dim() const { return kPoolSide * kPoolSide * shape_.conv2_channels; }

  std::array<Mat<S>*, kParamCount> parameters() {
    return {&conv1_.w, &conv1_.b, &conv2_.w, &conv2_.b, &fc1_.w, &fc1_.b, &fc2_.w, &fc2_.b};
  }
  std::array<const Mat<S>*, kParamCount> parameters() const {
    return {&conv1_.w, &conv1_.b, &conv2_.w, &conv2_.b, &fc1_.w, &fc1_.b, &fc2_.w, &fc2_.b};
  }

  template <typename T>
  Classifier<T> cast() const {
    Classifier<T> out;
    out.shape_ = shape_;
    out.conv1_ = conv1_.template cast<T>();
    out.conv2_ = conv2_.template cast<T>();
    out.fc1_ = fc1_.template cast<T>();
    out.fc2_ = fc2_.template cast<T>();
    return out;
  }

  void validate_dropout() const {
    for (double r : {shape_.dropout_pool, shape_.dropout_dense}) {
      require(r > 0.0 && r < 1.0, ErrorCode::InvalidDropoutRate,
              "dropout rate " + std::to_string(r) + " outside (0, 1)");
    }
  }

  DropoutMasks<S> draw_masks(std::uint64_t mask_seed) const {
    validate_dropout();
    return {dropout_mask<S>(derive_seed(mask_seed, "dropout-pool"), shape_.dropout_pool, 1, feature_dim()),
            dropout_mask<S>(derive_seed(mask_seed, "dropout-dense"), shape_.dropout_dense, 1, shape_.hidden)};
  }

  // ---- forward ---------------------------------------------------------

  struct FeatureCache {
    Mat<S> input;    // B x 784
    Mat<S> act1;     // B*676 x C1, post-ReLU
    Mat<S> act2;     // B*576 x C2, post-ReLU
    std::vector<int> argmax;  // B*F flat indices into act2
    Mat<S> pooled;   // B x F
  };

  // Deterministic convolutional trunk. Input is B x 784.
  Mat<S> features(const Mat<S>& x) const {
    FeatureCache cache;
    forward_features(x, cache, false);
    return std::move(cache.pooled);
  }

  // Dense head from trunk features. masks == nullptr disables dropout
  // (inverted dropout makes that the expectation of the stochastic head).
  Mat<S> head_logits(const Mat<S>& feats, const DropoutMasks<S>* masks) const {
    Mat<S> in = feats;
    if (masks) in.array().rowwise() *= masks->pool.row(0).array();
    Mat<S> h = fc1_.forward(in);
    relu_inplace(h);
    if (masks) h.array().rowwise() *= masks->dense.row(0).array();
    return fc2_.forward(h);
  }

  Mat<S> predict_deterministic(const Mat<S>& x) const {
    check_batch(x);
    return softmax_rows(head_logits(features(x), nullptr));
  }

  Mat<S> predict_stochastic(const Mat<S>& x, std::uint64_t mask_seed) const {
    check_batch(x);
    const auto masks = draw_masks(mask_seed);
    return softmax_rows(head_logits(features(x), &masks));
  }

  // ---- gradients -------------------------------------------------------

  // Gradient of a scalar objective of the logits of T dropout draws of one
  // input with respect to that input. `objective(logits T x C)` returns the
  // value and d(value)/d(logits). Returns (value, d/dx as 1 x 784).
  template <typename Objective>
  std::pair<S, Mat<S>> input_gradient(const Mat<S>& x, std::span<const DropoutMasks<S>> masks,
                                      Objective&& objective) const {
    require(x.rows() == 1 && x.cols() == kPixels, ErrorCode::ShapeError, "input_gradient expects one 784-pixel row");
    require(!masks.empty(), ErrorCode::InvalidConfig, "at least one dropout draw required");
    FeatureCache cache;
    forward_features(x, cache, true);

    const auto t = static_cast<Eigen::Index>(masks.size());
    Mat<S> mask_pool(t, feature_dim());
    Mat<S> mask_dense(t, shape_.hidden);
    for (Eigen::Index i = 0; i < t; ++i) {
      mask_pool.row(i) = masks[static_cast<std::size_t>(i)].pool.row(0);
      mask_dense.row(i) = masks[static_cast<std::size_t>(i)].dense.row(0);
    }
    Mat<S> in = mask_pool.array().rowwise() * cache.pooled.row(0).array();
    Mat<S> h = fc1_.forward(in);
    relu_inplace(h);
    Mat<S> hm = h.cwiseProduct(mask_dense);
    const Mat<S> logits = fc2_.forward(hm);

    auto [value, d_logits] = objective(logits);
    Mat<S> d_hm = fc2_.backward(hm, d_logits, nullptr, nullptr);
    Mat<S> d_h = d_hm.cwiseProduct(mask_dense);
    relu_backward_inplace(d_h, h);
    Mat<S> d_in = fc1_.backward(in, d_h, nullptr, nullptr);
    Mat<S> d_pooled = d_in.cwiseProduct(mask_pool).colwise().sum();

    Mat<S> d_x;
    backward_features(cache, d_pooled, nullptr, &d_x);
    return {value, std::move(d_x)};
  }

  // Mean cross-entropy of a training batch with per-sample dropout masks
  // drawn from mask_seed; gradients are overwritten.
  S training_gradients(const Mat<S>& x, std::span<const int> labels, std::uint64_t mask_seed,
                       ClassifierGradients<S>& grads) const {
    check_batch(x);
    require(static_cast<Eigen::Index>(labels.size()) == x.rows(), ErrorCode::ShapeError, "label count mismatch");
    validate_dropout();
    const auto params = parameters();
    for (int i = 0; i < kParamCount; ++i) grads.params[i] = Mat<S>::Zero(params[i]->rows(), params[i]->cols());

    FeatureCache cache;
    forward_features(x, cache, true);
    const Mat<S> mask_pool =
        dropout_mask<S>(derive_seed(mask_seed, "train-pool"), shape_.dropout_pool, x.rows(), feature_dim());
    const Mat<S> mask_dense =
        dropout_mask<S>(derive_seed(mask_seed, "train-dense"), shape_.dropout_dense, x.rows(), shape_.hidden);

    Mat<S> in = cache.pooled.cwiseProduct(mask_pool);
    Mat<S> h = fc1_.forward(in);
    relu_inplace(h);
    Mat<S> hm = h.cwiseProduct(mask_dense);
    const Mat<S> logits = fc2_.forward(hm);
    const Mat<S> logp = log_softmax_rows(logits);

    const S inv_b = S(1) / static_cast<S>(x.rows());
    S loss = 0;
    Mat<S> d_logits = logp.array().exp();
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const auto y = labels[static_cast<std::size_t>(r)];
      loss -= logp(r, y);
      d_logits(r, y) -= S(1);
    }
    d_logits *= inv_b;

    Mat<S> d_hm = fc2_.backward(hm, d_logits, &grads.params[6], &grads.params[7]);
    Mat<S> d_h = d_hm.cwiseProduct(mask_dense);
    relu_backward_inplace(d_h, h);
    Mat<S> d_in = fc1_.backward(in, d_h, &grads.params[4], &grads.params[5]);
    Mat<S> d_pooled = d_in.cwiseProduct(mask_pool);
    backward_features(cache, d_pooled, &grads, nullptr);
    return loss * inv_b;
  }

 private:
  template <typename T>
  friend class Classifier;

  void check_batch(const Mat<S>& x) const {
    require(x.rows() > 0, ErrorCode::ShapeError, "empty batch");
    require(x.cols() == kPixels, ErrorCode::ShapeError,
            "expected 784 columns, got " + std::to_string(x.cols()));
  }

  // im2col for one 28x28 image: 676 x 9.
  static void im2col_input(const S* img, Mat<S>& col) {
    col.resize(kConv1Side * kConv1Side, 9);
    for (int oy = 0; oy < kConv1Side; ++oy) {
      for (int ox = 0; ox < kConv1Side; ++ox) {
        S* dst = col.row(oy * kConv1Side + ox).data();
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) dst[ky * 3 + kx] = img[(oy + ky) * kImageSide + ox + kx];
        }
      }
    }
  }

  // im2col for one 26x26xC1 map (rows of act1 starting at `first`): 576 x 9*C1.
  void im2col_conv1(const Mat<S>& act1, Eigen::Index first, Mat<S>& col) const {
    const int c1 = shape_.conv1_channels;
    col.resize(kConv2Side * kConv2Side, 9 * c1);
    for (int oy = 0; oy < kConv2Side; ++oy) {
      for (int ox = 0; ox < kConv2Side; ++ox) {
        S* dst = col.row(oy * kConv2Side + ox).data();
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const S* src = act1.row(first + (oy + ky) * kConv1Side + ox + kx).data();
            std::copy_n(src, c1, dst + (ky * 3 + kx) * c1);
          }
        }
      }
    }
  }

  // The trunk runs one sample at a time: the per-sample im2col buffers stay
  // in cache, which is markedly faster than one batched GEMM on this layer.
  void forward_features(const Mat<S>& x, FeatureCache& c, bool keep) const {
    check_batch(x);
    const Eigen::Index batch = x.rows();
    const int c2 = shape_.conv2_channels;
    constexpr int p1 = kConv1Side * kConv1Side;
    constexpr int p2 = kConv2Side * kConv2Side;
    const int f = feature_dim();

    c.pooled.resize(batch, f);
    if (keep) {
      c.input = x;
      c.act1.resize(batch * p1, shape_.conv1_channels);
      c.act2.resize(batch * p2, c2);
      c.argmax.assign(static_cast<std::size_t>(batch * f), 0);
    }
    Mat<S> col1, col2, a1, a2;
    for (Eigen::Index b = 0; b < batch; ++b) {
      im2col_input(x.row(b).data(), col1);
      a1.noalias() = col1 * conv1_.w;
      a1.rowwise() += conv1_.b.row(0);
      relu_inplace(a1);
      if (keep) c.act1.middleRows(b * p1, p1) = a1;
      im2col_conv1(a1, 0, col2);
      a2.noalias() = col2 * conv2_.w;
      a2.rowwise() += conv2_.b.row(0);
      relu_inplace(a2);
      if (keep) c.act2.middleRows(b * p2, p2) = a2;

      for (int py = 0; py < kPoolSide; ++py) {
        for (int px = 0; px < kPoolSide; ++px) {
          const int r00 = (2 * py) * kConv2Side + 2 * px;
          const int rows[4] = {r00, r00 + 1, r00 + kConv2Side, r00 + kConv2Side + 1};
          S* out = c.pooled.row(b).data() + (py * kPoolSide + px) * c2;
          for (int ch = 0; ch < c2; ++ch) {
            int best = rows[0];
            for (int k = 1; k < 4; ++k) {
              if (a2(rows[k], ch) > a2(best, ch)) best = rows[k];
            }
            out[ch] = a2(best, ch);
            if (keep) {
              c.argmax[static_cast<std::size_t>(b * f + (py * kPoolSide + px) * c2 + ch)] =
                  static_cast<int>((b * p2 + best) * c2 + ch);
            }
          }
        }
      }
    }
  }

  void backward_features(const FeatureCache& c, const Mat<S>& d_pooled, ClassifierGradients<S>* grads,
                         Mat<S>* d_x) const {
    const Eigen::Index batch = d_pooled.rows();
    const int c1 = shape_.conv1_channels;
    const int c2 = shape_.conv2_channels;
    const int f = feature_dim();
    constexpr int p1 = kConv1Side * kConv1Side;
    constexpr int p2 = kConv2Side * kConv2Side;

    if (d_x) *d_x = Mat<S>::Zero(batch, kPixels);
    Mat<S> d_a2(p2, c2), d_a1(p1, c1), col1, col2, d_col2, d_col1, img(1, kPixels);
    for (Eigen::Index b = 0; b < batch; ++b) {
      d_a2.setZero();
      for (int k = 0; k < f; ++k) {
        d_a2.data()[c.argmax[static_cast<std::size_t>(b * f + k)] - b * p2 * c2] += d_pooled(b, k);
      }
      d_a2.array() *= (c.act2.middleRows(b * p2, p2).array() > S(0)).template cast<S>();

      im2col_conv1(c.act1, b * p1, col2);
      if (grads) {
        grads->params[2].noalias() += col2.transpose() * d_a2;
        grads->params[3] += d_a2.colwise().sum();
      }
      d_col2.noalias() = d_a2 * conv2_.w.transpose();

      d_a1.setZero();
      for (int oy = 0; oy < kConv2Side; ++oy) {
        for (int ox = 0; ox < kConv2Side; ++ox) {
          const S* src = d_col2.row(oy * kConv2Side + ox).data();
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              S* dst = d_a1.row((oy + ky) * kConv1Side + ox + kx).data();
              const S* s = src + (ky * 3 + kx) * c1;
              for (int ch = 0; ch < c1; ++ch) dst[ch] += s[ch];
            }
          }
        }
      }
      d_a1.array() *= (c.act1.middleRows(b * p1, p1).array() > S(0)).template cast<S>();

      if (grads) {
        im2col_input(c.input.row(b).data(), col1);
        grads->params[0].noalias() += col1.transpose() * d_a1;
        grads->params[1] += d_a1.colwise().sum();
      }
      if (d_x) {
        d_col1.noalias() = d_a1 * conv1_.w.transpose();
        S* dx = d_x->row(b).data();
        for (int oy = 0; oy < kConv1Side; ++oy) {
          for (int ox = 0; ox < kConv1Side; ++ox) {
            const S* src = d_col1.row(oy * kConv1Side + ox).data();
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) dx[(oy + ky) * kImageSide + ox + kx] += src[ky * 3 + kx];
            }
          }
        }
      }
    }
  }

  ClassifierShape shape_;
  DenseLayer<S> conv1_;
  DenseLayer<S> conv2_;
  DenseLayer<S> fc1_;
  DenseLayer<S> fc2_;
};

// Packs samples into a B x 784 batch.
template <typename S, typename Range, typename Proj>
Mat<S> to_batch(const Range& items, Proj&& image_of) {
  Mat<S> out(static_cast<Eigen::Index>(std::size(items)), kPixels);
  Eigen::Index r = 0;
  for (const auto& item : items) {
    const Image& img = image_of(item);
    for (int k = 0; k < kPixels; ++k) out(r, k) = static_cast<S>(img[static_cast<std::size_t>(k)]);
    ++r;
  }
  return out;
}

template <typename S>
Mat<S> to_row(const Image& img) {
  Mat<S> out(1, kPixels);
  for (int k = 0; k < kPixels; ++k) out(0, k) = static_cast<S>(img[static_cast<std::size_t>(k)]);
  return out;
}

template <typename S>
Image to_image(const Mat<S>& row) {
  Image img{};
  for (int k = 0; k < kPixels; ++k) img[static_cast<std::size_t>(k)] = static_cast<float>(row(0, k));
  return img;
}

}  // namespace ofal
