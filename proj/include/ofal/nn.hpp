#pragma once

// Minimal building blocks shared by the classifier and the VAE: row-major
// Eigen matrices (one sample per row), dense layers, activations and the
// optimizers used for training.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ofal/error.hpp"
#include "ofal/random.hpp"

namespace ofal {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
struct DenseLayer {
  Mat<S> w;  // in x out
  Mat<S> b;  // 1 x out

  DenseLayer() = default;
  DenseLayer(int in, int out) : w(Mat<S>::Zero(in, out)), b(Mat<S>::Zero(1, out)) {}

  int in_dim() const { return static_cast<int>(w.rows()); }
  int out_dim() const { return static_cast<int>(w.cols()); }

  void init_he(Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(w.rows()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(rng.normal() * stddev);
    b.setZero();
  }

  Mat<S> forward(const Mat<S>& in) const {
    Mat<S> out(in.rows(), w.cols());
    out.noalias() = in * w;
    out.rowwise() += b.row(0);
    return out;
  }

  // Accumulates parameter gradients (when given) and returns d(in).
  Mat<S> backward(const Mat<S>& in, const Mat<S>& d_out, Mat<S>* grad_w, Mat<S>* grad_b,
                  bool need_input_grad = true) const {
    if (grad_w) grad_w->noalias() += in.transpose() * d_out;
    if (grad_b) *grad_b += d_out.colwise().sum();
    Mat<S> d_in;
    if (need_input_grad) d_in.noalias() = d_out * w.transpose();
    return d_in;
  }

  template <typename T>
  DenseLayer<T> cast() const {
    DenseLayer<T> out;
    out.w = w.template cast<T>();
    out.b = b.template cast<T>();
    return out;
  }
};

template <typename S>
void relu_inplace(Mat<S>& m) {
  m = m.cwiseMax(S(0));
}

// d_out *= 1[activation > 0]
template <typename S>
void relu_backward_inplace(Mat<S>& d_out, const Mat<S>& activation) {
  d_out.array() *= (activation.array() > S(0)).template cast<S>();
}

template <typename S>
Mat<S> log_softmax_rows(const Mat<S>& logits) {
  Mat<S> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S m = logits.row(r).maxCoeff();
    const S lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

template <typename S>
Mat<S> softmax_rows(const Mat<S>& logits) {
  Mat<S> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename S>
S sigmoid(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

enum class OptimizerKind { adam, sgd };

// Optimizer state is created per training call; warm starts carry weights only.
template <typename S>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, std::span<Mat<S>* const> params)
      : kind_(kind), lr_(learning_rate) {
    if (kind_ == OptimizerKind::adam) {
      for (auto* p : params) {
        m_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
        v_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      }
    }
  }

  void step(std::span<Mat<S>* const> params, std::span<const Mat<S>> grads) {
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) *params[i] -= static_cast<S>(lr_) * grads[i];
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    const S step = static_cast<S>(lr_ * std::sqrt(c2) / c1);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = static_cast<S>(kBeta1) * m_[i] + static_cast<S>(1 - kBeta1) * grads[i];
      v_[i] = static_cast<S>(kBeta2) * v_[i] + static_cast<S>(1 - kBeta2) * grads[i].cwiseProduct(grads[i]);
      params[i]->array() -= step * m_[i].array() / (v_[i].array().sqrt() + static_cast<S>(kEps));
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  OptimizerKind kind_;
  double lr_;
  long t_ = 0;
  std::vector<Mat<S>> m_;
  std::vector<Mat<S>> v_;
};

template <typename S>
Mat<S> dropout_mask(std::uint64_t seed, double rate, Eigen::Index rows, Eigen::Index cols) {
  Mat<S> mask(rows, cols);
  fill_dropout_mask<S>(seed, rate, mask.data(), static_cast<std::size_t>(mask.size()));
  return mask;
}

}  // namespace ofal
