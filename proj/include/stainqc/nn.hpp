#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "stainqc/errors.hpp"
#include "stainqc/rng.hpp"

namespace stainqc::nn {

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using VecX = Eigen::Vector<Scalar, Eigen::Dynamic>;

/// Named view of one trainable tensor and its gradient accumulator. Layers
/// register their tensors so the optimizer and checkpoints stay generic.
template <class Scalar>
struct ParamRef {
  std::string name;
  MatX<Scalar>* value;
  MatX<Scalar>* grad;
};

template <class Scalar>
using ParamList = std::vector<ParamRef<Scalar>>;

template <class Scalar>
void zero_grads(ParamList<Scalar>& params) {
  for (auto& p : params) p.grad->setZero();
}

template <class Scalar>
void init_normal(MatX<Scalar>& m, Rng& rng, double std_dev) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<Scalar>(rng.normal() * std_dev);
}

// ---------------------------------------------------------------------------
// Linear

template <class Scalar>
struct Linear {
  MatX<Scalar> w;  // out x in
  MatX<Scalar> b;  // 1 x out
  MatX<Scalar> gw, gb;

  struct Cache {
    MatX<Scalar> x;
  };

  void init(int in, int out, Rng& rng, double std_dev = 0.02) {
    w.resize(out, in);
    b.setZero(1, out);
    init_normal(w, rng, std_dev);
    gw.setZero(out, in);
    gb.setZero(1, out);
  }

  void params(const std::string& prefix, ParamList<Scalar>& out) {
    out.push_back({prefix + ".w", &w, &gw});
    out.push_back({prefix + ".b", &b, &gb});
  }

  MatX<Scalar> forward(const MatX<Scalar>& x) const {
    MatX<Scalar> y = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
  }

  MatX<Scalar> forward_train(const MatX<Scalar>& x, Cache& c) {
    c.x = x;
    return forward(x);
  }

  MatX<Scalar> backward(const MatX<Scalar>& dy, const Cache& c) {
    gw.noalias() += dy.transpose() * c.x;
    gb.row(0) += dy.colwise().sum();
    return dy * w;
  }

  /// Input gradient only; parameter grads untouched (attribution paths).
  MatX<Scalar> backward_input(const MatX<Scalar>& dy) const { return dy * w; }
};

// ---------------------------------------------------------------------------
// LayerNorm (per row)

template <class Scalar>
struct LayerNorm {
  MatX<Scalar> gamma, beta; // 1 x dim
  MatX<Scalar> ggamma, gbeta;
  static constexpr double kEps = 1e-6;

  struct Cache {
    MatX<Scalar> xhat;
    VecX<Scalar> rstd;
  };

  void init(int dim) {
    gamma.setOnes(1, dim);
    beta.setZero(1, dim);
    ggamma.setZero(1, dim);
    gbeta.setZero(1, dim);
  }

  void params(const std::string& prefix, ParamList<Scalar>& out) {
    out.push_back({prefix + ".gamma", &gamma, &ggamma});
    out.push_back({prefix + ".beta", &beta, &gbeta});
  }

  MatX<Scalar> forward(const MatX<Scalar>& x, Cache* c = nullptr) const {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    MatX<Scalar> y(n, d);
    if (c) {
      c->xhat.resize(n, d);
      c->rstd.resize(n);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar mean = x.row(i).mean();
      const Scalar var = (x.row(i).array() - mean).square().mean();
      const Scalar rstd = Scalar(1) / std::sqrt(var + Scalar(kEps));
      auto xhat = ((x.row(i).array() - mean) * rstd).matrix();
      y.row(i) = (xhat.array() * gamma.row(0).array()).matrix() + beta.row(0);
      if (c) {
        c->xhat.row(i) = xhat;
        c->rstd[i] = rstd;
      }
    }
    return y;
  }

  MatX<Scalar> backward(const MatX<Scalar>& dy, const Cache& c) {
    const Eigen::Index n = dy.rows();
    const Eigen::Index d = dy.cols();
    MatX<Scalar> dx(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto dxhat = (dy.row(i).array() * gamma.row(0).array()).eval();
      const Scalar m1 = dxhat.mean();
      const Scalar m2 = (dxhat * c.xhat.row(i).array()).mean();
      dx.row(i) =
          ((dxhat - m1 - c.xhat.row(i).array() * m2) * c.rstd[i]).matrix();
    }
    ggamma.row(0).array() += (dy.array() * c.xhat.array()).colwise().sum();
    gbeta.row(0) += dy.colwise().sum();
    return dx;
  }
};

// ---------------------------------------------------------------------------
// GELU (exact erf form)

template <class Scalar>
struct Gelu {
  struct Cache {
    MatX<Scalar> x;
  };

  static MatX<Scalar> forward(const MatX<Scalar>& x, Cache* c = nullptr) {
    if (c) c->x = x;
    return x.unaryExpr([](Scalar v) {
      return Scalar(0.5) * v * (Scalar(1) + std::erf(v * Scalar(M_SQRT1_2)));
    });
  }

  static MatX<Scalar> backward(const MatX<Scalar>& dy, const Cache& c) {
    const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * Scalar(M_PI));
    MatX<Scalar> d = c.x.unaryExpr([&](Scalar v) {
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * Scalar(M_SQRT1_2)));
      return cdf + v * inv_sqrt2pi * std::exp(Scalar(-0.5) * v * v);
    });
    return dy.cwiseProduct(d);
  }
};

// ---------------------------------------------------------------------------
// PReLU (single learned slope, matching the framework default)

template <class Scalar>
struct PRelu {
  MatX<Scalar> a;  // 1x1
  MatX<Scalar> ga;

  struct Cache {
    MatX<Scalar> x;
  };

  void init(double slope = 0.25) {
    a.setConstant(1, 1, static_cast<Scalar>(slope));
    ga.setZero(1, 1);
  }

  void params(const std::string& prefix, ParamList<Scalar>& out) {
    out.push_back({prefix + ".a", &a, &ga});
  }

  MatX<Scalar> forward(const MatX<Scalar>& x, Cache* c = nullptr) const {
    if (c) c->x = x;
    const Scalar s = a(0, 0);
    return x.unaryExpr([s](Scalar v) { return v >= Scalar(0) ? v : s * v; });
  }

  MatX<Scalar> backward(const MatX<Scalar>& dy, const Cache& c) {
    const Scalar s = a(0, 0);
    Scalar da = 0;
    MatX<Scalar> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.size(); ++i) {
      const Scalar x = c.x.data()[i];
      const Scalar g = dy.data()[i];
      if (x >= Scalar(0)) {
        dx.data()[i] = g;
      } else {
        dx.data()[i] = g * s;
        da += g * x;
      }
    }
    ga(0, 0) += da;
    return dx;
  }

  MatX<Scalar> backward_input(const MatX<Scalar>& dy, const Cache& c) const {
    const Scalar s = a(0, 0);
    MatX<Scalar> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.size(); ++i)
      dx.data()[i] = c.x.data()[i] >= Scalar(0) ? dy.data()[i] : dy.data()[i] * s;
    return dx;
  }
};

// ---------------------------------------------------------------------------
// BatchNorm1d over rows of a B x D batch

template <class Scalar>
struct BatchNorm1d {
  MatX<Scalar> gamma, beta;          // 1 x dim
  MatX<Scalar> ggamma, gbeta;
  MatX<Scalar> running_mean, running_var; // 1 x dim, not trained
  double momentum = 0.1;
  static constexpr double kEps = 1e-5;

  struct Cache {
    MatX<Scalar> xhat;
    VecX<Scalar> rstd; // per feature
  };

  void init(int dim) {
    gamma.setOnes(1, dim);
    beta.setZero(1, dim);
    ggamma.setZero(1, dim);
    gbeta.setZero(1, dim);
    running_mean.setZero(1, dim);
    running_var.setOnes(1, dim);
  }

  void params(const std::string& prefix, ParamList<Scalar>& out) {
    out.push_back({prefix + ".gamma", &gamma, &ggamma});
    out.push_back({prefix + ".beta", &beta, &gbeta});
  }

  /// Running statistics ride along in checkpoints but take no gradient.
  void buffers(const std::string& prefix,
               std::vector<std::pair<std::string, MatX<Scalar>*>>& out) {
    out.emplace_back(prefix + ".running_mean", &running_mean);
    out.emplace_back(prefix + ".running_var", &running_var);
  }

  MatX<Scalar> forward(const MatX<Scalar>& x) const { // eval: running stats
    MatX<Scalar> y(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const Scalar rstd =
          Scalar(1) / std::sqrt(running_var(0, j) + Scalar(kEps));
      y.col(j) =
          ((x.col(j).array() - running_mean(0, j)) * rstd * gamma(0, j) + beta(0, j))
              .matrix();
    }
    return y;
  }

  MatX<Scalar> forward_train(const MatX<Scalar>& x, Cache& c) {
    const Eigen::Index n = x.rows();
    if (n < 2) throw ArgumentError("BatchNorm1d training requires batch size >= 2");
    c.xhat.resize(n, x.cols());
    c.rstd.resize(x.cols());
    MatX<Scalar> y(n, x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const Scalar mean = x.col(j).mean();
      const Scalar var = (x.col(j).array() - mean).square().mean();
      const Scalar rstd = Scalar(1) / std::sqrt(var + Scalar(kEps));
      c.xhat.col(j) = ((x.col(j).array() - mean) * rstd).matrix();
      c.rstd[j] = rstd;
      y.col(j) = (c.xhat.col(j).array() * gamma(0, j) + beta(0, j)).matrix();
      running_mean(0, j) = Scalar(1 - momentum) * running_mean(0, j) +
                           Scalar(momentum) * mean;
      const Scalar unbiased = var * static_cast<Scalar>(n) / static_cast<Scalar>(n - 1);
      running_var(0, j) =
          Scalar(1 - momentum) * running_var(0, j) + Scalar(momentum) * unbiased;
    }
    return y;
  }

  MatX<Scalar> backward(const MatX<Scalar>& dy, const Cache& c) {
    const Eigen::Index n = dy.rows();
    MatX<Scalar> dx(n, dy.cols());
    for (Eigen::Index j = 0; j < dy.cols(); ++j) {
      auto dxhat = (dy.col(j).array() * gamma(0, j)).eval();
      const Scalar m1 = dxhat.mean();
      const Scalar m2 = (dxhat * c.xhat.col(j).array()).mean();
      dx.col(j) = ((dxhat - m1 - c.xhat.col(j).array() * m2) * c.rstd[j]).matrix();
      ggamma(0, j) += (dy.col(j).array() * c.xhat.col(j).array()).sum();
      gbeta(0, j) += dy.col(j).sum();
    }
    return dx;
  }

  /// Eval mode is a fixed per-feature affine map; input gradient only.
  MatX<Scalar> backward_eval(const MatX<Scalar>& dy) const {
    MatX<Scalar> dx(dy.rows(), dy.cols());
    for (Eigen::Index j = 0; j < dy.cols(); ++j) {
      const Scalar rstd = Scalar(1) / std::sqrt(running_var(0, j) + Scalar(kEps));
      dx.col(j) = dy.col(j) * (rstd * gamma(0, j));
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Dropout / DropPath

template <class Scalar>
struct Dropout {
  double rate = 0.0;

  struct Cache {
    MatX<Scalar> mask; // already scaled by 1/(1-p)
  };

  MatX<Scalar> forward_train(const MatX<Scalar>& x, Cache& c, Rng& rng) const {
    if (rate <= 0.0) {
      c.mask.resize(0, 0);
      return x;
    }
    const Scalar scale = Scalar(1.0 / (1.0 - rate));
    c.mask.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < c.mask.size(); ++i)
      c.mask.data()[i] = rng.bernoulli(rate) ? Scalar(0) : scale;
    return x.cwiseProduct(c.mask);
  }

  MatX<Scalar> backward(const MatX<Scalar>& dy, const Cache& c) const {
    if (c.mask.size() == 0) return dy;
    return dy.cwiseProduct(c.mask);
  }
};

/// Stochastic depth over a whole residual branch (one coin per forward).
template <class Scalar>
struct DropPath {
  double rate = 0.0;

  struct Cache {
    Scalar scale = 1;
  };

  MatX<Scalar> forward_train(const MatX<Scalar>& x, Cache& c, Rng& rng) const {
    if (rate <= 0.0) {
      c.scale = 1;
      return x;
    }
    c.scale = rng.bernoulli(rate) ? Scalar(0) : Scalar(1.0 / (1.0 - rate));
    return x * c.scale;
  }

  MatX<Scalar> backward(const MatX<Scalar>& dy, const Cache& c) const {
    return dy * c.scale;
  }
};

// ---------------------------------------------------------------------------
// Row-wise softmax helpers

template <class Scalar>
MatX<Scalar> softmax_rows(const MatX<Scalar>& x) {
  MatX<Scalar> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

/// Given y = softmax(x) per row and dy, returns dx.
template <class Scalar>
MatX<Scalar> softmax_rows_backward(const MatX<Scalar>& dy, const MatX<Scalar>& y) {
  MatX<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Scalar dot = dy.row(i).dot(y.row(i));
    dx.row(i) = (y.row(i).array() * (dy.row(i).array() - dot)).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head self attention over one token matrix (N x embed)

template <class Scalar>
struct MultiheadSelfAttention {
  int heads = 0;
  int embed = 0;
  Linear<Scalar> qkv;   // embed -> 3*embed
  Linear<Scalar> proj;  // embed -> embed
  Dropout<Scalar> attn_drop;

  struct Cache {
    typename Linear<Scalar>::Cache qkv_cache, proj_cache;
    MatX<Scalar> q, k, v;               // N x embed each
    std::vector<MatX<Scalar>> attn;     // per head, N x N (post-drop)
    std::vector<MatX<Scalar>> attn_pre; // per head, pre-drop softmax output
    std::vector<typename Dropout<Scalar>::Cache> drop;
  };

  void init(int embed_dim, int n_heads, double attn_drop_rate, Rng& rng) {
    if (embed_dim % n_heads != 0)
      throw ArgumentError("embed_dim must be divisible by heads");
    heads = n_heads;
    embed = embed_dim;
    qkv.init(embed_dim, 3 * embed_dim, rng);
    proj.init(embed_dim, embed_dim, rng);
    attn_drop.rate = attn_drop_rate;
  }

  void params(const std::string& prefix, ParamList<Scalar>& out) {
    qkv.params(prefix + ".qkv", out);
    proj.params(prefix + ".proj", out);
  }

  MatX<Scalar> forward(const MatX<Scalar>& x) const {
    const Eigen::Index n = x.rows();
    const int dh = embed / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const MatX<Scalar> qkv_out = qkv.forward(x);
    MatX<Scalar> concat(n, embed);
    for (int h = 0; h < heads; ++h) {
      const auto q = qkv_out.middleCols(h * dh, dh);
      const auto k = qkv_out.middleCols(embed + h * dh, dh);
      const auto v = qkv_out.middleCols(2 * embed + h * dh, dh);
      const MatX<Scalar> attn = softmax_rows<Scalar>(q * k.transpose() * scale);
      concat.middleCols(h * dh, dh).noalias() = attn * v;
    }
    return proj.forward(concat);
  }

  MatX<Scalar> forward_train(const MatX<Scalar>& x, Cache& c, Rng& rng) {
    const Eigen::Index n = x.rows();
    const int dh = embed / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const MatX<Scalar> qkv_out = qkv.forward_train(x, c.qkv_cache);
    c.q = qkv_out.leftCols(embed);
    c.k = qkv_out.middleCols(embed, embed);
    c.v = qkv_out.rightCols(embed);
    c.attn.resize(heads);
    c.attn_pre.resize(heads);
    c.drop.resize(heads);
    MatX<Scalar> concat(n, embed);
    for (int h = 0; h < heads; ++h) {
      const auto q = c.q.middleCols(h * dh, dh);
      const auto k = c.k.middleCols(h * dh, dh);
      const auto v = c.v.middleCols(h * dh, dh);
      c.attn_pre[h] = softmax_rows<Scalar>(q * k.transpose() * scale);
      c.attn[h] = attn_drop.forward_train(c.attn_pre[h], c.drop[h], rng);
      concat.middleCols(h * dh, dh).noalias() = c.attn[h] * v;
    }
    return proj.forward_train(concat, c.proj_cache);
  }

  /// Dropout-free cached forward for attribution; backward works unchanged.
  MatX<Scalar> forward_cached(const MatX<Scalar>& x, Cache& c) {
    const Eigen::Index n = x.rows();
    const int dh = embed / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const MatX<Scalar> qkv_out = qkv.forward_train(x, c.qkv_cache);
    c.q = qkv_out.leftCols(embed);
    c.k = qkv_out.middleCols(embed, embed);
    c.v = qkv_out.rightCols(embed);
    c.attn.resize(heads);
    c.attn_pre.resize(heads);
    c.drop.assign(heads, {});
    MatX<Scalar> concat(n, embed);
    for (int h = 0; h < heads; ++h) {
      const auto q = c.q.middleCols(h * dh, dh);
      const auto k = c.k.middleCols(h * dh, dh);
      const auto v = c.v.middleCols(h * dh, dh);
      c.attn_pre[h] = softmax_rows<Scalar>(q * k.transpose() * scale);
      c.attn[h] = c.attn_pre[h];
      concat.middleCols(h * dh, dh).noalias() = c.attn[h] * v;
    }
    return proj.forward_train(concat, c.proj_cache);
  }

  MatX<Scalar> backward(const MatX<Scalar>& dy, Cache& c) {
    const Eigen::Index n = dy.rows();
    const int dh = embed / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const MatX<Scalar> dconcat = proj.backward(dy, c.proj_cache);
    MatX<Scalar> dqkv(n, 3 * embed);
    for (int h = 0; h < heads; ++h) {
      const auto q = c.q.middleCols(h * dh, dh);
      const auto k = c.k.middleCols(h * dh, dh);
      const auto v = c.v.middleCols(h * dh, dh);
      const auto dout = dconcat.middleCols(h * dh, dh);
      MatX<Scalar> dattn = dout * v.transpose();
      dqkv.middleCols(2 * embed + h * dh, dh).noalias() =
          c.attn[h].transpose() * dout;                    // dV
      dattn = attn_drop.backward(dattn, c.drop[h]);
      const MatX<Scalar> dscores =
          softmax_rows_backward<Scalar>(dattn, c.attn_pre[h]) * scale;
      dqkv.middleCols(h * dh, dh).noalias() = dscores * k;             // dQ
      dqkv.middleCols(embed + h * dh, dh).noalias() = dscores.transpose() * q; // dK
    }
    return qkv.backward(dqkv, c.qkv_cache);
  }
};

// ---------------------------------------------------------------------------
// Transformer MLP (fc1 -> GELU -> fc2 -> dropout)

template <class Scalar>
struct Mlp {
  Linear<Scalar> fc1, fc2;
  Dropout<Scalar> drop;

  struct Cache {
    typename Linear<Scalar>::Cache c1, c2;
    typename Gelu<Scalar>::Cache g;
    typename Dropout<Scalar>::Cache d;
  };

  void init(int embed, int hidden, double drop_rate, Rng& rng) {
    fc1.init(embed, hidden, rng);
    fc2.init(hidden, embed, rng);
    drop.rate = drop_rate;
  }

  void params(const std::string& prefix, ParamList<Scalar>& out) {
    fc1.params(prefix + ".fc1", out);
    fc2.params(prefix + ".fc2", out);
  }

  MatX<Scalar> forward(const MatX<Scalar>& x) const {
    return fc2.forward(Gelu<Scalar>::forward(fc1.forward(x)));
  }

  MatX<Scalar> forward_train(const MatX<Scalar>& x, Cache& c, Rng& rng) {
    MatX<Scalar> h = Gelu<Scalar>::forward(fc1.forward_train(x, c.c1), &c.g);
    return drop.forward_train(fc2.forward_train(h, c.c2), c.d, rng);
  }

  MatX<Scalar> forward_cached(const MatX<Scalar>& x, Cache& c) {
    MatX<Scalar> h = Gelu<Scalar>::forward(fc1.forward_train(x, c.c1), &c.g);
    c.d.mask.resize(0, 0);
    return fc2.forward_train(h, c.c2);
  }

  MatX<Scalar> backward(const MatX<Scalar>& dy, Cache& c) {
    MatX<Scalar> d = fc2.backward(drop.backward(dy, c.d), c.c2);
    return fc1.backward(Gelu<Scalar>::backward(d, c.g), c.c1);
  }
};

} // namespace stainqc::nn
