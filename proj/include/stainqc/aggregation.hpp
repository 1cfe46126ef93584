#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "stainqc/errors.hpp"
#include "stainqc/features.hpp"
#include "stainqc/nn.hpp"
#include "stainqc/rng.hpp"

namespace stainqc {

/// Gated attention-based MIL head: attention over raw patch features,
/// affine patch embedder, two-layer classifier.
template <class Scalar>
class MilHead {
public:
  struct Cache {
    nn::MatX<Scalar> h;        // N x D_in
    nn::MatX<Scalar> t, g;     // N x L tanh / sigmoid gates
    nn::VecX<Scalar> attn;     // N
    nn::MatX<Scalar> embedded; // N x D_emb
    typename nn::Linear<Scalar>::Cache embed_c, fc1_c, fc2_c;
    nn::MatX<Scalar> hidden;   // 1 x hidden, post-ReLU
  };

  MilHead() = default;
  MilHead(Eigen::Index d_in, Eigen::Index n_classes, uint64_t seed, Eigen::Index attn_dim = 128,
          Eigen::Index embed_dim = 512, Eigen::Index hidden = 256)
      : d_in_(d_in), n_classes_(n_classes) {
    Rng rng(derive_seed(seed, "mil_head_init"));
    v_.resize(d_in, attn_dim);
    u_.resize(d_in, attn_dim);
    w_.resize(attn_dim, 1);
    nn::init_normal(v_, rng, 0.02);
    nn::init_normal(u_, rng, 0.02);
    nn::init_normal(w_, rng, 0.02);
    gv_.setZero(d_in, attn_dim);
    gu_.setZero(d_in, attn_dim);
    gw_.setZero(attn_dim, 1);
    embedder_.init(static_cast<int>(d_in), static_cast<int>(embed_dim), rng);
    fc1_.init(static_cast<int>(embed_dim), static_cast<int>(hidden), rng);
    fc2_.init(static_cast<int>(hidden), static_cast<int>(n_classes), rng);
  }

  Eigen::Index input_dim() const { return d_in_; }
  Eigen::Index num_classes() const { return n_classes_; }
  Eigen::Index attn_dim() const { return v_.cols(); }
  Eigen::Index embed_dim() const { return embedder_.w.rows(); }
  Eigen::Index hidden_dim() const { return fc1_.w.rows(); }

  void params(nn::ParamList<Scalar>& out) {
    out.push_back({"mil.attention.v", &v_, &gv_});
    out.push_back({"mil.attention.u", &u_, &gu_});
    out.push_back({"mil.attention.w", &w_, &gw_});
    embedder_.params("mil.embedder", out);
    fc1_.params("mil.classifier.fc1", out);
    fc2_.params("mil.classifier.fc2", out);
  }

  /// (slide_embedding, attention); attention = softmax of the gated scores.
  std::pair<nn::VecX<Scalar>, nn::VecX<Scalar>> gated_attention(
      const nn::MatX<Scalar>& h) const {
    Cache c;
    const nn::VecX<Scalar> z = attend(h, c);
    return {z, c.attn};
  }

  nn::VecX<Scalar> logits(const nn::MatX<Scalar>& h,
                          nn::VecX<Scalar>* attention = nullptr) const {
    Cache c;
    const nn::VecX<Scalar> z = attend(h, c);
    if (attention) *attention = c.attn;
    nn::MatX<Scalar> hidden = fc1_.forward(z.transpose()).cwiseMax(Scalar(0));
    return fc2_.forward(hidden).row(0).transpose();
  }

  nn::VecX<Scalar> logits_train(const nn::MatX<Scalar>& h, Cache& c) {
    const nn::VecX<Scalar> z = attend(h, c);
    c.embed_c.x = h; // attend computed embedded = embedder.forward(h)
    c.hidden = fc1_.forward_train(z.transpose(), c.fc1_c).cwiseMax(Scalar(0));
    return fc2_.forward_train(c.hidden, c.fc2_c).row(0).transpose();
  }

  /// Accumulates parameter grads; returns d(loss)/d(features).
  nn::MatX<Scalar> backward(const nn::VecX<Scalar>& dlogits, Cache& c) {
    nn::MatX<Scalar> d = fc2_.backward(dlogits.transpose(), c.fc2_c);
    d = d.cwiseProduct((c.hidden.array() > Scalar(0)).template cast<Scalar>().matrix());
    d = fc1_.backward(d, c.fc1_c);
    const nn::VecX<Scalar> dz = d.row(0).transpose();

    // z = embedded^T attn
    const nn::VecX<Scalar> dattn = c.embedded * dz;                 // N
    nn::MatX<Scalar> dembedded = c.attn * dz.transpose();           // N x D_emb
    nn::MatX<Scalar> dh = embedder_.backward(dembedded, c.embed_c); // N x D_in

    // softmax backward
    const Scalar dot = c.attn.dot(dattn);
    const nn::VecX<Scalar> dscore =
        (c.attn.array() * (dattn.array() - dot)).matrix();

    // score_i = w . (t_i * g_i)
    const nn::MatX<Scalar> pre = c.t.cwiseProduct(c.g); // N x L
    gw_.col(0) += pre.transpose() * dscore;
    const nn::MatX<Scalar> dpre = dscore * w_.col(0).transpose(); // N x L
    const nn::MatX<Scalar> dt = dpre.cwiseProduct(c.g).cwiseProduct(
        (Scalar(1) - c.t.array().square()).matrix());
    const nn::MatX<Scalar> dg = dpre.cwiseProduct(c.t).cwiseProduct(
        c.g.cwiseProduct((Scalar(1) - c.g.array()).matrix()));
    gv_.noalias() += c.h.transpose() * dt;
    gu_.noalias() += c.h.transpose() * dg;
    dh.noalias() += dt * v_.transpose();
    dh.noalias() += dg * u_.transpose();
    return dh;
  }

private:
  nn::VecX<Scalar> attend(const nn::MatX<Scalar>& h, Cache& c) const {
    if (h.rows() == 0) throw EmptyBagError("gated attention over an empty bag");
    if (h.cols() != d_in_)
      throw ShapeError("bag feature dim " + std::to_string(h.cols()) +
                       " does not match head input dim " + std::to_string(d_in_));
    c.h = h;
    c.t = (h * v_).array().tanh().matrix();
    c.g = (Scalar(1) / (Scalar(1) + (-(h * u_).array()).exp())).matrix();
    nn::VecX<Scalar> score = c.t.cwiseProduct(c.g) * w_.col(0);
    const Scalar m = score.maxCoeff();
    c.attn = (score.array() - m).exp().matrix();
    c.attn /= c.attn.sum();
    c.embedded = embedder_.forward(h);
    return c.embedded.transpose() * c.attn;
  }

  Eigen::Index d_in_ = 0;
  Eigen::Index n_classes_ = 0;
  nn::MatX<Scalar> v_, u_; // D_in x L
  nn::MatX<Scalar> w_;     // L x 1
  nn::MatX<Scalar> gv_, gu_, gw_;
  nn::Linear<Scalar> embedder_;
  nn::Linear<Scalar> fc1_, fc2_;
};

struct SlidePrediction {
  std::string slide_id;
  std::string method;    // voting | mil | thumbnail
  std::string class_set; // taxonomy set name
  nn::VecX<float> probs;
  int argmax = -1;
  nn::VecX<float> attention;   // empty unless MIL
  nn::MatX<float> patch_votes; // empty unless voting
  std::string attention_path;  // set when an overlay was rendered
};

/// Lowest index wins ties, i.e. canonical ClassSet order.
int argmax_index(const nn::VecX<float>& probs);

SlidePrediction mil_predict(const FeatureBag& bag, const MilHead<float>& head,
                            const std::string& class_set);

/// Mean patch probability; with round subsets, mean of per-round means.
SlidePrediction vote_predict(const nn::MatX<float>& patch_probs,
                             const std::vector<std::vector<int64_t>>* round_subsets = nullptr);

void save_predictions(const std::filesystem::path& path,
                      const std::vector<SlidePrediction>& preds);
std::vector<SlidePrediction> load_predictions(const std::filesystem::path& path);

} // namespace stainqc
