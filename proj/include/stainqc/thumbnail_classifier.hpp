#pragma once

#include <string>

#include "stainqc/aggregation.hpp"
#include "stainqc/errors.hpp"
#include "stainqc/nn.hpp"
#include "stainqc/rng.hpp"
#include "stainqc/slide.hpp"
#include "stainqc/vit.hpp"

namespace stainqc {

/// The paper's two-layer MLP head over CLS: 512 and 64 hidden units,
/// each block ordered affine -> PReLU -> BatchNorm -> dropout.
template <class Scalar>
class ThumbnailHead {
public:
  struct Cache {
    typename nn::Linear<Scalar>::Cache fc1_c, fc2_c, out_c;
    typename nn::PRelu<Scalar>::Cache act1_c, act2_c;
    typename nn::BatchNorm1d<Scalar>::Cache bn1_c, bn2_c;
    typename nn::Dropout<Scalar>::Cache drop1_c, drop2_c;
  };

  ThumbnailHead() = default;
  ThumbnailHead(Eigen::Index embed_dim, Eigen::Index n_classes, uint64_t seed,
                double dropout = 0.3)
      : n_classes_(n_classes) {
    Rng rng(derive_seed(seed, "thumb_head_init"));
    fc1_.init(static_cast<int>(embed_dim), 512, rng);
    fc2_.init(512, 64, rng);
    out_.init(64, static_cast<int>(n_classes), rng);
    act1_.init();
    act2_.init();
    bn1_.init(512);
    bn2_.init(64);
    drop1_.rate = dropout;
    drop2_.rate = dropout;
  }

  Eigen::Index num_classes() const { return n_classes_; }

  void params(nn::ParamList<Scalar>& out) {
    fc1_.params("head.fc1", out);
    act1_.params("head.act1", out);
    bn1_.params("head.bn1", out);
    fc2_.params("head.fc2", out);
    act2_.params("head.act2", out);
    bn2_.params("head.bn2", out);
    out_.params("head.out", out);
  }

  void buffers(std::vector<std::pair<std::string, nn::MatX<Scalar>*>>& out) {
    bn1_.buffers("head.bn1", out);
    bn2_.buffers("head.bn2", out);
  }

  nn::MatX<Scalar> forward(const nn::MatX<Scalar>& x) const {
    nn::MatX<Scalar> h = bn1_.forward(act1_.forward(fc1_.forward(x)));
    h = bn2_.forward(act2_.forward(fc2_.forward(h)));
    return out_.forward(h);
  }

  nn::MatX<Scalar> forward_train(const nn::MatX<Scalar>& x, Cache& c, Rng& rng) {
    nn::MatX<Scalar> h = fc1_.forward_train(x, c.fc1_c);
    h = act1_.forward(h, &c.act1_c);
    h = bn1_.forward_train(h, c.bn1_c);
    h = drop1_.forward_train(h, c.drop1_c, rng);
    h = fc2_.forward_train(h, c.fc2_c);
    h = act2_.forward(h, &c.act2_c);
    h = bn2_.forward_train(h, c.bn2_c);
    h = drop2_.forward_train(h, c.drop2_c, rng);
    return out_.forward_train(h, c.out_c);
  }

  nn::MatX<Scalar> backward(const nn::MatX<Scalar>& dlogits, Cache& c) {
    nn::MatX<Scalar> d = out_.backward(dlogits, c.out_c);
    d = drop2_.backward(d, c.drop2_c);
    d = bn2_.backward(d, c.bn2_c);
    d = act2_.backward(d, c.act2_c);
    d = fc2_.backward(d, c.fc2_c);
    d = drop1_.backward(d, c.drop1_c);
    d = bn1_.backward(d, c.bn1_c);
    d = act1_.backward(d, c.act1_c);
    return fc1_.backward(d, c.fc1_c);
  }

  /// Eval-mode logits (running BN stats, no dropout) caching just enough
  /// for backward_input — the attribution path.
  nn::MatX<Scalar> forward_eval(const nn::MatX<Scalar>& x, Cache& c) const {
    nn::MatX<Scalar> h = act1_.forward(fc1_.forward(x), &c.act1_c);
    h = act2_.forward(fc2_.forward(bn1_.forward(h)), &c.act2_c);
    return out_.forward(bn2_.forward(h));
  }

  /// Gradient of eval-mode logits back to the input; parameters untouched.
  nn::MatX<Scalar> backward_input(const nn::MatX<Scalar>& dlogits, const Cache& c) const {
    nn::MatX<Scalar> d = bn2_.backward_eval(out_.backward_input(dlogits));
    d = bn1_.backward_eval(fc2_.backward_input(act2_.backward_input(d, c.act2_c)));
    return fc1_.backward_input(act1_.backward_input(d, c.act1_c));
  }

private:
  Eigen::Index n_classes_ = 0;
  nn::Linear<Scalar> fc1_, fc2_, out_;
  nn::PRelu<Scalar> act1_, act2_;
  nn::BatchNorm1d<Scalar> bn1_, bn2_;
  nn::Dropout<Scalar> drop1_, drop2_;
};

/// Backbone + head bundle configured for one thumbnail resolution.
struct ThumbnailModel {
  VisionTransformer<float> backbone;
  ThumbnailHead<float> head;
  Normalizer normalizer;

  ThumbnailModel(const BackboneSpec& spec, int input_h, int input_w, Eigen::Index n_classes,
                 uint64_t seed, double head_dropout = 0.3)
      : backbone(spec, input_h, input_w, seed),
        head(spec.embed_dim, n_classes, derive_seed(seed, "thumbnail_head"), head_dropout) {}

  void params(nn::ParamList<float>& out) {
    backbone.params(out);
    head.params(out);
  }
};

SlidePrediction thumbnail_predict(const Thumbnail& thumb, const ThumbnailModel& model,
                                  const std::string& class_set, const std::string& slide_id);

} // namespace stainqc
