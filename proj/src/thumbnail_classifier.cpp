#include "stainqc/thumbnail_classifier.hpp"

namespace stainqc {

SlidePrediction thumbnail_predict(const Thumbnail& thumb, const ThumbnailModel& model,
                                  const std::string& class_set, const std::string& slide_id) {
  if (thumb.pixels.width != model.backbone.input_w() ||
      thumb.pixels.height != model.backbone.input_h())
    throw ShapeError("thumbnail is " + std::to_string(thumb.pixels.width) + "x" +
                     std::to_string(thumb.pixels.height) + " but the model is configured for " +
                     std::to_string(model.backbone.input_w()) + "x" +
                     std::to_string(model.backbone.input_h()));
  const auto img = normalize_image<float>(thumb.pixels, model.normalizer);
  const nn::VecX<float> cls = model.backbone.encode(img, EncodeMode::thumbnail);
  const nn::MatX<float> logits = model.head.forward(cls.transpose());

  SlidePrediction pred;
  pred.slide_id = slide_id;
  pred.method = "thumbnail";
  pred.class_set = class_set;
  const float m = logits.row(0).maxCoeff();
  nn::VecX<float> p = (logits.row(0).array() - m).exp().matrix().transpose();
  pred.probs = p / p.sum();
  pred.argmax = argmax_index(pred.probs);
  return pred;
}

} // namespace stainqc
