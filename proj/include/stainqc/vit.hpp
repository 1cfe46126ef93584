#pragma once

#include <array>

#include "stainqc/image.hpp"
#include "stainqc/nn.hpp"

namespace stainqc {

/// Structural description of the ViT feature extractor. The paper's backbone
/// is (p=14, embed=768, depth=12, heads=12); the desk-scale default trains in
/// minutes with the same contract.
struct BackboneSpec {
  int token_patch_size = 14;
  int embed_dim = 128;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  double dropout = 0.0;
  double drop_path = 0.0;
  double attn_drop = 0.0;
};

enum class EncodeMode { patch_features, thumbnail };

/// Planar float image ([channel][y][x]) in normalized units.
template <class Scalar>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<Scalar> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w) : channels(c), height(h), width(w) {
    data.assign(static_cast<size_t>(c) * h * w, Scalar(0));
  }
  Scalar& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  Scalar at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

struct Normalizer {
  std::array<double, 3> mean = {0.5, 0.5, 0.5};
  std::array<double, 3> stddev = {0.5, 0.5, 0.5};
};

template <class Scalar>
Tensor3<Scalar> normalize_image(const ImageU8& img, const Normalizer& nrm) {
  if (img.channels != 3) throw ArgumentError("normalize_image: RGB input required");
  Tensor3<Scalar> out(3, img.height, img.width);
  for (int c = 0; c < 3; ++c) {
    const Scalar mean = static_cast<Scalar>(nrm.mean[c]);
    const Scalar inv_std = static_cast<Scalar>(1.0 / nrm.stddev[c]);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(c, y, x) =
            (static_cast<Scalar>(img.at(x, y, c)) / Scalar(255) - mean) * inv_std;
  }
  return out;
}

/// Bilinear resize of the positional table's 2D grid (CLS row passed
/// through). align_corners semantics so the identity case is bit-exact.
template <class Scalar>
nn::MatX<Scalar> adapt_positions(const nn::MatX<Scalar>& pos, int from_rows,
                                 int from_cols, int to_rows, int to_cols) {
  if (from_rows <= 0 || from_cols <= 0 || to_rows <= 0 || to_cols <= 0)
    throw ArgumentError("adapt_positions: grid dims must be positive");
  if (pos.rows() != 1 + static_cast<Eigen::Index>(from_rows) * from_cols)
    throw ShapeError("adapt_positions: table rows do not match source grid");
  if (from_rows == to_rows && from_cols == to_cols) return pos;

  const Eigen::Index dim = pos.cols();
  nn::MatX<Scalar> out(1 + static_cast<Eigen::Index>(to_rows) * to_cols, dim);
  out.row(0) = pos.row(0); // CLS
  auto src_coord = [](int dst, int to_n, int from_n) {
    if (to_n == 1) return 0.0;
    return static_cast<double>(dst) * (from_n - 1) / (to_n - 1);
  };
  for (int r = 0; r < to_rows; ++r) {
    const double sy = src_coord(r, to_rows, from_rows);
    const int y0 = std::min(static_cast<int>(sy), from_rows - 1);
    const int y1 = std::min(y0 + 1, from_rows - 1);
    const Scalar fy = static_cast<Scalar>(sy - y0);
    for (int c = 0; c < to_cols; ++c) {
      const double sx = src_coord(c, to_cols, from_cols);
      const int x0 = std::min(static_cast<int>(sx), from_cols - 1);
      const int x1 = std::min(x0 + 1, from_cols - 1);
      const Scalar fx = static_cast<Scalar>(sx - x0);
      auto row = [&](int yy, int xx) {
        return pos.row(1 + static_cast<Eigen::Index>(yy) * from_cols + xx);
      };
      out.row(1 + static_cast<Eigen::Index>(r) * to_cols + c) =
          row(y0, x0) * (Scalar(1) - fy) * (Scalar(1) - fx) +
          row(y0, x1) * (Scalar(1) - fy) * fx + row(y1, x0) * fy * (Scalar(1) - fx) +
          row(y1, x1) * fy * fx;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

template <class Scalar>
struct Block {
  nn::LayerNorm<Scalar> ln1, ln2;
  nn::MultiheadSelfAttention<Scalar> attn;
  nn::Dropout<Scalar> proj_drop;
  nn::Mlp<Scalar> mlp;
  nn::DropPath<Scalar> drop_path;

  struct Cache {
    typename nn::LayerNorm<Scalar>::Cache ln1c, ln2c;
    typename nn::MultiheadSelfAttention<Scalar>::Cache attnc;
    typename nn::Dropout<Scalar>::Cache dropc;
    typename nn::Mlp<Scalar>::Cache mlpc;
    typename nn::DropPath<Scalar>::Cache dp1, dp2;
    nn::MatX<Scalar> x_in;    // block input (forward)
    nn::MatX<Scalar> dx_in;   // gradient at block input (backward)
  };

  void init(const BackboneSpec& spec, Rng& rng) {
    ln1.init(spec.embed_dim);
    ln2.init(spec.embed_dim);
    attn.init(spec.embed_dim, spec.heads, spec.attn_drop, rng);
    proj_drop.rate = spec.dropout;
    mlp.init(spec.embed_dim, spec.embed_dim * spec.mlp_ratio, spec.dropout, rng);
    drop_path.rate = spec.drop_path;
  }

  void params(const std::string& prefix, nn::ParamList<Scalar>& out) {
    ln1.params(prefix + ".ln1", out);
    attn.params(prefix + ".attn", out);
    ln2.params(prefix + ".ln2", out);
    mlp.params(prefix + ".mlp", out);
  }

  nn::MatX<Scalar> forward(const nn::MatX<Scalar>& x) const {
    nn::MatX<Scalar> y = x + attn.forward(ln1.forward(x));
    return y + mlp.forward(ln2.forward(y));
  }

  nn::MatX<Scalar> forward_train(const nn::MatX<Scalar>& x, Cache& c, Rng& rng) {
    c.x_in = x;
    nn::MatX<Scalar> branch =
        proj_drop.forward_train(attn.forward_train(ln1.forward(x, &c.ln1c), c.attnc, rng),
                                c.dropc, rng);
    nn::MatX<Scalar> y = x + drop_path.forward_train(branch, c.dp1, rng);
    nn::MatX<Scalar> branch2 =
        mlp.forward_train(ln2.forward(y, &c.ln2c), c.mlpc, rng);
    return y + drop_path.forward_train(branch2, c.dp2, rng);
  }

  /// Eval semantics (no dropout) with caches filled so backward can run.
  nn::MatX<Scalar> forward_cached(const nn::MatX<Scalar>& x, Cache& c) {
    c.x_in = x;
    c.dropc.mask.resize(0, 0);
    c.dp1.scale = 1;
    c.dp2.scale = 1;
    nn::MatX<Scalar> y = x + attn.forward_cached(ln1.forward(x, &c.ln1c), c.attnc);
    return y + mlp.forward_cached(ln2.forward(y, &c.ln2c), c.mlpc);
  }

  nn::MatX<Scalar> backward(const nn::MatX<Scalar>& dy, Cache& c) {
    nn::MatX<Scalar> d2 = drop_path.backward(dy, c.dp2);
    nn::MatX<Scalar> dmid = dy + ln2.backward(mlp.backward(d2, c.mlpc), c.ln2c);
    nn::MatX<Scalar> d1 = drop_path.backward(dmid, c.dp1);
    d1 = proj_drop.backward(d1, c.dropc);
    c.dx_in = dmid + ln1.backward(attn.backward(d1, c.attnc), c.ln1c);
    return c.dx_in;
  }
};

// ---------------------------------------------------------------------------

template <class Scalar>
class VisionTransformer {
public:
  using VecX_t = nn::VecX<Scalar>;

  VisionTransformer() = default;

  VisionTransformer(const BackboneSpec& spec, int input_h, int input_w, uint64_t seed)
      : spec_(spec) {
    if (spec.embed_dim <= 0 || spec.depth <= 0 || spec.heads <= 0)
      throw ArgumentError("backbone spec dims must be positive");
    if (input_h % spec.token_patch_size != 0 || input_w % spec.token_patch_size != 0)
      throw ShapeError("backbone input " + std::to_string(input_w) + "x" +
                       std::to_string(input_h) + " must be a multiple of " +
                       std::to_string(spec.token_patch_size));
    rows_ = input_h / spec.token_patch_size;
    cols_ = input_w / spec.token_patch_size;

    Rng rng(derive_seed(seed, "backbone_init"));
    const int patch_dim = 3 * spec.token_patch_size * spec.token_patch_size;
    patch_embed_.init(patch_dim, spec.embed_dim, rng);
    cls_.setZero(1, spec.embed_dim);
    nn::init_normal(cls_, rng, 0.02);
    pos_.setZero(1 + static_cast<Eigen::Index>(rows_) * cols_, spec.embed_dim);
    nn::init_normal(pos_, rng, 0.02);
    gcls_.setZero(1, spec.embed_dim);
    gpos_.setZero(pos_.rows(), pos_.cols());
    pos_drop_.rate = spec.dropout;
    blocks_.resize(spec.depth);
    for (auto& b : blocks_) b.init(spec, rng);
    norm_.init(spec.embed_dim);
  }

  const BackboneSpec& spec() const { return spec_; }
  int grid_rows() const { return rows_; }
  int grid_cols() const { return cols_; }
  int input_h() const { return rows_ * spec_.token_patch_size; }
  int input_w() const { return cols_ * spec_.token_patch_size; }
  int token_count() const { return rows_ * cols_; }
  int feature_dim(EncodeMode mode) const {
    return mode == EncodeMode::patch_features ? 2 * spec_.embed_dim : spec_.embed_dim;
  }

  void params(nn::ParamList<Scalar>& out) {
    out.push_back({"backbone.cls", &cls_, &gcls_});
    out.push_back({"backbone.pos", &pos_, &gpos_});
    patch_embed_.params("backbone.patch_embed", out);
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].params("backbone.blocks." + std::to_string(i), out);
    norm_.params("backbone.norm", out);
  }

  /// Re-targets the positional table to a new input size (e.g. thumbnail
  /// resolutions); done at construction time for each configured resolution.
  void adapt_input(int input_h, int input_w) {
    if (input_h % spec_.token_patch_size != 0 || input_w % spec_.token_patch_size != 0)
      throw ShapeError("backbone input " + std::to_string(input_w) + "x" +
                       std::to_string(input_h) + " must be a multiple of " +
                       std::to_string(spec_.token_patch_size));
    const int r = input_h / spec_.token_patch_size;
    const int ccols = input_w / spec_.token_patch_size;
    pos_ = adapt_positions<Scalar>(pos_, rows_, cols_, r, ccols);
    gpos_.setZero(pos_.rows(), pos_.cols());
    rows_ = r;
    cols_ = ccols;
  }

  struct Cache {
    typename nn::Linear<Scalar>::Cache patch_cache;
    typename nn::Dropout<Scalar>::Cache pos_drop_cache;
    std::vector<typename Block<Scalar>::Cache> blocks;
    typename nn::LayerNorm<Scalar>::Cache norm_cache;
    int img_h = 0, img_w = 0;
  };

  /// Final-norm token matrix, row 0 = CLS. Eval path, no caches.
  nn::MatX<Scalar> forward_tokens(const Tensor3<Scalar>& img) const {
    nn::MatX<Scalar> tokens = embed_tokens(img);
    for (const auto& b : blocks_) tokens = b.forward(tokens);
    return norm_.forward(tokens);
  }

  nn::MatX<Scalar> forward_tokens_train(const Tensor3<Scalar>& img, Cache& c, Rng& rng) {
    c.img_h = img.height;
    c.img_w = img.width;
    nn::MatX<Scalar> x = im2row(img);
    nn::MatX<Scalar> patches = patch_embed_.forward_train(x, c.patch_cache);
    nn::MatX<Scalar> tokens(1 + patches.rows(), spec_.embed_dim);
    tokens.row(0) = cls_.row(0);
    tokens.bottomRows(patches.rows()) = patches;
    tokens += pos_;
    tokens = pos_drop_.forward_train(tokens, c.pos_drop_cache, rng);
    c.blocks.resize(blocks_.size());
    for (size_t i = 0; i < blocks_.size(); ++i)
      tokens = blocks_[i].forward_train(tokens, c.blocks[i], rng);
    return norm_.forward(tokens, &c.norm_cache);
  }

  /// Cached eval forward (dropout inactive regardless of configured rates)
  /// so backward_tokens can compute attribution gradients on a trained model.
  nn::MatX<Scalar> forward_tokens_cached(const Tensor3<Scalar>& img, Cache& c) {
    c.img_h = img.height;
    c.img_w = img.width;
    nn::MatX<Scalar> x = im2row(img);
    nn::MatX<Scalar> patches = patch_embed_.forward_train(x, c.patch_cache);
    nn::MatX<Scalar> tokens(1 + patches.rows(), spec_.embed_dim);
    tokens.row(0) = cls_.row(0);
    tokens.bottomRows(patches.rows()) = patches;
    tokens += pos_;
    c.pos_drop_cache.mask.resize(0, 0);
    c.blocks.resize(blocks_.size());
    for (size_t i = 0; i < blocks_.size(); ++i)
      tokens = blocks_[i].forward_cached(tokens, c.blocks[i]);
    return norm_.forward(tokens, &c.norm_cache);
  }

  /// Backprop from token grads; returns the input-image gradient.
  Tensor3<Scalar> backward_tokens(const nn::MatX<Scalar>& dtokens, Cache& c) {
    nn::MatX<Scalar> d = norm_.backward(dtokens, c.norm_cache);
    for (size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward(d, c.blocks[i]);
    d = pos_drop_.backward(d, c.pos_drop_cache);
    gpos_ += d;
    gcls_.row(0) += d.row(0);
    const nn::MatX<Scalar> dx = patch_embed_.backward(d.bottomRows(d.rows() - 1),
                                                      c.patch_cache);
    return row2im(dx, c.img_h, c.img_w);
  }

  VecX_t encode(const Tensor3<Scalar>& img, EncodeMode mode) const {
    const nn::MatX<Scalar> tokens = forward_tokens(img);
    return pool(tokens, mode);
  }

  VecX_t pool(const nn::MatX<Scalar>& tokens, EncodeMode mode) const {
    if (mode == EncodeMode::thumbnail) return tokens.row(0).transpose();
    VecX_t out(2 * spec_.embed_dim);
    out.head(spec_.embed_dim) = tokens.row(0).transpose();
    out.tail(spec_.embed_dim) =
        tokens.bottomRows(tokens.rows() - 1).colwise().mean().transpose();
    return out;
  }

  nn::MatX<Scalar> im2row(const Tensor3<Scalar>& img) const {
    const int p = spec_.token_patch_size;
    if (img.height % p != 0 || img.width % p != 0)
      throw ShapeError("backbone input " + std::to_string(img.width) + "x" +
                       std::to_string(img.height) + " must be a multiple of " +
                       std::to_string(p));
    const int gr = img.height / p;
    const int gc = img.width / p;
    if (gr != rows_ || gc != cols_)
      throw ShapeError("input token grid " + std::to_string(gr) + "x" +
                       std::to_string(gc) + " does not match configured " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    nn::MatX<Scalar> out(static_cast<Eigen::Index>(gr) * gc, 3 * p * p);
    for (int ty = 0; ty < gr; ++ty)
      for (int tx = 0; tx < gc; ++tx) {
        Scalar* row = out.row(static_cast<Eigen::Index>(ty) * gc + tx).data();
        int i = 0;
        for (int ch = 0; ch < 3; ++ch)
          for (int py = 0; py < p; ++py)
            for (int px = 0; px < p; ++px)
              row[i++] = img.at(ch, ty * p + py, tx * p + px);
      }
    return out;
  }

  const nn::MatX<Scalar>& positions() const { return pos_; }

private:
  nn::MatX<Scalar> embed_tokens(const Tensor3<Scalar>& img) const {
    nn::MatX<Scalar> patches = patch_embed_.forward(im2row(img));
    nn::MatX<Scalar> tokens(1 + patches.rows(), spec_.embed_dim);
    tokens.row(0) = cls_.row(0);
    tokens.bottomRows(patches.rows()) = patches;
    tokens += pos_;
    return tokens;
  }

  Tensor3<Scalar> row2im(const nn::MatX<Scalar>& rows, int h, int w) const {
    const int p = spec_.token_patch_size;
    const int gc = w / p;
    Tensor3<Scalar> img(3, h, w);
    for (Eigen::Index t = 0; t < rows.rows(); ++t) {
      const int ty = static_cast<int>(t) / gc;
      const int tx = static_cast<int>(t) % gc;
      const Scalar* row = rows.row(t).data();
      int i = 0;
      for (int ch = 0; ch < 3; ++ch)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            img.at(ch, ty * p + py, tx * p + px) = row[i++];
    }
    return img;
  }

  BackboneSpec spec_;
  int rows_ = 0, cols_ = 0;
  nn::Linear<Scalar> patch_embed_;
  nn::MatX<Scalar> cls_, pos_, gcls_, gpos_;
  nn::Dropout<Scalar> pos_drop_;
  std::vector<Block<Scalar>> blocks_;
  nn::LayerNorm<Scalar> norm_;
};

} // namespace stainqc
