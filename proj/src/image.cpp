#include "stainqc/image.hpp"

#include <algorithm>
#include <cmath>

#include "stainqc/errors.hpp"

namespace stainqc {

namespace {

struct Tap {
  int index;
  double weight;
};

// Per-output-pixel source taps for 1D box resampling over [o*s, (o+1)*s).
std::vector<std::vector<Tap>> box_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  std::vector<std::vector<Tap>> taps(out_size);
  for (int o = 0; o < out_size; ++o) {
    const double lo = o * scale;
    const double hi = (o + 1) * scale;
    const int first = static_cast<int>(std::floor(lo));
    const int last = std::min(in_size - 1, static_cast<int>(std::ceil(hi)) - 1);
    auto& t = taps[o];
    for (int i = first; i <= last; ++i) {
      const double cover = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (cover > 0) t.push_back({i, cover});
    }
  }
  return taps;
}

} // namespace

ImageU8 resize_area(const ImageU8& src, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0)
    throw ArgumentError("resize_area: output dimensions must be positive");
  if (src.width == out_w && src.height == out_h) return src;

  const int c = src.channels;
  const auto xt = box_taps(src.width, out_w);
  const auto yt = box_taps(src.height, out_h);

  // Horizontal pass into a float accumulator, then vertical pass.
  std::vector<double> mid(static_cast<size_t>(out_w) * src.height * c, 0.0);
  for (int y = 0; y < src.height; ++y) {
    const uint8_t* in = src.row(y);
    double* out = mid.data() + static_cast<size_t>(y) * out_w * c;
    for (int ox = 0; ox < out_w; ++ox) {
      double norm = 0;
      for (const Tap& t : xt[ox]) norm += t.weight;
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (const Tap& t : xt[ox]) acc += t.weight * in[t.index * c + ch];
        out[ox * c + ch] = acc / norm;
      }
    }
  }

  ImageU8 dst(out_w, out_h, c);
  for (int oy = 0; oy < out_h; ++oy) {
    uint8_t* out = dst.row(oy);
    double norm = 0;
    for (const Tap& t : yt[oy]) norm += t.weight;
    for (int ox = 0; ox < out_w; ++ox) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (const Tap& t : yt[oy])
          acc += t.weight * mid[(static_cast<size_t>(t.index) * out_w + ox) * c + ch];
        const double v = acc / norm;
        out[ox * c + ch] = static_cast<uint8_t>(std::clamp(std::llround(v), 0LL, 255LL));
      }
    }
  }
  return dst;
}

ImageU8 rotate90_cw(const ImageU8& src) {
  ImageU8 dst(src.height, src.width, src.channels);
  const int c = src.channels;
  for (int y = 0; y < src.height; ++y) {
    const uint8_t* in = src.row(y);
    const int nx = src.height - 1 - y;
    for (int x = 0; x < src.width; ++x) {
      uint8_t* out = dst.row(x) + nx * c;
      for (int ch = 0; ch < c; ++ch) out[ch] = in[x * c + ch];
    }
  }
  return dst;
}

ImageU8 flip_horizontal(const ImageU8& src) {
  ImageU8 dst(src.width, src.height, src.channels);
  const int c = src.channels;
  for (int y = 0; y < src.height; ++y) {
    const uint8_t* in = src.row(y);
    uint8_t* out = dst.row(y);
    for (int x = 0; x < src.width; ++x)
      for (int ch = 0; ch < c; ++ch) out[x * c + ch] = in[(src.width - 1 - x) * c + ch];
  }
  return dst;
}

ImageU8 flip_vertical(const ImageU8& src) {
  ImageU8 dst(src.width, src.height, src.channels);
  const size_t stride = static_cast<size_t>(src.width) * src.channels;
  for (int y = 0; y < src.height; ++y)
    std::copy_n(src.row(src.height - 1 - y), stride, dst.row(y));
  return dst;
}

ImageU8 pad_to(const ImageU8& src, int out_w, int out_h, uint8_t fill, PadBox* box) {
  if (src.width > out_w || src.height > out_h)
    throw ArgumentError("pad_to: content larger than target");
  PadBox b{(out_w - src.width) / 2, (out_h - src.height) / 2, src.width, src.height};
  if (box) *box = b;
  if (src.width == out_w && src.height == out_h) return src;
  ImageU8 dst(out_w, out_h, src.channels, fill);
  for (int y = 0; y < src.height; ++y) {
    std::copy_n(src.row(y), static_cast<size_t>(src.width) * src.channels,
                dst.row(y + b.y) + static_cast<size_t>(b.x) * src.channels);
  }
  return dst;
}

ImageU8 crop(const ImageU8& src, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > src.width || y + h > src.height)
    throw BoundsError("crop: rectangle outside image");
  ImageU8 dst(w, h, src.channels);
  for (int r = 0; r < h; ++r)
    std::copy_n(src.row(y + r) + static_cast<size_t>(x) * src.channels,
                static_cast<size_t>(w) * src.channels, dst.row(r));
  return dst;
}

std::vector<uint8_t> saturation_map(const ImageU8& rgb) {
  if (rgb.channels != 3) throw ArgumentError("saturation_map: RGB input required");
  std::vector<uint8_t> sat(static_cast<size_t>(rgb.width) * rgb.height);
  for (size_t i = 0; i < sat.size(); ++i) {
    const uint8_t* p = rgb.data.data() + i * 3;
    const int mx = std::max({p[0], p[1], p[2]});
    const int mn = std::min({p[0], p[1], p[2]});
    sat[i] = mx == 0 ? 0 : static_cast<uint8_t>((255 * (mx - mn)) / mx);
  }
  return sat;
}

} // namespace stainqc
