#pragma once
// RGB image tensors (CHW, nominal range [0,1]), total variation, reference
// metrics, a seeded toy identity embedding, the synthetic face generator and
// binary PPM I/O.

#include "wiretap/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <cctype>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace wiretap {

class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, double fill = 0.0)
      : height_(height), width_(width), data_(static_cast<std::size_t>(kChannels) * height * width, fill) {
    require(height > 0 && width > 0, "Image: dimensions must be positive");
  }
  Image(int height, int width, std::vector<double> values) : height_(height), width_(width), data_(std::move(values)) {
    require(height > 0 && width > 0, "Image: dimensions must be positive");
    require(data_.size() == static_cast<std::size_t>(kChannels) * height * width, "Image: value count mismatch");
  }

  int channels() const noexcept { return kChannels; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  RVector as_vector() const { return Eigen::Map<const RVector>(data_.data(), static_cast<Eigen::Index>(data_.size())); }
  static Image from_vector(int height, int width, const RVector& v) {
    return Image(height, width, std::vector<double>(v.data(), v.data() + v.size()));
  }

  bool same_shape(const Image& o) const noexcept { return height_ == o.height_ && width_ == o.width_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Image clipped(double lo = 0.0, double hi = 1.0) const {
    Image out = *this;
    for (double& v : out.data_) v = std::clamp(v, lo, hi);
    return out;
  }

  /// Rec. 601 luma, row-major height x width.
  std::vector<double> grayscale() const {
    std::vector<double> g(static_cast<std::size_t>(height_) * width_);
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        g[static_cast<std::size_t>(y) * width_ + x] = 0.299 * at(0, y, x) + 0.587 * at(1, y, x) + 0.114 * at(2, y, x);
    return g;
  }

  bool operator==(const Image& o) const = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Image& a, const Image& b, const char* where) {
  if (!a.same_shape(b)) {
    throw InvalidArgument(std::string(where) + ": image dimension mismatch (" + std::to_string(a.height()) + "x" +
                          std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                          std::to_string(b.width()) + ")");
  }
}

// ---------------------------------------------------------------------------
// Total variation

/// Exact anisotropic TV: sum over channels of |horizontal| + |vertical|
/// neighbour differences.
inline double total_variation(const Image& x) {
  double tv = 0.0;
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < x.height(); ++y)
      for (int i = 0; i < x.width(); ++i) {
        if (i + 1 < x.width()) tv += std::abs(x.at(c, y, i + 1) - x.at(c, y, i));
        if (y + 1 < x.height()) tv += std::abs(x.at(c, y + 1, i) - x.at(c, y, i));
      }
  return tv;
}

inline constexpr double kTvSmoothing = 1e-6;

struct SmoothedTv {
  double value = 0.0;
  RVector gradient;  // same layout as Image::values()
};

/// Differentiable TV: each |d| replaced by sqrt(d^2 + mu^2) - mu, so the
/// term is zero at d = 0 and within mu of |d| elsewhere.
inline SmoothedTv smoothed_total_variation(const Image& x, double mu = kTvSmoothing) {
  SmoothedTv out;
  out.gradient = RVector::Zero(static_cast<Eigen::Index>(x.size()));
  const int h = x.height(), w = x.width();
  auto idx = [&](int c, int y, int i) { return (static_cast<Eigen::Index>(c) * h + y) * w + i; };
  auto term = [&](Eigen::Index a, Eigen::Index b, double d) {
    const double s = std::sqrt(d * d + mu * mu);
    out.value += s - mu;
    const double q = d / s;
    out.gradient(a) += q;
    out.gradient(b) -= q;
  };
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int i = 0; i < w; ++i) {
        if (i + 1 < w) term(idx(c, y, i + 1), idx(c, y, i), x.at(c, y, i + 1) - x.at(c, y, i));
        if (y + 1 < h) term(idx(c, y + 1, i), idx(c, y, i), x.at(c, y + 1, i) - x.at(c, y, i));
      }
  return out;
}

// ---------------------------------------------------------------------------
// Reference metrics

inline constexpr double kPsnrCapDb = 100.0;

/// Peak 1.0. Identical images report kPsnrCapDb.
inline double psnr(const Image& x, const Image& y) {
  require_same_shape(x, y, "psnr");
  double se = 0.0;
  auto a = x.values();
  auto b = y.values();
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

struct MsSsimConfig {
  std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int filter_size = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  /// Use fewer scales (with renormalised weights) when the image is too
  /// small; otherwise too-small inputs throw.
  bool auto_reduce = true;
};

namespace detail {

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> k(size);
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable 'valid' filtering.
inline Plane filter_valid(const Plane& p, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  Plane tmp{p.h, p.w - n + 1, {}};
  tmp.v.assign(static_cast<std::size_t>(tmp.h) * tmp.w, 0.0);
  for (int y = 0; y < tmp.h; ++y)
    for (int x = 0; x < tmp.w; ++x) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += k[t] * p.at(y, x + t);
      tmp.v[static_cast<std::size_t>(y) * tmp.w + x] = s;
    }
  Plane out{p.h - n + 1, tmp.w, {}};
  out.v.assign(static_cast<std::size_t>(out.h) * out.w, 0.0);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += k[t] * tmp.at(y + t, x);
      out.v[static_cast<std::size_t>(y) * out.w + x] = s;
    }
  return out;
}

inline Plane product(const Plane& a, const Plane& b) {
  Plane o{a.h, a.w, a.v};
  for (std::size_t i = 0; i < o.v.size(); ++i) o.v[i] *= b.v[i];
  return o;
}

inline Plane downsample2(const Plane& p) {
  Plane o{p.h / 2, p.w / 2, {}};
  o.v.resize(static_cast<std::size_t>(o.h) * o.w);
  for (int y = 0; y < o.h; ++y)
    for (int x = 0; x < o.w; ++x)
      o.v[static_cast<std::size_t>(y) * o.w + x] =
          0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y + 1, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x + 1));
  return o;
}

/// Mean luminance term and mean contrast-structure term of SSIM.
inline std::pair<double, double> ssim_terms(const Plane& x, const Plane& y, const std::vector<double>& win, double c1,
                                            double c2) {
  const Plane mx = filter_valid(x, win), my = filter_valid(y, win);
  const Plane sxx = filter_valid(product(x, x), win), syy = filter_valid(product(y, y), win),
              sxy = filter_valid(product(x, y), win);
  double lsum = 0.0, cssum = 0.0;
  for (std::size_t i = 0; i < mx.v.size(); ++i) {
    const double ux = mx.v[i], uy = my.v[i];
    const double vx = sxx.v[i] - ux * ux, vy = syy.v[i] - uy * uy, cxy = sxy.v[i] - ux * uy;
    lsum += (2 * ux * uy + c1) / (ux * ux + uy * uy + c1);
    cssum += (2 * cxy + c2) / (vx + vy + c2);
  }
  const double n = static_cast<double>(mx.v.size());
  return {lsum / n, cssum / n};
}

}  // namespace detail

/// Number of MS-SSIM scales usable for a given image size.
inline int feasible_ms_ssim_scales(int height, int width, const MsSsimConfig& cfg = {}) {
  const int m = std::min(height, width);
  int scales = 0;
  for (int s = 1; s <= static_cast<int>(cfg.weights.size()); ++s)
    if (m >= (1 << (s - 1)) * cfg.filter_size) scales = s;
  return scales;
}

/// Multi-scale SSIM averaged over the three channels. Symmetric in its
/// arguments; 1 iff x == y.
inline double ms_ssim(const Image& x, const Image& y, const MsSsimConfig& cfg = {}) {
  require_same_shape(x, y, "ms_ssim");
  const int wanted = static_cast<int>(cfg.weights.size());
  int scales = feasible_ms_ssim_scales(x.height(), x.width(), cfg);
  if (scales < wanted && !cfg.auto_reduce) {
    throw InvalidArgument("ms_ssim: image too small for " + std::to_string(wanted) + " scales");
  }
  if (scales == 0) {
    throw InvalidArgument("ms_ssim: image smaller than the " + std::to_string(cfg.filter_size) + "-tap window");
  }
  std::vector<double> w(cfg.weights.begin(), cfg.weights.begin() + scales);
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= wsum;

  const auto win = detail::gaussian_window(cfg.filter_size, cfg.sigma);
  const double c1 = (cfg.k1 * 1.0) * (cfg.k1 * 1.0), c2 = (cfg.k2 * 1.0) * (cfg.k2 * 1.0);
  double total = 0.0;
  for (int c = 0; c < x.channels(); ++c) {
    detail::Plane px{x.height(), x.width(), {}}, py{y.height(), y.width(), {}};
    px.v.resize(static_cast<std::size_t>(x.height()) * x.width());
    py.v.resize(px.v.size());
    for (int r = 0; r < x.height(); ++r)
      for (int k = 0; k < x.width(); ++k) {
        px.v[static_cast<std::size_t>(r) * x.width() + k] = x.at(c, r, k);
        py.v[static_cast<std::size_t>(r) * x.width() + k] = y.at(c, r, k);
      }
    double score = 1.0;
    for (int s = 0; s < scales; ++s) {
      auto [l, cs] = detail::ssim_terms(px, py, win, c1, c2);
      double term = std::max(0.0, cs);
      if (s == scales - 1) term = std::max(0.0, l) * term;
      score *= std::pow(term, w[s]);
      if (s + 1 < scales) {
        px = detail::downsample2(px);
        py = detail::downsample2(py);
      }
    }
    total += score;
  }
  return std::clamp(total / x.channels(), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Toy identity embedding

/// Unit vector produced by embed(); `degenerate` marks the zero vector
/// returned for images with no grayscale variation.
struct Embedding {
  RVector v;
  bool degenerate = false;
};

/// Area-average resampling of a row-major plane to out_h x out_w.
inline std::vector<double> area_resample(const std::vector<double>& src, int h, int w, int out_h, int out_w) {
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w, 0.0);
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const double y0 = oy * sy, y1 = (oy + 1) * sy, x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc = 0.0, area = 0.0;
      for (int y = static_cast<int>(std::floor(y0)); y < static_cast<int>(std::ceil(y1)) && y < h; ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        for (int x = static_cast<int>(std::floor(x0)); x < static_cast<int>(std::ceil(x1)) && x < w; ++x) {
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          acc += wy * wx * src[static_cast<std::size_t>(y) * w + x];
          area += wy * wx;
        }
      }
      out[static_cast<std::size_t>(oy) * out_w + ox] = acc / area;
    }
  return out;
}

/// Fixed random projection of the mean-centred 16x16 grayscale image.
/// A deterministic stand-in for a face-identity network; it makes no claim
/// of face-recognition validity.
class ToyEmbedding {
 public:
  static constexpr int kGrid = 16;

  explicit ToyEmbedding(int dim = 128, std::uint64_t seed = 0x7e11a5ULL) : dim_(dim), seed_(seed) {
    require(dim > 0, "ToyEmbedding: dim must be positive");
    Rng rng(seed);
    projection_.resize(dim, kGrid * kGrid);
    for (Eigen::Index j = 0; j < projection_.cols(); ++j)
      for (Eigen::Index i = 0; i < projection_.rows(); ++i) projection_(i, j) = rng.normal();
  }

  int dim() const noexcept { return dim_; }
  std::uint64_t seed() const noexcept { return seed_; }

  Embedding embed(const Image& x) const {
    require(x.height() >= kGrid && x.width() >= kGrid, "embed: image smaller than 16x16");
    auto g = area_resample(x.grayscale(), x.height(), x.width(), kGrid, kGrid);
    RVector gv = Eigen::Map<RVector>(g.data(), static_cast<Eigen::Index>(g.size()));
    gv.array() -= gv.mean();
    Embedding e;
    if (gv.norm() < 1e-12) {
      e.v = RVector::Zero(dim_);
      e.degenerate = true;
      return e;
    }
    e.v = projection_ * gv;
    const double n = e.v.norm();
    if (n < 1e-300) {
      e.v = RVector::Zero(dim_);
      e.degenerate = true;
      return e;
    }
    e.v /= n;
    return e;
  }

 private:
  int dim_;
  std::uint64_t seed_;
  RMatrix projection_;
};

inline double cosine_sim(const Embedding& a, const Embedding& b) {
  if (a.degenerate || b.degenerate) return 0.0;
  require(a.v.size() == b.v.size(), "cosine_sim: dimension mismatch");
  return std::clamp(a.v.dot(b.v), -1.0, 1.0);
}

inline Embedding negate(Embedding e) {
  e.v = -e.v;
  return e;
}

// ---------------------------------------------------------------------------
// Synthetic faces

/// Parameters of one generated face; coordinates are fractions of the image
/// extent. Defaults are the sampling ranges documented in README.md.
struct FaceParams {
  double background_luma = 0.25;
  std::array<double, 3> background_tint{0, 0, 0};
  double gradient_angle = 0.0;
  double gradient_amplitude = 0.0;
  double head_cx = 0.5, head_cy = 0.5, head_ax = 0.28, head_ay = 0.34;
  double skin_luma = 0.75;
  double skin_warmth = 0.75;
  double eye_dx = 0.4, eye_dy = 0.25, eye_radius = 0.07;  // eye_dx/eye_dy relative to head axes
  double mouth_halfwidth = 0.4, mouth_offset = 0.45, mouth_curvature = 0.0, mouth_thickness = 0.045;
  double blur_sigma = 0.5;  // pixels

  bool light_background() const noexcept { return background_luma >= 0.5; }
  std::array<double, 2> eye_center(int side) const noexcept {
    return {head_cx + side * eye_dx * head_ax, head_cy - eye_dy * head_ay};
  }
};

struct FaceRanges {
  double min_contrast = 0.4;
  double cx_lo = 0.3, cx_hi = 0.7, cy_lo = 0.34, cy_hi = 0.66;
  double ax_lo = 0.22, ax_hi = 0.34, ay_lo = 0.28, ay_hi = 0.40;
};

inline FaceParams sample_face_params(Rng& rng, const FaceRanges& r = {}) {
  FaceParams p;
  // Background tone is either dark [0.1,0.4] or light [0.6,0.9].
  p.background_luma = rng.uniform() < 0.5 ? rng.uniform(0.1, 0.4) : rng.uniform(0.6, 0.9);
  for (double& t : p.background_tint) t = rng.uniform(-0.08, 0.08);
  p.gradient_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.gradient_amplitude = rng.uniform(0.0, 0.1);
  p.head_cx = rng.uniform(r.cx_lo, r.cx_hi);
  p.head_cy = rng.uniform(r.cy_lo, r.cy_hi);
  p.head_ax = rng.uniform(r.ax_lo, r.ax_hi);
  p.head_ay = rng.uniform(r.ay_lo, r.ay_hi);
  do {
    p.skin_luma = rng.uniform(0.1, 0.9);
  } while (std::abs(p.skin_luma - p.background_luma) < r.min_contrast);
  p.skin_warmth = rng.uniform(0.5, 1.0);
  p.eye_dx = rng.uniform(0.35, 0.5);
  p.eye_dy = rng.uniform(0.2, 0.35);
  p.eye_radius = rng.uniform(0.055, 0.085);
  p.mouth_halfwidth = rng.uniform(0.3, 0.55);
  p.mouth_offset = rng.uniform(0.35, 0.55);
  p.mouth_curvature = rng.uniform(-0.06, 0.06);
  p.mouth_thickness = rng.uniform(0.035, 0.06);
  return p;
}

namespace detail {
inline void gaussian_blur_inplace(Image& img, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += (k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma)));
  for (double& v : k) v /= sum;
  const int h = img.height(), w = img.width();
  Image tmp = img;
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int t = -radius; t <= radius; ++t) s += k[t + radius] * img.at(c, y, std::clamp(x + t, 0, w - 1));
        tmp.at(c, y, x) = s;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int t = -radius; t <= radius; ++t) s += k[t + radius] * tmp.at(c, std::clamp(y + t, 0, h - 1), x);
        img.at(c, y, x) = s;
      }
  }
}
}  // namespace detail

/// Gaussian blur with edge replication.
inline Image gaussian_blur(const Image& x, double sigma) {
  Image out = x;
  detail::gaussian_blur_inplace(out, sigma);
  return out;
}

inline Image render_face(const FaceParams& p, int height, int width) {
  Image img(height, width);
  const std::array<double, 3> skin{std::clamp(p.skin_luma + 0.1 * p.skin_warmth, 0.0, 1.0), std::clamp(p.skin_luma, 0.0, 1.0),
                                   std::clamp(p.skin_luma - 0.1 * p.skin_warmth, 0.0, 1.0)};
  const double feature = p.skin_luma > 0.5 ? p.skin_luma - 0.5 : p.skin_luma + 0.5;
  const double ca = std::cos(p.gradient_angle), sa = std::sin(p.gradient_angle);
  const double eye_r2 = p.eye_radius * p.eye_radius;
  const double mw = p.mouth_halfwidth * p.head_ax, my = p.head_cy + p.mouth_offset * p.head_ay;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double fy = (y + 0.5) / height, fx = (x + 0.5) / width;
      const double t = ca * (fx - 0.5) + sa * (fy - 0.5);
      std::array<double, 3> px;
      for (int c = 0; c < 3; ++c)
        px[c] = std::clamp(p.background_luma + p.background_tint[c] + p.gradient_amplitude * t, 0.0, 1.0);
      const double ex = (fx - p.head_cx) / p.head_ax, ey = (fy - p.head_cy) / p.head_ay;
      if (ex * ex + ey * ey <= 1.0) px = skin;
      for (int side : {-1, 1}) {
        const auto e = p.eye_center(side);
        if ((fx - e[0]) * (fx - e[0]) + (fy - e[1]) * (fy - e[1]) <= eye_r2) px = {feature, feature, feature};
      }
      if (std::abs(fx - p.head_cx) <= mw) {
        const double u = (fx - p.head_cx) / mw;
        const double arc = my + p.mouth_curvature * (1.0 - u * u);
        if (std::abs(fy - arc) <= p.mouth_thickness)
          px = {std::min(1.0, feature * 0.8 + 0.1), feature * 0.8, feature * 0.8};
      }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = px[c];
    }
  detail::gaussian_blur_inplace(img, p.blur_sigma);
  return img;
}

struct SynthFace {
  Image image;
  FaceParams params;
};

/// Parametric face: background gradient, skin-tone head ellipse, two eye
/// disks and a mouth arc, anti-aliased by a light Gaussian blur.
inline SynthFace synth_face(Rng& rng, int height, int width, const FaceRanges& ranges = {}) {
  require(height >= 16 && width >= 16, "synth_face: dimensions must be >= 16");
  FaceParams p = sample_face_params(rng, ranges);
  return {render_face(p, height, width), p};
}

/// Uniform noise image in [0,1].
inline Image uniform_noise_image(Rng& rng, int height, int width) {
  Image img(height, width);
  for (double& v : img.values()) v = rng.uniform();
  return img;
}

/// Gaussian noise around mid-gray, clipped to [0,1] (a "pure noise"
/// reference image with saturated pixels).
inline Image gaussian_noise_image(Rng& rng, int height, int width, double sigma = 0.5) {
  Image img(height, width);
  for (double& v : img.values()) v = std::clamp(0.5 + sigma * rng.normal(), 0.0, 1.0);
  return img;
}

/// Adds i.i.d. N(0, sigma^2) noise without clipping.
inline Image add_gaussian_noise(const Image& x, Rng& rng, double sigma) {
  Image out = x;
  for (double& v : out.values()) v += sigma * rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255)

struct ImageParseError : std::runtime_error {
  ImageParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
};

inline std::vector<std::uint8_t> encode_ppm(const Image& x) {
  std::string header = "P6\n" + std::to_string(x.width()) + " " + std::to_string(x.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + x.size());
  for (int y = 0; y < x.height(); ++y)
    for (int i = 0; i < x.width(); ++i)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(x.at(c, y, i), 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
  return out;
}

inline Image decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_ws_and_comments = [&] {
    while (pos < bytes.size()) {
      const char ch = static_cast<char>(bytes[pos]);
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_ws_and_comments();
    const std::size_t start = pos;
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) throw ImageParseError(std::string("PPM ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw ImageParseError(std::string("PPM header: expected ") + what, start);
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ImageParseError("unsupported magic (expected P6)", 0);
  pos = 2;
  const int w = read_int("width");
  const int h = read_int("height");
  const int maxval = read_int("maxval");
  if (w <= 0 || h <= 0) throw ImageParseError("PPM header: non-positive dimensions", pos);
  if (maxval != 255) throw ImageParseError("PPM header: only maxval 255 is supported", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ImageParseError("PPM header: missing separator", pos);
  ++pos;
  const std::size_t expected = static_cast<std::size_t>(w) * h * 3;
  const std::size_t actual = bytes.size() - pos;
  if (actual < expected) {
    throw ImageParseError("truncated PPM payload: expected " + std::to_string(expected) + " bytes, got " +
                              std::to_string(actual),
                          bytes.size());
  }
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = bytes[pos++] / 255.0;
  return img;
}

inline Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_image: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

inline void write_image(const Image& x, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_image: cannot open " + path + " for writing");
  const auto bytes = encode_ppm(x);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_image: write failed for " + path);
}

}  // namespace wiretap
