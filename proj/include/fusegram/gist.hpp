#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "fusegram/codec.hpp"
#include "fusegram/error.hpp"

namespace fusegram {

/// Square-or-not grayscale image, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h, fill) {}

  double& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  [[nodiscard]] double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }

  static GrayImage from(const EncodedImage& img) {
    GrayImage g(kImageSide, kImageSide);
    for (std::size_t k = 0; k < kImagePixels; ++k) g.pixels[k] = img.pixels[k];
    return g;
  }
};

/// Block replication: each source pixel becomes a (side/src) x (side/src) block.
inline GrayImage resize_nearest(const GrayImage& src, std::size_t side = 256) {
  if (src.width != src.height) throw UsageError("resize_nearest: source image is not square");
  if (src.width == 0 || side == 0) throw UsageError("resize_nearest: empty image");
  GrayImage out(side, side);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) out.at(r, c) = src.at(r * src.height / side, c * src.width / side);
  return out;
}

struct GistParams {
  std::size_t scales = 4;
  std::size_t orientations = 8;
  std::size_t grid = 4;
  bool prefilter = false;

  [[nodiscard]] std::size_t length() const { return scales * orientations * grid * grid; }
};

/**
 * Log-Gabor style frequency-domain filter bank with the usual GIST constants:
 * scale s peaks at radial frequency 0.3 / 1.85^s cycles/pixel and orientation
 * o at angle pi*o/orientations. The DC coefficient is forced to zero.
 * Filters are stored in FFT order (index k holds frequency k or k - N).
 */
class GaborBank {
public:
  GaborBank(std::size_t side, const GistParams& params) : side_(side), params_(params) {
    const double n = static_cast<double>(side);
    const double angular = 16.0 * static_cast<double>(params.orientations * params.orientations) / (32.0 * 32.0);
    filters_.reserve(params.scales * params.orientations);
    for (std::size_t s = 0; s < params.scales; ++s) {
      const double f0 = 0.3 / std::pow(1.85, static_cast<double>(s));
      for (std::size_t o = 0; o < params.orientations; ++o) {
        const double theta0 = M_PI * static_cast<double>(o) / static_cast<double>(params.orientations);
        std::vector<double> g(side * side, 0.0);
        for (std::size_t r = 0; r < side; ++r) {
          const double fy = freq(r);
          for (std::size_t c = 0; c < side; ++c) {
            const double fx = freq(c);
            if (r == 0 && c == 0) continue;
            const double fr = std::sqrt(fx * fx + fy * fy) / n;
            double dt = std::atan2(fy, fx) - theta0;
            dt = std::remainder(dt, 2.0 * M_PI);
            const double radial = fr / f0 - 1.0;
            g[r * side + c] = std::exp(-10.0 * 0.35 * radial * radial - 2.0 * angular * M_PI * dt * dt);
          }
        }
        filters_.push_back(std::move(g));
      }
    }
  }

  [[nodiscard]] std::size_t side() const { return side_; }
  [[nodiscard]] const GistParams& params() const { return params_; }
  [[nodiscard]] const std::vector<double>& filter(std::size_t scale, std::size_t orientation) const {
    return filters_[scale * params_.orientations + orientation];
  }

private:
  [[nodiscard]] double freq(std::size_t k) const {
    return k < (side_ + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(side_);
  }

  std::size_t side_;
  GistParams params_;
  std::vector<std::vector<double>> filters_;
};

namespace detail {

using Complex = std::complex<double>;

/// In-place separable 2-D FFT of a row-major side x side array.
inline void fft2(std::vector<Complex>& data, std::size_t side, bool inverse) {
  Eigen::FFT<double> fft;
  std::vector<Complex> in(side), out(side);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t line = 0; line < side; ++line) {
      for (std::size_t k = 0; k < side; ++k) in[k] = pass == 0 ? data[line * side + k] : data[k * side + line];
      if (inverse) fft.inv(out, in);
      else fft.fwd(out, in);
      for (std::size_t k = 0; k < side; ++k) (pass == 0 ? data[line * side + k] : data[k * side + line]) = out[k];
    }
  }
}

/// Local contrast normalization on a periodic domain (log, whitening, divide by local std).
inline GrayImage prefilter(const GrayImage& img, double fc = 4.0) {
  const std::size_t n = img.width;
  const double s1 = fc / std::sqrt(std::log(2.0));
  std::vector<double> gf(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double fy = r < (n + 1) / 2 ? double(r) : double(r) - double(n);
      const double fx = c < (n + 1) / 2 ? double(c) : double(c) - double(n);
      gf[r * n + c] = std::exp(-(fx * fx + fy * fy) / (s1 * s1));
    }
  std::vector<Complex> a(n * n);
  for (std::size_t k = 0; k < n * n; ++k) a[k] = std::log(1.0 + img.pixels[k]);
  std::vector<Complex> low = a;
  fft2(low, n, false);
  for (std::size_t k = 0; k < n * n; ++k) low[k] *= gf[k];
  fft2(low, n, true);
  std::vector<Complex> hp(n * n), sq(n * n);
  for (std::size_t k = 0; k < n * n; ++k) {
    hp[k] = a[k].real() - low[k].real();
    sq[k] = hp[k].real() * hp[k].real();
  }
  fft2(sq, n, false);
  for (std::size_t k = 0; k < n * n; ++k) sq[k] *= gf[k];
  fft2(sq, n, true);
  GrayImage out(n, n);
  for (std::size_t k = 0; k < n * n; ++k) out.pixels[k] = hp[k].real() / (0.2 + std::sqrt(std::abs(sq[k])));
  return out;
}

} // namespace detail

/**
 * GIST descriptor: magnitude of every filter response averaged over a
 * grid x grid partition. Layout is scale-major, then orientation, then
 * row-major block.
 */
inline std::vector<double> gist(const GrayImage& image, const GaborBank& bank) {
  const auto& p = bank.params();
  const std::size_t n = image.width;
  if (image.width != image.height) throw UsageError("gist: image must be square");
  if (n != bank.side()) throw UsageError("gist: filter bank built for a different image size");
  if (p.grid == 0 || n % p.grid != 0) throw UsageError("gist: image side must be a multiple of the grid");

  const GrayImage src = p.prefilter ? detail::prefilter(image) : image;
  std::vector<detail::Complex> spectrum(n * n);
  for (std::size_t k = 0; k < n * n; ++k) spectrum[k] = src.pixels[k];
  detail::fft2(spectrum, n, false);

  const std::size_t block = n / p.grid;
  const double per_block = static_cast<double>(block * block);
  std::vector<double> desc;
  desc.reserve(p.length());
  std::vector<detail::Complex> resp(n * n);
  for (std::size_t s = 0; s < p.scales; ++s) {
    for (std::size_t o = 0; o < p.orientations; ++o) {
      const auto& g = bank.filter(s, o);
      for (std::size_t k = 0; k < n * n; ++k) resp[k] = spectrum[k] * g[k];
      detail::fft2(resp, n, true);
      for (std::size_t by = 0; by < p.grid; ++by)
        for (std::size_t bx = 0; bx < p.grid; ++bx) {
          double acc = 0.0;
          for (std::size_t r = by * block; r < (by + 1) * block; ++r)
            for (std::size_t c = bx * block; c < (bx + 1) * block; ++c) acc += std::abs(resp[r * n + c]);
          desc.push_back(acc / per_block);
        }
    }
  }
  return desc;
}

inline std::vector<double> gist(const GrayImage& image, const GistParams& params = {}) {
  return gist(image, GaborBank(image.width, params));
}

} // namespace fusegram
